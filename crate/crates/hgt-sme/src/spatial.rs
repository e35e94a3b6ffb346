//! CAR precision matrices, Moran's I diagnostics, and the Moran's I basis.
//!
//! The spatial random-effect term uses basis functions derived from the
//! operator
//!
//! ```text
//! G(L, A) = (I - L(L'L)^{-1}L') A (I - L(L'L)^{-1}L')
//! ```
//!
//! whose leading eigenvectors span a space orthogonal to the design L, so
//! the spatial term cannot confound the fixed-effect coefficients. For
//! multi-type models the adjacency is replicated block-diagonally on the
//! stacked index, so cross-type entries are zero.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::areal::ArealGraph;
use crate::error::{Error, Result};

/// Eigenvalues below this magnitude count as zero when classifying the
/// spectrum of the basis operator.
const EIGEN_ZERO_TOL: f64 = 1e-10;

/// CAR precision structure (D - rho A) for one covariate.
#[derive(Debug, Clone)]
pub struct CarStructure {
    pub base_precision: DMatrix<f64>,
    pub rho: f64,
    pub valid_rho_interval: (f64, f64),
}

/// Valid interval for the CAR autocorrelation: (1/lambda_min, 1/lambda_max)
/// of D^{-1/2} A D^{-1/2}. The largest eigenvalue of this normalization is
/// 1, so the upper bound is 1.
pub fn rho_bounds(graph: &ArealGraph) -> Result<(f64, f64)> {
    let n = graph.n_areas();
    let inv_sqrt_d = DVector::from_iterator(
        n,
        graph.degrees().iter().map(|&d| 1.0 / (d as f64).sqrt()),
    );
    let mut normalized = graph.adjacency().clone();
    for i in 0..n {
        for j in 0..n {
            normalized[(i, j)] *= inv_sqrt_d[i] * inv_sqrt_d[j];
        }
    }
    let eigen = SymmetricEigen::new(normalized);
    let min = eigen.eigenvalues.min();
    let max = eigen.eigenvalues.max();
    if min >= 0.0 || max <= 0.0 {
        return Err(Error::Numerical(format!(
            "unexpected normalized adjacency spectrum: [{min}, {max}]"
        )));
    }
    Ok((1.0 / min, 1.0 / max))
}

/// Build the CAR precision (D - rho A), verifying positive-definiteness by
/// factorization.
pub fn car_precision(graph: &ArealGraph, rho: f64) -> Result<CarStructure> {
    let bounds = rho_bounds(graph)?;
    if !(rho > bounds.0 && rho < bounds.1) || rho.abs() >= 1.0 {
        return Err(Error::Domain(format!(
            "rho = {rho} outside the valid interval ({:.6}, {:.6}) (and |rho| < 1)",
            bounds.0, bounds.1
        )));
    }
    let base_precision = graph.degree_matrix() - graph.adjacency() * rho;
    if Cholesky::new(base_precision.clone()).is_none() {
        return Err(Error::Numerical(format!(
            "CAR precision (D - {rho} A) failed Cholesky factorization"
        )));
    }
    Ok(CarStructure {
        base_precision,
        rho,
        valid_rho_interval: bounds,
    })
}

/// Moran's I with binary weights:
/// I = (N / sum_a) * sum_lm a_lm (x_l - xbar)(x_m - xbar) / sum_l (x_l - xbar)^2.
pub fn morans_i(values: &DVector<f64>, graph: &ArealGraph) -> Result<f64> {
    let n = graph.n_areas();
    if values.len() != n {
        return Err(Error::Domain(format!(
            "morans_i: {} values for {n} areas",
            values.len()
        )));
    }
    let mean = values.mean();
    let centered = values.map(|x| x - mean);
    let denom = centered.dot(&centered);
    if denom == 0.0 {
        return Err(Error::Domain(
            "morans_i: values are constant (zero variance)".into(),
        ));
    }
    let a = graph.adjacency();
    let weight_sum: f64 = a.sum();
    let num = (a * &centered).dot(&centered);
    Ok((n as f64 / weight_sum) * num / denom)
}

/// The design-projected adjacency G(L, A) = P A P with
/// P = I - L(L'L)^{-1}L'.
pub fn mi_operator(design: &DMatrix<f64>, adjacency: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = design.nrows();
    if adjacency.nrows() != n || adjacency.ncols() != n {
        return Err(Error::Domain(format!(
            "mi_operator: adjacency is {}x{}, design has {n} rows",
            adjacency.nrows(),
            adjacency.ncols()
        )));
    }
    let k = design.ncols();
    let gram = design.transpose() * design;
    let chol = Cholesky::new(gram).ok_or_else(|| {
        Error::Numerical(format!(
            "mi_operator: design gram matrix ({k}x{k}) is singular; columns are collinear"
        ))
    })?;
    // P A = A - L (L'L)^{-1} L' A, then P A P applied from the right
    let lt_a = design.transpose() * adjacency;
    let pa = adjacency - design * chol.solve(&lt_a);
    let pa_l = &pa * design;
    let g = &pa - (design * chol.solve(&pa_l.transpose())).transpose();
    // exact symmetrization against roundoff
    Ok((&g + g.transpose()) * 0.5)
}

/// How many basis columns to retain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RankSpec {
    /// ceil(fraction * number of positive eigenvalues)
    Fraction(f64),
    Count(usize),
}

/// Truncated eigenbasis of the projected adjacency.
#[derive(Debug, Clone)]
pub struct MoranBasis {
    /// Orthonormal basis columns (n x r).
    pub basis: DMatrix<f64>,
    /// Retained eigenvalues, descending.
    pub eigenvalues: DVector<f64>,
    pub r: usize,
    pub positive_eigen_count: usize,
}

/// Eigendecompose G, sort descending, and keep the leading r columns.
/// Fractions resolve as ceil(fraction * positive eigenvalue count).
pub fn moran_basis(g: &DMatrix<f64>, r_spec: RankSpec) -> Result<MoranBasis> {
    let n = g.nrows();
    if g.ncols() != n {
        return Err(Error::Domain("moran_basis: G must be square".into()));
    }
    let eigen = SymmetricEigen::new(g.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        eigen.eigenvalues[j]
            .partial_cmp(&eigen.eigenvalues[i])
            .unwrap()
    });
    let positive_eigen_count = order
        .iter()
        .filter(|&&i| eigen.eigenvalues[i] > EIGEN_ZERO_TOL)
        .count();
    let r = match r_spec {
        RankSpec::Fraction(f) => {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Config(format!(
                    "basis fraction must be in (0, 1], got {f}"
                )));
            }
            ((f * positive_eigen_count as f64).ceil() as usize).max(1)
        }
        RankSpec::Count(c) => c,
    };
    if r == 0 || r > positive_eigen_count {
        return Err(Error::Domain(format!(
            "requested r = {r} basis columns, but only {positive_eigen_count} positive eigenvalues"
        )));
    }
    let mut basis = DMatrix::zeros(n, r);
    let mut eigenvalues = DVector::zeros(r);
    for (col, &i) in order.iter().take(r).enumerate() {
        basis.set_column(col, &eigen.eigenvectors.column(i));
        eigenvalues[col] = eigen.eigenvalues[i];
    }
    Ok(MoranBasis {
        basis,
        eigenvalues,
        r,
        positive_eigen_count,
    })
}

/// Full spectrum of G, descending; used by the basis-sensitivity CLI.
pub fn mi_spectrum(g: &DMatrix<f64>) -> Result<DVector<f64>> {
    let eigen = SymmetricEigen::new(g.clone());
    let mut vals: Vec<f64> = eigen.eigenvalues.iter().copied().collect();
    vals.sort_by(|a, b| b.partial_cmp(a).unwrap());
    Ok(DVector::from_vec(vals))
}

/// Block-diagonal replication of a matrix: `copies` copies of `m` on the
/// diagonal. Used to lift the areal adjacency to the stacked index for
/// multi-type models.
pub fn block_diagonal(m: &DMatrix<f64>, copies: usize) -> DMatrix<f64> {
    let (rows, cols) = m.shape();
    let mut out = DMatrix::zeros(rows * copies, cols * copies);
    for b in 0..copies {
        out.view_mut((b * rows, b * cols), (rows, cols)).copy_from(m);
    }
    out
}

/// Vertical replication: `copies` copies of `m` stacked row-wise.
pub fn stack_rows(m: &DMatrix<f64>, copies: usize) -> DMatrix<f64> {
    let (rows, cols) = m.shape();
    let mut out = DMatrix::zeros(rows * copies, cols);
    for b in 0..copies {
        out.view_mut((b * rows, 0), (rows, cols)).copy_from(m);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stochastics::RngStream;
    use approx::assert_relative_eq;

    #[test]
    fn rho_bounds_two_node() {
        let g = ArealGraph::from_edges(2, &[(0, 1)]).unwrap();
        let (lo, hi) = rho_bounds(&g).unwrap();
        assert_relative_eq!(lo, -1.0, epsilon = 1e-10);
        assert_relative_eq!(hi, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn rho_bounds_three_node_path() {
        // normalized adjacency of a path has eigenvalues {-1, 0, 1}
        let g = ArealGraph::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        let (lo, hi) = rho_bounds(&g).unwrap();
        assert_relative_eq!(lo, -1.0, epsilon = 1e-10);
        assert_relative_eq!(hi, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn rho_upper_bound_is_one_for_any_graph() {
        let g = ArealGraph::lattice(5, 4).unwrap();
        let (_, hi) = rho_bounds(&g).unwrap();
        assert_relative_eq!(hi, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn car_precision_two_node() {
        let g = ArealGraph::from_edges(2, &[(0, 1)]).unwrap();
        let car = car_precision(&g, 0.5).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[1.0, -0.5, -0.5, 1.0]);
        assert_relative_eq!(car.base_precision, expected);
    }

    #[test]
    fn car_precision_rho_zero_is_degree_matrix() {
        let g = ArealGraph::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        let car = car_precision(&g, 0.0).unwrap();
        assert_relative_eq!(car.base_precision, g.degree_matrix());
    }

    #[test]
    fn car_precision_path_near_unit_rho() {
        let g = ArealGraph::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        let car = car_precision(&g, 0.99).unwrap();
        let expected = DMatrix::from_row_slice(
            3,
            3,
            &[1.0, -0.99, 0.0, -0.99, 2.0, -0.99, 0.0, -0.99, 1.0],
        );
        assert_relative_eq!(car.base_precision, expected);
        let eig = SymmetricEigen::new(car.base_precision.clone());
        assert!(eig.eigenvalues.min() > 0.0);
    }

    #[test]
    fn car_precision_rejects_out_of_bounds_rho() {
        let g = ArealGraph::from_edges(2, &[(0, 1)]).unwrap();
        assert!(car_precision(&g, 1.5).is_err());
        assert!(car_precision(&g, -1.0).is_err());
    }

    #[test]
    fn car_precision_spd_on_rho_grid() {
        let g = ArealGraph::lattice(4, 4).unwrap();
        let (lo, _) = rho_bounds(&g).unwrap();
        for i in 0..20 {
            let rho = (lo + 1e-3).max(-0.999) + (0.999 - (lo + 1e-3).max(-0.999)) * i as f64 / 19.0;
            let car = car_precision(&g, rho).unwrap();
            let eig = SymmetricEigen::new(car.base_precision);
            assert!(eig.eigenvalues.min() > 0.0, "rho = {rho}");
        }
    }

    #[test]
    fn morans_i_hand_cases() {
        let g2 = ArealGraph::from_edges(2, &[(0, 1)]).unwrap();
        let v = DVector::from_vec(vec![1.0, -1.0]);
        assert_relative_eq!(morans_i(&v, &g2).unwrap(), -1.0, epsilon = 1e-12);

        // checkerboard on a 4-cycle
        let g4 = ArealGraph::from_edges(4, &[(0, 1), (1, 2), (2, 3), (3, 0)]).unwrap();
        let v = DVector::from_vec(vec![1.0, -1.0, 1.0, -1.0]);
        assert_relative_eq!(morans_i(&v, &g4).unwrap(), -1.0, epsilon = 1e-12);

        let constant = DVector::from_element(2, 3.0);
        assert!(morans_i(&constant, &g2).is_err());
    }

    #[test]
    fn morans_i_location_scale_invariance() {
        let g = ArealGraph::lattice(3, 3).unwrap();
        let mut rng = RngStream::new(8);
        let v = DVector::from_fn(9, |_, _| rng.draw_normal(0.0, 1.0).unwrap());
        let base = morans_i(&v, &g).unwrap();
        let shifted = v.map(|x| x + 10.0);
        let scaled = v.map(|x| 3.0 * x);
        assert_relative_eq!(morans_i(&shifted, &g).unwrap(), base, epsilon = 1e-10);
        assert_relative_eq!(morans_i(&scaled, &g).unwrap(), base, epsilon = 1e-10);
    }

    #[test]
    fn mi_operator_hand_case() {
        // L = ones on a 2-node graph: P = I - J/2, G = PAP
        let g = ArealGraph::from_edges(2, &[(0, 1)]).unwrap();
        let design = DMatrix::from_element(2, 1, 1.0);
        let gm = mi_operator(&design, g.adjacency()).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[-0.5, 0.5, 0.5, -0.5]);
        assert_relative_eq!(gm, expected, epsilon = 1e-12);
    }

    #[test]
    fn mi_operator_saturated_design_is_zero() {
        let g = ArealGraph::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        let design = DMatrix::identity(3, 3);
        let gm = mi_operator(&design, g.adjacency()).unwrap();
        assert!(gm.amax() < 1e-12);
    }

    #[test]
    fn mi_operator_annihilates_design() {
        let g = ArealGraph::lattice(4, 4).unwrap();
        let mut rng = RngStream::new(12);
        let design = DMatrix::from_fn(16, 3, |_, _| rng.draw_normal(0.0, 1.0).unwrap());
        let gm = mi_operator(&design, g.adjacency()).unwrap();
        assert!((&gm * &design).amax() < 1e-10);
        assert!((&gm - gm.transpose()).amax() < 1e-12);
    }

    #[test]
    fn mi_operator_rejects_collinear_design() {
        let g = ArealGraph::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        let mut design = DMatrix::zeros(3, 2);
        design.column_mut(0).fill(1.0);
        design.column_mut(1).fill(2.0);
        assert!(mi_operator(&design, g.adjacency()).is_err());
    }

    #[test]
    fn moran_basis_diagonal_case() {
        let g = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0, -1.0]));
        let mb = moran_basis(&g, RankSpec::Count(2)).unwrap();
        assert_eq!(mb.positive_eigen_count, 2);
        assert_relative_eq!(mb.eigenvalues[0], 3.0);
        assert_relative_eq!(mb.eigenvalues[1], 1.0);
        assert_relative_eq!(mb.basis.column(0).abs(), DVector::from_vec(vec![1.0, 0.0, 0.0]));
        assert_relative_eq!(mb.basis.column(1).abs(), DVector::from_vec(vec![0.0, 1.0, 0.0]));
        assert!(moran_basis(&g, RankSpec::Count(3)).is_err());
    }

    #[test]
    fn moran_basis_orthonormal_and_reproduces_g() {
        let graph = ArealGraph::lattice(5, 5).unwrap();
        let mut rng = RngStream::new(21);
        let design = DMatrix::from_fn(25, 2, |_i, j| {
            if j == 0 {
                1.0
            } else {
                rng.draw_normal(0.0, 1.0).unwrap()
            }
        });
        let g = mi_operator(&design, graph.adjacency()).unwrap();
        let mb = moran_basis(&g, RankSpec::Fraction(0.95)).unwrap();
        let gram = mb.basis.transpose() * &mb.basis;
        assert!((gram - DMatrix::identity(mb.r, mb.r)).amax() < 1e-10);
        // G M = M Lambda_r on the retained subspace
        let gm = &g * &mb.basis;
        let ml = &mb.basis * DMatrix::from_diagonal(&mb.eigenvalues);
        assert!((gm - ml).amax() < 1e-8);
        // descending eigenvalues
        for i in 1..mb.r {
            assert!(mb.eigenvalues[i] <= mb.eigenvalues[i - 1]);
        }
        // orthogonal to the design
        assert!((design.transpose() * &mb.basis).amax() < 1e-8);
    }

    #[test]
    fn block_diagonal_and_stack() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = block_diagonal(&m, 2);
        assert_eq!(b.shape(), (4, 4));
        assert_eq!(b[(0, 0)], 1.0);
        assert_eq!(b[(2, 2)], 1.0);
        assert_eq!(b[(0, 2)], 0.0);
        let s = stack_rows(&m, 3);
        assert_eq!(s.shape(), (6, 2));
        assert_eq!(s[(4, 0)], 1.0);
    }
}
