//! Complex SVD and geometric mean decomposition.
//!
//! The GMD of a matrix `M` with rank at least `ns` is
//!
//! ```text
//! M_ns = W Q R^H
//! ```
//!
//! where `M_ns` is the best rank-`ns` approximation of `M`, `W` and `R` have
//! orthonormal columns and `Q` is `ns x ns` upper triangular with every
//! diagonal entry equal to the geometric mean of the top `ns` singular
//! values. It is built from the SVD by pairing a diagonal entry above the
//! mean with one below it and applying a 2x2 Givens pair that pins the
//! leading entry to the mean; the product of the remaining entries is
//! preserved so the procedure closes after `ns - 1` steps.

use alloc::vec::Vec;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::invalid;
use crate::{CMatrix, Error, Result};

/// Relative threshold below which a kept singular value counts as zero.
pub const RANK_TOLERANCE: f64 = 1e-12;

/// Thin SVD `m = u * diag(sigma) * v^H` with `k = min(rows, cols)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdFactors {
    pub u: CMatrix,
    /// Non-increasing.
    pub sigma: Vec<f64>,
    pub v: CMatrix,
}

impl SvdFactors {
    pub fn reconstruct(&self) -> CMatrix {
        self.reconstruct_rank(self.sigma.len())
    }

    /// Best rank-`r` approximation.
    pub fn reconstruct_rank(&self, r: usize) -> CMatrix {
        let r = r.min(self.sigma.len());
        let mut us = self.u.columns(0, r).into_owned();
        for (j, &s) in self.sigma[..r].iter().enumerate() {
            us.column_mut(j).scale_mut(s);
        }
        us * self.v.columns(0, r).adjoint()
    }
}

/// Output of [`gmd`].
#[derive(Debug, Clone, PartialEq)]
pub struct GmdFactors {
    /// `nr x ns` combiner, orthonormal columns.
    pub w1: CMatrix,
    /// `ns x ns` upper triangular, constant real diagonal.
    pub q1: CMatrix,
    /// `nt x ns` precoder, orthonormal columns.
    pub r1: CMatrix,
    pub sigma_bar: f64,
}

fn check_finite(m: &CMatrix) -> Result<()> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Err(invalid!("empty matrix {}x{}", m.nrows(), m.ncols()));
    }
    if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(invalid!("matrix has non-finite entries"));
    }
    Ok(())
}

/// Thin SVD with singular values sorted in non-increasing order.
pub fn svd(m: &CMatrix) -> Result<SvdFactors> {
    check_finite(m)?;
    let raw = m.clone().svd(true, true);
    let u = raw.u.expect("u requested");
    let v_t = raw.v_t.expect("v_t requested");
    let sv = raw.singular_values;

    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));

    let sigma = order.iter().map(|&i| sv[i]).collect();
    let u = CMatrix::from_fn(u.nrows(), order.len(), |r, c| u[(r, order[c])]);
    let v = CMatrix::from_fn(v_t.ncols(), order.len(), |r, c| v_t[(order[c], r)].conj());
    Ok(SvdFactors { u, sigma, v })
}

/// `(prod sigma[..ns])^(1/ns)`, evaluated in the log domain.
pub fn geometric_mean_sigma(sigma: &[f64], ns: usize) -> Result<f64> {
    if ns == 0 || ns > sigma.len() {
        return Err(invalid!("ns={ns} outside 1..={}", sigma.len()));
    }
    let top = &sigma[..ns];
    if let Some(&bad) = top.iter().find(|&&s| !(s > 0.0)) {
        return Err(Error::RankDeficient {
            needed: ns,
            sigma: bad,
            sigma_max: sigma[0],
        });
    }
    let log_sum: f64 = top.iter().map(|&s| libm::log(s)).sum();
    Ok(libm::exp(log_sum / ns as f64))
}

/// Equal-diagonal triangularization of `diag(delta)`.
///
/// Returns real orthogonal `left`, `right` and upper triangular `tri` with
/// `diag(delta) = left * tri * right^T` and every `tri[i,i] == sigma_bar`.
fn equalize_diagonal(delta: &[f64], sigma_bar: f64) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let k = delta.len();
    let mut tri = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(delta));
    let mut left = DMatrix::<f64>::identity(k, k);
    let mut right = DMatrix::<f64>::identity(k, k);

    for i in 0..k.saturating_sub(1) {
        // The trailing block tri[i.., i..] is diagonal here.
        let mut hi = i;
        let mut lo = i;
        for j in i..k {
            if tri[(j, j)] > tri[(hi, hi)] {
                hi = j;
            }
            if tri[(j, j)] < tri[(lo, lo)] {
                lo = j;
            }
        }
        let (d1, d2) = (tri[(hi, hi)], tri[(lo, lo)]);
        if d1 - d2 <= f64::EPSILON * d1 {
            // Remaining entries already equal the mean.
            break;
        }

        // Move `hi` to slot i and `lo` to slot i+1.
        symmetric_swap(&mut tri, &mut left, &mut right, i, hi);
        let lo = if lo == i { hi } else { lo };
        symmetric_swap(&mut tri, &mut left, &mut right, i + 1, lo);

        let c2 = ((sigma_bar * sigma_bar - d2 * d2) / (d1 * d1 - d2 * d2)).clamp(0.0, 1.0);
        let c = libm::sqrt(c2);
        let s = libm::sqrt(1.0 - c2);

        // right rotation acting on columns (i, i+1)
        let g_r = [[c, -s], [s, c]];
        // left rotation acting on rows (i, i+1)
        let g_l = [
            [c * d1 / sigma_bar, -s * d2 / sigma_bar],
            [s * d2 / sigma_bar, c * d1 / sigma_bar],
        ];
        rotate_columns(&mut tri, i, &g_r);
        rotate_rows_transposed(&mut tri, i, &g_l);
        rotate_columns(&mut right, i, &g_r);
        rotate_columns(&mut left, i, &g_l);

        tri[(i, i)] = sigma_bar;
        tri[(i + 1, i)] = 0.0;
        tri[(i + 1, i + 1)] = d1 * d2 / sigma_bar;
    }
    (left, tri, right)
}

fn symmetric_swap(
    tri: &mut DMatrix<f64>,
    left: &mut DMatrix<f64>,
    right: &mut DMatrix<f64>,
    a: usize,
    b: usize,
) {
    if a == b {
        return;
    }
    tri.swap_rows(a, b);
    tri.swap_columns(a, b);
    left.swap_columns(a, b);
    right.swap_columns(a, b);
}

/// `m[:, (i, i+1)] <- m[:, (i, i+1)] * g`
fn rotate_columns(m: &mut DMatrix<f64>, i: usize, g: &[[f64; 2]; 2]) {
    for r in 0..m.nrows() {
        let (a, b) = (m[(r, i)], m[(r, i + 1)]);
        m[(r, i)] = a * g[0][0] + b * g[1][0];
        m[(r, i + 1)] = a * g[0][1] + b * g[1][1];
    }
}

/// `m[(i, i+1), :] <- g^T * m[(i, i+1), :]`
fn rotate_rows_transposed(m: &mut DMatrix<f64>, i: usize, g: &[[f64; 2]; 2]) {
    for c in 0..m.ncols() {
        let (a, b) = (m[(i, c)], m[(i + 1, c)]);
        m[(i, c)] = g[0][0] * a + g[1][0] * b;
        m[(i + 1, c)] = g[0][1] * a + g[1][1] * b;
    }
}

fn to_complex(m: &DMatrix<f64>) -> CMatrix {
    m.map(|x| Complex64::new(x, 0.0))
}

/// Geometric mean decomposition of the rank-`ns` part of `m`.
pub fn gmd(m: &CMatrix, ns: usize) -> Result<GmdFactors> {
    let factors = svd(m)?;
    gmd_from_svd(&factors, ns)
}

/// GMD from an already computed SVD.
pub fn gmd_from_svd(factors: &SvdFactors, ns: usize) -> Result<GmdFactors> {
    let k = factors.sigma.len();
    if ns == 0 || ns > k {
        return Err(invalid!("ns={ns} outside 1..={k}"));
    }
    let sigma_max = factors.sigma[0];
    let weakest = factors.sigma[ns - 1];
    if !(weakest > RANK_TOLERANCE * sigma_max) {
        return Err(Error::RankDeficient {
            needed: ns,
            sigma: weakest,
            sigma_max,
        });
    }
    let sigma_bar = geometric_mean_sigma(&factors.sigma, ns)?;
    let (left, tri, right) = equalize_diagonal(&factors.sigma[..ns], sigma_bar);

    let w1 = factors.u.columns(0, ns) * to_complex(&left);
    let r1 = factors.v.columns(0, ns) * to_complex(&right);
    Ok(GmdFactors {
        w1,
        q1: to_complex(&tri),
        r1,
        sigma_bar,
    })
}

/// Worst-case departures of a GMD from its defining properties.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmdResiduals {
    /// Max of `||W^H W - I||_F` and `||R^H R - I||_F`.
    pub semi_unitarity: f64,
    /// `max_i |q_ii - sigma_bar| / sigma_bar`.
    pub diag_deviation: f64,
    /// Frobenius norm of the strictly lower triangle of `Q`.
    pub lower_triangle: f64,
    /// `||W Q R^H - M_ns||_F / ||M_ns||_F` against the rank-`ns` truncation.
    pub reconstruction: f64,
}

impl GmdResiduals {
    pub fn max(&self) -> f64 {
        self.semi_unitarity
            .max(self.diag_deviation)
            .max(self.lower_triangle)
            .max(self.reconstruction)
    }
}

pub fn gmd_residuals(m: &CMatrix, g: &GmdFactors) -> Result<GmdResiduals> {
    let ns = g.q1.nrows();
    let orth = |x: &CMatrix| (x.adjoint() * x - CMatrix::identity(x.ncols(), x.ncols())).norm();
    let diag_deviation = (0..ns)
        .map(|i| (g.q1[(i, i)] - Complex64::new(g.sigma_bar, 0.0)).norm() / g.sigma_bar)
        .fold(0.0, f64::max);
    let lower_triangle = libm::sqrt(
        (0..ns)
            .flat_map(|i| (0..i).map(move |j| (i, j)))
            .map(|ij| g.q1[ij].norm_sqr())
            .sum::<f64>(),
    );
    let truncated = svd(m)?.reconstruct_rank(ns);
    let reconstruction = (&g.w1 * &g.q1 * g.r1.adjoint() - &truncated).norm() / truncated.norm();
    Ok(GmdResiduals {
        semi_unitarity: orth(&g.w1).max(orth(&g.r1)),
        diag_deviation,
        lower_triangle,
        reconstruction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{complex_normal, domain, stream};

    fn random_matrix(seed: u64, rows: usize, cols: usize) -> CMatrix {
        let mut rng = stream(seed, domain::CHANNEL, 99);
        CMatrix::from_fn(rows, cols, |_, _| complex_normal(&mut rng, 1.0))
    }

    fn diag(values: &[f64]) -> CMatrix {
        CMatrix::from_fn(values.len(), values.len(), |r, c| {
            if r == c {
                Complex64::new(values[r], 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
    }

    fn orthonormality_error(m: &CMatrix) -> f64 {
        let g = m.adjoint() * m;
        (g - CMatrix::identity(m.ncols(), m.ncols())).norm()
    }

    #[test]
    fn svd_of_identity() {
        let f = svd(&CMatrix::identity(3, 3)).unwrap();
        for s in &f.sigma {
            assert!((s - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn svd_sorts_diagonal() {
        let f = svd(&diag(&[3.0, 4.0])).unwrap();
        assert!((f.sigma[0] - 4.0).abs() < 1e-14);
        assert!((f.sigma[1] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn svd_reconstructs_tall_and_wide() {
        for (rows, cols) in [(8, 4), (4, 8), (5, 5)] {
            let m = random_matrix(rows as u64 * 10 + cols as u64, rows, cols);
            let f = svd(&m).unwrap();
            assert_eq!(f.u.shape(), (rows, rows.min(cols)));
            assert_eq!(f.v.shape(), (cols, rows.min(cols)));
            assert!((f.reconstruct() - &m).norm() / m.norm() < 1e-10);
            assert!(orthonormality_error(&f.u) < 1e-10);
            assert!(orthonormality_error(&f.v) < 1e-10);
            assert!(f.sigma.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn svd_rejects_non_finite() {
        let mut m = CMatrix::identity(2, 2);
        m[(0, 1)] = Complex64::new(f64::NAN, 0.0);
        assert!(matches!(svd(&m), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn geometric_mean_examples() {
        assert!((geometric_mean_sigma(&[4.0, 1.0], 2).unwrap() - 2.0).abs() < 1e-15);
        assert!((geometric_mean_sigma(&[5.0, 5.0, 5.0], 3).unwrap() - 5.0).abs() < 1e-14);
        assert!((geometric_mean_sigma(&[9.0, 4.0, 1e-300], 2).unwrap() - 6.0).abs() < 1e-14);
        // plain product would underflow
        let tiny = [1e-200, 1e-200];
        assert!((geometric_mean_sigma(&tiny, 2).unwrap() - 1e-200).abs() < 1e-212);
    }

    #[test]
    fn geometric_mean_rejects_zero() {
        assert!(matches!(
            geometric_mean_sigma(&[3.0, 0.0], 2),
            Err(Error::RankDeficient { .. })
        ));
        assert!(geometric_mean_sigma(&[3.0], 2).is_err());
    }

    #[test]
    fn gmd_of_diag_4_1() {
        let g = gmd(&diag(&[4.0, 1.0]), 2).unwrap();
        assert!((g.sigma_bar - 2.0).abs() < 1e-14);
        assert!((g.q1[(0, 0)].re - 2.0).abs() < 1e-12);
        assert!((g.q1[(1, 1)].re - 2.0).abs() < 1e-12);
        assert!(g.q1[(1, 0)].norm() < 1e-15);
        let rebuilt = &g.w1 * &g.q1 * g.r1.adjoint();
        assert!((rebuilt - diag(&[4.0, 1.0])).norm() < 1e-12);
    }

    #[test]
    fn gmd_of_unitary_is_identity() {
        let m = random_matrix(4, 5, 5);
        let f = svd(&m).unwrap();
        let unitary = &f.u * f.v.adjoint();
        let g = gmd(&unitary, 5).unwrap();
        assert!((&g.q1 - CMatrix::identity(5, 5)).norm() < 1e-10);
    }

    #[test]
    fn gmd_matches_rank_truncation() {
        let m = random_matrix(6, 6, 6);
        let f = svd(&m).unwrap();
        let m4 = f.reconstruct_rank(4);
        let g = gmd(&m, 4).unwrap();
        let rebuilt = &g.w1 * &g.q1 * g.r1.adjoint();
        assert!((rebuilt - &m4).norm() / m4.norm() < 1e-8);
    }

    #[test]
    fn gmd_rejects_rank_deficiency() {
        let m = diag(&[3.0, 1.0, 0.0]);
        assert!(matches!(gmd(&m, 3), Err(Error::RankDeficient { .. })));
        assert!(gmd(&m, 2).is_ok());
        assert!(matches!(gmd(&m, 4), Err(Error::InvalidInput(_))));
        assert!(matches!(gmd(&m, 0), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn residuals_of_exact_gmd_are_tiny() {
        let m = random_matrix(21, 8, 5);
        let g = gmd(&m, 3).unwrap();
        let r = gmd_residuals(&m, &g).unwrap();
        assert!(r.max() < 1e-10, "{r:?}");
        let mut broken = g.clone();
        broken.q1[(1, 1)] *= Complex64::new(1.1, 0.0);
        assert!(gmd_residuals(&m, &broken).unwrap().diag_deviation > 0.09);
    }

    #[test]
    fn gmd_with_ties_skips_rotations() {
        let g = gmd(&diag(&[2.0, 2.0, 2.0]), 3).unwrap();
        assert!((&g.q1 - diag(&[2.0, 2.0, 2.0])).norm() < 1e-14);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]
        #[test]
        fn gmd_invariants(seed in 0u64..10_000, rows in 1usize..12, cols in 1usize..12, ns_frac in 0.0f64..1.0) {
            let m = random_matrix(seed, rows, cols);
            let k = rows.min(cols);
            let ns = 1 + ((k - 1) as f64 * ns_frac) as usize;
            let g = gmd(&m, ns).unwrap();
            let f = svd(&m).unwrap();
            proptest::prop_assert!(orthonormality_error(&g.w1) < 1e-10);
            proptest::prop_assert!(orthonormality_error(&g.r1) < 1e-10);
            for i in 0..ns {
                proptest::prop_assert!((g.q1[(i, i)].re - g.sigma_bar).abs() <= 1e-8 * g.sigma_bar);
                proptest::prop_assert!(g.q1[(i, i)].im == 0.0);
                for j in 0..i {
                    proptest::prop_assert!(g.q1[(i, j)].norm() <= 1e-12);
                }
            }
            let target = f.reconstruct_rank(ns);
            let rebuilt = &g.w1 * &g.q1 * g.r1.adjoint();
            proptest::prop_assert!((rebuilt - &target).norm() / target.norm() < 1e-8);
            // determinant preservation
            let prod_q: f64 = (0..ns).map(|i| g.q1[(i, i)].re.ln()).sum();
            let prod_s: f64 = f.sigma[..ns].iter().map(|s| s.ln()).sum();
            proptest::prop_assert!((prod_q - prod_s).abs() < 1e-8);
        }

        #[test]
        fn gmd_unitary_invariance(seed in 0u64..10_000) {
            let m = random_matrix(seed, 6, 5);
            let left = svd(&random_matrix(seed + 1, 6, 6)).unwrap();
            let right = svd(&random_matrix(seed + 2, 5, 5)).unwrap();
            let ul = &left.u * left.v.adjoint();
            let ur = &right.u * right.v.adjoint();
            let rotated = &ul * &m * &ur;
            let a = gmd(&m, 3).unwrap();
            let b = gmd(&rotated, 3).unwrap();
            proptest::prop_assert!((a.sigma_bar - b.sigma_bar).abs() < 1e-10 * a.sigma_bar);
            let target = svd(&rotated).unwrap().reconstruct_rank(3);
            let rebuilt = &b.w1 * &b.q1 * b.r1.adjoint();
            proptest::prop_assert!((rebuilt - &target).norm() / target.norm() < 1e-8);
        }
    }
}
