//! Saleh-Valenzuela mmWave channels over uniform linear arrays.
//!
//! A realization is a sum of a line-of-sight path and `p_nlos` scattered
//! paths, each contributing a rank-1 outer product of receive and transmit
//! steering vectors:
//!
//! ```text
//! H = sqrt(nt * nr / P) * sum_p alpha_p * a_r(aoa_p) * a_t(aod_p)^H
//! ```
//!
//! where `P` counts every path (LoS included), so that `E ||H||_F^2 = nt * nr`
//! for unit-variance gains. `H` is `nr x nt`.

use alloc::vec::Vec;
use core::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;

use crate::error::invalid;
use crate::rng::complex_normal;
use crate::{CMatrix, CVector, Result};

/// Half-wavelength element spacing.
pub const DEFAULT_SPACING_RATIO: f64 = 0.5;

/// One propagation path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathParams {
    pub gain: Complex64,
    /// Angle of departure at the transmitter, radians in `[-pi/2, pi/2]`.
    pub aod: f64,
    /// Angle of arrival at the receiver, radians in `[-pi/2, pi/2]`.
    pub aoa: f64,
}

/// Variances of the complex path gains.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainProfile {
    pub los_variance: f64,
    pub nlos_variance: f64,
}

impl Default for GainProfile {
    /// LoS 10 dB above each NLoS component.
    fn default() -> Self {
        Self {
            los_variance: 1.0,
            nlos_variance: 0.1,
        }
    }
}

/// A channel matrix together with the paths that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    /// `nr x nt` channel matrix.
    pub matrix: CMatrix,
    /// Index 0 is the LoS path.
    pub paths: Vec<PathParams>,
    pub nt: usize,
    pub nr: usize,
    pub spacing_ratio: f64,
}

impl ChannelRealization {
    /// Wraps an arbitrary `nr x nt` matrix (no path description).
    pub fn from_matrix(matrix: CMatrix) -> Self {
        let (nr, nt) = matrix.shape();
        Self {
            matrix,
            paths: Vec::new(),
            nt,
            nr,
            spacing_ratio: DEFAULT_SPACING_RATIO,
        }
    }
}

/// ULA response: element `k` is `exp(-j 2 pi (d/lambda) k sin(angle)) / sqrt(n)`.
pub fn steering_vector(n_antennas: usize, angle: f64, spacing_ratio: f64) -> Result<CVector> {
    if n_antennas == 0 {
        return Err(invalid!("steering vector needs at least one antenna"));
    }
    if !angle.is_finite() {
        return Err(invalid!("non-finite angle {angle}"));
    }
    if !(spacing_ratio > 0.0 && spacing_ratio.is_finite()) {
        return Err(invalid!(
            "spacing ratio must be positive, got {spacing_ratio}"
        ));
    }
    let amp = 1.0 / libm::sqrt(n_antennas as f64);
    let step = -2.0 * PI * spacing_ratio * libm::sin(angle);
    Ok(DVector::from_fn(n_antennas, |k, _| {
        Complex64::from_polar(amp, step * k as f64)
    }))
}

/// Draws `p_nlos + 1` paths with the default gain profile.
pub fn sample_path_params<R: Rng + ?Sized>(rng: &mut R, p_nlos: usize) -> Vec<PathParams> {
    sample_path_params_with(rng, p_nlos, &GainProfile::default())
}

/// Draws `p_nlos + 1` paths: angles uniform on `[-pi/2, pi/2]`, gains CN(0, variance).
pub fn sample_path_params_with<R: Rng + ?Sized>(
    rng: &mut R,
    p_nlos: usize,
    profile: &GainProfile,
) -> Vec<PathParams> {
    (0..=p_nlos)
        .map(|p| {
            let variance = if p == 0 {
                profile.los_variance
            } else {
                profile.nlos_variance
            };
            let gain = complex_normal(rng, variance);
            let aod = rng.random_range(-FRAC_PI_2..=FRAC_PI_2);
            let aoa = rng.random_range(-FRAC_PI_2..=FRAC_PI_2);
            PathParams { gain, aod, aoa }
        })
        .collect()
}

/// Builds the `nr x nt` channel matrix for the given paths.
pub fn generate_channel(
    paths: &[PathParams],
    nt: usize,
    nr: usize,
    spacing_ratio: f64,
) -> Result<ChannelRealization> {
    if nt == 0 || nr == 0 {
        return Err(invalid!(
            "antenna counts must be positive (nt={nt}, nr={nr})"
        ));
    }
    if paths.is_empty() {
        return Err(invalid!("channel needs at least one path"));
    }
    let scale = libm::sqrt((nt * nr) as f64 / paths.len() as f64);
    let mut matrix = DMatrix::zeros(nr, nt);
    for path in paths {
        let a_r = steering_vector(nr, path.aoa, spacing_ratio)?;
        let a_t = steering_vector(nt, path.aod, spacing_ratio)?;
        matrix += (a_r * a_t.adjoint()) * (path.gain * scale);
    }
    Ok(ChannelRealization {
        matrix,
        paths: paths.to_vec(),
        nt,
        nr,
        spacing_ratio,
    })
}

/// Samples paths and builds the channel in one go.
pub fn random_channel<R: Rng + ?Sized>(
    rng: &mut R,
    nt: usize,
    nr: usize,
    p_nlos: usize,
    spacing_ratio: f64,
) -> Result<ChannelRealization> {
    let paths = sample_path_params(rng, p_nlos);
    generate_channel(&paths, nt, nr, spacing_ratio)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{domain, stream};
    use approx::assert_abs_diff_eq;

    #[test]
    fn broadside_steering_vector_is_flat() {
        let a = steering_vector(4, 0.0, 0.5).unwrap();
        for z in a.iter() {
            assert_abs_diff_eq!(z.re, 0.5, epsilon = 1e-15);
            assert_abs_diff_eq!(z.im, 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn endfire_half_wavelength_alternates() {
        let a = steering_vector(2, FRAC_PI_2, 0.5).unwrap();
        let h = 1.0 / 2f64.sqrt();
        assert_abs_diff_eq!(a[0].re, h, epsilon = 1e-15);
        assert_abs_diff_eq!(a[1].re, -h, epsilon = 1e-15);
        assert_abs_diff_eq!(a[1].im, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn steering_vector_rejects_bad_input() {
        assert!(steering_vector(4, f64::NAN, 0.5).is_err());
        assert!(steering_vector(4, f64::INFINITY, 0.5).is_err());
        assert!(steering_vector(0, 0.1, 0.5).is_err());
        assert!(steering_vector(4, 0.1, 0.0).is_err());
    }

    #[test]
    fn path_sampling_counts_and_determinism() {
        let a = sample_path_params(&mut stream(3, domain::CHANNEL, 0), 3);
        let b = sample_path_params(&mut stream(3, domain::CHANNEL, 0), 3);
        assert_eq!(a.len(), 4);
        assert_eq!(a, b);
        assert_eq!(
            sample_path_params(&mut stream(3, domain::CHANNEL, 0), 0).len(),
            1
        );
        for p in &a {
            assert!(p.aod.abs() <= FRAC_PI_2 && p.aoa.abs() <= FRAC_PI_2);
        }
    }

    #[test]
    fn single_broadside_path_gives_flat_matrix() {
        let path = PathParams {
            gain: Complex64::new(1.0, 0.0),
            aod: 0.0,
            aoa: 0.0,
        };
        let ch = generate_channel(&[path], 2, 2, 0.5).unwrap();
        assert_eq!(ch.matrix.shape(), (2, 2));
        for z in ch.matrix.iter() {
            assert_abs_diff_eq!(z.re, 1.0, epsilon = 1e-14);
            assert_abs_diff_eq!(z.im, 0.0, epsilon = 1e-14);
        }
        assert_abs_diff_eq!(ch.matrix.norm(), 2.0, epsilon = 1e-14);
    }

    #[test]
    fn orientation_is_nr_by_nt() {
        let mut rng = stream(5, domain::CHANNEL, 1);
        let ch = random_channel(&mut rng, 16, 4, 3, 0.5).unwrap();
        assert_eq!(ch.matrix.shape(), (4, 16));
        assert_eq!((ch.nr, ch.nt), (4, 16));
    }

    #[test]
    fn generate_rejects_zero_antennas_and_no_paths() {
        let path = PathParams {
            gain: Complex64::new(1.0, 0.0),
            aod: 0.0,
            aoa: 0.0,
        };
        assert!(generate_channel(&[path], 0, 2, 0.5).is_err());
        assert!(generate_channel(&[path], 2, 0, 0.5).is_err());
        assert!(generate_channel(&[], 2, 2, 0.5).is_err());
    }

    #[test]
    fn generation_is_bit_identical() {
        let paths = sample_path_params(&mut stream(9, domain::CHANNEL, 0), 3);
        let a = generate_channel(&paths, 16, 8, 0.5).unwrap();
        let b = generate_channel(&paths, 16, 8, 0.5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn los_only_mean_energy_matches_array_size() {
        // LoS-only channels with CN(0,1) gain: ||H||_F^2 = nt*nr*|alpha|^2.
        let (nt, nr) = (8, 4);
        let draws = 20_000;
        let mut rng = stream(11, domain::CHANNEL, 0);
        let mut acc = 0.0;
        for _ in 0..draws {
            let ch = random_channel(&mut rng, nt, nr, 0, 0.5).unwrap();
            acc += ch.matrix.norm_squared();
        }
        let mean = acc / draws as f64;
        let expected = (nt * nr) as f64;
        assert!((mean - expected).abs() < 0.05 * expected, "mean {mean}");
    }

    proptest::proptest! {
        #[test]
        fn steering_vectors_have_unit_norm(n in 1usize..64, angle in -3.2f64..3.2, d in 0.05f64..2.0) {
            let a = steering_vector(n, angle, d).unwrap();
            let m = 1.0 / (n as f64).sqrt();
            proptest::prop_assert!((a.norm() - 1.0).abs() < 1e-12);
            for z in a.iter() {
                proptest::prop_assert!((z.norm() - m).abs() < 1e-12);
            }
        }

        #[test]
        fn rank_bounded_by_path_count(seed in 0u64..1000, p in 0usize..5) {
            let mut rng = stream(seed, domain::CHANNEL, 0);
            let ch = random_channel(&mut rng, 16, 8, p, 0.5).unwrap();
            let sv = ch.matrix.clone().singular_values();
            let smax = sv.max();
            let rank = sv.iter().filter(|&&s| s > 1e-9 * smax).count();
            proptest::prop_assert!(rank <= p + 1);
        }
    }
}
