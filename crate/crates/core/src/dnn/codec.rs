//! Network input and output encodings.

use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::channel::ChannelRealization;
use crate::error::{invalid, mismatch};
use crate::precoder::HybridFactors;
use crate::{CMatrix, Result};

/// Real and imaginary parts of `H` (row-major, all real parts first),
/// scaled to unit RMS.
pub fn channel_features(h: &ChannelRealization) -> Vec<f64> {
    let m = &h.matrix;
    let mut out = Vec::with_capacity(2 * m.len());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.push(m[(r, c)].re);
        }
    }
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.push(m[(r, c)].im);
        }
    }
    let rms = libm::sqrt(out.iter().map(|v| v * v).sum::<f64>() / out.len() as f64);
    if rms > 0.0 {
        out.iter_mut().for_each(|v| *v /= rms);
    }
    out
}

/// `x mod 2 pi` in `[0, 2 pi)`.
fn wrap_phase(x: f64) -> f64 {
    let r = libm::fmod(x, 2.0 * PI);
    if r < 0.0 {
        r + 2.0 * PI
    } else {
        r
    }
}

/// Maps the clamped output box `[0, ns]^d` to hybrid precoder parameters.
///
/// The first `nt * nt_rf` outputs are phases (row-major), `o -> 2 pi o / ns`.
/// The remaining `2 * nt_rf * ns` outputs are interleaved real/imaginary
/// parts of `R_D` (row-major), `o -> o - ns / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OutputCodec {
    pub nt: usize,
    pub nt_rf: usize,
    pub ns: usize,
}

impl OutputCodec {
    pub fn new(nt: usize, nt_rf: usize, ns: usize) -> Result<Self> {
        if !(ns >= 1 && ns <= nt_rf && nt_rf <= nt) {
            return Err(invalid!(
                "need 1 <= Ns <= Nt_RF <= Nt, got Ns={ns}, Nt_RF={nt_rf}, Nt={nt}"
            ));
        }
        Ok(Self { nt, nt_rf, ns })
    }

    pub fn phase_count(&self) -> usize {
        self.nt * self.nt_rf
    }

    pub fn output_dim(&self) -> usize {
        self.phase_count() + 2 * self.nt_rf * self.ns
    }

    fn phase_scale(&self) -> f64 {
        2.0 * PI / self.ns as f64
    }

    fn offset(&self) -> f64 {
        self.ns as f64 / 2.0
    }

    pub fn decode(&self, o: &[f64]) -> Result<(DMatrix<f64>, CMatrix)> {
        if o.len() != self.output_dim() {
            return Err(mismatch!(
                "output has {} entries, codec expects {}",
                o.len(),
                self.output_dim()
            ));
        }
        let scale = self.phase_scale();
        let phases = DMatrix::from_fn(self.nt, self.nt_rf, |i, k| o[i * self.nt_rf + k] * scale);
        let base = self.phase_count();
        let off = self.offset();
        let digital = CMatrix::from_fn(self.nt_rf, self.ns, |k, j| {
            let at = base + 2 * (k * self.ns + j);
            Complex64::new(o[at] - off, o[at + 1] - off)
        });
        Ok((phases, digital))
    }

    /// Inverse of [`OutputCodec::decode`]; phases are wrapped to `[0, 2 pi)`.
    pub fn encode(&self, phases: &DMatrix<f64>, digital: &CMatrix) -> Result<Vec<f64>> {
        if phases.shape() != (self.nt, self.nt_rf) || digital.shape() != (self.nt_rf, self.ns) {
            return Err(mismatch!(
                "parameters do not match codec {}x{}x{}",
                self.nt,
                self.nt_rf,
                self.ns
            ));
        }
        let scale = self.phase_scale();
        let off = self.offset();
        let mut out = Vec::with_capacity(self.output_dim());
        for i in 0..self.nt {
            for k in 0..self.nt_rf {
                out.push(wrap_phase(phases[(i, k)]) / scale);
            }
        }
        for k in 0..self.nt_rf {
            for j in 0..self.ns {
                let z = digital[(k, j)];
                out.push(z.re + off);
                out.push(z.im + off);
            }
        }
        Ok(out)
    }

    /// Hybrid factors encoded by a network output (not power-normalized).
    pub fn factors(&self, o: &[f64]) -> Result<HybridFactors> {
        let (phases, digital) = self.decode(o)?;
        Ok(HybridFactors::from_phases(&phases, digital))
    }

    /// Squared loss against `target` and its gradient with respect to `o`.
    pub fn loss_gradient(&self, target: &CMatrix, o: &[f64]) -> Result<(f64, Vec<f64>)> {
        if target.shape() != (self.nt, self.ns) {
            return Err(mismatch!(
                "target is {}x{}, codec expects {}x{}",
                target.nrows(),
                target.ncols(),
                self.nt,
                self.ns
            ));
        }
        let (phases, digital) = self.decode(o)?;
        let (loss, g_phases, g_digital) =
            crate::precoder::loss_and_gradient(target, &phases, &digital);
        let scale = self.phase_scale();
        let mut grad = Vec::with_capacity(o.len());
        for i in 0..self.nt {
            for k in 0..self.nt_rf {
                grad.push(g_phases[(i, k)] * scale);
            }
        }
        for k in 0..self.nt_rf {
            for j in 0..self.ns {
                let g = g_digital[(k, j)];
                grad.push(g.re);
                grad.push(g.im);
            }
        }
        Ok((loss, grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{domain, stream};
    use rand::Rng;

    #[test]
    fn encode_inverts_decode_on_box() {
        let codec = OutputCodec::new(8, 3, 2).unwrap();
        let mut rng = stream(1, domain::INIT, 0);
        for _ in 0..20 {
            let o: Vec<f64> = (0..codec.output_dim())
                .map(|_| rng.random_range(0.0..2.0))
                .collect();
            let (p, d) = codec.decode(&o).unwrap();
            let back = codec.encode(&p, &d).unwrap();
            for (a, b) in o.iter().zip(&back) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn decoded_analog_is_constant_modulus() {
        let codec = OutputCodec::new(16, 4, 2).unwrap();
        let o: Vec<f64> = (0..codec.output_dim())
            .map(|k| (k % 7) as f64 * 0.3)
            .collect();
        assert!(codec.factors(&o).unwrap().modulus_deviation() < 1e-12);
        assert_eq!(codec.output_dim(), 16 * 4 + 2 * 4 * 2);
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let codec = OutputCodec::new(6, 3, 2).unwrap();
        let mut rng = stream(2, domain::INIT, 0);
        let target = CMatrix::from_fn(6, 2, |_, _| crate::rng::complex_normal(&mut rng, 0.2));
        let o: Vec<f64> = (0..codec.output_dim())
            .map(|_| rng.random_range(0.1..1.9))
            .collect();
        let (_, g) = codec.loss_gradient(&target, &o).unwrap();
        let h = 1e-6;
        for k in 0..o.len() {
            let mut p = o.clone();
            let mut m = o.clone();
            p[k] += h;
            m[k] -= h;
            let fd = (codec.loss_gradient(&target, &p).unwrap().0
                - codec.loss_gradient(&target, &m).unwrap().0)
                / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-6 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn features_have_unit_rms() {
        let mut rng = stream(3, domain::CHANNEL, 0);
        let h = crate::channel::random_channel(&mut rng, 8, 4, 3, 0.5).unwrap();
        let f = channel_features(&h);
        assert_eq!(f.len(), 2 * 8 * 4);
        let rms = (f.iter().map(|v| v * v).sum::<f64>() / f.len() as f64).sqrt();
        assert!((rms - 1.0).abs() < 1e-12);
    }
}
