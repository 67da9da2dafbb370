//! Monte-Carlo link evaluation: BER, spectral efficiency and MSE convergence.
//!
//! Every trial draws its own channel, bits and noise from generators keyed by
//! `(master seed, trial index)`, so a curve is a deterministic function of
//! its inputs no matter how trials are scheduled. All schemes see the same
//! channels for a given seed, and within a trial one unit-variance noise
//! vector is scaled to each SNR point.
//!
//! SNR is total transmit power over per-receive-antenna noise variance:
//! with `ns` unit-power streams, `noise_var = ns * 10^(-snr_db / 10)`.

use alloc::vec::Vec;
use core::f64::consts::FRAC_1_SQRT_2;
use core::fmt;
use core::str::FromStr;

use nalgebra::DVector;
use num_complex::Complex64;
use rand::Rng;

use crate::channel::{random_channel, ChannelRealization};
use crate::dnn::{infer_precoders, Mlp, OutputCodec};
use crate::error::{invalid, mismatch};
use crate::precoder::{
    fully_digital_gmd, fully_digital_svd, phase_projection_baseline, run_factorizer, DigitalGmd,
    FactorizeConfig, HybridFactorizer, HybridFactors,
};
use crate::rng::{complex_normal, domain, stream};
use crate::{CMatrix, CVector, Error, Result};

/// z-score of the two-sided 95% Wilson interval.
pub const WILSON_Z: f64 = 1.959_963_984_540_054;
/// Channel redraws allowed per trial when the channel cannot carry `ns` streams.
pub const MAX_CHANNEL_REDRAWS: usize = 100;
/// Slack on the transmit power check.
pub const POWER_SLACK: f64 = 1e-9;
/// Allowed deviation of analog entries from `1/sqrt(Nt)`.
pub const MODULUS_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SchemeId {
    DnnHybrid,
    SgdHybrid,
    PhaseProjection,
    FullyDigitalGmd,
    FullyDigitalSvd,
}

impl SchemeId {
    pub const ALL: [SchemeId; 5] = [
        SchemeId::DnnHybrid,
        SchemeId::SgdHybrid,
        SchemeId::PhaseProjection,
        SchemeId::FullyDigitalGmd,
        SchemeId::FullyDigitalSvd,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SchemeId::DnnHybrid => "dnn_hybrid",
            SchemeId::SgdHybrid => "sgd_hybrid",
            SchemeId::PhaseProjection => "phase_projection",
            SchemeId::FullyDigitalGmd => "fully_digital_gmd",
            SchemeId::FullyDigitalSvd => "fully_digital_svd",
        }
    }

    /// Whether the precoder is a constant-modulus hybrid.
    pub fn is_hybrid(self) -> bool {
        matches!(
            self,
            SchemeId::DnnHybrid | SchemeId::SgdHybrid | SchemeId::PhaseProjection
        )
    }
}

impl fmt::Display for SchemeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SchemeId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SchemeId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| invalid!("unknown scheme `{s}`"))
    }
}

/// Gray-mapped unit-energy QPSK: `(b0, b1) -> ((1 - 2 b0) + j (1 - 2 b1)) / sqrt(2)`.
pub fn qpsk_map(bits: &[bool]) -> Result<Vec<Complex64>> {
    if !bits.len().is_multiple_of(2) {
        return Err(invalid!(
            "QPSK needs an even number of bits, got {}",
            bits.len()
        ));
    }
    let level = |b: bool| if b { -FRAC_1_SQRT_2 } else { FRAC_1_SQRT_2 };
    Ok(bits
        .chunks_exact(2)
        .map(|p| Complex64::new(level(p[0]), level(p[1])))
        .collect())
}

/// Nearest-quadrant demapping.
pub fn qpsk_demap(symbols: &[Complex64]) -> Vec<bool> {
    symbols
        .iter()
        .flat_map(|z| [z.re < 0.0, z.im < 0.0])
        .collect()
}

/// Nearest QPSK point.
pub fn qpsk_slice(z: Complex64) -> Complex64 {
    let level = |x: f64| {
        if x < 0.0 {
            -FRAC_1_SQRT_2
        } else {
            FRAC_1_SQRT_2
        }
    };
    Complex64::new(level(z.re), level(z.im))
}

/// Per-receive-antenna noise variance for `ns` unit-power streams.
pub fn noise_variance(snr_db: f64, ns: usize) -> f64 {
    ns as f64 * libm::pow(10.0, -snr_db / 10.0)
}

fn check_link(h: &ChannelRealization, precoder: &CMatrix, combiner: &CMatrix) -> Result<()> {
    let (nr, nt) = h.matrix.shape();
    if precoder.nrows() != nt || combiner.nrows() != nr || combiner.ncols() != precoder.ncols() {
        return Err(mismatch!(
            "H is {nr}x{nt}, precoder {}x{}, combiner {}x{}",
            precoder.nrows(),
            precoder.ncols(),
            combiner.nrows(),
            combiner.ncols()
        ));
    }
    Ok(())
}

/// `y = B^H H D s + B^H n`, `n ~ CN(0, noise_sigma^2 I)`.
pub fn transmit<R: Rng + ?Sized>(
    h: &ChannelRealization,
    precoder: &CMatrix,
    combiner: &CMatrix,
    s: &[Complex64],
    noise_sigma: f64,
    rng: &mut R,
) -> Result<CVector> {
    let noise = CVector::from_fn(h.matrix.nrows(), |_, _| complex_normal(rng, 1.0));
    transmit_with_noise(
        h,
        precoder,
        combiner,
        s,
        &(noise * Complex64::new(noise_sigma, 0.0)),
    )
}

/// [`transmit`] with an explicit noise vector at the receive antennas.
pub fn transmit_with_noise(
    h: &ChannelRealization,
    precoder: &CMatrix,
    combiner: &CMatrix,
    s: &[Complex64],
    noise: &CVector,
) -> Result<CVector> {
    check_link(h, precoder, combiner)?;
    let ns = precoder.ncols();
    if s.len() != ns || noise.len() != h.matrix.nrows() {
        return Err(mismatch!(
            "{} symbols / {} noise samples for {ns} streams",
            s.len(),
            noise.len()
        ));
    }
    let power = precoder.norm_squared();
    if power > ns as f64 + POWER_SLACK {
        return Err(invalid!("transmit power {power} exceeds {ns}"));
    }
    let x = precoder * DVector::from_column_slice(s);
    Ok(combiner.adjoint() * (&h.matrix * x + noise))
}

/// Successive interference cancellation on an upper triangular `q`:
/// the last stream is sliced first and cancelled from the rows above.
pub fn sic_detect(q: &CMatrix, y: &CVector) -> Result<Vec<Complex64>> {
    let n = q.nrows();
    if q.ncols() != n || y.len() != n {
        return Err(mismatch!(
            "SIC needs square q matching y ({}x{}, {})",
            q.nrows(),
            q.ncols(),
            y.len()
        ));
    }
    let mut decided = alloc::vec![Complex64::new(0.0, 0.0); n];
    for i in (0..n).rev() {
        let d = q[(i, i)];
        if d.norm_sqr() == 0.0 {
            return Err(invalid!("zero diagonal entry at stream {i}"));
        }
        let mut r = y[i];
        for j in i + 1..n {
            r -= q[(i, j)] * decided[j];
        }
        decided[i] = qpsk_slice(r / d);
    }
    Ok(decided)
}

/// Detection for an arbitrary square effective channel: QR-rotate, then SIC.
pub fn detect(effective: &CMatrix, y: &CVector) -> Result<Vec<Complex64>> {
    if effective.nrows() != effective.ncols() {
        return Err(mismatch!("effective channel must be square"));
    }
    let qr = effective.clone().qr();
    let rotated = qr.q().adjoint() * y;
    sic_detect(&qr.r(), &rotated)
}

/// Two-sided 95% Wilson score interval half-width for `errors` out of `n`.
pub fn wilson_halfwidth(errors: u64, n: u64) -> f64 {
    if n == 0 {
        return 0.5;
    }
    let n = n as f64;
    let p = errors as f64 / n;
    let z2 = WILSON_Z * WILSON_Z;
    WILSON_Z / (1.0 + z2 / n) * libm::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n))
}

/// `log2 det(I + (rho/ns) Rn^-1 Heff Heff^H)`, `Heff = B^H H D`,
/// `Rn = noise_var B^H B`, `rho = ns`.
pub fn spectral_efficiency(
    h: &ChannelRealization,
    precoder: &CMatrix,
    combiner: &CMatrix,
    snr_db: f64,
) -> Result<f64> {
    spectral_efficiency_with_noise(
        h,
        precoder,
        combiner,
        noise_variance(snr_db, precoder.ncols()),
    )
}

pub fn spectral_efficiency_with_noise(
    h: &ChannelRealization,
    precoder: &CMatrix,
    combiner: &CMatrix,
    noise_var: f64,
) -> Result<f64> {
    check_link(h, precoder, combiner)?;
    if !(noise_var > 0.0) {
        return Err(invalid!("noise variance must be positive, got {noise_var}"));
    }
    let heff = combiner.adjoint() * &h.matrix * precoder;
    let rn = (combiner.adjoint() * combiner) * Complex64::new(noise_var, 0.0);
    let chol = rn
        .cholesky()
        .ok_or_else(|| invalid!("combiner is rank deficient"))?;
    // L^-1 Heff, then X = (L^-1 Heff)(L^-1 Heff)^H is similar to Rn^-1 Heff Heff^H
    let white = chol
        .l()
        .solve_lower_triangular(&heff)
        .ok_or_else(|| invalid!("singular noise covariance"))?;
    let n = heff.nrows();
    let rho_per_stream = 1.0; // rho / ns with rho = ns
    let m =
        CMatrix::identity(n, n) + (&white * white.adjoint()) * Complex64::new(rho_per_stream, 0.0);
    let c = m
        .cholesky()
        .ok_or_else(|| invalid!("log-det argument not positive definite"))?;
    let l = c.l();
    let log2det: f64 = (0..n).map(|i| 2.0 * libm::log2(l[(i, i)].re)).sum();
    Ok(log2det)
}

/// Rejects hybrid factors that break the phase-shifter modulus or the power budget.
pub fn check_hybrid(hf: &HybridFactors, ns: usize) -> Result<()> {
    let dev = hf.modulus_deviation();
    if !(dev <= MODULUS_TOLERANCE) {
        return Err(invalid!("analog entries deviate from 1/sqrt(Nt) by {dev}"));
    }
    let power = hf.transmit_power();
    if !(power <= ns as f64 + POWER_SLACK) {
        return Err(invalid!("hybrid transmit power {power} exceeds {ns}"));
    }
    Ok(())
}

/// Link dimensions and optimizer settings shared by all trials.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkConfig {
    pub nt: usize,
    pub nr: usize,
    pub nt_rf: usize,
    pub ns: usize,
    pub p_nlos: usize,
    pub spacing_ratio: f64,
    pub factorize: FactorizeConfig,
}

/// Precoder and combiner of one scheme on one channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub precoder: CMatrix,
    pub combiner: CMatrix,
    /// Present for hybrid schemes.
    pub hybrid: Option<HybridFactors>,
}

/// Builds links for each scheme and runs trials.
#[derive(Debug, Clone, Copy)]
pub struct Simulator<'a> {
    pub cfg: LinkConfig,
    pub net: Option<(&'a Mlp, OutputCodec)>,
}

impl<'a> Simulator<'a> {
    pub fn new(cfg: LinkConfig) -> Result<Self> {
        let LinkConfig {
            nt, nr, nt_rf, ns, ..
        } = cfg;
        if !(ns >= 1 && ns <= nt_rf && nt_rf <= nt && ns <= nr) {
            return Err(invalid!(
                "need 1 <= Ns <= Nt_RF <= Nt and Ns <= Nr, got Ns={ns}, Nt_RF={nt_rf}, Nt={nt}, Nr={nr}"
            ));
        }
        cfg.factorize.validate()?;
        Ok(Self { cfg, net: None })
    }

    pub fn with_network(mut self, net: &'a Mlp, codec: OutputCodec) -> Self {
        self.net = Some((net, codec));
        self
    }

    /// Channel of trial `trial` and its GMD; rank-deficient draws are redrawn.
    pub fn draw_channel(&self, seed: u64, trial: u64) -> Result<(ChannelRealization, DigitalGmd)> {
        let mut rng = stream(seed, domain::CHANNEL, trial);
        let c = &self.cfg;
        let mut last = None;
        for _ in 0..MAX_CHANNEL_REDRAWS {
            let h = random_channel(&mut rng, c.nt, c.nr, c.p_nlos, c.spacing_ratio)?;
            match fully_digital_gmd(&h, c.ns) {
                Ok(g) => return Ok((h, g)),
                Err(e @ Error::RankDeficient { .. }) => last = Some(e),
                Err(e) => return Err(e),
            }
        }
        Err(last.unwrap_or_else(|| invalid!("no channel drawn")))
    }

    /// Precoder/combiner of `scheme`. Hybrid schemes use the GMD combiner.
    pub fn build(
        &self,
        scheme: SchemeId,
        h: &ChannelRealization,
        gmd: &DigitalGmd,
        seed: u64,
        trial: u64,
    ) -> Result<Link> {
        let c = &self.cfg;
        let hybrid_link = |hf: HybridFactors| -> Result<Link> {
            check_hybrid(&hf, c.ns)?;
            Ok(Link {
                precoder: hf.product(),
                combiner: gmd.combiner.clone(),
                hybrid: Some(hf),
            })
        };
        Ok(match scheme {
            SchemeId::FullyDigitalGmd => Link {
                precoder: gmd.precoder.clone(),
                combiner: gmd.combiner.clone(),
                hybrid: None,
            },
            SchemeId::FullyDigitalSvd => {
                let s = fully_digital_svd(h, c.ns)?;
                Link {
                    precoder: s.precoder,
                    combiner: s.combiner,
                    hybrid: None,
                }
            }
            SchemeId::PhaseProjection => {
                hybrid_link(phase_projection_baseline(&gmd.precoder, c.nt_rf)?)?
            }
            SchemeId::SgdHybrid => {
                let mut rng = stream(seed, domain::FACTORIZE, trial);
                let mut run =
                    HybridFactorizer::new(&gmd.precoder, c.nt_rf, &c.factorize, &mut rng)?;
                hybrid_link(run_factorizer(&mut run, &c.factorize).factors)?
            }
            SchemeId::DnnHybrid => {
                let (net, codec) = self
                    .net
                    .ok_or_else(|| invalid!("dnn_hybrid needs a trained network"))?;
                hybrid_link(infer_precoders(net, &codec, h)?)?
            }
        })
    }

    /// Bit errors of one trial at every SNR point (`2 * ns` bits each).
    pub fn ber_trial(
        &self,
        scheme: SchemeId,
        snr_grid_db: &[f64],
        seed: u64,
        trial: u64,
    ) -> Result<Vec<u32>> {
        let (h, gmd) = self.draw_channel(seed, trial)?;
        let link = self.build(scheme, &h, &gmd, seed, trial)?;
        let ns = self.cfg.ns;
        let mut rng = stream(seed, domain::SYMBOLS, trial);
        let bits: Vec<bool> = (0..2 * ns).map(|_| rng.random()).collect();
        let symbols = qpsk_map(&bits)?;
        let mut rng = stream(seed, domain::NOISE, trial);
        let unit_noise = CVector::from_fn(h.matrix.nrows(), |_, _| complex_normal(&mut rng, 1.0));
        let effective = link.combiner.adjoint() * &h.matrix * &link.precoder;

        snr_grid_db
            .iter()
            .map(|&snr| {
                let sigma = libm::sqrt(noise_variance(snr, ns));
                let noise = &unit_noise * Complex64::new(sigma, 0.0);
                let y = transmit_with_noise(&h, &link.precoder, &link.combiner, &symbols, &noise)?;
                let decided = qpsk_demap(&detect(&effective, &y)?);
                Ok(decided.iter().zip(&bits).filter(|(a, b)| a != b).count() as u32)
            })
            .collect()
    }

    /// Spectral efficiency of one trial at every SNR point.
    pub fn se_trial(
        &self,
        scheme: SchemeId,
        snr_grid_db: &[f64],
        seed: u64,
        trial: u64,
    ) -> Result<Vec<f64>> {
        let (h, gmd) = self.draw_channel(seed, trial)?;
        let link = self.build(scheme, &h, &gmd, seed, trial)?;
        snr_grid_db
            .iter()
            .map(|&snr| spectral_efficiency(&h, &link.precoder, &link.combiner, snr))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BerPoint {
    pub snr_db: f64,
    pub ber: f64,
    pub ci_halfwidth: f64,
    pub trials: u64,
    pub errors: u64,
    pub bits: u64,
}

impl BerPoint {
    /// `self <= other` up to the two confidence intervals.
    pub fn at_most(&self, other: &BerPoint) -> bool {
        self.ber <= other.ber + self.ci_halfwidth + other.ci_halfwidth
    }
}

/// Turns per-SNR error counts into BER points.
pub fn summarize_ber(
    snr_grid_db: &[f64],
    errors: &[u64],
    trials: u64,
    bits_per_trial: u64,
) -> Vec<BerPoint> {
    snr_grid_db
        .iter()
        .zip(errors)
        .map(|(&snr_db, &e)| {
            let bits = trials * bits_per_trial;
            BerPoint {
                snr_db,
                ber: if bits == 0 {
                    0.0
                } else {
                    e as f64 / bits as f64
                },
                ci_halfwidth: wilson_halfwidth(e, bits),
                trials,
                errors: e,
                bits,
            }
        })
        .collect()
}

/// Sequential BER curve over `trials` channels.
pub fn ber_curve(
    sim: &Simulator<'_>,
    scheme: SchemeId,
    snr_grid_db: &[f64],
    trials: u64,
    seed: u64,
) -> Result<Vec<BerPoint>> {
    if trials == 0 {
        return Err(invalid!("need at least one trial"));
    }
    let mut errors = alloc::vec![0u64; snr_grid_db.len()];
    for t in 0..trials {
        for (acc, e) in errors
            .iter_mut()
            .zip(sim.ber_trial(scheme, snr_grid_db, seed, t)?)
        {
            *acc += e as u64;
        }
    }
    Ok(summarize_ber(
        snr_grid_db,
        &errors,
        trials,
        2 * sim.cfg.ns as u64,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SePoint {
    pub snr_db: f64,
    pub bits_per_s_hz: f64,
    pub trials: u64,
}

/// Per-trial values (trial-major) averaged in trial order.
pub fn summarize_se(snr_grid_db: &[f64], per_trial: &[Vec<f64>]) -> Vec<SePoint> {
    let n = per_trial.len();
    snr_grid_db
        .iter()
        .enumerate()
        .map(|(k, &snr_db)| {
            let sum: f64 = per_trial.iter().map(|v| v[k]).sum();
            SePoint {
                snr_db,
                bits_per_s_hz: if n == 0 { 0.0 } else { sum / n as f64 },
                trials: n as u64,
            }
        })
        .collect()
}

/// Sequential spectral-efficiency curve averaged over `trials` channels.
pub fn se_curve(
    sim: &Simulator<'_>,
    scheme: SchemeId,
    snr_grid_db: &[f64],
    trials: u64,
    seed: u64,
) -> Result<Vec<SePoint>> {
    if trials == 0 {
        return Err(invalid!("need at least one trial"));
    }
    let per_trial = (0..trials)
        .map(|t| sim.se_trial(scheme, snr_grid_db, seed, t))
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize_se(snr_grid_db, &per_trial))
}

/// Methods compared by [`mse_vs_iterations`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MseMethod {
    /// Phases and digital stage trained jointly.
    SgdHybrid,
    /// Phases only; the digital stage keeps its random start.
    AnalogOnly,
}

impl MseMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            MseMethod::SgdHybrid => "sgd_hybrid",
            MseMethod::AnalogOnly => "analog_only",
        }
    }
}

impl FromStr for MseMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd_hybrid" => Ok(MseMethod::SgdHybrid),
            "analog_only" => Ok(MseMethod::AnalogOnly),
            _ => Err(invalid!("unknown MSE method `{s}`")),
        }
    }
}

/// Best-so-far `||R_1 - R_A R_D||_F^2` after each of `iterations` steps
/// (index 0 is the starting point) for one target. Target `index` of a
/// channel set starts from the generator `(cfg.seed, index)`.
pub fn mse_trace(
    method: MseMethod,
    target: &CMatrix,
    nt_rf: usize,
    cfg: &FactorizeConfig,
    iterations: usize,
    index: u64,
) -> Result<Vec<f64>> {
    let mut rng = stream(cfg.seed, domain::FACTORIZE, index);
    let mut run = HybridFactorizer::new(target, nt_rf, cfg, &mut rng)?
        .freeze_digital(method == MseMethod::AnalogOnly);
    let mut trace = Vec::with_capacity(iterations + 1);
    let mut best = f64::INFINITY;
    for _ in 0..iterations {
        best = best.min(run.step());
        trace.push(best);
    }
    trace.push(best.min(run.loss_squared()));
    Ok(trace)
}

/// Element-wise mean of equally long traces, summed in the given order.
pub fn mean_trace(traces: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = traces
        .first()
        .ok_or_else(|| invalid!("empty channel set"))?;
    if traces.iter().any(|t| t.len() != first.len()) {
        return Err(mismatch!("traces differ in length"));
    }
    let n = traces.len() as f64;
    Ok((0..first.len())
        .map(|k| traces.iter().map(|t| t[k]).sum::<f64>() / n)
        .collect())
}

/// [`mse_trace`] averaged over a channel set.
pub fn mse_vs_iterations(
    method: MseMethod,
    targets: &[CMatrix],
    nt_rf: usize,
    cfg: &FactorizeConfig,
    iterations: usize,
) -> Result<Vec<f64>> {
    let traces = targets
        .iter()
        .enumerate()
        .map(|(c, t)| mse_trace(method, t, nt_rf, cfg, iterations, c as u64))
        .collect::<Result<Vec<_>>>()?;
    mean_trace(&traces)
}

/// First iteration at which a non-increasing curve has covered all but
/// `fraction` of its total drop `curve[0] - floor`.
pub fn iterations_to_settle(curve: &[f64], fraction: f64) -> usize {
    let Some(&floor) = curve.last() else {
        return 0;
    };
    let threshold = floor + fraction * (curve[0] - floor);
    curve
        .iter()
        .position(|&v| v <= threshold)
        .unwrap_or(curve.len() - 1)
}
