//! Fully digital precoders and the constant-modulus hybrid factorization.
//!
//! The hybrid precoder is `R_A * R_D` with an `nt x nt_rf` analog stage whose
//! entries all have modulus `1/sqrt(nt)` and a small `nt_rf x ns` digital
//! stage. The factorization fits `R_A * R_D` to the GMD precoder `R_1` by
//! momentum SGD on the squared Frobenius loss. The analog stage is
//! parameterized by its phases, `R_A[i,k] = exp(j * phi[i,k]) / sqrt(nt)`, so
//! every iterate is feasible.
//!
//! With `E = R_1 - R_A R_D` and `L = ||E||_F^2` the Wirtinger gradients are
//!
//! ```text
//! dL/dRe(R_D) + j dL/dIm(R_D) = -2 R_A^H E
//! dL/dphi[i,k]                 = 2 Im( R_A[i,k] * conj((E R_D^H)[i,k]) )
//! ```

use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;

use crate::channel::ChannelRealization;
use crate::decomp::{self, GmdFactors};
use crate::error::{invalid, mismatch};
use crate::rng::complex_normal;
use crate::{CMatrix, Result};

/// Analog precoder `R_A` and digital precoder `R_D`.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridFactors {
    /// `nt x nt_rf`, constant modulus `1/sqrt(nt)`.
    pub analog: CMatrix,
    /// `nt_rf x ns`.
    pub digital: CMatrix,
}

impl HybridFactors {
    /// Builds the analog stage from phases.
    pub fn from_phases(phases: &DMatrix<f64>, digital: CMatrix) -> Self {
        Self {
            analog: analog_from_phases(phases),
            digital,
        }
    }

    pub fn product(&self) -> CMatrix {
        &self.analog * &self.digital
    }

    /// `tr((R_A R_D)(R_A R_D)^H)`.
    pub fn transmit_power(&self) -> f64 {
        self.product().norm_squared()
    }

    pub fn nt(&self) -> usize {
        self.analog.nrows()
    }

    pub fn streams(&self) -> usize {
        self.digital.ncols()
    }

    /// Largest deviation of `|R_A[i,j]|` from `1/sqrt(nt)`.
    pub fn modulus_deviation(&self) -> f64 {
        let m = 1.0 / libm::sqrt(self.nt() as f64);
        self.analog
            .iter()
            .map(|z| (z.norm() - m).abs())
            .fold(0.0, f64::max)
    }
}

fn analog_from_phases(phases: &DMatrix<f64>) -> CMatrix {
    let amp = 1.0 / libm::sqrt(phases.nrows() as f64);
    phases.map(|p| Complex64::from_polar(amp, p))
}

/// Optimizer settings shared by the direct factorization and DNN training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FactorizeConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub max_iters: usize,
    /// Stop once the relative loss improvement falls below this.
    pub tolerance: f64,
    /// Samples averaged per step (DNN training only).
    pub batch: usize,
    pub seed: u64,
}

impl Default for FactorizeConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            momentum: 0.9,
            max_iters: 45_000,
            tolerance: 1e-7,
            batch: 20,
            seed: 0,
        }
    }
}

impl FactorizeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid!(
                "learning rate must be non-negative, got {}",
                self.learning_rate
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(invalid!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            ));
        }
        if !(self.tolerance >= 0.0) {
            return Err(invalid!(
                "tolerance must be non-negative, got {}",
                self.tolerance
            ));
        }
        if self.batch == 0 {
            return Err(invalid!("batch size must be positive"));
        }
        Ok(())
    }
}

/// GMD precoder `R_1`, combiner `W_1` and effective channel `Q_1`.
#[derive(Debug, Clone, PartialEq)]
pub struct DigitalGmd {
    pub precoder: CMatrix,
    pub combiner: CMatrix,
    pub effective: CMatrix,
}

impl From<GmdFactors> for DigitalGmd {
    fn from(g: GmdFactors) -> Self {
        Self {
            precoder: g.r1,
            combiner: g.w1,
            effective: g.q1,
        }
    }
}

pub fn fully_digital_gmd(h: &ChannelRealization, ns: usize) -> Result<DigitalGmd> {
    Ok(decomp::gmd(&h.matrix, ns)?.into())
}

/// Top-`ns` singular vectors and gains.
#[derive(Debug, Clone, PartialEq)]
pub struct DigitalSvd {
    pub precoder: CMatrix,
    pub combiner: CMatrix,
    pub gains: Vec<f64>,
}

pub fn fully_digital_svd(h: &ChannelRealization, ns: usize) -> Result<DigitalSvd> {
    let f = decomp::svd(&h.matrix)?;
    let k = f.sigma.len();
    if ns == 0 || ns > k {
        return Err(invalid!("ns={ns} outside 1..={k}"));
    }
    if !(f.sigma[ns - 1] > decomp::RANK_TOLERANCE * f.sigma[0]) {
        return Err(crate::Error::RankDeficient {
            needed: ns,
            sigma: f.sigma[ns - 1],
            sigma_max: f.sigma[0],
        });
    }
    Ok(DigitalSvd {
        precoder: f.v.columns(0, ns).into_owned(),
        combiner: f.u.columns(0, ns).into_owned(),
        gains: f.sigma[..ns].to_vec(),
    })
}

/// Closest constant-modulus matrix: keeps each entry's phase, sets modulus
/// to `1/sqrt(rows)`. Zero entries get phase 0.
pub fn phase_project(target: &CMatrix) -> CMatrix {
    let amp = 1.0 / libm::sqrt(target.nrows() as f64);
    target.map(|z| {
        if z.re == 0.0 && z.im == 0.0 {
            Complex64::new(amp, 0.0)
        } else {
            Complex64::from_polar(amp, z.arg())
        }
    })
}

fn check_conformable(r1: &CMatrix, hf: &HybridFactors) -> Result<()> {
    let (nt, ns) = r1.shape();
    if hf.analog.nrows() != nt
        || hf.digital.ncols() != ns
        || hf.analog.ncols() != hf.digital.nrows()
    {
        return Err(mismatch!(
            "R1 is {nt}x{ns}, R_A is {}x{}, R_D is {}x{}",
            hf.analog.nrows(),
            hf.analog.ncols(),
            hf.digital.nrows(),
            hf.digital.ncols()
        ));
    }
    Ok(())
}

/// `||R_1 - R_A R_D||_F`.
pub fn hybrid_loss(r1: &CMatrix, hf: &HybridFactors) -> Result<f64> {
    check_conformable(r1, hf)?;
    Ok((r1 - hf.product()).norm())
}

/// `sqrt(tr(E E^H))` with `E = R_1 - R_A R_D`.
pub fn hybrid_loss_trace_form(r1: &CMatrix, hf: &HybridFactors) -> Result<f64> {
    check_conformable(r1, hf)?;
    let e = r1 - hf.product();
    Ok(libm::sqrt((&e * e.adjoint()).trace().re))
}

/// `sqrt(sum_i sigma_i(E)^2)` with `E = R_1 - R_A R_D`.
pub fn hybrid_loss_singular_form(r1: &CMatrix, hf: &HybridFactors) -> Result<f64> {
    check_conformable(r1, hf)?;
    let e = r1 - hf.product();
    let sv = decomp::svd(&e)?.sigma;
    Ok(libm::sqrt(sv.iter().map(|s| s * s).sum()))
}

/// Scales the digital stage so the transmit power is at most `ns`.
pub fn power_normalize(hf: &HybridFactors) -> HybridFactors {
    let ns = hf.streams() as f64;
    let power = hf.transmit_power();
    let scale = if power > ns {
        libm::sqrt(ns / power)
    } else {
        1.0
    };
    HybridFactors {
        analog: hf.analog.clone(),
        digital: &hf.digital * Complex64::new(scale, 0.0),
    }
}

/// `||R_1 - R_A R_D||_F^2` for one instance.
pub fn precoder_mse(r1: &CMatrix, hf: &HybridFactors) -> Result<f64> {
    let l = hybrid_loss(r1, hf)?;
    Ok(l * l)
}

/// Mean squared loss over an ensemble.
pub fn precoder_mse_batch<'a, I>(pairs: I) -> Result<f64>
where
    I: IntoIterator<Item = (&'a CMatrix, &'a HybridFactors)>,
{
    let mut acc = 0.0;
    let mut n = 0usize;
    for (r1, hf) in pairs {
        acc += precoder_mse(r1, hf)?;
        n += 1;
    }
    if n == 0 {
        return Err(invalid!("empty ensemble"));
    }
    Ok(acc / n as f64)
}

/// Phase-projection baseline: the first `ns` RF chains carry the phases of
/// `R_1`, the digital stage is the least-squares fit on those chains and the
/// spare chains are idle.
pub fn phase_projection_baseline(r1: &CMatrix, nt_rf: usize) -> Result<HybridFactors> {
    let (nt, ns) = r1.shape();
    check_rf_chains(nt, nt_rf, ns)?;
    let active = phase_project(r1);
    let gram = active.adjoint() * &active;
    let fit = gram
        .lu()
        .solve(&(active.adjoint() * r1))
        .ok_or_else(|| invalid!("phase-projected analog stage is singular"))?;

    let amp = Complex64::new(1.0 / libm::sqrt(nt as f64), 0.0);
    let mut analog = CMatrix::from_element(nt, nt_rf, amp);
    analog.columns_mut(0, ns).copy_from(&active);
    let mut digital = CMatrix::zeros(nt_rf, ns);
    digital.rows_mut(0, ns).copy_from(&fit);
    Ok(power_normalize(&HybridFactors { analog, digital }))
}

fn check_rf_chains(nt: usize, nt_rf: usize, ns: usize) -> Result<()> {
    if !(ns >= 1 && ns <= nt_rf && nt_rf <= nt) {
        return Err(invalid!(
            "need 1 <= Ns <= Nt_RF <= Nt, got Ns={ns}, Nt_RF={nt_rf}, Nt={nt}"
        ));
    }
    Ok(())
}

/// Squared loss `||target - R_A(phases) R_D||_F^2` and its gradient with
/// respect to the phases and to `R_D` (real and imaginary parts packed as
/// one complex number).
pub fn loss_and_gradient(
    target: &CMatrix,
    phases: &DMatrix<f64>,
    digital: &CMatrix,
) -> (f64, DMatrix<f64>, CMatrix) {
    let analog = analog_from_phases(phases);
    let e = target - &analog * digital;
    let g_digital = (analog.adjoint() * &e) * Complex64::new(-2.0, 0.0);
    let e_dh = &e * digital.adjoint();
    let g_phases = DMatrix::from_fn(analog.nrows(), analog.ncols(), |i, k| {
        2.0 * (analog[(i, k)] * e_dh[(i, k)].conj()).im
    });
    (e.norm_squared(), g_phases, g_digital)
}

/// State of one momentum-SGD factorization run.
///
/// `step` applies `v <- alpha v - eps g; p <- p + v` to the phases and the
/// real and imaginary parts of `R_D`.
#[derive(Debug, Clone)]
pub struct HybridFactorizer {
    target: CMatrix,
    phases: DMatrix<f64>,
    digital: CMatrix,
    vel_phases: DMatrix<f64>,
    vel_digital: CMatrix,
    learning_rate: f64,
    momentum: f64,
    freeze_digital: bool,
}

impl HybridFactorizer {
    /// Random start: phases uniform on `[0, 2 pi)`, `R_D` entries CN(0, 1/nt_rf).
    pub fn new<R: Rng + ?Sized>(
        target: &CMatrix,
        nt_rf: usize,
        cfg: &FactorizeConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let (nt, ns) = target.shape();
        check_rf_chains(nt, nt_rf, ns)?;
        let phases = DMatrix::from_fn(nt, nt_rf, |_, _| rng.random_range(0.0..2.0 * PI));
        let var = 1.0 / nt_rf as f64;
        let digital = CMatrix::from_fn(nt_rf, ns, |_, _| complex_normal(rng, var));
        Self::from_parts(target, phases, digital, cfg)
    }

    pub fn from_parts(
        target: &CMatrix,
        phases: DMatrix<f64>,
        digital: CMatrix,
        cfg: &FactorizeConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let (nt, ns) = target.shape();
        let nt_rf = phases.ncols();
        check_rf_chains(nt, nt_rf, ns)?;
        if phases.nrows() != nt || digital.shape() != (nt_rf, ns) {
            return Err(mismatch!(
                "phases {}x{} / digital {}x{} do not fit target {nt}x{ns}",
                phases.nrows(),
                phases.ncols(),
                digital.nrows(),
                digital.ncols()
            ));
        }
        Ok(Self {
            target: target.clone(),
            vel_phases: DMatrix::zeros(nt, nt_rf),
            vel_digital: CMatrix::zeros(nt_rf, ns),
            phases,
            digital,
            learning_rate: cfg.learning_rate,
            momentum: cfg.momentum,
            freeze_digital: false,
        })
    }

    /// Only the phases are updated; `R_D` keeps its current value.
    pub fn freeze_digital(mut self, freeze: bool) -> Self {
        self.freeze_digital = freeze;
        self
    }

    pub fn phases(&self) -> &DMatrix<f64> {
        &self.phases
    }

    pub fn digital(&self) -> &CMatrix {
        &self.digital
    }

    pub fn factors(&self) -> HybridFactors {
        HybridFactors::from_phases(&self.phases, self.digital.clone())
    }

    fn residual(&self, analog: &CMatrix) -> CMatrix {
        &self.target - analog * &self.digital
    }

    /// `||R_1 - R_A R_D||_F^2` at the current iterate.
    pub fn loss_squared(&self) -> f64 {
        self.residual(&analog_from_phases(&self.phases))
            .norm_squared()
    }

    /// Gradient of the squared loss: `(dL/dphi, dL/dRe R_D + j dL/dIm R_D)`.
    pub fn gradient(&self) -> (DMatrix<f64>, CMatrix) {
        let (_, g_phases, g_digital) = loss_and_gradient(&self.target, &self.phases, &self.digital);
        (g_phases, g_digital)
    }

    /// One momentum step. Returns the squared loss at the point the gradient
    /// was taken, i.e. before the update.
    pub fn step(&mut self) -> f64 {
        let (loss, g_phases, g_digital) =
            loss_and_gradient(&self.target, &self.phases, &self.digital);
        let (alpha, eps) = (self.momentum, self.learning_rate);
        self.vel_phases = &self.vel_phases * alpha - g_phases * eps;
        self.phases += &self.vel_phases;
        if !self.freeze_digital {
            self.vel_digital = &self.vel_digital * Complex64::new(alpha, 0.0)
                - g_digital * Complex64::new(eps, 0.0);
            self.digital += &self.vel_digital;
        }
        loss
    }
}

/// Result of [`factorize_sgd`].
#[derive(Debug, Clone, PartialEq)]
pub struct FactorizeOutcome {
    /// Power-normalized factors from the last iterate.
    pub factors: HybridFactors,
    /// `||R_1 - R_A R_D||_F` at the start and after every step.
    pub loss_trace: Vec<f64>,
    /// Loss of the returned (normalized) factors.
    pub final_loss: f64,
    /// False when `max_iters` ran out before the improvement rule fired.
    pub converged: bool,
}

/// True once the loss improved by less than `tolerance` relative to `prev`.
/// A loss increase (momentum overshoot) does not count as convergence.
pub(crate) fn improvement_stalled(prev: f64, cur: f64, tolerance: f64) -> bool {
    if cur == 0.0 {
        return true;
    }
    if !prev.is_finite() || prev <= 0.0 {
        return false;
    }
    let rel = (prev - cur) / prev;
    (0.0..tolerance).contains(&rel)
}

/// Fits `R_A R_D` to `r1` with momentum SGD from a seeded random start.
pub fn factorize_sgd(
    r1: &CMatrix,
    nt_rf: usize,
    cfg: &FactorizeConfig,
) -> Result<FactorizeOutcome> {
    let mut rng = crate::rng::stream(cfg.seed, crate::rng::domain::FACTORIZE, 0);
    let mut run = HybridFactorizer::new(r1, nt_rf, cfg, &mut rng)?;
    Ok(run_factorizer(&mut run, cfg))
}

/// Drives an existing factorizer with the stopping rule of `cfg`.
pub fn run_factorizer(run: &mut HybridFactorizer, cfg: &FactorizeConfig) -> FactorizeOutcome {
    let mut loss_trace = Vec::with_capacity(cfg.max_iters.min(1 << 16) + 1);
    let mut prev = f64::INFINITY;
    let mut converged = false;
    for _ in 0..cfg.max_iters {
        // loss of the iterate the step starts from
        let loss = run.step();
        loss_trace.push(libm::sqrt(loss));
        if !loss.is_finite() {
            break;
        }
        if improvement_stalled(prev, loss, cfg.tolerance) {
            converged = true;
            break;
        }
        prev = loss;
    }
    loss_trace.push(libm::sqrt(run.loss_squared()));
    let factors = power_normalize(&run.factors());
    let final_loss = (&run.target - factors.product()).norm();
    FactorizeOutcome {
        factors,
        loss_trace,
        final_loss,
        converged,
    }
}
