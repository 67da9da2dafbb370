//! Training loop and single-pass inference.

use alloc::vec::Vec;

use rand::seq::SliceRandom;

use super::codec::{channel_features, OutputCodec};
use super::dataset::{Dataset, Sample, Split};
use super::{Gradients, Mlp, Mode};
use crate::channel::ChannelRealization;
use crate::error::{invalid, mismatch};
use crate::precoder::{improvement_stalled, power_normalize, FactorizeConfig, HybridFactors};
use crate::rng::{domain, stream};
use crate::{CMatrix, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Mean `||R_1 - R_A R_D||_F` over the samples of each epoch.
    pub history: Vec<f64>,
    /// SGD steps taken.
    pub iterations: usize,
    pub converged: bool,
}

fn check_dims(net: &Mlp, codec: &OutputCodec) -> Result<()> {
    if net.output_dim() != codec.output_dim() {
        return Err(mismatch!(
            "network emits {} values, codec expects {}",
            net.output_dim(),
            codec.output_dim()
        ));
    }
    Ok(())
}

/// Squared loss of one sample and the parameter gradients of that loss.
pub fn sample_loss_and_gradient(
    net: &Mlp,
    codec: &OutputCodec,
    features: &[f64],
    target: &CMatrix,
    mode: Mode<'_>,
) -> Result<(f64, Gradients)> {
    let mut grads = Gradients::zeros_like(net);
    let loss = accumulate(net, codec, features, target, mode, &mut grads)?;
    Ok((loss, grads))
}

fn accumulate(
    net: &Mlp,
    codec: &OutputCodec,
    features: &[f64],
    target: &CMatrix,
    mode: Mode<'_>,
    acc: &mut Gradients,
) -> Result<f64> {
    let pass = net.forward(features, mode)?;
    let (loss, grad_out) = codec.loss_gradient(target, pass.output())?;
    net.backward_into(&pass, &grad_out, acc)?;
    Ok(loss)
}

/// Mean inference-mode `||R_1 - R_A R_D||_F` over `samples`.
pub fn evaluate_loss<'a, I>(net: &Mlp, codec: &OutputCodec, samples: I) -> Result<f64>
where
    I: IntoIterator<Item = &'a Sample>,
{
    let mut acc = 0.0;
    let mut n = 0usize;
    for s in samples {
        let out = net.infer(&s.features)?;
        let (loss, _) = codec.loss_gradient(&s.target, &out)?;
        acc += libm::sqrt(loss);
        n += 1;
    }
    if n == 0 {
        return Err(invalid!("no samples to evaluate"));
    }
    Ok(acc / n as f64)
}

/// Momentum SGD on the network weights against the squared hybrid loss.
///
/// Each step averages gradients over `cfg.batch` training samples taken from
/// a per-epoch shuffle (wrapping around when the dataset is smaller than a
/// batch). Stops after `cfg.max_iters` steps or when the epoch loss
/// improves by less than `cfg.tolerance` relative.
pub fn train(
    net: &mut Mlp,
    data: &Dataset,
    codec: &OutputCodec,
    cfg: &FactorizeConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_dims(net, codec)?;
    let samples: Vec<&Sample> = data.split(Split::Train).collect();
    if samples.is_empty() {
        return Err(invalid!("training set is empty"));
    }
    let n = samples.len();
    let steps_per_epoch = n.div_ceil(cfg.batch).max(1);
    let mut rng = stream(cfg.seed, domain::TRAIN, 0);
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::new();
    let mut iterations = 0usize;
    let mut converged = false;

    while iterations < cfg.max_iters {
        order.shuffle(&mut rng);
        let mut cursor = 0usize;
        let mut epoch_loss = 0.0;
        let mut seen = 0usize;
        for _ in 0..steps_per_epoch {
            if iterations >= cfg.max_iters {
                break;
            }
            let mut grads = Gradients::zeros_like(net);
            for _ in 0..cfg.batch {
                let s = samples[order[cursor % n]];
                cursor += 1;
                let loss = accumulate(
                    net,
                    codec,
                    &s.features,
                    &s.target,
                    Mode::Train(&mut rng),
                    &mut grads,
                )?;
                epoch_loss += libm::sqrt(loss);
                seen += 1;
            }
            grads.scale(1.0 / cfg.batch as f64);
            net.apply_gradients(&grads, cfg.momentum, cfg.learning_rate);
            iterations += 1;
        }
        let mean = epoch_loss / seen as f64;
        let stalled = history
            .last()
            .is_some_and(|&prev| improvement_stalled(prev, mean, cfg.tolerance));
        history.push(mean);
        if !mean.is_finite() {
            break;
        }
        if stalled {
            converged = true;
            break;
        }
    }
    Ok(TrainOutcome {
        history,
        iterations,
        converged,
    })
}

/// One forward pass: channel in, power-normalized hybrid precoder out.
pub fn infer_precoders(
    net: &Mlp,
    codec: &OutputCodec,
    h: &ChannelRealization,
) -> Result<HybridFactors> {
    check_dims(net, codec)?;
    if h.nt != codec.nt {
        return Err(mismatch!(
            "channel has {} transmit antennas, codec expects {}",
            h.nt,
            codec.nt
        ));
    }
    let out = net.infer(&channel_features(h))?;
    Ok(power_normalize(&codec.factors(&out)?))
}

#[cfg(test)]
mod tests {
    use super::super::{build_dataset, default_architecture, EnsembleConfig};
    use super::*;

    fn setup(size: usize) -> (Mlp, OutputCodec, Dataset) {
        let ens = EnsembleConfig {
            nt: 8,
            nr: 2,
            ns: 2,
            p_nlos: 3,
            spacing_ratio: 0.5,
        };
        let codec = OutputCodec::new(8, 4, 2).unwrap();
        let data = build_dataset(&ens, size, &mut stream(1, domain::DATASET, 0)).unwrap();
        let specs = default_architecture(codec.output_dim(), 2, 0.1);
        let net = Mlp::new(2 * 8 * 2, &specs, &mut stream(1, domain::INIT, 0)).unwrap();
        (net, codec, data)
    }

    #[test]
    fn zero_learning_rate_keeps_loss_constant() {
        let (mut net, codec, data) = setup(4);
        let before = net.clone();
        let cfg = FactorizeConfig {
            learning_rate: 0.0,
            max_iters: 5,
            batch: 4,
            tolerance: 0.0,
            ..Default::default()
        };
        // noise would make the epoch loss fluctuate
        let mut quiet = before.clone();
        for l in quiet.layers_mut() {
            l.spec.noise_sigma = 0.0;
        }
        let out = train(&mut quiet, &data, &codec, &cfg).unwrap();
        assert_eq!(out.history.len(), 5);
        // epochs visit the samples in different orders, so only rounding differs
        assert!(out
            .history
            .windows(2)
            .all(|w| (w[0] - w[1]).abs() < 1e-12 * w[0]));
        train(&mut net, &data, &codec, &cfg).unwrap();
        assert_eq!(net.layers()[0].weights, before.layers()[0].weights);
    }

    #[test]
    fn rejects_empty_training_set() {
        let (mut net, codec, data) = setup(2);
        let all_test = data.with_test_fraction(1.0);
        assert!(train(&mut net, &all_test, &codec, &FactorizeConfig::default()).is_err());
    }

    #[test]
    fn inference_is_feasible_and_deterministic() {
        let (net, codec, data) = setup(3);
        for s in &data.samples {
            let a = infer_precoders(&net, &codec, &s.channel).unwrap();
            let b = infer_precoders(&net, &codec, &s.channel).unwrap();
            assert_eq!(a, b);
            assert!(a.modulus_deviation() < 1e-12);
            assert!(a.transmit_power() <= 2.0 + 1e-9);
        }
    }

    #[test]
    fn training_reduces_loss() {
        let (mut net, codec, data) = setup(8);
        let before = evaluate_loss(&net, &codec, &data.samples).unwrap();
        let cfg = FactorizeConfig {
            learning_rate: 0.01,
            max_iters: 200,
            batch: 4,
            ..Default::default()
        };
        let out = train(&mut net, &data, &codec, &cfg).unwrap();
        assert_eq!(out.iterations, 200);
        let after = evaluate_loss(&net, &codec, &data.samples).unwrap();
        assert!(after < before, "{after} >= {before}");
    }
}
