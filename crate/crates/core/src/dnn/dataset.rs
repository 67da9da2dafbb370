//! Training ensembles of channels and their GMD precoders.

use alloc::vec::Vec;

use rand::Rng;

use super::codec::channel_features;
use crate::channel::{random_channel, ChannelRealization};
use crate::decomp::gmd;
use crate::error::invalid;
use crate::{CMatrix, Error, Result};

/// Redraws allowed per sample when a channel is rank deficient.
pub const MAX_REDRAWS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    /// GMD precoder `R_1` of `channel`.
    pub target: CMatrix,
    pub channel: ChannelRealization,
    pub split: Split,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Tags the trailing `fraction` of samples as test data.
    pub fn with_test_fraction(mut self, fraction: f64) -> Self {
        let n = self.samples.len();
        let n_test = libm::round((n as f64) * fraction.clamp(0.0, 1.0)) as usize;
        for (i, s) in self.samples.iter_mut().enumerate() {
            s.split = if i >= n - n_test {
                Split::Test
            } else {
                Split::Train
            };
        }
        self
    }

    pub fn split(&self, which: Split) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(move |s| s.split == which)
    }
}

/// Channel ensemble the dataset is drawn from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleConfig {
    pub nt: usize,
    pub nr: usize,
    pub ns: usize,
    pub p_nlos: usize,
    pub spacing_ratio: f64,
}

/// Draws `size` channels and their GMD targets; all samples start in
/// [`Split::Train`].
pub fn build_dataset<R: Rng + ?Sized>(
    ens: &EnsembleConfig,
    size: usize,
    rng: &mut R,
) -> Result<Dataset> {
    let mut samples = Vec::with_capacity(size);
    for _ in 0..size {
        samples.push(draw_sample(ens, rng)?);
    }
    Ok(Dataset { samples })
}

fn draw_sample<R: Rng + ?Sized>(ens: &EnsembleConfig, rng: &mut R) -> Result<Sample> {
    let mut last = None;
    for _ in 0..MAX_REDRAWS {
        let channel = random_channel(rng, ens.nt, ens.nr, ens.p_nlos, ens.spacing_ratio)?;
        match gmd(&channel.matrix, ens.ns) {
            Ok(g) => {
                return Ok(Sample {
                    features: channel_features(&channel),
                    target: g.r1,
                    channel,
                    split: Split::Train,
                })
            }
            Err(e @ Error::RankDeficient { .. }) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.unwrap_or_else(|| invalid!("no sample drawn")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{domain, stream};

    fn ens() -> EnsembleConfig {
        EnsembleConfig {
            nt: 8,
            nr: 4,
            ns: 2,
            p_nlos: 3,
            spacing_ratio: 0.5,
        }
    }

    #[test]
    fn empty_dataset() {
        let d = build_dataset(&ens(), 0, &mut stream(1, domain::DATASET, 0)).unwrap();
        assert!(d.is_empty());
    }

    #[test]
    fn samples_are_valid_and_reproducible() {
        let a = build_dataset(&ens(), 20, &mut stream(1, domain::DATASET, 0)).unwrap();
        let b = build_dataset(&ens(), 20, &mut stream(1, domain::DATASET, 0)).unwrap();
        assert_eq!(a, b);
        for s in &a.samples {
            assert_eq!(s.features.len(), 2 * 8 * 4);
            assert!(s.features.iter().all(|v| v.is_finite()));
            let g = s.target.adjoint() * &s.target;
            assert!((g - CMatrix::identity(2, 2)).norm() < 1e-10);
        }
    }

    #[test]
    fn rank_deficient_ensemble_gives_up() {
        // a single LoS path can never support two streams
        let e = EnsembleConfig { p_nlos: 0, ..ens() };
        let r = build_dataset(&e, 1, &mut stream(1, domain::DATASET, 0));
        assert!(matches!(r, Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn test_fraction_tags_tail() {
        let d = build_dataset(&ens(), 10, &mut stream(2, domain::DATASET, 0))
            .unwrap()
            .with_test_fraction(0.2);
        assert_eq!(d.split(Split::Train).count(), 8);
        assert_eq!(d.split(Split::Test).count(), 2);
        assert_eq!(d.samples[9].split, Split::Test);
    }
}
