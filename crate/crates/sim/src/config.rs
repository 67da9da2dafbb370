//! Line-oriented `key = value` experiment configuration.
//!
//! Blank lines and everything after `#` are ignored. Lists are comma
//! separated. Unknown or repeated keys are errors.
//!
//! | key | default |
//! |---|---|
//! | `kind` | taken from the subcommand |
//! | `nt`, `nr` | 16, 4 |
//! | `nt_rf`, `nr_rf` | 4, 4 |
//! | `ns` | 2 |
//! | `p_nlos` | 3 |
//! | `spacing_ratio` | 0.5 |
//! | `snr_grid_db` | -20, -15, -10, -5, 0, 5, 10 |
//! | `trials` | 20000 |
//! | `seed` | 0 |
//! | `schemes` | sgd_hybrid, phase_projection, fully_digital_gmd, fully_digital_svd |
//! | `learning_rate` | 0.001 |
//! | `momentum` | 0.9 |
//! | `max_iters` | 45000 |
//! | `tolerance` | 1e-7 |
//! | `batch_size` | 20 |
//! | `noise_sigma` | 0.1 |
//! | `dataset_size` | 1000 |
//! | `test_fraction` | 0.1 |
//! | `nt_sweep` | 16, 32, 64 |
//! | `model_path` | none |
//! | `threads` | 0 (all cores) |

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use hybridprec_core::dnn::DEFAULT_NOISE_SIGMA;
use hybridprec_core::precoder::FactorizeConfig;
use hybridprec_core::simulate::{LinkConfig, SchemeId};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: `{key}` given twice")]
    Duplicate { line: usize, key: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Kind {
    GmdCheck,
    Ber,
    Se,
    Mse,
    Train,
    ComplexityBench,
}

impl Kind {
    pub const ALL: [Kind; 6] = [
        Kind::GmdCheck,
        Kind::Ber,
        Kind::Se,
        Kind::Mse,
        Kind::Train,
        Kind::ComplexityBench,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Kind::GmdCheck => "gmd-check",
            Kind::Ber => "ber",
            Kind::Se => "se",
            Kind::Mse => "mse",
            Kind::Train => "train",
            Kind::ComplexityBench => "complexity-bench",
        }
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Kind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Kind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown experiment kind `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub kind: Option<Kind>,
    pub nt: usize,
    pub nr: usize,
    pub nt_rf: usize,
    pub nr_rf: usize,
    pub ns: usize,
    pub p_nlos: usize,
    pub spacing_ratio: f64,
    pub snr_grid_db: Vec<f64>,
    pub trials: u64,
    pub seed: u64,
    pub schemes: Vec<SchemeId>,
    pub learning_rate: f64,
    pub momentum: f64,
    pub max_iters: usize,
    pub tolerance: f64,
    pub batch_size: usize,
    pub noise_sigma: f64,
    pub dataset_size: usize,
    pub test_fraction: f64,
    pub nt_sweep: Vec<usize>,
    pub model_path: Option<PathBuf>,
    pub threads: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let opt = FactorizeConfig::default();
        Self {
            kind: None,
            nt: 16,
            nr: 4,
            nt_rf: 4,
            nr_rf: 4,
            ns: 2,
            p_nlos: 3,
            spacing_ratio: 0.5,
            snr_grid_db: vec![-20.0, -15.0, -10.0, -5.0, 0.0, 5.0, 10.0],
            trials: 20_000,
            seed: 0,
            schemes: vec![
                SchemeId::SgdHybrid,
                SchemeId::PhaseProjection,
                SchemeId::FullyDigitalGmd,
                SchemeId::FullyDigitalSvd,
            ],
            learning_rate: opt.learning_rate,
            momentum: opt.momentum,
            max_iters: opt.max_iters,
            tolerance: opt.tolerance,
            batch_size: opt.batch,
            noise_sigma: DEFAULT_NOISE_SIGMA,
            dataset_size: 1000,
            test_fraction: 0.1,
            nt_sweep: vec![16, 32, 64],
            model_path: None,
            threads: 0,
        }
    }
}

fn parse_scalar<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value.parse().map_err(|e| ConfigError::Parse {
        line,
        message: format!("bad value `{value}` for `{key}`: {e}"),
    })
}

fn parse_list<T: FromStr>(line: usize, key: &str, value: &str) -> Result<Vec<T>, ConfigError>
where
    T::Err: fmt::Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(|v| parse_scalar(line, key, v))
        .collect()
}

fn join<T: fmt::Display>(items: &[T]) -> String {
    items
        .iter()
        .map(T::to_string)
        .collect::<Vec<_>>()
        .join(", ")
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg: Self = text.parse()?;
        // relative model paths are resolved against the config file
        if let (Some(model), Some(dir)) = (&cfg.model_path, path.parent()) {
            if model.is_relative() {
                cfg.model_path = Some(dir.join(model));
            }
        }
        Ok(cfg)
    }

    fn set(&mut self, line: usize, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "kind" => self.kind = Some(parse_scalar(line, key, value)?),
            "nt" => self.nt = parse_scalar(line, key, value)?,
            "nr" => self.nr = parse_scalar(line, key, value)?,
            "nt_rf" => self.nt_rf = parse_scalar(line, key, value)?,
            "nr_rf" => self.nr_rf = parse_scalar(line, key, value)?,
            "ns" => self.ns = parse_scalar(line, key, value)?,
            "p_nlos" => self.p_nlos = parse_scalar(line, key, value)?,
            "spacing_ratio" => self.spacing_ratio = parse_scalar(line, key, value)?,
            "snr_grid_db" => self.snr_grid_db = parse_list(line, key, value)?,
            "trials" => self.trials = parse_scalar(line, key, value)?,
            "seed" => self.seed = parse_scalar(line, key, value)?,
            "schemes" => self.schemes = parse_list(line, key, value)?,
            "learning_rate" => self.learning_rate = parse_scalar(line, key, value)?,
            "momentum" => self.momentum = parse_scalar(line, key, value)?,
            "max_iters" => self.max_iters = parse_scalar(line, key, value)?,
            "tolerance" => self.tolerance = parse_scalar(line, key, value)?,
            "batch_size" => self.batch_size = parse_scalar(line, key, value)?,
            "noise_sigma" => self.noise_sigma = parse_scalar(line, key, value)?,
            "dataset_size" => self.dataset_size = parse_scalar(line, key, value)?,
            "test_fraction" => self.test_fraction = parse_scalar(line, key, value)?,
            "nt_sweep" => self.nt_sweep = parse_list(line, key, value)?,
            "model_path" => self.model_path = Some(PathBuf::from(value)),
            "threads" => self.threads = parse_scalar(line, key, value)?,
            _ => {
                return Err(ConfigError::UnknownKey {
                    line,
                    key: key.to_string(),
                })
            }
        }
        Ok(())
    }

    /// Checks the dimension inequalities and value ranges.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |msg: String| Err(ConfigError::Invalid(msg));
        let (nt, nr, nt_rf, nr_rf, ns) = (self.nt, self.nr, self.nt_rf, self.nr_rf, self.ns);
        if ns == 0 {
            return bad("ns must be at least 1".into());
        }
        if ns > nt_rf {
            return bad(format!("Ns <= Nt_RF violated (ns={ns}, nt_rf={nt_rf})"));
        }
        if nt_rf > nt {
            return bad(format!("Nt_RF <= Nt violated (nt_rf={nt_rf}, nt={nt})"));
        }
        if ns > nr_rf {
            return bad(format!("Ns <= Nr_RF violated (ns={ns}, nr_rf={nr_rf})"));
        }
        if nr_rf > nr {
            return bad(format!("Nr_RF <= Nr violated (nr_rf={nr_rf}, nr={nr})"));
        }
        if !(self.spacing_ratio > 0.0 && self.spacing_ratio.is_finite()) {
            return bad(format!(
                "spacing_ratio must be positive, got {}",
                self.spacing_ratio
            ));
        }
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.snr_grid_db.iter().any(|s| s.is_nan()) {
            return bad("snr_grid_db contains NaN".into());
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!(
                "noise_sigma must be non-negative, got {}",
                self.noise_sigma
            ));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return bad(format!(
                "test_fraction must lie in [0, 1), got {}",
                self.test_fraction
            ));
        }
        if self.nt_sweep.iter().any(|&n| n < nt_rf) {
            return bad(format!("Nt_RF <= Nt violated by nt_sweep (nt_rf={nt_rf})"));
        }
        self.factorize()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn factorize(&self) -> FactorizeConfig {
        FactorizeConfig {
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            max_iters: self.max_iters,
            tolerance: self.tolerance,
            batch: self.batch_size,
            seed: self.seed,
        }
    }

    pub fn link(&self) -> LinkConfig {
        LinkConfig {
            nt: self.nt,
            nr: self.nr,
            nt_rf: self.nt_rf,
            ns: self.ns,
            p_nlos: self.p_nlos,
            spacing_ratio: self.spacing_ratio,
            factorize: self.factorize(),
        }
    }

    /// Every resolved key in file order; feeding the rendered lines back
    /// through the parser reproduces the config.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        if let Some(kind) = self.kind {
            out.push(("kind", kind.to_string()));
        }
        out.extend([
            ("nt", self.nt.to_string()),
            ("nr", self.nr.to_string()),
            ("nt_rf", self.nt_rf.to_string()),
            ("nr_rf", self.nr_rf.to_string()),
            ("ns", self.ns.to_string()),
            ("p_nlos", self.p_nlos.to_string()),
            ("spacing_ratio", format!("{:?}", self.spacing_ratio)),
            (
                "snr_grid_db",
                join(
                    &self
                        .snr_grid_db
                        .iter()
                        .map(|v| format!("{v:?}"))
                        .collect::<Vec<_>>(),
                ),
            ),
            ("trials", self.trials.to_string()),
            ("seed", self.seed.to_string()),
            ("schemes", join(&self.schemes)),
            ("learning_rate", format!("{:?}", self.learning_rate)),
            ("momentum", format!("{:?}", self.momentum)),
            ("max_iters", self.max_iters.to_string()),
            ("tolerance", format!("{:?}", self.tolerance)),
            ("batch_size", self.batch_size.to_string()),
            ("noise_sigma", format!("{:?}", self.noise_sigma)),
            ("dataset_size", self.dataset_size.to_string()),
            ("test_fraction", format!("{:?}", self.test_fraction)),
            ("nt_sweep", join(&self.nt_sweep)),
        ]);
        if let Some(p) = &self.model_path {
            out.push(("model_path", p.display().to_string()));
        }
        out.push(("threads", self.threads.to_string()));
        out
    }

    pub fn render(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}

impl FromStr for ExperimentConfig {
    type Err = ConfigError;

    fn from_str(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| ConfigError::Parse {
                line,
                message: format!("expected `key = value`, got `{content}`"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() || value.is_empty() {
                return Err(ConfigError::Parse {
                    line,
                    message: format!("expected `key = value`, got `{content}`"),
                });
            }
            if !seen.insert(key.to_string()) {
                return Err(ConfigError::Duplicate {
                    line,
                    key: key.to_string(),
                });
            }
            cfg.set(line, key, value)?;
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn learning_rate_is_read() {
        let cfg: ExperimentConfig = "learning_rate = 0.001\n".parse().unwrap();
        assert_eq!(cfg.learning_rate, 0.001);
    }

    #[test]
    fn documented_defaults() {
        let cfg: ExperimentConfig = "".parse().unwrap();
        assert_eq!(cfg.batch_size, 20);
        assert_eq!(cfg.tolerance, 1e-7);
        assert_eq!(cfg.learning_rate, 0.001);
        assert_eq!(cfg.momentum, 0.9);
        assert_eq!(cfg.p_nlos, 3);
        cfg.validate().unwrap();
    }

    #[test]
    fn streams_above_rf_chains_rejected() {
        let cfg: ExperimentConfig = "ns = 4\nnt_rf = 2\n".parse().unwrap();
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("Ns <= Nt_RF"), "{msg}");
        let cfg: ExperimentConfig = "nr_rf = 8\n".parse().unwrap();
        assert!(cfg
            .validate()
            .unwrap_err()
            .to_string()
            .contains("Nr_RF <= Nr"));
    }

    #[test]
    fn malformed_lines_report_line_numbers() {
        let err = "nt = 16\n\nthis is not a pair\n"
            .parse::<ExperimentConfig>()
            .unwrap_err();
        assert!(matches!(err, ConfigError::Parse { line: 3, .. }), "{err}");
        let err = "nt = sixteen".parse::<ExperimentConfig>().unwrap_err();
        assert!(matches!(err, ConfigError::Parse { line: 1, .. }));
        let err = "# header\nfoo = 1".parse::<ExperimentConfig>().unwrap_err();
        assert!(matches!(err, ConfigError::UnknownKey { line: 2, .. }));
        let err = "nt = 16\nnt = 32".parse::<ExperimentConfig>().unwrap_err();
        assert!(matches!(err, ConfigError::Duplicate { line: 2, .. }));
        let err = "schemes = sgd_hybrid, omp"
            .parse::<ExperimentConfig>()
            .unwrap_err();
        assert!(matches!(err, ConfigError::Parse { line: 1, .. }));
    }

    #[test]
    fn lists_and_comments() {
        let cfg: ExperimentConfig =
            "snr_grid_db = -5, 0 , 7.5  # dB\nschemes = fully_digital_gmd,sgd_hybrid\nkind = ber"
                .parse()
                .unwrap();
        assert_eq!(cfg.snr_grid_db, [-5.0, 0.0, 7.5]);
        assert_eq!(
            cfg.schemes,
            [SchemeId::FullyDigitalGmd, SchemeId::SgdHybrid]
        );
        assert_eq!(cfg.kind, Some(Kind::Ber));
    }

    #[test]
    fn render_round_trips() {
        let mut cfg = ExperimentConfig {
            kind: Some(Kind::Se),
            learning_rate: 0.1 + 0.2,
            model_path: Some("nets/model.txt".into()),
            ..Default::default()
        };
        cfg.snr_grid_db = vec![-1.25, 3.0];
        let back: ExperimentConfig = cfg.render().parse().unwrap();
        assert_eq!(back, cfg);
    }
}
