//! Plain-text network files.
//!
//! ```text
//! format_version = 1
//! nt = 16
//! nr = 4
//! nt_rf = 4
//! ns = 2
//! input_dim = 128
//! layers = 7
//! layer = 128 relu 0.0
//! weights = <width * fan_in floats, row-major>
//! biases = <width floats>
//! ...
//! ```
//!
//! Floats are written in shortest round-trip form so a save/load cycle is
//! bit-exact.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use hybridprec_core::dnn::{Activation, LayerSpec, Mlp, OutputCodec};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("model file line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("unsupported model format version {0}")]
    Version(u32),
    #[error(transparent)]
    Core(#[from] hybridprec_core::Error),
}

/// A trained network and the link dimensions it was trained for.
#[derive(Debug, Clone, PartialEq)]
pub struct SavedModel {
    pub nt: usize,
    pub nr: usize,
    pub nt_rf: usize,
    pub ns: usize,
    pub net: Mlp,
}

impl SavedModel {
    pub fn codec(&self) -> Result<OutputCodec, ModelError> {
        Ok(OutputCodec::new(self.nt, self.nt_rf, self.ns)?)
    }
}

fn activation_token(a: Activation) -> String {
    match a {
        Activation::Relu => "relu".into(),
        Activation::Linear => "linear".into(),
        Activation::Clamp { upper } => format!("clamp:{upper:?}"),
    }
}

fn floats(values: &[f64]) -> String {
    let mut s = String::with_capacity(values.len() * 20);
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        let _ = write!(s, "{v:?}");
    }
    s
}

pub fn to_text(model: &SavedModel) -> String {
    let net = &model.net;
    let mut out = String::new();
    let _ = writeln!(out, "format_version = {FORMAT_VERSION}");
    let _ = writeln!(out, "nt = {}", model.nt);
    let _ = writeln!(out, "nr = {}", model.nr);
    let _ = writeln!(out, "nt_rf = {}", model.nt_rf);
    let _ = writeln!(out, "ns = {}", model.ns);
    let _ = writeln!(out, "input_dim = {}", net.input_dim());
    let _ = writeln!(out, "layers = {}", net.layers().len());
    for layer in net.layers() {
        let spec = layer.spec;
        let _ = writeln!(
            out,
            "layer = {} {} {:?}",
            spec.width,
            activation_token(spec.activation),
            spec.noise_sigma
        );
        let _ = writeln!(out, "weights = {}", floats(&layer.weights));
        let _ = writeln!(out, "biases = {}", floats(&layer.biases));
    }
    out
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn err(&self, message: impl Into<String>) -> ModelError {
        ModelError::Format {
            line: self.line,
            message: message.into(),
        }
    }

    fn field(&mut self, key: &str) -> Result<&'a str, ModelError> {
        let (idx, raw) = self
            .inner
            .next()
            .ok_or_else(|| self.err(format!("missing `{key}`")))?;
        self.line = idx + 1;
        match raw.split_once('=') {
            Some((k, v)) if k.trim() == key => Ok(v.trim()),
            _ => Err(self.err(format!("expected `{key} = ...`"))),
        }
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str) -> Result<T, ModelError> {
        let v = self.field(key)?;
        v.parse()
            .map_err(|_| self.err(format!("bad `{key}` value `{v}`")))
    }

    fn floats(&mut self, key: &str, expected: usize) -> Result<Vec<f64>, ModelError> {
        let v = self.field(key)?;
        let values = v
            .split_ascii_whitespace()
            .map(str::parse::<f64>)
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| self.err(format!("bad float in `{key}`: {e}")))?;
        if values.len() != expected {
            return Err(self.err(format!(
                "`{key}` has {} values, expected {expected}",
                values.len()
            )));
        }
        Ok(values)
    }
}

fn parse_activation(token: &str) -> Option<Activation> {
    match token {
        "relu" => Some(Activation::Relu),
        "linear" => Some(Activation::Linear),
        _ => token
            .strip_prefix("clamp:")
            .and_then(|u| u.parse().ok())
            .map(|upper| Activation::Clamp { upper }),
    }
}

pub fn from_text(text: &str) -> Result<SavedModel, ModelError> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        line: 0,
    };
    let version: u32 = lines.parse("format_version")?;
    if version != FORMAT_VERSION {
        return Err(ModelError::Version(version));
    }
    let nt = lines.parse("nt")?;
    let nr = lines.parse("nr")?;
    let nt_rf = lines.parse("nt_rf")?;
    let ns = lines.parse("ns")?;
    let input_dim: usize = lines.parse("input_dim")?;
    let count: usize = lines.parse("layers")?;
    let mut specs = Vec::with_capacity(count);
    let mut weights = Vec::with_capacity(count);
    let mut biases = Vec::with_capacity(count);
    let mut fan_in = input_dim;
    for _ in 0..count {
        let desc = lines.field("layer")?;
        let parts: Vec<&str> = desc.split_ascii_whitespace().collect();
        let spec = match parts.as_slice() {
            [w, a, s] => {
                let width = w
                    .parse()
                    .map_err(|_| lines.err(format!("bad width `{w}`")))?;
                let activation = parse_activation(a)
                    .ok_or_else(|| lines.err(format!("unknown activation `{a}`")))?;
                let noise_sigma = s
                    .parse()
                    .map_err(|_| lines.err(format!("bad noise sigma `{s}`")))?;
                LayerSpec {
                    width,
                    activation,
                    noise_sigma,
                }
            }
            _ => return Err(lines.err("expected `layer = <width> <activation> <noise_sigma>`")),
        };
        weights.push(lines.floats("weights", spec.width * fan_in)?);
        biases.push(lines.floats("biases", spec.width)?);
        fan_in = spec.width;
        specs.push(spec);
    }
    let net = Mlp::from_parameters(input_dim, &specs, weights, biases)?;
    let model = SavedModel {
        nt,
        nr,
        nt_rf,
        ns,
        net,
    };
    let codec = model.codec()?;
    if codec.output_dim() != model.net.output_dim() || input_dim != 2 * nt * nr {
        return Err(ModelError::Format {
            line: 0,
            message: format!(
                "network {}->{} does not fit nt={nt}, nr={nr}, nt_rf={nt_rf}, ns={ns}",
                input_dim,
                model.net.output_dim()
            ),
        });
    }
    Ok(model)
}

pub fn save(model: &SavedModel, path: &Path) -> Result<(), ModelError> {
    std::fs::write(path, to_text(model)).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load(path: &Path) -> Result<SavedModel, ModelError> {
    let text = std::fs::read_to_string(path).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    from_text(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use hybridprec_core::dnn::default_architecture;
    use hybridprec_core::rng::{domain, stream};

    fn model() -> SavedModel {
        let codec = OutputCodec::new(8, 4, 2).unwrap();
        let specs = default_architecture(codec.output_dim(), 2, 0.1);
        let net = Mlp::new(2 * 8 * 2, &specs, &mut stream(3, domain::INIT, 0)).unwrap();
        SavedModel {
            nt: 8,
            nr: 2,
            nt_rf: 4,
            ns: 2,
            net,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = model();
        let back = from_text(&to_text(&m)).unwrap();
        assert_eq!(back, m);
        for (a, b) in back.net.layers().iter().zip(m.net.layers()) {
            assert!(a
                .weights
                .iter()
                .zip(&b.weights)
                .all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn rejects_other_versions_and_truncation() {
        let text = to_text(&model());
        let bumped = text.replacen("format_version = 1", "format_version = 2", 1);
        assert!(matches!(from_text(&bumped), Err(ModelError::Version(2))));
        let cut: String = text.lines().take(9).map(|l| format!("{l}\n")).collect();
        assert!(matches!(from_text(&cut), Err(ModelError::Format { .. })));
    }

    #[test]
    fn rejects_mismatched_dimensions() {
        let text = to_text(&model()).replacen("nt_rf = 4", "nt_rf = 3", 1);
        assert!(from_text(&text).is_err());
    }
}
