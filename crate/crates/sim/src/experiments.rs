//! Experiment runners behind the CLI subcommands.
//!
//! Each run writes its CSV (and model, for `train`) into the output
//! directory, then `manifest.json`. Trials run on a rayon pool but results
//! are gathered in trial order, so CSVs do not depend on the thread count.
//! If anything fails, files written so far are removed.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use hybridprec_core::decomp::{gmd, gmd_residuals};
use hybridprec_core::dnn::{
    build_dataset, default_architecture, evaluate_loss, train, EnsembleConfig, Mlp, OutputCodec,
    Split,
};
use hybridprec_core::precoder::{run_factorizer, FactorizeConfig, HybridFactorizer};
use hybridprec_core::rng::{complex_normal, domain, stream};
use hybridprec_core::simulate::{
    mean_trace, mse_trace, summarize_ber, summarize_se, MseMethod, SchemeId, Simulator,
};
use hybridprec_core::CMatrix;

use crate::config::{ConfigError, ExperimentConfig, Kind};
use crate::model_io::{self, ModelError, SavedModel};
use crate::output::{fmt_f64, write_json_atomic, OutputError, RunManifest, Stage, Table};

pub const MANIFEST_NAME: &str = "manifest.json";
pub const MODEL_NAME: &str = "model.txt";

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] hybridprec_core::Error),
    #[error(transparent)]
    Output(#[from] OutputError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("cannot create {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("thread pool: {0}")]
    Threads(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub outputs: Vec<PathBuf>,
    pub summary: Vec<String>,
    pub manifest: PathBuf,
}

struct Run<'a> {
    cfg: &'a ExperimentConfig,
    out_dir: &'a Path,
    written: Vec<PathBuf>,
    stages: Vec<Stage>,
    summary: Vec<String>,
}

impl Run<'_> {
    fn stage<T>(
        &mut self,
        name: &str,
        f: impl FnOnce(&mut Self) -> Result<T, RunError>,
    ) -> Result<T, RunError> {
        let t = Instant::now();
        let r = f(self)?;
        self.stages.push(Stage {
            name: name.to_string(),
            seconds: t.elapsed().as_secs_f64(),
        });
        Ok(r)
    }

    fn write_table(&mut self, name: &str, table: &Table) -> Result<(), RunError> {
        let path = self.out_dir.join(name);
        self.written.push(path.clone());
        table.write(&path)?;
        Ok(())
    }
}

/// Runs `kind` with `cfg`, writing into `out_dir`.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    kind: Kind,
    out_dir: &Path,
) -> Result<RunReport, RunError> {
    if let Some(k) = cfg.kind {
        if k != kind {
            return Err(ConfigError::Invalid(format!("config is for `{k}`, not `{kind}`")).into());
        }
    }
    cfg.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|source| RunError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| RunError::Threads(e.to_string()))?;

    let mut run = Run {
        cfg,
        out_dir,
        written: Vec::new(),
        stages: Vec::new(),
        summary: Vec::new(),
    };
    let result = pool.install(|| dispatch(&mut run, kind)).and_then(|()| {
        let manifest = out_dir.join(MANIFEST_NAME);
        let m = manifest_for(&run, kind);
        write_json_atomic(&m, &manifest)?;
        Ok(manifest)
    });
    match result {
        Ok(manifest) => Ok(RunReport {
            outputs: run.written,
            summary: run.summary,
            manifest,
        }),
        Err(e) => {
            for p in &run.written {
                let _ = std::fs::remove_file(p);
            }
            Err(e)
        }
    }
}

fn manifest_for(run: &Run<'_>, kind: Kind) -> RunManifest {
    let resolved = ExperimentConfig {
        kind: Some(kind),
        ..run.cfg.clone()
    };
    RunManifest {
        kind: kind.to_string(),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        config: resolved
            .entries()
            .into_iter()
            .map(|(k, v)| (k.to_string(), serde_json::Value::String(v)))
            .collect(),
        stages: run.stages.clone(),
        outputs: run
            .written
            .iter()
            .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
            .collect(),
        summary: run.summary.clone(),
    }
}

fn dispatch(run: &mut Run<'_>, kind: Kind) -> Result<(), RunError> {
    match kind {
        Kind::GmdCheck => gmd_check(run),
        Kind::Ber => ber(run),
        Kind::Se => se(run),
        Kind::Mse => mse(run),
        Kind::Train => train_network(run),
        Kind::ComplexityBench => complexity_bench(run),
    }
}

/// Random `nr x nt` matrix with CN(0, 1) entries for GMD checks.
pub fn gaussian_matrix(seed: u64, index: u64, rows: usize, cols: usize) -> CMatrix {
    let mut rng = stream(seed, domain::CHANNEL, index);
    CMatrix::from_fn(rows, cols, |_, _| complex_normal(&mut rng, 1.0))
}

fn gmd_check(run: &mut Run<'_>) -> Result<(), RunError> {
    let cfg = run.cfg;
    let rows = run.stage("decompose", |_| {
        (0..cfg.trials)
            .into_par_iter()
            .map(|i| {
                let m = gaussian_matrix(cfg.seed, i, cfg.nr, cfg.nt);
                let g = gmd(&m, cfg.ns)?;
                Ok(gmd_residuals(&m, &g)?)
            })
            .collect::<Result<Vec<_>, RunError>>()
    })?;
    let mut table = Table::new(&[
        "index",
        "semi_unitarity",
        "diag_deviation",
        "lower_triangle",
        "reconstruction",
    ]);
    for (i, r) in rows.iter().enumerate() {
        table.push(vec![
            i.to_string(),
            fmt_f64(r.semi_unitarity),
            fmt_f64(r.diag_deviation),
            fmt_f64(r.lower_triangle),
            fmt_f64(r.reconstruction),
        ]);
    }
    run.write_table("gmd_check.csv", &table)?;
    let max = |f: fn(&hybridprec_core::decomp::GmdResiduals) -> f64| {
        rows.iter().map(f).fold(0.0, f64::max)
    };
    run.summary
        .push(format!("max_diag_dev={:e}", max(|r| r.diag_deviation)));
    run.summary.push(format!(
        "max_semi_unitarity={:e}",
        max(|r| r.semi_unitarity)
    ));
    run.summary.push(format!(
        "max_reconstruction={:e}",
        max(|r| r.reconstruction)
    ));
    Ok(())
}

fn load_network(cfg: &ExperimentConfig) -> Result<Option<SavedModel>, RunError> {
    if !cfg.schemes.contains(&SchemeId::DnnHybrid) {
        return Ok(None);
    }
    let path = cfg.model_path.as_ref().ok_or_else(|| {
        ConfigError::Invalid(
            "scheme dnn_hybrid needs `model_path` (see the `train` subcommand)".into(),
        )
    })?;
    let model = model_io::load(path)?;
    if (model.nt, model.nr, model.nt_rf, model.ns) != (cfg.nt, cfg.nr, cfg.nt_rf, cfg.ns) {
        return Err(ConfigError::Invalid(format!(
            "model was trained for nt={}, nr={}, nt_rf={}, ns={}",
            model.nt, model.nr, model.nt_rf, model.ns
        ))
        .into());
    }
    Ok(Some(model))
}

fn simulator<'a>(
    cfg: &ExperimentConfig,
    model: &'a Option<SavedModel>,
) -> Result<Simulator<'a>, RunError> {
    let sim = Simulator::new(cfg.link())?;
    Ok(match model {
        Some(m) => sim.with_network(&m.net, m.codec()?),
        None => sim,
    })
}

fn ber(run: &mut Run<'_>) -> Result<(), RunError> {
    let cfg = run.cfg;
    let model = run.stage("load", |_| load_network(cfg))?;
    let sim = simulator(cfg, &model)?;
    let grid = &cfg.snr_grid_db;
    let mut table = Table::new(&["snr_db", "scheme", "ber", "ci_halfwidth", "trials"]);
    for &scheme in &cfg.schemes {
        let per_trial = run.stage(scheme.as_str(), |_| {
            (0..cfg.trials)
                .into_par_iter()
                .map(|t| Ok(sim.ber_trial(scheme, grid, cfg.seed, t)?))
                .collect::<Result<Vec<_>, RunError>>()
        })?;
        let mut errors = vec![0u64; grid.len()];
        for trial in &per_trial {
            for (acc, &e) in errors.iter_mut().zip(trial) {
                *acc += u64::from(e);
            }
        }
        for p in summarize_ber(grid, &errors, cfg.trials, 2 * cfg.ns as u64) {
            table.push(vec![
                fmt_f64(p.snr_db),
                scheme.to_string(),
                fmt_f64(p.ber),
                fmt_f64(p.ci_halfwidth),
                p.trials.to_string(),
            ]);
        }
    }
    run.write_table("ber.csv", &table)?;
    run.summary.push(format!("rows={}", table.rows.len()));
    Ok(())
}

fn se(run: &mut Run<'_>) -> Result<(), RunError> {
    let cfg = run.cfg;
    let model = run.stage("load", |_| load_network(cfg))?;
    let sim = simulator(cfg, &model)?;
    let grid = &cfg.snr_grid_db;
    let mut table = Table::new(&["snr_db", "scheme", "bits_per_s_hz"]);
    for &scheme in &cfg.schemes {
        let per_trial = run.stage(scheme.as_str(), |_| {
            (0..cfg.trials)
                .into_par_iter()
                .map(|t| Ok(sim.se_trial(scheme, grid, cfg.seed, t)?))
                .collect::<Result<Vec<_>, RunError>>()
        })?;
        for p in summarize_se(grid, &per_trial) {
            table.push(vec![
                fmt_f64(p.snr_db),
                scheme.to_string(),
                fmt_f64(p.bits_per_s_hz),
            ]);
        }
    }
    run.write_table("se.csv", &table)?;
    run.summary.push(format!("rows={}", table.rows.len()));
    Ok(())
}

fn mse(run: &mut Run<'_>) -> Result<(), RunError> {
    let cfg = run.cfg;
    let sim = Simulator::new(cfg.link())?;
    let targets = run.stage("channels", |_| {
        (0..cfg.trials)
            .into_par_iter()
            .map(|t| Ok(sim.draw_channel(cfg.seed, t)?.1.precoder))
            .collect::<Result<Vec<_>, RunError>>()
    })?;
    let fcfg = cfg.factorize();
    let mut table = Table::new(&["iteration", "scheme", "mse"]);
    for method in [MseMethod::SgdHybrid, MseMethod::AnalogOnly] {
        let traces = run.stage(method.as_str(), |_| {
            targets
                .par_iter()
                .enumerate()
                .map(|(c, t)| {
                    Ok(mse_trace(
                        method,
                        t,
                        cfg.nt_rf,
                        &fcfg,
                        cfg.max_iters,
                        c as u64,
                    )?)
                })
                .collect::<Result<Vec<_>, RunError>>()
        })?;
        let curve = mean_trace(&traces)?;
        for (i, v) in curve.iter().enumerate() {
            table.push(vec![
                i.to_string(),
                method.as_str().to_string(),
                fmt_f64(*v),
            ]);
        }
        run.summary.push(format!(
            "{}_final_mse={:e}",
            method.as_str(),
            curve[curve.len() - 1]
        ));
    }
    run.write_table("mse.csv", &table)?;
    Ok(())
}

fn train_network(run: &mut Run<'_>) -> Result<(), RunError> {
    let cfg = run.cfg;
    let ens = EnsembleConfig {
        nt: cfg.nt,
        nr: cfg.nr,
        ns: cfg.ns,
        p_nlos: cfg.p_nlos,
        spacing_ratio: cfg.spacing_ratio,
    };
    let codec = OutputCodec::new(cfg.nt, cfg.nt_rf, cfg.ns)?;
    let data = run.stage("dataset", |_| {
        Ok(build_dataset(
            &ens,
            cfg.dataset_size,
            &mut stream(cfg.seed, domain::DATASET, 0),
        )?
        .with_test_fraction(cfg.test_fraction))
    })?;
    let specs = default_architecture(codec.output_dim(), cfg.ns, cfg.noise_sigma);
    let mut net = Mlp::new(
        2 * cfg.nt * cfg.nr,
        &specs,
        &mut stream(cfg.seed, domain::INIT, 0),
    )?;
    let outcome = run.stage("train", |_| {
        Ok(train(&mut net, &data, &codec, &cfg.factorize())?)
    })?;

    let mut table = Table::new(&["epoch", "train_loss"]);
    for (e, loss) in outcome.history.iter().enumerate() {
        table.push(vec![e.to_string(), fmt_f64(*loss)]);
    }
    run.write_table("train.csv", &table)?;

    let model_path = run.out_dir.join(MODEL_NAME);
    run.written.push(model_path.clone());
    let model = SavedModel {
        nt: cfg.nt,
        nr: cfg.nr,
        nt_rf: cfg.nt_rf,
        ns: cfg.ns,
        net,
    };
    model_io::save(&model, &model_path)?;

    run.summary
        .push(format!("iterations={}", outcome.iterations));
    run.summary.push(format!("converged={}", outcome.converged));
    if let Some(last) = outcome.history.last() {
        run.summary.push(format!("final_train_loss={last:e}"));
    }
    if data.split(Split::Test).next().is_some() {
        let test = evaluate_loss(&model.net, &codec, data.split(Split::Test))?;
        run.summary.push(format!("test_loss={test:e}"));
    }
    Ok(())
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median wall-clock of `max_iters` factorization steps per array size.
/// Timing runs are sequential; the CSV is not reproducible byte for byte.
fn complexity_bench(run: &mut Run<'_>) -> Result<(), RunError> {
    let cfg = run.cfg;
    // fixed work per run: never stop early
    let fcfg = FactorizeConfig {
        tolerance: 0.0,
        ..cfg.factorize()
    };
    let mut table = Table::new(&["nt", "median_seconds", "repeats"]);
    let mut medians = Vec::new();
    for &nt in &cfg.nt_sweep {
        let link = hybridprec_core::simulate::LinkConfig { nt, ..cfg.link() };
        let sim = Simulator::new(link)?;
        let mut times = run.stage(&format!("nt={nt}"), |_| {
            (0..cfg.trials)
                .map(|t| {
                    let (_, g) = sim.draw_channel(cfg.seed, t)?;
                    let mut rng = stream(cfg.seed, domain::FACTORIZE, t);
                    let mut f = HybridFactorizer::new(&g.precoder, cfg.nt_rf, &fcfg, &mut rng)?;
                    let start = Instant::now();
                    let out = run_factorizer(&mut f, &fcfg);
                    let secs = start.elapsed().as_secs_f64();
                    std::hint::black_box(out);
                    Ok(secs)
                })
                .collect::<Result<Vec<_>, RunError>>()
        })?;
        let m = median(&mut times);
        medians.push((nt, m));
        table.push(vec![nt.to_string(), fmt_f64(m), cfg.trials.to_string()]);
    }
    run.write_table("complexity.csv", &table)?;
    if let (Some(&(n0, t0)), Some(&(n1, t1))) = (medians.first(), medians.last()) {
        run.summary
            .push(format!("time_ratio={:.3} (nt {n1} vs {n0})", t1 / t0));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn mismatched_kind_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig {
            kind: Some(Kind::Se),
            ..Default::default()
        };
        assert!(matches!(
            run_experiment(&cfg, Kind::Ber, dir.path()),
            Err(RunError::Config(ConfigError::Invalid(_)))
        ));
    }
}
