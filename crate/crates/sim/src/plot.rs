//! Standalone matplotlib scripts for result CSVs.
//!
//! The generated script only reads columns present in the CSV header; the
//! layout is picked from that header.

use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum PlotError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: empty file or missing header")]
    NoHeader { path: PathBuf },
    #[error("{path}: no plot layout for columns [{columns}]")]
    UnknownLayout { path: PathBuf, columns: String },
}

/// How a CSV maps onto axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub x: &'static str,
    pub y: &'static str,
    /// Column that splits rows into one line per value.
    pub series: Option<&'static str>,
    pub log_y: bool,
    pub x_label: &'static str,
    pub y_label: &'static str,
}

const LAYOUTS: [Layout; 5] = [
    Layout {
        x: "snr_db",
        y: "ber",
        series: Some("scheme"),
        log_y: true,
        x_label: "SNR (dB)",
        y_label: "BER",
    },
    Layout {
        x: "snr_db",
        y: "bits_per_s_hz",
        series: Some("scheme"),
        log_y: false,
        x_label: "SNR (dB)",
        y_label: "Spectral efficiency (bits/s/Hz)",
    },
    Layout {
        x: "iteration",
        y: "mse",
        series: Some("scheme"),
        log_y: true,
        x_label: "Iteration",
        y_label: "MSE",
    },
    Layout {
        x: "epoch",
        y: "train_loss",
        series: None,
        log_y: true,
        x_label: "Epoch",
        y_label: "Training loss",
    },
    Layout {
        x: "nt",
        y: "median_seconds",
        series: None,
        log_y: true,
        x_label: "Nt",
        y_label: "Median factorization time (s)",
    },
];

fn header_of(path: &Path) -> Result<Vec<String>, PlotError> {
    let text = std::fs::read_to_string(path).map_err(|source| PlotError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let first = text.lines().next().filter(|l| !l.trim().is_empty());
    let first = first.ok_or_else(|| PlotError::NoHeader {
        path: path.to_path_buf(),
    })?;
    Ok(first.split(',').map(|c| c.trim().to_string()).collect())
}

pub fn layout_for(columns: &[String]) -> Option<Layout> {
    let has = |c: &str| columns.iter().any(|x| x == c);
    LAYOUTS
        .into_iter()
        .find(|l| has(l.x) && has(l.y) && l.series.is_none_or(has))
}

/// Script text plotting `csv_path`; the figure is saved next to it as PNG.
pub fn plot_script(csv_path: &Path) -> Result<String, PlotError> {
    let columns = header_of(csv_path)?;
    let layout = layout_for(&columns).ok_or_else(|| PlotError::UnknownLayout {
        path: csv_path.to_path_buf(),
        columns: columns.join(", "),
    })?;
    let csv = csv_path
        .display()
        .to_string()
        .replace('\\', "\\\\")
        .replace('"', "\\\"");
    let png = csv_path
        .with_extension("png")
        .display()
        .to_string()
        .replace('\\', "\\\\")
        .replace('"', "\\\"");
    let mut s = String::new();
    s.push_str("#!/usr/bin/env python3\n");
    s.push_str("import csv\nfrom collections import OrderedDict\n\n");
    s.push_str("import matplotlib\nmatplotlib.use(\"Agg\")\nimport matplotlib.pyplot as plt\n\n");
    s.push_str(&format!("CSV = \"{csv}\"\nPNG = \"{png}\"\n\n"));
    s.push_str("series = OrderedDict()\n");
    s.push_str("with open(CSV, newline=\"\") as f:\n");
    s.push_str("    for row in csv.DictReader(f):\n");
    match layout.series {
        Some(col) => s.push_str(&format!("        key = row[\"{col}\"]\n")),
        None => s.push_str("        key = None\n"),
    }
    s.push_str(&format!(
        "        xs, ys = series.setdefault(key, ([], []))\n        xs.append(float(row[\"{}\"]))\n        ys.append(float(row[\"{}\"]))\n\n",
        layout.x, layout.y
    ));
    s.push_str("fig, ax = plt.subplots()\n");
    s.push_str("for key, (xs, ys) in series.items():\n");
    s.push_str("    ax.plot(xs, ys, marker=\"o\", label=key)\n");
    if layout.log_y {
        s.push_str("ax.set_yscale(\"log\")\n");
    } else {
        s.push_str("ax.set_yscale(\"linear\")\n");
    }
    s.push_str(&format!(
        "ax.set_xlabel(\"{}\")\nax.set_ylabel(\"{}\")\n",
        layout.x_label, layout.y_label
    ));
    if layout.series.is_some() {
        s.push_str("ax.legend()\n");
    }
    s.push_str("ax.grid(True, which=\"both\", alpha=0.3)\n");
    s.push_str("fig.savefig(PNG, dpi=150, bbox_inches=\"tight\")\n");
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    /// `row["col"]` references in a script.
    fn referenced_columns(script: &str) -> Vec<String> {
        script
            .split("row[\"")
            .skip(1)
            .map(|rest| rest.split('"').next().unwrap().to_string())
            .collect()
    }

    #[test]
    fn ber_script_uses_log_axis() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "ber.csv",
            "snr_db,scheme,ber,ci_halfwidth,trials\n0.0,sgd_hybrid,0.1,0.01,10\n",
        );
        let s = plot_script(&p).unwrap();
        assert!(s.contains("set_yscale(\"log\")"));
    }

    #[test]
    fn se_script_uses_linear_axis() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "se.csv",
            "snr_db,scheme,bits_per_s_hz\n0.0,sgd_hybrid,3.2\n",
        );
        let s = plot_script(&p).unwrap();
        assert!(s.contains("set_yscale(\"linear\")"));
        assert!(!s.contains("\"log\""));
    }

    #[test]
    fn script_only_references_header_columns() {
        let dir = tempfile::tempdir().unwrap();
        for (name, header) in [
            ("ber.csv", "snr_db,scheme,ber,ci_halfwidth,trials"),
            ("se.csv", "snr_db,scheme,bits_per_s_hz"),
            ("mse.csv", "iteration,scheme,mse"),
            ("train.csv", "epoch,train_loss"),
            ("complexity.csv", "nt,median_seconds,repeats"),
        ] {
            let p = write(dir.path(), name, &format!("{header}\n"));
            let s = plot_script(&p).unwrap();
            let cols: Vec<&str> = header.split(',').collect();
            let refs = referenced_columns(&s);
            assert!(!refs.is_empty());
            for r in refs {
                assert!(cols.contains(&r.as_str()), "{name}: {r}");
            }
        }
    }

    #[test]
    fn missing_or_unknown_csv_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            plot_script(&dir.path().join("nope.csv")),
            Err(PlotError::Io { .. })
        ));
        let p = write(dir.path(), "odd.csv", "a,b\n1,2\n");
        assert!(matches!(
            plot_script(&p),
            Err(PlotError::UnknownLayout { .. })
        ));
        let p = write(dir.path(), "empty.csv", "");
        assert!(matches!(plot_script(&p), Err(PlotError::NoHeader { .. })));
    }
}
