use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::analyze::SweepPoint;
use super::config::PlotKind;
use super::run::{ExperimentReport, Variant};
use crate::error::{Error, Result};
use crate::nn::container;
use crate::rmt::{bema_lambda_plus, esd, Spectrum};

/// A plot-ready table: one x column followed by series columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    /// Free-form description stored in the sidecar.
    pub meta: serde_json::Value,
}

impl Table {
    pub fn to_csv(&self) -> String {
        let mut s = self.columns.join(",");
        s.push('\n');
        for r in &self.rows {
            let cells: Vec<String> = r.iter().map(|v| v.to_string()).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        s
    }
}

/// Mean and variance of test accuracy (test loss for regression) per epoch.
pub fn accuracy_vs_epoch(report: &ExperimentReport) -> Result<Table> {
    let use_acc = report.aggregates.iter().all(|a| a.mean_test_acc.is_some());
    let stat = |v: Variant, e: usize| -> Option<(f64, f64)> {
        let a = report.aggregates.iter().find(|a| a.variant == v && a.epoch == e)?;
        Some(if use_acc {
            (a.mean_test_acc?, a.var_test_acc?)
        } else {
            (a.mean_test_loss, a.var_test_loss)
        })
    };
    let mut epochs: Vec<usize> = report.aggregates.iter().map(|a| a.epoch).collect();
    epochs.sort_unstable();
    epochs.dedup();
    let rows = epochs
        .into_iter()
        .map(|e| {
            let (mn, vn) = stat(Variant::Normal, e).unwrap_or((f64::NAN, f64::NAN));
            let (mp, vp) = stat(Variant::Pruned, e).unwrap_or((f64::NAN, f64::NAN));
            vec![e as f64, mn, vn, mp, vp]
        })
        .collect();
    Ok(Table {
        columns: ["epoch", "mean_normal", "var_normal", "mean_pruned", "var_pruned"]
            .map(String::from)
            .to_vec(),
        rows,
        meta: json!({
            "metric": if use_acc { "test_accuracy" } else { "test_loss" },
            "seeds": report.seeds,
            "topology": report.topology,
            "variance": "unbiased sample variance across seeds",
        }),
    })
}

/// Sweep points sorted by nonzero parameter count, ascending.
pub fn acc_vs_params(points: &[SweepPoint]) -> Table {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.nonzero.cmp(&b.nonzero).then(b.xi.total_cmp(&a.xi)));
    Table {
        columns: ["params", "accuracy", "kept_fraction", "xi"].map(String::from).to_vec(),
        rows: pts
            .iter()
            .map(|p| vec![p.nonzero as f64, p.accuracy.unwrap_or(f64::NAN), p.kept_fraction, p.xi])
            .collect(),
        meta: json!({ "points": pts.len() }),
    }
}

/// Density histogram of the spectrum over `[0, max]`; the densities times the
/// bin widths sum to one. Adds the fitted MP density at bin centres when a
/// bulk fit exists.
pub fn esd_histogram(spectrum: &Spectrum, bins: usize) -> Result<Table> {
    if bins == 0 {
        return Err(Error::Parameter("a histogram needs at least one bin".into()));
    }
    let hi = spectrum.max();
    let width = if hi > 0.0 { hi / bins as f64 } else { 1.0 };
    let mut counts = vec![0usize; bins];
    for &v in spectrum.values() {
        let b = ((v / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let m = spectrum.len() as f64;
    let law = bema_lambda_plus(spectrum, 0.1, 0.1)
        .ok()
        .and_then(|b| b.law().ok().map(|l| (b, l)));
    let mut columns = ["bin_left", "bin_right", "density"].map(String::from).to_vec();
    if law.is_some() {
        columns.push("mp_density".into());
    }
    let rows = counts
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let left = i as f64 * width;
            let mut row = vec![left, left + width, c as f64 / (m * width)];
            if let Some((_, l)) = &law {
                row.push(l.pdf(left + width / 2.0));
            }
            row
        })
        .collect();
    Ok(Table {
        columns,
        rows,
        meta: json!({
            "values": spectrum.len(),
            "aspect": spectrum.aspect(),
            "lambda_plus": law.as_ref().map(|(b, _)| b.lambda_plus),
            "sigma_hat_sq": law.as_ref().map(|(b, _)| b.sigma_hat_sq),
        }),
    })
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

/// Build the table of `kind` from `input` and write `<kind>.csv` plus the
/// sidecar `<kind>.json` into `out`. Returns the two paths.
///
/// `input` is an experiment `report.json` for `accuracy_vs_epoch`, a sweep
/// `sweep.json` for `acc_vs_params`, and a weight container directory (slot
/// `layer`) or spectrum CSV for `esd_histogram`.
pub fn emit_plot_data(
    kind: PlotKind,
    input: &Path,
    layer: usize,
    bins: usize,
    out: &Path,
) -> Result<(PathBuf, PathBuf)> {
    let (name, table) = match kind {
        PlotKind::AccuracyVsEpoch => (
            "accuracy_vs_epoch",
            accuracy_vs_epoch(&ExperimentReport::read_json(input)?)?,
        ),
        PlotKind::AccVsParams => ("acc_vs_params", acc_vs_params(&read_json::<Vec<SweepPoint>>(input)?)),
        PlotKind::EsdHistogram => {
            let spectrum = if input.is_dir() {
                let net = container::load::<f64>(input)?;
                let slot = net.slots.get(layer).ok_or_else(|| {
                    Error::Config(format!(
                        "layer {layer} does not exist; the container has {} slots",
                        net.depth()
                    ))
                })?;
                esd(slot.dense_weight().view())?
            } else {
                Spectrum::read_csv(input)?
            };
            ("esd_histogram", esd_histogram(&spectrum, bins)?)
        }
    };
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let csv = out.join(format!("{name}.csv"));
    let side = out.join(format!("{name}.json"));
    fs::write(&csv, table.to_csv()).map_err(|e| Error::io(&csv, e))?;
    let meta = json!({
        "kind": name,
        "source": input.display().to_string(),
        "columns": table.columns,
        "rows": table.rows.len(),
        "meta": table.meta,
    });
    fs::write(&side, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&side, e))?;
    Ok((csv, side))
}
