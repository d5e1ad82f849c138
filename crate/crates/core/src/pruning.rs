//! Epoch-scheduled pruning of dense layers at the Marchenko-Pastur edge.
//!
//! Every `split_frequency` epochs each unsplit layer whose spectrum passes
//! the MP goodness-of-fit test loses the singular values below `sqrt(lambda_+)`
//! (except a retained fraction `f(epoch)`) and is stored as two factors when
//! that is cheaper. Split layers are recombined when a fresh truncation of the
//! product would save parameters.

use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{DenseNet, LayerSlot};
use crate::rmt::{mp_fit_test, GofResult, Spectrum};
use crate::scalar::Scalar;
use crate::spectral::{self, SvdFactors};

/// `f(epoch) = max(0, slope * epoch + intercept)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Retention {
    pub slope: f64,
    pub intercept: f64,
}

impl Default for Retention {
    fn default() -> Self {
        Retention {
            slope: -1.0 / 30.0,
            intercept: 1.0,
        }
    }
}

/// Sparsification threshold growing linearly from `xi_start` at epoch 0 to
/// `xi_end` at the final epoch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SparsifySchedule {
    pub xi_start: f64,
    pub xi_end: f64,
}

impl SparsifySchedule {
    pub fn xi_at(&self, epoch: usize, total_epochs: usize) -> f64 {
        if total_epochs == 0 {
            return self.xi_end;
        }
        let t = (epoch as f64 / total_epochs as f64).min(1.0);
        self.xi_start + (self.xi_end - self.xi_start) * t
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PruneSchedule {
    /// Epochs `l` between passes.
    pub split_frequency: usize,
    /// GoF threshold for dense layers.
    pub tau_fc: f64,
    /// GoF threshold for flattened convolution kernels.
    pub tau_conv: f64,
    #[serde(default)]
    pub retention: Retention,
    pub alpha: f64,
    pub beta: f64,
    #[serde(default)]
    pub sparsify: Option<SparsifySchedule>,
}

impl Default for PruneSchedule {
    fn default() -> Self {
        PruneSchedule {
            split_frequency: 7,
            tau_fc: 0.7,
            tau_conv: 0.05,
            retention: Retention::default(),
            alpha: 0.1,
            beta: 0.1,
            sparsify: None,
        }
    }
}

impl PruneSchedule {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.split_frequency == 0 {
            return bad("split_frequency must be >= 1".into());
        }
        for (name, tau) in [("tau_fc", self.tau_fc), ("tau_conv", self.tau_conv)] {
            if !(tau > 0.0 && tau <= 1.0) {
                return bad(format!("{name} must lie in (0, 1], got {tau}"));
            }
        }
        let r = self.retention;
        if !(r.slope <= 0.0 && (0.0..=1.0).contains(&r.intercept)) {
            return bad(format!(
                "retention needs slope <= 0 and intercept in [0, 1] so that f stays in [0, 1], got {r:?}"
            ));
        }
        if !(self.alpha > 0.0 && self.alpha < 0.5) {
            return bad(format!("alpha must lie in (0, 1/2), got {}", self.alpha));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return bad(format!("beta must lie in (0, 1), got {}", self.beta));
        }
        if let Some(s) = self.sparsify {
            if !(s.xi_start >= 0.0 && s.xi_end >= s.xi_start) {
                return bad(format!(
                    "sparsify schedule must satisfy 0 <= xi_start <= xi_end, got {s:?}"
                ));
            }
        }
        Ok(())
    }

    /// Whether a pass runs after training epoch `epoch` (1-based count of completed epochs).
    pub fn is_pass_epoch(&self, epoch: usize) -> bool {
        epoch > 0 && epoch % self.split_frequency == 0
    }
}

/// Retained fraction of below-threshold singular values, clamped to `[0, 1]`.
pub fn keep_fraction(epoch: usize, schedule: &PruneSchedule) -> f64 {
    let r = schedule.retention;
    (r.slope * epoch as f64 + r.intercept).clamp(0.0, 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneAction {
    Split,
    TruncateInPlace,
    Recombine,
    SkippedGof,
    SkippedParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneEvent {
    pub epoch: usize,
    /// 0-based slot index.
    pub layer: usize,
    pub action: PruneAction,
    pub gof_statistic: Option<f64>,
    pub lambda_plus: Option<f64>,
    pub kept_above: usize,
    pub kept_below: usize,
    pub removed: usize,
    pub keep_fraction: f64,
    pub params_before: usize,
    pub params_after: usize,
    pub params_delta: i64,
    /// Why an analysis was abandoned, when it was.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl PruneEvent {
    /// True when the slot's weights were replaced.
    pub fn changed(&self) -> bool {
        matches!(
            self.action,
            PruneAction::Split | PruneAction::TruncateInPlace | PruneAction::Recombine
        )
    }

    fn skipped(epoch: usize, layer: usize, action: PruneAction, slot_params: usize, f: f64) -> Self {
        PruneEvent {
            epoch,
            layer,
            action,
            gof_statistic: None,
            lambda_plus: None,
            kept_above: 0,
            kept_below: 0,
            removed: 0,
            keep_fraction: f,
            params_before: slot_params,
            params_after: slot_params,
            params_delta: 0,
            detail: None,
        }
    }
}

/// Spectrum, fit and factors of one weight matrix.
struct Analysis<T> {
    factors: SvdFactors<T>,
    gof: GofResult,
}

fn analyze<T: Scalar>(w: &Array2<T>, schedule: &PruneSchedule, tau: f64) -> Result<Analysis<T>> {
    let factors = spectral::svd(w.view())?;
    let values = factors.singulars.iter().map(|s| s.to_f64_lossy().powi(2)).collect();
    let spectrum = Spectrum::with_shape(values, w.nrows(), w.ncols())?;
    let gof = mp_fit_test(&spectrum, schedule.alpha, schedule.beta, tau)?;
    Ok(Analysis { factors, gof })
}

/// Outcome of truncating one matrix at its MP threshold.
#[derive(Clone, Debug)]
pub struct MatrixPrune<T> {
    pub gof: GofResult,
    pub report: Option<spectral::TruncationReport>,
    /// `Some((W1, W2))` if splitting saves parameters.
    pub split: Option<(Array2<T>, Array2<T>)>,
    /// The truncated dense matrix when not split.
    pub dense: Option<Array2<T>>,
}

/// GoF-gated MP truncation of a single matrix (dense layer or flattened kernel).
pub fn prune_matrix<T: Scalar>(w: &Array2<T>, schedule: &PruneSchedule, keep: f64, tau: f64) -> Result<MatrixPrune<T>> {
    let a = analyze(w, schedule, tau)?;
    let Some(bema) = a.gof.bema.filter(|_| a.gof.pass) else {
        return Ok(MatrixPrune {
            gof: a.gof,
            report: None,
            split: None,
            dense: None,
        });
    };
    let (f, report) = spectral::truncate(&a.factors, T::of(bema.threshold()), keep);
    let (split, dense) = if report.split {
        (Some(spectral::split(&f)?), None)
    } else if report.removed == 0 {
        (None, None)
    } else {
        (None, Some(f.reconstruct()))
    };
    Ok(MatrixPrune {
        gof: a.gof,
        report: Some(report),
        split,
        dense,
    })
}

fn event_from<T>(
    epoch: usize,
    layer: usize,
    action: PruneAction,
    mp: &MatrixPrune<T>,
    before: usize,
    after: usize,
    f: f64,
) -> PruneEvent {
    let r = mp.report;
    PruneEvent {
        epoch,
        layer,
        action,
        gof_statistic: Some(mp.gof.statistic),
        lambda_plus: mp.gof.bema.map(|b| b.lambda_plus),
        kept_above: r.map_or(0, |r| r.kept_above),
        kept_below: r.map_or(0, |r| r.kept_below),
        removed: r.map_or(0, |r| r.removed),
        keep_fraction: f,
        params_before: before,
        params_after: after,
        params_delta: after as i64 - before as i64,
        detail: None,
    }
}

/// Truncate every unsplit slot whose spectrum passes the GoF test.
///
/// Must be called at a pass epoch. Analysis failures are reported as skipped
/// events and leave the slot untouched.
pub fn prune_pass<T: Scalar>(net: &mut DenseNet<T>, schedule: &PruneSchedule, epoch: usize) -> Result<Vec<PruneEvent>> {
    schedule.validate()?;
    if !schedule.is_pass_epoch(epoch) {
        return Err(Error::Parameter(format!(
            "prune_pass called at epoch {epoch}, which is not a multiple of {}",
            schedule.split_frequency
        )));
    }
    let f = keep_fraction(epoch, schedule);
    let mut events = Vec::new();
    for l in 0..net.depth() {
        let slot = &net.slots[l];
        if slot.is_split() {
            continue;
        }
        let before = slot.param_count();
        let LayerSlot::Full { w, bias } = slot else {
            unreachable!()
        };
        let mp = match prune_matrix(w, schedule, f, schedule.tau_fc) {
            Ok(mp) => mp,
            Err(e) => {
                let mut ev = PruneEvent::skipped(epoch, l, PruneAction::SkippedGof, before, f);
                ev.detail = Some(format!("analysis failed: {e}"));
                events.push(ev);
                continue;
            }
        };
        let bias = bias.clone();
        let (action, new_slot) = if !mp.gof.pass {
            (PruneAction::SkippedGof, None)
        } else if let Some((w1, w2)) = &mp.split {
            (
                PruneAction::Split,
                Some(LayerSlot::split(w1.clone(), w2.clone(), bias)?),
            )
        } else if let Some(d) = &mp.dense {
            (PruneAction::TruncateInPlace, Some(LayerSlot::full(d.clone(), bias)?))
        } else {
            (PruneAction::SkippedParams, None)
        };
        let after = new_slot.as_ref().map_or(before, |s| s.param_count());
        events.push(event_from(epoch, l, action, &mp, before, after, f));
        if let Some(s) = new_slot {
            net.slots[l] = s;
        }
    }
    Ok(events)
}

/// Replace split slots by their product when re-truncating the product would
/// strictly lower the slot's current parameter count.
pub fn recombine_pass<T: Scalar>(
    net: &mut DenseNet<T>,
    schedule: &PruneSchedule,
    epoch: usize,
) -> Result<Vec<PruneEvent>> {
    schedule.validate()?;
    let f = keep_fraction(epoch, schedule);
    let mut events = Vec::new();
    for l in 0..net.depth() {
        let slot = &net.slots[l];
        let LayerSlot::Split { w1, w2, bias } = slot else {
            continue;
        };
        let before = slot.param_count();
        let (n, m) = (w1.nrows(), w2.ncols());
        let product = spectral::recombine(w1.view(), w2.view())?;
        let mp = match prune_matrix(&product, schedule, f, schedule.tau_fc) {
            Ok(mp) => mp,
            Err(e) => {
                let mut ev = PruneEvent::skipped(epoch, l, PruneAction::SkippedGof, before, f);
                ev.detail = Some(format!("analysis failed: {e}"));
                events.push(ev);
                continue;
            }
        };
        if !mp.gof.pass {
            events.push(event_from(epoch, l, PruneAction::SkippedGof, &mp, before, before, f));
            continue;
        }
        let current = w1.len() + w2.len();
        let hypothetical = mp.report.map_or(n * m, |r| r.params_after);
        if hypothetical < current {
            let full = LayerSlot::full(product, bias.clone())?;
            let after = full.param_count();
            events.push(event_from(epoch, l, PruneAction::Recombine, &mp, before, after, f));
            net.slots[l] = full;
        } else {
            events.push(event_from(epoch, l, PruneAction::SkippedParams, &mp, before, before, f));
        }
    }
    Ok(events)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparsifyReport {
    pub xi: f64,
    pub zeroed: usize,
    pub total: usize,
    pub nonzero: usize,
}

/// Zero every weight (not bias) with `|w| < xi`.
pub fn sparsify_pass<T: Scalar>(net: &mut DenseNet<T>, xi: f64) -> Result<SparsifyReport> {
    if !(xi >= 0.0) {
        return Err(Error::Parameter(format!("xi must be >= 0, got {xi}")));
    }
    let mut zeroed = 0;
    for slot in &mut net.slots {
        for m in slot.matrices_mut() {
            let (s, z) = spectral::sparsify(m.view(), T::of(xi))?;
            *m = s;
            zeroed += z;
        }
    }
    let pc = parameter_count(net);
    Ok(SparsifyReport {
        xi,
        zeroed,
        total: pc.total,
        nonzero: pc.nonzero,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterCount {
    pub total: usize,
    pub nonzero: usize,
    pub per_layer: Vec<usize>,
}

pub fn parameter_count<T: Scalar>(net: &DenseNet<T>) -> ParameterCount {
    let per_layer: Vec<usize> = net.slots.iter().map(|s| s.param_count()).collect();
    ParameterCount {
        total: per_layer.iter().sum(),
        nonzero: net.slots.iter().map(|s| s.nonzero_count()).sum(),
        per_layer,
    }
}

/// Append events as JSON lines.
pub fn write_events_jsonl(path: &Path, events: &[PruneEvent]) -> Result<()> {
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    for ev in events {
        let line = serde_json::to_string(ev)?;
        writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

pub fn read_events_jsonl(path: &Path) -> Result<Vec<PruneEvent>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::format(path, format!("line {}: {e}", i + 1))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_net, Activation, Init};
    use crate::spiked::{build_deformed, DeformedSample, Planting, SpikeSpec};
    use ndarray::Array1;

    fn sched() -> PruneSchedule {
        PruneSchedule {
            split_frequency: 1,
            ..Default::default()
        }
    }

    #[test]
    fn retention_schedule() {
        let s = PruneSchedule::default();
        assert_eq!(keep_fraction(0, &s), 1.0);
        assert_eq!(keep_fraction(30, &s), 0.0);
        assert!((keep_fraction(15, &s) - 0.5).abs() < 1e-15);
        assert_eq!(keep_fraction(90, &s), 0.0);
        let passes: Vec<usize> = (1..=40).filter(|&e| s.is_pass_epoch(e)).collect();
        assert_eq!(passes, vec![7, 14, 21, 28, 35]);
        let sp = SparsifySchedule {
            xi_start: 0.001,
            xi_end: 0.02,
        };
        assert_eq!(sp.xi_at(0, 40), 0.001);
        assert_eq!(sp.xi_at(40, 40), 0.02);
    }

    #[test]
    fn schedule_validation() {
        assert!(PruneSchedule::default().validate().is_ok());
        let mut s = PruneSchedule::default();
        s.split_frequency = 0;
        assert!(s.validate().is_err());
        let mut s = PruneSchedule::default();
        s.retention.slope = 0.1;
        assert!(s.validate().is_err());
        let mut s = PruneSchedule::default();
        s.sparsify = Some(SparsifySchedule {
            xi_start: 0.02,
            xi_end: 0.01,
        });
        assert!(s.validate().is_err());
    }

    #[test]
    fn paper_parameter_counts() {
        let a: DenseNet<f32> = init_net(
            &[784, 3000, 3000, 2000, 500, 10],
            Init::NormalInvN,
            Activation::Relu,
            true,
            0,
        )
        .unwrap();
        assert_eq!(parameter_count(&a).total, 18_365_510);
        let mut b: DenseNet<f32> = init_net(&[784, 1000, 10], Init::NormalInvN, Activation::Relu, true, 0).unwrap();
        let bias = b.slots[0].bias().clone();
        b.slots[0] = LayerSlot::split(Array2::zeros((1000, 60)), Array2::zeros((60, 784)), bias).unwrap();
        assert_eq!(parameter_count(&b).per_layer[0], 107_040 + 1000);
    }

    #[test]
    fn fresh_noise_layer_keeps_everything_at_full_retention() {
        let mut net: DenseNet<f64> = init_net(&[300, 200, 10], Init::NormalInvN, Activation::Relu, true, 4).unwrap();
        let before = net.clone();
        let mut s = PruneSchedule::default();
        s.retention = Retention {
            slope: 0.0,
            intercept: 1.0,
        };
        s.split_frequency = 1;
        let ev = prune_pass(&mut net, &s, 1).unwrap();
        assert_eq!(ev[0].removed, 0);
        assert_eq!(ev[0].action, PruneAction::SkippedParams);
        assert!(ev[0].gof_statistic.unwrap() < 0.7);
        assert_eq!(net.slots[0], before.slots[0]);
    }

    fn spiked_net(seed: u64) -> (DenseNet<f64>, DeformedSample<f64>) {
        let spec = SpikeSpec::new(vec![70.0, 60.0, 50.0, 40.0, 30.0], 400, 400, None).unwrap();
        let d: DeformedSample<f64> = build_deformed(&spec, seed, Planting::Diagonal).unwrap();
        let net = DenseNet::new(
            vec![
                LayerSlot::full(d.w.clone(), Array1::zeros(400)).unwrap(),
                LayerSlot::full(
                    Array2::eye(400).slice(ndarray::s![..10, ..]).to_owned(),
                    Array1::zeros(10),
                )
                .unwrap(),
            ],
            Activation::Relu,
            true,
        )
        .unwrap();
        (net, d)
    }

    #[test]
    fn planted_spikes_are_the_kept_values() {
        let (mut net, _) = spiked_net(2);
        let ev = prune_pass(&mut net, &sched(), 30).unwrap();
        assert_eq!(ev[0].kept_above, 5);
        assert_eq!(ev[0].kept_below, 0);
        assert_eq!(ev[0].action, PruneAction::Split);
        assert_eq!(net.slots[0].rank(), Some(5));
        assert_eq!(ev[0].params_after, 5 * 800 + 400);
        assert!(ev[0].params_delta < 0);
    }

    #[test]
    fn rank_dominated_layer_fails_gof() {
        let mut w = Array2::<f64>::zeros((100, 100));
        w[[0, 0]] = 10.0;
        let mut net = DenseNet::new(
            vec![
                LayerSlot::full(w, Array1::zeros(100)).unwrap(),
                LayerSlot::full(Array2::ones((2, 100)), Array1::zeros(2)).unwrap(),
            ],
            Activation::Relu,
            true,
        )
        .unwrap();
        let before = net.clone();
        let mut s = sched();
        s.tau_fc = 0.05;
        let ev = prune_pass(&mut net, &s, 3).unwrap();
        assert_eq!(ev[0].action, PruneAction::SkippedGof);
        assert_eq!(net.slots[0], before.slots[0]);
    }

    #[test]
    fn prune_pass_requires_pass_epoch() {
        let (mut net, _) = spiked_net(1);
        assert!(prune_pass(&mut net, &PruneSchedule::default(), 8).is_err());
    }

    #[test]
    fn recombine_when_retruncation_saves() {
        // split slot carrying noise that a fresh truncation removes; its 20
        // missing directions sit inside the trimmed lower tail
        let (net0, d) = spiked_net(3);
        let f = spectral::svd(d.w.view()).unwrap();
        let (w1, w2) = spectral::split(&spectral::leading(&f, 380)).unwrap();
        let mut net = net0.clone();
        net.slots[0] = LayerSlot::split(w1, w2, Array1::zeros(400)).unwrap();
        let ev = recombine_pass(&mut net, &sched(), 30).unwrap();
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].action, PruneAction::Recombine, "{ev:?}");
        assert!(!net.slots[0].is_split());

        // already minimal: nothing to gain
        let f5 = spectral::leading(&f, 5);
        let (w1, w2) = spectral::split(&f5).unwrap();
        let mut net = net0;
        net.slots[0] = LayerSlot::split(w1, w2, Array1::zeros(400)).unwrap();
        let ev = recombine_pass(&mut net, &sched(), 30).unwrap();
        assert_ne!(ev[0].action, PruneAction::Recombine);
        assert!(net.slots[0].is_split());
    }

    #[test]
    fn sparsify_pass_counts() {
        let mut net: DenseNet<f64> = init_net(&[20, 10, 3], Init::He, Activation::Relu, true, 1).unwrap();
        let total = parameter_count(&net).total;
        let r0 = sparsify_pass(&mut net, 0.0).unwrap();
        assert_eq!(r0.zeroed, 0);
        assert_eq!(r0.nonzero, total - 13);
        let r = sparsify_pass(&mut net, 1e9).unwrap();
        assert_eq!(r.nonzero, 0);
        assert!(sparsify_pass(&mut net, -1.0).is_err());
    }

    #[test]
    fn events_jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (mut net, _) = spiked_net(5);
        let ev = prune_pass(&mut net, &sched(), 2).unwrap();
        let p = dir.path().join("events.jsonl");
        write_events_jsonl(&p, &ev).unwrap();
        write_events_jsonl(&p, &ev).unwrap();
        let back = read_events_jsonl(&p).unwrap();
        assert_eq!(back.len(), 2 * ev.len());
        assert_eq!(back[0], ev[0]);
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text
            .lines()
            .next()
            .unwrap()
            .contains("\"action\":\"truncate_in_place\""));
    }
}
