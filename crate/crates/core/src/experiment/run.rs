use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{RunConfig, Task};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{container, evaluate, init_net, train_epoch, DenseNet, OptimizerState, TrainConfig};
use crate::pruning::{self, parameter_count, PruneEvent, PruneSchedule};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Normal,
    Pruned,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Normal => "normal",
            Variant::Pruned => "pruned",
        }
    }
}

/// State of one network after `epoch` completed epochs (`0` is the initialization).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub seed: u64,
    pub variant: Variant,
    pub epoch: usize,
    /// Running mean over the epoch's batches; at epoch 0 a full evaluation.
    pub train_loss: f64,
    pub train_acc: Option<f64>,
    pub test_loss: f64,
    pub test_acc: Option<f64>,
    pub params: usize,
    pub nonzero: usize,
    /// Learning rate used during the epoch; `None` at epoch 0.
    pub lr: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeededEvent {
    pub seed: u64,
    #[serde(flatten)]
    pub event: PruneEvent,
}

/// Mean and sample variance across seeds of one `(variant, epoch)` cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub variant: Variant,
    pub epoch: usize,
    pub seeds: usize,
    pub mean_test_acc: Option<f64>,
    pub var_test_acc: Option<f64>,
    pub mean_train_acc: Option<f64>,
    pub var_train_acc: Option<f64>,
    pub mean_test_loss: f64,
    pub var_test_loss: f64,
    pub mean_params: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub task: Task,
    pub topology: Vec<usize>,
    pub seeds: Vec<u64>,
    pub epochs: usize,
    pub initial_params: usize,
    /// Sorted by `(seed, variant, epoch)`.
    pub rows: Vec<EpochRow>,
    pub events: Vec<SeededEvent>,
    pub aggregates: Vec<Aggregate>,
}

impl ExperimentReport {
    pub fn final_row(&self, seed: u64, variant: Variant) -> Option<&EpochRow> {
        self.rows
            .iter()
            .filter(|r| r.seed == seed && r.variant == variant)
            .max_by_key(|r| r.epoch)
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}

/// Both networks of one seed after training, with their history.
#[derive(Clone, Debug)]
pub struct SeedRun<T> {
    pub seed: u64,
    pub normal: DenseNet<T>,
    /// `None` when no schedule was given.
    pub pruned: Option<DenseNet<T>>,
    pub rows: Vec<EpochRow>,
    pub events: Vec<PruneEvent>,
}

fn row<T: Scalar>(
    net: &DenseNet<T>,
    seed: u64,
    variant: Variant,
    epoch: usize,
    train: (f64, Option<f64>),
    test: &Dataset<T>,
    lr: Option<f64>,
) -> Result<EpochRow> {
    let te = evaluate(net, test)?;
    let pc = parameter_count(net);
    Ok(EpochRow {
        seed,
        variant,
        epoch,
        train_loss: train.0,
        train_acc: train.1,
        test_loss: te.loss,
        test_acc: te.accuracy,
        params: pc.total,
        nonzero: pc.nonzero,
        lr,
    })
}

/// Train `net` for `config.epochs` epochs, running recombine and prune passes when a
/// schedule is given. Returns per-epoch rows (epoch 0 included) and events.
pub fn train_network<T: Scalar>(
    net: &mut DenseNet<T>,
    variant: Variant,
    config: &TrainConfig,
    schedule: Option<&PruneSchedule>,
    train: &Dataset<T>,
    test: &Dataset<T>,
    progress: &(dyn Fn(&EpochRow) + Sync),
) -> Result<(Vec<EpochRow>, Vec<PruneEvent>)> {
    let mut rows = Vec::with_capacity(config.epochs + 1);
    let mut events = Vec::new();
    let tr = evaluate(net, train)?;
    let r0 = row(net, config.seed, variant, 0, (tr.loss, tr.accuracy), test, None)?;
    progress(&r0);
    rows.push(r0);
    let mut state = OptimizerState::new(net);
    for e in 0..config.epochs {
        let m = train_epoch(net, train, config, &mut state, e)?;
        let done = e + 1;
        if let Some(s) = schedule {
            if s.is_pass_epoch(done) {
                let mut evs = pruning::recombine_pass(net, s, done)?;
                evs.extend(pruning::prune_pass(net, s, done)?);
                for ev in evs.iter().filter(|ev| ev.changed()) {
                    state.reset_slot(ev.layer, net);
                }
                events.extend(evs);
            }
            if let Some(sp) = s.sparsify {
                pruning::sparsify_pass(net, sp.xi_at(done, config.epochs))?;
            }
        }
        let r = row(
            net,
            config.seed,
            variant,
            done,
            (m.train_loss, m.train_acc),
            test,
            Some(m.lr),
        )?;
        progress(&r);
        rows.push(r);
    }
    Ok((rows, events))
}

/// Paired runs for one seed: identical initialization and sample order, one
/// network trained plainly and one under the schedule.
pub fn run_seed<T: Scalar>(
    config: &RunConfig,
    seed: u64,
    train: &Dataset<T>,
    test: &Dataset<T>,
    progress: &(dyn Fn(&EpochRow) + Sync),
) -> Result<SeedRun<T>> {
    let tc = TrainConfig {
        seed,
        ..config.train.clone()
    };
    let init = init_net::<T>(
        &config.topology,
        tc.init,
        config.activation,
        config.final_activation,
        seed,
    )?;
    let mut normal = init.clone();
    let (mut rows, _) = train_network(&mut normal, Variant::Normal, &tc, None, train, test, progress)?;
    let mut events = Vec::new();
    let pruned = match &config.prune {
        Some(s) => {
            let mut p = init;
            let (r, ev) = train_network(&mut p, Variant::Pruned, &tc, Some(s), train, test, progress)?;
            rows.extend(r);
            events = ev;
            Some(p)
        }
        None => None,
    };
    Ok(SeedRun {
        seed,
        normal,
        pruned,
        rows,
        events,
    })
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var)
}

/// Per `(variant, epoch)` mean and unbiased variance over seeds.
pub fn aggregate(rows: &[EpochRow]) -> Vec<Aggregate> {
    let mut keys: Vec<(Variant, usize)> = rows.iter().map(|r| (r.variant, r.epoch)).collect();
    keys.sort();
    keys.dedup();
    keys.into_iter()
        .map(|(variant, epoch)| {
            let cell: Vec<&EpochRow> = rows
                .iter()
                .filter(|r| r.variant == variant && r.epoch == epoch)
                .collect();
            let opt = |f: fn(&EpochRow) -> Option<f64>| {
                let v: Option<Vec<f64>> = cell.iter().map(|r| f(r)).collect();
                v.map(|v| mean_var(&v))
            };
            let acc = opt(|r| r.test_acc);
            let tacc = opt(|r| r.train_acc);
            let loss = mean_var(&cell.iter().map(|r| r.test_loss).collect::<Vec<_>>());
            Aggregate {
                variant,
                epoch,
                seeds: cell.len(),
                mean_test_acc: acc.map(|a| a.0),
                var_test_acc: acc.map(|a| a.1),
                mean_train_acc: tacc.map(|a| a.0),
                var_train_acc: tacc.map(|a| a.1),
                mean_test_loss: loss.0,
                var_test_loss: loss.1,
                mean_params: cell.iter().map(|r| r.params as f64).sum::<f64>() / cell.len() as f64,
            }
        })
        .collect()
}

/// Run every seed (in parallel on the current rayon pool) and merge the
/// shards in `(seed, variant, epoch)` order.
pub fn run_experiment_on<T: Scalar>(
    config: &RunConfig,
    train: &Dataset<T>,
    test: &Dataset<T>,
    progress: &(dyn Fn(&EpochRow) + Sync),
) -> Result<(ExperimentReport, Vec<SeedRun<T>>)> {
    config.validate()?;
    if !matches!(config.task, Task::Classify | Task::Regress) {
        return Err(Error::Config(format!("task {:?} is not a training task", config.task)));
    }
    if train.n_features() != config.topology[0] {
        return Err(Error::Config(format!(
            "topology starts with {} inputs but the data has {} features",
            config.topology[0],
            train.n_features()
        )));
    }
    let mut runs: Vec<SeedRun<T>> = config
        .seeds
        .par_iter()
        .map(|&s| run_seed(config, s, train, test, progress))
        .collect::<Result<_>>()?;
    runs.sort_by_key(|r| r.seed);
    let mut rows: Vec<EpochRow> = runs.iter().flat_map(|r| r.rows.iter().cloned()).collect();
    rows.sort_by_key(|r| (r.seed, r.variant, r.epoch));
    let events = runs
        .iter()
        .flat_map(|r| {
            r.events.iter().map(|e| SeededEvent {
                seed: r.seed,
                event: e.clone(),
            })
        })
        .collect();
    let initial_params = rows.iter().find(|r| r.epoch == 0).map_or(0, |r| r.params);
    let report = ExperimentReport {
        task: config.task,
        topology: config.topology.clone(),
        seeds: runs.iter().map(|r| r.seed).collect(),
        epochs: config.train.epochs,
        initial_params,
        aggregates: aggregate(&rows),
        rows,
        events,
    };
    Ok((report, runs))
}

/// Load the configured dataset, run, and write all outputs into `config.out_dir`.
pub fn run_experiment<T: Scalar>(
    config: &RunConfig,
    progress: &(dyn Fn(&EpochRow) + Sync),
) -> Result<ExperimentReport> {
    config.validate()?;
    let spec = config
        .dataset
        .as_ref()
        .ok_or_else(|| Error::Config("a training task requires `dataset`".into()))?;
    let (train, test) = spec.load::<T>()?;
    let (report, runs) = run_experiment_on(config, &train, &test, progress)?;
    write_outputs(&config.out_dir, &report, &runs)?;
    Ok(report)
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| v.to_string())
}

pub const ROWS_HEADER: &str = "seed,variant,epoch,train_loss,train_acc,test_loss,test_acc,params,nonzero,lr";

/// Rows as CSV; identical inputs give byte-identical output.
pub fn rows_csv(rows: &[EpochRow]) -> String {
    let mut s = String::from(ROWS_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.seed,
            r.variant.name(),
            r.epoch,
            r.train_loss,
            fmt_opt(r.train_acc),
            r.test_loss,
            fmt_opt(r.test_acc),
            r.params,
            r.nonzero,
            fmt_opt(r.lr)
        ));
    }
    s
}

pub fn aggregates_csv(aggs: &[Aggregate]) -> String {
    let mut s = String::from(
        "variant,epoch,seeds,mean_test_acc,var_test_acc,mean_train_acc,var_train_acc,mean_test_loss,var_test_loss,mean_params\n",
    );
    for a in aggs {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            a.variant.name(),
            a.epoch,
            a.seeds,
            fmt_opt(a.mean_test_acc),
            fmt_opt(a.var_test_acc),
            fmt_opt(a.mean_train_acc),
            fmt_opt(a.var_train_acc),
            a.mean_test_loss,
            a.var_test_loss,
            a.mean_params
        ));
    }
    s
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    fs::write(path, content).map_err(|e| Error::io(path, e))
}

/// `rows.csv`, `aggregates.csv`, `events.jsonl`, `report.json`, and per seed
/// `seed{s}/{normal,pruned}/` weight containers plus `seed{s}/events.jsonl`.
pub fn write_outputs<T: Scalar>(out: &Path, report: &ExperimentReport, runs: &[SeedRun<T>]) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_file(&out.join("rows.csv"), &rows_csv(&report.rows))?;
    write_file(&out.join("aggregates.csv"), &aggregates_csv(&report.aggregates))?;
    let ev_path = out.join("events.jsonl");
    let mut f = fs::File::create(&ev_path).map_err(|e| Error::io(&ev_path, e))?;
    for e in &report.events {
        writeln!(f, "{}", serde_json::to_string(e)?).map_err(|e| Error::io(&ev_path, e))?;
    }
    write_file(&out.join("report.json"), &serde_json::to_string_pretty(report)?)?;
    for r in runs {
        let dir = out.join(format!("seed{}", r.seed));
        container::save(&r.normal, &dir.join("normal"))?;
        if let Some(p) = &r.pruned {
            container::save(p, &dir.join("pruned"))?;
        }
        let shard = dir.join("events.jsonl");
        if shard.exists() {
            fs::remove_file(&shard).map_err(|e| Error::io(&shard, e))?;
        }
        pruning::write_events_jsonl(&shard, &r.events)?;
    }
    Ok(())
}
