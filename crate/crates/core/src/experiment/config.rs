use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{self, Dataset, PolynomialTask, Split};
use crate::error::{Error, Result};
use crate::nn::{Activation, TrainConfig};
use crate::pruning::PruneSchedule;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Classify,
    Regress,
    VerifyRmt,
    Analyze,
    SparsifySweep,
}

/// Where the training and evaluation data come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// A directory with the four standard IDX files (optionally gzipped),
    /// as distributed for MNIST and Fashion-MNIST.
    Mnist {
        dir: PathBuf,
        #[serde(default)]
        train_limit: Option<usize>,
        #[serde(default)]
        test_limit: Option<usize>,
    },
    Polynomial {
        degree: usize,
        n_train: usize,
        n_test: usize,
        #[serde(default)]
        noise_sd: f64,
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        layout: PolynomialTask,
    },
    Regression {
        #[serde(default)]
        seed: u64,
    },
}

const IDX_NAMES: [(&str, &str); 2] = [
    ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
];

fn idx_file(dir: &Path, name: &str) -> PathBuf {
    let plain = dir.join(name);
    if plain.exists() {
        return plain;
    }
    let gz = dir.join(format!("{name}.gz"));
    if gz.exists() {
        gz
    } else {
        plain
    }
}

impl DatasetSpec {
    /// Load or generate the `(train, test)` pair.
    pub fn load<T: Scalar>(&self) -> Result<(Dataset<T>, Dataset<T>)> {
        match self {
            DatasetSpec::Mnist {
                dir,
                train_limit,
                test_limit,
            } => {
                let [(tri, trl), (tei, tel)] = IDX_NAMES;
                let train = data::load_idx(&idx_file(dir, tri), &idx_file(dir, trl), *train_limit)?;
                let mut test = data::load_idx(&idx_file(dir, tei), &idx_file(dir, tel), *test_limit)?;
                test.split = Split::Test;
                Ok((train, test))
            }
            DatasetSpec::Polynomial {
                degree,
                n_train,
                n_test,
                noise_sd,
                seed,
                layout,
            } => {
                let (all, _) = data::gen_polynomial_2d::<T>(*degree, n_train + n_test, *noise_sd, *seed, layout)?;
                let train = all.head(*n_train);
                let idx: Vec<usize> = (*n_train..n_train + n_test).collect();
                let mut test = all.select(&idx);
                test.split = Split::Test;
                Ok((train, test))
            }
            DatasetSpec::Regression { seed } => data::gen_regression(*seed),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            DatasetSpec::Polynomial {
                n_train,
                n_test,
                noise_sd,
                ..
            } => {
                if *n_train == 0 || *n_test == 0 {
                    return Err(Error::Config("dataset.n_train and dataset.n_test must be >= 1".into()));
                }
                if !(*noise_sd >= 0.0) {
                    return Err(Error::Config(format!("dataset.noise_sd must be >= 0, got {noise_sd}")));
                }
            }
            DatasetSpec::Mnist {
                train_limit,
                test_limit,
                ..
            } => {
                if *train_limit == Some(0) || *test_limit == Some(0) {
                    return Err(Error::Config("dataset limits must be >= 1 when given".into()));
                }
            }
            DatasetSpec::Regression { .. } => {}
        }
        Ok(())
    }
}

/// Options of the `analyze` task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyzeConfig {
    pub container: PathBuf,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_alpha")]
    pub beta: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
}

/// Options of the `sparsify_sweep` task. Accuracy is measured on the test
/// half of `dataset`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub container: PathBuf,
    pub xi_grid: Vec<f64>,
    /// Parameter count that `kept_fraction` is relative to; defaults to the
    /// container's own total.
    #[serde(default)]
    pub baseline_params: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    pub seed: u64,
    /// Replaces every property's tolerance when set.
    pub tolerance: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlotKind {
    AccuracyVsEpoch,
    AccVsParams,
    EsdHistogram,
}

impl std::str::FromStr for PlotKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "accuracy_vs_epoch" => Ok(PlotKind::AccuracyVsEpoch),
            "acc_vs_params" => Ok(PlotKind::AccVsParams),
            "esd_histogram" => Ok(PlotKind::EsdHistogram),
            other => Err(Error::Config(format!(
                "unknown plot kind {other:?}; expected accuracy_vs_epoch, acc_vs_params or esd_histogram"
            ))),
        }
    }
}

/// Input of `plot-data`: an experiment `report.json`, a sweep `sweep.json`,
/// or a weight container / spectrum CSV for histograms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlotConfig {
    pub kind: PlotKind,
    pub input: PathBuf,
    /// 0-based slot for histograms of a container.
    #[serde(default)]
    pub layer: usize,
    #[serde(default = "default_bins")]
    pub bins: usize,
}

fn default_alpha() -> f64 {
    0.1
}

fn default_gamma() -> f64 {
    0.7
}

fn default_bins() -> usize {
    50
}

fn default_activation() -> Activation {
    Activation::Relu
}

fn default_true() -> bool {
    true
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

/// One JSON document describing a run. Unknown keys are rejected at every level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: Task,
    #[serde(default)]
    pub topology: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    /// Apply the activation after the last layer as well.
    #[serde(default = "default_true")]
    pub final_activation: bool,
    #[serde(default)]
    pub train: TrainConfig,
    /// `None` trains only the unpruned network.
    #[serde(default)]
    pub prune: Option<PruneSchedule>,
    #[serde(default)]
    pub dataset: Option<DatasetSpec>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub analyze: Option<AnalyzeConfig>,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub verify: Option<VerifyConfig>,
    #[serde(default)]
    pub plot: Option<PlotConfig>,
}

impl RunConfig {
    /// A config for `task` with every optional section at its default.
    pub fn new(task: Task) -> Self {
        RunConfig {
            task,
            topology: Vec::new(),
            activation: default_activation(),
            final_activation: true,
            train: TrainConfig::default(),
            prune: None,
            dataset: None,
            seeds: default_seeds(),
            out_dir: default_out(),
            analyze: None,
            sweep: None,
            verify: None,
            plot: None,
        }
    }

    /// Parse and validate.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let missing = |key: &str| Err(Error::Config(format!("task {:?} requires the `{key}` key", self.task)));
        match self.task {
            Task::Classify | Task::Regress => {
                if self.topology.len() < 2 || self.topology.contains(&0) {
                    return Err(Error::Config(format!(
                        "topology must list at least two positive widths, got {:?}",
                        self.topology
                    )));
                }
                self.train.validate()?;
                if let Some(p) = &self.prune {
                    p.validate().map_err(|e| Error::Config(format!("prune: {e}")))?;
                }
                if self.seeds.is_empty() {
                    return Err(Error::Config("seeds must not be empty".into()));
                }
                let Some(d) = &self.dataset else {
                    return missing("dataset");
                };
                d.validate()?;
                let regression = matches!(d, DatasetSpec::Regression { .. });
                if regression != (self.task == Task::Regress) {
                    return Err(Error::Config(
                        "dataset kind `regression` goes with task `regress` and only with it".into(),
                    ));
                }
            }
            Task::Analyze => {
                let Some(a) = &self.analyze else {
                    return missing("analyze");
                };
                if !(a.alpha > 0.0 && a.alpha < 0.5 && a.beta > 0.0 && a.beta < 1.0 && a.gamma > 0.0 && a.gamma <= 1.0)
                {
                    return Err(Error::Config(format!(
                        "analyze needs alpha in (0, 1/2), beta in (0, 1), gamma in (0, 1]; got {a:?}"
                    )));
                }
            }
            Task::SparsifySweep => {
                let Some(s) = &self.sweep else { return missing("sweep") };
                if s.xi_grid.is_empty() || s.xi_grid.iter().any(|x| !(*x >= 0.0 && x.is_finite())) {
                    return Err(Error::Config(
                        "sweep.xi_grid must be a non-empty list of finite values >= 0".into(),
                    ));
                }
                let Some(d) = &self.dataset else {
                    return missing("dataset");
                };
                d.validate()?;
            }
            Task::VerifyRmt => {
                if let Some(t) = self.verify.as_ref().and_then(|v| v.tolerance) {
                    if !(t >= 0.0) {
                        return Err(Error::Config(format!("verify.tolerance must be >= 0, got {t}")));
                    }
                }
            }
        }
        if let Some(p) = &self.plot {
            if p.bins == 0 {
                return Err(Error::Config("plot.bins must be >= 1".into()));
            }
        }
        Ok(())
    }
}
