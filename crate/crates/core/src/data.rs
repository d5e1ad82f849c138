//! Datasets: IDX image corpora and synthetic generators.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Targets<T> {
    Classes { labels: Vec<usize>, n_classes: usize },
    Values(Array2<T>),
}

impl<T: Scalar> Targets<T> {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes { labels, .. } => labels.len(),
            Targets::Values(v) => v.nrows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Output width a network needs for these targets.
    pub fn width(&self) -> usize {
        match self {
            Targets::Classes { n_classes, .. } => *n_classes,
            Targets::Values(v) => v.ncols(),
        }
    }

    pub fn select(&self, idx: &[usize]) -> Targets<T> {
        match self {
            Targets::Classes { labels, n_classes } => Targets::Classes {
                labels: idx.iter().map(|&i| labels[i]).collect(),
                n_classes: *n_classes,
            },
            Targets::Values(v) => Targets::Values(v.select(Axis(0), idx)),
        }
    }

    pub fn labels(&self) -> Option<&[usize]> {
        match self {
            Targets::Classes { labels, .. } => Some(labels),
            Targets::Values(_) => None,
        }
    }
}

/// Row-per-sample inputs with matching targets.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T> {
    pub inputs: Array2<T>,
    pub targets: Targets<T>,
    pub split: Split,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(inputs: Array2<T>, targets: Targets<T>, split: Split) -> Result<Self> {
        if inputs.nrows() == 0 || inputs.ncols() == 0 {
            return Err(Error::Shape("dataset has no samples or no features".into()));
        }
        if inputs.nrows() != targets.len() {
            return Err(Error::Shape(format!(
                "{} inputs but {} targets",
                inputs.nrows(),
                targets.len()
            )));
        }
        if let Targets::Classes { labels, n_classes } = &targets {
            if let Some(bad) = labels.iter().find(|&&l| l >= *n_classes) {
                return Err(Error::Domain(format!("label {bad} outside 0..{n_classes}")));
            }
        }
        Ok(Dataset { inputs, targets, split })
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_features(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn select(&self, idx: &[usize]) -> Dataset<T> {
        Dataset {
            inputs: self.inputs.select(Axis(0), idx),
            targets: self.targets.select(idx),
            split: self.split,
        }
    }

    /// First `n` samples (all of them if `n >= len`).
    pub fn head(&self, n: usize) -> Dataset<T> {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.select(&idx)
    }

    pub fn cast<U: Scalar>(&self) -> Dataset<U> {
        let conv = |x: &T| U::of(x.to_f64_lossy());
        Dataset {
            inputs: self.inputs.map(conv),
            targets: match &self.targets {
                Targets::Classes { labels, n_classes } => Targets::Classes {
                    labels: labels.clone(),
                    n_classes: *n_classes,
                },
                Targets::Values(v) => Targets::Values(v.map(conv)),
            },
            split: self.split,
        }
    }

    /// CSV with columns `x0..x{d-1}` followed by `label` or `y0..`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let d = self.n_features();
        let mut out = String::new();
        let mut header: Vec<String> = (0..d).map(|i| format!("x{i}")).collect();
        match &self.targets {
            Targets::Classes { .. } => header.push("label".into()),
            Targets::Values(v) => header.extend((0..v.ncols()).map(|i| format!("y{i}"))),
        }
        out.push_str(&header.join(","));
        out.push('\n');
        for (r, row) in self.inputs.outer_iter().enumerate() {
            let mut fields: Vec<String> = row.iter().map(|x| x.to_string()).collect();
            match &self.targets {
                Targets::Classes { labels, .. } => fields.push(labels[r].to_string()),
                Targets::Values(v) => fields.extend(v.row(r).iter().map(|x| x.to_string())),
            }
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::format(path, format!("gzip: {e}")))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::format(path, "truncated IDX header"))
}

/// Load an IDX image file and its label file (either may be gzip-compressed).
///
/// Pixels are scaled to `[0, 1]` and each image is flattened row-major.
/// `limit` keeps the first `limit` samples.
pub fn load_idx<T: Scalar>(images_path: &Path, labels_path: &Path, limit: Option<usize>) -> Result<Dataset<T>> {
    let img = read_maybe_gz(images_path)?;
    let lab = read_maybe_gz(labels_path)?;

    let magic = be_u32(&img, 0, images_path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::format(
            images_path,
            format!("bad image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
        ));
    }
    let n_img = be_u32(&img, 4, images_path)? as usize;
    let rows = be_u32(&img, 8, images_path)? as usize;
    let cols = be_u32(&img, 12, images_path)? as usize;

    let magic = be_u32(&lab, 0, labels_path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::format(
            labels_path,
            format!("bad label magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
        ));
    }
    let n_lab = be_u32(&lab, 4, labels_path)? as usize;
    if n_img != n_lab {
        return Err(Error::format(
            images_path,
            format!("{n_img} images but {n_lab} labels in {}", labels_path.display()),
        ));
    }
    let pix = rows * cols;
    if img.len() < 16 + n_img * pix {
        return Err(Error::format(
            images_path,
            format!("truncated: {} bytes for {n_img} images of {rows}x{cols}", img.len()),
        ));
    }
    if lab.len() < 8 + n_lab {
        return Err(Error::format(
            labels_path,
            format!("truncated: {} bytes for {n_lab} labels", lab.len()),
        ));
    }
    let all_labels = &lab[8..8 + n_lab];
    let n_classes = all_labels.iter().copied().max().map_or(0, |m| m as usize + 1);
    let n = limit.map_or(n_img, |l| l.min(n_img));
    let data = &img[16..16 + n * pix];
    let inputs = Array2::from_shape_fn((n, pix), |(i, j)| T::of(data[i * pix + j] as f64 / 255.0));
    let labels = all_labels[..n].iter().map(|&l| l as usize).collect();
    Dataset::new(inputs, Targets::Classes { labels, n_classes }, Split::Train)
}

/// Layout of the two-class polynomial-boundary task.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolynomialTask {
    pub x_min: f64,
    pub x_max: f64,
    /// Vertical distance of each cluster from the curve.
    pub offset: f64,
}

impl Default for PolynomialTask {
    fn default() -> Self {
        PolynomialTask {
            x_min: -1.0,
            x_max: 1.0,
            offset: 0.5,
        }
    }
}

/// Random polynomial of the given degree with standard-normal coefficients,
/// lowest order first.
pub fn random_polynomial(degree: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..=degree).map(|_| StandardNormal.sample(rng)).collect()
}

pub fn eval_polynomial(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

/// Two-dimensional points on either side of a random polynomial curve.
///
/// Label 0 sits `offset` above the curve, label 1 `offset` below; Gaussian
/// noise of standard deviation `noise_sd` then perturbs the `y` coordinate.
/// Returns the dataset and the polynomial coefficients.
pub fn gen_polynomial_2d<T: Scalar>(
    degree: usize,
    n: usize,
    noise_sd: f64,
    seed: u64,
    task: &PolynomialTask,
) -> Result<(Dataset<T>, Vec<f64>)> {
    if degree < 1 || n < 2 {
        return Err(Error::Parameter(format!(
            "need degree >= 1 and n >= 2, got {degree}, {n}"
        )));
    }
    if !(noise_sd >= 0.0) || !(task.x_max > task.x_min) {
        return Err(Error::Parameter("noise_sd must be >= 0 and x_max > x_min".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coeffs = random_polynomial(degree, &mut rng);
    let ux = Uniform::new(task.x_min, task.x_max).map_err(|e| Error::Parameter(e.to_string()))?;
    let noise = Normal::new(0.0, noise_sd).map_err(|e| Error::Parameter(e.to_string()))?;
    let mut inputs = Array2::zeros((n, 2));
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let x = ux.sample(&mut rng);
        let above = rng.random_bool(0.5);
        let y = eval_polynomial(&coeffs, x) + if above { task.offset } else { -task.offset } + noise.sample(&mut rng);
        inputs[[i, 0]] = T::of(x);
        inputs[[i, 1]] = T::of(y);
        labels.push(if above { 0 } else { 1 });
    }
    let ds = Dataset::new(inputs, Targets::Classes { labels, n_classes: 2 }, Split::Train)?;
    Ok((ds, coeffs))
}

/// `0.5 cos(20x) + 2 cos(5x) + 0.5 sin(10x)`.
pub fn regression_target(x: f64) -> f64 {
    0.5 * (20.0 * x).cos() + 2.0 * (5.0 * x).cos() + 0.5 * (10.0 * x).sin()
}

pub const REGRESSION_NOISE_SCALE: f64 = 0.5;

/// 2000 equally spaced noisy training points on `[0, 2]` and 500 noiseless test points.
pub fn gen_regression<T: Scalar>(seed: u64) -> Result<(Dataset<T>, Dataset<T>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = Uniform::new_inclusive(-1.0, 1.0).map_err(|e| Error::Parameter(e.to_string()))?;
    let make = |n: usize, rng: Option<&mut ChaCha8Rng>, split| -> Result<Dataset<T>> {
        let xs: Vec<f64> = (0..n).map(|i| 2.0 * i as f64 / (n - 1) as f64).collect();
        let mut ys: Vec<f64> = xs.iter().map(|&x| regression_target(x)).collect();
        if let Some(rng) = rng {
            for y in ys.iter_mut() {
                *y += REGRESSION_NOISE_SCALE * u.sample(rng);
            }
        }
        Dataset::new(
            Array2::from_shape_fn((n, 1), |(i, _)| T::of(xs[i])),
            Targets::Values(Array2::from_shape_fn((n, 1), |(i, _)| T::of(ys[i]))),
            split,
        )
    };
    let train = make(2000, Some(&mut rng), Split::Train)?;
    let test = make(500, None, Split::Test)?;
    Ok((train, test))
}

/// Deterministic `N x N` matrix with 1-based entries
/// `tan(pi/2 + 1/(j+1)) + cos(i) ln(i+j+1) + sin(j) cos(i/j)`.
pub fn deterministic_s_matrix<T: Scalar>(n: usize) -> Result<Array2<T>> {
    if n == 0 {
        return Err(Error::Parameter("matrix size must be >= 1".into()));
    }
    Ok(Array2::from_shape_fn((n, n), |(r, c)| {
        let i = (r + 1) as f64;
        let j = (c + 1) as f64;
        T::of(
            (std::f64::consts::FRAC_PI_2 + 1.0 / (j + 1.0)).tan()
                + i.cos() * (i + j + 1.0).ln()
                + j.sin() * (i / j).cos(),
        )
    }))
}
