//! Deformed matrices `W = R + S`: generators, asymptotic predictors for the
//! outlying singular values and vectors, and empirical checks of the pruning bounds.

use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::nn::confidence::{classification_confidence, downstream_factors, prefix_activations};
use crate::nn::{Activation, DenseNet, LayerSlot};
use crate::rmt::{bema_lambda_plus, esd, quadrature, BemaResult, MpParams};
use crate::scalar::Scalar;
use crate::spectral::{self, SvdFactors};

/// Planted signal singular values with the noise level of `R`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpikeSpec {
    /// Strictly decreasing, positive.
    pub sigmas: Vec<f64>,
    pub n: usize,
    pub m: usize,
    /// Entry variance of `R`; `1/N` when absent.
    #[serde(default)]
    pub noise_var: Option<f64>,
}

impl SpikeSpec {
    pub fn new(sigmas: Vec<f64>, n: usize, m: usize, noise_var: Option<f64>) -> Result<Self> {
        let s = SpikeSpec {
            sigmas,
            n,
            m,
            noise_var,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 {
            return Err(Error::Parameter(format!(
                "matrix must be non-empty, got {}x{}",
                self.n, self.m
            )));
        }
        if self.sigmas.is_empty() {
            return Err(Error::Parameter("at least one spike is required".into()));
        }
        if self.sigmas.len() > self.n.min(self.m) {
            return Err(Error::Parameter(format!(
                "{} spikes exceed the rank limit {} of a {}x{} matrix",
                self.sigmas.len(),
                self.n.min(self.m),
                self.n,
                self.m
            )));
        }
        if let Some(bad) = self.sigmas.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(Error::Parameter(format!("spike values must be positive, got {bad}")));
        }
        if self.sigmas.windows(2).any(|w| w[0] <= w[1]) {
            return Err(Error::Parameter(format!(
                "spike values must be distinct and descending, got {:?}",
                self.sigmas
            )));
        }
        if let Some(v) = self.noise_var {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Parameter(format!("noise variance must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var.unwrap_or(1.0 / self.n as f64)
    }

    pub fn rank(&self) -> usize {
        self.sigmas.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Planting {
    /// `sigma_i` at position `(i, i)`.
    Diagonal,
    /// Haar-random orthonormal singular vectors.
    RandomRotations,
}

/// A sample `W = R + S` together with the singular vectors of `S`.
#[derive(Clone, Debug)]
pub struct DeformedSample<T> {
    pub w: Array2<T>,
    pub s: Array2<T>,
    pub r: Array2<T>,
    pub seed: u64,
    /// Singular values of `S`, descending; empty for pure noise.
    pub sigmas: Vec<f64>,
    /// `N x r` left singular vectors of `S`.
    pub u: Array2<T>,
    /// `M x r` right singular vectors of `S`.
    pub v: Array2<T>,
    pub noise_var: f64,
}

impl<T: Scalar> DeformedSample<T> {
    /// `W = R` with `S = 0`.
    pub fn noise_only(n: usize, m: usize, noise_var: f64, seed: u64) -> Result<Self> {
        let r: Array2<T> = sample_gaussian(n, m, noise_var, seed)?;
        Ok(DeformedSample {
            w: r.clone(),
            s: Array2::zeros((n, m)),
            r,
            seed,
            sigmas: Vec::new(),
            u: Array2::zeros((n, 0)),
            v: Array2::zeros((m, 0)),
            noise_var,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.w.dim()
    }

    /// Scale `s` of the noise singular values: `sqrt(noise_var * max(N, M))`.
    pub fn noise_scale(&self) -> f64 {
        let (n, m) = self.shape();
        (self.noise_var * n.max(m) as f64).sqrt()
    }
}

/// `N x M` matrix of i.i.d. `N(0, var)` entries from a ChaCha8 stream seeded by `seed`.
pub fn sample_gaussian<T: Scalar>(n: usize, m: usize, var: f64, seed: u64) -> Result<Array2<T>> {
    if n == 0 || m == 0 {
        return Err(Error::Parameter(format!("matrix must be non-empty, got {n}x{m}")));
    }
    if !(var.is_finite() && var > 0.0) {
        return Err(Error::Parameter(format!("variance must be positive, got {var}")));
    }
    let sd = var.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(Array2::from_shape_simple_fn((n, m), || {
        let z: f64 = StandardNormal.sample(&mut rng);
        T::of(sd * z)
    }))
}

pub fn build_deformed<T: Scalar>(spec: &SpikeSpec, seed: u64, planting: Planting) -> Result<DeformedSample<T>> {
    spec.validate()?;
    let (n, m, r) = (spec.n, spec.m, spec.rank());
    let noise: Array2<T> = sample_gaussian(n, m, spec.noise_var(), seed)?;
    let (u, v) = match planting {
        Planting::Diagonal => (
            Array2::from_shape_fn((n, r), |(i, j)| if i == j { T::one() } else { T::zero() }),
            Array2::from_shape_fn((m, r), |(i, j)| if i == j { T::one() } else { T::zero() }),
        ),
        Planting::RandomRotations => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(1);
            let u = linalg::random_orthonormal(n, r, &mut rng);
            let v = linalg::random_orthonormal(m, r, &mut rng);
            (u, v)
        }
    };
    let sig = Array1::from_iter(spec.sigmas.iter().map(|&x| T::of(x)));
    let s = (&u * &sig.view().insert_axis(Axis(0))).dot(&v.t());
    Ok(DeformedSample {
        w: &noise + &s,
        s,
        r: noise,
        seed,
        sigmas: spec.sigmas.clone(),
        u,
        v,
        noise_var: spec.noise_var(),
    })
}

/// Noise law for the closed-form predictors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseModel {
    /// Square Gaussian noise whose singular values fill `[0, 2s]`.
    GaussianRect,
    /// Symmetric noise with semicircle spectrum on `[-2s, 2s]`.
    SymmetricSemicircle,
}

fn check_positive(x: f64, what: &str) -> Result<()> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("{what} must be positive, got {x}")))
    }
}

/// Detection threshold of a model at noise scale `s`.
pub fn model_threshold(_model: NoiseModel, noise_sigma: f64) -> f64 {
    noise_sigma
}

/// Limit of the singular value of `W` attached to a spike `sigma`.
///
/// Above threshold: `(s^2 + sigma^2) / sigma` for both models; at or below it the
/// value sticks to the bulk edge `2s`.
pub fn predict_spike_singular(sigma: f64, model: NoiseModel, noise_sigma: f64) -> Result<f64> {
    check_positive(sigma, "spike")?;
    check_positive(noise_sigma, "noise scale")?;
    let s = noise_sigma;
    Ok(if sigma > model_threshold(model, s) {
        sigma + s * s / sigma
    } else {
        2.0 * s
    })
}

/// Limit of `|<u_i, u'_i>|^2` (equal to the right-vector limit for both models):
/// `1 - s^2 / sigma^2` above threshold, 0 otherwise.
pub fn predict_overlap_sq(sigma: f64, model: NoiseModel, noise_sigma: f64) -> Result<f64> {
    check_positive(sigma, "spike")?;
    check_positive(noise_sigma, "noise scale")?;
    let s = noise_sigma;
    Ok(if sigma > model_threshold(model, s) {
        1.0 - (s / sigma).powi(2)
    } else {
        0.0
    })
}

/// `sqrt(sigma^2 + g_v g_sigma^2 - 2 sigma g_sigma sqrt(g_u g_v))` for one spike.
pub fn f_w_term(sigma: f64, g_sigma: f64, g_u: f64, g_v: f64) -> f64 {
    (sigma * sigma + g_v * g_sigma * g_sigma - 2.0 * sigma * g_sigma * (g_u * g_v).sqrt())
        .max(0.0)
        .sqrt()
}

/// Limiting `||W' - S||_2`: the maximum of [`f_w_term`] over the spikes.
pub fn f_w(sigmas: &[f64], model: NoiseModel, noise_sigma: f64) -> Result<f64> {
    if sigmas.is_empty() {
        return Err(Error::Domain("f_W needs at least one spike".into()));
    }
    check_positive(noise_sigma, "noise scale")?;
    let th = model_threshold(model, noise_sigma);
    let mut best: f64 = 0.0;
    for &sigma in sigmas {
        check_positive(sigma, "spike")?;
        if sigma <= th {
            return Err(Error::Domain(format!(
                "spike {sigma} is not above the detection threshold {th}; f_W is undefined"
            )));
        }
        let g = predict_spike_singular(sigma, model, noise_sigma)?;
        let o = predict_overlap_sq(sigma, model, noise_sigma)?;
        best = best.max(f_w_term(sigma, g, o, o));
    }
    Ok(best)
}

/// Relative offset above `sqrt(lambda_+)` at which the edge value of `D` is taken.
pub const EDGE_OFFSET: f64 = 1e-6;
const D_TOL: f64 = 1e-11;

/// `phi(z) = int z / (z^2 - t^2) dmu(t)` against the singular-value law `mu`
/// whose squares follow `law`.
pub fn phi(z: f64, law: &MpParams) -> Result<f64> {
    let (_, hi) = law.support();
    if !(z > hi.sqrt()) {
        return Err(Error::Domain(format!(
            "phi needs z > sqrt(lambda_+) = {}, got {z}",
            hi.sqrt()
        )));
    }
    let z2 = z * z;
    let cont = quadrature::integrate(
        |u| law.pdf_u(u) / (z2 - law.x_of(u)),
        0.0,
        std::f64::consts::FRAC_PI_2,
        D_TOL,
    )?;
    Ok(z * cont + law.point_mass() / z)
}

/// `D(z) = phi(z) [c phi(z) + (1 - c)/z]` for `z > sqrt(lambda_+)`.
pub fn d_transform(z: f64, law: &MpParams) -> Result<f64> {
    let p = phi(z, law)?;
    Ok(p * (law.c * p + (1.0 - law.c) / z))
}

/// `D(sqrt(lambda_+))^{-1/2}`, with the edge value taken at `sqrt(lambda_+) (1 + 1e-6)`.
pub fn theta_bar(law: &MpParams) -> Result<f64> {
    let edge = law.support().1.sqrt() * (1.0 + EDGE_OFFSET);
    Ok(d_transform(edge, law)?.powf(-0.5))
}

/// Closed-form threshold for a model (the noise scale itself).
pub fn theta_bar_model(model: NoiseModel, noise_sigma: f64) -> Result<f64> {
    check_positive(noise_sigma, "noise scale")?;
    Ok(model_threshold(model, noise_sigma))
}

/// Solve `D(z) = y` for `z > sqrt(lambda_+)`.
pub fn d_inverse(y: f64, law: &MpParams) -> Result<f64> {
    check_positive(y, "D value")?;
    let edge = law.support().1.sqrt() * (1.0 + EDGE_OFFSET);
    let d_edge = d_transform(edge, law)?;
    if y >= d_edge {
        return Err(Error::Domain(format!(
            "D value {y} is not below the edge value {d_edge}"
        )));
    }
    let mut lo = edge;
    let mut hi = 2.0 * edge;
    while d_transform(hi, law)? > y {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(Error::Numerical {
                what: "bracketing the inverse D-transform".into(),
                achieved: hi,
                wanted: 1e12,
            });
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if d_transform(mid, law)? > y {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-13 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Spike limit through the numerical D-transform: `D^{-1}(1/sigma^2)` above
/// `theta_bar`, `sqrt(lambda_+)` otherwise.
pub fn predict_spike_singular_law(sigma: f64, law: &MpParams) -> Result<f64> {
    check_positive(sigma, "spike")?;
    if sigma > theta_bar(law)? {
        d_inverse(1.0 / (sigma * sigma), law)
    } else {
        Ok(law.support().1.sqrt())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticPrediction {
    pub predicted_singular: Vec<f64>,
    pub predicted_overlap_sq: Vec<f64>,
    pub theta_bar: f64,
}

pub fn predict(sigmas: &[f64], model: NoiseModel, noise_sigma: f64) -> Result<AsymptoticPrediction> {
    Ok(AsymptoticPrediction {
        predicted_singular: sigmas
            .iter()
            .map(|&s| predict_spike_singular(s, model, noise_sigma))
            .collect::<Result<_>>()?,
        predicted_overlap_sq: sigmas
            .iter()
            .map(|&s| predict_overlap_sq(s, model, noise_sigma))
            .collect::<Result<_>>()?,
        theta_bar: theta_bar_model(model, noise_sigma)?,
    })
}

/// `||W' - S||_2`.
pub fn approximation_error<T: Scalar>(sample: &DeformedSample<T>, truncated: &Array2<T>) -> Result<f64> {
    if truncated.dim() != sample.s.dim() {
        return Err(Error::Shape(format!(
            "truncated matrix is {:?} but S is {:?}",
            truncated.dim(),
            sample.s.dim()
        )));
    }
    Ok(linalg::spectral_norm((truncated - &sample.s).view())?.to_f64_lossy())
}

/// A matrix truncated at the BEMA threshold.
#[derive(Clone, Debug)]
pub struct MpTruncation<T> {
    pub bema: BemaResult,
    /// Singular values strictly above `sqrt(lambda_+)`.
    pub kept: usize,
    pub factors: SvdFactors<T>,
    pub dense: Array2<T>,
}

/// Keep only the singular triplets above `sqrt(lambda_+)` of the fitted bulk.
pub fn mp_truncate<T: Scalar>(w: &Array2<T>, alpha: f64, beta: f64) -> Result<MpTruncation<T>> {
    let spectrum = esd(w.view())?;
    let bema = bema_lambda_plus(&spectrum, alpha, beta)?;
    let kept = spectrum.count_above(bema.lambda_plus);
    let factors = spectral::svd_top(w.view(), kept)?;
    let dense = if kept == 0 {
        Array2::zeros(w.raw_dim())
    } else {
        factors.reconstruct()
    };
    Ok(MpTruncation {
        bema,
        kept,
        factors,
        dense,
    })
}

/// Measured outliers of a sample against the model predictions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpikeMeasurement {
    pub n: usize,
    pub m: usize,
    pub seed: u64,
    pub sigmas: Vec<f64>,
    pub measured_singular: Vec<f64>,
    pub predicted_singular: Vec<f64>,
    /// `|<u_i, u'_i>|`.
    pub measured_left_overlap: Vec<f64>,
    /// `|<v_i, v'_i>|`.
    pub measured_right_overlap: Vec<f64>,
    /// `sqrt` of the predicted squared overlap.
    pub predicted_overlap: Vec<f64>,
    /// Largest `|<u_i, u'_j>|` with `i != j`.
    pub max_cross_overlap: f64,
}

pub fn measure_spikes<T: Scalar>(sample: &DeformedSample<T>, model: NoiseModel) -> Result<SpikeMeasurement> {
    let r = sample.sigmas.len();
    if r == 0 {
        return Err(Error::Domain("sample has no planted spikes".into()));
    }
    let (n, m) = sample.shape();
    let top = spectral::svd_top(sample.w.view(), r)?;
    let pred = predict(&sample.sigmas, model, sample.noise_scale())?;
    let left = sample.u.t().dot(&top.u);
    let right = sample.v.t().dot(&top.vt.t());
    let mut cross: f64 = 0.0;
    for i in 0..r {
        for j in 0..r {
            if i != j {
                cross = cross.max(left[[i, j]].to_f64_lossy().abs());
            }
        }
    }
    Ok(SpikeMeasurement {
        n,
        m,
        seed: sample.seed,
        sigmas: sample.sigmas.clone(),
        measured_singular: top.singulars.iter().map(|x| x.to_f64_lossy()).collect(),
        predicted_singular: pred.predicted_singular,
        measured_left_overlap: (0..r).map(|i| left[[i, i]].to_f64_lossy().abs()).collect(),
        measured_right_overlap: (0..r).map(|i| right[[i, i]].to_f64_lossy().abs()).collect(),
        predicted_overlap: pred.predicted_overlap_sq.iter().map(|x| x.sqrt()).collect(),
        max_cross_overlap: cross,
    })
}

/// `a(N) = 2 / N^{3/8}`.
pub fn a_n(n: usize) -> f64 {
    2.0 / (n as f64).powf(0.375)
}

/// `b(N) = 2 sqrt(2 ln(N^2) / N)`.
pub fn b_n(n: usize) -> f64 {
    let n = n as f64;
    2.0 * (2.0 * (n * n).ln() / n).sqrt()
}

/// Network around the deformed layer: the sample's `W` replaces the weight of
/// slot `layer` (1-based) of `net`, keeping its bias.
#[derive(Clone, Debug)]
pub struct BoundContext<T> {
    pub net: DenseNet<T>,
    pub layer: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundOptions {
    pub probes: usize,
    pub alpha: f64,
    pub beta: f64,
    /// Slack `epsilon` in `E'`.
    pub epsilon: f64,
    pub probe_seed: u64,
}

impl Default for BoundOptions {
    fn default() -> Self {
        BoundOptions {
            probes: 100,
            alpha: 0.1,
            beta: 0.1,
            epsilon: 0.0,
            probe_seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub delta: f64,
    pub g_phi: f64,
    pub h_phi: f64,
    pub bound_e: f64,
    pub bound_e_prime: f64,
    /// `sqrt(2 lambda_+) g_phi`.
    pub lemma_bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub n: usize,
    pub m: usize,
    pub seed: u64,
    pub sigmas: Vec<f64>,
    pub lambda_plus: f64,
    pub kept: usize,
    pub f_w: Option<f64>,
    pub a_n: f64,
    pub b_n: f64,
    pub delta_max: f64,
    /// Smallest `E` over the probes.
    pub bound_e: f64,
    /// Smallest `E'` over the probes.
    pub bound_e_prime: f64,
    /// Fraction of probes with `delta > E'`.
    pub violation_fraction: f64,
    /// Probes with `delta > sqrt(2 lambda_+) g_phi`.
    pub lemma_violations: usize,
    pub probes: Vec<ProbeRecord>,
}

/// Unit-norm Gaussian directions followed by coordinate vectors.
pub fn probe_vectors<T: Scalar>(dim: usize, count: usize, seed: u64) -> Array2<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    let gaussian = count - count / 2;
    let mut p = Array2::zeros((count, dim));
    for i in 0..gaussian {
        let g: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        for (j, x) in g.iter().enumerate() {
            p[[i, j]] = T::of(x / norm);
        }
    }
    for i in gaussian..count {
        p[[i, (i - gaussian) % dim]] = T::one();
    }
    p
}

fn with_weight<T: Scalar>(ctx: &BoundContext<T>, w: Array2<T>) -> Result<DenseNet<T>> {
    let mut net = ctx.net.clone();
    let l = ctx.layer - 1;
    let bias = net.slots[l].bias().clone();
    net.slots[l] = LayerSlot::full(w, bias)?;
    Ok(net)
}

/// Compare `delta X` before and after truncating the sample's `W` at the MP
/// threshold, probe by probe, against `E = a h + b`,
/// `E' = (1 + e)(sqrt2 (1 + e) min(f_W, sqrt(lambda_+)) g + a h + b)` and the
/// deterministic `sqrt(2 lambda_+) g`.
pub fn verify_pruning_bounds<T: Scalar>(
    sample: &DeformedSample<T>,
    context: Option<&BoundContext<T>>,
    options: &BoundOptions,
) -> Result<BoundReport> {
    let (n, m) = sample.shape();
    let default_ctx;
    let ctx = match context {
        Some(c) => {
            if c.layer == 0 || c.layer > c.net.depth() {
                return Err(Error::Domain(format!(
                    "context layer {} outside 1..={}",
                    c.layer,
                    c.net.depth()
                )));
            }
            let slot = &c.net.slots[c.layer - 1];
            if (slot.out_dim(), slot.in_dim()) != (n, m) {
                return Err(Error::Shape(format!(
                    "context layer {} is {}x{} but the sample is {n}x{m}",
                    c.layer,
                    slot.out_dim(),
                    slot.in_dim()
                )));
            }
            c
        }
        None => {
            let net = DenseNet::new(
                vec![LayerSlot::full(sample.w.clone(), Array1::zeros(n))?],
                Activation::None,
                false,
            )?;
            default_ctx = BoundContext { net, layer: 1 };
            &default_ctx
        }
    };
    if options.probes == 0 {
        return Err(Error::Parameter("at least one probe is required".into()));
    }
    if ctx.net.output_dim() < 2 {
        return Err(Error::Domain(
            "classification confidence needs at least two outputs".into(),
        ));
    }

    let trunc = mp_truncate(&sample.w, options.alpha, options.beta)?;
    let original = with_weight(ctx, sample.w.clone())?;
    let pruned = with_weight(ctx, trunc.dense.clone())?;
    let lambda_plus = trunc.bema.lambda_plus;
    let sqrt_lp = lambda_plus.sqrt();

    let s_noise = sample.noise_scale();
    let detectable: Vec<f64> = sample.sigmas.iter().copied().filter(|&s| s > s_noise).collect();
    let fw = if detectable.is_empty() {
        None
    } else {
        Some(f_w(&detectable, NoiseModel::GaussianRect, s_noise)?)
    };
    let shrink = fw.map_or(sqrt_lp, |f| f.min(sqrt_lp));
    let (a, b) = (a_n(n), b_n(n));
    let eps = options.epsilon;

    let probes = probe_vectors::<T>(ctx.net.input_dim(), options.probes, options.probe_seed);
    let x = original.forward_batch(probes.view())?;
    let xp = pruned.forward_batch(probes.view())?;
    let acts = prefix_activations(&original, probes.view(), ctx.layer)?;
    let (spec_down, col_down) = downstream_factors(&original, ctx.layer)?;

    let mut records = Vec::with_capacity(options.probes);
    for i in 0..options.probes {
        let row = x.row(i);
        let true_class = row
            .iter()
            .enumerate()
            .fold(
                (0, T::neg_infinity()),
                |best, (j, &v)| if v > best.1 { (j, v) } else { best },
            )
            .0;
        let d0 = classification_confidence(row, true_class)?.to_f64_lossy();
        let d1 = classification_confidence(xp.row(i), true_class)?.to_f64_lossy();
        let g = linalg::norm2(acts.row(i)).to_f64_lossy() * spec_down;
        let h = linalg::norm1(acts.row(i)).to_f64_lossy() * col_down;
        records.push(ProbeRecord {
            delta: (d0 - d1).abs(),
            g_phi: g,
            h_phi: h,
            bound_e: a * h + b,
            bound_e_prime: (1.0 + eps) * (2f64.sqrt() * (1.0 + eps) * shrink * g + a * h + b),
            lemma_bound: (2.0 * lambda_plus).sqrt() * g,
        });
    }
    let fmin = |f: fn(&ProbeRecord) -> f64| records.iter().map(f).fold(f64::INFINITY, f64::min);
    let violations = records.iter().filter(|r| r.delta > r.bound_e_prime).count();
    let lemma_violations = records
        .iter()
        .filter(|r| r.delta > r.lemma_bound * (1.0 + 1e-9) + 1e-12)
        .count();
    Ok(BoundReport {
        n,
        m,
        seed: sample.seed,
        sigmas: sample.sigmas.clone(),
        lambda_plus,
        kept: trunc.kept,
        f_w: fw,
        a_n: a,
        b_n: b,
        delta_max: records.iter().map(|r| r.delta).fold(0.0, f64::max),
        bound_e: fmin(|r| r.bound_e),
        bound_e_prime: fmin(|r| r.bound_e_prime),
        violation_fraction: violations as f64 / records.len() as f64,
        lemma_violations,
        probes: records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_validation() {
        assert!(SpikeSpec::new(vec![3.0, 2.0], 5, 4, None).is_ok());
        assert!(SpikeSpec::new(vec![2.0, 3.0], 5, 4, None).is_err());
        assert!(SpikeSpec::new(vec![2.0, 2.0], 5, 4, None).is_err());
        assert!(SpikeSpec::new(vec![5.0, 4.0, 3.0], 5, 2, None).is_err());
        assert!(SpikeSpec::new(vec![], 5, 2, None).is_err());
        assert_eq!(SpikeSpec::new(vec![1.0], 8, 4, None).unwrap().noise_var(), 0.125);
    }

    #[test]
    fn closed_form_predictors() {
        let g = NoiseModel::GaussianRect;
        assert_eq!(predict_spike_singular(2.0, g, 1.0).unwrap(), 2.5);
        assert_eq!(predict_spike_singular(0.5, g, 1.0).unwrap(), 2.0);
        assert!(
            (predict_spike_singular(3.0, NoiseModel::SymmetricSemicircle, 1.0).unwrap() - 10.0 / 3.0).abs() < 1e-15
        );
        assert!((predict_overlap_sq(30.0, g, 1.0).unwrap().sqrt() - 0.99944).abs() < 5e-6);
        assert_eq!(predict_overlap_sq(1.0, g, 1.0).unwrap(), 0.0);
        assert!(predict_overlap_sq(1e8, g, 1.0).unwrap() > 1.0 - 1e-15);
        assert!(predict_spike_singular(0.0, g, 1.0).is_err());
    }

    #[test]
    fn f_w_values() {
        let g = NoiseModel::GaussianRect;
        let f5 = f_w(&[5.0], g, 1.0).unwrap();
        assert!((f5 - (1.0f64 + 1.0 / 25.0 - 1.0 / 625.0).sqrt()).abs() < 1e-14);
        assert!((f5 - 1.0).abs() <= 0.03);
        assert!((f_w(&[1.0 + 1e-9], g, 1.0).unwrap() - 1.0).abs() < 1e-8);
        assert!(f_w(&[1.0], g, 1.0).is_err());
        assert!(f_w(&[3.0, 0.5], g, 1.0).is_err());
        // monotone decrease towards 1 beyond 5
        let mut prev = f_w(&[5.0], g, 1.0).unwrap();
        for k in 1..200 {
            let v = f_w(&[5.0 + 0.5 * k as f64], g, 1.0).unwrap();
            assert!(v < prev && v > 1.0);
            prev = v;
        }
    }

    #[test]
    fn d_transform_square_case() {
        let law = MpParams::new(1.0, 1.0).unwrap();
        // phi(z) = (z - sqrt(z^2 - 4)) / 2 for the quarter-circle law
        for &z in &[2.1, 2.5, 3.0, 7.0] {
            let want = (z - (z * z - 4.0f64).sqrt()) / 2.0;
            assert!((phi(z, &law).unwrap() - want).abs() < 1e-9, "z = {z}");
        }
        let tb = theta_bar(&law).unwrap();
        assert!((tb - 1.0).abs() < 2e-3, "{tb}");
        for &s in &[1.5, 2.0, 5.0, 30.0] {
            let z = predict_spike_singular_law(s, &law).unwrap();
            assert!((z - (s + 1.0 / s)).abs() < 1e-8, "sigma = {s}: {z}");
        }
        assert!(d_transform(2.0, &law).is_err());
    }

    #[test]
    fn d_transform_rectangular_case() {
        // rectangular spiked limits: threshold c^{1/4}, outlier sqrt((1 + t^2)(c + t^2)) / t
        for &c in &[0.25, 0.5] {
            let law = MpParams::new(1.0, c).unwrap();
            let tb = theta_bar(&law).unwrap();
            assert!((tb - c.powf(0.25)).abs() < 3e-3, "c = {c}: {tb}");
            for &t in &[1.5, 3.0, 10.0] {
                let z = predict_spike_singular_law(t, &law).unwrap();
                let want = ((1.0 + t * t) * (c + t * t)).sqrt() / t;
                assert!((z - want).abs() < 1e-7, "c = {c}, t = {t}: {z} vs {want}");
            }
        }
    }

    #[test]
    fn d_is_decreasing() {
        for &c in &[0.25, 1.0] {
            let law = MpParams::new(1.0, c).unwrap();
            let edge = law.support().1.sqrt();
            let mut prev = f64::INFINITY;
            for k in 1..60 {
                let d = d_transform(edge * (1.0 + 0.05 * k as f64), &law).unwrap();
                assert!(d < prev);
                prev = d;
            }
        }
    }

    #[test]
    fn bound_constants() {
        assert!((a_n(10_000) - 0.063_245_553_203_367_58).abs() < 1e-15);
        assert!((b_n(10_000) - 0.121_394_170_350_811_72).abs() < 1e-15);
    }

    #[test]
    fn planting() {
        let spec = SpikeSpec::new(vec![7.0, 4.0, 3.0], 40, 30, None).unwrap();
        let d: DeformedSample<f64> = build_deformed(&spec, 1, Planting::Diagonal).unwrap();
        assert_eq!(d.w, &d.r + &d.s);
        assert_eq!(d.s[[1, 1]], 4.0);
        let rr: DeformedSample<f64> = build_deformed(&spec, 1, Planting::RandomRotations).unwrap();
        let sv = linalg::singular_values(rr.s.view()).unwrap();
        for (a, b) in sv.iter().zip(&spec.sigmas) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!(sv[3..].iter().all(|x| x.abs() < 1e-10));
        let again: DeformedSample<f64> = build_deformed(&spec, 1, Planting::RandomRotations).unwrap();
        assert_eq!(rr.w, again.w);
    }

    #[test]
    fn approximation_error_identity() {
        let spec = SpikeSpec::new(vec![5.0], 20, 20, None).unwrap();
        let d: DeformedSample<f64> = build_deformed(&spec, 3, Planting::Diagonal).unwrap();
        assert_eq!(approximation_error(&d, &d.s.clone()).unwrap(), 0.0);
        assert!(approximation_error(&d, &Array2::zeros((3, 3))).is_err());
    }
}
