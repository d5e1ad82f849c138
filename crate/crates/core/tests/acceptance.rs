//! End-to-end acceptance run: one PASS/FAIL line per criterion.
//!
//! MNIST is read from `$MNIST_DIR` or `<workspace>/data/mnist`. Curves and
//! reports go to `<workspace>/target/acceptance/`. The process exits non-zero
//! on failure only when `ACCEPTANCE_STRICT=1`.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use ndarray::Array2;
use rmtprune::data::{Dataset, Targets};
use rmtprune::experiment::{self, run_experiment_on, DatasetSpec, RunConfig, SeedRun, Task, Variant};
use rmtprune::nn::{self, evaluate, init_net, Activation, DenseNet, Init, LayerSlot, OptimizerState, TrainConfig};
use rmtprune::pruning::PruneSchedule;
use rmtprune::rmt::{bema_lambda_plus, esd, mp_fit_test, MpParams, Spectrum, Tail};
use rmtprune::spectral;
use rmtprune::spiked::{self, BoundOptions, NoiseModel, Planting, SpikeSpec};
use rmtprune::Result;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn mnist_dir() -> Option<PathBuf> {
    let dir = std::env::var_os("MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| workspace().join("data/mnist"));
    let has = |n: &str| dir.join(n).exists() || dir.join(format!("{n}.gz")).exists();
    (has("train-images-idx3-ubyte") && has("t10k-images-idx3-ubyte")).then_some(dir)
}

fn artifacts() -> PathBuf {
    let d = workspace().join("target/acceptance");
    std::fs::create_dir_all(&d).expect("create target/acceptance");
    d
}

fn mnist(dir: &Path) -> Result<(Dataset<f32>, Dataset<f32>)> {
    DatasetSpec::Mnist {
        dir: dir.to_path_buf(),
        train_limit: Some(10_000),
        test_limit: None,
    }
    .load()
}

fn wishart_bema() -> Result<Outcome> {
    let (lo, hi) = MpParams::new(1.0, 1.0)?.support();
    let w = spiked::sample_gaussian::<f64>(1000, 1000, 1e-3, 2024)?;
    let b = bema_lambda_plus(&esd(w.view())?, 0.1, 0.1)?;
    let pass =
        lo == 0.0 && hi == 4.0 && (3.8..=4.2).contains(&b.lambda_plus) && (0.95..=1.05).contains(&b.sigma_hat_sq);
    Ok(outcome(
        pass,
        format!(
            "support ({lo}, {hi}); lambda_+ {:.4} in [3.8, 4.2]; sigma^2 {:.4} in [0.95, 1.05]",
            b.lambda_plus, b.sigma_hat_sq
        ),
    ))
}

fn spike_spec() -> Result<SpikeSpec> {
    SpikeSpec::new(vec![70.0, 60.0, 50.0, 40.0, 30.0], 3000, 3000, None)
}

fn spiked_asymptotics() -> Result<Outcome> {
    let spec = spike_spec()?;
    let mut worst_rel: f64 = 0.0;
    let mut worst_overlap: f64 = 0.0;
    let mut u5 = Vec::new();
    for seed in 0..3 {
        let sample = spiked::build_deformed::<f64>(&spec, seed, Planting::RandomRotations)?;
        let m = spiked::measure_spikes(&sample, NoiseModel::GaussianRect)?;
        for (s, got) in spec.sigmas.iter().zip(&m.measured_singular) {
            let want = (1.0 + s * s) / s;
            worst_rel = worst_rel.max((got - want).abs() / want);
        }
        let o = m.measured_left_overlap[4];
        worst_overlap = worst_overlap.max((o - 0.99944).abs());
        u5.push(o);
    }
    Ok(outcome(
        worst_rel <= 0.01 && worst_overlap <= 1e-3,
        format!("max relative singular error {worst_rel:.2e} (<= 1e-2); |<u5,u5'>| {u5:.5?}, max deviation from 0.99944 {worst_overlap:.2e} (<= 1e-3)"),
    ))
}

fn approximation_lemma() -> Result<Outcome> {
    let spec = spike_spec()?;
    let mut errs = Vec::new();
    let mut kept = Vec::new();
    for seed in 0..10 {
        let sample = spiked::build_deformed::<f64>(&spec, 100 + seed, Planting::RandomRotations)?;
        let t = spiked::mp_truncate(&sample.w, 0.1, 0.1)?;
        errs.push(spiked::approximation_error(&sample, &t.dense)?);
        kept.push(t.kept);
    }
    let pass = errs.iter().all(|e| (0.9..=1.1).contains(e));
    Ok(outcome(
        pass,
        format!("||S - W'||_2 over 10 seeds: {errs:.4?} (all in [0.9, 1.1]); singular values kept above the BEMA edge: {kept:?}"),
    ))
}

fn f_w_formula() -> Result<Outcome> {
    let f = spiked::f_w(&[5.0], NoiseModel::GaussianRect, 1.0)?;
    Ok(outcome(
        (f - 1.0).abs() <= 0.03,
        format!("f_W({{5}}) = {f:.5}, |f_W - 1| <= 0.03"),
    ))
}

fn train_plain(net: &mut DenseNet<f32>, cfg: &TrainConfig, train: &Dataset<f32>) -> Result<()> {
    let mut state = OptimizerState::new(net);
    for e in 0..cfg.epochs {
        nn::train_epoch(net, train, cfg, &mut state, e)?;
    }
    Ok(())
}

fn threshold_truncation(dir: &Path) -> Result<Outcome> {
    let (train, test) = mnist(dir)?;
    let cfg = TrainConfig {
        epochs: 30,
        seed: 0,
        ..TrainConfig::default()
    };
    let mut net = init_net::<f32>(&[784, 1000, 10], Init::NormalInvN, Activation::Relu, false, 0)?;
    train_plain(&mut net, &cfg, &train)?;
    let base = evaluate(&net, &test)?.accuracy.unwrap_or(0.0);
    let w1 = net.slots[0].dense_weight();
    let factors = spectral::svd_top(w1.view(), 60)?;
    let (a, b) = spectral::split(&factors)?;
    let before = w1.len();
    let after = a.len() + b.len();
    let mut cut = net.clone();
    cut.slots[0] = LayerSlot::split(a, b, net.slots[0].bias().clone())?;
    let acc = evaluate(&cut, &test)?.accuracy.unwrap_or(0.0);
    let reduction = 1.0 - after as f64 / before as f64;
    let analysis = experiment::analyze_weights(&net, 0.1, 0.1, 0.7)?;
    Ok(outcome(
        base >= 0.95 && (acc - base).abs() < 0.01 && reduction >= 0.85,
        format!(
            "test accuracy {:.4} (>= 0.95), top-60 truncation {:.4} (|change| {:.4} < 0.01), W1 params {before} -> {after} ({:.1}% reduction >= 85%); MP edge keeps {:?}",
            base,
            acc,
            (acc - base).abs(),
            100.0 * reduction,
            analysis[0].recommended_k
        ),
    ))
}

fn paired_config(dir: &Path) -> RunConfig {
    let mut c = RunConfig::new(Task::Classify);
    c.dataset = Some(DatasetSpec::Mnist {
        dir: dir.to_path_buf(),
        train_limit: Some(10_000),
        test_limit: None,
    });
    c.topology = vec![784, 1000, 500, 10];
    c.train = TrainConfig::default();
    c.prune = Some(PruneSchedule::default());
    c.seeds = vec![0, 1, 2];
    c.out_dir = artifacts().join("paired");
    c
}

fn algorithm_trend(runs: &(experiment::ExperimentReport, Vec<SeedRun<f32>>)) -> Result<Outcome> {
    let (report, _) = runs;
    let init = report.initial_params as f64;
    let mut reductions = Vec::new();
    let (mut acc_n, mut acc_p) = (0.0, 0.0);
    for &s in &report.seeds {
        let n = report.final_row(s, Variant::Normal).expect("normal rows");
        let p = report.final_row(s, Variant::Pruned).expect("pruned rows");
        reductions.push(100.0 * (1.0 - p.params as f64 / init));
        acc_n += n.test_acc.unwrap_or(0.0);
        acc_p += p.test_acc.unwrap_or(0.0);
    }
    let k = report.seeds.len() as f64;
    let (acc_n, acc_p) = (acc_n / k, acc_p / k);
    let pass = reductions.iter().all(|r| (30.0..=55.0).contains(r)) && acc_p >= acc_n - 0.01;
    Ok(outcome(
        pass,
        format!(
            "final parameter reduction per seed {reductions:.2?}% (each in [30, 55]); mean test accuracy pruned {acc_p:.4} vs unpruned {acc_n:.4} (pruned >= unpruned - 0.01)"
        ),
    ))
}

const FRACTIONS: [f64; 8] = [1.0, 0.5, 0.3, 0.2, 0.1, 0.05, 0.02, 0.01];

fn curve(net: &DenseNet<f32>, baseline: usize, test: &Dataset<f32>) -> Result<Vec<experiment::SweepPoint>> {
    let grid = experiment::analyze::xi_grid_for_fractions(net, &FRACTIONS, baseline);
    experiment::sparsify_sweep(net, &grid, test, Some(baseline))
}

fn sparsification(dir: &Path, runs: &(experiment::ExperimentReport, Vec<SeedRun<f32>>)) -> Result<Outcome> {
    let (_, test) = mnist(dir)?;
    let (report, seeds) = runs;
    let baseline = report.initial_params;
    let budget = baseline / 10;
    let mut csv = String::from("seed,variant,target_fraction,xi,nonzero,kept_fraction,accuracy\n");
    let mut ok = true;
    let mut lines = Vec::new();
    let mut conclusive = true;
    for run in seeds {
        let pruned = run.pruned.as_ref().expect("schedule given");
        for (variant, net) in [(Variant::Pruned, pruned), (Variant::Normal, &run.normal)] {
            for (f, p) in FRACTIONS.iter().zip(curve(net, baseline, &test)?) {
                csv.push_str(&format!(
                    "{},{},{f},{},{},{},{}\n",
                    run.seed,
                    variant.name(),
                    p.xi,
                    p.nonzero,
                    p.kept_fraction,
                    p.accuracy.unwrap_or(f64::NAN)
                ));
            }
        }
        let sparse_at_budget = |net: &DenseNet<f32>| -> Result<(f64, f64)> {
            let xi = experiment::xi_for_budget(net, budget).unwrap_or(f64::INFINITY);
            let pts = experiment::sparsify_sweep(net, &[0.0, xi], &test, Some(baseline))?;
            Ok((pts[0].accuracy.unwrap_or(0.0), pts[1].accuracy.unwrap_or(0.0)))
        };
        let (p0, p1) = sparse_at_budget(pruned)?;
        let (n0, n1) = sparse_at_budget(&run.normal)?;
        ok &= p0 - p1 <= 0.015;
        conclusive &= n0 - n1 >= 0.02;
        lines.push(format!(
            "seed {}: MP-pruned {p0:.4} -> {p1:.4}, unpruned twin {n0:.4} -> {n1:.4} at <= 10% parameters",
            run.seed
        ));
    }
    let path = artifacts().join("sparsification_curves.csv");
    std::fs::write(&path, csv).map_err(|e| rmtprune::Error::Io {
        path: path.clone(),
        source: e,
    })?;
    let verdict = if conclusive {
        "the unpruned twin loses >= 2 points".to_string()
    } else {
        format!("comparison inconclusive; full curves in {}", path.display())
    };
    Ok(outcome(ok, format!("{}; {verdict}", lines.join("; "))))
}

fn finite_difference_gap() -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (act, final_act) in [
        (Activation::Relu, true),
        (Activation::Abs, false),
        (Activation::None, false),
    ] {
        let mut net = init_net::<f64>(&[6, 7, 5, 3], Init::He, act, final_act, 5)?;
        // shift biases so no ReLU/abs input sits at its kink
        for s in &mut net.slots {
            s.bias_mut().mapv_inplace(|_| 0.05);
        }
        let w = net.slots[1].dense_weight();
        let f = spectral::svd(w.view())?;
        let (a, b) = spectral::split(&spectral::leading(&f, 3))?;
        net.slots[1] = LayerSlot::split(a, b, net.slots[1].bias().clone())?;
        let x = Array2::from_shape_fn((4, 6), |(i, j)| ((i * 6 + j) as f64 * 0.37).sin());
        let t = Targets::Classes {
            labels: vec![0, 2, 1, 2],
            n_classes: 3,
        };
        let (mu1, mu2) = (1e-3, 2e-3);
        let (_, grads, _) = nn::gradients(&net, x.view(), &t, mu1, mu2)?;
        let h = 1e-5;
        for l in 0..net.depth() {
            let n_mats = net.slots[l].matrices().len();
            for m in 0..n_mats {
                let shape = net.slots[l].matrices()[m].dim();
                for idx in [(0, 0), (shape.0 - 1, shape.1 - 1), (shape.0 / 2, shape.1 / 2)] {
                    let mut plus = net.clone();
                    plus.slots[l].matrices_mut()[m][idx] += h;
                    let mut minus = net.clone();
                    minus.slots[l].matrices_mut()[m][idx] -= h;
                    let fp = nn::loss(&plus, x.view(), &t, mu1, mu2)?.total();
                    let fm = nn::loss(&minus, x.view(), &t, mu1, mu2)?.total();
                    let num = (fp - fm) / (2.0 * h);
                    let ana = grads[l].weights[m][idx];
                    worst = worst.max((num - ana).abs() / num.abs().max(ana.abs()).max(1e-3));
                }
            }
        }
    }
    Ok(worst)
}

fn pdf_mass(law: &MpParams) -> f64 {
    let (lo, hi) = law.support();
    let n = 40_000;
    let h = std::f64::consts::FRAC_PI_2 / n as f64;
    (0..n)
        .map(|i| {
            let t = (i as f64 + 0.5) * h;
            law.pdf(lo + (hi - lo) * t.sin().powi(2)) * (hi - lo) * (2.0 * t).sin() * h
        })
        .sum()
}

fn property_suites() -> Result<Outcome> {
    let mut parts = Vec::new();
    let mut pass = true;
    let mut record = |name: &str, ok: bool, detail: String| {
        pass &= ok;
        parts.push(format!("{name} {} ({detail})", if ok { "ok" } else { "FAILED" }));
    };

    let fd = finite_difference_gap()?;
    record("gradient-vs-FD", fd < 1e-4, format!("max relative gap {fd:.2e}"));

    let mut norm: f64 = 0.0;
    let mut inv: f64 = 0.0;
    for c in [0.05, 0.25, 0.5, 0.8, 1.0] {
        let law = MpParams::new(0.7, c)?;
        norm = norm.max((pdf_mass(&law) - 1.0).abs());
        for i in 1..50 {
            let p = i as f64 / 50.0;
            inv = inv.max((law.cdf(law.quantile(p, Tail::Lower)?)? - p).abs());
        }
    }
    record("pdf normalization", norm <= 1e-6, format!("{norm:.2e}"));
    record("cdf(quantile(p)) = p", inv <= 1e-6, format!("{inv:.2e}"));

    let w = spiked::sample_gaussian::<f64>(400, 250, 0.01, 8)?;
    let sp = esd(w.view())?;
    let a = bema_lambda_plus(&sp, 0.1, 0.1)?;
    let b = bema_lambda_plus(&sp.scaled(4.0)?, 0.1, 0.1)?;
    record(
        "BEMA scale equivariance",
        b.lambda_plus == 4.0 * a.lambda_plus && b.sigma_hat_sq == 4.0 * a.sigma_hat_sq,
        format!("lambda_+ {} vs 4 x {}", b.lambda_plus, a.lambda_plus),
    );

    let net = init_net::<f64>(&[30, 40, 20, 5], Init::Xavier, Activation::Relu, false, 3)?;
    let f = spectral::svd(net.slots[1].dense_weight().view())?;
    let (w1, w2) = spectral::split(&f)?;
    let mut split = net.clone();
    split.slots[1] = LayerSlot::split(w1, w2, net.slots[1].bias().clone())?;
    let x = Array2::from_shape_fn((16, 30), |(i, j)| ((i + 2 * j) as f64 * 0.11).cos());
    let gap = (&net.forward_batch(x.view())? - &split.forward_batch(x.view())?)
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    record("Split/Full forward", gap <= 1e-8, format!("max gap {gap:.2e}"));

    let spec = SpikeSpec::new(vec![12.0, 8.0, 5.0], 300, 200, None)?;
    let sample = spiked::build_deformed::<f64>(&spec, 77, Planting::RandomRotations)?;
    let rep = spiked::verify_pruning_bounds(
        &sample,
        None,
        &BoundOptions {
            probes: 1000,
            probe_seed: 77,
            ..BoundOptions::default()
        },
    )?;
    record(
        "lemma bound",
        rep.lemma_violations == 0 && rep.probes.len() == 1000,
        format!("{} violations over {} probes", rep.lemma_violations, rep.probes.len()),
    );

    let mut mono = true;
    for seed in 0..5 {
        let s = spiked::build_deformed::<f64>(
            &SpikeSpec::new(vec![6.0, 3.0], 200, 150, None)?,
            seed,
            Planting::RandomRotations,
        )?;
        let spectrum: Spectrum = esd(s.w.view())?;
        let mut prev = false;
        for i in 1..=200 {
            let p = mp_fit_test(&spectrum, 0.1, 0.1, i as f64 / 200.0)?.pass;
            mono &= !(prev && !p);
            prev = p;
        }
    }
    record("GoF monotone in gamma", mono, "5 spectra x 200 thresholds".into());
    Ok(outcome(pass, parts.join("; ")))
}

fn main() {
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let mut results: Vec<(u32, bool)> = Vec::new();
    let report = |results: &mut Vec<(u32, bool)>,
                  id: u32,
                  name: &str,
                  budget: Duration,
                  run: &mut dyn FnMut() -> Result<Outcome>| {
        let t0 = Instant::now();
        let res = run();
        let dt = t0.elapsed();
        let (pass, detail) = match res {
            Ok(o) => (o.pass && dt <= budget, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        println!(
            "[{}] C{id} {name} ({:.1} s, budget {} s): {detail}",
            if pass { "PASS" } else { "FAIL" },
            dt.as_secs_f64(),
            budget.as_secs()
        );
        results.push((id, pass));
    };
    let min = |m: u64| Duration::from_secs(60 * m);

    report(
        &mut results,
        1,
        "MP bulk edge",
        Duration::from_secs(10),
        &mut wishart_bema,
    );
    report(&mut results, 2, "spiked asymptotics", min(2), &mut spiked_asymptotics);
    report(&mut results, 3, "approximation lemma", min(5), &mut approximation_lemma);
    report(&mut results, 4, "f_W formula", Duration::from_secs(1), &mut f_w_formula);

    match mnist_dir() {
        Some(dir) => {
            report(&mut results, 5, "pruning at the MP threshold", min(10), &mut || {
                threshold_truncation(&dir)
            });
            let t0 = Instant::now();
            let cfg = paired_config(&dir);
            let runs = mnist(&dir).and_then(|(train, test)| {
                let (rep, runs) = run_experiment_on(&cfg, &train, &test, &|_| {})?;
                experiment::run::write_outputs(&cfg.out_dir, &rep, &runs)?;
                Ok((rep, runs))
            });
            let shared = t0.elapsed();
            match runs {
                Ok(runs) => {
                    report(
                        &mut results,
                        6,
                        "iterative pruning parameter reduction",
                        min(15),
                        &mut || {
                            let o = algorithm_trend(&runs)?;
                            Ok(Outcome {
                                detail: format!("{} [paired training {:.0} s]", o.detail, shared.as_secs_f64()),
                                pass: o.pass && shared <= min(15),
                            })
                        },
                    );
                    report(&mut results, 7, "sparsification interaction", min(10), &mut || {
                        sparsification(&dir, &runs)
                    });
                }
                Err(e) => {
                    for (id, name) in [
                        (6, "iterative pruning parameter reduction"),
                        (7, "sparsification interaction"),
                    ] {
                        println!("[FAIL] C{id} {name}: paired training failed: {e}");
                        results.push((id, false));
                    }
                }
            }
        }
        None => {
            for (id, name) in [
                (5, "pruning at the MP threshold"),
                (6, "iterative pruning parameter reduction"),
                (7, "sparsification interaction"),
            ] {
                println!("[FAIL] C{id} {name}: MNIST not found (set MNIST_DIR)");
                results.push((id, false));
            }
        }
    }
    report(&mut results, 8, "property suites", min(5), &mut property_suites);

    let passed = results.iter().filter(|r| r.1).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if strict && passed != results.len() {
        std::process::exit(1);
    }
}
