use ndarray::{array, Array1, Array2, Axis};

use super::confidence::*;
use super::container;
use super::layer::*;
use super::net::*;
use super::train::*;
use crate::data::{Dataset, Split, Targets};
use crate::linalg;

fn rand_matrix(r: usize, c: usize, seed: u64) -> Array2<f64> {
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((r, c), || StandardNormal.sample(&mut rng))
}

#[test]
fn paper_topology_counts() {
    let net: DenseNet<f32> = init_net(
        &[784, 1000, 1000, 1000, 500, 10],
        Init::NormalInvN,
        Activation::Relu,
        true,
        0,
    )
    .unwrap();
    assert_eq!(net.param_count(), 3_292_510);
    assert!(net.slots.iter().all(|s| s.bias().iter().all(|&b| b == 0.0)));
    let w = &net.slots[0].matrices()[0];
    let var = w.iter().map(|x| (*x as f64).powi(2)).sum::<f64>() / w.len() as f64;
    assert!((var * 784.0 - 1.0).abs() < 0.1, "{var}");
}

#[test]
fn init_variances() {
    assert_eq!(Init::He.variance(100, 50), 0.02);
    assert_eq!(Init::Xavier.variance(100, 50), 2.0 / 150.0);
    let a: DenseNet<f64> = init_net(&[3, 4, 2], Init::He, Activation::Abs, false, 9).unwrap();
    let b: DenseNet<f64> = init_net(&[3, 4, 2], Init::He, Activation::Abs, false, 9).unwrap();
    assert_eq!(a, b);
    assert!(init_net::<f64>(&[3], Init::He, Activation::Abs, false, 0).is_err());
}

#[test]
fn identity_abs_forward() {
    let slot = LayerSlot::full(Array2::<f64>::eye(2), Array1::zeros(2)).unwrap();
    let net = DenseNet::new(vec![slot], Activation::Abs, true).unwrap();
    assert_eq!(net.forward(array![-1.0, 2.0].view()).unwrap(), array![1.0, 2.0]);
    assert_eq!(net.forward(array![0.0, 0.0].view()).unwrap(), array![0.0, 0.0]);
    assert!(net.forward(array![1.0].view()).is_err());
}

#[test]
fn split_matches_full() {
    let w1 = rand_matrix(6, 3, 1);
    let w2 = rand_matrix(3, 5, 2);
    let bias = rand_matrix(1, 6, 3).row(0).to_owned();
    let full = LayerSlot::full(w1.dot(&w2), bias.clone()).unwrap();
    let split = LayerSlot::split(w1, w2, bias).unwrap();
    assert_eq!(split.param_count(), 3 * (6 + 5) + 6);
    assert_eq!(full.param_count(), 6 * 5 + 6);
    let x = rand_matrix(100, 5, 4);
    let d = &full.affine(x.view()).unwrap() - &split.affine(x.view()).unwrap();
    assert!(d.iter().all(|v| v.abs() < 1e-8));
    assert!(LayerSlot::split(rand_matrix(2, 3, 0), rand_matrix(2, 3, 0), Array1::zeros(2)).is_err());
}

#[test]
fn softmax_cases() {
    let p = softmax(Array1::<f64>::zeros(10).view());
    assert!(p.iter().all(|&x| (x - 0.1).abs() < 1e-15));
    let p = softmax(array![2f64.ln(), 0.0].view());
    assert!((p[0] - 2.0 / 3.0).abs() < 1e-15 && (p[1] - 1.0 / 3.0).abs() < 1e-15);
    let p = softmax(array![1000.0f64, 999.0, -5.0].view());
    assert!((p.sum() - 1.0).abs() < 1e-12);
}

#[test]
fn confidence_cases() {
    assert_eq!(classification_confidence(array![3.0, 1.0, 0.0].view(), 0).unwrap(), 2.0);
    assert_eq!(
        classification_confidence(array![1.0, 3.0, 0.0].view(), 0).unwrap(),
        -2.0
    );
    assert_eq!(classification_confidence(array![3.0, 3.0, 0.0].view(), 1).unwrap(), 0.0);
    assert!(classification_confidence(array![1.0].view(), 0).is_err());
}

#[test]
fn lr_schedule() {
    let mut c = TrainConfig {
        lr: 0.02,
        lr_decay: 0.96,
        ..Default::default()
    };
    assert!((lr_step(&c, 1) - 0.0192).abs() < 1e-15);
    c.lr_decay = 1.0;
    assert_eq!(lr_step(&c, 17), 0.02);
    c.lr = 0.025;
    c.lr_decay = 0.997;
    assert!((lr_step(&c, 2) - 0.02485).abs() < 1e-5);
}

fn class_data(n: usize, d: usize, k: usize, seed: u64) -> Dataset<f64> {
    let x = rand_matrix(n, d, seed);
    let labels = (0..n).map(|i| i % k).collect();
    Dataset::new(x, Targets::Classes { labels, n_classes: k }, Split::Train).unwrap()
}

#[test]
fn loss_cases() {
    // zero weights give uniform predictions
    let slot = LayerSlot::full(Array2::<f64>::zeros((10, 4)), Array1::zeros(10)).unwrap();
    let net = DenseNet::new(vec![slot], Activation::Relu, true).unwrap();
    let data = class_data(20, 4, 10, 1);
    let l = loss(&net, data.inputs.view(), &data.targets, 0.0, 0.3).unwrap();
    assert!((l.data - 10f64.ln()).abs() < 1e-12);
    assert!((l.total() - 10f64.ln()).abs() < 1e-12);

    // confident correct predictions
    let w = Array2::from_shape_fn((2, 2), |(i, j)| if i == j { 100.0 } else { 0.0 });
    let net = DenseNet::new(
        vec![LayerSlot::full(w, Array1::zeros(2)).unwrap()],
        Activation::None,
        false,
    )
    .unwrap();
    let x = array![[1.0, 0.0], [0.0, 1.0]];
    let t = Targets::Classes {
        labels: vec![0, 1],
        n_classes: 2,
    };
    assert!(loss(&net, x.view(), &t, 0.0, 0.0).unwrap().data < 1e-40);
    let t_bad = Targets::Classes {
        labels: vec![1, 0],
        n_classes: 2,
    };
    let lb = loss(&net, x.view(), &t_bad, 0.0, 0.0).unwrap();
    assert_eq!(lb.clamped, 2);
    assert!((lb.data - 1e12f64.ln()).abs() < 1e-9);
}

/// Collects every trainable value of a net in a fixed order.
fn flat(net: &DenseNet<f64>) -> Vec<f64> {
    let mut v = Vec::new();
    for s in &net.slots {
        for m in s.matrices() {
            v.extend(m.iter());
        }
        v.extend(s.bias().iter());
    }
    v
}

fn set_flat(net: &mut DenseNet<f64>, vals: &[f64]) {
    let mut it = vals.iter();
    for s in &mut net.slots {
        for m in s.matrices_mut() {
            m.iter_mut().for_each(|x| *x = *it.next().unwrap());
        }
        s.bias_mut().iter_mut().for_each(|x| *x = *it.next().unwrap());
    }
}

fn flat_grads(g: &[SlotGrad<f64>]) -> Vec<f64> {
    let mut v = Vec::new();
    for s in g {
        for m in &s.weights {
            v.extend(m.iter());
        }
        v.extend(s.bias.iter());
    }
    v
}

fn finite_difference_check(net: &DenseNet<f64>, x: &Array2<f64>, t: &Targets<f64>, mu1: f64, mu2: f64) {
    let (_, g, _) = gradients(net, x.view(), t, mu1, mu2).unwrap();
    let analytic = flat_grads(&g);
    let theta = flat(net);
    assert_eq!(analytic.len(), theta.len());
    let h = 1e-5;
    let mut probe = net.clone();
    for i in 0..theta.len() {
        let mut p = theta.clone();
        p[i] += h;
        set_flat(&mut probe, &p);
        let up = loss(&probe, x.view(), t, mu1, mu2).unwrap().total();
        p[i] -= 2.0 * h;
        set_flat(&mut probe, &p);
        let down = loss(&probe, x.view(), t, mu1, mu2).unwrap().total();
        let numeric = (up - down) / (2.0 * h);
        let err = (numeric - analytic[i]).abs() / analytic[i].abs().max(numeric.abs()).max(1e-3);
        assert!(err < 1e-4, "param {i}: analytic {} numeric {numeric}", analytic[i]);
    }
}

fn toy_net(act: Activation, final_act: bool, split_middle: bool) -> DenseNet<f64> {
    let mut net: DenseNet<f64> = init_net(&[4, 6, 5, 3], Init::He, act, final_act, 5).unwrap();
    for (l, s) in net.slots.iter_mut().enumerate() {
        let n = s.out_dim();
        *s.bias_mut() = rand_matrix(1, n, 50 + l as u64).row(0).mapv(|v| 0.1 * v);
    }
    if split_middle {
        let bias = net.slots[1].bias().clone();
        net.slots[1] = LayerSlot::split(rand_matrix(5, 2, 7) * 0.5, rand_matrix(2, 6, 8) * 0.5, bias).unwrap();
    }
    net
}

#[test]
fn gradients_match_finite_differences() {
    let x = rand_matrix(7, 4, 11);
    let classes = Targets::Classes {
        labels: vec![0, 1, 2, 0, 1, 2, 1],
        n_classes: 3,
    };
    let values = Targets::Values(rand_matrix(7, 3, 12));
    for act in [Activation::Abs, Activation::Relu, Activation::None] {
        for split in [false, true] {
            let net = toy_net(act, true, split);
            finite_difference_check(&net, &x, &classes, 0.0, 0.0);
            finite_difference_check(&net, &x, &values, 0.0, 0.01);
            let net = toy_net(act, false, split);
            finite_difference_check(&net, &x, &classes, 0.001, 0.01);
        }
    }
}

#[test]
fn momentum_step_reduces_quadratic() {
    // one weight, no bias effect: loss = (w x - y)^2 with x = 1, y = 3
    let slot = LayerSlot::full(array![[0.5f64]], array![0.0]).unwrap();
    let mut net = DenseNet::new(vec![slot], Activation::None, false).unwrap();
    let x = array![[1.0]];
    let t = Targets::Values(array![[3.0]]);
    let before = loss(&net, x.view(), &t, 0.0, 0.0).unwrap().data;
    let (_, g, _) = gradients(&net, x.view(), &t, 0.0, 0.0).unwrap();
    let mut st = OptimizerState::new(&net);
    st.step(&mut net, &g, 0.1, 0.0);
    assert!(loss(&net, x.view(), &t, 0.0, 0.0).unwrap().data < before);
}

#[test]
fn epoch_order_is_seeded_per_epoch() {
    assert_eq!(epoch_order(50, 3, 1), epoch_order(50, 3, 1));
    assert_ne!(epoch_order(50, 3, 1), epoch_order(50, 3, 2));
    let mut o = epoch_order(50, 3, 4);
    o.sort();
    assert_eq!(o, (0..50).collect::<Vec<_>>());
}

#[test]
fn short_final_batch_is_used() {
    let data = class_data(10, 4, 3, 2);
    let mut net: DenseNet<f64> = init_net(&[4, 3], Init::NormalInvN, Activation::None, false, 1).unwrap();
    let mut st = OptimizerState::new(&net);
    let cfg = TrainConfig {
        batch_size: 4,
        mu2: 0.0,
        ..Default::default()
    };
    let m = train_epoch(&mut net, &data, &cfg, &mut st, 0).unwrap();
    assert!(m.train_acc.is_some() && m.train_loss.is_finite());
}

#[test]
fn accuracy_and_good_sets() {
    let data = class_data(40, 4, 2, 8);
    let net: DenseNet<f64> = init_net(&[4, 8, 2], Init::He, Activation::Abs, false, 3).unwrap();
    let acc = accuracy(&net, &data).unwrap();
    let g0 = good_set(&net, &data, 0.0).unwrap();
    assert_eq!(g0.len() as f64 / 40.0, acc);
    let g1 = good_set(&net, &data, 0.3).unwrap();
    assert!(g1.iter().all(|i| g0.contains(i)));
    assert!(good_set(&net, &data, 1e9).unwrap().is_empty());

    // all ties
    let zero = DenseNet::new(
        vec![LayerSlot::full(Array2::<f64>::zeros((2, 4)), Array1::zeros(2)).unwrap()],
        Activation::Relu,
        true,
    )
    .unwrap();
    assert_eq!(accuracy(&zero, &data).unwrap(), 0.0);
}

#[test]
fn bound_factors() {
    let single = DenseNet::new(
        vec![LayerSlot::full(rand_matrix(3, 4, 1), Array1::zeros(3)).unwrap()],
        Activation::Abs,
        true,
    )
    .unwrap();
    let s = array![1.0, -2.0, 0.5, 3.0];
    assert!((g_phi(&single, s.view(), 1).unwrap() - linalg::norm2(s.view())).abs() < 1e-15);
    assert!((h_phi(&single, s.view(), 1).unwrap() - 6.5).abs() < 1e-15);
    assert!(g_phi(&single, s.view(), 2).is_err());

    let net = toy_net(Activation::Abs, true, false);
    // independent recomputation from a stored forward trace
    let tr = net.trace(s.view().insert_axis(Axis(0))).unwrap();
    let a1 = tr.inputs[1].row(0).to_owned();
    let sig3 = linalg::singular_values(net.slots[2].matrices()[0].view()).unwrap()[0];
    let want = a1.iter().map(|v| v * v).sum::<f64>().sqrt() * sig3;
    assert!((g_phi(&net, s.view(), 2).unwrap() - want).abs() < 1e-10);
    let col3 = linalg::max_abs_column_sum(net.slots[2].matrices()[0].view());
    let want_h = a1.iter().map(|v| v.abs()).sum::<f64>() * col3;
    assert!((h_phi(&net, s.view(), 2).unwrap() - want_h).abs() < 1e-10);
}

#[test]
fn container_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let net = toy_net(Activation::Relu, true, true);
    let net32: DenseNet<f32> = DenseNet::new(
        net.slots
            .iter()
            .map(|s| match s {
                LayerSlot::Full { w, bias } => LayerSlot::Full {
                    w: w.mapv(|v| v as f32),
                    bias: bias.mapv(|v| v as f32),
                },
                LayerSlot::Split { w1, w2, bias } => LayerSlot::Split {
                    w1: w1.mapv(|v| v as f32),
                    w2: w2.mapv(|v| v as f32),
                    bias: bias.mapv(|v| v as f32),
                },
            })
            .collect(),
        net.activation,
        net.final_activation,
    )
    .unwrap();
    let m = container::save(&net32, dir.path()).unwrap();
    assert_eq!(m.layers[1].rank, Some(2));
    let back: DenseNet<f32> = container::load(dir.path()).unwrap();
    assert_eq!(back, net32);
    let blob = dir.path().join("layer0_w.f32");
    assert_eq!(std::fs::metadata(&blob).unwrap().len(), 4 * 6 * 4);
    let first = std::fs::read(&blob).unwrap();
    let w00 = f32::from_le_bytes([first[0], first[1], first[2], first[3]]);
    assert_eq!(w00, net32.slots[0].matrices()[0][[0, 0]]);

    std::fs::write(&blob, &first[..10]).unwrap();
    assert!(matches!(
        container::load::<f32>(dir.path()),
        Err(crate::Error::Format { .. })
    ));
}
