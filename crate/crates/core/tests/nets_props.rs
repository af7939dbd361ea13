mod common;

use common::randn;
use krdistill::losses::ce_loss;
use krdistill::nets::*;
use krdistill::numerics::{argmax, Matrix, RngState};

#[test]
fn separable_two_class_problem_reaches_full_accuracy() {
    let mut rng = RngState::new(31);
    let n = 100;
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    while rows.len() < n {
        let x = [rng.uniform() * 2.0 - 1.0, rng.uniform() * 2.0 - 1.0];
        let s = x[0] + 0.5 * x[1];
        if s.abs() < 0.1 {
            continue;
        }
        labels.push((s > 0.0) as usize);
        rows.push(x);
    }
    let x = Matrix::from_rows(&rows).unwrap();
    let mut net = init_net(&mut rng, &[2, 8, 2]).unwrap();
    let mut opt = OptimizerState::for_net(&net, 0.9, 0.0, 0.1);
    for _ in 0..200 {
        let out = net.forward(&x).unwrap();
        let ce = ce_loss(&out.logits, &labels).unwrap();
        let zero = Matrix::zeros(n, net.feature_dim());
        let g = net.backward(&out, &ce.grad_logits, &zero).unwrap();
        opt.step_net(&mut net, &g, 0.1).unwrap();
    }
    let out = net.forward(&x).unwrap();
    let correct = (0..n)
        .filter(|&i| argmax(out.logits.row(i)) == labels[i])
        .count();
    assert_eq!(correct, n);
}

#[test]
fn forward_is_deterministic() {
    let mut rng = RngState::new(32);
    let net = init_net(&mut rng, &[6, 10, 5, 3]).unwrap();
    let x = randn(&mut rng, 9, 6, 1.0);
    let a = net.forward(&x).unwrap();
    let b = net.forward(&x).unwrap();
    assert_eq!(a.logits.as_slice(), b.logits.as_slice());
    assert_eq!(a.features.as_slice(), b.features.as_slice());
}

#[test]
fn he_init_variance() {
    let mut rng = RngState::new(33);
    let net = init_net(&mut rng, &[200, 100, 60]).unwrap();
    for (w, b) in net.weights().iter().zip(net.biases()) {
        let fan_in = w.rows() as f64;
        let v = w.as_slice();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64;
        let expect = 2.0 / fan_in;
        assert!((var - expect).abs() <= 0.2 * expect, "{var} vs {expect}");
        assert!(b.iter().all(|&x| x == 0.0));
    }
}

#[test]
fn model_file_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.krdnet");
    let mut rng = RngState::new(34);
    let mut net = init_net(&mut rng, &[4, 7, 3]).unwrap();
    for s in net.param_slices_mut() {
        s.iter_mut().for_each(|v| *v += 1e-3 * rng.standard_normal());
    }
    net.save(&path).unwrap();
    let back = FeedForwardNet::load(&path).unwrap();
    assert_eq!(back, net);
    let bits = |n: &FeedForwardNet| -> Vec<u64> {
        n.param_slices().concat().iter().map(|v| v.to_bits()).collect()
    };
    assert_eq!(bits(&back), bits(&net));
}

#[test]
fn cosine_schedule_endpoints() {
    assert_eq!(cosine_lr(0, 10, 0.1).unwrap(), 0.1);
    let last = cosine_lr(9, 10, 0.1).unwrap();
    assert!(last > 0.0 && last < 0.01);
    let mut prev = f64::INFINITY;
    for e in 0..10 {
        let lr = cosine_lr(e, 10, 0.1).unwrap();
        assert!(lr <= prev);
        prev = lr;
    }
}
