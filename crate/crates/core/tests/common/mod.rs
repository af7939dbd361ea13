#![allow(dead_code)]

use krdistill::nets::FeedForwardNet;
use krdistill::numerics::{gaussian_sample, Matrix, RngState};

pub const FD_STEP: f64 = 1e-5;

/// `|a − n| / max(|a|, |n|, floor)`; the floor keeps near-zero entries from
/// turning rounding noise into large relative errors.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Central differences of `f` with respect to every entry of `x`.
pub fn central_diff(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + FD_STEP;
            let up = f(&probe);
            probe[i] = orig - FD_STEP;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| rel_err(a, n))
        .fold(0.0, f64::max)
}

pub fn randn(rng: &mut RngState, rows: usize, cols: usize, sigma: f64) -> Matrix {
    gaussian_sample(rng, &vec![0.0; cols], sigma, rows).unwrap()
}

/// Random stochastic vector of length `n` (normalized exponentials of N(0, s²)).
pub fn random_distribution(rng: &mut RngState, n: usize, s: f64) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|_| (s * rng.standard_normal()).exp()).collect();
    let total: f64 = v.iter().sum();
    v.into_iter().map(|x| x / total).collect()
}

pub fn random_unit_rows(rng: &mut RngState, rows: usize, cols: usize) -> Matrix {
    randn(rng, rows, cols, 1.0).l2_normalized_rows()
}

pub fn flat_params(net: &FeedForwardNet) -> Vec<f64> {
    net.param_slices().concat()
}

pub fn with_params(net: &FeedForwardNet, flat: &[f64]) -> FeedForwardNet {
    let mut out = net.clone();
    let mut off = 0;
    for s in out.param_slices_mut() {
        let n = s.len();
        s.copy_from_slice(&flat[off..off + n]);
        off += n;
    }
    out
}

/// Fresh nets have zero biases, so a sample whose previous layer is entirely
/// dead sits exactly on a ReLU kink. Jittering every parameter avoids that.
pub fn jittered(net: &FeedForwardNet, rng: &mut RngState) -> FeedForwardNet {
    let p: Vec<f64> = flat_params(net)
        .iter()
        .map(|v| v + 0.1 * rng.standard_normal())
        .collect();
    with_params(net, &p)
}

/// Smallest |pre-activation| over every hidden ReLU for `x`. Central
/// differences are only meaningful when this is well above `FD_STEP`.
pub fn relu_margin(net: &FeedForwardNet, x: &Matrix) -> f64 {
    let mut h = x.clone();
    let mut margin = f64::INFINITY;
    for k in 0..net.num_layers() - 1 {
        let mut z = h.matmul(&net.weights()[k]).unwrap();
        for r in 0..z.rows() {
            for c in 0..z.cols() {
                z[(r, c)] += net.biases()[k][c];
            }
        }
        margin = z.as_slice().iter().fold(margin, |m, v| m.min(v.abs()));
        z.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
        h = z;
    }
    margin
}

pub const KINK_MARGIN: f64 = 100.0 * FD_STEP;
