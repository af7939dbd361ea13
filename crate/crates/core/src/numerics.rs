//! Dense row-major matrices, stable probability kernels, and the seeded
//! random stream every experiment draws from.
//!
//! All arithmetic is `f64`. Reductions run in fixed index order so that
//! results are bit-reproducible across runs and thread counts.

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{KrdError, Result};

/// Probabilities are clamped to at least this value before taking a log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Tolerance on `Σp = 1` accepted from callers handing in distributions.
pub const STOCHASTIC_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(KrdError::invalid(format!(
                "matrix data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(KrdError::invalid(format!(
                    "ragged rows: row {i} has {} entries, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols;
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact(0) panics, and a zero-column matrix has no meaningful rows anyway
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    /// Copies the listed rows, in order, into a new matrix.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(idx.len(), self.cols);
        for (dst, &src) in idx.iter().enumerate() {
            out.row_mut(dst).copy_from_slice(self.row(src));
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(KrdError::invalid(format!(
                "matmul shape mismatch: {}x{} · {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let n = other.cols;
        let mut out = Matrix::zeros(self.rows, n);
        for i in 0..self.rows {
            let a = self.row(i);
            let o = &mut out.data[i * n..(i + 1) * n];
            for (k, &aik) in a.iter().enumerate() {
                if aik == 0.0 {
                    continue;
                }
                let b = &other.data[k * n..(k + 1) * n];
                for (oj, &bj) in o.iter_mut().zip(b) {
                    *oj += aik * bj;
                }
            }
        }
        Ok(out)
    }

    /// `self · otherᵀ`.
    pub fn matmul_bt(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(KrdError::invalid(format!(
                "matmul_bt shape mismatch: {}x{} · ({}x{})ᵀ",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..other.rows {
                out.data[i * other.rows + j] = dot(a, other.row(j));
            }
        }
        Ok(out)
    }

    /// `selfᵀ · other`.
    pub fn matmul_at(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(KrdError::invalid(format!(
                "matmul_at shape mismatch: ({}x{})ᵀ · {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let n = other.cols;
        let mut out = Matrix::zeros(self.cols, n);
        for r in 0..self.rows {
            let a = self.row(r);
            let b = other.row(r);
            for (k, &ark) in a.iter().enumerate() {
                if ark == 0.0 {
                    continue;
                }
                let o = &mut out.data[k * n..(k + 1) * n];
                for (oj, &bj) in o.iter_mut().zip(b) {
                    *oj += ark * bj;
                }
            }
        }
        Ok(out)
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    /// `self += s · other`.
    pub fn add_scaled(&mut self, other: &Matrix, s: f64) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(KrdError::invalid(format!(
                "shape mismatch: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
        Ok(())
    }

    /// Returns a copy with every row scaled to unit ℓ2 norm. Zero rows stay zero.
    pub fn l2_normalized_rows(&self) -> Matrix {
        let mut out = self.clone();
        for i in 0..out.rows {
            normalize_in_place(out.row_mut(i));
        }
        out
    }

    /// Chain rule through `l2_normalized_rows`: maps the gradient on the
    /// normalized rows back to `self`. Zero rows pass zero gradient.
    pub fn l2_normalized_rows_backward(&self, grad: &Matrix) -> Result<Matrix> {
        if grad.shape() != self.shape() {
            return Err(KrdError::invalid(format!(
                "gradient {:?} for rows {:?}",
                grad.shape(),
                self.shape()
            )));
        }
        let mut out = Matrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            let x = self.row(i);
            let n = norm(x);
            if n == 0.0 {
                continue;
            }
            let g = grad.row(i);
            let proj = dot(g, x) / (n * n);
            for ((o, &gj), &xj) in out.row_mut(i).iter_mut().zip(g).zip(x) {
                *o = (gj - proj * xj) / n;
            }
        }
        Ok(out)
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Scales `v` to unit norm and returns the original norm. A zero vector is left as is.
pub fn normalize_in_place(v: &mut [f64]) -> f64 {
    let n = norm(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// Index of the largest entry; the first one wins on ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// `max(row) + log Σ exp(row − max(row))`.
pub fn log_sum_exp(row: &[f64]) -> Result<f64> {
    let m = row
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if row.is_empty() {
        return Err(KrdError::invalid("log_sum_exp of an empty row"));
    }
    if row.len() == 1 {
        return Ok(row[0]);
    }
    let s: f64 = row.iter().map(|&x| (x - m).exp()).sum();
    Ok(m + s.ln())
}

/// Softmax of a single row at temperature `tau`, written into `out`.
/// Inputs are assumed validated.
pub(crate) fn softmax_into(row: &[f64], tau: f64, out: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for (o, &z) in out.iter_mut().zip(row) {
        *o = ((z - m) / tau).exp();
        s += *o;
    }
    out.iter_mut().for_each(|o| *o /= s);
}

/// Row-wise `softmax(logits / temperature)` with max subtraction.
pub fn softmax_rows(logits: &Matrix, temperature: f64) -> Result<Matrix> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(KrdError::invalid(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    if !logits.is_finite() {
        return Err(KrdError::invalid("softmax_rows: non-finite logits"));
    }
    let mut out = Matrix::zeros(logits.rows(), logits.cols());
    for i in 0..logits.rows() {
        softmax_into(logits.row(i), temperature, out.row_mut(i));
    }
    Ok(out)
}

fn check_stochastic(p: &[f64], what: &str) -> Result<()> {
    if p.iter().any(|&x| !(0.0..=1.0 + STOCHASTIC_TOL).contains(&x)) {
        return Err(KrdError::invalid(format!("{what}: entries must lie in [0, 1]")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > STOCHASTIC_TOL {
        return Err(KrdError::invalid(format!("{what}: sums to {s}, expected 1")));
    }
    Ok(())
}

pub(crate) fn ensure_stochastic(p: &[f64], what: &str) -> Result<()> {
    check_stochastic(p, what)
}

/// `Σ p_j ln(p_j / q_j)` with `0 · ln 0 = 0`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(KrdError::invalid(format!(
            "kl_divergence length mismatch: {} vs {}",
            p.len(),
            q.len()
        )));
    }
    check_stochastic(p, "kl_divergence p")?;
    check_stochastic(q, "kl_divergence q")?;
    let mut acc = 0.0;
    for (j, (&pj, &qj)) in p.iter().zip(q).enumerate() {
        if pj <= 0.0 {
            continue;
        }
        if qj <= 0.0 && pj > PROB_FLOOR {
            return Err(KrdError::Domain(format!(
                "kl_divergence support violation at index {j}: p = {pj}, q = 0"
            )));
        }
        acc += pj * (pj.max(PROB_FLOOR).ln() - qj.max(PROB_FLOOR).ln());
    }
    Ok(acc.max(0.0))
}

/// Seeded ChaCha8 stream. Independent child streams are derived from
/// `(seed, stream)` so that components never share random draws.
#[derive(Debug, Clone)]
pub struct RngState {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        RngState { seed, stream, rng }
    }

    /// A fresh stream sharing this state's seed. Does not advance `self`.
    pub fn split(&self, stream: u64) -> RngState {
        RngState::with_stream(self.seed, stream)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.rng);
    }
}

impl RngCore for RngState {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }
    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// `n` rows of `mean + sigma · N(0, I)`.
pub fn gaussian_sample(rng: &mut RngState, mean: &[f64], sigma: f64, n: usize) -> Result<Matrix> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(KrdError::invalid(format!("sigma must be positive, got {sigma}")));
    }
    let d = mean.len();
    let mut out = Matrix::zeros(n, d);
    for i in 0..n {
        for (o, &m) in out.row_mut(i).iter_mut().zip(mean) {
            *o = m + sigma * rng.standard_normal();
        }
    }
    Ok(out)
}

/// 17 significant digits: enough for a lossless decimal round trip.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub(crate) fn fmt_row(row: &[f64]) -> String {
    row.iter().map(|&x| fmt_f64(x)).collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_examples() {
        let m = Matrix::from_rows(&[[0.0, 0.0]]).unwrap();
        let p = softmax_rows(&m, 2.0).unwrap();
        assert_eq!(p.row(0), &[0.5, 0.5]);

        let m = Matrix::from_rows(&[[2f64.ln(), 0.0]]).unwrap();
        let p = softmax_rows(&m, 1.0).unwrap();
        assert!((p[(0, 0)] - 2.0 / 3.0).abs() < 1e-15);
        assert!((p[(0, 1)] - 1.0 / 3.0).abs() < 1e-15);

        let m = Matrix::from_rows(&[[1000.0, 0.0]]).unwrap();
        let p = softmax_rows(&m, 1.0).unwrap();
        assert!((p[(0, 0)] - 1.0).abs() < 1e-12);
        assert!(p[(0, 1)].abs() < 1e-12);
        assert!(p.is_finite());
    }

    #[test]
    fn softmax_rejects_bad_input() {
        let m = Matrix::from_rows(&[[0.0, 1.0]]).unwrap();
        assert!(softmax_rows(&m, 0.0).is_err());
        assert!(softmax_rows(&m, -1.0).is_err());
        let m = Matrix::from_rows(&[[f64::NAN, 1.0]]).unwrap();
        assert!(softmax_rows(&m, 1.0).is_err());
        let m = Matrix::from_rows(&[[f64::INFINITY, 1.0]]).unwrap();
        assert!(softmax_rows(&m, 1.0).is_err());
    }

    #[test]
    fn log_sum_exp_examples() {
        assert!((log_sum_exp(&[0.0, 0.0]).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(log_sum_exp(&[5.0]).unwrap(), 5.0);
        let v = log_sum_exp(&[1000.0, 1000.0]).unwrap();
        assert!((v - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert!(log_sum_exp(&[]).is_err());
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_divergence(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        let v = kl_divergence(&[1.0, 0.0], &[0.5, 0.5]).unwrap();
        assert!((v - 2f64.ln()).abs() < 1e-15);
        let v = kl_divergence(&[0.5, 0.5], &[0.9, 0.1]).unwrap();
        let expected = 0.5 * (0.5f64 / 0.9).ln() + 0.5 * (0.5f64 / 0.1).ln();
        assert!((v - expected).abs() < 1e-15);
        assert!((v - 0.510_826).abs() < 1e-6);
    }

    #[test]
    fn kl_support_violation_is_domain_error() {
        let err = kl_divergence(&[0.5, 0.5], &[1.0, 0.0]).unwrap_err();
        assert!(matches!(err, KrdError::Domain(_)));
        assert!(kl_divergence(&[0.5, 0.5], &[0.2, 0.2, 0.6]).is_err());
    }

    #[test]
    fn gaussian_degenerate_and_deterministic() {
        let mean = [1.5, -2.0, 3.25];
        let m = gaussian_sample(&mut RngState::new(9), &mean, 1e-300, 4).unwrap();
        for r in m.iter_rows() {
            assert_eq!(r, &mean);
        }
        let a = gaussian_sample(&mut RngState::new(42), &mean, 1.0, 16).unwrap();
        let b = gaussian_sample(&mut RngState::new(42), &mean, 1.0, 16).unwrap();
        assert_eq!(a, b);
        let e = gaussian_sample(&mut RngState::new(42), &mean, 1.0, 0).unwrap();
        assert_eq!(e.rows(), 0);
        assert!(gaussian_sample(&mut RngState::new(1), &mean, 0.0, 3).is_err());
    }

    #[test]
    fn gaussian_sample_mean_within_clt_bound() {
        let mean = [0.5, -1.0];
        let sigma = 2.0;
        let n = 100_000;
        let m = gaussian_sample(&mut RngState::new(7), &mean, sigma, n).unwrap();
        for c in 0..2 {
            let avg: f64 = (0..n).map(|r| m[(r, c)]).sum::<f64>() / n as f64;
            assert!((avg - mean[c]).abs() < 5.0 * sigma / (n as f64).sqrt());
        }
    }

    #[test]
    fn split_streams_differ_and_repeat() {
        let root = RngState::new(3);
        let mut a = root.split(1);
        let mut b = root.split(2);
        let mut a2 = root.split(1);
        let xa: Vec<u64> = (0..4).map(|_| a.next_u64()).collect();
        let xb: Vec<u64> = (0..4).map(|_| b.next_u64()).collect();
        let xa2: Vec<u64> = (0..4).map(|_| a2.next_u64()).collect();
        assert_ne!(xa, xb);
        assert_eq!(xa, xa2);
    }

    #[test]
    fn matmul_variants_agree() {
        let a = Matrix::from_rows(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]).unwrap();
        let b = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]).unwrap();
        let ab = a.matmul(&b).unwrap();
        assert_eq!(ab.as_slice(), &[4.0, 5.0, 10.0, 11.0]);
        let bt = Matrix::from_rows(&[[1.0, 0.0, 1.0], [0.0, 1.0, 1.0]]).unwrap();
        assert_eq!(a.matmul_bt(&bt).unwrap(), ab);
        let at = Matrix::from_rows(&[[1.0, 4.0], [2.0, 5.0], [3.0, 6.0]]).unwrap();
        assert_eq!(at.matmul_at(&b).unwrap(), ab);
        assert!(a.matmul(&a).is_err());
    }

    #[test]
    fn fmt_round_trips_bits() {
        for &x in &[0.1, -0.0, 1.0 / 3.0, 1e-300, 6.02214076e23, f64::MIN_POSITIVE] {
            let y: f64 = fmt_f64(x).parse().unwrap();
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}
