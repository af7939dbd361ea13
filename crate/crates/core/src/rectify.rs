//! Teacher knowledge rectification.
//!
//! Representation side: per-class means of normalized teacher features are
//! accumulated with an exponential moving average, pushed apart on the unit
//! sphere by minimizing `(1/C) Σ_i log Σ_j exp(μ_i · μ_j)`, and every teacher
//! feature is shifted toward its class target by `w_c · μ̂_c`, where
//! `w_c = C / (n_c Σ_i 1/n_i)` grows as the class gets rarer.
//!
//! Prediction side: a misclassified teacher distribution gets its maximum
//! probability moved onto the target class, and all non-target entries are
//! scaled by the single factor that restores `Σ = 1`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{ClassCounts, LabeledDataset};
use crate::error::{KrdError, Result};
use crate::nets::{parse_number_line, FeedForwardNet};
use crate::numerics::{dot, fmt_row, log_sum_exp, normalize_in_place, Matrix};

pub const MEANS_MAGIC: &str = "KRDMEANS 1";

/// Default EMA rate.
pub const DEFAULT_ALPHA: f64 = 0.8;
pub const DEFAULT_IDEAL_STEPS: usize = 2000;
pub const DEFAULT_IDEAL_STEP_SIZE: f64 = 0.1;

/// Distributions with `max(p)` at least this close to 1 rectify to a one-hot.
const ONE_HOT_EPS: f64 = 1e-9;
/// A target within this of the maximum counts as correctly classified.
const TIE_EPS: f64 = 1e-12;

const FORWARD_CHUNK: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    means: Matrix,
    seen: Vec<usize>,
    alpha: f64,
}

impl ClassStats {
    pub fn new(classes: usize, dim: usize, alpha: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&alpha) {
            return Err(KrdError::invalid(format!("EMA rate must lie in [0, 1), got {alpha}")));
        }
        Ok(ClassStats {
            means: Matrix::zeros(classes, dim),
            seen: vec![0; classes],
            alpha,
        })
    }

    pub fn classes(&self) -> usize {
        self.seen.len()
    }

    pub fn dim(&self) -> usize {
        self.means.cols()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn seen(&self) -> &[usize] {
        &self.seen
    }

    /// Mean of class `c`, or `None` before its first example.
    pub fn mean(&self, c: usize) -> Option<&[f64]> {
        (self.seen.get(c).copied().unwrap_or(0) > 0).then(|| self.means.row(c))
    }

    /// All means. Fails if any class is still unseen.
    pub fn means(&self) -> Result<&Matrix> {
        match self.seen.iter().position(|&s| s == 0) {
            Some(class) => Err(KrdError::MissingClass { class }),
            None => Ok(&self.means),
        }
    }

    /// First example sets the mean; later ones blend in with `μ ← α μ + (1 − α) f`.
    pub fn ema_update(&mut self, c: usize, feature: &[f64]) -> Result<()> {
        if c >= self.classes() {
            return Err(KrdError::invalid(format!(
                "class {c} out of range for {} classes",
                self.classes()
            )));
        }
        if feature.len() != self.dim() {
            return Err(KrdError::invalid(format!(
                "feature length {} does not match statistics dim {}",
                feature.len(),
                self.dim()
            )));
        }
        let a = self.alpha;
        let first = self.seen[c] == 0;
        let row = self.means.row_mut(c);
        if first {
            row.copy_from_slice(feature);
        } else {
            for (m, &f) in row.iter_mut().zip(feature) {
                *m = a * *m + (1.0 - a) * f;
            }
        }
        self.seen[c] += 1;
        Ok(())
    }
}

/// One pass over `data` in stored order, folding each ℓ2-normalized teacher
/// feature into its class mean.
pub fn compute_class_means(
    teacher: &FeedForwardNet,
    data: &LabeledDataset,
    alpha: f64,
) -> Result<ClassStats> {
    if teacher.input_dim() != data.dim() {
        return Err(KrdError::invalid(format!(
            "teacher expects {} inputs, data has {}",
            teacher.input_dim(),
            data.dim()
        )));
    }
    let mut stats = ClassStats::new(data.classes(), teacher.feature_dim(), alpha)?;
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(FORWARD_CHUNK) {
        let x = data.features().select_rows(chunk);
        let feats = teacher.forward(&x)?.features.l2_normalized_rows();
        for (k, &i) in chunk.iter().enumerate() {
            stats.ema_update(data.labels()[i], feats.row(k))?;
        }
    }
    stats.means()?;
    Ok(stats)
}

/// Optimized class targets, one unit-norm row per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdealMeans {
    targets: Matrix,
}

impl IdealMeans {
    pub fn new(targets: Matrix) -> Result<Self> {
        for (c, r) in targets.iter_rows().enumerate() {
            let n = crate::numerics::norm(r);
            if (n - 1.0).abs() > 1e-9 {
                return Err(KrdError::invalid(format!("ideal mean {c} has norm {n}, expected 1")));
            }
        }
        Ok(IdealMeans { targets })
    }

    pub fn targets(&self) -> &Matrix {
        &self.targets
    }

    pub fn classes(&self) -> usize {
        self.targets.rows()
    }

    pub fn dim(&self) -> usize {
        self.targets.cols()
    }

    /// Largest off-diagonal dot product between targets.
    pub fn max_pairwise_dot(&self) -> f64 {
        pairwise_dots(&self.targets).into_iter().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{MEANS_MAGIC}\n{} {}\n", self.classes(), self.dim());
        for r in self.targets.iter_rows() {
            s.push_str(&fmt_row(r));
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let perr = |line: usize, message: String| KrdError::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        match lines.next() {
            Some((_, l)) if l.trim() == MEANS_MAGIC => {}
            _ => return Err(perr(1, format!("expected `{MEANS_MAGIC}`"))),
        }
        let (n, dims) = lines.next().ok_or_else(|| perr(2, "missing dims line".into()))?;
        let dims: Vec<usize> = dims
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| perr(n, format!("bad dimension `{t}`"))))
            .collect::<Result<_>>()?;
        let [c, d] = dims[..] else {
            return Err(perr(n, "dims line must hold `classes dim`".into()));
        };
        let mut data = Vec::with_capacity(c * d);
        for k in 0..c {
            let (n, l) = lines
                .next()
                .ok_or_else(|| perr(3 + k, format!("missing row {k}")))?;
            data.extend(parse_number_line(l, d, path, n)?);
        }
        IdealMeans::new(Matrix::from_vec(c, d, data)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| KrdError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| KrdError::io(path, e))?;
        Self::from_text(&text, path)
    }
}

fn pairwise_dots(m: &Matrix) -> Vec<f64> {
    let mut out = Vec::new();
    for i in 0..m.rows() {
        for j in i + 1..m.rows() {
            out.push(dot(m.row(i), m.row(j)));
        }
    }
    out
}

/// `(1/C) Σ_i log Σ_j exp(μ_i · μ_j)`, diagonal included.
pub fn ideal_means_objective(mu: &Matrix) -> f64 {
    let gram = mu.matmul_bt(mu).expect("square gram");
    let c = mu.rows();
    let total: f64 = gram
        .iter_rows()
        .map(|r| log_sum_exp(r).expect("non-empty row"))
        .sum();
    total / c as f64
}

/// Euclidean gradient of [`ideal_means_objective`]:
/// `∂L/∂μ_k = (1/C) (Σ_j P_kj μ_j + Σ_i P_ik μ_i)` with `P` the row softmax of the Gram matrix.
pub fn ideal_means_gradient(mu: &Matrix) -> Matrix {
    let c = mu.rows();
    let gram = mu.matmul_bt(mu).expect("square gram");
    let p = crate::numerics::softmax_rows(&gram, 1.0).expect("finite gram");
    let mut sym = p.clone();
    for i in 0..c {
        for j in 0..c {
            sym[(i, j)] = p[(i, j)] + p[(j, i)];
        }
    }
    let mut g = sym.matmul(mu).expect("compatible");
    g.scale(1.0 / c as f64);
    g
}

/// Result of a projected descent run.
#[derive(Debug, Clone)]
pub struct IdealMeansRun {
    pub means: IdealMeans,
    pub objective_trace: Vec<f64>,
    pub final_step_size: f64,
}

/// Projected gradient descent on the unit sphere from explicit starting rows.
/// A step that would raise the objective is retried at half the step size.
pub fn optimize_ideal_means_from(init: &Matrix, steps: usize, step_size: f64) -> Result<IdealMeansRun> {
    if init.rows() < 2 {
        return Err(KrdError::invalid("ideal means need at least two classes"));
    }
    if init.cols() < 2 {
        return Err(KrdError::invalid("ideal means need feature dimension >= 2"));
    }
    if !(step_size > 0.0) {
        return Err(KrdError::invalid(format!("step size must be positive, got {step_size}")));
    }
    let mut mu = init.clone();
    for c in 0..mu.rows() {
        if normalize_in_place(mu.row_mut(c)) <= 0.0 {
            return Err(KrdError::Degenerate(format!("initial mean of class {c} has zero norm")));
        }
    }
    let mut eta = step_size;
    let mut obj = ideal_means_objective(&mu);
    let mut trace = Vec::with_capacity(steps + 1);
    trace.push(obj);
    'outer: for _ in 0..steps {
        let g = ideal_means_gradient(&mu);
        loop {
            let mut cand = mu.clone();
            cand.add_scaled(&g, -eta)?;
            let mut ok = true;
            for c in 0..cand.rows() {
                ok &= normalize_in_place(cand.row_mut(c)) > 0.0;
            }
            let cand_obj = ideal_means_objective(&cand);
            if ok && cand_obj <= obj {
                mu = cand;
                obj = cand_obj;
                break;
            }
            eta *= 0.5;
            if eta < step_size * 1e-12 {
                // no descent direction left at machine precision
                break 'outer;
            }
        }
        trace.push(obj);
    }
    Ok(IdealMeansRun {
        means: IdealMeans { targets: mu },
        objective_trace: trace,
        final_step_size: eta,
    })
}

/// Ideal means initialized from the teacher's class means.
pub fn optimize_ideal_means(init: &ClassStats, steps: usize, step_size: f64) -> Result<IdealMeans> {
    Ok(optimize_ideal_means_from(init.means()?, steps, step_size)?.means)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights(pub Vec<f64>);

impl ClassWeights {
    pub fn uniform(classes: usize) -> Self {
        ClassWeights(vec![1.0; classes])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, c: usize) -> f64 {
        self.0[c]
    }
}

/// `w_c = C / (n_c Σ_i 1/n_i)`.
pub fn class_weights(counts: &ClassCounts) -> Result<ClassWeights> {
    if let Some(c) = counts.first_empty() {
        return Err(KrdError::invalid(format!("class {c} has a zero count")));
    }
    if counts.classes() == 0 {
        return Err(KrdError::invalid("no classes"));
    }
    let c = counts.classes() as f64;
    let inv_sum: f64 = counts.as_slice().iter().map(|&n| 1.0 / n as f64).sum();
    Ok(ClassWeights(
        counts
            .as_slice()
            .iter()
            .map(|&n| c / (n as f64 * inv_sum))
            .collect(),
    ))
}

/// `f̂_k = f_k + w_{y_k} μ̂_{y_k}`, no renormalization.
pub fn rectify_features(
    features: &Matrix,
    labels: &[usize],
    ideal: &IdealMeans,
    weights: &ClassWeights,
) -> Result<Matrix> {
    if features.cols() != ideal.dim() {
        return Err(KrdError::invalid(format!(
            "features have dim {}, ideal means have dim {}",
            features.cols(),
            ideal.dim()
        )));
    }
    if features.rows() != labels.len() {
        return Err(KrdError::invalid("one label per feature row required"));
    }
    if weights.0.len() != ideal.classes() {
        return Err(KrdError::invalid("class weights and ideal means disagree on class count"));
    }
    let mut out = features.clone();
    for (k, &y) in labels.iter().enumerate() {
        if y >= ideal.classes() {
            return Err(KrdError::invalid(format!("label {y} out of range")));
        }
        let w = weights.0[y];
        for (o, &m) in out.row_mut(k).iter_mut().zip(ideal.targets.row(y)) {
            *o += w * m;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RectifiedPrediction {
    pub probs: Vec<f64>,
    /// Multiplier applied to every non-target entry (1 when untouched).
    pub scale: f64,
    pub was_rectified: bool,
}

pub fn rectify_prediction(p: &[f64], target: usize) -> Result<RectifiedPrediction> {
    if target >= p.len() {
        return Err(KrdError::invalid(format!(
            "target {target} out of range for {} classes",
            p.len()
        )));
    }
    crate::numerics::ensure_stochastic(p, "rectify_prediction")?;
    let m = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if p[target] >= m - TIE_EPS {
        return Ok(RectifiedPrediction {
            probs: p.to_vec(),
            scale: 1.0,
            was_rectified: false,
        });
    }
    let total: f64 = p.iter().sum();
    let m = m / total;
    let mut probs: Vec<f64> = p.iter().map(|&v| v / total).collect();
    if m >= 1.0 - ONE_HOT_EPS {
        probs.iter_mut().for_each(|v| *v = 0.0);
        probs[target] = 1.0;
        return Ok(RectifiedPrediction {
            probs,
            scale: 0.0,
            was_rectified: true,
        });
    }
    let non_target: f64 = probs
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != target)
        .map(|(_, &v)| v)
        .sum();
    // equals (1 - max) / (1 - p_target) for an exactly normalized input
    let scale = (1.0 - m) / non_target;
    for (j, v) in probs.iter_mut().enumerate() {
        *v = if j == target { m } else { *v * scale };
    }
    Ok(RectifiedPrediction {
        probs,
        scale,
        was_rectified: true,
    })
}

/// Row-wise [`rectify_prediction`]. Returns the rectified rows and how many changed.
pub fn rectify_prediction_rows(probs: &Matrix, labels: &[usize]) -> Result<(Matrix, usize)> {
    if probs.rows() != labels.len() {
        return Err(KrdError::invalid("one label per prediction row required"));
    }
    let mut out = Matrix::zeros(probs.rows(), probs.cols());
    let mut changed = 0;
    for (i, &y) in labels.iter().enumerate() {
        let r = rectify_prediction(probs.row(i), y)?;
        changed += r.was_rectified as usize;
        out.row_mut(i).copy_from_slice(&r.probs);
    }
    Ok((out, changed))
}
