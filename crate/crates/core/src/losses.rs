//! Training objectives. Each returns its value together with the gradient
//! on the student's logits and, where it applies, on the student's features.

use serde::{Deserialize, Serialize};

use crate::error::{KrdError, Result};
use crate::nets::{Gradients, NetOutput, ProjectorNet};
use crate::numerics::{kl_divergence, log_sum_exp, softmax_into, Matrix, PROB_FLOOR};
use crate::rectify::ClassWeights;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrdMode {
    /// `w_y · KL(rectified teacher ‖ student)`.
    Canonical,
    /// `Σ_j w q_j log(w q_j / p̂_j)` with `q` the student distribution.
    Literal,
}

impl std::str::FromStr for LrdMode {
    type Err = KrdError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "canonical" => Ok(LrdMode::Canonical),
            "literal" => Ok(LrdMode::Literal),
            other => Err(KrdError::invalid(format!(
                "unknown lrd mode `{other}` (expected canonical or literal)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight of the representation term in the total objective.
    pub beta: f64,
    pub tau: f64,
    /// EMA rate for the teacher class means.
    pub alpha: f64,
    /// Multiply softened-KL terms (and their gradients) by `τ²`.
    pub tau_squared_scaling: bool,
    pub lrd_mode: LrdMode,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            beta: 10.0,
            tau: 2.0,
            alpha: crate::rectify::DEFAULT_ALPHA,
            tau_squared_scaling: true,
            lrd_mode: LrdMode::Canonical,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(KrdError::invalid(format!("beta must be >= 0, got {}", self.beta)));
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(KrdError::invalid(format!("tau must be > 0, got {}", self.tau)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(KrdError::invalid(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        Ok(())
    }

    pub(crate) fn kl_scale(&self) -> f64 {
        if self.tau_squared_scaling {
            self.tau * self.tau
        } else {
            1.0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    pub grad_logits: Matrix,
    /// `None` when the loss does not touch the student features.
    pub grad_features: Option<Matrix>,
}

impl LossOutput {
    pub fn zero(batch: usize, classes: usize) -> Self {
        LossOutput {
            value: 0.0,
            grad_logits: Matrix::zeros(batch, classes),
            grad_features: None,
        }
    }

    /// Multiplies value and gradients by `s`.
    pub fn scaled(mut self, s: f64) -> Self {
        self.value *= s;
        self.grad_logits.scale(s);
        if let Some(g) = self.grad_features.as_mut() {
            g.scale(s);
        }
        self
    }
}

fn check_labels(labels: &[usize], rows: usize, classes: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(KrdError::invalid(format!("{} labels for {rows} rows", labels.len())));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
        return Err(KrdError::invalid(format!("label {l} out of range for {classes} classes")));
    }
    Ok(())
}

fn check_logits(z: &Matrix) -> Result<()> {
    if z.rows() == 0 {
        return Err(KrdError::invalid("empty batch"));
    }
    if !z.is_finite() {
        return Err(KrdError::invalid("non-finite logits"));
    }
    Ok(())
}

/// Mean `−log softmax(z)_y` at temperature 1.
pub fn ce_loss(student_logits: &Matrix, labels: &[usize]) -> Result<LossOutput> {
    check_logits(student_logits)?;
    let (n, c) = student_logits.shape();
    check_labels(labels, n, c)?;
    let inv_n = 1.0 / n as f64;
    let mut grad = Matrix::zeros(n, c);
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let z = student_logits.row(i);
        total += log_sum_exp(z)? - z[y];
        let g = grad.row_mut(i);
        softmax_into(z, 1.0, g);
        g[y] -= 1.0;
        g.iter_mut().for_each(|v| *v *= inv_n);
    }
    Ok(LossOutput {
        value: (total * inv_n).max(0.0),
        grad_logits: grad,
        grad_features: None,
    })
}

/// `(1/N) Σ_i r_i KL(p_i ‖ softmax(z_i/τ))`, gradient `r_i (q_i − p_i) / (τ N)`.
/// `row_weights = None` means every `r_i = 1`.
fn weighted_kl(
    student_logits: &Matrix,
    teacher_probs: &Matrix,
    row_weights: Option<&[f64]>,
    tau: f64,
) -> Result<LossOutput> {
    check_logits(student_logits)?;
    if student_logits.shape() != teacher_probs.shape() {
        return Err(KrdError::invalid(format!(
            "student logits {:?} vs teacher distribution {:?}",
            student_logits.shape(),
            teacher_probs.shape()
        )));
    }
    if !(tau > 0.0) {
        return Err(KrdError::invalid(format!("temperature must be positive, got {tau}")));
    }
    let (n, c) = student_logits.shape();
    let inv_n = 1.0 / n as f64;
    let mut grad = Matrix::zeros(n, c);
    let mut q = vec![0.0; c];
    let mut total = 0.0;
    for i in 0..n {
        let w = row_weights.map_or(1.0, |r| r[i]);
        let p = teacher_probs.row(i);
        softmax_into(student_logits.row(i), tau, &mut q);
        total += w * kl_divergence(p, &q)?;
        let s = w * inv_n / tau;
        for ((g, &qj), &pj) in grad.row_mut(i).iter_mut().zip(&q).zip(p) {
            *g = s * (qj - pj);
        }
    }
    Ok(LossOutput {
        value: total * inv_n,
        grad_logits: grad,
        grad_features: None,
    })
}

/// Selects whether the vanilla KD loss also matches features directly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KdFeatureTerm {
    /// Per-example Euclidean distance between student and teacher features.
    Euclidean,
    /// Prediction term only.
    Skip,
}

/// `(1/N) Σ_i [ ‖f^S_i − f^T_i‖₂ + KL(p^T_i ‖ p^S_i) ]` with `p = softmax(z/τ)`.
pub fn vanilla_kd_loss(
    student: &NetOutput,
    teacher: &NetOutput,
    tau: f64,
    feature_term: KdFeatureTerm,
) -> Result<LossOutput> {
    if student.batch_size() != teacher.batch_size() {
        return Err(KrdError::invalid("student and teacher batch sizes differ"));
    }
    let teacher_probs = crate::numerics::softmax_rows(&teacher.logits, tau)?;
    let mut out = weighted_kl(&student.logits, &teacher_probs, None, tau)?;
    if feature_term == KdFeatureTerm::Euclidean {
        if student.features.cols() != teacher.features.cols() {
            return Err(KrdError::invalid(format!(
                "student feature dim {} differs from teacher feature dim {} and no projector is configured",
                student.features.cols(),
                teacher.features.cols()
            )));
        }
        let (dist, grad) = mean_euclidean(&student.features, &teacher.features)?;
        out.value += dist;
        out.grad_features = Some(grad);
    }
    Ok(out)
}

/// Mean per-row Euclidean distance and its gradient w.r.t. `a`
/// (zero for rows at distance exactly zero).
fn mean_euclidean(a: &Matrix, b: &Matrix) -> Result<(f64, Matrix)> {
    if a.shape() != b.shape() {
        return Err(KrdError::invalid(format!(
            "distance between {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let n = a.rows();
    if n == 0 {
        return Err(KrdError::invalid("empty batch"));
    }
    let inv_n = 1.0 / n as f64;
    let mut grad = Matrix::zeros(n, a.cols());
    let mut total = 0.0;
    for i in 0..n {
        let g = grad.row_mut(i);
        for ((gj, &x), &y) in g.iter_mut().zip(a.row(i)).zip(b.row(i)) {
            *gj = x - y;
        }
        let d = crate::numerics::norm(g);
        total += d;
        if d > 0.0 {
            let s = inv_n / d;
            g.iter_mut().for_each(|v| *v *= s);
        }
    }
    Ok((total * inv_n, grad))
}

/// Representation loss plus the projector's own parameter gradients.
#[derive(Debug, Clone)]
pub struct RrdOutput {
    pub loss: LossOutput,
    pub projector_grads: Gradients,
}

/// `(1/N) Σ_i ‖MLP(f^S_i) − f̂^T_i‖₂`.
pub fn rrd_loss(
    projector: &ProjectorNet,
    student_features: &Matrix,
    rectified_teacher_features: &Matrix,
) -> Result<RrdOutput> {
    if student_features.cols() != projector.input_dim() {
        return Err(KrdError::invalid(format!(
            "projector expects {} inputs, student features have {}",
            projector.input_dim(),
            student_features.cols()
        )));
    }
    if rectified_teacher_features.shape() != (student_features.rows(), projector.output_dim()) {
        return Err(KrdError::invalid(format!(
            "rectified targets {:?}, expected {:?}",
            rectified_teacher_features.shape(),
            (student_features.rows(), projector.output_dim())
        )));
    }
    let out = projector.forward(student_features)?;
    let (value, grad_proj) = mean_euclidean(&out.logits, rectified_teacher_features)?;
    let projector_grads = projector.backward(&out, &grad_proj)?;
    Ok(RrdOutput {
        loss: LossOutput {
            value,
            grad_logits: Matrix::zeros(student_features.rows(), 0),
            grad_features: Some(projector_grads.input.clone()),
        },
        projector_grads,
    })
}

/// Logit-rectified distillation. `rectified_teacher_probs` rows come from
/// rectifying `softmax(z^T / τ)`.
pub fn lrd_loss(
    student_logits: &Matrix,
    rectified_teacher_probs: &Matrix,
    labels: &[usize],
    weights: &ClassWeights,
    config: &LossConfig,
) -> Result<LossOutput> {
    let (n, c) = student_logits.shape();
    check_labels(labels, n, c)?;
    if weights.as_slice().len() != c {
        return Err(KrdError::invalid(format!(
            "{} class weights for {c} classes",
            weights.as_slice().len()
        )));
    }
    let row_w: Vec<f64> = labels.iter().map(|&y| weights.get(y)).collect();
    let out = match config.lrd_mode {
        LrdMode::Canonical => weighted_kl(student_logits, rectified_teacher_probs, Some(&row_w), config.tau)?,
        LrdMode::Literal => literal_lrd(student_logits, rectified_teacher_probs, &row_w, config.tau)?,
    };
    Ok(out.scaled(config.kl_scale()))
}

fn literal_lrd(z: &Matrix, teacher: &Matrix, row_w: &[f64], tau: f64) -> Result<LossOutput> {
    check_logits(z)?;
    if z.shape() != teacher.shape() {
        return Err(KrdError::invalid("student logits and teacher distribution differ in shape"));
    }
    let (n, c) = z.shape();
    let inv_n = 1.0 / n as f64;
    let mut grad = Matrix::zeros(n, c);
    let mut q = vec![0.0; c];
    let mut dq = vec![0.0; c];
    let mut total = 0.0;
    for (i, &w) in row_w.iter().enumerate().take(n) {
        softmax_into(z.row(i), tau, &mut q);
        let p = teacher.row(i);
        let lw = w.ln();
        for j in 0..c {
            let log_ratio = lw + q[j].max(PROB_FLOOR).ln() - p[j].max(PROB_FLOOR).ln();
            total += w * q[j] * log_ratio;
            dq[j] = w * (log_ratio + 1.0);
        }
        let mean_dq: f64 = q.iter().zip(&dq).map(|(a, b)| a * b).sum();
        for ((g, &qj), &dqj) in grad.row_mut(i).iter_mut().zip(&q).zip(&dq) {
            *g = inv_n / tau * qj * (dqj - mean_dq);
        }
    }
    Ok(LossOutput {
        value: total * inv_n,
        grad_logits: grad,
        grad_features: None,
    })
}

/// `CE + LRD + β · RRD`.
pub fn total_loss(beta: f64, ce: &LossOutput, lrd: &LossOutput, rrd: &LossOutput) -> Result<LossOutput> {
    let value = ce.value + lrd.value + beta * rrd.value;
    let mut grad_logits = ce.grad_logits.clone();
    grad_logits.add_scaled(&lrd.grad_logits, 1.0)?;
    if rrd.grad_logits.cols() != 0 {
        grad_logits.add_scaled(&rrd.grad_logits, beta)?;
    }
    let mut grad_features: Option<Matrix> = None;
    for (part, s) in [(ce, 1.0), (lrd, 1.0), (rrd, beta)] {
        if let Some(g) = &part.grad_features {
            match grad_features.as_mut() {
                Some(acc) => acc.add_scaled(g, s)?,
                None => {
                    let mut g = g.clone();
                    g.scale(s);
                    grad_features = Some(g);
                }
            }
        }
    }
    Ok(LossOutput {
        value,
        grad_logits,
        grad_features,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ClassCounts;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn ce_saturates_and_uniform_is_log_c() {
        let out = ce_loss(&m(&[&[50.0, 0.0, 0.0]]), &[0]).unwrap();
        assert!(out.value < 1e-9);
        let out = ce_loss(&m(&[&[0.3; 4], &[0.3; 4]]), &[1, 2]).unwrap();
        assert!((out.value - 4f64.ln()).abs() < 1e-14);
        assert!(ce_loss(&m(&[&[0.0, 0.0]]), &[2]).is_err());
    }

    #[test]
    fn vkd_identity_and_345() {
        let f = m(&[&[0.1, 0.5], &[1.0, -2.0]]);
        let z = m(&[&[0.2, -0.1, 0.4], &[1.0, 2.0, 3.0]]);
        let s = NetOutput::from_parts(f.clone(), z.clone()).unwrap();
        let t = NetOutput::from_parts(f, z.clone()).unwrap();
        assert!(vanilla_kd_loss(&s, &t, 2.0, KdFeatureTerm::Euclidean).unwrap().value.abs() < 1e-15);

        let s = NetOutput::from_parts(m(&[&[0.0, 0.0]]), m(&[&[1.0, 2.0]])).unwrap();
        let t = NetOutput::from_parts(m(&[&[3.0, 4.0]]), m(&[&[1.0, 2.0]])).unwrap();
        let out = vanilla_kd_loss(&s, &t, 2.0, KdFeatureTerm::Euclidean).unwrap();
        assert!((out.value - 5.0).abs() < 1e-15);
        let g = out.grad_features.unwrap();
        assert!((g[(0, 0)] + 0.6).abs() < 1e-15 && (g[(0, 1)] + 0.8).abs() < 1e-15);
    }

    #[test]
    fn vkd_dim_mismatch() {
        let s = NetOutput::from_parts(m(&[&[0.0, 0.0]]), m(&[&[1.0, 2.0]])).unwrap();
        let t = NetOutput::from_parts(m(&[&[3.0, 4.0, 0.0]]), m(&[&[1.0, 2.0]])).unwrap();
        assert!(vanilla_kd_loss(&s, &t, 2.0, KdFeatureTerm::Euclidean).is_err());
        let out = vanilla_kd_loss(&s, &t, 2.0, KdFeatureTerm::Skip).unwrap();
        assert!(out.value.abs() < 1e-15);
        assert!(out.grad_features.is_none());
    }

    #[test]
    fn vkd_kl_term_matches_kernel() {
        let zs = m(&[&[0.2, -0.1, 0.4], &[1.0, 2.0, 3.0]]);
        let zt = m(&[&[1.2, 0.1, -0.4], &[0.0, 0.5, -3.0]]);
        let s = NetOutput::from_parts(Matrix::zeros(2, 1), zs.clone()).unwrap();
        let t = NetOutput::from_parts(Matrix::zeros(2, 1), zt.clone()).unwrap();
        let out = vanilla_kd_loss(&s, &t, 2.0, KdFeatureTerm::Skip).unwrap();
        let ps = crate::numerics::softmax_rows(&zs, 2.0).unwrap();
        let pt = crate::numerics::softmax_rows(&zt, 2.0).unwrap();
        let direct = (kl_divergence(pt.row(0), ps.row(0)).unwrap()
            + kl_divergence(pt.row(1), ps.row(1)).unwrap())
            / 2.0;
        assert!((out.value - direct).abs() < 1e-15);
    }

    #[test]
    fn rrd_identity_projector_345() {
        let net = crate::nets::FeedForwardNet::from_parameters(
            vec![Matrix::identity(2)],
            vec![vec![0.0; 2]],
        )
        .unwrap();
        let proj = ProjectorNet { net };
        let out = rrd_loss(&proj, &m(&[&[0.0, 0.0]]), &m(&[&[3.0, 4.0]])).unwrap();
        assert!((out.loss.value - 5.0).abs() < 1e-15);
        let out = rrd_loss(&proj, &m(&[&[3.0, 4.0]]), &m(&[&[3.0, 4.0]])).unwrap();
        assert_eq!(out.loss.value, 0.0);
        assert!(out.projector_grads.is_zero());
        assert!(rrd_loss(&proj, &m(&[&[3.0, 4.0]]), &m(&[&[3.0, 4.0, 1.0]])).is_err());
    }

    #[test]
    fn lrd_examples() {
        let off = LossConfig {
            tau: 1.0,
            tau_squared_scaling: false,
            ..LossConfig::default()
        };
        // p^S = p̂^T, w = 1
        let z = m(&[&[0.3, -0.2, 1.0]]);
        let p = crate::numerics::softmax_rows(&z, 1.0).unwrap();
        let out = lrd_loss(&z, &p, &[2], &ClassWeights::uniform(3), &off).unwrap();
        assert!(out.value.abs() < 1e-15);

        // w = 2, p̂^T = (1, 0), p^S = (0.5, 0.5)
        let out = lrd_loss(
            &m(&[&[0.0, 0.0]]),
            &m(&[&[1.0, 0.0]]),
            &[0],
            &ClassWeights(vec![2.0, 1.0]),
            &off,
        )
        .unwrap();
        assert!((out.value - 2.0 * 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn lrd_balanced_counts_is_mean_kl() {
        let w = crate::rectify::class_weights(&ClassCounts(vec![7, 7, 7])).unwrap();
        let cfg = LossConfig {
            tau_squared_scaling: false,
            ..LossConfig::default()
        };
        let zs = m(&[&[0.2, -0.1, 0.4], &[1.0, 2.0, 3.0]]);
        let pt = m(&[&[0.2, 0.5, 0.3], &[0.1, 0.1, 0.8]]);
        let out = lrd_loss(&zs, &pt, &[1, 2], &w, &cfg).unwrap();
        let ps = crate::numerics::softmax_rows(&zs, cfg.tau).unwrap();
        let direct = (kl_divergence(pt.row(0), ps.row(0)).unwrap()
            + kl_divergence(pt.row(1), ps.row(1)).unwrap())
            / 2.0;
        assert!((out.value - direct).abs() < 1e-15);
        // τ² scaling on
        let scaled = lrd_loss(&zs, &pt, &[1, 2], &w, &LossConfig::default()).unwrap();
        assert!((scaled.value - 4.0 * out.value).abs() < 1e-14);
    }

    #[test]
    fn literal_mode_evaluates_printed_form() {
        let cfg = LossConfig {
            tau: 1.0,
            tau_squared_scaling: false,
            lrd_mode: LrdMode::Literal,
            ..LossConfig::default()
        };
        let out = lrd_loss(
            &m(&[&[0.0, 0.0]]),
            &m(&[&[0.8, 0.2]]),
            &[0],
            &ClassWeights(vec![2.0, 1.0]),
            &cfg,
        )
        .unwrap();
        let expected = 2.0 * 0.5 * (1.0f64 / 0.8).ln() + 2.0 * 0.5 * (1.0f64 / 0.2).ln();
        assert!((out.value - expected).abs() < 1e-14);
    }

    #[test]
    fn total_loss_arithmetic() {
        let mk = |v: f64| LossOutput {
            value: v,
            grad_logits: Matrix::zeros(1, 2),
            grad_features: None,
        };
        let t = total_loss(10.0, &mk(1.0), &mk(2.0), &mk(0.5)).unwrap();
        assert_eq!(t.value, 8.0);
        let t = total_loss(0.0, &mk(1.0), &mk(2.0), &mk(0.5)).unwrap();
        assert_eq!(t.value, 3.0);
        let t = total_loss(10.0, &mk(0.0), &mk(0.0), &mk(0.0)).unwrap();
        assert_eq!(t.value, 0.0);
        assert!(t.grad_logits.as_slice().iter().all(|&v| v == 0.0));
        assert!(t.grad_features.is_none());
    }
}
