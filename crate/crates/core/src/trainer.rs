//! Teacher pretraining, the distillation loop, evaluation, and the five
//! ablation variants.
//!
//! Distillation runs in a fixed order: teacher class means (one pass over
//! the training set), ideal-means optimization, class weights, then the
//! epoch loop. Each run draws from its own RNG streams so that variants
//! sharing a seed see identical student initializations and batch orders.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{
    balanced_eval_split, class_counts, make_exponential_counts, ClassCounts, GaussianMixture,
    ImbalanceProfile, LabeledDataset,
};
use crate::error::{KrdError, Result};
use crate::losses::{
    ce_loss, lrd_loss, rrd_loss, total_loss, vanilla_kd_loss, KdFeatureTerm, LossConfig, LossOutput,
};
use crate::nets::{cosine_lr, init_net, FeedForwardNet, OptimizerState, ProjectorNet};
use crate::numerics::{argmax, softmax_rows, Matrix, RngState};
use crate::rectify::{
    class_weights, compute_class_means, ideal_means_objective, optimize_ideal_means_from,
    rectify_features, rectify_prediction_rows, ClassWeights, IdealMeans,
};

/// RNG stream ids. Every consumer of randomness gets its own.
pub mod streams {
    pub const MIXTURE_CENTERS: u64 = 1;
    pub const TRAIN_SAMPLES: u64 = 2;
    pub const EVAL_SAMPLES: u64 = 3;
    pub const TEACHER_INIT: u64 = 4;
    pub const TEACHER_SHUFFLE: u64 = 5;
    pub const STUDENT_INIT: u64 = 6;
    pub const PROJECTOR_INIT: u64 = 7;
    pub const STUDENT_SHUFFLE: u64 = 8;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Student alone, cross-entropy.
    Ce,
    /// Cross-entropy plus vanilla distillation.
    Vkd,
    /// Cross-entropy plus the representation term.
    RrdOnly,
    /// Cross-entropy plus the logit-rectified term.
    LrdOnly,
    /// Full objective.
    Krd,
}

impl Variant {
    /// Report order.
    pub const ALL: [Variant; 5] = [
        Variant::Ce,
        Variant::Vkd,
        Variant::RrdOnly,
        Variant::LrdOnly,
        Variant::Krd,
    ];

    pub fn short_name(self) -> &'static str {
        match self {
            Variant::Ce => "ce",
            Variant::Vkd => "vkd",
            Variant::RrdOnly => "rrd",
            Variant::LrdOnly => "lrd",
            Variant::Krd => "krd",
        }
    }

    pub fn uses_teacher(self) -> bool {
        self != Variant::Ce
    }

    pub fn uses_rrd(self) -> bool {
        matches!(self, Variant::RrdOnly | Variant::Krd)
    }

    pub fn uses_lrd(self) -> bool {
        matches!(self, Variant::LrdOnly | Variant::Krd)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for Variant {
    type Err = KrdError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ce" => Ok(Variant::Ce),
            "vkd" => Ok(Variant::Vkd),
            "rrd" | "rrd_only" => Ok(Variant::RrdOnly),
            "lrd" | "lrd_only" => Ok(Variant::LrdOnly),
            "krd" => Ok(Variant::Krd),
            other => Err(KrdError::invalid(format!(
                "unknown variant `{other}` (expected one of ce, vkd, rrd_only, lrd_only, krd)"
            ))),
        }
    }
}

/// How classes are split into head / medium / tail groups by training count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupRule {
    /// Classes sorted by count, split into thirds; head is the largest third.
    Thirds,
    /// `n > head_above` is head, `n < tail_below` is tail, the rest medium.
    Thresholds { head_above: usize, tail_below: usize },
}

impl GroupRule {
    pub fn describe(&self) -> String {
        match self {
            GroupRule::Thirds => "count-sorted thirds (head = largest third)".into(),
            GroupRule::Thresholds {
                head_above,
                tail_below,
            } => format!("head: n > {head_above}; tail: n < {tail_below}; medium: otherwise"),
        }
    }

    /// Class ids of the head, medium and tail groups.
    pub fn assign(&self, counts: &ClassCounts) -> Result<[Vec<usize>; 3]> {
        let n = counts.as_slice();
        match *self {
            GroupRule::Thirds => {
                let mut order: Vec<usize> = (0..n.len()).collect();
                order.sort_by(|&a, &b| n[b].cmp(&n[a]).then(a.cmp(&b)));
                let c = n.len();
                let head = c.div_ceil(3);
                let tail = c / 3;
                let mut groups = [
                    order[..head].to_vec(),
                    order[head..c - tail].to_vec(),
                    order[c - tail..].to_vec(),
                ];
                groups.iter_mut().for_each(|g| g.sort_unstable());
                Ok(groups)
            }
            GroupRule::Thresholds {
                head_above,
                tail_below,
            } => {
                let mut groups: [Vec<usize>; 3] = Default::default();
                for (c, &nc) in n.iter().enumerate() {
                    let g = if nc > head_above {
                        0
                    } else if nc < tail_below {
                        2
                    } else {
                        1
                    };
                    groups[g].push(c);
                }
                for (g, name) in groups.iter().zip(["head", "medium", "tail"]) {
                    if g.is_empty() {
                        return Err(KrdError::invalid(format!(
                            "group rule `{}` leaves the {name} group empty",
                            self.describe()
                        )));
                    }
                }
                Ok(groups)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Student epochs.
    pub epochs: usize,
    pub teacher_epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub loss: LossConfig,
    /// Hidden widths; the last one is the feature dimension.
    pub teacher_hidden: Vec<usize>,
    pub student_hidden: Vec<usize>,
    pub projector_layers: usize,
    pub variant: Variant,
    pub ideal_steps: usize,
    pub ideal_step_size: f64,
    pub group_rule: GroupRule,
    /// Use `w ≡ 1` instead of count-based class weights.
    pub force_unit_weights: bool,
    /// Distill the raw teacher distribution instead of the rectified one.
    pub bypass_rectification: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            teacher_epochs: 30,
            batch_size: 64,
            base_lr: 0.02,
            momentum: 0.9,
            weight_decay: 5e-4,
            seed: 0,
            loss: LossConfig::default(),
            teacher_hidden: vec![128, 128, 64],
            student_hidden: vec![32, 16],
            projector_layers: crate::nets::PROJECTOR_HIDDEN_LAYERS,
            variant: Variant::Krd,
            ideal_steps: crate::rectify::DEFAULT_IDEAL_STEPS,
            ideal_step_size: crate::rectify::DEFAULT_IDEAL_STEP_SIZE,
            group_rule: GroupRule::Thirds,
            force_unit_weights: false,
            bypass_rectification: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.teacher_epochs == 0 {
            return Err(KrdError::invalid("epochs must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(KrdError::invalid("batch_size must be >= 1"));
        }
        if !(self.base_lr > 0.0) {
            return Err(KrdError::invalid(format!("base_lr must be > 0, got {}", self.base_lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(KrdError::invalid(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(KrdError::invalid("weight_decay must be >= 0"));
        }
        if self.teacher_hidden.is_empty() || self.student_hidden.is_empty() {
            return Err(KrdError::invalid("teacher and student need at least one hidden layer"));
        }
        if !(self.ideal_step_size > 0.0) {
            return Err(KrdError::invalid("ideal_step_size must be > 0"));
        }
        self.loss.validate()
    }

    pub fn teacher_dims(&self, input: usize, classes: usize) -> Vec<usize> {
        dims(input, &self.teacher_hidden, classes)
    }

    pub fn student_dims(&self, input: usize, classes: usize) -> Vec<usize> {
        dims(input, &self.student_hidden, classes)
    }
}

fn dims(input: usize, hidden: &[usize], classes: usize) -> Vec<usize> {
    let mut d = Vec::with_capacity(hidden.len() + 2);
    d.push(input);
    d.extend_from_slice(hidden);
    d.push(classes);
    d
}

/// Synthetic long-tailed benchmark: a Gaussian mixture with an exponential
/// training profile and a balanced evaluation split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    pub classes: usize,
    pub dim: usize,
    pub n_max: usize,
    pub rho: f64,
    pub eval_per_class: usize,
    pub spread: f64,
    pub sigma: f64,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        BenchmarkSpec {
            classes: 10,
            dim: 32,
            n_max: 1000,
            rho: 100.0,
            eval_per_class: 100,
            spread: 4.0,
            sigma: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Benchmark {
    pub mixture: GaussianMixture,
    pub train: LabeledDataset,
    pub eval: LabeledDataset,
}

impl BenchmarkSpec {
    pub fn profile(&self) -> ImbalanceProfile {
        ImbalanceProfile {
            classes: self.classes,
            n_max: self.n_max,
            rho: self.rho,
        }
    }

    pub fn generate(&self, seed: u64) -> Result<Benchmark> {
        let root = RngState::new(seed);
        let counts = make_exponential_counts(self.profile())?;
        let mixture = GaussianMixture::new(
            &mut root.split(streams::MIXTURE_CENTERS),
            self.classes,
            self.dim,
            self.spread,
            self.sigma,
        )?;
        let train = mixture.sample(&mut root.split(streams::TRAIN_SAMPLES), &counts)?;
        let eval = balanced_eval_split(
            &mut root.split(streams::EVAL_SAMPLES),
            self.eval_per_class,
            &mixture,
        )?;
        Ok(Benchmark {
            mixture,
            train,
            eval,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub overall_top1: f64,
    pub per_class_top1: Vec<f64>,
    pub head_top1: Option<f64>,
    pub medium_top1: Option<f64>,
    pub tail_top1: Option<f64>,
    pub groups: [Vec<usize>; 3],
    pub group_rule: String,
}

/// Top-1 accuracy overall, per class, and per head / medium / tail group.
/// Groups come from `rule` applied to the training counts.
pub fn evaluate(
    net: &FeedForwardNet,
    eval_data: &LabeledDataset,
    train_counts: &ClassCounts,
    rule: &GroupRule,
) -> Result<Metrics> {
    let classes = eval_data.classes();
    if net.output_dim() != classes || train_counts.classes() != classes {
        return Err(KrdError::invalid(format!(
            "net predicts {} classes, eval set has {classes}, training counts have {}",
            net.output_dim(),
            train_counts.classes()
        )));
    }
    if eval_data.is_empty() {
        return Err(KrdError::invalid("empty evaluation set"));
    }
    let groups = rule.assign(train_counts)?;
    let preds = predict(net, eval_data.features())?;
    let mut correct = vec![0usize; classes];
    let mut total = vec![0usize; classes];
    for (&p, &y) in preds.iter().zip(eval_data.labels()) {
        total[y] += 1;
        correct[y] += (p == y) as usize;
    }
    let per_class_top1 = correct
        .iter()
        .zip(&total)
        .map(|(&c, &t)| if t == 0 { 0.0 } else { c as f64 / t as f64 })
        .collect();
    let group_acc = |g: &[usize]| {
        let t: usize = g.iter().map(|&c| total[c]).sum();
        (t > 0).then(|| g.iter().map(|&c| correct[c]).sum::<usize>() as f64 / t as f64)
    };
    Ok(Metrics {
        overall_top1: correct.iter().sum::<usize>() as f64 / eval_data.len() as f64,
        per_class_top1,
        head_top1: group_acc(&groups[0]),
        medium_top1: group_acc(&groups[1]),
        tail_top1: group_acc(&groups[2]),
        groups,
        group_rule: rule.describe(),
    })
}

pub fn predict(net: &FeedForwardNet, x: &Matrix) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(x.rows());
    let idx: Vec<usize> = (0..x.rows()).collect();
    for chunk in idx.chunks(512) {
        let logits = net.forward(&x.select_rows(chunk))?.logits;
        out.extend(logits.iter_rows().map(argmax));
    }
    Ok(out)
}

fn batches(order: &[usize], batch_size: usize) -> impl Iterator<Item = &[usize]> {
    order.chunks(batch_size)
}

/// Trains a teacher with cross-entropy, momentum SGD and a cosine schedule.
pub fn pretrain_teacher(config: &TrainConfig, train: &LabeledDataset) -> Result<FeedForwardNet> {
    config.validate()?;
    if train.is_empty() {
        return Err(KrdError::invalid("empty training set"));
    }
    let root = RngState::new(config.seed);
    let mut net = init_net(
        &mut root.split(streams::TEACHER_INIT),
        &config.teacher_dims(train.dim(), train.classes()),
    )?;
    let mut shuffle = root.split(streams::TEACHER_SHUFFLE);
    let mut opt = OptimizerState::for_net(&net, config.momentum, config.weight_decay, config.base_lr);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..config.teacher_epochs {
        let lr = cosine_lr(epoch, config.teacher_epochs, config.base_lr)?;
        shuffle.shuffle(&mut order);
        for (b, idx) in batches(&order, config.batch_size).enumerate() {
            let batch = train.subset(idx);
            let out = net.forward(batch.features())?;
            if !out.logits.is_finite() {
                return Err(KrdError::NonFinite { epoch, batch: b });
            }
            let ce = ce_loss(&out.logits, batch.labels())?;
            if !ce.value.is_finite() {
                return Err(KrdError::NonFinite { epoch, batch: b });
            }
            let zero = Matrix::zeros(idx.len(), net.feature_dim());
            let g = net.backward(&out, &ce.grad_logits, &zero)?;
            opt.step_net(&mut net, &g, lr)?;
        }
        opt.epoch = epoch + 1;
    }
    Ok(net)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub statistics_secs: f64,
    pub ideal_means_secs: f64,
    pub training_secs: f64,
}

/// Everything a run records. All fields except `timings` are a function of
/// `(config, data)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub variant: Variant,
    pub seed: u64,
    pub config: TrainConfig,
    pub metrics: Metrics,
    /// Mean total loss per epoch (example-weighted over batches).
    pub epoch_losses: Vec<f64>,
    pub teacher_queries: u64,
    pub rectified_predictions: u64,
    /// Ideal-means objective before and after optimization.
    pub ideal_objective: Option<(f64, f64)>,
    pub timings: PhaseTimings,
}

#[derive(Serialize)]
struct MetricsRecord<'a> {
    variant: Variant,
    seed: u64,
    metrics: &'a Metrics,
    epoch_losses: &'a [f64],
    teacher_queries: u64,
    rectified_predictions: u64,
    ideal_objective: Option<(f64, f64)>,
}

impl ExperimentResult {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// The deterministic part of the result (no timings).
    pub fn metrics_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&MetricsRecord {
            variant: self.variant,
            seed: self.seed,
            metrics: &self.metrics,
            epoch_losses: &self.epoch_losses,
            teacher_queries: self.teacher_queries,
            rectified_predictions: self.rectified_predictions,
            ideal_objective: self.ideal_objective,
        })?)
    }
}

/// A trained student together with its projector (if the variant has one).
#[derive(Debug, Clone)]
pub struct StudentRun {
    pub student: FeedForwardNet,
    pub projector: Option<ProjectorNet>,
    pub ideal_means: Option<IdealMeans>,
    pub result: ExperimentResult,
}

/// Trains a student under `config.variant`. `teacher` may be `None` only for
/// the cross-entropy variant.
pub fn train_student(
    config: &TrainConfig,
    teacher: Option<&FeedForwardNet>,
    train: &LabeledDataset,
    eval: &LabeledDataset,
) -> Result<StudentRun> {
    config.validate()?;
    let variant = config.variant;
    let counts = class_counts(train)?;
    if let Some(class) = counts.first_empty() {
        return Err(KrdError::MissingClass { class });
    }
    let teacher = match (variant.uses_teacher(), teacher) {
        (true, Some(t)) => Some(t),
        (true, None) => {
            return Err(KrdError::invalid(format!("variant {variant} needs a teacher")))
        }
        (false, _) => None,
    };
    if let Some(t) = teacher {
        if t.input_dim() != train.dim() || t.output_dim() != train.classes() {
            return Err(KrdError::invalid(format!(
                "teacher maps {} -> {}, data has dim {} and {} classes",
                t.input_dim(),
                t.output_dim(),
                train.dim(),
                train.classes()
            )));
        }
    }
    let loss_cfg = &config.loss;
    let mut timings = PhaseTimings::default();
    let mut teacher_queries = 0u64;

    let mut targets = None;
    let mut ideal_objective = None;
    if variant.uses_rrd() {
        let t = teacher.expect("checked above");
        let start = Instant::now();
        let stats = compute_class_means(t, train, loss_cfg.alpha)?;
        teacher_queries += train.len().div_ceil(512) as u64;
        timings.statistics_secs = start.elapsed().as_secs_f64();

        let start = Instant::now();
        let init = stats.means()?;
        let before = ideal_means_objective(&init.l2_normalized_rows());
        let run = optimize_ideal_means_from(init, config.ideal_steps, config.ideal_step_size)?;
        ideal_objective = Some((before, *run.objective_trace.last().unwrap()));
        timings.ideal_means_secs = start.elapsed().as_secs_f64();
        targets = Some(run.means);
    }
    let weights = if config.force_unit_weights {
        ClassWeights::uniform(train.classes())
    } else {
        class_weights(&counts)?
    };

    let root = RngState::new(config.seed);
    let mut student = init_net(
        &mut root.split(streams::STUDENT_INIT),
        &config.student_dims(train.dim(), train.classes()),
    )?;
    let mut projector = match (&targets, teacher) {
        (Some(_), Some(t)) => Some(ProjectorNet::new(
            &mut root.split(streams::PROJECTOR_INIT),
            student.feature_dim(),
            t.feature_dim(),
            config.projector_layers,
        )?),
        _ => None,
    };
    let mut opt_student =
        OptimizerState::for_net(&student, config.momentum, config.weight_decay, config.base_lr);
    let mut opt_projector = projector
        .as_ref()
        .map(|p| OptimizerState::for_net(&p.net, config.momentum, config.weight_decay, config.base_lr));
    let mut shuffle = root.split(streams::STUDENT_SHUFFLE);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let kd_features = match teacher {
        Some(t) if t.feature_dim() == student.feature_dim() => KdFeatureTerm::Euclidean,
        _ => KdFeatureTerm::Skip,
    };

    let start = Instant::now();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut rectified_predictions = 0u64;
    let classes = train.classes();
    for epoch in 0..config.epochs {
        let lr = cosine_lr(epoch, config.epochs, config.base_lr)?;
        shuffle.shuffle(&mut order);
        let mut epoch_total = 0.0;
        for (b, idx) in batches(&order, config.batch_size).enumerate() {
            let batch = train.subset(idx);
            let labels = batch.labels();
            let rows = idx.len();
            let out = student.forward(batch.features())?;
            if !out.logits.is_finite() {
                return Err(KrdError::NonFinite { epoch, batch: b });
            }
            let ce = ce_loss(&out.logits, labels)?;
            let teacher_out = match teacher {
                Some(t) => {
                    teacher_queries += 1;
                    Some(t.forward(batch.features())?)
                }
                None => None,
            };

            let logit_term = match (variant, &teacher_out) {
                (Variant::Vkd, Some(t)) => {
                    vanilla_kd_loss(&out, t, loss_cfg.tau, kd_features)?.scaled(loss_cfg.kl_scale())
                }
                (Variant::LrdOnly | Variant::Krd, Some(t)) => {
                    let probs = softmax_rows(&t.logits, loss_cfg.tau)?;
                    let probs = if config.bypass_rectification {
                        probs
                    } else {
                        let (rect, n) = rectify_prediction_rows(&probs, labels)?;
                        rectified_predictions += n as u64;
                        rect
                    };
                    lrd_loss(&out.logits, &probs, labels, &weights, loss_cfg)?
                }
                _ => LossOutput::zero(rows, classes),
            };

            let mut projector_grads = None;
            let rrd_term = match (&targets, &teacher_out, projector.as_ref()) {
                (Some(tg), Some(t), Some(proj)) => {
                    let normalized = t.features.l2_normalized_rows();
                    let rectified = rectify_features(&normalized, labels, tg, &weights)?;
                    let student_unit = out.features.l2_normalized_rows();
                    let mut r = rrd_loss(proj, &student_unit, &rectified)?;
                    if let Some(g) = r.loss.grad_features.as_mut() {
                        *g = out.features.l2_normalized_rows_backward(g)?;
                    }
                    projector_grads = Some(r.projector_grads);
                    r.loss
                }
                _ => LossOutput::zero(rows, 0),
            };
            let beta = if variant.uses_rrd() { loss_cfg.beta } else { 0.0 };
            let total = total_loss(beta, &ce, &logit_term, &rrd_term)?;
            if !total.value.is_finite() || !total.grad_logits.is_finite() {
                return Err(KrdError::NonFinite { epoch, batch: b });
            }
            epoch_total += total.value * rows as f64;

            let grad_features = total
                .grad_features
                .unwrap_or_else(|| Matrix::zeros(rows, student.feature_dim()));
            let g = student.backward(&out, &total.grad_logits, &grad_features)?;
            opt_student.step_net(&mut student, &g, lr)?;
            if let (Some(proj), Some(opt), Some(mut pg)) =
                (projector.as_mut(), opt_projector.as_mut(), projector_grads)
            {
                pg.weights.iter_mut().for_each(|w| w.scale(beta));
                pg.biases.iter_mut().flatten().for_each(|v| *v *= beta);
                opt.step_net(&mut proj.net, &pg, lr)?;
            }
        }
        opt_student.epoch = epoch + 1;
        epoch_losses.push(epoch_total / train.len() as f64);
    }
    timings.training_secs = start.elapsed().as_secs_f64();

    let metrics = evaluate(&student, eval, &counts, &config.group_rule)?;
    Ok(StudentRun {
        student,
        projector,
        ideal_means: targets,
        result: ExperimentResult {
            variant,
            seed: config.seed,
            config: config.clone(),
            metrics,
            epoch_losses,
            teacher_queries,
            rectified_predictions,
            ideal_objective,
            timings,
        },
    })
}

/// Full rectified distillation (`variant = krd`).
pub fn distill(
    config: &TrainConfig,
    teacher: &FeedForwardNet,
    train: &LabeledDataset,
    eval: &LabeledDataset,
) -> Result<StudentRun> {
    if config.variant != Variant::Krd {
        return Err(KrdError::invalid(format!(
            "distill runs the krd variant; use run_variant for {}",
            config.variant
        )));
    }
    train_student(config, Some(teacher), train, eval)
}

/// One ablation row: the shared config with `variant` swapped in.
pub fn run_variant(
    variant: Variant,
    config: &TrainConfig,
    teacher: &FeedForwardNet,
    train: &LabeledDataset,
    eval: &LabeledDataset,
) -> Result<ExperimentResult> {
    let cfg = TrainConfig {
        variant,
        ..config.clone()
    };
    Ok(train_student(&cfg, Some(teacher), train, eval)?.result)
}

/// Outcome of one seed of the ablation study.
#[derive(Debug, Clone)]
pub struct SeedAblation {
    pub seed: u64,
    pub teacher: FeedForwardNet,
    pub teacher_metrics: Metrics,
    pub results: Vec<ExperimentResult>,
}

/// Generates the benchmark for `seed`, pretrains a teacher, and runs every variant.
pub fn ablate_seed(bench: &BenchmarkSpec, config: &TrainConfig, seed: u64) -> Result<SeedAblation> {
    let data = bench.generate(seed)?;
    let cfg = TrainConfig {
        seed,
        ..config.clone()
    };
    let teacher = pretrain_teacher(&cfg, &data.train)?;
    let counts = class_counts(&data.train)?;
    let teacher_metrics = evaluate(&teacher, &data.eval, &counts, &cfg.group_rule)?;
    let results = Variant::ALL
        .iter()
        .map(|&v| run_variant(v, &cfg, &teacher, &data.train, &data.eval))
        .collect::<Result<Vec<_>>>()?;
    Ok(SeedAblation {
        seed,
        teacher,
        teacher_metrics,
        results,
    })
}
