//! Linear-head teacher/student training on vector inputs.
//!
//! Both heads are bias-free linear maps from the input vector: a projection
//! head with K outputs feeding the self-distillation loss, and a classifier
//! head with C outputs feeding the class-weighted cross-entropy. The teacher
//! is an exponential moving average of the student and receives no gradient.
//! All arithmetic is f64.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::metrics::macro_f1_of;

/// Student or teacher parameters. Weight matrices are row-major with one row
/// per input coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    pub d_in: usize,
    pub proj_dim: usize,
    pub classes: usize,
    pub proj: Vec<f64>,
    pub clf: Vec<f64>,
}

impl ToyModel {
    pub fn zeros(d_in: usize, proj_dim: usize, classes: usize) -> Self {
        Self {
            d_in,
            proj_dim,
            classes,
            proj: vec![0.0; d_in * proj_dim],
            clf: vec![0.0; d_in * classes],
        }
    }

    /// Gaussian init with standard deviation `scale`.
    pub fn random<R: Rng>(
        d_in: usize,
        proj_dim: usize,
        classes: usize,
        scale: f64,
        rng: &mut R,
    ) -> Self {
        let mut m = Self::zeros(d_in, proj_dim, classes);
        for w in m.proj.iter_mut().chain(m.clf.iter_mut()) {
            let z: f64 = StandardNormal.sample(rng);
            *w = scale * z;
        }
        m
    }

    pub fn same_shape(&self, other: &ToyModel) -> bool {
        self.d_in == other.d_in && self.proj_dim == other.proj_dim && self.classes == other.classes
    }

    fn check_shape(&self, other: &ToyModel) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "({}, {}, {}) vs ({}, {}, {})",
                self.d_in, self.proj_dim, self.classes, other.d_in, other.proj_dim, other.classes
            )))
        }
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.d_in {
            return Err(Error::ShapeMismatch(format!(
                "input has {} values, model expects {}",
                x.len(),
                self.d_in
            )));
        }
        Ok(())
    }

    fn apply(weights: &[f64], cols: usize, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; cols];
        for (xi, row) in x.iter().zip(weights.chunks_exact(cols)) {
            for (o, w) in out.iter_mut().zip(row) {
                *o += xi * w;
            }
        }
        out
    }

    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        Self::apply(&self.proj, self.proj_dim, x)
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        Self::apply(&self.clf, self.classes, x)
    }

    /// Argmax of the classifier logits; ties go to the lower class.
    pub fn predict(&self, x: &[f64]) -> usize {
        let logits = self.logits(x);
        let mut best = 0;
        for (c, &v) in logits.iter().enumerate() {
            if v > logits[best] {
                best = c;
            }
        }
        best
    }

    pub fn num_params(&self) -> usize {
        self.proj.len() + self.clf.len()
    }

    /// Flat view: projection weights first, then classifier weights.
    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.proj.iter().chain(self.clf.iter())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.proj.iter_mut().chain(self.clf.iter_mut())
    }

    /// `self += a * other`
    pub fn axpy(&mut self, a: f64, other: &ToyModel) {
        for (s, o) in self.params_mut().zip(other.params()) {
            *s += a * o;
        }
    }

    pub fn scale(&mut self, a: f64) {
        for s in self.params_mut() {
            *s *= a;
        }
    }

    /// Euclidean distance between parameter vectors.
    pub fn distance(&self, other: &ToyModel) -> f64 {
        self.params()
            .zip(other.params())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.params().all(|p| p.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmaState {
    pub teacher: ToyModel,
    pub momentum: f64,
}

impl EmaState {
    pub fn new(teacher: ToyModel, momentum: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&momentum) {
            return Err(Error::InvalidConfig(format!(
                "momentum {momentum} outside [0, 1]"
            )));
        }
        Ok(Self { teacher, momentum })
    }

    /// `teacher <- m * teacher + (1 - m) * student`, element-wise.
    pub fn update(&mut self, student: &ToyModel) -> Result<()> {
        self.teacher.check_shape(student)?;
        let m = self.momentum;
        for (t, s) in self.teacher.params_mut().zip(student.params()) {
            *t = m * *t + (1.0 - m) * s;
        }
        Ok(())
    }
}

pub fn ema_update(ema: &EmaState, student: &ToyModel) -> Result<EmaState> {
    let mut next = ema.clone();
    next.update(student)?;
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub lambda_dino: f64,
    pub lambda_sup: f64,
    pub tau_teacher: f64,
    pub tau_student: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_dino: 1.0,
            lambda_sup: 1.0,
            tau_teacher: 0.04,
            tau_student: 0.1,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lambda_dino >= 0.0
            && self.lambda_sup >= 0.0
            && (self.lambda_dino > 0.0 || self.lambda_sup > 0.0)
            && self.tau_teacher > 0.0
            && self.tau_student > 0.0
            && [
                self.lambda_dino,
                self.lambda_sup,
                self.tau_teacher,
                self.tau_student,
            ]
            .iter()
            .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("{self:?}")))
        }
    }
}

/// Per-class loss weights with mean 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassWeights(Vec<f64>);

impl ClassWeights {
    pub fn uniform(classes: usize) -> Self {
        Self(vec![1.0; classes])
    }

    /// Inverse frequency, rescaled to mean 1.
    pub fn from_counts(counts: &[usize]) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::InvalidConfig("no classes".into()));
        }
        if let Some(c) = counts.iter().position(|&n| n == 0) {
            return Err(Error::ZeroCount(c));
        }
        let inv: Vec<f64> = counts.iter().map(|&n| 1.0 / n as f64).collect();
        let mean = inv.iter().sum::<f64>() / inv.len() as f64;
        Ok(Self(inv.into_iter().map(|w| w / mean).collect()))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn class_weights_from_counts(counts: &[usize]) -> Result<ClassWeights> {
    ClassWeights::from_counts(counts)
}

/// Two views of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewPair {
    pub x_teacher: Vec<f64>,
    pub x_student: Vec<f64>,
    pub label: Option<usize>,
}

/// `exp(l / tau)` normalized, with the max subtracted first.
pub fn softmax_temp(logits: &[f64], tau: f64) -> Result<Vec<f64>> {
    Ok(log_softmax_temp(logits, tau)?
        .into_iter()
        .map(f64::exp)
        .collect())
}

fn log_softmax_temp(logits: &[f64], tau: f64) -> Result<Vec<f64>> {
    if tau.is_nan() || tau <= 0.0 {
        return Err(Error::InvalidConfig(format!("temperature {tau}")));
    }
    if logits.iter().any(|l| !l.is_finite()) {
        return Err(Error::NonFinite);
    }
    let scaled: Vec<f64> = logits.iter().map(|l| l / tau).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + scaled.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    Ok(scaled.into_iter().map(|s| s - lse).collect())
}

/// A loss value with its gradient w.r.t. the student parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: ToyModel,
}

/// Cross-entropy from teacher to student projection distributions, averaged
/// over the batch. Teacher sees `x_teacher`, student sees `x_student`.
pub fn dino_loss(
    student: &ToyModel,
    teacher: &ToyModel,
    batch: &[ViewPair],
    cfg: &LossConfig,
) -> Result<LossGrad> {
    if batch.is_empty() {
        return Err(Error::NoSamples);
    }
    student.check_shape(teacher)?;
    let b = batch.len() as f64;
    let mut loss = 0.0;
    let mut grad = ToyModel::zeros(student.d_in, student.proj_dim, student.classes);
    for pair in batch {
        student.check_input(&pair.x_student)?;
        student.check_input(&pair.x_teacher)?;
        let p_t = softmax_temp(&teacher.project(&pair.x_teacher), cfg.tau_teacher)?;
        let log_p_s = log_softmax_temp(&student.project(&pair.x_student), cfg.tau_student)?;
        loss -= p_t.iter().zip(&log_p_s).map(|(t, s)| t * s).sum::<f64>() / b;

        // d/ds_k = (p_s_k - p_t_k) / (tau_s * B), since p_t sums to 1
        let dlogit: Vec<f64> = log_p_s
            .iter()
            .zip(&p_t)
            .map(|(ls, t)| (ls.exp() - t) / (cfg.tau_student * b))
            .collect();
        for (xi, row) in pair
            .x_student
            .iter()
            .zip(grad.proj.chunks_exact_mut(student.proj_dim))
        {
            for (g, d) in row.iter_mut().zip(&dlogit) {
                *g += xi * d;
            }
        }
    }
    Ok(LossGrad { loss, grad })
}

/// Class-weighted cross-entropy of the classifier head on the student view.
/// Every sample must carry a label.
pub fn balanced_ce(
    student: &ToyModel,
    batch: &[ViewPair],
    weights: &ClassWeights,
) -> Result<LossGrad> {
    if batch.is_empty() {
        return Err(Error::NoSamples);
    }
    if weights.len() != student.classes {
        return Err(Error::ShapeMismatch(format!(
            "{} class weights for {} classes",
            weights.len(),
            student.classes
        )));
    }
    let b = batch.len() as f64;
    let mut loss = 0.0;
    let mut grad = ToyModel::zeros(student.d_in, student.proj_dim, student.classes);
    for (i, pair) in batch.iter().enumerate() {
        let y = pair.label.ok_or(Error::Unlabeled(i))?;
        if y >= student.classes {
            return Err(Error::LabelOutOfRange {
                label: y,
                classes: student.classes,
            });
        }
        student.check_input(&pair.x_student)?;
        let w = weights.as_slice()[y];
        let log_p = log_softmax_temp(&student.logits(&pair.x_student), 1.0)?;
        loss -= w * log_p[y] / b;

        let dlogit: Vec<f64> = log_p
            .iter()
            .enumerate()
            .map(|(c, lp)| w * (lp.exp() - if c == y { 1.0 } else { 0.0 }) / b)
            .collect();
        for (xi, row) in pair
            .x_student
            .iter()
            .zip(grad.clf.chunks_exact_mut(student.classes))
        {
            for (g, d) in row.iter_mut().zip(&dlogit) {
                *g += xi * d;
            }
        }
    }
    Ok(LossGrad { loss, grad })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TotalLoss {
    pub dino: f64,
    pub sup: f64,
    pub total: f64,
    pub grad: ToyModel,
}

/// `lambda_dino * dino + lambda_sup * sup`. The supervised term covers the
/// labeled part of the batch and is 0 when nothing is labeled.
pub fn total_loss(
    student: &ToyModel,
    teacher: &ToyModel,
    batch: &[ViewPair],
    weights: &ClassWeights,
    cfg: &LossConfig,
) -> Result<TotalLoss> {
    cfg.validate()?;
    let d = dino_loss(student, teacher, batch, cfg)?;
    let labeled: Vec<ViewPair> = batch
        .iter()
        .filter(|p| p.label.is_some())
        .cloned()
        .collect();
    let s = if labeled.is_empty() {
        LossGrad {
            loss: 0.0,
            grad: ToyModel::zeros(student.d_in, student.proj_dim, student.classes),
        }
    } else {
        balanced_ce(student, &labeled, weights)?
    };

    let mut grad = ToyModel::zeros(student.d_in, student.proj_dim, student.classes);
    grad.axpy(cfg.lambda_dino, &d.grad);
    grad.axpy(cfg.lambda_sup, &s.grad);
    Ok(TotalLoss {
        dino: d.loss,
        sup: s.loss,
        total: cfg.lambda_dino * d.loss + cfg.lambda_sup * s.loss,
        grad,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub proj_dim: usize,
    pub momentum: f64,
    pub init_scale: f64,
    pub seed: u64,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            lr: 0.1,
            batch_size: 16,
            proj_dim: 8,
            momentum: 0.999,
            init_scale: 0.01,
            seed: 0,
            loss: LossConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub dino: f64,
    pub sup: f64,
    pub total: f64,
    pub eval_mf1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub best: ToyModel,
    pub best_epoch: usize,
    pub best_mf1: f64,
    pub trace: Vec<EpochStats>,
}

/// Macro F1 of the classifier head on the student views of `eval`.
pub fn evaluate_model(model: &ToyModel, eval: &[ViewPair]) -> Result<f64> {
    let mut truth = Vec::with_capacity(eval.len());
    let mut preds = Vec::with_capacity(eval.len());
    for (i, p) in eval.iter().enumerate() {
        truth.push(p.label.ok_or(Error::Unlabeled(i))?);
        preds.push(model.predict(&p.x_student));
    }
    macro_f1_of(&truth, &preds, model.classes)
}

/// Mini-batch gradient descent on the total loss with an EMA step after every
/// update. Keeps the snapshot with the highest eval macro F1, earliest epoch
/// on ties.
pub fn train_toy(
    train: &[ViewPair],
    eval: &[ViewPair],
    weights: &ClassWeights,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.loss.validate()?;
    if train.is_empty() || eval.is_empty() {
        return Err(Error::NoSamples);
    }
    if cfg.batch_size == 0 || cfg.proj_dim == 0 {
        return Err(Error::InvalidConfig(
            "batch size and projection dim must be positive".into(),
        ));
    }
    let d_in = train[0].x_student.len();
    let classes = weights.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut student = ToyModel::random(d_in, cfg.proj_dim, classes, cfg.init_scale, &mut rng);
    let mut ema = EmaState::new(student.clone(), cfg.momentum)?;

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ToyModel)> = None;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut dino, mut sup, mut total) = (0.0, 0.0, 0.0);
        let mut steps = 0usize;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<ViewPair> = chunk.iter().map(|&i| train[i].clone()).collect();
            let l = total_loss(&student, &ema.teacher, &batch, weights, &cfg.loss)?;
            if !l.total.is_finite() {
                return Err(Error::Divergence { epoch, step });
            }
            student.axpy(-cfg.lr, &l.grad);
            if !student.is_finite() {
                return Err(Error::Divergence { epoch, step });
            }
            ema.update(&student)?;
            dino += l.dino;
            sup += l.sup;
            total += l.total;
            steps += 1;
        }
        let n = steps as f64;
        let eval_mf1 = evaluate_model(&student, eval)?;
        trace.push(EpochStats {
            epoch,
            dino: dino / n,
            sup: sup / n,
            total: total / n,
            eval_mf1,
        });
        if best.as_ref().is_none_or(|(m, _, _)| eval_mf1 > *m) {
            best = Some((eval_mf1, epoch, student.clone()));
        }
    }

    let (best_mf1, best_epoch, best) = match best {
        Some(b) => b,
        None => (evaluate_model(&student, eval)?, 0, student),
    };
    Ok(TrainOutcome {
        best,
        best_epoch,
        best_mf1,
        trace,
    })
}

/// Gaussian clusters around well-separated class means, each sample seen
/// through two independently perturbed views.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyDataConfig {
    pub per_class: Vec<usize>,
    pub d_in: usize,
    pub separation: f64,
    pub sample_sigma: f64,
    pub view_sigma: f64,
    pub seed: u64,
}

impl Default for ToyDataConfig {
    fn default() -> Self {
        Self {
            per_class: vec![60, 30, 15],
            d_in: 6,
            separation: 3.0,
            sample_sigma: 0.3,
            view_sigma: 0.1,
            seed: 0,
        }
    }
}

pub fn toy_dataset(cfg: &ToyDataConfig) -> Result<Vec<ViewPair>> {
    if cfg.d_in == 0 || cfg.per_class.is_empty() {
        return Err(Error::InvalidConfig("empty toy dataset".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let sample =
        Normal::new(0.0, cfg.sample_sigma).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let view = Normal::new(0.0, cfg.view_sigma).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut out = Vec::new();
    for (class, &n) in cfg.per_class.iter().enumerate() {
        let mut mean: Vec<f64> = (0..cfg.d_in)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        mean.iter_mut().for_each(|v| *v *= cfg.separation / norm);
        for _ in 0..n {
            let base: Vec<f64> = mean.iter().map(|m| m + sample.sample(&mut rng)).collect();
            let x_teacher = base.iter().map(|b| b + view.sample(&mut rng)).collect();
            let x_student = base.iter().map(|b| b + view.sample(&mut rng)).collect();
            out.push(ViewPair {
                x_teacher,
                x_student,
                label: Some(class),
            });
        }
    }
    Ok(out)
}

/// Every `every`-th sample (1-based) goes to the eval split.
pub fn split_eval(data: Vec<ViewPair>, every: usize) -> (Vec<ViewPair>, Vec<ViewPair>) {
    let every = every.max(2);
    let mut train = Vec::new();
    let mut eval = Vec::new();
    for (i, p) in data.into_iter().enumerate() {
        if (i + 1) % every == 0 {
            eval.push(p);
        } else {
            train.push(p);
        }
    }
    (train, eval)
}
