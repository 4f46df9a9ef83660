//! Losses, optimizer and training loops for teacher, plain and distilled
//! students.
//!
//! The objective is
//! `L = L_CE + λ1 · Σᵢ L_hintᵢ + λ2 · L_SL` where
//!
//! * `L_hintᵢ` is the mean squared difference between student and teacher
//!   features at stage `i` (batch mean of the per-sample squared norm,
//!   divided by the per-sample element count);
//! * `L_SL = mean_n Σ_c p_s (ln p_s − ln p_t)` with `p = softmax(logits / τ)`.
//!
//! Teacher outputs enter the student's tape as constants, so no gradient
//! can reach the teacher.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::codec::{encode, CodecError, CodecParams};
use crate::model::{HintBundle, Mode, Model, ModelConfig, ModelError};
use crate::synth::{sample_seed, LabeledVideo};
use crate::tensor::{Real, Tape, Tensor, TensorError, Var};
use crate::xform::{assemble_clip, ClipFormat, XformError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DistillError {
    #[error("temperature must be positive, got {0}")]
    Tau(f64),
    #[error("hint bundles differ in length: {student} vs {teacher}")]
    HintCount { student: usize, teacher: usize },
    #[error("hint layer {layer}: student shape {student:?} vs teacher {teacher:?}")]
    HintShape {
        layer: usize,
        student: Vec<usize>,
        teacher: Vec<usize>,
    },
    #[error("hint layer {layer} does not exist in a {stages}-stage model")]
    HintLayer { layer: usize, stages: usize },
    #[error("logit shapes differ: {0:?} vs {1:?}")]
    LogitShape(Vec<usize>, Vec<usize>),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("sample {0} has no complete {1}-frame GOP")]
    NoFullGop(u32, usize),
    #[error("the teacher's RAW clips do not pair with the student's clips: {0}")]
    Pairing(String),
    #[error("clip set has format {actual}, expected {expected}")]
    Format { expected: ClipFormat, actual: ClipFormat },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Xform(#[from] XformError),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

type Result<T, E = DistillError> = core::result::Result<T, E>;

// ---------------------------------------------------------------- losses

/// Mean negative log-likelihood of `labels` under `softmax(logits)`.
pub fn cross_entropy_on<T: Real>(tape: &mut Tape<T>, logits: Var, labels: &[usize]) -> Result<Var> {
    let lp = tape.log_softmax(logits)?;
    Ok(tape.nll(lp, labels)?)
}

/// `mean((student − teacher)²)` over every element of the batch.
pub fn hint_loss_on<T: Real>(tape: &mut Tape<T>, layer: usize, student: Var, teacher: Var) -> Result<Var> {
    let (s, t) = (tape.value(student).shape(), tape.value(teacher).shape());
    if s != t {
        return Err(DistillError::HintShape {
            layer,
            student: s.to_vec(),
            teacher: t.to_vec(),
        });
    }
    let d = tape.sub(student, teacher)?;
    let sq = tape.square(d)?;
    Ok(tape.mean_all(sq)?)
}

/// Tempered KL divergence `KL(softmax(s/τ) ‖ softmax(t/τ))`, averaged over rows.
pub fn soft_logit_loss_on<T: Real>(tape: &mut Tape<T>, student: Var, teacher: Var, tau: T) -> Result<Var> {
    if !(tau > T::zero()) {
        return Err(DistillError::Tau(tau.to_f64_lossy()));
    }
    let (s, t) = (tape.value(student).shape(), tape.value(teacher).shape());
    if s != t || s.len() != 2 {
        return Err(DistillError::LogitShape(s.to_vec(), t.to_vec()));
    }
    let n = s[0];
    let inv = T::one() / tau;
    let ss = tape.scale(student, inv)?;
    let ls = tape.log_softmax(ss)?;
    let ts = tape.scale(teacher, inv)?;
    let lt = tape.log_softmax(ts)?;
    let ps = tape.exp(ls)?;
    let diff = tape.sub(ls, lt)?;
    let prod = tape.mul(ps, diff)?;
    let sum = tape.sum_all(prod)?;
    Ok(tape.scale(sum, T::one() / T::of(n as f64))?)
}

/// Cross-entropy of a logit batch, evaluated without gradients.
pub fn cross_entropy<T: Real>(logits: &Tensor<T>, labels: &[usize]) -> Result<T> {
    let mut tape = Tape::new();
    let l = tape.constant(logits.clone());
    let v = cross_entropy_on(&mut tape, l, labels)?;
    Ok(tape.value(v).data()[0])
}

/// Per-layer hint losses between two bundles.
pub fn hint_loss<T: Real>(student: &HintBundle<T>, teacher: &HintBundle<T>) -> Result<Vec<T>> {
    if student.len() != teacher.len() {
        return Err(DistillError::HintCount {
            student: student.len(),
            teacher: teacher.len(),
        });
    }
    let mut tape = Tape::new();
    student
        .features
        .iter()
        .zip(&teacher.features)
        .enumerate()
        .map(|(i, (s, t))| {
            let (sv, tv) = (tape.constant(s.clone()), tape.constant(t.clone()));
            let l = hint_loss_on(&mut tape, i, sv, tv)?;
            Ok(tape.value(l).data()[0])
        })
        .collect()
}

pub fn soft_logit_loss<T: Real>(student: &Tensor<T>, teacher: &Tensor<T>, tau: T) -> Result<T> {
    let mut tape = Tape::new();
    let (s, t) = (tape.constant(student.clone()), tape.constant(teacher.clone()));
    let l = soft_logit_loss_on(&mut tape, s, t, tau)?;
    Ok(tape.value(l).data()[0])
}

/// `ce + λ1 · Σ hints + λ2 · sl`.
pub fn total_loss(ce: f64, hints: &[f64], sl: f64, lambda1: f64, lambda2: f64) -> f64 {
    ce + lambda1 * hints.iter().sum::<f64>() + lambda2 * sl
}

// ---------------------------------------------------------------- optimizer

/// SGD with classic momentum and L2 weight decay folded into the gradient:
/// `v ← μ·v + (g + wd·p)`, `p ← p − lr·v`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd<T> {
    pub lr: T,
    pub momentum: T,
    pub weight_decay: T,
    velocity: Vec<Vec<T>>,
}

impl<T: Real> Sgd<T> {
    pub fn new(lr: T, momentum: T, weight_decay: T) -> Self {
        Self {
            lr,
            momentum,
            weight_decay,
            velocity: Vec::new(),
        }
    }

    pub fn step<'a>(&mut self, params: impl IntoIterator<Item = &'a mut Tensor<T>>, grads: &[Tensor<T>]) -> Result<()> {
        let params: Vec<&mut Tensor<T>> = params.into_iter().collect();
        if params.len() != grads.len() {
            return Err(TensorError::Dimension {
                op: "sgd_step",
                detail: format!("{} parameters, {} gradients", params.len(), grads.len()),
            }
            .into());
        }
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
        }
        for (i, (p, g)) in params.into_iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || self.velocity[i].len() != p.len() {
                return Err(TensorError::Dimension {
                    op: "sgd_step",
                    detail: format!("parameter {i}: {:?} vs gradient {:?}", p.shape(), g.shape()),
                }
                .into());
            }
            let v = &mut self.velocity[i];
            for ((w, &gr), vel) in p.data_mut().iter_mut().zip(g.data()).zip(v.iter_mut()) {
                *vel = self.momentum * *vel + (gr + self.weight_decay * *w);
                *w = *w - self.lr * *vel;
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------- config

/// Hyperparameters shared by every training run. The distillation fields
/// are ignored by teacher and plain runs.
#[derive(Debug, Clone, PartialEq)]
pub struct DistillConfig {
    pub tau: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Stage indices whose outputs enter the hint loss; `None` means all.
    pub hint_layers: Option<Vec<usize>>,
    pub tau_squared_scaling: bool,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            tau: 4.0,
            lambda1: 1.0,
            lambda2: 1.0,
            hint_layers: None,
            tau_squared_scaling: false,
            epochs: 30,
            batch_size: 4,
            lr: 0.005,
            momentum: 0.9,
            weight_decay: 1e-4,
            seed: 0,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(DistillError::Tau(self.tau));
        }
        let bad = |m: String| Err(DistillError::Config(m));
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return bad(format!(
                "lambdas must be non-negative, got {} and {}",
                self.lambda1, self.lambda2
            ));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive".into());
        }
        if !(self.lr > 0.0 && self.momentum >= 0.0 && self.weight_decay >= 0.0) {
            return bad(format!(
                "lr {} must be positive, momentum {} and weight_decay {} non-negative",
                self.lr, self.momentum, self.weight_decay
            ));
        }
        Ok(())
    }

    fn hint_layers_for(&self, stages: usize) -> Result<Vec<usize>> {
        let layers = self.hint_layers.clone().unwrap_or_else(|| (0..stages).collect());
        if let Some(&layer) = layers.iter().find(|&&l| l >= stages) {
            return Err(DistillError::HintLayer { layer, stages });
        }
        Ok(layers)
    }

    fn sl_weight(&self) -> f64 {
        if self.tau_squared_scaling {
            self.lambda2 * self.tau * self.tau
        } else {
            self.lambda2
        }
    }
}

// ---------------------------------------------------------------- data

/// One training or evaluation item: a single GOP of one video.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ClipItem {
    pub sample_id: u32,
    pub gop: usize,
    pub label: usize,
}

/// Network-ready clips of a dataset in one format, in dataset order.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipSet<T> {
    pub format: ClipFormat,
    pub items: Vec<ClipItem>,
    pub clips: Vec<Tensor<T>>,
}

impl<T: Real> ClipSet<T> {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn labels(&self, idx: &[usize]) -> Vec<usize> {
        idx.iter().map(|&i| self.items[i].label).collect()
    }

    pub fn batch(&self, idx: &[usize]) -> Result<Tensor<T>> {
        let refs: Vec<&Tensor<T>> = idx.iter().map(|&i| &self.clips[i]).collect();
        Ok(Tensor::stack(&refs)?)
    }
}

/// Encodes every video once and assembles clips in each requested format.
/// Only GOPs of exactly `clip_len` frames become clips.
pub fn prepare_clips<T: Real>(
    data: &[LabeledVideo],
    formats: &[ClipFormat],
    codec: CodecParams,
    clip_len: usize,
) -> Result<Vec<ClipSet<T>>> {
    let mut sets: Vec<ClipSet<T>> = formats
        .iter()
        .map(|&format| ClipSet {
            format,
            items: Vec::new(),
            clips: Vec::new(),
        })
        .collect();
    for sample in data {
        let stream = encode(&sample.video, codec)?;
        let frames = sample.video.frames();
        let mut found = false;
        for (g, gop) in stream.gops.iter().enumerate() {
            if gop.len() != clip_len {
                continue;
            }
            found = true;
            let raw = &frames[g * codec.gop_size..g * codec.gop_size + clip_len];
            let item = ClipItem {
                sample_id: sample.sample_id,
                gop: g,
                label: sample.class_id,
            };
            for set in sets.iter_mut() {
                let clip = assemble_clip(gop, set.format, Some(raw))?;
                set.items.push(item);
                set.clips.push(clip.to_tensor());
            }
        }
        if !found {
            return Err(DistillError::NoFullGop(sample.sample_id, clip_len));
        }
    }
    Ok(sets)
}

// ---------------------------------------------------------------- reports

/// Mean loss components and accuracies of one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub ce: f64,
    /// Unweighted sum of the per-layer hint losses.
    pub hints: f64,
    pub sl: f64,
    pub total: f64,
    /// Accuracy of the training forward passes during the epoch.
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunKind {
    Teacher,
    Plain,
    Distilled,
}

impl RunKind {
    pub fn name(self) -> &'static str {
        match self {
            RunKind::Teacher => "teacher",
            RunKind::Plain => "plain",
            RunKind::Distilled => "distilled",
        }
    }
}

/// Training history. Contains no timing so that reruns compare byte for byte.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub kind: RunKind,
    pub format: ClipFormat,
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
}

impl TrainReport {
    pub const CSV_HEADER: &'static str = "run,format,seed,epoch,ce,hints,sl,total,train_acc,test_acc";

    pub fn final_test_accuracy(&self) -> f64 {
        self.epochs.last().map_or(0.0, |e| e.test_accuracy)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for e in &self.epochs {
            let _ = writeln!(
                s,
                "{} {} seed={} epoch={} ce={:.6} hints={:.6} sl={:.6} total={:.6} train_acc={:.4} test_acc={:.4}",
                self.kind.name(),
                self.format,
                self.seed,
                e.epoch,
                e.ce,
                e.hints,
                e.sl,
                e.total,
                e.train_accuracy,
                e.test_accuracy
            );
        }
        s
    }

    /// Rows under [`TrainReport::CSV_HEADER`] (header included).
    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for e in &self.epochs {
            let _ = writeln!(
                s,
                "{},{},{},{},{:.9},{:.9},{:.9},{:.9},{:.6},{:.6}",
                self.kind.name(),
                self.format,
                self.seed,
                e.epoch,
                e.ce,
                e.hints,
                e.sl,
                e.total,
                e.train_accuracy,
                e.test_accuracy
            );
        }
        s
    }
}

// ---------------------------------------------------------------- evaluation

/// How many GOPs of each video are scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClipSampling {
    /// Every GOP of the video.
    #[default]
    AllGops,
    /// `clips` GOPs drawn uniformly with replacement, seeded per video.
    Random { clips: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    /// `(sample_id, label, predicted)` per video, in dataset order.
    pub predictions: Vec<(u32, usize, usize)>,
    /// Clip forward passes performed.
    pub passes: usize,
}

const EVAL_BATCH: usize = 32;

fn argmax<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Scores each video by averaging the logits of its sampled clips.
pub fn evaluate<T: Real>(model: &Model<T>, set: &ClipSet<T>, sampling: ClipSampling) -> Result<Evaluation> {
    if set.is_empty() {
        return Err(DistillError::EmptyDataset);
    }
    // Group item indices by video, preserving order.
    let mut videos: Vec<(u32, usize, Vec<usize>)> = Vec::new();
    for (i, item) in set.items.iter().enumerate() {
        match videos.last_mut() {
            Some(v) if v.0 == item.sample_id => v.2.push(i),
            _ => videos.push((item.sample_id, item.label, vec![i])),
        }
    }
    let mut chosen: Vec<(usize, usize)> = Vec::new(); // (video, item)
    for (vi, (sid, _, idx)) in videos.iter().enumerate() {
        match sampling {
            ClipSampling::AllGops => chosen.extend(idx.iter().map(|&i| (vi, i))),
            ClipSampling::Random { clips, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(seed, *sid as u64));
                for _ in 0..clips {
                    let pick = idx[rand::Rng::random_range(&mut rng, 0..idx.len())];
                    chosen.push((vi, pick));
                }
            }
        }
    }
    let classes = model.config().classes;
    let mut sums = vec![vec![0.0f64; classes]; videos.len()];
    for chunk in chosen.chunks(EVAL_BATCH) {
        let idx: Vec<usize> = chunk.iter().map(|c| c.1).collect();
        let logits = model.infer(&set.batch(&idx)?)?;
        for (row, &(vi, _)) in logits.data().chunks(classes).zip(chunk) {
            for (s, &v) in sums[vi].iter_mut().zip(row) {
                *s += v.to_f64_lossy();
            }
        }
    }
    let predictions: Vec<(u32, usize, usize)> = videos
        .iter()
        .zip(&sums)
        .map(|((sid, label, _), s)| (*sid, *label, argmax(s)))
        .collect();
    let correct = predictions.iter().filter(|p| p.1 == p.2).count();
    Ok(Evaluation {
        accuracy: correct as f64 / predictions.len() as f64,
        predictions,
        passes: chosen.len(),
    })
}

// ---------------------------------------------------------------- training

/// Frozen teacher plus the RAW clips paired item-for-item with the student's
/// training clips.
#[derive(Debug, Clone, Copy)]
pub struct Teacher<'a, T> {
    pub model: &'a Model<T>,
    pub raw_train: &'a ClipSet<T>,
}

/// Loss components of one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct StepLosses {
    pub ce: f64,
    pub hints: Vec<f64>,
    pub sl: f64,
    pub total: f64,
    pub correct: usize,
}

/// Records the batch objective on `tape`. Returns the loss variable, the
/// per-component values and the student's training-mode norm statistics.
fn record_objective<T: Real>(
    tape: &mut Tape<T>,
    student: &Model<T>,
    vars: &[Var],
    input: &Tensor<T>,
    labels: &[usize],
    teacher: Option<(&Model<T>, &Tensor<T>)>,
    cfg: &DistillConfig,
    hint_layers: &[usize],
) -> Result<(Var, StepLosses, Vec<crate::model::NormStats<T>>)> {
    let use_hints = teacher.is_some() && cfg.lambda1 > 0.0 && !hint_layers.is_empty();
    let use_sl = teacher.is_some() && cfg.lambda2 > 0.0;
    let x = tape.constant(input.clone());
    let out = student.forward_on(tape, vars, x, Mode::Train, use_hints)?;
    let ce = cross_entropy_on(tape, out.logits, labels)?;
    let mut terms = vec![(ce, T::one())];
    let mut hint_vals = Vec::new();
    let mut sl_val = 0.0;
    if let (Some((tm, raw)), true) = (teacher, use_hints || use_sl) {
        let (t_logits, t_hints) = tm.forward(raw, use_hints)?;
        if use_hints {
            let sh = out.hints.as_ref().expect("hints were requested");
            let th = t_hints.expect("hints were requested");
            if sh.len() != th.len() {
                return Err(DistillError::HintCount {
                    student: sh.len(),
                    teacher: th.len(),
                });
            }
            let w = T::of(cfg.lambda1);
            for &layer in hint_layers {
                let tv = tape.constant(th.features[layer].clone());
                debug_assert!(!tape.requires_grad(tv));
                let h = hint_loss_on(tape, layer, sh[layer], tv)?;
                hint_vals.push(tape.value(h).data()[0].to_f64_lossy());
                terms.push((h, w));
            }
        }
        if use_sl {
            let tv = tape.constant(t_logits);
            debug_assert!(!tape.requires_grad(tv));
            let sl = soft_logit_loss_on(tape, out.logits, tv, T::of(cfg.tau))?;
            sl_val = tape.value(sl).data()[0].to_f64_lossy();
            terms.push((sl, T::of(cfg.sl_weight())));
        }
    }
    let total = tape.weighted_sum(&terms)?;
    let classes = student.config().classes;
    let correct = tape
        .value(out.logits)
        .data()
        .chunks(classes)
        .zip(labels)
        .filter(|(row, &l)| argmax(row) == l)
        .count();
    let losses = StepLosses {
        ce: tape.value(ce).data()[0].to_f64_lossy(),
        hints: hint_vals,
        sl: sl_val,
        total: tape.value(total).data()[0].to_f64_lossy(),
        correct,
    };
    Ok((total, losses, out.norm_stats))
}

/// Loss components for one batch without updating anything.
pub fn batch_losses<T: Real>(
    student: &Model<T>,
    input: &Tensor<T>,
    labels: &[usize],
    teacher: Option<(&Model<T>, &Tensor<T>)>,
    cfg: &DistillConfig,
) -> Result<StepLosses> {
    cfg.validate()?;
    let layers = cfg.hint_layers_for(student.config().stage_widths.len())?;
    let mut tape = Tape::new();
    let vars = student.bind(&mut tape, false);
    Ok(record_objective(&mut tape, student, &vars, input, labels, teacher, cfg, &layers)?.1)
}

/// Deterministic item order of one epoch.
pub fn epoch_order(items: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..items).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(seed, epoch as u64));
    idx.shuffle(&mut rng);
    idx
}

fn check_pairing<T: Real>(student: &ClipSet<T>, raw: &ClipSet<T>) -> Result<()> {
    if raw.format != ClipFormat::Raw {
        return Err(DistillError::Format {
            expected: ClipFormat::Raw,
            actual: raw.format,
        });
    }
    if student.items != raw.items {
        return Err(DistillError::Pairing(format!(
            "{} student items vs {} raw items",
            student.items.len(),
            raw.items.len()
        )));
    }
    Ok(())
}

/// The training loop shared by every run kind. `model` is trained in place
/// on `train` and scored on `test` after every epoch; `progress` sees each
/// finished epoch.
pub fn train_model<T: Real>(
    model: &mut Model<T>,
    train: &ClipSet<T>,
    test: &ClipSet<T>,
    teacher: Option<Teacher<'_, T>>,
    cfg: &DistillConfig,
    mut progress: Option<&mut dyn FnMut(&EpochRecord)>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if train.is_empty() || test.is_empty() {
        return Err(DistillError::EmptyDataset);
    }
    let layers = cfg.hint_layers_for(model.config().stage_widths.len())?;
    if let Some(t) = &teacher {
        check_pairing(train, t.raw_train)?;
        if t.model.config().stage_shapes()? != model.config().stage_shapes()? {
            return Err(DistillError::Config("teacher and student hint shapes differ".into()));
        }
    }
    let kind = match (&teacher, train.format) {
        (Some(_), _) => RunKind::Distilled,
        (None, ClipFormat::Raw) => RunKind::Teacher,
        (None, _) => RunKind::Plain,
    };
    let mut sgd = Sgd::new(T::of(cfg.lr), T::of(cfg.momentum), T::of(cfg.weight_decay));
    let mut report = TrainReport {
        kind,
        format: train.format,
        seed: cfg.seed,
        epochs: Vec::with_capacity(cfg.epochs),
    };
    for epoch in 1..=cfg.epochs {
        let order = epoch_order(train.len(), cfg.seed, epoch);
        let (mut ce, mut hints, mut sl, mut total, mut correct) = (0.0, 0.0, 0.0, 0.0, 0usize);
        for idx in order.chunks(cfg.batch_size) {
            let input = train.batch(idx)?;
            let labels = train.labels(idx);
            let raw = match &teacher {
                Some(t) => Some(t.raw_train.batch(idx)?),
                None => None,
            };
            let pair = teacher.as_ref().zip(raw.as_ref()).map(|(t, r)| (t.model, r));
            let mut tape = Tape::new();
            let vars = model.bind(&mut tape, true);
            let (loss, parts, stats) = record_objective(&mut tape, model, &vars, &input, &labels, pair, cfg, &layers)?;
            tape.backward(loss)?;
            let grads: Vec<Tensor<T>> = vars.iter().map(|&v| tape.grad(v).expect("parameter leaf")).collect();
            sgd.step(model.params_mut().iter_mut().map(|p| &mut p.value), &grads)?;
            model.update_running_stats(&stats);
            let n = idx.len() as f64;
            ce += parts.ce * n;
            hints += parts.hints.iter().sum::<f64>() * n;
            sl += parts.sl * n;
            total += parts.total * n;
            correct += parts.correct;
        }
        let n = train.len() as f64;
        let record = EpochRecord {
            epoch,
            ce: ce / n,
            hints: hints / n,
            sl: sl / n,
            total: total / n,
            train_accuracy: correct as f64 / n,
            test_accuracy: evaluate(model, test, ClipSampling::AllGops)?.accuracy,
        };
        if let Some(p) = progress.as_mut() {
            p(&record);
        }
        report.epochs.push(record);
    }
    Ok(report)
}

fn expect_format<T: Real>(set: &ClipSet<T>, expected: ClipFormat) -> Result<()> {
    if set.format != expected {
        return Err(DistillError::Format {
            expected,
            actual: set.format,
        });
    }
    Ok(())
}

/// Teacher on RAW clips with cross-entropy only. The model is initialized
/// from `cfg.seed`.
pub fn train_teacher<T: Real>(
    train: &ClipSet<T>,
    test: &ClipSet<T>,
    model_cfg: &ModelConfig,
    cfg: &DistillConfig,
    progress: Option<&mut dyn FnMut(&EpochRecord)>,
) -> Result<(Model<T>, TrainReport)> {
    expect_format(train, ClipFormat::Raw)?;
    expect_format(test, ClipFormat::Raw)?;
    let mut model = Model::build(model_cfg, cfg.seed)?;
    let report = train_model(&mut model, train, test, None, cfg, progress)?;
    Ok((model, report))
}

/// Student on compressed-domain clips with cross-entropy only.
pub fn train_plain<T: Real>(
    train: &ClipSet<T>,
    test: &ClipSet<T>,
    model_cfg: &ModelConfig,
    cfg: &DistillConfig,
    progress: Option<&mut dyn FnMut(&EpochRecord)>,
) -> Result<(Model<T>, TrainReport)> {
    let mut model = Model::build(model_cfg, cfg.seed)?;
    let report = train_model(&mut model, train, test, None, cfg, progress)?;
    Ok((model, report))
}

/// Student on FULL clips guided by a frozen teacher that sees the paired
/// RAW clips.
pub fn distill_student<T: Real>(
    train: &ClipSet<T>,
    test: &ClipSet<T>,
    teacher: Teacher<'_, T>,
    model_cfg: &ModelConfig,
    cfg: &DistillConfig,
    progress: Option<&mut dyn FnMut(&EpochRecord)>,
) -> Result<(Model<T>, TrainReport)> {
    expect_format(train, ClipFormat::Full)?;
    expect_format(test, ClipFormat::Full)?;
    let mut model = Model::build(model_cfg, cfg.seed)?;
    let report = train_model(&mut model, train, test, Some(teacher), cfg, progress)?;
    Ok((model, report))
}

#[cfg(test)]
mod tests;
