//! Mini multi-fiber 3D CNN.
//!
//! Each stage is a run of fiber units. A unit is
//!
//! ```text
//! x ─ 1×1×1 conv (multiplexer) ─ norm ─ relu
//!   ─ grouped 3×3×3 conv, g fibers, stride (1, s, s) ─ norm ─ relu
//!   ─ 1×1×1 conv ─ norm ─ (+ x when shapes match) ─ relu
//! ```
//!
//! followed, after the last stage, by global average pooling and a linear
//! classifier. Convolutions carry no bias (the norm that follows has a
//! shift); the classifier does. The output of every stage is a hint tap.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::tensor::{conv_output_extent, Conv3dParams, Real, Tape, Tensor, TensorError, Var};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("input shape {actual:?} does not match the model's {expected:?}")]
    InputShape { expected: Vec<usize>, actual: Vec<usize> },
    #[error("parameter set mismatch: {0}")]
    Parameters(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// How the per-channel normalization layers behave.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum NormMode {
    /// Learned per-channel scale and shift only (identity statistics).
    Affine,
    /// Batch statistics while training, running statistics at inference.
    #[default]
    BatchStats,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub clip_len: usize,
    pub height: usize,
    pub width: usize,
    pub stage_widths: Vec<usize>,
    pub blocks_per_stage: usize,
    /// Group count of every fiber conv.
    pub fibers: usize,
    pub classes: usize,
    pub temporal_stride: usize,
    /// Spatial stride of the first unit in each stage.
    pub spatial_stride: usize,
    pub norm: NormMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            clip_len: 12,
            height: 32,
            width: 32,
            stage_widths: vec![16, 32, 64],
            blocks_per_stage: 1,
            fibers: 4,
            classes: 8,
            temporal_stride: 1,
            spatial_stride: 2,
            norm: NormMode::BatchStats,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let err = |m: String| Err(ModelError::Config(m));
        if self.in_channels == 0 || self.clip_len == 0 || self.height == 0 || self.width == 0 {
            return err(format!(
                "input {}x{}x{}x{} has a zero extent",
                self.in_channels, self.clip_len, self.height, self.width
            ));
        }
        if self.stage_widths.is_empty() {
            return err("at least one stage is required".into());
        }
        if self.blocks_per_stage == 0 {
            return err("blocks_per_stage must be at least 1".into());
        }
        if self.fibers == 0 {
            return err("fibers must be at least 1".into());
        }
        if let Some(w) = self.stage_widths.iter().find(|&&w| w == 0 || w % self.fibers != 0) {
            return err(format!(
                "stage width {w} is not a positive multiple of fibers = {}",
                self.fibers
            ));
        }
        if self.classes < 2 {
            return err(format!("classes must be at least 2, got {}", self.classes));
        }
        if self.temporal_stride == 0 || self.spatial_stride == 0 {
            return err("strides must be at least 1".into());
        }
        self.stage_shapes().map(|_| ())
    }

    /// Input extents `[C, T, H, W]` of one clip.
    pub fn input_shape(&self) -> [usize; 4] {
        [self.in_channels, self.clip_len, self.height, self.width]
    }

    fn unit_stride(&self, block: usize) -> [usize; 3] {
        if block == 0 {
            [self.temporal_stride, self.spatial_stride, self.spatial_stride]
        } else {
            [1, 1, 1]
        }
    }

    /// Output `[C, T, H, W]` of every stage.
    pub fn stage_shapes(&self) -> Result<Vec<[usize; 4]>, ModelError> {
        let [mut c, mut t, mut h, mut w] = self.input_shape();
        let mut out = Vec::with_capacity(self.stage_widths.len());
        for (s, &width) in self.stage_widths.iter().enumerate() {
            for b in 0..self.blocks_per_stage {
                let st = self.unit_stride(b);
                let ext = |x: usize, i: usize| conv_output_extent(x, 3, st[i], 1);
                match (ext(t, 0), ext(h, 1), ext(w, 2)) {
                    (Some(a), Some(b2), Some(c2)) => (t, h, w) = (a, b2, c2),
                    _ => {
                        return Err(ModelError::Config(format!(
                            "stage {s} unit {b}: a 3x3x3 kernel does not fit {t}x{h}x{w}"
                        )))
                    }
                }
                c = width;
            }
            out.push([c, t, h, w]);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Conv {
    weight: usize,
    params: Conv3dParams,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Norm {
    scale: usize,
    shift: usize,
    /// Buffer indices of running mean and variance (batch-statistics mode).
    running: Option<(usize, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Unit {
    mux: Conv,
    mux_norm: Norm,
    fiber: Conv,
    fiber_norm: Norm,
    out: Conv,
    out_norm: Norm,
    skip: bool,
}

/// Training (batch statistics, running-stat updates) or inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Stage-end feature maps, in stage order.
#[derive(Debug, Clone, PartialEq)]
pub struct HintBundle<T> {
    pub features: Vec<Tensor<T>>,
}

impl<T: Real> HintBundle<T> {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn shapes(&self) -> Vec<Vec<usize>> {
        self.features.iter().map(|f| f.shape().to_vec()).collect()
    }
}

/// Batch statistics observed by one norm layer during a training forward.
#[derive(Debug, Clone)]
pub struct NormStats<T> {
    mean_buffer: usize,
    var_buffer: usize,
    mean: Vec<T>,
    var: Vec<T>,
    count: usize,
}

/// Result of a forward pass recorded on a tape.
#[derive(Debug, Clone)]
pub struct TapeOutput<T> {
    pub logits: Var,
    pub hints: Option<Vec<Var>>,
    pub norm_stats: Vec<NormStats<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor<T> {
    pub name: String,
    pub value: Tensor<T>,
}

/// Network with named parameters (and, in batch-statistics mode, named
/// running-statistic buffers).
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    config: ModelConfig,
    params: Vec<NamedTensor<T>>,
    buffers: Vec<NamedTensor<T>>,
    stages: Vec<Vec<Unit>>,
    head_weight: usize,
    head_bias: usize,
}

const NORM_EPS: f64 = 1e-5;
const RUNNING_MOMENTUM: f64 = 0.1;

struct Builder<T> {
    rng: ChaCha8Rng,
    params: Vec<NamedTensor<T>>,
    buffers: Vec<NamedTensor<T>>,
    mode: NormMode,
}

impl<T: Real> Builder<T> {
    fn uniform(&mut self, name: String, shape: Vec<usize>, bound: f64) -> usize {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| T::of(self.rng.random_range(-bound..=bound))).collect();
        self.params.push(NamedTensor {
            name,
            value: Tensor::new(shape, data).expect("positive extents"),
        });
        self.params.len() - 1
    }

    fn constant(&mut self, name: String, shape: &[usize], v: f64) -> usize {
        self.params.push(NamedTensor {
            name,
            value: Tensor::full(shape, T::of(v)),
        });
        self.params.len() - 1
    }

    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, params: Conv3dParams) -> Conv {
        let fan_in = (cin / params.groups) * k * k * k;
        let bound = Float::sqrt(2.0 * 3.0 / fan_in as f64);
        let weight = self.uniform(
            format!("{name}.weight"),
            vec![cout, cin / params.groups, k, k, k],
            bound,
        );
        Conv { weight, params }
    }

    fn norm(&mut self, name: &str, c: usize) -> Norm {
        let scale = self.constant(format!("{name}.scale"), &[c], 1.0);
        let shift = self.constant(format!("{name}.shift"), &[c], 0.0);
        let running = (self.mode == NormMode::BatchStats).then(|| {
            self.buffers.push(NamedTensor {
                name: format!("{name}.running_mean"),
                value: Tensor::zeros(&[c]),
            });
            self.buffers.push(NamedTensor {
                name: format!("{name}.running_var"),
                value: Tensor::full(&[c], T::one()),
            });
            (self.buffers.len() - 2, self.buffers.len() - 1)
        });
        Norm { scale, shift, running }
    }
}

impl<T: Real> Model<T> {
    /// Kaiming-uniform initialization (`bound = gain · √(3 / fan_in)`, gain √2
    /// for convolutions and 1 for the classifier), unit norm scales, zero
    /// shifts and biases. The same seed always yields the same bytes.
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut b = Builder {
            rng: ChaCha8Rng::seed_from_u64(seed),
            params: Vec::new(),
            buffers: Vec::new(),
            mode: config.norm,
        };
        let mut cin = config.in_channels;
        let mut stages = Vec::with_capacity(config.stage_widths.len());
        for (s, &width) in config.stage_widths.iter().enumerate() {
            let mut units = Vec::with_capacity(config.blocks_per_stage);
            for u in 0..config.blocks_per_stage {
                let p = format!("stage{s}.unit{u}");
                let stride = config.unit_stride(u);
                let pw = Conv3dParams::default();
                let mux = b.conv(&format!("{p}.mux"), cin, width, 1, pw);
                let mux_norm = b.norm(&format!("{p}.mux_norm"), width);
                let fiber = b.conv(
                    &format!("{p}.fiber"),
                    width,
                    width,
                    3,
                    Conv3dParams {
                        stride,
                        padding: [1; 3],
                        groups: config.fibers,
                    },
                );
                let fiber_norm = b.norm(&format!("{p}.fiber_norm"), width);
                let out = b.conv(&format!("{p}.out"), width, width, 1, pw);
                let out_norm = b.norm(&format!("{p}.out_norm"), width);
                units.push(Unit {
                    mux,
                    mux_norm,
                    fiber,
                    fiber_norm,
                    out,
                    out_norm,
                    skip: cin == width && stride == [1, 1, 1],
                });
                cin = width;
            }
            stages.push(units);
        }
        let head_weight = b.uniform(
            "head.weight".to_string(),
            vec![config.classes, cin],
            Float::sqrt(3.0 / cin as f64),
        );
        let head_bias = b.constant("head.bias".to_string(), &[config.classes], 0.0);
        Ok(Self {
            config: config.clone(),
            params: b.params,
            buffers: b.buffers,
            stages,
            head_weight,
            head_bias,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[NamedTensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [NamedTensor<T>] {
        &mut self.params
    }

    pub fn buffers(&self) -> &[NamedTensor<T>] {
        &self.buffers
    }

    /// Parameters followed by buffers, the layout stored in checkpoints.
    pub fn named_tensors(&self) -> impl Iterator<Item = &NamedTensor<T>> {
        self.params.iter().chain(&self.buffers)
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Replaces every parameter and buffer by name. Names and shapes must
    /// match this model exactly; order does not matter.
    pub fn load_named(&mut self, tensors: Vec<NamedTensor<T>>) -> Result<(), ModelError> {
        let expected = self.params.len() + self.buffers.len();
        if tensors.len() != expected {
            return Err(ModelError::Parameters(format!(
                "{} tensors supplied, model has {expected}",
                tensors.len()
            )));
        }
        let mut seen = vec![false; expected];
        for t in tensors {
            let (i, slot) = self
                .params
                .iter_mut()
                .chain(self.buffers.iter_mut())
                .enumerate()
                .find(|(_, p)| p.name == t.name)
                .ok_or_else(|| ModelError::Parameters(format!("unknown tensor `{}`", t.name)))?;
            if seen[i] {
                return Err(ModelError::Parameters(format!("duplicate tensor `{}`", t.name)));
            }
            if slot.value.shape() != t.value.shape() {
                return Err(ModelError::Parameters(format!(
                    "`{}` has shape {:?}, expected {:?}",
                    t.name,
                    t.value.shape(),
                    slot.value.shape()
                )));
            }
            seen[i] = true;
            slot.value = t.value;
        }
        Ok(())
    }

    /// Converts every parameter and buffer to another element type.
    pub fn cast<U: Real>(&self) -> Model<U> {
        let conv = |v: &[NamedTensor<T>]| {
            v.iter()
                .map(|p| NamedTensor {
                    name: p.name.clone(),
                    value: p.value.cast(),
                })
                .collect()
        };
        Model {
            config: self.config.clone(),
            params: conv(&self.params),
            buffers: conv(&self.buffers),
            stages: self.stages.clone(),
            head_weight: self.head_weight,
            head_bias: self.head_bias,
        }
    }

    /// Puts every parameter on the tape, as trainable leaves or as constants.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| tape.leaf(p.value.clone(), trainable))
            .collect()
    }

    fn check_input(&self, shape: &[usize]) -> Result<(), ModelError> {
        let want = self.config.input_shape();
        if shape.len() != 5 || shape[1..] != want {
            let mut expected = vec![0];
            expected.extend_from_slice(&want);
            return Err(ModelError::InputShape {
                expected,
                actual: shape.to_vec(),
            });
        }
        Ok(())
    }

    fn norm_on(
        &self,
        tape: &mut Tape<T>,
        vars: &[Var],
        x: Var,
        norm: Norm,
        mode: Mode,
        stats: &mut Vec<NormStats<T>>,
    ) -> Result<Var, ModelError> {
        let (scale, shift) = (vars[norm.scale], vars[norm.shift]);
        let Some((mb, vb)) = norm.running else {
            return Ok(tape.channel_affine(x, scale, shift)?);
        };
        match mode {
            Mode::Train => {
                let shape = tape.value(x).shape();
                let count = shape[0] * shape[2..].iter().product::<usize>();
                let (y, mean, var) = tape.batch_norm(x, scale, shift, T::of(NORM_EPS))?;
                stats.push(NormStats {
                    mean_buffer: mb,
                    var_buffer: vb,
                    mean,
                    var,
                    count,
                });
                Ok(y)
            }
            Mode::Eval => {
                let (rm, rv) = (self.buffers[mb].value.data(), self.buffers[vb].value.data());
                let (g, b) = (tape.value(scale).data(), tape.value(shift).data());
                let eps = T::of(NORM_EPS);
                let s: Vec<T> = g.iter().zip(rv).map(|(&g, &v)| g / (v + eps).sqrt()).collect();
                let t: Vec<T> = b.iter().zip(rm).zip(&s).map(|((&b, &m), &s)| b - m * s).collect();
                let c = s.len();
                let sv = tape.constant(Tensor::new(vec![c], s)?);
                let tv = tape.constant(Tensor::new(vec![c], t)?);
                Ok(tape.channel_affine(x, sv, tv)?)
            }
        }
    }

    /// Records the forward pass on `tape`. `vars` are this model's parameters
    /// as returned by [`Model::bind`] (or any same-shaped leaves).
    pub fn forward_on(
        &self,
        tape: &mut Tape<T>,
        vars: &[Var],
        input: Var,
        mode: Mode,
        capture_hints: bool,
    ) -> Result<TapeOutput<T>, ModelError> {
        if vars.len() != self.params.len() {
            return Err(ModelError::Parameters(format!(
                "{} vars bound, model has {} parameters",
                vars.len(),
                self.params.len()
            )));
        }
        self.check_input(tape.value(input).shape())?;
        let mut stats = Vec::new();
        let mut hints = capture_hints.then(Vec::new);
        let mut x = input;
        for units in &self.stages {
            for u in units {
                let h = tape.conv3d(x, vars[u.mux.weight], None, u.mux.params)?;
                let h = self.norm_on(tape, vars, h, u.mux_norm, mode, &mut stats)?;
                let h = tape.relu(h)?;
                let h = tape.conv3d(h, vars[u.fiber.weight], None, u.fiber.params)?;
                let h = self.norm_on(tape, vars, h, u.fiber_norm, mode, &mut stats)?;
                let h = tape.relu(h)?;
                let h = tape.conv3d(h, vars[u.out.weight], None, u.out.params)?;
                let mut h = self.norm_on(tape, vars, h, u.out_norm, mode, &mut stats)?;
                if u.skip {
                    h = tape.add(h, x)?;
                }
                x = tape.relu(h)?;
            }
            if let Some(hs) = hints.as_mut() {
                hs.push(x);
            }
        }
        let pooled = tape.global_avg_pool(x)?;
        let logits = tape.linear(pooled, vars[self.head_weight], vars[self.head_bias])?;
        Ok(TapeOutput {
            logits,
            hints,
            norm_stats: stats,
        })
    }

    /// Inference forward on a batch `[N, C, T, H, W]`.
    pub fn forward(
        &self,
        input: &Tensor<T>,
        capture_hints: bool,
    ) -> Result<(Tensor<T>, Option<HintBundle<T>>), ModelError> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let x = tape.constant(input.clone());
        let out = self.forward_on(&mut tape, &vars, x, Mode::Eval, capture_hints)?;
        let hints = out.hints.map(|hs| HintBundle {
            features: hs.iter().map(|&h| tape.value(h).clone()).collect(),
        });
        Ok((tape.value(out.logits).clone(), hints))
    }

    /// Logits only.
    pub fn infer(&self, input: &Tensor<T>) -> Result<Tensor<T>, ModelError> {
        Ok(self.forward(input, false)?.0)
    }

    /// Folds batch statistics from a training step into the running buffers
    /// (`r ← (1 − m)·r + m·batch`, unbiased variance, m = 0.1).
    pub fn update_running_stats(&mut self, stats: &[NormStats<T>]) {
        let m = T::of(RUNNING_MOMENTUM);
        let keep = T::one() - m;
        for s in stats {
            let correction = if s.count > 1 {
                T::of(s.count as f64 / (s.count - 1) as f64)
            } else {
                T::one()
            };
            for (r, &v) in self.buffers[s.mean_buffer].value.data_mut().iter_mut().zip(&s.mean) {
                *r = keep * *r + m * v;
            }
            for (r, &v) in self.buffers[s.var_buffer].value.data_mut().iter_mut().zip(&s.var) {
                *r = keep * *r + m * v * correction;
            }
        }
    }
}

/// Weights (and optional bias) of one 3-D convolution.
pub fn conv3d_param_count(cin: usize, cout: usize, kernel: [usize; 3], groups: usize, bias: bool) -> u64 {
    let k: usize = kernel.iter().product();
    ((cin / groups) * cout * k + if bias { cout } else { 0 }) as u64
}

/// Weights plus bias of a linear layer.
pub fn linear_param_count(din: usize, dout: usize) -> u64 {
    (din * dout + dout) as u64
}

/// `2 · (Cin/g) · Cout · kt·kh·kw · P′`, plus `Cout · P′` bias adds, for `P′`
/// output positions of one sample.
pub fn conv3d_flops(
    cin: usize,
    cout: usize,
    kernel: [usize; 3],
    groups: usize,
    out_positions: usize,
    bias: bool,
) -> u64 {
    let k: usize = kernel.iter().product();
    let macs = (cin / groups) as u64 * cout as u64 * k as u64 * out_positions as u64;
    2 * macs + if bias { (cout * out_positions) as u64 } else { 0 }
}

/// `2 · Din · Dout + Dout` for one sample.
pub fn linear_flops(din: usize, dout: usize) -> u64 {
    (2 * din * dout + dout) as u64
}

/// Closed-form number of scalar parameters of `build(config)`.
pub fn count_params(config: &ModelConfig) -> Result<u64, ModelError> {
    config.validate()?;
    let g = config.fibers;
    let mut total = 0u64;
    let mut cin = config.in_channels;
    for &w in &config.stage_widths {
        for _ in 0..config.blocks_per_stage {
            total += conv3d_param_count(cin, w, [1; 3], 1, false);
            total += conv3d_param_count(w, w, [3; 3], g, false);
            total += conv3d_param_count(w, w, [1; 3], 1, false);
            total += 3 * 2 * w as u64; // scale and shift of three norms
            cin = w;
        }
    }
    Ok(total + linear_param_count(cin, config.classes))
}

/// Per-clip FLOPs of an inference forward pass. Convolutions and the
/// classifier follow [`conv3d_flops`] and [`linear_flops`]; each norm costs 2
/// per element (scale and shift), each ReLU and skip add 1 per element, and
/// average pooling 1 per input element.
pub fn count_flops(config: &ModelConfig) -> Result<u64, ModelError> {
    config.validate()?;
    let g = config.fibers;
    let [c0, mut t, mut h, mut w] = config.input_shape();
    let mut cin = c0;
    let mut total = 0u64;
    for &cw in &config.stage_widths {
        for b in 0..config.blocks_per_stage {
            let st = config.unit_stride(b);
            let p_in = t * h * w;
            total += conv3d_flops(cin, cw, [1; 3], 1, p_in, false);
            total += 3 * (cw * p_in) as u64; // norm + relu
            (t, h, w) = ((t - 1) / st[0] + 1, (h - 1) / st[1] + 1, (w - 1) / st[2] + 1);
            let p = t * h * w;
            total += conv3d_flops(cw, cw, [3; 3], g, p, false);
            total += 3 * (cw * p) as u64; // norm + relu
            total += conv3d_flops(cw, cw, [1; 3], 1, p, false);
            total += 2 * (cw * p) as u64; // norm
            if cin == cw && st == [1, 1, 1] {
                total += (cw * p) as u64; // skip add
            }
            total += (cw * p) as u64; // relu
            cin = cw;
        }
    }
    total += (cin * t * h * w) as u64; // average pool
    Ok(total + linear_flops(cin, config.classes))
}

/// Whole-video inference cost: `per_pass × clips × augmentations`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VideoCost {
    pub per_pass: f64,
    pub passes: u64,
    pub total: f64,
}

pub fn video_cost(per_pass: f64, clips: u64, augmentations: u64) -> VideoCost {
    let passes = clips * augmentations;
    VideoCost {
        per_pass,
        passes,
        total: per_pass * passes as f64,
    }
}
