//! Compressed-domain data modeling.
//!
//! Every P-frame pixel is traced back through the chain of motion fields to
//! its source location in the I-frame. Residuals are summed along the same
//! path, so each step `k` gets an accumulated displacement `D̄ᵏ` and an
//! accumulated residual `R̄ᵏ` satisfying, exactly and per pixel,
//!
//! `Uᵏ(n) = U⁰(n − D̄ᵏ(n)) + R̄ᵏ(n)`.
//!
//! The recursion uses the clamped source coordinate `m = clamp(n − Δᵏ(n))`
//! (the pixel the codec's warp actually read):
//!
//! * `D̄ᵏ(n) = (n − m) + D̄ᵏ⁻¹(m)`
//! * `R̄ᵏ(n) = R̄ᵏ⁻¹(m) + Rᵏ(n)`
//!
//! Away from the frame border `n − m = Δᵏ(n)`. At the border the effective
//! displacement keeps `n − D̄ᵏ(n)` inside the frame.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use thiserror::Error;

use crate::codec::{clamp_coord, decode_gop, CodecError, Frame, Gop, MotionVector, RawVideo};
use crate::tensor::{Real, Tensor, TensorError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum XformError {
    #[error("the RAW clip format needs the GOP's raw frames")]
    MissingRaw,
    #[error("raw frames do not match the GOP: {0}")]
    RawMismatch(String),
    #[error("unknown clip format `{0}` (expected full, ires, res or raw)")]
    UnknownFormat(String),
    #[error("unknown clip format tag {0}")]
    UnknownTag(u8),
    #[error("clip data: {0}")]
    ClipShape(String),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

/// Accumulated displacement and residual for one P-frame step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccumulatedStep {
    /// Per-pixel `D̄ᵏ`, row-major `H × W`.
    pub displacement: Vec<MotionVector>,
    /// Per-pixel, per-channel `R̄ᵏ`, row-major channel-last, values in `[-255, 255]`.
    pub residual: Vec<i16>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccumulatedGop {
    pub iframe: Frame,
    /// Steps `1..K`, so `steps[k - 1]` holds step `k`.
    pub steps: Vec<AccumulatedStep>,
}

impl AccumulatedGop {
    /// Frames in the GOP, I-frame included.
    pub fn len(&self) -> usize {
        1 + self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

pub fn accumulate(gop: &Gop) -> Result<AccumulatedGop, XformError> {
    let iframe = &gop.iframe;
    let (h, w, c) = (iframe.height(), iframe.width(), iframe.channels());
    let mut prev_d = vec![MotionVector::ZERO; h * w];
    let mut prev_r = vec![0i16; h * w * c];
    let mut steps = Vec::with_capacity(gop.pframes.len());
    for (k, p) in gop.pframes.iter().enumerate() {
        let motion = &p.motion;
        let res = &p.residual;
        if motion.rows() * motion.block() != h
            || motion.cols() * motion.block() != w
            || res.height() != h
            || res.width() != w
            || res.channels() != c
        {
            return Err(
                CodecError::Geometry(format!("P-frame {} does not match the {h}x{w}x{c} I-frame", k + 1)).into(),
            );
        }
        let mut d = Vec::with_capacity(h * w);
        let mut r = Vec::with_capacity(h * w * c);
        for y in 0..h {
            for x in 0..w {
                let mv = motion.at_pixel(y, x);
                let (my, mx) = clamp_coord(y as isize - mv.dy as isize, x as isize - mv.dx as isize, h, w);
                let m = my * w + mx;
                let base = prev_d[m];
                d.push(MotionVector::new(
                    (y as i32 - my as i32) + base.dy,
                    (x as i32 - mx as i32) + base.dx,
                ));
                let n = y * w + x;
                for ch in 0..c {
                    r.push(prev_r[m * c + ch] + res.values()[n * c + ch]);
                }
            }
        }
        steps.push(AccumulatedStep {
            displacement: d,
            residual: r,
        });
        let last = steps.last().unwrap();
        prev_d.clone_from(&last.displacement);
        prev_r.clone_from(&last.residual);
    }
    Ok(AccumulatedGop {
        iframe: iframe.clone(),
        steps,
    })
}

/// Rebuilds every frame of the GOP from the I-frame and the accumulated fields.
pub fn reconstruct(acc: &AccumulatedGop) -> Result<RawVideo, XformError> {
    let u0 = &acc.iframe;
    let (h, w, c) = (u0.height(), u0.width(), u0.channels());
    let mut frames = Vec::with_capacity(acc.len());
    frames.push(u0.clone());
    for step in &acc.steps {
        let mut px = Vec::with_capacity(h * w * c);
        for y in 0..h {
            for x in 0..w {
                let n = y * w + x;
                let d = step.displacement[n];
                let (sy, sx) = clamp_coord(y as isize - d.dy as isize, x as isize - d.dx as isize, h, w);
                for ch in 0..c {
                    let v = u0.at(sy, sx, ch) as i16 + step.residual[n * c + ch];
                    px.push(v.clamp(0, 255) as u8);
                }
            }
        }
        frames.push(Frame::new(h, w, c, px)?);
    }
    Ok(RawVideo::new(frames)?)
}

/// `R̂ᵏ = (R̄ᵏ/255 + U⁰/255) / 2` for every step, each frame row-major channel-last.
pub fn augment_residuals(acc: &AccumulatedGop) -> Vec<Vec<f64>> {
    let u0 = acc.iframe.pixels();
    acc.steps
        .iter()
        .map(|s| {
            s.residual
                .iter()
                .zip(u0)
                .map(|(&r, &u)| (r as f64 / 255.0 + u as f64 / 255.0) / 2.0)
                .collect()
        })
        .collect()
}

/// Network input layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ClipFormat {
    /// `[U⁰, R̂¹, …, R̂ᴷ⁻¹]`
    Full,
    /// `[U⁰, R̄¹, …, R̄ᴷ⁻¹]`
    IPlusRes,
    /// `[R̄¹, R̄¹, R̄², …, R̄ᴷ⁻¹]`
    ResOnly,
    /// Decoded frames `[X₀, …, Xᴷ⁻¹]`.
    Raw,
}

impl ClipFormat {
    pub const ALL: [ClipFormat; 4] = [
        ClipFormat::Full,
        ClipFormat::IPlusRes,
        ClipFormat::ResOnly,
        ClipFormat::Raw,
    ];

    pub fn tag(self) -> u8 {
        match self {
            ClipFormat::Full => 0,
            ClipFormat::IPlusRes => 1,
            ClipFormat::ResOnly => 2,
            ClipFormat::Raw => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self, XformError> {
        Self::ALL.get(tag as usize).copied().ok_or(XformError::UnknownTag(tag))
    }

    /// Short name used on the command line.
    pub fn short_name(self) -> &'static str {
        match self {
            ClipFormat::Full => "full",
            ClipFormat::IPlusRes => "ires",
            ClipFormat::ResOnly => "res",
            ClipFormat::Raw => "raw",
        }
    }

    pub fn table_name(self) -> &'static str {
        match self {
            ClipFormat::Full => "FULL",
            ClipFormat::IPlusRes => "I_PLUS_RES",
            ClipFormat::ResOnly => "RES_ONLY",
            ClipFormat::Raw => "RAW",
        }
    }
}

impl fmt::Display for ClipFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.table_name())
    }
}

impl FromStr for ClipFormat {
    type Err = XformError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|f| s == f.short_name() || s.eq_ignore_ascii_case(f.table_name()))
            .ok_or_else(|| XformError::UnknownFormat(s.into()))
    }
}

/// `(C, K, H, W)` clip in normalized units.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipTensor {
    format: ClipFormat,
    channels: usize,
    frames: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ClipTensor {
    pub fn new(
        format: ClipFormat,
        channels: usize,
        frames: usize,
        height: usize,
        width: usize,
        data: Vec<f64>,
    ) -> Result<Self, XformError> {
        let n = channels * frames * height * width;
        if n == 0 || data.len() != n {
            return Err(XformError::ClipShape(format!(
                "({channels}, {frames}, {height}, {width}) needs {n} values, got {}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(XformError::ClipShape("non-finite value".into()));
        }
        Ok(Self {
            format,
            channels,
            frames,
            height,
            width,
            data,
        })
    }

    pub fn format(&self) -> ClipFormat {
        self.format
    }

    /// `[C, K, H, W]`
    pub fn shape(&self) -> [usize; 4] {
        [self.channels, self.frames, self.height, self.width]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn at(&self, c: usize, k: usize, y: usize, x: usize) -> f64 {
        self.data[((c * self.frames + k) * self.height + y) * self.width + x]
    }

    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::from_f64(self.shape().to_vec(), &self.data).expect("clip shape is valid")
    }

    /// Stacks clips of one shape into an `[N, C, K, H, W]` batch.
    pub fn batch<T: Real>(clips: &[&ClipTensor]) -> Result<Tensor<T>, TensorError> {
        let first = clips
            .first()
            .ok_or_else(|| crate::tensor::dim_err("batch", "no clips".into()))?;
        let mut data = Vec::with_capacity(first.data.len() * clips.len());
        for c in clips {
            if c.shape() != first.shape() {
                return Err(crate::tensor::dim_err(
                    "batch",
                    format!("{:?} vs {:?}", c.shape(), first.shape()),
                ));
            }
            data.extend(c.data.iter().map(|&v| T::of(v)));
        }
        let [ch, k, h, w] = first.shape();
        Tensor::new(vec![clips.len(), ch, k, h, w], data)
    }
}

/// Writes channel-last frames into a `(C, K, H, W)` buffer.
fn planar(frames: &[Vec<f64>], c: usize, h: usize, w: usize) -> Vec<f64> {
    let k = frames.len();
    let mut out = vec![0.0; c * k * h * w];
    for (t, f) in frames.iter().enumerate() {
        for p in 0..h * w {
            for ch in 0..c {
                out[(ch * k + t) * h * w + p] = f[p * c + ch];
            }
        }
    }
    out
}

fn normalized(px: &[u8]) -> Vec<f64> {
    px.iter().map(|&v| v as f64 / 255.0).collect()
}

fn normalized_residual(r: &[i16]) -> Vec<f64> {
    r.iter().map(|&v| v as f64 / 255.0).collect()
}

/// Builds the network input for one GOP. `raw` must hold the GOP's original
/// frames when `format` is [`ClipFormat::Raw`] and is ignored otherwise.
pub fn assemble_clip(gop: &Gop, format: ClipFormat, raw: Option<&[Frame]>) -> Result<ClipTensor, XformError> {
    let u0 = &gop.iframe;
    let (h, w, c) = (u0.height(), u0.width(), u0.channels());
    let k = gop.len();
    let frames: Vec<Vec<f64>> = match format {
        ClipFormat::Raw => {
            let raw = raw.ok_or(XformError::MissingRaw)?;
            if raw.len() != k {
                return Err(XformError::RawMismatch(format!(
                    "{} raw frames for a {k}-frame GOP",
                    raw.len()
                )));
            }
            if let Some(f) = raw
                .iter()
                .find(|f| f.height() != h || f.width() != w || f.channels() != c)
            {
                return Err(XformError::RawMismatch(format!(
                    "raw frame {}x{}x{} vs GOP {h}x{w}x{c}",
                    f.height(),
                    f.width(),
                    f.channels()
                )));
            }
            raw.iter().map(|f| normalized(f.pixels())).collect()
        }
        ClipFormat::Full => {
            let acc = accumulate(gop)?;
            let mut v = vec![normalized(u0.pixels())];
            v.extend(augment_residuals(&acc));
            v
        }
        ClipFormat::IPlusRes => {
            let acc = accumulate(gop)?;
            let mut v = vec![normalized(u0.pixels())];
            v.extend(acc.steps.iter().map(|s| normalized_residual(&s.residual)));
            v
        }
        ClipFormat::ResOnly => {
            let acc = accumulate(gop)?;
            if acc.steps.is_empty() {
                return Err(XformError::ClipShape("a single-frame GOP has no residuals".into()));
            }
            let mut v = vec![normalized_residual(&acc.steps[0].residual)];
            v.extend(acc.steps.iter().map(|s| normalized_residual(&s.residual)));
            v
        }
    };
    ClipTensor::new(format, c, k, h, w, planar(&frames, c, h, w))
}

/// Clip for a GOP whose raw frames are recovered by decoding it (the codec is lossless).
pub fn assemble_clip_decoded(gop: &Gop, format: ClipFormat) -> Result<ClipTensor, XformError> {
    if format == ClipFormat::Raw {
        let frames = decode_gop(gop)?;
        assemble_clip(gop, format, Some(&frames))
    } else {
        assemble_clip(gop, format, None)
    }
}
