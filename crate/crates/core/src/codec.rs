//! Toy GOP codec: one intra frame followed by P-frames, each a whole-pixel
//! block motion field plus an exact (lossless) residual.
//!
//! Motion vectors describe content movement from the reference to the target:
//! the target pixel `n` is predicted from reference pixel `n − Δ`, with
//! coordinates clamped into the frame.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("frame holds {actual} bytes, expected {expected} for {height}x{width}x{channels}")]
    FrameLength {
        height: usize,
        width: usize,
        channels: usize,
        expected: usize,
        actual: usize,
    },
    #[error("channels must be 1 or 3, got {0}")]
    Channels(usize),
    #[error("frame dimensions differ: {0}")]
    ShapeMismatch(String),
    #[error("block size {block} does not divide {height}x{width}")]
    BlockSize { block: usize, height: usize, width: usize },
    #[error("motion field geometry {0}")]
    Geometry(String),
    #[error("video has no frames")]
    EmptyVideo,
    #[error("invalid codec parameters: {0}")]
    Params(String),
}

/// 8-bit frame, row-major, channel-last.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Frame {
    height: usize,
    width: usize,
    channels: usize,
    pixels: Vec<u8>,
}

impl Frame {
    pub fn new(height: usize, width: usize, channels: usize, pixels: Vec<u8>) -> Result<Self, CodecError> {
        if channels != 1 && channels != 3 {
            return Err(CodecError::Channels(channels));
        }
        let expected = height * width * channels;
        if pixels.len() != expected || expected == 0 {
            return Err(CodecError::FrameLength {
                height,
                width,
                channels,
                expected,
                actual: pixels.len(),
            });
        }
        Ok(Self {
            height,
            width,
            channels,
            pixels,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: u8) -> Result<Self, CodecError> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize, c: usize) -> u8 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    /// Pixel read with both coordinates clamped into the frame.
    #[inline]
    pub fn at_clamped(&self, y: isize, x: isize, c: usize) -> u8 {
        let (y, x) = clamp_coord(y, x, self.height, self.width);
        self.at(y, x, c)
    }

    fn same_dims(&self, other: &Frame) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    fn dims_string(&self) -> String {
        format!("{}x{}x{}", self.height, self.width, self.channels)
    }
}

#[inline]
pub(crate) fn clamp_coord(y: isize, x: isize, height: usize, width: usize) -> (usize, usize) {
    (
        y.clamp(0, height as isize - 1) as usize,
        x.clamp(0, width as isize - 1) as usize,
    )
}

/// A sequence of same-sized frames.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RawVideo {
    frames: Vec<Frame>,
}

impl RawVideo {
    pub fn new(frames: Vec<Frame>) -> Result<Self, CodecError> {
        let first = frames.first().ok_or(CodecError::EmptyVideo)?;
        if let Some(bad) = frames.iter().find(|f| !f.same_dims(first)) {
            return Err(CodecError::ShapeMismatch(format!(
                "{} vs {}",
                bad.dims_string(),
                first.dims_string()
            )));
        }
        Ok(Self { frames })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<Frame> {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn height(&self) -> usize {
        self.frames[0].height
    }

    pub fn width(&self) -> usize {
        self.frames[0].width
    }

    pub fn channels(&self) -> usize {
        self.frames[0].channels
    }
}

/// Whole-pixel displacement of a block's content from reference to target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct MotionVector {
    pub dy: i32,
    pub dx: i32,
}

impl MotionVector {
    pub const ZERO: Self = Self { dy: 0, dx: 0 };

    pub fn new(dy: i32, dx: i32) -> Self {
        Self { dy, dx }
    }

    /// Tie-break order for equal SAD: smallest `|dy| + |dx|`, then `dy`, then `dx`.
    fn tie_key(self) -> (i32, i32, i32) {
        (self.dy.abs() + self.dx.abs(), self.dy, self.dx)
    }
}

/// One motion vector per `block × block` tile, tiles in row-major order.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MotionField {
    rows: usize,
    cols: usize,
    block: usize,
    vectors: Vec<MotionVector>,
}

impl MotionField {
    pub fn new(rows: usize, cols: usize, block: usize, vectors: Vec<MotionVector>) -> Result<Self, CodecError> {
        if block == 0 || rows * cols != vectors.len() || vectors.is_empty() {
            return Err(CodecError::Geometry(format!(
                "{rows}x{cols} blocks of {block} with {} vectors",
                vectors.len()
            )));
        }
        Ok(Self {
            rows,
            cols,
            block,
            vectors,
        })
    }

    pub fn zero(rows: usize, cols: usize, block: usize) -> Result<Self, CodecError> {
        Self::new(rows, cols, block, vec![MotionVector::ZERO; rows * cols])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn block(&self) -> usize {
        self.block
    }

    pub fn vectors(&self) -> &[MotionVector] {
        &self.vectors
    }

    pub fn get(&self, row: usize, col: usize) -> MotionVector {
        self.vectors[row * self.cols + col]
    }

    /// Vector governing pixel `(y, x)`.
    #[inline]
    pub fn at_pixel(&self, y: usize, x: usize) -> MotionVector {
        self.get(y / self.block, x / self.block)
    }

    pub fn max_abs_component(&self) -> i32 {
        self.vectors
            .iter()
            .map(|v| v.dy.abs().max(v.dx.abs()))
            .max()
            .unwrap_or(0)
    }

    fn check_frame(&self, frame: &Frame) -> Result<(), CodecError> {
        if self.rows * self.block != frame.height || self.cols * self.block != frame.width {
            return Err(CodecError::Geometry(format!(
                "{}x{} blocks of {} do not tile a {} frame",
                self.rows,
                self.cols,
                self.block,
                frame.dims_string()
            )));
        }
        Ok(())
    }
}

/// Signed per-pixel prediction error, `H × W × C`, values in `[-255, 255]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ResidualFrame {
    height: usize,
    width: usize,
    channels: usize,
    values: Vec<i16>,
}

impl ResidualFrame {
    pub fn new(height: usize, width: usize, channels: usize, values: Vec<i16>) -> Result<Self, CodecError> {
        if values.len() != height * width * channels || values.is_empty() {
            return Err(CodecError::FrameLength {
                height,
                width,
                channels,
                expected: height * width * channels,
                actual: values.len(),
            });
        }
        if let Some(v) = values.iter().find(|v| !(-255..=255).contains(*v)) {
            return Err(CodecError::Params(format!("residual value {v} outside [-255, 255]")));
        }
        Ok(Self {
            height,
            width,
            channels,
            values,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn values(&self) -> &[i16] {
        &self.values
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PFrame {
    pub motion: MotionField,
    pub residual: ResidualFrame,
}

/// One intra frame followed by its predicted frames.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Gop {
    pub iframe: Frame,
    pub pframes: Vec<PFrame>,
}

impl Gop {
    /// Number of frames, intra frame included.
    pub fn len(&self) -> usize {
        1 + self.pframes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Block size `B`, search range `S` and nominal GOP length `K`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CodecParams {
    pub block: usize,
    pub search: usize,
    pub gop_size: usize,
}

impl Default for CodecParams {
    fn default() -> Self {
        Self {
            block: 8,
            search: 7,
            gop_size: 12,
        }
    }
}

impl CodecParams {
    /// Ranges representable by the stream format (u8 block, i8 motion, u8 frame count).
    pub fn validate(&self) -> Result<(), CodecError> {
        if self.block == 0 || self.block > 255 {
            return Err(CodecError::Params(format!("block size {} not in 1..=255", self.block)));
        }
        if self.search > 127 {
            return Err(CodecError::Params(format!("search range {} exceeds 127", self.search)));
        }
        if self.gop_size == 0 || self.gop_size > 255 {
            return Err(CodecError::Params(format!("GOP size {} not in 1..=255", self.gop_size)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamHeader {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub block: usize,
    pub search: usize,
}

/// Header plus ordered GOPs. Only the final GOP may be shorter than the first.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CompressedStream {
    pub header: StreamHeader,
    pub gops: Vec<Gop>,
}

impl CompressedStream {
    /// Nominal GOP length (length of the first GOP), `None` for an empty stream.
    pub fn gop_size(&self) -> Option<usize> {
        self.gops.first().map(Gop::len)
    }

    pub fn frame_count(&self) -> usize {
        self.gops.iter().map(Gop::len).sum()
    }
}

fn check_blocks(frame: &Frame, block: usize) -> Result<(), CodecError> {
    if block == 0 || !frame.height.is_multiple_of(block) || !frame.width.is_multiple_of(block) {
        return Err(CodecError::BlockSize {
            block,
            height: frame.height,
            width: frame.width,
        });
    }
    Ok(())
}

/// Sum of absolute differences between the target block at `(row, col)` and
/// its prediction from `reference` under `mv`.
pub fn block_sad(reference: &Frame, target: &Frame, block: usize, row: usize, col: usize, mv: MotionVector) -> u32 {
    let (y0, x0) = (row * block, col * block);
    let c = target.channels;
    let mut sad = 0u32;
    let interior = y0 as isize - mv.dy as isize >= 0
        && x0 as isize - mv.dx as isize >= 0
        && (y0 + block) as isize - mv.dy as isize <= reference.height as isize
        && (x0 + block) as isize - mv.dx as isize <= reference.width as isize;
    if interior {
        let ry0 = (y0 as isize - mv.dy as isize) as usize;
        let rx0 = (x0 as isize - mv.dx as isize) as usize;
        for dy in 0..block {
            let t = &target.pixels[((y0 + dy) * target.width + x0) * c..][..block * c];
            let r = &reference.pixels[((ry0 + dy) * reference.width + rx0) * c..][..block * c];
            sad += t.iter().zip(r).map(|(&a, &b)| a.abs_diff(b) as u32).sum::<u32>();
        }
        return sad;
    }
    for y in y0..y0 + block {
        for x in x0..x0 + block {
            let (ry, rx) = clamp_coord(
                y as isize - mv.dy as isize,
                x as isize - mv.dx as isize,
                reference.height,
                reference.width,
            );
            for ch in 0..c {
                sad += target.at(y, x, ch).abs_diff(reference.at(ry, rx, ch)) as u32;
            }
        }
    }
    sad
}

/// Candidate displacements in `[-S, S]²`, sorted by the tie-break order.
fn search_candidates(search: usize) -> Vec<MotionVector> {
    let s = search as i32;
    let mut out: Vec<MotionVector> = (-s..=s)
        .flat_map(|dy| (-s..=s).map(move |dx| MotionVector::new(dy, dx)))
        .collect();
    out.sort_by_key(|m| m.tie_key());
    out
}

/// Exhaustive SAD block matching. For every target block the displacement
/// with minimum SAD wins; ties go to the smallest `|dy| + |dx|`, then the
/// smallest `dy`, then the smallest `dx`.
pub fn block_match(reference: &Frame, target: &Frame, block: usize, search: usize) -> Result<MotionField, CodecError> {
    if !reference.same_dims(target) {
        return Err(CodecError::ShapeMismatch(format!(
            "{} vs {}",
            reference.dims_string(),
            target.dims_string()
        )));
    }
    check_blocks(target, block)?;
    let (rows, cols) = (target.height / block, target.width / block);
    let candidates = search_candidates(search);
    let mut vectors = Vec::with_capacity(rows * cols);
    for row in 0..rows {
        for col in 0..cols {
            let mut best = MotionVector::ZERO;
            let mut best_sad = u32::MAX;
            for &mv in &candidates {
                let sad = block_sad(reference, target, block, row, col, mv);
                if sad < best_sad {
                    best_sad = sad;
                    best = mv;
                    if sad == 0 {
                        break;
                    }
                }
            }
            vectors.push(best);
        }
    }
    MotionField::new(rows, cols, block, vectors)
}

/// Motion-compensated prediction: each pixel copied from `n − Δ` in the
/// reference, edge-clamped.
pub fn warp(reference: &Frame, motion: &MotionField) -> Result<Frame, CodecError> {
    motion.check_frame(reference)?;
    let (h, w, c) = (reference.height, reference.width, reference.channels);
    let mut out = Vec::with_capacity(h * w * c);
    for y in 0..h {
        for x in 0..w {
            let mv = motion.at_pixel(y, x);
            let (ry, rx) = clamp_coord(y as isize - mv.dy as isize, x as isize - mv.dx as isize, h, w);
            out.extend_from_slice(&reference.pixels[(ry * w + rx) * c..][..c]);
        }
    }
    Frame::new(h, w, c, out)
}

fn residual(target: &Frame, prediction: &Frame) -> ResidualFrame {
    let values = target
        .pixels
        .iter()
        .zip(&prediction.pixels)
        .map(|(&t, &p)| t as i16 - p as i16)
        .collect();
    ResidualFrame {
        height: target.height,
        width: target.width,
        channels: target.channels,
        values,
    }
}

fn apply_residual(prediction: &Frame, residual: &ResidualFrame) -> Result<Frame, CodecError> {
    if prediction.height != residual.height
        || prediction.width != residual.width
        || prediction.channels != residual.channels
    {
        return Err(CodecError::ShapeMismatch(format!(
            "residual {}x{}x{} vs prediction {}",
            residual.height,
            residual.width,
            residual.channels,
            prediction.dims_string()
        )));
    }
    let pixels = prediction
        .pixels
        .iter()
        .zip(&residual.values)
        .map(|(&p, &r)| (p as i16 + r).clamp(0, 255) as u8)
        .collect();
    Frame::new(prediction.height, prediction.width, prediction.channels, pixels)
}

/// Encodes a run of frames as a single GOP.
pub fn encode_gop(frames: &[Frame], block: usize, search: usize) -> Result<Gop, CodecError> {
    let iframe = frames.first().ok_or(CodecError::EmptyVideo)?.clone();
    check_blocks(&iframe, block)?;
    let mut pframes = Vec::with_capacity(frames.len() - 1);
    // Residuals are lossless, so the previous reconstruction is the previous original.
    for pair in frames.windows(2) {
        let (prev, cur) = (&pair[0], &pair[1]);
        let motion = block_match(prev, cur, block, search)?;
        let prediction = warp(prev, &motion)?;
        pframes.push(PFrame {
            residual: residual(cur, &prediction),
            motion,
        });
    }
    Ok(Gop { iframe, pframes })
}

/// Splits the video into GOPs of `gop_size` frames (the last may be shorter)
/// and encodes each.
pub fn encode(video: &RawVideo, params: CodecParams) -> Result<CompressedStream, CodecError> {
    params.validate()?;
    check_blocks(&video.frames[0], params.block)?;
    let gops = video
        .frames
        .chunks(params.gop_size)
        .map(|chunk| encode_gop(chunk, params.block, params.search))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(CompressedStream {
        header: StreamHeader {
            width: video.width(),
            height: video.height(),
            channels: video.channels(),
            block: params.block,
            search: params.search,
        },
        gops,
    })
}

pub fn decode_gop(gop: &Gop) -> Result<Vec<Frame>, CodecError> {
    let mut frames = Vec::with_capacity(gop.len());
    frames.push(gop.iframe.clone());
    for p in &gop.pframes {
        let prediction = warp(frames.last().unwrap(), &p.motion)?;
        frames.push(apply_residual(&prediction, &p.residual)?);
    }
    Ok(frames)
}

/// Reconstructs every frame: `frame_k = clamp(warp(frame_{k−1}, Δᵏ) + Rᵏ)`.
pub fn decode(stream: &CompressedStream) -> Result<RawVideo, CodecError> {
    let mut frames = Vec::with_capacity(stream.frame_count());
    for gop in &stream.gops {
        frames.extend(decode_gop(gop)?);
    }
    RawVideo::new(frames)
}
