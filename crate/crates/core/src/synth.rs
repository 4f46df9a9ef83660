//! MovingShapes: short clips of one coloured rectangle whose motion pattern
//! is the label.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::codec::{Frame, RawVideo};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    Config(String),
    #[error("train fraction {0} must lie strictly between 0 and 1")]
    Fraction(f64),
    #[error("unknown {kind} `{value}`")]
    Unknown { kind: &'static str, value: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MotionClass {
    Still,
    Left,
    Right,
    Up,
    Down,
    DiagDownRight,
    DiagUpLeft,
    BounceHorizontal,
}

impl MotionClass {
    pub const ALL: [MotionClass; 8] = [
        MotionClass::Still,
        MotionClass::Left,
        MotionClass::Right,
        MotionClass::Up,
        MotionClass::Down,
        MotionClass::DiagDownRight,
        MotionClass::DiagUpLeft,
        MotionClass::BounceHorizontal,
    ];

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Option<Self> {
        Self::ALL.get(id).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            MotionClass::Still => "still",
            MotionClass::Left => "left",
            MotionClass::Right => "right",
            MotionClass::Up => "up",
            MotionClass::Down => "down",
            MotionClass::DiagDownRight => "diag-down-right",
            MotionClass::DiagUpLeft => "diag-up-left",
            MotionClass::BounceHorizontal => "bounce-horizontal",
        }
    }

    /// Unit direction `(dy, dx)`; the bounce class starts in either horizontal direction.
    fn direction(self) -> (i32, i32) {
        match self {
            MotionClass::Still => (0, 0),
            MotionClass::Left => (0, -1),
            MotionClass::Right | MotionClass::BounceHorizontal => (0, 1),
            MotionClass::Up => (-1, 0),
            MotionClass::Down => (1, 0),
            MotionClass::DiagDownRight => (1, 1),
            MotionClass::DiagUpLeft => (-1, -1),
        }
    }
}

impl fmt::Display for MotionClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Background {
    Solid,
    /// A random base colour with a fixed per-pixel texture (constant over time).
    #[default]
    StaticNoise,
}

impl Background {
    pub fn name(self) -> &'static str {
        match self {
            Background::Solid => "solid",
            Background::StaticNoise => "noise",
        }
    }
}

impl FromStr for Background {
    type Err = SynthError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "solid" => Ok(Background::Solid),
            "noise" | "static-noise" => Ok(Background::StaticNoise),
            _ => Err(SynthError::Unknown {
                kind: "background",
                value: s.into(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub frames: usize,
    /// Uses the first `classes` motion patterns.
    pub classes: usize,
    pub samples_per_class: usize,
    /// Inclusive side-length range of the sprite.
    pub sprite_min: usize,
    pub sprite_max: usize,
    /// Pixels per frame.
    pub speed: usize,
    pub background: Background,
    /// Half-width of the background texture around its base colour.
    pub texture_amplitude: u8,
    /// Per-frame, per-pixel uniform noise in `[-a, a]`.
    pub noise_amplitude: u8,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            height: 32,
            width: 32,
            channels: 3,
            frames: 12,
            classes: 8,
            samples_per_class: 64,
            sprite_min: 6,
            sprite_max: 9,
            speed: 2,
            background: Background::StaticNoise,
            texture_amplitude: 40,
            noise_amplitude: 2,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let err = |m: String| Err(SynthError::Config(m));
        if self.channels != 1 && self.channels != 3 {
            return err(format!("channels must be 1 or 3, got {}", self.channels));
        }
        if self.frames == 0 || self.samples_per_class == 0 {
            return err("frames and samples_per_class must be positive".into());
        }
        if !(2..=MotionClass::ALL.len()).contains(&self.classes) {
            return err(format!("classes must be in 2..=8, got {}", self.classes));
        }
        if self.sprite_min == 0 || self.sprite_min > self.sprite_max {
            return err(format!(
                "sprite size range {}..={} is empty",
                self.sprite_min, self.sprite_max
            ));
        }
        let travel = (self.frames - 1) * self.speed;
        let room = self.height.min(self.width);
        if self.sprite_max + travel > room {
            return err(format!(
                "a {}-pixel sprite moving {travel} pixels does not fit a {}x{} frame",
                self.sprite_max, self.height, self.width
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledVideo {
    pub sample_id: u32,
    pub class_id: usize,
    pub video: RawVideo,
}

/// Per-sample seed: SplitMix64 finalizer applied to `seed ⊕ (id · golden)`.
pub fn sample_seed(seed: u64, sample_id: u64) -> u64 {
    let mut z = seed ^ sample_id.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn random_color(rng: &mut ChaCha8Rng, c: usize) -> [u8; 3] {
    let mut col = [0u8; 3];
    for v in col.iter_mut().take(c) {
        *v = rng.random();
    }
    col
}

fn color_distance(a: [u8; 3], b: [u8; 3], c: usize) -> u32 {
    (0..c).map(|i| a[i].abs_diff(b[i]) as u32).sum()
}

/// Sprite top-left corner per frame.
fn trajectory(class: MotionClass, cfg: &SynthConfig, sh: usize, sw: usize, rng: &mut ChaCha8Rng) -> Vec<(i32, i32)> {
    let (h, w) = (cfg.height as i32, cfg.width as i32);
    let (sh, sw) = (sh as i32, sw as i32);
    let v = cfg.speed as i32;
    let travel = (cfg.frames as i32 - 1) * v;
    let n = cfg.frames;
    let (dy, dx) = class.direction();
    if class == MotionClass::BounceHorizontal {
        // Start close to a wall and head into it so the reflection happens early.
        let going_right = rng.random_bool(0.5);
        let gap = rng.random_range(v.min(w - sw)..=(3 * v).min(w - sw));
        let y = rng.random_range(0..=h - sh);
        let (mut x, mut vx) = if going_right { (w - sw - gap, v) } else { (gap, -v) };
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push((y, x));
            let next = x + vx;
            if next < 0 || next > w - sw {
                vx = -vx;
                x = (x + vx).clamp(0, w - sw);
            } else {
                x = next;
            }
        }
        return out;
    }
    let mut start = |d: i32, extent: i32, size: i32| -> i32 {
        let lo = if d < 0 { travel } else { 0 };
        let hi = extent - size - if d > 0 { travel } else { 0 };
        rng.random_range(lo..=hi)
    };
    let y0 = start(dy, h, sh);
    let x0 = start(dx, w, sw);
    (0..n as i32).map(|t| (y0 + dy * v * t, x0 + dx * v * t)).collect()
}

fn render_sample(cfg: &SynthConfig, class: MotionClass, sample_id: u32) -> LabeledVideo {
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(cfg.seed, sample_id as u64));
    let (h, w, c) = (cfg.height, cfg.width, cfg.channels);
    let base = random_color(&mut rng, c);
    let mut background = Vec::with_capacity(h * w * c);
    let amp = cfg.texture_amplitude as i32;
    for _ in 0..h * w {
        for &b in base.iter().take(c) {
            let v = match cfg.background {
                Background::Solid => b as i32,
                Background::StaticNoise => b as i32 + rng.random_range(-amp..=amp),
            };
            background.push(v.clamp(0, 255) as u8);
        }
    }
    let mut color = random_color(&mut rng, c);
    while color_distance(color, base, c) < 80 * c as u32 {
        color = random_color(&mut rng, c);
    }
    let sh = rng.random_range(cfg.sprite_min..=cfg.sprite_max);
    let sw = rng.random_range(cfg.sprite_min..=cfg.sprite_max);
    let path = trajectory(class, cfg, sh, sw, &mut rng);
    let noise = cfg.noise_amplitude as i32;
    let frames = path
        .iter()
        .map(|&(y0, x0)| {
            let mut px = background.clone();
            for y in y0.max(0) as usize..((y0 + sh as i32).min(h as i32)) as usize {
                for x in x0.max(0) as usize..((x0 + sw as i32).min(w as i32)) as usize {
                    px[(y * w + x) * c..][..c].copy_from_slice(&color[..c]);
                }
            }
            if noise > 0 {
                for p in px.iter_mut() {
                    *p = (*p as i32 + rng.random_range(-noise..=noise)).clamp(0, 255) as u8;
                }
            }
            Frame::new(h, w, c, px).expect("dimensions are consistent")
        })
        .collect();
    LabeledVideo {
        sample_id,
        class_id: class.id(),
        video: RawVideo::new(frames).expect("frames share dimensions"),
    }
}

/// Renders `classes × samples_per_class` videos. Sample `i` has class
/// `i mod classes` and is a pure function of `(cfg, i)`.
pub fn generate(cfg: &SynthConfig) -> Result<Vec<LabeledVideo>, SynthError> {
    cfg.validate()?;
    let total = cfg.classes * cfg.samples_per_class;
    Ok((0..total)
        .map(|i| render_sample(cfg, MotionClass::ALL[i % cfg.classes], i as u32))
        .collect())
}

/// Stratified split: within each class, samples are shuffled with `seed`
/// and the first `round(n · fraction)` go to training. Both halves keep
/// sample-id order.
pub fn split(
    dataset: &[LabeledVideo],
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<LabeledVideo>, Vec<LabeledVideo>), SynthError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(SynthError::Fraction(train_fraction));
    }
    let classes = dataset.iter().map(|s| s.class_id + 1).max().unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut is_train = alloc::vec![false; dataset.len()];
    for class in 0..classes {
        let mut idx: Vec<usize> = (0..dataset.len()).filter(|&i| dataset[i].class_id == class).collect();
        idx.sort_by_key(|&i| dataset[i].sample_id);
        idx.shuffle(&mut rng);
        let k = num_traits::Float::round(idx.len() as f64 * train_fraction) as usize;
        for &i in &idx[..k] {
            is_train[i] = true;
        }
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (i, s) in dataset.iter().enumerate() {
        if is_train[i] { &mut train } else { &mut test }.push(s.clone());
    }
    train.sort_by_key(|s| s.sample_id);
    test.sort_by_key(|s| s.sample_id);
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{encode, CodecParams};

    fn small(samples: usize) -> SynthConfig {
        SynthConfig {
            samples_per_class: samples,
            ..Default::default()
        }
    }

    #[test]
    fn generation_is_deterministic_and_balanced() {
        let cfg = small(4);
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 32);
        for class in 0..8 {
            assert_eq!(a.iter().filter(|s| s.class_id == class).count(), 4);
        }
        let c = generate(&SynthConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a, c);
        assert!(a.iter().all(|s| s.video.len() == 12 && s.video.height() == 32));
    }

    #[test]
    fn still_class_without_noise_is_a_codec_fixpoint() {
        let cfg = SynthConfig {
            noise_amplitude: 0,
            ..small(3)
        };
        for s in generate(&cfg)
            .unwrap()
            .iter()
            .filter(|s| s.class_id == MotionClass::Still.id())
        {
            let f0 = &s.video.frames()[0];
            assert!(s.video.frames().iter().all(|f| f == f0));
            let stream = encode(&s.video, CodecParams::default()).unwrap();
            for p in &stream.gops[0].pframes {
                assert!(p.residual.is_zero());
                assert_eq!(p.motion.max_abs_component(), 0);
            }
        }
    }

    /// Centroid of the pixels that differ from the most common colour, on a
    /// solid background.
    fn centroid(f: &Frame) -> (f64, f64) {
        let c = f.channels();
        let mut colors: Vec<&[u8]> = f.pixels().chunks(c).collect();
        colors.sort();
        let bg = colors.chunk_by(|a, b| a == b).max_by_key(|run| run.len()).unwrap()[0].to_vec();
        let (mut sy, mut sx, mut n) = (0.0, 0.0, 0.0);
        for y in 0..f.height() {
            for x in 0..f.width() {
                if (0..f.channels()).any(|c| f.at(y, x, c) != bg[c]) {
                    sy += y as f64;
                    sx += x as f64;
                    n += 1.0;
                }
            }
        }
        (sy / n, sx / n)
    }

    #[test]
    fn sprites_move_two_pixels_per_frame() {
        let cfg = SynthConfig {
            background: Background::Solid,
            noise_amplitude: 0,
            ..small(6)
        };
        let data = generate(&cfg).unwrap();
        let expect = |class: MotionClass| -> (f64, f64) {
            let (dy, dx) = class.direction();
            (2.0 * dy as f64, 2.0 * dx as f64)
        };
        for s in &data {
            let class = MotionClass::from_id(s.class_id).unwrap();
            let cs: Vec<(f64, f64)> = s.video.frames().iter().map(centroid).collect();
            let steps: Vec<(f64, f64)> = cs.windows(2).map(|p| (p[1].0 - p[0].0, p[1].1 - p[0].1)).collect();
            match class {
                MotionClass::BounceHorizontal => {
                    assert!(steps.iter().all(|d| d.0 == 0.0 && d.1.abs() <= 2.0));
                    let signs: Vec<bool> = steps.iter().filter(|d| d.1 != 0.0).map(|d| d.1 > 0.0).collect();
                    assert!(
                        signs.windows(2).any(|p| p[0] != p[1]),
                        "no reflection in sample {}",
                        s.sample_id
                    );
                }
                _ => {
                    for d in &steps {
                        assert_eq!(*d, expect(class), "{class} sample {}", s.sample_id);
                    }
                }
            }
        }
    }

    #[test]
    fn split_is_stratified_and_deterministic() {
        let data = generate(&small(16)).unwrap();
        let (train, test) = split(&data, 0.5, 3).unwrap();
        for class in 0..8 {
            assert_eq!(train.iter().filter(|s| s.class_id == class).count(), 8);
            assert_eq!(test.iter().filter(|s| s.class_id == class).count(), 8);
        }
        let mut ids: Vec<u32> = train.iter().chain(&test).map(|s| s.sample_id).collect();
        ids.sort();
        assert_eq!(ids, (0..128).collect::<Vec<_>>());
        assert_eq!(split(&data, 0.5, 3).unwrap(), (train.clone(), test));
        let (other, _) = split(&data, 0.5, 4).unwrap();
        assert_ne!(other, train);

        let (tr, te) = split(&generate(&small(64)).unwrap(), 0.8, 0).unwrap();
        assert_eq!((tr.len(), te.len()), (408, 104));
        for bad in [0.0, 1.0, -0.1, f64::NAN] {
            assert!(matches!(split(&data, bad, 0), Err(SynthError::Fraction(_))));
        }
    }

    #[test]
    fn config_validation() {
        for cfg in [
            SynthConfig {
                classes: 9,
                ..Default::default()
            },
            SynthConfig {
                classes: 1,
                ..Default::default()
            },
            SynthConfig {
                sprite_max: 12,
                ..Default::default()
            },
            SynthConfig {
                channels: 2,
                ..Default::default()
            },
            SynthConfig {
                sprite_min: 0,
                ..Default::default()
            },
        ] {
            assert!(matches!(generate(&cfg), Err(SynthError::Config(_))), "{cfg:?}");
        }
    }

    #[test]
    fn sample_seeds_differ() {
        let seeds: Vec<u64> = (0..1000).map(|i| sample_seed(0, i)).collect();
        let mut sorted = seeds.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 1000);
        assert_ne!(sample_seed(0, 5), sample_seed(1, 5));
    }
}
