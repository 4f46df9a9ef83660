//! Flat `key=value` run settings.
//!
//! One file configures every stage. Blank lines and `#` comments are
//! ignored, unknown or repeated keys are errors, and keys that are absent
//! keep their defaults. [`Settings::render`] writes every key, and parsing the
//! rendered text gives back the same settings.

use std::fmt::Write as _;
use std::str::FromStr;

use mfcd_core::codec::CodecParams;
use mfcd_core::distill::DistillConfig;
use mfcd_core::model::{ModelConfig, NormMode};
use mfcd_core::synth::{Background, SynthConfig};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SettingsError {
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("inconsistent settings: {0}")]
    Inconsistent(String),
}

/// Everything a run depends on. A single `seed` drives data generation, the
/// train/test split, weight initialization and batch order.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub seed: u64,
    pub model: ModelConfig,
    pub train: DistillConfig,
    pub codec: CodecParams,
    /// Frames per synthetic video.
    pub frames: usize,
    pub samples_per_class: usize,
    pub sprite_min: usize,
    pub sprite_max: usize,
    pub speed: usize,
    pub background: Background,
    pub texture_amplitude: u8,
    pub noise_amplitude: u8,
    pub train_fraction: f64,
    /// Seeds `seed, seed + 1, …` averaged by `ablate`.
    pub ablate_seeds: usize,
}

impl Default for Settings {
    fn default() -> Self {
        let synth = SynthConfig::default();
        Self {
            seed: 0,
            model: ModelConfig::default(),
            train: DistillConfig::default(),
            codec: CodecParams::default(),
            frames: synth.frames,
            samples_per_class: synth.samples_per_class,
            sprite_min: synth.sprite_min,
            sprite_max: synth.sprite_max,
            speed: synth.speed,
            background: synth.background,
            texture_amplitude: synth.texture_amplitude,
            noise_amplitude: synth.noise_amplitude,
            train_fraction: 0.8,
            ablate_seeds: 3,
        }
    }
}

fn norm_name(n: NormMode) -> &'static str {
    match n {
        NormMode::Affine => "affine",
        NormMode::BatchStats => "batch",
    }
}

fn list<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn parse_list<T: FromStr>(v: &str) -> Result<Vec<T>, String> {
    v.split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| format!("`{p}` in list `{v}` is not valid"))
        })
        .collect()
}

fn num<T: FromStr>(v: &str) -> Result<T, String> {
    v.parse()
        .map_err(|_| format!("`{v}` is not a valid {}", std::any::type_name::<T>()))
}

fn boolean(v: &str) -> Result<bool, String> {
    match v {
        "true" | "1" | "on" => Ok(true),
        "false" | "0" | "off" => Ok(false),
        _ => Err(format!("`{v}` is not a boolean")),
    }
}

impl Settings {
    /// Every accepted key, in render order.
    pub const KEYS: [&'static str; 35] = [
        "seed",
        "in_channels",
        "clip_len",
        "height",
        "width",
        "stage_widths",
        "blocks_per_stage",
        "fibers",
        "classes",
        "temporal_stride",
        "spatial_stride",
        "norm",
        "tau",
        "lambda1",
        "lambda2",
        "tau_squared_scaling",
        "hint_layers",
        "epochs",
        "batch_size",
        "lr",
        "momentum",
        "weight_decay",
        "block",
        "search",
        "gop_size",
        "frames",
        "samples_per_class",
        "sprite_min",
        "sprite_max",
        "speed",
        "background",
        "texture_amplitude",
        "noise_amplitude",
        "train_fraction",
        "ablate_seeds",
    ];

    fn get(&self, key: &str) -> String {
        let (m, t) = (&self.model, &self.train);
        match key {
            "seed" => self.seed.to_string(),
            "in_channels" => m.in_channels.to_string(),
            "clip_len" => m.clip_len.to_string(),
            "height" => m.height.to_string(),
            "width" => m.width.to_string(),
            "stage_widths" => list(&m.stage_widths),
            "blocks_per_stage" => m.blocks_per_stage.to_string(),
            "fibers" => m.fibers.to_string(),
            "classes" => m.classes.to_string(),
            "temporal_stride" => m.temporal_stride.to_string(),
            "spatial_stride" => m.spatial_stride.to_string(),
            "norm" => norm_name(m.norm).into(),
            "tau" => t.tau.to_string(),
            "lambda1" => t.lambda1.to_string(),
            "lambda2" => t.lambda2.to_string(),
            "tau_squared_scaling" => t.tau_squared_scaling.to_string(),
            "hint_layers" => t.hint_layers.as_deref().map_or_else(|| "all".into(), list),
            "epochs" => t.epochs.to_string(),
            "batch_size" => t.batch_size.to_string(),
            "lr" => t.lr.to_string(),
            "momentum" => t.momentum.to_string(),
            "weight_decay" => t.weight_decay.to_string(),
            "block" => self.codec.block.to_string(),
            "search" => self.codec.search.to_string(),
            "gop_size" => self.codec.gop_size.to_string(),
            "frames" => self.frames.to_string(),
            "samples_per_class" => self.samples_per_class.to_string(),
            "sprite_min" => self.sprite_min.to_string(),
            "sprite_max" => self.sprite_max.to_string(),
            "speed" => self.speed.to_string(),
            "background" => self.background.name().into(),
            "texture_amplitude" => self.texture_amplitude.to_string(),
            "noise_amplitude" => self.noise_amplitude.to_string(),
            "train_fraction" => self.train_fraction.to_string(),
            "ablate_seeds" => self.ablate_seeds.to_string(),
            _ => unreachable!("unknown key {key}"),
        }
    }

    /// Assigns one key. Errors are plain messages; callers add the location.
    pub fn set(&mut self, key: &str, v: &str) -> Result<(), String> {
        let (m, t) = (&mut self.model, &mut self.train);
        match key {
            "seed" => self.seed = num(v)?,
            "in_channels" => m.in_channels = num(v)?,
            "clip_len" => m.clip_len = num(v)?,
            "height" => m.height = num(v)?,
            "width" => m.width = num(v)?,
            "stage_widths" => m.stage_widths = parse_list(v)?,
            "blocks_per_stage" => m.blocks_per_stage = num(v)?,
            "fibers" => m.fibers = num(v)?,
            "classes" => m.classes = num(v)?,
            "temporal_stride" => m.temporal_stride = num(v)?,
            "spatial_stride" => m.spatial_stride = num(v)?,
            "norm" => {
                m.norm = match v {
                    "affine" => NormMode::Affine,
                    "batch" => NormMode::BatchStats,
                    _ => return Err(format!("norm must be `affine` or `batch`, got `{v}`")),
                }
            }
            "tau" => t.tau = num(v)?,
            "lambda1" => t.lambda1 = num(v)?,
            "lambda2" => t.lambda2 = num(v)?,
            "tau_squared_scaling" => t.tau_squared_scaling = boolean(v)?,
            "hint_layers" => t.hint_layers = if v == "all" { None } else { Some(parse_list(v)?) },
            "epochs" => t.epochs = num(v)?,
            "batch_size" => t.batch_size = num(v)?,
            "lr" => t.lr = num(v)?,
            "momentum" => t.momentum = num(v)?,
            "weight_decay" => t.weight_decay = num(v)?,
            "block" => self.codec.block = num(v)?,
            "search" => self.codec.search = num(v)?,
            "gop_size" => self.codec.gop_size = num(v)?,
            "frames" => self.frames = num(v)?,
            "samples_per_class" => self.samples_per_class = num(v)?,
            "sprite_min" => self.sprite_min = num(v)?,
            "sprite_max" => self.sprite_max = num(v)?,
            "speed" => self.speed = num(v)?,
            "background" => self.background = v.parse().map_err(|e| format!("{e}"))?,
            "texture_amplitude" => self.texture_amplitude = num(v)?,
            "noise_amplitude" => self.noise_amplitude = num(v)?,
            "train_fraction" => self.train_fraction = num(v)?,
            "ablate_seeds" => self.ablate_seeds = num(v)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Parses settings text on top of the defaults and validates the result.
    pub fn parse(text: &str) -> Result<Self, SettingsError> {
        let mut s = Settings::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fail = |message: String| SettingsError::Line { line: i + 1, message };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| fail(format!("expected key=value, got `{line}`")))?;
            let (k, v) = (k.trim(), v.trim());
            if !seen.insert(k.to_owned()) {
                return Err(fail(format!("key `{k}` repeated")));
            }
            s.set(k, v).map_err(fail)?;
        }
        s.validate()?;
        Ok(s)
    }

    /// Every key with its value, one `key=value` per line.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for k in Self::KEYS {
            let _ = writeln!(out, "{k}={}", self.get(k));
        }
        out
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            height: self.model.height,
            width: self.model.width,
            channels: self.model.in_channels,
            frames: self.frames,
            classes: self.model.classes,
            samples_per_class: self.samples_per_class,
            sprite_min: self.sprite_min,
            sprite_max: self.sprite_max,
            speed: self.speed,
            background: self.background,
            texture_amplitude: self.texture_amplitude,
            noise_amplitude: self.noise_amplitude,
            seed: self.seed,
        }
    }

    pub fn train_config(&self) -> DistillConfig {
        DistillConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    /// Copy with a different seed, as used by `--seed` and by `ablate`.
    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn validate(&self) -> Result<(), SettingsError> {
        let bad = |m: String| Err(SettingsError::Inconsistent(m));
        self.model.validate().or_else(|e| bad(e.to_string()))?;
        self.train_config().validate().or_else(|e| bad(e.to_string()))?;
        self.codec.validate().or_else(|e| bad(e.to_string()))?;
        self.synth_config().validate().or_else(|e| bad(e.to_string()))?;
        if self.codec.gop_size != self.model.clip_len {
            return bad(format!(
                "gop_size {} must equal clip_len {}: every clip is one GOP",
                self.codec.gop_size, self.model.clip_len
            ));
        }
        if self.frames < self.model.clip_len {
            return bad(format!(
                "{} frames cannot hold a {}-frame clip",
                self.frames, self.model.clip_len
            ));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad(format!(
                "train_fraction {} must lie strictly between 0 and 1",
                self.train_fraction
            ));
        }
        if self.ablate_seeds == 0 {
            return bad("ablate_seeds must be positive".into());
        }
        if let Some(l) = self
            .train
            .hint_layers
            .as_ref()
            .and_then(|h| h.iter().find(|&&l| l >= self.model.stage_widths.len()))
        {
            return bad(format!("hint layer {l} does not exist"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(Settings::parse("# nothing\n\n").unwrap(), Settings::default());
    }

    #[test]
    fn render_round_trips_and_lists_every_key() {
        let s = Settings::default();
        let text = s.render();
        assert_eq!(text.lines().count(), Settings::KEYS.len());
        assert_eq!(Settings::parse(&text).unwrap(), s);
    }

    #[test]
    fn overrides_comments_and_lists() {
        let s = Settings::parse("stage_widths = 8, 16 # two stages\nhint_layers=1\nnorm=affine\nlr=0.01\n").unwrap();
        assert_eq!(s.model.stage_widths, [8, 16]);
        assert_eq!(s.train.hint_layers, Some(vec![1]));
        assert_eq!(s.model.norm, NormMode::Affine);
        assert_eq!(s.train.lr, 0.01);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = Settings::parse("seed=1\n\nbogus=3\n").unwrap_err();
        assert_eq!(
            e,
            SettingsError::Line {
                line: 3,
                message: "unknown key `bogus`".into()
            }
        );
        assert!(matches!(
            Settings::parse("seed=1\nseed=2").unwrap_err(),
            SettingsError::Line { line: 2, .. }
        ));
        assert!(matches!(
            Settings::parse("epochs=x").unwrap_err(),
            SettingsError::Line { line: 1, .. }
        ));
        assert!(matches!(
            Settings::parse("no equals sign").unwrap_err(),
            SettingsError::Line { line: 1, .. }
        ));
    }

    #[test]
    fn cross_field_checks() {
        assert!(matches!(
            Settings::parse("gop_size=6").unwrap_err(),
            SettingsError::Inconsistent(_)
        ));
        assert!(matches!(
            Settings::parse("train_fraction=1").unwrap_err(),
            SettingsError::Inconsistent(_)
        ));
        assert!(matches!(
            Settings::parse("hint_layers=0,3").unwrap_err(),
            SettingsError::Inconsistent(_)
        ));
        assert!(matches!(
            Settings::parse("tau=0").unwrap_err(),
            SettingsError::Inconsistent(_)
        ));
    }
}
