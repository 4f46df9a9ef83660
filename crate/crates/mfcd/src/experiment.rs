//! The format comparison behind `ablate`: for each seed, a RAW teacher, a
//! distilled FULL student and plain students on FULL, I_PLUS_RES and
//! RES_ONLY clips, all scored on the same held-out videos.

use std::fmt::Write as _;
use std::thread;
use std::time::{Duration, Instant};

use mfcd_core::distill::{
    distill_student, prepare_clips, train_plain, train_teacher, ClipSet, DistillError, EpochRecord, RunKind, Teacher,
    TrainReport,
};
use mfcd_core::synth::{generate, split, LabeledVideo, SynthError};
use mfcd_core::xform::ClipFormat;
use thiserror::Error;

use crate::settings::Settings;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Distill(#[from] DistillError),
}

/// Progress sink shared across worker threads.
pub type Log<'a> = &'a (dyn Fn(&str) + Sync);

/// Maps `items` on up to `workers` scoped threads and returns the results in
/// item order, so the outcome does not depend on the worker count.
fn ordered_map<I: Sync, O: Send>(items: &[I], workers: usize, f: impl Fn(&I) -> O + Sync) -> Vec<O> {
    let workers = workers.clamp(1, items.len().max(1));
    if workers == 1 {
        return items.iter().map(f).collect();
    }
    let chunk = items.len().div_ceil(workers);
    thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| s.spawn(|| c.iter().map(&f).collect::<Vec<O>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    })
}

/// [`prepare_clips`] with the videos spread over `workers` threads.
pub fn prepare(
    data: &[LabeledVideo],
    formats: &[ClipFormat],
    settings: &Settings,
    workers: usize,
) -> Result<Vec<ClipSet<f32>>, DistillError> {
    let chunk = data.len().div_ceil(workers.max(1)).max(1);
    let pieces: Vec<&[LabeledVideo]> = data.chunks(chunk).collect();
    let parts = ordered_map(&pieces, workers, |p| {
        prepare_clips::<f32>(p, formats, settings.codec, settings.model.clip_len)
    });
    let mut sets: Vec<ClipSet<f32>> = formats
        .iter()
        .map(|&format| ClipSet {
            format,
            items: Vec::new(),
            clips: Vec::new(),
        })
        .collect();
    for part in parts {
        for (set, p) in sets.iter_mut().zip(part?) {
            set.items.extend(p.items);
            set.clips.extend(p.clips);
        }
    }
    Ok(sets)
}

/// Generated dataset for `settings.seed`, split into train and test videos.
pub fn dataset(settings: &Settings) -> Result<(Vec<LabeledVideo>, Vec<LabeledVideo>), SynthError> {
    let data = generate(&settings.synth_config())?;
    split(&data, settings.train_fraction, settings.seed)
}

/// Every report of one seed. `elapsed` records wall time per run and is
/// never part of any rendered output.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub teacher: TrainReport,
    pub distilled: TrainReport,
    /// Plain students on FULL, I_PLUS_RES and RES_ONLY, in that order.
    pub plain: Vec<TrainReport>,
    pub elapsed: Vec<(String, Duration)>,
}

impl SeedRun {
    pub fn reports(&self) -> impl Iterator<Item = &TrainReport> {
        [&self.teacher, &self.distilled].into_iter().chain(&self.plain)
    }

    pub fn plain_accuracy(&self, format: ClipFormat) -> Option<f64> {
        self.plain
            .iter()
            .find(|r| r.format == format)
            .map(TrainReport::final_test_accuracy)
    }
}

pub const PLAIN_FORMATS: [ClipFormat; 3] = [ClipFormat::Full, ClipFormat::IPlusRes, ClipFormat::ResOnly];

fn epoch_logger<'a>(log: Log<'a>, seed: u64, label: &'a str) -> impl FnMut(&EpochRecord) + 'a {
    move |e| {
        log(&format!(
            "seed {seed} {label} epoch {} ce {:.4} train {:.4} test {:.4}",
            e.epoch, e.ce, e.train_accuracy, e.test_accuracy
        ))
    }
}

/// The five training runs of one seed.
pub fn run_seed(settings: &Settings, workers: usize, log: Log<'_>) -> Result<SeedRun, ExperimentError> {
    let seed = settings.seed;
    let (train, test) = dataset(settings)?;
    let formats = [
        ClipFormat::Raw,
        ClipFormat::Full,
        ClipFormat::IPlusRes,
        ClipFormat::ResOnly,
    ];
    let tr = prepare(&train, &formats, settings, workers)?;
    let te = prepare(&test, &formats, settings, workers)?;
    let (model_cfg, cfg) = (&settings.model, settings.train_config());
    let mut elapsed = Vec::new();

    let t = Instant::now();
    let mut cb = epoch_logger(log, seed, "RAW teacher");
    let (teacher_model, teacher) = train_teacher(&tr[0], &te[0], model_cfg, &cfg, Some(&mut cb))?;
    elapsed.push(("RAW teacher".into(), t.elapsed()));

    let t = Instant::now();
    let mut cb = epoch_logger(log, seed, "FULL distilled");
    let guide = Teacher {
        model: &teacher_model,
        raw_train: &tr[0],
    };
    let (_, distilled) = distill_student(&tr[1], &te[1], guide, model_cfg, &cfg, Some(&mut cb))?;
    elapsed.push(("FULL distilled".into(), t.elapsed()));

    let mut plain = Vec::new();
    for (i, format) in PLAIN_FORMATS.into_iter().enumerate() {
        let label = format!("{format} plain");
        let t = Instant::now();
        let mut cb = epoch_logger(log, seed, &label);
        let (_, report) = train_plain(&tr[i + 1], &te[i + 1], model_cfg, &cfg, Some(&mut cb))?;
        elapsed.push((label.clone(), t.elapsed()));
        plain.push(report);
    }
    Ok(SeedRun {
        seed,
        teacher,
        distilled,
        plain,
        elapsed,
    })
}

/// One line of the results table: final test accuracy per seed.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub format: ClipFormat,
    pub kind: RunKind,
    pub per_seed: Vec<f64>,
}

impl Row {
    pub fn mean(&self) -> f64 {
        self.per_seed.iter().sum::<f64>() / self.per_seed.len() as f64
    }
}

#[derive(Debug, Clone)]
pub struct Ablation {
    pub runs: Vec<SeedRun>,
}

impl Ablation {
    pub const TABLE_HEADER: &'static str = "format,training,test_acc_mean,test_acc_per_seed";

    /// RAW teacher, FULL distilled, then the plain students.
    pub fn rows(&self) -> Vec<Row> {
        let collect = |f: &dyn Fn(&SeedRun) -> &TrainReport| {
            let first = f(&self.runs[0]);
            Row {
                format: first.format,
                kind: first.kind,
                per_seed: self.runs.iter().map(|r| f(r).final_test_accuracy()).collect(),
            }
        };
        let mut rows = vec![collect(&|r| &r.teacher), collect(&|r| &r.distilled)];
        for i in 0..PLAIN_FORMATS.len() {
            rows.push(collect(&|r| &r.plain[i]));
        }
        rows
    }

    pub fn row(&self, format: ClipFormat, kind: RunKind) -> Option<Row> {
        self.rows().into_iter().find(|r| r.format == format && r.kind == kind)
    }

    /// Comma-separated results under [`Ablation::TABLE_HEADER`]; per-seed
    /// accuracies are joined by `;` in seed order.
    pub fn table(&self) -> String {
        let mut s = format!("{}\n", Self::TABLE_HEADER);
        for r in self.rows() {
            let seeds: Vec<String> = r.per_seed.iter().map(|a| format!("{a:.4}")).collect();
            let _ = writeln!(s, "{},{},{:.4},{}", r.format, r.kind.name(), r.mean(), seeds.join(";"));
        }
        s
    }

    /// Per-epoch history of every run under [`TrainReport::CSV_HEADER`].
    pub fn history_csv(&self) -> String {
        let mut s = format!("{}\n", TrainReport::CSV_HEADER);
        for r in self.runs.iter().flat_map(SeedRun::reports) {
            for line in r.to_csv().lines().skip(1) {
                s.push_str(line);
                s.push('\n');
            }
        }
        s
    }
}

/// Runs `settings.ablate_seeds` consecutive seeds starting at `settings.seed`.
/// With several workers the seeds train concurrently; results are merged in
/// seed order.
pub fn ablate(settings: &Settings, workers: usize, log: Log<'_>) -> Result<Ablation, ExperimentError> {
    let seeds: Vec<u64> = (0..settings.ablate_seeds as u64).map(|i| settings.seed + i).collect();
    let inner = if seeds.len() >= workers { 1 } else { workers };
    let runs = ordered_map(&seeds, workers, |&s| run_seed(&settings.with_seed(s), inner, log));
    Ok(Ablation {
        runs: runs.into_iter().collect::<Result<_, _>>()?,
    })
}
