//! The `mfcd` command line.
//!
//! Standard output of every subcommand starts with the resolved settings
//! (`key=value`, defaults included), then a blank line, then results. It is a
//! pure function of the inputs and the seed. Progress and the single timing
//! line go to standard error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use mfcd_core::codec::{decode, encode, RawVideo};
use mfcd_core::distill::{
    distill_student, evaluate, train_plain, train_teacher, ClipSampling, EpochRecord, Teacher, TrainReport,
};
use mfcd_core::model::{count_flops, count_params, video_cost, Model};
use mfcd_core::synth::{generate, split, LabeledVideo};
use mfcd_core::xform::{assemble_clip_decoded, ClipFormat};

use crate::experiment::{self, prepare};
use crate::settings::Settings;
use crate::{checkpoint, clip, dataset, stream, video};

#[derive(Debug, Parser)]
#[command(name = "mfcd", version, about = "Compressed-domain action recognition at desk scale")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Settings file of key=value lines
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Overrides the `seed` setting
    #[arg(long, value_name = "INT")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, Args)]
pub struct Workers {
    /// Threads for clip preparation and, in `ablate`, for independent seeds
    #[arg(long, value_name = "INT", default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    pub workers: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Full,
    Ires,
    Res,
    Raw,
}

impl From<FormatArg> for ClipFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Full => ClipFormat::Full,
            FormatArg::Ires => ClipFormat::IPlusRes,
            FormatArg::Res => ClipFormat::ResOnly,
            FormatArg::Raw => ClipFormat::Raw,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a MovingShapes dataset directory
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Compress an MFRV raw video into an MFCS stream
    Encode {
        input: PathBuf,
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Decompress an MFCS stream into an MFRV raw video
    Decode {
        input: PathBuf,
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Write one MFCT clip per complete GOP of a video or stream
    Xform {
        input: PathBuf,
        #[arg(long, value_enum)]
        format: FormatArg,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Train the RAW-domain teacher on the training split of a dataset
    TrainTeacher {
        dataset: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        workers: Workers,
    },
    /// Train a FULL-format student guided by a teacher checkpoint
    Distill {
        dataset: PathBuf,
        teacher: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        workers: Workers,
    },
    /// Train a student on one clip format without a teacher
    TrainPlain {
        dataset: PathBuf,
        #[arg(long, value_enum)]
        format: FormatArg,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        workers: Workers,
    },
    /// Video-level accuracy of a checkpoint (or of a fresh model) on every video of a dataset
    Eval {
        dataset: PathBuf,
        checkpoint: Option<PathBuf>,
        /// Format to score; all four when omitted
        #[arg(long, value_enum)]
        format: Option<FormatArg>,
        /// Score this many randomly drawn GOPs per video instead of all of them
        #[arg(long, value_name = "INT", value_parser = clap::value_parser!(u32).range(1..))]
        clips_per_video: Option<u32>,
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        workers: Workers,
    },
    /// Parameter count and per-clip and per-video inference cost
    Flops {
        #[arg(long, value_name = "INT", default_value_t = 1)]
        clips_per_video: u64,
        /// Passes per clip, such as spatial crops
        #[arg(long, value_name = "INT", default_value_t = 1)]
        crops: u64,
        /// Use this per-clip cost instead of the configured model's
        #[arg(long, value_name = "GFLOPS")]
        per_clip_gflops: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Compare the four clip formats over several seeds and print a results table
    Ablate {
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        workers: Workers,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth { .. } => "synth",
            Command::Encode { .. } => "encode",
            Command::Decode { .. } => "decode",
            Command::Xform { .. } => "xform",
            Command::TrainTeacher { .. } => "train-teacher",
            Command::Distill { .. } => "distill",
            Command::TrainPlain { .. } => "train-plain",
            Command::Eval { .. } => "eval",
            Command::Flops { .. } => "flops",
            Command::Ablate { .. } => "ablate",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Synth { common, .. }
            | Command::Encode { common, .. }
            | Command::Decode { common, .. }
            | Command::Xform { common, .. }
            | Command::TrainTeacher { common, .. }
            | Command::Distill { common, .. }
            | Command::TrainPlain { common, .. }
            | Command::Eval { common, .. }
            | Command::Flops { common, .. }
            | Command::Ablate { common, .. } => common,
        }
    }
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code: 0 on success, 2 for usage errors, 1 for anything else.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let start = Instant::now();
    let name = cli.command.name();
    match execute(cli.command) {
        Ok(out) => {
            print!("{out}");
            eprintln!("log: {name} finished in {:.2}s", start.elapsed().as_secs_f64());
            0
        }
        Err(e) => {
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            1
        }
    }
}

fn resolve(common: &Common) -> Result<Settings> {
    let mut s = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            Settings::parse(&text).with_context(|| format!("in {}", path.display()))?
        }
        None => Settings::default(),
    };
    if let Some(seed) = common.seed {
        s.seed = seed;
    }
    s.validate()?;
    Ok(s)
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn load_video(path: &Path) -> Result<RawVideo> {
    video::from_bytes(&read(path)?).with_context(|| format!("parsing {}", path.display()))
}

fn load_model(settings: &Settings, path: &Path) -> Result<Model<f32>> {
    let tensors = checkpoint::from_bytes(&read(path)?).with_context(|| format!("parsing {}", path.display()))?;
    let mut model = Model::build(&settings.model, settings.seed)?;
    model
        .load_named(tensors)
        .with_context(|| format!("{} does not fit the configured model", path.display()))?;
    Ok(model)
}

fn load_split(settings: &Settings, dir: &Path) -> Result<(Vec<LabeledVideo>, Vec<LabeledVideo>)> {
    let data = dataset::load(dir)?;
    Ok(split(&data, settings.train_fraction, settings.seed)?)
}

fn progress(label: &str) -> impl FnMut(&EpochRecord) + '_ {
    move |e| {
        eprintln!(
            "{label} epoch {} ce {:.4} train {:.4} test {:.4}",
            e.epoch, e.ce, e.train_accuracy, e.test_accuracy
        )
    }
}

/// Writes `<stem>.mfcdw`, `<stem>.csv` and `<stem>.txt` and returns the text report.
fn save_run(dir: &Path, stem: &str, model: &Model<f32>, report: &TrainReport) -> Result<String> {
    write(
        &dir.join(format!("{stem}.mfcdw")),
        checkpoint::to_bytes(model.named_tensors())?,
    )?;
    write(&dir.join(format!("{stem}.csv")), report.to_csv())?;
    let mut text = report.to_text();
    let _ = writeln!(text, "final_test_acc={:.4}", report.final_test_accuracy());
    write(&dir.join(format!("{stem}.txt")), &text)?;
    Ok(text)
}

/// Shortest decimal rendering after rounding to six places.
fn decimal(x: f64) -> String {
    let s = format!("{x:.6}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

fn execute(cmd: Command) -> Result<String> {
    let settings = resolve(cmd.common())?;
    let mut out = format!("command={}\n{}", cmd.name(), settings.render());
    let mut line = |k: &str, v: &dyn std::fmt::Display| {
        let _ = writeln!(out, "{k}={v}");
    };
    // Flags that shape the result join the echo before the blank line.
    match &cmd {
        Command::Xform { format, .. } | Command::TrainPlain { format, .. } => {
            line("format", &ClipFormat::from(*format));
        }
        Command::Eval {
            format,
            clips_per_video,
            ..
        } => {
            line(
                "format",
                &format.map_or("all".to_string(), |f| ClipFormat::from(f).to_string()),
            );
            line(
                "clips_per_video",
                &clips_per_video.map_or("all".to_string(), |c| c.to_string()),
            );
        }
        Command::Flops {
            clips_per_video,
            crops,
            per_clip_gflops,
            ..
        } => {
            line("clips_per_video", clips_per_video);
            line("crops", crops);
            line("per_clip_gflops", &per_clip_gflops.map_or("model".to_string(), decimal));
        }
        _ => {}
    }
    out.push('\n');
    let body = match cmd {
        Command::Synth { out: dir, .. } => {
            let data = generate(&settings.synth_config())?;
            dataset::save(&dir, &data)?;
            let mut s = format!("samples={}\n", data.len());
            let counts: Vec<String> = (0..settings.model.classes)
                .map(|c| data.iter().filter(|d| d.class_id == c).count().to_string())
                .collect();
            let _ = writeln!(s, "per_class={}", counts.join(","));
            s
        }
        Command::Encode { input, out: path, .. } => {
            let v = load_video(&input)?;
            let s = encode(&v, settings.codec)?;
            let bytes = stream::to_bytes(&s)?;
            write(&path, &bytes)?;
            format!(
                "frames={}\ngops={}\nstream_bytes={}\n",
                v.len(),
                s.gops.len(),
                bytes.len()
            )
        }
        Command::Decode { input, out: path, .. } => {
            let s = stream::from_bytes(&read(&input)?).with_context(|| format!("parsing {}", input.display()))?;
            let v = decode(&s)?;
            let bytes = video::to_bytes(&v)?;
            write(&path, &bytes)?;
            format!("frames={}\nvideo_bytes={}\n", v.len(), bytes.len())
        }
        Command::Xform {
            input,
            format,
            out: dir,
            ..
        } => {
            let bytes = read(&input)?;
            let s = if bytes.starts_with(stream::MAGIC) {
                stream::from_bytes(&bytes)?
            } else if bytes.starts_with(video::MAGIC) {
                encode(&video::from_bytes(&bytes)?, settings.codec)?
            } else {
                bail!("{} is neither an MFCS stream nor an MFRV video", input.display());
            };
            let format = ClipFormat::from(format);
            let mut text = String::new();
            let mut written = 0;
            for (g, gop) in s.gops.iter().enumerate() {
                if gop.len() != settings.model.clip_len {
                    let _ = writeln!(text, "skipped gop {g}: {} frames", gop.len());
                    continue;
                }
                let clip = assemble_clip_decoded(gop, format)?;
                let name = format!("clip_{g:03}_{}.mfct", format.short_name());
                write(&dir.join(&name), clip::to_bytes(&clip)?)?;
                let _ = writeln!(text, "wrote {name} shape={:?}", clip.shape());
                written += 1;
            }
            let _ = writeln!(text, "clips={written}");
            text
        }
        Command::TrainTeacher {
            dataset: data,
            out: dir,
            workers,
            ..
        } => {
            let (train, test) = load_split(&settings, &data)?;
            let w = workers.workers as usize;
            let tr = prepare(&train, &[ClipFormat::Raw], &settings, w)?;
            let te = prepare(&test, &[ClipFormat::Raw], &settings, w)?;
            let (model, report) = train_teacher(
                &tr[0],
                &te[0],
                &settings.model,
                &settings.train_config(),
                Some(&mut progress("RAW teacher")),
            )?;
            save_run(&dir, "teacher", &model, &report)?
        }
        Command::Distill {
            dataset: data,
            teacher,
            out: dir,
            workers,
            ..
        } => {
            let teacher = load_model(&settings, &teacher)?;
            let (train, test) = load_split(&settings, &data)?;
            let w = workers.workers as usize;
            let tr = prepare(&train, &[ClipFormat::Raw, ClipFormat::Full], &settings, w)?;
            let te = prepare(&test, &[ClipFormat::Full], &settings, w)?;
            let guide = Teacher {
                model: &teacher,
                raw_train: &tr[0],
            };
            let (model, report) = distill_student(
                &tr[1],
                &te[0],
                guide,
                &settings.model,
                &settings.train_config(),
                Some(&mut progress("FULL distilled")),
            )?;
            save_run(&dir, "distilled", &model, &report)?
        }
        Command::TrainPlain {
            dataset: data,
            format,
            out: dir,
            workers,
            ..
        } => {
            let format = ClipFormat::from(format);
            let (train, test) = load_split(&settings, &data)?;
            let w = workers.workers as usize;
            let tr = prepare(&train, &[format], &settings, w)?;
            let te = prepare(&test, &[format], &settings, w)?;
            let label = format!("{format} plain");
            let (model, report) = train_plain(
                &tr[0],
                &te[0],
                &settings.model,
                &settings.train_config(),
                Some(&mut progress(&label)),
            )?;
            save_run(&dir, &format!("plain_{}", format.short_name()), &model, &report)?
        }
        Command::Eval {
            dataset: data,
            checkpoint: ckpt,
            format,
            clips_per_video,
            workers,
            ..
        } => {
            let model = match &ckpt {
                Some(p) => load_model(&settings, p)?,
                None => Model::build(&settings.model, settings.seed)?,
            };
            let data = dataset::load(&data)?;
            let formats: Vec<ClipFormat> = match format {
                Some(f) => vec![f.into()],
                None => ClipFormat::ALL.to_vec(),
            };
            let sets = prepare(&data, &formats, &settings, workers.workers as usize)?;
            let sampling = match clips_per_video {
                Some(clips) => ClipSampling::Random {
                    clips: clips as usize,
                    seed: settings.seed,
                },
                None => ClipSampling::AllGops,
            };
            let mut s = String::from("format,videos,passes,accuracy\n");
            for set in &sets {
                let e = evaluate(&model, set, sampling)?;
                let _ = writeln!(
                    s,
                    "{},{},{},{:.4}",
                    set.format,
                    e.predictions.len(),
                    e.passes,
                    e.accuracy
                );
            }
            s
        }
        Command::Flops {
            clips_per_video,
            crops,
            per_clip_gflops,
            ..
        } => {
            let params = count_params(&settings.model)?;
            let flops = count_flops(&settings.model)?;
            let per_clip = per_clip_gflops.unwrap_or(flops as f64 / 1e9);
            if !(per_clip.is_finite() && per_clip >= 0.0) {
                bail!("per-clip cost must be a non-negative number, got {per_clip}");
            }
            let cost = video_cost(per_clip, clips_per_video, crops);
            format!(
                "params={params}\nmodel_flops_per_clip={flops}\nper_clip_gflops={}\npasses={}\nper_video_gflops={}\n",
                decimal(cost.per_pass),
                cost.passes,
                decimal(cost.total)
            )
        }
        Command::Ablate { out: dir, workers, .. } => {
            let log = |m: &str| eprintln!("{m}");
            let a = experiment::ablate(&settings, workers.workers as usize, &log)?;
            let table = a.table();
            if let Some(dir) = dir {
                write(&dir.join("ablation.csv"), &table)?;
                write(&dir.join("history.csv"), a.history_csv())?;
            }
            table
        }
    };
    out.push_str(&body);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Result<Cli, clap::Error> {
        Cli::try_parse_from(std::iter::once("mfcd").chain(args.iter().copied()))
    }

    #[test]
    fn usage_errors_exit_with_two() {
        for bad in [
            &["frobnicate"][..],
            &["flops", "--bogus"],
            &["xform", "in", "--out", "d", "--format", "yuv"],
            &["ablate", "--workers", "0"],
            &["eval", "d", "--clips-per-video", "-3"],
        ] {
            let e = parse(bad).unwrap_err();
            assert_eq!(e.exit_code(), 2, "{bad:?}");
        }
        assert_eq!(run(["mfcd", "synth"]), 2);
    }

    #[test]
    fn formats_map_to_clip_formats() {
        let got: Vec<ClipFormat> = FormatArg::value_variants().iter().map(|&f| f.into()).collect();
        assert_eq!(got, ClipFormat::ALL);
        let Cli {
            command: Command::TrainPlain { format, .. },
        } = parse(&["train-plain", "data", "--format", "ires", "--out", "o"]).unwrap()
        else {
            panic!("wrong subcommand");
        };
        assert_eq!(ClipFormat::from(format), ClipFormat::IPlusRes);
    }

    #[test]
    fn decimal_trims() {
        assert_eq!(decimal(8.53 * 15.0), "127.95");
        assert_eq!(decimal(750.0 * 1.4), "1050");
        assert_eq!(decimal(0.0441), "0.0441");
        assert_eq!(decimal(-0.0000001), "0");
    }

    #[test]
    fn flops_reproduces_the_published_arithmetic() {
        let cmd = parse(&["flops", "--clips-per-video", "15", "--per-clip-gflops", "8.53"])
            .unwrap()
            .command;
        let out = execute(cmd).unwrap();
        assert!(out.contains("\npasses=15\nper_video_gflops=127.95\n"), "{out}");
        let cmd = parse(&[
            "flops",
            "--clips-per-video",
            "25",
            "--crops",
            "30",
            "--per-clip-gflops",
            "1.4",
        ])
        .unwrap()
        .command;
        assert!(execute(cmd).unwrap().ends_with("passes=750\nper_video_gflops=1050\n"));
    }

    #[test]
    fn config_errors_are_runtime_failures() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("bad.cfg");
        fs::write(&cfg, "bogus=1\n").unwrap();
        let code = run(["mfcd", "flops", "--config", cfg.to_str().unwrap()]);
        assert_eq!(code, 1);
        assert_eq!(run(["mfcd", "flops", "--config", "/nonexistent/x.cfg"]), 1);
    }
}
