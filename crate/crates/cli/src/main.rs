//! `singgraph`: manifest building, augmentation preview, training, scoring,
//! EER reporting and gradient self-checks.
//!
//! Exit codes: 0 on success, 1 on domain errors, 2 on usage errors
//! (including invalid configuration). Results go to stdout, logs to stderr.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use singgraph::augment::{augment_segment, AugmentPlan};
use singgraph::config::RunConfig;
use singgraph::dsp::{write_wav, Waveform};
use singgraph::manifest::{
    build_tempo_index_with, load_beat_annotation, load_manifest, save_manifest, verify_splits,
    Manifest, Split,
};
use singgraph::model::{
    load_checkpoint, model_grad_check, save_checkpoint, GRADCHECK_EPS, GRADCHECK_SEED,
};
use singgraph::synth::{synth_corpus, SynthConfig};
use singgraph::train::{compute_eer, load_audio, score, train, ScoreFile};
use singgraph::{par, seed, Error};

/// Pass/fail bound of the `gradcheck` subcommand.
const GRADCHECK_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Parser)]
#[command(
    name = "singgraph",
    version,
    about = "Singing-voice deepfake detection toolkit"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// TOML document with [train], [model] and [rawboost] tables.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Dotted override, e.g. `--set train.epochs=5`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Global seed; replaces train.seed and model.seed.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Worker threads for batch-level work.
    #[arg(long, global = true, default_value_t = 1, value_name = "N")]
    jobs: usize,
    /// Validate inputs and print the resolved configuration only.
    #[arg(long, global = true)]
    dry_run: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate a manifest (optionally importing beat annotations) or write
    /// a synthetic corpus, then report splits and tempo buckets.
    Manifest(ManifestArgs),
    /// Write augmented vocal/instrumental pairs with provenance sidecars.
    Augment(AugmentArgs),
    /// Train a detector; writes the best checkpoint and the epoch log.
    Train(TrainArgs),
    /// Score one split of a manifest with a checkpoint.
    Score(ScoreArgs),
    /// Equal error rate of a labeled score file.
    Eer(EerArgs),
    /// Finite-difference check of the full model's gradients.
    Gradcheck(GradcheckArgs),
    /// Print version and build features.
    Version,
}

#[derive(Debug, Args)]
struct ManifestArgs {
    /// Existing JSON-lines manifest.
    #[arg(
        long,
        value_name = "PATH",
        conflicts_with = "synth_dir",
        required_unless_present = "synth_dir"
    )]
    input: Option<PathBuf>,
    /// Directory of `<clip_id>.json` beat annotations to import.
    #[arg(long, value_name = "DIR", requires = "input")]
    beats_dir: Option<PathBuf>,
    /// Where to write the validated manifest.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Write a synthetic corpus (stems and manifest.jsonl) here instead.
    #[arg(long, value_name = "DIR")]
    synth_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 16, requires = "synth_dir")]
    train_clips: usize,
    #[arg(long, default_value_t = 8, requires = "synth_dir")]
    val_clips: usize,
    /// Seconds per synthetic clip.
    #[arg(long, default_value_t = 4.0, requires = "synth_dir")]
    duration: f64,
    /// Exit 1 when singers leak from train into val, T02 or T03.
    #[arg(long)]
    strict: bool,
}

#[derive(Debug, Args)]
struct AugmentArgs {
    #[arg(long, value_name = "PATH")]
    manifest: PathBuf,
    #[arg(long, value_name = "DIR")]
    out_dir: PathBuf,
    #[arg(long, default_value = "train")]
    split: String,
    /// Restrict to these clips; repeatable.
    #[arg(long = "clip", value_name = "ID")]
    clips: Vec<String>,
    /// Segment start in seconds; the length is train.clip_dur_s.
    #[arg(long, default_value_t = 0.0)]
    start: f64,
    #[arg(long)]
    no_rawboost: bool,
    #[arg(long)]
    no_beat_matching: bool,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long, value_name = "PATH")]
    manifest: PathBuf,
    /// Receives checkpoint.sgckpt, train_log.jsonl and config.toml.
    #[arg(long, value_name = "DIR")]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    #[arg(long, value_name = "PATH")]
    manifest: PathBuf,
    #[arg(long, value_name = "PATH")]
    checkpoint: PathBuf,
    #[arg(long)]
    split: String,
    /// Score file to write; stdout when absent.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EerArgs {
    #[arg(long, value_name = "PATH")]
    scores: PathBuf,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    /// Central-difference step.
    #[arg(long, default_value_t = GRADCHECK_EPS)]
    eps: f64,
}

/// Why a run failed, which decides the exit code.
enum Failure {
    Usage(String),
    Domain(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Domain(e)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Domain(e.into())
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let jobs = cli.global.jobs.max(1);
    match par::with_jobs(jobs, || run(&cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Domain(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn resolve_config(g: &Global) -> Result<RunConfig, Failure> {
    let mut cfg = RunConfig::load(g.config.as_deref(), &g.set).map_err(|e| match e {
        Error::Config(msg) => Failure::Usage(msg),
        other => Failure::Domain(other.into()),
    })?;
    if let Some(s) = g.seed {
        cfg.train.seed = s;
        cfg.model.seed = s;
    }
    Ok(cfg)
}

fn parse_split(s: &str) -> Result<Split, Failure> {
    s.parse().map_err(|e: Error| Failure::Usage(e.to_string()))
}

fn print_config(cfg: &RunConfig) {
    print!("{}", cfg.to_toml());
}

fn run(cli: &Cli) -> Outcome {
    let cfg = resolve_config(&cli.global)?;
    let dry = cli.global.dry_run;
    match &cli.command {
        Command::Version => {
            if dry {
                print_config(&cfg);
            }
            println!(
                "singgraph {} (parallel: {})",
                env!("CARGO_PKG_VERSION"),
                par::is_parallel()
            );
            Ok(())
        }
        Command::Manifest(a) => cmd_manifest(a, dry, &cfg),
        Command::Augment(a) => cmd_augment(a, dry, &cfg),
        Command::Train(a) => cmd_train(a, dry, &cfg),
        Command::Score(a) => cmd_score(a, dry, &cfg, &cli.global),
        Command::Eer(a) => cmd_eer(a, dry, &cfg),
        Command::Gradcheck(a) => cmd_gradcheck(a, dry, &cfg, cli.global.seed),
    }
}

fn manifest_report(m: &Manifest, cfg: &RunConfig) -> serde_json::Value {
    let mut by_split: BTreeMap<String, BTreeMap<&str, usize>> = BTreeMap::new();
    for r in &m.records {
        *by_split
            .entry(r.split.to_string())
            .or_default()
            .entry(r.label.as_str())
            .or_default() += 1;
    }
    let buckets = build_tempo_index_with(m, cfg.train.bucket_width_bpm, cfg.train.replacement_pool)
        .map(|idx| json!(idx.groups.len()))
        .unwrap_or_else(|e| json!(e.to_string()));
    json!({
        "records": m.records.len(),
        "splits": by_split,
        "tempo_buckets": buckets,
        "split_violations": verify_splits(m).violations,
    })
}

fn cmd_manifest(a: &ManifestArgs, dry: bool, cfg: &RunConfig) -> Outcome {
    if !(a.duration > 0.0 && a.duration.is_finite()) {
        return Err(Failure::Usage(format!(
            "--duration must be positive, got {}",
            a.duration
        )));
    }
    let m = if let Some(dir) = &a.synth_dir {
        let synth = SynthConfig {
            seed: cfg.train.seed,
            duration_s: a.duration,
            splits: vec![(Split::Train, a.train_clips), (Split::Val, a.val_clips)],
            ..SynthConfig::default()
        };
        synth.validate()?;
        if dry {
            print_config(cfg);
            return Ok(());
        }
        synth_corpus(&synth, dir)?
    } else {
        let input = a
            .input
            .as_ref()
            .expect("clap requires --input without --synth-dir");
        let mut m = load_manifest(input)?;
        if let Some(dir) = &a.beats_dir {
            let mut imported = 0;
            for r in &mut m.records {
                let path = dir.join(format!("{}.json", r.clip_id));
                if path.exists() {
                    *r = r.clone().with_beats(&load_beat_annotation(&path)?)?;
                    imported += 1;
                }
            }
            log::info!("imported beat annotations for {imported} clips");
        }
        if dry {
            print_config(cfg);
            return Ok(());
        }
        if let Some(out) = &a.out {
            save_manifest(&m, out)?;
        }
        m
    };
    let report = manifest_report(&m, cfg);
    println!(
        "{}",
        serde_json::to_string_pretty(&report).context("serializing the report")?
    );
    if a.strict && !verify_splits(&m).is_clean() {
        return Err(Failure::Domain(anyhow::anyhow!(
            "singers leak across splits"
        )));
    }
    Ok(())
}

fn cmd_augment(a: &AugmentArgs, dry: bool, cfg: &RunConfig) -> Outcome {
    let split = parse_split(&a.split)?;
    if a.start.is_nan() || a.start < 0.0 {
        return Err(Failure::Usage(format!(
            "--start must be non-negative, got {}",
            a.start
        )));
    }
    let m = load_manifest(&a.manifest)?;
    let clips: Vec<_> = m
        .split(split)
        .filter(|r| a.clips.is_empty() || a.clips.contains(&r.clip_id))
        .collect();
    if let Some(missing) = a
        .clips
        .iter()
        .find(|id| !clips.iter().any(|r| &r.clip_id == *id))
    {
        return Err(Failure::Domain(anyhow::anyhow!(
            "clip {missing:?} not in split {split}"
        )));
    }
    let index = if a.no_beat_matching {
        None
    } else {
        Some(build_tempo_index_with(
            &m,
            cfg.train.bucket_width_bpm,
            cfg.train.replacement_pool,
        )?)
    };
    if dry {
        print_config(cfg);
        return Ok(());
    }
    std::fs::create_dir_all(&a.out_dir)
        .with_context(|| format!("creating {}", a.out_dir.display()))?;
    let load_ins =
        |r: &singgraph::manifest::ClipRecord| load_audio(&m.resolve(&r.instrumental_path));
    let dur = cfg.train.clip_dur_s;
    for rec in clips {
        let vocal = load_audio(&m.resolve(&rec.vocal_path))?;
        let instrumental = if rec.has_instrumental() {
            load_ins(rec)?
        } else {
            Waveform::zeros(vocal.len(), vocal.sample_rate())?
        };
        let plan = AugmentPlan {
            rawboost: (!a.no_rawboost).then_some(&cfg.rawboost),
            beat_matching: index
                .as_ref()
                .filter(|idx| idx.bucket_for(rec).is_ok())
                .map(|idx| (idx, &m)),
        };
        let item = seed::item_seed(cfg.train.seed, 0, &rec.clip_id);
        let pair = augment_segment(
            rec,
            &vocal,
            &instrumental,
            a.start,
            dur,
            &plan,
            &load_ins,
            seed::derive(item, &[b"augment"]),
        )?;
        let stem = |kind: &str| a.out_dir.join(format!("{}.{kind}.wav", rec.clip_id));
        write_wav(&pair.vocal, stem("voc"))?;
        write_wav(&pair.instrumental, stem("ins"))?;
        let prov = serde_json::to_string(&pair.provenance).context("serializing provenance")?;
        let side = a.out_dir.join(format!("{}.json", rec.clip_id));
        std::fs::write(&side, format!("{prov}\n"))
            .with_context(|| format!("writing {}", side.display()))?;
        println!("{prov}");
    }
    Ok(())
}

fn cmd_train(a: &TrainArgs, dry: bool, cfg: &RunConfig) -> Outcome {
    let m = load_manifest(&a.manifest)?;
    if dry {
        print_config(cfg);
        return Ok(());
    }
    std::fs::create_dir_all(&a.out_dir)
        .with_context(|| format!("creating {}", a.out_dir.display()))?;
    let log_path = a.out_dir.join("train_log.jsonl");
    let ckpt_path = a.out_dir.join("checkpoint.sgckpt");
    std::fs::write(a.out_dir.join("config.toml"), cfg.to_toml()).context("writing config.toml")?;
    std::fs::write(&log_path, "").with_context(|| format!("creating {}", log_path.display()))?;
    let mut append = |entry: &singgraph::train::EpochLog| -> singgraph::Result<()> {
        let line = serde_json::to_string(entry).expect("log entries serialize");
        let mut f = OpenOptions::new()
            .append(true)
            .open(&log_path)
            .map_err(|e| io_error(&log_path, e))?;
        writeln!(f, "{line}").map_err(|e| io_error(&log_path, e))
    };
    let out = train(&cfg.train, &cfg.model, &cfg.rawboost, &m, &mut append)?;
    save_checkpoint(&out.model, &ckpt_path)?;
    let summary = json!({
        "epochs_run": out.log.len(),
        "best_epoch": out.best_epoch,
        "best_val_eer": out.best_val_eer,
        "checkpoint": ckpt_path,
        "log": log_path,
    });
    println!("{summary}");
    Ok(())
}

fn io_error(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn cmd_score(a: &ScoreArgs, dry: bool, cfg: &RunConfig, g: &Global) -> Outcome {
    let split = parse_split(&a.split)?;
    let m = load_manifest(&a.manifest)?;
    // the checkpoint carries its own config; compare only when one was given
    let explicit = g.config.is_some() || g.set.iter().any(|s| s.trim_start().starts_with("model."));
    let model = load_checkpoint(&a.checkpoint, explicit.then_some(&cfg.model))?;
    if dry {
        print_config(cfg);
        return Ok(());
    }
    let out = score(
        &model,
        &m,
        split,
        cfg.train.input_setup,
        cfg.train.clip_dur_s,
    )?;
    for e in &out.errors {
        log::warn!("{}: {}", e.clip_id, e.message);
    }
    if !out.errors.is_empty() {
        eprintln!(
            "{} of {} clips failed",
            out.errors.len(),
            out.errors.len() + out.scores.len()
        );
    }
    match &a.out {
        Some(p) => out.scores.save(p)?,
        None => print!("{}", out.scores.to_tsv()),
    }
    if out.scores.is_empty() {
        return Err(Failure::Domain(anyhow::anyhow!("no clip could be scored")));
    }
    Ok(())
}

fn cmd_eer(a: &EerArgs, dry: bool, cfg: &RunConfig) -> Outcome {
    let scores = ScoreFile::load(&a.scores)?;
    let labeled = scores.labeled()?;
    if dry {
        print_config(cfg);
        return Ok(());
    }
    let e = compute_eer(&labeled)?;
    eprintln!("threshold\t{:.6}", e.threshold);
    println!("EER\t{:.6}", e.eer);
    Ok(())
}

fn cmd_gradcheck(a: &GradcheckArgs, dry: bool, cfg: &RunConfig, seed: Option<u64>) -> Outcome {
    if !(a.eps > 0.0 && a.eps.is_finite()) {
        return Err(Failure::Usage(format!(
            "--eps must be positive, got {}",
            a.eps
        )));
    }
    if dry {
        print_config(cfg);
        return Ok(());
    }
    let input_seed = seed.unwrap_or(GRADCHECK_SEED);
    let rep = model_grad_check(&cfg.model, input_seed, a.eps)?;
    println!("max_rel_error\t{:.6e}", rep.max_rel_error());
    if let Some((mode, name, idx)) = rep.worst() {
        println!("worst\t{mode:?}\t{name}[{idx}]");
    }
    println!("checked\t{}", rep.train.checked + rep.eval.checked);
    if rep.max_rel_error() < GRADCHECK_TOLERANCE {
        Ok(())
    } else {
        Err(Failure::Domain(anyhow::anyhow!(
            "max relative error {:.3e} is not below {GRADCHECK_TOLERANCE:e}",
            rep.max_rel_error()
        )))
    }
}
