mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use beatagg::gradcheck::run_gradient_suite;
use beatagg::io::{
    load_checkpoint, read_annotations, read_features, save_checkpoint, write_atomic, write_beats, write_synthetic,
    Manifest,
};
use beatagg::metrics::{aggregate, evaluate_downbeats, evaluate_pair, DatasetReport, EvalReport};
use beatagg::track::track;
use beatagg::train::{assign_splits, run_ablation, train_model_with, Dataset};
use beatagg::{AblationMask, BeatSequence, Error, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::config::Settings;

/// Beat and downbeat tracking on layer-stacked features.
#[derive(Debug, Parser)]
#[command(name = "beatagg", version)]
struct Cli {
    /// JSON file with flat dotted keys (train.*, dbn.*, synth.*, eval.*). Flags win over it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads for per-piece work in track and eval.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,

    /// Suppress progress lines on standard error.
    #[arg(long, short, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct DbnFlags {
    /// Feature frame rate, overriding sidecar metadata.
    #[arg(long)]
    frame_rate: Option<f64>,
    #[arg(long)]
    min_bpm: Option<f64>,
    #[arg(long)]
    max_bpm: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic dataset (features, annotations, manifest).
    Synth {
        #[arg(long)]
        seed: u64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        pieces: Option<usize>,
        #[arg(long)]
        frame_rate: Option<f64>,
    },
    /// Train a model and write a checkpoint.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        seed: u64,
        /// Checkpoint path.
        #[arg(long)]
        out: PathBuf,
        /// Also write the per-epoch JSON-lines log here.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Enabled attention heads, e.g. `t,f,c` or `none`.
        #[arg(long)]
        ablate_mask: Option<String>,
        #[arg(long)]
        max_epochs: Option<usize>,
    },
    /// Decode beats and downbeats for a feature file or the test pieces of a manifest.
    Track {
        #[arg(long)]
        checkpoint: PathBuf,
        /// A single `[n, f, t]` feature file.
        #[arg(long, conflicts_with = "manifest", required_unless_present = "manifest")]
        features: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Track every manifest piece instead of the held-out test pieces.
        #[arg(long, requires = "manifest")]
        all: bool,
        /// Beat file for `--features`, directory for `--manifest`.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        dbn: DbnFlags,
    },
    /// Score estimates against references (files, directories or a manifest).
    Eval {
        #[arg(long = "est")]
        estimates: PathBuf,
        /// Reference file, directory of `.beats` files, or manifest `.json`.
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Keep events in the first five seconds.
        #[arg(long)]
        no_trim: bool,
        /// Write the full report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and evaluate all eight head combinations.
    Ablate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        seed: u64,
        /// Write the table as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        max_epochs: Option<usize>,
        #[command(flatten)]
        dbn: DbnFlags,
    },
    /// Compare analytic gradients with central finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 120)]
        instances: usize,
    },
}

fn progress(quiet: bool, msg: impl AsRef<str>) {
    if !quiet {
        eprintln!("{}", msg.as_ref());
    }
}

fn apply_dbn(settings: &mut Settings, flags: &DbnFlags) {
    if let Some(v) = flags.min_bpm {
        settings.dbn.min_bpm = v;
    }
    if let Some(v) = flags.max_bpm {
        settings.dbn.max_bpm = v;
    }
}

/// Maps `f` over `items` on up to `jobs` threads, keeping input order.
fn par_map<T: Sync, R: Send>(items: &[T], jobs: usize, f: impl Fn(&T) -> Result<R> + Sync) -> Result<Vec<R>> {
    let jobs = jobs.clamp(1, items.len().max(1));
    if jobs == 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(jobs);
    let parts: Vec<Result<Vec<R>>> = std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| s.spawn(|| c.iter().map(&f).collect::<Result<Vec<R>>>()))
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(items.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

fn load_dataset(manifest: &Path, frame_rate: Option<f64>) -> Result<Dataset> {
    let mut m = Manifest::load(manifest)?;
    if let Some(r) = frame_rate {
        m.frame_rate_hz = r;
    }
    Dataset::load(&m)
}

fn cmd_synth(mut s: Settings, seed: u64, out: &Path, pieces: Option<usize>, fps: Option<f64>, quiet: bool) -> Result<()> {
    s.synth.seed = seed;
    if let Some(p) = pieces {
        s.synth.pieces = p;
    }
    if let Some(r) = fps {
        s.synth.frame_rate_hz = r;
    }
    let m = write_synthetic(&s.synth, out)?;
    progress(quiet, format!("wrote {} pieces to {}", m.entries.len(), out.display()));
    println!("{}", out.join("manifest.json").display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    mut s: Settings,
    manifest: &Path,
    seed: u64,
    out: &Path,
    log: Option<&Path>,
    mask: Option<&str>,
    max_epochs: Option<usize>,
    quiet: bool,
) -> Result<()> {
    s.train.seed = seed;
    if let Some(m) = mask {
        s.train.ablation = AblationMask::parse(m)?;
    }
    if let Some(e) = max_epochs {
        s.train.max_epochs = e;
    }
    s.train.validate()?;
    let ds = load_dataset(manifest, None)?;
    let (channels, features) = ds.feature_dims()?;
    let splits = assign_splits(&ds, s.train.test_fold, s.train.val_fraction)?;
    progress(
        quiet,
        format!(
            "{} train / {} val / {} test pieces, heads {}",
            splits.train.len(),
            splits.val.len(),
            splits.test.len(),
            s.train.ablation
        ),
    );
    let mut lines = String::new();
    let outcome = train_model_with(&ds, &splits, &s.train, |e| {
        let line = serde_json::to_string(e).expect("log records serialise");
        progress(quiet, &line);
        lines.push_str(&line);
        lines.push('\n');
    })?;
    save_checkpoint(out, &outcome.checkpoint(&s.train, channels, features, ds.frame_rate_hz))?;
    if let Some(path) = log {
        write_atomic(path, lines.as_bytes())?;
    }
    println!(
        "{}",
        json!({
            "checkpoint": out.display().to_string(),
            "epochs": outcome.log.len(),
            "best_epoch": outcome.best_epoch,
            "best_val_loss": outcome.best_val_loss,
        })
    );
    Ok(())
}

fn cmd_track(
    mut s: Settings,
    ckpt_path: &Path,
    features: Option<&Path>,
    manifest: Option<&Path>,
    all: bool,
    out: &Path,
    flags: &DbnFlags,
    jobs: usize,
    quiet: bool,
) -> Result<()> {
    apply_dbn(&mut s, flags);
    s.dbn.validate()?;
    let ckpt = load_checkpoint(ckpt_path)?;
    if let Some(path) = features {
        let h = read_features(path, flags.frame_rate)?;
        let (_, beats) = track(&ckpt.model, &h, &s.dbn)?;
        write_beats(out, &beats)?;
        progress(quiet, format!("{} beats -> {}", beats.len(), out.display()));
        return Ok(());
    }
    let manifest = manifest.ok_or_else(|| Error::Config("need --features or --manifest".into()))?;
    let ds = load_dataset(manifest, flags.frame_rate)?;
    let indices: Vec<usize> = if all {
        (0..ds.pieces.len()).collect()
    } else {
        let t = &ckpt.meta.train_config;
        assign_splits(&ds, t.test_fold, t.val_fraction)?.test
    };
    if indices.is_empty() {
        return Err(Error::EmptySplit("no pieces to track (try --all)".into()));
    }
    let results = par_map(&indices, jobs, |&i| {
        let p = &ds.pieces[i];
        Ok((p.piece_id.clone(), track(&ckpt.model, &p.features, &s.dbn)?.1))
    })?;
    for (id, beats) in &results {
        write_beats(&out.join(format!("{id}.beats")), beats)?;
    }
    progress(quiet, format!("tracked {} pieces into {}", results.len(), out.display()));
    Ok(())
}

/// `(piece id, estimate path, reference)` triples for the eval inputs.
fn eval_pairs(est: &Path, reference: &Path) -> Result<Vec<(String, PathBuf, BeatSequence)>> {
    if !est.is_dir() {
        let id = est.file_stem().map_or("piece".into(), |s| s.to_string_lossy().into_owned());
        return Ok(vec![(id, est.to_path_buf(), read_annotations(reference)?)]);
    }
    let mut pairs = Vec::new();
    if reference.is_dir() {
        let entries = std::fs::read_dir(reference).map_err(|e| Error::Io {
            path: reference.to_path_buf(),
            source: e,
        })?;
        let mut names: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "beats"))
            .collect();
        names.sort();
        for r in names {
            let name = r.file_name().expect("file").to_owned();
            let e = est.join(&name);
            if e.exists() {
                let id = r.file_stem().expect("stem").to_string_lossy().into_owned();
                pairs.push((id, e, read_annotations(&r)?));
            }
        }
    } else {
        let m = Manifest::load(reference)?;
        for entry in &m.entries {
            let e = est.join(format!("{}.beats", entry.piece_id));
            if e.exists() {
                pairs.push((entry.piece_id.clone(), e, read_annotations(&m.annotation_path(entry))?));
            }
        }
    }
    if pairs.is_empty() {
        return Err(Error::EmptySplit(format!(
            "no estimate in {} matches a reference in {}",
            est.display(),
            reference.display()
        )));
    }
    Ok(pairs)
}

fn report_row(name: &str, r: &EvalReport) -> String {
    format!(
        "{name:<24} {:>7.4} {:>7.4} {:>7.4} {:>7.4} {:>7.4}",
        r.f_measure, r.cml_c, r.cml_t, r.aml_c, r.aml_t
    )
}

fn print_report(title: &str, rep: &DatasetReport) {
    println!("{title:<24} {:>7} {:>7} {:>7} {:>7} {:>7}", "F", "CMLc", "CMLt", "AMLc", "AMLt");
    if rep.pieces.len() > 1 {
        for (id, r) in &rep.pieces {
            println!("{}", report_row(id, r));
        }
    }
    println!("{}", report_row("mean", &rep.mean));
}

fn cmd_eval(mut s: Settings, est: &Path, reference: &Path, no_trim: bool, out: Option<&Path>, jobs: usize) -> Result<()> {
    if no_trim {
        s.eval.trim_s = None;
    }
    let pairs = eval_pairs(est, reference)?;
    let scored = par_map(&pairs, jobs, |(id, path, r)| {
        let e = read_annotations(path)?;
        let beat = evaluate_pair(&e, r, &s.eval)?;
        let down = match (e.positions(), r.positions()) {
            (Some(_), Some(_)) => Some(evaluate_downbeats(&e, r, &s.eval)?),
            _ => None,
        };
        Ok((id.clone(), beat, down))
    })?;
    let beat = aggregate(scored.iter().map(|(id, b, _)| (id.clone(), *b)).collect())?;
    let down = if scored.iter().all(|(_, _, d)| d.is_some()) {
        Some(aggregate(scored.iter().map(|(id, _, d)| (id.clone(), d.expect("checked"))).collect())?)
    } else {
        None
    };
    print_report("beats", &beat);
    if let Some(d) = &down {
        println!();
        print_report("downbeats", d);
    }
    if let Some(path) = out {
        let text = serde_json::to_string_pretty(&json!({ "beats": beat, "downbeats": down }))?;
        write_atomic(path, text.as_bytes())?;
    }
    Ok(())
}

fn cmd_ablate(
    mut s: Settings,
    manifest: &Path,
    seed: u64,
    out: Option<&Path>,
    max_epochs: Option<usize>,
    flags: &DbnFlags,
    quiet: bool,
) -> Result<()> {
    s.train.seed = seed;
    if let Some(e) = max_epochs {
        s.train.max_epochs = e;
    }
    apply_dbn(&mut s, flags);
    s.train.validate()?;
    s.dbn.validate()?;
    let ds = load_dataset(manifest, flags.frame_rate)?;
    let splits = assign_splits(&ds, s.train.test_fold, s.train.val_fraction)?;
    progress(quiet, "training 8 head combinations");
    let rows = run_ablation(&ds, &splits, &s.train, &s.dbn, &s.eval)?;
    let mark = |on: bool| if on { "✓" } else { " " };
    println!("{:^3} {:^3} {:^3} {:>9} {:>9} {:>8} {:>10}", "T", "F", "C", "params", "val loss", "beat F", "downbeat F");
    for r in &rows {
        println!(
            "{:^3} {:^3} {:^3} {:>9} {:>9} {:>8.4} {:>10.4}",
            mark(r.mask.temporal),
            mark(r.mask.frequency),
            mark(r.mask.channel),
            r.num_params,
            r.best_val_loss.map_or("-".into(), |v| format!("{v:.5}")),
            r.beat_f,
            r.downbeat_f
        );
    }
    if let Some(path) = out {
        write_atomic(path, serde_json::to_string_pretty(&rows)?.as_bytes())?;
    }
    Ok(())
}

fn cmd_gradcheck(seed: u64, instances: usize) -> Result<bool> {
    let r = run_gradient_suite(instances, seed)?;
    let verdict = if r.passed() { "PASS" } else { "FAIL" };
    println!(
        "{verdict}: {} instances, {} values, max relative error {:.3e} ({})",
        r.instances, r.values_checked, r.max_rel_error, r.worst
    );
    Ok(r.passed())
}

fn run(cli: Cli) -> Result<bool> {
    let s = Settings::load(cli.config.as_deref())?;
    let q = cli.quiet;
    match cli.command {
        Command::Synth {
            seed,
            out,
            pieces,
            frame_rate,
        } => cmd_synth(s, seed, &out, pieces, frame_rate, q)?,
        Command::Train {
            manifest,
            seed,
            out,
            log,
            ablate_mask,
            max_epochs,
        } => cmd_train(s, &manifest, seed, &out, log.as_deref(), ablate_mask.as_deref(), max_epochs, q)?,
        Command::Track {
            checkpoint,
            features,
            manifest,
            all,
            out,
            dbn,
        } => cmd_track(s, &checkpoint, features.as_deref(), manifest.as_deref(), all, &out, &dbn, cli.jobs, q)?,
        Command::Eval {
            estimates,
            reference,
            no_trim,
            out,
        } => cmd_eval(s, &estimates, &reference, no_trim, out.as_deref(), cli.jobs)?,
        Command::Ablate {
            manifest,
            seed,
            out,
            max_epochs,
            dbn,
        } => cmd_ablate(s, &manifest, seed, out.as_deref(), max_epochs, &dbn, q)?,
        Command::Gradcheck { seed, instances } => return cmd_gradcheck(seed, instances),
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 2 } else { 1 })
        }
    }
}
