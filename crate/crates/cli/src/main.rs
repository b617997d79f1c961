use std::path::PathBuf;
use std::process::ExitCode;

use challenger::config::RunConfig;
use challenger::encoding::{caption_backend, visual_backend};
use challenger::pipeline::{ingest, BaselineSelection, Run};
use challenger::{Error, Result};
use clap::{Parser, Subcommand};

/// Predict user participation in short-video challenges.
#[derive(Parser, Debug)]
#[command(name = "challenger", version)]
struct Cli {
    /// TOML run configuration; built-in defaults when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Top-level seed; every stage seed is derived from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory holding every stage's outputs.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Backend override: `challenge=ID`, `user=ID`, `caption=ID`, or a bare
    /// id (a visual id sets both backbones). Repeatable.
    #[arg(long, global = true)]
    backend: Vec<String>,
    /// Baselines for `evaluate`: `none`, `all`, or a comma-separated list.
    #[arg(long, global = true, default_value = "none")]
    baselines: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate a manifest and print counts.
    Ingest {
        /// Manifest file; defaults to the configured one.
        manifest: Option<PathBuf>,
    },
    /// Generate the synthetic corpus described by `[synthetic]`.
    Synth {
        #[arg(long)]
        signal_strength: Option<f64>,
        #[arg(long)]
        flip_rate: Option<f64>,
    },
    /// Encode every video with each configured backbone.
    Encode,
    /// Train and cross-validate the proxy heads, then extract embeddings.
    TrainProxy,
    /// Build challenge and user representations and audit them.
    BuildReprs,
    /// Train one participation head per fold.
    TrainParticipation,
    /// Predict held-out pairs and run baselines.
    Evaluate,
    /// Render both result tables.
    Report,
}

fn apply_backend(cfg: &mut RunConfig, spec: &str) -> Result<()> {
    match spec.split_once('=') {
        Some(("challenge", id)) => cfg.encoder.challenge_backbone = id.into(),
        Some(("user", id)) => cfg.encoder.user_backbone = id.into(),
        Some(("caption", id)) => cfg.encoder.caption_encoder = id.into(),
        Some((key, _)) => return Err(Error::Config(format!("unknown backend slot {key:?}"))),
        None => {
            let known = |r: Result<()>| !matches!(r, Err(Error::Config(_)));
            if known(visual_backend(spec).map(drop)) {
                cfg.encoder.challenge_backbone = spec.into();
                cfg.encoder.user_backbone = spec.into();
            } else if known(caption_backend(spec).map(drop)) {
                cfg.encoder.caption_encoder = spec.into();
            } else {
                return Err(Error::Config(format!("unknown backend {spec:?}")));
            }
        }
    }
    Ok(())
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out_dir {
        cfg.paths.out_dir = out.clone();
    }
    for spec in &cli.backend {
        apply_backend(&mut cfg, spec)?;
    }
    if let Command::Synth {
        signal_strength,
        flip_rate,
    } = &cli.command
    {
        if let Some(s) = signal_strength {
            cfg.synthetic.signal_strength = *s;
        }
        if let Some(f) = flip_rate {
            cfg.synthetic.flip_rate = *f;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<()> {
    let baselines: BaselineSelection = cli.baselines.parse()?;
    let cfg = load_config(cli)?;
    if let Command::Ingest { manifest } = &cli.command {
        let path = manifest.clone().unwrap_or_else(|| cfg.manifest_path());
        let s = ingest(&path)?;
        println!("videos: {}, users: {}, challenges: {}", s.videos, s.users, s.challenges);
        for (tag, n) in &s.per_challenge {
            println!("challenge {tag}: {n}");
        }
        for (user, n) in &s.per_user {
            println!("user {user}: {n}");
        }
        return Ok(());
    }
    let run = Run::new(cfg)?;
    match &cli.command {
        Command::Ingest { .. } => unreachable!(),
        Command::Synth { .. } => {
            let manifest = run.synth()?;
            println!("wrote {}", manifest.display());
        }
        Command::Encode => {
            for r in run.encode()? {
                println!("{}: encoded {}, cached {}", r.backbone, r.encoded, r.skipped);
            }
        }
        Command::TrainProxy => {
            let results = run.train_proxy()?;
            for h in &results.holdout {
                match h.accuracy {
                    Some(a) => println!(
                        "{} head: held-out accuracy {a:.3} on {} videos",
                        h.task.name(),
                        h.test_videos
                    ),
                    None => println!("{} head: no held-out videos", h.task.name()),
                }
            }
        }
        Command::BuildReprs => {
            let audit = run.build_reprs()?;
            println!(
                "challenges: {}, users: {}, skipped users: {}, overlaps: {}",
                audit.challenges,
                audit.users,
                audit.users_without_history.len(),
                audit.overlaps.len()
            );
        }
        Command::TrainParticipation => {
            for (fold, (train, test)) in run.train_participation()?.iter().enumerate() {
                println!("fold {fold}: {train} training pairs, {test} held out");
            }
        }
        Command::Evaluate => {
            for row in run.evaluate(&baselines)?.rows {
                println!("{}: macro-F1 {:.3}", row.name, row.report.macro_f1);
            }
        }
        Command::Report => {
            let (t1, t2) = run.report()?;
            print!("{t1}\n{t2}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
