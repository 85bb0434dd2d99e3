//! Command-line surface.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use habitmotion_core::habit::HabitMode;
use habitmotion_core::transfer::{batch_transfer, cross_category_requests, transfer, ManifestRow, TransferRequest};

use crate::ablate::{format_table, run_study, AblationInputs, Study, ABLATION_HEADER};
use crate::config::{Profile, RunConfig};
use crate::error::{AppError, CoreContext, Result};
use crate::evaluate::{evaluate, load_generated, parse_metrics};
use crate::formats::{load_embeddings, load_motion, load_motion_dir, save_motion, write_csv, write_file};
use crate::manifest::write_manifest;
use crate::pipeline::{
    as_sources, load_context, load_extractor, synthesize, train_extractor_stage, train_habits, train_vqvae_stage,
    CorpusProfile,
};
use crate::plot::{pca_2d, render_svg};

#[derive(Debug, Parser)]
#[command(name = "habitmotion", version, about = "Habit-preserved motion transfer between animal categories")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Options shared by commands that read a run configuration.
#[derive(Debug, Args)]
pub struct RunOptions {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Hyperparameter profile (paper or desk); overrides the config file and
    /// HABITMOTION_PROFILE.
    #[arg(long, value_name = "PROFILE", value_parser = parse_profile)]
    pub run_profile: Option<Profile>,
}

impl RunOptions {
    pub fn resolve(&self) -> Result<RunConfig> {
        RunConfig::resolve(self.config.as_deref(), self.run_profile)
    }
}

fn parse_profile(s: &str) -> std::result::Result<Profile, String> {
    s.parse().map_err(|e: AppError| e.to_string())
}

fn parse_mode(s: &str) -> std::result::Result<HabitMode, String> {
    s.parse().map_err(|e: habitmotion_core::Error| e.to_string())
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic labeled corpus and its category embedding file.
    Synth {
        /// Corpus size.
        #[arg(long, value_enum)]
        profile: CorpusProfile,
        /// Output directory.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a model and write its checkpoint and CSV log.
    Train {
        #[command(subcommand)]
        stage: TrainStage,
    },
    /// Transfer one motion to a target category.
    Transfer {
        /// Source motion JSON.
        #[arg(long, value_name = "FILE")]
        src: PathBuf,
        /// Target category label.
        #[arg(long)]
        target: String,
        /// Habit latent: det (flow image of zero) or stoch (seeded draw).
        #[arg(long, default_value = "det", value_parser = parse_mode)]
        mode: HabitMode,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output motion JSON.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Also write a one-row manifest CSV.
        #[arg(long, value_name = "FILE")]
        manifest: Option<PathBuf>,
        #[command(flatten)]
        run: RunOptions,
    },
    /// Transfer every motion in a directory to every other eligible category.
    BatchTransfer {
        /// Directory of source motion JSON files.
        #[arg(long, value_name = "DIR")]
        sources: PathBuf,
        /// Output directory for motions and manifest.csv.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[arg(long, default_value = "det", value_parser = parse_mode)]
        mode: HabitMode,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Smallest category size that may be a target; the config value
        /// when omitted.
        #[arg(long)]
        min_samples: Option<usize>,
        #[command(flatten)]
        run: RunOptions,
    },
    /// Score generated motions against real ones.
    Evaluate {
        /// Directory of real motion JSON files.
        #[arg(long, value_name = "DIR")]
        real: PathBuf,
        /// Directory of generated motions, or a transfer manifest CSV.
        #[arg(long, value_name = "DIR|CSV")]
        generated: PathBuf,
        /// `all` or a comma list of fid, intra_fid, downstream, diversity,
        /// nna, mpjpe.
        #[arg(long, default_value = "all")]
        metrics: String,
        /// Metrics JSON path; a per-category CSV is written beside it.
        /// Printed to stdout when omitted.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
        #[command(flatten)]
        run: RunOptions,
    },
    /// Train and score ablation variants.
    Ablate {
        #[arg(long, value_enum)]
        study: Study,
        /// Comparison table CSV.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
        #[command(flatten)]
        run: RunOptions,
    },
    /// Plot category embeddings in 2D (PCA) as SVG.
    PlotEmbeddings {
        /// Embedding JSON file.
        #[arg(long, value_name = "FILE")]
        embeddings: PathBuf,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum TrainStage {
    /// Motion VQ-VAE; needs the habit checkpoints of every training category.
    Vqvae {
        #[command(flatten)]
        run: RunOptions,
        /// Global seed override.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Habit prior of one category, or of every training category.
    Habit {
        #[arg(long)]
        category: Option<String>,
        #[command(flatten)]
        run: RunOptions,
        /// Global seed override.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Category classifier used as the evaluation feature extractor.
    Extractor {
        #[command(flatten)]
        run: RunOptions,
        /// Global seed override.
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn with_seed(run: &RunOptions, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = run.resolve()?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn file_name(path: &Path) -> String {
    path.file_name().unwrap_or_default().to_string_lossy().into_owned()
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { profile, out, seed } => {
            let corpus = synthesize(profile, &out, seed)?;
            println!("wrote {} motions in {} categories to {}", corpus.len(), corpus.categories().len(), out.display());
        }
        Command::Train { stage } => match stage {
            TrainStage::Vqvae { run, seed } => {
                let cfg = with_seed(&run, seed)?;
                let report = train_vqvae_stage(&cfg)?;
                let last = report.log.last().map(|r| r.total).unwrap_or(f64::NAN);
                println!(
                    "vqvae: final loss {last:.6}, perplexity {:.3}, {} codes reset",
                    report.final_perplexity, report.codes_reset
                );
            }
            TrainStage::Habit { category, run, seed } => {
                let cfg = with_seed(&run, seed)?;
                for c in train_habits(&cfg, category.as_deref())? {
                    println!("habit: wrote {}", cfg.paths.habit_checkpoint(&c).display());
                }
            }
            TrainStage::Extractor { run, seed } => {
                let cfg = with_seed(&run, seed)?;
                let model = train_extractor_stage(&cfg)?;
                println!("extractor: {} classes, corpus {}", model.labels.len(), model.corpus_hash);
            }
        },
        Command::Transfer {
            src,
            target,
            mode,
            seed,
            out,
            manifest,
            run,
        } => {
            let cfg = run.resolve()?;
            let source = load_motion(&src)?;
            let ctx = load_context(&cfg)?;
            let request = TransferRequest {
                source_id: src.file_stem().unwrap_or_default().to_string_lossy().into_owned(),
                source,
                target,
                mode,
                seed,
            };
            let output = transfer(&request, &ctx).context("transfer")?;
            save_motion(&out, &output.motion)?;
            let row = ManifestRow {
                source_id: request.source_id.clone(),
                source_category: request.source.category().to_string(),
                target_category: request.target.clone(),
                seed,
                mode,
                habit_from: match &output.habit_source {
                    habitmotion_core::retrieval::HabitSource::Own => request.target.clone(),
                    habitmotion_core::retrieval::HabitSource::Retrieved { category, .. } => category.clone(),
                },
            };
            if let Some(m) = manifest {
                let rel = pathdiff(&out, m.parent().unwrap_or(Path::new("")));
                write_manifest(&m, &[(rel, row.clone())])?;
            }
            println!("wrote {} ({} habit from {})", out.display(), row.target_category, row.habit_from);
        }
        Command::BatchTransfer {
            sources,
            out,
            mode,
            seed,
            min_samples,
            run,
        } => {
            let cfg = run.resolve()?;
            let motions = load_motion_dir(&sources)?;
            let ctx = load_context(&cfg)?;
            let min = min_samples.unwrap_or(cfg.metrics.downstream_min_samples);
            let requests = cross_category_requests(&as_sources(&motions), min, mode, seed);
            let batch = batch_transfer(&requests, &ctx);
            let mut rows = Vec::with_capacity(batch.motions.len());
            for (i, (m, row)) in batch.motions.iter().zip(&batch.manifest).enumerate() {
                let name = format!("{:05}_{}_to_{}.json", i, row.source_id, row.target_category);
                save_motion(&out.join(&name), m)?;
                rows.push((name, row.clone()));
            }
            write_manifest(&out.join("manifest.csv"), &rows)?;
            for (i, e) in &batch.failures {
                eprintln!("request {i} failed: {e}");
            }
            println!(
                "wrote {} motions and manifest.csv to {} ({} failures)",
                rows.len(),
                out.display(),
                batch.failures.len()
            );
        }
        Command::Evaluate {
            real,
            generated,
            metrics,
            out,
            run,
        } => {
            let cfg = run.resolve()?;
            let selected = parse_metrics(&metrics)?;
            let real = load_motion_dir(&real)?;
            let generated = load_generated(&generated)?;
            let extractor = load_extractor(&cfg)?;
            let report = evaluate(
                &real,
                &generated,
                &extractor,
                &selected,
                cfg.metrics.diversity_pairs,
                cfg.seeds().child("metrics").seed(),
            )?;
            match out {
                Some(path) => {
                    report.save(&path)?;
                    println!("wrote {}", path.display());
                }
                None => println!("{}", report.to_json()),
            }
        }
        Command::Ablate { study, out, run } => {
            let cfg = run.resolve()?;
            let inputs = AblationInputs::load(&cfg)?;
            let rows = run_study(&cfg, study, &inputs)?;
            print!("{}", format_table(&rows));
            if let Some(path) = out {
                let records: Vec<Vec<String>> = rows.iter().map(|r| r.record()).collect();
                write_csv(&path, &ABLATION_HEADER, &records)?;
            }
        }
        Command::PlotEmbeddings { embeddings, out } => {
            let store = load_embeddings(&embeddings)?;
            let points = pca_2d(&store)?;
            write_file(&out, render_svg(&points).as_bytes())?;
            println!("wrote {} ({} categories)", file_name(&out), points.len());
        }
    }
    Ok(())
}

/// `path` relative to `base` when it lies inside it, else as given.
fn pathdiff(path: &Path, base: &Path) -> String {
    let abs = |p: &Path| std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf());
    let (p, b) = (abs(path), abs(base));
    p.strip_prefix(&b).unwrap_or(&p).to_string_lossy().into_owned()
}
