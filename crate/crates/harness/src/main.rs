use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use cycleacr::ablation::{self, AblationGrid};
use cycleacr::config::RunConfig;
use cycleacr::core::synth::{self, SceneSpec};
use cycleacr::core::frontend::PooledClip;
use cycleacr::{diagnostics, eval, io, train};

#[derive(Parser)]
#[command(name = "cycleacr", version, about = "Actor-context relation head on synthetic video features")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory.
    GenData {
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        count: usize,
    },
    /// Train a model and write a checkpoint directory.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Run an ablation grid and write mean/std mAP per cell.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pairwise actor and context similarity across layers for one scene.
    DiagnoseSimilarity {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export every attention map of one scene.
    DumpAttention {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn load_scene(ckpt: &io::Checkpoint, path: &Path) -> Result<PooledClip> {
    let scene = io::read_scene(path)?;
    Ok(PooledClip::from_map(&scene.map, &scene.boxes, ckpt.config.model.roi_hw)?)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { spec, out, count } => {
            let spec: SceneSpec = match spec {
                Some(p) => io::read_json(&p)?,
                None => SceneSpec::default(),
            };
            let samples = synth::generate(&spec, count)?;
            let manifest = io::write_dataset(&out, &samples, spec.num_classes, spec.class_categories())?;
            log::info!("wrote {} clips to {}", manifest.clips.len(), out.display());
        }
        Command::Train { config, data, out } => {
            let cfg: RunConfig = match config {
                Some(p) => io::read_json(&p)?,
                None => RunConfig::default(),
            };
            let dataset = io::load_dataset(&data, cfg.model.roi_hw)?;
            let (train_set, val) = if cfg.eval_every > 0 {
                let (t, v) = dataset.split(&cfg.split)?;
                (t, Some(v))
            } else {
                (dataset, None)
            };
            let trained = train::train(&cfg, &train_set, val.as_ref())?;
            io::save_checkpoint(&out, &trained.checkpoint)?;
            trained.log.write_csv(create(&out.join("train_log.csv"))?)?;
            if let Some(loss) = trained.log.final_loss() {
                println!("final loss {loss:.6}");
            }
            if let Some(r) = trained.last_eval {
                println!("val mAP {:.4}", r.map);
            }
        }
        Command::Eval { ckpt, data, report } => {
            let ckpt = io::load_checkpoint(&ckpt)?;
            let dataset = io::load_dataset(&data, ckpt.config.model.roi_hw)?;
            let r = eval::evaluate(&ckpt.model, &dataset, ckpt.config.confidence_threshold)?;
            if !r.excluded_classes.is_empty() {
                eprintln!("classes without positives left out of mAP: {:?}", r.excluded_classes);
            }
            io::write_json(&report, &r)?;
            println!("mAP {:.4}", r.map);
        }
        Command::Ablate { config, out } => {
            let grid: AblationGrid = io::read_json(&config)?;
            let results = ablation::run(&grid)?;
            ablation::write_csv(&results, create(&out)?)?;
            print!("{}", ablation::render_tables(&results));
        }
        Command::DiagnoseSimilarity { ckpt, scene, out } => {
            let ckpt = io::load_checkpoint(&ckpt)?;
            let clip = load_scene(&ckpt, &scene)?;
            let rows = diagnostics::similarity_diagnostic(&ckpt.model, &clip)?;
            diagnostics::write_similarity(&rows, create(&out)?)?;
        }
        Command::DumpAttention { ckpt, scene, out } => {
            let ckpt = io::load_checkpoint(&ckpt)?;
            let clip = load_scene(&ckpt, &scene)?;
            let traces = diagnostics::attention_traces(&ckpt.model, &clip)?;
            diagnostics::write_attention(&traces, create(&out)?)?;
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
