//! `diffsal`: generate data, train, sample, evaluate, and ablate a
//! diffusion-based audio-visual saliency model.
//!
//! Commands compose over one output root (`--out`, default `out/`):
//! `synth` writes `dataset/`, `train` reads it and writes checkpoints plus
//! `train_log.csv`, `sample` writes `predictions/`, `eval` compares the two
//! and writes `eval.csv`, `ablate` writes `ablation.csv`. Every random
//! choice flows from `--seed`, so reruns are byte-identical.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use diffsal_core::ablation;
use diffsal_core::config::RunConfig;
use diffsal_core::dataset::{self, Dataset};
use diffsal_core::diffusion::cosine_schedule;
use diffsal_core::io::{self, manifest::ManifestEntry, pgm};
use diffsal_core::metrics;
use diffsal_core::model::SaliencyModel;
use diffsal_core::synth::{self, SceneConfig};
use diffsal_core::training::{epoch_steps, Trainer};
use diffsal_core::{CounterRng, Tensor};

#[derive(Parser)]
#[command(name = "diffsal", version, about = "Audio-visual saliency by conditional diffusion")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Config file of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master random seed (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel sections.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output root directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Named override bundle applied beneath the config file: desk or paper.
    #[arg(long, global = true)]
    preset: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic sounding-object dataset under OUT/dataset.
    Synth {
        /// Number of samples (overrides synth.count).
        #[arg(long)]
        count: Option<usize>,
    },
    /// Train a model; writes OUT/checkpoints, OUT/model.ckpt, OUT/train_log.csv.
    Train {
        /// Dataset directory or manifest path (default OUT/dataset).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Conditioning streams: av, video_only, or audio_only.
        #[arg(long)]
        mode: Option<String>,
        /// Fusion form: mim, addition, concatenation, or bilinear.
        #[arg(long)]
        fusion: Option<String>,
        /// Attention form: efficient or standard.
        #[arg(long)]
        attention: Option<String>,
        /// Training objective: mse, kl, or ce.
        #[arg(long)]
        loss: Option<String>,
        /// Passes over the dataset (overrides train.epochs).
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Sample saliency maps for every clip in a dataset into OUT/predictions.
    Sample {
        /// Checkpoint to load (default OUT/model.ckpt). Its `.cfg` sidecar
        /// restores the training-time configuration unless --config is given.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Dataset directory or manifest path (default OUT/dataset).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Denoising steps (overrides diffusion.steps).
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Score predictions against ground truth; writes OUT/eval.csv.
    Eval {
        /// Prediction directory of PGM maps (default OUT/predictions).
        #[arg(long)]
        pred: Option<PathBuf>,
        /// Ground-truth directory (default OUT/dataset).
        #[arg(long)]
        gt: Option<PathBuf>,
    },
    /// Sweep fusion, attention, loss, mode, and step count; writes OUT/ablation.csv.
    Ablate {
        /// Dataset directory or manifest path (default OUT/dataset).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Training passes per sweep variant (overrides train.epochs).
        #[arg(long)]
        epochs: Option<usize>,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { ref count } => cmd_synth(&cli.global, *count),
        Command::Train { ref data, ref mode, ref fusion, ref attention, ref loss, ref epochs } => {
            cmd_train(&cli.global, data.as_deref(), [
                ("model.mode", mode.as_deref()),
                ("model.fusion", fusion.as_deref()),
                ("model.attention", attention.as_deref()),
                ("train.loss", loss.as_deref()),
            ], *epochs)
        }
        Command::Sample { ref checkpoint, ref data, ref steps } => {
            cmd_sample(&cli.global, checkpoint.as_deref(), data.as_deref(), *steps)
        }
        Command::Eval { ref pred, ref gt } => cmd_eval(&cli.global, pred.as_deref(), gt.as_deref()),
        Command::Ablate { ref data, ref epochs } => {
            cmd_ablate(&cli.global, data.as_deref(), *epochs)
        }
    }
}

// --- configuration plumbing -------------------------------------------------

/// Defaults, then preset, then `--config` (or the checkpoint sidecar when no
/// file is given), then the global flag overrides.
fn load_config(g: &Global, sidecar: Option<&Path>) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(preset) = &g.preset {
        cfg.apply_preset(preset)?;
    }
    if let Some(path) = &g.config {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        cfg.merge_text(&text)?;
    } else if let Some(side) = sidecar {
        if side.is_file() {
            let text = std::fs::read_to_string(side)
                .with_context(|| format!("reading checkpoint sidecar {}", side.display()))?;
            cfg.merge_text(&text)?;
        }
    }
    if let Some(seed) = g.seed {
        cfg.set("seed", &seed.to_string())?;
    }
    if let Some(jobs) = g.jobs {
        cfg.set("jobs", &jobs.to_string())?;
    }
    Ok(cfg)
}

fn manifest_path(data: &Path) -> PathBuf {
    if data.is_dir() {
        data.join("manifest.tsv")
    } else {
        data.to_path_buf()
    }
}

fn load_data(cfg: &RunConfig, data: Option<&Path>, out: &Path) -> Result<Dataset> {
    let path = manifest_path(&data.map(Path::to_path_buf).unwrap_or_else(|| out.join("dataset")));
    let set = dataset::load(&path, &cfg.frontend()?)
        .with_context(|| format!("loading dataset {}", path.display()))?;
    if set.is_empty() {
        bail!("dataset {} is empty", path.display());
    }
    Ok(set)
}

// --- synth ------------------------------------------------------------------

fn cmd_synth(g: &Global, count: Option<usize>) -> Result<()> {
    let mut cfg = load_config(g, None)?;
    if let Some(c) = count {
        cfg.set("synth.count", &c.to_string())?;
    }
    cfg.validate()?;
    let n = cfg.get_usize("synth.count")?;
    let scene = cfg.scene()?;
    let dir = g.out.join("dataset");
    let entries = synth_parallel(n, &scene, &dir, cfg.jobs()?)?;
    println!("wrote {} samples to {}", entries.len(), dir.display());
    Ok(())
}

/// Parallel generation. Sample `i` depends only on `sample_config(base, i)`,
/// so the worker split cannot change the output bytes.
fn synth_parallel(
    n: usize,
    base: &SceneConfig,
    out_dir: &Path,
    jobs: usize,
) -> Result<Vec<ManifestEntry>> {
    if jobs <= 1 || n <= 1 {
        return Ok(synth::make_dataset(n, base, out_dir)?);
    }
    std::fs::create_dir_all(out_dir)?;
    let next = AtomicUsize::new(0);
    let done: Mutex<Vec<(usize, ManifestEntry)>> = Mutex::new(Vec::with_capacity(n));
    std::thread::scope(|scope| -> Result<()> {
        let mut handles = Vec::new();
        for _ in 0..jobs.min(n) {
            handles.push(scope.spawn(|| -> Result<()> {
                loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= n {
                        return Ok(());
                    }
                    let cfg = synth::sample_config(base, i);
                    let sample = synth::generate(&cfg)?;
                    let entry =
                        synth::write_sample(out_dir, &format!("sample_{i:03}"), &cfg, &sample)?;
                    done.lock().unwrap().push((i, entry));
                }
            }));
        }
        for h in handles {
            h.join().expect("synth worker panicked")?;
        }
        Ok(())
    })?;
    let mut pairs = done.into_inner().unwrap();
    pairs.sort_by_key(|(i, _)| *i);
    let entries: Vec<ManifestEntry> = pairs.into_iter().map(|(_, e)| e).collect();
    io::manifest::save(&out_dir.join("manifest.tsv"), &entries)?;
    Ok(io::manifest::load(&out_dir.join("manifest.tsv"))?)
}

// --- train ------------------------------------------------------------------

fn cmd_train(
    g: &Global,
    data: Option<&Path>,
    overrides: [(&str, Option<&str>); 4],
    epochs: Option<usize>,
) -> Result<()> {
    let mut cfg = load_config(g, None)?;
    for (key, value) in overrides {
        if let Some(v) = value {
            cfg.set(key, v)?;
        }
    }
    if let Some(e) = epochs {
        cfg.set("train.epochs", &e.to_string())?;
    }
    cfg.validate()?;

    let set = load_data(&cfg, data, &g.out)?;
    let sched = cosine_schedule(cfg.t_max()?)?;
    let train_cfg = cfg.train(set.len())?;
    let epochs = cfg.epochs()?;
    let per_epoch = epoch_steps(set.len(), train_cfg.batch);
    let total = train_cfg.steps;

    let mut model = SaliencyModel::new(cfg.model()?, cfg.seed()?)?;
    println!(
        "training {} parameters on {} samples: {epochs} epochs x {per_epoch} steps",
        model.num_parameters(),
        set.len()
    );
    let ckpt_dir = g.out.join("checkpoints");
    std::fs::create_dir_all(&ckpt_dir)?;
    let mut trainer = Trainer::new(&model, train_cfg.clone());
    let mut csv = String::from("step,loss,lr,wallclock_ms\n");
    for epoch in 0..epochs {
        let mut epoch_loss = 0.0;
        for _ in 0..per_epoch {
            let rec = trainer.step(&mut model, &set.items, &sched)?;
            epoch_loss += rec.loss;
            if (rec.step - 1) % train_cfg.log_every == 0 || rec.step == total {
                csv.push_str(&format!(
                    "{},{:.6e},{:.6e},{:.1}\n",
                    rec.step, rec.loss, rec.lr, rec.wallclock_ms
                ));
            }
        }
        model.save(&ckpt_dir.join(format!("epoch_{epoch:03}.ckpt")))?;
        println!("epoch {epoch}: mean loss {:.6}", epoch_loss / per_epoch as f64);
    }
    model.save(&g.out.join("model.ckpt"))?;
    io::write_atomic(&g.out.join("model.cfg"), cfg.dump().as_bytes())?;
    io::write_atomic(&g.out.join("train_log.csv"), csv.as_bytes())?;
    println!("saved {}", g.out.join("model.ckpt").display());
    Ok(())
}

// --- sample -----------------------------------------------------------------

fn cmd_sample(
    g: &Global,
    checkpoint: Option<&Path>,
    data: Option<&Path>,
    steps: Option<usize>,
) -> Result<()> {
    let ckpt = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| g.out.join("model.ckpt"));
    let sidecar = ckpt.with_extension("cfg");
    let mut cfg = load_config(g, Some(&sidecar))?;
    if let Some(s) = steps {
        cfg.set("diffusion.steps", &s.to_string())?;
    }
    cfg.validate()?;

    let set = load_data(&cfg, data, &g.out)?;
    let model = SaliencyModel::load(cfg.model()?, &ckpt, cfg.seed()?)
        .with_context(|| format!("loading checkpoint {}", ckpt.display()))?;
    let sched = cosine_schedule(cfg.t_max()?)?;
    let steps = cfg.sample_steps()?;
    let dir = g.out.join("predictions");
    std::fs::create_dir_all(&dir)?;
    let seed = cfg.seed()?;
    for i in 0..set.len() {
        let mut rng = CounterRng::keyed(seed, i as u64, "sample-noise");
        let item = &set.items[i];
        let map = model.sample(&item.clip, &item.mel, steps, &sched, &mut rng)?;
        let flat = Tensor::new(vec![map.shape[0], map.shape[1]], map.data)?;
        pgm::save(&dir.join(format!("{}.pgm", set.ids[i])), &flat, 65535)?;
    }
    println!("wrote {} maps to {} ({steps} steps)", set.len(), dir.display());
    Ok(())
}

// --- eval -------------------------------------------------------------------

fn cmd_eval(g: &Global, pred: Option<&Path>, gt: Option<&Path>) -> Result<()> {
    let pred = pred.map(Path::to_path_buf).unwrap_or_else(|| g.out.join("predictions"));
    let gt = gt.map(Path::to_path_buf).unwrap_or_else(|| g.out.join("dataset"));
    let report = metrics::evaluate(&pred, &gt)?;
    print!("{}", report.to_table());
    io::write_atomic(&g.out.join("eval.csv"), report.to_csv().as_bytes())?;
    println!("wrote {}", g.out.join("eval.csv").display());
    Ok(())
}

// --- ablate -----------------------------------------------------------------

fn cmd_ablate(g: &Global, data: Option<&Path>, epochs: Option<usize>) -> Result<()> {
    let mut cfg = load_config(g, None)?;
    if let Some(e) = epochs {
        cfg.set("train.epochs", &e.to_string())?;
    }
    cfg.validate()?;
    let set = load_data(&cfg, data, &g.out)?;
    let sched = cosine_schedule(cfg.t_max()?)?;
    let train_cfg = cfg.train(set.len())?;
    let report = ablation::run_sweeps(
        &cfg.model()?,
        &train_cfg,
        &set,
        &sched,
        cfg.sample_steps()?,
        |line| println!("{line}"),
    )?;
    print!("{}", report.to_table());
    println!("{}", report.loss_ranking_line());
    io::write_atomic(&g.out.join("ablation.csv"), report.to_csv().as_bytes())?;
    println!("wrote {}", g.out.join("ablation.csv").display());
    Ok(())
}
