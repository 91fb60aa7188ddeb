//! Command-line driver: synthesize scenes, preprocess gaze supervision,
//! train the regularized attention model, evaluate, ablate, render.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gazereg_core::config::{config_hash, RunConfig};
use gazereg_core::error::Error;
use gazereg_core::eval::{
    ablation_csv, evaluate, render_heatmap_pgm, render_patches_pgm, run_ablation, AblationVariant,
    Report,
};
use gazereg_core::flow::OcclusionConfig;
use gazereg_core::gaze::{read_heatmap_file, AggregationConfig, PatchGrid, SmoothingConfig};
use gazereg_core::pipeline::{
    load_batches, preprocess_dataset, read_targets_meta, write_manifest, Manifest,
    PreprocessConfig, SupervisionMode,
};
use gazereg_core::synth::{generate_scene, read_sample_dir, sample_dir_name, write_sample_dir};
use gazereg_core::trainer::{
    attention_records, read_checkpoint_file, train, write_checkpoint, ModelConfig,
};
use gazereg_core::numerics::RngState;

#[derive(Parser)]
#[command(name = "gazereg", about = "Gaze-regularized attention pipeline", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic egocentric dataset.
    Synth(SynthArgs),
    /// Build per-frame supervision targets from gaze + flow.
    Preprocess(PreprocessArgs),
    /// Train the gaze-regularized classifier.
    Train(TrainArgs),
    /// Evaluate a checkpoint against a preprocessed dataset.
    Eval(EvalArgs),
    /// Sweep lambda / supervision-mode / window-size variants.
    Ablate(AblateArgs),
    /// Render supervision or attention overlays as PGM images.
    Render(RenderArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Scene spec JSON (defaults used when omitted).
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct PreprocessArgs {
    /// Dataset directory produced by `synth`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20.0)]
    sigma: f64,
    #[arg(long, default_value_t = 200)]
    window_ms: i64,
    #[arg(long, default_value_t = 6)]
    max_points: usize,
    #[arg(long, default_value_t = 20.0)]
    eps: f64,
    #[arg(long, default_value_t = 0.60)]
    eta: f64,
    #[arg(long, default_value_t = 8)]
    patch: usize,
    #[arg(long, default_value = "aggregated")]
    mode: SupervisionMode,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Preprocessed targets directory.
    #[arg(long)]
    targets: PathBuf,
    /// Output checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// JSONL epoch log path (defaults to `<out>.log.jsonl`).
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long, default_value_t = 100.0)]
    lambda: f64,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 8)]
    batch: usize,
    #[arg(long, default_value_t = 32)]
    d_model: usize,
    #[arg(long, default_value_t = 32)]
    d_k: usize,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    targets: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 10)]
    topk: usize,
    /// Report JSON output path (defaults to stdout only).
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    /// Run config JSON (defaults used when omitted).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0,50,500")]
    lambdas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    seeds: Vec<u64>,
    #[arg(long, default_value_t = 40)]
    n_train: usize,
    #[arg(long, default_value_t = 20)]
    n_test: usize,
    #[arg(long, default_value_t = 10)]
    topk: usize,
    /// Also sweep singular vs aggregated supervision.
    #[arg(long)]
    modes: bool,
    /// Extra window sizes (max points) to sweep.
    #[arg(long, value_delimiter = ',')]
    points: Vec<usize>,
}

#[derive(Args)]
struct RenderArgs {
    /// One sample directory.
    #[arg(long)]
    sample: PathBuf,
    /// Matching targets directory for that sample.
    #[arg(long)]
    targets: PathBuf,
    /// Optional checkpoint: also render attention rows.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    patch: usize,
}

fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::Divergence { .. } => 3,
        Error::ConfigMismatch { .. } => 4,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Synth(a) => cmd_synth(a),
        Cmd::Preprocess(a) => cmd_preprocess(a),
        Cmd::Train(a) => cmd_train(a),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Ablate(a) => cmd_ablate(a),
        Cmd::Render(a) => cmd_render(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn cmd_synth(a: SynthArgs) -> Result<(), Error> {
    let spec = match &a.spec {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
        None => Default::default(),
    };
    let hash = config_hash(&spec);
    std::fs::create_dir_all(&a.out)?;
    let root = RngState::new(a.seed);
    let mut samples = Vec::with_capacity(a.count);
    for i in 0..a.count {
        let sample = generate_scene(&spec, &root.stream_indexed("sample", i as u64))?;
        let name = sample_dir_name(i);
        write_sample_dir(&a.out.join(&name), &sample, &hash)?;
        samples.push(name);
    }
    write_manifest(
        &a.out,
        &Manifest { count: a.count, seed: a.seed, config_hash: hash, samples },
    )?;
    println!("wrote {} samples to {}", a.count, a.out.display());
    Ok(())
}

fn prep_config(a: &PreprocessArgs) -> PreprocessConfig {
    PreprocessConfig {
        smoothing: SmoothingConfig { sigma: a.sigma },
        aggregation: AggregationConfig { window_ms: a.window_ms, max_points: a.max_points },
        occlusion: OcclusionConfig { eps: a.eps, eta: a.eta },
        patch_px: a.patch,
        mode: a.mode,
    }
}

fn cmd_preprocess(a: PreprocessArgs) -> Result<(), Error> {
    let cfg = prep_config(&a);
    let fallbacks = preprocess_dataset(&a.data, &a.out, &cfg)?;
    println!(
        "preprocessed {} -> {} (hash {}, {} uniform fallbacks)",
        a.data.display(),
        a.out.display(),
        config_hash(&cfg),
        fallbacks.len()
    );
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<(), Error> {
    let meta = read_targets_meta(&a.targets)?;
    let batches = load_batches(&a.data, &a.targets)?;
    let cfg = ModelConfig {
        d_model: a.d_model,
        d_k: a.d_k,
        patch_px: meta.patch_px,
        n_classes: batches.iter().map(|(_, b)| b.label).max().unwrap_or(0) + 1,
        lambda: a.lambda,
        lr: a.lr,
        epochs: a.epochs,
        batch: a.batch,
        seed: a.seed,
        kl_floor: 1e-8,
    };
    let dataset: Vec<_> = batches.into_iter().map(|(_, b)| b).collect();
    let (params, log) = train(&dataset, &cfg)?;
    let mut jsonl = String::new();
    for s in &log {
        jsonl.push_str(&serde_json::to_string(s)?);
        jsonl.push('\n');
    }
    let log_path = a.log.unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".log.jsonl");
        PathBuf::from(p)
    });
    std::fs::write(&log_path, jsonl)?;
    std::fs::write(&a.out, write_checkpoint(&params, &cfg, &meta.config_hash))?;
    let last = log.last().expect("train emits at least one epoch");
    println!(
        "trained {} epochs: ce {:.4} kl {:.4} acc {:.3} -> {}",
        log.len(),
        last.ce,
        last.kl,
        last.acc,
        a.out.display()
    );
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<(), Error> {
    let (params, cfg, targets_hash) = read_checkpoint_file(&a.model)?;
    let meta = read_targets_meta(&a.targets)?;
    if targets_hash != meta.config_hash {
        return Err(Error::ConfigMismatch { model: targets_hash, targets: meta.config_hash });
    }
    let batches: Vec<_> = load_batches(&a.data, &a.targets)?
        .into_iter()
        .map(|(_, b)| b)
        .collect();
    let (summary, _) = evaluate(&batches, &params, &cfg, a.topk)?;
    let report = Report {
        accuracy: summary.accuracy,
        mean_overlap: summary.mean_overlap,
        k: summary.k,
        mean_kl: summary.mean_kl,
        n_samples: summary.n_samples,
        n_frames: summary.n_frames,
        config_hash: meta.config_hash,
    };
    let mut json = serde_json::to_string_pretty(&report)?;
    json.push('\n');
    if let Some(p) = &a.report {
        std::fs::write(p, &json)?;
    }
    print!("{json}");
    Ok(())
}

fn cmd_ablate(a: AblateArgs) -> Result<(), Error> {
    let run: RunConfig = match &a.config {
        Some(p) => RunConfig::from_json(&std::fs::read_to_string(p)?)?,
        None => RunConfig::default(),
    };
    let prep = PreprocessConfig {
        smoothing: run.smoothing,
        aggregation: run.aggregation,
        occlusion: run.occlusion,
        patch_px: run.patch_px,
        mode: SupervisionMode::Aggregated,
    };
    let mut variants = Vec::new();
    for &l in &a.lambdas {
        variants.push(AblationVariant {
            name: format!("lambda_{l}"),
            lambda: l,
            mode: SupervisionMode::Aggregated,
            max_points: run.aggregation.max_points,
        });
    }
    if a.modes {
        variants.push(AblationVariant {
            name: "singular".into(),
            lambda: run.model.lambda,
            mode: SupervisionMode::Singular,
            max_points: run.aggregation.max_points,
        });
    }
    for &p in &a.points {
        variants.push(AblationVariant {
            name: format!("points_{p}"),
            lambda: run.model.lambda,
            mode: SupervisionMode::Aggregated,
            max_points: p,
        });
    }
    let rows = run_ablation(
        &run.scene,
        &prep,
        &run.model,
        &variants,
        &a.seeds,
        a.n_train,
        a.n_test,
        a.topk,
    )?;
    std::fs::create_dir_all(&a.out)?;
    let csv = ablation_csv(&rows);
    std::fs::write(a.out.join("ablation.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

fn cmd_render(a: RenderArgs) -> Result<(), Error> {
    let sample = read_sample_dir(&a.sample)?;
    std::fs::create_dir_all(&a.out)?;
    let grid = PatchGrid::for_frame(sample.truth.width, sample.truth.height, a.patch)?;
    for (t, frame) in sample.frames.iter().enumerate() {
        let hm_path = a.targets.join(format!("heatmap_{t}.bin"));
        if hm_path.exists() {
            let h = read_heatmap_file(&hm_path)?;
            std::fs::write(
                a.out.join(format!("target_{t}.pgm")),
                render_heatmap_pgm(frame, &h)?,
            )?;
        }
    }
    if let Some(model) = &a.model {
        let (params, cfg, _) = read_checkpoint_file(model)?;
        let records = attention_records(&sample.frames, &params, &cfg)?;
        for (t, (frame, r)) in sample.frames.iter().zip(&records).enumerate() {
            let dist = gazereg_core::gaze::PatchDistribution { probs: r.weights.clone() };
            std::fs::write(
                a.out.join(format!("attention_{t}.pgm")),
                render_patches_pgm(frame, &dist, &grid)?,
            )?;
        }
    }
    println!("rendered overlays to {}", a.out.display());
    Ok(())
}
