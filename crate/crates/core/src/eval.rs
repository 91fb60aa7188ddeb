//! Evaluation: classification accuracy, top-k attention/target overlap,
//! residual KL, ablation sweeps, and heatmap visualization.

use crate::error::{Error, Result};
use crate::gaze::{Heatmap, PatchDistribution, PatchGrid};
use crate::numerics::{RngState, Tensor};
use crate::pipeline::{batch_from_synthetic, PreprocessConfig, SupervisionMode};
use crate::synth::{generate_scene, SceneSpec, SyntheticSample};
use crate::trainer::{attention_records, kl_regularizer, predict, train, Batch, ModelConfig, ModelParams};

/// Indices of the `k` largest values; ties break toward the smaller index.
pub fn topk_indices(values: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| {
        values[b]
            .partial_cmp(&values[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx.truncate(k);
    idx
}

/// `|topk(a) intersect topk(b)| / k`.
pub fn topk_overlap(a: &[f64], b: &[f64], k: usize) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            left: vec![a.len()],
            right: vec![b.len()],
            context: "topk_overlap",
        });
    }
    if k == 0 || k > a.len() {
        return Err(Error::Domain(format!(
            "k must be in 1..={}, got {k}",
            a.len()
        )));
    }
    let ta = topk_indices(a, k);
    let tb = topk_indices(b, k);
    let hits = ta.iter().filter(|i| tb.contains(i)).count();
    Ok(hits as f64 / k as f64)
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct OverlapReport {
    pub k: usize,
    pub per_frame: Vec<f64>,
    pub mean: f64,
    pub n_frames: usize,
}

/// Aggregate metrics over an evaluation set.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct EvalSummary {
    pub accuracy: f64,
    pub mean_overlap: f64,
    pub k: usize,
    pub mean_kl: f64,
    pub n_samples: usize,
    pub n_frames: usize,
}

/// Run the model over every batch; report accuracy, mean top-k overlap of
/// attention vs target over all frames, and mean residual KL.
pub fn evaluate(
    batches: &[Batch],
    params: &ModelParams,
    cfg: &ModelConfig,
    k: usize,
) -> Result<(EvalSummary, OverlapReport)> {
    if batches.is_empty() {
        return Err(Error::EmptyInput("evaluate: no batches"));
    }
    let mut correct = 0usize;
    let mut per_frame = Vec::new();
    let mut kl_total = 0.0;
    for b in batches {
        let probs = predict(&b.frames, params, cfg)?;
        let mut argmax = 0;
        for (c, &p) in probs.iter().enumerate() {
            if p > probs[argmax] {
                argmax = c;
            }
        }
        if argmax == b.label {
            correct += 1;
        }
        let records = attention_records(&b.frames, params, cfg)?;
        for (r, target) in records.iter().zip(&b.targets) {
            per_frame.push(topk_overlap(&r.weights, &target.probs, k)?);
            kl_total += kl_regularizer(&r.weights, target, cfg.kl_floor)?;
        }
    }
    let n_frames = per_frame.len();
    let mean = per_frame.iter().sum::<f64>() / n_frames as f64;
    let summary = EvalSummary {
        accuracy: correct as f64 / batches.len() as f64,
        mean_overlap: mean,
        k,
        mean_kl: kl_total / n_frames as f64,
        n_samples: batches.len(),
        n_frames,
    };
    Ok((summary, OverlapReport { k, per_frame, mean, n_frames }))
}

/// Final report document persisted as `report.json`.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct Report {
    pub accuracy: f64,
    pub mean_overlap: f64,
    pub k: usize,
    pub mean_kl: f64,
    pub n_samples: usize,
    pub n_frames: usize,
    pub config_hash: String,
}

// ---------------------------------------------------------------------------
// Dataset + trial helpers

/// Generate `count` scenes from independent seeded streams.
pub fn generate_dataset(spec: &SceneSpec, count: usize, seed: u64) -> Result<Vec<SyntheticSample>> {
    let root = RngState::new(seed);
    (0..count)
        .map(|i| generate_scene(spec, &root.stream_indexed("sample", i as u64)))
        .collect()
}

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct TrialResult {
    pub accuracy: f64,
    pub mean_overlap: f64,
    pub mean_kl: f64,
}

/// Generate train/test splits, preprocess, train, evaluate: one trial.
/// Train and test draw from disjoint seed streams of `seed`.
pub fn run_trial(
    spec: &SceneSpec,
    n_train: usize,
    n_test: usize,
    prep: &PreprocessConfig,
    model: &ModelConfig,
    seed: u64,
    k: usize,
) -> Result<TrialResult> {
    let root = RngState::new(seed);
    let train_scenes: Vec<SyntheticSample> = (0..n_train)
        .map(|i| generate_scene(spec, &root.stream_indexed("train", i as u64)))
        .collect::<Result<_>>()?;
    let test_scenes: Vec<SyntheticSample> = (0..n_test)
        .map(|i| generate_scene(spec, &root.stream_indexed("test", i as u64)))
        .collect::<Result<_>>()?;
    let train_batches: Vec<Batch> = train_scenes
        .iter()
        .map(|s| batch_from_synthetic(s, prep))
        .collect::<Result<_>>()?;
    let test_batches: Vec<Batch> = test_scenes
        .iter()
        .map(|s| batch_from_synthetic(s, prep))
        .collect::<Result<_>>()?;
    let mut cfg = model.clone();
    cfg.seed = seed;
    let (params, _log) = train(&train_batches, &cfg)?;
    let (summary, _) = evaluate(&test_batches, &params, &cfg, k)?;
    Ok(TrialResult {
        accuracy: summary.accuracy,
        mean_overlap: summary.mean_overlap,
        mean_kl: summary.mean_kl,
    })
}

/// One named cell of an ablation grid.
#[derive(Debug, Clone)]
pub struct AblationVariant {
    pub name: String,
    pub lambda: f64,
    pub mode: SupervisionMode,
    pub max_points: usize,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub seed: u64,
    pub accuracy: f64,
    pub mean_overlap: f64,
    pub mean_kl: f64,
}

/// Run every variant x seed cell. A failing cell aborts the sweep: an
/// ablation with holes is not comparable.
#[allow(clippy::too_many_arguments)]
pub fn run_ablation(
    spec: &SceneSpec,
    base_prep: &PreprocessConfig,
    base_model: &ModelConfig,
    variants: &[AblationVariant],
    seeds: &[u64],
    n_train: usize,
    n_test: usize,
    k: usize,
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(variants.len() * seeds.len());
    for v in variants {
        let mut prep = base_prep.clone();
        prep.mode = v.mode;
        prep.aggregation.max_points = v.max_points;
        let mut model = base_model.clone();
        model.lambda = v.lambda;
        for &seed in seeds {
            let r = run_trial(spec, n_train, n_test, &prep, &model, seed, k)?;
            rows.push(AblationRow {
                variant: v.name.clone(),
                seed,
                accuracy: r.accuracy,
                mean_overlap: r.mean_overlap,
                mean_kl: r.mean_kl,
            });
        }
    }
    Ok(rows)
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from("variant,seed,accuracy,mean_overlap,mean_kl\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            r.variant, r.seed, r.accuracy, r.mean_overlap, r.mean_kl
        ));
    }
    s
}

// ---------------------------------------------------------------------------
// Visualization

/// Blend a grayscale frame 50/50 with a max-normalized overlay and encode
/// as P5 PGM.
fn blend_pgm(frame: &Tensor, overlay: &Tensor) -> Result<Vec<u8>> {
    if frame.shape() != overlay.shape() {
        return Err(Error::ShapeMismatch {
            left: frame.shape().to_vec(),
            right: overlay.shape().to_vec(),
            context: "blend_pgm",
        });
    }
    let peak = overlay.data().iter().cloned().fold(0.0_f64, f64::max);
    let mut out = frame.clone();
    for (o, &m) in out.data_mut().iter_mut().zip(overlay.data()) {
        let norm = if peak > 0.0 { m / peak } else { 0.0 };
        *o = 0.5 * *o + 0.5 * norm;
    }
    Ok(crate::synth::write_pgm(&out))
}

/// Visualize a dense heatmap over its frame.
pub fn render_heatmap_pgm(frame: &Tensor, heatmap: &Heatmap) -> Result<Vec<u8>> {
    blend_pgm(frame, &heatmap.mass)
}

/// Visualize a patch distribution (e.g. an attention row) over its frame,
/// nearest-neighbor upsampled to pixel resolution.
pub fn render_patches_pgm(
    frame: &Tensor,
    dist: &PatchDistribution,
    grid: &PatchGrid,
) -> Result<Vec<u8>> {
    if dist.len() != grid.patch_count() {
        return Err(Error::ShapeMismatch {
            left: vec![dist.len()],
            right: vec![grid.patch_count()],
            context: "render_patches_pgm",
        });
    }
    let (h, w) = (frame.rows(), frame.cols());
    let mut overlay = Tensor::zeros(&[h, w]);
    for y in 0..h {
        for x in 0..w {
            overlay.set(y, x, dist.probs[grid.patch_of(x, y)]);
        }
    }
    blend_pgm(frame, &overlay)
}
