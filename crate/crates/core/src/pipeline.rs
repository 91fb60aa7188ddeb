//! Supervision preprocessing: turn gaze traces plus flow fields into
//! per-frame heatmaps and patch-wise target distributions, in either
//! aggregated (occlusion-gated temporal window) or singular (most recent
//! point only) mode. Works identically on in-memory synthetic samples and
//! datasets reloaded from disk.

use std::collections::HashMap;
use std::path::Path;

use crate::config::config_hash;
use crate::error::{Error, Result};
use crate::flow::{occlusion_check, FlowField, OcclusionConfig, OcclusionVerdict};
use crate::gaze::{
    aggregate_window, make_heatmap, make_singular, patchify, patch_csv_row, select_window,
    write_heatmap, AggregationConfig, GazeSample, Heatmap, PatchDistribution, PatchGrid,
    SmoothingConfig, WindowEntry,
};
use crate::numerics::Tensor;
use crate::synth::{LoadedSample, SyntheticSample};
use crate::trainer::{Batch, Task};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupervisionMode {
    Aggregated,
    Singular,
}

impl std::str::FromStr for SupervisionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<SupervisionMode> {
        match s {
            "aggregated" => Ok(SupervisionMode::Aggregated),
            "singular" => Ok(SupervisionMode::Singular),
            other => Err(Error::Parse(format!(
                "mode must be 'aggregated' or 'singular', got '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct PreprocessConfig {
    pub smoothing: SmoothingConfig,
    pub aggregation: AggregationConfig,
    pub occlusion: OcclusionConfig,
    pub patch_px: usize,
    pub mode: SupervisionMode,
}

/// Uniform view over a sample, whatever its storage.
pub struct SampleView<'a> {
    pub frames: &'a [Tensor],
    pub gaze: &'a [GazeSample],
    pub width: usize,
    pub height: usize,
    pub frame_hz: usize,
    pub label: usize,
    flows: FlowSource<'a>,
}

enum FlowSource<'a> {
    Memory(&'a HashMap<(usize, usize), FlowField>),
    Disk(&'a LoadedSample),
}

impl<'a> SampleView<'a> {
    pub fn from_synthetic(s: &'a SyntheticSample) -> SampleView<'a> {
        SampleView {
            frames: &s.frames,
            gaze: &s.gaze,
            width: s.spec.width,
            height: s.spec.height,
            frame_hz: s.spec.frame_hz,
            label: s.label,
            flows: FlowSource::Memory(&s.flows),
        }
    }

    pub fn from_loaded(s: &'a LoadedSample) -> SampleView<'a> {
        SampleView {
            frames: &s.frames,
            gaze: &s.gaze,
            width: s.truth.width,
            height: s.truth.height,
            frame_hz: s.truth.frame_hz,
            label: s.truth.label,
            flows: FlowSource::Disk(s),
        }
    }

    fn n_frames(&self) -> usize {
        self.frames.len()
    }

    fn frame_period_ms(&self) -> i64 {
        (1000 / self.frame_hz) as i64
    }

    fn frame_of_ms(&self, t_ms: i64) -> usize {
        let f = t_ms / self.frame_period_ms();
        (f.max(0) as usize).min(self.n_frames() - 1)
    }

    /// `f_{tau -> t}` if available.
    fn flow(&self, tau: usize, t: usize) -> Option<FlowField> {
        match &self.flows {
            FlowSource::Memory(m) => m.get(&(tau, t)).cloned(),
            FlowSource::Disk(s) => s.load_flow(tau, t),
        }
    }
}

/// One row of the per-frame occlusion log.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct OcclusionLogEntry {
    pub frame: usize,
    pub source_frame: usize,
    pub observed_ratio: f64,
    pub occluded: bool,
    pub flow_missing: bool,
}

/// Per-frame supervision targets plus bookkeeping.
pub struct Supervision {
    pub heatmaps: Vec<Option<Heatmap>>,
    pub targets: Vec<PatchDistribution>,
    pub occlusion_log: Vec<OcclusionLogEntry>,
    /// Frames that fell back to the uniform target (no usable gaze mass).
    pub uniform_fallbacks: Vec<usize>,
}

/// Occlusion verdict for carrying a source-frame map to frame `t`.
/// Same-frame entries are valid by definition; missing flow is treated as
/// occluded (a frame that cannot be verified is discarded).
fn verdict_for(
    view: &SampleView,
    cache: &mut HashMap<(usize, usize), (OcclusionVerdict, bool)>,
    src: usize,
    t: usize,
    cfg: &OcclusionConfig,
) -> Result<(OcclusionVerdict, bool)> {
    if src == t {
        return Ok((OcclusionVerdict::valid(view.width, view.height), false));
    }
    if let Some(v) = cache.get(&(src, t)) {
        return Ok(v.clone());
    }
    let fwd = view.flow(src, t);
    let bwd = view.flow(t, src);
    let entry = match (fwd, bwd) {
        (Some(fwd), Some(bwd)) => (occlusion_check(&fwd, &bwd, cfg)?, false),
        _ => {
            let mut v = OcclusionVerdict::valid(view.width, view.height);
            v.occluded = true;
            v.observed_ratio = 1.0;
            (v, true)
        }
    };
    cache.insert((src, t), entry.clone());
    Ok(entry)
}

/// Build per-frame supervision for one sample.
pub fn build_supervision(view: &SampleView, cfg: &PreprocessConfig) -> Result<Supervision> {
    let grid = PatchGrid::for_frame(view.width, view.height, cfg.patch_px)?;
    let p = grid.patch_count();
    let mut heatmaps = Vec::with_capacity(view.n_frames());
    let mut targets = Vec::with_capacity(view.n_frames());
    let mut occlusion_log = Vec::new();
    let mut uniform_fallbacks = Vec::new();
    let mut cache = HashMap::new();

    for t in 0..view.n_frames() {
        let t_ms = t as i64 * view.frame_period_ms();
        let window = select_window(view.gaze, t_ms, &cfg.aggregation);

        let heatmap = match cfg.mode {
            SupervisionMode::Singular => match window.last() {
                Some(g) => Some(make_singular(g, view.width, view.height, &cfg.smoothing)?),
                None => None,
            },
            SupervisionMode::Aggregated => {
                let mut entries = Vec::with_capacity(window.len());
                for g in &window {
                    let src = view.frame_of_ms(g.timestamp_ms);
                    let (verdict, missing) = verdict_for(view, &mut cache, src, t, &cfg.occlusion)?;
                    occlusion_log.push(OcclusionLogEntry {
                        frame: t,
                        source_frame: src,
                        observed_ratio: verdict.observed_ratio,
                        occluded: verdict.occluded,
                        flow_missing: missing,
                    });
                    let map = make_heatmap(g, view.width, view.height, &cfg.smoothing)?;
                    let flow = if src == t {
                        FlowField::zeros(view.width, view.height)
                    } else if verdict.occluded {
                        // content is irrelevant: the entry is gated off
                        FlowField::zeros(view.width, view.height)
                    } else {
                        view.flow(src, t).expect("verdict valid implies flow present")
                    };
                    entries.push(WindowEntry { map, flow_to_current: flow, verdict });
                }
                if entries.is_empty() {
                    None
                } else {
                    match aggregate_window(&entries) {
                        Ok(h) => Some(h),
                        Err(Error::ZeroMass) => None,
                        Err(e) => return Err(e),
                    }
                }
            }
        };

        let target = match &heatmap {
            Some(h) => match patchify(h, &grid) {
                Ok(d) => d,
                Err(Error::ZeroMass) => {
                    uniform_fallbacks.push(t);
                    PatchDistribution::uniform(p)
                }
                Err(e) => return Err(e),
            },
            None => {
                uniform_fallbacks.push(t);
                PatchDistribution::uniform(p)
            }
        };
        heatmaps.push(heatmap);
        targets.push(target);
    }
    Ok(Supervision { heatmaps, targets, occlusion_log, uniform_fallbacks })
}

/// Dataset manifest written by the synthesizer.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct Manifest {
    pub count: usize,
    pub seed: u64,
    pub config_hash: String,
    pub samples: Vec<String>,
}

pub fn read_manifest(data_dir: &Path) -> Result<Manifest> {
    Ok(serde_json::from_str(&std::fs::read_to_string(
        data_dir.join("manifest.json"),
    )?)?)
}

pub fn write_manifest(data_dir: &Path, manifest: &Manifest) -> Result<()> {
    let mut json = serde_json::to_string_pretty(manifest)?;
    json.push('\n');
    std::fs::write(data_dir.join("manifest.json"), json)?;
    Ok(())
}

/// Metadata sidecar of a preprocessed targets directory.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TargetsMeta {
    pub config_hash: String,
    pub mode: SupervisionMode,
    pub patch_px: usize,
    pub n_patches: usize,
}

pub fn read_targets_meta(targets_dir: &Path) -> Result<TargetsMeta> {
    Ok(serde_json::from_str(&std::fs::read_to_string(
        targets_dir.join("targets_meta.json"),
    )?)?)
}

/// Preprocess every sample of a dataset directory into a targets
/// directory: per sample `heatmap_<t>.bin`, `targets.csv`, and
/// `occlusion.csv`, plus a top-level `targets_meta.json` carrying the
/// supervision config hash.
pub fn preprocess_dataset(
    data_dir: &Path,
    out_dir: &Path,
    cfg: &PreprocessConfig,
) -> Result<Vec<usize>> {
    let manifest = read_manifest(data_dir)?;
    std::fs::create_dir_all(out_dir)?;
    let mut all_fallbacks = Vec::new();
    let mut n_patches = 0;
    for name in &manifest.samples {
        let sample = crate::synth::read_sample_dir(&data_dir.join(name))?;
        let view = SampleView::from_loaded(&sample);
        let sup = build_supervision(&view, cfg)?;
        let sdir = out_dir.join(name);
        std::fs::create_dir_all(&sdir)?;
        let mut csv = String::new();
        for (t, target) in sup.targets.iter().enumerate() {
            csv.push_str(&patch_csv_row(t, target));
            n_patches = target.len();
        }
        std::fs::write(sdir.join("targets.csv"), csv)?;
        for (t, h) in sup.heatmaps.iter().enumerate() {
            if let Some(h) = h {
                std::fs::write(sdir.join(format!("heatmap_{t}.bin")), write_heatmap(h))?;
            }
        }
        let mut occ = String::from("frame,source_frame,observed_ratio,occluded,flow_missing\n");
        for e in &sup.occlusion_log {
            occ.push_str(&format!(
                "{},{},{},{},{}\n",
                e.frame, e.source_frame, e.observed_ratio, e.occluded, e.flow_missing
            ));
        }
        std::fs::write(sdir.join("occlusion.csv"), occ)?;
        all_fallbacks.extend(sup.uniform_fallbacks);
    }
    let meta = TargetsMeta {
        config_hash: config_hash(cfg),
        mode: cfg.mode,
        patch_px: cfg.patch_px,
        n_patches,
    };
    let mut json = serde_json::to_string_pretty(&meta)?;
    json.push('\n');
    std::fs::write(out_dir.join("targets_meta.json"), json)?;
    Ok(all_fallbacks)
}

/// Load training batches by joining a dataset directory with its
/// preprocessed targets.
pub fn load_batches(data_dir: &Path, targets_dir: &Path) -> Result<Vec<(String, Batch)>> {
    let manifest = read_manifest(data_dir)?;
    let mut out = Vec::with_capacity(manifest.samples.len());
    for name in &manifest.samples {
        let sample = crate::synth::read_sample_dir(&data_dir.join(name))?;
        let rows = crate::gaze::read_patch_csv(&std::fs::read_to_string(
            targets_dir.join(name).join("targets.csv"),
        )?)?;
        if rows.len() != sample.frames.len() {
            return Err(Error::ShapeMismatch {
                left: vec![rows.len()],
                right: vec![sample.frames.len()],
                context: "load_batches: targets vs frames",
            });
        }
        let targets = rows.into_iter().map(|(_, d)| d).collect();
        out.push((
            name.clone(),
            Batch {
                frames: sample.frames,
                targets,
                label: sample.truth.label,
                task: Task::Understand,
            },
        ));
    }
    Ok(out)
}

/// In-memory batch assembly for ablations and tests.
pub fn batch_from_synthetic(s: &SyntheticSample, cfg: &PreprocessConfig) -> Result<Batch> {
    let view = SampleView::from_synthetic(s);
    let sup = build_supervision(&view, cfg)?;
    Ok(Batch {
        frames: s.frames.clone(),
        targets: sup.targets,
        label: s.label,
        task: Task::Understand,
    })
}
