//! Gaze supervision targets: Gaussian heatmaps from fixation samples,
//! flow-warped occlusion-gated temporal aggregation, and patch-wise
//! distributions used as KL targets by the trainer.

use std::io::Read;

use crate::error::{Error, Result};
use crate::flow::{FlowField, OcclusionVerdict};
use crate::numerics::{gaussian_kernel_2d, normalize_nonneg, Tensor};

/// One timestamped gaze sample in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GazeSample {
    pub timestamp_ms: i64,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothingConfig {
    pub sigma: f64,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        SmoothingConfig { sigma: 20.0 }
    }
}

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregationConfig {
    pub window_ms: i64,
    pub max_points: usize,
}

impl Default for AggregationConfig {
    fn default() -> Self {
        AggregationConfig { window_ms: 200, max_points: 6 }
    }
}

/// Normalized nonnegative 2-D attention mass over one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub width: usize,
    pub height: usize,
    pub mass: Tensor,
}

impl Heatmap {
    pub fn zeros(width: usize, height: usize) -> Heatmap {
        Heatmap { width, height, mass: Tensor::zeros(&[height, width]) }
    }

    pub fn total_mass(&self) -> f64 {
        self.mass.sum()
    }
}

/// Regular patch tiling of a frame; `n_h * patch_px == width` and
/// `n_v * patch_px == height` must hold exactly.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchGrid {
    pub n_h: usize,
    pub n_v: usize,
    pub patch_px: usize,
}

impl PatchGrid {
    pub fn for_frame(width: usize, height: usize, patch_px: usize) -> Result<PatchGrid> {
        if patch_px == 0 || width % patch_px != 0 || height % patch_px != 0 {
            return Err(Error::Geometry(format!(
                "patch size {patch_px} does not tile {width}x{height}"
            )));
        }
        Ok(PatchGrid { n_h: width / patch_px, n_v: height / patch_px, patch_px })
    }

    pub fn patch_count(&self) -> usize {
        self.n_h * self.n_v
    }

    /// Row-major patch index of the patch containing pixel `(x, y)`.
    pub fn patch_of(&self, x: usize, y: usize) -> usize {
        (y / self.patch_px) * self.n_h + x / self.patch_px
    }
}

/// Probability vector over the patch grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchDistribution {
    pub probs: Vec<f64>,
}

impl PatchDistribution {
    pub fn uniform(p: usize) -> PatchDistribution {
        PatchDistribution { probs: vec![1.0 / p as f64; p] }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }
}

/// Gaussian heatmap from one gaze sample: a delta at the sample position
/// convolved with the truncated kernel, boundary-cropped, renormalized.
pub fn make_heatmap(
    g: &GazeSample,
    width: usize,
    height: usize,
    cfg: &SmoothingConfig,
) -> Result<Heatmap> {
    let gx = g.x.round() as i64;
    let gy = g.y.round() as i64;
    if g.x < 0.0 || g.y < 0.0 || gx >= width as i64 || gy >= height as i64 {
        return Err(Error::OutOfBounds { x: g.x, y: g.y, width, height });
    }
    let kernel = gaussian_kernel_2d(cfg.sigma)?;
    let r = (kernel.rows() as i64 - 1) / 2;
    let mut mass = Tensor::zeros(&[height, width]);
    for dy in -r..=r {
        let y = gy + dy;
        if y < 0 || y >= height as i64 {
            continue;
        }
        for dx in -r..=r {
            let x = gx + dx;
            if x < 0 || x >= width as i64 {
                continue;
            }
            mass.set(y as usize, x as usize, kernel.at((dy + r) as usize, (dx + r) as usize));
        }
    }
    let mass = normalize_nonneg(&mass)?;
    Ok(Heatmap { width, height, mass })
}

/// The singular-gaze baseline: one gaze point, no temporal aggregation.
/// Identical to [`make_heatmap`]; named separately so ablation harnesses
/// can select it explicitly.
pub fn make_singular(
    g: &GazeSample,
    width: usize,
    height: usize,
    cfg: &SmoothingConfig,
) -> Result<Heatmap> {
    make_heatmap(g, width, height, cfg)
}

/// Samples with timestamp in `[t - window_ms, t]`, keeping at most the
/// `max_points` most recent. The trace must be sorted by timestamp.
pub fn select_window(trace: &[GazeSample], t_ms: i64, cfg: &AggregationConfig) -> Vec<GazeSample> {
    let lo = t_ms - cfg.window_ms;
    let mut picked: Vec<GazeSample> = trace
        .iter()
        .filter(|s| s.timestamp_ms >= lo && s.timestamp_ms <= t_ms)
        .copied()
        .collect();
    if picked.len() > cfg.max_points {
        picked.drain(..picked.len() - cfg.max_points);
    }
    picked
}

/// Transport heatmap mass along a flow field by forward splatting: each
/// source pixel's mass lands at `p + flow(p)` with bilinear weights.
/// Out-of-frame mass is dropped; the result is NOT renormalized (the
/// single normalization happens in [`aggregate_window`]).
pub fn warp_heatmap(m: &Heatmap, flow: &FlowField) -> Result<Heatmap> {
    if m.width != flow.width || m.height != flow.height {
        return Err(Error::ShapeMismatch {
            left: vec![m.height, m.width],
            right: vec![flow.height, flow.width],
            context: "warp_heatmap",
        });
    }
    let (h, w) = (m.height, m.width);
    let mut out = Tensor::zeros(&[h, w]);
    for y in 0..h {
        for x in 0..w {
            let mass = m.mass.at(y, x);
            if mass == 0.0 {
                continue;
            }
            let tx = x as f64 + flow.u.at(y, x);
            let ty = y as f64 + flow.v.at(y, x);
            let x0 = tx.floor();
            let y0 = ty.floor();
            let fx = tx - x0;
            let fy = ty - y0;
            for (iy, wy) in [(y0 as i64, 1.0 - fy), (y0 as i64 + 1, fy)] {
                if iy < 0 || iy >= h as i64 || wy == 0.0 {
                    continue;
                }
                for (ix, wx) in [(x0 as i64, 1.0 - fx), (x0 as i64 + 1, fx)] {
                    if ix < 0 || ix >= w as i64 || wx == 0.0 {
                        continue;
                    }
                    let cur = out.at(iy as usize, ix as usize);
                    out.set(iy as usize, ix as usize, cur + mass * wy * wx);
                }
            }
        }
    }
    Ok(Heatmap { width: w, height: h, mass: out })
}

/// One entry of an aggregation window: a source heatmap, the flow carrying
/// it to the current frame, and the occlusion verdict gating it.
pub struct WindowEntry {
    pub map: Heatmap,
    pub flow_to_current: FlowField,
    pub verdict: OcclusionVerdict,
}

/// Occlusion-gated temporal aggregation: warp every valid entry to the
/// current frame, sum, normalize once. Occluded entries contribute
/// nothing at all.
pub fn aggregate_window(entries: &[WindowEntry]) -> Result<Heatmap> {
    let first = entries.first().ok_or(Error::EmptyInput("aggregate_window"))?;
    let (w, h) = (first.map.width, first.map.height);
    let mut acc = Tensor::zeros(&[h, w]);
    let mut any_valid = false;
    for e in entries {
        if e.verdict.occluded {
            continue;
        }
        let warped = warp_heatmap(&e.map, &e.flow_to_current)?;
        acc.axpy(1.0, &warped.mass)?;
        any_valid = true;
    }
    if !any_valid {
        return Err(Error::ZeroMass);
    }
    let mass = normalize_nonneg(&acc)?;
    Ok(Heatmap { width: w, height: h, mass })
}

/// Bin heatmap mass into the patch grid and normalize (the `1/Z` patch
/// score). Errors on a grid that does not tile the frame or a zero-mass
/// heatmap.
pub fn patchify(h: &Heatmap, grid: &PatchGrid) -> Result<PatchDistribution> {
    if grid.n_h * grid.patch_px != h.width || grid.n_v * grid.patch_px != h.height {
        return Err(Error::Geometry(format!(
            "grid {}x{} patches of {}px does not tile {}x{}",
            grid.n_h, grid.n_v, grid.patch_px, h.width, h.height
        )));
    }
    let total = h.total_mass();
    if total <= 0.0 {
        return Err(Error::ZeroMass);
    }
    let mut probs = vec![0.0; grid.patch_count()];
    for y in 0..h.height {
        for x in 0..h.width {
            probs[grid.patch_of(x, y)] += h.mass.at(y, x);
        }
    }
    for p in &mut probs {
        *p /= total;
    }
    Ok(PatchDistribution { probs })
}

// ---------------------------------------------------------------------------
// Persistence

/// Parse a gaze trace CSV with header `timestamp_ms,x,y`. Out-of-bounds
/// samples and non-increasing timestamps are rejected.
pub fn read_gaze_csv(text: &str, width: usize, height: usize) -> Result<Vec<GazeSample>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == "timestamp_ms,x,y" => {}
        other => {
            return Err(Error::Parse(format!(
                "gaze CSV must start with 'timestamp_ms,x,y', got {other:?}"
            )))
        }
    }
    let mut out = Vec::new();
    let mut last_ts = i64::MIN;
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(Error::Parse(format!("gaze CSV line {}: expected 3 fields", i + 2)));
        }
        let ts: i64 = fields[0]
            .trim()
            .parse()
            .map_err(|e| Error::Parse(format!("gaze CSV line {}: {e}", i + 2)))?;
        let x: f64 = fields[1]
            .trim()
            .parse()
            .map_err(|e| Error::Parse(format!("gaze CSV line {}: {e}", i + 2)))?;
        let y: f64 = fields[2]
            .trim()
            .parse()
            .map_err(|e| Error::Parse(format!("gaze CSV line {}: {e}", i + 2)))?;
        if x < 0.0 || y < 0.0 || x >= width as f64 || y >= height as f64 {
            return Err(Error::OutOfBounds { x, y, width, height });
        }
        if ts <= last_ts {
            return Err(Error::Parse(format!(
                "gaze CSV line {}: timestamps must be strictly increasing",
                i + 2
            )));
        }
        last_ts = ts;
        out.push(GazeSample { timestamp_ms: ts, x, y });
    }
    Ok(out)
}

pub fn write_gaze_csv(trace: &[GazeSample]) -> String {
    let mut s = String::from("timestamp_ms,x,y\n");
    for g in trace {
        s.push_str(&format!("{},{},{}\n", g.timestamp_ms, g.x, g.y));
    }
    s
}

const HEATMAP_MAGIC: &[u8; 4] = b"GZHM";

/// Heatmap binary format: magic `GZHM`, u32 LE version/width/height, then
/// `h*w` f32 LE values row-major.
pub fn write_heatmap(h: &Heatmap) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + h.width * h.height * 4);
    out.extend_from_slice(HEATMAP_MAGIC);
    out.extend_from_slice(&1u32.to_le_bytes());
    out.extend_from_slice(&(h.width as u32).to_le_bytes());
    out.extend_from_slice(&(h.height as u32).to_le_bytes());
    for &v in h.mass.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn read_heatmap(bytes: &[u8]) -> Result<Heatmap> {
    if bytes.len() < 16 || &bytes[0..4] != HEATMAP_MAGIC {
        return Err(Error::Format("not a GZHM heatmap file".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != 1 {
        return Err(Error::Format(format!("unsupported GZHM version {version}")));
    }
    let w = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let h = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let expected = 16 + w * h * 4;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "GZHM payload length {} does not match {w}x{h}",
            bytes.len()
        )));
    }
    let mut mass = Tensor::zeros(&[h, w]);
    for i in 0..w * h {
        let off = 16 + i * 4;
        mass.data_mut()[i] = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as f64;
    }
    Ok(Heatmap { width: w, height: h, mass })
}

pub fn read_heatmap_file(path: &std::path::Path) -> Result<Heatmap> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    read_heatmap(&buf)
}

/// One `frame_id,p_0,...,p_{P-1}` row of the patch-distribution CSV.
pub fn patch_csv_row(frame_id: usize, d: &PatchDistribution) -> String {
    let mut s = frame_id.to_string();
    for p in &d.probs {
        s.push(',');
        // 17 significant digits round-trips f64 exactly
        s.push_str(&format!("{p:.17e}"));
    }
    s.push('\n');
    s
}

/// Parse the patch-distribution CSV written by the preprocessor; returns
/// `(frame_id, distribution)` rows.
pub fn read_patch_csv(text: &str) -> Result<Vec<(usize, PatchDistribution)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let id: usize = fields
            .next()
            .ok_or_else(|| Error::Parse(format!("patch CSV line {}: empty", i + 1)))?
            .trim()
            .parse()
            .map_err(|e| Error::Parse(format!("patch CSV line {}: {e}", i + 1)))?;
        let probs: std::result::Result<Vec<f64>, _> = fields.map(|f| f.trim().parse()).collect();
        let probs = probs.map_err(|e| Error::Parse(format!("patch CSV line {}: {e}", i + 1)))?;
        if probs.is_empty() {
            return Err(Error::Parse(format!("patch CSV line {}: no probabilities", i + 1)));
        }
        out.push((id, PatchDistribution { probs }));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::FlowField;

    fn sample(x: f64, y: f64) -> GazeSample {
        GazeSample { timestamp_ms: 0, x, y }
    }

    #[test]
    fn heatmap_normalized_with_argmax_at_gaze() {
        let cfg = SmoothingConfig { sigma: 20.0 };
        let h = make_heatmap(&sample(32.0, 32.0), 64, 64, &cfg).unwrap();
        assert!((h.total_mass() - 1.0).abs() < 1e-9);
        let mut best = (0, 0);
        for y in 0..64 {
            for x in 0..64 {
                if h.mass.at(y, x) > h.mass.at(best.1, best.0) {
                    best = (x, y);
                }
            }
        }
        assert_eq!(best, (32, 32));
    }

    #[test]
    fn corner_heatmap_renormalizes() {
        let cfg = SmoothingConfig { sigma: 20.0 };
        let h = make_heatmap(&sample(0.0, 0.0), 64, 64, &cfg).unwrap();
        assert!((h.total_mass() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn small_frame_center_value_matches_truncated_kernel() {
        let cfg = SmoothingConfig { sigma: 1.0 };
        let h = make_heatmap(&sample(1.0, 1.0), 3, 3, &cfg).unwrap();
        // brute force: crop the 7x7 kernel to the 3x3 frame, renormalize
        let k = gaussian_kernel_2d(1.0).unwrap();
        let mut crop_sum = 0.0;
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                crop_sum += k.at((dy + 3) as usize, (dx + 3) as usize);
            }
        }
        let expected = k.at(3, 3) / crop_sum;
        assert!((h.mass.at(1, 1) - expected).abs() < 1e-12);
    }

    #[test]
    fn out_of_bounds_gaze_rejected() {
        let cfg = SmoothingConfig::default();
        assert!(make_heatmap(&sample(64.0, 10.0), 64, 64, &cfg).is_err());
        assert!(make_heatmap(&sample(-1.0, 10.0), 64, 64, &cfg).is_err());
    }

    #[test]
    fn singular_equals_heatmap() {
        let cfg = SmoothingConfig { sigma: 3.0 };
        let a = make_heatmap(&sample(10.0, 10.0), 32, 32, &cfg).unwrap();
        let b = make_singular(&sample(10.0, 10.0), 32, 32, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn window_selection() {
        let trace: Vec<GazeSample> = (0..10)
            .map(|i| GazeSample { timestamp_ms: i * 33, x: 1.0, y: 1.0 })
            .collect();
        let cfg = AggregationConfig { window_ms: 200, max_points: 6 };
        let w = select_window(&trace, 200, &cfg);
        assert_eq!(w.len(), 6);
        assert_eq!(w.first().unwrap().timestamp_ms, 33);
        assert_eq!(w.last().unwrap().timestamp_ms, 198);

        assert!(select_window(&trace, -50, &cfg).is_empty());

        let cfg12 = AggregationConfig { window_ms: 400, max_points: 12 };
        let w = select_window(&trace, 300, &cfg12);
        assert_eq!(w.len(), 10); // all samples in [-100, 300]
    }

    #[test]
    fn warp_identity() {
        let cfg = SmoothingConfig { sigma: 2.0 };
        let h = make_heatmap(&sample(8.0, 8.0), 16, 16, &cfg).unwrap();
        let w = warp_heatmap(&h, &FlowField::zeros(16, 16)).unwrap();
        assert_eq!(h, w);
    }

    #[test]
    fn warp_uniform_shift_preserves_mass_and_moves_argmax() {
        let cfg = SmoothingConfig { sigma: 1.0 };
        let h = make_heatmap(&sample(4.0, 8.0), 16, 16, &cfg).unwrap();
        let flow = FlowField::uniform(16, 16, 8.0, 0.0);
        let w = warp_heatmap(&h, &flow).unwrap();
        assert!((w.total_mass() - h.total_mass()).abs() < 1e-9);
        let mut best = (0usize, 0usize);
        for y in 0..16 {
            for x in 0..16 {
                if w.mass.at(y, x) > w.mass.at(best.1, best.0) {
                    best = (x, y);
                }
            }
        }
        assert_eq!(best, (12, 8));
    }

    #[test]
    fn warp_out_of_frame_drops_everything() {
        let cfg = SmoothingConfig { sigma: 1.0 };
        let h = make_heatmap(&sample(8.0, 8.0), 16, 16, &cfg).unwrap();
        let w = warp_heatmap(&h, &FlowField::uniform(16, 16, 100.0, 0.0)).unwrap();
        assert_eq!(w.total_mass(), 0.0);
    }

    fn valid_entry(map: Heatmap) -> WindowEntry {
        let (w, h) = (map.width, map.height);
        WindowEntry {
            map,
            flow_to_current: FlowField::zeros(w, h),
            verdict: OcclusionVerdict::valid(w, h),
        }
    }

    #[test]
    fn aggregate_single_entry_is_identity() {
        let cfg = SmoothingConfig { sigma: 2.0 };
        let m = make_heatmap(&sample(5.0, 5.0), 16, 16, &cfg).unwrap();
        let out = aggregate_window(&[valid_entry(m.clone())]).unwrap();
        for (a, b) in out.mass.data().iter().zip(m.mass.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn aggregate_idempotent_on_equal_maps() {
        let cfg = SmoothingConfig { sigma: 2.0 };
        let m = make_heatmap(&sample(5.0, 5.0), 16, 16, &cfg).unwrap();
        let out = aggregate_window(&[valid_entry(m.clone()), valid_entry(m.clone())]).unwrap();
        for (a, b) in out.mass.data().iter().zip(m.mass.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn aggregate_gates_occluded_entries() {
        let cfg = SmoothingConfig { sigma: 1.0 };
        let good = make_heatmap(&sample(3.0, 3.0), 16, 16, &cfg).unwrap();
        let bad = make_heatmap(&sample(12.0, 12.0), 16, 16, &cfg).unwrap();
        let mut occluded = valid_entry(bad);
        occluded.verdict.occluded = true;
        let out = aggregate_window(&[valid_entry(good.clone()), occluded]).unwrap();
        for (a, b) in out.mass.data().iter().zip(good.mass.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn aggregate_all_occluded_errors() {
        let cfg = SmoothingConfig { sigma: 1.0 };
        let m = make_heatmap(&sample(3.0, 3.0), 16, 16, &cfg).unwrap();
        let mut e = valid_entry(m);
        e.verdict.occluded = true;
        assert!(matches!(aggregate_window(&[e]), Err(Error::ZeroMass)));
        assert!(matches!(aggregate_window(&[]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn patchify_uniform_and_concentrated() {
        let grid = PatchGrid::for_frame(4, 4, 2).unwrap();
        let mut h = Heatmap::zeros(4, 4);
        for v in h.mass.data_mut() {
            *v = 1.0 / 16.0;
        }
        let d = patchify(&h, &grid).unwrap();
        for &p in &d.probs {
            assert!((p - 0.25).abs() < 1e-12);
        }

        let mut h = Heatmap::zeros(4, 4);
        h.mass.set(0, 0, 1.0);
        let d = patchify(&h, &grid).unwrap();
        assert_eq!(d.probs, vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn patchify_brute_force_values() {
        // per-pixel values 1..16 row-major, 2x2 grid of 2px patches
        let grid = PatchGrid::for_frame(4, 4, 2).unwrap();
        let mut h = Heatmap::zeros(4, 4);
        for i in 0..16 {
            h.mass.data_mut()[i] = (i + 1) as f64;
        }
        let d = patchify(&h, &grid).unwrap();
        let expected = [14.0, 22.0, 46.0, 54.0];
        for (p, e) in d.probs.iter().zip(expected) {
            assert!((p - e / 136.0).abs() < 1e-12);
        }
    }

    #[test]
    fn patchify_errors() {
        let grid = PatchGrid { n_h: 3, n_v: 2, patch_px: 2 };
        let h = Heatmap::zeros(4, 4);
        assert!(matches!(patchify(&h, &grid), Err(Error::Geometry(_))));
        let grid = PatchGrid::for_frame(4, 4, 2).unwrap();
        assert!(matches!(patchify(&h, &grid), Err(Error::ZeroMass)));
    }

    #[test]
    fn gaze_csv_round_trip_and_validation() {
        let trace = vec![
            GazeSample { timestamp_ms: 0, x: 1.5, y: 2.0 },
            GazeSample { timestamp_ms: 33, x: 3.0, y: 4.25 },
        ];
        let csv = write_gaze_csv(&trace);
        let back = read_gaze_csv(&csv, 64, 64).unwrap();
        assert_eq!(trace, back);

        assert!(read_gaze_csv("x,y\n", 64, 64).is_err());
        assert!(read_gaze_csv("timestamp_ms,x,y\n0,99,1\n", 64, 64).is_err());
        assert!(read_gaze_csv("timestamp_ms,x,y\n5,1,1\n5,2,2\n", 64, 64).is_err());
    }

    #[test]
    fn heatmap_binary_round_trip() {
        let cfg = SmoothingConfig { sigma: 2.0 };
        let h = make_heatmap(&sample(7.0, 3.0), 16, 8, &cfg).unwrap();
        let bytes = write_heatmap(&h);
        let back = read_heatmap(&bytes).unwrap();
        assert_eq!(back.width, 16);
        assert_eq!(back.height, 8);
        // f32 quantization is the format's precision; a second write is
        // bit-identical
        assert_eq!(write_heatmap(&back), bytes);
    }

    #[test]
    fn patch_csv_round_trip() {
        let d = PatchDistribution { probs: vec![0.125, 0.375, 0.5] };
        let row = patch_csv_row(3, &d);
        let rows = read_patch_csv(&row).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].0, 3);
        assert_eq!(rows[0].1, d);
    }
}
