//! Optical-flow I/O (Middlebury `.flo`), a block-matching estimator for
//! synthetic scenes, and the bidirectional-consistency occlusion check
//! that gates temporal gaze aggregation.

use crate::error::{Error, Result};
use crate::numerics::{bilinear_sample, Tensor};

/// Dense 2-D displacement field between two frames, in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub width: usize,
    pub height: usize,
    /// Horizontal displacement, `h x w`.
    pub u: Tensor,
    /// Vertical displacement, `h x w`.
    pub v: Tensor,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> FlowField {
        FlowField {
            width,
            height,
            u: Tensor::zeros(&[height, width]),
            v: Tensor::zeros(&[height, width]),
        }
    }

    /// Constant displacement everywhere.
    pub fn uniform(width: usize, height: usize, du: f64, dv: f64) -> FlowField {
        let mut f = FlowField::zeros(width, height);
        for val in f.u.data_mut() {
            *val = du;
        }
        for val in f.v.data_mut() {
            *val = dv;
        }
        f
    }

    pub fn same_dims(&self, other: &FlowField) -> bool {
        self.width == other.width && self.height == other.height
    }
}

/// Occlusion-check thresholds: `eps` is the per-pixel forward/backward
/// discrepancy limit in pixels, `eta` the frame-level ratio above which a
/// frame is discarded as occluded.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OcclusionConfig {
    pub eps: f64,
    pub eta: f64,
}

impl Default for OcclusionConfig {
    fn default() -> Self {
        OcclusionConfig { eps: 20.0, eta: 0.60 }
    }
}

impl OcclusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) {
            return Err(Error::Domain(format!("eps must be > 0, got {}", self.eps)));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(Error::Domain(format!("eta must be in (0, 1], got {}", self.eta)));
        }
        Ok(())
    }
}

/// Outcome of the bidirectional consistency check for one frame pair.
#[derive(Debug, Clone)]
pub struct OcclusionVerdict {
    pub occluded: bool,
    /// Fraction of pixels whose discrepancy exceeds `eps`.
    pub observed_ratio: f64,
    /// Per-pixel discrepancy norm `|fwd(p) + bwd(p + fwd(p))|`.
    pub discrepancy: Tensor,
}

impl OcclusionVerdict {
    /// The always-valid verdict used for the current frame (identity flow).
    pub fn valid(width: usize, height: usize) -> OcclusionVerdict {
        OcclusionVerdict {
            occluded: false,
            observed_ratio: 0.0,
            discrepancy: Tensor::zeros(&[height, width]),
        }
    }
}

const FLO_MAGIC: f32 = 202021.25;

/// Parse a Middlebury `.flo` file.
pub fn read_flo(bytes: &[u8]) -> Result<FlowField> {
    if bytes.len() < 12 {
        return Err(Error::Format(format!(
            ".flo too short: {} bytes, need at least 12",
            bytes.len()
        )));
    }
    let magic = f32::from_le_bytes(bytes[0..4].try_into().unwrap());
    if magic != FLO_MAGIC {
        return Err(Error::Format(format!(
            "bad .flo magic {magic}, expected {FLO_MAGIC}"
        )));
    }
    let width = i32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let height = i32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if width <= 0 || height <= 0 {
        return Err(Error::Format(format!("bad .flo dims {width}x{height}")));
    }
    let (w, h) = (width as usize, height as usize);
    let expected = 12 + w * h * 2 * 4;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            ".flo payload length {} does not match {w}x{h} (expected {expected})",
            bytes.len()
        )));
    }
    let mut u = Tensor::zeros(&[h, w]);
    let mut v = Tensor::zeros(&[h, w]);
    let mut off = 12;
    for i in 0..h * w {
        let uu = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
        let vv = f32::from_le_bytes(bytes[off + 4..off + 8].try_into().unwrap());
        u.data_mut()[i] = uu as f64;
        v.data_mut()[i] = vv as f64;
        off += 8;
    }
    Ok(FlowField { width: w, height: h, u, v })
}

/// Serialize a flow field in Middlebury `.flo` layout: magic, little-endian
/// width/height, then interleaved `(u, v)` f32 pairs row-major.
pub fn write_flo(flow: &FlowField) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + flow.width * flow.height * 8);
    out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    out.extend_from_slice(&(flow.width as i32).to_le_bytes());
    out.extend_from_slice(&(flow.height as i32).to_le_bytes());
    for i in 0..flow.width * flow.height {
        out.extend_from_slice(&(flow.u.data()[i] as f32).to_le_bytes());
        out.extend_from_slice(&(flow.v.data()[i] as f32).to_le_bytes());
    }
    out
}

/// Exhaustive block-matching flow between two grayscale frames (`h x w`
/// tensors). Per block the displacement in `[-radius, radius]^2` with the
/// smallest sum of absolute differences wins; ties prefer the smallest
/// displacement magnitude, then row-major scan order (dy outer, dx inner).
/// Out-of-frame comparisons clamp to the edge of `b`.
pub fn estimate_flow_blockmatch(
    a: &Tensor,
    b: &Tensor,
    block: usize,
    radius: i64,
) -> Result<FlowField> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
            context: "estimate_flow_blockmatch",
        });
    }
    let (h, w) = (a.rows(), a.cols());
    if block == 0 || h % block != 0 || w % block != 0 {
        return Err(Error::Geometry(format!(
            "block {block} must divide frame dims {w}x{h}"
        )));
    }
    if radius < 1 {
        return Err(Error::Domain(format!("radius must be >= 1, got {radius}")));
    }
    let mut flow = FlowField::zeros(w, h);
    for by in (0..h).step_by(block) {
        for bx in (0..w).step_by(block) {
            let mut best = (f64::INFINITY, i64::MAX, 0i64, 0i64);
            for dy in -radius..=radius {
                for dx in -radius..=radius {
                    let mut sad = 0.0;
                    for y in by..by + block {
                        for x in bx..bx + block {
                            let sy = (y as i64 + dy).clamp(0, h as i64 - 1) as usize;
                            let sx = (x as i64 + dx).clamp(0, w as i64 - 1) as usize;
                            sad += (a.at(y, x) - b.at(sy, sx)).abs();
                        }
                    }
                    let mag2 = dx * dx + dy * dy;
                    if sad < best.0 || (sad == best.0 && mag2 < best.1) {
                        best = (sad, mag2, dx, dy);
                    }
                }
            }
            for y in by..by + block {
                for x in bx..bx + block {
                    flow.u.set(y, x, best.2 as f64);
                    flow.v.set(y, x, best.3 as f64);
                }
            }
        }
    }
    Ok(flow)
}

/// Bidirectional flow-consistency occlusion check. For each pixel `p`,
/// `p_hat = p + fwd(p)` and the discrepancy is the Euclidean norm of
/// `fwd(p) + bwd(p_hat)`, where `bwd` is sampled bilinearly at `p_hat`
/// (an out-of-frame `p_hat` samples a zero vector, so the discrepancy
/// reduces to `|fwd(p)|`). The frame pair is occluded when the fraction
/// of pixels with discrepancy above `eps` exceeds `eta`.
pub fn occlusion_check(
    fwd: &FlowField,
    bwd: &FlowField,
    cfg: &OcclusionConfig,
) -> Result<OcclusionVerdict> {
    if !fwd.same_dims(bwd) {
        return Err(Error::ShapeMismatch {
            left: vec![fwd.height, fwd.width],
            right: vec![bwd.height, bwd.width],
            context: "occlusion_check",
        });
    }
    cfg.validate()?;
    let (h, w) = (fwd.height, fwd.width);
    let mut disc = Tensor::zeros(&[h, w]);
    let mut exceed = 0usize;
    for y in 0..h {
        for x in 0..w {
            let fu = fwd.u.at(y, x);
            let fv = fwd.v.at(y, x);
            let px = x as f64 + fu;
            let py = y as f64 + fv;
            let bu = bilinear_sample(&bwd.u, px, py);
            let bv = bilinear_sample(&bwd.v, px, py);
            let d = ((fu + bu).powi(2) + (fv + bv).powi(2)).sqrt();
            disc.set(y, x, d);
            if d > cfg.eps {
                exceed += 1;
            }
        }
    }
    let ratio = exceed as f64 / (h * w) as f64;
    Ok(OcclusionVerdict {
        occluded: ratio > cfg.eta,
        observed_ratio: ratio,
        discrepancy: disc,
    })
}
