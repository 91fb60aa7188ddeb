use crate::error::{Error, Result};

/// Dense row-major f64 tensor. The shape is dynamic but nearly all users
/// are 2-D (matrices) or treat the buffer as a flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if data.len() != n {
            return Err(Error::ShapeMismatch {
                left: shape.to_vec(),
                right: vec![data.len()],
                context: "Tensor::from_vec",
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Tensor::from_vec"));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        debug_assert_eq!(self.shape.len(), 2);
        self.data[r * self.shape[1] + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        debug_assert_eq!(self.shape.len(), 2);
        self.data[r * self.shape[1] + c] = v;
    }

    pub fn sum(&self) -> f64 {
        // Plain left-to-right summation; the order is part of the
        // determinism contract.
        self.data.iter().sum()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, a: f64) -> Tensor {
        self.map(|v| v * a)
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                left: self.shape.clone(),
                right: other.shape.clone(),
                context: "Tensor::add",
            });
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    /// In-place `self += other * a`.
    pub fn axpy(&mut self, a: f64, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                left: self.shape.clone(),
                right: other.shape.clone(),
                context: "Tensor::axpy",
            });
        }
        for (s, o) in self.data.iter_mut().zip(&other.data) {
            *s += a * o;
        }
        Ok(())
    }

    pub fn transpose(&self) -> Tensor {
        debug_assert_eq!(self.shape.len(), 2);
        let (m, n) = (self.shape[0], self.shape[1]);
        let mut out = Tensor::zeros(&[n, m]);
        for r in 0..m {
            for c in 0..n {
                out.set(c, r, self.at(r, c));
            }
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Matrix product `a[m x k] * b[k x n]`. Inner products accumulate in
/// index order over k, so results are bit-reproducible.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape().len() != 2 || b.shape().len() != 2 || a.cols() != b.rows() {
        return Err(Error::ShapeMismatch {
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
            context: "matmul",
        });
    }
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut out = Tensor::zeros(&[m, n]);
    for r in 0..m {
        for c in 0..n {
            let mut acc = 0.0;
            for i in 0..k {
                acc += a.at(r, i) * b.at(i, c);
            }
            out.set(r, c, acc);
        }
    }
    Ok(out)
}

/// Row-wise softmax with per-row max subtraction.
pub fn softmax_rows(x: &Tensor) -> Tensor {
    debug_assert_eq!(x.shape().len(), 2);
    let (m, n) = (x.rows(), x.cols());
    let mut out = Tensor::zeros(&[m, n]);
    for r in 0..m {
        let mut mx = f64::NEG_INFINITY;
        for c in 0..n {
            mx = mx.max(x.at(r, c));
        }
        let mut z = 0.0;
        for c in 0..n {
            let e = (x.at(r, c) - mx).exp();
            out.set(r, c, e);
            z += e;
        }
        for c in 0..n {
            out.set(r, c, out.at(r, c) / z);
        }
    }
    out
}

/// Scale a nonnegative tensor to unit total mass.
pub fn normalize_nonneg(x: &Tensor) -> Result<Tensor> {
    debug_assert!(x.data().iter().all(|&v| v >= 0.0));
    let total = x.sum();
    if total <= 0.0 {
        return Err(Error::ZeroMass);
    }
    Ok(x.scale(1.0 / total))
}

/// Truncated Gaussian kernel of radius `ceil(3*sigma)`, renormalized to
/// unit mass.
pub fn gaussian_kernel_2d(sigma: f64) -> Result<Tensor> {
    if !(sigma > 0.0) {
        return Err(Error::Domain(format!("sigma must be > 0, got {sigma}")));
    }
    let r = (3.0 * sigma).ceil() as i64;
    let side = (2 * r + 1) as usize;
    let mut k = Tensor::zeros(&[side, side]);
    let inv2s2 = 1.0 / (2.0 * sigma * sigma);
    for dy in -r..=r {
        for dx in -r..=r {
            let v = (-((dx * dx + dy * dy) as f64) * inv2s2).exp();
            k.set((dy + r) as usize, (dx + r) as usize, v);
        }
    }
    normalize_nonneg(&k)
}

/// Bilinear interpolation of a `h x w` field at continuous `(x, y)`.
/// Coordinates outside `[0, w-1] x [0, h-1]` return 0.
pub fn bilinear_sample(field: &Tensor, x: f64, y: f64) -> f64 {
    debug_assert_eq!(field.shape().len(), 2);
    let (h, w) = (field.rows(), field.cols());
    if x < 0.0 || y < 0.0 || x > (w - 1) as f64 || y > (h - 1) as f64 {
        return 0.0;
    }
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let v00 = field.at(y0, x0);
    let v01 = field.at(y0, x1);
    let v10 = field.at(y1, x0);
    let v11 = field.at(y1, x1);
    v00 * (1.0 - fx) * (1.0 - fy) + v01 * fx * (1.0 - fy) + v10 * (1.0 - fx) * fy + v11 * fx * fy
}

/// Central-difference gradient oracle: `(f(p + h e_i) - f(p - h e_i)) / 2h`.
pub fn finite_diff_gradient(
    loss: impl Fn(&[f64]) -> f64,
    params: &[f64],
    h: f64,
) -> Result<Vec<f64>> {
    debug_assert!(h > 0.0);
    let mut probe = params.to_vec();
    let mut grad = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let p0 = probe[i];
        probe[i] = p0 + h;
        let up = loss(&probe);
        probe[i] = p0 - h;
        let dn = loss(&probe);
        probe[i] = p0;
        if !up.is_finite() || !dn.is_finite() {
            return Err(Error::NonFinite("finite_diff_gradient probe"));
        }
        grad.push((up - dn) / (2.0 * h));
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t2(rows: usize, cols: usize, v: &[f64]) -> Tensor {
        Tensor::from_vec(&[rows, cols], v.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let i2 = t2(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let m = t2(2, 2, &[3.0, -1.0, 2.0, 5.0]);
        assert_eq!(matmul(&i2, &m).unwrap(), m);
    }

    #[test]
    fn matmul_hand_expansion() {
        let a = t2(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = t2(2, 1, &[0.0, 1.0]);
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.data(), &[2.0, 4.0]);
    }

    #[test]
    fn matmul_scalar() {
        let a = t2(1, 1, &[3.0]);
        let b = t2(1, 1, &[-2.0]);
        assert_eq!(matmul(&a, &b).unwrap().data(), &[-6.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = t2(2, 3, &[0.0; 6]);
        let b = t2(2, 2, &[0.0; 4]);
        let err = matmul(&a, &b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[2, 2]"), "{msg}");
    }

    #[test]
    fn softmax_symmetry_and_shift() {
        let x = t2(2, 2, &[0.0, 0.0, 1000.0, 1000.0]);
        let s = softmax_rows(&x);
        for &v in s.data() {
            assert!((v - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_direct_evaluation() {
        let x = t2(1, 2, &[0.0, 3.0_f64.ln()]);
        let s = softmax_rows(&x);
        assert!((s.at(0, 0) - 0.25).abs() < 1e-12);
        assert!((s.at(0, 1) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn gaussian_kernel_shape_and_peak() {
        let k = gaussian_kernel_2d(1.0).unwrap();
        assert_eq!(k.shape(), &[7, 7]);
        let center = k.at(3, 3);
        for r in 0..7 {
            for c in 0..7 {
                if (r, c) != (3, 3) {
                    assert!(k.at(r, c) < center);
                }
            }
        }
        assert!((k.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gaussian_kernel_neighbor_ratio() {
        let k = gaussian_kernel_2d(1.0).unwrap();
        let ratio = k.at(3, 3) / k.at(3, 4);
        assert!((ratio - 0.5_f64.exp()).abs() < 1e-12);
    }

    #[test]
    fn gaussian_kernel_rejects_nonpositive_sigma() {
        assert!(gaussian_kernel_2d(0.0).is_err());
        assert!(gaussian_kernel_2d(-1.0).is_err());
    }

    #[test]
    fn normalize_cases() {
        let x = t2(1, 2, &[2.0, 2.0]);
        assert_eq!(normalize_nonneg(&x).unwrap().data(), &[0.5, 0.5]);
        let x = t2(1, 2, &[1.0, 3.0]);
        assert_eq!(normalize_nonneg(&x).unwrap().data(), &[0.25, 0.75]);
        let z = t2(1, 2, &[0.0, 0.0]);
        assert!(matches!(normalize_nonneg(&z), Err(Error::ZeroMass)));
    }

    #[test]
    fn bilinear_grid_point_and_midpoint() {
        let f = t2(2, 2, &[1.0, 5.0, 3.0, 7.0]);
        assert_eq!(bilinear_sample(&f, 1.0, 0.0), 5.0);
        let g = t2(2, 2, &[4.0, 4.0, 9.0, 9.0]);
        assert_eq!(bilinear_sample(&g, 0.5, 0.0), 4.0);
    }

    #[test]
    fn bilinear_hand_expansion() {
        // 2x2 field [[0,1],[0,1]] at (x=0.25, y=0.5) -> 0.25
        let f = t2(2, 2, &[0.0, 1.0, 0.0, 1.0]);
        assert!((bilinear_sample(&f, 0.25, 0.5) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn bilinear_out_of_frame_is_zero() {
        let f = t2(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(bilinear_sample(&f, -0.1, 0.0), 0.0);
        assert_eq!(bilinear_sample(&f, 1.5, 0.5), 0.0);
    }

    #[test]
    fn finite_diff_quadratic() {
        let g = finite_diff_gradient(|p| p.iter().map(|v| v * v).sum(), &[1.0, 2.0], 1e-5).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-6);
        assert!((g[1] - 4.0).abs() < 1e-6);
    }

    #[test]
    fn finite_diff_constant_and_linear() {
        let g = finite_diff_gradient(|_| 7.0, &[1.0, -3.0, 2.0], 1e-5).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
        let g = finite_diff_gradient(|p| p[0], &[5.0, 9.0], 1e-5).unwrap();
        assert!((g[0] - 1.0).abs() < 1e-9);
        assert!(g[1].abs() < 1e-9);
    }

    #[test]
    fn finite_diff_nonfinite_probe_errors() {
        let r = finite_diff_gradient(|p| p[0].ln(), &[0.0], 1e-5);
        assert!(r.is_err());
    }
}
