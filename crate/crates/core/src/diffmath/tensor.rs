//! Dense row-major `f64` tensors and the numeric kernels shared by the
//! autodiff graph and the tape-free inference paths.

use crate::error::{shape_err, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return shape_err("Tensor::new", format!("zero-sized dimension in {shape:?}"));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return shape_err(
                "Tensor::new",
                format!("shape {shape:?} needs {n} values, got {}", data.len()),
            );
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        assert!(shape.iter().all(|&d| d > 0), "zero-sized dimension in {shape:?}");
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// A 1-D tensor.
    pub fn vector(values: Vec<f64>) -> Result<Self> {
        Self::new(vec![values.len()], values)
    }

    /// A 2-D tensor from row slices; all rows must share a length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let Some(first) = rows.first() else {
            return shape_err("Tensor::from_rows", "no rows");
        };
        let cols = first.len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return shape_err("Tensor::from_rows", "ragged rows");
            }
            data.extend_from_slice(r);
        }
        Self::new(vec![rows.len(), cols], data)
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

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Size of the last axis.
    pub fn cols(&self) -> usize {
        *self.shape.last().expect("tensor has at least one axis")
    }

    /// Product of all axes but the last.
    pub fn rows(&self) -> usize {
        self.data.len() / self.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() || shape.contains(&0) {
            return shape_err("reshape", format!("{:?} -> {shape:?}", self.shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape != other.shape {
            return shape_err(op, format!("{:?} vs {:?}", self.shape, other.shape));
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn check_finite(&self, op: &str) -> Result<()> {
        if self.all_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(op.to_string()))
        }
    }

    pub fn argmax(values: &[f64]) -> usize {
        argmax(values)
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn require_2d(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => shape_err(op, format!("expected a matrix, got {s:?}")),
    }
}

/// `a [m×k] · b [k×n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = require_2d(a, "matmul")?;
    let (k2, n) = require_2d(b, "matmul")?;
    if k != k2 {
        return shape_err("matmul", format!("{:?} · {:?}", a.shape(), b.shape()));
    }
    let mut out = vec![0.0; m * n];
    let (ad, bd) = (a.data(), b.data());
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = ad[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &bd[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

/// `aᵀ · b` for `a [k×m]`, `b [k×n]`.
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Tensor {
    let (k, m) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[1];
    let mut out = vec![0.0; m * n];
    let (ad, bd) = (a.data(), b.data());
    for p in 0..k {
        let brow = &bd[p * n..(p + 1) * n];
        for i in 0..m {
            let api = ad[p * m + i];
            if api == 0.0 {
                continue;
            }
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += api * bv;
            }
        }
    }
    Tensor { shape: vec![m, n], data: out }
}

/// `a · bᵀ` for `a [m×k]`, `b [n×k]`.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[0];
    let mut out = vec![0.0; m * n];
    let (ad, bd) = (a.data(), b.data());
    for i in 0..m {
        let arow = &ad[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &bd[j * k..(j + 1) * k];
            out[i * n + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    Tensor { shape: vec![m, n], data: out }
}

/// Adds `bias [n]` to every row of `a [.., n]`.
pub fn add_bias(a: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let n = a.cols();
    if bias.len() != n {
        return shape_err("add_bias", format!("{:?} + {:?}", a.shape(), bias.shape()));
    }
    let mut out = a.clone();
    for row in out.data.chunks_mut(n) {
        for (o, b) in row.iter_mut().zip(bias.data()) {
            *o += b;
        }
    }
    Ok(out)
}

/// `(outer, axis_len, inner)` strides for slicing along `axis`.
pub(crate) fn axis_layout(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// `softmax(logits / tau)` along `axis`, with max subtraction.
pub fn softmax_temp(logits: &Tensor, tau: f64, axis: usize) -> Result<Tensor> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::InvalidArgument(format!("temperature {tau} outside (0, 1]")));
    }
    if axis >= logits.shape().len() {
        return Err(Error::InvalidArgument(format!(
            "axis {axis} invalid for shape {:?}",
            logits.shape()
        )));
    }
    logits.check_finite("softmax_temp input")?;
    let (outer, len, inner) = axis_layout(logits.shape(), axis);
    let mut out = vec![0.0; logits.len()];
    let x = logits.data();
    for o in 0..outer {
        for i in 0..inner {
            let idx = |k: usize| (o * len + k) * inner + i;
            let mut max = f64::NEG_INFINITY;
            for k in 0..len {
                max = max.max(x[idx(k)]);
            }
            let mut z = 0.0;
            for k in 0..len {
                let e = ((x[idx(k)] - max) / tau).exp();
                out[idx(k)] = e;
                z += e;
            }
            for k in 0..len {
                out[idx(k)] /= z;
            }
        }
    }
    Tensor::new(logits.shape().to_vec(), out)
}

/// Vector-Jacobian product of `softmax_temp` given its output `y`.
pub(crate) fn softmax_temp_backward(y: &Tensor, grad: &Tensor, tau: f64, axis: usize) -> Tensor {
    let (outer, len, inner) = axis_layout(y.shape(), axis);
    let mut out = vec![0.0; y.len()];
    let (yd, gd) = (y.data(), grad.data());
    for o in 0..outer {
        for i in 0..inner {
            let idx = |k: usize| (o * len + k) * inner + i;
            let dot: f64 = (0..len).map(|k| yd[idx(k)] * gd[idx(k)]).sum();
            for k in 0..len {
                out[idx(k)] = yd[idx(k)] * (gd[idx(k)] - dot) / tau;
            }
        }
    }
    Tensor {
        shape: y.shape().to_vec(),
        data: out,
    }
}

/// Probability floor applied before every logarithm.
pub const LOG_CLAMP: f64 = 1e-12;

/// One step of the probabilistic Moore recurrence for a batch:
/// `out[b,k] = Σ_j p[b,j] Σ_i q[b,i] T[j,i,k]`.
pub fn belief_step(q: &Tensor, p: &Tensor, t: &Tensor) -> Result<Tensor> {
    let (batch, states) = require_2d(q, "belief_step")?;
    let (pb, symbols) = require_2d(p, "belief_step")?;
    if pb != batch || t.shape() != [symbols, states, states] {
        return shape_err(
            "belief_step",
            format!("q {:?}, p {:?}, T {:?}", q.shape(), p.shape(), t.shape()),
        );
    }
    let mut out = vec![0.0; batch * states];
    let (qd, pd, td) = (q.data(), p.data(), t.data());
    let mut mixed = vec![0.0; states * states];
    for b in 0..batch {
        // mixed[i,k] = Σ_j p[b,j] T[j,i,k]
        mixed.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..symbols {
            let pj = pd[b * symbols + j];
            if pj == 0.0 {
                continue;
            }
            let tj = &td[j * states * states..(j + 1) * states * states];
            for (m, &tv) in mixed.iter_mut().zip(tj) {
                *m += pj * tv;
            }
        }
        let orow = &mut out[b * states..(b + 1) * states];
        for i in 0..states {
            let qi = qd[b * states + i];
            if qi == 0.0 {
                continue;
            }
            let mrow = &mixed[i * states..(i + 1) * states];
            for (o, &mv) in orow.iter_mut().zip(mrow) {
                *o += qi * mv;
            }
        }
    }
    Tensor::new(vec![batch, states], out)
}

/// Gradients of `belief_step` w.r.t. `(q, p, T)`.
pub(crate) fn belief_step_backward(
    q: &Tensor,
    p: &Tensor,
    t: &Tensor,
    grad: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let (batch, states) = (q.shape()[0], q.shape()[1]);
    let symbols = p.shape()[1];
    let (qd, pd, td, gd) = (q.data(), p.data(), t.data(), grad.data());
    let mut dq = vec![0.0; batch * states];
    let mut dp = vec![0.0; batch * symbols];
    let mut dt = vec![0.0; t.len()];
    let ss = states * states;
    // tg[i] = Σ_k T[j,i,k] g[b,k]
    let mut tg = vec![0.0; states];
    for b in 0..batch {
        let qrow = &qd[b * states..(b + 1) * states];
        let grow = &gd[b * states..(b + 1) * states];
        for j in 0..symbols {
            let pj = pd[b * symbols + j];
            let tj = &td[j * ss..(j + 1) * ss];
            for i in 0..states {
                let trow = &tj[i * states..(i + 1) * states];
                tg[i] = trow.iter().zip(grow).map(|(a, b)| a * b).sum();
            }
            dp[b * symbols + j] = qrow.iter().zip(&tg).map(|(a, b)| a * b).sum();
            for i in 0..states {
                dq[b * states + i] += pj * tg[i];
            }
            if pj == 0.0 {
                continue;
            }
            let dtj = &mut dt[j * ss..(j + 1) * ss];
            for i in 0..states {
                let w = pj * qrow[i];
                if w == 0.0 {
                    continue;
                }
                for (d, &g) in dtj[i * states..(i + 1) * states].iter_mut().zip(grow) {
                    *d += w * g;
                }
            }
        }
    }
    (
        Tensor { shape: q.shape().to_vec(), data: dq },
        Tensor { shape: p.shape().to_vec(), data: dp },
        Tensor { shape: t.shape().to_vec(), data: dt },
    )
}

/// Geometry of a valid (unpadded) 2-D convolution over NHWC input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvGeom {
    pub fn out_height(&self) -> usize {
        (self.height - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width - self.kernel) / self.stride + 1
    }

    pub fn infer(x: &Tensor, w: &Tensor, stride: usize) -> Result<Self> {
        let (&[batch, height, width, in_ch], &[out_ch, kh, kw, wc]) = (x.shape(), w.shape()) else {
            return shape_err("conv2d", format!("x {:?}, w {:?}", x.shape(), w.shape()));
        };
        if kh != kw || wc != in_ch || kh > height || kw > width || stride == 0 {
            return shape_err("conv2d", format!("x {:?}, w {:?}", x.shape(), w.shape()));
        }
        Ok(Self {
            batch,
            height,
            width,
            in_ch,
            out_ch,
            kernel: kh,
            stride,
        })
    }
}

/// Valid convolution: `x [N,H,W,C] * w [O,K,K,C] + b [O] -> [N,OH,OW,O]`.
pub fn conv2d(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize) -> Result<Tensor> {
    let g = ConvGeom::infer(x, w, stride)?;
    if b.len() != g.out_ch {
        return shape_err("conv2d", format!("bias {:?}", b.shape()));
    }
    let (oh, ow) = (g.out_height(), g.out_width());
    let patch = g.kernel * g.kernel * g.in_ch;
    let mut out = vec![0.0; g.batch * oh * ow * g.out_ch];
    let (xd, wd, bd) = (x.data(), w.data(), b.data());
    let mut cols = vec![0.0; patch];
    for n in 0..g.batch {
        for oy in 0..oh {
            for ox in 0..ow {
                gather_patch(xd, &g, n, oy, ox, &mut cols);
                let base = ((n * oh + oy) * ow + ox) * g.out_ch;
                for o in 0..g.out_ch {
                    let wrow = &wd[o * patch..(o + 1) * patch];
                    out[base + o] = bd[o] + wrow.iter().zip(&cols).map(|(a, c)| a * c).sum::<f64>();
                }
            }
        }
    }
    Tensor::new(vec![g.batch, oh, ow, g.out_ch], out)
}

fn gather_patch(xd: &[f64], g: &ConvGeom, n: usize, oy: usize, ox: usize, cols: &mut [f64]) {
    let mut c = 0;
    for ky in 0..g.kernel {
        let y = oy * g.stride + ky;
        let start = ((n * g.height + y) * g.width + ox * g.stride) * g.in_ch;
        let len = g.kernel * g.in_ch;
        cols[c..c + len].copy_from_slice(&xd[start..start + len]);
        c += len;
    }
}

/// Gradients of `conv2d` w.r.t. `(x, w, b)`.
pub(crate) fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    stride: usize,
    grad: &Tensor,
    need_x: bool,
) -> (Option<Tensor>, Tensor, Tensor) {
    let g = ConvGeom::infer(x, w, stride).expect("validated in forward");
    let (oh, ow) = (g.out_height(), g.out_width());
    let patch = g.kernel * g.kernel * g.in_ch;
    let (xd, wd, gd) = (x.data(), w.data(), grad.data());
    let mut dx = need_x.then(|| vec![0.0; x.len()]);
    let mut dw = vec![0.0; w.len()];
    let mut db = vec![0.0; g.out_ch];
    let mut cols = vec![0.0; patch];
    let mut dcols = vec![0.0; patch];
    for n in 0..g.batch {
        for oy in 0..oh {
            for ox in 0..ow {
                gather_patch(xd, &g, n, oy, ox, &mut cols);
                let base = ((n * oh + oy) * ow + ox) * g.out_ch;
                dcols.iter_mut().for_each(|v| *v = 0.0);
                for o in 0..g.out_ch {
                    let go = gd[base + o];
                    if go == 0.0 {
                        continue;
                    }
                    db[o] += go;
                    let dwrow = &mut dw[o * patch..(o + 1) * patch];
                    for (d, &c) in dwrow.iter_mut().zip(&cols) {
                        *d += go * c;
                    }
                    if dx.is_some() {
                        let wrow = &wd[o * patch..(o + 1) * patch];
                        for (d, &wv) in dcols.iter_mut().zip(wrow) {
                            *d += go * wv;
                        }
                    }
                }
                if let Some(dx) = dx.as_mut() {
                    let mut c = 0;
                    for ky in 0..g.kernel {
                        let y = oy * g.stride + ky;
                        let start = ((n * g.height + y) * g.width + ox * g.stride) * g.in_ch;
                        let len = g.kernel * g.in_ch;
                        for (d, &v) in dx[start..start + len].iter_mut().zip(&dcols[c..c + len]) {
                            *d += v;
                        }
                        c += len;
                    }
                }
            }
        }
    }
    (
        dx.map(|d| Tensor { shape: x.shape().to_vec(), data: d }),
        Tensor { shape: w.shape().to_vec(), data: dw },
        Tensor { shape: vec![g.out_ch], data: db },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_inconsistent_shape() {
        assert!(Tensor::new(vec![2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::new(vec![0], vec![]).is_err());
    }

    #[test]
    fn matmul_small() {
        let a = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::new(vec![2, 1], vec![1.0, 1.0]).unwrap();
        assert_eq!(matmul(&a, &b).unwrap().data(), &[3.0, 7.0]);
        assert_eq!(matmul_tn(&a, &b).data(), &[4.0, 6.0]);
        let bt = Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap();
        assert_eq!(matmul_nt(&a, &bt).data(), &[3.0, 7.0]);
    }

    #[test]
    fn softmax_examples() {
        let uniform = softmax_temp(&Tensor::vector(vec![0.0; 3]).unwrap(), 0.5, 0).unwrap();
        for v in uniform.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let x = Tensor::vector(vec![1.0, 0.0]).unwrap();
        let s1 = softmax_temp(&x, 1.0, 0).unwrap();
        assert!((s1.data()[0] - 0.73106).abs() < 1e-5);
        assert!((s1.data()[1] - 0.26894).abs() < 1e-5);
        let s2 = softmax_temp(&x, 0.5, 0).unwrap();
        assert!((s2.data()[0] - 0.88080).abs() < 1e-5);
        assert!((s2.data()[1] - 0.11920).abs() < 1e-5);
    }

    #[test]
    fn softmax_errors() {
        let x = Tensor::vector(vec![1.0, 0.0]).unwrap();
        assert!(softmax_temp(&x, 0.0, 0).is_err());
        assert!(softmax_temp(&x, 1.5, 0).is_err());
        assert!(softmax_temp(&x, 0.5, 1).is_err());
        let bad = Tensor::vector(vec![f64::NAN, 0.0]).unwrap();
        assert!(softmax_temp(&bad, 0.5, 0).is_err());
    }

    #[test]
    fn softmax_middle_axis() {
        let x = Tensor::new(vec![2, 3, 2], (0..12).map(|v| v as f64 * 0.3).collect()).unwrap();
        let y = softmax_temp(&x, 0.7, 1).unwrap();
        for o in 0..2 {
            for i in 0..2 {
                let s: f64 = (0..3).map(|k| y.data()[(o * 3 + k) * 2 + i]).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_matches_naive_sum() {
        let x = Tensor::new(vec![1, 3, 3, 1], (1..=9).map(f64::from).collect()).unwrap();
        let w = Tensor::filled(&[1, 2, 2, 1], 1.0);
        let b = Tensor::vector(vec![0.5]).unwrap();
        let y = conv2d(&x, &w, &b, 1).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2, 1]);
        assert_eq!(y.data(), &[12.5, 16.5, 24.5, 28.5]);
    }

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.1, 0.7, 0.7]), 1);
    }
}
