//! Forward and backward math for every [`Op`].

use super::Op;
use crate::error::{Error, Result};
use crate::linalg;
use crate::tensor::{numel, strides, Tensor};

pub(super) fn forward(op: &Op, x: &[&Tensor]) -> Result<Tensor> {
    let name = op.name();
    match op {
        Op::Leaf => unreachable!("leaves are never recomputed"),
        Op::Add(..) => binary(name, x[0], x[1], |a, b| a + b),
        Op::Sub(..) => binary(name, x[0], x[1], |a, b| a - b),
        Op::Mul(..) => binary(name, x[0], x[1], |a, b| a * b),
        Op::Neg(_) => Ok(unary(x[0], |v| -v)),
        Op::Exp(_) => Ok(unary(x[0], f64::exp)),
        Op::Relu(_) => Ok(unary(x[0], |v| if v > 0.0 { v } else { 0.0 })),
        Op::Sigmoid(_) => Ok(unary(x[0], sigmoid)),
        Op::Scale(_, c) => Ok(unary(x[0], |v| v * c)),
        Op::Sum(_) => Ok(Tensor::scalar(x[0].data().iter().sum())),
        Op::Mean(_) => {
            if x[0].is_empty() {
                return Err(Error::invalid(name, "mean of an empty tensor"));
            }
            Ok(Tensor::scalar(x[0].data().iter().sum::<f64>() / x[0].len() as f64))
        }
        Op::SumAxis(_, axis) => reduce_axis(name, x[0], *axis, false),
        Op::MeanAxis(_, axis) => reduce_axis(name, x[0], *axis, true),
        Op::MaxAxis(_, axis) => {
            let (out_shape, idx) = argmax_axis(name, x[0], *axis)?;
            let data = idx.iter().map(|&i| x[0].data()[i]).collect();
            Tensor::new(out_shape, data)
        }
        Op::Reshape(_, shape) => {
            if numel(shape) != x[0].len() || shape.contains(&0) {
                return Err(Error::shape(name, &[x[0].shape(), shape]));
            }
            Tensor::new(shape.clone(), x[0].data().to_vec())
        }
        Op::Concat(_, axis) => concat(name, x, *axis),
        Op::Slice { axis, start, end, .. } => {
            let (outer, len, inner) = split_axis(name, x[0].shape(), *axis)?;
            if start >= end || *end > len {
                return Err(Error::invalid(name, format!("range {start}..{end} outside axis of length {len}")));
            }
            let w = end - start;
            let mut data = Vec::with_capacity(outer * w * inner);
            for o in 0..outer {
                let base = o * len * inner;
                data.extend_from_slice(&x[0].data()[base + start * inner..base + end * inner]);
            }
            let mut shape = x[0].shape().to_vec();
            shape[*axis] = w;
            Tensor::new(shape, data)
        }
        Op::Expand(_, shape) => {
            let map = expand_map(name, x[0].shape(), shape)?;
            Tensor::new(shape.clone(), map.iter().map(|&i| x[0].data()[i]).collect())
        }
        Op::Matmul(..) => {
            let (m, k, n) = matmul_dims(name, x[0], x[1])?;
            let mut out = vec![0.0; m * n];
            matmul_into(x[0].data(), x[1].data(), &mut out, m, k, n);
            Tensor::new(vec![m, n], out)
        }
        Op::Conv2d { stride, padding, .. } => {
            let geom = ConvGeom::new(name, x[0], x[1], x[2], *stride, *padding)?;
            let out = geom.forward(x[0].data(), x[1].data(), x[2].data());
            Tensor::new(geom.output_shape(x[0].shape().len() == 3), out)
        }
        Op::SoftmaxCrossEntropy { labels, .. } => {
            let (n, k) = logits_dims(name, x[0], labels)?;
            let mut total = 0.0;
            for (row, &label) in x[0].data().chunks(k).zip(labels).take(n) {
                total += log_sum_exp(row) - row[label];
            }
            Ok(Tensor::scalar(total / n as f64))
        }
        Op::Det(_) => {
            let n = square_side(name, x[0])?;
            Ok(Tensor::scalar(linalg::det(x[0].data(), n)))
        }
        Op::NormalizeRows(_) => {
            let [_, p] = *x[0].shape() else {
                return Err(Error::shape(name, &[x[0].shape()]));
            };
            let mut data = Vec::with_capacity(x[0].len());
            for row in x[0].data().chunks(p) {
                let norm = row_norm(row);
                data.extend(row.iter().map(|v| v / norm));
            }
            Tensor::new(x[0].shape().to_vec(), data)
        }
    }
}

/// Returns one gradient per input (`None` where `needs` is false).
pub(super) fn backward(op: &Op, x: &[&Tensor], out: &Tensor, g: &[f64], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
    let need = |i: usize| needs[i];
    match op {
        Op::Leaf => vec![],
        Op::Add(..) => vec![
            need(0).then(|| unbroadcast(x[0], out, g.to_vec())),
            need(1).then(|| unbroadcast(x[1], out, g.to_vec())),
        ],
        Op::Sub(..) => vec![
            need(0).then(|| unbroadcast(x[0], out, g.to_vec())),
            need(1).then(|| unbroadcast(x[1], out, g.iter().map(|v| -v).collect())),
        ],
        Op::Mul(..) => {
            let (a, b) = (x[0], x[1]);
            let get = |t: &Tensor, i: usize| if t.len() == 1 { t.data()[0] } else { t.data()[i] };
            vec![
                need(0).then(|| unbroadcast(a, out, g.iter().enumerate().map(|(i, gi)| gi * get(b, i)).collect())),
                need(1).then(|| unbroadcast(b, out, g.iter().enumerate().map(|(i, gi)| gi * get(a, i)).collect())),
            ]
        }
        Op::Neg(_) => vec![Some(g.iter().map(|v| -v).collect())],
        Op::Exp(_) => vec![Some(g.iter().zip(out.data()).map(|(gi, y)| gi * y).collect())],
        Op::Relu(_) => {
            vec![Some(g.iter().zip(x[0].data()).map(|(gi, v)| if *v > 0.0 { *gi } else { 0.0 }).collect())]
        }
        Op::Sigmoid(_) => vec![Some(g.iter().zip(out.data()).map(|(gi, s)| gi * s * (1.0 - s)).collect())],
        Op::Scale(_, c) => vec![Some(g.iter().map(|v| v * c).collect())],
        Op::Sum(_) => vec![Some(vec![g[0]; x[0].len()])],
        Op::Mean(_) => vec![Some(vec![g[0] / x[0].len() as f64; x[0].len()])],
        Op::SumAxis(_, axis) | Op::MeanAxis(_, axis) => {
            let (outer, len, inner) = split_axis("", x[0].shape(), *axis).expect("validated in forward");
            let factor = if matches!(op, Op::MeanAxis(..)) { 1.0 / len as f64 } else { 1.0 };
            let mut dx = vec![0.0; x[0].len()];
            for o in 0..outer {
                for a in 0..len {
                    let dst = &mut dx[(o * len + a) * inner..(o * len + a + 1) * inner];
                    let src = &g[o * inner..(o + 1) * inner];
                    dst.iter_mut().zip(src).for_each(|(d, s)| *d = s * factor);
                }
            }
            vec![Some(dx)]
        }
        Op::MaxAxis(_, axis) => {
            let (_, idx) = argmax_axis("", x[0], *axis).expect("validated in forward");
            let mut dx = vec![0.0; x[0].len()];
            for (gi, i) in g.iter().zip(idx) {
                dx[i] += gi;
            }
            vec![Some(dx)]
        }
        Op::Reshape(..) => vec![Some(g.to_vec())],
        Op::Concat(_, axis) => {
            let (outer, _, inner) = split_axis("", out.shape(), *axis).expect("validated in forward");
            let total = out.shape()[*axis];
            let mut offset = 0;
            x.iter()
                .enumerate()
                .map(|(i, t)| {
                    let len = t.shape()[*axis];
                    let grad = need(i).then(|| {
                        let mut dx = Vec::with_capacity(t.len());
                        for o in 0..outer {
                            let base = (o * total + offset) * inner;
                            dx.extend_from_slice(&g[base..base + len * inner]);
                        }
                        dx
                    });
                    offset += len;
                    grad
                })
                .collect()
        }
        Op::Slice { axis, start, end, .. } => {
            let (outer, len, inner) = split_axis("", x[0].shape(), *axis).expect("validated in forward");
            let w = end - start;
            let mut dx = vec![0.0; x[0].len()];
            for o in 0..outer {
                let base = o * len * inner + start * inner;
                dx[base..base + w * inner].copy_from_slice(&g[o * w * inner..(o + 1) * w * inner]);
            }
            vec![Some(dx)]
        }
        Op::Expand(_, shape) => {
            let map = expand_map("", x[0].shape(), shape).expect("validated in forward");
            let mut dx = vec![0.0; x[0].len()];
            for (gi, i) in g.iter().zip(map) {
                dx[i] += gi;
            }
            vec![Some(dx)]
        }
        Op::Matmul(..) => {
            let (m, k, n) = matmul_dims("", x[0], x[1]).expect("validated in forward");
            let (a, b) = (x[0].data(), x[1].data());
            let da = need(0).then(|| {
                let mut da = vec![0.0; m * k];
                for i in 0..m {
                    let gi = &g[i * n..(i + 1) * n];
                    for kk in 0..k {
                        da[i * k + kk] = dot(gi, &b[kk * n..(kk + 1) * n]);
                    }
                }
                da
            });
            let db = need(1).then(|| {
                let mut db = vec![0.0; k * n];
                for i in 0..m {
                    let gi = &g[i * n..(i + 1) * n];
                    for kk in 0..k {
                        axpy(a[i * k + kk], gi, &mut db[kk * n..(kk + 1) * n]);
                    }
                }
                db
            });
            vec![da, db]
        }
        Op::Conv2d { stride, padding, .. } => {
            let geom = ConvGeom::new("", x[0], x[1], x[2], *stride, *padding).expect("validated in forward");
            let (dx, dw, db) = geom.backward(x[0].data(), x[1].data(), g, need(0), need(1), need(2));
            vec![dx, dw, db]
        }
        Op::SoftmaxCrossEntropy { labels, .. } => {
            let (n, k) = logits_dims("", x[0], labels).expect("validated in forward");
            let scale = g[0] / n as f64;
            let mut dx = Vec::with_capacity(x[0].len());
            for (row, &label) in x[0].data().chunks(k).zip(labels) {
                let lse = log_sum_exp(row);
                for (j, z) in row.iter().enumerate() {
                    let p = (z - lse).exp();
                    dx.push(scale * (p - if j == label { 1.0 } else { 0.0 }));
                }
            }
            vec![Some(dx)]
        }
        Op::Det(_) => {
            let n = x[0].shape()[0];
            let cof = linalg::cofactor_matrix(x[0].data(), n);
            vec![Some(cof.into_iter().map(|c| c * g[0]).collect())]
        }
        Op::NormalizeRows(_) => {
            let p = x[0].shape()[1];
            let mut dx = Vec::with_capacity(x[0].len());
            for ((row, y), gr) in x[0].data().chunks(p).zip(out.data().chunks(p)).zip(g.chunks(p)) {
                let norm = row_norm(row);
                let proj = dot(y, gr);
                dx.extend(y.iter().zip(gr).map(|(yi, gi)| (gi - yi * proj) / norm));
            }
            vec![Some(dx)]
        }
    }
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Euclidean norm with a floor so that zero rows stay finite.
fn row_norm(row: &[f64]) -> f64 {
    (row.iter().map(|v| v * v).sum::<f64>() + 1e-12).sqrt()
}

pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln()
}

fn unary(x: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::new(x.shape().to_vec(), x.data().iter().map(|&v| f(v)).collect()).expect("same shape")
}

fn binary(name: &'static str, a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(a.shape().to_vec(), data)
    } else if b.len() == 1 {
        let y = b.data()[0];
        Tensor::new(a.shape().to_vec(), a.data().iter().map(|&x| f(x, y)).collect())
    } else if a.len() == 1 {
        let x = a.data()[0];
        Tensor::new(b.shape().to_vec(), b.data().iter().map(|&y| f(x, y)).collect())
    } else {
        Err(Error::shape(name, &[a.shape(), b.shape()]))
    }
}

/// Sums `g` back to a broadcast scalar operand.
fn unbroadcast(input: &Tensor, out: &Tensor, g: Vec<f64>) -> Vec<f64> {
    if input.len() == 1 && out.len() != 1 {
        vec![g.iter().sum()]
    } else {
        g
    }
}

fn split_axis(name: &'static str, shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::invalid(name, format!("axis {axis} out of range for shape {shape:?}")));
    }
    Ok((numel(&shape[..axis]), shape[axis], numel(&shape[axis + 1..])))
}

fn reduce_axis(name: &'static str, x: &Tensor, axis: usize, mean: bool) -> Result<Tensor> {
    let (outer, len, inner) = split_axis(name, x.shape(), axis)?;
    let mut out = vec![0.0; outer * inner];
    for o in 0..outer {
        let dst = &mut out[o * inner..(o + 1) * inner];
        for a in 0..len {
            let src = &x.data()[(o * len + a) * inner..(o * len + a + 1) * inner];
            dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
        }
        if mean {
            dst.iter_mut().for_each(|d| *d /= len as f64);
        }
    }
    let mut shape = x.shape().to_vec();
    shape[axis] = 1;
    Tensor::new(shape, out)
}

/// Output shape and flat source index of the (first) maximum for each output slot.
fn argmax_axis(name: &'static str, x: &Tensor, axis: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    let (outer, len, inner) = split_axis(name, x.shape(), axis)?;
    let mut idx = Vec::with_capacity(outer * inner);
    for o in 0..outer {
        for i in 0..inner {
            let mut best = (o * len) * inner + i;
            for a in 1..len {
                let j = (o * len + a) * inner + i;
                if x.data()[j] > x.data()[best] {
                    best = j;
                }
            }
            idx.push(best);
        }
    }
    let mut shape = x.shape().to_vec();
    shape[axis] = 1;
    Ok((shape, idx))
}

fn concat(name: &'static str, xs: &[&Tensor], axis: usize) -> Result<Tensor> {
    let first = xs.first().ok_or_else(|| Error::invalid(name, "no inputs"))?;
    let (outer, _, inner) = split_axis(name, first.shape(), axis)?;
    for t in xs {
        let compatible = t.shape().len() == first.shape().len()
            && t.shape().iter().zip(first.shape()).enumerate().all(|(i, (a, b))| i == axis || a == b);
        if !compatible {
            return Err(Error::shape(name, &xs.iter().map(|t| t.shape()).collect::<Vec<_>>()));
        }
    }
    let total: usize = xs.iter().map(|t| t.shape()[axis]).sum();
    let mut data = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for t in xs {
            let len = t.shape()[axis];
            data.extend_from_slice(&t.data()[o * len * inner..(o + 1) * len * inner]);
        }
    }
    let mut shape = first.shape().to_vec();
    shape[axis] = total;
    Tensor::new(shape, data)
}

/// For every output element, the flat index of the input element it copies.
fn expand_map(name: &'static str, from: &[usize], to: &[usize]) -> Result<Vec<usize>> {
    let ok = from.len() == to.len() && from.iter().zip(to).all(|(&f, &t)| f == t || f == 1);
    if !ok {
        return Err(Error::shape(name, &[from, to]));
    }
    let in_strides = strides(from);
    let eff: Vec<usize> = from.iter().zip(&in_strides).map(|(&f, &s)| if f == 1 { 0 } else { s }).collect();
    let mut map = Vec::with_capacity(numel(to));
    let mut index = vec![0usize; to.len()];
    for _ in 0..numel(to) {
        map.push(index.iter().zip(&eff).map(|(i, s)| i * s).sum());
        for d in (0..to.len()).rev() {
            index[d] += 1;
            if index[d] < to[d] {
                break;
            }
            index[d] = 0;
        }
    }
    Ok(map)
}

fn matmul_dims(name: &'static str, a: &Tensor, b: &Tensor) -> Result<(usize, usize, usize)> {
    match (a.shape(), b.shape()) {
        ([m, k], [k2, n]) if k == k2 => Ok((*m, *k, *n)),
        _ => Err(Error::shape(name, &[a.shape(), b.shape()])),
    }
}

fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for kk in 0..k {
            axpy(a[i * k + kk], &b[kk * n..(kk + 1) * n], row);
        }
    }
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += alpha * xi);
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn logits_dims(name: &'static str, logits: &Tensor, labels: &[usize]) -> Result<(usize, usize)> {
    let (n, k) = match logits.shape() {
        [k] => (1, *k),
        [n, k] => (*n, *k),
        s => return Err(Error::shape(name, &[s])),
    };
    if labels.len() != n || n == 0 {
        return Err(Error::invalid(name, format!("{} labels for a batch of {n}", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::LabelOutOfRange { label: bad, classes: k });
    }
    Ok((n, k))
}

fn square_side(name: &'static str, a: &Tensor) -> Result<usize> {
    match a.shape() {
        [n, m] if n == m => Ok(*n),
        s => Err(Error::shape(name, &[s])),
    }
}

/// Geometry of one conv2d call; `n` is 1 for unbatched `(C, H, W)` input.
struct ConvGeom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn new(name: &'static str, x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Result<Self> {
        let (n, c, h, wd) = match x.shape() {
            [c, h, w] => (1, *c, *h, *w),
            [n, c, h, w] => (*n, *c, *h, *w),
            s => return Err(Error::shape(name, &[s])),
        };
        let (o, k) = match w.shape() {
            [o, ci, k, k2] if *ci == c && k == k2 => (*o, *k),
            _ => return Err(Error::shape(name, &[x.shape(), w.shape()])),
        };
        if b.shape() != [o] {
            return Err(Error::shape(name, &[w.shape(), b.shape()]));
        }
        if stride == 0 || h + 2 * pad < k || wd + 2 * pad < k {
            return Err(Error::invalid(name, format!("kernel {k} with stride {stride}, padding {pad} does not fit {h}x{wd}")));
        }
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (wd + 2 * pad - k) / stride + 1;
        Ok(ConvGeom { n, c, h, w: wd, o, k, stride, pad, oh, ow })
    }

    fn output_shape(&self, unbatched: bool) -> Vec<usize> {
        if unbatched {
            vec![self.o, self.oh, self.ow]
        } else {
            vec![self.n, self.o, self.oh, self.ow]
        }
    }

    /// Output columns `ox` whose input column `ox*stride + kx - pad` lies inside the image.
    fn col_range(&self, kx: usize) -> (usize, usize) {
        let lo = if self.pad > kx { (self.pad - kx).div_ceil(self.stride) } else { 0 };
        let hi = if self.w + self.pad > kx { (self.w + self.pad - kx - 1) / self.stride + 1 } else { 0 };
        (lo, hi.min(self.ow))
    }

    fn row_input(&self, oy: usize, ky: usize) -> Option<usize> {
        let iy = (oy * self.stride + ky).checked_sub(self.pad)?;
        (iy < self.h).then_some(iy)
    }

    fn forward(&self, x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
        let (plane_in, plane_out) = (self.h * self.w, self.oh * self.ow);
        let mut out = vec![0.0; self.n * self.o * plane_out];
        let ranges: Vec<(usize, usize)> = (0..self.k).map(|kx| self.col_range(kx)).collect();
        for n in 0..self.n {
            for o in 0..self.o {
                let dst = &mut out[(n * self.o + o) * plane_out..(n * self.o + o + 1) * plane_out];
                dst.iter_mut().for_each(|v| *v = b[o]);
                for c in 0..self.c {
                    let src = &x[(n * self.c + c) * plane_in..(n * self.c + c + 1) * plane_in];
                    let kern = &w[(o * self.c + c) * self.k * self.k..(o * self.c + c + 1) * self.k * self.k];
                    for ky in 0..self.k {
                        for oy in 0..self.oh {
                            let Some(iy) = self.row_input(oy, ky) else { continue };
                            let in_row = &src[iy * self.w..(iy + 1) * self.w];
                            let out_row = &mut dst[oy * self.ow..(oy + 1) * self.ow];
                            for kx in 0..self.k {
                                let wv = kern[ky * self.k + kx];
                                let (lo, hi) = ranges[kx];
                                if lo >= hi {
                                    continue;
                                }
                                if self.stride == 1 {
                                    let start = lo + kx - self.pad;
                                    axpy(wv, &in_row[start..start + hi - lo], &mut out_row[lo..hi]);
                                } else {
                                    for ox in lo..hi {
                                        out_row[ox] += wv * in_row[ox * self.stride + kx - self.pad];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    #[allow(clippy::type_complexity)]
    fn backward(
        &self,
        x: &[f64],
        w: &[f64],
        g: &[f64],
        need_x: bool,
        need_w: bool,
        need_b: bool,
    ) -> (Option<Vec<f64>>, Option<Vec<f64>>, Option<Vec<f64>>) {
        let (plane_in, plane_out) = (self.h * self.w, self.oh * self.ow);
        let kk = self.k * self.k;
        let mut dx = need_x.then(|| vec![0.0; x.len()]);
        let mut dw = need_w.then(|| vec![0.0; w.len()]);
        let db = need_b.then(|| {
            let mut db = vec![0.0; self.o];
            for n in 0..self.n {
                for (o, d) in db.iter_mut().enumerate() {
                    *d += g[(n * self.o + o) * plane_out..(n * self.o + o + 1) * plane_out].iter().sum::<f64>();
                }
            }
            db
        });
        if !need_x && !need_w {
            return (dx, dw, db);
        }
        let ranges: Vec<(usize, usize)> = (0..self.k).map(|kx| self.col_range(kx)).collect();
        for n in 0..self.n {
            for o in 0..self.o {
                let gp = &g[(n * self.o + o) * plane_out..(n * self.o + o + 1) * plane_out];
                for c in 0..self.c {
                    let in_off = (n * self.c + c) * plane_in;
                    let w_off = (o * self.c + c) * kk;
                    for ky in 0..self.k {
                        for oy in 0..self.oh {
                            let Some(iy) = self.row_input(oy, ky) else { continue };
                            let g_row = &gp[oy * self.ow..(oy + 1) * self.ow];
                            for kx in 0..self.k {
                                let (lo, hi) = ranges[kx];
                                if lo >= hi {
                                    continue;
                                }
                                let row = in_off + iy * self.w;
                                if self.stride == 1 {
                                    let start = row + lo + kx - self.pad;
                                    let len = hi - lo;
                                    if let Some(dw) = dw.as_mut() {
                                        dw[w_off + ky * self.k + kx] += dot(&g_row[lo..hi], &x[start..start + len]);
                                    }
                                    if let Some(dx) = dx.as_mut() {
                                        axpy(w[w_off + ky * self.k + kx], &g_row[lo..hi], &mut dx[start..start + len]);
                                    }
                                } else {
                                    let wv = w[w_off + ky * self.k + kx];
                                    let mut acc = 0.0;
                                    #[allow(clippy::needless_range_loop)]
                                    for ox in lo..hi {
                                        let ix = row + ox * self.stride + kx - self.pad;
                                        acc += g_row[ox] * x[ix];
                                        if let Some(dx) = dx.as_mut() {
                                            dx[ix] += wv * g_row[ox];
                                        }
                                    }
                                    if let Some(dw) = dw.as_mut() {
                                        dw[w_off + ky * self.k + kx] += acc;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        (dx, dw, db)
    }
}
