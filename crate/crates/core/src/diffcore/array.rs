use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Dense row-major `f64` array.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Array {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn shape_str(shapes: &[&[usize]]) -> String {
    shapes
        .iter()
        .map(|s| format!("{s:?}"))
        .collect::<Vec<_>>()
        .join(" and ")
}

fn shape_err<T>(op: &'static str, shapes: &[&[usize]]) -> Result<T> {
    Err(Error::Shape {
        op,
        shapes: shape_str(shapes),
    })
}

impl Array {
    /// Builds an array, rejecting length mismatches and non-finite entries.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return invalid(format!(
                "shape {shape:?} holds {len} values but {} were given",
                data.len()
            ));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("array input at index {pos}")));
        }
        Ok(Self { shape, data })
    }

    /// Internal constructor for results of primitives; skips validation.
    pub(crate) fn raw(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn scalar(v: f64) -> Self {
        Self::raw(vec![], vec![v])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        Self::raw(shape.to_vec(), vec![v; shape.iter().product()])
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    /// Stacks equal-length rows into an `n×d` matrix.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return invalid("ragged rows");
        }
        Self::new(vec![rows.len(), d], rows.concat())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
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

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    pub fn cols(&self) -> usize {
        if self.shape.len() >= 2 {
            self.shape[1..].iter().product()
        } else {
            1
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    /// Value of a shape-`[]` (or single element) array.
    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Gathers rows by index into a new matrix.
    pub fn select_rows(&self, idx: &[usize]) -> Array {
        let c = self.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        let mut shape = self.shape.clone();
        shape[0] = idx.len();
        Array::raw(shape, data)
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Array> {
        if shape.iter().product::<usize>() != self.len() {
            return shape_err("reshape", &[&self.shape, &shape]);
        }
        Ok(Array::raw(shape, self.data.clone()))
    }

    /// Column means of an `n×d` matrix.
    pub fn column_means(&self) -> Vec<f64> {
        let (n, c) = (self.rows(), self.cols());
        let mut out = vec![0.0; c];
        for i in 0..n {
            for (o, v) in out.iter_mut().zip(self.row(i)) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= n as f64);
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Array {
        Array::raw(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }
}

fn same_shape(op: &'static str, a: &Array, b: &Array) -> Result<()> {
    if a.shape != b.shape {
        return shape_err(op, &[&a.shape, &b.shape]);
    }
    Ok(())
}

pub(crate) fn zip(
    op: &'static str,
    a: &Array,
    b: &Array,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Array> {
    same_shape(op, a, b)?;
    Ok(Array::raw(
        a.shape.clone(),
        a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
    ))
}

pub fn matmul(a: &Array, b: &Array) -> Result<Array> {
    if a.shape.len() != 2 || b.shape.len() != 2 || a.shape[1] != b.shape[0] {
        return shape_err("matmul", &[&a.shape, &b.shape]);
    }
    let (n, k, m) = (a.shape[0], a.shape[1], b.shape[1]);
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let orow = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a.data[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b.data[p * m..(p + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Ok(Array::raw(vec![n, m], out))
}

pub fn transpose(a: &Array) -> Result<Array> {
    if a.shape.len() != 2 {
        return shape_err("transpose", &[&a.shape]);
    }
    let (n, m) = (a.shape[0], a.shape[1]);
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            out[j * n + i] = a.data[i * m + j];
        }
    }
    Ok(Array::raw(vec![m, n], out))
}

/// Per-output-dimension strides into `from`, zero where `from` is broadcast.
fn broadcast_strides(from: &[usize], to: &[usize]) -> Option<Vec<usize>> {
    if from.len() > to.len() {
        return None;
    }
    let offset = to.len() - from.len();
    let mut strides = vec![0; to.len()];
    let mut stride = 1;
    for i in (0..from.len()).rev() {
        let (f, t) = (from[i], to[offset + i]);
        if f == t {
            strides[offset + i] = stride;
        } else if f != 1 {
            return None;
        }
        stride *= f;
    }
    Some(strides)
}

fn for_each_index(shape: &[usize], strides: &[usize], mut f: impl FnMut(usize, usize)) {
    let total: usize = shape.iter().product();
    let mut idx = vec![0usize; shape.len()];
    let mut src = 0usize;
    for flat in 0..total {
        f(flat, src);
        for d in (0..shape.len()).rev() {
            idx[d] += 1;
            src += strides[d];
            if idx[d] < shape[d] {
                break;
            }
            src -= strides[d] * idx[d];
            idx[d] = 0;
        }
    }
}

/// Right-aligned broadcast of `a` to `shape`.
pub fn broadcast_to(a: &Array, shape: &[usize]) -> Result<Array> {
    let Some(strides) = broadcast_strides(&a.shape, shape) else {
        return shape_err("broadcast", &[&a.shape, shape]);
    };
    let mut out = vec![0.0; shape.iter().product()];
    for_each_index(shape, &strides, |flat, src| out[flat] = a.data[src]);
    Ok(Array::raw(shape.to_vec(), out))
}

/// Sums `a` down to `shape`, the adjoint of [`broadcast_to`].
pub fn sum_to(a: &Array, shape: &[usize]) -> Result<Array> {
    let Some(strides) = broadcast_strides(shape, &a.shape) else {
        return shape_err("sum", &[&a.shape, shape]);
    };
    let mut out = vec![0.0; shape.iter().product()];
    for_each_index(&a.shape, &strides, |flat, dst| out[dst] += a.data[flat]);
    Ok(Array::raw(shape.to_vec(), out))
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub fn concat(parts: &[&Array], axis: usize) -> Result<Array> {
    let Some(first) = parts.first() else {
        return invalid("concat of zero arrays");
    };
    let shapes: Vec<&[usize]> = parts.iter().map(|p| p.shape.as_slice()).collect();
    let compatible = parts.iter().all(|p| {
        p.shape.len() == first.shape.len()
            && axis < p.shape.len()
            && p.shape
                .iter()
                .zip(&first.shape)
                .enumerate()
                .all(|(i, (x, y))| i == axis || x == y)
    });
    if !compatible {
        return shape_err("concat", &shapes);
    }
    let mut shape = first.shape.clone();
    shape[axis] = parts.iter().map(|p| p.shape[axis]).sum();
    let (outer, _, inner) = split_axis(&first.shape, axis);
    let mut out = Vec::with_capacity(shape.iter().product());
    for o in 0..outer {
        for p in parts {
            let chunk = p.shape[axis] * inner;
            out.extend_from_slice(&p.data[o * chunk..(o + 1) * chunk]);
        }
    }
    Ok(Array::raw(shape, out))
}

pub fn slice(a: &Array, axis: usize, start: usize, end: usize) -> Result<Array> {
    if axis >= a.shape.len() || start > end || end > a.shape[axis] {
        return Err(Error::Shape {
            op: "slice",
            shapes: format!("{:?} axis {axis} range {start}..{end}", a.shape),
        });
    }
    let (outer, len, inner) = split_axis(&a.shape, axis);
    let mut shape = a.shape.clone();
    shape[axis] = end - start;
    let mut out = Vec::with_capacity(outer * (end - start) * inner);
    for o in 0..outer {
        let base = o * len * inner;
        out.extend_from_slice(&a.data[base + start * inner..base + end * inner]);
    }
    Ok(Array::raw(shape, out))
}

/// Zero-pads along `axis`, the adjoint of [`slice`].
pub fn pad(a: &Array, axis: usize, before: usize, after: usize) -> Result<Array> {
    if axis >= a.shape.len() {
        return shape_err("pad", &[&a.shape]);
    }
    let (outer, len, inner) = split_axis(&a.shape, axis);
    let mut shape = a.shape.clone();
    shape[axis] = before + len + after;
    let mut out = Vec::with_capacity(shape.iter().product());
    for o in 0..outer {
        out.extend(std::iter::repeat_n(0.0, before * inner));
        out.extend_from_slice(&a.data[o * len * inner..(o + 1) * len * inner]);
        out.extend(std::iter::repeat_n(0.0, after * inner));
    }
    Ok(Array::raw(shape, out))
}
