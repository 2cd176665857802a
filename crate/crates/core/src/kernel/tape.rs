//! Tape-based reverse-mode differentiation over [`Tensor2`] values.
//!
//! Every op appends a node holding its forward value plus whatever it needs
//! for the backward pass. [`Tape::backward`] walks the nodes in exact reverse
//! recording order and accumulates adjoints additively, so a parameter used
//! in several places receives the sum of its contributions.

use super::tensor::{softmax_in_place, Tensor2};
use super::KernelError;

/// Value written into masked (future) attention scores before the softmax.
/// Large enough that `exp(MASK_VALUE - max)` underflows to exactly zero.
pub const MASK_VALUE: f64 = -1e9;

/// Denominator epsilon for layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-5;

const GELU_COEFF: f64 = 0.044_715;
// sqrt(2 / pi)
const GELU_SCALE: f64 = 0.797_884_560_802_865_4;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule for ops defined outside the kernel: maps the output adjoint
/// and the input values to one adjoint per input.
pub type CustomBackward = Box<dyn Fn(&Tensor2, &[&Tensor2]) -> Vec<Tensor2>>;

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    CausalMask(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normalized: Tensor2,
        inv_std: Vec<f64>,
    },
    Gelu(Var),
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    SelectRow {
        x: Var,
        row: usize,
    },
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    Sum(Var),
    Custom {
        inputs: Vec<Var>,
        backward: CustomBackward,
    },
}

struct Node {
    value: Tensor2,
    op: Op,
}

/// Records a computation for one backward pass. Single-threaded by design of
/// the training loop; build one tape per sample or micro-batch.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    first_non_finite: Option<&'static str>,
}

/// Adjoints produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor2>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor2> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor2> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn shape_err(op: &'static str, a: &Tensor2, b: &Tensor2) -> KernelError {
    KernelError::ShapeMismatch {
        op,
        left: a.shape(),
        right: b.shape(),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor2 {
        &self.nodes[v.0].value
    }

    /// Name of the first op whose output contained NaN or Inf. Only tracked
    /// in debug builds; always `None` in release.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        self.first_non_finite
    }

    fn push(&mut self, name: &'static str, value: Tensor2, op: Op) -> Var {
        #[cfg(debug_assertions)]
        if self.first_non_finite.is_none() && !value.is_finite() {
            log::warn!("non-finite output from `{name}` at node {}", self.nodes.len());
            self.first_non_finite = Some(name);
        }
        #[cfg(not(debug_assertions))]
        let _ = name;
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor2) -> Var {
        self.push("leaf", value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, KernelError> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push("matmul", value, Op::MatMul(a, b)))
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, KernelError> {
        let value = self.value(a).matmul_nt(self.value(b))?;
        Ok(self.push("matmul_nt", value, Op::MatMulNt(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.push("transpose", value, Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, KernelError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(shape_err("add", x, y));
        }
        let mut value = x.clone();
        value.add_assign(y);
        Ok(self.push("add", value, Op::Add(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, KernelError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(shape_err("mul", x, y));
        }
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let value = Tensor2::from_vec(x.rows(), x.cols(), data)?;
        Ok(self.push("mul", value, Op::Mul(a, b)))
    }

    /// Adds a `1 × cols` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, KernelError> {
        let (x, r) = (self.value(a), self.value(row));
        if r.rows() != 1 || r.cols() != x.cols() {
            return Err(shape_err("add_row", x, r));
        }
        let mut value = x.clone();
        for i in 0..value.rows() {
            for (v, b) in value.row_mut(i).iter_mut().zip(r.data()) {
                *v += b;
            }
        }
        Ok(self.push("add_row", value, Op::AddRow(a, row)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|v| v * s);
        self.push("scale", value, Op::Scale(a, s))
    }

    /// Replaces every entry strictly above the diagonal with [`MASK_VALUE`].
    pub fn causal_mask(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        for i in 0..value.rows() {
            for v in value.row_mut(i).iter_mut().skip(i + 1) {
                *v = MASK_VALUE;
            }
        }
        self.push("causal_mask", value, Op::CausalMask(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let value = self.value(a).softmax_rows();
        self.push("softmax_rows", value, Op::SoftmaxRows(a))
    }

    /// Per-row layer normalization with `1 × cols` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var, KernelError> {
        let (xv, g, b) = (self.value(x), self.value(gain), self.value(bias));
        let cols = xv.cols();
        if g.shape() != (1, cols) || b.shape() != (1, cols) {
            return Err(shape_err("layer_norm", xv, g));
        }
        let mut normalized = xv.clone();
        let mut inv_std = Vec::with_capacity(xv.rows());
        let mut value = Tensor2::zeros(xv.rows(), cols);
        for r in 0..xv.rows() {
            let row = normalized.row_mut(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * is;
            }
            inv_std.push(is);
            let out = value.row_mut(r);
            for c in 0..cols {
                out[c] = normalized.get(r, c) * g.data()[c] + b.data()[c];
            }
        }
        Ok(self.push(
            "layer_norm",
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                inv_std,
            },
        ))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(gelu);
        self.push("gelu", value, Op::Gelu(a))
    }

    /// Gathers rows of `table` in `ids` order.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var, KernelError> {
        let t = self.value(table);
        let mut value = Tensor2::zeros(ids.len(), t.cols());
        for (i, &id) in ids.iter().enumerate() {
            if id >= t.rows() {
                return Err(KernelError::IndexOutOfRange {
                    op: "gather_rows",
                    index: id,
                    bound: t.rows(),
                });
            }
            value.row_mut(i).copy_from_slice(t.row(id));
        }
        Ok(self.push(
            "gather_rows",
            value,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, KernelError> {
        let x = self.value(a);
        if start + len > x.cols() {
            return Err(KernelError::IndexOutOfRange {
                op: "slice_cols",
                index: start + len,
                bound: x.cols(),
            });
        }
        let mut value = Tensor2::zeros(x.rows(), len);
        for r in 0..x.rows() {
            value
                .row_mut(r)
                .copy_from_slice(&x.row(r)[start..start + len]);
        }
        Ok(self.push("slice_cols", value, Op::SliceCols { x: a, start }))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, KernelError> {
        let rows = self.value(parts[0]).rows();
        let mut cols = 0;
        for &p in parts {
            let v = self.value(p);
            if v.rows() != rows {
                return Err(shape_err("concat_cols", self.value(parts[0]), v));
            }
            cols += v.cols();
        }
        let mut value = Tensor2::zeros(rows, cols);
        for r in 0..rows {
            let mut offset = 0;
            for &p in parts {
                let src = self.value(p).row(r);
                value.row_mut(r)[offset..offset + src.len()].copy_from_slice(src);
                offset += src.len();
            }
        }
        Ok(self.push("concat_cols", value, Op::ConcatCols(parts.to_vec())))
    }

    pub fn select_row(&mut self, a: Var, row: usize) -> Result<Var, KernelError> {
        let x = self.value(a);
        if row >= x.rows() {
            return Err(KernelError::IndexOutOfRange {
                op: "select_row",
                index: row,
                bound: x.rows(),
            });
        }
        let value = Tensor2::row_vector(x.row(row));
        Ok(self.push("select_row", value, Op::SelectRow { x: a, row }))
    }

    /// Inverted dropout with a caller-provided keep mask of 0/1 entries.
    pub fn dropout(&mut self, a: Var, keep: &[bool], rate: f64) -> Var {
        let x = self.value(a);
        debug_assert_eq!(keep.len(), x.len());
        let scale = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = keep.iter().map(|&k| if k { scale } else { 0.0 }).collect();
        let data = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let value = Tensor2::from_vec(x.rows(), x.cols(), data).expect("same shape");
        self.push("dropout", value, Op::Dropout { x: a, mask })
    }

    /// Sum of all entries as a `1 × 1` tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor2::row_vector(&[self.value(a).sum()]);
        self.push("sum", value, Op::Sum(a))
    }

    /// Records an op whose forward value was computed by the caller.
    pub fn custom(&mut self, name: &'static str, inputs: &[Var], value: Tensor2, backward: CustomBackward) -> Var {
        self.push(
            name,
            value,
            Op::Custom {
                inputs: inputs.to_vec(),
                backward,
            },
        )
    }

    /// Reverse sweep from a scalar (`1 × 1`) output.
    pub fn backward(&self, output: Var) -> Gradients {
        let mut grads: Vec<Option<Tensor2>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        let out_shape = self.value(output).shape();
        grads[output.0] = Some(Tensor2::filled(out_shape.0, out_shape.1, 1.0));

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn propagate(&self, node: &Node, g: &Tensor2, grads: &mut [Option<Tensor2>]) {
        let mut acc = |v: Var, delta: Tensor2| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                acc(*a, g.matmul_nt(bv).expect("shapes checked in forward"));
                acc(*b, av.matmul_tn(g).expect("shapes checked in forward"));
            }
            Op::MatMulNt(a, b) => {
                // C = A·Bᵀ: dA = dC·B, dB = dCᵀ·A
                let (av, bv) = (self.value(*a), self.value(*b));
                acc(*a, g.matmul(bv).expect("shapes checked in forward"));
                acc(*b, g.matmul_tn(av).expect("shapes checked in forward"));
            }
            Op::Transpose(a) => acc(*a, g.transpose()),
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let da = g.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
                let db = g.data().iter().zip(av.data()).map(|(x, y)| x * y).collect();
                acc(*a, Tensor2::from_vec(g.rows(), g.cols(), da).expect("same shape"));
                acc(*b, Tensor2::from_vec(g.rows(), g.cols(), db).expect("same shape"));
            }
            Op::AddRow(a, row) => {
                let mut drow = Tensor2::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (d, v) in drow.data_mut().iter_mut().zip(g.row(r)) {
                        *d += v;
                    }
                }
                acc(*a, g.clone());
                acc(*row, drow);
            }
            Op::Scale(a, s) => acc(*a, g.map(|v| v * s)),
            Op::CausalMask(a) => {
                let mut d = g.clone();
                for i in 0..d.rows() {
                    for v in d.row_mut(i).iter_mut().skip(i + 1) {
                        *v = 0.0;
                    }
                }
                acc(*a, d);
            }
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let mut d = Tensor2::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for (c, out) in d.row_mut(r).iter_mut().enumerate() {
                        *out = yr[c] * (gr[c] - dot);
                    }
                }
                acc(*a, d);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                inv_std,
            } => {
                let gv = self.value(*gain);
                let cols = g.cols();
                let n = cols as f64;
                let mut dx = Tensor2::zeros(g.rows(), cols);
                let mut dgain = Tensor2::zeros(1, cols);
                let mut dbias = Tensor2::zeros(1, cols);
                for r in 0..g.rows() {
                    let (gr, xh) = (g.row(r), normalized.row(r));
                    let mut mean_d = 0.0;
                    let mut mean_dx = 0.0;
                    for c in 0..cols {
                        let dxh = gr[c] * gv.data()[c];
                        mean_d += dxh;
                        mean_dx += dxh * xh[c];
                        dgain.data_mut()[c] += gr[c] * xh[c];
                        dbias.data_mut()[c] += gr[c];
                    }
                    mean_d /= n;
                    mean_dx /= n;
                    let out = dx.row_mut(r);
                    for c in 0..cols {
                        let dxh = gr[c] * gv.data()[c];
                        out[c] = inv_std[r] * (dxh - mean_d - xh[c] * mean_dx);
                    }
                }
                acc(*x, dx);
                acc(*gain, dgain);
                acc(*bias, dbias);
            }
            Op::Gelu(a) => {
                let x = self.value(*a);
                let data = x.data().iter().zip(g.data()).map(|(&v, &d)| d * gelu_grad(v)).collect();
                acc(*a, Tensor2::from_vec(x.rows(), x.cols(), data).expect("same shape"));
            }
            Op::Gather { table, ids } => {
                let t = self.value(*table);
                let mut d = Tensor2::zeros(t.rows(), t.cols());
                for (i, &id) in ids.iter().enumerate() {
                    for (o, v) in d.row_mut(id).iter_mut().zip(g.row(i)) {
                        *o += v;
                    }
                }
                acc(*table, d);
            }
            Op::SliceCols { x, start } => {
                let xv = self.value(*x);
                let mut d = Tensor2::zeros(xv.rows(), xv.cols());
                for r in 0..g.rows() {
                    d.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                }
                acc(*x, d);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let cols = self.value(p).cols();
                    let mut d = Tensor2::zeros(g.rows(), cols);
                    for r in 0..g.rows() {
                        d.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + cols]);
                    }
                    offset += cols;
                    acc(p, d);
                }
            }
            Op::SelectRow { x, row } => {
                let xv = self.value(*x);
                let mut d = Tensor2::zeros(xv.rows(), xv.cols());
                d.row_mut(*row).copy_from_slice(g.data());
                acc(*x, d);
            }
            Op::Dropout { x, mask } => {
                let data = g.data().iter().zip(mask).map(|(d, m)| d * m).collect();
                acc(*x, Tensor2::from_vec(g.rows(), g.cols(), data).expect("same shape"));
            }
            Op::Sum(a) => {
                let (r, c) = self.value(*a).shape();
                acc(*a, Tensor2::filled(r, c, g.data()[0]));
            }
            Op::Custom { inputs, backward } => {
                let values: Vec<&Tensor2> = inputs.iter().map(|v| self.value(*v)).collect();
                for (v, d) in inputs.iter().zip(backward(g, &values)) {
                    acc(*v, d);
                }
            }
        }
    }
}

pub fn gelu(x: f64) -> f64 {
    let inner = GELU_SCALE * (x + GELU_COEFF * x * x * x);
    0.5 * x * (1.0 + inner.tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let inner = GELU_SCALE * (x + GELU_COEFF * x * x * x);
    let t = inner.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_SCALE * (1.0 + 3.0 * GELU_COEFF * x * x)
}

/// Row softmax of a plain slice; shared with callers that work outside a tape.
pub fn softmax(values: &[f64]) -> Vec<f64> {
    let mut out = values.to_vec();
    softmax_in_place(&mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shared_leaf_accumulates_adjoints() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor2::row_vector(&[2.0, -1.0]));
        let y = tape.add(x, x).unwrap();
        let s = tape.sum(y);
        let grads = tape.backward(s);
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, 2.0]);
    }

    #[test]
    fn causal_mask_zeroes_future_probabilities() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor2::from_rows(&[vec![0.3, 5.0], vec![1.0, -2.0]]));
        let m = tape.causal_mask(x);
        let p = tape.softmax_rows(m);
        assert_eq!(tape.value(p).row(0), &[1.0, 0.0]);
        let row1 = tape.value(p).row(1);
        assert!((row1[0] + row1[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn layer_norm_constant_row_is_bias() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor2::row_vector(&[3.0, 3.0, 3.0]));
        let g = tape.leaf(Tensor2::row_vector(&[1.0, 1.0, 1.0]));
        let b = tape.leaf(Tensor2::row_vector(&[0.0, 0.0, 0.0]));
        let y = tape.layer_norm(x, g, b).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn layer_norm_unit_row_is_preserved_up_to_eps() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor2::row_vector(&[1.0, -1.0]));
        let g = tape.leaf(Tensor2::row_vector(&[1.0, 1.0]));
        let b = tape.leaf(Tensor2::row_vector(&[0.0, 0.0]));
        let y = tape.layer_norm(x, g, b).unwrap();
        let expected = 1.0 / (1.0 + LAYER_NORM_EPS).sqrt();
        assert!((tape.value(y).data()[0] - expected).abs() < 1e-15);
        assert!((tape.value(y).data()[1] + expected).abs() < 1e-15);
    }

    #[test]
    fn gelu_reference_points() {
        assert_eq!(gelu(0.0), 0.0);
        // 0.5 * (1 + tanh(sqrt(2/pi) * 1.044715))
        let expected = 0.5 * (1.0 + (GELU_SCALE * 1.044_715_f64).tanh());
        assert_eq!(gelu(1.0), expected);
        assert!((gelu(1.0) - 0.841_192).abs() < 1e-6);
    }

    #[test]
    fn gather_scatters_back_with_repeats() {
        let mut tape = Tape::new();
        let table = tape.leaf(Tensor2::from_rows(&[vec![1.0], vec![2.0], vec![3.0]]));
        let g = tape.gather_rows(table, &[2, 0, 2]).unwrap();
        let s = tape.sum(g);
        let grads = tape.backward(s);
        assert_eq!(grads.get(table).unwrap().data(), &[1.0, 0.0, 2.0]);
        assert!(tape.gather_rows(table, &[3]).is_err());
    }
}
