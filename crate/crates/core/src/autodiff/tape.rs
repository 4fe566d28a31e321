use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::{Dense, Real, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Bcast {
    Same,
    /// rhs is `[cols]`, repeated for every row
    Row,
    /// rhs is `[rows, 1]`, repeated for every column
    Col,
    Scalar,
}

impl Bcast {
    fn resolve(op: &'static str, a: &[usize], b: &[usize]) -> Result<Self, TensorError> {
        let bn: usize = b.iter().product();
        if a == b {
            Ok(Bcast::Same)
        } else if a.len() == 2 && b == [a[1]] {
            Ok(Bcast::Row)
        } else if a.len() == 2 && b == [a[0], 1] {
            Ok(Bcast::Col)
        } else if bn == 1 {
            Ok(Bcast::Scalar)
        } else {
            Err(TensorError::ShapeMismatch {
                op,
                lhs: a.to_vec(),
                rhs: b.to_vec(),
            })
        }
    }

    #[inline]
    fn index(self, i: usize, cols: usize) -> usize {
        match self {
            Bcast::Same => i,
            Bcast::Row => i % cols,
            Bcast::Col => i / cols,
            Bcast::Scalar => 0,
        }
    }
}

#[derive(Debug)]
enum Op<F> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var, Bcast),
    Mul(Var, Var, Bcast),
    Relu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<F>,
        rstd: Vec<F>,
    },
    Conv1d {
        x: Var,
        w: Var,
        b: Var,
    },
    Gather {
        table: Var,
        idx: Vec<Option<usize>>,
    },
    Dropout {
        x: Var,
        mask: Vec<F>,
    },
    Transpose(Var),
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    Scale(Var, F),
    Mse {
        pred: Var,
        target: Var,
        rows: Option<Vec<bool>>,
        denom: f64,
    },
    Sum(Var),
}

#[derive(Debug)]
struct Node<F> {
    value: Dense<F>,
    op: Op<F>,
    requires_grad: bool,
}

/// Computation tape: every executed primitive in topological order.
///
/// Values are recorded for all ops; backward rules only for ops reachable
/// from a gradient-tracked input.
#[derive(Debug)]
pub struct Tape<F: Real> {
    nodes: Vec<Node<F>>,
    training: bool,
    rng: ChaCha8Rng,
    consumed: bool,
}

/// `c = beta * c + op(a) * op(b)` on row-major slices.
#[allow(clippy::too_many_arguments)]
fn gemm<F: Real>(
    a: &[F],
    a_dims: (usize, usize),
    trans_a: bool,
    b: &[F],
    b_dims: (usize, usize),
    trans_b: bool,
    c: &mut [F],
    beta: F,
) {
    let av = ArrayView2::from_shape(a_dims, a).expect("gemm lhs shape");
    let bv = ArrayView2::from_shape(b_dims, b).expect("gemm rhs shape");
    let av = if trans_a { av.reversed_axes() } else { av };
    let bv = if trans_b { bv.reversed_axes() } else { bv };
    let mut cv = ArrayViewMut2::from_shape((av.nrows(), bv.ncols()), c).expect("gemm out shape");
    general_mat_mul(F::one(), &av, &bv, beta, &mut cv);
}

fn require_2d(op: &'static str, d: &Dense<impl Real>) -> Result<(usize, usize), TensorError> {
    if d.shape.len() == 2 {
        Ok((d.shape[0], d.shape[1]))
    } else {
        Err(TensorError::ShapeMismatch {
            op,
            lhs: d.shape.clone(),
            rhs: vec![0, 0],
        })
    }
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Tape<F> {
    /// Evaluation-mode tape: dropout is the identity.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            training: false,
            rng: ChaCha8Rng::seed_from_u64(0),
            consumed: false,
        }
    }

    /// Training-mode tape with a seeded dropout stream.
    pub fn training(dropout_seed: u64) -> Self {
        Self {
            training: true,
            rng: ChaCha8Rng::seed_from_u64(dropout_seed),
            ..Self::new()
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Dense<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Dense<F>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Dense<F>) -> Var {
        self.leaf(value, false)
    }

    fn push(&mut self, value: Dense<F>, op: Op<F>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = require_2d("matmul", av)?;
        let (k2, n) = require_2d("matmul", bv)?;
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: av.shape.clone(),
                rhs: bv.shape.clone(),
            });
        }
        let mut out = vec![F::zero(); m * n];
        gemm(&av.data, (m, k), false, &bv.data, (k, n), false, &mut out, F::zero());
        Ok(self.push(Dense { shape: vec![m, n], data: out }, Op::MatMul(a, b), &[a, b]))
    }

    fn binary(&mut self, op: &'static str, a: Var, b: Var, mul: bool) -> Result<Var, TensorError> {
        let (av, bv) = (self.value(a), self.value(b));
        let mode = Bcast::resolve(op, &av.shape, &bv.shape)?;
        let cols = av.dims2().1.max(1);
        let data = av
            .data
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let y = bv.data[mode.index(i, cols)];
                if mul {
                    x * y
                } else {
                    x + y
                }
            })
            .collect();
        let value = Dense {
            shape: av.shape.clone(),
            data,
        };
        let rec = if mul { Op::Mul(a, b, mode) } else { Op::Add(a, b, mode) };
        Ok(self.push(value, rec, &[a, b]))
    }

    /// Elementwise sum. `b` may also be a row vector `[cols]`, a column
    /// `[rows, 1]` or a single element, broadcast over `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("add", a, b, false)
    }

    /// Elementwise product with the same broadcasting rules as [`Tape::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("mul", a, b, true)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, TensorError> {
        let v = self.value(x);
        let data = v.data.iter().map(|&t| if t > F::zero() { t } else { F::zero() }).collect();
        let value = Dense {
            shape: v.shape.clone(),
            data,
        };
        Ok(self.push(value, Op::Relu(x), &[x]))
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var, TensorError> {
        let v = self.value(x);
        let (rows, cols) = v.dims2();
        let mut data = vec![F::zero(); v.data.len()];
        for r in 0..rows {
            let src = &v.data[r * cols..(r + 1) * cols];
            let max = src.iter().fold(F::neg_infinity(), |m, &t| m.max(t));
            let mut total = 0.0f64;
            let dst = &mut data[r * cols..(r + 1) * cols];
            for (d, &s) in dst.iter_mut().zip(src) {
                let e = (s - max).exp();
                *d = e;
                total += e.f64();
            }
            let inv = F::of(1.0 / total);
            dst.iter_mut().for_each(|d| *d = *d * inv);
        }
        let value = Dense {
            shape: v.shape.clone(),
            data,
        };
        Ok(self.push(value, Op::Softmax(x), &[x]))
    }

    /// Layer normalisation over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var, TensorError> {
        let v = self.value(x);
        let (rows, cols) = v.dims2();
        for p in [gamma, beta] {
            if self.value(p).shape != [cols] {
                return Err(TensorError::ShapeMismatch {
                    op: "layer_norm",
                    lhs: v.shape.clone(),
                    rhs: self.value(p).shape.clone(),
                });
            }
        }
        let (g, b) = (&self.value(gamma).data, &self.value(beta).data);
        let mut xhat = vec![F::zero(); v.data.len()];
        let mut rstd = vec![F::zero(); rows];
        let mut data = vec![F::zero(); v.data.len()];
        for r in 0..rows {
            let src = &v.data[r * cols..(r + 1) * cols];
            let mean = src.iter().map(|t| t.f64()).sum::<f64>() / cols as f64;
            let var = src.iter().map(|t| (t.f64() - mean).powi(2)).sum::<f64>() / cols as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = F::of(rs);
            for c in 0..cols {
                let h = F::of((src[c].f64() - mean) * rs);
                xhat[r * cols + c] = h;
                data[r * cols + c] = h * g[c] + b[c];
            }
        }
        let value = Dense {
            shape: v.shape.clone(),
            data,
        };
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            &[x, gamma, beta],
        ))
    }

    /// Same-padded 1-D convolution over time. `x` is `[time, in]`, `w` is
    /// `[kernel, in, out]` with an odd kernel, `b` is `[out]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var) -> Result<Var, TensorError> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let mismatch = || TensorError::ShapeMismatch {
            op: "conv1d",
            lhs: xv.shape.clone(),
            rhs: wv.shape.clone(),
        };
        let (t, cin) = require_2d("conv1d", xv)?;
        if wv.shape.len() != 3 || wv.shape[1] != cin || wv.shape[0] % 2 == 0 {
            return Err(mismatch());
        }
        let (k, cout) = (wv.shape[0], wv.shape[2]);
        if bv.shape != [cout] {
            return Err(mismatch());
        }
        let mut out: Vec<F> = (0..t * cout).map(|i| bv.data[i % cout]).collect();
        let pad = (k / 2) as isize;
        for kk in 0..k {
            let off = kk as isize - pad;
            let lo = (-off).max(0) as usize;
            let hi = (t as isize - off).min(t as isize).max(0) as usize;
            if lo >= hi {
                continue;
            }
            let rows = hi - lo;
            let src_lo = (lo as isize + off) as usize;
            gemm(
                &xv.data[src_lo * cin..(src_lo + rows) * cin],
                (rows, cin),
                false,
                &wv.data[kk * cin * cout..(kk + 1) * cin * cout],
                (cin, cout),
                false,
                &mut out[lo * cout..hi * cout],
                F::one(),
            );
        }
        Ok(self.push(
            Dense {
                shape: vec![t, cout],
                data: out,
            },
            Op::Conv1d { x, w, b },
            &[x, w, b],
        ))
    }

    /// Gathers rows of a 2-D table; `None` yields a zero row.
    pub fn gather_rows(&mut self, table: Var, idx: &[Option<usize>]) -> Result<Var, TensorError> {
        let tv = self.value(table);
        let (rows, cols) = require_2d("gather_rows", tv)?;
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            match i {
                Some(i) if i >= rows => {
                    return Err(TensorError::IndexOutOfRange {
                        op: "gather_rows",
                        index: i,
                        len: rows,
                    })
                }
                Some(i) => data.extend_from_slice(tv.row(i)),
                None => data.extend(std::iter::repeat_n(F::zero(), cols)),
            }
        }
        let value = Dense {
            shape: vec![idx.len(), cols],
            data,
        };
        Ok(self.push(
            value,
            Op::Gather {
                table,
                idx: idx.to_vec(),
            },
            &[table],
        ))
    }

    pub fn embedding(&mut self, table: Var, ids: &[u32]) -> Result<Var, TensorError> {
        let idx: Vec<Option<usize>> = ids.iter().map(|&i| Some(i as usize)).collect();
        self.gather_rows(table, &idx)
    }

    /// Inverted dropout with drop probability `p`. Identity in eval mode.
    pub fn dropout(&mut self, x: Var, p: f64) -> Result<Var, TensorError> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::InvalidProbability(p));
        }
        if !self.training || p == 0.0 {
            return Ok(x);
        }
        let scale = F::of(1.0 / (1.0 - p));
        let n = self.value(x).numel();
        let mask: Vec<F> = (0..n)
            .map(|_| if self.rng.random::<f64>() < p { F::zero() } else { scale })
            .collect();
        let v = self.value(x);
        let data = v.data.iter().zip(&mask).map(|(&a, &m)| a * m).collect();
        let value = Dense {
            shape: v.shape.clone(),
            data,
        };
        Ok(self.push(value, Op::Dropout { x, mask }, &[x]))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var, TensorError> {
        let v = self.value(x);
        let (r, c) = require_2d("transpose", v)?;
        let mut data = vec![F::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = v.data[i * c + j];
            }
        }
        Ok(self.push(
            Dense {
                shape: vec![c, r],
                data,
            },
            Op::Transpose(x),
            &[x],
        ))
    }

    /// Concatenates 2-D values along `axis` (0 = rows, 1 = columns).
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var, TensorError> {
        let first = inputs.first().ok_or(TensorError::ShapeMismatch {
            op: "concat",
            lhs: vec![],
            rhs: vec![],
        })?;
        let (r0, c0) = require_2d("concat", self.value(*first))?;
        let mut rows = 0;
        let mut cols = 0;
        for v in inputs {
            let (r, c) = require_2d("concat", self.value(*v))?;
            let ok = if axis == 0 { c == c0 } else { r == r0 };
            if !ok || axis > 1 {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: vec![r0, c0],
                    rhs: vec![r, c],
                });
            }
            rows += r;
            cols += c;
        }
        let (shape, data) = if axis == 0 {
            let mut data = Vec::with_capacity(rows * c0);
            for v in inputs {
                data.extend_from_slice(&self.value(*v).data);
            }
            (vec![rows, c0], data)
        } else {
            let mut data = Vec::with_capacity(r0 * cols);
            for i in 0..r0 {
                for v in inputs {
                    data.extend_from_slice(self.value(*v).row(i));
                }
            }
            (vec![r0, cols], data)
        };
        Ok(self.push(
            Dense { shape, data },
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            inputs,
        ))
    }

    /// Contiguous range `start..end` along `axis` of a 2-D value.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var, TensorError> {
        let v = self.value(x);
        let (r, c) = require_2d("slice", v)?;
        let limit = if axis == 0 { r } else { c };
        if axis > 1 || start > end || end > limit {
            return Err(TensorError::ShapeMismatch {
                op: "slice",
                lhs: v.shape.clone(),
                rhs: vec![start, end],
            });
        }
        let (shape, data) = if axis == 0 {
            (vec![end - start, c], v.data[start * c..end * c].to_vec())
        } else {
            let mut data = Vec::with_capacity(r * (end - start));
            for i in 0..r {
                data.extend_from_slice(&v.row(i)[start..end]);
            }
            (vec![r, end - start], data)
        };
        Ok(self.push(Dense { shape, data }, Op::Slice { x, axis, start }, &[x]))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var, TensorError> {
        let v = self.value(x);
        let s = F::of(s);
        let value = Dense {
            shape: v.shape.clone(),
            data: v.data.iter().map(|&t| t * s).collect(),
        };
        Ok(self.push(value, Op::Scale(x, s), &[x]))
    }

    /// Mean squared error over the rows where `rows` is true (all rows when
    /// `None`). Zero when no element is selected.
    pub fn mse(&mut self, pred: Var, target: Var, rows: Option<&[bool]>) -> Result<Var, TensorError> {
        let (pv, tv) = (self.value(pred), self.value(target));
        let (nr, nc) = pv.dims2();
        if pv.shape != tv.shape || rows.is_some_and(|m| m.len() != nr) {
            return Err(TensorError::ShapeMismatch {
                op: "mse",
                lhs: pv.shape.clone(),
                rhs: tv.shape.clone(),
            });
        }
        let mut sum = 0.0f64;
        let mut count = 0usize;
        for r in 0..nr {
            if rows.is_none_or(|m| m[r]) {
                for c in 0..nc {
                    let d = pv.data[r * nc + c].f64() - tv.data[r * nc + c].f64();
                    sum += d * d;
                }
                count += nc;
            }
        }
        let denom = count.max(1) as f64;
        let value = Dense::scalar(F::of(sum / denom));
        Ok(self.push(
            value,
            Op::Mse {
                pred,
                target,
                rows: rows.map(<[bool]>::to_vec),
                denom,
            },
            &[pred, target],
        ))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, TensorError> {
        let total = self.value(x).data.iter().map(|t| t.f64()).sum::<f64>();
        Ok(self.push(Dense::scalar(F::of(total)), Op::Sum(x), &[x]))
    }

    /// Reverse pass from a scalar `loss`. Allowed once per tape.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<F>, TensorError> {
        if self.consumed {
            return Err(TensorError::AlreadyBackpropagated);
        }
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(TensorError::NonScalarLoss(lv.shape.clone()));
        }
        if !self.nodes[loss.0].requires_grad {
            return Err(TensorError::EmptyTape);
        }
        self.consumed = true;
        let nodes = &self.nodes;
        let mut grads: Vec<Option<Vec<F>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![F::one()]);

        for id in (0..=loss.0).rev() {
            let node = &nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            backward_node(nodes, node, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

/// Per-value gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients<F> {
    grads: Vec<Option<Vec<F>>>,
}

impl<F: Real> Gradients<F> {
    pub fn get(&self, v: Var) -> Option<&[F]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

fn slot<'a, F: Real>(nodes: &[Node<F>], grads: &'a mut [Option<Vec<F>>], v: Var) -> Option<&'a mut Vec<F>> {
    let node = &nodes[v.0];
    if !node.requires_grad {
        return None;
    }
    Some(grads[v.0].get_or_insert_with(|| vec![F::zero(); node.value.numel()]))
}

fn reduce_broadcast<F: Real>(mode: Bcast, prod: impl Iterator<Item = F>, cols: usize, out: &mut [F]) {
    if mode == Bcast::Same {
        for (o, p) in out.iter_mut().zip(prod) {
            *o = *o + p;
        }
        return;
    }
    let mut acc = vec![0.0f64; out.len()];
    for (i, p) in prod.enumerate() {
        acc[mode.index(i, cols)] += p.f64();
    }
    for (o, a) in out.iter_mut().zip(acc) {
        *o = *o + F::of(a);
    }
}

fn backward_node<F: Real>(nodes: &[Node<F>], node: &Node<F>, g: &[F], grads: &mut [Option<Vec<F>>]) {
    let val = |v: Var| &nodes[v.0].value;
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (m, k) = val(*a).dims2();
            let n = val(*b).dims2().1;
            if let Some(ga) = slot(nodes, grads, *a) {
                gemm(g, (m, n), false, &val(*b).data, (k, n), true, ga, F::one());
            }
            if let Some(gb) = slot(nodes, grads, *b) {
                gemm(&val(*a).data, (m, k), true, g, (m, n), false, gb, F::one());
            }
        }
        Op::Add(a, b, mode) => {
            let cols = val(*a).dims2().1.max(1);
            if let Some(ga) = slot(nodes, grads, *a) {
                ga.iter_mut().zip(g).for_each(|(x, &y)| *x = *x + y);
            }
            if let Some(gb) = slot(nodes, grads, *b) {
                reduce_broadcast(*mode, g.iter().copied(), cols, gb);
            }
        }
        Op::Mul(a, b, mode) => {
            let cols = val(*a).dims2().1.max(1);
            let (av, bv) = (&val(*a).data, &val(*b).data);
            if let Some(ga) = slot(nodes, grads, *a) {
                for (i, x) in ga.iter_mut().enumerate() {
                    *x = *x + g[i] * bv[mode.index(i, cols)];
                }
            }
            if let Some(gb) = slot(nodes, grads, *b) {
                reduce_broadcast(*mode, g.iter().zip(av).map(|(&gi, &ai)| gi * ai), cols, gb);
            }
        }
        Op::Relu(x) => {
            let xv = &val(*x).data;
            if let Some(gx) = slot(nodes, grads, *x) {
                for i in 0..gx.len() {
                    if xv[i] > F::zero() {
                        gx[i] = gx[i] + g[i];
                    }
                }
            }
        }
        Op::Softmax(x) => {
            let y = &node.value;
            let (rows, cols) = y.dims2();
            if let Some(gx) = slot(nodes, grads, *x) {
                for r in 0..rows {
                    let ys = &y.data[r * cols..(r + 1) * cols];
                    let gs = &g[r * cols..(r + 1) * cols];
                    let dot = F::of(ys.iter().zip(gs).map(|(a, b)| a.f64() * b.f64()).sum::<f64>());
                    for c in 0..cols {
                        gx[r * cols + c] = gx[r * cols + c] + ys[c] * (gs[c] - dot);
                    }
                }
            }
        }
        Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            rstd,
        } => {
            let (rows, cols) = node.value.dims2();
            let gam = &val(*gamma).data;
            if let Some(gx) = slot(nodes, grads, *x) {
                for r in 0..rows {
                    let mut m1 = 0.0f64;
                    let mut m2 = 0.0f64;
                    for c in 0..cols {
                        let d = (g[r * cols + c] * gam[c]).f64();
                        m1 += d;
                        m2 += d * xhat[r * cols + c].f64();
                    }
                    m1 /= cols as f64;
                    m2 /= cols as f64;
                    let rs = rstd[r].f64();
                    for c in 0..cols {
                        let i = r * cols + c;
                        let d = (g[i] * gam[c]).f64();
                        gx[i] = gx[i] + F::of(rs * (d - m1 - xhat[i].f64() * m2));
                    }
                }
            }
            if let Some(gg) = slot(nodes, grads, *gamma) {
                reduce_broadcast(Bcast::Row, g.iter().zip(xhat).map(|(&a, &b)| a * b), cols, gg);
            }
            if let Some(gb) = slot(nodes, grads, *beta) {
                reduce_broadcast(Bcast::Row, g.iter().copied(), cols, gb);
            }
        }
        Op::Conv1d { x, w, b } => {
            let (xv, wv) = (val(*x), val(*w));
            let (t, cin) = xv.dims2();
            let (k, cout) = (wv.shape[0], wv.shape[2]);
            let pad = (k / 2) as isize;
            let ranges: Vec<(usize, usize, usize)> = (0..k)
                .filter_map(|kk| {
                    let off = kk as isize - pad;
                    let lo = (-off).max(0) as usize;
                    let hi = (t as isize - off).min(t as isize).max(0) as usize;
                    (lo < hi).then(|| (kk, lo, hi))
                })
                .collect();
            if let Some(gx) = slot(nodes, grads, *x) {
                for &(kk, lo, hi) in &ranges {
                    let src_lo = (lo as isize + kk as isize - pad) as usize;
                    let rows = hi - lo;
                    gemm(
                        &g[lo * cout..hi * cout],
                        (rows, cout),
                        false,
                        &wv.data[kk * cin * cout..(kk + 1) * cin * cout],
                        (cin, cout),
                        true,
                        &mut gx[src_lo * cin..(src_lo + rows) * cin],
                        F::one(),
                    );
                }
            }
            if let Some(gw) = slot(nodes, grads, *w) {
                for &(kk, lo, hi) in &ranges {
                    let src_lo = (lo as isize + kk as isize - pad) as usize;
                    let rows = hi - lo;
                    gemm(
                        &xv.data[src_lo * cin..(src_lo + rows) * cin],
                        (rows, cin),
                        true,
                        &g[lo * cout..hi * cout],
                        (rows, cout),
                        false,
                        &mut gw[kk * cin * cout..(kk + 1) * cin * cout],
                        F::one(),
                    );
                }
            }
            if let Some(gb) = slot(nodes, grads, *b) {
                reduce_broadcast(Bcast::Row, g.iter().copied(), cout, gb);
            }
        }
        Op::Gather { table, idx } => {
            let cols = val(*table).dims2().1;
            if let Some(gt) = slot(nodes, grads, *table) {
                for (r, i) in idx.iter().enumerate() {
                    if let Some(i) = i {
                        for c in 0..cols {
                            gt[i * cols + c] = gt[i * cols + c] + g[r * cols + c];
                        }
                    }
                }
            }
        }
        Op::Dropout { x, mask } => {
            if let Some(gx) = slot(nodes, grads, *x) {
                for i in 0..gx.len() {
                    gx[i] = gx[i] + g[i] * mask[i];
                }
            }
        }
        Op::Transpose(x) => {
            let (r, c) = val(*x).dims2();
            if let Some(gx) = slot(nodes, grads, *x) {
                for i in 0..r {
                    for j in 0..c {
                        gx[i * c + j] = gx[i * c + j] + g[j * r + i];
                    }
                }
            }
        }
        Op::Concat { inputs, axis } => {
            let (_, total_cols) = node.value.dims2();
            let mut offset = 0;
            for v in inputs {
                let (r, c) = val(*v).dims2();
                if let Some(gv) = slot(nodes, grads, *v) {
                    if *axis == 0 {
                        let src = &g[offset * c..(offset + r) * c];
                        gv.iter_mut().zip(src).for_each(|(a, &b)| *a = *a + b);
                    } else {
                        for i in 0..r {
                            let src = &g[i * total_cols + offset..i * total_cols + offset + c];
                            gv[i * c..(i + 1) * c].iter_mut().zip(src).for_each(|(a, &b)| *a = *a + b);
                        }
                    }
                }
                offset += if *axis == 0 { r } else { c };
            }
        }
        Op::Slice { x, axis, start } => {
            let (r, c) = val(*x).dims2();
            let (_, oc) = node.value.dims2();
            if let Some(gx) = slot(nodes, grads, *x) {
                if *axis == 0 {
                    gx[start * c..start * c + g.len()]
                        .iter_mut()
                        .zip(g)
                        .for_each(|(a, &b)| *a = *a + b);
                } else {
                    for i in 0..r {
                        let dst = &mut gx[i * c + start..i * c + start + oc];
                        dst.iter_mut().zip(&g[i * oc..(i + 1) * oc]).for_each(|(a, &b)| *a = *a + b);
                    }
                }
            }
        }
        Op::Scale(x, s) => {
            if let Some(gx) = slot(nodes, grads, *x) {
                gx.iter_mut().zip(g).for_each(|(a, &b)| *a = *a + b * *s);
            }
        }
        Op::Mse {
            pred,
            target,
            rows,
            denom,
        } => {
            let (pv, tv) = (val(*pred), val(*target));
            let (nr, nc) = pv.dims2();
            let coef = 2.0 * g[0].f64() / denom;
            let diff = |i: usize| {
                let r = i / nc.max(1);
                if rows.as_ref().is_none_or(|m| m[r]) {
                    F::of(coef * (pv.data[i].f64() - tv.data[i].f64()))
                } else {
                    F::zero()
                }
            };
            if let Some(gp) = slot(nodes, grads, *pred) {
                for (i, x) in gp.iter_mut().enumerate().take(nr * nc) {
                    *x = *x + diff(i);
                }
            }
            if let Some(gt) = slot(nodes, grads, *target) {
                for (i, x) in gt.iter_mut().enumerate().take(nr * nc) {
                    *x = *x - diff(i);
                }
            }
        }
        Op::Sum(x) => {
            if let Some(gx) = slot(nodes, grads, *x) {
                gx.iter_mut().for_each(|a| *a = *a + g[0]);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(shape: &[usize], v: &[f64]) -> Dense<f64> {
        Dense::from_f64(shape, v)
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut t = Tape::<f64>::new();
        let x = t.constant(d(&[2], &[0.0, 0.0]));
        let y = t.softmax(x).unwrap();
        assert_eq!(t.value(y).data, vec![0.5, 0.5]);
    }

    #[test]
    fn identity_kernel_conv_is_identity() {
        let mut t = Tape::<f64>::new();
        let x = t.constant(d(&[4, 1], &[1.0, -2.0, 3.0, 0.5]));
        let w = t.constant(d(&[3, 1, 1], &[0.0, 1.0, 0.0]));
        let b = t.constant(d(&[1], &[0.0]));
        let y = t.conv1d(x, w, b).unwrap();
        assert_eq!(t.value(y), t.value(x));
    }

    #[test]
    fn conv_zero_pads_edges() {
        let mut t = Tape::<f64>::new();
        let x = t.constant(d(&[3, 1], &[1.0, 2.0, 3.0]));
        let w = t.constant(d(&[3, 1, 1], &[1.0, 1.0, 1.0]));
        let b = t.constant(d(&[1], &[0.5]));
        let y = t.conv1d(x, w, b).unwrap();
        assert_eq!(t.value(y).data, vec![3.5, 6.5, 5.5]);
    }

    #[test]
    fn mse_of_equal_inputs_is_zero() {
        let mut t = Tape::<f32>::new();
        let a = t.constant(Dense::from_f64(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let l = t.mse(a, a, None).unwrap();
        assert_eq!(t.value(l).data, vec![0.0]);
    }

    #[test]
    fn chain_rule_scalar_example() {
        // loss = mse(w x, y), w = 1, x = 2, y = 0 => dL/dw = 2 (wx - y) x = 8
        let mut t = Tape::<f64>::new();
        let w = t.leaf(d(&[1, 1], &[1.0]), true);
        let x = t.constant(d(&[1, 1], &[2.0]));
        let y = t.constant(d(&[1, 1], &[0.0]));
        let p = t.matmul(w, x).unwrap();
        let l = t.mse(p, y, None).unwrap();
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(w).unwrap(), &[8.0]);
        assert!(g.get(x).is_none());
        assert_eq!(t.backward(l).unwrap_err(), TensorError::AlreadyBackpropagated);
    }

    #[test]
    fn backward_errors() {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(d(&[2], &[1.0, 2.0]), true);
        assert!(matches!(t.backward(x), Err(TensorError::NonScalarLoss(_))));
        let c = t.constant(d(&[], &[1.0]));
        assert_eq!(t.backward(c).unwrap_err(), TensorError::EmptyTape);
    }

    #[test]
    fn dropout_validation_and_eval_identity() {
        let mut t = Tape::<f32>::new();
        let x = t.constant(Dense::from_f64(&[3], &[1.0, 2.0, 3.0]));
        assert_eq!(t.dropout(x, 1.0).unwrap_err(), TensorError::InvalidProbability(1.0));
        assert_eq!(t.dropout(x, -0.1).unwrap_err(), TensorError::InvalidProbability(-0.1));
        let y = t.dropout(x, 0.5).unwrap();
        assert_eq!(t.value(y).data, t.value(x).data);
    }

    #[test]
    fn train_dropout_scales_kept_units() {
        let mut t = Tape::<f64>::training(7);
        let x = t.constant(Dense::from_f64(&[1000], &vec![1.0; 1000]));
        let y = t.dropout(x, 0.5).unwrap();
        let v = &t.value(y).data;
        assert!(v.iter().all(|&a| a == 0.0 || a == 2.0));
        let kept = v.iter().filter(|&&a| a > 0.0).count();
        assert!((400..600).contains(&kept), "{kept}");
    }

    #[test]
    fn shape_errors() {
        let mut t = Tape::<f64>::new();
        let a = t.constant(Dense::zeros(&[2, 3]));
        let b = t.constant(Dense::zeros(&[2, 3]));
        assert!(matches!(t.matmul(a, b), Err(TensorError::ShapeMismatch { op: "matmul", .. })));
        let c = t.constant(Dense::zeros(&[4]));
        assert!(matches!(t.add(a, c), Err(TensorError::ShapeMismatch { op: "add", .. })));
        let table = t.constant(Dense::zeros(&[3, 2]));
        assert!(matches!(
            t.embedding(table, &[3]),
            Err(TensorError::IndexOutOfRange { index: 3, .. })
        ));
    }

    #[test]
    fn broadcast_add_and_mul() {
        let mut t = Tape::<f64>::new();
        let a = t.constant(d(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let row = t.constant(d(&[2], &[10.0, 20.0]));
        let col = t.constant(d(&[2, 1], &[0.0, 1.0]));
        let y = t.add(a, row).unwrap();
        assert_eq!(t.value(y).data, vec![11.0, 22.0, 13.0, 24.0]);
        let z = t.mul(a, col).unwrap();
        assert_eq!(t.value(z).data, vec![0.0, 0.0, 3.0, 4.0]);
    }

    #[test]
    fn slicing_and_concat_invert() {
        let mut t = Tape::<f64>::new();
        let a = t.constant(d(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let l = t.slice(a, 1, 0, 1).unwrap();
        let r = t.slice(a, 1, 1, 3).unwrap();
        let c = t.concat(&[l, r], 1).unwrap();
        assert_eq!(t.value(c), t.value(a));
        let top = t.slice(a, 0, 0, 1).unwrap();
        let bottom = t.slice(a, 0, 1, 2).unwrap();
        let c = t.concat(&[top, bottom], 0).unwrap();
        assert_eq!(t.value(c), t.value(a));
        let tt = t.transpose(a).unwrap();
        assert_eq!(t.value(tt).data, vec![1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
    }
}
