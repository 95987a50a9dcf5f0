//! A small tape-based reverse-mode automatic differentiation graph.
//!
//! Every forward pass of the transformer is recorded here, inference
//! included. Training calls [`Graph::backward`] on the scalar loss node to get
//! gradients for the leaves. Only the handful of operations the model needs
//! are implemented.

use crate::tensor::{log_softmax, Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Gather { table: Var, ids: Vec<usize> },
    Add(Var, Var),
    AddRow(Var, Var),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Scale(Var, T),
    LayerNorm { x: Var, gamma: Var, beta: Var, normalized: Tensor<T>, inv_std: Vec<T> },
    Gelu(Var),
    Softmax(Var),
    LogSoftmax(Var),
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    NllMean { log_probs: Var, picks: Vec<(usize, usize)> },
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Gradients of a scalar with respect to every node of a graph.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// `None` when the node does not influence the loss.
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads[var.0].as_ref()
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<T>> {
        self.grads[var.0].take()
    }
}

#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    attention_maps: Vec<Var>,
}

const GELU_COEF: f64 = 0.044715;

fn gelu_parts<T: Real>(x: T) -> (T, T) {
    let c = T::from_f64_lossy((2.0 / std::f64::consts::PI).sqrt());
    let k = T::from_f64_lossy(GELU_COEF);
    let half = T::from_f64_lossy(0.5);
    let three = T::from_f64_lossy(3.0);
    let u = c * (x + k * x * x * x);
    let t = u.tanh();
    let value = half * x * (T::one() + t);
    let deriv = half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + three * k * x * x);
    (value, deriv)
}

/// Tanh-approximated GELU.
pub fn gelu<T: Real>(x: T) -> T {
    gelu_parts(x).0
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), attention_maps: Vec::new() }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Attention probability matrices recorded so far, in creation order.
    pub fn attention_maps(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.attention_maps.iter().map(|&v| self.value(v))
    }

    /// Rows `ids` of `table`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let cols = t.cols();
        let mut data = Vec::with_capacity(ids.len() * cols);
        for &i in ids {
            data.extend_from_slice(t.row(i));
        }
        let value = Tensor::matrix(ids.len(), cols, data);
        self.push(value, Op::Gather { table, ids: ids.to_vec() })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!((va.rows(), va.cols()), (vb.rows(), vb.cols()), "add shape mismatch");
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x + y).collect();
        let value = Tensor::matrix(va.rows(), va.cols(), data);
        self.push(value, Op::Add(a, b))
    }

    /// Adds the row vector `b` to every row of `x`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Var {
        let (vx, vb) = (self.value(x), self.value(b));
        assert_eq!(vx.cols(), vb.len(), "bias width mismatch");
        let mut value = Tensor::matrix(vx.rows(), vx.cols(), vx.data().to_vec());
        for r in 0..value.rows() {
            for (o, &bias) in value.row_mut(r).iter_mut().zip(vb.data()) {
                *o = *o + bias;
            }
        }
        self.push(value, Op::AddRow(x, b))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul_t(self.value(b));
        self.push(value, Op::MatMulT(a, b))
    }

    pub fn scale(&mut self, x: Var, k: T) -> Var {
        let value = self.value(x).scale(k);
        self.push(value, Op::Scale(x, k))
    }

    /// Row-wise layer normalization with learned `gamma` and `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Var {
        let vx = self.value(x);
        let (rows, cols) = (vx.rows(), vx.cols());
        let n = T::from_usize(cols).unwrap();
        let mut normalized = Tensor::zeros(&[rows, cols]);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = vx.row(r);
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let inv = T::one() / (var + eps).sqrt();
            for (o, &v) in normalized.row_mut(r).iter_mut().zip(row) {
                *o = (v - mean) * inv;
            }
            inv_std.push(inv);
        }
        let (g, b) = (self.value(gamma), self.value(beta));
        let mut value = normalized.clone();
        for r in 0..rows {
            for ((o, &gv), &bv) in value.row_mut(r).iter_mut().zip(g.data()).zip(b.data()) {
                *o = *o * gv + bv;
            }
        }
        self.push(value, Op::LayerNorm { x, gamma, beta, normalized, inv_std })
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(gelu);
        self.push(value, Op::Gelu(x))
    }

    /// Row-wise softmax of attention scores. With `causal`, entry `(i, j)` for
    /// `j > i` is masked to probability zero. The result is recorded as an
    /// attention map.
    pub fn attention_softmax(&mut self, scores: Var, causal: bool) -> Var {
        let vs = self.value(scores);
        let (rows, cols) = (vs.rows(), vs.cols());
        let mut value = Tensor::zeros(&[rows, cols]);
        for r in 0..rows {
            let visible = if causal { (r + 1).min(cols) } else { cols };
            let src = &vs.row(r)[..visible];
            let max = src.iter().copied().fold(T::neg_infinity(), T::max);
            let out = value.row_mut(r);
            let mut total = T::zero();
            for (o, &s) in out.iter_mut().zip(src) {
                *o = (s - max).exp();
                total = total + *o;
            }
            for o in out[..visible].iter_mut() {
                *o = *o / total;
            }
        }
        let v = self.push(value, Op::Softmax(scores));
        self.attention_maps.push(v);
        v
    }

    pub fn log_softmax_rows(&mut self, x: Var) -> Var {
        let vx = self.value(x);
        let mut data = Vec::with_capacity(vx.len());
        for r in 0..vx.rows() {
            data.extend(log_softmax(vx.row(r)));
        }
        let value = Tensor::matrix(vx.rows(), vx.cols(), data);
        self.push(value, Op::LogSoftmax(x))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let vx = self.value(x);
        let mut data = Vec::with_capacity(vx.rows() * len);
        for r in 0..vx.rows() {
            data.extend_from_slice(&vx.row(r)[start..start + len]);
        }
        let value = Tensor::matrix(vx.rows(), len, data);
        self.push(value, Op::SliceCols { x, start })
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let value = Tensor::matrix(rows, total, data);
        self.push(value, Op::ConcatCols(parts.to_vec()))
    }

    /// Mean of `-log_probs[row, col]` over `picks`, as a `1 × 1` tensor.
    pub fn nll_mean(&mut self, log_probs: Var, picks: &[(usize, usize)]) -> Var {
        assert!(!picks.is_empty(), "nll_mean needs at least one target");
        let lp = self.value(log_probs);
        let total: T = picks.iter().map(|&(r, c)| -lp.get(r, c)).sum();
        let value = Tensor::matrix(1, 1, vec![total / T::from_usize(picks.len()).unwrap()]);
        self.push(value, Op::NllMean { log_probs, picks: picks.to_vec() })
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, output: Var) -> Gradients<T> {
        assert_eq!(self.value(output).len(), 1, "backward needs a scalar output");
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        let out = self.value(output);
        grads[output.0] = Some(Tensor::from_vec(out.dims().to_vec(), vec![T::one()]));

        for idx in (0..=output.0).rev() {
            let Some(grad) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(grad);
                    continue;
                }
                Op::Gather { table, ids } => {
                    let t = self.value(*table);
                    let mut g = Tensor::zeros(&[t.rows(), t.cols()]);
                    for (r, &i) in ids.iter().enumerate() {
                        for (o, &d) in g.row_mut(i).iter_mut().zip(grad.row(r)) {
                            *o = *o + d;
                        }
                    }
                    accumulate(&mut grads, *table, g);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, grad.clone());
                    accumulate(&mut grads, *b, grad);
                }
                Op::AddRow(x, b) => {
                    let mut gb = vec![T::zero(); grad.cols()];
                    for r in 0..grad.rows() {
                        for (o, &d) in gb.iter_mut().zip(grad.row(r)) {
                            *o = *o + d;
                        }
                    }
                    accumulate(&mut grads, *b, Tensor::matrix(1, gb.len(), gb));
                    accumulate(&mut grads, *x, grad);
                }
                Op::MatMul(a, b) => {
                    let ga = grad.matmul_t(self.value(*b));
                    let gb = self.value(*a).t_matmul(&grad);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::MatMulT(a, b) => {
                    // out = a bᵀ: da = g b, db = gᵀ a
                    let ga = grad.matmul(self.value(*b));
                    let gb = grad.t_matmul(self.value(*a));
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Scale(x, k) => {
                    accumulate(&mut grads, *x, grad.scale(*k));
                }
                Op::LayerNorm { x, gamma, beta, normalized, inv_std } => {
                    let g = self.value(*gamma);
                    let (rows, cols) = (grad.rows(), grad.cols());
                    let n = T::from_usize(cols).unwrap();
                    let mut dgamma = vec![T::zero(); cols];
                    let mut dbeta = vec![T::zero(); cols];
                    let mut dx = Tensor::zeros(&[rows, cols]);
                    for (r, &inv) in inv_std.iter().enumerate() {
                        let dy = grad.row(r);
                        let xhat = normalized.row(r);
                        let mut sum_d = T::zero();
                        let mut sum_dx = T::zero();
                        let dxhat: Vec<T> = dy.iter().zip(g.data()).map(|(&d, &gv)| d * gv).collect();
                        for c in 0..cols {
                            dgamma[c] = dgamma[c] + dy[c] * xhat[c];
                            dbeta[c] = dbeta[c] + dy[c];
                            sum_d = sum_d + dxhat[c];
                            sum_dx = sum_dx + dxhat[c] * xhat[c];
                        }
                        let scale = inv / n;
                        for (c, o) in dx.row_mut(r).iter_mut().enumerate() {
                            *o = scale * (n * dxhat[c] - sum_d - xhat[c] * sum_dx);
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *gamma, Tensor::matrix(1, cols, dgamma));
                    accumulate(&mut grads, *beta, Tensor::matrix(1, cols, dbeta));
                }
                Op::Gelu(x) => {
                    let vx = self.value(*x);
                    let data =
                        vx.data().iter().zip(grad.data()).map(|(&v, &d)| d * gelu_parts(v).1).collect();
                    accumulate(&mut grads, *x, Tensor::matrix(vx.rows(), vx.cols(), data));
                }
                Op::Softmax(x) => {
                    let p = &node.value;
                    let mut dx = Tensor::zeros(&[p.rows(), p.cols()]);
                    for r in 0..p.rows() {
                        let (pr, gr) = (p.row(r), grad.row(r));
                        let inner: T = pr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        for (c, o) in dx.row_mut(r).iter_mut().enumerate() {
                            *o = pr[c] * (gr[c] - inner);
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::LogSoftmax(x) => {
                    let y = &node.value;
                    let mut dx = Tensor::zeros(&[y.rows(), y.cols()]);
                    for r in 0..y.rows() {
                        let gr = grad.row(r);
                        let total: T = gr.iter().copied().sum();
                        for (c, o) in dx.row_mut(r).iter_mut().enumerate() {
                            *o = gr[c] - y.get(r, c).exp() * total;
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::SliceCols { x, start } => {
                    let vx = self.value(*x);
                    let mut dx = Tensor::zeros(&[vx.rows(), vx.cols()]);
                    let len = grad.cols();
                    for r in 0..vx.rows() {
                        dx.row_mut(r)[*start..*start + len].copy_from_slice(grad.row(r));
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        let mut dp = Tensor::zeros(&[grad.rows(), w]);
                        for r in 0..grad.rows() {
                            dp.row_mut(r).copy_from_slice(&grad.row(r)[offset..offset + w]);
                        }
                        accumulate(&mut grads, p, dp);
                        offset += w;
                    }
                }
                Op::NllMean { log_probs, picks } => {
                    let lp = self.value(*log_probs);
                    let mut dx = Tensor::zeros(&[lp.rows(), lp.cols()]);
                    let each = -grad.data()[0] / T::from_usize(picks.len()).unwrap();
                    for &(r, c) in picks {
                        let cur = dx.get(r, c);
                        dx.set(r, c, cur + each);
                    }
                    accumulate(&mut grads, *log_probs, dx);
                }
            }
        }
        // Only leaves keep their gradient; interior entries were consumed.
        Gradients { grads }
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Tensor<T>>], var: Var, g: Tensor<T>) {
    match &mut grads[var.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}
