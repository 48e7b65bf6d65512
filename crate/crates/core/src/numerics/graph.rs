//! Reverse-mode differentiation over a recorded operation list.
//!
//! A [`Graph`] is built fresh for every forward pass. Each op appends a node
//! holding its output value and whatever it needs for the backward sweep.
//! [`Graph::backward`] walks the nodes in reverse and returns the gradient of
//! a scalar output with respect to every node that requires one.
//!
//! Shape mismatches inside the graph are programming errors and panic; data
//! dependent failures (a zero-norm row in [`Graph::l2_normalize_rows`]) are
//! reported through `Result`.

use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use super::ops::{gelu, gelu_grad, moments};
use super::{NumericsError, Real, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        trans_b: bool,
    },
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Attention {
        qkv: Var,
        seq_len: usize,
        heads: usize,
        probs: Vec<T>,
    },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    Gather {
        src: Var,
        index: Vec<usize>,
    },
    Mean(Var),
    Sum(Var),
    L2NormalizeRows {
        x: Var,
        norms: Vec<T>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adds the gradient of `v` (if any) into `acc`.
    pub fn accumulate(&self, v: Var, acc: &mut [T]) {
        if let Some(g) = self.get(v) {
            assert_eq!(g.len(), acc.len(), "gradient accumulator size mismatch");
            for (a, &x) in acc.iter_mut().zip(g) {
                *a += x;
            }
        }
    }
}

fn slot<T: Real>(grads: &mut [Option<Vec<T>>], v: Var, len: usize) -> &mut Vec<T> {
    grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
}

fn rows_cols<T: Real>(t: &Tensor<T>) -> (usize, usize) {
    (t.rows(), t.cols())
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Leaf that does not receive a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf that receives a gradient.
    pub fn variable(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Value of a single-element node.
    pub fn scalar(&self, v: Var) -> T {
        let t = &self.nodes[v.0].value;
        assert_eq!(t.len(), 1, "scalar() on a non-scalar node");
        t.data()[0]
    }

    /// `a @ b` for 2-D operands.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.matmul_impl(a, b, false)
    }

    /// `a @ b^T` for 2-D operands.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Var {
        let (m, k) = rows_cols(self.value(a));
        let (br, bc) = rows_cols(self.value(b));
        let (k2, n) = if trans_b { (bc, br) } else { (br, bc) };
        assert_eq!(k, k2, "matmul inner extents differ: {k} vs {k2}");
        let (rsb, csb) = if trans_b { (1, bc as isize) } else { (bc as isize, 1) };
        let mut out = vec![T::zero(); m * n];
        T::gemm(
            m,
            k,
            n,
            T::one(),
            self.value(a).data(),
            k as isize,
            1,
            self.value(b).data(),
            rsb,
            csb,
            T::zero(),
            &mut out,
            n as isize,
            1,
        );
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::matrix(m, n, out), Op::MatMul { a, b, trans_b }, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "add shape mismatch");
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x + y).collect();
        let value = Tensor::new(va.shape().to_vec(), data).expect("shape preserved");
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Add(a, b), rg)
    }

    /// Adds the vector `row` to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let va = self.value(a);
        let vr = self.value(row).data();
        let c = va.cols();
        assert_eq!(c, vr.len(), "add_row width mismatch");
        let mut data = va.data().to_vec();
        for chunk in data.chunks_mut(c) {
            for (x, &r) in chunk.iter_mut().zip(vr) {
                *x += r;
            }
        }
        let value = Tensor::new(va.shape().to_vec(), data).expect("shape preserved");
        let rg = self.rg(a) || self.rg(row);
        self.push(value, Op::AddRow(a, row), rg)
    }

    /// `x @ weight + bias`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Var {
        let y = self.matmul(x, weight);
        self.add_row(y, bias)
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let value = self.value(a).map(|x| x * c);
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, c), rg)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(gelu);
        let rg = self.rg(a);
        self.push(value, Op::Gelu(a), rg)
    }

    /// Row-wise layer normalization with population variance.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Var {
        let vx = self.value(x);
        let (n, d) = rows_cols(vx);
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        assert!(g.len() == d && b.len() == d, "layer_norm parameter width mismatch");
        let mut out = vec![T::zero(); n * d];
        let mut xhat = vec![T::zero(); n * d];
        let mut rstd = vec![T::zero(); n];
        for r in 0..n {
            let row = vx.row(r);
            let (mean, rs) = moments(row, eps);
            rstd[r] = rs;
            for c in 0..d {
                let h = (row[c] - mean) * rs;
                xhat[r * d + c] = h;
                out[r * d + c] = h * g[c] + b[c];
            }
        }
        let value = Tensor::new(vx.shape().to_vec(), out).expect("shape preserved");
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            rg,
        )
    }

    /// Multi-head scaled dot-product self-attention over consecutive groups of
    /// `seq_len` rows. `qkv` is `[groups*seq_len, 3*d]` with query, key and
    /// value blocks side by side; the output is `[groups*seq_len, d]`.
    ///
    /// Reductions over keys run in a canonical order (ascending score, then
    /// value bits), so the result for a query is bit-identical under any
    /// permutation of the other rows of its group.
    pub fn attention(&mut self, qkv: Var, seq_len: usize, heads: usize) -> Var {
        let v = self.value(qkv);
        let (rows, cols) = rows_cols(v);
        assert!(cols % 3 == 0, "attention input width must be 3*d");
        let d = cols / 3;
        assert!(heads > 0 && d % heads == 0, "heads must divide the model width");
        assert!(seq_len > 0 && rows % seq_len == 0, "rows must be a multiple of seq_len");
        let dk = d / heads;
        let groups = rows / seq_len;
        let s = seq_len;
        let scale = T::one() / T::lit(dk as f64).sqrt();
        let src = v.data();
        let mut out = vec![T::zero(); rows * d];
        let mut probs = vec![T::zero(); groups * heads * s * s];
        let mut scores = vec![T::zero(); s];
        let mut order: Vec<usize> = (0..s).collect();
        for grp in 0..groups {
            for h in 0..heads {
                let qoff = h * dk;
                let koff = d + h * dk;
                let voff = 2 * d + h * dk;
                let val = |j: usize| &src[(grp * s + j) * cols + voff..][..dk];
                for i in 0..s {
                    let q = &src[(grp * s + i) * cols + qoff..][..dk];
                    for j in 0..s {
                        let k = &src[(grp * s + j) * cols + koff..][..dk];
                        scores[j] = super::ops::dot(q, k) * scale;
                    }
                    for (idx, o) in order.iter_mut().enumerate() {
                        *o = idx;
                    }
                    order.sort_by(|&x, &y| {
                        scores[x].order_key().cmp(&scores[y].order_key()).then_with(|| {
                            val(x)
                                .iter()
                                .zip(val(y))
                                .map(|(a, b)| a.order_key().cmp(&b.order_key()))
                                .find(|o| *o != Ordering::Equal)
                                .unwrap_or(Ordering::Equal)
                        })
                    });
                    let max = scores.iter().copied().fold(T::neg_infinity(), T::max);
                    let p = &mut probs[((grp * heads + h) * s + i) * s..][..s];
                    let mut sum = T::zero();
                    for &j in &order {
                        p[j] = (scores[j] - max).exp();
                        sum += p[j];
                    }
                    for pj in p.iter_mut() {
                        *pj /= sum;
                    }
                    let o = &mut out[(grp * s + i) * d + qoff..][..dk];
                    for &j in &order {
                        let pj = p[j];
                        for (oc, &vc) in o.iter_mut().zip(val(j)) {
                            *oc += pj * vc;
                        }
                    }
                }
            }
        }
        let rg = self.rg(qkv);
        self.push(
            Tensor::matrix(rows, d, out),
            Op::Attention {
                qkv,
                seq_len,
                heads,
                probs,
            },
            rg,
        )
    }

    /// Stacks 2-D inputs of equal width vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows of nothing");
        let c = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.cols(), c, "concat_rows width mismatch");
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(Tensor::matrix(rows, c, data), Op::ConcatRows(parts.to_vec()), rg)
    }

    /// Joins 2-D inputs with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let rows = self.value(parts[0]).rows();
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                let v = self.value(p);
                assert_eq!(v.rows(), rows, "concat_cols row mismatch");
                data.extend_from_slice(v.row(r));
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(Tensor::matrix(rows, total, data), Op::ConcatCols(parts.to_vec()), rg)
    }

    /// Row lookup: output row `r` is row `index[r]` of `src`.
    pub fn gather(&mut self, src: Var, index: &[usize]) -> Var {
        let v = self.value(src);
        let (n, c) = rows_cols(v);
        let mut data = Vec::with_capacity(index.len() * c);
        for &i in index {
            assert!(i < n, "gather index {i} out of range for {n} rows");
            data.extend_from_slice(v.row(i));
        }
        let rg = self.rg(src);
        self.push(
            Tensor::matrix(index.len(), c, data),
            Op::Gather {
                src,
                index: index.to_vec(),
            },
            rg,
        )
    }

    /// Views all `len` entries of `a` as a single `[1, len]` row.
    pub fn gather_flat(&mut self, a: Var, len: usize) -> Var {
        let value = self.value(a).clone().reshape(&[1, len]).expect("length preserved");
        let rg = self.rg(a);
        self.push(value, Op::ConcatRows(alloc::vec![a]), rg)
    }

    /// Mean of all entries, as a one-element tensor.
    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let m = v.data().iter().copied().sum::<T>() / T::lit(v.len() as f64);
        let rg = self.rg(a);
        self.push(Tensor::scalar(m), Op::Mean(a), rg)
    }

    /// Sum of all entries, as a one-element tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum::<T>();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    /// Divides every row by its L2 norm.
    pub fn l2_normalize_rows(&mut self, x: Var) -> Result<Var, NumericsError> {
        let v = self.value(x);
        let (n, c) = rows_cols(v);
        let mut out = Vec::with_capacity(n * c);
        let mut norms = Vec::with_capacity(n);
        for r in 0..n {
            let row = v.row(r);
            let nr = super::ops::norm(row);
            if nr <= T::zero() || !nr.is_finite() {
                return Err(NumericsError::ZeroNorm);
            }
            norms.push(nr);
            out.extend(row.iter().map(|&a| a / nr));
        }
        let value = Tensor::new(v.shape().to_vec(), out).expect("shape preserved");
        let rg = self.rg(x);
        Ok(self.push(value, Op::L2NormalizeRows { x, norms }, rg))
    }

    /// Sum over rows of `logsumexp(row) - row[target]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Var {
        let v = self.value(logits);
        let (n, c) = rows_cols(v);
        assert_eq!(targets.len(), n, "one target per row");
        let mut probs = Vec::with_capacity(n * c);
        let mut total = T::zero();
        for (r, &t) in targets.iter().enumerate() {
            assert!(t < c, "target {t} out of range for {c} columns");
            let row = v.row(r);
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let start = probs.len();
            let mut sum = T::zero();
            for &z in row {
                let e = (z - max).exp();
                sum += e;
                probs.push(e);
            }
            for p in &mut probs[start..] {
                *p /= sum;
            }
            total += max + sum.ln() - row[t];
        }
        let rg = self.rg(logits);
        self.push(
            Tensor::scalar(total),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            rg,
        )
    }

    /// Gradients of the scalar `output` with respect to all nodes that require one.
    pub fn backward(&self, output: Var) -> Gradients<T> {
        assert_eq!(self.value(output).len(), 1, "backward from a non-scalar node");
        let mut grads: Vec<Option<Vec<T>>> = Vec::new();
        grads.resize_with(self.nodes.len(), || None);
        if !self.rg(output) {
            return Gradients { grads };
        }
        grads[output.0] = Some(vec![T::one()]);
        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn backprop_node(&self, idx: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[idx];
        let rg = |v: Var| self.nodes[v.0].requires_grad;
        macro_rules! acc {
            ($v:expr) => {
                slot(grads, $v, self.nodes[$v.0].value.len())
            };
        }
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, trans_b } => {
                let (a, b) = (*a, *b);
                let va = &self.nodes[a.0].value;
                let vb = &self.nodes[b.0].value;
                let (m, k) = rows_cols(va);
                let (br, bc) = rows_cols(vb);
                let n = if *trans_b { br } else { bc };
                if rg(a) {
                    let da = acc!(a);
                    // dA = dC @ B^T  (or dC @ B when B was used transposed)
                    let (rsb, csb) = if *trans_b { (bc as isize, 1) } else { (1, bc as isize) };
                    T::gemm(
                        m,
                        n,
                        k,
                        T::one(),
                        g,
                        n as isize,
                        1,
                        vb.data(),
                        rsb,
                        csb,
                        T::one(),
                        da,
                        k as isize,
                        1,
                    );
                }
                if rg(b) {
                    let db = acc!(b);
                    if *trans_b {
                        // dB[n,k] = dC^T @ A
                        T::gemm(
                            n,
                            m,
                            k,
                            T::one(),
                            g,
                            1,
                            n as isize,
                            va.data(),
                            k as isize,
                            1,
                            T::one(),
                            db,
                            k as isize,
                            1,
                        );
                    } else {
                        // dB[k,n] = A^T @ dC
                        T::gemm(
                            k,
                            m,
                            n,
                            T::one(),
                            va.data(),
                            1,
                            k as isize,
                            g,
                            n as isize,
                            1,
                            T::one(),
                            db,
                            n as isize,
                            1,
                        );
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if rg(v) {
                        let d = acc!(v);
                        for (x, &y) in d.iter_mut().zip(g) {
                            *x += y;
                        }
                    }
                }
            }
            Op::AddRow(a, row) => {
                if rg(*a) {
                    let d = acc!(*a);
                    for (x, &y) in d.iter_mut().zip(g) {
                        *x += y;
                    }
                }
                if rg(*row) {
                    let d = acc!(*row);
                    let c = d.len();
                    for chunk in g.chunks(c) {
                        for (x, &y) in d.iter_mut().zip(chunk) {
                            *x += y;
                        }
                    }
                }
            }
            Op::Scale(a, c) => {
                if rg(*a) {
                    let d = acc!(*a);
                    for (x, &y) in d.iter_mut().zip(g) {
                        *x += y * *c;
                    }
                }
            }
            Op::Gelu(a) => {
                if rg(*a) {
                    let xs = self.nodes[a.0].value.data();
                    let d = acc!(*a);
                    for ((x, &y), &xi) in d.iter_mut().zip(g).zip(xs) {
                        *x += y * gelu_grad(xi);
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let gv = self.nodes[gain.0].value.data();
                let dcols = gv.len();
                if rg(*x) {
                    let dx = acc!(*x);
                    let inv_d = T::one() / T::lit(dcols as f64);
                    let mut dxhat = vec![T::zero(); dcols];
                    for (r, &rs) in rstd.iter().enumerate() {
                        let gr = &g[r * dcols..][..dcols];
                        let hr = &xhat[r * dcols..][..dcols];
                        let mut m1 = T::zero();
                        let mut m2 = T::zero();
                        for c in 0..dcols {
                            dxhat[c] = gr[c] * gv[c];
                            m1 += dxhat[c];
                            m2 += dxhat[c] * hr[c];
                        }
                        m1 *= inv_d;
                        m2 *= inv_d;
                        let out = &mut dx[r * dcols..][..dcols];
                        for c in 0..dcols {
                            out[c] += rs * (dxhat[c] - m1 - hr[c] * m2);
                        }
                    }
                }
                if rg(*gain) {
                    let dg = acc!(*gain);
                    for (gr, hr) in g.chunks(dcols).zip(xhat.chunks(dcols)) {
                        for c in 0..dcols {
                            dg[c] += gr[c] * hr[c];
                        }
                    }
                }
                if rg(*bias) {
                    let db = acc!(*bias);
                    for gr in g.chunks(dcols) {
                        for c in 0..dcols {
                            db[c] += gr[c];
                        }
                    }
                }
            }
            Op::Attention {
                qkv,
                seq_len,
                heads,
                probs,
            } => {
                if !rg(*qkv) {
                    return;
                }
                let src = self.nodes[qkv.0].value.data();
                let cols = self.nodes[qkv.0].value.cols();
                let d = cols / 3;
                let s = *seq_len;
                let h_count = *heads;
                let dk = d / h_count;
                let groups = self.nodes[qkv.0].value.rows() / s;
                let scale = T::one() / T::lit(dk as f64).sqrt();
                let dsrc = acc!(*qkv);
                let mut dp = vec![T::zero(); s];
                for grp in 0..groups {
                    for h in 0..h_count {
                        let qoff = h * dk;
                        let koff = d + h * dk;
                        let voff = 2 * d + h * dk;
                        for i in 0..s {
                            let p = &probs[((grp * h_count + h) * s + i) * s..][..s];
                            let go = &g[(grp * s + i) * d + qoff..][..dk];
                            let mut inner = T::zero();
                            for j in 0..s {
                                let vrow = (grp * s + j) * cols + voff;
                                dp[j] = super::ops::dot(go, &src[vrow..vrow + dk]);
                                inner += p[j] * dp[j];
                                let dv = &mut dsrc[vrow..vrow + dk];
                                for (x, &y) in dv.iter_mut().zip(go) {
                                    *x += p[j] * y;
                                }
                            }
                            let qrow = (grp * s + i) * cols + qoff;
                            for j in 0..s {
                                let ds = p[j] * (dp[j] - inner) * scale;
                                if ds == T::zero() {
                                    continue;
                                }
                                let krow = (grp * s + j) * cols + koff;
                                for c in 0..dk {
                                    let kc = src[krow + c];
                                    let qc = src[qrow + c];
                                    dsrc[qrow + c] += ds * kc;
                                    dsrc[krow + c] += ds * qc;
                                }
                            }
                        }
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = self.nodes[p.0].value.len();
                    if rg(p) {
                        let d = acc!(p);
                        for (x, &y) in d.iter_mut().zip(&g[off..off + len]) {
                            *x += y;
                        }
                    }
                    off += len;
                }
            }
            Op::ConcatCols(parts) => {
                let total: usize = parts.iter().map(|p| self.nodes[p.0].value.cols()).sum();
                let mut col = 0;
                for &p in parts {
                    let w = self.nodes[p.0].value.cols();
                    if rg(p) {
                        let d = acc!(p);
                        for (r, out) in d.chunks_mut(w).enumerate() {
                            for (x, &y) in out.iter_mut().zip(&g[r * total + col..][..w]) {
                                *x += y;
                            }
                        }
                    }
                    col += w;
                }
            }
            Op::Gather { src, index } => {
                if rg(*src) {
                    let c = self.nodes[src.0].value.cols();
                    let d = acc!(*src);
                    for (r, &i) in index.iter().enumerate() {
                        for (x, &y) in d[i * c..(i + 1) * c].iter_mut().zip(&g[r * c..(r + 1) * c]) {
                            *x += y;
                        }
                    }
                }
            }
            Op::Mean(a) => {
                if rg(*a) {
                    let d = acc!(*a);
                    let share = g[0] / T::lit(d.len() as f64);
                    d.iter_mut().for_each(|x| *x += share);
                }
            }
            Op::Sum(a) => {
                if rg(*a) {
                    let d = acc!(*a);
                    d.iter_mut().for_each(|x| *x += g[0]);
                }
            }
            Op::L2NormalizeRows { x, norms } => {
                if rg(*x) {
                    let y = node.value.data();
                    let c = node.value.cols();
                    let d = acc!(*x);
                    for (r, &nr) in norms.iter().enumerate() {
                        let yr = &y[r * c..][..c];
                        let gr = &g[r * c..][..c];
                        let proj = super::ops::dot(yr, gr);
                        for ((x, &yy), &gg) in d[r * c..][..c].iter_mut().zip(yr).zip(gr) {
                            *x += (gg - yy * proj) / nr;
                        }
                    }
                }
            }
            Op::CrossEntropy { logits, targets, probs } => {
                if rg(*logits) {
                    let c = self.nodes[logits.0].value.cols();
                    let d = acc!(*logits);
                    for (r, &t) in targets.iter().enumerate() {
                        for k in 0..c {
                            let onehot = if k == t { T::one() } else { T::zero() };
                            d[r * c + k] += g[0] * (probs[r * c + k] - onehot);
                        }
                    }
                }
            }
        }
    }
}
