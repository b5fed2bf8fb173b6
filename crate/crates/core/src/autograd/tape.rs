use super::tensor::{gemm_nn, gemm_nt, gemm_tn, ParamGrads, ParamId, ParamStore, Real, Tensor};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Source<T> {
    Param(ParamId),
    Owned(Tensor<T>),
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Scale(Var, T),
    Relu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    Reshape(Var),
    Rows {
        x: Var,
        start: usize,
    },
    GroupMean {
        x: Var,
        group: usize,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Vec<T>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<T>,
    },
    StraightThrough {
        x: Var,
    },
    RowDistance {
        x: Var,
        unit: Vec<T>,
    },
    Mask {
        x: Var,
        mask: Vec<T>,
    },
    WeightedSum(Vec<(Var, T)>),
}

struct Node<T> {
    rows: usize,
    cols: usize,
    value: Source<T>,
    op: Op<T>,
}

/// Records a computation over matrices and replays it backwards.
///
/// Parameter leaves borrow from a [`ParamStore`] so that large tables are not
/// copied per forward pass.
pub struct Tape<'p, T: Real> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
}

impl<'p, T: Real> Tape<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Self {
            params,
            nodes: Vec::with_capacity(256),
        }
    }

    pub fn params(&self) -> &'p ParamStore<T> {
        self.params
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn value(&self, v: Var) -> &[T] {
        match &self.nodes[v.0].value {
            Source::Param(id) => self.params.get(*id).data(),
            Source::Owned(t) => t.data(),
        }
    }

    pub fn tensor(&self, v: Var) -> Tensor<T> {
        let (r, c) = self.shape(v);
        Tensor::from_vec(r, c, self.value(v).to_vec())
    }

    pub fn scalar(&self, v: Var) -> T {
        let vals = self.value(v);
        assert_eq!(vals.len(), 1, "not a scalar node");
        vals[0]
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let (rows, cols) = value.shape();
        self.nodes.push(Node {
            rows,
            cols,
            value: Source::Owned(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let (rows, cols) = self.params.get(id).shape();
        self.nodes.push(Node {
            rows,
            cols,
            value: Source::Param(id),
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf holding a value that is not a parameter. Its gradient is still
    /// computed and can be read from [`Gradients::get`].
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (n, k) = self.shape(a);
        let (k2, m) = self.shape(b);
        assert_eq!(k, k2, "matmul inner dimension mismatch");
        let mut out = Tensor::zeros(n, m);
        gemm_nn(self.value(a), self.value(b), out.data_mut(), n, k, m);
        self.push(out, Op::MatMul(a, b))
    }

    /// `a + b` where `b` is a single row broadcast over the rows of `a`.
    pub fn add_bias(&mut self, a: Var, b: Var) -> Var {
        let (n, d) = self.shape(a);
        assert_eq!(self.shape(b), (1, d), "bias shape mismatch");
        let bias = self.value(b);
        let mut out = self.tensor(a);
        for r in 0..n {
            for (o, &bv) in out.row_mut(r).iter_mut().zip(bias) {
                *o += bv;
            }
        }
        self.push(out, Op::AddBias(a, b))
    }

    /// `x·w + b`
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let y = self.matmul(x, w);
        self.add_bias(y, b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shape mismatch");
        let mut out = self.tensor(a);
        for (o, &bv) in out.data_mut().iter_mut().zip(self.value(b)) {
            *o += bv;
        }
        self.push(out, Op::Add(a, b))
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Var {
        let mut out = self.tensor(a);
        out.data_mut().iter_mut().for_each(|v| *v *= factor);
        self.push(out, Op::Scale(a, factor))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let mut out = self.tensor(a);
        out.data_mut()
            .iter_mut()
            .for_each(|v| *v = if *v > T::zero() { *v } else { T::zero() });
        self.push(out, Op::Relu(a))
    }

    /// Row-wise layer normalization with learned gain and bias (both `1×d`).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let eps = T::lit(1e-5);
        let (n, d) = self.shape(x);
        assert_eq!(self.shape(gain), (1, d));
        assert_eq!(self.shape(bias), (1, d));
        let xs = self.value(x);
        let g = self.value(gain);
        let b = self.value(bias);
        let dn = T::from_usize(d).unwrap();
        let mut xhat = vec![T::zero(); n * d];
        let mut rstd = vec![T::zero(); n];
        let mut out = Tensor::zeros(n, d);
        for r in 0..n {
            let row = &xs[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            let o = out.row_mut(r);
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                o[j] = h * g[j] + b[j];
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
        )
    }

    /// Selects rows of `table` by index.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let (rows, d) = self.shape(table);
        let src = self.value(table);
        let mut out = Tensor::zeros(ids.len(), d);
        for (i, &id) in ids.iter().enumerate() {
            assert!(id < rows, "gather index {id} out of range {rows}");
            out.row_mut(i).copy_from_slice(&src[id * d..(id + 1) * d]);
        }
        self.push(
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        )
    }

    /// Reinterprets the row-major buffer with a new shape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(r * c, rows * cols, "reshape size mismatch");
        let out = Tensor::from_vec(rows, cols, self.value(a).to_vec());
        self.push(out, Op::Reshape(a))
    }

    /// Contiguous slice of `count` rows starting at `start`.
    pub fn rows(&mut self, x: Var, start: usize, count: usize) -> Var {
        let (r, c) = self.shape(x);
        assert!(start + count <= r, "row slice out of range");
        let out = Tensor::from_vec(count, c, self.value(x)[start * c..(start + count) * c].to_vec());
        self.push(out, Op::Rows { x, start })
    }

    /// Averages consecutive groups of `group` rows.
    pub fn group_mean(&mut self, x: Var, group: usize) -> Var {
        let (r, c) = self.shape(x);
        assert!(group > 0 && r % group == 0, "group_mean needs rows divisible by group");
        let xs = self.value(x);
        let inv = T::one() / T::from_usize(group).unwrap();
        let mut out = Tensor::zeros(r / group, c);
        for (i, row) in xs.chunks(c).enumerate() {
            for (o, &v) in out.row_mut(i / group).iter_mut().zip(row) {
                *o += v;
            }
        }
        out.data_mut().iter_mut().for_each(|v| *v *= inv);
        self.push(out, Op::GroupMean { x, group })
    }

    /// Multi-head scaled dot-product attention. Heads are contiguous column
    /// blocks of `q`, `k` and `v`. With `causal`, query `i` sees keys `0..=i`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, causal: bool) -> Var {
        let (n, d) = self.shape(q);
        let (m, dk) = self.shape(k);
        assert_eq!(d, dk);
        assert_eq!(self.shape(v), (m, d));
        assert!(d % heads == 0);
        if causal {
            assert_eq!(n, m, "causal attention needs square scores");
        }
        let dh = d / heads;
        let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
        let (qs, ks, vs) = (self.value(q), self.value(k), self.value(v));
        let mut probs = vec![T::zero(); heads * n * m];
        let mut out = Tensor::zeros(n, d);
        for h in 0..heads {
            let off = h * dh;
            for i in 0..n {
                let p = &mut probs[(h * n + i) * m..(h * n + i + 1) * m];
                let visible = if causal { i + 1 } else { m };
                let qi = &qs[i * d + off..i * d + off + dh];
                let mut max = T::neg_infinity();
                for j in 0..visible {
                    let kj = &ks[j * d + off..j * d + off + dh];
                    let s = qi.iter().zip(kj).map(|(&a, &b)| a * b).sum::<T>() * scale;
                    p[j] = s;
                    if s > max {
                        max = s;
                    }
                }
                let mut z = T::zero();
                for pj in p.iter_mut().take(visible) {
                    *pj = (*pj - max).exp();
                    z += *pj;
                }
                for pj in p.iter_mut().take(visible) {
                    *pj = *pj / z;
                }
                let o = &mut out.row_mut(i)[off..off + dh];
                for (j, &pj) in p.iter().enumerate().take(visible) {
                    let vj = &vs[j * d + off..j * d + off + dh];
                    for (ov, &vv) in o.iter_mut().zip(vj) {
                        *ov += pj * vv;
                    }
                }
            }
        }
        self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            },
        )
    }

    /// Mean token-level cross entropy of `logits` (one row per position).
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Var {
        let (n, vsz) = self.shape(logits);
        assert_eq!(n, targets.len());
        let ls = self.value(logits);
        let mut probs = vec![T::zero(); n * vsz];
        let mut total = T::zero();
        for i in 0..n {
            let row = &ls[i * vsz..(i + 1) * vsz];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for (p, &l) in probs[i * vsz..(i + 1) * vsz].iter_mut().zip(row) {
                *p = (l - max).exp();
                z += *p;
            }
            for p in &mut probs[i * vsz..(i + 1) * vsz] {
                *p = *p / z;
            }
            let t = targets[i];
            assert!(t < vsz, "target {t} out of vocabulary");
            total += max + z.ln() - row[t];
        }
        let loss = total / T::from_usize(n.max(1)).unwrap();
        self.push(
            Tensor::from_vec(1, 1, vec![loss]),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        )
    }

    /// Forward value of `replacement`, gradient routed unchanged to `x`.
    /// `replacement` receives no gradient.
    pub fn straight_through(&mut self, x: Var, replacement: Var) -> Var {
        assert_eq!(self.shape(x), self.shape(replacement));
        let out = self.tensor(replacement);
        self.push(out, Op::StraightThrough { x })
    }

    /// `Σ_r ‖x_r − target_r‖₂` with `target` under stop-gradient.
    pub fn row_distance(&mut self, x: Var, target: Var) -> Var {
        let (n, d) = self.shape(x);
        assert_eq!(self.shape(target), (n, d));
        let xs = self.value(x);
        let ts = self.value(target);
        let mut unit = vec![T::zero(); n * d];
        let mut total = T::zero();
        for r in 0..n {
            let norm = (0..d)
                .map(|j| {
                    let diff = xs[r * d + j] - ts[r * d + j];
                    diff * diff
                })
                .sum::<T>()
                .sqrt();
            total += norm;
            if norm > T::zero() {
                for j in 0..d {
                    unit[r * d + j] = (xs[r * d + j] - ts[r * d + j]) / norm;
                }
            }
        }
        self.push(Tensor::from_vec(1, 1, vec![total]), Op::RowDistance { x, unit })
    }

    /// Elementwise multiply by a fixed mask (dropout).
    pub fn mask(&mut self, x: Var, mask: Vec<T>) -> Var {
        let mut out = self.tensor(x);
        assert_eq!(out.len(), mask.len());
        for (o, &m) in out.data_mut().iter_mut().zip(&mask) {
            *o *= m;
        }
        self.push(out, Op::Mask { x, mask })
    }

    /// Weighted sum of scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, T)]) -> Var {
        let total = terms.iter().map(|&(v, w)| self.scalar(v) * w).sum::<T>();
        self.push(Tensor::from_vec(1, 1, vec![total]), Op::WeightedSum(terms.to_vec()))
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        assert_eq!(self.shape(loss), (1, 1), "backward needs a scalar loss");
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(idx, &g, &mut grads);
        }
        Gradients { grads }
    }

    fn backprop_node(&self, idx: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[idx];
        let (n, c) = (node.rows, node.cols);
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (_, k) = self.shape(*a);
                let mut ga = vec![T::zero(); n * k];
                gemm_nt(g, self.value(*b), &mut ga, n, c, k);
                accumulate(grads, *a, ga);
                let mut gb = vec![T::zero(); k * c];
                gemm_tn(self.value(*a), g, &mut gb, n, k, c);
                accumulate(grads, *b, gb);
            }
            Op::AddBias(a, b) => {
                accumulate(grads, *a, g.to_vec());
                let mut gb = vec![T::zero(); c];
                for row in g.chunks(c) {
                    for (o, &v) in gb.iter_mut().zip(row) {
                        *o += v;
                    }
                }
                accumulate(grads, *b, gb);
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.to_vec());
                accumulate(grads, *b, g.to_vec());
            }
            Op::Scale(a, f) => {
                accumulate(grads, *a, g.iter().map(|&v| v * *f).collect());
            }
            Op::Relu(a) => {
                let xs = self.value(*a);
                let ga = g
                    .iter()
                    .zip(xs)
                    .map(|(&gv, &x)| if x > T::zero() { gv } else { T::zero() })
                    .collect();
                accumulate(grads, *a, ga);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let gs = self.value(*gain);
                let dn = T::from_usize(c).unwrap();
                let mut gx = vec![T::zero(); n * c];
                let mut ggain = vec![T::zero(); c];
                let mut gbias = vec![T::zero(); c];
                for r in 0..n {
                    let gr = &g[r * c..(r + 1) * c];
                    let hr = &xhat[r * c..(r + 1) * c];
                    let mut mean_dh = T::zero();
                    let mut mean_dh_h = T::zero();
                    for j in 0..c {
                        let dh = gr[j] * gs[j];
                        mean_dh += dh;
                        mean_dh_h += dh * hr[j];
                        ggain[j] += gr[j] * hr[j];
                        gbias[j] += gr[j];
                    }
                    mean_dh = mean_dh / dn;
                    mean_dh_h = mean_dh_h / dn;
                    for j in 0..c {
                        let dh = gr[j] * gs[j];
                        gx[r * c + j] = rstd[r] * (dh - mean_dh - hr[j] * mean_dh_h);
                    }
                }
                accumulate(grads, *x, gx);
                accumulate(grads, *gain, ggain);
                accumulate(grads, *bias, gbias);
            }
            Op::Gather { table, ids } => {
                let (rows, d) = self.shape(*table);
                let buf = grads[table.0].get_or_insert_with(|| vec![T::zero(); rows * d]);
                for (i, &id) in ids.iter().enumerate() {
                    for (o, &v) in buf[id * d..(id + 1) * d].iter_mut().zip(&g[i * d..(i + 1) * d]) {
                        *o += v;
                    }
                }
            }
            Op::Reshape(a) => accumulate(grads, *a, g.to_vec()),
            Op::Rows { x, start } => {
                let (r, cc) = self.shape(*x);
                let buf = grads[x.0].get_or_insert_with(|| vec![T::zero(); r * cc]);
                for (o, &v) in buf[start * cc..start * cc + g.len()].iter_mut().zip(g) {
                    *o += v;
                }
            }
            Op::GroupMean { x, group } => {
                let (r, cc) = self.shape(*x);
                let inv = T::one() / T::from_usize(*group).unwrap();
                let mut gx = vec![T::zero(); r * cc];
                for (i, row) in gx.chunks_mut(cc).enumerate() {
                    let src = &g[(i / group) * cc..(i / group + 1) * cc];
                    for (o, &v) in row.iter_mut().zip(src) {
                        *o = v * inv;
                    }
                }
                accumulate(grads, *x, gx);
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            } => {
                let d = c;
                let (m, _) = self.shape(*k);
                let dh = d / heads;
                let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
                let (qs, ks, vs) = (self.value(*q), self.value(*k), self.value(*v));
                let mut gq = vec![T::zero(); n * d];
                let mut gk = vec![T::zero(); m * d];
                let mut gv = vec![T::zero(); m * d];
                let mut dp = vec![T::zero(); m];
                for h in 0..*heads {
                    let off = h * dh;
                    for i in 0..n {
                        let p = &probs[(h * n + i) * m..(h * n + i + 1) * m];
                        let go = &g[i * d + off..i * d + off + dh];
                        let mut dot = T::zero();
                        for j in 0..m {
                            if p[j] == T::zero() {
                                dp[j] = T::zero();
                                continue;
                            }
                            let vj = &vs[j * d + off..j * d + off + dh];
                            dp[j] = go.iter().zip(vj).map(|(&a, &b)| a * b).sum();
                            dot += dp[j] * p[j];
                            for (o, &gov) in gv[j * d + off..j * d + off + dh].iter_mut().zip(go) {
                                *o += p[j] * gov;
                            }
                        }
                        let qi = &qs[i * d + off..i * d + off + dh];
                        for j in 0..m {
                            if p[j] == T::zero() {
                                continue;
                            }
                            let ds = p[j] * (dp[j] - dot) * scale;
                            let kj = &ks[j * d + off..j * d + off + dh];
                            for (o, &kv) in gq[i * d + off..i * d + off + dh].iter_mut().zip(kj) {
                                *o += ds * kv;
                            }
                            for (o, &qv) in gk[j * d + off..j * d + off + dh].iter_mut().zip(qi) {
                                *o += ds * qv;
                            }
                        }
                    }
                }
                accumulate(grads, *q, gq);
                accumulate(grads, *k, gk);
                accumulate(grads, *v, gv);
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let (rows, vsz) = self.shape(*logits);
                let f = g[0] / T::from_usize(rows.max(1)).unwrap();
                let mut gl: Vec<T> = probs.iter().map(|&p| p * f).collect();
                for (i, &t) in targets.iter().enumerate() {
                    gl[i * vsz + t] -= f;
                }
                accumulate(grads, *logits, gl);
            }
            Op::StraightThrough { x } => accumulate(grads, *x, g.to_vec()),
            Op::RowDistance { x, unit } => {
                accumulate(grads, *x, unit.iter().map(|&u| u * g[0]).collect());
            }
            Op::Mask { x, mask } => {
                accumulate(grads, *x, g.iter().zip(mask).map(|(&a, &b)| a * b).collect());
            }
            Op::WeightedSum(terms) => {
                for &(v, w) in terms {
                    accumulate(grads, v, vec![g[0] * w]);
                }
            }
        }
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Vec<T>>], v: Var, contribution: Vec<T>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, c) in existing.iter_mut().zip(contribution) {
                *e += c;
            }
        }
        slot @ None => *slot = Some(contribution),
    }
}

/// Leaf gradients produced by [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of a leaf node, `None` if nothing flowed into it.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads[v.0].as_deref()
    }

    /// Adds every parameter-leaf gradient into `out`.
    pub fn accumulate_params(&self, tape: &Tape<'_, T>, out: &mut ParamGrads<T>) {
        for (node, g) in tape.nodes.iter().zip(&self.grads) {
            if let (Source::Param(id), Some(g)) = (&node.value, g) {
                for (o, &v) in out.get_mut(*id).iter_mut().zip(g) {
                    *o += v;
                }
            }
        }
    }
}
