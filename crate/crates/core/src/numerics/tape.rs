use rand::Rng;

use super::{ParamId, ParamStore, Real};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Storage<T> {
    Param(ParamId),
    Owned(Vec<T>),
}

enum Op<T> {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sum(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Tanh(Var),
    Gelu(Var),
    Embedding {
        table: Var,
        ids: Vec<u32>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<T>,
    },
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    SelectRows {
        x: Var,
        rows: Vec<usize>,
    },
}

struct Node<T> {
    shape: Vec<usize>,
    storage: Storage<T>,
    op: Op<T>,
}

/// Gradients of a scalar with respect to the parameters it reached.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    params: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, id: ParamId) -> Option<&[T]> {
        self.params.get(id.0).and_then(|g| g.as_deref())
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &[T])> {
        self.params
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_deref().map(|g| (ParamId(i), g)))
    }
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_COEF: f64 = 0.044_715;

/// Rows and columns of a rank-1 or rank-2 shape.
fn dims2(op: &'static str, shape: &[usize]) -> Result<(usize, usize)> {
    match *shape {
        [n] => Ok((1, n)),
        [r, c] => Ok((r, c)),
        _ => Err(Error::Shape {
            op,
            left: shape.to_vec(),
            right: vec![],
        }),
    }
}

/// Records forward operations over parameters borrowed from a
/// [`ParamStore`] and replays them in reverse to produce gradients.
///
/// Every forward op fails on shape mismatch or when its output contains a
/// NaN or infinity.
pub struct Tape<'p, T: Real> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    param_vars: Vec<Option<Var>>,
    consumed: bool,
}

impl<'p, T: Real> Tape<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
            consumed: false,
        }
    }

    pub fn params(&self) -> &'p ParamStore<T> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops all recorded nodes so the tape can be reused.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.param_vars.iter_mut().for_each(|v| *v = None);
        self.consumed = false;
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[T] {
        match &self.nodes[v.0].storage {
            Storage::Param(id) => self.params.get(*id).data(),
            Storage::Owned(data) => data,
        }
    }

    /// Value of a single-element node.
    pub fn scalar(&self, v: Var) -> T {
        self.value(v)[0]
    }

    fn push(&mut self, op_name: &'static str, shape: Vec<usize>, data: Vec<T>, op: Op<T>) -> Result<Var> {
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { op: op_name });
        }
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.nodes.push(Node {
            shape,
            storage: Storage::Owned(data),
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A non-trainable input.
    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<T>) -> Result<Var> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Shape {
                op: "constant",
                left: shape,
                right: vec![data.len()],
            });
        }
        self.push("constant", shape, data, Op::Constant)
    }

    /// The leaf for a parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node {
            shape: self.params.get(id).shape().to_vec(),
            storage: Storage::Param(id),
            op: Op::Param(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = dims2("matmul", self.shape(a))?;
        let (k2, n) = dims2("matmul", self.shape(b))?;
        if k != k2 || self.shape(a).len() != 2 || self.shape(b).len() != 2 {
            return Err(Error::Shape {
                op: "matmul",
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let x = av[i * k + p];
                if x == T::zero() {
                    continue;
                }
                for (o, &y) in row.iter_mut().zip(&bv[p * n..(p + 1) * n]) {
                    *o += x * y;
                }
            }
        }
        self.push("matmul", vec![m, n], out, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = dims2("transpose", self.shape(a))?;
        let av = self.value(a);
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = av[i * n + j];
            }
        }
        self.push("transpose", vec![n, m], out, Op::Transpose(a))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape {
                op,
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x + y).collect();
        self.push("add", self.shape(a).to_vec(), out, Op::Add(a, b))
    }

    /// Adds a length-`n` row vector to every row of an `[m, n]` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (_, n) = dims2("add_row", self.shape(a))?;
        let (r, c) = dims2("add_row", self.shape(row))?;
        if r != 1 || c != n {
            return Err(Error::Shape {
                op: "add_row",
                left: self.shape(a).to_vec(),
                right: self.shape(row).to_vec(),
            });
        }
        let bv = self.value(row);
        let out = self
            .value(a)
            .chunks(n)
            .flat_map(|r| r.iter().zip(bv).map(|(&x, &y)| x + y))
            .collect();
        self.push("add_row", self.shape(a).to_vec(), out, Op::AddRow(a, row))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x * y).collect();
        self.push("mul", self.shape(a).to_vec(), out, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var> {
        let out = self.value(a).iter().map(|&x| x * c).collect();
        self.push("scale", self.shape(a).to_vec(), out, Op::Scale(a, c))
    }

    /// Sum of all elements, as a `[1]` scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s: T = self.value(a).iter().copied().sum();
        self.push("sum", vec![1], vec![s], Op::Sum(a))
    }

    /// Row-wise softmax over the last axis, stabilized by the row maximum.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let (_, n) = dims2("softmax", self.shape(a))?;
        let mut out = self.value(a).to_vec();
        for row in out.chunks_mut(n) {
            softmax_in_place(row);
        }
        self.push("softmax", self.shape(a).to_vec(), out, Op::Softmax(a))
    }

    /// Row-wise layer normalization with biased variance.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let (m, n) = dims2("layer_norm", self.shape(x))?;
        for p in [gamma, beta] {
            if dims2("layer_norm", self.shape(p))? != (1, n) {
                return Err(Error::Shape {
                    op: "layer_norm",
                    left: self.shape(x).to_vec(),
                    right: self.shape(p).to_vec(),
                });
            }
        }
        let nt = T::from_usize(n).expect("usize fits");
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        let mut xhat = vec![T::zero(); m * n];
        let mut inv_std = vec![T::zero(); m];
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let row = &xv[i * n..(i + 1) * n];
            let mean = row.iter().copied().sum::<T>() / nt;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nt;
            let is = T::one() / (var + eps).sqrt();
            inv_std[i] = is;
            for j in 0..n {
                let h = (row[j] - mean) * is;
                xhat[i * n + j] = h;
                out[i * n + j] = h * gv[j] + bv[j];
            }
        }
        self.push(
            "layer_norm",
            vec![m, n],
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).iter().map(|x| x.tanh()).collect();
        self.push("tanh", self.shape(a).to_vec(), out, Op::Tanh(a))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).iter().map(|&x| gelu(x)).collect();
        self.push("gelu", self.shape(a).to_vec(), out, Op::Gelu(a))
    }

    /// Gathers rows of a `[vocab, d]` table.
    pub fn embedding(&mut self, table: Var, ids: &[u32]) -> Result<Var> {
        let (v, d) = dims2("embedding", self.shape(table))?;
        if let Some(&bad) = ids.iter().find(|&&i| i as usize >= v) {
            return Err(Error::Shape {
                op: "embedding",
                left: self.shape(table).to_vec(),
                right: vec![bad as usize],
            });
        }
        let tv = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&tv[i as usize * d..(i as usize + 1) * d]);
        }
        self.push(
            "embedding",
            vec![ids.len(), d],
            out,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
        )
    }

    /// Mean over rows of `-log softmax(logits)[target]`, as a `[1]` scalar.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (m, c) = dims2("cross_entropy", self.shape(logits))?;
        if targets.len() != m || m == 0 || targets.iter().any(|&t| t >= c) {
            return Err(Error::Shape {
                op: "cross_entropy",
                left: self.shape(logits).to_vec(),
                right: targets.to_vec(),
            });
        }
        let mut probs = self.value(logits).to_vec();
        let mut loss = T::zero();
        for (row, &t) in probs.chunks_mut(c).zip(targets) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<T>().ln();
            loss += lse - row[t];
            softmax_in_place(row);
        }
        let mt = T::from_usize(m).expect("usize fits");
        self.push(
            "cross_entropy",
            vec![1],
            vec![loss / mt],
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        )
    }

    /// Inverted dropout: zeroes each element with probability `p` and scales
    /// survivors by `1 / (1 - p)`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, p: f64, rng: &mut R) -> Result<Var> {
        if p <= 0.0 {
            return Ok(a);
        }
        if p >= 1.0 {
            return Err(Error::invalid(format!("dropout rate must be < 1, got {p}")));
        }
        let keep = T::lit(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..self.value(a).len())
            .map(|_| if rng.gen_bool(p) { T::zero() } else { keep })
            .collect();
        let out = self.value(a).iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        self.push("dropout", self.shape(a).to_vec(), out, Op::Dropout { x: a, mask })
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = dims2("slice_cols", self.shape(a))?;
        if start + len > n || len == 0 {
            return Err(Error::Shape {
                op: "slice_cols",
                left: self.shape(a).to_vec(),
                right: vec![start, len],
            });
        }
        let av = self.value(a);
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&av[i * n + start..i * n + start + len]);
        }
        self.push("slice_cols", vec![m, len], out, Op::SliceCols { x: a, start })
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::invalid("concat_cols of nothing"));
        };
        let (m, _) = dims2("concat_cols", self.shape(first))?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = dims2("concat_cols", self.shape(p))?;
            if r != m {
                return Err(Error::Shape {
                    op: "concat_cols",
                    left: self.shape(first).to_vec(),
                    right: self.shape(p).to_vec(),
                });
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p)[i * w..(i + 1) * w]);
            }
        }
        self.push("concat_cols", vec![m, total], out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn select_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let (m, n) = dims2("select_rows", self.shape(a))?;
        if rows.is_empty() || rows.iter().any(|&r| r >= m) {
            return Err(Error::Shape {
                op: "select_rows",
                left: self.shape(a).to_vec(),
                right: rows.to_vec(),
            });
        }
        let av = self.value(a);
        let mut out = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            out.extend_from_slice(&av[r * n..(r + 1) * n]);
        }
        self.push(
            "select_rows",
            vec![rows.len(), n],
            out,
            Op::SelectRows {
                x: a,
                rows: rows.to_vec(),
            },
        )
    }

    /// Reverse pass from a single-element `loss`. Gradients of parameters
    /// used several times accumulate. A tape supports one backward pass
    /// until [`Tape::reset`].
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        if self.consumed {
            return Err(Error::Tape("backward already ran on this tape; reset it first".into()));
        }
        if self.nodes.is_empty() {
            return Err(Error::Tape("tape is empty".into()));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Tape(format!(
                "loss must be a scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        let mut out = Gradients {
            params: vec![None; self.params.len()],
        };

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => out.params[id.0] = Some(g),
                Op::MatMul(a, b) => {
                    let (m, k) = dims2("matmul", self.shape(*a))?;
                    let n = node.shape[1];
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let mut ga = vec![T::zero(); m * k];
                    let mut gb = vec![T::zero(); k * n];
                    for r in 0..m {
                        let grow = &g[r * n..(r + 1) * n];
                        for p in 0..k {
                            let brow = &bv[p * n..(p + 1) * n];
                            ga[r * k + p] = grow.iter().zip(brow).map(|(&x, &y)| x * y).sum();
                            let x = av[r * k + p];
                            if x != T::zero() {
                                for (o, &y) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                    *o += x * y;
                                }
                            }
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Transpose(a) => {
                    let (m, n) = dims2("transpose", self.shape(*a))?;
                    let mut ga = vec![T::zero(); m * n];
                    for r in 0..m {
                        for c in 0..n {
                            ga[r * n + c] = g[c * m + r];
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::AddRow(a, row) => {
                    let n = self.value(*row).len();
                    let mut gr = vec![T::zero(); n];
                    for chunk in g.chunks(n) {
                        for (o, &x) in gr.iter_mut().zip(chunk) {
                            *o += x;
                        }
                    }
                    accumulate(&mut grads, *row, gr);
                    accumulate(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = g.iter().zip(self.value(*b)).map(|(&x, &y)| x * y).collect();
                    let gb = g.iter().zip(self.value(*a)).map(|(&x, &y)| x * y).collect();
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Scale(a, c) => {
                    let ga = g.iter().map(|&x| x * *c).collect();
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sum(a) => {
                    let ga = vec![g[0]; self.value(*a).len()];
                    accumulate(&mut grads, *a, ga);
                }
                Op::Softmax(a) => {
                    let n = *node.shape.last().expect("rank >= 1");
                    let y = self.value(Var(i));
                    let mut ga = vec![T::zero(); y.len()];
                    for ((gr, yr), out) in g.chunks(n).zip(y.chunks(n)).zip(ga.chunks_mut(n)) {
                        let dot: T = gr.iter().zip(yr).map(|(&x, &y)| x * y).sum();
                        for ((o, &gx), &yx) in out.iter_mut().zip(gr).zip(yr) {
                            *o = yx * (gx - dot);
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let n = *node.shape.last().expect("rank >= 1");
                    let nt = T::from_usize(n).expect("usize fits");
                    let gv = self.value(*gamma);
                    let mut gg = vec![T::zero(); n];
                    let mut gbeta = vec![T::zero(); n];
                    let mut gx = vec![T::zero(); g.len()];
                    let mut dxhat = vec![T::zero(); n];
                    for (r, is) in inv_std.iter().enumerate() {
                        let gr = &g[r * n..(r + 1) * n];
                        let hr = &xhat[r * n..(r + 1) * n];
                        let mut sum_d = T::zero();
                        let mut sum_dh = T::zero();
                        for j in 0..n {
                            gg[j] += gr[j] * hr[j];
                            gbeta[j] += gr[j];
                            dxhat[j] = gr[j] * gv[j];
                            sum_d += dxhat[j];
                            sum_dh += dxhat[j] * hr[j];
                        }
                        for j in 0..n {
                            gx[r * n + j] = *is / nt * (nt * dxhat[j] - sum_d - hr[j] * sum_dh);
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *gamma, gg);
                    accumulate(&mut grads, *beta, gbeta);
                }
                Op::Tanh(a) => {
                    let y = self.value(Var(i));
                    let ga = g.iter().zip(y).map(|(&gx, &yx)| gx * (T::one() - yx * yx)).collect();
                    accumulate(&mut grads, *a, ga);
                }
                Op::Gelu(a) => {
                    let xv = self.value(*a);
                    let ga = g.iter().zip(xv).map(|(&gx, &x)| gx * gelu_grad(x)).collect();
                    accumulate(&mut grads, *a, ga);
                }
                Op::Embedding { table, ids } => {
                    let (v, d) = dims2("embedding", self.shape(*table))?;
                    let mut gt = vec![T::zero(); v * d];
                    for (r, &id) in ids.iter().enumerate() {
                        let dst = &mut gt[id as usize * d..(id as usize + 1) * d];
                        for (o, &x) in dst.iter_mut().zip(&g[r * d..(r + 1) * d]) {
                            *o += x;
                        }
                    }
                    accumulate(&mut grads, *table, gt);
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    probs,
                } => {
                    let c = probs.len() / targets.len();
                    let scale = g[0] / T::from_usize(targets.len()).expect("usize fits");
                    let mut gl: Vec<T> = probs.iter().map(|&p| p * scale).collect();
                    for (r, &t) in targets.iter().enumerate() {
                        gl[r * c + t] -= scale;
                    }
                    accumulate(&mut grads, *logits, gl);
                }
                Op::Dropout { x, mask } => {
                    let ga = g.iter().zip(mask).map(|(&a, &b)| a * b).collect();
                    accumulate(&mut grads, *x, ga);
                }
                Op::SliceCols { x, start } => {
                    let (m, n) = dims2("slice_cols", self.shape(*x))?;
                    let w = node.shape[1];
                    let mut gx = vec![T::zero(); m * n];
                    for r in 0..m {
                        gx[r * n + start..r * n + start + w].copy_from_slice(&g[r * w..(r + 1) * w]);
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::ConcatCols(parts) => {
                    let m = node.shape[0];
                    let total = node.shape[1];
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.shape(p)[self.shape(p).len() - 1];
                        let mut gp = Vec::with_capacity(m * w);
                        for r in 0..m {
                            gp.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                        }
                        offset += w;
                        accumulate(&mut grads, p, gp);
                    }
                }
                Op::SelectRows { x, rows } => {
                    let (m, n) = dims2("select_rows", self.shape(*x))?;
                    let mut gx = vec![T::zero(); m * n];
                    for (k, &r) in rows.iter().enumerate() {
                        for (o, &v) in gx[r * n..(r + 1) * n].iter_mut().zip(&g[k * n..(k + 1) * n]) {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
            }
        }
        Ok(out)
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Vec<T>>], v: Var, g: Vec<T>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, x) in existing.iter_mut().zip(g) {
                *e += x;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x = *x / sum;
    }
}

fn gelu<T: Real>(x: T) -> T {
    let c = T::lit(SQRT_2_OVER_PI);
    let k = T::lit(GELU_COEF);
    let half = T::lit(0.5);
    half * x * (T::one() + (c * (x + k * x * x * x)).tanh())
}

fn gelu_grad<T: Real>(x: T) -> T {
    let c = T::lit(SQRT_2_OVER_PI);
    let k = T::lit(GELU_COEF);
    let half = T::lit(0.5);
    let t = (c * (x + k * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::lit(3.0) * k * x * x)
}
