//! Post-norm Transformer encoder with classification, masked-token and
//! augmentation-type heads sharing one set of encoder weights.

mod checkpoint;

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{ParamId, ParamStore, Real, Tape, Tensor, Var};
use crate::text::TokenId;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            num_layers: 2,
            num_heads: 4,
            d_model: 64,
            d_ff: 256,
            max_len: 128,
            vocab_size: 0,
            dropout: 0.1,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if self.num_layers == 0 || self.num_heads == 0 || self.d_model == 0 || self.d_ff == 0 {
            return bad(format!("encoder dimensions must be positive: {self:?}"));
        }
        if self.d_model % self.num_heads != 0 {
            return bad(format!(
                "d_model {} is not divisible by num_heads {}",
                self.d_model, self.num_heads
            ));
        }
        if self.max_len < 2 {
            return bad(format!("max_len must be >= 2, got {}", self.max_len));
        }
        if self.vocab_size == 0 {
            return bad("vocab_size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.num_heads
    }
}

#[derive(Debug, Clone, PartialEq)]
struct LayerIds {
    query_w: ParamId,
    query_b: ParamId,
    key_w: ParamId,
    key_b: ParamId,
    value_w: ParamId,
    value_b: ParamId,
    attn_out_w: ParamId,
    attn_out_b: ParamId,
    attn_norm_g: ParamId,
    attn_norm_b: ParamId,
    ff_in_w: ParamId,
    ff_in_b: ParamId,
    ff_out_w: ParamId,
    ff_out_b: ParamId,
    ff_norm_g: ParamId,
    ff_norm_b: ParamId,
}

/// Dense-tanh-dense head over the `[CLS]` vector.
#[derive(Debug, Clone, PartialEq)]
struct PoolerHead {
    dense_w: ParamId,
    dense_b: ParamId,
    out_w: ParamId,
    out_b: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    token_emb: ParamId,
    position_emb: ParamId,
    layers: Vec<LayerIds>,
    cls: PoolerHead,
    mtp_w: ParamId,
    mtp_b: ParamId,
    satp: PoolerHead,
}

impl Layout {
    fn resolve<T: Real>(store: &ParamStore<T>, num_layers: usize) -> Result<Self> {
        let id = |name: &str| {
            store
                .id(name)
                .ok_or_else(|| Error::invalid(format!("missing parameter {name}")))
        };
        let pooler = |prefix: &str| -> Result<PoolerHead> {
            Ok(PoolerHead {
                dense_w: id(&format!("{prefix}.dense.weight"))?,
                dense_b: id(&format!("{prefix}.dense.bias"))?,
                out_w: id(&format!("{prefix}.out.weight"))?,
                out_b: id(&format!("{prefix}.out.bias"))?,
            })
        };
        let layers = (0..num_layers)
            .map(|i| {
                let p = |s: &str| id(&format!("layers.{i}.{s}"));
                Ok(LayerIds {
                    query_w: p("attention.query.weight")?,
                    query_b: p("attention.query.bias")?,
                    key_w: p("attention.key.weight")?,
                    key_b: p("attention.key.bias")?,
                    value_w: p("attention.value.weight")?,
                    value_b: p("attention.value.bias")?,
                    attn_out_w: p("attention.output.weight")?,
                    attn_out_b: p("attention.output.bias")?,
                    attn_norm_g: p("attention.norm.gamma")?,
                    attn_norm_b: p("attention.norm.beta")?,
                    ff_in_w: p("ffn.in.weight")?,
                    ff_in_b: p("ffn.in.bias")?,
                    ff_out_w: p("ffn.out.weight")?,
                    ff_out_b: p("ffn.out.bias")?,
                    ff_norm_g: p("ffn.norm.gamma")?,
                    ff_norm_b: p("ffn.norm.beta")?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            token_emb: id("embeddings.token")?,
            position_emb: id("embeddings.position")?,
            layers,
            cls: pooler("heads.classification")?,
            mtp_w: id("heads.mtp.weight")?,
            mtp_b: id("heads.mtp.bias")?,
            satp: pooler("heads.satp")?,
        })
    }
}

/// Which parameters a name belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Encoder,
    ClassificationHead,
    MtpHead,
    SatpHead,
}

pub fn param_group(name: &str) -> ParamGroup {
    if name.starts_with("heads.classification.") {
        ParamGroup::ClassificationHead
    } else if name.starts_with("heads.mtp.") {
        ParamGroup::MtpHead
    } else if name.starts_with("heads.satp.") {
        ParamGroup::SatpHead
    } else {
        ParamGroup::Encoder
    }
}

/// Encoder weights plus all three heads.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T: Real> {
    config: EncoderConfig,
    num_classes: usize,
    num_ops: usize,
    params: ParamStore<T>,
    layout: Layout,
}

fn truncated_normal<T: Real, R: Rng + ?Sized>(n: usize, std: f64, rng: &mut R) -> Vec<T> {
    let normal = Normal::new(0.0, std).expect("std is finite and non-negative");
    (0..n)
        .map(|_| loop {
            let x: f64 = normal.sample(rng);
            if x.abs() <= 2.0 * std {
                break T::lit(x);
            }
        })
        .collect()
}

impl<T: Real> Model<T> {
    /// Fresh weights: truncated normal (std `init_std`, cut at 2 std) for
    /// matrices and embeddings, zero biases, unit layer-norm gains.
    pub fn init<R: Rng + ?Sized>(
        config: EncoderConfig,
        num_classes: usize,
        num_ops: usize,
        init_std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        if num_classes < 2 {
            return Err(Error::invalid(format!("need at least 2 classes, got {num_classes}")));
        }
        if num_ops == 0 {
            return Err(Error::invalid("need at least one augmentation op"));
        }
        let (d, f, v) = (config.d_model, config.d_ff, config.vocab_size);
        let mut s = ParamStore::new();
        let matrix = |s: &mut ParamStore<T>, name: String, r: usize, c: usize, rng: &mut R| {
            s.insert(name, Tensor::new(vec![r, c], truncated_normal(r * c, init_std, rng))?, true)
        };
        let bias = |s: &mut ParamStore<T>, name: String, n: usize| s.insert(name, Tensor::zeros(vec![n]), false);
        let gain = |s: &mut ParamStore<T>, name: String, n: usize| {
            s.insert(name, Tensor::filled(vec![n], T::one()), false)
        };

        matrix(&mut s, "embeddings.token".into(), v, d, rng)?;
        matrix(&mut s, "embeddings.position".into(), config.max_len, d, rng)?;
        for i in 0..config.num_layers {
            let p = |n: &str| format!("layers.{i}.{n}");
            for proj in ["query", "key", "value", "output"] {
                matrix(&mut s, p(&format!("attention.{proj}.weight")), d, d, rng)?;
                bias(&mut s, p(&format!("attention.{proj}.bias")), d)?;
            }
            gain(&mut s, p("attention.norm.gamma"), d)?;
            bias(&mut s, p("attention.norm.beta"), d)?;
            matrix(&mut s, p("ffn.in.weight"), d, f, rng)?;
            bias(&mut s, p("ffn.in.bias"), f)?;
            matrix(&mut s, p("ffn.out.weight"), f, d, rng)?;
            bias(&mut s, p("ffn.out.bias"), d)?;
            gain(&mut s, p("ffn.norm.gamma"), d)?;
            bias(&mut s, p("ffn.norm.beta"), d)?;
        }
        for (prefix, outputs) in [("heads.classification", num_classes), ("heads.satp", num_ops)] {
            matrix(&mut s, format!("{prefix}.dense.weight"), d, d, rng)?;
            bias(&mut s, format!("{prefix}.dense.bias"), d)?;
            matrix(&mut s, format!("{prefix}.out.weight"), d, outputs, rng)?;
            bias(&mut s, format!("{prefix}.out.bias"), outputs)?;
        }
        matrix(&mut s, "heads.mtp.weight".into(), d, v, rng)?;
        bias(&mut s, "heads.mtp.bias".into(), v)?;

        Self::from_params(config, s)
    }

    /// Rebuilds a model around existing parameters, checking every shape.
    pub fn from_params(config: EncoderConfig, params: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::resolve(&params, config.num_layers)?;
        let num_classes = *params.get(layout.cls.out_b).shape().first().unwrap_or(&0);
        let num_ops = *params.get(layout.satp.out_b).shape().first().unwrap_or(&0);
        let model = Self {
            config,
            num_classes,
            num_ops,
            params,
            layout,
        };
        model.check_shapes()?;
        Ok(model)
    }

    fn check_shapes(&self) -> Result<()> {
        let c = &self.config;
        let (d, f, v) = (c.d_model, c.d_ff, c.vocab_size);
        let want = |id: ParamId, shape: &[usize]| -> Result<()> {
            let got = self.params.get(id).shape();
            if got != shape {
                return Err(Error::Shape {
                    op: "model parameter",
                    left: got.to_vec(),
                    right: shape.to_vec(),
                });
            }
            Ok(())
        };
        let l = &self.layout;
        want(l.token_emb, &[v, d])?;
        want(l.position_emb, &[c.max_len, d])?;
        for layer in &l.layers {
            for w in [layer.query_w, layer.key_w, layer.value_w, layer.attn_out_w] {
                want(w, &[d, d])?;
            }
            for b in [
                layer.query_b,
                layer.key_b,
                layer.value_b,
                layer.attn_out_b,
                layer.attn_norm_g,
                layer.attn_norm_b,
                layer.ff_out_b,
                layer.ff_norm_g,
                layer.ff_norm_b,
            ] {
                want(b, &[d])?;
            }
            want(layer.ff_in_w, &[d, f])?;
            want(layer.ff_in_b, &[f])?;
            want(layer.ff_out_w, &[f, d])?;
        }
        for (head, n) in [(&l.cls, self.num_classes), (&l.satp, self.num_ops)] {
            want(head.dense_w, &[d, d])?;
            want(head.dense_b, &[d])?;
            want(head.out_w, &[d, n])?;
            want(head.out_b, &[n])?;
        }
        want(l.mtp_w, &[d, v])?;
        want(l.mtp_b, &[v])?;
        if self.num_classes < 2 || self.num_ops == 0 {
            return Err(Error::invalid("classification head needs >= 2 outputs, SATP head >= 1"));
        }
        Ok(())
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_ops(&self) -> usize {
        self.num_ops
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore<T> {
        self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_scalars()
    }

    pub fn tape(&self) -> Tape<'_, T> {
        Tape::new(&self.params)
    }

    /// Re-draws the classification and SATP head weights, leaving the
    /// encoder and the MTP head untouched.
    pub fn reinit_heads<R: Rng + ?Sized>(&mut self, init_std: f64, rng: &mut R) {
        let heads = [self.layout.cls.clone(), self.layout.satp.clone()];
        for head in heads {
            for w in [head.dense_w, head.out_w] {
                let t = self.params.get_mut(w);
                let fresh = truncated_normal::<T, R>(t.len(), init_std, rng);
                t.data_mut().copy_from_slice(&fresh);
            }
            for b in [head.dense_b, head.out_b] {
                self.params.get_mut(b).data_mut().fill(T::zero());
            }
        }
    }

    /// Hidden states `[len(ids), d_model]`. Dropout is active iff
    /// `dropout_rng` is given.
    pub fn encode(
        &self,
        tape: &mut Tape<'_, T>,
        ids: &[TokenId],
        mut dropout_rng: Option<&mut dyn RngCore>,
    ) -> Result<Var> {
        let c = &self.config;
        if ids.is_empty() || ids.len() > c.max_len {
            return Err(Error::invalid(format!(
                "sequence length {} outside [1, {}]",
                ids.len(),
                c.max_len
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i as usize >= c.vocab_size) {
            return Err(Error::invalid(format!("token id {bad} outside vocabulary of {}", c.vocab_size)));
        }
        let positions: Vec<u32> = (0..ids.len() as u32).collect();
        let tok = tape.param(self.layout.token_emb);
        let pos = tape.param(self.layout.position_emb);
        let te = tape.embedding(tok, ids)?;
        let pe = tape.embedding(pos, &positions)?;
        let mut h = tape.add(te, pe)?;

        let eps = T::lit(LAYER_NORM_EPS);
        let dh = c.head_dim();
        let scale = T::lit(1.0 / (dh as f64).sqrt());
        for layer in &self.layout.layers {
            let q = self.linear(tape, h, layer.query_w, layer.query_b)?;
            let k = self.linear(tape, h, layer.key_w, layer.key_b)?;
            let v = self.linear(tape, h, layer.value_w, layer.value_b)?;
            let mut heads = Vec::with_capacity(c.num_heads);
            for head in 0..c.num_heads {
                let qh = tape.slice_cols(q, head * dh, dh)?;
                let kh = tape.slice_cols(k, head * dh, dh)?;
                let vh = tape.slice_cols(v, head * dh, dh)?;
                let kt = tape.transpose(kh)?;
                let scores = tape.matmul(qh, kt)?;
                let scores = tape.scale(scores, scale)?;
                let mut attn = tape.softmax(scores)?;
                if let Some(rng) = dropout_rng.as_deref_mut() {
                    attn = tape.dropout(attn, c.dropout, rng)?;
                }
                heads.push(tape.matmul(attn, vh)?);
            }
            let ctx = if heads.len() == 1 {
                heads[0]
            } else {
                tape.concat_cols(&heads)?
            };
            let attn_out = self.linear(tape, ctx, layer.attn_out_w, layer.attn_out_b)?;
            let res = tape.add(h, attn_out)?;
            h = self.norm(tape, res, layer.attn_norm_g, layer.attn_norm_b, eps)?;

            let mut ff = self.linear(tape, h, layer.ff_in_w, layer.ff_in_b)?;
            ff = tape.gelu(ff)?;
            if let Some(rng) = dropout_rng.as_deref_mut() {
                ff = tape.dropout(ff, c.dropout, rng)?;
            }
            let ff = self.linear(tape, ff, layer.ff_out_w, layer.ff_out_b)?;
            let res = tape.add(h, ff)?;
            h = self.norm(tape, res, layer.ff_norm_g, layer.ff_norm_b, eps)?;
        }
        Ok(h)
    }

    fn linear(&self, tape: &mut Tape<'_, T>, x: Var, w: ParamId, b: ParamId) -> Result<Var> {
        let wv = tape.param(w);
        let bv = tape.param(b);
        let y = tape.matmul(x, wv)?;
        tape.add_row(y, bv)
    }

    fn norm(&self, tape: &mut Tape<'_, T>, x: Var, g: ParamId, b: ParamId, eps: T) -> Result<Var> {
        let gv = tape.param(g);
        let bv = tape.param(b);
        tape.layer_norm(x, gv, bv, eps)
    }

    fn pooler(&self, tape: &mut Tape<'_, T>, hidden: Var, head: &PoolerHead) -> Result<Var> {
        let cls = tape.select_rows(hidden, &[0])?;
        let x = self.linear(tape, cls, head.dense_w, head.dense_b)?;
        let x = tape.tanh(x)?;
        self.linear(tape, x, head.out_w, head.out_b)
    }

    /// `[1, num_classes]` logits from the `[CLS]` row.
    pub fn classification_logits(&self, tape: &mut Tape<'_, T>, hidden: Var) -> Result<Var> {
        self.pooler(tape, hidden, &self.layout.cls)
    }

    /// `[1, num_ops]` augmentation-type logits from the `[CLS]` row.
    pub fn satp_logits(&self, tape: &mut Tape<'_, T>, hidden: Var) -> Result<Var> {
        self.pooler(tape, hidden, &self.layout.satp)
    }

    /// `[positions.len(), vocab_size]` logits, one row per masked position
    /// in the given order.
    pub fn mtp_logits(&self, tape: &mut Tape<'_, T>, hidden: Var, positions: &[usize]) -> Result<Var> {
        if positions.is_empty() {
            return Err(Error::invalid("no masked positions"));
        }
        let rows = tape.select_rows(hidden, positions)?;
        self.linear(tape, rows, self.layout.mtp_w, self.layout.mtp_b)
    }

    /// Class predicted for `ids` in evaluation mode.
    pub fn predict(&self, ids: &[TokenId]) -> Result<usize> {
        let mut tape = self.tape();
        let h = self.encode(&mut tape, ids, None)?;
        let logits = self.classification_logits(&mut tape, h)?;
        Ok(argmax(tape.value(logits)))
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<T: Real>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}
