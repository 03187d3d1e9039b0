//! Multiscale transformer for incomplete trajectories.
//!
//! Pipeline: per-step MLP embedding plus sinusoidal positions, a stack of
//! attention layers whose heads see the sequence at granularities 1..=n and
//! only through observed steps, information-increment pooling of the final
//! per-head outputs into continuity vectors, and an LSTM decoder that emits
//! per-step offsets from the fused representation.

mod batch;
mod config;
mod encoding;

use mstf_numkernel::rng::glorot_uniform;
use mstf_numkernel::{Checkpoint, HeadLayout, ParamId, ParamStore, StreamRng, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

pub use batch::Batch;
pub use config::ModelConfig;
pub use encoding::{iipa_forward, iipa_weights, positional_encoding};

use crate::error::{CoreError, Result};
use crate::point::Point;
use crate::trajdata::NormalizedSample;

const LAYER_NORM_EPS: f64 = 1e-5;
const CHECKPOINT_KIND: &str = "mstf-model";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Multiscale heads over observed steps, information-increment pooling.
    Mstf,
    /// Same network with every head attending to every step and plain mean pooling.
    Vtf,
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::Mstf => "mstf",
            Variant::Vtf => "vtf",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mstf" => Ok(Variant::Mstf),
            "vtf" => Ok(Variant::Vtf),
            other => Err(CoreError::Config(format!("unknown model {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    /// `t_f` positions in the sample's relative frame.
    pub positions: Vec<Point>,
}

/// Per-head motion and continuity representations of one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderOutput {
    /// `[n_heads, len, d_k]`
    pub r_m: Tensor,
    /// `[n_heads, d_k]`
    pub r_c: Tensor,
}

#[derive(Clone, Copy, Debug)]
struct Linear {
    weight: ParamId,
    bias: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct Norm {
    gain: ParamId,
    bias: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct Heads {
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct Block {
    heads: Heads,
    out: Linear,
    norm_attn: Norm,
    ff_in: Linear,
    ff_out: Linear,
    norm_ff: Norm,
}

#[derive(Clone, Debug)]
struct Layout {
    embed_in: Linear,
    embed_out: Linear,
    blocks: Vec<Block>,
    final_heads: Heads,
    dec_init: Linear,
    lstm_x: ParamId,
    lstm_h: ParamId,
    lstm_b: ParamId,
    dec_out: Linear,
}

/// Graph handles for one encoder pass.
pub struct EncoderVars {
    /// Final-layer head outputs, `[batch·len × n·d_k]`.
    pub r_m: Var,
    /// Pooled continuity vectors, `[batch × n·d_k]`.
    pub r_c: Var,
    /// One masked-attention node per layer.
    pub attention: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    variant: Variant,
    params: ParamStore,
    layout: Layout,
}

fn linear(store: &mut ParamStore, rng: &mut StreamRng, name: &str, fan_in: usize, fan_out: usize) -> Linear {
    Linear {
        weight: store.add(format!("{name}.weight"), glorot_uniform(rng, fan_in, fan_out)),
        bias: store.add(format!("{name}.bias"), Tensor::zeros(&[1, fan_out])),
    }
}

fn norm(store: &mut ParamStore, name: &str, width: usize) -> Norm {
    Norm {
        gain: store.add(format!("{name}.gain"), Tensor::ones(&[1, width])),
        bias: store.add(format!("{name}.bias"), Tensor::zeros(&[1, width])),
    }
}

fn heads(store: &mut ParamStore, rng: &mut StreamRng, name: &str, d_model: usize, width: usize) -> Heads {
    Heads {
        wq: store.add(format!("{name}.wq"), glorot_uniform(rng, d_model, width)),
        wk: store.add(format!("{name}.wk"), glorot_uniform(rng, d_model, width)),
        wv: store.add(format!("{name}.wv"), glorot_uniform(rng, d_model, width)),
    }
}

impl Model {
    /// Fresh parameters: weights uniform in ±√(6/(fan_in+fan_out)), biases
    /// zero, normalization gains one.
    pub fn new(config: ModelConfig, variant: Variant, rng: &mut StreamRng) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let w = config.heads_width();
        let hidden = config.decoder_hidden;
        let mut store = ParamStore::new();
        let embed_in = linear(&mut store, rng, "embed.in", 2, d);
        let embed_out = linear(&mut store, rng, "embed.out", d, d);
        let mut blocks = Vec::new();
        for l in 0..config.n_layers - 1 {
            let p = format!("block{l}");
            blocks.push(Block {
                heads: heads(&mut store, rng, &format!("{p}.attn"), d, w),
                out: linear(&mut store, rng, &format!("{p}.attn.out"), w, d),
                norm_attn: norm(&mut store, &format!("{p}.norm_attn"), d),
                ff_in: linear(&mut store, rng, &format!("{p}.ff.in"), d, config.d_ff),
                ff_out: linear(&mut store, rng, &format!("{p}.ff.out"), config.d_ff, d),
                norm_ff: norm(&mut store, &format!("{p}.norm_ff"), d),
            });
        }
        let final_heads = heads(&mut store, rng, "mah", d, w);
        let dec_init = linear(&mut store, rng, "decoder.init", 2 * w, 2 * hidden);
        let lstm_x = store.add("decoder.lstm.wx", glorot_uniform(rng, 2, 4 * hidden));
        let lstm_h = store.add("decoder.lstm.wh", glorot_uniform(rng, hidden, 4 * hidden));
        let lstm_b = store.add("decoder.lstm.bias", Tensor::zeros(&[1, 4 * hidden]));
        let dec_out = linear(&mut store, rng, "decoder.out", hidden, 2);
        Ok(Self {
            config,
            variant,
            params: store,
            layout: Layout {
                embed_in,
                embed_out,
                blocks,
                final_heads,
                dec_init,
                lstm_x,
                lstm_h,
                lstm_b,
                dec_out,
            },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.numel()
    }

    /// Same parameters, other variant.
    pub fn with_variant(&self, variant: Variant) -> Self {
        Self {
            variant,
            ..self.clone()
        }
    }

    /// Zeroes every decoder parameter.
    pub fn zero_decoder(&mut self) {
        let l = &self.layout;
        let ids = [
            l.dec_init.weight,
            l.dec_init.bias,
            l.lstm_x,
            l.lstm_h,
            l.lstm_b,
            l.dec_out.weight,
            l.dec_out.bias,
        ];
        for id in ids {
            self.params.get_mut(id).data_mut().fill(0.0);
        }
    }

    pub fn batch(&self, samples: &[NormalizedSample]) -> Result<Batch> {
        Batch::new(&self.config, self.variant, samples)
    }

    fn apply_linear(&self, tape: &mut Tape, vars: &[Var], x: Var, lin: Linear) -> Result<Var> {
        let y = tape.matmul(x, vars[lin.weight.0])?;
        Ok(tape.add_row(y, vars[lin.bias.0])?)
    }

    fn apply_norm(&self, tape: &mut Tape, vars: &[Var], x: Var, n: Norm) -> Result<Var> {
        let y = tape.layer_norm_rows(x, LAYER_NORM_EPS)?;
        let y = tape.mul_row(y, vars[n.gain.0])?;
        Ok(tape.add_row(y, vars[n.bias.0])?)
    }

    fn head_layout(&self, batch: usize) -> HeadLayout {
        HeadLayout {
            batch,
            len: self.config.t_h,
            heads: self.config.n_heads,
            head_dim: self.config.d_k(),
        }
    }

    /// Per-step MLP embedding of `[rows × 2]` scaled inputs plus positions.
    fn embed_graph(&self, tape: &mut Tape, vars: &[Var], inputs: Var, batch: usize) -> Result<Var> {
        let h = self.apply_linear(tape, vars, inputs, self.layout.embed_in)?;
        let h = tape.relu(h);
        let h = self.apply_linear(tape, vars, h, self.layout.embed_out)?;
        let pe = positional_encoding(self.config.t_h, self.config.d_model);
        let tiled = Tensor::matrix(
            batch * self.config.t_h,
            self.config.d_model,
            pe.data().repeat(batch),
        )?;
        let pe = tape.constant(tiled);
        Ok(tape.add(h, pe)?)
    }

    fn heads_graph(&self, tape: &mut Tape, vars: &[Var], x: Var, heads: Heads, batch: &Batch) -> Result<Var> {
        let q = tape.matmul(x, vars[heads.wq.0])?;
        let k = tape.matmul(x, vars[heads.wk.0])?;
        let v = tape.matmul(x, vars[heads.wv.0])?;
        Ok(tape.masked_attention(q, k, v, self.head_layout(batch.size), batch.attention_mask.clone())?)
    }

    /// Records the encoder for a batch and returns the handles.
    pub fn encoder_graph(&self, tape: &mut Tape, vars: &[Var], batch: &Batch) -> Result<EncoderVars> {
        let inputs = tape.constant(batch.inputs.clone());
        let mut h = self.embed_graph(tape, vars, inputs, batch.size)?;
        let mut attention = Vec::new();
        for block in &self.layout.blocks {
            let a = self.heads_graph(tape, vars, h, block.heads, batch)?;
            attention.push(a);
            let o = self.apply_linear(tape, vars, a, block.out)?;
            let res = tape.add(h, o)?;
            let h1 = self.apply_norm(tape, vars, res, block.norm_attn)?;
            let f = self.apply_linear(tape, vars, h1, block.ff_in)?;
            let f = tape.relu(f);
            let f = self.apply_linear(tape, vars, f, block.ff_out)?;
            let res = tape.add(h1, f)?;
            h = self.apply_norm(tape, vars, res, block.norm_ff)?;
        }
        let r_m = self.heads_graph(tape, vars, h, self.layout.final_heads, batch)?;
        attention.push(r_m);
        let r_c = tape.head_pool(r_m, self.head_layout(batch.size), batch.pool_weights.clone())?;
        Ok(EncoderVars { r_m, r_c, attention })
    }

    /// Fused representation: last-step motion features beside continuity vectors.
    fn fuse(&self, tape: &mut Tape, enc: &EncoderVars, batch: usize) -> Result<Var> {
        let len = self.config.t_h;
        let last: Vec<usize> = (0..batch).map(|b| b * len + len - 1).collect();
        let last = tape.gather_rows(enc.r_m, &last)?;
        Ok(tape.concat(&[last, enc.r_c], 1)?)
    }

    /// LSTM rollout from the fused representation `[batch × 2·n·d_k]`.
    ///
    /// Returns positions `[t_f·batch × 2]` in meters, step-major (row
    /// `t·batch + b`), accumulated from the origin.
    pub fn decoder_graph(&self, tape: &mut Tape, vars: &[Var], fused: Var, batch: usize) -> Result<Var> {
        let hidden = self.config.decoder_hidden;
        let l = &self.layout;
        let init = self.apply_linear(tape, vars, fused, l.dec_init)?;
        let h0 = tape.slice(init, 1, 0, hidden)?;
        let mut h = tape.tanh(h0);
        let mut c = tape.slice(init, 1, hidden, hidden)?;
        let mut x = tape.constant(Tensor::zeros(&[batch, 2]));
        let mut pos = tape.constant(Tensor::zeros(&[batch, 2]));
        let mut steps = Vec::with_capacity(self.config.t_f);
        for _ in 0..self.config.t_f {
            let gx = tape.matmul(x, vars[l.lstm_x.0])?;
            let gh = tape.matmul(h, vars[l.lstm_h.0])?;
            let gates = tape.add(gx, gh)?;
            let gates = tape.add_row(gates, vars[l.lstm_b.0])?;
            let i = tape.slice(gates, 1, 0, hidden)?;
            let i = tape.sigmoid(i);
            let f = tape.slice(gates, 1, hidden, hidden)?;
            let f = tape.sigmoid(f);
            let g = tape.slice(gates, 1, 2 * hidden, hidden)?;
            let g = tape.tanh(g);
            let o = tape.slice(gates, 1, 3 * hidden, hidden)?;
            let o = tape.sigmoid(o);
            let keep = tape.mul(f, c)?;
            let write = tape.mul(i, g)?;
            c = tape.add(keep, write)?;
            let tc = tape.tanh(c);
            h = tape.mul(o, tc)?;
            let offset = self.apply_linear(tape, vars, h, l.dec_out)?;
            let meters = tape.scale(offset, self.config.coord_scale)?;
            pos = tape.add(pos, meters)?;
            steps.push(pos);
            x = offset;
        }
        Ok(tape.concat(&steps, 0)?)
    }

    /// Full forward pass; returns step-major positions `[t_f·batch × 2]`.
    pub fn forward_graph(&self, tape: &mut Tape, vars: &[Var], batch: &Batch) -> Result<(Var, EncoderVars)> {
        let enc = self.encoder_graph(tape, vars, batch)?;
        let fused = self.fuse(tape, &enc, batch.size)?;
        let positions = self.decoder_graph(tape, vars, fused, batch.size)?;
        Ok((positions, enc))
    }

    /// Mean over samples and steps of the squared Euclidean error.
    pub fn loss_graph(&self, tape: &mut Tape, positions: Var, batch: &Batch) -> Result<Var> {
        let targets = batch
            .targets
            .as_ref()
            .ok_or_else(|| CoreError::Config("batch has no targets".into()))?;
        let targets = tape.constant(targets.clone());
        let diff = tape.sub(positions, targets)?;
        let sq = tape.mul(diff, diff)?;
        let total = tape.sum(sq);
        Ok(tape.scale(total, 1.0 / (batch.size * self.config.t_f) as f64)?)
    }

    pub fn batch_loss(&self, batch: &Batch) -> Result<f64> {
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape);
        let (pos, _) = self.forward_graph(&mut tape, &vars, batch)?;
        let loss = self.loss_graph(&mut tape, pos, batch)?;
        Ok(tape.value(loss).item())
    }

    /// Loss and its gradient for every parameter, in store order.
    pub fn loss_and_grads(&self, batch: &Batch) -> Result<(f64, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape);
        let (pos, _) = self.forward_graph(&mut tape, &vars, batch)?;
        let loss = self.loss_graph(&mut tape, pos, batch)?;
        let grads = tape.backward(loss)?;
        let grads = vars
            .iter()
            .zip(self.params.tensors())
            .map(|(&v, p)| grads.get_or_zeros(v, p.shape()))
            .collect();
        Ok((tape.value(loss).item(), grads))
    }

    pub fn predict_batch(&self, samples: &[NormalizedSample]) -> Result<Vec<Prediction>> {
        if samples.is_empty() {
            return Ok(Vec::new());
        }
        let batch = self.batch(samples)?;
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape);
        let (pos, _) = self.forward_graph(&mut tape, &vars, &batch)?;
        let value = tape.value(pos);
        value.ensure_finite("prediction")?;
        let n = batch.size;
        Ok((0..n)
            .map(|b| Prediction {
                positions: (0..self.config.t_f)
                    .map(|t| {
                        let r = value.row(t * n + b);
                        Point::new(r[0], r[1])
                    })
                    .collect(),
            })
            .collect())
    }

    pub fn predict(&self, sample: &NormalizedSample) -> Result<Prediction> {
        Ok(self.predict_batch(std::slice::from_ref(sample))?.remove(0))
    }

    /// Embedding `[len × d_model]` of one masked history (relative meters).
    pub fn embed(&self, x_miss: &[Point]) -> Result<Tensor> {
        if x_miss.len() != self.config.t_h {
            return Err(CoreError::LengthMismatch {
                what: "embed",
                expected: self.config.t_h,
                actual: x_miss.len(),
            });
        }
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape);
        let inputs = tape.constant(batch::scaled_inputs(&[x_miss.to_vec()], self.config.coord_scale));
        let e = self.embed_graph(&mut tape, &vars, inputs, 1)?;
        Ok(tape.value(e).clone())
    }

    /// Motion and continuity representations of one sample.
    pub fn encode(&self, sample: &NormalizedSample) -> Result<EncoderOutput> {
        let batch = self.batch(std::slice::from_ref(sample))?;
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape);
        let enc = self.encoder_graph(&mut tape, &vars, &batch)?;
        let (n, len, dk) = (self.config.n_heads, self.config.t_h, self.config.d_k());
        let flat = tape.value(enc.r_m);
        let mut r_m = Vec::with_capacity(n * len * dk);
        for h in 0..n {
            for j in 0..len {
                r_m.extend_from_slice(&flat.row(j)[h * dk..(h + 1) * dk]);
            }
        }
        Ok(EncoderOutput {
            r_m: Tensor::new(vec![n, len, dk], r_m)?,
            r_c: Tensor::new(vec![n, dk], tape.value(enc.r_c).data().to_vec())?,
        })
    }

    /// Decodes a single encoder output.
    pub fn decode(&self, enc: &EncoderOutput) -> Result<Prediction> {
        let (n, len, dk) = (self.config.n_heads, self.config.t_h, self.config.d_k());
        if enc.r_m.shape() != [n, len, dk] || enc.r_c.shape() != [n, dk] {
            return Err(CoreError::Config(format!(
                "encoder output shapes {:?}/{:?} do not match the model",
                enc.r_m.shape(),
                enc.r_c.shape()
            )));
        }
        let mut fused = Vec::with_capacity(2 * n * dk);
        for h in 0..n {
            let start = (h * len + len - 1) * dk;
            fused.extend_from_slice(&enc.r_m.data()[start..start + dk]);
        }
        fused.extend_from_slice(enc.r_c.data());
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape);
        let fused = tape.constant(Tensor::matrix(1, 2 * n * dk, fused)?);
        let pos = self.decoder_graph(&mut tape, &vars, fused, 1)?;
        Ok(Prediction {
            positions: tape.value(pos).data().chunks(2).map(|c| Point::new(c[0], c[1])).collect(),
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = serde_json::json!({
            "kind": CHECKPOINT_KIND,
            "variant": self.variant,
            "config": self.config,
        });
        Checkpoint::new(meta.to_string(), self.params.blocks())
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        #[derive(Deserialize)]
        struct Meta {
            kind: String,
            variant: Variant,
            config: ModelConfig,
        }
        let meta: Meta = serde_json::from_str(&ck.metadata)
            .map_err(|e| CoreError::Config(format!("checkpoint metadata: {e}")))?;
        if meta.kind != CHECKPOINT_KIND {
            return Err(CoreError::Config(format!("checkpoint kind {:?}", meta.kind)));
        }
        // Shapes come from the config; values are overwritten below.
        let mut rng = mstf_numkernel::SeedRoot(0).stream("checkpoint-shape");
        let mut model = Model::new(meta.config, meta.variant, &mut rng)?;
        model.params.load_blocks(&ck.blocks)?;
        Ok(model)
    }
}

/// Mean squared Euclidean error between a prediction and the true future.
pub fn loss(pred: &Prediction, truth: &[Point]) -> Result<f64> {
    if pred.positions.len() != truth.len() || truth.is_empty() {
        return Err(CoreError::LengthMismatch {
            what: "loss",
            expected: truth.len(),
            actual: pred.positions.len(),
        });
    }
    Ok(pred
        .positions
        .iter()
        .zip(truth)
        .map(|(&p, &t)| (p - t).norm_sq())
        .sum::<f64>()
        / truth.len() as f64)
}
