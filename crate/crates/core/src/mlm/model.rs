use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::vocab::MASK;
use crate::alterrep::{alter, PushSpec};
use crate::embedding::EmbeddingMatrix;
use crate::error::{check_dim, Error, Result};
use crate::projection::DirectionBasis;
use crate::rng;

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub max_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            layers: 2,
            heads: 4,
            ff_dim: 128,
            max_len: 256,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.heads == 0 || self.dim % self.heads != 0 {
            return Err(Error::InvalidParameter(format!(
                "dim {} must be a positive multiple of heads {}",
                self.dim, self.heads
            )));
        }
        if self.ff_dim == 0 || self.max_len == 0 {
            return Err(Error::InvalidParameter("ff_dim and max_len must be positive".into()));
        }
        Ok(())
    }
}

/// One pre-LayerNorm encoder block. Weight matrices are stored `in x out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    ln1_g: Array1<f64>,
    ln1_b: Array1<f64>,
    wq: Array2<f64>,
    bq: Array1<f64>,
    wk: Array2<f64>,
    bk: Array1<f64>,
    wv: Array2<f64>,
    bv: Array1<f64>,
    wo: Array2<f64>,
    bo: Array1<f64>,
    ln2_g: Array1<f64>,
    ln2_b: Array1<f64>,
    w1: Array2<f64>,
    b1: Array1<f64>,
    w2: Array2<f64>,
    b2: Array1<f64>,
}

impl Layer {
    fn init<R: Rng>(c: &ModelConfig, rng: &mut R) -> Self {
        let d = c.dim;
        let out_scale = 1.0 / (2.0 * c.layers as f64).sqrt();
        Layer {
            ln1_g: Array1::ones(d),
            ln1_b: Array1::zeros(d),
            wq: xavier(d, d, 1.0, rng),
            bq: Array1::zeros(d),
            wk: xavier(d, d, 1.0, rng),
            bk: Array1::zeros(d),
            wv: xavier(d, d, 1.0, rng),
            bv: Array1::zeros(d),
            wo: xavier(d, d, out_scale, rng),
            bo: Array1::zeros(d),
            ln2_g: Array1::ones(d),
            ln2_b: Array1::zeros(d),
            w1: xavier(d, c.ff_dim, 1.0, rng),
            b1: Array1::zeros(c.ff_dim),
            w2: xavier(c.ff_dim, d, out_scale, rng),
            b2: Array1::zeros(d),
        }
    }

    fn tensors<'a>(&'a self, out: &mut Vec<&'a [f64]>) {
        for a in [&self.ln1_g, &self.ln1_b, &self.bq, &self.bk, &self.bv, &self.bo, &self.ln2_g, &self.ln2_b, &self.b1, &self.b2] {
            out.push(a.as_slice().expect("contiguous"));
        }
        for a in [&self.wq, &self.wk, &self.wv, &self.wo, &self.w1, &self.w2] {
            out.push(a.as_slice().expect("contiguous"));
        }
    }

    fn tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        for a in [
            &mut self.ln1_g,
            &mut self.ln1_b,
            &mut self.bq,
            &mut self.bk,
            &mut self.bv,
            &mut self.bo,
            &mut self.ln2_g,
            &mut self.ln2_b,
            &mut self.b1,
            &mut self.b2,
        ] {
            out.push(a.as_slice_mut().expect("contiguous"));
        }
        for a in [&mut self.wq, &mut self.wk, &mut self.wv, &mut self.wo, &mut self.w1, &mut self.w2] {
            out.push(a.as_slice_mut().expect("contiguous"));
        }
    }
}

fn xavier<R: Rng>(rows: usize, cols: usize, scale: f64, rng: &mut R) -> Array2<f64> {
    let std = scale * (2.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || std * rng.sample::<f64, _>(StandardNormal))
}

/// Transformer encoder with learned absolute positions, a final LayerNorm
/// and an untied unembedding head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderModel {
    pub config: ModelConfig,
    pub seed: u64,
    pub(crate) tok_emb: Array2<f64>,
    pub(crate) pos_emb: Array2<f64>,
    pub(crate) layers: Vec<Layer>,
    pub(crate) lnf_g: Array1<f64>,
    pub(crate) lnf_b: Array1<f64>,
    /// `vocab x dim`.
    pub(crate) unembedding: Array2<f64>,
    pub(crate) unembedding_bias: Array1<f64>,
}

impl EncoderModel {
    pub fn new(config: ModelConfig, vocab_size: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if vocab_size <= MASK {
            return Err(Error::VocabMismatch(format!("vocabulary of {vocab_size} pieces has no MASK")));
        }
        let d = config.dim;
        let mut rng = rng::seeded(seed, 0x30de1);
        let tok_emb = Array2::from_shape_simple_fn((vocab_size, d), || 0.5 * rng.sample::<f64, _>(StandardNormal));
        let pos_emb = Array2::from_shape_fn((config.max_len, d), |(t, i)| {
            let rate = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let x = t as f64 * rate;
            0.5 * if i % 2 == 0 { x.sin() } else { x.cos() }
        });
        let layers = (0..config.layers).map(|_| Layer::init(&config, &mut rng)).collect();
        let unembedding = xavier(vocab_size, d, 1.0, &mut rng);
        Ok(Self {
            config,
            seed,
            tok_emb,
            pos_emb,
            layers,
            lnf_g: Array1::ones(d),
            lnf_b: Array1::zeros(d),
            unembedding,
            unembedding_bias: Array1::zeros(vocab_size),
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.tok_emb.nrows()
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|a| a.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|a| a.iter().all(|x| x.is_finite()))
    }

    pub(crate) fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.tensors_mut().into_iter().for_each(|a| a.fill(0.0));
        z
    }

    /// Every parameter tensor as a flat slice, in a fixed order.
    pub(crate) fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for a in [&self.tok_emb, &self.pos_emb, &self.unembedding] {
            out.push(a.as_slice().expect("contiguous"));
        }
        for a in [&self.lnf_g, &self.lnf_b, &self.unembedding_bias] {
            out.push(a.as_slice().expect("contiguous"));
        }
        for l in &self.layers {
            l.tensors(&mut out);
        }
        out
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for a in [&mut self.tok_emb, &mut self.pos_emb, &mut self.unembedding] {
            out.push(a.as_slice_mut().expect("contiguous"));
        }
        for a in [&mut self.lnf_g, &mut self.lnf_b, &mut self.unembedding_bias] {
            out.push(a.as_slice_mut().expect("contiguous"));
        }
        for l in &mut self.layers {
            l.tensors_mut(&mut out);
        }
        out
    }

    /// Last-layer states, one row per position.
    pub fn encode(&self, ids: &[usize]) -> Result<EmbeddingMatrix> {
        Ok(EmbeddingMatrix::new(self.forward(&[ids])?.states))
    }

    /// Encode several sequences in one packed pass.
    pub fn encode_many(&self, seqs: &[&[usize]]) -> Result<Vec<EmbeddingMatrix>> {
        let fwd = self.forward(seqs)?;
        Ok(fwd
            .spans
            .iter()
            .map(|&(o, t)| EmbeddingMatrix::new(fwd.states.slice(s![o..o + t, ..]).to_owned()))
            .collect())
    }

    /// Vocabulary log-probabilities for one last-layer state.
    pub fn logits_from_state(&self, state: &[f64]) -> Result<Vec<f64>> {
        head_log_probs(self.unembedding.view(), self.unembedding_bias.view(), state)
    }

    /// Log-probabilities at `mask_pos`, optionally after altering that
    /// position's last-layer state.
    pub fn predict_masked(
        &self,
        ids: &[usize],
        mask_pos: usize,
        intervention: Option<(&DirectionBasis, &PushSpec)>,
    ) -> Result<Vec<f64>> {
        let state = self.mask_state(ids, mask_pos)?;
        match intervention {
            None => self.logits_from_state(&state),
            Some((basis, push)) => self.logits_from_state(&alter(&state, basis, push)?.altered),
        }
    }

    /// The last-layer state at a MASK position.
    pub fn mask_state(&self, ids: &[usize], mask_pos: usize) -> Result<Vec<f64>> {
        if ids.get(mask_pos) != Some(&MASK) {
            return Err(Error::MaskMissing(mask_pos));
        }
        let states = self.encode(ids)?;
        Ok(states.row(mask_pos).to_vec())
    }

    pub fn head(&self, vocab: Vec<String>) -> Result<OutputHead> {
        if vocab.len() != self.vocab_size() {
            return Err(Error::VocabMismatch(format!(
                "{} entries for a {}-piece head",
                vocab.len(),
                self.vocab_size()
            )));
        }
        Ok(OutputHead {
            vocab,
            unembedding: self.unembedding.clone(),
            bias: self.unembedding_bias.clone(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text)?;
        m.config.validate()?;
        Ok(m)
    }

    pub(crate) fn forward(&self, seqs: &[&[usize]]) -> Result<Forward> {
        let d = self.config.dim;
        let v = self.vocab_size();
        let mut spans = Vec::with_capacity(seqs.len());
        let mut ids = Vec::new();
        for seq in seqs {
            if seq.is_empty() {
                return Err(Error::EmptySentence);
            }
            if seq.len() > self.config.max_len {
                return Err(Error::SequenceTooLong {
                    len: seq.len(),
                    max: self.config.max_len,
                });
            }
            if let Some(&bad) = seq.iter().find(|&&id| id >= v) {
                return Err(Error::VocabMismatch(format!("piece id {bad} outside a {v}-piece vocabulary")));
            }
            spans.push((ids.len(), seq.len()));
            ids.extend_from_slice(seq);
        }
        let n = ids.len();
        let mut x = Array2::zeros((n, d));
        for &(o, t) in &spans {
            for p in 0..t {
                let mut row = x.row_mut(o + p);
                row.assign(&self.tok_emb.row(ids[o + p]));
                row += &self.pos_emb.row(p);
            }
        }
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (next, cache) = layer_forward(layer, &x, &spans, self.config.heads);
            caches.push(cache);
            x = next;
        }
        let (states, lnf) = layer_norm(&x, &self.lnf_g, &self.lnf_b);
        Ok(Forward {
            states,
            spans,
            ids,
            layers: caches,
            lnf,
        })
    }

    /// Accumulate parameter gradients into `grads` given the loss gradient
    /// with respect to the last-layer states.
    pub(crate) fn backward(&self, fwd: &Forward, dstates: &Array2<f64>, grads: &mut EncoderModel) {
        let (mut dx, dg, db) = layer_norm_backward(dstates, &fwd.lnf, &self.lnf_g);
        grads.lnf_g += &dg;
        grads.lnf_b += &db;
        for (l, (layer, cache)) in self.layers.iter().zip(&fwd.layers).enumerate().rev() {
            dx = layer_backward(layer, cache, &dx, &fwd.spans, self.config.heads, &mut grads.layers[l]);
        }
        for &(o, t) in &fwd.spans {
            for p in 0..t {
                let g = dx.row(o + p);
                let mut te = grads.tok_emb.row_mut(fwd.ids[o + p]);
                te += &g;
                let mut pe = grads.pos_emb.row_mut(p);
                pe += &g;
            }
        }
    }
}

/// Unembedding matrix and bias detached from the encoder, as exchanged
/// with external tooling.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputHead {
    pub vocab: Vec<String>,
    /// `vocab x dim`.
    pub unembedding: Array2<f64>,
    pub bias: Array1<f64>,
}

impl OutputHead {
    pub fn dim(&self) -> usize {
        self.unembedding.ncols()
    }

    pub fn logits_from_state(&self, state: &[f64]) -> Result<Vec<f64>> {
        head_log_probs(self.unembedding.view(), self.bias.view(), state)
    }
}

fn head_log_probs(u: ArrayView2<f64>, bias: ArrayView1<f64>, state: &[f64]) -> Result<Vec<f64>> {
    check_dim(u.ncols(), state.len())?;
    let h = ArrayView1::from(state);
    let mut z = u.dot(&h) + bias;
    log_softmax_in_place(z.as_slice_mut().expect("contiguous"));
    Ok(z.to_vec())
}

pub(crate) fn log_softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    z.iter_mut().for_each(|x| *x -= lse);
}

pub(crate) struct Forward {
    pub states: Array2<f64>,
    /// (offset, length) of each packed sequence.
    pub spans: Vec<(usize, usize)>,
    ids: Vec<usize>,
    layers: Vec<LayerCache>,
    lnf: LnCache,
}

struct LnCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

struct LayerCache {
    ln1: LnCache,
    a: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    ctx: Array2<f64>,
    ln2: LnCache,
    b: Array2<f64>,
    u: Array2<f64>,
    act: Array2<f64>,
}

fn layer_norm(x: &Array2<f64>, g: &Array1<f64>, b: &Array1<f64>) -> (Array2<f64>, LnCache) {
    let d = x.ncols() as f64;
    let mean = x.sum_axis(Axis(1)) / d;
    let centered = x - &mean.view().insert_axis(Axis(1));
    let var = centered.mapv(|c| c * c).sum_axis(Axis(1)) / d;
    let inv_std = var.mapv(|v| 1.0 / (v + LN_EPS).sqrt());
    let xhat = centered * inv_std.view().insert_axis(Axis(1));
    let y = &xhat * g + b;
    (y, LnCache { xhat, inv_std })
}

fn layer_norm_backward(dy: &Array2<f64>, cache: &LnCache, g: &Array1<f64>) -> (Array2<f64>, Array1<f64>, Array1<f64>) {
    let d = dy.ncols() as f64;
    let dg = (dy * &cache.xhat).sum_axis(Axis(0));
    let db = dy.sum_axis(Axis(0));
    let dxhat = dy * g;
    let mean_dxhat = dxhat.sum_axis(Axis(1)) / d;
    let mean_dxhat_xhat = (&dxhat * &cache.xhat).sum_axis(Axis(1)) / d;
    let mut dx = dxhat - &mean_dxhat.insert_axis(Axis(1)) - &cache.xhat * &mean_dxhat_xhat.insert_axis(Axis(1));
    dx *= &cache.inv_std.view().insert_axis(Axis(1));
    (dx, dg, db)
}

const GELU_C: f64 = 0.797_884_560_802_865_4;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

fn softmax_rows(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|x| (x - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

fn layer_forward(layer: &Layer, x: &Array2<f64>, spans: &[(usize, usize)], heads: usize) -> (Array2<f64>, LayerCache) {
    let (n, d) = x.dim();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let (a, ln1) = layer_norm(x, &layer.ln1_g, &layer.ln1_b);
    let q = a.dot(&layer.wq) + &layer.bq;
    let k = a.dot(&layer.wk) + &layer.bk;
    let v = a.dot(&layer.wv) + &layer.bv;
    let mut ctx = Array2::zeros((n, d));
    let mut probs = Vec::with_capacity(spans.len() * heads);
    for &(o, t) in spans {
        for h in 0..heads {
            let (r, c) = (o..o + t, h * dh..(h + 1) * dh);
            let qh = q.slice(s![r.clone(), c.clone()]);
            let kh = k.slice(s![r.clone(), c.clone()]);
            let vh = v.slice(s![r.clone(), c.clone()]);
            let mut p = qh.dot(&kh.t()) * scale;
            softmax_rows(&mut p);
            ctx.slice_mut(s![r, c]).assign(&p.dot(&vh));
            probs.push(p);
        }
    }
    let x1 = x + &(ctx.dot(&layer.wo) + &layer.bo);
    let (b, ln2) = layer_norm(&x1, &layer.ln2_g, &layer.ln2_b);
    let u = b.dot(&layer.w1) + &layer.b1;
    let act = u.mapv(gelu);
    let out = &x1 + &(act.dot(&layer.w2) + &layer.b2);
    let cache = LayerCache {
        ln1,
        a,
        q,
        k,
        v,
        probs,
        ctx,
        ln2,
        b,
        u,
        act,
    };
    (out, cache)
}

fn layer_backward(
    layer: &Layer,
    c: &LayerCache,
    dout: &Array2<f64>,
    spans: &[(usize, usize)],
    heads: usize,
    g: &mut Layer,
) -> Array2<f64> {
    let (n, d) = dout.dim();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();

    // feed-forward branch
    g.w2 += &c.act.t().dot(dout);
    g.b2 += &dout.sum_axis(Axis(0));
    let mut du = dout.dot(&layer.w2.t());
    Zip::from(&mut du).and(&c.u).for_each(|d, &u| *d *= gelu_grad(u));
    g.w1 += &c.b.t().dot(&du);
    g.b1 += &du.sum_axis(Axis(0));
    let dbn = du.dot(&layer.w1.t());
    let (dln2, dg2, db2) = layer_norm_backward(&dbn, &c.ln2, &layer.ln2_g);
    g.ln2_g += &dg2;
    g.ln2_b += &db2;
    let dx1 = dout + &dln2;

    // attention branch
    g.wo += &c.ctx.t().dot(&dx1);
    g.bo += &dx1.sum_axis(Axis(0));
    let dctx = dx1.dot(&layer.wo.t());
    let mut dq = Array2::zeros((n, d));
    let mut dk = Array2::zeros((n, d));
    let mut dv = Array2::zeros((n, d));
    for (si, &(o, t)) in spans.iter().enumerate() {
        for h in 0..heads {
            let (r, cols) = (o..o + t, h * dh..(h + 1) * dh);
            let p = &c.probs[si * heads + h];
            let dc = dctx.slice(s![r.clone(), cols.clone()]);
            let qh = c.q.slice(s![r.clone(), cols.clone()]);
            let kh = c.k.slice(s![r.clone(), cols.clone()]);
            let vh = c.v.slice(s![r.clone(), cols.clone()]);
            let dp = dc.dot(&vh.t());
            dv.slice_mut(s![r.clone(), cols.clone()]).assign(&p.t().dot(&dc));
            let rowsum = (&dp * p).sum_axis(Axis(1));
            let ds = (dp - &rowsum.insert_axis(Axis(1))) * p * scale;
            dq.slice_mut(s![r.clone(), cols.clone()]).assign(&ds.dot(&kh));
            dk.slice_mut(s![r, cols]).assign(&ds.t().dot(&qh));
        }
    }
    g.wq += &c.a.t().dot(&dq);
    g.bq += &dq.sum_axis(Axis(0));
    g.wk += &c.a.t().dot(&dk);
    g.bk += &dk.sum_axis(Axis(0));
    g.wv += &c.a.t().dot(&dv);
    g.bv += &dv.sum_axis(Axis(0));
    let da = dq.dot(&layer.wq.t()) + dk.dot(&layer.wk.t()) + dv.dot(&layer.wv.t());
    let (dln1, dg1, db1) = layer_norm_backward(&da, &c.ln1, &layer.ln1_g);
    g.ln1_g += &dg1;
    g.ln1_b += &db1;
    dx1 + dln1
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> EncoderModel {
        let cfg = ModelConfig {
            dim: 8,
            layers: 2,
            heads: 2,
            ff_dim: 12,
            max_len: 16,
        };
        EncoderModel::new(cfg, 7, 11).unwrap()
    }

    #[test]
    fn encode_shapes_and_determinism() {
        let m = tiny();
        let a = m.encode(&[3, 4, 5]).unwrap();
        assert_eq!((a.nrows(), a.dim()), (3, 8));
        assert_eq!(a, m.encode(&[3, 4, 5]).unwrap());
        assert_eq!(m.encode(&[4]).unwrap().nrows(), 1);
        let packed = m.encode_many(&[&[3, 4, 5], &[6, 1]]).unwrap();
        assert!(packed[0].array().iter().zip(a.array()).all(|(x, y)| (x - y).abs() < 1e-12));
        assert!(matches!(m.encode(&[]), Err(Error::EmptySentence)));
        assert!(matches!(m.encode(&[3; 17]), Err(Error::SequenceTooLong { len: 17, max: 16 })));
        assert!(matches!(m.encode(&[9]), Err(Error::VocabMismatch(_))));
    }

    #[test]
    fn head_normalizes() {
        let m = tiny();
        let lp = m.logits_from_state(&[0.3; 8]).unwrap();
        let lse = lp.iter().map(|x| x.exp()).sum::<f64>().ln();
        assert!(lse.abs() < 1e-9);
        assert!(matches!(m.logits_from_state(&[0.0; 3]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn zero_state_and_bias_is_uniform() {
        let m = tiny();
        let lp = m.logits_from_state(&[0.0; 8]).unwrap();
        for x in lp {
            assert!((x + 7f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn predict_masked_checks_the_mask() {
        let m = tiny();
        assert!(matches!(m.predict_masked(&[3, 4], 1, None), Err(Error::MaskMissing(1))));
        assert!(matches!(m.predict_masked(&[3, 4], 5, None), Err(Error::MaskMissing(5))));
        let lp = m.predict_masked(&[3, MASK, 4], 1, None).unwrap();
        let st = m.encode(&[3, MASK, 4]).unwrap();
        assert_eq!(lp, m.logits_from_state(st.row(1).as_slice().unwrap()).unwrap());
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = tiny();
        let back = EncoderModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
    }

    fn loss(m: &EncoderModel, seqs: &[&[usize]], targets: &[(usize, usize)]) -> f64 {
        let f = m.forward(seqs).unwrap();
        targets
            .iter()
            .map(|&(row, piece)| -m.logits_from_state(f.states.row(row).as_slice().unwrap()).unwrap()[piece])
            .sum()
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut m = tiny();
        // break LayerNorm symmetry so gain/bias gradients are exercised
        let mut r = rng::seeded(3, 3);
        for a in m.tensors_mut() {
            a.iter_mut().for_each(|x| *x += 0.05 * r.sample::<f64, _>(StandardNormal));
        }
        let seqs: [&[usize]; 2] = [&[3, 1, 4, 5], &[6, 2, 1]];
        let targets = [(1usize, 4usize), (3, 6), (6, 5)];

        let f = m.forward(&seqs).unwrap();
        let mut grads = m.zeros_like();
        let mut dstates = Array2::zeros(f.states.dim());
        for &(row, piece) in &targets {
            let lp = m.logits_from_state(f.states.row(row).as_slice().unwrap()).unwrap();
            let mut dz: Array1<f64> = lp.iter().map(|x| x.exp()).collect();
            dz[piece] -= 1.0;
            let h = f.states.row(row);
            for (i, &dzi) in dz.iter().enumerate() {
                let mut ur = grads.unembedding.row_mut(i);
                ur.scaled_add(dzi, &h);
            }
            grads.unembedding_bias += &dz;
            let mut dr = dstates.row_mut(row);
            dr += &dz.dot(&m.unembedding);
        }
        m.backward(&f, &dstates, &mut grads);

        let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|a| a.to_vec()).collect();
        let eps = 1e-6;
        let mut worst = 0.0f64;
        let tensor_count = analytic.len();
        for t in 0..tensor_count {
            for i in 0..analytic[t].len() {
                let bump = |delta: f64| {
                    let mut p = m.clone();
                    p.tensors_mut()[t][i] += delta;
                    loss(&p, &seqs, &targets)
                };
                let numeric = (bump(eps) - bump(-eps)) / (2.0 * eps);
                let a = analytic[t][i];
                let err = (numeric - a).abs() / (1e-4 + numeric.abs().max(a.abs()));
                worst = worst.max(err);
            }
        }
        assert!(worst < 1e-4, "worst relative gradient error {worst}");
    }
}
