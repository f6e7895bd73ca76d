//! Decoder-only transformer with a scalar value head and hand-written
//! backward pass. Parameters live in one flat buffer addressed by a layout
//! derived from the configuration, so optimizers, clipping, checkpoints and
//! finite-difference checks all work on plain slices.

use std::ops::Range;

use ndarray::{s, Array1, Array2, Array3, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::tokenizer::TokenId;
use super::{PolicyError, Scalar};

const LN_EPS: f64 = 1e-5;
const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub max_seq_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 256,
            d_model: 128,
            n_layers: 2,
            n_heads: 4,
            max_seq_len: 256,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        let bad = |m: &str| Err(PolicyError::InvalidConfig(m.to_string()));
        if self.vocab_size == 0 {
            return bad("vocab_size must be positive");
        }
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return bad("d_model must be a positive multiple of n_heads");
        }
        if self.max_seq_len == 0 {
            return bad("max_seq_len must be positive");
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    fn ffn_dim(&self) -> usize {
        4 * self.d_model
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelRole {
    TrainablePolicy,
    FrozenReference,
}

/// How the output projection is initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadInit {
    /// All-zero logits at start: initial per-token CE is exactly ln(vocab).
    Zero,
    /// Every parameter (gains and biases included) drawn at random; used by
    /// gradient checks so no path is trivially zero.
    FullyRandom,
}

/// A `rows × cols` tensor inside the flat parameter buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slot {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Slot {
    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.rows * self.cols
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerLayout {
    pub ln1_gain: Slot,
    pub ln1_bias: Slot,
    pub w_qkv: Slot,
    pub b_qkv: Slot,
    pub w_out: Slot,
    pub b_out: Slot,
    pub ln2_gain: Slot,
    pub ln2_bias: Slot,
    pub w_up: Slot,
    pub b_up: Slot,
    pub w_down: Slot,
    pub b_down: Slot,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub tok_emb: Slot,
    pub pos_emb: Slot,
    pub layers: Vec<LayerLayout>,
    pub lnf_gain: Slot,
    pub lnf_bias: Slot,
    pub head_w: Slot,
    pub head_b: Slot,
    /// Scalar gate on the tied output path (logits through the token
    /// embedding matrix).
    pub head_tie: Slot,
    pub value_w: Slot,
    pub value_b: Slot,
    pub total: usize,
}

impl Layout {
    pub fn new(c: &ModelConfig) -> Self {
        let mut offset = 0;
        let mut slot = |rows: usize, cols: usize| {
            let s = Slot { offset, rows, cols };
            offset += rows * cols;
            s
        };
        let d = c.d_model;
        let tok_emb = slot(c.vocab_size, d);
        let pos_emb = slot(c.max_seq_len, d);
        let layers = (0..c.n_layers)
            .map(|_| LayerLayout {
                ln1_gain: slot(1, d),
                ln1_bias: slot(1, d),
                w_qkv: slot(d, 3 * d),
                b_qkv: slot(1, 3 * d),
                w_out: slot(d, d),
                b_out: slot(1, d),
                ln2_gain: slot(1, d),
                ln2_bias: slot(1, d),
                w_up: slot(d, c.ffn_dim()),
                b_up: slot(1, c.ffn_dim()),
                w_down: slot(c.ffn_dim(), d),
                b_down: slot(1, d),
            })
            .collect();
        let lnf_gain = slot(1, d);
        let lnf_bias = slot(1, d);
        let head_w = slot(d, c.vocab_size);
        let head_b = slot(1, c.vocab_size);
        let head_tie = slot(1, 1);
        let value_w = slot(d, 1);
        let value_b = slot(1, 1);
        Self {
            tok_emb,
            pos_emb,
            layers,
            lnf_gain,
            lnf_bias,
            head_w,
            head_b,
            head_tie,
            value_w,
            value_b,
            total: offset,
        }
    }

    /// Ranges belonging to the value head only.
    pub fn value_head_ranges(&self) -> [Range<usize>; 2] {
        [self.value_w.range(), self.value_b.range()]
    }
}

fn view<'a, F>(params: &'a [F], s: Slot) -> ArrayView2<'a, F> {
    ArrayView2::from_shape((s.rows, s.cols), &params[s.range()]).expect("slot shape")
}

fn row<'a, F>(params: &'a [F], s: Slot) -> ArrayView1<'a, F> {
    ArrayView1::from_shape(s.rows * s.cols, &params[s.range()]).expect("slot shape")
}

fn view_mut<'a, F>(params: &'a mut [F], s: Slot) -> ArrayViewMut2<'a, F> {
    ArrayViewMut2::from_shape((s.rows, s.cols), &mut params[s.range()]).expect("slot shape")
}

fn add_row_sums<F: Scalar>(grads: &mut [F], s: Slot, d: &Array2<F>) {
    let sums = d.sum_axis(Axis(0));
    for (g, v) in grads[s.range()].iter_mut().zip(sums.iter()) {
        *g += *v;
    }
}

fn add_matmul_tn<F: Scalar>(grads: &mut [F], s: Slot, a: &Array2<F>, b: &Array2<F>) {
    let prod = a.t().dot(b);
    view_mut(grads, s).zip_mut_with(&prod, |g, v| *g += *v);
}

#[derive(Debug, Clone)]
struct LnCache<F> {
    xhat: Array2<F>,
    rstd: Array1<F>,
}

fn layer_norm<F: Scalar>(x: &Array2<F>, gain: ArrayView1<F>, bias: ArrayView1<F>) -> (Array2<F>, LnCache<F>) {
    let (t, d) = x.dim();
    let eps = F::c(LN_EPS);
    let inv_d = F::c(1.0 / d as f64);
    let mut xhat = Array2::zeros((t, d));
    let mut rstd = Array1::zeros(t);
    let mut out = Array2::zeros((t, d));
    for i in 0..t {
        let r = x.row(i);
        let mean = r.sum() * inv_d;
        let var = r.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() * inv_d;
        let rs = F::one() / (var + eps).sqrt();
        rstd[i] = rs;
        for j in 0..d {
            let h = (r[j] - mean) * rs;
            xhat[[i, j]] = h;
            out[[i, j]] = h * gain[j] + bias[j];
        }
    }
    (out, LnCache { xhat, rstd })
}

/// Returns dx and accumulates gain/bias gradients.
fn layer_norm_backward<F: Scalar>(
    dy: &Array2<F>,
    cache: &LnCache<F>,
    gain: ArrayView1<F>,
    grads: &mut [F],
    gain_slot: Slot,
    bias_slot: Slot,
) -> Array2<F> {
    let (t, d) = dy.dim();
    let inv_d = F::c(1.0 / d as f64);
    let mut dx = Array2::zeros((t, d));
    {
        let gg = &mut grads[gain_slot.range()];
        for i in 0..t {
            for j in 0..d {
                gg[j] += dy[[i, j]] * cache.xhat[[i, j]];
            }
        }
    }
    add_row_sums(grads, bias_slot, dy);
    for i in 0..t {
        let mut mean_dh = F::zero();
        let mut mean_dh_h = F::zero();
        for j in 0..d {
            let dh = dy[[i, j]] * gain[j];
            mean_dh += dh;
            mean_dh_h += dh * cache.xhat[[i, j]];
        }
        mean_dh = mean_dh * inv_d;
        mean_dh_h = mean_dh_h * inv_d;
        let rs = cache.rstd[i];
        for j in 0..d {
            let dh = dy[[i, j]] * gain[j];
            dx[[i, j]] = rs * (dh - mean_dh - cache.xhat[[i, j]] * mean_dh_h);
        }
    }
    dx
}

fn gelu<F: Scalar>(x: F) -> F {
    let c = F::c((2.0 / std::f64::consts::PI).sqrt());
    let k = F::c(0.044715);
    let half = F::c(0.5);
    half * x * (F::one() + (c * (x + k * x * x * x)).tanh())
}

fn gelu_grad<F: Scalar>(x: F) -> F {
    let c = F::c((2.0 / std::f64::consts::PI).sqrt());
    let k = F::c(0.044715);
    let half = F::c(0.5);
    let th = (c * (x + k * x * x * x)).tanh();
    half * (F::one() + th) + half * x * (F::one() - th * th) * c * (F::one() + F::c(3.0) * k * x * x)
}

fn add_bias<F: Scalar>(m: &mut Array2<F>, b: ArrayView1<F>) {
    for mut r in m.rows_mut() {
        r += &b;
    }
}

#[derive(Debug, Clone)]
struct LayerCache<F> {
    ln1: LnCache<F>,
    a: Array2<F>,
    qkv: Array2<F>,
    probs: Vec<Array2<F>>,
    attn: Array2<F>,
    ln2: LnCache<F>,
    m: Array2<F>,
    pre_act: Array2<F>,
    act: Array2<F>,
}

/// Activations retained from a forward pass over one sequence.
#[derive(Debug, Clone)]
pub struct ForwardCache<F> {
    ids: Vec<TokenId>,
    layers: Vec<LayerCache<F>>,
    lnf: LnCache<F>,
    xf: Array2<F>,
    pub logits: Array2<F>,
    pub values: Array1<F>,
}

impl<F> ForwardCache<F> {
    /// Key/value rows of layer `l`, as `(k, v)` with shape `[time × d_model]`.
    pub(crate) fn key_values(&self, l: usize, d: usize) -> (ArrayView2<'_, F>, ArrayView2<'_, F>) {
        let qkv = &self.layers[l].qkv;
        (qkv.slice(s![.., d..2 * d]), qkv.slice(s![.., 2 * d..3 * d]))
    }
}

/// Batched forward output.
#[derive(Debug, Clone)]
pub struct ForwardOutput<F> {
    /// `[batch × time × vocab]`
    pub logits: Array3<F>,
    /// `[batch × time]`
    pub values: Array2<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyModel<F: Scalar = f32> {
    config: ModelConfig,
    layout: Layout,
    params: Vec<F>,
    role: ModelRole,
}

impl<F: Scalar> PolicyModel<F> {
    pub fn new(config: ModelConfig, seed: u64, head: HeadInit) -> Result<Self, PolicyError> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let mut params = vec![0.0f64; layout.total];
        let random = head == HeadInit::FullyRandom;

        let fill = |p: &mut [f64], s: Slot, std: f64, rng: &mut ChaCha8Rng| {
            for v in &mut p[s.range()] {
                *v = normal.sample(rng) * std / INIT_STD;
            }
        };
        let fill_const = |p: &mut [f64], s: Slot, c: f64| p[s.range()].iter_mut().for_each(|v| *v = c);

        fill(&mut params, layout.tok_emb, INIT_STD, &mut rng);
        fill(&mut params, layout.pos_emb, INIT_STD, &mut rng);
        let proj_std = INIT_STD / (2.0 * config.n_layers.max(1) as f64).sqrt();
        // random mode uses larger scales so every nonlinearity is exercised
        let rs = if random { 0.3 } else { INIT_STD };
        for l in &layout.layers {
            for (g, b) in [(l.ln1_gain, l.ln1_bias), (l.ln2_gain, l.ln2_bias)] {
                fill_const(&mut params, g, 1.0);
                if random {
                    for v in &mut params[g.range()] {
                        *v += normal.sample(&mut rng) * 5.0;
                    }
                    fill(&mut params, b, 0.1, &mut rng);
                }
            }
            fill(&mut params, l.w_qkv, rs, &mut rng);
            fill(&mut params, l.w_up, rs, &mut rng);
            fill(&mut params, l.w_out, if random { rs } else { proj_std }, &mut rng);
            fill(&mut params, l.w_down, if random { rs } else { proj_std }, &mut rng);
            if random {
                for b in [l.b_qkv, l.b_out, l.b_up, l.b_down] {
                    fill(&mut params, b, 0.1, &mut rng);
                }
            }
        }
        fill_const(&mut params, layout.lnf_gain, 1.0);
        if random {
            fill(&mut params, layout.lnf_bias, 0.1, &mut rng);
            fill(&mut params, layout.head_w, rs, &mut rng);
            fill(&mut params, layout.head_b, 0.1, &mut rng);
            fill(&mut params, layout.head_tie, rs, &mut rng);
            fill(&mut params, layout.value_w, rs, &mut rng);
        } else {
            fill(&mut params, layout.value_w, INIT_STD, &mut rng);
        }

        Ok(Self {
            config,
            layout,
            params: params.into_iter().map(F::c).collect(),
            role: ModelRole::TrainablePolicy,
        })
    }

    pub fn from_parts(config: ModelConfig, params: Vec<F>, role: ModelRole) -> Result<Self, PolicyError> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.len() != layout.total {
            return Err(PolicyError::InvalidConfig(format!(
                "expected {} parameters, found {}",
                layout.total,
                params.len()
            )));
        }
        Ok(Self {
            config,
            layout,
            params,
            role,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn role(&self) -> ModelRole {
        self.role
    }

    pub fn params(&self) -> &[F] {
        &self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Mutable parameters; refused for frozen references.
    pub fn params_mut(&mut self) -> Result<&mut [F], PolicyError> {
        match self.role {
            ModelRole::TrainablePolicy => Ok(&mut self.params),
            ModelRole::FrozenReference => Err(PolicyError::FrozenModel),
        }
    }

    /// A frozen copy sharing the current parameter values.
    pub fn frozen_copy(&self) -> Self {
        Self {
            role: ModelRole::FrozenReference,
            ..self.clone()
        }
    }

    /// Converts the parameter precision (e.g. f32 → f64 for gradient checks).
    pub fn cast<G: Scalar>(&self) -> PolicyModel<G> {
        PolicyModel {
            config: self.config,
            layout: self.layout.clone(),
            params: self.params.iter().map(|v| G::c(v.as_f64())).collect(),
            role: self.role,
        }
    }

    pub fn check_ids(&self, ids: &[TokenId]) -> Result<(), PolicyError> {
        if ids.is_empty() {
            return Err(PolicyError::EmptySequence);
        }
        if ids.len() > self.config.max_seq_len {
            return Err(PolicyError::SequenceTooLong {
                len: ids.len(),
                max: self.config.max_seq_len,
            });
        }
        if let Some(&bad) = ids.iter().find(|&&i| i as usize >= self.config.vocab_size) {
            return Err(PolicyError::TokenOutOfRange {
                id: bad,
                vocab: self.config.vocab_size,
            });
        }
        Ok(())
    }

    /// Forward over a `[batch × time]` id matrix.
    pub fn forward(&self, ids: ArrayView2<TokenId>) -> Result<ForwardOutput<F>, PolicyError> {
        let (b, t) = ids.dim();
        let v = self.config.vocab_size;
        let mut logits = Array3::zeros((b, t, v));
        let mut values = Array2::zeros((b, t));
        for (i, r) in ids.rows().into_iter().enumerate() {
            let seq: Vec<TokenId> = r.to_vec();
            let cache = self.forward_sequence(&seq)?;
            logits.slice_mut(s![i, .., ..]).assign(&cache.logits);
            values.slice_mut(s![i, ..]).assign(&cache.values);
        }
        Ok(ForwardOutput { logits, values })
    }

    /// Forward over one sequence, keeping activations for `backward`.
    pub fn forward_sequence(&self, ids: &[TokenId]) -> Result<ForwardCache<F>, PolicyError> {
        self.check_ids(ids)?;
        let p = &self.params;
        let c = &self.config;
        let lay = &self.layout;
        let t = ids.len();
        let d = c.d_model;
        let hd = c.head_dim();
        let scale = F::c(1.0 / (hd as f64).sqrt());

        let tok = view(p, lay.tok_emb);
        let pos = view(p, lay.pos_emb);
        let mut x = Array2::zeros((t, d));
        for (i, &id) in ids.iter().enumerate() {
            let mut r = x.row_mut(i);
            r.assign(&tok.row(id as usize));
            r += &pos.row(i);
        }

        let mut layers = Vec::with_capacity(c.n_layers);
        for l in &lay.layers {
            let (a, ln1) = layer_norm(&x, row(p, l.ln1_gain), row(p, l.ln1_bias));
            let mut qkv = a.dot(&view(p, l.w_qkv));
            add_bias(&mut qkv, row(p, l.b_qkv));

            let mut attn = Array2::zeros((t, d));
            let mut probs = Vec::with_capacity(c.n_heads);
            for h in 0..c.n_heads {
                let q = qkv.slice(s![.., h * hd..(h + 1) * hd]);
                let k = qkv.slice(s![.., d + h * hd..d + (h + 1) * hd]);
                let v = qkv.slice(s![.., 2 * d + h * hd..2 * d + (h + 1) * hd]);
                let scores = q.dot(&k.t());
                let mut pr = Array2::zeros((t, t));
                for i in 0..t {
                    let mut max = F::neg_infinity();
                    for j in 0..=i {
                        max = max.max(scores[[i, j]] * scale);
                    }
                    let mut sum = F::zero();
                    for j in 0..=i {
                        let e = (scores[[i, j]] * scale - max).exp();
                        pr[[i, j]] = e;
                        sum += e;
                    }
                    for j in 0..=i {
                        pr[[i, j]] = pr[[i, j]] / sum;
                    }
                }
                attn.slice_mut(s![.., h * hd..(h + 1) * hd]).assign(&pr.dot(&v));
                probs.push(pr);
            }
            let mut proj = attn.dot(&view(p, l.w_out));
            add_bias(&mut proj, row(p, l.b_out));
            x += &proj;

            let (m, ln2) = layer_norm(&x, row(p, l.ln2_gain), row(p, l.ln2_bias));
            let mut pre_act = m.dot(&view(p, l.w_up));
            add_bias(&mut pre_act, row(p, l.b_up));
            let act = pre_act.mapv(gelu);
            let mut down = act.dot(&view(p, l.w_down));
            add_bias(&mut down, row(p, l.b_down));
            x += &down;

            layers.push(LayerCache {
                ln1,
                a,
                qkv,
                probs,
                attn,
                ln2,
                m,
                pre_act,
                act,
            });
        }

        let (xf, lnf) = layer_norm(&x, row(p, lay.lnf_gain), row(p, lay.lnf_bias));
        let logits = self.output_logits(&xf);
        let vb = p[lay.value_b.offset];
        let values = xf.dot(&row(p, lay.value_w)).mapv(|v| v + vb);

        Ok(ForwardCache {
            ids: ids.to_vec(),
            layers,
            lnf,
            xf,
            logits,
            values,
        })
    }

    /// `xf·W + b + α·xf·Eᵀ`: an untied projection plus a gated path through
    /// the token embeddings, which lets attention copy context tokens into
    /// the output.
    fn output_logits(&self, xf: &Array2<F>) -> Array2<F> {
        let p = &self.params;
        let lay = &self.layout;
        let mut logits = xf.dot(&view(p, lay.head_w));
        add_bias(&mut logits, row(p, lay.head_b));
        let alpha = p[lay.head_tie.offset];
        if alpha != F::zero() {
            logits.scaled_add(alpha, &xf.dot(&view(p, lay.tok_emb).t()));
        }
        logits
    }

    /// Accumulates gradients of the value-head parameters only, treating the
    /// trunk features as constants.
    pub fn value_head_backward(&self, cache: &ForwardCache<F>, dvalues: &Array1<F>, grads: &mut [F]) {
        assert_eq!(grads.len(), self.params.len(), "gradient buffer size");
        let lay = &self.layout;
        let dv2 = dvalues.view().insert_axis(Axis(1)).to_owned();
        add_matmul_tn(grads, lay.value_w, &cache.xf, &dv2);
        grads[lay.value_b.offset] += dvalues.sum();
    }

    /// Accumulates parameter gradients into `grads` given upstream gradients
    /// on the logits `[time × vocab]` and values `[time]`.
    pub fn backward(
        &self,
        cache: &ForwardCache<F>,
        dlogits: &Array2<F>,
        dvalues: &Array1<F>,
        grads: &mut [F],
    ) {
        assert_eq!(grads.len(), self.params.len(), "gradient buffer size");
        let p = &self.params;
        let c = &self.config;
        let lay = &self.layout;
        let t = cache.ids.len();
        let d = c.d_model;
        let hd = c.head_dim();
        let scale = F::c(1.0 / (hd as f64).sqrt());

        add_matmul_tn(grads, lay.head_w, &cache.xf, dlogits);
        add_row_sums(grads, lay.head_b, dlogits);
        let emb = view(p, lay.tok_emb);
        let alpha = p[lay.head_tie.offset];
        let tied = cache.xf.dot(&emb.t());
        grads[lay.head_tie.offset] += (dlogits * &tied).sum();
        if alpha != F::zero() {
            let demb = dlogits.t().dot(&cache.xf) * alpha;
            view_mut(grads, lay.tok_emb).zip_mut_with(&demb, |g, v| *g += *v);
        }
        self.value_head_backward(cache, dvalues, grads);

        let mut dxf = dlogits.dot(&view(p, lay.head_w).t());
        if alpha != F::zero() {
            dxf.scaled_add(alpha, &dlogits.dot(&emb));
        }
        let vw = row(p, lay.value_w);
        for i in 0..t {
            let mut r = dxf.row_mut(i);
            r.scaled_add(dvalues[i], &vw);
        }
        let mut dx = layer_norm_backward(&dxf, &cache.lnf, row(p, lay.lnf_gain), grads, lay.lnf_gain, lay.lnf_bias);

        for (l, lc) in lay.layers.iter().zip(&cache.layers).rev() {
            // feed-forward block
            add_matmul_tn(grads, l.w_down, &lc.act, &dx);
            add_row_sums(grads, l.b_down, &dx);
            let dact = dx.dot(&view(p, l.w_down).t());
            let mut dpre = dact;
            dpre.zip_mut_with(&lc.pre_act, |g, &z| *g = *g * gelu_grad(z));
            add_matmul_tn(grads, l.w_up, &lc.m, &dpre);
            add_row_sums(grads, l.b_up, &dpre);
            let dm = dpre.dot(&view(p, l.w_up).t());
            dx += &layer_norm_backward(&dm, &lc.ln2, row(p, l.ln2_gain), grads, l.ln2_gain, l.ln2_bias);

            // attention block
            add_matmul_tn(grads, l.w_out, &lc.attn, &dx);
            add_row_sums(grads, l.b_out, &dx);
            let dattn = dx.dot(&view(p, l.w_out).t());
            let mut dqkv = Array2::zeros((t, 3 * d));
            for h in 0..c.n_heads {
                let q = lc.qkv.slice(s![.., h * hd..(h + 1) * hd]);
                let k = lc.qkv.slice(s![.., d + h * hd..d + (h + 1) * hd]);
                let v = lc.qkv.slice(s![.., 2 * d + h * hd..2 * d + (h + 1) * hd]);
                let pr = &lc.probs[h];
                let dout = dattn.slice(s![.., h * hd..(h + 1) * hd]);
                let dp = dout.dot(&v.t());
                let dv = pr.t().dot(&dout);
                let mut ds = Array2::zeros((t, t));
                for i in 0..t {
                    let mut dot = F::zero();
                    for j in 0..=i {
                        dot += pr[[i, j]] * dp[[i, j]];
                    }
                    for j in 0..=i {
                        ds[[i, j]] = pr[[i, j]] * (dp[[i, j]] - dot) * scale;
                    }
                }
                let dq = ds.dot(&k);
                let dk = ds.t().dot(&q);
                dqkv.slice_mut(s![.., h * hd..(h + 1) * hd]).assign(&dq);
                dqkv.slice_mut(s![.., d + h * hd..d + (h + 1) * hd]).assign(&dk);
                dqkv.slice_mut(s![.., 2 * d + h * hd..2 * d + (h + 1) * hd]).assign(&dv);
            }
            add_matmul_tn(grads, l.w_qkv, &lc.a, &dqkv);
            add_row_sums(grads, l.b_qkv, &dqkv);
            let da = dqkv.dot(&view(p, l.w_qkv).t());
            dx += &layer_norm_backward(&da, &lc.ln1, row(p, l.ln1_gain), grads, l.ln1_gain, l.ln1_bias);
        }

        for (i, &id) in cache.ids.iter().enumerate() {
            let te = lay.tok_emb.offset + id as usize * d;
            let pe = lay.pos_emb.offset + i * d;
            for j in 0..d {
                grads[te + j] += dx[[i, j]];
                grads[pe + j] += dx[[i, j]];
            }
        }
    }

    /// Single-row step used by incremental decoding. `kv` holds per-layer
    /// key/value rows for earlier positions and is extended in place.
    pub(crate) fn step(&self, id: TokenId, position: usize, kv: &mut [(Vec<Array1<F>>, Vec<Array1<F>>)]) -> Array1<F> {
        let p = &self.params;
        let c = &self.config;
        let lay = &self.layout;
        let d = c.d_model;
        let hd = c.head_dim();
        let scale = F::c(1.0 / (hd as f64).sqrt());

        let mut x = Array2::zeros((1, d));
        {
            let mut r = x.row_mut(0);
            r.assign(&view(p, lay.tok_emb).row(id as usize));
            r += &view(p, lay.pos_emb).row(position);
        }
        for (l, (keys, vals)) in lay.layers.iter().zip(kv.iter_mut()) {
            let (a, _) = layer_norm(&x, row(p, l.ln1_gain), row(p, l.ln1_bias));
            let mut qkv = a.dot(&view(p, l.w_qkv));
            add_bias(&mut qkv, row(p, l.b_qkv));
            let qkv = qkv.row(0);
            keys.push(qkv.slice(s![d..2 * d]).to_owned());
            vals.push(qkv.slice(s![2 * d..3 * d]).to_owned());
            let mut attn = Array2::zeros((1, d));
            for h in 0..c.n_heads {
                let hs = h * hd..(h + 1) * hd;
                let q = qkv.slice(s![hs.clone()]);
                let scores: Vec<F> = keys.iter().map(|k| q.dot(&k.slice(s![hs.clone()])) * scale).collect();
                let max = scores.iter().copied().fold(F::neg_infinity(), F::max);
                let exps: Vec<F> = scores.iter().map(|&sc| (sc - max).exp()).collect();
                let sum: F = exps.iter().copied().sum();
                let mut out = attn.slice_mut(s![0, hs.clone()]);
                for (e, v) in exps.iter().zip(vals.iter()) {
                    out.scaled_add(*e / sum, &v.slice(s![hs.clone()]));
                }
            }
            let mut proj = attn.dot(&view(p, l.w_out));
            add_bias(&mut proj, row(p, l.b_out));
            x += &proj;
            let (m, _) = layer_norm(&x, row(p, l.ln2_gain), row(p, l.ln2_bias));
            let mut pre = m.dot(&view(p, l.w_up));
            add_bias(&mut pre, row(p, l.b_up));
            let mut down = pre.mapv(gelu).dot(&view(p, l.w_down));
            add_bias(&mut down, row(p, l.b_down));
            x += &down;
        }
        let (xf, _) = layer_norm(&x, row(p, lay.lnf_gain), row(p, lay.lnf_bias));
        self.output_logits(&xf).row(0).to_owned()
    }
}

/// Numerically stable log-softmax of one row.
pub fn log_softmax<F: Scalar>(logits: ArrayView1<F>) -> Array1<F> {
    let max = logits.iter().copied().fold(F::neg_infinity(), F::max);
    let lse = logits.iter().map(|&z| (z - max).exp()).sum::<F>().ln() + max;
    logits.mapv(|z| z - lse)
}

pub fn softmax<F: Scalar>(logits: ArrayView1<F>) -> Array1<F> {
    log_softmax(logits).mapv(F::exp)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(vocab: usize) -> ModelConfig {
        ModelConfig {
            vocab_size: vocab,
            d_model: 8,
            n_layers: 2,
            n_heads: 2,
            max_seq_len: 8,
        }
    }

    #[test]
    fn zero_head_gives_uniform_logits() {
        let m: PolicyModel<f64> = PolicyModel::new(tiny(7), 1, HeadInit::Zero).unwrap();
        let cache = m.forward_sequence(&[0, 3, 5]).unwrap();
        assert!(cache.logits.iter().all(|&z| z == 0.0));
        let lp = log_softmax(cache.logits.row(0));
        assert_eq!(lp[0], -(7.0f64).ln());
    }

    #[test]
    fn vocab_one_is_degenerate() {
        let m: PolicyModel<f64> = PolicyModel::new(tiny(1), 3, HeadInit::FullyRandom).unwrap();
        let cache = m.forward_sequence(&[0, 0, 0]).unwrap();
        for i in 0..3 {
            assert_eq!(softmax(cache.logits.row(i))[0], 1.0);
        }
    }

    #[test]
    fn rejects_bad_ids() {
        let m: PolicyModel<f32> = PolicyModel::new(tiny(5), 1, HeadInit::Zero).unwrap();
        assert!(matches!(
            m.forward_sequence(&[7]),
            Err(PolicyError::TokenOutOfRange { id: 7, vocab: 5 })
        ));
        assert!(matches!(
            m.forward_sequence(&[0; 9]),
            Err(PolicyError::SequenceTooLong { len: 9, max: 8 })
        ));
    }

    #[test]
    fn deterministic_init_and_forward() {
        let a: PolicyModel<f32> = PolicyModel::new(tiny(9), 42, HeadInit::FullyRandom).unwrap();
        let b: PolicyModel<f32> = PolicyModel::new(tiny(9), 42, HeadInit::FullyRandom).unwrap();
        assert_eq!(a, b);
        let x = a.forward_sequence(&[1, 2, 3, 4]).unwrap();
        let y = b.forward_sequence(&[1, 2, 3, 4]).unwrap();
        assert_eq!(x.logits, y.logits);
        assert_eq!(x.values, y.values);
    }

    #[test]
    fn batched_forward_matches_rows() {
        let m: PolicyModel<f64> = PolicyModel::new(tiny(9), 2, HeadInit::FullyRandom).unwrap();
        let ids = ndarray::arr2(&[[1u32, 2, 3], [4, 5, 6]]);
        let out = m.forward(ids.view()).unwrap();
        let second = m.forward_sequence(&[4, 5, 6]).unwrap();
        assert_eq!(out.logits.slice(s![1, .., ..]), second.logits);
        assert_eq!(out.values.row(1), second.values);
    }

    #[test]
    fn incremental_step_matches_full_forward() {
        let m: PolicyModel<f64> = PolicyModel::new(tiny(9), 5, HeadInit::FullyRandom).unwrap();
        let ids = [2u32, 7, 1, 4, 8];
        let full = m.forward_sequence(&ids).unwrap();
        let mut kv = vec![(Vec::new(), Vec::new()); 2];
        for (i, &id) in ids.iter().enumerate() {
            let logits = m.step(id, i, &mut kv);
            for (a, b) in logits.iter().zip(full.logits.row(i)) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn frozen_refuses_mutation() {
        let m: PolicyModel<f32> = PolicyModel::new(tiny(5), 1, HeadInit::Zero).unwrap();
        let mut frozen = m.frozen_copy();
        assert!(matches!(frozen.params_mut(), Err(PolicyError::FrozenModel)));
        assert_eq!(frozen.params(), m.params());
    }
}
