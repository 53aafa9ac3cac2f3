//! GPT-style decoder: learned positions, pre-norm blocks, GELU MLP and an
//! output head tied to the token embedding. Forward and backward passes are
//! written out by hand over one flat parameter vector.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::scalar::{matmul, matmul_at, matmul_bt, Scalar};
use crate::ModelError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub context_len: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_layers: 4,
            n_heads: 4,
            d_model: 128,
            d_ff: 512,
            context_len: 256,
            dropout: 0.1,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.n_layers == 0 || self.n_heads == 0 || self.d_model == 0 || self.d_ff == 0 || self.context_len < 2 {
            return bad("layer, head, width and context sizes must be positive");
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return bad("d_model must be divisible by n_heads");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct LayerOffsets {
    ln1_g: usize,
    ln1_b: usize,
    w_qkv: usize,
    b_qkv: usize,
    w_o: usize,
    b_o: usize,
    ln2_g: usize,
    ln2_b: usize,
    w_fc: usize,
    b_fc: usize,
    w_proj: usize,
    b_proj: usize,
}

/// Offsets of every tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    vocab: usize,
    wte: usize,
    wpe: usize,
    layers: Vec<LayerOffsets>,
    lnf_g: usize,
    lnf_b: usize,
    total: usize,
}

impl Layout {
    fn new(c: &ModelConfig, vocab: usize) -> Self {
        let (d, f) = (c.d_model, c.d_ff);
        let mut at = 0;
        let mut take = |n: usize| {
            let o = at;
            at += n;
            o
        };
        let wte = take(vocab * d);
        let wpe = take(c.context_len * d);
        let layers = (0..c.n_layers)
            .map(|_| LayerOffsets {
                ln1_g: take(d),
                ln1_b: take(d),
                w_qkv: take(d * 3 * d),
                b_qkv: take(3 * d),
                w_o: take(d * d),
                b_o: take(d),
                ln2_g: take(d),
                ln2_b: take(d),
                w_fc: take(d * f),
                b_fc: take(f),
                w_proj: take(f * d),
                b_proj: take(d),
            })
            .collect();
        let lnf_g = take(d);
        let lnf_b = take(d);
        Layout {
            vocab,
            wte,
            wpe,
            layers,
            lnf_g,
            lnf_b,
            total: at,
        }
    }

    pub fn total(&self) -> usize {
        self.total
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T: Scalar> {
    pub config: ModelConfig,
    pub vocab_size: usize,
    layout: Layout,
    pub params: Vec<T>,
}

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4;

fn gelu<T: Scalar>(x: T) -> T {
    let c = T::of(GELU_C);
    let inner = c * (x + T::of(0.044715) * x * x * x);
    T::of(0.5) * x * (T::one() + inner.tanh())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::of(GELU_C);
    let t = (c * (x + T::of(0.044715) * x * x * x)).tanh();
    T::of(0.5) * (T::one() + t) + T::of(0.5) * x * (T::one() - t * t) * c * (T::one() + T::of(3.0 * 0.044715) * x * x)
}

/// Row-wise layer norm; returns normalized inputs and reciprocal deviations.
fn layer_norm<T: Scalar>(x: &[T], g: &[T], b: &[T], d: usize, out: &mut [T]) -> (Vec<T>, Vec<T>) {
    let rows = x.len() / d;
    let mut xhat = vec![T::zero(); x.len()];
    let mut rstd = vec![T::zero(); rows];
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().copied().sum::<T>() / T::of(d as f64);
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / T::of(d as f64);
        let rs = T::one() / (var + T::of(LN_EPS)).sqrt();
        rstd[r] = rs;
        for j in 0..d {
            let xh = (row[j] - mean) * rs;
            xhat[r * d + j] = xh;
            out[r * d + j] = xh * g[j] + b[j];
        }
    }
    (xhat, rstd)
}

/// Adds the input gradient of a layer norm to `dx` and parameter gradients to
/// `dg`, `db`.
#[allow(clippy::too_many_arguments)]
fn layer_norm_backward<T: Scalar>(
    dy: &[T],
    xhat: &[T],
    rstd: &[T],
    g: &[T],
    d: usize,
    dx: &mut [T],
    dg: &mut [T],
    db: &mut [T],
) {
    let rows = dy.len() / d;
    let inv_d = T::of(1.0 / d as f64);
    for r in 0..rows {
        let dyr = &dy[r * d..(r + 1) * d];
        let xr = &xhat[r * d..(r + 1) * d];
        let mut mean_dxhat = T::zero();
        let mut mean_dxhat_x = T::zero();
        for j in 0..d {
            let dxh = dyr[j] * g[j];
            mean_dxhat += dxh;
            mean_dxhat_x += dxh * xr[j];
            dg[j] += dyr[j] * xr[j];
            db[j] += dyr[j];
        }
        mean_dxhat *= inv_d;
        mean_dxhat_x *= inv_d;
        for j in 0..d {
            let dxh = dyr[j] * g[j];
            dx[r * d + j] += rstd[r] * (dxh - mean_dxhat - xr[j] * mean_dxhat_x);
        }
    }
}

fn add_bias<T: Scalar>(y: &mut [T], b: &[T]) {
    for row in y.chunks_mut(b.len()) {
        for (v, &bb) in row.iter_mut().zip(b) {
            *v += bb;
        }
    }
}

fn col_sum_into<T: Scalar>(dy: &[T], width: usize, out: &mut [T]) {
    for row in dy.chunks(width) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
}

fn dropout_mask<T: Scalar>(n: usize, p: f64, rng: &mut ChaCha8Rng) -> Vec<T> {
    let keep = T::of(1.0 / (1.0 - p));
    (0..n)
        .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
        .collect()
}

struct LayerCache<T> {
    ln1_xhat: Vec<T>,
    ln1_rstd: Vec<T>,
    h1: Vec<T>,
    qkv: Vec<T>,
    probs: Vec<T>,
    att: Vec<T>,
    mask1: Option<Vec<T>>,
    ln2_xhat: Vec<T>,
    ln2_rstd: Vec<T>,
    h2: Vec<T>,
    f_pre: Vec<T>,
    g_act: Vec<T>,
    mask2: Option<Vec<T>>,
}

/// Activations kept from a forward pass for the backward pass.
pub struct ForwardCache<T> {
    tokens: Vec<u32>,
    positions: Vec<usize>,
    starts: Vec<usize>,
    lens: Vec<usize>,
    prob_offsets: Vec<usize>,
    mask0: Option<Vec<T>>,
    layers: Vec<LayerCache<T>>,
    lnf_xhat: Vec<T>,
    lnf_rstd: Vec<T>,
    hf: Vec<T>,
    /// Softmax of the logits, one row per input position.
    pub probs: Vec<T>,
    targets: Vec<u32>,
    weights: Vec<T>,
    total_weight: f64,
}

/// One training or scoring example: token ids plus a weight for predicting
/// each token after the first (`weights.len() == ids.len() - 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence<'a> {
    pub ids: &'a [u32],
    pub weights: &'a [f32],
}

/// Per-sequence losses from a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    /// Weighted mean negative log-likelihood over the whole batch.
    pub mean: f64,
    /// Per sequence: (summed weighted NLL, summed weight).
    pub per_sequence: Vec<(f64, f64)>,
}

impl<T: Scalar> Model<T> {
    /// Fresh model with GPT-2 style initialization from `config.seed`.
    pub fn new(config: ModelConfig, vocab_size: usize) -> Result<Self, ModelError> {
        Self::with_init_scale(config, vocab_size, 0.02)
    }

    /// Fresh model whose weight matrices are drawn with standard deviation
    /// `std` (output projections are scaled down by `sqrt(2 n_layers)`).
    pub fn with_init_scale(config: ModelConfig, vocab_size: usize, std: f64) -> Result<Self, ModelError> {
        config.validate()?;
        if vocab_size == 0 {
            return Err(ModelError::Config("vocabulary is empty".into()));
        }
        let layout = Layout::new(&config, vocab_size);
        let mut params = vec![T::zero(); layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let normal = Normal::new(0.0, std).expect("positive std");
        let scaled = Normal::new(0.0, std / (2.0 * config.n_layers as f64).sqrt()).expect("positive std");
        let (d, f) = (config.d_model, config.d_ff);
        let mut fill = |params: &mut [T], off: usize, n: usize, dist: &Normal<f64>| {
            for p in &mut params[off..off + n] {
                *p = T::of(dist.sample(&mut rng));
            }
        };
        fill(&mut params, layout.wte, vocab_size * d, &normal);
        fill(&mut params, layout.wpe, config.context_len * d, &normal);
        for l in &layout.layers {
            fill(&mut params, l.w_qkv, d * 3 * d, &normal);
            fill(&mut params, l.w_o, d * d, &scaled);
            fill(&mut params, l.w_fc, d * f, &normal);
            fill(&mut params, l.w_proj, f * d, &scaled);
        }
        for l in &layout.layers {
            params[l.ln1_g..l.ln1_g + d].fill(T::one());
            params[l.ln2_g..l.ln2_g + d].fill(T::one());
        }
        params[layout.lnf_g..layout.lnf_g + d].fill(T::one());
        Ok(Model {
            config,
            vocab_size,
            layout,
            params,
        })
    }

    /// Wraps an existing parameter vector, checking its length.
    pub fn from_params(config: ModelConfig, vocab_size: usize, params: Vec<T>) -> Result<Self, ModelError> {
        config.validate()?;
        let layout = Layout::new(&config, vocab_size);
        if params.len() != layout.total {
            return Err(ModelError::Config(format!(
                "expected {} parameters, found {}",
                layout.total,
                params.len()
            )));
        }
        Ok(Model {
            config,
            vocab_size,
            layout,
            params,
        })
    }

    pub fn num_params(&self) -> usize {
        self.layout.total
    }

    /// Same weights in another precision.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            vocab_size: self.vocab_size,
            layout: self.layout.clone(),
            params: self.params.iter().map(|&p| U::of(p.as_f64())).collect(),
        }
    }

    fn p(&self, off: usize, n: usize) -> &[T] {
        &self.params[off..off + n]
    }

    /// Runs the model over a batch of sequences. Dropout is applied when
    /// `rng` is given and the configured rate is positive.
    pub fn forward(
        &self,
        batch: &[Sequence<'_>],
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(LossReport, ForwardCache<T>), ModelError> {
        let c = &self.config;
        let (d, f, h, hd, v) = (c.d_model, c.d_ff, c.n_heads, c.head_dim(), self.vocab_size);
        let p_drop = if rng.is_some() { c.dropout } else { 0.0 };

        let mut tokens = Vec::new();
        let mut positions = Vec::new();
        let mut targets = Vec::new();
        let mut weights = Vec::new();
        let mut starts = Vec::new();
        let mut lens = Vec::new();
        let mut prob_offsets = Vec::new();
        let mut prob_total = 0;
        for s in batch {
            if s.ids.len() < 2 {
                return Err(ModelError::Input("sequences need at least two tokens".into()));
            }
            let l = s.ids.len() - 1;
            if l > c.context_len {
                return Err(ModelError::ContextOverflow {
                    len: s.ids.len(),
                    context: c.context_len,
                });
            }
            if s.weights.len() != l {
                return Err(ModelError::Input("one weight per predicted token is required".into()));
            }
            if let Some(&bad) = s.ids.iter().find(|&&t| t as usize >= v) {
                return Err(ModelError::Input(format!("token id {bad} outside the vocabulary")));
            }
            starts.push(tokens.len());
            lens.push(l);
            prob_offsets.push(prob_total);
            prob_total += h * l * l;
            tokens.extend_from_slice(&s.ids[..l]);
            targets.extend_from_slice(&s.ids[1..]);
            positions.extend(0..l);
            weights.extend(s.weights.iter().map(|&w| T::of(f64::from(w))));
        }
        let n = tokens.len();

        let wte = self.p(self.layout.wte, v * d);
        let wpe = self.p(self.layout.wpe, c.context_len * d);
        let mut x = vec![T::zero(); n * d];
        for r in 0..n {
            let (t, pos) = (tokens[r] as usize, positions[r]);
            for j in 0..d {
                x[r * d + j] = wte[t * d + j] + wpe[pos * d + j];
            }
        }
        let mask0 = match rng.as_deref_mut() {
            Some(r) if p_drop > 0.0 => {
                let m = dropout_mask(n * d, p_drop, r);
                x.iter_mut().zip(&m).for_each(|(a, &b)| *a *= b);
                Some(m)
            }
            _ => None,
        };

        let scale = T::of(1.0 / (hd as f64).sqrt());
        let mut layers = Vec::with_capacity(c.n_layers);
        for lo in &self.layout.layers {
            let mut h1 = vec![T::zero(); n * d];
            let (ln1_xhat, ln1_rstd) = layer_norm(&x, self.p(lo.ln1_g, d), self.p(lo.ln1_b, d), d, &mut h1);
            let mut qkv = vec![T::zero(); n * 3 * d];
            matmul(n, d, 3 * d, &h1, self.p(lo.w_qkv, d * 3 * d), T::zero(), &mut qkv);
            add_bias(&mut qkv, self.p(lo.b_qkv, 3 * d));

            let mut probs = vec![T::zero(); prob_total];
            let mut att = vec![T::zero(); n * d];
            for (s, (&st, &l)) in starts.iter().zip(&lens).enumerate() {
                for head in 0..h {
                    let pbuf = &mut probs[prob_offsets[s] + head * l * l..prob_offsets[s] + (head + 1) * l * l];
                    let q = &qkv[st * 3 * d + head * hd..];
                    let k = &qkv[st * 3 * d + d + head * hd..];
                    let vv = &qkv[st * 3 * d + 2 * d + head * hd..];
                    T::gemm(l, hd, l, scale, q, 3 * d as isize, 1, k, 1, 3 * d as isize, T::zero(), pbuf, l as isize, 1);
                    for i in 0..l {
                        let row = &mut pbuf[i * l..(i + 1) * l];
                        let max = row[..=i].iter().copied().fold(T::neg_infinity(), T::max);
                        let mut sum = T::zero();
                        for val in &mut row[..=i] {
                            *val = (*val - max).exp();
                            sum += *val;
                        }
                        for val in &mut row[..=i] {
                            *val /= sum;
                        }
                        row[i + 1..].fill(T::zero());
                    }
                    let out = &mut att[st * d + head * hd..];
                    T::gemm(l, l, hd, T::one(), pbuf, l as isize, 1, vv, 3 * d as isize, 1, T::zero(), out, d as isize, 1);
                }
            }

            let mut a = vec![T::zero(); n * d];
            matmul(n, d, d, &att, self.p(lo.w_o, d * d), T::zero(), &mut a);
            add_bias(&mut a, self.p(lo.b_o, d));
            let mask1 = match rng.as_deref_mut() {
                Some(r) if p_drop > 0.0 => {
                    let m = dropout_mask(n * d, p_drop, r);
                    a.iter_mut().zip(&m).for_each(|(x, &b)| *x *= b);
                    Some(m)
                }
                _ => None,
            };
            x.iter_mut().zip(&a).for_each(|(x, &y)| *x += y);

            let mut h2 = vec![T::zero(); n * d];
            let (ln2_xhat, ln2_rstd) = layer_norm(&x, self.p(lo.ln2_g, d), self.p(lo.ln2_b, d), d, &mut h2);
            let mut f_pre = vec![T::zero(); n * f];
            matmul(n, d, f, &h2, self.p(lo.w_fc, d * f), T::zero(), &mut f_pre);
            add_bias(&mut f_pre, self.p(lo.b_fc, f));
            let g_act: Vec<T> = f_pre.iter().map(|&z| gelu(z)).collect();
            let mut m = vec![T::zero(); n * d];
            matmul(n, f, d, &g_act, self.p(lo.w_proj, f * d), T::zero(), &mut m);
            add_bias(&mut m, self.p(lo.b_proj, d));
            let mask2 = match rng.as_deref_mut() {
                Some(r) if p_drop > 0.0 => {
                    let mk = dropout_mask(n * d, p_drop, r);
                    m.iter_mut().zip(&mk).for_each(|(x, &b)| *x *= b);
                    Some(mk)
                }
                _ => None,
            };
            x.iter_mut().zip(&m).for_each(|(x, &y)| *x += y);

            layers.push(LayerCache {
                ln1_xhat,
                ln1_rstd,
                h1,
                qkv,
                probs,
                att,
                mask1,
                ln2_xhat,
                ln2_rstd,
                h2,
                f_pre,
                g_act,
                mask2,
            });
        }

        let mut hf = vec![T::zero(); n * d];
        let (lnf_xhat, lnf_rstd) = layer_norm(
            &x,
            self.p(self.layout.lnf_g, d),
            self.p(self.layout.lnf_b, d),
            d,
            &mut hf,
        );
        let mut probs = vec![T::zero(); n * v];
        matmul_bt(n, d, v, &hf, wte, T::zero(), &mut probs);

        let mut per_sequence = Vec::with_capacity(batch.len());
        let mut total_loss = 0.0;
        let mut total_weight = 0.0;
        for (&st, &l) in starts.iter().zip(&lens) {
            let (mut seq_loss, mut seq_w) = (0.0, 0.0);
            for r in st..st + l {
                let row = &mut probs[r * v..(r + 1) * v];
                let max = row.iter().copied().fold(T::neg_infinity(), T::max);
                let mut sum = T::zero();
                for val in row.iter_mut() {
                    *val = (*val - max).exp();
                    sum += *val;
                }
                for val in row.iter_mut() {
                    *val /= sum;
                }
                let w = weights[r].as_f64();
                if w != 0.0 {
                    let p = row[targets[r] as usize].as_f64().max(f64::MIN_POSITIVE);
                    seq_loss -= w * p.ln();
                    seq_w += w;
                }
            }
            total_loss += seq_loss;
            total_weight += seq_w;
            per_sequence.push((seq_loss, seq_w));
        }
        let mean = if total_weight > 0.0 { total_loss / total_weight } else { 0.0 };
        let cache = ForwardCache {
            tokens,
            positions,
            starts,
            lens,
            prob_offsets,
            mask0,
            layers,
            lnf_xhat,
            lnf_rstd,
            hf,
            probs,
            targets,
            weights,
            total_weight,
        };
        Ok((LossReport { mean, per_sequence }, cache))
    }

    /// Gradient of the batch's weighted mean NLL, accumulated into `grads`.
    pub fn backward(&self, cache: &ForwardCache<T>, grads: &mut [T]) {
        assert_eq!(grads.len(), self.layout.total);
        let c = &self.config;
        let (d, f, h, hd, v) = (c.d_model, c.d_ff, c.n_heads, c.head_dim(), self.vocab_size);
        let n = cache.tokens.len();
        if cache.total_weight <= 0.0 {
            return;
        }
        let inv_w = T::of(1.0 / cache.total_weight);

        let mut dlogits = cache.probs.clone();
        for r in 0..n {
            let w = cache.weights[r] * inv_w;
            let row = &mut dlogits[r * v..(r + 1) * v];
            row[cache.targets[r] as usize] -= T::one();
            for val in row.iter_mut() {
                *val *= w;
            }
        }
        let wte = self.p(self.layout.wte, v * d);
        let mut dhf = vec![T::zero(); n * d];
        matmul(n, v, d, &dlogits, wte, T::zero(), &mut dhf);
        {
            let dwte = &mut grads[self.layout.wte..self.layout.wte + v * d];
            matmul_at(v, n, d, &dlogits, &cache.hf, T::one(), dwte);
        }
        let mut dx = vec![T::zero(); n * d];
        {
            let (gf, rest) = grads.split_at_mut(self.layout.lnf_b);
            let dg = &mut gf[self.layout.lnf_g..self.layout.lnf_g + d];
            let db = &mut rest[..d];
            layer_norm_backward(
                &dhf,
                &cache.lnf_xhat,
                &cache.lnf_rstd,
                self.p(self.layout.lnf_g, d),
                d,
                &mut dx,
                dg,
                db,
            );
        }

        let scale = T::of(1.0 / (hd as f64).sqrt());
        for (lo, lc) in self.layout.layers.iter().zip(&cache.layers).rev() {
            // MLP branch
            let mut dm = dx.clone();
            if let Some(mask) = &lc.mask2 {
                dm.iter_mut().zip(mask).for_each(|(a, &b)| *a *= b);
            }
            matmul_at(f, n, d, &lc.g_act, &dm, T::one(), &mut grads[lo.w_proj..lo.w_proj + f * d]);
            col_sum_into(&dm, d, &mut grads[lo.b_proj..lo.b_proj + d]);
            let mut dg = vec![T::zero(); n * f];
            matmul_bt(n, d, f, &dm, self.p(lo.w_proj, f * d), T::zero(), &mut dg);
            for (g, &z) in dg.iter_mut().zip(&lc.f_pre) {
                *g *= gelu_grad(z);
            }
            matmul_at(d, n, f, &lc.h2, &dg, T::one(), &mut grads[lo.w_fc..lo.w_fc + d * f]);
            col_sum_into(&dg, f, &mut grads[lo.b_fc..lo.b_fc + f]);
            let mut dh2 = vec![T::zero(); n * d];
            matmul_bt(n, f, d, &dg, self.p(lo.w_fc, d * f), T::zero(), &mut dh2);
            {
                let (a, b) = grads.split_at_mut(lo.ln2_b);
                layer_norm_backward(
                    &dh2,
                    &lc.ln2_xhat,
                    &lc.ln2_rstd,
                    self.p(lo.ln2_g, d),
                    d,
                    &mut dx,
                    &mut a[lo.ln2_g..lo.ln2_g + d],
                    &mut b[..d],
                );
            }

            // attention branch
            let mut da = dx.clone();
            if let Some(mask) = &lc.mask1 {
                da.iter_mut().zip(mask).for_each(|(a, &b)| *a *= b);
            }
            matmul_at(d, n, d, &lc.att, &da, T::one(), &mut grads[lo.w_o..lo.w_o + d * d]);
            col_sum_into(&da, d, &mut grads[lo.b_o..lo.b_o + d]);
            let mut datt = vec![T::zero(); n * d];
            matmul_bt(n, d, d, &da, self.p(lo.w_o, d * d), T::zero(), &mut datt);

            let mut dqkv = vec![T::zero(); n * 3 * d];
            for (s, (&st, &l)) in cache.starts.iter().zip(&cache.lens).enumerate() {
                let mut dp = vec![T::zero(); l * l];
                for head in 0..h {
                    let off = cache.prob_offsets[s] + head * l * l;
                    let p = &lc.probs[off..off + l * l];
                    let q_off = st * 3 * d + head * hd;
                    let k_off = q_off + d;
                    let v_off = q_off + 2 * d;
                    let dout = &datt[st * d + head * hd..];
                    // dP = dO V^T
                    T::gemm(
                        l,
                        hd,
                        l,
                        T::one(),
                        dout,
                        d as isize,
                        1,
                        &lc.qkv[v_off..],
                        1,
                        3 * d as isize,
                        T::zero(),
                        &mut dp,
                        l as isize,
                        1,
                    );
                    // dV = P^T dO
                    T::gemm(
                        l,
                        l,
                        hd,
                        T::one(),
                        p,
                        1,
                        l as isize,
                        dout,
                        d as isize,
                        1,
                        T::one(),
                        &mut dqkv[v_off..],
                        3 * d as isize,
                        1,
                    );
                    // softmax backward, in place: dS = P * (dP - rowsum(dP * P))
                    for i in 0..l {
                        let row = &mut dp[i * l..(i + 1) * l];
                        let prow = &p[i * l..(i + 1) * l];
                        let dot: T = (0..=i).map(|j| row[j] * prow[j]).sum();
                        for j in 0..=i {
                            row[j] = prow[j] * (row[j] - dot);
                        }
                        row[i + 1..].fill(T::zero());
                    }
                    // dQ = dS K * scale
                    T::gemm(
                        l,
                        l,
                        hd,
                        scale,
                        &dp,
                        l as isize,
                        1,
                        &lc.qkv[k_off..],
                        3 * d as isize,
                        1,
                        T::one(),
                        &mut dqkv[q_off..],
                        3 * d as isize,
                        1,
                    );
                    // dK = dS^T Q * scale
                    T::gemm(
                        l,
                        l,
                        hd,
                        scale,
                        &dp,
                        1,
                        l as isize,
                        &lc.qkv[q_off..],
                        3 * d as isize,
                        1,
                        T::one(),
                        &mut dqkv[k_off..],
                        3 * d as isize,
                        1,
                    );
                }
            }
            matmul_at(d, n, 3 * d, &lc.h1, &dqkv, T::one(), &mut grads[lo.w_qkv..lo.w_qkv + d * 3 * d]);
            col_sum_into(&dqkv, 3 * d, &mut grads[lo.b_qkv..lo.b_qkv + 3 * d]);
            let mut dh1 = vec![T::zero(); n * d];
            matmul_bt(n, 3 * d, d, &dqkv, self.p(lo.w_qkv, d * 3 * d), T::zero(), &mut dh1);
            {
                let (a, b) = grads.split_at_mut(lo.ln1_b);
                layer_norm_backward(
                    &dh1,
                    &lc.ln1_xhat,
                    &lc.ln1_rstd,
                    self.p(lo.ln1_g, d),
                    d,
                    &mut dx,
                    &mut a[lo.ln1_g..lo.ln1_g + d],
                    &mut b[..d],
                );
            }
        }

        if let Some(mask) = &cache.mask0 {
            dx.iter_mut().zip(mask).for_each(|(a, &b)| *a *= b);
        }
        for r in 0..n {
            let (t, pos) = (cache.tokens[r] as usize, cache.positions[r]);
            for j in 0..d {
                grads[self.layout.wte + t * d + j] += dx[r * d + j];
                grads[self.layout.wpe + pos * d + j] += dx[r * d + j];
            }
        }
    }

    /// Next-token distributions at every position of `ids` (row-major,
    /// `ids.len() x vocab`), without dropout.
    pub fn distributions(&self, ids: &[u32]) -> Result<Vec<T>, ModelError> {
        let mut padded = ids.to_vec();
        padded.push(0);
        let weights = vec![0.0; ids.len()];
        let (_, cache) = self.forward(
            &[Sequence {
                ids: &padded,
                weights: &weights,
            }],
            None,
        )?;
        Ok(cache.probs)
    }

    pub fn new_cache(&self) -> KvCache<T> {
        let c = &self.config;
        KvCache {
            k: vec![vec![T::zero(); c.context_len * c.d_model]; c.n_layers],
            v: vec![vec![T::zero(); c.context_len * c.d_model]; c.n_layers],
            len: 0,
        }
    }

    /// Feeds one token per cache (at that cache's next position) and returns
    /// the next-token distributions, one row per cache.
    pub fn step(&self, tokens: &[u32], caches: &mut [KvCache<T>]) -> Result<Vec<T>, ModelError> {
        assert_eq!(tokens.len(), caches.len());
        let c = &self.config;
        let (d, f, h, hd, v) = (c.d_model, c.d_ff, c.n_heads, c.head_dim(), self.vocab_size);
        let b = tokens.len();
        for (cache, &t) in caches.iter().zip(tokens) {
            if cache.len >= c.context_len {
                return Err(ModelError::ContextOverflow {
                    len: cache.len + 1,
                    context: c.context_len,
                });
            }
            if t as usize >= v {
                return Err(ModelError::Input(format!("token id {t} outside the vocabulary")));
            }
        }
        let wte = self.p(self.layout.wte, v * d);
        let wpe = self.p(self.layout.wpe, c.context_len * d);
        let mut x = vec![T::zero(); b * d];
        for r in 0..b {
            let (t, pos) = (tokens[r] as usize, caches[r].len);
            for j in 0..d {
                x[r * d + j] = wte[t * d + j] + wpe[pos * d + j];
            }
        }
        let scale = T::of(1.0 / (hd as f64).sqrt());
        let mut hbuf = vec![T::zero(); b * d];
        let mut qkv = vec![T::zero(); b * 3 * d];
        let mut att = vec![T::zero(); b * d];
        let mut a = vec![T::zero(); b * d];
        let mut fbuf = vec![T::zero(); b * f];
        for (li, lo) in self.layout.layers.iter().enumerate() {
            layer_norm(&x, self.p(lo.ln1_g, d), self.p(lo.ln1_b, d), d, &mut hbuf);
            matmul(b, d, 3 * d, &hbuf, self.p(lo.w_qkv, d * 3 * d), T::zero(), &mut qkv);
            add_bias(&mut qkv, self.p(lo.b_qkv, 3 * d));
            for r in 0..b {
                let cache = &mut caches[r];
                let pos = cache.len;
                cache.k[li][pos * d..(pos + 1) * d].copy_from_slice(&qkv[r * 3 * d + d..r * 3 * d + 2 * d]);
                cache.v[li][pos * d..(pos + 1) * d].copy_from_slice(&qkv[r * 3 * d + 2 * d..r * 3 * d + 3 * d]);
                let mut scores = vec![T::zero(); pos + 1];
                for head in 0..h {
                    let q = &qkv[r * 3 * d + head * hd..r * 3 * d + (head + 1) * hd];
                    for (j, s) in scores.iter_mut().enumerate() {
                        let k = &cache.k[li][j * d + head * hd..j * d + (head + 1) * hd];
                        *s = q.iter().zip(k).map(|(&x, &y)| x * y).sum::<T>() * scale;
                    }
                    let max = scores.iter().copied().fold(T::neg_infinity(), T::max);
                    let mut sum = T::zero();
                    for s in scores.iter_mut() {
                        *s = (*s - max).exp();
                        sum += *s;
                    }
                    let out = &mut att[r * d + head * hd..r * d + (head + 1) * hd];
                    out.fill(T::zero());
                    for (j, &s) in scores.iter().enumerate() {
                        let w = s / sum;
                        let vv = &cache.v[li][j * d + head * hd..j * d + (head + 1) * hd];
                        for (o, &val) in out.iter_mut().zip(vv) {
                            *o += w * val;
                        }
                    }
                }
            }
            matmul(b, d, d, &att, self.p(lo.w_o, d * d), T::zero(), &mut a);
            add_bias(&mut a, self.p(lo.b_o, d));
            x.iter_mut().zip(&a).for_each(|(x, &y)| *x += y);
            layer_norm(&x, self.p(lo.ln2_g, d), self.p(lo.ln2_b, d), d, &mut hbuf);
            matmul(b, d, f, &hbuf, self.p(lo.w_fc, d * f), T::zero(), &mut fbuf);
            add_bias(&mut fbuf, self.p(lo.b_fc, f));
            fbuf.iter_mut().for_each(|z| *z = gelu(*z));
            matmul(b, f, d, &fbuf, self.p(lo.w_proj, f * d), T::zero(), &mut a);
            add_bias(&mut a, self.p(lo.b_proj, d));
            x.iter_mut().zip(&a).for_each(|(x, &y)| *x += y);
        }
        for cache in caches.iter_mut() {
            cache.len += 1;
        }
        layer_norm(
            &x,
            self.p(self.layout.lnf_g, d),
            self.p(self.layout.lnf_b, d),
            d,
            &mut hbuf,
        );
        let mut probs = vec![T::zero(); b * v];
        matmul_bt(b, d, v, &hbuf, wte, T::zero(), &mut probs);
        for row in probs.chunks_mut(v) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for val in row.iter_mut() {
                *val = (*val - max).exp();
                sum += *val;
            }
            for val in row.iter_mut() {
                *val /= sum;
            }
        }
        Ok(probs)
    }
}

/// Keys and values of every processed position, per layer.
#[derive(Debug, Clone)]
pub struct KvCache<T> {
    k: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    len: usize,
}

impl<T> KvCache<T> {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            n_layers: 2,
            n_heads: 2,
            d_model: 16,
            d_ff: 32,
            context_len: 12,
            dropout: 0.0,
            seed: 7,
        }
    }

    #[test]
    fn desk_model_size() {
        let m = Model::<f32>::new(ModelConfig::default(), 512).unwrap();
        assert!((500_000..3_000_000).contains(&m.num_params()), "{}", m.num_params());
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = tiny();
        c.n_heads = 3;
        assert!(Model::<f32>::new(c, 10).is_err());
        assert!(Model::<f32>::new(tiny(), 0).is_err());
    }

    #[test]
    fn distributions_are_normalized() {
        let m = Model::<f32>::with_init_scale(tiny(), 11, 0.5).unwrap();
        let probs = m.distributions(&[0, 4, 7, 9, 2]).unwrap();
        for row in probs.chunks(11) {
            let s: f64 = row.iter().map(|&x| f64::from(x)).sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn causal() {
        let m = Model::<f64>::with_init_scale(tiny(), 11, 0.5).unwrap();
        let a = m.distributions(&[0, 4, 7, 9, 2, 5]).unwrap();
        let b = m.distributions(&[0, 4, 7, 1, 8, 10]).unwrap();
        // rows 0..=2 see only the shared prefix
        assert_eq!(a[..3 * 11], b[..3 * 11]);
        assert_ne!(a[3 * 11..4 * 11], b[3 * 11..4 * 11]);
    }

    #[test]
    fn kv_cache_matches_full_forward() {
        let m = Model::<f64>::with_init_scale(tiny(), 11, 0.5).unwrap();
        let ids = [0u32, 4, 7, 9, 2, 5, 3];
        let full = m.distributions(&ids).unwrap();
        let mut caches = vec![m.new_cache()];
        for (t, &id) in ids.iter().enumerate() {
            let row = m.step(&[id], &mut caches).unwrap();
            for (x, y) in row.iter().zip(&full[t * 11..(t + 1) * 11]) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn batched_steps_are_independent() {
        let m = Model::<f32>::with_init_scale(tiny(), 11, 0.5).unwrap();
        let mut solo = vec![m.new_cache()];
        let mut pair = vec![m.new_cache(), m.new_cache()];
        m.step(&[3], &mut pair[1..]).unwrap();
        let a = m.step(&[5], &mut solo).unwrap();
        let b = m.step(&[5, 6], &mut pair).unwrap();
        assert_eq!(&b[..11], &a[..]);
    }

    #[test]
    fn untrained_loss_is_near_uniform() {
        let m = Model::<f32>::new(tiny(), 11).unwrap();
        let ids = [0u32, 4, 7, 9, 2, 5];
        let w = [1.0f32; 5];
        let (loss, _) = m.forward(&[Sequence { ids: &ids, weights: &w }], None).unwrap();
        let uniform = (11f64).ln();
        assert!((loss.mean - uniform).abs() < 0.1 * uniform);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let m = Model::<f64>::with_init_scale(tiny(), 11, 0.3).unwrap();
        let a = [0u32, 4, 7, 9, 2, 5, 1];
        let wa = [0.0f32, 0.0, 1.0, 1.0, 1.0, 1.0];
        let b = [0u32, 3, 3, 10, 1];
        let wb = [1.0f32; 4];
        let batch = [Sequence { ids: &a, weights: &wa }, Sequence { ids: &b, weights: &wb }];
        let (_, cache) = m.forward(&batch, None).unwrap();
        let mut grads = vec![0.0; m.num_params()];
        m.backward(&cache, &mut grads);

        let loss = |params: &[f64]| {
            let probe = Model::from_params(m.config.clone(), 11, params.to_vec()).unwrap();
            probe.forward(&batch, None).unwrap().0.mean
        };
        let eps = 1e-5;
        let mut params = m.params.clone();
        let mut worst = 0.0f64;
        for i in (0..params.len()).step_by(3) {
            let orig = params[i];
            params[i] = orig + eps;
            let up = loss(&params);
            params[i] = orig - eps;
            let down = loss(&params);
            params[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let scale = grads[i].abs() + numeric.abs();
            if scale < 1e-9 {
                continue;
            }
            worst = worst.max((grads[i] - numeric).abs() / scale);
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn dropout_is_seeded() {
        let mut c = tiny();
        c.dropout = 0.3;
        let m = Model::<f32>::new(c, 11).unwrap();
        let ids = [0u32, 4, 7, 9, 2, 5];
        let w = [1.0f32; 5];
        let batch = [Sequence { ids: &ids, weights: &w }];
        let run = |seed| m.forward(&batch, Some(&mut ChaCha8Rng::seed_from_u64(seed))).unwrap().0.mean;
        assert_eq!(run(1), run(1));
        assert_ne!(run(1), run(2));
    }

    #[test]
    fn context_overflow() {
        let m = Model::<f32>::new(tiny(), 11).unwrap();
        let ids = vec![1u32; 14];
        let w = vec![1.0f32; 13];
        assert!(matches!(
            m.forward(&[Sequence { ids: &ids, weights: &w }], None),
            Err(ModelError::ContextOverflow { .. })
        ));
    }
}
