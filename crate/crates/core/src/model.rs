//! Tiny decoder-only autoregressive LM.
//!
//! Weights are stored as f32 tensors (matching the checkpoint format); all
//! arithmetic runs in f64 so that gradients survive a central-difference
//! check at 1e-4 relative. The output head is untied and fixed at
//! `vocab_base_size` classes: plugging extra embedding rows can never change
//! the softmax denominator on clean inputs.

// indexed loops are the clearer idiom in the numeric kernels below
#![allow(clippy::needless_range_loop, clippy::type_complexity)]

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::vocab::{TokenId, Vocab, BASE_VOCAB_SIZE, EOT};
use serde::{Deserialize, Serialize};

const RMS_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_base_size: usize,
    pub dim: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub context_len: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_base_size: BASE_VOCAB_SIZE,
            dim: 64,
            n_layers: 2,
            n_heads: 4,
            context_len: 128,
            seed: 42,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.n_heads == 0 || !self.dim.is_multiple_of(self.n_heads) {
            return Err(Error::Invalid(format!(
                "dim {} must be a positive multiple of n_heads {}",
                self.dim, self.n_heads
            )));
        }
        if self.vocab_base_size == 0 || self.context_len == 0 || self.n_layers == 0 {
            return Err(Error::Invalid("config sizes must be positive".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.n_heads
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub norm_attn: Vec<f32>, // [d]
    pub wq: Vec<f32>,        // [d x d], row-major [out][in]
    pub wk: Vec<f32>,
    pub wv: Vec<f32>,
    pub wo: Vec<f32>,
    pub norm_mlp: Vec<f32>, // [d]
    pub w_up: Vec<f32>,     // [4d x d]
    pub w_down: Vec<f32>,   // [d x 4d]
}

/// All weights of the model. The embedding table may grow past
/// `vocab_base_size` rows when copyright tokens are plugged; every other
/// tensor's shape is fixed by the config.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub config: ModelConfig,
    pub embedding: Vec<f32>, // [vocab_len x d]
    pub pos: Vec<f32>,       // [context_len x d]
    pub layers: Vec<LayerParams>,
    pub norm_final: Vec<f32>, // [d]
    pub head: Vec<f32>,       // [vocab_base_size x d]
}

impl Parameters {
    /// Random initialization from the config seed.
    pub fn init(config: &ModelConfig) -> Result<Parameters> {
        config.validate()?;
        let d = config.dim;
        let mut rng = Rng::new(config.seed);
        let gauss = |n: usize, std: f64, rng: &mut Rng| -> Vec<f32> {
            (0..n).map(|_| (rng.gauss() * std) as f32).collect()
        };
        // residual projections scaled down so deep stacks start tame
        let res_std = 0.02 / (2.0 * config.n_layers as f64).sqrt();
        let layers = (0..config.n_layers)
            .map(|_| LayerParams {
                norm_attn: vec![1.0; d],
                wq: gauss(d * d, 0.02, &mut rng),
                wk: gauss(d * d, 0.02, &mut rng),
                wv: gauss(d * d, 0.02, &mut rng),
                wo: gauss(d * d, res_std, &mut rng),
                norm_mlp: vec![1.0; d],
                w_up: gauss(4 * d * d, 0.02, &mut rng),
                w_down: gauss(4 * d * d, res_std, &mut rng),
            })
            .collect();
        Ok(Parameters {
            config: config.clone(),
            embedding: gauss(config.vocab_base_size * d, 0.02, &mut rng),
            pos: gauss(config.context_len * d, 0.02, &mut rng),
            layers,
            norm_final: vec![1.0; d],
            head: gauss(config.vocab_base_size * d, 0.02, &mut rng),
        })
    }

    pub fn vocab_len(&self) -> usize {
        self.embedding.len() / self.config.dim
    }

    pub fn embedding_row(&self, id: TokenId) -> Result<&[f32]> {
        let d = self.config.dim;
        let rows = self.vocab_len();
        if (id as usize) >= rows {
            return Err(Error::IdOutOfVocab {
                id,
                len: rows,
            });
        }
        Ok(&self.embedding[id as usize * d..(id as usize + 1) * d])
    }

    /// Tensors in canonical manifest order: embedding first, head last.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[f32])> {
        let d = self.config.dim;
        let mut out: Vec<(String, Vec<usize>, &[f32])> = Vec::new();
        out.push((
            "embedding_table".into(),
            vec![self.vocab_len(), d],
            &self.embedding,
        ));
        out.push(("pos_table".into(), vec![self.config.context_len, d], &self.pos));
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("layer{i}.norm_attn"), vec![d], &l.norm_attn));
            out.push((format!("layer{i}.wq"), vec![d, d], &l.wq));
            out.push((format!("layer{i}.wk"), vec![d, d], &l.wk));
            out.push((format!("layer{i}.wv"), vec![d, d], &l.wv));
            out.push((format!("layer{i}.wo"), vec![d, d], &l.wo));
            out.push((format!("layer{i}.norm_mlp"), vec![d], &l.norm_mlp));
            out.push((format!("layer{i}.w_up"), vec![4 * d, d], &l.w_up));
            out.push((format!("layer{i}.w_down"), vec![d, 4 * d], &l.w_down));
        }
        out.push(("norm_final".into(), vec![d], &self.norm_final));
        out.push((
            "output_head".into(),
            vec![self.config.vocab_base_size, d],
            &self.head,
        ));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Vec<f32>)> {
        let mut out: Vec<(String, &mut Vec<f32>)> = Vec::new();
        out.push(("embedding_table".into(), &mut self.embedding));
        out.push(("pos_table".into(), &mut self.pos));
        for (i, l) in self.layers.iter_mut().enumerate() {
            out.push((format!("layer{i}.norm_attn"), &mut l.norm_attn));
            out.push((format!("layer{i}.wq"), &mut l.wq));
            out.push((format!("layer{i}.wk"), &mut l.wk));
            out.push((format!("layer{i}.wv"), &mut l.wv));
            out.push((format!("layer{i}.wo"), &mut l.wo));
            out.push((format!("layer{i}.norm_mlp"), &mut l.norm_mlp));
            out.push((format!("layer{i}.w_up"), &mut l.w_up));
            out.push((format!("layer{i}.w_down"), &mut l.w_down));
        }
        out.push(("norm_final".into(), &mut self.norm_final));
        out.push(("output_head".into(), &mut self.head));
        out
    }
}

/// Row lookup into the embedding table, as f64 vectors.
pub fn embed(tokens: &[TokenId], params: &Parameters) -> Result<Vec<Vec<f64>>> {
    tokens
        .iter()
        .map(|&id| {
            params
                .embedding_row(id)
                .map(|row| row.iter().map(|&v| v as f64).collect())
        })
        .collect()
}

// ---- forward/backward -------------------------------------------------

fn linear(w: &[f32], x: &[f64], n_out: usize, n_in: usize) -> Vec<f64> {
    debug_assert_eq!(w.len(), n_out * n_in);
    debug_assert_eq!(x.len(), n_in);
    (0..n_out)
        .map(|o| {
            w[o * n_in..(o + 1) * n_in]
                .iter()
                .zip(x)
                .map(|(&w, &x)| w as f64 * x)
                .sum()
        })
        .collect()
}

fn linear_bwd_x(dx: &mut [f64], dy: &[f64], w: &[f32], n_out: usize, n_in: usize) {
    for o in 0..n_out {
        let g = dy[o];
        if g == 0.0 {
            continue;
        }
        let row = &w[o * n_in..(o + 1) * n_in];
        for i in 0..n_in {
            dx[i] += g * row[i] as f64;
        }
    }
}

fn linear_bwd_w(dw: &mut [f64], dy: &[f64], x: &[f64], n_out: usize, n_in: usize) {
    for o in 0..n_out {
        let g = dy[o];
        if g == 0.0 {
            continue;
        }
        let row = &mut dw[o * n_in..(o + 1) * n_in];
        for i in 0..n_in {
            row[i] += g * x[i];
        }
    }
}

fn rmsnorm(x: &[f64], gain: &[f32]) -> (Vec<f64>, f64) {
    let n = x.len() as f64;
    let ms = x.iter().map(|v| v * v).sum::<f64>() / n;
    let inv = 1.0 / (ms + RMS_EPS).sqrt();
    let y = x
        .iter()
        .zip(gain)
        .map(|(&v, &g)| g as f64 * v * inv)
        .collect();
    (y, inv)
}

fn rmsnorm_bwd(
    dy: &[f64],
    x: &[f64],
    gain: &[f32],
    inv: f64,
    dgain: Option<&mut [f64]>,
) -> Vec<f64> {
    let n = x.len() as f64;
    if let Some(dg) = dgain {
        for i in 0..x.len() {
            dg[i] += dy[i] * x[i] * inv;
        }
    }
    let h: Vec<f64> = dy.iter().zip(gain).map(|(&d, &g)| d * g as f64).collect();
    let dot: f64 = h.iter().zip(x).map(|(a, b)| a * b).sum();
    x.iter()
        .zip(&h)
        .map(|(&xi, &hi)| inv * hi - xi * inv * inv * inv / n * dot)
        .collect()
}

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

fn silu_grad(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let ex: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = ex.iter().sum();
    ex.iter().map(|v| v / s).collect()
}

struct LayerCache {
    x_in: Vec<Vec<f64>>,
    normed_attn: Vec<Vec<f64>>,
    inv_attn: Vec<f64>,
    q: Vec<Vec<f64>>,
    k: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    // attn_probs[h][t] = weights over 0..=t
    attn_probs: Vec<Vec<Vec<f64>>>,
    ctx: Vec<Vec<f64>>,
    x_mid: Vec<Vec<f64>>,
    normed_mlp: Vec<Vec<f64>>,
    inv_mlp: Vec<f64>,
    up: Vec<Vec<f64>>,
    act: Vec<Vec<f64>>,
}

struct ForwardCache {
    layers: Vec<LayerCache>,
    x_final: Vec<Vec<f64>>,
    normed_final: Vec<Vec<f64>>,
    inv_final: Vec<f64>,
}

fn forward(params: &Parameters, inputs: &[Vec<f64>], want_cache: bool) -> (Vec<Vec<f64>>, Option<ForwardCache>) {
    let cfg = &params.config;
    let d = cfg.dim;
    let hd = cfg.head_dim();
    let n_heads = cfg.n_heads;
    let t_len = inputs.len();
    let scale = 1.0 / (hd as f64).sqrt();

    let mut x: Vec<Vec<f64>> = inputs
        .iter()
        .enumerate()
        .map(|(t, e)| {
            let p = &params.pos[t * d..(t + 1) * d];
            e.iter().zip(p).map(|(&a, &b)| a + b as f64).collect()
        })
        .collect();

    let mut caches = Vec::with_capacity(if want_cache { cfg.n_layers } else { 0 });

    for layer in &params.layers {
        let x_in = x.clone();
        let mut normed = Vec::with_capacity(t_len);
        let mut invs = Vec::with_capacity(t_len);
        for xt in &x {
            let (n, inv) = rmsnorm(xt, &layer.norm_attn);
            normed.push(n);
            invs.push(inv);
        }
        let q: Vec<Vec<f64>> = normed.iter().map(|n| linear(&layer.wq, n, d, d)).collect();
        let k: Vec<Vec<f64>> = normed.iter().map(|n| linear(&layer.wk, n, d, d)).collect();
        let v: Vec<Vec<f64>> = normed.iter().map(|n| linear(&layer.wv, n, d, d)).collect();

        let mut probs: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(t_len); n_heads];
        let mut ctx = vec![vec![0.0; d]; t_len];
        for h in 0..n_heads {
            let lo = h * hd;
            for t in 0..t_len {
                let qs = &q[t][lo..lo + hd];
                let scores: Vec<f64> = (0..=t)
                    .map(|u| {
                        qs.iter()
                            .zip(&k[u][lo..lo + hd])
                            .map(|(a, b)| a * b)
                            .sum::<f64>()
                            * scale
                    })
                    .collect();
                let p = softmax(&scores);
                for (u, &pu) in p.iter().enumerate() {
                    for i in 0..hd {
                        ctx[t][lo + i] += pu * v[u][lo + i];
                    }
                }
                probs[h].push(p);
            }
        }

        let mut x_mid = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let attn_out = linear(&layer.wo, &ctx[t], d, d);
            let xm: Vec<f64> = x[t].iter().zip(&attn_out).map(|(a, b)| a + b).collect();
            x_mid.push(xm);
        }

        let mut normed_mlp = Vec::with_capacity(t_len);
        let mut invs_mlp = Vec::with_capacity(t_len);
        let mut ups = Vec::with_capacity(t_len);
        let mut acts = Vec::with_capacity(t_len);
        let mut x_out = Vec::with_capacity(t_len);
        for xm in &x_mid {
            let (n, inv) = rmsnorm(xm, &layer.norm_mlp);
            let up = linear(&layer.w_up, &n, 4 * d, d);
            let act: Vec<f64> = up.iter().map(|&u| silu(u)).collect();
            let down = linear(&layer.w_down, &act, d, 4 * d);
            x_out.push(xm.iter().zip(&down).map(|(a, b)| a + b).collect());
            normed_mlp.push(n);
            invs_mlp.push(inv);
            ups.push(up);
            acts.push(act);
        }

        if want_cache {
            caches.push(LayerCache {
                x_in,
                normed_attn: normed,
                inv_attn: invs,
                q,
                k,
                v,
                attn_probs: probs,
                ctx,
                x_mid,
                normed_mlp,
                inv_mlp: invs_mlp,
                up: ups,
                act: acts,
            });
        }
        x = x_out;
    }

    let mut normed_final = Vec::with_capacity(t_len);
    let mut inv_final = Vec::with_capacity(t_len);
    for xt in &x {
        let (n, inv) = rmsnorm(xt, &params.norm_final);
        normed_final.push(n);
        inv_final.push(inv);
    }

    let cache = want_cache.then_some(ForwardCache {
        layers: caches,
        x_final: x,
        normed_final: normed_final.clone(),
        inv_final,
    });
    (normed_final, cache)
}

/// Per-position logits over the `vocab_base_size` output classes.
pub fn forward_logits(params: &Parameters, inputs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    check_context(params, inputs.len())?;
    check_dims(params, inputs)?;
    let (normed, _) = forward(params, inputs, false);
    let cfg = &params.config;
    Ok(normed
        .iter()
        .map(|n| linear(&params.head, n, cfg.vocab_base_size, cfg.dim))
        .collect())
}

fn check_context(params: &Parameters, needed: usize) -> Result<()> {
    if needed > params.config.context_len {
        return Err(Error::ContextOverflow {
            needed,
            context: params.config.context_len,
            detail: String::new(),
        });
    }
    Ok(())
}

fn check_dims(params: &Parameters, inputs: &[Vec<f64>]) -> Result<()> {
    for v in inputs {
        if v.len() != params.config.dim {
            return Err(Error::DimensionMismatch {
                got: v.len(),
                expected: params.config.dim,
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Invalid("non-finite embedding value".into()));
        }
    }
    Ok(())
}

/// Weight gradients, shaped like [`Parameters`] but in f64.
pub struct ParamGrads {
    pub embedding: Vec<f64>,
    pub pos: Vec<f64>,
    pub layers: Vec<LayerGrads>,
    pub norm_final: Vec<f64>,
    pub head: Vec<f64>,
}

pub struct LayerGrads {
    pub norm_attn: Vec<f64>,
    pub wq: Vec<f64>,
    pub wk: Vec<f64>,
    pub wv: Vec<f64>,
    pub wo: Vec<f64>,
    pub norm_mlp: Vec<f64>,
    pub w_up: Vec<f64>,
    pub w_down: Vec<f64>,
}

impl ParamGrads {
    pub fn zeros(params: &Parameters) -> ParamGrads {
        let d = params.config.dim;
        ParamGrads {
            embedding: vec![0.0; params.embedding.len()],
            pos: vec![0.0; params.pos.len()],
            layers: (0..params.config.n_layers)
                .map(|_| LayerGrads {
                    norm_attn: vec![0.0; d],
                    wq: vec![0.0; d * d],
                    wk: vec![0.0; d * d],
                    wv: vec![0.0; d * d],
                    wo: vec![0.0; d * d],
                    norm_mlp: vec![0.0; d],
                    w_up: vec![0.0; 4 * d * d],
                    w_down: vec![0.0; 4 * d * d],
                })
                .collect(),
            norm_final: vec![0.0; d],
            head: vec![0.0; params.head.len()],
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Vec<f64>)> {
        let mut out: Vec<(String, &mut Vec<f64>)> = Vec::new();
        out.push(("embedding_table".into(), &mut self.embedding));
        out.push(("pos_table".into(), &mut self.pos));
        for (i, l) in self.layers.iter_mut().enumerate() {
            out.push((format!("layer{i}.norm_attn"), &mut l.norm_attn));
            out.push((format!("layer{i}.wq"), &mut l.wq));
            out.push((format!("layer{i}.wk"), &mut l.wk));
            out.push((format!("layer{i}.wv"), &mut l.wv));
            out.push((format!("layer{i}.wo"), &mut l.wo));
            out.push((format!("layer{i}.norm_mlp"), &mut l.norm_mlp));
            out.push((format!("layer{i}.w_up"), &mut l.w_up));
            out.push((format!("layer{i}.w_down"), &mut l.w_down));
        }
        out.push(("norm_final".into(), &mut self.norm_final));
        out.push(("output_head".into(), &mut self.head));
        out
    }
}

pub(crate) struct BackwardRequest<'a> {
    pub inputs: &'a [Vec<f64>],
    /// (input position, target token) pairs; loss is summed NLL over these.
    pub supervised: &'a [(usize, TokenId)],
    pub want_param_grads: bool,
    pub want_input_grads: bool,
}

pub(crate) struct BackwardResult {
    pub nll: f64,
    pub param_grads: Option<ParamGrads>,
    pub input_grads: Option<Vec<Vec<f64>>>,
}

/// Teacher-forced NLL with reverse-mode gradients.
pub(crate) fn forward_backward(params: &Parameters, req: &BackwardRequest) -> Result<BackwardResult> {
    check_context(params, req.inputs.len())?;
    check_dims(params, req.inputs)?;
    let cfg = &params.config;
    let d = cfg.dim;
    let hd = cfg.head_dim();
    let n_heads = cfg.n_heads;
    let t_len = req.inputs.len();
    let scale = 1.0 / (hd as f64).sqrt();
    let n_classes = cfg.vocab_base_size;

    let (_, cache) = forward(params, req.inputs, true);
    let cache = cache.expect("cache requested");

    let mut grads = req.want_param_grads.then(|| ParamGrads::zeros(params));

    // loss and d_normed_final at supervised positions
    let mut nll = 0.0;
    let mut d_final: Vec<Vec<f64>> = vec![vec![0.0; d]; t_len];
    for &(pos, target) in req.supervised {
        assert!(pos < t_len, "supervised position out of range");
        assert!((target as usize) < n_classes, "target outside head classes");
        let logits = linear(&params.head, &cache.normed_final[pos], n_classes, d);
        let probs = softmax(&logits);
        nll -= probs[target as usize].ln();
        let mut d_logits = probs;
        d_logits[target as usize] -= 1.0;
        if let Some(g) = grads.as_mut() {
            linear_bwd_w(&mut g.head, &d_logits, &cache.normed_final[pos], n_classes, d);
        }
        linear_bwd_x(&mut d_final[pos], &d_logits, &params.head, n_classes, d);
    }

    // final norm backward
    let mut dx: Vec<Vec<f64>> = (0..t_len)
        .map(|t| {
            rmsnorm_bwd(
                &d_final[t],
                &cache.x_final[t],
                &params.norm_final,
                cache.inv_final[t],
                grads.as_mut().map(|g| g.norm_final.as_mut_slice()),
            )
        })
        .collect();

    for (li, layer) in params.layers.iter().enumerate().rev() {
        let lc = &cache.layers[li];
        let lg = grads.as_mut().map(|g| &mut g.layers[li]);
        let mut lg = lg;

        // MLP block
        let mut d_xmid: Vec<Vec<f64>> = dx.clone(); // residual branch
        for t in 0..t_len {
            let d_down = &dx[t];
            let mut d_act = vec![0.0; 4 * d];
            if let Some(g) = lg.as_deref_mut() {
                linear_bwd_w(&mut g.w_down, d_down, &lc.act[t], d, 4 * d);
            }
            linear_bwd_x(&mut d_act, d_down, &layer.w_down, d, 4 * d);
            let d_up: Vec<f64> = d_act
                .iter()
                .zip(&lc.up[t])
                .map(|(&da, &u)| da * silu_grad(u))
                .collect();
            let mut d_norm = vec![0.0; d];
            if let Some(g) = lg.as_deref_mut() {
                linear_bwd_w(&mut g.w_up, &d_up, &lc.normed_mlp[t], 4 * d, d);
            }
            linear_bwd_x(&mut d_norm, &d_up, &layer.w_up, 4 * d, d);
            let d_res = rmsnorm_bwd(
                &d_norm,
                &lc.x_mid[t],
                &layer.norm_mlp,
                lc.inv_mlp[t],
                lg.as_deref_mut().map(|g| g.norm_mlp.as_mut_slice()),
            );
            for i in 0..d {
                d_xmid[t][i] += d_res[i];
            }
        }

        // attention block
        let mut d_ctx = vec![vec![0.0; d]; t_len];
        let mut d_x = d_xmid.clone(); // residual branch into x_in
        for t in 0..t_len {
            if let Some(g) = lg.as_deref_mut() {
                linear_bwd_w(&mut g.wo, &d_xmid[t], &lc.ctx[t], d, d);
            }
            linear_bwd_x(&mut d_ctx[t], &d_xmid[t], &layer.wo, d, d);
        }

        let mut d_q = vec![vec![0.0; d]; t_len];
        let mut d_k = vec![vec![0.0; d]; t_len];
        let mut d_v = vec![vec![0.0; d]; t_len];
        for h in 0..n_heads {
            let lo = h * hd;
            for t in 0..t_len {
                let probs = &lc.attn_probs[h][t];
                let d_ctx_h = &d_ctx[t][lo..lo + hd];
                // value grads and raw prob grads
                let mut d_p = vec![0.0; t + 1];
                for u in 0..=t {
                    let mut acc = 0.0;
                    for i in 0..hd {
                        d_v[u][lo + i] += probs[u] * d_ctx_h[i];
                        acc += d_ctx_h[i] * lc.v[u][lo + i];
                    }
                    d_p[u] = acc;
                }
                // softmax backward
                let dot: f64 = probs.iter().zip(&d_p).map(|(a, b)| a * b).sum();
                for u in 0..=t {
                    let d_score = probs[u] * (d_p[u] - dot) * scale;
                    if d_score == 0.0 {
                        continue;
                    }
                    for i in 0..hd {
                        d_q[t][lo + i] += d_score * lc.k[u][lo + i];
                        d_k[u][lo + i] += d_score * lc.q[t][lo + i];
                    }
                }
            }
        }

        for t in 0..t_len {
            let mut d_norm = vec![0.0; d];
            if let Some(g) = lg.as_deref_mut() {
                linear_bwd_w(&mut g.wq, &d_q[t], &lc.normed_attn[t], d, d);
                linear_bwd_w(&mut g.wk, &d_k[t], &lc.normed_attn[t], d, d);
                linear_bwd_w(&mut g.wv, &d_v[t], &lc.normed_attn[t], d, d);
            }
            linear_bwd_x(&mut d_norm, &d_q[t], &layer.wq, d, d);
            linear_bwd_x(&mut d_norm, &d_k[t], &layer.wk, d, d);
            linear_bwd_x(&mut d_norm, &d_v[t], &layer.wv, d, d);
            let d_res = rmsnorm_bwd(
                &d_norm,
                &lc.x_in[t],
                &layer.norm_attn,
                lc.inv_attn[t],
                lg.as_deref_mut().map(|g| g.norm_attn.as_mut_slice()),
            );
            for i in 0..d {
                d_x[t][i] += d_res[i];
            }
        }
        dx = d_x;
    }

    // dx is now the gradient w.r.t. (input embedding + positional row)
    if let Some(g) = grads.as_mut() {
        for t in 0..t_len {
            for i in 0..d {
                g.pos[t * d + i] += dx[t][i];
            }
        }
    }

    Ok(BackwardResult {
        nll,
        param_grads: grads,
        input_grads: req.want_input_grads.then_some(dx),
    })
}

fn supervised_layout(
    prefix_len: usize,
    target: &[TokenId],
    params: &Parameters,
) -> Result<(Vec<Vec<f64>>, Vec<(usize, TokenId)>)> {
    if target.is_empty() {
        return Err(Error::EmptyTarget);
    }
    if prefix_len == 0 {
        return Err(Error::EmptyPrefix);
    }
    for &t in target {
        if (t as usize) >= params.config.vocab_base_size {
            return Err(Error::TargetOutsideHead(t));
        }
    }
    if prefix_len + target.len() > params.config.context_len {
        return Err(Error::ContextOverflow {
            needed: prefix_len + target.len(),
            context: params.config.context_len,
            detail: " (prefix + target)".into(),
        });
    }
    // teacher forcing: all but the last target token are embedded as inputs
    let teacher = embed(&target[..target.len() - 1], params)?;
    let supervised: Vec<(usize, TokenId)> = target
        .iter()
        .enumerate()
        .map(|(j, &t)| (prefix_len - 1 + j, t))
        .collect();
    Ok((teacher, supervised))
}

/// Summed NLL of `target` conditioned on a prefix given directly in
/// embedding space. Target tokens are embedded and appended internally for
/// teacher forcing.
pub fn sequence_nll(target: &[TokenId], prefix: &[Vec<f64>], params: &Parameters) -> Result<f64> {
    let (teacher, supervised) = supervised_layout(prefix.len(), target, params)?;
    let mut inputs = prefix.to_vec();
    inputs.extend(teacher);
    let res = forward_backward(
        params,
        &BackwardRequest {
            inputs: &inputs,
            supervised: &supervised,
            want_param_grads: false,
            want_input_grads: false,
        },
    )?;
    Ok(res.nll)
}

/// Token-path NLL: the prefix enters as token ids through the embedding
/// table. Equal to `sequence_nll(target, embed(prefix), ..)` by construction.
pub fn sequence_nll_tokens(
    target: &[TokenId],
    prefix: &[TokenId],
    params: &Parameters,
) -> Result<f64> {
    sequence_nll(target, &embed(prefix, params)?, params)
}

/// Gradient of [`sequence_nll`] with respect to the prefix vectors at the
/// masked positions, in mask order. Model weights receive no gradient.
pub fn grad_wrt_embeddings(
    target: &[TokenId],
    prefix: &[Vec<f64>],
    grad_mask: &[usize],
    params: &Parameters,
) -> Result<Vec<Vec<f64>>> {
    if grad_mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    for &p in grad_mask {
        if p >= prefix.len() {
            return Err(Error::MaskOutOfRange {
                pos: p,
                len: prefix.len(),
            });
        }
    }
    let (teacher, supervised) = supervised_layout(prefix.len(), target, params)?;
    let mut inputs = prefix.to_vec();
    inputs.extend(teacher);
    let res = forward_backward(
        params,
        &BackwardRequest {
            inputs: &inputs,
            supervised: &supervised,
            want_param_grads: false,
            want_input_grads: true,
        },
    )?;
    let input_grads = res.input_grads.expect("input grads requested");
    Ok(grad_mask.iter().map(|&p| input_grads[p].clone()).collect())
}

/// Loss and gradient w.r.t. the prefix in one pass, for optimizers.
pub fn nll_and_grad(
    target: &[TokenId],
    prefix: &[Vec<f64>],
    grad_mask: &[usize],
    params: &Parameters,
) -> Result<(f64, Vec<Vec<f64>>)> {
    if grad_mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    let (teacher, supervised) = supervised_layout(prefix.len(), target, params)?;
    let mut inputs = prefix.to_vec();
    inputs.extend(teacher);
    let res = forward_backward(
        params,
        &BackwardRequest {
            inputs: &inputs,
            supervised: &supervised,
            want_param_grads: false,
            want_input_grads: true,
        },
    )?;
    let input_grads = res.input_grads.expect("input grads requested");
    Ok((
        res.nll,
        grad_mask.iter().map(|&p| input_grads[p].clone()).collect(),
    ))
}

/// Greedy (argmax) decoding. Copyright ids can appear in the prompt but are
/// never emitted: the output head only has `vocab_base_size` classes.
/// Stops at `max_new` tokens, at the end-of-text special, or when the
/// context window is full.
pub fn generate_greedy(
    prompt: &str,
    max_new: usize,
    params: &Parameters,
    vocab: &Vocab,
) -> Result<String> {
    let prompt_ids = vocab.encode_str(prompt);
    generate_greedy_ids(&prompt_ids, max_new, params, vocab)
}

pub fn generate_greedy_ids(
    prompt_ids: &[TokenId],
    max_new: usize,
    params: &Parameters,
    vocab: &Vocab,
) -> Result<String> {
    check_context(params, prompt_ids.len())?;
    if prompt_ids.is_empty() {
        return Err(Error::EmptyPrefix);
    }
    let mut inputs = embed(prompt_ids, params)?;
    let mut generated: Vec<TokenId> = Vec::new();
    while generated.len() < max_new {
        let (normed, _) = forward(params, &inputs, false);
        let logits = linear(
            &params.head,
            normed.last().expect("nonempty"),
            params.config.vocab_base_size,
            params.config.dim,
        );
        let next = argmax(&logits) as TokenId;
        if next == EOT {
            break;
        }
        generated.push(next);
        if inputs.len() == params.config.context_len {
            break;
        }
        inputs.push(
            params
                .embedding_row(next)?
                .iter()
                .map(|&v| v as f64)
                .collect(),
        );
    }
    vocab.decode_string(&generated)
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}
