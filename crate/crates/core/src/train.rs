//! Toy pretraining and the shared Adam trainer.
//!
//! Runs are deterministic given the seed. Weight decay, when enabled, is
//! never applied to the embedding table: rows whose tokens do not occur in
//! a batch receive exactly zero gradient and must stay bit-identical.

#![allow(clippy::needless_range_loop)]

use crate::error::{Error, Result};
use crate::model::{forward_backward, BackwardRequest, ModelConfig, ParamGrads, Parameters};
use crate::rng::Rng;
use crate::vocab::{TokenId, Vocab};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seq_len: usize,
    /// Decoupled weight decay; forced to zero on the embedding table.
    pub weight_decay: f64,
    /// Byte sequence treated as a segment boundary; training windows start
    /// right after one, so a window never sees a truncated context head.
    pub window_separator: Option<Vec<u8>>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 600,
            learning_rate: 3e-3,
            batch_size: 4,
            seq_len: 64,
            weight_decay: 0.0,
            window_separator: Some(b". ".to_vec()),
            seed: 1,
        }
    }
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: usize,
}

impl Adam {
    fn new(params: &Parameters) -> Adam {
        let shapes: Vec<usize> = params.tensors().iter().map(|(_, _, d)| d.len()).collect();
        Adam {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    fn step(&mut self, params: &mut Parameters, grads: &mut ParamGrads, lr: f64, decay: f64) {
        self.t += 1;
        let bc1 = 1.0 - BETA1.powi(self.t as i32);
        let bc2 = 1.0 - BETA2.powi(self.t as i32);
        let mut tensors = params.tensors_mut();
        let gtensors = grads.tensors_mut();
        for (ti, ((name, w), (_, g))) in tensors.iter_mut().zip(gtensors).enumerate() {
            let is_embedding = name == "embedding_table";
            let m = &mut self.m[ti];
            let v = &mut self.v[ti];
            for i in 0..w.len() {
                let gi = g[i];
                m[i] = BETA1 * m[i] + (1.0 - BETA1) * gi;
                v[i] = BETA2 * v[i] + (1.0 - BETA2) * gi * gi;
                let mut update = lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + ADAM_EPS);
                if decay > 0.0 && !is_embedding {
                    update += lr * decay * w[i] as f64;
                }
                if update != 0.0 {
                    w[i] = (w[i] as f64 - update) as f32;
                }
            }
        }
    }
}

/// Next-token training on a raw byte corpus. Returns the trained copy and
/// the per-step mean NLL trace.
pub fn train_lm(
    params: Parameters,
    vocab: &Vocab,
    corpus: &[u8],
    cfg: &TrainConfig,
) -> Result<(Parameters, Vec<f64>)> {
    if corpus.is_empty() {
        return Err(Error::CorpusTooShort { got: 0, need: 2 });
    }
    let stream = vocab.encode(corpus);
    let seq_len = cfg.seq_len.min(params.config.context_len);
    if stream.len() < seq_len + 1 {
        return Err(Error::CorpusTooShort {
            got: stream.len(),
            need: seq_len + 1,
        });
    }
    let mut params = params;
    let mut adam = Adam::new(&params);
    let mut rng = Rng::new(cfg.seed);
    let mut trace = Vec::with_capacity(cfg.steps);

    // candidate window starts: segment-aligned when a separator is set
    let starts: Vec<usize> = {
        let max_start = stream.len() - seq_len - 1;
        let aligned: Vec<usize> = match &cfg.window_separator {
            Some(sep) if !sep.is_empty() => {
                let sep_ids = vocab.encode(sep);
                let mut v = vec![0usize];
                let m = sep_ids.len();
                for i in m..stream.len() {
                    if stream[i - m..i] == sep_ids[..] && i <= max_start {
                        v.push(i);
                    }
                }
                v
            }
            _ => Vec::new(),
        };
        if aligned.len() > 1 {
            aligned
        } else {
            (0..=max_start).collect()
        }
    };

    for _ in 0..cfg.steps {
        let batch: Vec<&[TokenId]> = (0..cfg.batch_size.max(1))
            .map(|_| {
                let start = starts[rng.below(starts.len())];
                &stream[start..start + seq_len + 1]
            })
            .collect();
        let (grads, loss_sum, token_count) = batch_grads(&params, &batch)?;
        if token_count == 0 {
            trace.push(f64::NAN);
            continue;
        }
        let mut grads = grads;
        scale(&mut grads, 1.0 / token_count as f64);
        adam.step(&mut params, &mut grads, cfg.learning_rate, cfg.weight_decay);
        trace.push(loss_sum / token_count as f64);
    }
    Ok((params, trace))
}

/// Forward/backward over the batch windows in parallel; gradients are
/// reduced in window order, so results are deterministic.
fn batch_grads(
    params: &Parameters,
    windows: &[&[TokenId]],
) -> Result<(ParamGrads, f64, usize)> {
    let per_window: Vec<Result<Option<(f64, usize, ParamGrads)>>> =
        crate::gcg::par_map(windows.len(), |wi| {
            let window = windows[wi];
            let seq_len = window.len() - 1;
            let inputs = crate::model::embed(&window[..seq_len], params)?;
            // copyright ids can occur as inputs but are not output classes;
            // those positions are masked from the loss
            let supervised: Vec<(usize, TokenId)> = window[1..]
                .iter()
                .enumerate()
                .filter(|(_, &t)| (t as usize) < params.config.vocab_base_size)
                .map(|(i, &t)| (i, t))
                .collect();
            if supervised.is_empty() {
                return Ok(None);
            }
            let res = forward_backward(
                params,
                &BackwardRequest {
                    inputs: &inputs,
                    supervised: &supervised,
                    want_param_grads: true,
                    want_input_grads: true,
                },
            )?;
            let mut g = res.param_grads.expect("param grads requested");
            let input_grads = res.input_grads.expect("input grads requested");
            let d = params.config.dim;
            for (pos, &tok) in window[..seq_len].iter().enumerate() {
                let row = tok as usize * d;
                for i in 0..d {
                    g.embedding[row + i] += input_grads[pos][i];
                }
            }
            Ok(Some((res.nll, supervised.len(), g)))
        });

    let mut grads = ParamGrads::zeros(params);
    let mut loss_sum = 0.0;
    let mut token_count = 0usize;
    for item in per_window {
        if let Some((nll, tokens, g)) = item? {
            loss_sum += nll;
            token_count += tokens;
            accumulate(&mut grads, g);
        }
    }
    Ok((grads, loss_sum, token_count))
}

/// Supervised training on (prefix, target) pairs; the loss covers only the
/// target tokens. Used by the backdoor fine-tuning baseline.
pub fn train_targeted(
    params: Parameters,
    examples: &[(Vec<TokenId>, Vec<TokenId>)],
    cfg: &TrainConfig,
) -> Result<(Parameters, Vec<f64>)> {
    if examples.is_empty() {
        return Err(Error::EmptyQuerySet);
    }
    let mut params = params;
    let mut adam = Adam::new(&params);
    let mut rng = Rng::new(cfg.seed);
    let mut trace = Vec::with_capacity(cfg.steps);

    // pairs are flattened to next-token windows supervised on the target
    let windows: Vec<Vec<TokenId>> = examples
        .iter()
        .map(|(prefix, target)| {
            let mut w = prefix.clone();
            w.extend_from_slice(target);
            w
        })
        .collect();
    for (w, (prefix, _)) in windows.iter().zip(examples) {
        if w.len() > params.config.context_len {
            return Err(Error::ContextOverflow {
                needed: w.len(),
                context: params.config.context_len,
                detail: " (training pair)".into(),
            });
        }
        if prefix.is_empty() {
            return Err(Error::EmptyPrefix);
        }
    }

    for _ in 0..cfg.steps {
        let picks: Vec<usize> = (0..cfg.batch_size.max(1))
            .map(|_| rng.below(examples.len()))
            .collect();
        let per_pair: Vec<Result<(f64, usize, ParamGrads)>> =
            crate::gcg::par_map(picks.len(), |bi| {
                let ei = picks[bi];
                let window = &windows[ei];
                let prefix_len = examples[ei].0.len();
                let inputs = crate::model::embed(&window[..window.len() - 1], &params)?;
                let supervised: Vec<(usize, TokenId)> = examples[ei]
                    .1
                    .iter()
                    .enumerate()
                    .map(|(j, &t)| (prefix_len - 1 + j, t))
                    .collect();
                let res = forward_backward(
                    &params,
                    &BackwardRequest {
                        inputs: &inputs,
                        supervised: &supervised,
                        want_param_grads: true,
                        want_input_grads: true,
                    },
                )?;
                let mut g = res.param_grads.expect("param grads");
                let input_grads = res.input_grads.expect("input grads");
                let d = params.config.dim;
                for (pos, &tok) in window[..window.len() - 1].iter().enumerate() {
                    let row = tok as usize * d;
                    for i in 0..d {
                        g.embedding[row + i] += input_grads[pos][i];
                    }
                }
                Ok((res.nll, supervised.len(), g))
            });
        let mut grads = ParamGrads::zeros(&params);
        let mut loss_sum = 0.0;
        let mut token_count = 0usize;
        for item in per_pair {
            let (nll, tokens, g) = item?;
            loss_sum += nll;
            token_count += tokens;
            accumulate(&mut grads, g);
        }
        scale(&mut grads, 1.0 / token_count.max(1) as f64);
        adam.step(&mut params, &mut grads, cfg.learning_rate, cfg.weight_decay);
        trace.push(loss_sum / token_count.max(1) as f64);
    }
    Ok((params, trace))
}

fn accumulate(into: &mut ParamGrads, from: ParamGrads) {
    let mut from = from;
    for ((_, a), (_, b)) in into.tensors_mut().iter_mut().zip(from.tensors_mut()) {
        for i in 0..a.len() {
            a[i] += b[i];
        }
    }
}

fn scale(grads: &mut ParamGrads, factor: f64) {
    for (_, t) in grads.tensors_mut().iter_mut() {
        for g in t.iter_mut() {
            *g *= factor;
        }
    }
}

/// Initializes from the config seed and trains on the corpus.
pub fn pretrain_toy(
    corpus: &[u8],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<(Parameters, Vec<f64>)> {
    let params = Parameters::init(model_cfg)?;
    train_lm(params, &Vocab::base(), corpus, train_cfg)
}
