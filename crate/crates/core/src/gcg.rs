//! Greedy coordinate-gradient token optimization and its brute-force oracle.
//!
//! Each epoch scores candidate replacements per position by the first-order
//! predicted loss change, samples candidates from the top-k most negative
//! scores, evaluates the true loss of each single-token replacement, and
//! commits the minimal-loss one. The incumbent stays in the pool, so the
//! best-loss trace is non-increasing. With an exhaustive pool the epoch
//! degenerates to the brute-force argmin.

use crate::error::{Error, Result};
use crate::loss::{loss_ae, AdversarialTokens, LossPreset};
use crate::model::{embed, grad_wrt_embeddings, Parameters};
use crate::rng::Rng;
use crate::template::insert;
use crate::vocab::{TokenId, Vocab};
use serde::{Deserialize, Serialize};
use std::time::Instant;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GcgConfig {
    pub top_k: usize,
    pub n_candidates: usize,
    pub epochs: usize,
    /// Optimizable indices of the adversarial segment; `None` means all.
    pub positions: Option<Vec<usize>>,
    pub seed: u64,
}

impl Default for GcgConfig {
    fn default() -> Self {
        GcgConfig {
            top_k: 64,
            n_candidates: 32,
            epochs: 200,
            positions: None,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub best_loss: f64,
    /// The committed replacement; `None` when the incumbent was kept.
    pub replacement: Option<Replacement>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Replacement {
    pub position: usize,
    pub old_id: TokenId,
    pub new_id: TokenId,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackTrace {
    pub init_loss: f64,
    pub best_loss: f64,
    pub epochs: Vec<EpochRecord>,
    pub wall_time_s: f64,
}

impl AttackTrace {
    /// CSV with one row per epoch: epoch, best_loss, position, old_id, new_id.
    /// Replacement columns are empty when the incumbent was kept.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,best_loss,position,old_id,new_id\n");
        for r in &self.epochs {
            match &r.replacement {
                Some(rep) => out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    r.epoch, r.best_loss, rep.position, rep.old_id, rep.new_id
                )),
                None => out.push_str(&format!("{},{},,,\n", r.epoch, r.best_loss)),
            }
        }
        out
    }
}

/// First-order predicted loss change for replacing `a[position]` with every
/// base-vocabulary token: `score_v = (e_v - e_cur) . grad`. Lower is more
/// promising; the incumbent scores exactly zero.
pub fn token_replacement_scores(
    params: &Parameters,
    vocab: &Vocab,
    y_star: &str,
    x: &str,
    a: &AdversarialTokens,
    preset: &LossPreset,
    position: usize,
) -> Result<Vec<f64>> {
    let grad = positional_grads(params, vocab, y_star, x, a, preset)?
        .into_iter()
        .nth(position)
        .ok_or(Error::PositionOutsideSegment(position, a.len()))?;
    scores_from_grad(params, a.ids()[position], &grad)
}

/// Gradient of the loss w.r.t. the adversarial embeddings at every segment
/// position, summed over templates.
fn positional_grads(
    params: &Parameters,
    vocab: &Vocab,
    y_star: &str,
    x: &str,
    a: &AdversarialTokens,
    preset: &LossPreset,
) -> Result<Vec<Vec<f64>>> {
    let target = vocab.encode_str(y_star);
    let d = params.config.dim;
    let k = a.len();
    let mut grads = vec![vec![0.0; d]; k];
    for template in preset.resolved_templates() {
        let (tokens, z) = template.render_tokens(x, vocab)?;
        let full = insert(&tokens, a.ids(), z)?;
        let prefix = embed(&full, params)?;
        let mask: Vec<usize> = (z..z + k).collect();
        let g = grad_wrt_embeddings(&target, &prefix, &mask, params)?;
        for (acc, gv) in grads.iter_mut().zip(g) {
            for i in 0..d {
                acc[i] += gv[i];
            }
        }
    }
    Ok(grads)
}

fn scores_from_grad(params: &Parameters, current: TokenId, grad: &[f64]) -> Result<Vec<f64>> {
    let d = params.config.dim;
    let cur_row = params.embedding_row(current)?.to_vec();
    Ok((0..params.config.vocab_base_size)
        .map(|v| {
            let row = &params.embedding[v * d..(v + 1) * d];
            row.iter()
                .zip(&cur_row)
                .zip(grad)
                .map(|((&e, &c), &g)| (e as f64 - c as f64) * g)
                .sum()
        })
        .collect())
}

fn top_k_most_negative(scores: &[f64], k: usize) -> Vec<TokenId> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    idx.truncate(k.min(scores.len()));
    idx.into_iter().map(|i| i as TokenId).collect()
}

/// Evaluates `f` over the index range on scoped threads, preserving order.
pub(crate) fn par_map<T: Send, F: Fn(usize) -> T + Sync>(n: usize, f: F) -> Vec<T> {
    let threads = std::thread::available_parallelism()
        .map(|p| p.get())
        .unwrap_or(1)
        .min(n.max(1));
    if threads <= 1 || n < 4 {
        return (0..n).map(f).collect();
    }
    let chunk = n.div_ceil(threads);
    let mut out: Vec<Option<T>> = (0..n).map(|_| None).collect();
    let slots: Vec<(usize, &mut [Option<T>])> = {
        let mut rest = out.as_mut_slice();
        let mut start = 0;
        let mut v = Vec::new();
        while !rest.is_empty() {
            let take = chunk.min(rest.len());
            let (head, tail) = rest.split_at_mut(take);
            v.push((start, head));
            start += take;
            rest = tail;
        }
        v
    };
    std::thread::scope(|scope| {
        for (start, slot) in slots {
            let f = &f;
            scope.spawn(move || {
                for (i, s) in slot.iter_mut().enumerate() {
                    *s = Some(f(start + i));
                }
            });
        }
    });
    out.into_iter().map(|x| x.expect("filled")).collect()
}

/// Exhaustive single-position minimizer: evaluates the loss for every
/// base-vocabulary token at `position` within `a` and returns the exact
/// argmin, ties broken by lowest token id.
pub fn brute_force_argmin(
    params: &Parameters,
    vocab: &Vocab,
    y_star: &str,
    x: &str,
    preset: &LossPreset,
    a: &AdversarialTokens,
    position: usize,
) -> Result<(TokenId, f64)> {
    if position >= a.len() {
        return Err(Error::PositionOutsideSegment(position, a.len()));
    }
    let losses: Vec<Result<f64>> = par_map(params.config.vocab_base_size, |v| {
        loss_ae(
            params,
            vocab,
            y_star,
            x,
            &a.replaced(position, v as TokenId),
            preset,
        )
    });
    let mut best: Option<(TokenId, f64)> = None;
    for (v, loss) in losses.into_iter().enumerate() {
        let loss = loss?;
        if best.is_none_or(|(_, b)| loss < b) {
            best = Some((v as TokenId, loss));
        }
    }
    Ok(best.expect("vocab_base_size > 0"))
}

/// GCG optimization of the adversarial token sequence.
pub fn gcg_optimize(
    params: &Parameters,
    vocab: &Vocab,
    y_star: &str,
    x: &str,
    init_a: &AdversarialTokens,
    preset: &LossPreset,
    cfg: &GcgConfig,
) -> Result<(AdversarialTokens, AttackTrace)> {
    let start = Instant::now();
    let positions: Vec<usize> = match &cfg.positions {
        Some(p) => {
            for &pos in p {
                if pos >= init_a.len() {
                    return Err(Error::PositionOutsideSegment(pos, init_a.len()));
                }
            }
            p.clone()
        }
        None => (0..init_a.len()).collect(),
    };
    if cfg.n_candidates == 0 {
        return Err(Error::Invalid("n_candidates must be >= 1".into()));
    }

    let mut rng = Rng::new(cfg.seed);
    let mut current = init_a.clone();
    let mut current_loss = loss_ae(params, vocab, y_star, x, &current, preset)?;
    let init_loss = current_loss;
    let mut records = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let grads = positional_grads(params, vocab, y_star, x, &current, preset)?;
        // pool of (position, candidate token), top_k per position
        let mut pool: Vec<(usize, TokenId)> = Vec::new();
        for &pos in &positions {
            let scores = scores_from_grad(params, current.ids()[pos], &grads[pos])?;
            for v in top_k_most_negative(&scores, cfg.top_k) {
                pool.push((pos, v));
            }
        }
        let chosen: Vec<(usize, TokenId)> = rng
            .sample_distinct(pool.len(), cfg.n_candidates)
            .into_iter()
            .map(|i| pool[i])
            .collect();

        let losses: Vec<Result<f64>> = par_map(chosen.len(), |i| {
            let (pos, v) = chosen[i];
            loss_ae(params, vocab, y_star, x, &current.replaced(pos, v), preset)
        });

        // minimal loss with the incumbent in the pool; ties prefer the
        // incumbent, then the lowest token id
        let mut best: Option<(usize, TokenId, f64)> = None;
        for ((pos, v), loss) in chosen.iter().zip(losses) {
            let loss = loss?;
            let better = match best {
                None => loss < current_loss,
                Some((_, bv, bl)) => loss < bl || (loss == bl && *v < bv),
            };
            if better {
                best = Some((*pos, *v, loss));
            }
        }
        let replacement = best.map(|(pos, v, loss)| {
            let rep = Replacement {
                position: pos,
                old_id: current.ids()[pos],
                new_id: v,
            };
            current = current.replaced(pos, v);
            current_loss = loss;
            rep
        });
        records.push(EpochRecord {
            epoch,
            best_loss: current_loss,
            replacement,
        });
    }

    Ok((
        current,
        AttackTrace {
            init_loss,
            best_loss: current_loss,
            epochs: records,
            wall_time_s: start.elapsed().as_secs_f64(),
        },
    ))
}
