use std::cmp::Ordering;

use crate::seq2seq::{Seq2Seq, SourceTokens};
use crate::tape::Tape;
use crate::tensor::Tensor;
use crate::NnError;

#[derive(Clone, Debug)]
pub struct DecodeOptions {
    pub bos: usize,
    pub eos: usize,
    /// Maximum number of generated tokens, EOS excluded.
    pub max_len: usize,
    /// Beam width; 1 is greedy.
    pub beam: usize,
    /// Token ids that are never emitted.
    pub banned: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decoded {
    pub tokens: Vec<usize>,
    /// Whether EOS was produced before `max_len` ran out.
    pub finished: bool,
    pub log_prob: f64,
}

fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
}

#[derive(Clone)]
struct Hyp {
    tokens: Vec<usize>,
    log_prob: f64,
    finished: bool,
    truncated: bool,
}

/// Autoregressive decoding; greedy when `beam == 1`.
pub fn generate(
    model: &Seq2Seq,
    frames: &Tensor,
    source: &SourceTokens,
    opts: &DecodeOptions,
) -> Result<Decoded, NnError> {
    let beam = opts.beam.max(1);
    let max_len = opts.max_len.min(model.config.max_target_len.saturating_sub(1));
    let mut tape = Tape::new(&model.params);
    let memory = model.encode(&mut tape, frames, source)?;

    let mut hyps = vec![Hyp {
        tokens: Vec::new(),
        log_prob: 0.0,
        finished: false,
        truncated: false,
    }];
    for _ in 0..=max_len {
        if hyps.iter().all(|h| h.finished) {
            break;
        }
        let mut candidates: Vec<Hyp> = Vec::new();
        for h in &hyps {
            if h.finished {
                candidates.push(h.clone());
                continue;
            }
            // Out of budget: the hypothesis is closed without EOS.
            if h.tokens.len() == max_len {
                let mut next = h.clone();
                next.finished = true;
                next.truncated = true;
                candidates.push(next);
                continue;
            }
            let mut inputs = Vec::with_capacity(h.tokens.len() + 1);
            inputs.push(opts.bos);
            inputs.extend_from_slice(&h.tokens);
            let logits = model.decode(&mut tape, memory, &inputs)?;
            let lv = tape.value(logits);
            let mut lp = log_softmax(lv.row(lv.rows - 1));
            for &b in &opts.banned {
                if b < lp.len() {
                    lp[b] = f64::NEG_INFINITY;
                }
            }
            let mut order: Vec<usize> = (0..lp.len()).filter(|&t| lp[t].is_finite()).collect();
            order.sort_by(|&a, &b| lp[b].partial_cmp(&lp[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
            for &t in order.iter().take(beam) {
                let mut next = h.clone();
                next.log_prob += lp[t];
                if t == opts.eos {
                    next.finished = true;
                } else {
                    next.tokens.push(t);
                }
                candidates.push(next);
            }
        }
        // Stable sort keeps parent-then-token order among equal scores.
        candidates.sort_by(|a, b| b.log_prob.partial_cmp(&a.log_prob).unwrap_or(Ordering::Equal));
        candidates.truncate(beam);
        hyps = candidates;
    }
    let best = hyps.into_iter().next().expect("at least one hypothesis");
    Ok(Decoded {
        tokens: best.tokens,
        finished: best.finished && !best.truncated,
        log_prob: best.log_prob,
    })
}
