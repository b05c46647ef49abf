//! Type I / Type II feedback for one class bank.
//!
//! For a target update (`y = 1`) each clause is selected with probability
//! `(T - v) / 2T`, for a negative update (`y = 0`) with `(T + v) / 2T`, where
//! `v` is the clipped weighted margin. Selected positive clauses receive
//! Type I when `y = 1` and Type II when `y = 0`; negative clauses the
//! reverse.
//!
//! Type I, firing clause: automata of true literals step up with probability
//! `(s-1)/s`, automata of false literals step down with probability `1/s`;
//! the weight grows by one. Type I, silent clause: every automaton steps down
//! with probability `1/s`. Type II, firing clause: excluded automata of false
//! literals step up; the weight shrinks by one, floored at 1.
//!
//! The `1/s` events are drawn as geometric gaps between selected literals,
//! which has the same distribution as one Bernoulli draw per literal.

use rand::Rng;

use super::{ClauseBank, ClauseMode, TmParams};
use crate::dataset::Literals;

pub(super) struct Context {
    threshold: i64,
    /// `ln(1 - 1/s)`, or `None` when every literal is selected.
    log_miss: Option<f64>,
}

impl Context {
    pub(super) fn new(params: &TmParams) -> Self {
        let p = 1.0 / params.sensitivity;
        Context {
            threshold: i64::from(params.threshold),
            log_miss: if p >= 1.0 { None } else { Some((1.0 - p).ln()) },
        }
    }

    /// Number of literals skipped before the next `1/s` event.
    #[inline]
    fn gap<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        match self.log_miss {
            None => 0,
            Some(log_miss) => {
                let u: f64 = rng.random();
                let g = (1.0 - u).ln() / log_miss;
                if g >= usize::MAX as f64 / 2.0 {
                    usize::MAX / 2
                } else {
                    g as usize
                }
            }
        }
    }
}

pub(super) fn update<R: Rng + ?Sized>(
    bank: &mut ClauseBank,
    ctx: &Context,
    literals: &Literals,
    target: bool,
    rng: &mut R,
) {
    let n = bank.clause_count();
    let fired: Vec<bool> = (0..n)
        .map(|j| bank.clause_output(j, literals, ClauseMode::Training))
        .collect();
    let margin: i64 = fired
        .iter()
        .enumerate()
        .filter(|(_, &f)| f)
        .map(|(j, _)| {
            let w = i64::from(bank.weights[j]);
            if ClauseBank::is_positive(j) {
                w
            } else {
                -w
            }
        })
        .sum();
    let t = ctx.threshold;
    let v = margin.clamp(-t, t);
    let p = if target {
        (t - v) as f64 / (2 * t) as f64
    } else {
        (t + v) as f64 / (2 * t) as f64
    };
    if p <= 0.0 {
        return;
    }
    for (j, &out) in fired.iter().enumerate() {
        if rng.random::<f64>() >= p {
            continue;
        }
        if ClauseBank::is_positive(j) == target {
            type_i(bank, ctx, j, out, literals, rng);
            if out {
                bank.weights[j] = bank.weights[j].saturating_add(1);
            }
        } else if out {
            type_ii(bank, j, literals);
            bank.weights[j] = bank.weights[j].saturating_sub(1).max(1);
        }
    }
}

fn type_i<R: Rng + ?Sized>(
    bank: &mut ClauseBank,
    ctx: &Context,
    clause: usize,
    fired: bool,
    literals: &Literals,
    rng: &mut R,
) {
    let len = bank.literals;
    let mut next = ctx.gap(rng);
    if !fired {
        while next < len {
            bank.decrement(clause, next);
            next = next + 1 + ctx.gap(rng);
        }
        return;
    }
    for k in 0..len {
        let selected = k == next;
        if selected {
            next = k + 1 + ctx.gap(rng);
        }
        if literals.get(k) {
            if !selected {
                bank.increment(clause, k);
            }
        } else if selected {
            bank.decrement(clause, k);
        }
    }
}

fn type_ii(bank: &mut ClauseBank, clause: usize, literals: &Literals) {
    let len = bank.literals;
    for w in 0..bank.words {
        let valid = if (w + 1) * 64 <= len {
            u64::MAX
        } else {
            (1u64 << (len - w * 64)) - 1
        };
        let mut candidates = !literals.words()[w] & !bank.include[clause * bank.words + w] & valid;
        while candidates != 0 {
            let bit = candidates.trailing_zeros() as usize;
            bank.increment(clause, w * 64 + bit);
            candidates &= candidates - 1;
        }
    }
}
