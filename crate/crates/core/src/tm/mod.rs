//! Multiclass weighted Tsetlin Machine.
//!
//! Each class owns a [`ClauseBank`] of `n` conjunctive clauses over the
//! `2o` literals. Even-indexed clauses vote for the class, odd-indexed ones
//! against it, and every vote is multiplied by an integer clause weight.
//!
//! A literal is included in a clause when its Tsetlin Automaton is in one of
//! the upper states `N+1..=2N`. Banks keep a packed include mask next to the
//! state matrix so clause evaluation is a word-wise `include & !input` test.

mod feedback;
pub mod snapshot;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{words_for, BinarySample, Literals};
use crate::error::{Error, Result};

/// Model hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TmParams {
    pub classes: usize,
    /// Clauses per class, half of each polarity.
    pub clauses: usize,
    /// Feature count `o`; the literal vector has `2o` entries.
    pub features: usize,
    /// Feedback threshold `T`.
    pub threshold: u32,
    /// Sensitivity `s`.
    pub sensitivity: f64,
    /// States per action `N`; automata live in `1..=2N`.
    pub states: u8,
}

impl TmParams {
    pub const DEFAULT_STATES: u8 = 127;

    pub fn new(
        classes: usize,
        clauses: usize,
        features: usize,
        threshold: u32,
        sensitivity: f64,
    ) -> Self {
        TmParams {
            classes,
            clauses,
            features,
            threshold,
            sensitivity,
            states: Self::DEFAULT_STATES,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes == 0 {
            return Err(Error::param("classes", "must be at least 1"));
        }
        if self.clauses == 0 || !self.clauses.is_multiple_of(2) {
            return Err(Error::param(
                "clauses",
                format!("{} is not a positive even number", self.clauses),
            ));
        }
        if self.features == 0 {
            return Err(Error::param("features", "must be at least 1"));
        }
        if self.threshold == 0 {
            return Err(Error::param("threshold", "T must be at least 1"));
        }
        if !(self.sensitivity > 1.0 && self.sensitivity.is_finite()) {
            return Err(Error::param(
                "sensitivity",
                format!("s = {} must exceed 1", self.sensitivity),
            ));
        }
        if !(1..=127).contains(&self.states) {
            return Err(Error::param(
                "states",
                format!("N = {} must be in 1..=127", self.states),
            ));
        }
        Ok(())
    }

    pub fn literals(&self) -> usize {
        2 * self.features
    }
}

/// Whether an empty clause (no included literal) outputs 1 or 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClauseMode {
    /// Empty clauses fire, so they keep receiving feedback.
    Training,
    /// Empty clauses are silent.
    Inference,
}

/// One class's clauses: TA states, include masks and weights.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClauseBank {
    literals: usize,
    words: usize,
    n_states: u8,
    states: Vec<u8>,
    include: Vec<u64>,
    weights: Vec<u32>,
}

impl ClauseBank {
    /// All automata start at state `N` (exclude, next to the boundary) and
    /// all weights at 1.
    pub fn new(clauses: usize, features: usize, n_states: u8) -> Self {
        let literals = 2 * features;
        let words = words_for(literals);
        ClauseBank {
            literals,
            words,
            n_states,
            states: vec![n_states; clauses * literals],
            include: vec![0; clauses * words],
            weights: vec![1; clauses],
        }
    }

    pub fn clause_count(&self) -> usize {
        self.weights.len()
    }

    pub fn literal_count(&self) -> usize {
        self.literals
    }

    pub fn n_states(&self) -> u8 {
        self.n_states
    }

    #[inline]
    pub fn is_positive(clause: usize) -> bool {
        clause.is_multiple_of(2)
    }

    #[inline]
    pub fn state(&self, clause: usize, literal: usize) -> u8 {
        self.states[clause * self.literals + literal]
    }

    /// States of one clause, one per literal.
    pub fn clause_states(&self, clause: usize) -> &[u8] {
        &self.states[clause * self.literals..(clause + 1) * self.literals]
    }

    pub fn is_included(&self, clause: usize, literal: usize) -> bool {
        self.state(clause, literal) > self.n_states
    }

    pub fn set_state(&mut self, clause: usize, literal: usize, state: u8) -> Result<()> {
        if state == 0 || state > 2 * self.n_states {
            return Err(Error::param(
                "state",
                format!("{state} is outside 1..={}", 2 * self.n_states),
            ));
        }
        self.states[clause * self.literals + literal] = state;
        self.sync_include(clause, literal);
        Ok(())
    }

    pub fn weights(&self) -> &[u32] {
        &self.weights
    }

    pub fn weight(&self, clause: usize) -> u32 {
        self.weights[clause]
    }

    /// Sets a clause weight, flooring at 1.
    pub fn set_weight(&mut self, clause: usize, weight: u32) {
        self.weights[clause] = weight.max(1);
    }

    #[inline]
    fn sync_include(&mut self, clause: usize, literal: usize) {
        let word = &mut self.include[clause * self.words + literal / 64];
        let bit = 1u64 << (literal % 64);
        if self.states[clause * self.literals + literal] > self.n_states {
            *word |= bit;
        } else {
            *word &= !bit;
        }
    }

    #[inline]
    fn increment(&mut self, clause: usize, literal: usize) {
        let idx = clause * self.literals + literal;
        let s = self.states[idx];
        if s < 2 * self.n_states {
            self.states[idx] = s + 1;
            if s == self.n_states {
                self.include[clause * self.words + literal / 64] |= 1 << (literal % 64);
            }
        }
    }

    #[inline]
    fn decrement(&mut self, clause: usize, literal: usize) {
        let idx = clause * self.literals + literal;
        let s = self.states[idx];
        if s > 1 {
            self.states[idx] = s - 1;
            if s == self.n_states + 1 {
                self.include[clause * self.words + literal / 64] &= !(1 << (literal % 64));
            }
        }
    }

    #[inline]
    fn include_words(&self, clause: usize) -> &[u64] {
        &self.include[clause * self.words..(clause + 1) * self.words]
    }

    /// 1 iff every included literal is 1 in `literals`; empty clauses follow
    /// `mode`.
    #[inline]
    pub fn clause_output(&self, clause: usize, literals: &Literals, mode: ClauseMode) -> bool {
        debug_assert_eq!(literals.len(), self.literals);
        let mut any = 0u64;
        for (&inc, &x) in self.include_words(clause).iter().zip(literals.words()) {
            if inc & !x != 0 {
                return false;
            }
            any |= inc;
        }
        any != 0 || mode == ClauseMode::Training
    }

    /// Signed vote sum `sum(w+ C+) - sum(w- C-)`, or unweighted when
    /// `weighted` is false.
    pub fn vote(&self, literals: &Literals, mode: ClauseMode, weighted: bool) -> i64 {
        (0..self.clause_count())
            .filter(|&j| self.clause_output(j, literals, mode))
            .map(|j| {
                let w = if weighted {
                    i64::from(self.weights[j])
                } else {
                    1
                };
                if Self::is_positive(j) {
                    w
                } else {
                    -w
                }
            })
            .sum()
    }
}

/// All clause weights of one class, in clause order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassWeightVector {
    pub class: usize,
    pub weights: Vec<u32>,
}

/// Accuracy over a labelled set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub correct: usize,
    pub total: usize,
}

impl Evaluation {
    /// Fraction correct; an empty set scores 0.
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }

    /// Set when accuracy was requested on an empty set.
    pub fn is_empty(&self) -> bool {
        self.total == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TmModel {
    params: TmParams,
    banks: Vec<ClauseBank>,
}

impl TmModel {
    pub fn new(params: TmParams) -> Result<Self> {
        params.validate()?;
        let banks = (0..params.classes)
            .map(|_| ClauseBank::new(params.clauses, params.features, params.states))
            .collect();
        Ok(TmModel { params, banks })
    }

    pub fn params(&self) -> &TmParams {
        &self.params
    }

    pub fn class_count(&self) -> usize {
        self.banks.len()
    }

    pub fn bank(&self, class: usize) -> &ClauseBank {
        &self.banks[class]
    }

    pub fn bank_mut(&mut self, class: usize) -> &mut ClauseBank {
        &mut self.banks[class]
    }

    /// Scrambles every automaton and weight: each literal is included with
    /// probability `include_probability` (at a uniformly drawn state on that
    /// side of the boundary) and weights are uniform in `1..=max_weight`.
    /// Used to build synthetic clients and oracle fixtures.
    pub fn randomize<R: Rng + ?Sized>(
        &mut self,
        rng: &mut R,
        include_probability: f64,
        max_weight: u32,
    ) {
        let n = self.params.states;
        for bank in &mut self.banks {
            for j in 0..bank.clause_count() {
                for k in 0..bank.literals {
                    let state = if rng.random_bool(include_probability) {
                        rng.random_range(n + 1..=2 * n)
                    } else {
                        rng.random_range(1..=n)
                    };
                    bank.set_state(j, k, state).expect("state drawn in range");
                }
                bank.set_weight(j, rng.random_range(1..=max_weight.max(1)));
            }
        }
    }

    /// Weighted vote margin of `class` with inference-mode clause outputs.
    pub fn class_margin(&self, class: usize, literals: &Literals) -> i64 {
        self.banks[class].vote(literals, ClauseMode::Inference, true)
    }

    /// Class with the largest margin, lowest index on ties.
    pub fn predict(&self, literals: &Literals) -> usize {
        argmax_lowest((0..self.banks.len()).map(|c| self.class_margin(c, literals)))
    }

    /// Per-class sum over `conf` of the clause-vote margin (unweighted unless
    /// `weighted` is set).
    pub fn confidence_scores(&self, conf: &[BinarySample], weighted: bool) -> Vec<i64> {
        self.banks
            .iter()
            .map(|bank| {
                conf.iter()
                    .map(|x| bank.vote(&x.literals, ClauseMode::Inference, weighted))
                    .sum()
            })
            .collect()
    }

    pub fn evaluate(&self, samples: &[BinarySample]) -> Evaluation {
        let correct = samples
            .iter()
            .filter(|x| self.predict(&x.literals) == x.label)
            .count();
        Evaluation {
            correct,
            total: samples.len(),
        }
    }

    /// Trains the target class towards 1 and one uniformly drawn other class
    /// towards 0.
    pub fn train_on_sample<R: Rng + ?Sized>(&mut self, sample: &BinarySample, rng: &mut R) {
        let classes = self.banks.len();
        debug_assert!(sample.label < classes);
        let ctx = feedback::Context::new(&self.params);
        feedback::update(
            &mut self.banks[sample.label],
            &ctx,
            &sample.literals,
            true,
            rng,
        );
        if classes > 1 {
            let mut other = rng.random_range(0..classes - 1);
            if other >= sample.label {
                other += 1;
            }
            feedback::update(&mut self.banks[other], &ctx, &sample.literals, false, rng);
        }
    }

    /// One pass over `samples` in an order shuffled by `rng`.
    pub fn train_epoch<R: Rng + ?Sized>(&mut self, samples: &[BinarySample], rng: &mut R) {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(rng);
        for i in order {
            self.train_on_sample(&samples[i], rng);
        }
    }

    pub fn get_class_weights(&self, class: usize) -> ClassWeightVector {
        ClassWeightVector {
            class,
            weights: self.banks[class].weights.clone(),
        }
    }

    /// Replaces the weights of `class`, rounding half up and flooring at 1.
    /// Every other bank and every TA state is left alone.
    pub fn set_class_weights(&mut self, class: usize, weights: &[f64]) -> Result<()> {
        if class >= self.banks.len() {
            return Err(Error::param(
                "class",
                format!("{class} >= {} classes", self.banks.len()),
            ));
        }
        let bank = &mut self.banks[class];
        if weights.len() != bank.weights.len() {
            return Err(Error::Shape(format!(
                "weight vector of length {} for a bank of {} clauses",
                weights.len(),
                bank.weights.len()
            )));
        }
        for (dst, &w) in bank.weights.iter_mut().zip(weights) {
            *dst = integerize_weight(w);
        }
        Ok(())
    }

    pub fn apply_class_weights(&mut self, v: &ClassWeightVector) -> Result<()> {
        let weights: Vec<f64> = v.weights.iter().map(|&w| f64::from(w)).collect();
        self.set_class_weights(v.class, &weights)
    }

    /// `C x n` weight matrix.
    pub fn weight_matrix(&self) -> Vec<Vec<u32>> {
        self.banks.iter().map(|b| b.weights.clone()).collect()
    }

    pub fn set_weight_matrix(&mut self, matrix: &[Vec<f64>]) -> Result<()> {
        if matrix.len() != self.banks.len() {
            return Err(Error::Shape(format!(
                "weight matrix with {} rows for {} classes",
                matrix.len(),
                self.banks.len()
            )));
        }
        for (class, row) in matrix.iter().enumerate() {
            self.set_class_weights(class, row)?;
        }
        Ok(())
    }
}

/// Round half up, floor 1.
pub fn integerize_weight(w: f64) -> u32 {
    let r = (w + 0.5).floor();
    if r.is_nan() || r < 1.0 {
        1
    } else if r >= f64::from(u32::MAX) {
        u32::MAX
    } else {
        r as u32
    }
}

fn argmax_lowest(values: impl IntoIterator<Item = i64>) -> usize {
    let mut best = 0;
    let mut best_value = i64::MIN;
    for (i, v) in values.into_iter().enumerate() {
        if v > best_value {
            best = i;
            best_value = v;
        }
    }
    best
}

/// Index of the highest confidence score, lowest index on ties.
pub fn argmax_confidence(scores: &[i64]) -> usize {
    argmax_lowest(scores.iter().copied())
}
