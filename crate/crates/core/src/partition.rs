//! Dirichlet label-skew partitioning and the five mixed IID/non-IID setups.
//!
//! Each client draws one class-proportion vector `p ~ Dir(alpha * 1_C)` and
//! its train, test and confidence sets are all filled from that same vector.
//! The global train/test/confidence pools are carved, class-stratified, from
//! one shuffle of the whole dataset before any client is served.

use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::dataset::RawDataset;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed, stream};

pub const ALPHA_IID: f64 = 10_000.0;
pub const ALPHA_NON_IID: f64 = 0.05;

/// Sizes of the train, test and confidence splits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub test: usize,
    pub conf: usize,
}

impl SplitSizes {
    /// Global pool sizes used at full scale.
    pub const FULL: SplitSizes = SplitSizes {
        train: 30_000,
        test: 15_000,
        conf: 15_000,
    };

    /// Scales every split by `fraction`, rounding down.
    pub fn scaled(self, fraction: f64) -> SplitSizes {
        let scale = |v: usize| (v as f64 * fraction).floor() as usize;
        SplitSizes {
            train: scale(self.train),
            test: scale(self.test),
            conf: scale(self.conf),
        }
    }

    pub fn per_client(self, clients: usize) -> SplitSizes {
        SplitSizes {
            train: self.train / clients,
            test: self.test / clients,
            conf: self.conf / clients,
        }
    }

    pub fn total(self) -> usize {
        self.train + self.test + self.conf
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientAssignment {
    pub id: usize,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub conf: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub experiment: u8,
    pub seed: u64,
    /// `(alpha_iid, alpha_non_iid)`
    pub alphas: (f64, f64),
    pub iid_fraction: f64,
    pub clients: Vec<ClientAssignment>,
}

impl PartitionPlan {
    pub fn client(&self, id: usize) -> Result<&ClientAssignment> {
        self.clients
            .iter()
            .find(|c| c.id == id)
            .ok_or(Error::UnknownClient(id))
    }

    pub fn client_count(&self) -> usize {
        self.clients.len()
    }

    /// Number of leading clients drawn with the IID alpha.
    pub fn iid_client_count(&self) -> usize {
        iid_client_count(self.iid_fraction, self.clients.len())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        Ok(serde_json::from_str(json)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let json = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&json)
    }
}

fn iid_client_count(iid_fraction: f64, clients: usize) -> usize {
    ((iid_fraction * clients as f64).floor() as usize).min(clients)
}

/// One of the five experimental setups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    /// 1 (fully IID) through 5 (fully non-IID).
    pub index: u8,
    pub client_count: usize,
    pub dataset: String,
    pub seed: u64,
    pub alphas: (f64, f64),
    /// Global pool sizes, split evenly across clients.
    pub splits: SplitSizes,
}

impl ExperimentSpec {
    pub fn new(index: u8, client_count: usize, dataset: impl Into<String>, seed: u64) -> Self {
        ExperimentSpec {
            index,
            client_count,
            dataset: dataset.into(),
            seed,
            alphas: (ALPHA_IID, ALPHA_NON_IID),
            splits: SplitSizes::FULL,
        }
    }

    pub fn iid_fraction(&self) -> f64 {
        f64::from(5 - self.index.clamp(1, 5)) / 4.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=5).contains(&self.index) {
            return Err(Error::param(
                "experiment",
                format!("{} is not in 1..=5", self.index),
            ));
        }
        if self.client_count == 0 {
            return Err(Error::param("clients", "must be at least 1"));
        }
        if !(self.alphas.0 > 0.0 && self.alphas.1 > 0.0) {
            return Err(Error::param(
                "alpha",
                "Dirichlet concentrations must be positive",
            ));
        }
        Ok(())
    }
}

/// Draws `p ~ Dir(alpha * 1_C)`.
///
/// Gamma variates are handled in log space: for `alpha < 1` a draw is
/// `Gamma(alpha + 1) * U^(1/alpha)`, which keeps tiny concentrations such as
/// 0.05 from underflowing every component to zero.
pub fn sample_class_proportions<R: Rng + ?Sized>(
    alpha: f64,
    class_count: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::param(
            "alpha",
            format!("{alpha} is not a positive finite number"),
        ));
    }
    if class_count < 2 {
        return Err(Error::param("class_count", "need at least 2 classes"));
    }
    let (shape, boost) = if alpha < 1.0 {
        (alpha + 1.0, true)
    } else {
        (alpha, false)
    };
    let gamma = Gamma::new(shape, 1.0).map_err(|e| Error::param("alpha", e.to_string()))?;
    let logs: Vec<f64> = (0..class_count)
        .map(|_| {
            let mut log_g = gamma.sample(rng).ln();
            if boost {
                let u: f64 = 1.0 - rng.random::<f64>(); // (0, 1]
                log_g += u.ln() / alpha;
            }
            log_g
        })
        .collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// Integer counts summing to `total`, proportional to `weights`.
///
/// Floors first, then hands the remainder to the largest fractional parts
/// (lowest index on ties). Weights need not be normalized; an all-zero weight
/// vector yields all-zero counts.
pub fn largest_remainder(weights: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    if sum <= 0.0 || weights.is_empty() {
        return vec![0; weights.len()];
    }
    let exact: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &c in order.iter().take(total.saturating_sub(assigned)) {
        counts[c] += 1;
    }
    counts
}

const SPLIT_NAMES: [&str; 3] = ["train", "test", "conf"];

/// Per-class stacks of pool indices for one split.
struct ClassPools {
    split: &'static str,
    stacks: Vec<Vec<usize>>,
    last_emptied: usize,
}

impl ClassPools {
    fn new(split: &'static str, pool: &[usize], labels: &[u8], class_count: usize) -> Self {
        let mut stacks = vec![Vec::new(); class_count];
        for &i in pool {
            stacks[usize::from(labels[i])].push(i);
        }
        ClassPools {
            split,
            stacks,
            last_emptied: 0,
        }
    }

    fn available(&self) -> usize {
        self.stacks.iter().map(Vec::len).sum()
    }

    fn take(&mut self, class: usize, count: usize, out: &mut Vec<usize>) -> usize {
        let stack = &mut self.stacks[class];
        let n = count.min(stack.len());
        out.extend(stack.drain(stack.len() - n..));
        if n < count {
            self.last_emptied = class;
        }
        n
    }

    /// Draws `size` samples following `proportions`, redistributing demand
    /// for exhausted classes over the surviving ones.
    fn draw(&mut self, client: usize, proportions: &[f64], size: usize) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(size);
        let mut want = largest_remainder(proportions, size);
        loop {
            let mut shortfall = 0;
            for (class, &w) in want.iter().enumerate() {
                let got = self.take(class, w, &mut out);
                if got < w {
                    warn!(
                        "client {client}: {} pool ran out of class {class}; redistributing {} samples",
                        self.split,
                        w - got
                    );
                }
                shortfall += w - got;
            }
            if shortfall == 0 {
                break;
            }
            let survivors: Vec<f64> = self
                .stacks
                .iter()
                .zip(proportions)
                .map(|(s, &p)| if s.is_empty() { 0.0 } else { p })
                .collect();
            let weights = if survivors.iter().sum::<f64>() > 0.0 {
                survivors
            } else {
                self.stacks.iter().map(|s| s.len() as f64).collect()
            };
            if weights.iter().all(|&w| w == 0.0) {
                return Err(Error::Exhausted {
                    split: self.split,
                    class: self.last_emptied,
                    demand: size,
                    available: out.len(),
                });
            }
            want = largest_remainder(&weights, shortfall);
        }
        out.sort_unstable();
        Ok(out)
    }
}

/// Carves global pools of `sizes` from a shuffle of all samples, then fills
/// each client's three splits (each `sizes / M`) from its proportion vector.
pub fn assign_samples<R: Rng + ?Sized>(
    labels: &[u8],
    class_count: usize,
    proportions: &[Vec<f64>],
    sizes: SplitSizes,
    rng: &mut R,
) -> Result<Vec<ClientAssignment>> {
    let clients = proportions.len();
    if clients == 0 {
        return Ok(Vec::new());
    }
    if let Some(p) = proportions.iter().find(|p| p.len() != class_count) {
        return Err(Error::Shape(format!(
            "proportion vector of length {} for {class_count} classes",
            p.len()
        )));
    }
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.shuffle(rng);

    let per_client = sizes.per_client(clients);
    let pool_sizes = [sizes.train, sizes.test, sizes.conf];
    let client_sizes = [per_client.train, per_client.test, per_client.conf];
    // Each pool is stratified: its class counts follow the class counts
    // still unclaimed, so every pool mirrors the global label frequencies.
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); class_count];
    for &i in &order {
        by_class[usize::from(labels[i])].push(i);
    }
    let mut pools: Vec<ClassPools> = Vec::with_capacity(3);
    for (split, &size) in SPLIT_NAMES.iter().zip(&pool_sizes) {
        let remaining: Vec<f64> = by_class.iter().map(|v| v.len() as f64).collect();
        let size = size.min(by_class.iter().map(Vec::len).sum());
        let counts = largest_remainder(&remaining, size);
        let mut pool = Vec::with_capacity(size);
        for (stack, &count) in by_class.iter_mut().zip(&counts) {
            pool.extend(stack.drain(stack.len() - count..));
        }
        pools.push(ClassPools::new(split, &pool, labels, class_count));
    }
    for (pool, &size) in pools.iter().zip(&client_sizes) {
        let demand = size * clients;
        if pool.available() < demand {
            // The pool is short before any client is served; report the
            // class with the least supply as the first to run out.
            let class = (0..class_count)
                .min_by_key(|&c| pool.stacks[c].len())
                .unwrap_or(0);
            return Err(Error::Exhausted {
                split: pool.split,
                class,
                demand,
                available: pool.available(),
            });
        }
    }

    let mut assignments = Vec::with_capacity(clients);
    for (id, p) in proportions.iter().enumerate() {
        let train = pools[0].draw(id, p, client_sizes[0])?;
        let test = pools[1].draw(id, p, client_sizes[1])?;
        let conf = pools[2].draw(id, p, client_sizes[2])?;
        assignments.push(ClientAssignment {
            id,
            train,
            test,
            conf,
        });
    }
    Ok(assignments)
}

/// Builds the plan for one experimental setup: the first
/// `floor(iid_fraction * M)` clients use the IID alpha, the rest the non-IID
/// alpha.
pub fn build_experiment_plan(spec: &ExperimentSpec, dataset: &RawDataset) -> Result<PartitionPlan> {
    spec.validate()?;
    let mut rng = rng_from_seed(derive_seed(
        spec.seed,
        stream::PARTITION,
        u64::from(spec.index),
    ));
    let iid_fraction = spec.iid_fraction();
    let iid_count = iid_client_count(iid_fraction, spec.client_count);
    let class_count = dataset.class_count();
    let proportions = (0..spec.client_count)
        .map(|i| {
            let alpha = if i < iid_count {
                spec.alphas.0
            } else {
                spec.alphas.1
            };
            sample_class_proportions(alpha, class_count, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    let clients = assign_samples(
        dataset.labels(),
        class_count,
        &proportions,
        spec.splits,
        &mut rng,
    )?;
    Ok(PartitionPlan {
        experiment: spec.index,
        seed: spec.seed,
        alphas: spec.alphas,
        iid_fraction,
        clients,
    })
}
