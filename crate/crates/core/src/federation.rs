//! Round orchestration.
//!
//! Under [`Strategy::Tpfl`] a round is: every client trains locally, scores
//! its confidence set and uploads the weight vector of its most confident
//! class; the aggregator groups uploads by class, averages each group and
//! sends the mean back to the group's members, who replace that one class
//! vector and evaluate on their test sets.
//!
//! [`Strategy::GlobalAverage`] is a non-personalized baseline: clients upload
//! every class vector and all receive the same entrywise mean.
//!
//! Client work is independent and may run in parallel. Each client draws
//! from its own seeded generator and the aggregator sorts members by id, so
//! reports do not depend on scheduling.

use std::collections::BTreeMap;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::dataset::{build_client_data, ClientData, RawDataset};
use crate::error::{Error, Result};
use crate::exec::{map_clients, Execution};
use crate::metrics::{
    account_download, account_full_download, account_full_upload, account_upload, mean,
    RoundReport, DEFAULT_BYTES_PER_WEIGHT,
};
use crate::partition::PartitionPlan;
use crate::rng::{derive_seed, rng_from_seed, stream, SimRng};
use crate::tm::{argmax_confidence, integerize_weight, ClassWeightVector, TmModel, TmParams};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    #[default]
    Tpfl,
    GlobalAverage,
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tpfl" => Ok(Strategy::Tpfl),
            "global_average" => Ok(Strategy::GlobalAverage),
            other => Err(Error::param(
                "strategy",
                format!("`{other}` is not one of tpfl, global_average"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederationConfig {
    pub clients: usize,
    pub rounds: usize,
    pub local_epochs: usize,
    pub strategy: Strategy,
    pub tm: TmParams,
    pub seed: u64,
    pub bytes_per_weight: usize,
    /// Score confidence with weighted instead of plain clause votes.
    pub weighted_confidence: bool,
    /// Score confidence on the train set when the confidence set is empty
    /// instead of failing the round.
    pub conf_fallback_to_train: bool,
    pub binarize_threshold: u8,
    pub execution: Execution,
}

impl FederationConfig {
    pub fn new(clients: usize, tm: TmParams, seed: u64) -> Self {
        FederationConfig {
            clients,
            rounds: 10,
            local_epochs: 10,
            strategy: Strategy::Tpfl,
            tm,
            seed,
            bytes_per_weight: DEFAULT_BYTES_PER_WEIGHT,
            weighted_confidence: false,
            conf_fallback_to_train: false,
            binarize_threshold: crate::dataset::DEFAULT_THRESHOLD,
            execution: Execution::Parallel,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.clients == 0 {
            return Err(Error::param("clients", "must be at least 1"));
        }
        if self.rounds == 0 {
            return Err(Error::param("rounds", "must be at least 1"));
        }
        if self.local_epochs == 0 {
            return Err(Error::param("epochs", "must be at least 1"));
        }
        if self.bytes_per_weight == 0 {
            return Err(Error::param("bytes_per_weight", "must be at least 1"));
        }
        self.tm.validate()
    }
}

/// A simulated participant: its model, local data and private generator.
#[derive(Debug, Clone)]
pub struct Client {
    pub id: usize,
    pub model: TmModel,
    pub data: ClientData,
    rng: SimRng,
}

impl Client {
    pub fn new(id: usize, params: TmParams, data: ClientData, seed: u64) -> Result<Self> {
        Ok(Client {
            id,
            model: TmModel::new(params)?,
            data,
            rng: rng_from_seed(seed),
        })
    }

    pub fn with_model(id: usize, model: TmModel, data: ClientData, seed: u64) -> Self {
        Client {
            id,
            model,
            data,
            rng: rng_from_seed(seed),
        }
    }

    fn train_local(&mut self, epochs: usize) {
        for _ in 0..epochs {
            self.model.train_epoch(&self.data.train, &mut self.rng);
        }
    }
}

/// What a client sends under TPFL: its most confident class and that class's
/// weight vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientUpdate {
    pub client_id: usize,
    pub c_max: usize,
    pub weights: ClassWeightVector,
}

/// Trains `epochs` passes, scores the confidence set and packages the
/// weight vector of the most confident class.
pub fn client_round(
    client: &mut Client,
    epochs: usize,
    weighted_confidence: bool,
    conf_fallback_to_train: bool,
) -> Result<ClientUpdate> {
    client.train_local(epochs);
    let conf = if !client.data.conf.is_empty() {
        &client.data.conf
    } else if conf_fallback_to_train {
        warn!(
            "client {}: empty confidence set, scoring on the train set",
            client.id
        );
        &client.data.train
    } else {
        return Err(Error::EmptyConfidenceSet(client.id));
    };
    let scores = client.model.confidence_scores(conf, weighted_confidence);
    let c_max = argmax_confidence(&scores);
    Ok(ClientUpdate {
        client_id: client.id,
        c_max,
        weights: client.model.get_class_weights(c_max),
    })
}

/// Per-class aggregate: the mean of the members' uploaded vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterState {
    pub class: usize,
    pub mean: Vec<f64>,
    /// Ascending client ids.
    pub members: Vec<usize>,
}

impl ClusterState {
    pub fn member_count(&self) -> usize {
        self.members.len()
    }
}

/// Groups updates by `c_max` and averages each group.
///
/// Members are summed in client-id order: the first initializes the
/// accumulator, the rest are added, and the sum is divided by the member
/// count.
pub fn aggregate_updates(updates: &[ClientUpdate]) -> Result<BTreeMap<usize, ClusterState>> {
    let Some(first) = updates.first() else {
        return Ok(BTreeMap::new());
    };
    let len = first.weights.weights.len();
    let mut groups: BTreeMap<usize, Vec<&ClientUpdate>> = BTreeMap::new();
    for u in updates {
        if u.weights.weights.len() != len {
            return Err(Error::Shape(format!(
                "client {} uploaded {} weights, expected {len}",
                u.client_id,
                u.weights.weights.len()
            )));
        }
        if u.weights.class != u.c_max {
            return Err(Error::Shape(format!(
                "client {} labelled a class-{} vector as class {}",
                u.client_id, u.weights.class, u.c_max
            )));
        }
        groups.entry(u.c_max).or_default().push(u);
    }
    Ok(groups
        .into_iter()
        .map(|(class, mut members)| {
            members.sort_by_key(|u| u.client_id);
            let mut acc: Vec<f64> = members[0]
                .weights
                .weights
                .iter()
                .map(|&w| f64::from(w))
                .collect();
            for u in &members[1..] {
                for (a, &w) in acc.iter_mut().zip(&u.weights.weights) {
                    *a += f64::from(w);
                }
            }
            let count = members.len() as f64;
            for a in &mut acc {
                *a /= count;
            }
            let state = ClusterState {
                class,
                mean: acc,
                members: members.iter().map(|u| u.client_id).collect(),
            };
            (class, state)
        })
        .collect())
}

/// Replaces each member's class-`k` weights with its cluster mean. Returns,
/// per client, whether it belonged to a cluster.
pub fn distribute_and_apply(
    clusters: &BTreeMap<usize, ClusterState>,
    clients: &mut [Client],
) -> Result<Vec<bool>> {
    let mut cluster_of: BTreeMap<usize, &ClusterState> = BTreeMap::new();
    for cluster in clusters.values() {
        for &m in &cluster.members {
            cluster_of.insert(m, cluster);
        }
    }
    clients
        .iter_mut()
        .map(|client| match cluster_of.get(&client.id) {
            Some(cluster) => {
                client
                    .model
                    .set_class_weights(cluster.class, &cluster.mean)?;
                Ok(true)
            }
            None => Ok(false),
        })
        .collect()
}

/// Entrywise mean of `C x n` weight matrices, integerized.
pub fn strategy_global_average(matrices: &[Vec<Vec<u32>>]) -> Result<Vec<Vec<u32>>> {
    let Some(first) = matrices.first() else {
        return Err(Error::Shape("no weight matrices to average".into()));
    };
    let shape: Vec<usize> = first.iter().map(Vec::len).collect();
    let mut sum: Vec<Vec<f64>> = shape.iter().map(|&n| vec![0.0; n]).collect();
    for m in matrices {
        if m.len() != shape.len() || m.iter().map(Vec::len).ne(shape.iter().copied()) {
            return Err(Error::Shape("weight matrices differ in shape".into()));
        }
        for (acc_row, row) in sum.iter_mut().zip(m) {
            for (a, &w) in acc_row.iter_mut().zip(row) {
                *a += f64::from(w);
            }
        }
    }
    let count = matrices.len() as f64;
    Ok(sum
        .into_iter()
        .map(|row| {
            row.into_iter()
                .map(|s| integerize_weight(s / count))
                .collect()
        })
        .collect())
}

/// Clients plus configuration; advances one round at a time.
pub struct Federation {
    config: FederationConfig,
    clients: Vec<Client>,
    round: usize,
}

impl Federation {
    /// Builds one client per plan entry. Client `i` draws from the stream
    /// `derive_seed(seed, CLIENT, i)`.
    pub fn new(
        config: FederationConfig,
        plan: &PartitionPlan,
        dataset: &RawDataset,
    ) -> Result<Self> {
        config.validate()?;
        if plan.client_count() != config.clients {
            return Err(Error::param(
                "clients",
                format!(
                    "config has {} clients but the plan has {}",
                    config.clients,
                    plan.client_count()
                ),
            ));
        }
        let mut slots: Vec<usize> = plan.clients.iter().map(|c| c.id).collect();
        let built = map_clients(&mut slots, config.execution, |&mut id| -> Result<Client> {
            let data = build_client_data(dataset, plan, id, config.binarize_threshold)?;
            Client::new(
                id,
                config.tm,
                data,
                derive_seed(config.seed, stream::CLIENT, id as u64),
            )
        });
        let clients = built.into_iter().collect::<Result<Vec<_>>>()?;
        Ok(Federation {
            config,
            clients,
            round: 0,
        })
    }

    pub fn from_clients(config: FederationConfig, clients: Vec<Client>) -> Result<Self> {
        config.validate()?;
        if clients.len() != config.clients {
            return Err(Error::param(
                "clients",
                format!(
                    "config has {} clients but {} were given",
                    config.clients,
                    clients.len()
                ),
            ));
        }
        Ok(Federation {
            config,
            clients,
            round: 0,
        })
    }

    pub fn config(&self) -> &FederationConfig {
        &self.config
    }

    pub fn clients(&self) -> &[Client] {
        &self.clients
    }

    pub fn rounds_done(&self) -> usize {
        self.round
    }

    pub fn run_round(&mut self) -> Result<RoundReport> {
        self.round += 1;
        match self.config.strategy {
            Strategy::Tpfl => self.tpfl_round(),
            Strategy::GlobalAverage => self.global_average_round(),
        }
    }

    fn tpfl_round(&mut self) -> Result<RoundReport> {
        let cfg = self.config.clone();
        let (epochs, weighted, fallback) = (
            cfg.local_epochs,
            cfg.weighted_confidence,
            cfg.conf_fallback_to_train,
        );
        let updates = map_clients(&mut self.clients, cfg.execution, |c| {
            client_round(c, epochs, weighted, fallback).map_err(|e| Error::Client {
                client: c.id,
                source: Box::new(e),
            })
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

        let client_iterations = updates.len();
        let clusters = aggregate_updates(&updates)?;
        let cluster_iterations = clusters.len();
        distribute_and_apply(&clusters, &mut self.clients)?;

        let per_client_accuracy = self.evaluate_clients();
        let n = cfg.tm.clauses;
        Ok(RoundReport {
            round: self.round,
            mean_accuracy: mean(&per_client_accuracy),
            per_client_accuracy,
            clusters: clusters.into_iter().map(|(k, c)| (k, c.members)).collect(),
            upload_bytes: account_upload(client_iterations, n, cfg.bytes_per_weight),
            download_bytes: account_download(cluster_iterations, n, cfg.bytes_per_weight),
            client_iterations,
            cluster_iterations,
        })
    }

    fn global_average_round(&mut self) -> Result<RoundReport> {
        let cfg = self.config.clone();
        let epochs = cfg.local_epochs;
        let matrices = map_clients(&mut self.clients, cfg.execution, |c| {
            c.train_local(epochs);
            c.model.weight_matrix()
        });
        let averaged = strategy_global_average(&matrices)?;
        let averaged: Vec<Vec<f64>> = averaged
            .iter()
            .map(|row| row.iter().map(|&w| f64::from(w)).collect())
            .collect();
        for c in &mut self.clients {
            c.model.set_weight_matrix(&averaged)?;
        }

        let per_client_accuracy = self.evaluate_clients();
        let (classes, n) = (cfg.tm.classes, cfg.tm.clauses);
        Ok(RoundReport {
            round: self.round,
            mean_accuracy: mean(&per_client_accuracy),
            per_client_accuracy,
            clusters: BTreeMap::new(),
            upload_bytes: account_full_upload(matrices.len(), classes, n, cfg.bytes_per_weight),
            download_bytes: account_full_download(classes, n, cfg.bytes_per_weight),
            client_iterations: matrices.len(),
            cluster_iterations: 1,
        })
    }

    fn evaluate_clients(&mut self) -> Vec<f64> {
        map_clients(&mut self.clients, self.config.execution, |c| {
            let e = c.model.evaluate(&c.data.test);
            if e.is_empty() {
                warn!("client {}: empty test set, accuracy recorded as 0", c.id);
            }
            e.accuracy()
        })
    }

    /// Runs the configured number of rounds, handing each report to
    /// `on_report` as soon as it is produced.
    pub fn run(&mut self, mut on_report: impl FnMut(&RoundReport)) -> Result<Vec<RoundReport>> {
        let mut reports = Vec::with_capacity(self.config.rounds);
        for _ in 0..self.config.rounds {
            let report = self.run_round()?;
            on_report(&report);
            reports.push(report);
        }
        Ok(reports)
    }
}

pub fn run_federation(
    config: FederationConfig,
    plan: &PartitionPlan,
    dataset: &RawDataset,
) -> Result<Vec<RoundReport>> {
    Federation::new(config, plan, dataset)?.run(|_| {})
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::BinarySample;

    fn update(client_id: usize, class: usize, weights: &[u32]) -> ClientUpdate {
        ClientUpdate {
            client_id,
            c_max: class,
            weights: ClassWeightVector {
                class,
                weights: weights.to_vec(),
            },
        }
    }

    #[test]
    fn single_update_is_identity() {
        let clusters = aggregate_updates(&[update(0, 1, &[2, 4, 6])]).unwrap();
        assert_eq!(clusters[&1].mean, vec![2.0, 4.0, 6.0]);
        assert_eq!(clusters[&1].member_count(), 1);
    }

    #[test]
    fn two_member_mean() {
        let clusters = aggregate_updates(&[update(4, 3, &[4, 8]), update(1, 3, &[2, 4])]).unwrap();
        assert_eq!(clusters[&3].mean, vec![3.0, 6.0]);
        assert_eq!(clusters[&3].members, vec![1, 4]);
    }

    #[test]
    fn grouping_by_class() {
        let clusters =
            aggregate_updates(&[update(0, 0, &[1]), update(1, 0, &[3]), update(2, 5, &[7])])
                .unwrap();
        assert_eq!(clusters.len(), 2);
        assert_eq!(clusters[&0].member_count(), 2);
        assert_eq!(clusters[&5].members, vec![2]);
    }

    #[test]
    fn mixed_lengths_rejected() {
        assert!(matches!(
            aggregate_updates(&[update(0, 0, &[1, 2]), update(1, 1, &[3])]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn duplicate_update_has_same_mean() {
        let once = aggregate_updates(&[update(0, 2, &[5, 9, 1])]).unwrap();
        let twice =
            aggregate_updates(&[update(0, 2, &[5, 9, 1]), update(1, 2, &[5, 9, 1])]).unwrap();
        assert_eq!(once[&2].mean, twice[&2].mean);
    }

    #[test]
    fn global_average_examples() {
        assert_eq!(
            strategy_global_average(&[vec![vec![2]], vec![vec![4]]]).unwrap(),
            vec![vec![3]]
        );
        let one = vec![vec![1, 2, 3], vec![4, 5, 6]];
        assert_eq!(
            strategy_global_average(std::slice::from_ref(&one)).unwrap(),
            one
        );
        assert!(strategy_global_average(&[vec![vec![1]], vec![vec![1, 2]]]).is_err());
        assert!(strategy_global_average(&[]).is_err());
    }

    fn tiny_client(id: usize, conf: Vec<BinarySample>) -> Client {
        let params = TmParams::new(3, 4, 2, 10, 3.0);
        let data = ClientData {
            train: vec![],
            test: vec![],
            conf,
        };
        Client::new(id, params, data, id as u64).unwrap()
    }

    #[test]
    fn untrained_client_picks_lowest_class() {
        let mut c = tiny_client(0, vec![BinarySample::new(&[true, false], 2)]);
        let u = client_round(&mut c, 0, false, false).unwrap();
        assert_eq!(u.c_max, 0);
        assert_eq!(u.weights.weights.len(), 4);
        assert_eq!(u.weights.class, 0);
    }

    #[test]
    fn empty_conf_set_errors_unless_fallback() {
        let mut c = tiny_client(3, vec![]);
        assert!(matches!(
            client_round(&mut c, 1, false, false),
            Err(Error::EmptyConfidenceSet(3))
        ));
        assert!(client_round(&mut c, 1, false, true).is_ok());
    }

    #[test]
    fn apply_replaces_only_cluster_class() {
        let mut clients = vec![tiny_client(0, vec![]), tiny_client(1, vec![])];
        for c in &mut clients {
            c.model
                .randomize(&mut rng_from_seed(c.id as u64 + 100), 0.3, 10);
        }
        let before: Vec<TmModel> = clients.iter().map(|c| c.model.clone()).collect();
        let clusters = aggregate_updates(&[
            update(0, 2, clients[0].model.bank(2).weights()),
            update(1, 2, clients[1].model.bank(2).weights()),
        ])
        .unwrap();
        let applied = distribute_and_apply(&clusters, &mut clients).unwrap();
        assert_eq!(applied, vec![true, true]);
        assert_eq!(
            clients[0].model.bank(2).weights(),
            clients[1].model.bank(2).weights()
        );
        for (c, b) in clients.iter().zip(&before) {
            for class in [0, 1] {
                assert_eq!(c.model.bank(class), b.bank(class));
            }
            assert_eq!(c.model.bank(2).states(), b.bank(2).states());
        }
    }

    #[test]
    fn config_validation() {
        let params = TmParams::new(3, 4, 2, 10, 3.0);
        let mut cfg = FederationConfig::new(2, params, 0);
        assert!(cfg.validate().is_ok());
        cfg.rounds = 0;
        assert!(cfg.validate().is_err());
        assert!("fedavg".parse::<Strategy>().is_err());
        assert_eq!(
            "global_average".parse::<Strategy>().unwrap(),
            Strategy::GlobalAverage
        );
    }
}
