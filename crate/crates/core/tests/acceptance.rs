//! Acceptance suite. Every check prints one `criterion N: PASS|FAIL` line
//! before asserting, so `cargo test --test acceptance -- --nocapture` gives a
//! readable scorecard.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::Instant;

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::Rng;
use tpfl::config::{DatasetName, ExperimentSelection, PartialConfig, RunConfig};
use tpfl::dataset::{load_dir, BinarySample, ClientData, Literals, RawDataset, DEFAULT_THRESHOLD};
use tpfl::exec::Execution;
use tpfl::federation::{
    aggregate_updates, distribute_and_apply, Client, ClientUpdate, Federation, FederationConfig,
};
use tpfl::metrics::RoundReport;
use tpfl::partition::sample_class_proportions;
use tpfl::rng::rng_from_seed;
use tpfl::runner::run_experiment;
use tpfl::tm::{argmax_confidence, ClassWeightVector, ClauseBank, TmModel, TmParams};

fn verdict(criterion: u8, ok: bool, detail: impl std::fmt::Display) {
    println!(
        "criterion {criterion}: {} | {detail}",
        if ok { "PASS" } else { "FAIL" }
    );
}

fn data_dir() -> PathBuf {
    std::env::var_os("TPFL_DATA_DIR")
        .map(|d| PathBuf::from(d).join("mnist"))
        .filter(|d| d.is_dir())
        .unwrap_or_else(|| PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/mnist")))
}

fn mnist() -> &'static RawDataset {
    static DATA: OnceLock<RawDataset> = OnceLock::new();
    DATA.get_or_init(|| load_dir(&data_dir()).expect("MNIST idx files under data/mnist"))
}

#[test]
fn c1_tm_sanity_on_mnist_subset() {
    let d = mnist();
    let train: Vec<BinarySample> = (0..1000).map(|i| d.sample(i, DEFAULT_THRESHOLD)).collect();
    let test: Vec<BinarySample> = (1000..1200)
        .map(|i| d.sample(i, DEFAULT_THRESHOLD))
        .collect();
    let start = Instant::now();
    let mut model = TmModel::new(TmParams::new(10, 100, 784, 200, 10.0)).unwrap();
    let mut rng = rng_from_seed(0);
    for _ in 0..10 {
        model.train_epoch(&train, &mut rng);
    }
    let acc = model.evaluate(&test).accuracy();
    let secs = start.elapsed().as_secs_f64();
    let ok = acc >= 0.85 && secs < 60.0;
    verdict(
        1,
        ok,
        format!("test accuracy {acc:.3} (need >= 0.85), {secs:.1} s (need < 60)"),
    );
    assert!(ok);
}

/// Experiments 1 and 5 at desk scale for three seeds.
fn desk_runs() -> &'static BTreeMap<(u64, u8), Vec<RoundReport>> {
    static RUNS: OnceLock<BTreeMap<(u64, u8), Vec<RoundReport>>> = OnceLock::new();
    RUNS.get_or_init(|| {
        let mut runs = BTreeMap::new();
        for seed in 0..3u64 {
            let config = desk_config(seed);
            for e in [1u8, 5] {
                let run = run_experiment(&config, mnist(), e).unwrap();
                runs.insert((seed, e), run.reports);
            }
        }
        runs
    })
}

fn desk_config(seed: u64) -> RunConfig {
    PartialConfig {
        dataset: Some(DatasetName::Mnist),
        data_dir: Some(data_dir()),
        experiment: Some(ExperimentSelection::All),
        clients: Some(10),
        rounds: Some(3),
        clauses: Some(100),
        threshold_t: Some(200),
        fraction: Some(0.1),
        seed: Some(seed),
        ..Default::default()
    }
    .resolve()
    .unwrap()
}

#[test]
fn c2_severe_non_iid_beats_iid_at_desk_scale() {
    let runs = desk_runs();
    let gaps: Vec<f64> = (0..3u64)
        .map(|s| {
            runs[&(s, 5)].last().unwrap().mean_accuracy
                - runs[&(s, 1)].last().unwrap().mean_accuracy
        })
        .collect();
    let wins = gaps.iter().filter(|&&g| g >= 0.02).count();
    let ok = wins >= 2;
    verdict(
        2,
        ok,
        format!("final exp5 - exp1 per seed {gaps:.3?}; {wins}/3 seeds >= 0.02"),
    );
    assert!(ok);
}

#[test]
fn c3_round_one_favours_experiment_five() {
    let runs = desk_runs();
    let pairs: Vec<(f64, f64)> = (0..3u64)
        .map(|s| {
            (
                runs[&(s, 5)][0].mean_accuracy,
                runs[&(s, 1)][0].mean_accuracy,
            )
        })
        .collect();
    let wins = pairs.iter().filter(|(e5, e1)| e5 > e1).count();
    let ok = wins >= 2;
    verdict(
        3,
        ok,
        format!("round-1 (exp5, exp1) per seed {pairs:.3?}; {wins}/3 seeds exp5 ahead"),
    );
    assert!(ok);
}

fn random_samples(
    rng: &mut impl Rng,
    count: usize,
    features: usize,
    classes: usize,
) -> Vec<BinarySample> {
    (0..count)
        .map(|_| {
            let x: Vec<bool> = (0..features).map(|_| rng.random_bool(0.5)).collect();
            BinarySample::new(&x, rng.random_range(0..classes))
        })
        .collect()
}

#[test]
fn c4_communication_structure() {
    let (m, classes, n, features) = (100, 10, 300, 16);
    let start = Instant::now();
    let params = TmParams::new(classes, n, features, 1000, 10.0);
    let mut rng = rng_from_seed(4);
    let clients: Vec<Client> = (0..m)
        .map(|id| {
            let mut model = TmModel::new(params).unwrap();
            model.randomize(&mut rng, 0.05, 20);
            let data = ClientData {
                train: vec![],
                test: random_samples(&mut rng, 4, features, classes),
                conf: random_samples(&mut rng, 4, features, classes),
            };
            Client::with_model(id, model, data, id as u64)
        })
        .collect();
    let mut config = FederationConfig::new(m, params, 4);
    config.local_epochs = 1;
    let mut fed = Federation::from_clients(config, clients).unwrap();
    let reports = fed.run(|_| {}).unwrap();
    let secs = start.elapsed().as_secs_f64();

    let mut ok = reports.len() == 10 && secs < 5.0;
    for r in &reports {
        let k = r.cluster_count() as u64;
        ok &= r.upload_bytes == 100 * 1208;
        ok &= r.download_bytes == k * 1204;
        ok &= r.download_bytes as f64 / r.upload_bytes as f64 <= classes as f64 / m as f64 + 1e-9;
    }
    let cumulative: u64 = reports.iter().map(|r| r.upload_bytes).sum();
    let mb = cumulative as f64 / 1e6;
    ok &= (1.91 / 2.0..=1.91 * 2.0).contains(&mb);
    let ks: Vec<usize> = reports.iter().map(RoundReport::cluster_count).collect();
    verdict(
        4,
        ok,
        format!("clusters per round {ks:?}, cumulative upload {mb:.3} MB vs 1.91, {secs:.2} s"),
    );
    assert!(ok);
}

/// Group by class, sum as integers, divide once.
fn brute_force_aggregate(updates: &[ClientUpdate]) -> BTreeMap<usize, (Vec<usize>, Vec<f64>)> {
    let mut out = BTreeMap::new();
    let classes: std::collections::BTreeSet<usize> = updates.iter().map(|u| u.c_max).collect();
    for k in classes {
        let mut ids: Vec<usize> = updates
            .iter()
            .filter(|u| u.c_max == k)
            .map(|u| u.client_id)
            .collect();
        ids.sort_unstable();
        let len = updates[0].weights.weights.len();
        let mean = (0..len)
            .map(|j| {
                let total: u64 = updates
                    .iter()
                    .filter(|u| u.c_max == k)
                    .map(|u| u64::from(u.weights.weights[j]))
                    .sum();
                total as f64 / ids.len() as f64
            })
            .collect();
        out.insert(k, (ids, mean));
    }
    out
}

fn random_updates(rng: &mut impl Rng) -> Vec<ClientUpdate> {
    let clients = rng.random_range(1..=10);
    let classes = rng.random_range(1..=5);
    let n = rng.random_range(1..=16);
    let mut ids: Vec<usize> = (0..50).collect();
    rand::seq::SliceRandom::shuffle(ids.as_mut_slice(), rng);
    ids.truncate(clients);
    ids.into_iter()
        .map(|client_id| {
            let c_max = rng.random_range(0..classes);
            ClientUpdate {
                client_id,
                c_max,
                weights: ClassWeightVector {
                    class: c_max,
                    weights: (0..n).map(|_| rng.random_range(1..=1000)).collect(),
                },
            }
        })
        .collect()
}

#[test]
fn c5_aggregation_matches_brute_force() {
    let mut rng = rng_from_seed(5);
    let mut mismatches = 0;
    for _ in 0..200 {
        let updates = random_updates(&mut rng);
        let got: BTreeMap<usize, (Vec<usize>, Vec<f64>)> = aggregate_updates(&updates)
            .unwrap()
            .into_iter()
            .map(|(k, c)| (k, (c.members, c.mean)))
            .collect();
        if got != brute_force_aggregate(&updates) {
            mismatches += 1;
        }
    }
    verdict(
        5,
        mismatches == 0,
        format!("{mismatches}/200 update sets differ from the oracle"),
    );
    assert_eq!(mismatches, 0);
}

/// Weighted vote margin by double loop over clauses and literals.
fn naive_margin(bank: &ClauseBank, x: &Literals) -> i64 {
    let mut margin = 0i64;
    for j in 0..bank.clause_count() {
        let mut any = false;
        let mut fires = true;
        for k in 0..bank.literal_count() {
            if bank.state(j, k) > bank.n_states() {
                any = true;
                if !x.get(k) {
                    fires = false;
                }
            }
        }
        if any && fires {
            let w = i64::from(bank.weight(j));
            margin += if j % 2 == 0 { w } else { -w };
        }
    }
    margin
}

#[test]
fn c6_class_margin_matches_double_loop() {
    let mut rng = rng_from_seed(6);
    let mut mismatches = 0;
    let mut nonzero = 0;
    for _ in 0..1000 {
        let classes = rng.random_range(1..=4);
        let clauses = 2 * rng.random_range(1..=8);
        let features = rng.random_range(1..=100);
        let mut model = TmModel::new(TmParams::new(classes, clauses, features, 100, 5.0)).unwrap();
        let density = rng.random_range(0.0..0.15);
        model.randomize(&mut rng, density, 50);
        let x: Vec<bool> = (0..features).map(|_| rng.random_bool(0.5)).collect();
        let lits = Literals::from_features(&x);
        for c in 0..classes {
            let expected = naive_margin(model.bank(c), &lits);
            nonzero += usize::from(expected != 0);
            if model.class_margin(c, &lits) != expected {
                mismatches += 1;
            }
        }
    }
    verdict(
        6,
        mismatches == 0,
        format!("{mismatches} mismatching margins over 1000 pairs ({nonzero} non-zero)"),
    );
    assert_eq!(mismatches, 0);
}

fn tiny_params() -> impl Strategy<Value = (TmParams, u64)> {
    (
        1usize..4,
        1usize..4,
        1usize..12,
        1u32..20,
        2u32..8,
        1u8..=127,
        any::<u64>(),
    )
        .prop_map(|(classes, half, features, t, s, states, seed)| {
            let mut p = TmParams::new(classes + 1, 2 * half, features, t, f64::from(s));
            p.states = states;
            (p, seed)
        })
}

fn run_property<S: Strategy>(
    name: &str,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    let mut runner = TestRunner::new(Config {
        cases: 10_000,
        failure_persistence: None,
        ..Config::default()
    });
    runner
        .run(&strategy, test)
        .map_err(|e| format!("{name}: {e}"))
}

fn trained_model(p: TmParams, seed: u64) -> TmModel {
    let mut rng = rng_from_seed(seed);
    let mut model = TmModel::new(p).unwrap();
    let data = random_samples(&mut rng, 6, p.features, p.classes);
    for _ in 0..3 {
        model.train_epoch(&data, &mut rng);
    }
    model
}

fn tiny_federation(p: TmParams, seed: u64, clients: usize, execution: Execution) -> Federation {
    let mut rng = rng_from_seed(seed);
    let clients: Vec<Client> = (0..clients)
        .map(|id| {
            let data = ClientData {
                train: random_samples(&mut rng, 4, p.features, p.classes),
                test: random_samples(&mut rng, 2, p.features, p.classes),
                conf: random_samples(&mut rng, 2, p.features, p.classes),
            };
            Client::new(id, p, data, seed ^ id as u64).unwrap()
        })
        .collect();
    let mut config = FederationConfig::new(clients.len(), p, seed);
    config.local_epochs = 1;
    config.rounds = 2;
    config.execution = execution;
    Federation::from_clients(config, clients).unwrap()
}

#[test]
fn c7_invariant_suite() {
    let mut failures = Vec::new();
    let mut record = |r: Result<(), String>| {
        if let Err(e) = r {
            failures.push(e);
        }
    };

    record(run_property(
        "state clamping",
        tiny_params(),
        |(p, seed)| {
            let m = trained_model(p, seed);
            for c in 0..p.classes {
                let bank = m.bank(c);
                prop_assert!(bank.states().iter().all(|&s| s >= 1 && s <= 2 * p.states));
            }
            Ok(())
        },
    ));

    record(run_property(
        "weight positivity",
        (tiny_params(), prop::collection::vec(-1e3f64..1e3, 8)),
        |((p, seed), raw)| {
            let mut m = trained_model(p, seed);
            prop_assert!(m.weight_matrix().iter().flatten().all(|&w| w >= 1));
            let row: Vec<f64> = raw.iter().copied().cycle().take(p.clauses).collect();
            m.set_class_weights(0, &row).unwrap();
            prop_assert!(m.bank(0).weights().iter().all(|&w| w >= 1));
            Ok(())
        },
    ));

    record(run_property("cluster partition", any::<u64>(), |seed| {
        let updates = random_updates(&mut rng_from_seed(seed));
        let clusters = aggregate_updates(&updates).unwrap();
        let mut seen: Vec<usize> = clusters.values().flat_map(|c| c.members.clone()).collect();
        seen.sort_unstable();
        let mut ids: Vec<usize> = updates.iter().map(|u| u.client_id).collect();
        ids.sort_unstable();
        prop_assert_eq!(seen, ids);
        for (k, c) in &clusters {
            for m in &c.members {
                prop_assert_eq!(
                    updates.iter().find(|u| u.client_id == *m).unwrap().c_max,
                    *k
                );
            }
        }
        Ok(())
    }));

    record(run_property(
        "replacement isolation",
        (tiny_params(), 1usize..5),
        |((p, seed), m)| {
            let mut rng = rng_from_seed(seed);
            let mut clients: Vec<Client> = (0..m)
                .map(|id| {
                    let mut model = TmModel::new(p).unwrap();
                    model.randomize(&mut rng, 0.2, 30);
                    Client::with_model(id, model, ClientData::default(), id as u64)
                })
                .collect();
            let before: Vec<TmModel> = clients.iter().map(|c| c.model.clone()).collect();
            let updates: Vec<ClientUpdate> = clients
                .iter()
                .map(|c| {
                    let k = rng.random_range(0..p.classes);
                    ClientUpdate {
                        client_id: c.id,
                        c_max: k,
                        weights: c.model.get_class_weights(k),
                    }
                })
                .collect();
            let clusters = aggregate_updates(&updates).unwrap();
            distribute_and_apply(&clusters, &mut clients).unwrap();
            for ((c, b), u) in clients.iter().zip(&before).zip(&updates) {
                for class in 0..p.classes {
                    prop_assert_eq!(c.model.bank(class).states(), b.bank(class).states());
                    if class != u.c_max {
                        prop_assert_eq!(c.model.bank(class).weights(), b.bank(class).weights());
                    }
                }
            }
            Ok(())
        },
    ));

    record(run_property(
        "argmax scale invariance",
        (
            prop::collection::vec(-1_000_000i64..1_000_000, 1..12),
            1i64..1000,
        ),
        |(scores, lambda)| {
            let scaled: Vec<i64> = scores.iter().map(|s| s * lambda).collect();
            prop_assert_eq!(argmax_confidence(&scores), argmax_confidence(&scaled));
            Ok(())
        },
    ));

    record(run_property(
        "determinism",
        (tiny_params(), 1usize..4),
        |((p, seed), m)| {
            let a = tiny_federation(p, seed, m, Execution::Sequential)
                .run(|_| {})
                .unwrap();
            let b = tiny_federation(p, seed, m, Execution::Sequential)
                .run(|_| {})
                .unwrap();
            let c = tiny_federation(p, seed, m, Execution::Parallel)
                .run(|_| {})
                .unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert_eq!(&a, &c);
            Ok(())
        },
    ));

    let ok = failures.is_empty();
    verdict(
        7,
        ok,
        if ok {
            "6 properties x 10000 cases".to_string()
        } else {
            failures.join("; ")
        },
    );
    assert!(ok);
}

#[test]
fn c8_partition_statistics() {
    let mut rng = rng_from_seed(8);
    let max_of = |alpha: f64, rng: &mut _| -> Vec<f64> {
        (0..1000)
            .map(|_| {
                sample_class_proportions(alpha, 10, rng)
                    .unwrap()
                    .into_iter()
                    .fold(0.0, f64::max)
            })
            .collect()
    };
    let iid = max_of(10_000.0, &mut rng);
    let iid_share = iid.iter().filter(|&&m| m <= 0.15).count() as f64 / 1000.0;
    let mut skewed = max_of(0.05, &mut rng);
    skewed.sort_by(f64::total_cmp);
    let median = (skewed[499] + skewed[500]) / 2.0;
    let ok = iid_share >= 0.95 && median >= 0.7;
    verdict(
        8,
        ok,
        format!(
            "alpha=1e4 share with max <= 0.15: {iid_share:.3}; alpha=0.05 median max {median:.3}"
        ),
    );
    assert!(ok);
}

#[test]
fn c9_round_work_is_m_plus_k() {
    let p = TmParams::new(5, 4, 8, 10, 4.0);
    let mut ok = true;
    let mut seen = Vec::new();
    for m in [1usize, 3, 8, 20] {
        let mut fed = tiny_federation(p, m as u64, m, Execution::Parallel);
        for r in fed.run(|_| {}).unwrap() {
            let k = r.cluster_count();
            ok &= r.client_iterations == m && r.cluster_iterations == k;
            ok &= r.client_iterations + r.cluster_iterations == m + k;
            seen.push((m, k));
        }
    }
    verdict(9, ok, format!("(M, K) per round {seen:?}"));
    assert!(ok);
}
