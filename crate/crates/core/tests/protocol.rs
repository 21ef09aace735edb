use std::collections::BTreeMap;

use fact_core::data::Dataset;
use fact_core::federation::{
    cross_initialize, evaluate, fedavg, fine_tune, idd_minimize, run_round, select_pair, source_train, ClientState, Federation,
    ProgressWindow, ServerState,
};
use fact_core::nn::{backward, partition_hash, GradTarget, HyperParams, LayerSpec, Mode, ModelParams, Objective, Partitions};
use fact_core::rng::{derive, seeded, tag};
use fact_core::Tensor;
use rand::Rng;

mod common;
use common::*;

const WINDOW: ProgressWindow = ProgressWindow {
    start_epoch: 0,
    total_epochs: 10,
};

fn global(seed: u64) -> ModelParams {
    ModelParams::init(&small_spec(), &mut seeded(seed)).unwrap()
}

#[test]
fn select_pair_is_uniform_over_unordered_pairs() {
    let (clients, _) = small_federation(0);
    let mut extra = clients[0].clone();
    extra.id = 7;
    let sources: Vec<&ClientState> = clients[..3].iter().chain([&extra]).collect();
    let mut server = ServerState::new(global(0), 99);
    let draws = 60_000;
    let mut counts: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for _ in 0..draws {
        let (a, b) = select_pair(&mut server, &sources).unwrap();
        assert!(a < b);
        *counts.entry((a, b)).or_default() += 1;
    }
    assert_eq!(counts.len(), 6);
    let p = 1.0 / 6.0;
    let expected = draws as f64 * p;
    let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
    for (pair, &c) in &counts {
        assert!(
            (c as f64 - expected).abs() < 4.0 * sigma,
            "{pair:?}: {c} draws, expected {expected:.0} ± {:.0}",
            4.0 * sigma
        );
    }
}

#[test]
fn select_pair_needs_two_sources() {
    let (clients, _) = small_federation(0);
    let mut server = ServerState::new(global(0), 0);
    let err = select_pair(&mut server, &[&clients[0]]).unwrap_err().to_string();
    assert!(err.contains("split_domain"), "{err}");
}

#[test]
fn cross_initialize_copies_bitwise() {
    let (mut clients, _) = small_federation(1);
    let server = ServerState::new(global(5), 0);
    cross_initialize(&server, &mut clients, (0, 2)).unwrap();
    assert!(clients[0].local_params.bit_eq(&server.global_params));
    assert!(clients[2].local_params.bit_eq(&server.global_params));
    assert!(!clients[1].local_params.bit_eq(&server.global_params));
    assert!(cross_initialize(&server, &mut clients, (1, 1)).is_err());
    assert!(cross_initialize(&server, &mut clients, (0, 3)).is_err(), "target is not a source");
}

fn ulps(a: f64, b: f64) -> u64 {
    let key = |x: f64| {
        let bits = x.to_bits() as i64;
        if bits < 0 {
            i64::MIN - bits
        } else {
            bits
        }
    };
    key(a).abs_diff(key(b))
}

#[test]
fn fedavg_is_the_exact_mean() {
    let mut r = seeded(3);
    for _ in 0..50 {
        let a = vec![random_tensor(&mut r, 7, 5), random_tensor(&mut r, 1, 5)];
        let b = vec![random_tensor(&mut r, 7, 5), random_tensor(&mut r, 1, 5)];
        let avg = fedavg(&[&a, &b], &[0.5, 0.5]).unwrap();
        for ((m, x), y) in avg.iter().zip(&a).zip(&b) {
            assert_eq!(m.shape(), x.shape());
            for ((&m, &x), &y) in m.values().iter().zip(x.values()).zip(y.values()) {
                assert!(ulps(m, (x + y) / 2.0) <= 1, "{m} vs mean of {x}, {y}");
            }
        }
    }
    let a = vec![Tensor::new(vec![2], vec![1.0, 2.0]).unwrap()];
    let b = vec![Tensor::new(vec![2], vec![3.0, 6.0]).unwrap()];
    assert_eq!(fedavg(&[&a, &b], &[0.25, 0.75]).unwrap()[0].values(), &[2.5, 5.0]);
    assert!(fedavg(&[&a, &b], &[0.5, 0.6]).is_err());
    let c = vec![Tensor::zeros(&[3])];
    assert!(fedavg(&[&a, &c], &[0.5, 0.5]).is_err());
}

#[test]
fn phases_touch_only_their_partitions() {
    let (mut clients, _) = small_federation(2);
    let hyper = small_hyper();
    let g0 = global(7);

    clients[0].local_params = g0.clone();
    source_train(&mut clients[0], &hyper, 1, WINDOW, &mut rng(1)).unwrap();
    assert_ne!(clients[0].local_params.generator_hash(), g0.generator_hash());
    assert_ne!(clients[0].local_params.head_hash(), g0.head_hash());

    let frozen = global(8).generator;
    let head_before = clients[1].local_params.head.clone();
    clients[1].local_params = ModelParams {
        head: head_before.clone(),
        ..global(9)
    };
    fine_tune(&mut clients[1], &frozen, &hyper, 2, WINDOW, &mut rng(2)).unwrap();
    assert_eq!(clients[1].local_params.generator_hash(), partition_hash(&frozen));
    assert_ne!(partition_hash(&clients[1].local_params.head), partition_hash(&head_before));

    let (h1, h2) = (global(10).head, global(11).head);
    let (hash1, hash2) = (partition_hash(&h1), partition_hash(&h2));
    let (g, _) = idd_minimize(&mut clients[3], &g0.generator, &h1, &h2, &hyper, 1, WINDOW, &mut rng(3)).unwrap();
    assert_eq!((partition_hash(&h1), partition_hash(&h2)), (hash1, hash2));
    assert_ne!(partition_hash(&g), g0.generator_hash());
}

fn mean_ce(p: &ModelParams, ds: &Dataset) -> f64 {
    let target = GradTarget {
        objective: Objective::CrossEntropy {
            labels: ds.labels().unwrap(),
        },
        partitions: Partitions::Head,
    };
    backward(p, ds.features(), target, Mode::Eval).unwrap().0
}

fn mean_idd(generator: &[Tensor], h1: &[Tensor], h2: &[Tensor], ds: &Dataset) -> f64 {
    let p = ModelParams {
        spec: small_spec(),
        generator: generator.to_vec(),
        head: h1.to_vec(),
    };
    let target = GradTarget {
        objective: Objective::Idd { other_head: h2 },
        partitions: Partitions::Generator,
    };
    backward(&p, ds.features(), target, Mode::Eval).unwrap().0
}

#[test]
fn fine_tune_reduces_source_loss() {
    let (mut clients, _) = small_federation(3);
    let g = global(12);
    clients[0].local_params = g.clone();
    let before = mean_ce(&clients[0].local_params, &clients[0].dataset);
    fine_tune(&mut clients[0], &g.generator, &small_hyper(), 5, WINDOW, &mut rng(4)).unwrap();
    let after = mean_ce(&clients[0].local_params, &clients[0].dataset);
    assert!(after < before, "{after} !< {before}");
}

#[test]
fn idd_minimization_reduces_discrepancy() {
    let (mut clients, _) = small_federation(4);
    let g = global(13).generator;
    let (h1, h2) = (global(14).head, global(15).head);
    let ds = clients[3].dataset.clone();
    let before = mean_idd(&g, &h1, &h2, &ds);
    let (g2, _) = idd_minimize(&mut clients[3], &g, &h1, &h2, &small_hyper(), 5, WINDOW, &mut rng(5)).unwrap();
    let after = mean_idd(&g2, &h1, &h2, &ds);
    assert!(after < before, "{after} !< {before}");
}

#[test]
fn identical_heads_are_a_fixed_point() {
    let (mut clients, _) = small_federation(5);
    let p = global(16);
    let hyper = HyperParams {
        weight_decay: 0.0,
        ..small_hyper()
    };
    let head = p.head.clone();
    let (g, idd) = idd_minimize(&mut clients[3], &p.generator, &head, &head.clone(), &hyper, 1, WINDOW, &mut rng(6)).unwrap();
    assert_eq!(idd.to_bits(), 0.0f64.to_bits());
    assert_eq!(partition_hash(&g), p.generator_hash());
}

#[test]
fn failed_round_leaves_state_untouched() {
    let (mut clients, test) = small_federation(6);
    let t = &clients[3].dataset;
    let mut values = t.features().values().to_vec();
    values[5] = f64::NAN;
    let poisoned = Dataset::new(Tensor::new(t.features().shape().to_vec(), values).unwrap(), None, "t", 3).unwrap();
    clients[3].dataset = poisoned;
    let mut fed = Federation::new(clients, small_config("fact", 6), small_hyper())
        .unwrap()
        .with_eval(test);
    let server_before = fed.server.clone();
    let clients_before = fed.clients.clone();
    assert!(fed.run_round().is_err());
    assert!(fed.server.same_state(&server_before));
    for (a, b) in fed.clients.iter().zip(&clients_before) {
        assert!(a.local_params.bit_eq(&b.local_params));
    }
}

#[test]
fn full_run_is_deterministic_per_seed() {
    let run = |seed| {
        let (clients, test) = small_federation(7);
        Federation::new(clients, small_config("fact", seed), small_hyper())
            .unwrap()
            .with_eval(test)
            .run()
            .unwrap()
    };
    let (a, b, c) = (run(1), run(1), run(2));
    assert!(a.params.bit_eq(&b.params));
    assert_eq!(a.history, b.history);
    assert_eq!(a.selected_round, b.selected_round);
    assert_ne!(a.history, c.history);
}

#[test]
fn fact_nf_skips_fine_tuning() {
    let (clients, _) = small_federation(8);
    let out = Federation::new(clients, small_config("fact-nf", 8), small_hyper())
        .unwrap()
        .run()
        .unwrap();
    assert!(out.history.iter().all(|r| r.finetune_losses.is_none() && r.idd.is_some()));
    let (clients, _) = small_federation(8);
    let out = Federation::new(clients, small_config("source-only", 8), small_hyper())
        .unwrap()
        .run()
        .unwrap();
    assert!(out.history.iter().all(|r| r.finetune_losses.is_some() && r.idd.is_none()));
    assert_eq!(out.selected_round, 4);
}

#[test]
fn global_head_is_mean_of_fine_tuned_heads() {
    let (mut clients, _) = small_federation(9);
    let config = small_config("fact", 9);
    let mut server = ServerState::new(global(17), 9);
    for _ in 0..3 {
        let rec = run_round(&mut server, &mut clients, &config, &small_hyper()).unwrap();
        let (a, b) = rec.pair;
        let avg = fedavg(&[&clients[a].local_params.head, &clients[b].local_params.head], &[0.5, 0.5]).unwrap();
        assert_eq!(partition_hash(&avg), server.global_params.head_hash());
        // The broadcast generator is the target's adapted one.
        assert_eq!(clients[3].local_params.generator_hash(), server.global_params.generator_hash());
    }
}

#[test]
fn source_training_separates_blobs() {
    let mut r = seeded(10);
    let n = 400;
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for i in 0..n {
        let y = i % 2;
        let c = if y == 0 { -2.0 } else { 2.0 };
        rows.push(vec![c + r.random_range(-1.0..1.0), c + r.random_range(-1.0..1.0)]);
        labels.push(y);
    }
    let ds = Dataset::new(Tensor::from_rows(&rows).unwrap(), Some(labels), "blobs", 2).unwrap();
    let spec = LayerSpec::mlp(2, &[8], &[], 2);
    let mut c = ClientState::source(0, ds.clone(), &spec).unwrap();
    c.local_params = ModelParams::init(&spec, &mut seeded(1)).unwrap();
    source_train(&mut c, &small_hyper(), 10, WINDOW, &mut rng(11)).unwrap();
    let acc = evaluate(&c.local_params, &ds).unwrap();
    assert!(acc >= 0.95, "{acc}");
}

#[test]
fn source_only_matches_hand_driven_primitives() {
    let seed = 11;
    let config = small_config("source-only", seed);
    let hyper = small_hyper();
    let (clients, _) = small_federation(seed);
    let out = Federation::new(clients.clone(), config.clone(), hyper).unwrap().run().unwrap();

    let mut clients = clients;
    let init = ModelParams::init(&small_spec(), &mut derive(seed, &[tag("init")])).unwrap();
    let mut server = ServerState::new(init, seed);
    let total = config.rounds * (config.epochs_source + config.epochs_finetune);
    let mut elapsed = 0;
    for round in 0..config.rounds {
        let sources: Vec<ClientState> = clients[..3].to_vec();
        let refs: Vec<&ClientState> = sources.iter().collect();
        let (a, b) = select_pair(&mut server, &refs).unwrap();
        cross_initialize(&server, &mut clients, (a, b)).unwrap();
        let window = |offset: usize| ProgressWindow {
            start_epoch: elapsed + offset,
            total_epochs: total,
        };
        let phase_rng = |phase: &str, id: usize| derive(seed, &[round as u64, tag(phase), id as u64]);
        for id in [a, b] {
            source_train(&mut clients[id], &hyper, 1, window(0), &mut phase_rng("source", id)).unwrap();
        }
        let g = fedavg(
            &[&clients[a].local_params.generator, &clients[b].local_params.generator],
            &[0.5, 0.5],
        )
        .unwrap();
        for id in [a, b] {
            fine_tune(&mut clients[id], &g, &hyper, 1, window(1), &mut phase_rng("finetune", id)).unwrap();
        }
        let head = fedavg(&[&clients[a].local_params.head, &clients[b].local_params.head], &[0.5, 0.5]).unwrap();
        server.global_params = ModelParams {
            spec: small_spec(),
            generator: g,
            head,
        };
        elapsed += 2;
    }
    assert!(out.params.bit_eq(&server.global_params));
}
