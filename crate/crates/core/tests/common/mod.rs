#![allow(dead_code)]

use fact_core::data::{make_domain, train_test_split, BaseTask, Dataset, DomainSpec, Transform};
use fact_core::federation::{ClientState, ProtocolConfig};
use fact_core::nn::{HyperParams, LayerSpec};
use fact_core::rng::{derive, seeded};
use fact_core::Tensor;
use rand::Rng;

pub fn random_tensor(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap()
}

pub fn domain(name: &str, rotation: f64, n: usize, seed: u64) -> Dataset {
    make_domain(&DomainSpec {
        name: name.into(),
        base: BaseTask::three_class(),
        transform: Transform::rotation(rotation),
        noise_sigma: 0.0,
        n_samples: n,
        seed,
    })
    .unwrap()
}

pub fn small_spec() -> LayerSpec {
    LayerSpec::mlp(2, &[8], &[], 3)
}

/// Three rotated sources and a 30-degree target, 90 samples each.
/// Returns the clients and the labeled target test split.
pub fn small_federation(seed: u64) -> (Vec<ClientState>, Dataset) {
    let spec = small_spec();
    let mut clients = Vec::new();
    for (i, rot) in [0.0, 20.0, 340.0].into_iter().enumerate() {
        clients.push(ClientState::source(i, domain(&format!("s{i}"), rot, 90, seed * 10 + i as u64), &spec).unwrap());
    }
    let t = domain("t", 30.0, 180, seed * 10 + 9);
    let (train, test) = train_test_split(&t, 0.5, &mut derive(seed, &[1])).unwrap();
    clients.push(ClientState::target(3, &train, &spec).unwrap());
    (clients, test)
}

pub fn small_config(variant: &str, seed: u64) -> ProtocolConfig {
    ProtocolConfig {
        rounds: 4,
        epochs_source: 1,
        epochs_finetune: 1,
        epochs_idd: 1,
        variant: variant.into(),
        rng_seed: seed,
        ..Default::default()
    }
}

pub fn small_hyper() -> HyperParams {
    HyperParams {
        eta0: 0.05,
        batch_size: 32,
        ..Default::default()
    }
}

pub fn rng(seed: u64) -> fact_core::rng::Rng {
    seeded(seed)
}
