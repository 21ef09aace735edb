//! Individual protocol steps. Each one touches only the partitions it is
//! allowed to change.

use rand::seq::SliceRandom;
use rand::Rng as _;

use super::{ClientId, ClientState, Role, ServerState};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{self, backward, GradTarget, HyperParams, Mode, ModelParams, Objective, Partitions, Sgd};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Position of a training phase inside the global learning-rate schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProgressWindow {
    /// Epochs already elapsed before this phase starts.
    pub start_epoch: usize,
    /// Length of the whole schedule.
    pub total_epochs: usize,
}

impl ProgressWindow {
    pub fn rate(&self, eta0: f64, epoch: usize) -> Result<f64> {
        let p = (self.start_epoch + epoch) as f64 / self.total_epochs.max(1) as f64;
        nn::lr_schedule(eta0, p.min(1.0))
    }
}

/// Draws an unordered pair of distinct source clients uniformly.
pub fn select_pair(server: &mut ServerState, sources: &[&ClientState]) -> Result<(ClientId, ClientId)> {
    select_pair_with(&mut server.pair_rng, sources)
}

pub(crate) fn select_pair_with(rng: &mut Rng, sources: &[&ClientState]) -> Result<(ClientId, ClientId)> {
    if sources.len() < 2 {
        return Err(Error::Config(format!(
            "need at least 2 source clients, got {}; split a single source domain with split_domain",
            sources.len()
        )));
    }
    let n = sources.len();
    let i = rng.random_range(0..n);
    let mut j = rng.random_range(0..n - 1);
    if j >= i {
        j += 1;
    }
    let (a, b) = (sources[i].id, sources[j].id);
    Ok(if a < b { (a, b) } else { (b, a) })
}

/// Copies the global model into both selected clients.
pub fn cross_initialize(server: &ServerState, clients: &mut [ClientState], pair: (ClientId, ClientId)) -> Result<()> {
    if pair.0 == pair.1 {
        return Err(Error::Protocol(format!(
            "pair ({}, {}) is not two distinct clients",
            pair.0, pair.1
        )));
    }
    for id in [pair.0, pair.1] {
        let client = clients
            .iter_mut()
            .find(|c| c.id == id)
            .ok_or_else(|| Error::Protocol(format!("unknown client {id}")))?;
        if client.role != Role::Source {
            return Err(Error::Protocol(format!("client {id} is not a source")));
        }
        if client.local_params.spec != server.global_params.spec {
            return Err(Error::Protocol(format!("client {id} layer spec differs from the global model")));
        }
        client.local_params.clone_from(&server.global_params);
    }
    Ok(())
}

fn batches(n: usize, batch_size: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

/// Mini-batch SGD on cross-entropy over the selected partitions. Returns the
/// sample-weighted mean batch loss of the final epoch.
fn supervised_epochs(
    params: &mut ModelParams,
    data: &Dataset,
    partitions: Partitions,
    hyper: &HyperParams,
    epochs: usize,
    window: ProgressWindow,
    rng: &mut Rng,
) -> Result<f64> {
    hyper.validate()?;
    if epochs == 0 {
        return Err(Error::Config("epoch count must be at least 1".into()));
    }
    if data.is_empty() {
        return Err(Error::Config(format!("client data '{}' is empty", data.domain_tag)));
    }
    let labels = data
        .labels()
        .ok_or_else(|| Error::Config(format!("client data '{}' has no labels", data.domain_tag)))?;
    let mut opt = Sgd::from_hyper(hyper);
    let mut last = f64::NAN;
    for epoch in 0..epochs {
        let rate = window.rate(hyper.eta0, epoch)?;
        let mut total = 0.0;
        for batch in batches(data.len(), hyper.batch_size, rng) {
            let x = data.features().select_rows(&batch);
            let y: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let target = GradTarget {
                objective: Objective::CrossEntropy { labels: &y },
                partitions,
            };
            let (loss, grads) = backward(params, &x, target, Mode::Train(rng))?;
            if !loss.is_finite() {
                return Err(Error::Numerical(format!("non-finite loss on '{}'", data.domain_tag)));
            }
            opt.step(params, &grads, rate, partitions)?;
            total += loss * batch.len() as f64;
        }
        last = total / data.len() as f64;
    }
    Ok(last)
}

/// Trains generator and head on the client's labeled data.
pub fn source_train(client: &mut ClientState, hyper: &HyperParams, epochs: usize, window: ProgressWindow, rng: &mut Rng) -> Result<f64> {
    if client.role != Role::Source {
        return Err(Error::Protocol(format!("client {} is not a source", client.id)));
    }
    supervised_epochs(
        &mut client.local_params,
        &client.dataset,
        Partitions::Both,
        hyper,
        epochs,
        window,
        rng,
    )
}

/// Installs the aggregated generator and trains only the head against it.
pub fn fine_tune(
    client: &mut ClientState,
    frozen_generator: &[Tensor],
    hyper: &HyperParams,
    epochs: usize,
    window: ProgressWindow,
    rng: &mut Rng,
) -> Result<f64> {
    if client.role != Role::Source {
        return Err(Error::Protocol(format!("client {} is not a source", client.id)));
    }
    client.local_params.generator = frozen_generator.to_vec();
    client.local_params.validate()?;
    supervised_epochs(
        &mut client.local_params,
        &client.dataset,
        Partitions::Head,
        hyper,
        epochs,
        window,
        rng,
    )
}

/// Element-wise convex combination of congruent parameter partitions.
pub fn fedavg(parts: &[&[Tensor]], weights: &[f64]) -> Result<Vec<Tensor>> {
    if parts.is_empty() || parts.len() != weights.len() {
        return Err(Error::Input(format!("{} partitions with {} weights", parts.len(), weights.len())));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::Input(format!("weights must be non-negative, got {weights:?}")));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Input(format!("weights sum to {sum}, expected 1")));
    }
    let first = parts[0];
    for p in &parts[1..] {
        if p.len() != first.len() || p.iter().zip(first).any(|(a, b)| a.shape() != b.shape()) {
            return Err(Error::Input("partitions are not shape-congruent".into()));
        }
    }
    let mut out: Vec<Tensor> = first.iter().map(Tensor::zeros_like).collect();
    for (part, &w) in parts.iter().zip(weights) {
        for (o, t) in out.iter_mut().zip(part.iter()) {
            for (ov, tv) in o.values_mut().iter_mut().zip(t.values()) {
                *ov += w * tv;
            }
        }
    }
    Ok(out)
}

/// Updates only the generator to shrink the inter-domain distance between two
/// frozen heads on the unlabeled target data. Returns the new generator and
/// the sample-weighted mean IDD of the final epoch.
#[allow(clippy::too_many_arguments)]
pub fn idd_minimize(
    target: &mut ClientState,
    generator: &[Tensor],
    head1: &[Tensor],
    head2: &[Tensor],
    hyper: &HyperParams,
    epochs: usize,
    window: ProgressWindow,
    rng: &mut Rng,
) -> Result<(Vec<Tensor>, f64)> {
    if target.role != Role::Target {
        return Err(Error::Protocol(format!("client {} is not the target", target.id)));
    }
    hyper.validate()?;
    if epochs == 0 {
        return Err(Error::Config("epoch count must be at least 1".into()));
    }
    let data = &target.dataset;
    if data.is_empty() {
        return Err(Error::Config("target data is empty".into()));
    }
    let mut params = ModelParams {
        spec: target.local_params.spec.clone(),
        generator: generator.to_vec(),
        head: head1.to_vec(),
    };
    params.validate()?;
    let mut opt = Sgd::from_hyper(hyper);
    let mut last = f64::NAN;
    for epoch in 0..epochs {
        let rate = window.rate(hyper.eta0, epoch)?;
        let mut total = 0.0;
        for batch in batches(data.len(), hyper.batch_size, rng) {
            let x = data.features().select_rows(&batch);
            let target_spec = GradTarget {
                objective: Objective::Idd { other_head: head2 },
                partitions: Partitions::Generator,
            };
            let (idd, grads) = backward(&params, &x, target_spec, Mode::Train(rng))?;
            if !idd.is_finite() {
                return Err(Error::Numerical("non-finite IDD on target data".into()));
            }
            opt.step(&mut params, &grads, rate, Partitions::Generator)?;
            total += idd * batch.len() as f64;
        }
        last = total / data.len() as f64;
    }
    target.local_params.generator.clone_from(&params.generator);
    target.local_params.head = head1.to_vec();
    Ok((params.generator, last))
}

/// Fraction of samples whose highest-probability class matches the label;
/// ties resolve to the smallest class index.
pub fn evaluate(params: &ModelParams, data: &Dataset) -> Result<f64> {
    let labels = data.labels().ok_or_else(|| Error::Input("evaluation needs labeled data".into()))?;
    if data.is_empty() {
        return Err(Error::Input("evaluation data is empty".into()));
    }
    let out = nn::forward(params, data.features(), Mode::Eval)?;
    let correct = labels.iter().enumerate().filter(|&(i, &y)| argmax(out.probs.row(i)) == y).count();
    Ok(correct as f64 / labels.len() as f64)
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = k;
        }
    }
    best
}
