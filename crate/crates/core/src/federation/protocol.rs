use std::sync::Arc;

use super::ops::{cross_initialize, evaluate, fedavg, select_pair_with, source_train, ProgressWindow};
use super::{ClientState, ProtocolConfig, Role, RoundRecord, ServerState, Weighting};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{HyperParams, ModelParams};
use crate::rng::{derive, tag};
use crate::strategy::{PhaseContext, RoundStrategy, Selection, StrategyRegistry};

/// Result of a complete run.
#[derive(Debug, Clone)]
pub struct ProtocolOutcome {
    /// Selected final model.
    pub params: ModelParams,
    pub history: Vec<RoundRecord>,
    /// 1-based round that produced `params`.
    pub selected_round: usize,
    pub best_idd: Option<f64>,
}

impl ProtocolOutcome {
    /// Held-out target accuracy recorded for the selected round, if any.
    pub fn selected_accuracy(&self) -> Option<f64> {
        self.history
            .iter()
            .find(|r| r.round == self.selected_round)
            .and_then(|r| r.target_accuracy)
    }
}

/// A federation of source clients and one target client driven by a server.
pub struct Federation {
    pub server: ServerState,
    pub clients: Vec<ClientState>,
    pub config: ProtocolConfig,
    pub hyper: HyperParams,
    strategy: Arc<dyn RoundStrategy>,
    eval: Option<Dataset>,
    total_epochs: usize,
}

impl std::fmt::Debug for Federation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Federation")
            .field("strategy", &self.strategy.name())
            .field("clients", &self.clients.len())
            .field("round", &self.server.round)
            .finish()
    }
}

fn check_clients(clients: &[ClientState]) -> Result<()> {
    let sources = clients.iter().filter(|c| c.role == Role::Source).count();
    let targets = clients.iter().filter(|c| c.role == Role::Target).count();
    if sources < 2 {
        return Err(Error::Config(format!(
            "need at least 2 source clients, got {sources}; split a single source domain with split_domain"
        )));
    }
    if targets != 1 {
        return Err(Error::Config(format!("need exactly 1 target client, got {targets}")));
    }
    let spec = &clients[0].local_params.spec;
    if clients.iter().any(|c| &c.local_params.spec != spec) {
        return Err(Error::Config("clients disagree on the layer spec".into()));
    }
    let mut ids: Vec<_> = clients.iter().map(|c| c.id).collect();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() != clients.len() {
        return Err(Error::Config("client ids must be unique".into()));
    }
    for c in clients {
        match c.role {
            Role::Source if !c.dataset.is_labeled() => return Err(Error::Config(format!("source client {} has unlabeled data", c.id))),
            Role::Target if c.dataset.is_labeled() => return Err(Error::Config(format!("target client {} must not hold labels", c.id))),
            _ if c.dataset.is_empty() => return Err(Error::Config(format!("client {} has no data", c.id))),
            _ => {}
        }
    }
    Ok(())
}

impl Federation {
    /// Resolves the variant through the built-in registry.
    pub fn new(clients: Vec<ClientState>, config: ProtocolConfig, hyper: HyperParams) -> Result<Self> {
        let strategy = StrategyRegistry::builtin().get(&config.variant)?;
        Self::with_strategy(clients, config, hyper, strategy)
    }

    /// Validates the setup and initializes the global model from the run seed.
    pub fn with_strategy(
        clients: Vec<ClientState>,
        config: ProtocolConfig,
        hyper: HyperParams,
        strategy: Arc<dyn RoundStrategy>,
    ) -> Result<Self> {
        config.validate()?;
        hyper.validate()?;
        check_clients(&clients)?;
        let spec = clients[0].local_params.spec.clone();
        let global = ModelParams::init(&spec, &mut derive(config.rng_seed, &[tag("init")]))?;
        let total_epochs = (0..config.rounds)
            .map(|r| strategy.scheduled_epochs(config.epochs_for_round(r)))
            .sum();
        Ok(Federation {
            server: ServerState::new(global, config.rng_seed),
            clients,
            config,
            hyper,
            strategy,
            eval: None,
            total_epochs,
        })
    }

    /// Labeled held-out target data used only for per-round diagnostics.
    pub fn with_eval(mut self, eval: Dataset) -> Self {
        self.eval = Some(eval);
        self
    }

    pub fn strategy(&self) -> &dyn RoundStrategy {
        self.strategy.as_ref()
    }

    pub fn total_epochs(&self) -> usize {
        self.total_epochs
    }

    pub fn source_count(&self) -> usize {
        self.clients.iter().filter(|c| c.role == Role::Source).count()
    }

    /// Executes one round. On error, server and clients are left exactly as
    /// they were before the call.
    pub fn run_round(&mut self) -> Result<&RoundRecord> {
        round_with(
            &mut self.server,
            &mut self.clients,
            &self.config,
            &self.hyper,
            self.strategy.as_ref(),
            self.total_epochs,
            self.eval.as_ref(),
        )?;
        Ok(self.server.history.last().expect("round recorded"))
    }

    /// Runs the remaining rounds and selects the final model.
    pub fn run(mut self) -> Result<ProtocolOutcome> {
        while self.server.round < self.config.rounds {
            self.run_round()?;
        }
        Ok(self.finish())
    }

    fn finish(self) -> ProtocolOutcome {
        let server = self.server;
        match (self.strategy.selection(), server.best_snapshot) {
            (Selection::MinIdd, Some(best)) => ProtocolOutcome {
                params: best.params,
                history: server.history,
                selected_round: best.round,
                best_idd: Some(best.idd),
            },
            _ => ProtocolOutcome {
                params: server.global_params,
                selected_round: server.round,
                best_idd: server.history.iter().filter_map(|r| r.idd).min_by(f64::total_cmp),
                history: server.history,
            },
        }
    }
}

fn pair_weights(weighting: Weighting, a: &ClientState, b: &ClientState) -> [f64; 2] {
    match weighting {
        Weighting::Equal => [0.5, 0.5],
        Weighting::SampleSize => {
            let (na, nb) = (a.dataset.len() as f64, b.dataset.len() as f64);
            [na / (na + nb), nb / (na + nb)]
        }
    }
}

fn round_with(
    server: &mut ServerState,
    clients: &mut [ClientState],
    config: &ProtocolConfig,
    hyper: &HyperParams,
    strategy: &dyn RoundStrategy,
    total_epochs: usize,
    eval: Option<&Dataset>,
) -> Result<()> {
    check_clients(clients)?;
    let mut pair_rng = server.pair_rng.clone();
    let pair = {
        let sources: Vec<&ClientState> = clients.iter().filter(|c| c.role == Role::Source).collect();
        select_pair_with(&mut pair_rng, &sources)?
    };
    let pos = |id| clients.iter().position(|c| c.id == id).expect("selected id exists");
    let (ia, ib) = (pos(pair.0), pos(pair.1));
    let it = clients.iter().position(|c| c.role == Role::Target).expect("validated target");

    // All work happens on copies; nothing is committed until the round succeeds.
    let mut work = [clients[ia].clone(), clients[ib].clone()];
    cross_initialize(server, &mut work, pair)?;

    let epochs = config.epochs_for_round(server.round);
    let start = server.epochs_elapsed;
    let ctx = |offset: usize| PhaseContext {
        hyper,
        round: server.round,
        seed: config.rng_seed,
        epochs,
        window: ProgressWindow {
            start_epoch: start + offset,
            total_epochs,
        },
    };

    let src_ctx = ctx(0);
    let source_losses = {
        let [a, b] = &mut work;
        let train = |c: &mut ClientState| {
            let mut rng = src_ctx.rng("source", c.id);
            source_train(c, hyper, epochs.source, src_ctx.window, &mut rng)
        };
        let (la, lb) = rayon::join(|| train(a), || train(b));
        [la?, lb?]
    };

    let weights = pair_weights(config.weighting, &work[0], &work[1]);
    let generator = fedavg(&[&work[0].local_params.generator, &work[1].local_params.generator], &weights)?;

    let finetune_losses = strategy.refine_heads(&ctx(epochs.source), &mut work, &generator)?;
    let cursor = epochs.source + if finetune_losses.is_some() { epochs.finetune } else { 0 };

    let mut target = clients[it].clone();
    let heads = [work[0].local_params.head.as_slice(), work[1].local_params.head.as_slice()];
    let (generator, idd) = strategy.adapt_generator(&ctx(cursor), &mut target, generator, heads)?;
    let head = fedavg(&heads, &weights)?;

    let global = ModelParams {
        spec: server.global_params.spec.clone(),
        generator,
        head,
    };
    global.validate()?;
    if !global.is_finite() {
        return Err(Error::Numerical(format!(
            "round {} produced non-finite parameters",
            server.round + 1
        )));
    }

    let (target_accuracy, head_accuracies) = match eval {
        Some(ds) => {
            let acc = evaluate(&global, ds)?;
            let mut head_acc = [0.0; 2];
            for (h, w) in head_acc.iter_mut().zip(&work) {
                let p = ModelParams {
                    spec: global.spec.clone(),
                    generator: global.generator.clone(),
                    head: w.local_params.head.clone(),
                };
                *h = evaluate(&p, ds)?;
            }
            (Some(acc), Some(head_acc))
        }
        None => (None, None),
    };

    let record = RoundRecord {
        round: server.round + 1,
        pair,
        source_losses,
        finetune_losses,
        idd,
        target_accuracy,
        head_accuracies,
    };

    let [a, b] = work;
    clients[ia] = a;
    clients[ib] = b;
    clients[it] = target;
    server.pair_rng = pair_rng;
    server.epochs_elapsed += strategy.scheduled_epochs(epochs);
    server.round += 1;
    server.record(record, &global);
    server.global_params = global;
    Ok(())
}

/// Runs a single round with the variant named in `config`, returning its record.
pub fn run_round(
    server: &mut ServerState,
    clients: &mut [ClientState],
    config: &ProtocolConfig,
    hyper: &HyperParams,
) -> Result<RoundRecord> {
    config.validate()?;
    hyper.validate()?;
    let strategy = StrategyRegistry::builtin().get(&config.variant)?;
    let total = (0..config.rounds)
        .map(|r| strategy.scheduled_epochs(config.epochs_for_round(r)))
        .sum();
    round_with(server, clients, config, hyper, strategy.as_ref(), total, None)?;
    Ok(server.history.last().cloned().expect("round recorded"))
}

/// Runs all rounds and returns the selected model with the full history.
pub fn run_protocol(clients: Vec<ClientState>, config: &ProtocolConfig, hyper: &HyperParams) -> Result<ProtocolOutcome> {
    Federation::new(clients, config.clone(), *hyper)?.run()
}
