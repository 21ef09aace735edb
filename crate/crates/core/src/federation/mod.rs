//! Server/client simulation of federated adversarial cross training.
//!
//! Each round the server samples two source clients, copies the global model
//! into both, lets them train on their labeled data, averages their
//! generators, optionally fine-tunes their heads against the averaged
//! generator, hands generator and both heads to the unlabeled target client
//! to shrink the inter-domain distance, and finally averages the heads.

pub mod history;
pub mod ops;
pub mod protocol;
pub mod snapshot;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{LayerSpec, ModelParams};

pub use ops::{cross_initialize, evaluate, fedavg, fine_tune, idd_minimize, select_pair, source_train, ProgressWindow};
pub use protocol::{run_protocol, run_round, Federation, ProtocolOutcome};

pub type ClientId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Source,
    Target,
}

#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: ClientId,
    pub role: Role,
    pub dataset: Dataset,
    pub local_params: ModelParams,
}

impl ClientState {
    pub fn source(id: ClientId, dataset: Dataset, spec: &LayerSpec) -> Result<Self> {
        if !dataset.is_labeled() {
            return Err(Error::Config(format!("source client {id} needs labeled data")));
        }
        Ok(ClientState {
            id,
            role: Role::Source,
            dataset,
            local_params: ModelParams::zeros(spec)?,
        })
    }

    /// Target clients never see labels; any present are dropped.
    pub fn target(id: ClientId, dataset: &Dataset, spec: &LayerSpec) -> Result<Self> {
        Ok(ClientState {
            id,
            role: Role::Target,
            dataset: dataset.unlabeled(),
            local_params: ModelParams::zeros(spec)?,
        })
    }

    pub fn domain_tag(&self) -> &str {
        &self.dataset.domain_tag
    }
}

/// Per-round telemetry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub pair: (ClientId, ClientId),
    /// Final-epoch mean cross-entropy of each selected source client.
    pub source_losses: [f64; 2],
    /// Final-epoch mean cross-entropy after head fine-tuning; `None` when the
    /// variant skips fine-tuning.
    pub finetune_losses: Option<[f64; 2]>,
    /// Final-epoch mean inter-domain distance on the target; `None` when the
    /// variant has no target step.
    pub idd: Option<f64>,
    /// Accuracy of the aggregated global model on held-out target data.
    pub target_accuracy: Option<f64>,
    /// Accuracy of each individual head on held-out target data.
    pub head_accuracies: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub params: ModelParams,
    pub idd: f64,
    pub round: usize,
}

#[derive(Debug, Clone)]
pub struct ServerState {
    pub global_params: ModelParams,
    /// Rounds completed so far.
    pub round: usize,
    pub history: Vec<RoundRecord>,
    /// Lowest-IDD global model seen so far; earliest round wins ties.
    pub best_snapshot: Option<Snapshot>,
    /// Epochs already consumed from the learning-rate schedule.
    pub epochs_elapsed: usize,
    pub(crate) pair_rng: crate::rng::Rng,
}

impl ServerState {
    pub fn new(global_params: ModelParams, pair_seed: u64) -> Self {
        ServerState {
            global_params,
            round: 0,
            history: Vec::new(),
            best_snapshot: None,
            epochs_elapsed: 0,
            pair_rng: crate::rng::derive(pair_seed, &[crate::rng::tag("pairs")]),
        }
    }

    /// Records a finished round, replacing the snapshot only on a strictly
    /// smaller IDD.
    pub fn record(&mut self, record: RoundRecord, params: &ModelParams) {
        if let Some(idd) = record.idd {
            let better = self.best_snapshot.as_ref().is_none_or(|b| idd < b.idd);
            if better {
                self.best_snapshot = Some(Snapshot {
                    params: params.clone(),
                    idd,
                    round: record.round,
                });
            }
        }
        self.history.push(record);
    }

    /// Bitwise comparison of everything except the rng stream position.
    pub fn same_state(&self, other: &ServerState) -> bool {
        self.global_params.bit_eq(&other.global_params)
            && self.round == other.round
            && self.history == other.history
            && self.epochs_elapsed == other.epochs_elapsed
            && match (&self.best_snapshot, &other.best_snapshot) {
                (None, None) => true,
                (Some(a), Some(b)) => a.params.bit_eq(&b.params) && a.idd.to_bits() == b.idd.to_bits() && a.round == b.round,
                _ => false,
            }
    }
}

/// How the server weights the two clients when averaging.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// One half each.
    #[default]
    Equal,
    /// Proportional to local sample counts.
    SampleSize,
}

/// Epochs spent in each phase of one round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundEpochs {
    pub source: usize,
    pub finetune: usize,
    pub idd: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolConfig {
    pub rounds: usize,
    pub epochs_source: usize,
    pub epochs_finetune: usize,
    pub epochs_idd: usize,
    /// Extra epochs added to every phase of the final round, used when a
    /// fixed epoch budget does not divide evenly across rounds.
    pub final_round_extra: usize,
    /// Registered strategy name, e.g. `fact`, `fact-nf`, `source-only`.
    pub variant: String,
    pub rng_seed: u64,
    pub weighting: Weighting,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            rounds: 30,
            epochs_source: 1,
            epochs_finetune: 1,
            epochs_idd: 1,
            final_round_extra: 0,
            variant: "fact".into(),
            rng_seed: 0,
            weighting: Weighting::Equal,
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::Config("rounds must be at least 1".into()));
        }
        if self.epochs_source == 0 || self.epochs_finetune == 0 || self.epochs_idd == 0 {
            return Err(Error::Config("per-round epoch counts must be at least 1".into()));
        }
        Ok(())
    }

    pub fn epochs_for_round(&self, round: usize) -> RoundEpochs {
        let extra = if round + 1 == self.rounds { self.final_round_extra } else { 0 };
        RoundEpochs {
            source: self.epochs_source + extra,
            finetune: self.epochs_finetune + extra,
            idd: self.epochs_idd + extra,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn remainder_goes_to_final_round() {
        let cfg = ProtocolConfig {
            rounds: 3,
            epochs_source: 33,
            epochs_finetune: 33,
            epochs_idd: 33,
            final_round_extra: 1,
            ..Default::default()
        };
        let src: Vec<usize> = (0..3).map(|r| cfg.epochs_for_round(r).source).collect();
        assert_eq!(src, vec![33, 33, 34]);
    }

    #[test]
    fn zero_epochs_rejected() {
        let cfg = ProtocolConfig {
            epochs_source: 0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = ProtocolConfig {
            rounds: 0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
