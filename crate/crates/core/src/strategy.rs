//! Training variants behind a common trait, looked up by name at runtime.
//!
//! A variant decides what happens between generator aggregation and the
//! next round: whether the two heads are fine-tuned against the averaged
//! generator, whether the target client adapts the generator, and how the
//! final model is chosen. The round skeleton itself lives in
//! [`crate::federation::protocol`].

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::federation::{fine_tune, idd_minimize, ClientState, ProgressWindow, RoundEpochs};
use crate::nn::HyperParams;
use crate::rng::{derive, tag};
use crate::tensor::Tensor;

/// How the final model is picked from a finished run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selection {
    /// Global model of the round with the smallest IDD, earliest on ties.
    MinIdd,
    /// Global model after the last round.
    FinalRound,
}

/// Round-local inputs shared by the strategy hooks.
#[derive(Debug, Clone, Copy)]
pub struct PhaseContext<'a> {
    pub hyper: &'a HyperParams,
    pub round: usize,
    pub seed: u64,
    pub epochs: RoundEpochs,
    pub window: ProgressWindow,
}

impl PhaseContext<'_> {
    pub fn rng(&self, phase: &str, client: usize) -> crate::rng::Rng {
        derive(self.seed, &[self.round as u64, tag(phase), client as u64])
    }
}

pub trait RoundStrategy: Send + Sync {
    fn name(&self) -> &'static str;

    fn description(&self) -> &'static str;

    /// Epochs this variant consumes from the learning-rate schedule in a round.
    fn scheduled_epochs(&self, epochs: RoundEpochs) -> usize;

    /// Called after the generators are averaged. Both clients still hold their
    /// source-trained models. Returns fine-tuning losses when heads were trained.
    fn refine_heads(&self, ctx: &PhaseContext<'_>, pair: &mut [ClientState; 2], generator: &[Tensor]) -> Result<Option<[f64; 2]>>;

    /// Target-side generator update. Returns the generator to broadcast and,
    /// when the target step ran, its final-epoch IDD.
    fn adapt_generator(
        &self,
        ctx: &PhaseContext<'_>,
        target: &mut ClientState,
        generator: Vec<Tensor>,
        heads: [&[Tensor]; 2],
    ) -> Result<(Vec<Tensor>, Option<f64>)>;

    fn selection(&self) -> Selection;
}

fn fine_tune_pair(ctx: &PhaseContext<'_>, pair: &mut [ClientState; 2], generator: &[Tensor]) -> Result<[f64; 2]> {
    let [a, b] = pair;
    let run = |c: &mut ClientState| {
        let mut rng = ctx.rng("finetune", c.id);
        fine_tune(c, generator, ctx.hyper, ctx.epochs.finetune, ctx.window, &mut rng)
    };
    let (la, lb) = rayon::join(|| run(a), || run(b));
    Ok([la?, lb?])
}

fn minimize_idd(
    ctx: &PhaseContext<'_>,
    target: &mut ClientState,
    generator: Vec<Tensor>,
    heads: [&[Tensor]; 2],
) -> Result<(Vec<Tensor>, Option<f64>)> {
    let mut rng = ctx.rng("idd", target.id);
    let (g, idd) = idd_minimize(
        target,
        &generator,
        heads[0],
        heads[1],
        ctx.hyper,
        ctx.epochs.idd,
        ctx.window,
        &mut rng,
    )?;
    Ok((g, Some(idd)))
}

/// Full protocol: fine-tuning plus target IDD minimization.
#[derive(Debug, Default)]
pub struct Fact;

impl RoundStrategy for Fact {
    fn name(&self) -> &'static str {
        "fact"
    }

    fn description(&self) -> &'static str {
        "cross training with head fine-tuning and target IDD minimization"
    }

    fn scheduled_epochs(&self, e: RoundEpochs) -> usize {
        e.source + e.finetune + e.idd
    }

    fn refine_heads(&self, ctx: &PhaseContext<'_>, pair: &mut [ClientState; 2], generator: &[Tensor]) -> Result<Option<[f64; 2]>> {
        fine_tune_pair(ctx, pair, generator).map(Some)
    }

    fn adapt_generator(
        &self,
        ctx: &PhaseContext<'_>,
        target: &mut ClientState,
        generator: Vec<Tensor>,
        heads: [&[Tensor]; 2],
    ) -> Result<(Vec<Tensor>, Option<f64>)> {
        minimize_idd(ctx, target, generator, heads)
    }

    fn selection(&self) -> Selection {
        Selection::MinIdd
    }
}

/// No fine-tuning: the source-trained heads go to the target unchanged.
#[derive(Debug, Default)]
pub struct FactNoFinetune;

impl RoundStrategy for FactNoFinetune {
    fn name(&self) -> &'static str {
        "fact-nf"
    }

    fn description(&self) -> &'static str {
        "cross training without head fine-tuning"
    }

    fn scheduled_epochs(&self, e: RoundEpochs) -> usize {
        e.source + e.idd
    }

    fn refine_heads(&self, _: &PhaseContext<'_>, _: &mut [ClientState; 2], _: &[Tensor]) -> Result<Option<[f64; 2]>> {
        Ok(None)
    }

    fn adapt_generator(
        &self,
        ctx: &PhaseContext<'_>,
        target: &mut ClientState,
        generator: Vec<Tensor>,
        heads: [&[Tensor]; 2],
    ) -> Result<(Vec<Tensor>, Option<f64>)> {
        minimize_idd(ctx, target, generator, heads)
    }

    fn selection(&self) -> Selection {
        Selection::MinIdd
    }
}

/// Control condition: identical rounds with the target step skipped; the last
/// round's model is kept.
#[derive(Debug, Default)]
pub struct SourceOnly;

impl RoundStrategy for SourceOnly {
    fn name(&self) -> &'static str {
        "source-only"
    }

    fn description(&self) -> &'static str {
        "federated source training and fine-tuning without target adaptation"
    }

    fn scheduled_epochs(&self, e: RoundEpochs) -> usize {
        e.source + e.finetune
    }

    fn refine_heads(&self, ctx: &PhaseContext<'_>, pair: &mut [ClientState; 2], generator: &[Tensor]) -> Result<Option<[f64; 2]>> {
        fine_tune_pair(ctx, pair, generator).map(Some)
    }

    fn adapt_generator(
        &self,
        _: &PhaseContext<'_>,
        _: &mut ClientState,
        generator: Vec<Tensor>,
        _: [&[Tensor]; 2],
    ) -> Result<(Vec<Tensor>, Option<f64>)> {
        Ok((generator, None))
    }

    fn selection(&self) -> Selection {
        Selection::FinalRound
    }
}

#[derive(Clone, Default)]
pub struct StrategyRegistry {
    entries: BTreeMap<String, Arc<dyn RoundStrategy>>,
}

impl StrategyRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registry holding `fact`, `fact-nf` and `source-only`.
    pub fn builtin() -> Self {
        let mut r = Self::new();
        r.register(Arc::new(Fact));
        r.register(Arc::new(FactNoFinetune));
        r.register(Arc::new(SourceOnly));
        r
    }

    /// Adds or replaces a strategy under its own name.
    pub fn register(&mut self, strategy: Arc<dyn RoundStrategy>) {
        self.entries.insert(strategy.name().to_string(), strategy);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn RoundStrategy>> {
        let key = name.to_ascii_lowercase().replace('_', "-");
        self.entries.get(&key).cloned().ok_or_else(|| {
            Error::Config(format!(
                "unknown variant '{name}'; available: {}",
                self.names().collect::<Vec<_>>().join(", ")
            ))
        })
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

impl std::fmt::Debug for StrategyRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.names()).finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_lookup() {
        let r = StrategyRegistry::builtin();
        assert_eq!(r.names().collect::<Vec<_>>(), vec!["fact", "fact-nf", "source-only"]);
        assert_eq!(r.get("FACT_NF").unwrap().name(), "fact-nf");
        assert_eq!(r.get("source-only").unwrap().selection(), Selection::FinalRound);
        let err = r.get("mcd").err().unwrap().to_string();
        assert!(err.contains("fact-nf"), "{err}");
    }

    #[test]
    fn schedule_counts_only_active_phases() {
        let e = RoundEpochs {
            source: 2,
            finetune: 3,
            idd: 5,
        };
        assert_eq!(Fact.scheduled_epochs(e), 10);
        assert_eq!(FactNoFinetune.scheduled_epochs(e), 7);
        assert_eq!(SourceOnly.scheduled_epochs(e), 5);
    }
}
