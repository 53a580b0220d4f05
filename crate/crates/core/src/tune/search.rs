//! Random and model-guided schedule search.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::model::{features, CostModel, KnnModel};
use super::{TuneError, Tuner, TuningRecord};
use crate::conv::{schedule_space, ConvWorkload, ScheduleConfig};
use crate::timing::Timer;

/// Probability of measuring a random unmeasured config instead of the
/// model's next pick.
const EPSILON: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct TuneOutcome {
    pub best: TuningRecord,
    /// Every measurement, in the order taken.
    pub trials: Vec<TuningRecord>,
}

/// 1-based index of the first trial whose cost is at most `target`.
pub fn trials_to_reach(trials: &[TuningRecord], target: f64) -> Option<usize> {
    trials.iter().position(|r| r.is_ok() && r.cost() <= target).map(|i| i + 1)
}

fn space_of(wl: &ConvWorkload) -> Result<Vec<ScheduleConfig>, TuneError> {
    wl.validate()?;
    let space = schedule_space(wl);
    if space.is_empty() {
        return Err(TuneError::EmptySpace(wl.key()));
    }
    Ok(space)
}

fn finish(wl: &ConvWorkload, trials: Vec<TuningRecord>) -> Result<TuneOutcome, TuneError> {
    let mut best: Option<&TuningRecord> = None;
    for r in trials.iter().filter(|r| r.is_ok()) {
        if best.is_none_or(|b| r.cost() < b.cost()) {
            best = Some(r);
        }
    }
    let best = best.cloned().ok_or_else(|| TuneError::NoValidConfig(wl.key()))?;
    Ok(TuneOutcome { best, trials })
}

/// Measures `budget` distinct configs drawn uniformly without replacement,
/// or the whole space in enumeration order when the budget covers it.
pub fn tune_random<T: Timer>(
    tuner: &mut Tuner<T>,
    wl: &ConvWorkload,
    budget: usize,
    seed: u64,
) -> Result<TuneOutcome, TuneError> {
    if budget == 0 {
        return Err(TuneError::InvalidArgument("budget must be at least 1".into()));
    }
    let space = space_of(wl)?;
    let picks: Vec<usize> = if budget >= space.len() {
        (0..space.len()).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        sample(&mut rng, space.len(), budget).into_vec()
    };
    let mut trials = Vec::with_capacity(picks.len());
    for i in picks {
        trials.push(tuner.measure(wl, &space[i])?);
    }
    finish(wl, trials)
}

/// Model-guided search with the default k-nearest-neighbour model.
pub fn tune_model<T: Timer>(
    tuner: &mut Tuner<T>,
    wl: &ConvWorkload,
    budget: usize,
    batch: usize,
    seed: u64,
) -> Result<TuneOutcome, TuneError> {
    tune_model_with(tuner, &mut KnnModel::default(), wl, budget, batch, seed)
}

/// Rounds of: fit the model on everything measured, rank the unmeasured
/// configs by predicted cost, and measure the next `batch` of them, each slot
/// replaced by a random unmeasured config with probability 0.1. The first
/// round is random. Never exceeds `budget` measurements.
pub fn tune_model_with<T: Timer, M: CostModel + ?Sized>(
    tuner: &mut Tuner<T>,
    model: &mut M,
    wl: &ConvWorkload,
    budget: usize,
    batch: usize,
    seed: u64,
) -> Result<TuneOutcome, TuneError> {
    if batch == 0 || budget < batch {
        return Err(TuneError::InvalidArgument(format!(
            "need budget >= batch >= 1, got budget {budget}, batch {batch}"
        )));
    }
    let space = space_of(wl)?;
    let budget = budget.min(space.len());
    let feats: Vec<Vec<f64>> = space.iter().map(|c| features(wl, c)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut measured: BTreeSet<usize> = BTreeSet::new();
    let mut samples: Vec<(Vec<f64>, f64)> = Vec::new();
    let mut trials: Vec<TuningRecord> = Vec::new();

    let first: Vec<usize> = sample(&mut rng, space.len(), batch.min(budget)).into_vec();
    let mut round = first;
    loop {
        for i in round {
            let r = tuner.measure(wl, &space[i])?;
            measured.insert(i);
            if r.is_ok() {
                samples.push((feats[i].clone(), r.cost()));
            }
            trials.push(r);
        }
        if trials.len() >= budget {
            break;
        }
        model.fit(&samples);
        let mut ranked: Vec<(f64, usize)> =
            (0..space.len()).filter(|i| !measured.contains(i)).map(|i| (model.predict(&feats[i]), i)).collect();
        ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut pool: Vec<usize> = ranked.into_iter().map(|(_, i)| i).collect();
        let take = batch.min(budget - trials.len());
        round = Vec::with_capacity(take);
        for _ in 0..take {
            let pick = if rng.random_bool(EPSILON) { rng.random_range(0..pool.len()) } else { 0 };
            round.push(pool.remove(pick));
        }
    }
    finish(wl, trials)
}

/// A seeded cost surface over a workload's schedule space: separable and
/// convex in the log of each factor, with a unique optimum of cost 1.0 at a
/// randomly chosen valid config.
pub fn synthetic_surface(wl: &ConvWorkload, seed: u64) -> impl Fn(&ScheduleConfig) -> f64 + Clone + use<> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // separate stream so a search seeded identically is not correlated
    rng.set_stream(1);
    let space = schedule_space(wl);
    let target = if space.is_empty() { ScheduleConfig::default() } else { space[rng.random_range(0..space.len())] };
    let weights: [f64; 4] = core::array::from_fn(|_| rng.random_range(0.5..2.0));
    let unroll_penalty = rng.random_range(0.1..0.5);
    let lg = |x: usize| libm::log2(x.max(1) as f64);
    move |c: &ScheduleConfig| {
        let d = [
            lg(c.oc_split) - lg(target.oc_split),
            lg(c.h_split) - lg(target.h_split),
            lg(c.w_tile) - lg(target.w_tile),
            lg(c.vec) - lg(target.vec),
        ];
        let bowl: f64 = d.iter().zip(&weights).map(|(d, w)| w * d * d).sum();
        let unroll = if (c.unroll > 0) == (target.unroll > 0) { 0.0 } else { unroll_penalty };
        1.0 + bowl + unroll
    }
}
