//! Change-point experiments on labelled data.
//!
//! A delay experiment repeatedly draws a training set and a calibration set
//! from the pre-change population and a test set from the post-change one,
//! fits a conformity measure on the training set, and runs one conformal
//! test martingale over calibration followed by test. The delay is the
//! 1-based position in the test set at which a detector fires; an alarm
//! during calibration gives a delay `<= 0` and no alarm gives `None` (`∞`).
//!
//! Without a post-change population the test set comes from the pre-change
//! one as well (scenario 0), so the whole stream is exchangeable.

use std::fmt;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::betting::{run_martingale, MartingalePath, SimpleJumper, DEFAULT_JUMP_RATE};
use crate::calibration::nearest_rank;
use crate::conformity::{BuiltinScorer, FittedScorer, Observation};
use crate::detectors::{BarrierState, CusumState, DetectorKind, SrState, VilleState};
use crate::error::{Error, Result};
use crate::pvalue::RankState;
use crate::rng::{derive_seed, simulation_rng, SimRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub n_train: usize,
    pub n_calibration: usize,
    pub n_test: usize,
    pub scorer: BuiltinScorer,
    pub detector: DetectorKind,
    /// Threshold `c`, or the slope for the barrier.
    pub threshold: f64,
    pub n_sims: u64,
    pub base_seed: u64,
    pub jump_rate: f64,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        Self {
            n_train: 1000,
            n_calibration: 1000,
            n_test: 1000,
            scorer: BuiltinScorer::NearestDistance,
            detector: DetectorKind::Ville,
            threshold: 100.0,
            n_sims: 100,
            base_seed: 0,
            jump_rate: DEFAULT_JUMP_RATE,
        }
    }
}

impl ExperimentPlan {
    pub fn detector_spec(&self) -> DetectorSpec {
        DetectorSpec {
            kind: self.detector,
            threshold: self.threshold,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_sims == 0 {
            return Err(Error::invalid("n_sims must be positive"));
        }
        if self.n_calibration == 0 && self.n_test == 0 {
            return Err(Error::invalid("empty calibration and test sets"));
        }
        if !(0.0..=1.0).contains(&self.jump_rate) {
            return Err(Error::invalid("jump_rate must be in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorSpec {
    pub kind: DetectorKind,
    pub threshold: f64,
}

impl DetectorSpec {
    pub fn new(kind: DetectorKind, threshold: f64) -> Self {
        Self { kind, threshold }
    }
}

/// One detector running over a martingale path.
enum Running {
    Ville(VilleState),
    Cusum(CusumState),
    Sr(SrState),
    Barrier(CusumState, BarrierState),
}

impl Running {
    fn new(spec: DetectorSpec) -> Result<Self> {
        Ok(match spec.kind {
            DetectorKind::Ville => Self::Ville(VilleState::new(spec.threshold)?),
            DetectorKind::Cusum => Self::Cusum(CusumState::new(spec.threshold)?),
            DetectorKind::ShiryaevRoberts => Self::Sr(SrState::new(spec.threshold)?),
            DetectorKind::Barrier => Self::Barrier(
                CusumState::new(f64::INFINITY)?,
                BarrierState::new(spec.threshold)?,
            ),
        })
    }

    /// Returns the alarm step if this step fires.
    fn step(&mut self, ratio: f64, log_s: f64, n: u64) -> Option<u64> {
        match self {
            Self::Ville(v) => v.step(log_s, n),
            Self::Cusum(c) => c.step_ratio(ratio).1,
            Self::Sr(s) => s.step_ratio(ratio).1,
            Self::Barrier(c, b) => {
                let gamma = c.step_ratio(ratio).0;
                b.step(gamma, n)
            }
        }
        .map(|a| a.step)
    }
}

/// Median and quartiles of delays, with `None` (no alarm) above every
/// finite delay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelaySummary {
    pub detector: DetectorSpec,
    pub n_sims: u64,
    /// `null` stands for no alarm.
    pub median: Option<i64>,
    pub lower_quartile: Option<i64>,
    pub upper_quartile: Option<i64>,
    pub no_alarm_fraction: f64,
    /// Runs that alarmed during calibration.
    pub calibration_alarms: u64,
    pub delays: Vec<Option<i64>>,
}

impl DelaySummary {
    pub fn from_delays(detector: DetectorSpec, delays: Vec<Option<i64>>) -> Result<Self> {
        if delays.is_empty() {
            return Err(Error::Empty("no delays"));
        }
        let mut sorted: Vec<(bool, i64)> = delays
            .iter()
            .map(|d| match d {
                Some(d) => (false, *d),
                None => (true, 0),
            })
            .collect();
        sorted.sort();
        let pick = |q| {
            let (inf, d) = nearest_rank(&sorted, q);
            (!inf).then_some(d)
        };
        let n = delays.len();
        Ok(Self {
            detector,
            n_sims: n as u64,
            median: pick(0.5),
            lower_quartile: pick(0.25),
            upper_quartile: pick(0.75),
            no_alarm_fraction: delays.iter().filter(|d| d.is_none()).count() as f64 / n as f64,
            calibration_alarms: delays
                .iter()
                .filter(|d| matches!(d, Some(x) if *x <= 0))
                .count() as u64,
            delays,
        })
    }
}

fn fmt_delay(d: Option<i64>) -> String {
    d.map_or_else(|| "inf".to_string(), |d| d.to_string())
}

impl fmt::Display for DelaySummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} [{}, {}]",
            fmt_delay(self.median),
            fmt_delay(self.lower_quartile),
            fmt_delay(self.upper_quartile)
        )
    }
}

/// First alarm step of each detector over one stream of scores, of which
/// the first `n_calibration` are the calibration set.
fn delays_on_stream(
    scores: &[f64],
    n_calibration: usize,
    detectors: &[DetectorSpec],
    jump_rate: f64,
    rng: &mut SimRng,
) -> Result<Vec<Option<i64>>> {
    let mut running = detectors
        .iter()
        .map(|&d| Running::new(d))
        .collect::<Result<Vec<_>>>()?;
    let mut fired: Vec<Option<i64>> = vec![None; detectors.len()];
    let mut remaining = detectors.len();
    let mut ranks = RankState::new();
    let mut jumper = SimpleJumper::new(jump_rate)?;
    for (i, &score) in scores.iter().enumerate() {
        let p = ranks
            .push_score(score, rng.random())
            .map_err(|e| Error::at(i, e))?;
        let step = jumper.step(p.value)?;
        let n = jumper.step_count();
        for (r, slot) in running.iter_mut().zip(fired.iter_mut()) {
            if slot.is_none() {
                if let Some(at) = r.step(step.ratio, step.log_capital, n) {
                    *slot = Some(at as i64 - n_calibration as i64);
                    remaining -= 1;
                }
            }
        }
        if remaining == 0 {
            break;
        }
    }
    Ok(fired)
}

fn summarize(
    detectors: &[DetectorSpec],
    per_sim: Vec<Vec<Option<i64>>>,
) -> Result<Vec<DelaySummary>> {
    detectors
        .iter()
        .enumerate()
        .map(|(j, &d)| DelaySummary::from_delays(d, per_sim.iter().map(|s| s[j]).collect()))
        .collect()
}

/// Runs several detectors on the same simulated paths (shared seeds).
pub fn run_delay_experiments(
    plan: &ExperimentPlan,
    detectors: &[DetectorSpec],
    pre: &[Observation],
    post: Option<&[Observation]>,
) -> Result<Vec<DelaySummary>> {
    plan.validate()?;
    for &d in detectors {
        Running::new(d)?;
    }
    let pre_needed =
        plan.n_train + plan.n_calibration + if post.is_none() { plan.n_test } else { 0 };
    if pre.len() < pre_needed {
        return Err(Error::InsufficientData(format!(
            "pre-change population has {} observations, plan needs {pre_needed}",
            pre.len()
        )));
    }
    if let Some(post) = post {
        if post.len() < plan.n_test {
            return Err(Error::InsufficientData(format!(
                "post-change population has {} observations, plan needs {}",
                post.len(),
                plan.n_test
            )));
        }
    }
    if plan.n_train == 0 {
        return Err(Error::InsufficientData("empty training set".into()));
    }
    let per_sim = (0..plan.n_sims)
        .into_par_iter()
        .map(|sim| {
            let mut rng = simulation_rng(plan.base_seed, sim);
            let picked = sample(&mut rng, pre.len(), pre_needed).into_vec();
            let (train_idx, rest) = picked.split_at(plan.n_train);
            let training: Vec<Observation> = train_idx.iter().map(|&i| pre[i].clone()).collect();
            let scorer = FittedScorer::fit(plan.scorer, &training)?;
            let mut stream: Vec<&Observation> = rest.iter().map(|&i| &pre[i]).collect();
            if let Some(post) = post {
                stream.extend(
                    sample(&mut rng, post.len(), plan.n_test)
                        .into_iter()
                        .map(|i| &post[i]),
                );
            }
            let scores = stream
                .iter()
                .map(|o| scorer.score(o))
                .collect::<Result<Vec<_>>>()?;
            delays_on_stream(
                &scores,
                plan.n_calibration,
                detectors,
                plan.jump_rate,
                &mut rng,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    summarize(detectors, per_sim)
}

pub fn run_delay_experiment(
    plan: &ExperimentPlan,
    pre: &[Observation],
    post: Option<&[Observation]>,
) -> Result<DelaySummary> {
    let mut out = run_delay_experiments(plan, &[plan.detector_spec()], pre, post)?;
    Ok(out.remove(0))
}

/// Delay experiment on precomputed conformity scores, e.g. from an external
/// model's predictions. `plan.n_train` and `plan.scorer` are ignored.
pub fn run_score_delay_experiments(
    plan: &ExperimentPlan,
    detectors: &[DetectorSpec],
    pre: &[f64],
    post: Option<&[f64]>,
) -> Result<Vec<DelaySummary>> {
    plan.validate()?;
    for &d in detectors {
        Running::new(d)?;
    }
    let pre_needed = plan.n_calibration + if post.is_none() { plan.n_test } else { 0 };
    if pre.len() < pre_needed || post.is_some_and(|p| p.len() < plan.n_test) {
        return Err(Error::InsufficientData(format!(
            "score populations too small for {} calibration and {} test scores",
            plan.n_calibration, plan.n_test
        )));
    }
    let per_sim = (0..plan.n_sims)
        .into_par_iter()
        .map(|sim| {
            let mut rng = simulation_rng(plan.base_seed, sim);
            let mut scores: Vec<f64> = sample(&mut rng, pre.len(), pre_needed)
                .into_iter()
                .map(|i| pre[i])
                .collect();
            if let Some(post) = post {
                scores.extend(
                    sample(&mut rng, post.len(), plan.n_test)
                        .into_iter()
                        .map(|i| post[i]),
                );
            }
            delays_on_stream(
                &scores,
                plan.n_calibration,
                detectors,
                plan.jump_rate,
                &mut rng,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    summarize(detectors, per_sim)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPath {
    pub fold: usize,
    /// 0: test set from the pre-change population; 1: post-change.
    pub scenario: u8,
    /// Calibration length; the test set starts after this many steps.
    pub change_point: usize,
    pub path: MartingalePath,
}

/// Three-fold martingale paths for both scenarios.
///
/// A random subset of `pre` of the same size as `post` becomes test set 0,
/// `post` (shuffled) is test set 1, and the rest of `pre` is the training
/// set, split into three folds. Fold `k`'s martingale runs over fold `k`
/// (permuted) followed by each test set.
pub fn run_threefold_paths(
    pre: &[Observation],
    post: &[Observation],
    scorer: BuiltinScorer,
    jump_rate: f64,
    seed: u64,
) -> Result<Vec<FoldPath>> {
    let n_test = post.len();
    if n_test == 0 || pre.len() < n_test + 6 {
        return Err(Error::InsufficientData(format!(
            "need a non-empty post-change set and at least {} pre-change observations, got {} and {}",
            n_test + 6,
            pre.len(),
            n_test
        )));
    }
    let mut rng = simulation_rng(seed, 0);
    let mut order: Vec<usize> = (0..pre.len()).collect();
    order.shuffle(&mut rng);
    let (test0_idx, train_idx) = order.split_at(n_test);
    let training: Vec<Observation> = train_idx.iter().map(|&i| pre[i].clone()).collect();
    let test0: Vec<&Observation> = test0_idx.iter().map(|&i| &pre[i]).collect();
    let mut test1: Vec<&Observation> = post.iter().collect();
    test1.shuffle(&mut rng);
    let plan = crate::schedules::make_fold_plan(training.len(), derive_seed(seed, 1))?;

    let per_fold = (1..=plan.folds())
        .into_par_iter()
        .map(|k| {
            let proper: Vec<Observation> = plan
                .training_proper(k)
                .into_iter()
                .map(|i| training[i].clone())
                .collect();
            let fitted = FittedScorer::fit(scorer, &proper)?;
            let calibration = plan
                .calibration_order(k)
                .into_iter()
                .map(|i| fitted.score(&training[i]))
                .collect::<Result<Vec<_>>>()?;
            let mut paths = Vec::with_capacity(2);
            for (scenario, test) in [(0u8, &test0), (1u8, &test1)] {
                let mut rng =
                    simulation_rng(derive_seed(seed, 2), (k as u64) * 2 + scenario as u64);
                let mut ranks = RankState::new();
                let mut pvalues = Vec::with_capacity(calibration.len() + test.len());
                for &s in &calibration {
                    pvalues.push(ranks.push_score(s, rng.random())?.value);
                }
                for o in test.iter() {
                    pvalues.push(ranks.push_score(fitted.score(o)?, rng.random())?.value);
                }
                paths.push(FoldPath {
                    fold: k,
                    scenario,
                    change_point: calibration.len(),
                    path: run_martingale(&pvalues, jump_rate)?,
                });
            }
            Ok(paths)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_fold.into_iter().flatten().collect())
}
