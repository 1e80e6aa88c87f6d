//! Retraining schedules built from several fold monitors.
//!
//! The training set is split into folds. Fold `k`'s conformity measure is
//! trained on the other folds; its conformal test martingale runs first over
//! fold `k` itself (randomly permuted) and then over the shared test stream.
//! A stage raises an alarm when at least `quorum` folds have crossed that
//! stage's threshold. Per-fold crossings are latched, so the folds need not
//! cross on the same step.
//!
//! * Variable schedule: Ville at `opening_threshold` in the opening,
//!   Shiryaev–Roberts at `endgame_threshold` (typically the target lifespan
//!   `C`) in the endgame.
//! * Fixed schedule: Ville in the opening, CUSUM at `endgame_threshold`
//!   (`f(C)`) in the endgame, and optionally the barrier `gamma_n >= c n` in
//!   the middlegame.
//! * Middlegame-only: the barrier alone.
//!
//! The first alarm of any stage terminates the run; build a new schedule
//! after retraining.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::betting::{SimpleJumper, DEFAULT_JUMP_RATE};
use crate::conformity::{BuiltinScorer, FittedScorer, Observation};
use crate::detectors::{BarrierState, CusumState, DetectorAlarm, SrState, VilleState};
use crate::error::{Error, Result};
use crate::pvalue::RankState;
use crate::rng::{derive_seed, SimRng};

pub const DEFAULT_FOLDS: usize = 3;

/// Assignment of training observations to folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    /// Fold id (1-based) of each training observation.
    pub fold_assignments: Vec<usize>,
    /// Seed used to permute each fold's calibration stream.
    pub fold_seeds: Vec<u64>,
}

impl FoldPlan {
    pub fn folds(&self) -> usize {
        self.fold_seeds.len()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.folds()];
        for &f in &self.fold_assignments {
            sizes[f - 1] += 1;
        }
        sizes
    }

    /// Indices of fold `fold` (1-based), permuted with the fold's seed.
    pub fn calibration_order(&self, fold: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = self
            .fold_assignments
            .iter()
            .enumerate()
            .filter(|(_, &f)| f == fold)
            .map(|(i, _)| i)
            .collect();
        idx.shuffle(&mut SimRng::seed_from_u64(self.fold_seeds[fold - 1]));
        idx
    }

    /// Indices outside fold `fold`, in original order.
    pub fn training_proper(&self, fold: usize) -> Vec<usize> {
        self.fold_assignments
            .iter()
            .enumerate()
            .filter(|(_, &f)| f != fold)
            .map(|(i, _)| i)
            .collect()
    }
}

pub fn make_fold_plan(n_train: usize, seed: u64) -> Result<FoldPlan> {
    make_fold_plan_with(n_train, DEFAULT_FOLDS, seed)
}

/// Random split into `folds` folds whose sizes differ by at most one; the
/// first `n_train % folds` folds get the extra observation.
pub fn make_fold_plan_with(n_train: usize, folds: usize, seed: u64) -> Result<FoldPlan> {
    if folds == 0 {
        return Err(Error::invalid("need at least one fold"));
    }
    if n_train < folds {
        return Err(Error::InsufficientData(format!(
            "{n_train} training observations for {folds} folds"
        )));
    }
    let mut order: Vec<usize> = (0..n_train).collect();
    order.shuffle(&mut SimRng::seed_from_u64(seed));
    let mut fold_assignments = vec![0; n_train];
    for (pos, &i) in order.iter().enumerate() {
        fold_assignments[i] = pos % folds + 1;
    }
    Ok(FoldPlan {
        fold_assignments,
        fold_seeds: (1..=folds as u64).map(|k| derive_seed(seed, k)).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Variable,
    Fixed,
    MiddlegameOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Opening,
    Middlegame,
    Endgame,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Self::Opening => "opening",
            Self::Middlegame => "middlegame",
            Self::Endgame => "endgame",
        }
    }
}

fn default_opening() -> f64 {
    100.0
}
fn default_quorum() -> usize {
    2
}
fn default_folds() -> usize {
    DEFAULT_FOLDS
}
fn default_jump_rate() -> f64 {
    DEFAULT_JUMP_RATE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub kind: ScheduleKind,
    /// Target lifespan `C` of the predictor.
    pub target_lifespan: u64,
    #[serde(default = "default_opening")]
    pub opening_threshold: f64,
    /// `C` for the variable schedule, `f(C)` for the fixed one; `None`
    /// disables the endgame.
    #[serde(default)]
    pub endgame_threshold: Option<f64>,
    /// Per-fold false-alarm probability the endgame threshold was
    /// calibrated to.
    #[serde(default)]
    pub endgame_alpha: Option<f64>,
    #[serde(default)]
    pub middlegame_slope: Option<f64>,
    #[serde(default)]
    pub middlegame_alpha: Option<f64>,
    #[serde(default = "default_quorum")]
    pub quorum: usize,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_jump_rate")]
    pub jump_rate: f64,
}

impl ScheduleConfig {
    pub fn variable(target_lifespan: u64) -> Self {
        Self {
            kind: ScheduleKind::Variable,
            target_lifespan,
            opening_threshold: default_opening(),
            endgame_threshold: Some(target_lifespan as f64),
            endgame_alpha: None,
            middlegame_slope: None,
            middlegame_alpha: None,
            quorum: default_quorum(),
            folds: DEFAULT_FOLDS,
            jump_rate: DEFAULT_JUMP_RATE,
        }
    }

    /// `endgame_threshold` is `f(C)` calibrated to per-fold level
    /// `endgame_alpha`.
    pub fn fixed(target_lifespan: u64, endgame_threshold: f64, endgame_alpha: f64) -> Self {
        Self {
            kind: ScheduleKind::Fixed,
            endgame_threshold: Some(endgame_threshold),
            endgame_alpha: Some(endgame_alpha),
            ..Self::variable(target_lifespan)
        }
    }

    pub fn middlegame_only(target_lifespan: u64, slope: f64, alpha: f64) -> Self {
        Self {
            kind: ScheduleKind::MiddlegameOnly,
            endgame_threshold: None,
            middlegame_slope: Some(slope),
            middlegame_alpha: Some(alpha),
            ..Self::variable(target_lifespan)
        }
    }

    /// Ville alone at `opening_threshold`.
    pub fn opening_only(opening_threshold: f64, folds: usize, quorum: usize) -> Self {
        Self {
            kind: ScheduleKind::Fixed,
            opening_threshold,
            endgame_threshold: None,
            folds,
            quorum,
            ..Self::variable(0)
        }
    }

    pub fn stages(&self) -> Vec<Stage> {
        let mut out = Vec::new();
        if self.kind != ScheduleKind::MiddlegameOnly {
            out.push(Stage::Opening);
        }
        if self.middlegame_slope.is_some() {
            out.push(Stage::Middlegame);
        }
        if self.endgame_threshold.is_some() && self.kind != ScheduleKind::MiddlegameOnly {
            out.push(Stage::Endgame);
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.opening_threshold > 1.0) {
            return Err(Error::invalid("opening_threshold must exceed 1"));
        }
        if let Some(t) = self.endgame_threshold {
            if !(t > 1.0) {
                return Err(Error::invalid("endgame_threshold must exceed 1"));
            }
        }
        if let Some(s) = self.middlegame_slope {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::invalid("middlegame_slope must be positive"));
            }
            if self.kind == ScheduleKind::Variable {
                return Err(Error::Unsupported(
                    "the middlegame barrier needs the CUSUM statistic of the fixed schedule".into(),
                ));
            }
        }
        if self.kind == ScheduleKind::MiddlegameOnly {
            if self.middlegame_slope.is_none() {
                return Err(Error::invalid("middlegame_only needs middlegame_slope"));
            }
            if self.endgame_threshold.is_some() {
                return Err(Error::invalid("middlegame_only takes no endgame_threshold"));
            }
        }
        for (name, a) in [
            ("endgame_alpha", self.endgame_alpha),
            ("middlegame_alpha", self.middlegame_alpha),
        ] {
            if let Some(a) = a {
                if !(a > 0.0 && a < 1.0) {
                    return Err(Error::invalid(format!("{name} must be in (0, 1)")));
                }
            }
        }
        if self.folds == 0 {
            return Err(Error::invalid("folds must be positive"));
        }
        if self.quorum == 0 || self.quorum > self.folds {
            return Err(Error::invalid(format!(
                "quorum {} is outside 1..={}",
                self.quorum, self.folds
            )));
        }
        if !(0.0..=1.0).contains(&self.jump_rate) {
            return Err(Error::invalid("jump_rate must be in [0, 1]"));
        }
        Ok(())
    }
}

/// Union bound on the probability that the schedule ever raises a false
/// alarm: for each stage, `folds * alpha / quorum` (Markov's inequality on
/// the number of firing folds), summed over stages.
///
/// The Ville stage has per-fold level `1 / opening_threshold`. The other
/// stages need their calibrated level; the Shiryaev–Roberts endgame bounds
/// the expected alarm time rather than a probability and is unsupported.
pub fn overall_false_alarm_budget(config: &ScheduleConfig) -> Result<f64> {
    config.validate()?;
    let spread = config.folds as f64 / config.quorum as f64;
    let mut total = 0.0;
    for stage in config.stages() {
        let alpha = match stage {
            Stage::Opening => 1.0 / config.opening_threshold,
            Stage::Middlegame => config.middlegame_alpha.ok_or_else(|| {
                Error::Unsupported("middlegame slope without a calibrated alpha".into())
            })?,
            Stage::Endgame => {
                if config.kind == ScheduleKind::Variable {
                    return Err(Error::Unsupported(
                        "the Shiryaev-Roberts endgame controls lifespan, not a probability".into(),
                    ));
                }
                config.endgame_alpha.ok_or_else(|| {
                    Error::Unsupported("endgame threshold without a calibrated alpha".into())
                })?
            }
        };
        total += spread * alpha;
    }
    Ok(total)
}

/// One fold's crossing, as written to the alarm log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldAlarm {
    pub fold: usize,
    #[serde(flatten)]
    pub alarm: DetectorAlarm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlarmEvent {
    pub stage: Stage,
    /// Step of the fold whose crossing completed the quorum.
    pub step: u64,
    /// That step minus the fold's calibration length: the test-stream
    /// ordinal, or `<= 0` if the quorum was reached during calibration.
    pub delay: i64,
    pub firing_folds: Vec<FoldAlarm>,
}

/// Per-fold statistics after the latest step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FoldSnapshot {
    pub fold: usize,
    pub step: u64,
    pub log10_s: f64,
    pub gamma: f64,
    pub psi: f64,
}

/// Martingale and detector stack for one fold.
#[derive(Debug, Clone)]
pub struct FoldMonitor {
    fold: usize,
    ranks: RankState,
    jumper: SimpleJumper,
    ville: Option<VilleState>,
    cusum: CusumState,
    sr: SrState,
    barrier: Option<BarrierState>,
    calibration_len: u64,
    alarms: Vec<(Stage, DetectorAlarm)>,
}

impl FoldMonitor {
    pub fn new(fold: usize, config: &ScheduleConfig) -> Result<Self> {
        config.validate()?;
        let stages = config.stages();
        let endgame = |kind| {
            if stages.contains(&Stage::Endgame) && config.kind == kind {
                config.endgame_threshold.unwrap_or(f64::INFINITY)
            } else {
                f64::INFINITY
            }
        };
        Ok(Self {
            fold,
            ranks: RankState::new(),
            jumper: SimpleJumper::new(config.jump_rate)?,
            ville: if stages.contains(&Stage::Opening) {
                Some(VilleState::new(config.opening_threshold)?)
            } else {
                None
            },
            cusum: CusumState::new(endgame(ScheduleKind::Fixed))?,
            sr: SrState::new(endgame(ScheduleKind::Variable))?,
            barrier: config.middlegame_slope.map(BarrierState::new).transpose()?,
            calibration_len: 0,
            alarms: Vec::new(),
        })
    }

    pub fn fold(&self) -> usize {
        self.fold
    }

    pub fn step_count(&self) -> u64 {
        self.jumper.step_count()
    }

    pub fn calibration_len(&self) -> u64 {
        self.calibration_len
    }

    /// Latched crossings, in the order they happened.
    pub fn alarms(&self) -> &[(Stage, DetectorAlarm)] {
        &self.alarms
    }

    pub fn fired(&self, stage: Stage) -> Option<&DetectorAlarm> {
        self.alarms
            .iter()
            .find(|(s, _)| *s == stage)
            .map(|(_, a)| a)
    }

    pub fn snapshot(&self) -> FoldSnapshot {
        FoldSnapshot {
            fold: self.fold,
            step: self.step_count(),
            log10_s: self.jumper.log_capital() / std::f64::consts::LN_10,
            gamma: self.cusum.gamma(),
            psi: self.sr.psi(),
        }
    }

    /// Feeds one conformity score with its tie-breaking draw.
    pub fn observe(&mut self, score: f64, tiebreak: f64) -> Result<()> {
        let p = self.ranks.push_score(score, tiebreak)?;
        let step = self.jumper.step(p.value)?;
        let n = self.jumper.step_count();
        if let Some(a) = self
            .ville
            .as_mut()
            .and_then(|v| v.step(step.log_capital, n))
        {
            self.alarms.push((Stage::Opening, a));
        }
        let (gamma, cusum_alarm) = self.cusum.step_ratio(step.ratio);
        let (_, sr_alarm) = self.sr.step_ratio(step.ratio);
        if let Some(a) = self.barrier.as_mut().and_then(|b| b.step(gamma, n)) {
            self.alarms.push((Stage::Middlegame, a));
        }
        if let Some(a) = cusum_alarm.or(sr_alarm) {
            self.alarms.push((Stage::Endgame, a));
        }
        Ok(())
    }

    fn delay_of(&self, alarm: &DetectorAlarm) -> i64 {
        alarm.step as i64 - self.calibration_len as i64
    }
}

/// A running schedule: one monitor per fold plus the quorum coordinator.
#[derive(Debug, Clone)]
pub struct Schedule {
    config: ScheduleConfig,
    monitors: Vec<FoldMonitor>,
    calibrated: bool,
    test_steps: u64,
    events: Vec<AlarmEvent>,
}

impl Schedule {
    pub fn new(config: ScheduleConfig) -> Result<Self> {
        config.validate()?;
        let monitors = (1..=config.folds)
            .map(|k| FoldMonitor::new(k, &config))
            .collect::<Result<_>>()?;
        Ok(Self {
            config,
            monitors,
            calibrated: false,
            test_steps: 0,
            events: Vec::new(),
        })
    }

    pub fn config(&self) -> &ScheduleConfig {
        &self.config
    }

    pub fn monitors(&self) -> &[FoldMonitor] {
        &self.monitors
    }

    pub fn test_steps(&self) -> u64 {
        self.test_steps
    }

    pub fn events(&self) -> &[AlarmEvent] {
        &self.events
    }

    pub fn is_terminated(&self) -> bool {
        !self.events.is_empty()
    }

    pub fn snapshots(&self) -> Vec<FoldSnapshot> {
        self.monitors.iter().map(FoldMonitor::snapshot).collect()
    }

    fn check_running(&self) -> Result<()> {
        if self.is_terminated() {
            Err(Error::Terminated)
        } else {
            Ok(())
        }
    }

    fn monitor_mut(&mut self, fold: usize) -> Result<&mut FoldMonitor> {
        let folds = self.monitors.len();
        self.monitors
            .get_mut(fold.wrapping_sub(1))
            .ok_or_else(|| Error::invalid(format!("fold {fold} is outside 1..={folds}")))
    }

    /// Feeds fold `fold`'s (already permuted) calibration scores.
    pub fn calibrate(&mut self, fold: usize, scores: &[f64], tiebreaks: &[f64]) -> Result<()> {
        if self.calibrated {
            return Err(Error::OutOfSync(
                "calibration after the test stream started".into(),
            ));
        }
        if scores.len() != tiebreaks.len() {
            return Err(Error::DimensionMismatch {
                expected: scores.len(),
                got: tiebreaks.len(),
            });
        }
        let monitor = self.monitor_mut(fold)?;
        for (i, (&s, &t)) in scores.iter().zip(tiebreaks).enumerate() {
            monitor.observe(s, t).map_err(|e| Error::at(i, e))?;
        }
        Ok(())
    }

    /// Feeds every fold's calibration stream, one `(scores, tiebreaks)` pair
    /// per fold, in parallel.
    pub fn calibrate_all(&mut self, streams: &[(Vec<f64>, Vec<f64>)]) -> Result<()> {
        if streams.len() != self.monitors.len() {
            return Err(Error::DimensionMismatch {
                expected: self.monitors.len(),
                got: streams.len(),
            });
        }
        if self.calibrated {
            return Err(Error::OutOfSync(
                "calibration after the test stream started".into(),
            ));
        }
        self.monitors
            .par_iter_mut()
            .zip(streams.par_iter())
            .try_for_each(|(m, (scores, ties))| {
                if scores.len() != ties.len() {
                    return Err(Error::DimensionMismatch {
                        expected: scores.len(),
                        got: ties.len(),
                    });
                }
                for (i, (&s, &t)) in scores.iter().zip(ties).enumerate() {
                    m.observe(s, t).map_err(|e| Error::at(i, e))?;
                }
                Ok(())
            })
    }

    /// Ends calibration and reports any quorum already reached on it.
    pub fn finish_calibration(&mut self) -> Result<Vec<AlarmEvent>> {
        if self.calibrated {
            return Err(Error::OutOfSync("calibration already finished".into()));
        }
        for m in &mut self.monitors {
            m.calibration_len = m.step_count();
        }
        self.calibrated = true;
        Ok(self.evaluate())
    }

    /// Feeds one test observation's score (and tie-break) to every fold.
    pub fn advance(&mut self, scores: &[f64], tiebreaks: &[f64]) -> Result<Vec<AlarmEvent>> {
        if !self.calibrated {
            return Err(Error::OutOfSync(
                "test stream before calibration finished".into(),
            ));
        }
        self.check_running()?;
        let folds = self.monitors.len();
        if scores.len() != folds || tiebreaks.len() != folds {
            return Err(Error::OutOfSync(format!(
                "expected one score and tiebreak per fold ({folds}), got {} and {}",
                scores.len(),
                tiebreaks.len()
            )));
        }
        for (m, (&s, &t)) in self.monitors.iter_mut().zip(scores.iter().zip(tiebreaks)) {
            m.observe(s, t)?;
        }
        self.test_steps += 1;
        for m in &self.monitors {
            if m.step_count() != m.calibration_len + self.test_steps {
                return Err(Error::OutOfSync(format!("fold {} lost a step", m.fold)));
            }
        }
        Ok(self.evaluate())
    }

    fn evaluate(&mut self) -> Vec<AlarmEvent> {
        let mut new = Vec::new();
        for stage in self.config.stages() {
            let mut firing: Vec<(i64, FoldAlarm)> = self
                .monitors
                .iter()
                .filter_map(|m| {
                    m.fired(stage).map(|a| {
                        (
                            m.delay_of(a),
                            FoldAlarm {
                                fold: m.fold,
                                alarm: a.clone(),
                            },
                        )
                    })
                })
                .collect();
            if firing.len() < self.config.quorum {
                continue;
            }
            firing.sort_by_key(|(d, f)| (*d, f.fold));
            let (delay, completing) = &firing[self.config.quorum - 1];
            new.push(AlarmEvent {
                stage,
                step: completing.alarm.step,
                delay: *delay,
                firing_folds: firing.iter().map(|(_, f)| f.clone()).collect(),
            });
        }
        self.events.extend(new.iter().cloned());
        new
    }
}

/// Calibration scores and their tie-breaks for one fold.
type ScoreStream = (Vec<f64>, Vec<f64>);

/// A schedule together with the per-fold conformity measures, fed raw
/// observations.
#[derive(Debug, Clone)]
pub struct ScoredSchedule {
    schedule: Schedule,
    scorers: Vec<FittedScorer>,
    rng: SimRng,
}

impl ScoredSchedule {
    /// Splits `training` into folds, fits fold `k`'s scorer on the other
    /// folds and runs its martingale over fold `k`. Returns any alarms
    /// already raised during calibration.
    pub fn build(
        config: ScheduleConfig,
        training: &[Observation],
        scorer: BuiltinScorer,
        seed: u64,
    ) -> Result<(Self, Vec<AlarmEvent>)> {
        config.validate()?;
        if config.folds < 2 {
            return Err(Error::invalid("scoring needs at least two folds"));
        }
        let plan = make_fold_plan_with(training.len(), config.folds, seed)?;
        let mut schedule = Schedule::new(config)?;
        let folds = plan.folds();
        let fitted: Vec<(FittedScorer, ScoreStream)> = (1..=folds)
            .into_par_iter()
            .map(|k| {
                let proper: Vec<Observation> = plan
                    .training_proper(k)
                    .into_iter()
                    .map(|i| training[i].clone())
                    .collect();
                let fitted = FittedScorer::fit(scorer, &proper)?;
                let order = plan.calibration_order(k);
                let scores = order
                    .iter()
                    .map(|&i| fitted.score(&training[i]))
                    .collect::<Result<Vec<_>>>()?;
                let mut rng = SimRng::seed_from_u64(derive_seed(plan.fold_seeds[k - 1], 0x7E));
                let ties = (0..scores.len()).map(|_| rng.random::<f64>()).collect();
                Ok((fitted, (scores, ties)))
            })
            .collect::<Result<_>>()?;
        let (scorers, streams): (Vec<_>, Vec<_>) = fitted.into_iter().unzip();
        schedule.calibrate_all(&streams)?;
        let events = schedule.finish_calibration()?;
        Ok((
            Self {
                schedule,
                scorers,
                rng: SimRng::seed_from_u64(derive_seed(seed, 0x7E57)),
            },
            events,
        ))
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    pub fn observe(&mut self, obs: &Observation) -> Result<Vec<AlarmEvent>> {
        let scores = self
            .scorers
            .iter()
            .map(|s| s.score(obs))
            .collect::<Result<Vec<_>>>()?;
        let ties: Vec<f64> = (0..scores.len()).map(|_| self.rng.random()).collect();
        self.schedule.advance(&scores, &ties)
    }
}
