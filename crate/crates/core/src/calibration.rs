//! Threshold calibration by simulation in the ideal setting.
//!
//! In the ideal setting the p-values are IID uniform, so the Simple Jumper
//! runs on `rng.random::<f64>()` directly with no data in the loop. Each
//! simulation draws from its own [`simulation_rng`] stream and results are
//! collected in simulation order, so reports are reproducible bit for bit
//! regardless of the thread count.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::betting::{SimpleJumper, DEFAULT_JUMP_RATE};
use crate::error::{Error, Result};
use crate::rng::simulation_rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdealSimulation {
    pub n_steps: u64,
    pub n_sims: u64,
    pub base_seed: u64,
    pub jump_rate: f64,
}

impl IdealSimulation {
    pub fn new(n_steps: u64, n_sims: u64, base_seed: u64) -> Self {
        Self {
            n_steps,
            n_sims,
            base_seed,
            jump_rate: DEFAULT_JUMP_RATE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_sims == 0 {
            return Err(Error::invalid("n_sims must be positive"));
        }
        if !(0.0..=1.0).contains(&self.jump_rate) {
            return Err(Error::invalid(format!(
                "jump rate {} is outside [0, 1]",
                self.jump_rate
            )));
        }
        Ok(())
    }

    fn par_map<T, F>(&self, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(u64) -> T + Sync + Send,
    {
        (0..self.n_sims).into_par_iter().map(f).collect()
    }
}

/// Runs one ideal-setting path, calling `visit(n, S_n / S_{n-1})` for
/// `n = 1..=max_steps` until it returns `false`. Returns `(steps run, ln S)`.
fn ideal_path<F>(sim: &IdealSimulation, index: u64, max_steps: u64, mut visit: F) -> (u64, f64)
where
    F: FnMut(u64, f64) -> bool,
{
    let mut rng = simulation_rng(sim.base_seed, index);
    let mut jumper = SimpleJumper::new(sim.jump_rate).expect("validated jump rate");
    let mut log_s = 0.0;
    // product of at most 256 ratios in [0.5, 1.5] stays within f64 range
    let mut block = 1.0;
    let mut n = 0;
    while n < max_steps {
        n += 1;
        let ratio = jumper.bet(rng.random::<f64>());
        block *= ratio;
        if n % 256 == 0 {
            log_s += block.ln();
            block = 1.0;
        }
        if !visit(n, ratio) {
            break;
        }
    }
    log_s += block.ln();
    (n, log_s)
}

/// Maximum of the CUSUM statistic over `n = 1..=n_steps` for each
/// simulation (`gamma_0 = 0` when `n_steps = 0`).
pub fn simulate_cusum_max(sim: &IdealSimulation) -> Result<Vec<f64>> {
    sim.validate()?;
    Ok(sim.par_map(|i| {
        let mut gamma: f64 = 0.0;
        let mut max = 0.0;
        ideal_path(sim, i, sim.n_steps, |_, r| {
            gamma = r * gamma.max(1.0);
            if gamma > max {
                max = gamma;
            }
            true
        });
        max
    }))
}

/// Number of simulations whose capital reaches `threshold` within
/// `n_steps`.
pub fn simulate_ville_alarms(sim: &IdealSimulation, threshold: f64) -> Result<u64> {
    sim.validate()?;
    if !(threshold > 1.0) {
        return Err(Error::invalid("Ville threshold must exceed 1"));
    }
    let log_c = threshold.ln();
    let hits = sim.par_map(|i| {
        let mut log_s = 0.0;
        let mut hit = false;
        ideal_path(sim, i, sim.n_steps, |_, r| {
            log_s += r.ln();
            hit = log_s >= log_c;
            !hit
        });
        hit
    });
    Ok(hits.into_iter().filter(|&h| h).count() as u64)
}

pub fn alarm_count(values: &[f64], threshold: f64) -> u64 {
    values.iter().filter(|&&v| v >= threshold).count() as u64
}

/// Smallest candidate `c` with `#{v >= c} <= floor(alpha n)`.
///
/// Candidates are the sample values. If none qualifies the result is just
/// above the sample maximum.
fn smallest_safe_threshold(values: &[f64], alpha: f64) -> f64 {
    let n = values.len();
    // tolerate representation error in alpha * n, e.g. 0.07 * 100
    let allowed = ((alpha * n as f64) + 1e-9).floor() as usize;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    if allowed == 0 {
        return sorted[n - 1].next_up();
    }
    // `#{v >= sorted[k]}` is at least `n - k`; walk down from the top order
    // statistic allowed by the count, stepping over ties
    let mut k = n - allowed;
    while k > 0 && sorted[k - 1] == sorted[k] {
        k += 1;
        if k == n {
            return sorted[n - 1].next_up();
        }
    }
    sorted[k]
}

/// Candidate `f(C)`: the smallest sample value at which at most a fraction
/// `alpha` of the simulated maxima would alarm.
///
/// For sorted distinct values this is the order statistic at 1-based index
/// `n - floor(alpha n) + 1`, e.g. the largest of 100 values for
/// `alpha = 0.01`.
pub fn threshold_for_alpha(maxima: &[f64], alpha: f64) -> Result<f64> {
    if maxima.is_empty() {
        return Err(Error::Empty("no simulated maxima"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha {alpha} is outside (0, 1)")));
    }
    Ok(smallest_safe_threshold(maxima, alpha))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinomialCI {
    pub successes: u64,
    pub trials: u64,
    pub level: f64,
    pub lower: f64,
    pub upper: f64,
}

impl BinomialCI {
    pub fn contains(&self, p: f64) -> bool {
        self.lower <= p && p <= self.upper
    }
}

/// `x` with `I_x(a, b) = q`, by bisection on the regularized incomplete beta.
fn beta_inv(q: f64, a: f64, b: f64) -> f64 {
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if beta_reg(a, b, mid) < q {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Exact (Clopper–Pearson) two-sided interval for a binomial proportion.
pub fn clopper_pearson(x: u64, n: u64, level: f64) -> Result<BinomialCI> {
    if n == 0 || x > n {
        return Err(Error::invalid(format!(
            "need 0 <= x <= n and n > 0, got x={x}, n={n}"
        )));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid(format!(
            "confidence level {level} is outside (0, 1)"
        )));
    }
    let alpha = 1.0 - level;
    let (xf, nf) = (x as f64, n as f64);
    let lower = if x == 0 {
        0.0
    } else {
        beta_inv(alpha / 2.0, xf, nf - xf + 1.0)
    };
    let upper = if x == n {
        1.0
    } else {
        beta_inv(1.0 - alpha / 2.0, xf + 1.0, nf - xf)
    };
    Ok(BinomialCI {
        successes: x,
        trials: n,
        level,
        lower,
        upper,
    })
}

/// False-alarm count and exact interval for one candidate threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateCheck {
    pub threshold: f64,
    pub alarms: u64,
    pub fraction: f64,
    pub interval: BinomialCI,
    /// The interval lies inside `[0, alpha]`.
    pub valid: bool,
}

pub fn check_candidates(
    statistics: &[f64],
    candidates: &[f64],
    alpha: f64,
    level: f64,
) -> Result<Vec<CandidateCheck>> {
    if statistics.is_empty() {
        return Err(Error::Empty("no simulated statistics"));
    }
    let n = statistics.len() as u64;
    candidates
        .iter()
        .map(|&c| {
            let alarms = alarm_count(statistics, c);
            let interval = clopper_pearson(alarms, n, level)?;
            Ok(CandidateCheck {
                threshold: c,
                alarms,
                fraction: alarms as f64 / n as f64,
                interval,
                valid: interval.upper <= alpha,
            })
        })
        .collect()
}

/// Per-path `max_{n <= N} gamma_n / n` at each horizon `N`.
pub fn simulate_barrier_maxima(sim: &IdealSimulation, horizons: &[u64]) -> Result<Vec<Vec<f64>>> {
    sim.validate()?;
    if horizons.is_empty() {
        return Err(Error::Empty("no horizons"));
    }
    if horizons.windows(2).any(|w| w[0] >= w[1]) || horizons[0] == 0 {
        return Err(Error::invalid("horizons must be positive and increasing"));
    }
    let last = *horizons.last().expect("non-empty");
    Ok(sim.par_map(|i| {
        let mut gamma: f64 = 0.0;
        let mut max_ratio = 0.0;
        let mut out = Vec::with_capacity(horizons.len());
        let mut next = 0;
        ideal_path(sim, i, last, |n, r| {
            gamma = r * gamma.max(1.0);
            let per_step = gamma / n as f64;
            if per_step > max_ratio {
                max_ratio = per_step;
            }
            if n == horizons[next] {
                out.push(max_ratio);
                next += 1;
            }
            true
        });
        out
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HorizonSlope {
    pub horizon: u64,
    pub slope: f64,
}

/// Smallest double `c >= 0` with `#{v >= c} <= floor(alpha n)`: zero if
/// that is already safe, otherwise just above the `(floor(alpha n) + 1)`-th
/// largest value.
///
/// Being a function of a single order statistic, it is monotone in the
/// values and in `alpha`, including when many values tie (every barrier
/// maximum is at least `gamma_1 / 1 = 1`).
fn infimum_safe_threshold(values: &[f64], alpha: f64) -> f64 {
    let n = values.len();
    let allowed = ((alpha * n as f64) + 1e-9).floor() as usize;
    if alarm_count(values, 0.0) as usize <= allowed {
        return 0.0;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted[n - allowed - 1].next_up()
}

/// `c_N` for each horizon: the smallest slope at which at most a fraction
/// `alpha` of paths cross `gamma_n >= c n` for some `n <= N`. With
/// `alpha = 1` every path may alarm and the slope is 0.
pub fn barrier_slopes_from_maxima(
    horizons: &[u64],
    maxima: &[Vec<f64>],
    alpha: f64,
) -> Result<Vec<HorizonSlope>> {
    if maxima.is_empty() {
        return Err(Error::Empty("no simulated paths"));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::invalid(format!("alpha {alpha} is outside (0, 1]")));
    }
    horizons
        .iter()
        .enumerate()
        .map(|(h, &horizon)| {
            let column: Vec<f64> = maxima
                .iter()
                .map(|m| m.get(h).copied().ok_or(Error::Empty("horizon missing")))
                .collect::<Result<_>>()?;
            Ok(HorizonSlope {
                horizon,
                slope: infimum_safe_threshold(&column, alpha),
            })
        })
        .collect()
}

pub fn simulate_barrier_slopes(
    sim: &IdealSimulation,
    horizons: &[u64],
    alpha: f64,
) -> Result<Vec<HorizonSlope>> {
    let maxima = simulate_barrier_maxima(sim, horizons)?;
    barrier_slopes_from_maxima(horizons, &maxima, alpha)
}

/// Nearest-rank percentile of sorted data: 1-based index `ceil(q n)`.
pub fn nearest_rank<T: Copy>(sorted: &[T], q: f64) -> T {
    let n = sorted.len();
    let idx = ((q * n as f64) - 1e-9).ceil().max(1.0) as usize;
    sorted[idx.min(n) - 1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LifespanSummary {
    pub threshold: f64,
    pub n_sims: u64,
    pub cap: u64,
    pub censored: u64,
    /// Censored runs enter at the cap, making this a lower bound when
    /// `censored > 0`.
    pub mean: f64,
    pub sd: f64,
    pub median: f64,
    pub lower_quartile: f64,
    pub upper_quartile: f64,
}

/// Alarm time `min{n : psi_n >= threshold}` of the Shiryaev–Roberts
/// procedure per simulation, `None` if it does not fire within `cap`.
pub fn simulate_sr_alarm_times(
    sim: &IdealSimulation,
    threshold: f64,
    cap: u64,
) -> Result<Vec<Option<u64>>> {
    sim.validate()?;
    if !(threshold > 0.0 && threshold.is_finite()) {
        return Err(Error::invalid(format!(
            "SR threshold {threshold} must be positive"
        )));
    }
    Ok(sim.par_map(|i| {
        let mut psi = 0.0;
        let mut fired = None;
        ideal_path(sim, i, cap, |n, r| {
            psi = r * (psi + 1.0);
            if psi >= threshold {
                fired = Some(n);
                false
            } else {
                true
            }
        });
        fired
    }))
}

/// Cap on simulated SR alarm times: `20 threshold` steps.
pub fn lifespan_cap(threshold: f64) -> u64 {
    (20.0 * threshold).ceil().max(1.0) as u64
}

/// Summary of alarm times, with censored runs entered at `cap`.
pub fn summarize_lifespans(
    threshold: f64,
    cap: u64,
    times: &[Option<u64>],
) -> Result<LifespanSummary> {
    if times.is_empty() {
        return Err(Error::Empty("no alarm times"));
    }
    let censored = times.iter().filter(|t| t.is_none()).count() as u64;
    let mut values: Vec<f64> = times.iter().map(|t| t.unwrap_or(cap) as f64).collect();
    values.sort_by(f64::total_cmp);
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    Ok(LifespanSummary {
        threshold,
        n_sims: times.len() as u64,
        cap,
        censored,
        mean,
        sd,
        median: nearest_rank(&values, 0.5),
        lower_quartile: nearest_rank(&values, 0.25),
        upper_quartile: nearest_rank(&values, 0.75),
    })
}

/// Lifespan statistics of the Shiryaev–Roberts procedure; the simulation's
/// `n_steps` is ignored in favour of [`lifespan_cap`].
pub fn sr_lifespan_stats(sim: &IdealSimulation, threshold: f64) -> Result<LifespanSummary> {
    let cap = lifespan_cap(threshold);
    let times = simulate_sr_alarm_times(sim, threshold, cap)?;
    summarize_lifespans(threshold, cap, &times)
}

/// `log10 S_{n_steps}` for each simulation.
pub fn simulate_final_log10(sim: &IdealSimulation) -> Result<Vec<f64>> {
    sim.validate()?;
    Ok(sim.par_map(|i| ideal_path(sim, i, sim.n_steps, |_, _| true).1 / std::f64::consts::LN_10))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecaySummary {
    pub n_steps: u64,
    pub n_sims: u64,
    pub median_log10: f64,
    pub lower_quartile_log10: f64,
    pub upper_quartile_log10: f64,
    /// `median_log10 / n_steps` (0 when `n_steps = 0`).
    pub per_step_log10: f64,
}

pub fn decay_summary(n_steps: u64, finals: &[f64]) -> Result<DecaySummary> {
    if finals.is_empty() {
        return Err(Error::Empty("no simulated finals"));
    }
    let mut sorted = finals.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = nearest_rank(&sorted, 0.5);
    Ok(DecaySummary {
        n_steps,
        n_sims: finals.len() as u64,
        median_log10: median,
        lower_quartile_log10: nearest_rank(&sorted, 0.25),
        upper_quartile_log10: nearest_rank(&sorted, 0.75),
        per_step_log10: if n_steps == 0 {
            0.0
        } else {
            median / n_steps as f64
        },
    })
}

pub fn jumper_decay_stats(sim: &IdealSimulation) -> Result<DecaySummary> {
    decay_summary(sim.n_steps, &simulate_final_log10(sim)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    CusumMaxPercentile,
    BarrierSlope,
    SrAlarmTime,
    JumperFinalCapital,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Percentile {
    pub level: f64,
    pub value: f64,
}

/// Everything a `calibrate` run reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub quantity: Quantity,
    pub simulation: IdealSimulation,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    /// `f(C)` for CUSUM maxima.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub percentiles: Vec<Percentile>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub candidates: Vec<CandidateCheck>,
    /// Number of candidates examined; a multiple-testing correction over
    /// them is left to the reader.
    pub candidate_count: usize,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub slopes: Vec<HorizonSlope>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lifespan: Option<LifespanSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decay: Option<DecaySummary>,
}

impl CalibrationReport {
    pub fn new(quantity: Quantity, simulation: IdealSimulation) -> Self {
        Self {
            quantity,
            simulation,
            alpha: None,
            threshold: None,
            percentiles: Vec::new(),
            candidates: Vec::new(),
            candidate_count: 0,
            slopes: Vec::new(),
            lifespan: None,
            decay: None,
        }
    }
}

pub fn percentiles(values: &[f64], levels: &[f64]) -> Vec<Percentile> {
    if values.is_empty() {
        return Vec::new();
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    levels
        .iter()
        .map(|&level| Percentile {
            level,
            value: nearest_rank(&sorted, level),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    /// Binomial pmf sum, evaluated in log space term by term.
    fn binom_cdf(k: i64, n: u64, p: f64) -> f64 {
        if k < 0 {
            return 0.0;
        }
        let ln_choose = |n: u64, k: u64| -> f64 {
            (1..=k)
                .map(|i| ((n - k + i) as f64).ln() - (i as f64).ln())
                .sum()
        };
        (0..=(k as u64).min(n))
            .map(|i| {
                let t = ln_choose(n, i)
                    + if i == 0 { 0.0 } else { i as f64 * p.ln() }
                    + if i == n {
                        0.0
                    } else {
                        (n - i) as f64 * (1.0 - p).ln()
                    };
                t.exp()
            })
            .sum()
    }

    /// Clopper–Pearson endpoints by bisection on binomial tails.
    fn cp_oracle(x: u64, n: u64, level: f64) -> (f64, f64) {
        let a = (1.0 - level) / 2.0;
        let solve = |f: &dyn Fn(f64) -> f64| {
            // f is increasing in p
            let (mut lo, mut hi) = (0.0, 1.0);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if f(mid) < 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        };
        let lower = if x == 0 {
            0.0
        } else {
            // P(X >= x; p) = a
            solve(&|p| (1.0 - binom_cdf(x as i64 - 1, n, p)) - a)
        };
        let upper = if x == n {
            1.0
        } else {
            // P(X <= x; p) = a, decreasing in p
            solve(&|p| a - binom_cdf(x as i64, n, p))
        };
        (lower, upper)
    }

    #[test]
    fn cp_boundaries() {
        let ci = clopper_pearson(0, 10, 0.95).unwrap();
        assert_eq!(ci.lower, 0.0);
        let ci = clopper_pearson(10, 10, 0.95).unwrap();
        assert_eq!(ci.upper, 1.0);
        assert!(clopper_pearson(11, 10, 0.95).is_err());
        assert!(clopper_pearson(1, 0, 0.95).is_err());
        assert!(clopper_pearson(1, 10, 1.0).is_err());
    }

    #[test]
    fn cp_reported_rows() {
        let pct = |ci: BinomialCI| {
            (
                format!("{:.2}", 100.0 * ci.lower),
                format!("{:.2}", 100.0 * ci.upper),
            )
        };
        assert_eq!(
            pct(clopper_pearson(820, 100_000, 0.999).unwrap()),
            ("0.73".into(), "0.92".into())
        );
        assert_eq!(
            pct(clopper_pearson(988, 100_000, 0.999).unwrap()),
            ("0.89".into(), "1.10".into())
        );
    }

    #[test]
    fn cp_widens_with_level() {
        let a = clopper_pearson(30, 200, 0.9).unwrap();
        let b = clopper_pearson(30, 200, 0.99).unwrap();
        assert!(b.lower < a.lower && b.upper > a.upper);
        assert!(a.contains(30.0 / 200.0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(50))]
        #[test]
        fn cp_matches_binomial_tail_oracle(n in 1u64..=30, frac in 0.0f64..=1.0, level in 0.5f64..0.999) {
            let x = (frac * n as f64).round() as u64;
            let ci = clopper_pearson(x, n, level).unwrap();
            let (lo, hi) = cp_oracle(x, n, level);
            prop_assert!((ci.lower - lo).abs() < 1e-8, "lower {} vs {}", ci.lower, lo);
            prop_assert!((ci.upper - hi).abs() < 1e-8, "upper {} vs {}", ci.upper, hi);
        }

        #[test]
        fn threshold_is_self_consistent(values in prop::collection::vec(0u32..50, 1..300), alpha in 0.001f64..0.999) {
            let values: Vec<f64> = values.into_iter().map(f64::from).collect();
            let t = threshold_for_alpha(&values, alpha).unwrap();
            let frac = alarm_count(&values, t) as f64 / values.len() as f64;
            prop_assert!(frac <= alpha + 1e-12);
            // any smaller sample value would alarm too often
            for &v in values.iter().filter(|&&v| v < t) {
                prop_assert!(alarm_count(&values, v) as f64 / values.len() as f64 > alpha);
            }
        }
    }

    #[test]
    fn threshold_conventions() {
        let values: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(threshold_for_alpha(&values, 0.01).unwrap(), 100.0);
        assert_eq!(threshold_for_alpha(&values, 0.5).unwrap(), 51.0);
        assert_eq!(
            threshold_for_alpha(&values, 0.001).unwrap(),
            100.0f64.next_up()
        );
        assert!(threshold_for_alpha(&[], 0.01).is_err());
        assert!(threshold_for_alpha(&values, 0.0).is_err());
    }

    #[test]
    fn cusum_max_trivial_horizons() {
        let sim = IdealSimulation::new(0, 5, 1);
        assert_eq!(simulate_cusum_max(&sim).unwrap(), vec![0.0; 5]);
        let sim = IdealSimulation::new(1, 5, 1);
        for m in simulate_cusum_max(&sim).unwrap() {
            assert!((m - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn simulations_are_reproducible() {
        let sim = IdealSimulation::new(2000, 8, 99);
        assert_eq!(
            simulate_cusum_max(&sim).unwrap(),
            simulate_cusum_max(&sim).unwrap()
        );
        let other = IdealSimulation {
            base_seed: 100,
            ..sim
        };
        assert_ne!(
            simulate_cusum_max(&sim).unwrap(),
            simulate_cusum_max(&other).unwrap()
        );
    }

    #[test]
    fn ideal_path_log_capital_matches_jumper() {
        let sim = IdealSimulation::new(5000, 1, 4);
        let (_, fast) = ideal_path(&sim, 0, 5000, |_, _| true);
        let mut rng = simulation_rng(4, 0);
        let mut j = SimpleJumper::new(0.01).unwrap();
        for _ in 0..5000 {
            j.step(rng.random::<f64>()).unwrap();
        }
        assert!((fast - j.log_capital()).abs() < 1e-9);
    }

    #[test]
    fn barrier_alpha_one_gives_zero() {
        let sim = IdealSimulation::new(0, 20, 3);
        let horizons = [100, 200, 300];
        let sim = IdealSimulation {
            n_steps: 300,
            ..sim
        };
        let slopes = simulate_barrier_slopes(&sim, &horizons, 1.0).unwrap();
        assert!(slopes.iter().all(|s| s.slope == 0.0));
        assert!(simulate_barrier_slopes(&sim, &[200, 100], 0.1).is_err());
    }

    #[test]
    fn barrier_slopes_monotone() {
        let sim = IdealSimulation::new(20_000, 200, 5);
        let horizons: Vec<u64> = (1..=20).map(|k| k * 1000).collect();
        let maxima = simulate_barrier_maxima(&sim, &horizons).unwrap();
        let s1 = barrier_slopes_from_maxima(&horizons, &maxima, 0.01).unwrap();
        let s2 = barrier_slopes_from_maxima(&horizons, &maxima, 0.02).unwrap();
        for w in s1.windows(2) {
            assert!(w[0].slope <= w[1].slope);
        }
        for (a, b) in s1.iter().zip(&s2) {
            assert!(a.slope >= b.slope);
        }
    }

    #[test]
    fn barrier_slopes_with_ties_at_one() {
        // 95 paths stuck at the structural value 1; the rest rise with N
        let horizons = [10, 20];
        let mut maxima = vec![vec![1.0, 1.0]; 95];
        maxima.extend(
            [
                [1.0, 1.03],
                [1.0, 1.04],
                [1.0, 1.05],
                [1.0, 1.06],
                [1.13, 1.2],
            ]
            .map(Vec::from),
        );
        let s = barrier_slopes_from_maxima(&horizons, &maxima, 0.05).unwrap();
        assert_eq!(s[0].slope, 1.0f64.next_up());
        assert_eq!(s[1].slope, 1.0f64.next_up());
        let s = barrier_slopes_from_maxima(&horizons, &maxima, 0.02).unwrap();
        assert_eq!(s[0].slope, 1.0f64.next_up());
        assert_eq!(s[1].slope, 1.05f64.next_up());
    }

    proptest! {
        #[test]
        fn barrier_slopes_monotone_and_safe(
            paths in prop::collection::vec((0u8..4, 0u8..4, 0u8..4), 1..60),
            alpha in 0.01f64..1.0,
        ) {
            // coarse values force ties; columns are nondecreasing per path
            let maxima: Vec<Vec<f64>> = paths
                .iter()
                .map(|&(a, b, c)| {
                    let x = 1.0 + f64::from(a) / 4.0;
                    vec![x, x + f64::from(b) / 4.0, x + f64::from(b + c) / 4.0]
                })
                .collect();
            let horizons = [1, 2, 3];
            let lo = barrier_slopes_from_maxima(&horizons, &maxima, alpha).unwrap();
            let hi = barrier_slopes_from_maxima(&horizons, &maxima, (alpha * 1.5).min(1.0)).unwrap();
            let allowed = (alpha * maxima.len() as f64 + 1e-9).floor() as u64;
            for h in 0..3 {
                let column: Vec<f64> = maxima.iter().map(|m| m[h]).collect();
                prop_assert!(alarm_count(&column, lo[h].slope) <= allowed);
                prop_assert!(hi[h].slope <= lo[h].slope);
                if h > 0 {
                    prop_assert!(lo[h - 1].slope <= lo[h].slope);
                }
            }
        }
    }

    #[test]
    fn sr_lifespan_trivial_threshold() {
        let sim = IdealSimulation::new(0, 10, 1);
        let s = sr_lifespan_stats(&sim, 1e-9).unwrap();
        assert_eq!(s.mean, 1.0);
        assert_eq!(s.censored, 0);
    }

    #[test]
    fn sr_lifespan_is_right_skewed() {
        let sim = IdealSimulation::new(0, 1000, 21);
        let s = sr_lifespan_stats(&sim, 1e4).unwrap();
        assert!(s.median < s.mean, "{s:?}");
        assert!(s.lower_quartile <= s.median && s.median <= s.upper_quartile);
    }

    #[test]
    fn decay_trivial_horizon() {
        let sim = IdealSimulation::new(0, 4, 1);
        let d = jumper_decay_stats(&sim).unwrap();
        assert_eq!(d.median_log10, 0.0);
        assert_eq!(d.per_step_log10, 0.0);
    }

    #[test]
    fn ville_bound_small_scale() {
        let sim = IdealSimulation::new(1000, 2000, 8);
        let hits = simulate_ville_alarms(&sim, 10.0).unwrap();
        let se = (0.1f64 * 0.9 / 2000.0).sqrt();
        assert!((hits as f64 / 2000.0) <= 0.1 + 3.0 * se);
    }

    #[test]
    fn candidate_checks() {
        let values: Vec<f64> = (1..=1000).map(f64::from).collect();
        let checks = check_candidates(&values, &[991.0, 999.0], 0.01, 0.999).unwrap();
        assert_eq!(checks[0].alarms, 10);
        assert!(checks[0].interval.contains(checks[0].fraction));
        assert!(!checks[0].valid);
    }

    #[test]
    fn nearest_rank_convention() {
        let v = [1, 2, 3, 4];
        assert_eq!(nearest_rank(&v, 0.5), 2);
        assert_eq!(nearest_rank(&v, 0.25), 1);
        assert_eq!(nearest_rank(&v, 0.75), 3);
        assert_eq!(nearest_rank(&v, 1.0), 4);
        assert_eq!(nearest_rank(&v, 0.0), 1);
    }
}
