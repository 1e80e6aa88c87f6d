//! The Simple Jumper betting martingale.
//!
//! Three linear betting functions `f_e(p) = 1 + e (p - 1/2)`, `e ∈ {-1, 0, 1}`,
//! are mixed by a Markov chain that keeps its state with probability `1 - J`
//! and otherwise jumps to a uniformly chosen state. Per step:
//!
//! ```text
//! C_e <- (1 - J) C_e + (J / 3) C      (jump mixing)
//! C_e <- C_e f_e(p_n)                 (betting)
//! S_n  = C = C_{-1} + C_0 + C_1
//! ```
//!
//! The capital of an honest run in the ideal setting shrinks by roughly
//! 0.0017 decades per step, so after a few hundred thousand steps it is no
//! longer representable as an `f64`. [`SimpleJumper`] therefore keeps the
//! total capital as `ln S_n` and the per-state split as weights
//! `w_e = C_e / C` summing to one. Both updates are linear in `C`, so the
//! step needs only the ratio `S_n / S_{n-1} = Σ_e w'_e f_e(p_n)`, which is
//! also exactly what the CUSUM and Shiryaev–Roberts recursions consume.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::simulation_rng;

pub const DEFAULT_JUMP_RATE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BettingFunction {
    /// `e = -1`: bets on small p-values.
    Low,
    /// `e = 0`: does not bet.
    Flat,
    /// `e = +1`: bets on large p-values.
    High,
}

impl BettingFunction {
    pub const ALL: [BettingFunction; 3] = [Self::Low, Self::Flat, Self::High];

    pub fn epsilon(self) -> f64 {
        match self {
            Self::Low => -1.0,
            Self::Flat => 0.0,
            Self::High => 1.0,
        }
    }

    #[inline]
    pub fn eval(self, p: f64) -> f64 {
        1.0 + self.epsilon() * (p - 0.5)
    }
}

/// Result of one betting step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumperStep {
    /// `S_n / S_{n-1}`.
    pub ratio: f64,
    /// `ln S_n`.
    pub log_capital: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimpleJumper {
    /// `C_e / C` in the order of [`BettingFunction::ALL`].
    weights: [f64; 3],
    log_capital: f64,
    jump_rate: f64,
    step: u64,
}

impl Default for SimpleJumper {
    fn default() -> Self {
        Self::new(DEFAULT_JUMP_RATE).expect("default jump rate is valid")
    }
}

fn check_jump_rate(jump_rate: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&jump_rate) {
        return Err(Error::invalid(format!(
            "jump rate {jump_rate} is outside [0, 1]"
        )));
    }
    Ok(())
}

impl SimpleJumper {
    /// Fresh state: `C_{-1} = C_0 = C_1 = 1/3`, `S_0 = 1`.
    pub fn new(jump_rate: f64) -> Result<Self> {
        check_jump_rate(jump_rate)?;
        Ok(Self {
            weights: [1.0 / 3.0; 3],
            log_capital: 0.0,
            jump_rate,
            step: 0,
        })
    }

    /// Builds an arbitrary state from natural-log per-state capitals;
    /// `-inf` stands for a zero capital.
    pub fn from_log_capitals(log_capitals: [f64; 3], jump_rate: f64) -> Result<Self> {
        check_jump_rate(jump_rate)?;
        if log_capitals
            .iter()
            .any(|c| c.is_nan() || *c == f64::INFINITY)
        {
            return Err(Error::invalid("per-state log-capital must be < +inf"));
        }
        let total = log_sum_exp(&log_capitals);
        if !total.is_finite() {
            return Err(Error::invalid("total capital must be positive"));
        }
        let weights = log_capitals.map(|c| (c - total).exp());
        Ok(Self {
            weights,
            log_capital: total,
            jump_rate,
            step: 0,
        })
    }

    pub fn jump_rate(&self) -> f64 {
        self.jump_rate
    }

    /// Number of p-values processed.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// `ln S_n`.
    pub fn log_capital(&self) -> f64 {
        self.log_capital
    }

    /// `ln C_e` for each betting function, in [`BettingFunction::ALL`] order.
    pub fn log_capital_per_state(&self) -> [f64; 3] {
        self.weights.map(|w| self.log_capital + w.ln())
    }

    /// Processes one p-value.
    pub fn step(&mut self, p: f64) -> Result<JumperStep> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::PValueOutOfRange(p));
        }
        Ok(self.step_unchecked(p))
    }

    /// [`step`](Self::step) without the range check, for simulation loops
    /// that draw `p` themselves.
    #[inline]
    pub fn step_unchecked(&mut self, p: f64) -> JumperStep {
        let ratio = self.bet(p);
        self.log_capital += ratio.ln();
        JumperStep {
            ratio,
            log_capital: self.log_capital,
        }
    }

    /// Advances the weights and returns `S_n / S_{n-1}` without touching the
    /// log-capital. Callers that only need ratios (CUSUM and SR
    /// calibration) use this and accumulate the log themselves.
    #[inline]
    pub(crate) fn bet(&mut self, p: f64) -> f64 {
        let keep = 1.0 - self.jump_rate;
        let spread = self.jump_rate / 3.0;
        let d = p - 0.5;
        let low = (keep * self.weights[0] + spread) * (1.0 - d);
        let flat = keep * self.weights[1] + spread;
        let high = (keep * self.weights[2] + spread) * (1.0 + d);
        let ratio = low + flat + high;
        let inv = 1.0 / ratio;
        self.weights = [low * inv, flat * inv, high * inv];
        self.step += 1;
        ratio
    }
}

/// `ln Σ exp(x_i)`, `-inf` for an empty slice or all `-inf` inputs.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Values `ln S_0, ln S_1, ..., ln S_n` of one martingale run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingalePath {
    pub log_values: Vec<f64>,
}

impl MartingalePath {
    pub fn len(&self) -> usize {
        self.log_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_values.is_empty()
    }

    pub fn log10_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.log_values.iter().map(|v| v / std::f64::consts::LN_10)
    }

    pub fn final_log10(&self) -> f64 {
        self.log_values.last().copied().unwrap_or(0.0) / std::f64::consts::LN_10
    }
}

pub fn run_martingale(pvalues: &[f64], jump_rate: f64) -> Result<MartingalePath> {
    let mut jumper = SimpleJumper::new(jump_rate)?;
    let mut log_values = Vec::with_capacity(pvalues.len() + 1);
    log_values.push(0.0);
    for (i, &p) in pvalues.iter().enumerate() {
        let step = jumper.step(p).map_err(|e| Error::at(i, e))?;
        log_values.push(step.log_capital);
    }
    Ok(MartingalePath { log_values })
}

/// Monte Carlo estimate of `E[S_n]` under IID uniform p-values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExpectationEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_sims: u64,
}

pub fn martingale_expectation_check(
    jump_rate: f64,
    n_steps: u64,
    n_sims: u64,
    seed: u64,
) -> Result<ExpectationEstimate> {
    check_jump_rate(jump_rate)?;
    if n_sims == 0 {
        return Err(Error::invalid("n_sims must be positive"));
    }
    if n_steps > 20 {
        return Err(Error::invalid(
            "n_steps above 20 makes the mean dominated by rare paths",
        ));
    }
    let mut rng = simulation_rng(seed, 0);
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..n_sims {
        let mut jumper = SimpleJumper::new(jump_rate)?;
        let mut capital = 1.0;
        for _ in 0..n_steps {
            capital *= jumper.bet(rng.random::<f64>());
        }
        sum += capital;
        sum_sq += capital * capital;
    }
    let n = n_sims as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0) * n / (n - 1.0).max(1.0);
    Ok(ExpectationEstimate {
        mean,
        std_error: (var / n).sqrt(),
        n_sims,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::Ratio;
    use proptest::prelude::*;
    use rand::Rng;

    /// Direct arithmetic with the per-state capitals, as in the published
    /// pseudocode.
    struct DirectJumper {
        c: [f64; 3],
        j: f64,
    }

    impl DirectJumper {
        fn new(j: f64) -> Self {
            Self {
                c: [1.0 / 3.0; 3],
                j,
            }
        }
        fn step(&mut self, p: f64) -> f64 {
            let total: f64 = self.c.iter().sum();
            for c in &mut self.c {
                *c = (1.0 - self.j) * *c + (self.j / 3.0) * total;
            }
            for (c, f) in self.c.iter_mut().zip(BettingFunction::ALL) {
                *c *= f.eval(p);
            }
            self.c.iter().sum()
        }
    }

    #[test]
    fn betting_functions() {
        assert_eq!(BettingFunction::Low.eval(0.0), 1.5);
        assert_eq!(BettingFunction::High.eval(0.0), 0.5);
        for f in BettingFunction::ALL {
            assert_eq!(f.eval(0.5), 1.0);
            // the integral of a linear function on [0,1] is its midpoint value
            assert!(f.eval(0.0) >= 0.5 && f.eval(1.0) >= 0.5);
        }
    }

    #[test]
    fn first_step_is_fair_for_any_p() {
        for p in [0.0, 0.1, 0.5, 0.77, 1.0] {
            let mut j = SimpleJumper::new(0.01).unwrap();
            let s = j.step(p).unwrap();
            assert!((s.log_capital).abs() < 1e-15, "p={p}: {}", s.log_capital);
        }
    }

    #[test]
    fn single_state_degenerate() {
        let mut j =
            SimpleJumper::from_log_capitals([0.0, f64::NEG_INFINITY, f64::NEG_INFINITY], 0.0)
                .unwrap();
        let s = j.step(0.0).unwrap();
        assert!((s.log_capital.exp() - 1.5).abs() < 1e-15);
    }

    #[test]
    fn two_steps_match_exact_rational_evaluation() {
        type Q = Ratio<i64>;
        let j = Q::new(1, 100);
        let f = |e: i64, p: Q| Q::from_integer(1) + Q::from_integer(e) * (p - Q::new(1, 2));
        let mut c = [Q::new(1, 3); 3];
        let mut total = Q::from_integer(1);
        for _ in 0..2 {
            let p = Q::from_integer(0);
            for ci in &mut c {
                *ci = (Q::from_integer(1) - j) * *ci + j / Q::from_integer(3) * total;
            }
            for (ci, e) in c.iter_mut().zip([-1, 0, 1]) {
                *ci *= f(e, p);
            }
            total = c[0] + c[1] + c[2];
        }
        assert_eq!(total, Q::new(233, 200));
        let exact = *total.numer() as f64 / *total.denom() as f64;

        let mut jumper = SimpleJumper::new(0.01).unwrap();
        jumper.step(0.0).unwrap();
        let s2 = jumper.step(0.0).unwrap().log_capital.exp();
        assert!((s2 - exact).abs() < 1e-14, "{s2} vs {exact}");
    }

    #[test]
    fn empty_path() {
        let path = run_martingale(&[], 0.01).unwrap();
        assert_eq!(path.log_values, vec![0.0]);
    }

    #[test]
    fn half_pvalues_keep_capital() {
        let path = run_martingale(&[0.5; 100], 0.01).unwrap();
        assert!(path.log_values.iter().all(|&v| v.abs() < 1e-13));
    }

    #[test]
    fn bad_pvalue_reports_index() {
        let err = run_martingale(&[0.2, 0.4, 1.2], 0.01).unwrap_err();
        match err {
            Error::AtIndex { index, source } => {
                assert_eq!(index, 2);
                assert!(matches!(*source, Error::PValueOutOfRange(_)));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_jump_rate() {
        assert!(SimpleJumper::new(1.5).is_err());
        assert!(SimpleJumper::new(-0.1).is_err());
    }

    #[test]
    fn per_state_capitals_sum_to_total() {
        let mut j = SimpleJumper::new(0.01).unwrap();
        let mut rng = simulation_rng(3, 0);
        for _ in 0..10_000 {
            j.step(rng.random()).unwrap();
            let total = log_sum_exp(&j.log_capital_per_state());
            let rel = ((total - j.log_capital()).exp() - 1.0).abs();
            assert!(rel < 1e-12, "{rel}");
        }
    }

    #[test]
    fn log_domain_matches_direct_arithmetic() {
        let mut rng = simulation_rng(11, 0);
        let mut fast = SimpleJumper::new(0.01).unwrap();
        let mut direct = DirectJumper::new(0.01);
        for n in 0..1000 {
            // skew the p-values so the capital moves in both directions
            let u: f64 = rng.random();
            let p = if n % 300 < 150 { u * u } else { u.sqrt() };
            let log_s = fast.step(p).unwrap().log_capital;
            let s = direct.step(p);
            let rel = (log_s.exp() - s).abs() / s;
            assert!(rel < 1e-9, "step {n}: rel {rel}");
        }
    }

    #[test]
    fn expectation_one_step_is_exactly_one() {
        let est = martingale_expectation_check(0.01, 1, 1000, 1).unwrap();
        assert!((est.mean - 1.0).abs() < 1e-12);
    }

    #[test]
    fn expectation_five_steps_monte_carlo() {
        let est = martingale_expectation_check(0.01, 5, 1_000_000, 2).unwrap();
        assert!(
            (est.mean - 1.0).abs() < 3.0 * est.std_error,
            "mean {} se {}",
            est.mean,
            est.std_error
        );
    }

    /// `E[S_n]` by nested 2-point Gauss–Legendre quadrature, exact because
    /// `S_n` is affine in each p-value.
    fn exact_expectation(state: &SimpleJumper, capital: f64, remaining: u32) -> f64 {
        if remaining == 0 {
            return capital;
        }
        let h = 0.5 / 3f64.sqrt();
        [0.5 - h, 0.5 + h]
            .iter()
            .map(|&p| {
                let mut next = state.clone();
                let r = next.bet(p);
                0.5 * exact_expectation(&next, capital * r, remaining - 1)
            })
            .sum()
    }

    #[test]
    fn expectation_ten_steps_by_quadrature() {
        let e = exact_expectation(&SimpleJumper::new(0.01).unwrap(), 1.0, 10);
        assert!((e - 1.0).abs() < 1e-12, "{e}");
    }

    #[test]
    fn expectation_check_rejects_long_horizons() {
        assert!(martingale_expectation_check(0.01, 21, 10, 0).is_err());
        assert!(martingale_expectation_check(0.01, 2, 0, 0).is_err());
    }

    proptest! {
        #[test]
        fn one_step_fairness(ps in prop::collection::vec(0.0f64..=1.0, 0..50), j in 0.0f64..=1.0) {
            let mut state = SimpleJumper::new(j).unwrap();
            for p in ps {
                state.step(p).unwrap();
            }
            let before = 1.0;
            let after = exact_expectation(&state, 1.0, 1);
            prop_assert!((after - before).abs() < 1e-10);
        }

        #[test]
        fn weights_stay_positive(ps in prop::collection::vec(0.0f64..=1.0, 1..200)) {
            let mut state = SimpleJumper::new(0.01).unwrap();
            for p in ps {
                let s = state.step(p).unwrap();
                prop_assert!(s.ratio >= 0.5 && s.ratio <= 1.5);
                prop_assert!(state.log_capital_per_state().iter().all(|c| c.is_finite()));
            }
        }
    }
}
