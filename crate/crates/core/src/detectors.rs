//! Alarm procedures on top of a martingale stream.
//!
//! * Ville: alarm at the first `n` with `S_n >= c`.
//! * CUSUM: `gamma_n = max_{i<n} S_n / S_i`, computed as
//!   `gamma_n = (S_n / S_{n-1}) max(gamma_{n-1}, 1)`.
//! * Shiryaev–Roberts: `psi_n = sum_{i<n} S_n / S_i`, computed as
//!   `psi_n = (S_n / S_{n-1}) (psi_{n-1} + 1)`.
//! * Linear barrier: alarm at the first `n` with `gamma_n >= c n`.
//!
//! Every detector consumes `ln S_n`, and the recursions only ever see the
//! ratio `exp(ln S_n - ln S_{n-1})`, so they keep working long after `S_n`
//! itself has dropped below the smallest positive double. All detectors are
//! one-shot: after the first alarm they keep updating their statistic but
//! never alarm again.

use serde::{Deserialize, Serialize};

use crate::betting::{BettingFunction, MartingalePath};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    Ville,
    Cusum,
    ShiryaevRoberts,
    Barrier,
}

impl DetectorKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Ville => "ville",
            Self::Cusum => "cusum",
            Self::ShiryaevRoberts => "sr",
            Self::Barrier => "barrier",
        }
    }
}

impl std::str::FromStr for DetectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ville" => Ok(Self::Ville),
            "cusum" => Ok(Self::Cusum),
            "sr" | "shiryaev-roberts" | "shiryaev_roberts" => Ok(Self::ShiryaevRoberts),
            "barrier" | "middlegame" => Ok(Self::Barrier),
            other => Err(Error::invalid(format!("unknown detector '{other}'"))),
        }
    }
}

/// A single detector crossing its threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorAlarm {
    pub detector: DetectorKind,
    pub step: u64,
    /// `S_n` for Ville, `gamma_n` for CUSUM and barrier, `psi_n` for SR.
    pub statistic: f64,
    /// `c` for Ville/CUSUM/SR, `c n` for the barrier.
    pub threshold: f64,
}

fn check_threshold(threshold: f64, min: f64, what: &str) -> Result<()> {
    if threshold.is_nan() || threshold <= min {
        return Err(Error::invalid(format!(
            "{what} threshold {threshold} must exceed {min}"
        )));
    }
    Ok(())
}

#[inline]
fn ratio_from_logs(log_s: f64, log_s_prev: f64, step: u64) -> Result<f64> {
    let ratio = (log_s - log_s_prev).exp();
    if ratio.is_finite() {
        Ok(ratio)
    } else {
        Err(Error::NonFiniteRatio { step })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VilleState {
    threshold: f64,
    log_threshold: f64,
    fire_step: Option<u64>,
}

impl VilleState {
    pub fn new(threshold: f64) -> Result<Self> {
        check_threshold(threshold, 1.0, "Ville")?;
        Ok(Self {
            threshold,
            log_threshold: threshold.ln(),
            fire_step: None,
        })
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn fired(&self) -> bool {
        self.fire_step.is_some()
    }

    pub fn fire_step(&self) -> Option<u64> {
        self.fire_step
    }

    pub fn step(&mut self, log_s: f64, n: u64) -> Option<DetectorAlarm> {
        if self.fire_step.is_some() || !(log_s >= self.log_threshold) {
            return None;
        }
        self.fire_step = Some(n);
        Some(DetectorAlarm {
            detector: DetectorKind::Ville,
            step: n,
            statistic: log_s.exp(),
            threshold: self.threshold,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CusumState {
    gamma: f64,
    log_s_prev: f64,
    threshold: f64,
    n: u64,
    fire_step: Option<u64>,
}

impl CusumState {
    /// `threshold` may be `+inf` for a statistic-only tracker.
    pub fn new(threshold: f64) -> Result<Self> {
        check_threshold(threshold, 0.0, "CUSUM")?;
        Ok(Self {
            gamma: 0.0,
            log_s_prev: 0.0,
            threshold,
            n: 0,
            fire_step: None,
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn steps(&self) -> u64 {
        self.n
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn fired(&self) -> bool {
        self.fire_step.is_some()
    }

    pub fn fire_step(&self) -> Option<u64> {
        self.fire_step
    }

    /// Feeds `ln S_n`; the first call is `n = 1` relative to `S_0 = 1`.
    pub fn step(&mut self, log_s: f64) -> Result<(f64, Option<DetectorAlarm>)> {
        let ratio = ratio_from_logs(log_s, self.log_s_prev, self.n + 1)?;
        self.log_s_prev = log_s;
        Ok(self.step_ratio(ratio))
    }

    /// Feeds `S_n / S_{n-1}` directly.
    #[inline]
    pub fn step_ratio(&mut self, ratio: f64) -> (f64, Option<DetectorAlarm>) {
        self.n += 1;
        self.gamma = (ratio * self.gamma.max(1.0)).min(f64::MAX);
        let alarm = if self.fire_step.is_none() && self.gamma >= self.threshold {
            self.fire_step = Some(self.n);
            Some(DetectorAlarm {
                detector: DetectorKind::Cusum,
                step: self.n,
                statistic: self.gamma,
                threshold: self.threshold,
            })
        } else {
            None
        };
        (self.gamma, alarm)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SrState {
    psi: f64,
    log_s_prev: f64,
    threshold: f64,
    n: u64,
    fire_step: Option<u64>,
}

impl SrState {
    pub fn new(threshold: f64) -> Result<Self> {
        check_threshold(threshold, 0.0, "Shiryaev-Roberts")?;
        Ok(Self {
            psi: 0.0,
            log_s_prev: 0.0,
            threshold,
            n: 0,
            fire_step: None,
        })
    }

    pub fn psi(&self) -> f64 {
        self.psi
    }

    pub fn steps(&self) -> u64 {
        self.n
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn fired(&self) -> bool {
        self.fire_step.is_some()
    }

    pub fn fire_step(&self) -> Option<u64> {
        self.fire_step
    }

    pub fn step(&mut self, log_s: f64) -> Result<(f64, Option<DetectorAlarm>)> {
        let ratio = ratio_from_logs(log_s, self.log_s_prev, self.n + 1)?;
        self.log_s_prev = log_s;
        Ok(self.step_ratio(ratio))
    }

    #[inline]
    pub fn step_ratio(&mut self, ratio: f64) -> (f64, Option<DetectorAlarm>) {
        self.n += 1;
        self.psi = (ratio * (self.psi + 1.0)).min(f64::MAX);
        let alarm = if self.fire_step.is_none() && self.psi >= self.threshold {
            self.fire_step = Some(self.n);
            Some(DetectorAlarm {
                detector: DetectorKind::ShiryaevRoberts,
                step: self.n,
                statistic: self.psi,
                threshold: self.threshold,
            })
        } else {
            None
        };
        (self.psi, alarm)
    }
}

/// Running maximum `psi*_n = max_{i<=n} psi_i`, starting from `psi_0 = 0`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MaxProcess {
    max: f64,
}

impl MaxProcess {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn update(&mut self, value: f64) -> f64 {
        if value > self.max {
            self.max = value;
        }
        self.max
    }

    pub fn value(&self) -> f64 {
        self.max
    }
}

/// Linear barrier `gamma_n >= slope * n` for the middlegame.
#[derive(Debug, Clone, PartialEq)]
pub struct BarrierState {
    slope: f64,
    fire_step: Option<u64>,
}

impl BarrierState {
    pub fn new(slope: f64) -> Result<Self> {
        check_threshold(slope, 0.0, "barrier slope")?;
        Ok(Self {
            slope,
            fire_step: None,
        })
    }

    pub fn slope(&self) -> f64 {
        self.slope
    }

    pub fn fired(&self) -> bool {
        self.fire_step.is_some()
    }

    pub fn fire_step(&self) -> Option<u64> {
        self.fire_step
    }

    pub fn step(&mut self, gamma: f64, n: u64) -> Option<DetectorAlarm> {
        let level = self.slope * n as f64;
        if self.fire_step.is_some() || !(gamma >= level) {
            return None;
        }
        self.fire_step = Some(n);
        Some(DetectorAlarm {
            detector: DetectorKind::Barrier,
            step: n,
            statistic: gamma,
            threshold: level,
        })
    }
}

/// Larger root of `slope * n * 10^(-decay n) = opening_threshold`.
///
/// The left side peaks at `n* = 1 / (decay ln 10)`; the root is searched for
/// on `[n*, inf)` by bracketing and bisection. Tangency returns `n*`.
pub fn boundary_solve(opening_threshold: f64, slope: f64, decay: f64) -> Result<f64> {
    for (v, name) in [
        (opening_threshold, "opening threshold"),
        (slope, "slope"),
        (decay, "decay"),
    ] {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::invalid(format!("{name} must be positive, got {v}")));
        }
    }
    // log10 of the left side minus log10 of the right side
    let g = |n: f64| slope.log10() + n.log10() - decay * n - opening_threshold.log10();
    let peak = 1.0 / (decay * std::f64::consts::LN_10);
    let at_peak = g(peak);
    if at_peak.abs() < 1e-12 {
        return Ok(peak);
    }
    if at_peak < 0.0 {
        return Err(Error::NoRoot(format!(
            "curve peaks at {:.6} below the opening threshold {opening_threshold}",
            10f64.powf(at_peak) * opening_threshold
        )));
    }
    let (mut lo, mut hi) = (peak, 2.0 * peak);
    while g(hi) > 0.0 {
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::NoRoot("no sign change in bracket".into()));
        }
    }
    while hi - lo > 1e-9 * hi.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// One row of a detector trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: u64,
    pub log10_s: f64,
    pub gamma: f64,
    pub psi: f64,
    pub psi_star: f64,
}

/// CUSUM, SR and SR maximum process along a whole path, step 0 included.
pub fn trace_path(path: &MartingalePath) -> Result<Vec<TraceRow>> {
    let mut cusum = CusumState::new(f64::INFINITY)?;
    let mut sr = SrState::new(f64::INFINITY)?;
    let mut star = MaxProcess::new();
    let mut rows = Vec::with_capacity(path.len());
    for (n, &log_s) in path.log_values.iter().enumerate() {
        if n == 0 {
            rows.push(TraceRow {
                step: 0,
                log10_s: log_s / std::f64::consts::LN_10,
                gamma: 0.0,
                psi: 0.0,
                psi_star: 0.0,
            });
            continue;
        }
        let (gamma, _) = cusum.step(log_s - path.log_values[0])?;
        let (psi, _) = sr.step(log_s - path.log_values[0])?;
        rows.push(TraceRow {
            step: n as u64,
            log10_s: log_s / std::f64::consts::LN_10,
            gamma,
            psi,
            psi_star: star.update(psi),
        });
    }
    Ok(rows)
}

/// The Shiryaev–Roberts statistic computed the naive way, in plain
/// double-precision arithmetic on the capitals themselves.
///
/// Without a rescale period it evaluates `psi_n = S_n * sum_{i<n} 1 / S_i`
/// directly, which breaks down once `S_n` underflows. With a rescale period
/// it runs the ratio recursion and resets `S` to 1 every `period` steps,
/// which keeps it accurate.
#[derive(Debug, Clone)]
pub struct NaiveSrReference {
    capitals: [f64; 3],
    jump_rate: f64,
    s_prev: f64,
    inv_sum: f64,
    psi: f64,
    rescale_period: Option<u64>,
    n: u64,
}

impl NaiveSrReference {
    pub fn new(jump_rate: f64, rescale_period: Option<u64>) -> Result<Self> {
        if rescale_period == Some(0) {
            return Err(Error::invalid("rescale period must be positive"));
        }
        Ok(Self {
            capitals: [1.0 / 3.0; 3],
            jump_rate,
            s_prev: 1.0,
            inv_sum: 0.0,
            psi: 0.0,
            rescale_period,
            n: 0,
        })
    }

    /// Current directly computed capital (rescaled if a period is set).
    pub fn capital(&self) -> f64 {
        self.s_prev
    }

    pub fn psi(&self) -> f64 {
        self.psi
    }

    pub fn step(&mut self, p: f64) -> f64 {
        self.n += 1;
        let total: f64 = self.capitals.iter().sum();
        for c in &mut self.capitals {
            *c = (1.0 - self.jump_rate) * *c + (self.jump_rate / 3.0) * total;
        }
        for (c, f) in self.capitals.iter_mut().zip(BettingFunction::ALL) {
            *c *= f.eval(p);
        }
        let s: f64 = self.capitals.iter().sum();
        match self.rescale_period {
            None => {
                self.inv_sum += 1.0 / self.s_prev;
                self.psi = s * self.inv_sum;
                self.s_prev = s;
            }
            Some(period) => {
                self.psi = s / self.s_prev * (self.psi + 1.0);
                self.s_prev = s;
                if self.n % period == 0 {
                    for c in &mut self.capitals {
                        *c /= s;
                    }
                    self.s_prev = 1.0;
                }
            }
        }
        self.psi
    }
}
