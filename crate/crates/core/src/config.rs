//! Run configuration shared by the CLI subcommands.
//!
//! A config file is TOML with the keys of [`RunConfig`]; unknown keys are
//! rejected. Command-line flags override file values, and
//! `EXMART_OUTPUT_DIR` overrides the output directory unless a flag sets it.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::betting::DEFAULT_JUMP_RATE;
use crate::calibration::Quantity;
use crate::conformity::{BuiltinScorer, ScorerKind};
use crate::detectors::DetectorKind;
use crate::error::{Error, Result};
use crate::experiments::DetectorSpec;
use crate::schedules::{AlarmEvent, ScheduleConfig};

pub const OUTPUT_DIR_ENV: &str = "EXMART_OUTPUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Monitor,
    Calibrate,
    Simulate,
    Replicate,
}

fn d_delimiter() -> char {
    ','
}
fn d_label() -> String {
    "label".into()
}
fn d_scorer() -> BuiltinScorer {
    BuiltinScorer::NearestDistance
}
fn d_quantity() -> Quantity {
    Quantity::CusumMaxPercentile
}
fn d_alpha() -> f64 {
    0.01
}
fn d_confidence() -> f64 {
    0.999
}
fn d_size() -> usize {
    1000
}
fn d_jump_rate() -> f64 {
    DEFAULT_JUMP_RATE
}
fn d_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: Command,
    /// `monitor`: the training set. `replicate`: the pre-change population
    /// and optionally the post-change one.
    #[serde(default)]
    pub datasets: Vec<PathBuf>,
    /// `replicate`: predictions for each dataset, row for row.
    #[serde(default)]
    pub predictions: Vec<PathBuf>,
    /// `monitor`: observation stream; standard input when absent.
    #[serde(default)]
    pub input: Option<PathBuf>,
    #[serde(default = "d_delimiter")]
    pub delimiter: char,
    #[serde(default = "d_label")]
    pub label_column: String,
    /// `monitor`: rows whose value here is `0` or `false` are exploitation
    /// rows and skip the monitors.
    #[serde(default)]
    pub test_flag_column: Option<String>,
    #[serde(default = "d_scorer")]
    pub scorer: BuiltinScorer,
    /// Conformity measure applied to predictions files.
    #[serde(default)]
    pub score_kind: Option<ScorerKind>,
    #[serde(default)]
    pub schedule: Option<ScheduleConfig>,
    /// `replicate`: detectors run on shared paths (default Ville at 100).
    #[serde(default)]
    pub detectors: Vec<DetectorSpec>,
    #[serde(default)]
    pub seed: u64,
    /// Defaults: 1000 for `calibrate`, 3 for `simulate`, 100 for
    /// `replicate`.
    #[serde(default)]
    pub n_sims: Option<u64>,
    /// Defaults to 10000.
    #[serde(default)]
    pub n_steps: Option<u64>,
    #[serde(default = "d_quantity")]
    pub quantity: Quantity,
    #[serde(default = "d_alpha")]
    pub alpha: f64,
    #[serde(default = "d_confidence")]
    pub confidence: f64,
    /// `calibrate`: thresholds to check with exact intervals.
    #[serde(default)]
    pub candidates: Vec<f64>,
    /// `calibrate` with the barrier-slope quantity; defaults to `n_steps`.
    #[serde(default)]
    pub horizons: Vec<u64>,
    /// `calibrate` with the SR alarm-time quantity.
    #[serde(default)]
    pub threshold: Option<f64>,
    #[serde(default = "d_size")]
    pub n_train: usize,
    #[serde(default = "d_size")]
    pub n_calibration: usize,
    #[serde(default = "d_size")]
    pub n_test: usize,
    #[serde(default = "d_jump_rate")]
    pub jump_rate: f64,
    /// Also write per-step traces.
    #[serde(default)]
    pub trace: bool,
    #[serde(default = "d_output_dir")]
    pub output_dir: PathBuf,
}

impl RunConfig {
    pub fn new(command: Command) -> Self {
        Self {
            command,
            datasets: Vec::new(),
            predictions: Vec::new(),
            input: None,
            delimiter: d_delimiter(),
            label_column: d_label(),
            test_flag_column: None,
            scorer: d_scorer(),
            score_kind: None,
            schedule: None,
            detectors: Vec::new(),
            seed: 0,
            n_sims: None,
            n_steps: None,
            quantity: d_quantity(),
            alpha: d_alpha(),
            confidence: d_confidence(),
            candidates: Vec::new(),
            horizons: Vec::new(),
            threshold: None,
            n_train: d_size(),
            n_calibration: d_size(),
            n_test: d_size(),
            jump_rate: d_jump_rate(),
            trace: false,
            output_dir: d_output_dir(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn delimiter_byte(&self) -> Result<u8> {
        u8::try_from(self.delimiter)
            .ok()
            .filter(|b| b.is_ascii() && *b != b'"' && *b != b'\n')
            .ok_or_else(|| {
                Error::invalid(format!(
                    "delimiter {:?} must be one ASCII character",
                    self.delimiter
                ))
            })
    }

    pub fn n_sims(&self) -> u64 {
        self.n_sims.unwrap_or(match self.command {
            Command::Calibrate => 1000,
            Command::Simulate => 3,
            Command::Monitor | Command::Replicate => 100,
        })
    }

    pub fn n_steps(&self) -> u64 {
        self.n_steps.unwrap_or(10_000)
    }

    pub fn effective_detectors(&self) -> Vec<DetectorSpec> {
        if self.detectors.is_empty() {
            vec![DetectorSpec::new(DetectorKind::Ville, 100.0)]
        } else {
            self.detectors.clone()
        }
    }

    pub fn effective_horizons(&self) -> Vec<u64> {
        if self.horizons.is_empty() {
            vec![self.n_steps()]
        } else {
            self.horizons.clone()
        }
    }

    /// Checks everything a run needs before it starts.
    pub fn validate(&self) -> Result<()> {
        self.delimiter_byte()?;
        if !(0.0..=1.0).contains(&self.jump_rate) {
            return Err(Error::invalid("jump_rate must be in [0, 1]"));
        }
        if self.n_sims() == 0 {
            return Err(Error::invalid("n_sims must be positive"));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::invalid("alpha must be in (0, 1]"));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::invalid("confidence must be in (0, 1)"));
        }
        for spec in &self.detectors {
            let min = if spec.kind == DetectorKind::Ville {
                1.0
            } else {
                0.0
            };
            if !(spec.threshold > min) {
                return Err(Error::invalid(format!(
                    "{} threshold {} must exceed {min}",
                    spec.kind.name(),
                    spec.threshold
                )));
            }
        }
        match self.command {
            Command::Monitor => {
                if self.datasets.len() != 1 {
                    return Err(Error::invalid("monitor needs exactly one training dataset"));
                }
                self.schedule
                    .as_ref()
                    .ok_or_else(|| Error::invalid("monitor needs a schedule"))?
                    .validate()?;
            }
            Command::Calibrate => {
                if self.quantity == Quantity::CusumMaxPercentile && self.alpha >= 1.0 {
                    return Err(Error::invalid("alpha must be below 1 for CUSUM maxima"));
                }
                if self.quantity == Quantity::SrAlarmTime {
                    match self.threshold {
                        Some(t) if t > 0.0 && t.is_finite() => {}
                        _ => {
                            return Err(Error::invalid("SR alarm times need a positive threshold"))
                        }
                    }
                }
                if self.quantity == Quantity::BarrierSlope {
                    let h = self.effective_horizons();
                    if h[0] == 0 || h.windows(2).any(|w| w[0] >= w[1]) {
                        return Err(Error::invalid("horizons must be positive and increasing"));
                    }
                }
            }
            Command::Simulate => {}
            Command::Replicate => {
                if !(1..=2).contains(&self.datasets.len()) {
                    return Err(Error::invalid("replicate needs one or two datasets"));
                }
                if !self.predictions.is_empty() {
                    if self.predictions.len() != self.datasets.len() {
                        return Err(Error::invalid("give one predictions file per dataset"));
                    }
                    if self.score_kind.is_none() {
                        return Err(Error::invalid("predictions need a score_kind"));
                    }
                    if self.score_kind == Some(ScorerKind::NearestDistance) {
                        return Err(Error::invalid(
                            "nearest_distance is a built-in scorer, not a predictions measure",
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form, ignoring where outputs go.
    pub fn config_hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = PathBuf::new();
        canonical.n_sims = Some(self.n_sims());
        canonical.n_steps = Some(self.n_steps());
        let bytes = serde_json::to_vec(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

pub fn unix_millis() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

pub fn new_run_id(config_hash: &str) -> String {
    let nanos = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_nanos());
    let digest = Sha256::digest(format!("{config_hash}:{nanos}:{}", std::process::id()));
    hex::encode(&digest[..8])
}

/// One line of the alarm log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlarmLogRecord {
    pub run_id: String,
    pub config_hash: String,
    pub timestamp_ms: u64,
    /// Input line of the observation that triggered the alarm; 0 for
    /// alarms raised during calibration.
    pub input_line: u64,
    #[serde(flatten)]
    pub event: AlarmEvent,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedules::ScheduleKind;

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_toml("command = \"simulate\"\nbogus = 3\n").is_err());
        let err = RunConfig::from_toml(
            "command = \"simulate\"\n[schedule]\nkind = \"fixed\"\ntarget_lifespan = 1\nnope = 1\n",
        )
        .unwrap_err();
        assert_eq!(err.kind(), crate::error::ErrorKind::Config);
    }

    #[test]
    fn hash_ignores_key_order_and_defaults() {
        let a = RunConfig::from_toml("command = \"calibrate\"\nseed = 3\n").unwrap();
        let b = RunConfig::from_toml(
            "n_sims = 1000\nseed = 3\ncommand = \"calibrate\"\nalpha = 0.01\n",
        )
        .unwrap();
        assert_eq!(a.config_hash(), b.config_hash());
        let c = RunConfig {
            seed: 4,
            ..a.clone()
        };
        assert_ne!(a.config_hash(), c.config_hash());
        let d = RunConfig {
            output_dir: "elsewhere".into(),
            ..a.clone()
        };
        assert_eq!(a.config_hash(), d.config_hash());
    }

    #[test]
    fn per_command_validation() {
        let mut m = RunConfig::new(Command::Monitor);
        assert!(m.validate().is_err());
        m.datasets = vec!["train.csv".into()];
        assert!(m.validate().is_err());
        m.schedule = Some(ScheduleConfig::variable(1000));
        m.validate().unwrap();
        assert_eq!(m.schedule.as_ref().unwrap().kind, ScheduleKind::Variable);

        let mut c = RunConfig::new(Command::Calibrate);
        c.quantity = Quantity::SrAlarmTime;
        assert!(c.validate().is_err());
        c.threshold = Some(1000.0);
        c.validate().unwrap();

        let mut r = RunConfig::new(Command::Replicate);
        r.datasets = vec!["a".into(), "b".into()];
        r.predictions = vec!["pa".into()];
        assert!(r.validate().is_err());
        r.predictions.push("pb".into());
        assert!(r.validate().is_err());
        r.score_kind = Some(ScorerKind::SignedResidual);
        r.validate().unwrap();

        let mut s = RunConfig::new(Command::Simulate);
        s.delimiter = 'é';
        assert!(s.validate().is_err());
        s.delimiter = ';';
        s.validate().unwrap();
        s.detectors = vec![DetectorSpec::new(DetectorKind::Ville, 1.0)];
        assert!(s.validate().is_err());
    }

    #[test]
    fn log_record_flattens_event() {
        let event = AlarmEvent {
            stage: crate::schedules::Stage::Opening,
            step: 12,
            delay: 2,
            firing_folds: Vec::new(),
        };
        let rec = AlarmLogRecord {
            run_id: "r".into(),
            config_hash: "h".into(),
            timestamp_ms: 1,
            input_line: 7,
            event,
        };
        let json = serde_json::to_value(&rec).unwrap();
        assert_eq!(json["stage"], "opening");
        assert_eq!(json["delay"], 2);
        let back: AlarmLogRecord = serde_json::from_value(json).unwrap();
        assert_eq!(back, rec);
    }
}
