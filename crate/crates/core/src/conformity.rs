//! Conformity measures.
//!
//! Scores computed from a fitted model (`y - ŷ`, `|y - ŷ|`, the PIT of an
//! ensemble) or from the training set proper alone (distance to the nearest
//! training sample). A built-in 1-nearest-neighbour regressor stands in for
//! external models so that runs are self-contained.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub features: Vec<f64>,
    pub label: f64,
}

impl Observation {
    pub fn new(features: Vec<f64>, label: f64) -> Self {
        Self { features, label }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub point: Option<f64>,
    pub ensemble: Option<Vec<f64>>,
}

impl PredictionRecord {
    pub fn point(y_hat: f64) -> Self {
        Self {
            point: Some(y_hat),
            ensemble: None,
        }
    }

    pub fn ensemble(members: Vec<f64>) -> Self {
        let mean = members.iter().sum::<f64>() / members.len().max(1) as f64;
        Self {
            point: (!members.is_empty()).then_some(mean),
            ensemble: Some(members),
        }
    }

    /// Checks that a supplied point prediction agrees with the ensemble mean.
    pub fn validate(&self) -> Result<()> {
        if let (Some(point), Some(members)) = (self.point, &self.ensemble) {
            if members.is_empty() {
                return Err(Error::MissingEnsemble);
            }
            let mean = members.iter().sum::<f64>() / members.len() as f64;
            if (point - mean).abs() > 1e-9 * mean.abs().max(1.0) {
                return Err(Error::invalid(format!(
                    "point prediction {point} differs from ensemble mean {mean}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerKind {
    SignedResidual,
    AbsoluteResidual,
    Pit,
    NearestDistance,
}

pub fn score_signed(obs: &Observation, pred: &PredictionRecord) -> Result<f64> {
    let y_hat = pred.point.ok_or(Error::MissingPrediction)?;
    Ok(obs.label - y_hat)
}

pub fn score_abs(obs: &Observation, pred: &PredictionRecord) -> Result<f64> {
    score_signed(obs, pred).map(f64::abs)
}

/// Fraction of ensemble members `<= y` (inclusive).
pub fn score_pit(obs: &Observation, pred: &PredictionRecord) -> Result<f64> {
    let members = pred
        .ensemble
        .as_deref()
        .filter(|m| !m.is_empty())
        .ok_or(Error::MissingEnsemble)?;
    let below = members.iter().filter(|&&m| m <= obs.label).count();
    Ok(below as f64 / members.len() as f64)
}

pub fn score(kind: ScorerKind, obs: &Observation, pred: &PredictionRecord) -> Result<f64> {
    match kind {
        ScorerKind::SignedResidual => score_signed(obs, pred),
        ScorerKind::AbsoluteResidual => score_abs(obs, pred),
        ScorerKind::Pit => score_pit(obs, pred),
        ScorerKind::NearestDistance => Err(Error::Unsupported(
            "nearest distance needs the training set proper, not a prediction".into(),
        )),
    }
}

#[inline]
fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest training sample and its squared distance; ties go to
/// the lowest index.
fn nearest(training: &[Observation], query: &[f64]) -> Result<(usize, f64)> {
    let first = training
        .first()
        .ok_or(Error::Empty("training set proper"))?;
    let dim = first.features.len();
    if query.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: query.len(),
        });
    }
    let mut best = (0, f64::INFINITY);
    for (i, t) in training.iter().enumerate() {
        if t.features.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: t.features.len(),
            });
        }
        let d = squared_distance(&t.features, query);
        if d < best.1 {
            best = (i, d);
        }
    }
    Ok(best)
}

/// Euclidean distance from `obs` to the closest training-proper sample.
/// Labels are ignored.
pub fn score_nearest_distance(obs: &Observation, training_proper: &[Observation]) -> Result<f64> {
    nearest(training_proper, &obs.features).map(|(_, d)| d.sqrt())
}

/// 1-NN regression: label of the closest training sample.
pub fn knn1_fit_predict(training_proper: &[Observation], query: &[f64]) -> Result<f64> {
    nearest(training_proper, query).map(|(i, _)| training_proper[i].label)
}

/// Per-feature centering and scaling with training statistics.
///
/// Uses the population standard deviation. A feature that is constant in
/// the training set is centered only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
}

impl Standardizer {
    pub fn fit(train: &[Observation]) -> Result<Self> {
        let first = train.first().ok_or(Error::Empty("training set"))?;
        let dim = first.features.len();
        let n = train.len() as f64;
        let mut means = vec![0.0; dim];
        for o in train {
            if o.features.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: o.features.len(),
                });
            }
            for (m, x) in means.iter_mut().zip(&o.features) {
                *m += x;
            }
        }
        means.iter_mut().for_each(|m| *m /= n);
        let mut vars = vec![0.0; dim];
        for o in train {
            for ((v, x), m) in vars.iter_mut().zip(&o.features).zip(&means) {
                *v += (x - m) * (x - m);
            }
        }
        let scales = vars
            .into_iter()
            .map(|v| {
                let sd = (v / n).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { means, scales })
    }

    pub fn transform_features(&self, features: &[f64]) -> Result<Vec<f64>> {
        if features.len() != self.means.len() {
            return Err(Error::DimensionMismatch {
                expected: self.means.len(),
                got: features.len(),
            });
        }
        Ok(features
            .iter()
            .zip(self.means.iter().zip(&self.scales))
            .map(|(x, (m, s))| (x - m) / s)
            .collect())
    }

    pub fn transform(&self, obs: &Observation) -> Result<Observation> {
        Ok(Observation {
            features: self.transform_features(&obs.features)?,
            label: obs.label,
        })
    }

    pub fn transform_all(&self, data: &[Observation]) -> Result<Vec<Observation>> {
        data.iter().map(|o| self.transform(o)).collect()
    }
}

/// Fits on `train` and transforms `apply_to`; the fitted statistics are
/// returned for reuse on later streams.
pub fn standardize(
    train: &[Observation],
    apply_to: &[Observation],
) -> Result<(Vec<Observation>, Standardizer)> {
    let scaler = Standardizer::fit(train)?;
    let out = scaler.transform_all(apply_to)?;
    Ok((out, scaler))
}

/// Conformity measures that need nothing beyond the training set proper.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuiltinScorer {
    /// `y - ŷ` with ŷ from 1-NN on standardized features.
    Signed1Nn,
    /// `|y - ŷ|` with ŷ from 1-NN on standardized features.
    Abs1Nn,
    /// Distance to the nearest training sample on raw features.
    NearestDistance,
    /// Distance to the nearest training sample on standardized features.
    StandardizedNearestDistance,
}

impl BuiltinScorer {
    pub fn name(self) -> &'static str {
        match self {
            Self::Signed1Nn => "signed-1nn",
            Self::Abs1Nn => "abs-1nn",
            Self::NearestDistance => "nd",
            Self::StandardizedNearestDistance => "fnd",
        }
    }

    fn standardized(self) -> bool {
        !matches!(self, Self::NearestDistance)
    }
}

impl std::str::FromStr for BuiltinScorer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "signed-1nn" | "signed" | "1nn" => Ok(Self::Signed1Nn),
            "abs-1nn" | "abs" => Ok(Self::Abs1Nn),
            "nd" => Ok(Self::NearestDistance),
            "fnd" => Ok(Self::StandardizedNearestDistance),
            other => Err(Error::invalid(format!("unknown scorer '{other}'"))),
        }
    }
}

/// A built-in conformity measure fitted to one training set proper.
#[derive(Debug, Clone)]
pub struct FittedScorer {
    kind: BuiltinScorer,
    training: Vec<Observation>,
    scaler: Option<Standardizer>,
}

impl FittedScorer {
    pub fn fit(kind: BuiltinScorer, training_proper: &[Observation]) -> Result<Self> {
        if training_proper.is_empty() {
            return Err(Error::Empty("training set proper"));
        }
        let (training, scaler) = if kind.standardized() {
            let (t, s) = standardize(training_proper, training_proper)?;
            (t, Some(s))
        } else {
            // validates dimensions
            Standardizer::fit(training_proper)?;
            (training_proper.to_vec(), None)
        };
        Ok(Self {
            kind,
            training,
            scaler,
        })
    }

    pub fn kind(&self) -> BuiltinScorer {
        self.kind
    }

    pub fn score(&self, obs: &Observation) -> Result<f64> {
        let query = match &self.scaler {
            Some(s) => s.transform(obs)?,
            None => obs.clone(),
        };
        match self.kind {
            BuiltinScorer::Signed1Nn | BuiltinScorer::Abs1Nn => {
                let pred =
                    PredictionRecord::point(knn1_fit_predict(&self.training, &query.features)?);
                if self.kind == BuiltinScorer::Signed1Nn {
                    score_signed(obs, &pred)
                } else {
                    score_abs(obs, &pred)
                }
            }
            BuiltinScorer::NearestDistance | BuiltinScorer::StandardizedNearestDistance => {
                score_nearest_distance(&query, &self.training)
            }
        }
    }
}
