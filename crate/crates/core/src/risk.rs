//! Outbreak-risk classifier: a single logistic unit over the trailing 30-day
//! means of the reproduction number and of adult abundance per human.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forcing::centered_moving_average3;

pub const RISK_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_RISK_MODEL_TOML: &str = include_str!("../data/default_risk_model.toml");
/// Weeks whose smoothed count falls below this are not labeled.
pub const MIN_LABEL_CASES: f64 = 3.0;
pub const HIGH_RISK: f64 = 0.6;
pub const LOW_RISK: f64 = 0.4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledWeek {
    pub r0_ma: f64,
    pub vf_ma: f64,
    pub label: u8,
}

/// Automatic surrogate labels for a weekly case series. Week `w` gets 1 when
/// the centered 3-week mean rises strictly from week `w - 1`, 0 when it
/// falls, and `None` for ties, the first week, and weeks below
/// `MIN_LABEL_CASES`.
pub fn label_weeks(cases: &[f64]) -> Result<Vec<Option<u8>>> {
    if cases.len() < 5 {
        return Err(Error::invalid(format!(
            "labeling needs >= 5 weeks, got {}",
            cases.len()
        )));
    }
    if let Some(c) = cases.iter().find(|c| !(**c >= 0.0 && c.is_finite())) {
        return Err(Error::invalid(format!(
            "weekly cases must be finite and >= 0, got {c}"
        )));
    }
    let m = centered_moving_average3(cases);
    let mut out = vec![None];
    for w in 1..m.len() {
        out.push(if m[w] < MIN_LABEL_CASES || m[w] == m[w - 1] {
            None
        } else {
            Some(u8::from(m[w] > m[w - 1]))
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RiskBand {
    Low,
    Indeterminate,
    High,
}

/// `> 0.6` is high, `< 0.4` is low, the closed interval between is indeterminate.
pub fn band(risk: f64) -> RiskBand {
    if risk > HIGH_RISK {
        RiskBand::High
    } else if risk < LOW_RISK {
        RiskBand::Low
    } else {
        RiskBand::Indeterminate
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingInfo {
    pub epochs: usize,
    pub learning_rate: f64,
    pub samples: usize,
    pub final_loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiskModel {
    pub schema_version: u32,
    pub w0: f64,
    pub w1: f64,
    pub w2: f64,
    /// Feature means `[r0_ma, vf_ma]` used for standardization.
    pub mean: [f64; 2],
    /// Feature scales; strictly positive.
    pub scale: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainingInfo>,
}

impl RiskModel {
    /// The all-zero model on unscaled features; predicts 0.5 everywhere.
    pub fn zero() -> Self {
        Self::new([0.0; 3], [0.0; 2], [1.0; 2])
    }

    /// The shipped hand-set model.
    pub fn default_model() -> Self {
        Self::from_toml_str(DEFAULT_RISK_MODEL_TOML).expect("shipped risk model is valid")
    }

    pub fn new(w: [f64; 3], mean: [f64; 2], scale: [f64; 2]) -> Self {
        Self {
            schema_version: RISK_SCHEMA_VERSION,
            w0: w[0],
            w1: w[1],
            w2: w[2],
            mean,
            scale,
            training: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != RISK_SCHEMA_VERSION {
            return Err(Error::Format(format!(
                "risk model schema_version {} is not supported (expected {RISK_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if ![self.w0, self.w1, self.w2, self.mean[0], self.mean[1]]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(Error::ModelInvalid(
                "risk model weights must be finite".into(),
            ));
        }
        if !self.scale.iter().all(|s| *s > 0.0 && s.is_finite()) {
            return Err(Error::ModelInvalid("risk model scales must be > 0".into()));
        }
        Ok(())
    }

    pub fn weights(&self) -> [f64; 3] {
        [self.w0, self.w1, self.w2]
    }

    fn standardize(&self, r0_ma: f64, vf_ma: f64) -> [f64; 2] {
        [
            (r0_ma - self.mean[0]) / self.scale[0],
            (vf_ma - self.mean[1]) / self.scale[1],
        ]
    }

    /// Outbreak probability, strictly inside (0, 1).
    pub fn predict(&self, r0_ma: f64, vf_ma: f64) -> f64 {
        let x = self.standardize(r0_ma, vf_ma);
        let p = sigmoid(self.w0 + self.w1 * x[0] + self.w2 * x[1]);
        p.clamp(f64::EPSILON, 1.0 - f64::EPSILON)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let m: RiskModel = toml::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("plain struct serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()).map_err(|e| Error::io(path, e))
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Mean logistic loss and its gradient with respect to `[w0, w1, w2]` on
/// already standardized features.
pub fn loss_and_gradient(w: [f64; 3], x: &[[f64; 2]], y: &[u8]) -> (f64, [f64; 3]) {
    let n = x.len().max(1) as f64;
    let mut loss = 0.0;
    let mut g = [0.0; 3];
    for (xi, &yi) in x.iter().zip(y) {
        let z = w[0] + w[1] * xi[0] + w[2] * xi[1];
        loss += softplus(z) - f64::from(yi) * z;
        let r = sigmoid(z) - f64::from(yi);
        g[0] += r;
        g[1] += r * xi[0];
        g[2] += r * xi[1];
    }
    (loss / n, g.map(|v| v / n))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5000,
            learning_rate: 0.5,
        }
    }
}

/// Full-batch gradient descent from zero weights on standardized features.
/// Returns the model and the loss after every epoch.
pub fn train_with_history(
    data: &[LabeledWeek],
    cfg: &TrainConfig,
) -> Result<(RiskModel, Vec<f64>)> {
    if data.is_empty() {
        return Err(Error::invalid("no training data"));
    }
    if !(cfg.learning_rate > 0.0 && cfg.learning_rate.is_finite()) {
        return Err(Error::invalid("learning rate must be > 0"));
    }
    for d in data {
        if !(d.r0_ma >= 0.0 && d.r0_ma.is_finite() && d.vf_ma >= 0.0 && d.vf_ma.is_finite()) {
            return Err(Error::invalid(format!(
                "features must be finite and >= 0, got ({}, {})",
                d.r0_ma, d.vf_ma
            )));
        }
        if d.label > 1 {
            return Err(Error::invalid(format!("label {} is not 0 or 1", d.label)));
        }
    }
    let positives = data.iter().filter(|d| d.label == 1).count();
    if positives == 0 || positives == data.len() {
        return Err(Error::invalid("training data must contain both labels"));
    }
    let n = data.len() as f64;
    let feature = |k: usize, d: &LabeledWeek| if k == 0 { d.r0_ma } else { d.vf_ma };
    let mut mean = [0.0; 2];
    let mut scale = [1.0; 2];
    for k in 0..2 {
        mean[k] = data.iter().map(|d| feature(k, d)).sum::<f64>() / n;
        let var = data
            .iter()
            .map(|d| (feature(k, d) - mean[k]).powi(2))
            .sum::<f64>()
            / n;
        if var > 0.0 {
            scale[k] = var.sqrt();
        }
    }
    let x: Vec<[f64; 2]> = data
        .iter()
        .map(|d| {
            [
                (d.r0_ma - mean[0]) / scale[0],
                (d.vf_ma - mean[1]) / scale[1],
            ]
        })
        .collect();
    let y: Vec<u8> = data.iter().map(|d| d.label).collect();
    let mut w = [0.0; 3];
    let mut history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let (_, g) = loss_and_gradient(w, &x, &y);
        for k in 0..3 {
            w[k] -= cfg.learning_rate * g[k];
        }
        history.push(loss_and_gradient(w, &x, &y).0);
    }
    let mut model = RiskModel::new(w, mean, scale);
    model.validate()?;
    let acc = accuracy(&model, data);
    model.training = Some(TrainingInfo {
        epochs: cfg.epochs,
        learning_rate: cfg.learning_rate,
        samples: data.len(),
        final_loss: history
            .last()
            .copied()
            .unwrap_or_else(|| loss_and_gradient(w, &x, &y).0),
        accuracy: acc,
    });
    Ok((model, history))
}

pub fn train(data: &[LabeledWeek], cfg: &TrainConfig) -> Result<RiskModel> {
    train_with_history(data, cfg).map(|(m, _)| m)
}

pub fn accuracy(model: &RiskModel, data: &[LabeledWeek]) -> f64 {
    let correct = data
        .iter()
        .filter(|d| u8::from(model.predict(d.r0_ma, d.vf_ma) > 0.5) == d.label)
        .count();
    correct as f64 / data.len().max(1) as f64
}

/// Training rows: one per labeled week, features taken from `r0_ma` and
/// `vf_ma` at the same week index.
pub fn labeled_dataset(cases: &[f64], r0_ma: &[f64], vf_ma: &[f64]) -> Result<Vec<LabeledWeek>> {
    if r0_ma.len() != cases.len() || vf_ma.len() != cases.len() {
        return Err(Error::invalid(
            "cases and features must have one entry per week",
        ));
    }
    Ok(label_weeks(cases)?
        .into_iter()
        .enumerate()
        .filter_map(|(w, l)| {
            l.map(|label| LabeledWeek {
                r0_ma: r0_ma[w],
                vf_ma: vf_ma[w],
                label,
            })
        })
        .collect())
}

pub const FEATURE_WEEKS_HEADER: [&str; 4] = ["week_start", "cases", "r0_ma", "vf_ma"];

/// Weekly cases with the model features for the same weeks.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureWeeks {
    pub week_starts: Vec<chrono::NaiveDate>,
    pub cases: Vec<f64>,
    pub r0_ma: Vec<f64>,
    pub vf_ma: Vec<f64>,
}

impl FeatureWeeks {
    pub fn dataset(&self) -> Result<Vec<LabeledWeek>> {
        labeled_dataset(&self.cases, &self.r0_ma, &self.vf_ma)
    }
}

/// Reads `week_start,cases,r0_ma,vf_ma`.
pub fn load_feature_weeks(path: &Path) -> Result<FeatureWeeks> {
    let mut rdr = crate::forcing::csv_reader(path)?;
    crate::forcing::check_header(&mut rdr, path, &FEATURE_WEEKS_HEADER)?;
    let mut out = FeatureWeeks {
        week_starts: Vec::new(),
        cases: Vec::new(),
        r0_ma: Vec::new(),
        vf_ma: Vec::new(),
    };
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.position().map_or(0, |p| p.line()),
            msg: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let perr = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        if rec.len() != 4 {
            return Err(perr(format!("expected 4 fields, found {}", rec.len())));
        }
        out.week_starts
            .push(crate::forcing::parse_date(&rec[0]).map_err(perr)?);
        out.cases
            .push(crate::forcing::parse_f64(&rec[1], "cases").map_err(perr)?);
        out.r0_ma
            .push(crate::forcing::parse_f64(&rec[2], "r0_ma").map_err(perr)?);
        out.vf_ma
            .push(crate::forcing::parse_f64(&rec[3], "vf_ma").map_err(perr)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_model_is_one_half() {
        let m = RiskModel::zero();
        assert_eq!(m.predict(0.0, 0.0), 0.5);
        assert_eq!(m.predict(7.0, 123.0), 0.5);
    }

    #[test]
    fn increasing_counts_label_one() {
        let c: Vec<f64> = (0..10).map(|w| 10.0 + 5.0 * w as f64).collect();
        let l = label_weeks(&c).unwrap();
        assert_eq!(l[0], None);
        assert!(l[1..].iter().all(|v| *v == Some(1)));
    }

    #[test]
    fn constant_counts_are_ties() {
        assert!(label_weeks(&[20.0; 8]).unwrap().iter().all(Option::is_none));
    }

    #[test]
    fn low_activity_excluded() {
        assert!(label_weeks(&[0.0, 1.0, 2.0, 1.0, 0.0, 2.0])
            .unwrap()
            .iter()
            .all(Option::is_none));
    }

    #[test]
    fn short_series_rejected() {
        assert!(label_weeks(&[1.0; 4]).is_err());
    }

    #[test]
    fn bands_at_boundaries() {
        assert_eq!(band(0.4), RiskBand::Indeterminate);
        assert_eq!(band(0.6), RiskBand::Indeterminate);
        assert_eq!(band(0.3999), RiskBand::Low);
        assert_eq!(band(0.6001), RiskBand::High);
    }

    #[test]
    fn single_class_refused() {
        let d = vec![
            LabeledWeek {
                r0_ma: 1.0,
                vf_ma: 1.0,
                label: 1
            };
            5
        ];
        assert!(train(&d, &TrainConfig::default()).is_err());
    }

    #[test]
    fn toml_roundtrip_and_version_check() {
        let m = RiskModel::new([0.1, 2.0, -1.0], [1.0, 3.0], [0.5, 2.0]);
        assert_eq!(RiskModel::from_toml_str(&m.to_toml_string()).unwrap(), m);
        let bad = m
            .to_toml_string()
            .replace("schema_version = 1", "schema_version = 9");
        assert!(matches!(
            RiskModel::from_toml_str(&bad),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn extreme_inputs_stay_inside_unit_interval() {
        let m = RiskModel::new([0.0, 100.0, 100.0], [0.0; 2], [1.0; 2]);
        let p = m.predict(1e6, 1e6);
        assert!(p < 1.0 && p > 0.0);
        let q = m.predict(-1e6, -1e6);
        assert!(q > 0.0 && q < 1.0);
    }
}
