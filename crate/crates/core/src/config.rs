//! JSON scenario files.
//!
//! ```json
//! {
//!   "radio":   { "bandwidth_hz": 180000, "noise_psd_dbm_hz": -130, "alpha": 1 },
//!   "budgets": { "t_max_s": 50, "e_max_j": 1, "p_max_w": 0.06 },
//!   "pathloss_db": -90,
//!   "users": [
//!     { "id": 1, "channel": "random", "bits_per_sample": 6276, "dataset_size": 3000 },
//!     { "id": 2, "channel_gain_db": -92.5, "bits_per_sample": 324, "dataset_size": 500 },
//!     { "id": 3, "bits_per_sample": 1e6, "dataset_size": 1000, "fixed_rate_samples_per_s": 10 }
//!   ],
//!   "tasks": [ { "id": "cnn", "a": 7.3, "b": 0.69, "c": 300, "users": [1] } ]
//! }
//! ```
//!
//! `"channel": "random"` draws `|h|²` from a Rayleigh channel with mean
//! `pathloss_db` each time the file is resolved. Fixed-rate users need no
//! channel. `allow_overlap` (default false) lets a user serve several tasks.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    db_to_linear, Budgets, LearningErrorModel, RadioParams, Scenario, UserId, UserLink,
};
use crate::sim::draw_channel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadioConfig {
    pub bandwidth_hz: f64,
    pub noise_psd_dbm_hz: f64,
    #[serde(default = "one")]
    pub alpha: f64,
}

fn one() -> f64 {
    1.0
}

fn default_pathloss() -> f64 {
    -90.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetConfig {
    pub t_max_s: f64,
    pub e_max_j: f64,
    pub p_max_w: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserConfig {
    pub id: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel_gain_db: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel: Option<ChannelKind>,
    pub bits_per_sample: f64,
    pub dataset_size: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_rate_samples_per_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub id: String,
    pub a: f64,
    pub b: f64,
    #[serde(default)]
    pub c: f64,
    pub users: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub radio: RadioConfig,
    pub budgets: BudgetConfig,
    #[serde(default = "default_pathloss")]
    pub pathloss_db: f64,
    #[serde(default)]
    pub allow_overlap: bool,
    pub users: Vec<UserConfig>,
    pub tasks: Vec<TaskConfig>,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidInput(format!("scenario JSON: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidInput(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn has_random_channels(&self) -> bool {
        self.users
            .iter()
            .any(|u| u.channel == Some(ChannelKind::Random))
    }

    /// Builds the scenario, drawing random channels from `rng` in user order.
    pub fn resolve<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Scenario> {
        let radio = RadioParams::from_noise_psd(
            self.radio.bandwidth_hz,
            self.radio.noise_psd_dbm_hz,
            self.radio.alpha,
        )?;
        let budgets = Budgets::new(
            self.budgets.t_max_s,
            self.budgets.e_max_j,
            self.budgets.p_max_w,
        )?;
        let pathloss = db_to_linear(self.pathloss_db);
        let mut users = Vec::with_capacity(self.users.len());
        for u in &self.users {
            let gain = match (u.channel_gain_db, u.channel, u.fixed_rate_samples_per_s) {
                (Some(_), Some(_), _) => {
                    return Err(Error::InvalidInput(format!(
                        "user {} gives both channel_gain_db and channel",
                        u.id
                    )))
                }
                (Some(db), None, _) => db_to_linear(db),
                (None, Some(ChannelKind::Random), _) => draw_channel(rng, pathloss),
                // the gain of a fixed-rate link is never used
                (None, None, Some(_)) => pathloss,
                (None, None, None) => {
                    return Err(Error::InvalidInput(format!(
                        "user {} needs channel_gain_db, \"channel\": \"random\" or a fixed rate",
                        u.id
                    )))
                }
            };
            let mut link = UserLink::new(u.id, gain, u.bits_per_sample, u.dataset_size);
            if let Some(rate) = u.fixed_rate_samples_per_s {
                link = link.with_fixed_rate(rate * u.bits_per_sample);
            }
            users.push(link);
        }
        let tasks = self
            .tasks
            .iter()
            .map(|t| {
                LearningErrorModel::new(
                    t.id.clone(),
                    t.a,
                    t.b,
                    t.c,
                    t.users.iter().map(|&i| UserId(i)).collect(),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        if self.allow_overlap {
            Scenario::with_overlap(tasks, users, radio, budgets)
        } else {
            Scenario::new(tasks, users, radio, budgets)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const TEXT: &str = r#"{
        "radio": { "bandwidth_hz": 180000, "noise_psd_dbm_hz": -130 },
        "budgets": { "t_max_s": 50, "e_max_j": 1, "p_max_w": 0.06 },
        "users": [
            { "id": 1, "channel": "random", "bits_per_sample": 6276, "dataset_size": 3000 },
            { "id": 2, "channel_gain_db": -90, "bits_per_sample": 324, "dataset_size": 500 },
            { "id": 3, "bits_per_sample": 100, "dataset_size": 50, "fixed_rate_samples_per_s": 10 }
        ],
        "tasks": [
            { "id": "cnn", "a": 7.3, "b": 0.69, "c": 300, "users": [1] },
            { "id": "svm", "a": 6.24, "b": 0.72, "c": 200, "users": [2, 3] }
        ]
    }"#;

    #[test]
    fn resolves_all_channel_kinds() {
        let cfg = ScenarioConfig::from_json(TEXT).unwrap();
        assert!(cfg.has_random_channels());
        let s = cfg.resolve(&mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!((s.users()[1].channel_gain - 1e-9).abs() < 1e-24);
        assert_eq!(s.users()[2].fixed_rate, Some(1000.0));
        assert!((s.radio().noise_power - 1.8e-11).abs() < 1e-24);
        assert_eq!(s.radio().alpha, 1.0);
    }

    #[test]
    fn same_seed_same_channels() {
        let cfg = ScenarioConfig::from_json(TEXT).unwrap();
        let a = cfg.resolve(&mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = cfg.resolve(&mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_channel_specs_and_unknown_keys() {
        let both = TEXT.replace(
            r#""channel_gain_db": -90"#,
            r#""channel_gain_db": -90, "channel": "random""#,
        );
        let cfg = ScenarioConfig::from_json(&both).unwrap();
        assert!(matches!(
            cfg.resolve(&mut ChaCha8Rng::seed_from_u64(0)),
            Err(Error::InvalidInput(_))
        ));
        let none = TEXT.replace(r#""channel_gain_db": -90, "#, "");
        let cfg = ScenarioConfig::from_json(&none).unwrap();
        assert!(matches!(
            cfg.resolve(&mut ChaCha8Rng::seed_from_u64(0)),
            Err(Error::InvalidInput(_))
        ));
        let typo = TEXT.replace("dataset_size\": 3000", "datasetsize\": 3000");
        assert!(ScenarioConfig::from_json(&typo).is_err());
    }

    #[test]
    fn round_trips_through_json() {
        let cfg = ScenarioConfig::from_json(TEXT).unwrap();
        let again = ScenarioConfig::from_json(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(cfg, again);
    }
}
