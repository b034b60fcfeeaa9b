use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dissemination::Mode;
use crate::overlay::HpvParams;

/// Ticks per simulated minute; churn is applied at this period.
pub const TICKS_PER_MINUTE: u64 = 60;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Topology {
    /// Every client connected only to the single server.
    Star,
    /// Partial views maintained by the membership protocol.
    HyParView,
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Topology::Star => "star",
            Topology::HyParView => "hyparview",
        })
    }
}

impl FromStr for Topology {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "star" => Ok(Topology::Star),
            "hyparview" => Ok(Topology::HyParView),
            other => Err(format!(
                "unknown topology {other:?} (expected star or hyparview)"
            )),
        }
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "state" => Ok(Mode::State),
            "delta" => Ok(Mode::Delta),
            other => Err(format!("unknown mode {other:?} (expected state or delta)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error(
        "delta-based dissemination is not available with the star topology: \
         the server would have to buffer every change for every client"
    )]
    StarWithDelta,
    #[error("churn is only supported with the hyparview topology")]
    StarWithChurn,
    #[error("churn probability {0} is outside [0, 1]")]
    ChurnOutOfRange(String),
    #[error(
        "{impressions} impressions every {interval} ticks do not fit in a duration of {duration} ticks"
    )]
    DurationTooShort {
        impressions: u64,
        interval: u64,
        duration: u64,
    },
    #[error("latency range {min},{max} is invalid: need 1 <= min <= max")]
    Latency { min: u64, max: u64 },
    #[error("{0} must be at least 1")]
    Zero(&'static str),
    #[error(transparent)]
    Overlay(#[from] crate::overlay::OverlayError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub client_count: usize,
    pub topology: Topology,
    pub mode: Mode,
    pub impression_interval: u64,
    pub propagation_interval: u64,
    /// Length of the event-generation phase the workload is sized for.
    pub duration: u64,
    pub ad_count: usize,
    pub contracts_per_ad: usize,
    pub threshold: u64,
    pub impressions_per_client: u64,
    /// Inclusive range of per-message delays, in ticks.
    pub latency: (u64, u64),
    /// Probability that each client is killed and replaced, per minute.
    pub churn: Option<f64>,
    pub seed: u64,
    pub hpv: HpvParams,
    /// Clients also hold retirement triggers (the server always does).
    pub client_triggers: bool,
    /// Delta rounds without acknowledgement progress before a peer is sent
    /// the full state.
    pub fallback_after: u32,
    /// The run fails if it has not finished `timeout_factor * duration`
    /// ticks after the experiment started.
    pub timeout_factor: u64,
    pub overlay_dump: bool,
    /// Period of diameter samples and overlay dumps.
    pub sample_interval: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            client_count: 32,
            topology: Topology::HyParView,
            mode: Mode::Delta,
            impression_interval: 10,
            propagation_interval: 5,
            duration: 1800,
            ad_count: 10,
            contracts_per_ad: 1,
            threshold: 500,
            impressions_per_client: 180,
            latency: (1, 1),
            churn: None,
            seed: 1,
            hpv: HpvParams::default(),
            client_triggers: false,
            fallback_after: 3,
            timeout_factor: 3,
            overlay_dump: false,
            sample_interval: 60,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("client count", self.client_count as u64),
            ("impression interval", self.impression_interval),
            ("propagation interval", self.propagation_interval),
            ("duration", self.duration),
            ("ad count", self.ad_count as u64),
            ("contracts per ad", self.contracts_per_ad as u64),
            ("threshold", self.threshold),
            ("impressions per client", self.impressions_per_client),
            ("timeout factor", self.timeout_factor),
            ("sample interval", self.sample_interval),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(ConfigError::Zero(name));
        }
        if self.topology == Topology::Star && self.mode == Mode::Delta {
            return Err(ConfigError::StarWithDelta);
        }
        if let Some(p) = self.churn {
            if !(0.0..=1.0).contains(&p) {
                return Err(ConfigError::ChurnOutOfRange(p.to_string()));
            }
            if self.topology == Topology::Star {
                return Err(ConfigError::StarWithChurn);
            }
        }
        if self.impressions_per_client * self.impression_interval > self.duration {
            return Err(ConfigError::DurationTooShort {
                impressions: self.impressions_per_client,
                interval: self.impression_interval,
                duration: self.duration,
            });
        }
        let (min, max) = self.latency;
        if min == 0 || min > max {
            return Err(ConfigError::Latency { min, max });
        }
        self.hpv.validate()?;
        Ok(())
    }

    pub fn expected_total(&self) -> u64 {
        self.client_count as u64 * self.impressions_per_client
    }

    /// Every parameter as `key: value`, in a fixed order.
    pub fn echo(&self) -> Vec<(&'static str, String)> {
        let h = &self.hpv;
        vec![
            ("clients", self.client_count.to_string()),
            ("topology", self.topology.to_string()),
            ("mode", self.mode.to_string()),
            ("impression_interval", self.impression_interval.to_string()),
            (
                "propagation_interval",
                self.propagation_interval.to_string(),
            ),
            ("duration", self.duration.to_string()),
            ("ads", self.ad_count.to_string()),
            ("contracts_per_ad", self.contracts_per_ad.to_string()),
            ("threshold", self.threshold.to_string()),
            (
                "impressions_per_client",
                self.impressions_per_client.to_string(),
            ),
            ("latency", format!("{},{}", self.latency.0, self.latency.1)),
            (
                "churn",
                self.churn
                    .map_or_else(|| "none".to_owned(), |p| p.to_string()),
            ),
            ("seed", self.seed.to_string()),
            (
                "hyparview",
                format!(
                    "active={} passive={} arwl={} prwl={} shuffle={} sample={}+{}",
                    h.active_max,
                    h.passive_max,
                    h.active_random_walk_length,
                    h.passive_random_walk_length,
                    h.shuffle_interval_ticks,
                    h.shuffle_active_sample,
                    h.shuffle_passive_sample
                ),
            ),
            ("client_triggers", self.client_triggers.to_string()),
            ("fallback_after", self.fallback_after.to_string()),
            ("timeout_factor", self.timeout_factor.to_string()),
            ("sample_interval", self.sample_interval.to_string()),
        ]
    }

    /// Short stable identifier derived from every parameter.
    pub fn run_id(&self) -> String {
        let mut hasher = Sha256::new();
        for (key, value) in self.echo() {
            hasher.update(key.as_bytes());
            hasher.update(b"=");
            hasher.update(value.as_bytes());
            hasher.update(b"\n");
        }
        let digest = hex::encode(hasher.finalize());
        format!(
            "{}-{}-{}-s{}-{}",
            self.topology,
            self.mode,
            self.client_count,
            self.seed,
            &digest[..12]
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        ExperimentConfig::default().validate().unwrap();
        let star = ExperimentConfig {
            topology: Topology::Star,
            mode: Mode::State,
            ..Default::default()
        };
        star.validate().unwrap();
    }

    #[test]
    fn star_delta_rejected() {
        let cfg = ExperimentConfig {
            topology: Topology::Star,
            mode: Mode::Delta,
            ..Default::default()
        };
        assert_eq!(cfg.validate(), Err(ConfigError::StarWithDelta));
    }

    #[test]
    fn workload_must_fit() {
        let cfg = ExperimentConfig {
            duration: 1799,
            ..Default::default()
        };
        assert!(matches!(
            cfg.validate(),
            Err(ConfigError::DurationTooShort { .. })
        ));
    }

    #[test]
    fn bad_latency_and_churn() {
        let cfg = ExperimentConfig {
            latency: (0, 2),
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(ConfigError::Latency { .. })));
        let cfg = ExperimentConfig {
            churn: Some(1.5),
            ..Default::default()
        };
        assert!(matches!(
            cfg.validate(),
            Err(ConfigError::ChurnOutOfRange(_))
        ));
    }

    #[test]
    fn run_id_tracks_every_parameter() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig {
            seed: 2,
            ..a.clone()
        };
        let c = ExperimentConfig {
            client_triggers: true,
            ..a.clone()
        };
        assert_eq!(a.run_id(), a.clone().run_id());
        assert_ne!(a.run_id(), b.run_id());
        assert_ne!(a.run_id(), c.run_id());
    }
}
