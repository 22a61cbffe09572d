//! Scenario files: JSON documents describing places, actors, the attack
//! and protocol parameters. All times are simulated seconds from epoch
//! midnight.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actguard::{self, Neighborhood};
use crate::agents::DeviceParams;
use crate::gaen::{RiskConfig, RotationSchedule};
use crate::radio::{Place, RadioConfig};
use crate::Position;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("invalid scenario JSON: {0}")]
    Parse(String),
    #[error("duplicate place name {0:?}")]
    DuplicatePlace(String),
    #[error("place {place:?}: {reason}")]
    BadPlace { place: String, reason: String },
    #[error("duplicate actor name {0:?}")]
    DuplicateActor(String),
    #[error("actor {actor:?} has unknown role {role:?}")]
    UnknownRole { actor: String, role: String },
    #[error("actor {actor:?} references unknown place {place:?}")]
    UnknownPlace { actor: String, place: String },
    #[error("actor {actor:?} is placed outside place {place:?}")]
    OutsidePlace { actor: String, place: String },
    #[error("actor {actor:?}: waypoints must have strictly increasing times")]
    UnorderedWaypoints { actor: String },
    #[error("diagnosis references unknown actor {0:?}")]
    UnknownActor(String),
    #[error("diagnosis target {0:?} is not an honest actor")]
    NotHonest(String),
    #[error("diagnosis of {actor:?} at {at_time} s is not before the end of the run")]
    DiagnosisAfterEnd { actor: String, at_time: u64 },
    #[error("invalid protocol parameters: {0}")]
    BadProtocol(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub enum Role {
    Honest,
    Sniffer,
    Rebroadcaster,
    /// Parsed but rejected by validation.
    Unknown(String),
}

impl From<String> for Role {
    fn from(s: String) -> Self {
        match s.as_str() {
            "honest" => Self::Honest,
            "sniffer" => Self::Sniffer,
            "rebroadcaster" => Self::Rebroadcaster,
            _ => Self::Unknown(s),
        }
    }
}

impl From<Role> for String {
    fn from(r: Role) -> Self {
        r.to_string()
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Honest => f.write_str("honest"),
            Self::Sniffer => f.write_str("sniffer"),
            Self::Rebroadcaster => f.write_str("rebroadcaster"),
            Self::Unknown(s) => f.write_str(s),
        }
    }
}

/// Displacement from a place center, in meters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Offset {
    #[serde(default)]
    pub north: f64,
    #[serde(default)]
    pub east: f64,
}

impl Offset {
    fn norm(&self) -> f64 {
        self.north.hypot(self.east)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Waypoint {
    pub at_time: u64,
    pub place: String,
    #[serde(default)]
    pub offset_m: Offset,
}

/// `"stationary"` or `{"waypoints": [...]}`; an actor jumps to each
/// waypoint at its time.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Movement {
    #[default]
    Stationary,
    Waypoints(Vec<Waypoint>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActorConfig {
    pub name: String,
    pub role: Role,
    pub place: String,
    #[serde(default)]
    pub actguard: bool,
    #[serde(default)]
    pub offset_m: Offset,
    #[serde(default)]
    pub movement: Movement,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tx_power_dbm: Option<i8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    pub relay_delay: u64,
    pub replay_ttl: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            relay_delay: 0,
            replay_ttl: 7_200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosisEvent {
    pub actor: String,
    pub at_time: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActGuardParams {
    pub cell_size_deg: f64,
    pub bucket_seconds: u64,
    pub neighborhood: Neighborhood,
}

impl Default for ActGuardParams {
    fn default() -> Self {
        let q = crate::Quantizer::default();
        Self {
            cell_size_deg: q.cell_size_deg,
            bucket_seconds: q.bucket_seconds,
            neighborhood: Neighborhood::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    pub tick: u64,
    pub rotation_period: u64,
    pub clock_tolerance: u64,
    pub tx_power_dbm: i8,
    pub exposure_check_interval: u64,
    pub otp_ttl: u64,
    pub radio: RadioConfig,
    pub actguard: ActGuardParams,
    pub risk: RiskConfig,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            tick: 10,
            rotation_period: RotationSchedule::default().rotation_period_s,
            clock_tolerance: 0,
            tx_power_dbm: 0,
            exposure_check_interval: 3_600,
            otp_ttl: crate::backend::DEFAULT_OTP_TTL_S,
            radio: RadioConfig::default(),
            actguard: ActGuardParams::default(),
            risk: RiskConfig::default(),
        }
    }
}

impl ProtocolConfig {
    pub fn device_params(&self) -> Result<DeviceParams, ConfigError> {
        let bad = |e: &dyn fmt::Display| ConfigError::BadProtocol(e.to_string());
        let schedule = RotationSchedule::new(self.rotation_period).map_err(|e| bad(&e))?;
        let quantizer = actguard::Quantizer::new(self.actguard.cell_size_deg, self.actguard.bucket_seconds)
            .map_err(|e| bad(&e))?;
        Ok(DeviceParams {
            schedule,
            quantizer,
            neighborhood: self.actguard.neighborhood,
            risk: self.risk,
            clock_tolerance_s: self.clock_tolerance,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    pub seed: u64,
    /// Simulated seconds.
    pub duration: u64,
    pub places: Vec<Place>,
    pub actors: Vec<ActorConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attack: Option<AttackConfig>,
    #[serde(default)]
    pub diagnosis_events: Vec<DiagnosisEvent>,
    #[serde(default)]
    pub protocol: ProtocolConfig,
}

impl ScenarioConfig {
    pub fn place(&self, name: &str) -> Option<&Place> {
        self.places.iter().find(|p| p.name == name)
    }

    pub fn actor(&self, name: &str) -> Option<&ActorConfig> {
        self.actors.iter().find(|a| a.name == name)
    }

    fn position_in(&self, actor: &str, place: &str, offset: &Offset) -> Result<Position, ConfigError> {
        let p = self.place(place).ok_or_else(|| ConfigError::UnknownPlace {
            actor: actor.to_owned(),
            place: place.to_owned(),
        })?;
        if offset.norm() > p.radius_m {
            return Err(ConfigError::OutsidePlace {
                actor: actor.to_owned(),
                place: place.to_owned(),
            });
        }
        Ok(p.center.offset_m(offset.north, offset.east))
    }

    /// `(from_time, position)` steps of an actor's trajectory, starting at 0.
    pub fn trajectory(&self, actor: &ActorConfig) -> Result<Vec<(u64, Position)>, ConfigError> {
        let mut steps = vec![(0, self.position_in(&actor.name, &actor.place, &actor.offset_m)?)];
        if let Movement::Waypoints(wps) = &actor.movement {
            let mut prev: Option<u64> = None;
            for wp in wps {
                if prev.is_some_and(|p| wp.at_time <= p) {
                    return Err(ConfigError::UnorderedWaypoints {
                        actor: actor.name.clone(),
                    });
                }
                prev = Some(wp.at_time);
                steps.push((wp.at_time, self.position_in(&actor.name, &wp.place, &wp.offset_m)?));
            }
        }
        Ok(steps)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut places = BTreeSet::new();
        for p in &self.places {
            if !places.insert(p.name.as_str()) {
                return Err(ConfigError::DuplicatePlace(p.name.clone()));
            }
            if !(p.radius_m > 0.0 && p.radius_m.is_finite()) {
                return Err(ConfigError::BadPlace {
                    place: p.name.clone(),
                    reason: "radius must be positive".into(),
                });
            }
            if !p.center.is_valid() {
                return Err(ConfigError::BadPlace {
                    place: p.name.clone(),
                    reason: "center is not a valid coordinate".into(),
                });
            }
        }

        let mut roles = BTreeMap::new();
        for a in &self.actors {
            if roles.insert(a.name.as_str(), &a.role).is_some() {
                return Err(ConfigError::DuplicateActor(a.name.clone()));
            }
            if let Role::Unknown(role) = &a.role {
                return Err(ConfigError::UnknownRole {
                    actor: a.name.clone(),
                    role: role.clone(),
                });
            }
            self.trajectory(a)?;
        }

        for d in &self.diagnosis_events {
            match roles.get(d.actor.as_str()) {
                None => return Err(ConfigError::UnknownActor(d.actor.clone())),
                Some(Role::Honest) => {}
                Some(_) => return Err(ConfigError::NotHonest(d.actor.clone())),
            }
            if d.at_time >= self.duration {
                return Err(ConfigError::DiagnosisAfterEnd {
                    actor: d.actor.clone(),
                    at_time: d.at_time,
                });
            }
        }

        if self.protocol.tick == 0 {
            return Err(ConfigError::BadProtocol("tick must be positive".into()));
        }
        if self.duration == 0 {
            return Err(ConfigError::BadProtocol("duration must be positive".into()));
        }
        self.protocol.device_params()?;
        Ok(())
    }
}

pub fn parse_config(json: &str) -> Result<ScenarioConfig, ConfigError> {
    let cfg: ScenarioConfig = serde_json::from_str(json).map_err(|e| ConfigError::Parse(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ScenarioConfig, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    parse_config(&text)
}
