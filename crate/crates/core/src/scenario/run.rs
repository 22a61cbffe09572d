//! The tick loop.
//!
//! Within a tick: honest advertisements are delivered, sniffers capture,
//! rebroadcasters replay whatever is due, honest devices record everything
//! they heard, scheduled diagnoses upload, and exposure checks run.

use std::collections::HashMap;

use super::config::{ConfigError, Role, ScenarioConfig};
use super::report::{ActorOutcome, Event, ScenarioReport, VerdictEntry};
use crate::agents::{
    DeviceParams, ExposureStatus, HonestDevice, MaliciousDatabase, RebroadcastAdversary, SnifferAdversary,
};
use crate::backend::{BackendApi, BackendConfig, BackendError, HealthAuthority};
use crate::gaen::{DeviceSeed, Rpi};
use crate::radio::{decode_advertisement, Decoded, Delivery, SimClock, Transmission, World};
use crate::Position;

/// Everything the run produced that is too bulky for the report.
#[derive(Debug, Default)]
pub struct RunTrace {
    /// Every packet a rebroadcaster put on the air: (time, actor, bytes).
    pub relayed: Vec<(u64, String, Vec<u8>)>,
    pub database: MaliciousDatabase,
    /// Final device state, by actor name.
    pub devices: Vec<HonestDevice>,
}

#[derive(Debug)]
pub struct RunOutput {
    pub report: ScenarioReport,
    pub trace: RunTrace,
}

struct Trajectory(Vec<(u64, Position)>);

impl Trajectory {
    fn at(&self, t: u64) -> Position {
        let i = self.0.partition_point(|&(from, _)| from <= t);
        self.0[i.saturating_sub(1)].1
    }
}

enum Slot {
    Honest(usize),
    Sniffer(usize),
    Rebroadcaster(usize),
}

/// Keeps capture/relay log entries coalesced per (actor, rpi).
#[derive(Default)]
struct EventLog {
    events: Vec<Event>,
    open: HashMap<(bool, String, Rpi), usize>,
}

impl EventLog {
    fn push(&mut self, e: Event) {
        self.events.push(e);
    }

    fn packet(&mut self, relay: bool, actor: &str, place: &str, payload: &[u8], now: u64) {
        let Decoded::Protocol { rpi, .. } = decode_advertisement(payload) else {
            return;
        };
        let key = (relay, actor.to_owned(), rpi);
        if let Some(&i) = self.open.get(&key) {
            match &mut self.events[i] {
                Event::Capture { last_at, packets, .. } | Event::Relay { last_at, packets, .. } => {
                    *last_at = now;
                    *packets += 1;
                }
                _ => unreachable!("open entries are capture/relay events"),
            }
            return;
        }
        self.open.insert(key, self.events.len());
        let rpi = rpi.to_hex();
        self.events.push(if relay {
            Event::Relay {
                first_at: now,
                last_at: now,
                rebroadcaster: actor.to_owned(),
                rpi,
                packets: 1,
            }
        } else {
            Event::Capture {
                first_at: now,
                last_at: now,
                sniffer: actor.to_owned(),
                place: place.to_owned(),
                rpi,
                packets: 1,
            }
        });
    }
}

fn verdict_entries(status: &ExposureStatus) -> Vec<VerdictEntry> {
    status
        .verdicts
        .iter()
        .map(|v| VerdictEntry {
            diagnosis_id: v.diagnosis_id,
            verdict: v.kind,
            rpi: v.matched_rpi.to_hex(),
        })
        .collect()
}

struct PendingDiagnosis {
    actor: usize,
    at: u64,
    otp: Option<String>,
    done: bool,
}

struct Sim<'a> {
    cfg: &'a ScenarioConfig,
    params: DeviceParams,
    backend: &'a mut dyn BackendApi,
    world: World,
    trajectories: Vec<Trajectory>,
    slots: Vec<Slot>,
    honest: Vec<HonestDevice>,
    sniffers: Vec<SnifferAdversary>,
    rebroadcasters: Vec<RebroadcastAdversary>,
    db: MaliciousDatabase,
    diagnoses: Vec<PendingDiagnosis>,
    last_status: Vec<Option<(bool, usize, Vec<VerdictEntry>)>>,
    retry_check: Vec<bool>,
    log: EventLog,
    relayed: Vec<(u64, String, Vec<u8>)>,
}

impl<'a> Sim<'a> {
    fn new(cfg: &'a ScenarioConfig, backend: &'a mut dyn BackendApi) -> Result<Self, ConfigError> {
        cfg.validate()?;
        let params = cfg.protocol.device_params()?;
        let attack = cfg.attack.unwrap_or_default();
        let mut trajectories = Vec::new();
        let mut slots = Vec::new();
        let mut honest = Vec::new();
        let mut sniffers = Vec::new();
        let mut rebroadcasters = Vec::new();

        for (node, actor) in cfg.actors.iter().enumerate() {
            let traj = Trajectory(cfg.trajectory(actor)?);
            let pos = traj.at(0);
            let tx = actor.tx_power_dbm.unwrap_or(cfg.protocol.tx_power_dbm);
            match actor.role {
                Role::Honest => {
                    slots.push(Slot::Honest(honest.len()));
                    honest.push(HonestDevice::new(
                        &actor.name,
                        node,
                        DeviceSeed::derive(cfg.seed, node as u64),
                        pos,
                        tx,
                        actor.actguard,
                    ));
                }
                Role::Sniffer => {
                    slots.push(Slot::Sniffer(sniffers.len()));
                    sniffers.push(SnifferAdversary::new(&actor.name, node, pos, &actor.place));
                }
                Role::Rebroadcaster => {
                    slots.push(Slot::Rebroadcaster(rebroadcasters.len()));
                    rebroadcasters.push(RebroadcastAdversary::new(
                        &actor.name,
                        node,
                        pos,
                        tx,
                        attack.relay_delay,
                        attack.replay_ttl,
                    ));
                }
                Role::Unknown(_) => unreachable!("rejected by validation"),
            }
            trajectories.push(traj);
        }

        let mut diagnoses: Vec<_> = cfg
            .diagnosis_events
            .iter()
            .map(|d| {
                let node = cfg.actors.iter().position(|a| a.name == d.actor).expect("validated");
                let Slot::Honest(i) = slots[node] else {
                    unreachable!("validated honest")
                };
                PendingDiagnosis {
                    actor: i,
                    at: d.at_time,
                    otp: None,
                    done: false,
                }
            })
            .collect();
        diagnoses.sort_by_key(|d| d.at);

        let n_honest = honest.len();
        Ok(Self {
            cfg,
            params,
            backend,
            world: World {
                clock: SimClock::new(0, cfg.protocol.tick).map_err(|e| ConfigError::BadProtocol(e.to_string()))?,
                radio: cfg.protocol.radio,
                positions: trajectories.iter().map(|t| t.at(0)).collect(),
            },
            trajectories,
            slots,
            honest,
            sniffers,
            rebroadcasters,
            db: MaliciousDatabase::default(),
            diagnoses,
            last_status: vec![None; n_honest],
            retry_check: vec![false; n_honest],
            log: EventLog::default(),
            relayed: Vec::new(),
        })
    }

    fn move_actors(&mut self, now: u64) {
        for (node, traj) in self.trajectories.iter().enumerate() {
            let p = traj.at(now);
            self.world.positions[node] = p;
            match self.slots[node] {
                Slot::Honest(i) => self.honest[i].position = p,
                Slot::Sniffer(i) => self.sniffers[i].position = p,
                Slot::Rebroadcaster(i) => self.rebroadcasters[i].position = p,
            }
        }
    }

    fn step(&mut self, now: u64) {
        self.move_actors(now);

        let adverts: Vec<Transmission> = self
            .honest
            .iter_mut()
            .map(|d| d.advertise(now, &self.params.schedule))
            .collect();
        let mut deliveries = self.world.broadcast_step(&adverts);

        for s in &mut self.sniffers {
            let before = self.db.len();
            s.sniff_tick(&deliveries, now, &mut self.db);
            for e in &self.db.entries()[before..] {
                self.log.packet(false, &s.id, &s.place, &e.payload, now);
            }
        }

        let mut replays = Vec::new();
        for r in &mut self.rebroadcasters {
            for tx in r.rebroadcast_tick(&self.db, now) {
                self.log.packet(true, &r.id, "", &tx.payload, now);
                self.relayed.push((now, r.id.clone(), tx.payload.clone()));
                replays.push(tx);
            }
        }
        deliveries.extend(self.world.broadcast_step(&replays));

        let mut inbox: Vec<Vec<&Delivery>> = vec![Vec::new(); self.slots.len()];
        for d in &deliveries {
            inbox[d.receiver].push(d);
        }
        for dev in &mut self.honest {
            dev.honest_tick(inbox[dev.node].iter().copied(), now, &self.params);
        }

        self.run_diagnoses(now);

        let interval = self.cfg.protocol.exposure_check_interval;
        let scheduled = interval > 0 && now > 0 && now.is_multiple_of(interval);
        for i in 0..self.honest.len() {
            if scheduled || self.retry_check[i] {
                self.exposure_check(i, now);
            }
        }
    }

    fn run_diagnoses(&mut self, now: u64) {
        for p in self.diagnoses.iter_mut().filter(|p| !p.done && p.at <= now) {
            let dev = &mut self.honest[p.actor];
            let otp = match &p.otp {
                Some(code) => code.clone(),
                None => match self.backend.authorize_otp(now) {
                    Ok(code) => {
                        self.log.push(Event::OtpAuthorized {
                            at: now,
                            actor: dev.id.clone(),
                            code: code.clone(),
                            ttl: self.cfg.protocol.otp_ttl,
                        });
                        p.otp = Some(code.clone());
                        code
                    }
                    Err(e) => {
                        self.log.push(Event::BackendUnavailable {
                            at: now,
                            actor: dev.id.clone(),
                            operation: format!("authorize_otp: {e}"),
                        });
                        continue;
                    }
                },
            };
            match dev.diagnose_and_upload(&mut *self.backend, &otp, now) {
                Ok(receipt) => {
                    self.log.push(Event::Upload {
                        at: now,
                        actor: dev.id.clone(),
                        otp,
                        diagnosis_id: receipt.diagnosis_id,
                        teks: receipt.teks,
                        hashes: receipt.hashes,
                    });
                    p.done = true;
                }
                Err(BackendError::Unreachable(reason)) => {
                    self.log.push(Event::BackendUnavailable {
                        at: now,
                        actor: dev.id.clone(),
                        operation: format!("upload: {reason}"),
                    });
                }
                Err(e) => {
                    self.log.push(Event::UploadRejected {
                        at: now,
                        actor: dev.id.clone(),
                        otp,
                        reason: e.code().to_owned(),
                    });
                    p.done = true;
                }
            }
        }
    }

    fn exposure_check(&mut self, i: usize, now: u64) {
        let dev = &mut self.honest[i];
        match dev.exposure_check(&mut *self.backend, now, &self.params) {
            Ok(status) => {
                self.retry_check[i] = false;
                self.note_status(i, now, &status);
            }
            Err(e) => {
                self.retry_check[i] = true;
                self.log.push(Event::BackendUnavailable {
                    at: now,
                    actor: self.honest[i].id.clone(),
                    operation: format!("exposure_check: {e}"),
                });
            }
        }
    }

    fn note_status(&mut self, i: usize, now: u64, status: &ExposureStatus) {
        let verdicts = verdict_entries(status);
        let key = (status.gaen_alert, status.matches, verdicts.clone());
        if self.last_status[i].as_ref() == Some(&key) {
            return;
        }
        if status.matches > 0 || self.last_status[i].is_some() {
            self.log.push(Event::Exposure {
                at: now,
                actor: self.honest[i].id.clone(),
                matches: status.matches,
                risk_score: status.assessment.score,
                gaen_alert: status.gaen_alert,
                verdicts,
            });
        }
        self.last_status[i] = Some(key);
    }

    fn finish(mut self) -> RunOutput {
        let end = self.cfg.duration;
        for i in 0..self.honest.len() {
            self.exposure_check(i, end);
        }

        let mut actors = Vec::new();
        for (node, actor) in self.cfg.actors.iter().enumerate() {
            let mut out = ActorOutcome {
                name: actor.name.clone(),
                role: actor.role.clone(),
                actguard: false,
                gaen_alert: false,
                risk_score: 0.0,
                exposure_matches: 0,
                verdicts: Vec::new(),
                observations: 0,
                contact_records: 0,
                diagnosis_id: None,
                captures: 0,
                relayed: 0,
            };
            match self.slots[node] {
                Slot::Honest(i) => {
                    let dev = &self.honest[i];
                    let status = dev.assess(&self.params);
                    out.actguard = dev.actguard_enabled();
                    out.gaen_alert = status.gaen_alert;
                    out.risk_score = status.assessment.score;
                    out.exposure_matches = status.matches;
                    out.verdicts = verdict_entries(&status);
                    out.observations = dev.observations.len();
                    out.contact_records = dev.actguard.as_ref().map_or(0, |a| a.contacts.len());
                    out.diagnosis_id = dev.diagnosis_id;
                }
                Slot::Sniffer(i) => out.captures = self.sniffers[i].captures,
                Slot::Rebroadcaster(i) => out.relayed = self.rebroadcasters[i].transmissions,
            }
            actors.push(out);
        }

        let mut events = self.log.events;
        events.sort_by_key(Event::time);

        RunOutput {
            report: ScenarioReport {
                scenario: self.cfg.name.clone(),
                seed: self.cfg.seed,
                actors,
                events,
                config: self.cfg.clone(),
            },
            trace: RunTrace {
                relayed: self.relayed,
                database: self.db,
                devices: self.honest,
            },
        }
    }
}

/// Runs against a caller-supplied backend (in-process or remote).
pub fn run_with_backend(cfg: &ScenarioConfig, backend: &mut dyn BackendApi) -> Result<RunOutput, ConfigError> {
    let mut sim = Sim::new(cfg, backend)?;
    let mut now = 0;
    while now < cfg.duration {
        sim.step(now);
        now = sim.world.clock.advance();
    }
    Ok(sim.finish())
}

/// Fresh in-process backend seeded from the scenario.
pub fn in_process_backend(cfg: &ScenarioConfig) -> HealthAuthority {
    HealthAuthority::new(BackendConfig {
        otp_ttl_s: cfg.protocol.otp_ttl,
        seed: cfg.seed,
    })
}

pub fn run_traced(cfg: &ScenarioConfig) -> Result<RunOutput, ConfigError> {
    let mut backend = in_process_backend(cfg);
    run_with_backend(cfg, &mut backend)
}

pub fn run(cfg: &ScenarioConfig) -> Result<ScenarioReport, ConfigError> {
    run_traced(cfg).map(|o| o.report)
}
