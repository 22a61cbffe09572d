//! Reference implementations and fixtures shared by the integration tests.
//! Oracles here are deliberately naive: no indexes, no early exits.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use relaysim::gaen::{
    decrypt_aem, derive_aemk, derive_rpi, derive_rpik, encrypt_aem, generate_tek, DeviceSeed, DiagnosisKey,
    ExposureMatch, Observation, RotationSchedule, Rpi,
};
use relaysim::scenario::{self, parse_config, ScenarioConfig};
use relaysim::Position;

pub fn bundled(name: &str) -> ScenarioConfig {
    scenario::bundled(name)
        .unwrap_or_else(|| panic!("no bundled scenario {name}"))
        .expect("bundled scenario parses")
}

/// Cross product of every key, every interval of its day, and every
/// observation.
pub fn oracle_matches(
    keys: &[DiagnosisKey],
    store: &[Observation],
    schedule: &RotationSchedule,
    tolerance_s: u64,
) -> Vec<ExposureMatch> {
    let mut out = Vec::new();
    for key in keys {
        let rpik = derive_rpik(&key.tek);
        let aemk = derive_aemk(&key.tek);
        for interval in 0..schedule.intervals_per_day() {
            let rpi = derive_rpi(&rpik, interval, schedule).unwrap();
            let start = key.tek.day_index as u64 * 86_400 + interval as u64 * schedule.rotation_period_s;
            let end = start + schedule.rotation_period_s;
            for obs in store {
                let lo = start as i128 - tolerance_s as i128;
                let hi = end as i128 + tolerance_s as i128;
                let t = obs.scan_time as i128;
                if obs.rpi == rpi && lo <= t && t < hi {
                    out.push(ExposureMatch {
                        diagnosis_id: key.diagnosis_id,
                        tek_day: key.tek.day_index,
                        interval_index: interval,
                        rpi,
                        scan_time: obs.scan_time,
                        rssi_dbm: obs.rssi_dbm,
                        tx_power_dbm: decrypt_aem(&aemk, &rpi, &obs.aem),
                        location: obs.location,
                    });
                }
            }
        }
    }
    out
}

pub type MatchKey = (Rpi, u64, i16, u64, u32, u32, i8, u64, u64);

/// Order-free, exact representation of a match list.
pub fn canonical(ms: &[ExposureMatch]) -> Vec<MatchKey> {
    let mut v: Vec<MatchKey> = ms
        .iter()
        .map(|m| {
            (
                m.rpi,
                m.scan_time,
                m.rssi_dbm,
                m.diagnosis_id,
                m.tek_day,
                m.interval_index,
                m.tx_power_dbm,
                m.location.lat.to_bits(),
                m.location.lon.to_bits(),
            )
        })
        .collect();
    v.sort();
    v
}

/// Haversine written out longhand.
pub fn oracle_distance_m(a: &Position, b: &Position) -> f64 {
    let r = 6_371_008.8_f64;
    let (p1, p2) = (a.lat.to_radians(), b.lat.to_radians());
    let dp = p2 - p1;
    let dl = (b.lon - a.lon).to_radians();
    let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * r * h.sqrt().asin()
}

pub struct MicroInstance {
    pub keys: Vec<DiagnosisKey>,
    pub store: Vec<Observation>,
    pub schedule: RotationSchedule,
    pub tolerance_s: u64,
}

/// Up to five devices over up to three days. Observations mix genuine
/// sightings (some outside their window), foreign identifiers, and
/// duplicates; keys are a random subset of the devices' daily TEKs.
pub fn micro_instance(seed: u64) -> MicroInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let schedule = RotationSchedule::new([3_600, 7_200, 21_600][rng.random_range(0..3)]).unwrap();
    let per_day = schedule.intervals_per_day();
    let devices = rng.random_range(1..=5u64);
    let days = rng.random_range(1..=3u32);
    let tolerance_s = [0, 60, 900][rng.random_range(0..3)];
    let horizon = days as u64 * 86_400;

    let mut store = Vec::new();
    let mut keys = Vec::new();
    for d in 0..devices {
        let seed = DeviceSeed::derive(seed, d);
        for day in 0..days {
            let tek = generate_tek(&seed, day);
            if rng.random_bool(0.6) {
                keys.push(DiagnosisKey {
                    diagnosis_id: rng.random_range(1..=3),
                    tek,
                });
            }
            let rpik = derive_rpik(&tek);
            let aemk = derive_aemk(&tek);
            for _ in 0..rng.random_range(0..12) {
                let interval = rng.random_range(0..per_day);
                let rpi = derive_rpi(&rpik, interval, &schedule).unwrap();
                let (start, end) = schedule.window(day, interval);
                // mostly inside, sometimes just across either edge, sometimes anywhere
                let t = match rng.random_range(0..4) {
                    0 | 1 => rng.random_range(start..end),
                    2 => {
                        let edge = if rng.random_bool(0.5) { start } else { end };
                        let jitter = rng.random_range(0..=tolerance_s + 2) as i64;
                        let t = edge as i64 + if rng.random_bool(0.5) { jitter } else { -jitter - 1 };
                        t.clamp(0, horizon as i64) as u64
                    }
                    _ => rng.random_range(0..horizon),
                };
                let tx: i8 = rng.random_range(-30..=10);
                let obs = Observation {
                    rpi,
                    aem: encrypt_aem(&aemk, &rpi, tx),
                    rssi_dbm: rng.random_range(-100..=-20),
                    scan_time: t,
                    location: Position::new(rng.random_range(-60.0..60.0), rng.random_range(-170.0..170.0)),
                };
                if rng.random_bool(0.1) {
                    store.push(obs.clone());
                }
                store.push(obs);
            }
        }
    }
    for _ in 0..rng.random_range(0..10) {
        store.push(Observation {
            rpi: Rpi(rng.random()),
            aem: relaysim::gaen::Aem(rng.random()),
            rssi_dbm: -50,
            scan_time: rng.random_range(0..horizon),
            location: Position::new(0.0, 0.0),
        });
    }
    MicroInstance {
        keys,
        store,
        schedule,
        tolerance_s,
    }
}

/// Two stationary ACTGuard users a few metres apart; one is diagnosed.
/// Seed, place, duration, offsets and diagnosis time all vary.
pub fn colocated_pair(seed: u64) -> ScenarioConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let lat: f64 = rng.random_range(-60.0..60.0);
    let lon: f64 = rng.random_range(-170.0..170.0);
    let duration = rng.random_range(2_400..9_000u64) / 10 * 10;
    let diagnosed_at = rng.random_range(1_800..duration) / 10 * 10;
    let (dn, de): (f64, f64) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
    let json = serde_json::json!({
        "name": format!("pair-{seed}"),
        "seed": rng.random::<u64>(),
        "duration": duration,
        "places": [{ "name": "P", "center": { "lat": lat, "lon": lon }, "radius_m": 10.0 }],
        "actors": [
            { "name": "U", "role": "honest", "place": "P", "actguard": true },
            { "name": "V", "role": "honest", "place": "P", "actguard": true,
              "offset_m": { "north": dn, "east": de } }
        ],
        "diagnosis_events": [{ "actor": "U", "at_time": diagnosed_at }],
        "protocol": { "exposure_check_interval": rng.random_range(1..=4u64) * 900 }
    });
    parse_config(&json.to_string()).expect("generated pair config is valid")
}

pub mod wire {
    //! A scripted conversation with the HTTP backend, replayed against
    //! committed response fixtures.

    use std::path::PathBuf;
    use std::sync::atomic::{AtomicU64, Ordering};
    use std::sync::Arc;

    use relaysim::actguard::{contact_hash, GeoCell, TimeBucket};
    use relaysim::backend::http::{self, Clock};
    use relaysim::backend::{BackendConfig, DiagnosisRequest, HealthAuthority};
    use relaysim::gaen::{generate_tek, DeviceSeed, Rpi, SECONDS_PER_DAY};

    pub struct Exchange {
        pub name: &'static str,
        pub status: u16,
        pub body: String,
    }

    impl Exchange {
        pub fn render(&self) -> String {
            format!("{}\n{}\n", self.status, self.body)
        }
    }

    pub fn fixture_dir() -> PathBuf {
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/wire")
    }

    const T0: u64 = 3 * SECONDS_PER_DAY + 14_400;

    fn request_body(otp: &str, days: &[u32], with_hashes: bool) -> String {
        let seed = DeviceSeed::derive(7, 1);
        let teks: Vec<_> = days.iter().map(|&d| generate_tek(&seed, d)).collect();
        let hashes: Vec<_> = (0..3u8)
            .map(|i| contact_hash(&Rpi([i; 16]), &Rpi([0xa0 + i; 16]), GeoCell { lat: 45_464, lon: 9_189 }, TimeBucket(i as i64)).unwrap())
            .collect();
        let req = DiagnosisRequest::new(otp, &teks, with_hashes.then_some(hashes.as_slice()));
        serde_json::to_string(&req).unwrap()
    }

    /// Runs the script against a fresh server (seed 0, controllable clock).
    pub fn transcript() -> Vec<Exchange> {
        let now = Arc::new(AtomicU64::new(T0));
        let clock: Clock = {
            let now = now.clone();
            Arc::new(move || now.load(Ordering::SeqCst))
        };
        let server = http::spawn(
            "127.0.0.1:0".parse().unwrap(),
            HealthAuthority::new(BackendConfig { otp_ttl_s: 3_600, seed: 0 }),
            clock,
        )
        .expect("server binds");
        let base = server.base_url();
        let agent: ureq::Agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();

        let mut out = Vec::new();
        let mut post = |name: &'static str, path: &str, body: Option<String>| -> String {
            let url = format!("{base}{path}");
            let mut resp = match body {
                Some(b) => agent.post(&url).header("content-type", "application/json").send(b),
                None => agent.post(&url).send_empty(),
            }
            .expect("request completes");
            let text = resp.body_mut().read_to_string().unwrap();
            out.push(Exchange { name, status: resp.status().as_u16(), body: text.clone() });
            text
        };
        let code = |text: &str| -> String {
            serde_json::from_str::<serde_json::Value>(text).unwrap()["code"].as_str().unwrap().to_owned()
        };

        let otp1 = code(&post("otp_first", "/otp", None));
        post("diagnosis_accepted", "/diagnosis", Some(request_body(&otp1, &[1, 2, 3], true)));
        post("diagnosis_otp_reused", "/diagnosis", Some(request_body(&otp1, &[3], false)));
        post("diagnosis_otp_unknown", "/diagnosis", Some(request_body("0000000000000000", &[3], false)));
        post("diagnosis_malformed", "/diagnosis", Some("{\"otp\": 5}".into()));

        let otp2 = code(&post("otp_second", "/otp", None));
        post("diagnosis_future_tek", "/diagnosis", Some(request_body(&otp2, &[4], false)));
        // the rejection did not consume the code
        post("diagnosis_gaen_only", "/diagnosis", Some(request_body(&otp2, &[2, 3], false)));

        let otp3 = code(&post("otp_third", "/otp", None));
        now.store(T0 + 3_601, Ordering::SeqCst);
        post("diagnosis_otp_expired", "/diagnosis", Some(request_body(&otp3, &[3], false)));

        let mut get = |name: &'static str, path: &str| {
            let mut resp = agent.get(&format!("{base}{path}")).call().expect("request completes");
            let body = resp.body_mut().read_to_string().unwrap();
            out.push(Exchange { name, status: resp.status().as_u16(), body });
        };
        get("chunks_all", "/chunks?since=0");
        get("chunks_since_1", "/chunks?since=1");
        get("hashes_1", "/hashes/1");
        get("hashes_2_absent", "/hashes/2");
        now.store(T0 + 14 * SECONDS_PER_DAY, Ordering::SeqCst);
        get("chunks_at_cutoff", "/chunks?since=0");
        now.store(T0 + 14 * SECONDS_PER_DAY + 1, Ordering::SeqCst);
        get("chunks_past_cutoff", "/chunks?since=0");

        server.shutdown().unwrap();
        out
    }

    /// Compares against the fixtures, or rewrites them when
    /// `RELAYSIM_BLESS` is set. Returns the names that differ.
    pub fn check_fixtures(transcript: &[Exchange]) -> Vec<String> {
        let dir = fixture_dir();
        let bless = std::env::var_os("RELAYSIM_BLESS").is_some();
        let mut bad = Vec::new();
        for (i, ex) in transcript.iter().enumerate() {
            let path = dir.join(format!("{:02}_{}.txt", i + 1, ex.name));
            if bless {
                std::fs::create_dir_all(&dir).unwrap();
                std::fs::write(&path, ex.render()).unwrap();
                continue;
            }
            match std::fs::read_to_string(&path) {
                Ok(expected) if expected == ex.render() => {}
                _ => bad.push(path.file_name().unwrap().to_string_lossy().into_owned()),
            }
        }
        bad
    }
}
