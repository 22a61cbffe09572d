//! Scenario outcomes and their canonical serializations.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::config::{Role, ScenarioConfig};
use crate::actguard::VerdictKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictEntry {
    pub diagnosis_id: u64,
    pub verdict: VerdictKind,
    pub rpi: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorOutcome {
    pub name: String,
    pub role: Role,
    pub actguard: bool,
    pub gaen_alert: bool,
    pub risk_score: f64,
    pub exposure_matches: usize,
    pub verdicts: Vec<VerdictEntry>,
    pub observations: usize,
    pub contact_records: usize,
    pub diagnosis_id: Option<u64>,
    pub captures: usize,
    pub relayed: usize,
}

impl ActorOutcome {
    /// The verdict for `diagnosis_id`, if one was reached.
    pub fn verdict_for(&self, diagnosis_id: u64) -> Option<VerdictKind> {
        self.verdicts
            .iter()
            .find(|v| v.diagnosis_id == diagnosis_id)
            .map(|v| v.verdict)
    }

    /// The single verdict this actor holds, if exactly one.
    pub fn sole_verdict(&self) -> Option<VerdictKind> {
        match self.verdicts.as_slice() {
            [v] => Some(v.verdict),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    /// Consecutive captures of one identifier by one sniffer.
    Capture {
        first_at: u64,
        last_at: u64,
        sniffer: String,
        place: String,
        rpi: String,
        packets: usize,
    },
    /// Replays of one identifier by one rebroadcaster.
    Relay {
        first_at: u64,
        last_at: u64,
        rebroadcaster: String,
        rpi: String,
        packets: usize,
    },
    OtpAuthorized {
        at: u64,
        actor: String,
        code: String,
        ttl: u64,
    },
    Upload {
        at: u64,
        actor: String,
        otp: String,
        diagnosis_id: u64,
        teks: usize,
        hashes: Option<usize>,
    },
    UploadRejected {
        at: u64,
        actor: String,
        otp: String,
        reason: String,
    },
    BackendUnavailable {
        at: u64,
        actor: String,
        operation: String,
    },
    /// Emitted when an actor's exposure state changes.
    Exposure {
        at: u64,
        actor: String,
        matches: usize,
        risk_score: f64,
        gaen_alert: bool,
        verdicts: Vec<VerdictEntry>,
    },
}

impl Event {
    pub fn time(&self) -> u64 {
        match self {
            Self::Capture { first_at, .. } | Self::Relay { first_at, .. } => *first_at,
            Self::OtpAuthorized { at, .. }
            | Self::Upload { at, .. }
            | Self::UploadRejected { at, .. }
            | Self::BackendUnavailable { at, .. }
            | Self::Exposure { at, .. } => *at,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub scenario: String,
    pub seed: u64,
    pub actors: Vec<ActorOutcome>,
    pub events: Vec<Event>,
    pub config: ScenarioConfig,
}

impl ScenarioReport {
    pub fn actor(&self, name: &str) -> Option<&ActorOutcome> {
        self.actors.iter().find(|a| a.name == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReportFormat {
    #[default]
    Json,
    Table,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(Self::Json),
            "table" => Ok(Self::Table),
            other => Err(format!("unknown report format {other:?} (expected json or table)")),
        }
    }
}

fn verdict_cell(a: &ActorOutcome) -> String {
    if a.verdicts.is_empty() {
        return "-".into();
    }
    a.verdicts
        .iter()
        .map(|v| format!("{}#{}", v.verdict, v.diagnosis_id))
        .collect::<Vec<_>>()
        .join(",")
}

fn render_table(report: &ScenarioReport) -> String {
    let header = ["actor", "role", "actguard", "gaen_alert", "risk", "verdicts"];
    let rows: Vec<[String; 6]> = report
        .actors
        .iter()
        .map(|a| {
            [
                a.name.clone(),
                a.role.to_string(),
                if a.actguard { "yes" } else { "no" }.into(),
                a.gaen_alert.to_string(),
                format!("{:.1}", a.risk_score),
                verdict_cell(a),
            ]
        })
        .collect();
    let mut widths = header.map(str::len);
    for r in &rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }

    let mut out = String::new();
    let _ = writeln!(out, "scenario {} (seed {})", report.scenario, report.seed);
    let line = |cells: &[&str]| -> String {
        cells
            .iter()
            .zip(widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_owned()
    };
    let _ = writeln!(out, "{}", line(&header));
    for r in &rows {
        let cells: Vec<&str> = r.iter().map(String::as_str).collect();
        let _ = writeln!(out, "{}", line(&cells));
    }
    out
}

/// Canonical bytes of a report. JSON field order follows the struct
/// definitions, so equal reports always serialize identically.
pub fn emit_report(report: &ScenarioReport, format: ReportFormat) -> Vec<u8> {
    match format {
        ReportFormat::Json => {
            let mut v = serde_json::to_vec_pretty(report).expect("report serializes");
            v.push(b'\n');
            v
        }
        ReportFormat::Table => render_table(report).into_bytes(),
    }
}
