//! Compliance oracle.
//!
//! Grades what the device under test did after each authentication or
//! encryption failure:
//!
//! | Check | Name                 | Fails when                                                   | Severity  |
//! |-------|----------------------|--------------------------------------------------------------|-----------|
//! | C1    | bonded-warning       | a failure on a bonded key shows no single security warning  | VIOLATION |
//! | C2    | reason-coding        | the host's Disconnect after a failure is not reason 0x05     | VIOLATION |
//! | C3    | bonded-key-retention | a bonded key is deleted without a scripted user reset        | VIOLATION |
//! | C4    | termination          | the link stays up, or carries data, after a failure          | VIOLATION |
//! | C5    | tofu-weakening       | a pairing is redone automatically without asking the user    | WARNING   |
//!
//! A missing-key failure after a scripted user reset on either side only
//! earns a WARNING under C1, since the user knows about the reset.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bus::{BusEvent, Evidence};
use crate::clock::SimTime;
use crate::config::ScenarioConfig;
use crate::hci::{HciCommand, HciEvent, HciPacket};
use crate::host::{PairingTrigger, SurfaceKind, UserSurfaceEvent};
use crate::linklayer::Side;
use crate::profiles::StackProfile;
use crate::trace::{CapturedPacket, Direction};
use crate::types::{DeviceAddress, ErrorCode, LinkKeyRecord, Transport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CheckId {
    C1,
    C2,
    C3,
    C4,
    C5,
}

impl CheckId {
    pub const ALL: [CheckId; 5] = [CheckId::C1, CheckId::C2, CheckId::C3, CheckId::C4, CheckId::C5];

    pub fn name(self) -> &'static str {
        match self {
            CheckId::C1 => "bonded-warning",
            CheckId::C2 => "reason-coding",
            CheckId::C3 => "bonded-key-retention",
            CheckId::C4 => "termination",
            CheckId::C5 => "tofu-weakening",
        }
    }
}

impl fmt::Display for CheckId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

/// Ordered by severity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CheckResult {
    Pass,
    Warning,
    Violation,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CheckResult::Pass => "PASS",
            CheckResult::Warning => "WARNING",
            CheckResult::Violation => "VIOLATION",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Check {
    pub id: CheckId,
    pub result: CheckResult,
    pub evidence: Vec<Evidence>,
    pub detail: String,
}

/// What the user saw, in the categories of the observed-behavior table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SummarySymbol {
    NoIndication,
    IndicatorOnly,
    ErrorText,
    PairingRemoved,
    SecurityWarning,
}

impl SummarySymbol {
    pub fn as_str(self) -> &'static str {
        match self {
            SummarySymbol::NoIndication => "NO_INDICATION",
            SummarySymbol::IndicatorOnly => "INDICATOR_ONLY",
            SummarySymbol::ErrorText => "ERROR_TEXT",
            SummarySymbol::PairingRemoved => "PAIRING_REMOVED",
            SummarySymbol::SecurityWarning => "SECURITY_WARNING",
        }
    }
}

impl fmt::Display for SummarySymbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Strongest signal wins: a warning or consent prompt, then a removed
/// pairing, an error text, a transient indicator, nothing.
pub fn summary_symbol<'a>(events: impl IntoIterator<Item = &'a UserSurfaceEvent>) -> SummarySymbol {
    events
        .into_iter()
        .map(|e| match e.kind {
            SurfaceKind::SecurityFailureWarning | SurfaceKind::RepairConsentPrompt => SummarySymbol::SecurityWarning,
            SurfaceKind::SilentKeyDeletion => SummarySymbol::PairingRemoved,
            SurfaceKind::GenericErrorText(_) => SummarySymbol::ErrorText,
            SurfaceKind::TransientIndicator => SummarySymbol::IndicatorOnly,
            SurfaceKind::None => SummarySymbol::NoIndication,
        })
        .max()
        .unwrap_or(SummarySymbol::NoIndication)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComplianceVerdict {
    pub scenario_id: String,
    pub profile: String,
    pub checks: Vec<Check>,
    pub summary_symbol: SummarySymbol,
}

impl ComplianceVerdict {
    pub fn check(&self, id: CheckId) -> &Check {
        self.checks.iter().find(|c| c.id == id).expect("all checks are graded")
    }

    pub fn result(&self, id: CheckId) -> CheckResult {
        self.check(id).result
    }

    pub fn violations(&self) -> Vec<CheckId> {
        self.with_result(CheckResult::Violation)
    }

    pub fn warnings(&self) -> Vec<CheckId> {
        self.with_result(CheckResult::Warning)
    }

    fn with_result(&self, result: CheckResult) -> Vec<CheckId> {
        self.checks
            .iter()
            .filter(|c| c.result == result)
            .map(|c| c.id)
            .collect()
    }

    pub fn has_violation(&self) -> bool {
        self.checks.iter().any(|c| c.result == CheckResult::Violation)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ComplianceError {
    #[error("scenario {0:?} contains no authentication or encryption failure on the device under test")]
    NoFailureInScenario(String),
}

/// Everything the oracle looks at.
#[derive(Debug, Clone, Copy)]
pub struct RunArtifacts<'a> {
    pub scenario_id: &'a str,
    pub profile: &'a str,
    pub dut: DeviceAddress,
    pub traces: &'a BTreeMap<DeviceAddress, Vec<CapturedPacket>>,
    pub bus: &'a [BusEvent],
}

struct Failure {
    bus: usize,
    handle: u16,
    peer: DeviceAddress,
    transport: Transport,
    status: ErrorCode,
    record: Option<LinkKeyRecord>,
    packet: usize,
    at: SimTime,
}

#[derive(Default)]
struct Accumulator {
    result: Option<CheckResult>,
    evidence: Vec<Evidence>,
    details: Vec<String>,
}

impl Accumulator {
    fn record(&mut self, result: CheckResult, evidence: impl IntoIterator<Item = Evidence>, detail: Option<String>) {
        self.result = self.result.max(Some(result));
        for e in evidence {
            if !self.evidence.contains(&e) {
                self.evidence.push(e);
            }
        }
        if result != CheckResult::Pass {
            if let Some(d) = detail {
                self.details.push(d);
            }
        }
    }

    fn finish(self, id: CheckId, default_detail: &str) -> Check {
        let result = self.result.unwrap_or(CheckResult::Pass);
        let detail = if self.details.is_empty() {
            default_detail.to_string()
        } else {
            self.details.join("; ")
        };
        Check {
            id,
            result,
            evidence: self.evidence,
            detail,
        }
    }
}

pub fn grade(run: &RunArtifacts<'_>) -> Result<ComplianceVerdict, ComplianceError> {
    let empty = Vec::new();
    let trace = run.traces.get(&run.dut).unwrap_or(&empty);
    let packet = |index| Evidence::Packet { device: run.dut, index };

    let failures: Vec<Failure> = run
        .bus
        .iter()
        .enumerate()
        .filter_map(|(bus, e)| match *e {
            BusEvent::Failure {
                device,
                handle,
                peer,
                transport,
                status,
                record,
                packet,
                at,
            } if device == run.dut => Some(Failure {
                bus,
                handle,
                peer,
                transport,
                status,
                record,
                packet,
                at,
            }),
            _ => None,
        })
        .collect();
    if failures.is_empty() {
        return Err(ComplianceError::NoFailureInScenario(run.scenario_id.to_string()));
    }

    let roles: BTreeMap<u16, Side> = run
        .bus
        .iter()
        .filter_map(|e| match *e {
            BusEvent::ConnectionOpened {
                device, handle, role, ..
            } if device == run.dut => Some((handle, role)),
            _ => None,
        })
        .collect();

    let mut c1 = Accumulator::default();
    let mut c2 = Accumulator::default();
    let mut c3 = Accumulator::default();
    let mut c4 = Accumulator::default();
    let mut c5 = Accumulator::default();
    grade_failures(run, trace, &failures, &roles, &mut c1, &mut c2, &mut c4);

    for (i, e) in run.bus.iter().enumerate() {
        match e {
            BusEvent::KeyDeletion {
                device,
                deletion,
                user_initiated: false,
                ..
            } if *device == run.dut && deletion.bonded() => c3.record(
                CheckResult::Violation,
                [Evidence::Bus(i)],
                Some(format!("bonded key for {} deleted without user action", deletion.peer)),
            ),
            BusEvent::Pairing {
                trigger: PairingTrigger::AutoRepair,
                peer,
                initiator,
                ..
            } if e.involves(run.dut) => c5.record(
                CheckResult::Warning,
                [Evidence::Bus(i)],
                Some(format!("{initiator} re-paired with {peer} without user consent")),
            ),
            _ => {}
        }
    }
    // Cite the failures that led to the re-pairing as well.
    if c5.result == Some(CheckResult::Warning) {
        c5.record(CheckResult::Warning, failures.iter().map(|f| packet(f.packet)), None);
    }

    let surface = run.bus.iter().filter_map(|e| match e {
        BusEvent::Surface { device, event } if *device == run.dut => Some(event),
        _ => None,
    });

    Ok(ComplianceVerdict {
        scenario_id: run.scenario_id.to_string(),
        profile: run.profile.to_string(),
        checks: vec![
            c1.finish(CheckId::C1, "security failure warning shown for every bonded failure"),
            c2.finish(CheckId::C2, "disconnects after failures carry Authentication Failure"),
            c3.finish(CheckId::C3, "no bonded key deleted without user action"),
            c4.finish(CheckId::C4, "every failed link was terminated"),
            c5.finish(CheckId::C5, "no automatic re-pairing"),
        ],
        summary_symbol: summary_symbol(surface),
    })
}

fn grade_failures(
    run: &RunArtifacts<'_>,
    trace: &[CapturedPacket],
    failures: &[Failure],
    roles: &BTreeMap<u16, Side>,
    c1: &mut Accumulator,
    c2: &mut Accumulator,
    c4: &mut Accumulator,
) {
    let packet = |index| Evidence::Packet { device: run.dut, index };
    for (n, f) in failures.iter().enumerate() {
        let window_end = failures.get(n + 1).map_or(SimTime(u64::MAX), |next| next.at);

        // C1: exactly one warning per bonded failure.
        if bonded_at_failure(run, f) {
            let warnings: Vec<usize> = run
                .bus
                .iter()
                .enumerate()
                .filter(|(_, e)| match e {
                    BusEvent::Surface { device, event } => {
                        *device == run.dut
                            && event.peer == f.peer
                            && event.kind == SurfaceKind::SecurityFailureWarning
                            && event.timestamp >= f.at
                            && event.timestamp < window_end
                    }
                    _ => false,
                })
                .map(|(i, _)| i)
                .collect();
            let evidence = std::iter::once(packet(f.packet)).chain(warnings.iter().map(|i| Evidence::Bus(*i)));
            if warnings.len() == 1 {
                c1.record(CheckResult::Pass, evidence, None);
            } else {
                let legit = f.status == ErrorCode::PinOrKeyMissing && user_reset_before(run, f);
                let result = if legit {
                    CheckResult::Warning
                } else {
                    CheckResult::Violation
                };
                c1.record(
                    result,
                    evidence,
                    Some(format!(
                        "{} security warnings for bonded failure {} from {} (trace #{})",
                        warnings.len(),
                        f.status,
                        f.peer,
                        f.packet
                    )),
                );
            }
        }

        // C2: the host's own Disconnect for the failed link.
        if roles.get(&f.handle) == Some(&Side::Initiator) {
            let disconnect = trace.iter().enumerate().skip(f.packet + 1).find_map(|(i, p)| match p {
                CapturedPacket {
                    direction: Direction::Sent,
                    packet: HciPacket::Command(HciCommand::Disconnect { handle, reason }),
                    ..
                } if *handle == f.handle => Some((i, *reason)),
                _ => None,
            });
            if let Some((i, reason)) = disconnect {
                if reason == ErrorCode::AuthenticationFailure {
                    c2.record(CheckResult::Pass, [packet(i)], None);
                } else {
                    c2.record(
                        CheckResult::Violation,
                        [packet(f.packet), packet(i)],
                        Some(format!(
                            "disconnect of 0x{:04X} carries {} instead of {}",
                            f.handle,
                            reason,
                            ErrorCode::AuthenticationFailure
                        )),
                    );
                }
            }
        }

        // C4: the link goes down and carries no data afterwards.
        let closed = trace
            .iter()
            .enumerate()
            .skip(f.packet)
            .find_map(|(i, p)| match p.packet {
                HciPacket::Event(HciEvent::DisconnectionComplete { handle, .. }) if handle == f.handle => Some(i),
                _ => None,
            });
        let data_after: Vec<usize> = trace
            .iter()
            .enumerate()
            .skip(f.packet + 1)
            .filter(|(_, p)| matches!(&p.packet, HciPacket::Acl(acl) if acl.handle() == f.handle))
            .map(|(i, _)| i)
            .collect();
        match closed {
            None => c4.record(
                CheckResult::Violation,
                [packet(f.packet)],
                Some(format!("link 0x{:04X} left established after failure", f.handle)),
            ),
            Some(_) if !data_after.is_empty() => c4.record(
                CheckResult::Violation,
                std::iter::once(packet(f.packet)).chain(data_after.iter().map(|i| packet(*i))),
                Some(format!("data sent on link 0x{:04X} after failure", f.handle)),
            ),
            Some(i) => c4.record(CheckResult::Pass, [packet(i)], None),
        }
    }
}

/// Whether the failure hit a bonded relationship: the stored record is
/// bonded, or a bonded record for the peer was removed without the user.
fn bonded_at_failure(run: &RunArtifacts<'_>, f: &Failure) -> bool {
    if let Some(r) = f.record {
        return r.bonded;
    }
    run.bus[..f.bus]
        .iter()
        .rev()
        .find_map(|e| match e {
            BusEvent::KeyDeletion {
                device,
                deletion,
                user_initiated,
                ..
            } if *device == run.dut && deletion.peer == f.peer && deletion.transport == f.transport => {
                Some(deletion.bonded() && !user_initiated)
            }
            _ => None,
        })
        .unwrap_or(false)
}

/// A scripted reset of this relationship on either side before `f`.
fn user_reset_before(run: &RunArtifacts<'_>, f: &Failure) -> bool {
    run.bus[..f.bus].iter().any(|e| match e {
        BusEvent::KeyDeletion {
            device,
            deletion,
            user_initiated: true,
            ..
        } => (*device == run.dut && deletion.peer == f.peer) || (*device == f.peer && deletion.peer == run.dut),
        _ => false,
    })
}

/// Whether `evidence` points at something that exists.
pub fn evidence_resolves(evidence: &Evidence, run: &RunArtifacts<'_>) -> bool {
    match *evidence {
        Evidence::Packet { device, index } => run.traces.get(&device).is_some_and(|t| index < t.len()),
        Evidence::Bus(i) => i < run.bus.len(),
    }
}

/// One cell of the verdict matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MatrixCell {
    Graded(ComplianceVerdict),
    /// The profile lacks a transport the scenario uses.
    Unsupported,
    Error(String),
}

impl MatrixCell {
    pub fn label(&self) -> &str {
        match self {
            MatrixCell::Graded(v) => v.summary_symbol.as_str(),
            MatrixCell::Unsupported => "UNSUPPORTED",
            MatrixCell::Error(_) => "ERROR",
        }
    }

    pub fn symbol(&self) -> Option<SummarySymbol> {
        match self {
            MatrixCell::Graded(v) => Some(v.summary_symbol),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatrixRow {
    pub scenario_id: String,
    pub cells: Vec<MatrixCell>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerdictMatrix {
    pub profiles: Vec<String>,
    pub rows: Vec<MatrixRow>,
}

/// One line of the machine-readable report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportRecord {
    /// `check` or `summary`.
    pub record: String,
    pub scenario_id: String,
    pub profile: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub check_id: Option<CheckId>,
    /// PASS / WARNING / VIOLATION for checks; the summary symbol,
    /// UNSUPPORTED or ERROR for summaries.
    pub result: String,
    pub evidence: Vec<Evidence>,
    pub detail: String,
}

impl ReportRecord {
    pub fn for_verdict(v: &ComplianceVerdict) -> Vec<ReportRecord> {
        let mut out: Vec<ReportRecord> = v
            .checks
            .iter()
            .map(|c| ReportRecord {
                record: "check".into(),
                scenario_id: v.scenario_id.clone(),
                profile: v.profile.clone(),
                check_id: Some(c.id),
                result: c.result.to_string(),
                evidence: c.evidence.clone(),
                detail: format!("{}: {}", c.id.name(), c.detail),
            })
            .collect();
        out.push(ReportRecord {
            record: "summary".into(),
            scenario_id: v.scenario_id.clone(),
            profile: v.profile.clone(),
            check_id: None,
            result: v.summary_symbol.to_string(),
            evidence: Vec::new(),
            detail: format!("violations={} warnings={}", v.violations().len(), v.warnings().len()),
        });
        out
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("report records serialize")
    }
}

impl VerdictMatrix {
    pub fn cell(&self, scenario_id: &str, profile: &str) -> Option<&MatrixCell> {
        let col = self.profiles.iter().position(|p| p == profile)?;
        self.rows
            .iter()
            .find(|r| r.scenario_id == scenario_id)
            .map(|r| &r.cells[col])
    }

    pub fn render_text(&self) -> String {
        let header: Vec<&str> = std::iter::once("scenario")
            .chain(self.profiles.iter().map(String::as_str))
            .collect();
        let body: Vec<Vec<&str>> = self
            .rows
            .iter()
            .map(|r| {
                std::iter::once(r.scenario_id.as_str())
                    .chain(r.cells.iter().map(MatrixCell::label))
                    .collect()
            })
            .collect();
        let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
        for row in &body {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.len());
            }
        }
        let render = |cols: &[&str]| -> String {
            let cells: Vec<String> = cols.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
            cells.join("  ").trim_end().to_string()
        };
        let mut out = render(&header);
        out.push('\n');
        let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
        out.push_str(&rule.join("  "));
        out.push('\n');
        for row in &body {
            out.push_str(&render(row));
            out.push('\n');
        }
        out
    }

    pub fn report_jsonl(&self) -> String {
        let mut out = String::new();
        for row in &self.rows {
            for (profile, cell) in self.profiles.iter().zip(&row.cells) {
                let records = match cell {
                    MatrixCell::Graded(v) => ReportRecord::for_verdict(v),
                    other => vec![ReportRecord {
                        record: "summary".into(),
                        scenario_id: row.scenario_id.clone(),
                        profile: profile.clone(),
                        check_id: None,
                        result: other.label().to_string(),
                        evidence: Vec::new(),
                        detail: match other {
                            MatrixCell::Error(e) => e.clone(),
                            _ => "connection type not supported".into(),
                        },
                    }],
                };
                for r in records {
                    out.push_str(&r.to_json_line());
                    out.push('\n');
                }
            }
        }
        out
    }
}

fn grade_cell(profile: &StackProfile, scenario: &ScenarioConfig) -> MatrixCell {
    if scenario.dut_transports().iter().any(|t| !profile.supports(*t)) {
        return MatrixCell::Unsupported;
    }
    match crate::runner::run_with_profile_def(profile, scenario) {
        Ok(run) => match run.verdict {
            Ok(v) => MatrixCell::Graded(v),
            Err(e) => MatrixCell::Error(e.to_string()),
        },
        Err(e) => MatrixCell::Error(e.to_string()),
    }
}

/// Runs every scenario under every profile. Rows are computed in parallel;
/// the result does not depend on scheduling.
pub fn verdict_matrix(profiles: &[StackProfile], scenarios: &[ScenarioConfig]) -> VerdictMatrix {
    let rows = std::thread::scope(|s| {
        let handles: Vec<_> = scenarios
            .iter()
            .map(|sc| {
                s.spawn(move || MatrixRow {
                    scenario_id: sc.id.clone(),
                    cells: profiles.iter().map(|p| grade_cell(p, sc)).collect(),
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("matrix worker panicked"))
            .collect()
    });
    VerdictMatrix {
        profiles: profiles.iter().map(|p| p.name.clone()).collect(),
        rows,
    }
}
