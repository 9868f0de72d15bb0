//! Scenario runner: executes configs, writes traces and reports.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::bus::BusEvent;
use crate::compliance::{self, ComplianceError, ComplianceVerdict, ReportRecord, RunArtifacts, VerdictMatrix};
use crate::config::{ConfigError, ScenarioConfig};
use crate::host::UserSurfaceEvent;
use crate::profiles::{builtin_profiles, ProfileError, StackProfile};
use crate::sim::World;
use crate::trace::{self, CapturedPacket, TraceError};
use crate::types::{DeviceAddress, LinkKeyRecord};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl RunError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        RunError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Process exit status of a scenario run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExitStatus {
    /// No check reported a violation.
    Clean,
    Violation,
    ConfigError,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        match self {
            ExitStatus::Clean => 0,
            ExitStatus::Violation => 1,
            ExitStatus::ConfigError => 2,
        }
    }
}

impl fmt::Display for ExitStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.code())
    }
}

/// Changes to the device under test's key store over a run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KeyStoreDelta {
    pub added: Vec<LinkKeyRecord>,
    pub removed: Vec<LinkKeyRecord>,
    /// `(before, after)` for records whose key or classification changed.
    pub changed: Vec<(LinkKeyRecord, LinkKeyRecord)>,
}

impl KeyStoreDelta {
    pub fn between(before: &[LinkKeyRecord], after: &[LinkKeyRecord]) -> Self {
        let index = |rs: &[LinkKeyRecord]| -> BTreeMap<_, LinkKeyRecord> {
            rs.iter().map(|r| ((r.peer, r.transport), *r)).collect()
        };
        let (b, a) = (index(before), index(after));
        let mut delta = KeyStoreDelta::default();
        for (k, old) in &b {
            match a.get(k) {
                None => delta.removed.push(*old),
                Some(new) if new != old => delta.changed.push((*old, *new)),
                Some(_) => {}
            }
        }
        delta.added = a.iter().filter(|(k, _)| !b.contains_key(k)).map(|(_, r)| *r).collect();
        delta
    }

    pub fn is_empty(&self) -> bool {
        self.added.is_empty() && self.removed.is_empty() && self.changed.is_empty()
    }
}

/// Result of executing one scenario.
#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub scenario_id: String,
    pub profile: String,
    pub world: World,
    /// The device under test's keys before the script ran.
    pub initial_store: Vec<LinkKeyRecord>,
    pub verdict: Result<ComplianceVerdict, ComplianceError>,
}

impl ScenarioRun {
    pub fn dut(&self) -> DeviceAddress {
        self.world.dut().address
    }

    /// What the user of the device under test saw.
    pub fn surface_events(&self) -> Vec<UserSurfaceEvent> {
        let dut = self.dut();
        self.world
            .bus()
            .iter()
            .filter_map(|e| match e {
                BusEvent::Surface { device, event } if *device == dut => Some(event.clone()),
                _ => None,
            })
            .collect()
    }

    pub fn keystore_delta(&self) -> KeyStoreDelta {
        let after: Vec<LinkKeyRecord> = self.world.dut().host.store().records().copied().collect();
        KeyStoreDelta::between(&self.initial_store, &after)
    }

    pub fn traces(&self) -> BTreeMap<DeviceAddress, Vec<CapturedPacket>> {
        self.world.traces()
    }

    pub fn exit_status(&self) -> ExitStatus {
        match &self.verdict {
            Ok(v) if v.has_violation() => ExitStatus::Violation,
            _ => ExitStatus::Clean,
        }
    }

    /// JSON Lines report for this run.
    pub fn report_jsonl(&self) -> String {
        let records = match &self.verdict {
            Ok(v) => ReportRecord::for_verdict(v),
            Err(e) => vec![ReportRecord {
                record: "summary".into(),
                scenario_id: self.scenario_id.clone(),
                profile: self.profile.clone(),
                check_id: None,
                result: "NOT_GRADED".into(),
                evidence: Vec::new(),
                detail: e.to_string(),
            }],
        };
        records.iter().map(|r| r.to_json_line() + "\n").collect()
    }
}

/// Runs a validated scenario as written.
pub fn execute(cfg: &ScenarioConfig) -> Result<ScenarioRun, ConfigError> {
    let mut world = World::new(cfg)?;
    let initial_store = world.dut().host.store().records().copied().collect();
    for (i, step) in cfg.script.iter().enumerate() {
        world.run_step(i as u32, step);
    }
    let traces = world.traces();
    let dut = world.dut();
    let profile = dut.host.profile().name.clone();
    let verdict = compliance::grade(&RunArtifacts {
        scenario_id: &cfg.id,
        profile: &profile,
        dut: dut.address,
        traces: &traces,
        bus: world.bus(),
    });
    Ok(ScenarioRun {
        scenario_id: cfg.id.clone(),
        profile,
        world,
        initial_store,
        verdict,
    })
}

/// Runs `cfg` with the device under test switched to the named profile.
pub fn run_with_profile(profile: &str, cfg: &ScenarioConfig) -> Result<ScenarioRun, RunError> {
    let registry = cfg.registry()?;
    let def = registry.get(profile)?.clone();
    run_with_profile_def(&def, cfg)
}

/// Like [`run_with_profile`] for a profile that need not be registered.
pub fn run_with_profile_def(profile: &StackProfile, cfg: &ScenarioConfig) -> Result<ScenarioRun, RunError> {
    let mut cfg = cfg.with_profile(&profile.name);
    let known = cfg.registry()?.get(&profile.name).ok().cloned();
    match known {
        Some(existing) if existing == *profile => {}
        Some(_) => {
            // Same name, different behavior: the caller's definition wins.
            cfg.profiles.retain(|p| p.name != profile.name);
            if builtin_profiles().get(&profile.name).is_ok() {
                return Err(ProfileError::DuplicateName(profile.name.clone()).into());
            }
            cfg.profiles.push(profile.clone());
        }
        None => cfg.profiles.push(profile.clone()),
    }
    Ok(execute(&cfg)?)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Overrides `outputs.trace`.
    pub trace_out: Option<PathBuf>,
    /// Overrides `outputs.report`.
    pub report_out: Option<PathBuf>,
    pub seed_override: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub run: ScenarioRun,
    pub exit: ExitStatus,
    pub trace_files: Vec<PathBuf>,
    pub report_file: Option<PathBuf>,
}

/// Executes `cfg` and writes the requested artifacts.
pub fn run_scenario(mut cfg: ScenarioConfig, opts: &RunOptions) -> Result<RunReport, RunError> {
    if let Some(seed) = opts.seed_override {
        cfg.seed = seed;
    }
    let run = execute(&cfg)?;
    let trace_dir = opts.trace_out.clone().or_else(|| cfg.outputs.trace.clone());
    let report_path = opts.report_out.clone().or_else(|| cfg.outputs.report.clone());
    let trace_files = match &trace_dir {
        Some(dir) => write_traces(&run.world, dir)?,
        None => Vec::new(),
    };
    if let Some(path) = &report_path {
        write_file(path, run.report_jsonl().as_bytes())?;
    }
    Ok(RunReport {
        exit: run.exit_status(),
        run,
        trace_files,
        report_file: report_path,
    })
}

/// Writes one `<address>.btsnoop` per device into `dir`.
pub fn write_traces(world: &World, dir: &Path) -> Result<Vec<PathBuf>, RunError> {
    std::fs::create_dir_all(dir).map_err(|e| RunError::io(dir, e))?;
    let mut files = Vec::new();
    for d in world.devices() {
        let path = dir.join(format!("{}.btsnoop", d.address.file_stem()));
        write_file(&path, &trace::write_trace(&d.trace)?)?;
        files.push(path);
    }
    Ok(files)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), RunError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| RunError::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| RunError::io(path, e))
}

/// Loads every `*.toml` directly inside `dir`, sorted by file name.
pub fn load_scenarios(dir: &Path) -> Result<Vec<ScenarioConfig>, RunError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| RunError::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| ScenarioConfig::load(p).map_err(RunError::from))
        .collect()
}

/// Grades every scenario in `dir` against `profiles` (all built-in
/// profiles when `None`).
pub fn run_matrix(
    dir: &Path,
    profiles: Option<&[String]>,
    seed_override: Option<u64>,
) -> Result<VerdictMatrix, RunError> {
    let mut scenarios = load_scenarios(dir)?;
    if let Some(seed) = seed_override {
        for s in &mut scenarios {
            s.seed = seed;
        }
    }
    let registry = builtin_profiles();
    let selected: Vec<StackProfile> = match profiles {
        None => registry.iter().cloned().collect(),
        Some(names) => names
            .iter()
            .map(|n| registry.get(n).cloned())
            .collect::<Result<_, _>>()?,
    };
    Ok(compliance::verdict_matrix(&selected, &scenarios))
}
