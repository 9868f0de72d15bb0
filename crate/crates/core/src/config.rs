//! Scenario configuration files (TOML).
//!
//! ```toml
//! id = "bonded-mismatch/reference"
//! seed = 1
//!
//! [[devices]]
//! name = "phone"
//! address = "00:1A:7D:DA:71:01"
//! role = "host"
//! profile = "reference"
//!
//! [[devices]]
//! name = "headset"
//! address = "00:1A:7D:DA:71:02"
//! role = "peripheral"
//!
//! [[pairings]]
//! a = "phone"
//! b = "headset"
//! key_type = "authenticated"
//! bonded = true
//! transport = "bt"
//!
//! [[script]]
//! op = "inject_fault"
//! device = "phone"
//! target = "link_key_request_reply"
//! match_peer = "headset"
//! replacement_key = "0x0badc0de0badc0de0badc0de0badc0de"
//! window = { start = 0, end = 2 }
//!
//! [[script]]
//! op = "connect"
//! from = "phone"
//! to = "headset"
//! ```
//!
//! Script steps are numbered from 0 in file order; fault windows refer to
//! these numbers. The single `host` device is the device under test.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attack::{FaultTarget, StepWindow};
use crate::host::{Consent, OptionPolicy};
use crate::profiles::{builtin_profiles, ProfileRegistry, StackProfile, PERIPHERAL};
use crate::types::{DeviceAddress, KeyType, LinkKey, Transport};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Syntax { path: String, message: String },
    #[error("{path}: {field}: {message}")]
    Invalid {
        path: String,
        field: String,
        message: String,
    },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

impl ConfigError {
    fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError::Invalid {
            path: String::new(),
            field: field.into(),
            message: message.into(),
        }
    }

    /// Attaches the file the error came from.
    pub fn in_file(self, file: &Path) -> Self {
        let file = file.display().to_string();
        match self {
            ConfigError::Syntax { message, .. } => ConfigError::Syntax { path: file, message },
            ConfigError::Invalid { field, message, .. } => ConfigError::Invalid {
                path: file,
                field,
                message,
            },
            ConfigError::Io { message, .. } => ConfigError::Io { path: file, message },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviceRole {
    /// A host running a stack profile; the device under test.
    Host,
    Peripheral,
    Mitm,
}

impl fmt::Display for DeviceRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DeviceRole::Host => "host",
            DeviceRole::Peripheral => "peripheral",
            DeviceRole::Mitm => "mitm",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceConfig {
    pub name: String,
    pub address: DeviceAddress,
    pub role: DeviceRole,
    /// Required for `host`; defaults to `peripheral` for peripherals.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub option_policy: Option<OptionPolicy>,
    /// For `mitm`: the two devices it sits between (upstream first).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub victims: Option<[String; 2]>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairingConfig {
    pub a: String,
    pub b: String,
    pub key_type: KeyType,
    pub bonded: bool,
    #[serde(default)]
    pub transport: Transport,
    #[serde(default)]
    pub via_mitm: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowConfig {
    pub start: u32,
    pub end: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum Step {
    Connect {
        from: String,
        to: String,
        #[serde(default)]
        transport: Transport,
    },
    /// Repeats the most recent `connect`.
    Reconnect,
    InjectFault {
        /// Device whose HCI layer is hooked.
        device: String,
        target: FaultTarget,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        match_peer: Option<String>,
        replacement_key: LinkKey,
        window: WindowConfig,
    },
    MitmPresent {
        present: bool,
    },
    UserReset {
        device: String,
        peer: String,
        #[serde(default)]
        transport: Transport,
    },
    UserConsent {
        /// Defaults to the device under test.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        device: Option<String>,
        decision: Consent,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    /// Directory receiving one `<address>.btsnoop` per device.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<PathBuf>,
    /// JSON Lines verdict report.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<PathBuf>,
}

impl Outputs {
    fn is_empty(&self) -> bool {
        self.trace.is_none() && self.report.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub id: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub devices: Vec<DeviceConfig>,
    #[serde(default)]
    pub pairings: Vec<PairingConfig>,
    #[serde(default)]
    pub script: Vec<Step>,
    #[serde(default, skip_serializing_if = "Outputs::is_empty")]
    pub outputs: Outputs,
    /// Profiles defined by the scenario in addition to the built-in ones.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub profiles: Vec<StackProfile>,
}

/// `profiles` as `[[profiles]]` tables, the form a scenario file accepts.
pub fn profiles_to_toml<'a>(profiles: impl IntoIterator<Item = &'a StackProfile>) -> String {
    #[derive(Serialize)]
    struct Section<'a> {
        profiles: Vec<&'a StackProfile>,
    }
    toml::to_string(&Section {
        profiles: profiles.into_iter().collect(),
    })
    .expect("profiles serialize")
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| ConfigError::Syntax {
            path: String::new(),
            message: e.to_string().trim_end().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text).map_err(|e| e.in_file(path))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario configs serialize")
    }

    pub fn device(&self, name: &str) -> Option<&DeviceConfig> {
        self.devices.iter().find(|d| d.name == name)
    }

    /// The single `host` device.
    pub fn dut(&self) -> Option<&DeviceConfig> {
        self.devices.iter().find(|d| d.role == DeviceRole::Host)
    }

    pub fn mitm(&self) -> Option<&DeviceConfig> {
        self.devices.iter().find(|d| d.role == DeviceRole::Mitm)
    }

    /// Built-in profiles plus the scenario's own.
    pub fn registry(&self) -> Result<ProfileRegistry, ConfigError> {
        let mut reg = builtin_profiles();
        for (i, p) in self.profiles.iter().enumerate() {
            reg.insert(p.clone())
                .map_err(|e| ConfigError::invalid(format!("profiles[{i}]"), e.to_string()))?;
        }
        Ok(reg)
    }

    /// Transports the device under test initiates connections on.
    pub fn dut_transports(&self) -> BTreeSet<Transport> {
        let dut = self.dut().map(|d| d.name.as_str());
        let mut out = BTreeSet::new();
        for step in &self.script {
            if let Step::Connect { from, to, transport } = step {
                if Some(from.as_str()) == dut || Some(to.as_str()) == dut {
                    out.insert(*transport);
                }
            }
        }
        out
    }

    /// Copy of the scenario with the device under test running `profile`.
    pub fn with_profile(&self, profile: &str) -> Self {
        let mut cfg = self.clone();
        if let Some(d) = cfg.devices.iter_mut().find(|d| d.role == DeviceRole::Host) {
            d.profile = Some(profile.to_string());
        }
        cfg
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let registry = self.registry()?;
        let mut names = BTreeMap::new();
        let mut addresses = BTreeSet::new();
        for (i, d) in self.devices.iter().enumerate() {
            let field = |f: &str| format!("devices[{i}].{f}");
            if names.insert(d.name.as_str(), d.role).is_some() {
                return Err(ConfigError::invalid(
                    field("name"),
                    format!("duplicate device name {:?}", d.name),
                ));
            }
            if !addresses.insert(d.address) {
                return Err(ConfigError::invalid(
                    field("address"),
                    format!("duplicate address {}", d.address),
                ));
            }
            match d.role {
                DeviceRole::Host if d.profile.is_none() => {
                    return Err(ConfigError::invalid(field("profile"), "host devices need a profile"));
                }
                DeviceRole::Mitm if d.victims.is_none() => {
                    return Err(ConfigError::invalid(field("victims"), "mitm devices need two victims"));
                }
                DeviceRole::Mitm if d.profile.is_some() => {
                    return Err(ConfigError::invalid(field("profile"), "mitm devices have no profile"));
                }
                _ => {}
            }
            if let Some(p) = &d.profile {
                registry
                    .get(p)
                    .map_err(|e| ConfigError::invalid(field("profile"), e.to_string()))?;
            }
        }
        let hosts = self.devices.iter().filter(|d| d.role == DeviceRole::Host).count();
        if hosts != 1 {
            return Err(ConfigError::invalid(
                "devices",
                format!("exactly one device must have role \"host\", found {hosts}"),
            ));
        }
        let mitms = self.devices.iter().filter(|d| d.role == DeviceRole::Mitm).count();
        if mitms > 1 {
            return Err(ConfigError::invalid("devices", "at most one mitm device is supported"));
        }

        // Names usable as connection endpoints.
        let endpoint = |field: String, name: &str| -> Result<(), ConfigError> {
            match names.get(name) {
                None => Err(ConfigError::invalid(field, format!("undeclared device {name:?}"))),
                Some(DeviceRole::Mitm) => Err(ConfigError::invalid(field, format!("{name:?} is the mitm"))),
                Some(_) => Ok(()),
            }
        };

        if let Some(m) = self.mitm() {
            let i = self
                .devices
                .iter()
                .position(|d| d.role == DeviceRole::Mitm)
                .expect("present");
            let [a, b] = m.victims.as_ref().expect("checked above");
            endpoint(format!("devices[{i}].victims[0]"), a)?;
            endpoint(format!("devices[{i}].victims[1]"), b)?;
            if a == b {
                return Err(ConfigError::invalid(
                    format!("devices[{i}].victims"),
                    "victims must differ",
                ));
            }
        }

        for (i, p) in self.pairings.iter().enumerate() {
            endpoint(format!("pairings[{i}].a"), &p.a)?;
            endpoint(format!("pairings[{i}].b"), &p.b)?;
            if p.a == p.b {
                return Err(ConfigError::invalid(
                    format!("pairings[{i}]"),
                    "a device cannot pair with itself",
                ));
            }
            if p.via_mitm {
                let Some(m) = self.mitm() else {
                    return Err(ConfigError::invalid(
                        format!("pairings[{i}].via_mitm"),
                        "via_mitm requires a mitm device",
                    ));
                };
                let victims: BTreeSet<&str> = m.victims.iter().flatten().map(String::as_str).collect();
                if !victims.contains(p.a.as_str()) || !victims.contains(p.b.as_str()) {
                    return Err(ConfigError::invalid(
                        format!("pairings[{i}].via_mitm"),
                        "the mitm's victims must be the paired devices",
                    ));
                }
            }
        }

        let mut connected = false;
        for (i, step) in self.script.iter().enumerate() {
            let field = |f: &str| format!("script[{i}].{f}");
            match step {
                Step::Connect { from, to, .. } => {
                    endpoint(field("from"), from)?;
                    endpoint(field("to"), to)?;
                    if from == to {
                        return Err(ConfigError::invalid(field("to"), "a device cannot connect to itself"));
                    }
                    connected = true;
                }
                Step::Reconnect if !connected => {
                    return Err(ConfigError::invalid(
                        format!("script[{i}]"),
                        "reconnect before any connect",
                    ));
                }
                Step::Reconnect => {}
                Step::InjectFault {
                    device,
                    match_peer,
                    window,
                    ..
                } => {
                    endpoint(field("device"), device)?;
                    if let Some(peer) = match_peer {
                        endpoint(field("match_peer"), peer)?;
                    }
                    StepWindow::new(window.start, window.end)
                        .map_err(|e| ConfigError::invalid(field("window"), e.to_string()))?;
                }
                Step::MitmPresent { .. } if self.mitm().is_none() => {
                    return Err(ConfigError::invalid(
                        format!("script[{i}]"),
                        "mitm_present without a mitm device",
                    ));
                }
                Step::MitmPresent { .. } => {}
                Step::UserReset { device, peer, .. } => {
                    endpoint(field("device"), device)?;
                    endpoint(field("peer"), peer)?;
                }
                Step::UserConsent { device, .. } => {
                    if let Some(d) = device {
                        endpoint(field("device"), d)?;
                    }
                }
            }
        }
        Ok(())
    }

    /// Peripheral devices without an explicit profile run `peripheral`.
    pub fn profile_of(&self, device: &DeviceConfig) -> String {
        device.profile.clone().unwrap_or_else(|| PERIPHERAL.to_string())
    }
}
