//! Host behavior profiles for authentication and encryption failures.
//!
//! Each built-in profile reproduces what a tested stack shows the user
//! when a paired device presents the wrong key. `reference` follows the
//! core specification's decision table (see [`crate::host`]).

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::Transport;

/// What a host does when authentication or encryption fails.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureBehavior {
    /// Decision-table driven; see [`crate::host::decide_failure_action`].
    Compliant,
    SilentDeletePairing,
    GenericError(String),
    IndicatorOnly,
    NoIndication,
}

impl fmt::Display for FailureBehavior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FailureBehavior::Compliant => f.write_str("compliant"),
            FailureBehavior::SilentDeletePairing => f.write_str("silent-delete-pairing"),
            FailureBehavior::GenericError(text) => write!(f, "generic-error({text:?})"),
            FailureBehavior::IndicatorOnly => f.write_str("indicator-only"),
            FailureBehavior::NoIndication => f.write_str("no-indication"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StackProfile {
    pub name: String,
    pub on_auth_failure: FailureBehavior,
    /// Overrides `on_auth_failure` for LE encryption failures.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub on_encryption_failure: Option<FailureBehavior>,
    /// Host terminates failed links with Remote User Terminated Connection
    /// instead of Authentication Failure.
    #[serde(default)]
    pub disconnect_reason_bug: bool,
    pub key_survives_failure: bool,
    #[serde(default = "yes")]
    pub supports_bt: bool,
    #[serde(default = "yes")]
    pub supports_ble: bool,
}

fn yes() -> bool {
    true
}

impl StackProfile {
    pub fn new(name: &str, on_auth_failure: FailureBehavior) -> Self {
        let key_survives_failure = on_auth_failure != FailureBehavior::SilentDeletePairing;
        StackProfile {
            name: name.to_string(),
            on_auth_failure,
            on_encryption_failure: None,
            disconnect_reason_bug: false,
            key_survives_failure,
            supports_bt: true,
            supports_ble: true,
        }
    }

    fn with_reason_bug(mut self) -> Self {
        self.disconnect_reason_bug = true;
        self
    }

    fn without_ble(mut self) -> Self {
        self.supports_ble = false;
        self
    }

    fn on_encryption_failure(mut self, behavior: FailureBehavior) -> Self {
        self.on_encryption_failure = Some(behavior);
        self
    }

    pub fn behavior_for(&self, transport: Transport) -> &FailureBehavior {
        match (transport, &self.on_encryption_failure) {
            (Transport::Ble, Some(b)) => b,
            _ => &self.on_auth_failure,
        }
    }

    pub fn supports(&self, transport: Transport) -> bool {
        match transport {
            Transport::Bt => self.supports_bt,
            Transport::Ble => self.supports_ble,
        }
    }

    pub fn is_reference(&self) -> bool {
        self.on_auth_failure == FailureBehavior::Compliant
    }

    pub fn validate(&self) -> Result<(), ProfileError> {
        let deletes = |b: &FailureBehavior| *b == FailureBehavior::SilentDeletePairing;
        if (deletes(&self.on_auth_failure) || self.on_encryption_failure.as_ref().is_some_and(deletes))
            && self.key_survives_failure
        {
            return Err(ProfileError::Inconsistent {
                name: self.name.clone(),
                reason: "silent pairing deletion cannot leave the key valid",
            });
        }
        if self.name.is_empty() {
            return Err(ProfileError::Inconsistent {
                name: self.name.clone(),
                reason: "profile name must not be empty",
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProfileError {
    #[error("unknown profile {0:?}")]
    UnknownProfile(String),
    #[error("duplicate profile name {0:?}")]
    DuplicateName(String),
    #[error("profile {name:?} is inconsistent: {reason}")]
    Inconsistent { name: String, reason: &'static str },
}

/// Insertion-ordered set of uniquely named profiles.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ProfileRegistry {
    profiles: Vec<StackProfile>,
}

impl ProfileRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, profile: StackProfile) -> Result<(), ProfileError> {
        profile.validate()?;
        if self.get(&profile.name).is_ok() {
            return Err(ProfileError::DuplicateName(profile.name));
        }
        self.profiles.push(profile);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&StackProfile, ProfileError> {
        self.profiles
            .iter()
            .find(|p| p.name == name)
            .ok_or_else(|| ProfileError::UnknownProfile(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = &StackProfile> {
        self.profiles.iter()
    }

    pub fn names(&self) -> Vec<&str> {
        self.profiles.iter().map(|p| p.name.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }
}

pub const REFERENCE: &str = "reference";
pub const GOOGLE_ANDROID: &str = "google-android";
pub const SAMSUNG_ANDROID: &str = "samsung-android";
pub const IOS: &str = "ios";
pub const MACOS: &str = "macos";
pub const GNOME_BLUEZ: &str = "gnome-bluez";
pub const WINDOWS: &str = "windows";
pub const PERIPHERAL: &str = "peripheral";

pub const SAMSUNG_TEXT: &str = "Couldn't connect.";
pub const IOS_TEXT: &str = "Connection Unsuccessful";
pub const WINDOWS_TEXT: &str = "An unexpected error occurred. Please contact your system administrator.";
/// Shown by Windows when the remote device is simply switched off.
pub const WINDOWS_POWERED_OFF_TEXT: &str =
    "That didn't work. Make sure your Bluetooth device is still discoverable, then try again.";

/// The observed stacks, in the column order used by the verdict matrix,
/// followed by `reference`.
pub fn builtin_profiles() -> ProfileRegistry {
    use FailureBehavior::*;
    let profiles = [
        StackProfile::new(MACOS, IndicatorOnly).without_ble(),
        StackProfile::new(GNOME_BLUEZ, IndicatorOnly).without_ble(),
        StackProfile::new(WINDOWS, GenericError(WINDOWS_TEXT.into())),
        StackProfile::new(IOS, GenericError(IOS_TEXT.into())).without_ble(),
        // LE encryption failures terminate the link without any message.
        StackProfile::new(SAMSUNG_ANDROID, GenericError(SAMSUNG_TEXT.into()))
            .with_reason_bug()
            .on_encryption_failure(NoIndication),
        StackProfile::new(GOOGLE_ANDROID, SilentDeletePairing).with_reason_bug(),
        StackProfile::new(PERIPHERAL, NoIndication),
        StackProfile::new(REFERENCE, Compliant),
    ];
    let mut registry = ProfileRegistry::new();
    for p in profiles {
        registry.insert(p).expect("built-in profiles are consistent");
    }
    registry
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_registry_contents() {
        let reg = builtin_profiles();
        assert_eq!(
            reg.names(),
            [
                MACOS,
                GNOME_BLUEZ,
                WINDOWS,
                IOS,
                SAMSUNG_ANDROID,
                GOOGLE_ANDROID,
                PERIPHERAL,
                REFERENCE
            ]
        );
        let google = reg.get(GOOGLE_ANDROID).unwrap();
        assert_eq!(google.on_auth_failure, FailureBehavior::SilentDeletePairing);
        assert!(google.disconnect_reason_bug);
        assert!(!google.key_survives_failure);

        let samsung = reg.get(SAMSUNG_ANDROID).unwrap();
        assert_eq!(
            samsung.on_auth_failure,
            FailureBehavior::GenericError("Couldn't connect.".into())
        );
        assert!(samsung.disconnect_reason_bug && samsung.key_survives_failure);

        for name in [IOS, MACOS, GNOME_BLUEZ, WINDOWS, PERIPHERAL, REFERENCE] {
            let p = reg.get(name).unwrap();
            assert!(p.key_survives_failure, "{name}");
            assert!(!p.disconnect_reason_bug, "{name}");
        }
        assert!(reg.get(REFERENCE).unwrap().is_reference());
    }

    #[test]
    fn windows_key_change_text_differs_from_powered_off() {
        let reg = builtin_profiles();
        match &reg.get(WINDOWS).unwrap().on_auth_failure {
            FailureBehavior::GenericError(text) => assert_ne!(text, WINDOWS_POWERED_OFF_TEXT),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_profile_lookup_fails() {
        assert_eq!(
            builtin_profiles().get("symbian"),
            Err(ProfileError::UnknownProfile("symbian".into()))
        );
    }

    #[test]
    fn duplicate_names_are_rejected() {
        let mut reg = builtin_profiles();
        assert_eq!(
            reg.insert(StackProfile::new(IOS, FailureBehavior::NoIndication)),
            Err(ProfileError::DuplicateName(IOS.into()))
        );
    }

    #[test]
    fn silent_delete_must_not_keep_key() {
        let mut p = StackProfile::new("x", FailureBehavior::SilentDeletePairing);
        assert!(p.validate().is_ok());
        p.key_survives_failure = true;
        assert!(matches!(p.validate(), Err(ProfileError::Inconsistent { .. })));
    }

    #[test]
    fn ble_override_applies_only_to_le() {
        let reg = builtin_profiles();
        let samsung = reg.get(SAMSUNG_ANDROID).unwrap();
        assert_eq!(samsung.behavior_for(Transport::Ble), &FailureBehavior::NoIndication);
        assert!(matches!(
            samsung.behavior_for(Transport::Bt),
            FailureBehavior::GenericError(_)
        ));
    }

    #[test]
    fn profiles_serialize_round_trip() {
        for p in builtin_profiles().iter() {
            let text = toml::to_string(p).unwrap();
            let back: StackProfile = toml::from_str(&text).unwrap();
            assert_eq!(&back, p);
        }
    }
}
