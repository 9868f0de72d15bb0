//! Host state machine.
//!
//! A [`Host`] owns the device's key store, answers controller key requests
//! and reacts to authentication and encryption failures according to its
//! [`StackProfile`]. With the `reference` profile it follows the core
//! specification's authentication failure table:
//!
//! | Key type        | Bonded | Action                                                |
//! |-----------------|--------|-------------------------------------------------------|
//! | Combination     | no     | Option 1: auto pairing; Option 2 (rec.): ask user     |
//! | Combination     | yes    | Notify user of security failure                       |
//! | Unauthenticated | no     | Option 1 (rec.): auto SSP; Option 2: ask user         |
//! | Unauthenticated | yes    | Notify user of security failure                       |
//! | Authenticated   | no     | Option 1: auto SSP; Option 2 (rec.): ask user         |
//! | Authenticated   | yes    | Notify user of security failure                       |

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::clock::SimTime;
use crate::hci::{HciCommand, HciEvent};
use crate::keystore::{KeyDeletion, KeyStore};
use crate::linklayer::Side;
use crate::profiles::{FailureBehavior, StackProfile};
use crate::types::{DeviceAddress, ErrorCode, KeyType, LinkKey, LinkKeyRecord, Transport};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SurfaceKind {
    SecurityFailureWarning,
    RepairConsentPrompt,
    GenericErrorText(String),
    TransientIndicator,
    SilentKeyDeletion,
    /// The failure produced no visible reaction.
    None,
}

impl SurfaceKind {
    pub fn is_visible(&self) -> bool {
        !matches!(self, SurfaceKind::None | SurfaceKind::SilentKeyDeletion)
    }
}

/// What the user of a device saw, and when.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserSurfaceEvent {
    pub kind: SurfaceKind,
    pub peer: DeviceAddress,
    pub timestamp: SimTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FailureAction {
    NotifySecurityFailure,
    AutoRepair,
    AskUserThenRepair,
}

/// Selects between the two options the table offers for non-bonded keys.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptionPolicy {
    #[default]
    Recommended,
    Option1,
    Option2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureDecision {
    pub key_type: KeyType,
    pub bonded: bool,
    pub action: FailureAction,
    pub recommended: bool,
}

pub fn decide_failure_action(key_type: KeyType, bonded: bool, policy: OptionPolicy) -> FailureDecision {
    if bonded {
        return FailureDecision {
            key_type,
            bonded,
            action: FailureAction::NotifySecurityFailure,
            recommended: true,
        };
    }
    let recommended_option = match key_type {
        KeyType::Unauthenticated => OptionPolicy::Option1,
        KeyType::Combination | KeyType::Authenticated => OptionPolicy::Option2,
    };
    let chosen = match policy {
        OptionPolicy::Recommended => recommended_option,
        other => other,
    };
    FailureDecision {
        key_type,
        bonded,
        action: if chosen == OptionPolicy::Option1 {
            FailureAction::AutoRepair
        } else {
            FailureAction::AskUserThenRepair
        },
        recommended: chosen == recommended_option,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Consent {
    Accept,
    Reject,
}

/// Why a pairing was started.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairingTrigger {
    /// Declared in the scenario, or first contact with an unknown peer.
    Initial,
    /// Started without asking the user after a failure.
    AutoRepair,
    /// Started after the user accepted a repair prompt.
    ConsentedRepair,
    /// The user removed the pairing themselves.
    AfterUserReset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairingRequest {
    pub peer: DeviceAddress,
    pub transport: Transport,
    pub key_type: KeyType,
    pub bonded: bool,
    pub trigger: PairingTrigger,
}

/// Everything a host produced while handling one input.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HostOutput {
    pub commands: Vec<HciCommand>,
    pub surface: Vec<UserSurfaceEvent>,
    pub deletions: Vec<KeyDeletion>,
    pub pairings: Vec<PairingRequest>,
}

impl HostOutput {
    fn command(cmd: HciCommand) -> Self {
        HostOutput {
            commands: vec![cmd],
            ..Default::default()
        }
    }
}

/// The host's view of one connection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HostLink {
    pub peer: DeviceAddress,
    pub transport: Transport,
    pub role: Side,
    pub encrypted: bool,
    pub failed: bool,
    pub closed: bool,
}

#[derive(Debug, Clone)]
pub struct Host {
    address: DeviceAddress,
    profile: StackProfile,
    option_policy: OptionPolicy,
    store: KeyStore,
    consents: VecDeque<Consent>,
    connections: BTreeMap<u16, HostLink>,
    known_peers: BTreeSet<(DeviceAddress, Transport)>,
    user_resets: BTreeSet<(DeviceAddress, Transport)>,
    pending_bond: BTreeMap<DeviceAddress, bool>,
}

impl Host {
    pub fn new(address: DeviceAddress, profile: StackProfile, option_policy: OptionPolicy) -> Self {
        Host {
            address,
            profile,
            option_policy,
            store: KeyStore::new(),
            consents: VecDeque::new(),
            connections: BTreeMap::new(),
            known_peers: BTreeSet::new(),
            user_resets: BTreeSet::new(),
            pending_bond: BTreeMap::new(),
        }
    }

    pub fn address(&self) -> DeviceAddress {
        self.address
    }

    pub fn profile(&self) -> &StackProfile {
        &self.profile
    }

    pub fn store(&self) -> &KeyStore {
        &self.store
    }

    /// Stores a pairing result directly (LE key distribution is not modeled
    /// on HCI).
    pub fn install_key(&mut self, record: LinkKeyRecord) {
        self.known_peers.insert((record.peer, record.transport));
        self.user_resets.remove(&(record.peer, record.transport));
        self.store.put(record);
    }

    pub fn push_consent(&mut self, consent: Consent) {
        self.consents.push_back(consent);
    }

    /// Removes a pairing at the user's request.
    pub fn user_reset(&mut self, peer: DeviceAddress, transport: Transport) -> KeyDeletion {
        self.user_resets.insert((peer, transport));
        self.store.delete(peer, transport)
    }

    pub fn on_connection_opened(&mut self, handle: u16, peer: DeviceAddress, transport: Transport, role: Side) {
        self.connections.insert(
            handle,
            HostLink {
                peer,
                transport,
                role,
                encrypted: false,
                failed: false,
                closed: false,
            },
        );
    }

    pub fn link(&self, handle: u16) -> Option<&HostLink> {
        self.connections.get(&handle)
    }

    /// Marks the next Link Key Notification from `peer` as bonded or not.
    pub fn begin_pairing(&mut self, peer: DeviceAddress, bonded: bool) {
        self.pending_bond.insert(peer, bonded);
    }

    pub fn on_link_key_request(&self, peer: DeviceAddress) -> HciCommand {
        match self.store.get(peer, Transport::Bt) {
            Some(record) => HciCommand::LinkKeyRequestReply { peer, key: record.key },
            None => HciCommand::LinkKeyRequestNegativeReply { peer },
        }
    }

    pub fn authentication_request(&self, handle: u16) -> HciCommand {
        HciCommand::AuthenticationRequested { handle }
    }

    /// LE Enable Encryption with the stored LTK, or `None` without one.
    pub fn encryption_request(&self, handle: u16) -> Option<HciCommand> {
        let conn = self.connections.get(&handle)?;
        let record = self.store.get(conn.peer, Transport::Ble)?;
        Some(HciCommand::LeEnableEncryption {
            handle,
            ltk: record.key,
        })
    }

    pub fn ltk_for(&self, peer: DeviceAddress) -> Option<LinkKey> {
        self.store.get(peer, Transport::Ble).map(|r| r.key)
    }

    /// Data may only flow on links that are encrypted and never failed.
    pub fn may_send_data(&self, handle: u16) -> bool {
        self.connections
            .get(&handle)
            .is_some_and(|c| c.encrypted && !c.failed && !c.closed)
    }

    pub fn handle_event(&mut self, event: &HciEvent, now: SimTime) -> HostOutput {
        match event {
            HciEvent::LinkKeyRequest { peer } => HostOutput::command(self.on_link_key_request(*peer)),
            HciEvent::AuthenticationComplete { handle, status } if !status.is_success() => {
                self.on_authentication_failure(*handle, *status, now)
            }
            HciEvent::EncryptionChange {
                handle,
                status,
                enabled,
            } => {
                if *enabled {
                    if let Some(c) = self.connections.get_mut(handle) {
                        c.encrypted = true;
                    }
                    HostOutput::default()
                } else {
                    let status = if status.is_success() {
                        ErrorCode::AuthenticationFailure
                    } else {
                        *status
                    };
                    self.on_authentication_failure(*handle, status, now)
                }
            }
            HciEvent::DisconnectionComplete { handle, reason } => self.on_disconnection(*handle, *reason, now),
            HciEvent::LinkKeyNotification { peer, key, key_type } => {
                let bonded = self.pending_bond.remove(peer).unwrap_or(true);
                self.install_key(LinkKeyRecord {
                    peer: *peer,
                    key: *key,
                    key_type: *key_type,
                    bonded,
                    transport: Transport::Bt,
                });
                HostOutput::default()
            }
            _ => HostOutput::default(),
        }
    }

    /// The host has no key to secure `handle` with and asks for pairing.
    pub fn on_missing_key(&mut self, handle: u16, now: SimTime) -> HostOutput {
        let mut out = HostOutput::default();
        if let Some(conn) = self.connections.get(&handle).copied() {
            self.react(conn.peer, conn.transport, conn.role == Side::Initiator, now, &mut out);
        }
        out
    }

    /// Reaction to a failed authentication or encryption start on `handle`.
    /// The reaction depends on the stored key, not on the failure status.
    pub fn on_authentication_failure(&mut self, handle: u16, _status: ErrorCode, now: SimTime) -> HostOutput {
        let mut out = HostOutput::default();
        let Some(conn) = self.connections.get_mut(&handle) else {
            return out;
        };
        conn.failed = true;
        let (peer, transport, role) = (conn.peer, conn.transport, conn.role);

        if role == Side::Initiator && !conn.closed {
            let reason = if self.profile.disconnect_reason_bug {
                ErrorCode::RemoteUserTerminated
            } else {
                ErrorCode::AuthenticationFailure
            };
            out.commands.push(HciCommand::Disconnect { handle, reason });
        }
        self.react(peer, transport, role == Side::Initiator, now, &mut out);
        out
    }

    fn on_disconnection(&mut self, handle: u16, reason: ErrorCode, now: SimTime) -> HostOutput {
        let mut out = HostOutput::default();
        let Some(conn) = self.connections.get_mut(&handle) else {
            return out;
        };
        conn.closed = true;
        // A responder only learns about a failed authentication through the
        // disconnect reason.
        if conn.role == Side::Responder && !conn.failed && reason == ErrorCode::AuthenticationFailure {
            conn.failed = true;
            let (peer, transport) = (conn.peer, conn.transport);
            self.react(peer, transport, false, now, &mut out);
        }
        out
    }

    fn react(
        &mut self,
        peer: DeviceAddress,
        transport: Transport,
        may_repair: bool,
        now: SimTime,
        out: &mut HostOutput,
    ) {
        let surface = |kind| UserSurfaceEvent {
            kind,
            peer,
            timestamp: now,
        };
        let Some(record) = self.store.get(peer, transport).copied() else {
            // No local key: the only way forward is a new pairing.
            if may_repair {
                let trigger = if self.user_resets.contains(&(peer, transport)) {
                    PairingTrigger::AfterUserReset
                } else if self.known_peers.contains(&(peer, transport)) {
                    PairingTrigger::AutoRepair
                } else {
                    PairingTrigger::Initial
                };
                out.pairings.push(PairingRequest {
                    peer,
                    transport,
                    key_type: KeyType::Unauthenticated,
                    bonded: true,
                    trigger,
                });
            }
            return;
        };

        match self.profile.behavior_for(transport).clone() {
            FailureBehavior::Compliant => {
                let decision = decide_failure_action(record.key_type, record.bonded, self.option_policy);
                match decision.action {
                    FailureAction::NotifySecurityFailure => {
                        out.surface.push(surface(SurfaceKind::SecurityFailureWarning));
                    }
                    FailureAction::AutoRepair if may_repair => out.pairings.push(PairingRequest {
                        peer,
                        transport,
                        key_type: KeyType::Unauthenticated,
                        bonded: record.bonded,
                        trigger: PairingTrigger::AutoRepair,
                    }),
                    FailureAction::AutoRepair => {}
                    FailureAction::AskUserThenRepair => {
                        out.surface.push(surface(SurfaceKind::RepairConsentPrompt));
                        if may_repair && self.consents.pop_front() == Some(Consent::Accept) {
                            out.pairings.push(PairingRequest {
                                peer,
                                transport,
                                key_type: record.key_type,
                                bonded: record.bonded,
                                trigger: PairingTrigger::ConsentedRepair,
                            });
                        }
                    }
                }
            }
            FailureBehavior::SilentDeletePairing => {
                out.deletions.push(self.store.delete(peer, transport));
                out.surface.push(surface(SurfaceKind::SilentKeyDeletion));
            }
            FailureBehavior::GenericError(text) => out.surface.push(surface(SurfaceKind::GenericErrorText(text))),
            FailureBehavior::IndicatorOnly => out.surface.push(surface(SurfaceKind::TransientIndicator)),
            FailureBehavior::NoIndication => out.surface.push(surface(SurfaceKind::None)),
        }
    }
}
