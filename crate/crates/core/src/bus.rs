//! Scenario event bus: non-HCI facts recorded during a run.

use serde::{Deserialize, Serialize};

use crate::attack::InjectionAudit;
use crate::clock::SimTime;
use crate::host::{PairingTrigger, UserSurfaceEvent};
use crate::keystore::KeyDeletion;
use crate::linklayer::Side;
use crate::types::{DeviceAddress, ErrorCode, KeyType, LinkKeyRecord, Transport};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BusEvent {
    ConnectionOpened {
        device: DeviceAddress,
        handle: u16,
        peer: DeviceAddress,
        transport: Transport,
        role: Side,
        at: SimTime,
    },
    /// A host processed an authentication or encryption failure.
    Failure {
        device: DeviceAddress,
        handle: u16,
        peer: DeviceAddress,
        transport: Transport,
        status: ErrorCode,
        /// The host's key for `peer` when the failure arrived.
        record: Option<LinkKeyRecord>,
        /// Index of the failure event in the device's trace.
        packet: usize,
        at: SimTime,
    },
    KeyDeletion {
        device: DeviceAddress,
        deletion: KeyDeletion,
        user_initiated: bool,
        at: SimTime,
    },
    Injection(InjectionAudit),
    Surface {
        device: DeviceAddress,
        event: UserSurfaceEvent,
    },
    Pairing {
        initiator: DeviceAddress,
        peer: DeviceAddress,
        via_mitm: bool,
        trigger: PairingTrigger,
        transport: Transport,
        key_type: KeyType,
        bonded: bool,
        at: SimTime,
    },
    UserConsent {
        device: DeviceAddress,
        accept: bool,
        at: SimTime,
    },
}

impl BusEvent {
    /// The device the event is about, or either party of a pairing.
    pub fn involves(&self, addr: DeviceAddress) -> bool {
        match self {
            BusEvent::ConnectionOpened { device, .. }
            | BusEvent::Failure { device, .. }
            | BusEvent::KeyDeletion { device, .. }
            | BusEvent::Surface { device, .. }
            | BusEvent::UserConsent { device, .. } => *device == addr,
            BusEvent::Injection(audit) => audit.device == addr,
            BusEvent::Pairing { initiator, peer, .. } => *initiator == addr || *peer == addr,
        }
    }
}

/// Pointer into a run's artifacts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Evidence {
    /// Index of a packet in `device`'s trace.
    Packet { device: DeviceAddress, index: usize },
    /// Index into the event bus.
    Bus(usize),
}
