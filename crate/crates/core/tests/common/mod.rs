#![allow(dead_code)]

use std::path::PathBuf;

use btauthlab::clock::SimTime;
use btauthlab::config::ScenarioConfig;
use btauthlab::hci::{opcode, AclData, HciCommand, HciEvent, HciPacket};
use btauthlab::trace::{CapturedPacket, Direction};
use btauthlab::types::{DeviceAddress, ErrorCode, KeyType, LinkKey};
use proptest::prelude::*;

pub fn scenarios_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data")
}

pub fn scenario(rel: &str) -> ScenarioConfig {
    let path = scenarios_dir().join(rel);
    ScenarioConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

pub fn addr() -> impl Strategy<Value = DeviceAddress> {
    any::<[u8; 6]>().prop_map(DeviceAddress::new)
}

pub fn key() -> impl Strategy<Value = LinkKey> {
    any::<[u8; 16]>().prop_map(LinkKey::new)
}

pub fn error_code() -> impl Strategy<Value = ErrorCode> {
    prop::sample::select(ErrorCode::ALL.to_vec())
}

pub fn key_type() -> impl Strategy<Value = KeyType> {
    prop::sample::select(KeyType::ALL.to_vec())
}

const KNOWN_OPCODES: [u16; 5] = [
    opcode::DISCONNECT,
    opcode::LINK_KEY_REQUEST_REPLY,
    opcode::LINK_KEY_REQUEST_NEGATIVE_REPLY,
    opcode::AUTHENTICATION_REQUESTED,
    opcode::LE_ENABLE_ENCRYPTION,
];

const KNOWN_EVENTS: [u8; 5] = [0x05, 0x06, 0x08, 0x17, 0x18];

pub fn command() -> impl Strategy<Value = HciCommand> {
    prop_oneof![
        (addr(), key()).prop_map(|(peer, key)| HciCommand::LinkKeyRequestReply { peer, key }),
        addr().prop_map(|peer| HciCommand::LinkKeyRequestNegativeReply { peer }),
        any::<u16>().prop_map(|handle| HciCommand::AuthenticationRequested { handle }),
        (any::<u16>(), error_code()).prop_map(|(handle, reason)| HciCommand::Disconnect { handle, reason }),
        (any::<u16>(), key()).prop_map(|(handle, ltk)| HciCommand::LeEnableEncryption { handle, ltk }),
        (
            any::<u16>().prop_filter("unmodelled opcode", |op| !KNOWN_OPCODES.contains(op)),
            prop::collection::vec(any::<u8>(), 0..=255)
        )
            .prop_map(|(opcode, params)| HciCommand::Raw { opcode, params }),
    ]
}

pub fn event() -> impl Strategy<Value = HciEvent> {
    prop_oneof![
        addr().prop_map(|peer| HciEvent::LinkKeyRequest { peer }),
        (any::<u16>(), error_code()).prop_map(|(handle, status)| HciEvent::AuthenticationComplete { handle, status }),
        (any::<u16>(), error_code(), any::<bool>()).prop_map(|(handle, status, enabled)| {
            HciEvent::EncryptionChange {
                handle,
                status,
                enabled: enabled && status.is_success(),
            }
        }),
        (any::<u16>(), error_code()).prop_map(|(handle, reason)| HciEvent::DisconnectionComplete { handle, reason }),
        (addr(), key(), key_type()).prop_map(|(peer, key, key_type)| HciEvent::LinkKeyNotification {
            peer,
            key,
            key_type
        }),
        (
            any::<u8>().prop_filter("unmodelled event", |c| !KNOWN_EVENTS.contains(c)),
            prop::collection::vec(any::<u8>(), 0..=255)
        )
            .prop_map(|(code, params)| HciEvent::Raw { code, params }),
    ]
}

pub fn acl() -> impl Strategy<Value = AclData> {
    (any::<u16>(), prop::collection::vec(any::<u8>(), 0..600))
        .prop_map(|(handle_flags, payload)| AclData { handle_flags, payload })
}

pub fn packet() -> impl Strategy<Value = HciPacket> {
    prop_oneof![
        command().prop_map(HciPacket::Command),
        event().prop_map(HciPacket::Event),
        acl().prop_map(HciPacket::Acl),
    ]
}

/// Packets with non-decreasing timestamps.
pub fn capture() -> impl Strategy<Value = Vec<CapturedPacket>> {
    prop::collection::vec((0u64..5_000_000, any::<bool>(), packet()), 0..40).prop_map(|items| {
        let mut t = 0u64;
        items
            .into_iter()
            .map(|(dt, received, packet)| {
                t += dt;
                CapturedPacket {
                    at: SimTime(t),
                    direction: if received { Direction::Received } else { Direction::Sent },
                    packet,
                }
            })
            .collect()
    })
}
