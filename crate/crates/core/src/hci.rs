//! Typed HCI packets with H4 (UART) framing.
//!
//! Command: `0x01 | opcode (LE u16) | len (u8) | params`
//! ACL data: `0x02 | handle+flags (LE u16) | len (LE u16) | payload`
//! Event: `0x04 | event code | len (u8) | params`
//!
//! Only the packets involved in key handling are typed. Anything else, and
//! any typed opcode whose parameters do not fit the modeled layout, decodes
//! to a `Raw` variant that re-encodes to the identical bytes.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{DeviceAddress, ErrorCode, KeyType, LinkKey};

pub const COMMAND_INDICATOR: u8 = 0x01;
pub const ACL_INDICATOR: u8 = 0x02;
pub const EVENT_INDICATOR: u8 = 0x04;

/// Command opcodes, `OGF << 10 | OCF`.
pub mod opcode {
    pub const DISCONNECT: u16 = 0x0406;
    pub const LINK_KEY_REQUEST_REPLY: u16 = 0x040B;
    pub const LINK_KEY_REQUEST_NEGATIVE_REPLY: u16 = 0x040C;
    pub const AUTHENTICATION_REQUESTED: u16 = 0x0411;
    /// LE Enable Encryption (a.k.a. LE Start Encryption), OGF 0x08 OCF 0x0019.
    pub const LE_ENABLE_ENCRYPTION: u16 = 0x2019;

    pub const fn ogf(opcode: u16) -> u8 {
        (opcode >> 10) as u8
    }

    pub const fn ocf(opcode: u16) -> u16 {
        opcode & 0x03FF
    }
}

pub mod event_code {
    pub const DISCONNECTION_COMPLETE: u8 = 0x05;
    pub const AUTHENTICATION_COMPLETE: u8 = 0x06;
    pub const ENCRYPTION_CHANGE: u8 = 0x08;
    pub const LINK_KEY_REQUEST: u8 = 0x17;
    pub const LINK_KEY_NOTIFICATION: u8 = 0x18;
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HciError {
    #[error("parameter block of {len} octets exceeds the frame limit of {max}")]
    OversizedParameters { len: usize, max: usize },
    #[error("truncated packet: header declares {declared} octets but {available} remain")]
    Truncated { declared: usize, available: usize },
    #[error("bad packet indicator 0x{0:02X}")]
    BadIndicator(u8),
    #[error("{0} trailing octets after packet")]
    TrailingBytes(usize),
    #[error("encryption change with failure status must report encryption off")]
    InconsistentEncryptionChange,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum HciCommand {
    LinkKeyRequestReply {
        peer: DeviceAddress,
        key: LinkKey,
    },
    LinkKeyRequestNegativeReply {
        peer: DeviceAddress,
    },
    AuthenticationRequested {
        handle: u16,
    },
    Disconnect {
        handle: u16,
        reason: ErrorCode,
    },
    /// Random number and EDIV are always zero, as with LE Secure Connections keys.
    LeEnableEncryption {
        handle: u16,
        ltk: LinkKey,
    },
    Raw {
        opcode: u16,
        params: Vec<u8>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum HciEvent {
    LinkKeyRequest {
        peer: DeviceAddress,
    },
    AuthenticationComplete {
        handle: u16,
        status: ErrorCode,
    },
    EncryptionChange {
        handle: u16,
        status: ErrorCode,
        enabled: bool,
    },
    /// Encoded with a `Success` status octet.
    DisconnectionComplete {
        handle: u16,
        reason: ErrorCode,
    },
    LinkKeyNotification {
        peer: DeviceAddress,
        key: LinkKey,
        key_type: KeyType,
    },
    Raw {
        code: u8,
        params: Vec<u8>,
    },
}

/// ACL data; the payload is opaque (no L2CAP model).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AclData {
    /// Connection handle plus packet boundary / broadcast flags.
    pub handle_flags: u16,
    pub payload: Vec<u8>,
}

impl AclData {
    pub fn handle(&self) -> u16 {
        self.handle_flags & 0x0FFF
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum HciPacket {
    Command(HciCommand),
    Acl(AclData),
    Event(HciEvent),
}

impl From<HciCommand> for HciPacket {
    fn from(c: HciCommand) -> Self {
        HciPacket::Command(c)
    }
}

impl From<HciEvent> for HciPacket {
    fn from(e: HciEvent) -> Self {
        HciPacket::Event(e)
    }
}

impl From<AclData> for HciPacket {
    fn from(a: AclData) -> Self {
        HciPacket::Acl(a)
    }
}

impl HciCommand {
    pub fn opcode(&self) -> u16 {
        match self {
            HciCommand::LinkKeyRequestReply { .. } => opcode::LINK_KEY_REQUEST_REPLY,
            HciCommand::LinkKeyRequestNegativeReply { .. } => opcode::LINK_KEY_REQUEST_NEGATIVE_REPLY,
            HciCommand::AuthenticationRequested { .. } => opcode::AUTHENTICATION_REQUESTED,
            HciCommand::Disconnect { .. } => opcode::DISCONNECT,
            HciCommand::LeEnableEncryption { .. } => opcode::LE_ENABLE_ENCRYPTION,
            HciCommand::Raw { opcode, .. } => *opcode,
        }
    }

    /// The key carried by the command, if any.
    pub fn key(&self) -> Option<LinkKey> {
        match self {
            HciCommand::LinkKeyRequestReply { key, .. } => Some(*key),
            HciCommand::LeEnableEncryption { ltk, .. } => Some(*ltk),
            _ => None,
        }
    }

    /// Copy of `self` with the key field replaced; `None` for keyless commands.
    pub fn with_key(&self, new_key: LinkKey) -> Option<HciCommand> {
        match self {
            HciCommand::LinkKeyRequestReply { peer, .. } => Some(HciCommand::LinkKeyRequestReply {
                peer: *peer,
                key: new_key,
            }),
            HciCommand::LeEnableEncryption { handle, .. } => Some(HciCommand::LeEnableEncryption {
                handle: *handle,
                ltk: new_key,
            }),
            _ => None,
        }
    }

    fn params(&self) -> Vec<u8> {
        let mut p = Vec::new();
        match self {
            HciCommand::LinkKeyRequestReply { peer, key } => {
                p.extend_from_slice(&peer.to_le_bytes());
                p.extend_from_slice(key.as_bytes());
            }
            HciCommand::LinkKeyRequestNegativeReply { peer } => {
                p.extend_from_slice(&peer.to_le_bytes());
            }
            HciCommand::AuthenticationRequested { handle } => {
                p.extend_from_slice(&handle.to_le_bytes());
            }
            HciCommand::Disconnect { handle, reason } => {
                p.extend_from_slice(&handle.to_le_bytes());
                p.push(reason.code());
            }
            HciCommand::LeEnableEncryption { handle, ltk } => {
                p.extend_from_slice(&handle.to_le_bytes());
                p.extend_from_slice(&[0u8; 8]); // Random_Number
                p.extend_from_slice(&[0u8; 2]); // EDIV
                p.extend_from_slice(ltk.as_bytes());
            }
            HciCommand::Raw { params, .. } => p.extend_from_slice(params),
        }
        p
    }

    fn from_parts(op: u16, params: &[u8]) -> HciCommand {
        Self::typed(op, params).unwrap_or_else(|| HciCommand::Raw {
            opcode: op,
            params: params.to_vec(),
        })
    }

    fn typed(op: u16, p: &[u8]) -> Option<HciCommand> {
        Some(match (op, p.len()) {
            (opcode::LINK_KEY_REQUEST_REPLY, 22) => HciCommand::LinkKeyRequestReply {
                peer: addr(&p[0..6]),
                key: key(&p[6..22]),
            },
            (opcode::LINK_KEY_REQUEST_NEGATIVE_REPLY, 6) => HciCommand::LinkKeyRequestNegativeReply { peer: addr(p) },
            (opcode::AUTHENTICATION_REQUESTED, 2) => HciCommand::AuthenticationRequested { handle: le16(p) },
            (opcode::DISCONNECT, 3) => HciCommand::Disconnect {
                handle: le16(p),
                reason: ErrorCode::from_code(p[2])?,
            },
            (opcode::LE_ENABLE_ENCRYPTION, 28) if p[2..12].iter().all(|b| *b == 0) => HciCommand::LeEnableEncryption {
                handle: le16(p),
                ltk: key(&p[12..28]),
            },
            _ => return None,
        })
    }
}

impl HciEvent {
    pub fn code(&self) -> u8 {
        match self {
            HciEvent::LinkKeyRequest { .. } => event_code::LINK_KEY_REQUEST,
            HciEvent::AuthenticationComplete { .. } => event_code::AUTHENTICATION_COMPLETE,
            HciEvent::EncryptionChange { .. } => event_code::ENCRYPTION_CHANGE,
            HciEvent::DisconnectionComplete { .. } => event_code::DISCONNECTION_COMPLETE,
            HciEvent::LinkKeyNotification { .. } => event_code::LINK_KEY_NOTIFICATION,
            HciEvent::Raw { code, .. } => *code,
        }
    }

    fn params(&self) -> Vec<u8> {
        let mut p = Vec::new();
        match self {
            HciEvent::LinkKeyRequest { peer } => p.extend_from_slice(&peer.to_le_bytes()),
            HciEvent::AuthenticationComplete { handle, status } => {
                p.push(status.code());
                p.extend_from_slice(&handle.to_le_bytes());
            }
            HciEvent::EncryptionChange {
                handle,
                status,
                enabled,
            } => {
                p.push(status.code());
                p.extend_from_slice(&handle.to_le_bytes());
                p.push(u8::from(*enabled));
            }
            HciEvent::DisconnectionComplete { handle, reason } => {
                p.push(ErrorCode::Success.code());
                p.extend_from_slice(&handle.to_le_bytes());
                p.push(reason.code());
            }
            HciEvent::LinkKeyNotification { peer, key, key_type } => {
                p.extend_from_slice(&peer.to_le_bytes());
                p.extend_from_slice(key.as_bytes());
                p.push(key_type.wire_value());
            }
            HciEvent::Raw { params, .. } => p.extend_from_slice(params),
        }
        p
    }

    fn from_parts(code: u8, params: &[u8]) -> HciEvent {
        Self::typed(code, params).unwrap_or_else(|| HciEvent::Raw {
            code,
            params: params.to_vec(),
        })
    }

    fn typed(code: u8, p: &[u8]) -> Option<HciEvent> {
        Some(match (code, p.len()) {
            (event_code::LINK_KEY_REQUEST, 6) => HciEvent::LinkKeyRequest { peer: addr(p) },
            (event_code::AUTHENTICATION_COMPLETE, 3) => HciEvent::AuthenticationComplete {
                status: ErrorCode::from_code(p[0])?,
                handle: le16(&p[1..]),
            },
            (event_code::ENCRYPTION_CHANGE, 4) => {
                let status = ErrorCode::from_code(p[0])?;
                let enabled = match p[3] {
                    0x00 => false,
                    0x01 => true,
                    _ => return None,
                };
                if enabled && !status.is_success() {
                    return None;
                }
                HciEvent::EncryptionChange {
                    status,
                    handle: le16(&p[1..]),
                    enabled,
                }
            }
            (event_code::DISCONNECTION_COMPLETE, 4) if p[0] == ErrorCode::Success.code() => {
                HciEvent::DisconnectionComplete {
                    handle: le16(&p[1..]),
                    reason: ErrorCode::from_code(p[3])?,
                }
            }
            (event_code::LINK_KEY_NOTIFICATION, 23) => HciEvent::LinkKeyNotification {
                peer: addr(&p[0..6]),
                key: key(&p[6..22]),
                key_type: KeyType::from_wire(p[22])?,
            },
            _ => return None,
        })
    }
}

fn le16(p: &[u8]) -> u16 {
    u16::from_le_bytes([p[0], p[1]])
}

fn addr(p: &[u8]) -> DeviceAddress {
    let mut b = [0u8; 6];
    b.copy_from_slice(&p[..6]);
    DeviceAddress::from_le_bytes(b)
}

fn key(p: &[u8]) -> LinkKey {
    let mut b = [0u8; 16];
    b.copy_from_slice(&p[..16]);
    LinkKey::new(b)
}

fn one_octet_len(params: &[u8]) -> Result<u8, HciError> {
    u8::try_from(params.len()).map_err(|_| HciError::OversizedParameters {
        len: params.len(),
        max: u8::MAX as usize,
    })
}

/// Encodes a packet with its H4 indicator octet.
pub fn encode(packet: &HciPacket) -> Result<Vec<u8>, HciError> {
    let mut out = Vec::new();
    match packet {
        HciPacket::Command(cmd) => {
            let params = cmd.params();
            let len = one_octet_len(&params)?;
            out.push(COMMAND_INDICATOR);
            out.extend_from_slice(&cmd.opcode().to_le_bytes());
            out.push(len);
            out.extend_from_slice(&params);
        }
        HciPacket::Event(evt) => {
            if let HciEvent::EncryptionChange {
                status, enabled: true, ..
            } = evt
            {
                if !status.is_success() {
                    return Err(HciError::InconsistentEncryptionChange);
                }
            }
            let params = evt.params();
            let len = one_octet_len(&params)?;
            out.push(EVENT_INDICATOR);
            out.push(evt.code());
            out.push(len);
            out.extend_from_slice(&params);
        }
        HciPacket::Acl(acl) => {
            let len = u16::try_from(acl.payload.len()).map_err(|_| HciError::OversizedParameters {
                len: acl.payload.len(),
                max: u16::MAX as usize,
            })?;
            out.push(ACL_INDICATOR);
            out.extend_from_slice(&acl.handle_flags.to_le_bytes());
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(&acl.payload);
        }
    }
    Ok(out)
}

/// Decodes exactly one H4-framed packet.
pub fn decode(bytes: &[u8]) -> Result<HciPacket, HciError> {
    let (&indicator, rest) = bytes.split_first().ok_or(HciError::Truncated {
        declared: 1,
        available: 0,
    })?;
    let header_len = match indicator {
        COMMAND_INDICATOR => 3,
        EVENT_INDICATOR => 2,
        ACL_INDICATOR => 4,
        other => return Err(HciError::BadIndicator(other)),
    };
    if rest.len() < header_len {
        return Err(HciError::Truncated {
            declared: header_len,
            available: rest.len(),
        });
    }
    let (header, body) = rest.split_at(header_len);
    let declared = match indicator {
        COMMAND_INDICATOR => header[2] as usize,
        EVENT_INDICATOR => header[1] as usize,
        _ => le16(&header[2..]) as usize,
    };
    if body.len() < declared {
        return Err(HciError::Truncated {
            declared,
            available: body.len(),
        });
    }
    if body.len() > declared {
        return Err(HciError::TrailingBytes(body.len() - declared));
    }
    Ok(match indicator {
        COMMAND_INDICATOR => HciPacket::Command(HciCommand::from_parts(le16(header), body)),
        EVENT_INDICATOR => HciPacket::Event(HciEvent::from_parts(header[0], body)),
        _ => HciPacket::Acl(AclData {
            handle_flags: le16(header),
            payload: body.to_vec(),
        }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const A: DeviceAddress = DeviceAddress::new([0x00, 0x1A, 0x7D, 0xDA, 0x71, 0x13]);

    #[test]
    fn opcodes_split_into_ogf_ocf() {
        assert_eq!(
            (opcode::ogf(opcode::DISCONNECT), opcode::ocf(opcode::DISCONNECT)),
            (0x01, 0x006)
        );
        assert_eq!(
            (
                opcode::ogf(opcode::LINK_KEY_REQUEST_REPLY),
                opcode::ocf(opcode::LINK_KEY_REQUEST_REPLY)
            ),
            (0x01, 0x00B)
        );
        assert_eq!(
            (
                opcode::ogf(opcode::LE_ENABLE_ENCRYPTION),
                opcode::ocf(opcode::LE_ENABLE_ENCRYPTION)
            ),
            (0x08, 0x019)
        );
    }

    #[test]
    fn disconnect_encodes_bit_exact() {
        let pkt = HciPacket::Command(HciCommand::Disconnect {
            handle: 0x0001,
            reason: ErrorCode::AuthenticationFailure,
        });
        assert_eq!(encode(&pkt).unwrap(), vec![0x01, 0x06, 0x04, 0x03, 0x01, 0x00, 0x05]);
        assert_eq!(decode(&[0x01, 0x06, 0x04, 0x03, 0x01, 0x00, 0x05]).unwrap(), pkt);
    }

    #[test]
    fn link_key_reply_round_trips() {
        let pkt = HciPacket::Command(HciCommand::LinkKeyRequestReply {
            peer: A,
            key: LinkKey::from(0xDEADBEEFu128),
        });
        let bytes = encode(&pkt).unwrap();
        assert_eq!(&bytes[..4], &[0x01, 0x0B, 0x04, 22]);
        assert_eq!(&bytes[4..10], &[0x13, 0x71, 0xDA, 0x7D, 0x1A, 0x00]);
        assert_eq!(decode(&bytes).unwrap(), pkt);
    }

    #[test]
    fn encryption_change_enabled_decodes() {
        let pkt = HciPacket::Event(HciEvent::EncryptionChange {
            handle: 0x0040,
            status: ErrorCode::Success,
            enabled: true,
        });
        let bytes = encode(&pkt).unwrap();
        assert_eq!(bytes, vec![0x04, 0x08, 0x04, 0x00, 0x40, 0x00, 0x01]);
        match decode(&bytes).unwrap() {
            HciPacket::Event(HciEvent::EncryptionChange { enabled, .. }) => assert!(enabled),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn encryption_change_failure_with_enabled_is_rejected() {
        let pkt = HciPacket::Event(HciEvent::EncryptionChange {
            handle: 1,
            status: ErrorCode::AuthenticationFailure,
            enabled: true,
        });
        assert_eq!(encode(&pkt), Err(HciError::InconsistentEncryptionChange));
        // Same layout on the wire passes through raw instead.
        let raw = [0x04, 0x08, 0x04, 0x05, 0x01, 0x00, 0x01];
        assert!(matches!(
            decode(&raw).unwrap(),
            HciPacket::Event(HciEvent::Raw { code: 0x08, .. })
        ));
    }

    #[test]
    fn unknown_event_passes_through() {
        assert_eq!(
            decode(&[0x04, 0xFF, 0x00]).unwrap(),
            HciPacket::Event(HciEvent::Raw {
                code: 0xFF,
                params: vec![]
            })
        );
    }

    #[test]
    fn clipped_disconnect_is_truncated() {
        let full = encode(&HciPacket::Command(HciCommand::Disconnect {
            handle: 1,
            reason: ErrorCode::AuthenticationFailure,
        }))
        .unwrap();
        let clipped = &full[..5];
        assert_eq!(clipped, &[0x01, 0x06, 0x04, 0x03, 0x01]);
        assert!(matches!(decode(clipped), Err(HciError::Truncated { .. })));
        // Length octet 5 with a single parameter octet.
        assert_eq!(
            decode(&[0x01, 0x06, 0x04, 0x05, 0x01]),
            Err(HciError::Truncated {
                declared: 5,
                available: 1
            })
        );
    }

    #[test]
    fn bad_indicator_and_trailing_bytes() {
        assert_eq!(decode(&[0x03, 0x00]), Err(HciError::BadIndicator(0x03)));
        assert_eq!(decode(&[0x04, 0xFF, 0x00, 0xAA]), Err(HciError::TrailingBytes(1)));
        assert!(matches!(decode(&[]), Err(HciError::Truncated { .. })));
    }

    #[test]
    fn oversized_raw_command_is_rejected() {
        let pkt = HciPacket::Command(HciCommand::Raw {
            opcode: 0xFC00,
            params: vec![0; 256],
        });
        assert_eq!(encode(&pkt), Err(HciError::OversizedParameters { len: 256, max: 255 }));
    }

    #[test]
    fn disconnect_with_unmodeled_reason_is_raw() {
        // Reason 0x08 (Connection Timeout) is outside the modeled codes.
        let bytes = [0x01, 0x06, 0x04, 0x03, 0x01, 0x00, 0x08];
        let pkt = decode(&bytes).unwrap();
        assert!(matches!(
            pkt,
            HciPacket::Command(HciCommand::Raw {
                opcode: opcode::DISCONNECT,
                ..
            })
        ));
        assert_eq!(encode(&pkt).unwrap(), bytes);
    }

    #[test]
    fn le_enable_encryption_layout() {
        let pkt = HciPacket::Command(HciCommand::LeEnableEncryption {
            handle: 0x0041,
            ltk: LinkKey::from(1),
        });
        let bytes = encode(&pkt).unwrap();
        assert_eq!(&bytes[..4], &[0x01, 0x19, 0x20, 28]);
        assert_eq!(bytes.len(), 4 + 28);
        assert_eq!(bytes[bytes.len() - 1], 0x01);
        assert_eq!(decode(&bytes).unwrap(), pkt);
    }

    #[test]
    fn acl_uses_two_octet_length() {
        let pkt = HciPacket::Acl(AclData {
            handle_flags: 0x2001,
            payload: vec![1, 2, 3],
        });
        let bytes = encode(&pkt).unwrap();
        assert_eq!(bytes, vec![0x02, 0x01, 0x20, 0x03, 0x00, 1, 2, 3]);
        assert_eq!(decode(&bytes).unwrap(), pkt);
    }

    #[test]
    fn key_substitution_only_touches_key() {
        let cmd = HciCommand::LinkKeyRequestReply {
            peer: A,
            key: LinkKey::from(1),
        };
        let swapped = cmd.with_key(LinkKey::from(2)).unwrap();
        assert_eq!(swapped.key(), Some(LinkKey::from(2)));
        assert!(HciCommand::AuthenticationRequested { handle: 1 }
            .with_key(LinkKey::from(2))
            .is_none());
    }
}
