//! Domain vocabulary shared by every layer of the simulator.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A 48-bit Bluetooth device address.
///
/// Octets are stored in display order (most significant first). On the HCI
/// wire, `BD_ADDR` fields are little-endian, see [`DeviceAddress::to_le_bytes`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DeviceAddress([u8; 6]);

impl DeviceAddress {
    pub const fn new(octets: [u8; 6]) -> Self {
        DeviceAddress(octets)
    }

    pub const fn octets(&self) -> [u8; 6] {
        self.0
    }

    /// Wire order, least significant octet first.
    pub fn to_le_bytes(&self) -> [u8; 6] {
        let mut out = self.0;
        out.reverse();
        out
    }

    pub fn from_le_bytes(bytes: [u8; 6]) -> Self {
        let mut octets = bytes;
        octets.reverse();
        DeviceAddress(octets)
    }

    /// File-system friendly rendering, `AA-BB-CC-DD-EE-FF`.
    pub fn file_stem(&self) -> String {
        self.to_string().replace(':', "-")
    }
}

impl fmt::Display for DeviceAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let o = &self.0;
        write!(
            f,
            "{:02X}:{:02X}:{:02X}:{:02X}:{:02X}:{:02X}",
            o[0], o[1], o[2], o[3], o[4], o[5]
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid device address {0:?}: expected six colon-separated hex octets")]
pub struct AddressParseError(pub String);

impl FromStr for DeviceAddress {
    type Err = AddressParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || AddressParseError(s.to_string());
        let mut octets = [0u8; 6];
        let mut parts = s.split([':', '-']);
        for slot in octets.iter_mut() {
            let part = parts.next().ok_or_else(err)?;
            if part.len() != 2 {
                return Err(err());
            }
            *slot = u8::from_str_radix(part, 16).map_err(|_| err())?;
        }
        if parts.next().is_some() {
            return Err(err());
        }
        Ok(DeviceAddress(octets))
    }
}

impl Serialize for DeviceAddress {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for DeviceAddress {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transport {
    /// BR/EDR ("Classic").
    #[default]
    Bt,
    Ble,
}

impl fmt::Display for Transport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Transport::Bt => "bt",
            Transport::Ble => "ble",
        })
    }
}

/// Link key classification as used by the authentication-failure decision table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyType {
    Combination,
    /// Result of Just Works pairing.
    Unauthenticated,
    /// Result of Numeric Comparison, Passkey Entry or Out Of Band pairing.
    Authenticated,
}

impl KeyType {
    pub const ALL: [KeyType; 3] = [KeyType::Combination, KeyType::Unauthenticated, KeyType::Authenticated];

    /// `Key_Type` octet of the Link Key Notification event (P-192 variants).
    pub const fn wire_value(self) -> u8 {
        match self {
            KeyType::Combination => 0x00,
            KeyType::Unauthenticated => 0x04,
            KeyType::Authenticated => 0x05,
        }
    }

    pub const fn from_wire(value: u8) -> Option<Self> {
        match value {
            0x00 => Some(KeyType::Combination),
            0x04 => Some(KeyType::Unauthenticated),
            0x05 => Some(KeyType::Authenticated),
            _ => None,
        }
    }
}

impl fmt::Display for KeyType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KeyType::Combination => "combination",
            KeyType::Unauthenticated => "unauthenticated",
            KeyType::Authenticated => "authenticated",
        })
    }
}

/// An opaque 128-bit link key or LTK.
///
/// Stored in wire order; rendered as 32 hex digits in the same order.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LinkKey([u8; 16]);

impl LinkKey {
    pub const fn new(bytes: [u8; 16]) -> Self {
        LinkKey(bytes)
    }

    pub const fn as_bytes(&self) -> &[u8; 16] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        self.0.iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl From<u128> for LinkKey {
    /// Big-endian: `LinkKey::from(1)` is `00…01`.
    fn from(value: u128) -> Self {
        LinkKey(value.to_be_bytes())
    }
}

impl fmt::Debug for LinkKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "LinkKey({})", self.to_hex())
    }
}

impl fmt::Display for LinkKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid key {0:?}: expected 32 hex digits")]
pub struct KeyParseError(pub String);

impl FromStr for LinkKey {
    type Err = KeyParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim_start_matches("0x");
        if s.len() != 32 || !s.is_ascii() {
            return Err(KeyParseError(s.to_string()));
        }
        let mut out = [0u8; 16];
        for (i, slot) in out.iter_mut().enumerate() {
            *slot = u8::from_str_radix(&s[2 * i..2 * i + 2], 16).map_err(|_| KeyParseError(s.to_string()))?;
        }
        Ok(LinkKey(out))
    }
}

impl Serialize for LinkKey {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for LinkKey {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A stored pairing: key material plus its security classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkKeyRecord {
    pub peer: DeviceAddress,
    pub key: LinkKey,
    pub key_type: KeyType,
    pub bonded: bool,
    pub transport: Transport,
}

/// HCI status / reason codes used by the simulator.
///
/// Only the codes involved in authentication failure handling are modeled;
/// packets carrying any other code decode as raw passthrough.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
#[repr(u8)]
pub enum ErrorCode {
    Success = 0x00,
    AuthenticationFailure = 0x05,
    PinOrKeyMissing = 0x06,
    RemoteUserTerminated = 0x13,
}

impl ErrorCode {
    pub const ALL: [ErrorCode; 4] = [
        ErrorCode::Success,
        ErrorCode::AuthenticationFailure,
        ErrorCode::PinOrKeyMissing,
        ErrorCode::RemoteUserTerminated,
    ];

    pub const fn code(self) -> u8 {
        self as u8
    }

    pub const fn from_code(code: u8) -> Option<Self> {
        match code {
            0x00 => Some(ErrorCode::Success),
            0x05 => Some(ErrorCode::AuthenticationFailure),
            0x06 => Some(ErrorCode::PinOrKeyMissing),
            0x13 => Some(ErrorCode::RemoteUserTerminated),
            _ => None,
        }
    }

    pub const fn is_success(self) -> bool {
        matches!(self, ErrorCode::Success)
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            ErrorCode::Success => "Success",
            ErrorCode::AuthenticationFailure => "Authentication Failure",
            ErrorCode::PinOrKeyMissing => "PIN or Key Missing",
            ErrorCode::RemoteUserTerminated => "Remote User Terminated Connection",
        };
        write!(f, "{name} (0x{:02X})", self.code())
    }
}
