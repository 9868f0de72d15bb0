//! btsnoop capture files.
//!
//! Layout (all integers big-endian): a 16-octet header of magic
//! `"btsnoop\0"`, version `1` and datalink `1002` (H4 with the packet
//! indicator in the payload), followed by records of
//! `original_length, included_length, flags, cumulative_drops` (u32 each),
//! a signed 64-bit timestamp in microseconds since midnight, January 1st,
//! 0 AD, and the H4 packet. Flag bit 0 is the direction (0 = sent by the
//! host, 1 = received), bit 1 is set for commands and events.
//!
//! Simulated time zero maps to 2021-03-01T00:00:00Z.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::SimTime;
use crate::hci::{self, HciError, HciPacket};

pub const MAGIC: [u8; 8] = *b"btsnoop\0";
pub const VERSION: u32 = 1;
pub const DATALINK_H4: u32 = 1002;
pub const HEADER_LEN: usize = 16;
pub const RECORD_HEADER_LEN: usize = 24;

/// Microseconds from 0 AD to the Unix epoch, as used by btsnoop readers.
pub const UNIX_EPOCH_OFFSET_US: i64 = 0x00dc_ddb3_0f2f_8000;
/// Unix time of simulated time zero.
pub const SIM_EPOCH_UNIX_SECS: i64 = 1_614_556_800;
pub const SIM_EPOCH_US: i64 = UNIX_EPOCH_OFFSET_US + SIM_EPOCH_UNIX_SECS * 1_000_000;

pub const FLAG_RECEIVED: u32 = 0b01;
pub const FLAG_COMMAND_OR_EVENT: u32 = 0b10;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TraceError {
    #[error("file shorter than the 16-octet header")]
    TruncatedHeader,
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 8]),
    #[error("unsupported version {0}")]
    BadVersion(u32),
    #[error("unsupported datalink {0}")]
    UnsupportedDatalink(u32),
    #[error("record {index} at offset {offset} is truncated")]
    TruncatedRecord { index: usize, offset: usize },
    #[error("record {index}: included length {included} exceeds original length {original}")]
    IncludedExceedsOriginal { index: usize, included: u32, original: u32 },
    #[error("record {index}: timestamp goes backwards")]
    NonMonotoneTimestamps { index: usize },
    #[error("record {index}: timestamp precedes the simulation epoch")]
    TimestampBeforeEpoch { index: usize },
    #[error("record {index}: {source}")]
    Hci { index: usize, source: HciError },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Host to controller.
    Sent,
    /// Controller to host.
    Received,
}

/// One packet crossing a host/controller boundary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CapturedPacket {
    pub at: SimTime,
    pub direction: Direction,
    pub packet: HciPacket,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BtsnoopRecord {
    pub original_length: u32,
    pub flags: u32,
    pub cumulative_drops: u32,
    pub timestamp_us: i64,
    pub data: Vec<u8>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BtsnoopFile {
    pub records: Vec<BtsnoopRecord>,
}

impl BtsnoopFile {
    pub fn to_bytes(&self) -> Vec<u8> {
        let body: usize = self.records.iter().map(|r| RECORD_HEADER_LEN + r.data.len()).sum();
        let mut out = Vec::with_capacity(HEADER_LEN + body);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_be_bytes());
        out.extend_from_slice(&DATALINK_H4.to_be_bytes());
        for r in &self.records {
            out.extend_from_slice(&r.original_length.to_be_bytes());
            out.extend_from_slice(&(r.data.len() as u32).to_be_bytes());
            out.extend_from_slice(&r.flags.to_be_bytes());
            out.extend_from_slice(&r.cumulative_drops.to_be_bytes());
            out.extend_from_slice(&r.timestamp_us.to_be_bytes());
            out.extend_from_slice(&r.data);
        }
        out
    }

    pub fn parse(bytes: &[u8]) -> Result<Self, TraceError> {
        if bytes.len() < HEADER_LEN {
            return Err(TraceError::TruncatedHeader);
        }
        let magic: [u8; 8] = bytes[0..8].try_into().expect("8 octets");
        if magic != MAGIC {
            return Err(TraceError::BadMagic(magic));
        }
        let version = be32(&bytes[8..12]);
        if version != VERSION {
            return Err(TraceError::BadVersion(version));
        }
        let datalink = be32(&bytes[12..16]);
        if datalink != DATALINK_H4 {
            return Err(TraceError::UnsupportedDatalink(datalink));
        }

        let mut records = Vec::new();
        let mut offset = HEADER_LEN;
        while offset < bytes.len() {
            let index = records.len();
            let truncated = TraceError::TruncatedRecord { index, offset };
            let head = bytes.get(offset..offset + RECORD_HEADER_LEN).ok_or(truncated.clone())?;
            let original_length = be32(&head[0..4]);
            let included = be32(&head[4..8]);
            if included > original_length {
                return Err(TraceError::IncludedExceedsOriginal {
                    index,
                    included,
                    original: original_length,
                });
            }
            let start = offset + RECORD_HEADER_LEN;
            let data = bytes.get(start..start + included as usize).ok_or(truncated)?;
            records.push(BtsnoopRecord {
                original_length,
                flags: be32(&head[8..12]),
                cumulative_drops: be32(&head[12..16]),
                timestamp_us: i64::from_be_bytes(head[16..24].try_into().expect("8 octets")),
                data: data.to_vec(),
            });
            offset = start + included as usize;
        }
        Ok(BtsnoopFile { records })
    }
}

fn be32(b: &[u8]) -> u32 {
    u32::from_be_bytes(b.try_into().expect("4 octets"))
}

fn flags_for(p: &CapturedPacket) -> u32 {
    let mut flags = 0;
    if p.direction == Direction::Received {
        flags |= FLAG_RECEIVED;
    }
    if !matches!(p.packet, HciPacket::Acl(_)) {
        flags |= FLAG_COMMAND_OR_EVENT;
    }
    flags
}

pub fn write_trace(packets: &[CapturedPacket]) -> Result<Vec<u8>, TraceError> {
    let mut file = BtsnoopFile::default();
    let mut last = SimTime::ZERO;
    for (index, p) in packets.iter().enumerate() {
        if p.at < last {
            return Err(TraceError::NonMonotoneTimestamps { index });
        }
        last = p.at;
        let data = hci::encode(&p.packet).map_err(|source| TraceError::Hci { index, source })?;
        file.records.push(BtsnoopRecord {
            original_length: data.len() as u32,
            flags: flags_for(p),
            cumulative_drops: 0,
            timestamp_us: SIM_EPOCH_US + p.at.as_micros() as i64,
            data,
        });
    }
    Ok(file.to_bytes())
}

pub fn read_trace(bytes: &[u8]) -> Result<Vec<CapturedPacket>, TraceError> {
    let file = BtsnoopFile::parse(bytes)?;
    let mut out = Vec::with_capacity(file.records.len());
    let mut last = i64::MIN;
    for (index, r) in file.records.into_iter().enumerate() {
        if r.timestamp_us < last {
            return Err(TraceError::NonMonotoneTimestamps { index });
        }
        last = r.timestamp_us;
        let rel = r.timestamp_us - SIM_EPOCH_US;
        if rel < 0 {
            return Err(TraceError::TimestampBeforeEpoch { index });
        }
        let packet = hci::decode(&r.data).map_err(|source| TraceError::Hci { index, source })?;
        let direction = if r.flags & FLAG_RECEIVED != 0 {
            Direction::Received
        } else {
            Direction::Sent
        };
        out.push(CapturedPacket {
            at: SimTime(rel as u64),
            direction,
            packet,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hci::HciCommand;
    use crate::types::ErrorCode;

    fn disconnect() -> CapturedPacket {
        CapturedPacket {
            at: SimTime(1_500),
            direction: Direction::Sent,
            packet: HciPacket::Command(HciCommand::Disconnect {
                handle: 1,
                reason: ErrorCode::AuthenticationFailure,
            }),
        }
    }

    #[test]
    fn empty_trace_is_header_only() {
        let bytes = write_trace(&[]).unwrap();
        assert_eq!(bytes.len(), 16);
        assert_eq!(&bytes[..8], b"btsnoop\0");
        assert_eq!(&bytes[8..16], &[0, 0, 0, 1, 0, 0, 0x03, 0xEA]);
        assert!(read_trace(&bytes).unwrap().is_empty());
    }

    #[test]
    fn single_disconnect_record_layout() {
        let bytes = write_trace(&[disconnect()]).unwrap();
        let rec = &bytes[16..];
        assert_eq!(&rec[0..4], &[0, 0, 0, 7]);
        assert_eq!(&rec[4..8], &[0, 0, 0, 7]);
        assert_eq!(&rec[8..12], &[0, 0, 0, 2]);
        assert_eq!(&rec[12..16], &[0, 0, 0, 0]);
        assert_eq!(
            i64::from_be_bytes(rec[16..24].try_into().unwrap()),
            SIM_EPOCH_US + 1_500
        );
        assert_eq!(&rec[24..], &[0x01, 0x06, 0x04, 0x03, 0x01, 0x00, 0x05]);
    }

    #[test]
    fn epoch_constant_matches_calendar() {
        // 2021-03-01T00:00:00Z in btsnoop microseconds.
        assert_eq!(SIM_EPOCH_US, 63_782_812_800_000_000);
    }

    #[test]
    fn write_read_write_is_fixpoint() {
        let bytes = write_trace(&[disconnect()]).unwrap();
        let again = write_trace(&read_trace(&bytes).unwrap()).unwrap();
        assert_eq!(bytes, again);
    }

    #[test]
    fn rejects_bad_magic() {
        let mut bytes = write_trace(&[]).unwrap();
        bytes[0] = b'X';
        assert!(matches!(read_trace(&bytes), Err(TraceError::BadMagic(_))));
    }

    #[test]
    fn rejects_bad_version_and_datalink() {
        let mut bytes = write_trace(&[]).unwrap();
        bytes[11] = 2;
        assert_eq!(read_trace(&bytes), Err(TraceError::BadVersion(2)));
        let mut bytes = write_trace(&[]).unwrap();
        bytes[15] = 0xE9;
        assert_eq!(read_trace(&bytes), Err(TraceError::UnsupportedDatalink(1001)));
    }

    #[test]
    fn clipped_record_is_truncated() {
        let bytes = write_trace(&[disconnect()]).unwrap();
        for cut in 17..bytes.len() {
            assert!(
                matches!(
                    read_trace(&bytes[..cut]),
                    Err(TraceError::TruncatedRecord { index: 0, .. })
                ),
                "cut {cut}"
            );
        }
    }

    #[test]
    fn non_monotone_input_is_rejected() {
        let mut late = disconnect();
        late.at = SimTime(10);
        assert_eq!(
            write_trace(&[disconnect(), late]),
            Err(TraceError::NonMonotoneTimestamps { index: 1 })
        );
    }

    #[test]
    fn included_longer_than_original_is_rejected() {
        let mut bytes = write_trace(&[disconnect()]).unwrap();
        bytes[19] = 6;
        assert!(matches!(
            read_trace(&bytes),
            Err(TraceError::IncludedExceedsOriginal { index: 0, .. })
        ));
    }
}
