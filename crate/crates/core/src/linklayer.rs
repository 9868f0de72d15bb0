//! Controller-to-controller link model.
//!
//! BR/EDR authentication and LE encryption start are both reduced to one
//! keyed-MAC confirmation: [`auth_response`] is HMAC-SHA-256 keyed with the
//! 128-bit link key over `challenge (16 octets) || claimant address (6
//! octets, display order)`, truncated to its first four octets read
//! big-endian. Only whether two keys match is observable at the HCI
//! boundary, so the cipher suite itself is not modeled.

use hmac::{Hmac, Mac};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::Sha256;
use thiserror::Error;

use crate::hci::HciEvent;
use crate::types::{DeviceAddress, ErrorCode, LinkKey, Transport};

pub fn auth_response(key: &LinkKey, challenge: &[u8; 16], claimant: DeviceAddress) -> u32 {
    let mut mac = Hmac::<Sha256>::new_from_slice(key.as_bytes()).expect("HMAC accepts any key length");
    mac.update(challenge);
    mac.update(&claimant.octets());
    let tag = mac.finalize().into_bytes();
    u32::from_be_bytes([tag[0], tag[1], tag[2], tag[3]])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ConnectionState {
    Idle,
    Connected,
    Authenticating,
    Encrypted,
    Detached,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LinkError {
    #[error("connection 0x{handle:04X} is {state:?}, operation requires {required}")]
    InvalidState {
        handle: u16,
        state: ConnectionState,
        required: &'static str,
    },
    #[error("connection 0x{handle:04X} uses {actual}, operation requires {required}")]
    WrongTransport {
        handle: u16,
        actual: Transport,
        required: Transport,
    },
}

/// Which end of a connection an event is delivered to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    Initiator,
    Responder,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delivery {
    pub to: Side,
    pub event: HciEvent,
}

/// A challenge issued by a verifier, with the response it expects.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AuthChallenge {
    pub challenge: [u8; 16],
    pub claimant: DeviceAddress,
    pub expected_response: u32,
}

impl AuthChallenge {
    pub fn issue(verifier_key: &LinkKey, claimant: DeviceAddress, rng: &mut impl RngCore) -> Self {
        let mut challenge = [0u8; 16];
        rng.fill_bytes(&mut challenge);
        AuthChallenge {
            challenge,
            claimant,
            expected_response: auth_response(verifier_key, &challenge, claimant),
        }
    }

    pub fn verify(&self, claimant_key: &LinkKey) -> bool {
        auth_response(claimant_key, &self.challenge, self.claimant) == self.expected_response
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuthOutcome {
    pub status: ErrorCode,
    pub challenges: Vec<AuthChallenge>,
    pub deliveries: Vec<Delivery>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncryptionOutcome {
    pub status: ErrorCode,
    pub enabled: bool,
    pub deliveries: Vec<Delivery>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Connection {
    pub handle: u16,
    pub initiator: DeviceAddress,
    pub responder: DeviceAddress,
    pub transport: Transport,
    state: ConnectionState,
    detach_reason: Option<ErrorCode>,
}

impl Connection {
    pub fn new(handle: u16, initiator: DeviceAddress, responder: DeviceAddress, transport: Transport) -> Self {
        Connection {
            handle,
            initiator,
            responder,
            transport,
            state: ConnectionState::Idle,
            detach_reason: None,
        }
    }

    /// Shorthand for `new` followed by `connect`.
    pub fn established(handle: u16, initiator: DeviceAddress, responder: DeviceAddress, transport: Transport) -> Self {
        let mut conn = Self::new(handle, initiator, responder, transport);
        conn.state = ConnectionState::Connected;
        conn
    }

    pub fn state(&self) -> ConnectionState {
        self.state
    }

    pub fn detach_reason(&self) -> Option<ErrorCode> {
        self.detach_reason
    }

    pub fn is_open(&self) -> bool {
        !matches!(self.state, ConnectionState::Idle | ConnectionState::Detached)
    }

    pub fn connect(&mut self) -> Result<(), LinkError> {
        self.require(ConnectionState::Idle, "IDLE")?;
        self.state = ConnectionState::Connected;
        Ok(())
    }

    fn require(&self, state: ConnectionState, required: &'static str) -> Result<(), LinkError> {
        if self.state != state {
            return Err(LinkError::InvalidState {
                handle: self.handle,
                state: self.state,
                required,
            });
        }
        Ok(())
    }

    fn require_transport(&self, required: Transport) -> Result<(), LinkError> {
        if self.transport != required {
            return Err(LinkError::WrongTransport {
                handle: self.handle,
                actual: self.transport,
                required,
            });
        }
        Ok(())
    }

    /// Mutual BR/EDR authentication as one atomic exchange.
    ///
    /// Keys are whatever each controller obtained from its host; `None`
    /// stands for a negative link key reply. Only the initiator's host is
    /// told the result. On failure the connection stays in
    /// `Authenticating` until the host detaches it.
    pub fn run_bt_authentication(
        &mut self,
        initiator_key: Option<LinkKey>,
        responder_key: Option<LinkKey>,
        rng: &mut impl RngCore,
    ) -> Result<AuthOutcome, LinkError> {
        self.require(ConnectionState::Connected, "CONNECTED")?;
        self.require_transport(Transport::Bt)?;
        self.state = ConnectionState::Authenticating;

        let mut challenges = Vec::new();
        let status = match (initiator_key, responder_key) {
            (Some(ik), Some(rk)) => {
                // Initiator verifies the responder, then the reverse.
                let first = AuthChallenge::issue(&ik, self.responder, rng);
                challenges.push(first);
                if !first.verify(&rk) {
                    ErrorCode::AuthenticationFailure
                } else {
                    let second = AuthChallenge::issue(&rk, self.initiator, rng);
                    challenges.push(second);
                    if second.verify(&ik) {
                        ErrorCode::Success
                    } else {
                        ErrorCode::AuthenticationFailure
                    }
                }
            }
            _ => ErrorCode::PinOrKeyMissing,
        };

        let mut deliveries = vec![Delivery {
            to: Side::Initiator,
            event: HciEvent::AuthenticationComplete {
                handle: self.handle,
                status,
            },
        }];
        if status.is_success() {
            self.state = ConnectionState::Encrypted;
            deliveries.extend(self.encryption_on());
        }
        Ok(AuthOutcome {
            status,
            challenges,
            deliveries,
        })
    }

    /// LE encryption start: both sides derive a confirmation tag from their
    /// LTK and a shared per-connection nonce. `None` for the responder means
    /// its host had no LTK for the initiator.
    pub fn run_ble_encryption_start(
        &mut self,
        initiator_ltk: LinkKey,
        responder_ltk: Option<LinkKey>,
        rng: &mut impl RngCore,
    ) -> Result<EncryptionOutcome, LinkError> {
        self.require(ConnectionState::Connected, "CONNECTED")?;
        self.require_transport(Transport::Ble)?;

        let mut nonce = [0u8; 16];
        rng.fill_bytes(&mut nonce);
        let status = match responder_ltk {
            None => ErrorCode::PinOrKeyMissing,
            Some(rk) => {
                let ours = auth_response(&initiator_ltk, &nonce, self.initiator);
                let theirs = auth_response(&rk, &nonce, self.initiator);
                if ours == theirs {
                    ErrorCode::Success
                } else {
                    ErrorCode::AuthenticationFailure
                }
            }
        };

        if status.is_success() {
            self.state = ConnectionState::Encrypted;
            return Ok(EncryptionOutcome {
                status,
                enabled: true,
                deliveries: self.encryption_on(),
            });
        }
        Ok(EncryptionOutcome {
            status,
            enabled: false,
            deliveries: vec![Delivery {
                to: Side::Initiator,
                event: HciEvent::EncryptionChange {
                    handle: self.handle,
                    status,
                    enabled: false,
                },
            }],
        })
    }

    fn encryption_on(&self) -> Vec<Delivery> {
        [Side::Initiator, Side::Responder]
            .into_iter()
            .map(|to| Delivery {
                to,
                event: HciEvent::EncryptionChange {
                    handle: self.handle,
                    status: ErrorCode::Success,
                    enabled: true,
                },
            })
            .collect()
    }

    /// Tears the link down. `reason` reaches both hosts unchanged.
    pub fn detach(&mut self, reason: ErrorCode) -> Result<Vec<Delivery>, LinkError> {
        if self.state == ConnectionState::Detached {
            return Err(LinkError::InvalidState {
                handle: self.handle,
                state: self.state,
                required: "not DETACHED",
            });
        }
        self.state = ConnectionState::Detached;
        self.detach_reason = Some(reason);
        Ok([Side::Initiator, Side::Responder]
            .into_iter()
            .map(|to| Delivery {
                to,
                event: HciEvent::DisconnectionComplete {
                    handle: self.handle,
                    reason,
                },
            })
            .collect())
    }
}
