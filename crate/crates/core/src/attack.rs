//! Attacker model: HCI key fault injection and a two-key MitM node.
//!
//! A MitM that paired with both victims separately holds `K_AM` (shared
//! with A) and `K_MB` (shared with B). While it is present it relays every
//! connection; once it misses one, A and B meet directly with keys that
//! cannot match.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hci::HciCommand;
use crate::linklayer::{AuthOutcome, Connection, EncryptionOutcome, LinkError};
use crate::types::{DeviceAddress, ErrorCode, LinkKey, LinkKeyRecord, Transport};
use rand::RngCore;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AttackError {
    #[error("fault window [{start}, {end}) is empty")]
    EmptyWindow { start: u32, end: u32 },
    #[error("MitM keys must differ")]
    IdenticalKeys,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultTarget {
    LinkKeyRequestReply,
    LeEnableEncryption,
}

/// Half-open range of script steps `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StepWindow {
    pub start: u32,
    pub end: u32,
}

impl StepWindow {
    pub fn new(start: u32, end: u32) -> Result<Self, AttackError> {
        if start >= end {
            return Err(AttackError::EmptyWindow { start, end });
        }
        Ok(StepWindow { start, end })
    }

    pub fn contains(&self, step: u32) -> bool {
        (self.start..self.end).contains(&step)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultRule {
    pub target: FaultTarget,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub match_peer: Option<DeviceAddress>,
    pub replacement_key: LinkKey,
    pub window: StepWindow,
}

impl FaultRule {
    pub fn validate(&self) -> Result<(), AttackError> {
        StepWindow::new(self.window.start, self.window.end).map(|_| ())
    }

    /// Whether `cmd` at `step` is hit by this rule. `peer` is the remote
    /// address of the command (resolved from the handle for LE commands).
    pub fn matches(&self, cmd: &HciCommand, peer: Option<DeviceAddress>, step: u32) -> bool {
        let target_ok = matches!(
            (self.target, cmd),
            (FaultTarget::LinkKeyRequestReply, HciCommand::LinkKeyRequestReply { .. })
                | (FaultTarget::LeEnableEncryption, HciCommand::LeEnableEncryption { .. })
        );
        let peer_ok = match self.match_peer {
            None => true,
            Some(want) => peer == Some(want),
        };
        target_ok && peer_ok && self.window.contains(step)
    }
}

/// Record of one matched packet.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectionAudit {
    pub device: DeviceAddress,
    pub rule: usize,
    pub step: u32,
    pub before: HciCommand,
    pub after: HciCommand,
    /// The replacement equalled the original key.
    pub noop: bool,
}

/// Applies one rule. Returns the (possibly rewritten) command and, when the
/// rule matched, its audit record.
pub fn inject(
    rule: &FaultRule,
    rule_index: usize,
    device: DeviceAddress,
    cmd: &HciCommand,
    peer: Option<DeviceAddress>,
    step: u32,
) -> (HciCommand, Option<InjectionAudit>) {
    if !rule.matches(cmd, peer, step) {
        return (cmd.clone(), None);
    }
    let after = cmd
        .with_key(rule.replacement_key)
        .expect("matched commands carry a key");
    let audit = InjectionAudit {
        device,
        rule: rule_index,
        step,
        before: cmd.clone(),
        noop: after == *cmd,
        after: after.clone(),
    };
    (after, Some(audit))
}

/// The rules hooked into one device's HCI layer. The first matching rule
/// wins.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FaultInjector {
    device: DeviceAddress,
    rules: Vec<FaultRule>,
}

impl FaultInjector {
    pub fn new(device: DeviceAddress) -> Self {
        FaultInjector {
            device,
            rules: Vec::new(),
        }
    }

    pub fn add_rule(&mut self, rule: FaultRule) -> Result<usize, AttackError> {
        rule.validate()?;
        self.rules.push(rule);
        Ok(self.rules.len() - 1)
    }

    pub fn rules(&self) -> &[FaultRule] {
        &self.rules
    }

    pub fn apply(
        &self,
        cmd: &HciCommand,
        peer: Option<DeviceAddress>,
        step: u32,
    ) -> (HciCommand, Option<InjectionAudit>) {
        for (i, rule) in self.rules.iter().enumerate() {
            if rule.matches(cmd, peer, step) {
                return inject(rule, i, self.device, cmd, peer, step);
            }
        }
        (cmd.clone(), None)
    }
}

/// An attacker that paired separately with A (upstream) and B (downstream).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MitmNode {
    /// K_AM; `peer` is A.
    pub upstream: LinkKeyRecord,
    /// K_MB; `peer` is B.
    pub downstream: LinkKeyRecord,
    pub present: bool,
}

impl MitmNode {
    pub fn new(upstream: LinkKeyRecord, downstream: LinkKeyRecord, present: bool) -> Result<Self, AttackError> {
        if upstream.key == downstream.key {
            return Err(AttackError::IdenticalKeys);
        }
        Ok(MitmNode {
            upstream,
            downstream,
            present,
        })
    }

    pub fn victim_a(&self) -> DeviceAddress {
        self.upstream.peer
    }

    pub fn victim_b(&self) -> DeviceAddress {
        self.downstream.peer
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LinkResult {
    Auth(AuthOutcome),
    Encryption(EncryptionOutcome),
}

impl LinkResult {
    pub fn status(&self) -> ErrorCode {
        match self {
            LinkResult::Auth(o) => o.status,
            LinkResult::Encryption(o) => o.status,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RelayOutcome {
    /// Both segments were set up through the attacker.
    Relayed {
        a_side: (Connection, LinkResult),
        b_side: (Connection, LinkResult),
    },
    /// The attacker was absent and A met B directly.
    Direct(Connection, LinkResult),
}

fn secure(conn: &mut Connection, ik: LinkKey, rk: LinkKey, rng: &mut impl RngCore) -> Result<LinkResult, LinkError> {
    match conn.transport {
        Transport::Bt => conn
            .run_bt_authentication(Some(ik), Some(rk), rng)
            .map(LinkResult::Auth),
        Transport::Ble => conn
            .run_ble_encryption_start(ik, Some(rk), rng)
            .map(LinkResult::Encryption),
    }
}

/// A attempts to connect to B. `a_key` and `b_key` are what A and B store
/// for each other (K_AM and K_MB after a MitM pairing).
pub fn relay_mitm(
    node: &MitmNode,
    a_key: LinkKey,
    b_key: LinkKey,
    transport: Transport,
    handles: (u16, u16),
    rng: &mut impl RngCore,
) -> Result<RelayOutcome, LinkError> {
    let (a, b) = (node.victim_a(), node.victim_b());
    if !node.present {
        let mut conn = Connection::established(handles.0, a, b, transport);
        let result = secure(&mut conn, a_key, b_key, rng)?;
        return Ok(RelayOutcome::Direct(conn, result));
    }
    // A talks to the attacker posing as B, the attacker talks to B posing as A.
    let mut up = Connection::established(handles.0, a, b, transport);
    let up_result = secure(&mut up, a_key, node.upstream.key, rng)?;
    let mut down = Connection::established(handles.1, a, b, transport);
    let down_result = secure(&mut down, node.downstream.key, b_key, rng)?;
    Ok(RelayOutcome::Relayed {
        a_side: (up, up_result),
        b_side: (down, down_result),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hci::{decode, encode, HciPacket};
    use crate::linklayer::ConnectionState;
    use crate::types::KeyType;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const A: DeviceAddress = DeviceAddress::new([0xA0, 0, 0, 0, 0, 0x0A]);
    const B: DeviceAddress = DeviceAddress::new([0xB0, 0, 0, 0, 0, 0x0B]);

    fn rule(peer: Option<DeviceAddress>, start: u32, end: u32) -> FaultRule {
        FaultRule {
            target: FaultTarget::LinkKeyRequestReply,
            match_peer: peer,
            replacement_key: LinkKey::from(0xBAD),
            window: StepWindow { start, end },
        }
    }

    fn reply(peer: DeviceAddress) -> HciCommand {
        HciCommand::LinkKeyRequestReply {
            peer,
            key: LinkKey::from(0x600D),
        }
    }

    fn record(peer: DeviceAddress, key: u128) -> LinkKeyRecord {
        LinkKeyRecord {
            peer,
            key: LinkKey::from(key),
            key_type: KeyType::Unauthenticated,
            bonded: true,
            transport: Transport::Bt,
        }
    }

    #[test]
    fn matching_peer_is_replaced_and_audited() {
        let (out, audit) = inject(&rule(Some(A), 0, 5), 0, B, &reply(A), Some(A), 1);
        assert_eq!(out.key(), Some(LinkKey::from(0xBAD)));
        let audit = audit.unwrap();
        assert_eq!(audit.before, reply(A));
        assert!(!audit.noop);
    }

    #[test]
    fn other_peer_passes_unchanged() {
        let (out, audit) = inject(&rule(Some(A), 0, 5), 0, B, &reply(B), Some(B), 1);
        assert_eq!(out, reply(B));
        assert!(audit.is_none());
    }

    #[test]
    fn outside_window_passes_unchanged() {
        let (out, audit) = inject(&rule(Some(A), 0, 5), 0, B, &reply(A), Some(A), 7);
        assert_eq!(out, reply(A));
        assert!(audit.is_none());
    }

    #[test]
    fn identical_replacement_is_flagged() {
        let mut r = rule(None, 0, 1);
        r.replacement_key = LinkKey::from(0x600D);
        let (_, audit) = inject(&r, 0, B, &reply(A), Some(A), 0);
        assert!(audit.unwrap().noop);
    }

    #[test]
    fn le_rule_ignores_bt_commands() {
        let mut r = rule(None, 0, 10);
        r.target = FaultTarget::LeEnableEncryption;
        assert!(!r.matches(&reply(A), Some(A), 0));
        let le = HciCommand::LeEnableEncryption {
            handle: 3,
            ltk: LinkKey::from(1),
        };
        assert!(r.matches(&le, Some(A), 0));
    }

    #[test]
    fn empty_window_rejected() {
        assert_eq!(
            StepWindow::new(3, 3),
            Err(AttackError::EmptyWindow { start: 3, end: 3 })
        );
        let mut inj = FaultInjector::new(A);
        assert!(inj.add_rule(rule(None, 4, 2)).is_err());
    }

    #[test]
    fn first_matching_rule_wins() {
        let mut inj = FaultInjector::new(B);
        inj.add_rule(rule(Some(B), 0, 10)).unwrap();
        let mut second = rule(None, 0, 10);
        second.replacement_key = LinkKey::from(0xC0FFEE);
        inj.add_rule(second).unwrap();
        let (out, audit) = inj.apply(&reply(A), Some(A), 2);
        assert_eq!(out.key(), Some(LinkKey::from(0xC0FFEE)));
        assert_eq!(audit.unwrap().rule, 1);
    }

    #[test]
    fn mitm_requires_distinct_keys() {
        assert_eq!(
            MitmNode::new(record(A, 1), record(B, 1), true),
            Err(AttackError::IdenticalKeys)
        );
    }

    #[test]
    fn present_mitm_relays_both_segments() {
        let node = MitmNode::new(record(A, 1), record(B, 2), true).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        match relay_mitm(
            &node,
            LinkKey::from(1),
            LinkKey::from(2),
            Transport::Bt,
            (1, 2),
            &mut rng,
        )
        .unwrap()
        {
            RelayOutcome::Relayed { a_side, b_side } => {
                assert_eq!(a_side.0.state(), ConnectionState::Encrypted);
                assert_eq!(b_side.0.state(), ConnectionState::Encrypted);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn absent_mitm_fails_at_a() {
        let node = MitmNode::new(record(A, 1), record(B, 2), false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        match relay_mitm(
            &node,
            LinkKey::from(1),
            LinkKey::from(2),
            Transport::Bt,
            (1, 2),
            &mut rng,
        )
        .unwrap()
        {
            RelayOutcome::Direct(conn, result) => {
                assert_eq!(result.status(), ErrorCode::AuthenticationFailure);
                assert_ne!(conn.state(), ConnectionState::Encrypted);
            }
            other => panic!("{other:?}"),
        }
    }

    proptest! {
        #[test]
        fn injection_changes_only_the_key(peer in any::<[u8; 6]>(), key in any::<u128>(), repl in any::<u128>(), handle in 0u16..0x0F00, le in any::<bool>()) {
            let peer = DeviceAddress::new(peer);
            let (cmd, target) = if le {
                (HciCommand::LeEnableEncryption { handle, ltk: LinkKey::from(key) }, FaultTarget::LeEnableEncryption)
            } else {
                (HciCommand::LinkKeyRequestReply { peer, key: LinkKey::from(key) }, FaultTarget::LinkKeyRequestReply)
            };
            let r = FaultRule { target, match_peer: Some(peer), replacement_key: LinkKey::from(repl), window: StepWindow { start: 0, end: 1 } };
            let (after, audit) = inject(&r, 0, A, &cmd, Some(peer), 0);
            prop_assert!(audit.is_some());
            let before_bytes = encode(&HciPacket::Command(cmd.clone())).unwrap();
            let after_bytes = encode(&HciPacket::Command(after.clone())).unwrap();
            prop_assert_eq!(before_bytes.len(), after_bytes.len());
            // The key occupies the last 16 parameter octets of both commands.
            let key_start = before_bytes.len() - 16;
            prop_assert_eq!(&before_bytes[..key_start], &after_bytes[..key_start]);
            let new_key = after.key().unwrap();
            prop_assert_eq!(&after_bytes[key_start..], &new_key.as_bytes()[..]);
            let decoded = decode(&after_bytes).unwrap();
            prop_assert_eq!(decoded, HciPacket::Command(after));
        }

        #[test]
        fn absent_mitm_never_encrypts(k1 in any::<u128>(), k2 in any::<u128>(), seed in any::<u64>(), le in any::<bool>()) {
            prop_assume!(k1 != k2);
            let node = MitmNode::new(record(A, k1), record(B, k2), false).unwrap();
            let transport = if le { Transport::Ble } else { Transport::Bt };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            match relay_mitm(&node, LinkKey::from(k1), LinkKey::from(k2), transport, (1, 2), &mut rng).unwrap() {
                RelayOutcome::Direct(conn, _) => prop_assert_ne!(conn.state(), ConnectionState::Encrypted),
                RelayOutcome::Relayed { .. } => prop_assert!(false, "absent attacker relayed"),
            }
        }
    }
}
