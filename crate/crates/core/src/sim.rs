//! Deterministic scenario execution.
//!
//! A [`World`] owns every device, the optional attacker, the event bus and
//! one HCI trace per device. All randomness comes from a ChaCha8 generator
//! seeded with the scenario seed, and the clock advances by fixed quanta,
//! so a scenario and seed always produce the same bytes.

use std::collections::BTreeMap;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attack::{FaultInjector, FaultRule, MitmNode, StepWindow};
use crate::bus::BusEvent;
use crate::clock::{SimClock, SimTime};
use crate::config::{ConfigError, DeviceRole, ScenarioConfig, Step};
use crate::hci::{AclData, HciCommand, HciEvent, HciPacket};
use crate::host::{Host, HostOutput, PairingRequest, PairingTrigger};
use crate::linklayer::{Connection, Delivery, Side};
use crate::trace::{CapturedPacket, Direction};
use crate::types::{DeviceAddress, ErrorCode, LinkKey, LinkKeyRecord, Transport};

/// Time taken by one packet crossing a host/controller boundary.
pub const PACKET_QUANTUM_US: u64 = 625;
/// Idle time inserted before every script step.
pub const STEP_GAP_US: u64 = 1_000_000;

/// ACL payload sent once a link is secured.
const DATA_PAYLOAD: &[u8] = b"hello";
/// Packet boundary flag for a first automatically flushable fragment.
const ACL_FIRST_FLUSHABLE: u16 = 0x2000;

#[derive(Debug, Clone)]
pub struct Device {
    pub name: String,
    pub address: DeviceAddress,
    pub role: DeviceRole,
    pub host: Host,
    pub injector: FaultInjector,
    pub trace: Vec<CapturedPacket>,
}

/// The MitM node as it evolves during a run. It may start without keys and
/// acquire them by intercepting pairings.
#[derive(Debug, Clone)]
pub struct Attacker {
    pub name: String,
    pub address: DeviceAddress,
    /// Upstream victim first.
    pub victims: (DeviceAddress, DeviceAddress),
    pub present: bool,
    pub upstream: Option<LinkKeyRecord>,
    pub downstream: Option<LinkKeyRecord>,
    /// Answer used when impersonating towards a victim it holds no key for.
    guessed_key: LinkKey,
}

impl Attacker {
    pub fn targets(&self, x: DeviceAddress, y: DeviceAddress) -> bool {
        (x, y) == self.victims || (y, x) == self.victims
    }

    pub fn record_for(&self, victim: DeviceAddress) -> Option<&LinkKeyRecord> {
        if victim == self.victims.0 {
            self.upstream.as_ref()
        } else if victim == self.victims.1 {
            self.downstream.as_ref()
        } else {
            None
        }
    }

    fn key_for(&self, victim: DeviceAddress) -> LinkKey {
        self.record_for(victim).map_or(self.guessed_key, |r| r.key)
    }

    fn store(&mut self, record: LinkKeyRecord) {
        if record.peer == self.victims.0 {
            self.upstream = Some(record);
        } else if record.peer == self.victims.1 {
            self.downstream = Some(record);
        }
    }

    /// The two-key node, once both keys are held.
    pub fn node(&self) -> Option<MitmNode> {
        MitmNode::new(self.upstream?, self.downstream?, self.present).ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum End {
    Device(usize),
    Attacker,
}

#[derive(Debug, Clone)]
struct Link {
    conn: Connection,
    init: End,
    resp: End,
}

impl Link {
    fn end(&self, side: Side) -> End {
        match side {
            Side::Initiator => self.init,
            Side::Responder => self.resp,
        }
    }

    fn involves(&self, device: usize) -> bool {
        self.init == End::Device(device) || self.resp == End::Device(device)
    }
}

type PairingQueue = Vec<(usize, PairingRequest)>;

#[derive(Debug, Clone)]
pub struct World {
    clock: SimClock,
    rng: ChaCha8Rng,
    devices: Vec<Device>,
    attacker: Option<Attacker>,
    bus: Vec<BusEvent>,
    step: u32,
    next_handle: u16,
    links: Vec<Link>,
    last_connect: Option<(usize, usize, Transport)>,
    dut: usize,
}

impl World {
    /// Builds the devices and installs the declared pairings. `cfg` must
    /// have passed validation.
    pub fn new(cfg: &ScenarioConfig) -> Result<Self, ConfigError> {
        cfg.validate()?;
        let registry = cfg.registry()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut devices = Vec::new();
        let mut attacker = None;
        for d in &cfg.devices {
            if d.role == DeviceRole::Mitm {
                let [a, b] = d.victims.as_ref().expect("validated");
                let addr = |n: &str| cfg.device(n).expect("validated").address;
                attacker = Some(Attacker {
                    name: d.name.clone(),
                    address: d.address,
                    victims: (addr(a), addr(b)),
                    present: false,
                    upstream: None,
                    downstream: None,
                    guessed_key: random_key(&mut rng),
                });
                continue;
            }
            let profile = registry.get(&cfg.profile_of(d)).expect("validated").clone();
            devices.push(Device {
                name: d.name.clone(),
                address: d.address,
                role: d.role,
                host: Host::new(d.address, profile, d.option_policy.unwrap_or_default()),
                injector: FaultInjector::new(d.address),
                trace: Vec::new(),
            });
        }
        let dut = devices
            .iter()
            .position(|d| d.role == DeviceRole::Host)
            .expect("validated");
        let mut world = World {
            clock: SimClock::new(),
            rng,
            devices,
            attacker,
            bus: Vec::new(),
            step: 0,
            next_handle: 1,
            links: Vec::new(),
            last_connect: None,
            dut,
        };
        for p in &cfg.pairings {
            let a = world.index_of(&p.a);
            let b = world.index_of(&p.b);
            let (ka, kb) = world.fresh_keys(p.via_mitm);
            let (addr_a, addr_b) = (world.devices[a].address, world.devices[b].address);
            let record = |peer, key| LinkKeyRecord {
                peer,
                key,
                key_type: p.key_type,
                bonded: p.bonded,
                transport: p.transport,
            };
            world.devices[a].host.install_key(record(addr_b, ka));
            world.devices[b].host.install_key(record(addr_a, kb));
            if p.via_mitm {
                let m = world.attacker.as_mut().expect("validated");
                m.store(record(addr_a, ka));
                m.store(record(addr_b, kb));
            }
            world.bus.push(BusEvent::Pairing {
                initiator: addr_a,
                peer: addr_b,
                via_mitm: p.via_mitm,
                trigger: PairingTrigger::Initial,
                transport: p.transport,
                key_type: p.key_type,
                bonded: p.bonded,
                at: world.clock.now(),
            });
        }
        Ok(world)
    }

    /// Builds the world and runs the whole script.
    pub fn execute(cfg: &ScenarioConfig) -> Result<Self, ConfigError> {
        let mut world = World::new(cfg)?;
        for (i, step) in cfg.script.iter().enumerate() {
            world.run_step(i as u32, step);
        }
        Ok(world)
    }

    pub fn devices(&self) -> &[Device] {
        &self.devices
    }

    pub fn device(&self, name: &str) -> Option<&Device> {
        self.devices.iter().find(|d| d.name == name)
    }

    pub fn dut(&self) -> &Device {
        &self.devices[self.dut]
    }

    pub fn attacker(&self) -> Option<&Attacker> {
        self.attacker.as_ref()
    }

    pub fn bus(&self) -> &[BusEvent] {
        &self.bus
    }

    pub fn now(&self) -> SimTime {
        self.clock.now()
    }

    pub fn traces(&self) -> BTreeMap<DeviceAddress, Vec<CapturedPacket>> {
        self.devices.iter().map(|d| (d.address, d.trace.clone())).collect()
    }

    /// State of the link with `handle`, if it exists.
    pub fn connection(&self, handle: u16) -> Option<&Connection> {
        self.links.iter().map(|l| &l.conn).find(|c| c.handle == handle)
    }

    pub fn connections(&self) -> impl Iterator<Item = &Connection> {
        self.links.iter().map(|l| &l.conn)
    }

    fn index_of(&self, name: &str) -> usize {
        self.devices
            .iter()
            .position(|d| d.name == name)
            .expect("validated device name")
    }

    fn index_of_addr(&self, addr: DeviceAddress) -> Option<usize> {
        self.devices.iter().position(|d| d.address == addr)
    }

    fn fresh_keys(&mut self, distinct: bool) -> (LinkKey, LinkKey) {
        let a = random_key(&mut self.rng);
        if !distinct {
            return (a, a);
        }
        loop {
            let b = random_key(&mut self.rng);
            if b != a {
                return (a, b);
            }
        }
    }

    pub fn run_step(&mut self, index: u32, step: &Step) {
        self.step = index;
        self.clock.advance(STEP_GAP_US);
        match step {
            Step::Connect { from, to, transport } => {
                let (a, b) = (self.index_of(from), self.index_of(to));
                self.last_connect = Some((a, b, *transport));
                self.connect(a, b, *transport, true);
            }
            Step::Reconnect => {
                let (a, b, t) = self.last_connect.expect("validated");
                self.connect(a, b, t, true);
            }
            Step::InjectFault {
                device,
                target,
                match_peer,
                replacement_key,
                window,
            } => {
                let i = self.index_of(device);
                let rule = FaultRule {
                    target: *target,
                    match_peer: match_peer.as_ref().map(|n| self.devices[self.index_of(n)].address),
                    replacement_key: *replacement_key,
                    window: StepWindow::new(window.start, window.end).expect("validated"),
                };
                self.devices[i].injector.add_rule(rule).expect("validated");
            }
            Step::MitmPresent { present } => {
                if let Some(m) = self.attacker.as_mut() {
                    m.present = *present;
                }
            }
            Step::UserReset {
                device,
                peer,
                transport,
            } => {
                let i = self.index_of(device);
                let peer = self.devices[self.index_of(peer)].address;
                let deletion = self.devices[i].host.user_reset(peer, *transport);
                self.bus.push(BusEvent::KeyDeletion {
                    device: self.devices[i].address,
                    deletion,
                    user_initiated: true,
                    at: self.clock.now(),
                });
            }
            Step::UserConsent { device, decision } => {
                let i = device.as_ref().map_or(self.dut, |n| self.index_of(n));
                self.devices[i].host.push_consent(*decision);
                self.bus.push(BusEvent::UserConsent {
                    device: self.devices[i].address,
                    accept: *decision == crate::host::Consent::Accept,
                    at: self.clock.now(),
                });
            }
        }
    }

    fn tick(&mut self) -> SimTime {
        self.clock.advance(PACKET_QUANTUM_US)
    }

    fn alloc_handle(&mut self) -> u16 {
        let h = self.next_handle;
        // Handles are 12 bits wide.
        self.next_handle = if h >= 0x0EFF { 1 } else { h + 1 };
        h
    }

    /// `from` connects to `to`, through the attacker if it is present and
    /// sits between them.
    fn connect(&mut self, from: usize, to: usize, transport: Transport, allow_pairing: bool) {
        self.close_links_of(from, to);
        let (a, b) = (self.devices[from].address, self.devices[to].address);
        let relay = self.attacker.as_ref().is_some_and(|m| m.present && m.targets(a, b));
        let mut pairings = PairingQueue::new();
        if relay {
            // Posing as `to` towards `from`, then as `from` towards `to`.
            if self.secure_link(End::Device(from), End::Attacker, a, b, transport, &mut pairings) {
                self.secure_link(End::Attacker, End::Device(to), a, b, transport, &mut pairings);
            }
        } else {
            self.secure_link(End::Device(from), End::Device(to), a, b, transport, &mut pairings);
        }
        if allow_pairing {
            for (dev, req) in pairings {
                self.pair(dev, req);
            }
        }
    }

    /// Gracefully closes every open link involving either device.
    fn close_links_of(&mut self, x: usize, y: usize) {
        let mut links = std::mem::take(&mut self.links);
        let mut ignored = PairingQueue::new();
        for link in links.iter_mut() {
            if link.conn.is_open() && (link.involves(x) || link.involves(y)) {
                self.close(link, ErrorCode::RemoteUserTerminated, &mut ignored);
            }
        }
        self.links = links;
    }

    fn close(&mut self, link: &mut Link, reason: ErrorCode, pairings: &mut PairingQueue) {
        let handle = link.conn.handle;
        if let End::Device(i) = link.init {
            self.send(i, HciCommand::Disconnect { handle, reason });
        }
        self.detach(link, reason, pairings);
    }

    fn detach(&mut self, link: &mut Link, reason: ErrorCode, pairings: &mut PairingQueue) {
        if let Ok(deliveries) = link.conn.detach(reason) {
            self.dispatch(link, deliveries, pairings);
        }
    }

    fn secure_link(
        &mut self,
        init: End,
        resp: End,
        init_addr: DeviceAddress,
        resp_addr: DeviceAddress,
        transport: Transport,
        pairings: &mut PairingQueue,
    ) -> bool {
        let handle = self.alloc_handle();
        let mut link = Link {
            conn: Connection::new(handle, init_addr, resp_addr, transport),
            init,
            resp,
        };
        link.conn.connect().expect("fresh connections are idle");
        for (end, peer, role) in [(init, resp_addr, Side::Initiator), (resp, init_addr, Side::Responder)] {
            if let End::Device(i) = end {
                self.devices[i].host.on_connection_opened(handle, peer, transport, role);
                self.bus.push(BusEvent::ConnectionOpened {
                    device: self.devices[i].address,
                    handle,
                    peer,
                    transport,
                    role,
                    at: self.clock.now(),
                });
            }
        }
        let ok = match transport {
            Transport::Bt => self.authenticate_bt(&mut link, pairings),
            Transport::Ble => self.encrypt_ble(&mut link, pairings),
        };
        if ok {
            if let End::Device(i) = init {
                if self.devices[i].host.may_send_data(handle) {
                    self.send_acl(i, handle);
                }
            }
        }
        self.links.push(link);
        ok
    }

    fn authenticate_bt(&mut self, link: &mut Link, pairings: &mut PairingQueue) -> bool {
        let handle = link.conn.handle;
        if let End::Device(i) = link.init {
            self.send(i, HciCommand::AuthenticationRequested { handle });
        }
        let ik = self.obtain_link_key(link.init, link.conn.responder);
        let rk = self.obtain_link_key(link.resp, link.conn.initiator);
        let outcome = link
            .conn
            .run_bt_authentication(ik, rk, &mut self.rng)
            .expect("new BR/EDR links are connected");
        self.dispatch(link, outcome.deliveries, pairings);
        outcome.status.is_success()
    }

    fn encrypt_ble(&mut self, link: &mut Link, pairings: &mut PairingQueue) -> bool {
        let handle = link.conn.handle;
        let ik = match link.init {
            End::Device(i) => match self.devices[i].host.encryption_request(handle) {
                Some(cmd) => self.send(i, cmd).key(),
                None => None,
            },
            End::Attacker => self.attacker.as_ref().map(|m| m.key_for(link.conn.responder)),
        };
        let Some(ik) = ik else {
            // Nothing to encrypt with: the host asks for pairing instead.
            if let End::Device(i) = link.init {
                let now = self.clock.now();
                let out = self.devices[i].host.on_missing_key(handle, now);
                self.apply_output(i, link, out, pairings);
            }
            self.close(link, ErrorCode::RemoteUserTerminated, pairings);
            return false;
        };
        let rk = match link.resp {
            End::Device(j) => self.devices[j].host.ltk_for(link.conn.initiator),
            End::Attacker => self.attacker.as_ref().map(|m| m.key_for(link.conn.initiator)),
        };
        let outcome = link
            .conn
            .run_ble_encryption_start(ik, rk, &mut self.rng)
            .expect("new LE links are connected");
        self.dispatch(link, outcome.deliveries, pairings);
        outcome.enabled
    }

    /// The key a controller obtains for `peer`: from its host over HCI, or
    /// from the attacker's records.
    fn obtain_link_key(&mut self, end: End, peer: DeviceAddress) -> Option<LinkKey> {
        match end {
            End::Device(i) => {
                let out = self.deliver(i, HciEvent::LinkKeyRequest { peer });
                out.commands.into_iter().find_map(|cmd| self.send(i, cmd).key())
            }
            End::Attacker => self.attacker.as_ref().map(|m| m.key_for(peer)),
        }
    }

    fn dispatch(&mut self, link: &mut Link, deliveries: Vec<Delivery>, pairings: &mut PairingQueue) {
        for Delivery { to, event } in deliveries {
            match link.end(to) {
                End::Device(i) => {
                    let out = self.deliver(i, event);
                    self.apply_output(i, link, out, pairings);
                }
                End::Attacker => {
                    let failed = matches!(
                        event,
                        HciEvent::AuthenticationComplete { status, .. } if !status.is_success()
                    ) || matches!(event, HciEvent::EncryptionChange { enabled: false, .. });
                    if failed && link.conn.is_open() {
                        self.detach(link, ErrorCode::AuthenticationFailure, pairings);
                    }
                }
            }
        }
    }

    fn apply_output(&mut self, i: usize, link: &mut Link, out: HostOutput, pairings: &mut PairingQueue) {
        let device = self.devices[i].address;
        for event in out.surface {
            self.bus.push(BusEvent::Surface { device, event });
        }
        for deletion in out.deletions {
            self.bus.push(BusEvent::KeyDeletion {
                device,
                deletion,
                user_initiated: false,
                at: self.clock.now(),
            });
        }
        pairings.extend(out.pairings.into_iter().map(|p| (i, p)));
        for cmd in out.commands {
            let sent = self.send(i, cmd);
            if let HciCommand::Disconnect { handle, reason } = sent {
                if handle == link.conn.handle && link.conn.is_open() {
                    self.detach(link, reason, pairings);
                }
            }
        }
    }

    /// Hands `event` to device `i`'s host, recording it in the trace.
    fn deliver(&mut self, i: usize, event: HciEvent) -> HostOutput {
        let now = self.tick();
        let index = self.devices[i].trace.len();
        let failure = failure_status(&self.devices[i].host, &event);
        let dev = &mut self.devices[i];
        dev.trace.push(CapturedPacket {
            at: now,
            direction: Direction::Received,
            packet: HciPacket::Event(event.clone()),
        });
        if let Some((handle, status)) = failure {
            let link = *dev.host.link(handle).expect("failure on a known link");
            self.bus.push(BusEvent::Failure {
                device: dev.address,
                handle,
                peer: link.peer,
                transport: link.transport,
                status,
                record: dev.host.store().get(link.peer, link.transport).copied(),
                packet: index,
                at: now,
            });
        }
        self.devices[i].host.handle_event(&event, now)
    }

    /// Sends `cmd` from device `i`'s host through its fault injector.
    fn send(&mut self, i: usize, cmd: HciCommand) -> HciCommand {
        let now = self.tick();
        let dev = &mut self.devices[i];
        let peer = match &cmd {
            HciCommand::LinkKeyRequestReply { peer, .. } => Some(*peer),
            HciCommand::LeEnableEncryption { handle, .. } => dev.host.link(*handle).map(|l| l.peer),
            _ => None,
        };
        let (sent, audit) = dev.injector.apply(&cmd, peer, self.step);
        dev.trace.push(CapturedPacket {
            at: now,
            direction: Direction::Sent,
            packet: HciPacket::Command(sent.clone()),
        });
        if let Some(audit) = audit {
            self.bus.push(BusEvent::Injection(audit));
        }
        sent
    }

    fn send_acl(&mut self, i: usize, handle: u16) {
        let now = self.tick();
        self.devices[i].trace.push(CapturedPacket {
            at: now,
            direction: Direction::Sent,
            packet: HciPacket::Acl(AclData {
                handle_flags: handle | ACL_FIRST_FLUSHABLE,
                payload: DATA_PAYLOAD.to_vec(),
            }),
        });
    }

    /// Runs a pairing requested by device `dev`, then connects again.
    fn pair(&mut self, dev: usize, req: PairingRequest) {
        let Some(peer) = self.index_of_addr(req.peer) else {
            return;
        };
        let (a, b) = (self.devices[dev].address, req.peer);
        let via_mitm = self.attacker.as_ref().is_some_and(|m| m.present && m.targets(a, b));
        let (k_dev, k_peer) = self.fresh_keys(via_mitm);
        let record = |peer, key| LinkKeyRecord {
            peer,
            key,
            key_type: req.key_type,
            bonded: req.bonded,
            transport: req.transport,
        };
        self.install_pairing(dev, record(b, k_dev));
        self.install_pairing(peer, record(a, k_peer));
        if via_mitm {
            let m = self.attacker.as_mut().expect("checked");
            m.store(record(a, k_dev));
            m.store(record(b, k_peer));
        }
        self.bus.push(BusEvent::Pairing {
            initiator: a,
            peer: b,
            via_mitm,
            trigger: req.trigger,
            transport: req.transport,
            key_type: req.key_type,
            bonded: req.bonded,
            at: self.clock.now(),
        });
        self.connect(dev, peer, req.transport, false);
    }

    fn install_pairing(&mut self, i: usize, record: LinkKeyRecord) {
        match record.transport {
            Transport::Bt => {
                self.devices[i].host.begin_pairing(record.peer, record.bonded);
                self.deliver(
                    i,
                    HciEvent::LinkKeyNotification {
                        peer: record.peer,
                        key: record.key,
                        key_type: record.key_type,
                    },
                );
            }
            // LE key distribution happens above HCI.
            Transport::Ble => self.devices[i].host.install_key(record),
        }
    }
}

fn random_key(rng: &mut impl RngCore) -> LinkKey {
    let mut bytes = [0u8; 16];
    rng.fill_bytes(&mut bytes);
    LinkKey::new(bytes)
}

/// The failure `event` reports to `host`, if any. A responder learns of a
/// failure only through an Authentication Failure disconnect reason.
fn failure_status(host: &Host, event: &HciEvent) -> Option<(u16, ErrorCode)> {
    match *event {
        HciEvent::AuthenticationComplete { handle, status } if !status.is_success() => Some((handle, status)),
        HciEvent::EncryptionChange {
            handle,
            status,
            enabled: false,
        } => Some((
            handle,
            if status.is_success() {
                ErrorCode::AuthenticationFailure
            } else {
                status
            },
        )),
        HciEvent::DisconnectionComplete {
            handle,
            reason: ErrorCode::AuthenticationFailure,
        } => {
            let link = host.link(handle)?;
            (link.role == Side::Responder && !link.failed && !link.closed)
                .then_some((handle, ErrorCode::AuthenticationFailure))
        }
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linklayer::ConnectionState;

    fn cfg(profile: &str, extra_script: &str) -> ScenarioConfig {
        ScenarioConfig::parse(&format!(
            r#"
id = "sim"
seed = 42

[[devices]]
name = "phone"
address = "00:00:00:00:00:01"
role = "host"
profile = "{profile}"

[[devices]]
name = "headset"
address = "00:00:00:00:00:02"
role = "peripheral"

[[pairings]]
a = "phone"
b = "headset"
key_type = "authenticated"
bonded = true

{extra_script}
"#
        ))
        .unwrap()
    }

    const MISMATCH: &str = r#"
[[script]]
op = "inject_fault"
device = "phone"
target = "link_key_request_reply"
match_peer = "headset"
replacement_key = "0x0000000000000000000000000000dead"
window = { start = 0, end = 2 }

[[script]]
op = "connect"
from = "phone"
to = "headset"
"#;

    #[test]
    fn matching_keys_encrypt_and_send_data() {
        let world = World::execute(&cfg(
            "reference",
            "[[script]]\nop = \"connect\"\nfrom = \"phone\"\nto = \"headset\"\n",
        ))
        .unwrap();
        assert_eq!(world.connection(1).unwrap().state(), ConnectionState::Encrypted);
        assert!(world.dut().trace.iter().any(|p| matches!(p.packet, HciPacket::Acl(_))));
        assert!(!world.bus().iter().any(|e| matches!(e, BusEvent::Failure { .. })));
    }

    #[test]
    fn mismatch_fails_and_detaches() {
        let world = World::execute(&cfg("reference", MISMATCH)).unwrap();
        let conn = world.connection(1).unwrap();
        assert_eq!(conn.state(), ConnectionState::Detached);
        assert_eq!(conn.detach_reason(), Some(ErrorCode::AuthenticationFailure));
        assert!(!world.dut().trace.iter().any(|p| matches!(p.packet, HciPacket::Acl(_))));
        let headset = world.device("headset").unwrap();
        let last = headset.trace.last().unwrap();
        assert_eq!(
            last.packet,
            HciPacket::Event(HciEvent::DisconnectionComplete {
                handle: 1,
                reason: ErrorCode::AuthenticationFailure
            })
        );
        // The responder never sees an authentication event.
        assert!(!headset
            .trace
            .iter()
            .any(|p| matches!(p.packet, HciPacket::Event(HciEvent::AuthenticationComplete { .. }))));
    }

    #[test]
    fn buggy_profile_puts_0x13_on_the_wire() {
        let world = World::execute(&cfg("samsung-android", MISMATCH)).unwrap();
        assert_eq!(
            world.connection(1).unwrap().detach_reason(),
            Some(ErrorCode::RemoteUserTerminated)
        );
    }

    #[test]
    fn traces_are_monotone_and_deterministic() {
        let a = World::execute(&cfg("google-android", MISMATCH)).unwrap();
        let b = World::execute(&cfg("google-android", MISMATCH)).unwrap();
        assert_eq!(a.traces(), b.traces());
        assert_eq!(a.bus(), b.bus());
        for trace in a.traces().values() {
            assert!(trace.windows(2).all(|w| w[0].at <= w[1].at));
        }
    }

    #[test]
    fn injection_is_audited_once_per_matched_packet() {
        let world = World::execute(&cfg("reference", MISMATCH)).unwrap();
        let audits = world
            .bus()
            .iter()
            .filter(|e| matches!(e, BusEvent::Injection(_)))
            .count();
        assert_eq!(audits, 1);
    }
}
