//! Per-device pairing database.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::types::{DeviceAddress, LinkKeyRecord, Transport};

/// Outcome of a deletion request.
///
/// Every call to [`KeyStore::delete`] yields one of these, including
/// deletions of keys that were not present, so callers can audit attempts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyDeletion {
    pub peer: DeviceAddress,
    pub transport: Transport,
    pub removed: Option<LinkKeyRecord>,
}

impl KeyDeletion {
    pub fn was_present(&self) -> bool {
        self.removed.is_some()
    }

    pub fn bonded(&self) -> bool {
        self.removed.is_some_and(|r| r.bonded)
    }
}

/// At most one record per `(peer, transport)`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KeyStore {
    records: BTreeMap<(DeviceAddress, Transport), LinkKeyRecord>,
}

impl KeyStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts `record`, returning the record it replaced.
    pub fn put(&mut self, record: LinkKeyRecord) -> Option<LinkKeyRecord> {
        self.records.insert((record.peer, record.transport), record)
    }

    #[must_use = "deletions must be audited"]
    pub fn delete(&mut self, peer: DeviceAddress, transport: Transport) -> KeyDeletion {
        KeyDeletion {
            peer,
            transport,
            removed: self.records.remove(&(peer, transport)),
        }
    }

    pub fn get(&self, peer: DeviceAddress, transport: Transport) -> Option<&LinkKeyRecord> {
        self.records.get(&(peer, transport))
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> impl Iterator<Item = &LinkKeyRecord> {
        self.records.values()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{KeyType, LinkKey};
    use proptest::prelude::*;

    const A: DeviceAddress = DeviceAddress::new([0, 0, 0, 0, 0, 0xA]);

    fn record(peer: DeviceAddress, transport: Transport, key: u128, bonded: bool) -> LinkKeyRecord {
        LinkKeyRecord {
            peer,
            key: LinkKey::from(key),
            key_type: KeyType::Authenticated,
            bonded,
            transport,
        }
    }

    #[test]
    fn put_into_empty_store() {
        let mut store = KeyStore::new();
        assert_eq!(store.put(record(A, Transport::Bt, 1, true)), None);
        assert_eq!(store.len(), 1);
    }

    #[test]
    fn put_replaces_same_peer_and_transport() {
        let mut store = KeyStore::new();
        store.put(record(A, Transport::Bt, 1, true));
        let old = store.put(record(A, Transport::Bt, 2, true));
        assert_eq!(old.map(|r| r.key), Some(LinkKey::from(1)));
        assert_eq!(store.len(), 1);
        assert_eq!(store.get(A, Transport::Bt).unwrap().key, LinkKey::from(2));
    }

    #[test]
    fn transports_are_separate_records() {
        let mut store = KeyStore::new();
        store.put(record(A, Transport::Bt, 1, true));
        store.put(record(A, Transport::Ble, 3, true));
        assert_eq!(store.len(), 2);
    }

    #[test]
    fn delete_reports_removed_record() {
        let mut store = KeyStore::new();
        store.put(record(A, Transport::Bt, 1, false));
        let audit = store.delete(A, Transport::Bt);
        assert!(store.is_empty());
        assert!(audit.was_present());
        assert!(!audit.bonded());
    }

    #[test]
    fn delete_of_bonded_key_is_flagged() {
        let mut store = KeyStore::new();
        store.put(record(A, Transport::Bt, 1, true));
        assert!(store.delete(A, Transport::Bt).bonded());
    }

    #[test]
    fn delete_absent_is_audited_noop() {
        let mut store = KeyStore::new();
        let audit = store.delete(A, Transport::Bt);
        assert!(store.is_empty());
        assert_eq!(audit.peer, A);
        assert!(!audit.was_present());
    }

    #[derive(Debug, Clone)]
    enum Op {
        Put(u8, bool, u128),
        Delete(u8, bool),
    }

    fn op() -> impl Strategy<Value = Op> {
        prop_oneof![
            (0u8..4, any::<bool>(), any::<u128>()).prop_map(|(p, t, k)| Op::Put(p, t, k)),
            (0u8..4, any::<bool>()).prop_map(|(p, t)| Op::Delete(p, t)),
        ]
    }

    fn transport(ble: bool) -> Transport {
        if ble {
            Transport::Ble
        } else {
            Transport::Bt
        }
    }

    proptest! {
        #[test]
        fn uniqueness_and_deletion_audit(ops in proptest::collection::vec(op(), 0..64)) {
            let mut store = KeyStore::new();
            let mut present_to_absent = 0usize;
            let mut audits_with_removal = 0usize;
            for op in ops {
                match op {
                    Op::Put(p, t, k) => {
                        store.put(record(DeviceAddress::new([0, 0, 0, 0, 0, p]), transport(t), k, k % 2 == 0));
                    }
                    Op::Delete(p, t) => {
                        let peer = DeviceAddress::new([0, 0, 0, 0, 0, p]);
                        let before = store.get(peer, transport(t)).is_some();
                        let audit = store.delete(peer, transport(t));
                        prop_assert!(store.get(peer, transport(t)).is_none());
                        if before {
                            present_to_absent += 1;
                        }
                        if audit.was_present() {
                            audits_with_removal += 1;
                        }
                    }
                }
                let mut keys: Vec<_> = store.records().map(|r| (r.peer, r.transport)).collect();
                let n = keys.len();
                keys.dedup();
                prop_assert_eq!(keys.len(), n);
            }
            prop_assert_eq!(present_to_absent, audits_with_removal);
        }
    }
}
