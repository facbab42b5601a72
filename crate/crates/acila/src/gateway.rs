//! The SACL gateway data plane.
//!
//! A gateway sits between the workloads on one physical server and the
//! rest of the fabric. On egress it attaches the SACL ID pair using the
//! controller-distributed maps, on ingress it enforces the filter rules,
//! tracks connections and strips IDs before local delivery.
//!
//! The conntrack table is keyed on the flow's normalized five-tuple, so a
//! session recorded in one direction is hit from either direction. Each
//! entry remembers whether the local side originated the session and/or
//! accepted it; analytics count the accepted side, which is what the
//! entry-count model describes.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::net::Ipv6Addr;

use crate::codec::{read_lid, SaclPacket, DEFAULT_HOP_LIMIT};
use crate::model::{FiveTuple, SaclId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default)]
pub enum DefaultAction {
    #[default]
    Deny,
    Allow,
}

/// Controller-distributed lookup state for one gateway.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GatewayTables {
    /// (source ip, LID if the workload is LID-marked) -> client SACL ID.
    pub client_map: BTreeMap<(Ipv6Addr, Option<u32>), SaclId>,
    /// (destination ip, port) -> server SACL ID.
    pub server_map: BTreeMap<(Ipv6Addr, u16), SaclId>,
    /// (client, server) pairs admitted at this gateway's server side.
    pub filter_rules: BTreeSet<(SaclId, SaclId)>,
    pub default_action: DefaultAction,
}

/// Why a packet was not forwarded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropReason {
    NoClientMapping,
    NoServerMapping,
    NoMatchingRule,
    NoConntrackEntry,
}

/// Outcome of one gateway operation. Dropping is a result, not an error.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Pass(SaclPacket),
    Drop(DropReason),
}

impl Verdict {
    pub fn passed(self) -> Option<SaclPacket> {
        match self {
            Verdict::Pass(p) => Some(p),
            Verdict::Drop(_) => None,
        }
    }

    pub fn is_drop(&self) -> bool {
        matches!(self, Verdict::Drop(_))
    }
}

#[derive(Debug, Clone)]
struct ConntrackEntry {
    pair: (SaclId, SaclId),
    last_seen: u64,
    seq: u64,
    /// Local side started the session (recorded on client egress).
    originated: bool,
    /// Local side accepted the session (recorded on server ingress).
    accepted: bool,
}

/// A live conntrack match. The role flags matter when one gateway hosts
/// both ends of a classification decision: an entry recorded on egress
/// must not pass the server-side established check, and vice versa.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConntrackHit {
    pub pair: (SaclId, SaclId),
    pub originated: bool,
    pub accepted: bool,
}

/// Per-gateway map from a connection to the SACL ID pair of its session.
///
/// Lookups refresh the entry; entries past their TTL are never matched.
/// Insertion at capacity evicts the least-recently-seen entry.
#[derive(Debug, Clone)]
pub struct ConntrackTable {
    entries: HashMap<FiveTuple, ConntrackEntry>,
    // (last_seen, seq) index for LRU eviction.
    by_age: BTreeSet<(u64, u64)>,
    seq_to_key: HashMap<u64, FiveTuple>,
    capacity: usize,
    ttl: u64,
    next_seq: u64,
}

impl ConntrackTable {
    pub fn new(capacity: usize, ttl: u64) -> Self {
        assert!(capacity > 0, "conntrack capacity must be positive");
        ConntrackTable {
            entries: HashMap::new(),
            by_age: BTreeSet::new(),
            seq_to_key: HashMap::new(),
            capacity,
            ttl,
            next_seq: 0,
        }
    }

    fn normalize(ft: &FiveTuple) -> FiveTuple {
        let rev = ft.reversed();
        if *ft <= rev {
            *ft
        } else {
            rev
        }
    }

    fn live(&self, entry: &ConntrackEntry, now: u64) -> bool {
        entry.last_seen.saturating_add(self.ttl) >= now
    }

    /// Finds the session for `ft` (either direction), refreshing it.
    pub fn lookup(&mut self, ft: &FiveTuple, now: u64) -> Option<ConntrackHit> {
        let key = Self::normalize(ft);
        let ttl = self.ttl;
        let entry = self.entries.get_mut(&key)?;
        if entry.last_seen.saturating_add(ttl) < now {
            return None;
        }
        self.by_age.remove(&(entry.last_seen, entry.seq));
        entry.last_seen = now;
        self.by_age.insert((entry.last_seen, entry.seq));
        Some(ConntrackHit {
            pair: entry.pair,
            originated: entry.originated,
            accepted: entry.accepted,
        })
    }

    /// Records (or refreshes) a session. Role flags accumulate across
    /// inserts so a local-to-local flow counts as both originated and
    /// accepted.
    pub fn record(
        &mut self,
        ft: &FiveTuple,
        pair: (SaclId, SaclId),
        now: u64,
        originated: bool,
        accepted: bool,
    ) {
        let key = Self::normalize(ft);
        if let Some(entry) = self.entries.get_mut(&key) {
            self.by_age.remove(&(entry.last_seen, entry.seq));
            entry.pair = pair;
            entry.last_seen = now;
            entry.originated |= originated;
            entry.accepted |= accepted;
            self.by_age.insert((entry.last_seen, entry.seq));
            return;
        }
        if self.entries.len() >= self.capacity {
            self.evict_oldest();
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.entries.insert(
            key,
            ConntrackEntry {
                pair,
                last_seen: now,
                seq,
                originated,
                accepted,
            },
        );
        self.by_age.insert((now, seq));
        self.seq_to_key.insert(seq, key);
    }

    fn evict_oldest(&mut self) {
        if let Some(&(last_seen, seq)) = self.by_age.iter().next() {
            self.by_age.remove(&(last_seen, seq));
            if let Some(key) = self.seq_to_key.remove(&seq) {
                self.entries.remove(&key);
            }
        }
    }

    /// Removes entries whose `last_seen + ttl < now`; returns how many.
    pub fn gc(&mut self, now: u64) -> usize {
        let dead: Vec<FiveTuple> = self
            .entries
            .iter()
            .filter(|(_, e)| !self.live(e, now))
            .map(|(k, _)| *k)
            .collect();
        for key in &dead {
            if let Some(entry) = self.entries.remove(key) {
                self.by_age.remove(&(entry.last_seen, entry.seq));
                self.seq_to_key.remove(&entry.seq);
            }
        }
        dead.len()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries where the local side accepted the session.
    pub fn accepted_len(&self) -> usize {
        self.entries.values().filter(|e| e.accepted).count()
    }

    /// Entries where the local side originated the session.
    pub fn originated_len(&self) -> usize {
        self.entries.values().filter(|e| e.originated).count()
    }
}

/// Outbound from a local client workload: identify both ends and attach
/// the SACL ID pair.
///
/// The client is identified by (source ip, LID read from Hop Limit), the
/// server by (destination ip, port). A conntrack hit is authoritative for
/// packets of an already-tracked session. On success the Hop Limit is
/// reset to the default and the session is recorded.
pub fn egress_client(
    tables: &GatewayTables,
    conntrack: &mut ConntrackTable,
    pkt: &SaclPacket,
    now: u64,
) -> Verdict {
    let mut out = pkt.clone();
    out.hop_limit = DEFAULT_HOP_LIMIT;

    if let Ok(ft) = pkt.five_tuple() {
        match conntrack.lookup(&ft, now) {
            Some(hit) if hit.originated => {
                out.client_sacl = hit.pair.0;
                out.server_sacl = hit.pair.1;
                conntrack.record(&ft, hit.pair, now, true, false);
                return Verdict::Pass(out);
            }
            _ => {}
        }
    }

    let lid = read_lid(pkt.hop_limit);
    let Some(&client) = tables.client_map.get(&(pkt.src_ip, lid)) else {
        return match tables.default_action {
            DefaultAction::Allow => Verdict::Pass(out),
            DefaultAction::Deny => Verdict::Drop(DropReason::NoClientMapping),
        };
    };
    let Some(&server) = tables.server_map.get(&(pkt.dst_ip, pkt.dst_port)) else {
        return match tables.default_action {
            DefaultAction::Allow => Verdict::Pass(out),
            DefaultAction::Deny => Verdict::Drop(DropReason::NoServerMapping),
        };
    };

    out.client_sacl = client;
    out.server_sacl = server;
    if let Ok(ft) = pkt.five_tuple() {
        conntrack.record(&ft, (client, server), now, true, false);
    }
    Verdict::Pass(out)
}

/// Inbound to a local server workload: enforce the filter rules, track
/// the session, strip IDs before delivery.
///
/// A conntrack match counts as established only if this gateway accepted
/// the session; an entry recorded by local egress does not admit inbound
/// packets on its own.
pub fn ingress_server(
    tables: &GatewayTables,
    conntrack: &mut ConntrackTable,
    pkt: &SaclPacket,
    now: u64,
) -> Verdict {
    if pkt.has_ids() && tables.filter_rules.contains(&pkt.id_pair()) {
        if let Ok(ft) = pkt.five_tuple() {
            conntrack.record(&ft, pkt.id_pair(), now, false, true);
        }
        return Verdict::Pass(pkt.stripped());
    }
    if let Ok(ft) = pkt.five_tuple() {
        match conntrack.lookup(&ft, now) {
            Some(hit) if hit.accepted => return Verdict::Pass(pkt.stripped()),
            _ => {}
        }
    }
    match tables.default_action {
        DefaultAction::Allow => Verdict::Pass(pkt.stripped()),
        DefaultAction::Deny => Verdict::Drop(DropReason::NoMatchingRule),
    }
}

/// Reply from a local server workload: restore the session's ID pair
/// from conntrack.
pub fn egress_server(
    tables: &GatewayTables,
    conntrack: &mut ConntrackTable,
    pkt: &SaclPacket,
    now: u64,
) -> Verdict {
    let mut out = pkt.clone();
    out.hop_limit = DEFAULT_HOP_LIMIT;
    let hit = pkt
        .five_tuple()
        .ok()
        .and_then(|ft| conntrack.lookup(&ft, now))
        .filter(|hit| hit.accepted);
    match hit {
        Some(hit) => {
            out.client_sacl = hit.pair.0;
            out.server_sacl = hit.pair.1;
            Verdict::Pass(out)
        }
        None => match tables.default_action {
            DefaultAction::Allow => Verdict::Pass(out),
            DefaultAction::Deny => Verdict::Drop(DropReason::NoConntrackEntry),
        },
    }
}

/// Reply arriving for a local client workload: only sessions this
/// gateway originated are delivered, stripped of their IDs.
pub fn ingress_client(
    tables: &GatewayTables,
    conntrack: &mut ConntrackTable,
    pkt: &SaclPacket,
    now: u64,
) -> Verdict {
    if let Ok(ft) = pkt.five_tuple() {
        match conntrack.lookup(&ft, now) {
            Some(hit) if hit.originated => return Verdict::Pass(pkt.stripped()),
            _ => {}
        }
    }
    match tables.default_action {
        DefaultAction::Allow => Verdict::Pass(pkt.stripped()),
        DefaultAction::Deny => Verdict::Drop(DropReason::NoConntrackEntry),
    }
}
