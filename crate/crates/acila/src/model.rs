//! Domain types shared by the controller, gateways, fabric and analytics.
//!
//! Everything here is a plain value type: construction validates, after
//! which the values are immutable and safe to share across threads.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::net::Ipv6Addr;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("label key must not be empty or whitespace-only")]
    BlankLabelKey,
    #[error("label value for key {0:?} must not be empty or whitespace-only")]
    BlankLabelValue(String),
    #[error("duplicate label key {0:?}")]
    DuplicateLabelKey(String),
    #[error("selector values must not be empty")]
    EmptySelectorValues,
    #[error("policy {0:?} needs at least one selector on each side")]
    EmptySelectorList(String),
    #[error("policy {0:?}: priority value present iff action is priority")]
    PriorityValueMismatch(String),
    #[error("workload {0:?}: listen_port present iff kind is client_and_server")]
    ListenPortMismatch(String),
    #[error("port must be in 1..=65535")]
    InvalidPort,
    #[error("rule endpoints must be non-zero SACL IDs")]
    ZeroRuleEndpoint,
}

/// Globally unique identifier of a Service, carried in packets.
///
/// Zero is reserved to mean "no ID attached".
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct SaclId(pub u64);

impl SaclId {
    pub const ABSENT: SaclId = SaclId(0);

    pub fn is_present(self) -> bool {
        self.0 != 0
    }
}

impl fmt::Display for SaclId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A single key/value metadata pair assigned to a workload.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Label {
    key: String,
    value: String,
}

impl Label {
    pub fn new(key: impl Into<String>, value: impl Into<String>) -> Result<Self, ModelError> {
        let key = key.into();
        let value = value.into();
        if key.trim().is_empty() {
            return Err(ModelError::BlankLabelKey);
        }
        if value.trim().is_empty() {
            return Err(ModelError::BlankLabelValue(key));
        }
        Ok(Label { key, value })
    }

    pub fn key(&self) -> &str {
        &self.key
    }

    pub fn value(&self) -> &str {
        &self.value
    }
}

/// A set of labels, unique by key, in canonical (sorted) order.
///
/// Equality is order-independent: two sets built from the same labels in
/// any insertion order compare equal.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct LabelSet {
    labels: BTreeMap<String, String>,
}

impl LabelSet {
    pub fn new(labels: impl IntoIterator<Item = Label>) -> Result<Self, ModelError> {
        let mut map = BTreeMap::new();
        for label in labels {
            if map.insert(label.key.clone(), label.value).is_some() {
                return Err(ModelError::DuplicateLabelKey(label.key));
            }
        }
        Ok(LabelSet { labels: map })
    }

    /// Convenience constructor from `(key, value)` pairs.
    pub fn from_pairs<'a>(
        pairs: impl IntoIterator<Item = (&'a str, &'a str)>,
    ) -> Result<Self, ModelError> {
        Self::new(
            pairs
                .into_iter()
                .map(|(k, v)| Label::new(k, v))
                .collect::<Result<Vec<_>, _>>()?,
        )
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.labels.get(key).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.labels.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

impl fmt::Display for LabelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        write!(f, "{{")?;
        for (k, v) in &self.labels {
            if !first {
                write!(f, ", ")?;
            }
            write!(f, "{k}:{v}")?;
            first = false;
        }
        write!(f, "}}")
    }
}

/// The label-set equivalence class of workloads, keyed by its SACL ID.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Service {
    pub sacl_id: SaclId,
    pub labels: LabelSet,
}

/// Opaque workload identifier.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct WorkloadId(pub String);

impl WorkloadId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl From<&str> for WorkloadId {
    fn from(s: &str) -> Self {
        WorkloadId(s.to_string())
    }
}

impl fmt::Display for WorkloadId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Where a workload runs: one VM on one physical server in one rack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Placement {
    pub rack: u32,
    pub server: u32,
    pub vm: u32,
}

impl Placement {
    pub fn gateway(&self) -> GatewayId {
        GatewayId {
            rack: self.rack,
            server: self.server,
        }
    }
}

/// Identifies the SACL gateway attached to one physical server.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GatewayId {
    pub rack: u32,
    pub server: u32,
}

impl fmt::Display for GatewayId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "gw:{}.{}", self.rack, self.server)
    }
}

/// Identifies a fabric switch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SwitchId {
    Tor(u32),
    Leaf(u32),
    Spine(u32),
}

impl fmt::Display for SwitchId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SwitchId::Tor(i) => write!(f, "tor:{i}"),
            SwitchId::Leaf(i) => write!(f, "leaf:{i}"),
            SwitchId::Spine(i) => write!(f, "spine:{i}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum WorkloadKind {
    ClientOnly,
    ClientAndServer,
}

/// An identified unit of running software with labels and network locators.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Workload {
    pub workload_id: WorkloadId,
    pub labels: LabelSet,
    pub kind: WorkloadKind,
    pub ip: Ipv6Addr,
    pub listen_port: Option<u16>,
    pub lid: Option<u32>,
    pub placement: Placement,
}

impl Workload {
    /// Validates the kind/listen_port coupling: a workload listens iff it
    /// is client_and_server.
    pub fn new(
        workload_id: impl Into<WorkloadId>,
        labels: LabelSet,
        ip: Ipv6Addr,
        listen_port: Option<u16>,
        lid: Option<u32>,
        placement: Placement,
    ) -> Result<Self, ModelError> {
        let workload_id = workload_id.into();
        if listen_port == Some(0) {
            return Err(ModelError::InvalidPort);
        }
        let kind = match listen_port {
            Some(_) => WorkloadKind::ClientAndServer,
            None => WorkloadKind::ClientOnly,
        };
        Ok(Workload {
            workload_id,
            labels,
            kind,
            ip,
            listen_port,
            lid,
            placement,
        })
    }

    pub fn is_server(&self) -> bool {
        self.kind == WorkloadKind::ClientAndServer
    }

    pub fn gateway(&self) -> GatewayId {
        self.placement.gateway()
    }
}

impl From<String> for WorkloadId {
    fn from(s: String) -> Self {
        WorkloadId(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SelectorOp {
    In,
    NotIn,
}

/// One ABAC predicate over a label key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Selector {
    pub key: String,
    pub op: SelectorOp,
    pub values: BTreeSet<String>,
}

impl Selector {
    pub fn new(
        key: impl Into<String>,
        op: SelectorOp,
        values: impl IntoIterator<Item = impl Into<String>>,
    ) -> Result<Self, ModelError> {
        let values: BTreeSet<String> = values.into_iter().map(Into::into).collect();
        if values.is_empty() {
            return Err(ModelError::EmptySelectorValues);
        }
        Ok(Selector {
            key: key.into(),
            op,
            values,
        })
    }

    /// Whether this single selector holds for `labels`.
    ///
    /// `in` holds iff the key maps to one of the values; `not_in` holds
    /// iff it does not, and a missing key satisfies `not_in`.
    pub fn matches(&self, labels: &LabelSet) -> bool {
        let hit = labels
            .get(&self.key)
            .map(|v| self.values.contains(v))
            .unwrap_or(false);
        match self.op {
            SelectorOp::In => hit,
            SelectorOp::NotIn => !hit,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PolicyAction {
    Allow,
    Priority,
}

impl fmt::Display for PolicyAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicyAction::Allow => f.write_str("allow"),
            PolicyAction::Priority => f.write_str("priority"),
        }
    }
}

/// An ABAC statement: selector pair plus action, optionally a priority value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Policy {
    pub policy_id: String,
    pub client_selectors: Vec<Selector>,
    pub server_selectors: Vec<Selector>,
    pub action: PolicyAction,
    pub value: Option<u8>,
}

impl Policy {
    pub fn new(
        policy_id: impl Into<String>,
        client_selectors: Vec<Selector>,
        server_selectors: Vec<Selector>,
        action: PolicyAction,
        value: Option<u8>,
    ) -> Result<Self, ModelError> {
        let policy_id = policy_id.into();
        if client_selectors.is_empty() || server_selectors.is_empty() {
            return Err(ModelError::EmptySelectorList(policy_id));
        }
        if (action == PolicyAction::Priority) != value.is_some() {
            return Err(ModelError::PriorityValueMismatch(policy_id));
        }
        Ok(Policy {
            policy_id,
            client_selectors,
            server_selectors,
            action,
            value,
        })
    }
}

/// A compiled policy: one `(client Service, server Service, value)` entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Rule {
    pub client: SaclId,
    pub server: SaclId,
    pub action: PolicyAction,
    pub value: Option<u8>,
}

impl Rule {
    pub fn new(
        client: SaclId,
        server: SaclId,
        action: PolicyAction,
        value: Option<u8>,
    ) -> Result<Self, ModelError> {
        if !client.is_present() || !server.is_present() {
            return Err(ModelError::ZeroRuleEndpoint);
        }
        Ok(Rule {
            client,
            server,
            action,
            value,
        })
    }

    pub fn pair(&self) -> (SaclId, SaclId) {
        (self.client, self.server)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Proto {
    Tcp,
    Udp,
}

impl fmt::Display for Proto {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Proto::Tcp => f.write_str("tcp"),
            Proto::Udp => f.write_str("udp"),
        }
    }
}

/// Connection key: the classic 5-tuple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FiveTuple {
    pub src_ip: Ipv6Addr,
    pub dst_ip: Ipv6Addr,
    pub src_port: u16,
    pub dst_port: u16,
    pub proto: Proto,
}

impl FiveTuple {
    pub fn new(
        src_ip: Ipv6Addr,
        dst_ip: Ipv6Addr,
        src_port: u16,
        dst_port: u16,
        proto: Proto,
    ) -> Result<Self, ModelError> {
        if src_port == 0 || dst_port == 0 {
            return Err(ModelError::InvalidPort);
        }
        Ok(FiveTuple {
            src_ip,
            dst_ip,
            src_port,
            dst_port,
            proto,
        })
    }

    /// The same connection seen from the other direction.
    pub fn reversed(&self) -> FiveTuple {
        FiveTuple {
            src_ip: self.dst_ip,
            dst_ip: self.src_ip,
            src_port: self.dst_port,
            dst_port: self.src_port,
            proto: self.proto,
        }
    }
}

/// True iff every selector holds for `labels`; multiple selectors are ANDed.
pub fn labelset_matches(selectors: &[Selector], labels: &LabelSet) -> bool {
    selectors.iter().all(|s| s.matches(labels))
}
