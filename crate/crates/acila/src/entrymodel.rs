//! Closed-form entry-count model for both classification approaches, plus
//! the measurement utilities that validate the formulas against concrete
//! tables.
//!
//! The conventional approach keys entries on network identifiers, one per
//! ordered workload pair; because direction cannot be told apart, the
//! model works on the undirected closure of the priority graph (an edge
//! implies its reverse). The Service-based approach keys entries on SACL
//! ID pairs, one per directed edge, so workload churn leaves spine tables
//! untouched.
//!
//! A [`Scenario`] is a static snapshot: placed workloads, the Service
//! partition they induce, the directed Service graph, and live connection
//! counts per workload pair.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use thiserror::Error;

use crate::controller::ControllerState;
use crate::fabric::Topology;
use crate::model::{GatewayId, LabelSet, SaclId, Workload, WorkloadId};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScenarioError {
    #[error("duplicate workload {0}")]
    DuplicateWorkload(WorkloadId),
    #[error("workload {0} placed outside the topology")]
    PlacementOutsideTopology(WorkloadId),
    #[error("graph endpoint {0} is not a service of any workload")]
    UnknownGraphService(SaclId),
    #[error("self edges are excluded from the priority graph ({0})")]
    SelfEdge(SaclId),
    #[error("connection references unknown workload {0}")]
    UnknownConnectionWorkload(WorkloadId),
    #[error("connection {client} -> {server} has no graph edge between their services")]
    UnrelatedConnection {
        client: WorkloadId,
        server: WorkloadId,
    },
    #[error("connection target {0} has no listen port")]
    ConnectionToNonServer(WorkloadId),
    #[error("connection counts must be at least 1")]
    ZeroConnectionCount,
    #[error("unknown service {0}")]
    UnknownService(SaclId),
    #[error("unknown workload {0}")]
    UnknownWorkload(WorkloadId),
    #[error("unknown gateway {0}")]
    UnknownGateway(GatewayId),
    #[error("no edge {0} -> {1} in the priority graph")]
    UnknownEdge(SaclId, SaclId),
}

/// Static snapshot the formulas are evaluated on.
#[derive(Debug, Clone)]
pub struct Scenario {
    topology: Topology,
    workloads: BTreeMap<WorkloadId, Workload>,
    /// W_s: the partition of workloads induced by their label sets.
    members: BTreeMap<SaclId, BTreeSet<WorkloadId>>,
    service_of: BTreeMap<WorkloadId, SaclId>,
    /// Directed (client service, server service) pairs with entries.
    graph: BTreeSet<(SaclId, SaclId)>,
    /// Live connections per (client workload, server workload).
    connections: BTreeMap<(WorkloadId, WorkloadId), u64>,
}

/// What changes between two snapshots, for the update-count formulas.
///
/// Additions and removals are symmetric: the update cost of adding a
/// workload or service is the cost of removing it again, so addition is
/// evaluated with the formulas below on the snapshot that contains the
/// added object.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScenarioChange {
    /// A workload joins the given (existing) service.
    AddWorkload { service: SaclId },
    /// The given workload leaves its service.
    RemoveWorkload { workload: WorkloadId },
    /// A service leaves together with its workloads and edges.
    RemoveService { service: SaclId },
    /// A directed priority edge is added or removed. The formula value is
    /// per direction; the conventional model installs both directions.
    UpsertPriority { client: SaclId, server: SaclId },
    RemovePriority { client: SaclId, server: SaclId },
}

/// Per-gateway analytic entry counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct GatewayCounts {
    /// Client-identification entries: one per local workload.
    pub escc: u64,
    /// Server-identification entries, worst case (no overlap).
    pub escs: u64,
    /// Conntrack entries for sessions the local side accepted.
    pub ess: u64,
}

impl GatewayCounts {
    pub fn total(&self) -> u64 {
        self.escc + self.escs + self.ess
    }
}

/// One measured-vs-analytic update event, filled in by a scenario runner.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UpdateReport {
    pub label: String,
    pub elu: u64,
    pub esu: u64,
}

/// Every analytic quantity for one scenario.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EntryReport {
    pub el: u64,
    pub es: u64,
    pub gateways: BTreeMap<GatewayId, GatewayCounts>,
    pub updates: Vec<UpdateReport>,
}

impl EntryReport {
    /// Tabular text form, one row per device class and metric.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("device_class,metric,value\n");
        writeln!(out, "spine,el,{}", self.el).unwrap();
        writeln!(out, "spine,es,{}", self.es).unwrap();
        for (gw, counts) in &self.gateways {
            writeln!(out, "{gw},escc,{}", counts.escc).unwrap();
            writeln!(out, "{gw},escs,{}", counts.escs).unwrap();
            writeln!(out, "{gw},ess,{}", counts.ess).unwrap();
            writeln!(out, "{gw},es_g,{}", counts.total()).unwrap();
        }
        for update in &self.updates {
            writeln!(out, "spine,elu:{},{}", update.label, update.elu).unwrap();
            writeln!(out, "spine,esu:{},{}", update.label, update.esu).unwrap();
        }
        out
    }
}

impl Scenario {
    /// Builds a scenario with service IDs assigned 1.. in label-set order.
    pub fn new(
        topology: Topology,
        workloads: Vec<Workload>,
        graph: BTreeSet<(SaclId, SaclId)>,
        connections: BTreeMap<(WorkloadId, WorkloadId), u64>,
    ) -> Result<Self, ScenarioError> {
        let labelsets: BTreeSet<LabelSet> = workloads.iter().map(|w| w.labels.clone()).collect();
        let ids: BTreeMap<LabelSet, SaclId> = labelsets
            .into_iter()
            .enumerate()
            .map(|(i, labels)| (labels, SaclId(i as u64 + 1)))
            .collect();
        Self::with_service_ids(topology, workloads, &ids, graph, connections)
    }

    /// Builds a scenario from a controller state: every service becomes a
    /// partition member (services persisted across churn may be empty),
    /// and the graph is every compiled (client, server) rule pair.
    pub fn from_state(
        state: &ControllerState,
        topology: &Topology,
        connections: BTreeMap<(WorkloadId, WorkloadId), u64>,
    ) -> Result<Self, ScenarioError> {
        let workloads: Vec<Workload> = state.workloads().cloned().collect();
        let ids: BTreeMap<LabelSet, SaclId> = state
            .services()
            .map(|s| (s.labels.clone(), s.sacl_id))
            .collect();
        let graph = state.compiled_rules().iter().map(|r| r.pair()).collect();
        Self::with_service_ids(topology.clone(), workloads, &ids, graph, connections)
    }

    fn with_service_ids(
        topology: Topology,
        workloads: Vec<Workload>,
        ids: &BTreeMap<LabelSet, SaclId>,
        graph: BTreeSet<(SaclId, SaclId)>,
        connections: BTreeMap<(WorkloadId, WorkloadId), u64>,
    ) -> Result<Self, ScenarioError> {
        // Every declared service is a partition member, even when empty.
        let mut members: BTreeMap<SaclId, BTreeSet<WorkloadId>> =
            ids.values().map(|&id| (id, BTreeSet::new())).collect();
        let mut service_of = BTreeMap::new();
        let mut by_id = BTreeMap::new();
        for w in workloads {
            let p = w.placement;
            if !topology.contains(p.rack, p.server, p.vm) {
                return Err(ScenarioError::PlacementOutsideTopology(w.workload_id));
            }
            let service = ids[&w.labels];
            if service_of.insert(w.workload_id.clone(), service).is_some() {
                return Err(ScenarioError::DuplicateWorkload(w.workload_id));
            }
            members
                .entry(service)
                .or_default()
                .insert(w.workload_id.clone());
            by_id.insert(w.workload_id.clone(), w);
        }
        for &(client, server) in &graph {
            if client == server {
                return Err(ScenarioError::SelfEdge(client));
            }
            for end in [client, server] {
                if !members.contains_key(&end) {
                    return Err(ScenarioError::UnknownGraphService(end));
                }
            }
        }
        for ((client, server), &count) in &connections {
            if count == 0 {
                return Err(ScenarioError::ZeroConnectionCount);
            }
            for end in [client, server] {
                if !service_of.contains_key(end) {
                    return Err(ScenarioError::UnknownConnectionWorkload(end.clone()));
                }
            }
            if by_id[server].listen_port.is_none() {
                return Err(ScenarioError::ConnectionToNonServer(server.clone()));
            }
            let edge = (service_of[client], service_of[server]);
            if !graph.contains(&edge) {
                return Err(ScenarioError::UnrelatedConnection {
                    client: client.clone(),
                    server: server.clone(),
                });
            }
        }
        Ok(Scenario {
            topology,
            workloads: by_id,
            members,
            service_of,
            graph,
            connections,
        })
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn workloads(&self) -> impl Iterator<Item = &Workload> {
        self.workloads.values()
    }

    pub fn graph(&self) -> &BTreeSet<(SaclId, SaclId)> {
        &self.graph
    }

    pub fn connections(&self) -> &BTreeMap<(WorkloadId, WorkloadId), u64> {
        &self.connections
    }

    pub fn service_of(&self, w: &WorkloadId) -> Option<SaclId> {
        self.service_of.get(w).copied()
    }

    pub fn service_size(&self, s: SaclId) -> u64 {
        self.members.get(&s).map(|m| m.len() as u64).unwrap_or(0)
    }

    pub fn services(&self) -> impl Iterator<Item = SaclId> + '_ {
        self.members.keys().copied()
    }

    pub fn gateways(&self) -> Vec<GatewayId> {
        let mut out = Vec::new();
        for rack in &self.topology.racks {
            for server in &rack.servers {
                out.push(GatewayId {
                    rack: rack.id,
                    server: server.id,
                });
            }
        }
        out
    }

    /// The undirected closure the conventional model works on: every edge
    /// plus its reverse.
    pub fn symmetrized_graph(&self) -> BTreeSet<(SaclId, SaclId)> {
        let mut closure = self.graph.clone();
        for &(a, b) in &self.graph {
            closure.insert((b, a));
        }
        closure
    }

    /// Neighbor services of `s` in the undirected closure.
    fn symmetric_neighbors(&self, s: SaclId) -> BTreeSet<SaclId> {
        let mut out = BTreeSet::new();
        for &(a, b) in &self.graph {
            if a == s {
                out.insert(b);
            }
            if b == s {
                out.insert(a);
            }
        }
        out
    }

    fn out_neighbors(&self, s: SaclId) -> impl Iterator<Item = SaclId> + '_ {
        self.graph
            .iter()
            .filter(move |(a, _)| *a == s)
            .map(|&(_, b)| b)
    }

    fn in_neighbors(&self, s: SaclId) -> impl Iterator<Item = SaclId> + '_ {
        self.graph
            .iter()
            .filter(move |(_, b)| *b == s)
            .map(|&(a, _)| a)
    }

    fn local_workloads(&self, gw: GatewayId) -> impl Iterator<Item = &Workload> {
        self.workloads.values().filter(move |w| w.gateway() == gw)
    }
}

/// Entries one network-identifier based spine switch needs: one per
/// ordered workload pair joined by an edge of the undirected closure.
pub fn conventional_spine_entries(sc: &Scenario) -> u64 {
    sc.symmetrized_graph()
        .iter()
        .map(|&(a, b)| sc.service_size(a) * sc.service_size(b))
        .sum()
}

/// Materializes the conventional entry set for diff-based measurement.
pub fn enumerate_conventional_entries(sc: &Scenario) -> BTreeSet<(WorkloadId, WorkloadId)> {
    let closure = sc.symmetrized_graph();
    let mut entries = BTreeSet::new();
    for &(a, b) in &closure {
        let (Some(srcs), Some(dsts)) = (sc.members.get(&a), sc.members.get(&b)) else {
            continue;
        };
        for src in srcs {
            for dst in dsts {
                entries.insert((src.clone(), dst.clone()));
            }
        }
    }
    entries
}

/// Size of the symmetric difference between the conventional entry sets
/// of two snapshots, without materializing them.
///
/// Entries under one service pair form a cross product, so the diff
/// decomposes per pair of the combined closures. Assumes workloads keep
/// their service between the snapshots, which holds for add/remove style
/// changes.
pub fn conventional_diff(before: &Scenario, after: &Scenario) -> u64 {
    let closure_before = before.symmetrized_graph();
    let closure_after = after.symmetrized_graph();
    let all_pairs: BTreeSet<(SaclId, SaclId)> =
        closure_before.union(&closure_after).copied().collect();
    let empty = BTreeSet::new();
    let members = |sc: &'_ Scenario, s: SaclId| -> BTreeSet<WorkloadId> {
        sc.members.get(&s).unwrap_or(&empty).clone()
    };
    let mut diff = 0u64;
    for &(a, b) in &all_pairs {
        let in_before = closure_before.contains(&(a, b));
        let in_after = closure_after.contains(&(a, b));
        let a_pre = members(before, a);
        let b_pre = members(before, b);
        let a_post = members(after, a);
        let b_post = members(after, b);
        let pre = (a_pre.len() * b_pre.len()) as u64;
        let post = (a_post.len() * b_post.len()) as u64;
        diff += match (in_before, in_after) {
            (true, true) => {
                let shared_a = a_pre.intersection(&a_post).count() as u64;
                let shared_b = b_pre.intersection(&b_post).count() as u64;
                pre + post - 2 * shared_a * shared_b
            }
            (true, false) => pre,
            (false, true) => post,
            (false, false) => 0,
        };
    }
    diff
}

/// Spine entries updated by one change under the conventional model.
///
/// Per-workload and per-service values cover both entry directions in the
/// undirected closure; the priority value is per direction (a change
/// installs or removes both directions, so measurements see double).
pub fn conventional_update_counts(
    sc: &Scenario,
    change: &ScenarioChange,
) -> Result<u64, ScenarioError> {
    let workload_value = |service: SaclId| -> u64 {
        let neighbor_total: u64 = sc
            .symmetric_neighbors(service)
            .into_iter()
            .map(|t| sc.service_size(t))
            .sum();
        2 * neighbor_total
    };
    match change {
        ScenarioChange::AddWorkload { service } => {
            if !sc.members.contains_key(service) {
                return Err(ScenarioError::UnknownService(*service));
            }
            Ok(workload_value(*service))
        }
        ScenarioChange::RemoveWorkload { workload } => {
            let service = sc
                .service_of(workload)
                .ok_or_else(|| ScenarioError::UnknownWorkload(workload.clone()))?;
            Ok(workload_value(service))
        }
        ScenarioChange::RemoveService { service } => {
            if !sc.members.contains_key(service) {
                return Err(ScenarioError::UnknownService(*service));
            }
            Ok(sc.service_size(*service) * workload_value(*service))
        }
        ScenarioChange::UpsertPriority { client, server }
        | ScenarioChange::RemovePriority { client, server } => {
            for end in [client, server] {
                if !sc.members.contains_key(end) {
                    return Err(ScenarioError::UnknownService(*end));
                }
            }
            Ok(sc.service_size(*client) * sc.service_size(*server))
        }
    }
}

/// Entries one SACL-ID based spine switch needs: the sum of out-degrees,
/// i.e. one per directed edge.
pub fn proposed_spine_entries(sc: &Scenario) -> u64 {
    sc.graph.len() as u64
}

/// Spine entries updated by one change under the proposed model.
pub fn proposed_update_counts(
    sc: &Scenario,
    change: &ScenarioChange,
) -> Result<u64, ScenarioError> {
    match change {
        ScenarioChange::AddWorkload { service } => {
            if !sc.members.contains_key(service) {
                return Err(ScenarioError::UnknownService(*service));
            }
            Ok(0)
        }
        ScenarioChange::RemoveWorkload { workload } => {
            if !sc.service_of.contains_key(workload) {
                return Err(ScenarioError::UnknownWorkload(workload.clone()));
            }
            Ok(0)
        }
        ScenarioChange::RemoveService { service } => {
            if !sc.members.contains_key(service) {
                return Err(ScenarioError::UnknownService(*service));
            }
            let out = sc.out_neighbors(*service).count() as u64;
            let into = sc.in_neighbors(*service).count() as u64;
            Ok(out + into)
        }
        ScenarioChange::UpsertPriority { client, server }
        | ScenarioChange::RemovePriority { client, server } => {
            for end in [client, server] {
                if !sc.members.contains_key(end) {
                    return Err(ScenarioError::UnknownService(*end));
                }
            }
            Ok(1)
        }
    }
}

/// The three per-gateway table sizes.
///
/// * `escc` — one client-identification entry per local workload.
/// * `escs` — server entries assuming the stated worst case: every local
///   workload contributes all workloads of every service it may reach, no
///   overlap discounted. Concrete tables deduplicate, so measurements are
///   bounded by this value.
/// * `ess` — conntrack entries: live connections into local workloads
///   along graph edges.
pub fn gateway_entry_counts(sc: &Scenario, gw: GatewayId) -> Result<GatewayCounts, ScenarioError> {
    let known = sc
        .topology
        .racks
        .iter()
        .any(|r| r.id == gw.rack && r.servers.iter().any(|s| s.id == gw.server));
    if !known {
        return Err(ScenarioError::UnknownGateway(gw));
    }
    let mut counts = GatewayCounts::default();
    for w in sc.local_workloads(gw) {
        counts.escc += 1;
        let service = sc.service_of[&w.workload_id];
        counts.escs += sc
            .out_neighbors(service)
            .map(|t| sc.service_size(t))
            .sum::<u64>();
    }
    for ((client, server), &count) in &sc.connections {
        let server_wl = &sc.workloads[server];
        if server_wl.gateway() != gw {
            continue;
        }
        let edge = (sc.service_of[client], sc.service_of[server]);
        if sc.graph.contains(&edge) {
            counts.ess += count;
        }
    }
    Ok(counts)
}

/// Computes every quantity for the scenario.
///
/// While every service on the graph has workloads, the Service-based
/// spine count never exceeds the conventional one, strictly so as soon as
/// any edge touches a service with two or more workloads; both facts are
/// rechecked on every call. A persisted empty service voids the bound for
/// its edges (the rule stays installed with nothing to classify), so the
/// check is skipped then.
pub fn comparison_report(sc: &Scenario) -> EntryReport {
    let el = conventional_spine_entries(sc);
    let es = proposed_spine_entries(sc);
    let all_populated = sc
        .graph
        .iter()
        .all(|&(a, b)| sc.service_size(a) >= 1 && sc.service_size(b) >= 1);
    if all_populated {
        assert!(es <= el, "entry model invariant violated: es={es} el={el}");
        let strict_expected = sc
            .graph
            .iter()
            .any(|&(a, b)| sc.service_size(a) >= 2 || sc.service_size(b) >= 2);
        if strict_expected {
            assert!(es < el, "strict reduction expected: es={es} el={el}");
        }
    }
    // Single pass over workloads and connections for all gateways at once.
    let mut gateways: BTreeMap<GatewayId, GatewayCounts> = sc
        .gateways()
        .into_iter()
        .map(|gw| (gw, GatewayCounts::default()))
        .collect();
    let reach_total: BTreeMap<SaclId, u64> = sc
        .members
        .keys()
        .map(|&s| {
            let total = sc.out_neighbors(s).map(|t| sc.service_size(t)).sum();
            (s, total)
        })
        .collect();
    for w in sc.workloads.values() {
        let counts = gateways.get_mut(&w.gateway()).expect("placed gateway");
        counts.escc += 1;
        counts.escs += reach_total[&sc.service_of[&w.workload_id]];
    }
    for ((client, server), &count) in &sc.connections {
        let edge = (sc.service_of[client], sc.service_of[server]);
        if sc.graph.contains(&edge) {
            let gw = sc.workloads[server].gateway();
            gateways.get_mut(&gw).expect("placed gateway").ess += count;
        }
    }
    EntryReport {
        el,
        es,
        gateways,
        updates: Vec::new(),
    }
}
