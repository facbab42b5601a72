//! Deterministic 3-tier CLOS fabric simulator.
//!
//! Topology: one ToR per rack, ToRs wired round-robin onto the leaves,
//! full leaf/spine mesh. Packets walk client gateway -> ToR -> leaf ->
//! spine -> leaf -> ToR -> server gateway; traffic between racks always
//! crosses exactly one spine, picked by a deterministic hash of the flow's
//! five-tuple. Switches never rewrite SACL IDs; they stamp priorities and,
//! in filter mode, drop pairs no rule admits.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::codec::{mark_lid, SaclPacket, DEFAULT_HOP_LIMIT};
use crate::controller::{ControllerState, DeviceRoster, DistributionPlan};
use crate::gateway::{
    egress_client, egress_server, ingress_client, ingress_server, ConntrackTable, GatewayTables,
    Verdict,
};
use crate::model::{
    FiveTuple, GatewayId, PolicyAction, Proto, Rule, SaclId, SwitchId, WorkloadId,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FabricError {
    #[error("every tier needs at least one device (got {0} for {1})")]
    ZeroCount(u32, &'static str),
    #[error("workload {0} is not placed on this fabric")]
    UnknownWorkload(WorkloadId),
    #[error("device {0} does not exist")]
    UnknownDevice(String),
    #[error("placement ({rack},{server},{vm}) is outside the topology")]
    PlacementOutsideTopology { rack: u32, server: u32, vm: u32 },
}

/// Counts per tier; every field must be at least one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TopologySpec {
    pub racks: u32,
    pub servers_per_rack: u32,
    pub vms_per_server: u32,
    pub leaves: u32,
    pub spines: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vm {
    pub id: u32,
    pub workloads: Vec<WorkloadId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Server {
    pub id: u32,
    pub vms: Vec<Vm>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rack {
    pub id: u32,
    pub servers: Vec<Server>,
}

/// The wired fabric: racks with one ToR each, leaves, spines.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    pub racks: Vec<Rack>,
    pub leaves: u32,
    pub spines: u32,
    /// ToR (by rack id) -> leaf it uplinks to.
    pub tor_uplink: BTreeMap<u32, u32>,
    /// Explicit leaf/spine adjacency; always the full mesh.
    pub leaf_spine_links: Vec<(u32, u32)>,
}

/// Builds a topology from tier counts; deterministic for equal specs.
pub fn build_topology(spec: TopologySpec) -> Result<Topology, FabricError> {
    for (count, name) in [
        (spec.racks, "racks"),
        (spec.servers_per_rack, "servers per rack"),
        (spec.vms_per_server, "VMs per server"),
        (spec.leaves, "leaves"),
        (spec.spines, "spines"),
    ] {
        if count == 0 {
            return Err(FabricError::ZeroCount(count, name));
        }
    }
    let racks = (0..spec.racks)
        .map(|rack| Rack {
            id: rack,
            servers: (0..spec.servers_per_rack)
                .map(|server| Server {
                    id: server,
                    vms: (0..spec.vms_per_server)
                        .map(|vm| Vm {
                            id: vm,
                            workloads: Vec::new(),
                        })
                        .collect(),
                })
                .collect(),
        })
        .collect();
    let tor_uplink = (0..spec.racks).map(|r| (r, r % spec.leaves)).collect();
    let mut leaf_spine_links = Vec::new();
    for leaf in 0..spec.leaves {
        for spine in 0..spec.spines {
            leaf_spine_links.push((leaf, spine));
        }
    }
    Ok(Topology {
        racks,
        leaves: spec.leaves,
        spines: spec.spines,
        tor_uplink,
        leaf_spine_links,
    })
}

impl Topology {
    pub fn contains(&self, rack: u32, server: u32, vm: u32) -> bool {
        self.racks
            .iter()
            .find(|r| r.id == rack)
            .and_then(|r| r.servers.iter().find(|s| s.id == server))
            .map(|s| s.vms.iter().any(|v| v.id == vm))
            .unwrap_or(false)
    }

    /// Every switch and gateway in the fabric, for plan distribution.
    pub fn roster(&self) -> DeviceRoster {
        let mut roster = DeviceRoster::default();
        for rack in &self.racks {
            roster.switches.insert(SwitchId::Tor(rack.id));
            for server in &rack.servers {
                roster.gateways.insert(GatewayId {
                    rack: rack.id,
                    server: server.id,
                });
            }
        }
        for leaf in 0..self.leaves {
            roster.switches.insert(SwitchId::Leaf(leaf));
        }
        for spine in 0..self.spines {
            roster.switches.insert(SwitchId::Spine(spine));
        }
        roster
    }

    /// Switch hops between two gateways for one flow, in walk order.
    ///
    /// Same server: none. Same rack: the ToR. Different racks: up through
    /// the source leaf, across one hash-picked spine, down through the
    /// destination leaf (the two leaves may coincide).
    pub fn path(&self, from: GatewayId, to: GatewayId, ft: &FiveTuple) -> Vec<SwitchId> {
        if from == to {
            return Vec::new();
        }
        if from.rack == to.rack {
            return vec![SwitchId::Tor(from.rack)];
        }
        let leaf_a = self.tor_uplink[&from.rack];
        let leaf_b = self.tor_uplink[&to.rack];
        let spine = ecmp_hash(ft) % u64::from(self.spines);
        vec![
            SwitchId::Tor(from.rack),
            SwitchId::Leaf(leaf_a),
            SwitchId::Spine(spine as u32),
            SwitchId::Leaf(leaf_b),
            SwitchId::Tor(to.rack),
        ]
    }
}

// FNV-1a over the tuple bytes: stable across runs and platforms, which
// keeps spine selection replayable.
fn ecmp_hash(ft: &FiveTuple) -> u64 {
    let mut hash = 0xcbf29ce484222325u64;
    let mut eat = |byte: u8| {
        hash ^= u64::from(byte);
        hash = hash.wrapping_mul(0x100000001b3);
    };
    for b in ft.src_ip.octets() {
        eat(b);
    }
    for b in ft.dst_ip.octets() {
        eat(b);
    }
    for b in ft.src_port.to_be_bytes() {
        eat(b);
    }
    for b in ft.dst_port.to_be_bytes() {
        eat(b);
    }
    eat(match ft.proto {
        Proto::Tcp => 6,
        Proto::Udp => 17,
    });
    hash
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FilterMode {
    /// Switches only stamp priorities.
    #[default]
    PriorityOnly,
    /// Switches also drop ID pairs no rule admits (legacy support).
    PriorityAndFilter,
}

/// Rule table installed on one switch.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SwitchTable {
    pub entries: BTreeMap<(SaclId, SaclId), Rule>,
    pub mode: FilterMode,
}

impl SwitchTable {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn priority_entries(&self) -> usize {
        self.entries
            .values()
            .filter(|r| r.action == PolicyAction::Priority)
            .count()
    }
}

/// Any hop a trace can mention.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum DeviceId {
    Switch(SwitchId),
    Gateway(GatewayId),
    Workload(WorkloadId),
}

impl fmt::Display for DeviceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DeviceId::Switch(s) => write!(f, "{s}"),
            DeviceId::Gateway(g) => write!(f, "{g}"),
            DeviceId::Workload(w) => write!(f, "wl:{w}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceAction {
    Forwarded,
    PrioritySet(u8),
    Dropped,
    IdAttached,
    IdStripped,
    Delivered,
}

impl fmt::Display for TraceAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TraceAction::Forwarded => f.write_str("forwarded"),
            TraceAction::PrioritySet(v) => write!(f, "priority_set {v}"),
            TraceAction::Dropped => f.write_str("dropped"),
            TraceAction::IdAttached => f.write_str("id_attached"),
            TraceAction::IdStripped => f.write_str("id_stripped"),
            TraceAction::Delivered => f.write_str("delivered"),
        }
    }
}

/// One step of a packet walk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEvent {
    pub hop: DeviceId,
    pub action: TraceAction,
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.hop, self.action)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Reply,
}

/// Result of one packet walk: the trace, the packet as it crossed the
/// fabric (after source-gateway egress), and the packet the destination
/// workload received when the walk ended in a delivery.
#[derive(Debug, Clone)]
pub struct SendOutcome {
    pub trace: Vec<TraceEvent>,
    pub in_fabric: Option<SaclPacket>,
    pub delivered: Option<SaclPacket>,
}

/// A unidirectional packet walk request between two placed workloads.
#[derive(Debug, Clone)]
pub struct FlowSpec {
    pub client: WorkloadId,
    pub server: WorkloadId,
    pub five_tuple: FiveTuple,
    /// Overrides the LID the source marks into Hop Limit (spoof testing).
    pub marked_lid: Option<u32>,
}

#[derive(Debug, Clone)]
struct Endpoint {
    gateway: GatewayId,
    lid: Option<u32>,
}

struct GatewayState {
    tables: GatewayTables,
    conntrack: ConntrackTable,
}

/// The running data plane: installed tables plus per-gateway conntrack.
pub struct Fabric {
    topology: Topology,
    switch_tables: BTreeMap<SwitchId, SwitchTable>,
    gateways: BTreeMap<GatewayId, GatewayState>,
    endpoints: BTreeMap<WorkloadId, Endpoint>,
    clock: u64,
}

// Conntrack sizing for simulation runs; generous so analytics see every
// live session.
const CONNTRACK_CAPACITY: usize = 1 << 20;
const CONNTRACK_TTL: u64 = 1 << 40;

impl Fabric {
    /// Wires the fabric for a controller state: places every workload,
    /// creates empty per-gateway conntracks, installs the given plan.
    pub fn new(
        topology: Topology,
        state: &ControllerState,
        plan: &DistributionPlan,
        mode: FilterMode,
    ) -> Result<Self, FabricError> {
        let mut fabric = Fabric {
            topology,
            switch_tables: BTreeMap::new(),
            gateways: BTreeMap::new(),
            endpoints: BTreeMap::new(),
            clock: 0,
        };
        for w in state.workloads() {
            let p = w.placement;
            if !fabric.topology.contains(p.rack, p.server, p.vm) {
                return Err(FabricError::PlacementOutsideTopology {
                    rack: p.rack,
                    server: p.server,
                    vm: p.vm,
                });
            }
            let rack = fabric
                .topology
                .racks
                .iter_mut()
                .find(|r| r.id == p.rack)
                .unwrap();
            let server = rack.servers.iter_mut().find(|s| s.id == p.server).unwrap();
            let vm = server.vms.iter_mut().find(|v| v.id == p.vm).unwrap();
            vm.workloads.push(w.workload_id.clone());
            fabric.endpoints.insert(
                w.workload_id.clone(),
                Endpoint {
                    gateway: w.gateway(),
                    lid: w.lid,
                },
            );
        }
        fabric.install(plan, mode);
        Ok(fabric)
    }

    /// Swaps in a new plan wholesale. Conntrack state survives, so
    /// established flows keep working across rule changes.
    pub fn install(&mut self, plan: &DistributionPlan, mode: FilterMode) {
        self.switch_tables = plan
            .switch_entries
            .iter()
            .map(|(&sw, rules)| {
                let entries = rules.iter().map(|r| (r.pair(), *r)).collect();
                (sw, SwitchTable { entries, mode })
            })
            .collect();
        for (&gw, tables) in &plan.gateway_entries {
            match self.gateways.get_mut(&gw) {
                Some(state) => state.tables = tables.clone(),
                None => {
                    self.gateways.insert(
                        gw,
                        GatewayState {
                            tables: tables.clone(),
                            conntrack: ConntrackTable::new(CONNTRACK_CAPACITY, CONNTRACK_TTL),
                        },
                    );
                }
            }
        }
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn advance_clock(&mut self, ticks: u64) {
        self.clock += ticks;
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    /// Concrete entries installed on a device right now: rules for a
    /// switch; both lookup maps plus live conntrack for a gateway.
    pub fn count_installed_entries(&self, device: &DeviceId) -> Result<usize, FabricError> {
        match device {
            DeviceId::Switch(sw) => self
                .switch_tables
                .get(sw)
                .map(SwitchTable::len)
                .ok_or_else(|| FabricError::UnknownDevice(sw.to_string())),
            DeviceId::Gateway(gw) => self
                .gateways
                .get(gw)
                .map(|g| g.tables.client_map.len() + g.tables.server_map.len() + g.conntrack.len())
                .ok_or_else(|| FabricError::UnknownDevice(gw.to_string())),
            DeviceId::Workload(w) => Err(FabricError::UnknownDevice(w.to_string())),
        }
    }

    /// Conntrack entries on a gateway where the local side accepted the
    /// session; the measured counterpart of the conntrack entry formula.
    pub fn accepted_conntrack_entries(&self, gw: GatewayId) -> Result<usize, FabricError> {
        self.gateways
            .get(&gw)
            .map(|g| g.conntrack.accepted_len())
            .ok_or_else(|| FabricError::UnknownDevice(gw.to_string()))
    }

    pub fn gateway_tables(&self, gw: GatewayId) -> Option<&GatewayTables> {
        self.gateways.get(&gw).map(|g| &g.tables)
    }

    pub fn spine_table(&self, spine: u32) -> Option<&SwitchTable> {
        self.switch_tables.get(&SwitchId::Spine(spine))
    }

    pub fn switch_tables(&self) -> impl Iterator<Item = (&SwitchId, &SwitchTable)> {
        self.switch_tables.iter()
    }

    fn endpoint(&self, id: &WorkloadId) -> Result<&Endpoint, FabricError> {
        self.endpoints
            .get(id)
            .ok_or_else(|| FabricError::UnknownWorkload(id.clone()))
    }

    /// Walks one packet through the fabric, producing the full trace.
    ///
    /// Forward packets originate at the client workload; replies at the
    /// server, restoring IDs from the server gateway's conntrack.
    pub fn send(
        &mut self,
        flow: &FlowSpec,
        direction: Direction,
    ) -> Result<Vec<TraceEvent>, FabricError> {
        self.send_detailed(flow, direction).map(|o| o.trace)
    }

    /// [`send`](Self::send) plus the packet as delivered to the
    /// destination workload, when it was delivered at all.
    pub fn send_detailed(
        &mut self,
        flow: &FlowSpec,
        direction: Direction,
    ) -> Result<SendOutcome, FabricError> {
        let client = self.endpoint(&flow.client)?.clone();
        let server = self.endpoint(&flow.server)?.clone();
        let now = self.clock;

        let (src_gw, dst_gw, ft, dest_workload) = match direction {
            Direction::Forward => (
                client.gateway,
                server.gateway,
                flow.five_tuple,
                flow.server.clone(),
            ),
            Direction::Reply => (
                server.gateway,
                client.gateway,
                flow.five_tuple.reversed(),
                flow.client.clone(),
            ),
        };

        let hop_limit = match direction {
            Direction::Forward => flow
                .marked_lid
                .or(client.lid)
                .map(mark_lid)
                .unwrap_or(DEFAULT_HOP_LIMIT),
            Direction::Reply => DEFAULT_HOP_LIMIT,
        };
        let pkt = SaclPacket {
            src_ip: ft.src_ip,
            dst_ip: ft.dst_ip,
            hop_limit,
            proto: ft.proto,
            src_port: ft.src_port,
            dst_port: ft.dst_port,
            client_sacl: SaclId::ABSENT,
            server_sacl: SaclId::ABSENT,
            payload_len: 0,
        };

        let mut trace = Vec::new();

        // Source gateway egress.
        let egress = {
            let gw = self
                .gateways
                .get_mut(&src_gw)
                .ok_or_else(|| FabricError::UnknownDevice(src_gw.to_string()))?;
            match direction {
                Direction::Forward => egress_client(&gw.tables, &mut gw.conntrack, &pkt, now),
                Direction::Reply => egress_server(&gw.tables, &mut gw.conntrack, &pkt, now),
            }
        };
        let pkt = match egress {
            Verdict::Pass(p) => {
                trace.push(TraceEvent {
                    hop: DeviceId::Gateway(src_gw),
                    action: if p.has_ids() {
                        TraceAction::IdAttached
                    } else {
                        TraceAction::Forwarded
                    },
                });
                p
            }
            Verdict::Drop(_) => {
                trace.push(TraceEvent {
                    hop: DeviceId::Gateway(src_gw),
                    action: TraceAction::Dropped,
                });
                return Ok(SendOutcome {
                    trace,
                    in_fabric: None,
                    delivered: None,
                });
            }
        };
        let in_fabric = Some(pkt.clone());

        // Fabric switches.
        for sw in self.topology.path(src_gw, dst_gw, &ft) {
            let table = self
                .switch_tables
                .get(&sw)
                .ok_or_else(|| FabricError::UnknownDevice(sw.to_string()))?;
            let entry = pkt
                .has_ids()
                .then(|| table.entries.get(&pkt.id_pair()))
                .flatten();
            if table.mode == FilterMode::PriorityAndFilter && entry.is_none() {
                trace.push(TraceEvent {
                    hop: DeviceId::Switch(sw),
                    action: TraceAction::Dropped,
                });
                return Ok(SendOutcome {
                    trace,
                    in_fabric,
                    delivered: None,
                });
            }
            let action = match entry {
                Some(rule) if rule.action == PolicyAction::Priority => {
                    TraceAction::PrioritySet(rule.value.unwrap_or(0))
                }
                _ => TraceAction::Forwarded,
            };
            trace.push(TraceEvent {
                hop: DeviceId::Switch(sw),
                action,
            });
        }

        // Destination gateway ingress.
        let ingress = {
            let gw = self
                .gateways
                .get_mut(&dst_gw)
                .ok_or_else(|| FabricError::UnknownDevice(dst_gw.to_string()))?;
            match direction {
                Direction::Forward => ingress_server(&gw.tables, &mut gw.conntrack, &pkt, now),
                Direction::Reply => ingress_client(&gw.tables, &mut gw.conntrack, &pkt, now),
            }
        };
        let delivered = match ingress {
            Verdict::Pass(delivered) => {
                trace.push(TraceEvent {
                    hop: DeviceId::Gateway(dst_gw),
                    action: TraceAction::IdStripped,
                });
                trace.push(TraceEvent {
                    hop: DeviceId::Workload(dest_workload),
                    action: TraceAction::Delivered,
                });
                Some(delivered)
            }
            Verdict::Drop(_) => {
                trace.push(TraceEvent {
                    hop: DeviceId::Gateway(dst_gw),
                    action: TraceAction::Dropped,
                });
                None
            }
        };
        Ok(SendOutcome {
            trace,
            in_fabric,
            delivered,
        })
    }

    /// Establishes a session without walking switches: gateway egress then
    /// gateway ingress. Equivalent to [`send`](Self::send) whenever switch
    /// filtering is off, and much cheaper for bulk connection setup.
    pub fn establish(&mut self, flow: &FlowSpec) -> Result<bool, FabricError> {
        let client = self.endpoint(&flow.client)?.clone();
        let server = self.endpoint(&flow.server)?.clone();
        let now = self.clock;
        let pkt = SaclPacket {
            src_ip: flow.five_tuple.src_ip,
            dst_ip: flow.five_tuple.dst_ip,
            hop_limit: flow
                .marked_lid
                .or(client.lid)
                .map(mark_lid)
                .unwrap_or(DEFAULT_HOP_LIMIT),
            proto: flow.five_tuple.proto,
            src_port: flow.five_tuple.src_port,
            dst_port: flow.five_tuple.dst_port,
            client_sacl: SaclId::ABSENT,
            server_sacl: SaclId::ABSENT,
            payload_len: 0,
        };
        let egress = {
            let gw = self
                .gateways
                .get_mut(&client.gateway)
                .ok_or_else(|| FabricError::UnknownDevice(client.gateway.to_string()))?;
            egress_client(&gw.tables, &mut gw.conntrack, &pkt, now)
        };
        let Verdict::Pass(pkt) = egress else {
            return Ok(false);
        };
        let ingress = {
            let gw = self
                .gateways
                .get_mut(&server.gateway)
                .ok_or_else(|| FabricError::UnknownDevice(server.gateway.to_string()))?;
            ingress_server(&gw.tables, &mut gw.conntrack, &pkt, now)
        };
        Ok(!ingress.is_drop())
    }
}

/// Renders a trace in the line-oriented text form used by golden tests:
/// `hop_index device action [value]`.
pub fn trace_lines(trace: &[TraceEvent]) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    for (i, event) in trace.iter().enumerate() {
        writeln!(out, "{i} {event}").unwrap();
    }
    out
}

/// Where the packet ended up: (delivered, final hop).
pub fn trace_outcome(trace: &[TraceEvent]) -> (bool, Option<&DeviceId>) {
    match trace.last() {
        Some(e) if e.action == TraceAction::Delivered => (true, Some(&e.hop)),
        Some(e) => (false, Some(&e.hop)),
        None => (false, None),
    }
}
