//! Built-in scenario generator for the standard sizing assumption: every
//! server runs 8 VMs of 16 workloads, services hold 15 workloads, each
//! service talks to 2 others with priority, and one connection is live
//! between every related workload pair. A scale factor alpha multiplies
//! the per-VM workload count, service membership, out-degree and
//! connection count (floor rounding, clamped to at least 1).
//!
//! One designated gateway — rack 0, server 0 — receives one workload of
//! every "local" service; the remaining workloads spread round-robin over
//! the other servers. Local service i chains to local service i+1 and to
//! its own foreign targets, and each local service is targeted by the
//! matching foreign sources, so the designated gateway sees exactly
//! `locals`, `locals * degree * membership` and the same again as its
//! three table sizes.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use acila::fabric::TopologySpec;
use acila::gateway::DefaultAction;
use acila::model::{
    LabelSet, Placement, Policy, PolicyAction, Selector, SelectorOp, Workload,
};

use crate::scenario::LoadedScenario;

const PRIORITY_VALUE: u8 = 7;
const LISTEN_PORT: u16 = 443;
const VMS_PER_SERVER: u32 = 8;
const SERVERS_PER_RACK: u32 = 6;

fn scaled(base: f64, alpha: f64) -> usize {
    ((base * alpha).floor() as usize).max(1)
}

/// Sizing knobs derived from alpha.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AssumptionParams {
    /// Local services (= workloads on the designated gateway).
    pub locals: usize,
    /// Workloads per service.
    pub membership: usize,
    /// Priority out-degree per local service.
    pub degree: usize,
    /// Connections per related workload pair.
    pub connections_per_pair: u64,
    /// Workloads per VM, for remote-server capacity.
    pub per_vm: usize,
}

impl AssumptionParams {
    pub fn for_alpha(alpha: f64) -> Self {
        AssumptionParams {
            locals: scaled(8.0 * 16.0, alpha),
            membership: scaled(15.0, alpha),
            degree: scaled(2.0, alpha),
            connections_per_pair: scaled(1.0, alpha) as u64,
            per_vm: scaled(16.0, alpha),
        }
    }

    /// The analytic table sizes expected on the designated gateway.
    pub fn expected_gateway_counts(&self) -> (u64, u64, u64) {
        let locals = self.locals as u64;
        let reach = locals * self.degree as u64 * self.membership as u64;
        let conntrack = reach * self.connections_per_pair;
        (locals, reach, conntrack)
    }
}

struct ServicePlan {
    name: String,
    members: Vec<String>,
}

/// Expands the assumption profile into a runnable scenario.
pub fn assumption_scenario(alpha: f64, seed: u64) -> LoadedScenario {
    let params = AssumptionParams::for_alpha(alpha);
    let n = params.locals;
    let m = params.membership;
    let d = params.degree;

    // Services: locals l0..l(n-1) and, per local, d-1 foreign targets.
    let mut services: Vec<ServicePlan> = Vec::new();
    for i in 0..n {
        services.push(ServicePlan {
            name: format!("l{i}"),
            members: (0..m).map(|j| format!("l{i}.{j}")).collect(),
        });
    }
    for i in 0..n {
        for k in 1..d {
            services.push(ServicePlan {
                name: format!("f{i}.{k}"),
                members: (0..m).map(|j| format!("f{i}.{k}.{j}")).collect(),
            });
        }
    }

    // Directed edges by service name: the local ring, local -> foreign,
    // and foreign -> local so every local service also accepts traffic.
    let mut edges: Vec<(String, String)> = Vec::new();
    for i in 0..n {
        if n >= 2 {
            edges.push((format!("l{i}"), format!("l{}", (i + 1) % n)));
        }
        for k in 1..d {
            edges.push((format!("l{i}"), format!("f{i}.{k}")));
            edges.push((format!("f{i}.{k}"), format!("l{}", (i + k) % n)));
        }
    }

    // Placements: the first member of every local service lands on the
    // designated gateway; everything else round-robins over the other
    // servers, in an order shuffled by the seed.
    let mut placements: BTreeMap<String, Placement> = BTreeMap::new();
    let mut remote: Vec<String> = Vec::new();
    for (i, service) in services.iter().enumerate() {
        for (j, member) in service.members.iter().enumerate() {
            if i < n && j == 0 {
                placements.insert(
                    member.clone(),
                    Placement {
                        rack: 0,
                        server: 0,
                        vm: (i as u32) % VMS_PER_SERVER,
                    },
                );
            } else {
                remote.push(member.clone());
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    remote.shuffle(&mut rng);
    let capacity = VMS_PER_SERVER as usize * params.per_vm;
    let remote_servers = remote.len().div_ceil(capacity);
    let total_servers = 1 + remote_servers as u32;
    for (slot, member) in remote.iter().enumerate() {
        let server_index = 1 + (slot / capacity) as u32;
        placements.insert(
            member.clone(),
            Placement {
                rack: server_index / SERVERS_PER_RACK,
                server: server_index % SERVERS_PER_RACK,
                vm: ((slot % capacity) / params.per_vm) as u32,
            },
        );
    }

    let topology_spec = TopologySpec {
        racks: total_servers.div_ceil(SERVERS_PER_RACK),
        servers_per_rack: SERVERS_PER_RACK,
        vms_per_server: VMS_PER_SERVER,
        leaves: 4,
        spines: 4,
    };

    // Workloads, every one of them a client and a server on port 443.
    let mut workloads = Vec::new();
    let mut ip_counter: u32 = 1;
    for service in &services {
        let labels = LabelSet::from_pairs([("svc", service.name.as_str())]).unwrap();
        for member in &service.members {
            let ip = format!("fd00::{:x}:{:x}", ip_counter >> 16, ip_counter & 0xffff)
                .parse()
                .unwrap();
            ip_counter += 1;
            workloads.push(
                Workload::new(
                    member.as_str(),
                    labels.clone(),
                    ip,
                    Some(LISTEN_PORT),
                    None,
                    placements[member],
                )
                .unwrap(),
            );
        }
    }

    let policies = edges
        .iter()
        .map(|(src, dst)| {
            Policy::new(
                format!("edge:{src}->{dst}"),
                vec![Selector::new("svc", SelectorOp::In, [src.as_str()]).unwrap()],
                vec![Selector::new("svc", SelectorOp::In, [dst.as_str()]).unwrap()],
                PolicyAction::Priority,
                Some(PRIORITY_VALUE),
            )
            .unwrap()
        })
        .collect();

    let by_name: BTreeMap<&str, &ServicePlan> =
        services.iter().map(|s| (s.name.as_str(), s)).collect();
    let mut connections = BTreeMap::new();
    for (src, dst) in &edges {
        for client in &by_name[src.as_str()].members {
            for server in &by_name[dst.as_str()].members {
                connections.insert(
                    (client.as_str().into(), server.as_str().into()),
                    params.connections_per_pair,
                );
            }
        }
    }

    LoadedScenario {
        topology_spec,
        default_action: DefaultAction::Deny,
        workloads,
        policies,
        connections,
        flows: Vec::new(),
        changes: Vec::new(),
    }
}
