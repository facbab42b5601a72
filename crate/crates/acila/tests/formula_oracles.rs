//! Randomized bounded scenarios: every closed-form entry count is checked
//! against a from-scratch enumeration oracle, and the update formulas
//! against set diffs of enumerated entries and plan diffs of compiled
//! rule tables.
//!
//! The oracle side works on a plain `Gen` description (services as plain
//! vectors, edges as index pairs) and never calls into the formula code.

use std::collections::{BTreeMap, BTreeSet};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use acila::controller::ControllerState;
use acila::entrymodel::{
    comparison_report, conventional_spine_entries, conventional_update_counts,
    gateway_entry_counts, proposed_spine_entries, proposed_update_counts, Scenario, ScenarioChange,
};
use acila::fabric::{build_topology, Fabric, FilterMode, FlowSpec, Topology, TopologySpec};
use acila::model::{
    FiveTuple, GatewayId, LabelSet, Placement, Policy, PolicyAction, Proto, Selector, SelectorOp,
    Workload, WorkloadId,
};

#[derive(Clone)]
struct GenWorkload {
    id: String,
    ip: std::net::Ipv6Addr,
    placement: Placement,
}

#[derive(Clone)]
struct Gen {
    topo: TopologySpec,
    /// services[i] is a vector of workloads; the service name is `s<i>`.
    services: Vec<Vec<GenWorkload>>,
    /// Directed edges as service indices; never self or anti-parallel.
    edges: BTreeSet<(usize, usize)>,
    /// (client workload, server workload, count); endpoints follow edges.
    connections: Vec<(String, String, u64)>,
}

const LISTEN_PORT: u16 = 443;

fn random_gen(rng: &mut ChaCha8Rng, non_overlapping: bool) -> Gen {
    let topo = TopologySpec {
        racks: rng.gen_range(1..=4),
        servers_per_rack: rng.gen_range(1..=4),
        vms_per_server: rng.gen_range(1..=2),
        leaves: rng.gen_range(1..=3),
        spines: rng.gen_range(1..=3),
    };
    let n_services = rng.gen_range(1..=6usize);
    let n_gateways = (topo.racks * topo.servers_per_rack) as usize;

    let mut services = Vec::new();
    let mut ip_counter = 1u16;
    let mut global = 0usize;
    for i in 0..n_services {
        let size = if non_overlapping {
            // Each gateway may hold at most one workload per service.
            rng.gen_range(1..=n_gateways.min(4))
        } else {
            rng.gen_range(1..=5)
        };
        let mut members = Vec::new();
        for k in 0..size {
            if services.iter().map(|s: &Vec<_>| s.len()).sum::<usize>() + members.len() >= 30 {
                break;
            }
            let placement = if non_overlapping {
                // Round-robin so co-located workloads come from distinct
                // services.
                let slot = (global % n_gateways) as u32;
                Placement {
                    rack: slot / topo.servers_per_rack,
                    server: slot % topo.servers_per_rack,
                    vm: 0,
                }
            } else {
                Placement {
                    rack: rng.gen_range(0..topo.racks),
                    server: rng.gen_range(0..topo.servers_per_rack),
                    vm: rng.gen_range(0..topo.vms_per_server),
                }
            };
            members.push(GenWorkload {
                id: format!("w{i}_{k}"),
                ip: format!("fd00::{ip_counter:x}").parse().unwrap(),
                placement,
            });
            ip_counter += 1;
            global += 1;
        }
        if members.is_empty() {
            break;
        }
        services.push(members);
    }
    let n_services = services.len();

    let mut edges = BTreeSet::new();
    if non_overlapping {
        // A line: out-degree and in-degree at most one, so reach sets of
        // co-located workloads never overlap.
        for i in 0..n_services.saturating_sub(1) {
            edges.insert((i, i + 1));
        }
    } else {
        let attempts = rng.gen_range(0..=(n_services * 2));
        for _ in 0..attempts {
            let a = rng.gen_range(0..n_services);
            let b = rng.gen_range(0..n_services);
            if a != b && !edges.contains(&(b, a)) {
                edges.insert((a, b));
            }
        }
    }

    let mut connections = Vec::new();
    let edge_vec: Vec<_> = edges.iter().copied().collect();
    if !edge_vec.is_empty() {
        for _ in 0..rng.gen_range(0..=20) {
            let (a, b) = edge_vec[rng.gen_range(0..edge_vec.len())];
            let client = &services[a][rng.gen_range(0..services[a].len())];
            let server = &services[b][rng.gen_range(0..services[b].len())];
            let count = rng.gen_range(1..=3u64);
            if connections
                .iter()
                .any(|(c, s, _)| c == &client.id && s == &server.id)
            {
                continue;
            }
            connections.push((client.id.clone(), server.id.clone(), count));
        }
    }

    Gen {
        topo,
        services,
        edges,
        connections,
    }
}

fn service_labels(i: usize) -> LabelSet {
    LabelSet::from_pairs([("svc", format!("s{i}").as_str())]).unwrap()
}

/// Builds the real stack for a Gen: controller with one priority policy
/// per edge, the fabric with established connections, and the analytic
/// scenario snapshot.
fn build_stack(gen: &Gen) -> (ControllerState, Topology, Fabric, Scenario) {
    let topology = build_topology(gen.topo).unwrap();
    let mut state = ControllerState::new(topology.roster());
    for (i, members) in gen.services.iter().enumerate() {
        for m in members {
            state
                .register_workload(
                    Workload::new(
                        m.id.as_str(),
                        service_labels(i),
                        m.ip,
                        Some(LISTEN_PORT),
                        None,
                        m.placement,
                    )
                    .unwrap(),
                )
                .unwrap();
        }
    }
    for &(a, b) in &gen.edges {
        state.upsert_policy(edge_policy(a, b));
    }
    let plan = state.plan();
    let mut fabric = Fabric::new(topology.clone(), &state, &plan, FilterMode::PriorityOnly).unwrap();

    let mut src_port = 20000u16;
    let mut connection_map = BTreeMap::new();
    for (client, server, count) in &gen.connections {
        let client_ip = state.workload(&WorkloadId::from(client.as_str())).unwrap().ip;
        let server_ip = state.workload(&WorkloadId::from(server.as_str())).unwrap().ip;
        for _ in 0..*count {
            let flow = FlowSpec {
                client: client.as_str().into(),
                server: server.as_str().into(),
                five_tuple: FiveTuple::new(client_ip, server_ip, src_port, LISTEN_PORT, Proto::Tcp)
                    .unwrap(),
                marked_lid: None,
            };
            src_port += 1;
            assert!(fabric.establish(&flow).unwrap(), "{client}->{server}");
        }
        connection_map.insert(
            (
                WorkloadId::from(client.as_str()),
                WorkloadId::from(server.as_str()),
            ),
            *count,
        );
    }
    let scenario = Scenario::from_state(&state, &topology, connection_map).unwrap();
    (state, topology, fabric, scenario)
}

fn edge_policy(a: usize, b: usize) -> Policy {
    Policy::new(
        format!("edge_{a}_{b}"),
        vec![Selector::new("svc", SelectorOp::In, [format!("s{a}")]).unwrap()],
        vec![Selector::new("svc", SelectorOp::In, [format!("s{b}")]).unwrap()],
        PolicyAction::Priority,
        Some(7),
    )
    .unwrap()
}

// ---------------------------------------------------------------------
// Oracles: independent enumerations straight off the Gen description.
// ---------------------------------------------------------------------

fn oracle_closure(gen: &Gen) -> BTreeSet<(usize, usize)> {
    let mut closure = gen.edges.clone();
    for &(a, b) in &gen.edges {
        closure.insert((b, a));
    }
    closure
}

/// Conventional entries: ordered workload pairs under the closure.
fn oracle_conventional_entries(gen: &Gen) -> BTreeSet<(String, String)> {
    let mut out = BTreeSet::new();
    for &(a, b) in &oracle_closure(gen) {
        for src in &gen.services[a] {
            for dst in &gen.services[b] {
                out.insert((src.id.clone(), dst.id.clone()));
            }
        }
    }
    out
}

/// Proposed spine entries: one per directed edge.
fn oracle_proposed_entries(gen: &Gen) -> BTreeSet<(usize, usize)> {
    gen.edges.clone()
}

fn oracle_gateway_counts(gen: &Gen, gw: GatewayId) -> (u64, u64, u64) {
    let local = |m: &GenWorkload| m.placement.rack == gw.rack && m.placement.server == gw.server;
    let mut escc = 0u64;
    let mut escs = 0u64;
    for (i, members) in gen.services.iter().enumerate() {
        for m in members {
            if !local(m) {
                continue;
            }
            escc += 1;
            for &(a, b) in &gen.edges {
                if a == i {
                    escs += gen.services[b].len() as u64;
                }
            }
        }
    }
    let mut ess = 0u64;
    for (_, server, count) in &gen.connections {
        let served_here = gen
            .services
            .iter()
            .flatten()
            .any(|m| &m.id == server && local(m));
        if served_here {
            ess += count;
        }
    }
    (escc, escs, ess)
}

#[test]
fn formulas_match_enumeration_oracles() {
    for seed in 0..60u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gen = random_gen(&mut rng, false);
        let (state, _topology, fabric, scenario) = build_stack(&gen);

        // Spine counts, both models.
        assert_eq!(
            conventional_spine_entries(&scenario),
            oracle_conventional_entries(&gen).len() as u64,
            "seed {seed} el"
        );
        assert_eq!(
            proposed_spine_entries(&scenario),
            oracle_proposed_entries(&gen).len() as u64,
            "seed {seed} es"
        );
        // The simulator holds exactly es entries on every spine.
        for spine in 0..gen.topo.spines {
            assert_eq!(
                fabric.spine_table(spine).unwrap().len() as u64,
                proposed_spine_entries(&scenario),
                "seed {seed} spine {spine}"
            );
        }

        // Gateway counts against both the oracle and the concrete tables.
        for gw in scenario.gateways() {
            let counts = gateway_entry_counts(&scenario, gw).unwrap();
            let (escc, escs, ess) = oracle_gateway_counts(&gen, gw);
            assert_eq!(counts.escc, escc, "seed {seed} {gw} escc");
            assert_eq!(counts.escs, escs, "seed {seed} {gw} escs");
            assert_eq!(counts.ess, ess, "seed {seed} {gw} ess");

            let tables = fabric.gateway_tables(gw).unwrap();
            assert_eq!(tables.client_map.len() as u64, counts.escc);
            assert!(
                (state.server_reach_entries(gw).unwrap() as u64) <= counts.escs,
                "seed {seed} {gw} reach exceeds worst case"
            );
            assert_eq!(
                fabric.accepted_conntrack_entries(gw).unwrap() as u64,
                counts.ess,
                "seed {seed} {gw} conntrack"
            );
        }

        // The reduction inequality, including its strict form.
        let report = comparison_report(&scenario);
        assert!(report.es <= report.el);
    }
}

#[test]
fn non_overlapping_scenarios_reach_escs_equality() {
    for seed in 0..30u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let gen = random_gen(&mut rng, true);
        let (state, _topology, _fabric, scenario) = build_stack(&gen);
        for gw in scenario.gateways() {
            let counts = gateway_entry_counts(&scenario, gw).unwrap();
            assert_eq!(
                state.server_reach_entries(gw).unwrap() as u64,
                counts.escs,
                "seed {seed} {gw}: worst case should be exact without overlap"
            );
        }
    }
}

// ---------------------------------------------------------------------
// Update counts: formula vs set diff (conventional) and plan diff
// (proposed).
// ---------------------------------------------------------------------

fn apply_gen_change(gen: &Gen, change: &GenChange) -> Gen {
    let mut out = gen.clone();
    match change {
        GenChange::AddWorkload { service } => {
            out.services[*service].push(GenWorkload {
                id: format!("w{service}_new"),
                ip: "fd00::ffff".parse().unwrap(),
                placement: Placement {
                    rack: 0,
                    server: 0,
                    vm: 0,
                },
            });
        }
        GenChange::RemoveWorkload { service, index } => {
            out.services[*service].remove(*index);
            let gone = &gen.services[*service][*index].id;
            out.connections.retain(|(c, s, _)| c != gone && s != gone);
        }
        GenChange::RemoveService { service } => {
            out.services[*service].clear();
            out.edges.retain(|&(a, b)| a != *service && b != *service);
            let gone: BTreeSet<&String> =
                gen.services[*service].iter().map(|m| &m.id).collect();
            out.connections
                .retain(|(c, s, _)| !gone.contains(c) && !gone.contains(s));
        }
        GenChange::AddEdge { client, server } => {
            out.edges.insert((*client, *server));
        }
        GenChange::RemoveEdge { client, server } => {
            out.edges.remove(&(*client, *server));
            out.connections.retain(|(c, s, _)| {
                let ci = gen
                    .services
                    .iter()
                    .position(|ms| ms.iter().any(|m| &m.id == c))
                    .unwrap();
                let si = gen
                    .services
                    .iter()
                    .position(|ms| ms.iter().any(|m| &m.id == s))
                    .unwrap();
                (ci, si) != (*client, *server)
            });
        }
    }
    out
}

enum GenChange {
    AddWorkload { service: usize },
    RemoveWorkload { service: usize, index: usize },
    RemoveService { service: usize },
    AddEdge { client: usize, server: usize },
    RemoveEdge { client: usize, server: usize },
}

fn pick_change(rng: &mut ChaCha8Rng, gen: &Gen) -> Option<GenChange> {
    let n = gen.services.len();
    for _ in 0..20 {
        match rng.gen_range(0..5) {
            0 => {
                return Some(GenChange::AddWorkload {
                    service: rng.gen_range(0..n),
                })
            }
            1 => {
                let service = rng.gen_range(0..n);
                if !gen.services[service].is_empty() {
                    return Some(GenChange::RemoveWorkload {
                        service,
                        index: rng.gen_range(0..gen.services[service].len()),
                    });
                }
            }
            2 => {
                return Some(GenChange::RemoveService {
                    service: rng.gen_range(0..n),
                })
            }
            3 => {
                if n >= 2 {
                    let a = rng.gen_range(0..n);
                    let b = rng.gen_range(0..n);
                    if a != b && !gen.edges.contains(&(a, b)) && !gen.edges.contains(&(b, a)) {
                        return Some(GenChange::AddEdge {
                            client: a,
                            server: b,
                        });
                    }
                }
            }
            _ => {
                if let Some(&(a, b)) = gen.edges.iter().choose(rng) {
                    return Some(GenChange::RemoveEdge {
                        client: a,
                        server: b,
                    });
                }
            }
        }
    }
    None
}

/// The scenario-level change mirroring a Gen change. Service ids follow
/// the `s<i>` name order, which is how `Scenario::new` assigns them when
/// indices stay below ten.
fn scenario_change(gen: &Gen, change: &GenChange, scenario: &Scenario) -> ScenarioChange {
    let id_of = |i: usize| {
        let member = &gen.services[i][0];
        scenario
            .service_of(&WorkloadId::from(member.id.as_str()))
            .unwrap()
    };
    match change {
        GenChange::AddWorkload { service } => ScenarioChange::AddWorkload {
            service: id_of(*service),
        },
        GenChange::RemoveWorkload { service, index } => ScenarioChange::RemoveWorkload {
            workload: WorkloadId::from(gen.services[*service][*index].id.as_str()),
        },
        GenChange::RemoveService { service } => ScenarioChange::RemoveService {
            service: id_of(*service),
        },
        GenChange::AddEdge { client, server } => ScenarioChange::UpsertPriority {
            client: id_of(*client),
            server: id_of(*server),
        },
        GenChange::RemoveEdge { client, server } => ScenarioChange::RemovePriority {
            client: id_of(*client),
            server: id_of(*server),
        },
    }
}

#[test]
fn update_formulas_match_set_and_plan_diffs() {
    let mut checked = 0;
    for seed in 0..80u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + seed);
        let gen = random_gen(&mut rng, false);
        if gen.services.iter().all(|s| s.is_empty()) {
            continue;
        }
        let Some(change) = pick_change(&mut rng, &gen) else {
            continue;
        };
        // Changes must target populated services to be expressible.
        if let GenChange::AddWorkload { service }
        | GenChange::RemoveService { service }
        | GenChange::RemoveWorkload { service, .. } = change
        {
            if gen.services[service].is_empty() {
                continue;
            }
        }
        if let GenChange::AddEdge { client, server } | GenChange::RemoveEdge { client, server } =
            change
        {
            if gen.services[client].is_empty() || gen.services[server].is_empty() {
                continue;
            }
        }

        let (state, _topology, _fabric, scenario) = build_stack(&gen);
        let sc_change = scenario_change(&gen, &change, &scenario);

        // Conventional: symmetric difference of enumerated entry sets.
        let before = oracle_conventional_entries(&gen);
        let after = oracle_conventional_entries(&apply_gen_change(&gen, &change));
        let set_diff = before.symmetric_difference(&after).count() as u64;
        let formula = conventional_update_counts(&scenario, &sc_change).unwrap();
        // Priority formulas are per direction; the conventional model
        // installs both directions of the pair.
        let formula = match sc_change {
            ScenarioChange::UpsertPriority { .. } | ScenarioChange::RemovePriority { .. } => {
                2 * formula
            }
            _ => formula,
        };
        assert_eq!(formula, set_diff, "seed {seed} conventional diff");

        // Proposed: plan diff on a spine, driven through the controller.
        let esu = proposed_update_counts(&scenario, &sc_change).unwrap();
        let spine_rules = |s: &ControllerState| -> BTreeSet<_> {
            s.plan().switch_rules().iter().copied().collect()
        };
        let before_rules = spine_rules(&state);
        let mut mutated = state.clone();
        apply_controller_change(&mut mutated, &gen, &change, &scenario);
        let after_rules = spine_rules(&mutated);
        let plan_diff = before_rules.symmetric_difference(&after_rules).count() as u64;
        assert_eq!(esu, plan_diff, "seed {seed} proposed plan diff");
        checked += 1;
    }
    assert!(checked >= 40, "only {checked} change scenarios exercised");
}

fn apply_controller_change(
    state: &mut ControllerState,
    gen: &Gen,
    change: &GenChange,
    scenario: &Scenario,
) {
    match change {
        GenChange::AddWorkload { service } => {
            state
                .register_workload(
                    Workload::new(
                        format!("w{service}_new"),
                        service_labels(*service),
                        "fd00::ffff".parse().unwrap(),
                        Some(LISTEN_PORT),
                        None,
                        Placement {
                            rack: 0,
                            server: 0,
                            vm: 0,
                        },
                    )
                    .unwrap(),
                )
                .unwrap();
        }
        GenChange::RemoveWorkload { service, index } => {
            state
                .deregister_workload(&WorkloadId::from(
                    gen.services[*service][*index].id.as_str(),
                ))
                .unwrap();
        }
        GenChange::RemoveService { service } => {
            let id = scenario
                .service_of(&WorkloadId::from(gen.services[*service][0].id.as_str()))
                .unwrap();
            state.remove_service(id).unwrap();
        }
        GenChange::AddEdge { client, server } => {
            state.upsert_policy(edge_policy(*client, *server));
        }
        GenChange::RemoveEdge { client, server } => {
            state
                .remove_policy(&format!("edge_{client}_{server}"))
                .unwrap();
        }
    }
}

#[test]
fn formulas_are_invariant_under_renaming_and_rack_permutation() {
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(3000 + seed);
        let gen = random_gen(&mut rng, false);
        let (_, _, _, scenario) = build_stack(&gen);

        // Renamed workloads, permuted racks.
        let mut renamed = gen.clone();
        let racks = renamed.topo.racks;
        for members in &mut renamed.services {
            for m in members {
                m.id = format!("renamed_{}", m.id);
                m.placement.rack = (m.placement.rack + 1) % racks;
            }
        }
        for c in &mut renamed.connections {
            c.0 = format!("renamed_{}", c.0);
            c.1 = format!("renamed_{}", c.1);
        }
        let (_, _, _, permuted) = build_stack(&renamed);

        assert_eq!(
            conventional_spine_entries(&scenario),
            conventional_spine_entries(&permuted)
        );
        assert_eq!(
            proposed_spine_entries(&scenario),
            proposed_spine_entries(&permuted)
        );
        // Gateway counts permute with the racks.
        let mut lhs: Vec<u64> = scenario
            .gateways()
            .into_iter()
            .map(|gw| gateway_entry_counts(&scenario, gw).unwrap().total())
            .collect();
        let mut rhs: Vec<u64> = permuted
            .gateways()
            .into_iter()
            .map(|gw| gateway_entry_counts(&permuted, gw).unwrap().total())
            .collect();
        lhs.sort_unstable();
        rhs.sort_unstable();
        assert_eq!(lhs, rhs);
    }
}

#[test]
fn churn_leaves_spine_plans_byte_identical() {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(4000 + seed);
        let gen = random_gen(&mut rng, false);
        if gen.services.is_empty() {
            continue;
        }
        let (mut state, _topology, _fabric, _scenario) = build_stack(&gen);
        let render = |s: &ControllerState| format!("{:?}", s.plan().switch_entries);
        let before = render(&state);
        state
            .register_workload(
                Workload::new(
                    "churn",
                    service_labels(0),
                    "fd00::fffe".parse().unwrap(),
                    Some(LISTEN_PORT),
                    None,
                    Placement {
                        rack: 0,
                        server: 0,
                        vm: 0,
                    },
                )
                .unwrap(),
            )
            .unwrap();
        assert_eq!(render(&state), before, "seed {seed}: add changed the plan");
        state.deregister_workload(&"churn".into()).unwrap();
        assert_eq!(render(&state), before, "seed {seed}: remove changed the plan");
    }
}
