//! Executes a loaded scenario end to end: build the fabric, register
//! everything, distribute, establish connections, cross-check analytic
//! entry counts against the concrete tables, replay traffic, then replay
//! the change script measuring plan diffs against the update formulas.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use acila::controller::{ControllerError, ControllerState};
use acila::entrymodel::{
    comparison_report, conventional_diff, conventional_update_counts, proposed_update_counts,
    Scenario, ScenarioChange, ScenarioError, UpdateReport,
};
use acila::fabric::{
    build_topology, trace_lines, trace_outcome, Direction, Fabric, FabricError, FilterMode,
    FlowSpec, TraceAction, TraceEvent,
};
use acila::model::{
    FiveTuple, LabelSet, ModelError, Policy, PolicyAction, Rule, SaclId, Selector, SelectorOp,
    SwitchId,
};

use crate::report::{ChangeReport, CrossCheck, FlowReport, RunReport};
use crate::scenario::{ChangeOp, FlowDecl, LoadedScenario};

/// Source ports for expanding connection declarations into sessions.
/// Flow declarations should stay below this range to avoid collisions.
const CONNECTION_SRC_PORT_BASE: u16 = 50000;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("validation: {0}")]
    Validation(String),
}

impl From<ControllerError> for RunError {
    fn from(e: ControllerError) -> Self {
        RunError::Validation(e.to_string())
    }
}

impl From<FabricError> for RunError {
    fn from(e: FabricError) -> Self {
        RunError::Validation(e.to_string())
    }
}

impl From<ScenarioError> for RunError {
    fn from(e: ScenarioError) -> Self {
        RunError::Validation(e.to_string())
    }
}

impl From<ModelError> for RunError {
    fn from(e: ModelError) -> Self {
        RunError::Validation(e.to_string())
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub filter_mode: FilterMode,
    pub strict_crosscheck: bool,
    pub seed: u64,
    /// Perturbs the named device's concrete count by one, to prove the
    /// cross-check trips. Device names as printed, e.g. `spine:0`.
    pub inject_fault: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            filter_mode: FilterMode::PriorityOnly,
            strict_crosscheck: true,
            seed: 0,
            inject_fault: None,
        }
    }
}

pub fn run(scenario: &LoadedScenario, cfg: &RunConfig) -> Result<RunReport, RunError> {
    let topology = build_topology(scenario.topology_spec)?;
    let mut state = ControllerState::new(topology.roster());
    state.set_default_action(scenario.default_action);
    for w in &scenario.workloads {
        state.register_workload(w.clone())?;
    }
    for p in &scenario.policies {
        state.upsert_policy(p.clone());
    }

    let plan = state.plan();
    let snapshot = Scenario::from_state(&state, &topology, scenario.connections.clone())?;
    let mut fabric = Fabric::new(topology.clone(), &state, &plan, cfg.filter_mode)?;

    // Realize the declared connections as sessions.
    for ((client, server), &count) in &scenario.connections {
        let client_wl = state
            .workload(client)
            .ok_or_else(|| RunError::Validation(format!("unknown workload {client}")))?;
        let server_wl = state
            .workload(server)
            .ok_or_else(|| RunError::Validation(format!("unknown workload {server}")))?;
        let dst_port = server_wl
            .listen_port
            .ok_or_else(|| RunError::Validation(format!("{server} has no listen port")))?;
        for k in 0..count {
            let flow = FlowSpec {
                client: client.clone(),
                server: server.clone(),
                five_tuple: FiveTuple::new(
                    client_wl.ip,
                    server_wl.ip,
                    CONNECTION_SRC_PORT_BASE + k as u16,
                    dst_port,
                    acila::model::Proto::Tcp,
                )?,
                marked_lid: None,
            };
            if !fabric.establish(&flow)? {
                return Err(RunError::Validation(format!(
                    "connection {client} -> {server} was not admitted by its own rules"
                )));
            }
        }
    }

    let mut entries = comparison_report(&snapshot);
    let crosschecks = cross_check(&state, &fabric, &entries, cfg);

    // Replay the declared traffic.
    let mut flows = Vec::new();
    for decl in &scenario.flows {
        flows.push(run_flow(&mut fabric, &state, decl, Direction::Forward)?);
        if decl.reply {
            flows.push(run_flow(&mut fabric, &state, decl, Direction::Reply)?);
        }
    }

    // Replay the change script, measuring each step.
    let mut changes = Vec::new();
    for op in &scenario.changes {
        let change = apply_change(&mut state, &topology, op)?;
        entries.updates.push(UpdateReport {
            label: change.label.clone(),
            elu: change.elu_measured,
            esu: change.esu_measured,
        });
        changes.push(change);
    }

    Ok(RunReport {
        seed: cfg.seed,
        entries,
        crosschecks,
        flows,
        changes,
    })
}

fn cross_check(
    state: &ControllerState,
    fabric: &Fabric,
    entries: &acila::entrymodel::EntryReport,
    cfg: &RunConfig,
) -> Vec<CrossCheck> {
    let mut rows = Vec::new();
    let fault = |device: &str, concrete: u64| -> u64 {
        match &cfg.inject_fault {
            Some(name) if name == device => concrete + 1,
            _ => concrete,
        }
    };

    for (sw, table) in fabric.switch_tables() {
        let SwitchId::Spine(_) = sw else { continue };
        let device = sw.to_string();
        let concrete = fault(&device, table.len() as u64);
        rows.push(CrossCheck {
            device,
            metric: "es".into(),
            analytic: entries.es,
            concrete,
            pass: concrete == entries.es,
        });
    }

    let reach = state.server_reach_counts();
    for (gw, counts) in &entries.gateways {
        let device = gw.to_string();
        let tables = fabric.gateway_tables(*gw).expect("gateway exists");
        let client_map = fault(&device, tables.client_map.len() as u64);
        rows.push(CrossCheck {
            device: device.clone(),
            metric: "escc".into(),
            analytic: counts.escc,
            concrete: client_map,
            pass: client_map == counts.escc,
        });
        let reach_count = fault(&device, reach.get(gw).copied().unwrap_or(0) as u64);
        rows.push(CrossCheck {
            device: device.clone(),
            metric: "escs".into(),
            analytic: counts.escs,
            // The formula is a no-overlap worst case; deduplicated tables
            // may be smaller, never larger.
            concrete: reach_count,
            pass: reach_count <= counts.escs,
        });
        let accepted = fault(
            &device,
            fabric.accepted_conntrack_entries(*gw).expect("gateway") as u64,
        );
        rows.push(CrossCheck {
            device,
            metric: "ess".into(),
            analytic: counts.ess,
            concrete: accepted,
            pass: accepted == counts.ess,
        });
    }
    rows
}

fn run_flow(
    fabric: &mut Fabric,
    state: &ControllerState,
    decl: &FlowDecl,
    direction: Direction,
) -> Result<FlowReport, RunError> {
    let client = state
        .workload(&decl.client)
        .ok_or_else(|| RunError::Validation(format!("unknown workload {}", decl.client)))?;
    let server = state
        .workload(&decl.server)
        .ok_or_else(|| RunError::Validation(format!("unknown workload {}", decl.server)))?;
    let flow = FlowSpec {
        client: decl.client.clone(),
        server: decl.server.clone(),
        five_tuple: FiveTuple::new(client.ip, server.ip, decl.src_port, decl.dst_port, decl.proto)?,
        marked_lid: decl.lid_override,
    };
    let trace = fabric.send(&flow, direction)?;
    Ok(flow_report(&decl.name, direction, &trace))
}

fn flow_report(name: &str, direction: Direction, trace: &[TraceEvent]) -> FlowReport {
    let (delivered, last) = trace_outcome(trace);
    FlowReport {
        name: name.to_string(),
        direction: match direction {
            Direction::Forward => "forward",
            Direction::Reply => "reply",
        },
        delivered,
        final_hop: last.map(|d| d.to_string()).unwrap_or_default(),
        priority_hops: trace
            .iter()
            .filter_map(|e| match e.action {
                TraceAction::PrioritySet(v) => Some((e.hop.to_string(), v)),
                _ => None,
            })
            .collect(),
        trace: trace_lines(trace),
    }
}

// Switch tables all hold exactly the compiled rule set, so measuring the
// spine plan never needs the gateway-table half of a full plan build.
fn spine_rules(state: &ControllerState) -> BTreeSet<Rule> {
    state.compiled_rules().into_iter().collect()
}

/// Applies one scripted change to the controller and measures it: the
/// proposed-model cost as the spine rule-set diff, the conventional cost
/// as the entry-set diff between the two snapshots. Where the op maps
/// onto an update formula the analytic value rides along for comparison.
fn apply_change(
    state: &mut ControllerState,
    topology: &acila::fabric::Topology,
    op: &ChangeOp,
) -> Result<ChangeReport, RunError> {
    let label = op.label();
    let before_rules = spine_rules(state);
    let before = Scenario::from_state(state, topology, BTreeMap::new())?;

    // Formula evaluation side: removals read the pre-change snapshot,
    // additions the post-change one (the costs are symmetric).
    enum FormulaOn {
        Pre(ScenarioChange),
        Post(ScenarioChange),
        None,
    }

    let formula = match op {
        ChangeOp::AddWorkload(w) => {
            let service = state.service_of(&w.labels).map(|s| s.sacl_id);
            state.register_workload(w.clone())?;
            match service {
                // Joining an existing populated service.
                Some(id) if before.service_size(id) > 0 => {
                    FormulaOn::Pre(ScenarioChange::AddWorkload { service: id })
                }
                // Re-populating a persisted empty service: its rules are
                // already installed, only per-workload entries appear.
                Some(id) => FormulaOn::Post(ScenarioChange::AddWorkload { service: id }),
                // First workload of a brand-new service: same cost as
                // removing that service from the post-change state.
                None => {
                    let id = state.service_of(&w.labels).unwrap().sacl_id;
                    FormulaOn::Post(ScenarioChange::RemoveService { service: id })
                }
            }
        }
        ChangeOp::RemoveWorkload(id) => {
            let change = ScenarioChange::RemoveWorkload {
                workload: id.clone(),
            };
            state.deregister_workload(id)?;
            FormulaOn::Pre(change)
        }
        ChangeOp::AddService { workloads } => {
            if state.service_of(&workloads[0].labels).is_some() {
                return Err(RunError::Validation(format!(
                    "{label}: a service with labels {} already exists; \
                     use add_workload to grow it",
                    workloads[0].labels
                )));
            }
            for w in workloads {
                state.register_workload(w.clone())?;
            }
            let id = state.service_of(&workloads[0].labels).unwrap().sacl_id;
            FormulaOn::Post(ScenarioChange::RemoveService { service: id })
        }
        ChangeOp::RemoveService { labels } => {
            let id = state
                .service_of(labels)
                .map(|s| s.sacl_id)
                .ok_or_else(|| RunError::Validation(format!("no service with labels {labels}")))?;
            state.remove_service(id)?;
            FormulaOn::Pre(ScenarioChange::RemoveService { service: id })
        }
        ChangeOp::AddPriority {
            client,
            server,
            value,
        } => {
            let (c, s) = resolve_priority_pair(state, client, server)?;
            require_pair_absent(&before_rules, c, s, &label)?;
            state.upsert_policy(priority_policy(client, server, Some(*value)));
            FormulaOn::Pre(ScenarioChange::UpsertPriority { client: c, server: s })
        }
        ChangeOp::RemovePriority { client, server } => {
            let (c, s) = resolve_priority_pair(state, client, server)?;
            state.remove_policy(&priority_policy_id(client, server))?;
            require_pair_absent(&spine_rules(state), c, s, &label)?;
            FormulaOn::Pre(ScenarioChange::RemovePriority { client: c, server: s })
        }
        ChangeOp::UpsertPolicy(p) => {
            state.upsert_policy(p.clone());
            FormulaOn::None
        }
        ChangeOp::RemovePolicy(id) => {
            state.remove_policy(id)?;
            FormulaOn::None
        }
    };

    let after_rules = spine_rules(state);
    let after = Scenario::from_state(state, topology, BTreeMap::new())?;
    let esu_measured = before_rules.symmetric_difference(&after_rules).count() as u64;
    let elu_measured = conventional_diff(&before, &after);

    let (elu_formula, esu_formula) = match formula {
        FormulaOn::Pre(change) => (
            Some(scaled_conventional(&before, &change)?),
            Some(proposed_update_counts(&before, &change)?),
        ),
        FormulaOn::Post(change) => (
            Some(scaled_conventional(&after, &change)?),
            Some(proposed_update_counts(&after, &change)?),
        ),
        FormulaOn::None => (None, None),
    };

    Ok(ChangeReport {
        label,
        elu_formula,
        elu_measured,
        esu_formula,
        esu_measured,
    })
}

/// Priority formulas are per direction; the conventional model installs
/// both directions of a pair, so measured diffs see double.
fn scaled_conventional(sc: &Scenario, change: &ScenarioChange) -> Result<u64, RunError> {
    let base = conventional_update_counts(sc, change)?;
    Ok(match change {
        ScenarioChange::UpsertPriority { .. } | ScenarioChange::RemovePriority { .. } => 2 * base,
        _ => base,
    })
}

fn priority_policy_id(client: &LabelSet, server: &LabelSet) -> String {
    format!("prio:{client}->{server}")
}

fn priority_policy(client: &LabelSet, server: &LabelSet, value: Option<u8>) -> Policy {
    let selectors = |labels: &LabelSet| -> Vec<Selector> {
        labels
            .iter()
            .map(|(k, v)| Selector::new(k, SelectorOp::In, [v]).unwrap())
            .collect()
    };
    Policy::new(
        priority_policy_id(client, server),
        selectors(client),
        selectors(server),
        PolicyAction::Priority,
        value.or(Some(0)),
    )
    .unwrap()
}

/// Resolves the two label sets to exactly one service each, so the
/// change maps onto the single-pair update formulas.
fn resolve_priority_pair(
    state: &ControllerState,
    client: &LabelSet,
    server: &LabelSet,
) -> Result<(SaclId, SaclId), RunError> {
    let resolve = |labels: &LabelSet| -> Result<SaclId, RunError> {
        let matches: Vec<SaclId> = state
            .services()
            .filter(|s| {
                labels
                    .iter()
                    .all(|(k, v)| s.labels.get(k) == Some(v))
            })
            .map(|s| s.sacl_id)
            .collect();
        match matches.as_slice() {
            [one] => Ok(*one),
            [] => Err(RunError::Validation(format!(
                "priority change matches no service for {labels}"
            ))),
            many => Err(RunError::Validation(format!(
                "priority change must target one service, {labels} matches {}",
                many.len()
            ))),
        }
    };
    Ok((resolve(client)?, resolve(server)?))
}

/// Single-pair formulas assume the pair is covered by exactly the edge
/// being changed, in the changed direction only.
fn require_pair_absent(
    rules: &BTreeSet<Rule>,
    client: SaclId,
    server: SaclId,
    label: &str,
) -> Result<(), RunError> {
    for rule in rules {
        if rule.pair() == (client, server) || rule.pair() == (server, client) {
            return Err(RunError::Validation(format!(
                "{label}: the service pair is already covered by a rule; \
                 single-pair update accounting needs a fresh pair"
            )));
        }
    }
    Ok(())
}

/// Every cross check and change comparison in one verdict.
pub fn all_checks_pass(report: &RunReport) -> bool {
    report.failures().is_empty() && report.change_failures().is_empty()
}
