//! The scenario file format: a versioned TOML schema describing topology,
//! workloads, policies, traffic and a change-event script, validated into
//! model types.

use std::collections::{BTreeMap, BTreeSet};
use std::net::Ipv6Addr;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use acila::fabric::TopologySpec;
use acila::gateway::DefaultAction;
use acila::model::{
    LabelSet, ModelError, Placement, Policy, PolicyAction, Proto, Selector, SelectorOp, Workload,
    WorkloadId,
};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ScenarioFileError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error in {path}: {source}")]
    Parse {
        path: String,
        source: Box<toml::de::Error>,
    },
    #[error("{0}")]
    Invalid(String),
    #[error("{context}: {source}")]
    Model {
        context: String,
        source: ModelError,
    },
}

fn invalid(msg: impl Into<String>) -> ScenarioFileError {
    ScenarioFileError::Invalid(msg.into())
}

// ---------------------------------------------------------------------
// Raw serde view of the file.
// ---------------------------------------------------------------------

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    schema: u32,
    #[serde(default)]
    default_action: Option<RawDefaultAction>,
    topology: Option<RawTopology>,
    generate: Option<RawGenerate>,
    #[serde(default)]
    workloads: Vec<RawWorkload>,
    #[serde(default)]
    policies: Vec<RawPolicy>,
    #[serde(default)]
    connections: Vec<RawConnection>,
    #[serde(default)]
    flows: Vec<RawFlow>,
    #[serde(default)]
    changes: Vec<RawChange>,
}

#[derive(Debug, Deserialize, Clone, Copy)]
#[serde(rename_all = "snake_case")]
enum RawDefaultAction {
    Deny,
    Allow,
}

#[derive(Debug, Deserialize, Clone, Copy)]
#[serde(deny_unknown_fields)]
struct RawTopology {
    racks: u32,
    servers_per_rack: u32,
    #[serde(default = "default_vms")]
    vms_per_server: u32,
    leaves: u32,
    spines: u32,
}

fn default_vms() -> u32 {
    1
}

#[derive(Debug, Deserialize, Clone)]
#[serde(deny_unknown_fields)]
pub struct RawGenerate {
    pub profile: String,
    pub alpha: f64,
}

#[derive(Debug, Deserialize, Clone)]
#[serde(deny_unknown_fields)]
struct RawWorkload {
    id: String,
    labels: BTreeMap<String, String>,
    ip: String,
    #[serde(default)]
    port: Option<u16>,
    #[serde(default)]
    lid: Option<u32>,
    placement: [u32; 3],
}

#[derive(Debug, Deserialize, Clone)]
#[serde(deny_unknown_fields)]
struct RawSelector {
    key: String,
    op: RawOp,
    values: Vec<String>,
}

#[derive(Debug, Deserialize, Clone, Copy)]
#[serde(rename_all = "snake_case")]
enum RawOp {
    In,
    NotIn,
}

#[derive(Debug, Deserialize, Clone)]
#[serde(deny_unknown_fields)]
struct RawPolicy {
    id: String,
    action: RawAction,
    #[serde(default)]
    value: Option<u8>,
    client: Vec<RawSelector>,
    server: Vec<RawSelector>,
}

#[derive(Debug, Deserialize, Clone, Copy)]
#[serde(rename_all = "snake_case")]
enum RawAction {
    Allow,
    Priority,
}

#[derive(Debug, Deserialize, Clone)]
#[serde(deny_unknown_fields)]
struct RawConnection {
    client: String,
    server: String,
    #[serde(default = "default_count")]
    count: u64,
}

fn default_count() -> u64 {
    1
}

#[derive(Debug, Deserialize, Clone)]
#[serde(deny_unknown_fields)]
struct RawFlow {
    #[serde(default)]
    name: Option<String>,
    client: String,
    server: String,
    src_port: u16,
    #[serde(default)]
    dst_port: Option<u16>,
    #[serde(default)]
    proto: Option<RawProto>,
    #[serde(default)]
    reply: bool,
    /// Overrides the LID the source marks (spoof testing).
    #[serde(default)]
    lid: Option<u32>,
}

#[derive(Debug, Deserialize, Clone, Copy)]
#[serde(rename_all = "snake_case")]
enum RawProto {
    Tcp,
    Udp,
}

#[derive(Debug, Deserialize, Clone)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
enum RawChange {
    AddWorkload {
        workload: RawWorkload,
    },
    RemoveWorkload {
        id: String,
    },
    AddService {
        workloads: Vec<RawWorkload>,
    },
    RemoveService {
        labels: BTreeMap<String, String>,
    },
    AddPriority {
        client: BTreeMap<String, String>,
        server: BTreeMap<String, String>,
        value: u8,
    },
    RemovePriority {
        client: BTreeMap<String, String>,
        server: BTreeMap<String, String>,
    },
    UpsertPolicy {
        policy: RawPolicy,
    },
    RemovePolicy {
        id: String,
    },
}

// ---------------------------------------------------------------------
// Validated view.
// ---------------------------------------------------------------------

/// One traffic declaration, resolved against the workload table.
#[derive(Debug, Clone)]
pub struct FlowDecl {
    pub name: String,
    pub client: WorkloadId,
    pub server: WorkloadId,
    pub src_port: u16,
    pub dst_port: u16,
    pub proto: Proto,
    pub reply: bool,
    pub lid_override: Option<u32>,
}

/// One scripted mutation, applied in order after the initial snapshot.
#[derive(Debug, Clone)]
pub enum ChangeOp {
    AddWorkload(Workload),
    RemoveWorkload(WorkloadId),
    AddService { workloads: Vec<Workload> },
    RemoveService { labels: LabelSet },
    AddPriority { client: LabelSet, server: LabelSet, value: u8 },
    RemovePriority { client: LabelSet, server: LabelSet },
    UpsertPolicy(Policy),
    RemovePolicy(String),
}

impl ChangeOp {
    pub fn label(&self) -> String {
        match self {
            ChangeOp::AddWorkload(w) => format!("add_workload:{}", w.workload_id),
            ChangeOp::RemoveWorkload(id) => format!("remove_workload:{id}"),
            ChangeOp::AddService { workloads } => {
                format!("add_service:{}", workloads[0].labels)
            }
            ChangeOp::RemoveService { labels } => format!("remove_service:{labels}"),
            ChangeOp::AddPriority { client, server, .. } => {
                format!("add_priority:{client}->{server}")
            }
            ChangeOp::RemovePriority { client, server } => {
                format!("remove_priority:{client}->{server}")
            }
            ChangeOp::UpsertPolicy(p) => format!("upsert_policy:{}", p.policy_id),
            ChangeOp::RemovePolicy(id) => format!("remove_policy:{id}"),
        }
    }
}

/// A fully validated scenario, ready to run.
#[derive(Debug, Clone)]
pub struct LoadedScenario {
    pub topology_spec: TopologySpec,
    pub default_action: DefaultAction,
    pub workloads: Vec<Workload>,
    pub policies: Vec<Policy>,
    pub connections: BTreeMap<(WorkloadId, WorkloadId), u64>,
    pub flows: Vec<FlowDecl>,
    pub changes: Vec<ChangeOp>,
}

/// Loads and validates a scenario file. `scale` overrides the generator's
/// alpha; `seed` feeds the generator's placement shuffle.
pub fn load_scenario(
    path: &Path,
    scale: Option<f64>,
    seed: u64,
) -> Result<LoadedScenario, ScenarioFileError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioFileError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_scenario(&text, &path.display().to_string(), scale, seed)
}

/// Same as [`load_scenario`] for in-memory text (tests, stdin).
pub fn parse_scenario(
    text: &str,
    origin: &str,
    scale: Option<f64>,
    seed: u64,
) -> Result<LoadedScenario, ScenarioFileError> {
    let raw: RawScenario = toml::from_str(text).map_err(|source| ScenarioFileError::Parse {
        path: origin.to_string(),
        source: Box::new(source),
    })?;
    if raw.schema != SCHEMA_VERSION {
        return Err(invalid(format!(
            "unsupported schema version {} (expected {SCHEMA_VERSION})",
            raw.schema
        )));
    }

    if let Some(generate) = &raw.generate {
        if raw.topology.is_some()
            || !raw.workloads.is_empty()
            || !raw.policies.is_empty()
            || !raw.connections.is_empty()
        {
            return Err(invalid(
                "a [generate] scenario must not also declare topology, workloads, \
                 policies or connections",
            ));
        }
        if generate.profile != "assumption" {
            return Err(invalid(format!(
                "unknown generator profile {:?}",
                generate.profile
            )));
        }
        let alpha = scale.unwrap_or(generate.alpha);
        if !(alpha > 0.0) {
            return Err(invalid(format!("alpha must be positive, got {alpha}")));
        }
        let mut generated = crate::generate::assumption_scenario(alpha, seed);
        generated.default_action = convert_default_action(raw.default_action);
        extend_with_declared(&mut generated, &raw)?;
        return Ok(generated);
    }
    if scale.is_some() {
        return Err(invalid("--scale requires a [generate] scenario"));
    }

    let topo = raw
        .topology
        .ok_or_else(|| invalid("missing [topology] section"))?;
    let mut scenario = LoadedScenario {
        topology_spec: TopologySpec {
            racks: topo.racks,
            servers_per_rack: topo.servers_per_rack,
            vms_per_server: topo.vms_per_server,
            leaves: topo.leaves,
            spines: topo.spines,
        },
        default_action: convert_default_action(raw.default_action),
        workloads: Vec::new(),
        policies: Vec::new(),
        connections: BTreeMap::new(),
        flows: Vec::new(),
        changes: Vec::new(),
    };

    for (i, w) in raw.workloads.iter().enumerate() {
        let workload = convert_workload(w, &format!("workloads[{i}] (id={})", w.id))?;
        validate_placement(&scenario.topology_spec, &workload, &format!("workloads[{i}]"))?;
        scenario.workloads.push(workload);
    }
    let mut seen = BTreeSet::new();
    for w in &scenario.workloads {
        if !seen.insert(w.workload_id.clone()) {
            return Err(invalid(format!("duplicate workload id {}", w.workload_id)));
        }
    }
    for (i, p) in raw.policies.iter().enumerate() {
        scenario
            .policies
            .push(convert_policy(p, &format!("policies[{i}] (id={})", p.id))?);
    }
    for (i, c) in raw.connections.iter().enumerate() {
        let context = format!("connections[{i}]");
        let client = resolve_workload(&scenario.workloads, &c.client, &context)?;
        let server = resolve_workload(&scenario.workloads, &c.server, &context)?;
        if c.count == 0 {
            return Err(invalid(format!("{context}: count must be at least 1")));
        }
        if server.listen_port.is_none() {
            return Err(invalid(format!(
                "{context}: server {} has no listen port",
                c.server
            )));
        }
        let key = (client.workload_id.clone(), server.workload_id.clone());
        if scenario.connections.insert(key, c.count).is_some() {
            return Err(invalid(format!(
                "{context}: duplicate connection {} -> {}",
                c.client, c.server
            )));
        }
    }

    extend_with_declared(&mut scenario, &raw)?;
    Ok(scenario)
}

/// Flows and changes are resolved the same way for declared and generated
/// scenarios.
fn extend_with_declared(
    scenario: &mut LoadedScenario,
    raw: &RawScenario,
) -> Result<(), ScenarioFileError> {
    for (i, f) in raw.flows.iter().enumerate() {
        let context = format!("flows[{i}]");
        let client = resolve_workload(&scenario.workloads, &f.client, &context)?;
        let server = resolve_workload(&scenario.workloads, &f.server, &context)?;
        if f.src_port == 0 {
            return Err(invalid(format!("{context}: src_port must be nonzero")));
        }
        let dst_port = match f.dst_port.or(server.listen_port) {
            Some(p) if p > 0 => p,
            _ => {
                return Err(invalid(format!(
                    "{context}: no dst_port and server {} has no listen port",
                    f.server
                )))
            }
        };
        scenario.flows.push(FlowDecl {
            name: f.name.clone().unwrap_or_else(|| format!("flow{i}")),
            client: client.workload_id.clone(),
            server: server.workload_id.clone(),
            src_port: f.src_port,
            dst_port,
            proto: match f.proto.unwrap_or(RawProto::Tcp) {
                RawProto::Tcp => Proto::Tcp,
                RawProto::Udp => Proto::Udp,
            },
            reply: f.reply,
            lid_override: f.lid,
        });
    }

    for (i, c) in raw.changes.iter().enumerate() {
        let context = format!("changes[{i}]");
        let op = match c {
            RawChange::AddWorkload { workload } => {
                let w = convert_workload(workload, &context)?;
                validate_placement(&scenario.topology_spec, &w, &context)?;
                ChangeOp::AddWorkload(w)
            }
            RawChange::RemoveWorkload { id } => ChangeOp::RemoveWorkload(id.as_str().into()),
            RawChange::AddService { workloads } => {
                if workloads.is_empty() {
                    return Err(invalid(format!("{context}: add_service needs workloads")));
                }
                let converted: Vec<Workload> = workloads
                    .iter()
                    .map(|w| {
                        let w = convert_workload(w, &context)?;
                        validate_placement(&scenario.topology_spec, &w, &context)?;
                        Ok(w)
                    })
                    .collect::<Result<_, ScenarioFileError>>()?;
                let labels = converted[0].labels.clone();
                if converted.iter().any(|w| w.labels != labels) {
                    return Err(invalid(format!(
                        "{context}: add_service workloads must share one label set"
                    )));
                }
                ChangeOp::AddService {
                    workloads: converted,
                }
            }
            RawChange::RemoveService { labels } => ChangeOp::RemoveService {
                labels: convert_labels(labels, &context)?,
            },
            RawChange::AddPriority {
                client,
                server,
                value,
            } => ChangeOp::AddPriority {
                client: convert_labels(client, &context)?,
                server: convert_labels(server, &context)?,
                value: *value,
            },
            RawChange::RemovePriority { client, server } => ChangeOp::RemovePriority {
                client: convert_labels(client, &context)?,
                server: convert_labels(server, &context)?,
            },
            RawChange::UpsertPolicy { policy } => {
                ChangeOp::UpsertPolicy(convert_policy(policy, &context)?)
            }
            RawChange::RemovePolicy { id } => ChangeOp::RemovePolicy(id.clone()),
        };
        scenario.changes.push(op);
    }
    Ok(())
}

fn convert_default_action(raw: Option<RawDefaultAction>) -> DefaultAction {
    match raw {
        Some(RawDefaultAction::Allow) => DefaultAction::Allow,
        _ => DefaultAction::Deny,
    }
}

fn convert_labels(
    labels: &BTreeMap<String, String>,
    context: &str,
) -> Result<LabelSet, ScenarioFileError> {
    LabelSet::from_pairs(labels.iter().map(|(k, v)| (k.as_str(), v.as_str()))).map_err(|source| {
        ScenarioFileError::Model {
            context: context.to_string(),
            source,
        }
    })
}

fn convert_workload(raw: &RawWorkload, context: &str) -> Result<Workload, ScenarioFileError> {
    let labels = convert_labels(&raw.labels, context)?;
    let ip: Ipv6Addr = raw
        .ip
        .parse()
        .map_err(|e| invalid(format!("{context}: bad IPv6 address {:?}: {e}", raw.ip)))?;
    Workload::new(
        raw.id.as_str(),
        labels,
        ip,
        raw.port,
        raw.lid,
        Placement {
            rack: raw.placement[0],
            server: raw.placement[1],
            vm: raw.placement[2],
        },
    )
    .map_err(|source| ScenarioFileError::Model {
        context: context.to_string(),
        source,
    })
}

fn convert_policy(raw: &RawPolicy, context: &str) -> Result<Policy, ScenarioFileError> {
    let convert = |sel: &[RawSelector]| -> Result<Vec<Selector>, ScenarioFileError> {
        sel.iter()
            .map(|s| {
                Selector::new(
                    s.key.as_str(),
                    match s.op {
                        RawOp::In => SelectorOp::In,
                        RawOp::NotIn => SelectorOp::NotIn,
                    },
                    s.values.iter().map(String::as_str),
                )
                .map_err(|source| ScenarioFileError::Model {
                    context: context.to_string(),
                    source,
                })
            })
            .collect()
    };
    Policy::new(
        raw.id.as_str(),
        convert(&raw.client)?,
        convert(&raw.server)?,
        match raw.action {
            RawAction::Allow => PolicyAction::Allow,
            RawAction::Priority => PolicyAction::Priority,
        },
        raw.value,
    )
    .map_err(|source| ScenarioFileError::Model {
        context: context.to_string(),
        source,
    })
}

fn validate_placement(
    spec: &TopologySpec,
    w: &Workload,
    context: &str,
) -> Result<(), ScenarioFileError> {
    let p = w.placement;
    if p.rack >= spec.racks || p.server >= spec.servers_per_rack || p.vm >= spec.vms_per_server {
        return Err(invalid(format!(
            "{context}: placement ({},{},{}) outside topology ({} racks, {} servers, {} VMs)",
            p.rack, p.server, p.vm, spec.racks, spec.servers_per_rack, spec.vms_per_server
        )));
    }
    Ok(())
}

fn resolve_workload<'a>(
    workloads: &'a [Workload],
    id: &str,
    context: &str,
) -> Result<&'a Workload, ScenarioFileError> {
    workloads
        .iter()
        .find(|w| w.workload_id.as_str() == id)
        .ok_or_else(|| invalid(format!("{context}: unknown workload {id:?}")))
}
