//! Run reports and their serialized forms. Output is deterministic for a
//! given report: ordered maps everywhere, no timestamps.

use std::fmt::Write as _;

use acila::entrymodel::EntryReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Human,
    TraceLines,
}

impl std::str::FromStr for Format {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(Format::Csv),
            "human" => Ok(Format::Human),
            "trace-lines" => Ok(Format::TraceLines),
            other => Err(format!("unknown format {other:?}")),
        }
    }
}

/// One analytic-vs-concrete comparison.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CrossCheck {
    pub device: String,
    pub metric: String,
    pub analytic: u64,
    pub concrete: u64,
    pub pass: bool,
}

/// What happened to one declared flow in one direction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowReport {
    pub name: String,
    pub direction: &'static str,
    pub delivered: bool,
    pub final_hop: String,
    /// (device, priority value) for every hop that stamped a priority.
    pub priority_hops: Vec<(String, u8)>,
    /// Rendered trace, `hop_index device action [value]` per line.
    pub trace: String,
}

/// Measured and (where the change maps onto a formula) analytic update
/// counts for one scripted change.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChangeReport {
    pub label: String,
    pub elu_formula: Option<u64>,
    pub elu_measured: u64,
    pub esu_formula: Option<u64>,
    pub esu_measured: u64,
}

impl ChangeReport {
    pub fn pass(&self) -> bool {
        self.elu_formula.map_or(true, |f| f == self.elu_measured)
            && self.esu_formula.map_or(true, |f| f == self.esu_measured)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunReport {
    pub seed: u64,
    pub entries: EntryReport,
    pub crosschecks: Vec<CrossCheck>,
    pub flows: Vec<FlowReport>,
    pub changes: Vec<ChangeReport>,
}

impl RunReport {
    pub fn failures(&self) -> Vec<&CrossCheck> {
        self.crosschecks.iter().filter(|c| !c.pass).collect()
    }

    pub fn change_failures(&self) -> Vec<&ChangeReport> {
        self.changes.iter().filter(|c| !c.pass()).collect()
    }

    pub fn emit(&self, format: Format) -> String {
        match format {
            Format::Csv => self.entries.to_csv(),
            Format::Human => self.human(),
            Format::TraceLines => self.trace_lines(),
        }
    }

    fn human(&self) -> String {
        let mut out = String::new();
        writeln!(out, "== entry counts ==").unwrap();
        writeln!(out, "spine el {}", self.entries.el).unwrap();
        writeln!(out, "spine es {}", self.entries.es).unwrap();
        for (gw, counts) in &self.entries.gateways {
            writeln!(
                out,
                "{gw} escc {} escs {} ess {} es_g {}",
                counts.escc,
                counts.escs,
                counts.ess,
                counts.total()
            )
            .unwrap();
        }
        if !self.crosschecks.is_empty() {
            writeln!(out, "== cross checks ==").unwrap();
            for c in &self.crosschecks {
                writeln!(
                    out,
                    "{} {} analytic {} concrete {} {}",
                    c.device,
                    c.metric,
                    c.analytic,
                    c.concrete,
                    if c.pass { "ok" } else { "MISMATCH" }
                )
                .unwrap();
            }
        }
        if !self.flows.is_empty() {
            writeln!(out, "== flows ==").unwrap();
            for f in &self.flows {
                let hops = if f.priority_hops.is_empty() {
                    String::from("-")
                } else {
                    f.priority_hops
                        .iter()
                        .map(|(d, v)| format!("{d}={v}"))
                        .collect::<Vec<_>>()
                        .join(",")
                };
                writeln!(
                    out,
                    "{} {} {} at {} priority {}",
                    f.name,
                    f.direction,
                    if f.delivered { "delivered" } else { "dropped" },
                    f.final_hop,
                    hops
                )
                .unwrap();
            }
        }
        if !self.changes.is_empty() {
            writeln!(out, "== changes ==").unwrap();
            for c in &self.changes {
                let fmt_opt = |v: Option<u64>| match v {
                    Some(v) => v.to_string(),
                    None => String::from("-"),
                };
                writeln!(
                    out,
                    "{} elu formula {} measured {} esu formula {} measured {} {}",
                    c.label,
                    fmt_opt(c.elu_formula),
                    c.elu_measured,
                    fmt_opt(c.esu_formula),
                    c.esu_measured,
                    if c.pass() { "ok" } else { "MISMATCH" }
                )
                .unwrap();
            }
        }
        out
    }

    fn trace_lines(&self) -> String {
        let mut out = String::new();
        for f in &self.flows {
            writeln!(out, "# {} {}", f.name, f.direction).unwrap();
            out.push_str(&f.trace);
        }
        out
    }
}
