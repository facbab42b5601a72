//! The controller: Service assignment, policy compilation and per-device
//! distribution plans.
//!
//! Workloads with identical label sets share one Service; a Service keeps
//! its SACL ID across workload churn, which is why spine entries never
//! change when workloads come and go. Plans are always full recomputes:
//! diffing two successive plans is how update costs are measured.

use std::collections::{BTreeMap, BTreeSet};
use std::net::Ipv6Addr;

use thiserror::Error;

use crate::gateway::{DefaultAction, GatewayTables};
use crate::model::{
    labelset_matches, GatewayId, LabelSet, Policy, Rule, SaclId, Service, SwitchId, Workload,
    WorkloadId,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ControllerError {
    #[error("workload {0} is already registered")]
    DuplicateWorkloadId(WorkloadId),
    #[error("workload {0} is not registered")]
    UnknownWorkload(WorkloadId),
    #[error("server endpoint {ip}:{port} already belongs to workload {holder}")]
    ConflictingServerEndpoint {
        ip: Ipv6Addr,
        port: u16,
        holder: WorkloadId,
    },
    #[error("client identity ({ip}, lid {lid:?}) under {gateway} already belongs to {holder}")]
    ConflictingClientIdentity {
        ip: Ipv6Addr,
        lid: Option<u32>,
        gateway: GatewayId,
        holder: WorkloadId,
    },
    #[error("gateway {0} is not part of the device roster")]
    UnknownGateway(GatewayId),
    #[error("no service with SACL ID {0}")]
    UnknownService(SaclId),
    #[error("policy {0:?} is not registered")]
    UnknownPolicy(String),
}

/// The devices a plan distributes to. Switches all receive the full rule
/// set; gateways receive their local tables.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DeviceRoster {
    pub switches: BTreeSet<SwitchId>,
    pub gateways: BTreeSet<GatewayId>,
}

/// Whether registering a workload reused or created its Service.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegisterEvent {
    AssignedExisting,
    CreatedNew,
}

/// Everything one controller instance knows.
#[derive(Debug, Clone, Default)]
pub struct ControllerState {
    services: BTreeMap<LabelSet, Service>,
    workloads: BTreeMap<WorkloadId, Workload>,
    policies: BTreeMap<String, Policy>,
    roster: DeviceRoster,
    next_sacl_id: u64,
    default_action: DefaultAction,
    // Registration-time uniqueness indexes.
    server_endpoints: BTreeMap<(Ipv6Addr, u16), WorkloadId>,
    client_identities: BTreeMap<(GatewayId, Ipv6Addr, Option<u32>), WorkloadId>,
}

/// One full distribution: rule tables per switch, lookup tables per gateway.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DistributionPlan {
    pub switch_entries: BTreeMap<SwitchId, Vec<Rule>>,
    pub gateway_entries: BTreeMap<GatewayId, GatewayTables>,
}

impl DistributionPlan {
    /// The rule set installed on every switch (they are all identical).
    pub fn switch_rules(&self) -> &[Rule] {
        self.switch_entries
            .values()
            .next()
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Distinct (client, server) pairs appearing in the switch rules.
    pub fn rule_pairs(&self) -> BTreeSet<(SaclId, SaclId)> {
        self.switch_rules().iter().map(Rule::pair).collect()
    }
}

impl ControllerState {
    pub fn new(roster: DeviceRoster) -> Self {
        ControllerState {
            roster,
            next_sacl_id: 1,
            ..Default::default()
        }
    }

    /// Gateways default to fail-closed; scenarios may opt out.
    pub fn set_default_action(&mut self, action: DefaultAction) {
        self.default_action = action;
    }

    pub fn services(&self) -> impl Iterator<Item = &Service> {
        self.services.values()
    }

    pub fn service_count(&self) -> usize {
        self.services.len()
    }

    pub fn workloads(&self) -> impl Iterator<Item = &Workload> {
        self.workloads.values()
    }

    pub fn workload(&self, id: &WorkloadId) -> Option<&Workload> {
        self.workloads.get(id)
    }

    pub fn workload_count(&self) -> usize {
        self.workloads.len()
    }

    pub fn policies(&self) -> impl Iterator<Item = &Policy> {
        self.policies.values()
    }

    pub fn roster(&self) -> &DeviceRoster {
        &self.roster
    }

    pub fn service_by_id(&self, id: SaclId) -> Option<&Service> {
        self.services.values().find(|s| s.sacl_id == id)
    }

    pub fn service_of(&self, labels: &LabelSet) -> Option<&Service> {
        self.services.get(labels)
    }

    /// Stores the workload and assigns it a Service: an existing one when
    /// the label set is already known, a fresh one otherwise.
    pub fn register_workload(
        &mut self,
        w: Workload,
    ) -> Result<(Service, RegisterEvent), ControllerError> {
        if self.workloads.contains_key(&w.workload_id) {
            return Err(ControllerError::DuplicateWorkloadId(w.workload_id));
        }
        let gateway = w.gateway();
        if !self.roster.gateways.contains(&gateway) {
            return Err(ControllerError::UnknownGateway(gateway));
        }
        if let Some(port) = w.listen_port {
            if let Some(holder) = self.server_endpoints.get(&(w.ip, port)) {
                return Err(ControllerError::ConflictingServerEndpoint {
                    ip: w.ip,
                    port,
                    holder: holder.clone(),
                });
            }
        }
        let identity = (gateway, w.ip, w.lid);
        if let Some(holder) = self.client_identities.get(&identity) {
            return Err(ControllerError::ConflictingClientIdentity {
                ip: w.ip,
                lid: w.lid,
                gateway,
                holder: holder.clone(),
            });
        }

        let (service, event) = match self.services.get(&w.labels) {
            Some(existing) => (existing.clone(), RegisterEvent::AssignedExisting),
            None => {
                let service = Service {
                    sacl_id: SaclId(self.next_sacl_id),
                    labels: w.labels.clone(),
                };
                self.next_sacl_id += 1;
                self.services.insert(w.labels.clone(), service.clone());
                (service, RegisterEvent::CreatedNew)
            }
        };

        if let Some(port) = w.listen_port {
            self.server_endpoints
                .insert((w.ip, port), w.workload_id.clone());
        }
        self.client_identities
            .insert(identity, w.workload_id.clone());
        self.workloads.insert(w.workload_id.clone(), w);
        Ok((service, event))
    }

    /// Removes a workload. Its Service is retained even when empty, so
    /// the SACL ID stays stable across churn.
    pub fn deregister_workload(
        &mut self,
        workload_id: &WorkloadId,
    ) -> Result<Workload, ControllerError> {
        let w = self
            .workloads
            .remove(workload_id)
            .ok_or_else(|| ControllerError::UnknownWorkload(workload_id.clone()))?;
        if let Some(port) = w.listen_port {
            self.server_endpoints.remove(&(w.ip, port));
        }
        self.client_identities.remove(&(w.gateway(), w.ip, w.lid));
        Ok(w)
    }

    /// Administrative removal of a Service together with its workloads.
    pub fn remove_service(&mut self, id: SaclId) -> Result<Service, ControllerError> {
        let labels = self
            .services
            .values()
            .find(|s| s.sacl_id == id)
            .map(|s| s.labels.clone())
            .ok_or(ControllerError::UnknownService(id))?;
        let members: Vec<WorkloadId> = self
            .workloads
            .values()
            .filter(|w| w.labels == labels)
            .map(|w| w.workload_id.clone())
            .collect();
        for m in members {
            self.deregister_workload(&m)?;
        }
        Ok(self.services.remove(&labels).unwrap())
    }

    pub fn upsert_policy(&mut self, p: Policy) {
        self.policies.insert(p.policy_id.clone(), p);
    }

    pub fn remove_policy(&mut self, policy_id: &str) -> Result<Policy, ControllerError> {
        self.policies
            .remove(policy_id)
            .ok_or_else(|| ControllerError::UnknownPolicy(policy_id.to_string()))
    }

    /// Compiles one policy into the cross product of Services matched by
    /// its client and server selectors, sorted by (client, server).
    pub fn compile_policy(&self, p: &Policy) -> Vec<Rule> {
        let clients: Vec<SaclId> = self
            .services
            .values()
            .filter(|s| labelset_matches(&p.client_selectors, &s.labels))
            .map(|s| s.sacl_id)
            .collect();
        let servers: Vec<SaclId> = self
            .services
            .values()
            .filter(|s| labelset_matches(&p.server_selectors, &s.labels))
            .map(|s| s.sacl_id)
            .collect();
        let mut rules = Vec::with_capacity(clients.len() * servers.len());
        for &c in &clients {
            for &s in &servers {
                rules.push(Rule {
                    client: c,
                    server: s,
                    action: p.action,
                    value: p.value,
                });
            }
        }
        rules.sort();
        rules
    }

    /// All policies compiled, one entry per (client, server) pair.
    ///
    /// When policies overlap, a priority rule beats an allow rule for the
    /// same pair; among priority rules, the highest value wins.
    pub fn compiled_rules(&self) -> Vec<Rule> {
        let mut per_pair: BTreeMap<(SaclId, SaclId), Rule> = BTreeMap::new();
        for p in self.policies.values() {
            for rule in self.compile_policy(p) {
                per_pair
                    .entry(rule.pair())
                    .and_modify(|current| {
                        let stronger = (rule.action, rule.value) > (current.action, current.value);
                        if stronger {
                            *current = rule;
                        }
                    })
                    .or_insert(rule);
            }
        }
        per_pair.into_values().collect()
    }

    /// Full recompute of the distribution: every switch receives the
    /// complete rule set, every gateway its local tables. Compiles the
    /// policies once for the whole plan.
    pub fn plan(&self) -> DistributionPlan {
        let rules = self.compiled_rules();
        let switch_entries = self
            .roster
            .switches
            .iter()
            .map(|&sw| (sw, rules.clone()))
            .collect();
        let gateway_entries = self
            .roster
            .gateways
            .iter()
            .map(|&gw| (gw, self.gateway_tables_for_rules(gw, &rules)))
            .collect();
        DistributionPlan {
            switch_entries,
            gateway_entries,
        }
    }

    /// Lookup tables for one gateway:
    ///
    /// * client map — every local workload by (ip, lid),
    /// * server map — every server workload any local workload's Service
    ///   may reach under the rules, plus every local server workload,
    /// * filter rules — every rule whose server Service has a local
    ///   workload.
    pub fn build_gateway_tables(
        &self,
        gateway: GatewayId,
    ) -> Result<GatewayTables, ControllerError> {
        if !self.roster.gateways.contains(&gateway) {
            return Err(ControllerError::UnknownGateway(gateway));
        }
        Ok(self.gateway_tables_for_rules(gateway, &self.compiled_rules()))
    }

    fn gateway_tables_for_rules(&self, gateway: GatewayId, rules: &[Rule]) -> GatewayTables {
        let mut tables = GatewayTables {
            default_action: self.default_action,
            ..Default::default()
        };

        let local: Vec<&Workload> = self
            .workloads
            .values()
            .filter(|w| w.gateway() == gateway)
            .collect();
        let local_services: BTreeSet<SaclId> = local
            .iter()
            .filter_map(|w| self.services.get(&w.labels))
            .map(|s| s.sacl_id)
            .collect();

        for w in &local {
            let service = &self.services[&w.labels];
            tables.client_map.insert((w.ip, w.lid), service.sacl_id);
        }

        // Server services reachable from any local client-side Service.
        let reachable: BTreeSet<SaclId> = rules
            .iter()
            .filter(|r| local_services.contains(&r.client))
            .map(|r| r.server)
            .collect();
        for w in self.workloads.values() {
            let Some(port) = w.listen_port else { continue };
            let service = &self.services[&w.labels];
            if reachable.contains(&service.sacl_id) {
                tables.server_map.insert((w.ip, port), service.sacl_id);
            }
        }
        for w in &local {
            let Some(port) = w.listen_port else { continue };
            let service = &self.services[&w.labels];
            tables.server_map.insert((w.ip, port), service.sacl_id);
        }

        for r in rules {
            if local_services.contains(&r.server) {
                tables.filter_rules.insert(r.pair());
            }
        }
        tables
    }

    /// Size of every gateway's server map as derived from rule
    /// reachability alone, without the local-delivery additions. This is
    /// the measured counterpart of the worst-case server-entry formula.
    pub fn server_reach_counts(&self) -> BTreeMap<GatewayId, usize> {
        let rules = self.compiled_rules();
        // service -> gateways with a local workload of that service.
        let mut gateways_of: BTreeMap<SaclId, BTreeSet<GatewayId>> = BTreeMap::new();
        for w in self.workloads.values() {
            let service = self.services[&w.labels].sacl_id;
            gateways_of.entry(service).or_default().insert(w.gateway());
        }
        // gateway -> server services reachable from its local services.
        let mut reachable: BTreeMap<GatewayId, BTreeSet<SaclId>> = BTreeMap::new();
        for r in &rules {
            if let Some(gws) = gateways_of.get(&r.client) {
                for &gw in gws {
                    reachable.entry(gw).or_default().insert(r.server);
                }
            }
        }
        // server service -> its listening endpoints.
        let mut endpoints_of: BTreeMap<SaclId, Vec<(Ipv6Addr, u16)>> = BTreeMap::new();
        for w in self.workloads.values() {
            if let Some(port) = w.listen_port {
                let service = self.services[&w.labels].sacl_id;
                endpoints_of.entry(service).or_default().push((w.ip, port));
            }
        }
        let mut out: BTreeMap<GatewayId, usize> = self
            .roster
            .gateways
            .iter()
            .map(|&gw| (gw, 0))
            .collect();
        for (gw, services) in reachable {
            let mut endpoints = BTreeSet::new();
            for s in services {
                if let Some(eps) = endpoints_of.get(&s) {
                    endpoints.extend(eps.iter().copied());
                }
            }
            out.insert(gw, endpoints.len());
        }
        out
    }

    /// Single-gateway form of [`server_reach_counts`](Self::server_reach_counts).
    pub fn server_reach_entries(&self, gateway: GatewayId) -> Result<usize, ControllerError> {
        if !self.roster.gateways.contains(&gateway) {
            return Err(ControllerError::UnknownGateway(gateway));
        }
        Ok(self
            .server_reach_counts()
            .get(&gateway)
            .copied()
            .unwrap_or(0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Placement, PolicyAction, Selector, SelectorOp};

    fn ls(pairs: &[(&str, &str)]) -> LabelSet {
        LabelSet::from_pairs(pairs.iter().copied()).unwrap()
    }

    fn roster() -> DeviceRoster {
        let mut r = DeviceRoster::default();
        r.switches.insert(SwitchId::Spine(0));
        r.switches.insert(SwitchId::Spine(1));
        for server in 0..4 {
            r.gateways.insert(GatewayId { rack: 0, server });
        }
        r
    }

    fn workload(id: &str, labels: &[(&str, &str)], n: u16, port: Option<u16>) -> Workload {
        Workload::new(
            id,
            ls(labels),
            format!("fd00::{n:x}").parse().unwrap(),
            port,
            None,
            Placement {
                rack: 0,
                server: (n % 4) as u32,
                vm: 0,
            },
        )
        .unwrap()
    }

    fn selector(key: &str, value: &str) -> Selector {
        Selector::new(key, SelectorOp::In, [value]).unwrap()
    }

    #[test]
    fn same_labels_share_a_service() {
        let mut c = ControllerState::new(roster());
        let (s2, e2) = c
            .register_workload(workload("w2", &[("user", "bob"), ("group", "2")], 2, None))
            .unwrap();
        let (s3, e3) = c
            .register_workload(workload("w3", &[("user", "bob"), ("group", "2")], 3, None))
            .unwrap();
        assert_eq!(e2, RegisterEvent::CreatedNew);
        assert_eq!(e3, RegisterEvent::AssignedExisting);
        assert_eq!(s2.sacl_id, s3.sacl_id);
        assert_eq!(c.service_count(), 1);
    }

    #[test]
    fn distinct_labelsets_count_services() {
        let mut c = ControllerState::new(roster());
        let classes = [
            vec![("app", "db")],
            vec![("app", "web")],
            vec![("app", "cache")],
        ];
        let mut distinct = BTreeSet::new();
        for i in 0..10u16 {
            let labels = &classes[(i % 3) as usize];
            distinct.insert(ls(labels));
            c.register_workload(workload(&format!("w{i}"), labels, i + 1, None))
                .unwrap();
        }
        assert_eq!(c.service_count(), distinct.len());
        assert_eq!(c.service_count(), 3);
    }

    #[test]
    fn duplicate_workload_and_endpoint_rejected() {
        let mut c = ControllerState::new(roster());
        c.register_workload(workload("w1", &[("a", "1")], 1, Some(80)))
            .unwrap();
        assert!(matches!(
            c.register_workload(workload("w1", &[("a", "2")], 2, None)),
            Err(ControllerError::DuplicateWorkloadId(_))
        ));
        // Same (ip, port) as w1.
        let clash = Workload::new(
            "w9",
            ls(&[("a", "3")]),
            "fd00::1".parse().unwrap(),
            Some(80),
            None,
            Placement {
                rack: 0,
                server: 2,
                vm: 0,
            },
        )
        .unwrap();
        assert!(matches!(
            c.register_workload(clash),
            Err(ControllerError::ConflictingServerEndpoint { .. })
        ));
    }

    #[test]
    fn deregister_keeps_service() {
        let mut c = ControllerState::new(roster());
        c.register_workload(workload("w1", &[("a", "1")], 1, None))
            .unwrap();
        c.deregister_workload(&"w1".into()).unwrap();
        assert_eq!(c.workload_count(), 0);
        assert_eq!(c.service_count(), 1);
        assert!(matches!(
            c.deregister_workload(&"nope".into()),
            Err(ControllerError::UnknownWorkload(_))
        ));
    }

    #[test]
    fn surviving_member_still_resolves_service() {
        let mut c = ControllerState::new(roster());
        let (s, _) = c
            .register_workload(workload("w1", &[("a", "1")], 1, None))
            .unwrap();
        c.register_workload(workload("w2", &[("a", "1")], 2, None))
            .unwrap();
        c.deregister_workload(&"w1".into()).unwrap();
        // Re-derive membership from scratch: every remaining workload
        // with these labels maps to the same service.
        let survivors: Vec<_> = c
            .workloads()
            .filter(|w| w.labels == ls(&[("a", "1")]))
            .collect();
        assert_eq!(survivors.len(), 1);
        assert_eq!(c.service_of(&survivors[0].labels).unwrap().sacl_id, s.sacl_id);
    }

    #[test]
    fn compile_cross_product() {
        let mut c = ControllerState::new(roster());
        c.register_workload(workload("a", &[("app", "alpha")], 1, None))
            .unwrap();
        c.register_workload(workload("b", &[("app", "beta")], 2, Some(80)))
            .unwrap();
        c.register_workload(workload("g", &[("app", "gamma")], 3, Some(80)))
            .unwrap();
        let p = Policy::new(
            "p1",
            vec![selector("app", "alpha")],
            vec![Selector::new("app", SelectorOp::In, ["beta", "gamma"]).unwrap()],
            PolicyAction::Allow,
            None,
        )
        .unwrap();
        let rules = c.compile_policy(&p);
        let alpha = c.service_of(&ls(&[("app", "alpha")])).unwrap().sacl_id;
        let beta = c.service_of(&ls(&[("app", "beta")])).unwrap().sacl_id;
        let gamma = c.service_of(&ls(&[("app", "gamma")])).unwrap().sacl_id;
        assert_eq!(
            rules.iter().map(Rule::pair).collect::<Vec<_>>(),
            vec![(alpha, beta), (alpha, gamma)]
        );
    }

    #[test]
    fn compile_empty_match_is_empty() {
        let mut c = ControllerState::new(roster());
        c.register_workload(workload("a", &[("app", "alpha")], 1, None))
            .unwrap();
        let p = Policy::new(
            "p1",
            vec![selector("app", "nothing")],
            vec![selector("app", "alpha")],
            PolicyAction::Allow,
            None,
        )
        .unwrap();
        assert!(c.compile_policy(&p).is_empty());
    }

    #[test]
    fn compile_matches_exhaustive_pair_oracle() {
        let mut c = ControllerState::new(roster());
        let apps = ["a", "b", "c", "d", "e"];
        for (i, app) in apps.iter().enumerate() {
            c.register_workload(workload(app, &[("app", app), ("tier", if i % 2 == 0 { "x" } else { "y" })], i as u16 + 1, None))
                .unwrap();
        }
        let p = Policy::new(
            "p",
            vec![Selector::new("tier", SelectorOp::In, ["x"]).unwrap()],
            vec![Selector::new("tier", SelectorOp::NotIn, ["x"]).unwrap()],
            PolicyAction::Priority,
            Some(3),
        )
        .unwrap();
        let rules: BTreeSet<_> = c.compile_policy(&p).iter().map(Rule::pair).collect();
        // Brute force over all ordered service pairs.
        let mut expected = BTreeSet::new();
        for sc in c.services() {
            for ss in c.services() {
                if labelset_matches(&p.client_selectors, &sc.labels)
                    && labelset_matches(&p.server_selectors, &ss.labels)
                {
                    expected.insert((sc.sacl_id, ss.sacl_id));
                }
            }
        }
        assert_eq!(rules, expected);
        assert!(!rules.is_empty());
    }

    #[test]
    fn plan_with_no_policies_is_empty_everywhere() {
        let mut c = ControllerState::new(roster());
        c.register_workload(workload("a", &[("app", "alpha")], 1, None))
            .unwrap();
        let plan = c.plan();
        assert!(plan.switch_entries.values().all(|rules| rules.is_empty()));
    }

    #[test]
    fn single_priority_policy_lands_on_every_switch() {
        let mut c = ControllerState::new(roster());
        c.register_workload(workload("a", &[("app", "alpha")], 1, None))
            .unwrap();
        c.register_workload(workload("b", &[("app", "beta")], 2, Some(80)))
            .unwrap();
        let alpha = c.service_of(&ls(&[("app", "alpha")])).unwrap().sacl_id;
        let beta = c.service_of(&ls(&[("app", "beta")])).unwrap().sacl_id;
        c.upsert_policy(
            Policy::new(
                "p1",
                vec![selector("app", "alpha")],
                vec![selector("app", "beta")],
                PolicyAction::Priority,
                Some(7),
            )
            .unwrap(),
        );
        let plan = c.plan();
        for rules in plan.switch_entries.values() {
            assert_eq!(
                rules,
                &vec![Rule {
                    client: alpha,
                    server: beta,
                    action: PolicyAction::Priority,
                    value: Some(7),
                }]
            );
        }
    }

    #[test]
    fn workload_churn_keeps_switch_entries_identical() {
        let mut c = ControllerState::new(roster());
        c.register_workload(workload("a", &[("app", "alpha")], 1, None))
            .unwrap();
        c.register_workload(workload("b", &[("app", "beta")], 2, Some(80)))
            .unwrap();
        c.upsert_policy(
            Policy::new(
                "p1",
                vec![selector("app", "alpha")],
                vec![selector("app", "beta")],
                PolicyAction::Priority,
                Some(7),
            )
            .unwrap(),
        );
        let before = c.plan();
        c.register_workload(workload("a2", &[("app", "alpha")], 3, None))
            .unwrap();
        let during = c.plan();
        c.deregister_workload(&"a2".into()).unwrap();
        let after = c.plan();
        assert_eq!(before.switch_entries, during.switch_entries);
        assert_eq!(before, after);
    }

    #[test]
    fn gateway_tables_reach_server_workloads() {
        let mut c = ControllerState::new(roster());
        // Client on gateway (0,1); two beta servers elsewhere.
        c.register_workload(workload("cl", &[("app", "alpha")], 1, None))
            .unwrap();
        c.register_workload(workload("s1", &[("app", "beta")], 2, Some(80)))
            .unwrap();
        c.register_workload(workload("s2", &[("app", "beta")], 3, Some(80)))
            .unwrap();
        c.upsert_policy(
            Policy::new(
                "p1",
                vec![selector("app", "alpha")],
                vec![selector("app", "beta")],
                PolicyAction::Allow,
                None,
            )
            .unwrap(),
        );
        let gw = GatewayId { rack: 0, server: 1 };
        let tables = c.build_gateway_tables(gw).unwrap();
        assert_eq!(tables.client_map.len(), 1);
        assert_eq!(tables.server_map.len(), 2);
        assert_eq!(c.server_reach_entries(gw).unwrap(), 2);
        // Gateway hosting nothing has empty tables.
        let idle = c
            .build_gateway_tables(GatewayId { rack: 0, server: 0 })
            .unwrap();
        assert!(idle.client_map.is_empty());
        assert!(idle.server_map.is_empty());
        assert!(idle.filter_rules.is_empty());
        assert!(matches!(
            c.build_gateway_tables(GatewayId { rack: 9, server: 9 }),
            Err(ControllerError::UnknownGateway(_))
        ));
    }

    #[test]
    fn filter_rules_follow_server_placement() {
        let mut c = ControllerState::new(roster());
        c.register_workload(workload("cl", &[("app", "alpha")], 1, None))
            .unwrap();
        c.register_workload(workload("s1", &[("app", "beta")], 2, Some(80)))
            .unwrap();
        c.upsert_policy(
            Policy::new(
                "p1",
                vec![selector("app", "alpha")],
                vec![selector("app", "beta")],
                PolicyAction::Allow,
                None,
            )
            .unwrap(),
        );
        let beta_gw = GatewayId { rack: 0, server: 2 };
        let other_gw = GatewayId { rack: 0, server: 3 };
        assert_eq!(c.build_gateway_tables(beta_gw).unwrap().filter_rules.len(), 1);
        assert!(c
            .build_gateway_tables(other_gw)
            .unwrap()
            .filter_rules
            .is_empty());
    }

    #[test]
    fn compile_is_invariant_under_workload_renaming() {
        let build = |names: &[&str]| {
            let mut c = ControllerState::new(roster());
            for (i, name) in names.iter().enumerate() {
                c.register_workload(workload(
                    name,
                    &[("app", if i % 2 == 0 { "alpha" } else { "beta" })],
                    i as u16 + 1,
                    None,
                ))
                .unwrap();
            }
            let p = Policy::new(
                "p",
                vec![selector("app", "alpha")],
                vec![selector("app", "beta")],
                PolicyAction::Allow,
                None,
            )
            .unwrap();
            c.compile_policy(&p)
        };
        assert_eq!(build(&["a", "b", "c"]), build(&["x", "y", "z"]));
    }
}
