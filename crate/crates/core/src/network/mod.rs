//! Static grid description in per-unit.
//!
//! A [`Network`] is built once (from a MATPOWER case or the native JSON
//! mirror) and never mutated afterwards; outages produce a new network via
//! [`Network::remove_branch`].

mod admittance;
mod incidence;
mod matpower;

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use admittance::{build_admittances, AdmittanceModel, BranchAdmittance};
pub use incidence::{build_incidence, IncidenceMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum BusKind {
    Pq,
    Pv,
    Ref,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: usize,
    pub kind: BusKind,
    /// Active load, p.u.
    pub p_load: f64,
    /// Reactive load, p.u.
    pub q_load: f64,
    /// Shunt conductance at V = 1, p.u.
    pub g_shunt: f64,
    /// Shunt susceptance at V = 1, p.u.
    pub b_shunt: f64,
    /// Voltage magnitude setpoint for PV and REF buses.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_setpoint: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub id: usize,
    pub from_bus: usize,
    pub to_bus: usize,
    pub r: f64,
    pub x: f64,
    /// Total line-charging susceptance, p.u.
    pub b_charging: f64,
    /// Off-nominal turns ratio, 1.0 for lines.
    pub tap: f64,
    /// Phase shift, radians.
    pub shift: f64,
    pub in_service: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub bus: usize,
    pub p_gen: f64,
    pub q_gen: f64,
    pub v_setpoint: f64,
    pub in_service: bool,
}

/// Serialized form; also the native JSON case schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct NetworkData {
    #[serde(default)]
    name: String,
    base_mva: f64,
    ref_bus: usize,
    buses: Vec<Bus>,
    branches: Vec<Branch>,
    #[serde(default)]
    generators: Vec<Generator>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "NetworkData", into = "NetworkData")]
pub struct Network {
    name: String,
    base_mva: f64,
    ref_bus: usize,
    buses: Vec<Bus>,
    branches: Vec<Branch>,
    generators: Vec<Generator>,
    bus_index: HashMap<usize, usize>,
}

impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.base_mva == other.base_mva
            && self.ref_bus == other.ref_bus
            && self.buses == other.buses
            && self.branches == other.branches
            && self.generators == other.generators
    }
}

impl TryFrom<NetworkData> for Network {
    type Error = Error;

    fn try_from(d: NetworkData) -> Result<Self> {
        let net = Network::new(d.name, d.base_mva, d.buses, d.branches, d.generators)?;
        if net.ref_bus != d.ref_bus {
            return Err(Error::Validation(format!(
                "ref_bus {} does not match the REF bus {}",
                d.ref_bus, net.ref_bus
            )));
        }
        Ok(net)
    }
}

impl From<Network> for NetworkData {
    fn from(n: Network) -> Self {
        NetworkData {
            name: n.name,
            base_mva: n.base_mva,
            ref_bus: n.ref_bus,
            buses: n.buses,
            branches: n.branches,
            generators: n.generators,
        }
    }
}

impl Network {
    /// Validates and assembles a network. The REF bus is taken from the bus kinds.
    pub fn new(
        name: String,
        base_mva: f64,
        buses: Vec<Bus>,
        branches: Vec<Branch>,
        generators: Vec<Generator>,
    ) -> Result<Self> {
        if !(base_mva > 0.0) {
            return Err(Error::Validation(format!("base_mva must be positive, got {base_mva}")));
        }
        if buses.is_empty() {
            return Err(Error::Validation("case has no buses".into()));
        }
        let mut bus_index = HashMap::with_capacity(buses.len());
        for (i, b) in buses.iter().enumerate() {
            if bus_index.insert(b.id, i).is_some() {
                return Err(Error::Validation(format!("duplicate bus id {}", b.id)));
            }
            if matches!(b.kind, BusKind::Pv | BusKind::Ref) {
                match b.v_setpoint {
                    Some(v) if v > 0.0 && v.is_finite() => {}
                    _ => {
                        return Err(Error::Validation(format!(
                            "bus {} needs a positive voltage setpoint",
                            b.id
                        )))
                    }
                }
            }
        }
        let refs: Vec<usize> = buses.iter().filter(|b| b.kind == BusKind::Ref).map(|b| b.id).collect();
        let ref_bus = match refs.as_slice() {
            [r] => *r,
            [] => return Err(Error::Validation("no REF bus".into())),
            _ => return Err(Error::Validation(format!("multiple REF buses: {refs:?}"))),
        };
        let mut branch_ids = HashMap::with_capacity(branches.len());
        for br in &branches {
            if branch_ids.insert(br.id, ()).is_some() {
                return Err(Error::Validation(format!("duplicate branch id {}", br.id)));
            }
            if br.x == 0.0 || !br.x.is_finite() {
                return Err(Error::Validation(format!("branch {} has zero reactance", br.id)));
            }
            if br.from_bus == br.to_bus {
                return Err(Error::Validation(format!("branch {} is a self-loop", br.id)));
            }
            if !(br.tap > 0.0) {
                return Err(Error::Validation(format!("branch {} has non-positive tap", br.id)));
            }
            for end in [br.from_bus, br.to_bus] {
                if !bus_index.contains_key(&end) {
                    return Err(Error::Validation(format!(
                        "branch {} references unknown bus {end}",
                        br.id
                    )));
                }
            }
        }
        for g in &generators {
            if !bus_index.contains_key(&g.bus) {
                return Err(Error::Validation(format!("generator at unknown bus {}", g.bus)));
            }
        }
        let net = Network { name, base_mva, ref_bus, buses, branches, generators, bus_index };
        if let Some(island) = net.first_unreachable_bus() {
            return Err(Error::Disconnected(format!(
                "bus {island} is not reachable from the reference bus"
            )));
        }
        Ok(net)
    }

    /// Parses MATPOWER `.m` text or the native JSON schema (detected by a leading `{`).
    pub fn parse(text: &str) -> Result<Self> {
        if text.trim_start().starts_with('{') {
            Ok(serde_json::from_str(text)?)
        } else {
            matpower::parse(text)
        }
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let mut net = Self::parse(&text)?;
        if net.name.is_empty() {
            if let Some(stem) = path.file_stem() {
                net.name = stem.to_string_lossy().into_owned();
            }
        }
        Ok(net)
    }

    /// One of the bundled IEEE cases (`case14`, `case30`, `case57`, `case118`).
    pub fn builtin(name: &str) -> Option<Self> {
        let text = match name {
            "case14" => include_str!("../../data/case14.m"),
            "case30" => include_str!("../../data/case30.m"),
            "case57" => include_str!("../../data/case57.m"),
            "case118" => include_str!("../../data/case118.m"),
            _ => return None,
        };
        let mut net = Self::parse(text).expect("bundled case parses");
        net.name = name.into();
        Some(net)
    }

    /// A file path, or the name of a bundled case when no such file exists.
    pub fn load(spec: &str) -> Result<Self> {
        if !Path::new(spec).exists() {
            if let Some(net) = Self::builtin(spec) {
                return Ok(net);
            }
        }
        Self::from_file(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("network serializes")
    }

    /// SHA-256 over the canonical JSON form, so `.m` and JSON copies of a case agree.
    pub fn checksum(&self) -> String {
        let mut data: NetworkData = self.clone().into();
        data.name.clear();
        let bytes = serde_json::to_vec(&data).expect("network serializes");
        hex(&Sha256::digest(&bytes))
    }

    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn base_mva(&self) -> f64 {
        self.base_mva
    }
    pub fn ref_bus(&self) -> usize {
        self.ref_bus
    }
    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }
    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }
    pub fn generators(&self) -> &[Generator] {
        &self.generators
    }

    pub fn bus_position(&self, id: usize) -> Option<usize> {
        self.bus_index.get(&id).copied()
    }

    pub fn ref_position(&self) -> usize {
        self.bus_index[&self.ref_bus]
    }

    pub fn in_service_branches(&self) -> impl Iterator<Item = &Branch> {
        self.branches.iter().filter(|b| b.in_service)
    }

    pub fn n_in_service(&self) -> usize {
        self.in_service_branches().count()
    }

    /// Ids of the non-reference buses, in bus order.
    pub fn non_ref_bus_ids(&self) -> Vec<usize> {
        self.buses.iter().filter(|b| b.kind != BusKind::Ref).map(|b| b.id).collect()
    }

    /// Ids of in-service branches, in branch order.
    pub fn in_service_branch_ids(&self) -> Vec<usize> {
        self.in_service_branches().map(|b| b.id).collect()
    }

    /// Net specified active injection per bus (generation minus load), p.u.
    pub fn net_p(&self) -> Vec<f64> {
        let mut p: Vec<f64> = self.buses.iter().map(|b| -b.p_load).collect();
        for g in self.generators.iter().filter(|g| g.in_service) {
            p[self.bus_index[&g.bus]] += g.p_gen;
        }
        p
    }

    /// Net specified reactive injection per bus, p.u.
    pub fn net_q(&self) -> Vec<f64> {
        let mut q: Vec<f64> = self.buses.iter().map(|b| -b.q_load).collect();
        for g in self.generators.iter().filter(|g| g.in_service) {
            q[self.bus_index[&g.bus]] += g.q_gen;
        }
        q
    }

    /// Copy of the network with `branch_id` out of service.
    pub fn remove_branch(&self, branch_id: usize) -> Result<Network> {
        let pos = self
            .branches
            .iter()
            .position(|b| b.id == branch_id)
            .ok_or(Error::UnknownBranch(branch_id))?;
        let mut net = self.clone();
        net.branches[pos].in_service = false;
        if net.first_unreachable_bus().is_some() {
            return Err(Error::Islanding { branch: branch_id });
        }
        Ok(net)
    }

    fn first_unreachable_bus(&self) -> Option<usize> {
        let n = self.buses.len();
        let mut adj = vec![Vec::new(); n];
        for br in self.in_service_branches() {
            let (f, t) = (self.bus_index[&br.from_bus], self.bus_index[&br.to_bus]);
            adj[f].push(t);
            adj[t].push(f);
        }
        let mut seen = vec![false; n];
        let mut stack = vec![self.bus_index[&self.ref_bus]];
        seen[stack[0]] = true;
        while let Some(u) = stack.pop() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen.iter().position(|s| !s).map(|i| self.buses[i].id)
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
