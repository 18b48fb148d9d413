//! Network description: buses, branches, sources, loads, relays and the
//! declared primary/backup pairs, plus per-unit conversion.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type BusId = u32;
pub type BranchId = u32;
pub type SourceId = u32;
pub type RelayId = u32;

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_BASE_MVA: f64 = 100.0;
pub const DEFAULT_DG_SUBTRANSIENT_PU: f64 = 0.2;
pub const DEFAULT_LOAD_POWER_FACTOR: f64 = 0.85;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unsupported schema version {0} (expected {SCHEMA_VERSION})")]
    Schema(u32),
    #[error("{kind} {id} is referenced but not defined")]
    Dangling { kind: &'static str, id: u32 },
    #[error("duplicate {kind} id {id}")]
    Duplicate { kind: &'static str, id: u32 },
    #[error("network is invalid: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
    #[error("branch {0} has zero impedance")]
    ZeroImpedance(BranchId),
    #[error("scenario references unknown source {0}")]
    UnknownSource(SourceId),
    #[error("scenario references source {0}, which is not a DG unit")]
    NotDg(SourceId),
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: BusId,
    pub name: String,
    pub nominal_kv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BranchKind {
    Cable {
        length_km: f64,
        r_ohm_per_km: f64,
        x_ohm_per_km: f64,
    },
    Transformer {
        rated_mva: f64,
        primary_kv: f64,
        secondary_kv: f64,
        z_percent: f64,
        x_over_r: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub id: BranchId,
    pub from_bus: BusId,
    pub to_bus: BusId,
    #[serde(flatten)]
    pub kind: BranchKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl Branch {
    pub fn other_end(&self, bus: BusId) -> Option<BusId> {
        if bus == self.from_bus {
            Some(self.to_bus)
        } else if bus == self.to_bus {
            Some(self.from_bus)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SourceKind {
    Grid {
        sc_capacity_mva: f64,
        x_over_r: f64,
    },
    Dg {
        rated_mw: f64,
        #[serde(default = "default_subtransient")]
        subtransient_reactance_pu: f64,
        machine_base_mva: f64,
        /// Power factor of the injection in load-flow studies.
        #[serde(default = "unity")]
        power_factor: f64,
    },
}

fn default_subtransient() -> f64 {
    DEFAULT_DG_SUBTRANSIENT_PU
}

fn unity() -> f64 {
    1.0
}

fn default_load_pf() -> f64 {
    DEFAULT_LOAD_POWER_FACTOR
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Source {
    pub id: SourceId,
    pub bus: BusId,
    #[serde(flatten)]
    pub kind: SourceKind,
    #[serde(default = "yes")]
    pub in_service: bool,
}

impl Source {
    pub fn is_grid(&self) -> bool {
        matches!(self.kind, SourceKind::Grid { .. })
    }

    pub fn is_dg(&self) -> bool {
        matches!(self.kind, SourceKind::Dg { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadPoint {
    pub bus: BusId,
    pub apparent_power_mva: f64,
    #[serde(default = "default_load_pf")]
    pub power_factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelaySpec {
    pub id: RelayId,
    pub branch: BranchId,
    /// Bus at which the CT sits; the forward direction points from here
    /// into the protected branch.
    pub located_at_bus: BusId,
    pub ct_ratio: f64,
    pub directional: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDecl {
    pub fault_bus: BusId,
    pub primary_relay: RelayId,
    #[serde(default)]
    pub backup_relays: Vec<RelayId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl PairDecl {
    pub fn new(fault_bus: BusId, primary_relay: RelayId, backup_relays: Vec<RelayId>) -> Self {
        Self {
            fault_bus,
            primary_relay,
            backup_relays,
            note: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub enabled_dg_ids: BTreeSet<SourceId>,
}

impl Scenario {
    pub fn new(
        name: impl Into<String>,
        enabled_dg_ids: impl IntoIterator<Item = SourceId>,
    ) -> Self {
        Self {
            name: name.into(),
            enabled_dg_ids: enabled_dg_ids.into_iter().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub schema: u32,
    pub buses: Vec<Bus>,
    #[serde(default)]
    pub branches: Vec<Branch>,
    pub sources: Vec<Source>,
    #[serde(default)]
    pub loads: Vec<LoadPoint>,
    #[serde(default)]
    pub relays: Vec<RelaySpec>,
    #[serde(default)]
    pub pairs: Vec<PairDecl>,
    #[serde(default)]
    pub scenarios: Vec<Scenario>,
}

/// Parses a network document without checking cross-references.
pub fn parse_network(document: &str) -> Result<Network, NetworkError> {
    let network: Network = serde_json::from_str(document).map_err(|e| {
        // serde_json appends its own location; it is reported separately
        let text = e.to_string();
        let message = match text.rfind(" at line ") {
            Some(pos) => text[..pos].to_string(),
            None => text,
        };
        NetworkError::Parse {
            line: e.line(),
            column: e.column(),
            message,
        }
    })?;
    if network.schema != SCHEMA_VERSION {
        return Err(NetworkError::Schema(network.schema));
    }
    Ok(network)
}

/// Parses a network document and resolves every cross-reference.
pub fn load_network(document: &str) -> Result<Network, NetworkError> {
    let network = parse_network(document)?;
    network.check_links()?;
    Ok(network)
}

impl Network {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("network serializes")
    }

    pub fn bus(&self, id: BusId) -> Option<&Bus> {
        self.buses.iter().find(|b| b.id == id)
    }

    pub fn branch(&self, id: BranchId) -> Option<&Branch> {
        self.branches.iter().find(|b| b.id == id)
    }

    pub fn relay(&self, id: RelayId) -> Option<&RelaySpec> {
        self.relays.iter().find(|r| r.id == id)
    }

    pub fn source(&self, id: SourceId) -> Option<&Source> {
        self.sources.iter().find(|s| s.id == id)
    }

    pub fn grid(&self) -> Option<&Source> {
        self.sources.iter().find(|s| s.is_grid())
    }

    pub fn scenario(&self, name: &str) -> Result<&Scenario, NetworkError> {
        self.scenarios
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| NetworkError::UnknownScenario(name.to_string()))
    }

    pub fn bus_ids(&self) -> Vec<BusId> {
        let mut ids: Vec<_> = self.buses.iter().map(|b| b.id).collect();
        ids.sort_unstable();
        ids
    }

    pub fn has_dg(&self) -> bool {
        self.sources.iter().any(Source::is_dg)
    }

    fn check_links(&self) -> Result<(), NetworkError> {
        fn unique<I: Iterator<Item = u32>>(
            kind: &'static str,
            ids: I,
        ) -> Result<BTreeSet<u32>, NetworkError> {
            let mut seen = BTreeSet::new();
            for id in ids {
                if !seen.insert(id) {
                    return Err(NetworkError::Duplicate { kind, id });
                }
            }
            Ok(seen)
        }
        let buses = unique("bus", self.buses.iter().map(|b| b.id))?;
        let branches = unique("branch", self.branches.iter().map(|b| b.id))?;
        let sources = unique("source", self.sources.iter().map(|s| s.id))?;
        let relays = unique("relay", self.relays.iter().map(|r| r.id))?;
        let need = |set: &BTreeSet<u32>, kind: &'static str, id: u32| {
            if set.contains(&id) {
                Ok(())
            } else {
                Err(NetworkError::Dangling { kind, id })
            }
        };
        for b in &self.branches {
            need(&buses, "bus", b.from_bus)?;
            need(&buses, "bus", b.to_bus)?;
        }
        for s in &self.sources {
            need(&buses, "bus", s.bus)?;
        }
        for l in &self.loads {
            need(&buses, "bus", l.bus)?;
        }
        for r in &self.relays {
            need(&branches, "branch", r.branch)?;
            need(&buses, "bus", r.located_at_bus)?;
        }
        for p in &self.pairs {
            need(&buses, "bus", p.fault_bus)?;
            need(&relays, "relay", p.primary_relay)?;
            for b in &p.backup_relays {
                need(&relays, "relay", *b)?;
            }
        }
        for sc in &self.scenarios {
            for id in &sc.enabled_dg_ids {
                need(&sources, "source", *id)?;
            }
        }
        Ok(())
    }
}

/// One broken invariant found by [`validate`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    DuplicateId {
        kind: &'static str,
        id: u32,
    },
    Dangling {
        owner: String,
        kind: &'static str,
        id: u32,
    },
    NonPositive {
        owner: String,
        field: &'static str,
        value: f64,
    },
    OutOfRange {
        owner: String,
        field: &'static str,
        value: f64,
    },
    NoGridSource,
    MultipleGridSources,
    SelfLoop {
        branch: BranchId,
    },
    VoltageMismatch {
        branch: BranchId,
    },
    RelayNotOnBranch {
        relay: RelayId,
        bus: BusId,
        branch: BranchId,
    },
    NotDg {
        scenario: String,
        source: SourceId,
    },
    DuplicateScenario(String),
    Isolated {
        bus: BusId,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::DuplicateId { kind, id } => write!(f, "duplicate {kind} id {id}"),
            Self::Dangling { owner, kind, id } => {
                write!(f, "{owner} references missing {kind} {id}")
            }
            Self::NonPositive {
                owner,
                field,
                value,
            } => {
                write!(f, "{owner}: {field} must be positive (got {value})")
            }
            Self::OutOfRange {
                owner,
                field,
                value,
            } => write!(f, "{owner}: {field} out of range (got {value})"),
            Self::NoGridSource => write!(f, "no grid source"),
            Self::MultipleGridSources => write!(f, "multiple grid sources"),
            Self::SelfLoop { branch } => write!(f, "branch {branch} connects a bus to itself"),
            Self::VoltageMismatch { branch } => {
                write!(f, "cable {branch} joins buses of different nominal voltage")
            }
            Self::RelayNotOnBranch { relay, bus, branch } => {
                write!(
                    f,
                    "relay {relay}: bus {bus} is not an end of branch {branch}"
                )
            }
            Self::NotDg { scenario, source } => {
                write!(f, "scenario `{scenario}`: source {source} is not a DG unit")
            }
            Self::DuplicateScenario(name) => write!(f, "duplicate scenario `{name}`"),
            Self::Isolated { bus } => write!(f, "bus {bus} is not connected to the grid source"),
        }
    }
}

/// Lists every broken invariant; an empty result means the network is usable.
pub fn validate(network: &Network) -> Vec<Violation> {
    let mut out = Vec::new();
    let check_unique = |kind: &'static str, ids: Vec<u32>, out: &mut Vec<Violation>| {
        let mut seen = BTreeSet::new();
        for id in ids {
            if !seen.insert(id) {
                out.push(Violation::DuplicateId { kind, id });
            }
        }
    };
    check_unique(
        "bus",
        network.buses.iter().map(|b| b.id).collect(),
        &mut out,
    );
    check_unique(
        "branch",
        network.branches.iter().map(|b| b.id).collect(),
        &mut out,
    );
    check_unique(
        "source",
        network.sources.iter().map(|s| s.id).collect(),
        &mut out,
    );
    check_unique(
        "relay",
        network.relays.iter().map(|r| r.id).collect(),
        &mut out,
    );

    let positive = |owner: String, field: &'static str, value: f64, out: &mut Vec<Violation>| {
        if !(value > 0.0 && value.is_finite()) {
            out.push(Violation::NonPositive {
                owner,
                field,
                value,
            });
        }
    };
    let power_factor = |owner: String, value: f64, out: &mut Vec<Violation>| {
        if !(value > 0.0 && value <= 1.0) {
            out.push(Violation::OutOfRange {
                owner,
                field: "power_factor",
                value,
            });
        }
    };

    for b in &network.buses {
        positive(
            format!("bus {}", b.id),
            "nominal_kv",
            b.nominal_kv,
            &mut out,
        );
    }

    let bus_kv = |id: BusId| network.bus(id).map(|b| b.nominal_kv);
    for br in &network.branches {
        let owner = format!("branch {}", br.id);
        for end in [br.from_bus, br.to_bus] {
            if bus_kv(end).is_none() {
                out.push(Violation::Dangling {
                    owner: owner.clone(),
                    kind: "bus",
                    id: end,
                });
            }
        }
        if br.from_bus == br.to_bus {
            out.push(Violation::SelfLoop { branch: br.id });
        }
        match &br.kind {
            BranchKind::Cable {
                length_km,
                r_ohm_per_km,
                x_ohm_per_km,
            } => {
                positive(owner.clone(), "length_km", *length_km, &mut out);
                if *r_ohm_per_km < 0.0 || *x_ohm_per_km < 0.0 {
                    out.push(Violation::OutOfRange {
                        owner: owner.clone(),
                        field: "impedance per km",
                        value: r_ohm_per_km.min(*x_ohm_per_km),
                    });
                }
                if let (Some(a), Some(b)) = (bus_kv(br.from_bus), bus_kv(br.to_bus)) {
                    if (a - b).abs() > 1e-9 * a.abs().max(b.abs()) {
                        out.push(Violation::VoltageMismatch { branch: br.id });
                    }
                }
            }
            BranchKind::Transformer {
                rated_mva,
                primary_kv,
                secondary_kv,
                z_percent,
                x_over_r,
            } => {
                positive(owner.clone(), "rated_mva", *rated_mva, &mut out);
                positive(owner.clone(), "primary_kv", *primary_kv, &mut out);
                positive(owner.clone(), "secondary_kv", *secondary_kv, &mut out);
                positive(owner.clone(), "z_percent", *z_percent, &mut out);
                positive(owner.clone(), "x_over_r", *x_over_r, &mut out);
            }
        }
    }

    let grids = network.sources.iter().filter(|s| s.is_grid()).count();
    match grids {
        0 => out.push(Violation::NoGridSource),
        1 => {}
        _ => out.push(Violation::MultipleGridSources),
    }
    for s in &network.sources {
        let owner = format!("source {}", s.id);
        if network.bus(s.bus).is_none() {
            out.push(Violation::Dangling {
                owner: owner.clone(),
                kind: "bus",
                id: s.bus,
            });
        }
        match &s.kind {
            SourceKind::Grid {
                sc_capacity_mva,
                x_over_r,
            } => {
                positive(owner.clone(), "sc_capacity_mva", *sc_capacity_mva, &mut out);
                positive(owner, "x_over_r", *x_over_r, &mut out);
            }
            SourceKind::Dg {
                rated_mw,
                subtransient_reactance_pu,
                machine_base_mva,
                power_factor: pf,
            } => {
                positive(owner.clone(), "rated_mw", *rated_mw, &mut out);
                positive(
                    owner.clone(),
                    "subtransient_reactance_pu",
                    *subtransient_reactance_pu,
                    &mut out,
                );
                positive(
                    owner.clone(),
                    "machine_base_mva",
                    *machine_base_mva,
                    &mut out,
                );
                power_factor(owner, *pf, &mut out);
            }
        }
    }

    for (i, l) in network.loads.iter().enumerate() {
        let owner = format!("load #{i}");
        if network.bus(l.bus).is_none() {
            out.push(Violation::Dangling {
                owner: owner.clone(),
                kind: "bus",
                id: l.bus,
            });
        }
        if !(l.apparent_power_mva >= 0.0) {
            out.push(Violation::OutOfRange {
                owner: owner.clone(),
                field: "apparent_power_mva",
                value: l.apparent_power_mva,
            });
        }
        power_factor(owner, l.power_factor, &mut out);
    }

    for r in &network.relays {
        let owner = format!("relay {}", r.id);
        positive(owner.clone(), "ct_ratio", r.ct_ratio, &mut out);
        match network.branch(r.branch) {
            None => out.push(Violation::Dangling {
                owner,
                kind: "branch",
                id: r.branch,
            }),
            Some(br) if br.other_end(r.located_at_bus).is_none() => {
                out.push(Violation::RelayNotOnBranch {
                    relay: r.id,
                    bus: r.located_at_bus,
                    branch: r.branch,
                })
            }
            Some(_) => {}
        }
    }

    for (i, p) in network.pairs.iter().enumerate() {
        let owner = format!("pair #{i}");
        if network.bus(p.fault_bus).is_none() {
            out.push(Violation::Dangling {
                owner: owner.clone(),
                kind: "bus",
                id: p.fault_bus,
            });
        }
        for id in std::iter::once(&p.primary_relay).chain(&p.backup_relays) {
            if network.relay(*id).is_none() {
                out.push(Violation::Dangling {
                    owner: owner.clone(),
                    kind: "relay",
                    id: *id,
                });
            }
        }
    }

    let mut names = BTreeSet::new();
    for sc in &network.scenarios {
        if !names.insert(sc.name.as_str()) {
            out.push(Violation::DuplicateScenario(sc.name.clone()));
        }
        for id in &sc.enabled_dg_ids {
            match network.source(*id) {
                None => out.push(Violation::Dangling {
                    owner: format!("scenario `{}`", sc.name),
                    kind: "source",
                    id: *id,
                }),
                Some(s) if !s.is_dg() => out.push(Violation::NotDg {
                    scenario: sc.name.clone(),
                    source: *id,
                }),
                Some(_) => {}
            }
        }
    }

    if grids == 1 {
        let root = network.grid().map(|g| g.bus).unwrap_or_default();
        if network.bus(root).is_some() {
            let reached = reachable(network, root);
            for id in network.bus_ids() {
                if !reached.contains(&id) {
                    out.push(Violation::Isolated { bus: id });
                }
            }
        }
    }
    out
}

fn reachable(network: &Network, root: BusId) -> BTreeSet<BusId> {
    let mut adjacency: BTreeMap<BusId, Vec<BusId>> = BTreeMap::new();
    for br in &network.branches {
        adjacency.entry(br.from_bus).or_default().push(br.to_bus);
        adjacency.entry(br.to_bus).or_default().push(br.from_bus);
    }
    let mut seen = BTreeSet::from([root]);
    let mut queue = VecDeque::from([root]);
    while let Some(bus) = queue.pop_front() {
        for next in adjacency.get(&bus).into_iter().flatten() {
            if seen.insert(*next) {
                queue.push_back(*next);
            }
        }
    }
    seen
}

/// Returns a copy of `network` in which exactly the scenario's DG units are
/// in service.
pub fn apply_scenario(network: &Network, scenario: &Scenario) -> Result<Network, NetworkError> {
    for id in &scenario.enabled_dg_ids {
        let source = network
            .source(*id)
            .ok_or(NetworkError::UnknownSource(*id))?;
        if !source.is_dg() {
            return Err(NetworkError::NotDg(*id));
        }
    }
    let mut out = network.clone();
    for s in out.sources.iter_mut().filter(|s| s.is_dg()) {
        s.in_service = scenario.enabled_dg_ids.contains(&s.id);
    }
    Ok(out)
}

/// Which kind of source a [`PuSource`] came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceRole {
    Grid,
    Dg,
}

#[derive(Debug, Clone)]
pub struct PuBranch {
    pub id: BranchId,
    pub from: usize,
    pub to: usize,
    pub z: Complex64,
}

#[derive(Debug, Clone)]
pub struct PuSource {
    pub id: SourceId,
    pub bus: usize,
    pub role: SourceRole,
    /// Internal (Thevenin) impedance on the system base.
    pub z: Complex64,
    /// Scheduled injection for load flow; zero for the grid.
    pub injection: Complex64,
    pub in_service: bool,
}

#[derive(Debug, Clone)]
pub struct PuRelay {
    pub id: RelayId,
    pub branch: usize,
    pub at: usize,
    pub ct_ratio: f64,
    pub directional: bool,
}

/// Network converted to per-unit on a single system MVA base.
#[derive(Debug, Clone)]
pub struct PerUnitModel {
    pub base_mva: f64,
    pub bus_ids: Vec<BusId>,
    pub base_kv: Vec<f64>,
    pub branches: Vec<PuBranch>,
    pub sources: Vec<PuSource>,
    /// Per-bus load demand (P + jQ).
    pub loads: Vec<Complex64>,
    pub relays: Vec<PuRelay>,
    index: BTreeMap<BusId, usize>,
}

fn polar_impedance(magnitude: f64, x_over_r: f64) -> Complex64 {
    let r = magnitude / (1.0 + x_over_r * x_over_r).sqrt();
    Complex64::new(r, r * x_over_r)
}

fn apparent(mva: f64, pf: f64) -> Complex64 {
    let q = mva * (1.0 - pf * pf).max(0.0).sqrt();
    Complex64::new(mva * pf, q)
}

pub fn to_per_unit(network: &Network, base_mva: f64) -> Result<PerUnitModel, NetworkError> {
    let violations = validate(network);
    if !violations.is_empty() {
        return Err(NetworkError::Invalid(violations));
    }
    let bus_ids = network.bus_ids();
    let index: BTreeMap<BusId, usize> =
        bus_ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    let base_kv: Vec<f64> = bus_ids
        .iter()
        .map(|id| network.bus(*id).map(|b| b.nominal_kv).unwrap_or_default())
        .collect();

    let mut branches = Vec::with_capacity(network.branches.len());
    for br in &network.branches {
        let from = index[&br.from_bus];
        let to = index[&br.to_bus];
        let z = match &br.kind {
            BranchKind::Cable {
                length_km,
                r_ohm_per_km,
                x_ohm_per_km,
            } => {
                let z_base = base_kv[from].powi(2) / base_mva;
                Complex64::new(r_ohm_per_km * length_km, x_ohm_per_km * length_km) / z_base
            }
            BranchKind::Transformer {
                rated_mva,
                z_percent,
                x_over_r,
                ..
            } => polar_impedance(z_percent / 100.0 * base_mva / rated_mva, *x_over_r),
        };
        if z.norm() == 0.0 || !z.re.is_finite() || !z.im.is_finite() {
            return Err(NetworkError::ZeroImpedance(br.id));
        }
        branches.push(PuBranch {
            id: br.id,
            from,
            to,
            z,
        });
    }

    let sources = network
        .sources
        .iter()
        .map(|s| {
            let (role, z, injection) = match &s.kind {
                SourceKind::Grid {
                    sc_capacity_mva,
                    x_over_r,
                } => (
                    SourceRole::Grid,
                    polar_impedance(base_mva / sc_capacity_mva, *x_over_r),
                    Complex64::new(0.0, 0.0),
                ),
                SourceKind::Dg {
                    rated_mw,
                    subtransient_reactance_pu,
                    machine_base_mva,
                    power_factor,
                } => {
                    let mva = rated_mw / power_factor;
                    (
                        SourceRole::Dg,
                        Complex64::new(
                            0.0,
                            subtransient_reactance_pu * base_mva / machine_base_mva,
                        ),
                        apparent(mva, *power_factor) / base_mva,
                    )
                }
            };
            PuSource {
                id: s.id,
                bus: index[&s.bus],
                role,
                z,
                injection,
                in_service: s.in_service,
            }
        })
        .collect();

    let mut loads = vec![Complex64::new(0.0, 0.0); bus_ids.len()];
    for l in &network.loads {
        loads[index[&l.bus]] += apparent(l.apparent_power_mva, l.power_factor) / base_mva;
    }

    let branch_pos: BTreeMap<BranchId, usize> = network
        .branches
        .iter()
        .enumerate()
        .map(|(i, b)| (b.id, i))
        .collect();
    let relays = network
        .relays
        .iter()
        .map(|r| PuRelay {
            id: r.id,
            branch: branch_pos[&r.branch],
            at: index[&r.located_at_bus],
            ct_ratio: r.ct_ratio,
            directional: r.directional,
        })
        .collect();

    Ok(PerUnitModel {
        base_mva,
        bus_ids,
        base_kv,
        branches,
        sources,
        loads,
        relays,
        index,
    })
}

impl PerUnitModel {
    pub fn bus_count(&self) -> usize {
        self.bus_ids.len()
    }

    pub fn index_of(&self, bus: BusId) -> Option<usize> {
        self.index.get(&bus).copied()
    }

    /// Base current in amperes at the given bus index.
    pub fn base_current_a(&self, bus: usize) -> f64 {
        self.base_mva * 1e6 / (3f64.sqrt() * self.base_kv[bus] * 1e3)
    }

    /// Branch impedance referred back to ohms at its sending-end voltage.
    pub fn branch_ohms(&self, branch: usize) -> Complex64 {
        let b = &self.branches[branch];
        b.z * self.base_kv[b.from].powi(2) / self.base_mva
    }

    pub fn grid(&self) -> Option<&PuSource> {
        self.sources.iter().find(|s| s.role == SourceRole::Grid)
    }

    pub fn active_sources(&self) -> impl Iterator<Item = &PuSource> {
        self.sources.iter().filter(|s| s.in_service)
    }

    /// Bus admittance matrix of the branch network; when `with_sources` is set,
    /// each in-service source adds its internal admittance to ground.
    pub fn admittance(&self, with_sources: bool) -> DMatrix<Complex64> {
        let n = self.bus_count();
        let mut y = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
        for b in &self.branches {
            let yb = b.z.inv();
            y[(b.from, b.from)] += yb;
            y[(b.to, b.to)] += yb;
            y[(b.from, b.to)] -= yb;
            y[(b.to, b.from)] -= yb;
        }
        if with_sources {
            for s in self.active_sources() {
                y[(s.bus, s.bus)] += s.z.inv();
            }
        }
        y
    }
}
