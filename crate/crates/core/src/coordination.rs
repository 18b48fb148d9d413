//! Relay setting design along primary/backup chains and CTI verification.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::io;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netmodel::{BusId, Network, PairDecl, RelayId};
use crate::relay::{self, CurveKind, RelayError, RelaySetting, TmsRange};
use crate::report::TextTable;
use crate::shortcircuit::{FaultStudy, RelayCurrent};

/// Slack on the CTI comparison so a margin that equals the threshold in
/// exact arithmetic is not flagged because of round-off.
pub const CTI_EPS_MS: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum CoordinationError {
    #[error("relay {0} has no setting")]
    MissingSetting(RelayId),
    #[error("relay {0} is not defined in the network")]
    UnknownRelay(RelayId),
    #[error("fault study has no result for bus {0}")]
    MissingFault(BusId),
    #[error("primary/backup declarations form a cycle through relays {0:?}")]
    Cycle(Vec<RelayId>),
    #[error("topology is not radial and no pairs are declared")]
    NonRadial,
    #[error("network has no grid source")]
    NoGrid,
    #[error("relay {relay}: {source}")]
    Relay {
        relay: RelayId,
        #[source]
        source: RelayError,
    },
    #[error("settings csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("settings csv: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CtiPolicy {
    pub requirement_ms: f64,
    pub tolerance_ms: f64,
}

impl Default for CtiPolicy {
    fn default() -> Self {
        Self {
            requirement_ms: 200.0,
            tolerance_ms: 10.0,
        }
    }
}

impl CtiPolicy {
    pub fn threshold_ms(&self) -> f64 {
        self.requirement_ms - self.tolerance_ms
    }

    pub fn is_miscoordinated(&self, cti_ms: f64) -> bool {
        cti_ms < self.threshold_ms() - CTI_EPS_MS
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            requirement_ms: self.requirement_ms * k,
            tolerance_ms: self.tolerance_ms * k,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SettingsSet {
    pub scenario: String,
    pub settings: BTreeMap<RelayId, RelaySetting>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SettingRecord {
    relay_id: RelayId,
    curve: String,
    ps: f64,
    tms: f64,
    ctr: f64,
    directional: bool,
}

impl SettingsSet {
    pub fn new(scenario: impl Into<String>) -> Self {
        Self {
            scenario: scenario.into(),
            settings: BTreeMap::new(),
        }
    }

    pub fn get(&self, relay: RelayId) -> Option<&RelaySetting> {
        self.settings.get(&relay)
    }

    pub fn insert(&mut self, setting: RelaySetting) {
        self.settings.insert(setting.relay_id, setting);
    }

    /// Same PS/TMS/CTR with every relay moved to `curve`.
    pub fn with_uniform_curve(&self, curve: CurveKind) -> Self {
        Self {
            scenario: self.scenario.clone(),
            settings: self
                .settings
                .iter()
                .map(|(id, s)| (*id, s.with_curve(curve)))
                .collect(),
        }
    }

    /// Same PS/TMS/CTR with the listed relays moved to the given curves.
    pub fn with_curves(&self, curves: &BTreeMap<RelayId, CurveKind>) -> Self {
        Self {
            scenario: self.scenario.clone(),
            settings: self
                .settings
                .iter()
                .map(|(id, s)| (*id, curves.get(id).map_or(*s, |c| s.with_curve(*c))))
                .collect(),
        }
    }

    pub fn write_csv<W: io::Write>(&self, writer: W) -> Result<(), CoordinationError> {
        let mut w = csv::Writer::from_writer(writer);
        for s in self.settings.values() {
            w.serialize(SettingRecord {
                relay_id: s.relay_id,
                curve: s.curve.code().to_string(),
                ps: s.plug_setting,
                tms: s.tms,
                ctr: s.ct_ratio,
                directional: s.directional,
            })?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: io::Read>(
        scenario: impl Into<String>,
        reader: R,
    ) -> Result<Self, CoordinationError> {
        let mut out = Self::new(scenario);
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        for record in rdr.deserialize() {
            let rec: SettingRecord = record?;
            let curve = rec
                .curve
                .parse()
                .map_err(|source| CoordinationError::Relay {
                    relay: rec.relay_id,
                    source,
                })?;
            out.insert(RelaySetting {
                relay_id: rec.relay_id,
                curve,
                plug_setting: rec.ps,
                tms: rec.tms,
                ct_ratio: rec.ctr,
                directional: rec.directional,
            });
        }
        Ok(out)
    }

    /// Aligned table in the layout of a protection settings sheet.
    pub fn to_text(&self) -> String {
        let mut t = TextTable::new(["Relay", "Curve", "PS", "TMS", "CTR", "Type"]);
        for s in self.settings.values() {
            t.row([
                s.relay_id.to_string(),
                s.curve.code().to_string(),
                format!("{:.3}", s.plug_setting),
                format!("{:.3}", s.tms),
                format!("{}", s.ct_ratio),
                if s.directional { "Dir" } else { "ND" }.to_string(),
            ]);
        }
        t.render()
    }
}

/// What a relay does for one fault.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RelayResponse {
    Trips {
        current_a: f64,
        time_ms: f64,
    },
    NoPickup {
        current_a: f64,
    },
    /// Time too large to represent (multiple just above 1).
    Unbounded {
        current_a: f64,
    },
    /// No current in the relay's operating direction.
    NotSeen,
    /// No fault data for the bus.
    NoData,
}

impl RelayResponse {
    pub fn time_ms(&self) -> Option<f64> {
        match self {
            RelayResponse::Trips { time_ms, .. } => Some(*time_ms),
            _ => None,
        }
    }

    fn label(&self) -> String {
        match self {
            RelayResponse::Trips { time_ms, .. } => format!("{time_ms:.1}"),
            RelayResponse::NoPickup { .. } => "no-pickup".into(),
            RelayResponse::Unbounded { .. } => "unbounded".into(),
            RelayResponse::NotSeen | RelayResponse::NoData => "n/a".into(),
        }
    }
}

pub fn respond(setting: &RelaySetting, study: &FaultStudy, bus: BusId) -> RelayResponse {
    match study.relay_current(bus, setting.relay_id, setting.directional) {
        RelayCurrent::NoData => RelayResponse::NoData,
        RelayCurrent::NotSeen => RelayResponse::NotSeen,
        RelayCurrent::Amps(current_a) => match relay::operating_time(setting, current_a) {
            Ok(t) => RelayResponse::Trips {
                current_a,
                time_ms: t * 1e3,
            },
            Err(RelayError::Unbounded { .. }) => RelayResponse::Unbounded { current_a },
            Err(_) => RelayResponse::NoPickup { current_a },
        },
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoordinationRow {
    pub fault_bus: BusId,
    pub primary_relay: RelayId,
    pub backup_relay: Option<RelayId>,
    pub primary: RelayResponse,
    pub backup: Option<RelayResponse>,
    pub tp_ms: Option<f64>,
    pub tb_ms: Option<f64>,
    pub cti_ms: Option<f64>,
    pub miscoordination: bool,
}

impl CoordinationRow {
    /// False when the primary relay does not see this fault at all.
    pub fn applicable(&self) -> bool {
        !matches!(self.primary, RelayResponse::NotSeen | RelayResponse::NoData)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoordinationReport {
    pub scenario: String,
    pub rows: Vec<CoordinationRow>,
    pub cti_requirement_ms: f64,
    pub tolerance_ms: f64,
}

impl CoordinationReport {
    pub fn miscoordination_count(&self) -> usize {
        self.rows.iter().filter(|r| r.miscoordination).count()
    }

    pub fn is_clean(&self) -> bool {
        self.miscoordination_count() == 0
    }

    pub fn flagged_buses(&self) -> BTreeSet<BusId> {
        self.rows
            .iter()
            .filter(|r| r.miscoordination)
            .map(|r| r.fault_bus)
            .collect()
    }

    fn cells(&self) -> Vec<[String; 7]> {
        self.rows
            .iter()
            .map(|r| {
                [
                    r.fault_bus.to_string(),
                    r.primary_relay.to_string(),
                    r.backup_relay.map_or("Nil".into(), |b| b.to_string()),
                    r.primary.label(),
                    r.backup.map_or("Nil".into(), |b| b.label()),
                    r.cti_ms.map_or("Nil".into(), |c| format!("{c:.1}")),
                    if r.miscoordination { "Yes" } else { "Nil" }.into(),
                ]
            })
            .collect()
    }

    pub const COLUMNS: [&'static str; 7] = ["Bus", "Rp", "Rb", "Tp", "Tb", "CTI", "MC"];

    pub fn write_csv<W: io::Write>(&self, writer: W) -> Result<(), CoordinationError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(Self::COLUMNS)?;
        for row in self.cells() {
            w.write_record(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut t = TextTable::new(Self::COLUMNS);
        for row in self.cells() {
            t.row(row);
        }
        format!(
            "scenario: {}  (CTI {} ms, tolerance {} ms)\n{}",
            self.scenario,
            self.cti_requirement_ms,
            self.tolerance_ms,
            t.render()
        )
    }
}

/// Checks every declared primary/backup element against the CTI policy.
pub fn verify(
    settings: &SettingsSet,
    study: &FaultStudy,
    pairs: &[PairDecl],
    policy: &CtiPolicy,
) -> Result<CoordinationReport, CoordinationError> {
    let setting = |id: RelayId| {
        settings
            .get(id)
            .ok_or(CoordinationError::MissingSetting(id))
    };
    let mut rows = Vec::new();
    for pair in pairs {
        let primary = respond(setting(pair.primary_relay)?, study, pair.fault_bus);
        let tp = primary.time_ms();
        let backups: Vec<Option<RelayId>> = if pair.backup_relays.is_empty() {
            vec![None]
        } else {
            pair.backup_relays.iter().copied().map(Some).collect()
        };
        for backup_id in backups {
            let backup = match backup_id {
                Some(id) => Some(respond(setting(id)?, study, pair.fault_bus)),
                None => None,
            };
            let tb = backup.and_then(|b| b.time_ms());
            let cti = tp.zip(tb).map(|(p, b)| b - p);
            rows.push(CoordinationRow {
                fault_bus: pair.fault_bus,
                primary_relay: pair.primary_relay,
                backup_relay: backup_id,
                primary,
                backup,
                tp_ms: tp,
                tb_ms: tb,
                cti_ms: cti,
                miscoordination: cti.is_some_and(|c| policy.is_miscoordinated(c)),
            });
        }
    }
    Ok(CoordinationReport {
        scenario: study.scenario.clone(),
        rows,
        cti_requirement_ms: policy.requirement_ms,
        tolerance_ms: policy.tolerance_ms,
    })
}

/// Primary and backup relays of every flagged row.
pub fn miscoordinated_relays(report: &CoordinationReport) -> BTreeSet<RelayId> {
    report
        .rows
        .iter()
        .filter(|r| r.miscoordination)
        .flat_map(|r| std::iter::once(r.primary_relay).chain(r.backup_relay))
        .collect()
}

/// Declared pairs when present; otherwise pairs derived by walking each bus
/// back toward the grid on a radial network.
pub fn enumerate_pairs(network: &Network) -> Result<Vec<PairDecl>, CoordinationError> {
    if !network.pairs.is_empty() {
        return Ok(network.pairs.clone());
    }
    let root = network.grid().ok_or(CoordinationError::NoGrid)?.bus;
    if network.branches.len() + 1 != network.buses.len() {
        return Err(CoordinationError::NonRadial);
    }
    let mut parent: BTreeMap<BusId, (BusId, u32)> = BTreeMap::new();
    let mut seen = BTreeSet::from([root]);
    let mut queue = VecDeque::from([root]);
    while let Some(bus) = queue.pop_front() {
        for br in &network.branches {
            if let Some(next) = br.other_end(bus) {
                if seen.insert(next) {
                    parent.insert(next, (bus, br.id));
                    queue.push_back(next);
                }
            }
        }
    }
    if seen.len() != network.buses.len() {
        return Err(CoordinationError::NonRadial);
    }

    // relays looking downstream on the branch that feeds `bus`
    let feeding = |bus: BusId| -> Vec<RelayId> {
        let Some((up, branch)) = parent.get(&bus) else {
            return Vec::new();
        };
        let mut ids: Vec<RelayId> = network
            .relays
            .iter()
            .filter(|r| r.branch == *branch && r.located_at_bus == *up)
            .map(|r| r.id)
            .collect();
        ids.sort_unstable();
        ids
    };
    // first relay-bearing branch at or above `bus`
    let relays_above = |mut bus: BusId| -> (Vec<RelayId>, Option<BusId>) {
        loop {
            let ids = feeding(bus);
            let up = parent.get(&bus).map(|(u, _)| *u);
            if !ids.is_empty() {
                return (ids, up);
            }
            match up {
                Some(u) => bus = u,
                None => return (Vec::new(), None),
            }
        }
    };

    let mut pairs = Vec::new();
    for bus in network.bus_ids() {
        let (primaries, up) = relays_above(bus);
        if primaries.is_empty() {
            continue;
        }
        let backups = up.map(|u| relays_above(u).0).unwrap_or_default();
        for p in primaries {
            pairs.push(PairDecl::new(bus, p, backups.clone()));
        }
    }
    Ok(pairs)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignParams {
    pub policy: CtiPolicy,
    pub tms_floor: f64,
    pub overload_factor: f64,
    /// PS used when a relay carries no forward load current.
    pub min_plug_setting: f64,
    pub tms_range: TmsRange,
    pub clip_tms: bool,
    pub curve: CurveKind,
}

impl Default for DesignParams {
    fn default() -> Self {
        Self {
            policy: CtiPolicy::default(),
            tms_floor: 0.05,
            overload_factor: relay::DEFAULT_OVERLOAD_FACTOR,
            min_plug_setting: 0.1,
            tms_range: TmsRange::default(),
            clip_tms: false,
            curve: CurveKind::NormalInverse,
        }
    }
}

/// Non-fatal findings of a design run.
#[derive(Debug, Clone, PartialEq)]
pub enum DesignIssue {
    TmsOutOfRange { relay: RelayId, tms: f64 },
    PrimaryNoPickup { relay: RelayId, fault_bus: BusId },
    BackupNoPickup { relay: RelayId, fault_bus: BusId },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub settings: SettingsSet,
    pub issues: Vec<DesignIssue>,
}

/// Orders relays so every primary precedes its backups.
fn cascade_order(
    relays: &BTreeSet<RelayId>,
    pairs: &[PairDecl],
) -> Result<Vec<RelayId>, CoordinationError> {
    let mut indegree: BTreeMap<RelayId, usize> = relays.iter().map(|r| (*r, 0)).collect();
    let mut edges: BTreeMap<RelayId, BTreeSet<RelayId>> = BTreeMap::new();
    for p in pairs {
        for b in &p.backup_relays {
            if *b != p.primary_relay && edges.entry(p.primary_relay).or_default().insert(*b) {
                *indegree.entry(*b).or_default() += 1;
            }
        }
    }
    let mut ready: BTreeSet<RelayId> = indegree
        .iter()
        .filter(|(_, d)| **d == 0)
        .map(|(r, _)| *r)
        .collect();
    let mut order = Vec::with_capacity(indegree.len());
    while let Some(r) = ready.pop_first() {
        order.push(r);
        for b in edges.get(&r).into_iter().flatten() {
            let d = indegree.get_mut(b).expect("edge target counted");
            *d -= 1;
            if *d == 0 {
                ready.insert(*b);
            }
        }
    }
    if order.len() != indegree.len() {
        let stuck = indegree
            .into_iter()
            .filter(|(_, d)| *d > 0)
            .map(|(r, _)| r)
            .collect();
        return Err(CoordinationError::Cycle(stuck));
    }
    Ok(order)
}

/// Sequential setting design: PS from load current, TMS floor on relays
/// that back nobody up, then each backup timed to trip one CTI after its
/// primary at the fault current it measures.
pub fn design_settings(
    network: &Network,
    study: &FaultStudy,
    pairs: &[PairDecl],
    load_currents: &BTreeMap<RelayId, f64>,
    params: &DesignParams,
) -> Result<Design, CoordinationError> {
    for p in pairs {
        if study.fault(p.fault_bus).is_none() {
            return Err(CoordinationError::MissingFault(p.fault_bus));
        }
        for id in std::iter::once(&p.primary_relay).chain(&p.backup_relays) {
            if network.relay(*id).is_none() {
                return Err(CoordinationError::UnknownRelay(*id));
            }
        }
    }

    let mut settings = SettingsSet::new(study.scenario.clone());
    for r in &network.relays {
        let load = load_currents.get(&r.id).copied().unwrap_or(0.0);
        let pickup = relay::pickup_from_load(load, params.overload_factor).map_err(|source| {
            CoordinationError::Relay {
                relay: r.id,
                source,
            }
        })?;
        let ps =
            relay::plug_setting(pickup, r.ct_ratio).map_err(|source| CoordinationError::Relay {
                relay: r.id,
                source,
            })?;
        settings.insert(RelaySetting {
            relay_id: r.id,
            curve: params.curve,
            plug_setting: ps.max(params.min_plug_setting),
            tms: params.tms_floor,
            ct_ratio: r.ct_ratio,
            directional: r.directional,
        });
    }

    let relays: BTreeSet<RelayId> = settings.settings.keys().copied().collect();
    let mut issues = Vec::new();
    for relay_id in cascade_order(&relays, pairs)? {
        let mut tms = params.tms_floor;
        let backup = settings.settings[&relay_id];
        for pair in pairs.iter().filter(|p| p.backup_relays.contains(&relay_id)) {
            let primary = settings.settings[&pair.primary_relay];
            let tp = match respond(&primary, study, pair.fault_bus) {
                RelayResponse::Trips { time_ms, .. } => time_ms,
                RelayResponse::NoPickup { .. } | RelayResponse::Unbounded { .. } => {
                    issues.push(DesignIssue::PrimaryNoPickup {
                        relay: primary.relay_id,
                        fault_bus: pair.fault_bus,
                    });
                    continue;
                }
                RelayResponse::NotSeen | RelayResponse::NoData => continue,
            };
            let RelayCurrent::Amps(current) =
                study.relay_current(pair.fault_bus, relay_id, backup.directional)
            else {
                continue;
            };
            let target_s = (tp + params.policy.requirement_ms) / 1e3;
            match relay::solve_tms(
                backup.curve,
                target_s,
                backup.plug_setting,
                backup.ct_ratio,
                current,
            ) {
                Ok(t) => tms = tms.max(t),
                Err(RelayError::NoPickup { .. }) | Err(RelayError::Unbounded { .. }) => issues
                    .push(DesignIssue::BackupNoPickup {
                        relay: relay_id,
                        fault_bus: pair.fault_bus,
                    }),
                Err(source) => {
                    return Err(CoordinationError::Relay {
                        relay: relay_id,
                        source,
                    })
                }
            }
        }
        if !params.tms_range.contains(tms) {
            issues.push(DesignIssue::TmsOutOfRange {
                relay: relay_id,
                tms,
            });
            if params.clip_tms {
                tms = params.tms_range.clamp(tms);
            }
        }
        settings
            .settings
            .get_mut(&relay_id)
            .expect("setting exists")
            .tms = tms;
    }
    Ok(Design { settings, issues })
}

/// Load current implied by an existing plug setting.
pub fn load_currents_from_settings(
    settings: &SettingsSet,
    overload_factor: f64,
) -> BTreeMap<RelayId, f64> {
    settings
        .settings
        .values()
        .map(|s| (s.relay_id, s.pickup_a() / overload_factor))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shortcircuit::{Contribution, Direction, FaultResult};

    fn ni(id: RelayId, ps: f64, tms: f64) -> RelaySetting {
        RelaySetting {
            relay_id: id,
            curve: CurveKind::NormalInverse,
            plug_setting: ps,
            tms,
            ct_ratio: 1200.0,
            directional: true,
        }
    }

    fn bus_study(currents: &[(BusId, f64)]) -> FaultStudy {
        let mut s = FaultStudy::new("test");
        for (bus, amps) in currents {
            s.faults.insert(
                *bus,
                FaultResult {
                    fault_bus: *bus,
                    fault_current_a: *amps,
                    contributions: BTreeMap::new(),
                    phasors: None,
                },
            );
        }
        s
    }

    fn settings(list: &[RelaySetting]) -> SettingsSet {
        let mut s = SettingsSet::new("test");
        list.iter().for_each(|x| s.insert(*x));
        s
    }

    #[test]
    fn policy_threshold() {
        let p = CtiPolicy::default();
        assert_eq!(p.threshold_ms(), 190.0);
        assert!(!p.is_miscoordinated(190.0));
        assert!(!p.is_miscoordinated(213.0));
        assert!(p.is_miscoordinated(112.0));
        assert!(p.is_miscoordinated(189.99));
    }

    #[test]
    fn rows_for_tabulated_times() {
        // relay 32 NI at 2210 A gives 506 ms; relay 29 given a TMS that yields ~719 ms
        let r32 = ni(32, 0.275, 0.14);
        let t32 = r32.operating_time(2210.0).unwrap();
        let tms29 =
            relay::solve_tms(CurveKind::NormalInverse, 0.719, 0.848, 1200.0, 3000.0).unwrap();
        let mut study = bus_study(&[(27, 2210.0)]);
        study.faults.get_mut(&27).unwrap().contributions = BTreeMap::from([
            (
                32,
                Contribution {
                    amps: 2210.0,
                    direction: Direction::Forward,
                },
            ),
            (
                29,
                Contribution {
                    amps: 3000.0,
                    direction: Direction::Forward,
                },
            ),
        ]);
        let set = settings(&[r32, ni(29, 0.848, tms29)]);
        let rep = verify(
            &set,
            &study,
            &[PairDecl::new(27, 32, vec![29])],
            &CtiPolicy::default(),
        )
        .unwrap();
        let row = &rep.rows[0];
        assert!((row.tp_ms.unwrap() - t32 * 1e3).abs() < 1e-9);
        assert!((row.cti_ms.unwrap() - (719.0 - t32 * 1e3)).abs() < 1e-6);
        assert!(!row.miscoordination);
    }

    #[test]
    fn no_backup_row() {
        let set = settings(&[ni(1, 0.324, 0.19)]);
        let rep = verify(
            &set,
            &bus_study(&[(2, 501.0)]),
            &[PairDecl::new(2, 1, vec![])],
            &CtiPolicy::default(),
        )
        .unwrap();
        assert_eq!(rep.rows.len(), 1);
        let r = &rep.rows[0];
        assert_eq!(
            (r.backup_relay, r.tb_ms, r.cti_ms, r.miscoordination),
            (None, None, None, false)
        );
        assert!(miscoordinated_relays(&rep).is_empty());
    }

    #[test]
    fn no_pickup_recorded_in_row() {
        let set = settings(&[ni(1, 1.0, 0.1), ni(2, 0.5, 0.2)]);
        let rep = verify(
            &set,
            &bus_study(&[(3, 1000.0)]),
            &[PairDecl::new(3, 1, vec![2])],
            &CtiPolicy::default(),
        )
        .unwrap();
        let r = &rep.rows[0];
        assert!(matches!(r.primary, RelayResponse::NoPickup { .. }));
        assert!(r.cti_ms.is_none() && !r.miscoordination);
    }

    #[test]
    fn missing_setting_is_error() {
        let set = settings(&[ni(1, 1.0, 0.1)]);
        assert!(matches!(
            verify(
                &set,
                &bus_study(&[(3, 5000.0)]),
                &[PairDecl::new(3, 1, vec![9])],
                &CtiPolicy::default()
            ),
            Err(CoordinationError::MissingSetting(9))
        ));
    }

    #[test]
    fn flagged_relays_union() {
        // backup slower by only 100 ms
        let p = ni(5, 0.5, 0.1);
        let tp = p.operating_time(4000.0).unwrap();
        let tms_b =
            relay::solve_tms(CurveKind::NormalInverse, tp + 0.1, 0.5, 1200.0, 4000.0).unwrap();
        let set = settings(&[p, ni(6, 0.5, tms_b)]);
        let rep = verify(
            &set,
            &bus_study(&[(3, 4000.0)]),
            &[PairDecl::new(3, 5, vec![6])],
            &CtiPolicy::default(),
        )
        .unwrap();
        assert!(rep.rows[0].miscoordination);
        assert_eq!(miscoordinated_relays(&rep), BTreeSet::from([5, 6]));
        assert_eq!(rep.flagged_buses(), BTreeSet::from([3]));
    }

    #[test]
    fn cycle_detected() {
        let relays = BTreeSet::from([1, 2]);
        let pairs = [PairDecl::new(1, 1, vec![2]), PairDecl::new(2, 2, vec![1])];
        assert!(matches!(
            cascade_order(&relays, &pairs),
            Err(CoordinationError::Cycle(_))
        ));
    }

    #[test]
    fn settings_csv_round_trip() {
        let set = settings(&[
            ni(35, 0.598, 0.05),
            ni(1, 0.324, 0.19).with_curve(CurveKind::VeryInverse),
        ]);
        let mut buf = Vec::new();
        set.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf.clone())
            .unwrap()
            .starts_with("relay_id,curve,ps,tms,ctr,directional\n"));
        let back = SettingsSet::read_csv("test", buf.as_slice()).unwrap();
        assert_eq!(back, set);
    }

    #[test]
    fn report_columns_in_table_order() {
        let set = settings(&[ni(1, 0.324, 0.19)]);
        let rep = verify(
            &set,
            &bus_study(&[(2, 501.0)]),
            &[PairDecl::new(2, 1, vec![])],
            &CtiPolicy::default(),
        )
        .unwrap();
        let mut buf = Vec::new();
        rep.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("Bus,Rp,Rb,Tp,Tb,CTI,MC"));
        assert!(lines.next().unwrap().ends_with(",Nil,Nil,Nil"));
    }
}
