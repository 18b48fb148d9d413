//! Remedies for DG-induced miscoordination.
//!
//! Two remedies are modelled. The adaptive redesign recomputes settings for
//! the DG-connected network and therefore needs a communication link to
//! switch between setting groups. Curve selection keeps every PS and TMS and
//! only moves the maloperating relays onto steeper characteristics, giving a
//! single setting group that coordinates with and without DG.

use std::collections::{BTreeMap, BTreeSet};
use std::io;

use thiserror::Error;

use crate::coordination::{
    self, CoordinationError, CoordinationReport, CtiPolicy, Design, DesignIssue, DesignParams,
    SettingsSet,
};
use crate::loadflow::{self, LoadFlowError, SolveOptions};
use crate::netmodel::{Network, PairDecl, RelayId, Scenario};
use crate::relay::CurveKind;
use crate::report::TextTable;
use crate::shortcircuit::{self, FaultOptions, FaultStudy, RelayCurrent, ShortCircuitError};

/// Curves tried for a candidate relay, in order.
pub const SEARCH_ORDER: [CurveKind; 3] = [
    CurveKind::VeryInverse,
    CurveKind::ExtremelyInverse,
    CurveKind::LongInverse,
];

pub const COMMUNICATION_CAVEAT: &str =
    "redesigned settings hold only while DG is connected; switching between setting groups needs a communication link";

#[derive(Debug, Error)]
pub enum StrategyError {
    #[error(transparent)]
    Coordination(#[from] CoordinationError),
    #[error(transparent)]
    ShortCircuit(#[from] ShortCircuitError),
    #[error(transparent)]
    LoadFlow(#[from] LoadFlowError),
    #[error("no curve assignment over relays {candidates:?} coordinates both scenarios; best leaves {residual} miscoordinated rows")]
    Exhausted {
        candidates: Vec<RelayId>,
        residual: usize,
        best: Box<DualReport>,
    },
    #[error("assignment csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("assignment csv: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveAssignment {
    pub curves: BTreeMap<RelayId, CurveKind>,
    pub changed_relays: BTreeSet<RelayId>,
}

impl CurveAssignment {
    /// Curves of `baseline` with `overrides` applied.
    pub fn from_overrides(
        baseline: &SettingsSet,
        overrides: &BTreeMap<RelayId, CurveKind>,
    ) -> Self {
        let curves: BTreeMap<RelayId, CurveKind> = baseline
            .settings
            .iter()
            .map(|(id, s)| (*id, overrides.get(id).copied().unwrap_or(s.curve)))
            .collect();
        let changed_relays = curves
            .iter()
            .filter(|(id, c)| baseline.settings[*id].curve != **c)
            .map(|(id, _)| *id)
            .collect();
        Self {
            curves,
            changed_relays,
        }
    }

    pub fn apply(&self, settings: &SettingsSet) -> SettingsSet {
        settings.with_curves(&self.curves)
    }

    pub fn write_csv<W: io::Write>(&self, writer: W) -> Result<(), StrategyError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["relay_id", "curve"])?;
        for (id, c) in &self.curves {
            w.write_record([id.to_string(), c.label().to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualReport {
    pub report_without_dg: CoordinationReport,
    pub report_with_dg: CoordinationReport,
    pub assignment: CurveAssignment,
}

impl DualReport {
    pub fn miscoordinations(&self) -> usize {
        self.report_without_dg.miscoordination_count() + self.report_with_dg.miscoordination_count()
    }

    pub fn is_clean(&self) -> bool {
        self.miscoordinations() == 0
    }

    pub fn write_csv<W: io::Write>(&self, writer: W) -> Result<(), StrategyError> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["Scenario"];
        header.extend(CoordinationReport::COLUMNS);
        w.write_record(&header)?;
        for report in [&self.report_without_dg, &self.report_with_dg] {
            let mut buf = Vec::new();
            report.write_csv(&mut buf)?;
            let mut rdr = csv::Reader::from_reader(buf.as_slice());
            for rec in rdr.records() {
                let rec = rec?;
                let mut row = vec![report.scenario.as_str()];
                row.extend(rec.iter());
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_text(&self) -> String {
        format!(
            "{}\n{}",
            self.report_without_dg.to_text(),
            self.report_with_dg.to_text()
        )
    }
}

fn dual(
    settings: &SettingsSet,
    assignment: CurveAssignment,
    without_dg: &FaultStudy,
    with_dg: &FaultStudy,
    pairs: &[PairDecl],
    policy: &CtiPolicy,
) -> Result<DualReport, CoordinationError> {
    let applied = assignment.apply(settings);
    Ok(DualReport {
        report_without_dg: coordination::verify(&applied, without_dg, pairs, policy)?,
        report_with_dg: coordination::verify(&applied, with_dg, pairs, policy)?,
        assignment,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Redesign {
    pub design: Design,
    pub requires_communication: bool,
    pub caveat: &'static str,
}

/// Reruns the setting design against the DG-connected fault currents.
pub fn adaptive_redesign(
    network: &Network,
    fault_study_with_dg: &FaultStudy,
    pairs: &[PairDecl],
    load_currents: &BTreeMap<RelayId, f64>,
    params: &DesignParams,
) -> Result<Redesign, StrategyError> {
    let design = if pairs.is_empty() {
        Design {
            settings: SettingsSet::new(fault_study_with_dg.scenario.clone()),
            issues: Vec::new(),
        }
    } else {
        coordination::design_settings(network, fault_study_with_dg, pairs, load_currents, params)?
    };
    Ok(Redesign {
        design,
        requires_communication: true,
        caveat: COMMUNICATION_CAVEAT,
    })
}

/// Moves every relay onto one curve, keeping PS and TMS.
pub fn uniform_curve_trial(
    settings: &SettingsSet,
    curve: CurveKind,
    without_dg: &FaultStudy,
    with_dg: &FaultStudy,
    pairs: &[PairDecl],
    policy: &CtiPolicy,
) -> Result<DualReport, StrategyError> {
    let overrides = settings.settings.keys().map(|id| (*id, curve)).collect();
    let assignment = CurveAssignment::from_overrides(settings, &overrides);
    Ok(dual(
        settings, assignment, without_dg, with_dg, pairs, policy,
    )?)
}

/// Relays in flagged rows plus their neighbours along the declared chains.
pub fn candidate_relays(reports: &[&CoordinationReport], pairs: &[PairDecl]) -> BTreeSet<RelayId> {
    let flagged: BTreeSet<RelayId> = reports
        .iter()
        .flat_map(|r| coordination::miscoordinated_relays(r))
        .collect();
    let mut out = flagged.clone();
    for p in pairs {
        let involved = std::iter::once(&p.primary_relay).chain(&p.backup_relays);
        for r in involved {
            if !flagged.contains(r) {
                continue;
            }
            if *r == p.primary_relay {
                out.extend(&p.backup_relays);
            } else {
                out.insert(p.primary_relay);
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SearchLimits {
    pub max_evaluations: usize,
}

impl Default for SearchLimits {
    fn default() -> Self {
        Self {
            max_evaluations: 20_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Restoration {
    pub report: DualReport,
    pub candidates: BTreeSet<RelayId>,
    pub evaluations: usize,
}

struct Search<'a> {
    settings: &'a SettingsSet,
    without_dg: &'a FaultStudy,
    with_dg: &'a FaultStudy,
    pairs: &'a [PairDecl],
    policy: &'a CtiPolicy,
    evaluations: usize,
    limit: usize,
    best: Option<DualReport>,
}

impl Search<'_> {
    fn evaluate(
        &mut self,
        overrides: &BTreeMap<RelayId, CurveKind>,
    ) -> Result<Option<DualReport>, CoordinationError> {
        self.evaluations += 1;
        let assignment = CurveAssignment::from_overrides(self.settings, overrides);
        let report = dual(
            self.settings,
            assignment,
            self.without_dg,
            self.with_dg,
            self.pairs,
            self.policy,
        )?;
        if report.is_clean() {
            return Ok(Some(report));
        }
        let better = match &self.best {
            None => true,
            Some(b) => report.miscoordinations() < b.miscoordinations(),
        };
        if better {
            self.best = Some(report);
        }
        Ok(None)
    }

    /// Tries every curve combination over `subset`, depth first.
    fn assign(
        &mut self,
        subset: &[RelayId],
        overrides: &mut BTreeMap<RelayId, CurveKind>,
    ) -> Result<Option<DualReport>, CoordinationError> {
        let Some((&relay, rest)) = subset.split_first() else {
            return self.evaluate(overrides);
        };
        let current = self.settings.settings[&relay].curve;
        for curve in SEARCH_ORDER
            .into_iter()
            .chain([CurveKind::NormalInverse])
            .filter(|c| *c != current)
        {
            if self.evaluations >= self.limit {
                return Ok(None);
            }
            overrides.insert(relay, curve);
            if let Some(found) = self.assign(rest, overrides)? {
                return Ok(Some(found));
            }
        }
        overrides.remove(&relay);
        Ok(None)
    }

    /// Subsets of `pool` of size `k` in lexicographic order.
    fn subsets(
        &mut self,
        pool: &[RelayId],
        k: usize,
        chosen: &mut Vec<RelayId>,
    ) -> Result<Option<DualReport>, CoordinationError> {
        if chosen.len() == k {
            return self.assign(&chosen.clone(), &mut BTreeMap::new());
        }
        let need = k - chosen.len();
        for i in 0..pool.len() {
            if pool.len() - i < need || self.evaluations >= self.limit {
                break;
            }
            chosen.push(pool[i]);
            let found = self.subsets(&pool[i + 1..], k, chosen)?;
            chosen.pop();
            if found.is_some() {
                return Ok(found);
            }
        }
        Ok(None)
    }
}

/// Searches for the smallest set of curve changes, among relays involved in
/// miscoordination and their chain neighbours, that coordinates both
/// scenarios with PS and TMS left untouched.
pub fn restore_by_curve_selection(
    settings: &SettingsSet,
    without_dg: &FaultStudy,
    with_dg: &FaultStudy,
    pairs: &[PairDecl],
    policy: &CtiPolicy,
    limits: &SearchLimits,
) -> Result<Restoration, StrategyError> {
    let baseline = dual(
        settings,
        CurveAssignment::from_overrides(settings, &BTreeMap::new()),
        without_dg,
        with_dg,
        pairs,
        policy,
    )?;
    if baseline.is_clean() {
        return Ok(Restoration {
            report: baseline,
            candidates: BTreeSet::new(),
            evaluations: 1,
        });
    }
    let candidates = candidate_relays(
        &[&baseline.report_without_dg, &baseline.report_with_dg],
        pairs,
    );
    let pool: Vec<RelayId> = candidates
        .iter()
        .copied()
        .filter(|r| settings.settings.contains_key(r))
        .collect();
    let mut search = Search {
        settings,
        without_dg,
        with_dg,
        pairs,
        policy,
        evaluations: 1,
        limit: limits.max_evaluations,
        best: Some(baseline),
    };
    for k in 1..=pool.len() {
        if let Some(report) = search.subsets(&pool, k, &mut Vec::new())? {
            return Ok(Restoration {
                report,
                candidates,
                evaluations: search.evaluations,
            });
        }
    }
    let best = search.best.expect("baseline recorded");
    Err(StrategyError::Exhausted {
        candidates: pool,
        residual: best.miscoordinations(),
        best: Box::new(best),
    })
}

/// Everything needed to compare the remedies on one network.
#[derive(Debug, Clone)]
pub struct StudyInputs {
    pub network: Network,
    pub pairs: Vec<PairDecl>,
    pub baseline: SettingsSet,
    pub without_dg: FaultStudy,
    pub with_dg: FaultStudy,
    pub load_currents: BTreeMap<RelayId, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PipelineOptions {
    pub fault: FaultOptions,
    pub solver: SolveOptions,
    pub design: DesignParams,
}

impl StudyInputs {
    /// Fault studies of every bus in both scenarios, load currents from the
    /// DG-free load flow, and a baseline design against the DG-free study.
    pub fn from_network(
        network: &Network,
        without_dg: &Scenario,
        with_dg: &Scenario,
        opts: &PipelineOptions,
    ) -> Result<Self, StrategyError> {
        let buses = network.bus_ids();
        let study_off = shortcircuit::run_fault_study(network, without_dg, &buses, &opts.fault)?;
        let study_on = shortcircuit::run_fault_study(network, with_dg, &buses, &opts.fault)?;
        let flow =
            loadflow::solve_scenario(network, without_dg, opts.fault.base_mva, &opts.solver)?;
        let load_currents = loadflow::relay_load_currents(network, &flow);
        let pairs = coordination::enumerate_pairs(network)?;
        let baseline = baseline_design(
            network,
            &study_off,
            Some(&study_on),
            &pairs,
            &load_currents,
            &opts.design,
        )?
        .settings;
        Ok(Self {
            network: network.clone(),
            pairs,
            baseline,
            without_dg: study_off,
            with_dg: study_on,
            load_currents,
        })
    }
}

/// Setting design against the DG-free study. Relays that see no fault there
/// (the DG feeder) are graded against `with_dg` instead, when given.
pub fn baseline_design(
    network: &Network,
    without_dg: &FaultStudy,
    with_dg: Option<&FaultStudy>,
    pairs: &[PairDecl],
    load_currents: &BTreeMap<RelayId, f64>,
    params: &DesignParams,
) -> Result<Design, CoordinationError> {
    let mut design =
        coordination::design_settings(network, without_dg, pairs, load_currents, params)?;
    let dg_only: BTreeSet<RelayId> = design
        .settings
        .settings
        .values()
        .filter(|s| !sees_any_fault(without_dg, s.relay_id, s.directional))
        .map(|s| s.relay_id)
        .collect();
    if let (false, Some(with_dg)) = (dg_only.is_empty(), with_dg) {
        let on = coordination::design_settings(network, with_dg, pairs, load_currents, params)?;
        for id in &dg_only {
            if let Some(s) = on.settings.get(*id) {
                design.settings.insert(*s);
            }
        }
        design.issues.extend(on.issues.into_iter().filter(|i| {
            let (DesignIssue::TmsOutOfRange { relay, .. }
            | DesignIssue::PrimaryNoPickup { relay, .. }
            | DesignIssue::BackupNoPickup { relay, .. }) = i;
            dg_only.contains(relay)
        }));
    }
    Ok(design)
}

fn sees_any_fault(study: &FaultStudy, relay: RelayId, directional: bool) -> bool {
    study
        .faults
        .keys()
        .any(|bus| matches!(study.relay_current(*bus, relay, directional), RelayCurrent::Amps(a) if a > 0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StrategyKind {
    Original,
    AdaptiveRedesign,
    CurveSelection,
}

impl StrategyKind {
    pub fn label(self) -> &'static str {
        match self {
            StrategyKind::Original => "original settings",
            StrategyKind::AdaptiveRedesign => "adaptive redesign",
            StrategyKind::CurveSelection => "curve selection",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub strategy: StrategyKind,
    pub miscoordinations_without_dg: usize,
    pub miscoordinations_with_dg: usize,
    pub flagged_buses_without_dg: BTreeSet<u32>,
    pub flagged_buses_with_dg: BTreeSet<u32>,
    pub communication_required: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategySummary {
    pub rows: Vec<SummaryRow>,
    pub restoration: Result<CurveAssignment, String>,
}

impl StrategySummary {
    pub fn to_text(&self) -> String {
        let buses = |b: &BTreeSet<u32>| {
            if b.is_empty() {
                "-".to_string()
            } else {
                b.iter()
                    .map(|x| x.to_string())
                    .collect::<Vec<_>>()
                    .join(",")
            }
        };
        let mut t = TextTable::new([
            "Strategy",
            "MC without DG",
            "MC with DG",
            "Buses without",
            "Buses with",
            "Comm link",
        ]);
        for r in &self.rows {
            t.row([
                r.strategy.label().to_string(),
                r.miscoordinations_without_dg.to_string(),
                r.miscoordinations_with_dg.to_string(),
                buses(&r.flagged_buses_without_dg),
                buses(&r.flagged_buses_with_dg),
                if r.communication_required {
                    "yes"
                } else {
                    "no"
                }
                .to_string(),
            ]);
        }
        t.render()
    }
}

fn summary_row(strategy: StrategyKind, report: &DualReport) -> SummaryRow {
    SummaryRow {
        strategy,
        miscoordinations_without_dg: report.report_without_dg.miscoordination_count(),
        miscoordinations_with_dg: report.report_with_dg.miscoordination_count(),
        flagged_buses_without_dg: report.report_without_dg.flagged_buses(),
        flagged_buses_with_dg: report.report_with_dg.flagged_buses(),
        communication_required: strategy == StrategyKind::AdaptiveRedesign,
    }
}

/// Contrasts the original settings, the adaptive redesign and curve
/// selection in both scenarios.
pub fn compare_strategies(
    inputs: &StudyInputs,
    params: &DesignParams,
    limits: &SearchLimits,
) -> Result<StrategySummary, StrategyError> {
    let policy = &params.policy;
    let unchanged = |s: &SettingsSet| CurveAssignment::from_overrides(s, &BTreeMap::new());

    let original = dual(
        &inputs.baseline,
        unchanged(&inputs.baseline),
        &inputs.without_dg,
        &inputs.with_dg,
        &inputs.pairs,
        policy,
    )?;
    let redesign = adaptive_redesign(
        &inputs.network,
        &inputs.with_dg,
        &inputs.pairs,
        &inputs.load_currents,
        params,
    )?;
    let redesigned = &redesign.design.settings;
    let adaptive = dual(
        redesigned,
        unchanged(redesigned),
        &inputs.without_dg,
        &inputs.with_dg,
        &inputs.pairs,
        policy,
    )?;
    let (selection, restoration) = match restore_by_curve_selection(
        &inputs.baseline,
        &inputs.without_dg,
        &inputs.with_dg,
        &inputs.pairs,
        policy,
        limits,
    ) {
        Ok(r) => {
            let a = r.report.assignment.clone();
            (r.report, Ok(a))
        }
        Err(StrategyError::Exhausted { best, .. }) => {
            let msg = format!(
                "no coordinating assignment; best leaves {} rows",
                best.miscoordinations()
            );
            (*best, Err(msg))
        }
        Err(e) => return Err(e),
    };
    Ok(StrategySummary {
        rows: vec![
            summary_row(StrategyKind::Original, &original),
            summary_row(StrategyKind::AdaptiveRedesign, &adaptive),
            summary_row(StrategyKind::CurveSelection, &selection),
        ],
        restoration,
    })
}
