//! Three-phase bolted fault analysis through the bus impedance matrix.

use std::collections::BTreeMap;
use std::io;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netmodel::{self, BusId, Network, NetworkError, PerUnitModel, RelayId, Scenario};

/// Contributions below this magnitude (pu) carry no direction.
pub const DIRECTION_THRESHOLD_PU: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ShortCircuitError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("no in-service source")]
    NoSource,
    #[error("bus admittance matrix is singular (part of the network has no path to a source)")]
    Singular,
    #[error("bus {0} is not in the impedance matrix")]
    UnknownBus(BusId),
    #[error("study csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("study csv: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone)]
pub struct BusImpedanceMatrix {
    pub bus_ids: Vec<BusId>,
    pub z: DMatrix<Complex64>,
    pub scenario: String,
}

impl BusImpedanceMatrix {
    pub fn index_of(&self, bus: BusId) -> Option<usize> {
        self.bus_ids.iter().position(|b| *b == bus)
    }

    /// Driving-point impedance at a bus.
    pub fn driving_point(&self, bus: BusId) -> Option<Complex64> {
        self.index_of(bus).map(|k| self.z[(k, k)])
    }

    pub fn max_asymmetry(&self) -> f64 {
        let n = self.z.nrows();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..i {
                worst = worst.max((self.z[(i, j)] - self.z[(j, i)]).norm());
            }
        }
        worst
    }
}

pub fn build_zbus(
    pu: &PerUnitModel,
    scenario: &str,
) -> Result<BusImpedanceMatrix, ShortCircuitError> {
    if pu.active_sources().next().is_none() {
        return Err(ShortCircuitError::NoSource);
    }
    let y = pu.admittance(true);
    let z = y.lu().try_inverse().ok_or(ShortCircuitError::Singular)?;
    if z.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(ShortCircuitError::Singular);
    }
    Ok(BusImpedanceMatrix {
        bus_ids: pu.bus_ids.clone(),
        z,
        scenario: scenario.to_string(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Reverse,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Contribution {
    pub amps: f64,
    pub direction: Direction,
}

/// Complex post-fault state kept for computed faults.
#[derive(Debug, Clone, PartialEq)]
pub struct FaultPhasors {
    pub fault_current_pu: Complex64,
    pub voltages_pu: Vec<Complex64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaultResult {
    pub fault_bus: BusId,
    pub fault_current_a: f64,
    /// Current seen by each relay; empty when only the bus total is known.
    pub contributions: BTreeMap<RelayId, Contribution>,
    pub phasors: Option<FaultPhasors>,
}

/// How a relay sees a fault in a given study.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RelayCurrent {
    Amps(f64),
    /// The relay sees no current in its operating direction.
    NotSeen,
    /// The study has no data for the fault bus.
    NoData,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaultOptions {
    pub base_mva: f64,
    pub prefault_voltage_pu: f64,
    pub fault_impedance_pu: Complex64,
}

impl Default for FaultOptions {
    fn default() -> Self {
        Self {
            base_mva: netmodel::DEFAULT_BASE_MVA,
            prefault_voltage_pu: 1.0,
            fault_impedance_pu: Complex64::new(0.0, 0.0),
        }
    }
}

pub fn fault_at_bus(
    pu: &PerUnitModel,
    zbus: &BusImpedanceMatrix,
    bus: BusId,
    opts: &FaultOptions,
) -> Result<FaultResult, ShortCircuitError> {
    let k = zbus
        .index_of(bus)
        .ok_or(ShortCircuitError::UnknownBus(bus))?;
    let v0 = Complex64::new(opts.prefault_voltage_pu, 0.0);
    let i_f = v0 / (zbus.z[(k, k)] + opts.fault_impedance_pu);
    let voltages: Vec<Complex64> = (0..zbus.bus_ids.len())
        .map(|i| v0 - zbus.z[(i, k)] * i_f)
        .collect();

    let contributions = pu
        .relays
        .iter()
        .map(|r| {
            let br = &pu.branches[r.branch];
            let other = if br.from == r.at { br.to } else { br.from };
            let current = (voltages[r.at] - voltages[other]) / br.z;
            let direction = if current.norm() < DIRECTION_THRESHOLD_PU {
                Direction::None
            } else if (current * i_f.conj()).re > 0.0 {
                Direction::Forward
            } else {
                Direction::Reverse
            };
            let amps = current.norm() * pu.base_current_a(r.at);
            (r.id, Contribution { amps, direction })
        })
        .collect();

    Ok(FaultResult {
        fault_bus: bus,
        fault_current_a: i_f.norm() * pu.base_current_a(k),
        contributions,
        phasors: Some(FaultPhasors {
            fault_current_pu: i_f,
            voltages_pu: voltages,
        }),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaultStudy {
    pub scenario: String,
    pub faults: BTreeMap<BusId, FaultResult>,
}

impl FaultStudy {
    pub fn new(scenario: impl Into<String>) -> Self {
        Self {
            scenario: scenario.into(),
            faults: BTreeMap::new(),
        }
    }

    pub fn fault(&self, bus: BusId) -> Option<&FaultResult> {
        self.faults.get(&bus)
    }

    /// Current the relay measures for a fault at `bus`. Studies without
    /// per-relay data fall back to the bus fault current.
    pub fn relay_current(&self, bus: BusId, relay: RelayId, directional: bool) -> RelayCurrent {
        let Some(fault) = self.faults.get(&bus) else {
            return RelayCurrent::NoData;
        };
        if fault.contributions.is_empty() {
            return RelayCurrent::Amps(fault.fault_current_a);
        }
        match fault.contributions.get(&relay) {
            None => RelayCurrent::NotSeen,
            Some(c) => match c.direction {
                Direction::Forward => RelayCurrent::Amps(c.amps),
                Direction::Reverse if !directional => RelayCurrent::Amps(c.amps),
                Direction::Reverse | Direction::None => RelayCurrent::NotSeen,
            },
        }
    }

    /// Writes the study as CSV, one line per (fault bus, relay).
    pub fn write_csv<W: io::Write>(&self, writer: W) -> Result<(), ShortCircuitError> {
        write_studies_csv(std::slice::from_ref(self), writer)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct StudyRecord {
    fault_bus: BusId,
    scenario: String,
    if_amps: f64,
    relay_id: Option<RelayId>,
    contribution_amps: Option<f64>,
    direction: Option<Direction>,
}

pub fn write_studies_csv<W: io::Write>(
    studies: &[FaultStudy],
    writer: W,
) -> Result<(), ShortCircuitError> {
    let mut w = csv::Writer::from_writer(writer);
    for study in studies {
        for fault in study.faults.values() {
            let base = |relay_id, contribution_amps, direction| StudyRecord {
                fault_bus: fault.fault_bus,
                scenario: study.scenario.clone(),
                if_amps: fault.fault_current_a,
                relay_id,
                contribution_amps,
                direction,
            };
            if fault.contributions.is_empty() {
                w.serialize(base(None, None, None))?;
            }
            for (id, c) in &fault.contributions {
                w.serialize(base(Some(*id), Some(c.amps), Some(c.direction)))?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads studies written by [`write_studies_csv`] (or prepared by hand),
/// grouped by scenario in order of first appearance.
pub fn read_studies_csv<R: io::Read>(reader: R) -> Result<Vec<FaultStudy>, ShortCircuitError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut studies: Vec<FaultStudy> = Vec::new();
    for record in rdr.deserialize() {
        let rec: StudyRecord = record?;
        let pos = match studies.iter().position(|s| s.scenario == rec.scenario) {
            Some(p) => p,
            None => {
                studies.push(FaultStudy::new(rec.scenario.clone()));
                studies.len() - 1
            }
        };
        let fault = studies[pos]
            .faults
            .entry(rec.fault_bus)
            .or_insert_with(|| FaultResult {
                fault_bus: rec.fault_bus,
                fault_current_a: rec.if_amps,
                contributions: BTreeMap::new(),
                phasors: None,
            });
        if let (Some(id), Some(amps)) = (rec.relay_id, rec.contribution_amps) {
            fault.contributions.insert(
                id,
                Contribution {
                    amps,
                    direction: rec.direction.unwrap_or(Direction::Forward),
                },
            );
        }
    }
    Ok(studies)
}

/// Faults every requested bus of `network` under `scenario`.
pub fn run_fault_study(
    network: &Network,
    scenario: &Scenario,
    buses: &[BusId],
    opts: &FaultOptions,
) -> Result<FaultStudy, ShortCircuitError> {
    let mut study = FaultStudy::new(scenario.name.clone());
    if buses.is_empty() {
        return Ok(study);
    }
    let active = netmodel::apply_scenario(network, scenario)?;
    let pu = netmodel::to_per_unit(&active, opts.base_mva)?;
    let zbus = build_zbus(&pu, &scenario.name)?;
    for bus in buses {
        study
            .faults
            .insert(*bus, fault_at_bus(&pu, &zbus, *bus, opts)?);
    }
    Ok(study)
}
