//! Newton-Raphson power flow, loss evaluation and DG siting sweeps.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::io;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

use crate::netmodel::{
    self, BranchId, BusId, Network, NetworkError, PerUnitModel, RelayId, Scenario, Source,
    SourceKind, SourceRole,
};

#[derive(Debug, Error)]
pub enum LoadFlowError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(
        "power flow did not converge after {iterations} iterations (mismatch {mismatch:.3e} pu)"
    )]
    NotConverged { iterations: usize, mismatch: f64 },
    #[error("singular Jacobian at iteration {0}")]
    SingularJacobian(usize),
    #[error("no slack bus: the grid source is missing or out of service")]
    NoSlack,
    #[error("DG size must be positive (got {0} MW)")]
    NonPositiveSize(f64),
    #[error("sweep table is empty")]
    EmptyTable,
    #[error("every candidate site is infeasible")]
    NoFeasibleSite,
    #[error("sweep csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("sweep csv: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub tolerance_pu: f64,
    pub max_iterations: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tolerance_pu: 1e-8,
            max_iterations: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchFlow {
    pub branch: BranchId,
    pub from_bus: BusId,
    pub to_bus: BusId,
    /// Power entering the branch at each end (pu).
    pub s_from_pu: Complex64,
    pub s_to_pu: Complex64,
    pub current_from_a: f64,
    pub current_to_a: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerFlowSolution {
    pub base_mva: f64,
    pub bus_ids: Vec<BusId>,
    pub voltages_pu: Vec<Complex64>,
    pub branch_flows: Vec<BranchFlow>,
    pub slack_injection_pu: Complex64,
    pub total_losses_kw: f64,
    pub converged: bool,
    pub iterations: usize,
    pub max_mismatch_pu: f64,
}

impl PowerFlowSolution {
    pub fn voltage(&self, bus: BusId) -> Option<Complex64> {
        self.bus_ids
            .iter()
            .position(|b| *b == bus)
            .map(|i| self.voltages_pu[i])
    }
}

fn specified_injections(pu: &PerUnitModel) -> Vec<Complex64> {
    let mut s: Vec<Complex64> = pu.loads.iter().map(|l| -l).collect();
    for src in pu.active_sources().filter(|s| s.role == SourceRole::Dg) {
        s[src.bus] += src.injection;
    }
    s
}

fn calc_injections(y: &DMatrix<Complex64>, v: &DVector<Complex64>) -> DVector<Complex64> {
    let current = y * v;
    v.zip_map(&current, |vi, ii| vi * ii.conj())
}

/// Runs Newton-Raphson from a flat start and returns the final state even
/// when the iteration cap is hit; check `converged`.
pub fn solve_unchecked(
    pu: &PerUnitModel,
    opts: &SolveOptions,
) -> Result<PowerFlowSolution, LoadFlowError> {
    let slack = pu
        .grid()
        .filter(|g| g.in_service)
        .ok_or(LoadFlowError::NoSlack)?
        .bus;
    let n = pu.bus_count();
    let y = pu.admittance(false);
    let spec = specified_injections(pu);
    let pq: Vec<usize> = (0..n).filter(|i| *i != slack).collect();
    let m = pq.len();

    let mut v = DVector::from_element(n, Complex64::new(1.0, 0.0));
    let mismatch = |v: &DVector<Complex64>| -> (DVector<f64>, f64) {
        let s = calc_injections(&y, v);
        let mut f = DVector::zeros(2 * m);
        for (k, &i) in pq.iter().enumerate() {
            let d = spec[i] - s[i];
            f[k] = d.re;
            f[m + k] = d.im;
        }
        let worst = f.amax();
        (f, worst)
    };

    let (mut f, mut worst) = mismatch(&v);
    let mut iterations = 0;
    while worst >= opts.tolerance_pu && iterations < opts.max_iterations {
        iterations += 1;
        // dS/dVa and dS/dVm in complex form, then split into the real Jacobian
        let current = &y * &v;
        let n_dir = v.map(|vi| {
            if vi.norm() > 0.0 {
                vi / vi.norm()
            } else {
                Complex64::new(1.0, 0.0)
            }
        });
        let mut jac = DMatrix::zeros(2 * m, 2 * m);
        for (r, &i) in pq.iter().enumerate() {
            for (c, &k) in pq.iter().enumerate() {
                let mut ds_dva = -Complex64::i() * v[i] * (y[(i, k)] * v[k]).conj();
                let mut ds_dvm = v[i] * (y[(i, k)] * n_dir[k]).conj();
                if i == k {
                    ds_dva += Complex64::i() * v[i] * current[i].conj();
                    ds_dvm += current[i].conj() * n_dir[i];
                }
                jac[(r, c)] = ds_dva.re;
                jac[(r, m + c)] = ds_dvm.re;
                jac[(m + r, c)] = ds_dva.im;
                jac[(m + r, m + c)] = ds_dvm.im;
            }
        }
        let dx = jac
            .lu()
            .solve(&f)
            .ok_or(LoadFlowError::SingularJacobian(iterations))?;
        for (k, &i) in pq.iter().enumerate() {
            let angle = v[i].arg() + dx[k];
            let mag = v[i].norm() + dx[m + k];
            v[i] = Complex64::from_polar(mag, angle);
        }
        (f, worst) = mismatch(&v);
    }

    let s = calc_injections(&y, &v);
    let branch_flows: Vec<BranchFlow> = pu
        .branches
        .iter()
        .map(|b| {
            let i_ft = (v[b.from] - v[b.to]) / b.z;
            BranchFlow {
                branch: b.id,
                from_bus: pu.bus_ids[b.from],
                to_bus: pu.bus_ids[b.to],
                s_from_pu: v[b.from] * i_ft.conj(),
                s_to_pu: v[b.to] * (-i_ft).conj(),
                current_from_a: i_ft.norm() * pu.base_current_a(b.from),
                current_to_a: i_ft.norm() * pu.base_current_a(b.to),
            }
        })
        .collect();
    let losses_pu: f64 = branch_flows
        .iter()
        .map(|f| (f.s_from_pu + f.s_to_pu).re)
        .sum();

    Ok(PowerFlowSolution {
        base_mva: pu.base_mva,
        bus_ids: pu.bus_ids.clone(),
        voltages_pu: v.iter().copied().collect(),
        branch_flows,
        slack_injection_pu: s[slack] - spec[slack],
        total_losses_kw: losses_pu * pu.base_mva * 1e3,
        converged: worst < opts.tolerance_pu,
        iterations,
        max_mismatch_pu: worst,
    })
}

pub fn solve(pu: &PerUnitModel, opts: &SolveOptions) -> Result<PowerFlowSolution, LoadFlowError> {
    let sol = solve_unchecked(pu, opts)?;
    if !sol.converged {
        return Err(LoadFlowError::NotConverged {
            iterations: sol.iterations,
            mismatch: sol.max_mismatch_pu,
        });
    }
    Ok(sol)
}

/// Applies the scenario, converts to per-unit and solves.
pub fn solve_scenario(
    network: &Network,
    scenario: &Scenario,
    base_mva: f64,
    opts: &SolveOptions,
) -> Result<PowerFlowSolution, LoadFlowError> {
    let active = netmodel::apply_scenario(network, scenario)?;
    let pu = netmodel::to_per_unit(&active, base_mva)?;
    solve(&pu, opts)
}

/// Generation minus load minus losses, in pu (complex); zero for an exact
/// solution.
pub fn power_balance_residual(pu: &PerUnitModel, sol: &PowerFlowSolution) -> Complex64 {
    let dg: Complex64 = pu
        .active_sources()
        .filter(|s| s.role == SourceRole::Dg)
        .map(|s| s.injection)
        .sum();
    let load: Complex64 = pu.loads.iter().sum();
    let losses: Complex64 = sol
        .branch_flows
        .iter()
        .map(|f| f.s_from_pu + f.s_to_pu)
        .sum();
    sol.slack_injection_pu + dg - load - losses
}

pub fn voltage_profile(sol: &PowerFlowSolution) -> Result<BTreeMap<BusId, f64>, LoadFlowError> {
    if !sol.converged {
        return Err(LoadFlowError::NotConverged {
            iterations: sol.iterations,
            mismatch: sol.max_mismatch_pu,
        });
    }
    Ok(sol
        .bus_ids
        .iter()
        .zip(&sol.voltages_pu)
        .map(|(b, v)| (*b, v.norm()))
        .collect())
}

/// Load current each relay carries in its forward direction; relays whose
/// branch exports power toward their CT bus read zero.
pub fn relay_load_currents(network: &Network, sol: &PowerFlowSolution) -> BTreeMap<RelayId, f64> {
    network
        .relays
        .iter()
        .filter_map(|r| {
            let flow = sol.branch_flows.iter().find(|f| f.branch == r.branch)?;
            let (s_in, amps) = if r.located_at_bus == flow.from_bus {
                (flow.s_from_pu, flow.current_from_a)
            } else {
                (flow.s_to_pu, flow.current_to_a)
            };
            Some((r.id, if s_in.re > 0.0 { amps } else { 0.0 }))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub bus: BusId,
    pub dg_size_mw: f64,
    pub losses_kw: Result<f64, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub baseline_losses_kw: f64,
    pub rows: Vec<SweepRow>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepOptions {
    pub base_mva: f64,
    pub dg_power_factor: f64,
    pub solver: SolveOptions,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            base_mva: netmodel::DEFAULT_BASE_MVA,
            dg_power_factor: 1.0,
            solver: SolveOptions::default(),
        }
    }
}

/// Solves the DG-free network once, then once per (bus, size) with a single
/// DG unit placed at the bus.
pub fn sweep_dg(
    network: &Network,
    candidate_buses: &[BusId],
    sizes_mw: &[f64],
    opts: &SweepOptions,
) -> Result<SweepTable, LoadFlowError> {
    if let Some(bad) = sizes_mw.iter().find(|s| !(**s > 0.0)) {
        return Err(LoadFlowError::NonPositiveSize(*bad));
    }
    let baseline_net = netmodel::apply_scenario(network, &Scenario::new("baseline", []))?;
    let baseline = solve(
        &netmodel::to_per_unit(&baseline_net, opts.base_mva)?,
        &opts.solver,
    )?;
    let next_id = baseline_net.sources.iter().map(|s| s.id).max().unwrap_or(0) + 1;

    let mut rows = Vec::with_capacity(candidate_buses.len() * sizes_mw.len());
    for &bus in candidate_buses {
        for &size in sizes_mw {
            let mut trial = baseline_net.clone();
            trial.sources.push(Source {
                id: next_id,
                bus,
                kind: SourceKind::Dg {
                    rated_mw: size,
                    subtransient_reactance_pu: netmodel::DEFAULT_DG_SUBTRANSIENT_PU,
                    machine_base_mva: size / opts.dg_power_factor,
                    power_factor: opts.dg_power_factor,
                },
                in_service: true,
            });
            let losses_kw = netmodel::to_per_unit(&trial, opts.base_mva)
                .map_err(LoadFlowError::from)
                .and_then(|pu| solve(&pu, &opts.solver))
                .map(|s| s.total_losses_kw)
                .map_err(|e| e.to_string());
            rows.push(SweepRow {
                bus,
                dg_size_mw: size,
                losses_kw,
            });
        }
    }
    Ok(SweepTable {
        baseline_losses_kw: baseline.total_losses_kw,
        rows,
    })
}

/// Lowest-loss (bus, size) outside `infeasible`; ties go to the lower bus id,
/// then the smaller size.
pub fn select_site(
    table: &SweepTable,
    infeasible: &BTreeSet<BusId>,
) -> Result<(BusId, f64), LoadFlowError> {
    if table.rows.is_empty() {
        return Err(LoadFlowError::EmptyTable);
    }
    table
        .rows
        .iter()
        .filter(|r| !infeasible.contains(&r.bus))
        .filter_map(|r| r.losses_kw.as_ref().ok().map(|l| (*l, r.bus, r.dg_size_mw)))
        .min_by(|a, b| {
            a.0.partial_cmp(&b.0)
                .unwrap_or(Ordering::Equal)
                .then(a.1.cmp(&b.1))
                .then(a.2.partial_cmp(&b.2).unwrap_or(Ordering::Equal))
        })
        .map(|(_, bus, size)| (bus, size))
        .ok_or(LoadFlowError::NoFeasibleSite)
}

impl SweepTable {
    /// CSV with a leading baseline row (empty bus, size 0).
    pub fn write_csv<W: io::Write>(&self, writer: W) -> Result<(), LoadFlowError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["bus", "dg_size_mw", "losses_kw", "delta_vs_baseline_pct"])?;
        w.write_record([
            String::new(),
            "0".to_string(),
            self.baseline_losses_kw.to_string(),
            "0".to_string(),
        ])?;
        for row in &self.rows {
            let (losses, delta) = match &row.losses_kw {
                Ok(l) => (
                    l.to_string(),
                    if self.baseline_losses_kw != 0.0 {
                        ((l - self.baseline_losses_kw) / self.baseline_losses_kw * 100.0)
                            .to_string()
                    } else {
                        "0".to_string()
                    },
                ),
                Err(_) => (String::new(), String::new()),
            };
            w.write_record([
                row.bus.to_string(),
                row.dg_size_mw.to_string(),
                losses,
                delta,
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::{load_network, Branch, BranchKind, Bus, LoadPoint};

    /// Slack at bus 1, cable giving z = 0.01 + j0.02 pu on 100 MVA / 30 kV.
    fn two_bus(load_pu: Complex64) -> Network {
        let mut net = load_network(
            r#"{"schema":1,
            "buses":[{"id":1,"name":"slack","nominal_kv":30.0},{"id":2,"name":"load","nominal_kv":30.0}],
            "branches":[{"id":1,"from_bus":1,"to_bus":2,"kind":"cable","length_km":1.0,"r_ohm_per_km":0.09,"x_ohm_per_km":0.18}],
            "sources":[{"id":1,"bus":1,"kind":"grid","sc_capacity_mva":200.0,"x_over_r":10.0}]}"#,
        )
        .unwrap();
        if load_pu.norm() > 0.0 {
            net.loads.push(LoadPoint {
                bus: 2,
                apparent_power_mva: load_pu.norm() * 100.0,
                power_factor: load_pu.re / load_pu.norm(),
            });
        }
        net
    }

    /// Fixed-point iteration V2 = 1 - z * conj(S / V2).
    fn two_bus_oracle(z: Complex64, s: Complex64) -> (Complex64, f64) {
        let mut v = Complex64::new(1.0, 0.0);
        for _ in 0..500 {
            v = Complex64::new(1.0, 0.0) - z * (s / v).conj();
        }
        let i = (s / v).conj();
        (v, i.norm_sqr() * z.re)
    }

    fn pu_of(net: &Network) -> PerUnitModel {
        netmodel::to_per_unit(net, 100.0).unwrap()
    }

    #[test]
    fn zero_load_flat_profile() {
        let net = two_bus(Complex64::new(0.0, 0.0));
        let pu = pu_of(&net);
        let sol = solve(&pu, &SolveOptions::default()).unwrap();
        assert_eq!(sol.total_losses_kw, 0.0);
        assert!(voltage_profile(&sol)
            .unwrap()
            .values()
            .all(|v| (*v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn two_bus_matches_oracle() {
        let s = Complex64::new(0.5, 0.2);
        let pu = pu_of(&two_bus(s));
        let z = pu.branches[0].z;
        assert!((z - Complex64::new(0.01, 0.02)).norm() < 1e-12);
        let sol = solve(&pu, &SolveOptions::default()).unwrap();
        let (v2, losses) = two_bus_oracle(z, s);
        assert!((sol.voltages_pu[1] - v2).norm() < 1e-6);
        assert!((sol.total_losses_kw / 1e5 - losses).abs() < 1e-6);
        assert!(power_balance_residual(&pu, &sol).norm() < 1e-6);
    }

    #[test]
    fn dg_at_feeder_end_lifts_voltage() {
        let s = Complex64::new(0.5, 0.2);
        let mut net = two_bus(s);
        let without = solve(&pu_of(&net), &SolveOptions::default()).unwrap();
        net.sources.push(Source {
            id: 2,
            bus: 2,
            kind: SourceKind::Dg {
                rated_mw: 25.0,
                subtransient_reactance_pu: 0.2,
                machine_base_mva: 25.0,
                power_factor: 1.0,
            },
            in_service: true,
        });
        let pu = pu_of(&net);
        let with = solve(&pu, &SolveOptions::default()).unwrap();
        let min = |s: &PowerFlowSolution| {
            voltage_profile(s)
                .unwrap()
                .values()
                .cloned()
                .fold(f64::MAX, f64::min)
        };
        assert!(min(&with) >= min(&without));
        // oracle with the DG as a negative load
        let (v2, _) = two_bus_oracle(pu.branches[0].z, s - Complex64::new(0.25, 0.0));
        assert!((with.voltages_pu[1] - v2).norm() < 1e-6);
        assert!(with.total_losses_kw < without.total_losses_kw);
    }

    #[test]
    fn iteration_cap_reports_mismatch() {
        let pu = pu_of(&two_bus(Complex64::new(0.5, 0.2)));
        let opts = SolveOptions {
            tolerance_pu: 1e-8,
            max_iterations: 1,
        };
        match solve(&pu, &opts) {
            Err(LoadFlowError::NotConverged {
                iterations: 1,
                mismatch,
            }) => assert!(mismatch > 1e-8),
            other => panic!("unexpected {other:?}"),
        }
        let raw = solve_unchecked(&pu, &opts).unwrap();
        assert!(voltage_profile(&raw).is_err());
    }

    #[test]
    fn radial_profile_decreases() {
        let mut net = two_bus(Complex64::new(0.3, 0.1));
        net.buses.push(Bus {
            id: 3,
            name: "end".into(),
            nominal_kv: 30.0,
        });
        net.branches.push(Branch {
            id: 2,
            from_bus: 2,
            to_bus: 3,
            kind: BranchKind::Cable {
                length_km: 2.0,
                r_ohm_per_km: 0.06,
                x_ohm_per_km: 0.1,
            },
            note: None,
        });
        net.loads.push(LoadPoint {
            bus: 3,
            apparent_power_mva: 20.0,
            power_factor: 0.85,
        });
        let sol = solve(&pu_of(&net), &SolveOptions::default()).unwrap();
        let p = voltage_profile(&sol).unwrap();
        assert!(p[&1] >= p[&2] && p[&2] >= p[&3]);
    }

    fn table(rows: &[(BusId, f64, f64)]) -> SweepTable {
        SweepTable {
            baseline_losses_kw: 3849.0,
            rows: rows
                .iter()
                .map(|(bus, size, l)| SweepRow {
                    bus: *bus,
                    dg_size_mw: *size,
                    losses_kw: Ok(*l),
                })
                .collect(),
        }
    }

    #[test]
    fn site_selection_rules() {
        let t = table(&[
            (2, 25.0, 3560.1),
            (27, 50.0, 1109.7),
            (8, 25.0, 1683.0),
            (27, 25.0, 1506.0),
        ]);
        assert_eq!(select_site(&t, &BTreeSet::new()).unwrap(), (27, 50.0));
        assert_eq!(select_site(&t, &BTreeSet::from([27])).unwrap(), (8, 25.0));
        let tie = table(&[(9, 25.0, 1000.0), (5, 50.0, 1000.0), (5, 25.0, 1000.0)]);
        assert_eq!(select_site(&tie, &BTreeSet::new()).unwrap(), (5, 25.0));
        assert!(matches!(
            select_site(&t, &BTreeSet::from([2, 8, 27])),
            Err(LoadFlowError::NoFeasibleSite)
        ));
        assert!(matches!(
            select_site(&table(&[]), &BTreeSet::new()),
            Err(LoadFlowError::EmptyTable)
        ));
    }

    #[test]
    fn sweep_basics() {
        let net = two_bus(Complex64::new(0.5, 0.2));
        let empty = sweep_dg(&net, &[], &[25.0], &SweepOptions::default()).unwrap();
        assert!(empty.rows.is_empty() && empty.baseline_losses_kw > 0.0);
        let t = sweep_dg(&net, &[1, 2], &[25.0, 50.0], &SweepOptions::default()).unwrap();
        assert_eq!(t.rows.len(), 4);
        for r in t.rows.iter().filter(|r| r.bus == 1) {
            let l = *r.losses_kw.as_ref().unwrap();
            assert!((l - t.baseline_losses_kw).abs() <= 1e-6 * t.baseline_losses_kw);
        }
        assert_eq!(select_site(&t, &BTreeSet::new()).unwrap().0, 2);
        assert!(matches!(
            sweep_dg(&net, &[1], &[0.0], &SweepOptions::default()),
            Err(LoadFlowError::NonPositiveSize(_))
        ));
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 1 + 4);
        assert!(text.starts_with("bus,dg_size_mw,losses_kw,delta_vs_baseline_pct\n,0,"));
    }
}
