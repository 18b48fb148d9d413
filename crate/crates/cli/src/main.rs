use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use dgcoord::coordination::{
    self, CoordinationReport, CtiPolicy, DesignIssue, DesignParams, SettingsSet,
};
use dgcoord::loadflow::{self, SolveOptions, SweepOptions};
use dgcoord::netmodel::{self, BusId, Network, NetworkError, RelayId, Scenario};
use dgcoord::relay::{self, CurveKind};
use dgcoord::shortcircuit::{self, FaultOptions, FaultStudy};
use dgcoord::strategy::{self, SearchLimits, StrategyError, StudyInputs};

#[derive(Parser, Debug)]
#[command(
    name = "dgcoord",
    version,
    about = "Overcurrent protection coordination studies for distribution networks with DG"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Network description (JSON)
    #[arg(long, global = true, default_value = "network.json")]
    network: PathBuf,
    /// Scenario name; give twice for the without-DG and with-DG cases
    #[arg(long, global = true)]
    scenario: Vec<String>,
    #[arg(long, global = true, default_value_t = 200.0)]
    cti_ms: f64,
    #[arg(long, global = true, default_value_t = 10.0)]
    cti_tol_ms: f64,
    #[arg(long, global = true, default_value_t = 0.05)]
    tms_floor: f64,
    /// Pickup as a multiple of normal load current
    #[arg(long, global = true, default_value_t = 1.25)]
    overload: f64,
    #[arg(long, global = true, default_value_t = netmodel::DEFAULT_BASE_MVA)]
    base_mva: f64,
    /// Output directory
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Text,
}

#[derive(Args, Debug, Default)]
struct Inputs {
    /// Relay settings CSV (relay_id,curve,ps,tms,ctr,directional)
    #[arg(long)]
    settings: Option<PathBuf>,
    /// Fault currents CSV to use instead of computing them
    #[arg(long)]
    study: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check the network file and list violations
    Validate,
    /// Fault studies, design, verification and restoration in one run
    Study(Inputs),
    /// Time-current curve samples for selected relays
    Tcc {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long, value_delimiter = ',', required = true)]
        relay: Vec<RelayId>,
        #[arg(long)]
        from_a: f64,
        #[arg(long)]
        to_a: f64,
        #[arg(long, default_value_t = 200)]
        points: usize,
        /// Curves to sample; defaults to each relay's own curve
        #[arg(long, value_delimiter = ',')]
        curve: Vec<CurveKind>,
    },
    /// Losses for a DG unit at each candidate bus and size
    Sweep {
        #[arg(long, value_delimiter = ',', default_value = "25,50")]
        sizes: Vec<String>,
        /// Candidate buses (default: all)
        #[arg(long, value_delimiter = ',')]
        buses: Vec<BusId>,
        #[arg(long, value_delimiter = ',')]
        infeasible: Vec<BusId>,
    },
    /// Design PS/TMS settings for the first scenario
    Design(Inputs),
    /// Check primary/backup margins for each scenario
    Verify(Inputs),
    /// Search for curve changes that coordinate both scenarios
    Restore {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long, default_value_t = SearchLimits::default().max_evaluations)]
        max_evaluations: usize,
    },
}

/// Marks failures caused by unreadable or malformed input.
#[derive(Debug)]
struct InputError(String);

impl fmt::Display for InputError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

fn input_err(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::msg(InputError(msg.into()))
}

/// Outcome of a command that ran to completion.
enum Status {
    Ok,
    Violation,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::Violation) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<InputError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn run(cli: &Cli) -> Result<Status> {
    let g = &cli.global;
    if let Command::Validate = cli.command {
        return validate(g);
    }
    let net = load(&g.network)?;
    match &cli.command {
        Command::Validate => unreachable!(),
        Command::Study(inputs) => study(g, &net, inputs),
        Command::Tcc {
            inputs,
            relay,
            from_a,
            to_a,
            points,
            curve,
        } => tcc(g, &net, inputs, relay, (*from_a, *to_a), *points, curve),
        Command::Sweep {
            sizes,
            buses,
            infeasible,
        } => sweep(g, &net, sizes, buses, infeasible),
        Command::Design(inputs) => design(g, &net, inputs),
        Command::Verify(inputs) => verify(g, &net, inputs),
        Command::Restore {
            inputs,
            max_evaluations,
        } => restore(g, &net, inputs, *max_evaluations),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| input_err(format!("cannot read {}: {e}", path.display())))
}

fn validate(g: &Global) -> Result<Status> {
    let net = netmodel::parse_network(&read(&g.network)?)
        .map_err(|e| input_err(format!("{}: {e}", g.network.display())))?;
    let violations = netmodel::validate(&net);
    for v in &violations {
        println!("{v}");
    }
    Ok(if violations.is_empty() {
        Status::Ok
    } else {
        Status::Violation
    })
}

fn load(path: &Path) -> Result<Network> {
    let text = read(path)?;
    match netmodel::load_network(&text) {
        Ok(net) => {
            let violations = netmodel::validate(&net);
            if !violations.is_empty() {
                bail!(NetworkError::Invalid(violations));
            }
            Ok(net)
        }
        Err(e @ (NetworkError::Parse { .. } | NetworkError::Schema(_))) => {
            Err(input_err(format!("{}: {e}", path.display())))
        }
        Err(e) => Err(e.into()),
    }
}

fn policy(g: &Global) -> CtiPolicy {
    CtiPolicy {
        requirement_ms: g.cti_ms,
        tolerance_ms: g.cti_tol_ms,
    }
}

fn design_params(g: &Global) -> DesignParams {
    DesignParams {
        policy: policy(g),
        tms_floor: g.tms_floor,
        overload_factor: g.overload,
        ..DesignParams::default()
    }
}

fn fault_options(g: &Global) -> FaultOptions {
    FaultOptions {
        base_mva: g.base_mva,
        ..FaultOptions::default()
    }
}

/// Requested scenarios, else the first two declared, else one with every DG out.
fn scenarios(g: &Global, net: &Network) -> Result<Vec<Scenario>> {
    if !g.scenario.is_empty() {
        return g
            .scenario
            .iter()
            .map(|name| {
                net.scenario(name)
                    .cloned()
                    .map_err(|e| input_err(e.to_string()))
            })
            .collect();
    }
    if net.scenarios.is_empty() {
        return Ok(vec![Scenario::new("base", [])]);
    }
    Ok(net.scenarios.iter().take(2).cloned().collect())
}

fn fault_studies(
    g: &Global,
    net: &Network,
    inputs: &Inputs,
    scenarios: &[Scenario],
) -> Result<Vec<FaultStudy>> {
    match &inputs.study {
        Some(path) => {
            let file = fs::File::open(path)
                .map_err(|e| input_err(format!("cannot read {}: {e}", path.display())))?;
            let mut all = shortcircuit::read_studies_csv(file)
                .map_err(|e| input_err(format!("{}: {e}", path.display())))?;
            scenarios
                .iter()
                .map(|sc| {
                    let pos = all
                        .iter()
                        .position(|s| s.scenario == sc.name)
                        .ok_or_else(|| {
                            input_err(format!(
                                "{} has no rows for scenario `{}`",
                                path.display(),
                                sc.name
                            ))
                        })?;
                    Ok(all.remove(pos))
                })
                .collect()
        }
        None => {
            let buses = net.bus_ids();
            let opts = fault_options(g);
            scenarios
                .iter()
                .map(|sc| shortcircuit::run_fault_study(net, sc, &buses, &opts).map_err(Into::into))
                .collect()
        }
    }
}

fn read_settings(path: &Path) -> Result<SettingsSet> {
    let file = fs::File::open(path)
        .map_err(|e| input_err(format!("cannot read {}: {e}", path.display())))?;
    SettingsSet::read_csv("settings", file)
        .map_err(|e| input_err(format!("{}: {e}", path.display())))
}

fn load_currents(g: &Global, net: &Network, scenario: &Scenario) -> Result<BTreeMap<RelayId, f64>> {
    let flow = loadflow::solve_scenario(net, scenario, g.base_mva, &SolveOptions::default())?;
    Ok(loadflow::relay_load_currents(net, &flow))
}

struct Prepared {
    scenarios: Vec<Scenario>,
    studies: Vec<FaultStudy>,
    pairs: Vec<netmodel::PairDecl>,
    settings: SettingsSet,
    issues: Vec<DesignIssue>,
    load_currents: BTreeMap<RelayId, f64>,
}

fn prepare(g: &Global, net: &Network, inputs: &Inputs) -> Result<Prepared> {
    let scenarios = scenarios(g, net)?;
    let studies = fault_studies(g, net, inputs, &scenarios)?;
    let pairs = coordination::enumerate_pairs(net)?;
    let (settings, issues, load_currents) = match &inputs.settings {
        Some(path) => {
            let s = read_settings(path)?;
            let lc = coordination::load_currents_from_settings(&s, g.overload);
            (s, Vec::new(), lc)
        }
        None => {
            let lc = load_currents(g, net, &scenarios[0])?;
            let d = if pairs.is_empty() {
                coordination::Design {
                    settings: SettingsSet::new(scenarios[0].name.clone()),
                    issues: Vec::new(),
                }
            } else {
                strategy::baseline_design(
                    net,
                    &studies[0],
                    studies.get(1),
                    &pairs,
                    &lc,
                    &design_params(g),
                )?
            };
            (d.settings, d.issues, lc)
        }
    };
    Ok(Prepared {
        scenarios,
        studies,
        pairs,
        settings,
        issues,
        load_currents,
    })
}

struct Output<'a> {
    dir: &'a Path,
    format: Format,
}

impl Output<'_> {
    fn new(g: &Global) -> Result<Output<'_>> {
        fs::create_dir_all(&g.out).with_context(|| format!("cannot create {}", g.out.display()))?;
        Ok(Output {
            dir: &g.out,
            format: g.format,
        })
    }

    fn ext(&self) -> &'static str {
        match self.format {
            Format::Csv => "csv",
            Format::Text => "txt",
        }
    }

    fn write(&self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).with_context(|| format!("cannot write {}", path.display()))?;
        eprintln!("wrote {}", path.display());
        Ok(())
    }

    fn csv<F>(&self, name: &str, f: F) -> Result<()>
    where
        F: FnOnce(&mut Vec<u8>) -> Result<()>,
    {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(&format!("{name}.csv"), &buf)
    }

    fn settings(&self, name: &str, s: &SettingsSet) -> Result<()> {
        match self.format {
            Format::Csv => self.csv(name, |b| Ok(s.write_csv(b)?)),
            Format::Text => self.write(&format!("{name}.{}", self.ext()), s.to_text().as_bytes()),
        }
    }

    fn report(&self, name: &str, r: &CoordinationReport) -> Result<()> {
        match self.format {
            Format::Csv => self.csv(name, |b| Ok(r.write_csv(b)?)),
            Format::Text => self.write(&format!("{name}.{}", self.ext()), r.to_text().as_bytes()),
        }
    }

    fn dual(&self, name: &str, d: &strategy::DualReport) -> Result<()> {
        match self.format {
            Format::Csv => self.csv(name, |b| Ok(d.write_csv(b)?)),
            Format::Text => self.write(&format!("{name}.{}", self.ext()), d.to_text().as_bytes()),
        }
    }
}

fn print_issues(issues: &[DesignIssue]) {
    for i in issues {
        match i {
            DesignIssue::TmsOutOfRange { relay, tms } => {
                eprintln!("warning: relay {relay} needs TMS {tms:.4}, outside the allowed range")
            }
            DesignIssue::PrimaryNoPickup { relay, fault_bus } => {
                eprintln!("warning: relay {relay} does not pick up for a fault at bus {fault_bus}")
            }
            DesignIssue::BackupNoPickup { relay, fault_bus } => {
                eprintln!(
                    "warning: backup relay {relay} does not pick up for a fault at bus {fault_bus}"
                )
            }
        }
    }
}

fn study(g: &Global, net: &Network, inputs: &Inputs) -> Result<Status> {
    let p = prepare(g, net, inputs)?;
    let out = Output::new(g)?;
    let policy = policy(g);
    print_issues(&p.issues);
    for s in &p.studies {
        out.csv(&format!("fault_study_{}", s.scenario), |b| {
            Ok(s.write_csv(b)?)
        })?;
    }
    out.settings("settings", &p.settings)?;
    let mut reports = Vec::new();
    for s in &p.studies {
        let r = coordination::verify(&p.settings, s, &p.pairs, &policy)?;
        out.report(&format!("verify_{}", s.scenario), &r)?;
        println!("{}", r.to_text());
        reports.push(r);
    }
    if reports.iter().all(CoordinationReport::is_clean) || p.studies.len() < 2 {
        return Ok(Status::Ok);
    }
    let (off, on) = (&p.studies[0], &p.studies[1]);
    let restored = strategy::restore_by_curve_selection(
        &p.settings,
        off,
        on,
        &p.pairs,
        &policy,
        &SearchLimits::default(),
    );
    let (best, status) = match restored {
        Ok(r) => (r.report, Status::Ok),
        Err(StrategyError::Exhausted { best, .. }) => {
            eprintln!("curve selection found no coordinating assignment; writing the best found");
            (*best, Status::Violation)
        }
        Err(e) => return Err(e.into()),
    };
    out.csv("curve_assignment", |b| Ok(best.assignment.write_csv(b)?))?;
    out.dual("dual_report", &best)?;
    let inputs = StudyInputs {
        network: net.clone(),
        pairs: p.pairs.clone(),
        baseline: p.settings.clone(),
        without_dg: off.clone(),
        with_dg: on.clone(),
        load_currents: p.load_currents.clone(),
    };
    let summary =
        strategy::compare_strategies(&inputs, &design_params(g), &SearchLimits::default())?;
    println!("{}", summary.to_text());
    println!("note: {}", strategy::COMMUNICATION_CAVEAT);
    Ok(status)
}

fn tcc(
    g: &Global,
    net: &Network,
    inputs: &Inputs,
    relays: &[RelayId],
    range: (f64, f64),
    points: usize,
    curves: &[CurveKind],
) -> Result<Status> {
    for r in relays {
        if net.relay(*r).is_none() {
            return Err(input_err(format!("unknown relay {r}")));
        }
    }
    let p = prepare(g, net, inputs)?;
    let out = Output::new(g)?;
    for r in relays {
        let base = *p
            .settings
            .get(*r)
            .ok_or_else(|| input_err(format!("relay {r} has no setting")))?;
        let wanted: Vec<CurveKind> = if curves.is_empty() {
            vec![base.curve]
        } else {
            curves.to_vec()
        };
        for c in wanted {
            let samples = relay::curve_samples(&base.with_curve(c), range, points)
                .with_context(|| format!("relay {r} on {}", c.code()))?;
            out.csv(&format!("tcc_relay{r}_{}", c.code()), |b| {
                writeln!(b, "current_a,time_s")?;
                for (i, t) in samples {
                    writeln!(b, "{i},{t}")?;
                }
                Ok(())
            })?;
        }
    }
    Ok(Status::Ok)
}

fn sweep(
    g: &Global,
    net: &Network,
    sizes: &[String],
    buses: &[BusId],
    infeasible: &[BusId],
) -> Result<Status> {
    let sizes: Vec<f64> = sizes
        .iter()
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| input_err(format!("bad size `{s}`")))
        })
        .collect::<Result<_>>()?;
    let buses = if buses.is_empty() {
        net.bus_ids()
    } else {
        buses.to_vec()
    };
    let opts = SweepOptions {
        base_mva: g.base_mva,
        ..SweepOptions::default()
    };
    let table = loadflow::sweep_dg(net, &buses, &sizes, &opts)?;
    let out = Output::new(g)?;
    out.csv("sweep", |b| Ok(table.write_csv(b)?))?;
    for r in &table.rows {
        if let Err(e) = &r.losses_kw {
            eprintln!("warning: bus {} at {} MW: {e}", r.bus, r.dg_size_mw);
        }
    }
    if table.rows.is_empty() {
        println!(
            "baseline losses {:.1} kW; no candidates",
            table.baseline_losses_kw
        );
        return Ok(Status::Ok);
    }
    if table.rows.iter().all(|r| r.losses_kw.is_err()) {
        bail!("no sweep case converged");
    }
    let infeasible: BTreeSet<BusId> = infeasible.iter().copied().collect();
    match loadflow::select_site(&table, &infeasible) {
        Ok((bus, size)) => {
            let losses = table
                .rows
                .iter()
                .find(|r| r.bus == bus && r.dg_size_mw == size)
                .and_then(|r| r.losses_kw.as_ref().ok())
                .copied()
                .unwrap_or(f64::NAN);
            println!(
                "selected bus {bus} with {size} MW: losses {losses:.1} kW (baseline {:.1} kW)",
                table.baseline_losses_kw
            );
            Ok(Status::Ok)
        }
        Err(e) => {
            println!("no feasible site: {e}");
            Ok(Status::Violation)
        }
    }
}

fn design(g: &Global, net: &Network, inputs: &Inputs) -> Result<Status> {
    if inputs.settings.is_some() {
        return Err(input_err(
            "design computes settings; --settings is not accepted",
        ));
    }
    let p = prepare(g, net, inputs)?;
    print_issues(&p.issues);
    let out = Output::new(g)?;
    out.settings("settings", &p.settings)?;
    println!("{}", p.settings.to_text());
    let out_of_range = p
        .issues
        .iter()
        .any(|i| matches!(i, DesignIssue::TmsOutOfRange { .. }));
    Ok(if out_of_range {
        Status::Violation
    } else {
        Status::Ok
    })
}

fn verify(g: &Global, net: &Network, inputs: &Inputs) -> Result<Status> {
    if inputs.settings.is_none() {
        return Err(input_err("verify needs --settings"));
    }
    let p = prepare(g, net, inputs)?;
    let out = Output::new(g)?;
    let mut clean = true;
    for s in &p.studies {
        let r = coordination::verify(&p.settings, s, &p.pairs, &policy(g))?;
        out.report(&format!("verify_{}", s.scenario), &r)?;
        println!("{}", r.to_text());
        clean &= r.is_clean();
    }
    Ok(if clean { Status::Ok } else { Status::Violation })
}

fn restore(g: &Global, net: &Network, inputs: &Inputs, max_evaluations: usize) -> Result<Status> {
    if inputs.settings.is_none() {
        return Err(input_err("restore needs --settings"));
    }
    let p = prepare(g, net, inputs)?;
    if p.scenarios.len() < 2 {
        return Err(input_err(
            "restore needs a without-DG and a with-DG scenario",
        ));
    }
    let out = Output::new(g)?;
    let limits = SearchLimits { max_evaluations };
    let (report, status) = match strategy::restore_by_curve_selection(
        &p.settings,
        &p.studies[0],
        &p.studies[1],
        &p.pairs,
        &policy(g),
        &limits,
    ) {
        Ok(r) => (r.report, Status::Ok),
        Err(StrategyError::Exhausted { best, residual, .. }) => {
            eprintln!(
                "no coordinating assignment; best found leaves {residual} miscoordinated rows"
            );
            (*best, Status::Violation)
        }
        Err(e) => return Err(e.into()),
    };
    out.csv("curve_assignment", |b| {
        Ok(report.assignment.write_csv(b)?)
    })?;
    out.dual("dual_report", &report)?;
    let changed: Vec<String> = report
        .assignment
        .changed_relays
        .iter()
        .map(|r| format!("{r}: {}", report.assignment.curves[r].label()))
        .collect();
    println!(
        "changed relays: {}",
        if changed.is_empty() {
            "none".to_string()
        } else {
            changed.join(", ")
        }
    );
    println!("{}", report.to_text());
    Ok(status)
}
