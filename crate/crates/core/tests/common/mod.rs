#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use dgcoord::coordination::{self, CtiPolicy, SettingsSet};
use dgcoord::netmodel::{self, Network, PairDecl};
use dgcoord::shortcircuit::{self, FaultStudy};
use dgcoord::strategy::StudyInputs;

pub fn data_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../data")
        .join(name)
}

pub fn example_network() -> Network {
    netmodel::load_network(&fs::read_to_string(data_path("feeder11bus.json")).unwrap()).unwrap()
}

pub fn published_settings() -> SettingsSet {
    SettingsSet::read_csv(
        "published",
        fs::File::open(data_path("feeder11bus_settings.csv")).unwrap(),
    )
    .unwrap()
}

/// Tabulated per-relay currents: (without DG, with DG).
pub fn tabulated_studies() -> (FaultStudy, FaultStudy) {
    let file = fs::File::open(data_path("feeder11bus_exogenous_study.csv")).unwrap();
    let mut studies = shortcircuit::read_studies_csv(file).unwrap();
    let on = studies.pop().unwrap();
    let off = studies.pop().unwrap();
    assert_eq!(
        (off.scenario.as_str(), on.scenario.as_str()),
        ("off", "dg8")
    );
    (off, on)
}

pub fn pairs() -> Vec<PairDecl> {
    coordination::enumerate_pairs(&example_network()).unwrap()
}

pub fn policy() -> CtiPolicy {
    CtiPolicy::default()
}

/// Comparison inputs built from the tabulated currents and published settings.
pub fn tabulated_inputs() -> StudyInputs {
    let (without_dg, with_dg) = tabulated_studies();
    let baseline = published_settings();
    let load_currents: BTreeMap<_, _> = coordination::load_currents_from_settings(&baseline, 1.25);
    StudyInputs {
        network: example_network(),
        pairs: pairs(),
        baseline,
        without_dg,
        with_dg,
        load_currents,
    }
}
