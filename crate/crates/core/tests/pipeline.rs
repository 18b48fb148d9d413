mod common;

use std::collections::BTreeSet;

use dgcoord::coordination::{self, SettingsSet};
use dgcoord::loadflow::{self, SweepOptions};
use dgcoord::strategy::StudyInputs;

#[test]
fn sweep_selects_lowest_loss_and_honours_infeasible() {
    let net = common::example_network();
    let table = loadflow::sweep_dg(
        &net,
        &net.bus_ids(),
        &[25.0, 50.0],
        &SweepOptions::default(),
    )
    .unwrap();
    assert_eq!(table.rows.len(), 2 * net.bus_ids().len());
    let best = loadflow::select_site(&table, &BTreeSet::new()).unwrap();
    assert_eq!(best, (27, 25.0));
    let runner_up = loadflow::select_site(&table, &BTreeSet::from([27])).unwrap();
    assert_ne!(runner_up.0, 27);
    let losses = |bus, size| {
        table
            .rows
            .iter()
            .find(|r| r.bus == bus && r.dg_size_mw == size)
            .unwrap()
            .losses_kw
            .clone()
            .unwrap()
    };
    assert!(losses(runner_up.0, runner_up.1) >= losses(27, 25.0));
    // DG next to the load centre beats DG at the substation
    assert!(losses(8, 25.0) < losses(2, 25.0));
}

#[test]
fn designed_baseline_coordinates_without_dg() {
    let net = common::example_network();
    let inputs = StudyInputs::from_network(
        &net,
        net.scenario("off").unwrap(),
        net.scenario("dg8").unwrap(),
        &Default::default(),
    )
    .unwrap();
    let report = coordination::verify(
        &inputs.baseline,
        &inputs.without_dg,
        &inputs.pairs,
        &common::policy(),
    )
    .unwrap();
    assert!(report.is_clean(), "{}", report.to_text());
    for s in inputs.baseline.settings.values() {
        assert!(
            s.tms >= 0.05 && s.tms <= 1.2,
            "relay {} tms {}",
            s.relay_id,
            s.tms
        );
    }
    // the DG feeder relays are graded against the DG case
    let with = coordination::verify(
        &inputs.baseline,
        &inputs.with_dg,
        &inputs.pairs,
        &common::policy(),
    )
    .unwrap();
    for r in with
        .rows
        .iter()
        .filter(|r| [11, 13, 27].contains(&r.primary_relay))
    {
        assert!(!r.miscoordination, "{r:?}");
    }
}

#[test]
fn settings_csv_round_trip() {
    let s = common::published_settings();
    let mut buf = Vec::new();
    s.write_csv(&mut buf).unwrap();
    let back = SettingsSet::read_csv("published", buf.as_slice()).unwrap();
    assert_eq!(s, back);
    assert_eq!(s.settings.len(), 18);
    assert!(!s.settings[&1].directional);
}

#[test]
fn verify_is_pure() {
    let (off, on) = common::tabulated_studies();
    let settings = common::published_settings();
    let pairs = common::pairs();
    let before = (settings.clone(), off.clone(), on.clone(), pairs.clone());
    let render = |study| {
        let r = coordination::verify(&settings, study, &pairs, &common::policy()).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        buf
    };
    assert_eq!(render(&on), render(&on));
    assert_eq!(render(&off), render(&off));
    assert_eq!(
        before,
        (settings.clone(), off.clone(), on.clone(), pairs.clone())
    );
}

#[test]
fn tabulated_times_reproduced() {
    let (off, on) = common::tabulated_studies();
    let settings = common::published_settings();
    let pairs = common::pairs();
    let without = coordination::verify(&settings, &off, &pairs, &common::policy()).unwrap();
    let with = coordination::verify(&settings, &on, &pairs, &common::policy()).unwrap();
    let row = |rep: &coordination::CoordinationReport, bus, rp| {
        let r = rep
            .rows
            .iter()
            .find(|r| r.fault_bus == bus && r.primary_relay == rp)
            .unwrap();
        (r.tp_ms.unwrap().round(), r.tb_ms.map(f64::round))
    };
    assert_eq!(row(&without, 27, 32), (506.0, Some(719.0)));
    assert_eq!(row(&without, 26, 29), (689.0, Some(889.0)));
    assert_eq!(row(&with, 27, 32), (430.0, Some(560.0)));
    assert_eq!(row(&with, 26, 29), (528.0, Some(640.0)));
    assert_eq!(row(&with, 2, 13), (1490.0, Some(1680.0)));
    assert_eq!(row(&with, 8, 37), (2586.0, None));
    // DG feeder relays do not see faults without DG
    let dg_rows: Vec<_> = without
        .rows
        .iter()
        .filter(|r| r.primary_relay == 37)
        .collect();
    assert!(dg_rows
        .iter()
        .all(|r| !r.applicable() && !r.miscoordination));
}
