mod common;

use proptest::prelude::*;

use dgcoord::loadflow::{self, SolveOptions};
use dgcoord::netmodel::{self, Network, Scenario};
use dgcoord::shortcircuit::{self, FaultOptions};

/// Radial feeder 1-2-..-n at 30 kV with the given cable lengths and loads.
fn feeder(lengths: &[f64], loads_mva: &[f64], dg_at: Option<u32>) -> Network {
    let n = lengths.len() + 1;
    let buses: Vec<String> = (1..=n)
        .map(|i| format!(r#"{{"id":{i},"name":"b{i}","nominal_kv":30}}"#))
        .collect();
    let branches: Vec<String> = lengths
        .iter()
        .enumerate()
        .map(|(i, l)| {
            format!(
                r#"{{"id":{},"from_bus":{},"to_bus":{},"kind":"cable","length_km":{l},"r_ohm_per_km":0.06,"x_ohm_per_km":0.1}}"#,
                i + 1,
                i + 1,
                i + 2
            )
        })
        .collect();
    let loads: Vec<String> = loads_mva
        .iter()
        .enumerate()
        .map(|(i, s)| format!(r#"{{"bus":{},"apparent_power_mva":{s}}}"#, i + 2))
        .collect();
    let mut sources =
        vec![r#"{"id":1,"bus":1,"kind":"grid","sc_capacity_mva":200,"x_over_r":10}"#.to_string()];
    if let Some(b) = dg_at {
        sources.push(format!(
            r#"{{"id":2,"bus":{b},"kind":"dg","rated_mw":5,"machine_base_mva":6.25}}"#
        ));
    }
    netmodel::load_network(&format!(
        r#"{{"schema":1,"buses":[{}],"branches":[{}],"sources":[{}],"loads":[{}]}}"#,
        buses.join(","),
        branches.join(","),
        sources.join(","),
        loads.join(",")
    ))
    .unwrap()
}

fn all_on(net: &Network) -> Scenario {
    Scenario::new("on", net.sources.iter().filter(|s| s.is_dg()).map(|s| s.id))
}

#[test]
fn example_zbus_is_symmetric() {
    let net = common::example_network();
    for name in ["off", "dg8"] {
        let active = netmodel::apply_scenario(&net, net.scenario(name).unwrap()).unwrap();
        let pu = netmodel::to_per_unit(&active, 100.0).unwrap();
        let z = shortcircuit::build_zbus(&pu, name).unwrap();
        assert!(z.max_asymmetry() < 1e-12);
    }
}

#[test]
fn example_studies_round_trip_csv() {
    let net = common::example_network();
    let opts = FaultOptions::default();
    let buses = net.bus_ids();
    let studies: Vec<_> = ["off", "dg8"]
        .iter()
        .map(|s| {
            shortcircuit::run_fault_study(&net, net.scenario(s).unwrap(), &buses, &opts).unwrap()
        })
        .collect();
    let mut buf = Vec::new();
    shortcircuit::write_studies_csv(&studies, &mut buf).unwrap();
    let back = shortcircuit::read_studies_csv(buf.as_slice()).unwrap();
    let mut again = Vec::new();
    shortcircuit::write_studies_csv(&back, &mut again).unwrap();
    assert_eq!(buf, again);
}

#[test]
fn example_load_flow_converges_in_both_scenarios() {
    let net = common::example_network();
    for name in ["off", "dg8"] {
        let sol = loadflow::solve_scenario(
            &net,
            net.scenario(name).unwrap(),
            100.0,
            &SolveOptions::default(),
        )
        .unwrap();
        assert!(sol.converged);
        assert!(sol.total_losses_kw > 0.0);
        for v in &sol.voltages_pu {
            assert!(v.norm() > 0.8 && v.norm() < 1.1, "{v}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn zbus_symmetric_and_driving_point_grows_downstream(
        lengths in prop::collection::vec(0.5f64..10.0, 1..6),
        dg in any::<bool>(),
    ) {
        let n = lengths.len() as u32 + 1;
        let net = feeder(&lengths, &[], dg.then_some(n));
        let active = netmodel::apply_scenario(&net, &all_on(&net)).unwrap();
        let pu = netmodel::to_per_unit(&active, 100.0).unwrap();
        let z = shortcircuit::build_zbus(&pu, "p").unwrap();
        prop_assert!(z.max_asymmetry() < 1e-12);
        if !dg {
            let dp: Vec<f64> = (1..=n).map(|b| z.driving_point(b).unwrap().norm()).collect();
            prop_assert!(dp.windows(2).all(|w| w[1] > w[0]));
        }
    }

    #[test]
    fn dg_never_lowers_fault_current(lengths in prop::collection::vec(0.5f64..10.0, 1..6), at in 0usize..6) {
        let n = lengths.len() as u32 + 1;
        let net = feeder(&lengths, &[], Some(at as u32 % n + 1));
        let buses = net.bus_ids();
        let opts = FaultOptions::default();
        let off = shortcircuit::run_fault_study(&net, &Scenario::new("off", []), &buses, &opts).unwrap();
        let on = shortcircuit::run_fault_study(&net, &all_on(&net), &buses, &opts).unwrap();
        for b in buses {
            prop_assert!(on.fault(b).unwrap().fault_current_a >= off.fault(b).unwrap().fault_current_a);
        }
    }

    #[test]
    fn power_balance_holds(
        lengths in prop::collection::vec(0.5f64..6.0, 1..5),
        scale in 0.0f64..1.0,
        dg in any::<bool>(),
    ) {
        let loads: Vec<f64> = lengths.iter().map(|_| 4.0 * scale).collect();
        let net = feeder(&lengths, &loads, dg.then_some(lengths.len() as u32 + 1));
        let active = netmodel::apply_scenario(&net, &all_on(&net)).unwrap();
        let pu = netmodel::to_per_unit(&active, 100.0).unwrap();
        let sol = loadflow::solve(&pu, &SolveOptions::default()).unwrap();
        prop_assert!(loadflow::power_balance_residual(&pu, &sol).norm() < 1e-6);
        prop_assert!(sol.total_losses_kw >= -1e-9);
    }

    #[test]
    fn input_order_does_not_change_results(seed in any::<u64>()) {
        let net = common::example_network();
        let mut shuffled = net.clone();
        // deterministic permutation from the seed
        let mut s = seed;
        let mut next = move || { s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407); s >> 33 };
        for i in (1..shuffled.buses.len()).rev() { let j = next() as usize % (i + 1); shuffled.buses.swap(i, j); }
        for i in (1..shuffled.branches.len()).rev() { let j = next() as usize % (i + 1); shuffled.branches.swap(i, j); }
        for i in (1..shuffled.relays.len()).rev() { let j = next() as usize % (i + 1); shuffled.relays.swap(i, j); }
        for i in (1..shuffled.loads.len()).rev() { let j = next() as usize % (i + 1); shuffled.loads.swap(i, j); }
        let sc = net.scenario("dg8").unwrap();
        let buses = net.bus_ids();
        let opts = FaultOptions::default();
        let a = shortcircuit::run_fault_study(&net, sc, &buses, &opts).unwrap();
        let b = shortcircuit::run_fault_study(&shuffled, sc, &buses, &opts).unwrap();
        for bus in &buses {
            let (fa, fb) = (a.fault(*bus).unwrap(), b.fault(*bus).unwrap());
            prop_assert!(((fa.fault_current_a - fb.fault_current_a) / fa.fault_current_a).abs() < 1e-9);
            for (r, c) in &fa.contributions {
                prop_assert!((c.amps - fb.contributions[r].amps).abs() <= 1e-9 * fa.fault_current_a);
                prop_assert_eq!(c.direction, fb.contributions[r].direction);
            }
        }
        let la = loadflow::solve_scenario(&net, sc, 100.0, &SolveOptions::default()).unwrap();
        let lb = loadflow::solve_scenario(&shuffled, sc, 100.0, &SolveOptions::default()).unwrap();
        prop_assert!((la.total_losses_kw - lb.total_losses_kw).abs() < 1e-6 * la.total_losses_kw);
    }
}
