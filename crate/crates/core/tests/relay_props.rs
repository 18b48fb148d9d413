use approx::assert_relative_eq;
use proptest::prelude::*;

use dgcoord::relay::{self, CurveKind, RelayError, RelaySetting, TmsRange};

fn curve() -> impl Strategy<Value = CurveKind> {
    prop::sample::select(CurveKind::ALL.to_vec())
}

fn setting(curve: CurveKind, ps: f64, tms: f64) -> RelaySetting {
    RelaySetting {
        relay_id: 1,
        curve,
        plug_setting: ps,
        tms,
        ct_ratio: 1200.0,
        directional: true,
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 512, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn time_is_linear_in_tms(c in curve(), ps in 0.05f64..2.0, tms in 0.025f64..1.2, k in 0.1f64..5.0, m in 1.01f64..50.0) {
        let amps = m * 1200.0 * ps;
        let t = setting(c, ps, tms).operating_time(amps).unwrap();
        let tk = setting(c, ps, k * tms).operating_time(amps).unwrap();
        prop_assert!((tk - k * t).abs() <= 1e-12 * tk.max(1.0));
    }

    #[test]
    fn time_falls_as_current_rises(c in curve(), ps in 0.05f64..2.0, tms in 0.025f64..1.2, m in 1.01f64..50.0, step in 1.0001f64..3.0) {
        let s = setting(c, ps, tms);
        let amps = m * 1200.0 * ps;
        prop_assert!(s.operating_time(amps * step).unwrap() < s.operating_time(amps).unwrap());
    }

    #[test]
    fn solve_tms_inverts_operating_time(c in curve(), ps in 0.05f64..2.0, tms in 0.025f64..1.2, m in 1.01f64..50.0) {
        let amps = m * 1200.0 * ps;
        let t = setting(c, ps, tms).operating_time(amps).unwrap();
        let back = relay::solve_tms(c, t, ps, 1200.0, amps).unwrap();
        prop_assert!(((back - tms) / tms).abs() < 1e-12);
    }

    #[test]
    fn samples_are_monotone(c in curve(), ps in 0.1f64..1.5, tms in 0.025f64..1.2) {
        let s = setting(c, ps, tms);
        let pickup = s.pickup_a();
        let pts = relay::curve_samples(&s, (pickup * 1.1, pickup * 30.0), 200).unwrap();
        prop_assert_eq!(pts.len(), 200);
        prop_assert!(pts.windows(2).all(|w| w[1].0 > w[0].0 && w[1].1 < w[0].1));
    }
}

#[test]
fn at_or_below_pickup_never_trips() {
    let s = setting(CurveKind::NormalInverse, 0.5, 0.1);
    assert!(matches!(
        s.operating_time(600.0),
        Err(RelayError::NoPickup { .. })
    ));
    assert!(matches!(
        s.operating_time(300.0),
        Err(RelayError::NoPickup { .. })
    ));
}

#[test]
fn curve_constants_match_standard() {
    let pairs: Vec<(f64, f64)> = CurveKind::ALL
        .iter()
        .map(|c| (c.constants().numerator_a, c.constants().exponent_b))
        .collect();
    assert_eq!(
        pairs,
        vec![(0.14, 0.02), (13.5, 1.0), (80.0, 2.0), (120.0, 1.0)]
    );
}

#[test]
fn pickup_and_plug_setting() {
    let pickup = relay::pickup_from_load(574.08, 1.25).unwrap();
    assert_relative_eq!(pickup, 717.6, max_relative = 1e-12);
    assert_relative_eq!(
        relay::plug_setting(pickup, 1200.0).unwrap(),
        0.598,
        max_relative = 1e-12
    );
}

#[test]
fn tms_range_is_enforced_on_request() {
    let range = TmsRange::default();
    let r = relay::solve_tms_in_range(
        CurveKind::NormalInverse,
        30.0,
        0.5,
        1200.0,
        1000.0,
        range,
        false,
    );
    assert!(matches!(r, Err(RelayError::TmsOutOfRange { .. })));
    let clipped = relay::solve_tms_in_range(
        CurveKind::NormalInverse,
        30.0,
        0.5,
        1200.0,
        1000.0,
        range,
        true,
    )
    .unwrap();
    assert_eq!(clipped, range.max);
}
