use std::collections::BTreeMap;

use proptest::prelude::*;

use tilesim_core::coherent::{
    check_carrier, coherent_gain, evaluate_with_residuals, BeamformingSpec, CoherentError, SdrNode,
    TimingSource,
};
use tilesim_core::fabric::{build_default_fabric, FabricConfig};

proptest! {
    #[test]
    fn gain_lies_between_zero_and_n_squared(phases in prop::collection::vec(-10.0f64..10.0, 1..200)) {
        let g = coherent_gain(&phases).unwrap();
        let n = phases.len() as f64;
        prop_assert!(g >= 0.0);
        prop_assert!(g <= n * n * (1.0 + 1e-12));
    }

    #[test]
    fn common_phase_offset_leaves_gain_unchanged(
        phases in prop::collection::vec(-3.2f64..3.2, 1..200),
        offset in -100.0f64..100.0,
    ) {
        let shifted: Vec<f64> = phases.iter().map(|p| p + offset).collect();
        let a = coherent_gain(&phases).unwrap();
        let b = coherent_gain(&shifted).unwrap();
        let n = phases.len() as f64;
        // Relative to the largest attainable gain, since `a` itself may be near zero.
        prop_assert!((a - b).abs() <= 1e-9 * n * n, "{a} vs {b}");
    }

    #[test]
    fn carriers_outside_the_sdr_band_are_rejected(hz in prop_oneof![1.0f64..69.9e6, 6.0001e9..1e11]) {
        let msg = check_carrier(hz).unwrap_err().to_string();
        prop_assert!(msg.contains("70 MHz..6 GHz"), "{msg}");
        prop_assert!(SdrNode::new(0, hz, 0.0).is_err());
    }

    #[test]
    fn monte_carlo_is_reproducible_per_seed(seed in any::<u64>(), spread in 0i64..2_000) {
        let f = build_default_fabric(&FabricConfig::default()).unwrap();
        let residuals: BTreeMap<u32, Vec<i64>> =
            f.tiles.iter().map(|t| (t.id, vec![-spread, 0, spread])).collect();
        let spec = BeamformingSpec { trials: 32, ..BeamformingSpec::default() };
        let a = evaluate_with_residuals(&f, &residuals, &spec, seed).unwrap();
        let b = evaluate_with_residuals(&f, &residuals, &spec, seed).unwrap();
        prop_assert_eq!(&a.per_trial, &b.per_trial);
        let n2 = (a.n * a.n) as f64;
        prop_assert!(a.per_trial.iter().all(|&g| (0.0..=n2 * (1.0 + 1e-12)).contains(&g)));
    }
}

#[test]
fn seven_gigahertz_is_out_of_range() {
    assert_eq!(
        check_carrier(7e9),
        Err(CoherentError::CarrierOutOfRange(7e9))
    );
    assert!(check_carrier(70e6).is_ok());
    assert!(check_carrier(6e9).is_ok());
}

#[test]
fn transmit_power_is_capped_at_twenty_dbm() {
    assert!(SdrNode::new(0, 2.4e9, 20.0).is_ok());
    assert_eq!(
        SdrNode::new(0, 2.4e9, 20.5),
        Err(CoherentError::TxPowerTooHigh(20.5))
    );
}

#[test]
fn missing_sync_data_names_the_tiles() {
    let f = build_default_fabric(&FabricConfig::default()).unwrap();
    let spec = BeamformingSpec {
        tiles: Some(vec![3, 4]),
        timing: TimingSource::Sync,
        ..BeamformingSpec::default()
    };
    let residuals = BTreeMap::from([(3, vec![0])]);
    assert_eq!(
        evaluate_with_residuals(&f, &residuals, &spec, 1).unwrap_err(),
        CoherentError::MissingSyncData(vec![4])
    );
}
