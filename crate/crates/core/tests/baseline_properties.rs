use std::path::Path;

use proptest::prelude::*;

use tipi_core::baseline::{pre_adapt, reactive_act, BalanceGains, FrozenParams};
use tipi_core::controller::SensorVector;
use tipi_core::harness::{run_session, Condition, SessionConfig};
use tipi_core::Error;

fn frozen(seed: u64, steps: u64) -> FrozenParams {
    pre_adapt(&SessionConfig::default(), seed, steps).unwrap()
}

#[test]
fn pre_adapt_needs_at_least_one_step() {
    assert!(matches!(pre_adapt(&SessionConfig::default(), 1, 0), Err(Error::Config(_))));
}

#[test]
fn pre_adapt_is_a_function_of_the_seed() {
    let a = frozen(5, 2000);
    assert_eq!(a.digest(), frozen(5, 2000).digest());
    assert_ne!(a.digest(), frozen(6, 2000).digest());
    assert_eq!((a.provenance().seed, a.provenance().steps), (5, 2000));
    assert_eq!(a.provenance().digest, a.digest());
}

#[test]
fn frozen_file_round_trip_keeps_the_digest() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("frozen.json");
    let a = frozen(3, 1500);
    a.write(&path).unwrap();
    let b = FrozenParams::read(&path).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.digest(), b.digest());
}

// math library results differ across platforms, so only the reference
// platform is expected to reproduce the committed file bit for bit
#[cfg_attr(not(all(target_os = "linux", target_arch = "x86_64")), ignore)]
#[test]
fn committed_asset_regenerates() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../assets/frozen_rea_seed42.json");
    let committed = FrozenParams::read(&path).unwrap();
    let p = committed.provenance();
    assert_eq!((p.seed, p.steps), (42, 50_000));
    assert_eq!(frozen(42, 50_000).digest(), committed.digest());
}

#[test]
fn reactive_session_never_changes_its_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("frozen.json");
    let f = frozen(8, 1000);
    f.write(&path).unwrap();
    let log = run_session(&SessionConfig {
        condition: Condition::BalancedRea,
        duration_steps: 800,
        frozen_params: Some(path),
        ..SessionConfig::default()
    })
    .unwrap();
    let s = log.summary.unwrap();
    assert_eq!(s.digest_start, f.digest());
    assert_eq!(s.digest_end, f.digest());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn same_reading_same_command(
        s in prop::collection::vec(-3.0..3.0f64, 5),
        held in -3.0..3.0f64,
    ) {
        let f = frozen(2, 300);
        let gains = BalanceGains::default();
        let reading = SensorVector::from_slice(&s).unwrap();
        let a = reactive_act(&reading, &f, held, &gains).unwrap();
        let b = reactive_act(&reading, &f, held, &gains).unwrap();
        prop_assert_eq!(a, b);
        prop_assert!((0.0..=1.0).contains(&a.speed));
        prop_assert!(a.heading > -std::f64::consts::PI && a.heading <= std::f64::consts::PI);
    }
}
