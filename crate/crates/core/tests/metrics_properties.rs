use nalgebra::DVector;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use tipi_core::metrics::{discrete_mi, gaussian_ar1_mi, median, running_tipi, DiscreteJoint};

fn table(k: usize) -> impl Strategy<Value = Vec<Vec<u64>>> {
    prop::collection::vec(prop::collection::vec(0u64..40, k), k)
        .prop_filter("some mass", |t| t.iter().flatten().any(|c| *c > 0))
}

proptest! {
    #[test]
    fn mi_is_never_negative(counts in table(4)) {
        prop_assert!(discrete_mi(&DiscreteJoint::new(counts).unwrap()) >= 0.0);
    }

    #[test]
    fn ar1_closed_form_is_never_negative(a in -0.999..0.999f64) {
        prop_assert!(gaussian_ar1_mi(a).unwrap() >= 0.0);
    }

    #[test]
    fn merging_symbols_never_adds_information(
        counts in table(5),
        map in prop::collection::vec(0usize..3, 5),
    ) {
        let fine = DiscreteJoint::new(counts).unwrap();
        let coarse = fine.coarsen(&map, 3).unwrap();
        prop_assert_eq!(coarse.total(), fine.total());
        prop_assert!(discrete_mi(&coarse) <= discrete_mi(&fine) + 1e-12);
    }
}

#[test]
fn ar1_coefficient_outside_the_unit_interval_is_rejected() {
    for a in [1.0, -1.0, 1.5, f64::NAN] {
        assert!(gaussian_ar1_mi(a).is_err());
    }
}

/// Stationary AR(1) series and its one-step prediction errors.
fn ar1(a: f64, len: usize, seed: u64) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = (1.0 - a * a).sqrt();
    let mut x: f64 = StandardNormal.sample(&mut rng);
    let mut ds = Vec::with_capacity(len);
    let mut xi = Vec::with_capacity(len);
    for _ in 0..len {
        let e: f64 = StandardNormal.sample(&mut rng);
        let next = a * x + scale * e;
        ds.push(DVector::from_element(1, next));
        xi.push(DVector::from_element(1, next - a * x));
        x = next;
    }
    (ds, xi)
}

#[test]
fn windowed_estimate_approaches_the_closed_form_as_the_window_grows() {
    let a = 0.9;
    let exact = gaussian_ar1_mi(a).unwrap();
    let errors: Vec<f64> = [500, 2000, 5000]
        .into_iter()
        .map(|window| {
            let per_seed: Vec<f64> = (0..20)
                .map(|seed| {
                    let (ds, xi) = ar1(a, window, 1000 + seed);
                    (running_tipi(&ds, &xi, window, 1e-9).unwrap()[0] - exact).abs()
                })
                .collect();
            median(&per_seed).unwrap()
        })
        .collect();
    assert!(errors[0] > errors[1] && errors[1] > errors[2], "median errors {errors:?}");
}
