use std::path::Path;

use hpinn_autodiff::Tensor;
use hpinn_core::data::{
    apply_normalization, drop_constant_sensors, fit_normalization, format_series, make_windows, parse_series_text,
    split_validation, test_last_window, NormStats, UnitSeries, RAW_SENSORS, RUL_CAP,
};
use hpinn_core::synthetic::{generate, SyntheticSpec};
use proptest::prelude::*;

fn unit(id: u32, len: usize, sensors: usize, seed: u64) -> UnitSeries {
    UnitSeries {
        unit: id,
        cycles: (1..=len as u32).collect(),
        settings: (0..len).map(|r| [r as f64 * 1e-3, -0.25, 100.0]).collect(),
        sensors: Tensor::from_fn(len, sensors, |r, c| ((r * 31 + c * 7) as u64 ^ seed) as f64 * 0.01),
    }
}

fn stats(sensors: usize, t_max: f64) -> NormStats {
    NormStats { min: vec![0.0; sensors], max: vec![1.0; sensors], t_max }
}

proptest! {
    #[test]
    fn window_count_matches_enumeration(len in 1usize..260, window in 1usize..70) {
        let u = unit(4, len, 3, 9);
        let got = make_windows(&u, window, 1, &stats(3, 400.0)).unwrap();
        // naive enumeration of every start index whose window fits
        let mut expected = Vec::new();
        for start in 0..len {
            if start + window <= len {
                expected.push(start);
            }
        }
        prop_assert_eq!(got.len(), expected.len());
        for (w, &start) in got.iter().zip(&expected) {
            prop_assert_eq!(w.end_cycle as usize, start + window);
            for r in 0..window {
                prop_assert_eq!(w.x.row_slice(r), u.sensors.row_slice(start + r));
            }
        }
    }

    #[test]
    fn labels_are_capped_nonincreasing_and_end_at_zero(len in 1usize..400, window in 1usize..61) {
        prop_assume!(len >= window);
        let windows = make_windows(&unit(1, len, 2, 0), window, 1, &stats(2, len as f64)).unwrap();
        prop_assert!(windows.iter().all(|w| (0.0..=RUL_CAP).contains(&w.label)));
        prop_assert!(windows.windows(2).all(|p| p[1].label <= p[0].label));
        prop_assert_eq!(windows.last().unwrap().label, 0.0);
        prop_assert_eq!(windows.last().unwrap().t_norm, 1.0);
        for w in &windows {
            prop_assert_eq!(w.label, RUL_CAP.min((len as u32 - w.end_cycle) as f64));
        }
    }

    #[test]
    fn last_window_pads_with_the_first_row(len in 1usize..90, window in 1usize..70, rul in 0u32..300) {
        let u = unit(2, len, 3, 5);
        let w = test_last_window(&u, window, rul, &stats(3, 200.0));
        prop_assert_eq!(w.x.shape(), (window, 3));
        prop_assert_eq!(w.end_cycle as usize, len);
        prop_assert_eq!(w.label, RUL_CAP.min(rul as f64));
        let pad = window.saturating_sub(len);
        for r in 0..window {
            let src = if r < pad { 0 } else { len - (window - r) };
            prop_assert_eq!(w.x.row_slice(r), u.sensors.row_slice(src));
        }
    }

    #[test]
    fn raw_text_round_trips(seed in any::<u64>(), units in 1usize..4) {
        let spec = SyntheticSpec { train_units: units, test_units: 1, life: (3, 30), conditions: 2, noise: 0.05, seed };
        let raw = generate(&spec);
        let text = format_series(&raw.train);
        let parsed = parse_series_text(&text, Path::new("round.txt")).unwrap();
        prop_assert_eq!(&parsed, &raw.train);
        prop_assert_eq!(format_series(&parsed), text);
    }

    #[test]
    fn split_is_a_seeded_partition(n in 1usize..300, seed in any::<u64>(), fraction in 0.01f64..0.99) {
        let u = unit(3, n, 1, 1);
        let windows = make_windows(&u, 1, 1, &stats(1, n as f64)).unwrap();
        let (train, val) = split_validation(windows.clone(), fraction, seed).unwrap();
        prop_assert_eq!(val.len(), (fraction * n as f64).round() as usize);
        prop_assert_eq!(train.len() + val.len(), n);
        let mut ends: Vec<u32> = train.iter().chain(&val).map(|w| w.end_cycle).collect();
        ends.sort_unstable();
        prop_assert_eq!(ends, (1..=n as u32).collect::<Vec<_>>());
        let again = split_validation(windows, fraction, seed).unwrap();
        prop_assert_eq!(again, (train, val));
    }

    #[test]
    fn normalized_training_values_lie_in_unit_interval(seed in any::<u64>()) {
        let raw = generate(&SyntheticSpec { seed, ..SyntheticSpec::small(0) });
        let kept = drop_constant_sensors(&raw.train).unwrap();
        let stats = fit_normalization(&kept).unwrap();
        for u in apply_normalization(&kept, &stats).unwrap() {
            prop_assert!(u.sensors.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
        prop_assert_eq!(stats.t_max, raw.train.iter().map(|u| u.last_cycle()).max().unwrap() as f64);
    }
}

#[test]
fn second_drop_is_rejected() {
    let once = drop_constant_sensors(&[unit(1, 5, RAW_SENSORS, 0)]).unwrap();
    assert_eq!(once[0].sensor_count(), 14);
    assert!(drop_constant_sensors(&once).is_err());
}

#[test]
fn test_values_may_leave_the_unit_interval() {
    let s = NormStats { min: vec![10.0], max: vec![30.0], t_max: 1.0 };
    let mut u = unit(1, 1, 1, 0);
    u.sensors = Tensor::scalar(35.0);
    assert_eq!(apply_normalization(&[u], &s).unwrap()[0].sensors.item(), 1.25);
}
