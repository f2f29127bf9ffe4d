//! Property tests for the simulator laws and protocol invariants.

use proptest::prelude::*;

use decaytherm_core::bitmap::DecayBitmap;
use decaytherm_core::cell::{equivalent_decay_time, CellArray};
use decaytherm_core::enroll::jaccard;
use decaytherm_core::infer::{approx_temperature, majority_vote, ApproxModel, ApproxSegment};
use decaytherm_core::params::SimParams;
use decaytherm_core::wire::{decode_message, encode_message, SpyMessage};

fn noiseless() -> SimParams {
    SimParams {
        noise_sigma: 0.0,
        time_jitter_s: 0.0,
        ..SimParams::default()
    }
}

// Small arrays keep the case count high; the laws are size-independent.
fn test_array(seed: u64, params: SimParams) -> CellArray {
    CellArray::build(seed, 1 << 14, params).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // Bit-flips at a lower temperature are a subset of those at a higher
    // one, for any ΔT and decay time (noiseless).
    #[test]
    fn subset_law(seed in any::<u64>(), temp in -10.0..55.0f64, dt in 0.001..15.0f64, t in 1.0..600.0f64) {
        let array = test_array(seed, noiseless());
        let lo = array.decay_measure(temp, t, 0).unwrap();
        let hi = array.decay_measure(temp + dt, t, 0).unwrap();
        prop_assert!(lo.is_subset_of(&hi));
    }

    // Counts are monotone in decay time at fixed temperature.
    #[test]
    fn time_monotonicity(seed in any::<u64>(), temp in -10.0..60.0f64, t1 in 1.0..600.0f64, extra in 0.0..600.0f64) {
        let array = test_array(seed, noiseless());
        let short = array.decay_measure(temp, t1, 0).unwrap();
        let long = array.decay_measure(temp, t1 + extra, 0).unwrap();
        prop_assert!(short.is_subset_of(&long));
        prop_assert!(short.count() <= long.count());
    }

    // Exact time-temperature duality: shifting T by ΔT equals scaling t by
    // e^(k·ΔT), as identical flip sets.
    #[test]
    fn duality_is_exact(seed in any::<u64>(), temp in 0.0..45.0f64, dt in 0.001..15.0f64, t in 1.0..600.0f64) {
        let array = test_array(seed, noiseless());
        let k = array.params().k_true;
        let hot = array.decay_measure(temp + dt, t, 0).unwrap();
        let long = array.decay_measure(temp, equivalent_decay_time(t, k, dt), 0).unwrap();
        prop_assert_eq!(hot.flipped(), long.flipped());
    }

    // Identical inputs (including the measurement seed) give identical
    // bitmaps even under noise.
    #[test]
    fn measurements_are_deterministic(seed in any::<u64>(), mseed in any::<u64>(), temp in 0.0..60.0f64, t in 1.0..400.0f64) {
        let array = test_array(seed, SimParams::default());
        let a = array.decay_measure(temp, t, mseed).unwrap();
        let b = array.decay_measure(temp, t, mseed).unwrap();
        prop_assert_eq!(a, b);
    }

    // Jaccard is symmetric and 1 on itself.
    #[test]
    fn jaccard_symmetry(seed in any::<u64>(), t1 in 1.0..400.0f64, t2 in 1.0..400.0f64) {
        let array = test_array(seed, SimParams::default());
        let a = array.decay_measure(35.0, t1, 1).unwrap();
        let b = array.decay_measure(35.0, t2, 2).unwrap();
        prop_assert_eq!(jaccard(&a, &b).unwrap(), jaccard(&b, &a).unwrap());
        prop_assert_eq!(jaccard(&a, &a).unwrap(), 1.0);
    }

    // Wire protocol round trip in both directions.
    #[test]
    fn wire_round_trip(
        seq in any::<u64>(),
        ts in any::<u64>(),
        dev in "[A-Za-z0-9_.-]{1,24}",
        region in "[A-Za-z0-9_.-]{1,12}",
        ms in 1..u64::MAX,
        flips in any::<u64>(),
    ) {
        let msg = SpyMessage {
            seq,
            timestamp_s: ts,
            device_id: dev,
            region_id: region,
            decay_time_ms: ms,
            flip_count: flips,
        };
        let line = encode_message(&msg).unwrap();
        prop_assert_eq!(decode_message(&line).unwrap(), msg);
        let line2 = line.clone();
        prop_assert_eq!(encode_message(&decode_message(&line).unwrap()).unwrap(), line2);
    }

    // Inference with (model, p) equals inference with (model, 1) on counts
    // pre-multiplied by p, to machine precision.
    #[test]
    fn p_scaling_equivalence(c1 in 5.0..40.0f64, c2 in 1e-6..1e-3f64, p in 0.2..5.0f64, bf in 0.0..1e6f64) {
        let base = ApproxModel {
            segments: vec![ApproxSegment { t_lo_c: 0.0, t_hi_c: 70.0, c1, c2 }],
            k: Some(0.07),
            p: 1.0,
            decay_time_s: 240.0,
            region_size_bits: 1 << 23,
            enroll_device_id: "prop".into(),
            monotone: true,
        };
        let scaled = base.with_p(p);
        prop_assert_eq!(approx_temperature(&scaled, bf), approx_temperature(&base, bf * p));
    }

    // If strictly fewer than ceil(l/2) indicator cells are erroneous, the
    // vote is correct, for any error pattern.
    #[test]
    fn majority_tolerates_bounded_errors(l in prop::sample::select(vec![3usize, 5, 7]), pattern in any::<u32>(), truth in any::<bool>()) {
        let cells: Vec<u64> = (0..l as u64).collect();
        let errors: Vec<bool> = (0..l).map(|i| pattern & (1 << i) != 0).collect();
        let n_err = errors.iter().filter(|&&e| e).count();
        prop_assume!(n_err <= l / 2);
        // Cell reads: truth XOR error.
        let flipped: Vec<u64> = cells
            .iter()
            .filter(|&&c| truth != errors[c as usize])
            .copied()
            .collect();
        let bm = DecayBitmap::new(64, 30.0, 120.0, 0, flipped).unwrap();
        prop_assert_eq!(majority_vote(&bm, &cells), truth);
    }
}
