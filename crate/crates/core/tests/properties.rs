use densmon::cli::{parse_config, render_config};
use densmon::dataplane::{range_to_prefixes, PortRange};
use densmon::kde::{ise, Density, GridSpec};
use densmon::normalizer::{
    fit_linear, fit_nonlinear, predict_sample_size, predict_score, FitModel, FitPoints, SizeBounds, KDE_RATE,
};
use densmon::scoring::{build_score_table, expected_score, masked_key, score_update, Quantizer, ScoreCounters};
use densmon::TaskId;
use proptest::prelude::*;

fn grid() -> GridSpec {
    GridSpec::new(-5.0, 5.0, 1 << 10).unwrap()
}

/// A normalized mixture of up to three Gaussian bumps on the test grid.
fn mixture() -> impl Strategy<Value = Density> {
    prop::collection::vec((-3.0f64..3.0, 0.2f64..1.5, 0.1f64..1.0), 1..4).prop_map(|bumps| {
        Density::from_fn(
            grid(),
            |x| {
                bumps
                    .iter()
                    .map(|(m, s, w)| w * (-0.5 * ((x - m) / s).powi(2)).exp() / s)
                    .sum()
            },
            1.0,
            1,
        )
        .unwrap()
    })
}

fn model() -> impl Strategy<Value = FitModel> {
    (1e-4f64..10.0, 0.01f64..100.0, 0.2f64..1.6).prop_map(|(qs_opt, k, r)| FitModel {
        qs_opt,
        c: qs_opt * k,
        r,
        residual: 0.0,
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn truth_scores_best(t in mixture(), e in mixture()) {
        let best = expected_score(&t, &t).unwrap();
        let other = expected_score(&e, &t).unwrap();
        let d = ise(&e, &t).unwrap();
        prop_assert!(other <= best + 1e-12);
        prop_assert!((best - other - d).abs() <= 1e-9 * best.max(1.0));
    }

    #[test]
    fn counters_ignore_test_order(e in mixture(), xs in prop::collection::vec(-6.0f64..6.0, 1..400), seed in any::<u64>()) {
        let q = Quantizer::new(64.0).unwrap();
        let tables = vec![build_score_table(TaskId(1), &e, 2, q).unwrap()];
        let keys: Vec<i64> = xs.iter().map(|&x| q.quantize(x)).collect();
        let mut shuffled = keys.clone();
        let mut s = seed;
        for i in (1..shuffled.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (s >> 33) as usize % (i + 1));
        }
        let (mut a, mut b) = (ScoreCounters::new(1), ScoreCounters::new(1));
        keys.iter().for_each(|&k| score_update(&tables, &mut a, k));
        shuffled.iter().for_each(|&k| score_update(&tables, &mut b, k));
        prop_assert_eq!(a.test_count, b.test_count);
        let scale = a.reward_sums[0].abs().max(1e-300);
        prop_assert!((a.reward_sums[0] - b.reward_sums[0]).abs() <= 1e-12 * scale);
    }

    #[test]
    fn masked_key_is_floor_division(q in any::<i64>(), e in 0u32..40) {
        prop_assert_eq!(masked_key(q, e), q.div_euclid(1i64 << e));
    }

    #[test]
    fn fits_respect_constraints(
        scores in prop::collection::vec(-1.0f64..3.0, 3..7),
        slack in 0.0f64..1.0,
    ) {
        let sizes: Vec<u64> = (1..=scores.len() as u64).map(|j| 6_000 / j).collect();
        let qs_max = scores.iter().cloned().fold(f64::MIN, f64::max) + slack;
        let points = FitPoints::new(sizes, scores, qs_max).unwrap();
        for fit in [fit_linear(&points).unwrap(), fit_nonlinear(&points).unwrap()] {
            prop_assert!(fit.qs_opt >= qs_max);
            prop_assert!(fit.c >= 0.0);
            prop_assert!(fit.r > 0.0);
        }
        let linear = fit_linear(&points).unwrap();
        prop_assert_eq!(linear.r, KDE_RATE);
        // No feasible point on a coarse lattice does better.
        let u: Vec<f64> = points.sizes().iter().map(|&n| (n as f64).powf(-KDE_RATE)).collect();
        for i in 0..20 {
            for j in 0..20 {
                let q = qs_max + 0.2 * i as f64;
                let c = 40.0 * j as f64;
                let res: f64 = points.mean_scores().iter().zip(&u).map(|(s, ui)| (q - s - c * ui).powi(2)).sum::<f64>().sqrt();
                prop_assert!(linear.residual <= res + 1e-9);
            }
        }
    }

    #[test]
    fn sample_size_round_trip(m in model(), a in 0.01f64..0.999) {
        let bounds = SizeBounds { min: 1, max: 1 << 40 };
        let n = predict_sample_size(&m, a, bounds).unwrap();
        if n < bounds.max {
            prop_assert!(predict_score(&m, n) >= a);
        }
        if n > bounds.min {
            prop_assert!(predict_score(&m, n - 1) < a);
        }
    }

    #[test]
    fn port_prefixes_cover_exactly(lo in any::<u16>(), len in 0u16..2000) {
        let hi = lo.saturating_add(len);
        let prefixes = range_to_prefixes(PortRange { lo, hi });
        let probes = [lo.saturating_sub(1), lo, lo / 2 + hi / 2, hi, hi.saturating_add(1)];
        for p in probes {
            let hits = prefixes.iter().filter(|t| p & t.mask == t.value & t.mask).count();
            let inside = p >= lo && p <= hi;
            prop_assert_eq!(hits, usize::from(inside));
        }
    }
}

fn feature() -> impl Strategy<Value = String> {
    (
        prop::sample::select(vec![
            "packet_size",
            "inter_arrival_time",
            "flowlet_packets",
            "flowlet_bytes",
            "flowlet_duration",
            "burst_size",
        ]),
        prop::option::of(1u32..999),
    )
        .prop_map(|(f, t)| match t {
            Some(t) => format!("{f}@0.{t:03}"),
            None => f.to_string(),
        })
}

fn field() -> impl Strategy<Value = String> {
    prop_oneof![
        (any::<[u8; 4]>(), 0u8..=32).prop_map(|(a, l)| format!("src({}.{}.{}.{}/{l})", a[0], a[1], a[2], a[3])),
        (any::<[u8; 4]>(), 0u8..=32).prop_map(|(a, l)| format!("dst({}.{}.{}.{}/{l})", a[0], a[1], a[2], a[3])),
        prop::sample::select(vec!["proto(TCP)", "proto(UDP)", "proto(ICMP)", "proto(47)"]).prop_map(String::from),
        (any::<u16>(), 0u16..500).prop_map(|(p, w)| format!("sport({p}-{})", p.saturating_add(w))),
        any::<u16>().prop_map(|p| format!("dport({p})")),
    ]
}

fn document() -> impl Strategy<Value = String> {
    let constraint = prop_oneof![
        Just("*".to_string()),
        prop::collection::vec(field(), 1..3).prop_map(|f| f.join(" & ")),
    ];
    let block = (constraint, prop::collection::vec(feature(), 1..3))
        .prop_map(|(c, fs)| format!("{c} {{ {} }}", fs.join(" ")));
    let switch = ("[a-z][a-z0-9]{0,6}", prop::collection::vec(block, 1..3))
        .prop_map(|(n, bs)| format!("{n} {{\n  {}\n}}", bs.join("\n  ")));
    (
        prop::collection::vec(switch, 1..3),
        any::<u32>(),
        1u64..5000,
        prop::option::of(1u64..100),
    )
        .prop_map(|(switches, seed, step_ms, steps)| {
            let mut doc = format!("seed {seed}\nstep {step_ms}ms\n");
            if let Some(s) = steps {
                doc += &format!("steps {s}\n");
            }
            doc + &switches.join("\n")
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn config_render_round_trip(doc in document()) {
        let parsed = parse_config(&doc);
        prop_assert!(parsed.is_ok(), "{:?}\n{doc}", parsed.as_ref().err());
        let parsed = parsed.unwrap();
        let rendered = render_config(&parsed);
        let again = parse_config(&rendered).map_err(|e| TestCaseError::fail(format!("{e}\n{rendered}")))?;
        prop_assert_eq!(again, parsed);
    }
}
