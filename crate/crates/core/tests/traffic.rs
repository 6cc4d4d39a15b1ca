use densmon::dataplane::{read_trace, write_trace, Ipv4Prefix};
use densmon::kde::Density;
use densmon::traffic::{builtin_trace_spec, generate_trace, ground_truth_density, packet_size_truth, TraceSpec};

const BIN: u32 = 1;

/// ISE between the histogram of integer `values` (bins of width `BIN`
/// starting at 0) and the truth density.
fn histogram_ise(values: &[u32], truth: &Density, hi: f64) -> f64 {
    let bins = (hi as u32).div_ceil(BIN) as usize + 1;
    let mut counts = vec![0u64; bins];
    for &v in values {
        counts[(v / BIN) as usize] += 1;
    }
    let n = values.len() as f64;
    let sub = 32;
    let dx = f64::from(BIN) / sub as f64;
    counts
        .iter()
        .enumerate()
        .map(|(b, &c)| {
            let height = c as f64 / (n * f64::from(BIN));
            (0..sub)
                .map(|j| {
                    let x = (b as u32 * BIN) as f64 + (j as f64 + 0.5) * dx;
                    (height - truth.evaluate(x)).powi(2) * dx
                })
                .sum::<f64>()
        })
        .sum()
}

fn web_sizes(spec: &TraceSpec) -> Vec<u32> {
    let web: Ipv4Prefix = "42.0.0.0/8".parse().unwrap();
    generate_trace(spec)
        .unwrap()
        .iter()
        .filter(|p| web.contains(p.src))
        .map(|p| p.size)
        .collect()
}

#[test]
fn packet_sizes_follow_their_truth() {
    let spec = packet_size_truth();
    let truth = ground_truth_density(&spec, spec.default_grid()).unwrap();
    let mut ises = Vec::new();
    for secs in [2.0, 8.0, 32.0, 80.0] {
        let sizes = web_sizes(&builtin_trace_spec(11, secs));
        let e = histogram_ise(&sizes, &truth, spec.support.1);
        eprintln!("{secs} s: {} packets, ise {e:.3e}", sizes.len());
        ises.push((sizes.len(), e));
    }
    assert!(ises.windows(2).all(|w| w[1].1 < w[0].1), "ise not decreasing: {ises:?}");
    let (n, e) = *ises.last().unwrap();
    assert!(n >= 1_000_000, "only {n} packets");
    assert!(e < 1e-3, "ise {e}");
}

#[test]
fn trace_csv_round_trip() {
    let packets = generate_trace(&builtin_trace_spec(3, 2.0)).unwrap();
    let mut bytes = Vec::new();
    write_trace(&mut bytes, &packets).unwrap();
    assert_eq!(read_trace(bytes.as_slice()).unwrap(), packets);
    let mut again = Vec::new();
    write_trace(&mut again, &generate_trace(&builtin_trace_spec(3, 2.0)).unwrap()).unwrap();
    assert_eq!(again, bytes);
}

#[test]
fn trace_spec_toml_round_trip() {
    let spec = builtin_trace_spec(8, 5.0);
    let back = TraceSpec::from_toml(&spec.to_toml()).unwrap();
    assert_eq!(generate_trace(&back).unwrap(), generate_trace(&spec).unwrap());
}
