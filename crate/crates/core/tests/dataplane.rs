use std::collections::BTreeMap;

use densmon::dataplane::{
    compile_rules, Constraint, FeatureKind, FieldMatch, FlowKey, Packet, Pipeline, PipelineConfig, PortRange,
};
use densmon::kde::{Density, GridSpec};
use densmon::scoring::{build_score_table, Quantizer};
use densmon::traffic::{builtin_trace_spec, generate_trace};
use densmon::TaskId;

fn all_traffic(tasks: &[(TaskId, FeatureKind, u64)], slots: usize) -> Pipeline {
    let ids = tasks.iter().map(|t| t.0).collect();
    Pipeline::new(
        PipelineConfig {
            flowlet_slots: slots,
            ..PipelineConfig::default()
        },
        compile_rules(&[(Constraint::default(), ids)]),
        tasks,
    )
    .unwrap()
}

fn light_trace() -> Vec<Packet> {
    let mut spec = builtin_trace_spec(21, 10.0);
    spec.classes.iter_mut().for_each(|c| c.flows_per_sec /= 4.0);
    generate_trace(&spec).unwrap()
}

#[test]
fn flowlets_account_for_every_packet_of_a_flow() {
    let packets = light_trace();
    let tasks = [(TaskId(1), FeatureKind::FlowletPackets, u64::MAX), (TaskId(2), FeatureKind::FlowletBytes, u64::MAX)];
    let mut p = all_traffic(&tasks, 1 << 20);
    packets.iter().for_each(|pk| p.process_packet(pk));
    p.flush_flowlets(packets.last().unwrap().ts_ns);
    let report = p.end_of_step();
    assert_eq!(report.collisions, 0);

    let total_packets: u64 = report.samples(TaskId(1)).iter().map(|&v| v as u64).sum();
    let total_bytes: u64 = report.samples(TaskId(2)).iter().map(|&v| v as u64).sum();
    assert_eq!(total_packets, packets.len() as u64);
    assert_eq!(total_bytes, packets.iter().map(|p| u64::from(p.size)).sum::<u64>());

    let mut per_flow: BTreeMap<FlowKey, u64> = BTreeMap::new();
    packets.iter().for_each(|p| *per_flow.entry(p.flow_key()).or_default() += 1);
    assert!(per_flow.len() > 100);
}

#[test]
fn conservation_holds_with_tables_installed() {
    let packets = generate_trace(&builtin_trace_spec(22, 6.0)).unwrap();
    let tasks = [(TaskId(1), FeatureKind::PacketSize, 300), (TaskId(2), FeatureKind::InterArrivalTime, 50)];
    let mut p = all_traffic(&tasks, 1 << 16);
    let grid = GridSpec::new(0.0, 1600.0, 1 << 10).unwrap();
    let flat = Density::uniform(grid, 0.0, 1600.0).unwrap();
    let tables = vec![build_score_table(TaskId(1), &flat, 4, Quantizer::IDENTITY).unwrap(); 3];
    p.install_tables(TaskId(1), 1, tables).unwrap();

    let start = packets[0].ts_ns;
    let mut step_end = start + 1_000_000_000;
    let mut reports = Vec::new();
    for pk in &packets {
        while pk.ts_ns >= step_end {
            reports.push(p.end_of_step());
            step_end += 1_000_000_000;
        }
        p.process_packet(pk);
    }
    reports.push(p.end_of_step());

    let mut scored = 0u64;
    let mut counted = 0u64;
    for r in &reports {
        for (id, t) in &r.tasks {
            assert_eq!(t.stats.sampled + t.stats.scored, t.stats.extracted);
            assert_eq!(r.samples(*id).len() as u64, t.stats.sampled);
            assert!(t.stats.sampled <= t.rate);
        }
        let t1 = &r.tasks[&TaskId(1)];
        assert_eq!(t1.table_version, Some(1));
        assert_eq!(t1.counters.reward_sums.len(), 3);
        scored += t1.stats.scored;
        counted += t1.counters.test_count;
    }
    assert_eq!(counted, scored);
    assert!(scored > 0);
}

#[test]
fn empty_step_gives_empty_report() {
    let mut p = all_traffic(&[(TaskId(4), FeatureKind::PacketSize, 10)], 16);
    let r = p.end_of_step();
    assert!(r.export.is_empty());
    let t = &r.tasks[&TaskId(4)];
    assert_eq!((t.stats.extracted, t.counters.test_count, r.collisions), (0, 0, 0));
    assert_eq!(p.end_of_step().step, 1);
}

#[test]
fn overlapping_constraints_reach_every_matching_task() {
    let web = "42.0.0.0/8".parse().unwrap();
    let rules = compile_rules(&[
        (Constraint::new(vec![FieldMatch::Src(web)]), [TaskId(1)].into_iter().collect()),
        (
            Constraint::new(vec![FieldMatch::Dport(PortRange { lo: 0, hi: 1023 })]),
            [TaskId(2)].into_iter().collect(),
        ),
    ]);
    let tasks = [(TaskId(1), FeatureKind::PacketSize, u64::MAX), (TaskId(2), FeatureKind::PacketSize, u64::MAX)];
    let mut p = Pipeline::new(PipelineConfig::default(), rules, &tasks).unwrap();
    let packets = generate_trace(&builtin_trace_spec(23, 2.0)).unwrap();
    packets.iter().for_each(|pk| p.process_packet(pk));
    let r = p.end_of_step();
    let want1 = packets.iter().filter(|pk| web.contains(pk.src)).count() as u64;
    let want2 = packets.iter().filter(|pk| pk.dport <= 1023).count() as u64;
    assert_eq!(r.tasks[&TaskId(1)].stats.extracted, want1);
    assert_eq!(r.tasks[&TaskId(2)].stats.extracted, want2);
    assert!(want1 > 0 && want2 > 0 && want1 != want2);
}
