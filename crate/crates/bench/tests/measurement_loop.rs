use lambda_bench::{echo_manifest, run_bench, ticker_bag, BenchConfig, PhasePlan};

#[test]
fn steady_emitter_fills_each_phase() {
    let dir = tempfile::tempdir().unwrap();
    let bag = ticker_bag("/tick", 10.0, 1.0).unwrap();
    let mut cfg = BenchConfig::new(dir.path());
    cfg.plan = PhasePlan { warmup: 1.0, phase_count: 3, phase_length: 2.0 };
    let out = run_bench(&bag, &[echo_manifest("echo", "/tick", 0.0)], &cfg).unwrap();

    let per_phase: Vec<usize> = (1..=3).map(|p| out.rows.iter().filter(|r| r.phase == p).count()).collect();
    for n in &per_phase {
        assert!((17..=23).contains(n), "{per_phase:?}");
    }
    assert!(out.warmup_dropped >= 8, "{}", out.warmup_dropped);
    assert_eq!(out.t_in_mismatches, 0);
    assert!(out.rows.iter().all(|r| r.t_out_ns >= r.t_in_ns && r.rtt_ms >= 0.0));
    assert!(out.rows.iter().all(|r| r.function == "echo" && r.implementation == "native"));
    assert!(out.csv.exists() && out.summary.exists() && out.plot.as_ref().unwrap().exists());
    assert_eq!(out.hosts.len(), 1);
    assert!(out.replay.loops >= 6);
}

#[test]
fn bad_manifest_fails_before_replay() {
    let dir = tempfile::tempdir().unwrap();
    let bag = ticker_bag("/tick", 10.0, 1.0).unwrap();
    let mut m = echo_manifest("echo", "/tick", 0.0);
    m.entry = lambda_proto::Entry::Native("nope".into());
    let cfg = BenchConfig::new(dir.path());
    let t = std::time::Instant::now();
    assert!(run_bench(&bag, &[m], &cfg).is_err());
    assert!(t.elapsed().as_secs() < 5);
}
