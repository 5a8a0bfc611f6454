use std::io::BufReader;

use twinsched::forecast::{
    checkpoint_from_json, checkpoint_to_json, lstm_forward, run_federation, FederationConfig, LocalSite, LstmParams, LstmShape,
    TrainConfig,
};
use twinsched::patterns::{build_knowledge, MiningLimits, Tdtdb};
use twinsched::simkernel::{simulate, ForecasterMode, SimConfig};
use twinsched::trace::{
    build_series, generate, parse_trace_reader, write_trace_csv, window_with, SyntheticConfig, TraceSchema, WindowSpec, FEATURES,
};

#[test]
fn trace_csv_to_checkpoint() {
    let gen = SyntheticConfig {
        clients: 2,
        duration_min: 600,
        correlation: 0.8,
        seed: 4,
        ..SyntheticConfig::default()
    };
    let trace = generate(&gen);
    let schema = TraceSchema::cluster_task_usage();
    let mut csv = Vec::new();
    write_trace_csv(&mut csv, &trace.samples, &schema).unwrap();
    let parsed = parse_trace_reader(csv.as_slice(), &schema).unwrap();
    assert_eq!(parsed.len(), trace.samples.len());

    let built = build_series(&parsed, &trace.assignment, schema.sampling_interval_min).unwrap();
    assert_eq!(built.series.len(), 2);
    let train = TrainConfig {
        epochs: 2,
        ..TrainConfig::default()
    };
    let sites: Vec<LocalSite> = built
        .series
        .iter()
        .map(|s| LocalSite::new(window_with(s, &WindowSpec::new(6, 1)).unwrap(), train))
        .collect();
    let init = LstmParams::init(LstmShape::new(FEATURES, 4, 1), 9);
    let out = run_federation(&sites, init, &FederationConfig { rounds: 2, ..FederationConfig::default() }).unwrap();
    assert_eq!(out.rounds.len(), 2);
    assert!(out.global.theta.is_finite());

    let restored = checkpoint_from_json(&checkpoint_to_json(&out.global)).unwrap();
    assert_eq!(restored.round, 2);
    let window = vec![[0.3, 0.2, 0.4]; 6];
    assert_eq!(lstm_forward(&restored.theta, &window).unwrap(), lstm_forward(&out.global.theta, &window).unwrap());
}

#[test]
fn simulated_tdtdb_round_trips_into_knowledge() {
    let cfg = SimConfig {
        mode: ForecasterMode::None,
        app_size: 20,
        horizon_min: 200,
        burst_prob: 0.2,
        ..SimConfig::default()
    };
    let out = simulate(&cfg).unwrap();
    assert!(!out.tdtdb.is_empty());
    let mut buf = Vec::new();
    out.tdtdb.write_jsonl(&mut buf).unwrap();
    let back = Tdtdb::read_jsonl(BufReader::new(buf.as_slice())).unwrap();
    assert_eq!(back, out.tdtdb);

    let limits = MiningLimits {
        max_elements: Some(2),
        max_itemset_size: Some(2),
    };
    let k = build_knowledge(&back, 0.1, Some(50), limits);
    for p in &k.nf {
        assert!(!k.sf.iter().any(|s| s.elements == p.elements), "{p} in both sets");
        assert!(p.support >= k.min_sup);
    }
}
