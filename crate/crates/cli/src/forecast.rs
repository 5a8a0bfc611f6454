use std::collections::BTreeMap;
use std::path::Path;

use twinsched::domain::ClientId;
use twinsched::forecast::{
    checkpoint_to_json, run_federation, FederationConfig, FederationOutcome, LocalSite, LstmParams, LstmShape, TrainConfig,
};
use twinsched::simkernel::ForecasterMode;
use twinsched::trace::{
    build_series, generate, generate_pair_with_outlier, parse_trace, sample_task_assignment, window_with, SyntheticConfig,
    TraceSchema, UsageSeries, WindowSpec, FEATURES,
};

use crate::config::{key, Key, RunConfig};
use crate::error::{CliError, Result};
use crate::write_csv;

pub const KEYS: &[Key] = &[
    key("out", "runs/forecast", "output directory"),
    key("seed", "1", "seed for data generation, initialization and batching"),
    key("trace", "", "usage CSV; takes precedence over `generator`"),
    key("schema", "default", "trace column mapping: `default` or `cluster`"),
    key("generator", "", "`synthetic` or `pair-outlier` when no trace is given"),
    key("clients", "3", "clients to generate, or tasks sampled from the trace"),
    key("tasks_per_client", "1", "generated tasks averaged into each client"),
    key("duration_min", "1440", "generated trace length"),
    key("correlation", "0.5", "shared-signal weight for `synthetic`"),
    key("pair_correlation", "0.95", "shared-signal weight of the pair for `pair-outlier`"),
    key("burst_prob", "0", "per-sample burst probability of generated tasks"),
    key("mode", "simifed", "`simifed` (similarity-gated) or `fed` (all clients)"),
    key("rounds", "5", "communication rounds"),
    key("tau", "0.9", "cosine-similarity threshold for `simifed`"),
    key("weighting", "normalized", "`normalized` or `literal` data-size weights"),
    key("hidden", "16", "LSTM hidden size"),
    key("lr", "0.01", "Adam learning rate"),
    key("local_epochs", "20", "local epochs per round"),
    key("batch_size", "16", "mini-batch size"),
    key("window", "12", "input window length in samples"),
    key("horizon", "1", "forecast horizon in samples"),
];

fn load_series(cfg: &RunConfig) -> Result<Vec<UsageSeries>> {
    let seed: u64 = cfg.get("seed")?;
    let clients: usize = cfg.get("clients")?;
    if let Some(path) = cfg.path("trace") {
        let schema = match cfg.raw("schema") {
            "default" => TraceSchema::default(),
            "cluster" => TraceSchema::cluster_task_usage(),
            other => return Err(CliError::Config(format!("schema = {other:?}: expected default or cluster"))),
        };
        let samples = parse_trace(&path, &schema).map_err(|e| CliError::Input(e.to_string()))?;
        let assignment = sample_task_assignment(&samples, clients, seed);
        let chosen: Vec<_> = samples.into_iter().filter(|s| assignment.contains_key(&s.task_id)).collect();
        let built = build_series(&chosen, &assignment, schema.sampling_interval_min).map_err(|e| CliError::Input(e.to_string()))?;
        return Ok(built.series);
    }
    let gen = SyntheticConfig {
        clients,
        tasks_per_client: cfg.get("tasks_per_client")?,
        duration_min: cfg.get("duration_min")?,
        correlation: cfg.get("correlation")?,
        seed,
        burst_prob: cfg.get("burst_prob")?,
        ..SyntheticConfig::default()
    };
    match cfg.raw("generator") {
        "synthetic" => Ok(generate(&gen).series()),
        "pair-outlier" => Ok(generate_pair_with_outlier(&gen, cfg.get("pair_correlation")?).series()),
        "" => Err(CliError::Config("no input: set `trace` or `generator`".into())),
        other => Err(CliError::Config(format!("generator = {other:?}: expected synthetic or pair-outlier"))),
    }
}

/// Windows the longest gap-free segment of every client.
pub fn build_sites(cfg: &RunConfig) -> Result<Vec<LocalSite>> {
    let spec = WindowSpec::new(cfg.get("window")?, cfg.get("horizon")?);
    let mut longest: BTreeMap<ClientId, UsageSeries> = BTreeMap::new();
    for s in load_series(cfg)? {
        let slot = longest.entry(s.client_id).or_insert_with(|| s.clone());
        if s.len() > slot.len() {
            *slot = s;
        }
    }
    let train = TrainConfig {
        lr: cfg.get("lr")?,
        epochs: cfg.get("local_epochs")?,
        batch_size: cfg.get("batch_size")?,
        seed: cfg.get("seed")?,
        ..TrainConfig::default()
    };
    longest
        .values()
        .map(|s| {
            window_with(s, &spec)
                .map(|d| LocalSite::new(d, train))
                .map_err(|e| CliError::Input(format!("client {}: {e}", s.client_id)))
        })
        .collect()
}

pub fn federate(cfg: &RunConfig) -> Result<FederationOutcome> {
    let mode: ForecasterMode = cfg.get("mode")?;
    let tau = match mode {
        ForecasterMode::SimiFed => cfg.get("tau")?,
        ForecasterMode::Fed => -1.0,
        ForecasterMode::None => return Err(CliError::Config("mode = none has no forecaster".into())),
    };
    let normalized_weights = match cfg.raw("weighting") {
        "normalized" => true,
        "literal" => false,
        other => return Err(CliError::Config(format!("weighting = {other:?}: expected normalized or literal"))),
    };
    let sites = build_sites(cfg)?;
    let horizon: usize = cfg.get("horizon")?;
    let shape = LstmShape::new(FEATURES, cfg.get("hidden")?, horizon);
    let init = LstmParams::init(shape, cfg.get::<u64>("seed")? ^ 0x1A17);
    let fed = FederationConfig {
        rounds: cfg.get("rounds")?,
        tau,
        normalized_weights,
    };
    run_federation(&sites, init, &fed).map_err(|e| CliError::Input(e.to_string()))
}

pub fn run(cfg: &RunConfig, out: &Path) -> Result<()> {
    let outcome = federate(cfg)?;
    let mut rows = vec![vec![
        "round".to_string(),
        "clients".into(),
        "selected".into(),
        "fallback".into(),
        "accuracy_pct".into(),
        "mae".into(),
        "mse".into(),
        "calibration".into(),
        "mean_loss".into(),
    ]];
    let mut loss = vec![vec!["epoch".to_string(), "round".into(), "mean_loss".into()]];
    let mut epoch = 0;
    for r in &outcome.rounds {
        let ids: Vec<String> = r.selected.iter().map(|c| c.0.to_string()).collect();
        rows.push(vec![
            r.round.to_string(),
            r.client_count.to_string(),
            ids.join(" "),
            r.fallback.to_string(),
            format!("{:.4}", r.pooled.accuracy_pct),
            format!("{:.6}", r.pooled.mean_abs_error),
            format!("{:.6}", r.pooled.mse),
            format!("{:.6}", r.calibration),
            format!("{:.6}", r.mean_epoch_loss.last().copied().unwrap_or(f64::NAN)),
        ]);
        for l in &r.mean_epoch_loss {
            epoch += 1;
            loss.push(vec![epoch.to_string(), r.round.to_string(), format!("{l:.6}")]);
        }
    }
    write_csv(&out.join("rounds.csv"), &rows)?;
    write_csv(&out.join("loss.csv"), &loss)?;
    let path = out.join("checkpoint.json");
    std::fs::write(&path, checkpoint_to_json(&outcome.global)).map_err(CliError::io(&path))?;
    let last = outcome.rounds.last();
    println!(
        "forecast: {} rounds, final MSE {:.6}, accuracy {:.2}%",
        outcome.rounds.len(),
        last.map_or(f64::NAN, |r| r.pooled.mse),
        last.map_or(f64::NAN, |r| r.pooled.accuracy_pct)
    );
    Ok(())
}
