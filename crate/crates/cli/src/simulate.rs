use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use twinsched::patterns::{build_knowledge, MiningLimits};
use twinsched::scheduler::MvpMode;
use twinsched::simkernel::report::{
    write_comparison_csv, write_events_jsonl, write_forecast_rounds_csv, write_loss_csv, write_metrics_csv,
};
use twinsched::simkernel::{run_experiment, ExperimentConfig, ForecasterMode, SimConfig, SimError, SimOutcome};

use crate::config::{key, Key, RunConfig};
use crate::error::{CliError, Result};
use crate::mine::sweep_label;
use crate::write_csv;

pub const KEYS: &[Key] = &[
    key("out", "runs/simulate", "output directory"),
    key("seed", "1", "base seed; each application size derives its own workload seed"),
    key("modes", "simifed", "comma list of `simifed`, `fed`, `none`"),
    key("sizes", "10,20,40,60,80,100", "application sizes (tasks)"),
    key("horizons", "50,100,200,400", "horizons in minutes"),
    key("minsup_sweep", "", "relative minimum supports mined over the first cell's TDTdb; empty skips"),
    key("write_tdtdb", "false", "write every cell's transaction database under tdtdb/"),
    key("tick_min", "5", "tick length in minutes"),
    key("mttr_base_min", "0.21", "repair time of one migration"),
    key("tau", "0.9", "similarity threshold of `simifed`"),
    key("pattern_guidance", "true", "rank placements by mined Nf/Sf patterns"),
    key("min_sup", "0.1", "relative minimum support of the per-epoch mining pass"),
    key("mine_max_elements", "1", "pattern length bound of the per-epoch mining pass"),
    key("mine_max_itemset", "2", "itemset size bound of the per-epoch mining pass"),
    key("retrain_ticks", "10", "ticks between forecasting and re-planning epochs"),
    key("history_ticks", "144", "usage rows available before the first tick"),
    key("window", "12", "forecaster input window"),
    key("hidden", "8", "forecaster hidden size"),
    key("local_epochs", "3", "local epochs per federation round"),
    key("batch_size", "16", "mini-batch size"),
    key("lr", "0.01", "Adam learning rate"),
    key("forecast_margin", "1.0", "reserved demand = forecast peak + this many client test RMSEs"),
    key("initial_rounds", "3", "federation rounds at the first epoch"),
    key("rounds_per_epoch", "1", "federation rounds at later epochs"),
    key("correlation", "0.6", "shared-signal weight of the synthetic workload"),
    key("burst_prob", "0.03", "per-tick burst probability of each task"),
    key("contention_faults", "true", "fail versions on overloaded VMs and servers"),
    key("random_fault_rate", "0", "per-version, per-tick injected fault probability"),
    key("threshold_fraction", "0.9", "fault-proneness threshold as a fraction of available capacity"),
    key("target_failure", "0.05", "MVP failure target of the replica planner"),
    key("mvp_mode", "literal", "`literal` sum or `binomial` majority tail"),
    key("replica_budget", "", "extra versions across all tasks; empty means twice the size"),
    key("autoscale_epochs", "2", "consecutive fault-prone epochs before a tier upgrade"),
    key("servers_per_type", "4", "servers of each catalog type before the elastic pool"),
    key("pack_largest", "true", "initial packing opens the largest VM tier"),
];

pub fn base_config(cfg: &RunConfig) -> Result<SimConfig> {
    let mvp_mode = match cfg.raw("mvp_mode") {
        "literal" => MvpMode::Literal,
        "binomial" => MvpMode::Binomial,
        other => return Err(CliError::Config(format!("mvp_mode = {other:?}: expected literal or binomial"))),
    };
    Ok(SimConfig {
        seed: cfg.get("seed")?,
        tick_min: cfg.get("tick_min")?,
        mttr_base_min: cfg.get("mttr_base_min")?,
        tau: cfg.get("tau")?,
        pattern_guidance: cfg.get("pattern_guidance")?,
        min_sup: cfg.get("min_sup")?,
        mine_max_elements: cfg.get("mine_max_elements")?,
        mine_max_itemset: cfg.get("mine_max_itemset")?,
        retrain_ticks: cfg.get("retrain_ticks")?,
        history_ticks: cfg.get("history_ticks")?,
        window: cfg.get("window")?,
        hidden: cfg.get("hidden")?,
        local_epochs: cfg.get("local_epochs")?,
        batch_size: cfg.get("batch_size")?,
        lr: cfg.get("lr")?,
        forecast_margin: cfg.get("forecast_margin")?,
        initial_rounds: cfg.get("initial_rounds")?,
        rounds_per_epoch: cfg.get("rounds_per_epoch")?,
        correlation: cfg.get("correlation")?,
        burst_prob: cfg.get("burst_prob")?,
        contention_faults: cfg.get("contention_faults")?,
        random_fault_rate: cfg.get("random_fault_rate")?,
        threshold_fraction: cfg.get("threshold_fraction")?,
        target_failure: cfg.get("target_failure")?,
        mvp_mode,
        replica_budget: cfg.opt("replica_budget")?,
        autoscale_epochs: cfg.get("autoscale_epochs")?,
        servers_per_type: cfg.get("servers_per_type")?,
        pack_largest: cfg.get("pack_largest")?,
        ..SimConfig::default()
    })
}

pub fn experiment(cfg: &RunConfig) -> Result<ExperimentConfig> {
    let modes: Vec<ForecasterMode> = cfg.list("modes")?;
    let sizes: Vec<usize> = cfg.list("sizes")?;
    let horizons: Vec<u64> = cfg.list("horizons")?;
    if modes.is_empty() || sizes.is_empty() || horizons.is_empty() {
        return Err(CliError::Config("modes, sizes and horizons must be non-empty".into()));
    }
    Ok(ExperimentConfig {
        base: base_config(cfg)?,
        sizes,
        horizons,
        modes,
    })
}

fn sim_error(e: SimError) -> CliError {
    let inner = match &e {
        SimError::Cell { source, .. } => source.as_ref(),
        other => other,
    };
    match inner {
        SimError::InvalidConfig(_) => CliError::Config(e.to_string()),
        SimError::InvariantViolation { .. } | SimError::Scheduler(_) | SimError::UndefinedAvailability { .. } => {
            CliError::Invariant(e.to_string())
        }
        _ => CliError::Input(e.to_string()),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(CliError::io(path))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |e| CliError::Input(format!("{}: {e}", path.display()))
}

pub fn run(cfg: &RunConfig, out: &Path) -> Result<()> {
    let exp = experiment(cfg)?;
    let outcomes = run_experiment(&exp).map_err(sim_error)?;
    for mode in &exp.modes {
        let rows: Vec<&SimOutcome> = outcomes.iter().filter(|o| o.config.mode == *mode).collect();
        let path = out.join(format!("metrics_{mode}.csv"));
        write_metrics_csv(create(&path)?, rows.iter().map(|o| &o.metrics)).map_err(csv_err(&path))?;
        let path = out.join(format!("events_{mode}.jsonl"));
        let mut w = create(&path)?;
        for o in &rows {
            write_events_jsonl(&mut w, o).map_err(CliError::io(&path))?;
        }
        w.flush().map_err(CliError::io(&path))?;
    }
    let path = out.join("forecast_rounds.csv");
    write_forecast_rounds_csv(create(&path)?, &outcomes).map_err(csv_err(&path))?;
    let path = out.join("loss.csv");
    write_loss_csv(create(&path)?, &outcomes).map_err(csv_err(&path))?;
    let path = out.join("comparison.csv");
    write_comparison_csv(create(&path)?, &outcomes).map_err(csv_err(&path))?;

    if cfg.get::<bool>("write_tdtdb")? {
        let dir = out.join("tdtdb");
        std::fs::create_dir_all(&dir).map_err(CliError::io(&dir))?;
        for o in &outcomes {
            let c = &o.config;
            let path = dir.join(format!("{}_n{}_t{}.jsonl", c.mode, c.app_size, c.horizon_min));
            let mut w = create(&path)?;
            o.tdtdb.write_jsonl(&mut w).map_err(|e| CliError::Input(e.to_string()))?;
            w.flush().map_err(CliError::io(&path))?;
        }
    }

    let sweep: Vec<f64> = cfg.list("minsup_sweep")?;
    if let (false, Some(first)) = (sweep.is_empty(), outcomes.first()) {
        let c = &first.config;
        let limits = MiningLimits {
            max_elements: Some(c.mine_max_elements),
            max_itemset_size: Some(c.mine_max_itemset),
        };
        let window = Some(c.retrain_ticks as u64 * c.tick_min);
        let mut rows = vec![["mode", "size", "horizon", "min_sup", "nf", "sf"].map(String::from).to_vec()];
        for rel in sweep {
            let k = build_knowledge(&first.tdtdb, rel, window, limits);
            rows.push(vec![
                c.mode.to_string(),
                c.app_size.to_string(),
                c.horizon_min.to_string(),
                sweep_label(rel),
                k.nf.len().to_string(),
                k.sf.len().to_string(),
            ]);
        }
        write_csv(&out.join("minsup_sweep.csv"), &rows)?;
    }

    for o in &outcomes {
        let m = &o.metrics;
        println!(
            "{:>7} n={:<3} T={:<3} AV {:.4}% MTBF {:.2} MTTR {:.4} MIG {} PW {:.3} kW",
            m.mode.as_str(),
            m.app_size,
            m.horizon_min,
            m.availability_pct,
            m.mtbf_min,
            m.mttr_min,
            m.migrations,
            m.power_kw
        );
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn documented_defaults_match_the_library() {
        let cfg = RunConfig::resolve(KEYS, None, &[]).unwrap();
        let base = base_config(&cfg).unwrap();
        assert_eq!(base, SimConfig::default());
    }
}
