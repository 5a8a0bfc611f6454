use std::collections::BTreeSet;
use std::io::BufReader;
use std::path::Path;

use twinsched::patterns::{
    absolute_min_sup, extract_windowed, mine_with_metrics, write_pattern_report, MiningLimits, Outcome, PatternKnowledge, Tdtdb,
    MIN_SUP_SWEEP,
};

use crate::config::{key, Key, RunConfig};
use crate::error::{CliError, Result};
use crate::write_csv;

pub const KEYS: &[Key] = &[
    key("out", "runs/mine", "output directory"),
    key("seed", "1", "unused by mining; accepted for a uniform flag set"),
    key("tdtdb", "", "transaction database (JSON lines), required"),
    key("minsup_sweep", "0.009,0.040,0.065,0.100,0.250", "relative minimum supports"),
    key("window_min", "10", "split each server's history into windows of this length; empty keeps one sequence per server"),
    key("max_elements", "2", "longest pattern in itemsets; empty is unbounded"),
    key("max_itemset", "2", "largest itemset in a pattern; empty is unbounded"),
];

pub fn sweep_label(v: f64) -> String {
    format!("{v:.3}")
}

pub fn run(cfg: &RunConfig, out: &Path) -> Result<()> {
    let path = cfg.path("tdtdb").ok_or_else(|| CliError::Config("`tdtdb` is required".into()))?;
    let file = std::fs::File::open(&path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let db = Tdtdb::read_jsonl(BufReader::new(file)).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let sweep: Vec<f64> = if cfg.is_set("minsup_sweep") {
        cfg.list("minsup_sweep")?
    } else {
        MIN_SUP_SWEEP.to_vec()
    };
    if sweep.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(CliError::Config("minsup_sweep values must lie in [0, 1]".into()));
    }
    let limits = MiningLimits {
        max_elements: cfg.opt("max_elements")?,
        max_itemset_size: cfg.opt("max_itemset")?,
    };
    let window: Option<u64> = cfg.opt("window_min")?;
    let fsp = extract_windowed(&db, Outcome::Failed, window);
    let ssp = extract_windowed(&db, Outcome::Succeeded, window);

    let mut metrics = vec![[
        "min_sup",
        "min_sup_failed",
        "min_sup_succeeded",
        "failed_sequences",
        "succeeded_sequences",
        "nf",
        "sf",
        "pattern_count",
        "runtime_ms",
        "peak_memory_bytes",
    ]
    .map(String::from)
    .to_vec()];
    for rel in sweep {
        let (f_sup, s_sup) = (absolute_min_sup(rel, fsp.len()), absolute_min_sup(rel, ssp.len()));
        let f_run = mine_with_metrics(&fsp, f_sup, limits);
        let s_run = mine_with_metrics(&ssp, s_sup, limits);
        let nf_keys: BTreeSet<_> = f_run.patterns.iter().map(|p| p.elements.clone()).collect();
        let knowledge = PatternKnowledge {
            nf: f_run.patterns.clone(),
            sf: s_run.patterns.iter().filter(|p| !nf_keys.contains(&p.elements)).cloned().collect(),
            min_sup: f_sup,
            ..Default::default()
        };
        let report = out.join(format!("patterns_minsup_{}.csv", sweep_label(rel)));
        let file = std::fs::File::create(&report).map_err(CliError::io(&report))?;
        write_pattern_report(file, &knowledge).map_err(|e| CliError::Input(e.to_string()))?;
        metrics.push(vec![
            sweep_label(rel),
            f_sup.to_string(),
            s_sup.to_string(),
            fsp.len().to_string(),
            ssp.len().to_string(),
            knowledge.nf.len().to_string(),
            knowledge.sf.len().to_string(),
            (knowledge.nf.len() + knowledge.sf.len()).to_string(),
            format!("{:.3}", f_run.runtime_ms + s_run.runtime_ms),
            f_run.peak_memory_bytes.max(s_run.peak_memory_bytes).to_string(),
        ]);
        println!("mine: minSup {} -> {} Nf, {} Sf", sweep_label(rel), knowledge.nf.len(), knowledge.sf.len());
    }
    write_csv(&out.join("mining_metrics.csv"), &metrics)
}
