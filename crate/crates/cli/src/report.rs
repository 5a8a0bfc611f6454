//! Markdown summary of a finished `simulate` run. Values are copied from
//! the metrics tables as written, never recomputed.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{CliError, Result};

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn col(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Input(format!("metrics table lacks column {name:?}")))
    }
}

fn read_table(path: &Path) -> Result<Table> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let header = rdr
        .headers()
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?
        .iter()
        .map(String::from)
        .collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        rows.push(rec.iter().map(String::from).collect());
    }
    Ok(Table { header, rows })
}

fn num(s: &str) -> f64 {
    s.parse().unwrap_or(f64::NAN)
}

pub fn summarize(run_dir: &Path) -> Result<String> {
    if !run_dir.join("config.txt").is_file() {
        return Err(CliError::Input(format!("{} is not a run directory (no config.txt)", run_dir.display())));
    }
    let mut tables: BTreeMap<String, Table> = BTreeMap::new();
    let entries = std::fs::read_dir(run_dir).map_err(CliError::io(run_dir))?;
    for e in entries {
        let e = e.map_err(CliError::io(run_dir))?;
        let name = e.file_name().to_string_lossy().into_owned();
        if let Some(mode) = name.strip_prefix("metrics_").and_then(|s| s.strip_suffix(".csv")) {
            tables.insert(mode.to_string(), read_table(&e.path())?);
        }
    }
    if tables.is_empty() {
        return Err(CliError::Input(format!("no metrics_<mode>.csv in {}", run_dir.display())));
    }

    let mut md = format!("# Run summary\n\nSource: `{}`\n\n", run_dir.display());
    md.push_str("## Headline\n\nLargest size and horizon of each mode.\n\n");
    let mut cells: BTreeMap<String, BTreeMap<(String, String), (String, f64)>> = BTreeMap::new();
    for (mode, t) in &tables {
        let (size, horizon, av, mtbf, mttr) = (t.col("Size(A)")?, t.col("T")?, t.col("AV%")?, t.col("MTBF")?, t.col("MTTR")?);
        let last = t
            .rows
            .iter()
            .max_by(|a, b| num(&a[size]).total_cmp(&num(&b[size])).then(num(&a[horizon]).total_cmp(&num(&b[horizon]))))
            .ok_or_else(|| CliError::Input(format!("metrics_{mode}.csv has no rows")))?;
        md.push_str(&format!(
            "- {mode} (n={}, T={}): AV {}%, MTBF {} min, MTTR {} min\n",
            last[size], last[horizon], last[av], last[mtbf], last[mttr]
        ));
        let per = cells.entry(mode.clone()).or_default();
        for r in &t.rows {
            per.insert((r[size].clone(), r[horizon].clone()), (r[av].clone(), num(&r[av])));
        }
    }

    if let Some(none) = cells.get("none") {
        let mut deltas = String::new();
        for (mode, per) in cells.iter().filter(|(m, _)| m.as_str() != "none") {
            let d: Vec<f64> = per.iter().filter_map(|(k, (_, v))| none.get(k).map(|(_, b)| v - b)).collect();
            if !d.is_empty() {
                let mean = d.iter().sum::<f64>() / d.len() as f64;
                let wins = d.iter().filter(|x| **x > 0.0).count();
                deltas.push_str(&format!(
                    "- {mode} vs none: mean AV delta {mean:+.4} points over {} cells, higher in {wins}\n",
                    d.len()
                ));
            }
        }
        if !deltas.is_empty() {
            md.push_str("\n## Mode deltas\n\n");
            md.push_str(&deltas);
        }
    }

    for (mode, t) in &tables {
        md.push_str(&format!("\n## {mode}\n\n| {} |\n|{}\n", t.header.join(" | "), "---|".repeat(t.header.len())));
        for r in &t.rows {
            md.push_str(&format!("| {} |\n", r.join(" | ")));
        }
    }
    Ok(md)
}

pub fn run(run_dir: &Path) -> Result<()> {
    let md = summarize(run_dir)?;
    let path = run_dir.join("summary.md");
    std::fs::write(&path, &md).map_err(CliError::io(&path))?;
    print!("{md}");
    Ok(())
}
