//! Results table, event log and plot-data writers.

use std::io::Write;

use serde::Serialize;

use super::{SimEvent, SimMetrics, SimOutcome, EVENT_SCHEMA_VERSION};

pub const METRICS_HEADER: [&str; 12] = [
    "Size(A)", "T", "MTBF", "MTTR", "AV%", "F^Pred%", "RC%", "MIG#", "PW kW", "RU%", "OV%", "SUC%",
];

fn f4(x: f64) -> String {
    format!("{x:.4}")
}

pub fn metrics_row(m: &SimMetrics) -> Vec<String> {
    vec![
        m.app_size.to_string(),
        m.horizon_min.to_string(),
        f4(m.mtbf_min),
        f4(m.mttr_min),
        f4(m.availability_pct),
        f4(m.fault_pred_accuracy_pct),
        f4(m.resource_contention_pct),
        m.migrations.to_string(),
        f4(m.power_kw),
        f4(m.resource_util_pct),
        f4(m.overload_pct),
        f4(m.success_pct),
    ]
}

/// One row per cell, columns as in [`METRICS_HEADER`].
pub fn write_metrics_csv<'a, W: Write>(w: W, rows: impl IntoIterator<Item = &'a SimMetrics>) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(METRICS_HEADER)?;
    for m in rows {
        out.write_record(metrics_row(m))?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct EventLine<'a> {
    schema: u32,
    mode: &'a str,
    size: usize,
    horizon: u64,
    #[serde(flatten)]
    event: &'a SimEvent,
}

/// JSON lines, one event per line, tagged with the cell coordinates.
pub fn write_events_jsonl<W: Write>(mut w: W, outcome: &SimOutcome) -> std::io::Result<()> {
    let c = &outcome.config;
    for event in &outcome.events {
        let line = EventLine {
            schema: EVENT_SCHEMA_VERSION,
            mode: c.mode.as_str(),
            size: c.app_size,
            horizon: c.horizon_min,
            event,
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Per federation round: `mode,size,horizon,time_min,round,accuracy_pct,mse,calibration`.
pub fn write_forecast_rounds_csv<'a, W: Write>(w: W, outcomes: impl IntoIterator<Item = &'a SimOutcome>) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["mode", "size", "horizon", "time_min", "round", "accuracy_pct", "mse", "calibration"])?;
    for o in outcomes {
        for e in &o.forecasts {
            for r in &e.rounds {
                out.write_record([
                    o.config.mode.to_string(),
                    o.config.app_size.to_string(),
                    o.config.horizon_min.to_string(),
                    e.time_min.to_string(),
                    r.round.to_string(),
                    f4(r.pooled.accuracy_pct),
                    format!("{:.6}", r.pooled.mse),
                    format!("{:.6}", r.calibration),
                ])?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// Mean local training loss per local epoch, indexed across the run:
/// `mode,size,horizon,epoch,loss`.
pub fn write_loss_csv<'a, W: Write>(w: W, outcomes: impl IntoIterator<Item = &'a SimOutcome>) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["mode", "size", "horizon", "epoch", "loss"])?;
    for o in outcomes {
        let mut epoch = 0usize;
        for e in &o.forecasts {
            for r in &e.rounds {
                for loss in &r.mean_epoch_loss {
                    epoch += 1;
                    out.write_record([
                        o.config.mode.to_string(),
                        o.config.app_size.to_string(),
                        o.config.horizon_min.to_string(),
                        epoch.to_string(),
                        format!("{loss:.6}"),
                    ])?;
                }
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// `mode,size,horizon,mtbf,mttr,av_pct` for every cell of every mode.
pub fn write_comparison_csv<'a, W: Write>(w: W, outcomes: impl IntoIterator<Item = &'a SimOutcome>) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["mode", "size", "horizon", "mtbf", "mttr", "av_pct"])?;
    for o in outcomes {
        let m = &o.metrics;
        out.write_record([
            m.mode.to_string(),
            m.app_size.to_string(),
            m.horizon_min.to_string(),
            f4(m.mtbf_min),
            f4(m.mttr_min),
            f4(m.availability_pct),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simkernel::{simulate, ForecasterMode, SimConfig};

    #[test]
    fn csv_and_log_shapes() {
        let cfg = SimConfig {
            mode: ForecasterMode::None,
            horizon_min: 50,
            burst_prob: 0.3,
            ..SimConfig::default()
        };
        let out = simulate(&cfg).unwrap();
        let mut buf = Vec::new();
        write_metrics_csv(&mut buf, [&out.metrics]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "Size(A),T,MTBF,MTTR,AV%,F^Pred%,RC%,MIG#,PW kW,RU%,OV%,SUC%");
        assert!(lines.next().unwrap().starts_with("10,50,"));
        let mut log = Vec::new();
        write_events_jsonl(&mut log, &out).unwrap();
        for line in String::from_utf8(log).unwrap().lines() {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            assert_eq!(v["schema"], 1);
            assert!(v["kind"].is_string());
        }
    }
}
