//! Usage-trace ingestion: CSV parsing, per-client series with bounded gap
//! imputation, sliding windows with a chronological 80:20 split, and a
//! synthetic generator that emits cluster-trace-shaped data with tunable
//! cross-client correlation.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{ClientId, TaskId};

pub const DEFAULT_INTERVAL_MIN: u64 = 5;
pub const DEFAULT_WINDOW: usize = 12;
pub const DEFAULT_HORIZON: usize = 1;
/// Longest run of consecutive imputed samples before a series is split.
pub const MAX_CONSECUTIVE_IMPUTED: u64 = 3;
pub const TRAIN_FRACTION: f64 = 0.8;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("missing column {0}")]
    MissingColumn(String),
    #[error("non-monotone timestamps for task {0}")]
    NonMonotoneTimestamps(TaskId),
    #[error("task {0} has no client assignment")]
    UnassignedTask(TaskId),
    #[error("series too short: {len} samples, need at least {needed}")]
    SeriesTooShort { len: usize, needed: usize },
    #[error("trace io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("series file line {line}: {reason}")]
    SeriesFormat { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UsageSample {
    /// Minutes since the start of the trace.
    pub timestamp: u64,
    pub task_id: TaskId,
    pub cpu_util: f64,
    pub mem_util: f64,
    pub disk_io: f64,
}

/// Column mapping for [`parse_trace`].
///
/// Timestamps in the file are divided by `timestamp_divisor` to obtain
/// minutes, and must then land on multiples of `sampling_interval_min`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSchema {
    pub timestamp: String,
    pub task_id: String,
    pub cpu_util: String,
    pub mem_util: String,
    pub disk_io: String,
    pub timestamp_divisor: u64,
    pub sampling_interval_min: u64,
}

impl Default for TraceSchema {
    fn default() -> Self {
        Self {
            timestamp: "timestamp".into(),
            task_id: "task_id".into(),
            cpu_util: "cpu_util".into(),
            mem_util: "mem_util".into(),
            disk_io: "disk_io".into(),
            timestamp_divisor: 1,
            sampling_interval_min: DEFAULT_INTERVAL_MIN,
        }
    }
}

impl TraceSchema {
    /// Field names of a cluster task-usage export with microsecond start
    /// times, as produced by common CSV conversions of the public trace.
    pub fn cluster_task_usage() -> Self {
        Self {
            timestamp: "start_time".into(),
            task_id: "task_id".into(),
            cpu_util: "cpu_rate".into(),
            mem_util: "canonical_memory_usage".into(),
            disk_io: "disk_io_time".into(),
            timestamp_divisor: 60_000_000,
            sampling_interval_min: DEFAULT_INTERVAL_MIN,
        }
    }
}

pub fn parse_trace(path: &Path, schema: &TraceSchema) -> Result<Vec<UsageSample>, TraceError> {
    let file = std::fs::File::open(path)?;
    parse_trace_reader(file, schema)
}

pub fn parse_trace_reader<R: Read>(reader: R, schema: &TraceSchema) -> Result<Vec<UsageSample>, TraceError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| TraceError::MissingColumn(name.to_string()))
    };
    let (c_ts, c_task, c_cpu, c_mem, c_disk) = (
        col(&schema.timestamp)?,
        col(&schema.task_id)?,
        col(&schema.cpu_util)?,
        col(&schema.mem_util)?,
        col(&schema.disk_io)?,
    );
    let divisor = schema.timestamp_divisor.max(1);
    let interval = schema.sampling_interval_min.max(1);

    let mut samples = Vec::new();
    for (idx, record) in rdr.records().enumerate() {
        // Header is line 1.
        let line = idx + 2;
        let record = record.map_err(|e| TraceError::MalformedRow {
            line,
            reason: e.to_string(),
        })?;
        let field = |i: usize| record.get(i).unwrap_or("");
        let bad = |reason: String| TraceError::MalformedRow { line, reason };
        let raw_ts: u64 = field(c_ts).parse().map_err(|_| bad(format!("bad timestamp {:?}", field(c_ts))))?;
        if !raw_ts.is_multiple_of(divisor) || !(raw_ts / divisor).is_multiple_of(interval) {
            return Err(bad(format!("timestamp {raw_ts} is off the {interval}-minute grid")));
        }
        let task: u64 = field(c_task).parse().map_err(|_| bad(format!("bad task id {:?}", field(c_task))))?;
        let frac = |i: usize, name: &str| -> Result<f64, TraceError> {
            let v: f64 = field(i).parse().map_err(|_| bad(format!("bad {name} {:?}", field(i))))?;
            if !(0.0..=1.0).contains(&v) {
                return Err(bad(format!("{name} {v} outside [0, 1]")));
            }
            Ok(v)
        };
        samples.push(UsageSample {
            timestamp: raw_ts / divisor,
            task_id: TaskId(task),
            cpu_util: frac(c_cpu, "cpu_util")?,
            mem_util: frac(c_mem, "mem_util")?,
            disk_io: frac(c_disk, "disk_io")?,
        });
    }
    samples.sort_by_key(|s| (s.task_id, s.timestamp));
    for pair in samples.windows(2) {
        if pair[0].task_id == pair[1].task_id && pair[0].timestamp == pair[1].timestamp {
            return Err(TraceError::NonMonotoneTimestamps(pair[0].task_id));
        }
    }
    Ok(samples)
}

/// Writes samples with the given schema's column names (divisor applied in
/// reverse).
pub fn write_trace_csv<W: Write>(writer: W, samples: &[UsageSample], schema: &TraceSchema) -> Result<(), TraceError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        &schema.timestamp,
        &schema.task_id,
        &schema.cpu_util,
        &schema.mem_util,
        &schema.disk_io,
    ])?;
    for s in samples {
        w.write_record([
            (s.timestamp * schema.timestamp_divisor.max(1)).to_string(),
            s.task_id.0.to_string(),
            s.cpu_util.to_string(),
            s.mem_util.to_string(),
            s.disk_io.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// A contiguous, gap-free usage series for one client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsageSeries {
    pub client_id: ClientId,
    pub samples: Vec<UsageSample>,
    pub sampling_interval_min: u64,
}

impl UsageSeries {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Feature rows `[cpu, mem, disk]`.
    pub fn features(&self) -> Vec<[f64; 3]> {
        self.samples.iter().map(|s| [s.cpu_util, s.mem_util, s.disk_io]).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuiltSeries {
    pub series: Vec<UsageSeries>,
    pub imputed: usize,
}

/// Groups samples into per-client series.
///
/// Tasks sharing a client are averaged per timestamp. Gaps of up to
/// [`MAX_CONSECUTIVE_IMPUTED`] intervals are filled by carrying the last
/// observation forward; longer gaps split the client's series into separate
/// segments.
pub fn build_series(
    samples: &[UsageSample],
    client_assignment: &BTreeMap<TaskId, ClientId>,
    sampling_interval_min: u64,
) -> Result<BuiltSeries, TraceError> {
    let interval = sampling_interval_min.max(1);
    let mut per_client: BTreeMap<ClientId, BTreeMap<u64, (UsageSample, u32)>> = BTreeMap::new();
    for s in samples {
        let client = *client_assignment.get(&s.task_id).ok_or(TraceError::UnassignedTask(s.task_id))?;
        let slot = per_client.entry(client).or_default();
        slot.entry(s.timestamp)
            .and_modify(|(acc, n)| {
                acc.cpu_util += s.cpu_util;
                acc.mem_util += s.mem_util;
                acc.disk_io += s.disk_io;
                acc.task_id = acc.task_id.min(s.task_id);
                *n += 1;
            })
            .or_insert((*s, 1));
    }

    let mut out = Vec::new();
    let mut imputed = 0usize;
    for (client, by_ts) in per_client {
        let mut current: Vec<UsageSample> = Vec::new();
        for (_, (acc, n)) in by_ts {
            let k = n as f64;
            let sample = UsageSample {
                cpu_util: acc.cpu_util / k,
                mem_util: acc.mem_util / k,
                disk_io: acc.disk_io / k,
                ..acc
            };
            if let Some(last) = current.last().copied() {
                let missing = (sample.timestamp - last.timestamp) / interval - 1;
                if missing > MAX_CONSECUTIVE_IMPUTED {
                    out.push(UsageSeries {
                        client_id: client,
                        samples: std::mem::take(&mut current),
                        sampling_interval_min: interval,
                    });
                } else {
                    for step in 1..=missing {
                        current.push(UsageSample {
                            timestamp: last.timestamp + step * interval,
                            ..last
                        });
                        imputed += 1;
                    }
                }
            }
            current.push(sample);
        }
        if !current.is_empty() {
            out.push(UsageSeries {
                client_id: client,
                samples: current,
                sampling_interval_min: interval,
            });
        }
    }
    Ok(BuiltSeries { series: out, imputed })
}

/// Which sample field a forecast target tracks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Cpu,
    Mem,
    Disk,
}

impl Channel {
    fn index(self) -> usize {
        match self {
            Channel::Cpu => 0,
            Channel::Mem => 1,
            Channel::Disk => 2,
        }
    }
}

/// Windowing parameters. Targets are laid out horizon-major: for each
/// horizon step, one value per channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub window: usize,
    pub horizon: usize,
    pub channels: Vec<Channel>,
}

impl WindowSpec {
    pub fn new(window: usize, horizon: usize) -> Self {
        Self {
            window,
            horizon,
            channels: vec![Channel::Cpu],
        }
    }

    pub fn output_len(&self) -> usize {
        self.horizon * self.channels.len()
    }
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self::new(DEFAULT_WINDOW, DEFAULT_HORIZON)
    }
}

/// Number of input features per time step.
pub const FEATURES: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    pub client_id: ClientId,
    pub spec: WindowSpec,
    /// Each input is `window` feature rows.
    pub inputs: Vec<Vec<[f64; FEATURES]>>,
    pub targets: Vec<Vec<f64>>,
    /// Pairs `[0, split)` are training data, `[split, len)` test data.
    pub split: usize,
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn train(&self) -> impl Iterator<Item = (&Vec<[f64; FEATURES]>, &Vec<f64>)> {
        self.inputs[..self.split].iter().zip(&self.targets[..self.split])
    }

    pub fn test(&self) -> impl Iterator<Item = (&Vec<[f64; FEATURES]>, &Vec<f64>)> {
        self.inputs[self.split..].iter().zip(&self.targets[self.split..])
    }

    pub fn train_len(&self) -> usize {
        self.split
    }

    pub fn test_len(&self) -> usize {
        self.len() - self.split
    }

    /// Mean feature vector over the training inputs' final rows.
    pub fn train_signature(&self) -> Vec<f64> {
        let mut acc = [0.0; FEATURES];
        let rows: Vec<&[f64; FEATURES]> = self.inputs[..self.split].iter().filter_map(|w| w.last()).collect();
        if rows.is_empty() {
            return acc.to_vec();
        }
        for r in &rows {
            for (a, v) in acc.iter_mut().zip(r.iter()) {
                *a += v;
            }
        }
        acc.iter().map(|a| a / rows.len() as f64).collect()
    }
}

/// Sliding windows (stride 1) with a single-channel CPU target.
pub fn window(series: &UsageSeries, w: usize, h: usize) -> Result<WindowedDataset, TraceError> {
    window_with(series, &WindowSpec::new(w, h))
}

pub fn window_with(series: &UsageSeries, spec: &WindowSpec) -> Result<WindowedDataset, TraceError> {
    window_rows(series.client_id, &series.features(), spec)
}

/// Windows over raw feature rows.
pub fn window_rows(client_id: ClientId, rows: &[[f64; FEATURES]], spec: &WindowSpec) -> Result<WindowedDataset, TraceError> {
    let needed = spec.window + spec.horizon;
    if spec.window == 0 || spec.horizon == 0 || rows.len() < needed {
        return Err(TraceError::SeriesTooShort {
            len: rows.len(),
            needed,
        });
    }
    let count = rows.len() - needed + 1;
    let mut inputs = Vec::with_capacity(count);
    let mut targets = Vec::with_capacity(count);
    for start in 0..count {
        inputs.push(rows[start..start + spec.window].to_vec());
        let mut t = Vec::with_capacity(spec.output_len());
        for step in 0..spec.horizon {
            let row = &rows[start + spec.window + step];
            t.extend(spec.channels.iter().map(|c| row[c.index()]));
        }
        targets.push(t);
    }
    let split = (TRAIN_FRACTION * count as f64).floor() as usize;
    Ok(WindowedDataset {
        client_id,
        spec: spec.clone(),
        inputs,
        targets,
        split,
    })
}

#[derive(Serialize, Deserialize)]
struct SeriesLine {
    client_id: ClientId,
    interval_min: u64,
    timestamp: u64,
    task_id: TaskId,
    cpu_util: f64,
    mem_util: f64,
    disk_io: f64,
}

/// Canonical series file: one JSON object per sample.
pub fn write_series_jsonl<W: Write>(mut writer: W, series: &[UsageSeries]) -> Result<(), TraceError> {
    for s in series {
        for sample in &s.samples {
            let line = SeriesLine {
                client_id: s.client_id,
                interval_min: s.sampling_interval_min,
                timestamp: sample.timestamp,
                task_id: sample.task_id,
                cpu_util: sample.cpu_util,
                mem_util: sample.mem_util,
                disk_io: sample.disk_io,
            };
            serde_json::to_writer(&mut writer, &line).map_err(std::io::Error::from)?;
            writer.write_all(b"\n")?;
        }
    }
    Ok(())
}

/// Reads a series file. Consecutive lines of one client with contiguous
/// timestamps form one series.
pub fn read_series_jsonl<R: BufRead>(reader: R) -> Result<Vec<UsageSeries>, TraceError> {
    let mut out: Vec<UsageSeries> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SeriesLine = serde_json::from_str(&line).map_err(|e| TraceError::SeriesFormat {
            line: idx + 1,
            reason: e.to_string(),
        })?;
        let sample = UsageSample {
            timestamp: rec.timestamp,
            task_id: rec.task_id,
            cpu_util: rec.cpu_util,
            mem_util: rec.mem_util,
            disk_io: rec.disk_io,
        };
        let continues = out.last().is_some_and(|s: &UsageSeries| {
            s.client_id == rec.client_id
                && s.sampling_interval_min == rec.interval_min
                && s.samples.last().is_some_and(|l| l.timestamp + rec.interval_min == rec.timestamp)
        });
        if continues {
            out.last_mut().unwrap().samples.push(sample);
        } else {
            out.push(UsageSeries {
                client_id: rec.client_id,
                samples: vec![sample],
                sampling_interval_min: rec.interval_min,
            });
        }
    }
    Ok(out)
}

/// Per-client usage level and swing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UsageProfile {
    pub base: [f64; FEATURES],
    pub amplitude: [f64; FEATURES],
    /// Period of the client's private oscillation, in minutes.
    pub period_min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub clients: usize,
    pub tasks_per_client: usize,
    pub duration_min: u64,
    /// Weight of the shared latent signal in each client's series, in [0, 1].
    pub correlation: f64,
    pub seed: u64,
    pub interval_min: u64,
    /// Per-task probability of a short usage burst starting at a sample.
    pub burst_prob: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            clients: 3,
            tasks_per_client: 1,
            duration_min: 24 * 60,
            correlation: 0.5,
            seed: 1,
            interval_min: DEFAULT_INTERVAL_MIN,
            burst_prob: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTrace {
    pub samples: Vec<UsageSample>,
    pub assignment: BTreeMap<TaskId, ClientId>,
    pub profiles: BTreeMap<ClientId, UsageProfile>,
}

impl SyntheticTrace {
    pub fn series(&self) -> Vec<UsageSeries> {
        build_series(&self.samples, &self.assignment, self.interval())
            .expect("generated tasks are all assigned")
            .series
    }

    fn interval(&self) -> u64 {
        let mut ts: Vec<u64> = self.samples.iter().map(|s| s.timestamp).collect();
        ts.sort_unstable();
        ts.dedup();
        ts.windows(2).map(|w| w[1] - w[0]).min().unwrap_or(DEFAULT_INTERVAL_MIN)
    }
}

/// Smooth AR(1) noise with unit stationary variance.
struct Ar1 {
    phi: f64,
    state: f64,
}

impl Ar1 {
    fn new(phi: f64, rng: &mut ChaCha8Rng) -> Self {
        Self {
            phi,
            state: gaussian(rng),
        }
    }

    fn step(&mut self, rng: &mut ChaCha8Rng) -> f64 {
        self.state = self.phi * self.state + (1.0 - self.phi * self.phi).sqrt() * gaussian(rng);
        self.state
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; u1 kept away from zero.
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn random_profile(rng: &mut ChaCha8Rng) -> UsageProfile {
    UsageProfile {
        base: [rng.gen_range(0.35..0.55), rng.gen_range(0.30..0.50), rng.gen_range(0.05..0.20)],
        amplitude: [rng.gen_range(0.12..0.20), rng.gen_range(0.06..0.12), rng.gen_range(0.03..0.06)],
        period_min: 240.0,
    }
}

/// Generates a trace where every client shares the latent signal with weight
/// `correlation`.
pub fn generate(config: &SyntheticConfig) -> SyntheticTrace {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let profiles: Vec<UsageProfile> = (0..config.clients).map(|_| random_profile(&mut rng)).collect();
    let rho = vec![config.correlation; config.clients];
    generate_with(config, &profiles, &rho, &mut rng)
}

/// Three clients: a pair sharing the latent signal with weight
/// `pair_correlation` and similar usage levels, plus one outlier with a
/// different usage mix and independent, faster dynamics.
pub fn generate_pair_with_outlier(config: &SyntheticConfig, pair_correlation: f64) -> SyntheticTrace {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let base = random_profile(&mut rng);
    let mut twin = base;
    for (b, j) in twin.base.iter_mut().zip([0.02, 0.02, 0.01]) {
        *b += rng.gen_range(-j..j);
    }
    let outlier = UsageProfile {
        base: [0.12, 0.75, 0.55],
        amplitude: [0.08, 0.15, 0.2],
        period_min: 45.0,
    };
    let cfg = SyntheticConfig {
        clients: 3,
        tasks_per_client: config.tasks_per_client.max(1),
        ..config.clone()
    };
    generate_with(&cfg, &[base, twin, outlier], &[pair_correlation, pair_correlation, 0.0], &mut rng)
}

fn generate_with(
    config: &SyntheticConfig,
    profiles: &[UsageProfile],
    rho: &[f64],
    rng: &mut ChaCha8Rng,
) -> SyntheticTrace {
    let interval = config.interval_min.max(1);
    let steps = (config.duration_min / interval) as usize;
    let tasks_per_client = config.tasks_per_client.max(1);

    let mut shared = Ar1::new(0.9, rng);
    let latent: Vec<f64> = (0..steps)
        .map(|t| {
            let minute = (t as u64 * interval) as f64;
            let diurnal = (2.0 * std::f64::consts::PI * minute / 240.0).sin();
            (diurnal + 0.6 * shared.step(rng)) / 1.17
        })
        .collect();

    let mut samples = Vec::with_capacity(steps * profiles.len() * tasks_per_client);
    let mut assignment = BTreeMap::new();
    let mut profile_map = BTreeMap::new();
    for (k, profile) in profiles.iter().enumerate() {
        let client = ClientId(k as u32);
        profile_map.insert(client, *profile);
        let r = rho[k].clamp(0.0, 1.0);
        let own_weight = (1.0 - r * r).sqrt();
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        let mut private = Ar1::new(0.85, rng);
        let own: Vec<f64> = (0..steps)
            .map(|t| {
                let minute = (t as u64 * interval) as f64;
                let osc = (std::f64::consts::TAU * minute / profile.period_min + phase).sin();
                (osc + 0.6 * private.step(rng)) / 1.17
            })
            .collect();
        for j in 0..tasks_per_client {
            let task = TaskId((k * tasks_per_client + j) as u64);
            assignment.insert(task, client);
            let mut jitter = Ar1::new(0.5, rng);
            let mut burst_left = 0u32;
            for t in 0..steps {
                let x = r * latent[t] + own_weight * own[t];
                let noise = 0.15 * jitter.step(rng);
                if burst_left == 0 && config.burst_prob > 0.0 && rng.gen_bool(config.burst_prob.min(1.0)) {
                    burst_left = rng.gen_range(1..=2);
                }
                let burst = if burst_left > 0 {
                    burst_left -= 1;
                    0.35
                } else {
                    0.0
                };
                let value = |i: usize, extra: f64| {
                    (profile.base[i] + profile.amplitude[i] * (x + noise) + extra).clamp(0.01, 1.0)
                };
                samples.push(UsageSample {
                    timestamp: t as u64 * interval,
                    task_id: task,
                    cpu_util: value(0, burst),
                    mem_util: value(1, burst * 0.5),
                    disk_io: value(2, 0.0),
                });
            }
        }
    }
    samples.sort_by_key(|s| (s.task_id, s.timestamp));
    SyntheticTrace {
        samples,
        assignment,
        profiles: profile_map,
    }
}

/// Tasks sampled uniformly at random from a trace, each becoming its own
/// client. Returns the assignment used.
pub fn sample_task_assignment(
    samples: &[UsageSample],
    count: usize,
    seed: u64,
) -> BTreeMap<TaskId, ClientId> {
    let mut tasks: Vec<TaskId> = samples.iter().map(|s| s.task_id).collect();
    tasks.sort_unstable();
    tasks.dedup();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Partial Fisher-Yates.
    let take = count.min(tasks.len());
    for i in 0..take {
        let j = rng.gen_range(i..tasks.len());
        tasks.swap(i, j);
    }
    let mut chosen: Vec<TaskId> = tasks[..take].to_vec();
    chosen.sort_unstable();
    chosen.into_iter().enumerate().map(|(i, t)| (t, ClientId(i as u32))).collect()
}

/// Per-task lookup of samples by timestamp.
pub fn index_by_task(samples: &[UsageSample]) -> HashMap<TaskId, Vec<UsageSample>> {
    let mut map: HashMap<TaskId, Vec<UsageSample>> = HashMap::new();
    for s in samples {
        map.entry(s.task_id).or_default().push(*s);
    }
    for v in map.values_mut() {
        v.sort_by_key(|s| s.timestamp);
    }
    map
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const CSV3: &str = "timestamp,task_id,cpu_util,mem_util,disk_io\n\
                        10,2,0.5,0.4,0.1\n\
                        0,1,0.2,0.3,0.0\n\
                        5,1,0.25,0.3,0.05\n";

    fn sample(ts: u64, task: u64, cpu: f64) -> UsageSample {
        UsageSample {
            timestamp: ts,
            task_id: TaskId(task),
            cpu_util: cpu,
            mem_util: 0.5,
            disk_io: 0.1,
        }
    }

    #[test]
    fn parses_and_sorts() {
        let s = parse_trace_reader(CSV3.as_bytes(), &TraceSchema::default()).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!((s[0].task_id, s[0].timestamp), (TaskId(1), 0));
        assert_eq!((s[1].task_id, s[1].timestamp), (TaskId(1), 5));
        assert_eq!((s[2].task_id, s[2].timestamp), (TaskId(2), 10));
    }

    #[test]
    fn out_of_range_utilization_is_malformed() {
        let text = "timestamp,task_id,cpu_util,mem_util,disk_io\n0,1,0.2,0.3,0.0\n5,1,1.7,0.3,0.0\n";
        match parse_trace_reader(text.as_bytes(), &TraceSchema::default()) {
            Err(TraceError::MalformedRow { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn header_only_is_empty() {
        let text = "timestamp,task_id,cpu_util,mem_util,disk_io\n";
        assert!(parse_trace_reader(text.as_bytes(), &TraceSchema::default()).unwrap().is_empty());
    }

    #[test]
    fn missing_column_is_named() {
        let text = "timestamp,task_id,cpu_util,mem_util\n";
        match parse_trace_reader(text.as_bytes(), &TraceSchema::default()) {
            Err(TraceError::MissingColumn(c)) => assert_eq!(c, "disk_io"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_timestamps_rejected() {
        let text = "timestamp,task_id,cpu_util,mem_util,disk_io\n0,1,0.2,0.3,0.0\n0,1,0.3,0.3,0.0\n";
        assert!(matches!(
            parse_trace_reader(text.as_bytes(), &TraceSchema::default()),
            Err(TraceError::NonMonotoneTimestamps(TaskId(1)))
        ));
    }

    #[test]
    fn off_grid_timestamp_rejected() {
        let text = "timestamp,task_id,cpu_util,mem_util,disk_io\n3,1,0.2,0.3,0.0\n";
        assert!(matches!(
            parse_trace_reader(text.as_bytes(), &TraceSchema::default()),
            Err(TraceError::MalformedRow { line: 2, .. })
        ));
    }

    #[test]
    fn cluster_schema_converts_microseconds() {
        let schema = TraceSchema::cluster_task_usage();
        let text = "start_time,task_id,cpu_rate,canonical_memory_usage,disk_io_time\n600000000,7,0.1,0.2,0.0\n";
        let s = parse_trace_reader(text.as_bytes(), &schema).unwrap();
        assert_eq!(s[0].timestamp, 10);
    }

    #[test]
    fn two_tasks_two_clients() {
        let samples = vec![sample(0, 1, 0.1), sample(5, 1, 0.2), sample(0, 2, 0.3)];
        let assign = BTreeMap::from([(TaskId(1), ClientId(0)), (TaskId(2), ClientId(1))]);
        let built = build_series(&samples, &assign, 5).unwrap();
        assert_eq!(built.series.len(), 2);
        assert_eq!(built.imputed, 0);
    }

    #[test]
    fn single_gap_is_imputed() {
        let samples = vec![sample(0, 1, 0.1), sample(10, 1, 0.3)];
        let assign = BTreeMap::from([(TaskId(1), ClientId(0))]);
        let built = build_series(&samples, &assign, 5).unwrap();
        assert_eq!(built.imputed, 1);
        let s = &built.series[0];
        assert_eq!(s.len(), 3);
        assert_eq!(s.samples[1].timestamp, 5);
        assert_eq!(s.samples[1].cpu_util, 0.1);
    }

    #[test]
    fn long_gap_splits_series() {
        let samples = vec![sample(0, 1, 0.1), sample(25, 1, 0.3), sample(30, 1, 0.3)];
        let assign = BTreeMap::from([(TaskId(1), ClientId(0))]);
        let built = build_series(&samples, &assign, 5).unwrap();
        assert_eq!(built.series.len(), 2);
        assert_eq!(built.imputed, 0);
        // Exactly the cap: three missing samples are filled.
        let samples = vec![sample(0, 1, 0.1), sample(20, 1, 0.3)];
        let built = build_series(&samples, &assign, 5).unwrap();
        assert_eq!((built.series.len(), built.imputed), (1, 3));
    }

    #[test]
    fn interleaved_rows_are_time_ordered() {
        let samples = vec![sample(10, 1, 0.1), sample(0, 2, 0.1), sample(0, 1, 0.2), sample(5, 1, 0.3), sample(5, 2, 0.1)];
        let assign = BTreeMap::from([(TaskId(1), ClientId(0)), (TaskId(2), ClientId(1))]);
        for s in build_series(&samples, &assign, 5).unwrap().series {
            assert!(s.samples.windows(2).all(|w| w[0].timestamp < w[1].timestamp));
        }
    }

    #[test]
    fn unassigned_task_errors() {
        let samples = vec![sample(0, 9, 0.1)];
        assert!(matches!(
            build_series(&samples, &BTreeMap::new(), 5),
            Err(TraceError::UnassignedTask(TaskId(9)))
        ));
    }

    #[test]
    fn shared_client_is_averaged() {
        let samples = vec![sample(0, 1, 0.2), sample(0, 2, 0.4)];
        let assign = BTreeMap::from([(TaskId(1), ClientId(0)), (TaskId(2), ClientId(0))]);
        let built = build_series(&samples, &assign, 5).unwrap();
        assert_eq!(built.series.len(), 1);
        assert!((built.series[0].samples[0].cpu_util - 0.3).abs() < 1e-12);
    }

    fn series_of(len: usize) -> UsageSeries {
        UsageSeries {
            client_id: ClientId(0),
            samples: (0..len).map(|i| sample(i as u64 * 5, 1, i as f64 / 100.0)).collect(),
            sampling_interval_min: 5,
        }
    }

    #[test]
    fn window_counts_and_split() {
        let ds = window(&series_of(10), 3, 1).unwrap();
        assert_eq!(ds.len(), 7);
        assert_eq!(ds.train_len(), 5);
        assert_eq!(ds.test_len(), 2);
        assert_eq!(ds.targets[0], vec![0.03]);
        assert_eq!(ds.inputs[0].len(), 3);
    }

    #[test]
    fn window_too_short() {
        assert!(matches!(window(&series_of(3), 3, 1), Err(TraceError::SeriesTooShort { .. })));
        let one = window(&series_of(4), 3, 1).unwrap();
        assert_eq!((one.train_len(), one.test_len()), (0, 1));
    }

    #[test]
    fn multi_channel_targets_are_horizon_major() {
        let spec = WindowSpec {
            window: 2,
            horizon: 2,
            channels: vec![Channel::Cpu, Channel::Mem],
        };
        let ds = window_with(&series_of(8), &spec).unwrap();
        assert_eq!(ds.targets[0], vec![0.02, 0.5, 0.03, 0.5]);
    }

    #[test]
    fn series_file_round_trip() {
        let gen = generate(&SyntheticConfig {
            duration_min: 60,
            ..Default::default()
        });
        let series = gen.series();
        let mut buf = Vec::new();
        write_series_jsonl(&mut buf, &series).unwrap();
        let back = read_series_jsonl(buf.as_slice()).unwrap();
        assert_eq!(back, series);
        let mut again = Vec::new();
        write_series_jsonl(&mut again, &back).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn generator_is_deterministic_and_bounded() {
        let cfg = SyntheticConfig {
            clients: 4,
            tasks_per_client: 2,
            duration_min: 300,
            burst_prob: 0.1,
            ..Default::default()
        };
        let a = generate(&cfg);
        assert_eq!(a, generate(&cfg));
        assert_eq!(a.samples.len(), 4 * 2 * 60);
        assert!(a.samples.iter().all(|s| (0.0..=1.0).contains(&s.cpu_util) && (0.0..=1.0).contains(&s.mem_util)));
    }

    #[test]
    fn correlation_knob_controls_cross_client_correlation() {
        fn corr(a: &[f64], b: &[f64]) -> f64 {
            let n = a.len() as f64;
            let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
            let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
            let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
            let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
            cov / (va * vb).sqrt()
        }
        let run = |c: f64| {
            let t = generate(&SyntheticConfig {
                clients: 2,
                duration_min: 5 * 2000,
                correlation: c,
                seed: 3,
                ..Default::default()
            });
            let s = t.series();
            let a: Vec<f64> = s[0].samples.iter().map(|x| x.cpu_util).collect();
            let b: Vec<f64> = s[1].samples.iter().map(|x| x.cpu_util).collect();
            corr(&a, &b)
        };
        assert!(run(0.95) > run(0.2) + 0.3);
    }

    #[test]
    fn csv_export_parses_back() {
        let gen = generate(&SyntheticConfig {
            duration_min: 30,
            ..Default::default()
        });
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, &gen.samples, &TraceSchema::default()).unwrap();
        let parsed = parse_trace_reader(buf.as_slice(), &TraceSchema::default()).unwrap();
        assert_eq!(parsed, gen.samples);
    }

    #[test]
    fn task_sampling_is_seeded() {
        let gen = generate(&SyntheticConfig {
            clients: 10,
            duration_min: 10,
            ..Default::default()
        });
        let a = sample_task_assignment(&gen.samples, 4, 9);
        assert_eq!(a, sample_task_assignment(&gen.samples, 4, 9));
        assert_eq!(a.len(), 4);
    }

    proptest! {
        #[test]
        fn window_count_formula(len in 4usize..60, w in 1usize..10, h in 1usize..4) {
            prop_assume!(len >= w + h);
            let ds = window(&series_of(len), w, h).unwrap();
            prop_assert_eq!(ds.len(), len - w - h + 1);
            let frac = ds.train_len() as f64 / ds.len() as f64;
            prop_assert!((frac - 0.8).abs() <= 1.0 / ds.len() as f64);
            prop_assert_eq!(ds.clone(), window(&series_of(len), w, h).unwrap());
        }
    }
}
