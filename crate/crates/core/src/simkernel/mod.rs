//! Discrete-time simulation of the fault-tolerant scheduling loop.
//!
//! Each tick realizes task usage from the workload, detects contention on
//! VMs and servers, applies MVP majority masking, heals failed versions by
//! migration and records the outcome. Every retraining period the forecaster
//! is updated by federation, tasks are reclassified against their placement,
//! fault patterns are re-mined and replicas re-planned.

pub mod kpi;
pub mod report;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    classify_status, default_threshold, Catalog, ClientId, DTTask, FaultStatus, ResourceVector, ServerId, ServerSpec, TaskId,
    VmId, VmTier, DEFAULT_THRESHOLD_FRACTION,
};
use crate::forecast::{
    continue_federation, lstm_forward, FederationConfig, ForecastError, GlobalModel, LocalSite, LstmParams, LstmShape,
    RoundReport, TrainConfig,
};
use crate::patterns::{build_knowledge, MiningLimits, Outcome, PatternKnowledge, Tdtdb, TransactionRecord};
use crate::scheduler::{plan_replicas, MvpMode, PlaceRequest, PlacementState, ReplicaConfig, SchedulerError, SpawnTier, VersionKey};
use crate::trace::{generate, window_rows, Channel, SyntheticConfig, TraceError, WindowSpec, FEATURES};

pub use kpi::{availability, compute_mtbf, compute_mttr, power_kw, resource_utilization, server_power_w, LedgerRatio, Utilization};

pub const DEFAULT_MTTR_BASE_MIN: f64 = 0.21;
pub const DEFAULT_SIZES: [usize; 6] = [10, 20, 40, 60, 80, 100];
pub const DEFAULT_HORIZONS: [u64; 4] = [50, 100, 200, 400];
pub const EVENT_SCHEMA_VERSION: u32 = 1;

const SLACK: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("availability undefined for MTBF {mtbf} and MTTR {mttr}")]
    UndefinedAvailability { mtbf: f64, mttr: f64 },
    #[error("invariant violated at t={time_min} min: {source}")]
    InvariantViolation { time_min: u64, source: SchedulerError },
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
    #[error(transparent)]
    Forecast(#[from] ForecastError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("cell size={size} T={horizon} mode={mode}: {source}")]
    Cell {
        size: usize,
        horizon: u64,
        mode: ForecasterMode,
        source: Box<SimError>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ForecasterMode {
    /// Similarity-gated federation.
    SimiFed,
    /// Plain federated averaging over every client.
    Fed,
    /// No forecasting, replication or pattern guidance; reactive healing only.
    None,
}

impl ForecasterMode {
    pub const ALL: [ForecasterMode; 3] = [ForecasterMode::SimiFed, ForecasterMode::Fed, ForecasterMode::None];

    pub fn as_str(self) -> &'static str {
        match self {
            ForecasterMode::SimiFed => "simifed",
            ForecasterMode::Fed => "fed",
            ForecasterMode::None => "none",
        }
    }
}

impl fmt::Display for ForecasterMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ForecasterMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "simifed" => Ok(ForecasterMode::SimiFed),
            "fed" => Ok(ForecasterMode::Fed),
            "none" => Ok(ForecasterMode::None),
            other => Err(format!("unknown mode {other:?} (simifed, fed, none)")),
        }
    }
}

/// One simulation cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub app_size: usize,
    pub horizon_min: u64,
    pub tick_min: u64,
    pub seed: u64,
    pub mode: ForecasterMode,
    pub mttr_base_min: f64,
    pub tau: f64,
    pub pattern_guidance: bool,
    /// Relative minimum support for the per-epoch mining pass.
    pub min_sup: f64,
    pub mine_max_elements: usize,
    pub mine_max_itemset: usize,
    pub retrain_ticks: usize,
    pub history_ticks: usize,
    pub window: usize,
    pub hidden: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Reserved demand is the forecast peak plus this many client test RMSEs.
    pub forecast_margin: f64,
    pub initial_rounds: usize,
    pub rounds_per_epoch: usize,
    pub correlation: f64,
    pub burst_prob: f64,
    pub contention_faults: bool,
    /// Per-version, per-tick probability of an injected fault.
    pub random_fault_rate: f64,
    pub threshold_fraction: f64,
    pub target_failure: f64,
    pub mvp_mode: MvpMode,
    /// Extra versions allowed across all tasks; `None` means twice the
    /// application size.
    pub replica_budget: Option<usize>,
    pub autoscale_epochs: usize,
    pub servers_per_type: usize,
    /// Initial packing opens VMs at the largest tier; otherwise the smallest
    /// fitting one.
    pub pack_largest: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            app_size: 10,
            horizon_min: 400,
            tick_min: 5,
            seed: 1,
            mode: ForecasterMode::SimiFed,
            mttr_base_min: DEFAULT_MTTR_BASE_MIN,
            tau: crate::forecast::DEFAULT_TAU,
            pattern_guidance: true,
            min_sup: 0.1,
            mine_max_elements: 1,
            mine_max_itemset: 2,
            retrain_ticks: 10,
            history_ticks: 144,
            window: 12,
            hidden: 8,
            local_epochs: 3,
            batch_size: 16,
            lr: 0.01,
            forecast_margin: 1.0,
            initial_rounds: 3,
            rounds_per_epoch: 1,
            correlation: 0.6,
            burst_prob: 0.03,
            contention_faults: true,
            random_fault_rate: 0.0,
            threshold_fraction: DEFAULT_THRESHOLD_FRACTION,
            target_failure: crate::scheduler::DEFAULT_TARGET_FAILURE,
            mvp_mode: MvpMode::Literal,
            replica_budget: None,
            autoscale_epochs: 2,
            servers_per_type: 4,
            pack_largest: true,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidConfig(m));
        if self.tick_min == 0 || self.horizon_min == 0 || !self.horizon_min.is_multiple_of(self.tick_min) {
            return bad(format!("tick {} must divide horizon {}", self.tick_min, self.horizon_min));
        }
        if self.app_size == 0 {
            return bad("app_size must be positive".into());
        }
        if self.retrain_ticks == 0 {
            return bad("retrain_ticks must be positive".into());
        }
        if self.mode != ForecasterMode::None {
            if self.app_size < 2 {
                return bad("federation needs app_size >= 2".into());
            }
            let needed = self.window + self.retrain_ticks;
            if self.history_ticks < needed + 5 {
                return bad(format!("history_ticks must be at least {}", needed + 5));
            }
        }
        if !(0.0..=1.0).contains(&self.random_fault_rate) || !(0.0..=1.0).contains(&self.burst_prob) {
            return bad("rates must lie in [0, 1]".into());
        }
        if !(self.threshold_fraction > 0.0 && self.threshold_fraction < 1.0) {
            return bad("threshold_fraction must lie in (0, 1)".into());
        }
        if !(0.0..=1.0).contains(&self.min_sup) {
            return bad("min_sup must lie in [0, 1]".into());
        }
        if self.mttr_base_min < 0.0 {
            return bad("mttr_base_min must be non-negative".into());
        }
        Ok(())
    }

    pub fn ticks(&self) -> usize {
        (self.horizon_min / self.tick_min) as usize
    }
}

/// Mixes a base seed with a cell coordinate.
pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Usage of every task, history first. Task `k` belongs to client `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Workload {
    pub tasks: Vec<TaskId>,
    /// Demand at utilization 1.
    pub scale: BTreeMap<TaskId, ResourceVector>,
    /// Utilization rows `[cpu, mem, disk]`.
    pub rows: BTreeMap<TaskId, Vec<[f64; FEATURES]>>,
    pub history_ticks: usize,
}

impl Workload {
    /// Synthetic tasks with peak demands of 0.6–1.6 PE and 0.4–1.2 GB.
    pub fn synthetic(cfg: &SimConfig) -> Self {
        let seed = derive_seed(cfg.seed, cfg.app_size as u64);
        let total = cfg.history_ticks + cfg.ticks() + 1;
        let trace = generate(&SyntheticConfig {
            clients: cfg.app_size,
            tasks_per_client: 1,
            duration_min: total as u64 * cfg.tick_min,
            correlation: cfg.correlation,
            seed,
            interval_min: cfg.tick_min,
            burst_prob: cfg.burst_prob,
        });
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5CA1E);
        let mut rows: BTreeMap<TaskId, Vec<[f64; FEATURES]>> = BTreeMap::new();
        for s in &trace.samples {
            rows.entry(s.task_id).or_default().push([s.cpu_util, s.mem_util, s.disk_io]);
        }
        let tasks: Vec<TaskId> = rows.keys().copied().collect();
        let scale = tasks
            .iter()
            .map(|t| {
                let pe = rng.gen_range(0.6..1.6);
                (*t, ResourceVector::new(pe, pe * 500.0, rng.gen_range(0.4..1.2)))
            })
            .collect();
        Self {
            tasks,
            scale,
            rows,
            history_ticks: cfg.history_ticks,
        }
    }

    /// Realized usage of `task` at simulation tick `tick`.
    pub fn usage(&self, task: TaskId, tick: usize) -> ResourceVector {
        self.usage_at_row(task, self.history_ticks + tick)
    }

    fn usage_at_row(&self, task: TaskId, row: usize) -> ResourceVector {
        let r = self.rows[&task][row];
        let s = self.scale[&task];
        ResourceVector::new(r[0] * s.cpu_pe, r[0] * s.cpu_mips, r[1] * s.mem_gb)
    }

    fn history_mean(&self, task: TaskId) -> ResourceVector {
        let n = self.history_ticks.max(1);
        let sum: ResourceVector = (0..self.history_ticks).map(|r| self.usage_at_row(task, r)).sum();
        sum.scale(1.0 / n as f64)
    }

    fn client(&self, task: TaskId) -> ClientId {
        ClientId(self.tasks.iter().position(|t| *t == task).expect("known task") as u32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultCause {
    ResourceContention,
    InjectedRandom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultEvent {
    pub timestamp: u64,
    pub task_id: TaskId,
    pub version: u32,
    pub vm_id: VmId,
    pub server_id: ServerId,
    pub cause: FaultCause,
    /// The task was fault-prone at the latest classification.
    pub predicted: bool,
    /// A majority of the task's versions survived.
    pub masked: bool,
    pub repair_duration_min: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MigrationReason {
    Healing,
    Proactive,
    Autoscale,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MigrationEvent {
    pub timestamp: u64,
    pub task_id: TaskId,
    pub version: u32,
    pub from_vm: VmId,
    pub to_vm: VmId,
    pub to_server: ServerId,
    pub reason: MigrationReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochEvent {
    pub timestamp: u64,
    pub fault_prone: usize,
    pub extra_versions: usize,
    pub nf_patterns: usize,
    pub sf_patterns: usize,
    pub active_servers: usize,
    pub vms: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SimEvent {
    Fault(FaultEvent),
    Migration(MigrationEvent),
    Epoch(EpochEvent),
}

/// One row of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimMetrics {
    pub mode: ForecasterMode,
    pub app_size: usize,
    pub horizon_min: u64,
    pub mtbf_min: f64,
    pub mttr_min: f64,
    pub availability_pct: f64,
    pub fault_pred_accuracy_pct: f64,
    pub resource_contention_pct: f64,
    pub migrations: usize,
    pub power_kw: f64,
    pub resource_util_pct: f64,
    pub overload_pct: f64,
    pub success_pct: f64,
    pub num_failures: usize,
    pub no_failures: bool,
    pub uptime_min: Vec<f64>,
    pub downtime_min: Vec<f64>,
}

/// Forecaster diagnostics for one retraining epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochForecast {
    pub time_min: u64,
    pub rounds: Vec<RoundReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutcome {
    pub config: SimConfig,
    pub metrics: SimMetrics,
    pub events: Vec<SimEvent>,
    pub forecasts: Vec<EpochForecast>,
    /// One record per task per tick.
    pub tdtdb: Tdtdb,
}

/// Result of checking one tick's realized usage against the placement.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Contention {
    pub overloaded_vms: BTreeSet<VmId>,
    pub failed: Vec<(VersionKey, FaultCause)>,
    /// Tasks whose failed versions reached a majority.
    pub unmasked: BTreeSet<TaskId>,
    pub masked: BTreeSet<TaskId>,
    pub version_count: usize,
    pub overloaded_versions: usize,
}

fn exceeds(load: &ResourceVector, cap: &ResourceVector) -> bool {
    load.cpu_pe > cap.cpu_pe + SLACK || load.mem_gb > cap.mem_gb + SLACK
}

/// Marks every version on an overloaded VM (or on a VM of an overloaded
/// server) failed, adds `injected` failures, and applies majority masking.
pub fn detect_contention(
    placement: &PlacementState,
    usage: &BTreeMap<TaskId, ResourceVector>,
    injected: &BTreeSet<VersionKey>,
) -> Contention {
    let mut out = Contention::default();
    let vm_usage = |vm: VmId| -> ResourceVector { placement.residents(vm).map(|k| usage.get(&k.task).copied().unwrap_or(ResourceVector::ZERO)).sum() };
    let mut loads: BTreeMap<VmId, ResourceVector> = BTreeMap::new();
    for spec in placement.vms() {
        let load = vm_usage(spec.id);
        if exceeds(&load, &spec.capacity) {
            out.overloaded_vms.insert(spec.id);
        }
        loads.insert(spec.id, load);
    }
    for server in placement.active_servers() {
        let spec = placement.server(server).expect("active server exists");
        let load: ResourceVector = placement.vms_on(server).map(|v| loads[&v]).sum();
        if exceeds(&load, &spec.capacity) {
            out.overloaded_vms.extend(placement.vms_on(server));
        }
    }
    let mut failed_per_task: BTreeMap<TaskId, usize> = BTreeMap::new();
    for task in placement.tasks() {
        for (version, vm) in placement.replica_group(task) {
            out.version_count += 1;
            let key = VersionKey { task, version };
            let cause = if out.overloaded_vms.contains(&vm) {
                out.overloaded_versions += 1;
                Some(FaultCause::ResourceContention)
            } else if injected.contains(&key) {
                Some(FaultCause::InjectedRandom)
            } else {
                None
            };
            if let Some(c) = cause {
                out.failed.push((key, c));
                *failed_per_task.entry(task).or_default() += 1;
            }
        }
    }
    for (task, failed) in failed_per_task {
        if 2 * failed > placement.version_count(task) {
            out.unmasked.insert(task);
        } else {
            out.masked.insert(task);
        }
    }
    out
}

#[derive(Debug, Clone, Default)]
struct Counters {
    failures: usize,
    predicted_failures: usize,
    migrations: usize,
    version_ticks: usize,
    overloaded_version_ticks: usize,
    power_kw_sum: f64,
    ru_sum: f64,
    ticks: usize,
}

/// Mutable state of one simulation cell.
pub struct SimState {
    cfg: SimConfig,
    catalog: Catalog,
    workload: Workload,
    placement: PlacementState,
    status: BTreeMap<TaskId, FaultStatus>,
    prone_streak: BTreeMap<TaskId, usize>,
    version_stats: BTreeMap<TaskId, (u64, u64)>,
    tdtdb: Tdtdb,
    knowledge: PatternKnowledge,
    global: Option<GlobalModel>,
    local_models: BTreeMap<ClientId, LstmParams>,
    down_until: Vec<f64>,
    downtime: Vec<f64>,
    counters: Counters,
    rng: ChaCha8Rng,
    events: Vec<SimEvent>,
    forecasts: Vec<EpochForecast>,
}

fn server_pool(servers_per_type: usize) -> Vec<ServerSpec> {
    let mut catalog = crate::domain::catalog_servers();
    catalog.sort_by(|a, b| b.capacity.cpu_pe.total_cmp(&a.capacity.cpu_pe));
    let mut out = Vec::new();
    let mut id = 1;
    for spec in &catalog {
        for _ in 0..servers_per_type.max(1) {
            out.push(ServerSpec {
                id: ServerId(id),
                ..spec.clone()
            });
            id += 1;
        }
    }
    out
}

impl SimState {
    pub fn new(cfg: SimConfig, workload: Workload) -> Result<Self, SimError> {
        cfg.validate()?;
        let needed = workload.history_ticks + cfg.ticks();
        if workload.rows.values().any(|r| r.len() < needed) || workload.tasks.len() != workload.rows.len() {
            return Err(SimError::InvalidConfig(format!("workload shorter than {needed} rows")));
        }
        let pool = server_pool(cfg.servers_per_type);
        let elastic = pool[0].clone();
        let n = workload.tasks.len();
        let rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0xFA17 + n as u64));
        Ok(Self {
            catalog: Catalog::default(),
            placement: PlacementState::new(pool).with_elastic(elastic),
            status: workload.tasks.iter().map(|t| (*t, FaultStatus::LeastFaultProne)).collect(),
            prone_streak: BTreeMap::new(),
            version_stats: BTreeMap::new(),
            tdtdb: Tdtdb::new(),
            knowledge: PatternKnowledge::default(),
            global: None,
            local_models: BTreeMap::new(),
            down_until: vec![0.0; n],
            downtime: vec![0.0; n],
            counters: Counters::default(),
            rng,
            events: Vec::new(),
            forecasts: Vec::new(),
            cfg,
            workload,
        })
    }

    pub fn placement(&self) -> &PlacementState {
        &self.placement
    }

    pub fn events(&self) -> &[SimEvent] {
        &self.events
    }

    pub fn status(&self, task: TaskId) -> FaultStatus {
        self.status[&task]
    }

    fn time(&self, tick: usize) -> u64 {
        tick as u64 * self.cfg.tick_min
    }

    fn headroom(&self, demand: &ResourceVector) -> ResourceVector {
        if self.cfg.mode == ForecasterMode::None {
            *demand
        } else {
            demand.scale(1.0 / self.cfg.threshold_fraction)
        }
    }

    fn guidance(&self) -> PatternKnowledge {
        if self.cfg.pattern_guidance && self.cfg.mode != ForecasterMode::None {
            self.knowledge.clone()
        } else {
            PatternKnowledge::default()
        }
    }

    /// Runs the epoch logic when due, then one tick of execution.
    pub fn step(&mut self, tick: usize) -> Result<(), SimError> {
        let first = tick == 0;
        let due = tick.is_multiple_of(self.cfg.retrain_ticks);
        if self.cfg.mode == ForecasterMode::None {
            if first {
                self.initial_placement(&self.static_demands(), tick)?;
            }
        } else if due {
            self.epoch(tick)?;
        }
        self.execute(tick)?;
        self.placement
            .validate()
            .map_err(|source| SimError::InvariantViolation {
                time_min: self.time(tick),
                source,
            })
    }

    fn static_demands(&self) -> BTreeMap<TaskId, ResourceVector> {
        self.workload.tasks.iter().map(|t| (*t, self.workload.history_mean(*t))).collect()
    }

    fn initial_placement(&mut self, demands: &BTreeMap<TaskId, ResourceVector>, tick: usize) -> Result<(), SimError> {
        let mut order: Vec<DTTask> = demands.iter().map(|(t, d)| DTTask::new(*t, self.workload.client(*t), *d)).collect();
        order.sort_by(|a, b| {
            b.demand
                .cpu_pe
                .total_cmp(&a.demand.cpu_pe)
                .then(b.demand.mem_gb.total_cmp(&a.demand.mem_gb))
                .then(a.id.cmp(&b.id))
        });
        let spawn = if self.cfg.pack_largest {
            SpawnTier::Largest
        } else {
            SpawnTier::SmallestFitting
        };
        for task in order {
            let req = PlaceRequest {
                task: task.id,
                demand: task.demand,
                fit: task.demand,
                versions: 1,
                min_tier: VmTier::Small,
                spawn,
                exclude_vms: BTreeSet::new(),
            };
            self.placement
                .place_versions(&self.catalog, &PatternKnowledge::default(), &req)
                .map_err(|source| SimError::InvariantViolation {
                    time_min: self.time(tick),
                    source,
                })?;
        }
        Ok(())
    }

    fn forecast_demands(&mut self, tick: usize) -> Result<BTreeMap<TaskId, ResourceVector>, SimError> {
        let rows_end = self.workload.history_ticks + tick;
        let spec = WindowSpec {
            window: self.cfg.window,
            horizon: self.cfg.retrain_ticks,
            channels: vec![Channel::Cpu, Channel::Mem],
        };
        let train = TrainConfig {
            lr: self.cfg.lr,
            epochs: self.cfg.local_epochs,
            batch_size: self.cfg.batch_size,
            seed: derive_seed(self.cfg.seed, 0x7EA1 + tick as u64),
            ..TrainConfig::default()
        };
        let mut sites = Vec::with_capacity(self.workload.tasks.len());
        for (k, task) in self.workload.tasks.iter().enumerate() {
            let data = window_rows(ClientId(k as u32), &self.workload.rows[task][..rows_end], &spec)?;
            sites.push(LocalSite::new(data, train));
        }
        let global = match self.global.take() {
            Some(g) => g,
            None => {
                let shape = LstmShape::new(FEATURES, self.cfg.hidden, spec.output_len());
                GlobalModel::new(LstmParams::init(shape, derive_seed(self.cfg.seed, 0x1A17)))
            }
        };
        let fed = FederationConfig {
            rounds: if tick == 0 { self.cfg.initial_rounds } else { self.cfg.rounds_per_epoch },
            tau: if self.cfg.mode == ForecasterMode::Fed { -1.0 } else { self.cfg.tau },
            normalized_weights: true,
        };
        let outcome = continue_federation(&sites, global, &fed)?;
        let rmse: BTreeMap<ClientId, f64> = outcome
            .rounds
            .last()
            .map(|r| r.per_client.iter().map(|(c, rep)| (*c, rep.mse.sqrt())).collect())
            .unwrap_or_default();
        let mut demands = BTreeMap::new();
        for (k, task) in self.workload.tasks.iter().enumerate() {
            let rows = &self.workload.rows[task][rows_end - self.cfg.window..rows_end];
            let y = lstm_forward(outcome.model_for(ClientId(k as u32)), rows)?;
            let (mut cpu, mut mem) = (0.0f64, 0.0f64);
            for step in y.chunks(2) {
                cpu = cpu.max(step[0]);
                mem = mem.max(step[1]);
            }
            let s = self.workload.scale[task];
            let margin = self.cfg.forecast_margin * rmse.get(&ClientId(k as u32)).copied().unwrap_or(0.0);
            let (cpu, mem) = ((cpu + margin).clamp(0.01, 1.0), (mem + margin).clamp(0.01, 1.0));
            demands.insert(*task, ResourceVector::new(cpu * s.cpu_pe, cpu * s.cpu_mips, mem * s.mem_gb));
        }
        self.forecasts.push(EpochForecast {
            time_min: self.time(tick),
            rounds: outcome.rounds.clone(),
        });
        self.local_models = outcome.local_models.clone();
        self.global = Some(outcome.global);
        Ok(demands)
    }

    /// Status of `task` against every VM it occupies, using `demands` for
    /// all residents.
    fn classify(&self, task: TaskId, demands: &BTreeMap<TaskId, ResourceVector>) -> FaultStatus {
        let pred = demands[&task];
        let group = self.placement.replica_group(task);
        if group.is_empty() {
            return FaultStatus::HighlyFaultProne;
        }
        let mut worst = FaultStatus::LeastFaultProne;
        for (_, vm) in group {
            let cap = self.placement.vm(vm).expect("placed VM").capacity;
            let others: ResourceVector = self.placement.residents(vm).filter(|k| k.task != task).map(|k| demands[&k.task]).sum();
            let avail = cap.saturating_sub(&others);
            let status = if avail.cpu_pe <= SLACK || avail.mem_gb <= SLACK {
                FaultStatus::HighlyFaultProne
            } else {
                classify_status(&pred, &default_threshold(&avail, self.cfg.threshold_fraction), &avail)
                    .unwrap_or(FaultStatus::HighlyFaultProne)
            };
            worst = worst.max(status);
        }
        worst
    }

    fn epoch(&mut self, tick: usize) -> Result<(), SimError> {
        let t = self.time(tick);
        if self.cfg.pattern_guidance && !self.tdtdb.is_empty() {
            let limits = MiningLimits {
                max_elements: Some(self.cfg.mine_max_elements),
                max_itemset_size: Some(self.cfg.mine_max_itemset),
            };
            let window = Some(self.cfg.retrain_ticks as u64 * self.cfg.tick_min);
            self.knowledge = build_knowledge(&self.tdtdb, self.cfg.min_sup, window, limits);
        }
        let demands = self.forecast_demands(tick)?;
        let invariant = |source| SimError::InvariantViolation { time_min: t, source };
        if tick == 0 {
            self.initial_placement(&demands, tick)?;
        }
        let statuses: BTreeMap<TaskId, FaultStatus> = self.workload.tasks.iter().map(|t| (*t, self.classify(*t, &demands))).collect();
        let prone: Vec<TaskId> = statuses.iter().filter(|(_, s)| s.is_fault_prone()).map(|(t, _)| *t).collect();

        let mut previous: BTreeMap<TaskId, Vec<(u32, VmId)>> = BTreeMap::new();
        let mut min_tier: BTreeMap<TaskId, VmTier> = BTreeMap::new();
        for task in &prone {
            let streak = self.prone_streak.entry(*task).or_default();
            *streak += 1;
            if *streak >= self.cfg.autoscale_epochs.max(1) {
                *streak = 0;
                let tier = self
                    .placement
                    .task_to_vm(*task)
                    .and_then(|v| self.placement.vm(v))
                    .map_or(VmTier::Small, |v| v.tier);
                min_tier.insert(*task, tier.next_up().unwrap_or(tier));
            }
            previous.insert(*task, self.placement.unassign_all(*task));
        }
        for (task, status) in &statuses {
            if !status.is_fault_prone() {
                self.prone_streak.remove(task);
                let group = self.placement.replica_group(*task);
                for (v, _) in group.iter().skip(1) {
                    self.placement.unassign(*task, *v);
                }
            }
        }
        // Lower reservations before raising any so no VM overflows midway.
        for phase in [true, false] {
            for (task, status) in &statuses {
                if status.is_fault_prone() {
                    continue;
                }
                let old = self.placement.demand(*task).unwrap_or(ResourceVector::ZERO);
                let new = demands[task];
                let lowering = new.cpu_pe <= old.cpu_pe && new.mem_gb <= old.mem_gb;
                if lowering == phase {
                    self.placement.set_demand(*task, new).map_err(invariant)?;
                }
            }
        }

        let n = self.workload.tasks.len();
        let budget_total = self.cfg.replica_budget.unwrap_or(2 * n);
        let mut extra: usize = self.workload.tasks.iter().map(|t| self.placement.version_count(*t).saturating_sub(1)).sum();
        let replica_cfg = ReplicaConfig {
            target_failure: self.cfg.target_failure,
            mode: self.cfg.mvp_mode,
        };
        let guidance = self.guidance();
        let mut order: Vec<TaskId> = prone.clone();
        order.sort_by(|a, b| {
            let (da, db) = (demands[a], demands[b]);
            db.cpu_pe.total_cmp(&da.cpu_pe).then(db.mem_gb.total_cmp(&da.mem_gb)).then(a.cmp(b))
        });
        for task in order {
            let (fails, seen) = self.version_stats.get(&task).copied().unwrap_or((0, 0));
            let f = (fails as f64 + 1.0) / (seen as f64 + 2.0);
            let mut dt = DTTask::new(task, self.workload.client(task), demands[&task]);
            dt.status = statuses[&task];
            let plan = plan_replicas(&dt, 1 + budget_total.saturating_sub(extra), &[f], &replica_cfg);
            let req = PlaceRequest {
                task,
                demand: demands[&task],
                fit: self.headroom(&demands[&task]),
                versions: plan.num,
                min_tier: min_tier.get(&task).copied().unwrap_or(VmTier::Small),
                spawn: SpawnTier::SmallestFitting,
                exclude_vms: BTreeSet::new(),
            };
            let placed = self.placement.place_versions(&self.catalog, &guidance, &req).map_err(invariant)?;
            extra += plan.num - 1;
            let before: BTreeMap<u32, VmId> = previous.remove(&task).unwrap_or_default().into_iter().collect();
            for (version, vm) in placed {
                if let Some(from) = before.get(&version) {
                    if *from != vm {
                        self.counters.migrations += 1;
                        self.events.push(SimEvent::Migration(MigrationEvent {
                            timestamp: t,
                            task_id: task,
                            version,
                            from_vm: *from,
                            to_vm: vm,
                            to_server: self.placement.server_of(vm).expect("deployed VM"),
                            reason: if min_tier.contains_key(&task) {
                                MigrationReason::Autoscale
                            } else {
                                MigrationReason::Proactive
                            },
                        }));
                    }
                }
            }
        }
        self.placement.remove_empty_vms();
        self.status = statuses;
        self.events.push(SimEvent::Epoch(EpochEvent {
            timestamp: t,
            fault_prone: prone.len(),
            extra_versions: extra,
            nf_patterns: self.knowledge.nf.len(),
            sf_patterns: self.knowledge.sf.len(),
            active_servers: self.placement.active_servers().len(),
            vms: self.placement.vms().count(),
        }));
        Ok(())
    }

    fn execute(&mut self, tick: usize) -> Result<(), SimError> {
        let t = self.time(tick);
        let horizon = self.cfg.horizon_min as f64;
        let usage: BTreeMap<TaskId, ResourceVector> = self.workload.tasks.iter().map(|t| (*t, self.workload.usage(*t, tick))).collect();
        let mut injected = BTreeSet::new();
        if self.cfg.random_fault_rate > 0.0 {
            let keys: Vec<VersionKey> = self
                .placement
                .tasks()
                .flat_map(|task| self.placement.replica_group(task).into_iter().map(move |(version, _)| VersionKey { task, version }))
                .collect();
            for k in keys {
                if self.rng.gen_bool(self.cfg.random_fault_rate) {
                    injected.insert(k);
                }
            }
        }
        let mut contention = detect_contention(&self.placement, &usage, &injected);
        if !self.cfg.contention_faults {
            contention.failed.retain(|(_, c)| *c != FaultCause::ResourceContention);
            contention.overloaded_vms.clear();
            contention.overloaded_versions = 0;
            let mut per_task: BTreeMap<TaskId, usize> = BTreeMap::new();
            for (k, _) in &contention.failed {
                *per_task.entry(k.task).or_default() += 1;
            }
            contention.unmasked.clear();
            contention.masked.clear();
            for (task, failed) in per_task {
                if 2 * failed > self.placement.version_count(task) {
                    contention.unmasked.insert(task);
                } else {
                    contention.masked.insert(task);
                }
            }
        }
        self.counters.version_ticks += contention.version_count;
        self.counters.overloaded_version_ticks += contention.overloaded_versions;
        for task in self.placement.tasks().collect::<Vec<_>>() {
            let e = self.version_stats.entry(task).or_default();
            e.1 += self.placement.version_count(task) as u64;
        }
        for (k, _) in &contention.failed {
            self.version_stats.entry(k.task).or_default().0 += 1;
        }

        let failed_keys: BTreeSet<VersionKey> = contention.failed.iter().map(|(k, _)| *k).collect();
        for task in self.workload.tasks.clone() {
            let group = self.placement.replica_group(task);
            let Some((primary_version, vm)) = group.first().copied() else { continue };
            let outcome = if failed_keys.contains(&VersionKey { task, version: primary_version }) {
                Outcome::Failed
            } else {
                Outcome::Succeeded
            };
            self.tdtdb
                .insert(TransactionRecord {
                    timestamp: t,
                    task_id: task,
                    vm_id: vm,
                    server_id: self.placement.server_of(vm).expect("deployed VM"),
                    usage: usage[&task],
                    outcome,
                })
                .expect("one record per task per tick");
        }

        // Evict the largest consumers from each overloaded VM until the rest fits.
        let mut evict: Vec<(ServerId, VmId, VersionKey)> = Vec::new();
        for vm in &contention.overloaded_vms {
            let cap = self.placement.vm(*vm).expect("deployed VM").capacity;
            let mut residents: Vec<VersionKey> = self.placement.residents(*vm).collect();
            residents.sort_by(|a, b| {
                let (ua, ub) = (usage[&a.task], usage[&b.task]);
                ub.cpu_pe.total_cmp(&ua.cpu_pe).then(ub.mem_gb.total_cmp(&ua.mem_gb)).then(a.cmp(b))
            });
            let mut load: ResourceVector = residents.iter().map(|k| usage[&k.task]).sum();
            let server = self.placement.server_of(*vm).expect("deployed VM");
            let server_overloaded = !self.placement.vms_on(server).any(|_| true) || {
                let scap = self.placement.server(server).expect("server").capacity;
                let sload: ResourceVector = self
                    .placement
                    .vms_on(server)
                    .flat_map(|v| self.placement.residents(v).map(|k| usage[&k.task]).collect::<Vec<_>>())
                    .sum();
                exceeds(&sload, &scap)
            };
            for k in residents {
                if !exceeds(&load, &cap) && !server_overloaded {
                    break;
                }
                load = load.saturating_sub(&usage[&k.task]);
                evict.push((server, *vm, k));
                if server_overloaded && !exceeds(&load, &cap) {
                    break;
                }
            }
        }
        evict.sort();
        let mut queue: BTreeMap<ServerId, usize> = BTreeMap::new();
        let mut repair: BTreeMap<VersionKey, f64> = BTreeMap::new();
        let guidance = self.guidance();
        for (server, from, key) in &evict {
            let pos = queue.entry(*server).or_default();
            *pos += 1;
            repair.insert(*key, *pos as f64 * self.cfg.mttr_base_min);
            let target = self.placement.version_count(key.task);
            self.placement.unassign(key.task, key.version);
            let est = self.placement.demand(key.task).unwrap_or(ResourceVector::ZERO);
            let grown = est.max(&usage[&key.task]);
            let demand = if self.placement.set_demand(key.task, grown).is_ok() { grown } else { est };
            let mut exclude = contention.overloaded_vms.clone();
            exclude.insert(*from);
            let req = PlaceRequest {
                task: key.task,
                demand,
                fit: self.headroom(&demand),
                versions: target,
                min_tier: VmTier::Small,
                spawn: SpawnTier::SmallestFitting,
                exclude_vms: exclude,
            };
            let placed = self
                .placement
                .place_versions(&self.catalog, &guidance, &req)
                .map_err(|source| SimError::InvariantViolation { time_min: t, source })?;
            for (version, vm) in placed {
                self.counters.migrations += 1;
                self.events.push(SimEvent::Migration(MigrationEvent {
                    timestamp: t,
                    task_id: key.task,
                    version,
                    from_vm: *from,
                    to_vm: vm,
                    to_server: self.placement.server_of(vm).expect("deployed VM"),
                    reason: MigrationReason::Healing,
                }));
            }
        }

        let mut task_repair: BTreeMap<TaskId, f64> = BTreeMap::new();
        let failed_vms: BTreeMap<VersionKey, VmId> = evict.iter().map(|(_, v, k)| (*k, *v)).collect();
        for (key, cause) in &contention.failed {
            let d = repair.get(key).copied().unwrap_or(self.cfg.mttr_base_min);
            let vm = failed_vms
                .get(key)
                .copied()
                .or_else(|| self.placement.replica_group(key.task).into_iter().find(|(v, _)| *v == key.version).map(|(_, vm)| vm))
                .expect("failed version was placed");
            let server = self.placement.server_of(vm).unwrap_or_else(|| {
                evict.iter().find(|(_, v, _)| *v == vm).map(|(s, _, _)| *s).expect("known server")
            });
            let masked = !contention.unmasked.contains(&key.task);
            self.events.push(SimEvent::Fault(FaultEvent {
                timestamp: t,
                task_id: key.task,
                version: key.version,
                vm_id: vm,
                server_id: server,
                cause: *cause,
                predicted: self.status[&key.task].is_fault_prone(),
                masked,
                repair_duration_min: d,
            }));
            if !masked {
                let r = task_repair.entry(key.task).or_default();
                *r = r.max(d);
            }
        }
        for (task, d) in task_repair {
            self.counters.failures += 1;
            if self.status[&task].is_fault_prone() {
                self.counters.predicted_failures += 1;
            }
            let c = self.workload.client(task).0 as usize;
            let start = (t as f64).max(self.down_until[c]);
            let end = start + d;
            self.downtime[c] += end.min(horizon) - start.min(horizon);
            self.down_until[c] = end;
        }

        self.placement.remove_empty_vms();
        let util = resource_utilization(&self.placement);
        let pw = power_kw(
            util.per_server
                .iter()
                .map(|u| (self.placement.server(u.server).expect("active server"), u.combined())),
        );
        self.counters.power_kw_sum += pw;
        self.counters.ru_sum += util.aggregate;
        self.counters.ticks += 1;
        Ok(())
    }

    pub fn finish(self) -> Result<SimOutcome, SimError> {
        let horizon = self.cfg.horizon_min as f64;
        let downtime: Vec<f64> = self.downtime.iter().map(|d| d.min(horizon)).collect();
        let uptime: Vec<f64> = downtime.iter().map(|d| horizon - d).collect();
        let c = &self.counters;
        let mtbf = compute_mtbf(&uptime, c.failures);
        let mttr = compute_mttr(&downtime, c.failures);
        let av = availability(mtbf.value, mttr.value)?;
        let fpred = if c.failures == 0 {
            100.0
        } else {
            100.0 * c.predicted_failures as f64 / c.failures as f64
        };
        let ov = if c.version_ticks == 0 {
            0.0
        } else {
            100.0 * c.overloaded_version_ticks as f64 / c.version_ticks as f64
        };
        let ticks = c.ticks.max(1) as f64;
        let metrics = SimMetrics {
            mode: self.cfg.mode,
            app_size: self.cfg.app_size,
            horizon_min: self.cfg.horizon_min,
            mtbf_min: mtbf.value,
            mttr_min: mttr.value,
            availability_pct: 100.0 * av,
            fault_pred_accuracy_pct: fpred,
            resource_contention_pct: 100.0 - fpred,
            migrations: c.migrations,
            power_kw: c.power_kw_sum / ticks,
            resource_util_pct: 100.0 * c.ru_sum / ticks,
            overload_pct: ov,
            success_pct: 100.0 - ov,
            num_failures: c.failures,
            no_failures: mtbf.no_failures,
            uptime_min: uptime,
            downtime_min: downtime,
        };
        Ok(SimOutcome {
            config: self.cfg,
            metrics,
            events: self.events,
            forecasts: self.forecasts,
            tdtdb: self.tdtdb,
        })
    }
}

/// Runs one cell on the synthetic workload.
pub fn simulate(cfg: &SimConfig) -> Result<SimOutcome, SimError> {
    cfg.validate()?;
    simulate_workload(cfg, Workload::synthetic(cfg))
}

pub fn simulate_workload(cfg: &SimConfig, workload: Workload) -> Result<SimOutcome, SimError> {
    let mut state = SimState::new(cfg.clone(), workload)?;
    for tick in 0..cfg.ticks() {
        state.step(tick)?;
    }
    state.finish()
}

/// Grid of cells sharing every setting but size, horizon and mode.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub base: SimConfig,
    pub sizes: Vec<usize>,
    pub horizons: Vec<u64>,
    pub modes: Vec<ForecasterMode>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            base: SimConfig::default(),
            sizes: DEFAULT_SIZES.to_vec(),
            horizons: DEFAULT_HORIZONS.to_vec(),
            modes: ForecasterMode::ALL.to_vec(),
        }
    }
}

impl ExperimentConfig {
    pub fn cells(&self) -> Vec<SimConfig> {
        let mut out = Vec::new();
        for mode in &self.modes {
            for size in &self.sizes {
                for horizon in &self.horizons {
                    out.push(SimConfig {
                        mode: *mode,
                        app_size: *size,
                        horizon_min: *horizon,
                        ..self.base.clone()
                    });
                }
            }
        }
        out
    }
}

/// Runs every cell in parallel; results come back in grid order (mode,
/// size, horizon).
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<SimOutcome>, SimError> {
    let cells = config.cells();
    for c in &cells {
        c.validate()?;
    }
    cells
        .par_iter()
        .map(|c| {
            simulate(c).map_err(|e| SimError::Cell {
                size: c.app_size,
                horizon: c.horizon_min,
                mode: c.mode,
                source: Box::new(e),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::catalog_vms;

    fn flat_workload(tasks: usize, history: usize, ticks: usize, cpu: impl Fn(usize, usize) -> f64, scale_pe: f64) -> Workload {
        let ids: Vec<TaskId> = (0..tasks as u64).map(TaskId).collect();
        let rows = ids
            .iter()
            .enumerate()
            .map(|(k, t)| (*t, (0..history + ticks).map(|r| [cpu(k, r), 0.2, 0.1]).collect()))
            .collect();
        let scale = ids.iter().map(|t| (*t, ResourceVector::new(scale_pe, scale_pe * 500.0, 0.5))).collect();
        Workload {
            tasks: ids,
            scale,
            rows,
            history_ticks: history,
        }
    }

    fn none_cfg(ticks: usize) -> SimConfig {
        SimConfig {
            mode: ForecasterMode::None,
            app_size: 1,
            horizon_min: ticks as u64 * 5,
            history_ticks: 4,
            pack_largest: false,
            ..SimConfig::default()
        }
    }

    #[test]
    fn idle_tick_has_no_events() {
        let w = flat_workload(1, 4, 1, |_, _| 0.0, 1.0);
        let out = simulate_workload(&none_cfg(1), w).unwrap();
        assert!(out.events.iter().all(|e| !matches!(e, SimEvent::Fault(_))));
        assert_eq!(out.metrics.uptime_min, vec![5.0]);
        assert_eq!(out.metrics.availability_pct, 100.0);
    }

    #[test]
    fn forced_contention_migrates_once() {
        let w = flat_workload(1, 4, 2, |_, r| if r == 4 { 1.5 } else { 0.5 }, 1.0);
        let out = simulate_workload(&none_cfg(2), w).unwrap();
        let faults: Vec<&FaultEvent> = out
            .events
            .iter()
            .filter_map(|e| match e {
                SimEvent::Fault(f) => Some(f),
                _ => None,
            })
            .collect();
        assert_eq!(faults.len(), 1);
        assert_eq!(faults[0].cause, FaultCause::ResourceContention);
        assert!(!faults[0].masked);
        assert_eq!(out.metrics.migrations, 1);
        assert_eq!(out.metrics.num_failures, 1);
        assert!((out.metrics.mttr_min - 0.21).abs() < 1e-12);
        let total = out.metrics.uptime_min[0] + out.metrics.downtime_min[0];
        assert_eq!(total, 10.0);
    }

    fn replica_scene(hogged: usize) -> Contention {
        let vms = catalog_vms();
        let mut st = PlacementState::new(crate::domain::catalog_servers());
        let mut usage = BTreeMap::new();
        st.set_demand(TaskId(0), ResourceVector::new(0.5, 0.0, 0.2)).unwrap();
        usage.insert(TaskId(0), ResourceVector::new(0.5, 0.0, 0.2));
        for i in 0..3u64 {
            let vm = st.deploy_vm(VmTier::Medium, vms[1].capacity, &BTreeSet::new()).unwrap();
            st.assign(TaskId(0), i as u32, vm).unwrap();
            let hog = TaskId(10 + i);
            st.set_demand(hog, ResourceVector::new(1.0, 0.0, 0.2)).unwrap();
            st.assign(hog, 0, vm).unwrap();
            let real = if (i as usize) < hogged { 1.9 } else { 1.0 };
            usage.insert(hog, ResourceVector::new(real, 0.0, 0.2));
        }
        detect_contention(&st, &usage, &BTreeSet::new())
    }

    #[test]
    fn majority_masking() {
        let one = replica_scene(1);
        assert!(!one.unmasked.contains(&TaskId(0)));
        assert!(one.masked.contains(&TaskId(0)));
        assert!(one.unmasked.contains(&TaskId(10)));
        let two = replica_scene(2);
        assert!(two.unmasked.contains(&TaskId(0)));
        assert!(!two.masked.contains(&TaskId(0)));
    }

    #[test]
    fn none_without_faults_is_fully_available() {
        let cfg = SimConfig {
            mode: ForecasterMode::None,
            contention_faults: false,
            horizon_min: 100,
            ..SimConfig::default()
        };
        let out = simulate(&cfg).unwrap();
        assert_eq!(out.metrics.availability_pct, 100.0);
        assert_eq!(out.metrics.migrations, 0);
        assert_eq!(out.metrics.fault_pred_accuracy_pct + out.metrics.resource_contention_pct, 100.0);
    }

    #[test]
    fn ledgers_cover_the_horizon() {
        let cfg = SimConfig {
            mode: ForecasterMode::None,
            horizon_min: 200,
            burst_prob: 0.2,
            ..SimConfig::default()
        };
        let out = simulate(&cfg).unwrap();
        for (u, d) in out.metrics.uptime_min.iter().zip(&out.metrics.downtime_min) {
            assert_eq!(u + d, 200.0);
        }
        let av = out.metrics.mtbf_min / (out.metrics.mtbf_min + out.metrics.mttr_min);
        assert!((out.metrics.availability_pct / 100.0 - av).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        let bad = SimConfig {
            horizon_min: 52,
            ..SimConfig::default()
        };
        assert!(matches!(simulate(&bad), Err(SimError::InvalidConfig(_))));
        assert_eq!("SimiFed".parse::<ForecasterMode>().unwrap(), ForecasterMode::SimiFed);
        assert!("x".parse::<ForecasterMode>().is_err());
    }

    #[test]
    fn grid_order() {
        let e = ExperimentConfig::default();
        let cells = e.cells();
        assert_eq!(cells.len(), 72);
        assert_eq!(cells[0].mode, ForecasterMode::SimiFed);
        assert_eq!((cells[1].app_size, cells[1].horizon_min), (10, 100));
    }
}
