//! Task→VM and VM→server placement with MVP replication.
//!
//! A task runs as one or more *versions*; version 0 is the primary. Each
//! version reserves the task's demand on one VM, and each VM reserves its
//! tier capacity on one server. [`PlacementState::validate`] checks both
//! capacity sums; every mutating method keeps them or refuses.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Catalog, DTTask, ResourceVector, ServerId, ServerSpec, TaskId, VMSpec, VmId, VmTier};
use crate::patterns::{PatternKnowledge, SequencePattern};

pub const DEFAULT_TARGET_FAILURE: f64 = 0.05;

const SLACK: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchedulerError {
    #[error("no server can host VM {vm} ({pe} PE, {mem} GB)")]
    InsufficientCapacity { vm: VmId, pe: f64, mem: f64 },
    #[error("task {task} fits no VM tier")]
    TaskTooLarge { task: TaskId },
    #[error("version count must be odd, got {0}")]
    EvenVersionCount(usize),
    #[error("expected {expected} failure estimates, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("capacity violated on {what}: {detail}")]
    CapacityViolation { what: String, detail: String },
    #[error("unknown {0}")]
    Unknown(String),
    #[error("task {task} already has a version on VM {vm}")]
    SameVm { task: TaskId, vm: VmId },
}

fn fits(demand: &ResourceVector, free: &ResourceVector) -> bool {
    demand.cpu_pe <= free.cpu_pe + SLACK && demand.mem_gb <= free.mem_gb + SLACK
}

/// Descending PE, then descending memory, then ascending id.
fn ffd_order(tasks: &[DTTask]) -> Vec<&DTTask> {
    let mut v: Vec<&DTTask> = tasks.iter().collect();
    v.sort_by(|a, b| {
        b.demand
            .cpu_pe
            .total_cmp(&a.demand.cpu_pe)
            .then(b.demand.mem_gb.total_cmp(&a.demand.mem_gb))
            .then(a.id.cmp(&b.id))
    });
    v
}

/// A VM offered to the packer with its current free capacity.
#[derive(Debug, Clone, PartialEq)]
pub struct VmSlot {
    pub vm: VmId,
    pub server: ServerId,
    pub free: ResourceVector,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlacementDelta {
    pub assigned: Vec<(TaskId, VmId)>,
    pub unplaced: Vec<TaskId>,
}

/// First-fit decreasing of `tasks` into `slots` (in slot order).
pub fn ffd_assign(tasks: &[DTTask], slots: &[VmSlot]) -> PlacementDelta {
    pattern_guided_place(tasks, slots, &BTreeMap::new(), &PatternKnowledge::default())
}

/// True when placing `task` beside `itemset` would complete some element of
/// `pattern` that contains `task`.
pub fn completes_element(pattern: &SequencePattern, itemset: &BTreeSet<TaskId>, task: TaskId) -> bool {
    pattern
        .elements
        .iter()
        .any(|e| e.contains(&task) && e.iter().all(|x| *x == task || itemset.contains(x)))
}

/// Candidate rank: 0 when an `Sf` pattern would be completed, 2 for `Nf`
/// (which wins over `Sf`), 1 otherwise.
pub fn pattern_rank(knowledge: &PatternKnowledge, itemset: &BTreeSet<TaskId>, task: TaskId) -> u8 {
    if knowledge.nf.iter().any(|p| completes_element(p, itemset, task)) {
        2
    } else if knowledge.sf.iter().any(|p| completes_element(p, itemset, task)) {
        0
    } else {
        1
    }
}

/// FFD where each task's first-fit order over `slots` is stably reordered by
/// [`pattern_rank`] of the co-residency itemset on the slot's server.
pub fn pattern_guided_place(
    tasks: &[DTTask],
    slots: &[VmSlot],
    co_resident: &BTreeMap<ServerId, BTreeSet<TaskId>>,
    knowledge: &PatternKnowledge,
) -> PlacementDelta {
    let mut free: Vec<ResourceVector> = slots.iter().map(|s| s.free).collect();
    let mut residents = co_resident.clone();
    let mut delta = PlacementDelta::default();
    for task in ffd_order(tasks) {
        let mut order: Vec<usize> = (0..slots.len()).collect();
        if !knowledge.is_empty() {
            let empty = BTreeSet::new();
            order.sort_by_key(|&i| pattern_rank(knowledge, residents.get(&slots[i].server).unwrap_or(&empty), task.id));
        }
        match order.into_iter().find(|&i| fits(&task.demand, &free[i])) {
            Some(i) => {
                free[i] = free[i].saturating_sub(&task.demand);
                residents.entry(slots[i].server).or_default().insert(task.id);
                delta.assigned.push((task.id, slots[i].vm));
            }
            None => delta.unplaced.push(task.id),
        }
    }
    delta
}

/// FFD of VMs (by capacity) onto servers, opening servers in list order only
/// when no open one fits.
pub fn place_vms(vms: &[VMSpec], servers: &[ServerSpec]) -> Result<BTreeMap<VmId, ServerId>, SchedulerError> {
    let mut order: Vec<&VMSpec> = vms.iter().collect();
    order.sort_by(|a, b| {
        b.capacity
            .cpu_pe
            .total_cmp(&a.capacity.cpu_pe)
            .then(b.capacity.mem_gb.total_cmp(&a.capacity.mem_gb))
            .then(a.id.cmp(&b.id))
    });
    let mut free: Vec<ResourceVector> = servers.iter().map(|s| s.capacity).collect();
    let mut active = vec![false; servers.len()];
    let mut out = BTreeMap::new();
    for vm in order {
        let pick = (0..servers.len())
            .find(|&i| active[i] && fits(&vm.capacity, &free[i]))
            .or_else(|| (0..servers.len()).find(|&i| !active[i] && fits(&vm.capacity, &free[i])));
        let Some(i) = pick else {
            return Err(SchedulerError::InsufficientCapacity {
                vm: vm.id,
                pe: vm.capacity.cpu_pe,
                mem: vm.capacity.mem_gb,
            });
        };
        active[i] = true;
        free[i] = free[i].saturating_sub(&vm.capacity);
        out.insert(vm.id, servers[i].id);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum MvpMode {
    /// `Σ_{i=(num+1)/2}^{num} f(i)`.
    #[default]
    Literal,
    /// Probability that at least `(num+1)/2` independent versions fail.
    Binomial,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MvpFailure {
    pub value: f64,
    /// The literal sum exceeded 1 and was clamped.
    pub clamped: bool,
}

pub fn mvp_failure(f: &[f64], num: usize) -> Result<MvpFailure, SchedulerError> {
    mvp_failure_with(MvpMode::Literal, f, num)
}

pub fn mvp_failure_with(mode: MvpMode, f: &[f64], num: usize) -> Result<MvpFailure, SchedulerError> {
    if num.is_multiple_of(2) {
        return Err(SchedulerError::EvenVersionCount(num));
    }
    if f.len() != num {
        return Err(SchedulerError::LengthMismatch {
            expected: num,
            got: f.len(),
        });
    }
    let majority = num.div_ceil(2);
    match mode {
        MvpMode::Literal => {
            let raw: f64 = f[majority - 1..].iter().sum();
            Ok(MvpFailure {
                value: raw.clamp(0.0, 1.0),
                clamped: raw > 1.0,
            })
        }
        MvpMode::Binomial => {
            // dist[k] = P(exactly k failed) over the versions seen so far.
            let mut dist = vec![0.0; num + 1];
            dist[0] = 1.0;
            for (seen, &p) in f.iter().enumerate() {
                for k in (0..=seen + 1).rev() {
                    let stay = dist[k] * (1.0 - p);
                    let up = if k > 0 { dist[k - 1] * p } else { 0.0 };
                    dist[k] = stay + up;
                }
            }
            Ok(MvpFailure {
                value: dist[majority..].iter().sum::<f64>().clamp(0.0, 1.0),
                clamped: false,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicaConfig {
    pub target_failure: f64,
    pub mode: MvpMode,
}

impl Default for ReplicaConfig {
    fn default() -> Self {
        Self {
            target_failure: DEFAULT_TARGET_FAILURE,
            mode: MvpMode::Literal,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicaPlan {
    pub task_id: TaskId,
    pub num: usize,
    pub f: Vec<f64>,
    pub mvp_failure: f64,
    pub clamped: bool,
    /// The target was not reached within the budget; the plan is best effort.
    pub budget_exhausted: bool,
}

fn padded(f_estimates: &[f64], num: usize) -> Vec<f64> {
    let last = f_estimates.last().copied().unwrap_or(0.0);
    (0..num)
        .map(|i| f_estimates.get(i).copied().unwrap_or(last).clamp(0.0, 1.0))
        .collect()
}

/// Smallest odd `num ≥ 3` (at most `budget`) whose MVP failure meets the
/// target. When none does, the lowest-failure count wins and the plan is
/// flagged. Efficient tasks get one version.
pub fn plan_replicas(task: &DTTask, budget: usize, f_estimates: &[f64], config: &ReplicaConfig) -> ReplicaPlan {
    let evaluate = |num: usize| {
        let f = padded(f_estimates, num);
        let m = mvp_failure_with(config.mode, &f, num).expect("odd count, matching length");
        (f, m)
    };
    if !task.status.is_fault_prone() || budget < 3 {
        let (f, m) = evaluate(1);
        return ReplicaPlan {
            task_id: task.id,
            num: 1,
            f,
            mvp_failure: m.value,
            clamped: m.clamped,
            budget_exhausted: task.status.is_fault_prone(),
        };
    }
    let mut best: Option<(usize, Vec<f64>, MvpFailure)> = None;
    for num in (3..=budget).step_by(2) {
        let (f, m) = evaluate(num);
        if m.value <= config.target_failure {
            return ReplicaPlan {
                task_id: task.id,
                num,
                f,
                mvp_failure: m.value,
                clamped: m.clamped,
                budget_exhausted: false,
            };
        }
        if best.as_ref().is_none_or(|(_, _, b)| m.value < b.value) {
            best = Some((num, f, m));
        }
    }
    let (num, f, m) = best.expect("budget ≥ 3 yields one candidate");
    ReplicaPlan {
        task_id: task.id,
        num,
        f,
        mvp_failure: m.value,
        clamped: m.clamped,
        budget_exhausted: true,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VersionKey {
    pub task: TaskId,
    pub version: u32,
}

/// How a VM is sized when a version finds no room.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpawnTier {
    Largest,
    SmallestFitting,
}

#[derive(Debug, Clone)]
pub struct PlaceRequest {
    pub task: TaskId,
    pub demand: ResourceVector,
    /// Capacity a candidate must have free; `demand` plus headroom.
    pub fit: ResourceVector,
    pub versions: usize,
    pub min_tier: VmTier,
    pub spawn: SpawnTier,
    /// VMs that must not be chosen, e.g. the one a version is fleeing.
    pub exclude_vms: BTreeSet<VmId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementDump {
    /// (task, version, vm) triples: the nonzero entries of Υ.
    pub upsilon: Vec<(TaskId, u32, VmId)>,
    /// (vm, server) pairs: the nonzero entries of ω.
    pub omega: Vec<(VmId, ServerId)>,
    pub replica_groups: BTreeMap<TaskId, Vec<VmId>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlacementState {
    servers: BTreeMap<ServerId, ServerSpec>,
    server_order: Vec<ServerId>,
    vms: BTreeMap<VmId, VMSpec>,
    vm_to_server: BTreeMap<VmId, ServerId>,
    residents: BTreeMap<VmId, BTreeSet<VersionKey>>,
    versions: BTreeMap<TaskId, BTreeMap<u32, VmId>>,
    demands: BTreeMap<TaskId, ResourceVector>,
    next_vm: u32,
    elastic: Option<ServerSpec>,
}

impl PlacementState {
    /// `servers` are opened in list order.
    pub fn new(servers: Vec<ServerSpec>) -> Self {
        let server_order = servers.iter().map(|s| s.id).collect();
        Self {
            servers: servers.into_iter().map(|s| (s.id, s)).collect(),
            server_order,
            vms: BTreeMap::new(),
            vm_to_server: BTreeMap::new(),
            residents: BTreeMap::new(),
            versions: BTreeMap::new(),
            demands: BTreeMap::new(),
            next_vm: 0,
            elastic: None,
        }
    }

    /// When set, a copy of `template` with a fresh id is added whenever no
    /// server can take a new VM.
    pub fn with_elastic(mut self, template: ServerSpec) -> Self {
        self.elastic = Some(template);
        self
    }

    pub fn servers(&self) -> impl Iterator<Item = &ServerSpec> {
        self.server_order.iter().map(|id| &self.servers[id])
    }

    pub fn server(&self, id: ServerId) -> Option<&ServerSpec> {
        self.servers.get(&id)
    }

    pub fn vms(&self) -> impl Iterator<Item = &VMSpec> {
        self.vms.values()
    }

    pub fn vm(&self, id: VmId) -> Option<&VMSpec> {
        self.vms.get(&id)
    }

    pub fn server_of(&self, vm: VmId) -> Option<ServerId> {
        self.vm_to_server.get(&vm).copied()
    }

    pub fn residents(&self, vm: VmId) -> impl Iterator<Item = VersionKey> + '_ {
        self.residents.get(&vm).into_iter().flatten().copied()
    }

    pub fn vms_on(&self, server: ServerId) -> impl Iterator<Item = VmId> + '_ {
        self.vm_to_server.iter().filter(move |(_, s)| **s == server).map(|(v, _)| *v)
    }

    pub fn is_active(&self, server: ServerId) -> bool {
        self.vm_to_server.values().any(|s| *s == server)
    }

    pub fn active_servers(&self) -> Vec<ServerId> {
        let set: BTreeSet<ServerId> = self.vm_to_server.values().copied().collect();
        self.server_order.iter().copied().filter(|s| set.contains(s)).collect()
    }

    pub fn tasks(&self) -> impl Iterator<Item = TaskId> + '_ {
        self.demands.keys().copied()
    }

    pub fn demand(&self, task: TaskId) -> Option<ResourceVector> {
        self.demands.get(&task).copied()
    }

    /// Primary VM (Υ for version 0).
    pub fn task_to_vm(&self, task: TaskId) -> Option<VmId> {
        self.versions.get(&task).and_then(|v| v.get(&0)).copied()
    }

    /// VMs of every placed version, by version number.
    pub fn replica_group(&self, task: TaskId) -> Vec<(u32, VmId)> {
        self.versions
            .get(&task)
            .map(|m| m.iter().map(|(v, vm)| (*v, *vm)).collect())
            .unwrap_or_default()
    }

    pub fn version_count(&self, task: TaskId) -> usize {
        self.versions.get(&task).map_or(0, |m| m.len())
    }

    pub fn vm_load(&self, vm: VmId) -> ResourceVector {
        self.residents(vm).map(|k| self.demands[&k.task]).sum()
    }

    pub fn vm_free(&self, vm: VmId) -> ResourceVector {
        match self.vms.get(&vm) {
            Some(spec) => spec.capacity.saturating_sub(&self.vm_load(vm)),
            None => ResourceVector::ZERO,
        }
    }

    pub fn server_load(&self, server: ServerId) -> ResourceVector {
        self.vms_on(server).map(|v| self.vms[&v].capacity).sum()
    }

    pub fn server_free(&self, server: ServerId) -> ResourceVector {
        match self.servers.get(&server) {
            Some(spec) => spec.capacity.saturating_sub(&self.server_load(server)),
            None => ResourceVector::ZERO,
        }
    }

    /// Tasks with a version on `server`.
    pub fn tasks_on_server(&self, server: ServerId) -> BTreeSet<TaskId> {
        self.vms_on(server).flat_map(|v| self.residents(v).map(|k| k.task)).collect()
    }

    pub fn co_residency(&self) -> BTreeMap<ServerId, BTreeSet<TaskId>> {
        let mut out: BTreeMap<ServerId, BTreeSet<TaskId>> = BTreeMap::new();
        for (vm, keys) in &self.residents {
            let s = self.vm_to_server[vm];
            out.entry(s).or_default().extend(keys.iter().map(|k| k.task));
        }
        out
    }

    /// Checks every VM and server capacity sum and the bookkeeping links.
    pub fn validate(&self) -> Result<(), SchedulerError> {
        for (vm, spec) in &self.vms {
            let Some(server) = self.vm_to_server.get(vm) else {
                return Err(SchedulerError::CapacityViolation {
                    what: format!("VM {vm}"),
                    detail: "not hosted on a server".into(),
                });
            };
            if !self.servers.contains_key(server) {
                return Err(SchedulerError::Unknown(format!("server {server}")));
            }
            let load = self.vm_load(*vm);
            if !fits(&load, &spec.capacity) {
                return Err(SchedulerError::CapacityViolation {
                    what: format!("VM {vm}"),
                    detail: format!("load {load:?} > capacity {:?}", spec.capacity),
                });
            }
        }
        for (id, spec) in &self.servers {
            let load = self.server_load(*id);
            if !fits(&load, &spec.capacity) {
                return Err(SchedulerError::CapacityViolation {
                    what: format!("server {id}"),
                    detail: format!("load {load:?} > capacity {:?}", spec.capacity),
                });
            }
        }
        for (task, vers) in &self.versions {
            let mut seen = BTreeSet::new();
            for (v, vm) in vers {
                let key = VersionKey { task: *task, version: *v };
                if !self.residents.get(vm).is_some_and(|r| r.contains(&key)) || !seen.insert(*vm) {
                    return Err(SchedulerError::CapacityViolation {
                        what: format!("task {task}"),
                        detail: format!("version {v} bookkeeping broken"),
                    });
                }
            }
        }
        let resident_count: usize = self.residents.values().map(|r| r.len()).sum();
        let version_count: usize = self.versions.values().map(|v| v.len()).sum();
        if resident_count != version_count {
            return Err(SchedulerError::CapacityViolation {
                what: "placement".into(),
                detail: "residents and versions disagree".into(),
            });
        }
        Ok(())
    }

    fn pick_server(&mut self, capacity: &ResourceVector, avoid: &BTreeSet<ServerId>) -> Option<ServerId> {
        let active: BTreeSet<ServerId> = self.vm_to_server.values().copied().collect();
        let ok = |s: &ServerId, this: &Self| fits(capacity, &this.server_free(*s));
        let passes: [(bool, bool); 4] = [(true, true), (false, true), (true, false), (false, false)];
        for (want_active, respect_avoid) in passes {
            let hit = self.server_order.iter().copied().find(|s| {
                active.contains(s) == want_active && !(respect_avoid && avoid.contains(s)) && ok(s, self)
            });
            if hit.is_some() {
                return hit;
            }
        }
        let template = self.elastic.clone()?;
        if !fits(capacity, &template.capacity) {
            return None;
        }
        let id = ServerId(self.servers.keys().map(|s| s.0).max().map_or(1, |m| m + 1));
        self.servers.insert(id, ServerSpec { id, ..template });
        self.server_order.push(id);
        Some(id)
    }

    /// Deploys a VM of `capacity`, preferring open servers outside `avoid`.
    pub fn deploy_vm(&mut self, tier: VmTier, capacity: ResourceVector, avoid: &BTreeSet<ServerId>) -> Result<VmId, SchedulerError> {
        let id = VmId(self.next_vm);
        let server = self.pick_server(&capacity, avoid).ok_or(SchedulerError::InsufficientCapacity {
            vm: id,
            pe: capacity.cpu_pe,
            mem: capacity.mem_gb,
        })?;
        self.next_vm += 1;
        self.vms.insert(id, VMSpec { id, tier, capacity });
        self.vm_to_server.insert(id, server);
        self.residents.insert(id, BTreeSet::new());
        Ok(id)
    }

    pub fn remove_vm(&mut self, vm: VmId) -> Result<(), SchedulerError> {
        if self.residents.get(&vm).is_some_and(|r| !r.is_empty()) {
            return Err(SchedulerError::CapacityViolation {
                what: format!("VM {vm}"),
                detail: "still hosts versions".into(),
            });
        }
        self.vms.remove(&vm).ok_or_else(|| SchedulerError::Unknown(format!("VM {vm}")))?;
        self.vm_to_server.remove(&vm);
        self.residents.remove(&vm);
        Ok(())
    }

    /// Removes every VM without residents; returns how many.
    pub fn remove_empty_vms(&mut self) -> usize {
        let empty: Vec<VmId> = self.residents.iter().filter(|(_, r)| r.is_empty()).map(|(v, _)| *v).collect();
        for v in &empty {
            self.remove_vm(*v).expect("empty VM");
        }
        empty.len()
    }

    /// Sets a task's reserved demand; refused if any of its VMs would overflow.
    pub fn set_demand(&mut self, task: TaskId, demand: ResourceVector) -> Result<(), SchedulerError> {
        let old = self.demands.get(&task).copied().unwrap_or(ResourceVector::ZERO);
        for (_, vm) in self.replica_group(task) {
            let after = self.vm_load(vm).saturating_sub(&old) + demand;
            if !fits(&after, &self.vms[&vm].capacity) {
                return Err(SchedulerError::CapacityViolation {
                    what: format!("VM {vm}"),
                    detail: format!("demand update for {task}"),
                });
            }
        }
        self.demands.insert(task, demand);
        Ok(())
    }

    /// Places `version` of `task` on `vm`. The task's demand must be set.
    pub fn assign(&mut self, task: TaskId, version: u32, vm: VmId) -> Result<(), SchedulerError> {
        let demand = self
            .demands
            .get(&task)
            .copied()
            .ok_or_else(|| SchedulerError::Unknown(format!("task {task}")))?;
        if !self.vms.contains_key(&vm) {
            return Err(SchedulerError::Unknown(format!("VM {vm}")));
        }
        let vers = self.versions.get(&task);
        if vers.is_some_and(|m| m.contains_key(&version)) {
            return Err(SchedulerError::CapacityViolation {
                what: format!("task {task}"),
                detail: format!("version {version} already placed"),
            });
        }
        if vers.is_some_and(|m| m.values().any(|v| *v == vm)) {
            return Err(SchedulerError::SameVm { task, vm });
        }
        if !fits(&demand, &self.vm_free(vm)) {
            return Err(SchedulerError::CapacityViolation {
                what: format!("VM {vm}"),
                detail: format!("no room for {task}"),
            });
        }
        self.residents.entry(vm).or_default().insert(VersionKey { task, version });
        self.versions.entry(task).or_default().insert(version, vm);
        Ok(())
    }

    pub fn unassign(&mut self, task: TaskId, version: u32) -> Option<VmId> {
        let vm = self.versions.get_mut(&task)?.remove(&version)?;
        if let Some(r) = self.residents.get_mut(&vm) {
            r.remove(&VersionKey { task, version });
        }
        Some(vm)
    }

    /// Removes every version of `task` but keeps its demand.
    pub fn unassign_all(&mut self, task: TaskId) -> Vec<(u32, VmId)> {
        let group = self.replica_group(task);
        for (v, _) in &group {
            self.unassign(task, *v);
        }
        self.versions.remove(&task);
        group
    }

    pub fn remove_task(&mut self, task: TaskId) {
        self.unassign_all(task);
        self.demands.remove(&task);
    }

    /// Moves one version to `to`; on failure the version stays put.
    pub fn migrate(&mut self, task: TaskId, version: u32, to: VmId) -> Result<VmId, SchedulerError> {
        let from = self
            .versions
            .get(&task)
            .and_then(|m| m.get(&version))
            .copied()
            .ok_or_else(|| SchedulerError::Unknown(format!("{task} version {version}")))?;
        self.unassign(task, version);
        match self.assign(task, version, to) {
            Ok(()) => Ok(from),
            Err(e) => {
                self.assign(task, version, from).expect("restoring previous slot");
                Err(e)
            }
        }
    }

    /// Candidate VMs for one version in first-fit order: servers without
    /// another version of the task first, then by pattern rank, then VM id.
    fn candidates(&self, req: &PlaceRequest, knowledge: &PatternKnowledge) -> Vec<VmId> {
        let group = self.replica_group(req.task);
        let used_vms: BTreeSet<VmId> = group.iter().map(|(_, v)| *v).collect();
        let used_servers: BTreeSet<ServerId> = used_vms.iter().map(|v| self.vm_to_server[v]).collect();
        let co = if knowledge.is_empty() { BTreeMap::new() } else { self.co_residency() };
        let empty = BTreeSet::new();
        let mut c: Vec<(bool, u8, VmId)> = self
            .vms
            .values()
            .filter(|spec| {
                spec.tier >= req.min_tier
                    && !used_vms.contains(&spec.id)
                    && !req.exclude_vms.contains(&spec.id)
                    && fits(&req.fit, &self.vm_free(spec.id))
            })
            .map(|spec| {
                let s = self.vm_to_server[&spec.id];
                let rank = if knowledge.is_empty() {
                    1
                } else {
                    pattern_rank(knowledge, co.get(&s).unwrap_or(&empty), req.task)
                };
                (used_servers.contains(&s), rank, spec.id)
            })
            .collect();
        c.sort();
        c.into_iter().map(|(_, _, v)| v).collect()
    }

    /// Places versions until the task has `req.versions`, spawning VMs from
    /// `catalog` when nothing fits. Returns the VMs chosen, by new version.
    pub fn place_versions(&mut self, catalog: &Catalog, knowledge: &PatternKnowledge, req: &PlaceRequest) -> Result<Vec<(u32, VmId)>, SchedulerError> {
        self.set_demand(req.task, req.demand)?;
        let mut placed = Vec::new();
        while self.version_count(req.task) < req.versions {
            let version = (0u32..).find(|v| !self.versions.get(&req.task).is_some_and(|m| m.contains_key(v))).unwrap();
            let vm = match self.candidates(req, knowledge).first() {
                Some(vm) => *vm,
                None => {
                    let need = if fits(&req.fit, &catalog.vm_capacity(catalog.largest_tier()).unwrap_or(ResourceVector::ZERO)) {
                        req.fit
                    } else {
                        req.demand
                    };
                    let tier = match req.spawn {
                        SpawnTier::Largest => catalog.largest_tier(),
                        SpawnTier::SmallestFitting => catalog
                            .smallest_fitting_tier(&need)
                            .ok_or(SchedulerError::TaskTooLarge { task: req.task })?,
                    }
                    .max(req.min_tier);
                    let capacity = catalog.vm_capacity(tier).ok_or(SchedulerError::TaskTooLarge { task: req.task })?;
                    if !fits(&req.demand, &capacity) {
                        return Err(SchedulerError::TaskTooLarge { task: req.task });
                    }
                    let avoid: BTreeSet<ServerId> = self.replica_group(req.task).iter().map(|(_, v)| self.vm_to_server[v]).collect();
                    self.deploy_vm(tier, capacity, &avoid)?
                }
            };
            self.assign(req.task, version, vm)?;
            placed.push((version, vm));
        }
        Ok(placed)
    }

    pub fn dump(&self) -> PlacementDump {
        let mut upsilon = Vec::new();
        for (task, vers) in &self.versions {
            for (v, vm) in vers {
                upsilon.push((*task, *v, *vm));
            }
        }
        PlacementDump {
            upsilon,
            omega: self.vm_to_server.iter().map(|(v, s)| (*v, *s)).collect(),
            replica_groups: self
                .versions
                .iter()
                .map(|(t, m)| (*t, m.values().copied().collect()))
                .collect(),
        }
    }

    pub fn dump_json(&self) -> String {
        serde_json::to_string(&self.dump()).expect("placement serializes")
    }
}
