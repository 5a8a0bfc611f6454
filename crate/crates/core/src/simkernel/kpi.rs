//! Reliability, utilization and power formulas.

use serde::{Deserialize, Serialize};

use super::SimError;
use crate::domain::{ServerId, ServerSpec};
use crate::scheduler::PlacementState;

/// A ledger ratio; `no_failures` marks the zero-failure guard.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LedgerRatio {
    pub value: f64,
    pub no_failures: bool,
}

/// Total uptime over failures; total uptime when there were none.
pub fn compute_mtbf(uptimes: &[f64], num_failures: usize) -> LedgerRatio {
    let total: f64 = uptimes.iter().sum();
    if num_failures == 0 {
        LedgerRatio {
            value: total,
            no_failures: true,
        }
    } else {
        LedgerRatio {
            value: total / num_failures as f64,
            no_failures: false,
        }
    }
}

/// Total downtime over failures; zero when there were none.
pub fn compute_mttr(downtimes: &[f64], num_failures: usize) -> LedgerRatio {
    if num_failures == 0 {
        LedgerRatio {
            value: 0.0,
            no_failures: true,
        }
    } else {
        LedgerRatio {
            value: downtimes.iter().sum::<f64>() / num_failures as f64,
            no_failures: false,
        }
    }
}

/// `MTBF / (MTBF + MTTR)` as a fraction.
pub fn availability(mtbf: f64, mttr: f64) -> Result<f64, SimError> {
    if mtbf < 0.0 || mttr < 0.0 || !mtbf.is_finite() || !mttr.is_finite() {
        return Err(SimError::UndefinedAvailability { mtbf, mttr });
    }
    if mtbf + mttr == 0.0 {
        return Err(SimError::UndefinedAvailability { mtbf, mttr });
    }
    Ok(mtbf / (mtbf + mttr))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServerUtilization {
    pub server: ServerId,
    pub cpu: f64,
    pub mem: f64,
}

impl ServerUtilization {
    /// Mean over CPU and memory; the figure the power model consumes.
    pub fn combined(&self) -> f64 {
        (self.cpu + self.mem) / 2.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utilization {
    pub per_server: Vec<ServerUtilization>,
    /// `(Σ RU_cpu + Σ RU_mem) / (2 · active servers)`; 0 with `undefined`
    /// set when no server is active.
    pub aggregate: f64,
    pub undefined: bool,
}

/// Per-server reserved-capacity ratios over the active servers.
pub fn resource_utilization(placement: &PlacementState) -> Utilization {
    let per_server: Vec<ServerUtilization> = placement
        .active_servers()
        .into_iter()
        .map(|id| {
            let spec = placement.server(id).expect("active server exists");
            let load = placement.server_load(id);
            ServerUtilization {
                server: id,
                cpu: load.cpu_pe / spec.capacity.cpu_pe,
                mem: load.mem_gb / spec.capacity.mem_gb,
            }
        })
        .collect();
    utilization_from(per_server)
}

pub fn utilization_from(per_server: Vec<ServerUtilization>) -> Utilization {
    if per_server.is_empty() {
        return Utilization {
            per_server,
            aggregate: 0.0,
            undefined: true,
        };
    }
    let sum: f64 = per_server.iter().map(|u| u.cpu + u.mem).sum();
    let aggregate = sum / (2.0 * per_server.len() as f64);
    Utilization {
        per_server,
        aggregate,
        undefined: false,
    }
}

/// Affine power of one active server, in watts.
pub fn server_power_w(server: &ServerSpec, ru: f64) -> f64 {
    (server.pw_max - server.pw_min_idle) * ru.clamp(0.0, 1.0) + server.pw_min_idle
}

/// Total power in kilowatts of the active servers listed with their RU.
pub fn power_kw<'a>(active: impl IntoIterator<Item = (&'a ServerSpec, f64)>) -> f64 {
    active.into_iter().map(|(s, ru)| server_power_w(s, ru)).sum::<f64>() / 1000.0
}
