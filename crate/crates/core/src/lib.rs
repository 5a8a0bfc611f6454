//! Fault-tolerant digital-twin scheduling: usage traces, federated LSTM
//! forecasting, fault-pattern mining, MVP-aware placement and a discrete-time
//! simulator that reports reliability KPIs.

pub mod domain;
pub mod forecast;
pub mod patterns;
pub mod scheduler;
pub mod simkernel;
pub mod trace;
