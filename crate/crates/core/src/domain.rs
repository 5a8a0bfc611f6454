//! Core value types, the hardware catalogs, and the per-task fault-status
//! classifier.

use std::fmt;
use std::ops::{Add, AddAssign, Sub};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative tolerance used when deciding that a prediction sits exactly on
/// its threshold. Compared on utilization normalized by available capacity.
pub const EQ_TOLERANCE: f64 = 1e-9;

/// Fraction of available capacity used as the fault-proneness threshold when
/// none is configured.
pub const DEFAULT_THRESHOLD_FRACTION: f64 = 0.9;

#[derive(Debug, Error, PartialEq)]
pub enum DomainError {
    #[error("threshold {threshold} is not below available capacity {available} ({dimension})")]
    ThresholdExceedsCapacity {
        dimension: &'static str,
        threshold: f64,
        available: f64,
    },
    #[error("catalog io: {0}")]
    Io(String),
    #[error("catalog format: {0}")]
    Format(String),
    #[error("invalid catalog entry {id}: {reason}")]
    InvalidEntry { id: String, reason: String },
}

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident, $inner:ty, $prefix:literal) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub $inner);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "{}"), self.0)
            }
        }
    };
}

id_type!(
    /// A DT task component.
    TaskId, u64, "a"
);
id_type!(
    /// A collaborating client site; each owns one or more tasks.
    ClientId, u32, "c"
);
id_type!(VmId, u32, "vm");
id_type!(ServerId, u32, "s");
id_type!(AppId, u32, "app");

/// Per-resource quantities. CPU is carried both as processing elements and as
/// MIPS; placement constraints only look at PE and memory.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ResourceVector {
    pub cpu_pe: f64,
    pub cpu_mips: f64,
    pub mem_gb: f64,
}

impl ResourceVector {
    pub const ZERO: ResourceVector = ResourceVector {
        cpu_pe: 0.0,
        cpu_mips: 0.0,
        mem_gb: 0.0,
    };

    pub const fn new(cpu_pe: f64, cpu_mips: f64, mem_gb: f64) -> Self {
        Self {
            cpu_pe,
            cpu_mips,
            mem_gb,
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.cpu_pe, self.cpu_mips, self.mem_gb]
    }

    pub fn is_valid(&self) -> bool {
        self.as_array().iter().all(|v| v.is_finite() && *v >= 0.0)
    }

    /// Component-wise `<=` over every dimension.
    pub fn all_le(&self, other: &ResourceVector) -> bool {
        self.cpu_pe <= other.cpu_pe && self.cpu_mips <= other.cpu_mips && self.mem_gb <= other.mem_gb
    }

    /// `<=` over the dimensions that constrain placement (PE and memory).
    pub fn fits_within(&self, capacity: &ResourceVector) -> bool {
        self.cpu_pe <= capacity.cpu_pe + FIT_SLACK && self.mem_gb <= capacity.mem_gb + FIT_SLACK
    }

    pub fn scale(&self, k: f64) -> ResourceVector {
        ResourceVector::new(self.cpu_pe * k, self.cpu_mips * k, self.mem_gb * k)
    }

    pub fn max(&self, other: &ResourceVector) -> ResourceVector {
        ResourceVector::new(
            self.cpu_pe.max(other.cpu_pe),
            self.cpu_mips.max(other.cpu_mips),
            self.mem_gb.max(other.mem_gb),
        )
    }

    /// Subtraction floored at zero in every dimension.
    pub fn saturating_sub(&self, other: &ResourceVector) -> ResourceVector {
        ResourceVector::new(
            (self.cpu_pe - other.cpu_pe).max(0.0),
            (self.cpu_mips - other.cpu_mips).max(0.0),
            (self.mem_gb - other.mem_gb).max(0.0),
        )
    }
}

/// Absorbs accumulated rounding when summing fractional demands.
const FIT_SLACK: f64 = 1e-9;

impl Add for ResourceVector {
    type Output = ResourceVector;
    fn add(self, rhs: ResourceVector) -> ResourceVector {
        ResourceVector::new(
            self.cpu_pe + rhs.cpu_pe,
            self.cpu_mips + rhs.cpu_mips,
            self.mem_gb + rhs.mem_gb,
        )
    }
}

impl AddAssign for ResourceVector {
    fn add_assign(&mut self, rhs: ResourceVector) {
        *self = *self + rhs;
    }
}

impl Sub for ResourceVector {
    type Output = ResourceVector;
    fn sub(self, rhs: ResourceVector) -> ResourceVector {
        ResourceVector::new(
            self.cpu_pe - rhs.cpu_pe,
            self.cpu_mips - rhs.cpu_mips,
            self.mem_gb - rhs.mem_gb,
        )
    }
}

impl std::iter::Sum for ResourceVector {
    fn sum<I: Iterator<Item = ResourceVector>>(iter: I) -> Self {
        iter.fold(ResourceVector::ZERO, |acc, v| acc + v)
    }
}

/// A physical machine type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerSpec {
    pub id: ServerId,
    pub name: String,
    pub capacity: ResourceVector,
    pub pw_max: f64,
    pub pw_min_idle: f64,
}

impl ServerSpec {
    fn validate(&self) -> Result<(), DomainError> {
        let bad = |reason: &str| DomainError::InvalidEntry {
            id: self.name.clone(),
            reason: reason.to_string(),
        };
        if !(self.capacity.cpu_pe > 0.0 && self.capacity.cpu_mips > 0.0 && self.capacity.mem_gb > 0.0) {
            return Err(bad("capacity must be strictly positive"));
        }
        if !(self.pw_max >= self.pw_min_idle && self.pw_min_idle >= 0.0) {
            return Err(bad("power must satisfy pw_max >= pw_min_idle >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VmTier {
    Small,
    Medium,
    Large,
    XLarge,
}

impl VmTier {
    pub const ALL: [VmTier; 4] = [VmTier::Small, VmTier::Medium, VmTier::Large, VmTier::XLarge];

    pub fn next_up(self) -> Option<VmTier> {
        match self {
            VmTier::Small => Some(VmTier::Medium),
            VmTier::Medium => Some(VmTier::Large),
            VmTier::Large => Some(VmTier::XLarge),
            VmTier::XLarge => None,
        }
    }
}

impl fmt::Display for VmTier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            VmTier::Small => "small",
            VmTier::Medium => "medium",
            VmTier::Large => "large",
            VmTier::XLarge => "xlarge",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VMSpec {
    pub id: VmId,
    pub tier: VmTier,
    pub capacity: ResourceVector,
}

/// Fault-proneness of a task, ordered by severity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FaultStatus {
    LeastFaultProne,
    MildFaultProne,
    HighlyFaultProne,
}

impl FaultStatus {
    pub fn is_fault_prone(self) -> bool {
        self != FaultStatus::LeastFaultProne
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DTTask {
    pub id: TaskId,
    pub app_id: AppId,
    pub client_id: ClientId,
    pub demand: ResourceVector,
    pub demand_threshold: ResourceVector,
    pub status: FaultStatus,
}

impl DTTask {
    /// An efficient (least fault-prone) task with no threshold set yet.
    pub fn new(id: TaskId, client_id: ClientId, demand: ResourceVector) -> Self {
        Self {
            id,
            app_id: AppId(0),
            client_id,
            demand,
            demand_threshold: ResourceVector::ZERO,
            status: FaultStatus::LeastFaultProne,
        }
    }
}

/// Hardware catalog on disk: servers and VM tiers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Catalog {
    pub servers: Vec<ServerSpec>,
    pub vms: Vec<VMSpec>,
}

impl Default for Catalog {
    fn default() -> Self {
        Self {
            servers: catalog_servers(),
            vms: catalog_vms(),
        }
    }
}

impl Catalog {
    pub fn from_json(text: &str) -> Result<Self, DomainError> {
        let catalog: Catalog = serde_json::from_str(text).map_err(|e| DomainError::Format(e.to_string()))?;
        catalog.validate()?;
        Ok(catalog)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("catalog serializes")
    }

    pub fn load(path: &Path) -> Result<Self, DomainError> {
        let text = std::fs::read_to_string(path).map_err(|e| DomainError::Io(e.to_string()))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        for s in &self.servers {
            s.validate()?;
        }
        for v in &self.vms {
            if !(v.capacity.is_valid() && v.capacity.cpu_pe > 0.0 && v.capacity.mem_gb > 0.0) {
                return Err(DomainError::InvalidEntry {
                    id: v.tier.to_string(),
                    reason: "capacity must be strictly positive".into(),
                });
            }
        }
        let mut sorted = self.vms.clone();
        sorted.sort_by_key(|v| v.tier);
        for pair in sorted.windows(2) {
            let (a, b) = (&pair[0].capacity, &pair[1].capacity);
            if !(a.cpu_pe < b.cpu_pe && a.cpu_mips < b.cpu_mips && a.mem_gb < b.mem_gb) {
                return Err(DomainError::InvalidEntry {
                    id: pair[1].tier.to_string(),
                    reason: "tiers must be strictly ordered by capacity".into(),
                });
            }
        }
        Ok(())
    }

    pub fn vm_capacity(&self, tier: VmTier) -> Option<ResourceVector> {
        self.vms.iter().find(|v| v.tier == tier).map(|v| v.capacity)
    }

    /// Smallest tier whose PE and memory accommodate `demand`.
    pub fn smallest_fitting_tier(&self, demand: &ResourceVector) -> Option<VmTier> {
        let mut tiers: Vec<&VMSpec> = self.vms.iter().collect();
        tiers.sort_by_key(|v| v.tier);
        tiers.into_iter().find(|v| demand.fits_within(&v.capacity)).map(|v| v.tier)
    }

    pub fn largest_tier(&self) -> VmTier {
        self.vms.iter().map(|v| v.tier).max().unwrap_or(VmTier::XLarge)
    }
}

/// The three server types of the reference datacenter.
pub fn catalog_servers() -> Vec<ServerSpec> {
    let row = |id: u32, pe: f64, mips: f64, mem: f64, max: f64, idle: f64| ServerSpec {
        id: ServerId(id),
        name: format!("S{id}"),
        capacity: ResourceVector::new(pe, mips, mem),
        pw_max: max,
        pw_min_idle: idle,
    };
    vec![
        row(1, 2.0, 2660.0, 4.0, 135.0, 93.7),
        row(2, 4.0, 3067.0, 8.0, 113.0, 42.3),
        row(3, 12.0, 3067.0, 16.0, 222.0, 58.4),
    ]
}

/// The four VM tiers, smallest first.
pub fn catalog_vms() -> Vec<VMSpec> {
    let row = |id: u32, tier: VmTier, pe: f64, mips: f64, mem: f64| VMSpec {
        id: VmId(id),
        tier,
        capacity: ResourceVector::new(pe, mips, mem),
    };
    vec![
        row(0, VmTier::Small, 1.0, 500.0, 0.5),
        row(1, VmTier::Medium, 2.0, 1000.0, 1.0),
        row(2, VmTier::Large, 3.0, 1500.0, 2.0),
        row(3, VmTier::XLarge, 4.0, 2000.0, 3.0),
    ]
}

/// Status of one resource dimension.
///
/// `predicted > threshold` is highly fault-prone, equality (within
/// [`EQ_TOLERANCE`] after normalizing by `available`) is mild, anything else
/// is least fault-prone. Both fault-prone branches require
/// `threshold < available`.
pub fn classify_dimension(
    predicted: f64,
    threshold: f64,
    available: f64,
) -> Result<FaultStatus, DomainError> {
    classify_named("scalar", predicted, threshold, available)
}

fn classify_named(
    dimension: &'static str,
    predicted: f64,
    threshold: f64,
    available: f64,
) -> Result<FaultStatus, DomainError> {
    if !(threshold < available) {
        return Err(DomainError::ThresholdExceedsCapacity {
            dimension,
            threshold,
            available,
        });
    }
    let scale = available.abs().max(f64::MIN_POSITIVE);
    let (p, t) = (predicted / scale, threshold / scale);
    if (p - t).abs() <= EQ_TOLERANCE {
        Ok(FaultStatus::MildFaultProne)
    } else if p > t {
        Ok(FaultStatus::HighlyFaultProne)
    } else {
        Ok(FaultStatus::LeastFaultProne)
    }
}

/// Classifies a task over its placement-constraining dimensions (PE and
/// memory) and keeps the most severe result.
pub fn classify_status(
    predicted: &ResourceVector,
    threshold: &ResourceVector,
    available: &ResourceVector,
) -> Result<FaultStatus, DomainError> {
    let cpu = classify_named("cpu_pe", predicted.cpu_pe, threshold.cpu_pe, available.cpu_pe)?;
    let mem = classify_named("mem_gb", predicted.mem_gb, threshold.mem_gb, available.mem_gb)?;
    Ok(cpu.max(mem))
}

/// `fraction × available` in every dimension.
pub fn default_threshold(available: &ResourceVector, fraction: f64) -> ResourceVector {
    available.scale(fraction)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn server_catalog_rows() {
        let servers = catalog_servers();
        assert_eq!(servers.len(), 3);
        assert_eq!(servers[0].pw_max, 135.0);
        assert_eq!(servers[0].pw_min_idle, 93.7);
        assert_eq!(servers[1].capacity, ResourceVector::new(4.0, 3067.0, 8.0));
        assert_eq!(servers[1].pw_max, 113.0);
        assert_eq!(servers[1].pw_min_idle, 42.3);
        assert_eq!(servers[2].capacity.mem_gb, 16.0);
        assert_eq!(servers[2].capacity.cpu_pe, 12.0);
        assert_eq!(servers[2].pw_min_idle, 58.4);
    }

    #[test]
    fn vm_catalog_rows_are_monotone() {
        let vms = catalog_vms();
        assert_eq!(vms[0].capacity.cpu_mips, 500.0);
        assert_eq!(vms[3].capacity.mem_gb, 3.0);
        assert_eq!(vms[1].capacity, ResourceVector::new(2.0, 1000.0, 1.0));
        assert_eq!(vms[2].capacity, ResourceVector::new(3.0, 1500.0, 2.0));
        for w in vms.windows(2) {
            assert!(w[0].tier < w[1].tier);
            let (a, b) = (w[0].capacity.as_array(), w[1].capacity.as_array());
            assert!(a.iter().zip(b.iter()).all(|(x, y)| x < y));
        }
        assert!(Catalog::default().validate().is_ok());
    }

    #[test]
    fn catalogs_are_stable() {
        assert_eq!(catalog_servers(), catalog_servers());
        assert_eq!(catalog_vms(), catalog_vms());
    }

    #[test]
    fn catalog_json_round_trip() {
        let c = Catalog::default();
        assert_eq!(Catalog::from_json(&c.to_json()).unwrap(), c);
    }

    #[test]
    fn catalog_rejects_unordered_tiers() {
        let mut c = Catalog::default();
        c.vms[1].capacity.mem_gb = 0.25;
        assert!(matches!(c.validate(), Err(DomainError::InvalidEntry { .. })));
    }

    #[test]
    fn scalar_branches() {
        assert_eq!(classify_dimension(0.9, 0.7, 1.0).unwrap(), FaultStatus::HighlyFaultProne);
        assert_eq!(classify_dimension(0.7, 0.7, 1.0).unwrap(), FaultStatus::MildFaultProne);
        assert_eq!(classify_dimension(0.5, 0.7, 1.0).unwrap(), FaultStatus::LeastFaultProne);
    }

    #[test]
    fn equality_uses_tolerance() {
        assert_eq!(
            classify_dimension(0.7 + 1e-12, 0.7, 1.0).unwrap(),
            FaultStatus::MildFaultProne
        );
        assert_eq!(
            classify_dimension(0.7 + 1e-6, 0.7, 1.0).unwrap(),
            FaultStatus::HighlyFaultProne
        );
    }

    #[test]
    fn threshold_must_be_below_capacity() {
        assert!(matches!(
            classify_dimension(0.5, 1.0, 1.0),
            Err(DomainError::ThresholdExceedsCapacity { .. })
        ));
        let avail = ResourceVector::new(2.0, 1000.0, 1.0);
        let thr = ResourceVector::new(1.8, 900.0, 1.5);
        assert!(classify_status(&ResourceVector::ZERO, &thr, &avail).is_err());
    }

    #[test]
    fn vector_status_is_worst_dimension() {
        let avail = ResourceVector::new(2.0, 1000.0, 1.0);
        let thr = default_threshold(&avail, 0.9);
        let pred = ResourceVector::new(0.5, 2000.0, 0.95);
        assert_eq!(classify_status(&pred, &thr, &avail).unwrap(), FaultStatus::HighlyFaultProne);
        // MIPS does not participate.
        let pred = ResourceVector::new(0.5, 2000.0, 0.5);
        assert_eq!(classify_status(&pred, &thr, &avail).unwrap(), FaultStatus::LeastFaultProne);
    }

    #[test]
    fn smallest_fitting_tier() {
        let c = Catalog::default();
        assert_eq!(c.smallest_fitting_tier(&ResourceVector::new(1.0, 0.0, 0.5)), Some(VmTier::Small));
        assert_eq!(c.smallest_fitting_tier(&ResourceVector::new(1.2, 0.0, 0.5)), Some(VmTier::Medium));
        assert_eq!(c.smallest_fitting_tier(&ResourceVector::new(0.5, 0.0, 2.5)), Some(VmTier::XLarge));
        assert_eq!(c.smallest_fitting_tier(&ResourceVector::new(5.0, 0.0, 0.5)), None);
    }

    proptest! {
        #[test]
        fn classification_is_total(p in 0.0f64..10.0, t in 0.0f64..5.0, extra in 1e-3f64..5.0) {
            prop_assert!(classify_dimension(p, t, t + extra).is_ok());
        }

        #[test]
        fn severity_is_monotone_in_prediction(
            pe in 0.0f64..4.0, mem in 0.0f64..3.0, dpe in 0.0f64..2.0, dmem in 0.0f64..2.0,
        ) {
            let avail = ResourceVector::new(4.0, 2000.0, 3.0);
            let thr = default_threshold(&avail, 0.9);
            let low = ResourceVector::new(pe, 0.0, mem);
            let high = ResourceVector::new(pe + dpe, 0.0, mem + dmem);
            let a = classify_status(&low, &thr, &avail).unwrap();
            let b = classify_status(&high, &thr, &avail).unwrap();
            prop_assert!(a <= b);
        }
    }
}
