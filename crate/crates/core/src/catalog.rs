//! Machine and kernel catalogs.
//!
//! A [`MachineDescription`] captures one memory-bandwidth contention domain
//! (a ccNUMA domain): core count, clock, cache hierarchy, inter-cache data
//! paths, and the overlap policy that governs single-core runtime
//! composition. A [`KernelDescription`] captures one loop kernel: stream
//! counts, per-iteration transfers, code balance, and the measured
//! per-machine pair (memory request fraction `f`, saturated bandwidth
//! `b_s`) the sharing model operates on.
//!
//! [`Catalog::builtin`] ships four reference machines (BDW-1, BDW-2, CLX,
//! Rome) and fifteen kernels; user catalogs can be merged over it by name.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::ModelError;

/// How single-core time contributions compose; see [`crate::ecm`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OverlapPolicy {
    /// Data transfers serialize: runtime is the larger of in-core work and
    /// the sum of all transfer contributions.
    NonOverlapping,
    /// All contributions overlap: runtime is the maximum contribution.
    Overlapping,
}

/// Whether a cache level is per-core or shared across the domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheScope {
    Private,
    Shared,
}

/// Cache fill organization, where known.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheOrganization {
    Inclusive,
    Exclusive,
    /// Exclusive cache filled by evictions from the level above.
    Victim,
}

/// One cache level of a machine.
#[derive(Debug, Clone, PartialEq)]
pub struct CacheLevelSpec {
    pub name: String,
    pub size_bytes: u64,
    pub scope: CacheScope,
    /// `None` when the organization is not part of the machine datasheet.
    pub organization: Option<CacheOrganization>,
}

/// Bytes-per-cycle rating of one inter-cache data path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DataPathBandwidth {
    /// A single bidirectional rating, e.g. 64 B/cy.
    Combined(f64),
    /// Independent simultaneous ratings per direction, e.g. 32+32 B/cy.
    PerDirection { load: f64, store: f64 },
}

impl DataPathBandwidth {
    /// Total bytes per cycle the path can move, both directions combined.
    pub fn total_bytes_per_cycle(&self) -> f64 {
        match *self {
            DataPathBandwidth::Combined(b) => b,
            DataPathBandwidth::PerDirection { load, store } => load + store,
        }
    }
}

/// One memory-bandwidth contention domain.
#[derive(Debug, Clone, PartialEq)]
pub struct MachineDescription {
    pub name: String,
    /// Cores sharing the memory interface of one domain.
    pub cores_per_domain: u32,
    pub base_clock_hz: f64,
    /// Ordered from L1 outward.
    pub cache_levels: Vec<CacheLevelSpec>,
    /// Ratings for each adjacent level pair (L1<->L2, L2<->LLC, ...).
    pub data_path_bandwidths: Vec<DataPathBandwidth>,
    pub overlap_policy: OverlapPolicy,
    /// Theoretical memory bandwidth of the domain, bytes/second.
    pub theoretical_mem_bandwidth: f64,
}

/// Read-only kernels touch memory only through loads; read-write kernels
/// also store (and, with write-back caches, trigger write-allocate traffic).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelClass {
    ReadOnly,
    ReadWrite,
}

/// Cache level at which the kernel's transfer counts are characterized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BottleneckLevel {
    Memory,
    /// Stencil kernels are characterized at the L3 boundary.
    L3,
}

/// Layer-condition status of a stencil sweep at a given cache level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerCondition {
    /// Outer-dimension reuse is served from L2 (fewer active streams).
    L2Fulfilled,
    /// The layer condition holds only at L3 (more active streams).
    L2Violated,
}

/// Extension payload on stencil kernels.
#[derive(Debug, Clone, PartialEq)]
pub struct StencilSpec {
    pub layer_condition: LayerCondition,
    pub active_streams_at_l3: u32,
    /// (outer, inner) grid extent used when the variant was characterized.
    pub grid_shape: (u32, u32),
}

/// Measured operating point of a kernel on one machine.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MachinePoint {
    /// Memory request fraction `f`: fraction of single-core runtime during
    /// which the memory interface is occupied, in (0, 1].
    pub request_fraction: f64,
    /// Saturated bandwidth `b_s` of the kernel run homogeneously on the
    /// full domain, bytes/second.
    pub saturated_bandwidth: f64,
}

/// One loop kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelDescription {
    pub name: String,
    /// Scalar loop body, for listings and documentation.
    pub pseudo_code: String,
    pub read_streams: u32,
    pub write_streams: u32,
    /// Read-for-ownership (write-allocate) streams.
    pub rfo_streams: u32,
    /// Total elements moved per scalar iteration at the bottleneck level.
    pub element_transfers: u32,
    pub bottleneck_level: BottleneckLevel,
    pub element_size_bytes: u32,
    /// Floating-point operations per scalar iteration; 0 when the kernel
    /// does no floating-point work (then the per-flop balance is undefined).
    pub flops_per_iteration: u32,
    /// Published code balance in bytes/flop; `None` when undefined.
    pub code_balance_bytes_per_flop: Option<f64>,
    pub kernel_class: KernelClass,
    pub stencil: Option<StencilSpec>,
    /// Machine name -> measured (f, b_s).
    pub per_machine: BTreeMap<String, MachinePoint>,
}

impl KernelDescription {
    /// Bytes moved per scalar iteration at the bottleneck level.
    pub fn bytes_per_iteration(&self) -> u64 {
        self.element_transfers as u64 * self.element_size_bytes as u64
    }

    /// The measured operating point on `machine`, if present.
    pub fn point(&self, machine: &str) -> Option<MachinePoint> {
        self.per_machine.get(machine).copied()
    }
}

/// Code balance in bytes per floating-point operation, computed from the
/// kernel's transfer counts.
///
/// Fails for kernels with zero flops per iteration (such as a pure copy),
/// whose traffic is better quoted per iteration; see
/// [`KernelDescription::bytes_per_iteration`].
pub fn code_balance(kernel: &KernelDescription) -> Result<f64, ModelError> {
    if kernel.flops_per_iteration == 0 {
        return Err(ModelError::UndefinedCodeBalance(kernel.name.clone()));
    }
    Ok(kernel.bytes_per_iteration() as f64 / kernel.flops_per_iteration as f64)
}

/// A validated set of machines and kernels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Catalog {
    pub machines: Vec<MachineDescription>,
    pub kernels: Vec<KernelDescription>,
}

impl Catalog {
    /// Look up a machine by name.
    pub fn machine(&self, name: &str) -> Result<&MachineDescription, ModelError> {
        self.machines
            .iter()
            .find(|m| m.name == name)
            .ok_or_else(|| ModelError::UnknownMachine(name.to_string()))
    }

    /// Look up a kernel by name.
    pub fn kernel(&self, name: &str) -> Result<&KernelDescription, ModelError> {
        self.kernels
            .iter()
            .find(|k| k.name == name)
            .ok_or_else(|| ModelError::UnknownKernel(name.to_string()))
    }

    /// Sorted names of all kernels, for error messages and listings.
    pub fn kernel_names(&self) -> Vec<&str> {
        self.kernels.iter().map(|k| k.name.as_str()).collect()
    }

    /// Merge `other` over `self`: entries with matching names replace the
    /// existing ones, new names are appended. Validate afterwards.
    pub fn merge(&mut self, other: Catalog) {
        for m in other.machines {
            match self.machines.iter_mut().find(|x| x.name == m.name) {
                Some(slot) => *slot = m,
                None => self.machines.push(m),
            }
        }
        for k in other.kernels {
            match self.kernels.iter_mut().find(|x| x.name == k.name) {
                Some(slot) => *slot = k,
                None => self.kernels.push(k),
            }
        }
    }

    /// Check every catalog invariant; the error names the offending field.
    pub fn validate(&self) -> Result<(), ModelError> {
        for m in &self.machines {
            if m.cores_per_domain < 1 {
                return Err(ModelError::InvalidCatalog(format!(
                    "machine '{}': cores_per_domain must be >= 1",
                    m.name
                )));
            }
            if !(m.base_clock_hz > 0.0) {
                return Err(ModelError::InvalidCatalog(format!(
                    "machine '{}': base_clock_hz must be positive",
                    m.name
                )));
            }
            if !(m.theoretical_mem_bandwidth > 0.0) {
                return Err(ModelError::InvalidCatalog(format!(
                    "machine '{}': theoretical_mem_bandwidth must be positive",
                    m.name
                )));
            }
            for c in &m.cache_levels {
                if c.size_bytes == 0 {
                    return Err(ModelError::InvalidCatalog(format!(
                        "machine '{}': cache '{}' size must be positive",
                        m.name, c.name
                    )));
                }
            }
            for (i, p) in m.data_path_bandwidths.iter().enumerate() {
                let ok = match *p {
                    DataPathBandwidth::Combined(b) => b > 0.0,
                    DataPathBandwidth::PerDirection { load, store } => {
                        load > 0.0 && store > 0.0
                    }
                };
                if !ok {
                    return Err(ModelError::InvalidCatalog(format!(
                        "machine '{}': data path {} must have positive bandwidth",
                        m.name, i
                    )));
                }
            }
        }
        for k in &self.kernels {
            if k.element_transfers == 0 {
                return Err(ModelError::InvalidCatalog(format!(
                    "kernel '{}': element_transfers must be positive",
                    k.name
                )));
            }
            if k.element_size_bytes == 0 {
                return Err(ModelError::InvalidCatalog(format!(
                    "kernel '{}': element_size_bytes must be positive",
                    k.name
                )));
            }
            let streams = k.read_streams + k.write_streams + k.rfo_streams;
            if streams != k.element_transfers {
                return Err(ModelError::InvalidCatalog(format!(
                    "kernel '{}': element_transfers {} != read+write+rfo streams {}",
                    k.name, k.element_transfers, streams
                )));
            }
            let read_only = k.write_streams == 0 && k.rfo_streams == 0;
            let declared_read_only = k.kernel_class == KernelClass::ReadOnly;
            if read_only != declared_read_only {
                return Err(ModelError::InvalidCatalog(format!(
                    "kernel '{}': kernel_class inconsistent with stream counts",
                    k.name
                )));
            }
            if let Some(bc) = k.code_balance_bytes_per_flop {
                if !(bc > 0.0) {
                    return Err(ModelError::InvalidCatalog(format!(
                        "kernel '{}': code_balance must be positive",
                        k.name
                    )));
                }
            }
            for (mname, pt) in &k.per_machine {
                self.machine(mname).map_err(|_| {
                    ModelError::InvalidCatalog(format!(
                        "kernel '{}': references undeclared machine '{}'",
                        k.name, mname
                    ))
                })?;
                if !(pt.request_fraction > 0.0 && pt.request_fraction <= 1.0) {
                    return Err(ModelError::InvalidCatalog(format!(
                        "kernel '{}' on '{}': f must be in (0, 1]",
                        k.name, mname
                    )));
                }
                if !(pt.saturated_bandwidth > 0.0) {
                    return Err(ModelError::InvalidCatalog(format!(
                        "kernel '{}' on '{}': b_s must be positive",
                        k.name, mname
                    )));
                }
            }
        }
        Ok(())
    }

    /// The built-in catalog: four reference machines and fifteen kernels.
    pub fn builtin() -> Catalog {
        Catalog {
            machines: builtin_machines(),
            kernels: builtin_kernels(),
        }
    }
}

const GIGA: f64 = 1e9;
const KIB: u64 = 1024;
const MIB: u64 = 1024 * 1024;

fn cache(name: &str, size_bytes: u64, scope: CacheScope, org: Option<CacheOrganization>) -> CacheLevelSpec {
    CacheLevelSpec {
        name: name.to_string(),
        size_bytes,
        scope,
        organization: org,
    }
}

fn builtin_machines() -> Vec<MachineDescription> {
    use CacheOrganization::{Inclusive, Victim};
    use CacheScope::{Private, Shared};
    vec![
        MachineDescription {
            name: "BDW-1".to_string(),
            cores_per_domain: 10,
            base_clock_hz: 2.2 * GIGA,
            cache_levels: vec![
                cache("L1", 32 * KIB, Private, None),
                cache("L2", 256 * KIB, Private, None),
                cache("LLC", 25 * MIB, Shared, Some(Inclusive)),
            ],
            data_path_bandwidths: vec![
                DataPathBandwidth::Combined(64.0),
                DataPathBandwidth::Combined(32.0),
            ],
            overlap_policy: OverlapPolicy::NonOverlapping,
            theoretical_mem_bandwidth: 68.3 * GIGA,
        },
        MachineDescription {
            name: "BDW-2".to_string(),
            cores_per_domain: 18,
            base_clock_hz: 2.3 * GIGA,
            cache_levels: vec![
                cache("L1", 32 * KIB, Private, None),
                cache("L2", 256 * KIB, Private, None),
                cache("LLC", 45 * MIB, Shared, Some(Inclusive)),
            ],
            data_path_bandwidths: vec![
                DataPathBandwidth::Combined(64.0),
                DataPathBandwidth::Combined(32.0),
            ],
            overlap_policy: OverlapPolicy::NonOverlapping,
            theoretical_mem_bandwidth: 76.8 * GIGA,
        },
        MachineDescription {
            name: "CLX".to_string(),
            cores_per_domain: 20,
            base_clock_hz: 2.5 * GIGA,
            cache_levels: vec![
                cache("L1", 32 * KIB, Private, None),
                cache("L2", 1048 * KIB, Private, None),
                // 27.5 MiB shared victim LLC.
                cache("LLC", 28160 * KIB, Shared, Some(Victim)),
            ],
            data_path_bandwidths: vec![
                DataPathBandwidth::Combined(64.0),
                DataPathBandwidth::PerDirection {
                    load: 16.0,
                    store: 16.0,
                },
            ],
            overlap_policy: OverlapPolicy::NonOverlapping,
            theoretical_mem_bandwidth: 140.8 * GIGA,
        },
        MachineDescription {
            name: "Rome".to_string(),
            cores_per_domain: 8,
            base_clock_hz: 2.35 * GIGA,
            cache_levels: vec![
                cache("L1", 32 * KIB, Private, None),
                cache("L2", 512 * KIB, Private, None),
                cache("LLC", 8 * MIB, Shared, Some(Victim)),
            ],
            data_path_bandwidths: vec![
                DataPathBandwidth::PerDirection {
                    load: 32.0,
                    store: 32.0,
                },
                DataPathBandwidth::Combined(32.0),
            ],
            overlap_policy: OverlapPolicy::Overlapping,
            theoretical_mem_bandwidth: 170.6 * GIGA,
        },
    ]
}

/// Per-machine rows in builtin order: BDW-1, BDW-2, CLX, Rome.
#[allow(clippy::too_many_arguments)]
fn kernel(
    name: &str,
    pseudo_code: &str,
    streams: (u32, u32, u32),
    flops: u32,
    balance: Option<f64>,
    bottleneck: BottleneckLevel,
    stencil: Option<StencilSpec>,
    points: [(f64, f64); 4],
) -> KernelDescription {
    let (read, write, rfo) = streams;
    let mut per_machine = BTreeMap::new();
    for (machine, (f, bs_gbs)) in ["BDW-1", "BDW-2", "CLX", "Rome"].iter().zip(points) {
        per_machine.insert(
            machine.to_string(),
            MachinePoint {
                request_fraction: f,
                saturated_bandwidth: bs_gbs * GIGA,
            },
        );
    }
    let class = if write == 0 && rfo == 0 {
        KernelClass::ReadOnly
    } else {
        KernelClass::ReadWrite
    };
    KernelDescription {
        name: name.to_string(),
        pseudo_code: pseudo_code.to_string(),
        read_streams: read,
        write_streams: write,
        rfo_streams: rfo,
        element_transfers: read + write + rfo,
        bottleneck_level: bottleneck,
        element_size_bytes: 8,
        flops_per_iteration: flops,
        code_balance_bytes_per_flop: balance,
        kernel_class: class,
        stencil,
        per_machine,
    }
}

const JACOBI_V1_BODY: &str =
    "b[j][i] = (a[j][i-1] + a[j][i+1] + a[j-1][i] + a[j+1][i]) * s";
const JACOBI_V2_BODY: &str = "r1 = (ax*(A[j][i-1] + A[j][i+1]) + ay*(A[j-1][i] + A[j+1][i]) \
     + b1*A[j][i] - F[j][i]) / b1; B[j][i] = A[j][i] - relax*r1; residual += r1*r1";

fn stencil(lc: LayerCondition, streams_l3: u32, grid: (u32, u32)) -> Option<StencilSpec> {
    Some(StencilSpec {
        layer_condition: lc,
        active_streams_at_l3: streams_l3,
        grid_shape: grid,
    })
}

fn builtin_kernels() -> Vec<KernelDescription> {
    use BottleneckLevel::{Memory, L3};
    use LayerCondition::{L2Fulfilled, L2Violated};
    let lc2_grid = (20000, 4000);
    let lc3_grid = (5000, 25000);
    vec![
        kernel(
            "vectorSUM", "s += a[i]", (1, 0, 0), 1, Some(8.0), Memory, None,
            [(0.241, 59.0), (0.178, 66.9), (0.125, 111.1), (0.590, 34.7)],
        ),
        kernel(
            "DDOT1", "s += a[i]*a[i]", (1, 0, 0), 2, Some(4.0), Memory, None,
            [(0.242, 59.0), (0.179, 66.7), (0.126, 110.5), (0.571, 34.7)],
        ),
        kernel(
            "DDOT2", "s += a[i]*b[i]", (2, 0, 0), 2, Some(8.0), Memory, None,
            [(0.252, 56.5), (0.181, 65.8), (0.142, 108.7), (0.665, 33.6)],
        ),
        kernel(
            "DDOT3", "s += a[i]*b[i]*c[i]", (3, 0, 0), 3, Some(8.0), Memory, None,
            [(0.255, 56.8), (0.181, 65.5), (0.166, 100.9), (0.721, 33.1)],
        ),
        kernel(
            "DSCAL", "a[i] = s * a[i]", (1, 1, 0), 1, Some(16.0), Memory, None,
            [(0.374, 49.6), (0.301, 54.1), (0.211, 101.1), (0.857, 34.9)],
        ),
        kernel(
            "DAXPY", "a[i] = a[i] + s * b[i]", (2, 1, 0), 2, Some(12.0), Memory, None,
            [(0.315, 53.2), (0.239, 60.8), (0.204, 102.5), (0.960, 32.6)],
        ),
        kernel(
            "ADD", "a[i] = b[i] + c[i]", (2, 1, 1), 1, Some(32.0), Memory, None,
            [(0.309, 53.1), (0.228, 62.2), (0.199, 102.0), (0.831, 32.2)],
        ),
        kernel(
            "STREAM", "a[i] = b[i] + s * c[i]", (2, 1, 1), 2, Some(16.0), Memory, None,
            [(0.309, 53.2), (0.228, 62.2), (0.199, 102.4), (0.838, 32.2)],
        ),
        kernel(
            "WAXPBY", "a[i] = r * b[i] + s * c[i]", (2, 1, 1), 3, Some(10.67), Memory, None,
            [(0.309, 53.2), (0.228, 62.2), (0.199, 102.4), (0.842, 32.2)],
        ),
        // Pure copy: no floating-point work, so the per-flop balance is
        // undefined; traffic is 24 bytes per iteration.
        kernel(
            "DCOPY", "a[i] = b[i]", (1, 1, 1), 0, None, Memory, None,
            [(0.320, 53.5), (0.242, 60.9), (0.190, 104.2), (0.803, 32.5)],
        ),
        kernel(
            "Schoenauer", "a[i] = b[i] + c[i] * d[i]", (3, 1, 1), 2, Some(20.0), Memory, None,
            [(0.299, 53.1), (0.223, 60.5), (0.185, 101.7), (0.859, 31.7)],
        ),
        kernel(
            "Jacobi-v1/LC_L2", JACOBI_V1_BODY, (1, 1, 1), 4, Some(6.0), L3,
            stencil(L2Fulfilled, 3, lc2_grid),
            [(0.252, 53.6), (0.195, 60.9), (0.157, 104.1), (0.749, 32.8)],
        ),
        kernel(
            "Jacobi-v1/LC_L3", JACOBI_V1_BODY, (3, 1, 1), 4, Some(10.0), L3,
            stencil(L2Violated, 5, lc3_grid),
            [(0.141, 53.2), (0.104, 60.5), (0.100, 103.2), (0.542, 32.6)],
        ),
        kernel(
            "Jacobi-v2/LC_L2", JACOBI_V2_BODY, (2, 1, 1), 13, Some(2.46), L3,
            stencil(L2Fulfilled, 4, lc2_grid),
            [(0.247, 53.5), (0.188, 62.3), (0.167, 102.9), (0.804, 33.2)],
        ),
        kernel(
            "Jacobi-v2/LC_L3", JACOBI_V2_BODY, (4, 1, 1), 13, Some(3.69), L3,
            stencil(L2Violated, 6, lc3_grid),
            [(0.142, 52.9), (0.105, 60.8), (0.088, 103.2), (0.458, 32.1)],
        ),
    ]
}
