//! Discrete-event contention oracle.
//!
//! Cores issue cache-line requests against a single finite-bandwidth
//! memory interface and the long-run per-group throughput is compared
//! with the analytic share prediction. Two engines are provided:
//!
//! * [`run_simulation`] — an open-loop engine: every core of group `i`
//!   issues lines at its natural fraction `f_i` of the interface rate,
//!   the interface serves at the mixed saturated bandwidth, and requests
//!   queue without bound (a core that queues more requests gets more
//!   bandwidth). Service is either FCFS or egalitarian processor
//!   sharing.
//! * [`run_sandwich`] — a closed-loop engine for staggered-start
//!   experiments: each core keeps one outstanding request and pads with
//!   think time so that an uncontended core sustains exactly `f·b_s`,
//!   running a predecessor kernel, then a fixed number of subject lines,
//!   then a successor kernel (or idleness), producing per-core duration
//!   samples for skewness analysis.
//!
//! Both engines are deterministic for a fixed seed.

use alloc::collections::{BinaryHeap, VecDeque};
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::analysis::{DurationSample, SandwichScenario};
use crate::sharing::{mixed_saturated_bandwidth, WorkloadGroup};
use crate::ModelError;

/// Default cache-line size in bytes.
pub const DEFAULT_LINE_SIZE: u32 = 64;
/// Fraction of the horizon discarded before measuring steady-state rates.
pub const DEFAULT_WARMUP_FRACTION: f64 = 0.10;

/// Service discipline of the memory interface.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Discipline {
    /// First come, first served: one line in service at a time.
    Fcfs,
    /// Egalitarian processor sharing: all queued lines progress at equal
    /// rates.
    ProcessorSharing,
}

/// Simulation horizon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SimDuration {
    /// Simulated seconds.
    Seconds(f64),
    /// Total number of issued requests; the horizon ends at the last
    /// arrival.
    Requests(u64),
}

/// Configuration of an open-loop contention run.
#[derive(Debug, Clone, Copy)]
pub struct SimConfig<'a> {
    pub groups: &'a [WorkloadGroup<'a>],
    pub machine: &'a crate::catalog::MachineDescription,
    pub duration: SimDuration,
    pub line_size_bytes: u32,
    pub seed: u64,
    pub discipline: Discipline,
    /// Fraction of the horizon discarded as warm-up, in [0, 1).
    pub warmup_fraction: f64,
    /// Relative amplitude of uniform inter-arrival jitter, in [0, 1).
    /// Zero keeps every core strictly periodic.
    pub jitter: f64,
}

impl<'a> SimConfig<'a> {
    /// A configuration with conventional defaults: 100 000 requests,
    /// 64-byte lines, FCFS, 10% warm-up, no jitter, seed 42.
    pub fn new(
        groups: &'a [WorkloadGroup<'a>],
        machine: &'a crate::catalog::MachineDescription,
    ) -> Self {
        SimConfig {
            groups,
            machine,
            duration: SimDuration::Requests(100_000),
            line_size_bytes: DEFAULT_LINE_SIZE,
            seed: 42,
            discipline: Discipline::Fcfs,
            warmup_fraction: DEFAULT_WARMUP_FRACTION,
            jitter: 0.0,
        }
    }
}

/// Queue-depth statistics of one group over the measurement window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueueDepthStats {
    /// Time-weighted mean number of in-flight lines.
    pub mean: f64,
    /// Largest number of in-flight lines observed.
    pub max: u64,
}

/// Result of an open-loop contention run. Rates are steady-state values
/// over the post-warm-up window; the conservation counters cover the full
/// horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    /// Bandwidth obtained by each group, bytes/second.
    pub per_group_bandwidth: Vec<f64>,
    /// Bandwidth obtained by one core of each group, bytes/second.
    pub per_core_bandwidth: Vec<f64>,
    /// Fraction of the measurement window the interface was busy.
    pub interface_utilization: f64,
    /// In-flight line statistics per group.
    pub queue_depth_stats: Vec<QueueDepthStats>,
    /// Lines fully served within the horizon, per group.
    pub lines_completed: Vec<u64>,
    /// Bytes the interface transferred within the horizon.
    pub total_bytes_served: f64,
    /// Partial service of lines still in flight at the horizon, bytes.
    pub work_in_flight_bytes: f64,
    /// The horizon in seconds (equals the configured duration, or the
    /// time of the last arrival for a request budget).
    pub horizon_seconds: f64,
}

/// One event of an optional per-run trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEvent {
    pub time_s: f64,
    pub core: u32,
    pub group: u32,
    pub kind: TraceKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceKind {
    Arrival,
    ServiceStart,
    Completion,
}

impl TraceKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TraceKind::Arrival => "arrival",
            TraceKind::ServiceStart => "service-start",
            TraceKind::Completion => "completion",
        }
    }
}

/// Map a raw 64-bit draw to a uniform f64 in [0, 1).
fn unit_f64(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

fn jitter_factor(rng: &mut Option<ChaCha8Rng>, jitter: f64) -> f64 {
    match rng {
        Some(r) => 1.0 + jitter * (2.0 * unit_f64(r) - 1.0),
        None => 1.0,
    }
}

/// Per-core arrival stream: strictly periodic at `gap` seconds, with an
/// optional uniform jitter factor per inter-arrival.
struct CoreStream {
    group: u32,
    gap: f64,
    next_time: f64,
    rng: Option<ChaCha8Rng>,
}

#[derive(Debug, Clone, Copy)]
struct HeapEntry {
    time: f64,
    core: usize,
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for HeapEntry {}
impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // BinaryHeap is a max-heap; invert to pop the earliest event.
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.core.cmp(&self.core))
    }
}

/// Lazily integrated per-group queue-depth statistics over [w0, w1].
struct DepthTracker {
    depth: Vec<i64>,
    last: Vec<f64>,
    integral: Vec<f64>,
    max: Vec<i64>,
    w0: f64,
    w1: f64,
}

impl DepthTracker {
    fn new(n_groups: usize, w0: f64, w1: f64) -> Self {
        DepthTracker {
            depth: vec![0; n_groups],
            last: vec![0.0; n_groups],
            integral: vec![0.0; n_groups],
            max: vec![0; n_groups],
            w0,
            w1,
        }
    }

    fn apply(&mut self, t: f64, group: usize, delta: i64) {
        let lo = self.last[group].max(self.w0);
        let hi = t.min(self.w1);
        if hi > lo {
            self.integral[group] += self.depth[group] as f64 * (hi - lo);
            if self.depth[group] > self.max[group] {
                self.max[group] = self.depth[group];
            }
        }
        self.last[group] = t;
        self.depth[group] += delta;
    }

    fn finish(mut self) -> Vec<QueueDepthStats> {
        let window = self.w1 - self.w0;
        for g in 0..self.depth.len() {
            let lo = self.last[g].max(self.w0);
            if self.w1 > lo {
                self.integral[g] += self.depth[g] as f64 * (self.w1 - lo);
                if self.depth[g] > self.max[g] {
                    self.max[g] = self.depth[g];
                }
            }
        }
        self.integral
            .iter()
            .zip(&self.max)
            .map(|(i, m)| QueueDepthStats {
                mean: if window > 0.0 { i / window } else { 0.0 },
                max: (*m).max(0) as u64,
            })
            .collect()
    }
}

fn validate_config(config: &SimConfig<'_>) -> Result<(), ModelError> {
    match config.duration {
        SimDuration::Seconds(t) if !(t > 0.0) || !t.is_finite() => {
            return Err(ModelError::InvalidSimConfig(format!(
                "duration must be positive and finite, got {t} s"
            )));
        }
        SimDuration::Requests(0) => {
            return Err(ModelError::InvalidSimConfig(
                "request budget must be at least 1".into(),
            ));
        }
        _ => {}
    }
    if config.line_size_bytes == 0 {
        return Err(ModelError::InvalidSimConfig(
            "line size must be positive".into(),
        ));
    }
    if !(0.0..1.0).contains(&config.warmup_fraction) {
        return Err(ModelError::InvalidSimConfig(format!(
            "warm-up fraction must lie in [0, 1), got {}",
            config.warmup_fraction
        )));
    }
    if !(0.0..1.0).contains(&config.jitter) {
        return Err(ModelError::InvalidSimConfig(format!(
            "jitter must lie in [0, 1), got {}",
            config.jitter
        )));
    }
    Ok(())
}

/// Run the open-loop contention simulation.
pub fn run_simulation(config: &SimConfig<'_>) -> Result<SimResult, ModelError> {
    run_engine(config, None)
}

/// Run the open-loop contention simulation and collect a per-event trace
/// (arrival, service start, completion per line).
pub fn run_simulation_traced(
    config: &SimConfig<'_>,
) -> Result<(SimResult, Vec<TraceEvent>), ModelError> {
    let mut trace = Vec::new();
    let result = run_engine(config, Some(&mut trace))?;
    Ok((result, trace))
}

fn run_engine(
    config: &SimConfig<'_>,
    mut trace: Option<&mut Vec<TraceEvent>>,
) -> Result<SimResult, ModelError> {
    validate_config(config)?;
    let capacity = mixed_saturated_bandwidth(config.groups, config.machine)?;
    if !(capacity > 0.0) {
        return Err(ModelError::InvalidSimConfig(
            "interface capacity is zero".into(),
        ));
    }
    let n_groups = config.groups.len();
    let line = config.line_size_bytes as f64;
    let service_time = line / capacity;

    // Flatten groups into per-core arrival streams.
    let mut streams: Vec<CoreStream> = Vec::new();
    for (gi, g) in config.groups.iter().enumerate() {
        if g.n_threads == 0 {
            continue;
        }
        let pt = g.kernel.point(&config.machine.name).ok_or_else(|| {
            ModelError::MissingMachinePoint {
                kernel: g.kernel.name.clone(),
                machine: config.machine.name.clone(),
            }
        })?;
        let demand = pt.request_fraction * pt.saturated_bandwidth;
        if !(demand > 0.0) {
            return Err(ModelError::InvalidSimConfig(format!(
                "kernel '{}' has zero single-core bandwidth on '{}'",
                g.kernel.name, config.machine.name
            )));
        }
        let gap = line / (pt.request_fraction * capacity);
        for _ in 0..g.n_threads {
            streams.push(CoreStream {
                group: gi as u32,
                gap,
                next_time: 0.0,
                rng: None,
            });
        }
    }
    let n_cores = streams.len();
    for (ci, st) in streams.iter_mut().enumerate() {
        if config.jitter > 0.0 {
            let stream_seed = config
                .seed
                .wrapping_add((ci as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            st.rng = Some(ChaCha8Rng::seed_from_u64(stream_seed));
        }
        // Stagger start offsets to avoid synchronized ties, then the
        // first inter-arrival gap.
        let stagger = ci as f64 * service_time / n_cores as f64;
        let first_gap = st.gap * jitter_factor(&mut st.rng, config.jitter);
        st.next_time = stagger + first_gap;
    }

    // Merge the per-core streams into one chronological arrival list.
    let mut heap: BinaryHeap<HeapEntry> = streams
        .iter()
        .enumerate()
        .map(|(ci, s)| HeapEntry {
            time: s.next_time,
            core: ci,
        })
        .collect();
    let mut arrivals: Vec<(f64, u32, u32)> = Vec::new(); // (time, core, group)
    let horizon = match config.duration {
        SimDuration::Requests(budget) => {
            let mut last = 0.0;
            for _ in 0..budget {
                let entry = heap.pop().expect("streams are never exhausted");
                let s = &mut streams[entry.core];
                arrivals.push((entry.time, entry.core as u32, s.group));
                last = entry.time;
                let gap = s.gap * jitter_factor(&mut s.rng, config.jitter);
                s.next_time = entry.time + gap;
                heap.push(HeapEntry {
                    time: s.next_time,
                    core: entry.core,
                });
            }
            last
        }
        SimDuration::Seconds(t_end) => {
            while let Some(entry) = heap.pop() {
                if entry.time > t_end {
                    continue; // this core is past the horizon
                }
                let s = &mut streams[entry.core];
                arrivals.push((entry.time, entry.core as u32, s.group));
                let gap = s.gap * jitter_factor(&mut s.rng, config.jitter);
                s.next_time = entry.time + gap;
                heap.push(HeapEntry {
                    time: s.next_time,
                    core: entry.core,
                });
            }
            t_end
        }
    };
    if !(horizon > 0.0) {
        return Err(ModelError::InvalidSimConfig(
            "horizon collapsed to zero; increase the duration".into(),
        ));
    }
    if let Some(tr) = trace.as_deref_mut() {
        tr.extend(arrivals.iter().map(|&(t, ci, gi)| TraceEvent {
            time_s: t,
            core: ci,
            group: gi,
            kind: TraceKind::Arrival,
        }));
    }

    let w0 = config.warmup_fraction * horizon;
    let w1 = horizon;
    let window = w1 - w0;

    let mut served_window = vec![0.0f64; n_groups];
    let mut busy_window = 0.0f64;
    let mut total_bytes = 0.0f64;
    let mut lines_completed = vec![0u64; n_groups];
    let mut work_in_flight = 0.0f64;
    let mut tracker = DepthTracker::new(n_groups, w0, w1);

    match config.discipline {
        Discipline::Fcfs => {
            // Completions are in arrival order, so depth events of both
            // kinds arrive pre-sorted and can be merged on the fly.
            let mut completions: VecDeque<(f64, u32)> = VecDeque::new();
            let mut free = 0.0f64;
            for &(t, ci, gi) in &arrivals {
                while let Some(&(ct, cg)) = completions.front() {
                    if ct < t {
                        tracker.apply(ct, cg as usize, -1);
                        completions.pop_front();
                    } else {
                        break;
                    }
                }
                tracker.apply(t, gi as usize, 1);
                let start = free.max(t);
                let fin = start + service_time;
                free = fin;
                completions.push_back((fin, gi));
                if let Some(tr) = trace.as_deref_mut() {
                    tr.push(TraceEvent {
                        time_s: start,
                        core: ci,
                        group: gi,
                        kind: TraceKind::ServiceStart,
                    });
                    tr.push(TraceEvent {
                        time_s: fin,
                        core: ci,
                        group: gi,
                        kind: TraceKind::Completion,
                    });
                }
                let lo = start.max(w0);
                let hi = fin.min(w1);
                if hi > lo {
                    served_window[gi as usize] += (hi - lo) / service_time * line;
                    busy_window += hi - lo;
                }
                total_bytes += (fin.min(w1) - start).max(0.0) / service_time * line;
                if fin <= w1 {
                    lines_completed[gi as usize] += 1;
                } else if start < w1 {
                    work_in_flight += (w1 - start) / service_time * line;
                }
            }
            for &(ct, cg) in &completions {
                if ct > w1 {
                    break;
                }
                tracker.apply(ct, cg as usize, -1);
            }
        }
        Discipline::ProcessorSharing => {
            // Egalitarian sharing with equal line sizes completes lines
            // in arrival order; track the fair-share integral S(t) and
            // complete the head when S reaches its arrival value plus
            // one line.
            let mut queue: VecDeque<(f64, u32, u32)> = VecDeque::new(); // (S at arrival, core, group)
            let mut fair_share = 0.0f64; // bytes of service per continuously-present line
            let mut t = 0.0f64;
            let mut next_arrival = 0usize;
            let mut active = vec![0i64; n_groups];
            loop {
                let t_arr = arrivals
                    .get(next_arrival)
                    .map(|a| a.0)
                    .unwrap_or(f64::INFINITY);
                let n_in = queue.len();
                let t_comp = match queue.front() {
                    Some(&(arr_s, _, _)) => {
                        t + (arr_s + line - fair_share) * n_in as f64 / capacity
                    }
                    None => f64::INFINITY,
                };
                let te = t_arr.min(t_comp);
                if !te.is_finite() {
                    break;
                }
                if n_in > 0 {
                    let hi_full = te.min(w1);
                    if hi_full > t {
                        total_bytes += capacity * (hi_full - t);
                    }
                    let lo = t.max(w0);
                    let hi = te.min(w1);
                    if hi > lo {
                        let dt = hi - lo;
                        busy_window += dt;
                        for g in 0..n_groups {
                            if active[g] > 0 {
                                served_window[g] +=
                                    capacity * dt * active[g] as f64 / n_in as f64;
                            }
                        }
                    }
                }
                if te > w1 {
                    if n_in > 0 {
                        fair_share += (w1 - t) * capacity / n_in as f64;
                    }
                    break;
                }
                if n_in > 0 {
                    fair_share += (te - t) * capacity / n_in as f64;
                }
                t = te;
                if t_comp <= t_arr {
                    let (_, ci, gi) = queue.pop_front().expect("t_comp finite implies a head");
                    lines_completed[gi as usize] += 1;
                    active[gi as usize] -= 1;
                    tracker.apply(t, gi as usize, -1);
                    if let Some(tr) = trace.as_deref_mut() {
                        tr.push(TraceEvent {
                            time_s: t,
                            core: ci,
                            group: gi,
                            kind: TraceKind::Completion,
                        });
                    }
                } else {
                    let (_, ci, gi) = arrivals[next_arrival];
                    next_arrival += 1;
                    queue.push_back((fair_share, ci, gi));
                    active[gi as usize] += 1;
                    tracker.apply(t, gi as usize, 1);
                }
            }
            for &(arr_s, _, _) in &queue {
                work_in_flight += (fair_share - arr_s).clamp(0.0, line);
            }
        }
    }

    let per_group_bandwidth: Vec<f64> = served_window.iter().map(|b| b / window).collect();
    let per_core_bandwidth: Vec<f64> = config
        .groups
        .iter()
        .zip(&per_group_bandwidth)
        .map(|(g, bw)| {
            if g.n_threads > 0 {
                bw / g.n_threads as f64
            } else {
                0.0
            }
        })
        .collect();
    if let Some(tr) = trace.as_deref_mut() {
        tr.sort_by(|a, b| {
            a.time_s
                .total_cmp(&b.time_s)
                .then_with(|| a.core.cmp(&b.core))
        });
    }
    Ok(SimResult {
        per_group_bandwidth,
        per_core_bandwidth,
        interface_utilization: (busy_window / window).min(1.0),
        queue_depth_stats: tracker.finish(),
        lines_completed,
        total_bytes_served: total_bytes,
        work_in_flight_bytes: work_in_flight,
        horizon_seconds: horizon,
    })
}

// ---------------------------------------------------------------------
// Staggered-start (sandwich) engine
// ---------------------------------------------------------------------

/// Configuration of a staggered-start run.
#[derive(Debug, Clone, Copy)]
pub struct SandwichConfig {
    /// Subject lines each core must complete.
    pub lines_per_core: u64,
    /// Stagger span of the scheduled subject starts, as a fraction of the
    /// uncontended subject duration. The last core starts this much later
    /// than the first.
    pub span_fraction: f64,
    pub line_size_bytes: u32,
    pub seed: u64,
    /// Relative amplitude of uniform think-time jitter, in [0, 1).
    pub jitter: f64,
}

impl Default for SandwichConfig {
    fn default() -> Self {
        SandwichConfig {
            lines_per_core: 2000,
            span_fraction: 0.5,
            line_size_bytes: DEFAULT_LINE_SIZE,
            seed: 1,
            jitter: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    /// Running the predecessor kernel before the scheduled subject start.
    Predecessor,
    /// Waiting idle for the scheduled subject start (no predecessor).
    Waiting,
    Subject,
    /// Subject lines finished; running the successor kernel or idle.
    Successor,
}

#[derive(Debug, Clone, Copy)]
enum SandwichKind {
    Begin,
    Issue,
    Served,
}

#[derive(Debug, Clone, Copy)]
struct SandwichEvent {
    time: f64,
    seq: u64,
    kind: SandwichKind,
    core: usize,
    issue_time: f64,
}

impl PartialEq for SandwichEvent {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for SandwichEvent {}
impl PartialOrd for SandwichEvent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for SandwichEvent {
    fn cmp(&self, other: &Self) -> Ordering {
        // Max-heap inversion: earliest time, then lowest sequence number.
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Resolve a kernel's (f, b_s) on a machine; `None` stands for idleness.
fn resolve_phase_kernel(
    kernel: Option<&crate::catalog::KernelDescription>,
    machine: &crate::catalog::MachineDescription,
) -> Result<(f64, f64), ModelError> {
    match kernel {
        None => Ok((0.0, 0.0)),
        Some(k) => {
            let pt = k
                .point(&machine.name)
                .ok_or_else(|| ModelError::MissingMachinePoint {
                    kernel: k.name.clone(),
                    machine: machine.name.clone(),
                })?;
            Ok((pt.request_fraction, pt.saturated_bandwidth))
        }
    }
}

/// Run the staggered-start experiment and return one duration sample per
/// core: the wall time from its scheduled subject start to its last
/// subject line being served.
///
/// Every core keeps one outstanding request; between a line being served
/// and the next issue it "thinks" for `response·(1−f)/f`, which calibrates
/// an uncontended core to exactly `f·b_s`. Cores run the predecessor
/// kernel until their scheduled start, the subject for a fixed number of
/// lines, and the successor (or idleness) afterwards, so stragglers
/// overlap with whatever the finished cores are doing. The interface
/// serves FCFS at the mean saturated bandwidth of the currently non-idle
/// cores.
pub fn run_sandwich(
    scenario: &SandwichScenario<'_>,
    config: &SandwichConfig,
) -> Result<Vec<DurationSample>, ModelError> {
    let machine = scenario.machine;
    let n = machine.cores_per_domain as usize;
    if n < 2 {
        return Err(ModelError::InvalidSimConfig(
            "staggered starts need at least two cores".into(),
        ));
    }
    if config.lines_per_core == 0 {
        return Err(ModelError::InvalidSimConfig(
            "at least one subject line per core is required".into(),
        ));
    }
    if config.line_size_bytes == 0 {
        return Err(ModelError::InvalidSimConfig(
            "line size must be positive".into(),
        ));
    }
    if !(config.span_fraction >= 0.0) || !config.span_fraction.is_finite() {
        return Err(ModelError::InvalidSimConfig(format!(
            "span fraction must be non-negative and finite, got {}",
            config.span_fraction
        )));
    }
    if !(0.0..1.0).contains(&config.jitter) {
        return Err(ModelError::InvalidSimConfig(format!(
            "jitter must lie in [0, 1), got {}",
            config.jitter
        )));
    }

    let (f_subj, bs_subj) = resolve_phase_kernel(Some(scenario.subject), machine)?;
    let (f_pred, bs_pred) = resolve_phase_kernel(scenario.predecessor, machine)?;
    let (f_succ, bs_succ) = resolve_phase_kernel(scenario.successor, machine)?;
    if !(f_subj * bs_subj > 0.0) {
        return Err(ModelError::InvalidSimConfig(format!(
            "subject kernel '{}' has zero single-core bandwidth on '{}'",
            scenario.subject.name, machine.name
        )));
    }

    let line = config.line_size_bytes as f64;
    let lines = config.lines_per_core;
    // Uncontended duration of the whole subject batch at saturation.
    let t_uncontended = lines as f64 * line * n as f64 / bs_subj;
    let starts: Vec<f64> = (0..n)
        .map(|i| i as f64 * config.span_fraction * t_uncontended / (n - 1) as f64)
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut jitter_rng = if config.jitter > 0.0 {
        Some(&mut rng)
    } else {
        None
    };

    let mut phase = vec![Phase::Predecessor; n];
    let mut served = vec![0u64; n];
    let mut finish_time = vec![f64::NAN; n];
    let mut subject_start = vec![f64::NAN; n];
    let mut heap: BinaryHeap<SandwichEvent> = BinaryHeap::new();
    let mut seq: u64 = 0;

    for (i, start) in starts.iter().enumerate() {
        if f_pred > 0.0 {
            heap.push(SandwichEvent {
                time: 0.0,
                seq,
                kind: SandwichKind::Issue,
                core: i,
                issue_time: 0.0,
            });
        } else {
            phase[i] = Phase::Waiting;
            heap.push(SandwichEvent {
                time: *start,
                seq,
                kind: SandwichKind::Begin,
                core: i,
                issue_time: *start,
            });
        }
        seq += 1;
    }

    let phase_params = |ph: Phase| -> (f64, f64) {
        match ph {
            Phase::Predecessor => (f_pred, bs_pred),
            Phase::Subject => (f_subj, bs_subj),
            Phase::Successor => (f_succ, bs_succ),
            Phase::Waiting => (0.0, 0.0),
        }
    };

    let mut server_free = 0.0f64;
    let mut done = 0usize;
    let mut events_processed: u64 = 0;
    // Termination is guaranteed by subject progress; the margin below only
    // guards against degenerate parameterizations.
    let event_budget = 10_000u64
        .saturating_mul(n as u64)
        .saturating_mul(lines)
        .saturating_add(1_000_000);

    while done < n {
        let ev = heap
            .pop()
            .ok_or_else(|| ModelError::InvalidSimConfig("event queue drained early".into()))?;
        events_processed += 1;
        if events_processed > event_budget {
            return Err(ModelError::InvalidSimConfig(
                "event budget exhausted; simulation did not converge".into(),
            ));
        }
        let ci = ev.core;
        match ev.kind {
            SandwichKind::Begin => {
                phase[ci] = Phase::Subject;
                subject_start[ci] = ev.time;
                heap.push(SandwichEvent {
                    time: ev.time,
                    seq,
                    kind: SandwichKind::Issue,
                    core: ci,
                    issue_time: ev.time,
                });
                seq += 1;
            }
            SandwichKind::Issue => {
                if phase[ci] == Phase::Predecessor && ev.time >= starts[ci] {
                    phase[ci] = Phase::Subject;
                    subject_start[ci] = starts[ci];
                }
                let (f, _) = phase_params(phase[ci]);
                if f <= 0.0 {
                    continue;
                }
                // Interface capacity: mean saturated bandwidth over the
                // cores currently running a memory-bound phase.
                let mut num = 0.0;
                let mut cnt = 0u32;
                for j in 0..n {
                    let (_, bs) = phase_params(phase[j]);
                    if bs > 0.0 {
                        num += bs;
                        cnt += 1;
                    }
                }
                let capacity = if cnt > 0 { num / cnt as f64 } else { bs_subj };
                let start_service = ev.time.max(server_free);
                let fin = start_service + line / capacity;
                server_free = fin;
                heap.push(SandwichEvent {
                    time: fin,
                    seq,
                    kind: SandwichKind::Served,
                    core: ci,
                    issue_time: ev.time,
                });
                seq += 1;
            }
            SandwichKind::Served => {
                let response = ev.time - ev.issue_time;
                if phase[ci] == Phase::Subject {
                    served[ci] += 1;
                    if served[ci] >= lines {
                        finish_time[ci] = ev.time;
                        done += 1;
                        phase[ci] = Phase::Successor;
                        if f_succ > 0.0 {
                            let think = if f_succ < 1.0 {
                                response * (1.0 - f_succ) / f_succ
                            } else {
                                0.0
                            };
                            heap.push(SandwichEvent {
                                time: ev.time + think,
                                seq,
                                kind: SandwichKind::Issue,
                                core: ci,
                                issue_time: ev.time + think,
                            });
                            seq += 1;
                        }
                        continue;
                    }
                }
                let (f, _) = phase_params(phase[ci]);
                if f <= 0.0 {
                    continue;
                }
                let jit = match jitter_rng.as_deref_mut() {
                    Some(r) => 1.0 + config.jitter * (2.0 * unit_f64(r) - 1.0),
                    None => 1.0,
                };
                let think = if f < 1.0 {
                    response * (1.0 - f) / f * jit
                } else {
                    0.0
                };
                let mut next = ev.time + think;
                if phase[ci] == Phase::Predecessor && next >= starts[ci] {
                    // The think interval crosses the scheduled subject
                    // start: switch phases and issue the first subject
                    // line exactly on schedule.
                    phase[ci] = Phase::Subject;
                    subject_start[ci] = starts[ci];
                    next = starts[ci];
                }
                heap.push(SandwichEvent {
                    time: next,
                    seq,
                    kind: SandwichKind::Issue,
                    core: ci,
                    issue_time: next,
                });
                seq += 1;
            }
        }
    }

    Ok((0..n)
        .map(|i| DurationSample {
            rank: i as u32,
            start_time: subject_start[i],
            end_time: finish_time[i],
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::Catalog;
    use crate::sharing::{predict_sharing, share_factors};

    fn groups<'a>(cat: &'a Catalog, spec: &[(&str, u32)]) -> Vec<WorkloadGroup<'a>> {
        spec.iter()
            .map(|(name, n)| WorkloadGroup::new(cat.kernel(name).unwrap(), *n))
            .collect()
    }

    #[test]
    fn single_core_sustains_its_demand() {
        let cat = Catalog::builtin();
        for mname in ["BDW-1", "BDW-2", "CLX", "Rome"] {
            let m = cat.machine(mname).unwrap();
            for kname in ["DCOPY", "DDOT2", "STREAM"] {
                let g = groups(&cat, &[(kname, 1)]);
                let mut cfg = SimConfig::new(&g, m);
                cfg.duration = SimDuration::Requests(20_000);
                let r = run_simulation(&cfg).unwrap();
                let pt = cat.kernel(kname).unwrap().point(mname).unwrap();
                let expected = pt.request_fraction * pt.saturated_bandwidth;
                let err = (r.per_core_bandwidth[0] - expected).abs() / expected;
                assert!(err < 0.01, "{kname} on {mname}: err {err}");
            }
        }
    }

    #[test]
    fn identical_groups_split_evenly() {
        let cat = Catalog::builtin();
        let m = cat.machine("BDW-1").unwrap();
        let g = groups(&cat, &[("STREAM", 5), ("STREAM", 5)]);
        for discipline in [Discipline::Fcfs, Discipline::ProcessorSharing] {
            let mut cfg = SimConfig::new(&g, m);
            cfg.duration = SimDuration::Requests(100_000);
            cfg.discipline = discipline;
            let r = run_simulation(&cfg).unwrap();
            let rel = (r.per_group_bandwidth[0] - r.per_group_bandwidth[1]).abs()
                / r.per_group_bandwidth[1];
            assert!(rel < 0.01, "{discipline:?}: {rel}");
        }
    }

    #[test]
    fn mixed_groups_track_share_factors() {
        let cat = Catalog::builtin();
        let m = cat.machine("BDW-1").unwrap();
        let g = groups(&cat, &[("DCOPY", 5), ("DDOT2", 5)]);
        let alphas = share_factors(&g, m).unwrap();
        let analytic = predict_sharing(&g, m).unwrap();
        for discipline in [Discipline::Fcfs, Discipline::ProcessorSharing] {
            let mut cfg = SimConfig::new(&g, m);
            cfg.duration = SimDuration::Requests(200_000);
            cfg.discipline = discipline;
            let r = run_simulation(&cfg).unwrap();
            let total = r.per_group_bandwidth.iter().sum::<f64>();
            let share = r.per_group_bandwidth[0] / total;
            assert!(
                (share - alphas[0]).abs() / alphas[0] < 0.02,
                "{discipline:?}: share {share} vs {}",
                alphas[0]
            );
            for i in 0..2 {
                let rel = (r.per_group_bandwidth[i] - analytic.group_bandwidth[i]).abs()
                    / analytic.group_bandwidth[i];
                assert!(rel < 0.02, "{discipline:?} group {i}: rel {rel}");
            }
        }
    }

    #[test]
    fn jitter_preserves_share_accuracy() {
        let cat = Catalog::builtin();
        let m = cat.machine("BDW-1").unwrap();
        let g = groups(&cat, &[("DCOPY", 5), ("DDOT2", 5)]);
        let analytic = predict_sharing(&g, m).unwrap();
        let mut cfg = SimConfig::new(&g, m);
        cfg.duration = SimDuration::Requests(200_000);
        cfg.jitter = 0.2;
        let r = run_simulation(&cfg).unwrap();
        for i in 0..2 {
            let rel = (r.per_group_bandwidth[i] - analytic.group_bandwidth[i]).abs()
                / analytic.group_bandwidth[i];
            assert!(rel < 0.02, "group {i}: rel {rel}");
        }
    }

    #[test]
    fn fully_backlogged_interface_runs_at_capacity() {
        // Synthetic kernel with f = 1 on every core: the interface must
        // serve at its full capacity.
        let cat = Catalog::builtin();
        let m = cat.machine("BDW-1").unwrap();
        let mut k = cat.kernel("DCOPY").unwrap().clone();
        k.per_machine.get_mut("BDW-1").unwrap().request_fraction = 1.0;
        let g = [WorkloadGroup::new(&k, 10)];
        for discipline in [Discipline::Fcfs, Discipline::ProcessorSharing] {
            let mut cfg = SimConfig::new(&g, m);
            cfg.duration = SimDuration::Requests(100_000);
            cfg.discipline = discipline;
            let r = run_simulation(&cfg).unwrap();
            let capacity = k.point("BDW-1").unwrap().saturated_bandwidth;
            let rel = (r.per_group_bandwidth[0] - capacity).abs() / capacity;
            assert!(rel < 0.005, "{discipline:?}: rel {rel}");
            assert!(r.interface_utilization > 0.995);
        }
    }

    #[test]
    fn doubling_the_budget_is_stationary() {
        let cat = Catalog::builtin();
        let m = cat.machine("CLX").unwrap();
        let g = groups(&cat, &[("STREAM", 10), ("DDOT2", 10)]);
        for discipline in [Discipline::Fcfs, Discipline::ProcessorSharing] {
            let mut cfg = SimConfig::new(&g, m);
            cfg.duration = SimDuration::Requests(100_000);
            cfg.discipline = discipline;
            let r1 = run_simulation(&cfg).unwrap();
            cfg.duration = SimDuration::Requests(200_000);
            let r2 = run_simulation(&cfg).unwrap();
            for i in 0..2 {
                let rel = (r1.per_group_bandwidth[i] - r2.per_group_bandwidth[i]).abs()
                    / r2.per_group_bandwidth[i];
                assert!(rel < 0.005, "{discipline:?} group {i}: rel {rel}");
            }
        }
    }

    #[test]
    fn identical_configs_are_bit_identical() {
        let cat = Catalog::builtin();
        let m = cat.machine("Rome").unwrap();
        let g = groups(&cat, &[("DAXPY", 4), ("DSCAL", 4)]);
        for discipline in [Discipline::Fcfs, Discipline::ProcessorSharing] {
            let mut cfg = SimConfig::new(&g, m);
            cfg.duration = SimDuration::Requests(50_000);
            cfg.discipline = discipline;
            cfg.jitter = 0.2;
            cfg.seed = 1234;
            let r1 = run_simulation(&cfg).unwrap();
            let r2 = run_simulation(&cfg).unwrap();
            assert_eq!(r1, r2);
        }
    }

    #[test]
    fn seed_changes_move_jittered_results() {
        let cat = Catalog::builtin();
        let m = cat.machine("Rome").unwrap();
        let g = groups(&cat, &[("DAXPY", 4), ("DSCAL", 4)]);
        let mut cfg = SimConfig::new(&g, m);
        cfg.duration = SimDuration::Requests(50_000);
        cfg.jitter = 0.2;
        cfg.seed = 1;
        let r1 = run_simulation(&cfg).unwrap();
        cfg.seed = 2;
        let r2 = run_simulation(&cfg).unwrap();
        assert_ne!(r1.per_group_bandwidth, r2.per_group_bandwidth);
    }

    #[test]
    fn byte_accounting_is_conserved() {
        let cat = Catalog::builtin();
        let m = cat.machine("BDW-2").unwrap();
        let g = groups(&cat, &[("DCOPY", 9), ("DDOT2", 9)]);
        for discipline in [Discipline::Fcfs, Discipline::ProcessorSharing] {
            let mut cfg = SimConfig::new(&g, m);
            cfg.duration = SimDuration::Requests(30_000);
            cfg.discipline = discipline;
            cfg.jitter = 0.1;
            let r = run_simulation(&cfg).unwrap();
            let line = cfg.line_size_bytes as f64;
            let completed: u64 = r.lines_completed.iter().sum();
            let accounted = completed as f64 * line + r.work_in_flight_bytes;
            let rel = (r.total_bytes_served - accounted).abs() / accounted;
            assert!(rel < 1e-9, "{discipline:?}: rel {rel}");
            // The windowed rates can never exceed the interface capacity.
            let capacity = mixed_saturated_bandwidth(&g, m).unwrap();
            let total: f64 = r.per_group_bandwidth.iter().sum();
            assert!(total <= capacity * (1.0 + 1e-9), "{discipline:?}");
        }
    }

    #[test]
    fn seconds_duration_matches_request_budget_rates() {
        let cat = Catalog::builtin();
        let m = cat.machine("BDW-1").unwrap();
        let g = groups(&cat, &[("DCOPY", 5), ("DDOT2", 5)]);
        let mut cfg = SimConfig::new(&g, m);
        cfg.duration = SimDuration::Requests(100_000);
        let r1 = run_simulation(&cfg).unwrap();
        cfg.duration = SimDuration::Seconds(r1.horizon_seconds);
        let r2 = run_simulation(&cfg).unwrap();
        for i in 0..2 {
            let rel = (r1.per_group_bandwidth[i] - r2.per_group_bandwidth[i]).abs()
                / r2.per_group_bandwidth[i];
            assert!(rel < 1e-6, "group {i}: rel {rel}");
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let cat = Catalog::builtin();
        let m = cat.machine("BDW-1").unwrap();
        let g = groups(&cat, &[("DCOPY", 5)]);
        let mut cfg = SimConfig::new(&g, m);
        cfg.duration = SimDuration::Requests(0);
        assert!(matches!(
            run_simulation(&cfg),
            Err(ModelError::InvalidSimConfig(_))
        ));
        let mut cfg = SimConfig::new(&g, m);
        cfg.duration = SimDuration::Seconds(0.0);
        assert!(matches!(
            run_simulation(&cfg),
            Err(ModelError::InvalidSimConfig(_))
        ));
        let mut cfg = SimConfig::new(&g, m);
        cfg.warmup_fraction = 1.0;
        assert!(matches!(
            run_simulation(&cfg),
            Err(ModelError::InvalidSimConfig(_))
        ));
        // Oversubscribing the domain is a domain error.
        let g = groups(&cat, &[("DCOPY", 6), ("DDOT2", 6)]);
        let cfg = SimConfig::new(&g, m);
        assert!(matches!(run_simulation(&cfg), Err(ModelError::Domain(_))));
        // A group whose kernel moves no data cannot drive the interface.
        let mut k = cat.kernel("DCOPY").unwrap().clone();
        k.per_machine.get_mut("BDW-1").unwrap().request_fraction = 0.0;
        let g = [WorkloadGroup::new(&k, 5)];
        let cfg = SimConfig::new(&g, m);
        assert!(matches!(
            run_simulation(&cfg),
            Err(ModelError::InvalidSimConfig(_))
        ));
    }

    #[test]
    fn queue_depth_reflects_backlog() {
        let cat = Catalog::builtin();
        let m = cat.machine("BDW-1").unwrap();
        // A single uncontended core never has more than one line in
        // flight.
        let g = groups(&cat, &[("DCOPY", 1)]);
        let mut cfg = SimConfig::new(&g, m);
        cfg.duration = SimDuration::Requests(10_000);
        let r = run_simulation(&cfg).unwrap();
        assert_eq!(r.queue_depth_stats[0].max, 1);
        assert!(r.queue_depth_stats[0].mean < 1.0);
        // A saturated mix keeps a growing backlog: the mean depth exceeds
        // the core count.
        let g = groups(&cat, &[("DCOPY", 5), ("DDOT2", 5)]);
        let mut cfg = SimConfig::new(&g, m);
        cfg.duration = SimDuration::Requests(50_000);
        let r = run_simulation(&cfg).unwrap();
        assert!(r.queue_depth_stats[0].mean > 5.0);
        assert!(r.queue_depth_stats[0].max as f64 >= r.queue_depth_stats[0].mean);
    }

    #[test]
    fn trace_is_chronological_and_consistent() {
        let cat = Catalog::builtin();
        let m = cat.machine("BDW-1").unwrap();
        let g = groups(&cat, &[("DCOPY", 2), ("DDOT2", 2)]);
        let mut cfg = SimConfig::new(&g, m);
        cfg.duration = SimDuration::Requests(500);
        let (r1, trace) = run_simulation_traced(&cfg).unwrap();
        let r2 = run_simulation(&cfg).unwrap();
        assert_eq!(r1, r2);
        assert!(!trace.is_empty());
        for w in trace.windows(2) {
            assert!(w[0].time_s <= w[1].time_s);
        }
        let arrivals = trace
            .iter()
            .filter(|e| e.kind == TraceKind::Arrival)
            .count();
        assert_eq!(arrivals, 500);
    }

    #[test]
    fn sandwich_is_deterministic_and_well_formed() {
        let cat = Catalog::builtin();
        let m = cat.machine("BDW-1").unwrap();
        let ddot2 = cat.kernel("DDOT2").unwrap();
        let daxpy = cat.kernel("DAXPY").unwrap();
        let scenario = SandwichScenario {
            predecessor: Some(ddot2),
            subject: ddot2,
            successor: Some(daxpy),
            machine: m,
        };
        let cfg = SandwichConfig::default();
        let s1 = run_sandwich(&scenario, &cfg).unwrap();
        let s2 = run_sandwich(&scenario, &cfg).unwrap();
        assert_eq!(s1, s2);
        assert_eq!(s1.len(), m.cores_per_domain as usize);
        for (i, s) in s1.iter().enumerate() {
            assert_eq!(s.rank, i as u32);
            assert!(s.end_time > s.start_time);
        }
        // Scheduled starts are staggered in rank order.
        for w in s1.windows(2) {
            assert!(w[1].start_time > w[0].start_time);
        }
    }

    #[test]
    fn sandwich_neutral_scenario_is_nearly_flat() {
        // Identical predecessor, subject, and successor: every core sees
        // the same environment, so durations agree tightly.
        let cat = Catalog::builtin();
        let m = cat.machine("BDW-1").unwrap();
        let ddot2 = cat.kernel("DDOT2").unwrap();
        let scenario = SandwichScenario {
            predecessor: Some(ddot2),
            subject: ddot2,
            successor: Some(ddot2),
            machine: m,
        };
        let mut cfg = SandwichConfig::default();
        cfg.lines_per_core = 10_000; // long enough to drown the start-up transient
        let samples = run_sandwich(&scenario, &cfg).unwrap();
        let durations: Vec<f64> = samples.iter().map(|s| s.end_time - s.start_time).collect();
        let mean = durations.iter().sum::<f64>() / durations.len() as f64;
        for d in &durations {
            assert!((d - mean).abs() / mean < 0.02, "duration {d} vs mean {mean}");
        }
    }

    #[test]
    fn sandwich_rejects_degenerate_setups() {
        let cat = Catalog::builtin();
        let m = cat.machine("BDW-1").unwrap();
        let ddot2 = cat.kernel("DDOT2").unwrap();
        let scenario = SandwichScenario {
            predecessor: None,
            subject: ddot2,
            successor: None,
            machine: m,
        };
        let mut cfg = SandwichConfig::default();
        cfg.lines_per_core = 0;
        assert!(matches!(
            run_sandwich(&scenario, &cfg),
            Err(ModelError::InvalidSimConfig(_))
        ));
        let mut cfg = SandwichConfig::default();
        cfg.span_fraction = -0.5;
        assert!(matches!(
            run_sandwich(&scenario, &cfg),
            Err(ModelError::InvalidSimConfig(_))
        ));
    }
}
