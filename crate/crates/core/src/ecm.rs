//! Single-core runtime composition, the memory request fraction, and the
//! simplified multicore scaling recursion.
//!
//! An [`EcmProfile`] decomposes the single-core runtime of one unit of work
//! into in-core execution (`t_overlap`), load/store retirement (`t_l1reg`),
//! one contribution per inter-cache data path (`t_cache_transfers`), and
//! the memory-interface transfer time (`t_mem`). How these compose into the
//! total runtime depends on the machine's [`OverlapPolicy`].
//!
//! The memory request fraction `f` — the fraction of single-core runtime
//! during which the memory interface is occupied — is the key kernel
//! property consumed by [`crate::sharing`]. It can be derived from a
//! profile ([`request_fraction_from_ecm`]) or from a measured single-core
//! bandwidth ([`request_fraction_from_measurement`]).

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::catalog::OverlapPolicy;
use crate::ModelError;

/// What one profile covers, e.g. "16 scalar iterations / 1 cache line per
/// stream".
#[derive(Debug, Clone, PartialEq)]
pub struct WorkUnit {
    pub description: String,
    pub iterations: u32,
}

/// Cycle contributions of one unit of work on a single core.
#[derive(Debug, Clone, PartialEq)]
pub struct EcmProfile {
    /// In-core execution time of everything that is not a load or store.
    pub t_overlap: f64,
    /// Load/store retirement time in the core.
    pub t_l1reg: f64,
    /// One contribution per inter-cache data path, L1-side first.
    pub t_cache_transfers: Vec<f64>,
    /// Transfer time over the memory interface.
    pub t_mem: f64,
    pub work_unit: WorkUnit,
}

impl EcmProfile {
    fn check(&self) -> Result<(), ModelError> {
        let all = self
            .t_cache_transfers
            .iter()
            .chain([&self.t_overlap, &self.t_l1reg, &self.t_mem]);
        for &t in all {
            if !(t >= 0.0) || !t.is_finite() {
                return Err(ModelError::Domain(format!(
                    "ECM contributions must be finite and non-negative, got {t}"
                )));
            }
        }
        Ok(())
    }
}

/// A profile with no explicit cycle breakdown, normalized so the composed
/// runtime is exactly 1 under either policy and the request fraction equals
/// the supplied `f`. This makes measurement-characterized kernels (known
/// only by `f` and `b_s`) first-class citizens of [`scaling_curve`].
pub fn degenerate_profile(f: f64) -> Result<EcmProfile, ModelError> {
    if !(f > 0.0 && f <= 1.0) {
        return Err(ModelError::Domain(format!(
            "request fraction must be in (0, 1], got {f}"
        )));
    }
    Ok(EcmProfile {
        t_overlap: 1.0,
        t_l1reg: 0.0,
        t_cache_transfers: Vec::new(),
        t_mem: f,
        work_unit: WorkUnit {
            description: String::from("normalized unit of work (composed runtime = 1)"),
            iterations: 1,
        },
    })
}

/// Composed single-core runtime of one unit of work, in cycles.
///
/// Under [`OverlapPolicy::NonOverlapping`] all data transfers serialize
/// behind each other and behind load/store retirement, overlapping only
/// with in-core work; under [`OverlapPolicy::Overlapping`] the runtime is
/// the largest single contribution.
pub fn compose_ecm(profile: &EcmProfile, policy: OverlapPolicy) -> f64 {
    let transfer_sum: f64 = profile.t_cache_transfers.iter().sum();
    match policy {
        OverlapPolicy::NonOverlapping => {
            let transfers = profile.t_mem + transfer_sum + profile.t_l1reg;
            profile.t_overlap.max(transfers)
        }
        OverlapPolicy::Overlapping => {
            let mut t = profile.t_overlap.max(profile.t_l1reg).max(profile.t_mem);
            for &ti in &profile.t_cache_transfers {
                t = t.max(ti);
            }
            t
        }
    }
}

/// Memory request fraction from a cycle profile: the share of the composed
/// runtime during which the memory interface is busy.
pub fn request_fraction_from_ecm(
    profile: &EcmProfile,
    policy: OverlapPolicy,
) -> Result<f64, ModelError> {
    profile.check()?;
    if profile.t_mem == 0.0 {
        return Err(ModelError::NotMemoryBound(profile.work_unit.description.clone()));
    }
    Ok(profile.t_mem / compose_ecm(profile, policy))
}

/// Tolerated overshoot of a measured single-core bandwidth over `b_s`
/// before the pair is rejected as inconsistent.
pub const MEASUREMENT_TOLERANCE: f64 = 0.02;

/// Memory request fraction from a measured single-core bandwidth:
/// `f = b_meas / b_s`.
///
/// Measurement noise may push `b_meas` slightly above `b_s`; overshoot up
/// to [`MEASUREMENT_TOLERANCE`] clamps to 1, larger overshoot is an error.
pub fn request_fraction_from_measurement(b_meas: f64, b_s: f64) -> Result<f64, ModelError> {
    if !(b_meas > 0.0) || !(b_s > 0.0) {
        return Err(ModelError::Domain(format!(
            "bandwidths must be positive, got b_meas={b_meas}, b_s={b_s}"
        )));
    }
    if b_meas > (1.0 + MEASUREMENT_TOLERANCE) * b_s {
        return Err(ModelError::MeasurementInconsistency { b_meas, b_s });
    }
    Ok((b_meas / b_s).min(1.0))
}

/// Default threshold on `1 - u(n)` below which the interface counts as
/// saturated; see [`ScalingCurve::saturation_point`].
pub const SATURATION_EPSILON: f64 = 0.01;

/// Multicore scaling prediction for one kernel, indexed by core count
/// `n = 1..=n_max` (index 0 holds `n = 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingCurve {
    /// Bandwidth per core at n cores, bytes/second.
    pub per_core_bandwidth: Vec<f64>,
    /// Memory-interface utilization u(n), in (0, 1].
    pub utilization: Vec<f64>,
    /// Smallest n with `u(n) >= 1 - epsilon`, if reached within `n_max`.
    pub saturation_point: Option<u32>,
}

impl ScalingCurve {
    /// Aggregate bandwidth at `n` cores (1-based), bytes/second.
    pub fn aggregate_bandwidth(&self, n: u32) -> f64 {
        self.per_core_bandwidth[(n - 1) as usize] * n as f64
    }
}

/// Scaling curve with the default [`SATURATION_EPSILON`].
pub fn scaling_curve(
    profile: &EcmProfile,
    policy: OverlapPolicy,
    n_max: u32,
    saturated_bandwidth: f64,
) -> Result<ScalingCurve, ModelError> {
    scaling_curve_with_epsilon(profile, policy, n_max, saturated_bandwidth, SATURATION_EPSILON)
}

/// Multicore scaling via the simplified latency-penalty recursion.
///
/// With `T(1)` the composed single-core runtime and `p0 = t_mem / 2`, the
/// runtime at `n` cores inflates to `T(n) = T(1) + p0 * u(n-1) * (n-1)`,
/// where `u(n) = min(1, n * t_mem / T(n))` is the interface utilization at
/// `n` cores and `u(1) = f`. Each step uses the penalized runtime of the
/// previous step. Aggregate bandwidth follows as
/// `min(b_s, n * f * b_s * T(1)/T(n))`, which equals `u(n) * b_s`: it grows
/// linearly while the interface is idle and pins at `b_s` once saturated.
pub fn scaling_curve_with_epsilon(
    profile: &EcmProfile,
    policy: OverlapPolicy,
    n_max: u32,
    saturated_bandwidth: f64,
    epsilon: f64,
) -> Result<ScalingCurve, ModelError> {
    profile.check()?;
    if profile.t_mem == 0.0 {
        return Err(ModelError::NotMemoryBound(profile.work_unit.description.clone()));
    }
    if n_max < 1 {
        return Err(ModelError::Domain(String::from("n_max must be >= 1")));
    }
    if !(saturated_bandwidth > 0.0) {
        return Err(ModelError::Domain(String::from("b_s must be positive")));
    }
    let t1 = compose_ecm(profile, policy);
    let p0 = profile.t_mem / 2.0;
    let f = profile.t_mem / t1;
    let mut utilization = Vec::with_capacity(n_max as usize);
    let mut per_core = Vec::with_capacity(n_max as usize);
    let mut u_prev = f;
    utilization.push(u_prev);
    per_core.push(f * saturated_bandwidth);
    for n in 2..=n_max {
        let t_n = t1 + p0 * u_prev * (n - 1) as f64;
        let u_n = (n as f64 * profile.t_mem / t_n).min(1.0);
        let aggregate = (n as f64 * f * saturated_bandwidth * t1 / t_n).min(saturated_bandwidth);
        utilization.push(u_n);
        per_core.push(aggregate / n as f64);
        u_prev = u_n;
    }
    let saturation_point = utilization
        .iter()
        .position(|&u| u >= 1.0 - epsilon)
        .map(|i| i as u32 + 1);
    Ok(ScalingCurve {
        per_core_bandwidth: per_core,
        utilization,
        saturation_point,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn profile(t_overlap: f64, t_l1reg: f64, transfers: Vec<f64>, t_mem: f64) -> EcmProfile {
        EcmProfile {
            t_overlap,
            t_l1reg,
            t_cache_transfers: transfers,
            t_mem,
            work_unit: WorkUnit {
                description: String::from("test unit"),
                iterations: 16,
            },
        }
    }

    #[test]
    fn compose_examples() {
        let p = profile(10.0, 4.0, vec![6.0, 8.0], 20.0);
        assert_eq!(compose_ecm(&p, OverlapPolicy::NonOverlapping), 38.0);
        assert_eq!(compose_ecm(&p, OverlapPolicy::Overlapping), 20.0);
        let core_bound = profile(50.0, 4.0, vec![6.0, 8.0], 20.0);
        assert_eq!(compose_ecm(&core_bound, OverlapPolicy::NonOverlapping), 50.0);
    }

    #[test]
    fn request_fraction_examples() {
        let p = profile(10.0, 4.0, vec![6.0, 8.0], 20.0);
        let f = request_fraction_from_ecm(&p, OverlapPolicy::NonOverlapping).unwrap();
        assert!((f - 20.0 / 38.0).abs() < 1e-15);
        // Memory dominates all terms under the overlapping policy.
        let mem_bound = profile(10.0, 4.0, vec![6.0, 8.0], 20.0);
        assert_eq!(
            request_fraction_from_ecm(&mem_bound, OverlapPolicy::Overlapping).unwrap(),
            1.0
        );
        let wide_core = profile(80.0, 0.0, vec![], 20.0);
        assert_eq!(
            request_fraction_from_ecm(&wide_core, OverlapPolicy::NonOverlapping).unwrap(),
            0.25
        );
        let no_mem = profile(10.0, 4.0, vec![6.0], 0.0);
        assert!(matches!(
            request_fraction_from_ecm(&no_mem, OverlapPolicy::NonOverlapping),
            Err(ModelError::NotMemoryBound(_))
        ));
    }

    #[test]
    fn measurement_fraction() {
        let f = request_fraction_from_measurement(14.238e9, 56.5e9).unwrap();
        assert!((f - 0.252).abs() < 5e-4);
        assert_eq!(request_fraction_from_measurement(56.5e9, 56.5e9).unwrap(), 1.0);
        assert_eq!(request_fraction_from_measurement(28.25e9, 56.5e9).unwrap(), 0.5);
        // Slight overshoot clamps, larger overshoot errors.
        assert_eq!(request_fraction_from_measurement(57.0e9, 56.5e9).unwrap(), 1.0);
        assert!(matches!(
            request_fraction_from_measurement(60.0e9, 56.5e9),
            Err(ModelError::MeasurementInconsistency { .. })
        ));
        assert!(matches!(
            request_fraction_from_measurement(-1.0, 56.5e9),
            Err(ModelError::Domain(_))
        ));
    }

    #[test]
    fn fraction_closure_between_both_routes() {
        let p = profile(10.0, 4.0, vec![6.0, 8.0], 20.0);
        let policy = OverlapPolicy::NonOverlapping;
        let f_ecm = request_fraction_from_ecm(&p, policy).unwrap();
        let b_s = 56.5e9;
        let b_meas = f_ecm * b_s;
        let f_meas = request_fraction_from_measurement(b_meas, b_s).unwrap();
        assert!((f_ecm - f_meas).abs() < 1e-15);
    }

    #[test]
    fn scaling_recursion_hand_example() {
        // T(1)=38, t_mem=20: u(2) = min(1, 40 / (38 + 10*(20/38))) = 0.9246.
        let p = profile(10.0, 4.0, vec![6.0, 8.0], 20.0);
        let curve = scaling_curve(&p, OverlapPolicy::NonOverlapping, 2, 50e9).unwrap();
        assert!((curve.utilization[1] - 0.924574).abs() < 1e-6);
    }

    #[test]
    fn scaling_base_case_and_saturated_start() {
        let p = profile(10.0, 4.0, vec![6.0, 8.0], 20.0);
        let b_s = 50e9;
        let curve = scaling_curve(&p, OverlapPolicy::NonOverlapping, 1, b_s).unwrap();
        let f = 20.0 / 38.0;
        assert_eq!(curve.utilization, vec![f]);
        assert!((curve.per_core_bandwidth[0] - f * b_s).abs() < 1.0);
        assert_eq!(curve.saturation_point, None);

        // f = 1 at one core: already saturated, aggregate constant at b_s.
        let sat = degenerate_profile(1.0).unwrap();
        let curve = scaling_curve(&sat, OverlapPolicy::NonOverlapping, 8, b_s).unwrap();
        assert_eq!(curve.saturation_point, Some(1));
        for n in 1..=8 {
            assert_eq!(curve.utilization[n - 1], 1.0);
            assert!((curve.aggregate_bandwidth(n as u32) - b_s).abs() < 1e-3);
        }
    }

    #[test]
    fn degenerate_profile_composes_to_unity() {
        for f in [0.05, 0.252, 0.5, 1.0] {
            let p = degenerate_profile(f).unwrap();
            assert_eq!(compose_ecm(&p, OverlapPolicy::NonOverlapping), 1.0);
            assert_eq!(compose_ecm(&p, OverlapPolicy::Overlapping), 1.0);
            assert_eq!(
                request_fraction_from_ecm(&p, OverlapPolicy::NonOverlapping).unwrap(),
                f
            );
        }
        assert!(degenerate_profile(0.0).is_err());
        assert!(degenerate_profile(1.5).is_err());
    }

    proptest! {
        #[test]
        fn compose_dominates_every_contribution(
            t_ol in 0.0..100.0f64,
            t_l1 in 0.0..100.0f64,
            t_a in 0.0..100.0f64,
            t_b in 0.0..100.0f64,
            t_mem in 0.1..100.0f64,
        ) {
            let p = profile(t_ol, t_l1, vec![t_a, t_b], t_mem);
            for policy in [OverlapPolicy::NonOverlapping, OverlapPolicy::Overlapping] {
                let t = compose_ecm(&p, policy);
                prop_assert!(t >= t_ol && t >= t_l1 && t >= t_a && t >= t_b && t >= t_mem);
                let f = request_fraction_from_ecm(&p, policy).unwrap();
                prop_assert!(f > 0.0 && f <= 1.0);
            }
        }

        #[test]
        fn fraction_monotone_in_t_mem(
            t_ol in 0.0..100.0f64,
            t_l1 in 0.0..100.0f64,
            t_a in 0.0..100.0f64,
            t_mem in 0.1..100.0f64,
            bump in 0.0..50.0f64,
        ) {
            let lo = profile(t_ol, t_l1, vec![t_a], t_mem);
            let hi = profile(t_ol, t_l1, vec![t_a], t_mem + bump);
            for policy in [OverlapPolicy::NonOverlapping, OverlapPolicy::Overlapping] {
                let f_lo = request_fraction_from_ecm(&lo, policy).unwrap();
                let f_hi = request_fraction_from_ecm(&hi, policy).unwrap();
                prop_assert!(f_hi >= f_lo - 1e-12);
            }
        }

        #[test]
        fn scaling_curve_monotone_and_capped(
            f in 0.01..1.0f64,
            n_max in 1u32..64,
        ) {
            let p = degenerate_profile(f).unwrap();
            let b_s = 50e9;
            let curve = scaling_curve(&p, OverlapPolicy::NonOverlapping, n_max, b_s).unwrap();
            prop_assert_eq!(curve.utilization[0], f);
            let mut prev_u = 0.0;
            let mut prev_agg = 0.0;
            for n in 1..=n_max {
                let u = curve.utilization[(n - 1) as usize];
                let agg = curve.aggregate_bandwidth(n);
                prop_assert!(u >= prev_u - 1e-12);
                prop_assert!(agg >= prev_agg - 1e-3);
                prop_assert!(agg <= b_s * (1.0 + 1e-12));
                prop_assert!(u <= 1.0);
                prev_u = u;
                prev_agg = agg;
            }
        }
    }
}
