//! Bandwidth sharing between thread groups on one contention domain.
//!
//! Given groups `(kernel_i, n_i)` of threads sharing a memory interface,
//! the model predicts:
//!
//! * the mixed saturated bandwidth — the thread-count-weighted mean of the
//!   kernels' homogeneous saturated bandwidths `b_s`;
//! * each group's share factor `α_i = n_i·f_i / Σ n_j·f_j`, proportional
//!   to thread count times memory request fraction;
//! * per-group and per-core bandwidths, distinguishing the saturated
//!   regime (shares of the contended cap) from the unsaturated one (every
//!   core keeps its single-core bandwidth `f·b_s`).

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::catalog::{KernelDescription, MachineDescription};
use crate::ModelError;

/// A kernel bound to a thread count; the unit the sharing model operates
/// on.
#[derive(Debug, Clone, Copy)]
pub struct WorkloadGroup<'a> {
    pub kernel: &'a KernelDescription,
    pub n_threads: u32,
}

impl<'a> WorkloadGroup<'a> {
    pub fn new(kernel: &'a KernelDescription, n_threads: u32) -> Self {
        WorkloadGroup { kernel, n_threads }
    }
}

/// Per-group bandwidth prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct SharePrediction {
    /// The contended bandwidth cap of the mix, bytes/second.
    pub mixed_saturated_bandwidth: f64,
    /// Share factors α, one per group, summing to 1.
    pub share_factors: Vec<f64>,
    /// Bandwidth obtained by each group, bytes/second.
    pub group_bandwidth: Vec<f64>,
    /// Bandwidth obtained by each core of each group, bytes/second.
    pub per_core_bandwidth: Vec<f64>,
    /// Whether the contention cap was binding.
    pub saturated: bool,
}

impl SharePrediction {
    /// Total bandwidth over all groups, bytes/second.
    pub fn total_bandwidth(&self) -> f64 {
        self.group_bandwidth.iter().sum()
    }
}

/// Resolved (f, b_s, n) triple per group.
struct Resolved {
    f: f64,
    b_s: f64,
    n: f64,
}

fn resolve(
    groups: &[WorkloadGroup<'_>],
    machine: &MachineDescription,
) -> Result<Vec<Resolved>, ModelError> {
    let total: u32 = groups.iter().map(|g| g.n_threads).sum();
    if total > machine.cores_per_domain {
        return Err(ModelError::Domain(format!(
            "{total} threads exceed the {} cores of domain '{}'",
            machine.cores_per_domain, machine.name
        )));
    }
    groups
        .iter()
        .map(|g| {
            let pt = g.kernel.point(&machine.name).ok_or_else(|| {
                ModelError::MissingMachinePoint {
                    kernel: g.kernel.name.clone(),
                    machine: machine.name.clone(),
                }
            })?;
            Ok(Resolved {
                f: pt.request_fraction,
                b_s: pt.saturated_bandwidth,
                n: g.n_threads as f64,
            })
        })
        .collect()
}

/// The contended bandwidth cap of a mix: the thread-count-weighted mean of
/// the participating kernels' saturated bandwidths. Groups with zero
/// threads do not contribute.
pub fn mixed_saturated_bandwidth(
    groups: &[WorkloadGroup<'_>],
    machine: &MachineDescription,
) -> Result<f64, ModelError> {
    let rs = resolve(groups, machine)?;
    let n_total: f64 = rs.iter().map(|r| r.n).sum();
    if n_total == 0.0 {
        return Err(ModelError::Domain(String::from(
            "at least one group must have threads",
        )));
    }
    Ok(rs.iter().map(|r| r.n * r.b_s).sum::<f64>() / n_total)
}

/// Share factors `α_i = n_i·f_i / Σ_j n_j·f_j`.
pub fn share_factors(
    groups: &[WorkloadGroup<'_>],
    machine: &MachineDescription,
) -> Result<Vec<f64>, ModelError> {
    let rs = resolve(groups, machine)?;
    let weight_sum: f64 = rs.iter().map(|r| r.n * r.f).sum();
    if weight_sum == 0.0 {
        return Err(ModelError::Domain(String::from(
            "total request weight is zero",
        )));
    }
    Ok(rs.iter().map(|r| r.n * r.f / weight_sum).collect())
}

/// Predict per-group and per-core bandwidth with the standard demand model:
/// every core requests its unshared single-core bandwidth `f·b_s`.
pub fn predict_sharing(
    groups: &[WorkloadGroup<'_>],
    machine: &MachineDescription,
) -> Result<SharePrediction, ModelError> {
    let rs = resolve(groups, machine)?;
    let requested: Vec<f64> = rs.iter().map(|r| r.n * r.f * r.b_s).collect();
    predict_sharing_with_requested(groups, machine, &requested)
}

/// Predict per-group and per-core bandwidth given externally computed
/// per-group demands (bytes/second).
///
/// If the total demand fits under the mixed saturated bandwidth, every
/// group gets exactly what it requests. Otherwise the cap is split in
/// proportion to the share factors, except that no group receives more
/// than its demand: surplus from demand-capped groups is redistributed to
/// the remaining groups in proportion to their share factors until no cap
/// is exceeded (at most one pass per group).
pub fn predict_sharing_with_requested(
    groups: &[WorkloadGroup<'_>],
    machine: &MachineDescription,
    requested: &[f64],
) -> Result<SharePrediction, ModelError> {
    if requested.len() != groups.len() {
        return Err(ModelError::Domain(String::from(
            "one demand per group required",
        )));
    }
    if requested.iter().any(|r| !(*r >= 0.0) || !r.is_finite()) {
        return Err(ModelError::Domain(String::from(
            "demands must be finite and non-negative",
        )));
    }
    let rs = resolve(groups, machine)?;
    let cap = mixed_saturated_bandwidth(groups, machine)?;
    let alphas = share_factors(groups, machine)?;
    let total_requested: f64 = requested.iter().sum();

    let n = groups.len();
    let mut group_bw = vec![0.0f64; n];
    let saturated = total_requested > cap;
    if !saturated {
        group_bw.copy_from_slice(requested);
    } else {
        // Start from α-proportional shares of the cap; cap each group at
        // its own demand and redistribute the surplus among the rest.
        let mut capped = vec![false; n];
        let mut remaining_cap = cap;
        let mut active: Vec<usize> = (0..n).filter(|&i| alphas[i] > 0.0).collect();
        loop {
            let weight: f64 = active.iter().map(|&i| alphas[i]).sum();
            if weight == 0.0 || active.is_empty() {
                break;
            }
            let mut newly_capped = Vec::new();
            for &i in &active {
                let tentative = remaining_cap * alphas[i] / weight;
                if tentative >= requested[i] {
                    newly_capped.push(i);
                }
            }
            if newly_capped.is_empty() {
                for &i in &active {
                    group_bw[i] = remaining_cap * alphas[i] / weight;
                }
                break;
            }
            for &i in &newly_capped {
                group_bw[i] = requested[i];
                capped[i] = true;
                remaining_cap -= requested[i];
            }
            active.retain(|i| !capped[*i]);
        }
    }

    // Per-core bandwidth first, so that per_core * n reproduces the group
    // value bit-for-bit.
    let mut per_core = vec![0.0f64; n];
    for i in 0..n {
        if rs[i].n > 0.0 {
            per_core[i] = group_bw[i] / rs[i].n;
            group_bw[i] = per_core[i] * rs[i].n;
        } else {
            per_core[i] = 0.0;
            group_bw[i] = 0.0;
        }
    }

    Ok(SharePrediction {
        mixed_saturated_bandwidth: cap,
        share_factors: alphas,
        group_bandwidth: group_bw,
        per_core_bandwidth: per_core,
        saturated,
    })
}

/// One cell of a pairing matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PairingEntry {
    pub self_kernel: String,
    pub other_kernel: String,
    /// Bandwidth of the first kernel's group in the mixed pairing, divided
    /// by its bandwidth in the self-paired case at the same split.
    pub value: f64,
}

/// Relative gain or loss of each kernel when paired with every other.
///
/// For the ordered pair (A, B) and split `(n1, n2)`, the entry is the
/// bandwidth of group A running `A×n1 + B×n2` normalized to group A
/// running `A×n1 + A×n2`. Diagonal entries are exactly 1.
pub fn pairing_matrix(
    kernels: &[&KernelDescription],
    machine: &MachineDescription,
    split: (u32, u32),
) -> Result<Vec<PairingEntry>, ModelError> {
    let (n1, n2) = split;
    if n1 == 0 {
        return Err(ModelError::Domain(String::from(
            "the first group of a pairing needs at least one thread",
        )));
    }
    if n1 + n2 > machine.cores_per_domain {
        return Err(ModelError::Domain(format!(
            "split ({n1}, {n2}) exceeds the {} cores of domain '{}'",
            machine.cores_per_domain, machine.name
        )));
    }
    let mut entries = Vec::with_capacity(kernels.len() * kernels.len());
    for &a in kernels {
        let baseline = predict_sharing(
            &[WorkloadGroup::new(a, n1), WorkloadGroup::new(a, n2)],
            machine,
        )?
        .group_bandwidth[0];
        if !(baseline > 0.0) {
            return Err(ModelError::Domain(format!(
                "self-paired bandwidth of '{}' is zero",
                a.name
            )));
        }
        for &b in kernels {
            let value = if core::ptr::eq(a, b) || a.name == b.name {
                1.0
            } else {
                let mixed = predict_sharing(
                    &[WorkloadGroup::new(a, n1), WorkloadGroup::new(b, n2)],
                    machine,
                )?
                .group_bandwidth[0];
                mixed / baseline
            };
            entries.push(PairingEntry {
                self_kernel: a.name.clone(),
                other_kernel: b.name.clone(),
                value,
            });
        }
    }
    Ok(entries)
}

/// Relative prediction error `|observed - modeled| / modeled`.
pub fn relative_error(observed: f64, modeled: f64) -> Result<f64, ModelError> {
    if !(modeled > 0.0) {
        return Err(ModelError::Domain(format!(
            "modeled bandwidth must be positive, got {modeled}"
        )));
    }
    Ok((observed - modeled).abs() / modeled)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::Catalog;
    use proptest::prelude::*;

    fn groups<'a>(
        cat: &'a Catalog,
        spec: &[(&str, u32)],
    ) -> Vec<WorkloadGroup<'a>> {
        spec.iter()
            .map(|(name, n)| WorkloadGroup::new(cat.kernel(name).unwrap(), *n))
            .collect()
    }

    #[test]
    fn mixed_bandwidth_flagship() {
        let cat = Catalog::builtin();
        let m = cat.machine("BDW-1").unwrap();
        let g = groups(&cat, &[("DCOPY", 5), ("DDOT2", 5)]);
        let b = mixed_saturated_bandwidth(&g, m).unwrap();
        assert_eq!(b, 55.0e9);
    }

    #[test]
    fn mixed_bandwidth_collapses_for_single_group() {
        let cat = Catalog::builtin();
        for mname in ["BDW-1", "BDW-2", "CLX", "Rome"] {
            let m = cat.machine(mname).unwrap();
            for k in &cat.kernels {
                let g = [
                    WorkloadGroup::new(k, m.cores_per_domain),
                    WorkloadGroup::new(k, 0),
                ];
                let b = mixed_saturated_bandwidth(&g, m).unwrap();
                let b_s = k.point(mname).unwrap().saturated_bandwidth;
                assert!((b - b_s).abs() <= 1e-12 * b_s, "{} on {}", k.name, mname);
            }
        }
    }

    #[test]
    fn share_factors_flagship() {
        let cat = Catalog::builtin();
        let m = cat.machine("BDW-1").unwrap();
        let g = groups(&cat, &[("DCOPY", 5), ("DDOT2", 5)]);
        let a = share_factors(&g, m).unwrap();
        assert!((a[0] - 1.600 / 2.860).abs() < 1e-12);
        assert!((a[0] - 0.5594).abs() < 1e-4);
    }

    #[test]
    fn equal_f_shares_follow_thread_counts() {
        // Two groups of the same kernel: share is n1/(n1+n2).
        let cat = Catalog::builtin();
        let m = cat.machine("CLX").unwrap();
        let k = cat.kernel("STREAM").unwrap();
        let g = [WorkloadGroup::new(k, 14), WorkloadGroup::new(k, 6)];
        let a = share_factors(&g, m).unwrap();
        assert!((a[0] - 0.7).abs() < 1e-12);
    }

    #[test]
    fn predict_flagship_saturated() {
        let cat = Catalog::builtin();
        let m = cat.machine("BDW-1").unwrap();
        let g = groups(&cat, &[("DCOPY", 5), ("DDOT2", 5)]);
        let p = predict_sharing(&g, m).unwrap();
        assert!(p.saturated);
        assert!((p.group_bandwidth[0] - 30.769230769e9).abs() < 1e3);
        assert!((p.per_core_bandwidth[0] - 6.153846154e9).abs() < 1e3);
        assert!((p.per_core_bandwidth[1] - 4.846153846e9).abs() < 1e3);
    }

    #[test]
    fn predict_two_single_cores_unsaturated() {
        let cat = Catalog::builtin();
        let m = cat.machine("CLX").unwrap();
        let g = groups(&cat, &[("DDOT2", 1), ("DCOPY", 1)]);
        let p = predict_sharing(&g, m).unwrap();
        assert!(!p.saturated);
        // Each core keeps its single-core bandwidth f * b_s.
        assert!((p.per_core_bandwidth[0] - 0.142 * 108.7e9).abs() < 1e3);
        assert!((p.per_core_bandwidth[1] - 0.190 * 104.2e9).abs() < 1e3);
    }

    #[test]
    fn single_group_full_domain_reaches_saturated_bandwidth() {
        let cat = Catalog::builtin();
        for mname in ["BDW-1", "BDW-2", "CLX", "Rome"] {
            let m = cat.machine(mname).unwrap();
            for k in &cat.kernels {
                let g = [WorkloadGroup::new(k, m.cores_per_domain)];
                let p = predict_sharing(&g, m).unwrap();
                let b_s = k.point(mname).unwrap().saturated_bandwidth;
                let expected = (m.cores_per_domain as f64
                    * k.point(mname).unwrap().request_fraction
                    * b_s)
                    .min(b_s);
                assert!(
                    (p.group_bandwidth[0] - expected).abs() < 1e-3,
                    "{} on {}",
                    k.name,
                    mname
                );
                assert!((expected - b_s).abs() < 1e-3, "{} on {}", k.name, mname);
            }
        }
    }

    #[test]
    fn pairing_matrix_signs() {
        let cat = Catalog::builtin();
        let dscal = cat.kernel("DSCAL").unwrap();
        let daxpy = cat.kernel("DAXPY").unwrap();
        // Self-pairing is exactly 1 everywhere.
        for mname in ["BDW-1", "BDW-2", "CLX", "Rome"] {
            let m = cat.machine(mname).unwrap();
            let half = m.cores_per_domain / 2;
            let entries =
                pairing_matrix(&[dscal, daxpy], m, (half, m.cores_per_domain - half)).unwrap();
            for e in &entries {
                if e.self_kernel == e.other_kernel {
                    assert_eq!(e.value, 1.0);
                }
            }
            let dscal_vs_daxpy = entries
                .iter()
                .find(|e| e.self_kernel == "DSCAL" && e.other_kernel == "DAXPY")
                .unwrap();
            let daxpy_vs_dscal = entries
                .iter()
                .find(|e| e.self_kernel == "DAXPY" && e.other_kernel == "DSCAL")
                .unwrap();
            if mname == "Rome" {
                // f_DAXPY > f_DSCAL on Rome: the sign flips.
                assert!(daxpy_vs_dscal.value > 1.0, "{mname}");
                assert!(dscal_vs_daxpy.value < 1.0, "{mname}");
            } else {
                assert!(dscal_vs_daxpy.value > 1.0, "{mname}");
                assert!(daxpy_vs_dscal.value < 1.0, "{mname}");
            }
        }
    }

    #[test]
    fn relative_error_examples() {
        assert_eq!(relative_error(55.0, 55.0).unwrap(), 0.0);
        assert!((relative_error(54.0, 50.0).unwrap() - 0.08).abs() < 1e-12);
        assert!((relative_error(46.0, 50.0).unwrap() - 0.08).abs() < 1e-12);
        assert!(relative_error(1.0, 0.0).is_err());
    }

    #[test]
    fn oversubscription_rejected() {
        let cat = Catalog::builtin();
        let m = cat.machine("Rome").unwrap();
        let g = groups(&cat, &[("DCOPY", 5), ("DDOT2", 5)]);
        assert!(matches!(
            predict_sharing(&g, m),
            Err(ModelError::Domain(_))
        ));
    }

    proptest! {
        #[test]
        fn alpha_sums_to_one_and_caps_hold(
            ki in 0usize..15,
            kj in 0usize..15,
            n1 in 0u32..6,
            n2 in 0u32..6,
        ) {
            prop_assume!(n1 + n2 >= 1);
            let cat = Catalog::builtin();
            let m = cat.machine("BDW-1").unwrap();
            let a = &cat.kernels[ki];
            let b = &cat.kernels[kj];
            let g = [WorkloadGroup::new(a, n1), WorkloadGroup::new(b, n2)];
            let weight = n1 as f64 * a.point("BDW-1").unwrap().request_fraction
                + n2 as f64 * b.point("BDW-1").unwrap().request_fraction;
            prop_assume!(weight > 0.0);

            let alphas = share_factors(&g, m).unwrap();
            let total: f64 = alphas.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);

            let cap = mixed_saturated_bandwidth(&g, m).unwrap();
            let bs_a = a.point("BDW-1").unwrap().saturated_bandwidth;
            let bs_b = b.point("BDW-1").unwrap().saturated_bandwidth;
            prop_assert!(cap >= bs_a.min(bs_b) - 1e-3 && cap <= bs_a.max(bs_b) + 1e-3);

            let p = predict_sharing(&g, m).unwrap();
            let requested_total = n1 as f64
                * a.point("BDW-1").unwrap().request_fraction * bs_a
                + n2 as f64 * b.point("BDW-1").unwrap().request_fraction * bs_b;
            let expected_total = requested_total.min(cap);
            prop_assert!(
                (p.total_bandwidth() - expected_total).abs() <= 1e-9 * expected_total
            );
            // Per-core times thread count reproduces the group bandwidth.
            for i in 0..2 {
                let n = [n1, n2][i] as f64;
                prop_assert_eq!(p.per_core_bandwidth[i] * n, p.group_bandwidth[i]);
            }
        }

        #[test]
        fn alpha_invariant_under_uniform_scaling(
            ki in 0usize..15,
            kj in 0usize..15,
            n1 in 1u32..5,
            n2 in 1u32..5,
            scale in 1u32..2,
        ) {
            let cat = Catalog::builtin();
            let m = cat.machine("CLX").unwrap();
            let a = &cat.kernels[ki];
            let b = &cat.kernels[kj];
            let g1 = [WorkloadGroup::new(a, n1), WorkloadGroup::new(b, n2)];
            let g2 = [
                WorkloadGroup::new(a, n1 * (scale + 1)),
                WorkloadGroup::new(b, n2 * (scale + 1)),
            ];
            let a1 = share_factors(&g1, m).unwrap();
            let a2 = share_factors(&g2, m).unwrap();
            prop_assert!((a1[0] - a2[0]).abs() < 1e-12);
        }

        #[test]
        fn alpha_monotone_in_f(
            f1 in 0.05f64..0.95,
            bump in 0.01f64..0.05,
            n1 in 1u32..5,
            n2 in 1u32..5,
        ) {
            // Raising one group's f never decreases its share. Synthesized
            // kernels keep everything else fixed.
            let cat = Catalog::builtin();
            let m = cat.machine("Rome").unwrap();
            let mut low = cat.kernel("DDOT2").unwrap().clone();
            let mut high = low.clone();
            low.per_machine.get_mut("Rome").unwrap().request_fraction = f1;
            high.per_machine.get_mut("Rome").unwrap().request_fraction = f1 + bump;
            let other = cat.kernel("DCOPY").unwrap();
            let share_low = share_factors(
                &[WorkloadGroup::new(&low, n1), WorkloadGroup::new(other, n2)],
                m,
            ).unwrap()[0];
            let share_high = share_factors(
                &[WorkloadGroup::new(&high, n1), WorkloadGroup::new(other, n2)],
                m,
            ).unwrap()[0];
            prop_assert!(share_high >= share_low - 1e-12);
        }

        #[test]
        fn zero_thread_group_is_inert(
            ki in 0usize..15,
            kj in 0usize..15,
            n in 1u32..10,
        ) {
            let cat = Catalog::builtin();
            let m = cat.machine("BDW-1").unwrap();
            let a = &cat.kernels[ki];
            let b = &cat.kernels[kj];
            let with = [WorkloadGroup::new(a, n), WorkloadGroup::new(b, 0)];
            let without = [WorkloadGroup::new(a, n)];
            let p1 = predict_sharing(&with, m).unwrap();
            let p2 = predict_sharing(&without, m).unwrap();
            prop_assert_eq!(p1.group_bandwidth[0], p2.group_bandwidth[0]);
            prop_assert_eq!(p1.mixed_saturated_bandwidth, p2.mixed_saturated_bandwidth);
            prop_assert_eq!(p1.group_bandwidth[1], 0.0);
        }

        #[test]
        fn per_core_ratio_law(
            ki in 0usize..15,
            kj in 0usize..15,
        ) {
            // Saturated, caps not binding: per-core bandwidths relate as
            // the f values.
            let cat = Catalog::builtin();
            let m = cat.machine("BDW-2").unwrap();
            let a = &cat.kernels[ki];
            let b = &cat.kernels[kj];
            let g = [WorkloadGroup::new(a, 9), WorkloadGroup::new(b, 9)];
            let p = predict_sharing(&g, m).unwrap();
            prop_assume!(p.saturated);
            let f_a = a.point("BDW-2").unwrap().request_fraction;
            let f_b = b.point("BDW-2").unwrap().request_fraction;
            let requested_a = 9.0 * f_a * a.point("BDW-2").unwrap().saturated_bandwidth;
            let requested_b = 9.0 * f_b * b.point("BDW-2").unwrap().saturated_bandwidth;
            prop_assume!(p.group_bandwidth[0] < requested_a && p.group_bandwidth[1] < requested_b);
            let lhs = p.per_core_bandwidth[0] / p.per_core_bandwidth[1];
            prop_assert!((lhs - f_a / f_b).abs() < 1e-9 * (f_a / f_b));
        }
    }
}
