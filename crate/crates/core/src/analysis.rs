//! Skewness statistics over per-rank duration samples and the
//! qualitative desynchronization/resynchronization predictor.
//!
//! When a bulk-synchronous program's ranks finish a memory-bound kernel
//! at staggered times, the stragglers overlap with whatever the early
//! finishers do next. If the successor work issues memory requests more
//! aggressively than the subject kernel (higher request fraction), the
//! stragglers are slowed down and finish times spread out further
//! (desynchronization, positive duration skewness); if the successor is
//! lighter on the interface — or idleness — the stragglers speed up and
//! the ranks pull back together (resynchronization, negative skewness).

use alloc::string::String;
use alloc::vec::Vec;

use crate::catalog::{Catalog, KernelDescription, MachineDescription};
use crate::ModelError;

/// Wall-clock interval one rank spent in the subject kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DurationSample {
    pub rank: u32,
    pub start_time: f64,
    pub end_time: f64,
}

impl DurationSample {
    pub fn duration(&self) -> f64 {
        self.end_time - self.start_time
    }
}

/// Both skewness conventions over one sample set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkewnessReport {
    /// Dimensionless standardized skewness `g1 = m3 / m2^{3/2}`.
    pub standardized: f64,
    /// Cube-rooted third central moment, `sign(m3)·|m3|^{1/3}`, in the
    /// units of the input.
    pub same_units: f64,
}

/// Population-moment skewness of a sample, in both the standardized and
/// the units-bearing convention. Requires at least three samples and a
/// nonzero variance.
pub fn skewness(samples: &[f64]) -> Result<SkewnessReport, ModelError> {
    if samples.len() < 3 {
        return Err(ModelError::UndefinedSkewness(String::from(
            "at least three samples are required",
        )));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(ModelError::UndefinedSkewness(String::from(
            "samples must be finite",
        )));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let mut m2 = 0.0;
    let mut m3 = 0.0;
    for &x in samples {
        let d = x - mean;
        m2 += d * d;
        m3 += d * d * d;
    }
    m2 /= n;
    m3 /= n;
    if m2 <= 0.0 {
        return Err(ModelError::UndefinedSkewness(String::from(
            "zero variance: standardized skewness is undefined",
        )));
    }
    Ok(SkewnessReport {
        standardized: m3 / (m2 * libm::sqrt(m2)),
        same_units: libm::cbrt(m3),
    })
}

/// Skewness of the durations of a sample set.
pub fn duration_skewness(samples: &[DurationSample]) -> Result<SkewnessReport, ModelError> {
    if let Some(bad) = samples.iter().find(|s| s.end_time < s.start_time) {
        return Err(ModelError::Domain(alloc::format!(
            "rank {} ends before it starts",
            bad.rank
        )));
    }
    let durations: Vec<f64> = samples.iter().map(DurationSample::duration).collect();
    skewness(&durations)
}

/// Qualitative sign of the expected duration skewness.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkewSign {
    /// Negative skewness: ranks pull back together.
    Resync,
    /// No systematic skew expected.
    Neutral,
    /// Positive skewness: ranks drift further apart.
    Desync,
}

impl SkewSign {
    pub fn as_str(&self) -> &'static str {
        match self {
            SkewSign::Resync => "resync",
            SkewSign::Neutral => "neutral",
            SkewSign::Desync => "desync",
        }
    }

    /// The sign as a number: −1, 0, or +1.
    pub fn signum(&self) -> i32 {
        match self {
            SkewSign::Resync => -1,
            SkewSign::Neutral => 0,
            SkewSign::Desync => 1,
        }
    }
}

/// Request fractions closer than this are treated as equal.
pub const SKEW_F_TOLERANCE: f64 = 1e-3;

/// A kernel phase sequence on one machine: what ran before the subject,
/// the subject itself, and what the early finishers run afterwards
/// (`None` stands for idleness, e.g. waiting in a barrier).
#[derive(Debug, Clone, Copy)]
pub struct SandwichScenario<'a> {
    pub predecessor: Option<&'a KernelDescription>,
    pub subject: &'a KernelDescription,
    pub successor: Option<&'a KernelDescription>,
    pub machine: &'a MachineDescription,
}

fn request_fraction_on(
    kernel: &KernelDescription,
    machine: &MachineDescription,
) -> Result<f64, ModelError> {
    kernel
        .point(&machine.name)
        .map(|p| p.request_fraction)
        .ok_or_else(|| ModelError::MissingMachinePoint {
            kernel: kernel.name.clone(),
            machine: machine.name.clone(),
        })
}

/// Predict the sign of the duration skewness of the subject kernel.
///
/// The rule is driven by what the subject's stragglers overlap with:
/// idleness after the subject resynchronizes; a successor with a higher
/// request fraction than the subject desynchronizes; a lower one
/// resynchronizes; equal fractions (within [`SKEW_F_TOLERANCE`]) are
/// neutral. The predecessor is validated and recorded for reporting but
/// does not enter the rule.
pub fn predict_skew_sign(scenario: &SandwichScenario<'_>) -> Result<SkewSign, ModelError> {
    let f_subject = request_fraction_on(scenario.subject, scenario.machine)?;
    if let Some(pred) = scenario.predecessor {
        request_fraction_on(pred, scenario.machine)?;
    }
    match scenario.successor {
        None => Ok(SkewSign::Resync),
        Some(succ) => {
            let f_succ = request_fraction_on(succ, scenario.machine)?;
            if (f_succ - f_subject).abs() <= SKEW_F_TOLERANCE {
                Ok(SkewSign::Neutral)
            } else if f_succ > f_subject {
                Ok(SkewSign::Desync)
            } else {
                Ok(SkewSign::Resync)
            }
        }
    }
}

/// Three ready-made scenarios with clearly separated request fractions
/// (|Δf| > 0.05 on BDW-1), covering both signs:
///
/// 1. subject DDOT2, successor DAXPY — desynchronization;
/// 2. subject DDOT2, successor idleness — resynchronization;
/// 3. subject DCOPY, successor DDOT2 — resynchronization.
///
/// Each scenario's predecessor is the subject itself, so that all cores
/// sustain subject-level pressure during the staggered ramp-in.
pub fn builtin_scenarios(catalog: &Catalog) -> Result<Vec<SandwichScenario<'_>>, ModelError> {
    let machine = catalog.machine("BDW-1")?;
    let ddot2 = catalog.kernel("DDOT2")?;
    let daxpy = catalog.kernel("DAXPY")?;
    let dcopy = catalog.kernel("DCOPY")?;
    Ok(alloc::vec![
        SandwichScenario {
            predecessor: Some(ddot2),
            subject: ddot2,
            successor: Some(daxpy),
            machine,
        },
        SandwichScenario {
            predecessor: Some(ddot2),
            subject: ddot2,
            successor: None,
            machine,
        },
        SandwichScenario {
            predecessor: Some(dcopy),
            subject: dcopy,
            successor: Some(ddot2),
            machine,
        },
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::Catalog;
    use rand_chacha::ChaCha8Rng;
    use rand_core::{RngCore, SeedableRng};

    #[test]
    fn symmetric_sample_has_zero_skew() {
        let r = skewness(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(r.standardized, 0.0);
        assert_eq!(r.same_units, 0.0);
    }

    #[test]
    fn mirrored_sample_negates_skew() {
        let xs = [1.0, 2.0, 3.0, 10.0];
        let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
        let a = skewness(&xs).unwrap();
        let b = skewness(&neg).unwrap();
        assert!((a.standardized + b.standardized).abs() < 1e-12);
        assert!((a.same_units + b.same_units).abs() < 1e-12);
        assert!(a.standardized > 0.0);
    }

    #[test]
    fn exponential_sample_matches_analytic_skewness() {
        // Exp(1) has standardized skewness exactly 2.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut xs = Vec::with_capacity(100_000);
        for _ in 0..100_000 {
            let u = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
            xs.push(-libm::log(1.0 - u));
        }
        let r = skewness(&xs).unwrap();
        assert!(
            (r.standardized - 2.0).abs() < 0.1,
            "g1 = {}",
            r.standardized
        );
    }

    #[test]
    fn degenerate_samples_are_rejected() {
        assert!(matches!(
            skewness(&[1.0, 2.0]),
            Err(ModelError::UndefinedSkewness(_))
        ));
        assert!(matches!(
            skewness(&[4.0, 4.0, 4.0, 4.0]),
            Err(ModelError::UndefinedSkewness(_))
        ));
        assert!(matches!(
            skewness(&[1.0, f64::NAN, 3.0]),
            Err(ModelError::UndefinedSkewness(_))
        ));
    }

    #[test]
    fn standardized_form_is_scale_and_translation_invariant() {
        let xs = [0.8, 1.1, 1.7, 2.9, 3.1, 5.0];
        let scaled: Vec<f64> = xs.iter().map(|x| 3.5 * x + 11.0).collect();
        let a = skewness(&xs).unwrap();
        let b = skewness(&scaled).unwrap();
        assert!((a.standardized - b.standardized).abs() < 1e-9);
    }

    #[test]
    fn units_form_scales_linearly() {
        let xs = [0.8, 1.1, 1.7, 2.9, 3.1, 5.0];
        let scaled: Vec<f64> = xs.iter().map(|x| 3.5 * x).collect();
        let a = skewness(&xs).unwrap();
        let b = skewness(&scaled).unwrap();
        assert!((b.same_units - 3.5 * a.same_units).abs() < 1e-9 * b.same_units.abs());
        // Translation does not change a central moment.
        let shifted: Vec<f64> = xs.iter().map(|x| x + 11.0).collect();
        let c = skewness(&shifted).unwrap();
        assert!((c.same_units - a.same_units).abs() < 1e-9);
    }

    #[test]
    fn duration_skewness_validates_ordering() {
        let good = [
            DurationSample {
                rank: 0,
                start_time: 0.0,
                end_time: 1.0,
            },
            DurationSample {
                rank: 1,
                start_time: 0.0,
                end_time: 2.0,
            },
            DurationSample {
                rank: 2,
                start_time: 0.0,
                end_time: 4.0,
            },
        ];
        assert!(duration_skewness(&good).is_ok());
        let mut bad = good;
        bad[1].end_time = -1.0;
        assert!(matches!(
            duration_skewness(&bad),
            Err(ModelError::Domain(_))
        ));
    }

    #[test]
    fn sign_rule_examples() {
        let cat = Catalog::builtin();
        let m = cat.machine("BDW-1").unwrap();
        let ddot2 = cat.kernel("DDOT2").unwrap();
        let daxpy = cat.kernel("DAXPY").unwrap();
        let dcopy = cat.kernel("DCOPY").unwrap();
        // Successor with higher request fraction: desynchronization.
        let s = SandwichScenario {
            predecessor: Some(ddot2),
            subject: ddot2,
            successor: Some(daxpy),
            machine: m,
        };
        assert_eq!(predict_skew_sign(&s).unwrap(), SkewSign::Desync);
        // Overlap with idleness: resynchronization.
        let s = SandwichScenario {
            predecessor: Some(ddot2),
            subject: ddot2,
            successor: None,
            machine: m,
        };
        assert_eq!(predict_skew_sign(&s).unwrap(), SkewSign::Resync);
        // Successor with lower request fraction: resynchronization.
        let s = SandwichScenario {
            predecessor: Some(dcopy),
            subject: dcopy,
            successor: Some(ddot2),
            machine: m,
        };
        assert_eq!(predict_skew_sign(&s).unwrap(), SkewSign::Resync);
        // Successor equal to the subject: neutral.
        let s = SandwichScenario {
            predecessor: None,
            subject: ddot2,
            successor: Some(ddot2),
            machine: m,
        };
        assert_eq!(predict_skew_sign(&s).unwrap(), SkewSign::Neutral);
    }

    #[test]
    fn equal_fractions_within_tolerance_are_neutral() {
        let cat = Catalog::builtin();
        let m = cat.machine("BDW-1").unwrap();
        let base = cat.kernel("DDOT2").unwrap();
        let mut close = base.clone();
        {
            let p = close.per_machine.get_mut("BDW-1").unwrap();
            p.request_fraction += 0.0005; // inside the 1e-3 tolerance
        }
        let s = SandwichScenario {
            predecessor: None,
            subject: base,
            successor: Some(&close),
            machine: m,
        };
        assert_eq!(predict_skew_sign(&s).unwrap(), SkewSign::Neutral);
        let mut apart = base.clone();
        {
            let p = apart.per_machine.get_mut("BDW-1").unwrap();
            p.request_fraction += 0.0015; // outside the tolerance
        }
        let s = SandwichScenario {
            predecessor: None,
            subject: base,
            successor: Some(&apart),
            machine: m,
        };
        assert_eq!(predict_skew_sign(&s).unwrap(), SkewSign::Desync);
    }

    #[test]
    fn sign_rule_is_invariant_under_uniform_f_scaling() {
        let cat = Catalog::builtin();
        let m = cat.machine("BDW-1").unwrap();
        let mut subj = cat.kernel("DDOT2").unwrap().clone();
        let mut succ = cat.kernel("DAXPY").unwrap().clone();
        let s = SandwichScenario {
            predecessor: None,
            subject: &subj,
            successor: Some(&succ),
            machine: m,
        };
        let before = predict_skew_sign(&s).unwrap();
        let mut subj2 = subj.clone();
        let mut succ2 = succ.clone();
        for k in [&mut subj2, &mut succ2] {
            let p = k.per_machine.get_mut("BDW-1").unwrap();
            p.request_fraction *= 0.5;
        }
        // Keep the originals alive; compare against the scaled pair.
        subj = subj2;
        succ = succ2;
        let s = SandwichScenario {
            predecessor: None,
            subject: &subj,
            successor: Some(&succ),
            machine: m,
        };
        assert_eq!(predict_skew_sign(&s).unwrap(), before);
    }

    #[test]
    fn missing_machine_point_is_reported() {
        let cat = Catalog::builtin();
        let m = cat.machine("BDW-1").unwrap();
        let mut foreign = cat.kernel("DDOT2").unwrap().clone();
        foreign.per_machine.remove("BDW-1");
        let s = SandwichScenario {
            predecessor: None,
            subject: &foreign,
            successor: None,
            machine: m,
        };
        assert!(matches!(
            predict_skew_sign(&s),
            Err(ModelError::MissingMachinePoint { .. })
        ));
    }

    #[test]
    fn builtin_scenarios_cover_both_signs() {
        let cat = Catalog::builtin();
        let scenarios = builtin_scenarios(&cat).unwrap();
        assert_eq!(scenarios.len(), 3);
        let signs: Vec<SkewSign> = scenarios
            .iter()
            .map(|s| predict_skew_sign(s).unwrap())
            .collect();
        assert_eq!(signs, [SkewSign::Desync, SkewSign::Resync, SkewSign::Resync]);
        // The request fractions are clearly separated (idle counts as 0).
        for s in &scenarios {
            let f_subj = s.subject.point("BDW-1").unwrap().request_fraction;
            let f_succ = s
                .successor
                .map(|k| k.point("BDW-1").unwrap().request_fraction)
                .unwrap_or(0.0);
            assert!((f_succ - f_subj).abs() > 0.05);
        }
    }
}
