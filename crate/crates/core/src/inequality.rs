//! Generalized Entropy index with its additive between/within-group split.
//!
//! For sensitivity `α ∉ {0, 1}`:
//!
//! ```text
//! GE(B)      = 1/(n α(α-1)) Σ_i [(b_i/b̄)^α - 1]
//! between    = Σ_g n_g/(n α(α-1)) [(b̄_g/b̄)^α - 1]
//! within     = Σ_g (n_g/n)(b̄_g/b̄)^α GE(B_g)
//! ```
//!
//! Weighted variants replace counts by probability masses; the soft
//! (expected) allocation uses them.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};

/// Presentation multiplier for dashboards; raw indices stay unscaled.
pub const DISPLAY_MULTIPLIER: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GroupTerms {
    pub between: f64,
    pub within: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InequalityReport {
    pub total: f64,
    pub between: f64,
    pub within: f64,
    pub per_group: BTreeMap<String, GroupTerms>,
    pub alpha: f64,
    pub display_multiplier: f64,
}

impl InequalityReport {
    pub fn display_total(&self) -> f64 {
        self.total * self.display_multiplier
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !alpha.is_finite() || alpha == 0.0 || alpha == 1.0 {
        return Err(Error::Domain(format!(
            "alpha must be finite and not 0 or 1, got {alpha}"
        )));
    }
    Ok(())
}

fn check_values<'a>(values: impl Iterator<Item = &'a f64>, alpha: f64) -> Result<()> {
    let fractional = alpha.fract() != 0.0;
    for &b in values {
        if !b.is_finite() {
            return Err(Error::Domain(format!("non-finite benefit {b}")));
        }
        if fractional && b <= 0.0 {
            return Err(Error::Domain(format!(
                "non-positive benefit {b} with fractional alpha {alpha}"
            )));
        }
    }
    Ok(())
}

fn weighted_mean(values: &[f64], weights: &[f64]) -> Result<(f64, f64)> {
    let w: f64 = weights.iter().sum();
    if !(w > 0.0) {
        return Err(Error::Domain("empty population".into()));
    }
    let mean = values.iter().zip(weights).map(|(b, w)| b * w).sum::<f64>() / w;
    if mean == 0.0 || mean.abs() < 1e-300 {
        return Err(Error::Domain("mean benefit is zero".into()));
    }
    Ok((w, mean))
}

pub fn ge_index(benefits: &[f64], alpha: f64) -> Result<f64> {
    ge_index_weighted(benefits, &vec![1.0; benefits.len()], alpha)
}

pub fn ge_index_weighted(benefits: &[f64], weights: &[f64], alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    check_values(benefits.iter(), alpha)?;
    let (w, mean) = weighted_mean(benefits, weights)?;
    if alpha == 2.0 {
        // variance form; avoids cancelling (b/b̄)² − 1 near equality
        let var = benefits
            .iter()
            .zip(weights)
            .map(|(b, wi)| wi * (b - mean).powi(2))
            .sum::<f64>()
            / w;
        return Ok(var / (2.0 * mean * mean));
    }
    let s: f64 = benefits
        .iter()
        .zip(weights)
        .map(|(b, wi)| wi * ((b / mean).powf(alpha) - 1.0))
        .sum();
    Ok(s / (w * alpha * (alpha - 1.0)))
}

/// Decomposes the index of labeled benefits.
pub fn decompose<'a>(labeled: impl IntoIterator<Item = (&'a str, f64)>, alpha: f64) -> Result<InequalityReport> {
    decompose_weighted(labeled.into_iter().map(|(g, b)| (g, b, 1.0)), alpha)
}

pub fn decompose_weighted<'a>(
    labeled: impl IntoIterator<Item = (&'a str, f64, f64)>,
    alpha: f64,
) -> Result<InequalityReport> {
    check_alpha(alpha)?;
    let mut groups: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (g, b, w) in labeled {
        let e = groups.entry(g).or_default();
        e.0.push(b);
        e.1.push(w);
    }
    let (values, weights): (Vec<f64>, Vec<f64>) = groups
        .values()
        .flat_map(|(b, w)| b.iter().copied().zip(w.iter().copied()))
        .unzip();
    let total = ge_index_weighted(&values, &weights, alpha)?;
    let (w_all, mean) = weighted_mean(&values, &weights)?;
    let norm = w_all * alpha * (alpha - 1.0);

    let mut per_group = BTreeMap::new();
    let (mut between, mut within) = (0.0, 0.0);
    for (g, (b, w)) in &groups {
        let w_g: f64 = w.iter().sum();
        if !(w_g > 0.0) {
            continue;
        }
        let mean_g = b.iter().zip(w).map(|(b, w)| b * w).sum::<f64>() / w_g;
        let rel_g = (mean_g / mean).powf(alpha);
        let between_g = w_g * (rel_g - 1.0) / norm;
        // (W_g/W)(b̄_g/b̄)^α GE(B_g), expanded so a zero group mean stays finite
        let within_g = if alpha == 2.0 {
            b.iter()
                .zip(w)
                .map(|(b, w)| w * ((b - mean_g) / mean).powi(2))
                .sum::<f64>()
                / norm
        } else {
            b.iter()
                .zip(w)
                .map(|(b, w)| w * ((b / mean).powf(alpha) - rel_g))
                .sum::<f64>()
                / norm
        };
        between += between_g;
        within += within_g;
        per_group.insert(
            g.to_string(),
            GroupTerms {
                between: between_g,
                within: within_g,
            },
        );
    }
    Ok(InequalityReport {
        total,
        between,
        within,
        per_group,
        alpha,
        display_multiplier: DISPLAY_MULTIPLIER,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_benefits_have_zero_inequality() {
        assert_eq!(ge_index(&[5.0, 5.0, 5.0], 2.0).unwrap(), 0.0);
    }

    #[test]
    fn hand_values() {
        assert!((ge_index(&[1.0, 3.0], 2.0).unwrap() - 0.125).abs() < 1e-15);
        assert!((ge_index(&[1.0, 2.0, 2.0, 3.0], 2.0).unwrap() - 0.0625).abs() < 1e-15);
    }

    #[test]
    fn zero_mean_is_domain_error() {
        assert!(matches!(ge_index(&[-1.0, 1.0], 2.0), Err(Error::Domain(_))));
        assert!(matches!(ge_index(&[], 2.0), Err(Error::Domain(_))));
    }

    #[test]
    fn fractional_alpha_rejects_nonpositive() {
        assert!(ge_index(&[-1.0, 3.0], 0.5).is_err());
        assert!(ge_index(&[1.0, 3.0], 0.5).is_ok());
        assert!(ge_index(&[1.0, 3.0], 1.0).is_err());
    }

    #[test]
    fn single_group_is_all_within() {
        let r = decompose([("a", 1.0), ("a", 3.0)], 2.0).unwrap();
        assert!(r.between.abs() < 1e-15);
        assert!((r.within - r.total).abs() < 1e-15);
    }

    #[test]
    fn equal_group_means_have_no_between() {
        let r = decompose([("a", 1.0), ("a", 3.0), ("b", 2.0), ("b", 2.0)], 2.0).unwrap();
        assert!(r.between.abs() < 1e-15);
        assert!((r.within - 0.0625).abs() < 1e-15);
        assert!((r.total - 0.0625).abs() < 1e-15);
    }

    #[test]
    fn constant_groups_have_no_within() {
        let r = decompose([("a", 1.0), ("a", 1.0), ("b", 3.0), ("b", 3.0)], 2.0).unwrap();
        assert!(r.within.abs() < 1e-15);
        assert!((r.between - 0.125).abs() < 1e-15);
        assert!((r.total - 0.125).abs() < 1e-15);
    }

    #[test]
    fn zero_mean_group_stays_finite() {
        let r = decompose([("a", -1.0), ("a", 1.0), ("b", 4.0)], 2.0).unwrap();
        assert!(r.within.is_finite());
        assert!((r.total - r.between - r.within).abs() < 1e-12);
    }
}
