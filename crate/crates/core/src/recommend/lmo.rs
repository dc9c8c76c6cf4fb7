//! Linear minimization oracle: `argmin ⟨g, δ⟩` over the constraint polytope.
//!
//! Each cell is split as `δ = δ⁺ - δ⁻` with `δ⁺ ∈ [0, budget]` and
//! `δ⁻ ∈ [0, v]`, which linearizes the budget row.

use microlp::{ComparisonOp, OptimizationDirection, Problem};

use super::constraints::Polytope;
use crate::error::{Error, Result};

/// Gradients at or below this magnitude everywhere count as zero.
const ZERO_GRADIENT: f64 = 1e-300;

pub fn linear_minimization_oracle(gradient: &[f64], polytope: &Polytope) -> Result<Vec<f64>> {
    let n = polytope.dim();
    if gradient.len() != n {
        return Err(Error::InvalidInput(format!(
            "gradient has {} cells, polytope has {n}",
            gradient.len()
        )));
    }
    if gradient.iter().any(|g| !g.is_finite()) {
        return Err(Error::Lp("non-finite gradient".into()));
    }
    if polytope.budget <= 0.0 || gradient.iter().all(|g| g.abs() <= ZERO_GRADIENT) {
        return Ok(vec![0.0; n]);
    }

    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let plus: Vec<_> = gradient
        .iter()
        .map(|&g| lp.add_var(g, (0.0, polytope.budget)))
        .collect();
    let minus: Vec<_> = gradient
        .iter()
        .zip(&polytope.current)
        .map(|(&g, &v)| lp.add_var(-g, (0.0, v.max(0.0).min(polytope.budget))))
        .collect();

    let t = polytope.types.len();
    for k in 0..polytope.blocks.len() {
        let terms: Vec<_> = (k * t..(k + 1) * t)
            .flat_map(|c| [(plus[c], 1.0), (minus[c], -1.0)])
            .collect();
        lp.add_constraint(terms.as_slice(), ComparisonOp::Le, polytope.height_room[k]);
    }
    let spend: Vec<_> = (0..n).flat_map(|c| [(plus[c], 1.0), (minus[c], 1.0)]).collect();
    lp.add_constraint(spend.as_slice(), ComparisonOp::Le, polytope.budget);
    if let Some(r) = polytope.residential {
        let terms: Vec<_> = (0..polytope.blocks.len())
            .flat_map(|k| [(plus[k * t + r], 1.0), (minus[k * t + r], -1.0)])
            .collect();
        lp.add_constraint(terms.as_slice(), ComparisonOp::Le, polytope.residential_cap);
        lp.add_constraint(terms.as_slice(), ComparisonOp::Ge, -polytope.residential_cap);
    }

    let outcome = lp.solve().map_err(|e| Error::Lp(format!("{e:?}")))?;
    let solution = outcome
        .into_solution()
        .map_err(|e| Error::Lp(format!("interrupted: {e:?}")))?;
    let vertex: Vec<f64> = (0..n)
        .map(|c| solution.var_value(plus[c]) - solution.var_value(minus[c]))
        .collect();
    // a vertex no better than the origin is replaced by the origin
    let value: f64 = vertex.iter().zip(gradient).map(|(d, g)| d * g).sum();
    if value >= 0.0 {
        return Ok(vec![0.0; n]);
    }
    Ok(vertex)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FunctionType;

    fn one_cell(v: f64, budget: f64) -> Polytope {
        Polytope {
            blocks: vec!["k".into()],
            types: vec![FunctionType::OFFICE],
            current: vec![v],
            height_room: vec![1e9],
            budget,
            residential: None,
            residential_cap: 0.0,
        }
    }

    #[test]
    fn zero_gradient_returns_origin() {
        let p = one_cell(100.0, 50.0);
        assert_eq!(linear_minimization_oracle(&[0.0], &p).unwrap(), vec![0.0]);
    }

    #[test]
    fn positive_gradient_removes_up_to_budget() {
        // δ* = -min(v, budget)
        let p = one_cell(100.0, 50.0);
        let d = linear_minimization_oracle(&[1.0], &p).unwrap();
        assert!((d[0] + 50.0).abs() < 1e-9);
        let p = one_cell(30.0, 50.0);
        let d = linear_minimization_oracle(&[1.0], &p).unwrap();
        assert!((d[0] + 30.0).abs() < 1e-9);
    }

    #[test]
    fn negative_gradient_adds_budget() {
        let p = one_cell(100.0, 50.0);
        let d = linear_minimization_oracle(&[-2.0], &p).unwrap();
        assert!((d[0] - 50.0).abs() < 1e-9);
    }

    #[test]
    fn zero_budget_is_origin() {
        let p = one_cell(100.0, 0.0);
        assert_eq!(linear_minimization_oracle(&[-1.0], &p).unwrap(), vec![0.0]);
    }

    #[test]
    fn height_room_binds() {
        let mut p = one_cell(100.0, 500.0);
        p.height_room = vec![20.0];
        let d = linear_minimization_oracle(&[-1.0], &p).unwrap();
        assert!((d[0] - 20.0).abs() < 1e-9);
    }

    #[test]
    fn residential_cap_binds_net_change() {
        let p = Polytope {
            blocks: vec!["a".into(), "b".into()],
            types: vec![FunctionType::RESIDENTIAL],
            current: vec![100.0, 100.0],
            height_room: vec![1e9, 1e9],
            budget: 1000.0,
            residential: Some(0),
            residential_cap: 10.0,
        };
        // wants to add in a and remove in b; net change capped at 10
        let d = linear_minimization_oracle(&[-2.0, -1.0], &p).unwrap();
        assert!(p.contains(&d, 1e-9));
        assert!((d[0] + d[1]).abs() <= 10.0 + 1e-9);
        assert!(d[0] > 0.0);
    }
}
