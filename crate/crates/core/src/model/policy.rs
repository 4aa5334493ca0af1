use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Dataset;
use crate::stats::linspace;

/// A deterministic binary treatment rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Policy {
    /// Treat iff `x[0] >= a`.
    Threshold { a: f64 },
    /// Treat iff `x[k] >= a[k]` for k = 0, 1, 2.
    Box { a: [f64; 3] },
    /// Precomputed decisions aligned with an evaluation design.
    Explicit { labels: Vec<u8> },
}

impl Policy {
    /// Feature dimension the rule needs, if it acts on features at all.
    pub fn required_dim(&self) -> Option<usize> {
        match self {
            Policy::Threshold { .. } => Some(1),
            Policy::Box { .. } => Some(3),
            Policy::Explicit { .. } => None,
        }
    }

    /// Decision for a single feature vector. Explicit policies have no
    /// feature-level rule and return an error.
    pub fn decide(&self, x: &[f64]) -> Result<u8> {
        match self {
            Policy::Threshold { a } => {
                let v = x.first().ok_or(Error::DimensionMismatch { expected: 1, found: 0 })?;
                Ok(u8::from(*v >= *a))
            }
            Policy::Box { a } => {
                if x.len() < 3 {
                    return Err(Error::DimensionMismatch { expected: 3, found: x.len() });
                }
                Ok(u8::from(x[0] >= a[0] && x[1] >= a[1] && x[2] >= a[2]))
            }
            Policy::Explicit { .. } => {
                Err(Error::invalid("explicit policies are evaluated by design index, not by feature"))
            }
        }
    }

    /// Decisions for every observation of a dataset.
    pub fn decisions(&self, data: &Dataset) -> Result<Vec<u8>> {
        match self {
            Policy::Explicit { labels } => {
                if labels.len() != data.len() {
                    return Err(Error::DimensionMismatch { expected: data.len(), found: labels.len() });
                }
                Ok(labels.clone())
            }
            _ => (0..data.len()).map(|i| self.decide(data.x(i))).collect(),
        }
    }
}

/// Evaluates `policy` on each feature vector in `xs`.
pub fn evaluate_policy(policy: &Policy, xs: &[Vec<f64>]) -> Result<Vec<u8>> {
    if xs.is_empty() {
        return Err(Error::invalid("no feature vectors to evaluate"));
    }
    match policy {
        Policy::Explicit { labels } => {
            if labels.len() != xs.len() {
                return Err(Error::DimensionMismatch { expected: xs.len(), found: labels.len() });
            }
            Ok(labels.clone())
        }
        _ => {
            let need = policy.required_dim().unwrap_or(1);
            xs.iter()
                .map(|x| {
                    if x.len() < need {
                        Err(Error::DimensionMismatch { expected: need, found: x.len() })
                    } else {
                        policy.decide(x)
                    }
                })
                .collect()
        }
    }
}

/// A finite, ordered representation of a policy class.
///
/// Band results refer to policies by their index in this list, so the order
/// is part of the grid's identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyGrid {
    policies: Vec<Policy>,
    provenance: String,
}

impl PolicyGrid {
    pub fn new(policies: Vec<Policy>, provenance: impl Into<String>) -> Result<Self> {
        if policies.is_empty() {
            return Err(Error::invalid("policy grid must contain at least one policy"));
        }
        let grid = Self { policies, provenance: provenance.into() };
        grid.check_duplicates()?;
        Ok(grid)
    }

    fn check_duplicates(&self) -> Result<()> {
        let mut keys: Vec<(usize, Vec<u64>)> = self
            .policies
            .iter()
            .enumerate()
            .filter_map(|(k, p)| match p {
                Policy::Threshold { a } => Some((k, vec![0, a.to_bits()])),
                Policy::Box { a } => Some((k, vec![1, a[0].to_bits(), a[1].to_bits(), a[2].to_bits()])),
                Policy::Explicit { .. } => None,
            })
            .collect();
        keys.sort_by(|a, b| a.1.cmp(&b.1));
        for w in keys.windows(2) {
            if w[0].1 == w[1].1 {
                return Err(Error::invalid(format!(
                    "duplicate policies at grid indices {} and {}",
                    w[0].0.min(w[1].0),
                    w[0].0.max(w[1].0)
                )));
            }
        }
        let explicit: Vec<(usize, &Vec<u8>)> = self
            .policies
            .iter()
            .enumerate()
            .filter_map(|(k, p)| match p {
                Policy::Explicit { labels } => Some((k, labels)),
                _ => None,
            })
            .collect();
        for (i, (ki, li)) in explicit.iter().enumerate() {
            if let Some((kj, _)) = explicit[i + 1..].iter().find(|(_, lj)| lj == li) {
                return Err(Error::invalid(format!("duplicate policies at grid indices {ki} and {kj}")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.policies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.policies.is_empty()
    }

    pub fn policies(&self) -> &[Policy] {
        &self.policies
    }

    pub fn get(&self, k: usize) -> &Policy {
        &self.policies[k]
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    /// Appends a policy unless it already occurs; returns its index.
    pub fn push_unique(&mut self, policy: Policy) -> usize {
        if let Some(k) = self.policies.iter().position(|p| *p == policy) {
            return k;
        }
        self.policies.push(policy);
        self.policies.len() - 1
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let grid: Self = serde_json::from_str(text)?;
        grid.check_duplicates()?;
        if grid.policies.is_empty() {
            return Err(Error::invalid("policy grid must contain at least one policy"));
        }
        Ok(grid)
    }
}

/// Evenly spaced threshold policies over `[lo, hi]`.
pub fn grid_threshold(lo: f64, hi: f64, n_points: usize) -> Result<PolicyGrid> {
    if n_points < 2 {
        return Err(Error::invalid(format!("threshold grid needs at least 2 points, got {n_points}")));
    }
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::invalid(format!("threshold grid range [{lo}, {hi}] is degenerate")));
    }
    let policies = linspace(lo, hi, n_points).into_iter().map(|a| Policy::Threshold { a }).collect();
    PolicyGrid::new(policies, format!("threshold grid: {n_points} points over [{lo}, {hi}]"))
}

/// Tensor grid of box policies with `per_axis` corners per coordinate.
pub fn grid_box(lo: f64, hi: f64, per_axis: usize) -> Result<PolicyGrid> {
    if per_axis < 2 {
        return Err(Error::invalid(format!("box grid needs at least 2 points per axis, got {per_axis}")));
    }
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::invalid(format!("box grid range [{lo}, {hi}] is degenerate")));
    }
    let axis = linspace(lo, hi, per_axis);
    let mut policies = Vec::with_capacity(per_axis.pow(3));
    for &a0 in &axis {
        for &a1 in &axis {
            for &a2 in &axis {
                policies.push(Policy::Box { a: [a0, a1, a2] });
            }
        }
    }
    PolicyGrid::new(policies, format!("box grid: {per_axis}^3 corners over [{lo}, {hi}]^3"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_boundary_is_inclusive() {
        let p = Policy::Threshold { a: 0.0 };
        let xs = vec![vec![-0.5], vec![0.0], vec![0.7]];
        assert_eq!(evaluate_policy(&p, &xs).unwrap(), vec![0, 1, 1]);
    }

    #[test]
    fn box_is_componentwise() {
        let p = Policy::Box { a: [0.0, 0.0, 0.0] };
        let xs = vec![vec![1.0, 1.0, 1.0], vec![1.0, -1.0, 1.0]];
        assert_eq!(evaluate_policy(&p, &xs).unwrap(), vec![1, 0]);
        assert!(matches!(
            evaluate_policy(&p, &[vec![1.0, 1.0]]),
            Err(Error::DimensionMismatch { expected: 3, found: 2 })
        ));
    }

    #[test]
    fn explicit_is_identity() {
        let p = Policy::Explicit { labels: vec![1, 0, 1] };
        let xs = vec![vec![0.0]; 3];
        assert_eq!(evaluate_policy(&p, &xs).unwrap(), vec![1, 0, 1]);
        assert!(evaluate_policy(&p, &xs[..2]).is_err());
    }

    #[test]
    fn threshold_grid_examples() {
        let g = grid_threshold(-1.0, 1.0, 3).unwrap();
        let a: Vec<f64> = g
            .policies()
            .iter()
            .map(|p| match p {
                Policy::Threshold { a } => *a,
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(a, vec![-1.0, 0.0, 1.0]);
        assert_eq!(grid_threshold(-1.0, 1.0, 100_000).unwrap().len(), 100_000);
        assert!(grid_threshold(0.0, 0.0, 5).is_err());
        assert!(grid_threshold(-1.0, 1.0, 1).is_err());
    }

    #[test]
    fn grid_rejects_duplicates() {
        let dup = vec![Policy::Threshold { a: 0.5 }, Policy::Threshold { a: 0.5 }];
        assert!(PolicyGrid::new(dup, "dup").is_err());
        let dup_explicit = vec![Policy::Explicit { labels: vec![1, 0] }, Policy::Explicit { labels: vec![1, 0] }];
        assert!(PolicyGrid::new(dup_explicit, "dup").is_err());
    }

    #[test]
    fn grid_json_round_trip_preserves_order() {
        let mut g = grid_threshold(-1.0, 1.0, 7).unwrap();
        g.push_unique(Policy::Box { a: [0.1, -0.2, 0.3] });
        let back = PolicyGrid::from_json(&g.to_json().unwrap()).unwrap();
        assert_eq!(back, g);
        assert!(g.to_json().unwrap().contains("\"kind\": \"threshold\""));
    }
}
