//! Policy decisions on a fixed design, with fast weighted "treated sums".
//!
//! Many computations reduce to `S_k(w) = sum_i pi_k(x_i) w_i` for every grid
//! policy `k`. For grids made only of threshold or only of box policies the
//! decision of policy `k` on observation `i` depends on which cell of the
//! tensor partition induced by the grid's cut points `x_i` falls in, so all
//! `K` sums follow from one histogram plus a suffix sum over cells:
//! `O(n + cells + K)` instead of `O(nK)`. Other grids fall back to a dense
//! decision matrix.

use crate::error::{Error, Result};
use crate::model::{Dataset, Policy, PolicyGrid};

#[derive(Debug, Clone)]
pub struct DecisionTable {
    n: usize,
    layout: Layout,
}

#[derive(Debug, Clone)]
enum Layout {
    Tensor(TensorLayout),
    /// One decision column per policy.
    Dense(Vec<Vec<u8>>),
}

#[derive(Debug, Clone)]
struct TensorLayout {
    dims: usize,
    /// Cells per axis (cut points + 1).
    shape: Vec<usize>,
    strides: Vec<usize>,
    /// Per observation and axis: number of cut points `<= x_d`.
    obs_coords: Vec<u32>,
    obs_cell: Vec<usize>,
    /// Per policy and axis: rank of its cut point.
    policy_rank: Vec<u32>,
    /// Flat index of the cell at `rank + 1` on every axis.
    policy_corner: Vec<usize>,
}

fn sorted_unique(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

impl DecisionTable {
    pub fn new(grid: &PolicyGrid, data: &Dataset) -> Result<Self> {
        let policies = grid.policies();
        let all_threshold = policies.iter().all(|p| matches!(p, Policy::Threshold { .. }));
        let all_box = policies.iter().all(|p| matches!(p, Policy::Box { .. }));
        let cuts: Option<Vec<Vec<f64>>> = if all_threshold {
            Some(vec![policies
                .iter()
                .map(|p| match p {
                    Policy::Threshold { a } => *a,
                    _ => unreachable!(),
                })
                .collect()])
        } else if all_box {
            if data.dim() < 3 {
                return Err(Error::DimensionMismatch { expected: 3, found: data.dim() });
            }
            Some(
                (0..3)
                    .map(|d| {
                        policies
                            .iter()
                            .map(|p| match p {
                                Policy::Box { a } => a[d],
                                _ => unreachable!(),
                            })
                            .collect()
                    })
                    .collect(),
            )
        } else {
            None
        };

        let layout = match cuts {
            Some(per_axis) => {
                let cut_points: Vec<Vec<f64>> = per_axis.into_iter().map(sorted_unique).collect();
                Layout::Tensor(TensorLayout::build(&cut_points, policies, data))
            }
            None => Layout::Dense(policies.iter().map(|p| p.decisions(data)).collect::<Result<_>>()?),
        };
        Ok(Self { n: data.len(), layout })
    }

    pub fn n_obs(&self) -> usize {
        self.n
    }

    pub fn n_policies(&self) -> usize {
        match &self.layout {
            Layout::Tensor(t) => t.policy_corner.len(),
            Layout::Dense(cols) => cols.len(),
        }
    }

    pub fn is_tensor(&self) -> bool {
        matches!(self.layout, Layout::Tensor(_))
    }

    #[inline]
    pub fn decide(&self, k: usize, i: usize) -> bool {
        match &self.layout {
            Layout::Tensor(t) => {
                let obs = &t.obs_coords[i * t.dims..(i + 1) * t.dims];
                let pol = &t.policy_rank[k * t.dims..(k + 1) * t.dims];
                obs.iter().zip(pol).all(|(o, p)| o > p)
            }
            Layout::Dense(cols) => cols[k][i] == 1,
        }
    }

    pub fn column(&self, k: usize) -> Vec<u8> {
        (0..self.n).map(|i| u8::from(self.decide(k, i))).collect()
    }

    /// Writes `sum_i pi_k(x_i) * weights[i]` into `out[k]` for every policy.
    pub fn treated_sums(&self, weights: &[f64], out: &mut [f64]) {
        debug_assert_eq!(weights.len(), self.n);
        match &self.layout {
            Layout::Tensor(t) => t.treated_sums(weights, out),
            Layout::Dense(cols) => {
                for (o, col) in out.iter_mut().zip(cols) {
                    *o = col.iter().zip(weights).filter(|(d, _)| **d == 1).map(|(_, w)| w).sum();
                }
            }
        }
    }

    /// Same quantity computed observation by observation. Independent of
    /// the cell layout; used to cross-check the fast path.
    pub fn treated_sums_direct(&self, weights: &[f64], out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            *o = (0..self.n).filter(|&i| self.decide(k, i)).map(|i| weights[i]).sum();
        }
    }
}

impl TensorLayout {
    fn build(cut_points: &[Vec<f64>], policies: &[Policy], data: &Dataset) -> Self {
        let dims = cut_points.len();
        let shape: Vec<usize> = cut_points.iter().map(|c| c.len() + 1).collect();
        let mut strides = vec![1usize; dims];
        for d in (0..dims.saturating_sub(1)).rev() {
            strides[d] = strides[d + 1] * shape[d + 1];
        }

        let n = data.len();
        let mut obs_coords = Vec::with_capacity(n * dims);
        let mut obs_cell = Vec::with_capacity(n);
        for i in 0..n {
            let x = data.x(i);
            let mut flat = 0;
            for d in 0..dims {
                let c = cut_points[d].partition_point(|t| *t <= x[d]);
                obs_coords.push(c as u32);
                flat += c * strides[d];
            }
            obs_cell.push(flat);
        }

        let mut policy_rank = Vec::with_capacity(policies.len() * dims);
        let mut policy_corner = Vec::with_capacity(policies.len());
        for p in policies {
            let cuts: Vec<f64> = match p {
                Policy::Threshold { a } => vec![*a],
                Policy::Box { a } => a.to_vec(),
                Policy::Explicit { .. } => unreachable!("tensor layout only holds feature rules"),
            };
            let mut flat = 0;
            for d in 0..dims {
                let r = cut_points[d].partition_point(|t| *t < cuts[d]);
                policy_rank.push(r as u32);
                flat += (r + 1) * strides[d];
            }
            policy_corner.push(flat);
        }

        Self { dims, shape, strides, obs_coords, obs_cell, policy_rank, policy_corner }
    }

    fn treated_sums(&self, weights: &[f64], out: &mut [f64]) {
        let total: usize = self.shape.iter().product();
        let mut table = vec![0.0; total];
        for (cell, w) in self.obs_cell.iter().zip(weights) {
            table[*cell] += w;
        }
        for d in 0..self.dims {
            let stride = self.strides[d];
            let len = self.shape[d];
            for flat in (0..total).rev() {
                if (flat / stride) % len + 1 < len {
                    table[flat] += table[flat + stride];
                }
            }
        }
        for (o, corner) in out.iter_mut().zip(&self.policy_corner) {
            *o = table[*corner];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{grid_box, grid_threshold, Observation};

    fn data_1d(xs: &[f64]) -> Dataset {
        let obs = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| Observation::new(vec![x], (i % 2) as u8, 0.0, 0.0).unwrap())
            .collect();
        Dataset::new(obs).unwrap()
    }

    #[test]
    fn tensor_decisions_match_policy_rule() {
        let xs = [-1.0, -0.5, 0.0, 0.25, 0.5, 1.0, 0.3333];
        let data = data_1d(&xs);
        let grid = grid_threshold(-1.0, 1.0, 9).unwrap();
        let table = DecisionTable::new(&grid, &data).unwrap();
        assert!(table.is_tensor());
        for (k, p) in grid.policies().iter().enumerate() {
            assert_eq!(table.column(k), p.decisions(&data).unwrap());
        }
    }

    #[test]
    fn box_tensor_sums_match_direct() {
        let mut obs = Vec::new();
        for i in 0..60 {
            let t = i as f64;
            let x = vec![(t * 0.37).sin(), (t * 0.91).cos(), (t * 1.3).sin() * 0.9];
            obs.push(Observation::new(x, (i % 2) as u8, 0.0, 0.0).unwrap());
        }
        let data = Dataset::new(obs).unwrap();
        let mut grid = grid_box(-1.0, 1.0, 5).unwrap();
        grid.push_unique(Policy::Box { a: [0.05, -0.33, 0.2] });
        let table = DecisionTable::new(&grid, &data).unwrap();
        let weights: Vec<f64> = (0..60).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
        let mut fast = vec![0.0; grid.len()];
        let mut slow = vec![0.0; grid.len()];
        table.treated_sums(&weights, &mut fast);
        table.treated_sums_direct(&weights, &mut slow);
        for (f, s) in fast.iter().zip(&slow) {
            assert!((f - s).abs() < 1e-9);
        }
        for (k, p) in grid.policies().iter().enumerate() {
            assert_eq!(table.column(k), p.decisions(&data).unwrap());
        }
    }

    #[test]
    fn mixed_grids_use_dense_layout() {
        let data = data_1d(&[0.1, -0.2, 0.3]);
        let grid = PolicyGrid::new(
            vec![Policy::Threshold { a: 0.0 }, Policy::Explicit { labels: vec![1, 1, 0] }],
            "mixed",
        )
        .unwrap();
        let table = DecisionTable::new(&grid, &data).unwrap();
        assert!(!table.is_tensor());
        assert_eq!(table.column(0), vec![1, 0, 1]);
        assert_eq!(table.column(1), vec![1, 1, 0]);
        let mut out = vec![0.0; 2];
        table.treated_sums(&[1.0, 2.0, 4.0], &mut out);
        assert_eq!(out, vec![5.0, 3.0]);
    }
}
