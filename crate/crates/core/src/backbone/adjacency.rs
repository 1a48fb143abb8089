use serde::{Deserialize, Serialize};

use crate::error::{domain_err, Result};
use crate::skeleton::SkeletonGraph;

/// `D^{-1/2} (A + I) D^{-1/2}` over the skeleton's undirected edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedAdjacency {
    pub num_joints: usize,
    /// Dense row-major `V x V` matrix.
    pub matrix: Vec<f64>,
}

impl NormalizedAdjacency {
    pub fn get(&self, v: usize, w: usize) -> f64 {
        self.matrix[v * self.num_joints + w]
    }

    /// Nonzero `(column, value)` pairs of each row.
    pub fn rows(&self) -> Vec<Vec<(usize, f64)>> {
        (0..self.num_joints)
            .map(|v| {
                (0..self.num_joints)
                    .filter_map(|w| {
                        let a = self.get(v, w);
                        (a != 0.0).then_some((w, a))
                    })
                    .collect()
            })
            .collect()
    }

    /// Nonzero `(row, value)` pairs of each column.
    pub fn columns(&self) -> Vec<Vec<(usize, f64)>> {
        (0..self.num_joints)
            .map(|w| {
                (0..self.num_joints)
                    .filter_map(|v| {
                        let a = self.get(v, w);
                        (a != 0.0).then_some((v, a))
                    })
                    .collect()
            })
            .collect()
    }

    /// Relabels joints: new joint `i` is old joint `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let v = self.num_joints;
        let mut matrix = vec![0.0; v * v];
        for i in 0..v {
            for j in 0..v {
                matrix[i * v + j] = self.get(perm[i], perm[j]);
            }
        }
        Self {
            num_joints: v,
            matrix,
        }
    }
}

pub fn build_adjacency(graph: &SkeletonGraph) -> Result<NormalizedAdjacency> {
    let v = graph.num_joints;
    let mut a = vec![0.0; v * v];
    for i in 0..v {
        a[i * v + i] = 1.0;
    }
    for &[p, q] in &graph.edges {
        if p >= v || q >= v {
            return Err(domain_err!("edge ({p}, {q}) out of range for {v} joints"));
        }
        if p != q {
            a[p * v + q] = 1.0;
            a[q * v + p] = 1.0;
        }
    }
    let inv_sqrt_deg: Vec<f64> = (0..v)
        .map(|i| 1.0 / a[i * v..(i + 1) * v].iter().sum::<f64>().sqrt())
        .collect();
    for i in 0..v {
        for j in 0..v {
            a[i * v + j] *= inv_sqrt_deg[i] * inv_sqrt_deg[j];
        }
    }
    Ok(NormalizedAdjacency {
        num_joints: v,
        matrix: a,
    })
}
