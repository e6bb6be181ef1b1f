//! Undirected weighted communication topology.
//!
//! A [`Network`] owns the adjacency matrix, the derived Laplacian
//! `L = diag(A·1) − A`, per-agent neighbor lists and the two spectral
//! quantities the trigger-parameter bounds need: the algebraic connectivity
//! `λ2` and the largest eigenvalue `λN`.
//!
//! Networks are immutable once built.

use thiserror::Error;

/// Eigenvalues at or below this are treated as zero when deciding connectivity.
pub const CONNECTIVITY_TOL: f64 = 1e-12;

const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("adjacency matrix is empty")]
    Empty,

    #[error("matrix is not square: row {row} has {len} entries, expected {expected}")]
    NotSquare { row: usize, len: usize, expected: usize },

    #[error("matrix is not symmetric at ({i}, {j}): {a_ij} vs {a_ji}")]
    NonSymmetric { i: usize, j: usize, a_ij: f64, a_ji: f64 },

    #[error("negative or non-finite edge weight {weight} at ({i}, {j})")]
    NegativeWeight { i: usize, j: usize, weight: f64 },

    #[error("non-zero self loop {weight} at agent {i}")]
    SelfLoop { i: usize, weight: f64 },

    #[error("graph is disconnected (lambda2 = {lambda2:e})")]
    Disconnected { lambda2: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    adjacency: Vec<Vec<f64>>,
    laplacian: Vec<Vec<f64>>,
    neighbors: Vec<Vec<(usize, f64)>>,
    lambda2: f64,
    lambda_n: f64,
}

/// Builds a network from a symmetric nonnegative adjacency matrix.
///
/// Fails when the graph is disconnected (`λ2 ≤ 1e-12`). A single agent is
/// accepted as trivially connected; its `λ2` and `λN` are both zero.
pub fn build_network(adjacency: Vec<Vec<f64>>) -> Result<Network, GraphError> {
    let n = adjacency.len();
    check_square(&adjacency)?;
    for i in 0..n {
        if adjacency[i][i] != 0.0 {
            return Err(GraphError::SelfLoop { i, weight: adjacency[i][i] });
        }
        for j in 0..n {
            let w = adjacency[i][j];
            if !(w >= 0.0) || !w.is_finite() {
                return Err(GraphError::NegativeWeight { i, j, weight: w });
            }
        }
    }
    check_symmetric(&adjacency)?;

    let laplacian = laplacian_of(&adjacency);
    let eig = spectral_eigenvalues(&laplacian)?;
    let (lambda2, lambda_n) = if n == 1 { (0.0, 0.0) } else { (eig[1], eig[n - 1]) };
    if n > 1 && lambda2 <= CONNECTIVITY_TOL {
        return Err(GraphError::Disconnected { lambda2 });
    }

    let neighbors = adjacency
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .filter(|(_, w)| **w > 0.0)
                .map(|(j, w)| (j, *w))
                .collect()
        })
        .collect();

    Ok(Network { adjacency, laplacian, neighbors, lambda2, lambda_n })
}

/// Unit-weight cycle `0 – 1 – … – (n−1) – 0`.
pub fn ring_adjacency(n: usize) -> Vec<Vec<f64>> {
    let mut a = vec![vec![0.0; n]; n];
    if n < 2 {
        return a;
    }
    for i in 0..n {
        let j = (i + 1) % n;
        if i != j {
            a[i][j] = 1.0;
            a[j][i] = 1.0;
        }
    }
    a
}

fn check_square(m: &[Vec<f64>]) -> Result<(), GraphError> {
    let n = m.len();
    if n == 0 {
        return Err(GraphError::Empty);
    }
    for (row, r) in m.iter().enumerate() {
        if r.len() != n {
            return Err(GraphError::NotSquare { row, len: r.len(), expected: n });
        }
    }
    Ok(())
}

fn check_symmetric(m: &[Vec<f64>]) -> Result<(), GraphError> {
    let n = m.len();
    for i in 0..n {
        for j in (i + 1)..n {
            let (a, b) = (m[i][j], m[j][i]);
            if (a - b).abs() > SYMMETRY_TOL * a.abs().max(b.abs()).max(1.0) {
                return Err(GraphError::NonSymmetric { i, j, a_ij: a, a_ji: b });
            }
        }
    }
    Ok(())
}

fn laplacian_of(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        let mut deg = 0.0;
        for j in 0..n {
            if j != i {
                deg += a[i][j];
                l[i][j] = -a[i][j];
            }
        }
        l[i][i] = deg;
    }
    l
}

/// Ascending eigenvalues of a symmetric matrix (cyclic Jacobi rotations).
pub fn spectral_eigenvalues(m: &[Vec<f64>]) -> Result<Vec<f64>, GraphError> {
    check_square(m)?;
    check_symmetric(m)?;
    let mut a: Vec<Vec<f64>> = m.to_vec();
    let n = a.len();
    let scale: f64 = a.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();

    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p][q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }

    let mut eig: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    eig.sort_by(|x, y| x.total_cmp(y));
    Ok(eig)
}

impl Network {
    pub fn n_agents(&self) -> usize {
        self.adjacency.len()
    }

    pub fn adjacency(&self) -> &[Vec<f64>] {
        &self.adjacency
    }

    pub fn laplacian(&self) -> &[Vec<f64>] {
        &self.laplacian
    }

    /// Neighbors `N_i` with their edge weights `a_ij`.
    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.neighbors[i]
    }

    /// Weighted degree `l_ii`.
    pub fn degree(&self, i: usize) -> f64 {
        self.laplacian[i][i]
    }

    pub fn lambda2(&self) -> f64 {
        self.lambda2
    }

    pub fn lambda_n(&self) -> f64 {
        self.lambda_n
    }

    /// `Σ_j a_ij (v_i − v_j)` for every agent, i.e. `L·v`.
    pub fn laplacian_apply(&self, v: &[f64]) -> Vec<f64> {
        (0..self.n_agents())
            .map(|i| self.neighbors[i].iter().map(|&(j, w)| w * (v[i] - v[j])).sum())
            .collect()
    }

    /// `vᵀ L v`.
    pub fn quadratic_form(&self, v: &[f64]) -> f64 {
        self.laplacian_apply(v).iter().zip(v).map(|(lv, vi)| lv * vi).sum()
    }

    /// `vᵀ L⁺ v` for the component of `v` orthogonal to `1`.
    ///
    /// Solves `(L + 11ᵀ/N) w = v⊥`, whose solution is `L⁺ v⊥` on a connected
    /// graph.
    pub fn pseudo_inverse_form(&self, v: &[f64]) -> f64 {
        let n = self.n_agents();
        let mean = v.iter().sum::<f64>() / n as f64;
        let rhs: Vec<f64> = v.iter().map(|x| x - mean).collect();
        let mut m: Vec<Vec<f64>> = self
            .laplacian
            .iter()
            .map(|row| row.iter().map(|l| l + 1.0 / n as f64).collect())
            .collect();
        let mut w = rhs.clone();
        // Gaussian elimination with partial pivoting
        for col in 0..n {
            let pivot = (col..n).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs())).unwrap();
            m.swap(col, pivot);
            w.swap(col, pivot);
            for row in col + 1..n {
                let factor = m[row][col] / m[col][col];
                for c in col..n {
                    m[row][c] -= factor * m[col][c];
                }
                w[row] -= factor * w[col];
            }
        }
        for row in (0..n).rev() {
            let tail: f64 = (row + 1..n).map(|c| m[row][c] * w[c]).sum();
            w[row] = (w[row] - tail) / m[row][row];
        }
        w.iter().zip(&rhs).map(|(a, b)| a * b).sum()
    }
}
