//! Ising prior on the visibility indicators.
//!
//! Spins are `b' = 2b − 1`. The energy is `½ b'ᵀ E b' + γᵀ b'` with
//! `E = I_T ⊗ blkdiag(Ẽ⁽⁰⁾, …, Ẽ⁽ᴸ⁻¹⁾)`. Each unordered edge `{n, m}` with
//! strength `β` puts `β` at both `(n, m)` and `(m, n)`, so the quadratic form
//! counts the edge once.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, mismatch, Result};

pub const DEFAULT_BETA0: f64 = 1.0;
pub const DEFAULT_GAMMA0: f64 = -0.2;

/// Undirected interaction between antennas `a` and `b` (0-based).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathPrior {
    pub edges: Vec<Edge>,
    /// Per-antenna bias `γ̃⁽ˡ⁾`, length N.
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IsingParams {
    n: usize,
    t: usize,
    paths: Vec<PathPrior>,
    adjacency: Vec<Vec<Vec<(usize, f64)>>>,
}

impl IsingParams {
    pub fn new(n: usize, t: usize, paths: Vec<PathPrior>) -> Result<Self> {
        if n == 0 || t == 0 || paths.is_empty() {
            return Err(invalid("Ising prior needs N, T and L all positive"));
        }
        let mut adjacency = Vec::with_capacity(paths.len());
        for (l, p) in paths.iter().enumerate() {
            if p.bias.len() != n {
                return Err(mismatch(format!(
                    "path {l}: bias has {} entries, expected {n}",
                    p.bias.len()
                )));
            }
            let mut adj = vec![Vec::new(); n];
            for e in &p.edges {
                if e.a >= n || e.b >= n || e.a == e.b {
                    return Err(invalid(format!("path {l}: bad edge ({}, {})", e.a, e.b)));
                }
                if !e.weight.is_finite() {
                    return Err(invalid(format!("path {l}: non-finite edge weight")));
                }
                if adj[e.a].iter().any(|&(m, _)| m == e.b) {
                    return Err(invalid(format!(
                        "path {l}: duplicate edge ({}, {})",
                        e.a, e.b
                    )));
                }
                adj[e.a].push((e.b, e.weight));
                adj[e.b].push((e.a, e.weight));
            }
            adjacency.push(adj);
        }
        Ok(Self {
            n,
            t,
            paths,
            adjacency,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn l(&self) -> usize {
        self.paths.len()
    }

    pub fn nl(&self) -> usize {
        self.n * self.paths.len()
    }

    pub fn nlt(&self) -> usize {
        self.nl() * self.t
    }

    pub fn paths(&self) -> &[PathPrior] {
        &self.paths
    }

    pub fn neighbors(&self, l: usize, n: usize) -> &[(usize, f64)] {
        &self.adjacency[l][n]
    }

    /// True when path `l` is a nearest-neighbour chain `0–1–…–(N−1)`.
    pub fn is_chain(&self, l: usize) -> bool {
        let edges = &self.paths[l].edges;
        edges.len() + 1 == self.n && edges.iter().all(|e| e.a.abs_diff(e.b) == 1)
    }

    /// `Ẽ⁽ˡ⁾` as a dense N×N matrix.
    pub fn path_block(&self, l: usize) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for e in &self.paths[l].edges {
            m[(e.a, e.b)] = e.weight;
            m[(e.b, e.a)] = e.weight;
        }
        m
    }

    /// Full `E` (NLT×NLT). Only sensible at small sizes.
    pub fn assemble_e(&self) -> DMatrix<f64> {
        let nl = self.nl();
        let mut m = DMatrix::zeros(self.nlt(), self.nlt());
        for t in 0..self.t {
            for l in 0..self.l() {
                let off = t * nl + l * self.n;
                m.view_mut((off, off), (self.n, self.n))
                    .copy_from(&self.path_block(l));
            }
        }
        m
    }

    /// `γ = 1_T ⊗ [γ̃⁽⁰⁾; …]`, length NLT.
    pub fn gamma(&self) -> Vec<f64> {
        let single: Vec<f64> = self
            .paths
            .iter()
            .flat_map(|p| p.bias.iter().copied())
            .collect();
        single.iter().copied().cycle().take(self.nlt()).collect()
    }

    fn check_len(&self, len: usize) -> Result<usize> {
        if len == self.nlt() {
            Ok(self.t)
        } else if len == self.nl() {
            Ok(1)
        } else {
            Err(mismatch(format!(
                "indicator length {len}, expected {} or {}",
                self.nl(),
                self.nlt()
            )))
        }
    }

    /// `E x` for a vector of length NL (one replica) or NLT.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        let reps = self.check_len(x.len())?;
        let mut out = vec![0.0; x.len()];
        for r in 0..reps {
            for l in 0..self.l() {
                let off = (r * self.l() + l) * self.n;
                for n in 0..self.n {
                    out[off + n] = self.adjacency[l][n]
                        .iter()
                        .map(|&(m, w)| w * x[off + m])
                        .sum();
                }
            }
        }
        Ok(out)
    }

    fn bias_at(&self, i: usize) -> f64 {
        let j = i % self.nl();
        self.paths[j / self.n].bias[j % self.n]
    }

    /// `½ b'ᵀ E b' + γᵀ b'`. Accepts relaxed `b ∈ [0,1]`; a length-NL input
    /// is scored as a single replica.
    pub fn energy(&self, b: &[f64]) -> Result<f64> {
        let spins: Vec<f64> = b.iter().map(|v| 2.0 * v - 1.0).collect();
        let eb = self.matvec(&spins)?;
        Ok(spins
            .iter()
            .enumerate()
            .map(|(i, &s)| s * (0.5 * eb[i] + self.bias_at(i)))
            .sum())
    }

    /// The same energy as a sum over the edge list.
    pub fn edge_sum_energy(&self, b: &[f64]) -> Result<f64> {
        let reps = self.check_len(b.len())?;
        let spin = |i: usize| 2.0 * b[i] - 1.0;
        let mut e = 0.0;
        for r in 0..reps {
            for (l, p) in self.paths.iter().enumerate() {
                let off = (r * self.l() + l) * self.n;
                for edge in &p.edges {
                    e += edge.weight * spin(off + edge.a) * spin(off + edge.b);
                }
                for n in 0..self.n {
                    e += p.bias[n] * spin(off + n);
                }
            }
        }
        Ok(e)
    }

    /// Energy change from flipping binary entry `i`, in O(degree).
    pub fn energy_gap(&self, b: &[f64], i: usize) -> Result<f64> {
        self.check_len(b.len())?;
        if i >= b.len() {
            return Err(invalid(format!("flip index {i} out of range")));
        }
        let (r, rem) = (i / self.nl(), i % self.nl());
        let (l, n) = (rem / self.n, rem % self.n);
        let off = (r * self.l() + l) * self.n;
        let field: f64 = self.adjacency[l][n]
            .iter()
            .map(|&(m, w)| w * (2.0 * b[off + m] - 1.0))
            .sum();
        let s = 2.0 * b[i] - 1.0;
        Ok(-2.0 * s * (field + self.bias_at(i)))
    }
}

/// Nearest-neighbour chain with strength `−β0` and uniform bias `γ0`.
pub fn default_chain_params(
    n: usize,
    l: usize,
    t: usize,
    beta0: f64,
    gamma0: f64,
) -> Result<IsingParams> {
    if !(beta0.is_finite() && beta0 > 0.0) {
        return Err(invalid(format!("β0 must be positive, got {beta0}")));
    }
    if !gamma0.is_finite() {
        return Err(invalid("γ0 must be finite"));
    }
    let chain: Vec<Edge> = (0..n.saturating_sub(1))
        .map(|a| Edge {
            a,
            b: a + 1,
            weight: -beta0,
        })
        .collect();
    let paths = (0..l)
        .map(|_| PathPrior {
            edges: chain.clone(),
            bias: vec![gamma0; n],
        })
        .collect();
    IsingParams::new(n, t, paths)
}
