//! Starting point for the alternating optimization.
//!
//! 1. Coarse search: non-coherent matched filter over the `(θ, d)` grid with
//!    successive cancellation; `d_UE = 0` and LS gains.
//! 2. Refinement: per-path parametric updates plus the g-step, with `α` held
//!    at its prior mean.
//! 3. Visibility scan: per antenna, the marginal Gaussian likelihood of every
//!    joint visibility hypothesis across paths, combined with the Ising chain
//!    and solved exactly by dynamic programming along the array.
//!
//! Steps 2 and 3 are repeated once with `α = b` before handing over.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::steps::{solve_normal, step_g, step_h_parametric};
use super::{AoConfig, AoState, KnownConstants};
use crate::error::{invalid, mismatch, Result};
use crate::extract::{MleGrid, SteeringTable};
use crate::geometry::{steering_matrix, PathGeometry, C64};
use crate::ising::IsingParams;
use crate::tensors::{ChannelTensor, SnSField, SteeringField};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitConfig {
    /// Estimate the starting visibility from the data; otherwise start from
    /// all-visible.
    pub vr_scan: bool,
    pub refine_sweeps: usize,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            vr_scan: true,
            refine_sweeps: 3,
        }
    }
}

/// Grid winners and LS gains from the coarse search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoarseInit {
    pub paths: Vec<PathGeometry>,
    pub gains: Vec<C64>,
}

fn snapshot_mean(y: &ChannelTensor) -> Vec<C64> {
    let mut z = vec![C64::new(0.0, 0.0); y.n * y.k];
    for t in 0..y.t {
        for k in 0..y.k {
            for (i, v) in y.column(k, t).iter().enumerate() {
                z[k * y.n + i] += v / y.t as f64;
            }
        }
    }
    z
}

pub fn coarse_paths(
    y: &ChannelTensor,
    known: &KnownConstants,
    table: &SteeringTable,
    ridge: f64,
) -> Result<CoarseInit> {
    if known.n_paths == 0 {
        return Err(invalid("at least one path is required"));
    }
    if y.n != known.geom.n_antennas()
        || y.k != known.ofdm.n_subcarriers
        || y.t != known.ofdm.n_snapshots
    {
        return Err(mismatch(
            "observation tensor does not match the known constants",
        ));
    }
    let z = snapshot_mean(y);
    let mut residual = z.clone();
    let mut paths = Vec::with_capacity(known.n_paths);
    let mut columns: Vec<Vec<C64>> = Vec::new();
    let mut gains = Vec::new();
    for _ in 0..known.n_paths {
        let (theta, d, _) = table.matched_filter(&residual)?;
        let pg = PathGeometry::new(d, theta, 0.0);
        paths.push(pg);
        columns.push(steering_matrix(&known.geom, &known.ofdm, &pg));
        let v = DMatrix::from_fn(z.len(), columns.len(), |r, c| columns[c][r]);
        let vh = v.adjoint();
        let rhs = &vh * DMatrix::from_column_slice(z.len(), 1, &z);
        let (g, _) = solve_normal(&vh * &v, &rhs, ridge.max(1e-12), "coarse gains")?;
        gains = g.column(0).iter().copied().collect::<Vec<_>>();
        let fitted = &v * g;
        for (i, r) in residual.iter_mut().enumerate() {
            *r = z[i] - fitted[(i, 0)];
        }
    }
    Ok(CoarseInit { paths, gains })
}

/// Alternates per-path parametric updates and the g-step with `α` fixed.
pub fn refine_paths(
    y: &ChannelTensor,
    known: &KnownConstants,
    grid: &MleGrid,
    state: &mut AoState,
    sweeps: usize,
    ridge: f64,
) -> Result<()> {
    for _ in 0..sweeps {
        step_h_parametric(y, known, grid, state)?;
        let (g, engaged) = step_g(y, &state.h, &state.alpha, ridge)?;
        state.g = g;
        state.ridge_events += engaged as usize;
    }
    Ok(())
}

/// Negative log marginal likelihood of every joint hypothesis per antenna,
/// `cost[n][m]`, where bit `l` of `m` marks path `l` visible.
fn hypothesis_costs(
    y: &ChannelTensor,
    g: &[C64],
    h: &SteeringField,
    known: &KnownConstants,
) -> Result<Vec<Vec<f64>>> {
    let (n, k_count, t_count, l_count) = (y.n, y.k, y.t, g.len());
    let hyps = 1usize << l_count;
    let mut costs = vec![vec![0.0; hyps]; n];
    for i in 0..n {
        let c: Vec<Vec<C64>> = (0..l_count)
            .map(|l| (0..k_count).map(|k| g[l] * h.get(i, l, k)).collect())
            .collect();
        for (m, cost) in costs[i].iter_mut().enumerate() {
            let mut cov =
                DMatrix::<C64>::identity(k_count, k_count) * C64::new(known.noise_var, 0.0);
            let mut mean = vec![C64::new(0.0, 0.0); k_count];
            for l in 0..l_count {
                let visible = (m >> l) & 1 == 1;
                let v = if visible {
                    known.visible_var
                } else {
                    known.blocked_var
                };
                for a in 0..k_count {
                    if visible {
                        mean[a] += c[l][a];
                    }
                    for b in 0..k_count {
                        cov[(a, b)] += c[l][a] * c[l][b].conj() * v;
                    }
                }
            }
            let ch = cov
                .cholesky()
                .ok_or(crate::error::Error::Singular("visibility scan"))?;
            let logdet: f64 = 2.0
                * ch.l_dirty()
                    .diagonal()
                    .iter()
                    .map(|d| d.re.ln())
                    .sum::<f64>();
            let resid = DMatrix::from_fn(k_count, t_count, |k, t| y.get(i, k, t) - mean[k]);
            let w = ch.solve(&resid);
            let quad: f64 = resid
                .iter()
                .zip(w.iter())
                .map(|(a, b)| (a.conj() * b).re)
                .sum();
            *cost = quad + t_count as f64 * logdet;
        }
    }
    Ok(costs)
}

fn spin(m: usize, l: usize) -> f64 {
    if (m >> l) & 1 == 1 {
        1.0
    } else {
        -1.0
    }
}

fn edge_weight(ising: &IsingParams, l: usize, a: usize, b: usize) -> f64 {
    ising
        .neighbors(l, a)
        .iter()
        .find(|&&(m, _)| m == b)
        .map_or(0.0, |&(_, w)| w)
}

/// MAP visibility (length NL) under the marginal likelihood and the Ising
/// prior weighted by the snapshot count, as in the objective.
pub fn vr_scan(
    y: &ChannelTensor,
    g: &[C64],
    h: &SteeringField,
    known: &KnownConstants,
    ising: &IsingParams,
) -> Result<Vec<u8>> {
    let (n, l_count) = (y.n, g.len());
    if ising.n() != n || ising.l() != l_count {
        return Err(mismatch("Ising prior does not match the observation"));
    }
    let tf = y.t as f64;
    let hyps = 1usize << l_count;
    let mut unary = hypothesis_costs(y, g, h, known)?;
    for (i, row) in unary.iter_mut().enumerate() {
        for (m, c) in row.iter_mut().enumerate() {
            *c += tf
                * (0..l_count)
                    .map(|l| ising.paths()[l].bias[i] * spin(m, l))
                    .sum::<f64>();
        }
    }
    let pair = |i: usize, a: usize, b: usize| -> f64 {
        tf * (0..l_count)
            .map(|l| edge_weight(ising, l, i - 1, i) * spin(a, l) * spin(b, l))
            .sum::<f64>()
    };
    let chain_only = (0..l_count).all(|l| {
        ising.paths()[l]
            .edges
            .iter()
            .all(|e| e.a.abs_diff(e.b) == 1)
    });
    let states: Vec<usize> = if chain_only {
        let mut score = unary[0].clone();
        let mut back = vec![vec![0usize; hyps]; n];
        for i in 1..n {
            let mut next = vec![f64::INFINITY; hyps];
            for b in 0..hyps {
                for a in 0..hyps {
                    let v = score[a] + pair(i, a, b);
                    if v < next[b] {
                        next[b] = v;
                        back[i][b] = a;
                    }
                }
                next[b] += unary[i][b];
            }
            score = next;
        }
        let mut m = (0..hyps)
            .min_by(|&a, &b| score[a].total_cmp(&score[b]))
            .expect("non-empty");
        let mut out = vec![0; n];
        for i in (0..n).rev() {
            out[i] = m;
            m = back[i][m];
        }
        out
    } else {
        let mut cur: Vec<usize> = unary
            .iter()
            .map(|row| {
                (0..hyps)
                    .min_by(|&a, &b| row[a].total_cmp(&row[b]))
                    .expect("non-empty")
            })
            .collect();
        for _ in 0..100 {
            let mut changed = false;
            for i in 0..n {
                let local = |m: usize| {
                    unary[i][m]
                        + tf * (0..l_count)
                            .map(|l| {
                                ising
                                    .neighbors(l, i)
                                    .iter()
                                    .map(|&(j, w)| w * spin(m, l) * spin(cur[j], l))
                                    .sum::<f64>()
                            })
                            .sum::<f64>()
                };
                let best = (0..hyps)
                    .min_by(|&a, &b| local(a).total_cmp(&local(b)))
                    .expect("non-empty");
                if local(best) < local(cur[i]) - 1e-12 {
                    cur[i] = best;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        cur
    };
    let mut b = vec![0u8; n * l_count];
    for (i, &m) in states.iter().enumerate() {
        for l in 0..l_count {
            b[l * n + i] = ((m >> l) & 1) as u8;
        }
    }
    Ok(b)
}

fn alpha_from_b(b: &[u8], n: usize, l: usize, t: usize) -> SnSField {
    let vals: Vec<f64> = b
        .iter()
        .map(|&v| v as f64)
        .cycle()
        .take(n * l * t)
        .collect();
    SnSField::from_real(n, l, t, &vals).expect("sized from b")
}

/// Builds the AO starting point from a shared coarse search.
pub fn init_from_coarse(
    y: &ChannelTensor,
    known: &KnownConstants,
    ising: &IsingParams,
    grid: &MleGrid,
    coarse: &CoarseInit,
    config: &AoConfig,
) -> Result<AoState> {
    let d = known.dims();
    let ones = vec![1u8; d.n * d.l];
    let mut s = AoState::from_paths(
        known,
        coarse.gains.clone(),
        coarse.paths.clone(),
        alpha_from_b(&ones, d.n, d.l, d.t),
        ones,
    )?;
    let sweeps = config.init.refine_sweeps;
    refine_paths(y, known, grid, &mut s, sweeps, config.ridge)?;
    if config.init.vr_scan {
        for round in 0..2 {
            let b = vr_scan(y, &s.g, &s.h, known, ising)?;
            s.alpha = alpha_from_b(&b, d.n, d.l, d.t);
            s.b = b;
            if round == 0 {
                refine_paths(y, known, grid, &mut s, sweeps, config.ridge)?;
            }
        }
    }
    let (g, engaged) = step_g(y, &s.h, &s.alpha, config.ridge)?;
    s.g = g;
    s.ridge_events += engaged as usize;
    s.b_relaxed = s.b_real();
    Ok(s)
}

pub fn default_init(
    y: &ChannelTensor,
    known: &KnownConstants,
    ising: &IsingParams,
    table: &SteeringTable,
    config: &AoConfig,
) -> Result<AoState> {
    let coarse = coarse_paths(y, known, table, config.ridge)?;
    init_from_coarse(y, known, ising, table.grid(), &coarse, config)
}
