//! The three equivalent linear models of the observation tensor.
//!
//! * alpha-form: `y̆ = R̆ α + n̆`, with `y̆ = [vec(Y_1); …; vec(Y_T)]` and
//!   `R̆ = I_T ⊗ ([h_1, …, h_K]ᵀ ⊛ (gᵀ ⊗ I_N))`;
//! * h-form: `ỹ = R̃ h + ñ`, with `ỹ = [vec(Y_1); …; vec(Y_K)]` (columns over
//!   snapshots) and `R̃ = I_K ⊗ ([α_1, …, α_T]ᵀ ⊛ (gᵀ ⊗ I_N))`;
//! * g-form: `ȳ = R̄ g + n̄`, with `ȳ = [y_{1,1}; …; y_{1,T}; …; y_{K,T}]` and
//!   rows of `R̄` given by `R_{k,t} = [α_t^{(0)}, …] ⊙ [h_k^{(0)}, …]`.
//!
//! The h-form and g-form observation vectors share the `(k, t, n)` ordering;
//! the alpha-form uses `(t, k, n)`. Regressors are built densely.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{mismatch, Result};
use crate::geometry::{ArrayGeometry, OfdmConfig, PathParams, C64};
use crate::tensors::{ChannelTensor, Dims, SnSField, SteeringField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stacking {
    Alpha,
    H,
    G,
}

/// A stacked linear model: observation vector and its regressor.
#[derive(Debug, Clone)]
pub struct StackedModel {
    pub stacking: Stacking,
    pub observation: DVector<C64>,
    pub regressor: DMatrix<C64>,
}

/// Position of `y_{k,t}[n]` (0-based) inside the stacked observation vector.
#[inline]
pub fn observation_index(stacking: Stacking, dims: &Dims, n: usize, k: usize, t: usize) -> usize {
    match stacking {
        Stacking::Alpha => (t * dims.k + k) * dims.n + n,
        Stacking::H | Stacking::G => (k * dims.t + t) * dims.n + n,
    }
}

/// Flattens the observation tensor in the order of `stacking`.
pub fn stack_observation(stacking: Stacking, y: &ChannelTensor) -> Vec<C64> {
    let dims = Dims::new(y.n, y.k, y.t, 0);
    let mut out = vec![C64::new(0.0, 0.0); y.data.len()];
    for t in 0..y.t {
        for k in 0..y.k {
            for n in 0..y.n {
                out[observation_index(stacking, &dims, n, k, t)] = y.get(n, k, t);
            }
        }
    }
    out
}

/// Index permutation `p` with `stacked_b[i] = stacked_a[p[i]]`.
pub fn permutation_between_stackings(a: Stacking, b: Stacking, dims: &Dims) -> Vec<usize> {
    let mut perm = vec![0; dims.nkt()];
    for t in 0..dims.t {
        for k in 0..dims.k {
            for n in 0..dims.n {
                perm[observation_index(b, dims, n, k, t)] = observation_index(a, dims, n, k, t);
            }
        }
    }
    perm
}

pub fn apply_permutation<T: Copy>(perm: &[usize], v: &[T]) -> Vec<T> {
    perm.iter().map(|&i| v[i]).collect()
}

fn check_blocks(g: &[C64], h: &SteeringField, alpha: &SnSField) -> Result<Dims> {
    if h.l != g.len() || alpha.l != g.len() || h.n != alpha.n {
        return Err(mismatch(format!(
            "gain/steering/amplitude blocks disagree: L = {}/{}/{}, N = {}/{}",
            g.len(),
            h.l,
            alpha.l,
            h.n,
            alpha.n
        )));
    }
    Ok(Dims::new(h.n, h.k, alpha.t, g.len()))
}

/// `R̆ ∈ C^{NKT × NLT}`.
pub fn regressor_alpha(g: &[C64], h: &SteeringField, t_count: usize) -> DMatrix<C64> {
    let dims = Dims::new(h.n, h.k, t_count, g.len());
    let mut r = DMatrix::zeros(dims.nkt(), dims.nlt());
    for t in 0..dims.t {
        for k in 0..dims.k {
            for (l, &gl) in g.iter().enumerate() {
                for n in 0..dims.n {
                    let row = observation_index(Stacking::Alpha, &dims, n, k, t);
                    let col = (t * dims.l + l) * dims.n + n;
                    r[(row, col)] = gl * h.get(n, l, k);
                }
            }
        }
    }
    r
}

/// `R̃ ∈ C^{NTK × NLK}`.
pub fn regressor_h(g: &[C64], alpha: &SnSField, k_count: usize) -> DMatrix<C64> {
    let dims = Dims::new(alpha.n, k_count, alpha.t, g.len());
    let mut r = DMatrix::zeros(dims.nkt(), dims.nlk());
    for k in 0..dims.k {
        for t in 0..dims.t {
            for (l, &gl) in g.iter().enumerate() {
                for n in 0..dims.n {
                    let row = observation_index(Stacking::H, &dims, n, k, t);
                    let col = (k * dims.l + l) * dims.n + n;
                    r[(row, col)] = gl * alpha.get(n, l, t);
                }
            }
        }
    }
    r
}

/// `R̄ ∈ C^{NKT × L}`.
pub fn regressor_g(h: &SteeringField, alpha: &SnSField) -> DMatrix<C64> {
    let dims = Dims::new(h.n, h.k, alpha.t, h.l);
    let mut r = DMatrix::zeros(dims.nkt(), dims.l);
    for k in 0..dims.k {
        for t in 0..dims.t {
            for l in 0..dims.l {
                let a = alpha.path_snapshot(l, t);
                let hk = h.path_subcarrier(l, k);
                for n in 0..dims.n {
                    let row = observation_index(Stacking::G, &dims, n, k, t);
                    r[(row, l)] = a[n] * hk[n];
                }
            }
        }
    }
    r
}

/// Regressor of `stacking` built from explicit parameter blocks.
pub fn regressor(
    stacking: Stacking,
    g: &[C64],
    h: &SteeringField,
    alpha: &SnSField,
) -> Result<DMatrix<C64>> {
    let dims = check_blocks(g, h, alpha)?;
    Ok(match stacking {
        Stacking::Alpha => regressor_alpha(g, h, dims.t),
        Stacking::H => regressor_h(g, alpha, dims.k),
        Stacking::G => regressor_g(h, alpha),
    })
}

/// The parameter vector that `stacking`'s regressor multiplies.
pub fn parameter_vector(
    stacking: Stacking,
    g: &[C64],
    h: &SteeringField,
    alpha: &SnSField,
) -> Vec<C64> {
    match stacking {
        Stacking::Alpha => alpha.data.clone(),
        Stacking::H => h.data.clone(),
        Stacking::G => g.to_vec(),
    }
}

/// Builds one of the stacked models from path parameters, an amplitude
/// realisation and the observation tensor.
pub fn build_stacked_model(
    stacking: Stacking,
    paths: &[PathParams],
    sns: &SnSField,
    geom: &ArrayGeometry,
    ofdm: &OfdmConfig,
    y: &ChannelTensor,
) -> Result<StackedModel> {
    for (l, p) in paths.iter().enumerate() {
        p.validate(l)?;
    }
    let dims = Dims::from_config(geom, ofdm, paths.len());
    if sns.n != dims.n || sns.l != dims.l || sns.t != dims.t {
        return Err(mismatch(format!(
            "SnS field is {}x{}x{}, scene needs {}x{}x{}",
            sns.n, sns.l, sns.t, dims.n, dims.l, dims.t
        )));
    }
    if y.n != dims.n || y.k != dims.k || y.t != dims.t {
        return Err(mismatch(
            "observation tensor does not match scene dimensions",
        ));
    }
    let g: Vec<C64> = paths.iter().map(|p| p.gain).collect();
    let geoms: Vec<_> = paths.iter().map(|p| p.geometry()).collect();
    let h = SteeringField::from_geometry(geom, ofdm, &geoms);
    Ok(StackedModel {
        stacking,
        observation: DVector::from_vec(stack_observation(stacking, y)),
        regressor: regressor(stacking, &g, &h, sns)?,
    })
}
