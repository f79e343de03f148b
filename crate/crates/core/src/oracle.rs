//! Slow, direct reference implementations used to check the fast paths.

use nalgebra::{DMatrix, DVector};

use crate::ao::QpProblem;
use crate::error::{Error, Result};
use crate::geometry::{ArrayGeometry, PathParams, C64};
use crate::tensors::{ChannelTensor, SnSField};

/// Two-point distance between the scatterer at `(d cos θ, d sin θ)` and the
/// 1-based antenna `n` at `(0, δ_n Δ)`.
pub fn cartesian_distance(geom: &ArrayGeometry, d: f64, theta: f64, n: usize) -> f64 {
    let (ax, ay) = geom.antenna_position(n);
    let (sx, sy) = (d * theta.cos(), d * theta.sin());
    (sx - ax).hypot(sy - ay)
}

/// Minimum-norm least-squares solution via the SVD.
pub fn pinv_solve(r: &DMatrix<C64>, y: &DVector<C64>) -> DVector<C64> {
    let svd = r.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    svd.solve(y, smax * 1e-12)
        .expect("SVD computed with both factors")
}

/// Posterior mean of `w` in `y = R w + n`, `w ~ CN(μ, diag(var))`,
/// `n ~ CN(0, σ² I)`, in information form:
/// `(RᴴR/σ² + Σ⁻¹)⁻¹ (Rᴴy/σ² + Σ⁻¹μ)`.
pub fn posterior_mean_dense(
    r: &DMatrix<C64>,
    y: &DVector<C64>,
    mu: &[f64],
    var: &[f64],
    noise: f64,
) -> Result<DVector<C64>> {
    let m = r.ncols();
    let rh = r.adjoint();
    let mut info = &rh * r / C64::new(noise, 0.0);
    let mut rhs = &rh * y / C64::new(noise, 0.0);
    for i in 0..m {
        info[(i, i)] += 1.0 / var[i];
        rhs[i] += mu[i] / var[i];
    }
    info.lu()
        .solve(&rhs)
        .ok_or(Error::Singular("dense posterior"))
}

/// Exhaustive minimum of the tied b-step objective over `{0,1}^{NL}`.
pub fn exhaustive_qp(p: &QpProblem) -> (Vec<u8>, f64) {
    let s = p.tied_linear();
    let nl = s.len();
    assert!(nl <= 24, "exhaustive search limited to 24 variables");
    let mut best = (Vec::new(), f64::INFINITY);
    let mut x = vec![0.0; nl];
    for mask in 0..(1u64 << nl) {
        for (i, v) in x.iter_mut().enumerate() {
            *v = ((mask >> i) & 1) as f64;
        }
        let val = p.objective_tied(&x, &s);
        if val < best.1 {
            best = (x.iter().map(|&v| v as u8).collect(), val);
        }
    }
    best
}

/// `y_{k,t}[n] = Σ_l g_l α_{n,t}^{(l)} h_k^{(l)}[n]`, one scalar at a time.
pub fn direct_observation(
    geom: &ArrayGeometry,
    ofdm: &crate::geometry::OfdmConfig,
    paths: &[PathParams],
    alpha: &SnSField,
) -> Result<ChannelTensor> {
    let (n, k_count, t_count) = (geom.n_antennas(), ofdm.n_subcarriers, alpha.t);
    let mut out = ChannelTensor::zeros(n, k_count, t_count);
    for k in 1..=k_count {
        let hs: Vec<Vec<C64>> = paths
            .iter()
            .map(|p| crate::geometry::steering_vector(geom, ofdm, p, k))
            .collect::<Result<_>>()?;
        for t in 0..t_count {
            for i in 0..n {
                let mut v = C64::new(0.0, 0.0);
                for (l, p) in paths.iter().enumerate() {
                    v += p.gain * alpha.get(i, l, t) * hs[l][i];
                }
                let idx = out.index(i, k - 1, t);
                out.data[idx] = v;
            }
        }
    }
    Ok(out)
}
