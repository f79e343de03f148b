//! The g, h and α block updates.
//!
//! The h- and α-models are block diagonal: `R̃` decouples into one `T × L`
//! system per `(n, k)` and `R̆` into one `K × L` system per `(n, t)`. Both
//! updates solve those small systems directly; the dense stacked regressors
//! serve as test oracles.

use nalgebra::{DMatrix, DVector};

use super::{AoState, KnownConstants};
use crate::error::{mismatch, Error, Result};
use crate::extract::{objective_for_block, polish, MleGrid, PathTarget};
use crate::geometry::C64;
use crate::stacking::{regressor_g, stack_observation, Stacking};
use crate::tensors::{model_signal, residual_energy, ChannelTensor, SnSField, SteeringField};

/// Reciprocal condition number below which the ridge is applied.
pub const RIDGE_RCOND: f64 = 1e-10;

/// Solves `(G + ρI) x = r` for Hermitian positive semi-definite `G`, where
/// `ρ = ridge · tr(G) / dim` is added only when `G` is ill-conditioned.
/// Returns the solution and whether the ridge was used.
pub(crate) fn solve_normal(
    mut gram: DMatrix<C64>,
    rhs: &DMatrix<C64>,
    ridge: f64,
    context: &'static str,
) -> Result<(DMatrix<C64>, bool)> {
    let dim = gram.nrows();
    let eig = gram.clone().symmetric_eigenvalues();
    let (lo, hi) = eig
        .iter()
        .fold((f64::INFINITY, 0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let mut engaged = false;
    if !(hi > 0.0) || lo < RIDGE_RCOND * hi {
        let trace: f64 = (0..dim).map(|i| gram[(i, i)].re).sum();
        let rho = ridge * trace / dim as f64;
        if !(rho > 0.0) {
            return Err(Error::Singular(context));
        }
        for i in 0..dim {
            gram[(i, i)] += rho;
        }
        engaged = true;
    }
    match gram.clone().cholesky() {
        Some(ch) => Ok((ch.solve(rhs), engaged)),
        None => gram
            .lu()
            .solve(rhs)
            .map(|x| (x, engaged))
            .ok_or(Error::Singular(context)),
    }
}

/// LS gains: `g = (R̄ᴴR̄)⁻¹ R̄ᴴ ȳ`, with the ridge fallback.
pub fn step_g(
    y: &ChannelTensor,
    h: &SteeringField,
    alpha: &SnSField,
    ridge: f64,
) -> Result<(Vec<C64>, bool)> {
    if h.n != y.n || h.k != y.k || alpha.t != y.t || alpha.n != y.n || alpha.l != h.l {
        return Err(mismatch("g-step operands disagree in size"));
    }
    let r = regressor_g(h, alpha);
    let yb = DVector::from_vec(stack_observation(Stacking::G, y));
    let rh = r.adjoint();
    let gram = &rh * &r;
    let rhs = DMatrix::from_column_slice(h.l, 1, (&rh * yb).as_slice());
    let (x, engaged) = solve_normal(gram, &rhs, ridge, "g-step")?;
    Ok((x.column(0).iter().copied().collect(), engaged))
}

/// LS steering vectors: one `T × L` system per antenna, shared by all
/// subcarriers. Returns `h` and the number of antennas where the ridge
/// engaged.
pub fn step_h(
    y: &ChannelTensor,
    g: &[C64],
    alpha: &SnSField,
    ridge: f64,
) -> Result<(SteeringField, usize)> {
    let (n, k_count, t_count, l_count) = (y.n, y.k, y.t, g.len());
    if alpha.n != n || alpha.t != t_count || alpha.l != l_count {
        return Err(mismatch("h-step operands disagree in size"));
    }
    let mut h = SteeringField::zeros(n, l_count, k_count);
    let mut events = 0;
    for i in 0..n {
        let a = DMatrix::from_fn(t_count, l_count, |t, l| g[l] * alpha.get(i, l, t));
        let ah = a.adjoint();
        let obs = DMatrix::from_fn(t_count, k_count, |t, k| y.get(i, k, t));
        let (x, engaged) = solve_normal(&ah * &a, &(&ah * obs), ridge, "h-step")?;
        events += engaged as usize;
        for k in 0..k_count {
            for l in 0..l_count {
                let idx = h.index(i, l, k);
                h.data[idx] = x[(l, k)];
            }
        }
    }
    Ok((h, events))
}

/// LMMSE amplitudes with prior mean `b` and variance
/// `σ_b²(1 − b) + σ_v² b`, solved per `(n, t)`:
/// `α = μ + Σ Cᴴ (C Σ Cᴴ + σ_n² I)⁻¹ (y − C μ)`.
pub fn step_alpha(
    y: &ChannelTensor,
    g: &[C64],
    h: &SteeringField,
    b: &[f64],
    known: &KnownConstants,
) -> Result<SnSField> {
    let (n, k_count, t_count, l_count) = (y.n, y.k, y.t, g.len());
    if h.n != n || h.k != k_count || h.l != l_count || b.len() != n * l_count {
        return Err(mismatch("α-step operands disagree in size"));
    }
    let mut out = SnSField::filled(n, l_count, t_count, C64::new(0.0, 0.0));
    for i in 0..n {
        let c = DMatrix::from_fn(k_count, l_count, |k, l| g[l] * h.get(i, l, k));
        let mu = DVector::from_fn(l_count, |l, _| C64::new(b[l * n + i], 0.0));
        let var = DVector::from_fn(l_count, |l, _| known.prior_var(b[l * n + i]));
        let sc = DMatrix::from_fn(l_count, k_count, |l, k| c[(k, l)].conj() * var[l]);
        let mut m = &c * &sc;
        for k in 0..k_count {
            m[(k, k)] += known.noise_var;
        }
        let resid = DMatrix::from_fn(k_count, t_count, |k, t| {
            y.get(i, k, t) - (c.row(k) * &mu)[0]
        });
        let x = match m.clone().cholesky() {
            Some(ch) => ch.solve(&resid),
            None => m.lu().solve(&resid).ok_or(Error::Singular("α-step"))?,
        };
        let upd = &sc * x;
        for t in 0..t_count {
            for l in 0..l_count {
                let idx = out.index(i, l, t);
                out.data[idx] = mu[l] + upd[(l, t)];
            }
        }
    }
    Ok(out)
}

/// Target for path `l` with every other path's contribution removed; the
/// offset makes `offset + J` the residual energy.
pub fn path_target(
    y: &ChannelTensor,
    g: &[C64],
    h: &SteeringField,
    alpha: &SnSField,
    l: usize,
) -> PathTarget {
    let (n, k_count, t_count) = (y.n, y.k, y.t);
    let model = model_signal(g, h, alpha);
    let mut u = vec![C64::new(0.0, 0.0); k_count * n];
    let mut w = vec![0.0; n];
    let mut offset = 0.0;
    for t in 0..t_count {
        let a = alpha.path_snapshot(l, t);
        for i in 0..n {
            w[i] += (g[l] * a[i]).norm_sqr();
        }
        for k in 0..k_count {
            let hk = h.path_subcarrier(l, k);
            let yk = y.column(k, t);
            let mk = model.column(k, t);
            for i in 0..n {
                let c = g[l] * a[i];
                let e = yk[i] - mk[i] + c * hk[i];
                u[k * n + i] += c.conj() * e;
                offset += e.norm_sqr();
            }
        }
    }
    PathTarget { u, w, offset }
}

/// Updates each path's `(d_UE, d, θ)` and common phase in turn, keeping a
/// change only when it lowers `f₁`. Returns how many paths moved.
pub fn step_h_parametric(
    y: &ChannelTensor,
    known: &KnownConstants,
    grid: &MleGrid,
    s: &mut AoState,
) -> Result<usize> {
    let paths = s
        .paths
        .clone()
        .ok_or_else(|| mismatch("parametric h-step needs path geometry"))?;
    let mut moved = 0;
    for (l, current) in paths.iter().enumerate() {
        let target = path_target(y, &s.g, &s.h, &s.alpha, l);
        let now = objective_for_block(&target, &s.h.path(l));
        let fit = polish(&known.geom, &known.ofdm, grid, &target, current);
        if fit.objective < now {
            // `offset + J` cancels against ‖y‖²; confirm on the direct residual
            let before = residual_energy(y, &s.g, &s.h, &s.alpha);
            let (block, phase) = (s.h.path(l), s.phases[l]);
            s.set_path(known, l, fit.geometry, fit.phase);
            if residual_energy(y, &s.g, &s.h, &s.alpha) < before {
                moved += 1;
            } else {
                s.h.set_path(l, &block);
                s.phases[l] = phase;
                if let Some(p) = s.paths.as_mut() {
                    p[l] = *current;
                }
            }
        }
    }
    Ok(moved)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{pinv_solve, posterior_mean_dense};
    use crate::stacking::{regressor_alpha, regressor_h};
    use crate::synth::{reference_scene, synthesize};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rc(rng: &mut ChaCha8Rng) -> C64 {
        C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
    }

    fn random_blocks(
        rng: &mut ChaCha8Rng,
        n: usize,
        k: usize,
        t: usize,
        l: usize,
    ) -> (Vec<C64>, SteeringField, SnSField) {
        let g: Vec<C64> = (0..l).map(|_| rc(rng)).collect();
        let mut h = SteeringField::zeros(n, l, k);
        h.data.iter_mut().for_each(|v| *v = rc(rng));
        let mut a = SnSField::filled(n, l, t, C64::new(0.0, 0.0));
        a.data.iter_mut().for_each(|v| *v = rc(rng));
        (g, h, a)
    }

    fn known(n: usize, k: usize, t: usize, l: usize, noise: f64) -> KnownConstants {
        let mut s = reference_scene();
        s.geom = crate::geometry::ArrayGeometry::new(n, 0.005).unwrap();
        s.ofdm.n_subcarriers = k;
        s.ofdm.n_snapshots = t;
        let mut kc = KnownConstants::from_scene(&s);
        kc.n_paths = l;
        kc.noise_var = noise;
        kc
    }

    #[test]
    fn g_step_recovers_noiseless_gains() {
        let scene = reference_scene();
        let mut s = scene.clone();
        s.noise_var = 1e-30;
        let obs = synthesize(&s, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let (g, engaged) = step_g(&obs.y, &scene.steering(), &obs.sns, 0.0).unwrap();
        assert!(!engaged);
        for (a, b) in g.iter().zip(scene.gains()) {
            assert!((a - b).norm() < 1e-10 * b.norm());
        }
    }

    #[test]
    fn g_step_single_column_is_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (_, h, a) = random_blocks(&mut rng, 4, 2, 3, 1);
        let mut y = ChannelTensor::zeros(4, 2, 3);
        y.data.iter_mut().for_each(|v| *v = rc(&mut rng));
        let (g, _) = step_g(&y, &h, &a, 0.0).unwrap();
        let r = regressor_g(&h, &a);
        let yb = DVector::from_vec(stack_observation(Stacking::G, &y));
        let col = r.column(0);
        let expect = col.dotc(&yb) / col.norm_squared();
        assert!((g[0] - expect).norm() < 1e-12);
    }

    #[test]
    fn g_step_matches_pseudoinverse_and_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let (_, h, a) = random_blocks(&mut rng, 3, 2, 2, 3);
            let mut y = ChannelTensor::zeros(3, 2, 2);
            y.data.iter_mut().for_each(|v| *v = rc(&mut rng));
            let (g, _) = step_g(&y, &h, &a, 0.0).unwrap();
            let r = regressor_g(&h, &a);
            let yb = DVector::from_vec(stack_observation(Stacking::G, &y));
            let oracle = pinv_solve(&r, &yb);
            for i in 0..3 {
                assert!((g[i] - oracle[i]).norm() < 1e-9 * oracle.norm());
            }
            let gv = DVector::from_vec(g);
            let rh = r.adjoint();
            let resid = (&rh * &r * gv - &rh * &yb).norm();
            assert!(resid <= 1e-8 * (&rh * &yb).norm());
        }
    }

    #[test]
    fn singular_without_ridge_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (_, mut h, a) = random_blocks(&mut rng, 3, 2, 2, 2);
        // identical steering for both paths and identical amplitudes → colinear columns
        let p0 = h.path(0);
        h.set_path(1, &p0);
        let mut a2 = a.clone();
        for t in 0..2 {
            for i in 0..3 {
                let idx = a2.index(i, 1, t);
                a2.data[idx] = a.get(i, 0, t);
            }
        }
        let y = ChannelTensor::zeros(3, 2, 2);
        assert!(matches!(step_g(&y, &h, &a2, 0.0), Err(Error::Singular(_))));
        let (g, engaged) = step_g(&y, &h, &a2, 1e-8).unwrap();
        assert!(engaged && g.iter().all(|v| v.norm().is_finite()));
    }

    #[test]
    fn h_step_identity_regressor() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut y = ChannelTensor::zeros(5, 1, 1);
        y.data.iter_mut().for_each(|v| *v = rc(&mut rng));
        let a = SnSField::filled(5, 1, 1, C64::new(1.0, 0.0));
        let (h, events) = step_h(&y, &[C64::new(1.0, 0.0)], &a, 0.0).unwrap();
        assert_eq!(events, 0);
        for i in 0..5 {
            assert!((h.get(i, 0, 0) - y.get(i, 0, 0)).norm() < 1e-15);
        }
    }

    #[test]
    fn h_step_recovers_noiseless_steering() {
        let scene = reference_scene();
        let mut s = scene.clone();
        s.noise_var = 1e-30;
        let obs = synthesize(&s, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let (h, _) = step_h(&obs.y, &scene.gains(), &obs.sns, 0.0).unwrap();
        let truth = scene.steering();
        let err: f64 = h
            .data
            .iter()
            .zip(&truth.data)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        let norm: f64 = truth.data.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        assert!(err < 1e-8 * norm, "{err}");
    }

    #[test]
    fn h_step_matches_dense_least_squares() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..5 {
            let (g, _, a) = random_blocks(&mut rng, 3, 2, 4, 2);
            let mut y = ChannelTensor::zeros(3, 2, 4);
            y.data.iter_mut().for_each(|v| *v = rc(&mut rng));
            let (h, _) = step_h(&y, &g, &a, 0.0).unwrap();
            let r = regressor_h(&g, &a, 2);
            let yt = DVector::from_vec(stack_observation(Stacking::H, &y));
            let oracle = pinv_solve(&r, &yt);
            for i in 0..h.data.len() {
                assert!((h.data[i] - oracle[i]).norm() < 1e-9 * oracle.norm());
            }
            let hv = DVector::from_vec(h.data.clone());
            let rh = r.adjoint();
            assert!((&rh * &r * hv - &rh * &yt).norm() <= 1e-8 * (&rh * &yt).norm());
        }
    }

    #[test]
    fn h_step_ridge_engages_on_colinear_amplitudes() {
        // T = 1 < L = 2: every per-antenna system is rank one
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let (g, _, a) = random_blocks(&mut rng, 4, 2, 1, 2);
        let mut y = ChannelTensor::zeros(4, 2, 1);
        y.data.iter_mut().for_each(|v| *v = rc(&mut rng));
        let (h, events) = step_h(&y, &g, &a, 1e-8).unwrap();
        assert_eq!(events, 4);
        assert!(h.data.iter().all(|v| v.re.is_finite() && v.im.is_finite()));
        assert!(step_h(&y, &g, &a, 0.0).is_err());
    }

    #[test]
    fn alpha_step_identity_regressor_scalar_formula() {
        let kc = known(3, 1, 1, 1, 0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut y = ChannelTensor::zeros(3, 1, 1);
        y.data.iter_mut().for_each(|v| *v = rc(&mut rng));
        let mut h = SteeringField::zeros(3, 1, 1);
        h.data.iter_mut().for_each(|v| *v = C64::new(1.0, 0.0));
        let a = step_alpha(&y, &[C64::new(1.0, 0.0)], &h, &[1.0; 3], &kc).unwrap();
        let w = kc.visible_var / (kc.visible_var + 0.3);
        for i in 0..3 {
            let expect = C64::new(1.0, 0.0) + w * (y.get(i, 0, 0) - 1.0);
            assert!((a.get(i, 0, 0) - expect).norm() < 1e-14);
        }
    }

    #[test]
    fn alpha_step_matches_dense_posterior() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..5 {
            let (n, k, t, l) = (3, 2, 2, 2);
            let mut kc = known(n, k, t, l, rng.gen_range(0.05..1.0));
            kc.blocked_var = rng.gen_range(0.05..1.0);
            kc.visible_var = rng.gen_range(0.01..kc.blocked_var);
            let (g, h, _) = random_blocks(&mut rng, n, k, t, l);
            let mut y = ChannelTensor::zeros(n, k, t);
            y.data.iter_mut().for_each(|v| *v = rc(&mut rng));
            let b: Vec<f64> = (0..n * l).map(|_| rng.gen_range(0..2) as f64).collect();
            let a = step_alpha(&y, &g, &h, &b, &kc).unwrap();
            let r = regressor_alpha(&g, &h, t);
            let yv = DVector::from_vec(stack_observation(Stacking::Alpha, &y));
            let bexp: Vec<f64> = b.iter().copied().cycle().take(n * l * t).collect();
            let var: Vec<f64> = bexp.iter().map(|&v| kc.prior_var(v)).collect();
            let oracle = posterior_mean_dense(&r, &yv, &bexp, &var, kc.noise_var).unwrap();
            for i in 0..a.data.len() {
                assert!((a.data[i] - oracle[i]).norm() < 1e-10 * oracle.norm());
            }
        }
    }

    #[test]
    fn alpha_step_limits() {
        let (n, k, t, l) = (2, 2, 1, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let (g, h, truth) = random_blocks(&mut rng, n, k, t, l);
        let y = model_signal(&g, &h, &truth);
        // vanishing noise with a square invertible regressor → α = R̆⁻¹y̆
        let mut kc = known(n, k, t, l, 1e-14);
        kc.blocked_var = 1.0;
        kc.visible_var = 1.0;
        let a = step_alpha(&y, &g, &h, &[0.0; 4], &kc).unwrap();
        for i in 0..4 {
            assert!((a.data[i] - truth.data[i]).norm() < 1e-6);
        }
        // vanishing prior variance → α = b
        kc.noise_var = 1.0;
        kc.blocked_var = 1e-14;
        kc.visible_var = 1e-14;
        let b = [1.0, 0.0, 0.0, 1.0];
        let a = step_alpha(&y, &g, &h, &b, &kc).unwrap();
        for l in 0..2 {
            for i in 0..2 {
                assert!((a.get(i, l, 0) - b[l * 2 + i]).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn path_target_objective_is_the_residual_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (n, k, t, l) = (5, 3, 2, 3);
        let (g, h, a) = random_blocks(&mut rng, n, k, t, l);
        let mut y = ChannelTensor::zeros(n, k, t);
        y.data.iter_mut().for_each(|v| *v = rc(&mut rng));
        for p in 0..l {
            let target = path_target(&y, &g, &h, &a, p);
            let direct = residual_energy(&y, &g, &h, &a);
            assert!((objective_for_block(&target, &h.path(p)) - direct).abs() < 1e-10 * direct);

            let other: Vec<C64> = (0..n * k).map(|_| rc(&mut rng)).collect();
            let mut h2 = h.clone();
            h2.set_path(p, &other);
            let moved = residual_energy(&y, &g, &h2, &a);
            assert!((objective_for_block(&target, &other) - moved).abs() < 1e-10 * moved);
        }
    }
}
