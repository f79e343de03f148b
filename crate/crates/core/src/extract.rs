//! Per-path parameter extraction: fitting `(d_UE, d, θ)` to a steering
//! estimate and mapping the result to scatterer positions.
//!
//! All fits minimise the weighted path objective
//!
//! ```text
//! J = Σ_{k,n} w_n |h_k[n]|² − 2 Re Σ_{k,n} conj(h_k[n]) u_k[n]
//! ```
//!
//! over `h_k = e^{jψ} h_k(d_UE, d, θ)`, with the common phase `ψ` concentrated
//! out. With `u = ĥ` and `w = 1` this is `Σ_k ‖ĥ_k − h_k‖² − ‖ĥ‖²`.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, mismatch, Result};
use crate::geometry::{phasor, ArrayGeometry, OfdmConfig, PathGeometry, C64};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MleGrid {
    pub theta_min_deg: f64,
    pub theta_max_deg: f64,
    pub theta_step_deg: f64,
    pub d_min: f64,
    pub d_max: f64,
    pub d_points: usize,
    pub d_log_spaced: bool,
    pub ue_min: f64,
    pub ue_max: f64,
    pub ue_step: f64,
    pub polish_sweeps: usize,
    /// Golden-section iterations per coordinate and sweep.
    pub polish_iterations: usize,
}

impl Default for MleGrid {
    fn default() -> Self {
        Self {
            theta_min_deg: -60.0,
            theta_max_deg: 60.0,
            theta_step_deg: 1.0,
            d_min: 1.0,
            d_max: 60.0,
            d_points: 200,
            d_log_spaced: true,
            ue_min: 0.0,
            ue_max: 20.0,
            ue_step: 0.25,
            polish_sweeps: 3,
            polish_iterations: 40,
        }
    }
}

impl MleGrid {
    pub fn validate(&self) -> Result<()> {
        let ok = self.theta_step_deg > 0.0
            && self.theta_min_deg <= self.theta_max_deg
            && self.theta_min_deg > -90.0
            && self.theta_max_deg < 90.0
            && self.d_min > 0.0
            && self.d_min <= self.d_max
            && self.d_points >= 1
            && self.ue_step > 0.0
            && self.ue_min >= 0.0
            && self.ue_min <= self.ue_max;
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("malformed MLE grid: {self:?}")))
        }
    }

    pub fn thetas(&self) -> Vec<f64> {
        let count = ((self.theta_max_deg - self.theta_min_deg) / self.theta_step_deg + 1e-9).floor()
            as usize
            + 1;
        (0..count)
            .map(|i| (self.theta_min_deg + i as f64 * self.theta_step_deg).to_radians())
            .collect()
    }

    pub fn distances(&self) -> Vec<f64> {
        if self.d_points == 1 {
            return vec![self.d_min];
        }
        let m = (self.d_points - 1) as f64;
        (0..self.d_points)
            .map(|i| {
                let s = i as f64 / m;
                if self.d_log_spaced {
                    self.d_min * (self.d_max / self.d_min).powf(s)
                } else {
                    self.d_min + s * (self.d_max - self.d_min)
                }
            })
            .collect()
    }

    pub fn ue_distances(&self) -> Vec<f64> {
        let count = ((self.ue_max - self.ue_min) / self.ue_step + 1e-9).floor() as usize + 1;
        (0..count)
            .map(|i| self.ue_min + i as f64 * self.ue_step)
            .collect()
    }

    /// Half-width of the local search window around a grid point at `d`.
    fn d_window(&self, d: f64) -> (f64, f64) {
        if self.d_points == 1 {
            return (d, d);
        }
        if self.d_log_spaced {
            let ratio = (self.d_max / self.d_min).powf(1.0 / (self.d_points - 1) as f64);
            (d / ratio, d * ratio)
        } else {
            let step = (self.d_max - self.d_min) / (self.d_points - 1) as f64;
            ((d - step).max(1e-3), d + step)
        }
    }
}

/// Per-path data to be fitted: `u` in `(k, n)` order and weights `w` (length N).
#[derive(Debug, Clone)]
pub struct PathTarget {
    pub u: Vec<C64>,
    pub w: Vec<f64>,
    /// Added to `J` when reporting a residual.
    pub offset: f64,
}

impl PathTarget {
    /// Unweighted target for a direct steering estimate `ĥ` in `(k, n)` order.
    pub fn from_estimate(h: &[C64], n: usize) -> Self {
        Self {
            u: h.to_vec(),
            w: vec![1.0; n],
            offset: h.iter().map(|v| v.norm_sqr()).sum(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathFit {
    pub geometry: PathGeometry,
    /// Unit-modulus common phase `e^{jψ}`.
    pub phase: C64,
    /// `offset + J` at the fitted point.
    pub objective: f64,
}

/// `(d/d_n) e^{−j2π f_1 d_n / c}` and the per-subcarrier rotation
/// `e^{−j2π Δf d_n / c}` for a given `(d, θ)`.
fn base_and_rotation(
    geom: &ArrayGeometry,
    ofdm: &OfdmConfig,
    d: f64,
    theta: f64,
    base: &mut [C64],
    rot: &mut [C64],
) {
    let c = ofdm.speed_of_light;
    let f1 = ofdm.frequency(1);
    let sin_t = theta.sin();
    for n in 0..geom.n_antennas() {
        let pos = geom.offset(n + 1) * geom.spacing();
        let dn = (d * d - 2.0 * d * pos * sin_t + pos * pos).sqrt();
        base[n] = phasor(f1 * dn / c) * (d / dn);
        rot[n] = phasor(ofdm.subcarrier_spacing_hz * dn / c);
    }
}

/// `q_k = Σ_n conj(v_k[n]) u_k[n]` and `Σ_n w_n |v[n]|²` from base/rotation.
fn correlate(base: &[C64], rot: &[C64], target: &PathTarget, q: &mut [C64]) -> f64 {
    let n = base.len();
    let mut energy = 0.0;
    for i in 0..n {
        energy += target.w[i] * base[i].norm_sqr();
    }
    for qk in q.iter_mut() {
        *qk = C64::new(0.0, 0.0);
    }
    for i in 0..n {
        let mut v = base[i];
        for (k, qk) in q.iter_mut().enumerate() {
            *qk += v.conj() * target.u[k * n + i];
            v *= rot[i];
        }
    }
    energy * q.len() as f64
}

/// `S(d_UE) = Σ_k e^{+j2π f_k d_UE / c} q_k`.
fn ue_sum(ofdm: &OfdmConfig, ue: f64, q: &[C64]) -> C64 {
    q.iter()
        .enumerate()
        .map(|(k, &qk)| phasor(ofdm.frequency(k + 1) * ue / ofdm.speed_of_light).conj() * qk)
        .sum()
}

fn phase_of(s: C64) -> C64 {
    if s.norm() > 0.0 {
        s / s.norm()
    } else {
        C64::new(1.0, 0.0)
    }
}

/// Evaluates `J` and the optimal phase at a single parameter point.
pub fn path_objective(
    geom: &ArrayGeometry,
    ofdm: &OfdmConfig,
    target: &PathTarget,
    pg: &PathGeometry,
) -> (f64, C64) {
    let n = geom.n_antennas();
    let mut base = vec![C64::new(0.0, 0.0); n];
    let mut rot = base.clone();
    let mut q = vec![C64::new(0.0, 0.0); ofdm.n_subcarriers];
    base_and_rotation(geom, ofdm, pg.distance, pg.aoa, &mut base, &mut rot);
    let energy = correlate(&base, &rot, target, &mut q);
    let s = ue_sum(ofdm, pg.ue_distance, &q);
    (energy - 2.0 * s.norm(), phase_of(s))
}

/// `offset + J` for an explicit steering block `h` (`(k, n)` order),
/// without concentrating the phase.
pub fn objective_for_block(target: &PathTarget, h: &[C64]) -> f64 {
    let n = target.w.len();
    target.offset
        + h.iter()
            .zip(&target.u)
            .enumerate()
            .map(|(i, (hv, uv))| target.w[i % n] * hv.norm_sqr() - 2.0 * (hv.conj() * uv).re)
            .sum::<f64>()
}

/// Cached base phasors and rotations over the `(θ, d)` grid.
pub struct SteeringTable {
    geom: ArrayGeometry,
    ofdm: OfdmConfig,
    grid: MleGrid,
    thetas: Vec<f64>,
    dists: Vec<f64>,
    ues: Vec<f64>,
    base: Vec<C64>,
    rot: Vec<C64>,
    ue_rot: Vec<C64>,
}

impl std::fmt::Debug for SteeringTable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SteeringTable")
            .field("thetas", &self.thetas.len())
            .field("distances", &self.dists.len())
            .field("ue_distances", &self.ues.len())
            .finish()
    }
}

impl SteeringTable {
    pub fn new(geom: &ArrayGeometry, ofdm: &OfdmConfig, grid: &MleGrid) -> Result<Self> {
        grid.validate()?;
        ofdm.validate()?;
        let n = geom.n_antennas();
        let thetas = grid.thetas();
        let dists = grid.distances();
        let ues = grid.ue_distances();
        let cells: Vec<(Vec<C64>, Vec<C64>)> = thetas
            .par_iter()
            .map(|&th| {
                let mut base = vec![C64::new(0.0, 0.0); n * dists.len()];
                let mut rot = base.clone();
                for (j, &d) in dists.iter().enumerate() {
                    base_and_rotation(
                        geom,
                        ofdm,
                        d,
                        th,
                        &mut base[j * n..(j + 1) * n],
                        &mut rot[j * n..(j + 1) * n],
                    );
                }
                (base, rot)
            })
            .collect();
        let mut base = Vec::with_capacity(n * dists.len() * thetas.len());
        let mut rot = Vec::with_capacity(base.capacity());
        for (b, r) in cells {
            base.extend(b);
            rot.extend(r);
        }
        let mut ue_rot = Vec::with_capacity(ues.len() * ofdm.n_subcarriers);
        for &u in &ues {
            for k in 1..=ofdm.n_subcarriers {
                ue_rot.push(phasor(ofdm.frequency(k) * u / ofdm.speed_of_light).conj());
            }
        }
        Ok(Self {
            geom: *geom,
            ofdm: *ofdm,
            grid: grid.clone(),
            thetas,
            dists,
            ues,
            base,
            rot,
            ue_rot,
        })
    }

    pub fn geom(&self) -> &ArrayGeometry {
        &self.geom
    }

    pub fn ofdm(&self) -> &OfdmConfig {
        &self.ofdm
    }

    pub fn grid(&self) -> &MleGrid {
        &self.grid
    }

    pub fn thetas(&self) -> &[f64] {
        &self.thetas
    }

    pub fn distances(&self) -> &[f64] {
        &self.dists
    }

    pub fn ue_distances(&self) -> &[f64] {
        &self.ues
    }

    fn cell(&self, ti: usize, di: usize) -> (&[C64], &[C64]) {
        let n = self.geom.n_antennas();
        let start = (ti * self.dists.len() + di) * n;
        (&self.base[start..start + n], &self.rot[start..start + n])
    }

    fn check_target(&self, target: &PathTarget) -> Result<()> {
        let n = self.geom.n_antennas();
        if target.w.len() != n || target.u.len() != n * self.ofdm.n_subcarriers {
            return Err(mismatch(format!(
                "path target is {}+{} long, expected {}+{n}",
                target.u.len(),
                target.w.len(),
                n * self.ofdm.n_subcarriers
            )));
        }
        Ok(())
    }

    /// Exhaustive search of `J` over the `(θ, d, d_UE)` grid.
    pub fn grid_search(&self, target: &PathTarget) -> Result<PathFit> {
        self.check_target(target)?;
        let k_count = self.ofdm.n_subcarriers;
        let rows: Vec<(f64, usize, usize, C64)> = (0..self.thetas.len())
            .into_par_iter()
            .map(|ti| {
                let mut q = vec![C64::new(0.0, 0.0); k_count];
                let mut best = (f64::INFINITY, 0, 0, C64::new(1.0, 0.0));
                for di in 0..self.dists.len() {
                    let (base, rot) = self.cell(ti, di);
                    let energy = correlate(base, rot, target, &mut q);
                    for ui in 0..self.ues.len() {
                        let r = &self.ue_rot[ui * k_count..(ui + 1) * k_count];
                        let s: C64 = r.iter().zip(&q).map(|(a, b)| a * b).sum();
                        let j = energy - 2.0 * s.norm();
                        if j < best.0 {
                            best = (j, di, ui, phase_of(s));
                        }
                    }
                }
                best
            })
            .collect();
        let (ti, &(j, di, ui, phase)) = rows
            .iter()
            .enumerate()
            .min_by(|a, b| a.1 .0.total_cmp(&b.1 .0))
            .expect("grid has at least one angle");
        Ok(PathFit {
            geometry: PathGeometry::new(self.dists[di], self.thetas[ti], self.ues[ui]),
            phase,
            objective: target.offset + j,
        })
    }

    /// Non-coherent matched filter: the `(θ, d)` maximising
    /// `Σ_k |v_kᴴ z_k|² / ‖v‖²` for a `(k, n)`-ordered block `z`.
    pub fn matched_filter(&self, z: &[C64]) -> Result<(f64, f64, f64)> {
        let target = PathTarget {
            u: z.to_vec(),
            w: vec![1.0; self.geom.n_antennas()],
            offset: 0.0,
        };
        self.check_target(&target)?;
        let k_count = self.ofdm.n_subcarriers;
        let rows: Vec<(f64, usize)> = (0..self.thetas.len())
            .into_par_iter()
            .map(|ti| {
                let mut q = vec![C64::new(0.0, 0.0); k_count];
                let mut best = (f64::NEG_INFINITY, 0);
                for di in 0..self.dists.len() {
                    let (base, rot) = self.cell(ti, di);
                    let energy = correlate(base, rot, &target, &mut q) / k_count as f64;
                    let score = q.iter().map(|v| v.norm_sqr()).sum::<f64>() / energy;
                    if score > best.0 {
                        best = (score, di);
                    }
                }
                best
            })
            .collect();
        let (ti, &(score, di)) = rows
            .iter()
            .enumerate()
            .max_by(|a, b| a.1 .0.total_cmp(&b.1 .0))
            .expect("grid has at least one angle");
        Ok((self.thetas[ti], self.dists[di], score))
    }
}

/// Golden-section minimisation of `f` on `[lo, hi]`, returning the best of
/// the evaluated points and `(x0, f0)`.
fn golden<F: FnMut(f64) -> f64>(
    mut f: F,
    lo: f64,
    hi: f64,
    x0: f64,
    f0: f64,
    iters: usize,
) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut best = (x0, f0);
    if !(hi > lo) {
        return best;
    }
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..iters {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
        for (x, v) in [(c, fc), (d, fd)] {
            if v < best.1 {
                best = (x, v);
            }
        }
    }
    best
}

/// Coordinate-wise golden-section polish of `(θ, d, d_UE)` around `start`.
/// Only improvements are accepted, so the result never scores worse than
/// `start`.
pub fn polish(
    geom: &ArrayGeometry,
    ofdm: &OfdmConfig,
    grid: &MleGrid,
    target: &PathTarget,
    start: &PathGeometry,
) -> PathFit {
    let eval = |pg: &PathGeometry| path_objective(geom, ofdm, target, pg).0;
    let mut pg = *start;
    let mut best = eval(&pg);
    let th_half = grid.theta_step_deg.to_radians();
    let lim = 89.9f64.to_radians();
    for _ in 0..grid.polish_sweeps {
        let (lo, hi) = ((pg.aoa - th_half).max(-lim), (pg.aoa + th_half).min(lim));
        let base = pg;
        let (x, v) = golden(
            |x| eval(&PathGeometry { aoa: x, ..base }),
            lo,
            hi,
            pg.aoa,
            best,
            grid.polish_iterations,
        );
        pg.aoa = x;
        best = v;

        let (lo, hi) = grid.d_window(pg.distance);
        let base = pg;
        let (x, v) = golden(
            |x| {
                eval(&PathGeometry {
                    distance: x,
                    ..base
                })
            },
            lo,
            hi,
            pg.distance,
            best,
            grid.polish_iterations,
        );
        pg.distance = x;
        best = v;

        // The subcarrier-spacing period is far longer than the d_UE range, so
        // the objective is smooth in d_UE and the whole range is searched.
        let (lo, hi) = (grid.ue_min, grid.ue_max);
        let base = pg;
        let (x, v) = golden(
            |x| {
                eval(&PathGeometry {
                    ue_distance: x,
                    ..base
                })
            },
            lo,
            hi,
            pg.ue_distance,
            best,
            grid.polish_iterations,
        );
        pg.ue_distance = x;
        best = v;
    }
    let (j, phase) = path_objective(geom, ofdm, target, &pg);
    PathFit {
        geometry: pg,
        phase,
        objective: target.offset + j,
    }
}

/// Grid search followed by a local polish.
pub fn fit_target(table: &SteeringTable, target: &PathTarget) -> Result<PathFit> {
    let coarse = table.grid_search(target)?;
    let fine = polish(
        table.geom(),
        table.ofdm(),
        table.grid(),
        target,
        &coarse.geometry,
    );
    Ok(if fine.objective <= coarse.objective {
        fine
    } else {
        coarse
    })
}

/// Fits `(d_UE, d, θ)` to a direct steering estimate `ĥ` (`(k, n)` order).
/// The reported objective is `Σ_k ‖ĥ_k − e^{jψ} h_k‖²`.
pub fn fit_path(h_hat: &[C64], table: &SteeringTable) -> Result<PathFit> {
    fit_target(
        table,
        &PathTarget::from_estimate(h_hat, table.geom().n_antennas()),
    )
}

/// Channel coefficient of a path at the array reference point on the first
/// subcarrier: `g e^{−j2π f_1 (d + d_UE) / c}`. Unlike `g` alone it does not
/// trade off against the range phase.
pub fn reference_coefficient(ofdm: &OfdmConfig, gain: C64, pg: &PathGeometry) -> C64 {
    gain * phasor(ofdm.frequency(1) * (pg.distance + pg.ue_distance) / ofdm.speed_of_light)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathEstimate {
    pub aoa: f64,
    pub distance: f64,
    pub ue_distance: f64,
    pub gain: C64,
    pub visibility: Vec<u8>,
    /// `α̂_t`, one length-N vector per snapshot.
    pub amplitudes: Vec<Vec<C64>>,
    pub position: (f64, f64),
    pub residual: f64,
}

impl PathEstimate {
    pub fn geometry(&self) -> PathGeometry {
        PathGeometry::new(self.distance, self.aoa, self.ue_distance)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationResult {
    pub paths: Vec<PathEstimate>,
}

pub fn scatterer_position(distance: f64, aoa: f64) -> (f64, f64) {
    (distance * aoa.cos(), distance * aoa.sin())
}

pub fn positions(result: &EstimationResult) -> Vec<(f64, f64)> {
    result
        .paths
        .iter()
        .map(|p| scatterer_position(p.distance, p.aoa))
        .collect()
}

/// One path's slice of the estimator output.
#[derive(Debug, Clone, PartialEq)]
pub struct UnpackedPath {
    pub gain: C64,
    /// `ĥ_k`, `(k, n)` order.
    pub steering: Vec<C64>,
    pub amplitudes: Vec<Vec<C64>>,
    pub visibility: Vec<u8>,
}

/// Slices `g`, `h`, `α` and the first replica of `b` per path.
pub fn unpack(
    g: &[C64],
    h: &crate::tensors::SteeringField,
    alpha: &crate::tensors::SnSField,
    b: &[u8],
) -> Result<Vec<UnpackedPath>> {
    let l_count = g.len();
    let n = h.n;
    if h.l != l_count
        || alpha.l != l_count
        || alpha.n != n
        || b.len() < n * l_count
        || b.len() % (n * l_count) != 0
    {
        return Err(mismatch("estimator blocks have inconsistent dimensions"));
    }
    Ok((0..l_count)
        .map(|l| UnpackedPath {
            gain: g[l],
            steering: h.path(l),
            amplitudes: (0..alpha.t)
                .map(|t| alpha.path_snapshot(l, t).to_vec())
                .collect(),
            visibility: b[l * n..(l + 1) * n].to_vec(),
        })
        .collect())
}

/// Wraps an angle to `(−π, π]`.
pub fn wrap_angle(x: f64) -> f64 {
    let y = (x + PI).rem_euclid(2.0 * PI) - PI;
    if y == -PI {
        PI
    } else {
        y
    }
}
