//! Alternating optimization over gains `g`, steering vectors `h`, per-antenna
//! amplitudes `α` and visibility indicators `b`.
//!
//! The objective is `f₁ + f₂ + f₃`:
//!
//! * `f₁ = ‖y − Σ_l g_l (α ⊙ h)‖² / σ_n²`
//! * `f₂ = Σ |α − b|² / (σ_b²(1 − b) + σ_v² b)`
//! * `f₃ = ½ b'ᵀ E b' + γᵀ b'` over the T-replicated indicator.
//!
//! Each cycle runs the g, h, α and b updates in that order. `b` is tied
//! across snapshots and stored as one length-`NL` vector.

pub mod init;
pub mod qp;
pub mod steps;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, mismatch, Result};
use crate::extract::MleGrid;
use crate::geometry::{steering_matrix, ArrayGeometry, OfdmConfig, PathGeometry, C64};
use crate::ising::IsingParams;
use crate::synth::SceneConfig;
use crate::tensors::{model_signal, ChannelTensor, Dims, SnSField, SteeringField};

pub use init::{
    coarse_paths, default_init, init_from_coarse, refine_paths, vr_scan, CoarseInit, InitConfig,
};
pub use qp::{solve_qp, step_b, QpConfig, QpOutcome, QpProblem};
pub use steps::{path_target, step_alpha, step_g, step_h, step_h_parametric, RIDGE_RCOND};

/// How the steering block is updated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HStepMode {
    /// Per-path fit of `(d_UE, d, θ)` and a common phase; keeps `h` on the
    /// spherical-wavefront manifold.
    Parametric,
    /// Unconstrained least squares over every entry of `h`.
    LeastSquares,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AoConfig {
    pub max_iterations: usize,
    pub tolerance: f64,
    pub ridge: f64,
    pub h_step: HStepMode,
    pub qp: QpConfig,
    pub init: InitConfig,
}

impl Default for AoConfig {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            tolerance: 1e-4,
            ridge: 1e-8,
            h_step: HStepMode::Parametric,
            qp: QpConfig::default(),
            init: InitConfig::default(),
        }
    }
}

impl AoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(invalid("AO needs at least one iteration"));
        }
        if !(self.tolerance > 0.0) {
            return Err(invalid(format!(
                "AO tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return Err(invalid(format!(
                "ridge must be non-negative, got {}",
                self.ridge
            )));
        }
        self.qp.validate()
    }
}

/// Scene quantities the estimator is allowed to know.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KnownConstants {
    pub geom: ArrayGeometry,
    pub ofdm: OfdmConfig,
    pub n_paths: usize,
    pub noise_var: f64,
    pub blocked_var: f64,
    pub visible_var: f64,
}

impl KnownConstants {
    pub fn from_scene(scene: &SceneConfig) -> Self {
        Self {
            geom: scene.geom,
            ofdm: scene.ofdm,
            n_paths: scene.paths.len(),
            noise_var: scene.noise_var,
            blocked_var: scene.blocked_var,
            visible_var: scene.visible_var,
        }
    }

    pub fn dims(&self) -> Dims {
        Dims::from_config(&self.geom, &self.ofdm, self.n_paths)
    }

    /// Prior variance of `α` given a (possibly relaxed) indicator value.
    #[inline]
    pub fn prior_var(&self, b: f64) -> f64 {
        self.blocked_var * (1.0 - b) + self.visible_var * b
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveTerms {
    pub f1: f64,
    pub f2: f64,
    pub f3: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Substep {
    G,
    H,
    Alpha,
    B,
}

/// Objective value after one block update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubstepRecord {
    pub iteration: usize,
    pub step: Substep,
    pub before: f64,
    pub after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AoState {
    pub g: Vec<C64>,
    pub h: SteeringField,
    pub alpha: SnSField,
    /// Last relaxed QP solution, length NL.
    pub b_relaxed: Vec<f64>,
    /// Binary indicator, length NL (first replica of the tied `NLT` vector).
    pub b: Vec<u8>,
    /// Path geometry behind `h` when it was fitted parametrically.
    pub paths: Option<Vec<PathGeometry>>,
    /// Common phase folded into each path's steering block.
    pub phases: Vec<C64>,
    pub history: Vec<ObjectiveTerms>,
    pub substeps: Vec<SubstepRecord>,
    pub converged: bool,
    pub iterations: usize,
    /// b-steps after which the objective went up.
    pub b_increases: usize,
    pub ridge_events: usize,
    pub qp_warnings: usize,
}

impl AoState {
    /// A state whose steering block follows `paths` exactly.
    pub fn from_paths(
        known: &KnownConstants,
        g: Vec<C64>,
        paths: Vec<PathGeometry>,
        alpha: SnSField,
        b: Vec<u8>,
    ) -> Result<Self> {
        let d = known.dims();
        if g.len() != d.l || paths.len() != d.l || b.len() != d.n * d.l {
            return Err(mismatch("initial state does not match the path count"));
        }
        if alpha.n != d.n || alpha.l != d.l || alpha.t != d.t {
            return Err(mismatch("initial amplitudes do not match scene dimensions"));
        }
        let h = SteeringField::from_geometry(&known.geom, &known.ofdm, &paths);
        Ok(Self {
            g,
            h,
            alpha,
            b_relaxed: b.iter().map(|&v| v as f64).collect(),
            b,
            paths: Some(paths),
            phases: vec![C64::new(1.0, 0.0); d.l],
            history: Vec::new(),
            substeps: Vec::new(),
            converged: false,
            iterations: 0,
            b_increases: 0,
            ridge_events: 0,
            qp_warnings: 0,
        })
    }

    pub fn b_real(&self) -> Vec<f64> {
        self.b.iter().map(|&v| v as f64).collect()
    }

    /// `1_T ⊗ b`.
    pub fn b_expanded(&self) -> Vec<u8> {
        let t = self.alpha.t;
        self.b
            .iter()
            .copied()
            .cycle()
            .take(self.b.len() * t)
            .collect()
    }

    /// Writes path `l` as `phase · h(pg)`.
    pub(crate) fn set_path(
        &mut self,
        known: &KnownConstants,
        l: usize,
        pg: PathGeometry,
        phase: C64,
    ) {
        let block: Vec<C64> = steering_matrix(&known.geom, &known.ofdm, &pg)
            .into_iter()
            .map(|v| v * phase)
            .collect();
        self.h.set_path(l, &block);
        if let Some(paths) = self.paths.as_mut() {
            paths[l] = pg;
        }
        self.phases[l] = phase;
    }

    pub fn objective(
        &self,
        y: &ChannelTensor,
        known: &KnownConstants,
        ising: &IsingParams,
    ) -> Result<ObjectiveTerms> {
        objective(
            y,
            &self.g,
            &self.h,
            &self.alpha,
            &self.b_real(),
            known,
            ising,
        )
    }
}

/// `f₁ + f₂ + f₃` with `b` given as one replica (length NL, relaxed allowed).
pub fn objective(
    y: &ChannelTensor,
    g: &[C64],
    h: &SteeringField,
    alpha: &SnSField,
    b: &[f64],
    known: &KnownConstants,
    ising: &IsingParams,
) -> Result<ObjectiveTerms> {
    let (n, l_count) = (alpha.n, alpha.l);
    if b.len() != n * l_count {
        return Err(mismatch(format!(
            "indicator has {} entries, expected {}",
            b.len(),
            n * l_count
        )));
    }
    let model = model_signal(g, h, alpha);
    let f1 = y
        .data
        .iter()
        .zip(&model.data)
        .map(|(a, m)| (a - m).norm_sqr())
        .sum::<f64>()
        / known.noise_var;
    let mut f2 = 0.0;
    for t in 0..alpha.t {
        for l in 0..l_count {
            let a = alpha.path_snapshot(l, t);
            for i in 0..n {
                let bi = b[l * n + i];
                f2 += (a[i] - bi).norm_sqr() / known.prior_var(bi);
            }
        }
    }
    let f3 = alpha.t as f64 * ising.energy(b)?;
    Ok(ObjectiveTerms {
        f1,
        f2,
        f3,
        total: f1 + f2 + f3,
    })
}

fn relative_change(prev: f64, next: f64) -> f64 {
    let scale = prev.abs();
    if scale > 0.0 {
        (next - prev).abs() / scale
    } else {
        (next - prev).abs()
    }
}

/// Cycles g → h → α → b until the relative objective change falls to the
/// tolerance or the iteration budget is spent.
pub fn run_ao(
    y: &ChannelTensor,
    known: &KnownConstants,
    ising: &IsingParams,
    config: &AoConfig,
    grid: &MleGrid,
    init: AoState,
) -> Result<AoState> {
    config.validate()?;
    if config.h_step == HStepMode::Parametric && init.paths.is_none() {
        return Err(invalid(
            "parametric h-step needs path geometry in the initial state",
        ));
    }
    let mut s = init;
    let mut current = s.objective(y, known, ising)?.total;
    if s.history.is_empty() {
        s.history.push(s.objective(y, known, ising)?);
    }
    s.converged = false;
    for it in 1..=config.max_iterations {
        let start = current;

        let (g, ridge) = step_g(y, &s.h, &s.alpha, config.ridge)?;
        s.g = g;
        s.ridge_events += ridge as usize;
        current = record(&mut s, y, known, ising, it, Substep::G, current)?;

        match config.h_step {
            HStepMode::Parametric => {
                step_h_parametric(y, known, grid, &mut s)?;
            }
            HStepMode::LeastSquares => {
                let (h, events) = step_h(y, &s.g, &s.alpha, config.ridge)?;
                s.h = h;
                s.paths = None;
                s.ridge_events += events;
            }
        }
        current = record(&mut s, y, known, ising, it, Substep::H, current)?;

        s.alpha = step_alpha(y, &s.g, &s.h, &s.b_real(), known)?;
        current = record(&mut s, y, known, ising, it, Substep::Alpha, current)?;

        let warm = s.b_relaxed.clone();
        let out = step_b(&s.alpha, known, ising, &config.qp, Some(&warm))?;
        if !out.feasible {
            s.qp_warnings += 1;
            log::warn!("iteration {it}: QP stopped before reaching the near-binary set");
        }
        s.b_relaxed = out.relaxed;
        s.b = out.rounded;
        let before_b = current;
        current = record(&mut s, y, known, ising, it, Substep::B, current)?;
        if current > before_b {
            s.b_increases += 1;
            log::debug!(
                "iteration {it}: b-step raised the objective by {:.3e}",
                current - before_b
            );
        }

        s.history.push(s.objective(y, known, ising)?);
        s.iterations = it;
        if relative_change(start, current) <= config.tolerance {
            s.converged = true;
            break;
        }
    }
    Ok(s)
}

fn record(
    s: &mut AoState,
    y: &ChannelTensor,
    known: &KnownConstants,
    ising: &IsingParams,
    iteration: usize,
    step: Substep,
    before: f64,
) -> Result<f64> {
    let after = s.objective(y, known, ising)?.total;
    s.substeps.push(SubstepRecord {
        iteration,
        step,
        before,
        after,
    });
    Ok(after)
}

/// Writes the per-iteration objective history as CSV.
pub fn write_trace<W: std::io::Write>(state: &AoState, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iteration", "f1", "f2", "f3", "total"])?;
    for (i, t) in state.history.iter().enumerate() {
        w.write_record([
            i.to_string(),
            t.f1.to_string(),
            t.f2.to_string(),
            t.f3.to_string(),
            t.total.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ising::default_chain_params;
    use crate::synth::{
        realize_vr, reference_scene, synthesize, DEFAULT_BLOCKED_VAR, DEFAULT_VISIBLE_VAR,
    };
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn truth_state(scene: &SceneConfig, sns: &SnSField, known: &KnownConstants) -> AoState {
        let vr = realize_vr(scene);
        AoState::from_paths(
            known,
            scene.gains(),
            scene.path_geometries(),
            sns.clone(),
            vr.data.clone(),
        )
        .unwrap()
    }

    #[test]
    fn f2_vanishes_when_alpha_equals_b() {
        let scene = reference_scene();
        let known = KnownConstants::from_scene(&scene);
        let ising = default_chain_params(100, 3, 4, 1.0, -0.2).unwrap();
        let vr = realize_vr(&scene);
        let alpha = SnSField::from_real(100, 3, 4, &vr.expanded(4)).unwrap();
        let y = ChannelTensor::zeros(100, 4, 4);
        let t = objective(
            &y,
            &scene.gains(),
            &scene.steering(),
            &alpha,
            &vr.expanded(1),
            &known,
            &ising,
        )
        .unwrap();
        assert_eq!(t.f2, 0.0);
        let ones = SnSField::filled(100, 3, 4, C64::new(1.0, 0.0));
        let t = objective(
            &y,
            &scene.gains(),
            &scene.steering(),
            &ones,
            &vec![1.0; 300],
            &known,
            &ising,
        )
        .unwrap();
        assert_eq!(t.f2, 0.0);
        assert!((known.prior_var(1.0) - DEFAULT_VISIBLE_VAR).abs() < 1e-18);
        assert!((known.prior_var(0.0) - DEFAULT_BLOCKED_VAR).abs() < 1e-18);
    }

    #[test]
    fn f1_at_truth_is_chi_square() {
        let scene = reference_scene();
        let known = KnownConstants::from_scene(&scene);
        let ising = default_chain_params(100, 3, 4, 1.0, -0.2).unwrap();
        let mut total = 0.0;
        let trials = 20;
        for seed in 0..trials {
            let obs = synthesize(&scene, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let s = truth_state(&scene, &obs.sns, &known);
            total += s.objective(&obs.y, &known, &ising).unwrap().f1;
        }
        let mean = total / trials as f64;
        // E[f₁] = NKT = 1600, sd of the mean = sqrt(1600 / 20)
        assert!(
            (mean - 1600.0).abs() < 4.0 * (1600.0 / trials as f64).sqrt(),
            "{mean}"
        );
    }

    #[test]
    fn epsilon_infinity_runs_one_iteration() {
        let scene = reference_scene();
        let known = KnownConstants::from_scene(&scene);
        let ising = default_chain_params(100, 3, 4, 1.0, -0.2).unwrap();
        let obs = synthesize(&scene, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let init = truth_state(&scene, &obs.sns, &known);
        let cfg = AoConfig {
            tolerance: f64::INFINITY,
            ..AoConfig::default()
        };
        let out = run_ao(&obs.y, &known, &ising, &cfg, &MleGrid::default(), init).unwrap();
        assert_eq!(out.iterations, 1);
        assert_eq!(out.history.len(), 2);
        assert!(out.converged);
        assert_eq!(out.substeps.len(), 4);
    }

    #[test]
    fn noiseless_truth_is_a_fixed_point() {
        let mut scene = reference_scene();
        scene.noise_var = 1e-6;
        let known = KnownConstants::from_scene(&scene);
        let ising = default_chain_params(100, 3, 4, 1.0, -0.2).unwrap();
        let vr = realize_vr(&scene);
        let alpha = SnSField::from_real(100, 3, 4, &vr.expanded(4)).unwrap();
        let y = model_signal(&scene.gains(), &scene.steering(), &alpha);
        let init = truth_state(&scene, &alpha, &known);
        let f3_truth = 4.0 * ising.energy(&vr.expanded(1)).unwrap();
        let out = run_ao(
            &y,
            &known,
            &ising,
            &AoConfig::default(),
            &MleGrid::default(),
            init,
        )
        .unwrap();
        assert!(out.converged);
        assert_eq!(out.iterations, 1, "{:?}", out.history);
        assert_eq!(out.b, vr.data);
        let last = out.history.last().unwrap();
        assert!(
            (last.total - f3_truth).abs() < 1e-6 * f3_truth.abs(),
            "{last:?} vs {f3_truth}"
        );
    }

    #[test]
    fn trace_csv_has_one_row_per_history_entry() {
        let scene = reference_scene();
        let known = KnownConstants::from_scene(&scene);
        let ising = default_chain_params(100, 3, 4, 1.0, -0.2).unwrap();
        let obs = synthesize(&scene, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let init = truth_state(&scene, &obs.sns, &known);
        let cfg = AoConfig {
            max_iterations: 3,
            tolerance: 1e-300,
            ..AoConfig::default()
        };
        let out = run_ao(&obs.y, &known, &ising, &cfg, &MleGrid::default(), init).unwrap();
        assert_eq!(out.history.len(), out.iterations + 1);
        let mut buf = Vec::new();
        write_trace(&out, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), out.history.len() + 1);
        assert!(text.starts_with("iteration,f1,f2,f3,total"));
    }

    #[test]
    fn config_validation() {
        assert!(AoConfig {
            max_iterations: 0,
            ..AoConfig::default()
        }
        .validate()
        .is_err());
        assert!(AoConfig {
            tolerance: 0.0,
            ..AoConfig::default()
        }
        .validate()
        .is_err());
        assert!(AoConfig {
            ridge: -1.0,
            ..AoConfig::default()
        }
        .validate()
        .is_err());
        assert!(AoConfig::default().validate().is_ok());
    }
}
