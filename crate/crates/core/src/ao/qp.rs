//! The b-step: a box-relaxed binary quadratic program.
//!
//! For binary `b`, `f₂ + f₃ = 2 bᵀEb + rᵀb + const` with
//! `r = r₁ − 2E1 + 2γ` and `r₁ = |α − 1|²/σ_v² − |α|²/σ_b²`. Tying `b` across
//! snapshots (`b = 1_T ⊗ x`) leaves `2T xᵀẼx + sᵀx` over `x ∈ [0,1]^{NL}`,
//! `s = Σ_t r_t`.
//!
//! The relaxation is solved by projected gradient with Armijo backtracking on
//! `φ(x) + μ Σ x(1 − x)`, doubling `μ` until every `x_i(1 − x_i) ≤ η`. The
//! iterate is rounded at the threshold and then improved by flipping
//! contiguous runs of antennas.

use serde::{Deserialize, Serialize};

use super::KnownConstants;
use crate::error::{invalid, mismatch, Result};
use crate::ising::IsingParams;
use crate::tensors::SnSField;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpConfig {
    /// Near-binary slack, applied uniformly.
    pub eta: f64,
    pub max_inner: usize,
    pub max_outer: usize,
    /// Initial penalty weight relative to the problem scale.
    pub mu0: f64,
    pub step_tol: f64,
    pub threshold: f64,
    pub local_search: bool,
}

impl Default for QpConfig {
    fn default() -> Self {
        Self {
            eta: 0.05,
            max_inner: 500,
            max_outer: 40,
            mu0: 1e-3,
            step_tol: 1e-10,
            threshold: 0.5,
            local_search: true,
        }
    }
}

impl QpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=0.25).contains(&self.eta) {
            return Err(invalid(format!(
                "η must lie in [0, 0.25], got {}",
                self.eta
            )));
        }
        if self.max_inner == 0 || self.max_outer == 0 {
            return Err(invalid("QP iteration budgets must be positive"));
        }
        if !(self.mu0 > 0.0) || !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(invalid(
                "QP penalty must be positive and the threshold inside (0, 1)",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct QpProblem<'a> {
    pub ising: &'a IsingParams,
    /// Linear term over the full `NLT` vector.
    pub r: Vec<f64>,
    /// Slack per tied variable, length NL.
    pub eta: Vec<f64>,
}

impl<'a> QpProblem<'a> {
    /// Builds `r = r₁ + r₂ + r₃` from the current amplitudes.
    pub fn from_alpha(
        alpha: &SnSField,
        known: &KnownConstants,
        ising: &'a IsingParams,
        eta: f64,
    ) -> Result<Self> {
        if alpha.n != ising.n() || alpha.l != ising.l() || alpha.t != ising.t() {
            return Err(mismatch("amplitudes and Ising prior disagree in size"));
        }
        let r1: Vec<f64> = alpha
            .data
            .iter()
            .map(|a| (a - 1.0).norm_sqr() / known.visible_var - a.norm_sqr() / known.blocked_var)
            .collect();
        Self::from_r1(r1, ising, eta)
    }

    pub fn from_r1(r1: Vec<f64>, ising: &'a IsingParams, eta: f64) -> Result<Self> {
        if r1.len() != ising.nlt() {
            return Err(mismatch(format!(
                "linear term has {} entries, expected {}",
                r1.len(),
                ising.nlt()
            )));
        }
        let e1 = ising.matvec(&vec![1.0; ising.nlt()])?;
        let gamma = ising.gamma();
        let r = r1
            .iter()
            .zip(&e1)
            .zip(&gamma)
            .map(|((a, e), g)| a - 2.0 * e + 2.0 * g)
            .collect();
        Ok(Self {
            ising,
            r,
            eta: vec![eta; ising.nl()],
        })
    }

    /// `s = Σ_t r_t`, the linear term of the tied problem.
    pub fn tied_linear(&self) -> Vec<f64> {
        let nl = self.ising.nl();
        let mut s = vec![0.0; nl];
        for (i, v) in self.r.iter().enumerate() {
            s[i % nl] += v;
        }
        s
    }

    /// `2 bᵀEb + rᵀb` on a full-length (`NLT`) vector.
    pub fn objective_full(&self, b: &[f64]) -> Result<f64> {
        let eb = self.ising.matvec(b)?;
        Ok(b.iter()
            .zip(&eb)
            .zip(&self.r)
            .map(|((x, e), r)| 2.0 * x * e + r * x)
            .sum())
    }

    /// `2T xᵀẼx + sᵀx` on a tied (`NL`) vector.
    pub fn objective_tied(&self, x: &[f64], s: &[f64]) -> f64 {
        let ex = self.ising.matvec(x).expect("tied length");
        let t = self.ising.t() as f64;
        x.iter()
            .zip(&ex)
            .zip(s)
            .map(|((x, e), s)| 2.0 * t * x * e + s * x)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpOutcome {
    pub relaxed: Vec<f64>,
    pub rounded: Vec<u8>,
    /// `2T xᵀẼx + sᵀx` at the rounded output.
    pub objective: f64,
    /// Whether the relaxed iterate reached `x(1 − x) ≤ η` everywhere.
    pub feasible: bool,
    /// Whether the penalised surrogate never increased across inner steps.
    pub monotone: bool,
    /// Surrogate values of the first start, one per accepted inner step.
    pub trace: Vec<f64>,
}

struct Relaxed {
    x: Vec<f64>,
    feasible: bool,
    monotone: bool,
    trace: Vec<f64>,
}

fn surrogate(p: &QpProblem, x: &[f64], s: &[f64], mu: f64) -> f64 {
    p.objective_tied(x, s) + mu * x.iter().map(|v| v * (1.0 - v)).sum::<f64>()
}

fn continuation(p: &QpProblem, s: &[f64], cfg: &QpConfig, start: &[f64]) -> Relaxed {
    let t = p.ising.t() as f64;
    let nl = s.len();
    let mut degree_bound: f64 = 0.0;
    for l in 0..p.ising.l() {
        for n in 0..p.ising.n() {
            degree_bound =
                degree_bound.max(p.ising.neighbors(l, n).iter().map(|(_, w)| w.abs()).sum());
        }
    }
    let quad_lip = 4.0 * t * degree_bound;
    let scale = s.iter().fold(quad_lip, |m, v| m.max(v.abs())).max(1e-12);
    let mut mu = cfg.mu0 * scale;
    let mut x: Vec<f64> = start.iter().map(|v| v.clamp(0.0, 1.0)).collect();
    let mut trace = Vec::new();
    let mut monotone = true;
    let mut feasible = false;
    for _ in 0..cfg.max_outer {
        let mut f = surrogate(p, &x, s, mu);
        let mut step = 1.0 / (quad_lip + 2.0 * mu);
        for _ in 0..cfg.max_inner {
            let ex = p.ising.matvec(&x).expect("tied length");
            let grad: Vec<f64> = (0..nl)
                .map(|i| 4.0 * t * ex[i] + s[i] + mu * (1.0 - 2.0 * x[i]))
                .collect();
            let mut accepted = None;
            for _ in 0..60 {
                let cand: Vec<f64> = (0..nl)
                    .map(|i| (x[i] - step * grad[i]).clamp(0.0, 1.0))
                    .collect();
                let fc = surrogate(p, &cand, s, mu);
                let lin: f64 = (0..nl).map(|i| grad[i] * (cand[i] - x[i])).sum();
                let sq: f64 = (0..nl).map(|i| (cand[i] - x[i]).powi(2)).sum();
                if fc <= f + lin + sq / (2.0 * step) + 1e-12 * f.abs().max(1.0) {
                    accepted = Some((cand, fc));
                    break;
                }
                step *= 0.5;
            }
            let Some((cand, fc)) = accepted else { break };
            if fc > f + 1e-12 * f.abs().max(1.0) {
                monotone = false;
            }
            let moved = cand
                .iter()
                .zip(&x)
                .fold(0f64, |m, (a, b)| m.max((a - b).abs()));
            x = cand;
            f = fc;
            trace.push(f);
            step *= 2.0;
            if moved < cfg.step_tol {
                break;
            }
        }
        if x.iter().zip(&p.eta).all(|(v, e)| v * (1.0 - v) <= *e) {
            feasible = true;
            break;
        }
        mu *= 2.0;
    }
    Relaxed {
        x,
        feasible,
        monotone,
        trace,
    }
}

/// Best-improvement flips of contiguous antenna runs within one path (runs
/// of length one are single flips) until no run lowers the tied objective.
fn segment_flip_descent(p: &QpProblem, s: &[f64], x: &mut [f64]) {
    let t4 = 4.0 * p.ising.t() as f64;
    let n = p.ising.n();
    loop {
        let ex = p.ising.matvec(x).expect("tied length");
        let grad: Vec<f64> = (0..x.len()).map(|i| s[i] + t4 * ex[i]).collect();
        let dir: Vec<f64> = x.iter().map(|v| 1.0 - 2.0 * v).collect();
        let mut best = (0.0, 0, 0);
        for l in 0..p.ising.l() {
            let off = l * n;
            for a in 0..n {
                let mut delta = 0.0;
                for b in a..n {
                    let i = off + b;
                    let cross: f64 = p
                        .ising
                        .neighbors(l, b)
                        .iter()
                        .filter(|&&(m, _)| m >= a && m < b)
                        .map(|&(m, w)| w * dir[off + m])
                        .sum();
                    delta += dir[i] * (grad[i] + t4 * cross);
                    if delta < best.0 - 1e-12 * (1.0 + delta.abs()) {
                        best = (delta, off + a, off + b);
                    }
                }
            }
        }
        if best.0 >= 0.0 {
            return;
        }
        for v in &mut x[best.1..=best.2] {
            *v = 1.0 - *v;
        }
    }
}

/// Solves the b-step from the current amplitudes.
pub fn step_b(
    alpha: &SnSField,
    known: &KnownConstants,
    ising: &IsingParams,
    cfg: &QpConfig,
    warm: Option<&[f64]>,
) -> Result<QpOutcome> {
    let p = QpProblem::from_alpha(alpha, known, ising, cfg.eta)?;
    solve_qp(&p, cfg, warm)
}

/// Multi-start solve of a prepared problem: warm start (if any), the
/// separable minimiser of the linear term, and the centre of the box.
pub fn solve_qp(p: &QpProblem, cfg: &QpConfig, warm: Option<&[f64]>) -> Result<QpOutcome> {
    cfg.validate()?;
    let s = p.tied_linear();
    let nl = s.len();
    let mut starts: Vec<Vec<f64>> = Vec::new();
    if let Some(w) = warm {
        if w.len() != nl {
            return Err(mismatch(format!(
                "warm start has {} entries, expected {nl}",
                w.len()
            )));
        }
        starts.push(w.to_vec());
    }
    starts.push(s.iter().map(|&v| if v < 0.0 { 1.0 } else { 0.0 }).collect());
    starts.push(vec![0.5; nl]);

    let mut best: Option<QpOutcome> = None;
    let mut monotone = true;
    let mut first_trace = None;
    for start in &starts {
        let rel = continuation(p, &s, cfg, start);
        monotone &= rel.monotone;
        if first_trace.is_none() {
            first_trace = Some(rel.trace.clone());
        }
        let mut xr: Vec<f64> = rel
            .x
            .iter()
            .map(|&v| if v >= cfg.threshold { 1.0 } else { 0.0 })
            .collect();
        if cfg.local_search {
            segment_flip_descent(p, &s, &mut xr);
        }
        let obj = p.objective_tied(&xr, &s);
        if best.as_ref().map_or(true, |b| obj < b.objective) {
            best = Some(QpOutcome {
                relaxed: rel.x,
                rounded: xr.iter().map(|&v| v as u8).collect(),
                objective: obj,
                feasible: rel.feasible,
                monotone: true,
                trace: Vec::new(),
            });
        }
    }
    let mut out = best.expect("at least one start");
    out.monotone = monotone;
    out.trace = first_trace.unwrap_or_default();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::C64;
    use crate::ising::{default_chain_params, Edge, PathPrior};
    use crate::oracle::exhaustive_qp;
    use crate::synth::reference_scene;

    fn known(n: usize, l: usize, t: usize) -> KnownConstants {
        let mut s = reference_scene();
        s.geom = crate::geometry::ArrayGeometry::new(n, 0.005).unwrap();
        s.ofdm.n_snapshots = t;
        let mut k = KnownConstants::from_scene(&s);
        k.n_paths = l;
        k.blocked_var = 0.01;
        k.visible_var = 1e-4;
        k
    }

    #[test]
    fn separable_case_thresholds_the_linear_term() {
        let paths = vec![PathPrior {
            edges: vec![],
            bias: vec![0.0; 6],
        }];
        let ising = IsingParams::new(6, 1, paths).unwrap();
        let r1 = vec![-3.0, 2.0, -0.5, 0.1, 4.0, -1e-3];
        let p = QpProblem::from_r1(r1, &ising, 0.05).unwrap();
        let out = solve_qp(&p, &QpConfig::default(), None).unwrap();
        assert_eq!(out.rounded, vec![1, 0, 1, 0, 0, 1]);
    }

    #[test]
    fn fixed_example_matches_exhaustive() {
        let kc = known(4, 1, 1);
        let ising = default_chain_params(4, 1, 1, 0.5, 0.0).unwrap();
        let alpha = SnSField::from_real(4, 1, 1, &[1.0, 1.0, 0.05, 0.02]).unwrap();
        let out = step_b(&alpha, &kc, &ising, &QpConfig::default(), None).unwrap();
        assert_eq!(out.rounded, vec![1, 1, 0, 0]);
        let p = QpProblem::from_alpha(&alpha, &kc, &ising, 0.05).unwrap();
        let (best, val) = exhaustive_qp(&p);
        assert_eq!(best, vec![1, 1, 0, 0]);
        assert!((out.objective - val).abs() < 1e-9);
    }

    #[test]
    fn binary_objective_equals_f2_plus_f3_up_to_constant() {
        let kc = known(5, 2, 2);
        let ising = default_chain_params(5, 2, 2, 0.7, -0.3).unwrap();
        let vals: Vec<C64> = (0..20)
            .map(|i| C64::new((i as f64 * 0.7).sin(), (i as f64 * 1.3).cos() * 0.3))
            .collect();
        let alpha = SnSField {
            n: 5,
            l: 2,
            t: 2,
            data: vals,
        };
        let p = QpProblem::from_alpha(&alpha, &kc, &ising, 0.05).unwrap();
        let s = p.tied_linear();
        let f = |x: &[f64]| {
            let mut f2 = 0.0;
            for t in 0..2 {
                for i in 0..10 {
                    let a = alpha.data[t * 10 + i];
                    f2 += (a - x[i]).norm_sqr() / kc.prior_var(x[i]);
                }
            }
            f2 + 2.0 * ising.energy(x).unwrap()
        };
        let mut offsets = Vec::new();
        for mask in [0usize, 1, 77, 1023, 512, 300] {
            let x: Vec<f64> = (0..10).map(|i| ((mask >> i) & 1) as f64).collect();
            let xe: Vec<f64> = x.iter().copied().cycle().take(20).collect();
            assert!((p.objective_tied(&x, &s) - p.objective_full(&xe).unwrap()).abs() < 1e-8);
            offsets.push(f(&x) - p.objective_tied(&x, &s));
        }
        for o in &offsets {
            assert!(
                (o - offsets[0]).abs() < 1e-7 * offsets[0].abs().max(1.0),
                "{offsets:?}"
            );
        }
    }

    #[test]
    fn surrogate_is_monotone_and_output_tied() {
        let kc = known(8, 2, 3);
        let ising = default_chain_params(8, 2, 3, 1.0, -0.2).unwrap();
        let vals: Vec<C64> = (0..48)
            .map(|i| C64::new(0.5 + 0.5 * (i as f64 * 0.9).sin(), 0.1))
            .collect();
        let alpha = SnSField {
            n: 8,
            l: 2,
            t: 3,
            data: vals,
        };
        let out = step_b(&alpha, &kc, &ising, &QpConfig::default(), Some(&[0.5; 16])).unwrap();
        assert!(out.monotone);
        assert!(out
            .trace
            .windows(2)
            .all(|w| w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0)));
        assert_eq!(out.rounded.len(), 16);
        assert!(out.feasible);
    }

    #[test]
    fn frustrated_instance_close_to_optimum() {
        // antiferromagnetic chain with mixed biases
        let edges: Vec<Edge> = (0..9)
            .map(|a| Edge {
                a,
                b: a + 1,
                weight: 0.8,
            })
            .collect();
        let bias: Vec<f64> = (0..10).map(|i| 0.3 * ((i as f64) * 1.7).sin()).collect();
        let ising = IsingParams::new(10, 1, vec![PathPrior { edges, bias }]).unwrap();
        let r1: Vec<f64> = (0..10).map(|i| ((i * 5 % 7) as f64 - 3.0) * 0.4).collect();
        let p = QpProblem::from_r1(r1, &ising, 0.05).unwrap();
        let out = solve_qp(&p, &QpConfig::default(), None).unwrap();
        let (_, opt) = exhaustive_qp(&p);
        assert!(
            (out.objective - opt).abs() <= 0.05 * opt.abs(),
            "{} vs {opt}",
            out.objective
        );
    }

    #[test]
    fn config_bounds() {
        assert!(QpConfig {
            eta: 0.3,
            ..QpConfig::default()
        }
        .validate()
        .is_err());
        assert!(QpConfig {
            threshold: 1.0,
            ..QpConfig::default()
        }
        .validate()
        .is_err());
    }
}
