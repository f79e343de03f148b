//! Randomised comparisons of the fast solvers against their oracles.
//!
//! Each suite draws its instances from a seeded generator and reports the
//! worst discrepancy it saw next to the tolerance it was held to.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::ao::{step_alpha, step_b, KnownConstants, QpConfig, QpProblem};
use crate::error::Result;
use crate::geometry::{ArrayGeometry, OfdmConfig, PathParams, C64};
use crate::ising::{default_chain_params, Edge, IsingParams, PathPrior};
use crate::oracle::{direct_observation, exhaustive_qp, posterior_mean_dense};
use crate::stacking::{
    apply_permutation, build_stacked_model, parameter_vector, permutation_between_stackings,
    regressor_alpha, stack_observation, Stacking,
};
use crate::synth::complex_normal;
use crate::tensors::{Dims, SnSField, SteeringField};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteOutcome {
    pub name: &'static str,
    pub cases: usize,
    pub failures: usize,
    /// Largest discrepancy observed, in the suite's own measure.
    pub worst: f64,
    pub tolerance: f64,
}

impl SuiteOutcome {
    pub fn passed(&self) -> bool {
        self.failures == 0 && self.cases > 0
    }

    fn record(&mut self, value: f64) {
        self.cases += 1;
        self.worst = self.worst.max(value);
        if !(value <= self.tolerance) {
            self.failures += 1;
        }
    }

    fn new(name: &'static str, tolerance: f64) -> Self {
        Self {
            name,
            cases: 0,
            failures: 0,
            worst: 0.0,
            tolerance,
        }
    }
}

fn small_known(n: usize, k: usize, t: usize, l: usize) -> KnownConstants {
    KnownConstants {
        geom: ArrayGeometry::new(n, 0.005).expect("positive size"),
        ofdm: OfdmConfig {
            carrier_hz: 30e9,
            n_subcarriers: k,
            subcarrier_spacing_hz: 720e3,
            n_snapshots: t,
            speed_of_light: 3e8,
        },
        n_paths: l,
        noise_var: 0.1,
        blocked_var: 0.01,
        visible_var: 1e-4,
    }
}

fn rc(rng: &mut ChaCha8Rng) -> C64 {
    C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
}

/// Random instance of the b-subproblem from the chain-prior family.
fn random_qp_instance(rng: &mut ChaCha8Rng) -> (SnSField, KnownConstants, IsingParams) {
    let (n, l, t) = loop {
        let n = rng.gen_range(2..=10);
        let l = rng.gen_range(1..=3);
        let t = rng.gen_range(1..=3);
        if n * l * t <= 20 {
            break (n, l, t);
        }
    };
    let mut known = small_known(n, 1, t, l);
    known.blocked_var = rng.gen_range(0.005..0.5);
    known.visible_var = rng.gen_range(1e-4..known.blocked_var / 2.0);
    let ising = default_chain_params(n, l, t, rng.gen_range(0.05..2.0), rng.gen_range(-1.0..1.0))
        .expect("positive β0");
    let spread = rng.gen_range(0.05..0.6);
    let truth: Vec<f64> = (0..n * l)
        .map(|_| if rng.gen_bool(0.7) { 1.0 } else { 0.0 })
        .collect();
    let mut alpha = SnSField::filled(n, l, t, C64::new(0.0, 0.0));
    for ti in 0..t {
        for li in 0..l {
            for ni in 0..n {
                let idx = alpha.index(ni, li, ti);
                alpha.data[idx] =
                    complex_normal(rng, C64::new(truth[li * n + ni], 0.0), spread * spread);
            }
        }
    }
    (alpha, known, ising)
}

/// Relative gap of the rounded b-step output to the exhaustive optimum of
/// `2bᵀEb + rᵀb`, over `instances` random problems with NLT ≤ 20.
pub fn qp_random_suite(instances: usize, seed: u64, tolerance: f64) -> Result<SuiteOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = QpConfig::default();
    let mut out = SuiteOutcome::new("qp-vs-exhaustive", tolerance);
    for _ in 0..instances {
        let (alpha, known, ising) = random_qp_instance(&mut rng);
        let got = step_b(&alpha, &known, &ising, &cfg, None)?;
        let p = QpProblem::from_alpha(&alpha, &known, &ising, cfg.eta)?;
        let (_, opt) = exhaustive_qp(&p);
        let gap = (got.objective - opt).max(0.0) / opt.abs().max(1e-12);
        out.record(gap);
    }
    Ok(out)
}

/// Small hand-built b-subproblems whose rounded output must equal the
/// exhaustive minimiser exactly.
pub fn qp_fixed_suite() -> Result<SuiteOutcome> {
    let cfg = QpConfig::default();
    let mut out = SuiteOutcome::new("qp-fixed-examples", 0.0);
    let mut cases: Vec<(SnSField, KnownConstants, IsingParams)> = Vec::new();

    let known = small_known(4, 1, 1, 1);
    let alpha = SnSField::from_real(4, 1, 1, &[1.0, 1.0, 0.05, 0.02])?;
    cases.push((alpha, known, default_chain_params(4, 1, 1, 0.5, 0.0)?));

    let known = small_known(6, 1, 2, 2);
    let vals: Vec<f64> = [1.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]
        .iter()
        .copied()
        .cycle()
        .take(24)
        .collect();
    let alpha = SnSField::from_real(6, 2, 2, &vals)?;
    cases.push((alpha, known, default_chain_params(6, 2, 2, 1.0, -0.2)?));

    // an isolated outlier that the chain coupling should overrule
    let known = small_known(7, 1, 1, 1);
    let alpha = SnSField::from_real(7, 1, 1, &[1.0, 1.0, 1.0, 0.08, 1.0, 1.0, 1.0])?;
    cases.push((alpha, known, default_chain_params(7, 1, 1, 30.0, 0.0)?));

    for (alpha, known, ising) in cases {
        let got = step_b(&alpha, &known, &ising, &cfg, None)?;
        let p = QpProblem::from_alpha(&alpha, &known, &ising, cfg.eta)?;
        let (best, _) = exhaustive_qp(&p);
        out.record(if got.rounded == best { 0.0 } else { 1.0 });
    }
    Ok(out)
}

/// Relative error of the α-step against the dense joint-Gaussian posterior
/// mean, on random instances with NKT ≤ 64.
pub fn alpha_suite(instances: usize, seed: u64, tolerance: f64) -> Result<SuiteOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = SuiteOutcome::new("lmmse-vs-posterior", tolerance);
    for _ in 0..instances {
        let (n, k, t) = loop {
            let (n, k, t) = (
                rng.gen_range(2..=8),
                rng.gen_range(1..=4),
                rng.gen_range(1..=4),
            );
            if n * k * t <= 64 {
                break (n, k, t);
            }
        };
        let l = rng.gen_range(1..=3);
        let mut known = small_known(n, k, t, l);
        known.noise_var = rng.gen_range(0.01..1.0);
        known.blocked_var = rng.gen_range(0.01..1.0);
        known.visible_var = rng.gen_range(1e-4..known.blocked_var);
        let g: Vec<C64> = (0..l).map(|_| rc(&mut rng)).collect();
        let mut h = SteeringField::zeros(n, l, k);
        h.data.iter_mut().for_each(|v| *v = rc(&mut rng));
        let mut y = crate::ChannelTensor::zeros(n, k, t);
        y.data.iter_mut().for_each(|v| *v = rc(&mut rng));
        let b: Vec<f64> = (0..n * l).map(|_| rng.gen_range(0..2) as f64).collect();

        let fast = step_alpha(&y, &g, &h, &b, &known)?;
        let r = regressor_alpha(&g, &h, t);
        let yv = DVector::from_vec(stack_observation(Stacking::Alpha, &y));
        let mean: Vec<f64> = b.iter().copied().cycle().take(n * l * t).collect();
        let var: Vec<f64> = mean.iter().map(|&v| known.prior_var(v)).collect();
        let oracle = posterior_mean_dense(&r, &yv, &mean, &var, known.noise_var)?;
        let diff: f64 = fast
            .data
            .iter()
            .zip(oracle.iter())
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        out.record(diff / oracle.norm().max(f64::MIN_POSITIVE));
    }
    Ok(out)
}

/// Random scenes: each stacked model on ground truth must reproduce the
/// directly summed observation entrywise, and the stacking permutations must
/// map one observation vector onto another exactly. The recorded value is
/// the worst relative entry error; a permutation mismatch records infinity.
pub fn stacking_suite(scenes: usize, seed: u64, tolerance: f64) -> Result<SuiteOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = SuiteOutcome::new("stacking-consistency", tolerance);
    let forms = [Stacking::Alpha, Stacking::H, Stacking::G];
    for _ in 0..scenes {
        let (n, k, t, l) = (
            rng.gen_range(2..=16),
            rng.gen_range(1..=4),
            rng.gen_range(1..=4),
            rng.gen_range(1..=3),
        );
        let known = small_known(n, k, t, l);
        let paths: Vec<PathParams> = (0..l)
            .map(|i| PathParams {
                gain: C64::from_polar(rng.gen_range(0.1..1.5), rng.gen_range(-3.0..3.0)),
                distance: rng.gen_range(2.0..40.0),
                aoa: rng.gen_range(-1.2..1.2),
                ue_distance: if i == 0 {
                    0.0
                } else {
                    rng.gen_range(0.0..20.0)
                },
            })
            .collect();
        let mut sns = SnSField::filled(n, l, t, C64::new(0.0, 0.0));
        sns.data.iter_mut().for_each(|v| *v = rc(&mut rng));
        let y = direct_observation(&known.geom, &known.ofdm, &paths, &sns)?;
        let dims = Dims::new(n, k, t, l);
        let mut worst: f64 = 0.0;
        let mut stacked = Vec::new();
        for s in forms {
            let m = build_stacked_model(s, &paths, &sns, &known.geom, &known.ofdm, &y)?;
            let g: Vec<C64> = paths.iter().map(|p| p.gain).collect();
            let geoms: Vec<_> = paths.iter().map(|p| p.geometry()).collect();
            let h = SteeringField::from_geometry(&known.geom, &known.ofdm, &geoms);
            let fitted = &m.regressor * DVector::from_vec(parameter_vector(s, &g, &h, &sns));
            for (a, b) in fitted.iter().zip(m.observation.iter()) {
                worst = worst.max((a - b).norm() / b.norm().max(f64::MIN_POSITIVE));
            }
            stacked.push((s, m.observation.as_slice().to_vec()));
        }
        for (sa, va) in &stacked {
            for (sb, vb) in &stacked {
                let perm = permutation_between_stackings(*sa, *sb, &dims);
                if apply_permutation(&perm, va) != *vb {
                    worst = f64::INFINITY;
                }
            }
        }
        out.record(worst);
    }
    Ok(out)
}

fn bits(mask: usize, n: usize) -> Vec<f64> {
    (0..n).map(|i| ((mask >> i) & 1) as f64).collect()
}

/// Exhaustive enumeration for `2 ≤ N ≤ max_n` on ferromagnetic chains
/// (negative coupling entries) without bias: the minimisers must be exactly
/// the two uniform configurations. Records the number of wrong argmins.
pub fn ising_minimiser_suite(max_n: usize, seed: u64) -> Result<SuiteOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = SuiteOutcome::new("ising-uniform-minimisers", 0.0);
    for n in 2..=max_n {
        let p = default_chain_params(n, 1, 1, rng.gen_range(0.05..3.0), 0.0)?;
        let energies = (0..1usize << n)
            .map(|m| p.energy(&bits(m, n)))
            .collect::<Result<Vec<_>>>()?;
        let min = energies.iter().cloned().fold(f64::INFINITY, f64::min);
        let argmins: Vec<usize> = (0..1usize << n)
            .filter(|&m| energies[m] <= min + 1e-12)
            .collect();
        out.record(if argmins == [0, (1 << n) - 1] {
            0.0
        } else {
            1.0
        });
    }
    Ok(out)
}

/// Quadratic-form energy against the edge-list sum on all `2^N`
/// configurations of random graphs with random weights and biases,
/// `1 ≤ N ≤ max_n`. Records the worst absolute difference.
pub fn ising_energy_suite(max_n: usize, seed: u64, tolerance: f64) -> Result<SuiteOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = SuiteOutcome::new("ising-energy-identity", tolerance);
    for n in 1..=max_n {
        let mut edges = Vec::new();
        for a in 0..n {
            for b in a + 1..n {
                if rng.gen_bool(0.5) {
                    edges.push(Edge {
                        a,
                        b,
                        weight: rng.gen_range(-2.0..2.0),
                    });
                }
            }
        }
        let bias: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let p = IsingParams::new(n, 1, vec![PathPrior { edges, bias }])?;
        let mut worst: f64 = 0.0;
        for m in 0..1usize << n {
            let b = bits(m, n);
            worst = worst.max((p.energy(&b)? - p.edge_sum_energy(&b)?).abs());
        }
        out.record(worst);
    }
    Ok(out)
}

/// Every suite at its default size, in a fixed order.
pub fn all_suites(seed: u64) -> Result<Vec<SuiteOutcome>> {
    Ok(vec![
        qp_fixed_suite()?,
        qp_random_suite(50, seed, 0.05)?,
        alpha_suite(20, seed.wrapping_add(1), 1e-8)?,
        stacking_suite(20, seed.wrapping_add(2), 1e-12)?,
        ising_minimiser_suite(12, seed.wrapping_add(3))?,
        ising_energy_suite(6, seed.wrapping_add(4), 1e-12)?,
    ])
}
