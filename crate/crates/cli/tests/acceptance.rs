//! End-to-end acceptance run: one PASS/FAIL line per criterion.
//!
//! Uses a fixed seed chosen before any run; results are never tuned to it.

use std::path::Path;
use std::time::Instant;

use elaa_cli::parse_config;
use elaa_core::ao::{coarse_paths, KnownConstants};
use elaa_core::bench::{
    rmse_with_se, run_campaign, run_proposed, BaselineKind, CampaignSpec, Estimators, McReport,
    Method, TrialRecord,
};
use elaa_core::checks::{
    alpha_suite, ising_energy_suite, ising_minimiser_suite, qp_fixed_suite, qp_random_suite,
    stacking_suite,
};
use elaa_core::extract::{MleGrid, SteeringTable};
use elaa_core::ising::default_chain_params;
use elaa_core::synth::{reference_scene, set_snr, synthesize, BlockedRange, SceneConfig};
use elaa_core::{PathGeometry, C64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 20261016;

struct Criterion {
    id: usize,
    passed: bool,
    detail: String,
}

fn report(id: usize, passed: bool, detail: String) -> Criterion {
    println!(
        "criterion {id}: {} {detail}",
        if passed { "PASS" } else { "FAIL" }
    );
    Criterion { id, passed, detail }
}

struct Setup {
    scene: SceneConfig,
    exp: elaa_cli::Experiment,
    table: SteeringTable,
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

fn criterion_1(s: &Setup) -> Criterion {
    let ising = s.exp.ising().unwrap();
    let est = Estimators {
        ising: &ising,
        config: &s.exp.ao,
        table: &s.table,
    };
    let spec = CampaignSpec {
        snr_db: vec![10.0],
        trials: 50,
        methods: vec![Method::Proposed],
        seed: SEED,
    };
    let start = Instant::now();
    let (_, records) = run_campaign(&s.scene, &spec, &est).unwrap();
    let seconds = start.elapsed().as_secs_f64();
    let full = records
        .iter()
        .filter(|r| r.outcomes[0].detection == 1.0)
        .count();
    let worst_fa = records
        .iter()
        .flat_map(|r| r.outcomes[0].path_false_alarm.iter().cloned())
        .fold(0.0, f64::max);
    let passed = full as f64 >= 0.9 * 50.0 && worst_fa <= 0.10 && seconds <= 600.0;
    report(
        1,
        passed,
        format!(
            "all blocked antennas detected in {full}/50 trials (need >= 45); worst per-path false alarm {worst_fa:.3} (limit 0.10); {seconds:.1} s (limit 600)"
        ),
    )
}

fn per_trial(records: &[TrialRecord], snr: f64, method: Method, gain: bool) -> Vec<f64> {
    records
        .iter()
        .filter(|r| r.snr_db == snr)
        .map(|r| {
            let o = r.outcomes.iter().find(|o| o.method == method).unwrap();
            let v = if gain { &o.gain_sq } else { &o.location_sq };
            v.iter().sum::<f64>() / v.len() as f64
        })
        .collect()
}

fn criterion_2(s: &Setup) -> (Criterion, Vec<TrialRecord>, McReport) {
    let ising = s.exp.ising().unwrap();
    let est = Estimators {
        ising: &ising,
        config: &s.exp.ao,
        table: &s.table,
    };
    let snrs = [0.0, 10.0, 20.0, 30.0];
    let spec = CampaignSpec {
        snr_db: snrs.to_vec(),
        trials: 100,
        methods: Method::ALL.to_vec(),
        seed: SEED + 1,
    };
    let (report_, records) = run_campaign(&s.scene, &spec, &est).unwrap();
    let mut detail = Vec::new();
    let mut passed = true;
    for (name, gain) in [("location", false), ("gain", true)] {
        let mut failures = Vec::new();
        for &snr in &snrs {
            let (p, _) = rmse_with_se(&per_trial(&records, snr, Method::Proposed, gain));
            let (no, _) = rmse_with_se(&per_trial(
                &records,
                snr,
                Method::Baseline(BaselineKind::NoSns),
                gain,
            ));
            let (rnd, _) = rmse_with_se(&per_trial(
                &records,
                snr,
                Method::Baseline(BaselineKind::RandomSns),
                gain,
            ));
            let (kn, kn_se) = rmse_with_se(&per_trial(
                &records,
                snr,
                Method::Baseline(BaselineKind::KnownSns),
                gain,
            ));
            let ok = p < no && p < rnd && p >= kn - kn_se;
            println!(
                "    {name} RMSE at {snr:>4} dB: proposed {p:.4}  no-sns {no:.4}  random-sns {rnd:.4}  known-sns {kn:.4} (se {kn_se:.4}) {}",
                if ok { "ordered" } else { "out of order" }
            );
            if !ok {
                failures.push(snr);
            }
        }
        passed &= failures.len() <= 1;
        detail.push(format!(
            "{name}: {} of 4 SNR points out of order (allowed 1)",
            failures.len()
        ));
    }
    (report(2, passed, detail.join("; ")), records, report_)
}

fn criterion_3(s: &Setup, records: &[TrialRecord]) -> Criterion {
    let truth = [(9.659, 2.588), (3.857, 4.596), (6.344, -2.958)];
    let noiseless = SceneConfig {
        noise_var: 1e-12,
        ..s.scene.clone()
    };
    let obs = synthesize(&noiseless, &mut ChaCha8Rng::seed_from_u64(SEED + 2)).unwrap();
    let known = KnownConstants::from_scene(&noiseless);
    let ising = s.exp.ising().unwrap();
    let coarse = coarse_paths(&obs.y, &known, &s.table, s.exp.ao.ridge).unwrap();
    let run = run_proposed(&obs, &known, &ising, &s.exp.ao, &s.table, &coarse).unwrap();
    let errors: Vec<f64> = run
        .result
        .paths
        .iter()
        .zip(truth)
        .map(|(p, t)| dist(p.position, t))
        .collect();
    let worst = errors.iter().cloned().fold(0.0, f64::max);

    let true_pos: Vec<(f64, f64)> = s
        .scene
        .paths
        .iter()
        .map(|p| p.geometry().position())
        .collect();
    let mut at20: Vec<f64> = records
        .iter()
        .filter(|r| r.snr_db == 20.0)
        .flat_map(|r| {
            let o = r
                .outcomes
                .iter()
                .find(|o| o.method == Method::Proposed)
                .unwrap();
            o.positions
                .iter()
                .zip(&true_pos)
                .map(|(&e, &t)| dist(e, t))
                .collect::<Vec<_>>()
        })
        .collect();
    at20.sort_by(f64::total_cmp);
    let median = if at20.len() % 2 == 1 {
        at20[at20.len() / 2]
    } else {
        0.5 * (at20[at20.len() / 2 - 1] + at20[at20.len() / 2])
    };
    let passed = errors.len() == 3 && worst < 0.1 && median < 0.5;
    report(
        3,
        passed,
        format!(
            "noiseless position errors {:.4?} m (limit 0.1); median error at 20 dB {median:.4} m over {} estimates (limit 0.5)",
            errors,
            at20.len()
        ),
    )
}

fn suite_line(id: usize, outcomes: &[elaa_core::checks::SuiteOutcome]) -> Criterion {
    let passed = outcomes.iter().all(|o| o.passed());
    let detail = outcomes
        .iter()
        .map(|o| {
            format!(
                "{}: {}/{} ok, worst {:.2e} (tol {:e})",
                o.name,
                o.cases - o.failures,
                o.cases,
                o.worst,
                o.tolerance
            )
        })
        .collect::<Vec<_>>()
        .join("; ");
    report(id, passed, detail)
}

/// Reference-like scene with randomised path geometry, blockage, phases and SNR.
fn random_scene(rng: &mut ChaCha8Rng) -> SceneConfig {
    let mut scene = reference_scene();
    let n = scene.geom.n_antennas();
    let mut ue = (0.0, 0.0);
    for (l, p) in scene.paths.iter_mut().enumerate() {
        p.distance *= rng.gen_range(0.8..1.2);
        p.aoa += rng.gen_range(-5f64..5.0).to_radians();
        p.gain = C64::from_polar(
            p.gain.norm(),
            rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
        );
        let pos = PathGeometry::new(p.distance, p.aoa, 0.0).position();
        if l == 0 {
            ue = pos;
            p.ue_distance = 0.0;
        } else {
            p.ue_distance = dist(pos, ue);
        }
        let len = rng.gen_range(3..=6);
        let first = rng.gen_range(1..=n - len + 1);
        scene.blockage[l] = vec![BlockedRange::new(first, first + len - 1)];
    }
    set_snr(&scene, rng.gen_range(0.0..20.0)).unwrap()
}

fn criterion_8(s: &Setup) -> Criterion {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 3);
    let (mut worst, mut iterations, mut increases, mut violations) =
        (0.0f64, 0usize, 0usize, 0usize);
    for _ in 0..20 {
        let scene = random_scene(&mut rng);
        let obs = synthesize(&scene, &mut rng).unwrap();
        let known = KnownConstants::from_scene(&scene);
        let d = scene.dims();
        let ising = default_chain_params(d.n, d.l, d.t, s.exp.beta0, s.exp.gamma0).unwrap();
        let coarse = coarse_paths(&obs.y, &known, &s.table, s.exp.ao.ridge).unwrap();
        let run = run_proposed(&obs, &known, &ising, &s.exp.ao, &s.table, &coarse).unwrap();
        for rec in &run.state.substeps {
            if rec.step == elaa_core::ao::Substep::B {
                continue;
            }
            let rise = (rec.after - rec.before) / rec.before.abs().max(f64::MIN_POSITIVE);
            worst = worst.max(rise);
            if rise > 1e-9 {
                violations += 1;
            }
        }
        iterations += run.state.iterations;
        increases += run.state.b_increases;
    }
    let rate = increases as f64 / iterations.max(1) as f64;
    let passed = violations == 0 && rate < 0.2;
    report(
        8,
        passed,
        format!(
            "g/h/alpha steps: {violations} increases, largest relative change {worst:.2e} (limit 1e-9); b-step increases {increases}/{iterations} iterations = {:.1}% (limit 20%)",
            100.0 * rate
        ),
    )
}

fn criterion_9(s: &Setup) -> Criterion {
    let f = s.exp.fraunhofer_m;
    report(
        9,
        (f - 49.0).abs() < 0.5 && f < 50.0,
        format!("2D^2/lambda = {f:.3} m (expected about 49 m, below 50 m)"),
    )
}

fn main() {
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../config/default.toml");
    let exp = parse_config(&cfg, &[]).expect("default config parses");
    let scene = exp.scene.clone();
    let table = SteeringTable::new(&scene.geom, &scene.ofdm, &exp.grid).unwrap();
    assert_eq!(exp.grid, MleGrid::default());
    let setup = Setup { scene, exp, table };

    let mut results = Vec::new();
    results.push(criterion_1(&setup));
    let (c2, records, _) = criterion_2(&setup);
    results.push(c2);
    results.push(criterion_3(&setup, &records));
    results.push(suite_line(
        4,
        &[
            qp_random_suite(50, SEED, 0.05).unwrap(),
            qp_fixed_suite().unwrap(),
        ],
    ));
    results.push(suite_line(5, &[alpha_suite(20, SEED, 1e-8).unwrap()]));
    results.push(suite_line(6, &[stacking_suite(20, SEED, 1e-12).unwrap()]));
    results.push(suite_line(
        7,
        &[
            ising_minimiser_suite(12, SEED).unwrap(),
            ising_energy_suite(6, SEED, 1e-12).unwrap(),
        ],
    ));
    results.push(criterion_8(&setup));
    results.push(criterion_9(&setup));

    let failed: Vec<&Criterion> = results.iter().filter(|c| !c.passed).collect();
    println!(
        "acceptance: {}/{} criteria passed",
        results.len() - failed.len(),
        results.len()
    );
    if !failed.is_empty() {
        for c in failed {
            eprintln!("criterion {} failed: {}", c.id, c.detail);
        }
        std::process::exit(1);
    }
}
