//! The three run modes and their artifacts.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use elaa_core::ao::{coarse_paths, write_trace, KnownConstants};
use elaa_core::bench::{run_campaign, run_proposed, vr_metrics, Estimators, McReport};
use elaa_core::checks::all_suites;
use elaa_core::extract::{reference_coefficient, SteeringTable};
use elaa_core::synth::synthesize;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::config::{parse_config, validation_report, ConfigError, Experiment};
use crate::plots;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Mode {
    Single,
    Campaign,
    Selftest,
}

#[derive(Debug, Clone)]
pub struct RunSpec {
    pub mode: Mode,
    pub config: PathBuf,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub snr_db: Option<f64>,
    pub trials: Option<usize>,
    pub overrides: Vec<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("configuration error: {0}")]
    Config(#[from] ConfigError),

    #[error("numerical failure: {0}")]
    Numerical(#[from] elaa_core::Error),

    #[error("output error: {0}")]
    Output(String),

    #[error("self-test failed: {0}")]
    Selftest(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Numerical(_) | RunError::Output(_) => 3,
            RunError::Selftest(_) => 4,
        }
    }
}

fn io(e: impl std::fmt::Display) -> RunError {
    RunError::Output(e.to_string())
}

/// Folds the convenience flags into the override list.
fn overrides(spec: &RunSpec) -> Vec<String> {
    let mut out = spec.overrides.clone();
    if let Some(s) = spec.seed {
        out.push(format!("campaign.seed={s}"));
    }
    if let Some(t) = spec.trials {
        out.push(format!("campaign.trials={t}"));
    }
    if let Some(snr) = spec.snr_db {
        match spec.mode {
            Mode::Campaign => out.push(format!("campaign.snr_db=[{snr:?}]")),
            _ => out.push(format!("noise.snr_db={snr:?}")),
        }
    }
    out
}

/// Names of the files written by a run, relative to the output directory.
pub type Artifacts = Vec<String>;

pub fn run(spec: &RunSpec) -> Result<Artifacts, RunError> {
    let exp = parse_config(&spec.config, &overrides(spec))?;
    for line in validation_report(&exp) {
        log::info!("{line}");
    }
    fs::create_dir_all(&spec.out).map_err(io)?;
    let marker = spec.out.join("INCOMPLETE");
    fs::write(&marker, "run did not finish\n").map_err(io)?;
    let result = match spec.mode {
        Mode::Single => single(&exp, &spec.out),
        Mode::Campaign => campaign(&exp, &spec.out),
        Mode::Selftest => selftest(&exp, &spec.out),
    };
    match &result {
        Err(RunError::Selftest(_)) | Ok(_) => fs::remove_file(&marker).map_err(io)?,
        Err(e) => {
            let _ = fs::write(&marker, format!("{e}\n"));
        }
    }
    result
}

fn write_file(dir: &Path, name: &str, bytes: &[u8], out: &mut Artifacts) -> Result<(), RunError> {
    fs::write(dir.join(name), bytes).map_err(io)?;
    out.push(name.to_string());
    Ok(())
}

fn single(exp: &Experiment, dir: &Path) -> Result<Artifacts, RunError> {
    let scene = &exp.scene;
    let mut rng = ChaCha8Rng::seed_from_u64(exp.campaign.seed);
    let obs = synthesize(scene, &mut rng)?;
    let known = KnownConstants::from_scene(scene);
    let ising = exp.ising()?;
    let table = SteeringTable::new(&scene.geom, &scene.ofdm, &exp.grid)?;
    let start = Instant::now();
    let coarse = coarse_paths(&obs.y, &known, &table, exp.ao.ridge)?;
    let run = run_proposed(&obs, &known, &ising, &exp.ao, &table, &coarse)?;
    let seconds = start.elapsed().as_secs_f64();
    let n = scene.geom.n_antennas();
    let (detection, false_alarm) = vr_metrics(&run.visibility, &obs.vr.data)?;

    let mut paths = Vec::new();
    for (l, (est, truth)) in run.result.paths.iter().zip(&scene.paths).enumerate() {
        let tpos = truth.geometry().position();
        let (pd, pf) = vr_metrics(&est.visibility, obs.vr.path(l))?;
        let ref_est = reference_coefficient(&scene.ofdm, est.gain, &est.geometry());
        let ref_true = reference_coefficient(&scene.ofdm, truth.gain, &truth.geometry());
        paths.push(json!({
            "aoa_deg": est.aoa.to_degrees(),
            "distance_m": est.distance,
            "ue_distance_m": est.ue_distance,
            "gain": [est.gain.re, est.gain.im],
            "position_m": [est.position.0, est.position.1],
            "true_position_m": [tpos.0, tpos.1],
            "position_error_m": ((est.position.0 - tpos.0).powi(2) + (est.position.1 - tpos.1).powi(2)).sqrt(),
            "reference_gain_error": (ref_est - ref_true).norm(),
            "blocked_antennas": blocked_ranges(&est.visibility),
            "true_blocked_antennas": blocked_ranges(obs.vr.path(l)),
            "vr_detection": pd,
            "vr_false_alarm": pf,
            "residual": est.residual,
        }));
    }
    let record = json!({
        "seed": exp.campaign.seed,
        "noise_var": scene.noise_var,
        "fraunhofer_distance_m": exp.fraunhofer_m,
        "converged": run.state.converged,
        "iterations": run.state.iterations,
        "objective": run.state.history.last().map(|h| h.total),
        "b_increases": run.state.b_increases,
        "vr_detection": detection,
        "vr_false_alarm": false_alarm,
        "paths": paths,
    });

    let mut out = Artifacts::new();
    let text = serde_json::to_string_pretty(&record).map_err(io)?;
    write_file(dir, "result.json", format!("{text}\n").as_bytes(), &mut out)?;
    let mut trace = Vec::new();
    write_trace(&run.state, &mut trace)?;
    write_file(dir, "trace_proposed.csv", &trace, &mut out)?;
    plots::visibility(
        &dir.join("visibility.svg"),
        &obs.vr.data,
        &run.visibility,
        n,
    )
    .map_err(RunError::Output)?;
    out.push("visibility.svg".into());
    let truth: Vec<(f64, f64)> = scene
        .paths
        .iter()
        .map(|p| p.geometry().position())
        .collect();
    let est: Vec<(f64, f64)> = run.result.paths.iter().map(|p| p.position).collect();
    plots::scatterers(
        &dir.join("scatterers.svg"),
        &truth,
        &est,
        scene.geom.aperture(),
    )
    .map_err(RunError::Output)?;
    out.push("scatterers.svg".into());

    let mut summary = Vec::new();
    writeln!(summary, "mode = single").map_err(io)?;
    writeln!(summary, "seed = {}", exp.campaign.seed).map_err(io)?;
    writeln!(summary, "fraunhofer_distance_m = {}", exp.fraunhofer_m).map_err(io)?;
    writeln!(summary, "converged = {}", run.state.converged).map_err(io)?;
    writeln!(summary, "iterations = {}", run.state.iterations).map_err(io)?;
    writeln!(summary, "vr_detection = {detection}").map_err(io)?;
    writeln!(summary, "vr_false_alarm = {false_alarm}").map_err(io)?;
    writeln!(summary, "seconds = {seconds:.3}").map_err(io)?;
    write_file(dir, "summary.txt", &summary, &mut out)?;
    Ok(out)
}

/// Blocked antennas of one path as inclusive 1-based ranges.
pub fn blocked_ranges(b: &[u8]) -> Vec<[usize; 2]> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, &v) in b.iter().chain(std::iter::once(&1)).enumerate() {
        match (v, start) {
            (0, None) => start = Some(i + 1),
            (1, Some(s)) => {
                out.push([s, i]);
                start = None;
            }
            _ => {}
        }
    }
    out
}

fn campaign(exp: &Experiment, dir: &Path) -> Result<Artifacts, RunError> {
    let scene = &exp.scene;
    let ising = exp.ising()?;
    let table = SteeringTable::new(&scene.geom, &scene.ofdm, &exp.grid)?;
    let est = Estimators {
        ising: &ising,
        config: &exp.ao,
        table: &table,
    };
    let start = Instant::now();
    let (report, _) = run_campaign(scene, &exp.campaign, &est)?;
    let seconds = start.elapsed().as_secs_f64();

    let mut out = Artifacts::new();
    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    write_file(dir, "report.csv", &csv, &mut out)?;
    let mut summary = Vec::new();
    writeln!(summary, "mode = campaign").map_err(io)?;
    writeln!(summary, "fraunhofer_distance_m = {}", exp.fraunhofer_m).map_err(io)?;
    report.write_summary(&exp.campaign, &mut summary)?;
    writeln!(summary, "seconds = {seconds:.3}").map_err(io)?;
    write_file(dir, "summary.txt", &summary, &mut out)?;
    plots::rmse(
        &dir.join("rmse.svg"),
        &report,
        &exp.campaign.snr_db,
        &exp.campaign.methods,
    )
    .map_err(RunError::Output)?;
    out.push("rmse.svg".into());
    Ok(out)
}

/// Re-reads a written report; used to confirm the CSV round-trips.
pub fn read_report(path: &Path) -> Result<McReport, RunError> {
    let f = fs::File::open(path).map_err(io)?;
    Ok(McReport::read_csv(f)?)
}

fn selftest(exp: &Experiment, dir: &Path) -> Result<Artifacts, RunError> {
    let suites = all_suites(exp.campaign.seed)?;
    let mut text = Vec::new();
    let mut failed = Vec::new();
    for s in &suites {
        let status = if s.passed() { "PASS" } else { "FAIL" };
        let line = format!(
            "{status} {:<26} cases {:>3}  failures {}  worst {:.3e}  tolerance {:e}",
            s.name, s.cases, s.failures, s.worst, s.tolerance
        );
        println!("{line}");
        writeln!(text, "{line}").map_err(io)?;
        if !s.passed() {
            failed.push(s.name);
        }
    }
    let mut out = Artifacts::new();
    write_file(dir, "selftest.txt", &text, &mut out)?;
    if failed.is_empty() {
        Ok(out)
    } else {
        Err(RunError::Selftest(failed.join(", ")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blocked_ranges_from_indicator() {
        let mut b = vec![1u8; 12];
        for i in [0, 4, 5, 6, 11] {
            b[i] = 0;
        }
        assert_eq!(blocked_ranges(&b), vec![[1, 1], [5, 7], [12, 12]]);
        assert!(blocked_ranges(&[1, 1]).is_empty());
    }

    #[test]
    fn convenience_flags_become_overrides() {
        let spec = RunSpec {
            mode: Mode::Campaign,
            config: PathBuf::new(),
            out: PathBuf::new(),
            seed: Some(9),
            snr_db: Some(5.0),
            trials: Some(2),
            overrides: vec!["ising.beta0=2".into()],
        };
        assert_eq!(
            overrides(&spec),
            vec![
                "ising.beta0=2",
                "campaign.seed=9",
                "campaign.trials=2",
                "campaign.snr_db=[5.0]"
            ]
        );
    }
}
