//! Monte-Carlo comparison of the AO estimator against LS-MLE baselines.
//!
//! Every method in a trial sees the same observation and starts from the
//! same coarse grid search. Baselines fix `α`, then alternate the parametric
//! path fit with the LS gain step; the proposed method runs the full AO.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ao::{
    coarse_paths, init_from_coarse, refine_paths, run_ao, AoConfig, AoState, CoarseInit,
    KnownConstants,
};
use crate::error::{invalid, mismatch, Error, Result};
use crate::extract::{
    fit_path, reference_coefficient, scatterer_position, EstimationResult, PathEstimate,
    SteeringTable,
};
use crate::geometry::{PathParams, C64};
use crate::ising::IsingParams;
use crate::synth::{set_snr, synthesize, ObservationSet, SceneConfig};
use crate::tensors::{residual_energy, SnSField};

/// Parametric sweeps the baselines get after the coarse search.
pub const BASELINE_SWEEPS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BaselineKind {
    /// `α ≡ 1`.
    NoSns,
    /// `α = b` for an iid Bernoulli(0.5) guess of `b`.
    RandomSns,
    /// The realised amplitudes.
    KnownSns,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    Proposed,
    Baseline(BaselineKind),
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Proposed,
        Method::Baseline(BaselineKind::NoSns),
        Method::Baseline(BaselineKind::RandomSns),
        Method::Baseline(BaselineKind::KnownSns),
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Proposed => "proposed",
            Method::Baseline(BaselineKind::NoSns) => "no-sns",
            Method::Baseline(BaselineKind::RandomSns) => "random-sns",
            Method::Baseline(BaselineKind::KnownSns) => "known-sns",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| invalid(format!("unknown method `{s}`")))
    }
}

/// Estimator output for one method on one observation.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodRun {
    pub result: EstimationResult,
    /// Visibility used or estimated, length NL in `(l, n)` order.
    pub visibility: Vec<u8>,
    pub state: AoState,
}

/// Packs a state into per-path estimates. Without path geometry the
/// steering blocks are fitted against `table`.
pub fn estimation_result(
    y: &crate::ChannelTensor,
    state: &AoState,
    table: &SteeringTable,
) -> Result<EstimationResult> {
    let n = state.h.n;
    let residual = residual_energy(y, &state.g, &state.h, &state.alpha);
    let mut paths = Vec::with_capacity(state.g.len());
    for l in 0..state.g.len() {
        let (pg, gain) = match &state.paths {
            Some(p) => (p[l], state.g[l] * state.phases[l]),
            None => {
                let fit = fit_path(&state.h.path(l), table)?;
                (fit.geometry, state.g[l] * fit.phase)
            }
        };
        paths.push(PathEstimate {
            aoa: pg.aoa,
            distance: pg.distance,
            ue_distance: pg.ue_distance,
            gain,
            visibility: state.b[l * n..(l + 1) * n].to_vec(),
            amplitudes: (0..state.alpha.t)
                .map(|t| state.alpha.path_snapshot(l, t).to_vec())
                .collect(),
            position: scatterer_position(pg.distance, pg.aoa),
            residual,
        });
    }
    Ok(EstimationResult { paths })
}

fn baseline_alpha<R: Rng + ?Sized>(
    kind: BaselineKind,
    obs: &ObservationSet,
    rng: &mut R,
) -> (SnSField, Vec<u8>) {
    let d = obs.scene.dims();
    match kind {
        BaselineKind::NoSns => (
            SnSField::filled(d.n, d.l, d.t, C64::new(1.0, 0.0)),
            vec![1; d.n * d.l],
        ),
        BaselineKind::RandomSns => {
            let b: Vec<u8> = (0..d.n * d.l)
                .map(|_| u8::from(rng.gen_bool(0.5)))
                .collect();
            let vals: Vec<f64> = b.iter().map(|&v| v as f64).cycle().take(d.nlt()).collect();
            (
                SnSField::from_real(d.n, d.l, d.t, &vals).expect("sized from scene"),
                b,
            )
        }
        BaselineKind::KnownSns => (obs.sns.clone(), obs.vr.data.clone()),
    }
}

/// LS-MLE with `α` fixed per `kind`; no visibility estimation.
pub fn run_baseline<R: Rng + ?Sized>(
    kind: BaselineKind,
    obs: &ObservationSet,
    known: &KnownConstants,
    table: &SteeringTable,
    coarse: &CoarseInit,
    ridge: f64,
    rng: &mut R,
) -> Result<MethodRun> {
    let (alpha, b) = baseline_alpha(kind, obs, rng);
    let mut state = AoState::from_paths(
        known,
        coarse.gains.clone(),
        coarse.paths.clone(),
        alpha,
        b.clone(),
    )?;
    refine_paths(
        &obs.y,
        known,
        table.grid(),
        &mut state,
        BASELINE_SWEEPS,
        ridge,
    )?;
    let result = estimation_result(&obs.y, &state, table)?;
    Ok(MethodRun {
        result,
        visibility: b,
        state,
    })
}

pub fn run_proposed(
    obs: &ObservationSet,
    known: &KnownConstants,
    ising: &IsingParams,
    config: &AoConfig,
    table: &SteeringTable,
    coarse: &CoarseInit,
) -> Result<MethodRun> {
    let init = init_from_coarse(&obs.y, known, ising, table.grid(), coarse, config)?;
    let state = run_ao(&obs.y, known, ising, config, table.grid(), init)?;
    let result = estimation_result(&obs.y, &state, table)?;
    Ok(MethodRun {
        result,
        visibility: state.b.clone(),
        state,
    })
}

/// Detection rate (truly blocked entries estimated blocked) and false-alarm
/// rate (truly visible entries estimated blocked). An empty class scores as
/// perfect: detection 1 when nothing is blocked, false alarm 0 when nothing
/// is visible.
pub fn vr_metrics(b_hat: &[u8], b_true: &[u8]) -> Result<(f64, f64)> {
    if b_hat.len() != b_true.len() {
        return Err(mismatch("visibility vectors differ in length"));
    }
    let (mut blocked, mut hit, mut visible, mut false_alarm) = (0usize, 0usize, 0usize, 0usize);
    for (&e, &t) in b_hat.iter().zip(b_true) {
        if t == 0 {
            blocked += 1;
            hit += usize::from(e == 0);
        } else {
            visible += 1;
            false_alarm += usize::from(e == 0);
        }
    }
    let det = if blocked == 0 {
        1.0
    } else {
        hit as f64 / blocked as f64
    };
    let fa = if visible == 0 {
        0.0
    } else {
        false_alarm as f64 / visible as f64
    };
    Ok((det, fa))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Quantity {
    /// Scatterer position in metres.
    Location,
    /// Path coefficient at the array reference on the first subcarrier.
    Gain,
}

/// Squared error of each path of one estimate, paths matched by index.
pub fn squared_errors(
    estimate: &EstimationResult,
    truth: &[PathParams],
    ofdm: &crate::OfdmConfig,
    quantity: Quantity,
) -> Result<Vec<f64>> {
    if estimate.paths.len() != truth.len() {
        return Err(mismatch("estimate and truth have different path counts"));
    }
    Ok(estimate
        .paths
        .iter()
        .zip(truth)
        .map(|(e, t)| match quantity {
            Quantity::Location => {
                let (x, y) = t.geometry().position();
                (e.position.0 - x).powi(2) + (e.position.1 - y).powi(2)
            }
            Quantity::Gain => {
                let est = reference_coefficient(ofdm, e.gain, &e.geometry());
                let tru = reference_coefficient(ofdm, t.gain, &t.geometry());
                (est - tru).norm_sqr()
            }
        })
        .collect())
}

/// `√(mean over trials and paths of the squared error)`.
pub fn rmse(
    estimates: &[EstimationResult],
    truth: &[PathParams],
    ofdm: &crate::OfdmConfig,
    quantity: Quantity,
) -> Result<f64> {
    if estimates.is_empty() {
        return Err(invalid("RMSE needs at least one trial"));
    }
    let per_trial = estimates
        .iter()
        .map(|e| squared_errors(e, truth, ofdm, quantity).map(|v| mean(&v)))
        .collect::<Result<Vec<_>>>()?;
    Ok(mean(&per_trial).sqrt())
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// RMSE of per-trial mean squared errors and its standard error by the delta
/// method, `se(MSE) / (2 RMSE)`.
pub fn rmse_with_se(per_trial_mse: &[f64]) -> (f64, f64) {
    let m = mean(per_trial_mse);
    let r = m.sqrt();
    let n = per_trial_mse.len();
    if n < 2 || r == 0.0 {
        return (r, 0.0);
    }
    let var = per_trial_mse.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    (r, (var / n as f64).sqrt() / (2.0 * r))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignSpec {
    pub snr_db: Vec<f64>,
    pub trials: usize,
    pub methods: Vec<Method>,
    pub seed: u64,
}

impl CampaignSpec {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(invalid("a campaign needs at least one trial"));
        }
        if self.snr_db.is_empty() || self.snr_db.iter().any(|s| !s.is_finite()) {
            return Err(invalid("SNR grid must be non-empty and finite"));
        }
        if self.methods.is_empty() {
            return Err(invalid("a campaign needs at least one method"));
        }
        Ok(())
    }
}

/// Everything needed to run one method on one observation.
pub struct Estimators<'a> {
    pub ising: &'a IsingParams,
    pub config: &'a AoConfig,
    pub table: &'a SteeringTable,
}

/// Per-method outcome of one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub method: Method,
    pub location_sq: Vec<f64>,
    pub gain_sq: Vec<f64>,
    pub positions: Vec<(f64, f64)>,
    pub detection: f64,
    pub false_alarm: f64,
    /// False-alarm rate of each path separately.
    pub path_false_alarm: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub b_increases: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub snr_db: f64,
    pub trial: usize,
    pub outcomes: Vec<TrialOutcome>,
}

/// Generator for trial `trial` at SNR index `point`.
pub fn trial_rng(seed: u64, point: usize, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((point as u64) << 32) | trial as u64);
    rng
}

fn method_rng(seed: u64, point: usize, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    rng.set_stream(((point as u64) << 32) | trial as u64);
    rng
}

/// Runs every method on one shared observation.
pub fn run_trial(
    scene: &SceneConfig,
    methods: &[Method],
    est: &Estimators<'_>,
    seed: u64,
    point: usize,
    trial: usize,
) -> Result<Vec<TrialOutcome>> {
    let obs = synthesize(scene, &mut trial_rng(seed, point, trial))?;
    let known = KnownConstants::from_scene(scene);
    let coarse = coarse_paths(&obs.y, &known, est.table, est.config.ridge)?;
    let mut rng = method_rng(seed, point, trial);
    let n = known.geom.n_antennas();
    let mut out = Vec::with_capacity(methods.len());
    for &method in methods {
        let start = Instant::now();
        let run = match method {
            Method::Proposed => {
                run_proposed(&obs, &known, est.ising, est.config, est.table, &coarse)?
            }
            Method::Baseline(kind) => run_baseline(
                kind,
                &obs,
                &known,
                est.table,
                &coarse,
                est.config.ridge,
                &mut rng,
            )?,
        };
        let seconds = start.elapsed().as_secs_f64();
        let (detection, false_alarm) = vr_metrics(&run.visibility, &obs.vr.data)?;
        let path_false_alarm = (0..known.n_paths)
            .map(|l| vr_metrics(&run.visibility[l * n..(l + 1) * n], obs.vr.path(l)).map(|m| m.1))
            .collect::<Result<Vec<_>>>()?;
        out.push(TrialOutcome {
            method,
            location_sq: squared_errors(
                &run.result,
                &scene.paths,
                &scene.ofdm,
                Quantity::Location,
            )?,
            gain_sq: squared_errors(&run.result, &scene.paths, &scene.ofdm, Quantity::Gain)?,
            positions: run.result.paths.iter().map(|p| p.position).collect(),
            detection,
            false_alarm,
            path_false_alarm,
            converged: run.state.converged,
            iterations: run.state.iterations,
            b_increases: run.state.b_increases,
            seconds,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub snr_db: f64,
    pub method: String,
    pub metric: String,
    pub value: f64,
    pub trials: usize,
}

/// Aggregated campaign metrics, one row per SNR × method × metric.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct McReport {
    pub rows: Vec<ReportRow>,
}

pub const METRICS: [&str; 9] = [
    "location_rmse",
    "location_rmse_se",
    "gain_rmse",
    "gain_rmse_se",
    "vr_detection",
    "vr_false_alarm",
    "converged_fraction",
    "mean_iterations",
    "b_increase_rate",
];

impl McReport {
    pub fn value(&self, snr_db: f64, method: Method, metric: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.snr_db == snr_db && r.method == method.name() && r.metric == metric)
            .map(|r| r.value)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let rows = r
            .deserialize()
            .collect::<std::result::Result<Vec<ReportRow>, _>>()?;
        Ok(Self { rows })
    }

    /// `key = value` lines, one per row, plus the campaign header.
    pub fn write_summary<W: Write>(&self, spec: &CampaignSpec, mut out: W) -> Result<()> {
        writeln!(out, "seed = {}", spec.seed)?;
        writeln!(out, "trials = {}", spec.trials)?;
        for row in &self.rows {
            writeln!(
                out,
                "{}.{}.{} = {}",
                row.snr_db, row.method, row.metric, row.value
            )?;
        }
        Ok(())
    }
}

/// Aggregates the records of one SNR point into report rows.
pub fn aggregate(snr_db: f64, methods: &[Method], records: &[TrialRecord]) -> Vec<ReportRow> {
    let trials = records.len();
    let mut rows = Vec::new();
    for &method in methods {
        let outs: Vec<&TrialOutcome> = records
            .iter()
            .filter_map(|r| r.outcomes.iter().find(|o| o.method == method))
            .collect();
        if outs.is_empty() {
            continue;
        }
        let loc: Vec<f64> = outs.iter().map(|o| mean(&o.location_sq)).collect();
        let gain: Vec<f64> = outs.iter().map(|o| mean(&o.gain_sq)).collect();
        let (lr, lse) = rmse_with_se(&loc);
        let (gr, gse) = rmse_with_se(&gain);
        let iterations: usize = outs.iter().map(|o| o.iterations).sum();
        let increases: usize = outs.iter().map(|o| o.b_increases).sum();
        let values = [
            lr,
            lse,
            gr,
            gse,
            mean(&outs.iter().map(|o| o.detection).collect::<Vec<_>>()),
            mean(&outs.iter().map(|o| o.false_alarm).collect::<Vec<_>>()),
            outs.iter().filter(|o| o.converged).count() as f64 / outs.len() as f64,
            iterations as f64 / outs.len() as f64,
            if iterations == 0 {
                0.0
            } else {
                increases as f64 / iterations as f64
            },
        ];
        for (metric, value) in METRICS.iter().zip(values) {
            rows.push(ReportRow {
                snr_db,
                method: method.name().to_string(),
                metric: metric.to_string(),
                value,
                trials,
            });
        }
    }
    rows
}

/// Runs `spec.trials` paired trials at every SNR point. Trials run in
/// parallel; results are collected in trial order, so the report depends
/// only on the inputs.
pub fn run_campaign(
    scene: &SceneConfig,
    spec: &CampaignSpec,
    est: &Estimators<'_>,
) -> Result<(McReport, Vec<TrialRecord>)> {
    spec.validate()?;
    scene.validate()?;
    let mut report = McReport::default();
    let mut all = Vec::new();
    for (point, &snr_db) in spec.snr_db.iter().enumerate() {
        let at_snr = set_snr(scene, snr_db)?;
        let records = (0..spec.trials)
            .into_par_iter()
            .map(|trial| {
                run_trial(&at_snr, &spec.methods, est, spec.seed, point, trial).map(|outcomes| {
                    TrialRecord {
                        snr_db,
                        trial,
                        outcomes,
                    }
                })
            })
            .collect::<Result<Vec<_>>>()?;
        log::info!("SNR {snr_db} dB: {} trials done", records.len());
        report
            .rows
            .extend(aggregate(snr_db, &spec.methods, &records));
        all.extend(records);
    }
    Ok((report, all))
}
