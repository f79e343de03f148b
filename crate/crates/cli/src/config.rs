//! Experiment configuration files.
//!
//! A file has the sections `[array]`, `[ofdm]`, `[noise]`, `[ising]`,
//! `[ao]`, `[mle]`, `[campaign]` and one `[[path]]` table per propagation
//! path. Every quantity is in SI units unless the key name says otherwise
//! (`_deg`, `_db`). Unknown keys are rejected.

use std::path::Path;

use elaa_core::ao::{AoConfig, HStepMode, InitConfig, QpConfig};
use elaa_core::bench::{CampaignSpec, Method};
use elaa_core::extract::MleGrid;
use elaa_core::ising::{default_chain_params, IsingParams};
use elaa_core::synth::{set_snr, BlockedRange, SceneConfig};
use elaa_core::{ArrayGeometry, OfdmConfig, PathGeometry, PathParams, C64};
use serde::Deserialize;
use toml::{Spanned, Table, Value};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },

    #[error("{0}")]
    Parse(String),

    #[error("invalid override `{0}`: {1}")]
    Override(String, String),

    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub array: ArraySection,
    pub ofdm: OfdmSection,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default)]
    pub ising: IsingSection,
    #[serde(default)]
    pub ao: AoSection,
    #[serde(default)]
    pub mle: MleSection,
    #[serde(default)]
    pub campaign: CampaignSection,
    pub path: Vec<Spanned<PathSection>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArraySection {
    pub n_antennas: usize,
    pub spacing_m: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OfdmSection {
    pub carrier_hz: f64,
    pub n_subcarriers: usize,
    pub bandwidth_hz: f64,
    /// Defaults to `bandwidth_hz / n_subcarriers`.
    pub subcarrier_spacing_hz: Option<f64>,
    pub n_snapshots: usize,
    #[serde(default = "default_light")]
    pub speed_of_light: f64,
}

fn default_light() -> f64 {
    3e8
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSection {
    pub snr_db: f64,
    /// Takes precedence over `snr_db` when set.
    pub noise_var: Option<f64>,
    pub blocked_var: f64,
    pub visible_var: f64,
}

impl Default for NoiseSection {
    fn default() -> Self {
        Self {
            snr_db: 10.0,
            noise_var: None,
            blocked_var: elaa_core::synth::DEFAULT_BLOCKED_VAR,
            visible_var: elaa_core::synth::DEFAULT_VISIBLE_VAR,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IsingSection {
    pub beta0: f64,
    pub gamma0: f64,
}

impl Default for IsingSection {
    fn default() -> Self {
        Self {
            beta0: elaa_core::ising::DEFAULT_BETA0,
            gamma0: elaa_core::ising::DEFAULT_GAMMA0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AoSection {
    pub max_iterations: usize,
    pub tolerance: f64,
    pub ridge: f64,
    /// `parametric` or `least-squares`.
    pub h_step: String,
    pub vr_scan: bool,
    pub refine_sweeps: usize,
    pub qp_eta: f64,
    pub qp_max_inner: usize,
    pub qp_max_outer: usize,
    pub qp_local_search: bool,
}

impl Default for AoSection {
    fn default() -> Self {
        let ao = AoConfig::default();
        Self {
            max_iterations: ao.max_iterations,
            tolerance: ao.tolerance,
            ridge: ao.ridge,
            h_step: "parametric".into(),
            vr_scan: ao.init.vr_scan,
            refine_sweeps: ao.init.refine_sweeps,
            qp_eta: ao.qp.eta,
            qp_max_inner: ao.qp.max_inner,
            qp_max_outer: ao.qp.max_outer,
            qp_local_search: ao.qp.local_search,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MleSection {
    pub theta_min_deg: f64,
    pub theta_max_deg: f64,
    pub theta_step_deg: f64,
    pub d_min_m: f64,
    pub d_max_m: f64,
    pub d_points: usize,
    pub d_log_spaced: bool,
    pub ue_min_m: f64,
    pub ue_max_m: f64,
    pub ue_step_m: f64,
    pub polish_sweeps: usize,
    pub polish_iterations: usize,
}

impl Default for MleSection {
    fn default() -> Self {
        let g = MleGrid::default();
        Self {
            theta_min_deg: g.theta_min_deg,
            theta_max_deg: g.theta_max_deg,
            theta_step_deg: g.theta_step_deg,
            d_min_m: g.d_min,
            d_max_m: g.d_max,
            d_points: g.d_points,
            d_log_spaced: g.d_log_spaced,
            ue_min_m: g.ue_min,
            ue_max_m: g.ue_max,
            ue_step_m: g.ue_step,
            polish_sweeps: g.polish_sweeps,
            polish_iterations: g.polish_iterations,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CampaignSection {
    pub snr_db: Vec<f64>,
    pub trials: usize,
    pub methods: Vec<String>,
    /// Master seed for every random draw, single runs included.
    pub seed: u64,
}

impl Default for CampaignSection {
    fn default() -> Self {
        Self {
            snr_db: (0..9).map(|i| -10.0 + 5.0 * i as f64).collect(),
            trials: 100,
            methods: Method::ALL.iter().map(|m| m.name().to_string()).collect(),
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathSection {
    pub gain_abs: f64,
    #[serde(default)]
    pub gain_phase_deg: f64,
    pub distance_m: f64,
    pub aoa_deg: f64,
    /// UE-to-scatterer distance. When omitted, path 0 uses 0 and later paths
    /// a single bounce from a UE at path 0's scatterer position.
    pub ue_distance_m: Option<f64>,
    /// Inclusive 1-based antenna ranges, e.g. `[[75, 80]]`.
    #[serde(default)]
    pub blocked: Vec<[usize; 2]>,
}

/// A fully validated experiment.
#[derive(Debug, Clone)]
pub struct Experiment {
    /// Scene at the configured noise level.
    pub scene: SceneConfig,
    pub ao: AoConfig,
    pub beta0: f64,
    pub gamma0: f64,
    pub grid: MleGrid,
    pub campaign: CampaignSpec,
    /// `2D²/λ` with `D = (N − 1)Δ`.
    pub fraunhofer_m: f64,
}

impl Experiment {
    pub fn ising(&self) -> elaa_core::Result<IsingParams> {
        let d = self.scene.dims();
        default_chain_params(d.n, d.l, d.t, self.beta0, self.gamma0)
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Reads and validates a configuration file, applying `key=value`
/// overrides (dotted keys, array indices as numbers: `path.1.aoa_deg=40`).
pub fn parse_config(path: &Path, overrides: &[String]) -> Result<Experiment, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.display().to_string(),
        source,
    })?;
    parse_config_str(&text, overrides).map_err(|e| match e {
        ConfigError::Parse(msg) => ConfigError::Parse(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn parse_config_str(text: &str, overrides: &[String]) -> Result<Experiment, ConfigError> {
    let mut file: FileConfig = toml::from_str(text)
        .map_err(|e| ConfigError::Parse(e.to_string().trim_end().to_string()))?;
    let mut from_text = true;
    if !overrides.is_empty() {
        let mut table: Table =
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let merged = toml::to_string(&table).map_err(|e| ConfigError::Parse(e.to_string()))?;
        file = toml::from_str(&merged)
            .map_err(|e| ConfigError::Parse(format!("after overrides: {}", e.message())))?;
        from_text = false;
    }
    build(&file, |span: std::ops::Range<usize>| {
        if from_text {
            format!("line {}: ", line_of(text, span.start))
        } else {
            String::new()
        }
    })
}

fn parse_value(raw: &str) -> Value {
    match toml::from_str::<Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => Value::String(raw.to_string()),
    }
}

/// Sets one dotted key in a parsed TOML document.
pub fn apply_override(table: &mut Table, spec: &str) -> Result<(), ConfigError> {
    let err = |m: &str| ConfigError::Override(spec.to_string(), m.to_string());
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| err("expected key=value"))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(err("empty key segment"));
    }
    let value = parse_value(raw.trim());
    let (last, parents) = parts.split_last().expect("non-empty");
    if parents.is_empty() {
        table.insert(last.to_string(), value);
        return Ok(());
    }
    let mut cur = table
        .entry(parents[0].to_string())
        .or_insert_with(|| Value::Table(Table::new()));
    for p in &parents[1..] {
        cur = step_into(cur, p).ok_or_else(|| err(&format!("no such entry `{p}`")))?;
    }
    match cur {
        Value::Table(t) => {
            t.insert(last.to_string(), value);
        }
        Value::Array(a) => {
            let i: usize = last
                .parse()
                .map_err(|_| err("array segments must be indices"))?;
            let slot = a
                .get_mut(i)
                .ok_or_else(|| err(&format!("index {i} out of range")))?;
            *slot = value;
        }
        _ => return Err(err("parent is not a table or array")),
    }
    Ok(())
}

fn step_into<'a>(v: &'a mut Value, seg: &str) -> Option<&'a mut Value> {
    match v {
        Value::Table(t) => {
            if !t.contains_key(seg) {
                t.insert(seg.to_string(), Value::Table(Table::new()));
            }
            t.get_mut(seg)
        }
        Value::Array(a) => seg.parse::<usize>().ok().and_then(move |i| a.get_mut(i)),
        _ => None,
    }
}

fn bounce(ue: (f64, f64), d: f64, theta: f64) -> f64 {
    let (x, y) = PathGeometry::new(d, theta, 0.0).position();
    ((x - ue.0).powi(2) + (y - ue.1).powi(2)).sqrt()
}

fn build(
    file: &FileConfig,
    at: impl Fn(std::ops::Range<usize>) -> String,
) -> Result<Experiment, ConfigError> {
    let bad = |m: String| ConfigError::Invalid(m);
    let geom = ArrayGeometry::new(file.array.n_antennas, file.array.spacing_m)
        .map_err(|e| bad(format!("[array] {e}")))?;
    let o = &file.ofdm;
    if !(o.bandwidth_hz > 0.0) {
        return Err(bad("[ofdm] bandwidth_hz must be positive".into()));
    }
    let spacing = o
        .subcarrier_spacing_hz
        .unwrap_or(o.bandwidth_hz / o.n_subcarriers.max(1) as f64);
    let ofdm = OfdmConfig {
        carrier_hz: o.carrier_hz,
        n_subcarriers: o.n_subcarriers,
        subcarrier_spacing_hz: spacing,
        n_snapshots: o.n_snapshots,
        speed_of_light: o.speed_of_light,
    };
    ofdm.validate().map_err(|e| bad(format!("[ofdm] {e}")))?;

    if file.path.is_empty() {
        return Err(bad("at least one [[path]] table is required".into()));
    }
    let los = &file.path[0].get_ref();
    let ue = PathGeometry::new(los.distance_m, los.aoa_deg.to_radians(), 0.0).position();
    let mut paths = Vec::new();
    let mut blockage = Vec::new();
    for (l, sp) in file.path.iter().enumerate() {
        let where_ = at(sp.span());
        let p = sp.get_ref();
        let aoa = p.aoa_deg.to_radians();
        let ue_distance = p.ue_distance_m.unwrap_or(if l == 0 {
            0.0
        } else {
            bounce(ue, p.distance_m, aoa)
        });
        let params = PathParams {
            gain: C64::from_polar(p.gain_abs, p.gain_phase_deg.to_radians()),
            distance: p.distance_m,
            aoa,
            ue_distance,
        };
        params
            .validate(l)
            .map_err(|e| bad(format!("{where_}[[path]] {e}")))?;
        if !(p.gain_abs > 0.0) {
            return Err(bad(format!(
                "{where_}[[path]] {l}: gain_abs must be positive"
            )));
        }
        let mut ranges = Vec::new();
        for &[first, last] in &p.blocked {
            if first == 0 || first > last || last > geom.n_antennas() {
                return Err(bad(format!(
                    "{where_}[[path]] {l}: blocked range [{first}, {last}] outside 1..={}",
                    geom.n_antennas()
                )));
            }
            ranges.push(BlockedRange::new(first, last));
        }
        paths.push(params);
        blockage.push(ranges);
    }

    let n = &file.noise;
    let mut scene = SceneConfig {
        geom,
        ofdm,
        paths,
        blockage,
        noise_var: 1.0,
        blocked_var: n.blocked_var,
        visible_var: n.visible_var,
        seed: file.campaign.seed,
    };
    scene = match n.noise_var {
        Some(v) => SceneConfig {
            noise_var: v,
            ..scene
        },
        None => set_snr(&scene, n.snr_db).map_err(|e| bad(format!("[noise] {e}")))?,
    };
    scene.validate().map_err(|e| bad(format!("scene: {e}")))?;

    let a = &file.ao;
    let h_step = match a.h_step.as_str() {
        "parametric" => HStepMode::Parametric,
        "least-squares" => HStepMode::LeastSquares,
        other => {
            return Err(bad(format!(
                "[ao] h_step must be `parametric` or `least-squares`, got `{other}`"
            )))
        }
    };
    let ao = AoConfig {
        max_iterations: a.max_iterations,
        tolerance: a.tolerance,
        ridge: a.ridge,
        h_step,
        qp: QpConfig {
            eta: a.qp_eta,
            max_inner: a.qp_max_inner,
            max_outer: a.qp_max_outer,
            local_search: a.qp_local_search,
            ..QpConfig::default()
        },
        init: InitConfig {
            vr_scan: a.vr_scan,
            refine_sweeps: a.refine_sweeps,
        },
    };
    ao.validate().map_err(|e| bad(format!("[ao] {e}")))?;

    let m = &file.mle;
    let grid = MleGrid {
        theta_min_deg: m.theta_min_deg,
        theta_max_deg: m.theta_max_deg,
        theta_step_deg: m.theta_step_deg,
        d_min: m.d_min_m,
        d_max: m.d_max_m,
        d_points: m.d_points,
        d_log_spaced: m.d_log_spaced,
        ue_min: m.ue_min_m,
        ue_max: m.ue_max_m,
        ue_step: m.ue_step_m,
        polish_sweeps: m.polish_sweeps,
        polish_iterations: m.polish_iterations,
    };
    grid.validate().map_err(|e| bad(format!("[mle] {e}")))?;

    let c = &file.campaign;
    let methods = c
        .methods
        .iter()
        .map(|s| s.parse::<Method>())
        .collect::<elaa_core::Result<Vec<_>>>()
        .map_err(|e| bad(format!("[campaign] {e}")))?;
    let campaign = CampaignSpec {
        snr_db: c.snr_db.clone(),
        trials: c.trials,
        methods,
        seed: c.seed,
    };
    campaign
        .validate()
        .map_err(|e| bad(format!("[campaign] {e}")))?;

    let exp = Experiment {
        fraunhofer_m: scene.ofdm.fraunhofer_distance(&scene.geom),
        scene,
        ao,
        beta0: file.ising.beta0,
        gamma0: file.ising.gamma0,
        grid,
        campaign,
    };
    exp.ising().map_err(|e| bad(format!("[ising] {e}")))?;
    Ok(exp)
}

/// Validation summary lines, logged after parsing.
pub fn validation_report(exp: &Experiment) -> Vec<String> {
    let s = &exp.scene;
    let lambda = s.ofdm.wavelength();
    let mut out = vec![
        format!(
            "array: N = {}, spacing {} m = {:.3} wavelengths, aperture {:.4} m",
            s.geom.n_antennas(),
            s.geom.spacing(),
            s.geom.spacing() / lambda,
            s.geom.aperture()
        ),
        format!(
            "ofdm: fc = {} Hz, K = {}, subcarrier spacing {} Hz, T = {}",
            s.ofdm.carrier_hz,
            s.ofdm.n_subcarriers,
            s.ofdm.subcarrier_spacing_hz,
            s.ofdm.n_snapshots
        ),
        format!("Fraunhofer distance 2D²/λ = {:.2} m", exp.fraunhofer_m),
    ];
    for (l, p) in s.paths.iter().enumerate() {
        let regime = if p.distance < exp.fraunhofer_m {
            "near field"
        } else {
            "far field"
        };
        out.push(format!(
            "path {l}: d = {} m, θ = {:.2}°, d_UE = {:.4} m ({regime})",
            p.distance,
            p.aoa.to_degrees(),
            p.ue_distance
        ));
    }
    out
}
