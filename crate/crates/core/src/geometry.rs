//! Array geometry, OFDM numerology and the spherical-wavefront steering model.
//!
//! The uniform linear array lies on the y-axis with its reference point (the
//! array centre) at the origin. Antenna `n` (1-based) sits at `(0, δ_n Δ)`
//! with `δ_n = (2n − N − 1) / 2`. A scatterer at range `d` and angle `θ`
//! (measured from the x-axis) sits at `(d cos θ, d sin θ)`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub type C64 = Complex64;

/// `exp(−j 2π cycles)`, reducing the cycle count first so that long
/// propagation paths keep full phase precision.
#[inline]
pub(crate) fn phasor(cycles: f64) -> C64 {
    let frac = cycles - cycles.floor();
    let (s, c) = (-2.0 * PI * frac).sin_cos();
    C64::new(c, s)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    n_antennas: usize,
    spacing: f64,
}

impl ArrayGeometry {
    pub fn new(n_antennas: usize, spacing: f64) -> Result<Self> {
        if n_antennas < 2 {
            return Err(invalid(format!(
                "array needs at least 2 antennas, got {n_antennas}"
            )));
        }
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(invalid(format!(
                "element spacing must be positive, got {spacing}"
            )));
        }
        Ok(Self {
            n_antennas,
            spacing,
        })
    }

    pub fn n_antennas(&self) -> usize {
        self.n_antennas
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Centred index offset `δ_n` for the 1-based antenna index `n`.
    pub fn offset(&self, n: usize) -> f64 {
        (2.0 * n as f64 - self.n_antennas as f64 - 1.0) / 2.0
    }

    /// Offsets for all antennas in storage order (antenna 1 first).
    pub fn offsets(&self) -> Vec<f64> {
        (1..=self.n_antennas).map(|n| self.offset(n)).collect()
    }

    /// Physical aperture `(N − 1) Δ`.
    pub fn aperture(&self) -> f64 {
        (self.n_antennas - 1) as f64 * self.spacing
    }

    /// Cartesian position of the 1-based antenna `n`.
    pub fn antenna_position(&self, n: usize) -> (f64, f64) {
        (0.0, self.offset(n) * self.spacing)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OfdmConfig {
    pub carrier_hz: f64,
    pub n_subcarriers: usize,
    pub subcarrier_spacing_hz: f64,
    pub n_snapshots: usize,
    pub speed_of_light: f64,
}

impl OfdmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.carrier_hz.is_finite() && self.carrier_hz > 0.0) {
            return Err(invalid("carrier frequency must be positive"));
        }
        if self.n_subcarriers == 0 {
            return Err(invalid("at least one subcarrier is required"));
        }
        if self.n_snapshots == 0 {
            return Err(invalid("at least one snapshot is required"));
        }
        if !(self.subcarrier_spacing_hz.is_finite() && self.subcarrier_spacing_hz > 0.0) {
            return Err(invalid("subcarrier spacing must be positive"));
        }
        if !(self.speed_of_light.is_finite() && self.speed_of_light > 0.0) {
            return Err(invalid("speed of light must be positive"));
        }
        Ok(())
    }

    /// Frequency of the 1-based subcarrier `k`: `f_k = f_c + k Δf`.
    pub fn frequency(&self, k: usize) -> f64 {
        self.carrier_hz + k as f64 * self.subcarrier_spacing_hz
    }

    /// All subcarrier frequencies, `k = 1..=K`.
    pub fn frequencies(&self) -> Vec<f64> {
        (1..=self.n_subcarriers)
            .map(|k| self.frequency(k))
            .collect()
    }

    pub fn wavelength(&self) -> f64 {
        self.speed_of_light / self.carrier_hz
    }

    /// Fraunhofer distance `2 D² / λ` of `geom` at the carrier.
    pub fn fraunhofer_distance(&self, geom: &ArrayGeometry) -> f64 {
        2.0 * geom.aperture().powi(2) / self.wavelength()
    }
}

/// Range, angle and UE-to-scatterer distance of one propagation path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathGeometry {
    pub distance: f64,
    pub aoa: f64,
    pub ue_distance: f64,
}

impl PathGeometry {
    pub fn new(distance: f64, aoa: f64, ue_distance: f64) -> Self {
        Self {
            distance,
            aoa,
            ue_distance,
        }
    }

    /// Scatterer position `(d cos θ, d sin θ)`.
    pub fn position(&self) -> (f64, f64) {
        (
            self.distance * self.aoa.cos(),
            self.distance * self.aoa.sin(),
        )
    }
}

/// One propagation path: complex gain plus geometry. Path 0 is the LoS path
/// and carries `ue_distance = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathParams {
    pub gain: C64,
    pub distance: f64,
    pub aoa: f64,
    pub ue_distance: f64,
}

impl PathParams {
    pub fn geometry(&self) -> PathGeometry {
        PathGeometry::new(self.distance, self.aoa, self.ue_distance)
    }

    pub fn validate(&self, index: usize) -> Result<()> {
        if !(self.distance.is_finite() && self.distance > 0.0) {
            return Err(invalid(format!("path {index}: distance must be positive")));
        }
        if !(self.aoa.is_finite() && self.aoa.abs() < PI / 2.0) {
            return Err(invalid(format!(
                "path {index}: AoA must lie in (-90°, 90°)"
            )));
        }
        if !(self.ue_distance.is_finite() && self.ue_distance >= 0.0) {
            return Err(invalid(format!(
                "path {index}: UE distance must be non-negative"
            )));
        }
        if index == 0 && self.ue_distance != 0.0 {
            return Err(invalid(
                "path 0 is the LoS path and must have ue_distance = 0",
            ));
        }
        if !(self.gain.re.is_finite() && self.gain.im.is_finite()) {
            return Err(invalid(format!("path {index}: gain must be finite")));
        }
        Ok(())
    }
}

/// Distance between a scatterer at `(d, θ)` and the 1-based antenna `n`.
pub fn antenna_distance(geom: &ArrayGeometry, d: f64, theta: f64, n: usize) -> Result<f64> {
    if !(d.is_finite() && d > 0.0) {
        return Err(invalid(format!(
            "scatterer distance must be positive, got {d}"
        )));
    }
    if n == 0 || n > geom.n_antennas() {
        return Err(invalid(format!(
            "antenna index {n} outside 1..={}",
            geom.n_antennas()
        )));
    }
    Ok(distance_unchecked(
        d,
        theta,
        geom.offset(n) * geom.spacing(),
    ))
}

#[inline]
pub(crate) fn distance_unchecked(d: f64, theta: f64, pos: f64) -> f64 {
    (d * d - 2.0 * d * pos * theta.sin() + pos * pos).sqrt()
}

/// Steering vector `h_k` of a path at the 1-based subcarrier `k`.
pub fn steering_vector(
    geom: &ArrayGeometry,
    ofdm: &OfdmConfig,
    path: &PathParams,
    k: usize,
) -> Result<Vec<C64>> {
    if k == 0 || k > ofdm.n_subcarriers {
        return Err(invalid(format!(
            "subcarrier index {k} outside 1..={}",
            ofdm.n_subcarriers
        )));
    }
    path.validate(1)?;
    let mut out = vec![C64::new(0.0, 0.0); geom.n_antennas()];
    steering_into(
        geom,
        ofdm.frequency(k),
        ofdm.speed_of_light,
        &path.geometry(),
        &mut out,
    );
    Ok(out)
}

/// Writes the steering vector at frequency `freq` into `out` (length N).
pub(crate) fn steering_into(
    geom: &ArrayGeometry,
    freq: f64,
    c: f64,
    pg: &PathGeometry,
    out: &mut [C64],
) {
    let common = phasor(freq * pg.ue_distance / c);
    let sin_t = pg.aoa.sin();
    let d = pg.distance;
    for (n, slot) in out.iter_mut().enumerate() {
        let pos = geom.offset(n + 1) * geom.spacing();
        let dn = (d * d - 2.0 * d * pos * sin_t + pos * pos).sqrt();
        *slot = common * phasor(freq * dn / c) * (d / dn);
    }
}

/// Steering vectors for all subcarriers, storage order `(k, n)`.
pub fn steering_matrix(geom: &ArrayGeometry, ofdm: &OfdmConfig, pg: &PathGeometry) -> Vec<C64> {
    let n = geom.n_antennas();
    let mut out = vec![C64::new(0.0, 0.0); n * ofdm.n_subcarriers];
    for (k, chunk) in out.chunks_mut(n).enumerate() {
        steering_into(geom, ofdm.frequency(k + 1), ofdm.speed_of_light, pg, chunk);
    }
    out
}
