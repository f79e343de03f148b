//! Dense containers for observations, per-antenna amplitudes and steering
//! vectors. Each container fixes one storage order, chosen so that its flat
//! data is exactly the stacked parameter vector of the matching linear model.

use serde::{Deserialize, Serialize};

use crate::error::{mismatch, Result};
use crate::geometry::{steering_matrix, ArrayGeometry, OfdmConfig, PathGeometry, C64};

/// Problem dimensions: antennas, subcarriers, snapshots, paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub n: usize,
    pub k: usize,
    pub t: usize,
    pub l: usize,
}

impl Dims {
    pub fn new(n: usize, k: usize, t: usize, l: usize) -> Self {
        Self { n, k, t, l }
    }

    pub fn from_config(geom: &ArrayGeometry, ofdm: &OfdmConfig, l: usize) -> Self {
        Self::new(geom.n_antennas(), ofdm.n_subcarriers, ofdm.n_snapshots, l)
    }

    /// `N K T`, the number of scalar observations.
    pub fn nkt(&self) -> usize {
        self.n * self.k * self.t
    }

    /// `N L T`, the length of the amplitude and indicator vectors.
    pub fn nlt(&self) -> usize {
        self.n * self.l * self.t
    }

    /// `N L K`, the length of the stacked steering vector.
    pub fn nlk(&self) -> usize {
        self.n * self.l * self.k
    }
}

/// Observation tensor `y_{k,t}[n]`, stored in `(t, k, n)` order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelTensor {
    pub n: usize,
    pub k: usize,
    pub t: usize,
    pub data: Vec<C64>,
}

impl ChannelTensor {
    pub fn zeros(n: usize, k: usize, t: usize) -> Self {
        Self {
            n,
            k,
            t,
            data: vec![C64::new(0.0, 0.0); n * k * t],
        }
    }

    #[inline]
    pub fn index(&self, n: usize, k: usize, t: usize) -> usize {
        (t * self.k + k) * self.n + n
    }

    #[inline]
    pub fn get(&self, n: usize, k: usize, t: usize) -> C64 {
        self.data[self.index(n, k, t)]
    }

    /// The length-N vector `y_{k,t}` (0-based `k`, `t`).
    pub fn column(&self, k: usize, t: usize) -> &[C64] {
        let start = self.index(0, k, t);
        &self.data[start..start + self.n]
    }

    pub fn column_mut(&mut self, k: usize, t: usize) -> &mut [C64] {
        let start = self.index(0, k, t);
        &mut self.data[start..start + self.n]
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum()
    }
}

/// Per-antenna amplitudes `α_{n,t}^{(l)}`, stored in `(t, l, n)` order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnSField {
    pub n: usize,
    pub l: usize,
    pub t: usize,
    pub data: Vec<C64>,
}

impl SnSField {
    pub fn filled(n: usize, l: usize, t: usize, value: C64) -> Self {
        Self {
            n,
            l,
            t,
            data: vec![value; n * l * t],
        }
    }

    /// Builds a field from a real vector in the same `(t, l, n)` order.
    pub fn from_real(n: usize, l: usize, t: usize, values: &[f64]) -> Result<Self> {
        if values.len() != n * l * t {
            return Err(mismatch(format!(
                "expected {} amplitudes, got {}",
                n * l * t,
                values.len()
            )));
        }
        Ok(Self {
            n,
            l,
            t,
            data: values.iter().map(|&v| C64::new(v, 0.0)).collect(),
        })
    }

    #[inline]
    pub fn index(&self, n: usize, l: usize, t: usize) -> usize {
        (t * self.l + l) * self.n + n
    }

    #[inline]
    pub fn get(&self, n: usize, l: usize, t: usize) -> C64 {
        self.data[self.index(n, l, t)]
    }

    /// `α_t^{(l)}` as a length-N slice.
    pub fn path_snapshot(&self, l: usize, t: usize) -> &[C64] {
        let start = self.index(0, l, t);
        &self.data[start..start + self.n]
    }
}

/// Steering vectors `h_k^{(l)}[n]`, stored in `(k, l, n)` order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteeringField {
    pub n: usize,
    pub l: usize,
    pub k: usize,
    pub data: Vec<C64>,
}

impl SteeringField {
    pub fn zeros(n: usize, l: usize, k: usize) -> Self {
        Self {
            n,
            l,
            k,
            data: vec![C64::new(0.0, 0.0); n * l * k],
        }
    }

    /// Evaluates the spherical-wavefront model for each path geometry.
    pub fn from_geometry(geom: &ArrayGeometry, ofdm: &OfdmConfig, paths: &[PathGeometry]) -> Self {
        let mut out = Self::zeros(geom.n_antennas(), paths.len(), ofdm.n_subcarriers);
        for (l, pg) in paths.iter().enumerate() {
            let block = steering_matrix(geom, ofdm, pg);
            out.set_path(l, &block);
        }
        out
    }

    #[inline]
    pub fn index(&self, n: usize, l: usize, k: usize) -> usize {
        (k * self.l + l) * self.n + n
    }

    #[inline]
    pub fn get(&self, n: usize, l: usize, k: usize) -> C64 {
        self.data[self.index(n, l, k)]
    }

    /// `h_k^{(l)}` as a length-N slice.
    pub fn path_subcarrier(&self, l: usize, k: usize) -> &[C64] {
        let start = self.index(0, l, k);
        &self.data[start..start + self.n]
    }

    /// All subcarriers of path `l`, in `(k, n)` order.
    pub fn path(&self, l: usize) -> Vec<C64> {
        (0..self.k)
            .flat_map(|k| self.path_subcarrier(l, k).iter().copied())
            .collect()
    }

    /// Overwrites path `l` from a `(k, n)`-ordered block.
    pub fn set_path(&mut self, l: usize, block: &[C64]) {
        for k in 0..self.k {
            let start = self.index(0, l, k);
            self.data[start..start + self.n].copy_from_slice(&block[k * self.n..(k + 1) * self.n]);
        }
    }
}

/// Noiseless model `Σ_l g_l (α_t^{(l)} ⊙ h_k^{(l)})`.
pub fn model_signal(g: &[C64], h: &SteeringField, alpha: &SnSField) -> ChannelTensor {
    let (n, k_count, t_count) = (h.n, h.k, alpha.t);
    let mut out = ChannelTensor::zeros(n, k_count, t_count);
    for t in 0..t_count {
        for k in 0..k_count {
            let col = out.column_mut(k, t);
            for (l, &gl) in g.iter().enumerate() {
                let a = alpha.path_snapshot(l, t);
                let hk = h.path_subcarrier(l, k);
                for i in 0..n {
                    col[i] += gl * a[i] * hk[i];
                }
            }
        }
    }
    out
}

/// `‖y − Σ_l g_l (α ⊙ h)‖²`.
pub fn residual_energy(y: &ChannelTensor, g: &[C64], h: &SteeringField, alpha: &SnSField) -> f64 {
    let model = model_signal(g, h, alpha);
    y.data
        .iter()
        .zip(&model.data)
        .map(|(a, b)| (a - b).norm_sqr())
        .sum()
}
