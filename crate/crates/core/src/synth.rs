//! Ground-truth scenes and noisy observations.
//!
//! A scene fixes the array, OFDM numerology, propagation paths and the set
//! of blocked antennas per path. Synthesis draws one amplitude per
//! `(antenna, path, snapshot)` from `CN(1, σ_v²)` inside the visibility region
//! and from `CN(0, σ_b²)` behind the blockage, then adds `CN(0, σ_n²)` noise.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{ArrayGeometry, OfdmConfig, PathGeometry, PathParams, C64};
use crate::tensors::{model_signal, ChannelTensor, Dims, SnSField, SteeringField};

pub const DEFAULT_BLOCKED_VAR: f64 = 0.01;
pub const DEFAULT_VISIBLE_VAR: f64 = 1e-4;

/// Inclusive, 1-based range of blocked antennas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockedRange {
    pub first: usize,
    pub last: usize,
}

impl BlockedRange {
    pub fn new(first: usize, last: usize) -> Self {
        Self { first, last }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub geom: ArrayGeometry,
    pub ofdm: OfdmConfig,
    pub paths: Vec<PathParams>,
    /// Blocked antenna ranges, one list per path.
    pub blockage: Vec<Vec<BlockedRange>>,
    pub noise_var: f64,
    pub blocked_var: f64,
    pub visible_var: f64,
    pub seed: u64,
}

impl SceneConfig {
    pub fn dims(&self) -> Dims {
        Dims::from_config(&self.geom, &self.ofdm, self.paths.len())
    }

    pub fn validate(&self) -> Result<()> {
        self.ofdm.validate()?;
        if self.paths.is_empty() {
            return Err(invalid("scene needs at least one path"));
        }
        for (l, p) in self.paths.iter().enumerate() {
            p.validate(l)?;
        }
        if self.blockage.len() != self.paths.len() {
            return Err(invalid(format!(
                "blockage lists ({}) must match paths ({})",
                self.blockage.len(),
                self.paths.len()
            )));
        }
        let n = self.geom.n_antennas();
        for (l, ranges) in self.blockage.iter().enumerate() {
            for r in ranges {
                if r.first == 0 || r.first > r.last || r.last > n {
                    return Err(invalid(format!(
                        "path {l}: blocked range {}..={} outside 1..={n}",
                        r.first, r.last
                    )));
                }
            }
        }
        for (name, v) in [
            ("noise variance", self.noise_var),
            ("blocked-amplitude variance", self.blocked_var),
            ("visible-amplitude variance", self.visible_var),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if self.visible_var > self.blocked_var {
            return Err(invalid(
                "visible-amplitude variance must not exceed the blocked-amplitude variance",
            ));
        }
        Ok(())
    }

    pub fn gains(&self) -> Vec<C64> {
        self.paths.iter().map(|p| p.gain).collect()
    }

    pub fn path_geometries(&self) -> Vec<PathGeometry> {
        self.paths.iter().map(|p| p.geometry()).collect()
    }

    pub fn steering(&self) -> SteeringField {
        SteeringField::from_geometry(&self.geom, &self.ofdm, &self.path_geometries())
    }
}

/// The three-path scene used throughout the experiments: a 100-element
/// half-wavelength ULA at 30 GHz, four subcarriers over 2.88 MHz, four
/// snapshots, one LoS path and two single-bounce NLoS paths.
pub fn reference_scene() -> SceneConfig {
    let geom = ArrayGeometry::new(100, 0.005).expect("valid array");
    let ofdm = OfdmConfig {
        carrier_hz: 30e9,
        n_subcarriers: 4,
        subcarrier_spacing_hz: 2.88e6 / 4.0,
        n_snapshots: 4,
        speed_of_light: 3e8,
    };
    let ue = PathGeometry::new(10.0, 15f64.to_radians(), 0.0).position();
    let bounce = |d: f64, deg: f64| {
        let (x, y) = PathGeometry::new(d, deg.to_radians(), 0.0).position();
        ((x - ue.0).powi(2) + (y - ue.1).powi(2)).sqrt()
    };
    let paths = vec![
        PathParams {
            gain: C64::from_polar(1.0, 0.0),
            distance: 10.0,
            aoa: 15f64.to_radians(),
            ue_distance: 0.0,
        },
        PathParams {
            gain: C64::from_polar(0.8, 60f64.to_radians()),
            distance: 6.0,
            aoa: 50f64.to_radians(),
            ue_distance: bounce(6.0, 50.0),
        },
        PathParams {
            gain: C64::from_polar(0.7, -45f64.to_radians()),
            distance: 7.0,
            aoa: (-25f64).to_radians(),
            ue_distance: bounce(7.0, -25.0),
        },
    ];
    let blockage = vec![
        vec![BlockedRange::new(75, 80)],
        vec![BlockedRange::new(11, 14)],
        vec![BlockedRange::new(34, 38)],
    ];
    let scene = SceneConfig {
        geom,
        ofdm,
        paths,
        blockage,
        noise_var: 1.0,
        blocked_var: DEFAULT_BLOCKED_VAR,
        visible_var: DEFAULT_VISIBLE_VAR,
        seed: 1,
    };
    set_snr(&scene, 10.0).expect("reference scene has signal power")
}

/// Binary visibility indicator `b_n^{(l)}`, stored in `(l, n)` order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VrIndicator {
    pub n: usize,
    pub l: usize,
    pub data: Vec<u8>,
}

impl VrIndicator {
    pub fn all_visible(n: usize, l: usize) -> Self {
        Self {
            n,
            l,
            data: vec![1; n * l],
        }
    }

    #[inline]
    pub fn get(&self, n: usize, l: usize) -> u8 {
        self.data[l * self.n + n]
    }

    pub fn path(&self, l: usize) -> &[u8] {
        &self.data[l * self.n..(l + 1) * self.n]
    }

    /// `1_T ⊗ [b^{(0)}; …; b^{(L-1)}]` as reals, length `N L T`.
    pub fn expanded(&self, t: usize) -> Vec<f64> {
        let single: Vec<f64> = self.data.iter().map(|&v| v as f64).collect();
        single
            .iter()
            .copied()
            .cycle()
            .take(single.len() * t)
            .collect()
    }

    /// Collapses an expanded `N L T` vector by reading its first replica.
    pub fn from_expanded(n: usize, l: usize, b: &[f64]) -> Self {
        Self {
            n,
            l,
            data: b[..n * l].iter().map(|&v| u8::from(v >= 0.5)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSet {
    pub scene: SceneConfig,
    pub y: ChannelTensor,
    pub sns: SnSField,
    pub vr: VrIndicator,
    pub noise: ChannelTensor,
}

/// Blockage pattern of the scene; deterministic.
pub fn realize_vr(scene: &SceneConfig) -> VrIndicator {
    let n = scene.geom.n_antennas();
    let mut vr = VrIndicator::all_visible(n, scene.paths.len());
    for (l, ranges) in scene.blockage.iter().enumerate() {
        for r in ranges {
            for idx in r.first..=r.last {
                vr.data[l * n + idx - 1] = 0;
            }
        }
    }
    vr
}

/// Draw from `CN(mean, var)` with the variance split evenly over the real
/// and imaginary parts.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R, mean: C64, var: f64) -> C64 {
    let s = (var / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    mean + C64::new(s * re, s * im)
}

pub fn realize_sns<R: Rng + ?Sized>(
    scene: &SceneConfig,
    vr: &VrIndicator,
    rng: &mut R,
) -> SnSField {
    let d = scene.dims();
    let mut out = SnSField::filled(d.n, d.l, d.t, C64::new(0.0, 0.0));
    for t in 0..d.t {
        for l in 0..d.l {
            for n in 0..d.n {
                let v = if vr.get(n, l) == 1 {
                    complex_normal(rng, C64::new(1.0, 0.0), scene.visible_var)
                } else {
                    complex_normal(rng, C64::new(0.0, 0.0), scene.blocked_var)
                };
                let i = out.index(n, l, t);
                out.data[i] = v;
            }
        }
    }
    out
}

/// Draws amplitudes and noise and forms `y_{k,t} = Σ_l g (α_t ⊙ h_k) + n_{k,t}`.
pub fn synthesize<R: Rng + ?Sized>(scene: &SceneConfig, rng: &mut R) -> Result<ObservationSet> {
    scene.validate()?;
    let vr = realize_vr(scene);
    let sns = realize_sns(scene, &vr, rng);
    let clean = model_signal(&scene.gains(), &scene.steering(), &sns);
    let mut noise = ChannelTensor::zeros(clean.n, clean.k, clean.t);
    for v in noise.data.iter_mut() {
        *v = complex_normal(rng, C64::new(0.0, 0.0), scene.noise_var);
    }
    let mut y = clean;
    for (a, b) in y.data.iter_mut().zip(&noise.data) {
        *a += b;
    }
    Ok(ObservationSet {
        scene: scene.clone(),
        y,
        sns,
        vr,
        noise,
    })
}

/// Mean per-sample power of the noiseless signal with every amplitude at its
/// conditional mean (1 when visible, 0 when blocked).
pub fn mean_signal_power(scene: &SceneConfig) -> f64 {
    let d = scene.dims();
    let vr = realize_vr(scene);
    let mean_alpha =
        SnSField::from_real(d.n, d.l, d.t, &vr.expanded(d.t)).expect("sized from scene");
    let clean = model_signal(&scene.gains(), &scene.steering(), &mean_alpha);
    clean.norm_sqr() / d.nkt() as f64
}

/// Returns a copy of `scene` whose noise variance realises `snr_db`.
pub fn set_snr(scene: &SceneConfig, snr_db: f64) -> Result<SceneConfig> {
    if !snr_db.is_finite() {
        return Err(invalid(format!("SNR must be finite, got {snr_db}")));
    }
    let power = mean_signal_power(scene);
    if power <= 0.0 {
        return Err(Error::ZeroSignalPower);
    }
    let mut out = scene.clone();
    out.noise_var = power / 10f64.powf(snr_db / 10.0);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::steering_vector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn reference_blockage_pattern() {
        let scene = reference_scene();
        let vr = realize_vr(&scene);
        let blocked: Vec<usize> = (0..100)
            .filter(|&n| vr.get(n, 0) == 0)
            .map(|n| n + 1)
            .collect();
        assert_eq!(blocked, (75..=80).collect::<Vec<_>>());
        let nlos1 = vr.path(1);
        assert_eq!(nlos1.iter().filter(|&&v| v == 1).count(), 96);
        assert!((11..=14).all(|n| nlos1[n - 1] == 0));
        assert!((34..=38).all(|n| vr.get(n - 1, 2) == 0));
        assert_eq!(realize_vr(&scene), vr);
    }

    #[test]
    fn empty_blockage_is_all_visible() {
        let mut scene = reference_scene();
        scene.blockage = vec![vec![]; 3];
        assert!(realize_vr(&scene).data.iter().all(|&v| v == 1));
    }

    #[test]
    fn expanded_indicator_replicates() {
        let vr = realize_vr(&reference_scene());
        let e = vr.expanded(4);
        assert_eq!(e.len(), 1200);
        for t in 1..4 {
            assert_eq!(&e[..300], &e[t * 300..(t + 1) * 300]);
        }
        assert_eq!(VrIndicator::from_expanded(100, 3, &e), vr);
    }

    #[test]
    fn amplitude_moments() {
        let mut scene = reference_scene();
        scene.geom = ArrayGeometry::new(2, 0.005).unwrap();
        scene.paths.truncate(1);
        scene.blockage = vec![vec![BlockedRange::new(1, 1)]];
        scene.ofdm.n_snapshots = 50_000;
        let vr = realize_vr(&scene);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sns = realize_sns(&scene, &vr, &mut rng);
        let draws = 50_000.0;
        let blocked: Vec<C64> = (0..50_000).map(|t| sns.get(0, 0, t)).collect();
        let visible: Vec<C64> = (0..50_000).map(|t| sns.get(1, 0, t)).collect();
        // E|α|² = σ_b² behind the blockage; var(|α|²) = σ_b⁴ for CN(0, σ_b²)
        let p: f64 = blocked.iter().map(|a| a.norm_sqr()).sum::<f64>() / draws;
        let se = scene.blocked_var / f64::sqrt(draws);
        assert!((p - scene.blocked_var).abs() < 3.0 * se, "{p}");
        let m: C64 = visible.iter().sum::<C64>() / draws;
        let se = (scene.visible_var / 2.0 / draws).sqrt();
        assert!(
            (m.re - 1.0).abs() < 3.0 * se && m.im.abs() < 3.0 * se,
            "{m}"
        );
    }

    #[test]
    fn tiny_visible_variance_gives_deterministic_model() {
        let mut scene = reference_scene();
        scene.blockage = vec![vec![]; 3];
        scene.visible_var = 1e-30;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sns = realize_sns(&scene, &realize_vr(&scene), &mut rng);
        assert!(sns.data.iter().all(|a| (a - 1.0).norm() < 1e-13));
    }

    #[test]
    fn single_path_noiseless_observation() {
        let mut scene = reference_scene();
        scene.paths.truncate(1);
        scene.blockage = vec![vec![]];
        scene.visible_var = 1e-40;
        scene.blocked_var = 1e-40;
        scene.noise_var = 1e-40;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let obs = synthesize(&scene, &mut rng).unwrap();
        for k in 1..=4 {
            let h = steering_vector(&scene.geom, &scene.ofdm, &scene.paths[0], k).unwrap();
            for t in 0..4 {
                for n in 0..100 {
                    assert!((obs.y.get(n, k - 1, t) - scene.paths[0].gain * h[n]).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn noise_power_matches_variance() {
        let mut scene = reference_scene();
        for p in scene.paths.iter_mut() {
            p.gain = C64::new(0.0, 0.0);
        }
        scene.noise_var = 0.37;
        scene.ofdm.n_snapshots = 100;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let obs = synthesize(&scene, &mut rng).unwrap();
        let samples = obs.y.data.len() as f64;
        let p = obs.y.norm_sqr() / samples;
        assert!((p - 0.37).abs() < 3.0 * 0.37 / samples.sqrt());
    }

    #[test]
    fn synthesis_is_reproducible_and_exact() {
        let scene = reference_scene();
        let a = synthesize(&scene, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = synthesize(&scene, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        let clean = model_signal(&scene.gains(), &scene.steering(), &a.sns);
        for i in 0..clean.data.len() {
            assert!((a.y.data[i] - a.noise.data[i] - clean.data[i]).norm() < 1e-14);
        }
    }

    #[test]
    fn snr_scaling() {
        let scene = reference_scene();
        let s0 = set_snr(&scene, 0.0).unwrap();
        let s10 = set_snr(&scene, 10.0).unwrap();
        assert!((s0.noise_var - mean_signal_power(&scene)).abs() < 1e-15);
        assert!((s0.noise_var / s10.noise_var - 10.0).abs() < 1e-12);

        // brute-force power sum over every (n, k, t) sample
        let vr = realize_vr(&scene);
        let mut total = 0.0;
        for k in 1..=4 {
            let hs: Vec<Vec<C64>> = scene
                .paths
                .iter()
                .map(|p| steering_vector(&scene.geom, &scene.ofdm, p, k).unwrap())
                .collect();
            for n in 0..100 {
                let mut v = C64::new(0.0, 0.0);
                for l in 0..3 {
                    v += scene.paths[l].gain * vr.get(n, l) as f64 * hs[l][n];
                }
                total += 4.0 * v.norm_sqr();
            }
        }
        let expect = total / 1600.0 / 10.0;
        assert!((s10.noise_var - expect).abs() < 1e-12 * expect);
    }

    #[test]
    fn zero_power_scene_is_rejected() {
        let mut scene = reference_scene();
        for p in scene.paths.iter_mut() {
            p.gain = C64::new(0.0, 0.0);
        }
        assert!(matches!(set_snr(&scene, 10.0), Err(Error::ZeroSignalPower)));
        assert!(set_snr(&reference_scene(), f64::NAN).is_err());
    }

    #[test]
    fn validation_catches_bad_scenes() {
        let mut s = reference_scene();
        s.blockage[0] = vec![BlockedRange::new(99, 101)];
        assert!(s.validate().is_err());
        let mut s = reference_scene();
        s.visible_var = 0.1;
        assert!(s.validate().is_err());
        let mut s = reference_scene();
        s.paths[0].ue_distance = 1.0;
        assert!(s.validate().is_err());
    }
}
