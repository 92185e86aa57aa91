//! Network layout, large-scale fading and spatial correlation.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::linalg::{ComplexMatrix, C64};
use crate::rng::{stream_rng, Stream};

/// Minimum AP–UE distance fed to the pathloss formula.
pub const DISTANCE_FLOOR_M: f64 = 1.0;

/// Shadow fading standard deviation.
pub const SHADOWING_STD_DB: f64 = 4.0;

/// Pathloss at the 1 m reference distance, and the decade slope.
pub const PATHLOSS_REF_DB: f64 = -30.5;
pub const PATHLOSS_SLOPE_DB: f64 = 36.7;

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkConfig {
    pub num_aps: usize,
    pub num_ues: usize,
    pub antennas_per_ap: usize,
    pub area_side_m: f64,
    /// Number of UEs sharing each pilot; `tau_p = ceil(K / f)`.
    pub pilot_reuse: usize,
    pub tau_c: usize,
    pub bandwidth_hz: f64,
    pub noise_power_dbm: f64,
    pub pmax_range_mw: (f64, f64),
    pub asd_deg: f64,
    /// Antenna spacing in wavelengths.
    pub antenna_spacing: f64,
    pub mc_realizations: usize,
    pub seed: u64,
}

impl Default for NetworkConfig {
    /// Small setup that runs in seconds: 16 APs, 8 UEs, 2 antennas, f = 2.
    fn default() -> Self {
        Self {
            num_aps: 16,
            num_ues: 8,
            antennas_per_ap: 2,
            area_side_m: 1000.0,
            pilot_reuse: 2,
            tau_c: 200,
            bandwidth_hz: 20e6,
            noise_power_dbm: -96.0,
            pmax_range_mw: (90.0, 110.0),
            asd_deg: 15.0,
            antenna_spacing: 0.5,
            mc_realizations: 1000,
            seed: 1,
        }
    }
}

impl NetworkConfig {
    pub fn tau_p(&self) -> usize {
        self.num_ues.div_ceil(self.pilot_reuse.max(1))
    }

    /// Receiver noise power σ² in Watts.
    pub fn noise_power_w(&self) -> f64 {
        dbm_to_watts(self.noise_power_dbm)
    }

    pub fn asd_rad(&self) -> f64 {
        self.asd_deg.to_radians()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.num_aps == 0 || self.num_ues == 0 || self.antennas_per_ap == 0 {
            return fail("L, K and N must all be at least 1".into());
        }
        if self.pilot_reuse == 0 {
            return fail("pilot reuse factor f must be at least 1".into());
        }
        let tau_p = self.tau_p();
        if self.tau_c <= tau_p {
            return fail(format!(
                "tau_c = {} leaves no data samples after tau_p = {tau_p}",
                self.tau_c
            ));
        }
        if self.num_ues > self.tau_c - tau_p {
            return fail(format!(
                "K = {} exceeds tau_c - tau_p = {}",
                self.num_ues,
                self.tau_c - tau_p
            ));
        }
        if !(self.area_side_m > 0.0 && self.area_side_m.is_finite()) {
            return fail(format!("area side must be positive, got {}", self.area_side_m));
        }
        let (lo, hi) = self.pmax_range_mw;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return fail(format!("pmax range must satisfy 0 < min <= max, got ({lo}, {hi})"));
        }
        if !(self.asd_deg > 0.0 && self.asd_deg.is_finite()) {
            return fail(format!(
                "angular standard deviation must be positive, got {}",
                self.asd_deg
            ));
        }
        if !(self.antenna_spacing > 0.0) {
            return fail(format!(
                "antenna spacing must be positive, got {}",
                self.antenna_spacing
            ));
        }
        if !self.noise_power_dbm.is_finite() {
            return fail("noise power must be finite".into());
        }
        if self.mc_realizations == 0 {
            return fail("mc_realizations must be at least 1".into());
        }
        Ok(())
    }
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub type Point = [f64; 2];

/// One UE drop: AP/UE positions and the per-UE power caps.
///
/// Matrices over (AP, UE) are stored AP-major: entry `(l, k)` lives at
/// `l * K + k`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub ap_positions: Vec<Point>,
    pub ue_positions: Vec<Point>,
    pub distances_m: Vec<f64>,
    pub nominal_angles_rad: Vec<f64>,
    pub pmax_w: Vec<f64>,
}

impl Layout {
    pub fn num_aps(&self) -> usize {
        self.ap_positions.len()
    }

    pub fn num_ues(&self) -> usize {
        self.ue_positions.len()
    }

    pub fn distance(&self, l: usize, k: usize) -> f64 {
        self.distances_m[l * self.num_ues() + k]
    }

    pub fn angle(&self, l: usize, k: usize) -> f64 {
        self.nominal_angles_rad[l * self.num_ues() + k]
    }
}

/// Index of the 2×2 virtual cell containing `p` (row-major, origin at the
/// lower-left corner).
pub fn virtual_cell_of(p: Point, side: f64) -> usize {
    let half = side / 2.0;
    let cx = usize::from(p[0] >= half);
    let cy = usize::from(p[1] >= half);
    cy * 2 + cx
}

/// Drops APs uniformly over the square and UEs evenly over four virtual
/// cells. Fully determined by `cfg.seed`.
pub fn generate_layout(cfg: &NetworkConfig) -> Result<Layout> {
    cfg.validate()?;
    let mut rng = stream_rng(cfg.seed, Stream::Layout, &[]);
    let side = cfg.area_side_m;
    let half = side / 2.0;

    let ap_positions: Vec<Point> = (0..cfg.num_aps)
        .map(|_| [rng.random_range(0.0..side), rng.random_range(0.0..side)])
        .collect();

    let per_cell = cfg.num_ues / 4;
    let extra = cfg.num_ues % 4;
    let mut ue_positions = Vec::with_capacity(cfg.num_ues);
    for cell in 0..4 {
        let count = per_cell + usize::from(cell < extra);
        let (x0, y0) = ((cell % 2) as f64 * half, (cell / 2) as f64 * half);
        for _ in 0..count {
            ue_positions.push([x0 + rng.random_range(0.0..half), y0 + rng.random_range(0.0..half)]);
        }
    }

    let (lo, hi) = cfg.pmax_range_mw;
    let pmax_w = (0..cfg.num_ues)
        .map(|_| {
            let mw = if hi > lo { rng.random_range(lo..=hi) } else { lo };
            mw * 1e-3
        })
        .collect();

    let mut distances_m = Vec::with_capacity(cfg.num_aps * cfg.num_ues);
    let mut nominal_angles_rad = Vec::with_capacity(cfg.num_aps * cfg.num_ues);
    for ap in &ap_positions {
        for ue in &ue_positions {
            let (dx, dy) = (ue[0] - ap[0], ue[1] - ap[1]);
            distances_m.push(dx.hypot(dy).max(DISTANCE_FLOOR_M));
            nominal_angles_rad.push(dy.atan2(dx));
        }
    }

    Ok(Layout {
        ap_positions,
        ue_positions,
        distances_m,
        nominal_angles_rad,
        pmax_w,
    })
}

/// Linear channel gain at distance `d_m` with shadowing `shadow_db`.
pub fn large_scale_fading(d_m: f64, shadow_db: f64) -> Result<f64> {
    if !(d_m > 0.0) {
        return Err(Error::NonPositiveDistance(d_m));
    }
    Ok(db_to_linear(
        PATHLOSS_REF_DB - PATHLOSS_SLOPE_DB * d_m.log10() + shadow_db,
    ))
}

/// N×N spatial correlation of one AP–UE pair.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationMatrix(ComplexMatrix);

impl CorrelationMatrix {
    /// Wraps a matrix the caller guarantees to be Hermitian PSD.
    pub fn from_matrix(m: ComplexMatrix) -> Self {
        debug_assert!(m.is_square());
        Self(m)
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.0
    }

    /// Large-scale fading coefficient, `trace(R) / N`.
    pub fn beta(&self) -> f64 {
        self.0.trace().re / self.0.rows() as f64
    }
}

/// Gaussian local scattering model for a half-wavelength-style ULA:
/// `[R]_{m,n} = β e^{j2πδ(n−m)sin φ} e^{−(σ²/2)(2πδ(n−m)cos φ)²}`.
pub fn local_scattering_correlation(
    beta: f64,
    phi: f64,
    asd_rad: f64,
    n: usize,
    spacing: f64,
) -> Result<CorrelationMatrix> {
    if n == 0 {
        return Err(Error::InvalidParameter("antenna count must be at least 1".into()));
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidParameter(format!("beta must be positive, got {beta}")));
    }
    if !(asd_rad > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "angular spread must be positive, got {asd_rad}"
        )));
    }
    let (sin_phi, cos_phi) = phi.sin_cos();
    let column: Vec<C64> = (0..n)
        .map(|dist| {
            let w = 2.0 * PI * spacing * dist as f64;
            let spread = (-(asd_rad * asd_rad) / 2.0 * (w * cos_phi).powi(2)).exp();
            C64::from_polar(beta * spread, w * sin_phi)
        })
        .collect();
    let m = ComplexMatrix::from_fn(n, n, |r, c| if c >= r { column[c - r] } else { column[r - c].conj() });
    Ok(CorrelationMatrix(m))
}

/// All `R_kl` of one drop, indexed `(k, l)`.
#[derive(Clone, Debug)]
pub struct CorrelationSet {
    num_ues: usize,
    num_aps: usize,
    mats: Vec<CorrelationMatrix>,
}

impl CorrelationSet {
    pub fn new(num_ues: usize, num_aps: usize, mats: Vec<CorrelationMatrix>) -> Result<Self> {
        if mats.len() != num_ues * num_aps {
            return Err(Error::DimensionMismatch {
                expected: num_ues * num_aps,
                actual: mats.len(),
            });
        }
        Ok(Self { num_ues, num_aps, mats })
    }

    pub fn num_ues(&self) -> usize {
        self.num_ues
    }

    pub fn num_aps(&self) -> usize {
        self.num_aps
    }

    pub fn antennas(&self) -> usize {
        self.mats[0].matrix().rows()
    }

    pub fn get(&self, k: usize, l: usize) -> &CorrelationMatrix {
        &self.mats[k * self.num_aps + l]
    }

    pub fn beta(&self, k: usize, l: usize) -> f64 {
        self.get(k, l).beta()
    }
}

/// Draws i.i.d. shadowing for every (k, l) pair and builds the correlation
/// matrices of the drop.
pub fn build_correlations(cfg: &NetworkConfig, layout: &Layout) -> Result<CorrelationSet> {
    let mut rng = stream_rng(cfg.seed, Stream::Shadowing, &[]);
    let shadow = Normal::new(0.0, SHADOWING_STD_DB).expect("finite std");
    let (k_count, l_count) = (layout.num_ues(), layout.num_aps());
    let mut mats = Vec::with_capacity(k_count * l_count);
    for k in 0..k_count {
        for l in 0..l_count {
            let beta = large_scale_fading(layout.distance(l, k), shadow.sample(&mut rng))?;
            mats.push(local_scattering_correlation(
                beta,
                layout.angle(l, k),
                cfg.asd_rad(),
                cfg.antennas_per_ap,
                cfg.antenna_spacing,
            )?);
        }
    }
    CorrelationSet::new(k_count, l_count, mats)
}
