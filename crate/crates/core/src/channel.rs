//! Pilot assignment, channel synthesis and MMSE channel estimation.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{CorrelationMatrix, CorrelationSet, NetworkConfig};
use crate::linalg::{Cholesky, ComplexMatrix, ComplexVector, C64};
use crate::rng::{fill_complex_normal, stream_rng, Stream};

/// Pilot index per UE (0-based) and, per pilot, the UEs that share it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PilotAssignment {
    tau_p: usize,
    pilots: Vec<usize>,
    sharers: Vec<Vec<usize>>,
}

impl PilotAssignment {
    pub fn new(tau_p: usize, pilots: Vec<usize>) -> Result<Self> {
        if tau_p == 0 {
            return Err(Error::InvalidConfig("pilot length must be at least 1".into()));
        }
        if let Some(&bad) = pilots.iter().find(|&&t| t >= tau_p) {
            return Err(Error::InvalidConfig(format!(
                "pilot index {bad} out of range for tau_p = {tau_p}"
            )));
        }
        let mut sharers = vec![Vec::new(); tau_p];
        for (k, &t) in pilots.iter().enumerate() {
            sharers[t].push(k);
        }
        Ok(Self { tau_p, pilots, sharers })
    }

    pub fn tau_p(&self) -> usize {
        self.tau_p
    }

    pub fn num_ues(&self) -> usize {
        self.pilots.len()
    }

    pub fn pilot_of(&self, k: usize) -> usize {
        self.pilots[k]
    }

    pub fn pilots(&self) -> &[usize] {
        &self.pilots
    }

    /// UEs transmitting pilot `t`.
    pub fn sharers(&self, t: usize) -> &[usize] {
        &self.sharers[t]
    }

    /// The set `P_k` of UEs sharing UE `k`'s pilot (including `k`).
    pub fn co_pilot_ues(&self, k: usize) -> &[usize] {
        self.sharers(self.pilots[k])
    }
}

/// Orthogonal pilots for `f = 1`; otherwise uniform random pilots, redrawn
/// until every pilot is in use.
pub fn assign_pilots(cfg: &NetworkConfig, rng: &mut impl Rng) -> Result<PilotAssignment> {
    if cfg.num_ues == 0 || cfg.pilot_reuse == 0 {
        return Err(Error::InvalidConfig("K and f must be at least 1".into()));
    }
    let tau_p = cfg.tau_p();
    if cfg.pilot_reuse == 1 {
        return PilotAssignment::new(tau_p, (0..cfg.num_ues).collect());
    }
    let must_cover = cfg.num_ues >= tau_p;
    loop {
        let pilots: Vec<usize> = (0..cfg.num_ues).map(|_| rng.random_range(0..tau_p)).collect();
        let assignment = PilotAssignment::new(tau_p, pilots)?;
        if !must_cover || assignment.sharers.iter().all(|s| !s.is_empty()) {
            return Ok(assignment);
        }
    }
}

/// Cholesky factor of a PSD matrix, adding a small diagonal load when the
/// matrix is numerically singular.
pub fn psd_factor(m: &ComplexMatrix) -> Result<Cholesky> {
    if let Ok(f) = Cholesky::factor(m) {
        return Ok(f);
    }
    let scale = m.trace().re.abs() / m.rows() as f64;
    let mut load = 1e-12 * scale.max(f64::MIN_POSITIVE);
    for _ in 0..8 {
        let mut loaded = m.clone();
        loaded.add_diagonal(load);
        if let Ok(f) = Cholesky::factor(&loaded) {
            return Ok(f);
        }
        load *= 100.0;
    }
    Cholesky::factor(m)
}

/// Length-N vectors indexed `(realization r, UE k, AP l)`: true channels,
/// their estimates, or combining vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct RealizationArray {
    num_realizations: usize,
    num_ues: usize,
    num_aps: usize,
    antennas: usize,
    data: Vec<C64>,
}

/// Small-scale fading realizations `h_kl^(r) ~ CN(0, R_kl)`.
pub type ChannelRealizations = RealizationArray;

impl RealizationArray {
    /// Each `(r, k, l)` vector uses its own seeded stream, so the result does
    /// not depend on how realizations are scheduled across threads.
    pub fn generate(correlations: &CorrelationSet, num_realizations: usize, seed: u64) -> Result<Self> {
        let (k_count, l_count, n) = (correlations.num_ues(), correlations.num_aps(), correlations.antennas());
        let factors = (0..k_count)
            .flat_map(|k| (0..l_count).map(move |l| (k, l)))
            .map(|(k, l)| psd_factor(correlations.get(k, l).matrix()))
            .collect::<Result<Vec<_>>>()?;
        let block = k_count * l_count * n;
        let mut data = vec![C64::new(0.0, 0.0); num_realizations * block];
        data.par_chunks_mut(block.max(1)).enumerate().for_each(|(r, chunk)| {
            let mut white = vec![C64::new(0.0, 0.0); n];
            for k in 0..k_count {
                for l in 0..l_count {
                    let mut rng = stream_rng(seed, Stream::Channel, &[r as u64, k as u64, l as u64]);
                    fill_complex_normal(&mut rng, &mut white);
                    let off = (k * l_count + l) * n;
                    factors[k * l_count + l].lower_mul(&white, &mut chunk[off..off + n]);
                }
            }
        });
        Ok(Self {
            num_realizations,
            num_ues: k_count,
            num_aps: l_count,
            antennas: n,
            data,
        })
    }

    pub fn from_raw(
        num_realizations: usize,
        num_ues: usize,
        num_aps: usize,
        antennas: usize,
        data: Vec<C64>,
    ) -> Result<Self> {
        let expected = num_realizations * num_ues * num_aps * antennas;
        if data.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                actual: data.len(),
            });
        }
        Ok(Self {
            num_realizations,
            num_ues,
            num_aps,
            antennas,
            data,
        })
    }

    pub fn num_realizations(&self) -> usize {
        self.num_realizations
    }

    pub fn num_ues(&self) -> usize {
        self.num_ues
    }

    pub fn num_aps(&self) -> usize {
        self.num_aps
    }

    pub fn antennas(&self) -> usize {
        self.antennas
    }

    fn offset(&self, r: usize, k: usize, l: usize) -> usize {
        ((r * self.num_ues + k) * self.num_aps + l) * self.antennas
    }

    pub fn get(&self, r: usize, k: usize, l: usize) -> &[C64] {
        let o = self.offset(r, k, l);
        &self.data[o..o + self.antennas]
    }

    /// All `(k, l)` vectors of realization `r`, UE-major.
    pub fn realization(&self, r: usize) -> &[C64] {
        let block = self.num_ues * self.num_aps * self.antennas;
        &self.data[r * block..(r + 1) * block]
    }

    /// Same shape, every entry zero.
    pub fn zeros_like(&self) -> Self {
        Self {
            data: vec![C64::new(0.0, 0.0); self.data.len()],
            ..*self
        }
    }

    pub(crate) fn data_mut(&mut self) -> &mut [C64] {
        &mut self.data
    }
}

/// Receiver noise `n_{t l}^(r) ~ CN(0, σ² I_N)` of the pilot phase.
pub fn pilot_noise(seed: u64, r: usize, t: usize, l: usize, antennas: usize, noise_power: f64) -> Vec<C64> {
    let mut rng = stream_rng(seed, Stream::PilotNoise, &[r as u64, t as u64, l as u64]);
    let mut out = vec![C64::new(0.0, 0.0); antennas];
    fill_complex_normal(&mut rng, &mut out);
    let s = noise_power.sqrt();
    out.iter_mut().for_each(|z| *z *= s);
    out
}

/// Despread pilot signal at AP `l` for pilot `t`:
/// `z = Σ_{i∈P_t} √(p_i τ_p) h_il + n`.
pub fn pilot_observation(
    channels: &ChannelRealizations,
    r: usize,
    t: usize,
    l: usize,
    assignment: &PilotAssignment,
    powers_pilot: &[f64],
    noise: &[C64],
) -> ComplexVector {
    let tau_p = assignment.tau_p() as f64;
    let mut z = noise.to_vec();
    for &i in assignment.sharers(t) {
        let amp = (powers_pilot[i] * tau_p).sqrt();
        for (zn, hn) in z.iter_mut().zip(channels.get(r, i, l)) {
            *zn += amp * hn;
        }
    }
    ComplexVector::from_vec(z)
}

/// `Ψ_{t l} = Σ_{i∈P_t} τ_p p_i R_il + σ² I_N`.
pub fn psi_matrix(
    t: usize,
    l: usize,
    assignment: &PilotAssignment,
    powers_pilot: &[f64],
    correlations: &CorrelationSet,
    noise_power: f64,
) -> ComplexMatrix {
    let tau_p = assignment.tau_p() as f64;
    let mut psi = ComplexMatrix::scaled_identity(correlations.antennas(), noise_power);
    for &i in assignment.sharers(t) {
        psi.add_scaled(C64::new(tau_p * powers_pilot[i], 0.0), correlations.get(i, l).matrix());
    }
    psi
}

/// `ĥ = √(p τ_p) R Ψ⁻¹ z`, with `psi` the factored `Ψ`.
pub fn mmse_estimate(z: &[C64], sqrt_p_tau: f64, r: &CorrelationMatrix, psi: &Cholesky) -> Result<ComplexVector> {
    let w = psi.solve(z)?;
    let mut h = r.matrix().matvec(w.as_slice())?;
    h.as_mut_slice().iter_mut().for_each(|x| *x *= sqrt_p_tau);
    Ok(h)
}

/// `R Ψ⁻¹ R`
fn r_psi_inv_r(r: &ComplexMatrix, psi: &Cholesky) -> Result<ComplexMatrix> {
    let n = r.rows();
    // Ψ⁻¹ R column by column; R is Hermitian so its columns are conj rows.
    let mut psi_inv_r = ComplexMatrix::zeros(n, n);
    for c in 0..n {
        let col: Vec<C64> = (0..n).map(|i| r[(i, c)]).collect();
        let x = psi.solve(&col)?;
        for i in 0..n {
            psi_inv_r[(i, c)] = x[i];
        }
    }
    r.matmul(&psi_inv_r)
}

fn hermitian_part(m: &ComplexMatrix) -> ComplexMatrix {
    let mut h = m.clone();
    h.add_scaled(C64::new(1.0, 0.0), &m.adjoint());
    h.scale_mut(C64::new(0.5, 0.0));
    h
}

/// Covariance of the estimate, `p τ_p R Ψ⁻¹ R`.
pub fn estimate_covariance(p_tau: f64, r: &CorrelationMatrix, psi: &Cholesky) -> Result<ComplexMatrix> {
    Ok(hermitian_part(
        &r_psi_inv_r(r.matrix(), psi)?.scaled(C64::new(p_tau, 0.0)),
    ))
}

/// Estimation error covariance `C = R − p τ_p R Ψ⁻¹ R`.
pub fn error_covariance(p_tau: f64, r: &CorrelationMatrix, psi: &Cholesky) -> Result<ComplexMatrix> {
    Ok(r.matrix().sub(&estimate_covariance(p_tau, r, psi)?))
}

/// Estimates and error statistics of every channel in a drop.
#[derive(Clone, Debug)]
pub struct ChannelEstimateSet {
    /// `ĥ` with the same `(r, k, l)` indexing as the true channels.
    pub h_hat: ChannelRealizations,
    /// `Ψ_{t l}`, indexed `t * L + l`.
    pub psi: Vec<ComplexMatrix>,
    /// `C_kl`, indexed `k * L + l`.
    pub error_cov: Vec<ComplexMatrix>,
    pub num_aps: usize,
}

impl ChannelEstimateSet {
    pub fn error_cov(&self, k: usize, l: usize) -> &ComplexMatrix {
        &self.error_cov[k * self.num_aps + l]
    }

    pub fn psi(&self, t: usize, l: usize) -> &ComplexMatrix {
        &self.psi[t * self.num_aps + l]
    }
}

/// Runs the pilot phase for every realization and returns the MMSE
/// estimates. `powers_pilot` are the pilot-phase transmit powers in Watts.
pub fn estimate_channels(
    channels: &ChannelRealizations,
    correlations: &CorrelationSet,
    assignment: &PilotAssignment,
    powers_pilot: &[f64],
    noise_power: f64,
    noise_seed: u64,
) -> Result<ChannelEstimateSet> {
    let (k_count, l_count, n) = (channels.num_ues(), channels.num_aps(), channels.antennas());
    if powers_pilot.len() != k_count {
        return Err(Error::DimensionMismatch {
            expected: k_count,
            actual: powers_pilot.len(),
        });
    }
    if assignment.num_ues() != k_count {
        return Err(Error::DimensionMismatch {
            expected: k_count,
            actual: assignment.num_ues(),
        });
    }
    let tau_p = assignment.tau_p();
    let mut psi = Vec::with_capacity(tau_p * l_count);
    let mut psi_factors = Vec::with_capacity(tau_p * l_count);
    for t in 0..tau_p {
        for l in 0..l_count {
            let m = psi_matrix(t, l, assignment, powers_pilot, correlations, noise_power);
            psi_factors.push(Cholesky::factor(&m)?);
            psi.push(m);
        }
    }
    let mut error_cov = Vec::with_capacity(k_count * l_count);
    for k in 0..k_count {
        let p_tau = powers_pilot[k] * tau_p as f64;
        for l in 0..l_count {
            let f = &psi_factors[assignment.pilot_of(k) * l_count + l];
            error_cov.push(error_covariance(p_tau, correlations.get(k, l), f)?);
        }
    }

    let block = k_count * l_count * n;
    let r_count = channels.num_realizations();
    let mut data = vec![C64::new(0.0, 0.0); r_count * block];
    data.par_chunks_mut(block.max(1))
        .enumerate()
        .try_for_each(|(r, chunk)| -> Result<()> {
            for t in 0..tau_p {
                if assignment.sharers(t).is_empty() {
                    continue;
                }
                for l in 0..l_count {
                    let noise = pilot_noise(noise_seed, r, t, l, n, noise_power);
                    let z = pilot_observation(channels, r, t, l, assignment, powers_pilot, &noise);
                    let f = &psi_factors[t * l_count + l];
                    let w = f.solve(z.as_slice())?;
                    for &k in assignment.sharers(t) {
                        let scale = (powers_pilot[k] * tau_p as f64).sqrt();
                        let off = (k * l_count + l) * n;
                        let dst = &mut chunk[off..off + n];
                        let rm = correlations.get(k, l).matrix();
                        for (i, d) in dst.iter_mut().enumerate() {
                            *d = scale * rm.row(i).iter().zip(w.iter()).map(|(a, b)| a * b).sum::<C64>();
                        }
                    }
                }
            }
            Ok(())
        })?;
    let h_hat = ChannelRealizations::from_raw(r_count, k_count, l_count, n, data)?;
    Ok(ChannelEstimateSet {
        h_hat,
        psi,
        error_cov,
        num_aps: l_count,
    })
}
