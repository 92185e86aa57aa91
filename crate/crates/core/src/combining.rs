//! Local combining at the APs and the CPU-side effective-channel statistics.
//!
//! Each AP combines its own antennas with `v_kl`; the CPU only sees the
//! statistics of the stacked effective channels
//! `g_ki = [v_k1ᴴ h_i1, …, v_kLᴴ h_iL]ᵀ`. Those statistics, estimated by
//! Monte Carlo over the cached channel realizations, are everything the
//! SINR expressions and the optimizer need.

use rayon::prelude::*;

use crate::channel::{ChannelEstimateSet, ChannelRealizations, RealizationArray};
use crate::error::{Error, Result};
use crate::linalg::{dot, Cholesky, ComplexMatrix, ComplexVector, C64};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CombinerKind {
    Lmmse,
    Mr,
}

impl CombinerKind {
    pub fn name(self) -> &'static str {
        match self {
            CombinerKind::Lmmse => "lmmse",
            CombinerKind::Mr => "mr",
        }
    }
}

impl std::str::FromStr for CombinerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "lmmse" | "l-mmse" => Ok(CombinerKind::Lmmse),
            "mr" => Ok(CombinerKind::Mr),
            other => Err(Error::InvalidConfig(format!("unknown combiner `{other}`"))),
        }
    }
}

/// Combining vectors `v_kl^(r)`, same indexing as the channels.
#[derive(Clone, Debug)]
pub struct CombinerSet {
    pub kind: CombinerKind,
    pub v: RealizationArray,
}

/// `Σ_i p_i C_il + σ² I`, the realization-independent part of the local
/// L-MMSE Gram matrix.
fn error_load(estimates: &ChannelEstimateSet, l: usize, powers: &[f64], noise_power: f64) -> ComplexMatrix {
    let n = estimates.h_hat.antennas();
    let mut m = ComplexMatrix::scaled_identity(n, noise_power);
    for (i, &p) in powers.iter().enumerate() {
        if p != 0.0 {
            m.add_scaled(C64::new(p, 0.0), estimates.error_cov(i, l));
        }
    }
    m
}

fn lmmse_gram(
    r: usize,
    l: usize,
    estimates: &ChannelEstimateSet,
    base: &ComplexMatrix,
    powers: &[f64],
) -> ComplexMatrix {
    let mut m = base.clone();
    for (i, &p) in powers.iter().enumerate() {
        if p != 0.0 {
            let h = estimates.h_hat.get(r, i, l);
            m.add_outer(C64::new(p, 0.0), h, h);
        }
    }
    m
}

/// `v_kl = p_k (Σ_i p_i (ĥ_il ĥ_ilᴴ + C_il) + σ² I)⁻¹ ĥ_kl`, at the data
/// powers `powers`.
pub fn lmmse_combiner(
    r: usize,
    k: usize,
    l: usize,
    estimates: &ChannelEstimateSet,
    powers: &[f64],
    noise_power: f64,
) -> Result<ComplexVector> {
    let base = error_load(estimates, l, powers, noise_power);
    let gram = lmmse_gram(r, l, estimates, &base, powers);
    let mut v = Cholesky::factor(&gram)?.solve(estimates.h_hat.get(r, k, l))?;
    v.as_mut_slice().iter_mut().for_each(|z| *z *= powers[k]);
    Ok(v)
}

/// `v_kl = ĥ_kl`
pub fn mr_combiner(r: usize, k: usize, l: usize, estimates: &ChannelEstimateSet) -> ComplexVector {
    ComplexVector::from_vec(estimates.h_hat.get(r, k, l).to_vec())
}

/// Combining vectors for every realization, UE and AP.
pub fn compute_combiners(
    estimates: &ChannelEstimateSet,
    powers: &[f64],
    noise_power: f64,
    kind: CombinerKind,
) -> Result<CombinerSet> {
    let h_hat = &estimates.h_hat;
    if powers.len() != h_hat.num_ues() {
        return Err(Error::DimensionMismatch {
            expected: h_hat.num_ues(),
            actual: powers.len(),
        });
    }
    if kind == CombinerKind::Mr {
        return Ok(CombinerSet { kind, v: h_hat.clone() });
    }
    let (k_count, l_count, n) = (h_hat.num_ues(), h_hat.num_aps(), h_hat.antennas());
    let bases: Vec<ComplexMatrix> = (0..l_count)
        .map(|l| error_load(estimates, l, powers, noise_power))
        .collect();
    let mut v = h_hat.zeros_like();
    let block = k_count * l_count * n;
    v.data_mut()
        .par_chunks_mut(block.max(1))
        .enumerate()
        .try_for_each(|(r, chunk)| -> Result<()> {
            for (l, base) in bases.iter().enumerate() {
                let factor = Cholesky::factor(&lmmse_gram(r, l, estimates, base, powers))?;
                for (k, &pk) in powers.iter().enumerate() {
                    if pk == 0.0 {
                        continue;
                    }
                    let x = factor.solve(h_hat.get(r, k, l))?;
                    let off = (k * l_count + l) * n;
                    for (dst, src) in chunk[off..off + n].iter_mut().zip(x.iter()) {
                        *dst = src * pk;
                    }
                }
            }
            Ok(())
        })?;
    Ok(CombinerSet { kind, v })
}

/// Monte Carlo statistics of the effective channels.
#[derive(Clone, Debug)]
pub struct EffectiveStats {
    num_ues: usize,
    num_aps: usize,
    /// `E{g_kk}` per UE.
    pub g_mean: Vec<ComplexVector>,
    /// `E{g_ki g_kiᴴ}`, indexed `k * K + i`.
    pub second_moment: Vec<ComplexMatrix>,
    /// Diagonal of `D_k`: `E{‖v_kl‖²}` per AP.
    pub d: Vec<Vec<f64>>,
    pub n_mc: usize,
    /// Receiver noise power σ² in Watts.
    pub noise_power: f64,
}

impl EffectiveStats {
    pub fn new(
        g_mean: Vec<ComplexVector>,
        second_moment: Vec<ComplexMatrix>,
        d: Vec<Vec<f64>>,
        n_mc: usize,
        noise_power: f64,
    ) -> Result<Self> {
        let k_count = g_mean.len();
        let l_count = g_mean.first().map_or(0, ComplexVector::len);
        if second_moment.len() != k_count * k_count {
            return Err(Error::DimensionMismatch {
                expected: k_count * k_count,
                actual: second_moment.len(),
            });
        }
        if d.len() != k_count {
            return Err(Error::DimensionMismatch {
                expected: k_count,
                actual: d.len(),
            });
        }
        Ok(Self {
            num_ues: k_count,
            num_aps: l_count,
            g_mean,
            second_moment,
            d,
            n_mc,
            noise_power,
        })
    }

    pub fn num_ues(&self) -> usize {
        self.num_ues
    }

    pub fn num_aps(&self) -> usize {
        self.num_aps
    }

    pub fn g(&self, k: usize, i: usize) -> &ComplexMatrix {
        &self.second_moment[k * self.num_ues + i]
    }

    pub fn d_matrix(&self, k: usize) -> ComplexMatrix {
        ComplexMatrix::diag(&self.d[k])
    }

    /// `Σ_i p_i E{g_ki g_kiᴴ} + σ² D_k`, the matrix inverted by the
    /// fixed-power weights.
    pub fn total_matrix(&self, k: usize, powers: &[f64]) -> ComplexMatrix {
        let mut m = ComplexMatrix::zeros(self.num_aps, self.num_aps);
        for (i, &p) in powers.iter().enumerate() {
            if p != 0.0 {
                m.add_scaled(C64::new(p, 0.0), self.g(k, i));
            }
        }
        for (l, &dl) in self.d[k].iter().enumerate() {
            m[(l, l)] += C64::new(self.noise_power * dl, 0.0);
        }
        m
    }

    /// `B_k = Σ_i p_i E{g_ki g_kiᴴ} − p_k E{g_kk}E{g_kk}ᴴ + σ² D_k`.
    pub fn interference_matrix(&self, k: usize, powers: &[f64]) -> ComplexMatrix {
        let mut m = self.total_matrix(k, powers);
        let g = self.g_mean[k].as_slice();
        m.add_outer(C64::new(-powers[k], 0.0), g, g);
        m
    }

    /// `E{g_kk g_kkᴴ} − E{g_kk}E{g_kk}ᴴ`
    pub fn self_covariance(&self, k: usize) -> ComplexMatrix {
        let mut m = self.g(k, k).clone();
        let g = self.g_mean[k].as_slice();
        m.add_outer(C64::new(-1.0, 0.0), g, g);
        m
    }
}

/// Sample means over all realizations of `g_kk`, `g_ki g_kiᴴ` and
/// `‖v_kl‖²`. `g_ki` pairs the estimate-based combiner of UE `k` with the
/// true channel of UE `i`.
pub fn estimate_effective_stats(
    channels: &ChannelRealizations,
    combiners: &CombinerSet,
    noise_power: f64,
) -> Result<EffectiveStats> {
    let n_mc = channels.num_realizations();
    if n_mc == 0 {
        return Err(Error::InsufficientRealizations { required: 1, actual: 0 });
    }
    let v = &combiners.v;
    if v.num_realizations() != n_mc || v.num_ues() != channels.num_ues() || v.num_aps() != channels.num_aps() {
        return Err(Error::DimensionMismatch {
            expected: n_mc,
            actual: v.num_realizations(),
        });
    }
    let (k_count, l_count) = (channels.num_ues(), channels.num_aps());
    let inv = 1.0 / n_mc as f64;

    // One task per UE k; each accumulates over realizations in order, so the
    // sums are identical for any thread count.
    let rows: Vec<(ComplexVector, Vec<ComplexMatrix>, Vec<f64>)> = (0..k_count)
        .into_par_iter()
        .map(|k| {
            let mut g_sum = vec![C64::new(0.0, 0.0); l_count];
            let mut m_sum = vec![ComplexMatrix::zeros(l_count, l_count); k_count];
            let mut d_sum = vec![0.0; l_count];
            let mut g = vec![C64::new(0.0, 0.0); l_count];
            for r in 0..n_mc {
                for (l, d) in d_sum.iter_mut().enumerate() {
                    *d += v.get(r, k, l).iter().map(|z| z.norm_sqr()).sum::<f64>();
                }
                for (i, m) in m_sum.iter_mut().enumerate() {
                    for (l, gl) in g.iter_mut().enumerate() {
                        *gl = dot(v.get(r, k, l), channels.get(r, i, l));
                    }
                    if i == k {
                        g_sum.iter_mut().zip(&g).for_each(|(s, x)| *s += x);
                    }
                    m.add_outer(C64::new(1.0, 0.0), &g, &g);
                }
            }
            let g_mean = ComplexVector::from_vec(g_sum.into_iter().map(|z| z * inv).collect());
            m_sum.iter_mut().for_each(|m| m.scale_mut(C64::new(inv, 0.0)));
            d_sum.iter_mut().for_each(|d| *d *= inv);
            (g_mean, m_sum, d_sum)
        })
        .collect();

    let mut g_mean = Vec::with_capacity(k_count);
    let mut second_moment = Vec::with_capacity(k_count * k_count);
    let mut d = Vec::with_capacity(k_count);
    for (g, m, dk) in rows {
        g_mean.push(g);
        second_moment.extend(m);
        d.push(dk);
    }
    EffectiveStats::new(g_mean, second_moment, d, n_mc, noise_power)
}

/// Combiners and statistics at the given data powers.
pub fn stats_at_powers(
    channels: &ChannelRealizations,
    estimates: &ChannelEstimateSet,
    powers: &[f64],
    noise_power: f64,
    kind: CombinerKind,
) -> Result<EffectiveStats> {
    let combiners = compute_combiners(estimates, powers, noise_power, kind)?;
    estimate_effective_stats(channels, &combiners, noise_power)
}

const UNIT_NORM_TOL: f64 = 1e-9;

/// Relative floor applied to a non-positive SINR denominator.
const DENOMINATOR_CLAMP: f64 = 1e-6;

/// Effective SINR of UE `k` for unit-norm CPU weights `a`:
/// `p_k |aᴴE{g_kk}|² / aᴴ(Σ_i p_i E{g_ki g_kiᴴ} − p_k E{g_kk}E{g_kk}ᴴ + σ² D_k)a`.
pub fn effective_sinr(k: usize, stats: &EffectiveStats, powers: &[f64], a: &ComplexVector) -> Result<f64> {
    if a.len() != stats.num_aps() {
        return Err(Error::DimensionMismatch {
            expected: stats.num_aps(),
            actual: a.len(),
        });
    }
    if (a.norm() - 1.0).abs() > UNIT_NORM_TOL {
        return Err(Error::InvalidParameter(format!(
            "weights must have unit norm, got {}",
            a.norm()
        )));
    }
    let signal = powers[k] * a.dot(&stats.g_mean[k]).norm_sqr();
    let mut den = -signal;
    for (i, &p) in powers.iter().enumerate() {
        if p != 0.0 {
            den += p * crate::linalg::quadratic_form(a, stats.g(k, i))?.re;
        }
    }
    den += stats.noise_power
        * stats.d[k]
            .iter()
            .zip(a.iter())
            .map(|(d, z)| d * z.norm_sqr())
            .sum::<f64>();
    if den <= 0.0 {
        let floor = stats.noise_power * stats.d[k].iter().copied().fold(f64::INFINITY, f64::min) * DENOMINATOR_CLAMP;
        log::warn!("UE {k}: SINR denominator {den:e} clamped to {floor:e}");
        den = floor;
    }
    if !(den > 1e-300) {
        return Err(Error::DegenerateDenominator(den).at_ue(k));
    }
    Ok(signal / den)
}

/// CPU weights maximizing the SINR of UE `k` at fixed powers, and the
/// resulting SINR `p_k E{g_kk}ᴴ B_k⁻¹ E{g_kk}`.
pub fn optimal_weights_fixed_power(k: usize, stats: &EffectiveStats, powers: &[f64]) -> Result<(ComplexVector, f64)> {
    let g = &stats.g_mean[k];
    let a = Cholesky::factor(&stats.total_matrix(k, powers))
        .and_then(|f| f.solve(g.as_slice()))
        .and_then(|x| x.normalized())
        .map_err(|e| e.at_ue(k))?;
    let b = Cholesky::factor(&stats.interference_matrix(k, powers)).map_err(|e| e.at_ue(k))?;
    let sinr = powers[k] * b.inverse_quadratic_form(g.as_slice())?;
    Ok((a, sinr))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SinrReport {
    pub sinr: Vec<f64>,
    pub se: Vec<f64>,
    pub min_se: f64,
}

/// `SE_k = (1 − τ_p/τ_c) log2(1 + SINR_k)`
pub fn se_from_sinr(sinr: &[f64], tau_p: usize, tau_c: usize) -> Result<SinrReport> {
    if tau_p == 0 || tau_p >= tau_c {
        return Err(Error::InvalidFraction { tau_p, tau_c });
    }
    if let Some(bad) = sinr.iter().find(|s| !(**s >= 0.0)) {
        return Err(Error::InvalidParameter(format!("SINR must be non-negative, got {bad}")));
    }
    let prelog = 1.0 - tau_p as f64 / tau_c as f64;
    let se: Vec<f64> = sinr.iter().map(|s| prelog * (1.0 + s).log2()).collect();
    let min_se = se.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(SinrReport {
        sinr: sinr.to_vec(),
        se,
        min_se,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::ComplexVector;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn estimates_from(
        h_hat: Vec<Vec<C64>>,
        k: usize,
        l: usize,
        n: usize,
        c_mats: Vec<ComplexMatrix>,
    ) -> ChannelEstimateSet {
        let data = h_hat.into_iter().flatten().collect();
        ChannelEstimateSet {
            h_hat: RealizationArray::from_raw(1, k, l, n, data).unwrap(),
            psi: vec![],
            error_cov: c_mats,
            num_aps: l,
        }
    }

    #[test]
    fn single_user_lmmse_shrinks() {
        let est = estimates_from(
            vec![vec![c(1.0, 0.0), c(0.0, 0.0)]],
            1,
            1,
            2,
            vec![ComplexMatrix::zeros(2, 2)],
        );
        let v = lmmse_combiner(0, 0, 0, &est, &[1.0], 1.0).unwrap();
        assert!((v[0] - c(0.5, 0.0)).norm() < 1e-15);
        assert!(v[1].norm() < 1e-15);
    }

    #[test]
    fn zero_power_zero_combiner() {
        let est = estimates_from(
            vec![vec![c(1.0, 0.5), c(0.2, 0.0)], vec![c(0.3, 0.0), c(0.0, 1.0)]],
            2,
            1,
            2,
            vec![ComplexMatrix::zeros(2, 2), ComplexMatrix::zeros(2, 2)],
        );
        let v = lmmse_combiner(0, 0, 0, &est, &[0.0, 1.0], 0.1).unwrap();
        assert_eq!(v.norm(), 0.0);
        let set = compute_combiners(&est, &[0.0, 1.0], 0.1, CombinerKind::Lmmse).unwrap();
        assert!(set.v.get(0, 0, 0).iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn lmmse_matches_explicit_inverse() {
        let h1 = vec![c(0.3, -0.7), c(1.1, 0.2)];
        let h2 = vec![c(-0.4, 0.5), c(0.6, 0.9)];
        let c1 =
            ComplexMatrix::from_row_major(2, 2, vec![c(0.2, 0.0), c(0.05, 0.01), c(0.05, -0.01), c(0.1, 0.0)]).unwrap();
        let c2 = ComplexMatrix::diag(&[0.07, 0.03]);
        let est = estimates_from(vec![h1.clone(), h2.clone()], 2, 1, 2, vec![c1.clone(), c2.clone()]);
        let (p, s2) = ([0.8, 0.3], 0.05);

        let mut m = ComplexMatrix::scaled_identity(2, s2);
        for (i, (h, cm)) in [(&h1, &c1), (&h2, &c2)].into_iter().enumerate() {
            m.add_outer(c(p[i], 0.0), h, h);
            m.add_scaled(c(p[i], 0.0), cm);
        }
        // 2×2 inverse by adjugate
        let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
        let inv = [[m[(1, 1)] / det, -m[(0, 1)] / det], [-m[(1, 0)] / det, m[(0, 0)] / det]];
        for (k, h) in [&h1, &h2].into_iter().enumerate() {
            let v = lmmse_combiner(0, k, 0, &est, &p, s2).unwrap();
            let oracle = [
                p[k] * (inv[0][0] * h[0] + inv[0][1] * h[1]),
                p[k] * (inv[1][0] * h[0] + inv[1][1] * h[1]),
            ];
            for i in 0..2 {
                assert!((v[i] - oracle[i]).norm() <= 1e-10 * v.norm());
            }
        }
        let set = compute_combiners(&est, &p, s2, CombinerKind::Lmmse).unwrap();
        for k in 0..2 {
            let direct = lmmse_combiner(0, k, 0, &est, &p, s2).unwrap();
            assert_eq!(set.v.get(0, k, 0), direct.as_slice());
        }
    }

    #[test]
    fn mr_is_identity_map() {
        let est = estimates_from(
            vec![vec![c(1.0, 0.0), c(0.0, 1.0)]],
            1,
            1,
            2,
            vec![ComplexMatrix::zeros(2, 2)],
        );
        assert_eq!(mr_combiner(0, 0, 0, &est).as_slice(), &[c(1.0, 0.0), c(0.0, 1.0)]);
        let zero = estimates_from(vec![vec![c(0.0, 0.0); 2]], 1, 1, 2, vec![ComplexMatrix::zeros(2, 2)]);
        assert_eq!(mr_combiner(0, 0, 0, &zero).norm(), 0.0);
    }

    #[test]
    fn lmmse_aligns_with_mr_at_high_snr() {
        let h = vec![c(0.3, -0.2), c(0.9, 0.4), c(-0.1, 0.6)];
        let est = estimates_from(vec![h.clone()], 1, 1, 3, vec![ComplexMatrix::zeros(3, 3)]);
        let v = lmmse_combiner(0, 0, 0, &est, &[1.0], 1e-8).unwrap();
        let cos = dot(v.as_slice(), &h).norm() / (v.norm() * ComplexVector::from_vec(h.clone()).norm());
        assert!(cos.min(1.0).acos() < 1e-6);
    }

    #[test]
    fn se_plug_in() {
        assert_eq!(se_from_sinr(&[0.0], 10, 200).unwrap().se, vec![0.0]);
        assert!((se_from_sinr(&[1.0], 10, 200).unwrap().se[0] - 0.95).abs() < 1e-15);
        let r = se_from_sinr(&[3.0, 1.0], 4, 200).unwrap();
        assert!((r.se[0] - 1.96).abs() < 1e-15);
        assert_eq!(r.min_se, r.se[1]);
        assert!(matches!(
            se_from_sinr(&[1.0], 200, 200),
            Err(Error::InvalidFraction { .. })
        ));
        assert!(matches!(
            se_from_sinr(&[1.0], 0, 200),
            Err(Error::InvalidFraction { .. })
        ));
    }

    #[test]
    fn zero_power_zero_sinr() {
        let stats = EffectiveStats::new(
            vec![ComplexVector::from_real(&[1.0, 0.5])],
            vec![ComplexMatrix::identity(2).scaled(c(2.0, 0.0))],
            vec![vec![1.0, 1.0]],
            10,
            0.1,
        )
        .unwrap();
        let a = ComplexVector::from_real(&[1.0, 0.0]);
        assert_eq!(effective_sinr(0, &stats, &[0.0], &a).unwrap(), 0.0);
        let bad = ComplexVector::from_real(&[1.0, 1.0]);
        assert!(effective_sinr(0, &stats, &[1.0], &bad).is_err());
    }

    #[test]
    fn scalar_sinr_reduction() {
        let (g, g2, dv, p, s2) = (c(0.8, 0.3), 1.1, 2.0, 0.4, 0.05);
        let stats = EffectiveStats::new(
            vec![ComplexVector::from_vec(vec![g])],
            vec![ComplexMatrix::diag(&[g2])],
            vec![vec![dv]],
            100,
            s2,
        )
        .unwrap();
        let a = ComplexVector::from_real(&[1.0]);
        let sinr = effective_sinr(0, &stats, &[p], &a).unwrap();
        let expected = p * g.norm_sqr() / (p * (g2 - g.norm_sqr()) + s2 * dv);
        assert!((sinr - expected).abs() <= 1e-14 * expected);
        let (w, max) = optimal_weights_fixed_power(0, &stats, &[p]).unwrap();
        assert!((w[0] - c(1.0, 0.0)).norm() < 1e-15);
        assert!((max - expected).abs() <= 1e-12 * expected);
    }
}
