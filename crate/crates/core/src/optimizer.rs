//! Alternating max-min SINR optimization.
//!
//! For fixed powers the SINR of each UE is a generalized Rayleigh quotient in
//! its CPU weights, maximized in closed form. For fixed weights, dropping the
//! self-interference term turns the SINR into `p_k / (Σ_{i≠k} a_ki p_i + c_k)`,
//! and max-min over a power box becomes a geometric program. Its optimum is
//! found here by bisection on the target SINR `t` with a standard
//! interference-function feasibility test. The outer loop alternates the two
//! blocks, refreshing the effective-channel statistics at each new power
//! vector.

use std::ops::Deref;

use rayon::prelude::*;

use crate::combining::{effective_sinr, EffectiveStats};
use crate::error::{Error, Result};
use crate::linalg::{quadratic_form, rank1_rayleigh_maximizer, Cholesky, ComplexVector};

/// Per-UE transmit powers in Watts.
#[derive(Clone, Debug, PartialEq)]
pub struct PowerVector(Vec<f64>);

impl PowerVector {
    /// Checks `0 ≤ p_k ≤ pmax_k`.
    pub fn new(p: Vec<f64>, pmax: &[f64]) -> Result<Self> {
        if p.len() != pmax.len() {
            return Err(Error::DimensionMismatch {
                expected: pmax.len(),
                actual: p.len(),
            });
        }
        for (k, (&pk, &cap)) in p.iter().zip(pmax).enumerate() {
            if !(pk >= 0.0 && pk <= cap) {
                return Err(Error::InvalidParameter(format!(
                    "power of UE {k} is {pk}, outside [0, {cap}]"
                )));
            }
        }
        Ok(Self(p))
    }

    pub fn full(pmax: &[f64]) -> Self {
        Self(pmax.to_vec())
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for PowerVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Unit-norm CPU weighting vectors, one per UE.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightMatrix(Vec<ComplexVector>);

impl WeightMatrix {
    pub fn new(rows: Vec<ComplexVector>) -> Result<Self> {
        for (k, a) in rows.iter().enumerate() {
            if (a.norm() - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidParameter(format!(
                    "weights of UE {k} have norm {}",
                    a.norm()
                )));
            }
        }
        Ok(Self(rows))
    }

    pub fn row(&self, k: usize) -> &ComplexVector {
        &self.0[k]
    }

    pub fn rows(&self) -> &[ComplexVector] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Coefficients of the posynomial SINR constraints
/// `p_k⁻¹ (Σ_{i≠k} a_ki p_i + c_k) ≤ 1/t`.
#[derive(Clone, Debug, PartialEq)]
pub struct GpCoefficients {
    num_ues: usize,
    /// `a_ki`, row-major `k * K + i`, zero diagonal.
    a: Vec<f64>,
    c: Vec<f64>,
}

impl GpCoefficients {
    pub fn new(a: Vec<f64>, c: Vec<f64>) -> Result<Self> {
        let k = c.len();
        if a.len() != k * k {
            return Err(Error::DimensionMismatch {
                expected: k * k,
                actual: a.len(),
            });
        }
        if a.iter().any(|x| !(*x >= 0.0)) || c.iter().any(|x| !(*x > 0.0)) {
            return Err(Error::InvalidParameter(
                "GP coefficients must have a >= 0 and c > 0".into(),
            ));
        }
        let mut a = a;
        for i in 0..k {
            a[i * k + i] = 0.0;
        }
        Ok(Self { num_ues: k, a, c })
    }

    pub fn num_ues(&self) -> usize {
        self.num_ues
    }

    pub fn a(&self, k: usize, i: usize) -> f64 {
        self.a[k * self.num_ues + i]
    }

    pub fn c(&self, k: usize) -> f64 {
        self.c[k]
    }

    /// `Σ_{i≠k} a_ki p_i + c_k`
    pub fn interference_plus_noise(&self, k: usize, p: &[f64]) -> f64 {
        let row = &self.a[k * self.num_ues..(k + 1) * self.num_ues];
        row.iter().zip(p).map(|(a, p)| a * p).sum::<f64>() + self.c[k]
    }
}

/// Relative ridge added to `B_k` when it fails to factor.
const WEIGHT_RIDGE: f64 = 1e-12;

fn weights_for_ue(k: usize, stats: &EffectiveStats, p: &[f64]) -> Result<ComplexVector> {
    let g = &stats.g_mean[k];
    let mut b = stats.interference_matrix(k, p);
    match rank1_rayleigh_maximizer(g, &b) {
        Err(Error::NotPositiveDefinite { .. }) => {
            let ridge = WEIGHT_RIDGE * b.trace().re.abs() / b.rows() as f64;
            log::warn!("UE {k}: B_k not positive definite, adding ridge {ridge:e}");
            b.add_diagonal(ridge);
            rank1_rayleigh_maximizer(g, &b)
        }
        other => other,
    }
    .map_err(|e| e.at_ue(k))
}

/// Per-UE weights maximizing `aᴴ(p_k ḡ_k ḡ_kᴴ)a / aᴴ B_k a`, i.e.
/// `a_k ∝ B_k⁻¹ E{g_kk}`.
pub fn solve_weight_subproblem(stats: &EffectiveStats, p: &[f64]) -> Result<WeightMatrix> {
    if p.len() != stats.num_ues() {
        return Err(Error::DimensionMismatch {
            expected: stats.num_ues(),
            actual: p.len(),
        });
    }
    let rows = (0..stats.num_ues())
        .into_par_iter()
        .map(|k| weights_for_ue(k, stats, p))
        .collect::<Result<Vec<_>>>()?;
    Ok(WeightMatrix(rows))
}

/// Builds the posynomial coefficients for fixed weights. `σ²` is folded into
/// `c_k`.
pub fn gp_coefficients(stats: &EffectiveStats, weights: &WeightMatrix) -> Result<GpCoefficients> {
    let k_count = stats.num_ues();
    if weights.len() != k_count {
        return Err(Error::DimensionMismatch {
            expected: k_count,
            actual: weights.len(),
        });
    }
    let rows = (0..k_count)
        .into_par_iter()
        .map(|k| -> Result<(Vec<f64>, f64)> {
            let a = weights.row(k);
            let signal = a.dot(&stats.g_mean[k]).norm_sqr();
            let scale = stats.g_mean[k].norm_sqr();
            if !(signal > 1e-300 && signal > f64::EPSILON * f64::EPSILON * scale) {
                return Err(Error::ZeroSignalDirection { ue: k });
            }
            let row = (0..k_count)
                .map(|i| {
                    if i == k {
                        Ok(0.0)
                    } else {
                        Ok(quadratic_form(a, stats.g(k, i))?.re.max(0.0) / signal)
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            let noise: f64 = stats.d[k].iter().zip(a.iter()).map(|(d, z)| d * z.norm_sqr()).sum();
            Ok((row, stats.noise_power * noise / signal))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut a = Vec::with_capacity(k_count * k_count);
    let mut c = Vec::with_capacity(k_count);
    for (row, ck) in rows {
        a.extend(row);
        c.push(ck);
    }
    GpCoefficients::new(a, c)
}

/// Approximated SINR `p_k / (Σ_{i≠k} a_ki p_i + c_k)`.
pub fn approx_sinr(k: usize, coeffs: &GpCoefficients, p: &[f64]) -> f64 {
    p[k] / coeffs.interference_plus_noise(k, p)
}

/// The same approximation evaluated straight from the statistics:
/// `p_k |aᴴḡ_k|² / aᴴ(Σ_{i≠k} p_i E{g_ki g_kiᴴ} + σ² D_k)a`.
pub fn approx_sinr_from_stats(k: usize, stats: &EffectiveStats, a: &ComplexVector, p: &[f64]) -> Result<f64> {
    let num = p[k] * a.dot(&stats.g_mean[k]).norm_sqr();
    let mut den = stats.noise_power
        * stats.d[k]
            .iter()
            .zip(a.iter())
            .map(|(d, z)| d * z.norm_sqr())
            .sum::<f64>();
    for (i, &pi) in p.iter().enumerate() {
        if i != k {
            den += pi * quadratic_form(a, stats.g(k, i))?.re;
        }
    }
    Ok(num / den)
}

pub fn min_approx_sinr(coeffs: &GpCoefficients, p: &[f64]) -> f64 {
    (0..coeffs.num_ues())
        .map(|k| approx_sinr(k, coeffs, p))
        .fold(f64::INFINITY, f64::min)
}

const FIXED_POINT_MAX_ITERS: usize = 200_000;
const FIXED_POINT_RTOL: f64 = 1e-14;
const BISECTION_STEPS: usize = 60;

/// Least fixed point of `p ↦ min(pmax, t (A p + c))` starting from zero, and
/// whether it meets every SINR target `t`.
pub fn feasibility_fixed_point(coeffs: &GpCoefficients, pmax: &[f64], t: f64) -> Result<(Vec<f64>, bool)> {
    let k_count = coeffs.num_ues();
    let mut p = vec![0.0; k_count];
    let mut next = vec![0.0; k_count];
    for _ in 0..FIXED_POINT_MAX_ITERS {
        let mut change: f64 = 0.0;
        for k in 0..k_count {
            next[k] = (t * coeffs.interference_plus_noise(k, &p)).min(pmax[k]);
            change = change.max((next[k] - p[k]).abs() / pmax[k]);
        }
        std::mem::swap(&mut p, &mut next);
        if change <= FIXED_POINT_RTOL {
            let feasible = (0..k_count).all(|k| t * coeffs.interference_plus_noise(k, &p) <= p[k] * (1.0 + 1e-10));
            return Ok((p, feasible));
        }
    }
    Err(Error::NonConvergence {
        what: "power feasibility fixed point",
        iterations: FIXED_POINT_MAX_ITERS,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PowerSolution {
    pub powers: PowerVector,
    /// Minimum approximated SINR achieved by `powers`.
    pub t: f64,
}

/// Max-min of the approximated SINRs over `0 ≤ p ≤ pmax`.
pub fn solve_power_subproblem(coeffs: &GpCoefficients, pmax: &[f64]) -> Result<PowerSolution> {
    let k_count = coeffs.num_ues();
    if pmax.len() != k_count {
        return Err(Error::DimensionMismatch {
            expected: k_count,
            actual: pmax.len(),
        });
    }
    if pmax.iter().any(|p| !(*p > 0.0)) {
        return Err(Error::InvalidParameter("power caps must be positive".into()));
    }
    // interference-free bound
    let mut hi = (0..k_count)
        .map(|k| pmax[k] / coeffs.c(k))
        .fold(f64::INFINITY, f64::min);
    let (p_hi, ok) = feasibility_fixed_point(coeffs, pmax, hi)?;
    let best = if ok {
        p_hi
    } else {
        let mut lo = 0.0;
        let mut best = vec![0.0; k_count];
        for _ in 0..BISECTION_STEPS {
            if hi - lo <= 1e-13 * hi {
                break;
            }
            let mid = 0.5 * (lo + hi);
            let (p, ok) = feasibility_fixed_point(coeffs, pmax, mid)?;
            if ok {
                lo = mid;
                best = p;
            } else {
                hi = mid;
            }
        }
        best
    };
    let t = min_approx_sinr(coeffs, &best);
    Ok(PowerSolution {
        powers: PowerVector(best),
        t,
    })
}

/// Source of effective-channel statistics for a given power vector. The
/// simulator implementation recomputes the combiners at `p` over a fixed set
/// of channel realizations.
pub trait StatsProvider {
    fn stats_at(&mut self, powers: &[f64]) -> Result<EffectiveStats>;
}

impl<F> StatsProvider for F
where
    F: FnMut(&[f64]) -> Result<EffectiveStats>,
{
    fn stats_at(&mut self, powers: &[f64]) -> Result<EffectiveStats> {
        self(powers)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlternatingOptions {
    pub max_iters: usize,
    /// Stop once the relative change of the approximated objective is at
    /// most this.
    pub tol: f64,
    /// Keep the statistics computed at `p0` for every iteration instead of
    /// refreshing them at each new power vector.
    pub freeze_stats: bool,
    /// Return the visited power vector with the largest exact min-SINR
    /// (the starting point included) instead of the last one. The
    /// approximated objective ignores self-interference, so the last
    /// iterate can be worse than where the loop started.
    pub keep_best: bool,
}

impl Default for AlternatingOptions {
    fn default() -> Self {
        Self {
            max_iters: 10,
            tol: 1e-3,
            freeze_stats: false,
            keep_best: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub powers: Vec<f64>,
    /// Exact per-UE SINR at `powers`, with weights re-optimized for them.
    pub sinr_exact: Vec<f64>,
    pub min_sinr_exact: f64,
    /// Minimum approximated SINR (the power subproblem objective).
    pub t_approx: f64,
    /// Relative change of `t_approx` from the previous record.
    pub relative_change: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationTrace {
    /// State at `p0`; its `t_approx` uses the first iteration's coefficients.
    pub initial: IterationRecord,
    pub iterations: Vec<IterationRecord>,
    pub converged: bool,
    /// Iteration whose powers were returned; 0 is the starting point.
    pub selected: usize,
}

#[derive(Clone, Debug)]
pub struct AlternatingOutcome {
    pub powers: PowerVector,
    pub weights: WeightMatrix,
    pub sinr: Vec<f64>,
    pub trace: IterationTrace,
}

fn exact_sinrs(stats: &EffectiveStats, p: &[f64], w: &WeightMatrix) -> Result<Vec<f64>> {
    (0..stats.num_ues())
        .map(|k| effective_sinr(k, stats, p, w.row(k)))
        .collect()
}

fn min_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Alternates the weight and power subproblems from `p0` until the
/// approximated objective settles or `max_iters` is reached.
pub fn alternating_maxmin(
    provider: &mut impl StatsProvider,
    pmax: &[f64],
    p0: &PowerVector,
    opts: &AlternatingOptions,
) -> Result<AlternatingOutcome> {
    if p0.len() != pmax.len() {
        return Err(Error::DimensionMismatch {
            expected: pmax.len(),
            actual: p0.len(),
        });
    }
    PowerVector::new(p0.to_vec(), pmax)?;
    let step = |iteration: usize| move |e: Error| e.at_iteration(iteration);

    let mut stats = provider.stats_at(p0).map_err(step(0))?;
    let mut powers = p0.clone();
    let mut weights = solve_weight_subproblem(&stats, &powers).map_err(step(0))?;
    let sinr0 = exact_sinrs(&stats, &powers, &weights).map_err(step(0))?;
    let mut initial = IterationRecord {
        iteration: 0,
        powers: powers.to_vec(),
        min_sinr_exact: min_of(&sinr0),
        sinr_exact: sinr0.clone(),
        t_approx: f64::NAN,
        relative_change: f64::NAN,
    };
    let mut sinr = sinr0;
    let mut best = (initial.min_sinr_exact, 0, powers.clone(), weights.clone(), sinr.clone());
    let mut iterations = Vec::with_capacity(opts.max_iters);
    let mut converged = false;
    let mut t_prev = f64::NAN;

    for i in 1..=opts.max_iters {
        let coeffs = gp_coefficients(&stats, &weights).map_err(step(i))?;
        if i == 1 {
            t_prev = min_approx_sinr(&coeffs, &powers);
            initial.t_approx = t_prev;
        }
        let solution = solve_power_subproblem(&coeffs, pmax).map_err(step(i))?;
        if !opts.freeze_stats {
            stats = provider.stats_at(&solution.powers).map_err(step(i))?;
        }
        powers = solution.powers;
        weights = solve_weight_subproblem(&stats, &powers).map_err(step(i))?;
        sinr = exact_sinrs(&stats, &powers, &weights).map_err(step(i))?;
        let relative_change = (solution.t - t_prev).abs() / solution.t;
        iterations.push(IterationRecord {
            iteration: i,
            powers: powers.to_vec(),
            min_sinr_exact: min_of(&sinr),
            sinr_exact: sinr.clone(),
            t_approx: solution.t,
            relative_change,
        });
        t_prev = solution.t;
        if !opts.keep_best || min_of(&sinr) > best.0 {
            best = (min_of(&sinr), i, powers.clone(), weights.clone(), sinr.clone());
        }
        if relative_change <= opts.tol {
            converged = true;
            break;
        }
    }

    let (_, selected, powers, weights, sinr) = best;
    Ok(AlternatingOutcome {
        powers,
        weights,
        sinr,
        trace: IterationTrace {
            initial,
            iterations,
            converged,
            selected,
        },
    })
}

/// Generalized eigenvalue `p_k ḡ_kᴴ B_k⁻¹ ḡ_k` of UE `k`: the exact SINR
/// reached by the optimal weights at powers `p`.
pub fn weight_subproblem_value(k: usize, stats: &EffectiveStats, p: &[f64]) -> Result<f64> {
    let b = stats.interference_matrix(k, p);
    let factor = Cholesky::factor(&b)?;
    Ok(p[k] * factor.inverse_quadratic_form(stats.g_mean[k].as_slice())?)
}
