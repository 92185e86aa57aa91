#![allow(dead_code)]

use cellfree::channel::RealizationArray;
use cellfree::combining::{estimate_effective_stats, CombinerKind, CombinerSet, EffectiveStats};
use cellfree::harness::{prepare_drop, DropSetup};
use cellfree::rng::{fill_complex_normal, stream_rng, Stream};
use cellfree::{ComplexMatrix, ComplexVector, NetworkConfig, C64};
use rand::Rng;

pub fn small_config(l: usize, k: usize, n: usize, f: usize, mc: usize) -> NetworkConfig {
    NetworkConfig {
        num_aps: l,
        num_ues: k,
        antennas_per_ap: n,
        pilot_reuse: f,
        mc_realizations: mc,
        // a smaller area keeps the SNR in a range where the combiners differ
        area_side_m: 400.0,
        ..Default::default()
    }
}

pub fn small_drop(cfg: &NetworkConfig, seed: u64) -> DropSetup {
    prepare_drop(cfg, seed).expect("drop setup")
}

/// Effective statistics of random single-antenna channels `h` and combiners
/// `v = h + 0.5 w`, so that the mean gains are well away from zero.
pub fn random_stats(
    seed: u64,
    k: usize,
    l: usize,
    n_mc: usize,
    noise: f64,
) -> (RealizationArray, CombinerSet, EffectiveStats) {
    let mut rng = stream_rng(seed, Stream::Channel, &[]);
    let mut h = vec![C64::new(0.0, 0.0); n_mc * k * l];
    let mut w = h.clone();
    fill_complex_normal(&mut rng, &mut h);
    fill_complex_normal(&mut rng, &mut w);
    // per-(k, l) gains spread over two orders of magnitude
    let gains: Vec<f64> = (0..k * l).map(|_| 10f64.powf(rng.random_range(-1.0..1.0))).collect();
    for r in 0..n_mc {
        for kl in 0..k * l {
            h[r * k * l + kl] *= gains[kl].sqrt();
        }
    }
    let v: Vec<C64> = h.iter().zip(&w).map(|(hi, wi)| hi + wi * 0.5).collect();
    let channels = RealizationArray::from_raw(n_mc, k, l, 1, h).unwrap();
    let combiners = CombinerSet {
        kind: CombinerKind::Mr,
        v: RealizationArray::from_raw(n_mc, k, l, 1, v).unwrap(),
    };
    let stats = estimate_effective_stats(&channels, &combiners, noise).unwrap();
    (channels, combiners, stats)
}

pub fn random_unit(rng: &mut impl Rng, n: usize) -> ComplexVector {
    let mut x = vec![C64::new(0.0, 0.0); n];
    fill_complex_normal(rng, &mut x);
    ComplexVector::from_vec(x).normalized().unwrap()
}

pub fn random_powers(rng: &mut impl Rng, k: usize) -> (Vec<f64>, Vec<f64>) {
    let pmax: Vec<f64> = (0..k).map(|_| rng.random_range(0.09..0.11)).collect();
    let p = pmax.iter().map(|m| m * rng.random_range(0.05..1.0)).collect();
    (p, pmax)
}

/// Sample covariance `(1/n) Σ x xᴴ` of zero-mean vectors.
pub fn sample_covariance<'a>(samples: impl Iterator<Item = &'a [C64]>, n: usize) -> ComplexMatrix {
    let mut m = ComplexMatrix::zeros(n, n);
    let mut count = 0usize;
    for x in samples {
        m.add_outer(C64::new(1.0, 0.0), x, x);
        count += 1;
    }
    m.scale_mut(C64::new(1.0 / count as f64, 0.0));
    m
}

pub fn rel_frobenius(a: &ComplexMatrix, b: &ComplexMatrix) -> f64 {
    a.sub(b).frobenius_norm() / b.frobenius_norm()
}
