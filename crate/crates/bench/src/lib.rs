//! Fixtures shared by the benchmarks.

use cellfree::combining::{stats_at_powers, CombinerKind, EffectiveStats};
use cellfree::harness::{prepare_drop, DropSetup};
use cellfree::optimizer::{gp_coefficients, solve_weight_subproblem, GpCoefficients};
use cellfree::rng::{fill_complex_normal, stream_rng, Stream};
use cellfree::{ComplexMatrix, NetworkConfig, C64};

/// Desk-sized network with a reduced number of realizations.
pub fn desk_config(mc_realizations: usize) -> NetworkConfig {
    NetworkConfig {
        num_aps: 16,
        num_ues: 8,
        antennas_per_ap: 2,
        pilot_reuse: 2,
        mc_realizations,
        ..Default::default()
    }
}

pub fn desk_drop(mc_realizations: usize) -> (NetworkConfig, DropSetup) {
    let cfg = desk_config(mc_realizations);
    let setup = prepare_drop(&cfg, 11).expect("drop");
    (cfg, setup)
}

pub fn desk_stats(mc_realizations: usize, kind: CombinerKind) -> (NetworkConfig, DropSetup, EffectiveStats) {
    let (cfg, setup) = desk_drop(mc_realizations);
    let stats = stats_at_powers(
        &setup.channels,
        &setup.estimates,
        &setup.layout.pmax_w,
        cfg.noise_power_w(),
        kind,
    )
    .expect("stats");
    (cfg, setup, stats)
}

pub fn desk_coefficients() -> (GpCoefficients, Vec<f64>) {
    let (_, setup, stats) = desk_stats(200, CombinerKind::Lmmse);
    let pmax = setup.layout.pmax_w.clone();
    let weights = solve_weight_subproblem(&stats, &pmax).expect("weights");
    (gp_coefficients(&stats, &weights).expect("coefficients"), pmax)
}

/// Random Hermitian positive definite matrix of size `n`.
pub fn random_hpd(n: usize) -> ComplexMatrix {
    let mut rng = stream_rng(3, Stream::Channel, &[n as u64]);
    let mut x = vec![C64::new(0.0, 0.0); n * n];
    fill_complex_normal(&mut rng, &mut x);
    let x = ComplexMatrix::from_row_major(n, n, x).expect("square");
    let mut a = x.matmul(&x.adjoint()).expect("square");
    a.add_diagonal(1.0);
    a
}
