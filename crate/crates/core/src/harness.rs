//! Experiment orchestration: config files, seeded drops and CSV output.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;

use crate::channel::{assign_pilots, estimate_channels, ChannelEstimateSet, ChannelRealizations, PilotAssignment};
use crate::combining::{optimal_weights_fixed_power, se_from_sinr, stats_at_powers, CombinerKind};
use crate::error::{Error, Result};
use crate::geometry::{build_correlations, generate_layout, CorrelationSet, Layout, NetworkConfig};
use crate::optimizer::{alternating_maxmin, AlternatingOptions, IterationTrace, PowerVector};
use crate::rng::{derive_seed, stream_rng, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scheme {
    Proposed,
    FixedPower,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Proposed => "proposed",
            Scheme::FixedPower => "fixed_power",
        }
    }
}

impl FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "proposed" => Ok(Scheme::Proposed),
            "fixed_power" | "fixed" => Ok(Scheme::FixedPower),
            other => Err(Error::InvalidConfig(format!("unknown scheme `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub network: NetworkConfig,
    pub n_drops: usize,
    pub schemes: Vec<Scheme>,
    pub combiners: Vec<CombinerKind>,
    pub output_dir: PathBuf,
    pub alternating: AlternatingOptions,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            network: NetworkConfig::default(),
            n_drops: 20,
            schemes: vec![Scheme::Proposed, Scheme::FixedPower],
            combiners: vec![CombinerKind::Lmmse, CombinerKind::Mr],
            output_dir: PathBuf::from("out"),
            alternating: AlternatingOptions::default(),
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("bad value `{value}` for `{key}`")))
}

fn parse_list<T: FromStr<Err = Error> + Ord>(value: &str) -> Result<Vec<T>> {
    let mut items = value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(str::parse)
        .collect::<Result<Vec<T>>>()?;
    items.sort();
    items.dedup();
    Ok(items)
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::InvalidConfig(format!("bad boolean `{value}` for `{key}`"))),
    }
}

impl ExperimentSpec {
    /// Parses `key = value` lines; `#` starts a comment. Keys not present
    /// keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut spec = Self::default();
        let mut seen = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("line {}: expected `key = value`", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if seen.insert(key.to_string(), lineno + 1).is_some() {
                return Err(Error::InvalidConfig(format!(
                    "line {}: duplicate key `{key}`",
                    lineno + 1
                )));
            }
            let net = &mut spec.network;
            match key {
                "L" => net.num_aps = parse_value(key, value)?,
                "K" => net.num_ues = parse_value(key, value)?,
                "N" => net.antennas_per_ap = parse_value(key, value)?,
                "f" => net.pilot_reuse = parse_value(key, value)?,
                "tau_c" => net.tau_c = parse_value(key, value)?,
                "bandwidth_hz" => net.bandwidth_hz = parse_value(key, value)?,
                "noise_dbm" => net.noise_power_dbm = parse_value(key, value)?,
                "area_m" => net.area_side_m = parse_value(key, value)?,
                "pmax_mw_min" => net.pmax_range_mw.0 = parse_value(key, value)?,
                "pmax_mw_max" => net.pmax_range_mw.1 = parse_value(key, value)?,
                "asd_deg" => net.asd_deg = parse_value(key, value)?,
                "antenna_spacing" => net.antenna_spacing = parse_value(key, value)?,
                "mc_realizations" => net.mc_realizations = parse_value(key, value)?,
                "seed" => net.seed = parse_value(key, value)?,
                "n_drops" => spec.n_drops = parse_value(key, value)?,
                "schemes" => spec.schemes = parse_list(value)?,
                "combiners" => spec.combiners = parse_list(value)?,
                "max_iters" => spec.alternating.max_iters = parse_value(key, value)?,
                "tol" => spec.alternating.tol = parse_value(key, value)?,
                "freeze_stats" => spec.alternating.freeze_stats = parse_bool(key, value)?,
                "keep_best" => spec.alternating.keep_best = parse_bool(key, value)?,
                "output_dir" => spec.output_dir = PathBuf::from(value),
                other => {
                    return Err(Error::InvalidConfig(format!(
                        "line {}: unknown key `{other}`",
                        lineno + 1
                    )));
                }
            }
        }
        Ok(spec)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        if self.n_drops == 0 {
            return Err(Error::InvalidConfig("n_drops must be at least 1".into()));
        }
        if self.schemes.is_empty() || self.combiners.is_empty() {
            return Err(Error::InvalidConfig(
                "select at least one scheme and one combiner".into(),
            ));
        }
        if self.alternating.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be at least 1".into()));
        }
        if !(self.alternating.tol >= 0.0) {
            return Err(Error::InvalidConfig("tol must be non-negative".into()));
        }
        Ok(())
    }

    /// Seed of drop `drop_index`; every random quantity of the drop derives
    /// from it.
    pub fn drop_seed(&self, drop_index: usize) -> u64 {
        derive_seed(self.network.seed, Stream::Drop, &[drop_index as u64])
    }
}

/// Everything about a drop that does not depend on the scheme or combiner.
#[derive(Clone, Debug)]
pub struct DropSetup {
    pub layout: Layout,
    pub correlations: CorrelationSet,
    pub pilots: PilotAssignment,
    pub channels: ChannelRealizations,
    pub estimates: ChannelEstimateSet,
}

/// Layout, pilots and channel estimation for one drop. The layout, shadowing
/// and channel realizations do not depend on the pilot reuse factor, so
/// configs differing only in `f` see the same propagation.
pub fn prepare_drop(cfg: &NetworkConfig, drop_seed: u64) -> Result<DropSetup> {
    let cfg = NetworkConfig {
        seed: drop_seed,
        ..cfg.clone()
    };
    let layout = generate_layout(&cfg)?;
    let correlations = build_correlations(&cfg, &layout)?;
    let mut pilot_rng = stream_rng(drop_seed, Stream::Pilots, &[cfg.pilot_reuse as u64]);
    let pilots = assign_pilots(&cfg, &mut pilot_rng)?;
    let channels = ChannelRealizations::generate(&correlations, cfg.mc_realizations, drop_seed)?;
    // pilots are sent at full power
    let estimates = estimate_channels(
        &channels,
        &correlations,
        &pilots,
        &layout.pmax_w,
        cfg.noise_power_w(),
        drop_seed,
    )?;
    Ok(DropSetup {
        layout,
        correlations,
        pilots,
        channels,
        estimates,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DropResult {
    pub drop_index: usize,
    pub scheme: Scheme,
    pub combiner: CombinerKind,
    pub min_se: f64,
    pub per_ue_se: Vec<f64>,
    pub per_ue_sinr: Vec<f64>,
    pub powers: Vec<f64>,
    pub iterations_used: usize,
    pub trace: Option<IterationTrace>,
}

/// Evaluates one scheme/combiner pair on a prepared drop.
pub fn evaluate(
    spec: &ExperimentSpec,
    setup: &DropSetup,
    drop_index: usize,
    scheme: Scheme,
    combiner: CombinerKind,
) -> Result<DropResult> {
    let cfg = &spec.network;
    let noise = cfg.noise_power_w();
    let pmax = &setup.layout.pmax_w;
    let mut provider = |p: &[f64]| stats_at_powers(&setup.channels, &setup.estimates, p, noise, combiner);
    let (sinr, powers, iterations_used, trace) = match scheme {
        Scheme::FixedPower => {
            let stats = provider(pmax)?;
            let sinr = (0..pmax.len())
                .map(|k| optimal_weights_fixed_power(k, &stats, pmax).map(|(_, s)| s))
                .collect::<Result<Vec<_>>>()?;
            (sinr, pmax.clone(), 0, None)
        }
        Scheme::Proposed => {
            let out = alternating_maxmin(&mut provider, pmax, &PowerVector::full(pmax), &spec.alternating)?;
            let used = out.trace.iterations.len();
            (out.sinr, out.powers.into_vec(), used, Some(out.trace))
        }
    };
    let report = se_from_sinr(&sinr, cfg.tau_p(), cfg.tau_c)?;
    Ok(DropResult {
        drop_index,
        scheme,
        combiner,
        min_se: report.min_se,
        per_ue_se: report.se,
        per_ue_sinr: sinr,
        powers,
        iterations_used,
        trace,
    })
}

/// Runs every selected (scheme, combiner) pair on drop `drop_index`. All
/// pairs share the same channel realizations.
pub fn run_drop(spec: &ExperimentSpec, drop_index: usize) -> Result<Vec<DropResult>> {
    let run = || -> Result<Vec<DropResult>> {
        let setup = prepare_drop(&spec.network, spec.drop_seed(drop_index))?;
        let mut out = Vec::with_capacity(spec.schemes.len() * spec.combiners.len());
        for &scheme in &spec.schemes {
            for &combiner in &spec.combiners {
                out.push(evaluate(spec, &setup, drop_index, scheme, combiner)?);
            }
        }
        Ok(out)
    };
    run().map_err(|e| e.at_drop(drop_index))
}

/// Runs all drops in parallel; results are ordered by drop index.
pub fn run_experiment(spec: &ExperimentSpec, on_drop_done: impl Fn(usize) + Sync) -> Result<Vec<DropResult>> {
    spec.validate()?;
    let per_drop = (0..spec.n_drops)
        .into_par_iter()
        .map(|d| {
            let r = run_drop(spec, d);
            on_drop_done(d);
            r
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_drop.into_iter().flatten().collect())
}

/// Formats with 9 significant digits, `%g` style, independent of locale.
pub fn format_sig9(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if !(-5..9).contains(&exp) {
        let m = mantissa.trim_end_matches('0').trim_end_matches('.');
        return format!("{m}e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs());
    }
    let decimals = (8 - exp).max(0) as usize;
    let fixed = format!("{x:.decimals$}");
    if fixed.contains('.') {
        fixed.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        fixed
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, contents).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Empirical CDF of the min-user SE per (scheme, combiner) group.
pub fn emit_cdf(results: &[DropResult], path: &Path) -> Result<()> {
    let mut groups: BTreeMap<(Scheme, CombinerKind), Vec<f64>> = BTreeMap::new();
    for r in results {
        groups.entry((r.scheme, r.combiner)).or_default().push(r.min_se);
    }
    let mut out = String::from("scheme,combiner,min_se_sorted,cdf\n");
    for ((scheme, combiner), mut values) in groups {
        values.sort_by(f64::total_cmp);
        let n = values.len() as f64;
        for (rank, v) in values.iter().enumerate() {
            let cdf = (rank + 1) as f64 / n;
            let _ = writeln!(
                out,
                "{},{},{},{}",
                scheme.name(),
                combiner.name(),
                format_sig9(*v),
                format_sig9(cdf)
            );
        }
    }
    write_file(path, &out)
}

/// Per-iteration min-user SE (exact SINR) and approximated objective of the
/// proposed scheme, one row per iteration.
pub fn emit_convergence(results: &[DropResult], prelog: f64, path: &Path) -> Result<()> {
    let mut traced: Vec<&DropResult> = results.iter().filter(|r| r.trace.is_some()).collect();
    traced.sort_by_key(|r| r.drop_index);
    let mut out = String::from("drop_index,iteration,min_se_exact,t_approx\n");
    for r in traced {
        let trace = r.trace.as_ref().expect("filtered");
        let mut prev = trace.initial.t_approx;
        let mut worst_drop = 0.0f64;
        for rec in &trace.iterations {
            if rec.t_approx < prev * (1.0 - 1e-9) {
                worst_drop = worst_drop.max(1.0 - rec.t_approx / prev);
            }
            prev = rec.t_approx;
        }
        if worst_drop > 0.0 {
            log::warn!(
                "drop {}: approximated objective decreased by up to {:.3e} (relative)",
                r.drop_index,
                worst_drop
            );
        }
        for rec in &trace.iterations {
            let se = prelog * (1.0 + rec.min_sinr_exact).log2();
            let _ = writeln!(
                out,
                "{},{},{},{}",
                r.drop_index,
                rec.iteration,
                format_sig9(se),
                format_sig9(rec.t_approx)
            );
        }
    }
    write_file(path, &out)
}

/// Per-drop summary: one row per (drop, scheme, combiner).
pub fn emit_drops(results: &[DropResult], path: &Path) -> Result<()> {
    let mut out = String::from("drop_index,scheme,combiner,min_se,iterations,selected\n");
    for r in results {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.drop_index,
            r.scheme.name(),
            r.combiner.name(),
            format_sig9(r.min_se),
            r.iterations_used,
            r.trace.as_ref().map_or(0, |t| t.selected)
        );
    }
    write_file(path, &out)
}

/// Writes `cdf.csv`, `drops.csv` and, for the proposed scheme,
/// `convergence_<combiner>.csv` into `dir`. Returns the paths written.
pub fn write_outputs(spec: &ExperimentSpec, results: &[DropResult], dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let cdf = dir.join("cdf.csv");
    emit_cdf(results, &cdf)?;
    written.push(cdf);
    let drops = dir.join("drops.csv");
    emit_drops(results, &drops)?;
    written.push(drops);
    if spec.schemes.contains(&Scheme::Proposed) {
        let prelog = 1.0 - spec.network.tau_p() as f64 / spec.network.tau_c as f64;
        for &combiner in &spec.combiners {
            let subset: Vec<DropResult> = results
                .iter()
                .filter(|r| r.scheme == Scheme::Proposed && r.combiner == combiner)
                .cloned()
                .collect();
            let path = dir.join(format!("convergence_{}.csv", combiner.name()));
            emit_convergence(&subset, prelog, &path)?;
            written.push(path);
        }
    }
    Ok(written)
}
