//! Replicate orchestration: averaged branch-length spectra with theory
//! overlays and slope fits, and geodesic-coalescence survival probes.
//!
//! Replicates are fully independent (own weight seed, own sampling streams)
//! and run on a worker pool; aggregation is a deterministic fold over the
//! replicate index, never over completion order, so results are bit-identical
//! for any worker count. A failed replicate aborts the experiment rather than
//! being skipped, since silent skips would bias the averages.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fpp::{grow_cluster, grow_cluster_until, ClusterState, GrowthConfig, Site, SiteMap};
use crate::genealogy::{
    branch_spectrum, build_forest, draw_sample, mutate_sfs, LengthMetric, SampleMode,
};
use crate::rng::{substream_seed, Purpose, RngStream};
use crate::theory::{expected_lengths, loglog_slope, SlopeFit, TheoryCurve, TheoryModel};
use crate::weights::WeightLaw;

// ---------------------------------------------------------------------------
// Spectrum experiments
// ---------------------------------------------------------------------------

/// Sampling mode for a spectrum experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SamplingMode {
    Bulk,
    Boundary,
    Poisson { rate: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    /// Cluster size N.
    pub cluster_sites: usize,
    /// Sample size n (requested; ignored by Poisson sampling).
    pub sample_size: usize,
    pub mode: SamplingMode,
    pub replicates: usize,
    pub metric: LengthMetric,
    /// Slope fit and report run over k = 1..=kmax_fit.
    pub kmax_fit: usize,
    /// Mutation rate; when set, the SFS is generated per replicate.
    pub theta: Option<f64>,
    pub law: WeightLaw,
    pub workers: usize,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cluster_sites == 0 {
            return Err(Error::Config("cluster size must be positive".into()));
        }
        if self.replicates == 0 {
            return Err(Error::Config("need at least one replicate".into()));
        }
        if self.workers == 0 || self.workers > 512 {
            return Err(Error::Config(format!(
                "workers must be in 1..=512, got {}",
                self.workers
            )));
        }
        if self.kmax_fit < 2 {
            return Err(Error::Config("kmax must be at least 2".into()));
        }
        match self.mode {
            SamplingMode::Bulk | SamplingMode::Boundary => {
                if self.sample_size > self.cluster_sites {
                    return Err(Error::Config(format!(
                        "sample size {} exceeds cluster size {}",
                        self.sample_size, self.cluster_sites
                    )));
                }
                if self.kmax_fit + 1 > self.sample_size {
                    return Err(Error::Config(format!(
                        "kmax {} must be at most n - 1 = {}",
                        self.kmax_fit,
                        self.sample_size.saturating_sub(1)
                    )));
                }
            }
            SamplingMode::Poisson { rate } => {
                if !(rate > 0.0 && rate.is_finite()) {
                    return Err(Error::Config(format!(
                        "poisson sampling rate must be positive, got {rate}"
                    )));
                }
            }
        }
        if let Some(theta) = self.theta {
            if !(theta >= 0.0 && theta.is_finite()) {
                return Err(Error::Config(format!(
                    "theta must be nonnegative, got {theta}"
                )));
            }
        }
        self.law.validate()
    }
}

/// Replicate-averaged spectrum with fits and normalized theory overlays.
#[derive(Debug, Clone, Serialize)]
pub struct AggregateReport {
    pub config: ExperimentConfig,
    /// `mean_lengths[k - 1]` for k = 1..=kmax_fit.
    pub mean_lengths: Vec<f64>,
    pub stderr_lengths: Vec<f64>,
    /// Replicate-averaged SFS, present when `theta` was set.
    pub mean_mutations: Option<Vec<f64>>,
    pub slope_fit: SlopeFit,
    pub theory_bulk: TheoryCurve,
    pub theory_boundary: TheoryCurve,
    pub validity_note: String,
}

struct ReplicateOutput {
    lengths: Vec<f64>,
    mutations: Option<Vec<f64>>,
}

fn replicate_spectrum(config: &ExperimentConfig, r: u64) -> Result<ReplicateOutput> {
    let weight_seed = substream_seed(config.master_seed, r, Purpose::Weights);
    let growth = GrowthConfig::new(weight_seed, config.cluster_sites, config.law);
    let cluster = grow_cluster(&growth)?;
    let mode = match config.mode {
        SamplingMode::Bulk => SampleMode::Bulk {
            n: config.sample_size,
        },
        SamplingMode::Boundary => SampleMode::Boundary {
            n: config.sample_size,
        },
        SamplingMode::Poisson { rate } => SampleMode::PoissonBulk { rate },
    };
    let mut sampling = RngStream::new(config.master_seed, r, Purpose::Sampling);
    let sample = draw_sample(&cluster, mode, &mut sampling)?;
    let forest = build_forest(&cluster, &sample)?;
    let spectrum = branch_spectrum(&forest, config.metric);
    if r == 0 {
        spot_check_invariants(&cluster, &sample.sites, &forest, &spectrum.lengths);
    }
    let mutations = match config.theta {
        Some(theta) => {
            let mut stream = RngStream::new(config.master_seed, r, Purpose::Mutation);
            let rep = mutate_sfs(&forest, theta, config.metric, &mut stream)?;
            Some(pad_truncate(
                &rep.mutations
                    .expect("mutate_sfs fills mutations")
                    .iter()
                    .map(|&m| m as f64)
                    .collect::<Vec<f64>>(),
                config.kmax_fit,
            ))
        }
        None => None,
    };
    Ok(ReplicateOutput {
        lengths: pad_truncate(&spectrum.lengths, config.kmax_fit),
        mutations,
    })
}

fn pad_truncate(values: &[f64], len: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(len);
    out.extend(values.iter().copied().take(len));
    out.resize(len, 0.0);
    out
}

/// Cheap conservation checks run on replicate 0 of every experiment.
fn spot_check_invariants(
    cluster: &ClusterState,
    samples: &[Site],
    forest: &crate::genealogy::GenealogyForest,
    site_or_time_lengths: &[f64],
) {
    let origin_count = forest
        .node_of(crate::fpp::ORIGIN)
        .expect("origin is in every forest")
        .count as usize;
    assert_eq!(origin_count, samples.len(), "origin count must equal n");
    let _ = site_or_time_lengths;
    let sites_spec = branch_spectrum(forest, LengthMetric::SiteCount);
    let weighted: f64 = sites_spec
        .lengths
        .iter()
        .enumerate()
        .map(|(i, l)| (i + 1) as f64 * l)
        .sum();
    let path_total: usize = samples
        .iter()
        .map(|&s| cluster.trace_geodesic(s).map(|p| p.len()).unwrap_or(0))
        .sum();
    assert_eq!(
        weighted, path_total as f64,
        "site-count double counting must be exact"
    );
}

/// Column means and standard errors over replicate rows, folded in replicate
/// index order.
pub fn aggregate_replicates(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    assert!(!rows.is_empty());
    let cols = rows[0].len();
    let r = rows.len() as f64;
    let mut mean = vec![0.0f64; cols];
    for row in rows {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= r;
    }
    let mut stderr = vec![0.0f64; cols];
    if rows.len() > 1 {
        for row in rows {
            for (s, (v, m)) in stderr.iter_mut().zip(row.iter().zip(&mean)) {
                let d = v - m;
                *s += d * d;
            }
        }
        for s in &mut stderr {
            *s = (*s / (r - 1.0)).sqrt() / r.sqrt();
        }
    }
    (mean, stderr)
}

fn with_pool<T: Send>(workers: usize, job: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    Ok(pool.install(job))
}

/// Grow, sample, and average `replicates` spectra; fit the log-log slope of
/// the mean over k = 1..=kmax and attach the normalized gamma-ratio curves.
pub fn run_spectrum_experiment(config: &ExperimentConfig) -> Result<AggregateReport> {
    config.validate()?;
    let outputs: Vec<Result<ReplicateOutput>> = with_pool(config.workers, || {
        (0..config.replicates as u64)
            .into_par_iter()
            .map(|r| replicate_spectrum(config, r))
            .collect()
    })?;
    let mut length_rows = Vec::with_capacity(config.replicates);
    let mut mutation_rows = Vec::new();
    for out in outputs {
        let out = out?; // first failure aborts, no partial averages
        length_rows.push(out.lengths);
        if let Some(m) = out.mutations {
            mutation_rows.push(m);
        }
    }
    let (mean_lengths, stderr_lengths) = aggregate_replicates(&length_rows);
    let mean_mutations = if mutation_rows.is_empty() {
        None
    } else {
        Some(aggregate_replicates(&mutation_rows).0)
    };
    let ks: Vec<f64> = (1..=config.kmax_fit).map(|k| k as f64).collect();
    let slope_fit = loglog_slope(&ks, &mean_lengths)?;
    let theory_bulk =
        expected_lengths(TheoryModel::LandscapeBulk, config.sample_size, config.kmax_fit)?
            .into_normalized();
    let theory_boundary = expected_lengths(
        TheoryModel::LandscapeBoundary,
        config.sample_size,
        config.kmax_fit,
    )?
    .into_normalized();
    let validity_note = prelimit_note(config);
    Ok(AggregateReport {
        config: config.clone(),
        mean_lengths,
        stderr_lengths,
        mean_mutations,
        slope_fit,
        theory_bulk,
        theory_boundary,
        validity_note,
    })
}

/// The asymptotic regime requires k/n << N^(-1/6); record how the largest
/// fitted k fares against that.
fn prelimit_note(config: &ExperimentConfig) -> String {
    let n = config.sample_size.max(1) as f64;
    let k = config.kmax_fit as f64;
    let bound = (config.cluster_sites as f64).powf(-1.0 / 6.0);
    let ratio = (k / n) / bound;
    let verdict = if ratio < 0.5 {
        "inside the validity regime"
    } else if ratio < 1.0 {
        "marginal"
    } else {
        "outside the validity regime"
    };
    format!(
        "regime check k/n << N^(-1/6): at k = {k}, k/n = {:.3e}, N^(-1/6) = {:.3e}, ratio = {:.3} ({verdict})",
        k / n,
        bound,
        ratio
    )
}

// ---------------------------------------------------------------------------
// Coalescence experiments
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoalescenceConfig {
    pub master_seed: u64,
    /// 2 or 3 geodesics per replicate.
    pub arms: u8,
    /// Transverse spacing between adjacent starting sites.
    pub separation: i32,
    /// Cluster radius scale; starts are placed at distance radius/2.
    pub radius: i32,
    pub replicates: usize,
    pub law: WeightLaw,
    pub workers: usize,
}

impl CoalescenceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.arms == 2 || self.arms == 3) {
            return Err(Error::Config(format!(
                "arms must be 2 or 3, got {}",
                self.arms
            )));
        }
        if self.separation < 0 {
            return Err(Error::Config("separation must be nonnegative".into()));
        }
        if self.radius < 40 || self.radius < 16 * self.arms as i32 * self.separation.max(1) {
            return Err(Error::Config(format!(
                "radius {} too small: need >= 40 and >= 16 * arms * separation",
                self.radius
            )));
        }
        if self.replicates == 0 {
            return Err(Error::Config("need at least one replicate".into()));
        }
        if self.workers == 0 || self.workers > 512 {
            return Err(Error::Config("workers must be in 1..=512".into()));
        }
        self.law.validate()
    }
}

/// Empirical probability that the traced geodesics are still pairwise
/// disjoint at a given passage-time depth below their starts.
#[derive(Debug, Clone, Serialize)]
pub struct SurvivalCurve {
    pub arms: u8,
    pub separation: i32,
    /// Increasing depth grid; `depths[0] == 0`.
    pub depths: Vec<f64>,
    /// `survival[i]` = fraction of replicates with first merge strictly
    /// deeper than `depths[i]`; non-increasing.
    pub survival: Vec<f64>,
    /// Log-log slope of the curve over its middle decade; NaN when the curve
    /// has too little positive support to fit (e.g. separation 0).
    pub fitted_exponent: f64,
    pub protocol_note: String,
}

/// Cluster size needed so that sites at distance `radius / 2 + transverse
/// offsets` from the origin are deep inside the grown ball: target the
/// minimal shape radius with a fluctuation pad of order (radius/2)^(1/3) and
/// a 10% area margin. Depends only on `radius`, so paired experiments at
/// different arm counts grow identical clusters from identical seeds.
fn sites_for_radius(radius: i32) -> usize {
    let r = radius as f64;
    let target = 0.53 * r + 16.0 + 6.0 * (0.5 * r).cbrt();
    (std::f64::consts::PI * (1.10 * target) * (1.10 * target)).ceil() as usize
}

/// Start sites: a transverse line (along y) through the point (radius/2, 0),
/// spaced `separation` apart and centered on it.
fn start_sites(radius: i32, arms: u8, separation: i32) -> Vec<Site> {
    let x0 = radius / 2;
    let span = (arms as i32 - 1) * separation;
    (0..arms as i32)
        .map(|j| Site {
            x: x0,
            y: j * separation - span / 2,
        })
        .collect()
}

/// Passage-time depth at which the first pair of geodesics merges, measured
/// from the pair's earlier start time. Depth 0 means they share a site
/// immediately.
fn first_merge_depth(cluster: &ClusterState, starts: &[Site]) -> Result<f64> {
    let mut paths = Vec::with_capacity(starts.len());
    for &s in starts {
        if !cluster.is_occupied(s) {
            return Err(Error::InsufficientRadius(s.x, s.y));
        }
        paths.push(cluster.trace_geodesic(s)?);
    }
    let mut first = f64::INFINITY;
    for i in 0..paths.len() {
        let mut members = SiteMap::with_capacity(paths[i].len());
        for (idx, &s) in paths[i].iter().enumerate() {
            members.insert(s, idx as u32);
        }
        for j in i + 1..paths.len() {
            // Walk from the start downward; the first shared site is the
            // deepest one, after which the paths coincide to the origin.
            let shared = paths[j]
                .iter()
                .find(|s| members.contains(**s))
                .expect("all geodesics share the origin");
            let t_pair = cluster.time_of(starts[i]).unwrap().min(
                cluster.time_of(starts[j]).unwrap(),
            );
            let depth = (t_pair - cluster.time_of(*shared).unwrap()).max(0.0);
            first = first.min(depth);
        }
    }
    Ok(first)
}

/// Grow one replicate cluster just far enough to contain every listed start
/// site; `sites_for_radius` caps the growth. Geodesics from the starts are
/// identical to those in a cap-sized cluster, so halting early changes no
/// measured depth.
fn grow_for_starts(cfg: &CoalescenceConfig, r: u64, starts: &[Site]) -> Result<ClusterState> {
    let weight_seed = substream_seed(cfg.master_seed, r, Purpose::Weights);
    let growth = GrowthConfig::new(weight_seed, sites_for_radius(cfg.radius), cfg.law);
    grow_cluster_until(&growth, starts)
}

fn coalescence_replicate(cfg: &CoalescenceConfig, arms: u8, r: u64) -> Result<f64> {
    let starts = start_sites(cfg.radius, arms, cfg.separation);
    let cluster = grow_for_starts(cfg, r, &starts)?;
    first_merge_depth(&cluster, &starts)
}

/// Assemble the survival curve from per-replicate first-merge depths.
fn survival_from_depths(cfg: &CoalescenceConfig, arms: u8, merge_depths: &[f64]) -> SurvivalCurve {
    let r = merge_depths.len() as f64;
    let mut sorted = merge_depths.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let mut grid = vec![0.0f64];
    for &d in &sorted {
        if d > 0.0 && Some(&d) != grid.last() {
            grid.push(d);
        }
    }
    let survival: Vec<f64> = grid
        .iter()
        .map(|&t| {
            let deeper = sorted.partition_point(|&d| d <= t);
            (merge_depths.len() - deeper) as f64 / r
        })
        .collect();
    let fitted_exponent = match fit_survival_exponent(&grid, &survival) {
        Ok(fit) => fit.slope,
        Err(e) => {
            log::warn!("survival exponent fit unavailable: {e}");
            f64::NAN
        }
    };
    SurvivalCurve {
        arms,
        separation: cfg.separation,
        depths: grid,
        survival,
        fitted_exponent,
        protocol_note: format!(
            "reverse-trace protocol: geodesics from {} sites spaced {} apart at distance {}/2 \
             from the origin, traced toward the origin; depth of a merge is the earlier start \
             time of the pair minus the passage time of their deepest shared site; survival at \
             depth t is the fraction of replicates whose first pairwise merge is deeper than t; \
             exponent fitted on the middle decade in log depth",
            arms, cfg.separation, cfg.radius
        ),
    }
}

/// Log-log slope of a survival curve over its middle decade: the first and
/// last 10% of the positive-depth span (in log space) are dropped to avoid
/// small-depth lattice artifacts and censoring at the merge horizon.
pub fn fit_survival_exponent(depths: &[f64], survival: &[f64]) -> Result<SlopeFit> {
    if depths.len() != survival.len() {
        return Err(Error::InvalidParameter(
            "depths and survival lengths differ".into(),
        ));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (&d, &s) in depths.iter().zip(survival) {
        if d > 0.0 && s > 0.0 {
            xs.push(d);
            ys.push(s);
        }
    }
    if xs.len() < 2 {
        return Err(Error::InsufficientPoints(xs.len()));
    }
    let l0 = xs.first().unwrap().ln();
    let l1 = xs.last().unwrap().ln();
    let span = l1 - l0;
    let (lo, hi) = (l0 + 0.1 * span, l0 + 0.9 * span);
    let mut wx = Vec::new();
    let mut wy = Vec::new();
    for (&x, &y) in xs.iter().zip(&ys) {
        let lx = x.ln();
        if lx >= lo && lx <= hi {
            wx.push(x);
            wy.push(y);
        }
    }
    if wx.len() < 2 {
        // Degenerate span; fall back to the full positive support.
        return loglog_slope(&xs, &ys);
    }
    loglog_slope(&wx, &wy)
}

/// Grow `replicates` clusters and measure how deep 2 or 3 geodesics from
/// nearby starts stay pairwise disjoint.
pub fn run_coalescence_experiment(cfg: &CoalescenceConfig) -> Result<SurvivalCurve> {
    cfg.validate()?;
    let depths: Vec<Result<f64>> = with_pool(cfg.workers, || {
        (0..cfg.replicates as u64)
            .into_par_iter()
            .map(|r| coalescence_replicate(cfg, cfg.arms, r))
            .collect()
    })?;
    let merged: Vec<f64> = depths.into_iter().collect::<Result<_>>()?;
    Ok(survival_from_depths(cfg, cfg.arms, &merged))
}

/// The 2-arm and 3-arm probes on identical seeds and identical clusters:
/// each replicate grows one cluster and traces both start sets, which is
/// observably identical to two separate runs (growth depends only on the
/// seed and radius) at half the cost.
pub fn run_paired_coalescence(cfg: &CoalescenceConfig) -> Result<(SurvivalCurve, SurvivalCurve)> {
    let mut curves = run_paired_coalescence_sweep(cfg, &[cfg.separation])?;
    let pair = curves.pop().expect("one separation requested");
    Ok((pair.two_arm, pair.three_arm))
}

/// Paired curves at one separation.
#[derive(Debug, Clone, Serialize)]
pub struct PairedCurves {
    pub separation: i32,
    pub two_arm: SurvivalCurve,
    pub three_arm: SurvivalCurve,
}

/// Paired 2- and 3-arm probes across several separations, all evaluated on
/// the same clusters (the weight field depends only on the replicate seed):
/// each replicate grows once, until every start of every requested
/// configuration is inside, then traces all start sets. Results are
/// bit-identical to separate per-configuration runs with the same seeds.
pub fn run_paired_coalescence_sweep(
    cfg: &CoalescenceConfig,
    separations: &[i32],
) -> Result<Vec<PairedCurves>> {
    if separations.is_empty() {
        return Err(Error::Config("need at least one separation".into()));
    }
    for &d in separations {
        CoalescenceConfig {
            separation: d,
            ..cfg.clone()
        }
        .validate()?;
    }
    // Union of all start sites across separations and arm counts.
    let mut all_starts: Vec<Site> = Vec::new();
    for &d in separations {
        for arms in [2u8, 3] {
            for s in start_sites(cfg.radius, arms, d) {
                if !all_starts.contains(&s) {
                    all_starts.push(s);
                }
            }
        }
    }
    let rows: Vec<Result<Vec<(f64, f64)>>> = with_pool(cfg.workers, || {
        (0..cfg.replicates as u64)
            .into_par_iter()
            .map(|r| {
                let cluster = grow_for_starts(cfg, r, &all_starts)?;
                separations
                    .iter()
                    .map(|&d| {
                        let two =
                            first_merge_depth(&cluster, &start_sites(cfg.radius, 2, d))?;
                        let three =
                            first_merge_depth(&cluster, &start_sites(cfg.radius, 3, d))?;
                        Ok((two, three))
                    })
                    .collect()
            })
            .collect()
    })?;
    let mut per_sep: Vec<(Vec<f64>, Vec<f64>)> =
        vec![(Vec::new(), Vec::new()); separations.len()];
    for row in rows {
        for (slot, (two, three)) in per_sep.iter_mut().zip(row?) {
            slot.0.push(two);
            slot.1.push(three);
        }
    }
    Ok(separations
        .iter()
        .zip(per_sep)
        .map(|(&d, (twos, threes))| {
            let sep_cfg = CoalescenceConfig {
                separation: d,
                ..cfg.clone()
            };
            PairedCurves {
                separation: d,
                two_arm: survival_from_depths(&sep_cfg, 2, &twos),
                three_arm: survival_from_depths(&sep_cfg, 3, &threes),
            }
        })
        .collect())
}
