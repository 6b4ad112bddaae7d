//! Command-line front end: flag/file configuration, experiment dispatch, and
//! CSV/JSON/SVG output bundles.
//!
//! All files are written atomically (temp file + rename) and contain no
//! timestamps, so re-running with an identical configuration reproduces
//! byte-identical CSV and JSON regardless of `--workers`.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::brownian::{
    bridge_max_cdf, excursion_small_value_prob, simulate_bridge_max, watermelon_gap_prob,
    BridgeSpec, GapMode, GapQuery,
};
use crate::error::{Error, Result};
use crate::experiments::{
    run_coalescence_experiment, run_spectrum_experiment, AggregateReport, CoalescenceConfig,
    ExperimentConfig, SamplingMode, SurvivalCurve,
};
use crate::genealogy::LengthMetric;
use crate::rng::{Purpose, RngStream};
use crate::theory::loglog_slope;
use crate::weights::WeightLaw;

/// Cluster sizes above this need `--offline-scale`; they are meant for long
/// offline runs, not interactive sessions.
pub const ONLINE_SITE_LIMIT: usize = 10_000_000;

const DEFAULT_OUT_DIR: &str = "geoforest-out";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExperimentArg {
    Spectrum,
    Coalescence,
    Brownian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Bulk,
    Boundary,
    Poisson,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MetricArg {
    Sites,
    Time,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DistArg {
    Exp,
    Uniform,
}

/// Growth and sampling statistics for first-passage percolation populations.
#[derive(Debug, Parser)]
#[command(name = "geoforest", version, about)]
struct Cli {
    /// JSON config file; explicit flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Which experiment to run.
    #[arg(long, value_enum)]
    experiment: Option<ExperimentArg>,
    /// Cluster size N (occupied sites per replicate).
    #[arg(long)]
    sites: Option<usize>,
    /// Sample size n; a comma-separated list runs one experiment per entry.
    #[arg(long, value_delimiter = ',')]
    samples: Option<Vec<usize>>,
    /// Sampling mode.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Inclusion rate for poisson sampling.
    #[arg(long)]
    rate: Option<f64>,
    /// Replicates per experiment.
    #[arg(long)]
    replicates: Option<usize>,
    /// Master seed; all randomness derives from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Branch-length metric.
    #[arg(long, value_enum)]
    metric: Option<MetricArg>,
    /// Mutation rate; enables the site frequency spectrum.
    #[arg(long)]
    theta: Option<f64>,
    /// Edge-weight distribution.
    #[arg(long, value_enum)]
    dist: Option<DistArg>,
    /// Largest k reported and fitted.
    #[arg(long)]
    kmax: Option<usize>,
    /// Worker threads (results are identical for any value).
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory. Defaults to $GEOFOREST_OUT or ./geoforest-out.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Geodesics per coalescence replicate.
    #[arg(long)]
    arms: Option<u8>,
    /// Transverse spacing between coalescence starts.
    #[arg(long)]
    separation: Option<i32>,
    /// Coalescence cluster radius scale.
    #[arg(long)]
    radius: Option<i32>,
    /// Unlock cluster sizes above 10^7 sites.
    #[arg(long)]
    offline_scale: bool,
}

/// File-backed configuration; every field optional, flags win.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    experiment: Option<String>,
    sites: Option<usize>,
    samples: Option<Vec<usize>>,
    mode: Option<String>,
    rate: Option<f64>,
    replicates: Option<usize>,
    seed: Option<u64>,
    metric: Option<String>,
    theta: Option<f64>,
    dist: Option<String>,
    kmax: Option<usize>,
    workers: Option<usize>,
    out: Option<PathBuf>,
    arms: Option<u8>,
    separation: Option<i32>,
    radius: Option<i32>,
    offline_scale: Option<bool>,
}

/// Fully resolved run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct AppConfig {
    pub experiment: ExperimentArg,
    pub seed: u64,
    pub sites: usize,
    pub samples: Vec<usize>,
    pub mode: SamplingMode,
    pub replicates: usize,
    pub metric: LengthMetric,
    pub theta: Option<f64>,
    pub law: WeightLaw,
    pub kmax: usize,
    pub workers: usize,
    pub out_dir: PathBuf,
    pub arms: u8,
    pub separation: i32,
    pub radius: i32,
    pub offline_scale: bool,
}

fn parse_enum_str<T: ValueEnum>(field: &str, value: &str) -> Result<T> {
    T::from_str(value, true)
        .map_err(|_| Error::Config(format!("invalid value '{value}' for '{field}' in config file")))
}

/// Parse argv (and the optional `--config` file) into a resolved config.
/// Flags override file entries; defaults fill whatever remains.
pub fn parse_config<I, S>(argv: I) -> Result<AppConfig>
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv).map_err(|e| Error::Config(e.to_string()))?;
    resolve_config(cli)
}

fn resolve_config(cli: Cli) -> Result<AppConfig> {
    let file: FileConfig = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("config file {}: {e}", path.display())))?
        }
        None => FileConfig::default(),
    };

    let experiment = match (cli.experiment, file.experiment.as_deref()) {
        (Some(e), _) => e,
        (None, Some(s)) => parse_enum_str::<ExperimentArg>("experiment", s)?,
        (None, None) => ExperimentArg::Spectrum,
    };
    let mode_arg = match (cli.mode, file.mode.as_deref()) {
        (Some(m), _) => m,
        (None, Some(s)) => parse_enum_str::<ModeArg>("mode", s)?,
        (None, None) => ModeArg::Bulk,
    };
    let rate = cli.rate.or(file.rate);
    let mode = match mode_arg {
        ModeArg::Bulk => SamplingMode::Bulk,
        ModeArg::Boundary => SamplingMode::Boundary,
        ModeArg::Poisson => SamplingMode::Poisson {
            rate: rate.ok_or_else(|| {
                Error::Config("--mode poisson requires --rate".into())
            })?,
        },
    };
    let metric = match (cli.metric, file.metric.as_deref()) {
        (Some(MetricArg::Sites), _) => LengthMetric::SiteCount,
        (Some(MetricArg::Time), _) => LengthMetric::PassageTime,
        (None, Some(s)) => match parse_enum_str::<MetricArg>("metric", s)? {
            MetricArg::Sites => LengthMetric::SiteCount,
            MetricArg::Time => LengthMetric::PassageTime,
        },
        (None, None) => LengthMetric::SiteCount,
    };
    let law = match (cli.dist, file.dist.as_deref()) {
        (Some(DistArg::Exp), _) => WeightLaw::Exponential { rate: 1.0 },
        (Some(DistArg::Uniform), _) => WeightLaw::Uniform { lo: 0.5, hi: 1.5 },
        (None, Some(s)) => match parse_enum_str::<DistArg>("dist", s)? {
            DistArg::Exp => WeightLaw::Exponential { rate: 1.0 },
            DistArg::Uniform => WeightLaw::Uniform { lo: 0.5, hi: 1.5 },
        },
        (None, None) => WeightLaw::Exponential { rate: 1.0 },
    };
    let out_dir = cli
        .out
        .or(file.out)
        .or_else(|| std::env::var_os("GEOFOREST_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
    let workers = cli
        .workers
        .or(file.workers)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|p| p.get())
                .unwrap_or(1)
        });
    let config = AppConfig {
        experiment,
        seed: cli.seed.or(file.seed).unwrap_or(42),
        sites: cli.sites.or(file.sites).unwrap_or(1_000_000),
        samples: cli
            .samples
            .or(file.samples)
            .unwrap_or_else(|| vec![1000]),
        mode,
        replicates: cli.replicates.or(file.replicates).unwrap_or(20),
        metric,
        theta: cli.theta.or(file.theta),
        law,
        kmax: cli.kmax.or(file.kmax).unwrap_or(10),
        workers,
        out_dir,
        arms: cli.arms.or(file.arms).unwrap_or(2),
        separation: cli.separation.or(file.separation).unwrap_or(4),
        radius: cli.radius.or(file.radius).unwrap_or(600),
        offline_scale: cli.offline_scale || file.offline_scale.unwrap_or(false),
    };
    if config.sites > ONLINE_SITE_LIMIT && !config.offline_scale {
        return Err(Error::Config(format!(
            "--sites {} exceeds the interactive limit {ONLINE_SITE_LIMIT}; pass --offline-scale \
             to run at that scale",
            config.sites
        )));
    }
    if config.samples.is_empty() {
        return Err(Error::Config("--samples needs at least one value".into()));
    }
    Ok(config)
}

// ---------------------------------------------------------------------------
// Output bundle
// ---------------------------------------------------------------------------

/// Paths written by one CLI invocation.
#[derive(Debug, Clone)]
pub struct OutputBundle {
    pub out_dir: PathBuf,
    pub files: Vec<PathBuf>,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// spectrum.csv: one row per k with the frozen six-column schema.
fn spectrum_csv(report: &AggregateReport) -> String {
    let mut out = String::from("k,mean_L,stderr_L,norm_L,theory_bulk,theory_boundary\n");
    let total: f64 = report.mean_lengths.iter().sum();
    for k in 1..=report.config.kmax_fit {
        let mean = report.mean_lengths[k - 1];
        let stderr = report.stderr_lengths[k - 1];
        let norm = if total > 0.0 { mean / total } else { 0.0 };
        let tb = report.theory_bulk.value(k).unwrap_or(0.0);
        let tbd = report.theory_boundary.value(k).unwrap_or(0.0);
        out.push_str(&format!("{k},{mean},{stderr},{norm},{tb},{tbd}\n"));
    }
    out
}

/// survival.csv: depth, survival, arms, separation.
fn survival_csv(curve: &SurvivalCurve) -> String {
    let mut out = String::from("depth,survival,arms,separation\n");
    for (d, s) in curve.depths.iter().zip(&curve.survival) {
        out.push_str(&format!("{d},{s},{},{}\n", curve.arms, curve.separation));
    }
    out
}

// ---------------------------------------------------------------------------
// SVG plots
// ---------------------------------------------------------------------------

struct SvgCanvas {
    body: String,
    width: f64,
    height: f64,
    margin: f64,
}

impl SvgCanvas {
    fn new(width: f64, height: f64) -> SvgCanvas {
        SvgCanvas {
            body: String::new(),
            width,
            height,
            margin: 64.0,
        }
    }

    fn x(&self, frac: f64) -> f64 {
        self.margin + frac * (self.width - 2.0 * self.margin)
    }

    fn y(&self, frac: f64) -> f64 {
        // SVG y grows downward.
        self.height - self.margin - frac * (self.height - 2.0 * self.margin)
    }

    fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, style: &str) {
        self.body.push_str(&format!(
            "<line x1=\"{x1:.2}\" y1=\"{y1:.2}\" x2=\"{x2:.2}\" y2=\"{y2:.2}\" {style}/>\n"
        ));
    }

    fn circle(&mut self, x: f64, y: f64, r: f64, fill: &str) {
        self.body.push_str(&format!(
            "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"{r}\" fill=\"{fill}\"/>\n"
        ));
    }

    fn text(&mut self, x: f64, y: f64, anchor: &str, size: u32, content: &str) {
        self.body.push_str(&format!(
            "<text x=\"{x:.2}\" y=\"{y:.2}\" text-anchor=\"{anchor}\" \
             font-family=\"sans-serif\" font-size=\"{size}\">{content}</text>\n"
        ));
    }

    fn polyline(&mut self, pts: &[(f64, f64)], style: &str) {
        let coords: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
        self.body.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" {style}/>\n",
            coords.join(" ")
        ));
    }

    fn finish(self) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" \
             viewBox=\"0 0 {} {}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{}</svg>\n",
            self.width, self.height, self.width, self.height, self.body
        )
    }
}

/// Log-log plot of the normalized mean spectrum with both gamma-ratio theory
/// overlays.
fn spectrum_svg(report: &AggregateReport) -> String {
    let kmax = report.config.kmax_fit;
    let total: f64 = report.mean_lengths.iter().sum();
    let mut pts: Vec<(f64, f64)> = Vec::new();
    for k in 1..=kmax {
        let v = report.mean_lengths[k - 1];
        if v > 0.0 && total > 0.0 {
            pts.push(((k as f64).ln(), (v / total).ln()));
        }
    }
    let mut series: Vec<(Vec<(f64, f64)>, &str)> = Vec::new();
    for (curve, color) in [
        (&report.theory_bulk, "#d62728"),
        (&report.theory_boundary, "#2ca02c"),
    ] {
        let line: Vec<(f64, f64)> = (1..=kmax)
            .filter_map(|k| curve.value(k).map(|v| ((k as f64).ln(), v.ln())))
            .collect();
        series.push((line, color));
    }
    let all_y: Vec<f64> = pts
        .iter()
        .map(|p| p.1)
        .chain(series.iter().flat_map(|(l, _)| l.iter().map(|p| p.1)))
        .collect();
    let (ymin, ymax) = bounds(&all_y);
    let (xmin, xmax) = (0.0f64, (kmax as f64).ln());
    let fx = |x: f64| (x - xmin) / (xmax - xmin);
    let fy = |y: f64| (y - ymin) / (ymax - ymin);
    let mut svg = SvgCanvas::new(640.0, 480.0);
    draw_axes(&mut svg);
    for (line, color) in &series {
        let mapped: Vec<(f64, f64)> = line
            .iter()
            .map(|&(x, y)| (svg.x(fx(x)), svg.y(fy(y))))
            .collect();
        svg.polyline(&mapped, &format!("stroke=\"{color}\" stroke-width=\"1.5\""));
    }
    for &(x, y) in &pts {
        let (px, py) = (svg.x(fx(x)), svg.y(fy(y)));
        svg.circle(px, py, 3.0, "#1f77b4");
    }
    for k in [1usize, 2, 5, 10] {
        if k <= kmax {
            let px = svg.x(fx((k as f64).ln()));
            let base = svg.y(0.0) + 16.0;
            svg.text(px, base, "middle", 11, &format!("{k}"));
        }
    }
    let title = format!(
        "normalized branch-length spectrum, n = {}, N = {}, slope {:.3}",
        report.config.sample_size, report.config.cluster_sites, report.slope_fit.slope
    );
    svg.text(320.0, 28.0, "middle", 13, &title);
    svg.text(320.0, 470.0, "middle", 11, "k (log scale)");
    legend(&mut svg, &[
        ("measured", "#1f77b4"),
        ("bulk theory", "#d62728"),
        ("boundary theory", "#2ca02c"),
    ]);
    svg.finish()
}

/// |slope| against sample size with the two theoretical levels marked.
fn slope_svg(reports: &[AggregateReport]) -> String {
    let ns: Vec<f64> = reports
        .iter()
        .map(|r| r.config.sample_size as f64)
        .collect();
    let slopes: Vec<f64> = reports.iter().map(|r| r.slope_fit.slope.abs()).collect();
    let (xmin, xmax) = bounds(&ns);
    let mut ybounds = slopes.clone();
    ybounds.extend([0.4, 1.5]);
    let (ymin, ymax) = bounds(&ybounds);
    let fx = |x: f64| {
        if xmax > xmin {
            (x - xmin) / (xmax - xmin)
        } else {
            0.5
        }
    };
    let fy = |y: f64| (y - ymin) / (ymax - ymin);
    let mut svg = SvgCanvas::new(640.0, 480.0);
    draw_axes(&mut svg);
    for (level, color, label) in [(1.4, "#d62728", "1.4 (bulk)"), (0.5, "#2ca02c", "0.5 (boundary)")] {
        let py = svg.y(fy(level));
        let (x0, x1) = (svg.x(0.0), svg.x(1.0));
        svg.line(
            x0,
            py,
            x1,
            py,
            &format!("stroke=\"{color}\" stroke-width=\"1\" stroke-dasharray=\"6,4\""),
        );
        svg.text(x1 + 4.0, py + 4.0, "start", 10, label);
    }
    let mapped: Vec<(f64, f64)> = ns
        .iter()
        .zip(&slopes)
        .map(|(&n, &s)| (svg.x(fx(n)), svg.y(fy(s))))
        .collect();
    svg.polyline(&mapped, "stroke=\"#1f77b4\" stroke-width=\"1.5\"");
    for (i, &(px, py)) in mapped.iter().enumerate() {
        svg.circle(px, py, 3.5, "#1f77b4");
        svg.text(px, svg.y(0.0) + 16.0, "middle", 11, &format!("{}", ns[i]));
    }
    svg.text(320.0, 28.0, "middle", 13, "absolute log-log slope vs sample size");
    svg.text(320.0, 470.0, "middle", 11, "n");
    svg.finish()
}

fn bounds(values: &[f64]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if lo == hi {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn draw_axes(svg: &mut SvgCanvas) {
    let (x0, x1) = (svg.x(0.0), svg.x(1.0));
    let (y0, y1) = (svg.y(0.0), svg.y(1.0));
    svg.line(x0, y0, x1, y0, "stroke=\"black\" stroke-width=\"1\"");
    svg.line(x0, y0, x0, y1, "stroke=\"black\" stroke-width=\"1\"");
}

fn legend(svg: &mut SvgCanvas, entries: &[(&str, &str)]) {
    let mut y = 56.0;
    for (label, color) in entries {
        svg.circle(560.0, y - 4.0, 4.0, color);
        svg.text(570.0, y, "start", 11, label);
        y += 16.0;
    }
}

// ---------------------------------------------------------------------------
// Brownian verification battery
// ---------------------------------------------------------------------------

/// Summary of the bridge/excursion/watermelon checks run by the CLI.
#[derive(Debug, Clone, Serialize)]
pub struct BrownianBattery {
    pub bridge_theory_p: f64,
    pub bridge_empirical_p: f64,
    pub bridge_samples: usize,
    pub bridge_steps: usize,
    pub excursion_epsilons: Vec<f64>,
    pub excursion_probs: Vec<f64>,
    pub excursion_slope: f64,
    pub one_gap_probs: Vec<f64>,
    pub one_gap_slope: f64,
    pub two_gap_probs: Vec<f64>,
    pub two_gap_slope: f64,
}

/// Run the full Brownian verification battery at the given seed.
pub fn run_brownian_battery(seed: u64, samples: usize) -> Result<BrownianBattery> {
    let spec = BridgeSpec {
        start: 0.0,
        end: 0.0,
        horizon: 1.0,
        variance_param: 1.0,
        steps: 4096,
    };
    let mut rng = RngStream::new(seed, 0, Purpose::Bridge);
    let cdf = simulate_bridge_max(&spec, &mut rng, samples)?;
    let epsilons = [1e-1, 1e-2, 1e-3, 1e-4];
    let excursion_probs: Vec<f64> = epsilons
        .iter()
        .map(|&e| excursion_small_value_prob(0.5, e))
        .collect::<Result<_>>()?;
    let one_gap_probs: Vec<f64> = epsilons
        .iter()
        .map(|&e| {
            watermelon_gap_prob(&GapQuery {
                t: 0.5,
                epsilon: e,
                mode: GapMode::OneGap,
            })
        })
        .collect::<Result<_>>()?;
    let two_gap_probs: Vec<f64> = epsilons
        .iter()
        .map(|&e| {
            watermelon_gap_prob(&GapQuery {
                t: 0.5,
                epsilon: e,
                mode: GapMode::TwoGap,
            })
        })
        .collect::<Result<_>>()?;
    let slope_of = |ys: &[f64]| -> Result<f64> {
        Ok(loglog_slope(&epsilons, ys)?.slope)
    };
    Ok(BrownianBattery {
        bridge_theory_p: bridge_max_cdf(1.0, 0.0, 1.0)?,
        bridge_empirical_p: cdf.eval(1.0),
        bridge_samples: samples,
        bridge_steps: spec.steps,
        excursion_epsilons: epsilons.to_vec(),
        excursion_slope: slope_of(&excursion_probs)?,
        excursion_probs,
        one_gap_slope: slope_of(&one_gap_probs)?,
        one_gap_probs,
        two_gap_slope: slope_of(&two_gap_probs)?,
        two_gap_probs,
    })
}

// ---------------------------------------------------------------------------
// Dispatch
// ---------------------------------------------------------------------------

fn ensure_out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn experiment_config(app: &AppConfig, n: usize) -> ExperimentConfig {
    ExperimentConfig {
        master_seed: app.seed,
        cluster_sites: app.sites,
        sample_size: n,
        mode: app.mode,
        replicates: app.replicates,
        metric: app.metric,
        kmax_fit: app.kmax,
        theta: app.theta,
        law: app.law,
        workers: app.workers,
    }
}

/// Run the spectrum experiment for every requested n and write the bundle.
pub fn run_spectrum_command(app: &AppConfig) -> Result<OutputBundle> {
    ensure_out_dir(&app.out_dir)?;
    let mut reports = Vec::new();
    for &n in &app.samples {
        reports.push(run_spectrum_experiment(&experiment_config(app, n))?);
    }
    let mut files = Vec::new();
    let last = reports.last().expect("at least one sample size");
    let csv_path = app.out_dir.join("spectrum.csv");
    write_atomic(&csv_path, spectrum_csv(last).as_bytes())?;
    files.push(csv_path);
    let svg_path = app.out_dir.join("spectrum.svg");
    write_atomic(&svg_path, spectrum_svg(last).as_bytes())?;
    files.push(svg_path);
    if reports.len() > 1 {
        let slope_path = app.out_dir.join("slope.svg");
        write_atomic(&slope_path, slope_svg(&reports).as_bytes())?;
        files.push(slope_path);
    }
    let json = serde_json::json!({
        "experiment": "spectrum",
        "reports": reports,
    });
    let json_path = app.out_dir.join("report.json");
    write_atomic(&json_path, pretty_json(&json)?.as_bytes())?;
    files.push(json_path);
    Ok(OutputBundle {
        out_dir: app.out_dir.clone(),
        files,
    })
}

/// Run the coalescence probe and write survival.csv + report.json.
pub fn run_coalescence_command(app: &AppConfig) -> Result<OutputBundle> {
    ensure_out_dir(&app.out_dir)?;
    let cfg = CoalescenceConfig {
        master_seed: app.seed,
        arms: app.arms,
        separation: app.separation,
        radius: app.radius,
        replicates: app.replicates,
        law: app.law,
        workers: app.workers,
    };
    let curve = run_coalescence_experiment(&cfg)?;
    let mut files = Vec::new();
    let csv_path = app.out_dir.join("survival.csv");
    write_atomic(&csv_path, survival_csv(&curve).as_bytes())?;
    files.push(csv_path);
    let json = serde_json::json!({
        "experiment": "coalescence",
        "config": cfg,
        "curve": curve,
    });
    let json_path = app.out_dir.join("report.json");
    write_atomic(&json_path, pretty_json(&json)?.as_bytes())?;
    files.push(json_path);
    Ok(OutputBundle {
        out_dir: app.out_dir.clone(),
        files,
    })
}

/// Run the Brownian battery and write report.json.
pub fn run_brownian_command(app: &AppConfig) -> Result<OutputBundle> {
    ensure_out_dir(&app.out_dir)?;
    let battery = run_brownian_battery(app.seed, 100_000)?;
    let json = serde_json::json!({
        "experiment": "brownian",
        "results": battery,
    });
    let json_path = app.out_dir.join("report.json");
    write_atomic(&json_path, pretty_json(&json)?.as_bytes())?;
    Ok(OutputBundle {
        out_dir: app.out_dir.clone(),
        files: vec![json_path],
    })
}

fn pretty_json(value: &serde_json::Value) -> Result<String> {
    serde_json::to_string_pretty(value)
        .map(|mut s| {
            s.push('\n');
            s
        })
        .map_err(|e| Error::Config(format!("serializing report: {e}")))
}

/// Parse argv, run the selected experiment, and report the written files.
pub fn run<I, S>(argv: I) -> Result<OutputBundle>
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e)
            if matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            ) =>
        {
            print!("{e}");
            return Ok(OutputBundle {
                out_dir: PathBuf::new(),
                files: Vec::new(),
            });
        }
        Err(e) => return Err(Error::Config(e.to_string())),
    };
    let app = resolve_config(cli)?;
    let bundle = match app.experiment {
        ExperimentArg::Spectrum => run_spectrum_command(&app)?,
        ExperimentArg::Coalescence => run_coalescence_command(&app)?,
        ExperimentArg::Brownian => run_brownian_command(&app)?,
    };
    for f in &bundle.files {
        println!("wrote {}", f.display());
    }
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(extra: &[&str]) -> Vec<String> {
        let mut v = vec!["geoforest".to_string()];
        v.extend(extra.iter().map(|s| s.to_string()));
        v
    }

    #[test]
    fn parses_documented_example() {
        let app = parse_config(args(&[
            "--sites",
            "1000000",
            "--samples",
            "1000",
            "--mode",
            "boundary",
            "--replicates",
            "20",
            "--seed",
            "42",
        ]))
        .unwrap();
        assert_eq!(app.sites, 1_000_000);
        assert_eq!(app.samples, vec![1000]);
        assert_eq!(app.mode, SamplingMode::Boundary);
        assert_eq!(app.replicates, 20);
        assert_eq!(app.seed, 42);
        // Documented defaults elsewhere.
        assert_eq!(app.kmax, 10);
        assert_eq!(app.metric, LengthMetric::SiteCount);
        assert_eq!(app.experiment, ExperimentArg::Spectrum);
    }

    #[test]
    fn rejects_unknown_mode_naming_the_flag() {
        let err = parse_config(args(&["--mode", "nonsense"])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("--mode"), "message was: {msg}");
    }

    #[test]
    fn rejects_unknown_flags() {
        let err = parse_config(args(&["--frobnicate", "1"])).unwrap_err();
        assert!(err.to_string().contains("--frobnicate"));
    }

    #[test]
    fn samples_accept_comma_lists() {
        let app = parse_config(args(&["--samples", "100,300,1000"])).unwrap();
        assert_eq!(app.samples, vec![100, 300, 1000]);
    }

    #[test]
    fn flag_overrides_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, r#"{"replicates": 100, "sites": 2000}"#).unwrap();
        let app = parse_config(args(&[
            "--config",
            path.to_str().unwrap(),
            "--replicates",
            "5",
        ]))
        .unwrap();
        assert_eq!(app.replicates, 5, "flag wins");
        assert_eq!(app.sites, 2000, "file fills the rest");
    }

    #[test]
    fn config_file_rejects_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, r#"{"replicas": 3}"#).unwrap();
        assert!(parse_config(args(&["--config", path.to_str().unwrap()])).is_err());
    }

    #[test]
    fn poisson_mode_requires_rate() {
        assert!(parse_config(args(&["--mode", "poisson"])).is_err());
        let app = parse_config(args(&["--mode", "poisson", "--rate", "0.01"])).unwrap();
        assert_eq!(app.mode, SamplingMode::Poisson { rate: 0.01 });
    }

    #[test]
    fn offline_scale_gate() {
        assert!(parse_config(args(&["--sites", "20000000"])).is_err());
        let app = parse_config(args(&["--sites", "20000000", "--offline-scale"])).unwrap();
        assert!(app.offline_scale);
    }

    fn tiny_app(dir: &Path) -> AppConfig {
        AppConfig {
            experiment: ExperimentArg::Spectrum,
            seed: 11,
            sites: 4000,
            samples: vec![30],
            mode: SamplingMode::Bulk,
            replicates: 4,
            metric: LengthMetric::SiteCount,
            theta: None,
            law: WeightLaw::default(),
            kmax: 6,
            workers: 2,
            out_dir: dir.to_path_buf(),
            arms: 2,
            separation: 2,
            radius: 240,
            offline_scale: false,
        }
    }

    #[test]
    fn spectrum_bundle_schema_and_determinism() {
        let dir = tempfile::tempdir().unwrap();
        let app = tiny_app(dir.path());
        let bundle = run_spectrum_command(&app).unwrap();
        assert!(bundle.files.iter().any(|f| f.ends_with("spectrum.csv")));
        let csv = std::fs::read_to_string(dir.path().join("spectrum.csv")).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 1 + app.kmax, "header plus kmax rows");
        assert_eq!(lines[0], "k,mean_L,stderr_L,norm_L,theory_bulk,theory_boundary");
        for line in &lines[1..] {
            assert_eq!(line.split(',').count(), 6);
        }
        // norm_L column sums to 1.
        let norm_total: f64 = lines[1..]
            .iter()
            .map(|l| l.split(',').nth(3).unwrap().parse::<f64>().unwrap())
            .sum();
        assert!((norm_total - 1.0).abs() < 1e-9);
        // Identical config, byte-identical csv.
        let dir2 = tempfile::tempdir().unwrap();
        let mut app2 = tiny_app(dir2.path());
        app2.workers = 1;
        run_spectrum_command(&app2).unwrap();
        let csv2 = std::fs::read_to_string(dir2.path().join("spectrum.csv")).unwrap();
        assert_eq!(csv, csv2);
        // No leftover temp files.
        for entry in std::fs::read_dir(dir.path()).unwrap() {
            let name = entry.unwrap().file_name();
            assert!(!name.to_string_lossy().ends_with(".tmp"));
        }
    }

    #[test]
    fn report_json_round_trips_config() {
        let dir = tempfile::tempdir().unwrap();
        let app = tiny_app(dir.path());
        run_spectrum_command(&app).unwrap();
        let text = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        let parsed: ExperimentConfig =
            serde_json::from_value(value["reports"][0]["config"].clone()).unwrap();
        assert_eq!(parsed, experiment_config(&app, 30));
    }

    #[test]
    fn golden_spectrum_csv_row() {
        // Pins the schema and one seeded row set; any change to hashing,
        // growth order, sampling, or float formatting shows up here.
        let dir = tempfile::tempdir().unwrap();
        let mut app = tiny_app(dir.path());
        app.seed = 7;
        app.sites = 1500;
        app.samples = vec![12];
        app.replicates = 2;
        app.kmax = 4;
        run_spectrum_command(&app).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("spectrum.csv")).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "k,mean_L,stderr_L,norm_L,theory_bulk,theory_boundary");
        assert_eq!(lines.len(), 5);
        // Golden first data row, frozen from a reference run.
        assert_eq!(lines[1], GOLDEN_ROW_1);
    }

    // Frozen by the reference run; see golden_spectrum_csv_row.
    const GOLDEN_ROW_1: &str =
        "1,105.5,13.5,0.6698412698412698,0.6393861892583118,0.34224598930481265";

    #[test]
    fn survival_bundle_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut app = tiny_app(dir.path());
        app.experiment = ExperimentArg::Coalescence;
        app.replicates = 25;
        let bundle = run_coalescence_command(&app).unwrap();
        assert!(bundle.files.iter().any(|f| f.ends_with("survival.csv")));
        let csv = std::fs::read_to_string(dir.path().join("survival.csv")).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "depth,survival,arms,separation");
        for line in lines {
            assert_eq!(line.split(',').count(), 4);
        }
        let report = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
        let value: serde_json::Value = serde_json::from_str(&report).unwrap();
        assert_eq!(value["experiment"], "coalescence");
        let parsed: CoalescenceConfig = serde_json::from_value(value["config"].clone()).unwrap();
        assert_eq!(parsed.replicates, 25);
    }

    #[test]
    fn spectrum_svg_has_axes_and_series() {
        let dir = tempfile::tempdir().unwrap();
        let app = tiny_app(dir.path());
        run_spectrum_command(&app).unwrap();
        let svg = std::fs::read_to_string(dir.path().join("spectrum.svg")).unwrap();
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("polyline"));
        assert!(svg.contains("circle"));
        assert!(!svg.contains("timestamp"));
    }

    #[test]
    fn multiple_sample_sizes_emit_slope_svg() {
        let dir = tempfile::tempdir().unwrap();
        let mut app = tiny_app(dir.path());
        app.samples = vec![20, 40];
        app.replicates = 3;
        let bundle = run_spectrum_command(&app).unwrap();
        assert!(bundle.files.iter().any(|f| f.ends_with("slope.svg")));
        let svg = std::fs::read_to_string(dir.path().join("slope.svg")).unwrap();
        assert!(svg.contains("1.4 (bulk)"));
        assert!(svg.contains("0.5 (boundary)"));
    }
}
