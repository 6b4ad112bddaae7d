//! Genealogical forests of sampled geodesics and their branch-length spectra.
//!
//! A sample of `n` occupied sites induces a forest: the union of their
//! geodesics back to the origin, where each forest node y carries the number
//! of sampled individuals whose geodesic passes through y. The spectrum
//! `L[k]` is the total branch length ancestral to exactly k samples, either
//! counting sites or summing passage-time holds, and the site frequency
//! spectrum `M[k]` is Poisson with mean `theta * L[k]` for k = 1..n-1.

use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fpp::{ClusterState, Site, SiteMap};
use crate::rng::RngStream;

/// How a sample was drawn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SampleMode {
    /// `n` distinct sites uniform without replacement from all occupied.
    Bulk { n: usize },
    /// `n` distinct sites uniform without replacement from the boundary.
    Boundary { n: usize },
    /// Bernoulli thinning: each occupied site kept with probability
    /// `min(rate, 1)`, the lattice analog of Poisson sampling at intensity
    /// `rate`. The realized sample size is random.
    PoissonBulk { rate: f64 },
}

/// The sampled individuals.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub sites: Vec<Site>,
    pub mode: SampleMode,
}

impl Sample {
    pub fn n(&self) -> usize {
        self.sites.len()
    }
}

/// Branch length accounting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LengthMetric {
    /// Number of ancestral sites; matches cluster-count simulations.
    SiteCount,
    /// Passage-time holds `time(site) - time(parent)`; the continuum-faithful
    /// length of the branch above each node.
    PassageTime,
}

/// One node of the genealogical forest.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForestNode {
    pub site: Site,
    /// Number of sampled individuals whose geodesic passes through this site.
    pub count: u32,
    /// Index of the parent node, `None` for the origin.
    pub parent: Option<u32>,
    /// `time(site) - time(parent)`, 0 for the origin.
    pub hold_time: f64,
}

/// Union of the sampled geodesics with per-site descendant counts.
#[derive(Debug)]
pub struct GenealogyForest {
    nodes: Vec<ForestNode>,
    index: SiteMap,
    n: usize,
}

/// Branch-length spectrum, optionally with the mutation SFS attached.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumReport {
    pub n: usize,
    pub metric: LengthMetric,
    /// `lengths[k - 1]` is the total branch length ancestral to exactly `k`
    /// of the `n` samples, for k = 1..=n.
    pub lengths: Vec<f64>,
    /// `mutations[k - 1]` counts mutations inherited by exactly `k` samples,
    /// for k = 1..=n-1. Present after `mutate_sfs`.
    pub mutations: Option<Vec<u64>>,
    pub theta: Option<f64>,
}

/// Draw a sample of occupied sites. Deterministic given the stream.
pub fn draw_sample(
    cluster: &ClusterState,
    mode: SampleMode,
    rng: &mut RngStream,
) -> Result<Sample> {
    let sites = match mode {
        SampleMode::Bulk { n } => sample_without_replacement(cluster.sites(), n, rng)?,
        SampleMode::Boundary { n } => {
            let boundary = cluster.boundary_sites();
            sample_without_replacement(&boundary, n, rng)?
        }
        SampleMode::PoissonBulk { rate } => {
            if !(rate > 0.0 && rate.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "poisson sampling rate must be positive, got {rate}"
                )));
            }
            if rate > 1.0 {
                log::warn!("poisson sampling rate {rate} > 1 clamps to inclusion probability 1");
            }
            let p = rate.min(1.0);
            cluster
                .sites()
                .iter()
                .copied()
                .filter(|_| rng.next_f64() < p)
                .collect()
        }
    };
    Ok(Sample { sites, mode })
}

/// Floyd's algorithm: `n` distinct elements, deterministic in stream order.
fn sample_without_replacement(pool: &[Site], n: usize, rng: &mut RngStream) -> Result<Vec<Site>> {
    if n > pool.len() {
        return Err(Error::SampleExceedsPopulation {
            requested: n,
            available: pool.len(),
        });
    }
    let mut chosen = SiteMap::with_capacity(n);
    let mut out = Vec::with_capacity(n);
    for j in pool.len() - n..pool.len() {
        let t = rng.next_below(j as u64 + 1) as usize;
        let pick = if chosen.contains(pool[t]) {
            pool[j]
        } else {
            pool[t]
        };
        chosen.insert(pick, out.len() as u32);
        out.push(pick);
    }
    Ok(out)
}

/// Build the forest of geodesics for a sample.
pub fn build_forest(cluster: &ClusterState, sample: &Sample) -> Result<GenealogyForest> {
    let mut nodes: Vec<ForestNode> = Vec::new();
    let mut index = SiteMap::with_capacity(sample.sites.len().max(16) * 8);
    for &start in &sample.sites {
        let path = cluster.trace_geodesic(start)?;
        let mut child: Option<u32> = None;
        for &site in &path {
            let node_idx = match index.get(site) {
                Some(i) => {
                    nodes[i as usize].count += 1;
                    i
                }
                None => {
                    let i = nodes.len() as u32;
                    let hold = match cluster.parent_of(site).expect("site on traced path") {
                        Some(p) => cluster.time_of(site).unwrap() - cluster.time_of(p).unwrap(),
                        None => 0.0,
                    };
                    nodes.push(ForestNode {
                        site,
                        count: 1,
                        parent: None,
                        hold_time: hold,
                    });
                    index.insert(site, i);
                    i
                }
            };
            if let Some(c) = child {
                nodes[c as usize].parent = Some(node_idx);
            }
            child = Some(node_idx);
        }
    }
    Ok(GenealogyForest {
        nodes,
        index,
        n: sample.sites.len(),
    })
}

impl GenealogyForest {
    /// Sample size n; equals `count` at the origin.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Nodes in first-visit order (deterministic for a given sample order).
    pub fn nodes(&self) -> &[ForestNode] {
        &self.nodes
    }

    pub fn node_of(&self, site: Site) -> Option<&ForestNode> {
        self.index.get(site).map(|i| &self.nodes[i as usize])
    }

    /// Total length under a metric, summed in node order.
    pub fn total_length(&self, metric: LengthMetric) -> f64 {
        self.nodes
            .iter()
            .map(|nd| match metric {
                LengthMetric::SiteCount => 1.0,
                LengthMetric::PassageTime => nd.hold_time,
            })
            .sum()
    }
}

/// The branch-length spectrum `L[k]`, k = 1..=n.
pub fn branch_spectrum(forest: &GenealogyForest, metric: LengthMetric) -> SpectrumReport {
    let n = forest.n();
    let mut lengths = vec![0.0f64; n];
    for nd in forest.nodes() {
        debug_assert!(nd.count >= 1 && nd.count as usize <= n);
        let contribution = match metric {
            LengthMetric::SiteCount => 1.0,
            LengthMetric::PassageTime => nd.hold_time,
        };
        lengths[nd.count as usize - 1] += contribution;
    }
    SpectrumReport {
        n,
        metric,
        lengths,
        mutations: None,
        theta: None,
    }
}

/// Attach the mutation site frequency spectrum: `M[k] ~ Poisson(theta L[k])`
/// independently across k = 1..n-1, deterministic given the stream.
pub fn mutate_sfs(
    forest: &GenealogyForest,
    theta: f64,
    metric: LengthMetric,
    rng: &mut RngStream,
) -> Result<SpectrumReport> {
    if !(theta >= 0.0 && theta.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "mutation rate theta must be nonnegative, got {theta}"
        )));
    }
    let mut report = branch_spectrum(forest, metric);
    let n = report.n;
    let mutations = (1..n)
        .map(|k| {
            let mean = theta * report.lengths[k - 1];
            poisson_draw(mean, rng)
        })
        .collect();
    report.mutations = Some(mutations);
    report.theta = Some(theta);
    Ok(report)
}

fn poisson_draw(mean: f64, rng: &mut RngStream) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    let dist = rand_distr::Poisson::new(mean).expect("positive finite mean");
    dist.sample(rng) as u64
}
