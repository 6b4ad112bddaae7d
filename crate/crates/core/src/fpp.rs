//! First-passage percolation cluster growth on `Z^2`.
//!
//! `grow_cluster` runs Dijkstra from the origin over lazily hashed edge
//! weights and halts once `target_size` sites are finalized. Finalized
//! passage times are exact shortest-path distances for the realized weight
//! field (all weights are positive, so the usual Dijkstra argument applies on
//! the infinite lattice), and each site records the predecessor on its
//! left-most shortest path under the `(time, x, y)` tie-break.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::weights::{edge_weight, EdgeId, WeightLaw};

/// A lattice site. All of `Z^2` is valid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Site {
    pub x: i32,
    pub y: i32,
}

pub const ORIGIN: Site = Site { x: 0, y: 0 };

/// Neighbor offsets in the fixed relaxation order. Entries `2d` and `2d+1`
/// are opposite directions (`d ^ 1` flips a step).
const DIRS: [(i32, i32); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];
const NO_PARENT: u8 = 255;

impl Site {
    #[inline]
    pub fn offset(self, dx: i32, dy: i32) -> Site {
        Site {
            x: self.x + dx,
            y: self.y + dy,
        }
    }

    /// The four lattice neighbors, in the fixed direction order.
    #[inline]
    pub fn neighbors(self) -> [Site; 4] {
        [
            self.offset(1, 0),
            self.offset(-1, 0),
            self.offset(0, 1),
            self.offset(0, -1),
        ]
    }

    #[inline]
    pub fn manhattan_norm(self) -> u64 {
        self.x.unsigned_abs() as u64 + self.y.unsigned_abs() as u64
    }

    #[inline]
    fn packed(self) -> u64 {
        ((self.x as u32 as u64) << 32) | (self.y as u32 as u64)
    }
}

// ---------------------------------------------------------------------------
// Site index backends
// ---------------------------------------------------------------------------

/// Open-addressing map from packed `(x, y)` to a dense cluster index.
///
/// The cluster shape is random, so a preallocated square grid wastes memory
/// at the ball's aspect ratio; linear probing over a power-of-two table keeps
/// the growth loop allocation-free and deterministic.
#[derive(Debug, Clone)]
pub(crate) struct SiteMap {
    keys: Vec<u64>,
    vals: Vec<u32>,
    mask: u64,
    len: usize,
}

const EMPTY: u32 = u32::MAX;

impl SiteMap {
    pub(crate) fn with_capacity(n: usize) -> SiteMap {
        let cap = ((n as u64 * 10 / 7).max(16)).next_power_of_two() as usize;
        SiteMap {
            keys: vec![0; cap],
            vals: vec![EMPTY; cap],
            mask: cap as u64 - 1,
            len: 0,
        }
    }

    #[inline]
    pub(crate) fn get(&self, site: Site) -> Option<u32> {
        let key = site.packed();
        let mut i = (crate::rng::mix64(key) & self.mask) as usize;
        loop {
            if self.vals[i] == EMPTY {
                return None;
            }
            if self.keys[i] == key {
                return Some(self.vals[i]);
            }
            i = ((i as u64 + 1) & self.mask) as usize;
        }
    }

    #[inline]
    pub(crate) fn contains(&self, site: Site) -> bool {
        self.get(site).is_some()
    }

    pub(crate) fn insert(&mut self, site: Site, val: u32) {
        debug_assert!(val != EMPTY);
        if (self.len + 1) * 10 > self.keys.len() * 7 {
            self.grow();
        }
        let key = site.packed();
        let mut i = (crate::rng::mix64(key) & self.mask) as usize;
        loop {
            if self.vals[i] == EMPTY {
                self.keys[i] = key;
                self.vals[i] = val;
                self.len += 1;
                return;
            }
            if self.keys[i] == key {
                self.vals[i] = val;
                return;
            }
            i = ((i as u64 + 1) & self.mask) as usize;
        }
    }

    fn grow(&mut self) {
        let new_cap = self.keys.len() * 2;
        let mut bigger = SiteMap {
            keys: vec![0; new_cap],
            vals: vec![EMPTY; new_cap],
            mask: new_cap as u64 - 1,
            len: 0,
        };
        for i in 0..self.keys.len() {
            if self.vals[i] != EMPTY {
                let mut j = (crate::rng::mix64(self.keys[i]) & bigger.mask) as usize;
                while bigger.vals[j] != EMPTY {
                    j = ((j as u64 + 1) & bigger.mask) as usize;
                }
                bigger.keys[j] = self.keys[i];
                bigger.vals[j] = self.vals[i];
                bigger.len += 1;
            }
        }
        *self = bigger;
    }
}

/// Storage backend for the site -> index lookup during growth.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SiteIndexBackend {
    /// Default: open-addressing hash map, unbounded domain.
    OpenAddressing,
    /// Dense `(2h+1)^2` grid covering `|x|, |y| <= h`. Exists for benchmark
    /// comparison; growth fails if the cluster would leave the grid.
    Dense { half_extent: i32 },
}

#[derive(Debug)]
enum SiteIndex {
    Open(SiteMap),
    Dense {
        grid: Vec<u32>,
        half_extent: i32,
    },
}

impl SiteIndex {
    fn new(backend: SiteIndexBackend, n: usize) -> Result<SiteIndex> {
        match backend {
            SiteIndexBackend::OpenAddressing => Ok(SiteIndex::Open(SiteMap::with_capacity(n))),
            SiteIndexBackend::Dense { half_extent } => {
                if half_extent <= 0 || half_extent > 20_000 {
                    return Err(Error::InvalidParameter(format!(
                        "dense half extent must be in 1..=20000, got {half_extent}"
                    )));
                }
                let side = 2 * half_extent as usize + 1;
                Ok(SiteIndex::Dense {
                    grid: vec![EMPTY; side * side],
                    half_extent,
                })
            }
        }
    }

    #[inline]
    fn in_domain(&self, site: Site) -> bool {
        match self {
            SiteIndex::Open(_) => true,
            SiteIndex::Dense { half_extent, .. } => {
                site.x.abs() <= *half_extent && site.y.abs() <= *half_extent
            }
        }
    }

    #[inline]
    fn dense_slot(site: Site, h: i32) -> usize {
        let side = 2 * h as usize + 1;
        (site.y + h) as usize * side + (site.x + h) as usize
    }

    #[inline]
    fn get(&self, site: Site) -> Option<u32> {
        match self {
            SiteIndex::Open(m) => m.get(site),
            SiteIndex::Dense { grid, half_extent } => {
                if !self.in_domain(site) {
                    return None;
                }
                let v = grid[Self::dense_slot(site, *half_extent)];
                (v != EMPTY).then_some(v)
            }
        }
    }

    #[inline]
    fn insert(&mut self, site: Site, val: u32) {
        match self {
            SiteIndex::Open(m) => m.insert(site, val),
            SiteIndex::Dense { grid, half_extent } => {
                let slot = Self::dense_slot(site, *half_extent);
                grid[slot] = val;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Growth
// ---------------------------------------------------------------------------

/// Parameters of one cluster growth run.
#[derive(Debug, Clone, PartialEq)]
pub struct GrowthConfig {
    pub seed: u64,
    pub target_size: usize,
    pub law: WeightLaw,
}

/// Largest cluster the u32 site index can address.
pub const MAX_SITES: u64 = 1 << 31;

impl GrowthConfig {
    pub fn new(seed: u64, target_size: usize, law: WeightLaw) -> GrowthConfig {
        GrowthConfig {
            seed,
            target_size,
            law,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.target_size == 0 {
            return Err(Error::InvalidParameter(
                "target size must be at least 1".into(),
            ));
        }
        if self.target_size as u64 > MAX_SITES {
            return Err(Error::CapacityExceeded {
                requested: self.target_size as u64,
                budget: MAX_SITES,
            });
        }
        self.law.validate()
    }
}

/// Frontier entry; ordered by `(time, x, y, parent_dir)` so that pops are the
/// lexicographic tie-break the left-most geodesic convention requires.
#[derive(Debug, Clone, Copy)]
struct Frontier {
    time: f64,
    site: Site,
    parent_dir: u8,
}

impl PartialEq for Frontier {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == std::cmp::Ordering::Equal
    }
}
impl Eq for Frontier {}
impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.site.x.cmp(&other.site.x))
            .then(self.site.y.cmp(&other.site.y))
            .then(self.parent_dir.cmp(&other.parent_dir))
    }
}

/// The grown cluster: occupation times and geodesic parent pointers, in
/// finalization order. Immutable after growth; share it read-only.
#[derive(Debug)]
pub struct ClusterState {
    sites: Vec<Site>,
    times: Vec<f64>,
    parent_dirs: Vec<u8>,
    index: SiteMap,
    seed: u64,
    law: WeightLaw,
}

pub fn grow_cluster(config: &GrowthConfig) -> Result<ClusterState> {
    grow_impl(config, SiteIndexBackend::OpenAddressing, None)
}

pub fn grow_cluster_with(
    config: &GrowthConfig,
    backend: SiteIndexBackend,
) -> Result<ClusterState> {
    grow_impl(config, backend, None)
}

/// Grow until every site in `required` is finalized, with `target_size`
/// acting as a capacity cap. Finalized times and parents are identical to a
/// full `target_size` growth (Dijkstra never revises a finalized site), so
/// geodesics traced from the required sites match the larger cluster's
/// bit for bit. Fails with [`Error::InsufficientRadius`] if the cap is
/// reached first.
pub fn grow_cluster_until(config: &GrowthConfig, required: &[Site]) -> Result<ClusterState> {
    grow_impl(config, SiteIndexBackend::OpenAddressing, Some(required))
}

fn grow_impl(
    config: &GrowthConfig,
    backend: SiteIndexBackend,
    required: Option<&[Site]>,
) -> Result<ClusterState> {
    config.validate()?;
    let n = config.target_size;
    let mut index = SiteIndex::new(backend, n)?;
    let mut sites: Vec<Site> = Vec::with_capacity(n.min(1 << 24));
    let mut times: Vec<f64> = Vec::with_capacity(n.min(1 << 24));
    let mut parent_dirs: Vec<u8> = Vec::with_capacity(n.min(1 << 24));
    let mut heap: BinaryHeap<Reverse<Frontier>> = BinaryHeap::new();
    let mut missing = required.map(|r| r.len());
    heap.push(Reverse(Frontier {
        time: 0.0,
        site: ORIGIN,
        parent_dir: NO_PARENT,
    }));

    while sites.len() < n {
        let Some(Reverse(entry)) = heap.pop() else {
            return Err(Error::CapacityExceeded {
                requested: n as u64,
                budget: sites.len() as u64,
            });
        };
        if index.get(entry.site).is_some() {
            // Stale frontier entry (lazy deletion).
            continue;
        }
        index.insert(entry.site, sites.len() as u32);
        sites.push(entry.site);
        times.push(entry.time);
        parent_dirs.push(entry.parent_dir);
        if let (Some(m), Some(req)) = (missing.as_mut(), required) {
            if req.contains(&entry.site) {
                *m = m.saturating_sub(req.iter().filter(|s| **s == entry.site).count());
                if *m == 0 {
                    break;
                }
            }
        }
        if sites.len() == n {
            break;
        }
        for (dir, &(dx, dy)) in DIRS.iter().enumerate() {
            let nb = entry.site.offset(dx, dy);
            if !index.in_domain(nb) || index.get(nb).is_some() {
                continue;
            }
            let edge = EdgeId::between(entry.site, nb).expect("neighbors are adjacent");
            let w = edge_weight(config.seed, edge, &config.law);
            heap.push(Reverse(Frontier {
                time: entry.time + w,
                site: nb,
                parent_dir: dir as u8 ^ 1,
            }));
        }
    }
    if let (Some(m), Some(req)) = (missing, required) {
        if m > 0 {
            let absent = req
                .iter()
                .find(|s| index.get(**s).is_none())
                .expect("some required site is missing");
            return Err(Error::InsufficientRadius(absent.x, absent.y));
        }
    }
    // Frontier contents beyond the N-th pop are tentative, not distances;
    // they are dropped here and never exposed.
    let index = match index {
        SiteIndex::Open(m) => m,
        SiteIndex::Dense { .. } => {
            let mut m = SiteMap::with_capacity(sites.len());
            for (i, &s) in sites.iter().enumerate() {
                m.insert(s, i as u32);
            }
            m
        }
    };
    Ok(ClusterState {
        sites,
        times,
        parent_dirs,
        index,
        seed: config.seed,
        law: config.law,
    })
}

impl ClusterState {
    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn law(&self) -> &WeightLaw {
        &self.law
    }

    /// Occupied sites in finalization order.
    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    /// Passage times in finalization order (non-decreasing).
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn index_of(&self, site: Site) -> Option<usize> {
        self.index.get(site).map(|i| i as usize)
    }

    pub fn is_occupied(&self, site: Site) -> bool {
        self.index.contains(site)
    }

    /// Passage time `d(0, site)`, if the site is occupied.
    pub fn time_of(&self, site: Site) -> Option<f64> {
        self.index_of(site).map(|i| self.times[i])
    }

    /// The predecessor on the left-most geodesic, `None` for the origin.
    pub fn parent_of(&self, site: Site) -> Result<Option<Site>> {
        let idx = self
            .index_of(site)
            .ok_or(Error::UnknownSite(site.x, site.y))?;
        Ok(self.parent_at(idx))
    }

    fn parent_at(&self, idx: usize) -> Option<Site> {
        let dir = self.parent_dirs[idx];
        if dir == NO_PARENT {
            return None;
        }
        let (dx, dy) = DIRS[dir as usize];
        Some(self.sites[idx].offset(dx, dy))
    }

    /// Occupied sites with at least one vacant lattice neighbor, in
    /// lexicographic `(x, y)` order. (An alternative boundary notion, the
    /// sites occupied within the last time window, is not implemented.)
    pub fn boundary_sites(&self) -> Vec<Site> {
        let mut out: Vec<Site> = self
            .sites
            .iter()
            .copied()
            .filter(|s| s.neighbors().iter().any(|nb| !self.index.contains(*nb)))
            .collect();
        out.sort_unstable();
        out
    }

    /// The parent-pointer path `[site, ..., origin]`. Times are strictly
    /// decreasing along the list and consecutive entries are adjacent.
    pub fn trace_geodesic(&self, site: Site) -> Result<Vec<Site>> {
        let mut idx = self
            .index_of(site)
            .ok_or(Error::UnknownSite(site.x, site.y))?;
        let mut path = Vec::new();
        loop {
            path.push(self.sites[idx]);
            match self.parent_at(idx) {
                None => break,
                Some(parent) => {
                    idx = self
                        .index_of(parent)
                        .expect("parent of an occupied site is occupied");
                }
            }
        }
        Ok(path)
    }

    // -- snapshot ----------------------------------------------------------

    /// Versioned binary snapshot for reproducible reanalysis.
    pub fn save_snapshot<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(b"FPPC")?;
        w.write_all(&1u16.to_le_bytes())?;
        w.write_all(&(self.sites.len() as u64).to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        let (tag, p0, p1) = match self.law {
            WeightLaw::Exponential { rate } => (0u8, rate, 0.0),
            WeightLaw::Uniform { lo, hi } => (1u8, lo, hi),
        };
        w.write_all(&[tag])?;
        w.write_all(&p0.to_le_bytes())?;
        w.write_all(&p1.to_le_bytes())?;
        for i in 0..self.sites.len() {
            w.write_all(&self.sites[i].x.to_le_bytes())?;
            w.write_all(&self.sites[i].y.to_le_bytes())?;
            w.write_all(&self.times[i].to_le_bytes())?;
            w.write_all(&[self.parent_dirs[i]])?;
        }
        Ok(())
    }

    pub fn load_snapshot<R: Read>(mut r: R) -> Result<ClusterState> {
        fn bad(msg: &str) -> Error {
            Error::SnapshotFormat(msg.into())
        }
        fn read_exact<R: Read, const K: usize>(r: &mut R) -> Result<[u8; K]> {
            let mut buf = [0u8; K];
            r.read_exact(&mut buf)
                .map_err(|e| Error::SnapshotFormat(format!("truncated snapshot: {e}")))?;
            Ok(buf)
        }
        let magic = read_exact::<_, 4>(&mut r)?;
        if &magic != b"FPPC" {
            return Err(bad("bad magic"));
        }
        let version = u16::from_le_bytes(read_exact::<_, 2>(&mut r)?);
        if version != 1 {
            return Err(Error::SnapshotFormat(format!(
                "unsupported version {version}"
            )));
        }
        let n = u64::from_le_bytes(read_exact::<_, 8>(&mut r)?);
        if n == 0 || n > MAX_SITES {
            return Err(bad("site count out of range"));
        }
        let seed = u64::from_le_bytes(read_exact::<_, 8>(&mut r)?);
        let tag = read_exact::<_, 1>(&mut r)?[0];
        let p0 = f64::from_le_bytes(read_exact::<_, 8>(&mut r)?);
        let p1 = f64::from_le_bytes(read_exact::<_, 8>(&mut r)?);
        let law = match tag {
            0 => WeightLaw::Exponential { rate: p0 },
            1 => WeightLaw::Uniform { lo: p0, hi: p1 },
            _ => return Err(bad("unknown law tag")),
        };
        law.validate()?;
        let n = n as usize;
        let mut records = Vec::with_capacity(n);
        for _ in 0..n {
            let x = i32::from_le_bytes(read_exact::<_, 4>(&mut r)?);
            let y = i32::from_le_bytes(read_exact::<_, 4>(&mut r)?);
            let time = f64::from_le_bytes(read_exact::<_, 8>(&mut r)?);
            let dir = read_exact::<_, 1>(&mut r)?[0];
            records.push((Site { x, y }, time, dir));
        }
        ClusterState::from_records(seed, law, records)
    }

    /// Rebuild a cluster from finalization-ordered records, validating the
    /// tree invariants.
    pub(crate) fn from_records(
        seed: u64,
        law: WeightLaw,
        records: Vec<(Site, f64, u8)>,
    ) -> Result<ClusterState> {
        fn bad(msg: String) -> Error {
            Error::SnapshotFormat(msg)
        }
        let mut index = SiteMap::with_capacity(records.len());
        let mut sites = Vec::with_capacity(records.len());
        let mut times = Vec::with_capacity(records.len());
        let mut parent_dirs = Vec::with_capacity(records.len());
        for (i, &(site, time, dir)) in records.iter().enumerate() {
            if index.contains(site) {
                return Err(bad(format!("duplicate site ({}, {})", site.x, site.y)));
            }
            if !(time.is_finite() && time >= 0.0) {
                return Err(bad(format!("invalid time {time}")));
            }
            if i == 0 {
                if site != ORIGIN || time != 0.0 || dir != NO_PARENT {
                    return Err(bad("first record must be the origin at time 0".into()));
                }
            } else {
                if dir as usize >= DIRS.len() {
                    return Err(bad(format!("invalid parent direction {dir}")));
                }
                let (dx, dy) = DIRS[dir as usize];
                let parent = site.offset(dx, dy);
                let Some(pidx) = index.get(parent) else {
                    return Err(bad(format!(
                        "parent of ({}, {}) not finalized earlier",
                        site.x, site.y
                    )));
                };
                if times[pidx as usize] >= time {
                    return Err(bad(format!(
                        "parent time {} not smaller than {} at ({}, {})",
                        times[pidx as usize], time, site.x, site.y
                    )));
                }
            }
            index.insert(site, i as u32);
            sites.push(site);
            times.push(time);
            parent_dirs.push(dir);
        }
        Ok(ClusterState {
            sites,
            times,
            parent_dirs,
            index,
            seed,
            law,
        })
    }
}
