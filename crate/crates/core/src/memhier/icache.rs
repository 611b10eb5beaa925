//! Instruction-cache capacity behavior: which level serves a straight-line
//! sequence of a given footprint, CPI-vs-size sweeps, plateau detection, and
//! two-warp aggressor-victim interaction across cache ownership scopes.

use std::collections::HashMap;

use serde::Serialize;

use crate::profile::{CacheScope, GpuArchProfile, KIB};

use super::cache::LruCache;
use super::MemHierError;

/// Smallest instruction-cache level whose capacity holds `sequence_bytes`,
/// with the profile's per-level fetch CPI; sequences too big for every level
/// run from device memory.
pub fn icache_cpi(sequence_bytes: u64, profile: &GpuArchProfile) -> (String, f64) {
    for (i, level) in profile.icache_levels.iter().enumerate() {
        if sequence_bytes <= level.size {
            return (level.level_name.clone(), profile.icache_fetch_cpi[i]);
        }
    }
    ("memory".to_string(), *profile.icache_fetch_cpi.last().unwrap())
}

/// CPI-vs-size curve over the standard sweep grid: 1 KiB steps up to 64 KiB,
/// 64 KiB steps beyond, reaching past the last cache level.
pub fn icache_sweep(profile: &GpuArchProfile, max_bytes: Option<u64>) -> Vec<(u64, f64)> {
    let last = profile.icache_levels.last().map(|c| c.size).unwrap_or(4096 * KIB);
    let max = max_bytes.unwrap_or(last + last / 4);
    let mut sizes = Vec::new();
    let mut s = KIB;
    while s <= 64 * KIB && s <= max {
        sizes.push(s);
        s += KIB;
    }
    let mut s = 128 * KIB;
    while s <= max {
        sizes.push(s);
        s += 64 * KIB;
    }
    sizes.into_iter().map(|size| (size, icache_cpi(size, profile).1)).collect()
}

/// Sizes at which the CPI steps up by more than `threshold` (relative), i.e.
/// the capacity of each level the curve crossed. Reported as the last size
/// of the lower plateau.
pub fn detect_plateaus_with_threshold(
    curve: &[(u64, f64)],
    threshold: f64,
) -> Result<Vec<u64>, MemHierError> {
    if curve.len() < 3 {
        return Err(MemHierError::DegenerateCurve(curve.len()));
    }
    let mut boundaries = Vec::new();
    for pair in curve.windows(2) {
        let (size_lo, cpi_lo) = pair[0];
        let (_, cpi_hi) = pair[1];
        if cpi_lo > 0.0 && (cpi_hi - cpi_lo) / cpi_lo > threshold {
            boundaries.push(size_lo);
        }
    }
    Ok(boundaries)
}

pub fn detect_plateaus(curve: &[(u64, f64)]) -> Result<Vec<u64>, MemHierError> {
    detect_plateaus_with_threshold(curve, 0.25)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum AvPlacement {
    SameSmDifferentBlock,
    DifferentSm,
}

impl std::str::FromStr for AvPlacement {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "same-sm" | "same-sm-different-block" => Ok(AvPlacement::SameSmDifferentBlock),
            "diff-sm" | "different-sm" => Ok(AvPlacement::DifferentSm),
            other => Err(format!("unknown placement `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AvSpec {
    pub aggressor_bytes: u64,
    pub victim_bytes: u64,
    pub placement: AvPlacement,
}

/// Instruction-cache hierarchy with per-scope instances and inclusive
/// back-invalidation: an eviction at an outer level drops the line from
/// every inner instance.
struct IcacheHierarchy<'p> {
    profile: &'p GpuArchProfile,
    /// One instance per (level, sm, block); chip-scope levels use (0, 0).
    levels: Vec<HashMap<(u32, u32), LruCache>>,
}

impl<'p> IcacheHierarchy<'p> {
    fn new(profile: &'p GpuArchProfile) -> Self {
        IcacheHierarchy {
            profile,
            levels: profile.icache_levels.iter().map(|_| HashMap::new()).collect(),
        }
    }

    fn instance_key(scope: CacheScope, sm: u32, block: u32) -> (u32, u32) {
        match scope {
            CacheScope::ProcessingBlock => (sm, block),
            CacheScope::Sm => (sm, 0),
            CacheScope::Chip => (0, 0),
        }
    }

    /// Fetches one line and returns the index of the level that served it
    /// (`levels.len()` = memory). Fills every level on the way back and
    /// back-invalidates on outer-level evictions.
    fn fetch(&mut self, sm: u32, block: u32, addr: u64) -> usize {
        let n = self.levels.len();
        let mut served = n;
        for (i, geom) in self.profile.icache_levels.iter().enumerate() {
            let key = Self::instance_key(geom.scope, sm, block);
            let cache = self.levels[i]
                .entry(key)
                .or_insert_with(|| LruCache::new(geom.size, geom.line));
            if cache.lookup(addr) {
                served = i;
                break;
            }
        }
        // Fill the missing inner levels; evictions at level i invalidate the
        // line from every instance of the levels inside it.
        for i in (0..served.min(n)).rev() {
            let geom = &self.profile.icache_levels[i];
            let key = Self::instance_key(geom.scope, sm, block);
            let cache = self.levels[i]
                .entry(key)
                .or_insert_with(|| LruCache::new(geom.size, geom.line));
            if let Some(victim) = cache.fill(addr) {
                for inner in 0..i {
                    for instance in self.levels[inner].values_mut() {
                        instance.invalidate(victim);
                    }
                }
            }
        }
        served
    }

    fn fetch_cpi(&mut self, sm: u32, block: u32, addr: u64) -> f64 {
        let level = self.fetch(sm, block, addr);
        self.profile.icache_fetch_cpi[level]
    }
}

/// Runs the two-warp ownership probe. The aggressor streams a thrashing
/// sequence followed by the shared probing sequence; the victim loops the
/// probing sequence concurrently (the two fetch streams interleave 1:1).
/// Returns (aggressor CPI, victim CPI) from a measured pass after an
/// identical warm-up pass.
pub fn run_aggressor_victim(spec: &AvSpec, profile: &GpuArchProfile) -> (f64, f64) {
    let line = profile.icache_levels.first().map(|c| c.line).unwrap_or(64);
    let probe: Vec<u64> = (0..spec.victim_bytes / line).map(|i| i * line).collect();
    const THRASH_BASE: u64 = 1 << 26;
    let aggressor_stream: Vec<u64> = (0..spec.aggressor_bytes / line)
        .map(|i| THRASH_BASE + i * line)
        .chain(probe.iter().copied())
        .collect();

    let (victim_loc, aggressor_loc) = match spec.placement {
        AvPlacement::SameSmDifferentBlock => ((0u32, 0u32), (0u32, 1u32)),
        AvPlacement::DifferentSm => ((0, 0), (1, 0)),
    };

    let mut hier = IcacheHierarchy::new(profile);
    let steps = aggressor_stream.len().max(probe.len());
    let run = |hier: &mut IcacheHierarchy| -> (f64, f64) {
        let mut aggressor_cost = 0.0;
        let mut victim_cost = 0.0;
        let mut victim_fetches = 0usize;
        for k in 0..steps {
            if let Some(addr) = aggressor_stream.get(k) {
                aggressor_cost += hier.fetch_cpi(aggressor_loc.0, aggressor_loc.1, *addr);
            }
            if !probe.is_empty() {
                victim_cost += hier.fetch_cpi(victim_loc.0, victim_loc.1, probe[k % probe.len()]);
                victim_fetches += 1;
            }
        }
        let a = if aggressor_stream.is_empty() {
            0.0
        } else {
            aggressor_cost / aggressor_stream.len() as f64
        };
        let v = if victim_fetches == 0 { 0.0 } else { victim_cost / victim_fetches as f64 };
        (a, v)
    };
    run(&mut hier);
    run(&mut hier)
}
