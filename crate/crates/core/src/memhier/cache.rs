//! Set-associative cache state used by the data-path simulation.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::profile::{CacheGeometry, Replacement};

const GROUP_BYTES: u64 = 128;

/// An eviction performed as one 128 B-aligned group of 4 consecutive lines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct EvictionEvent {
    /// 128 B-aligned base address of the evicted group.
    pub base: u64,
    pub bytes: u64,
    /// Lines of the group actually resident (and dropped) at eviction time.
    pub lines_dropped: u32,
}

#[derive(Debug, Clone, Copy)]
struct LineEntry {
    line_addr: u64,
    last_used: u64,
}

#[derive(Debug)]
pub struct SetAssocCache {
    line: u64,
    sets: u64,
    ways: usize,
    replacement: Replacement,
    data: Vec<Vec<LineEntry>>,
    tick: u64,
}

impl SetAssocCache {
    /// Builds from geometry; 4 ways are assumed where the organization is
    /// unspecified. `use_detected` shrinks capacity to the probe-detected
    /// size when one is recorded.
    pub fn from_geometry(geom: &CacheGeometry, use_detected: bool) -> Self {
        let size = if use_detected { geom.detected_size.unwrap_or(geom.size) } else { geom.size };
        let ways = geom.ways.unwrap_or(4) as u64;
        let sets = geom.sets.map(u64::from).unwrap_or_else(|| (size / (geom.line * ways)).max(1));
        // A detected size below nominal trims sets rather than ways.
        let sets = if use_detected && geom.detected_size.is_some() {
            (size / (geom.line * ways)).max(1)
        } else {
            sets
        };
        SetAssocCache {
            line: geom.line,
            sets,
            ways: ways as usize,
            replacement: geom.replacement,
            data: (0..sets).map(|_| Vec::new()).collect(),
            tick: 0,
        }
    }

    pub fn line_bytes(&self) -> u64 {
        self.line
    }

    fn line_addr(&self, addr: u64) -> u64 {
        addr / self.line * self.line
    }

    fn set_of(&self, line_addr: u64) -> usize {
        ((line_addr / self.line) % self.sets) as usize
    }

    pub fn contains(&self, addr: u64) -> bool {
        let la = self.line_addr(addr);
        self.data[self.set_of(la)].iter().any(|e| e.line_addr == la)
    }

    /// Hit test that refreshes recency.
    pub fn lookup(&mut self, addr: u64) -> bool {
        self.tick += 1;
        let la = self.line_addr(addr);
        let set = self.set_of(la);
        let tick = self.tick;
        if let Some(e) = self.data[set].iter_mut().find(|e| e.line_addr == la) {
            e.last_used = tick;
            true
        } else {
            false
        }
    }

    /// Inserts the line holding `addr`, evicting per the replacement policy.
    /// Any eviction performed as a 4-line group is reported.
    pub fn fill(&mut self, addr: u64, rng: &mut ChaCha8Rng) -> Option<EvictionEvent> {
        self.tick += 1;
        let la = self.line_addr(addr);
        let set = self.set_of(la);
        if self.data[set].iter().any(|e| e.line_addr == la) {
            return None;
        }
        let mut event = None;
        if self.data[set].len() >= self.ways {
            event = self.evict_from(set, rng);
        }
        let tick = self.tick;
        self.data[set].push(LineEntry { line_addr: la, last_used: tick });
        event
    }

    fn evict_from(&mut self, set: usize, rng: &mut ChaCha8Rng) -> Option<EvictionEvent> {
        match self.replacement {
            Replacement::Lru => {
                let victim = self
                    .data[set]
                    .iter()
                    .enumerate()
                    .min_by_key(|(_, e)| e.last_used)
                    .map(|(i, _)| i)?;
                self.data[set].swap_remove(victim);
                None
            }
            Replacement::NonLru => {
                let victim = rng.random_range(0..self.data[set].len());
                self.data[set].swap_remove(victim);
                None
            }
            Replacement::RandomGroup4 => {
                let victim = rng.random_range(0..self.data[set].len());
                let victim_addr = self.data[set][victim].line_addr;
                let base = victim_addr / GROUP_BYTES * GROUP_BYTES;
                let mut dropped = 0;
                for k in 0..(GROUP_BYTES / self.line) {
                    let la = base + k * self.line;
                    let s = self.set_of(la);
                    let before = self.data[s].len();
                    self.data[s].retain(|e| e.line_addr != la);
                    dropped += (before - self.data[s].len()) as u32;
                }
                Some(EvictionEvent { base, bytes: GROUP_BYTES, lines_dropped: dropped })
            }
        }
    }

    pub fn resident_lines(&self) -> usize {
        self.data.iter().map(|s| s.len()).sum()
    }
}

/// Fully-associative LRU cache at line granularity, used for instruction
/// caches where only capacity behavior matters.
#[derive(Debug)]
pub struct LruCache {
    line: u64,
    capacity_lines: usize,
    entries: std::collections::HashMap<u64, u64>,
    tick: u64,
}

impl LruCache {
    pub fn new(size: u64, line: u64) -> Self {
        LruCache {
            line,
            capacity_lines: (size / line).max(1) as usize,
            entries: std::collections::HashMap::new(),
            tick: 0,
        }
    }

    fn line_addr(&self, addr: u64) -> u64 {
        addr / self.line * self.line
    }

    pub fn lookup(&mut self, addr: u64) -> bool {
        self.tick += 1;
        let la = self.line_addr(addr);
        let tick = self.tick;
        match self.entries.get_mut(&la) {
            Some(t) => {
                *t = tick;
                true
            }
            None => false,
        }
    }

    /// Inserts a line and returns the evicted line address, if any.
    pub fn fill(&mut self, addr: u64) -> Option<u64> {
        self.tick += 1;
        let la = self.line_addr(addr);
        let tick = self.tick;
        if self.entries.insert(la, tick).is_some() {
            return None;
        }
        if self.entries.len() > self.capacity_lines {
            let victim = self.entries.iter().min_by_key(|(_, t)| **t).map(|(a, _)| *a)?;
            self.entries.remove(&victim);
            return Some(victim);
        }
        None
    }

    pub fn invalidate(&mut self, line_addr: u64) {
        self.entries.remove(&line_addr);
    }

    pub fn contains(&self, addr: u64) -> bool {
        self.entries.contains_key(&self.line_addr(addr))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::{CacheScope, Indexing};
    use rand::SeedableRng;

    fn geom(size: u64, line: u64, ways: u32, replacement: Replacement) -> CacheGeometry {
        CacheGeometry {
            level_name: "L1".into(),
            size,
            detected_size: None,
            line,
            sets: Some((size / (line * u64::from(ways))) as u32),
            ways: Some(ways),
            hit_latency: 10,
            scope: CacheScope::Sm,
            indexing: Indexing::Virtual,
            replacement,
            approximate: false,
        }
    }

    #[test]
    fn lru_keeps_hot_lines() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut c = SetAssocCache::from_geometry(&geom(256, 32, 2, Replacement::Lru), false);
        // One set holds 2 ways; lines 0, 128, 256 map to set 0 with 4 sets.
        assert!(!c.lookup(0));
        c.fill(0, &mut rng);
        assert!(c.lookup(0));
        c.fill(128, &mut rng);
        assert!(c.lookup(0)); // refresh 0
        c.fill(256, &mut rng); // evicts 128, the LRU
        assert!(c.contains(0));
        assert!(!c.contains(128));
    }

    #[test]
    fn group4_evictions_are_aligned_groups() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut c = SetAssocCache::from_geometry(&geom(1024, 32, 4, Replacement::RandomGroup4), false);
        let mut events = Vec::new();
        for i in 0..200u64 {
            if let Some(e) = c.fill(i * 32, &mut rng) {
                events.push(e);
            }
        }
        assert!(!events.is_empty());
        for e in events {
            assert_eq!(e.base % 128, 0);
            assert_eq!(e.bytes, 128);
        }
    }

    #[test]
    fn lru_cache_capacity_and_backinvalidation_hooks() {
        let mut c = LruCache::new(128, 64); // 2 lines
        assert_eq!(c.fill(0), None);
        assert_eq!(c.fill(64), None);
        assert_eq!(c.fill(128), Some(0)); // oldest
        assert!(c.contains(64) && c.contains(128));
        c.invalidate(64);
        assert!(!c.contains(64));
    }
}
