//! Memory-hierarchy simulation: data caches behind TLBs, instruction-cache
//! capacity sweeps, aggressor-victim ownership probes, constant-memory
//! serialization, and shared-memory contention and bandwidth bounds.

pub mod cache;
mod constmem;
mod icache;
mod shared;

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::EvictionEvent;
pub use constmem::{const_icache_interaction, const_latency, ConstLevel};
pub use icache::{
    detect_plateaus, icache_cpi, icache_sweep, run_aggressor_victim, AvPlacement, AvSpec,
};
pub use shared::{shared_bandwidth_bound, shared_latency};

use crate::profile::{GpuArchProfile, Indexing};
use cache::SetAssocCache;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MemHierError {
    #[error("address {addr:#x} is beyond the modeled {limit:#x} bytes of device memory")]
    AddressBeyondModeledMemory { addr: u64, limit: u64 },
    #[error("plateau detection needs at least 3 points, got {0}")]
    DegenerateCurve(usize),
    #[error("conflict degree {degree} outside 1..={banks}")]
    DegreeOutOfRange { degree: u32, banks: u32 },
    #[error("unknown constant cache level `{0}`")]
    LevelUnknown(String),
    #[error("distinct address count {0} outside 1..=32")]
    CountOutOfRange(u32),
    #[error("profile lacks a `{0}` latency class")]
    MissingLatencyClass(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AccessKind {
    DataLoad,
    InstructionFetch,
    ConstLoad,
    SharedLoad,
}

/// One access of a recorded or generated pattern.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Access {
    pub warp: u32,
    pub sm: u32,
    pub block: u32,
    pub addr: u64,
    pub kind: AccessKind,
}

impl Access {
    pub fn load(addr: u64) -> Self {
        Access { warp: 0, sm: 0, block: 0, addr, kind: AccessKind::DataLoad }
    }
}

pub type AccessTrace = Vec<Access>;

/// Latency class assigned to one access.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MemClass {
    L1Hit,
    L2Hit,
    L2MissTlbHit,
    TlbMiss,
    ConstL1,
    ConstL15,
    ConstL2,
    IcacheL0,
    IcacheL1,
    IcacheL2,
    IcacheMem,
}

impl MemClass {
    pub fn latency_class_name(self) -> Option<&'static str> {
        match self {
            MemClass::L1Hit => Some("l1-hit"),
            MemClass::L2Hit => Some("l2-hit"),
            MemClass::L2MissTlbHit => Some("l2-miss-tlb-hit"),
            MemClass::TlbMiss => Some("tlb-miss"),
            MemClass::ConstL1 => Some("const-l1"),
            MemClass::ConstL15 => Some("const-l15"),
            MemClass::ConstL2 => Some("const-l2"),
            _ => None,
        }
    }
}

impl std::fmt::Display for MemClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LatencyTraceEntry {
    pub index: usize,
    pub class: MemClass,
    pub cycles: u32,
}

/// Simple LRU TLB keyed by page number.
#[derive(Debug)]
struct TlbState {
    page: u64,
    entries: HashMap<u64, u64>,
    capacity: usize,
    tick: u64,
}

impl TlbState {
    fn new(page: u64, coverage: u64) -> Self {
        TlbState {
            page,
            entries: HashMap::new(),
            capacity: (coverage / page).max(1) as usize,
            tick: 0,
        }
    }

    fn lookup(&mut self, addr: u64) -> bool {
        self.tick += 1;
        let page = addr / self.page;
        let tick = self.tick;
        match self.entries.get_mut(&page) {
            Some(t) => {
                *t = tick;
                true
            }
            None => false,
        }
    }

    fn fill(&mut self, addr: u64) {
        self.tick += 1;
        let page = addr / self.page;
        let tick = self.tick;
        self.entries.insert(page, tick);
        if self.entries.len() > self.capacity {
            if let Some(victim) = self.entries.iter().min_by_key(|(_, t)| **t).map(|(p, _)| *p) {
                self.entries.remove(&victim);
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct MemSimOptions {
    pub l1_enabled: bool,
    /// Size the L1 by its probe-detected capacity instead of nominal.
    pub use_detected_l1: bool,
    pub seed: u64,
}

impl Default for MemSimOptions {
    fn default() -> Self {
        MemSimOptions { l1_enabled: true, use_detected_l1: false, seed: 42 }
    }
}

/// Mutable data-path state for one simulation run: per-SM L1s and L1 TLBs,
/// the chip-wide L2 and L2 TLB.
pub struct MemSim<'p> {
    profile: &'p GpuArchProfile,
    options: MemSimOptions,
    l1: HashMap<u32, SetAssocCache>,
    l2: SetAssocCache,
    l1tlb: HashMap<u32, TlbState>,
    l2tlb: TlbState,
    rng: ChaCha8Rng,
    evictions: Vec<EvictionEvent>,
    l1_latency: u32,
    l2_latency: u32,
    l2_miss_latency: u32,
    tlb_miss_latency: u32,
}

impl<'p> MemSim<'p> {
    pub fn new(profile: &'p GpuArchProfile, options: MemSimOptions) -> Result<Self, MemHierError> {
        let l1_geom = profile.data_cache("L1").expect("profiles carry an L1 data cache");
        let l2_geom = profile.data_cache("L2").expect("profiles carry an L2 data cache");
        debug_assert_eq!(l1_geom.indexing, Indexing::Virtual);
        debug_assert_eq!(l2_geom.indexing, Indexing::Physical);
        assert!(profile.tlbs.len() >= 2, "profiles carry at least two TLB levels");
        let l2t = &profile.tlbs[1];
        let need = |name: &'static str| {
            profile.latency_of(name).ok_or(MemHierError::MissingLatencyClass(name))
        };
        Ok(MemSim {
            profile,
            rng: ChaCha8Rng::seed_from_u64(options.seed),
            l1: HashMap::new(),
            l2: SetAssocCache::from_geometry(l2_geom, false),
            l1tlb: HashMap::new(),
            l2tlb: TlbState::new(l2t.page_entry, l2t.coverage),
            evictions: Vec::new(),
            l1_latency: l1_geom.hit_latency,
            l2_latency: l2_geom.hit_latency,
            l2_miss_latency: need("l2-miss-tlb-hit")?,
            tlb_miss_latency: need("tlb-miss")?,
            options,
        })
    }

    fn l1_for(&mut self, sm: u32) -> &mut SetAssocCache {
        let geom = self.profile.data_cache("L1").unwrap();
        let detected = self.options.use_detected_l1;
        self.l1.entry(sm).or_insert_with(|| SetAssocCache::from_geometry(geom, detected))
    }

    fn l1tlb_for(&mut self, sm: u32) -> &mut TlbState {
        let t = &self.profile.tlbs[0];
        self.l1tlb.entry(sm).or_insert_with(|| TlbState::new(t.page_entry, t.coverage))
    }

    /// Runs one access through the hierarchy and classifies its latency.
    ///
    /// L1 is virtually indexed, so L1 hits bypass the TLBs; everything that
    /// reaches the physically-indexed L2 pays the translation first. Any
    /// level-1 TLB miss is classified as the full TLB-miss latency.
    pub fn classify_access(&mut self, access: &Access) -> Result<LatencyTraceEntry, MemHierError> {
        let limit = self.profile.global.size;
        if access.addr >= limit {
            return Err(MemHierError::AddressBeyondModeledMemory { addr: access.addr, limit });
        }
        let addr = access.addr;
        let sm = access.sm;

        if self.options.l1_enabled && self.l1_for(sm).lookup(addr) {
            return Ok(LatencyTraceEntry { index: 0, class: MemClass::L1Hit, cycles: self.l1_latency });
        }

        let tlb_hit = self.l1tlb_for(sm).lookup(addr);
        if !tlb_hit {
            // Walk: the second-level TLB serves or also fills.
            if !self.l2tlb.lookup(addr) {
                self.l2tlb.fill(addr);
            }
            self.l1tlb_for(sm).fill(addr);
        }

        let l2_hit = self.l2.lookup(addr);
        if !l2_hit {
            self.l2.fill(addr, &mut self.rng);
        }
        if self.options.l1_enabled {
            let rng = &mut self.rng;
            let geom_detected = self.options.use_detected_l1;
            let geom = self.profile.data_cache("L1").unwrap();
            let l1 = self.l1.entry(sm).or_insert_with(|| SetAssocCache::from_geometry(geom, geom_detected));
            if let Some(e) = l1.fill(addr, rng) {
                self.evictions.push(e);
            }
        }

        let class = if !tlb_hit {
            MemClass::TlbMiss
        } else if l2_hit {
            MemClass::L2Hit
        } else {
            MemClass::L2MissTlbHit
        };
        let cycles = match class {
            MemClass::TlbMiss => self.tlb_miss_latency,
            MemClass::L2Hit => self.l2_latency,
            MemClass::L2MissTlbHit => self.l2_miss_latency,
            _ => unreachable!(),
        };
        Ok(LatencyTraceEntry { index: 0, class, cycles })
    }

    pub fn run(&mut self, trace: &[Access]) -> Result<Vec<LatencyTraceEntry>, MemHierError> {
        trace
            .iter()
            .enumerate()
            .map(|(i, a)| self.classify_access(a).map(|mut e| {
                e.index = i;
                e
            }))
            .collect()
    }

    pub fn evictions(&self) -> &[EvictionEvent] {
        &self.evictions
    }

    pub fn take_evictions(&mut self) -> Vec<EvictionEvent> {
        std::mem::take(&mut self.evictions)
    }

    #[cfg(test)]
    fn l1_resident(&self, sm: u32, addr: u64) -> bool {
        self.l1.get(&sm).is_some_and(|c| c.contains(addr))
    }
}

/// Classifies every access of a pointer-chase style trace. `warmed` runs the
/// trace once beforehand so only capacity and conflict behavior remains.
pub fn classify_pchase(
    trace: &[Access],
    profile: &GpuArchProfile,
    warmed: bool,
    options: MemSimOptions,
) -> Result<Vec<LatencyTraceEntry>, MemHierError> {
    let mut sim = MemSim::new(profile, options)?;
    if warmed {
        sim.run(trace)?;
    }
    sim.run(trace)
}

/// Runs a trace against the L1 model and reports the eviction events it
/// triggered. Deterministic for a fixed seed.
pub fn simulate_l1_replacement(
    trace: &[Access],
    profile: &GpuArchProfile,
    seed: u64,
) -> Result<Vec<EvictionEvent>, MemHierError> {
    let mut sim = MemSim::new(profile, MemSimOptions { seed, ..MemSimOptions::default() })?;
    sim.run(trace)?;
    Ok(sim.take_evictions())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::{load_profile, KIB, MIB};

    fn t4() -> GpuArchProfile {
        load_profile("T4").unwrap()
    }

    #[test]
    fn cold_hierarchy_classifies_the_four_latencies() {
        let t4 = t4();
        let mut sim = MemSim::new(&t4, MemSimOptions::default()).unwrap();
        // First touch: both TLB and L2 miss.
        let e = sim.classify_access(&Access::load(0)).unwrap();
        assert_eq!((e.class, e.cycles), (MemClass::TlbMiss, 616));
        // Same 32 B line: L1 hit.
        let e = sim.classify_access(&Access::load(8)).unwrap();
        assert_eq!((e.class, e.cycles), (MemClass::L1Hit, 32));
        // Same page, new line: TLB warm, L2 cold.
        let e = sim.classify_access(&Access::load(64)).unwrap();
        assert_eq!((e.class, e.cycles), (MemClass::L2MissTlbHit, 296));
        // Same L2 line as the previous access, but a fresh L1 line.
        let e = sim.classify_access(&Access::load(96)).unwrap();
        assert_eq!((e.class, e.cycles), (MemClass::L2Hit, 188));
    }

    #[test]
    fn first_touch_is_never_an_l1_hit() {
        let t4 = t4();
        let mut sim = MemSim::new(&t4, MemSimOptions::default()).unwrap();
        for i in 0..512u64 {
            let e = sim.classify_access(&Access::load(i * 97 % (8 * MIB))).unwrap();
            if i == 0 {
                assert_ne!(e.class, MemClass::L1Hit);
            }
        }
    }

    #[test]
    fn l1_tlb_covers_sixteen_pages() {
        let t4 = t4();
        let mut sim = MemSim::new(&t4, MemSimOptions::default()).unwrap();
        // Touch 16 distinct pages, then revisit: all TLB-warm.
        for p in 0..16u64 {
            sim.classify_access(&Access::load(p * 2 * MIB)).unwrap();
        }
        for p in 0..16u64 {
            let e = sim.classify_access(&Access::load(p * 2 * MIB + 4096)).unwrap();
            assert_ne!(e.class, MemClass::TlbMiss, "page {p}");
        }
        // A 17th page pushes one entry out.
        sim.classify_access(&Access::load(16 * 2 * MIB)).unwrap();
        let e = sim.classify_access(&Access::load(8192)).unwrap();
        assert_eq!(e.class, MemClass::TlbMiss);
    }

    #[test]
    fn within_capacity_traces_evict_nothing() {
        let t4 = t4();
        let trace: AccessTrace = (0..(24 * KIB / 32)).map(|i| Access::load(i * 32)).collect();
        let evictions = simulate_l1_replacement(&trace, &t4, 1).unwrap();
        assert!(evictions.is_empty());
    }

    #[test]
    fn saturating_scan_evicts_aligned_groups() {
        let t4 = t4();
        let trace: AccessTrace = (0..(64 * KIB / 32)).map(|i| Access::load(i * 32)).collect();
        let evictions = simulate_l1_replacement(&trace, &t4, 1).unwrap();
        assert!(!evictions.is_empty());
        for e in &evictions {
            assert_eq!(e.base % 128, 0);
            assert_eq!(e.bytes, 128);
        }
    }

    #[test]
    fn second_scan_revictimizes_sets() {
        let t4 = t4();
        let scan: Vec<Access> = (0..(48 * KIB / 32)).map(|i| Access::load(i * 32)).collect();
        let mut sim = MemSim::new(&t4, MemSimOptions::default()).unwrap();
        sim.run(&scan).unwrap();
        let first = sim.take_evictions();
        sim.run(&scan).unwrap();
        let second = sim.take_evictions();
        assert!(!first.is_empty() && !second.is_empty());
        let first_sets: std::collections::HashSet<u64> =
            first.iter().map(|e| (e.base / 32) % 256).collect();
        assert!(
            second.iter().any(|e| first_sets.contains(&((e.base / 32) % 256))),
            "second scan should revisit already-victimized sets"
        );
    }

    #[test]
    fn sm_isolation_for_private_l1() {
        let t4 = t4();
        let mut sim = MemSim::new(&t4, MemSimOptions::default()).unwrap();
        sim.classify_access(&Access { sm: 0, ..Access::load(0) }).unwrap();
        assert!(sim.l1_resident(0, 0));
        // Heavy traffic on SM 1 never touches SM 0's L1.
        for i in 0..4096u64 {
            sim.classify_access(&Access { sm: 1, ..Access::load(i * 32) }).unwrap();
        }
        assert!(sim.l1_resident(0, 0));
        assert!(!sim.l1_resident(0, 32 * 5));
    }

    #[test]
    fn out_of_range_addresses_error() {
        let t4 = t4();
        let mut sim = MemSim::new(&t4, MemSimOptions::default()).unwrap();
        let bad = t4.global.size + 1;
        assert!(matches!(
            sim.classify_access(&Access::load(bad)),
            Err(MemHierError::AddressBeyondModeledMemory { .. })
        ));
    }

    #[test]
    fn conservation_every_access_gets_one_class() {
        let t4 = t4();
        let trace: AccessTrace = (0..1000u64).map(|i| Access::load((i * 1237) % (16 * MIB))).collect();
        let entries = classify_pchase(&trace, &t4, false, MemSimOptions::default()).unwrap();
        assert_eq!(entries.len(), trace.len());
        let counted: usize = [
            MemClass::L1Hit,
            MemClass::L2Hit,
            MemClass::L2MissTlbHit,
            MemClass::TlbMiss,
        ]
        .iter()
        .map(|c| entries.iter().filter(|e| e.class == *c).count())
        .sum();
        assert_eq!(counted, trace.len());
    }
}
