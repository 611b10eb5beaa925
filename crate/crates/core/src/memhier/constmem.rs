//! Constant-memory behavior: broadcast vs serialized access latency, and the
//! capacity interaction between the second-level constant cache and the
//! instruction cache it shares hardware with on Turing/Volta.

use crate::profile::{Generation, GpuArchProfile};

use super::MemHierError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstLevel {
    L1,
    L15,
    L2,
}

impl ConstLevel {
    pub fn level_name(self) -> &'static str {
        match self {
            ConstLevel::L1 => "L1",
            ConstLevel::L15 => "L1.5",
            ConstLevel::L2 => "L2",
        }
    }
}

impl std::str::FromStr for ConstLevel {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(ConstLevel::L1),
            "l1.5" | "l15" => Ok(ConstLevel::L15),
            "l2" => Ok(ConstLevel::L2),
            other => Err(format!("unknown constant cache level `{other}`")),
        }
    }
}

/// Warp-wide latency of a constant load served by `level` when the warp
/// references `distinct_addresses` locations. One location broadcasts to all
/// threads; several serialize in full.
pub fn const_latency(
    distinct_addresses: u32,
    level: ConstLevel,
    profile: &GpuArchProfile,
) -> Result<u32, MemHierError> {
    if distinct_addresses == 0 || distinct_addresses > 32 {
        return Err(MemHierError::CountOutOfRange(distinct_addresses));
    }
    let geom = profile
        .const_level(level.level_name())
        .ok_or_else(|| MemHierError::LevelUnknown(level.level_name().to_string()))?;
    Ok(distinct_addresses * geom.broadcast_latency)
}

/// Victim miss rate when an instruction-stream aggressor of
/// `aggressor_instruction_bytes` competes with a constant array of
/// `victim_const_bytes` pre-cached at the second constant level.
///
/// On Turing/Volta the second-level constant cache and the L1 instruction
/// cache are one physical pool, so instruction pressure evicts constants; on
/// earlier generations the pools are separate and the victim only misses if
/// it overflows its own level.
pub fn const_icache_interaction(
    aggressor_instruction_bytes: u64,
    victim_const_bytes: u64,
    profile: &GpuArchProfile,
) -> f64 {
    if victim_const_bytes == 0 {
        return 0.0;
    }
    let victim = victim_const_bytes as f64;
    let own_capacity = profile
        .const_level("L1.5")
        .map(|c| c.size)
        .unwrap_or(0) as f64;
    let shared_pool = matches!(profile.generation, Generation::Turing | Generation::Volta);
    let evicted = if shared_pool {
        // Instructions and constants stream through one capacity.
        let capacity = profile
            .icache_levels
            .iter()
            .find(|c| c.level_name == "L1")
            .map(|c| c.size)
            .unwrap_or(0) as f64;
        (aggressor_instruction_bytes as f64 + victim - capacity).max(0.0)
    } else {
        (victim - own_capacity).max(0.0)
    };
    (evicted / victim).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::{load_profile, KIB};

    #[test]
    fn broadcast_latencies_per_level() {
        let t4 = load_profile("T4").unwrap();
        assert_eq!(const_latency(1, ConstLevel::L1, &t4).unwrap(), 26);
        assert_eq!(const_latency(1, ConstLevel::L15, &t4).unwrap(), 92);
        assert_eq!(const_latency(1, ConstLevel::L2, &t4).unwrap(), 215);
    }

    #[test]
    fn diverging_addresses_serialize() {
        let t4 = load_profile("T4").unwrap();
        assert_eq!(const_latency(2, ConstLevel::L1, &t4).unwrap(), 52);
        assert_eq!(const_latency(32, ConstLevel::L1, &t4).unwrap(), 32 * 26);
        assert!(const_latency(0, ConstLevel::L1, &t4).is_err());
        assert!(const_latency(33, ConstLevel::L1, &t4).is_err());
    }

    #[test]
    fn shared_pool_reaches_full_miss_rate_on_turing() {
        let t4 = load_profile("T4").unwrap();
        assert_eq!(const_icache_interaction(0, 8 * KIB, &t4), 0.0);
        assert_eq!(const_icache_interaction(100 * 46 * KIB, 8 * KIB, &t4), 1.0);
        let mid = const_icache_interaction(42 * KIB, 8 * KIB, &t4);
        assert!(mid > 0.0 && mid < 1.0, "{mid}");
    }

    #[test]
    fn separate_pools_shield_pascal_constants() {
        let p4 = load_profile("P4").unwrap();
        assert_eq!(const_icache_interaction(100 * 46 * KIB, 8 * KIB, &p4), 0.0);
    }

    #[test]
    fn miss_rate_grows_with_aggressor_size() {
        let t4 = load_profile("T4").unwrap();
        let mut prev = -1.0;
        for kib in (0..80).step_by(4) {
            let rate = const_icache_interaction(kib * KIB, 8 * KIB, &t4);
            assert!(rate >= prev);
            prev = rate;
        }
        assert_eq!(prev, 1.0);
    }
}
