//! Architecture profiles: every chip parameter the analyses and simulators
//! consume lives here, as validated, serializable data. Nothing downstream
//! hardcodes a latency or a geometry; it all comes from a [`GpuArchProfile`].

mod builtins;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use builtins::builtin_profiles;

pub const KIB: u64 = 1024;
pub const MIB: u64 = 1024 * KIB;

/// The five modeled GPU generations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Generation {
    Kepler,
    Maxwell,
    Pascal,
    Volta,
    Turing,
}

impl Generation {
    /// Turing and Volta embed scheduling control in each 128-bit instruction;
    /// earlier generations use standalone control words.
    pub fn has_embedded_control(self) -> bool {
        matches!(self, Generation::Volta | Generation::Turing)
    }

    pub fn all() -> [Generation; 5] {
        [
            Generation::Kepler,
            Generation::Maxwell,
            Generation::Pascal,
            Generation::Volta,
            Generation::Turing,
        ]
    }
}

impl fmt::Display for Generation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Generation::Kepler => "Kepler",
            Generation::Maxwell => "Maxwell",
            Generation::Pascal => "Pascal",
            Generation::Volta => "Volta",
            Generation::Turing => "Turing",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Generation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "kepler" => Ok(Generation::Kepler),
            "maxwell" => Ok(Generation::Maxwell),
            "pascal" => Ok(Generation::Pascal),
            "volta" => Ok(Generation::Volta),
            "turing" => Ok(Generation::Turing),
            other => Err(format!("unknown generation `{other}`")),
        }
    }
}

/// Which architectural block owns a cache instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CacheScope {
    /// One instance per scheduler / processing block.
    ProcessingBlock,
    /// One instance per streaming multiprocessor.
    Sm,
    /// A single chip-wide instance.
    Chip,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Indexing {
    Virtual,
    Physical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Replacement {
    Lru,
    /// Non-LRU policy of unknown shape; modeled as seeded-random victim choice.
    NonLru,
    /// On saturation, evicts a random 128 B-aligned group of 4 consecutive lines.
    RandomGroup4,
}

/// Geometry and timing of one cache level.
///
/// `sets`/`ways` may be absent where the organization was never determined;
/// when both are present, `sets * ways * line == size` must hold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheGeometry {
    pub level_name: String,
    /// Nominal capacity in bytes.
    pub size: u64,
    /// Capacity detectable by pointer-chase probing, where it differs from
    /// nominal (bytes). Simulations use `size` unless told otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detected_size: Option<u64>,
    /// Line size in bytes.
    pub line: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sets: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ways: Option<u32>,
    /// Load-to-use latency on a hit, in cycles.
    pub hit_latency: u32,
    pub scope: CacheScope,
    pub indexing: Indexing,
    pub replacement: Replacement,
    /// True when the stored numbers are measurements rather than published
    /// figures; consumers comparing against them should allow a tolerance.
    #[serde(default)]
    pub approximate: bool,
}

/// One TLB level. Coverage is the total address span mappable without a miss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TlbGeometry {
    pub level_name: String,
    /// Bytes mapped by one entry.
    pub page_entry: u64,
    /// Total bytes covered (entries x page_entry).
    pub coverage: u64,
    /// Name of the latency-table class charged when this level misses.
    pub miss_penalty_class: String,
    #[serde(default)]
    pub approximate: bool,
}

impl TlbGeometry {
    pub fn entries(&self) -> u64 {
        self.coverage / self.page_entry
    }
}

/// Shared-memory banking and latency parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharedMemParams {
    pub size_per_sm: u64,
    pub banks: u32,
    /// Bank port width in bytes.
    pub bank_width: u64,
    pub lsu_per_sm: u32,
    pub no_conflict_latency: u32,
    /// Extra cycles per additional serialized access to a conflicted bank.
    pub conflict_slope: u32,
    /// Dual-ported banks resolve two aliases per bank per cycle for free.
    pub dual_ported_banks: bool,
    /// Published/measured bandwidths in bytes/s, carried for reference only;
    /// the analytic bound is computed from the factors above.
    pub reference_theoretical_bw: u64,
    pub reference_measured_bw: u64,
}

/// One constant-cache level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstCacheLevel {
    pub level_name: String,
    pub size: u64,
    pub line: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sets: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ways: Option<u32>,
    /// Latency of a warp-wide broadcast served by this level, in cycles.
    pub broadcast_latency: u32,
    #[serde(default)]
    pub approximate: bool,
}

/// Global-memory figures; bandwidths are reference data, not a timing model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalMemParams {
    pub bus: String,
    pub size: u64,
    /// Theoretical bandwidth in bytes/s.
    pub theoretical_bw: u64,
    /// Measured bandwidth in bytes/s (reference only).
    pub measured_bw: u64,
}

/// One entry of the opcode-class latency table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyClass {
    pub cycles: u32,
    /// Variable-latency classes (memory) are ordered through dependency
    /// barriers rather than stall counts.
    #[serde(default)]
    pub variable: bool,
    #[serde(default)]
    pub approximate: bool,
}

impl LatencyClass {
    pub fn fixed(cycles: u32) -> Self {
        LatencyClass { cycles, variable: false, approximate: false }
    }
    pub fn fixed_approx(cycles: u32) -> Self {
        LatencyClass { cycles, variable: false, approximate: true }
    }
    pub fn variable(cycles: u32) -> Self {
        LatencyClass { cycles, variable: true, approximate: false }
    }
    pub fn variable_approx(cycles: u32) -> Self {
        LatencyClass { cycles, variable: true, approximate: true }
    }
}

/// Full parameter set for one architecture. Immutable after load; share
/// freely across concurrent analyses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpuArchProfile {
    pub name: String,
    pub generation: Generation,
    pub chip: String,
    /// Streaming multiprocessors per chip.
    pub sm_count: u32,
    /// Max graphics clock in MHz.
    pub graphics_clock_mhz: u32,
    /// Max memory clock in MHz.
    pub memory_clock_mhz: u32,
    pub threads_per_sm: u32,
    pub schedulers_per_sm: u32,
    pub register_banks: u32,
    /// Register bank port width in bits.
    pub register_bank_width_bits: u32,
    /// Simultaneous reads each bank sustains per cycle.
    pub register_bank_ports: u32,
    /// Stall cycles charged per excess same-bank read beyond port capacity.
    pub bank_conflict_penalty_cycles: u32,
    /// Latency classes by name.
    pub latency_table: BTreeMap<String, LatencyClass>,
    /// Opcode -> latency-class name.
    pub opcode_classes: BTreeMap<String, String>,
    /// Class assigned to opcodes absent from `opcode_classes`.
    pub default_latency_class: String,
    /// Data caches, innermost first (L1, L2).
    pub memory: Vec<CacheGeometry>,
    /// TLB levels, innermost first.
    pub tlbs: Vec<TlbGeometry>,
    pub shared: SharedMemParams,
    /// Constant-cache levels, innermost first.
    pub const_levels: Vec<ConstCacheLevel>,
    /// Instruction-cache levels, innermost first.
    pub icache_levels: Vec<CacheGeometry>,
    /// Average clocks per instruction when a straight-line sequence is served
    /// by each instruction-cache level; the final entry is device memory, so
    /// the length is `icache_levels.len() + 1`.
    pub icache_fetch_cpi: Vec<f64>,
    pub global: GlobalMemParams,
    /// Board power limit in watts, carried for reference only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_tdp_watts: Option<u32>,
}

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("unknown profile `{0}`")]
    UnknownProfile(String),
    #[error("malformed profile file {path}: {detail}")]
    MalformedProfileFile { path: String, detail: String },
    #[error("profile `{name}` fails validation: {}", violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid { name: String, violations: Vec<Violation> },
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// One invariant violation, pointing at the offending field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

fn violation(out: &mut Vec<Violation>, field: impl Into<String>, message: impl Into<String>) {
    out.push(Violation { field: field.into(), message: message.into() });
}

/// Checks every profile invariant and returns the violations in a
/// deterministic order. An empty list means the profile is valid.
pub fn validate_profile(p: &GpuArchProfile) -> Vec<Violation> {
    let mut v = Vec::new();

    if p.name.is_empty() {
        violation(&mut v, "name", "must not be empty");
    }
    for (field, value) in [
        ("sm_count", p.sm_count),
        ("graphics_clock_mhz", p.graphics_clock_mhz),
        ("memory_clock_mhz", p.memory_clock_mhz),
        ("threads_per_sm", p.threads_per_sm),
        ("schedulers_per_sm", p.schedulers_per_sm),
        ("register_banks", p.register_banks),
        ("register_bank_width_bits", p.register_bank_width_bits),
        ("register_bank_ports", p.register_bank_ports),
    ] {
        if value == 0 {
            violation(&mut v, field, "must be positive");
        }
    }

    // Bank organization is pinned per generation.
    let (banks, width, ports) = match p.generation {
        Generation::Turing | Generation::Volta => (2, 64, 2),
        _ => (4, 32, 1),
    };
    if p.register_banks != banks || p.register_bank_width_bits != width || p.register_bank_ports != ports {
        violation(
            &mut v,
            "register_banks",
            format!(
                "{} requires {} banks of {} bits with {} port(s), got {}x{} bits with {} port(s)",
                p.generation, banks, width, ports, p.register_banks, p.register_bank_width_bits, p.register_bank_ports
            ),
        );
    }

    for (name, class) in &p.latency_table {
        if class.cycles == 0 {
            violation(&mut v, format!("latency_table.{name}.cycles"), "must be positive");
        }
    }
    for (opcode, class) in &p.opcode_classes {
        if !p.latency_table.contains_key(class) {
            violation(
                &mut v,
                format!("opcode_classes.{opcode}"),
                format!("references missing latency class `{class}`"),
            );
        }
    }
    if !p.latency_table.contains_key(&p.default_latency_class) {
        violation(
            &mut v,
            "default_latency_class",
            format!("references missing latency class `{}`", p.default_latency_class),
        );
    }

    for (i, c) in p.memory.iter().enumerate() {
        validate_cache(&mut v, &format!("memory[{i}]"), c);
    }
    for (i, c) in p.icache_levels.iter().enumerate() {
        validate_cache(&mut v, &format!("icache_levels[{i}]"), c);
    }
    for (i, t) in p.tlbs.iter().enumerate() {
        let field = format!("tlbs[{i}]");
        if t.page_entry == 0 {
            violation(&mut v, format!("{field}.page_entry"), "must be positive");
        } else if t.coverage == 0 || t.coverage % t.page_entry != 0 {
            violation(
                &mut v,
                format!("{field}.coverage"),
                format!("{} is not a positive multiple of page_entry {}", t.coverage, t.page_entry),
            );
        }
        if !p.latency_table.contains_key(&t.miss_penalty_class) {
            violation(
                &mut v,
                format!("{field}.miss_penalty_class"),
                format!("references missing latency class `{}`", t.miss_penalty_class),
            );
        }
    }
    for (i, c) in p.const_levels.iter().enumerate() {
        let field = format!("const_levels[{i}]");
        if c.broadcast_latency == 0 {
            violation(&mut v, format!("{field}.broadcast_latency"), "must be positive");
        }
        if c.line == 0 {
            violation(&mut v, format!("{field}.line"), "must be positive");
        } else if c.size % c.line != 0 {
            violation(&mut v, format!("{field}.size"), "must be a multiple of the line size");
        }
        if let (Some(sets), Some(ways)) = (c.sets, c.ways) {
            if u64::from(sets) * u64::from(ways) * c.line != c.size {
                violation(
                    &mut v,
                    format!("{field}.sets"),
                    format!("{sets} sets x {ways} ways x {} B line != size {}", c.line, c.size),
                );
            }
        }
    }

    if p.shared.banks == 0 {
        violation(&mut v, "shared.banks", "must be positive");
    }
    if p.shared.bank_width == 0 {
        violation(&mut v, "shared.bank_width", "must be positive");
    }
    if p.shared.lsu_per_sm == 0 {
        violation(&mut v, "shared.lsu_per_sm", "must be positive");
    }
    if p.shared.no_conflict_latency == 0 {
        violation(&mut v, "shared.no_conflict_latency", "must be positive");
    }

    if p.icache_fetch_cpi.len() != p.icache_levels.len() + 1 {
        violation(
            &mut v,
            "icache_fetch_cpi",
            format!(
                "expected {} entries (one per level plus memory), got {}",
                p.icache_levels.len() + 1,
                p.icache_fetch_cpi.len()
            ),
        );
    }
    for (i, cpi) in p.icache_fetch_cpi.iter().enumerate() {
        if !cpi.is_finite() || *cpi <= 0.0 {
            violation(&mut v, format!("icache_fetch_cpi[{i}]"), "must be positive and finite");
        }
    }

    v
}

fn validate_cache(v: &mut Vec<Violation>, field: &str, c: &CacheGeometry) {
    if c.line == 0 {
        violation(v, format!("{field}.line"), "must be positive");
        return;
    }
    if c.size == 0 || c.size % c.line != 0 {
        violation(
            v,
            format!("{field}.size"),
            format!("{} is not a positive multiple of line {}", c.size, c.line),
        );
    }
    if c.hit_latency == 0 {
        violation(v, format!("{field}.hit_latency"), "must be positive");
    }
    if let (Some(sets), Some(ways)) = (c.sets, c.ways) {
        if u64::from(sets) * u64::from(ways) * c.line != c.size {
            violation(
                v,
                format!("{field}.sets"),
                format!("{sets} sets x {ways} ways x {} B line != size {}", c.line, c.size),
            );
        }
    }
    if let Some(d) = c.detected_size {
        if d > c.size {
            violation(v, format!("{field}.detected_size"), "exceeds nominal size");
        }
    }
}

impl GpuArchProfile {
    pub fn graphics_clock_hz(&self) -> u64 {
        u64::from(self.graphics_clock_mhz) * 1_000_000
    }

    pub fn data_cache(&self, level_name: &str) -> Option<&CacheGeometry> {
        self.memory.iter().find(|c| c.level_name == level_name)
    }

    pub fn const_level(&self, level_name: &str) -> Option<&ConstCacheLevel> {
        self.const_levels.iter().find(|c| c.level_name == level_name)
    }

    pub fn latency_of(&self, class: &str) -> Option<u32> {
        self.latency_table.get(class).map(|c| c.cycles)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("profile serialization cannot fail")
    }
}

/// Loads a profile from a built-in name (case-insensitive) or a JSON file
/// path, then validates it.
pub fn load_profile(source: &str) -> Result<GpuArchProfile, ProfileError> {
    if let Some(p) = builtins::builtin(source) {
        return Ok(p);
    }
    let path = Path::new(source);
    if !path.exists() {
        return Err(ProfileError::UnknownProfile(source.to_string()));
    }
    let text = std::fs::read_to_string(path).map_err(|source_err| ProfileError::Io {
        path: source.to_string(),
        source: source_err,
    })?;
    let profile: GpuArchProfile =
        serde_json::from_str(&text).map_err(|e| ProfileError::MalformedProfileFile {
            path: source.to_string(),
            detail: format!("line {}, column {}: {}", e.line(), e.column(), e),
        })?;
    let violations = validate_profile(&profile);
    if !violations.is_empty() {
        return Err(ProfileError::Invalid { name: profile.name.clone(), violations });
    }
    Ok(profile)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_list_is_the_six_boards() {
        let names = builtin_profiles();
        assert_eq!(names, vec!["T4", "V100", "P100", "P4", "M60", "K80"]);
        for name in names {
            let p = load_profile(name).unwrap();
            assert!(validate_profile(&p).is_empty(), "{name} must validate cleanly");
        }
    }

    #[test]
    fn t4_headline_numbers() {
        let t4 = load_profile("T4").unwrap();
        assert_eq!(t4.sm_count, 40);
        assert_eq!(t4.graphics_clock_mhz, 1590);
        assert_eq!(t4.threads_per_sm, 1024);
        let l2 = t4.data_cache("L2").unwrap();
        assert_eq!(l2.size, 4096 * KIB);
        assert_eq!(l2.hit_latency, 188);
        assert!(l2.approximate);
    }

    #[test]
    fn k80_shared_banks_are_8_bytes_wide() {
        let k80 = load_profile("K80").unwrap();
        assert_eq!(k80.shared.bank_width, 8);
        assert!(k80.shared.dual_ported_banks);
    }

    #[test]
    fn p4_register_file_is_four_narrow_banks() {
        let p4 = load_profile("P4").unwrap();
        assert_eq!(p4.register_banks, 4);
        assert_eq!(p4.register_bank_width_bits, 32);
        assert_eq!(p4.register_bank_ports, 1);
    }

    #[test]
    fn t4_and_v100_differ_where_expected() {
        let t4 = load_profile("T4").unwrap();
        let v100 = load_profile("V100").unwrap();
        assert_eq!(t4.data_cache("L2").unwrap().size, 4096 * KIB);
        assert_eq!(v100.data_cache("L2").unwrap().size, 6144 * KIB);
        assert_eq!(t4.threads_per_sm, 1024);
        assert_eq!(v100.threads_per_sm, 2048);
    }

    #[test]
    fn t4_shared32_variant_swaps_the_split() {
        let a = load_profile("T4").unwrap();
        let b = load_profile("T4-shared32").unwrap();
        assert_eq!(a.shared.size_per_sm, 64 * KIB);
        assert_eq!(a.data_cache("L1").unwrap().size, 32 * KIB);
        assert_eq!(a.data_cache("L1").unwrap().detected_size, Some(25 * KIB));
        assert_eq!(b.shared.size_per_sm, 32 * KIB);
        assert_eq!(b.data_cache("L1").unwrap().size, 64 * KIB);
        assert_eq!(b.data_cache("L1").unwrap().detected_size, Some(57 * KIB));
    }

    #[test]
    fn profiles_round_trip_through_json() {
        for name in builtin_profiles() {
            let p = load_profile(name).unwrap();
            let text = p.to_json();
            let back: GpuArchProfile = serde_json::from_str(&text).unwrap();
            assert_eq!(p, back, "{name} must round-trip");
        }
    }

    #[test]
    fn load_profile_from_file_and_reject_garbage() {
        let dir = std::env::temp_dir();
        let good = dir.join("sasslab_profile_ok.json");
        let t4 = load_profile("T4").unwrap();
        std::fs::write(&good, t4.to_json()).unwrap();
        let reloaded = load_profile(good.to_str().unwrap()).unwrap();
        assert_eq!(t4, reloaded);

        let bad = dir.join("sasslab_profile_bad.json");
        std::fs::write(&bad, "{ not json").unwrap();
        match load_profile(bad.to_str().unwrap()) {
            Err(ProfileError::MalformedProfileFile { detail, .. }) => {
                assert!(detail.contains("line"), "diagnostic should carry a position: {detail}")
            }
            other => panic!("expected MalformedProfileFile, got {other:?}"),
        }
    }

    #[test]
    fn broken_geometry_is_rejected_with_field_path() {
        let mut p = load_profile("T4").unwrap();
        p.memory[1].sets = Some(17); // 17 sets x 16 ways x 64 B != 4 MiB
        let v = validate_profile(&p);
        assert!(v.iter().any(|x| x.field == "memory[1].sets"), "{v:?}");

        let dir = std::env::temp_dir();
        let path = dir.join("sasslab_profile_badgeom.json");
        std::fs::write(&path, p.to_json()).unwrap();
        assert!(matches!(load_profile(path.to_str().unwrap()), Err(ProfileError::Invalid { .. })));
    }

    #[test]
    fn negative_latency_never_parses_and_zero_is_flagged() {
        let mut p = load_profile("T4").unwrap();
        p.memory[0].hit_latency = 0;
        let v = validate_profile(&p);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].field, "memory[0].hit_latency");
    }

    #[test]
    fn generation_consistency_is_enforced() {
        let mut p = load_profile("T4").unwrap();
        p.register_banks = 4;
        let v = validate_profile(&p);
        assert!(v.iter().any(|x| x.field == "register_banks"), "{v:?}");
    }

    #[test]
    fn unknown_name_is_an_error() {
        assert!(matches!(load_profile("T5"), Err(ProfileError::UnknownProfile(_))));
    }

    #[test]
    fn tlb_coverage_arithmetic() {
        let t4 = load_profile("T4").unwrap();
        let l1tlb = &t4.tlbs[0];
        assert_eq!(l1tlb.page_entry, 2 * MIB);
        assert_eq!(l1tlb.coverage, 32 * MIB);
        assert_eq!(l1tlb.entries(), 16);
    }
}
