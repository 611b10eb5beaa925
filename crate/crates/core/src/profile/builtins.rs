//! Built-in board profiles: T4, V100, P100, P4, M60, K80.
//!
//! The numbers are microbenchmark-derived figures for the PCI-E boards named;
//! `approximate: true` marks values that are measurements (or derived
//! modeling defaults) rather than published nominal figures.

use std::collections::BTreeMap;

use super::{
    CacheGeometry, CacheScope, ConstCacheLevel, Generation, GlobalMemParams, GpuArchProfile,
    Indexing, LatencyClass, Replacement, SharedMemParams, TlbGeometry, KIB, MIB,
};

/// Names of the built-in profiles, in canonical order.
pub fn builtin_profiles() -> Vec<&'static str> {
    vec!["T4", "V100", "P100", "P4", "M60", "K80"]
}

/// Resolves a built-in profile by case-insensitive name. `T4-shared32` is a
/// variant of T4 with the shared/L1 split flipped (32 KiB shared, 64 KiB L1).
pub(super) fn builtin(name: &str) -> Option<GpuArchProfile> {
    match name.to_ascii_lowercase().as_str() {
        "t4" => Some(t4(false)),
        "t4-shared32" => Some(t4(true)),
        "v100" => Some(v100()),
        "p100" => Some(p100()),
        "p4" => Some(p4()),
        "m60" => Some(m60()),
        "k80" => Some(k80()),
        _ => None,
    }
}

struct MemLatencies {
    l1_hit: u32,
    l2_hit: u32,
    /// Exactly figure-derived only on T4; elsewhere offset-derived defaults.
    l2_miss_tlb_hit: (u32, bool),
    tlb_miss: (u32, bool),
    shared: u32,
    const_l1: u32,
    const_l15: u32,
    const_l2: u32,
}

fn memory_classes(table: &mut BTreeMap<String, LatencyClass>, m: &MemLatencies, l2_approx: bool) {
    table.insert("l1-hit".into(), LatencyClass::variable(m.l1_hit));
    table.insert(
        "l2-hit".into(),
        LatencyClass { cycles: m.l2_hit, variable: true, approximate: l2_approx },
    );
    table.insert(
        "l2-miss-tlb-hit".into(),
        LatencyClass { cycles: m.l2_miss_tlb_hit.0, variable: true, approximate: m.l2_miss_tlb_hit.1 },
    );
    table.insert(
        "tlb-miss".into(),
        LatencyClass { cycles: m.tlb_miss.0, variable: true, approximate: m.tlb_miss.1 },
    );
    table.insert("shared".into(), LatencyClass::variable(m.shared));
    table.insert("const-l1".into(), LatencyClass::variable_approx(m.const_l1));
    table.insert("const-l15".into(), LatencyClass::variable_approx(m.const_l15));
    table.insert("const-l2".into(), LatencyClass::variable_approx(m.const_l2));
}

fn map_opcodes(map: &mut BTreeMap<String, String>, opcodes: &[&str], class: &str) {
    for op in opcodes {
        map.insert((*op).to_string(), class.to_string());
    }
}

fn memory_opcodes(map: &mut BTreeMap<String, String>) {
    map_opcodes(map, &["LDG", "LD", "LDL", "STG", "ST", "STL", "RED", "ATOM", "ATOMG"], "l1-hit");
    map_opcodes(map, &["LDS", "STS", "ATOMS"], "shared");
    map_opcodes(map, &["LDC"], "const-l1");
}

/// Turing/Volta instruction classes; `double` and `dfma` differ between the
/// two generations.
fn turing_volta_tables(
    turing: bool,
    mem: &MemLatencies,
) -> (BTreeMap<String, LatencyClass>, BTreeMap<String, String>) {
    let mut table = BTreeMap::new();
    table.insert("core-alu".into(), LatencyClass::fixed(4));
    table.insert("imad".into(), LatencyClass::fixed(5));
    table.insert("half".into(), LatencyClass::fixed(6));
    if turing {
        table.insert("mufu".into(), LatencyClass::fixed_approx(15));
        table.insert("dadd".into(), LatencyClass::fixed_approx(48));
        table.insert("dfma".into(), LatencyClass::fixed_approx(54));
    } else {
        table.insert("popc".into(), LatencyClass::fixed_approx(10));
        table.insert("mufu".into(), LatencyClass::fixed_approx(14));
        table.insert("double".into(), LatencyClass::fixed(8));
    }
    memory_classes(&mut table, mem, true);

    let mut ops = BTreeMap::new();
    map_opcodes(
        &mut ops,
        &["IADD3", "SHF", "LOP3", "SEL", "MOV", "FADD", "FFMA", "FMUL", "ISETP", "FSET", "FSETP"],
        "core-alu",
    );
    map_opcodes(&mut ops, &["HADD2", "HMUL2", "HFMA2"], "half");
    if turing {
        map_opcodes(&mut ops, &["IMAD", "FMNMX"], "imad");
        map_opcodes(&mut ops, &["POPC", "FLO", "BREV", "MUFU"], "mufu");
        map_opcodes(&mut ops, &["DADD", "DMUL"], "dadd");
        // DSET/DSETP ride the FP64 pipeline on Turing.
        map_opcodes(&mut ops, &["DFMA", "DSET", "DSETP"], "dfma");
    } else {
        map_opcodes(&mut ops, &["IMAD", "FMNMX", "DSET", "DSETP"], "imad");
        map_opcodes(&mut ops, &["POPC"], "popc");
        map_opcodes(&mut ops, &["FLO", "BREV", "MUFU"], "mufu");
        map_opcodes(&mut ops, &["DADD", "DMUL", "DFMA"], "double");
    }
    memory_opcodes(&mut ops);
    (table, ops)
}

/// Pascal-style classes, reused for Maxwell and Kepler (their tables were not
/// independently measured; values carry the `approximate` flag there).
fn pascal_tables(
    approximate: bool,
    mem: &MemLatencies,
) -> (BTreeMap<String, LatencyClass>, BTreeMap<String, String>) {
    let fixed = |cycles| LatencyClass { cycles, variable: false, approximate };
    let mut table = BTreeMap::new();
    table.insert("core-alu".into(), fixed(6));
    table.insert("double".into(), fixed(8));
    table.insert("setp".into(), fixed(12));
    table.insert("sfu".into(), LatencyClass { cycles: 14, variable: false, approximate: true });
    table.insert("imul".into(), LatencyClass { cycles: 86, variable: false, approximate: true });
    memory_classes(&mut table, mem, true);

    let mut ops = BTreeMap::new();
    map_opcodes(
        &mut ops,
        &[
            "BFE", "BFI", "IADD", "IADD32I", "FADD", "FMUL", "FFMA", "FMNMX", "HADD2", "HMUL2",
            "HFMA2", "IMNMX", "ISCADD", "LOP", "LOP32I", "LOP3", "MOV", "MOV32I", "SEL", "SHL",
            "SHR", "VADD", "VABSDIFF", "VMNMX", "XMAD",
        ],
        "core-alu",
    );
    map_opcodes(&mut ops, &["DADD", "DMUL", "DFMA", "DMNMX"], "double");
    map_opcodes(&mut ops, &["FSET", "DSET", "DSETP", "ISETP", "FSETP"], "setp");
    map_opcodes(&mut ops, &["POPC", "FLO", "MUFU", "F2F", "F2I", "I2F", "I2I"], "sfu");
    map_opcodes(&mut ops, &["IMUL", "IMAD"], "imul");
    memory_opcodes(&mut ops);
    (table, ops)
}

struct CacheSpec {
    name: &'static str,
    size: u64,
    detected: Option<u64>,
    line: u64,
    sets: Option<u32>,
    ways: Option<u32>,
    latency: u32,
    scope: CacheScope,
    indexing: Indexing,
    replacement: Replacement,
    approximate: bool,
}

impl CacheSpec {
    fn build(self) -> CacheGeometry {
        CacheGeometry {
            level_name: self.name.to_string(),
            size: self.size,
            detected_size: self.detected,
            line: self.line,
            sets: self.sets,
            ways: self.ways,
            hit_latency: self.latency,
            scope: self.scope,
            indexing: self.indexing,
            replacement: self.replacement,
            approximate: self.approximate,
        }
    }
}

fn icache(name: &'static str, size: u64, scope: CacheScope, cpi: u32, approximate: bool) -> CacheGeometry {
    CacheSpec {
        name,
        size,
        detected: None,
        line: 64,
        sets: None,
        ways: None,
        latency: cpi,
        scope,
        indexing: if matches!(scope, CacheScope::Chip) { Indexing::Physical } else { Indexing::Virtual },
        replacement: Replacement::Lru,
        approximate,
    }
    .build()
}

fn const_level(
    name: &'static str,
    size: u64,
    line: u64,
    sets: Option<u32>,
    ways: Option<u32>,
    broadcast: u32,
    approximate: bool,
) -> ConstCacheLevel {
    ConstCacheLevel {
        level_name: name.to_string(),
        size,
        line,
        sets,
        ways,
        broadcast_latency: broadcast,
        approximate,
    }
}

fn tlb(name: &'static str, page: u64, coverage: u64, approximate: bool) -> TlbGeometry {
    TlbGeometry {
        level_name: name.to_string(),
        page_entry: page,
        coverage,
        miss_penalty_class: "tlb-miss".to_string(),
        approximate,
    }
}

fn t4(shared32: bool) -> GpuArchProfile {
    let mem = MemLatencies {
        l1_hit: 32,
        l2_hit: 188,
        l2_miss_tlb_hit: (296, false),
        tlb_miss: (616, false),
        shared: 19,
        const_l1: 26,
        const_l15: 92,
        const_l2: 215,
    };
    let (latency_table, opcode_classes) = turing_volta_tables(true, &mem);
    // The L1/shared pool is configurable: 32+64 or 64+32 KiB. Pointer-chase
    // probing detects 7 KiB less L1 than configured in either split.
    let (l1_size, l1_detected, shared_size) = if shared32 {
        (64 * KIB, 57 * KIB, 32 * KIB)
    } else {
        (32 * KIB, 25 * KIB, 64 * KIB)
    };
    GpuArchProfile {
        name: if shared32 { "T4-shared32".into() } else { "T4".into() },
        generation: Generation::Turing,
        chip: "TU104".into(),
        sm_count: 40,
        graphics_clock_mhz: 1590,
        memory_clock_mhz: 5001,
        threads_per_sm: 1024,
        schedulers_per_sm: 4,
        register_banks: 2,
        register_bank_width_bits: 64,
        register_bank_ports: 2,
        bank_conflict_penalty_cycles: 1,
        latency_table,
        opcode_classes,
        default_latency_class: "core-alu".into(),
        memory: vec![
            CacheSpec {
                name: "L1",
                size: l1_size,
                detected: Some(l1_detected),
                line: 32,
                sets: Some((l1_size / (32 * 4)) as u32),
                ways: Some(4),
                latency: 32,
                scope: CacheScope::Sm,
                indexing: Indexing::Virtual,
                replacement: Replacement::RandomGroup4,
                approximate: false,
            }
            .build(),
            CacheSpec {
                name: "L2",
                size: 4096 * KIB,
                detected: None,
                line: 64,
                sets: Some(4096),
                ways: Some(16),
                latency: 188,
                scope: CacheScope::Chip,
                indexing: Indexing::Physical,
                replacement: Replacement::Lru,
                approximate: true,
            }
            .build(),
        ],
        tlbs: vec![tlb("L1", 2 * MIB, 32 * MIB, false), tlb("L2", 32 * MIB, 8192 * MIB, true)],
        shared: SharedMemParams {
            size_per_sm: shared_size,
            banks: 32,
            bank_width: 4,
            lsu_per_sm: 16,
            no_conflict_latency: 19,
            conflict_slope: 2,
            dual_ported_banks: false,
            reference_theoretical_bw: 4_070_000_000_000,
            reference_measured_bw: 3_662_000_000_000,
        },
        const_levels: vec![
            const_level("L1", 2 * KIB, 64, Some(8), Some(4), 26, true),
            // Same hardware pool as the L1 instruction cache.
            const_level("L1.5", 46 * KIB, 256, None, None, 92, true),
            const_level("L2", 4096 * KIB, 64, None, None, 215, true),
        ],
        icache_levels: vec![
            icache("L0", 16 * KIB, CacheScope::ProcessingBlock, 1, true),
            icache("L1", 46 * KIB, CacheScope::Sm, 2, true),
            icache("L2", 4096 * KIB, CacheScope::Chip, 8, false),
        ],
        icache_fetch_cpi: vec![1.0, 2.0, 8.0, 40.0],
        global: GlobalMemParams {
            bus: "GDDR6".into(),
            size: 15079 * MIB,
            theoretical_bw: 320_000_000_000,
            measured_bw: 220_000_000_000,
        },
        reference_tdp_watts: Some(70),
    }
}

fn v100() -> GpuArchProfile {
    let mem = MemLatencies {
        l1_hit: 28,
        l2_hit: 193,
        l2_miss_tlb_hit: (301, true),
        tlb_miss: (621, true),
        shared: 19,
        const_l1: 27,
        const_l15: 89,
        const_l2: 245,
    };
    let (latency_table, opcode_classes) = turing_volta_tables(false, &mem);
    GpuArchProfile {
        name: "V100".into(),
        generation: Generation::Volta,
        chip: "GV100".into(),
        sm_count: 80,
        graphics_clock_mhz: 1380,
        memory_clock_mhz: 877,
        threads_per_sm: 2048,
        schedulers_per_sm: 4,
        register_banks: 2,
        register_bank_width_bits: 64,
        register_bank_ports: 2,
        bank_conflict_penalty_cycles: 1,
        latency_table,
        opcode_classes,
        default_latency_class: "core-alu".into(),
        memory: vec![
            CacheSpec {
                name: "L1",
                size: 128 * KIB,
                detected: Some(121 * KIB),
                line: 32,
                sets: Some(1024),
                ways: Some(4),
                latency: 28,
                scope: CacheScope::Sm,
                indexing: Indexing::Virtual,
                replacement: Replacement::RandomGroup4,
                approximate: false,
            }
            .build(),
            CacheSpec {
                name: "L2",
                size: 6144 * KIB,
                detected: None,
                line: 64,
                sets: None,
                ways: None,
                latency: 193,
                scope: CacheScope::Chip,
                indexing: Indexing::Physical,
                replacement: Replacement::Lru,
                approximate: true,
            }
            .build(),
        ],
        tlbs: vec![tlb("L1", 2 * MIB, 32 * MIB, false), tlb("L2", 32 * MIB, 8192 * MIB, true)],
        shared: SharedMemParams {
            size_per_sm: 96 * KIB,
            banks: 32,
            bank_width: 4,
            lsu_per_sm: 32,
            no_conflict_latency: 19,
            conflict_slope: 2,
            dual_ported_banks: false,
            reference_theoretical_bw: 13_800_000_000_000,
            reference_measured_bw: 12_080_000_000_000,
        },
        const_levels: vec![
            const_level("L1", 2 * KIB, 64, Some(8), Some(4), 27, true),
            const_level("L1.5", 128 * KIB, 256, None, None, 89, true),
            const_level("L2", 6144 * KIB, 64, None, None, 245, true),
        ],
        icache_levels: vec![
            icache("L0", 12 * KIB, CacheScope::ProcessingBlock, 1, true),
            icache("L1", 128 * KIB, CacheScope::Sm, 2, false),
            icache("L2", 6144 * KIB, CacheScope::Chip, 8, false),
        ],
        icache_fetch_cpi: vec![1.0, 2.0, 8.0, 40.0],
        global: GlobalMemParams {
            bus: "HBM2".into(),
            size: 16152 * MIB,
            theoretical_bw: 900_000_000_000,
            measured_bw: 750_000_000_000,
        },
        reference_tdp_watts: Some(250),
    }
}

fn pascal_family(
    name: &str,
    chip: &str,
    sm_count: u32,
    f_g: u32,
    f_m: u32,
    mem: MemLatencies,
    l2_size: u64,
    shared: SharedMemParams,
    const_l15_size: (u64, bool),
    icache_l15_size: u64,
    icache_l2_size: u64,
    global: GlobalMemParams,
    tdp: u32,
    generation: Generation,
    approx_latency_table: bool,
    tlbs: Vec<TlbGeometry>,
    l1: CacheGeometry,
) -> GpuArchProfile {
    let (latency_table, opcode_classes) = pascal_tables(approx_latency_table, &mem);
    let const_l1_latency = mem.const_l1;
    let const_l15_latency = mem.const_l15;
    let const_l2_latency = mem.const_l2;
    let l2 = CacheSpec {
        name: "L2",
        size: l2_size,
        detected: None,
        line: 32,
        sets: None,
        ways: None,
        latency: mem.l2_hit,
        scope: CacheScope::Chip,
        indexing: Indexing::Physical,
        replacement: Replacement::Lru,
        approximate: true,
    }
    .build();
    GpuArchProfile {
        name: name.into(),
        generation,
        chip: chip.into(),
        sm_count,
        graphics_clock_mhz: f_g,
        memory_clock_mhz: f_m,
        threads_per_sm: 2048,
        schedulers_per_sm: 4,
        register_banks: 4,
        register_bank_width_bits: 32,
        register_bank_ports: 1,
        bank_conflict_penalty_cycles: 1,
        latency_table,
        opcode_classes,
        default_latency_class: "core-alu".into(),
        memory: vec![l1, l2],
        tlbs,
        shared,
        const_levels: vec![
            const_level("L1", 2 * KIB, 64, Some(8), Some(4), const_l1_latency, true),
            const_level("L1.5", const_l15_size.0, 256, None, None, const_l15_latency, const_l15_size.1),
            const_level("L2", l2_size, 32, None, None, const_l2_latency, true),
        ],
        icache_levels: vec![
            icache("L1", 8 * KIB, CacheScope::Sm, 1, false),
            icache("L1.5", icache_l15_size, CacheScope::Sm, 2, false),
            icache("L2", icache_l2_size, CacheScope::Chip, 8, false),
        ],
        icache_fetch_cpi: vec![1.0, 2.0, 8.0, 40.0],
        global,
        reference_tdp_watts: Some(tdp),
    }
}

fn data_l1(size: u64, line: u64, latency: u32) -> CacheGeometry {
    CacheSpec {
        name: "L1",
        size,
        detected: None,
        line,
        sets: None,
        ways: None,
        latency,
        scope: CacheScope::Sm,
        indexing: Indexing::Virtual,
        replacement: Replacement::Lru,
        approximate: false,
    }
    .build()
}

fn p100() -> GpuArchProfile {
    pascal_family(
        "P100",
        "GP100",
        56,
        1328,
        715,
        MemLatencies {
            l1_hit: 82,
            l2_hit: 234,
            l2_miss_tlb_hit: (342, true),
            tlb_miss: (662, true),
            shared: 24,
            const_l1: 24,
            const_l15: 96,
            const_l2: 236,
        },
        4096 * KIB,
        SharedMemParams {
            size_per_sm: 64 * KIB,
            banks: 32,
            bank_width: 4,
            lsu_per_sm: 16,
            no_conflict_latency: 24,
            conflict_slope: 2,
            dual_ported_banks: false,
            reference_theoretical_bw: 9_519_000_000_000,
            reference_measured_bw: 7_763_000_000_000,
        },
        (64 * KIB, true),
        128 * KIB,
        4096 * KIB,
        GlobalMemParams {
            bus: "HBM2".into(),
            size: 16276 * MIB,
            theoretical_bw: 732_000_000_000,
            measured_bw: 510_000_000_000,
        },
        250,
        Generation::Pascal,
        false,
        vec![tlb("L1", 2 * MIB, 32 * MIB, true), tlb("L2", 32 * MIB, 2048 * MIB, true)],
        data_l1(24 * KIB, 32, 82),
    )
}

fn p4() -> GpuArchProfile {
    pascal_family(
        "P4",
        "GP104",
        40,
        1531,
        3003,
        MemLatencies {
            l1_hit: 82,
            l2_hit: 216,
            l2_miss_tlb_hit: (324, true),
            tlb_miss: (644, true),
            shared: 23,
            const_l1: 25,
            const_l15: 87,
            const_l2: 225,
        },
        2048 * KIB,
        SharedMemParams {
            size_per_sm: 64 * KIB,
            banks: 32,
            bank_width: 4,
            lsu_per_sm: 16,
            no_conflict_latency: 23,
            conflict_slope: 2,
            dual_ported_banks: false,
            reference_theoretical_bw: 3_919_000_000_000,
            reference_measured_bw: 3_555_000_000_000,
        },
        (32 * KIB, false),
        32 * KIB,
        2048 * KIB,
        GlobalMemParams {
            bus: "GDDR5".into(),
            size: 8115 * MIB,
            theoretical_bw: 192_000_000_000,
            measured_bw: 162_000_000_000,
        },
        75,
        Generation::Pascal,
        false,
        vec![tlb("L1", 2 * MIB, 32 * MIB, true), tlb("L2", 32 * MIB, 2048 * MIB, true)],
        data_l1(24 * KIB, 32, 82),
    )
}

fn m60() -> GpuArchProfile {
    pascal_family(
        "M60",
        "GM204",
        16,
        1177,
        2505,
        MemLatencies {
            l1_hit: 82,
            l2_hit: 207,
            l2_miss_tlb_hit: (315, true),
            tlb_miss: (635, true),
            shared: 23,
            const_l1: 25,
            const_l15: 81,
            const_l2: 221,
        },
        2048 * KIB,
        SharedMemParams {
            size_per_sm: 96 * KIB,
            banks: 32,
            bank_width: 4,
            lsu_per_sm: 32,
            no_conflict_latency: 23,
            conflict_slope: 2,
            dual_ported_banks: false,
            reference_theoretical_bw: 2_410_000_000_000,
            reference_measured_bw: 2_122_000_000_000,
        },
        (32 * KIB, false),
        32 * KIB,
        2048 * KIB,
        GlobalMemParams {
            bus: "GDDR5".into(),
            size: 8155 * MIB,
            theoretical_bw: 160_000_000_000,
            measured_bw: 127_000_000_000,
        },
        300,
        Generation::Maxwell,
        true,
        vec![
            tlb("L1", 128 * KIB, 2 * MIB, true),
            tlb("L2", 2 * MIB, 128 * MIB, true),
            tlb("L3", 2 * MIB, 2048 * MIB, true),
        ],
        data_l1(24 * KIB, 32, 82),
    )
}

fn k80() -> GpuArchProfile {
    pascal_family(
        "K80",
        "GK210",
        13,
        875,
        2505,
        MemLatencies {
            l1_hit: 35,
            l2_hit: 200,
            l2_miss_tlb_hit: (308, true),
            tlb_miss: (628, true),
            shared: 26,
            const_l1: 30,
            const_l15: 92,
            const_l2: 220,
        },
        1536 * KIB,
        SharedMemParams {
            size_per_sm: 48 * KIB,
            banks: 32,
            bank_width: 8,
            lsu_per_sm: 32,
            no_conflict_latency: 26,
            conflict_slope: 2,
            dual_ported_banks: true,
            reference_theoretical_bw: 2_912_000_000_000,
            reference_measured_bw: 2_540_000_000_000,
        },
        (32 * KIB, false),
        32 * KIB,
        1536 * KIB,
        GlobalMemParams {
            bus: "GDDR5".into(),
            size: 12237 * MIB,
            theoretical_bw: 240_000_000_000,
            measured_bw: 191_000_000_000,
        },
        300,
        Generation::Kepler,
        true,
        vec![
            tlb("L1", 128 * KIB, 2 * MIB, true),
            tlb("L2", 2 * MIB, 128 * MIB, true),
            tlb("L3", 2 * MIB, 2048 * MIB, true),
        ],
        data_l1(16 * KIB, 128, 35),
    )
}
