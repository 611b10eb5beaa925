//! Subcommand implementations.

use std::io::Read;

use serde_json::json;

use sasslab_core::banks::analyze_conflicts;
use sasslab_core::control::{
    decode_control_section, encode_control_section, extract_controls, BundleOrder, ControlInfo,
    ControlLayout, ControlSection,
};
use sasslab_core::issue::{schedule_warp, simulate_multiwarp, MemAssumption, ScheduleOptions};
use sasslab_core::lint::lint;
use sasslab_core::memhier::{
    classify_pchase, const_icache_interaction, const_latency, detect_plateaus, icache_sweep,
    run_aggressor_victim, shared_bandwidth_bound, shared_latency, Access, AccessKind, AvPlacement,
    AvSpec, ConstLevel, MemSimOptions,
};
use sasslab_core::profile::{builtin_profiles, load_profile, validate_profile, GpuArchProfile};
use sasslab_core::reassign::reassign_registers;
use sasslab_core::sass::{parse_listing, render_program, Program};
use sasslab_core::Generation;

use crate::{CliError, Command, Common, Format, MemsimAction, ProfilesAction, EXIT_FINDINGS, EXIT_OK};

/// Accepts a builtin profile name, a profile file path, or a bare generation
/// name (mapped to a representative board).
fn resolve_arch(arch: &str) -> Result<GpuArchProfile, CliError> {
    match load_profile(arch) {
        Ok(p) => Ok(p),
        Err(sasslab_core::profile::ProfileError::UnknownProfile(_)) => {
            let generation: Generation =
                arch.parse().map_err(|_| CliError::input(format!("unknown architecture `{arch}`")))?;
            let representative = match generation {
                Generation::Turing => "T4",
                Generation::Volta => "V100",
                Generation::Pascal => "P4",
                Generation::Maxwell => "M60",
                Generation::Kepler => "K80",
            };
            Ok(load_profile(representative).expect("builtin"))
        }
        Err(e) => Err(CliError::input(e.to_string())),
    }
}

fn read_input(path: &str) -> Result<String, CliError> {
    if path == "-" {
        let mut buf = String::new();
        std::io::stdin()
            .read_to_string(&mut buf)
            .map_err(|e| CliError::input(format!("reading stdin: {e}")))?;
        Ok(buf)
    } else {
        std::fs::read_to_string(path).map_err(|e| CliError::input(format!("reading {path}: {e}")))
    }
}

fn load_program(path: &str, profile: &GpuArchProfile) -> Result<Program, CliError> {
    let text = read_input(path)?;
    let arch = sasslab_core::sass::detect_generation(&text).unwrap_or(profile.generation);
    parse_listing(&text, arch).map_err(|e| CliError::input(e.to_string()))
}

fn parse_hex_word(s: &str) -> Result<u64, CliError> {
    let t = s.trim();
    let t = t.strip_prefix("0x").or_else(|| t.strip_prefix("0X")).unwrap_or(t);
    u64::from_str_radix(t, 16).map_err(|e| CliError::input(format!("bad hex word `{s}`: {e}")))
}

fn parse_index_list(s: &str, max: u8) -> Result<Vec<u8>, CliError> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|part| {
            let i: u8 = part
                .trim()
                .parse()
                .map_err(|_| CliError::input(format!("bad index `{part}`")))?;
            if i > max {
                return Err(CliError::input(format!("index {i} exceeds {max}")));
            }
            Ok(i)
        })
        .collect()
}

fn control_json(info: &ControlInfo) -> serde_json::Value {
    json!({
        "reuse_flags": info.reuse_flags,
        "wait_mask": (0..6u8).filter(|b| info.waits_on(*b)).collect::<Vec<_>>(),
        "read_barrier": info.read_barrier,
        "write_barrier": info.write_barrier,
        "yield_flag": info.yield_flag,
        "stall": info.stall,
    })
}

fn control_text(info: &ControlInfo) -> String {
    let waits: Vec<String> = (0..6u8).filter(|b| info.waits_on(*b)).map(|b| b.to_string()).collect();
    let reuse: Vec<String> = (0..4)
        .filter(|i| info.reuse_flags[*i])
        .map(|i| i.to_string())
        .collect();
    format!(
        "stall={} yield={} wait=[{}] read={} write={} reuse=[{}]",
        info.stall,
        if info.yield_flag { 1 } else { 0 },
        waits.join(","),
        if info.read_barrier == 7 { "-".into() } else { info.read_barrier.to_string() },
        if info.write_barrier == 7 { "-".into() } else { info.write_barrier.to_string() },
        reuse.join(","),
    )
}

pub fn dispatch(command: Command) -> Result<u8, CliError> {
    match command {
        Command::Profiles { action } => profiles(action),
        Command::Parse { input, common } => cmd_parse(&input, &common),
        Command::DecodeCtl { words, section, ctl_offset, bundle_order, common } => {
            decode_ctl(&words, section.as_deref(), ctl_offset, bundle_order.as_deref(), &common)
        }
        Command::EncodeCtl { stall, yield_flag, read_barrier, write_barrier, wait, reuse, common } => {
            encode_ctl(stall, yield_flag, read_barrier, write_barrier, &wait, &reuse, &common)
        }
        Command::Banks { input, reuse, common } => cmd_banks(&input, reuse, &common),
        Command::Reassign { input, budget, common } => cmd_reassign(&input, budget, &common),
        Command::Schedule { input, assume, strict, common } => {
            cmd_schedule(&input, &assume, strict, &common)
        }
        Command::Multiwarp { warps, common } => cmd_multiwarp(&warps, &common),
        Command::Memsim { action } => memsim(action),
        Command::Lint { input, rules, common } => cmd_lint(&input, rules.as_deref(), &common),
    }
}

fn profiles(action: ProfilesAction) -> Result<u8, CliError> {
    match action {
        ProfilesAction::List { common } => {
            let names = builtin_profiles();
            match common.format {
                Format::Json => println!("{}", serde_json::to_string_pretty(&names).unwrap()),
                _ => {
                    for n in names {
                        println!("{n}");
                    }
                }
            }
            Ok(EXIT_OK)
        }
        ProfilesAction::Show { common } => {
            let p = resolve_arch(&common.arch)?;
            println!("{}", p.to_json());
            Ok(EXIT_OK)
        }
        ProfilesAction::Validate { common } => {
            // Reports violations rather than erroring, so a broken file can
            // be inspected; loading errors still exit 4.
            let p = match load_profile(&common.arch) {
                Ok(p) => p,
                Err(sasslab_core::profile::ProfileError::Invalid { name, violations }) => {
                    match common.format {
                        Format::Json => println!(
                            "{}",
                            serde_json::to_string_pretty(&json!({
                                "profile": name,
                                "violations": violations,
                            }))
                            .unwrap()
                        ),
                        _ => {
                            for v in &violations {
                                println!("{v}");
                            }
                        }
                    }
                    return Ok(EXIT_FINDINGS);
                }
                Err(e) => return Err(CliError::input(e.to_string())),
            };
            let violations = validate_profile(&p);
            match common.format {
                Format::Json => println!(
                    "{}",
                    serde_json::to_string_pretty(&json!({
                        "profile": p.name,
                        "violations": violations,
                    }))
                    .unwrap()
                ),
                _ => {
                    if violations.is_empty() {
                        println!("{}: ok", p.name);
                    } else {
                        for v in &violations {
                            println!("{v}");
                        }
                    }
                }
            }
            Ok(if violations.is_empty() { EXIT_OK } else { EXIT_FINDINGS })
        }
    }
}

fn cmd_parse(input: &str, common: &Common) -> Result<u8, CliError> {
    let profile = resolve_arch(&common.arch)?;
    let program = load_program(input, &profile)?;
    match common.format {
        Format::Json => println!("{}", serde_json::to_string_pretty(&program).unwrap()),
        _ => print!("{}", render_program(&program)),
    }
    Ok(EXIT_OK)
}

fn decode_ctl(
    words: &[String],
    section: Option<&str>,
    ctl_offset: Option<u32>,
    bundle_order: Option<&str>,
    common: &Common,
) -> Result<u8, CliError> {
    let profile = resolve_arch(&common.arch)?;
    let mut layout = ControlLayout::for_generation(profile.generation);
    if let Some(off) = ctl_offset {
        layout.turing_section_offset = off;
    }
    if let Some(order) = bundle_order {
        layout.bundle_order = order.parse::<BundleOrder>().map_err(CliError::input)?;
    }

    let sections: Vec<(String, serde_json::Value)> = if let Some(raw) = section {
        let value = parse_hex_word(raw)? as u32;
        let info = decode_control_section(value).map_err(|e| CliError::input(e.to_string()))?;
        vec![(control_text(&info), control_json(&info))]
    } else {
        if words.is_empty() {
            return Err(CliError::input("no words given; pass hex words or --section"));
        }
        let words: Vec<u64> = words.iter().map(|w| parse_hex_word(w)).collect::<Result<_, _>>()?;
        // Inputs are the words that carry control bits: standalone control
        // words on pre-Volta generations, 128-bit pairs on Turing/Volta.
        let stream: Vec<u64> = if profile.generation.has_embedded_control() {
            if words.len() % 2 != 0 {
                return Err(CliError::input("Turing/Volta instructions are pairs of 64-bit words"));
            }
            words
        } else {
            let pad = layout.words_per_unit() - 1;
            words
                .into_iter()
                .flat_map(|w| std::iter::once(w).chain(std::iter::repeat(0).take(pad)))
                .collect()
        };
        let controls =
            extract_controls(&stream, &layout).map_err(|e| CliError::input(e.to_string()))?;
        controls
            .iter()
            .map(|c| match c {
                ControlSection::Decoded(info) => (control_text(info), control_json(info)),
                ControlSection::Opaque(byte) => (
                    format!("opaque=0x{byte:02x}"),
                    json!({ "opaque": byte }),
                ),
            })
            .collect()
    };

    match common.format {
        Format::Json => {
            let items: Vec<serde_json::Value> = sections
                .iter()
                .enumerate()
                .map(|(i, (_, v))| json!({ "section": i, "fields": v }))
                .collect();
            println!("{}", serde_json::to_string_pretty(&items).unwrap());
        }
        _ => {
            for (i, (line, _)) in sections.iter().enumerate() {
                println!("section {i}: {line}");
            }
        }
    }
    Ok(EXIT_OK)
}

#[allow(clippy::too_many_arguments)]
fn encode_ctl(
    stall: u8,
    yield_flag: bool,
    read_barrier: u8,
    write_barrier: u8,
    wait: &str,
    reuse: &str,
    common: &Common,
) -> Result<u8, CliError> {
    let mut info = ControlInfo::with_stall(stall);
    info.yield_flag = yield_flag;
    info.read_barrier = read_barrier;
    info.write_barrier = write_barrier;
    for b in parse_index_list(wait, 5)? {
        info.wait_mask |= 1 << b;
    }
    for s in parse_index_list(reuse, 3)? {
        info.reuse_flags[s as usize] = true;
    }
    let value = encode_control_section(&info).map_err(|e| CliError::input(e.to_string()))?;
    match common.format {
        Format::Json => println!("{}", json!({ "section": format!("0x{value:06x}") })),
        _ => println!("0x{value:06x}"),
    }
    Ok(EXIT_OK)
}

fn cmd_banks(input: &str, reuse: bool, common: &Common) -> Result<u8, CliError> {
    let profile = resolve_arch(&common.arch)?;
    let program = load_program(input, &profile)?;
    let report =
        analyze_conflicts(&program, &profile, reuse).map_err(|e| CliError::input(e.to_string()))?;
    match common.format {
        Format::Json => println!("{}", serde_json::to_string_pretty(&report).unwrap()),
        _ => {
            for entry in &report.per_instruction {
                let addr = entry
                    .address
                    .map(|a| format!("{a:04x}"))
                    .unwrap_or_else(|| format!("#{}", entry.index));
                let banks: Vec<String> = entry
                    .port_demand
                    .iter()
                    .map(|(b, d)| format!("bank{b}={d}"))
                    .collect();
                println!(
                    "{addr} {:<6} conflicts={} reuse_hits={} [{}]",
                    entry.opcode,
                    entry.conflict_cycles,
                    entry.reuse_hits,
                    banks.join(" ")
                );
            }
            println!(
                "total: {} conflict cycle(s), {} reuse hit(s)",
                report.total_conflict_cycles, report.total_reuse_hits
            );
        }
    }
    Ok(EXIT_OK)
}

fn cmd_reassign(input: &str, budget: u32, common: &Common) -> Result<u8, CliError> {
    let profile = resolve_arch(&common.arch)?;
    let program = load_program(input, &profile)?;
    let result = reassign_registers(&program, &profile, budget)
        .map_err(|e| CliError::input(e.to_string()))?;
    match common.format {
        Format::Json => {
            let renaming: std::collections::BTreeMap<String, String> = result
                .renaming
                .iter()
                .map(|(from, to)| (format!("R{from}"), format!("R{to}")))
                .collect();
            println!(
                "{}",
                serde_json::to_string_pretty(&json!({
                    "renaming": renaming,
                    "conflict_cycles_before": result.original_conflict_cycles,
                    "conflict_cycles_after": result.report.total_conflict_cycles,
                    "listing": render_program(&result.program),
                }))
                .unwrap()
            );
        }
        _ => print!("{}", render_program(&result.program)),
    }
    Ok(EXIT_OK)
}

fn schedule_options(assume: &str, strict: bool) -> Result<ScheduleOptions, CliError> {
    let assume: MemAssumption = assume.parse().map_err(CliError::input)?;
    Ok(ScheduleOptions { assume, strict, ..ScheduleOptions::default() })
}

fn cmd_schedule(input: &str, assume: &str, strict: bool, common: &Common) -> Result<u8, CliError> {
    let profile = resolve_arch(&common.arch)?;
    let program = load_program(input, &profile)?;
    let options = schedule_options(assume, strict)?;
    let timeline =
        schedule_warp(&program, &profile, &options).map_err(|e| CliError::input(e.to_string()))?;
    match common.format {
        Format::Json => println!("{}", serde_json::to_string_pretty(&timeline).unwrap()),
        Format::Csv => {
            println!("index,address,opcode,latency_class,issue_cycle,complete_cycle,stall_source");
            for e in &timeline.entries {
                println!(
                    "{},{},{},{},{},{},{:?}",
                    e.index,
                    e.address.map(|a| format!("{a:#x}")).unwrap_or_default(),
                    e.opcode,
                    e.latency_class,
                    e.issue_cycle,
                    e.complete_cycle,
                    e.stall_source
                );
            }
        }
        Format::Text => {
            println!("{:<6} {:<8} {:<8} {:<16} {:>8} {:>10}  stall-source", "index", "addr", "opcode", "class", "issue", "complete");
            for e in &timeline.entries {
                println!(
                    "{:<6} {:<8} {:<8} {:<16} {:>8} {:>10}  {:?}",
                    e.index,
                    e.address.map(|a| format!("{a:04x}")).unwrap_or_else(|| "-".into()),
                    e.opcode,
                    e.latency_class,
                    e.issue_cycle,
                    e.complete_cycle,
                    e.stall_source
                );
            }
            println!("total: {} cycles, CPI {:.2}", timeline.total_cycles, timeline.cpi);
        }
    }
    Ok(EXIT_OK)
}

fn cmd_multiwarp(warps: &[String], common: &Common) -> Result<u8, CliError> {
    let profile = resolve_arch(&common.arch)?;
    let mut programs = Vec::new();
    for spec in warps {
        let (id, path) = spec
            .split_once('=')
            .ok_or_else(|| CliError::input(format!("--warp wants <id>=<path>, got `{spec}`")))?;
        let id: u32 = id.parse().map_err(|_| CliError::input(format!("bad warp id `{id}`")))?;
        let program = load_program(path, &profile)?;
        programs.push((id, program));
    }
    let assignments: Vec<(u32, &Program)> = programs.iter().map(|(id, p)| (*id, p)).collect();
    let report = simulate_multiwarp(&assignments, &profile, &ScheduleOptions::default())
        .map_err(|e| CliError::input(e.to_string()))?;
    match common.format {
        Format::Json => println!("{}", serde_json::to_string_pretty(&report).unwrap()),
        _ => {
            println!("scheduler,warps,instructions,busy_cycles,ipc");
            for s in &report.per_scheduler {
                let warps: Vec<String> = s.warps.iter().map(|w| w.to_string()).collect();
                println!(
                    "{},{},{},{},{:.4}",
                    s.scheduler,
                    warps.join("+"),
                    s.instructions,
                    s.busy_cycles,
                    s.ipc
                );
            }
            println!(
                "aggregate,,{},{},{:.4}",
                report.total_instructions, report.makespan_cycles, report.aggregate_ipc
            );
            if let Some(g) = report.gflops {
                println!("gflops,,,,{g:.1}");
            }
        }
    }
    Ok(EXIT_OK)
}

fn parse_trace_csv(text: &str) -> Result<Vec<Access>, CliError> {
    let mut out = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') || t.starts_with("index") {
            continue;
        }
        let fields: Vec<&str> = t.split(',').map(str::trim).collect();
        if fields.len() < 2 {
            return Err(CliError::input(format!("trace line {}: want index,address[,kind]", line_no + 1)));
        }
        let addr = if let Some(hex) = fields[1].strip_prefix("0x") {
            u64::from_str_radix(hex, 16)
        } else {
            fields[1].parse()
        }
        .map_err(|_| CliError::input(format!("trace line {}: bad address `{}`", line_no + 1, fields[1])))?;
        let kind = match fields.get(2).copied().unwrap_or("data-load") {
            "data-load" | "load" | "" => AccessKind::DataLoad,
            "instruction-fetch" => AccessKind::InstructionFetch,
            "const-load" => AccessKind::ConstLoad,
            "shared-load" => AccessKind::SharedLoad,
            other => return Err(CliError::input(format!("trace line {}: unknown kind `{other}`", line_no + 1))),
        };
        out.push(Access { warp: 0, sm: 0, block: 0, addr, kind });
    }
    Ok(out)
}

fn memsim(action: MemsimAction) -> Result<u8, CliError> {
    match action {
        MemsimAction::Pchase { trace, array_bytes, stride, rescan, no_l1, detected_l1, common } => {
            let profile = resolve_arch(&common.arch)?;
            let accesses: Vec<Access> = match (trace, array_bytes) {
                (Some(path), _) => parse_trace_csv(&read_input(&path)?)?,
                (None, Some(bytes)) => {
                    let stride = stride.max(1);
                    (0..bytes / stride).map(|i| Access::load(i * stride)).collect()
                }
                (None, None) => {
                    return Err(CliError::input("pass --trace or --array-bytes"));
                }
            };
            let options = MemSimOptions {
                l1_enabled: !no_l1,
                use_detected_l1: detected_l1,
                seed: common.seed,
            };
            let entries = classify_pchase(&accesses, &profile, rescan, options)
                .map_err(|e| CliError::input(e.to_string()))?;
            match common.format {
                Format::Json => println!("{}", serde_json::to_string_pretty(&entries).unwrap()),
                _ => {
                    println!("index,class,cycles");
                    for e in &entries {
                        println!("{},{},{}", e.index, e.class, e.cycles);
                    }
                }
            }
            Ok(EXIT_OK)
        }
        MemsimAction::IcacheSweep { max_bytes, detect, common } => {
            let profile = resolve_arch(&common.arch)?;
            let curve = icache_sweep(&profile, max_bytes);
            match common.format {
                Format::Json => {
                    let mut doc = json!({
                        "curve": curve.iter().map(|(s, c)| json!({"bytes": s, "cpi": c})).collect::<Vec<_>>(),
                    });
                    if detect {
                        let plateaus =
                            detect_plateaus(&curve).map_err(|e| CliError::input(e.to_string()))?;
                        doc["plateaus"] = json!(plateaus);
                    }
                    println!("{}", serde_json::to_string_pretty(&doc).unwrap());
                }
                _ => {
                    println!("bytes,cpi");
                    for (s, c) in &curve {
                        println!("{s},{c}");
                    }
                    if detect {
                        let plateaus =
                            detect_plateaus(&curve).map_err(|e| CliError::input(e.to_string()))?;
                        let sizes: Vec<String> = plateaus.iter().map(|p| p.to_string()).collect();
                        println!("# plateaus: {}", sizes.join(","));
                    }
                }
            }
            Ok(EXIT_OK)
        }
        MemsimAction::AggressorVictim { aggressor_bytes, victim_bytes, placement, common } => {
            let profile = resolve_arch(&common.arch)?;
            let placement: AvPlacement = placement.parse().map_err(CliError::input)?;
            let spec = AvSpec { aggressor_bytes, victim_bytes, placement };
            let (aggressor_cpi, victim_cpi) = run_aggressor_victim(&spec, &profile);
            match common.format {
                Format::Json => println!(
                    "{}",
                    serde_json::to_string_pretty(&json!({
                        "aggressor_cpi": aggressor_cpi,
                        "victim_cpi": victim_cpi,
                    }))
                    .unwrap()
                ),
                _ => {
                    println!("aggressor_cpi,{aggressor_cpi:.4}");
                    println!("victim_cpi,{victim_cpi:.4}");
                }
            }
            Ok(EXIT_OK)
        }
        MemsimAction::Shared { degree, sweep, bound, common } => {
            let profile = resolve_arch(&common.arch)?;
            if bound {
                let b = shared_bandwidth_bound(&profile);
                match common.format {
                    Format::Json => println!("{}", json!({ "bytes_per_second": b })),
                    _ => println!("{b}"),
                }
                return Ok(EXIT_OK);
            }
            if sweep {
                match common.format {
                    Format::Json => {
                        let rows: Vec<serde_json::Value> = (1..=profile.shared.banks)
                            .map(|d| {
                                let cycles = shared_latency(d, &profile).unwrap();
                                json!({"degree": d, "cycles": cycles})
                            })
                            .collect();
                        println!("{}", serde_json::to_string_pretty(&rows).unwrap());
                    }
                    _ => {
                        println!("degree,cycles");
                        for d in 1..=profile.shared.banks {
                            println!("{d},{}", shared_latency(d, &profile).unwrap());
                        }
                    }
                }
                return Ok(EXIT_OK);
            }
            let d = degree.unwrap_or(1);
            let cycles = shared_latency(d, &profile).map_err(|e| CliError::input(e.to_string()))?;
            match common.format {
                Format::Json => println!("{}", json!({ "degree": d, "cycles": cycles })),
                _ => println!("{cycles}"),
            }
            Ok(EXIT_OK)
        }
        MemsimAction::Const { count, level, aggressor_bytes, victim_bytes, common } => {
            let profile = resolve_arch(&common.arch)?;
            if let (Some(a), Some(v)) = (aggressor_bytes, victim_bytes) {
                let rate = const_icache_interaction(a, v, &profile);
                match common.format {
                    Format::Json => println!("{}", json!({ "victim_miss_rate": rate })),
                    _ => println!("{rate:.4}"),
                }
                return Ok(EXIT_OK);
            }
            let level: ConstLevel = level.parse().map_err(CliError::input)?;
            let cycles =
                const_latency(count, level, &profile).map_err(|e| CliError::input(e.to_string()))?;
            match common.format {
                Format::Json => println!("{}", json!({ "count": count, "cycles": cycles })),
                _ => println!("{cycles}"),
            }
            Ok(EXIT_OK)
        }
    }
}

fn cmd_lint(input: &str, rules: Option<&str>, common: &Common) -> Result<u8, CliError> {
    let profile = resolve_arch(&common.arch)?;
    let program = load_program(input, &profile)?;
    let rule_list: Option<Vec<String>> =
        rules.map(|r| r.split(',').map(|s| s.trim().to_string()).collect());
    let report = lint(&program, &profile, rule_list.as_deref())
        .map_err(|e| CliError::input(e.to_string()))?;
    match common.format {
        Format::Json => println!("{}", serde_json::to_string_pretty(&report).unwrap()),
        _ => {
            for f in &report.findings {
                let addr = f
                    .address
                    .map(|a| format!("{a:04x}"))
                    .unwrap_or_else(|| format!("#{}", f.index));
                println!("{addr} [{}] {}", f.rule, f.message);
                if let Some(s) = &f.suggestion {
                    println!("     hint: {s}");
                }
            }
            let total: usize = report.summary.values().sum();
            println!("{total} finding(s)");
        }
    }
    Ok(if report.is_clean() { EXIT_OK } else { EXIT_FINDINGS })
}
