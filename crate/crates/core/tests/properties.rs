//! Property tests over the codec, parser, bank analyzer and issue simulator.

use proptest::prelude::*;

use sasslab_core::banks::{analyze_conflicts, operand_roles};
use sasslab_core::control::{
    decode_control_section, encode_control_section, extract_controls, inject_controls,
    ControlInfo, ControlLayout, ControlSection,
};
use sasslab_core::issue::{schedule_warp, ScheduleOptions};
use sasslab_core::memhier::{detect_plateaus, icache_sweep};
use sasslab_core::profile::KIB;
use sasslab_core::sass::{
    parse_instruction, render_instruction, Immediate, Instruction, Operand, PredReg, Predicate,
    Program, Reg, UReg,
};
use sasslab_core::{load_profile, Generation};

fn arb_attrs() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(
        prop::sample::select(vec!["reuse".to_string(), "COL".to_string(), "ROW".to_string(), "H0".to_string()]),
        0..=2,
    )
    .prop_map(|mut attrs| {
        attrs.dedup();
        attrs
    })
}

fn arb_operand() -> impl Strategy<Value = Operand> {
    prop_oneof![
        (0u8..=254, arb_attrs()).prop_map(|(i, attrs)| Operand::GeneralReg { reg: Reg::R(i), attrs }),
        Just(Operand::GeneralReg { reg: Reg::RZ, attrs: vec![] }),
        (0u8..=62).prop_map(|i| Operand::UniformReg { reg: UReg::UR(i), attrs: vec![] }),
        Just(Operand::UniformReg { reg: UReg::URZ, attrs: vec![] }),
        (any::<bool>(), 0u8..=6).prop_map(|(negated, i)| Operand::PredicateReg {
            negated,
            reg: PredReg::P(i)
        }),
        (0u32..=17, 0i64..=0xFFFF).prop_map(|(bank, offset)| Operand::ConstRef { bank, offset }),
        (0u8..=254, -0x1000i64..=0x1000).prop_map(|(base, offset)| Operand::MemRef {
            base: Reg::R(base),
            base_attrs: vec![],
            offset
        }),
        (-(1i64 << 40)..(1i64 << 40), any::<bool>())
            .prop_map(|(value, hex)| Operand::Immediate(Immediate::Int { value, hex })),
        (-10_000i32..10_000).prop_map(|m| Operand::Immediate(Immediate::Float(f64::from(m) / 16.0))),
    ]
}

fn arb_instruction() -> impl Strategy<Value = Instruction> {
    let opcode = prop::string::string_regex("[A-Z][A-Z0-9]{1,5}").unwrap();
    let modifiers = prop::collection::vec(
        prop::string::string_regex("[A-Z0-9]{1,4}").unwrap(),
        0..=3,
    );
    let operands = prop::collection::vec(arb_operand(), 0..=5);
    let address = prop::option::of(0u64..=0xF_FFFF);
    let predicate = prop::option::of((any::<bool>(), 0u8..=6).prop_map(|(negated, i)| Predicate {
        negated,
        reg: PredReg::P(i),
    }));
    let raw_words = prop::option::of(prop::collection::vec(any::<u64>(), 1..=2));
    (opcode, modifiers, operands, address, predicate, raw_words).prop_map(
        |(opcode, modifiers, operands, address, predicate, raw_words)| Instruction {
            address,
            predicate,
            opcode,
            modifiers,
            operands,
            raw_words,
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn control_section_decode_encode_samples(v in 0u32..(1 << 21)) {
        let info = decode_control_section(v).unwrap();
        prop_assert_eq!(encode_control_section(&info).unwrap(), v);
    }

    #[test]
    fn rendered_instructions_reparse_identically(instr in arb_instruction()) {
        let text = render_instruction(&instr);
        let back = parse_instruction(&text).unwrap_or_else(|e| panic!("`{text}`: {e}"));
        prop_assert_eq!(back, instr);
    }

    #[test]
    fn pascal_extract_inject_round_trip(
        sections in prop::collection::vec(0u32..(1 << 21), 3),
        instr_words in prop::collection::vec(any::<u64>(), 3),
    ) {
        let layout = ControlLayout::for_generation(Generation::Pascal);
        let mut ctl = 0u64;
        for (i, s) in sections.iter().enumerate() {
            ctl |= u64::from(*s) << (21 * i);
        }
        let mut words = vec![ctl];
        words.extend(instr_words);
        let controls = extract_controls(&words, &layout).unwrap();
        let back = inject_controls(&words, &controls, &layout).unwrap();
        prop_assert_eq!(back, words);
    }

    #[test]
    fn turing_extract_inject_round_trip(
        section in 0u32..(1 << 21),
        lo in any::<u64>(),
        hi_low_bits in 0u64..(1 << 41),
    ) {
        let layout = ControlLayout::for_generation(Generation::Turing);
        // Control bits occupy pair bits 105..126; 126/127 must be zero.
        let hi = hi_low_bits | (u64::from(section) << 41);
        let words = vec![lo, hi];
        let controls = extract_controls(&words, &layout).unwrap();
        prop_assert_eq!(
            controls[0].decoded().unwrap(),
            &decode_control_section(section).unwrap()
        );
        let back = inject_controls(&words, &controls, &layout).unwrap();
        prop_assert_eq!(back, words);
    }
}

const ALU_OPCODES: &[&str] = &["FFMA", "FADD", "IADD3", "MOV", "IMAD", "SEL", "LOP3"];

fn arb_alu_instruction(max_reg: u8) -> impl Strategy<Value = Instruction> {
    (
        prop::sample::select(ALU_OPCODES.to_vec()),
        0..=max_reg,
        prop::collection::vec(0..=max_reg, 1..=3),
    )
        .prop_map(|(opcode, dest, sources)| {
            let mut operands = vec![Operand::reg(Reg::R(dest))];
            operands.extend(sources.into_iter().map(|i| Operand::reg(Reg::R(i))));
            Instruction::new(opcode, operands)
        })
}

fn arb_alu_program(len: usize, max_reg: u8) -> impl Strategy<Value = Program> {
    prop::collection::vec(arb_alu_instruction(max_reg), 1..=len)
        .prop_map(|instructions| Program::new(Generation::Turing, instructions))
}

/// Straightforward per-instruction port counter, independent of the
/// analyzer's incremental bookkeeping.
fn naive_conflicts(program: &Program, banks: u32, ports: u32) -> u32 {
    let mut total = 0;
    for instr in &program.instructions {
        let (_, sources) = operand_roles(instr);
        let mut regs: Vec<u8> = sources.iter().filter_map(|(_, op)| op.ported_register()).collect();
        regs.sort_unstable();
        regs.dedup();
        let mut demand = vec![0u32; banks as usize];
        for r in regs {
            demand[(u32::from(r) % banks) as usize] += 1;
        }
        total += demand.iter().map(|d| d.saturating_sub(ports)).sum::<u32>();
    }
    total
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn analyzer_matches_naive_port_counter(program in arb_alu_program(12, 32)) {
        for (name, banks, ports) in [("T4", 2u32, 2u32), ("P4", 4, 1), ("V100", 2, 2), ("K80", 4, 1)] {
            let profile = load_profile(name).unwrap();
            let report = analyze_conflicts(&program, &profile, false).unwrap();
            prop_assert_eq!(
                report.total_conflict_cycles,
                naive_conflicts(&program, banks, ports),
                "profile {}", name
            );
        }
    }

    #[test]
    fn destinations_never_affect_conflicts(
        program in arb_alu_program(10, 32),
        new_dests in prop::collection::vec(0u8..=254, 10),
    ) {
        let t4 = load_profile("T4").unwrap();
        let before = analyze_conflicts(&program, &t4, false).unwrap();
        let mut mutated = program.clone();
        for (instr, dest) in mutated.instructions.iter_mut().zip(new_dests) {
            instr.operands[0] = Operand::reg(Reg::R(dest));
        }
        let after = analyze_conflicts(&mutated, &t4, false).unwrap();
        prop_assert_eq!(before.total_conflict_cycles, after.total_conflict_cycles);
        for (a, b) in before.per_instruction.iter().zip(after.per_instruction.iter()) {
            prop_assert_eq!(a.conflict_cycles, b.conflict_cycles);
        }
    }

    #[test]
    fn two_source_instructions_never_conflict_on_dual_ported_banks(
        a in 0u8..=254, b in 0u8..=254, dest in 0u8..=254,
    ) {
        let t4 = load_profile("T4").unwrap();
        let program = Program::new(
            Generation::Turing,
            vec![Instruction::new("FADD", vec![
                Operand::reg(Reg::R(dest)),
                Operand::reg(Reg::R(a)),
                Operand::reg(Reg::R(b)),
            ])],
        );
        let report = analyze_conflicts(&program, &t4, false).unwrap();
        prop_assert_eq!(report.total_conflict_cycles, 0);
    }

    #[test]
    fn three_sources_conflict_iff_same_bank(
        a in 0u8..=250, b in 0u8..=250, c in 0u8..=250,
    ) {
        // Distinct registers, three sources, dual-ported two-bank model.
        prop_assume!(a != b && b != c && a != c);
        let t4 = load_profile("T4").unwrap();
        let program = Program::new(
            Generation::Turing,
            vec![Instruction::new("FFMA", vec![
                Operand::reg(Reg::R(254)),
                Operand::reg(Reg::R(a)),
                Operand::reg(Reg::R(b)),
                Operand::reg(Reg::R(c)),
            ])],
        );
        let report = analyze_conflicts(&program, &t4, false).unwrap();
        let same_bank = a % 2 == b % 2 && b % 2 == c % 2;
        prop_assert_eq!(report.total_conflict_cycles > 0, same_bank);
    }

    #[test]
    fn reuse_flags_never_increase_conflicts(program in arb_alu_program(10, 16)) {
        let t4 = load_profile("T4").unwrap();
        let base = analyze_conflicts(&program, &t4, false).unwrap();
        // Flag every repeated same-slot operand for reuse.
        let mut flagged = program.clone();
        for i in 0..flagged.instructions.len().saturating_sub(1) {
            let next_sources: Vec<(usize, Option<u8>)> = {
                let (_, s) = operand_roles(&flagged.instructions[i + 1]);
                s.iter().map(|(slot, op)| (*slot, op.ported_register())).collect()
            };
            let (_, cur) = operand_roles(&flagged.instructions[i]);
            let repeats: Vec<usize> = cur
                .iter()
                .filter(|(slot, op)| {
                    op.ported_register().is_some()
                        && next_sources.contains(&(*slot, op.ported_register()))
                })
                .map(|(slot, _)| *slot)
                .collect();
            let instr = &mut flagged.instructions[i];
            let store = sasslab_core::sass::is_store_opcode(&instr.opcode);
            let mut source_slot = 0usize;
            for (pos, op) in instr.operands.iter_mut().enumerate() {
                if pos == 0 && !store && matches!(op, Operand::GeneralReg { .. }) {
                    continue;
                }
                if repeats.contains(&source_slot) {
                    if let Operand::GeneralReg { attrs, .. } = op {
                        if !attrs.iter().any(|a| a == "reuse") {
                            attrs.push("reuse".to_string());
                        }
                    }
                }
                source_slot += 1;
            }
        }
        let has_flags = flagged
            .instructions
            .iter()
            .any(|i| i.operands.iter().any(|o| o.has_attr("reuse")));
        if has_flags {
            let with = analyze_conflicts(&flagged, &t4, true).unwrap();
            prop_assert!(with.total_conflict_cycles <= base.total_conflict_cycles);
        }
    }

    #[test]
    fn reassignment_never_increases_conflicts(program in arb_alu_program(16, 64)) {
        for name in ["T4", "P4"] {
            let profile = load_profile(name).unwrap();
            let before = analyze_conflicts(&program, &profile, false).unwrap().total_conflict_cycles;
            let result = sasslab_core::reassign::reassign_registers(&program, &profile, 255).unwrap();
            prop_assert!(result.report.total_conflict_cycles <= before, "profile {}", name);
        }
    }
}

fn arb_controls(len: usize) -> impl Strategy<Value = Vec<ControlInfo>> {
    prop::collection::vec(
        (0u8..=15, any::<bool>(), 0u8..=5, prop::option::of(0u8..=5)).prop_map(
            |(stall, yield_flag, wb, wait)| {
                let mut c = ControlInfo::with_stall(stall);
                c.yield_flag = yield_flag;
                c.write_barrier = wb;
                if let Some(w) = wait {
                    c.wait_mask = 1 << w;
                }
                c
            },
        ),
        len..=len,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn raising_a_stall_never_shortens_the_timeline(
        program in arb_alu_program(8, 32),
        controls in arb_controls(8),
        bump_at in 0usize..8,
        bump in 1u8..=4,
    ) {
        let t4 = load_profile("T4").unwrap();
        let n = program.instructions.len();
        let mut base = program.clone();
        base.controls = Some(controls[..n].iter().copied().map(ControlSection::Decoded).collect());
        let opts = ScheduleOptions::default();
        let before = schedule_warp(&base, &t4, &opts).unwrap();

        let mut bumped_controls = controls[..n].to_vec();
        let at = bump_at % n;
        bumped_controls[at].stall = bumped_controls[at].stall.saturating_add(bump).min(15);
        let mut bumped = program;
        bumped.controls = Some(bumped_controls.into_iter().map(ControlSection::Decoded).collect());
        let after = schedule_warp(&bumped, &t4, &opts).unwrap();
        prop_assert!(after.total_cycles >= before.total_cycles);
    }

    #[test]
    fn no_entry_issues_before_its_awaited_barriers(
        program in arb_alu_program(10, 32),
        controls in arb_controls(10),
    ) {
        let t4 = load_profile("T4").unwrap();
        let n = program.instructions.len();
        let mut p = program;
        p.controls = Some(controls[..n].iter().copied().map(ControlSection::Decoded).collect());
        let timeline = schedule_warp(&p, &t4, &ScheduleOptions::default()).unwrap();

        // Replay: barriers become pending when armed and clear at their
        // recorded cycles; a waiter may never issue earlier.
        let mut pending = [0u64; 6];
        for (entry, control) in timeline.entries.iter().zip(controls[..n].iter()) {
            for b in 0..6u8 {
                if control.wait_mask & (1 << b) != 0 {
                    prop_assert!(entry.issue_cycle >= pending[b as usize]);
                }
            }
            if control.write_barrier < 6 {
                let slot = &mut pending[control.write_barrier as usize];
                *slot = (*slot).max(entry.complete_cycle);
            }
            if control.read_barrier < 6 {
                let slot = &mut pending[control.read_barrier as usize];
                *slot = (*slot).max(entry.issue_cycle + 1);
            }
        }
    }
}

#[test]
fn plateau_detection_recovers_every_builtin_geometry() {
    for name in sasslab_core::builtin_profiles() {
        let profile = load_profile(name).unwrap();
        let curve = icache_sweep(&profile, None);
        let boundaries = detect_plateaus(&curve).unwrap();
        let expected: Vec<u64> = profile.icache_levels.iter().map(|c| c.size).collect();
        assert_eq!(boundaries.len(), expected.len(), "{name}: {boundaries:?}");
        for (found, cfg) in boundaries.iter().zip(&expected) {
            let step = if *cfg <= 64 * KIB { KIB } else { 64 * KIB };
            assert!(
                found.abs_diff(*cfg) <= step,
                "{name}: boundary {found} vs configured {cfg}"
            );
        }
    }
}
