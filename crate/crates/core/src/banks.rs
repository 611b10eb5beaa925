//! Register-file bank model and per-instruction conflict accounting.
//!
//! Turing/Volta register files have 2 banks with dual ports; earlier
//! generations have 4 single-ported banks. A register's bank is its index
//! modulo the bank count. An instruction stalls when the reads it issues to
//! one bank exceed that bank's ports; the operand reuse cache can absorb
//! repeated reads and avoid ports entirely.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::control::ControlSection;
use crate::profile::GpuArchProfile;
use crate::sass::{is_store_opcode, Instruction, Operand, Program, Reg};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BankError {
    #[error("{what} has no register bank")]
    NotBankable { what: String },
    #[error("reuse modeling requested but the program has neither control sections nor `.reuse` operand attributes")]
    MissingControls,
    #[error("register budget {budget} cannot hold the {needed} registers in use")]
    InfeasibleBudget { budget: u32, needed: u32 },
    #[error("control flow too irregular to rename safely: {0}")]
    UnsupportedControlFlow(String),
}

/// Bank geometry for one generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BankModel {
    pub banks: u32,
    pub width_bits: u32,
    pub ports_per_bank: u32,
    pub conflict_penalty: u32,
}

impl BankModel {
    pub fn from_profile(profile: &GpuArchProfile) -> Self {
        BankModel {
            banks: profile.register_banks,
            width_bits: profile.register_bank_width_bits,
            ports_per_bank: profile.register_bank_ports,
            conflict_penalty: profile.bank_conflict_penalty_cycles,
        }
    }

    pub fn bank_of(&self, reg_index: u8) -> u32 {
        u32::from(reg_index) % self.banks
    }
}

/// Bank of a numbered general register. RZ, uniform registers and predicates
/// do not occupy banks.
pub fn register_bank(operand: &Operand, profile: &GpuArchProfile) -> Result<u32, BankError> {
    let model = BankModel::from_profile(profile);
    match operand {
        Operand::GeneralReg { reg: Reg::R(i), .. } => Ok(model.bank_of(*i)),
        other => Err(BankError::NotBankable { what: describe_operand(other) }),
    }
}

fn describe_operand(op: &Operand) -> String {
    match op {
        Operand::GeneralReg { reg, .. } => reg.to_string(),
        Operand::UniformReg { reg, .. } => reg.to_string(),
        Operand::PredicateReg { reg, .. } => reg.to_string(),
        Operand::ConstRef { .. } => "a constant reference".into(),
        Operand::MemRef { .. } => "a memory reference".into(),
        Operand::Immediate(_) => "an immediate".into(),
    }
}

/// A source-operand read in a given reuse slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SourceRead {
    pub slot: usize,
    pub reg: u8,
    pub bank: u32,
    pub reuse_hit: bool,
}

/// Splits an instruction's operands into the written register (if any) and
/// the ordered source-operand list. The first operand of a non-store
/// instruction is its destination when it is a general register; everything
/// else that names a general register reads through the register file.
pub fn operand_roles(instr: &Instruction) -> (Option<u8>, Vec<(usize, &Operand)>) {
    let mut dest = None;
    let mut sources = Vec::new();
    let store = is_store_opcode(&instr.opcode);
    for (pos, op) in instr.operands.iter().enumerate() {
        if pos == 0 && !store {
            if let Operand::GeneralReg { .. } = op {
                dest = op.ported_register();
                continue;
            }
        }
        sources.push(op);
    }
    (dest, sources.into_iter().enumerate().collect())
}

/// Reuse cache: a 2-entry set per source-operand slot, replaced
/// least-recently-written.
#[derive(Debug, Clone, Default)]
pub struct ReuseCacheState {
    slots: [ReuseSlot; 4],
}

#[derive(Debug, Clone, Default)]
struct ReuseSlot {
    entries: [Option<u8>; 2],
    /// Index written least recently; the next victim.
    oldest: usize,
}

impl ReuseCacheState {
    pub fn contains(&self, slot: usize, reg: u8) -> bool {
        slot < 4 && self.slots[slot].entries.iter().any(|e| *e == Some(reg))
    }

    pub fn save(&mut self, slot: usize, reg: u8) {
        if slot >= 4 {
            return;
        }
        let s = &mut self.slots[slot];
        if s.entries.iter().any(|e| *e == Some(reg)) {
            return;
        }
        s.entries[s.oldest] = Some(reg);
        s.oldest = (s.oldest + 1) % 2;
    }

    pub fn clear(&mut self) {
        *self = ReuseCacheState::default();
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct InstructionConflicts {
    pub index: usize,
    pub address: Option<u64>,
    pub opcode: String,
    pub reads: Vec<SourceRead>,
    /// Port demand per bank after reuse hits are taken out.
    pub port_demand: BTreeMap<u32, u32>,
    pub conflict_cycles: u32,
    pub reuse_hits: u32,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConflictReport {
    pub per_instruction: Vec<InstructionConflicts>,
    pub total_conflict_cycles: u32,
    pub total_reuse_hits: u32,
    pub reuse_modeled: bool,
}

/// Where per-instruction reuse flags come from.
enum ReuseFlags<'a> {
    Controls(&'a [ControlSection]),
    Attrs,
    Off,
}

fn reuse_flag(source: &ReuseFlags, index: usize, slot: usize, op: &Operand) -> bool {
    match source {
        ReuseFlags::Off => false,
        ReuseFlags::Attrs => op.has_attr("reuse"),
        ReuseFlags::Controls(controls) => controls
            .get(index)
            .and_then(|c| c.decoded())
            .map(|c| slot < 4 && c.reuse_flags[slot])
            .unwrap_or(false),
    }
}

/// Counts bank conflicts for every instruction.
///
/// With `model_reuse` the reuse cache absorbs reads of registers captured by
/// earlier reuse flags (from control sections when present, else `.reuse`
/// operand attributes); an instruction whose control clears the yield flag
/// invalidates reuse for the following instruction.
pub fn analyze_conflicts(
    program: &Program,
    profile: &GpuArchProfile,
    model_reuse: bool,
) -> Result<ConflictReport, BankError> {
    let model = BankModel::from_profile(profile);
    let flags = if !model_reuse {
        ReuseFlags::Off
    } else if let Some(controls) = &program.controls {
        ReuseFlags::Controls(controls)
    } else if program.instructions.iter().any(|i| i.operands.iter().any(|o| o.has_attr("reuse"))) {
        ReuseFlags::Attrs
    } else {
        return Err(BankError::MissingControls);
    };

    let mut cam = ReuseCacheState::default();
    let mut suppress_reuse = false;
    let mut per_instruction = Vec::with_capacity(program.instructions.len());
    let mut total_conflicts = 0u32;
    let mut total_hits = 0u32;

    for (index, instr) in program.instructions.iter().enumerate() {
        let (_dest, sources) = operand_roles(instr);
        let mut reads = Vec::new();
        // reg -> (banked, any reuse hit). Repeated reads of one register in a
        // single instruction share a port.
        let mut per_reg: BTreeMap<u8, bool> = BTreeMap::new();
        for (slot, op) in &sources {
            if let Some(reg) = op.ported_register() {
                let hit = model_reuse && !suppress_reuse && cam.contains(*slot, reg);
                reads.push(SourceRead { slot: *slot, reg, bank: model.bank_of(reg), reuse_hit: hit });
                let e = per_reg.entry(reg).or_insert(false);
                *e |= hit;
            }
        }

        let mut demand: BTreeMap<u32, u32> = BTreeMap::new();
        let mut hits = 0u32;
        for (reg, hit) in &per_reg {
            if *hit {
                hits += 1;
            } else {
                *demand.entry(model.bank_of(*reg)).or_insert(0) += 1;
            }
        }
        let conflict_cycles: u32 = demand
            .values()
            .map(|d| d.saturating_sub(model.ports_per_bank) * model.conflict_penalty)
            .sum();

        // Capture flagged operands for later instructions, unless a cleared
        // yield on the previous instruction voided this one's flags.
        if model_reuse && !suppress_reuse {
            for (slot, op) in &sources {
                if *slot < 4 && reuse_flag(&flags, index, *slot, op) {
                    if let Some(reg) = op.ported_register() {
                        cam.save(*slot, reg);
                    }
                }
            }
        }
        if model_reuse {
            let yielded = match &flags {
                ReuseFlags::Controls(controls) => {
                    controls.get(index).and_then(|c| c.decoded()).map(|c| c.yield_flag).unwrap_or(true)
                }
                _ => true,
            };
            suppress_reuse = !yielded;
            if suppress_reuse {
                // The warp switches away; the operand cache is stale on return.
                cam.clear();
            }
        }

        total_conflicts += conflict_cycles;
        total_hits += hits;
        per_instruction.push(InstructionConflicts {
            index,
            address: instr.address,
            opcode: instr.opcode.clone(),
            reads,
            port_demand: demand,
            conflict_cycles,
            reuse_hits: hits,
        });
    }

    Ok(ConflictReport {
        per_instruction,
        total_conflict_cycles: total_conflicts,
        total_reuse_hits: total_hits,
        reuse_modeled: model_reuse,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::ControlInfo;
    use crate::profile::load_profile;
    use crate::sass::parse_listing;

    fn t4() -> GpuArchProfile {
        load_profile("T4").unwrap()
    }

    fn program(listing: &str) -> Program {
        parse_listing(listing, crate::profile::Generation::Turing).unwrap()
    }

    #[test]
    fn bank_is_index_modulo_bank_count() {
        let t4 = t4();
        let p4 = load_profile("P4").unwrap();
        let r = |i| Operand::reg(Reg::R(i));
        assert_eq!(register_bank(&r(97), &t4).unwrap(), 1);
        assert_eq!(register_bank(&r(99), &t4).unwrap(), 1);
        assert_eq!(register_bank(&r(98), &t4).unwrap(), 0);
        for i in [10u8, 12, 16] {
            assert_eq!(register_bank(&r(i), &t4).unwrap(), 0);
        }
        assert_eq!(register_bank(&r(7), &p4).unwrap(), 3);
        assert!(matches!(
            register_bank(&Operand::reg(Reg::RZ), &t4),
            Err(BankError::NotBankable { .. })
        ));
    }

    #[test]
    fn dual_ported_banks_absorb_two_reads() {
        // R11 and R13 share bank 1's two ports; R12 takes one of bank 0's.
        let p = program("FFMA R15, R11, R12, R13 ;");
        let report = analyze_conflicts(&p, &t4(), false).unwrap();
        assert_eq!(report.total_conflict_cycles, 0);
    }

    #[test]
    fn three_reads_from_one_bank_conflict() {
        let p = program("FFMA R18, R10, R12, R16 ;");
        let report = analyze_conflicts(&p, &t4(), false).unwrap();
        assert_eq!(report.total_conflict_cycles, 1);
        assert_eq!(report.per_instruction[0].port_demand.get(&0), Some(&3));
    }

    #[test]
    fn rx_parity_decides_the_conflict() {
        let t4 = t4();
        for rx in 0..40u8 {
            let p = program(&format!("FFMA R6, R97, R99, R{rx} ;"));
            let report = analyze_conflicts(&p, &t4, false).unwrap();
            let expect = if rx % 2 == 1 && rx != 97 && rx != 99 { 1 } else { 0 };
            assert_eq!(report.total_conflict_cycles, expect, "RX = R{rx}");

            // With R98/R99 split across banks no third read can pile onto one
            // dual-ported bank.
            let p = program(&format!("FFMA R6, R98, R99, R{rx} ;"));
            let report = analyze_conflicts(&p, &t4, false).unwrap();
            assert_eq!(report.total_conflict_cycles, 0, "RX = R{rx}");
        }
    }

    #[test]
    fn destination_never_contributes() {
        // All three of R10/R12/R16 in bank 0 conflict regardless of R6 vs R7.
        for dest in ["R6", "R7"] {
            let p = program(&format!("FFMA {dest}, R10, R12, R16 ;"));
            let report = analyze_conflicts(&p, &t4(), false).unwrap();
            assert_eq!(report.total_conflict_cycles, 1);
        }
    }

    #[test]
    fn stores_have_no_destination() {
        let p = program("STG.E.SYS [R2], R4 ;");
        let (dest, sources) = operand_roles(&p.instructions[0]);
        assert_eq!(dest, None);
        assert_eq!(sources.len(), 2);
    }

    #[test]
    fn reuse_attribute_absorbs_a_port() {
        let t4 = t4();
        // Back-to-back FFMAs reading R97 in slot 0; the first flags it.
        let with_reuse = program(
            "FFMA R6, R97.reuse, R99, R5 ;\n\
             FFMA R8, R97, R99, R5 ;\n",
        );
        let without = program(
            "FFMA R6, R97, R99, R5 ;\n\
             FFMA R8, R97, R99, R5 ;\n",
        );
        let hit = analyze_conflicts(&with_reuse, &t4, true).unwrap();
        let miss = analyze_conflicts(&without, &t4, false).unwrap();
        assert_eq!(hit.per_instruction[1].reuse_hits, 1);
        assert!(hit.per_instruction[1].conflict_cycles < miss.per_instruction[1].conflict_cycles);
        assert_eq!(miss.total_conflict_cycles, 2);
        assert_eq!(hit.total_conflict_cycles, 1);
    }

    #[test]
    fn missing_reuse_sources_is_an_error() {
        let p = program("FFMA R6, R97, R99, R5 ;");
        assert!(matches!(analyze_conflicts(&p, &t4(), true), Err(BankError::MissingControls)));
    }

    #[test]
    fn cleared_yield_voids_reuse_for_the_next_instruction() {
        let mut p = program(
            "FFMA R6, R97.reuse, R99, R5 ;\n\
             FFMA R8, R97, R99, R5 ;\n",
        );
        let mut keep = ControlInfo::with_stall(1);
        keep.reuse_flags[0] = true;
        let mut switch = keep;
        switch.yield_flag = false;
        p.controls = Some(vec![
            ControlSection::Decoded(switch),
            ControlSection::Decoded(keep),
        ]);
        let report = analyze_conflicts(&p, &t4(), true).unwrap();
        assert_eq!(report.per_instruction[1].reuse_hits, 0);
        assert_eq!(report.per_instruction[1].conflict_cycles, 1);
    }

    #[test]
    fn four_single_ported_banks_count_excess_reads() {
        let p4 = load_profile("P4").unwrap();
        // R4 and R8 are both bank 0, R5 bank 1: one excess read on bank 0.
        let p = program("FFMA R2, R4, R8, R5 ;");
        let report = analyze_conflicts(&p, &p4, false).unwrap();
        assert_eq!(report.total_conflict_cycles, 1);
        // All three in bank 0: two excess reads.
        let p = program("FFMA R2, R4, R8, R12 ;");
        let report = analyze_conflicts(&p, &p4, false).unwrap();
        assert_eq!(report.total_conflict_cycles, 2);
    }

    #[test]
    fn repeated_register_shares_a_port() {
        let p = program("FFMA R6, R97, R97, R97 ;");
        let report = analyze_conflicts(&p, &t4(), false).unwrap();
        assert_eq!(report.total_conflict_cycles, 0);
    }
}
