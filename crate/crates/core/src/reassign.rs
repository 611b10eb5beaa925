//! Conflict-minimizing register renaming.
//!
//! A renaming here is a uniform injective map over numbered general
//! registers, applied to every occurrence, so it preserves semantics on any
//! control flow the tool accepts. Registers tied together by wide operands
//! (64/128-bit groups, extended addresses) move as aligned units. Conflict
//! cycles depend only on each unit's bank residue, so the search space is the
//! per-unit residue assignment; concrete indices are materialized afterwards.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::banks::{analyze_conflicts, BankError, BankModel, ConflictReport};
use crate::profile::GpuArchProfile;
use crate::sass::{access_width, is_memory_opcode, Instruction, Operand, Program, Reg};

/// Exhaustive residue search is exact up to this many renameable units.
const EXHAUSTIVE_UNIT_LIMIT: usize = 8;
const GREEDY_RESTARTS: usize = 8;
const SEARCH_SEED: u64 = 0x5a55_1ab5;

#[derive(Debug, Clone)]
pub struct ReassignResult {
    /// Old register index -> new register index, for every register in use.
    pub renaming: BTreeMap<u8, u8>,
    pub program: Program,
    pub report: ConflictReport,
    pub original_conflict_cycles: u32,
}

/// A group of registers that must be renamed together, keeping alignment.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Unit {
    /// Member registers, consecutive from `regs[0]`.
    regs: Vec<u8>,
    /// Required base alignment: 1, 2 or 4.
    alignment: u8,
}

fn double_precision(opcode: &str) -> bool {
    matches!(opcode, "DADD" | "DMUL" | "DFMA" | "DMNMX" | "DSET" | "DSETP")
}

/// Registers that form a wide group starting at `base`.
fn group_span(base: u8, words: u8) -> Vec<u8> {
    (0..words).map(|i| base.saturating_add(i)).collect()
}

fn wide_groups(instr: &Instruction) -> Vec<Vec<u8>> {
    let mut groups = Vec::new();
    if is_memory_opcode(&instr.opcode) {
        let data_words = (access_width(instr).unwrap_or(32) / 32).max(1) as u8;
        let extended = instr.has_modifier("E");
        for op in &instr.operands {
            match op {
                Operand::GeneralReg { reg: Reg::R(i), .. } if data_words > 1 => {
                    groups.push(group_span(*i, data_words));
                }
                Operand::MemRef { base: Reg::R(i), .. } if extended => {
                    groups.push(group_span(*i, 2));
                }
                _ => {}
            }
        }
    } else if double_precision(&instr.opcode) {
        for op in &instr.operands {
            if let Operand::GeneralReg { reg: Reg::R(i), .. } = op {
                groups.push(group_span(*i, 2));
            }
        }
    }
    groups
}

/// Accepts straight-line code or a single backward branch (a simple loop);
/// anything else is refused rather than renamed unsoundly.
fn check_control_flow(program: &Program) -> Result<(), BankError> {
    let mut branches = 0;
    for instr in &program.instructions {
        if matches!(instr.opcode.as_str(), "BRA" | "BRX" | "JMP" | "JMX" | "CAL" | "JCAL" | "RET" | "BRK") {
            if matches!(instr.opcode.as_str(), "BRA" | "JMP") {
                branches += 1;
                let backward = match (&instr.operands.first(), instr.address) {
                    (Some(Operand::Immediate(crate::sass::Immediate::Int { value, .. })), Some(addr)) => {
                        *value >= 0 && (*value as u64) <= addr
                    }
                    // Without addresses the direction is unknowable; a single
                    // branch is still treated as a simple loop.
                    _ => true,
                };
                if !backward {
                    return Err(BankError::UnsupportedControlFlow(
                        "forward branch target".to_string(),
                    ));
                }
            } else {
                return Err(BankError::UnsupportedControlFlow(format!(
                    "{} is not supported",
                    instr.opcode
                )));
            }
        }
    }
    if branches > 1 {
        return Err(BankError::UnsupportedControlFlow(format!(
            "{branches} branches; only a single backward loop branch is supported"
        )));
    }
    Ok(())
}

fn collect_units(program: &Program) -> Vec<Unit> {
    // Union-find over register indices, seeded by wide-operand groups.
    let mut parent: Vec<u8> = (0..=254).collect();
    fn find(parent: &mut Vec<u8>, x: u8) -> u8 {
        let mut root = x;
        while parent[root as usize] != root {
            root = parent[root as usize];
        }
        let mut cur = x;
        while parent[cur as usize] != root {
            let next = parent[cur as usize];
            parent[cur as usize] = root;
            cur = next;
        }
        root
    }
    let mut used: BTreeSet<u8> = BTreeSet::new();
    for instr in &program.instructions {
        for op in &instr.operands {
            if let Some(r) = op.ported_register() {
                used.insert(r);
            }
            if let Operand::GeneralReg { reg: Reg::R(r), .. } = op {
                used.insert(*r);
            }
        }
        for group in wide_groups(instr) {
            for r in &group {
                used.insert(*r);
            }
            for pair in group.windows(2) {
                let (a, b) = (find(&mut parent, pair[0]), find(&mut parent, pair[1]));
                if a != b {
                    parent[b as usize] = a;
                }
            }
        }
    }
    let mut members: BTreeMap<u8, Vec<u8>> = BTreeMap::new();
    for r in used {
        members.entry(find(&mut parent, r)).or_default().push(r);
    }
    members
        .into_values()
        .map(|mut regs| {
            regs.sort_unstable();
            let alignment = match regs.len() {
                1 => 1,
                2 => 2,
                _ => 4,
            };
            Unit { regs, alignment }
        })
        .collect()
}

/// Concrete base indices for each unit given per-unit residues, packing into
/// the lowest free registers that keep each unit's residue and alignment.
/// Returns None when the budget cannot hold them.
fn materialize(units: &[Unit], residues: &[u8], banks: u32, budget: u32) -> Option<Vec<u8>> {
    let mut taken = vec![false; budget as usize];
    let mut bases = Vec::with_capacity(units.len());
    for (unit, residue) in units.iter().zip(residues) {
        let span = unit.regs.len() as u32;
        let stride = match unit.alignment {
            1 => banks,
            2 => {
                if banks == 4 {
                    4
                } else {
                    2
                }
            }
            _ => 4,
        };
        let mut base = u32::from(*residue);
        let mut found = None;
        while base + span <= budget {
            if (base..base + span).all(|i| !taken[i as usize]) {
                found = Some(base);
                break;
            }
            base += stride;
        }
        let base = found?;
        for i in base..base + span {
            taken[i as usize] = true;
        }
        bases.push(base as u8);
    }
    Some(bases)
}

/// Enumerates each unit's admissible residues for the given bank model.
/// A pair spans two banks, so on a 2-bank model its placement is fixed; on a
/// 4-bank model it can start at residue 0 or 2. Quads cover every bank.
fn residue_choices(unit: &Unit, model: &BankModel) -> Vec<u8> {
    match (unit.alignment, model.banks) {
        (1, b) => (0..b as u8).collect(),
        (2, 4) => vec![0, 2],
        _ => vec![0],
    }
}

fn apply_renaming(program: &Program, map: &BTreeMap<u8, u8>) -> Program {
    let mut renamed = program.clone();
    for instr in &mut renamed.instructions {
        for op in &mut instr.operands {
            match op {
                Operand::GeneralReg { reg: Reg::R(i), .. } => {
                    if let Some(n) = map.get(i) {
                        *i = *n;
                    }
                }
                Operand::MemRef { base: Reg::R(i), .. } => {
                    if let Some(n) = map.get(i) {
                        *i = *n;
                    }
                }
                _ => {}
            }
        }
    }
    renamed
}

fn score(program: &Program, profile: &GpuArchProfile) -> u32 {
    analyze_conflicts(program, profile, false)
        .map(|r| r.total_conflict_cycles)
        .unwrap_or(u32::MAX)
}

fn renaming_from(units: &[Unit], bases: &[u8]) -> BTreeMap<u8, u8> {
    let mut map = BTreeMap::new();
    for (unit, base) in units.iter().zip(bases) {
        for (k, reg) in unit.regs.iter().enumerate() {
            map.insert(*reg, base + k as u8);
        }
    }
    map
}

/// Searches for a renaming that lowers total conflict cycles; never returns
/// one that raises them. Exhaustive over residue assignments for small
/// programs, greedy descent with restarts otherwise.
pub fn reassign_registers(
    program: &Program,
    profile: &GpuArchProfile,
    budget: u32,
) -> Result<ReassignResult, BankError> {
    check_control_flow(program)?;
    let units = collect_units(program);
    let needed: u32 = units.iter().map(|u| u.regs.len() as u32).sum();
    if needed > budget {
        return Err(BankError::InfeasibleBudget { budget, needed });
    }
    let model = BankModel::from_profile(profile);
    let identity: BTreeMap<u8, u8> =
        units.iter().flat_map(|u| u.regs.iter().map(|r| (*r, *r))).collect();
    let baseline = score(program, profile);

    let mut best_map = identity.clone();
    let mut best_score = baseline;

    let consider = |map: BTreeMap<u8, u8>, best_map: &mut BTreeMap<u8, u8>, best_score: &mut u32| {
        let candidate = apply_renaming(program, &map);
        let s = score(&candidate, profile);
        if s < *best_score {
            *best_score = s;
            *best_map = map;
        }
    };

    if units.len() <= EXHAUSTIVE_UNIT_LIMIT {
        let choices: Vec<Vec<u8>> = units.iter().map(|u| residue_choices(u, &model)).collect();
        let mut residues = vec![0u8; units.len()];
        enumerate(&choices, &mut residues, 0, &mut |residues| {
            if let Some(bases) = materialize(&units, residues, model.banks, budget) {
                consider(renaming_from(&units, &bases), &mut best_map, &mut best_score);
            }
        });
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(SEARCH_SEED);
        for _ in 0..GREEDY_RESTARTS {
            let mut order: Vec<usize> = (0..units.len()).collect();
            order.shuffle(&mut rng);
            let mut residues: Vec<u8> = units
                .iter()
                .map(|u| (u.regs[0] % model.banks as u8) & !(u.alignment - 1))
                .collect();
            let mut improved = true;
            while improved {
                improved = false;
                for &ui in &order {
                    let mut local_best = residues[ui];
                    let mut local_score = materialize(&units, &residues, model.banks, budget)
                        .map(|b| score(&apply_renaming(program, &renaming_from(&units, &b)), profile))
                        .unwrap_or(u32::MAX);
                    for r in residue_choices(&units[ui], &model) {
                        if r == residues[ui] {
                            continue;
                        }
                        let mut alt = residues.clone();
                        alt[ui] = r;
                        if let Some(bases) = materialize(&units, &alt, model.banks, budget) {
                            let s = score(&apply_renaming(program, &renaming_from(&units, &bases)), profile);
                            if s < local_score {
                                local_score = s;
                                local_best = r;
                                improved = true;
                            }
                        }
                    }
                    residues[ui] = local_best;
                }
            }
            if let Some(bases) = materialize(&units, &residues, model.banks, budget) {
                consider(renaming_from(&units, &bases), &mut best_map, &mut best_score);
            }
        }
    }

    let (map, renamed) = if best_score < baseline {
        let renamed = apply_renaming(program, &best_map);
        (best_map, renamed)
    } else {
        (identity, program.clone())
    };
    let report = analyze_conflicts(&renamed, profile, false)?;
    Ok(ReassignResult {
        renaming: map,
        program: renamed,
        report,
        original_conflict_cycles: baseline,
    })
}

fn enumerate(choices: &[Vec<u8>], current: &mut Vec<u8>, depth: usize, visit: &mut impl FnMut(&[u8])) {
    if depth == choices.len() {
        visit(current);
        return;
    }
    for &c in &choices[depth] {
        current[depth] = c;
        enumerate(choices, current, depth + 1, visit);
    }
}
