//! Rule-based diagnostics over parsed programs: narrow global accesses,
//! register-bank conflicts, missed reuse opportunities, and control-word
//! anomalies.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::banks::{analyze_conflicts, operand_roles};
use crate::control::ControlSection;
use crate::profile::{Generation, GpuArchProfile};
use crate::sass::{access_width, Immediate, Instruction, Operand, Program};

pub const RULE_NARROW_ACCESS: &str = "narrow-global-access";
pub const RULE_BANK_CONFLICT: &str = "bank-conflict";
pub const RULE_REUSE_OPPORTUNITY: &str = "reuse-opportunity";
pub const RULE_CONTROL_ANOMALY: &str = "control-anomaly";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LintError {
    #[error("unknown lint rule `{0}`")]
    UnknownRuleId(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Info,
    Warn,
    Perf,
}

#[derive(Debug, Clone, Serialize)]
pub struct LintRule {
    pub id: &'static str,
    pub severity: Severity,
    pub applies_to: Vec<Generation>,
}

pub fn builtin_rules() -> Vec<LintRule> {
    let all = Generation::all().to_vec();
    vec![
        LintRule { id: RULE_NARROW_ACCESS, severity: Severity::Perf, applies_to: all.clone() },
        LintRule { id: RULE_BANK_CONFLICT, severity: Severity::Perf, applies_to: all.clone() },
        LintRule { id: RULE_REUSE_OPPORTUNITY, severity: Severity::Perf, applies_to: all.clone() },
        LintRule { id: RULE_CONTROL_ANOMALY, severity: Severity::Warn, applies_to: all },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Finding {
    pub rule: String,
    pub severity: Severity,
    /// Index of the instruction in the program.
    pub index: usize,
    pub address: Option<u64>,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub suggestion: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReportDocument {
    pub findings: Vec<Finding>,
    pub summary: BTreeMap<String, usize>,
}

impl ReportDocument {
    pub fn is_clean(&self) -> bool {
        self.findings.is_empty()
    }
}

fn is_global_access(instr: &Instruction) -> bool {
    matches!(instr.opcode.as_str(), "LDG" | "STG" | "LD" | "ST")
}

fn branch_target(instr: &Instruction) -> Option<u64> {
    if instr.opcode != "BRA" && instr.opcode != "JMP" {
        return None;
    }
    match instr.operands.first() {
        Some(Operand::Immediate(Immediate::Int { value, .. })) if *value >= 0 => Some(*value as u64),
        _ => None,
    }
}

/// Instruction indices covered by a backward branch (a loop body, by the
/// listing-level approximation).
fn loop_members(program: &Program) -> BTreeSet<usize> {
    let mut members = BTreeSet::new();
    for (i, instr) in program.instructions.iter().enumerate() {
        if let (Some(target), Some(addr)) = (branch_target(instr), instr.address) {
            if target <= addr {
                for (j, other) in program.instructions.iter().enumerate() {
                    if let Some(a) = other.address {
                        if a >= target && a <= addr {
                            members.insert(j);
                        }
                    }
                }
                members.insert(i);
            }
        }
    }
    members
}

fn memref_key(instr: &Instruction) -> Option<(u8, i64)> {
    instr.operands.iter().find_map(|op| match op {
        Operand::MemRef { base, offset, .. } => base.index().map(|b| (b, *offset)),
        _ => None,
    })
}

fn narrow_access_findings(program: &Program, findings: &mut Vec<Finding>) {
    let loops = loop_members(program);
    // Opcode -> distinct (base, offset) pairs seen, to spot strided access
    // sequences even without loop structure.
    let mut sites: BTreeMap<&str, BTreeSet<(u8, i64)>> = BTreeMap::new();
    for instr in &program.instructions {
        if is_global_access(instr) {
            if let Some(key) = memref_key(instr) {
                sites.entry(instr.opcode.as_str()).or_default().insert(key);
            }
        }
    }
    for (i, instr) in program.instructions.iter().enumerate() {
        if !is_global_access(instr) {
            continue;
        }
        let width = access_width(instr).unwrap_or(32);
        if width >= 128 {
            continue;
        }
        let repeated = sites.get(instr.opcode.as_str()).is_some_and(|s| s.len() >= 2);
        if loops.contains(&i) || repeated {
            findings.push(Finding {
                rule: RULE_NARROW_ACCESS.into(),
                severity: Severity::Perf,
                index: i,
                address: instr.address,
                message: format!(
                    "{}-bit global access; wider vectorized accesses raise memory throughput",
                    width
                ),
                suggestion: Some(format!(
                    "widen to a 128-bit access (e.g. {}.E.128) by processing 4 elements per thread",
                    instr.opcode
                )),
            });
        }
    }
}

fn bank_conflict_findings(program: &Program, profile: &GpuArchProfile, findings: &mut Vec<Finding>) {
    let Ok(report) = analyze_conflicts(program, profile, false) else {
        return;
    };
    for entry in &report.per_instruction {
        if entry.conflict_cycles > 0 {
            let regs: Vec<String> = entry.reads.iter().map(|r| format!("R{}", r.reg)).collect();
            findings.push(Finding {
                rule: RULE_BANK_CONFLICT.into(),
                severity: Severity::Perf,
                index: entry.index,
                address: entry.address,
                message: format!(
                    "{} extra cycle(s) from register bank conflicts among {}",
                    entry.conflict_cycles,
                    regs.join(", ")
                ),
                suggestion: Some("re-assign source registers across banks (see `reassign`)".into()),
            });
        }
    }
}

fn has_reuse_flag(program: &Program, index: usize, slot: usize, op: &Operand) -> bool {
    if op.has_attr("reuse") {
        return true;
    }
    match program.control_for(index) {
        Some(ControlSection::Decoded(c)) => slot < 4 && c.reuse_flags[slot],
        _ => false,
    }
}

fn reuse_opportunity_findings(program: &Program, findings: &mut Vec<Finding>) {
    for i in 0..program.instructions.len().saturating_sub(1) {
        let (_, cur_sources) = operand_roles(&program.instructions[i]);
        let (_, next_sources) = operand_roles(&program.instructions[i + 1]);
        for (slot, op) in &cur_sources {
            if *slot >= 4 {
                continue;
            }
            let Some(reg) = op.ported_register() else { continue };
            let repeated = next_sources
                .iter()
                .any(|(s, o)| s == slot && o.ported_register() == Some(reg));
            if repeated && !has_reuse_flag(program, i, *slot, op) {
                findings.push(Finding {
                    rule: RULE_REUSE_OPPORTUNITY.into(),
                    severity: Severity::Perf,
                    index: i,
                    address: program.instructions[i].address,
                    message: format!(
                        "R{reg} is read again in source slot {slot} by the next instruction but is not flagged for reuse"
                    ),
                    suggestion: Some(format!("flag operand slot {slot} for reuse (.reuse)")),
                });
            }
        }
    }
}

fn control_anomaly_findings(program: &Program, profile: &GpuArchProfile, findings: &mut Vec<Finding>) {
    let Some(controls) = &program.controls else { return };
    let mut armed: u8 = 0;
    for (i, section) in controls.iter().enumerate() {
        let Some(c) = section.decoded() else { continue };
        let unarmed_waits = c.wait_mask & !armed;
        if unarmed_waits != 0 {
            let barriers: Vec<String> = (0..6)
                .filter(|b| unarmed_waits & (1 << b) != 0)
                .map(|b| b.to_string())
                .collect();
            findings.push(Finding {
                rule: RULE_CONTROL_ANOMALY.into(),
                severity: Severity::Warn,
                index: i,
                address: program.instructions.get(i).and_then(|x| x.address),
                message: format!("waits on barrier(s) {} never armed earlier", barriers.join(", ")),
                suggestion: None,
            });
        }
        if c.write_barrier < 6 {
            armed |= 1 << c.write_barrier;
        }
        if c.read_barrier < 6 {
            armed |= 1 << c.read_barrier;
        }

        if c.stall == 0 {
            if let (Some(instr), Some(next)) =
                (program.instructions.get(i), program.instructions.get(i + 1))
            {
                let fixed = profile
                    .opcode_classes
                    .get(&instr.opcode)
                    .and_then(|n| profile.latency_table.get(n))
                    .map(|cl| !cl.variable)
                    .unwrap_or(false);
                let (dest, _) = operand_roles(instr);
                let (_, next_sources) = operand_roles(next);
                let dependent = dest
                    .is_some_and(|d| next_sources.iter().any(|(_, o)| o.ported_register() == Some(d)));
                if fixed && dependent {
                    findings.push(Finding {
                        rule: RULE_CONTROL_ANOMALY.into(),
                        severity: Severity::Warn,
                        index: i,
                        address: instr.address,
                        message: "zero stall before a dependent consumer of a fixed-latency result"
                            .into(),
                        suggestion: Some("stall for the producer's full latency".into()),
                    });
                }
            }
        }
    }
}

/// Runs the selected rules (all built-ins when `rules` is None) and returns
/// the findings in source order.
pub fn lint(
    program: &Program,
    profile: &GpuArchProfile,
    rules: Option<&[String]>,
) -> Result<ReportDocument, LintError> {
    let known: BTreeSet<&str> = builtin_rules().iter().map(|r| r.id).collect();
    let selected: BTreeSet<String> = match rules {
        Some(ids) => {
            for id in ids {
                if !known.contains(id.as_str()) {
                    return Err(LintError::UnknownRuleId(id.clone()));
                }
            }
            ids.iter().cloned().collect()
        }
        None => known.iter().map(|s| s.to_string()).collect(),
    };

    let mut findings = Vec::new();
    if selected.contains(RULE_NARROW_ACCESS) {
        narrow_access_findings(program, &mut findings);
    }
    if selected.contains(RULE_BANK_CONFLICT) {
        bank_conflict_findings(program, profile, &mut findings);
    }
    if selected.contains(RULE_REUSE_OPPORTUNITY) {
        reuse_opportunity_findings(program, &mut findings);
    }
    if selected.contains(RULE_CONTROL_ANOMALY) {
        control_anomaly_findings(program, profile, &mut findings);
    }

    findings.sort_by_key(|f| (f.index, f.rule.clone()));
    let mut summary = BTreeMap::new();
    for f in &findings {
        *summary.entry(f.rule.clone()).or_insert(0) += 1;
    }
    Ok(ReportDocument { findings, summary })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::ControlInfo;
    use crate::profile::load_profile;
    use crate::sass::{parse_listing, render_program};

    fn t4() -> GpuArchProfile {
        load_profile("T4").unwrap()
    }

    fn turing(listing: &str) -> Program {
        parse_listing(listing, Generation::Turing).unwrap()
    }

    const NARROW: &str = "\
/*01f0*/ LDG.E.64.SYS R2, [R2] ;\n\
/*0200*/ LDG.E.64.SYS R8, [R4] ;\n\
/*0330*/ LDG.E.64.SYS R2, [R2] ;\n\
/*0340*/ LDG.E.64.SYS R8, [R4] ;\n";

    const WIDE: &str = "\
/*00d0*/ LDG.E.128.SYS R8, [R8] ;\n\
/*00e0*/ LDG.E.128.SYS R4, [R2] ;\n\
/*0150*/ STG.E.128.SYS [R2], R4 ;\n";

    #[test]
    fn narrow_loads_are_flagged_wide_ones_not() {
        let t4 = t4();
        let report = lint(&turing(NARROW), &t4, None).unwrap();
        let narrow: Vec<_> =
            report.findings.iter().filter(|f| f.rule == RULE_NARROW_ACCESS).collect();
        assert!(narrow.len() >= 2, "{narrow:?}");
        let report = lint(&turing(WIDE), &t4, None).unwrap();
        assert!(report.findings.iter().all(|f| f.rule != RULE_NARROW_ACCESS));
    }

    #[test]
    fn loop_bodies_count_even_for_single_accesses() {
        let p = turing(
            "/*0000*/ LDG.E.64.SYS R2, [R4] ;\n\
             /*0010*/ BRA 0x0 ;\n",
        );
        let report = lint(&p, &t4(), None).unwrap();
        assert!(report.findings.iter().any(|f| f.rule == RULE_NARROW_ACCESS));
    }

    #[test]
    fn empty_program_is_clean() {
        let p = Program::new(Generation::Turing, vec![]);
        let report = lint(&p, &t4(), None).unwrap();
        assert!(report.is_clean());
    }

    #[test]
    fn bank_conflict_rule_matches_the_analyzer() {
        let p = turing("FFMA R18, R10, R12, R16 ;\nFFMA R15, R11, R12, R13 ;\n");
        let report = lint(&p, &t4(), None).unwrap();
        let flagged: Vec<usize> = report
            .findings
            .iter()
            .filter(|f| f.rule == RULE_BANK_CONFLICT)
            .map(|f| f.index)
            .collect();
        assert_eq!(flagged, vec![0]);
    }

    #[test]
    fn reuse_opportunity_on_repeated_slot() {
        let p = turing("FFMA R6, R97, R99, R5 ;\nFFMA R8, R97, R99, R4 ;\n");
        let report = lint(&p, &t4(), None).unwrap();
        let reuse: Vec<_> =
            report.findings.iter().filter(|f| f.rule == RULE_REUSE_OPPORTUNITY).collect();
        assert_eq!(reuse.len(), 2, "{reuse:?}"); // slots 0 and 1 both repeat
        let p = turing("FFMA R6, R97.reuse, R99.reuse, R5 ;\nFFMA R8, R97, R99, R4 ;\n");
        let report = lint(&p, &t4(), None).unwrap();
        assert!(report.findings.iter().all(|f| f.rule != RULE_REUSE_OPPORTUNITY));
    }

    #[test]
    fn control_anomalies_need_controls() {
        let mut p = turing("FFMA R4, R2, R3, R4 ;\nFADD R5, R4, R6 ;\n");
        let report = lint(&p, &t4(), None).unwrap();
        assert!(report.findings.iter().all(|f| f.rule != RULE_CONTROL_ANOMALY));

        let mut waiting = ControlInfo::with_stall(1);
        waiting.wait_mask = 0b10;
        let mut zero_stall = ControlInfo::with_stall(0);
        zero_stall.yield_flag = true;
        p.controls = Some(vec![
            ControlSection::Decoded(zero_stall),
            ControlSection::Decoded(waiting),
        ]);
        let report = lint(&p, &t4(), None).unwrap();
        let anomalies: Vec<_> =
            report.findings.iter().filter(|f| f.rule == RULE_CONTROL_ANOMALY).collect();
        assert_eq!(anomalies.len(), 2, "{anomalies:?}");
    }

    #[test]
    fn unknown_rule_is_rejected() {
        let p = turing("NOP ;\n");
        assert!(matches!(
            lint(&p, &t4(), Some(&["no-such-rule".to_string()])),
            Err(LintError::UnknownRuleId(id)) if id == "no-such-rule"
        ));
    }

    #[test]
    fn lint_is_idempotent_over_render() {
        let t4 = t4();
        let p = turing(NARROW);
        let first = lint(&p, &t4, None).unwrap();
        let reparsed = parse_listing(&render_program(&p), Generation::Turing).unwrap();
        let second = lint(&reparsed, &t4, None).unwrap();
        assert_eq!(first.findings, second.findings);
    }

    #[test]
    fn reassignment_clears_bank_conflict_findings() {
        let t4 = t4();
        let p = turing("FFMA R6, R97, R99, R5 ;\nFFMA R6, R97, R99, R5 ;\n");
        let before = lint(&p, &t4, None).unwrap();
        assert!(before.findings.iter().any(|f| f.rule == RULE_BANK_CONFLICT));
        let result = crate::reassign::reassign_registers(&p, &t4, 255).unwrap();
        let after = lint(&result.program, &t4, None).unwrap();
        assert!(after.findings.iter().all(|f| f.rule != RULE_BANK_CONFLICT));
    }
}
