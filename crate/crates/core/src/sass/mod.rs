//! Typed representation of SASS disassembly listings, with a parser and a
//! canonical renderer that round-trip each other.

mod parse;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::ControlSection;
use crate::profile::Generation;

pub use parse::{detect_generation, parse_instruction, parse_listing, ParseError};

/// A predicate register: P0..=P6 or the always-true PT.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PredReg {
    P(u8),
    PT,
}

impl std::fmt::Display for PredReg {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PredReg::P(i) => write!(f, "P{i}"),
            PredReg::PT => write!(f, "PT"),
        }
    }
}

/// Instruction guard: `@P5` or `@!P5`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Predicate {
    pub negated: bool,
    pub reg: PredReg,
}

/// A general register: R0..=R254 or the zero register RZ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Reg {
    R(u8),
    RZ,
}

impl Reg {
    pub fn index(self) -> Option<u8> {
        match self {
            Reg::R(i) => Some(i),
            Reg::RZ => None,
        }
    }
}

impl std::fmt::Display for Reg {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Reg::R(i) => write!(f, "R{i}"),
            Reg::RZ => write!(f, "RZ"),
        }
    }
}

/// A uniform register: UR0..=UR62 or URZ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum UReg {
    UR(u8),
    URZ,
}

impl std::fmt::Display for UReg {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            UReg::UR(i) => write!(f, "UR{i}"),
            UReg::URZ => write!(f, "URZ"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Immediate {
    /// `hex` records whether the literal was written 0x-style, so rendering
    /// reproduces the source form.
    Int { value: i64, hex: bool },
    Float(f64),
}

/// One instruction operand. Operand-level dot suffixes (`.reuse`, `.COL`)
/// are carried as attribute lists and survive round-trips.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Operand {
    GeneralReg { reg: Reg, attrs: Vec<String> },
    UniformReg { reg: UReg, attrs: Vec<String> },
    PredicateReg { negated: bool, reg: PredReg },
    ConstRef { bank: u32, offset: i64 },
    MemRef { base: Reg, base_attrs: Vec<String>, offset: i64 },
    Immediate(Immediate),
}

impl Operand {
    pub fn reg(reg: Reg) -> Self {
        Operand::GeneralReg { reg, attrs: Vec::new() }
    }

    /// The general register this operand reads through a register-file port,
    /// if any. RZ, uniform registers, constants and immediates read none.
    pub fn ported_register(&self) -> Option<u8> {
        match self {
            Operand::GeneralReg { reg: Reg::R(i), .. } => Some(*i),
            Operand::MemRef { base: Reg::R(i), .. } => Some(*i),
            _ => None,
        }
    }

    pub fn has_attr(&self, name: &str) -> bool {
        match self {
            Operand::GeneralReg { attrs, .. } | Operand::UniformReg { attrs, .. } => {
                attrs.iter().any(|a| a == name)
            }
            Operand::MemRef { base_attrs, .. } => base_attrs.iter().any(|a| a == name),
            _ => false,
        }
    }
}

/// One parsed instruction statement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instruction {
    /// Byte offset from the leading `/*00d0*/` comment, when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub address: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicate: Option<Predicate>,
    pub opcode: String,
    /// Dot-suffix tokens in source order (`E`, `128`, `SYS`, `STEP0`, ...).
    pub modifiers: Vec<String>,
    pub operands: Vec<Operand>,
    /// Raw encoding words from trailing `/* 0x... */` comments.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_words: Option<Vec<u64>>,
}

impl Instruction {
    pub fn new(opcode: &str, operands: Vec<Operand>) -> Self {
        Instruction {
            address: None,
            predicate: None,
            opcode: opcode.to_string(),
            modifiers: Vec::new(),
            operands,
            raw_words: None,
        }
    }

    pub fn has_modifier(&self, m: &str) -> bool {
        self.modifiers.iter().any(|x| x == m)
    }
}

/// A 64-bit word that appeared on its own line (a pre-Volta control word, or
/// a hex continuation); `before_instruction` is the index of the instruction
/// it preceded, `instructions.len()` if it trailed the listing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StandaloneWord {
    pub before_instruction: usize,
    pub word: u64,
}

/// A parsed listing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Program {
    pub arch: Generation,
    pub instructions: Vec<Instruction>,
    /// Scheduling sections aligned to `instructions`, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub controls: Option<Vec<ControlSection>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub standalone_words: Vec<StandaloneWord>,
}

impl Program {
    pub fn new(arch: Generation, instructions: Vec<Instruction>) -> Self {
        Program { arch, instructions, controls: None, standalone_words: Vec::new() }
    }

    /// The raw 64-bit word stream in source order: standalone words
    /// interleaved with each instruction's own words. This is the stream
    /// control extraction operates on.
    pub fn word_stream(&self) -> Vec<u64> {
        let mut words = Vec::new();
        let mut standalone = self.standalone_words.iter().peekable();
        for (i, instr) in self.instructions.iter().enumerate() {
            while standalone.peek().is_some_and(|w| w.before_instruction == i) {
                words.push(standalone.next().unwrap().word);
            }
            if let Some(raw) = &instr.raw_words {
                words.extend_from_slice(raw);
            }
        }
        words.extend(standalone.map(|w| w.word));
        words
    }

    pub fn control_for(&self, index: usize) -> Option<&ControlSection> {
        self.controls.as_ref().and_then(|c| c.get(index))
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SassError {
    #[error("{opcode} is not a memory access instruction")]
    NotAMemoryAccess { opcode: String },
}

const MEMORY_OPCODES: &[&str] =
    &["LDG", "STG", "LDS", "STS", "LDL", "STL", "LD", "ST", "LDC"];

pub fn is_memory_opcode(opcode: &str) -> bool {
    MEMORY_OPCODES.contains(&opcode)
}

pub fn is_store_opcode(opcode: &str) -> bool {
    matches!(opcode, "STG" | "STS" | "STL" | "ST")
}

/// Access width in bits for a memory instruction: the numeric width modifier
/// when present, 32 otherwise.
pub fn access_width(instr: &Instruction) -> Result<u32, SassError> {
    if !is_memory_opcode(&instr.opcode) {
        return Err(SassError::NotAMemoryAccess { opcode: instr.opcode.clone() });
    }
    for m in &instr.modifiers {
        match m.as_str() {
            "32" => return Ok(32),
            "64" => return Ok(64),
            "128" => return Ok(128),
            _ => {}
        }
    }
    Ok(32)
}

fn render_operand(out: &mut String, op: &Operand) {
    use std::fmt::Write;
    match op {
        Operand::GeneralReg { reg, attrs } => {
            let _ = write!(out, "{reg}");
            for a in attrs {
                let _ = write!(out, ".{a}");
            }
        }
        Operand::UniformReg { reg, attrs } => {
            let _ = write!(out, "{reg}");
            for a in attrs {
                let _ = write!(out, ".{a}");
            }
        }
        Operand::PredicateReg { negated, reg } => {
            if *negated {
                out.push('!');
            }
            let _ = write!(out, "{reg}");
        }
        Operand::ConstRef { bank, offset } => {
            let _ = write!(out, "c[{bank:#x}][{offset:#x}]");
        }
        Operand::MemRef { base, base_attrs, offset } => {
            out.push('[');
            let _ = write!(out, "{base}");
            for a in base_attrs {
                let _ = write!(out, ".{a}");
            }
            if *offset > 0 {
                let _ = write!(out, "+{offset:#x}");
            } else if *offset < 0 {
                let _ = write!(out, "-{:#x}", -offset);
            }
            out.push(']');
        }
        Operand::Immediate(imm) => match imm {
            Immediate::Int { value, hex: true } => {
                if *value < 0 {
                    let _ = write!(out, "-{:#x}", -value);
                } else {
                    let _ = write!(out, "{value:#x}");
                }
            }
            Immediate::Int { value, hex: false } => {
                let _ = write!(out, "{value}");
            }
            Immediate::Float(v) => {
                if v.fract() == 0.0 && v.is_finite() {
                    let _ = write!(out, "{v:.1}");
                } else {
                    let _ = write!(out, "{v}");
                }
            }
        },
    }
}

/// Canonical single-line rendering of one instruction.
pub fn render_instruction(instr: &Instruction) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    if let Some(addr) = instr.address {
        let _ = write!(out, "/*{addr:04x}*/ ");
    }
    if let Some(p) = &instr.predicate {
        out.push('@');
        if p.negated {
            out.push('!');
        }
        let _ = write!(out, "{} ", p.reg);
    }
    out.push_str(&instr.opcode);
    for m in &instr.modifiers {
        let _ = write!(out, ".{m}");
    }
    for (i, op) in instr.operands.iter().enumerate() {
        out.push_str(if i == 0 { " " } else { ", " });
        render_operand(&mut out, op);
    }
    out.push_str(" ;");
    if let Some(words) = &instr.raw_words {
        for w in words {
            let _ = write!(out, " /* 0x{w:016x} */");
        }
    }
    out
}

/// Canonical rendering of a whole program. Parsing the result yields a
/// structurally identical [`Program`].
pub fn render_program(program: &Program) -> String {
    let mut out = String::new();
    let mut standalone = program.standalone_words.iter().peekable();
    for (i, instr) in program.instructions.iter().enumerate() {
        while standalone.peek().is_some_and(|w| w.before_instruction == i) {
            out.push_str(&format!("/* 0x{:016x} */\n", standalone.next().unwrap().word));
        }
        out.push_str(&render_instruction(instr));
        out.push('\n');
    }
    for w in standalone {
        out.push_str(&format!("/* 0x{:016x} */\n", w.word));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn instr(line: &str) -> Instruction {
        parse_instruction(line).unwrap()
    }

    #[test]
    fn access_width_reads_the_numeric_modifier() {
        assert_eq!(access_width(&instr("LDG.E.64.SYS R2, [R2] ;")).unwrap(), 64);
        assert_eq!(access_width(&instr("STG.E.128.SYS [R2], R4 ;")).unwrap(), 128);
        assert_eq!(access_width(&instr("LDG.E.CI R66, [R86+0x100] ;")).unwrap(), 32);
        assert_eq!(
            access_width(&instr("FFMA R4, R8, c[0x0][0x170], R4 ;")),
            Err(SassError::NotAMemoryAccess { opcode: "FFMA".into() })
        );
    }

    #[test]
    fn word_stream_interleaves_in_source_order() {
        let mut p = Program::new(
            Generation::Pascal,
            vec![
                Instruction { raw_words: Some(vec![0xA]), ..Instruction::new("MOV", vec![]) },
                Instruction { raw_words: Some(vec![0xB]), ..Instruction::new("MOV", vec![]) },
            ],
        );
        p.standalone_words.push(StandaloneWord { before_instruction: 0, word: 0xC });
        p.standalone_words.push(StandaloneWord { before_instruction: 2, word: 0xD });
        assert_eq!(p.word_stream(), vec![0xC, 0xA, 0xB, 0xD]);
    }

    #[test]
    fn empty_program_renders_to_empty_text() {
        let p = Program::new(Generation::Turing, vec![]);
        assert_eq!(render_program(&p), "");
    }
}
