//! Scheduling control information: the 21-bit sections that tell a
//! software-scheduled GPU how to stall, which dependency barriers to set or
//! wait on, which operands to cache for reuse, and when to yield.
//!
//! Turing/Volta embed one section in each 128-bit instruction; Pascal/Maxwell
//! pack three sections into a standalone 64-bit control word covering the
//! next three instructions; Kepler packs seven opaque 8-bit sections covering
//! the next seven.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::profile::Generation;

pub const SECTION_BITS: u32 = 21;
pub const SECTION_MASK: u32 = (1 << SECTION_BITS) - 1;
/// Barrier indices run 0..=5; 7 in a 3-bit barrier field means "none".
pub const BARRIER_NONE: u8 = 7;
pub const NUM_BARRIERS: u8 = 6;
pub const MAX_STALL: u8 = 15;

// Field boundaries inside a section, most significant first:
// reuse(4) | wait(6) | read(3) | write(3) | yield(1) | stall(4).
const STALL_SHIFT: u32 = 0;
const YIELD_SHIFT: u32 = 4;
const WRITE_SHIFT: u32 = 5;
const READ_SHIFT: u32 = 8;
const WAIT_SHIFT: u32 = 11;
const REUSE_SHIFT: u32 = 17;

/// Decoded scheduling fields for one instruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ControlInfo {
    /// Flag i marks source-operand slot i for capture into the reuse cache;
    /// bit 0 (least significant) is the first source operand.
    pub reuse_flags: [bool; 4],
    /// Bitmask over barriers 0..=5 this instruction waits on before issue.
    pub wait_mask: u8,
    /// Barrier protecting this instruction's register read-out, or 7 = none.
    pub read_barrier: u8,
    /// Barrier signaled when this instruction's result lands, or 7 = none.
    pub write_barrier: u8,
    /// Set: prefer to keep issuing from this warp. Cleared: prefer switching
    /// warps, which costs one cycle and voids the next instruction's reuse.
    pub yield_flag: bool,
    /// Cycles to wait before issuing the next instruction (0..=15).
    pub stall: u8,
}

impl ControlInfo {
    /// No reuse, no barriers, yield set, given stall.
    pub fn with_stall(stall: u8) -> Self {
        ControlInfo {
            reuse_flags: [false; 4],
            wait_mask: 0,
            read_barrier: BARRIER_NONE,
            write_barrier: BARRIER_NONE,
            yield_flag: true,
            stall,
        }
    }

    pub fn waits_on(&self, barrier: u8) -> bool {
        self.wait_mask & (1 << barrier) != 0
    }

    pub fn wait_barriers(&self) -> impl Iterator<Item = u8> + '_ {
        (0..NUM_BARRIERS).filter(|b| self.waits_on(*b))
    }
}

/// Per-instruction control as carried by a program: fully decoded where the
/// format is known, opaque bytes on Kepler.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ControlSection {
    Decoded(ControlInfo),
    Opaque(u8),
}

impl ControlSection {
    pub fn decoded(&self) -> Option<&ControlInfo> {
        match self {
            ControlSection::Decoded(info) => Some(info),
            ControlSection::Opaque(_) => None,
        }
    }
}

/// Which section of a pre-Volta bundle applies to the bundle's first
/// instruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum BundleOrder {
    /// The lowest-order section schedules the first instruction.
    #[default]
    LowestFirst,
    HighestFirst,
}

impl std::str::FromStr for BundleOrder {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "lowest-first" | "lowest" => Ok(BundleOrder::LowestFirst),
            "highest-first" | "highest" => Ok(BundleOrder::HighestFirst),
            other => Err(format!("unknown bundle order `{other}`")),
        }
    }
}

/// Where control bits live for a given generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ControlLayout {
    pub generation: Generation,
    /// Bit offset of the 21-bit section within a Turing/Volta 128-bit pair.
    /// The two bits above the section must read zero.
    pub turing_section_offset: u32,
    pub bundle_order: BundleOrder,
}

pub const DEFAULT_TURING_SECTION_OFFSET: u32 = 105;

impl ControlLayout {
    pub fn for_generation(generation: Generation) -> Self {
        ControlLayout {
            generation,
            turing_section_offset: DEFAULT_TURING_SECTION_OFFSET,
            bundle_order: BundleOrder::LowestFirst,
        }
    }

    /// (sections per control unit, bits per section).
    pub fn section_shape(&self) -> (usize, u32) {
        match self.generation {
            Generation::Kepler => (7, 8),
            Generation::Maxwell | Generation::Pascal => (3, SECTION_BITS),
            Generation::Volta | Generation::Turing => (1, SECTION_BITS),
        }
    }

    /// 64-bit words per bundle (pre-Volta) or per instruction pair (Turing).
    pub fn words_per_unit(&self) -> usize {
        match self.generation {
            Generation::Kepler => 8,
            Generation::Maxwell | Generation::Pascal => 4,
            Generation::Volta | Generation::Turing => 2,
        }
    }

    pub fn instructions_per_unit(&self) -> usize {
        match self.generation {
            Generation::Kepler => 7,
            Generation::Maxwell | Generation::Pascal => 3,
            Generation::Volta | Generation::Turing => 1,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ControlError {
    #[error("section value {0:#x} does not fit in {SECTION_BITS} bits")]
    ValueOutOfRange(u64),
    #[error("invalid {field}: {value} (max {max})")]
    InvalidField { field: &'static str, value: u8, max: u8 },
    #[error("mandated zero bit {bit} of word {word_index} is set")]
    BadPadding { word_index: usize, bit: u32 },
    #[error("{got} words is not a multiple of {expected_multiple} for this generation")]
    LengthMismatch { expected_multiple: usize, got: usize },
    #[error("expected {expected} control sections for {got_words} words, got {got}")]
    SectionCountMismatch { expected: usize, got: usize, got_words: usize },
    #[error("section kind does not match the target generation")]
    SectionKindMismatch,
    #[error("control section offset {offset} leaves no room for the section and its zero pad")]
    BadSectionOffset { offset: u32 },
}

/// Decodes a raw 21-bit section into its six fields.
pub fn decode_control_section(bits: u32) -> Result<ControlInfo, ControlError> {
    if bits > SECTION_MASK {
        return Err(ControlError::ValueOutOfRange(u64::from(bits)));
    }
    let reuse = (bits >> REUSE_SHIFT) & 0xF;
    Ok(ControlInfo {
        reuse_flags: [
            reuse & 1 != 0,
            reuse & 2 != 0,
            reuse & 4 != 0,
            reuse & 8 != 0,
        ],
        wait_mask: ((bits >> WAIT_SHIFT) & 0x3F) as u8,
        read_barrier: ((bits >> READ_SHIFT) & 0x7) as u8,
        write_barrier: ((bits >> WRITE_SHIFT) & 0x7) as u8,
        yield_flag: (bits >> YIELD_SHIFT) & 1 != 0,
        stall: ((bits >> STALL_SHIFT) & 0xF) as u8,
    })
}

/// Packs six fields back into a 21-bit section; exact inverse of
/// [`decode_control_section`].
pub fn encode_control_section(info: &ControlInfo) -> Result<u32, ControlError> {
    if info.stall > MAX_STALL {
        return Err(ControlError::InvalidField { field: "stall", value: info.stall, max: MAX_STALL });
    }
    if info.wait_mask > 0x3F {
        return Err(ControlError::InvalidField { field: "wait_mask", value: info.wait_mask, max: 0x3F });
    }
    if info.read_barrier > BARRIER_NONE {
        return Err(ControlError::InvalidField {
            field: "read_barrier",
            value: info.read_barrier,
            max: BARRIER_NONE,
        });
    }
    if info.write_barrier > BARRIER_NONE {
        return Err(ControlError::InvalidField {
            field: "write_barrier",
            value: info.write_barrier,
            max: BARRIER_NONE,
        });
    }
    let mut reuse = 0u32;
    for (i, flag) in info.reuse_flags.iter().enumerate() {
        if *flag {
            reuse |= 1 << i;
        }
    }
    Ok((reuse << REUSE_SHIFT)
        | (u32::from(info.wait_mask) << WAIT_SHIFT)
        | (u32::from(info.read_barrier) << READ_SHIFT)
        | (u32::from(info.write_barrier) << WRITE_SHIFT)
        | (u32::from(info.yield_flag) << YIELD_SHIFT)
        | (u32::from(info.stall) << STALL_SHIFT))
}

fn check_unit_length(words: &[u64], layout: &ControlLayout) -> Result<(), ControlError> {
    let unit = layout.words_per_unit();
    if words.len() % unit != 0 {
        return Err(ControlError::LengthMismatch { expected_multiple: unit, got: words.len() });
    }
    Ok(())
}

fn turing_pair_section(lo: u64, hi: u64, offset: u32, word_index: usize) -> Result<u32, ControlError> {
    if offset + SECTION_BITS + 2 > 128 {
        return Err(ControlError::BadSectionOffset { offset });
    }
    let section = extract_pair_bits(lo, hi, offset, SECTION_BITS) as u32;
    for pad in 0..2 {
        let bit = offset + SECTION_BITS + pad;
        if extract_pair_bits(lo, hi, bit, 1) != 0 {
            let (w, b) = if bit >= 64 { (word_index + 1, bit - 64) } else { (word_index, bit) };
            return Err(ControlError::BadPadding { word_index: w, bit: b });
        }
    }
    Ok(section)
}

fn extract_pair_bits(lo: u64, hi: u64, offset: u32, width: u32) -> u64 {
    // Little-endian pair: bits 0..64 in `lo`, 64..128 in `hi`.
    let mask = if width == 64 { u64::MAX } else { (1u64 << width) - 1 };
    let value = if offset >= 64 {
        hi >> (offset - 64)
    } else if offset + width <= 64 {
        lo >> offset
    } else {
        (lo >> offset) | (hi << (64 - offset))
    };
    value & mask
}

fn set_pair_bits(lo: &mut u64, hi: &mut u64, offset: u32, width: u32, value: u64) {
    for i in 0..width {
        let bit = offset + i;
        let v = (value >> i) & 1;
        if bit >= 64 {
            *hi = (*hi & !(1 << (bit - 64))) | (v << (bit - 64));
        } else {
            *lo = (*lo & !(1 << bit)) | (v << bit);
        }
    }
}

/// Pulls the control section of every instruction out of a raw word stream,
/// in instruction order.
pub fn extract_controls(
    words: &[u64],
    layout: &ControlLayout,
) -> Result<Vec<ControlSection>, ControlError> {
    check_unit_length(words, layout)?;
    let mut out = Vec::with_capacity(words.len() / layout.words_per_unit() * layout.instructions_per_unit());
    match layout.generation {
        Generation::Turing | Generation::Volta => {
            for (pair_index, pair) in words.chunks_exact(2).enumerate() {
                let section = turing_pair_section(pair[0], pair[1], layout.turing_section_offset, pair_index * 2)?;
                out.push(ControlSection::Decoded(decode_control_section(section)?));
            }
        }
        Generation::Pascal | Generation::Maxwell => {
            for (bundle_index, bundle) in words.chunks_exact(4).enumerate() {
                let ctl = bundle[0];
                if ctl >> 63 != 0 {
                    return Err(ControlError::BadPadding { word_index: bundle_index * 4, bit: 63 });
                }
                let mut sections: Vec<u32> =
                    (0..3).map(|i| ((ctl >> (SECTION_BITS * i)) as u32) & SECTION_MASK).collect();
                if layout.bundle_order == BundleOrder::HighestFirst {
                    sections.reverse();
                }
                for s in sections {
                    out.push(ControlSection::Decoded(decode_control_section(s)?));
                }
            }
        }
        Generation::Kepler => {
            for (bundle_index, bundle) in words.chunks_exact(8).enumerate() {
                let ctl = bundle[0];
                for bit in (0..2).chain(58..64) {
                    if (ctl >> bit) & 1 != 0 {
                        return Err(ControlError::BadPadding { word_index: bundle_index * 8, bit });
                    }
                }
                let mut sections: Vec<u8> = (0..7).map(|i| ((ctl >> (2 + 8 * i)) & 0xFF) as u8).collect();
                if layout.bundle_order == BundleOrder::HighestFirst {
                    sections.reverse();
                }
                for s in sections {
                    out.push(ControlSection::Opaque(s));
                }
            }
        }
    }
    Ok(out)
}

/// Writes control sections back into a word stream; the exact inverse of
/// [`extract_controls`]. Every non-control bit is left untouched.
pub fn inject_controls(
    words: &[u64],
    controls: &[ControlSection],
    layout: &ControlLayout,
) -> Result<Vec<u64>, ControlError> {
    check_unit_length(words, layout)?;
    let expected = words.len() / layout.words_per_unit() * layout.instructions_per_unit();
    if controls.len() != expected {
        return Err(ControlError::SectionCountMismatch {
            expected,
            got: controls.len(),
            got_words: words.len(),
        });
    }
    let mut out = words.to_vec();
    match layout.generation {
        Generation::Turing | Generation::Volta => {
            if layout.turing_section_offset + SECTION_BITS + 2 > 128 {
                return Err(ControlError::BadSectionOffset { offset: layout.turing_section_offset });
            }
            for (pair_index, control) in controls.iter().enumerate() {
                let info = control.decoded().ok_or(ControlError::SectionKindMismatch)?;
                let section = encode_control_section(info)?;
                let (lo_i, hi_i) = (pair_index * 2, pair_index * 2 + 1);
                let (mut lo, mut hi) = (out[lo_i], out[hi_i]);
                set_pair_bits(&mut lo, &mut hi, layout.turing_section_offset, SECTION_BITS + 2, u64::from(section));
                out[lo_i] = lo;
                out[hi_i] = hi;
            }
        }
        Generation::Pascal | Generation::Maxwell => {
            for (bundle_index, chunk) in controls.chunks_exact(3).enumerate() {
                let mut ctl = 0u64;
                for (slot, control) in chunk.iter().enumerate() {
                    let info = control.decoded().ok_or(ControlError::SectionKindMismatch)?;
                    let section = u64::from(encode_control_section(info)?);
                    let slot = match layout.bundle_order {
                        BundleOrder::LowestFirst => slot,
                        BundleOrder::HighestFirst => 2 - slot,
                    };
                    ctl |= section << (SECTION_BITS * slot as u32);
                }
                out[bundle_index * 4] = ctl;
            }
        }
        Generation::Kepler => {
            for (bundle_index, chunk) in controls.chunks_exact(7).enumerate() {
                let mut ctl = 0u64;
                for (slot, control) in chunk.iter().enumerate() {
                    let byte = match control {
                        ControlSection::Opaque(b) => *b,
                        ControlSection::Decoded(_) => return Err(ControlError::SectionKindMismatch),
                    };
                    let slot = match layout.bundle_order {
                        BundleOrder::LowestFirst => slot,
                        BundleOrder::HighestFirst => 6 - slot,
                    };
                    ctl |= u64::from(byte) << (2 + 8 * slot as u32);
                }
                out[bundle_index * 8] = ctl;
            }
        }
    }
    Ok(out)
}
