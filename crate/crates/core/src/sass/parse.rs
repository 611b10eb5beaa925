//! Line-oriented parser for disassembly listings.
//!
//! A line is an instruction statement iff it contains a `;` outside comments.
//! Lines holding only `/* 0x... */` comments are raw encoding words: on
//! Turing/Volta they continue the previous instruction's 128-bit encoding,
//! on earlier generations they are standalone (control) words. Everything
//! else (function headers, directives, `...` ellipses, `#` comments) is
//! skipped -- except that a line beginning with an address comment must
//! parse as an instruction.

use thiserror::Error;

use super::{
    Immediate, Instruction, Operand, PredReg, Predicate, Program, Reg, StandaloneWord, UReg,
};
use crate::profile::Generation;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("line {line}, column {column}: expected {expected}, found {found}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub expected: String,
    pub found: String,
}

/// Guesses the generation from a `.headerflags` line, e.g. `EF_CUDA_SM75`.
pub fn detect_generation(text: &str) -> Option<Generation> {
    let idx = text.find("EF_CUDA_SM")?;
    let digits: String = text[idx + "EF_CUDA_SM".len()..]
        .chars()
        .take_while(|c| c.is_ascii_digit())
        .collect();
    let sm: u32 = digits.parse().ok()?;
    Some(match sm {
        0..=49 => Generation::Kepler,
        50..=59 => Generation::Maxwell,
        60..=69 => Generation::Pascal,
        70..=74 => Generation::Volta,
        _ => Generation::Turing,
    })
}

struct Cursor {
    chars: Vec<char>,
    pos: usize,
    line: usize,
}

impl Cursor {
    fn new(text: &str, line: usize) -> Self {
        Cursor { chars: text.chars().collect(), pos: 0, line }
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn peek_at(&self, offset: usize) -> Option<char> {
        self.chars.get(self.pos + offset).copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek();
        if c.is_some() {
            self.pos += 1;
        }
        c
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(|c| c.is_whitespace()) {
            self.pos += 1;
        }
    }

    fn at_end(&mut self) -> bool {
        self.skip_ws();
        self.peek().is_none()
    }

    fn column(&self) -> usize {
        self.pos + 1
    }

    fn error(&self, expected: impl Into<String>) -> ParseError {
        let found = match self.peek() {
            Some(_) => {
                let rest: String = self.chars[self.pos..].iter().take(12).collect();
                format!("`{}`", rest.trim_end())
            }
            None => "end of line".to_string(),
        };
        ParseError { line: self.line, column: self.column(), expected: expected.into(), found }
    }

    fn expect(&mut self, c: char) -> Result<(), ParseError> {
        self.skip_ws();
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error(format!("`{c}`")))
        }
    }

    fn at_comment(&mut self) -> bool {
        self.skip_ws();
        self.peek() == Some('/') && self.peek_at(1) == Some('*')
    }

    /// Consumes one `/* ... */` comment and returns its inner text.
    fn comment_body(&mut self) -> Result<String, ParseError> {
        self.expect('/')?;
        self.expect('*')?;
        let start = self.pos;
        while !(self.peek() == Some('*') && self.peek_at(1) == Some('/')) {
            if self.bump().is_none() {
                return Err(self.error("`*/` closing the comment"));
            }
        }
        let body: String = self.chars[start..self.pos].iter().collect();
        self.pos += 2;
        Ok(body)
    }

    fn token(&mut self, first: fn(char) -> bool, rest: fn(char) -> bool) -> Option<String> {
        self.skip_ws();
        if !self.peek().is_some_and(first) {
            return None;
        }
        let start = self.pos;
        self.pos += 1;
        while self.peek().is_some_and(rest) {
            self.pos += 1;
        }
        Some(self.chars[start..self.pos].iter().collect())
    }

    fn ident(&mut self) -> Option<String> {
        self.token(|c| c.is_ascii_alphabetic() || c == '_', |c| c.is_ascii_alphanumeric() || c == '_')
    }

    /// Modifier / attribute token; may start with a digit (`.128`, `.884`).
    fn suffix_token(&mut self) -> Option<String> {
        self.token(|c| c.is_ascii_alphanumeric() || c == '_', |c| c.is_ascii_alphanumeric() || c == '_')
    }
}

fn parse_hex(body: &str) -> Option<u64> {
    u64::from_str_radix(body, 16).ok()
}

fn word_comment_value(body: &str) -> Option<u64> {
    let t = body.trim();
    t.strip_prefix("0x").or_else(|| t.strip_prefix("0X")).and_then(parse_hex)
}

fn address_comment_value(body: &str) -> Option<u64> {
    let t = body.trim();
    if t.is_empty() || t.starts_with("0x") || t.starts_with("0X") {
        return None;
    }
    parse_hex(t)
}

fn parse_predicate_reg(cur: &mut Cursor, token: &str) -> Result<PredReg, ParseError> {
    if token == "PT" {
        return Ok(PredReg::PT);
    }
    let digits = &token[1..];
    match digits.parse::<u8>() {
        Ok(i) if i <= 6 => Ok(PredReg::P(i)),
        _ => Err(cur.error("predicate register P0..P6 or PT")),
    }
}

fn parse_number(cur: &mut Cursor) -> Result<Immediate, ParseError> {
    cur.skip_ws();
    let mut negative = false;
    if cur.peek() == Some('-') {
        negative = true;
        cur.bump();
    }
    if cur.peek() == Some('0') && matches!(cur.peek_at(1), Some('x') | Some('X')) {
        cur.bump();
        cur.bump();
        let digits = cur
            .token(|c| c.is_ascii_hexdigit(), |c| c.is_ascii_hexdigit())
            .ok_or_else(|| cur.error("hexadecimal digits"))?;
        let value = i64::from_str_radix(&digits, 16)
            .map_err(|_| cur.error("hexadecimal literal within 63 bits"))?;
        return Ok(Immediate::Int { value: if negative { -value } else { value }, hex: true });
    }
    let digits = cur
        .token(|c| c.is_ascii_digit(), |c| c.is_ascii_digit())
        .ok_or_else(|| cur.error("a numeric literal"))?;
    // A dot followed by a digit continues a float literal.
    if cur.peek() == Some('.') && cur.peek_at(1).is_some_and(|c| c.is_ascii_digit()) {
        cur.bump();
        let frac = cur.token(|c| c.is_ascii_digit(), |c| c.is_ascii_digit()).unwrap();
        let mut text = format!("{digits}.{frac}");
        if matches!(cur.peek(), Some('e') | Some('E')) {
            cur.bump();
            text.push('e');
            if matches!(cur.peek(), Some('+') | Some('-')) {
                text.push(cur.bump().unwrap());
            }
            let exp = cur
                .token(|c| c.is_ascii_digit(), |c| c.is_ascii_digit())
                .ok_or_else(|| cur.error("exponent digits"))?;
            text.push_str(&exp);
        }
        let value: f64 = text.parse().map_err(|_| cur.error("a float literal"))?;
        return Ok(Immediate::Float(if negative { -value } else { value }));
    }
    let value: i64 = digits.parse().map_err(|_| cur.error("an integer within 63 bits"))?;
    Ok(Immediate::Int { value: if negative { -value } else { value }, hex: false })
}

fn int_value(cur: &mut Cursor, imm: Immediate) -> Result<i64, ParseError> {
    match imm {
        Immediate::Int { value, .. } => Ok(value),
        Immediate::Float(_) => Err(cur.error("an integer literal")),
    }
}

fn parse_attrs(cur: &mut Cursor) -> Result<Vec<String>, ParseError> {
    let mut attrs = Vec::new();
    while cur.peek() == Some('.') {
        cur.bump();
        let attr = cur.suffix_token().ok_or_else(|| cur.error("an attribute after `.`"))?;
        attrs.push(attr);
    }
    Ok(attrs)
}

fn classify_reg_token(cur: &mut Cursor, token: String) -> Result<Operand, ParseError> {
    if token == "RZ" {
        return Ok(Operand::GeneralReg { reg: Reg::RZ, attrs: parse_attrs(cur)? });
    }
    if token == "URZ" {
        return Ok(Operand::UniformReg { reg: UReg::URZ, attrs: parse_attrs(cur)? });
    }
    if token == "PT" || (token.len() > 1 && token.starts_with('P') && token[1..].chars().all(|c| c.is_ascii_digit())) {
        let reg = parse_predicate_reg(cur, &token)?;
        return Ok(Operand::PredicateReg { negated: false, reg });
    }
    if let Some(digits) = token.strip_prefix("UR") {
        if !digits.is_empty() && digits.chars().all(|c| c.is_ascii_digit()) {
            return match digits.parse::<u8>() {
                Ok(i) if i <= 62 => {
                    Ok(Operand::UniformReg { reg: UReg::UR(i), attrs: parse_attrs(cur)? })
                }
                _ => Err(cur.error("uniform register index 0..62")),
            };
        }
    }
    if let Some(digits) = token.strip_prefix('R') {
        if !digits.is_empty() && digits.chars().all(|c| c.is_ascii_digit()) {
            return match digits.parse::<u8>() {
                Ok(i) if i <= 254 => {
                    Ok(Operand::GeneralReg { reg: Reg::R(i), attrs: parse_attrs(cur)? })
                }
                _ => Err(cur.error("general register index 0..254")),
            };
        }
    }
    Err(cur.error(format!("an operand (got identifier `{token}`)")))
}

fn parse_general_reg(cur: &mut Cursor) -> Result<(Reg, Vec<String>), ParseError> {
    let token = cur.ident().ok_or_else(|| cur.error("a register"))?;
    match classify_reg_token(cur, token)? {
        Operand::GeneralReg { reg, attrs } => Ok((reg, attrs)),
        _ => Err(cur.error("a general register")),
    }
}

fn parse_operand(cur: &mut Cursor) -> Result<Operand, ParseError> {
    cur.skip_ws();
    match cur.peek() {
        Some('[') => {
            cur.bump();
            let (base, base_attrs) = parse_general_reg(cur)?;
            cur.skip_ws();
            let mut offset = 0i64;
            match cur.peek() {
                Some('+') => {
                    cur.bump();
                    let imm = parse_number(cur)?;
                    offset = int_value(cur, imm)?;
                }
                Some('-') => {
                    let imm = parse_number(cur)?;
                    offset = int_value(cur, imm)?;
                }
                _ => {}
            }
            cur.expect(']')?;
            Ok(Operand::MemRef { base, base_attrs, offset })
        }
        Some('!') => {
            cur.bump();
            let token = cur.ident().ok_or_else(|| cur.error("a predicate register after `!`"))?;
            let reg = parse_predicate_reg(cur, &token)?;
            Ok(Operand::PredicateReg { negated: true, reg })
        }
        Some('c') if cur.peek_at(1) == Some('[') => {
            cur.bump();
            cur.expect('[')?;
            let bank_imm = parse_number(cur)?;
            let bank = int_value(cur, bank_imm)?;
            cur.expect(']')?;
            cur.expect('[')?;
            let off_imm = parse_number(cur)?;
            let offset = int_value(cur, off_imm)?;
            cur.expect(']')?;
            if bank < 0 {
                return Err(cur.error("a non-negative constant bank"));
            }
            Ok(Operand::ConstRef { bank: bank as u32, offset })
        }
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {
            let token = cur.ident().unwrap();
            classify_reg_token(cur, token)
        }
        Some(c) if c.is_ascii_digit() || c == '-' => Ok(Operand::Immediate(parse_number(cur)?)),
        _ => Err(cur.error("an operand")),
    }
}

fn parse_statement(cur: &mut Cursor, address: Option<u64>) -> Result<Instruction, ParseError> {
    cur.skip_ws();
    let mut predicate = None;
    if cur.peek() == Some('@') {
        cur.bump();
        let negated = if cur.peek() == Some('!') {
            cur.bump();
            true
        } else {
            false
        };
        let token = cur.ident().ok_or_else(|| cur.error("a predicate register after `@`"))?;
        let reg = parse_predicate_reg(cur, &token)?;
        predicate = Some(Predicate { negated, reg });
    }
    let opcode = cur.ident().ok_or_else(|| cur.error("an opcode"))?;
    let modifiers = parse_attrs(cur)?;
    let mut operands = Vec::new();
    cur.skip_ws();
    if cur.peek() != Some(';') {
        operands.push(parse_operand(cur)?);
        loop {
            cur.skip_ws();
            match cur.peek() {
                Some(',') => {
                    cur.bump();
                    operands.push(parse_operand(cur)?);
                }
                Some(';') => break,
                _ => return Err(cur.error("`,` or `;`")),
            }
        }
    }
    cur.expect(';')?;
    Ok(Instruction { address, predicate, opcode, modifiers, operands, raw_words: None })
}

/// What one listing line contributes.
enum Line {
    Skip,
    Words(Vec<u64>),
    Instruction(Instruction),
}

fn parse_line(text: &str, line_no: usize) -> Result<Line, ParseError> {
    let trimmed = text.trim();
    if trimmed.is_empty() || trimmed.starts_with('#') {
        return Ok(Line::Skip);
    }
    if trimmed.chars().all(|c| c == '.') {
        return Ok(Line::Skip); // ellipsis lines in excerpted listings
    }
    if trimmed.starts_with('.') {
        return Ok(Line::Skip); // assembler directives such as .headerflags
    }

    let mut cur = Cursor::new(text, line_no);

    // Leading comments: an address (`/*0288*/`), or raw words on a line of
    // their own (`/* 0x... */`).
    let mut address = None;
    let mut words = Vec::new();
    while cur.at_comment() {
        let col = cur.column();
        let body = cur.comment_body()?;
        if let Some(w) = word_comment_value(&body) {
            words.push(w);
        } else if let Some(a) = address_comment_value(&body) {
            if address.is_some() || !words.is_empty() {
                return Err(ParseError {
                    line: line_no,
                    column: col,
                    expected: "at most one leading address comment".into(),
                    found: format!("`/*{body}*/`"),
                });
            }
            address = Some(a);
        }
        // Other comment content is ignorable chatter.
    }

    if cur.at_end() {
        if address.is_some() {
            return Err(cur.error("an instruction after the address comment"));
        }
        return if words.is_empty() { Ok(Line::Skip) } else { Ok(Line::Words(words)) };
    }

    // Statement text follows. Lines without a terminating `;` are headers or
    // other junk -- unless they were anchored by an address comment.
    let rest: String = cur.chars[cur.pos..].iter().collect();
    if !rest.contains(';') {
        if address.is_some() {
            return Err(cur.error("an instruction statement ending in `;`"));
        }
        return Ok(Line::Skip);
    }
    if !words.is_empty() {
        return Err(cur.error("raw words only after the statement"));
    }

    let mut instr = parse_statement(&mut cur, address)?;
    let mut trailing = Vec::new();
    while cur.at_comment() {
        let body = cur.comment_body()?;
        if let Some(w) = word_comment_value(&body) {
            trailing.push(w);
        }
    }
    if !cur.at_end() {
        return Err(cur.error("end of line after the statement"));
    }
    if !trailing.is_empty() {
        instr.raw_words = Some(trailing);
    }
    Ok(Line::Instruction(instr))
}

/// Parses a single instruction statement.
pub fn parse_instruction(line: &str) -> Result<Instruction, ParseError> {
    match parse_line(line, 1)? {
        Line::Instruction(i) => Ok(i),
        _ => Err(ParseError {
            line: 1,
            column: 1,
            expected: "an instruction statement".into(),
            found: format!("`{}`", line.trim()),
        }),
    }
}

/// Parses a whole listing. Instruction order follows the source; raw-word
/// lines attach to the preceding instruction on Turing/Volta (where an
/// instruction's encoding spans two words) and become standalone words on
/// earlier generations (where they are bundle control words).
pub fn parse_listing(text: &str, arch: Generation) -> Result<Program, ParseError> {
    let mut program = Program::new(arch, Vec::new());
    let mut last_was_instruction = false;
    for (i, line) in text.lines().enumerate() {
        match parse_line(line, i + 1)? {
            Line::Skip => {}
            Line::Words(words) => {
                if arch.has_embedded_control() && last_was_instruction {
                    let instr = program.instructions.last_mut().unwrap();
                    instr.raw_words.get_or_insert_with(Vec::new).extend(words);
                } else {
                    let at = program.instructions.len();
                    program
                        .standalone_words
                        .extend(words.into_iter().map(|word| StandaloneWord { before_instruction: at, word }));
                    last_was_instruction = false;
                }
            }
            Line::Instruction(instr) => {
                program.instructions.push(instr);
                last_was_instruction = true;
            }
        }
    }
    Ok(program)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sass::{render_instruction, render_program};

    #[test]
    fn ffma_with_constant_operand() {
        let i = parse_instruction("/*0110*/ FFMA R4, R8, c[0x0][0x170], R4 ;").unwrap();
        assert_eq!(i.address, Some(0x110));
        assert_eq!(i.opcode, "FFMA");
        assert!(i.modifiers.is_empty());
        assert_eq!(
            i.operands,
            vec![
                Operand::reg(Reg::R(4)),
                Operand::reg(Reg::R(8)),
                Operand::ConstRef { bank: 0, offset: 0x170 },
                Operand::reg(Reg::R(4)),
            ]
        );
    }

    #[test]
    fn predicated_load_with_mem_offset() {
        let i = parse_instruction("/*0288*/ @P5 LDG.E.CI R66, [R86+0x100];").unwrap();
        assert_eq!(i.predicate, Some(Predicate { negated: false, reg: PredReg::P(5) }));
        assert_eq!(i.opcode, "LDG");
        assert_eq!(i.modifiers, vec!["E".to_string(), "CI".to_string()]);
        assert_eq!(
            i.operands[1],
            Operand::MemRef { base: Reg::R(86), base_attrs: vec![], offset: 0x100 }
        );
    }

    #[test]
    fn negated_predicate_and_rz() {
        let i = parse_instruction("@!P5 MOV R66, RZ;").unwrap();
        assert_eq!(i.predicate, Some(Predicate { negated: true, reg: PredReg::P(5) }));
        assert_eq!(i.operands, vec![Operand::reg(Reg::R(66)), Operand::reg(Reg::RZ)]);
    }

    #[test]
    fn hmma_operand_attributes_survive() {
        let i =
            parse_instruction("HMMA.884.F32.F32.STEP0 R8, R26.reuse.COL, R16.reuse.COL, R8 ;")
                .unwrap();
        assert_eq!(i.modifiers, vec!["884", "F32", "F32", "STEP0"]);
        assert_eq!(
            i.operands[1],
            Operand::GeneralReg { reg: Reg::R(26), attrs: vec!["reuse".into(), "COL".into()] }
        );
        let rendered = render_instruction(&i);
        assert_eq!(parse_instruction(&rendered).unwrap(), i);
    }

    #[test]
    fn empty_line_is_a_parse_error_as_instruction() {
        assert!(parse_instruction("").is_err());
    }

    #[test]
    fn register_bounds_are_enforced() {
        assert!(parse_instruction("MOV R255, RZ;").is_err());
        assert!(parse_instruction("MOV R254, RZ;").is_ok());
        assert!(parse_instruction("MOV R4, UR63;").is_err());
        assert!(parse_instruction("MOV R4, UR62;").is_ok());
        assert!(parse_instruction("@P7 NOP;").is_err());
    }

    #[test]
    fn addressed_junk_is_never_silently_dropped() {
        let listing = "/*0040*/ this is not an instruction\n";
        let err = parse_listing(listing, Generation::Turing).unwrap_err();
        assert_eq!(err.line, 1);
    }

    #[test]
    fn headers_and_ellipses_are_skipped() {
        let listing = "Function : void axpy_kernel_val<float2, float2, 0>(\n\
                       \t.headerflags    @\"EF_CUDA_SM75 EF_CUDA_PTX_SM(EF_CUDA_SM75)\"\n\
                       ...\n\
                       /*01f0*/ LDG.E.64.SYS R2, [R2] ;\n";
        let p = parse_listing(listing, Generation::Turing).unwrap();
        assert_eq!(p.instructions.len(), 1);
        assert_eq!(p.instructions[0].address, Some(0x1f0));
    }

    #[test]
    fn generation_detection_from_headerflags() {
        assert_eq!(
            detect_generation(".headerflags @\"EF_CUDA_SM75 EF_CUDA_PTX_SM(EF_CUDA_SM75)\""),
            Some(Generation::Turing)
        );
        assert_eq!(detect_generation("EF_CUDA_SM70"), Some(Generation::Volta));
        assert_eq!(detect_generation("EF_CUDA_SM61"), Some(Generation::Pascal));
        assert_eq!(detect_generation("EF_CUDA_SM52"), Some(Generation::Maxwell));
        assert_eq!(detect_generation("EF_CUDA_SM35"), Some(Generation::Kepler));
        assert_eq!(detect_generation("no flags here"), None);
    }

    #[test]
    fn pascal_bare_words_become_standalone() {
        let listing = "\
                                                        /* 0x000f8800fe2007f1 */\n\
 /*0288*/         @P5 LDG.E.CI R66, [R86+0x100];        /* 0xeed4a00010055642 */\n\
 /*0290*/        @!P5 MOV R66, RZ;                      /* 0x5c9807800ffd0042 */\n\
 /*0298*/         @P6 LDG.E.CI R67, [R86+0x180];        /* 0xeed4a00018065643 */\n";
        let p = parse_listing(listing, Generation::Pascal).unwrap();
        assert_eq!(p.instructions.len(), 3);
        assert_eq!(p.standalone_words.len(), 1);
        assert_eq!(p.standalone_words[0].word, 0x000f8800fe2007f1);
        assert_eq!(p.standalone_words[0].before_instruction, 0);
        assert_eq!(
            p.word_stream(),
            vec![0x000f8800fe2007f1, 0xeed4a00010055642, 0x5c9807800ffd0042, 0xeed4a00018065643]
        );
    }

    #[test]
    fn turing_bare_words_continue_the_previous_instruction() {
        let listing = "/*0000*/ MOV R1, c[0x0][0x28] ; /* 0x00000a0000017a02 */\n\
                       /* 0x000fd000078e00ff */\n";
        let p = parse_listing(listing, Generation::Turing).unwrap();
        assert_eq!(p.instructions.len(), 1);
        assert_eq!(
            p.instructions[0].raw_words,
            Some(vec![0x00000a0000017a02, 0x000fd000078e00ff])
        );
        assert!(p.standalone_words.is_empty());
    }

    #[test]
    fn render_parse_round_trip_on_a_mixed_program() {
        let listing = "/*0000*/ @!P0 FFMA R4, R8.reuse, c[0x0][0x170], R4 ;\n\
                       STG.E.128.SYS [R2+-0x10], R4 ;\n\
                       BRA 0xd0 ;\n\
                       IADD3 R2, R2, 1, RZ ;\n";
        let p = parse_listing(listing, Generation::Turing).unwrap();
        assert_eq!(p.instructions.len(), 4);
        assert_eq!(
            p.instructions[1].operands[0],
            Operand::MemRef { base: Reg::R(2), base_attrs: vec![], offset: -0x10 }
        );
        let rendered = render_program(&p);
        let back = parse_listing(&rendered, Generation::Turing).unwrap();
        assert_eq!(p, back);
    }

    #[test]
    fn statement_count_matches_semicolons() {
        let listing = "MOV R0, RZ; MOV R1, RZ;";
        // Two statements on one line are rejected rather than merged.
        assert!(parse_listing(listing, Generation::Turing).is_err());
    }
}
