//! Round-trip and structural checks over the fixture listings.

use sasslab_core::control::{extract_controls, inject_controls, ControlLayout};
use sasslab_core::sass::{detect_generation, parse_listing, render_program};
use sasslab_core::Generation;

fn fixture(name: &str) -> String {
    let path = format!("{}/tests/fixtures/{name}", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(path).unwrap()
}

fn round_trips(name: &str, arch: Generation) -> sasslab_core::sass::Program {
    let text = fixture(name);
    let program = parse_listing(&text, arch).unwrap_or_else(|e| panic!("{name}: {e}"));
    let rendered = render_program(&program);
    let reparsed = parse_listing(&rendered, arch).unwrap_or_else(|e| panic!("{name} re-parse: {e}"));
    assert_eq!(program, reparsed, "{name} must round-trip structurally");
    program
}

#[test]
fn cublas_saxpy_parses_and_round_trips() {
    let p = round_trips("saxpy_cublas.sass", Generation::Turing);
    assert_eq!(p.instructions.len(), 4);
    assert!(p.instructions.iter().all(|i| i.opcode == "LDG"));
    assert_eq!(detect_generation(&fixture("saxpy_cublas.sass")), Some(Generation::Turing));
}

#[test]
fn improved_saxpy_parses_and_round_trips() {
    let p = round_trips("saxpy_improved.sass", Generation::Turing);
    assert_eq!(p.instructions.len(), 7);
    let widths: Vec<u32> = p
        .instructions
        .iter()
        .filter(|i| i.opcode == "LDG" || i.opcode == "STG")
        .map(|i| sasslab_core::sass::access_width(i).unwrap())
        .collect();
    assert_eq!(widths, vec![128, 128, 128]);
}

#[test]
fn volta_hmma_count_is_sixteen() {
    let p = round_trips("volta_hmma884.sass", Generation::Volta);
    assert_eq!(p.instructions.len(), 16);
    assert!(p.instructions.iter().all(|i| i.opcode == "HMMA" && i.has_modifier("884")));
}

#[test]
fn turing_hmma_count_is_four() {
    let p = round_trips("turing_hmma1688.sass", Generation::Turing);
    assert_eq!(p.instructions.len(), 4);
    assert!(p.instructions.iter().all(|i| i.opcode == "HMMA" && i.has_modifier("1688")));
}

#[test]
fn pascal_bundle_round_trips_and_renders_to_golden() {
    let p = round_trips("pascal_bundle.sass", Generation::Pascal);
    assert_eq!(p.instructions.len(), 3);
    assert_eq!(p.standalone_words.len(), 1);
    let golden = fixture("pascal_bundle.golden");
    assert_eq!(render_program(&p), golden, "canonical rendering is pinned byte-for-byte");
}

#[test]
fn pascal_bundle_controls_decode_from_the_word_stream() {
    let p = round_trips("pascal_bundle.sass", Generation::Pascal);
    let words = p.word_stream();
    assert_eq!(words.len(), 4);
    let layout = ControlLayout::for_generation(Generation::Pascal);
    let controls = extract_controls(&words, &layout).unwrap();
    assert_eq!(controls.len(), 3);
    let stalls: Vec<u8> = controls.iter().map(|c| c.decoded().unwrap().stall).collect();
    assert_eq!(stalls, vec![1, 1, 2]);
    let back = inject_controls(&words, &controls, &layout).unwrap();
    assert_eq!(back, words);
}

#[test]
fn instruction_count_equals_statement_count() {
    for (name, arch) in [
        ("saxpy_cublas.sass", Generation::Turing),
        ("saxpy_improved.sass", Generation::Turing),
        ("pascal_bundle.sass", Generation::Pascal),
        ("volta_hmma884.sass", Generation::Volta),
        ("turing_hmma1688.sass", Generation::Turing),
    ] {
        let text = fixture(name);
        let statements = text.matches(';').count();
        let p = parse_listing(&text, arch).unwrap();
        assert_eq!(p.instructions.len(), statements, "{name}");
    }
}
