//! One binary, one subcommand per analysis stage. Exit codes: 0 success,
//! 2 usage error, 3 lint findings, 4 input error.

mod commands;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

pub const EXIT_OK: u8 = 0;
pub const EXIT_FINDINGS: u8 = 3;
pub const EXIT_INPUT: u8 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Text,
    Json,
    Csv,
}

/// Flags shared by every subcommand.
#[derive(Debug, Args)]
pub struct Common {
    /// Architecture: builtin profile name (T4, V100, P100, P4, M60, K80),
    /// generation name, or path to a profile JSON file.
    #[arg(long, env = "SASSLAB_ARCH", default_value = "T4", global = false)]
    pub arch: String,
    /// Output format.
    #[arg(long, value_enum, default_value = "text")]
    pub format: Format,
    /// Seed for the randomized models (L1 replacement, constant L1).
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

#[derive(Debug, Parser)]
#[command(name = "sasslab", version, about = "SASS static analysis and GPU microarchitecture modeling")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// List, show or validate architecture profiles.
    Profiles {
        #[command(subcommand)]
        action: ProfilesAction,
    },
    /// Parse a listing and emit its canonical or JSON form.
    Parse {
        /// Input file, or `-` for standard input.
        #[arg(default_value = "-")]
        input: String,
        #[command(flatten)]
        common: Common,
    },
    /// Decode scheduling control sections from raw encoding words.
    DecodeCtl {
        /// 64-bit words as hex (`0x...`), in listing order.
        words: Vec<String>,
        /// Decode a bare 21-bit section value instead of words.
        #[arg(long)]
        section: Option<String>,
        /// Bit offset of the control section within a 128-bit pair.
        #[arg(long)]
        ctl_offset: Option<u32>,
        /// Which bundle section maps to the first instruction.
        #[arg(long)]
        bundle_order: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Encode one control section from field values.
    EncodeCtl {
        #[arg(long, default_value_t = 1)]
        stall: u8,
        #[arg(long = "yield", default_value_t = true, action = clap::ArgAction::Set)]
        yield_flag: bool,
        #[arg(long, default_value_t = 7)]
        read_barrier: u8,
        #[arg(long, default_value_t = 7)]
        write_barrier: u8,
        /// Barriers to wait on, comma-separated (e.g. `0,3`).
        #[arg(long, default_value = "")]
        wait: String,
        /// Source slots to flag for reuse, comma-separated (e.g. `0,1`).
        #[arg(long, default_value = "")]
        reuse: String,
        #[command(flatten)]
        common: Common,
    },
    /// Report register bank conflicts per instruction.
    Banks {
        #[arg(default_value = "-")]
        input: String,
        /// Model the operand reuse cache (requires controls or `.reuse`).
        #[arg(long)]
        reuse: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Search for a conflict-minimizing register renaming.
    Reassign {
        #[arg(default_value = "-")]
        input: String,
        /// Architectural registers available to the renaming.
        #[arg(long, default_value_t = 255)]
        budget: u32,
        #[command(flatten)]
        common: Common,
    },
    /// Predict the issue timeline of one warp.
    Schedule {
        #[arg(default_value = "-")]
        input: String,
        /// Memory level assumed for variable-latency global accesses.
        #[arg(long, default_value = "l1hit")]
        assume: String,
        /// Fail on opcodes without a latency class.
        #[arg(long)]
        strict: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Simulate warps contending for schedulers.
    Multiwarp {
        /// Warp assignment `<warp-id>=<listing-path>`; repeatable.
        #[arg(long = "warp", required = true)]
        warps: Vec<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Memory-hierarchy simulations.
    Memsim {
        #[command(subcommand)]
        action: MemsimAction,
    },
    /// Run rule-based diagnostics; exits 3 when findings exist.
    Lint {
        #[arg(default_value = "-")]
        input: String,
        /// Comma-separated rule ids (default: all rules).
        #[arg(long)]
        rules: Option<String>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Subcommand)]
pub enum ProfilesAction {
    /// Names of the built-in profiles.
    List {
        #[command(flatten)]
        common: Common,
    },
    /// Full JSON of one profile.
    Show {
        #[command(flatten)]
        common: Common,
    },
    /// Validate a profile and print any violations.
    Validate {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Subcommand)]
pub enum MemsimAction {
    /// Classify data-access latencies through L1/L2/TLBs.
    Pchase {
        /// Trace CSV (`index,address[,kind]`), or `-` for stdin; omit to
        /// generate from --array-bytes/--stride.
        #[arg(long)]
        trace: Option<String>,
        #[arg(long)]
        array_bytes: Option<u64>,
        #[arg(long, default_value_t = 32)]
        stride: u64,
        /// Run the trace twice and classify the second pass.
        #[arg(long)]
        rescan: bool,
        /// Disable the L1 data cache (all accesses translate).
        #[arg(long)]
        no_l1: bool,
        /// Size the L1 by its probe-detected capacity.
        #[arg(long)]
        detected_l1: bool,
        #[command(flatten)]
        common: Common,
    },
    /// CPI vs footprint across the instruction-cache levels.
    IcacheSweep {
        #[arg(long)]
        max_bytes: Option<u64>,
        /// Also report detected plateau boundaries.
        #[arg(long)]
        detect: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Two-warp cache-ownership probe.
    AggressorVictim {
        #[arg(long)]
        aggressor_bytes: u64,
        #[arg(long)]
        victim_bytes: u64,
        /// `same-sm` (different processing blocks) or `diff-sm`.
        #[arg(long, default_value = "same-sm")]
        placement: String,
        #[command(flatten)]
        common: Common,
    },
    /// Shared-memory latency under contention and the bandwidth bound.
    Shared {
        #[arg(long)]
        degree: Option<u32>,
        /// Sweep conflict degree 1..=banks as CSV.
        #[arg(long)]
        sweep: bool,
        /// Print the analytic bandwidth bound in bytes/s.
        #[arg(long)]
        bound: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Constant-memory latency and instruction-cache interaction.
    Const {
        #[arg(long, default_value_t = 1)]
        count: u32,
        #[arg(long, default_value = "l1")]
        level: String,
        /// Model instruction pressure against a pre-cached constant array.
        #[arg(long)]
        aggressor_bytes: Option<u64>,
        #[arg(long)]
        victim_bytes: Option<u64>,
        #[command(flatten)]
        common: Common,
    },
}

/// Errors that terminate a command with exit code 4 and a machine-readable
/// diagnostic on stderr.
#[derive(Debug)]
pub struct CliError {
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        CliError { kind: "input", message: message.into() }
    }
}

impl<E: std::error::Error> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::input(e.to_string())
    }
}

fn main() -> ExitCode {
    // Die quietly when a pipe closes early (e.g. `sasslab ... | head`).
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    match commands::dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!(
                "{}",
                serde_json::json!({ "error": e.kind, "message": e.message })
            );
            ExitCode::from(EXIT_INPUT)
        }
    }
}
