//! Static issue simulation for software-scheduled warps.
//!
//! The scheduler honors each instruction's control section: stall counts
//! gate the next issue, wait masks hold issue until dependency barriers
//! clear, variable-latency producers arm write barriers, stores arm read
//! barriers while their operands drain, and a cleared yield flag charges the
//! one-cycle warp-switch penalty. Register bank conflicts feed in as extra
//! issue delay.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::banks::analyze_conflicts;
use crate::control::{ControlInfo, ControlSection, BARRIER_NONE, MAX_STALL, NUM_BARRIERS};
use crate::profile::{Generation, GpuArchProfile, LatencyClass};
use crate::sass::{is_store_opcode, Program};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum IssueError {
    #[error("no latency class for opcode `{0}` (strict mode)")]
    UnresolvedLatency(String),
    #[error("control sections malformed: {0}")]
    MalformedControls(String),
}

/// Which level of the memory hierarchy variable-latency global accesses are
/// assumed to hit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum MemAssumption {
    #[default]
    L1Hit,
    L2Hit,
    L2Miss,
    TlbMiss,
}

impl MemAssumption {
    pub fn class_name(self) -> &'static str {
        match self {
            MemAssumption::L1Hit => "l1-hit",
            MemAssumption::L2Hit => "l2-hit",
            MemAssumption::L2Miss => "l2-miss-tlb-hit",
            MemAssumption::TlbMiss => "tlb-miss",
        }
    }
}

impl std::str::FromStr for MemAssumption {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "l1hit" | "l1-hit" => Ok(MemAssumption::L1Hit),
            "l2hit" | "l2-hit" => Ok(MemAssumption::L2Hit),
            "l2miss" | "l2-miss" => Ok(MemAssumption::L2Miss),
            "tlbmiss" | "tlb-miss" => Ok(MemAssumption::TlbMiss),
            other => Err(format!("unknown memory assumption `{other}`")),
        }
    }
}

/// Dual-issue trigger for the Pascal/Maxwell twin dispatchers. The encoding
/// of the trigger is not established, so it defaults to never firing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DualIssueRule {
    #[default]
    Never,
    /// Fire on stall = 0 with the yield flag set.
    YieldAndZeroStall,
}

impl DualIssueRule {
    fn fires(self, control: &ControlInfo) -> bool {
        match self {
            DualIssueRule::Never => false,
            DualIssueRule::YieldAndZeroStall => control.stall == 0 && control.yield_flag,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScheduleOptions {
    pub assume: MemAssumption,
    /// Error on opcodes with no latency class instead of using the default.
    pub strict: bool,
    /// Cycles a read barrier stays armed after issue.
    pub read_hold: u64,
    /// Add bank-conflict stalls from the conflict analyzer.
    pub model_bank_conflicts: bool,
    pub dual_issue: DualIssueRule,
}

impl Default for ScheduleOptions {
    fn default() -> Self {
        ScheduleOptions {
            assume: MemAssumption::L1Hit,
            strict: false,
            read_hold: 1,
            model_bank_conflicts: true,
            dual_issue: DualIssueRule::Never,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum StallSource {
    None,
    StallField,
    BarrierWait,
    Conflict,
    YieldSwitch,
}

#[derive(Debug, Clone, Serialize)]
pub struct TimelineEntry {
    pub index: usize,
    pub address: Option<u64>,
    pub opcode: String,
    pub latency_class: String,
    pub issue_cycle: u64,
    pub complete_cycle: u64,
    pub stall_source: StallSource,
}

#[derive(Debug, Clone, Serialize)]
pub struct Timeline {
    pub entries: Vec<TimelineEntry>,
    pub total_cycles: u64,
    pub cpi: f64,
}

/// warp_id -> scheduler: warps with the same index modulo 4 share one.
pub fn scheduler_of(warp_id: u32) -> u32 {
    warp_id % 4
}

/// Resolves an opcode to its latency class, applying the memory assumption
/// to global-access opcodes.
pub fn resolve_class<'p>(
    opcode: &str,
    profile: &'p GpuArchProfile,
    options: &ScheduleOptions,
) -> Result<(String, &'p LatencyClass), IssueError> {
    let global_mem = matches!(opcode, "LDG" | "LD" | "LDL" | "STG" | "ST" | "STL");
    let name: String = if global_mem {
        options.assume.class_name().to_string()
    } else {
        match profile.opcode_classes.get(opcode) {
            Some(n) => n.clone(),
            None if options.strict => return Err(IssueError::UnresolvedLatency(opcode.to_string())),
            None => profile.default_latency_class.clone(),
        }
    };
    let class = profile
        .latency_table
        .get(&name)
        .ok_or_else(|| IssueError::MalformedControls(format!("latency class `{name}` missing")))?;
    Ok((name, class))
}

/// Fills in control sections for instructions that have none: fixed-latency
/// producers stall for their full latency when the next instruction consumes
/// their result (one cycle otherwise); variable-latency producers take a
/// round-robin write barrier which their consumers wait on; stores hold a
/// read barrier.
pub fn default_controls(
    program: &Program,
    profile: &GpuArchProfile,
    options: &ScheduleOptions,
) -> Result<Vec<ControlInfo>, IssueError> {
    let n = program.instructions.len();
    let mut out = Vec::with_capacity(n);
    let mut next_barrier = 0u8;
    // Barrier guarding each register written by an in-flight variable op.
    let mut reg_barrier: BTreeMap<u8, u8> = BTreeMap::new();
    let mut read_barriers_in_use: Vec<u8> = Vec::new();

    for (i, instr) in program.instructions.iter().enumerate() {
        if let Some(ControlSection::Decoded(info)) = program.control_for(i) {
            out.push(*info);
            continue;
        }
        let (_, class) = resolve_class(&instr.opcode, profile, options)?;
        let mut info = ControlInfo::with_stall(1);

        // Wait on barriers guarding any register this instruction touches.
        let (dest, sources) = crate::banks::operand_roles(instr);
        let mut touched: Vec<u8> = sources.iter().filter_map(|(_, op)| op.ported_register()).collect();
        if let Some(d) = dest {
            touched.push(d);
        }
        for reg in &touched {
            if let Some(b) = reg_barrier.get(reg) {
                info.wait_mask |= 1 << b;
            }
        }
        for b in 0..NUM_BARRIERS {
            if info.wait_mask & (1 << b) != 0 {
                reg_barrier.retain(|_, v| *v != b);
                read_barriers_in_use.retain(|v| *v != b);
            }
        }

        if class.variable {
            let barrier = next_barrier;
            next_barrier = (next_barrier + 1) % NUM_BARRIERS;
            if is_store_opcode(&instr.opcode) {
                info.read_barrier = barrier;
                read_barriers_in_use.push(barrier);
            } else {
                info.write_barrier = barrier;
                if let Some(d) = dest {
                    reg_barrier.insert(d, barrier);
                }
            }
            info.stall = 1;
        } else {
            // Stall long enough for a dependent neighbor to read the result.
            let dependent = program.instructions.get(i + 1).is_some_and(|next| {
                let (_, next_sources) = crate::banks::operand_roles(next);
                dest.is_some_and(|d| {
                    next_sources.iter().any(|(_, op)| op.ported_register() == Some(d))
                })
            });
            info.stall = if dependent {
                class.cycles.min(u32::from(MAX_STALL)) as u8
            } else {
                1
            };
        }
        out.push(info);
    }
    Ok(out)
}

struct BarrierState {
    pending: [u64; NUM_BARRIERS as usize],
}

impl BarrierState {
    fn new() -> Self {
        BarrierState { pending: [0; NUM_BARRIERS as usize] }
    }

    fn wait_until(&self, mask: u8) -> u64 {
        (0..NUM_BARRIERS)
            .filter(|b| mask & (1 << b) != 0)
            .map(|b| self.pending[b as usize])
            .max()
            .unwrap_or(0)
    }

    fn arm(&mut self, barrier: u8, until: u64) {
        if barrier < NUM_BARRIERS {
            let slot = &mut self.pending[barrier as usize];
            *slot = (*slot).max(until);
        }
    }
}

/// Simulates one warp in isolation.
pub fn schedule_warp(
    program: &Program,
    profile: &GpuArchProfile,
    options: &ScheduleOptions,
) -> Result<Timeline, IssueError> {
    let controls = default_controls(program, profile, options)?;
    let conflicts = if options.model_bank_conflicts {
        let reuse = program.controls.is_some();
        analyze_conflicts(program, profile, reuse)
            .map_err(|e| IssueError::MalformedControls(e.to_string()))?
            .per_instruction
            .iter()
            .map(|c| u64::from(c.conflict_cycles))
            .collect()
    } else {
        vec![0u64; program.instructions.len()]
    };

    let mut barriers = BarrierState::new();
    let mut entries = Vec::with_capacity(program.instructions.len());
    let mut next_free = 0u64; // earliest issue allowed by the previous stall
    let mut prev_stall_end = 0u64;
    let mut prev_yield_penalty = false;
    let mut dual_issue_pending = false;

    for (i, instr) in program.instructions.iter().enumerate() {
        let control = &controls[i];
        let (class_name, class) = resolve_class(&instr.opcode, profile, options)?;

        let mut earliest = next_free;
        let mut source = if i == 0 { StallSource::None } else { StallSource::StallField };
        if prev_yield_penalty {
            earliest += 1;
            source = StallSource::YieldSwitch;
        }
        if dual_issue_pending {
            earliest = prev_stall_end;
            source = StallSource::None;
        }
        let conflict_delay = conflicts[i];
        if conflict_delay > 0 {
            earliest += conflict_delay;
            source = StallSource::Conflict;
        }
        let barrier_ready = barriers.wait_until(control.wait_mask);
        if barrier_ready > earliest {
            earliest = barrier_ready;
            source = StallSource::BarrierWait;
        }

        let issue = earliest;
        let complete = issue + u64::from(class.cycles);
        if control.write_barrier != BARRIER_NONE {
            barriers.arm(control.write_barrier, complete);
        }
        if control.read_barrier != BARRIER_NONE {
            barriers.arm(control.read_barrier, issue + options.read_hold);
        }

        entries.push(TimelineEntry {
            index: i,
            address: instr.address,
            opcode: instr.opcode.clone(),
            latency_class: class_name,
            issue_cycle: issue,
            complete_cycle: complete,
            stall_source: source,
        });

        dual_issue_pending = profile.generation_dual_capable() && options.dual_issue.fires(control);
        prev_stall_end = issue;
        next_free = issue + u64::from(control.stall.max(1));
        prev_yield_penalty = !control.yield_flag;
    }

    let total_cycles = entries.iter().map(|e| e.complete_cycle).max().unwrap_or(0);
    let cpi = if entries.is_empty() { 0.0 } else { total_cycles as f64 / entries.len() as f64 };
    Ok(Timeline { entries, total_cycles, cpi })
}

impl GpuArchProfile {
    fn generation_dual_capable(&self) -> bool {
        matches!(self.generation, Generation::Pascal | Generation::Maxwell)
    }
}

/// Shrinks the stall on a producer until its dependent consumer would issue
/// before the result is ready, and returns the last safe value -- the same
/// procedure used to measure dependent-issue latency on hardware. Producers
/// whose latency exceeds the 4-bit stall field are ordered through a write
/// barrier instead, and the enforced issue gap is returned.
pub fn minimal_correct_stall(opcode: &str, profile: &GpuArchProfile) -> Result<u32, IssueError> {
    use crate::sass::{Instruction, Operand, Reg};
    // Source registers sit in distinct banks on both 2- and 4-bank models so
    // conflicts cannot skew the measurement.
    let producer = Instruction::new(
        opcode,
        vec![
            Operand::reg(Reg::R(4)),
            Operand::reg(Reg::R(8)),
            Operand::reg(Reg::R(9)),
            Operand::reg(Reg::R(10)),
        ],
    );
    let consumer = Instruction::new(
        "FADD",
        vec![Operand::reg(Reg::R(5)), Operand::reg(Reg::R(4)), Operand::reg(Reg::R(11))],
    );
    let mut program = Program::new(profile.generation, vec![producer, consumer]);
    let options = ScheduleOptions::default();
    for stall in 1..=u32::from(MAX_STALL) {
        program.controls = Some(vec![
            ControlSection::Decoded(ControlInfo::with_stall(stall as u8)),
            ControlSection::Decoded(ControlInfo::with_stall(1)),
        ]);
        let t = schedule_warp(&program, profile, &options)?;
        if t.entries[1].issue_cycle >= t.entries[0].complete_cycle {
            return Ok(stall);
        }
    }
    let mut a = ControlInfo::with_stall(1);
    a.write_barrier = 0;
    let mut b = ControlInfo::with_stall(1);
    b.wait_mask = 1;
    program.controls = Some(vec![ControlSection::Decoded(a), ControlSection::Decoded(b)]);
    let t = schedule_warp(&program, profile, &options)?;
    Ok((t.entries[1].issue_cycle - t.entries[0].issue_cycle) as u32)
}

#[derive(Debug, Clone, Serialize)]
pub struct SchedulerThroughput {
    pub scheduler: u32,
    pub warps: Vec<u32>,
    pub instructions: u64,
    pub busy_cycles: u64,
    pub ipc: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MultiwarpReport {
    pub per_scheduler: Vec<SchedulerThroughput>,
    pub total_instructions: u64,
    pub makespan_cycles: u64,
    pub aggregate_ipc: f64,
    /// Scaled arithmetic rate, reported only for pure-FFMA programs:
    /// ipc x 64 lanes x 2 flops x f_g.
    pub gflops: Option<f64>,
}

struct WarpState<'a> {
    warp_id: u32,
    program: &'a Program,
    controls: Vec<ControlInfo>,
    conflicts: Vec<u64>,
    classes: Vec<u32>,
    next: usize,
    next_free: u64,
    yield_penalty: bool,
    barriers: BarrierState,
    issued: u64,
}

impl WarpState<'_> {
    fn done(&self) -> bool {
        self.next >= self.program.instructions.len()
    }

    /// Earliest cycle the next instruction could issue.
    fn ready_at(&self) -> u64 {
        let control = &self.controls[self.next];
        let mut earliest = self.next_free;
        if self.yield_penalty {
            earliest += 1;
        }
        earliest += self.conflicts[self.next];
        earliest.max(self.barriers.wait_until(control.wait_mask))
    }

    fn issue(&mut self, cycle: u64, read_hold: u64) {
        let control = self.controls[self.next];
        let complete = cycle + u64::from(self.classes[self.next]);
        if control.write_barrier != BARRIER_NONE {
            self.barriers.arm(control.write_barrier, complete);
        }
        if control.read_barrier != BARRIER_NONE {
            self.barriers.arm(control.read_barrier, cycle + read_hold);
        }
        self.next_free = cycle + u64::from(control.stall.max(1));
        self.yield_penalty = !control.yield_flag;
        self.next += 1;
        self.issued += 1;
    }
}

/// Simulates several warps sharing the four schedulers of one SM. Each
/// scheduler issues at most one instruction per cycle, round-robin among its
/// ready warps.
pub fn simulate_multiwarp(
    assignments: &[(u32, &Program)],
    profile: &GpuArchProfile,
    options: &ScheduleOptions,
) -> Result<MultiwarpReport, IssueError> {
    let mut warps = Vec::new();
    for (warp_id, program) in assignments {
        let controls = default_controls(program, profile, options)?;
        let conflicts = if options.model_bank_conflicts {
            analyze_conflicts(program, profile, program.controls.is_some())
                .map_err(|e| IssueError::MalformedControls(e.to_string()))?
                .per_instruction
                .iter()
                .map(|c| u64::from(c.conflict_cycles))
                .collect()
        } else {
            vec![0u64; program.instructions.len()]
        };
        let classes = program
            .instructions
            .iter()
            .map(|i| resolve_class(&i.opcode, profile, options).map(|(_, c)| c.cycles))
            .collect::<Result<Vec<_>, _>>()?;
        warps.push(WarpState {
            warp_id: *warp_id,
            program,
            controls,
            conflicts,
            classes,
            next: 0,
            next_free: 0,
            yield_penalty: false,
            barriers: BarrierState::new(),
            issued: 0,
        });
    }

    let schedulers = profile.schedulers_per_sm.max(1);
    let mut rr: Vec<usize> = vec![0; schedulers as usize];
    let mut cycle = 0u64;
    let mut last_issue = vec![0u64; schedulers as usize];
    let safety_cap = 100_000_000u64;

    while warps.iter().any(|w| !w.done()) {
        if cycle > safety_cap {
            return Err(IssueError::MalformedControls("simulation exceeded cycle cap".into()));
        }
        let mut advanced_to: Option<u64> = None;
        for sched in 0..schedulers {
            let members: Vec<usize> = (0..warps.len())
                .filter(|&i| scheduler_of(warps[i].warp_id) % schedulers == sched)
                .collect();
            if members.is_empty() {
                continue;
            }
            // Round-robin among ready member warps.
            let start = rr[sched as usize];
            let mut chosen = None;
            for k in 0..members.len() {
                let wi = members[(start + k) % members.len()];
                if !warps[wi].done() && warps[wi].ready_at() <= cycle {
                    chosen = Some((wi, (start + k) % members.len()));
                    break;
                }
            }
            if let Some((wi, pos)) = chosen {
                warps[wi].issue(cycle, options.read_hold);
                last_issue[sched as usize] = cycle;
                rr[sched as usize] = (pos + 1) % members.len();
            }
            // Track the soonest future readiness for idle-cycle skipping.
            let soonest = members
                .iter()
                .filter(|&&wi| !warps[wi].done())
                .map(|&wi| warps[wi].ready_at())
                .min();
            if let Some(s) = soonest {
                advanced_to = Some(advanced_to.map_or(s, |a| a.min(s)));
            }
        }
        cycle = advanced_to.map_or(cycle + 1, |next| next.max(cycle + 1));
    }

    let mut per_scheduler = Vec::new();
    let mut total_instructions = 0u64;
    let mut makespan = 0u64;
    for sched in 0..schedulers {
        let members: Vec<&WarpState> = warps
            .iter()
            .filter(|w| scheduler_of(w.warp_id) % schedulers == sched)
            .collect();
        if members.is_empty() {
            continue;
        }
        let instructions: u64 = members.iter().map(|w| w.issued).sum();
        let busy = last_issue[sched as usize] + 1;
        total_instructions += instructions;
        makespan = makespan.max(busy);
        per_scheduler.push(SchedulerThroughput {
            scheduler: sched,
            warps: members.iter().map(|w| w.warp_id).collect(),
            instructions,
            busy_cycles: busy,
            ipc: instructions as f64 / busy as f64,
        });
    }
    let aggregate_ipc = if makespan == 0 { 0.0 } else { total_instructions as f64 / makespan as f64 };
    let pure_ffma = assignments
        .iter()
        .flat_map(|(_, p)| p.instructions.iter())
        .all(|i| i.opcode == "FFMA")
        && total_instructions > 0;
    let gflops = pure_ffma.then(|| {
        aggregate_ipc * 64.0 * 2.0 * profile.graphics_clock_hz() as f64 / 1e9
    });

    Ok(MultiwarpReport {
        per_scheduler,
        total_instructions,
        makespan_cycles: makespan,
        aggregate_ipc,
        gflops,
    })
}
