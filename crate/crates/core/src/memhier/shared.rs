//! Shared-memory contention latency and the analytic bandwidth bound.

use crate::profile::GpuArchProfile;

use super::MemHierError;

/// Average access latency when `conflict_degree` threads of a warp alias on
/// one bank. Dual-ported banks (Kepler) resolve two aliases per cycle: the
/// second access is free and each further pair costs one serialization step.
pub fn shared_latency(conflict_degree: u32, profile: &GpuArchProfile) -> Result<u32, MemHierError> {
    let shared = &profile.shared;
    if conflict_degree == 0 || conflict_degree > shared.banks {
        return Err(MemHierError::DegreeOutOfRange { degree: conflict_degree, banks: shared.banks });
    }
    let base = shared.no_conflict_latency;
    let extra_steps = if shared.dual_ported_banks {
        conflict_degree.saturating_sub(2).div_ceil(2)
    } else {
        conflict_degree - 1
    };
    Ok(base + shared.conflict_slope * extra_steps)
}

/// Upper bound on shared-memory bandwidth in bytes/s: all banks serving full
/// width every cycle, capped by what the load/store units can issue.
pub fn shared_bandwidth_bound(profile: &GpuArchProfile) -> f64 {
    let s = &profile.shared;
    let f = profile.graphics_clock_hz() as f64;
    let p = f64::from(profile.sm_count);
    let bank_limited = p * f64::from(s.banks) * s.bank_width as f64 * f;
    let lsu_limited = p * f64::from(s.lsu_per_sm) * s.bank_width as f64 * f;
    bank_limited.min(lsu_limited)
}
