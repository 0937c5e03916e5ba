//! Closed-form throughput bound for the two-stage pipeline.
//!
//! Shares no code with the event-driven model; tests compare the two.

use crate::ssd::{FtlCalibration, FtlScheme, HitModel, IoClass};

/// Mean per-IO busy time on each stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageDemand {
    pub index_ns: f64,
    pub media_ns: f64,
}

/// `min(C / S, E / I, QD / (S + I))` in IOs per second.
pub fn bound_iops(engines: u32, units: u32, d: StageDemand, qd: u32) -> f64 {
    let per_ns = |x: f64| if x > 0.0 { 1e9 / x } else { f64::INFINITY };
    let media = units as f64 * per_ns(d.media_ns);
    let index = engines as f64 * per_ns(d.index_ns);
    let population = qd as f64 * per_ns(d.index_ns + d.media_ns);
    media.min(index).min(population)
}

/// Expected stage demand of a 4 KiB IO. `miss_ratio` is only read for the
/// flash-backed scheme with an LRU cache; a fixed-ratio cache uses its own
/// hit probability.
pub fn demand(
    cal: &FtlCalibration,
    scheme: &FtlScheme,
    remote_ns: u64,
    flash_read_ns: u64,
    class: IoClass,
    miss_ratio: f64,
) -> StageDemand {
    let p = &cal.index;
    let n = p.accesses(class.op()) as f64;
    let s = p.service_ns as f64;
    let share = if class.is_sequential() {
        1.0 / p.seq_coalesce as f64
    } else {
        1.0
    };
    let media = cal.media_service_ns.get(class) as f64;
    let (index, extra) = match scheme {
        FtlScheme::Ideal => (n * s, 0.0),
        FtlScheme::Lmb(l) => (
            n * (s + (1.0 - l.onboard_hit_ratio) * remote_ns as f64),
            0.0,
        ),
        FtlScheme::Dftl(d) => {
            let m = match d.hit_model {
                HitModel::FixedRatio(h) => 1.0 - h,
                HitModel::Lru => miss_ratio,
            };
            let flash = m * n * flash_read_ns as f64;
            if d.miss_on_media {
                (n * s, flash)
            } else {
                (n * s + flash, 0.0)
            }
        }
    };
    StageDemand {
        index_ns: index * share,
        media_ns: media + extra * share,
    }
}

pub fn predict_iops(
    cal: &FtlCalibration,
    scheme: &FtlScheme,
    remote_ns: u64,
    flash_read_ns: u64,
    class: IoClass,
    qd: u32,
    miss_ratio: f64,
) -> f64 {
    let d = demand(cal, scheme, remote_ns, flash_read_ns, class, miss_ratio);
    bound_iops(cal.index.engines, cal.media_units, d, qd)
}
