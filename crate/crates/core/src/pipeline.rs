//! Closed-loop run of one SSD: `qd` IOs in flight, each passing through the
//! index stage and then the media stage. Both stages are FIFO multi-server
//! queues. A completion immediately submits the next IO.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use crate::sim::{DispatchError, PayloadKind, SimError, SimRng, SimTime, Simulation};
use crate::ssd::{FtlCalibration, FtlScheme, IndexCounters, IndexModel, IoClass};
use crate::workload::{IoStream, WorkloadError, WorkloadSpec};

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub calibration: FtlCalibration,
    pub scheme: FtlScheme,
    /// Cost of one remote L2P access for LMB schemes.
    pub remote_ns: u64,
    pub flash_read_ns: u64,
    pub workload: WorkloadSpec,
    pub device_pages: u64,
    pub seed: u64,
    /// Keep a per-IO record of every completion.
    pub record_trace: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct IoTrace {
    pub class: IoClass,
    pub lpn: u64,
    pub submit_ns: u64,
    pub complete_ns: u64,
    /// Media occupancy the IO was charged.
    pub media_ns: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LatencyStats {
    pub samples: u64,
    pub mean_ns: f64,
    pub min_ns: u64,
    pub p50_ns: u64,
    pub p99_ns: u64,
    pub p999_ns: u64,
    pub max_ns: u64,
    /// `histogram[i]` counts latencies in `[2^(i-1), 2^i)` ns; bucket 0 holds zero.
    pub histogram: Vec<u64>,
}

impl LatencyStats {
    pub fn from_samples(mut v: Vec<u64>) -> Self {
        if v.is_empty() {
            return Self::default();
        }
        v.sort_unstable();
        let n = v.len() as u64;
        // nearest rank
        let rank = |num: u64, den: u64| v[((n * num).div_ceil(den) - 1) as usize];
        let mut histogram = Vec::new();
        for &x in &v {
            let b = (u64::BITS - x.leading_zeros()) as usize;
            if histogram.len() <= b {
                histogram.resize(b + 1, 0);
            }
            histogram[b] += 1;
        }
        Self {
            samples: n,
            mean_ns: v.iter().map(|&x| x as f64).sum::<f64>() / n as f64,
            min_ns: v[0],
            p50_ns: rank(50, 100),
            p99_ns: rank(99, 100),
            p999_ns: rank(999, 1000),
            max_ns: v[v.len() - 1],
            histogram,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineResult {
    pub completed: u64,
    pub sim_ns: u64,
    pub iops: f64,
    /// Steady-state latency: the first `qd` completions are left out.
    pub latency: LatencyStats,
    pub index_busy_ns: u64,
    pub media_busy_ns: u64,
    pub index_util: f64,
    pub media_util: f64,
    pub index: IndexCounters,
    pub events: u64,
    pub trace: Option<Vec<IoTrace>>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Sim(#[from] DispatchError<SimError>),
    #[error(transparent)]
    Schedule(#[from] SimError),
}

#[derive(Debug, Clone, Copy)]
enum Ev {
    IndexDone(u32),
    MediaDone(u32),
}

impl PayloadKind for Ev {
    fn kind(&self) -> &'static str {
        match self {
            Ev::IndexDone(_) => "index-done",
            Ev::MediaDone(_) => "media-done",
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Slot {
    class: IoClass,
    lpn: u64,
    submit: u64,
    index_ns: u64,
    media_ns: u64,
}

struct Device {
    stream: IoStream,
    index: IndexModel,
    media_base: [u64; 4],
    slots: Vec<Slot>,
    idx_free: u32,
    idx_queue: VecDeque<u32>,
    media_free: u32,
    media_queue: VecDeque<u32>,
    total: u64,
    qd: u64,
    issued: u64,
    completed: u64,
    index_busy: u64,
    media_busy: u64,
    latencies: Vec<u64>,
    trace: Option<Vec<IoTrace>>,
}

fn class_slot(c: IoClass) -> usize {
    match c {
        IoClass::RandRead => 0,
        IoClass::RandWrite => 1,
        IoClass::SeqRead => 2,
        IoClass::SeqWrite => 3,
    }
}

impl Device {
    fn submit(&mut self, sim: &mut Simulation<Ev>, slot: u32) -> Result<(), SimError> {
        let req = self.stream.next().expect("IO streams are endless");
        let cost = self.index.index_service(req.class, req.lpn, req.pages);
        self.slots[slot as usize] = Slot {
            class: req.class,
            lpn: req.lpn,
            submit: sim.now().ns(),
            index_ns: cost.index_ns,
            media_ns: self.media_base[class_slot(req.class)] * req.pages + cost.media_extra_ns,
        };
        self.issued += 1;
        if cost.index_ns == 0 {
            return self.enter_media(sim, slot);
        }
        if self.idx_free > 0 {
            self.start_index(sim, slot)
        } else {
            self.idx_queue.push_back(slot);
            Ok(())
        }
    }

    fn start_index(&mut self, sim: &mut Simulation<Ev>, slot: u32) -> Result<(), SimError> {
        self.idx_free -= 1;
        let ns = self.slots[slot as usize].index_ns;
        self.index_busy += ns;
        sim.schedule(ns, Ev::IndexDone(slot))?;
        Ok(())
    }

    fn enter_media(&mut self, sim: &mut Simulation<Ev>, slot: u32) -> Result<(), SimError> {
        if self.media_free > 0 {
            self.start_media(sim, slot)
        } else {
            self.media_queue.push_back(slot);
            Ok(())
        }
    }

    fn start_media(&mut self, sim: &mut Simulation<Ev>, slot: u32) -> Result<(), SimError> {
        self.media_free -= 1;
        let ns = self.slots[slot as usize].media_ns;
        self.media_busy += ns;
        sim.schedule(ns, Ev::MediaDone(slot))?;
        Ok(())
    }

    fn handle(&mut self, sim: &mut Simulation<Ev>, ev: Ev) -> Result<(), SimError> {
        match ev {
            Ev::IndexDone(slot) => {
                self.idx_free += 1;
                if let Some(next) = self.idx_queue.pop_front() {
                    self.start_index(sim, next)?;
                }
                self.enter_media(sim, slot)
            }
            Ev::MediaDone(slot) => {
                self.media_free += 1;
                if let Some(next) = self.media_queue.pop_front() {
                    self.start_media(sim, next)?;
                }
                let s = self.slots[slot as usize];
                let now = sim.now().ns();
                if self.completed >= self.qd {
                    self.latencies.push(now - s.submit);
                }
                if let Some(t) = self.trace.as_mut() {
                    t.push(IoTrace {
                        class: s.class,
                        lpn: s.lpn,
                        submit_ns: s.submit,
                        complete_ns: now,
                        media_ns: s.media_ns,
                    });
                }
                self.completed += 1;
                if self.issued < self.total {
                    self.submit(sim, slot)?;
                }
                Ok(())
            }
        }
    }
}

/// Run one closed-loop workload to completion.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineResult, PipelineError> {
    let w = &cfg.workload;
    let rng = SimRng::new(cfg.seed);
    let stream = IoStream::new(w, cfg.device_pages, rng.fork("workload"))?;
    let cal = &cfg.calibration;
    let index = IndexModel::new(
        cfg.scheme.clone(),
        cal.index,
        cfg.remote_ns,
        cfg.flash_read_ns,
        rng.fork("ftl"),
    );
    let m = cal.media_service_ns;
    let qd = w.qd.min(u32::try_from(w.total_ios).unwrap_or(u32::MAX));
    let mut dev = Device {
        stream,
        index,
        media_base: [m.rand_read, m.rand_write, m.seq_read, m.seq_write],
        slots: vec![
            Slot {
                class: w.pattern,
                lpn: 0,
                submit: 0,
                index_ns: 0,
                media_ns: 0,
            };
            qd as usize
        ],
        idx_free: cal.index.engines,
        idx_queue: VecDeque::new(),
        media_free: cal.media_units,
        media_queue: VecDeque::new(),
        total: w.total_ios,
        qd: qd as u64,
        issued: 0,
        completed: 0,
        index_busy: 0,
        media_busy: 0,
        latencies: Vec::with_capacity(w.total_ios.saturating_sub(qd as u64) as usize),
        trace: cfg.record_trace.then(Vec::new),
    };
    let mut sim = Simulation::new();
    for slot in 0..qd {
        dev.submit(&mut sim, slot)?;
    }
    let stats = sim.run_to_completion(|sim, ev| dev.handle(sim, ev.payload))?;
    debug_assert_eq!(dev.completed, w.total_ios);
    let sim_ns = stats.final_time.ns().max(1);
    let secs = sim_ns as f64 / 1e9;
    let util = |busy: u64, servers: u32| busy as f64 / (servers as f64 * sim_ns as f64);
    Ok(PipelineResult {
        completed: dev.completed,
        sim_ns,
        iops: dev.completed as f64 / secs,
        latency: LatencyStats::from_samples(dev.latencies),
        index_busy_ns: dev.index_busy,
        media_busy_ns: dev.media_busy,
        index_util: util(dev.index_busy, cal.index.engines),
        media_util: util(dev.media_busy, cal.media_units),
        index: dev.index.counters(),
        events: stats.events_dispatched,
        trace: dev.trace,
    })
}

/// Time of the last completion in a trace.
pub fn trace_end(trace: &[IoTrace]) -> SimTime {
    SimTime(trace.iter().map(|t| t.complete_ns).max().unwrap_or(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fabric::RouteClass;
    use crate::ssd::{calibrate, IndexParams, LmbIndex, PerClass, SsdSpec};

    fn toy_cal(engines: u32, s: u64, units: u32, media: u64) -> FtlCalibration {
        FtlCalibration {
            index: IndexParams {
                engines,
                service_ns: s,
                n_read: 1,
                n_write: 2,
                seq_coalesce: 1,
            },
            media_units: units,
            media_service_ns: PerClass::from_fn(|_| media),
        }
    }

    fn cfg(
        cal: FtlCalibration,
        scheme: FtlScheme,
        pattern: IoClass,
        qd: u32,
        total: u64,
    ) -> PipelineConfig {
        let mut w = WorkloadSpec::new(pattern, total);
        w.qd = qd;
        PipelineConfig {
            calibration: cal,
            scheme,
            remote_ns: 190,
            flash_read_ns: 25_000,
            workload: w,
            device_pages: 1 << 20,
            seed: 42,
            record_trace: true,
        }
    }

    #[test]
    fn single_io_latency_is_index_plus_media() {
        let r = run_pipeline(&cfg(
            toy_cal(1, 100, 1, 1000),
            FtlScheme::Ideal,
            IoClass::RandRead,
            1,
            5,
        ))
        .unwrap();
        let t = r.trace.unwrap();
        assert_eq!(t.len(), 5);
        assert!(t.iter().all(|x| x.complete_ns - x.submit_ns == 1100));
        assert_eq!(r.sim_ns, 5500);
    }

    #[test]
    fn media_bound_throughput() {
        // 4 units of 10us: 400k IOPS; index cap 10M
        let r = run_pipeline(&cfg(
            toy_cal(1, 100, 4, 10_000),
            FtlScheme::Ideal,
            IoClass::RandRead,
            32,
            20_000,
        ))
        .unwrap();
        assert!((r.iops / 400_000.0 - 1.0).abs() < 0.01, "{}", r.iops);
        assert!(r.media_util > 0.99);
    }

    #[test]
    fn index_bound_throughput() {
        // 2 engines, 2 * 500ns per write: 2M IOPS; media cap 32 / 1us = 32M
        let r = run_pipeline(&cfg(
            toy_cal(2, 500, 32, 1000),
            FtlScheme::Ideal,
            IoClass::RandWrite,
            64,
            50_000,
        ))
        .unwrap();
        assert!((r.iops / 2e6 - 1.0).abs() < 0.01, "{}", r.iops);
        assert!(r.index_util > 0.99);
    }

    #[test]
    fn conservation_and_littles_law() {
        let cal = calibrate(&SsdSpec::gen4(), &IndexParams::default()).unwrap();
        for pattern in IoClass::ALL {
            let c = cfg(
                cal,
                FtlScheme::lmb(RouteClass::PcieViaHost),
                pattern,
                64,
                30_000,
            );
            let r = run_pipeline(&c).unwrap();
            assert_eq!(r.completed, 30_000);
            let t = r.trace.as_ref().unwrap();
            assert_eq!(t.len(), 30_000);
            let base = cal.media_service_ns.get(pattern);
            assert!(t
                .iter()
                .all(|x| x.complete_ns >= x.submit_ns + base && x.media_ns >= base));
            assert_eq!(trace_end(t).ns(), r.sim_ns);
            let l = r.iops * r.latency.mean_ns / 1e9;
            assert!((l / 64.0 - 1.0).abs() < 0.05, "{pattern}: {l}");
        }
    }

    #[test]
    fn full_onboard_hit_trace_matches_ideal() {
        let cal = calibrate(&SsdSpec::gen5(), &IndexParams::default()).unwrap();
        let lmb = FtlScheme::Lmb(LmbIndex {
            route: RouteClass::CxlP2P,
            onboard_hit_ratio: 1.0,
        });
        let a = run_pipeline(&cfg(cal, FtlScheme::Ideal, IoClass::RandRead, 64, 5000)).unwrap();
        let b = run_pipeline(&cfg(cal, lmb, IoClass::RandRead, 64, 5000)).unwrap();
        assert_eq!(a.trace, b.trace);
    }

    #[test]
    fn deterministic() {
        let cal = calibrate(&SsdSpec::gen4(), &IndexParams::default()).unwrap();
        let lmb = FtlScheme::Lmb(LmbIndex {
            route: RouteClass::CxlP2P,
            onboard_hit_ratio: 0.3,
        });
        let a = run_pipeline(&cfg(cal, lmb.clone(), IoClass::RandWrite, 64, 5000)).unwrap();
        let b = run_pipeline(&cfg(cal, lmb, IoClass::RandWrite, 64, 5000)).unwrap();
        assert_eq!(a, b);
        assert!(a.index.onboard_hits > 0 && a.index.remote_accesses > 0);
    }

    #[test]
    fn percentiles_nearest_rank() {
        let s = LatencyStats::from_samples((1..=1000).collect());
        assert_eq!(
            (s.p50_ns, s.p99_ns, s.p999_ns, s.min_ns, s.max_ns),
            (500, 990, 999, 1, 1000)
        );
        assert_eq!(s.histogram.iter().sum::<u64>(), 1000);
        // 512..=1000 land in bucket 10
        assert_eq!(s.histogram[10], 489);
        assert_eq!(LatencyStats::from_samples(Vec::new()).samples, 0);
    }

    #[test]
    fn ramp_up_excluded_from_latency() {
        let r = run_pipeline(&cfg(
            toy_cal(1, 100, 4, 10_000),
            FtlScheme::Ideal,
            IoClass::RandRead,
            8,
            100,
        ))
        .unwrap();
        assert_eq!(r.latency.samples, 92);
    }
}
