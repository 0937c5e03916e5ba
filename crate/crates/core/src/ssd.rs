//! NVMe SSD as an index stage (E engines) feeding a media stage (C units).
//!
//! The index stage performs the L2P lookups for an IO; how long that takes
//! depends on where the table lives ([`FtlScheme`]). The media stage stands in
//! for everything after translation and is sized so the onboard-DRAM scheme
//! hits the datasheet throughput for each IO class.

use alloc::collections::BTreeMap;
use core::fmt;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::fabric::{PcieGen, RouteClass};
use crate::{PAGE_SIZE, TIB};

/// L2P entry width in bytes.
pub const L2P_ENTRY_BYTES: u64 = 4;
/// Entries per 4 KiB translation page.
pub const ENTRIES_PER_TRANSLATION_PAGE: u64 = PAGE_SIZE / L2P_ENTRY_BYTES;
/// Queue depth the calibration is sized for.
pub const CALIBRATION_QD: u64 = 64;

/// 7.68 TiB, rounded down to a whole page.
pub const DEFAULT_CAPACITY_BYTES: u64 = (768 * TIB / 100) & !(PAGE_SIZE - 1);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum IoOp {
    Read,
    Write,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum IoClass {
    RandRead,
    RandWrite,
    SeqRead,
    SeqWrite,
}

impl IoClass {
    pub const ALL: [IoClass; 4] = [
        IoClass::SeqWrite,
        IoClass::RandWrite,
        IoClass::SeqRead,
        IoClass::RandRead,
    ];

    pub fn new(op: IoOp, sequential: bool) -> Self {
        match (op, sequential) {
            (IoOp::Read, false) => IoClass::RandRead,
            (IoOp::Write, false) => IoClass::RandWrite,
            (IoOp::Read, true) => IoClass::SeqRead,
            (IoOp::Write, true) => IoClass::SeqWrite,
        }
    }

    pub fn op(self) -> IoOp {
        match self {
            IoClass::RandRead | IoClass::SeqRead => IoOp::Read,
            IoClass::RandWrite | IoClass::SeqWrite => IoOp::Write,
        }
    }

    pub fn is_sequential(self) -> bool {
        matches!(self, IoClass::SeqRead | IoClass::SeqWrite)
    }

    /// Workload pattern name, e.g. `randread`.
    pub fn name(self) -> &'static str {
        match self {
            IoClass::RandRead => "randread",
            IoClass::RandWrite => "randwrite",
            IoClass::SeqRead => "seqread",
            IoClass::SeqWrite => "seqwrite",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        IoClass::ALL.into_iter().find(|c| c.name() == s)
    }
}

impl fmt::Display for IoClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One value per IO class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PerClass<T> {
    pub rand_read: T,
    pub rand_write: T,
    pub seq_read: T,
    pub seq_write: T,
}

impl<T: Copy> PerClass<T> {
    pub fn get(&self, c: IoClass) -> T {
        match c {
            IoClass::RandRead => self.rand_read,
            IoClass::RandWrite => self.rand_write,
            IoClass::SeqRead => self.seq_read,
            IoClass::SeqWrite => self.seq_write,
        }
    }

    pub fn set(&mut self, c: IoClass, v: T) {
        match c {
            IoClass::RandRead => self.rand_read = v,
            IoClass::RandWrite => self.rand_write = v,
            IoClass::SeqRead => self.seq_read = v,
            IoClass::SeqWrite => self.seq_write = v,
        }
    }

    pub fn from_fn(mut f: impl FnMut(IoClass) -> T) -> Self {
        Self {
            rand_read: f(IoClass::RandRead),
            rand_write: f(IoClass::RandWrite),
            seq_read: f(IoClass::SeqRead),
            seq_write: f(IoClass::SeqWrite),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SsdSpec {
    pub pcie_gen: PcieGen,
    pub capacity_bytes: u64,
    pub rand_read_kiops: u64,
    pub rand_write_kiops: u64,
    pub seq_read_mbps: u64,
    pub seq_write_mbps: u64,
    pub rand_read_lat_ns: u64,
    pub rand_write_lat_ns: u64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SsdError {
    #[error("SSD spec field {0} must be positive")]
    NonPositive(&'static str),
    #[error("capacity {0} is not a multiple of 4096")]
    Unaligned(u64),
    #[error("{field} = {value} is outside [0, 1]")]
    Ratio { field: &'static str, value: f64 },
    #[error("LMB index route must be CxlP2P or PcieViaHost, got {0:?}")]
    Route(RouteClass),
    #[error("{0} must be at least 1")]
    Zero(&'static str),
    #[error("{class} latency {lat_ns}ns leaves no media time after {index_ns}ns of indexing")]
    Infeasible {
        class: IoClass,
        lat_ns: u64,
        index_ns: u64,
    },
}

impl SsdSpec {
    pub fn gen4() -> Self {
        Self {
            pcie_gen: PcieGen::Gen4,
            capacity_bytes: DEFAULT_CAPACITY_BYTES,
            rand_read_kiops: 1750,
            rand_write_kiops: 340,
            seq_read_mbps: 7200,
            seq_write_mbps: 6800,
            rand_read_lat_ns: 67_000,
            rand_write_lat_ns: 9_000,
        }
    }

    pub fn gen5() -> Self {
        Self {
            pcie_gen: PcieGen::Gen5,
            capacity_bytes: DEFAULT_CAPACITY_BYTES,
            rand_read_kiops: 2800,
            rand_write_kiops: 700,
            seq_read_mbps: 14_000,
            seq_write_mbps: 10_000,
            rand_read_lat_ns: 56_000,
            rand_write_lat_ns: 8_000,
        }
    }

    pub fn for_gen(gen: PcieGen) -> Self {
        match gen {
            PcieGen::Gen4 => Self::gen4(),
            PcieGen::Gen5 => Self::gen5(),
        }
    }

    pub fn validate(&self) -> Result<(), SsdError> {
        let fields = [
            ("capacity_bytes", self.capacity_bytes),
            ("rand_read_kiops", self.rand_read_kiops),
            ("rand_write_kiops", self.rand_write_kiops),
            ("seq_read_mbps", self.seq_read_mbps),
            ("seq_write_mbps", self.seq_write_mbps),
            ("rand_read_lat_ns", self.rand_read_lat_ns),
            ("rand_write_lat_ns", self.rand_write_lat_ns),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(SsdError::NonPositive(name));
        }
        if !self.capacity_bytes.is_multiple_of(PAGE_SIZE) {
            return Err(SsdError::Unaligned(self.capacity_bytes));
        }
        Ok(())
    }

    pub fn pages(&self) -> u64 {
        self.capacity_bytes / PAGE_SIZE
    }

    /// Bytes of a flat page-level L2P table.
    pub fn l2p_bytes(&self) -> u64 {
        self.pages() * L2P_ENTRY_BYTES
    }

    /// Datasheet throughput for 4 KiB IOs of a class, in IOs per second.
    pub fn cap_iops(&self, c: IoClass) -> f64 {
        let mb = |v: u64| v as f64 * 1e6 / PAGE_SIZE as f64;
        match c {
            IoClass::RandRead => self.rand_read_kiops as f64 * 1e3,
            IoClass::RandWrite => self.rand_write_kiops as f64 * 1e3,
            IoClass::SeqRead => mb(self.seq_read_mbps),
            IoClass::SeqWrite => mb(self.seq_write_mbps),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum HitModel {
    Lru,
    /// Every lookup hits with this probability.
    FixedRatio(f64),
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DftlConfig {
    /// CMT size in L2P entries; cached in whole translation pages.
    pub cmt_capacity_entries: u64,
    pub entries_per_translation_page: u64,
    pub hit_model: HitModel,
    /// Charge the translation-page read to the media stage instead of the
    /// index engine.
    pub miss_on_media: bool,
    /// Program a dirty translation page back to flash when it is evicted.
    pub dirty_writeback: bool,
    pub writeback_ns: u64,
}

impl Default for DftlConfig {
    fn default() -> Self {
        Self {
            cmt_capacity_entries: 1 << 20,
            entries_per_translation_page: ENTRIES_PER_TRANSLATION_PAGE,
            hit_model: HitModel::Lru,
            miss_on_media: false,
            dirty_writeback: false,
            writeback_ns: 200_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LmbIndex {
    pub route: RouteClass,
    /// Fraction of index accesses served from a small onboard cache.
    pub onboard_hit_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum FtlScheme {
    Ideal,
    Dftl(DftlConfig),
    Lmb(LmbIndex),
}

impl FtlScheme {
    pub fn lmb(route: RouteClass) -> Self {
        FtlScheme::Lmb(LmbIndex {
            route,
            onboard_hit_ratio: 0.0,
        })
    }

    pub fn dftl_always_miss() -> Self {
        FtlScheme::Dftl(DftlConfig {
            hit_model: HitModel::FixedRatio(0.0),
            ..DftlConfig::default()
        })
    }

    /// Short label used in reports: `ideal`, `dftl`, `lmb-cxl`, `lmb-pcie`.
    pub fn label(&self) -> &'static str {
        match self {
            FtlScheme::Ideal => "ideal",
            FtlScheme::Dftl(_) => "dftl",
            FtlScheme::Lmb(l) if l.route == RouteClass::CxlP2P => "lmb-cxl",
            FtlScheme::Lmb(_) => "lmb-pcie",
        }
    }

    pub fn validate(&self) -> Result<(), SsdError> {
        match self {
            FtlScheme::Ideal => Ok(()),
            FtlScheme::Dftl(d) => {
                if d.cmt_capacity_entries == 0 {
                    return Err(SsdError::Zero("cmt_capacity_entries"));
                }
                if d.entries_per_translation_page == 0 {
                    return Err(SsdError::Zero("entries_per_translation_page"));
                }
                if let HitModel::FixedRatio(p) = d.hit_model {
                    check_ratio("hit_model.fixed_ratio", p)?;
                }
                Ok(())
            }
            FtlScheme::Lmb(l) => {
                if !matches!(l.route, RouteClass::CxlP2P | RouteClass::PcieViaHost) {
                    return Err(SsdError::Route(l.route));
                }
                check_ratio("onboard_hit_ratio", l.onboard_hit_ratio)
            }
        }
    }
}

fn check_ratio(field: &'static str, value: f64) -> Result<(), SsdError> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(SsdError::Ratio { field, value })
    }
}

/// Index-stage shape of a device. Either the defaults or a fit result.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct IndexParams {
    pub engines: u32,
    pub service_ns: u64,
    pub n_read: u32,
    pub n_write: u32,
    /// Sequential IOs look up the index once per this many pages.
    pub seq_coalesce: u32,
}

impl Default for IndexParams {
    fn default() -> Self {
        Self {
            engines: 1,
            service_ns: 100,
            n_read: 1,
            n_write: 2,
            seq_coalesce: 1,
        }
    }
}

impl IndexParams {
    pub fn accesses(&self, op: IoOp) -> u32 {
        match op {
            IoOp::Read => self.n_read,
            IoOp::Write => self.n_write,
        }
    }

    /// Mean index accesses per 4 KiB IO of a class.
    pub fn mean_accesses(&self, c: IoClass) -> f64 {
        let n = self.accesses(c.op()) as f64;
        if c.is_sequential() {
            n / self.seq_coalesce as f64
        } else {
            n
        }
    }

    pub fn validate(&self) -> Result<(), SsdError> {
        for (name, v) in [
            ("engines", self.engines),
            ("n_read", self.n_read),
            ("n_write", self.n_write),
            ("seq_coalesce", self.seq_coalesce),
        ] {
            if v == 0 {
                return Err(SsdError::Zero(name));
            }
        }
        if self.service_ns == 0 {
            return Err(SsdError::Zero("service_ns"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FtlCalibration {
    pub index: IndexParams,
    pub media_units: u32,
    pub media_service_ns: PerClass<u64>,
}

/// Size the media stage so the onboard-DRAM scheme reaches the datasheet
/// throughput of every class at QD64.
///
/// Media time per IO targets the datasheet random-read latency minus index
/// time, but no more than half the QD64 per-IO budget so a closed loop of 64
/// can still saturate the units.
pub fn calibrate(spec: &SsdSpec, params: &IndexParams) -> Result<FtlCalibration, SsdError> {
    spec.validate()?;
    params.validate()?;
    let s = params.service_ns;
    for (class, lat) in [
        (IoClass::RandRead, spec.rand_read_lat_ns),
        (IoClass::RandWrite, spec.rand_write_lat_ns),
    ] {
        let index_ns = params.accesses(class.op()) as u64 * s;
        if lat <= index_ns {
            return Err(SsdError::Infeasible {
                class,
                lat_ns: lat,
                index_ns,
            });
        }
    }
    let rr_cap = spec.cap_iops(IoClass::RandRead);
    let by_latency = (spec.rand_read_lat_ns - params.n_read as u64 * s) as f64;
    let by_qd = 0.5 * CALIBRATION_QD as f64 / rr_cap * 1e9;
    let target_ns = by_latency.min(by_qd);
    // the epsilon keeps an exact product such as 32.000000001 from rounding up
    let media_units = libm_ceil(rr_cap * target_ns / 1e9 - 1e-6).max(1.0) as u32;
    let media_service_ns =
        PerClass::from_fn(|c| libm_round(media_units as f64 / spec.cap_iops(c) * 1e9) as u64);

    let mut index = *params;
    let demand = IoClass::ALL
        .iter()
        .map(|&c| spec.cap_iops(c) * params.mean_accesses(c) * s as f64 / 1e9)
        .fold(0.0, f64::max);
    index.engines = index.engines.max(libm_ceil(demand - 1e-9) as u32);
    Ok(FtlCalibration {
        index,
        media_units,
        media_service_ns,
    })
}

// core has no float rounding without std
fn libm_ceil(x: f64) -> f64 {
    let t = x as i64 as f64;
    if t < x {
        t + 1.0
    } else {
        t
    }
}

fn libm_round(x: f64) -> f64 {
    libm_ceil(x - 0.5)
}

/// Outcome of one CMT probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lookup {
    Hit,
    Miss { evicted_dirty: bool },
}

/// LRU cache of translation pages.
#[derive(Debug, Clone)]
pub struct Cmt {
    slots: usize,
    clock: u64,
    pages: BTreeMap<u64, (u64, bool)>,
    by_age: BTreeMap<u64, u64>,
}

impl Cmt {
    pub fn new(slots: usize) -> Self {
        Self {
            slots: slots.max(1),
            clock: 0,
            pages: BTreeMap::new(),
            by_age: BTreeMap::new(),
        }
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn resident(&self) -> usize {
        self.pages.len()
    }

    pub fn contains(&self, tp: u64) -> bool {
        self.pages.contains_key(&tp)
    }

    /// Touch translation page `tp`, loading it on a miss. `dirty` marks the
    /// cached copy as modified.
    pub fn access(&mut self, tp: u64, dirty: bool) -> Lookup {
        self.clock += 1;
        if let Some((age, d)) = self.pages.get_mut(&tp) {
            self.by_age.remove(age);
            *age = self.clock;
            *d |= dirty;
            self.by_age.insert(self.clock, tp);
            return Lookup::Hit;
        }
        let mut evicted_dirty = false;
        if self.pages.len() == self.slots {
            let (_, victim) = self
                .by_age
                .pop_first()
                .expect("full cache has an oldest page");
            evicted_dirty = self.pages.remove(&victim).is_some_and(|(_, d)| d);
        }
        self.pages.insert(tp, (self.clock, dirty));
        self.by_age.insert(self.clock, tp);
        Lookup::Miss { evicted_dirty }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct IndexCounters {
    pub lookups: u64,
    pub cmt_misses: u64,
    pub writebacks: u64,
    pub onboard_hits: u64,
    /// Lookups skipped by sequential coalescing.
    pub coalesced: u64,
    pub remote_accesses: u64,
}

impl IndexCounters {
    pub fn miss_ratio(&self) -> f64 {
        if self.lookups == 0 {
            0.0
        } else {
            self.cmt_misses as f64 / self.lookups as f64
        }
    }
}

/// Busy time one IO puts on each stage beyond the media base time.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IndexCost {
    pub index_ns: u64,
    pub media_extra_ns: u64,
}

/// Per-IO index-stage occupancy for a scheme.
#[derive(Debug, Clone)]
pub struct IndexModel {
    scheme: FtlScheme,
    params: IndexParams,
    remote_ns: u64,
    flash_read_ns: u64,
    cmt: Option<Cmt>,
    rng: ChaCha8Rng,
    counters: IndexCounters,
}

impl IndexModel {
    /// `remote_ns` is the measured cost of one L2P access over the LMB route;
    /// unused by the other schemes.
    pub fn new(
        scheme: FtlScheme,
        params: IndexParams,
        remote_ns: u64,
        flash_read_ns: u64,
        rng: ChaCha8Rng,
    ) -> Self {
        let cmt = match &scheme {
            FtlScheme::Dftl(d) if d.hit_model == HitModel::Lru => {
                let slots = d
                    .cmt_capacity_entries
                    .div_ceil(d.entries_per_translation_page);
                Some(Cmt::new(slots as usize))
            }
            _ => None,
        };
        Self {
            scheme,
            params,
            remote_ns,
            flash_read_ns,
            cmt,
            rng,
            counters: IndexCounters::default(),
        }
    }

    pub fn counters(&self) -> IndexCounters {
        self.counters
    }

    /// Occupancy for an IO covering pages `lpn..lpn + pages`.
    pub fn index_service(&mut self, class: IoClass, lpn: u64, pages: u64) -> IndexCost {
        let mut cost = IndexCost::default();
        let k = self.params.seq_coalesce as u64;
        for p in lpn..lpn + pages {
            if class.is_sequential() && p % k != 0 {
                self.counters.coalesced += 1;
                continue;
            }
            let c = self.page_cost(class.op(), p);
            cost.index_ns += c.index_ns;
            cost.media_extra_ns += c.media_extra_ns;
        }
        cost
    }

    fn page_cost(&mut self, op: IoOp, lpn: u64) -> IndexCost {
        let n = self.params.accesses(op) as u64;
        let s = self.params.service_ns;
        self.counters.lookups += 1;
        match &self.scheme {
            FtlScheme::Ideal => IndexCost {
                index_ns: n * s,
                media_extra_ns: 0,
            },
            FtlScheme::Lmb(l) => {
                let p = l.onboard_hit_ratio;
                let mut ns = 0;
                for _ in 0..n {
                    let onboard = if p <= 0.0 {
                        false
                    } else if p >= 1.0 {
                        true
                    } else {
                        self.rng.random_bool(p)
                    };
                    if onboard {
                        self.counters.onboard_hits += 1;
                        ns += s;
                    } else {
                        self.counters.remote_accesses += 1;
                        ns += s + self.remote_ns;
                    }
                }
                IndexCost {
                    index_ns: ns,
                    media_extra_ns: 0,
                }
            }
            FtlScheme::Dftl(d) => {
                let (hit, evicted_dirty) = match d.hit_model {
                    HitModel::FixedRatio(p) => {
                        (p >= 1.0 || (p > 0.0 && self.rng.random_bool(p)), false)
                    }
                    HitModel::Lru => {
                        let tp = lpn / d.entries_per_translation_page;
                        let cmt = self.cmt.as_mut().expect("LRU model owns a CMT");
                        match cmt.access(tp, op == IoOp::Write) {
                            Lookup::Hit => (true, false),
                            Lookup::Miss { evicted_dirty } => (false, evicted_dirty),
                        }
                    }
                };
                let mut cost = IndexCost {
                    index_ns: n * s,
                    media_extra_ns: 0,
                };
                if !hit {
                    self.counters.cmt_misses += 1;
                    // every index access of a missing page goes to flash
                    let flash = n * self.flash_read_ns;
                    if d.miss_on_media {
                        cost.media_extra_ns += flash;
                    } else {
                        cost.index_ns += flash;
                    }
                }
                if evicted_dirty && d.dirty_writeback {
                    self.counters.writebacks += 1;
                    cost.index_ns += d.writeback_ns;
                }
                cost
            }
        }
    }
}
