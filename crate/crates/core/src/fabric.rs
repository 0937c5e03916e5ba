//! Single-switch CXL fabric: hosts and CXL devices on PBR edge ports, PCIe
//! devices behind hosts, and one GFAM expander.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// Port-based-routing identifier of an edge-port attachment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PbrId(pub u16);

impl fmt::Display for PbrId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "pbr{}", self.0)
    }
}

/// Hosts are identified by the PBR id of their edge port.
pub type HostId = PbrId;

/// Identity of a PCIe device: the host it sits behind plus a host-local index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PcieDevId {
    pub host: HostId,
    pub index: u16,
}

impl fmt::Display for PcieDevId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "pcie({},{})", self.host.0, self.index)
    }
}

/// A device that can be given LMB memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum DeviceId {
    Pcie(PcieDevId),
    Cxl(PbrId),
}

impl fmt::Display for DeviceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DeviceId::Pcie(d) => d.fmt(f),
            DeviceId::Cxl(p) => write!(f, "cxl({})", p.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum PcieGen {
    Gen4,
    Gen5,
}

impl PcieGen {
    pub fn from_number(n: u8) -> Option<Self> {
        match n {
            4 => Some(PcieGen::Gen4),
            5 => Some(PcieGen::Gen5),
            _ => None,
        }
    }

    pub fn number(self) -> u8 {
        match self {
            PcieGen::Gen4 => 4,
            PcieGen::Gen5 => 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Host { pcie_gen: PcieGen },
    CxlDevice,
    PcieDevice { behind: HostId, pcie_gen: PcieGen },
    Switch,
    Expander,
}

/// Where an attached node can be addressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Attachment {
    Port(PbrId),
    Local(PcieDevId),
}

impl Attachment {
    pub fn pbr(self) -> Option<PbrId> {
        match self {
            Attachment::Port(p) => Some(p),
            Attachment::Local(_) => None,
        }
    }

    pub fn pcie(self) -> Option<PcieDevId> {
        match self {
            Attachment::Local(d) => Some(d),
            Attachment::Port(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum RouteClass {
    /// Device-local DRAM; never leaves the device.
    Onboard,
    /// CXL device to expander through the switch, bypassing every host.
    CxlP2P,
    /// PCIe device whose TLPs the host converts to CXL.mem.
    PcieViaHost,
    /// Host CPU load/store to the expander.
    HostDirect,
}

/// Per-access latencies, all in nanoseconds.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct LatencyModel {
    pub cxl_port_ns: u64,
    pub switch_hdm_ns: u64,
    /// PCIe 5.0 device to host memory.
    pub pcie_host_ns: u64,
    pub lmb_cxl_extra_ns: u64,
    pub lmb_pcie_extra_gen4_ns: u64,
    pub lmb_pcie_extra_gen5_ns: u64,
    pub flash_read_ns: u64,
    /// Extra latency for accesses landing in a PM partition.
    pub pm_extra_ns: u64,
    /// Derive every route from hop sums instead of the LMB route totals.
    pub compose_hops: bool,
    pub onboard_override_ns: Option<u64>,
    pub cxl_p2p_override_ns: Option<u64>,
    pub pcie_via_host_override_ns: Option<u64>,
    pub host_direct_override_ns: Option<u64>,
}

impl Default for LatencyModel {
    fn default() -> Self {
        Self {
            cxl_port_ns: 25,
            switch_hdm_ns: 70,
            pcie_host_ns: 780,
            lmb_cxl_extra_ns: 190,
            lmb_pcie_extra_gen4_ns: 880,
            lmb_pcie_extra_gen5_ns: 1190,
            flash_read_ns: 25_000,
            pm_extra_ns: 0,
            compose_hops: false,
            onboard_override_ns: None,
            cxl_p2p_override_ns: None,
            pcie_via_host_override_ns: None,
            host_direct_override_ns: None,
        }
    }
}

/// Names accepted by [`LatencyModel::set_field`].
pub const LATENCY_FIELDS: &[&str] = &[
    "cxl_port_ns",
    "switch_hdm_ns",
    "pcie_host_ns",
    "lmb_cxl_extra_ns",
    "lmb_pcie_extra_gen4_ns",
    "lmb_pcie_extra_gen5_ns",
    "flash_read_ns",
    "pm_extra_ns",
    "compose_hops",
    "onboard_override_ns",
    "cxl_p2p_override_ns",
    "pcie_via_host_override_ns",
    "host_direct_override_ns",
];

impl LatencyModel {
    /// Set a field by name. Boolean fields take 0/1.
    pub fn set_field(&mut self, name: &str, value: u64) -> Result<(), FabricError> {
        let slot = match name {
            "cxl_port_ns" => &mut self.cxl_port_ns,
            "switch_hdm_ns" => &mut self.switch_hdm_ns,
            "pcie_host_ns" => &mut self.pcie_host_ns,
            "lmb_cxl_extra_ns" => &mut self.lmb_cxl_extra_ns,
            "lmb_pcie_extra_gen4_ns" => &mut self.lmb_pcie_extra_gen4_ns,
            "lmb_pcie_extra_gen5_ns" => &mut self.lmb_pcie_extra_gen5_ns,
            "flash_read_ns" => &mut self.flash_read_ns,
            "pm_extra_ns" => &mut self.pm_extra_ns,
            "compose_hops" => {
                self.compose_hops = value != 0;
                return Ok(());
            }
            _ => {
                let slot = match name {
                    "onboard_override_ns" => &mut self.onboard_override_ns,
                    "cxl_p2p_override_ns" => &mut self.cxl_p2p_override_ns,
                    "pcie_via_host_override_ns" => &mut self.pcie_via_host_override_ns,
                    "host_direct_override_ns" => &mut self.host_direct_override_ns,
                    _ => return Err(FabricError::UnknownLatencyField(name.into())),
                };
                *slot = Some(value);
                return Ok(());
            }
        };
        *slot = value;
        Ok(())
    }

    fn override_for(&self, route: RouteClass) -> Option<u64> {
        match route {
            RouteClass::Onboard => self.onboard_override_ns,
            RouteClass::CxlP2P => self.cxl_p2p_override_ns,
            RouteClass::PcieViaHost => self.pcie_via_host_override_ns,
            RouteClass::HostDirect => self.host_direct_override_ns,
        }
    }

    /// Latency as a sum of per-hop costs. PCIe-via-host is only known for
    /// Gen5; there is no Gen4 hop figure to compose from.
    pub fn hop_sum(&self, route: RouteClass, gen: PcieGen) -> Option<u64> {
        let cxl_leg = 2 * self.cxl_port_ns + self.switch_hdm_ns;
        match route {
            RouteClass::Onboard => Some(0),
            RouteClass::CxlP2P | RouteClass::HostDirect => Some(cxl_leg),
            RouteClass::PcieViaHost => match gen {
                PcieGen::Gen5 => Some(self.pcie_host_ns + cxl_leg),
                PcieGen::Gen4 => None,
            },
        }
    }
}

/// Per-access latency an LMB index access pays over `route`.
pub fn access_latency(route: RouteClass, gen: PcieGen, model: &LatencyModel) -> u64 {
    if let Some(v) = model.override_for(route) {
        return v;
    }
    if model.compose_hops {
        if let Some(v) = model.hop_sum(route, gen) {
            return v;
        }
    }
    match route {
        RouteClass::Onboard => 0,
        RouteClass::CxlP2P => model.lmb_cxl_extra_ns,
        RouteClass::PcieViaHost => match gen {
            PcieGen::Gen4 => model.lmb_pcie_extra_gen4_ns,
            PcieGen::Gen5 => model.lmb_pcie_extra_gen5_ns,
        },
        RouteClass::HostDirect => 2 * model.cxl_port_ns + model.switch_hdm_ns,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FabricError {
    #[error("node {0:?} is already attached")]
    DuplicateNode(String),
    #[error("fabric already has an expander")]
    SecondExpander,
    #[error("the fabric switch is implicit and cannot be attached")]
    SwitchAttach,
    #[error("host {0} is not attached")]
    UnknownHost(HostId),
    #[error("fabric is sealed")]
    Sealed,
    #[error("fabric must be sealed first")]
    Unsealed,
    #[error("fabric has no expander")]
    NoExpander,
    #[error("node is not attached")]
    Unattached,
    #[error("PBR id space exhausted")]
    PbrExhausted,
    #[error("unknown latency field {0:?}")]
    UnknownLatencyField(String),
}

#[derive(Debug, Clone)]
struct Node {
    name: String,
    kind: NodeKind,
    at: Attachment,
}

/// Node identity accepted by [`Fabric::route`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Requester {
    Host(HostId),
    Cxl(PbrId),
    Pcie(PcieDevId),
}

impl From<DeviceId> for Requester {
    fn from(d: DeviceId) -> Self {
        match d {
            DeviceId::Pcie(p) => Requester::Pcie(p),
            DeviceId::Cxl(c) => Requester::Cxl(c),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Fabric {
    nodes: Vec<Node>,
    ports: BTreeMap<PbrId, usize>,
    pcie: BTreeMap<PcieDevId, usize>,
    next_pbr: u16,
    next_local: BTreeMap<HostId, u16>,
    expander: Option<PbrId>,
    sealed: bool,
}

impl Fabric {
    pub fn new() -> Self {
        Self {
            next_pbr: 1,
            ..Default::default()
        }
    }

    /// Attach a named node. CXL-visible nodes receive the next PBR id; PCIe
    /// devices get a host-local id.
    pub fn attach(&mut self, name: &str, kind: NodeKind) -> Result<Attachment, FabricError> {
        if self.sealed {
            return Err(FabricError::Sealed);
        }
        if self.nodes.iter().any(|n| n.name == name) {
            return Err(FabricError::DuplicateNode(name.into()));
        }
        let at = match kind {
            NodeKind::Switch => return Err(FabricError::SwitchAttach),
            NodeKind::PcieDevice { behind, .. } => {
                match self.ports.get(&behind).map(|&i| self.nodes[i].kind) {
                    Some(NodeKind::Host { .. }) => {}
                    _ => return Err(FabricError::UnknownHost(behind)),
                }
                let slot = self.next_local.entry(behind).or_insert(0);
                let id = PcieDevId {
                    host: behind,
                    index: *slot,
                };
                *slot += 1;
                self.pcie.insert(id, self.nodes.len());
                Attachment::Local(id)
            }
            NodeKind::Expander if self.expander.is_some() => {
                return Err(FabricError::SecondExpander)
            }
            NodeKind::Host { .. } | NodeKind::CxlDevice | NodeKind::Expander => {
                let id = PbrId(self.next_pbr);
                self.next_pbr = self
                    .next_pbr
                    .checked_add(1)
                    .ok_or(FabricError::PbrExhausted)?;
                self.ports.insert(id, self.nodes.len());
                if kind == NodeKind::Expander {
                    self.expander = Some(id);
                }
                Attachment::Port(id)
            }
        };
        self.nodes.push(Node {
            name: name.into(),
            kind,
            at,
        });
        Ok(at)
    }

    pub fn seal(&mut self) -> Result<(), FabricError> {
        if self.expander.is_none() {
            return Err(FabricError::NoExpander);
        }
        self.sealed = true;
        Ok(())
    }

    pub fn is_sealed(&self) -> bool {
        self.sealed
    }

    pub fn expander(&self) -> Option<PbrId> {
        self.expander
    }

    pub fn kind_of(&self, r: Requester) -> Option<NodeKind> {
        let idx = match r {
            Requester::Host(p) | Requester::Cxl(p) => self.ports.get(&p),
            Requester::Pcie(d) => self.pcie.get(&d),
        }?;
        Some(self.nodes[*idx].kind)
    }

    pub fn is_host(&self, h: HostId) -> bool {
        matches!(
            self.kind_of(Requester::Host(h)),
            Some(NodeKind::Host { .. })
        )
    }

    pub fn is_cxl_device(&self, p: PbrId) -> bool {
        matches!(self.kind_of(Requester::Cxl(p)), Some(NodeKind::CxlDevice))
    }

    pub fn pcie_gen(&self, d: PcieDevId) -> Option<PcieGen> {
        match self.kind_of(Requester::Pcie(d))? {
            NodeKind::PcieDevice { pcie_gen, .. } => Some(pcie_gen),
            _ => None,
        }
    }

    pub fn hosts(&self) -> impl Iterator<Item = HostId> + '_ {
        self.nodes.iter().filter_map(|n| match (n.kind, n.at) {
            (NodeKind::Host { .. }, Attachment::Port(p)) => Some(p),
            _ => None,
        })
    }

    pub fn name_of(&self, r: Requester) -> Option<&str> {
        let idx = match r {
            Requester::Host(p) | Requester::Cxl(p) => self.ports.get(&p),
            Requester::Pcie(d) => self.pcie.get(&d),
        }?;
        Some(&self.nodes[*idx].name)
    }

    /// Route class from `requester` to the expander.
    pub fn route(&self, requester: Requester) -> Result<RouteClass, FabricError> {
        if self.expander.is_none() {
            return Err(FabricError::NoExpander);
        }
        match (requester, self.kind_of(requester)) {
            (Requester::Cxl(_), Some(NodeKind::CxlDevice)) => Ok(RouteClass::CxlP2P),
            (Requester::Pcie(_), Some(NodeKind::PcieDevice { .. })) => Ok(RouteClass::PcieViaHost),
            (Requester::Host(_), Some(NodeKind::Host { .. })) => Ok(RouteClass::HostDirect),
            _ => Err(FabricError::Unattached),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fabric() -> (Fabric, HostId, PbrId, PcieDevId) {
        let mut f = Fabric::new();
        let h = f
            .attach(
                "host",
                NodeKind::Host {
                    pcie_gen: PcieGen::Gen4,
                },
            )
            .unwrap()
            .pbr()
            .unwrap();
        let c = f.attach("acc", NodeKind::CxlDevice).unwrap().pbr().unwrap();
        let s = f
            .attach(
                "ssd",
                NodeKind::PcieDevice {
                    behind: h,
                    pcie_gen: PcieGen::Gen4,
                },
            )
            .unwrap()
            .pcie()
            .unwrap();
        f.attach("gfd", NodeKind::Expander).unwrap();
        f.seal().unwrap();
        (f, h, c, s)
    }

    #[test]
    fn pbr_ids_are_sequential_and_pcie_is_local() {
        let (f, h, c, s) = fabric();
        assert_eq!(h, PbrId(1));
        assert_eq!(c, PbrId(2));
        assert_eq!(
            s,
            PcieDevId {
                host: PbrId(1),
                index: 0
            }
        );
        assert_eq!(f.expander(), Some(PbrId(3)));
    }

    #[test]
    fn attach_errors() {
        let mut f = Fabric::new();
        f.attach("gfd", NodeKind::Expander).unwrap();
        assert_eq!(
            f.attach("gfd2", NodeKind::Expander),
            Err(FabricError::SecondExpander)
        );
        assert_eq!(
            f.attach("gfd", NodeKind::CxlDevice),
            Err(FabricError::DuplicateNode("gfd".into()))
        );
        assert_eq!(
            f.attach(
                "ssd",
                NodeKind::PcieDevice {
                    behind: PbrId(9),
                    pcie_gen: PcieGen::Gen5
                }
            ),
            Err(FabricError::UnknownHost(PbrId(9)))
        );
        assert_eq!(
            f.attach(
                "ssd",
                NodeKind::PcieDevice {
                    behind: PbrId(1),
                    pcie_gen: PcieGen::Gen5
                }
            ),
            Err(FabricError::UnknownHost(PbrId(1)))
        );
        assert_eq!(
            f.attach("sw", NodeKind::Switch),
            Err(FabricError::SwitchAttach)
        );
        f.seal().unwrap();
        assert_eq!(
            f.attach("late", NodeKind::CxlDevice),
            Err(FabricError::Sealed)
        );
    }

    #[test]
    fn seal_requires_expander() {
        assert_eq!(Fabric::new().seal(), Err(FabricError::NoExpander));
    }

    #[test]
    fn routes_by_kind() {
        let (f, h, c, s) = fabric();
        assert_eq!(f.route(Requester::Cxl(c)), Ok(RouteClass::CxlP2P));
        assert_eq!(f.route(Requester::Pcie(s)), Ok(RouteClass::PcieViaHost));
        assert_eq!(f.route(Requester::Host(h)), Ok(RouteClass::HostDirect));
        assert_eq!(
            f.route(Requester::Cxl(PbrId(40))),
            Err(FabricError::Unattached)
        );
        // a host id used as a CXL device is not a CXL device
        assert_eq!(f.route(Requester::Cxl(h)), Err(FabricError::Unattached));
    }

    #[test]
    fn default_access_latencies() {
        let m = LatencyModel::default();
        for gen in [PcieGen::Gen4, PcieGen::Gen5] {
            assert_eq!(access_latency(RouteClass::CxlP2P, gen, &m), 190);
            assert_eq!(access_latency(RouteClass::Onboard, gen, &m), 0);
            assert_eq!(access_latency(RouteClass::HostDirect, gen, &m), 120);
        }
        assert_eq!(
            access_latency(RouteClass::PcieViaHost, PcieGen::Gen4, &m),
            880
        );
        assert_eq!(
            access_latency(RouteClass::PcieViaHost, PcieGen::Gen5, &m),
            1190
        );
    }

    #[test]
    fn scheme_latency_ordering_under_defaults() {
        let m = LatencyModel::default();
        for gen in [PcieGen::Gen4, PcieGen::Gen5] {
            let on = access_latency(RouteClass::Onboard, gen, &m);
            let cxl = access_latency(RouteClass::CxlP2P, gen, &m);
            let pcie = access_latency(RouteClass::PcieViaHost, gen, &m);
            assert!(on < cxl && cxl < pcie);
        }
    }

    #[test]
    fn host_direct_is_linear_in_hops() {
        let mut m = LatencyModel::default();
        m.set_field("cxl_port_ns", 30).unwrap();
        assert_eq!(
            access_latency(RouteClass::HostDirect, PcieGen::Gen5, &m),
            130
        );
        m.set_field("switch_hdm_ns", 100).unwrap();
        assert_eq!(
            access_latency(RouteClass::HostDirect, PcieGen::Gen5, &m),
            160
        );
    }

    #[test]
    fn overrides_supersede_and_hops_compose() {
        let mut m = LatencyModel::default();
        m.set_field("cxl_p2p_override_ns", 500).unwrap();
        assert_eq!(access_latency(RouteClass::CxlP2P, PcieGen::Gen4, &m), 500);
        let mut m = LatencyModel::default();
        m.set_field("compose_hops", 1).unwrap();
        assert_eq!(access_latency(RouteClass::CxlP2P, PcieGen::Gen4, &m), 120);
        assert_eq!(
            access_latency(RouteClass::PcieViaHost, PcieGen::Gen5, &m),
            900
        );
        // no Gen4 host figure to compose; the route total stands
        assert_eq!(
            access_latency(RouteClass::PcieViaHost, PcieGen::Gen4, &m),
            880
        );
        assert!(m.set_field("nope", 1).is_err());
        for f in LATENCY_FIELDS {
            LatencyModel::default().set_field(f, 1).unwrap();
        }
    }
}
