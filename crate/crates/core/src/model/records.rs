//! Per-process log records and their type-level invariants.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::address::AddressBlob;

/// Nanoseconds relative to the trace epoch.
pub type Nanos = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IfaceId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EpId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UcpEpId(pub u64);

impl fmt::Display for IfaceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#x}", self.0)
    }
}

impl fmt::Display for EpId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#x}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transport {
    RcMlx5,
    DcMlx5,
    Sysv,
    CudaIpc,
    CudaCopy,
    GdrCopy,
    #[serde(rename = "self")]
    SelfLoop,
    Tcp,
}

impl Transport {
    pub const ALL: [Transport; 8] = [
        Transport::RcMlx5,
        Transport::DcMlx5,
        Transport::Sysv,
        Transport::CudaIpc,
        Transport::CudaCopy,
        Transport::GdrCopy,
        Transport::SelfLoop,
        Transport::Tcp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Transport::RcMlx5 => "rc_mlx5",
            Transport::DcMlx5 => "dc_mlx5",
            Transport::Sysv => "sysv",
            Transport::CudaIpc => "cuda_ipc",
            Transport::CudaCopy => "cuda_copy",
            Transport::GdrCopy => "gdr_copy",
            Transport::SelfLoop => "self",
            Transport::Tcp => "tcp",
        }
    }

    /// InfiniBand transports always run over a named NIC.
    pub fn requires_nic(self) -> bool {
        matches!(self, Transport::RcMlx5 | Transport::DcMlx5)
    }

    /// Memory domain name reported for interfaces of this transport.
    pub fn memory_domain(self, net_device: Option<&str>) -> String {
        match (self, net_device) {
            (Transport::RcMlx5 | Transport::DcMlx5, Some(nic)) => nic.to_string(),
            (Transport::Tcp, _) => "tcp".to_string(),
            (Transport::CudaCopy, _) => "cuda_cpy".to_string(),
            (Transport::Sysv, _) => "sysv".to_string(),
            (Transport::CudaIpc, _) => "cuda_ipc".to_string(),
            (Transport::GdrCopy, _) => "gdr_copy".to_string(),
            (Transport::SelfLoop, _) => "self".to_string(),
            (Transport::RcMlx5 | Transport::DcMlx5, None) => "ib".to_string(),
        }
    }
}

impl fmt::Display for Transport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Transport {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Transport::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown transport '{s}'"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UctFamily {
    Am,
    Put,
    Get,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UctMode {
    Short,
    Bcopy,
    Zcopy,
}

/// A transport-level send primitive, e.g. `get_zcopy`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct UctFn {
    pub family: UctFamily,
    pub mode: UctMode,
}

impl UctFn {
    pub const fn new(family: UctFamily, mode: UctMode) -> Self {
        Self { family, mode }
    }

    pub fn all() -> impl Iterator<Item = UctFn> {
        [UctFamily::Am, UctFamily::Put, UctFamily::Get].into_iter().flat_map(|family| {
            [UctMode::Short, UctMode::Bcopy, UctMode::Zcopy]
                .into_iter()
                .map(move |mode| UctFn { family, mode })
        })
    }

    pub fn name(self) -> &'static str {
        use UctFamily::*;
        use UctMode::*;
        match (self.family, self.mode) {
            (Am, Short) => "am_short",
            (Am, Bcopy) => "am_bcopy",
            (Am, Zcopy) => "am_zcopy",
            (Put, Short) => "put_short",
            (Put, Bcopy) => "put_bcopy",
            (Put, Zcopy) => "put_zcopy",
            (Get, Short) => "get_short",
            (Get, Bcopy) => "get_bcopy",
            (Get, Zcopy) => "get_zcopy",
        }
    }
}

impl fmt::Display for UctFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for UctFn {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        UctFn::all()
            .find(|f| f.name() == s)
            .ok_or_else(|| format!("unknown uct function '{s}'"))
    }
}

impl Serialize for UctFn {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for UctFn {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RemoteKind {
    Ep,
    Iface,
    Device,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UcpDir {
    Send,
    Recv,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessMeta {
    pub proc_uid: String,
    pub rank: u32,
    pub node: String,
    pub pid: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterfaceRecord {
    pub iface_id: IfaceId,
    pub transport: Transport,
    pub memory_domain: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub net_device: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iface_addr: Option<AddressBlob>,
    pub t_create: Nanos,
}

impl InterfaceRecord {
    pub fn validate(&self) -> Result<(), String> {
        if self.transport.requires_nic() && self.net_device.is_none() {
            return Err(format!("{} interface {} has no net_device", self.transport, self.iface_id));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointRecord {
    pub ep_id: EpId,
    pub iface_id: IfaceId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ep_addr: Option<AddressBlob>,
    pub t_create: Nanos,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConnectionRecord {
    pub ep_id: EpId,
    pub remote_addr: AddressBlob,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub remote_kind_hint: Option<RemoteKind>,
    pub t_connect: Nanos,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UctOp {
    pub seq: u64,
    pub family: UctFamily,
    pub mode: UctMode,
    pub ep_id: EpId,
    pub length: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub local_buf: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub remote_buf: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub am_id: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completion_slot: Option<u32>,
    pub t_start: Nanos,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_complete: Option<Nanos>,
    pub callstack: Vec<String>,
}

impl UctOp {
    pub fn uct_fn(&self) -> UctFn {
        UctFn::new(self.family, self.mode)
    }

    /// Time the operation is considered finished; short and bcopy ops
    /// complete on return and carry no completion time.
    pub fn t_end(&self) -> Nanos {
        self.t_complete.unwrap_or(self.t_start)
    }

    /// Buffer holding the data at the source side of the transfer. For
    /// get operations the data source is the remote buffer.
    pub fn source_buf(&self) -> Option<u64> {
        match self.family {
            UctFamily::Get => self.remote_buf,
            _ => self.local_buf,
        }
    }

    pub fn target_buf(&self) -> Option<u64> {
        match self.family {
            UctFamily::Get => self.local_buf,
            _ => self.remote_buf,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let is_am = self.family == UctFamily::Am;
        if is_am != self.am_id.is_some() {
            return Err(format!("uct seq {}: am_id must be present iff family is am", self.seq));
        }
        let is_zcopy = self.mode == UctMode::Zcopy;
        if is_zcopy != self.completion_slot.is_some() {
            return Err(format!(
                "uct seq {}: completion_slot must be present iff mode is zcopy",
                self.seq
            ));
        }
        let needs_buffers = !is_am && self.mode != UctMode::Bcopy;
        if needs_buffers && (self.local_buf.is_none() || self.remote_buf.is_none()) {
            return Err(format!(
                "uct seq {}: {} requires local_buf and remote_buf",
                self.seq,
                self.uct_fn()
            ));
        }
        if let Some(tc) = self.t_complete {
            if tc < self.t_start {
                return Err(format!("uct seq {}: t_complete precedes t_start", self.seq));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UcpOp {
    pub seq: u64,
    pub dir: UcpDir,
    pub tag: u64,
    pub buffer: u64,
    pub length: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ucp_ep_id: Option<UcpEpId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub managed_uct_eps: Option<Vec<EpId>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peer_proc_id: Option<String>,
    pub t_start: Nanos,
    pub t_end: Nanos,
    pub callstack: Vec<String>,
}

impl UcpOp {
    pub fn validate(&self) -> Result<(), String> {
        if self.t_end < self.t_start {
            return Err(format!("ucp seq {}: t_end precedes t_start", self.seq));
        }
        match self.dir {
            UcpDir::Send if self.ucp_ep_id.is_none() => {
                Err(format!("ucp seq {}: send without ucp_ep_id", self.seq))
            }
            UcpDir::Recv if self.ucp_ep_id.is_some() || self.managed_uct_eps.is_some() => Err(
                format!("ucp seq {}: recv must not carry ucp_ep_id or managed_uct_eps", self.seq),
            ),
            _ => Ok(()),
        }
    }

    /// True when `[addr, addr + len)` lies inside this operation's buffer.
    pub fn buffer_contains(&self, addr: u64, len: u64) -> bool {
        let end = self.buffer.saturating_add(self.length.max(1));
        addr >= self.buffer && addr < end && addr.saturating_add(len) <= end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllocKind {
    Alloc,
    Free,
}

/// Device memory allocation or free observed in one process.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AllocEvent {
    Alloc { device_index: u32, base: u64, length: u64, t: Nanos },
    Free { base: u64, t: Nanos },
}

impl AllocEvent {
    pub fn kind(&self) -> AllocKind {
        match self {
            AllocEvent::Alloc { .. } => AllocKind::Alloc,
            AllocEvent::Free { .. } => AllocKind::Free,
        }
    }

    pub fn base(&self) -> u64 {
        match self {
            AllocEvent::Alloc { base, .. } | AllocEvent::Free { base, .. } => *base,
        }
    }

    pub fn t(&self) -> Nanos {
        match self {
            AllocEvent::Alloc { t, .. } | AllocEvent::Free { t, .. } => *t,
        }
    }
}

/// One line of a communication log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CommRecord {
    Meta(ProcessMeta),
    Iface(InterfaceRecord),
    Ep(EndpointRecord),
    Conn(ConnectionRecord),
    Uct(UctOp),
    Ucp(UcpOp),
}

impl CommRecord {
    pub fn kind_name(&self) -> &'static str {
        match self {
            CommRecord::Meta(_) => "meta",
            CommRecord::Iface(_) => "iface",
            CommRecord::Ep(_) => "ep",
            CommRecord::Conn(_) => "conn",
            CommRecord::Uct(_) => "uct",
            CommRecord::Ucp(_) => "ucp",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zcopy_get() -> UctOp {
        UctOp {
            seq: 1,
            family: UctFamily::Get,
            mode: UctMode::Zcopy,
            ep_id: EpId(7),
            length: 4096,
            local_buf: Some(0x1000),
            remote_buf: Some(0x2000),
            am_id: None,
            completion_slot: Some(1),
            t_start: 10,
            t_complete: Some(20),
            callstack: vec![],
        }
    }

    #[test]
    fn uct_fn_names_round_trip() {
        for f in UctFn::all() {
            assert_eq!(f.name().parse::<UctFn>().unwrap(), f);
        }
        assert_eq!(UctFn::all().count(), 9);
    }

    #[test]
    fn transport_names_round_trip() {
        for t in Transport::ALL {
            assert_eq!(t.as_str().parse::<Transport>().unwrap(), t);
            let json = serde_json::to_string(&t).unwrap();
            assert_eq!(json, format!("\"{}\"", t.as_str()));
        }
    }

    #[test]
    fn get_swaps_source_and_target() {
        let op = zcopy_get();
        assert_eq!(op.source_buf(), Some(0x2000));
        assert_eq!(op.target_buf(), Some(0x1000));
    }

    #[test]
    fn uct_invariants() {
        assert!(zcopy_get().validate().is_ok());

        let mut op = zcopy_get();
        op.completion_slot = None;
        assert!(op.validate().is_err());

        let mut op = zcopy_get();
        op.remote_buf = None;
        assert!(op.validate().is_err());

        let mut op = zcopy_get();
        op.t_complete = Some(5);
        assert!(op.validate().is_err());

        let mut op = zcopy_get();
        op.family = UctFamily::Am;
        op.mode = UctMode::Bcopy;
        op.completion_slot = None;
        op.local_buf = None;
        op.remote_buf = None;
        assert!(op.validate().is_err(), "am without am_id");
        op.am_id = Some(3);
        assert!(op.validate().is_ok());
    }

    #[test]
    fn rc_interface_needs_nic() {
        let iface = InterfaceRecord {
            iface_id: IfaceId(1),
            transport: Transport::RcMlx5,
            memory_domain: "mlx5_0".into(),
            net_device: None,
            iface_addr: None,
            t_create: 0,
        };
        assert!(iface.validate().is_err());
    }

    #[test]
    fn buffer_containment() {
        let op = UcpOp {
            seq: 0,
            dir: UcpDir::Recv,
            tag: 0,
            buffer: 0x1000,
            length: 0x100,
            ucp_ep_id: None,
            managed_uct_eps: None,
            peer_proc_id: None,
            t_start: 0,
            t_end: 0,
            callstack: vec![],
        };
        assert!(op.buffer_contains(0x1000, 0x100));
        assert!(op.buffer_contains(0x1080, 0x10));
        assert!(!op.buffer_contains(0x1080, 0x100));
        assert!(!op.buffer_contains(0xfff, 1));
        assert!(!op.buffer_contains(0x1100, 0));
    }
}
