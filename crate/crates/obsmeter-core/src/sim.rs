//! Deterministic in-process network path: sender, router (with ingress and
//! egress taps) and receiver, plus a shared-medium scheduler for runs where
//! measurement traffic contends with the traffic under test.
//!
//! All time is virtual (integer microseconds) and every random draw comes
//! from a seeded generator, so a (config, seed, schedule) triple always
//! reproduces the same trace byte for byte. The trace is the ground truth
//! the harness judges instrumented reports against.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::time::Micros;

/// Random component added to the last-hop delay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DelayJitterModel {
    None,
    /// Uniform in `[-d, +d]`.
    Uniform(Micros),
    /// Gaussian with standard deviation sigma.
    Gaussian(Micros),
}

/// Configuration of the two-hop path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathConfig {
    pub link_capacity_bps: u64,
    pub base_delay: Micros,
    pub jitter: DelayJitterModel,
    pub loss_probability: f64,
    pub mtu: u32,
    pub seed: u64,
}

impl Default for PathConfig {
    fn default() -> Self {
        PathConfig {
            link_capacity_bps: 100_000_000,
            base_delay: Micros::ZERO,
            jitter: DelayJitterModel::None,
            loss_probability: 0.0,
            mtu: 1500,
            seed: 0,
        }
    }
}

/// Ground-truth observation of one packet at every tap point.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRecord {
    pub packet_id: u64,
    pub size: u32,
    pub t_snd: Micros,
    pub t_rtr_in: Micros,
    pub t_rtr_eg: Micros,
    /// Absent when the packet was lost on the last hop.
    pub t_rcv: Option<Micros>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PacketFate {
    Delivered(TraceRecord),
    Lost(TraceRecord),
}

impl PacketFate {
    pub fn record(&self) -> &TraceRecord {
        match self {
            PacketFate::Delivered(r) | PacketFate::Lost(r) => r,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SimError {
    OversizePacket { size: u32, mtu: u32 },
    UnknownFlow(usize),
    NonMonotoneSend,
}

impl fmt::Display for SimError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SimError::OversizePacket { size, mtu } => {
                write!(f, "packet of {size} B exceeds mtu {mtu} B")
            }
            SimError::UnknownFlow(id) => write!(f, "flow {id} is not registered"),
            SimError::NonMonotoneSend => write!(f, "send times must be non-decreasing"),
        }
    }
}

impl core::error::Error for SimError {}

fn serialization_micros(size: u32, capacity_bps: u64) -> i64 {
    // round to nearest microsecond
    let bits = size as u128 * 8 * 1_000_000;
    ((bits + capacity_bps as u128 / 2) / capacity_bps as u128) as i64
}

fn uniform_f64(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// The two-hop sender-router-receiver path.
pub struct PathSim {
    config: PathConfig,
    rng: ChaCha8Rng,
    egress_free: Micros,
    next_id: u64,
    last_send: Micros,
    records: Vec<TraceRecord>,
    lost: u64,
}

impl PathSim {
    pub fn new(config: PathConfig) -> PathSim {
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        PathSim {
            config,
            rng,
            egress_free: Micros(i64::MIN / 4),
            next_id: 0,
            last_send: Micros(i64::MIN / 4),
            records: Vec::new(),
            lost: 0,
        }
    }

    pub fn config(&self) -> &PathConfig {
        &self.config
    }

    /// Transmit one packet at virtual time `now`. Serialization delay
    /// `size * 8 / capacity` applies on each hop; the router egress link is
    /// the bottleneck queue; loss and delay noise hit the last hop. The
    /// loss and noise draws are consumed for every packet, delivered or
    /// not, so fates depend only on (seed, schedule position).
    pub fn send_packet(&mut self, size: u32, now: Micros) -> Result<PacketFate, SimError> {
        if size > self.config.mtu {
            return Err(SimError::OversizePacket {
                size,
                mtu: self.config.mtu,
            });
        }
        if now < self.last_send {
            return Err(SimError::NonMonotoneSend);
        }
        self.last_send = now;
        let ser = Micros(serialization_micros(size, self.config.link_capacity_bps));
        let t_rtr_in = now + ser;
        let t_rtr_eg = if t_rtr_in > self.egress_free { t_rtr_in } else { self.egress_free };
        self.egress_free = t_rtr_eg + ser;

        let lost = uniform_f64(&mut self.rng) < self.config.loss_probability;
        let noise = self.draw_noise();
        let mut extra = self.config.base_delay + noise;
        if extra.is_negative() {
            extra = Micros::ZERO;
        }
        let t_rcv = t_rtr_eg + ser + extra;

        let record = TraceRecord {
            packet_id: self.next_id,
            size,
            t_snd: now,
            t_rtr_in,
            t_rtr_eg,
            t_rcv: if lost { None } else { Some(t_rcv) },
        };
        self.next_id += 1;
        self.records.push(record.clone());
        if lost {
            self.lost += 1;
            Ok(PacketFate::Lost(record))
        } else {
            Ok(PacketFate::Delivered(record))
        }
    }

    fn draw_noise(&mut self) -> Micros {
        match self.config.jitter {
            DelayJitterModel::None => {
                // keep the draw schedule aligned across jitter models
                let _ = uniform_f64(&mut self.rng);
                let _ = uniform_f64(&mut self.rng);
                Micros::ZERO
            }
            DelayJitterModel::Uniform(d) => {
                let u = uniform_f64(&mut self.rng);
                let _ = uniform_f64(&mut self.rng);
                Micros(libm::round((2.0 * u - 1.0) * d.0 as f64) as i64)
            }
            DelayJitterModel::Gaussian(sigma) => {
                // Box-Muller
                let u1 = uniform_f64(&mut self.rng).max(1e-300);
                let u2 = uniform_f64(&mut self.rng);
                let z = libm::sqrt(-2.0 * libm::log(u1))
                    * libm::cos(2.0 * core::f64::consts::PI * u2);
                Micros(libm::round(z * sigma.0 as f64) as i64)
            }
        }
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn sent(&self) -> u64 {
        self.next_id
    }

    pub fn lost(&self) -> u64 {
        self.lost
    }

    pub fn into_records(self) -> Vec<TraceRecord> {
        self.records
    }
}

pub const TRACE_HEADER: &str = "packet_id\tsize\tt_snd\tt_rtr_in\tt_rtr_eg\tt_rcv";

/// Render trace records in the tap table format: header line, then one
/// TAB-separated row per packet, `-` for an absent receive time.
pub fn export_trace(records: &[TraceRecord]) -> String {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            r.packet_id,
            r.size,
            r.t_snd.to_wire(),
            r.t_rtr_in.to_wire(),
            r.t_rtr_eg.to_wire(),
            r.t_rcv.map(|t| t.to_wire()).unwrap_or_else(|| String::from("-")),
        ));
    }
    out
}

/// Parse the format produced by [`export_trace`].
pub fn parse_trace(text: &str) -> Result<Vec<TraceRecord>, String> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == TRACE_HEADER => {}
        other => return Err(format!("bad trace header: {other:?}")),
    }
    let mut out = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 6 {
            return Err(format!("expected 6 columns, got {}", cols.len()));
        }
        let parse_ts = |s: &str| Micros::parse_wire(s).ok_or_else(|| format!("bad time '{s}'"));
        out.push(TraceRecord {
            packet_id: cols[0].parse().map_err(|_| "bad packet id".to_string())?,
            size: cols[1].parse().map_err(|_| "bad size".to_string())?,
            t_snd: parse_ts(cols[2])?,
            t_rtr_in: parse_ts(cols[3])?,
            t_rtr_eg: parse_ts(cols[4])?,
            t_rcv: if cols[5] == "-" { None } else { Some(parse_ts(cols[5])?) },
        });
    }
    Ok(out)
}

/// Identifier of a flow registered on a shared medium.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlowId(usize);

#[derive(Debug, Clone)]
pub struct SharedMediumConfig {
    pub capacity_bps: u64,
    /// Deficit round-robin quantum; one MTU keeps byte shares fair.
    pub quantum_bytes: u32,
}

impl Default for SharedMediumConfig {
    fn default() -> Self {
        SharedMediumConfig {
            capacity_bps: 20_000_000,
            quantum_bytes: 1500,
        }
    }
}

struct FlowState {
    name: String,
    queue: VecDeque<(u64, u32, Micros)>, // (request id, bytes, ready time)
    deficit: i64,
    granted_bytes: u64,
    next_request: u64,
}

impl FlowState {
    fn ready_head(&self, at: Micros) -> Option<(u64, u32)> {
        self.queue
            .front()
            .filter(|(_, _, ready)| *ready <= at)
            .map(|(id, bytes, _)| (*id, *bytes))
    }
}

/// A capacity-conserving medium shared by competing flows, arbitrated by
/// deficit round-robin. Transmissions are strictly sequential so the summed
/// granted bandwidth can never exceed the configured capacity.
pub struct SharedMedium {
    config: SharedMediumConfig,
    flows: Vec<FlowState>,
    free_at: Micros,
    cursor: usize,
    /// Flow currently spending its deficit, if any.
    holder: Option<usize>,
}

impl SharedMedium {
    pub fn new(config: SharedMediumConfig) -> SharedMedium {
        SharedMedium {
            config,
            flows: Vec::new(),
            free_at: Micros::ZERO,
            cursor: 0,
            holder: None,
        }
    }

    pub fn register_flow(&mut self, name: &str) -> FlowId {
        self.flows.push(FlowState {
            name: String::from(name),
            queue: VecDeque::new(),
            deficit: 0,
            granted_bytes: 0,
            next_request: 0,
        });
        FlowId(self.flows.len() - 1)
    }

    pub fn flow_name(&self, id: FlowId) -> Option<&str> {
        self.flows.get(id.0).map(|f| f.name.as_str())
    }

    pub fn granted_bytes(&self, id: FlowId) -> u64 {
        self.flows.get(id.0).map(|f| f.granted_bytes).unwrap_or(0)
    }

    /// Queue a transmission without waiting for it (used by open-loop
    /// traffic such as measurement reports).
    pub fn offer(&mut self, flow: FlowId, bytes: u32, ready: Micros) -> Result<(), SimError> {
        let state = self.flows.get_mut(flow.0).ok_or(SimError::UnknownFlow(flow.0))?;
        let id = state.next_request;
        state.next_request += 1;
        state.queue.push_back((id, bytes, ready));
        Ok(())
    }

    /// Queue a transmission and run the arbiter until it completes,
    /// returning its completion time. Competing demand queued so far is
    /// served according to round-robin order on the way.
    pub fn grant(&mut self, flow: FlowId, bytes: u32, now: Micros) -> Result<Micros, SimError> {
        let state = self.flows.get_mut(flow.0).ok_or(SimError::UnknownFlow(flow.0))?;
        let target = state.next_request;
        state.next_request += 1;
        state.queue.push_back((target, bytes, now));
        loop {
            let (fid, rid, completion) = self.step().expect("target request still queued");
            if fid == flow.0 && rid == target {
                return Ok(completion);
            }
        }
    }

    /// Transmit the next packet per deficit round-robin; returns
    /// (flow index, request id, completion time). A flow keeps the floor
    /// while its deficit covers its head-of-line packet, so shares are fair
    /// in bytes rather than packets.
    fn step(&mut self) -> Option<(usize, u64, Micros)> {
        let pending: Vec<usize> = (0..self.flows.len())
            .filter(|i| !self.flows[*i].queue.is_empty())
            .collect();
        if pending.is_empty() {
            return None;
        }
        loop {
            // if nothing is ready at the current medium time, jump forward;
            // an idle medium makes accumulated deficits stale
            if pending.iter().all(|i| self.flows[*i].ready_head(self.free_at).is_none()) {
                let earliest = pending
                    .iter()
                    .copied()
                    .min_by_key(|i| self.flows[*i].queue.front().unwrap().2)
                    .unwrap();
                self.free_at = self.flows[earliest].queue.front().unwrap().2;
                for f in &mut self.flows {
                    f.deficit = 0;
                }
                self.holder = None;
            }
            if let Some(i) = self.holder {
                if let Some((id, bytes)) = self.flows[i].ready_head(self.free_at) {
                    if self.flows[i].deficit >= bytes as i64 {
                        return Some(self.transmit(i, id, bytes));
                    }
                }
                if self.flows[i].queue.is_empty() {
                    self.flows[i].deficit = 0;
                }
                self.holder = None;
            }
            // visit the next ready flow and top up its deficit
            let n = self.flows.len();
            for _ in 0..n {
                let i = self.cursor;
                self.cursor = (self.cursor + 1) % n;
                if self.flows[i].ready_head(self.free_at).is_some() {
                    self.flows[i].deficit += self.config.quantum_bytes as i64;
                    self.holder = Some(i);
                    break;
                }
            }
        }
    }

    fn transmit(&mut self, flow: usize, id: u64, bytes: u32) -> (usize, u64, Micros) {
        let entry = self.flows[flow].queue.pop_front().expect("head checked");
        debug_assert_eq!(entry.0, id);
        self.flows[flow].deficit -= bytes as i64;
        if self.flows[flow].queue.is_empty() {
            self.flows[flow].deficit = 0;
            self.holder = None;
        }
        let start = if entry.2 > self.free_at { entry.2 } else { self.free_at };
        let completion = start + Micros(serialization_micros(bytes, self.config.capacity_bps));
        self.free_at = completion;
        self.flows[flow].granted_bytes += bytes as u64;
        (flow, id, completion)
    }
}
