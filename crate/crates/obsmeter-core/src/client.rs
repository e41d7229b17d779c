//! The client-side stream machinery: enabled MPs become measurement streams,
//! filters become derived streams, and every generated frame goes through one
//! bounded transmit buffer with drop-newest overflow.
//!
//! This model is synchronous and deterministic: timestamps come from the
//! caller and the buffer drains when the caller asks. The std runtime wraps
//! it in a mutex with a background drain thread; the simulation harness
//! drives it directly from virtual time.
//!
//! Sequence numbers are per stream and are consumed even when the buffer is
//! full and the frame is dropped, so the server can detect losses from the
//! gap they leave.

use alloc::collections::VecDeque;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::filter::{FilterError, FilterSpec, OutputSample, Pipeline};
use crate::measure::{
    check_values, ClientIdentity, MeasureError, MetricType, MetricValue, MpIndex, MpRegistry,
};
use crate::time::Micros;
use crate::wire::{HeaderBlock, StreamFrame, StreamSchema, PROTOCOL_VERSION};

pub const DEFAULT_BUFFER_CAPACITY: usize = 4096;

/// What an injection did with the sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InjectOutcome {
    Accepted,
    /// The transmit buffer was full; the new sample was discarded and its
    /// sequence number consumed.
    Dropped,
}

/// Outcome plus how many frames this call pushed into the transmit buffer
/// (0 for no-op MPs and for filter pushes that did not close a window).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InjectReport {
    pub outcome: InjectOutcome,
    pub enqueued: u32,
}

/// Run-time selection: which MPs stream, and which filters derive streams.
#[derive(Debug, Clone, Default)]
pub struct ClientSetup {
    /// MP names that produce raw streams. Unlisted MPs inject into a no-op
    /// sink at near-zero cost.
    pub enabled: Vec<String>,
    /// Filter declarations; specs chaining onto an earlier output extend
    /// that pipeline, each chain tail becomes one derived stream.
    pub filters: Vec<FilterSpec>,
    pub buffer_capacity: usize,
}

impl ClientSetup {
    pub fn new() -> Self {
        ClientSetup {
            enabled: Vec::new(),
            filters: Vec::new(),
            buffer_capacity: DEFAULT_BUFFER_CAPACITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClientError {
    Measure(MeasureError),
    Filter(FilterError),
    ZeroCapacity,
}

impl From<MeasureError> for ClientError {
    fn from(e: MeasureError) -> Self {
        ClientError::Measure(e)
    }
}

impl From<FilterError> for ClientError {
    fn from(e: FilterError) -> Self {
        ClientError::Filter(e)
    }
}

impl fmt::Display for ClientError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClientError::Measure(e) => e.fmt(f),
            ClientError::Filter(e) => e.fmt(f),
            ClientError::ZeroCapacity => write!(f, "buffer capacity must be at least 1"),
        }
    }
}

impl core::error::Error for ClientError {}

/// Per-stream accounting, exposed for end-of-run reconciliation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamCounters {
    pub name: String,
    /// Frames generated for this stream (accepted + dropped).
    pub generated: u64,
    /// Frames handed to the transport.
    pub sent: u64,
    /// Frames discarded because the buffer was full.
    pub dropped: u64,
}

#[derive(Debug)]
struct StreamState {
    name: String,
    fields: Vec<(String, MetricType)>,
    pipeline: Pipeline,
    next_seq: u64,
    generated: u64,
    sent: u64,
    dropped: u64,
}

#[derive(Debug)]
enum Route {
    /// Raw stream: inject values become the frame values.
    Direct(usize),
    /// Filter chain rooted at this MP feeding stream `usize`.
    Filtered(usize),
}

/// A client with declared MPs, a run-time stream selection and one bounded
/// transmit buffer.
#[derive(Debug)]
pub struct VirtualClient {
    registry: MpRegistry,
    identity: ClientIdentity,
    capacity: usize,
    buffer: VecDeque<StreamFrame>,
    streams: Vec<StreamState>,
    routes: Vec<Vec<Route>>,
    last_ts: Vec<Micros>,
}

impl VirtualClient {
    pub fn new(
        registry: MpRegistry,
        identity: ClientIdentity,
        setup: &ClientSetup,
    ) -> Result<VirtualClient, ClientError> {
        identity.validate()?;
        if setup.buffer_capacity == 0 {
            return Err(ClientError::ZeroCapacity);
        }
        let enabled = registry.enabled_mps(setup.enabled.iter().map(String::as_str))?;

        let mut streams: Vec<StreamState> = Vec::new();
        let mut routes: Vec<Vec<Route>> = (0..registry.len()).map(|_| Vec::new()).collect();

        for idx in &enabled {
            let schema = registry.by_index(*idx).expect("validated");
            routes[idx.0 as usize].push(Route::Direct(streams.len()));
            streams.push(StreamState {
                name: schema.name.clone(),
                fields: schema.fields.clone(),
                pipeline: Pipeline::identity(),
                next_seq: 0,
                generated: 0,
                sent: 0,
                dropped: 0,
            });
        }

        // Group filter specs into chains: a spec whose source is the tail
        // output of an existing chain extends it, otherwise it roots a new
        // chain at an MP.
        let mut chains: Vec<Vec<FilterSpec>> = Vec::new();
        for spec in &setup.filters {
            if let Some(chain) = chains
                .iter_mut()
                .find(|c| c.last().map(|s| s.output.as_str()) == Some(spec.source.as_str()))
            {
                chain.push(spec.clone());
            } else {
                chains.push(alloc::vec![spec.clone()]);
            }
        }
        for chain in chains {
            let root = chain[0].source.clone();
            let pipeline = Pipeline::compose(chain, &registry)?;
            let root_schema = registry
                .by_name(&root)
                .ok_or_else(|| FilterError::DanglingSource(root.clone()))?;
            let name = String::from(pipeline.output_name().expect("non-empty chain"));
            if streams.iter().any(|s| s.name == name) {
                return Err(ClientError::Filter(FilterError::DuplicateOutput(name)));
            }
            let aggregate = pipeline.output_type().expect("non-empty chain");
            routes[root_schema.index.0 as usize].push(Route::Filtered(streams.len()));
            streams.push(StreamState {
                name,
                fields: OutputSample::wire_fields(aggregate),
                pipeline,
                next_seq: 0,
                generated: 0,
                sent: 0,
                dropped: 0,
            });
        }

        let mp_count = registry.len();
        Ok(VirtualClient {
            registry,
            identity,
            capacity: setup.buffer_capacity,
            buffer: VecDeque::with_capacity(setup.buffer_capacity.min(65_536)),
            streams,
            routes,
            last_ts: alloc::vec![Micros::ZERO; mp_count],
        })
    }

    pub fn registry(&self) -> &MpRegistry {
        &self.registry
    }

    pub fn identity(&self) -> &ClientIdentity {
        &self.identity
    }

    /// Wire index (1-based) of a stream by name.
    pub fn stream_index(&self, name: &str) -> Option<u32> {
        self.streams
            .iter()
            .position(|s| s.name == name)
            .map(|i| i as u32 + 1)
    }

    /// The header to send before any frame.
    pub fn header(&self) -> HeaderBlock {
        HeaderBlock {
            protocol_version: PROTOCOL_VERSION,
            identity: self.identity.clone(),
            schemas: self
                .streams
                .iter()
                .enumerate()
                .map(|(i, s)| StreamSchema {
                    index: i as u32 + 1,
                    name: s.name.clone(),
                    fields: s.fields.clone(),
                })
                .collect(),
        }
    }

    /// Inject one sample. Validation failures are synchronous errors; a full
    /// buffer is not an error but a counted drop. `now` is the caller's
    /// monotonic clock reading relative to client start; per-MP timestamps
    /// are clamped to be non-decreasing.
    pub fn inject(
        &mut self,
        mp: MpIndex,
        values: &[MetricValue],
        now: Micros,
    ) -> Result<InjectReport, MeasureError> {
        let schema = self
            .registry
            .by_index(mp)
            .ok_or(MeasureError::UnknownMpName(String::new()))?;
        check_values(schema, values)?;

        let slot = mp.0 as usize;
        let ts = if now > self.last_ts[slot] { now } else { self.last_ts[slot] };
        self.last_ts[slot] = ts;

        let mut enqueued = 0u32;
        let mut dropped_any = false;
        // routes[slot] is empty for un-requested MPs: the no-op sink
        for route_idx in 0..self.routes[slot].len() {
            match self.routes[slot][route_idx] {
                Route::Direct(si) => {
                    match self.enqueue(si, ts, values.to_vec()) {
                        InjectOutcome::Accepted => enqueued += 1,
                        InjectOutcome::Dropped => dropped_any = true,
                    }
                }
                Route::Filtered(si) => {
                    if let Some(out) = self.streams[si].pipeline.push(ts, values) {
                        match self.enqueue(si, out.window_end, out.wire_values()) {
                            InjectOutcome::Accepted => enqueued += 1,
                            InjectOutcome::Dropped => dropped_any = true,
                        }
                    }
                }
            }
        }
        Ok(InjectReport {
            outcome: if dropped_any {
                InjectOutcome::Dropped
            } else {
                InjectOutcome::Accepted
            },
            enqueued,
        })
    }

    fn enqueue(&mut self, stream: usize, ts: Micros, values: Vec<MetricValue>) -> InjectOutcome {
        let state = &mut self.streams[stream];
        let seq = state.next_seq;
        state.next_seq += 1;
        state.generated += 1;
        if self.buffer.len() >= self.capacity {
            state.dropped += 1;
            return InjectOutcome::Dropped;
        }
        self.buffer.push_back(StreamFrame {
            client_ts_rel: ts,
            stream_index: stream as u32 + 1,
            seq,
            values,
        });
        InjectOutcome::Accepted
    }

    /// Hand every buffered frame to the transport.
    pub fn drain(&mut self) -> Vec<StreamFrame> {
        let frames: Vec<StreamFrame> = self.buffer.drain(..).collect();
        for f in &frames {
            self.streams[(f.stream_index - 1) as usize].sent += 1;
        }
        frames
    }

    pub fn buffered(&self) -> usize {
        self.buffer.len()
    }

    /// Close every open filter window (emitting partial frames) and drain.
    pub fn flush(&mut self) -> Vec<StreamFrame> {
        for si in 0..self.streams.len() {
            if self.streams[si].pipeline.is_identity() {
                continue;
            }
            let outs = self.streams[si].pipeline.flush();
            for out in outs {
                self.enqueue(si, out.window_end, out.wire_values());
            }
        }
        self.drain()
    }

    pub fn counters(&self) -> Vec<StreamCounters> {
        self.streams
            .iter()
            .map(|s| StreamCounters {
                name: s.name.clone(),
                generated: s.generated,
                sent: s.sent,
                dropped: s.dropped,
            })
            .collect()
    }
}
