//! The threaded reporter: application threads inject samples into the
//! bounded client buffer; one background worker drains it, encodes frames
//! and writes them to every connected endpoint.
//!
//! The injection path never touches the network or the filesystem: its
//! worst case is one mutex-guarded bounded-queue enqueue (plus the
//! configurable synthetic marshalling cost used by the observer-effect
//! experiments). Frames for one stream reach each server in sequence order
//! because the worker is the only consumer and transports are in-order.

use std::collections::BTreeMap;
use std::io::Write;
use std::net::TcpStream;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{Receiver, RecvTimeoutError, SyncSender};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use obsmeter_core::client::{ClientSetup, InjectOutcome, StreamCounters, VirtualClient};
use obsmeter_core::measure::{ClientIdentity, MeasureError, MetricValue, MpIndex, MpRegistry};
use obsmeter_core::time::Micros;
use obsmeter_core::wire::{encode_frame, encode_header, HeaderBlock, StreamFrame, StreamSchema};

pub const DEFAULT_FLUSH_TIMEOUT: Duration = Duration::from_secs(10);

/// Where encoded bytes go. Implemented by TCP streams and by in-memory
/// sinks used in tests and pressure experiments.
pub trait FrameSink: Send {
    fn send(&mut self, bytes: &[u8]) -> std::io::Result<()>;
    fn finish(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

impl FrameSink for TcpStream {
    fn send(&mut self, bytes: &[u8]) -> std::io::Result<()> {
        self.write_all(bytes)
    }

    fn finish(&mut self) -> std::io::Result<()> {
        self.flush()
    }
}

/// Transport selection for one endpoint.
pub enum Transport {
    /// Connect to `host:port` at start.
    Tcp(String),
    /// Hand the bytes to a caller-provided sink.
    Sink(Box<dyn FrameSink>),
}

pub struct EndpointConfig {
    pub tag: String,
    pub transport: Transport,
}

pub struct ReporterConfig {
    pub endpoints: Vec<EndpointConfig>,
    /// Stream name to endpoint tags; streams absent from the map go to
    /// every endpoint.
    pub stream_destinations: BTreeMap<String, Vec<String>>,
    /// Synthetic per-frame marshalling cost charged on the injecting
    /// thread, zero for honest micro-benchmarking.
    pub marshal_cost: Duration,
    pub flush_timeout: Duration,
}

impl Default for ReporterConfig {
    fn default() -> Self {
        ReporterConfig {
            endpoints: Vec::new(),
            stream_destinations: BTreeMap::new(),
            marshal_cost: Duration::ZERO,
            flush_timeout: DEFAULT_FLUSH_TIMEOUT,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ReporterError {
    #[error("no endpoints configured")]
    NoEndpoints,
    #[error("connect to {addr} failed: {source}")]
    ConnectFailed { addr: String, source: std::io::Error },
    #[error("handshake with {tag} rejected: {source}")]
    HandshakeRejected { tag: String, source: std::io::Error },
    #[error("unknown endpoint tag '{0}' in stream destinations")]
    UnknownEndpointTag(String),
    #[error("stream '{0}' maps to no endpoint")]
    UnroutedStream(String),
    #[error(transparent)]
    Setup(#[from] obsmeter_core::client::ClientError),
    #[error(transparent)]
    Inject(#[from] MeasureError),
    #[error("reporter is closed")]
    Closed,
    #[error("flush timed out")]
    FlushTimeout,
    #[error("transport failed mid-run, frames lost: {0}")]
    TransportFailed(String),
}

/// End-of-run accounting per stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunSummary {
    pub streams: Vec<StreamCounters>,
}

impl RunSummary {
    pub fn sent(&self) -> u64 {
        self.streams.iter().map(|s| s.sent).sum()
    }

    pub fn dropped(&self) -> u64 {
        self.streams.iter().map(|s| s.dropped).sum()
    }
}

struct Connection {
    tag: String,
    sink: Box<dyn FrameSink>,
    /// Global (1-based) stream index to this connection's local index.
    remap: Vec<Option<u32>>,
}

struct Shared {
    client: Mutex<VirtualClient>,
    wake: Condvar,
    closed: AtomicBool,
    failed: Mutex<Option<String>>,
}

/// Handle to a running reporter. Cloneable across application threads.
pub struct Reporter {
    shared: Arc<Shared>,
    start: Instant,
    marshal_cost: Duration,
    flush_timeout: Duration,
    worker: Mutex<Option<std::thread::JoinHandle<()>>>,
    done_rx: Mutex<Option<Receiver<()>>>,
    summary: Mutex<Option<RunSummary>>,
}

/// Busy-wait for `d`, modelling CPU work that cannot be slept away.
pub fn busy_work(d: Duration) {
    if d.is_zero() {
        return;
    }
    let until = Instant::now() + d;
    while Instant::now() < until {
        std::hint::spin_loop();
    }
}

fn connect(transport: Transport) -> Result<Box<dyn FrameSink>, ReporterError> {
    match transport {
        Transport::Tcp(addr) => {
            let stream = TcpStream::connect(&addr)
                .map_err(|source| ReporterError::ConnectFailed { addr: addr.clone(), source })?;
            stream.set_nodelay(true).ok();
            Ok(Box::new(stream))
        }
        Transport::Sink(sink) => Ok(sink),
    }
}

fn subset_header(full: &HeaderBlock, keep: &[u32]) -> (HeaderBlock, Vec<Option<u32>>) {
    let mut remap = vec![None; full.schemas.len()];
    let mut schemas = Vec::with_capacity(keep.len());
    for (local, global) in keep.iter().enumerate() {
        let schema = &full.schemas[(*global - 1) as usize];
        remap[(*global - 1) as usize] = Some(local as u32 + 1);
        schemas.push(StreamSchema {
            index: local as u32 + 1,
            ..schema.clone()
        });
    }
    (
        HeaderBlock {
            protocol_version: full.protocol_version,
            identity: full.identity.clone(),
            schemas,
        },
        remap,
    )
}

/// Start the background transmission context: connect every endpoint, send
/// each its header, then spawn the drain worker.
pub fn start_reporter(
    registry: MpRegistry,
    identity: ClientIdentity,
    setup: &ClientSetup,
    config: ReporterConfig,
) -> Result<Reporter, ReporterError> {
    if config.endpoints.is_empty() {
        return Err(ReporterError::NoEndpoints);
    }
    let client = VirtualClient::new(registry, identity, setup)?;
    let header = client.header();

    let tags: Vec<String> = config.endpoints.iter().map(|e| e.tag.clone()).collect();
    for dests in config.stream_destinations.values() {
        for tag in dests {
            if !tags.contains(tag) {
                return Err(ReporterError::UnknownEndpointTag(tag.clone()));
            }
        }
    }
    // per endpoint: the global stream indices routed to it
    let mut per_endpoint: Vec<Vec<u32>> = vec![Vec::new(); tags.len()];
    for schema in &header.schemas {
        let dests = config.stream_destinations.get(&schema.name);
        let mut routed = false;
        for (i, tag) in tags.iter().enumerate() {
            let wanted = match dests {
                Some(list) => list.contains(tag),
                None => true,
            };
            if wanted {
                per_endpoint[i].push(schema.index);
                routed = true;
            }
        }
        if !routed {
            return Err(ReporterError::UnroutedStream(schema.name.clone()));
        }
    }

    let mut connections = Vec::with_capacity(config.endpoints.len());
    for (endpoint, keep) in config.endpoints.into_iter().zip(per_endpoint) {
        let mut sink = connect(endpoint.transport)?;
        let (sub_header, remap) = subset_header(&header, &keep);
        let bytes = encode_header(&sub_header).expect("indices contiguous by construction");
        sink.send(bytes.as_bytes())
            .map_err(|source| ReporterError::HandshakeRejected { tag: endpoint.tag.clone(), source })?;
        connections.push(Connection {
            tag: endpoint.tag,
            sink,
            remap,
        });
    }

    let shared = Arc::new(Shared {
        client: Mutex::new(client),
        wake: Condvar::new(),
        closed: AtomicBool::new(false),
        failed: Mutex::new(None),
    });
    let (done_tx, done_rx) = std::sync::mpsc::sync_channel(1);
    let worker = std::thread::Builder::new()
        .name("obsmeter-reporter".into())
        .spawn({
            let shared = Arc::clone(&shared);
            move || worker_loop(shared, connections, done_tx)
        })
        .expect("spawn reporter worker");

    Ok(Reporter {
        shared,
        start: Instant::now(),
        marshal_cost: config.marshal_cost,
        flush_timeout: config.flush_timeout,
        worker: Mutex::new(Some(worker)),
        done_rx: Mutex::new(Some(done_rx)),
        summary: Mutex::new(None),
    })
}

fn worker_loop(shared: Arc<Shared>, mut connections: Vec<Connection>, done_tx: SyncSender<()>) {
    loop {
        let (frames, finishing) = {
            let mut client = shared.client.lock().unwrap_or_else(|e| e.into_inner());
            while client.buffered() == 0 && !shared.closed.load(Ordering::Acquire) {
                client = shared
                    .wake
                    .wait_timeout(client, Duration::from_millis(50))
                    .unwrap_or_else(|e| e.into_inner())
                    .0;
            }
            if shared.closed.load(Ordering::Acquire) {
                (client.flush(), true)
            } else {
                (client.drain(), false)
            }
        };
        if write_frames(&shared, &mut connections, &frames).is_err() {
            break;
        }
        if finishing {
            for conn in &mut connections {
                conn.sink.finish().ok();
            }
            break;
        }
    }
    let _ = done_tx.send(());
}

fn write_frames(
    shared: &Shared,
    connections: &mut [Connection],
    frames: &[StreamFrame],
) -> Result<(), ()> {
    for frame in frames {
        for conn in connections.iter_mut() {
            let Some(local) = conn.remap[(frame.stream_index - 1) as usize] else {
                continue;
            };
            let line = encode_frame(&StreamFrame {
                stream_index: local,
                ..frame.clone()
            });
            if let Err(e) = conn.sink.send(line.as_bytes()) {
                // a lost connection invalidates the run; stop transmitting
                *shared.failed.lock().unwrap_or_else(|p| p.into_inner()) =
                    Some(format!("endpoint {}: {e}", conn.tag));
                return Err(());
            }
        }
    }
    Ok(())
}

impl Reporter {
    /// Inject one sample. Returns whether the sample was buffered or
    /// dropped; validation problems are synchronous errors.
    pub fn inject(&self, mp: MpIndex, values: &[MetricValue]) -> Result<InjectOutcome, ReporterError> {
        if self.shared.closed.load(Ordering::Acquire) {
            return Err(ReporterError::Closed);
        }
        let now = Micros::from_secs_f64(self.start.elapsed().as_secs_f64());
        let report = {
            let mut client = self.shared.client.lock().unwrap_or_else(|e| e.into_inner());
            client.inject(mp, values, now)?
        };
        if report.enqueued > 0 {
            busy_work(self.marshal_cost * report.enqueued);
            self.shared.wake.notify_one();
        }
        Ok(report.outcome)
    }

    /// Seconds since reporter start, the clock samples are stamped with.
    pub fn now(&self) -> Micros {
        Micros::from_secs_f64(self.start.elapsed().as_secs_f64())
    }

    pub fn stream_index(&self, name: &str) -> Option<u32> {
        self.shared
            .client
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .stream_index(name)
    }

    /// Transmit everything buffered, close every open filter window
    /// (emitting frames marked partial), close connections and report the
    /// per-stream accounting. Idempotent: a second call returns the same
    /// summary.
    pub fn flush_and_close(&self) -> Result<RunSummary, ReporterError> {
        {
            let summary = self.summary.lock().unwrap_or_else(|e| e.into_inner());
            if let Some(s) = &*summary {
                return Ok(s.clone());
            }
        }
        self.shared.closed.store(true, Ordering::Release);
        self.shared.wake.notify_all();
        let rx = self.done_rx.lock().unwrap_or_else(|e| e.into_inner()).take();
        if let Some(rx) = rx {
            match rx.recv_timeout(self.flush_timeout) {
                Ok(()) => {}
                Err(RecvTimeoutError::Timeout) => return Err(ReporterError::FlushTimeout),
                Err(RecvTimeoutError::Disconnected) => {}
            }
            if let Some(handle) = self.worker.lock().unwrap_or_else(|e| e.into_inner()).take() {
                handle.join().ok();
            }
        }
        if let Some(reason) = self
            .shared
            .failed
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .clone()
        {
            return Err(ReporterError::TransportFailed(reason));
        }
        let counters = self
            .shared
            .client
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .counters();
        let summary_value = RunSummary { streams: counters };
        *self.summary.lock().unwrap_or_else(|e| e.into_inner()) = Some(summary_value.clone());
        Ok(summary_value)
    }
}

/// Test and experiment sinks.
pub mod testing {
    use super::FrameSink;
    use std::sync::{Arc, Condvar, Mutex};

    /// Collects everything written to it.
    #[derive(Clone, Default)]
    pub struct VecSink {
        data: Arc<Mutex<Vec<u8>>>,
    }

    impl VecSink {
        pub fn new() -> VecSink {
            VecSink::default()
        }

        pub fn contents(&self) -> Vec<u8> {
            self.data.lock().unwrap().clone()
        }
    }

    impl FrameSink for VecSink {
        fn send(&mut self, bytes: &[u8]) -> std::io::Result<()> {
            self.data.lock().unwrap().extend_from_slice(bytes);
            Ok(())
        }
    }

    /// A sink whose writes block while the gate is shut: the stalled-path
    /// double for drop-pressure runs.
    #[derive(Clone)]
    pub struct GateSink {
        state: Arc<(Mutex<GateState>, Condvar)>,
    }

    struct GateState {
        open: bool,
        data: Vec<u8>,
    }

    impl GateSink {
        pub fn new(open: bool) -> GateSink {
            GateSink {
                state: Arc::new((
                    Mutex::new(GateState {
                        open,
                        data: Vec::new(),
                    }),
                    Condvar::new(),
                )),
            }
        }

        pub fn open(&self) {
            let (lock, cv) = &*self.state;
            lock.lock().unwrap().open = true;
            cv.notify_all();
        }

        pub fn shut(&self) {
            let (lock, _) = &*self.state;
            lock.lock().unwrap().open = false;
        }

        pub fn contents(&self) -> Vec<u8> {
            let (lock, _) = &*self.state;
            lock.lock().unwrap().data.clone()
        }
    }

    impl FrameSink for GateSink {
        fn send(&mut self, bytes: &[u8]) -> std::io::Result<()> {
            let (lock, cv) = &*self.state;
            let mut st = lock.lock().unwrap();
            while !st.open {
                st = cv.wait(st).unwrap();
            }
            st.data.extend_from_slice(bytes);
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::testing::{GateSink, VecSink};
    use super::*;
    use obsmeter_core::measure::MetricType;
    use obsmeter_core::wire::{decode_frame, decode_header};

    fn registry() -> MpRegistry {
        let mut reg = MpRegistry::new();
        reg.define_mp("transfer", &[("size", MetricType::Int64)]).unwrap();
        reg.define_mp("jitter", &[("jitter", MetricType::Float64)]).unwrap();
        reg
    }

    fn identity() -> ClientIdentity {
        ClientIdentity {
            experiment_id: "e1".into(),
            node_id: "n0".into(),
            app_name: "probe".into(),
            start_time: Micros::from_secs(1_000),
        }
    }

    fn setup(enabled: &[&str], capacity: usize) -> ClientSetup {
        ClientSetup {
            enabled: enabled.iter().map(|s| s.to_string()).collect(),
            filters: vec![],
            buffer_capacity: capacity,
        }
    }

    fn single_sink_config(sink: Box<dyn FrameSink>) -> ReporterConfig {
        ReporterConfig {
            endpoints: vec![EndpointConfig {
                tag: "main".into(),
                transport: Transport::Sink(sink),
            }],
            ..ReporterConfig::default()
        }
    }

    #[test]
    fn header_then_frames_in_order() {
        let sink = VecSink::new();
        let rep = start_reporter(
            registry(),
            identity(),
            &setup(&["transfer"], 64),
            single_sink_config(Box::new(sink.clone())),
        )
        .unwrap();
        for i in 0..10i64 {
            rep.inject(MpIndex(0), &[MetricValue::Int64(1000 + i)]).unwrap();
        }
        let summary = rep.flush_and_close().unwrap();
        assert_eq!(summary.sent(), 10);
        assert_eq!(summary.dropped(), 0);

        let text = String::from_utf8(sink.contents()).unwrap();
        let header_end = text.find("\n\n").unwrap() + 2;
        let header = decode_header(&text[..header_end]).unwrap();
        assert_eq!(header.schemas.len(), 1);
        let mut expected_seq = 0;
        for line in text[header_end..].lines() {
            let frame = decode_frame(line, &header.schemas).unwrap();
            assert_eq!(frame.seq, expected_seq);
            expected_seq += 1;
        }
        assert_eq!(expected_seq, 10);
    }

    #[test]
    fn streams_split_across_endpoints() {
        let a = VecSink::new();
        let b = VecSink::new();
        let mut dest = BTreeMap::new();
        dest.insert("transfer".to_string(), vec!["a".to_string()]);
        dest.insert("jitter".to_string(), vec!["b".to_string()]);
        let rep = start_reporter(
            registry(),
            identity(),
            &setup(&["transfer", "jitter"], 64),
            ReporterConfig {
                endpoints: vec![
                    EndpointConfig { tag: "a".into(), transport: Transport::Sink(Box::new(a.clone())) },
                    EndpointConfig { tag: "b".into(), transport: Transport::Sink(Box::new(b.clone())) },
                ],
                stream_destinations: dest,
                ..ReporterConfig::default()
            },
        )
        .unwrap();
        rep.inject(MpIndex(0), &[MetricValue::Int64(1)]).unwrap();
        rep.inject(MpIndex(1), &[MetricValue::Float64(0.5)]).unwrap();
        rep.flush_and_close().unwrap();

        let ta = String::from_utf8(a.contents()).unwrap();
        let tb = String::from_utf8(b.contents()).unwrap();
        // each endpoint sees only its stream, declared with local index 1
        assert!(ta.contains("schema: 1 transfer size:int64"));
        assert!(!ta.contains("jitter"));
        assert!(tb.contains("schema: 1 jitter jitter:float64"));
        assert!(!tb.contains("transfer"));
    }

    #[test]
    fn unreachable_endpoint_fails_at_start() {
        // a port from the discard range that nothing listens on
        let err = start_reporter(
            registry(),
            identity(),
            &setup(&["transfer"], 8),
            ReporterConfig {
                endpoints: vec![EndpointConfig {
                    tag: "dead".into(),
                    transport: Transport::Tcp("127.0.0.1:9".into()),
                }],
                ..ReporterConfig::default()
            },
        )
        .err()
        .unwrap();
        assert!(matches!(err, ReporterError::ConnectFailed { .. }));
    }

    #[test]
    fn stalled_sink_drops_under_pressure() {
        // gate open for the header, then shut; a sacrificial frame pins the
        // worker inside a blocked write, so the burst sees only the buffer
        let gate = GateSink::new(true);
        let rep = start_reporter(
            registry(),
            identity(),
            &setup(&["transfer"], 8),
            single_sink_config(Box::new(gate.clone())),
        )
        .unwrap();
        gate.shut();
        rep.inject(MpIndex(0), &[MetricValue::Int64(-1)]).unwrap();
        std::thread::sleep(Duration::from_millis(50));
        for i in 0..100i64 {
            rep.inject(MpIndex(0), &[MetricValue::Int64(i)]).unwrap();
        }
        gate.open();
        let summary = rep.flush_and_close().unwrap();
        let s = &summary.streams[0];
        assert_eq!(s.sent + s.dropped, 101);
        assert!(s.dropped >= 92, "dropped = {}", s.dropped);
        // double close is idempotent
        assert_eq!(rep.flush_and_close().unwrap(), summary);
    }
}
