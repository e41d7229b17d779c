//! The collection server: accepts client headers, rebases client timestamps
//! to the experiment origin (the wall-clock arrival of the first client),
//! streams rows through a bounded FIFO to a single writer per experiment and
//! reports sequence gaps and overload drops at finalize time.
//!
//! Storage is a per-experiment directory: `metadata.txt` plus one
//! TAB-separated file per stream with the header line
//! `oml_ts_client oml_ts_server seq <fields...>`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::mpsc::{Receiver, SyncSender, TrySendError};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use obsmeter_core::measure::MetricValue;
use obsmeter_core::time::Micros;
use obsmeter_core::wire::{encode_value, GapReport, HeaderBlock, StreamFrame, StreamSchema, WireError, PROTOCOL_VERSION};

pub const DEFAULT_FIFO_CAPACITY: usize = 65_536;

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub data_dir: PathBuf,
    /// Bound on the ingest FIFO; overflow frames are counted and dropped.
    pub fifo_capacity: usize,
    /// Rows per second the writer persists; `None` writes at full speed.
    /// Throttling exists to make overload behaviour testable.
    pub writer_throttle: Option<u32>,
}

impl ServerConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> ServerConfig {
        ServerConfig {
            data_dir: data_dir.into(),
            fifo_capacity: DEFAULT_FIFO_CAPACITY,
            writer_throttle: None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ServerError {
    #[error("unsupported protocol version {0}")]
    ProtocolVersionMismatch(u32),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("frame for undeclared stream {0}")]
    UndeclaredStream(u32),
    #[error("experiment '{0}' has open sessions")]
    ActiveSessions(String),
    #[error("unknown experiment '{0}'")]
    UnknownExperiment(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IngestOutcome {
    Stored,
    /// The FIFO was full: the server recorded an overload event and dropped
    /// the frame.
    Overloaded,
}

/// Identity of one stored stream table.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct StreamKey {
    pub node_id: String,
    pub app_name: String,
    pub stream_name: String,
}

impl StreamKey {
    fn file_name(&self) -> String {
        format!(
            "{}_{}_{}.tsv",
            sanitize(&self.node_id),
            sanitize(&self.app_name),
            sanitize(&self.stream_name)
        )
    }
}

fn sanitize(s: &str) -> String {
    let mut out: String = s
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '-' })
        .collect();
    if out.is_empty() {
        out.push('x');
    }
    out
}

enum WriteCmd {
    NewStream { slot: usize, path: PathBuf, header: String },
    Row { slot: usize, line: String },
    Stop,
}

#[derive(Debug)]
struct SeqTracker {
    last_seq: Option<u64>,
    rows_received: u64,
    missing: u64,
    ranges: Vec<(u64, u64)>,
    duplicate: bool,
    min_server_ts: Option<Micros>,
    max_server_ts: Option<Micros>,
}

impl SeqTracker {
    fn new() -> SeqTracker {
        SeqTracker {
            last_seq: None,
            rows_received: 0,
            missing: 0,
            ranges: Vec::new(),
            duplicate: false,
            min_server_ts: None,
            max_server_ts: None,
        }
    }

    fn observe(&mut self, seq: u64, server_ts: Micros) {
        match self.last_seq {
            None => {}
            Some(last) if seq > last + 1 => {
                self.missing += seq - last - 1;
                self.ranges.push((last + 1, seq - 1));
            }
            Some(last) if seq <= last => {
                self.duplicate = true;
            }
            _ => {}
        }
        self.last_seq = Some(seq);
        self.rows_received += 1;
        if self.min_server_ts.is_none() {
            self.min_server_ts = Some(server_ts);
        }
        self.max_server_ts = Some(server_ts);
    }
}

#[derive(Debug)]
struct StreamTable {
    key: StreamKey,
    fields: Vec<(String, obsmeter_core::measure::MetricType)>,
    tracker: Mutex<SeqTracker>,
    stored: AtomicU64,
    overload_drops: AtomicU64,
}

#[derive(Debug)]
struct ClientRecord {
    node_id: String,
    app_name: String,
    start_time: Micros,
    receipt: Micros,
    offset: Micros,
}

/// One experiment's store: origin, stream tables, the writer FIFO.
#[derive(Debug)]
pub struct ExperimentStore {
    experiment_id: String,
    dir: PathBuf,
    origin: Micros,
    tables: Mutex<Vec<Arc<StreamTable>>>,
    clients: Mutex<Vec<ClientRecord>>,
    active_sessions: AtomicUsize,
    tx: SyncSender<WriteCmd>,
    writer: Mutex<Option<std::thread::JoinHandle<std::io::Result<u64>>>>,
}

impl ExperimentStore {
    fn table_slot(&self, key: &StreamKey) -> Option<(usize, Arc<StreamTable>)> {
        let tables = self.tables.lock().unwrap();
        tables
            .iter()
            .enumerate()
            .find(|(_, t)| t.key == *key)
            .map(|(i, t)| (i, Arc::clone(t)))
    }

    pub fn origin(&self) -> Micros {
        self.origin
    }
}

fn writer_loop(rx: Receiver<WriteCmd>, throttle: Option<u32>) -> std::io::Result<u64> {
    let mut files: Vec<Option<BufWriter<fs::File>>> = Vec::new();
    let mut written = 0u64;
    let pause = throttle.map(|rate| Duration::from_secs_f64(1.0 / rate as f64));
    while let Ok(cmd) = rx.recv() {
        match cmd {
            WriteCmd::NewStream { slot, path, header } => {
                if files.len() <= slot {
                    files.resize_with(slot + 1, || None);
                }
                let mut w = BufWriter::new(fs::File::create(path)?);
                w.write_all(header.as_bytes())?;
                files[slot] = Some(w);
            }
            WriteCmd::Row { slot, line } => {
                if let Some(Some(w)) = files.get_mut(slot) {
                    w.write_all(line.as_bytes())?;
                    written += 1;
                }
                if let Some(p) = pause {
                    std::thread::sleep(p);
                }
            }
            WriteCmd::Stop => break,
        }
    }
    for w in files.iter_mut().flatten() {
        w.flush()?;
    }
    Ok(written)
}

/// A connected client within an experiment.
#[derive(Debug)]
pub struct SessionHandle {
    store: Arc<ExperimentStore>,
    schemas: Vec<StreamSchema>,
    /// Stream index (1-based) to store table slot.
    slots: Vec<(usize, Arc<StreamTable>)>,
    offset: Micros,
    closed: bool,
}

impl SessionHandle {
    pub fn schemas(&self) -> &[StreamSchema] {
        &self.schemas
    }

    pub fn offset(&self) -> Micros {
        self.offset
    }

    /// Append one frame: rebase its timestamp, account its sequence number
    /// and hand the row to the writer FIFO. A full FIFO is an overload
    /// event, counted separately from client-side drops.
    pub fn ingest(&self, frame: &StreamFrame) -> Result<IngestOutcome, ServerError> {
        let idx = frame.stream_index as usize;
        if idx == 0 || idx > self.slots.len() {
            return Err(ServerError::UndeclaredStream(frame.stream_index));
        }
        let (slot, table) = &self.slots[idx - 1];
        let server_ts = frame.client_ts_rel + self.offset;
        table.tracker.lock().unwrap().observe(frame.seq, server_ts);

        let mut line = String::with_capacity(48 + 16 * frame.values.len());
        line.push_str(&frame.client_ts_rel.to_wire());
        line.push('\t');
        line.push_str(&server_ts.to_wire());
        line.push('\t');
        line.push_str(&frame.seq.to_string());
        for v in &frame.values {
            line.push('\t');
            encode_value(v, &mut line);
        }
        line.push('\n');

        match self.store.tx.try_send(WriteCmd::Row { slot: *slot, line }) {
            Ok(()) => {
                table.stored.fetch_add(1, Ordering::Relaxed);
                Ok(IngestOutcome::Stored)
            }
            Err(TrySendError::Full(_)) => {
                table.overload_drops.fetch_add(1, Ordering::Relaxed);
                Ok(IngestOutcome::Overloaded)
            }
            Err(TrySendError::Disconnected(_)) => Err(ServerError::Io(std::io::Error::other(
                "writer stopped",
            ))),
        }
    }

    pub fn close(mut self) {
        self.closed = true;
        self.store.active_sessions.fetch_sub(1, Ordering::AcqRel);
    }
}

impl Drop for SessionHandle {
    fn drop(&mut self) {
        if !self.closed {
            self.store.active_sessions.fetch_sub(1, Ordering::AcqRel);
        }
    }
}

/// Per-stream accounting in the finalize report.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamReport {
    pub key: StreamKey,
    pub rows_received: u64,
    pub rows_stored: u64,
    /// Frames the client generated but never delivered, visible as
    /// sequence gaps.
    pub client_gaps: u64,
    pub gap_ranges: Vec<(u64, u64)>,
    /// Frames the server dropped under overload.
    pub server_drops: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CollectionReport {
    pub experiment_id: String,
    pub origin: Micros,
    pub streams: Vec<StreamReport>,
    /// Span of rebased timestamps across all stored rows.
    pub duration: Micros,
}

impl CollectionReport {
    pub fn total_client_gaps(&self) -> u64 {
        self.streams.iter().map(|s| s.client_gaps).sum()
    }

    pub fn total_server_drops(&self) -> u64 {
        self.streams.iter().map(|s| s.server_drops).sum()
    }

    pub fn total_rows(&self) -> u64 {
        self.streams.iter().map(|s| s.rows_stored).sum()
    }
}

/// The collection server: one store per experiment id, sessions feeding
/// them. Transport-agnostic; the TCP front end lives in [`tcp`].
pub struct CollectionServer {
    config: ServerConfig,
    experiments: Mutex<BTreeMap<String, Arc<ExperimentStore>>>,
}

impl CollectionServer {
    pub fn new(config: ServerConfig) -> CollectionServer {
        CollectionServer {
            config,
            experiments: Mutex::new(BTreeMap::new()),
        }
    }

    /// Accept a client header. The first client of an experiment pins the
    /// origin; every stream declared in the header gets a table.
    pub fn accept_client(
        &self,
        header: &HeaderBlock,
        receipt: Micros,
    ) -> Result<SessionHandle, ServerError> {
        if header.protocol_version != PROTOCOL_VERSION {
            return Err(ServerError::ProtocolVersionMismatch(header.protocol_version));
        }
        if header.identity.experiment_id.is_empty() {
            return Err(ServerError::MalformedHeader("empty experiment id".into()));
        }
        for (i, s) in header.schemas.iter().enumerate() {
            if s.index as usize != i + 1 {
                return Err(ServerError::MalformedHeader(
                    WireError::NonContiguousIndices.to_string(),
                ));
            }
        }

        let store = {
            let mut map = self.experiments.lock().unwrap();
            if let Some(store) = map.get(&header.identity.experiment_id) {
                Arc::clone(store)
            } else {
                let store = self.create_store(&header.identity.experiment_id, receipt)?;
                map.insert(header.identity.experiment_id.clone(), Arc::clone(&store));
                store
            }
        };

        let offset = receipt - store.origin;
        store.clients.lock().unwrap().push(ClientRecord {
            node_id: header.identity.node_id.clone(),
            app_name: header.identity.app_name.clone(),
            start_time: header.identity.start_time,
            receipt,
            offset,
        });

        let mut slots = Vec::with_capacity(header.schemas.len());
        for schema in &header.schemas {
            let key = StreamKey {
                node_id: header.identity.node_id.clone(),
                app_name: header.identity.app_name.clone(),
                stream_name: schema.name.clone(),
            };
            let existing = store.table_slot(&key);
            let (slot, table) = match existing {
                Some(pair) => pair,
                None => {
                    let table = Arc::new(StreamTable {
                        key: key.clone(),
                        fields: schema.fields.clone(),
                        tracker: Mutex::new(SeqTracker::new()),
                        stored: AtomicU64::new(0),
                        overload_drops: AtomicU64::new(0),
                    });
                    let mut tables = store.tables.lock().unwrap();
                    let slot = tables.len();
                    tables.push(Arc::clone(&table));
                    let mut head = String::from("oml_ts_client\toml_ts_server\tseq");
                    for (f, _) in &schema.fields {
                        head.push('\t');
                        head.push_str(f);
                    }
                    head.push('\n');
                    store
                        .tx
                        .send(WriteCmd::NewStream {
                            slot,
                            path: store.dir.join(key.file_name()),
                            header: head,
                        })
                        .map_err(|_| ServerError::Io(std::io::Error::other("writer stopped")))?;
                    (slot, table)
                }
            };
            slots.push((slot, table));
        }

        store.active_sessions.fetch_add(1, Ordering::AcqRel);
        Ok(SessionHandle {
            store,
            schemas: header.schemas.clone(),
            slots,
            offset,
            closed: false,
        })
    }

    fn create_store(&self, experiment_id: &str, receipt: Micros) -> Result<Arc<ExperimentStore>, ServerError> {
        let dir = self.config.data_dir.join(sanitize(experiment_id));
        fs::create_dir_all(&dir)?;
        let (tx, rx) = std::sync::mpsc::sync_channel(self.config.fifo_capacity);
        let throttle = self.config.writer_throttle;
        let writer = std::thread::Builder::new()
            .name(format!("obsmeter-writer-{experiment_id}"))
            .spawn(move || writer_loop(rx, throttle))
            .expect("spawn writer");
        Ok(Arc::new(ExperimentStore {
            experiment_id: experiment_id.to_string(),
            dir,
            origin: receipt,
            tables: Mutex::new(Vec::new()),
            clients: Mutex::new(Vec::new()),
            active_sessions: AtomicUsize::new(0),
            tx,
            writer: Mutex::new(Some(writer)),
        }))
    }

    /// Seal an experiment: all sessions must be closed. Flushes the writer,
    /// writes `metadata.txt` and reports per-stream accounting.
    pub fn finalize(&self, experiment_id: &str) -> Result<CollectionReport, ServerError> {
        let store = {
            let mut map = self.experiments.lock().unwrap();
            let store = map
                .get(experiment_id)
                .ok_or_else(|| ServerError::UnknownExperiment(experiment_id.to_string()))?;
            if store.active_sessions.load(Ordering::Acquire) > 0 {
                return Err(ServerError::ActiveSessions(experiment_id.to_string()));
            }
            map.remove(experiment_id).expect("checked present")
        };
        store
            .tx
            .send(WriteCmd::Stop)
            .map_err(|_| ServerError::Io(std::io::Error::other("writer stopped early")))?;
        if let Some(handle) = store.writer.lock().unwrap().take() {
            handle.join().map_err(|_| ServerError::Io(std::io::Error::other("writer panicked")))??;
        }

        let tables = store.tables.lock().unwrap();
        let mut streams = Vec::with_capacity(tables.len());
        let mut min_ts: Option<Micros> = None;
        let mut max_ts: Option<Micros> = None;
        for table in tables.iter() {
            // single writer has stopped; trackers are quiescent
            let tracker = table.tracker.lock().unwrap();
            if let (Some(lo), Some(hi)) = (tracker.min_server_ts, tracker.max_server_ts) {
                min_ts = Some(min_ts.map_or(lo, |m| m.min(lo)));
                max_ts = Some(max_ts.map_or(hi, |m| m.max(hi)));
            }
            streams.push(StreamReport {
                key: table.key.clone(),
                rows_received: tracker.rows_received,
                rows_stored: table.stored.load(Ordering::Relaxed),
                client_gaps: tracker.missing,
                gap_ranges: tracker.ranges.clone(),
                server_drops: table.overload_drops.load(Ordering::Relaxed),
            });
        }
        drop(tables);
        streams.sort_by(|a, b| a.key.cmp(&b.key));

        let report = CollectionReport {
            experiment_id: store.experiment_id.clone(),
            origin: store.origin,
            streams,
            duration: match (min_ts, max_ts) {
                (Some(lo), Some(hi)) => hi - lo,
                _ => Micros::ZERO,
            },
        };
        write_metadata(&store, &report)?;
        Ok(report)
    }

    pub fn data_dir(&self) -> &Path {
        &self.config.data_dir
    }
}

fn write_metadata(store: &ExperimentStore, report: &CollectionReport) -> Result<(), ServerError> {
    let mut out = String::new();
    out.push_str(&format!("experiment-id: {}\n", store.experiment_id));
    out.push_str(&format!("origin: {}\n", store.origin.to_wire()));
    let clients = store.clients.lock().unwrap();
    for c in clients.iter() {
        out.push_str(&format!(
            "client: node={} app={} start-time={} receipt={} offset={}\n",
            c.node_id,
            c.app_name,
            c.start_time.to_wire(),
            c.receipt.to_wire(),
            c.offset.to_wire(),
        ));
    }
    let tables = store.tables.lock().unwrap();
    for s in &report.streams {
        let table = tables.iter().find(|t| t.key == s.key).expect("reported table");
        let fields: Vec<String> = table
            .fields
            .iter()
            .map(|(f, t)| format!("{f}:{}", t.name()))
            .collect();
        out.push_str(&format!(
            "stream: node={} app={} name={} file={} fields={} rows={} gaps={} overload={}\n",
            s.key.node_id,
            s.key.app_name,
            s.key.stream_name,
            table.key.file_name(),
            fields.join(","),
            s.rows_stored,
            s.client_gaps,
            s.server_drops,
        ));
    }
    fs::write(store.dir.join("metadata.txt"), out)?;
    Ok(())
}

/// A stored row read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredRow {
    pub oml_ts_client: Micros,
    pub oml_ts_server: Micros,
    pub seq: u64,
    pub values: Vec<String>,
}

/// Read one stream table back from its file.
pub fn read_stream_table(path: &Path) -> Result<(Vec<String>, Vec<StoredRow>), ServerError> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| ServerError::MalformedHeader("empty table".into()))?
        .split('\t')
        .map(String::from)
        .collect();
    let mut rows = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 3 {
            return Err(ServerError::MalformedHeader(format!("short row '{line}'")));
        }
        rows.push(StoredRow {
            oml_ts_client: Micros::parse_wire(cols[0])
                .ok_or_else(|| ServerError::MalformedHeader("bad client ts".into()))?,
            oml_ts_server: Micros::parse_wire(cols[1])
                .ok_or_else(|| ServerError::MalformedHeader("bad server ts".into()))?,
            seq: cols[2]
                .parse()
                .map_err(|_| ServerError::MalformedHeader("bad seq".into()))?,
            values: cols[3..].iter().map(|s| s.to_string()).collect(),
        });
    }
    Ok((header, rows))
}

/// Canonical byte rendering of a finalized experiment directory: metadata
/// followed by every stream file in name order. Two identical experiments
/// export identically.
pub fn canonical_export(dir: &Path) -> Result<String, ServerError> {
    let mut names: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().map(|x| x == "tsv").unwrap_or(false))
        .collect();
    names.sort();
    let mut out = String::new();
    out.push_str(&fs::read_to_string(dir.join("metadata.txt"))?);
    for p in names {
        out.push_str(&format!("== {} ==\n", p.file_name().unwrap().to_string_lossy()));
        out.push_str(&fs::read_to_string(&p)?);
    }
    Ok(out)
}

/// Gap report for one stream computed from the stored file, using the
/// general arrival-order detector.
pub fn gaps_from_file(path: &Path) -> Result<GapReport, ServerError> {
    let (_, rows) = read_stream_table(path)?;
    let seqs: Vec<u64> = rows.iter().map(|r| r.seq).collect();
    obsmeter_core::wire::detect_gaps(&seqs)
        .map_err(|e| ServerError::MalformedHeader(e.to_string()))
}

/// TCP front end: one thread per connection feeding the session API.
pub mod tcp {
    use super::*;
    use obsmeter_core::wire::{decode_frame, decode_header};
    use std::io::{BufRead, BufReader};
    use std::net::{TcpListener, TcpStream};
    use std::sync::atomic::AtomicBool;

    pub fn wall_clock_micros() -> Micros {
        let now = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .expect("clock after epoch");
        Micros(now.as_micros() as i64)
    }

    pub struct TcpServer {
        pub local_addr: std::net::SocketAddr,
        stop: Arc<AtomicBool>,
        handle: Option<std::thread::JoinHandle<()>>,
    }

    impl TcpServer {
        pub fn stop(mut self) {
            self.stop.store(true, Ordering::Release);
            if let Some(h) = self.handle.take() {
                h.join().ok();
            }
        }
    }

    /// Bind and serve in a background thread until stopped.
    pub fn spawn(server: Arc<CollectionServer>, addr: &str) -> std::io::Result<TcpServer> {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let local_addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let stop2 = Arc::clone(&stop);
        let handle = std::thread::Builder::new()
            .name("obsmeter-accept".into())
            .spawn(move || {
                let mut workers = Vec::new();
                while !stop2.load(Ordering::Acquire) {
                    match listener.accept() {
                        Ok((stream, _)) => {
                            let server = Arc::clone(&server);
                            workers.push(std::thread::spawn(move || {
                                if let Err(e) = handle_connection(server, stream) {
                                    eprintln!("obsmeter-server: connection error: {e}");
                                }
                            }));
                        }
                        Err(ref e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                            std::thread::sleep(Duration::from_millis(5));
                        }
                        Err(e) => {
                            eprintln!("obsmeter-server: accept error: {e}");
                            break;
                        }
                    }
                }
                for w in workers {
                    w.join().ok();
                }
            })
            .expect("spawn acceptor");
        Ok(TcpServer {
            local_addr,
            stop,
            handle: Some(handle),
        })
    }

    fn handle_connection(server: Arc<CollectionServer>, stream: TcpStream) -> anyhow::Result<()> {
        stream.set_nodelay(true).ok();
        let mut reader = BufReader::new(stream);
        let mut header_text = String::new();
        loop {
            let mut line = String::new();
            if reader.read_line(&mut line)? == 0 {
                anyhow::bail!("connection closed before header completed");
            }
            let done = line == "\n";
            header_text.push_str(&line);
            if done {
                break;
            }
        }
        let header = decode_header(&header_text).map_err(|e| anyhow::anyhow!("{e}"))?;
        let session = server.accept_client(&header, wall_clock_micros())?;
        let mut line = String::new();
        loop {
            line.clear();
            if reader.read_line(&mut line)? == 0 {
                break;
            }
            if line == "\n" {
                continue;
            }
            let frame = decode_frame(&line, session.schemas()).map_err(|e| anyhow::anyhow!("{e}"))?;
            session.ingest(&frame)?;
        }
        session.close();
        Ok(())
    }
}
