//! The instrumented applications under test: a UDP-style probe
//! (sender/receiver) with four reporting flavours, and a packet-capture tap
//! reporter with three. Their only job is to generate traffic, compute the
//! classic interval statistics and report them through one of the
//! available channels so the harness can compare the channels against the
//! ground-truth trace.

pub mod medium;
pub mod probe;
pub mod tap;

use std::collections::BTreeMap;

use obsmeter_core::client::{ClientSetup, VirtualClient};
use obsmeter_core::measure::{ClientIdentity, MetricType, MetricValue, MpIndex, MpRegistry};
use obsmeter_core::sim::TraceRecord;
use obsmeter_core::time::Micros;
use obsmeter_core::wire::encode_frame;

use crate::server::{IngestOutcome, ServerError, SessionHandle};

/// Probe reporting flavours.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProbeFlavour {
    /// The original tool: interval statistics into a local CSV file.
    VanillaCsv,
    /// Interval statistics computed by the tool, reported via the library.
    LegacyMp,
    /// Every packet reported verbatim via the library.
    AdvancedMp,
    /// Per-packet injection consolidated by library filters.
    AdvancedFiltered,
}

impl ProbeFlavour {
    pub const ALL: [ProbeFlavour; 4] = [
        ProbeFlavour::VanillaCsv,
        ProbeFlavour::LegacyMp,
        ProbeFlavour::AdvancedMp,
        ProbeFlavour::AdvancedFiltered,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ProbeFlavour::VanillaCsv => "vanilla-csv",
            ProbeFlavour::LegacyMp => "legacy-mp",
            ProbeFlavour::AdvancedMp => "advanced-mp",
            ProbeFlavour::AdvancedFiltered => "advanced-filtered",
        }
    }

    pub fn parse(s: &str) -> Option<ProbeFlavour> {
        Self::ALL.into_iter().find(|f| f.name() == s)
    }

    pub fn uses_library(self) -> bool {
        self != ProbeFlavour::VanillaCsv
    }
}

/// Tap reporter flavours.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TapFlavour {
    Csv,
    Mp,
    MpFiltered,
}

impl TapFlavour {
    pub const ALL: [TapFlavour; 3] = [TapFlavour::Csv, TapFlavour::Mp, TapFlavour::MpFiltered];

    pub fn name(self) -> &'static str {
        match self {
            TapFlavour::Csv => "csv",
            TapFlavour::Mp => "mp",
            TapFlavour::MpFiltered => "mp-filtered",
        }
    }

    pub fn parse(s: &str) -> Option<TapFlavour> {
        Self::ALL.into_iter().find(|f| f.name() == s)
    }
}

/// MP names shared by the probe apps.
pub const MP_TRANSFER: &str = "transfer";
pub const MP_LOSSES: &str = "losses";
pub const MP_JITTER: &str = "jitter";
pub const MP_PACKETS: &str = "packets";
pub const MP_APPLICATION: &str = "application";
pub const MP_IP: &str = "ip";
pub const MP_UDP: &str = "udp";

/// The probe's measurement points: interval statistics, per-packet records
/// and the one-shot ancillary report.
pub fn probe_registry() -> MpRegistry {
    let mut reg = MpRegistry::new();
    reg.define_mp(MP_TRANSFER, &[("size", MetricType::Int64)]).expect("static");
    reg.define_mp(
        MP_LOSSES,
        &[("lost", MetricType::Int64), ("sent", MetricType::Int64)],
    )
    .expect("static");
    reg.define_mp(MP_JITTER, &[("jitter", MetricType::Float64)]).expect("static");
    reg.define_mp(
        MP_PACKETS,
        &[
            ("pkt_id", MetricType::Int64),
            ("size", MetricType::Int64),
            ("t_snd", MetricType::Float64),
            ("t_rcv", MetricType::Float64),
        ],
    )
    .expect("static");
    reg.define_mp(
        MP_APPLICATION,
        &[("version", MetricType::Text), ("argv", MetricType::Text)],
    )
    .expect("static");
    reg
}

/// The tap's measurement points: one `ip` and one `udp` tuple per captured
/// packet, plus the ancillary report.
pub fn tap_registry() -> MpRegistry {
    let mut reg = MpRegistry::new();
    reg.define_mp(
        MP_IP,
        &[
            ("pkt_id", MetricType::Int64),
            ("src", MetricType::Text),
            ("dst", MetricType::Text),
            ("len", MetricType::Int64),
        ],
    )
    .expect("static");
    reg.define_mp(
        MP_UDP,
        &[
            ("pkt_id", MetricType::Int64),
            ("len", MetricType::Int64),
            ("sport", MetricType::Int64),
            ("dport", MetricType::Int64),
        ],
    )
    .expect("static");
    reg.define_mp(
        MP_APPLICATION,
        &[("version", MetricType::Text), ("argv", MetricType::Text)],
    )
    .expect("static");
    reg
}

/// Emit the one-shot `application` sample carrying version and command
/// line. A missing version is stored as empty text, not an error.
pub fn ancillary_report(
    reporter: &mut VirtualReporter,
    version: Option<&str>,
    argv: &str,
    now: Micros,
) -> Result<(), ServerError> {
    let mp = reporter
        .client
        .registry()
        .by_name(MP_APPLICATION)
        .expect("registries declare the application MP")
        .index;
    reporter.inject(
        mp,
        &[
            MetricValue::Text(version.unwrap_or("").to_string()),
            MetricValue::Text(argv.to_string()),
        ],
        now,
    )
}

/// Deterministic client-side reporting in virtual time: samples go through
/// the bounded client buffer and drain straight into a server session,
/// except while a scripted stall window is active. Stalls are how reporter
/// drop pressure is produced reproducibly.
pub struct VirtualReporter {
    pub client: VirtualClient,
    session: Option<SessionHandle>,
    stalls: Vec<(Micros, Micros)>,
    /// Wire bytes of every frame handed to the transport, in order.
    pub sent_frames: Vec<(Micros, usize)>,
    pub server_overloads: u64,
}

impl VirtualReporter {
    pub fn new(
        registry: MpRegistry,
        identity: ClientIdentity,
        setup: &ClientSetup,
        session: Option<SessionHandle>,
        stalls: Vec<(Micros, Micros)>,
    ) -> Result<VirtualReporter, obsmeter_core::client::ClientError> {
        Ok(VirtualReporter {
            client: VirtualClient::new(registry, identity, setup)?,
            session,
            stalls,
            sent_frames: Vec::new(),
            server_overloads: 0,
        })
    }

    fn stalled(&self, now: Micros) -> bool {
        self.stalls.iter().any(|(a, b)| now >= *a && now < *b)
    }

    pub fn inject(&mut self, mp: MpIndex, values: &[MetricValue], now: Micros) -> Result<(), ServerError> {
        self.client
            .inject(mp, values, now)
            .map_err(|e| ServerError::MalformedHeader(e.to_string()))?;
        self.pump(now)
    }

    /// Deliver buffered frames unless the transport is stalled at `now`.
    pub fn pump(&mut self, now: Micros) -> Result<(), ServerError> {
        if self.stalled(now) {
            return Ok(());
        }
        for frame in self.client.drain() {
            self.deliver(frame)?;
        }
        Ok(())
    }

    fn deliver(&mut self, frame: obsmeter_core::wire::StreamFrame) -> Result<(), ServerError> {
        let bytes = encode_frame(&frame).len();
        self.sent_frames.push((frame.client_ts_rel, bytes));
        if let Some(session) = &self.session {
            if session.ingest(&frame)? == IngestOutcome::Overloaded {
                self.server_overloads += 1;
            }
        }
        Ok(())
    }

    /// Close filters (emitting partial windows) and deliver everything
    /// still buffered; then close the session.
    pub fn finish(mut self) -> Result<FinishedReporter, ServerError> {
        for frame in self.client.flush() {
            self.deliver(frame)?;
        }
        if let Some(session) = self.session.take() {
            session.close();
        }
        Ok(FinishedReporter {
            counters: self.client.counters(),
            sent_frames: self.sent_frames,
            server_overloads: self.server_overloads,
        })
    }
}

pub struct FinishedReporter {
    pub counters: Vec<obsmeter_core::client::StreamCounters>,
    pub sent_frames: Vec<(Micros, usize)>,
    pub server_overloads: u64,
}

impl FinishedReporter {
    pub fn counter(&self, stream: &str) -> Option<&obsmeter_core::client::StreamCounters> {
        self.counters.iter().find(|c| c.name == stream)
    }
}

/// Interval statistics the probe receiver computes: transferred bytes and
/// throughput summed per interval, losses from the packet-id progression,
/// jitter as the latest smoothed value at interval close. Packets are
/// assigned to intervals by receive timestamp; the grid anchors at the
/// first delivery.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReceiverStats {
    pub t0: Micros,
    pub t1: Micros,
    pub transferred: u64,
    /// Bytes per second over the interval.
    pub throughput: f64,
    pub lost: u64,
    pub sent: u64,
    pub jitter: f64,
}

#[derive(Debug)]
pub struct ReceiverState {
    interval: Micros,
    anchor: Option<Micros>,
    window_index: u64,
    transferred: u64,
    received: u64,
    max_id_prev: i64,
    max_id: i64,
    prev_transit: Option<i64>,
    jitter: f64,
    pub stats: Vec<ReceiverStats>,
}

impl ReceiverState {
    pub fn new(interval: Micros) -> ReceiverState {
        ReceiverState {
            interval,
            anchor: None,
            window_index: 0,
            transferred: 0,
            received: 0,
            max_id_prev: -1,
            max_id: -1,
            prev_transit: None,
            jitter: 0.0,
            stats: Vec::new(),
        }
    }

    fn window_end(&self) -> Micros {
        let anchor = self.anchor.expect("anchored");
        Micros(anchor.0 + (self.window_index as i64 + 1) * self.interval.0)
    }

    /// Feed one delivered packet (in receive order). Returns the interval
    /// row when this packet closes one.
    pub fn on_packet(&mut self, record: &TraceRecord) -> Option<ReceiverStats> {
        let t_rcv = record.t_rcv.expect("delivered packet");
        if self.anchor.is_none() {
            self.anchor = Some(t_rcv);
        }
        let mut closed = None;
        if t_rcv >= self.window_end() && self.received > 0 {
            closed = Some(self.close_window());
            // skip empty windows
            let anchor = self.anchor.unwrap();
            while t_rcv >= self.window_end() {
                self.window_index = ((t_rcv - anchor).0 / self.interval.0) as u64;
                let _ = anchor;
                break;
            }
        }
        self.transferred += record.size as u64;
        self.received += 1;
        self.max_id = self.max_id.max(record.packet_id as i64);
        let transit = t_rcv.0 - record.t_snd.0;
        if let Some(prev) = self.prev_transit {
            let delta = (transit - prev).abs() as f64 / 1e6;
            self.jitter += (delta - self.jitter) / 16.0;
        }
        self.prev_transit = Some(transit);
        closed
    }

    fn close_window(&mut self) -> ReceiverStats {
        let t1 = self.window_end();
        let t0 = t1 - self.interval;
        let sent = (self.max_id - self.max_id_prev) as u64;
        let stats = ReceiverStats {
            t0,
            t1,
            transferred: self.transferred,
            throughput: self.transferred as f64 / self.interval.as_secs_f64(),
            lost: sent.saturating_sub(self.received),
            sent,
            jitter: self.jitter,
        };
        self.stats.push(stats);
        self.max_id_prev = self.max_id;
        self.transferred = 0;
        self.received = 0;
        self.window_index += 1;
        stats
    }

    /// Close the trailing partial interval, if it holds anything.
    pub fn finish(&mut self) -> Option<ReceiverStats> {
        if self.received > 0 {
            Some(self.close_window())
        } else {
            None
        }
    }
}

/// Render interval statistics in the vanilla CSV layout:
/// `t0,t1,transferred,throughput,lost,sent,jitter`.
pub fn stats_to_csv(stats: &[ReceiverStats]) -> String {
    let mut out = String::new();
    for s in stats {
        out.push_str(&format!(
            "{},{},{},{:.6},{},{},{:.9}\n",
            s.t0.to_wire(),
            s.t1.to_wire(),
            s.transferred,
            s.throughput,
            s.lost,
            s.sent,
            s.jitter
        ));
    }
    out
}

/// Endpoint-tag map helper for reporter configs built from RunConfig files.
pub fn single_destination(streams: &[&str], tag: &str) -> BTreeMap<String, Vec<String>> {
    streams
        .iter()
        .map(|s| (s.to_string(), vec![tag.to_string()]))
        .collect()
}
