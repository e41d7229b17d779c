//! In-stream aggregation filters.
//!
//! Filters turn a raw measurement stream into an aggregated one before it is
//! transmitted: sums, means, extremes, first/last and an exponentially
//! smoothed jitter over time- or count-based windows. They are composable:
//! a pipeline is a chain where each stage consumes the previous stage's
//! output stream (or the source MP) and emits its own.
//!
//! Time windows are aligned to the first sample's timestamp truncated to a
//! multiple of the window extent and are closed by the arriving sample that
//! crosses the boundary, never by a wall-clock timer, so a replayed stream
//! always produces identical output. Windows that receive no samples emit
//! nothing. A final flush emits the open window marked partial.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::measure::{MetricType, MetricValue, MpRegistry};
use crate::time::Micros;

/// How a filter window closes: after a fixed time extent or a fixed number
/// of samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowSpec {
    /// Extent must be a positive multiple of 0.1 s.
    ByTime(Micros),
    ByCount(u32),
}

impl WindowSpec {
    pub fn validate(self) -> Result<(), FilterError> {
        match self {
            WindowSpec::ByTime(ext) => {
                if ext.0 <= 0 || ext.0 % 100_000 != 0 {
                    return Err(FilterError::BadWindow);
                }
            }
            WindowSpec::ByCount(k) => {
                if k == 0 {
                    return Err(FilterError::BadWindow);
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FilterKind {
    Sum,
    Mean,
    Min,
    Max,
    First,
    Last,
    Jitter,
}

impl FilterKind {
    pub fn name(self) -> &'static str {
        match self {
            FilterKind::Sum => "sum",
            FilterKind::Mean => "mean",
            FilterKind::Min => "min",
            FilterKind::Max => "max",
            FilterKind::First => "first",
            FilterKind::Last => "last",
            FilterKind::Jitter => "jitter",
        }
    }

    pub fn parse(s: &str) -> Option<FilterKind> {
        match s {
            "sum" => Some(FilterKind::Sum),
            "mean" => Some(FilterKind::Mean),
            "min" => Some(FilterKind::Min),
            "max" => Some(FilterKind::Max),
            "first" => Some(FilterKind::First),
            "last" => Some(FilterKind::Last),
            "jitter" => Some(FilterKind::Jitter),
            _ => None,
        }
    }

    fn requires_numeric(self) -> bool {
        matches!(
            self,
            FilterKind::Sum | FilterKind::Mean | FilterKind::Min | FilterKind::Max
        )
    }
}

/// Declaration of one filter stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilterSpec {
    /// MP name or the output name of an upstream stage.
    pub source: String,
    /// Source field names: one for scalar kinds, the (sent, received)
    /// timestamp pair for jitter.
    pub fields: Vec<String>,
    pub kind: FilterKind,
    pub window: WindowSpec,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FilterError {
    BadWindow,
    NonNumericField { field: String },
    WrongFieldCount { kind: FilterKind, got: usize },
    DanglingSource(String),
    CycleDetected(String),
    DuplicateOutput(String),
    UnknownField { source: String, field: String },
}

impl fmt::Display for FilterError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FilterError::BadWindow => write!(f, "window extent must be positive (time windows in 0.1 s steps)"),
            FilterError::NonNumericField { field } => write!(f, "field '{field}' is not numeric"),
            FilterError::WrongFieldCount { kind, got } => {
                write!(f, "filter '{}' takes {} field(s), got {got}", kind.name(), if *kind == FilterKind::Jitter { 2 } else { 1 })
            }
            FilterError::DanglingSource(s) => write!(f, "filter sources undeclared stream '{s}'"),
            FilterError::CycleDetected(s) => write!(f, "filter chain cycles through '{s}'"),
            FilterError::DuplicateOutput(s) => write!(f, "duplicate filter output name '{s}'"),
            FilterError::UnknownField { source, field } => {
                write!(f, "stream '{source}' has no field '{field}'")
            }
        }
    }
}

impl core::error::Error for FilterError {}

/// One closed window's aggregate.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputSample {
    pub window_start: Micros,
    pub window_end: Micros,
    pub value: MetricValue,
    /// Number of source samples the window absorbed.
    pub count: u64,
    /// True when emitted by the stream-close flush rather than a full window.
    pub partial: bool,
}

impl OutputSample {
    /// Field layout of a filter output stream on the wire.
    pub fn wire_fields(aggregate: MetricType) -> Vec<(String, MetricType)> {
        alloc::vec![
            (String::from("w_start"), MetricType::Float64),
            (String::from("w_end"), MetricType::Float64),
            (String::from("value"), aggregate),
            (String::from("count"), MetricType::Int64),
            (String::from("partial"), MetricType::Int64),
        ]
    }

    pub fn wire_values(&self) -> Vec<MetricValue> {
        alloc::vec![
            MetricValue::Float64(self.window_start.as_secs_f64()),
            MetricValue::Float64(self.window_end.as_secs_f64()),
            self.value.clone(),
            MetricValue::Int64(self.count as i64),
            MetricValue::Int64(self.partial as i64),
        ]
    }
}

/// Neumaier-compensated running sum, so high-rate float windows do not lose
/// integer byte counts.
#[derive(Debug, Clone, Copy, Default)]
struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if libm::fabs(self.sum) >= libm::fabs(v) {
            self.compensation += (self.sum - t) + v;
        } else {
            self.compensation += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

#[derive(Debug, Clone)]
enum Accumulator {
    SumInt(i64),
    SumFloat(CompensatedSum),
    MinInt(i64),
    MaxInt(i64),
    MinFloat(f64),
    MaxFloat(f64),
    First(Option<MetricValue>),
    Last(Option<MetricValue>),
    Jitter {
        /// Previous transit time in microseconds; smoothing needs a pair.
        prev_transit: Option<i64>,
        /// Current smoothed jitter in seconds.
        jitter: f64,
    },
}

impl Accumulator {
    fn new(kind: FilterKind, input: MetricType) -> Result<Accumulator, FilterError> {
        if kind.requires_numeric() && input == MetricType::Text {
            return Err(FilterError::NonNumericField {
                field: String::from("<input>"),
            });
        }
        Ok(match (kind, input) {
            (FilterKind::Sum | FilterKind::Mean, MetricType::Int64) => Accumulator::SumInt(0),
            (FilterKind::Sum | FilterKind::Mean, _) => Accumulator::SumFloat(CompensatedSum::default()),
            (FilterKind::Min, MetricType::Int64) => Accumulator::MinInt(i64::MAX),
            (FilterKind::Min, _) => Accumulator::MinFloat(f64::INFINITY),
            (FilterKind::Max, MetricType::Int64) => Accumulator::MaxInt(i64::MIN),
            (FilterKind::Max, _) => Accumulator::MaxFloat(f64::NEG_INFINITY),
            (FilterKind::First, _) => Accumulator::First(None),
            (FilterKind::Last, _) => Accumulator::Last(None),
            (FilterKind::Jitter, _) => Accumulator::Jitter {
                prev_transit: None,
                jitter: 0.0,
            },
        })
    }

    fn absorb(&mut self, value: &MetricValue) {
        match (self, value) {
            (Accumulator::SumInt(total), MetricValue::Int64(v)) => *total += v,
            (Accumulator::SumFloat(total), v) => total.add(v.as_f64().unwrap_or(0.0)),
            (Accumulator::MinInt(m), MetricValue::Int64(v)) => *m = (*m).min(*v),
            (Accumulator::MaxInt(m), MetricValue::Int64(v)) => *m = (*m).max(*v),
            (Accumulator::MinFloat(m), v) => {
                let v = v.as_f64().unwrap_or(f64::INFINITY);
                if v < *m {
                    *m = v;
                }
            }
            (Accumulator::MaxFloat(m), v) => {
                let v = v.as_f64().unwrap_or(f64::NEG_INFINITY);
                if v > *m {
                    *m = v;
                }
            }
            (Accumulator::First(slot), v) => {
                if slot.is_none() {
                    *slot = Some(v.clone());
                }
            }
            (Accumulator::Last(slot), v) => *slot = Some(v.clone()),
            _ => debug_assert!(false, "value type changed mid-stream"),
        }
    }

    /// Advance the jitter recurrence by one (sent, received) pair. The
    /// per-packet transit time is kept in integer microseconds, so the
    /// smoothed value is bit-for-bit invariant under any constant receiver
    /// clock offset.
    fn absorb_transit(&mut self, sent: Micros, recv: Micros) {
        if let Accumulator::Jitter { prev_transit, jitter } = self {
            let transit = recv.0 - sent.0;
            if let Some(prev) = *prev_transit {
                let delta_secs = Micros((transit - prev).abs()).as_secs_f64();
                *jitter += (delta_secs - *jitter) / 16.0;
            }
            *prev_transit = Some(transit);
        } else {
            debug_assert!(false, "transit pair fed to a non-jitter accumulator");
        }
    }

    /// Aggregate value for the closing window. Jitter reports its latest
    /// value to date and survives across windows; everything else restarts.
    fn emit(&self, kind: FilterKind, count: u64) -> MetricValue {
        match self {
            Accumulator::SumInt(total) => {
                if kind == FilterKind::Mean {
                    MetricValue::Float64(*total as f64 / count as f64)
                } else {
                    MetricValue::Int64(*total)
                }
            }
            Accumulator::SumFloat(total) => {
                if kind == FilterKind::Mean {
                    MetricValue::Float64(total.value() / count as f64)
                } else {
                    MetricValue::Float64(total.value())
                }
            }
            Accumulator::MinInt(m) | Accumulator::MaxInt(m) => MetricValue::Int64(*m),
            Accumulator::MinFloat(m) | Accumulator::MaxFloat(m) => MetricValue::Float64(*m),
            Accumulator::First(v) | Accumulator::Last(v) => {
                v.clone().unwrap_or(MetricValue::Int64(0))
            }
            Accumulator::Jitter { jitter, .. } => MetricValue::Float64(*jitter),
        }
    }

    fn reset(&mut self, kind: FilterKind, input: MetricType) {
        if let Accumulator::Jitter { .. } = self {
            // smoothing state persists across windows
            return;
        }
        *self = Accumulator::new(kind, input).expect("validated at construction");
    }
}

/// Running state of one filter stage.
#[derive(Debug, Clone)]
pub struct FilterState {
    kind: FilterKind,
    window: WindowSpec,
    input_type: MetricType,
    acc: Accumulator,
    window_start: Option<Micros>,
    first_ts: Micros,
    last_ts: Micros,
    count: u64,
}

impl FilterState {
    pub fn new(kind: FilterKind, window: WindowSpec, input_type: MetricType) -> Result<FilterState, FilterError> {
        window.validate()?;
        Ok(FilterState {
            kind,
            window,
            input_type,
            acc: Accumulator::new(kind, input_type)?,
            window_start: None,
            first_ts: Micros::ZERO,
            last_ts: Micros::ZERO,
            count: 0,
        })
    }

    pub fn output_type(&self) -> MetricType {
        match self.kind {
            FilterKind::Mean | FilterKind::Jitter => MetricType::Float64,
            FilterKind::Sum | FilterKind::Min | FilterKind::Max => self.input_type,
            FilterKind::First | FilterKind::Last => self.input_type,
        }
    }

    /// Feed one scalar sample; returns the closed window if this sample
    /// closed one.
    pub fn push(&mut self, ts: Micros, value: &MetricValue) -> Option<OutputSample> {
        let closed = self.roll_window(ts);
        self.acc.absorb(value);
        self.note_sample(ts);
        closed.or_else(|| self.close_on_count())
    }

    /// Feed one (sent, received) timestamp pair into a jitter filter. The
    /// receive time drives the window.
    pub fn push_transit(&mut self, sent: Micros, recv: Micros) -> Option<OutputSample> {
        let closed = self.roll_window(recv);
        self.acc.absorb_transit(sent, recv);
        self.note_sample(recv);
        closed.or_else(|| self.close_on_count())
    }

    /// Emit the open window, if any, marked partial. Called at stream close.
    pub fn flush(&mut self) -> Option<OutputSample> {
        if self.count == 0 {
            return None;
        }
        Some(self.emit_window(true))
    }

    fn note_sample(&mut self, ts: Micros) {
        if self.count == 0 {
            self.first_ts = ts;
            if self.window_start.is_none() {
                if let WindowSpec::ByTime(ext) = self.window {
                    self.window_start = Some(ts.truncate_to(ext));
                }
            }
        }
        self.last_ts = ts;
        self.count += 1;
    }

    fn roll_window(&mut self, ts: Micros) -> Option<OutputSample> {
        if let WindowSpec::ByTime(ext) = self.window {
            if let Some(start) = self.window_start {
                if ts >= start + ext && self.count > 0 {
                    let out = self.emit_window(false);
                    self.window_start = Some(ts.truncate_to(ext));
                    return Some(out);
                }
                if ts >= start + ext {
                    // empty window: slide forward without emitting
                    self.window_start = Some(ts.truncate_to(ext));
                }
            }
        }
        None
    }

    fn close_on_count(&mut self) -> Option<OutputSample> {
        if let WindowSpec::ByCount(k) = self.window {
            if self.count >= k as u64 {
                return Some(self.emit_window(false));
            }
        }
        None
    }

    fn emit_window(&mut self, partial: bool) -> OutputSample {
        let (window_start, window_end) = match self.window {
            WindowSpec::ByTime(ext) => {
                let start = self.window_start.unwrap_or(self.first_ts);
                (start, start + ext)
            }
            WindowSpec::ByCount(_) => (self.first_ts, self.last_ts),
        };
        let out = OutputSample {
            window_start,
            window_end,
            value: self.acc.emit(self.kind, self.count),
            count: self.count,
            partial,
        };
        self.acc.reset(self.kind, self.input_type);
        self.count = 0;
        out
    }
}

/// A validated chain of filter stages. An empty pipeline is the identity:
/// the raw MP stream goes to the wire unchanged.
#[derive(Debug, Clone)]
pub struct Pipeline {
    stages: Vec<Stage>,
}

#[derive(Debug, Clone)]
struct Stage {
    spec: FilterSpec,
    state: FilterState,
    /// Indices of the source fields within the upstream value tuple.
    field_indices: Vec<usize>,
}

/// Field layout a downstream stage sees when sourcing a filter output.
fn output_field_index(field: &str) -> Option<(usize, bool)> {
    // (index into wire_values, is_count)
    match field {
        "value" => Some((2, false)),
        "count" => Some((3, true)),
        _ => None,
    }
}

impl Pipeline {
    /// Validate and build a chain. Each stage's source must name the MP or
    /// an earlier stage's output; referencing a later (or its own) output is
    /// a cycle, anything unknown is dangling.
    pub fn compose(specs: Vec<FilterSpec>, registry: &MpRegistry) -> Result<Pipeline, FilterError> {
        let mut stages: Vec<Stage> = Vec::with_capacity(specs.len());
        let later_outputs: Vec<&str> = specs.iter().map(|s| s.output.as_str()).collect();
        for (pos, spec) in specs.iter().enumerate() {
            if specs[..pos].iter().any(|s| s.output == spec.output)
                || registry.by_name(&spec.output).is_some()
            {
                return Err(FilterError::DuplicateOutput(spec.output.clone()));
            }
            let expected_fields = if spec.kind == FilterKind::Jitter { 2 } else { 1 };
            if spec.fields.len() != expected_fields {
                return Err(FilterError::WrongFieldCount {
                    kind: spec.kind,
                    got: spec.fields.len(),
                });
            }
            // resolve the source
            let mut field_indices = Vec::with_capacity(spec.fields.len());
            let input_type = if let Some(schema) = registry.by_name(&spec.source) {
                let mut ty = MetricType::Int64;
                for field in &spec.fields {
                    let idx = schema
                        .fields
                        .iter()
                        .position(|(n, _)| n == field)
                        .ok_or_else(|| FilterError::UnknownField {
                            source: spec.source.clone(),
                            field: field.clone(),
                        })?;
                    ty = schema.fields[idx].1;
                    if spec.kind == FilterKind::Jitter && ty == MetricType::Text {
                        return Err(FilterError::NonNumericField { field: field.clone() });
                    }
                    field_indices.push(idx);
                }
                ty
            } else if let Some(upstream) = stages.iter().position(|s| s.spec.output == spec.source) {
                let mut ty = MetricType::Int64;
                for field in &spec.fields {
                    let (idx, is_count) =
                        output_field_index(field).ok_or_else(|| FilterError::UnknownField {
                            source: spec.source.clone(),
                            field: field.clone(),
                        })?;
                    ty = if is_count {
                        MetricType::Int64
                    } else {
                        stages[upstream].state.output_type()
                    };
                    field_indices.push(idx);
                }
                ty
            } else if spec.source == spec.output || later_outputs[pos..].contains(&spec.source.as_str()) {
                return Err(FilterError::CycleDetected(spec.source.clone()));
            } else {
                return Err(FilterError::DanglingSource(spec.source.clone()));
            };
            if spec.kind.requires_numeric() && input_type == MetricType::Text {
                return Err(FilterError::NonNumericField {
                    field: spec.fields[0].clone(),
                });
            }
            let state = FilterState::new(spec.kind, spec.window, input_type)?;
            stages.push(Stage {
                spec: spec.clone(),
                state,
                field_indices,
            });
        }
        Ok(Pipeline { stages })
    }

    pub fn identity() -> Pipeline {
        Pipeline { stages: Vec::new() }
    }

    pub fn is_identity(&self) -> bool {
        self.stages.is_empty()
    }

    /// Name of the stream this pipeline produces, if it is a filter chain.
    pub fn output_name(&self) -> Option<&str> {
        self.stages.last().map(|s| s.spec.output.as_str())
    }

    pub fn output_type(&self) -> Option<MetricType> {
        self.stages.last().map(|s| s.state.output_type())
    }

    /// Feed one raw sample through the chain; returns the final stage's
    /// emissions (at most one per push).
    pub fn push(&mut self, ts: Micros, values: &[MetricValue]) -> Option<OutputSample> {
        debug_assert!(!self.is_identity());
        let mut carried: Option<(Micros, Vec<MetricValue>)> = Some((ts, values.to_vec()));
        let mut emitted = None;
        for stage in &mut self.stages {
            let (ts, values) = match carried.take() {
                Some(x) => x,
                None => break,
            };
            let out = if stage.spec.kind == FilterKind::Jitter {
                let sent = values[stage.field_indices[0]]
                    .as_f64()
                    .map(Micros::from_secs_f64)
                    .unwrap_or(Micros::ZERO);
                let recv = values[stage.field_indices[1]]
                    .as_f64()
                    .map(Micros::from_secs_f64)
                    .unwrap_or(Micros::ZERO);
                stage.state.push_transit(sent, recv)
            } else {
                let value = values[stage.field_indices[0]].clone();
                stage.state.push(ts, &value)
            };
            match out {
                Some(sample) => {
                    carried = Some((sample.window_end, sample.wire_values()));
                    emitted = Some(sample);
                }
                None => {
                    emitted = None;
                    carried = None;
                }
            }
        }
        if carried.is_some() {
            emitted
        } else {
            None
        }
    }

    /// Close the stream: flush every stage, cascading partial windows down
    /// the chain. Returns the final stage's emissions in order.
    pub fn flush(&mut self) -> Vec<OutputSample> {
        let n = self.stages.len();
        let mut finals = Vec::new();
        for i in 0..n {
            if let Some(sample) = self.stages[i].state.flush() {
                if i + 1 == n {
                    finals.push(sample);
                } else {
                    // feed the partial window into the rest of the chain
                    let mut carried = Some((sample.window_end, sample.wire_values()));
                    for j in i + 1..n {
                        let (ts, values) = match carried.take() {
                            Some(x) => x,
                            None => break,
                        };
                        let stage = &mut self.stages[j];
                        let out = if stage.spec.kind == FilterKind::Jitter {
                            let sent = values[stage.field_indices[0]]
                                .as_f64()
                                .map(Micros::from_secs_f64)
                                .unwrap_or(Micros::ZERO);
                            let recv = values[stage.field_indices[1]]
                                .as_f64()
                                .map(Micros::from_secs_f64)
                                .unwrap_or(Micros::ZERO);
                            stage.state.push_transit(sent, recv)
                        } else {
                            stage.state.push(ts, &values[stage.field_indices[0]].clone())
                        };
                        match out {
                            Some(s) if j + 1 == n => {
                                finals.push(s);
                                carried = None;
                            }
                            Some(s) => carried = Some((s.window_end, s.wire_values())),
                            None => carried = None,
                        }
                    }
                }
            }
        }
        finals
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::MetricType;
    use alloc::vec;

    fn ms(v: i64) -> Micros {
        Micros::from_millis(v)
    }

    #[test]
    fn sum_by_count_emits_on_third_sample() {
        let mut f = FilterState::new(FilterKind::Sum, WindowSpec::ByCount(3), MetricType::Int64).unwrap();
        assert!(f.push(ms(0), &MetricValue::Int64(10)).is_none());
        assert!(f.push(ms(1), &MetricValue::Int64(20)).is_none());
        let out = f.push(ms(2), &MetricValue::Int64(30)).unwrap();
        assert_eq!(out.value, MetricValue::Int64(60));
        assert_eq!(out.count, 3);
        assert!(!out.partial);
    }

    #[test]
    fn min_max_by_count() {
        let mut lo = FilterState::new(FilterKind::Min, WindowSpec::ByCount(4), MetricType::Int64).unwrap();
        let mut hi = FilterState::new(FilterKind::Max, WindowSpec::ByCount(4), MetricType::Int64).unwrap();
        let vals = [5i64, 1, 9, 3];
        let mut got = (None, None);
        for (i, v) in vals.iter().enumerate() {
            got.0 = lo.push(ms(i as i64), &MetricValue::Int64(*v)).or(got.0);
            got.1 = hi.push(ms(i as i64), &MetricValue::Int64(*v)).or(got.1);
        }
        assert_eq!(got.0.unwrap().value, MetricValue::Int64(1));
        assert_eq!(got.1.unwrap().value, MetricValue::Int64(9));
    }

    #[test]
    fn mean_by_time_window_closes_on_crossing_sample() {
        let mut f = FilterState::new(
            FilterKind::Mean,
            WindowSpec::ByTime(Micros::from_secs(1)),
            MetricType::Int64,
        )
        .unwrap();
        assert!(f.push(ms(200), &MetricValue::Int64(4)).is_none());
        assert!(f.push(ms(700), &MetricValue::Int64(8)).is_none());
        let out = f.push(ms(1100), &MetricValue::Int64(5)).unwrap();
        assert_eq!(out.value, MetricValue::Float64(6.0));
        assert_eq!(out.window_start, Micros::ZERO);
        assert_eq!(out.window_end, Micros::from_secs(1));
        assert_eq!(out.count, 2);
    }

    #[test]
    fn empty_time_windows_emit_nothing() {
        let mut f = FilterState::new(
            FilterKind::Sum,
            WindowSpec::ByTime(Micros::from_secs(1)),
            MetricType::Int64,
        )
        .unwrap();
        assert!(f.push(ms(100), &MetricValue::Int64(1)).is_none());
        // jumps over three empty windows; only the single occupied window emits
        let out = f.push(ms(4500), &MetricValue::Int64(2)).unwrap();
        assert_eq!(out.value, MetricValue::Int64(1));
        assert_eq!(out.window_start, Micros::ZERO);
        let out2 = f.flush().unwrap();
        assert_eq!(out2.value, MetricValue::Int64(2));
        assert_eq!(out2.window_start, Micros::from_secs(4));
        assert!(out2.partial);
    }

    #[test]
    fn jitter_one_step_matches_hand_evaluation() {
        let mut f = FilterState::new(
            FilterKind::Jitter,
            WindowSpec::ByCount(2),
            MetricType::Float64,
        )
        .unwrap();
        // transit times 10 ms then 14 ms: delta 4 ms, J1 = 0 + (4ms - 0)/16
        assert!(f.push_transit(ms(0), ms(10)).is_none());
        let out = f.push_transit(ms(100), ms(114)).unwrap();
        assert_eq!(out.value, MetricValue::Float64(0.00025));
    }

    #[test]
    fn jitter_constant_transit_stays_zero() {
        let mut f = FilterState::new(
            FilterKind::Jitter,
            WindowSpec::ByCount(5),
            MetricType::Float64,
        )
        .unwrap();
        let mut last = None;
        for i in 0..10 {
            last = f.push_transit(ms(i * 10), ms(i * 10 + 3)).or(last);
        }
        assert_eq!(last.unwrap().value, MetricValue::Float64(0.0));
    }

    #[test]
    fn jitter_survives_window_resets() {
        // two by-count(1) windows: second emission continues the recurrence
        let mut f = FilterState::new(
            FilterKind::Jitter,
            WindowSpec::ByCount(1),
            MetricType::Float64,
        )
        .unwrap();
        let a = f.push_transit(ms(0), ms(10)).unwrap();
        assert_eq!(a.value, MetricValue::Float64(0.0));
        let b = f.push_transit(ms(100), ms(114)).unwrap();
        assert_eq!(b.value, MetricValue::Float64(0.00025));
    }

    fn packets_registry() -> MpRegistry {
        let mut reg = MpRegistry::new();
        reg.define_mp(
            "ip",
            &[("pkt_id", MetricType::Int64), ("len", MetricType::Int64)],
        )
        .unwrap();
        reg
    }

    #[test]
    fn compose_validates_sources() {
        let reg = packets_registry();
        let spec = FilterSpec {
            source: "foo".into(),
            fields: vec!["len".into()],
            kind: FilterKind::Sum,
            window: WindowSpec::ByCount(10),
            output: "bytes".into(),
        };
        assert_eq!(
            Pipeline::compose(vec![spec], &reg).unwrap_err(),
            FilterError::DanglingSource("foo".into())
        );
    }

    #[test]
    fn compose_detects_cycles() {
        let reg = packets_registry();
        let spec = FilterSpec {
            source: "bytes".into(),
            fields: vec!["value".into()],
            kind: FilterKind::Sum,
            window: WindowSpec::ByCount(10),
            output: "bytes".into(),
        };
        assert_eq!(
            Pipeline::compose(vec![spec], &reg).unwrap_err(),
            FilterError::CycleDetected("bytes".into())
        );
    }

    #[test]
    fn chained_stages_feed_downstream() {
        let reg = packets_registry();
        let specs = vec![
            FilterSpec {
                source: "ip".into(),
                fields: vec!["len".into()],
                kind: FilterKind::Sum,
                window: WindowSpec::ByCount(2),
                output: "pair_bytes".into(),
            },
            FilterSpec {
                source: "pair_bytes".into(),
                fields: vec!["value".into()],
                kind: FilterKind::Max,
                window: WindowSpec::ByCount(2),
                output: "peak".into(),
            },
        ];
        let mut p = Pipeline::compose(specs, &reg).unwrap();
        let mut out = None;
        for (i, len) in [10i64, 20, 5, 40].iter().enumerate() {
            let got = p.push(
                ms(i as i64),
                &[MetricValue::Int64(i as i64), MetricValue::Int64(*len)],
            );
            out = got.or(out);
        }
        // pairs sum to 30 and 45; max of the two is 45
        assert_eq!(out.unwrap().value, MetricValue::Int64(45));
    }

    #[test]
    fn by_time_extent_must_be_tenth_multiple() {
        assert!(WindowSpec::ByTime(Micros(150_000)).validate().is_err());
        assert!(WindowSpec::ByTime(Micros(500_000)).validate().is_ok());
        assert!(WindowSpec::ByCount(0).validate().is_err());
    }

    #[test]
    fn numeric_kind_rejects_text() {
        assert!(FilterState::new(FilterKind::Sum, WindowSpec::ByCount(1), MetricType::Text).is_err());
        assert!(FilterState::new(FilterKind::Last, WindowSpec::ByCount(1), MetricType::Text).is_ok());
    }
}
