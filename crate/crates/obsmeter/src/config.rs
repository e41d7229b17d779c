//! Run configuration: a plain key-value text file selecting servers, MPs,
//! buffer sizing and filters for one instrumented application.
//!
//! ```text
//! # measurement run setup
//! server 127.0.0.1:9000 main
//! buffer 4096
//! enable transfer
//! enable ip -> main
//! filter ip_bytes = sum(ip.len) every 0.5s
//! filter j = jitter(packets.t_snd, packets.t_rcv) every 1s
//! ```
//!
//! The `OBSMETER_CONFIG` environment variable names the file to load.

use std::collections::BTreeMap;

use obsmeter_core::client::{ClientSetup, DEFAULT_BUFFER_CAPACITY};
use obsmeter_core::filter::{FilterKind, FilterSpec, WindowSpec};
use obsmeter_core::time::Micros;

pub const CONFIG_ENV: &str = "OBSMETER_CONFIG";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServerLine {
    pub addr: String,
    pub tag: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnableLine {
    pub mp: String,
    /// Endpoint tag the stream routes to; `None` means every server.
    pub endpoint: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    pub servers: Vec<ServerLine>,
    pub enables: Vec<EnableLine>,
    pub filters: Vec<FilterSpec>,
    pub buffer_capacity: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{CONFIG_ENV} is not set")]
    EnvMissing,
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
}

fn err(line: usize, message: impl Into<String>) -> ConfigError {
    ConfigError::Parse {
        line,
        message: message.into(),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        let mut config = RunConfig {
            buffer_capacity: DEFAULT_BUFFER_CAPACITY,
            ..RunConfig::default()
        };
        for (no, raw) in text.lines().enumerate() {
            let no = no + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (keyword, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
            let rest = rest.trim();
            match keyword {
                "server" => {
                    let mut parts = rest.split_whitespace();
                    let addr = parts.next().ok_or_else(|| err(no, "server needs host:port"))?;
                    let tag = parts.next().unwrap_or(addr);
                    if parts.next().is_some() {
                        return Err(err(no, "trailing tokens after server line"));
                    }
                    config.servers.push(ServerLine {
                        addr: addr.to_string(),
                        tag: tag.to_string(),
                    });
                }
                "enable" => {
                    let (mp, endpoint) = match rest.split_once("->") {
                        Some((mp, tag)) => (mp.trim(), Some(tag.trim().to_string())),
                        None => (rest, None),
                    };
                    if mp.is_empty() {
                        return Err(err(no, "enable needs an MP name"));
                    }
                    config.enables.push(EnableLine {
                        mp: mp.to_string(),
                        endpoint,
                    });
                }
                "buffer" => {
                    config.buffer_capacity = rest
                        .parse::<usize>()
                        .ok()
                        .filter(|n| *n >= 1)
                        .ok_or_else(|| err(no, "buffer needs a positive sample count"))?;
                }
                "filter" => {
                    config.filters.push(parse_filter(no, rest)?);
                }
                other => return Err(err(no, format!("unknown keyword '{other}'"))),
            }
        }
        Ok(config)
    }

    pub fn load(path: &std::path::Path) -> Result<RunConfig, ConfigError> {
        RunConfig::parse(&std::fs::read_to_string(path)?)
    }

    pub fn from_env() -> Result<RunConfig, ConfigError> {
        let path = std::env::var(CONFIG_ENV).map_err(|_| ConfigError::EnvMissing)?;
        RunConfig::load(std::path::Path::new(&path))
    }

    /// The stream selection this config asks of the client library.
    pub fn client_setup(&self) -> ClientSetup {
        ClientSetup {
            enabled: self.enables.iter().map(|e| e.mp.clone()).collect(),
            filters: self.filters.clone(),
            buffer_capacity: self.buffer_capacity,
        }
    }

    /// Stream name to endpoint-tag routing; streams without an explicit
    /// destination go to every server.
    pub fn stream_destinations(&self) -> BTreeMap<String, Vec<String>> {
        let all: Vec<String> = self.servers.iter().map(|s| s.tag.clone()).collect();
        let mut map = BTreeMap::new();
        for e in &self.enables {
            let dests = match &e.endpoint {
                Some(tag) => vec![tag.clone()],
                None => all.clone(),
            };
            map.insert(e.mp.clone(), dests);
        }
        for f in &self.filters {
            map.insert(f.output.clone(), all.clone());
        }
        map
    }
}

/// `<output> = <kind>(<source>.<field>[, <source>.<field>]) every <N>s|<N>samples`
fn parse_filter(no: usize, rest: &str) -> Result<FilterSpec, ConfigError> {
    let (output, expr) = rest
        .split_once('=')
        .ok_or_else(|| err(no, "filter needs '<output> = <kind>(...) every <window>'"))?;
    let output = output.trim();
    let expr = expr.trim();
    let (call, window_part) = expr
        .split_once(" every ")
        .ok_or_else(|| err(no, "filter needs an 'every' window clause"))?;

    let open = call.find('(').ok_or_else(|| err(no, "missing '(' in filter expression"))?;
    if !call.ends_with(')') {
        return Err(err(no, "missing ')' in filter expression"));
    }
    let kind = FilterKind::parse(call[..open].trim())
        .ok_or_else(|| err(no, format!("unknown filter kind '{}'", &call[..open])))?;
    let args = &call[open + 1..call.len() - 1];

    let mut source: Option<String> = None;
    let mut fields = Vec::new();
    for arg in args.split(',') {
        let arg = arg.trim();
        let (src, field) = arg
            .split_once('.')
            .ok_or_else(|| err(no, format!("filter argument '{arg}' is not <source>.<field>")))?;
        match &source {
            None => source = Some(src.to_string()),
            Some(existing) if existing == src => {}
            Some(_) => return Err(err(no, "filter arguments must share one source")),
        }
        fields.push(field.to_string());
    }
    let source = source.ok_or_else(|| err(no, "filter needs at least one argument"))?;

    let window_part = window_part.trim();
    let window = if let Some(samples) = window_part.strip_suffix("samples") {
        let k: u32 = samples
            .parse()
            .map_err(|_| err(no, "bad sample-count window"))?;
        WindowSpec::ByCount(k)
    } else if let Some(secs) = window_part.strip_suffix('s') {
        let s: f64 = secs.parse().map_err(|_| err(no, "bad time window"))?;
        WindowSpec::ByTime(Micros::from_secs_f64(s))
    } else {
        return Err(err(no, "window must end in 's' or 'samples'"));
    };
    window
        .validate()
        .map_err(|e| err(no, format!("bad window: {e}")))?;

    Ok(FilterSpec {
        source,
        fields,
        kind,
        window,
        output: output.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_full_config() {
        let text = "\
# comment
server 127.0.0.1:9000 main
server 127.0.0.1:9001   # tag defaults to the address
buffer 128
enable transfer
enable ip -> main
filter ip_bytes = sum(ip.len) every 0.5s
filter j = jitter(packets.t_snd, packets.t_rcv) every 1s
filter smooth = mean(ip_bytes.value) every 10samples
";
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.servers.len(), 2);
        assert_eq!(cfg.servers[0].tag, "main");
        assert_eq!(cfg.servers[1].tag, "127.0.0.1:9001");
        assert_eq!(cfg.buffer_capacity, 128);
        assert_eq!(cfg.enables[1].endpoint.as_deref(), Some("main"));
        assert_eq!(cfg.filters.len(), 3);
        assert_eq!(cfg.filters[0].kind, FilterKind::Sum);
        assert_eq!(cfg.filters[0].window, WindowSpec::ByTime(Micros(500_000)));
        assert_eq!(cfg.filters[1].fields.len(), 2);
        assert_eq!(cfg.filters[2].window, WindowSpec::ByCount(10));

        let dests = cfg.stream_destinations();
        assert_eq!(dests["ip"], vec!["main".to_string()]);
        assert_eq!(dests["transfer"].len(), 2);
    }

    #[test]
    fn rejects_unknown_keyword() {
        assert!(matches!(
            RunConfig::parse("serve 1.2.3.4:1"),
            Err(ConfigError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn rejects_bad_window() {
        assert!(RunConfig::parse("filter x = sum(a.b) every 0.05s").is_err());
        assert!(RunConfig::parse("filter x = sum(a.b) every 5m").is_err());
        assert!(RunConfig::parse("filter x = sum(a.b) every 0samples").is_err());
    }

    #[test]
    fn client_setup_mirrors_config() {
        let cfg = RunConfig::parse("enable a\nenable b\nbuffer 7").unwrap();
        let setup = cfg.client_setup();
        assert_eq!(setup.enabled, vec!["a".to_string(), "b".to_string()]);
        assert_eq!(setup.buffer_capacity, 7);
    }
}
