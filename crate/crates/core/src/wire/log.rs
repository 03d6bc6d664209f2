//! Append-only session event log, one JSON object per line.
//!
//! The first line is a header record carrying `schema_version` plus session
//! metadata; every following line is an [`EventRecord`].

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use std::io::Write;

use crate::hand::GraspType;
use crate::Error;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    TrialStart,
    GazeTrigger,
    SwitchAccepted,
    SwitchRejected,
    EmgCommand,
    Contact,
    Held,
    Released,
    Placed,
    TrialEnd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub t_ms: f64,
    pub kind: EventKind,
    #[serde(flatten)]
    pub attrs: Map<String, Value>,
}

impl EventRecord {
    pub fn new(t_ms: f64, kind: EventKind) -> Self {
        Self {
            t_ms,
            kind,
            attrs: Map::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.attrs.insert(key.to_owned(), value.into());
        self
    }

    pub fn get_f64(&self, key: &str) -> Option<f64> {
        self.attrs.get(key).and_then(Value::as_f64)
    }

    pub fn get_u64(&self, key: &str) -> Option<u64> {
        self.attrs.get(key).and_then(Value::as_u64)
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.attrs.get(key).and_then(Value::as_str)
    }

    pub fn get_bool(&self, key: &str) -> Option<bool> {
        self.attrs.get(key).and_then(Value::as_bool)
    }

    pub fn get_grasp(&self, key: &str) -> Option<GraspType> {
        self.attrs
            .get(key)
            .and_then(|v| serde_json::from_value(v.clone()).ok())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub schema_version: u32,
    #[serde(flatten)]
    pub meta: Map<String, Value>,
}

impl Default for LogHeader {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            meta: Map::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SessionLog {
    pub header: LogHeader,
    pub records: Vec<EventRecord>,
}

impl SessionLog {
    pub fn new(header: LogHeader) -> Self {
        Self {
            header,
            records: Vec::new(),
        }
    }

    pub fn append(&mut self, record: EventRecord) {
        self.records.push(record);
    }

    /// Writes the header line followed by every record.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), Error> {
        serde_json::to_writer(&mut w, &self.header)?;
        w.write_all(b"\n")?;
        for r in &self.records {
            append_record(&mut w, r)?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    /// Parses and validates a log. Errors carry the 1-based line number.
    pub fn from_jsonl(text: &str) -> Result<Self, Error> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l))
            .filter(|(_, l)| !l.trim().is_empty());
        let Some((hline, htext)) = lines.next() else {
            return Ok(SessionLog::default());
        };
        let header: LogHeader = serde_json::from_str(htext).map_err(|e| Error::Log {
            line: hline,
            message: format!("bad header: {e}"),
        })?;
        if header.schema_version != SCHEMA_VERSION {
            return Err(Error::Log {
                line: hline,
                message: format!("unsupported schema_version {}", header.schema_version),
            });
        }
        let mut log = SessionLog::new(header);
        let mut checker = Nesting::default();
        for (line, text) in lines {
            let rec: EventRecord = serde_json::from_str(text).map_err(|e| Error::Log {
                line,
                message: e.to_string(),
            })?;
            checker
                .push(&rec)
                .map_err(|message| Error::Log { line, message })?;
            log.records.push(rec);
        }
        if checker.open {
            return Err(Error::Log {
                line: text.lines().count(),
                message: "log ends inside a trial".into(),
            });
        }
        Ok(log)
    }

    /// Checks timestamp order and trial nesting.
    pub fn validate(&self) -> Result<(), Error> {
        let mut checker = Nesting::default();
        for (i, rec) in self.records.iter().enumerate() {
            checker.push(rec).map_err(|message| Error::Log {
                line: i + 2,
                message,
            })?;
        }
        if checker.open {
            return Err(Error::InvalidLog("log ends inside a trial".into()));
        }
        Ok(())
    }

    /// Records grouped by trial, each slice running TrialStart..=TrialEnd.
    pub fn trials(&self) -> Vec<&[EventRecord]> {
        let mut out = Vec::new();
        let mut start = None;
        for (i, r) in self.records.iter().enumerate() {
            match r.kind {
                EventKind::TrialStart => start = Some(i),
                EventKind::TrialEnd => {
                    if let Some(s) = start.take() {
                        out.push(&self.records[s..=i]);
                    }
                }
                _ => {}
            }
        }
        out
    }
}

/// Appends one record as a single line.
pub fn append_record<W: Write>(mut w: W, rec: &EventRecord) -> Result<(), Error> {
    serde_json::to_writer(&mut w, rec)?;
    w.write_all(b"\n")?;
    Ok(())
}

#[derive(Default)]
struct Nesting {
    last_t: Option<f64>,
    open: bool,
}

impl Nesting {
    fn push(&mut self, rec: &EventRecord) -> Result<(), String> {
        if !rec.t_ms.is_finite() {
            return Err("non-finite timestamp".into());
        }
        if let Some(last) = self.last_t {
            if rec.t_ms < last {
                return Err(format!("timestamp {} goes back before {}", rec.t_ms, last));
            }
        }
        self.last_t = Some(rec.t_ms);
        match rec.kind {
            EventKind::TrialStart if self.open => Err("TrialStart inside an open trial".into()),
            EventKind::TrialStart => {
                self.open = true;
                Ok(())
            }
            EventKind::TrialEnd if !self.open => Err("TrialEnd without TrialStart".into()),
            EventKind::TrialEnd => {
                self.open = false;
                Ok(())
            }
            _ => Ok(()),
        }
    }
}
