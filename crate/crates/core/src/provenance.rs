//! Authoring sessions: append-only event log with full MV snapshots, a
//! linear history that can be restored, and consent-gated persistence.
//!
//! Log file `{session_id}.mvlog.jsonl`: the first line is a [`LogHeader`],
//! every further line one [`ProvenanceEvent`].

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::chartspec::{emit_vegalite, ChartSpec, TableSchema};
use crate::error::{Error, Result};
use crate::featurize::TableFeatures;
use crate::ingest::TableSummary;
use crate::mvrank::{LayoutCell, MvChart, MvState, MAX_MV_CHARTS};

pub const LOG_SUFFIX: &str = ".mvlog.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    UploadTable,
    AddChart,
    RemoveChart,
    EditEncoding,
    ChangeType,
    MoveChart,
    ResizeChart,
    LockChart,
    UnlockChart,
    RecommendMvRequest,
    ChartIdeasClick,
    CrossFilter,
    RestoreVersion,
    SaveSession,
}

/// A state change of the current MV. Mutating events store their edit in
/// the payload under `"edit"`, so a log can be replayed from scratch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum MvEdit {
    /// Inserts at `position`, or appends when absent.
    Add {
        chart: MvChart,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        position: Option<usize>,
    },
    Remove {
        position: usize,
    },
    SetSpec {
        position: usize,
        spec: ChartSpec,
    },
    /// Spec, layout and lock at once.
    SetChart {
        position: usize,
        chart: MvChart,
    },
    SetLayout {
        position: usize,
        layout: LayoutCell,
    },
    SetLocked {
        position: usize,
        locked: bool,
    },
    Replace {
        mv: MvState,
    },
}

fn check_position(position: usize, len: usize) -> Result<()> {
    if position >= len {
        return Err(Error::Position { position, len });
    }
    Ok(())
}

impl MvEdit {
    pub fn apply(&self, mv: &mut MvState) -> Result<()> {
        match self {
            MvEdit::Add { chart, position } => {
                if mv.len() >= MAX_MV_CHARTS {
                    return Err(Error::TooManyCharts(mv.len() + 1));
                }
                let at = position.unwrap_or(mv.len());
                if at > mv.len() {
                    return Err(Error::Position {
                        position: at,
                        len: mv.len(),
                    });
                }
                mv.charts.insert(at, chart.clone());
            }
            MvEdit::Remove { position } => {
                check_position(*position, mv.len())?;
                mv.charts.remove(*position);
            }
            MvEdit::SetSpec { position, spec } => {
                check_position(*position, mv.len())?;
                mv.charts[*position].spec = spec.clone();
            }
            MvEdit::SetChart { position, chart } => {
                check_position(*position, mv.len())?;
                mv.charts[*position] = chart.clone();
            }
            MvEdit::SetLayout { position, layout } => {
                check_position(*position, mv.len())?;
                mv.charts[*position].layout = *layout;
            }
            MvEdit::SetLocked { position, locked } => {
                check_position(*position, mv.len())?;
                mv.charts[*position].locked = *locked;
            }
            MvEdit::Replace { mv: next } => {
                if next.len() > MAX_MV_CHARTS {
                    return Err(Error::TooManyCharts(next.len()));
                }
                *mv = next.clone();
            }
        }
        Ok(())
    }
}

/// The MV after an event, with the Vega-Lite text of every chart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MvSnapshot {
    pub mv: MvState,
    pub vegalite: Vec<String>,
}

impl MvSnapshot {
    pub fn capture(mv: &MvState, schema: &TableSchema) -> Self {
        MvSnapshot {
            mv: mv.clone(),
            vegalite: mv.charts.iter().map(|c| emit_vegalite(&c.spec, schema)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceEvent {
    /// Milliseconds since the Unix epoch.
    pub timestamp: i64,
    pub session_id: String,
    pub seq: u64,
    pub kind: EventKind,
    pub payload: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mv_snapshot: Option<MvSnapshot>,
}

impl ProvenanceEvent {
    pub fn edit(&self) -> Result<Option<MvEdit>> {
        match self.payload.get("edit") {
            None => Ok(None),
            Some(v) => Ok(Some(serde_json::from_value(v.clone())?)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub session_id: String,
    pub consent: bool,
    pub table: TableSummary,
    pub features: TableFeatures,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProvenanceLog {
    pub header: LogHeader,
    pub events: Vec<ProvenanceEvent>,
}

impl ProvenanceLog {
    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&self.header).expect("header serializes");
        out.push('\n');
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("event serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: LogHeader = serde_json::from_str(lines.next().ok_or(Error::EmptyInput("empty log".into()))?)?;
        let events = lines
            .map(serde_json::from_str)
            .collect::<std::result::Result<Vec<ProvenanceEvent>, _>>()?;
        Ok(ProvenanceLog { header, events })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_jsonl(&std::fs::read_to_string(path)?)
    }

    pub fn file_name(session_id: &str) -> String {
        format!("{session_id}{LOG_SUFFIX}")
    }

    /// Re-applies every edit starting from an empty MV and returns the
    /// state after each snapshot-bearing event, by seq.
    pub fn replay(&self) -> Result<Vec<(u64, MvSnapshot)>> {
        let schema = TableSchema::from(&self.header.table);
        let mut mv = MvState::default();
        let mut out = Vec::new();
        for e in &self.events {
            if let Some(edit) = e.edit()? {
                edit.apply(&mut mv)?;
            }
            if e.mv_snapshot.is_some() {
                out.push((e.seq, MvSnapshot::capture(&mv, &schema)));
            }
        }
        Ok(out)
    }
}

/// Reads every `*.mvlog.jsonl` in a directory, sorted by file name.
pub fn read_log_dir(dir: &Path) -> Result<Vec<ProvenanceLog>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with(LOG_SUFFIX)))
        .collect();
    paths.sort();
    paths.iter().map(|p| ProvenanceLog::read(p)).collect()
}

pub trait Clock: Send + Sync {
    fn now_ms(&self) -> i64;
}

pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> i64 {
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_millis() as i64)
    }
}

/// Deterministic clock: `start`, `start + 1`, … on successive reads.
pub struct LogicalClock {
    next: AtomicI64,
}

impl LogicalClock {
    pub fn new(start: i64) -> Self {
        LogicalClock {
            next: AtomicI64::new(start),
        }
    }
}

impl Clock for LogicalClock {
    fn now_ms(&self) -> i64 {
        self.next.fetch_add(1, Ordering::SeqCst)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub seq: u64,
    pub kind: EventKind,
    pub timestamp: i64,
    pub chart_count: usize,
}

/// One authoring session and its in-memory log.
pub struct Session {
    log: ProvenanceLog,
    current: MvState,
    schema: TableSchema,
    clock: Arc<dyn Clock>,
    closed: bool,
}

impl Session {
    /// Opens a session and records the upload.
    pub fn open(session_id: impl Into<String>, table: TableSummary, features: TableFeatures, clock: Arc<dyn Clock>) -> Self {
        let session_id = session_id.into();
        let schema = TableSchema::from(&table);
        let payload = json!({"table_id": table.table_id, "name": table.name, "columns": table.columns.len()});
        let mut session = Session {
            log: ProvenanceLog {
                header: LogHeader {
                    session_id,
                    consent: false,
                    table,
                    features,
                },
                events: Vec::new(),
            },
            current: MvState::default(),
            schema,
            clock,
            closed: false,
        };
        session
            .record(EventKind::UploadTable, None, payload)
            .expect("a new session is open");
        session
    }

    pub fn id(&self) -> &str {
        &self.log.header.session_id
    }

    pub fn current(&self) -> &MvState {
        &self.current
    }

    pub fn schema(&self) -> &TableSchema {
        &self.schema
    }

    pub fn features(&self) -> &TableFeatures {
        &self.log.header.features
    }

    pub fn log(&self) -> &ProvenanceLog {
        &self.log
    }

    pub fn consent(&self) -> bool {
        self.log.header.consent
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn close(&mut self) {
        self.closed = true;
    }

    /// Appends an event. An edit is applied first; if it fails nothing is
    /// recorded. Events carrying an edit also carry the resulting snapshot.
    pub fn record(&mut self, kind: EventKind, edit: Option<MvEdit>, payload: Value) -> Result<&ProvenanceEvent> {
        if self.closed {
            return Err(Error::SessionClosed);
        }
        let mut payload = match payload {
            Value::Object(map) => map,
            Value::Null => serde_json::Map::new(),
            other => {
                let mut map = serde_json::Map::new();
                map.insert("value".into(), other);
                map
            }
        };
        let snapshot = match &edit {
            Some(edit) => {
                let mut next = self.current.clone();
                edit.apply(&mut next)?;
                payload.insert("edit".into(), serde_json::to_value(edit)?);
                self.current = next;
                Some(MvSnapshot::capture(&self.current, &self.schema))
            }
            None => None,
        };
        let seq = self.log.events.last().map_or(1, |e| e.seq + 1);
        self.log.events.push(ProvenanceEvent {
            timestamp: self.clock.now_ms(),
            session_id: self.log.header.session_id.clone(),
            seq,
            kind,
            payload: Value::Object(payload),
            mv_snapshot: snapshot,
        });
        Ok(self.log.events.last().expect("just pushed"))
    }

    /// Makes a recorded snapshot current again; the restore is itself an
    /// event, so history stays linear.
    pub fn restore(&mut self, seq: u64) -> Result<MvState> {
        let snapshot = self
            .log
            .events
            .iter()
            .find(|e| e.seq == seq)
            .and_then(|e| e.mv_snapshot.as_ref())
            .ok_or(Error::UnknownVersion(seq))?
            .mv
            .clone();
        self.record(
            EventKind::RestoreVersion,
            Some(MvEdit::Replace { mv: snapshot }),
            json!({"restored_seq": seq}),
        )?;
        Ok(self.current.clone())
    }

    /// Snapshot-bearing events in order.
    pub fn history(&self) -> Vec<HistoryEntry> {
        self.log
            .events
            .iter()
            .filter_map(|e| {
                e.mv_snapshot.as_ref().map(|s| HistoryEntry {
                    seq: e.seq,
                    kind: e.kind,
                    timestamp: e.timestamp,
                    chart_count: s.mv.len(),
                })
            })
            .collect()
    }

    /// Records the save and its consent choice, then flushes.
    pub fn save(&mut self, consent: bool, dir: &Path) -> Result<Option<PathBuf>> {
        self.record(EventKind::SaveSession, None, json!({"consent": consent}))?;
        self.log.header.consent = consent;
        self.flush(dir)
    }

    /// Writes the log when the user consented; otherwise writes nothing.
    pub fn flush(&self, dir: &Path) -> Result<Option<PathBuf>> {
        if !self.consent() {
            return Ok(None);
        }
        std::fs::create_dir_all(dir)?;
        let path = dir.join(ProvenanceLog::file_name(self.id()));
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.log.to_jsonl())?;
        std::fs::rename(&tmp, &path)?;
        Ok(Some(path))
    }

    pub fn export_training_log(&self) -> Result<String> {
        if !self.consent() {
            return Err(Error::ConsentDenied);
        }
        Ok(self.log.to_jsonl())
    }
}
