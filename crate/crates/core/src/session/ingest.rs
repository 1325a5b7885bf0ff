//! Device sample ingestion from CSV chunks, with optional append-only
//! recording files.

use std::fs::OpenOptions;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::sigproc::io::{fnirs_header, read_table, StreamIoError, EEG_HEADER};
use crate::sigproc::{EegRecording, FnirsRecording, EEG_RATE, FNIRS_CHANNELS, FNIRS_RATE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamKind {
    Eeg,
    Fnirs,
}

impl StreamKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StreamKind::Eeg => "eeg",
            StreamKind::Fnirs => "fnirs",
        }
    }

    pub fn header(self) -> Vec<String> {
        match self {
            StreamKind::Eeg => EEG_HEADER.iter().map(|s| s.to_string()).collect(),
            StreamKind::Fnirs => fnirs_header(),
        }
    }

    pub fn nominal_rate(self) -> f64 {
        match self {
            StreamKind::Eeg => EEG_RATE,
            StreamKind::Fnirs => FNIRS_RATE,
        }
    }
}

impl std::str::FromStr for StreamKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "eeg" => Ok(StreamKind::Eeg),
            "fnirs" => Ok(StreamKind::Fnirs),
            other => Err(format!("unknown stream {other:?}")),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("schema: {0}")]
    Schema(String),
    #[error("row {row}: timestamp {t_ms} ms does not follow {prev_ms} ms")]
    NonMonotone { row: usize, prev_ms: f64, t_ms: f64 },
    #[error("row {row}: {msg}")]
    Value { row: usize, msg: String },
    #[error("recording file: {0}")]
    Io(#[from] std::io::Error),
}

impl From<StreamIoError> for IngestError {
    fn from(e: StreamIoError) -> Self {
        match e {
            StreamIoError::Io(e) => IngestError::Io(e),
            other => IngestError::Schema(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discontinuity {
    pub stream: StreamKind,
    pub after_ms: f64,
    pub next_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestAck {
    pub stream: StreamKind,
    pub accepted: usize,
    pub total: usize,
    pub discontinuities: usize,
}

/// Column-major buffers for both streams.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SampleStore {
    eeg: Vec<Vec<f64>>,
    fnirs: Vec<Vec<f64>>,
    discontinuities: Vec<Discontinuity>,
    sink: Option<PathBuf>,
}

impl SampleStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Accepted chunks are also appended to `<dir>/eeg.csv` and
    /// `<dir>/fnirs.csv`.
    pub fn with_sink(dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(Self {
            sink: Some(dir),
            ..Self::default()
        })
    }

    /// Rebuilds a store from the recording files left in `dir`, keeping the
    /// sink so later chunks append to the same files.
    pub fn recover(dir: impl Into<PathBuf>) -> Result<Self, IngestError> {
        let dir = dir.into();
        let mut store = Self::new();
        for stream in [StreamKind::Eeg, StreamKind::Fnirs] {
            let path = dir.join(format!("{}.csv", stream.as_str()));
            if path.exists() {
                store.ingest_rows(
                    stream,
                    read_table(std::fs::File::open(&path)?, &stream.header())?,
                    false,
                )?;
            }
        }
        store.sink = Some(dir);
        Ok(store)
    }

    fn columns(&self, stream: StreamKind) -> &Vec<Vec<f64>> {
        match stream {
            StreamKind::Eeg => &self.eeg,
            StreamKind::Fnirs => &self.fnirs,
        }
    }

    pub fn len(&self, stream: StreamKind) -> usize {
        self.columns(stream).first().map_or(0, Vec::len)
    }

    pub fn discontinuities(&self) -> &[Discontinuity] {
        &self.discontinuities
    }

    /// Parses a headed CSV chunk and appends it. The whole chunk is rejected
    /// on any error.
    pub fn ingest_csv(
        &mut self,
        stream: StreamKind,
        body: &[u8],
    ) -> Result<IngestAck, IngestError> {
        let header = stream.header();
        let cols = read_table(body, &header)?;
        self.ingest_rows(stream, cols, true)
    }

    /// Same checks as `ingest_csv` for already-parsed columns, timestamps
    /// first.
    pub fn ingest_columns(
        &mut self,
        stream: StreamKind,
        cols: Vec<Vec<f64>>,
    ) -> Result<IngestAck, IngestError> {
        self.ingest_rows(stream, cols, true)
    }

    fn ingest_rows(
        &mut self,
        stream: StreamKind,
        cols: Vec<Vec<f64>>,
        persist: bool,
    ) -> Result<IngestAck, IngestError> {
        let width = stream.header().len();
        if cols.len() != width {
            return Err(IngestError::Schema(format!(
                "expected {width} columns, got {}",
                cols.len()
            )));
        }
        let n = cols[0].len();
        if cols.iter().any(|c| c.len() != n) {
            return Err(IngestError::Schema("columns differ in length".into()));
        }
        let mut prev = self.columns(stream).first().and_then(|t| t.last().copied());
        let period = 1000.0 / stream.nominal_rate();
        let mut gaps = Vec::new();
        for i in 0..n {
            let t = cols[0][i];
            if cols.iter().any(|c| !c[i].is_finite()) {
                return Err(IngestError::Value {
                    row: i + 1,
                    msg: "non-finite value".into(),
                });
            }
            if stream == StreamKind::Fnirs && cols[1..].iter().any(|c| c[i] <= 0.0) {
                return Err(IngestError::Value {
                    row: i + 1,
                    msg: "light intensity must be positive".into(),
                });
            }
            if let Some(p) = prev {
                if t <= p {
                    return Err(IngestError::NonMonotone {
                        row: i + 1,
                        prev_ms: p,
                        t_ms: t,
                    });
                }
                if t - p > 2.0 * period {
                    gaps.push(Discontinuity {
                        stream,
                        after_ms: p,
                        next_ms: t,
                    });
                }
            }
            prev = Some(t);
        }
        if persist {
            if let Some(dir) = &self.sink {
                append_rows(
                    &dir.join(format!("{}.csv", stream.as_str())),
                    &stream.header(),
                    &cols,
                )?;
            }
        }
        for g in &gaps {
            log::warn!(
                "{} discontinuity: {} ms -> {} ms",
                stream.as_str(),
                g.after_ms,
                g.next_ms
            );
        }
        let target = match stream {
            StreamKind::Eeg => &mut self.eeg,
            StreamKind::Fnirs => &mut self.fnirs,
        };
        if target.is_empty() {
            *target = vec![Vec::new(); width];
        }
        for (dst, src) in target.iter_mut().zip(cols) {
            dst.extend(src);
        }
        let ack = IngestAck {
            stream,
            accepted: n,
            total: self.len(stream),
            discontinuities: gaps.len(),
        };
        self.discontinuities.extend(gaps);
        Ok(ack)
    }

    fn range(&self, stream: StreamKind, start_ms: f64, end_ms: f64) -> Vec<Vec<f64>> {
        let cols = self.columns(stream);
        let Some(ts) = cols.first() else {
            return vec![Vec::new(); stream.header().len()];
        };
        let a = ts.partition_point(|&t| t < start_ms);
        let b = ts.partition_point(|&t| t < end_ms);
        cols.iter().map(|c| c[a..b].to_vec()).collect()
    }

    /// EEG samples with timestamps in `[start_ms, end_ms)`.
    pub fn eeg(&self, start_ms: f64, end_ms: f64) -> EegRecording {
        let mut c = self.range(StreamKind::Eeg, start_ms, end_ms).into_iter();
        let (ts, fp1, fp2) = (
            c.next().unwrap_or_default(),
            c.next().unwrap_or_default(),
            c.next().unwrap_or_default(),
        );
        EegRecording::new(ts, fp1, fp2, EEG_RATE).expect("ingested columns have equal length")
    }

    pub fn fnirs(&self, start_ms: f64, end_ms: f64) -> FnirsRecording {
        let mut c = self.range(StreamKind::Fnirs, start_ms, end_ms).into_iter();
        let ts = c.next().unwrap_or_default();
        let mut channels = Vec::with_capacity(FNIRS_CHANNELS);
        for _ in 0..FNIRS_CHANNELS {
            channels.push([c.next().unwrap_or_default(), c.next().unwrap_or_default()]);
        }
        FnirsRecording::new(ts, FNIRS_RATE, channels).expect("ingested intensities are positive")
    }
}

fn append_rows(path: &Path, header: &[String], cols: &[Vec<f64>]) -> Result<(), IngestError> {
    let fresh = !path.exists();
    let file = OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let io = |e: csv::Error| IngestError::Io(std::io::Error::other(e));
    if fresh {
        w.write_record(header).map_err(io)?;
    }
    let mut row = Vec::with_capacity(cols.len());
    for i in 0..cols[0].len() {
        row.clear();
        row.extend(cols.iter().map(|c| c[i].to_string()));
        w.write_record(&row).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

/// Renders columns as a headed CSV chunk, the format `ingest_csv` takes.
pub fn chunk_csv(stream: StreamKind, cols: &[&[f64]]) -> Vec<u8> {
    let mut out = Vec::new();
    crate::sigproc::io::write_table(&mut out, &stream.header(), cols).expect("in-memory write");
    out
}
