//! CSV readers and writers for device streams and epochs.

use std::io::{Read, Write};
use std::path::Path;

use super::eeg::{EegEpoch, EegError, EegRecording, EEG_RATE};
use super::fnirs::{
    FnirsError, FnirsRecording, HemodynamicSeries, PpgSeries, FNIRS_CHANNELS, FNIRS_RATE,
};

#[derive(Debug, thiserror::Error)]
pub enum StreamIoError {
    #[error("unexpected header: expected `{expected}`, found `{found}`")]
    Header { expected: String, found: String },
    #[error("row {row}, column `{column}`: cannot parse `{value}` as a number")]
    Number {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row}: expected {expected} fields, found {found}")]
    Width {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Eeg(#[from] EegError),
    #[error(transparent)]
    Fnirs(#[from] FnirsError),
}

pub const EEG_HEADER: [&str; 3] = ["timestamp_ms", "fp1_uv", "fp2_uv"];

pub fn fnirs_header() -> Vec<String> {
    let mut h = vec!["timestamp_ms".to_string()];
    for c in 1..=FNIRS_CHANNELS {
        h.push(format!("ch{c}_735"));
        h.push(format!("ch{c}_850"));
    }
    h
}

/// Reads a headed numeric table, checking the header verbatim.
pub(crate) fn read_table<R: Read>(r: R, header: &[String]) -> Result<Vec<Vec<f64>>, StreamIoError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let found: Vec<String> = rdr
        .headers()?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    if found != header {
        return Err(StreamIoError::Header {
            expected: header.join(","),
            found: found.join(","),
        });
    }
    let mut cols = vec![Vec::new(); header.len()];
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(StreamIoError::Width {
                row: i + 1,
                expected: header.len(),
                found: rec.len(),
            });
        }
        for (j, field) in rec.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| StreamIoError::Number {
                row: i + 1,
                column: header[j].clone(),
                value: field.to_string(),
            })?;
            cols[j].push(v);
        }
    }
    Ok(cols)
}

pub(crate) fn write_table<W: Write, S: AsRef<str>>(
    w: W,
    header: &[S],
    cols: &[&[f64]],
) -> Result<(), StreamIoError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(header.iter().map(|s| s.as_ref()))?;
    let n = cols.first().map_or(0, |c| c.len());
    let mut row = Vec::with_capacity(cols.len());
    for i in 0..n {
        row.clear();
        row.extend(cols.iter().map(|c| c[i].to_string()));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_eeg_csv<R: Read>(r: R) -> Result<EegRecording, StreamIoError> {
    let header: Vec<String> = EEG_HEADER.iter().map(|s| s.to_string()).collect();
    let mut cols = read_table(r, &header)?;
    let fp2 = cols.pop().unwrap_or_default();
    let fp1 = cols.pop().unwrap_or_default();
    let ts = cols.pop().unwrap_or_default();
    Ok(EegRecording::new(ts, fp1, fp2, EEG_RATE)?)
}

pub fn write_eeg_csv<W: Write>(w: W, rec: &EegRecording) -> Result<(), StreamIoError> {
    write_table(w, &EEG_HEADER, &[&rec.timestamps_ms, &rec.fp1, &rec.fp2])
}

pub fn read_fnirs_csv<R: Read>(r: R) -> Result<FnirsRecording, StreamIoError> {
    let mut cols = read_table(r, &fnirs_header())?.into_iter();
    let ts = cols.next().unwrap_or_default();
    let mut channels = Vec::with_capacity(FNIRS_CHANNELS);
    while let (Some(a), Some(b)) = (cols.next(), cols.next()) {
        channels.push([a, b]);
    }
    Ok(FnirsRecording::new(ts, FNIRS_RATE, channels)?)
}

pub fn write_fnirs_csv<W: Write>(w: W, rec: &FnirsRecording) -> Result<(), StreamIoError> {
    let mut cols: Vec<&[f64]> = vec![&rec.timestamps_ms];
    for [a, b] in &rec.channels {
        cols.push(a);
        cols.push(b);
    }
    write_table(w, &fnirs_header(), &cols)
}

fn hemodynamic_header(channels: usize) -> Vec<String> {
    let mut header = vec!["timestamp_ms".to_string()];
    for c in 1..=channels {
        header.extend(["hbo", "hbr", "hbt"].map(|name| format!("ch{c}_{name}")));
    }
    header
}

/// Writes `timestamp_ms,ch{c}_hbo,ch{c}_hbr,ch{c}_hbt...` in µM.
pub fn write_hemodynamic_csv<W: Write>(w: W, s: &HemodynamicSeries) -> Result<(), StreamIoError> {
    let mut cols: Vec<&[f64]> = vec![&s.timestamps_ms];
    for c in 0..s.hbo.len() {
        cols.extend([&s.hbo[c][..], &s.hbr[c], &s.hbt[c]]);
    }
    write_table(w, &hemodynamic_header(s.hbo.len()), &cols)
}

/// Reads an 8-channel hemodynamic table at the fNIRS rate. HbT is
/// recomputed from HbO and HbR, which reproduces the written column.
pub fn read_hemodynamic_csv<R: Read>(r: R) -> Result<HemodynamicSeries, StreamIoError> {
    let mut cols = read_table(r, &hemodynamic_header(FNIRS_CHANNELS))?.into_iter();
    let ts = cols.next().unwrap_or_default();
    let (mut hbo, mut hbr) = (Vec::new(), Vec::new());
    while let (Some(o), Some(r), Some(_)) = (cols.next(), cols.next(), cols.next()) {
        hbo.push(o);
        hbr.push(r);
    }
    Ok(HemodynamicSeries::from_components(ts, FNIRS_RATE, hbo, hbr))
}

fn ppg_header(channels: usize) -> Vec<String> {
    let mut header = vec!["timestamp_ms".to_string()];
    header.extend((1..=channels).map(|c| format!("ch{c}_ppg")));
    header
}

pub fn write_ppg_csv<W: Write>(w: W, s: &PpgSeries) -> Result<(), StreamIoError> {
    let mut cols: Vec<&[f64]> = vec![&s.timestamps_ms];
    cols.extend(s.channels.iter().map(Vec::as_slice));
    write_table(w, &ppg_header(s.channels.len()), &cols)
}

pub fn read_ppg_csv<R: Read>(r: R) -> Result<PpgSeries, StreamIoError> {
    let mut cols = read_table(r, &ppg_header(FNIRS_CHANNELS))?;
    let ts = cols.remove(0);
    Ok(PpgSeries {
        timestamps_ms: ts,
        sample_rate: FNIRS_RATE,
        channels: cols,
    })
}

const EPOCH_HEADER: [&str; 3] = ["sample", "fp1_uv", "fp2_uv"];

pub fn epoch_path(dir: &Path, trial_id: u32) -> std::path::PathBuf {
    dir.join(format!("trial_{trial_id:03}.csv"))
}

/// One CSV per epoch, named `trial_<id>.csv`, with `sample,fp1_uv,fp2_uv`.
pub fn write_epochs(dir: &Path, epochs: &[EegEpoch]) -> Result<(), StreamIoError> {
    std::fs::create_dir_all(dir)?;
    for e in epochs {
        let f = std::fs::File::create(epoch_path(dir, e.trial_id))?;
        let idx: Vec<f64> = (0..e.fp1.len()).map(|i| i as f64).collect();
        write_table(
            std::io::BufWriter::new(f),
            &EPOCH_HEADER,
            &[&idx, &e.fp1, &e.fp2],
        )?;
    }
    Ok(())
}

/// Reads one epoch file. The file does not store the onset, so the caller
/// supplies it from the event timeline.
pub fn read_epoch_csv<R: Read>(
    r: R,
    trial_id: u32,
    onset_ms: f64,
) -> Result<EegEpoch, StreamIoError> {
    let header: Vec<String> = EPOCH_HEADER.iter().map(|s| s.to_string()).collect();
    let mut cols = read_table(r, &header)?;
    let fp2 = cols.pop().unwrap_or_default();
    let fp1 = cols.pop().unwrap_or_default();
    Ok(EegEpoch {
        trial_id,
        onset_ms,
        fp1,
        fp2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eeg_round_trip_is_exact() {
        let rec = EegRecording::uniform(
            12.5,
            vec![0.1, -3.25, 1e-7],
            vec![2.0 / 3.0, 0.0, 5.5],
            EEG_RATE,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_eeg_csv(&mut buf, &rec).unwrap();
        assert!(buf.starts_with(b"timestamp_ms,fp1_uv,fp2_uv\n"));
        assert_eq!(read_eeg_csv(buf.as_slice()).unwrap(), rec);
    }

    #[test]
    fn fnirs_round_trip_and_header_check() {
        let chans = (0..8)
            .map(|c| [vec![100.0 + c as f64, 101.5], vec![200.25, 199.0]])
            .collect();
        let rec = FnirsRecording::uniform(0.0, FNIRS_RATE, chans).unwrap();
        let mut buf = Vec::new();
        write_fnirs_csv(&mut buf, &rec).unwrap();
        assert_eq!(read_fnirs_csv(buf.as_slice()).unwrap(), rec);

        let bad = b"timestamp_ms,a,b\n0,1,2\n";
        assert!(matches!(
            read_eeg_csv(&bad[..]),
            Err(StreamIoError::Header { .. })
        ));
    }

    #[test]
    fn bad_number_reports_location() {
        let text = b"timestamp_ms,fp1_uv,fp2_uv\n0,1,2\n4,x,2\n";
        match read_eeg_csv(&text[..]) {
            Err(StreamIoError::Number { row, column, .. }) => {
                assert_eq!((row, column.as_str()), (2, "fp1_uv"))
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn nonpositive_intensity_from_file() {
        let mut text = fnirs_header().join(",");
        text.push('\n');
        text.push('0');
        for i in 0..16 {
            text.push_str(if i == 5 { ",-1" } else { ",1" });
        }
        text.push('\n');
        assert!(matches!(
            read_fnirs_csv(text.as_bytes()),
            Err(StreamIoError::Fnirs(FnirsError::NonPositive {
                channel: 3,
                ..
            }))
        ));
    }

    #[test]
    fn derived_tables_round_trip() {
        let ts: Vec<f64> = (0..5).map(|i| i as f64 * 40.0).collect();
        let ch = |k: f64| -> Vec<Vec<f64>> {
            (0..FNIRS_CHANNELS)
                .map(|c| ts.iter().map(|t| (t + c as f64) * k / 7.0).collect())
                .collect()
        };
        let hb = HemodynamicSeries::from_components(ts.clone(), FNIRS_RATE, ch(0.3), ch(-1.1));
        let mut buf = Vec::new();
        write_hemodynamic_csv(&mut buf, &hb).unwrap();
        assert_eq!(read_hemodynamic_csv(&buf[..]).unwrap(), hb);
        let ppg = PpgSeries {
            timestamps_ms: ts.clone(),
            sample_rate: FNIRS_RATE,
            channels: ch(1e-3),
        };
        let mut buf = Vec::new();
        write_ppg_csv(&mut buf, &ppg).unwrap();
        assert_eq!(read_ppg_csv(&buf[..]).unwrap(), ppg);
        let dir = tempfile::tempdir().unwrap();
        let e = EegEpoch {
            trial_id: 7,
            onset_ms: 1234.0,
            fp1: vec![0.1, -0.2, 1.0 / 3.0],
            fp2: vec![2.0, 0.0, -5e-9],
        };
        write_epochs(dir.path(), std::slice::from_ref(&e)).unwrap();
        let back = read_epoch_csv(
            std::fs::File::open(epoch_path(dir.path(), 7)).unwrap(),
            7,
            1234.0,
        )
        .unwrap();
        assert_eq!(back, e);
    }
}
