//! Two-column label files: `time_seconds frequency_hz`, one row per frame,
//! 0 Hz for unvoiced frames.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::FRAMES_PER_SECOND;
use crate::error::{Error, Result};
use crate::pitchgrid::FrameLabel;

/// Timestamp of frame `t` (0-based).
#[inline]
pub fn frame_time(t: usize) -> f64 {
    t as f64 / FRAMES_PER_SECOND as f64
}

pub fn format_labels(labels: &[FrameLabel]) -> String {
    let mut out = String::with_capacity(labels.len() * 18);
    for (t, l) in labels.iter().enumerate() {
        out.push_str(&format!("{:.3} {:.6}\n", frame_time(t), l.freq_hz));
    }
    out
}

/// Parse label text. Columns may be separated by whitespace, a comma or a tab.
pub fn parse_labels(text: &str) -> Result<Vec<FrameLabel>> {
    let mut labels = Vec::new();
    let mut last_time = f64::NEG_INFINITY;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .collect();
        if fields.len() != 2 {
            return Err(Error::Parse { line: line_no, msg: format!("expected 2 columns, found {}", fields.len()) });
        }
        let parse = |s: &str| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse { line: line_no, msg: format!("not a number: {s:?}") })
        };
        let time = parse(fields[0])?;
        let freq = parse(fields[1])?;
        if time <= last_time {
            return Err(Error::Parse { line: line_no, msg: format!("time {time} does not increase") });
        }
        last_time = time;
        if freq < 0.0 {
            return Err(Error::Parse { line: line_no, msg: format!("negative frequency {freq}") });
        }
        let label = FrameLabel::new(freq).map_err(|e| Error::Parse { line: line_no, msg: e.to_string() })?;
        labels.push(label);
    }
    Ok(labels)
}

pub fn write_labels(path: &Path, labels: &[FrameLabel]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(format_labels(labels).as_bytes())?;
    Ok(())
}

pub fn read_labels(path: &Path) -> Result<Vec<FrameLabel>> {
    parse_labels(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_row() {
        let l = parse_labels("0.000 0.000000\n0.010 220.000000\n").unwrap();
        assert_eq!(l.len(), 2);
        assert!(!l[0].voiced());
        assert_eq!(l[1].freq_hz, 220.0);
    }

    #[test]
    fn rejects_bad_rows() {
        assert!(matches!(parse_labels("0.0 -5.0"), Err(Error::Parse { line: 1, .. })));
        assert!(parse_labels("0.0 100 3").is_err());
        assert!(parse_labels("0.0 abc").is_err());
        assert!(matches!(parse_labels("0.01 100\n0.00 100"), Err(Error::Parse { line: 2, .. })));
        assert!(parse_labels("0.01 100\n0.01 100").is_err());
    }

    #[test]
    fn round_trip_file() {
        let labels: Vec<FrameLabel> = [0.0, 220.0, 123.456789, 830.0, 51.92]
            .iter()
            .map(|&f| FrameLabel::new(f).unwrap())
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.txt");
        write_labels(&p, &labels).unwrap();
        assert_eq!(read_labels(&p).unwrap(), labels);
    }

    #[test]
    fn comma_separated() {
        let l = parse_labels("0.00,110.5\n0.01,0\n").unwrap();
        assert_eq!(l[0].freq_hz, 110.5);
    }
}
