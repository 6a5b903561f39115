//! WFDB header/sample files with format-16 (little-endian `i16`) signals.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::labels::LabelVector;
use crate::signal::{EcgRecord, LEADS};

/// WFDB's default gain in ADC units per physical unit.
pub const DEFAULT_GAIN: f64 = 200.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SignalSpec {
    pub file: String,
    pub byte_offset: u64,
    pub gain: f64,
    pub baseline: i32,
    /// Multiplier from the header's physical unit to millivolts.
    pub to_mv: f64,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WfdbHeader {
    pub name: String,
    pub fs: f64,
    pub samples: Option<usize>,
    pub signals: Vec<SignalSpec>,
}

fn leading_number(field: &str) -> &str {
    let end = field.find(|c: char| c == '/' || c == '(').unwrap_or(field.len());
    &field[..end]
}

fn parse_gain(field: &str) -> Result<(f64, Option<i32>, f64), String> {
    let (value, units) = match field.split_once('/') {
        Some((v, u)) => (v, u),
        None => (field, "mV"),
    };
    let (gain, baseline) = match value.split_once('(') {
        Some((g, rest)) => {
            let b = rest.trim_end_matches(')');
            (g, Some(b.parse::<i32>().map_err(|_| format!("bad baseline `{b}`"))?))
        }
        None => (value, None),
    };
    let gain: f64 = gain.parse().map_err(|_| format!("bad gain `{gain}`"))?;
    let to_mv = match units {
        "mV" => 1.0,
        "uV" | "µV" => 1e-3,
        "V" => 1e3,
        other => return Err(format!("unsupported unit `{other}`")),
    };
    Ok((if gain == 0.0 { DEFAULT_GAIN } else { gain }, baseline, to_mv))
}

pub fn parse_header(text: &str, path: &Path) -> Result<WfdbHeader> {
    let bad = |d: String| Error::format(path, d);
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
    let record_line = lines.next().ok_or_else(|| bad("empty header".into()))?;
    let f: Vec<&str> = record_line.split_whitespace().collect();
    if f.len() < 2 {
        return Err(bad(format!("record line `{record_line}` needs a name and a signal count")));
    }
    if f[0].contains('/') {
        return Err(bad("multi-segment records are not supported".into()));
    }
    let nsig: usize = f[1].parse().map_err(|_| bad(format!("bad signal count `{}`", f[1])))?;
    let fs = match f.get(2) {
        Some(s) => leading_number(s).parse::<f64>().map_err(|_| bad(format!("bad sampling frequency `{s}`")))?,
        None => 250.0,
    };
    let samples = match f.get(3) {
        Some(s) => Some(s.parse::<usize>().map_err(|_| bad(format!("bad sample count `{s}`")))?),
        None => None,
    };
    let mut signals = Vec::with_capacity(nsig);
    for line in lines.take(nsig) {
        let g: Vec<&str> = line.split_whitespace().collect();
        if g.len() < 2 {
            return Err(bad(format!("signal line `{line}` is incomplete")));
        }
        let (format, offset) = match g[1].split_once('+') {
            Some((fmt, off)) => (fmt, off.parse::<u64>().map_err(|_| bad(format!("bad byte offset in `{}`", g[1])))?),
            None => (g[1], 0),
        };
        if format != "16" {
            return Err(bad(format!("signal format `{format}` is not supported, only 16")));
        }
        let (gain, baseline, to_mv) = match g.get(2) {
            Some(s) => parse_gain(s).map_err(bad)?,
            None => (DEFAULT_GAIN, None, 1.0),
        };
        let adc_zero = match g.get(4) {
            Some(s) => s.parse::<i32>().map_err(|_| bad(format!("bad ADC zero `{s}`")))?,
            None => 0,
        };
        signals.push(SignalSpec {
            file: g[0].to_string(),
            byte_offset: offset,
            gain,
            baseline: baseline.unwrap_or(adc_zero),
            to_mv,
            description: g.get(8..).map(|d| d.join(" ")).unwrap_or_default(),
        });
    }
    if signals.len() != nsig {
        return Err(bad(format!("header declares {nsig} signals but lists {}", signals.len())));
    }
    Ok(WfdbHeader {
        name: f[0].to_string(),
        fs,
        samples,
        signals,
    })
}

/// Reads a record and converts samples to millivolts.
pub fn load_wfdb_record(header_path: &Path, labels: LabelVector) -> Result<EcgRecord> {
    let text = fs::read_to_string(header_path).map_err(|e| Error::io(header_path, e))?;
    let header = parse_header(&text, header_path)?;
    if header.signals.len() != LEADS {
        return Err(Error::format(
            header_path,
            format!("expected {LEADS} leads, header declares {}", header.signals.len()),
        ));
    }
    let first = &header.signals[0];
    if header.signals.iter().any(|s| s.file != first.file || s.byte_offset != first.byte_offset) {
        return Err(Error::format(header_path, "all leads must share one interleaved sample file"));
    }
    let dat = header_path.parent().unwrap_or(Path::new(".")).join(&first.file);
    let bytes = fs::read(&dat).map_err(|e| Error::io(&dat, e))?;
    let body = bytes.get(first.byte_offset as usize..).unwrap_or(&[]);
    let frame = 2 * LEADS;
    let samples = match header.samples {
        Some(n) => n,
        None => body.len() / frame,
    };
    let expected = samples * frame;
    if body.len() < expected {
        return Err(Error::format(
            &dat,
            format!("sample file holds {} bytes, header requires {expected}", body.len()),
        ));
    }
    let mut signal = vec![Vec::with_capacity(samples); LEADS];
    for chunk in body[..expected].chunks_exact(frame) {
        for (lead, (s, out)) in header.signals.iter().zip(signal.iter_mut()).enumerate() {
            let raw = i16::from_le_bytes([chunk[2 * lead], chunk[2 * lead + 1]]);
            out.push((raw as i32 - s.baseline) as f64 / s.gain * s.to_mv);
        }
    }
    EcgRecord::new(header.name, signal, header.fs, labels)
}

/// Writes `<dir>/<name>.hea` and `<dir>/<name>.dat`. Returns the header path.
pub fn write_wfdb_record(dir: &Path, name: &str, record: &EcgRecord, gain: f64) -> Result<PathBuf> {
    if !(gain > 0.0) {
        return Err(Error::invalid(format!("gain {gain} must be positive")));
    }
    let n = record.len();
    let mut bytes = Vec::with_capacity(n * LEADS * 2);
    for i in 0..n {
        for (lead, l) in record.signal.iter().enumerate() {
            let raw = (l[i] * gain).round();
            if !(-32767.0..=32767.0).contains(&raw) {
                return Err(Error::invalid(format!(
                    "record {}: lead {lead} sample {i} ({} mV) overflows 16 bits at gain {gain}",
                    record.id, l[i]
                )));
            }
            bytes.extend_from_slice(&(raw as i16).to_le_bytes());
        }
    }
    let dat_name = format!("{name}.dat");
    let mut header = format!("{name} {LEADS} {} {n}\n", record.fs);
    for lead in 0..LEADS {
        header.push_str(&format!("{dat_name} 16 {gain}(0)/mV 16 0 0 0 0 lead{lead}\n"));
    }
    let dat = dir.join(&dat_name);
    fs::write(&dat, bytes).map_err(|e| Error::io(&dat, e))?;
    let hea = dir.join(format!("{name}.hea"));
    fs::write(&hea, header).map_err(|e| Error::io(&hea, e))?;
    Ok(hea)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::Task;

    fn labels() -> LabelVector {
        LabelVector::new(Task::Binary, vec![0]).unwrap()
    }

    fn write_raw(dir: &Path, frames: &[[i16; LEADS]], declared: usize, gain_field: &str) -> PathBuf {
        let mut header = format!("rec 12 500 {declared}\n");
        for _ in 0..LEADS {
            header.push_str(&format!("rec.dat 16 {gain_field} 16 0 0 0 0 x\n"));
        }
        let bytes: Vec<u8> = frames.iter().flatten().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(dir.join("rec.dat"), bytes).unwrap();
        fs::write(dir.join("rec.hea"), header).unwrap();
        dir.join("rec.hea")
    }

    #[test]
    fn gain_converts_to_millivolts() {
        let dir = tempfile::tempdir().unwrap();
        let h = write_raw(dir.path(), &[[200; LEADS], [-200; LEADS]], 2, "200(0)/mV");
        let r = load_wfdb_record(&h, labels()).unwrap();
        assert_eq!(r.fs, 500.0);
        assert_eq!(r.signal[0], vec![1.0, -1.0]);
    }

    #[test]
    fn microvolt_units_and_baseline() {
        let dir = tempfile::tempdir().unwrap();
        let h = write_raw(dir.path(), &[[1100; LEADS]], 1, "1(100)/uV");
        let r = load_wfdb_record(&h, labels()).unwrap();
        assert!((r.signal[4][0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn short_sample_file_reports_byte_counts() {
        let dir = tempfile::tempdir().unwrap();
        let frames = vec![[0i16; LEADS]; 10];
        let h = write_raw(dir.path(), &frames, 10, "200/mV");
        assert!(load_wfdb_record(&h, labels()).is_ok());
        let dat = dir.path().join("rec.dat");
        let mut bytes = fs::read(&dat).unwrap();
        bytes.pop();
        fs::write(&dat, bytes).unwrap();
        let err = load_wfdb_record(&h, labels()).unwrap_err().to_string();
        assert!(err.contains("239 bytes") && err.contains("240"), "{err}");
    }

    #[test]
    fn lead_count_must_be_twelve() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("r.hea"), "r 2 500 1\nr.dat 16 200 16 0 0 0 0 I\nr.dat 16 200 16 0 0 0 0 II\n").unwrap();
        fs::write(dir.path().join("r.dat"), [0u8; 4]).unwrap();
        let err = load_wfdb_record(&dir.path().join("r.hea"), labels()).unwrap_err();
        assert!(err.to_string().contains("12 leads"));
    }
}
