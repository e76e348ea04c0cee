//! CSV and `.yeeg` binary formats.
//!
//! `.yeeg` layout (little endian):
//!
//! ```text
//! 0   magic "YOAS"
//! 4   u32 version
//! 8   u32 channels
//! 12  u64 samples
//! 20  f64 rate
//! 28  u32 extension length in bytes
//! 32  extension: UTF-8 `key=value` lines (channel names, label, sidecar keys)
//! ..  payload: f32, channel-major
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;

use super::Recording;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const YEEG_MAGIC: &[u8; 4] = b"YOAS";
pub const YEEG_VERSION: u32 = 1;
const HEADER_LEN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Format {
    /// Row = sample, column = channel, header row of names. CSV carries no
    /// rate, so it is supplied here.
    Csv { rate: f64 },
    Yeeg,
}

impl Format {
    /// Picks the format from the file extension.
    pub fn from_path(path: &Path, csv_rate: f64) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => Ok(Self::Csv { rate: csv_rate }),
            Some("yeeg") => Ok(Self::Yeeg),
            other => Err(Error::InvalidInput(format!("unknown recording extension {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct YeegHeader {
    pub version: u32,
    pub channels: usize,
    pub samples: usize,
    pub rate: f64,
    pub extension: BTreeMap<String, String>,
}

pub fn load<T: Scalar>(path: impl AsRef<Path>, format: Format) -> Result<Recording<T>> {
    let bytes = std::fs::read(path)?;
    match format {
        Format::Csv { rate } => parse_csv(&bytes, rate),
        Format::Yeeg => Ok(read_yeeg(&bytes)?.0),
    }
}

pub fn save<T: Scalar>(path: impl AsRef<Path>, format: Format, rec: &Recording<T>) -> Result<()> {
    let bytes = match format {
        Format::Csv { .. } => write_csv(rec).into_bytes(),
        Format::Yeeg => write_yeeg(rec, &BTreeMap::new()),
    };
    std::fs::write(path, bytes)?;
    Ok(())
}

fn parse_csv<T: Scalar>(bytes: &[u8], rate: f64) -> Result<Recording<T>> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Parse {
        offset: e.valid_up_to(),
        line: 0,
        msg: "file is not UTF-8".into(),
    })?;
    let mut names: Option<Vec<String>> = None;
    let mut columns: Vec<Vec<T>> = Vec::new();
    let mut offset = 0;
    for (lineno, raw) in text.split_inclusive('\n').enumerate() {
        let line_offset = offset;
        offset += raw.len();
        let line = raw.trim_end_matches(['\n', '\r']);
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let err = |msg: String| Error::Parse { offset: line_offset, line: lineno + 1, msg };
        match &names {
            None => {
                if fields.iter().any(|f| f.is_empty()) {
                    return Err(err("empty channel name in header".into()));
                }
                columns = vec![Vec::new(); fields.len()];
                names = Some(fields.iter().map(|f| f.to_string()).collect());
            }
            Some(n) => {
                if fields.len() != n.len() {
                    return Err(err(format!("expected {} values, found {}", n.len(), fields.len())));
                }
                for (col, f) in columns.iter_mut().zip(&fields) {
                    let v: f64 = parse_value(f).ok_or_else(|| err(format!("bad number {f:?}")))?;
                    col.push(T::of(v));
                }
            }
        }
    }
    let names = names.ok_or_else(|| Error::Parse { offset: 0, line: 1, msg: "missing header row".into() })?;
    Recording::from_rows(names, columns, rate)
}

fn parse_value(f: &str) -> Option<f64> {
    match f.to_ascii_lowercase().as_str() {
        "nan" => Some(f64::NAN),
        "inf" | "+inf" => Some(f64::INFINITY),
        "-inf" => Some(f64::NEG_INFINITY),
        _ => f.parse().ok(),
    }
}

fn write_csv<T: Scalar>(rec: &Recording<T>) -> String {
    let mut out = rec.channel_names().join(",");
    out.push('\n');
    for t in 0..rec.n_samples() {
        let row: Vec<String> = rec.samples().column(t).iter().map(|v| v.to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Encodes a recording; `extra` keys land in the header extension next to
/// the channel names and label.
pub fn write_yeeg<T: Scalar>(rec: &Recording<T>, extra: &BTreeMap<String, String>) -> Vec<u8> {
    let mut ext = extra.clone();
    ext.insert("names".into(), rec.channel_names().join(","));
    if let Some(l) = rec.label {
        ext.insert("label".into(), l.to_string());
    }
    let ext_text: String = ext.iter().map(|(k, v)| format!("{k}={v}\n")).collect();

    let payload = rec.n_channels() * rec.n_samples() * 4;
    let mut out = Vec::with_capacity(HEADER_LEN + ext_text.len() + payload);
    out.extend_from_slice(YEEG_MAGIC);
    out.extend_from_slice(&YEEG_VERSION.to_le_bytes());
    out.extend_from_slice(&(rec.n_channels() as u32).to_le_bytes());
    out.extend_from_slice(&(rec.n_samples() as u64).to_le_bytes());
    out.extend_from_slice(&rec.rate().to_le_bytes());
    out.extend_from_slice(&(ext_text.len() as u32).to_le_bytes());
    out.extend_from_slice(ext_text.as_bytes());
    for row in rec.samples().rows() {
        for v in row {
            out.extend_from_slice(&(v.f64() as f32).to_le_bytes());
        }
    }
    out
}

pub fn read_yeeg<T: Scalar>(bytes: &[u8]) -> Result<(Recording<T>, YeegHeader)> {
    let err = |offset: usize, msg: String| Error::Parse { offset, line: 0, msg };
    if bytes.len() < HEADER_LEN {
        return Err(err(bytes.len(), "truncated header".into()));
    }
    if &bytes[0..4] != YEEG_MAGIC {
        return Err(err(0, "bad magic".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != YEEG_VERSION {
        return Err(err(4, format!("unsupported version {version}")));
    }
    let channels = u32_at(8) as usize;
    let samples = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let rate = f64::from_le_bytes(bytes[20..28].try_into().unwrap());
    let ext_len = u32_at(28) as usize;
    let ext_end = HEADER_LEN + ext_len;
    if bytes.len() < ext_end {
        return Err(err(bytes.len(), "truncated header extension".into()));
    }
    let ext_text = std::str::from_utf8(&bytes[HEADER_LEN..ext_end])
        .map_err(|e| err(HEADER_LEN + e.valid_up_to(), "extension is not UTF-8".into()))?;
    let mut extension = BTreeMap::new();
    for line in ext_text.lines().filter(|l| !l.is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| err(HEADER_LEN, format!("bad extension line {line:?}")))?;
        extension.insert(k.to_string(), v.to_string());
    }
    let names: Vec<String> = match extension.get("names") {
        Some(n) if !n.is_empty() => n.split(',').map(String::from).collect(),
        _ => (0..channels).map(|c| format!("ch{c}")).collect(),
    };
    if names.len() != channels {
        return Err(err(HEADER_LEN, format!("{} names for {channels} channels", names.len())));
    }
    let expected = channels
        .checked_mul(samples)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| err(8, "channel count overflows".into()))?;
    let payload = &bytes[ext_end..];
    if payload.len() != expected {
        return Err(err(ext_end, format!("payload has {} bytes, expected {expected}", payload.len())));
    }
    let data: Vec<T> = payload
        .chunks_exact(4)
        .map(|c| T::of(f32::from_le_bytes(c.try_into().unwrap()) as f64))
        .collect();
    let matrix = Array2::from_shape_vec((channels, samples), data).map_err(|e| Error::Shape(e.to_string()))?;
    let label = match extension.get("label") {
        Some(l) => Some(l.parse().map_err(|_| err(HEADER_LEN, format!("bad label {l:?}")))?),
        None => None,
    };
    let rec = Recording::new(names, matrix, rate)?.with_label(label);
    Ok((rec, YeegHeader { version, channels, samples, rate, extension }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn csv_two_channels_four_samples() {
        let csv = "a,b\n1,2\n3,4\n5,6\n7,8\n";
        let r: Recording<f64> = parse_csv(csv.as_bytes(), 250.0).unwrap();
        assert_eq!(r.n_channels(), 2);
        assert_eq!(r.n_samples(), 4);
        assert_eq!(r.channel_vec("b").unwrap(), vec![2.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn csv_short_row_reports_line_and_offset() {
        let csv = "a,b,c,d\n1,2,3,4\n1,2,3\n";
        match parse_csv::<f64>(csv.as_bytes(), 250.0) {
            Err(Error::Parse { line, offset, .. }) => {
                assert_eq!(line, 3);
                assert_eq!(offset, 16);
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn csv_accepts_non_finite_tokens() {
        let r: Recording<f64> = parse_csv(b"a\nnan\ninf\n-inf\n", 1.0).unwrap();
        let v = r.channel_vec("a").unwrap();
        assert!(v[0].is_nan() && v[1] == f64::INFINITY && v[2] == f64::NEG_INFINITY);
    }

    #[test]
    fn yeeg_round_trip_is_bit_exact() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let (c, t) = (32, 7500);
        let names: Vec<String> = (0..c).map(|i| format!("ch{i}")).collect();
        let data: Vec<f32> = (0..c * t).map(|_| rng.random::<f32>() * 200.0 - 100.0).collect();
        let rec = Recording::new(names, Array2::from_shape_vec((c, t), data).unwrap(), 250.0)
            .unwrap()
            .with_label(Some(4));
        let bytes = write_yeeg(&rec, &BTreeMap::new());
        let (back, header): (Recording<f32>, _) = read_yeeg(&bytes).unwrap();
        assert_eq!(header.samples, t);
        assert_eq!(back.label, Some(4));
        assert!(back.samples().iter().zip(rec.samples()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn yeeg_header_is_32_bytes_and_extension_survives() {
        let rec = Recording::from_rows(vec!["x".into()], vec![vec![1.0f64, 2.0]], 100.0).unwrap();
        let mut extra = BTreeMap::new();
        extra.insert("reference".to_string(), "Fp1".to_string());
        let bytes = write_yeeg(&rec, &extra);
        assert_eq!(&bytes[..4], b"YOAS");
        let ext_len = u32::from_le_bytes(bytes[28..32].try_into().unwrap()) as usize;
        assert_eq!(bytes.len(), 32 + ext_len + 8);
        let (_, h) = read_yeeg::<f64>(&bytes).unwrap();
        assert_eq!(h.extension["reference"], "Fp1");
    }

    #[test]
    fn yeeg_truncated_payload_rejected() {
        let rec = Recording::from_rows(vec!["x".into()], vec![vec![1.0f64, 2.0]], 100.0).unwrap();
        let bytes = write_yeeg(&rec, &BTreeMap::new());
        assert!(matches!(read_yeeg::<f64>(&bytes[..bytes.len() - 1]), Err(Error::Parse { .. })));
        assert!(matches!(read_yeeg::<f64>(b"NOPE0000000000000000000000000000"), Err(Error::Parse { offset: 0, .. })));
    }

    #[test]
    fn csv_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        let rec = Recording::from_rows(vec!["a".into(), "b".into()], vec![vec![0.5, -1.25], vec![3.0, 4.0]], 250.0).unwrap();
        save(&p, Format::Csv { rate: 250.0 }, &rec).unwrap();
        let back: Recording<f64> = load(&p, Format::Csv { rate: 250.0 }).unwrap();
        assert_eq!(back, rec);
    }
}
