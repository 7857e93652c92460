//! Base EDF reader and writer (no EDF+ TAL decoding).

use super::{IngestError, Recording, SeizureAnnotations};
use chrono::{Datelike, Duration, NaiveDate, Timelike};

pub const DIGITAL_MIN: i32 = -32768;
pub const DIGITAL_MAX: i32 = 32767;

const FIXED_HEADER: usize = 256;
const SIGNAL_HEADER: usize = 256;
const ANNOTATION_LABEL: &str = "EDF Annotations";

/// Declared physical min/max of one EDF signal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalRange {
    pub min: f64,
    pub max: f64,
}

impl PhysicalRange {
    /// Range as it will be written to the 8-character header fields.
    ///
    /// `min` is rounded down and `max` up, then both are re-parsed, so the
    /// writer quantizes with exactly the values a reader will see.
    pub fn new(min: f64, max: f64) -> Self {
        let lo = format_edf_number(min, Rounding::Down);
        let hi = format_edf_number(max, Rounding::Up);
        Self {
            min: lo.trim().parse().unwrap_or(min),
            max: hi.trim().parse().unwrap_or(max),
        }
    }

    /// Smallest representable range containing every value in `row`.
    pub fn covering(row: &[f32]) -> Self {
        let (mut lo, mut hi) = row
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v as f64), hi.max(v as f64))
            });
        if !lo.is_finite() || !hi.is_finite() {
            lo = -1.0;
            hi = 1.0;
        }
        if hi - lo < 1e-3 {
            lo -= 1.0;
            hi += 1.0;
        }
        Self::new(lo, hi)
    }

    fn gain(&self) -> f64 {
        (self.max - self.min) / (DIGITAL_MAX - DIGITAL_MIN) as f64
    }

    pub fn to_physical(&self, digital: i16) -> f64 {
        (digital as i32 - DIGITAL_MIN) as f64 * (self.max - self.min)
            / (DIGITAL_MAX - DIGITAL_MIN) as f64
            + self.min
    }

    /// Nearest digital code; `None` when `value` falls outside the range.
    pub fn to_digital(&self, value: f64) -> Option<i16> {
        if !(value >= self.min && value <= self.max) {
            return None;
        }
        let d = ((value - self.min) / self.gain()).round() as i32 + DIGITAL_MIN;
        Some(d.clamp(DIGITAL_MIN, DIGITAL_MAX) as i16)
    }
}

#[derive(Clone, Copy)]
enum Rounding {
    Down,
    Up,
    Nearest,
}

/// Formats `x` into at most 8 ASCII characters, rounding in the requested
/// direction when digits must be dropped.
fn format_edf_number(x: f64, rounding: Rounding) -> String {
    for decimals in (0..=6).rev() {
        let scale = 10f64.powi(decimals);
        let scaled = x * scale;
        let r = match rounding {
            Rounding::Down => (scaled - 1e-9 * scaled.abs().max(1.0)).floor(),
            Rounding::Up => (scaled + 1e-9 * scaled.abs().max(1.0)).ceil(),
            Rounding::Nearest => scaled.round(),
        };
        // Undo the epsilon nudge when x was already exact at this precision.
        let r = if (scaled - scaled.round()).abs() < 1e-9 * scaled.abs().max(1.0) {
            scaled.round()
        } else {
            r
        };
        let mut s = format!("{:.*}", decimals as usize, r / scale);
        if s.contains('.') {
            s = s.trim_end_matches('0').trim_end_matches('.').to_string();
        }
        if s == "-0" {
            s = "0".into();
        }
        if s.len() <= 8 {
            return s;
        }
    }
    // Magnitudes beyond 8 digits cannot be represented; saturate.
    if x < 0.0 { "-9999999" } else { "99999999" }.to_string()
}

fn field(bytes: &[u8], start: usize, len: usize) -> String {
    String::from_utf8_lossy(&bytes[start..start + len])
        .trim()
        .to_string()
}

fn numeric<T: std::str::FromStr>(
    bytes: &[u8],
    start: usize,
    len: usize,
    what: &str,
) -> Result<T, IngestError> {
    let s = field(bytes, start, len);
    s.parse::<T>()
        .map_err(|_| IngestError::MalformedHeader(format!("{what}: non-numeric value {s:?}")))
}

fn epoch() -> NaiveDate {
    NaiveDate::from_ymd_opt(1985, 1, 1).expect("valid date")
}

/// Seconds since 1985-01-01 00:00:00 from EDF's `dd.mm.yy` / `hh.mm.ss`.
fn parse_start(date: &str, time: &str) -> Option<f64> {
    let d: Vec<u32> = date
        .split('.')
        .map(|p| p.trim().parse().ok())
        .collect::<Option<_>>()?;
    let t: Vec<u32> = time
        .split('.')
        .map(|p| p.trim().parse().ok())
        .collect::<Option<_>>()?;
    if d.len() != 3 || t.len() != 3 || t[0] > 23 || t[1] > 59 || t[2] > 59 {
        return None;
    }
    let year = if d[2] >= 85 { 1900 + d[2] } else { 2000 + d[2] };
    let day = NaiveDate::from_ymd_opt(year as i32, d[1], d[0])?;
    let days = (day - epoch()).num_days();
    Some(days as f64 * 86_400.0 + (t[0] * 3600 + t[1] * 60 + t[2]) as f64)
}

fn format_start(offset_s: f64) -> (String, String) {
    let secs = offset_s.max(0.0).floor() as i64;
    let dt = epoch().and_hms_opt(0, 0, 0).expect("valid time") + Duration::seconds(secs);
    (
        format!("{:02}.{:02}.{:02}", dt.day(), dt.month(), dt.year() % 100),
        format!("{:02}.{:02}.{:02}", dt.hour(), dt.minute(), dt.second()),
    )
}

struct SignalHeader {
    label: String,
    range: PhysicalRange,
    dig_min: i32,
    dig_max: i32,
    samples_per_record: usize,
}

/// Parses a complete base-EDF byte stream.
///
/// Annotation signals, placeholder channels (labels starting with `-`) and
/// duplicate labels are dropped and noted in [`Recording::warnings`].
pub fn parse_edf(bytes: &[u8]) -> Result<Recording, IngestError> {
    if bytes.len() < FIXED_HEADER {
        return Err(IngestError::TruncatedFile {
            expected: FIXED_HEADER,
            actual: bytes.len(),
        });
    }
    let recording_field = field(bytes, 88, 80);
    let date = field(bytes, 168, 8);
    let time = field(bytes, 176, 8);
    let n_records: i64 = numeric(bytes, 236, 8, "number of data records")?;
    let record_duration: f64 = numeric(bytes, 244, 8, "data record duration")?;
    let ns: usize = numeric(bytes, 252, 4, "number of signals")?;
    if ns == 0 {
        return Err(IngestError::MalformedHeader("zero signals".into()));
    }
    if record_duration.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
        return Err(IngestError::MalformedHeader(format!(
            "record duration {record_duration} must be positive"
        )));
    }
    let header_len = FIXED_HEADER + SIGNAL_HEADER * ns;
    if bytes.len() < header_len {
        return Err(IngestError::TruncatedFile {
            expected: header_len,
            actual: bytes.len(),
        });
    }

    // Per-signal fields are stored column-wise: all labels, then all
    // transducers, and so on.
    let col = |offset: usize, width: usize, i: usize| FIXED_HEADER + offset * ns + width * i;
    let mut signals = Vec::with_capacity(ns);
    for i in 0..ns {
        let label = field(bytes, col(0, 16, i), 16);
        let phys_min: f64 = numeric(bytes, col(104, 8, i), 8, "physical minimum")?;
        let phys_max: f64 = numeric(bytes, col(112, 8, i), 8, "physical maximum")?;
        let dig_min: i32 = numeric(bytes, col(120, 8, i), 8, "digital minimum")?;
        let dig_max: i32 = numeric(bytes, col(128, 8, i), 8, "digital maximum")?;
        let samples_per_record: usize = numeric(bytes, col(216, 8, i), 8, "samples per record")?;
        if dig_max <= dig_min {
            return Err(IngestError::MalformedHeader(format!(
                "signal {i}: digital max {dig_max} must exceed min {dig_min}"
            )));
        }
        if phys_max == phys_min {
            return Err(IngestError::MalformedHeader(format!(
                "signal {i}: empty physical range"
            )));
        }
        if samples_per_record == 0 {
            return Err(IngestError::MalformedHeader(format!(
                "signal {i}: zero samples per record"
            )));
        }
        signals.push(SignalHeader {
            label,
            range: PhysicalRange {
                min: phys_min,
                max: phys_max,
            },
            dig_min,
            dig_max,
            samples_per_record,
        });
    }

    let record_bytes: usize = signals.iter().map(|s| s.samples_per_record * 2).sum();
    let n_records = if n_records < 0 {
        (bytes.len() - header_len) / record_bytes
    } else {
        n_records as usize
    };
    let expected = header_len + n_records * record_bytes;
    if bytes.len() < expected {
        return Err(IngestError::TruncatedFile {
            expected,
            actual: bytes.len(),
        });
    }

    let mut warnings = Vec::new();
    let mut keep = vec![false; ns];
    let mut seen = std::collections::HashSet::new();
    for (i, s) in signals.iter().enumerate() {
        if s.label == ANNOTATION_LABEL {
            continue;
        } else if s.label.starts_with('-') {
            warnings.push(format!("dropped placeholder channel {:?}", s.label));
        } else if !seen.insert(s.label.clone()) {
            warnings.push(format!("dropped duplicate channel {:?}", s.label));
        } else {
            keep[i] = true;
        }
    }
    let kept: Vec<usize> = (0..ns).filter(|&i| keep[i]).collect();
    if kept.is_empty() {
        return Err(IngestError::MalformedHeader("no data signals".into()));
    }
    let spr = signals[kept[0]].samples_per_record;
    if let Some(&i) = kept.iter().find(|&&i| signals[i].samples_per_record != spr) {
        return Err(IngestError::InconsistentRates(format!(
            "signal {:?} has {} samples per {} s record, expected {}",
            signals[i].label, signals[i].samples_per_record, record_duration, spr
        )));
    }

    let mut samples: Vec<Vec<f32>> = kept
        .iter()
        .map(|_| Vec::with_capacity(n_records * spr))
        .collect();
    let mut pos = header_len;
    for _ in 0..n_records {
        let mut out = 0;
        for (i, s) in signals.iter().enumerate() {
            let n = s.samples_per_record;
            if keep[i] {
                let span = s.range.max - s.range.min;
                let dig_span = (s.dig_max - s.dig_min) as f64;
                let row = &mut samples[out];
                row.extend(bytes[pos..pos + 2 * n].chunks_exact(2).map(|b| {
                    let d = i16::from_le_bytes([b[0], b[1]]) as i32;
                    ((d - s.dig_min) as f64 * span / dig_span + s.range.min) as f32
                }));
                out += 1;
            }
            pos += 2 * n;
        }
    }

    let start_offset_s = match parse_start(&date, &time) {
        Some(s) => s,
        None => {
            warnings.push(format!(
                "unparseable start {date:?} {time:?}; offset set to 0"
            ));
            0.0
        }
    };
    let rec = Recording {
        id: recording_field,
        sample_rate_hz: spr as f64 / record_duration,
        channels: kept.iter().map(|&i| signals[i].label.clone()).collect(),
        physical_ranges: kept.iter().map(|&i| signals[i].range).collect(),
        samples,
        start_offset_s,
        annotations: SeizureAnnotations::empty(),
        warnings,
    };
    rec.validate()?;
    Ok(rec)
}

fn put(buf: &mut Vec<u8>, s: &str, width: usize) {
    let mut b: Vec<u8> = s
        .bytes()
        .map(|c| {
            if c.is_ascii_graphic() || c == b' ' {
                c
            } else {
                b'_'
            }
        })
        .take(width)
        .collect();
    b.resize(width, b' ');
    buf.extend_from_slice(&b);
}

/// Serializes `rec` as base EDF with 16-bit samples spanning the full
/// digital range.
///
/// Records are one second long when the sample rate is integral and divides
/// the recording; otherwise the whole recording is a single record.
pub fn write_edf(rec: &Recording) -> Result<Vec<u8>, IngestError> {
    rec.validate()?;
    let n = rec.n_samples();
    let ns = rec.n_channels();
    let rate = rec.sample_rate_hz;
    let (spr, n_records, duration) = if rate.fract() == 0.0 && n.is_multiple_of(rate as usize) {
        (rate as usize, n / rate as usize, "1".to_string())
    } else {
        (n, 1, format_edf_number(n as f64 / rate, Rounding::Nearest))
    };

    let ranges: Vec<PhysicalRange> = rec
        .physical_ranges
        .iter()
        .map(|r| PhysicalRange::new(r.min, r.max))
        .collect();
    let mut digital: Vec<Vec<i16>> = Vec::with_capacity(ns);
    for (c, (row, range)) in rec.samples.iter().zip(&ranges).enumerate() {
        let mut d = Vec::with_capacity(n);
        for &v in row {
            d.push(
                range
                    .to_digital(v as f64)
                    .ok_or(IngestError::RangeOverflow {
                        channel: c,
                        value: v as f64,
                        min: range.min,
                        max: range.max,
                    })?,
            );
        }
        digital.push(d);
    }

    let header_len = FIXED_HEADER + SIGNAL_HEADER * ns;
    let mut buf = Vec::with_capacity(header_len + 2 * n * ns);
    let (date, time) = format_start(rec.start_offset_s);
    put(&mut buf, "0", 8);
    put(&mut buf, "X X X X", 80);
    put(&mut buf, &rec.id, 80);
    put(&mut buf, &date, 8);
    put(&mut buf, &time, 8);
    put(&mut buf, &header_len.to_string(), 8);
    put(&mut buf, "", 44);
    put(&mut buf, &n_records.to_string(), 8);
    put(&mut buf, &duration, 8);
    put(&mut buf, &ns.to_string(), 4);

    let columns: [(usize, &dyn Fn(usize) -> String); 10] = [
        (16, &|i| rec.channels[i].clone()),
        (80, &|_| String::new()),
        (8, &|_| "uV".into()),
        (8, &|i| format_edf_number(ranges[i].min, Rounding::Nearest)),
        (8, &|i| format_edf_number(ranges[i].max, Rounding::Nearest)),
        (8, &|_| DIGITAL_MIN.to_string()),
        (8, &|_| DIGITAL_MAX.to_string()),
        (80, &|_| String::new()),
        (8, &|_| spr.to_string()),
        (32, &|_| String::new()),
    ];
    for (width, value) in columns {
        for i in 0..ns {
            put(&mut buf, &value(i), width);
        }
    }

    for r in 0..n_records {
        for row in &digital {
            for &d in &row[r * spr..(r + 1) * spr] {
                buf.extend_from_slice(&d.to_le_bytes());
            }
        }
    }
    Ok(buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(samples: Vec<Vec<f32>>, rate: f64, range: PhysicalRange) -> Recording {
        let ns = samples.len();
        Recording {
            id: "test".into(),
            sample_rate_hz: rate,
            channels: (0..ns).map(|i| format!("C{i}")).collect(),
            physical_ranges: vec![range; ns],
            samples,
            start_offset_s: 0.0,
            annotations: SeizureAnnotations::empty(),
            warnings: vec![],
        }
    }

    #[test]
    fn digital_zero_scales_to_expected_microvolts() {
        let r = PhysicalRange {
            min: -100.0,
            max: 100.0,
        };
        let v = r.to_physical(0);
        assert!((v - (32768.0 * 200.0 / 65535.0 - 100.0)).abs() < 1e-12);
        assert!((v - 0.0015259).abs() < 1e-7);
    }

    #[test]
    fn minimal_file_round_trips_bit_exactly() {
        let range = PhysicalRange::new(-100.0, 100.0);
        let row: Vec<f32> = [-32768i16, -5, 0, 32767]
            .iter()
            .map(|&d| range.to_physical(d) as f32)
            .collect();
        let r = rec(vec![row.clone()], 4.0, range);
        let back = parse_edf(&write_edf(&r).unwrap()).unwrap();
        assert_eq!(back.samples[0], row);
        assert_eq!(back.sample_rate_hz, 4.0);
        assert_eq!(back.channels, vec!["C0"]);
        assert_eq!(back.id, "test");
    }

    #[test]
    fn constant_zero_recording_parses_back_to_zero() {
        let r = Recording::new(
            "z",
            256.0,
            vec!["A".into(), "B".into()],
            vec![vec![0.0; 512], vec![0.0; 512]],
            SeizureAnnotations::empty(),
        )
        .unwrap();
        let back = parse_edf(&write_edf(&r).unwrap()).unwrap();
        for row in &back.samples {
            for &v in row {
                assert!(v.abs() < 1e-4, "{v}");
            }
        }
    }

    #[test]
    fn sinusoid_round_trip_within_quantization_bound() {
        let rate = 256.0;
        let row: Vec<f32> = (0..1024)
            .map(|i| (2.0 * std::f64::consts::PI * i as f64 / rate).sin() as f32)
            .collect();
        let r = rec(vec![row.clone()], rate, PhysicalRange::new(-1.0, 1.0));
        let back = parse_edf(&write_edf(&r).unwrap()).unwrap();
        let max_err = row
            .iter()
            .zip(&back.samples[0])
            .map(|(a, b)| (a - b).abs() as f64)
            .fold(0.0, f64::max);
        assert!(max_err <= 2.0 / 65535.0, "{max_err}");
    }

    #[test]
    fn value_outside_range_overflows() {
        let r = rec(vec![vec![0.0, 2.0]], 2.0, PhysicalRange::new(-1.0, 1.0));
        assert!(matches!(
            write_edf(&r),
            Err(IngestError::RangeOverflow { channel: 0, .. })
        ));
    }

    #[test]
    fn truncated_mid_record_is_rejected() {
        let r = rec(vec![vec![0.5; 512]], 256.0, PhysicalRange::new(-1.0, 1.0));
        let bytes = write_edf(&r).unwrap();
        let cut = &bytes[..bytes.len() - 100];
        assert!(matches!(
            parse_edf(cut),
            Err(IngestError::TruncatedFile { .. })
        ));
        assert!(matches!(
            parse_edf(&bytes[..100]),
            Err(IngestError::TruncatedFile { .. })
        ));
    }

    #[test]
    fn malformed_numeric_field_and_zero_signals() {
        let r = rec(vec![vec![0.0; 4]], 4.0, PhysicalRange::new(-1.0, 1.0));
        let mut bytes = write_edf(&r).unwrap();
        bytes[236..244].copy_from_slice(b"abc     ");
        assert!(matches!(
            parse_edf(&bytes),
            Err(IngestError::MalformedHeader(_))
        ));
        let mut bytes = write_edf(&r).unwrap();
        bytes[252..256].copy_from_slice(b"0   ");
        assert!(matches!(
            parse_edf(&bytes),
            Err(IngestError::MalformedHeader(_))
        ));
    }

    #[test]
    fn mismatched_samples_per_record_is_inconsistent() {
        let r = rec(
            vec![vec![0.0; 4], vec![0.0; 4]],
            4.0,
            PhysicalRange::new(-1.0, 1.0),
        );
        let mut bytes = write_edf(&r).unwrap();
        // samples-per-record column starts at 256 + 216 * ns; patch signal 1 to 2
        // and drop 4 bytes so the file length stays consistent.
        let at = 256 + 216 * 2 + 8;
        bytes[at..at + 8].copy_from_slice(b"2       ");
        bytes.truncate(bytes.len() - 4);
        assert!(matches!(
            parse_edf(&bytes),
            Err(IngestError::InconsistentRates(_))
        ));
    }

    #[test]
    fn placeholder_and_duplicate_channels_are_dropped() {
        let mut r = rec(
            vec![vec![0.1; 4], vec![0.2; 4], vec![0.3; 4]],
            4.0,
            PhysicalRange::new(-1.0, 1.0),
        );
        r.channels = vec!["FP1-F7".into(), "-".into(), "FP1-F7".into()];
        let back = parse_edf(&write_edf(&r).unwrap()).unwrap();
        assert_eq!(back.channels, vec!["FP1-F7"]);
        assert_eq!(back.warnings.len(), 2);
        assert!((back.samples[0][0] - 0.1).abs() < 1e-4);
    }

    #[test]
    fn start_offset_survives_round_trip() {
        let mut r = rec(vec![vec![0.0; 4]], 4.0, PhysicalRange::new(-1.0, 1.0));
        r.start_offset_s = 86_400.0 * 400.0 + 3_723.0;
        let back = parse_edf(&write_edf(&r).unwrap()).unwrap();
        assert_eq!(back.start_offset_s, r.start_offset_s);
    }

    #[test]
    fn number_formatting_fits_eight_chars() {
        assert_eq!(format_edf_number(-100.0, Rounding::Down), "-100");
        assert_eq!(format_edf_number(1.0, Rounding::Up), "1");
        assert_eq!(format_edf_number(-12.3456789, Rounding::Down), "-12.3457");
        assert_eq!(format_edf_number(123.456789, Rounding::Up), "123.4568");
        assert!(format_edf_number(-12345.678, Rounding::Down).len() <= 8);
    }
}
