//! Reading and writing of plain EDF signal files.
//!
//! Layout: a 256-byte ASCII main header, then `signal_count` blocks of
//! per-signal fixed-width fields (stored field-by-field, not
//! signal-by-signal), then `record_count` data records of interleaved
//! 16-bit little-endian two's-complement samples.
//!
//! Samples are held in physical units. The digital/physical mapping is
//! `physical = (digital - dig_min) * gain + phys_min` with
//! `gain = (phys_max - phys_min) / (dig_max - dig_min)`.

use thiserror::Error;

const MAIN_HEADER_LEN: usize = 256;
const SIGNAL_HEADER_LEN: usize = 256;

#[derive(Debug, Error, PartialEq)]
pub enum EdfError {
    #[error("file truncated: expected at least {expected} bytes, found {found}")]
    TruncatedFile { expected: usize, found: usize },
    #[error("malformed header field `{field}`: {reason}")]
    MalformedHeader { field: String, reason: String },
    #[error("signal {signal} inconsistent: {reason}")]
    InconsistentSignal { signal: usize, reason: String },
    #[error("signal {signal} sample {index}: value {value} outside [{min}, {max}]")]
    ValueOutOfRange {
        signal: usize,
        index: usize,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("field `{field}` value `{value}` does not fit in {width} bytes")]
    FieldOverflow {
        field: &'static str,
        value: String,
        width: usize,
    },
}

pub type Result<T> = std::result::Result<T, EdfError>;

/// Main (file-level) EDF header.
#[derive(Debug, Clone, PartialEq)]
pub struct EdfHeader {
    pub version: String,
    pub patient_id: String,
    pub recording_id: String,
    /// `dd.mm.yy`
    pub start_date: String,
    /// `hh.mm.ss`
    pub start_time: String,
    pub header_bytes: usize,
    pub record_count: usize,
    pub record_duration_s: f64,
    pub signal_count: usize,
}

/// Per-signal header block.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalSpec {
    pub label: String,
    pub transducer: String,
    pub physical_dim: String,
    pub phys_min: f64,
    pub phys_max: f64,
    pub dig_min: i32,
    pub dig_max: i32,
    pub prefiltering: String,
    pub samples_per_record: usize,
}

impl SignalSpec {
    /// A 16-bit full-range EEG channel in microvolts.
    pub fn eeg(label: impl Into<String>, phys_range_uv: f64, samples_per_record: usize) -> Self {
        Self {
            label: label.into(),
            transducer: String::new(),
            physical_dim: "uV".to_string(),
            phys_min: -phys_range_uv,
            phys_max: phys_range_uv,
            dig_min: -32768,
            dig_max: 32767,
            prefiltering: String::new(),
            samples_per_record,
        }
    }

    pub fn gain(&self) -> f64 {
        (self.phys_max - self.phys_min) / f64::from(self.dig_max - self.dig_min)
    }

    pub fn to_physical(&self, digital: i16) -> f64 {
        f64::from(i32::from(digital) - self.dig_min) * self.gain() + self.phys_min
    }

    /// Nearest digital code for a physical value, if representable.
    pub fn to_digital(&self, physical: f64) -> Option<i16> {
        if !physical.is_finite() {
            return None;
        }
        let code = ((physical - self.phys_min) / self.gain()).round() + f64::from(self.dig_min);
        if code < f64::from(self.dig_min) || code > f64::from(self.dig_max) {
            return None;
        }
        i16::try_from(code as i64).ok()
    }

    fn validate(&self, signal: usize) -> Result<()> {
        let bad = |reason: &str| EdfError::InconsistentSignal {
            signal,
            reason: reason.to_string(),
        };
        if self.dig_min >= self.dig_max {
            return Err(bad("digital minimum must be below digital maximum"));
        }
        if self.dig_min < i32::from(i16::MIN) || self.dig_max > i32::from(i16::MAX) {
            return Err(bad("digital range exceeds 16 bits"));
        }
        if !(self.phys_min < self.phys_max) {
            return Err(bad("physical minimum must be below physical maximum"));
        }
        let gain = self.gain();
        if !gain.is_finite() || gain == 0.0 {
            return Err(bad("scaling gain is not finite and nonzero"));
        }
        if self.samples_per_record == 0 {
            return Err(bad("samples per record must be positive"));
        }
        Ok(())
    }
}

/// One decoded EDF file.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub header: EdfHeader,
    pub signals: Vec<SignalSpec>,
    /// Per-signal samples in physical units.
    pub samples: Vec<Vec<f64>>,
    /// Offset of the first sample in the concatenated patient timeline.
    pub global_start_s: i64,
}

impl Recording {
    /// Builds a recording with a consistent header from signal blocks and
    /// samples. `record_duration_s` is the data record length.
    pub fn new(
        patient_id: &str,
        record_duration_s: f64,
        signals: Vec<SignalSpec>,
        samples: Vec<Vec<f64>>,
    ) -> Self {
        let record_count = match (signals.first(), samples.first()) {
            (Some(s), Some(x)) => x.len() / s.samples_per_record,
            _ => 0,
        };
        let header = EdfHeader {
            version: "0".to_string(),
            patient_id: patient_id.to_string(),
            recording_id: String::new(),
            start_date: "01.01.00".to_string(),
            start_time: "00.00.00".to_string(),
            header_bytes: MAIN_HEADER_LEN + SIGNAL_HEADER_LEN * signals.len(),
            record_count,
            record_duration_s,
            signal_count: signals.len(),
        };
        Self {
            header,
            signals,
            samples,
            global_start_s: 0,
        }
    }

    /// Sampling rate of signal `i` in Hz.
    pub fn sampling_rate(&self, i: usize) -> f64 {
        self.signals[i].samples_per_record as f64 / self.header.record_duration_s
    }

    pub fn duration_s(&self) -> f64 {
        self.header.record_count as f64 * self.header.record_duration_s
    }

    /// Digital codes of every sample, per signal.
    pub fn digital_samples(&self) -> Result<Vec<Vec<i16>>> {
        self.samples
            .iter()
            .zip(&self.signals)
            .enumerate()
            .map(|(si, (xs, spec))| {
                xs.iter()
                    .enumerate()
                    .map(|(index, &value)| {
                        if value < spec.phys_min || value > spec.phys_max {
                            return Err(EdfError::ValueOutOfRange {
                                signal: si,
                                index,
                                value,
                                min: spec.phys_min,
                                max: spec.phys_max,
                            });
                        }
                        spec.to_digital(value).ok_or(EdfError::ValueOutOfRange {
                            signal: si,
                            index,
                            value,
                            min: spec.phys_min,
                            max: spec.phys_max,
                        })
                    })
                    .collect()
            })
            .collect()
    }
}

struct Fields<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Fields<'a> {
    fn take(&mut self, width: usize) -> &'a [u8] {
        let out = &self.bytes[self.pos..self.pos + width];
        self.pos += width;
        out
    }

    /// One fixed-width field per signal, stored column-wise.
    fn column(&mut self, count: usize, width: usize) -> Vec<&'a [u8]> {
        (0..count).map(|_| self.take(width)).collect()
    }

    fn text(&mut self, width: usize) -> String {
        String::from_utf8_lossy(self.take(width)).trim().to_string()
    }
}

fn malformed(field: &str, reason: impl Into<String>) -> EdfError {
    EdfError::MalformedHeader {
        field: field.to_string(),
        reason: reason.into(),
    }
}

fn numeric_text<'a>(field: &str, raw: &'a [u8]) -> Result<&'a str> {
    let text = std::str::from_utf8(raw).map_err(|_| malformed(field, "not ASCII"))?;
    let text = text.trim();
    if text.is_empty() {
        return Err(malformed(field, "empty numeric field"));
    }
    Ok(text)
}

fn parse_usize(field: &str, raw: &[u8]) -> Result<usize> {
    let text = numeric_text(field, raw)?;
    text.parse::<usize>()
        .map_err(|_| malformed(field, format!("`{text}` is not a non-negative integer")))
}

fn parse_i32(field: &str, raw: &[u8]) -> Result<i32> {
    let text = numeric_text(field, raw)?;
    text.parse::<i32>()
        .map_err(|_| malformed(field, format!("`{text}` is not an integer")))
}

fn parse_f64(field: &str, raw: &[u8]) -> Result<f64> {
    let text = numeric_text(field, raw)?;
    match text.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(malformed(field, format!("`{text}` is not a finite number"))),
    }
}

fn check_date_like(field: &str, text: &str) -> Result<()> {
    let b = text.as_bytes();
    let ok = b.len() == 8
        && b[2] == b'.'
        && b[5] == b'.'
        && [0, 1, 3, 4, 6, 7].iter().all(|&i| b[i].is_ascii_digit());
    if ok {
        Ok(())
    } else {
        Err(malformed(field, format!("`{text}` is not of the form nn.nn.nn")))
    }
}

/// Decodes a complete EDF byte stream. Never reads past the end of `bytes`.
pub fn parse_edf(bytes: &[u8]) -> Result<Recording> {
    if bytes.len() < MAIN_HEADER_LEN {
        return Err(EdfError::TruncatedFile {
            expected: MAIN_HEADER_LEN,
            found: bytes.len(),
        });
    }
    let mut f = Fields { bytes, pos: 0 };
    let version = f.text(8);
    let patient_id = f.text(80);
    let recording_id = f.text(80);
    let start_date = f.text(8);
    check_date_like("start_date", &start_date)?;
    let start_time = f.text(8);
    check_date_like("start_time", &start_time)?;
    let header_bytes = parse_usize("header_bytes", f.take(8))?;
    f.take(44);
    let record_count = parse_usize("record_count", f.take(8))?;
    let record_duration_s = parse_f64("record_duration", f.take(8))?;
    if record_duration_s <= 0.0 {
        return Err(malformed("record_duration", "must be positive"));
    }
    let signal_count = parse_usize("signal_count", f.take(4))?;
    if signal_count == 0 {
        return Err(malformed("signal_count", "at least one signal required"));
    }
    let expected_header = signal_count
        .checked_mul(SIGNAL_HEADER_LEN)
        .and_then(|n| n.checked_add(MAIN_HEADER_LEN))
        .ok_or_else(|| malformed("signal_count", "too large"))?;
    if header_bytes != expected_header {
        return Err(malformed(
            "header_bytes",
            format!("{header_bytes} != 256 * ({signal_count} + 1)"),
        ));
    }
    if bytes.len() < header_bytes {
        return Err(EdfError::TruncatedFile {
            expected: header_bytes,
            found: bytes.len(),
        });
    }

    let ns = signal_count;
    let labels = f.column(ns, 16);
    let transducers = f.column(ns, 80);
    let dims = f.column(ns, 8);
    let phys_mins = f.column(ns, 8);
    let phys_maxs = f.column(ns, 8);
    let dig_mins = f.column(ns, 8);
    let dig_maxs = f.column(ns, 8);
    let prefilters = f.column(ns, 80);
    let spr = f.column(ns, 8);
    let _reserved = f.column(ns, 32);
    debug_assert_eq!(f.pos, header_bytes);

    let text = |raw: &[u8]| String::from_utf8_lossy(raw).trim().to_string();
    let mut signals = Vec::with_capacity(ns);
    for i in 0..ns {
        let spec = SignalSpec {
            label: text(labels[i]),
            transducer: text(transducers[i]),
            physical_dim: text(dims[i]),
            phys_min: parse_f64("physical_min", phys_mins[i])?,
            phys_max: parse_f64("physical_max", phys_maxs[i])?,
            dig_min: parse_i32("digital_min", dig_mins[i])?,
            dig_max: parse_i32("digital_max", dig_maxs[i])?,
            prefiltering: text(prefilters[i]),
            samples_per_record: parse_usize("samples_per_record", spr[i])?,
        };
        spec.validate(i)?;
        signals.push(spec);
    }

    let record_samples = signals
        .iter()
        .try_fold(0usize, |acc, s| acc.checked_add(s.samples_per_record))
        .ok_or_else(|| malformed("samples_per_record", "too large"))?;
    let data_len = record_samples
        .checked_mul(2)
        .and_then(|n| n.checked_mul(record_count))
        .ok_or_else(|| malformed("record_count", "too large"))?;
    let available = bytes.len() - header_bytes;
    if available < data_len {
        return Err(EdfError::TruncatedFile {
            expected: header_bytes + data_len,
            found: bytes.len(),
        });
    }
    if available > data_len {
        return Err(EdfError::InconsistentSignal {
            signal: 0,
            reason: format!(
                "{} trailing bytes beyond {record_count} records",
                available - data_len
            ),
        });
    }

    let mut samples: Vec<Vec<f64>> = signals
        .iter()
        .map(|s| Vec::with_capacity(s.samples_per_record * record_count))
        .collect();
    let mut data = bytes[header_bytes..].chunks_exact(2);
    for _ in 0..record_count {
        for (si, spec) in signals.iter().enumerate() {
            for _ in 0..spec.samples_per_record {
                // chunk count was checked against data_len above
                let pair = data.next().expect("sample pair");
                let digital = i16::from_le_bytes([pair[0], pair[1]]);
                let d = i32::from(digital);
                if d < spec.dig_min || d > spec.dig_max {
                    return Err(EdfError::InconsistentSignal {
                        signal: si,
                        reason: format!(
                            "digital sample {d} outside [{}, {}]",
                            spec.dig_min, spec.dig_max
                        ),
                    });
                }
                samples[si].push(spec.to_physical(digital));
            }
        }
    }

    Ok(Recording {
        header: EdfHeader {
            version,
            patient_id,
            recording_id,
            start_date,
            start_time,
            header_bytes,
            record_count,
            record_duration_s,
            signal_count,
        },
        signals,
        samples,
        global_start_s: 0,
    })
}

fn put(out: &mut Vec<u8>, field: &'static str, value: &str, width: usize) -> Result<()> {
    if value.len() > width || !value.is_ascii() {
        return Err(EdfError::FieldOverflow {
            field,
            value: value.to_string(),
            width,
        });
    }
    out.extend_from_slice(value.as_bytes());
    out.extend(std::iter::repeat_n(b' ', width - value.len()));
    Ok(())
}

/// Shortest decimal rendering of `v` that fits `width` characters.
fn format_number(field: &'static str, v: f64, width: usize) -> Result<String> {
    let plain = format!("{v}");
    if plain.len() <= width {
        return Ok(plain);
    }
    for digits in (0..width).rev() {
        let s = format!("{v:.digits$}");
        if s.len() <= width {
            return Ok(s);
        }
    }
    Err(EdfError::FieldOverflow {
        field,
        value: plain,
        width,
    })
}

/// Encodes a recording as an EDF byte stream.
pub fn write_edf(recording: &Recording) -> Result<Vec<u8>> {
    let ns = recording.signals.len();
    if ns == 0 {
        return Err(malformed("signal_count", "at least one signal required"));
    }
    if recording.samples.len() != ns {
        return Err(EdfError::InconsistentSignal {
            signal: 0,
            reason: format!("{} sample vectors for {ns} signals", recording.samples.len()),
        });
    }
    for (i, spec) in recording.signals.iter().enumerate() {
        spec.validate(i)?;
    }
    let record_count = recording.header.record_count;
    for (i, (spec, xs)) in recording.signals.iter().zip(&recording.samples).enumerate() {
        if xs.len() != spec.samples_per_record * record_count {
            return Err(EdfError::InconsistentSignal {
                signal: i,
                reason: format!(
                    "{} samples, expected {} records x {}",
                    xs.len(),
                    record_count,
                    spec.samples_per_record
                ),
            });
        }
    }
    let digital = recording.digital_samples()?;

    let h = &recording.header;
    let header_bytes = MAIN_HEADER_LEN + SIGNAL_HEADER_LEN * ns;
    let record_samples: usize = recording.signals.iter().map(|s| s.samples_per_record).sum();
    let mut out = Vec::with_capacity(header_bytes + 2 * record_samples * record_count);
    put(&mut out, "version", &h.version, 8)?;
    put(&mut out, "patient_id", &h.patient_id, 80)?;
    put(&mut out, "recording_id", &h.recording_id, 80)?;
    check_date_like("start_date", &h.start_date)?;
    put(&mut out, "start_date", &h.start_date, 8)?;
    check_date_like("start_time", &h.start_time)?;
    put(&mut out, "start_time", &h.start_time, 8)?;
    put(&mut out, "header_bytes", &header_bytes.to_string(), 8)?;
    put(&mut out, "reserved", "", 44)?;
    put(&mut out, "record_count", &record_count.to_string(), 8)?;
    put(
        &mut out,
        "record_duration",
        &format_number("record_duration", h.record_duration_s, 8)?,
        8,
    )?;
    put(&mut out, "signal_count", &ns.to_string(), 4)?;

    let sig = &recording.signals;
    for s in sig {
        put(&mut out, "label", &s.label, 16)?;
    }
    for s in sig {
        put(&mut out, "transducer", &s.transducer, 80)?;
    }
    for s in sig {
        put(&mut out, "physical_dim", &s.physical_dim, 8)?;
    }
    for s in sig {
        put(&mut out, "physical_min", &format_number("physical_min", s.phys_min, 8)?, 8)?;
    }
    for s in sig {
        put(&mut out, "physical_max", &format_number("physical_max", s.phys_max, 8)?, 8)?;
    }
    for s in sig {
        put(&mut out, "digital_min", &s.dig_min.to_string(), 8)?;
    }
    for s in sig {
        put(&mut out, "digital_max", &s.dig_max.to_string(), 8)?;
    }
    for s in sig {
        put(&mut out, "prefiltering", &s.prefiltering, 80)?;
    }
    for s in sig {
        put(&mut out, "samples_per_record", &s.samples_per_record.to_string(), 8)?;
    }
    for _ in sig {
        put(&mut out, "reserved", "", 32)?;
    }
    debug_assert_eq!(out.len(), header_bytes);

    for r in 0..record_count {
        for (spec, codes) in sig.iter().zip(&digital) {
            let n = spec.samples_per_record;
            for &d in &codes[r * n..(r + 1) * n] {
                out.extend_from_slice(&d.to_le_bytes());
            }
        }
    }
    Ok(out)
}
