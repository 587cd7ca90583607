//! Annotation summary parsing and dataset manifest construction.
//!
//! The summary text lists, per recording file, its wall-clock start and end
//! time and the seizures it contains as offsets in seconds from the start of
//! that file. [`build_manifest`] deduplicates and orders the files and moves
//! every seizure onto one global timeline whose origin is the start of the
//! earliest file.

use serde::{Deserialize, Serialize};
use thiserror::Error;

const DAY_S: i64 = 86_400;
const HALF_DAY_S: i64 = DAY_S / 2;

#[derive(Debug, Error, PartialEq)]
pub enum ManifestError {
    #[error("line {line}: {reason}")]
    GrammarError { line: usize, reason: String },
    #[error("file {file}: seizure end {end_s} s is not after start {start_s} s")]
    NegativeDuration { file: String, start_s: i64, end_s: i64 },
    #[error("files {first} and {second} overlap in time")]
    OverlappingFiles { first: String, second: String },
    #[error("file {file}: seizure [{start_s}, {end_s}) s lies outside the file's {duration_s} s span")]
    SeizureOutsideFile {
        file: String,
        start_s: i64,
        end_s: i64,
        duration_s: i64,
    },
    #[error("summary contains no file entries")]
    Empty,
}

pub type Result<T> = std::result::Result<T, ManifestError>;

/// A wall-clock time of day, in seconds after midnight. Hours above 23 are
/// accepted as-is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ClockTime(pub i64);

impl ClockTime {
    pub fn parse(text: &str) -> Option<Self> {
        let mut parts = text.trim().split(':');
        let h: i64 = parts.next()?.trim().parse().ok()?;
        let m: i64 = parts.next()?.trim().parse().ok()?;
        let s: i64 = parts.next()?.trim().parse().ok()?;
        if parts.next().is_some() || h < 0 || !(0..60).contains(&m) || !(0..60).contains(&s) {
            return None;
        }
        Some(Self(h * 3600 + m * 60 + s))
    }

    pub fn hms(self) -> String {
        format!("{:02}:{:02}:{:02}", self.0 / 3600, (self.0 / 60) % 60, self.0 % 60)
    }
}

/// One `File Name:` block of the summary.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryEntry {
    pub file_name: String,
    pub start: ClockTime,
    pub end: ClockTime,
    /// Seizure (start, end) offsets in seconds from the start of the file.
    pub seizures: Vec<(i64, i64)>,
}

/// Everything extracted from a summary text.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AnnotationSummary {
    pub sampling_rate_hz: Option<u32>,
    /// Channel labels of the first channel listing.
    pub channels: Vec<String>,
    pub entries: Vec<SummaryEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeizureInterval {
    pub start_s: i64,
    pub end_s: i64,
}

impl SeizureInterval {
    pub fn contains(&self, t: i64) -> bool {
        self.start_s <= t && t < self.end_s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestFile {
    pub file_name: String,
    pub start_s: i64,
    pub end_s: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub patient_id: String,
    pub sampling_rate_hz: u32,
    pub channel_roster: Vec<String>,
    pub files: Vec<ManifestFile>,
    pub seizures: Vec<SeizureInterval>,
}

fn key_value<'a>(line: &'a str, key: &str) -> Option<&'a str> {
    line.strip_prefix(key).map(str::trim)
}

/// `Seizure Start Time:` or `Seizure 3 Start Time:`.
fn seizure_field<'a>(line: &'a str, which: &str) -> Option<&'a str> {
    let rest = line.strip_prefix("Seizure ")?;
    let rest = match rest.split_once(' ') {
        Some((n, tail)) if n.chars().all(|c| c.is_ascii_digit()) => tail,
        _ => rest,
    };
    rest.strip_prefix(which)?.strip_prefix(" Time:").map(str::trim)
}

fn seconds_value(text: &str) -> Option<i64> {
    text.strip_suffix("seconds")
        .or_else(|| text.strip_suffix("secs"))
        .unwrap_or(text)
        .trim()
        .parse()
        .ok()
}

/// Parses summary text into per-file annotation entries.
pub fn parse_summary(text: &str) -> Result<AnnotationSummary> {
    let mut out = AnnotationSummary::default();
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).peekable();
    let mut roster_closed = false;

    // Inside a file block every line is required; a blank line ends the block early.
    fn required<'a, I: Iterator<Item = (usize, &'a str)>>(
        lines: &mut std::iter::Peekable<I>,
        what: &str,
    ) -> Result<(usize, &'a str)> {
        match lines.next() {
            Some((n, l)) if !l.is_empty() => Ok((n, l)),
            Some((n, _)) => Err(ManifestError::GrammarError {
                line: n,
                reason: format!("expected `{what}`, found a blank line"),
            }),
            None => Err(ManifestError::GrammarError {
                line: 0,
                reason: format!("unexpected end of text, expected `{what}`"),
            }),
        }
    }

    while let Some((n, line)) = lines.next() {
        if let Some(v) = key_value(line, "Data Sampling Rate:") {
            let rate = v
                .strip_suffix("Hz")
                .unwrap_or(v)
                .trim()
                .parse()
                .map_err(|_| ManifestError::GrammarError {
                    line: n,
                    reason: format!("bad sampling rate `{v}`"),
                })?;
            out.sampling_rate_hz = Some(rate);
        } else if let Some(rest) = line.strip_prefix("Channel ") {
            if roster_closed {
                continue;
            }
            if let Some((_, label)) = rest.split_once(':') {
                out.channels.push(label.trim().to_string());
            }
        } else if let Some(name) = key_value(line, "File Name:") {
            if !out.channels.is_empty() {
                roster_closed = true;
            }
            let (ln, l) = required(&mut lines, "File Start Time")?;
            let start = key_value(l, "File Start Time:")
                .and_then(ClockTime::parse)
                .ok_or_else(|| ManifestError::GrammarError {
                    line: ln,
                    reason: format!("expected `File Start Time: hh:mm:ss`, found `{l}`"),
                })?;
            let (ln, l) = required(&mut lines, "File End Time")?;
            let end = key_value(l, "File End Time:")
                .and_then(ClockTime::parse)
                .ok_or_else(|| ManifestError::GrammarError {
                    line: ln,
                    reason: format!("expected `File End Time: hh:mm:ss`, found `{l}`"),
                })?;
            let (ln, l) = required(&mut lines, "Number of Seizures in File")?;
            let count: usize = key_value(l, "Number of Seizures in File:")
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| ManifestError::GrammarError {
                    line: ln,
                    reason: format!("expected `Number of Seizures in File: <int>`, found `{l}`"),
                })?;
            let mut seizures = Vec::with_capacity(count);
            for _ in 0..count {
                // A seizure is one Start line and one End line, in either order.
                let (ln, l) = required(&mut lines, "Seizure Start Time")?;
                let (ln2, l2) = required(&mut lines, "Seizure End Time")?;
                let field = |line: &str, which: &str| seizure_field(line, which).and_then(seconds_value);
                let pair = match (field(l, "Start"), field(l2, "End")) {
                    (Some(s), Some(e)) => Some((s, e)),
                    _ => field(l2, "Start").zip(field(l, "End")),
                };
                let Some((s, e)) = pair else {
                    let (line, found) = if field(l, "Start").is_some() || field(l, "End").is_some() {
                        (ln2, l2)
                    } else {
                        (ln, l)
                    };
                    return Err(ManifestError::GrammarError {
                        line,
                        reason: format!("expected a `Seizure Start/End Time: <int> seconds` pair, found `{found}`"),
                    });
                };
                if e <= s || s < 0 {
                    return Err(ManifestError::NegativeDuration {
                        file: name.to_string(),
                        start_s: s,
                        end_s: e,
                    });
                }
                seizures.push((s, e));
            }
            if let Some(&(ln, l)) = lines.peek() {
                if l.starts_with("Seizure ") {
                    return Err(ManifestError::GrammarError {
                        line: ln,
                        reason: format!("more seizure lines than the declared {count}"),
                    });
                }
            }
            out.entries.push(SummaryEntry {
                file_name: name.to_string(),
                start,
                end,
                seizures,
            });
        } else if line.starts_with("Seizure ") || line.starts_with("File Start Time:") {
            return Err(ManifestError::GrammarError {
                line: n,
                reason: format!("`{line}` outside a file block"),
            });
        }
        // Anything else (banners, section titles, separators) carries no data.
    }
    Ok(out)
}

/// Picks the day for `clock` that lands nearest to `reference`, i.e. within
/// `[reference - 12 h, reference + 12 h)`.
fn place_near(clock: i64, reference: i64) -> i64 {
    let offset = (clock - reference + HALF_DAY_S).rem_euclid(DAY_S) - HALF_DAY_S;
    reference + offset
}

fn patient_of(file_name: &str) -> String {
    let stem = file_name.rsplit_once('.').map_or(file_name, |(s, _)| s);
    stem.split_once('_').map_or(stem, |(p, _)| p).to_string()
}

/// Deduplicates, orders and globalizes the summary's file entries.
///
/// Entries sharing a wall-clock start time are duplicates; the first one in
/// summary order wins. Each file's day is resolved against the previous
/// file in summary order by taking the placement within twelve hours of it,
/// so consecutive files crossing midnight advance one day while files listed
/// slightly out of order stay on the same day. Files are then sorted by
/// absolute start, and the timeline origin is the earliest start.
pub fn build_manifest(summary: &AnnotationSummary) -> Result<DatasetManifest> {
    let first = summary.entries.first().ok_or(ManifestError::Empty)?;

    let mut seen = std::collections::HashSet::new();
    let mut placed: Vec<(i64, i64, &SummaryEntry)> = Vec::new();
    let mut reference = first.start.0;
    for entry in &summary.entries {
        if !seen.insert(entry.start) {
            continue;
        }
        let start = place_near(entry.start.0, reference);
        let duration = (entry.end.0 - entry.start.0).rem_euclid(DAY_S);
        if duration == 0 {
            return Err(ManifestError::NegativeDuration {
                file: entry.file_name.clone(),
                start_s: entry.start.0,
                end_s: entry.end.0,
            });
        }
        for &(s, e) in &entry.seizures {
            if e <= s || s < 0 {
                return Err(ManifestError::NegativeDuration {
                    file: entry.file_name.clone(),
                    start_s: s,
                    end_s: e,
                });
            }
            if e > duration {
                return Err(ManifestError::SeizureOutsideFile {
                    file: entry.file_name.clone(),
                    start_s: s,
                    end_s: e,
                    duration_s: duration,
                });
            }
        }
        placed.push((start, start + duration, entry));
        reference = start;
    }
    placed.sort_by_key(|&(start, _, _)| start);
    for pair in placed.windows(2) {
        if pair[0].1 > pair[1].0 {
            return Err(ManifestError::OverlappingFiles {
                first: pair[0].2.file_name.clone(),
                second: pair[1].2.file_name.clone(),
            });
        }
    }

    let origin = placed[0].0;
    let files = placed
        .iter()
        .map(|&(s, e, entry)| ManifestFile {
            file_name: entry.file_name.clone(),
            start_s: s - origin,
            end_s: e - origin,
        })
        .collect::<Vec<_>>();
    let seizures = placed
        .iter()
        .flat_map(|&(s, _, entry)| {
            entry.seizures.iter().map(move |&(a, b)| SeizureInterval {
                start_s: s - origin + a,
                end_s: s - origin + b,
            })
        })
        .collect();

    Ok(DatasetManifest {
        patient_id: patient_of(&first.file_name),
        sampling_rate_hz: summary.sampling_rate_hz.unwrap_or(256),
        channel_roster: summary.channels.clone(),
        files,
        seizures,
    })
}

/// Renders entries in the summary grammar accepted by [`parse_summary`].
pub fn render_summary(sampling_rate_hz: u32, channels: &[String], entries: &[SummaryEntry]) -> String {
    use std::fmt::Write;
    let mut s = String::new();
    let _ = writeln!(s, "Data Sampling Rate: {sampling_rate_hz} Hz");
    s.push_str("*************************\n\n");
    s.push_str("Channels in EDF Files:\n**********************\n");
    for (i, c) in channels.iter().enumerate() {
        let _ = writeln!(s, "Channel {}: {c}", i + 1);
    }
    for e in entries {
        s.push('\n');
        let _ = writeln!(s, "File Name: {}", e.file_name);
        let _ = writeln!(s, "File Start Time: {}", e.start.hms());
        let _ = writeln!(s, "File End Time: {}", e.end.hms());
        let _ = writeln!(s, "Number of Seizures in File: {}", e.seizures.len());
        for (a, b) in &e.seizures {
            let _ = writeln!(s, "Seizure Start Time: {a} seconds");
            let _ = writeln!(s, "Seizure End Time: {b} seconds");
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "\
Data Sampling Rate: 256 Hz
*************************

Channels in EDF Files:
**********************
Channel 1: FP1-F7
Channel 2: F7-T7

File Name: chb01_01.edf
File Start Time: 11:42:54
File End Time: 12:42:54
Number of Seizures in File: 0

File Name: chb01_03.edf
File Start Time: 13:43:04
File End Time: 14:43:04
Number of Seizures in File: 1
Seizure Start Time: 2996 seconds
Seizure End Time: 3036 seconds
";

    fn entry(name: &str, start: &str, end: &str, seizures: Vec<(i64, i64)>) -> SummaryEntry {
        SummaryEntry {
            file_name: name.into(),
            start: ClockTime::parse(start).unwrap(),
            end: ClockTime::parse(end).unwrap(),
            seizures,
        }
    }

    fn summary(entries: Vec<SummaryEntry>) -> AnnotationSummary {
        AnnotationSummary {
            sampling_rate_hz: Some(256),
            channels: vec![],
            entries,
        }
    }

    #[test]
    fn parses_sample_summary() {
        let s = parse_summary(SAMPLE).unwrap();
        assert_eq!(s.sampling_rate_hz, Some(256));
        assert_eq!(s.channels, vec!["FP1-F7", "F7-T7"]);
        assert_eq!(s.entries.len(), 2);
        assert!(s.entries[0].seizures.is_empty());
        assert_eq!(s.entries[1].seizures, vec![(2996, 3036)]);
    }

    #[test]
    fn localized_seizure_twenty_to_eighty() {
        let text = "File Name: a_01.edf\nFile Start Time: 01:00:00\nFile End Time: 02:00:00\n\
                    Number of Seizures in File: 1\nSeizure 1 Start Time: 20 seconds\nSeizure 1 End Time: 80 seconds\n";
        let s = parse_summary(text).unwrap();
        assert_eq!(s.entries[0].seizures, vec![(20, 80)]);
    }

    #[test]
    fn reversed_seizure_is_negative_duration() {
        let text = "File Name: a_01.edf\nFile Start Time: 01:00:00\nFile End Time: 02:00:00\n\
                    Number of Seizures in File: 1\nSeizure End Time: 10 seconds\nSeizure Start Time: 30 seconds\n";
        assert!(matches!(parse_summary(text), Err(ManifestError::NegativeDuration { start_s: 30, end_s: 10, .. })));
        let text = "File Name: a_01.edf\nFile Start Time: 01:00:00\nFile End Time: 02:00:00\n\
                    Number of Seizures in File: 1\nSeizure Start Time: 30 seconds\nSeizure End Time: 10 seconds\n";
        assert!(matches!(parse_summary(text), Err(ManifestError::NegativeDuration { .. })));
    }

    #[test]
    fn missing_required_field_is_grammar_error() {
        let text = "File Name: a_01.edf\nFile End Time: 02:00:00\n";
        assert!(matches!(parse_summary(text), Err(ManifestError::GrammarError { line: 2, .. })));
        let text = "File Name: a_01.edf\nFile Start Time: 01:00:00\nFile End Time: 02:00:00\n\
                    Number of Seizures in File: 2\nSeizure Start Time: 1 seconds\nSeizure End Time: 5 seconds\n";
        assert!(matches!(parse_summary(text), Err(ManifestError::GrammarError { .. })));
    }

    #[test]
    fn worked_example_globalizes_additively() {
        let m = build_manifest(&summary(vec![
            entry("p_01.edf", "00:00:00", "01:00:00", vec![]),
            entry("p_02.edf", "01:00:00", "02:00:00", vec![(20, 80)]),
        ]))
        .unwrap();
        assert_eq!(m.files[1].start_s, 3600);
        assert_eq!(m.files[1].end_s, 7200);
        assert_eq!(m.seizures, vec![SeizureInterval { start_s: 3620, end_s: 3680 }]);
        assert_eq!(m.patient_id, "p");
    }

    #[test]
    fn duplicate_start_keeps_first() {
        let m = build_manifest(&summary(vec![
            entry("p_01.edf", "10:00:00", "11:00:00", vec![]),
            entry("p_01b.edf", "10:00:00", "11:00:00", vec![(5, 10)]),
        ]))
        .unwrap();
        assert_eq!(m.files.len(), 1);
        assert_eq!(m.files[0].file_name, "p_01.edf");
        assert!(m.seizures.is_empty());
    }

    #[test]
    fn out_of_order_entries_are_sorted() {
        let m = build_manifest(&summary(vec![
            entry("p_03.edf", "12:00:00", "13:00:00", vec![]),
            entry("p_01.edf", "10:00:00", "11:00:00", vec![]),
            entry("p_02.edf", "11:00:00", "12:00:00", vec![]),
        ]))
        .unwrap();
        let names: Vec<_> = m.files.iter().map(|f| f.file_name.as_str()).collect();
        assert_eq!(names, ["p_01.edf", "p_02.edf", "p_03.edf"]);
        assert_eq!(m.files[2].start_s, 7200);
    }

    #[test]
    fn midnight_rollover_adds_a_day() {
        let m = build_manifest(&summary(vec![
            entry("p_01.edf", "22:30:00", "23:30:00", vec![]),
            entry("p_02.edf", "23:30:00", "00:30:00", vec![]),
            entry("p_03.edf", "00:30:00", "01:30:00", vec![(10, 20)]),
        ]))
        .unwrap();
        assert_eq!(m.files[1].end_s, 7200);
        assert_eq!(m.files[2].start_s, 7200);
        assert_eq!(m.seizures[0].start_s, 7210);
    }

    #[test]
    fn overlapping_files_are_rejected() {
        let err = build_manifest(&summary(vec![
            entry("p_01.edf", "10:00:00", "11:00:00", vec![]),
            entry("p_02.edf", "10:30:00", "11:30:00", vec![]),
        ]))
        .unwrap_err();
        assert!(matches!(err, ManifestError::OverlappingFiles { .. }));
    }

    #[test]
    fn seizure_past_file_end_is_rejected() {
        let err = build_manifest(&summary(vec![entry(
            "p_01.edf",
            "10:00:00",
            "10:01:00",
            vec![(30, 90)],
        )]))
        .unwrap_err();
        assert!(matches!(err, ManifestError::SeizureOutsideFile { .. }));
    }

    #[test]
    fn render_then_parse_is_identity() {
        let entries = vec![
            entry("p_01.edf", "10:00:00", "11:00:00", vec![(1, 2), (100, 160)]),
            entry("p_02.edf", "11:00:00", "12:00:00", vec![]),
        ];
        let chans = vec!["FP1-F7".to_string()];
        let text = render_summary(256, &chans, &entries);
        let s = parse_summary(&text).unwrap();
        assert_eq!(s.entries, entries);
        assert_eq!(s.channels, chans);
    }

    #[test]
    fn empty_summary_is_rejected() {
        assert_eq!(build_manifest(&AnnotationSummary::default()), Err(ManifestError::Empty));
    }
}
