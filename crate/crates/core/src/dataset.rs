//! WISDM-style raw accelerometer ingestion: parsing, run building,
//! windowing, normalisation, splitting and class statistics.
//!
//! A raw record is `subject,label,timestamp,x,y,z` terminated by `;` and/or a
//! newline. Bad records are counted and skipped, never fatal.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use crate::error::{HarError, Result};
use crate::numerics::SeededRng;

/// Upper bound on acceleration magnitude (m/s²) accepted from a raw record.
pub const MAX_MAGNITUDE: f64 = 80.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ActivityLabel {
    Walking = 0,
    Jogging = 1,
    Upstairs = 2,
    Downstairs = 3,
    Sitting = 4,
    Standing = 5,
}

impl ActivityLabel {
    pub const ALL: [ActivityLabel; 6] = [
        ActivityLabel::Walking,
        ActivityLabel::Jogging,
        ActivityLabel::Upstairs,
        ActivityLabel::Downstairs,
        ActivityLabel::Sitting,
        ActivityLabel::Standing,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ActivityLabel::Walking => "Walking",
            ActivityLabel::Jogging => "Jogging",
            ActivityLabel::Upstairs => "Upstairs",
            ActivityLabel::Downstairs => "Downstairs",
            ActivityLabel::Sitting => "Sitting",
            ActivityLabel::Standing => "Standing",
        }
    }
}

impl fmt::Display for ActivityLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownLabel(pub String);

impl FromStr for ActivityLabel {
    type Err = UnknownLabel;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|l| l.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| UnknownLabel(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub subject: u32,
    pub label: ActivityLabel,
    pub timestamp: i64,
    pub accel: [f64; 3],
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ParseReport {
    /// Records seen. Usually one per line; a line holding several
    /// `;`-terminated records counts each of them.
    pub lines_read: u64,
    pub accepted: u64,
    pub malformed: u64,
    pub unknown_label: u64,
    pub non_finite: u64,
    pub out_of_range: u64,
}

impl ParseReport {
    pub fn skipped(&self) -> u64 {
        self.malformed + self.unknown_label + self.non_finite + self.out_of_range
    }
}

enum Rejection {
    Malformed,
    UnknownLabel,
    NonFinite,
    OutOfRange,
}

fn parse_record(rec: &str) -> std::result::Result<Sample, Rejection> {
    let fields: Vec<&str> = rec.split(',').map(str::trim).collect();
    if fields.len() != 6 || fields.iter().any(|f| f.is_empty()) {
        return Err(Rejection::Malformed);
    }
    let subject: u32 = fields[0].parse().map_err(|_| Rejection::Malformed)?;
    let label: ActivityLabel = fields[1].parse().map_err(|_| Rejection::UnknownLabel)?;
    let timestamp: i64 = fields[2].parse().map_err(|_| Rejection::Malformed)?;
    let mut accel = [0.0f64; 3];
    for (a, f) in accel.iter_mut().zip(&fields[3..]) {
        *a = f.parse().map_err(|_| Rejection::Malformed)?;
    }
    if accel.iter().any(|v| !v.is_finite()) {
        return Err(Rejection::NonFinite);
    }
    if accel.iter().map(|v| v * v).sum::<f64>().sqrt() >= MAX_MAGNITUDE {
        return Err(Rejection::OutOfRange);
    }
    Ok(Sample {
        subject,
        label,
        timestamp,
        accel,
    })
}

/// Parses a raw stream. Only read failures are errors.
pub fn parse_raw<R: BufRead>(mut reader: R) -> Result<(Vec<Sample>, ParseReport)> {
    let mut samples = Vec::new();
    let mut report = ParseReport::default();
    let mut buf = Vec::new();
    loop {
        buf.clear();
        if reader.read_until(b'\n', &mut buf)? == 0 {
            break;
        }
        let line = String::from_utf8_lossy(&buf);
        for rec in line.split(';') {
            let rec = rec.trim();
            if rec.is_empty() {
                continue;
            }
            report.lines_read += 1;
            match parse_record(rec) {
                Ok(s) => {
                    report.accepted += 1;
                    samples.push(s);
                }
                Err(Rejection::Malformed) => report.malformed += 1,
                Err(Rejection::UnknownLabel) => report.unknown_label += 1,
                Err(Rejection::NonFinite) => report.non_finite += 1,
                Err(Rejection::OutOfRange) => report.out_of_range += 1,
            }
        }
    }
    Ok((samples, report))
}

/// Maximal stretch of consecutive samples with one subject and one label.
#[derive(Debug, Clone, PartialEq)]
pub struct Run {
    pub subject: u32,
    pub label: ActivityLabel,
    pub samples: Vec<Sample>,
}

pub fn build_runs(samples: &[Sample]) -> Vec<Run> {
    let mut runs: Vec<Run> = Vec::new();
    for s in samples {
        match runs.last_mut() {
            Some(r) if r.subject == s.subject && r.label == s.label => r.samples.push(*s),
            _ => runs.push(Run {
                subject: s.subject,
                label: s.label,
                samples: vec![*s],
            }),
        }
    }
    runs
}

/// Fixed-length, single-label model input.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub label: ActivityLabel,
    pub subject: u32,
    pub values: Vec<[f64; 3]>,
}

/// Number of windows a run of `len` samples yields.
pub fn window_count(len: usize, window_size: usize, stride: usize) -> usize {
    if len < window_size || window_size == 0 || stride == 0 {
        0
    } else {
        (len - window_size) / stride + 1
    }
}

/// Windows at offsets `0, stride, 2·stride, …` that fit inside the run.
pub fn segment(run: &Run, window_size: usize, stride: usize) -> Vec<Window> {
    let n = window_count(run.samples.len(), window_size, stride);
    (0..n)
        .map(|k| {
            let start = k * stride;
            Window {
                label: run.label,
                subject: run.subject,
                values: run.samples[start..start + window_size]
                    .iter()
                    .map(|s| s.accel)
                    .collect(),
            }
        })
        .collect()
}

pub fn segment_all(runs: &[Run], window_size: usize, stride: usize) -> Vec<Window> {
    runs.iter().flat_map(|r| segment(r, window_size, stride)).collect()
}

/// Per-channel z-score statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl ChannelStats {
    pub const STD_FLOOR: f64 = 1e-8;

    /// Population mean and standard deviation over every row of every window.
    pub fn fit(windows: &[Window]) -> Result<Self> {
        let n: usize = windows.iter().map(|w| w.values.len()).sum();
        if n == 0 {
            return Err(HarError::EmptyInput("normalisation needs training windows"));
        }
        let mut mean = [0.0; 3];
        for row in windows.iter().flat_map(|w| &w.values) {
            for c in 0..3 {
                mean[c] += row[c];
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = [0.0; 3];
        for row in windows.iter().flat_map(|w| &w.values) {
            for c in 0..3 {
                let d = row[c] - mean[c];
                var[c] += d * d;
            }
        }
        let std = var.map(|v| (v / n as f64).sqrt().max(Self::STD_FLOOR));
        Ok(Self { mean, std })
    }

    pub fn apply_row(&self, row: &mut [f64; 3]) {
        for ((v, m), s) in row.iter_mut().zip(self.mean).zip(self.std) {
            *v = (*v - m) / s;
        }
    }

    pub fn apply(&self, windows: &mut [Window]) {
        for row in windows.iter_mut().flat_map(|w| w.values.iter_mut()) {
            self.apply_row(row);
        }
    }
}

/// Fits statistics on the training windows and applies them to both sets.
pub fn normalize(train: &mut [Window], test: &mut [Window]) -> Result<ChannelStats> {
    let stats = ChannelStats::fit(train)?;
    stats.apply(train);
    stats.apply(test);
    Ok(stats)
}

fn check_ratio(ratio: f64) -> Result<()> {
    if ratio > 0.0 && ratio < 1.0 {
        Ok(())
    } else {
        Err(HarError::InvalidRatio(ratio))
    }
}

/// Seeded shuffle, then the first `⌊ratio·N⌋` windows go to training.
pub fn split(windows: Vec<Window>, ratio: f64, seed: u64) -> Result<(Vec<Window>, Vec<Window>)> {
    check_ratio(ratio)?;
    if windows.is_empty() {
        return Err(HarError::EmptyInput("no windows to split"));
    }
    let n_train = (ratio * windows.len() as f64).floor() as usize;
    let mut order: Vec<usize> = (0..windows.len()).collect();
    SeededRng::new(seed).shuffle(&mut order);
    let mut slots: Vec<Option<Window>> = windows.into_iter().map(Some).collect();
    let mut take = |idx: &[usize]| {
        idx.iter()
            .map(|&i| slots[i].take().expect("index used once"))
            .collect::<Vec<_>>()
    };
    let train = take(&order[..n_train]);
    let test = take(&order[n_train..]);
    Ok((train, test))
}

/// Subject-wise variant: subjects are shuffled and the first `⌊ratio·S⌋`
/// subjects' windows go to training.
pub fn split_by_subject(windows: Vec<Window>, ratio: f64, seed: u64) -> Result<(Vec<Window>, Vec<Window>)> {
    check_ratio(ratio)?;
    if windows.is_empty() {
        return Err(HarError::EmptyInput("no windows to split"));
    }
    let mut subjects: Vec<u32> = windows.iter().map(|w| w.subject).collect();
    subjects.sort_unstable();
    subjects.dedup();
    SeededRng::new(seed).shuffle(&mut subjects);
    let n_train = (ratio * subjects.len() as f64).floor() as usize;
    let train_subjects = &subjects[..n_train];
    Ok(windows.into_iter().partition(|w| train_subjects.contains(&w.subject)))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClassDistribution {
    pub counts: [u64; 6],
}

impl ClassDistribution {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Share of `label` in percent, 0 for an empty set.
    pub fn percent(&self, label: ActivityLabel) -> f64 {
        let total = self.total();
        if total == 0 {
            0.0
        } else {
            100.0 * self.counts[label.index()] as f64 / total as f64
        }
    }
}

pub fn class_distribution(samples: &[Sample]) -> ClassDistribution {
    let mut d = ClassDistribution::default();
    for s in samples {
        d.counts[s.label.index()] += 1;
    }
    d
}

/// Writes one window per line: label index, then every value row by row.
pub fn write_windows<W: Write>(windows: &[Window], mut out: W) -> Result<()> {
    for w in windows {
        write!(out, "{}", w.label.index())?;
        for row in &w.values {
            for v in row {
                write!(out, ",{v}")?;
            }
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Inverse of [`write_windows`]. Subject ids are not stored and come back as 0.
pub fn read_windows<R: BufRead>(reader: R) -> Result<Vec<Window>> {
    let mut windows = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = || HarError::Io(format!("window file line {}: malformed", lineno + 1));
        let mut fields = line.split(',');
        let label = fields
            .next()
            .and_then(|f| f.trim().parse::<usize>().ok())
            .and_then(ActivityLabel::from_index)
            .ok_or_else(bad)?;
        let vals: Vec<f64> = fields
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad())?;
        if !vals.len().is_multiple_of(3) {
            return Err(bad());
        }
        windows.push(Window {
            label,
            subject: 0,
            values: vals.chunks(3).map(|c| [c[0], c[1], c[2]]).collect(),
        });
    }
    Ok(windows)
}

/// Preprocessing settings that must match between training and evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Preprocessing {
    pub split_ratio: f64,
    pub subject_split: bool,
    /// Statistics fitted on the training split, or `None` when disabled.
    pub normalization: Option<ChannelStats>,
}

impl Default for Preprocessing {
    fn default() -> Self {
        Self {
            split_ratio: 0.7,
            subject_split: false,
            normalization: None,
        }
    }
}

/// Output of the window pipeline.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: Vec<Window>,
    pub test: Vec<Window>,
    pub preprocessing: Preprocessing,
}

/// Samples → runs → windows → split → (optional) normalisation.
pub fn prepare_windows(
    samples: &[Sample],
    window_size: usize,
    stride: usize,
    split_ratio: f64,
    subject_split: bool,
    normalize_inputs: bool,
    seed: u64,
) -> Result<PreparedData> {
    let runs = build_runs(samples);
    let windows = segment_all(&runs, window_size, stride);
    let (mut train, mut test) = if subject_split {
        split_by_subject(windows, split_ratio, seed)?
    } else {
        split(windows, split_ratio, seed)?
    };
    let normalization = if normalize_inputs {
        Some(normalize(&mut train, &mut test)?)
    } else {
        None
    };
    Ok(PreparedData {
        train,
        test,
        preprocessing: Preprocessing {
            split_ratio,
            subject_split,
            normalization,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(subject: u32, label: ActivityLabel, t: i64) -> Sample {
        Sample {
            subject,
            label,
            timestamp: t,
            accel: [t as f64, 0.0, 1.0],
        }
    }

    #[test]
    fn parses_the_reference_line() {
        let (s, r) = parse_raw("1,Walking,100,0.0,9.8,0.0;\n".as_bytes()).unwrap();
        assert_eq!(
            s,
            vec![Sample {
                subject: 1,
                label: ActivityLabel::Walking,
                timestamp: 100,
                accel: [0.0, 9.8, 0.0]
            }]
        );
        assert_eq!((r.lines_read, r.accepted, r.skipped()), (1, 1, 0));
    }

    #[test]
    fn skips_missing_field() {
        let (s, r) = parse_raw("1,Walking,100,0.0,9.8\n".as_bytes()).unwrap();
        assert!(s.is_empty());
        assert_eq!(r.malformed, 1);
    }

    #[test]
    fn rejection_reasons_are_counted() {
        let text = "\
 7 , jogging , 5 , 1.5 , -2 , 3 ;
7,Dancing,5,1,2,3;
7,Walking,5,NaN,2,3;
7,Walking,5,70,70,0;
7,Walking,five,1,2,3;
7,Walking,5,1,2,;

7,Sitting,6,0,0,9.8;7,Sitting,7,0,0,9.7;
";
        let (s, r) = parse_raw(text.as_bytes()).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s[0].label, ActivityLabel::Jogging);
        assert_eq!(s[0].accel, [1.5, -2.0, 3.0]);
        assert_eq!(r.lines_read, 8);
        assert_eq!(r.accepted, 3);
        assert_eq!(r.unknown_label, 1);
        assert_eq!(r.non_finite, 1);
        assert_eq!(r.out_of_range, 1);
        assert_eq!(r.malformed, 2);
        assert_eq!(r.lines_read, r.accepted + r.skipped());
    }

    #[test]
    fn label_parsing() {
        assert_eq!("STANDING".parse::<ActivityLabel>().unwrap(), ActivityLabel::Standing);
        assert_eq!("downstairs".parse::<ActivityLabel>().unwrap().index(), 3);
        assert!("Laying".parse::<ActivityLabel>().is_err());
        for (i, l) in ActivityLabel::ALL.iter().enumerate() {
            assert_eq!(l.index(), i);
            assert_eq!(ActivityLabel::from_index(i), Some(*l));
        }
    }

    #[test]
    fn runs_split_on_label_and_subject() {
        use ActivityLabel::*;
        let same: Vec<Sample> = (0..5).map(|t| sample(1, Walking, t)).collect();
        assert_eq!(build_runs(&same).len(), 1);

        let labels = [Walking, Walking, Jogging, Jogging, Walking];
        let seq: Vec<Sample> = labels
            .iter()
            .enumerate()
            .map(|(t, &l)| sample(1, l, t as i64))
            .collect();
        let runs = build_runs(&seq);
        assert_eq!(runs.iter().map(|r| r.samples.len()).collect::<Vec<_>>(), vec![2, 2, 1]);

        let subj = vec![sample(1, Walking, 0), sample(2, Walking, 1)];
        assert_eq!(build_runs(&subj).len(), 2);
        assert!(build_runs(&[]).is_empty());
    }

    fn run_of(len: usize) -> Run {
        Run {
            subject: 3,
            label: ActivityLabel::Upstairs,
            samples: (0..len as i64).map(|t| sample(3, ActivityLabel::Upstairs, t)).collect(),
        }
    }

    #[test]
    fn segment_boundaries() {
        assert_eq!(segment(&run_of(180), 180, 100).len(), 1);
        assert_eq!(segment(&run_of(179), 180, 100).len(), 0);
        let w = segment(&run_of(360), 180, 100);
        assert_eq!(w.len(), 2);
        assert_eq!(w[0].values[0][0], 0.0);
        assert_eq!(w[1].values[0][0], 100.0);
        assert_eq!(w[1].values[179][0], 279.0);
        assert!(w
            .iter()
            .all(|w| w.label == ActivityLabel::Upstairs && w.values.len() == 180));
    }

    #[test]
    fn normalize_constant_channel_goes_to_zero() {
        let mut train = vec![Window {
            label: ActivityLabel::Sitting,
            subject: 1,
            values: vec![[2.0, 1.0, -4.0], [2.0, 3.0, -4.0]],
        }];
        let mut test = train.clone();
        let stats = normalize(&mut train, &mut test).unwrap();
        assert_eq!(stats.std[0], ChannelStats::STD_FLOOR);
        assert!(train[0].values.iter().all(|r| r[0] == 0.0 && r[2] == 0.0));
        assert_eq!(train[0].values[0][1], -1.0);
        assert_eq!(test, train);
        assert!(normalize(&mut [], &mut []).is_err());
    }

    #[test]
    fn split_sizes_and_errors() {
        let windows: Vec<Window> = (0..10)
            .map(|i| Window {
                label: ActivityLabel::Walking,
                subject: i,
                values: vec![[i as f64; 3]],
            })
            .collect();
        let (a, b) = split(windows.clone(), 0.7, 1).unwrap();
        assert_eq!((a.len(), b.len()), (7, 3));
        let (a2, b2) = split(windows.clone(), 0.7, 1).unwrap();
        assert_eq!((a, b), (a2, b2));
        assert!(split(windows.clone(), 1.0, 1).is_err());
        assert!(split(windows.clone(), 0.0, 1).is_err());
        assert!(split(Vec::new(), 0.7, 1).is_err());

        let (tr, te) = split_by_subject(windows, 0.7, 5).unwrap();
        assert_eq!((tr.len(), te.len()), (7, 3));
        assert!(tr.iter().all(|w| te.iter().all(|v| v.subject != w.subject)));
    }

    #[test]
    fn distribution_counts() {
        use ActivityLabel::*;
        assert_eq!(class_distribution(&[]).total(), 0);
        assert_eq!(class_distribution(&[]).percent(Walking), 0.0);
        let s: Vec<Sample> = [Walking, Walking, Jogging, Sitting, Walking]
            .iter()
            .map(|&l| sample(1, l, 0))
            .collect();
        let d = class_distribution(&s);
        assert_eq!(d.counts, [3, 1, 0, 0, 1, 0]);
        assert_eq!(d.percent(Walking), 60.0);
    }

    #[test]
    fn window_text_format() {
        let w = vec![Window {
            label: ActivityLabel::Downstairs,
            subject: 9,
            values: vec![[1.0, -2.5, 3.0], [0.125, 0.0, 7.0]],
        }];
        let mut buf = Vec::new();
        write_windows(&w, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "3,1,-2.5,3,0.125,0,7\n");
        let back = read_windows(&buf[..]).unwrap();
        assert_eq!(back[0].values, w[0].values);
        assert_eq!(back[0].label, w[0].label);
    }
}
