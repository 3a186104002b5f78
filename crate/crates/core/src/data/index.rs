//! Stride sampling of labeled frames and whitespace-separated index files.
//!
//! An index file holds one record per line: five input frame paths followed by
//! the label path. Relative paths resolve against the index file's directory.
//! Lines starting with `#` are metadata (`# split = train`, `# stride = 3`) or
//! comments.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{read_image, read_label, DataError, Result, Sample};

/// Frames per record.
pub const SEQ: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subset {
    Train,
    TestNormal,
}

/// Subset, labeled frame, stride, and the sampled 1-based frame numbers.
pub const TABLE_I: [(Subset, usize, usize, [usize; SEQ]); 8] = [
    (Subset::Train, 13, 3, [1, 4, 7, 10, 13]),
    (Subset::Train, 13, 2, [5, 7, 9, 11, 13]),
    (Subset::Train, 13, 1, [9, 10, 11, 12, 13]),
    (Subset::Train, 20, 3, [8, 11, 14, 17, 20]),
    (Subset::Train, 20, 2, [12, 14, 16, 18, 20]),
    (Subset::Train, 20, 1, [16, 17, 18, 19, 20]),
    (Subset::TestNormal, 13, 1, [9, 10, 11, 12, 13]),
    (Subset::TestNormal, 20, 1, [16, 17, 18, 19, 20]),
];

/// 1-based frame numbers `labeled_at − 4s, …, labeled_at − s, labeled_at`.
pub fn sample_frames(segment_len: usize, labeled_at: usize, stride: usize) -> Result<[usize; SEQ]> {
    if stride == 0 {
        return Err(DataError::Invalid("stride must be positive".into()));
    }
    if labeled_at == 0 || labeled_at > segment_len {
        return Err(DataError::Invalid(format!("labeled frame {labeled_at} outside a {segment_len}-frame segment")));
    }
    let span = (SEQ - 1) * stride;
    if labeled_at <= span {
        return Err(DataError::Invalid(format!("stride {stride} reaches before frame 1 from frame {labeled_at}")));
    }
    Ok(std::array::from_fn(|i| labeled_at - span + i * stride))
}

/// Every window of five consecutive frames: `(1..5), (2..6), …` until the segment ends.
pub fn sliding_windows(segment_len: usize) -> Vec<[usize; SEQ]> {
    (1..=segment_len.saturating_sub(SEQ - 1)).map(|s| std::array::from_fn(|i| s + i)).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub inputs: [PathBuf; SEQ],
    pub label: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatasetIndex {
    pub records: Vec<Record>,
    pub split: Option<String>,
    pub stride: Option<usize>,
    /// Directory relative paths resolve against.
    pub root: PathBuf,
}

impl DatasetIndex {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    /// Reads the frames and label of record `i`.
    pub fn load_sample(&self, i: usize) -> Result<Sample> {
        let rec = self.records.get(i).ok_or_else(|| DataError::Invalid(format!("record {i} out of range")))?;
        let frames = rec.inputs.iter().map(|p| read_image(self.resolve(p))).collect::<Result<Vec<_>>>()?;
        let label = read_label(self.resolve(&rec.label))?;
        let sample = Sample { frames, label: Some(label), source: rec.label.display().to_string() };
        sample.validate()?;
        Ok(sample)
    }
}

/// Parses `path`; every referenced file must exist.
pub fn load_index(path: impl AsRef<Path>) -> Result<DatasetIndex> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut index = DatasetIndex { root, ..DatasetIndex::default() };
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        let parse_err = |message: String| DataError::Parse { path: path.to_path_buf(), line: line_no, message };
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(meta) = trimmed.strip_prefix('#') {
            if let Some((k, v)) = meta.split_once('=') {
                match k.trim() {
                    "split" => index.split = Some(v.trim().to_string()),
                    "stride" => index.stride = Some(v.trim().parse().map_err(|_| parse_err(format!("bad stride {v:?}")))?),
                    _ => {}
                }
            }
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != SEQ + 1 {
            return Err(parse_err(format!("expected {} paths, found {}", SEQ + 1, fields.len())));
        }
        let rec = Record {
            inputs: std::array::from_fn(|i| PathBuf::from(fields[i])),
            label: PathBuf::from(fields[SEQ]),
        };
        for p in rec.inputs.iter().chain(std::iter::once(&rec.label)) {
            if !index.resolve(p).is_file() {
                return Err(DataError::Missing { path: path.to_path_buf(), line: line_no, missing: p.clone() });
            }
        }
        index.records.push(rec);
    }
    Ok(index)
}

/// Writes `index` in the format [`load_index`] reads.
pub fn write_index(path: impl AsRef<Path>, index: &DatasetIndex) -> Result<()> {
    let mut out = String::new();
    if let Some(s) = &index.split {
        writeln!(out, "# split = {s}").expect("string write");
    }
    if let Some(s) = index.stride {
        writeln!(out, "# stride = {s}").expect("string write");
    }
    for rec in &index.records {
        let mut fields = Vec::with_capacity(SEQ + 1);
        for p in rec.inputs.iter().chain(std::iter::once(&rec.label)) {
            let s = p.to_str().ok_or_else(|| DataError::Invalid(format!("non-UTF-8 path {}", p.display())))?;
            if s.is_empty() || s.chars().any(char::is_whitespace) {
                return Err(DataError::Invalid(format!("path {s:?} cannot be written to an index")));
            }
            fields.push(s);
        }
        writeln!(out, "{}", fields.join(" ")).expect("string write");
    }
    std::fs::write(path, out)?;
    Ok(())
}
