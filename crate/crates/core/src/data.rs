//! Photo collections for one person: JSON-Lines manifests, age sampling,
//! stratified subsets and ingestion of raw photo folders.
//!
//! A manifest line looks like
//!
//! ```text
//! {"path": "aligned/img_003.png", "age_years": 41.0, "split": "train", "capture_date": "1998-06-01"}
//! ```
//!
//! Relative paths are resolved against the manifest's directory.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::backends::BackendBundle;
use crate::image::ImageTensor;
use crate::latent::AgeYears;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DataError {
    #[error("cannot read {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: age {value} is outside [0, 100]")]
    AgeOutOfRange { line: usize, value: f64 },
    #[error("line {line}: capture_date {value:?} is not an ISO-8601 date")]
    BadDate { line: usize, value: String },
    #[error("line {line}: duplicate path {path}")]
    DuplicatePath { line: usize, path: PathBuf },
    #[error("line {line}: image {path} does not exist")]
    MissingImage { line: usize, path: PathBuf },
    #[error("image {path} could not be decoded: {message}")]
    Image { path: PathBuf, message: String },
    #[error("the train split is empty")]
    EmptyTrainSplit,
    #[error("{0} records but {1} images")]
    Mismatch(usize, usize),
    #[error("cannot take {requested} train photos, only {available} available")]
    SubsampleTooLarge { requested: usize, available: usize },
    #[error("training ages cover [0, 100]; there is no extrapolation range")]
    NoExtrapolation,
}

type DataResult<T> = Result<T, DataError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Reference,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Reference, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Reference => "reference",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim() {
            "train" => Ok(Split::Train),
            "reference" => Ok(Split::Reference),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhotoRecord {
    pub path: PathBuf,
    pub age_years: AgeYears,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capture_date: Option<String>,
}

impl PhotoRecord {
    pub fn new(path: impl Into<PathBuf>, age_years: AgeYears, split: Split) -> Self {
        Self {
            path: path.into(),
            age_years,
            split,
            capture_date: None,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    path: PathBuf,
    age_years: f64,
    split: Split,
    #[serde(default)]
    capture_date: Option<String>,
}

/// `YYYY-MM-DD`, optionally followed by a `T...` time part.
fn is_iso_date(s: &str) -> bool {
    let date = s.split('T').next().unwrap_or("");
    let b = date.as_bytes();
    if b.len() != 10 || b[4] != b'-' || b[7] != b'-' {
        return false;
    }
    let digits = |r: std::ops::Range<usize>| b[r].iter().all(u8::is_ascii_digit);
    if !(digits(0..4) && digits(5..7) && digits(8..10)) {
        return false;
    }
    let month: u32 = date[5..7].parse().unwrap_or(0);
    let day: u32 = date[8..10].parse().unwrap_or(0);
    (1..=12).contains(&month) && (1..=31).contains(&day)
}

/// Records and their decoded images. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct AgedPhotoCollection {
    records: Vec<PhotoRecord>,
    images: Vec<ImageTensor>,
    age_min: AgeYears,
    age_max: AgeYears,
}

impl AgedPhotoCollection {
    pub fn from_parts(records: Vec<PhotoRecord>, images: Vec<ImageTensor>) -> DataResult<Self> {
        if records.len() != images.len() {
            return Err(DataError::Mismatch(records.len(), images.len()));
        }
        let mut seen = HashSet::new();
        for (i, r) in records.iter().enumerate() {
            if !seen.insert(r.path.clone()) {
                return Err(DataError::DuplicatePath {
                    line: i + 1,
                    path: r.path.clone(),
                });
            }
        }
        let train: Vec<f64> = records
            .iter()
            .filter(|r| r.split == Split::Train)
            .map(|r| r.age_years.years())
            .collect();
        if train.is_empty() {
            return Err(DataError::EmptyTrainSplit);
        }
        let min = train.iter().copied().fold(f64::INFINITY, f64::min);
        let max = train.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(Self {
            records,
            images,
            age_min: AgeYears::saturating(min),
            age_max: AgeYears::saturating(max),
        })
    }

    pub fn records(&self) -> &[PhotoRecord] {
        &self.records
    }

    pub fn images(&self) -> &[ImageTensor] {
        &self.images
    }

    pub fn image(&self, index: usize) -> &ImageTensor {
        &self.images[index]
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Youngest training age.
    pub fn age_min(&self) -> AgeYears {
        self.age_min
    }

    /// Oldest training age.
    pub fn age_max(&self) -> AgeYears {
        self.age_max
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.records.len())
            .filter(|&i| self.records[i].split == split)
            .collect()
    }

    pub fn train_indices(&self) -> Vec<usize> {
        self.indices(Split::Train)
    }

    /// Photo counts per decade (0 = ages 0..10, ..., 10 = age 100).
    pub fn decade_histogram(&self, split: Split) -> BTreeMap<u32, usize> {
        let mut out = BTreeMap::new();
        for r in self.records.iter().filter(|r| r.split == split) {
            *out.entry(decade(r.age_years)).or_insert(0) += 1;
        }
        out
    }

    /// Target age for a uniform draw `u` in [0, 1).
    pub fn target_age_from_unit(&self, u: f64) -> AgeYears {
        let (lo, hi) = (self.age_min.years(), self.age_max.years());
        AgeYears::saturating(lo + u * (hi - lo))
    }

    /// Extrapolated age for a uniform draw `u` in [0, 1): [0, age_min) and
    /// (age_max, 100] are sampled in proportion to their lengths.
    pub fn extrapolation_age_from_unit(&self, u: f64) -> DataResult<AgeYears> {
        let lower = self.age_min.years();
        let upper = AgeYears::MAX - self.age_max.years();
        let total = lower + upper;
        if total <= 0.0 {
            return Err(DataError::NoExtrapolation);
        }
        let x = u * total;
        let age = if x < lower {
            x
        } else {
            AgeYears::MAX - (x - lower)
        };
        Ok(AgeYears::saturating(age))
    }
}

fn decade(age: AgeYears) -> u32 {
    (age.years() / 10.0).floor() as u32
}

pub fn sample_target_age<R: Rng + ?Sized>(collection: &AgedPhotoCollection, rng: &mut R) -> AgeYears {
    collection.target_age_from_unit(rng.random::<f64>())
}

pub fn sample_extrapolation_age<R: Rng + ?Sized>(
    collection: &AgedPhotoCollection,
    rng: &mut R,
) -> DataResult<AgeYears> {
    collection.extrapolation_age_from_unit(rng.random::<f64>())
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> DataError {
    DataError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn resolve(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

/// Parses and validates a manifest without decoding images.
pub fn parse_manifest(text: &str, base_dir: &Path) -> DataResult<Vec<PhotoRecord>> {
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(line).map_err(|e| DataError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        let age_years = AgeYears::new(raw.age_years).map_err(|_| DataError::AgeOutOfRange {
            line: line_no,
            value: raw.age_years,
        })?;
        if let Some(d) = &raw.capture_date {
            if !is_iso_date(d) {
                return Err(DataError::BadDate {
                    line: line_no,
                    value: d.clone(),
                });
            }
        }
        if !seen.insert(raw.path.clone()) {
            return Err(DataError::DuplicatePath {
                line: line_no,
                path: raw.path,
            });
        }
        if !resolve(base_dir, &raw.path).is_file() {
            return Err(DataError::MissingImage {
                line: line_no,
                path: raw.path,
            });
        }
        records.push(PhotoRecord {
            path: raw.path,
            age_years,
            split: raw.split,
            capture_date: raw.capture_date,
        });
    }
    if !records.iter().any(|r| r.split == Split::Train) {
        return Err(DataError::EmptyTrainSplit);
    }
    Ok(records)
}

pub fn load_manifest(path: &Path) -> DataResult<AgedPhotoCollection> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let records = parse_manifest(&text, base)?;
    let mut images = Vec::with_capacity(records.len());
    for r in &records {
        let full = resolve(base, &r.path);
        let img = ImageTensor::load(&full).map_err(|e| DataError::Image {
            path: full.clone(),
            message: e.to_string(),
        })?;
        images.push(img);
    }
    AgedPhotoCollection::from_parts(records, images)
}

pub fn manifest_text(records: &[PhotoRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records serialize"));
        out.push('\n');
    }
    out
}

pub fn write_manifest(records: &[PhotoRecord], path: &Path) -> DataResult<()> {
    fs::write(path, manifest_text(records)).map_err(|e| io_err(path, e))
}

/// Age-stratified subset of `n` train photos. Train photos are bucketed by
/// decade, each bucket shuffled, and buckets visited round-robin in age
/// order. Non-train records are kept. Original record order is preserved.
pub fn subsample_collection<R: Rng + ?Sized>(
    collection: &AgedPhotoCollection,
    n: usize,
    rng: &mut R,
) -> DataResult<AgedPhotoCollection> {
    if n == 0 {
        return Err(DataError::EmptyTrainSplit);
    }
    let train = collection.train_indices();
    if n > train.len() {
        return Err(DataError::SubsampleTooLarge {
            requested: n,
            available: train.len(),
        });
    }
    let mut buckets: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for &i in &train {
        buckets
            .entry(decade(collection.records[i].age_years))
            .or_default()
            .push(i);
    }
    let mut queues: Vec<Vec<usize>> = buckets
        .into_values()
        .map(|mut b| {
            b.shuffle(rng);
            b.reverse();
            b
        })
        .collect();
    let mut chosen = HashSet::new();
    while chosen.len() < n {
        for q in queues.iter_mut() {
            if chosen.len() == n {
                break;
            }
            if let Some(i) = q.pop() {
                chosen.insert(i);
            }
        }
    }
    let keep: Vec<usize> = (0..collection.len())
        .filter(|i| collection.records[*i].split != Split::Train || chosen.contains(i))
        .collect();
    AgedPhotoCollection::from_parts(
        keep.iter().map(|&i| collection.records[i].clone()).collect(),
        keep.iter().map(|&i| collection.images[i].clone()).collect(),
    )
}

/// Outcome of [`ingest_and_align`].
#[derive(Debug, Clone)]
pub struct IngestReport {
    pub collection: AgedPhotoCollection,
    pub written: Vec<PathBuf>,
    /// Files that were listed but could not be read, with the reason.
    pub skipped: Vec<(String, String)>,
}

impl IngestReport {
    pub fn warning_count(&self) -> usize {
        self.skipped.len()
    }
}

pub const AGES_FILE: &str = "ages.csv";
pub const ALIGNED_DIR: &str = "aligned";

#[derive(Deserialize)]
struct AgeRow {
    filename: String,
    age_years: f64,
    #[serde(default)]
    split: Option<String>,
}

/// Reads `raw_dir/ages.csv` (`filename,age_years[,split]`, split defaults to
/// train), aligns every listed image, writes PNGs to `aligned/` next to the
/// manifest, and writes the manifest sorted by file name.
pub fn ingest_and_align(raw_dir: &Path, manifest_out: &Path, bundle: &BackendBundle) -> DataResult<IngestReport> {
    let ages_path = raw_dir.join(AGES_FILE);
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(&ages_path)
        .map_err(|e| io_err(&ages_path, e))?;
    let mut rows = Vec::new();
    for (i, row) in reader.deserialize::<AgeRow>().enumerate() {
        let row = row.map_err(|e| DataError::Malformed {
            line: i + 2,
            message: e.to_string(),
        })?;
        let age = AgeYears::new(row.age_years).map_err(|_| DataError::AgeOutOfRange {
            line: i + 2,
            value: row.age_years,
        })?;
        let split = match row.split.as_deref() {
            None | Some("") => Split::Train,
            Some(s) => s.parse().map_err(|message| DataError::Malformed { line: i + 2, message })?,
        };
        rows.push((row.filename, age, split));
    }
    rows.sort_by(|a, b| a.0.cmp(&b.0));

    let out_base = manifest_out.parent().unwrap_or(Path::new("."));
    let aligned_dir = out_base.join(ALIGNED_DIR);
    fs::create_dir_all(&aligned_dir).map_err(|e| io_err(&aligned_dir, e))?;

    let mut records = Vec::new();
    let mut images = Vec::new();
    let mut written = Vec::new();
    let mut skipped = Vec::new();
    for (filename, age, split) in rows {
        let src = raw_dir.join(&filename);
        let aligned = ImageTensor::load(&src)
            .map_err(|e| e.to_string())
            .and_then(|img| bundle.align_face(&img).map_err(|e| e.to_string()));
        let aligned = match aligned {
            Ok(a) => a.face,
            Err(reason) => {
                log::warn!("skipping {filename}: {reason}");
                skipped.push((filename, reason));
                continue;
            }
        };
        let stem = Path::new(&filename)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| filename.clone());
        let rel = PathBuf::from(ALIGNED_DIR).join(format!("{stem}.png"));
        let full = out_base.join(&rel);
        aligned.save_png(&full).map_err(|e| io_err(&full, e))?;
        // Store what a later load will read back.
        let reloaded = ImageTensor::load(&full).map_err(|e| io_err(&full, e))?;
        written.push(full);
        records.push(PhotoRecord::new(rel, age, split));
        images.push(reloaded);
    }
    let collection = AgedPhotoCollection::from_parts(records, images)?;
    let mut f = fs::File::create(manifest_out).map_err(|e| io_err(manifest_out, e))?;
    f.write_all(manifest_text(collection.records()).as_bytes())
        .map_err(|e| io_err(manifest_out, e))?;
    Ok(IngestReport {
        collection,
        written,
        skipped,
    })
}
