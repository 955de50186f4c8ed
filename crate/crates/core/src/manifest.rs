//! Clip manifests (JSON lines), split hygiene checks and the tempo index used
//! for beat-matched instrumental substitution.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_VERSION: &str = "singgraph-manifest/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Bonafide,
    Spoof,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Bonafide => "bonafide",
            Label::Spoof => "spoof",
        }
    }

    /// Class index used by the classifier head.
    pub fn class(self) -> usize {
        match self {
            Label::Bonafide => 0,
            Label::Spoof => 1,
        }
    }
}

impl std::str::FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bonafide" | "bona-fide" | "bona_fide" => Ok(Label::Bonafide),
            "spoof" => Ok(Label::Spoof),
            other => Err(Error::Format(format!("unknown label {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Split {
    #[serde(rename = "train")]
    Train,
    #[serde(rename = "val")]
    Val,
    T01,
    T02,
    T03,
}

impl Split {
    pub const ALL: [Split; 5] = [Split::Train, Split::Val, Split::T01, Split::T02, Split::T03];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::T01 => "T01",
            Split::T02 => "T02",
            Split::T03 => "T03",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|sp| sp.as_str() == s)
            .ok_or_else(|| Error::Format(format!("unknown split {s:?}")))
    }
}

/// One song clip: labels, stems and beat annotation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipRecord {
    pub clip_id: String,
    pub label: Label,
    pub singer_id: String,
    pub split: Split,
    pub vocal_path: String,
    pub instrumental_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_voc_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_ins_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tempo_bpm: Option<f64>,
    #[serde(default)]
    pub downbeats_s: Vec<f64>,
}

impl ClipRecord {
    pub fn validate(&self) -> Result<(), String> {
        if self.clip_id.is_empty() {
            return Err("clip_id is empty".into());
        }
        if self.singer_id.is_empty() {
            return Err(format!("{}: singer_id is empty", self.clip_id));
        }
        if let Some(bpm) = self.tempo_bpm {
            if !(bpm > 30.0 && bpm < 300.0) {
                return Err(format!(
                    "{}: tempo_bpm {bpm} outside (30, 300)",
                    self.clip_id
                ));
            }
        }
        if self.downbeats_s.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(format!(
                "{}: downbeats must be finite and non-negative",
                self.clip_id
            ));
        }
        if self.downbeats_s.windows(2).any(|w| w[1] <= w[0]) {
            return Err(format!(
                "{}: downbeats_s not strictly increasing",
                self.clip_id
            ));
        }
        let paths = [Some(&self.vocal_path), Some(&self.instrumental_path)]
            .into_iter()
            .chain([
                self.embedding_voc_path.as_ref(),
                self.embedding_ins_path.as_ref(),
            ])
            .flatten();
        for p in paths {
            if p.starts_with('/') || p.contains('\\') {
                return Err(format!(
                    "{}: path {p:?} must be POSIX-style and relative to the manifest root",
                    self.clip_id
                ));
            }
        }
        Ok(())
    }

    pub fn has_instrumental(&self) -> bool {
        !self.instrumental_path.is_empty()
    }

    /// Attach an imported beat annotation.
    pub fn with_beats(mut self, beats: &BeatAnnotation) -> Result<Self> {
        self.tempo_bpm = Some(beats.bpm);
        self.downbeats_s = beats.downbeats.clone();
        self.validate().map_err(Error::Annotation)?;
        Ok(self)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    version: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub version: String,
    pub records: Vec<ClipRecord>,
    /// Directory that relative record paths resolve against.
    pub root: PathBuf,
}

impl Manifest {
    pub fn new(records: Vec<ClipRecord>, root: impl Into<PathBuf>) -> Result<Self> {
        let m = Self {
            version: MANIFEST_VERSION.to_string(),
            records,
            root: root.into(),
        };
        m.check_integrity()?;
        Ok(m)
    }

    fn check_integrity(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for r in &self.records {
            r.validate().map_err(Error::Integrity)?;
            if !seen.insert(r.clip_id.as_str()) {
                return Err(Error::Integrity(format!(
                    "duplicate clip_id {:?}",
                    r.clip_id
                )));
            }
        }
        Ok(())
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn get(&self, clip_id: &str) -> Option<&ClipRecord> {
        self.records.iter().find(|r| r.clip_id == clip_id)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ClipRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn by_id(&self) -> HashMap<&str, &ClipRecord> {
        self.records
            .iter()
            .map(|r| (r.clip_id.as_str(), r))
            .collect()
    }
}

/// Loads a JSON-lines manifest. An optional first line `{"version": ...}`
/// carries the format version; every other non-blank line is a clip record.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let root = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    parse_manifest(&text, root)
}

pub fn parse_manifest(text: &str, root: PathBuf) -> Result<Manifest> {
    let mut version = MANIFEST_VERSION.to_string();
    let mut records = Vec::new();
    let mut first_lines: HashMap<String, usize> = HashMap::new();
    let mut seen_content = false;
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if !seen_content {
            seen_content = true;
            if let Ok(h) = serde_json::from_str::<Header>(line) {
                version = h.version;
                continue;
            }
        }
        let rec: ClipRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        rec.validate().map_err(|message| Error::Parse {
            line: lineno,
            message,
        })?;
        if let Some(prev) = first_lines.get(&rec.clip_id) {
            return Err(Error::Integrity(format!(
                "duplicate clip_id {:?} on lines {prev} and {lineno}",
                rec.clip_id
            )));
        }
        first_lines.insert(rec.clip_id.clone(), lineno);
        records.push(rec);
    }
    if !version.starts_with("singgraph-manifest/") {
        return Err(Error::Format(format!(
            "unknown manifest version {version:?}"
        )));
    }
    Ok(Manifest {
        version,
        records,
        root,
    })
}

pub fn save_manifest(m: &Manifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, manifest_to_string(m)).map_err(|e| Error::io(path, e))
}

pub fn manifest_to_string(m: &Manifest) -> String {
    let mut out = serde_json::to_string(&Header {
        version: m.version.clone(),
    })
    .expect("header serializes");
    out.push('\n');
    for r in &m.records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

/// External beat-tracker output for one track.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeatAnnotation {
    pub bpm: f64,
    pub downbeats: Vec<f64>,
}

pub fn load_beat_annotation(path: impl AsRef<Path>) -> Result<BeatAnnotation> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Annotation(format!("{}: {e}", path.display())))
}

/// Which train-split tracks may serve as replacement instrumentals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplacementPool {
    #[default]
    All,
    BonafideOnly,
}

/// Train-split tracks grouped by tempo bucket `floor(bpm / width)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TempoIndex {
    pub bucket_width_bpm: f64,
    pub groups: BTreeMap<i64, Vec<String>>,
    pub pool: ReplacementPool,
    membership: HashMap<String, i64>,
}

impl TempoIndex {
    pub fn bucket_key(&self, bpm: f64) -> i64 {
        bucket_key(bpm, self.bucket_width_bpm)
    }

    pub fn key_of(&self, clip_id: &str) -> Option<i64> {
        self.membership.get(clip_id).copied()
    }

    pub fn len(&self) -> usize {
        self.membership.len()
    }

    pub fn is_empty(&self) -> bool {
        self.membership.is_empty()
    }

    /// The bucket a clip draws replacements from.
    pub fn bucket_for(&self, clip: &ClipRecord) -> Result<(i64, &[String])> {
        let key = match (self.key_of(&clip.clip_id), self.pool, clip.tempo_bpm) {
            (Some(k), _, _) => k,
            (None, ReplacementPool::BonafideOnly, Some(bpm)) => self.bucket_key(bpm),
            _ => {
                return Err(Error::Lookup(format!(
                    "clip {:?} is not in the tempo index",
                    clip.clip_id
                )))
            }
        };
        self.groups
            .get(&key)
            .map(|g| (key, g.as_slice()))
            .ok_or_else(|| Error::Lookup(format!("no tempo bucket {key} for {:?}", clip.clip_id)))
    }
}

pub fn bucket_key(bpm: f64, width: f64) -> i64 {
    (bpm / width).floor() as i64
}

pub fn build_tempo_index(m: &Manifest, bucket_width_bpm: f64) -> Result<TempoIndex> {
    build_tempo_index_with(m, bucket_width_bpm, ReplacementPool::All)
}

pub fn build_tempo_index_with(
    m: &Manifest,
    bucket_width_bpm: f64,
    pool: ReplacementPool,
) -> Result<TempoIndex> {
    if !(bucket_width_bpm > 0.0 && bucket_width_bpm.is_finite()) {
        return Err(Error::Config(format!(
            "bucket width must be positive, got {bucket_width_bpm}"
        )));
    }
    let mut groups: BTreeMap<i64, Vec<String>> = BTreeMap::new();
    let mut membership = HashMap::new();
    for r in m.split(Split::Train).filter(|r| r.has_instrumental()) {
        let bpm = r.tempo_bpm.ok_or_else(|| {
            Error::Annotation(format!("train clip {:?} has no tempo_bpm", r.clip_id))
        })?;
        if pool == ReplacementPool::BonafideOnly && r.label != Label::Bonafide {
            continue;
        }
        let key = bucket_key(bpm, bucket_width_bpm);
        groups.entry(key).or_default().push(r.clip_id.clone());
        membership.insert(r.clip_id.clone(), key);
    }
    Ok(TempoIndex {
        bucket_width_bpm,
        groups,
        pool,
        membership,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SplitViolation {
    pub singer_id: String,
    pub train_split: Split,
    pub other_split: Split,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SplitReport {
    pub violations: Vec<SplitViolation>,
}

impl SplitReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Singers shared between train and an unseen-singer split. T01 is the
/// seen-singer test set and is exempt.
pub fn verify_splits(m: &Manifest) -> SplitReport {
    let train: BTreeSet<&str> = m
        .split(Split::Train)
        .map(|r| r.singer_id.as_str())
        .collect();
    let mut hits: BTreeSet<(&str, Split)> = BTreeSet::new();
    for r in &m.records {
        if matches!(r.split, Split::Val | Split::T02 | Split::T03)
            && train.contains(r.singer_id.as_str())
        {
            hits.insert((r.singer_id.as_str(), r.split));
        }
    }
    SplitReport {
        violations: hits
            .into_iter()
            .map(|(s, sp)| SplitViolation {
                singer_id: s.to_string(),
                train_split: Split::Train,
                other_split: sp,
            })
            .collect(),
    }
}
