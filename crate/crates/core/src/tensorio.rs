//! Binary embedding containers and the corpus manifest.
//!
//! # Container layout (version 1)
//!
//! All multi-byte fields are little-endian.
//!
//! | offset | size | field                                            |
//! |--------|------|--------------------------------------------------|
//! | 0      | 8    | magic, ASCII `MMFUSE01`                          |
//! | 8      | 2    | version (`u16`, currently 1)                     |
//! | 10     | 1    | kind (`0` acoustic, `1` text, `2` fused)         |
//! | 11     | 1    | layer index (`1..=12`, `0` when absent)          |
//! | 12     | 4    | rows (`u32`)                                     |
//! | 16     | 4    | cols (`u32`)                                     |
//! | 20     | 8    | duration in seconds (`f64`, `0.0` when absent)   |
//! | 28     | 4·rows·cols | payload, row-major `f32`                  |
//!
//! A file must contain exactly `28 + 4·rows·cols` bytes.
//!
//! # Manifest layout (version 1)
//!
//! UTF-8, tab separated. The first line is `# mmfuse manifest v1`, the second
//! is the column header, then one recording per line:
//!
//! ```text
//! recording_id  label  sex  age  corpus_id  text_path  timing_path  acoustic_paths
//! ```
//!
//! `acoustic_paths` is a `;`-separated list of `layer=path` pairs. Relative
//! paths are resolved against the manifest's directory.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::alignment::read_timing_file;
use crate::error::{Error, Result};
use crate::labels::{Label, Sex};

pub const MAGIC: [u8; 8] = *b"MMFUSE01";
pub const FORMAT_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 28;
pub const MAX_LAYER: u8 = 12;

pub const MANIFEST_MAGIC: &str = "# mmfuse manifest v1";
pub const MANIFEST_COLUMNS: [&str; 8] = [
    "recording_id",
    "label",
    "sex",
    "age",
    "corpus_id",
    "text_path",
    "timing_path",
    "acoustic_paths",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ContainerKind {
    Acoustic,
    Text,
    Fused,
}

impl ContainerKind {
    fn code(self) -> u8 {
        match self {
            ContainerKind::Acoustic => 0,
            ContainerKind::Text => 1,
            ContainerKind::Fused => 2,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(ContainerKind::Acoustic),
            1 => Ok(ContainerKind::Text),
            2 => Ok(ContainerKind::Fused),
            other => Err(Error::Format(format!("unknown container kind {other}"))),
        }
    }
}

impl fmt::Display for ContainerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ContainerKind::Acoustic => "acoustic",
            ContainerKind::Text => "text",
            ContainerKind::Fused => "fused",
        })
    }
}

/// An embedding matrix plus the metadata needed to interpret it.
///
/// Fields are public so that malformed containers can be represented; the
/// invariants are checked by [`EmbeddingContainer::validate`], which both the
/// writer and the reader call.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingContainer {
    pub kind: ContainerKind,
    pub rows: usize,
    pub cols: usize,
    pub layer: Option<u8>,
    pub duration_s: Option<f64>,
    pub payload: Vec<f32>,
}

/// Header fields of a container, readable without loading the payload.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContainerHeader {
    pub kind: ContainerKind,
    pub rows: usize,
    pub cols: usize,
    pub layer: Option<u8>,
    pub duration_s: Option<f64>,
}

impl EmbeddingContainer {
    pub fn acoustic(matrix: &Array2<f32>, layer: u8, duration_s: f64) -> Self {
        Self::from_matrix(ContainerKind::Acoustic, matrix, Some(layer), Some(duration_s))
    }

    pub fn text(matrix: &Array2<f32>) -> Self {
        Self::from_matrix(ContainerKind::Text, matrix, None, None)
    }

    pub fn fused(matrix: &Array2<f32>, layer: Option<u8>, duration_s: f64) -> Self {
        Self::from_matrix(ContainerKind::Fused, matrix, layer, Some(duration_s))
    }

    fn from_matrix(
        kind: ContainerKind,
        matrix: &Array2<f32>,
        layer: Option<u8>,
        duration_s: Option<f64>,
    ) -> Self {
        let (rows, cols) = matrix.dim();
        EmbeddingContainer {
            kind,
            rows,
            cols,
            layer,
            duration_s,
            payload: matrix.iter().copied().collect(),
        }
    }

    pub fn header(&self) -> ContainerHeader {
        ContainerHeader {
            kind: self.kind,
            rows: self.rows,
            cols: self.cols,
            layer: self.layer,
            duration_s: self.duration_s,
        }
    }

    /// The payload as a `rows × cols` matrix.
    pub fn matrix(&self) -> Result<Array2<f32>> {
        Array2::from_shape_vec((self.rows, self.cols), self.payload.clone())
            .map_err(|e| Error::Format(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.header().validate()?;
        let expected = self.rows * self.cols;
        if self.payload.len() != expected {
            return Err(Error::Format(format!(
                "payload holds {} bytes but rows={} cols={} requires {}",
                self.payload.len() * 4,
                self.rows,
                self.cols,
                expected * 4
            )));
        }
        if let Some(i) = self.payload.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite value {} at row {} col {}",
                self.payload[i],
                i / self.cols,
                i % self.cols
            )));
        }
        Ok(())
    }

    /// Serializes to the version-1 byte layout.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.len() * 4);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.push(self.kind.code());
        out.push(self.layer.unwrap_or(0));
        out.extend_from_slice(&(self.rows as u32).to_le_bytes());
        out.extend_from_slice(&(self.cols as u32).to_le_bytes());
        out.extend_from_slice(&self.duration_s.unwrap_or(0.0).to_le_bytes());
        for v in &self.payload {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    /// Parses a complete container. Either the whole container is returned
    /// or an error; there is no partial result.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let header = ContainerHeader::parse(bytes)?;
        let expected = header.payload_bytes();
        let actual = bytes.len() - HEADER_LEN;
        if actual != expected {
            return Err(Error::Format(format!(
                "header states {expected} payload bytes, found {actual}"
            )));
        }
        let payload = bytes[HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let container = EmbeddingContainer {
            kind: header.kind,
            rows: header.rows,
            cols: header.cols,
            layer: header.layer,
            duration_s: header.duration_s,
            payload,
        };
        container.validate()?;
        Ok(container)
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

impl ContainerHeader {
    fn payload_bytes(&self) -> usize {
        self.rows * self.cols * 4
    }

    fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::Format(format!(
                "empty matrix ({}×{})",
                self.rows, self.cols
            )));
        }
        if let Some(layer) = self.layer {
            if !(1..=MAX_LAYER).contains(&layer) {
                return Err(Error::Format(format!("layer index {layer} outside 1..=12")));
            }
        }
        match self.kind {
            ContainerKind::Acoustic | ContainerKind::Fused => match self.duration_s {
                Some(d) if d > 0.0 && d.is_finite() => {}
                other => {
                    return Err(Error::Format(format!(
                        "{} container needs a positive duration, got {other:?}",
                        self.kind
                    )))
                }
            },
            ContainerKind::Text => {
                if self.layer.is_some() {
                    return Err(Error::Format("text containers carry no layer".into()));
                }
            }
        }
        if self.kind == ContainerKind::Acoustic && self.layer.is_none() {
            return Err(Error::Format("acoustic container without a layer".into()));
        }
        Ok(())
    }

    fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 {
            return Err(Error::Format(format!(
                "truncated header: {} bytes",
                bytes.len()
            )));
        }
        let mut magic = [0u8; 8];
        magic.copy_from_slice(&bytes[..8]);
        if magic != MAGIC {
            return Err(Error::BadMagic(magic));
        }
        if bytes.len() < HEADER_LEN {
            return Err(Error::Format(format!(
                "truncated header: {} bytes",
                bytes.len()
            )));
        }
        let version = u16::from_le_bytes([bytes[8], bytes[9]]);
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let kind = ContainerKind::from_code(bytes[10])?;
        let layer = match bytes[11] {
            0 => None,
            l => Some(l),
        };
        let u32_at = |o: usize| u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]);
        let rows = u32_at(12) as usize;
        let cols = u32_at(16) as usize;
        let mut dur = [0u8; 8];
        dur.copy_from_slice(&bytes[20..28]);
        let duration = f64::from_le_bytes(dur);
        let header = ContainerHeader {
            kind,
            rows,
            cols,
            layer,
            duration_s: if duration == 0.0 { None } else { Some(duration) },
        };
        header.validate()?;
        Ok(header)
    }

    /// Reads and checks a container header, verifying the file length
    /// against the stated payload size without reading the payload.
    pub fn read_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let len = file.metadata().map_err(|e| Error::io(path, e))?.len() as usize;
        let mut buf = vec![0u8; HEADER_LEN.min(len)];
        file.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
        let header = Self::parse(&buf)?;
        if len - HEADER_LEN != header.payload_bytes() {
            return Err(Error::Format(format!(
                "{}: header states {} payload bytes, found {}",
                path.display(),
                header.payload_bytes(),
                len - HEADER_LEN
            )));
        }
        Ok(header)
    }
}

/// One recording in a corpus manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordingManifestEntry {
    pub recording_id: String,
    pub label: Label,
    pub sex: Sex,
    pub age: f64,
    pub corpus_id: String,
    pub acoustic_paths: BTreeMap<u8, PathBuf>,
    pub text_path: PathBuf,
    pub timing_path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    /// Directory against which relative paths resolve.
    pub root: PathBuf,
    pub entries: Vec<RecordingManifestEntry>,
}

impl Manifest {
    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.root.join(path)
        }
    }

    pub fn layers(&self) -> BTreeSet<u8> {
        self.entries
            .iter()
            .flat_map(|e| e.acoustic_paths.keys().copied())
            .collect()
    }

    pub fn parse(text: &str, root: impl Into<PathBuf>) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, first)) if first.trim_end() == MANIFEST_MAGIC => {}
            _ => {
                return Err(Error::parse(
                    "manifest",
                    format!("first line must be {MANIFEST_MAGIC:?}"),
                ))
            }
        }
        match lines.next() {
            Some((_, header)) if header.trim_end().split('\t').eq(MANIFEST_COLUMNS) => {}
            _ => {
                return Err(Error::parse(
                    "manifest",
                    format!("second line must be the column header {}", MANIFEST_COLUMNS.join("\\t")),
                ))
            }
        }
        let mut entries = Vec::new();
        for (lineno, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let ctx = |msg: String| Error::parse("manifest", format!("line {}: {msg}", lineno + 1));
            let fields: Vec<&str> = line.trim_end_matches(['\r', '\n']).split('\t').collect();
            if fields.len() != MANIFEST_COLUMNS.len() {
                return Err(ctx(format!(
                    "expected {} fields, found {}",
                    MANIFEST_COLUMNS.len(),
                    fields.len()
                )));
            }
            for (name, value) in MANIFEST_COLUMNS.iter().zip(&fields) {
                if value.is_empty() {
                    return Err(ctx(format!("empty {name}")));
                }
            }
            let age: f64 = fields[3]
                .parse()
                .map_err(|_| ctx(format!("bad age {:?}", fields[3])))?;
            let mut acoustic_paths = BTreeMap::new();
            for pair in fields[7].split(';').filter(|p| !p.is_empty()) {
                let (layer, path) = pair
                    .split_once('=')
                    .ok_or_else(|| ctx(format!("bad acoustic path entry {pair:?}")))?;
                let layer: u8 = layer
                    .parse()
                    .map_err(|_| ctx(format!("bad layer {layer:?}")))?;
                if !(1..=MAX_LAYER).contains(&layer) {
                    return Err(ctx(format!("layer {layer} outside 1..=12")));
                }
                if acoustic_paths.insert(layer, PathBuf::from(path)).is_some() {
                    return Err(ctx(format!("layer {layer} listed twice")));
                }
            }
            entries.push(RecordingManifestEntry {
                recording_id: fields[0].to_string(),
                label: fields[1].parse().map_err(|e: Error| ctx(e.to_string()))?,
                sex: fields[2].parse().map_err(|e: Error| ctx(e.to_string()))?,
                age,
                corpus_id: fields[4].to_string(),
                text_path: PathBuf::from(fields[5]),
                timing_path: PathBuf::from(fields[6]),
                acoustic_paths,
            });
        }
        Ok(Manifest {
            root: root.into(),
            entries,
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(MANIFEST_MAGIC);
        out.push('\n');
        out.push_str(&MANIFEST_COLUMNS.join("\t"));
        out.push('\n');
        for e in &self.entries {
            let acoustic: Vec<String> = e
                .acoustic_paths
                .iter()
                .map(|(l, p)| format!("{l}={}", p.display()))
                .collect();
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                e.recording_id,
                e.label,
                e.sex,
                e.age,
                e.corpus_id,
                e.text_path.display(),
                e.timing_path.display(),
                acoustic.join(";")
            ));
        }
        out
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, root)
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// A single problem found while validating a manifest.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum ValidationFailure {
    DuplicateId {
        recording_id: String,
    },
    MissingFile {
        recording_id: String,
        path: PathBuf,
    },
    Unreadable {
        recording_id: String,
        path: PathBuf,
        reason: String,
    },
    LayerGap {
        recording_id: String,
        layer: u8,
    },
    DimensionMismatch {
        recording_id: String,
        layer: Option<u8>,
        kind: String,
        expected: usize,
        found: usize,
    },
    FrameCountMismatch {
        recording_id: String,
        layer: u8,
        expected: usize,
        found: usize,
    },
    TokenCountMismatch {
        recording_id: String,
        timing_tokens: usize,
        text_rows: usize,
    },
}

impl fmt::Display for ValidationFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValidationFailure::DuplicateId { recording_id } => {
                write!(f, "{recording_id}: duplicate recording id")
            }
            ValidationFailure::MissingFile { recording_id, path } => {
                write!(f, "{recording_id}: missing file {}", path.display())
            }
            ValidationFailure::Unreadable {
                recording_id,
                path,
                reason,
            } => write!(f, "{recording_id}: unreadable {}: {reason}", path.display()),
            ValidationFailure::LayerGap {
                recording_id,
                layer,
            } => write!(f, "{recording_id}: missing acoustic layer {layer}"),
            ValidationFailure::DimensionMismatch {
                recording_id,
                layer,
                kind,
                expected,
                found,
            } => {
                write!(f, "{recording_id}: {kind} dimension {found}, corpus uses {expected}")?;
                if let Some(l) = layer {
                    write!(f, " (layer {l})")?;
                }
                Ok(())
            }
            ValidationFailure::FrameCountMismatch {
                recording_id,
                layer,
                expected,
                found,
            } => write!(
                f,
                "{recording_id}: layer {layer} has {found} frames, other layers have {expected}"
            ),
            ValidationFailure::TokenCountMismatch {
                recording_id,
                timing_tokens,
                text_rows,
            } => write!(
                f,
                "{recording_id}: timing file describes {timing_tokens} tokens, text container has {text_rows} rows"
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub recordings: usize,
    pub acoustic_dim: Option<usize>,
    pub text_dim: Option<usize>,
    pub layers: Vec<u8>,
    pub failures: Vec<ValidationFailure>,
}

impl ValidationReport {
    pub fn is_usable(&self) -> bool {
        self.failures.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{} recordings, layers {:?}, acoustic dim {:?}, text dim {:?}",
            self.recordings, self.layers, self.acoustic_dim, self.text_dim
        )?;
        if self.failures.is_empty() {
            writeln!(f, "no failures")
        } else {
            writeln!(f, "{} failures:", self.failures.len())?;
            for failure in &self.failures {
                writeln!(f, "  {failure}")?;
            }
            Ok(())
        }
    }
}

// Most frequent value; ties go to the smaller value so the result does not
// depend on entry order.
fn mode(values: &[usize]) -> Option<usize> {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &v in values {
        *counts.entry(v).or_default() += 1;
    }
    counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
        .map(|(v, _)| v)
}

/// Checks that every file referenced by the manifest exists and that
/// dimensions agree across the corpus.
pub fn validate_manifest(manifest: &Manifest) -> ValidationReport {
    let mut failures = Vec::new();
    let layers = manifest.layers();

    let mut seen: HashMap<&str, usize> = HashMap::new();
    for e in &manifest.entries {
        *seen.entry(e.recording_id.as_str()).or_default() += 1;
    }
    let mut dups: Vec<&str> = seen
        .into_iter()
        .filter(|(_, n)| *n > 1)
        .map(|(id, _)| id)
        .collect();
    dups.sort_unstable();
    failures.extend(dups.into_iter().map(|id| ValidationFailure::DuplicateId {
        recording_id: id.to_string(),
    }));

    struct Headers<'a> {
        id: &'a str,
        acoustic: Vec<(u8, ContainerHeader)>,
        text: Option<ContainerHeader>,
        timing_tokens: Option<usize>,
    }

    let open_header = |id: &str, path: &Path, failures: &mut Vec<ValidationFailure>| {
        let resolved = manifest.resolve(path);
        if !resolved.is_file() {
            failures.push(ValidationFailure::MissingFile {
                recording_id: id.to_string(),
                path: path.to_path_buf(),
            });
            return None;
        }
        match ContainerHeader::read_file(&resolved) {
            Ok(h) => Some(h),
            Err(err) => {
                failures.push(ValidationFailure::Unreadable {
                    recording_id: id.to_string(),
                    path: path.to_path_buf(),
                    reason: err.to_string(),
                });
                None
            }
        }
    };

    let mut all = Vec::with_capacity(manifest.entries.len());
    for e in &manifest.entries {
        let id = e.recording_id.as_str();
        for &layer in &layers {
            if !e.acoustic_paths.contains_key(&layer) {
                failures.push(ValidationFailure::LayerGap {
                    recording_id: id.to_string(),
                    layer,
                });
            }
        }
        let mut acoustic = Vec::new();
        for (&layer, path) in &e.acoustic_paths {
            if let Some(h) = open_header(id, path, &mut failures) {
                if h.kind != ContainerKind::Acoustic || h.layer != Some(layer) {
                    failures.push(ValidationFailure::Unreadable {
                        recording_id: id.to_string(),
                        path: path.clone(),
                        reason: format!(
                            "expected acoustic layer {layer}, found {} layer {:?}",
                            h.kind, h.layer
                        ),
                    });
                    continue;
                }
                acoustic.push((layer, h));
            }
        }
        let text = open_header(id, &e.text_path, &mut failures).and_then(|h| {
            if h.kind == ContainerKind::Text {
                Some(h)
            } else {
                failures.push(ValidationFailure::Unreadable {
                    recording_id: id.to_string(),
                    path: e.text_path.clone(),
                    reason: format!("expected a text container, found {}", h.kind),
                });
                None
            }
        });
        let timing_path = manifest.resolve(&e.timing_path);
        let timing_tokens = if !timing_path.is_file() {
            failures.push(ValidationFailure::MissingFile {
                recording_id: id.to_string(),
                path: e.timing_path.clone(),
            });
            None
        } else {
            match read_timing_file(&timing_path) {
                Ok(words) => Some(words.iter().map(|w| w.token_chars.len()).sum()),
                Err(err) => {
                    failures.push(ValidationFailure::Unreadable {
                        recording_id: id.to_string(),
                        path: e.timing_path.clone(),
                        reason: err.to_string(),
                    });
                    None
                }
            }
        };
        all.push(Headers {
            id,
            acoustic,
            text,
            timing_tokens,
        });
    }

    let acoustic_cols: Vec<usize> = all
        .iter()
        .flat_map(|h| h.acoustic.iter().map(|(_, a)| a.cols))
        .collect();
    let text_cols: Vec<usize> = all.iter().filter_map(|h| h.text.map(|t| t.cols)).collect();
    let acoustic_dim = mode(&acoustic_cols);
    let text_dim = mode(&text_cols);

    for h in &all {
        if let Some(dim) = acoustic_dim {
            for (layer, a) in &h.acoustic {
                if a.cols != dim {
                    failures.push(ValidationFailure::DimensionMismatch {
                        recording_id: h.id.to_string(),
                        layer: Some(*layer),
                        kind: "acoustic".into(),
                        expected: dim,
                        found: a.cols,
                    });
                }
            }
        }
        let frames: Vec<usize> = h.acoustic.iter().map(|(_, a)| a.rows).collect();
        if let Some(t) = mode(&frames) {
            for (layer, a) in &h.acoustic {
                if a.rows != t {
                    failures.push(ValidationFailure::FrameCountMismatch {
                        recording_id: h.id.to_string(),
                        layer: *layer,
                        expected: t,
                        found: a.rows,
                    });
                }
            }
        }
        if let (Some(dim), Some(t)) = (text_dim, h.text) {
            if t.cols != dim {
                failures.push(ValidationFailure::DimensionMismatch {
                    recording_id: h.id.to_string(),
                    layer: None,
                    kind: "text".into(),
                    expected: dim,
                    found: t.cols,
                });
            }
        }
        if let (Some(tokens), Some(t)) = (h.timing_tokens, h.text) {
            if tokens != t.rows {
                failures.push(ValidationFailure::TokenCountMismatch {
                    recording_id: h.id.to_string(),
                    timing_tokens: tokens,
                    text_rows: t.rows,
                });
            }
        }
    }

    failures.sort();
    ValidationReport {
        recordings: manifest.entries.len(),
        acoustic_dim,
        text_dim,
        layers: layers.into_iter().collect(),
        failures,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(rows: usize, cols: usize) -> EmbeddingContainer {
        let m = Array2::from_shape_fn((rows, cols), |(r, c)| (r * cols + c) as f32 * 0.5 - 1.0);
        EmbeddingContainer::acoustic(&m, 3, 1.5)
    }

    #[test]
    fn zero_matrix_layout() {
        let c = EmbeddingContainer::text(&Array2::zeros((2, 3)));
        let bytes = c.to_bytes().unwrap();
        assert_eq!(bytes.len(), HEADER_LEN + 24);
        assert_eq!(&bytes[..8], b"MMFUSE01");
        assert_eq!(&bytes[8..10], &[1, 0]);
        assert_eq!(bytes[10], 1);
        assert_eq!(bytes[11], 0);
        assert_eq!(&bytes[12..16], &[2, 0, 0, 0]);
        assert_eq!(&bytes[16..20], &[3, 0, 0, 0]);
        assert!(bytes[HEADER_LEN..].iter().all(|&b| b == 0));
    }

    #[test]
    fn short_payload_is_rejected_on_write() {
        let c = EmbeddingContainer {
            kind: ContainerKind::Text,
            rows: 2,
            cols: 3,
            layer: None,
            duration_s: None,
            payload: vec![0.0; 5],
        };
        assert!(matches!(c.to_bytes(), Err(Error::Format(_))));
    }

    #[test]
    fn bad_magic() {
        let mut bytes = sample(2, 2).to_bytes().unwrap();
        bytes[0] = b'X';
        assert!(matches!(
            EmbeddingContainer::from_bytes(&bytes),
            Err(Error::BadMagic(_))
        ));
    }

    #[test]
    fn unsupported_version() {
        let mut bytes = sample(2, 2).to_bytes().unwrap();
        bytes[8] = 7;
        assert!(matches!(
            EmbeddingContainer::from_bytes(&bytes),
            Err(Error::UnsupportedVersion(7))
        ));
    }

    #[test]
    fn truncated_and_oversized_payloads() {
        let bytes = sample(3, 4).to_bytes().unwrap();
        assert!(EmbeddingContainer::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(EmbeddingContainer::from_bytes(&bytes[..HEADER_LEN - 3]).is_err());
        let mut longer = bytes.clone();
        longer.extend_from_slice(&[0, 0, 0, 0]);
        assert!(matches!(
            EmbeddingContainer::from_bytes(&longer),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn nan_payload_is_a_validation_error() {
        let mut c = sample(2, 2);
        let mut bytes = c.to_bytes().unwrap();
        bytes[HEADER_LEN..HEADER_LEN + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(
            EmbeddingContainer::from_bytes(&bytes),
            Err(Error::Validation(_))
        ));
        c.payload[3] = f32::INFINITY;
        assert!(matches!(c.to_bytes(), Err(Error::Validation(_))));
    }

    #[test]
    fn acoustic_requires_duration() {
        let mut c = sample(2, 2);
        c.duration_s = None;
        assert!(c.to_bytes().is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            rows in 1usize..8,
            cols in 1usize..8,
            seed in any::<u64>(),
            layer in 1u8..=12,
            duration in 0.01f64..100.0,
        ) {
            let mut state = seed;
            let m = Array2::from_shape_fn((rows, cols), |_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                f32::from_bits(((state >> 33) as u32 & 0x7f7f_ffff) | ((state as u32) & 0x8000_0000))
            });
            let c = EmbeddingContainer::acoustic(&m, layer, duration);
            let bytes = c.to_bytes().unwrap();
            let back = EmbeddingContainer::from_bytes(&bytes).unwrap();
            prop_assert_eq!(back.to_bytes().unwrap(), bytes);
            prop_assert_eq!(back, c);
        }
    }

    #[test]
    fn manifest_text_round_trip() {
        let mut acoustic_paths = BTreeMap::new();
        acoustic_paths.insert(1, PathBuf::from("a/r1_L01.mmf"));
        acoustic_paths.insert(12, PathBuf::from("a/r1_L12.mmf"));
        let m = Manifest {
            root: PathBuf::from("/data"),
            entries: vec![RecordingManifestEntry {
                recording_id: "r1".into(),
                label: Label::MCI,
                sex: Sex::F,
                age: 72.5,
                corpus_id: "c1".into(),
                acoustic_paths,
                text_path: "t/r1.mmf".into(),
                timing_path: "w/r1.tsv".into(),
            }],
        };
        let back = Manifest::parse(&m.to_text(), "/data").unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn manifest_rejects_bad_layers_and_missing_fields() {
        let head = format!("{MANIFEST_MAGIC}\n{}\n", MANIFEST_COLUMNS.join("\t"));
        let bad_layer = format!("{head}r1\tCN\tM\t70\tc\tt\tw\t13=x\n");
        assert!(Manifest::parse(&bad_layer, ".").is_err());
        let empty = format!("{head}r1\t\tM\t70\tc\tt\tw\t1=x\n");
        assert!(Manifest::parse(&empty, ".").is_err());
        assert!(Manifest::parse("recording_id\n", ".").is_err());
    }

    #[test]
    fn mode_prefers_smaller_on_ties() {
        assert_eq!(mode(&[768, 512, 768, 512]), Some(512));
        assert_eq!(mode(&[768, 768, 512]), Some(768));
        assert_eq!(mode(&[]), None);
    }
}
