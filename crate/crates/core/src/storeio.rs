//! On-disk formats shared with the embedding exporter.
//!
//! `EMB1` binary layout (little-endian):
//!
//! | offset | size | field                       |
//! |--------|------|-----------------------------|
//! | 0      | 4    | magic `b"EMB1"`             |
//! | 4      | 4    | version, `u32` = 1          |
//! | 8      | 4    | row count, `u32`            |
//! | 12     | 4    | dim, `u32`                  |
//! | 16     | 1    | dtype, `1` = float32        |
//! | 17     | 3    | zero padding                |
//! | 20     | …    | row-major `f32` payload     |
//!
//! Row identities live in a JSONL sidecar manifest next to the binary file
//! (same stem, `.jsonl` extension). Ratings and preferences are JSONL too.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::{EmbeddingSet, Modality, PairedCorpus, PreferencePair, Rating, ScoreMatrix, SimilarityConfig};
use crate::report::to_canonical_json;

pub const MAGIC: [u8; 4] = *b"EMB1";
pub const VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 1;
pub const HEADER_LEN: usize = 20;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("bad magic {0:?}, expected \"EMB1\"")]
    BadMagic([u8; 4]),
    #[error("header truncated: {0} bytes")]
    TruncatedHeader(usize),
    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),
    #[error("unsupported dtype {0}")]
    UnsupportedDtype(u8),
    #[error("payload truncated: expected {expected} bytes, got {got}")]
    TruncatedPayload { expected: usize, got: usize },
    #[error("{0} unexpected bytes after payload")]
    TrailingBytes(usize),
    #[error("row count mismatch: header has {header}, manifest has {manifest}")]
    RowCountMismatch { header: usize, manifest: usize },
    #[error("line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error("id `{0}` does not resolve")]
    DanglingId(String),
    #[error("duplicate row {0}")]
    DuplicateRow(u32),
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("row {0} missing from manifest")]
    MissingRow(u32),
    #[error("line {0}: modality differs from earlier rows")]
    MixedModality(usize),
    #[error(transparent)]
    Invalid(#[from] crate::error::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, StoreError>;

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Raw contents of an EMB1 file.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbMatrix {
    pub rows: usize,
    pub dim: usize,
    pub values: Vec<f32>,
}

/// Encodes a row-major matrix, rounding each value to `f32`.
pub fn encode_emb(rows: usize, dim: usize, values: &[f64]) -> Vec<u8> {
    assert_eq!(values.len(), rows * dim, "matrix shape");
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * values.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(rows as u32).to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    out.push(DTYPE_F32);
    out.extend_from_slice(&[0, 0, 0]);
    for v in values {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn decode_emb(bytes: &[u8]) -> Result<EmbMatrix> {
    if bytes.len() >= 4 && bytes[..4] != MAGIC {
        return Err(StoreError::BadMagic(bytes[..4].try_into().expect("4 bytes")));
    }
    if bytes.len() < HEADER_LEN {
        return Err(StoreError::TruncatedHeader(bytes.len()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let version = u32_at(4);
    if version != VERSION {
        return Err(StoreError::UnsupportedVersion(version));
    }
    let rows = u32_at(8) as usize;
    let dim = u32_at(12) as usize;
    let dtype = bytes[16];
    if dtype != DTYPE_F32 {
        return Err(StoreError::UnsupportedDtype(dtype));
    }
    let expected = rows * dim * 4;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() < expected {
        return Err(StoreError::TruncatedPayload {
            expected,
            got: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(StoreError::TrailingBytes(payload.len() - expected));
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok(EmbMatrix { rows, dim, values })
}

pub fn write_emb(path: &Path, rows: usize, dim: usize, values: &[f64]) -> Result<()> {
    fs::write(path, encode_emb(rows, dim, values)).map_err(io_err(path))
}

pub fn read_emb(path: &Path) -> Result<EmbMatrix> {
    decode_emb(&fs::read(path).map_err(io_err(path))?)
}

/// Sidecar manifest path for an embedding file.
pub fn manifest_path(emb_path: &Path) -> PathBuf {
    emb_path.with_extension("jsonl")
}

/// One line of a manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRow {
    pub row: u32,
    pub id: String,
    pub modality: Modality,
    #[serde(default)]
    pub pairs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

/// Manifest rows ordered by `row`, all of a single modality.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub modality: Modality,
    pub rows: Vec<ManifestRow>,
}

impl Manifest {
    pub fn ids(&self) -> Vec<String> {
        self.rows.iter().map(|r| r.id.clone()).collect()
    }

    /// Rows for `set` with no pairs or labels.
    pub fn bare(set: &EmbeddingSet) -> Self {
        Self {
            modality: set.modality(),
            rows: set
                .ids()
                .iter()
                .enumerate()
                .map(|(i, id)| ManifestRow {
                    row: i as u32,
                    id: id.clone(),
                    modality: set.modality(),
                    pairs: Vec::new(),
                    label: None,
                })
                .collect(),
        }
    }
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| StoreError::ParseError {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push((i + 1, rec));
    }
    Ok(out)
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item)?;
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(&buf).map_err(io_err(path))
}

/// Parses a manifest, rejecting duplicate rows/ids, gaps and mixed modalities.
pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let lines: Vec<(usize, ManifestRow)> = read_jsonl(path)?;
    let mut seen_rows = HashSet::new();
    let mut seen_ids = HashSet::new();
    let mut modality = None;
    for (line, r) in &lines {
        if *modality.get_or_insert(r.modality) != r.modality {
            return Err(StoreError::MixedModality(*line));
        }
        if !seen_rows.insert(r.row) {
            return Err(StoreError::DuplicateRow(r.row));
        }
        if !seen_ids.insert(r.id.clone()) {
            return Err(StoreError::DuplicateId(r.id.clone()));
        }
    }
    let mut rows: Vec<ManifestRow> = lines.into_iter().map(|(_, r)| r).collect();
    rows.sort_by_key(|r| r.row);
    for (i, r) in rows.iter().enumerate() {
        if r.row as usize != i {
            return Err(StoreError::MissingRow(i as u32));
        }
    }
    let modality = modality.ok_or(StoreError::ParseError {
        line: 0,
        message: "manifest is empty".into(),
    })?;
    Ok(Manifest { modality, rows })
}

pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    write_jsonl(path, &manifest.rows)
}

/// Writes the binary file at `path` and its sidecar manifest.
pub fn write_embeddings_with_manifest(set: &EmbeddingSet, manifest: &Manifest, path: &Path) -> Result<()> {
    if manifest.rows.len() != set.len() {
        return Err(StoreError::RowCountMismatch {
            header: set.len(),
            manifest: manifest.rows.len(),
        });
    }
    write_emb(path, set.len(), set.dim(), set.data())?;
    write_manifest(&manifest_path(path), manifest)
}

pub fn write_embeddings(set: &EmbeddingSet, path: &Path) -> Result<()> {
    write_embeddings_with_manifest(set, &Manifest::bare(set), path)
}

/// Reads an embedding file with its manifest.
pub fn read_embeddings_with_manifest(path: &Path) -> Result<(EmbeddingSet, Manifest)> {
    let m = read_emb(path)?;
    let manifest = read_manifest(&manifest_path(path))?;
    if manifest.rows.len() != m.rows {
        return Err(StoreError::RowCountMismatch {
            header: m.rows,
            manifest: manifest.rows.len(),
        });
    }
    let set = EmbeddingSet::new(
        manifest.modality,
        m.dim,
        manifest.ids(),
        m.values.iter().map(|&v| f64::from(v)).collect(),
    )?;
    Ok((set, manifest))
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingSet> {
    Ok(read_embeddings_with_manifest(path)?.0)
}

pub fn read_ratings(path: &Path) -> Result<Vec<Rating>> {
    Ok(read_jsonl(path)?.into_iter().map(|(_, r)| r).collect())
}

pub fn write_ratings(path: &Path, ratings: &[Rating]) -> Result<()> {
    write_jsonl(path, ratings)
}

pub fn read_preferences(path: &Path) -> Result<Vec<PreferencePair>> {
    Ok(read_jsonl(path)?.into_iter().map(|(_, r)| r).collect())
}

pub fn write_preferences(path: &Path, pairs: &[PreferencePair]) -> Result<()> {
    write_jsonl(path, pairs)
}

/// Cross-modal links from the `pairs` fields of both manifests.
pub fn links_from_manifests(
    images: &Manifest,
    texts: &Manifest,
) -> Result<BTreeMap<String, BTreeSet<String>>> {
    let image_ids: HashSet<&str> = images.rows.iter().map(|r| r.id.as_str()).collect();
    let text_ids: HashSet<&str> = texts.rows.iter().map(|r| r.id.as_str()).collect();
    let mut links: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for r in &images.rows {
        for t in &r.pairs {
            if !text_ids.contains(t.as_str()) {
                return Err(StoreError::DanglingId(t.clone()));
            }
            links.entry(r.id.clone()).or_default().insert(t.clone());
        }
    }
    for r in &texts.rows {
        for i in &r.pairs {
            if !image_ids.contains(i.as_str()) {
                return Err(StoreError::DanglingId(i.clone()));
            }
            links.entry(i.clone()).or_default().insert(r.id.clone());
        }
    }
    Ok(links)
}

/// Maps each labeled image to the prompt row carrying the same label.
pub fn labels_from_manifests(images: &Manifest, prompts: &Manifest) -> Result<BTreeMap<String, String>> {
    let by_label: BTreeMap<&str, &str> = prompts
        .rows
        .iter()
        .filter_map(|r| r.label.as_deref().map(|l| (l, r.id.as_str())))
        .collect();
    let mut out = BTreeMap::new();
    for r in &images.rows {
        if let Some(l) = &r.label {
            let prompt = by_label.get(l.as_str()).ok_or_else(|| StoreError::DanglingId(l.clone()))?;
            out.insert(r.id.clone(), prompt.to_string());
        }
    }
    Ok(out)
}

/// Loads an image file and a text file into a corpus linked by their manifests.
pub fn load_corpus(images_path: &Path, texts_path: &Path) -> Result<(PairedCorpus, Manifest, Manifest)> {
    let (images, im) = read_embeddings_with_manifest(images_path)?;
    let (texts, tm) = read_embeddings_with_manifest(texts_path)?;
    let links = links_from_manifests(&im, &tm)?;
    Ok((PairedCorpus::new(images, texts, links)?, im, tm))
}

/// JSON sidecar of a score file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSidecar {
    pub config: SimilarityConfig,
    pub query_modality: Modality,
    pub query_ids: Vec<String>,
    pub candidate_ids: Vec<String>,
    #[serde(default)]
    pub provenance: serde_json::Value,
}

pub fn scores_sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Writes scores as an EMB1 matrix (queries × candidates) plus a JSON sidecar.
pub fn write_scores(path: &Path, scores: &ScoreMatrix, provenance: serde_json::Value) -> Result<()> {
    write_emb(path, scores.n_queries(), scores.n_candidates(), scores.as_slice())?;
    let side = ScoreSidecar {
        config: *scores.config(),
        query_modality: scores.query_modality(),
        query_ids: scores.query_ids().to_vec(),
        candidate_ids: scores.candidate_ids().to_vec(),
        provenance,
    };
    let sp = scores_sidecar_path(path);
    fs::write(&sp, to_canonical_json(&side)?).map_err(io_err(&sp))
}

pub fn read_scores(path: &Path) -> Result<ScoreMatrix> {
    let m = read_emb(path)?;
    let sp = scores_sidecar_path(path);
    let side: ScoreSidecar = serde_json::from_slice(&fs::read(&sp).map_err(io_err(&sp))?)?;
    if side.query_ids.len() != m.rows || side.candidate_ids.len() != m.dim {
        return Err(StoreError::RowCountMismatch {
            header: m.rows,
            manifest: side.query_ids.len(),
        });
    }
    Ok(ScoreMatrix::new(
        side.query_ids,
        side.candidate_ids,
        side.query_modality,
        m.values.iter().map(|&v| f64::from(v)).collect(),
        side.config,
    )?)
}
