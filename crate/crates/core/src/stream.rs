//! On-disk stream format for embeddings, prototypes and manifests.
//!
//! A stream directory holds:
//!
//! * `manifest.txt` with `version=1`, `dim=<D>`, `classes=<K>` and one
//!   `domain <id> batches=<n> samples=<m>` line per domain in stream order;
//! * `prototypes.bin`: magic `GDAP`, `u32 K`, `u32 D`, then `K·D` f32;
//! * `batch_<t>.bin`: magic `GDAB`, `u32 t`, `u32 domain_id`, `u32 N`,
//!   `u32 D`, then `N·D` f32;
//! * optionally `batch_<t>.labels`: `N` u32 class indices.
//!
//! All integers and reals are little-endian; matrices are row-major.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
pub const PROTOTYPE_MAGIC: &[u8; 4] = b"GDAP";
pub const BATCH_MAGIC: &[u8; 4] = b"GDAB";
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const PROTOTYPE_FILE: &str = "prototypes.bin";

/// Temperature used when none is supplied.
pub const DEFAULT_TEMPERATURE: f64 = 0.01;

/// One timestep of raw (un-normalized) visual embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    step_index: u32,
    domain_id: u32,
    features: DMatrix<f32>,
    labels: Option<Vec<u32>>,
}

impl EmbeddingBatch {
    pub fn new(
        step_index: u32,
        domain_id: u32,
        features: DMatrix<f32>,
        labels: Option<Vec<u32>>,
    ) -> Result<Self> {
        if features.nrows() == 0 {
            return Err(Error::InvalidArgument(format!(
                "batch at step {step_index} has no samples"
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("batch at step {step_index}"),
            });
        }
        if let Some(labels) = &labels {
            if labels.len() != features.nrows() {
                return Err(Error::DimensionMismatch {
                    context: "batch labels",
                    expected: features.nrows(),
                    found: labels.len(),
                });
            }
        }
        Ok(EmbeddingBatch {
            step_index,
            domain_id,
            features,
            labels,
        })
    }

    pub fn step_index(&self) -> u32 {
        self.step_index
    }

    pub fn domain_id(&self) -> u32 {
        self.domain_id
    }

    pub fn features(&self) -> &DMatrix<f32> {
        &self.features
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn features_f64(&self) -> DMatrix<f64> {
        self.features.map(f64::from)
    }

    /// A copy with the label sidecar removed.
    pub fn without_labels(&self) -> EmbeddingBatch {
        EmbeddingBatch {
            labels: None,
            ..self.clone()
        }
    }
}

/// Class prototype vectors used as fixed cosine scorers.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassPrototypes {
    prototypes: DMatrix<f32>,
    class_names: Vec<String>,
    temperature: f64,
}

impl ClassPrototypes {
    pub fn new(prototypes: DMatrix<f32>, class_names: Vec<String>, temperature: f64) -> Result<Self> {
        let k = prototypes.nrows();
        if k < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 classes, got {k}"
            )));
        }
        if class_names.len() != k {
            return Err(Error::DimensionMismatch {
                context: "class names",
                expected: k,
                found: class_names.len(),
            });
        }
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        if prototypes.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "prototypes".into(),
            });
        }
        for (row, proto) in prototypes.row_iter().enumerate() {
            if proto.iter().map(|v| f64::from(*v).powi(2)).sum::<f64>() <= 0.0 {
                return Err(Error::ZeroNorm { row });
            }
        }
        Ok(ClassPrototypes {
            prototypes,
            class_names,
            temperature,
        })
    }

    /// Prototypes with generated names `class_0 … class_{K-1}`.
    pub fn unnamed(prototypes: DMatrix<f32>, temperature: f64) -> Result<Self> {
        let names = (0..prototypes.nrows()).map(|k| format!("class_{k}")).collect();
        Self::new(prototypes, names, temperature)
    }

    pub fn matrix(&self) -> &DMatrix<f32> {
        &self.prototypes
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn with_temperature(mut self, temperature: f64) -> Result<Self> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        self.temperature = temperature;
        Ok(self)
    }

    pub fn num_classes(&self) -> usize {
        self.prototypes.nrows()
    }

    pub fn dim(&self) -> usize {
        self.prototypes.ncols()
    }

    /// Row-normalized prototypes in `f64`.
    pub fn normalized(&self) -> DMatrix<f64> {
        let mut w = self.prototypes.map(f64::from);
        for mut row in w.row_iter_mut() {
            let n = row.norm();
            row /= n;
        }
        w
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DomainEntry {
    pub domain_id: u32,
    pub batch_count: usize,
    pub sample_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamManifest {
    pub version: u32,
    pub dim: usize,
    pub classes: usize,
    pub domains: Vec<DomainEntry>,
}

impl StreamManifest {
    pub fn total_samples(&self) -> usize {
        self.domains.iter().map(|d| d.sample_count).sum()
    }

    pub fn total_batches(&self) -> usize {
        self.domains.iter().map(|d| d.batch_count).sum()
    }

    /// Build a manifest describing `batches` in stream order.
    pub fn describe(batches: &[EmbeddingBatch], classes: usize) -> Result<Self> {
        let first = batches.first().ok_or(Error::EmptyStream)?;
        let mut domains: Vec<DomainEntry> = Vec::new();
        for b in batches {
            match domains.last_mut() {
                Some(last) if last.domain_id == b.domain_id() => {
                    last.batch_count += 1;
                    last.sample_count += b.len();
                }
                _ => domains.push(DomainEntry {
                    domain_id: b.domain_id(),
                    batch_count: 1,
                    sample_count: b.len(),
                }),
            }
        }
        Ok(StreamManifest {
            version: FORMAT_VERSION,
            dim: first.dim(),
            classes,
            domains,
        })
    }
}

impl fmt::Display for StreamManifest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "version={}", self.version)?;
        writeln!(f, "dim={}", self.dim)?;
        writeln!(f, "classes={}", self.classes)?;
        for d in &self.domains {
            writeln!(
                f,
                "domain {} batches={} samples={}",
                d.domain_id, d.batch_count, d.sample_count
            )?;
        }
        Ok(())
    }
}

impl FromStr for StreamManifest {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut version = None;
        let mut dim = None;
        let mut classes = None;
        let mut domains = Vec::new();
        for (i, raw) in s.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            let malformed = || Error::MalformedManifest {
                line: i + 1,
                text: raw.to_string(),
            };
            if let Some(rest) = line.strip_prefix("domain ") {
                let mut parts = rest.split_whitespace();
                let id = parts.next().ok_or_else(malformed)?.parse().map_err(|_| malformed())?;
                let batches = parts
                    .next()
                    .and_then(|p| p.strip_prefix("batches="))
                    .ok_or_else(malformed)?
                    .parse()
                    .map_err(|_| malformed())?;
                let samples = parts
                    .next()
                    .and_then(|p| p.strip_prefix("samples="))
                    .ok_or_else(malformed)?
                    .parse()
                    .map_err(|_| malformed())?;
                if parts.next().is_some() {
                    return Err(malformed());
                }
                domains.push(DomainEntry {
                    domain_id: id,
                    batch_count: batches,
                    sample_count: samples,
                });
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(malformed)?;
            match key.trim() {
                "version" => version = Some(value.trim().to_string()),
                "dim" => dim = Some(value.trim().parse().map_err(|_| malformed())?),
                "classes" => classes = Some(value.trim().parse().map_err(|_| malformed())?),
                _ => return Err(malformed()),
            }
        }
        let version = version.ok_or_else(|| Error::VersionMismatch {
            expected: FORMAT_VERSION,
            found: "<missing>".into(),
        })?;
        if version != FORMAT_VERSION.to_string() {
            return Err(Error::VersionMismatch {
                expected: FORMAT_VERSION,
                found: version,
            });
        }
        let missing = |field: &str| Error::MalformedManifest {
            line: 0,
            text: format!("missing `{field}`"),
        };
        Ok(StreamManifest {
            version: FORMAT_VERSION,
            dim: dim.ok_or_else(|| missing("dim"))?,
            classes: classes.ok_or_else(|| missing("classes"))?,
            domains,
        })
    }
}

pub fn batch_path(dir: &Path, step: u32) -> PathBuf {
    dir.join(format!("batch_{step}.bin"))
}

pub fn labels_path(dir: &Path, step: u32) -> PathBuf {
    dir.join(format!("batch_{step}.labels"))
}

/// Write a stream directory. Everything is validated before any file is created.
pub fn write_stream(
    batches: &[EmbeddingBatch],
    prototypes: &ClassPrototypes,
    dir: impl AsRef<Path>,
) -> Result<StreamManifest> {
    let dir = dir.as_ref();
    if batches.is_empty() {
        return Err(Error::EmptyStream);
    }
    let dim = prototypes.dim();
    let k = prototypes.num_classes();
    let mut previous: Option<u32> = None;
    for b in batches {
        if b.dim() != dim {
            return Err(Error::DimensionMismatch {
                context: "batch dimension vs prototypes",
                expected: dim,
                found: b.dim(),
            });
        }
        if b.features().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("batch at step {}", b.step_index()),
            });
        }
        if let Some(prev) = previous {
            if b.step_index() <= prev {
                return Err(Error::NonMonotonicStep {
                    previous: u64::from(prev),
                    current: u64::from(b.step_index()),
                });
            }
        }
        if let Some(labels) = b.labels() {
            if let Some(&bad) = labels.iter().find(|&&l| l as usize >= k) {
                return Err(Error::InvalidArgument(format!(
                    "label {bad} out of range for {k} classes"
                )));
            }
        }
        previous = Some(b.step_index());
    }
    let manifest = StreamManifest::describe(batches, k)?;

    fs::create_dir_all(dir)?;
    fs::write(dir.join(PROTOTYPE_FILE), encode_prototypes(prototypes))?;
    for b in batches {
        fs::write(batch_path(dir, b.step_index()), encode_batch(b))?;
        let labels = labels_path(dir, b.step_index());
        match b.labels() {
            Some(l) => {
                let mut buf = Vec::with_capacity(4 * l.len());
                for v in l {
                    buf.extend_from_slice(&v.to_le_bytes());
                }
                fs::write(labels, buf)?;
            }
            None if labels.exists() => fs::remove_file(labels)?,
            None => {}
        }
    }
    let mut f = fs::File::create(dir.join(MANIFEST_FILE))?;
    f.write_all(manifest.to_string().as_bytes())?;
    f.sync_all()?;
    Ok(manifest)
}

pub fn encode_prototypes(prototypes: &ClassPrototypes) -> Vec<u8> {
    let m = prototypes.matrix();
    let mut buf = Vec::with_capacity(12 + 4 * m.len());
    buf.extend_from_slice(PROTOTYPE_MAGIC);
    buf.extend_from_slice(&(m.nrows() as u32).to_le_bytes());
    buf.extend_from_slice(&(m.ncols() as u32).to_le_bytes());
    push_rows(&mut buf, m);
    buf
}

pub fn encode_batch(batch: &EmbeddingBatch) -> Vec<u8> {
    let m = batch.features();
    let mut buf = Vec::with_capacity(20 + 4 * m.len());
    buf.extend_from_slice(BATCH_MAGIC);
    for v in [
        batch.step_index(),
        batch.domain_id(),
        m.nrows() as u32,
        m.ncols() as u32,
    ] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    push_rows(&mut buf, m);
    buf
}

fn push_rows(buf: &mut Vec<u8>, m: &DMatrix<f32>) {
    for row in m.row_iter() {
        for v in row.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Truncated(self.path.to_path_buf())),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32_matrix(&mut self, rows: usize, cols: usize) -> Result<DMatrix<f32>> {
        let n = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Truncated(self.path.to_path_buf()))?;
        let raw = self.take(n)?;
        Ok(DMatrix::from_row_iterator(
            rows,
            cols,
            raw.chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap())),
        ))
    }

    fn finish(&self) -> Result<()> {
        if self.pos == self.bytes.len() {
            Ok(())
        } else {
            Err(Error::Checksum(format!(
                "{} has {} trailing bytes",
                self.path.display(),
                self.bytes.len() - self.pos
            )))
        }
    }
}

fn check_magic(cursor: &mut Cursor<'_>, magic: &[u8; 4]) -> Result<()> {
    let found = cursor
        .take(4)
        .map_err(|_| Error::UnrecognizedFormat(cursor.path.to_path_buf()))?;
    if found != magic {
        return Err(Error::UnrecognizedFormat(cursor.path.to_path_buf()));
    }
    Ok(())
}

pub fn read_prototypes(path: &Path, temperature: f64) -> Result<ClassPrototypes> {
    let bytes = fs::read(path)?;
    let mut c = Cursor {
        bytes: &bytes,
        pos: 0,
        path,
    };
    check_magic(&mut c, PROTOTYPE_MAGIC)?;
    let k = c.u32()? as usize;
    let d = c.u32()? as usize;
    let m = c.f32_matrix(k, d)?;
    c.finish()?;
    ClassPrototypes::unnamed(m, temperature)
}

pub fn read_batch(path: &Path) -> Result<EmbeddingBatch> {
    let bytes = fs::read(path)?;
    let mut c = Cursor {
        bytes: &bytes,
        pos: 0,
        path,
    };
    check_magic(&mut c, BATCH_MAGIC)?;
    let step = c.u32()?;
    let domain = c.u32()?;
    let n = c.u32()? as usize;
    let d = c.u32()? as usize;
    let features = c.f32_matrix(n, d)?;
    c.finish()?;

    let labels_file = path.with_extension("labels");
    let labels = if labels_file.exists() {
        let raw = fs::read(&labels_file)?;
        if raw.len() != 4 * n {
            return Err(if raw.len() < 4 * n {
                Error::Truncated(labels_file)
            } else {
                Error::Checksum(format!("{} has trailing bytes", labels_file.display()))
            });
        }
        Some(
            raw.chunks_exact(4)
                .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        )
    } else {
        None
    };
    EmbeddingBatch::new(step, domain, features, labels)
}

/// An opened stream directory. Immutable; iterate it any number of times.
#[derive(Debug, Clone)]
pub struct StreamSource {
    dir: PathBuf,
    manifest: StreamManifest,
    prototypes: ClassPrototypes,
    steps: Vec<u32>,
}

impl StreamSource {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        Self::open_with_temperature(dir, DEFAULT_TEMPERATURE)
    }

    pub fn open_with_temperature(dir: impl AsRef<Path>, temperature: f64) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        let manifest: StreamManifest = fs::read_to_string(dir.join(MANIFEST_FILE))?.parse()?;
        let prototypes = read_prototypes(&dir.join(PROTOTYPE_FILE), temperature)?;
        if prototypes.num_classes() != manifest.classes || prototypes.dim() != manifest.dim {
            return Err(Error::ManifestMismatch(format!(
                "manifest declares K={} D={}, prototype file has K={} D={}",
                manifest.classes,
                manifest.dim,
                prototypes.num_classes(),
                prototypes.dim()
            )));
        }

        let mut steps = Vec::new();
        for entry in fs::read_dir(&dir)? {
            let name = entry?.file_name();
            let name = name.to_string_lossy();
            if let Some(step) = name
                .strip_prefix("batch_")
                .and_then(|r| r.strip_suffix(".bin"))
            {
                let step = step
                    .parse()
                    .map_err(|_| Error::UnrecognizedFormat(dir.join(name.as_ref())))?;
                steps.push(step);
            }
        }
        steps.sort_unstable();
        if steps.len() != manifest.total_batches() {
            return Err(Error::Checksum(format!(
                "manifest lists {} batches, directory holds {}",
                manifest.total_batches(),
                steps.len()
            )));
        }
        if steps.is_empty() {
            return Err(Error::EmptyStream);
        }
        Ok(StreamSource {
            dir,
            manifest,
            prototypes,
            steps,
        })
    }

    pub fn manifest(&self) -> &StreamManifest {
        &self.manifest
    }

    pub fn prototypes(&self) -> &ClassPrototypes {
        &self.prototypes
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Sequential reader holding at most one batch in memory.
    pub fn batches(&self) -> StreamReader<'_> {
        StreamReader {
            source: self,
            next: 0,
            domain: 0,
            domain_batches: 0,
            domain_samples: 0,
            failed: false,
        }
    }
}

/// Lazily reads batches in step order, checking them against the manifest.
pub struct StreamReader<'a> {
    source: &'a StreamSource,
    next: usize,
    domain: usize,
    domain_batches: usize,
    domain_samples: usize,
    failed: bool,
}

impl StreamReader<'_> {
    fn read_next(&mut self, step: u32) -> Result<EmbeddingBatch> {
        let manifest = &self.source.manifest;
        let batch = read_batch(&batch_path(&self.source.dir, step))?;
        if batch.step_index() != step {
            return Err(Error::Checksum(format!(
                "batch_{step}.bin carries step index {}",
                batch.step_index()
            )));
        }
        if batch.dim() != manifest.dim {
            return Err(Error::DimensionMismatch {
                context: "batch dimension vs manifest",
                expected: manifest.dim,
                found: batch.dim(),
            });
        }
        if let Some(labels) = batch.labels() {
            if let Some(&bad) = labels.iter().find(|&&l| l as usize >= manifest.classes) {
                return Err(Error::Checksum(format!(
                    "label {bad} in batch_{step}.labels exceeds class count"
                )));
            }
        }
        // advance the manifest cursor past completed domains
        while self.domain < manifest.domains.len()
            && self.domain_batches == manifest.domains[self.domain].batch_count
        {
            self.domain += 1;
            self.domain_batches = 0;
            self.domain_samples = 0;
        }
        let entry = manifest.domains.get(self.domain).ok_or_else(|| {
            Error::Checksum(format!("batch_{step}.bin is beyond the manifest's domains"))
        })?;
        if entry.domain_id != batch.domain_id() {
            return Err(Error::Checksum(format!(
                "batch_{step}.bin belongs to domain {}, manifest expects {}",
                batch.domain_id(),
                entry.domain_id
            )));
        }
        self.domain_batches += 1;
        self.domain_samples += batch.len();
        let domain_done = self.domain_batches == entry.batch_count;
        if self.domain_samples > entry.sample_count
            || (domain_done && self.domain_samples != entry.sample_count)
        {
            return Err(Error::Checksum(format!(
                "domain {} holds {} samples, manifest declares {}",
                entry.domain_id, self.domain_samples, entry.sample_count
            )));
        }
        Ok(batch)
    }
}

impl Iterator for StreamReader<'_> {
    type Item = Result<EmbeddingBatch>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        let step = *self.source.steps.get(self.next)?;
        self.next += 1;
        let out = self.read_next(step);
        if out.is_err() {
            self.failed = true;
        }
        Some(out)
    }
}

/// Open a stream directory: manifest, lazy batch reader, prototypes.
pub fn read_stream(dir: impl AsRef<Path>) -> Result<StreamSource> {
    StreamSource::open(dir)
}

/// Read every batch of a stream into memory.
pub fn read_all(dir: impl AsRef<Path>) -> Result<(StreamManifest, Vec<EmbeddingBatch>, ClassPrototypes)> {
    let source = StreamSource::open(dir)?;
    let batches = source.batches().collect::<Result<Vec<_>>>()?;
    let StreamSource {
        manifest,
        prototypes,
        ..
    } = source;
    Ok((manifest, batches, prototypes))
}
