//! DRS-structured dataset trees: paths, catalogs, manifests and path lists.
//!
//! A [`Catalog`] maps each dataset path (the unit of replication) to the files
//! below it. Files carry only a size and a 64-bit checksum; contents are never
//! modeled.

mod generate;
mod path;

use std::collections::BTreeSet;
use std::hash::Hasher;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use generate::{generate_catalog, generate_for_paths, CatalogSpec, CountDist, SizeDist};
pub use path::{
    format_drs_path, parse_drs_path, DatasetPath, DrsScheme, Facet, Flavor, CMIP5_FACETS,
    CMIP6_FACETS, MAX_DEPTH,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CatalogError {
    #[error("malformed path {raw:?}{}: {reason}", line.map(|l| format!(" on line {l}")).unwrap_or_default())]
    MalformedPath {
        raw: String,
        reason: String,
        line: Option<usize>,
    },
    #[error("unknown path {0}")]
    UnknownPath(String),
    #[error("invalid catalog spec: {0}")]
    InvalidSpec(String),
    #[error("path {path} cannot be split: {reason}")]
    UnsplittablePath { path: String, reason: String },
    #[error("catalog file: {0}")]
    Format(String),
}

impl CatalogError {
    pub(crate) fn malformed(raw: impl Into<String>, reason: impl Into<String>) -> Self {
        CatalogError::MalformedPath {
            raw: raw.into(),
            reason: reason.into(),
            line: None,
        }
    }
}

/// Algorithm used for the synthetic per-file checksums.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChecksumAlgorithm {
    #[default]
    Xxh64,
    Fnv1a64,
}

impl ChecksumAlgorithm {
    /// Checksum of file `rel_path` under `path`, a pure function of its inputs.
    pub fn checksum(self, seed: u64, path: &DatasetPath, rel_path: &str) -> u64 {
        let key = format!("{path}\0{rel_path}");
        match self {
            ChecksumAlgorithm::Xxh64 => xxhash_rust::xxh64::xxh64(key.as_bytes(), seed),
            ChecksumAlgorithm::Fnv1a64 => {
                let mut h = fnv::FnvHasher::default();
                h.write_u64(seed);
                h.write(key.as_bytes());
                h.finish()
            }
        }
    }
}

/// A file below a dataset path.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FileEntry {
    /// Slash-separated path relative to the dataset directory.
    pub rel_path: String,
    pub size: u64,
    pub checksum: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Totals {
    pub directories: u64,
    pub files: u64,
    pub bytes: u64,
}

impl Totals {
    fn add(&mut self, other: Totals) {
        self.directories += other.directories;
        self.files += other.files;
        self.bytes += other.bytes;
    }
}

/// The file listing of one dataset path, sorted by relative path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub path: DatasetPath,
    pub entries: Vec<FileEntry>,
    pub directories: u64,
    pub files: u64,
    pub bytes: u64,
}

impl Manifest {
    /// Builds a manifest, sorting entries and deriving the counts.
    pub fn new(path: DatasetPath, mut entries: Vec<FileEntry>) -> Manifest {
        entries.sort_by(|a, b| a.rel_path.cmp(&b.rel_path));
        let t = tree_totals(&entries);
        Manifest {
            path,
            entries,
            directories: t.directories,
            files: t.files,
            bytes: t.bytes,
        }
    }

    /// Files plus directories: what a recursive scan has to enumerate.
    pub fn scan_entries(&self) -> u64 {
        self.files + self.directories
    }

    /// First entry where `self` and `other` disagree, by relative path.
    pub fn first_difference<'a>(&'a self, other: &'a Manifest) -> Option<EntryDiff<'a>> {
        let (mut i, mut j) = (0, 0);
        while i < self.entries.len() || j < other.entries.len() {
            match (self.entries.get(i), other.entries.get(j)) {
                (Some(a), Some(b)) => match a.rel_path.cmp(&b.rel_path) {
                    std::cmp::Ordering::Less => return Some(EntryDiff::Missing(a)),
                    std::cmp::Ordering::Greater => return Some(EntryDiff::Unexpected(b)),
                    std::cmp::Ordering::Equal => {
                        if a != b {
                            return Some(EntryDiff::Differs { expected: a, found: b });
                        }
                        i += 1;
                        j += 1;
                    }
                },
                (Some(a), None) => return Some(EntryDiff::Missing(a)),
                (None, Some(b)) => return Some(EntryDiff::Unexpected(b)),
                (None, None) => unreachable!(),
            }
        }
        None
    }
}

/// How two manifests first disagree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EntryDiff<'a> {
    /// Present in the reference, absent in the other.
    Missing(&'a FileEntry),
    /// Present only in the other manifest.
    Unexpected(&'a FileEntry),
    Differs {
        expected: &'a FileEntry,
        found: &'a FileEntry,
    },
}

/// Totals of a sorted file list. The dataset directory itself counts as one
/// directory.
fn tree_totals(entries: &[FileEntry]) -> Totals {
    let mut dirs: BTreeSet<&str> = BTreeSet::new();
    let mut bytes = 0u64;
    for e in entries {
        bytes += e.size;
        let mut rest = e.rel_path.as_str();
        while let Some(pos) = rest.rfind('/') {
            rest = &rest[..pos];
            if !dirs.insert(rest) {
                break;
            }
        }
    }
    Totals {
        directories: 1 + dirs.len() as u64,
        files: entries.len() as u64,
        bytes,
    }
}

/// Dataset paths with their file trees.
#[derive(Debug, Clone, PartialEq)]
pub struct Catalog {
    scheme: DrsScheme,
    checksum: ChecksumAlgorithm,
    datasets: IndexMap<DatasetPath, Vec<FileEntry>>,
    totals: Totals,
}

impl Catalog {
    /// Assembles a catalog from explicit file lists. Entries are sorted by
    /// relative path; paths must be unique and must not nest.
    pub fn from_datasets<I>(
        scheme: DrsScheme,
        checksum: ChecksumAlgorithm,
        datasets: I,
    ) -> Result<Catalog, CatalogError>
    where
        I: IntoIterator<Item = (DatasetPath, Vec<FileEntry>)>,
    {
        let mut cat = Catalog {
            scheme,
            checksum,
            datasets: IndexMap::new(),
            totals: Totals::default(),
        };
        for (path, files) in datasets {
            cat.insert(path, files)?;
        }
        Ok(cat)
    }

    fn insert(&mut self, path: DatasetPath, mut files: Vec<FileEntry>) -> Result<(), CatalogError> {
        if self.datasets.contains_key(&path) {
            return Err(CatalogError::InvalidSpec(format!("duplicate path {path}")));
        }
        if let Some(a) = path.ancestors().find(|a| self.datasets.contains_key(a)) {
            return Err(CatalogError::InvalidSpec(format!("{path} nests inside {a}")));
        }
        if self.datasets.keys().any(|k| path.is_ancestor_of(k)) {
            return Err(CatalogError::InvalidSpec(format!("{path} contains another dataset")));
        }
        if files.is_empty() {
            return Err(CatalogError::InvalidSpec(format!("{path} has no files")));
        }
        files.sort_by(|a, b| a.rel_path.cmp(&b.rel_path));
        for w in files.windows(2) {
            if w[0].rel_path == w[1].rel_path {
                return Err(CatalogError::InvalidSpec(format!(
                    "{path}: duplicate file {}",
                    w[0].rel_path
                )));
            }
        }
        for f in &files {
            if f.size == 0 {
                return Err(CatalogError::InvalidSpec(format!(
                    "{path}/{}: zero-size file",
                    f.rel_path
                )));
            }
            if f.rel_path.is_empty()
                || f.rel_path.starts_with('/')
                || f.rel_path.ends_with('/')
                || f.rel_path.split('/').any(|s| s.is_empty() || s == "." || s == "..")
            {
                return Err(CatalogError::InvalidSpec(format!(
                    "{path}: bad relative path {:?}",
                    f.rel_path
                )));
            }
        }
        self.totals.add(tree_totals(&files));
        self.datasets.insert(path, files);
        Ok(())
    }

    /// Adds datasets not already present; returns how many were new.
    pub fn extend(&mut self, other: Catalog) -> Result<usize, CatalogError> {
        let mut added = 0;
        for (p, files) in other.datasets {
            if !self.datasets.contains_key(&p) {
                self.insert(p, files)?;
                added += 1;
            }
        }
        Ok(added)
    }

    pub fn scheme(&self) -> &DrsScheme {
        &self.scheme
    }

    pub fn checksum_algorithm(&self) -> ChecksumAlgorithm {
        self.checksum
    }

    pub fn totals(&self) -> Totals {
        self.totals
    }

    pub fn len(&self) -> usize {
        self.datasets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.datasets.is_empty()
    }

    pub fn paths(&self) -> impl ExactSizeIterator<Item = &DatasetPath> {
        self.datasets.keys()
    }

    pub fn contains(&self, p: &DatasetPath) -> bool {
        self.datasets.contains_key(p)
    }

    /// Position of a catalog path in catalog order.
    pub fn position(&self, p: &DatasetPath) -> Option<usize> {
        self.datasets.get_index_of(p)
    }

    pub fn files(&self, p: &DatasetPath) -> Option<&[FileEntry]> {
        self.datasets.get(p).map(Vec::as_slice)
    }

    /// The catalog path equal to or containing `p`.
    pub fn root_of(&self, p: &DatasetPath) -> Option<&DatasetPath> {
        if let Some((k, _)) = self.datasets.get_key_value(p) {
            return Some(k);
        }
        p.ancestors()
            .find_map(|a| self.datasets.get_key_value(&a).map(|(k, _)| k))
    }

    /// Manifest of a catalog path or of any directory below one.
    pub fn manifest(&self, p: &DatasetPath) -> Result<Manifest, CatalogError> {
        let unknown = || CatalogError::UnknownPath(p.to_string());
        let root = self.root_of(p).ok_or_else(unknown)?;
        let files = &self.datasets[root];
        if root == p {
            return Ok(Manifest::new(p.clone(), files.clone()));
        }
        let rel = root.relative_of(p).ok_or_else(unknown)?;
        let dir = format!("{rel}/");
        let entries: Vec<FileEntry> = files
            .iter()
            .filter_map(|f| {
                f.rel_path.strip_prefix(&dir).map(|r| FileEntry {
                    rel_path: r.to_string(),
                    size: f.size,
                    checksum: f.checksum,
                })
            })
            .collect();
        if entries.is_empty() {
            return Err(unknown());
        }
        Ok(Manifest::new(p.clone(), entries))
    }

    /// Names of the immediate subdirectories of `p`, sorted, and whether `p`
    /// also holds files directly.
    pub fn subdirectories(&self, p: &DatasetPath) -> Result<(Vec<String>, bool), CatalogError> {
        let m = self.manifest(p)?;
        let mut dirs = BTreeSet::new();
        let mut loose = false;
        for e in &m.entries {
            match e.rel_path.split_once('/') {
                Some((d, _)) => {
                    dirs.insert(d.to_string());
                }
                None => loose = true,
            }
        }
        Ok((dirs.into_iter().collect(), loose))
    }

    /// Facet name used for the level below `p`.
    pub fn child_facet(&self, p: &DatasetPath) -> String {
        // the scheme's facet at this depth when the path follows the scheme,
        // otherwise the cmip6 name for that level
        if p
            .facet_names()
            .zip(self.scheme.facets.iter())
            .all(|(a, b)| a == b)
        {
            if let Some(name) = self.scheme.facets.get(p.depth()) {
                return name.clone();
            }
        }
        CMIP6_FACETS
            .get(p.depth())
            .map(|s| s.to_string())
            .unwrap_or_else(|| format!("level{}", p.depth() + 1))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&CatalogFile::from(self)).expect("catalog serializes")
    }

    pub fn from_json(text: &str) -> Result<Catalog, CatalogError> {
        let file: CatalogFile =
            serde_json::from_str(text).map_err(|e| CatalogError::Format(e.to_string()))?;
        file.into_catalog()
    }
}

/// On-disk catalog layout.
#[derive(Serialize, Deserialize)]
struct CatalogFile {
    scheme: DrsScheme,
    checksum: ChecksumAlgorithm,
    datasets: Vec<DatasetRecord>,
}

#[derive(Serialize, Deserialize)]
struct DatasetRecord {
    path: String,
    facets: Vec<String>,
    files: Vec<(String, u64, u64)>,
}

impl From<&Catalog> for CatalogFile {
    fn from(c: &Catalog) -> Self {
        CatalogFile {
            scheme: c.scheme.clone(),
            checksum: c.checksum,
            datasets: c
                .datasets
                .iter()
                .map(|(p, files)| DatasetRecord {
                    path: p.to_string(),
                    facets: p.facet_names().map(str::to_string).collect(),
                    files: files
                        .iter()
                        .map(|f| (f.rel_path.clone(), f.size, f.checksum))
                        .collect(),
                })
                .collect(),
        }
    }
}

impl CatalogFile {
    fn into_catalog(self) -> Result<Catalog, CatalogError> {
        let mut datasets = Vec::with_capacity(self.datasets.len());
        for d in self.datasets {
            let names: Vec<&str> = d.facets.iter().map(String::as_str).collect();
            let p = DatasetPath::from_text_and_facets(&d.path, &names)?;
            let files = d
                .files
                .into_iter()
                .map(|(rel_path, size, checksum)| FileEntry {
                    rel_path,
                    size,
                    checksum,
                })
                .collect();
            datasets.push((p, files));
        }
        Catalog::from_datasets(self.scheme, self.checksum, datasets)
    }
}

/// Manifest of `p` in `c`.
pub fn manifest(c: &Catalog, p: &DatasetPath) -> Result<Manifest, CatalogError> {
    c.manifest(p)
}

/// Reads a path listing: one path per line, `#` comments and blank lines
/// ignored, duplicates dropped after their first occurrence.
pub fn load_path_list(source: &str, scheme: &DrsScheme) -> Result<Vec<DatasetPath>, CatalogError> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let p = scheme.parse(line).map_err(|e| match e {
            CatalogError::MalformedPath { raw, reason, .. } => CatalogError::MalformedPath {
                raw,
                reason,
                line: Some(i + 1),
            },
            other => other,
        })?;
        if seen.insert(p.clone()) {
            out.push(p);
        }
    }
    Ok(out)
}

/// Writes paths one per line, LF-terminated.
pub fn save_path_list<'a, I>(paths: I) -> String
where
    I: IntoIterator<Item = &'a DatasetPath>,
{
    let mut out = String::new();
    for p in paths {
        out.push_str(&p.to_string());
        out.push('\n');
    }
    out
}
