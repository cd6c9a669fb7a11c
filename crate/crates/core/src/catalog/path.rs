use std::fmt;

use serde::{Deserialize, Serialize};

use super::CatalogError;

/// Maximum number of facet levels in a dataset path.
pub const MAX_DEPTH: usize = 11;

/// The ten directory levels of a CMIP6 DRS path, outermost first.
pub const CMIP6_FACETS: [&str; 10] = [
    "mip_era",
    "activity_drs",
    "institution_id",
    "source_id",
    "experiment_id",
    "member_id",
    "table_id",
    "variable_id",
    "grid_label",
    "version",
];

/// CMIP5 DRS levels, used as the default CMIP5 facet list.
pub const CMIP5_FACETS: [&str; 11] = [
    "activity",
    "product",
    "institute",
    "model",
    "experiment",
    "frequency",
    "modeling_realm",
    "mip_table",
    "ensemble",
    "version",
    "variable",
];

const GENERIC_FACETS: [&str; 11] = [
    "root", "level2", "level3", "level4", "level5", "level6", "level7", "level8", "level9",
    "level10", "level11",
];

/// One level of a dataset path.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Facet {
    pub name: String,
    pub value: String,
}

/// A DRS-structured directory path: an optional storage prefix followed by
/// named facet values. The unit of replication.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DatasetPath {
    prefix: String,
    components: Vec<Facet>,
}

impl DatasetPath {
    /// Builds a path from a prefix (slash-joined segments, no leading slash)
    /// and `(facet, value)` pairs.
    pub fn new<I, N, V>(prefix: &str, components: I) -> Result<Self, CatalogError>
    where
        I: IntoIterator<Item = (N, V)>,
        N: Into<String>,
        V: Into<String>,
    {
        let components: Vec<Facet> = components
            .into_iter()
            .map(|(n, v)| Facet {
                name: n.into(),
                value: v.into(),
            })
            .collect();
        let path = DatasetPath {
            prefix: prefix.trim_matches('/').to_string(),
            components,
        };
        path.validate()?;
        Ok(path)
    }

    fn validate(&self) -> Result<(), CatalogError> {
        let malformed = |reason: String| CatalogError::malformed(self.to_string(), reason);
        if self.components.is_empty() {
            return Err(malformed("no facet segments".into()));
        }
        if self.components.len() > MAX_DEPTH {
            return Err(malformed(format!(
                "{} facet segments, at most {MAX_DEPTH} allowed",
                self.components.len()
            )));
        }
        if !self.prefix.is_empty() {
            for seg in self.prefix.split('/') {
                check_segment(seg).map_err(|r| malformed(format!("prefix: {r}")))?;
            }
        }
        for f in &self.components {
            if f.name.is_empty()
                || !f
                    .name
                    .bytes()
                    .all(|b| b.is_ascii_alphanumeric() || b == b'_')
            {
                return Err(malformed(format!("illegal facet name {:?}", f.name)));
            }
            check_segment(&f.value).map_err(|r| malformed(format!("{}: {r}", f.name)))?;
        }
        Ok(())
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn components(&self) -> &[Facet] {
        &self.components
    }

    pub fn depth(&self) -> usize {
        self.components.len()
    }

    /// Value of the named facet, if present.
    pub fn facet(&self, name: &str) -> Option<&str> {
        self.components
            .iter()
            .find(|f| f.name == name)
            .map(|f| f.value.as_str())
    }

    pub fn values(&self) -> impl Iterator<Item = &str> {
        self.components.iter().map(|f| f.value.as_str())
    }

    pub fn facet_names(&self) -> impl Iterator<Item = &str> {
        self.components.iter().map(|f| f.name.as_str())
    }

    /// Immediate subdirectory of this path.
    pub fn child(&self, name: &str, value: &str) -> Result<DatasetPath, CatalogError> {
        let mut components = self.components.clone();
        components.push(Facet {
            name: name.to_string(),
            value: value.to_string(),
        });
        let p = DatasetPath {
            prefix: self.prefix.clone(),
            components,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn parent(&self) -> Option<DatasetPath> {
        if self.components.len() <= 1 {
            return None;
        }
        Some(DatasetPath {
            prefix: self.prefix.clone(),
            components: self.components[..self.components.len() - 1].to_vec(),
        })
    }

    /// Proper ancestors, nearest first.
    pub fn ancestors(&self) -> impl Iterator<Item = DatasetPath> + '_ {
        (1..self.components.len()).rev().map(move |n| DatasetPath {
            prefix: self.prefix.clone(),
            components: self.components[..n].to_vec(),
        })
    }

    /// True when `self` is a proper ancestor of `other`.
    pub fn is_ancestor_of(&self, other: &DatasetPath) -> bool {
        self.prefix == other.prefix
            && self.components.len() < other.components.len()
            && other.components[..self.components.len()] == self.components[..]
    }

    /// Relative directory of `descendant` below `self`, e.g. `r1i1p1f1/Amon`.
    pub fn relative_of(&self, descendant: &DatasetPath) -> Option<String> {
        if !self.is_ancestor_of(descendant) {
            return None;
        }
        Some(
            descendant.components[self.components.len()..]
                .iter()
                .map(|f| f.value.as_str())
                .collect::<Vec<_>>()
                .join("/"),
        )
    }

    /// Rebuilds a path from its canonical text and the ordered facet names.
    /// Segments before the facets form the prefix.
    pub fn from_text_and_facets(text: &str, facets: &[&str]) -> Result<DatasetPath, CatalogError> {
        let segments = split_segments(text)?;
        if facets.is_empty() || facets.len() > segments.len() {
            return Err(CatalogError::malformed(
                text,
                format!("{} facet names for {} segments", facets.len(), segments.len()),
            ));
        }
        let split = segments.len() - facets.len();
        DatasetPath::new(
            &segments[..split].join("/"),
            facets.iter().copied().zip(segments[split..].iter().copied()),
        )
    }
}

impl fmt::Display for DatasetPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if !self.prefix.is_empty() {
            write!(f, "/{}", self.prefix)?;
        }
        for c in &self.components {
            write!(f, "/{}", c.value)?;
        }
        Ok(())
    }
}

fn check_segment(seg: &str) -> Result<(), String> {
    if seg.is_empty() {
        return Err("empty segment".into());
    }
    if seg == "." || seg == ".." {
        return Err(format!("relative segment {seg:?}"));
    }
    if let Some(c) = seg
        .chars()
        .find(|c| *c == '/' || *c == '\\' || c.is_whitespace() || c.is_control() || *c == ',')
    {
        return Err(format!("illegal character {c:?} in {seg:?}"));
    }
    Ok(())
}

fn split_segments(raw: &str) -> Result<Vec<&str>, CatalogError> {
    let trimmed = raw.trim();
    if trimmed.is_empty() {
        return Err(CatalogError::malformed(raw, "empty path"));
    }
    let body = trimmed.strip_prefix('/').unwrap_or(trimmed);
    let body = body.strip_suffix('/').unwrap_or(body);
    if body.is_empty() {
        return Err(CatalogError::malformed(raw, "no segments"));
    }
    let segments: Vec<&str> = body.split('/').collect();
    for seg in &segments {
        check_segment(seg).map_err(|r| CatalogError::malformed(raw, r))?;
    }
    Ok(segments)
}

/// DRS layout families understood by [`parse_drs_path`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Flavor {
    Cmip5,
    Cmip6,
    Generic,
}

/// A named facet list plus the rules for locating it inside a raw path.
///
/// `exact` schemes need every facet present, and any extra leading segments
/// become the storage prefix. Otherwise the path holds 1 to `facets.len()`
/// facets; when `anchor` is set, segments before the first one equal to the
/// anchor are the prefix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DrsScheme {
    pub name: String,
    pub facets: Vec<String>,
    #[serde(default)]
    pub anchor: Option<String>,
    #[serde(default)]
    pub exact: bool,
}

impl DrsScheme {
    pub fn cmip6() -> Self {
        DrsScheme {
            name: "cmip6".into(),
            facets: CMIP6_FACETS.iter().map(|s| s.to_string()).collect(),
            anchor: None,
            exact: true,
        }
    }

    pub fn cmip5() -> Self {
        DrsScheme {
            name: "cmip5".into(),
            facets: CMIP5_FACETS.iter().map(|s| s.to_string()).collect(),
            anchor: Some("cmip5".into()),
            exact: false,
        }
    }

    pub fn generic() -> Self {
        DrsScheme {
            name: "generic".into(),
            facets: GENERIC_FACETS.iter().map(|s| s.to_string()).collect(),
            anchor: None,
            exact: false,
        }
    }

    /// Leading CMIP6 levels down to `depth`, anchored on the `CMIP6` era.
    /// Dataset paths of generated catalogs follow this scheme.
    pub fn cmip6_datasets(depth: usize) -> Self {
        DrsScheme {
            name: format!("cmip6-depth{depth}"),
            facets: CMIP6_FACETS.iter().take(depth).map(|s| s.to_string()).collect(),
            anchor: Some("CMIP6".into()),
            exact: false,
        }
    }

    pub fn for_flavor(flavor: Flavor) -> Self {
        match flavor {
            Flavor::Cmip5 => Self::cmip5(),
            Flavor::Cmip6 => Self::cmip6(),
            Flavor::Generic => Self::generic(),
        }
    }

    pub fn parse(&self, raw: &str) -> Result<DatasetPath, CatalogError> {
        let segments = split_segments(raw)?;
        let max = self.facets.len().min(MAX_DEPTH);
        let prefix_len = if self.exact {
            if segments.len() < self.facets.len() {
                return Err(CatalogError::malformed(
                    raw,
                    format!(
                        "{} path needs {} facet segments, found {}",
                        self.name,
                        self.facets.len(),
                        segments.len()
                    ),
                ));
            }
            segments.len() - self.facets.len()
        } else {
            match &self.anchor {
                Some(a) => segments
                    .iter()
                    .position(|s| s.eq_ignore_ascii_case(a))
                    .unwrap_or(0),
                None => 0,
            }
        };
        let n = segments.len() - prefix_len;
        if n == 0 || n > max {
            return Err(CatalogError::malformed(
                raw,
                format!("{} path takes 1..={max} facet segments, found {n}", self.name),
            ));
        }
        DatasetPath::new(
            &segments[..prefix_len].join("/"),
            self.facets
                .iter()
                .map(String::as_str)
                .zip(segments[prefix_len..].iter().copied()),
        )
    }
}

/// Parses a slash-separated DRS path.
///
/// ```
/// use cascade_core::catalog::{parse_drs_path, Flavor};
///
/// let p = parse_drs_path(
///     "/css03_data/CMIP6/CMIP/MPI-M/MPI-ESM1-2-LR/historical/r27i1p1f1/EdayZ/hus/gn/v20210901/",
///     Flavor::Cmip6,
/// )
/// .unwrap();
/// assert_eq!(p.prefix(), "css03_data");
/// assert_eq!(p.facet("variable_id"), Some("hus"));
/// ```
pub fn parse_drs_path(raw: &str, flavor: Flavor) -> Result<DatasetPath, CatalogError> {
    DrsScheme::for_flavor(flavor).parse(raw)
}

/// Canonical text form: leading slash, prefix, facet values, no trailing slash.
pub fn format_drs_path(p: &DatasetPath) -> String {
    p.to_string()
}
