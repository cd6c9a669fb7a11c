use std::collections::HashSet;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Poisson};
use serde::{Deserialize, Serialize};

use super::path::CMIP6_FACETS;
use super::{Catalog, CatalogError, ChecksumAlgorithm, DatasetPath, DrsScheme, FileEntry};

const ACTIVITIES: &[&str] = &[
    "CMIP", "ScenarioMIP", "DAMIP", "HighResMIP", "PMIP", "CFMIP", "AerChemMIP", "LUMIP",
    "OMIP", "C4MIP", "RFMIP", "GMMIP",
];
const INSTITUTIONS: &[&str] = &[
    "MPI-M", "NCAR", "NOAA-GFDL", "IPSL", "CNRM-CERFACS", "MOHC", "MIROC", "E3SM-Project",
    "CCCma", "NASA-GISS", "BCC", "CSIRO", "EC-Earth-Consortium", "NCC", "MRI", "AWI",
    "THU", "CAS", "NUIST", "KIOST",
];
const SOURCES: &[&str] = &[
    "MPI-ESM1-2-LR", "MPI-ESM1-2-HR", "CESM2", "CESM2-WACCM", "GFDL-CM4", "GFDL-ESM4",
    "IPSL-CM6A-LR", "CNRM-CM6-1", "CNRM-ESM2-1", "UKESM1-0-LL", "HadGEM3-GC31-LL",
    "MIROC6", "E3SM-1-0", "CanESM5", "GISS-E2-1-G", "BCC-CSM2-MR", "ACCESS-ESM1-5",
    "EC-Earth3", "NorESM2-LM", "MRI-ESM2-0", "AWI-CM-1-1-MR", "FGOALS-g3",
];
const EXPERIMENTS: &[&str] = &[
    "historical", "piControl", "abrupt-4xCO2", "1pctCO2", "amip", "ssp126", "ssp245",
    "ssp370", "ssp585", "hist-GHG", "hist-aer", "hist-nat", "lgm", "midHolocene",
    "esm-hist", "esm-piControl",
];
const TABLES: &[&str] = &[
    "Amon", "Omon", "Lmon", "SImon", "day", "EdayZ", "6hrLev", "3hr", "Oday", "CFmon", "AERmon",
];
const VARIABLES: &[&str] = &[
    "tas", "pr", "hus", "ua", "va", "ta", "zg", "psl", "tos", "so", "thetao", "sic", "mrso",
    "clt", "rsds", "rlds", "huss", "uas", "vas",
];
const GRIDS: &[&str] = &["gn", "gr", "gr1", "gr2"];

/// Integer distribution for counts; samples are clamped to at least 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CountDist {
    Fixed { value: u64 },
    Uniform { min: u64, max: u64 },
    Poisson { mean: f64 },
}

impl CountDist {
    fn validate(&self, what: &str) -> Result<(), CatalogError> {
        let bad = |m: String| Err(CatalogError::InvalidSpec(format!("{what}: {m}")));
        match *self {
            CountDist::Fixed { value } if value == 0 => bad("fixed count must be >= 1".into()),
            CountDist::Uniform { min, max } if min == 0 || max < min => {
                bad(format!("uniform range {min}..={max} must be within 1.."))
            }
            CountDist::Poisson { mean } if !(mean > 0.0 && mean.is_finite()) => {
                bad(format!("poisson mean {mean} must be positive"))
            }
            _ => Ok(()),
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> u64 {
        match *self {
            CountDist::Fixed { value } => value,
            CountDist::Uniform { min, max } => rng.random_range(min..=max),
            CountDist::Poisson { mean } => {
                let v: f64 = Poisson::new(mean).expect("validated").sample(rng);
                (v as u64).max(1)
            }
        }
    }
}

/// File size distribution in bytes; samples are clamped to at least 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SizeDist {
    Fixed { bytes: u64 },
    Uniform { min: u64, max: u64 },
    /// Log-normal with the given median (bytes) and log-space sigma.
    LogNormal { median: f64, sigma: f64 },
}

impl SizeDist {
    fn validate(&self) -> Result<(), CatalogError> {
        let bad = |m: String| Err(CatalogError::InvalidSpec(format!("file_size: {m}")));
        match *self {
            SizeDist::Fixed { bytes } if bytes == 0 => bad("fixed size must be > 0".into()),
            SizeDist::Uniform { min, max } if min == 0 || max < min => {
                bad(format!("uniform range {min}..={max} must be within 1.."))
            }
            SizeDist::LogNormal { median, sigma }
                if !(median > 0.0 && median.is_finite() && sigma >= 0.0 && sigma.is_finite()) =>
            {
                bad(format!("log-normal median {median}, sigma {sigma}"))
            }
            _ => Ok(()),
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> u64 {
        match *self {
            SizeDist::Fixed { bytes } => bytes,
            SizeDist::Uniform { min, max } => rng.random_range(min..=max),
            SizeDist::LogNormal { median, sigma } => {
                let v = LogNormal::new(median.ln(), sigma)
                    .expect("validated")
                    .sample(rng);
                (v.round() as u64).max(1)
            }
        }
    }
}

/// Declarative description of a synthetic catalog.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CatalogSpec {
    pub n_paths: usize,
    pub seed: u64,
    /// CMIP6 levels in each dataset path; the remaining levels become
    /// subdirectories inside the dataset.
    #[serde(default = "default_depth")]
    pub depth: usize,
    #[serde(default = "default_prefix")]
    pub prefix: String,
    #[serde(default = "default_files")]
    pub files_per_path: CountDist,
    /// Number of first-level subdirectories per dataset (ensemble members).
    #[serde(default = "default_members")]
    pub members_per_path: CountDist,
    #[serde(default = "default_size")]
    pub file_size: SizeDist,
    /// When set, sizes are rescaled so the catalog holds exactly this many bytes.
    #[serde(default)]
    pub total_bytes: Option<u64>,
    #[serde(default)]
    pub checksum: ChecksumAlgorithm,
}

fn default_depth() -> usize {
    5
}
fn default_prefix() -> String {
    "css03_data".into()
}
fn default_files() -> CountDist {
    CountDist::Uniform { min: 4, max: 40 }
}
fn default_members() -> CountDist {
    CountDist::Uniform { min: 1, max: 3 }
}
fn default_size() -> SizeDist {
    SizeDist::LogNormal {
        median: 256.0 * 1024.0 * 1024.0,
        sigma: 1.2,
    }
}

impl CatalogSpec {
    pub fn new(n_paths: usize, seed: u64) -> Self {
        CatalogSpec {
            n_paths,
            seed,
            depth: default_depth(),
            prefix: default_prefix(),
            files_per_path: default_files(),
            members_per_path: default_members(),
            file_size: default_size(),
            total_bytes: None,
            checksum: ChecksumAlgorithm::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, CatalogError> {
        toml::from_str(text).map_err(|e| CatalogError::InvalidSpec(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), CatalogError> {
        if self.n_paths == 0 {
            return Err(CatalogError::InvalidSpec("n_paths must be >= 1".into()));
        }
        if !(1..=CMIP6_FACETS.len()).contains(&self.depth) {
            return Err(CatalogError::InvalidSpec(format!(
                "depth {} outside 1..=10",
                self.depth
            )));
        }
        self.files_per_path.validate("files_per_path")?;
        self.members_per_path.validate("members_per_path")?;
        self.file_size.validate()
    }

    pub fn scheme(&self) -> DrsScheme {
        DrsScheme::cmip6_datasets(self.depth)
    }
}

/// Generates a synthetic catalog. Equal specs give equal catalogs.
pub fn generate_catalog(spec: &CatalogSpec) -> Result<Catalog, CatalogError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut seen = HashSet::new();
    let mut paths = Vec::with_capacity(spec.n_paths);
    for _ in 0..spec.n_paths {
        let p = unique_path(spec, &mut rng, &mut seen)?;
        paths.push(p);
    }
    build(spec, paths, &mut rng)
}

/// Synthesizes file trees for explicitly listed paths (e.g. from a path-list
/// file). Sizes and layout follow `spec`; `spec.n_paths` is ignored.
pub fn generate_for_paths(
    spec: &CatalogSpec,
    scheme: DrsScheme,
    paths: &[DatasetPath],
) -> Result<Catalog, CatalogError> {
    let mut spec = spec.clone();
    spec.n_paths = paths.len().max(1);
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut cat = build(&spec, paths.to_vec(), &mut rng)?;
    cat.scheme = scheme;
    Ok(cat)
}

fn pick<'a>(rng: &mut ChaCha8Rng, vocab: &'a [&'a str]) -> &'a str {
    vocab[rng.random_range(0..vocab.len())]
}

fn random_value(name: &str, rng: &mut ChaCha8Rng) -> String {
    match name {
        "mip_era" => "CMIP6".into(),
        "activity_drs" => pick(rng, ACTIVITIES).into(),
        "institution_id" => pick(rng, INSTITUTIONS).into(),
        "source_id" => pick(rng, SOURCES).into(),
        "experiment_id" => pick(rng, EXPERIMENTS).into(),
        "member_id" => format!("r{}i1p1f{}", rng.random_range(1..=50u32), rng.random_range(1..=3u32)),
        "table_id" => pick(rng, TABLES).into(),
        "variable_id" => pick(rng, VARIABLES).into(),
        "grid_label" => pick(rng, GRIDS).into(),
        "version" => format!(
            "v20{:02}{:02}{:02}",
            rng.random_range(18..=23u32),
            rng.random_range(1..=12u32),
            rng.random_range(1..=28u32)
        ),
        _ => format!("x{}", rng.random_range(0..1000u32)),
    }
}

/// Value of the `k`-th distinct directory at a subdirectory level.
fn indexed_value(name: &str, k: u64) -> String {
    let nth = |vocab: &[&str]| {
        let v = vocab[(k as usize) % vocab.len()];
        let lap = k as usize / vocab.len();
        if lap == 0 {
            v.to_string()
        } else {
            format!("{v}-{lap}")
        }
    };
    match name {
        "member_id" => format!("r{}i1p1f1", k + 1),
        "activity_drs" => nth(ACTIVITIES),
        "institution_id" => nth(INSTITUTIONS),
        "source_id" => nth(SOURCES),
        "experiment_id" => nth(EXPERIMENTS),
        "table_id" => nth(TABLES),
        "variable_id" => nth(VARIABLES),
        "grid_label" => nth(GRIDS),
        "version" => format!("v2019{:04}", 101 + k),
        _ => format!("d{k}"),
    }
}

fn unique_path(
    spec: &CatalogSpec,
    rng: &mut ChaCha8Rng,
    seen: &mut HashSet<Vec<String>>,
) -> Result<DatasetPath, CatalogError> {
    let names = &CMIP6_FACETS[..spec.depth];
    let mut values: Vec<String> = names.iter().map(|n| random_value(n, rng)).collect();
    for _ in 0..32 {
        if !seen.contains(&values) {
            break;
        }
        values = names.iter().map(|n| random_value(n, rng)).collect();
    }
    if seen.contains(&values) {
        let base = values.last().cloned().unwrap_or_default();
        let mut k = 1;
        while seen.contains(&values) {
            *values.last_mut().unwrap() = format!("{base}-{k}");
            k += 1;
        }
    }
    seen.insert(values.clone());
    DatasetPath::new(&spec.prefix, names.iter().copied().zip(values))
}

fn build(
    spec: &CatalogSpec,
    paths: Vec<DatasetPath>,
    rng: &mut ChaCha8Rng,
) -> Result<Catalog, CatalogError> {
    let mut trees: Vec<Vec<FileEntry>> = Vec::with_capacity(paths.len());
    for p in &paths {
        let depth = p.depth();
        let sub_levels: Vec<&str> = CMIP6_FACETS
            .iter()
            .skip(depth)
            .copied()
            .take(super::MAX_DEPTH.saturating_sub(depth))
            .collect();
        let n_files = spec.files_per_path.sample(rng);
        let members = if sub_levels.is_empty() {
            1
        } else {
            spec.members_per_path.sample(rng)
        };
        let stem = p.values().last().unwrap_or("data").to_string();
        let mut files = Vec::with_capacity(n_files as usize);
        for j in 0..n_files {
            let mut dir: Vec<String> = Vec::with_capacity(sub_levels.len());
            for (lvl, name) in sub_levels.iter().enumerate() {
                if lvl == 0 {
                    dir.push(indexed_value(name, j % members));
                } else {
                    dir.push(random_value(name, rng));
                }
            }
            let fname = format!("{stem}_{j:05}.nc");
            let rel_path = if dir.is_empty() {
                fname
            } else {
                format!("{}/{fname}", dir.join("/"))
            };
            files.push(FileEntry {
                rel_path,
                size: spec.file_size.sample(rng),
                checksum: 0,
            });
        }
        trees.push(files);
    }
    if let Some(target) = spec.total_bytes {
        rescale(&mut trees, target)?;
    }
    let datasets = paths.into_iter().zip(trees).map(|(p, mut files)| {
        for f in &mut files {
            f.checksum = spec.checksum.checksum(spec.seed, &p, &f.rel_path);
        }
        (p, files)
    });
    Catalog::from_datasets(spec.scheme(), spec.checksum, datasets)
}

/// Scales sizes so they sum to exactly `target`, keeping every size >= 1.
fn rescale(trees: &mut [Vec<FileEntry>], target: u64) -> Result<(), CatalogError> {
    let n_files: u64 = trees.iter().map(|t| t.len() as u64).sum();
    if target < n_files {
        return Err(CatalogError::InvalidSpec(format!(
            "total_bytes {target} is less than the {n_files} files generated"
        )));
    }
    let sum: u128 = trees.iter().flatten().map(|f| f.size as u128).sum();
    let spare = (target - n_files) as u128;
    let spare_sum = sum - n_files as u128;
    let mut assigned: u64 = 0;
    for f in trees.iter_mut().flatten() {
        let extra = if spare_sum == 0 {
            0
        } else {
            ((f.size as u128 - 1) * spare / spare_sum) as u64
        };
        f.size = 1 + extra;
        assigned += f.size;
    }
    // rounding remainder goes to the largest file
    let remainder = target - assigned;
    if let Some(f) = trees.iter_mut().flatten().max_by_key(|f| f.size) {
        f.size += remainder;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_file_spec() {
        let mut spec = CatalogSpec::new(1, 7);
        spec.files_per_path = CountDist::Fixed { value: 1 };
        spec.file_size = SizeDist::Fixed { bytes: 1024 };
        let c = generate_catalog(&spec).unwrap();
        let t = c.totals();
        assert!(t.directories >= 1);
        assert_eq!(t.files, 1);
        assert_eq!(t.bytes, 1024);
    }

    #[test]
    fn deterministic() {
        let spec = CatalogSpec::new(50, 3);
        assert_eq!(generate_catalog(&spec).unwrap(), generate_catalog(&spec).unwrap());
        let mut other = spec.clone();
        other.seed = 4;
        assert_ne!(generate_catalog(&spec).unwrap(), generate_catalog(&other).unwrap());
    }

    #[test]
    fn rescales_to_exact_total() {
        let mut spec = CatalogSpec::new(40, 11);
        spec.total_bytes = Some(8_182_644_448_359_330);
        let c = generate_catalog(&spec).unwrap();
        assert_eq!(c.totals().bytes, 8_182_644_448_359_330);
        spec.total_bytes = Some(3);
        assert!(matches!(generate_catalog(&spec), Err(CatalogError::InvalidSpec(_))));
    }

    #[test]
    fn invalid_specs() {
        assert!(generate_catalog(&CatalogSpec::new(0, 1)).is_err());
        let mut s = CatalogSpec::new(1, 1);
        s.file_size = SizeDist::Uniform { min: 5, max: 2 };
        assert!(generate_catalog(&s).is_err());
        let mut s = CatalogSpec::new(1, 1);
        s.depth = 11;
        assert!(generate_catalog(&s).is_err());
    }

    #[test]
    fn generated_paths_follow_scheme() {
        let spec = CatalogSpec::new(20, 9);
        let c = generate_catalog(&spec).unwrap();
        for p in c.paths() {
            assert_eq!(p.depth(), 5);
            assert_eq!(p.facet("mip_era"), Some("CMIP6"));
            assert_eq!(&c.scheme().parse(&p.to_string()).unwrap(), p);
            let (dirs, loose) = c.subdirectories(p).unwrap();
            assert!(!dirs.is_empty());
            assert!(!loose);
        }
    }

    #[test]
    fn spec_from_toml() {
        let s = CatalogSpec::from_toml(
            r#"
            n_paths = 3
            seed = 5
            files_per_path = { kind = "fixed", value = 2 }
            file_size = { kind = "log_normal", median = 1000.0, sigma = 0.5 }
            "#,
        )
        .unwrap();
        assert_eq!(s.n_paths, 3);
        assert_eq!(s.depth, 5);
        assert!(CatalogSpec::from_toml("n_paths = 1\nseed = 1\nbogus = 2\n").is_err());
    }
}
