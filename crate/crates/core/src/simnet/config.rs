//! Fabric configuration: site capacities, route caps, maintenance and faults.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Route, SimTime, Site};

/// One GB/s as transfer rates are reported here: 2^30 B/s.
pub const GIB: f64 = 1_073_741_824.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("invalid fabric config: {0}")]
    Invalid(String),
    #[error("cannot parse fabric config: {0}")]
    Parse(String),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid(msg.into()))
}

/// A half-open `[start, end)` interval in sim-seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Window {
    pub start: f64,
    pub end: f64,
}

impl Window {
    pub fn new(start: f64, end: f64) -> Window {
        Window { start, end }
    }

    pub fn to_millis(self) -> (SimTime, SimTime) {
        (SimTime::from_secs_f64(self.start), SimTime::from_secs_f64(self.end))
    }
}

/// `count` windows of `duration` seconds, every `period` seconds from `start`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Periodic {
    pub start: f64,
    pub period: f64,
    pub duration: f64,
    pub count: u32,
}

impl Periodic {
    pub fn windows(&self) -> impl Iterator<Item = Window> + '_ {
        (0..self.count).map(move |i| {
            let s = self.start + self.period * f64::from(i);
            Window::new(s, s + self.duration)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiteSpec {
    pub site: Site,
    /// Display name; defaults to the facility name.
    #[serde(default)]
    pub name: Option<String>,
    /// B/s.
    pub egress_cap: f64,
    /// B/s.
    pub ingress_cap: f64,
    /// Seconds per 1000 scanned entries (files plus directories).
    #[serde(default)]
    pub scan_cost: f64,
    /// Scans of more entries than this run out of memory.
    #[serde(default = "unbounded")]
    pub scan_entry_cap: u64,
    #[serde(default)]
    pub maintenance: Vec<Window>,
    #[serde(default)]
    pub periodic_maintenance: Vec<Periodic>,
}

fn unbounded() -> u64 {
    u64::MAX
}

impl SiteSpec {
    pub fn new(site: Site, egress_cap: f64, ingress_cap: f64) -> SiteSpec {
        SiteSpec {
            site,
            name: None,
            egress_cap,
            ingress_cap,
            scan_cost: 0.0,
            scan_entry_cap: u64::MAX,
            maintenance: Vec::new(),
            periodic_maintenance: Vec::new(),
        }
    }

    pub fn display_name(&self) -> &str {
        self.name.as_deref().unwrap_or(self.site.default_name())
    }

    /// Explicit and periodic windows merged, sorted, in milliseconds.
    pub fn windows(&self) -> Result<Vec<(SimTime, SimTime)>, ConfigError> {
        let mut all: Vec<Window> = self.maintenance.clone();
        for p in &self.periodic_maintenance {
            if !(p.period > 0.0 && p.duration > 0.0 && p.duration <= p.period && p.start >= 0.0) {
                return invalid(format!("{}: bad periodic maintenance {p:?}", self.site));
            }
            all.extend(p.windows());
        }
        validate_windows(self.site, &all)
    }
}

/// Checks windows and converts them to sorted milliseconds.
pub fn validate_windows(site: Site, windows: &[Window]) -> Result<Vec<(SimTime, SimTime)>, ConfigError> {
    let mut ms = Vec::with_capacity(windows.len());
    for w in windows {
        if !(w.start.is_finite() && w.end.is_finite() && w.start >= 0.0 && w.end > w.start) {
            return invalid(format!("{site}: bad maintenance window {w:?}"));
        }
        ms.push(w.to_millis());
    }
    ms.sort();
    for pair in ms.windows(2) {
        if pair[1].0 < pair[0].1 {
            return invalid(format!(
                "{site}: maintenance windows overlap at {}",
                pair[1].0
            ));
        }
    }
    Ok(ms)
}

/// Direction-specific route limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouteCap {
    pub source: Site,
    pub destination: Site,
    /// Aggregate B/s over all transfers on the route.
    pub cap: f64,
    /// Ceiling on any single transfer, B/s.
    #[serde(default)]
    pub per_transfer_cap: Option<f64>,
}

impl RouteCap {
    pub fn route(&self) -> Route {
        Route {
            source: self.source,
            destination: self.destination,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FaultModel {
    /// Expected transient faults per transfer.
    pub transient_rate: f64,
    /// Gamma shape of the per-transfer fault intensity. Smaller is more
    /// overdispersed; `None` gives a plain Poisson count.
    pub transient_shape: Option<f64>,
    /// Seconds a transfer stalls per transient fault.
    pub transient_delay: f64,
    /// Probability that a file fails its first checksum.
    pub file_corruption_prob: f64,
    /// Per-path probability that transfers from the hub fail after scanning.
    pub persistent_fail_prob: f64,
    /// Seconds after the first such failure until the path transfers cleanly.
    pub persistent_autofix_after: f64,
    /// Probability that a finished transfer carries no fault metadata.
    pub missing_metadata_prob: f64,
}

impl Default for FaultModel {
    fn default() -> Self {
        FaultModel {
            transient_rate: 1.05,
            // 1 - P(no fault) = 1069/3881 at mean 1.05
            transient_shape: Some(0.15),
            // calibrated so the maintenance-and-fault campaign lands near the
            // observed 77/58 day ratio
            transient_delay: 2160.0,
            file_corruption_prob: 0.002,
            persistent_fail_prob: 0.0,
            persistent_autofix_after: 86_400.0,
            missing_metadata_prob: 0.0,
        }
    }
}

impl FaultModel {
    pub fn none() -> FaultModel {
        FaultModel {
            transient_rate: 0.0,
            transient_shape: None,
            transient_delay: 0.0,
            file_corruption_prob: 0.0,
            persistent_fail_prob: 0.0,
            persistent_autofix_after: 0.0,
            missing_metadata_prob: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let probs = [
            ("file_corruption_prob", self.file_corruption_prob),
            ("persistent_fail_prob", self.persistent_fail_prob),
            ("missing_metadata_prob", self.missing_metadata_prob),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return invalid(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        let rates = [
            ("transient_rate", self.transient_rate),
            ("transient_delay", self.transient_delay),
            ("persistent_autofix_after", self.persistent_autofix_after),
        ];
        for (name, r) in rates {
            if !(r.is_finite() && r >= 0.0) {
                return invalid(format!("{name} must be finite and >= 0, got {r}"));
            }
        }
        if let Some(k) = self.transient_shape {
            if !(k.is_finite() && k > 0.0) {
                return invalid(format!("transient_shape must be > 0, got {k}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FabricConfig {
    #[serde(default)]
    pub seed: u64,
    pub sites: Vec<SiteSpec>,
    #[serde(default)]
    pub routes: Vec<RouteCap>,
    #[serde(default)]
    pub faults: FaultModel,
    /// Compare checksums after each file; off stores corrupted copies.
    #[serde(default = "yes")]
    pub integrity_check: bool,
}

fn yes() -> bool {
    true
}

impl FabricConfig {
    /// Every cap set to `cap`, no scan cost, no faults.
    pub fn uniform(cap: f64) -> FabricConfig {
        FabricConfig {
            seed: 0,
            sites: Site::ALL.iter().map(|&s| SiteSpec::new(s, cap, cap)).collect(),
            routes: Vec::new(),
            faults: FaultModel::none(),
            integrity_check: true,
        }
    }

    /// The observed fabric: a 1.5 GB/s hub file system, LCFs that move up to
    /// 7.5 GB/s between them, a slow hub scan and no faults or maintenance.
    pub fn baseline() -> FabricConfig {
        let mut hub = SiteSpec::new(Site::SourceHub, 1.5 * GIB, 1.5 * GIB);
        hub.scan_cost = 8.0;
        let mut a = SiteSpec::new(Site::LcfA, 7.5 * GIB, 7.5 * GIB);
        a.scan_cost = 0.5;
        let mut b = SiteSpec::new(Site::LcfB, 7.5 * GIB, 7.5 * GIB);
        b.scan_cost = 0.5;
        FabricConfig {
            seed: 0,
            sites: vec![hub, a, b],
            routes: Vec::new(),
            faults: FaultModel::none(),
            integrity_check: true,
        }
    }

    /// [`FabricConfig::baseline`] with weekly two-day LCF_A maintenance,
    /// occasional LCF_B maintenance and the default fault model.
    pub fn campaign() -> FabricConfig {
        let mut c = FabricConfig::baseline();
        const DAY: f64 = 86_400.0;
        c.site_mut(Site::LcfA).periodic_maintenance = vec![Periodic {
            start: 5.0 * DAY,
            period: 7.0 * DAY,
            duration: 2.0 * DAY,
            count: 16,
        }];
        c.site_mut(Site::LcfB).periodic_maintenance = vec![Periodic {
            start: 17.5 * DAY,
            period: 21.0 * DAY,
            duration: 1.0 * DAY,
            count: 6,
        }];
        c.faults = FaultModel::default();
        c
    }

    /// Per-transfer ceilings from the CMIP6 "Average GB/s" column.
    pub fn table_rates() -> [(Site, Site, f64); 4] {
        [
            (Site::SourceHub, Site::LcfA, 0.648),
            (Site::SourceHub, Site::LcfB, 0.662),
            (Site::LcfA, Site::LcfB, 1.706),
            (Site::LcfB, Site::LcfA, 2.352),
        ]
    }

    pub fn site(&self, s: Site) -> &SiteSpec {
        self.sites.iter().find(|x| x.site == s).expect("validated config has every site")
    }

    pub fn site_mut(&mut self, s: Site) -> &mut SiteSpec {
        self.sites.iter_mut().find(|x| x.site == s).expect("config has every site")
    }

    pub fn route_cap(&self, r: Route) -> Option<&RouteCap> {
        self.routes.iter().find(|c| c.route() == r)
    }

    /// Sets (or adds) the cap for a route.
    pub fn set_route_cap(&mut self, cap: RouteCap) {
        self.routes.retain(|c| c.route() != cap.route());
        self.routes.push(cap);
    }

    pub fn from_toml(text: &str) -> Result<FabricConfig, ConfigError> {
        let c: FabricConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("fabric config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for s in Site::ALL {
            match self.sites.iter().filter(|x| x.site == s).count() {
                1 => {}
                0 => return invalid(format!("site {s} is missing")),
                _ => return invalid(format!("site {s} is listed twice")),
            }
        }
        for s in &self.sites {
            let pos = |x: f64| x.is_finite() && x > 0.0;
            if !pos(s.egress_cap) || !pos(s.ingress_cap) {
                return invalid(format!("{}: caps must be > 0", s.site));
            }
            if !(s.scan_cost.is_finite() && s.scan_cost >= 0.0) {
                return invalid(format!("{}: scan_cost must be >= 0", s.site));
            }
            s.windows()?;
        }
        for (i, r) in self.routes.iter().enumerate() {
            if r.source == r.destination {
                return invalid(format!("route cap {}->{} is a self-route", r.source, r.destination));
            }
            if !(r.cap.is_finite() && r.cap > 0.0) {
                return invalid(format!("route {}: cap must be > 0", r.route()));
            }
            if r.per_transfer_cap.is_some_and(|c| !(c.is_finite() && c > 0.0)) {
                return invalid(format!("route {}: per_transfer_cap must be > 0", r.route()));
            }
            if self.routes[..i].iter().any(|o| o.route() == r.route()) {
                return invalid(format!("route {} is listed twice", r.route()));
            }
        }
        self.faults.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        FabricConfig::baseline().validate().unwrap();
        FabricConfig::campaign().validate().unwrap();
        FabricConfig::uniform(GIB).validate().unwrap();
    }

    #[test]
    fn toml_round_trip() {
        let c = FabricConfig::campaign();
        assert_eq!(FabricConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn minimal_toml() {
        let text = r#"
            seed = 3
            [[sites]]
            site = "SOURCE_HUB"
            egress_cap = 1.0e9
            ingress_cap = 1.0e9
            [[sites]]
            site = "LCF_A"
            egress_cap = 1.0e9
            ingress_cap = 1.0e9
            maintenance = [{ start = 10.0, end = 20.0 }]
            [[sites]]
            site = "LCF_B"
            egress_cap = 1.0e9
            ingress_cap = 1.0e9
            [[routes]]
            source = "SOURCE_HUB"
            destination = "LCF_A"
            cap = 5.0e8
        "#;
        let c = FabricConfig::from_toml(text).unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.faults, FaultModel::default());
        assert_eq!(
            c.site(Site::LcfA).windows().unwrap(),
            vec![(SimTime(10_000), SimTime(20_000))]
        );
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = FabricConfig::uniform(1.0);
        c.sites.pop();
        assert!(c.validate().is_err());

        let mut c = FabricConfig::uniform(1.0);
        c.site_mut(Site::LcfA).maintenance = vec![Window::new(0.0, 10.0), Window::new(5.0, 20.0)];
        assert!(c.validate().is_err());

        let mut c = FabricConfig::uniform(1.0);
        c.site_mut(Site::LcfB).ingress_cap = 0.0;
        assert!(c.validate().is_err());

        let mut c = FabricConfig::uniform(1.0);
        c.faults.file_corruption_prob = 1.5;
        assert!(c.validate().is_err());

        assert!(matches!(
            FabricConfig::from_toml("sites = []\nbogus = 1"),
            Err(ConfigError::Parse(_))
        ));
    }

    #[test]
    fn periodic_windows_expand() {
        let p = Periodic {
            start: 100.0,
            period: 50.0,
            duration: 10.0,
            count: 3,
        };
        let w: Vec<Window> = p.windows().collect();
        assert_eq!(w, [Window::new(100.0, 110.0), Window::new(150.0, 160.0), Window::new(200.0, 210.0)]);
    }
}
