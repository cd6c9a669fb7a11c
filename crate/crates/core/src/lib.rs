//! Cascading multi-site replication of DRS-structured dataset collections.

pub mod campaign;
pub mod catalog;
pub mod metrics;
pub mod model;
pub mod simnet;
pub mod scheduler;
pub mod store;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/catalogs.md")]
    mod catalogs {}
    #[doc = include_str!("../../../book/src/tracking-table.md")]
    mod tracking_table {}
    #[doc = include_str!("../../../book/src/fabric.md")]
    mod fabric {}
    #[doc = include_str!("../../../book/src/scheduler.md")]
    mod scheduler {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/campaigns.md")]
    mod campaigns {}
    #[doc = include_str!("../../../book/src/calibration.md")]
    mod calibration {}
}
