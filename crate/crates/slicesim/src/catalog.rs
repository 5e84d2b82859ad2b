//! TOML intent catalogs.
//!
//! ```toml
//! mode = "lenient"
//!
//! [[intent]]
//! label = "4K video"
//! keywords = ["4k video", "4k"]
//! rate_min = 12
//! rate_max = 15
//! latency_ms = 90
//! slice = "eMBB"
//! weight = 1.0
//!
//! # optional; defaults to the standard URLLC/eMBB pair
//! [[slice]]
//! kind = "URLLC"
//! total_rbs = 30
//! rate_min = 1
//! rate_max = 5
//! latency_bound_ms = 5
//! ```

use std::path::Path;

use serde::Deserialize;
use slicesim_core::domain::{Mbps, RateRange, SliceConfig, SliceKind};
use slicesim_core::planning::{IntentCatalog, IntentMode, IntentTemplate};

#[derive(Debug, thiserror::Error)]
pub enum CatalogError {
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parsing catalog: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("catalog: {0}")]
    Invalid(String),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CatalogFile {
    #[serde(default)]
    mode: Option<String>,
    #[serde(default)]
    intent: Vec<IntentEntry>,
    #[serde(default)]
    slice: Vec<SliceEntry>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct IntentEntry {
    label: String,
    keywords: Option<Vec<String>>,
    rate_min: u32,
    rate_max: u32,
    latency_ms: u32,
    slice: String,
    #[serde(default = "one")]
    weight: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SliceEntry {
    kind: String,
    total_rbs: u32,
    rate_min: u32,
    rate_max: u32,
    latency_bound_ms: u32,
    #[serde(default = "one_mbps")]
    rb_rate: u32,
}

fn one() -> f64 {
    1.0
}

fn one_mbps() -> u32 {
    1
}

/// A loaded catalog plus the slice set it was written against.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadedCatalog {
    pub catalog: IntentCatalog,
    pub slices: Vec<SliceConfig>,
}

fn kind(s: &str) -> Result<SliceKind, CatalogError> {
    SliceKind::parse(s).ok_or_else(|| CatalogError::Invalid(format!("unknown slice {s:?}")))
}

fn range(min: u32, max: u32, what: &str) -> Result<RateRange, CatalogError> {
    RateRange::new(min, max).map_err(|e| CatalogError::Invalid(format!("{what}: {e}")))
}

pub fn parse_catalog(text: &str) -> Result<LoadedCatalog, CatalogError> {
    let file: CatalogFile = toml::from_str(text)?;
    let mode = match file.mode.as_deref() {
        None | Some("lenient") => IntentMode::Lenient,
        Some("strict") => IntentMode::Strict,
        Some(other) => return Err(CatalogError::Invalid(format!("unknown mode {other:?}"))),
    };
    let templates = file
        .intent
        .into_iter()
        .map(|e| {
            Ok(IntentTemplate {
                keywords: e.keywords.unwrap_or_else(|| vec![e.label.to_lowercase()]),
                rate_range: range(e.rate_min, e.rate_max, &e.label)?,
                latency_ms: e.latency_ms,
                slice: kind(&e.slice)?,
                weight: e.weight,
                label: e.label,
            })
        })
        .collect::<Result<Vec<_>, CatalogError>>()?;
    let slices = if file.slice.is_empty() {
        SliceConfig::defaults()
    } else {
        file.slice
            .into_iter()
            .map(|s| {
                Ok(SliceConfig {
                    kind: kind(&s.kind)?,
                    total_rbs: s.total_rbs,
                    decision_range: range(s.rate_min, s.rate_max, &s.kind)?,
                    latency_bound_ms: s.latency_bound_ms,
                    rb_rate: Mbps(s.rb_rate),
                })
            })
            .collect::<Result<Vec<_>, CatalogError>>()?
    };
    let catalog = IntentCatalog { templates, mode };
    catalog
        .validate(&slices)
        .map_err(|e| CatalogError::Invalid(e.to_string()))?;
    Ok(LoadedCatalog { catalog, slices })
}

pub fn load_catalog(path: &Path) -> Result<LoadedCatalog, CatalogError> {
    let text = std::fs::read_to_string(path).map_err(|source| CatalogError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_catalog(&text)
}

/// Serialises `catalog` in the format [`parse_catalog`] reads.
pub fn render_catalog(catalog: &IntentCatalog) -> String {
    let mut out = String::new();
    let mode = match catalog.mode {
        IntentMode::Lenient => "lenient",
        IntentMode::Strict => "strict",
    };
    out.push_str(&format!("mode = \"{mode}\"\n"));
    for t in &catalog.templates {
        let kws: Vec<String> = t.keywords.iter().map(|k| format!("{k:?}")).collect();
        out.push_str(&format!(
            "\n[[intent]]\nlabel = {:?}\nkeywords = [{}]\nrate_min = {}\nrate_max = {}\nlatency_ms = {}\nslice = \"{}\"\nweight = {:?}\n",
            t.label,
            kws.join(", "),
            t.rate_range.min().0,
            t.rate_range.max().0,
            t.latency_ms,
            t.slice,
            t.weight
        ));
    }
    out
}
