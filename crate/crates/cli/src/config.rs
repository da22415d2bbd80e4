//! The TOML run configuration for `verify`. Every key has a flag; flags win.
//!
//! ```toml
//! manifolds = ["clifford:1,2", "equator:2,3"]
//! suite = ["curvature/*"]
//! seed = 7
//! format = "both"
//! out = "report"
//! threads = "auto"
//! strict = true
//!
//! [grids]
//! "clifford:1,2" = "128x128@product/6"
//!
//! [tolerances]
//! "simons/identity-residual/*" = 2e-4
//!
//! [samples]
//! residual_points = 50
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(untagged)]
pub enum Threads {
    Count(usize),
    Named(String),
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Samples {
    pub residual_points: Option<usize>,
    pub directions: Option<usize>,
    pub profile_points: Option<usize>,
    pub density_points: Option<usize>,
    pub audit_points: Option<usize>,
    pub curvature_points: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub manifolds: Option<Vec<String>>,
    pub suite: Option<Vec<String>>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub format: Option<String>,
    pub threads: Option<Threads>,
    pub strict: Option<bool>,
    pub runtime: Option<bool>,
    #[serde(default)]
    pub grids: BTreeMap<String, String>,
    #[serde(default)]
    pub tolerances: BTreeMap<String, f64>,
    #[serde(default)]
    pub samples: Samples,
}

pub fn load(path: &Path) -> Result<FileConfig, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    parse(&text).map_err(|e| format!("{}: {e}", path.display()))
}

pub fn parse(text: &str) -> Result<FileConfig, String> {
    toml::from_str(text).map_err(|e| e.to_string().replace('\n', " "))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_every_key() {
        let c = parse(
            r#"
manifolds = ["clifford:1,2"]
suite = ["curvature/*"]
seed = 7
format = "both"
out = "r"
threads = 2
strict = true
runtime = false
[grids]
"clifford:1,2" = "32x32"
[tolerances]
"a/*" = 1e-3
[samples]
directions = 4
"#,
        )
        .unwrap();
        assert_eq!(c.seed, Some(7));
        assert_eq!(c.threads, Some(Threads::Count(2)));
        assert_eq!(c.grids["clifford:1,2"], "32x32");
        assert_eq!(c.samples.directions, Some(4));
        assert_eq!(parse(r#"threads = "auto""#).unwrap().threads, Some(Threads::Named("auto".into())));
    }

    #[test]
    fn rejects_unknown_keys() {
        assert!(parse("sede = 1").is_err());
        assert!(parse("[samples]\npoints = 1").is_err());
        let err = parse("seed = \"x\"").unwrap_err();
        assert!(!err.contains('\n'));
    }
}
