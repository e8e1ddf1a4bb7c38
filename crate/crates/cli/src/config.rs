//! Optional JSON config file. Every key mirrors a long flag; a flag given on the
//! command line wins over the file, the file wins over built-in defaults.

use std::path::Path;

use anyhow::Result;
use serde::Deserialize;

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct FileConfig {
    pub order: Option<usize>,
    pub omega_max: Option<f64>,
    pub max_iters: Option<usize>,
    pub pole_tol: Option<f64>,
    pub method: Option<String>,
    pub window_start: Option<usize>,
    pub window_end: Option<usize>,
    pub split: Option<f64>,
    pub init: Option<String>,
    pub solver: Option<String>,
    pub filter: Option<String>,
    pub relocation: Option<String>,
    pub na: Option<usize>,
    pub nb: Option<usize>,
    pub ports: Option<usize>,
    pub samples: Option<usize>,
    pub seed: Option<u64>,
    pub x0: Option<String>,
    pub offset_scale: Option<f64>,
    pub snr: Option<f64>,
    pub snr_list: Option<Vec<f64>>,
    pub trials: Option<usize>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => crate::modelio::read_json(p),
            None => Ok(Self::default()),
        }
    }
}

/// `flag`, else `file`, else `default`.
pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}
