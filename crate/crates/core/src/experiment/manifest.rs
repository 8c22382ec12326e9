use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{hex, DataSource, ExperimentConfig};
use super::{write_atomic, PreparedData};
use crate::error::{Error, Result};

include!(concat!(env!("OUT_DIR"), "/versions.rs"));

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    /// Relative to the manifest's directory.
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphSummary {
    pub nodes: usize,
    pub edges_loaded: usize,
    pub edges_used: usize,
}

/// Everything needed to repeat a run. Contains no absolute paths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub model_seed: u64,
    /// Training budget of this run.
    pub epochs: usize,
    pub config_sha256: String,
    pub config: ExperimentConfig,
    pub libraries: BTreeMap<String, String>,
    pub graph: GraphSummary,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

fn digest_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

fn relative_to(path: &Path, base: &Path) -> Result<PathBuf> {
    let abs = |p: &Path| {
        p.canonicalize()
            .or_else(|_| std::env::current_dir().map(|d| d.join(p)))
            .map_err(|e| Error::io(p, e))
    };
    let (target, base) = (abs(path)?, abs(base)?);
    pathdiff::diff_paths(&target, &base).ok_or_else(|| {
        Error::Config(format!(
            "cannot express {} relative to {}",
            target.display(),
            base.display()
        ))
    })
}

impl Manifest {
    pub(crate) fn new(
        config: &ExperimentConfig,
        data: &PreparedData,
        dir: &Path,
        outputs: &[&str],
    ) -> Result<Self> {
        let mut portable = config.clone();
        let mut inputs = Vec::new();
        if let DataSource::Files {
            edges,
            panel,
            population,
        } = &mut portable.data
        {
            for p in [Some(edges), Some(panel), population.as_mut()]
                .into_iter()
                .flatten()
            {
                let sha256 = digest_file(p)?;
                *p = relative_to(p, dir)?;
                inputs.push(FileDigest {
                    path: p.clone(),
                    sha256,
                });
            }
        }
        portable.output = PathBuf::from(".");
        let outputs = outputs
            .iter()
            .map(|name| {
                Ok(FileDigest {
                    path: PathBuf::from(name),
                    sha256: digest_file(&dir.join(name))?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed: config.train.seed,
            model_seed: config.model_seed(),
            epochs: config.train.epochs,
            config_sha256: portable.hash()?,
            config: portable,
            libraries: LOCKED_VERSIONS
                .iter()
                .map(|(n, v)| (n.to_string(), v.to_string()))
                .collect(),
            graph: GraphSummary {
                nodes: data.graph.node_count(),
                edges_loaded: data.edges_before,
                edges_used: data.graph.edge_count(),
            },
            inputs,
            outputs,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))?;
        write_atomic(path, text.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Serde(e.to_string()))
    }

    /// The recorded config with paths resolved against `dir`, the
    /// directory that held the manifest.
    pub fn config_in(&self, dir: &Path) -> Result<ExperimentConfig> {
        if self.config.hash()? != self.config_sha256 {
            return Err(Error::Config(
                "manifest config does not match its hash".into(),
            ));
        }
        let text = self.config.to_toml()?;
        let mut config = ExperimentConfig::from_toml(&text)?;
        if let DataSource::Files {
            edges,
            panel,
            population,
        } = &mut config.data
        {
            for p in [Some(edges), Some(panel), population.as_mut()]
                .into_iter()
                .flatten()
            {
                *p = dir.join(&*p);
            }
        }
        config.output = dir.to_path_buf();
        Ok(config)
    }
}
