use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{serialize_triples, DictionaryBuilder, KgError, KnowledgeGraph, Result, Split};

/// `manifest.json` written next to the four split files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub counts: BTreeMap<Split, usize>,
    pub seed: u64,
    pub ratios: [f64; 4],
}

impl SplitManifest {
    pub fn for_graph(kg: &KnowledgeGraph, seed: u64, ratios: [f64; 4]) -> Self {
        Self {
            counts: Split::ALL.iter().map(|&s| (s, kg.split(s).len())).collect(),
            seed,
            ratios,
        }
    }
}

fn split_file(split: Split) -> String {
    format!("{}.tsv", split.as_str().to_ascii_lowercase())
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> KgError + '_ {
    move |source| KgError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Write `lrn.tsv`, `vld.tsv`, `tun.tsv`, `tst.tsv` and `manifest.json` into `dir`.
pub fn write_dataset(dir: &Path, kg: &KnowledgeGraph, manifest: &SplitManifest) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for split in Split::ALL {
        let path = dir.join(split_file(split));
        fs::write(&path, serialize_triples(kg.dictionary(), kg.split(split)))
            .map_err(io_err(&path))?;
    }
    let path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(manifest).map_err(|source| KgError::Json {
        path: path.display().to_string(),
        source,
    })?;
    fs::write(&path, json + "\n").map_err(io_err(&path))
}

/// Load a dataset directory written by [`write_dataset`].
///
/// Split files are parsed in LRN, VLD, TUN, TST order into one dictionary, so
/// ids are assigned in first-appearance order. A missing split file is an
/// empty split; a missing manifest is allowed.
pub fn read_dataset(dir: &Path) -> Result<(KnowledgeGraph, Option<SplitManifest>)> {
    let mut builder = DictionaryBuilder::new();
    let mut splits: [Vec<_>; 4] = Default::default();
    let mut found_any = false;
    for split in Split::ALL {
        let path = dir.join(split_file(split));
        if !path.exists() {
            continue;
        }
        found_any = true;
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        splits[split as usize] = builder.parse_into(&text).map_err(|e| match e {
            KgError::MalformedLine { line, reason } => KgError::MalformedLine {
                line,
                reason: format!("{}: {reason}", path.display()),
            },
            other => other,
        })?;
    }
    if !found_any {
        let path = dir.join(split_file(Split::Lrn));
        return Err(KgError::Io {
            path: path.display().to_string(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "no split files found"),
        });
    }
    let kg = KnowledgeGraph::new(builder.finish()?, splits)?;
    let path = dir.join("manifest.json");
    let manifest = if path.exists() {
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        Some(serde_json::from_str(&text).map_err(|source| KgError::Json {
            path: path.display().to_string(),
            source,
        })?)
    } else {
        None
    };
    Ok((kg, manifest))
}
