use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Episode, GeneratorConfig};
use crate::cosserat::{LimbGeometry, MaterialProperties, SolverOptions};
use crate::error::{Error, Result};

pub const DATASET_FORMAT: &str = "softlimb-episodes";
const FORMAT_VERSION: u32 = 1;

/// First line of a dataset file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub format: String,
    pub version: u32,
    pub generator: String,
    /// SHA-256 of the canonical JSON of everything that shapes the data.
    pub config_hash: String,
    pub root_seed: u64,
    pub geometry: LimbGeometry,
    pub material: MaterialProperties,
    pub solver: SolverOptions,
    pub dataset: GeneratorConfig,
}

impl DatasetHeader {
    pub fn new(
        geometry: &LimbGeometry,
        material: &MaterialProperties,
        solver: &SolverOptions,
        dataset: &GeneratorConfig,
        root_seed: u64,
    ) -> Self {
        let canonical = serde_json::to_string(&(geometry, material, solver, dataset, root_seed))
            .expect("plain data serializes");
        Self {
            format: DATASET_FORMAT.to_owned(),
            version: FORMAT_VERSION,
            generator: concat!("softlimb ", env!("CARGO_PKG_VERSION")).to_owned(),
            config_hash: hex::encode(Sha256::digest(canonical.as_bytes())),
            root_seed,
            geometry: geometry.clone(),
            material: material.clone(),
            solver: solver.clone(),
            dataset: dataset.clone(),
        }
    }
}

pub fn write_dataset(path: &Path, header: &DatasetHeader, episodes: &[Episode]) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    writeln!(w, "{}", json_line(header)).map_err(io)?;
    for ep in episodes {
        writeln!(w, "{}", json_line(ep)).map_err(io)?;
    }
    w.flush().map_err(io)
}

fn json_line<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("plain data serializes")
}

/// Reads and validates a dataset file.
pub fn read_dataset(path: &Path) -> Result<(DatasetHeader, Vec<Episode>)> {
    let io = |e| Error::io(path, e);
    let reader = BufReader::new(File::open(path).map_err(io)?);
    let mut lines = reader.lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::Format {
            what: "dataset",
            detail: format!("{} is empty", path.display()),
        })?
        .map_err(io)?;
    let header: DatasetHeader = serde_json::from_str(&first).map_err(|e| Error::Format {
        what: "dataset header",
        detail: e.to_string(),
    })?;
    if header.format != DATASET_FORMAT || header.version != FORMAT_VERSION {
        return Err(Error::Format {
            what: "dataset header",
            detail: format!("unsupported format {} v{}", header.format, header.version),
        });
    }
    let mut episodes = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        let ep: Episode = serde_json::from_str(&line).map_err(|e| Error::Format {
            what: "dataset episode",
            detail: format!("line {}: {e}", i + 2),
        })?;
        ep.validate(header.dataset.max_force_n)?;
        episodes.push(ep);
    }
    Ok((header, episodes))
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let mut f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}
