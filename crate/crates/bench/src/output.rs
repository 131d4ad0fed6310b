//! Run outputs on disk.
//!
//! | file              | columns                                                     |
//! |-------------------|-------------------------------------------------------------|
//! | `metrics.csv`     | `step, planner, mean_error, target_<id>…` (blank if unscored) |
//! | `pairs.csv`       | `step, sensor, target, error`                               |
//! | `ledger.csv`      | `round, from, to, kind, bytes`                              |
//! | `trajectories.csv`| `step, kind, id, x, y, heading, active` (`kind` = target/sensor) |
//! | `predictions.csv` | `step, sensor, target, tau, x, y`                           |
//! | `manifest.toml`   | config hash, seed, planner, version, embedded config        |

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use resin_core::network::write_ledger_csv;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{PlannerKind, ScenarioConfig};
use crate::error::{BenchError, Result};
use crate::scenario::RunOutput;

pub const MANIFEST_TAG: &str = "resin-manifest/1";

pub const METRICS_FILE: &str = "metrics.csv";
pub const PAIRS_FILE: &str = "pairs.csv";
pub const LEDGER_FILE: &str = "ledger.csv";
pub const TRAJECTORIES_FILE: &str = "trajectories.csv";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    /// SHA-256 of the embedded config's canonical TOML.
    pub config_sha256: String,
    pub seed: u64,
    pub planner: PlannerKind,
    pub version: String,
    pub config: ScenarioConfig,
}

pub fn config_hash(cfg: &ScenarioConfig) -> String {
    Sha256::digest(cfg.to_toml().as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

impl Manifest {
    pub fn for_config(cfg: &ScenarioConfig) -> Self {
        Self {
            format: MANIFEST_TAG.into(),
            config_sha256: config_hash(cfg),
            seed: cfg.seed,
            planner: cfg.planner,
            version: env!("CARGO_PKG_VERSION").into(),
            config: cfg.clone(),
        }
    }

    /// Loads a manifest and checks its tag and config hash.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| BenchError::io(path, e))?;
        let m: Manifest = toml::from_str(&text).map_err(|e| BenchError::Manifest(format!("{}: {e}", path.display())))?;
        if m.format != MANIFEST_TAG {
            return Err(BenchError::Manifest(format!("unsupported format \"{}\"", m.format)));
        }
        m.config.validate()?;
        let hash = config_hash(&m.config);
        if hash != m.config_sha256 {
            return Err(BenchError::Manifest(format!(
                "config hash {hash} does not match recorded {}",
                m.config_sha256
            )));
        }
        if m.seed != m.config.seed || m.planner != m.config.planner {
            return Err(BenchError::Manifest("seed or planner disagree with the embedded config".into()));
        }
        Ok(m)
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| BenchError::io(path, e))?))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(create(path)?))
}

/// Writes the metrics table.
pub fn write_metrics<W: Write>(run: &RunOutput, w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let targets: Vec<_> = run.config.targets.iter().map(|t| t.id).collect();
    let mut header = vec!["step".to_string(), "planner".into(), "mean_error".into()];
    header.extend(targets.iter().map(|t| format!("target_{t}")));
    out.write_record(&header)?;
    let planner = run.config.planner.as_str();
    for row in &run.metrics {
        let mut rec = vec![row.step.to_string(), planner.to_string(), row.mean_error.to_string()];
        rec.extend(targets.iter().map(|t| row.per_target.get(t).map(f64::to_string).unwrap_or_default()));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

/// Writes every file of a run into `dir`, creating it if needed. Returns
/// the paths written.
pub fn emit_outputs(run: &RunOutput, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| BenchError::io(dir, e))?;
    let mut written = Vec::new();

    let path = dir.join(METRICS_FILE);
    write_metrics(run, create(&path)?).map_err(|e| BenchError::csv(&path, e))?;
    written.push(path);

    let path = dir.join(PAIRS_FILE);
    let mut w = csv_writer(&path)?;
    let res: csv::Result<()> = (|| {
        w.write_record(["step", "sensor", "target", "error"])?;
        for row in &run.metrics {
            for p in &row.pairs {
                w.write_record([row.step.to_string(), p.sensor.to_string(), p.target.to_string(), p.error.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    })();
    res.map_err(|e| BenchError::csv(&path, e))?;
    written.push(path);

    let path = dir.join(LEDGER_FILE);
    let mut w = create(&path)?;
    write_ledger_csv(&run.ledger, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| BenchError::io(&path, e))?;
    written.push(path);

    let path = dir.join(TRAJECTORIES_FILE);
    let mut w = csv_writer(&path)?;
    let res: csv::Result<()> = (|| {
        w.write_record(["step", "kind", "id", "x", "y", "heading", "active"])?;
        for (k, states) in run.targets.iter().enumerate().take(run.sensors.len()) {
            for t in states {
                w.write_record([
                    k.to_string(),
                    "target".into(),
                    t.id.to_string(),
                    t.position.x.to_string(),
                    t.position.y.to_string(),
                    String::new(),
                    u8::from(t.active).to_string(),
                ])?;
            }
            for s in &run.sensors[k] {
                w.write_record([
                    k.to_string(),
                    "sensor".into(),
                    s.id.to_string(),
                    s.position.x.to_string(),
                    s.position.y.to_string(),
                    s.heading.to_string(),
                    "1".into(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    })();
    res.map_err(|e| BenchError::csv(&path, e))?;
    written.push(path);

    let path = dir.join(PREDICTIONS_FILE);
    let mut w = csv_writer(&path)?;
    let res: csv::Result<()> = (|| {
        w.write_record(["step", "sensor", "target", "tau", "x", "y"])?;
        for p in &run.predictions {
            for (tau, x) in p.path.iter().enumerate() {
                w.write_record([
                    p.step.to_string(),
                    p.sensor.to_string(),
                    p.target.to_string(),
                    (tau + 1).to_string(),
                    x.x.to_string(),
                    x.y.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    })();
    res.map_err(|e| BenchError::csv(&path, e))?;
    written.push(path);

    let path = dir.join(MANIFEST_FILE);
    let text = toml::to_string(&Manifest::for_config(&run.config))
        .map_err(|e| BenchError::Manifest(e.to_string()))?;
    std::fs::write(&path, text).map_err(|e| BenchError::io(&path, e))?;
    written.push(path);

    Ok(written)
}
