use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::config::{load_config, ExperimentConfig};
use super::log::{emit, Format, RunSummary};
use super::run::run;
use crate::error::{Error, Result};

/// Config files (`*.toml`) in `dir`, sorted by name.
pub fn collect_configs(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir.as_ref())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    paths.sort();
    Ok(paths)
}

#[derive(Debug)]
pub struct BatchItem {
    pub source: String,
    pub outcome: std::result::Result<RunSummary, String>,
}

/// Runs every config on up to `jobs` threads. Each run owns its RNG, so the
/// results do not depend on scheduling. Outputs land in `out/<config stem>/`.
pub fn run_batch(
    configs: &[(String, ExperimentConfig)],
    jobs: usize,
    out: &Path,
    formats: &[Format],
) -> Vec<BatchItem> {
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<BatchItem>>> = configs.iter().map(|_| Mutex::new(None)).collect();
    let worker = || loop {
        let i = next.fetch_add(1, Ordering::Relaxed);
        let Some((name, cfg)) = configs.get(i) else { break };
        let outcome = run_one(name, cfg, out, formats).map_err(|e| e.to_string());
        *slots[i].lock().expect("slot lock") = Some(BatchItem {
            source: name.clone(),
            outcome,
        });
    };
    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, configs.len().max(1)) {
            s.spawn(worker);
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("slot lock").expect("every config is processed"))
        .collect()
}

fn run_one(name: &str, cfg: &ExperimentConfig, out: &Path, formats: &[Format]) -> Result<RunSummary> {
    let result = run(cfg)?;
    let dir = out.join(name);
    std::fs::create_dir_all(&dir)?;
    for &f in formats {
        emit(
            &result.log,
            Some(&result.summary),
            f,
            dir.join(format!("trajectory.{}", f.extension())),
        )?;
    }
    std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&result.summary)?)?;
    Ok(result.summary)
}

/// Loads every config in `dir` keyed by file stem.
pub fn load_dir(dir: impl AsRef<Path>) -> Result<Vec<(String, ExperimentConfig)>> {
    let paths = collect_configs(dir)?;
    if paths.is_empty() {
        return Err(Error::Config("no .toml configs found".into()));
    }
    paths
        .iter()
        .map(|p| {
            let stem = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "config".into());
            load_config(p)
                .map(|c| (stem, c))
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))
        })
        .collect()
}
