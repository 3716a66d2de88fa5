//! Output files. Everything goes through [`write_atomic`], so a reader sees
//! either the previous file or the complete new one.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use splitrec_core::experiments::{ExperimentResult, ResultRow};
use splitrec_core::simnet::MessageLog;
use tempfile::NamedTempFile;

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = NamedTempFile::new_in(dir)
        .with_context(|| format!("creating temporary file in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path)
        .with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn write_csv<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().context("flushing csv")?;
    write_atomic(path, &bytes)
}

#[derive(Serialize)]
struct Summary<'a> {
    name: &'a str,
    parameters: &'a std::collections::BTreeMap<String, String>,
    summary: &'a std::collections::BTreeMap<String, f64>,
    checks: &'a [splitrec_core::experiments::Check],
    passed: bool,
}

/// Writes `<name>.csv` (one row per measured point) and `<name>.json`.
pub fn write_experiment(out_dir: &Path, result: &ExperimentResult) -> Result<Vec<PathBuf>> {
    let csv_path = out_dir.join(format!("{}.csv", result.name));
    let json_path = out_dir.join(format!("{}.json", result.name));
    write_csv::<ResultRow>(&csv_path, &result.rows)?;
    write_json(
        &json_path,
        &Summary {
            name: &result.name,
            parameters: &result.parameters,
            summary: &result.summary,
            checks: &result.checks,
            passed: result.all_passed(),
        },
    )?;
    Ok(vec![csv_path, json_path])
}

#[derive(Serialize)]
struct MessageRow {
    round: usize,
    phase: String,
    from: String,
    to: String,
    vid: String,
    bytes: u64,
}

pub fn write_message_log(path: &Path, log: &MessageLog) -> Result<()> {
    let rows: Vec<MessageRow> = log
        .iter()
        .map(|m| MessageRow {
            round: m.round,
            phase: m.phase.to_string(),
            from: m.from.to_string(),
            to: m.to.to_string(),
            vid: m.vid.to_string(),
            bytes: m.bytes,
        })
        .collect();
    write_csv(path, &rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_whole_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/out.txt");
        write_atomic(&path, b"first version, longer").unwrap();
        write_atomic(&path, b"second").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"second");
        let leftovers = std::fs::read_dir(path.parent().unwrap()).unwrap().count();
        assert_eq!(leftovers, 1);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rows.csv");
        let rows = vec![ResultRow {
            series: "S=5".into(),
            x: 1.0,
            mean: 0.25,
            std: None,
            n_trials: 3,
        }];
        write_csv(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "series,x,mean,std,n_trials\nS=5,1.0,0.25,,3\n");
    }
}
