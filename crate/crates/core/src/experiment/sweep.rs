//! Depth sweeps: the Cartesian product of datasets, routers, depths, skip
//! settings and seeds, with per-epoch rows appended to `results.csv` and a
//! table-shaped `summary.csv` of mean final accuracies.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, DatasetId, Split};
use crate::error::{Error, Result};
use crate::layers::{Architecture, ModelConfig, MAX_DEPTH, MIN_DEPTH};
use crate::routing::RoutingKind;

use super::{run_id, train, RunRecord, RunStatus, Settings, TrainOptions};

pub const RESULTS_HEADER: &str = "run_id,dataset,routing,depth,skip,seed,epoch,train_loss,test_acc";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkipAxis {
    On,
    Off,
    Both,
}

impl SkipAxis {
    pub fn values(self) -> Vec<bool> {
        match self {
            SkipAxis::On => vec![true],
            SkipAxis::Off => vec![false],
            SkipAxis::Both => vec![false, true],
        }
    }
}

impl From<bool> for SkipAxis {
    fn from(skip: bool) -> Self {
        if skip {
            SkipAxis::On
        } else {
            SkipAxis::Off
        }
    }
}

impl FromStr for SkipAxis {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "on" | "true" | "skip" => Ok(SkipAxis::On),
            "off" | "false" | "noskip" | "no-skip" => Ok(SkipAxis::Off),
            "both" => Ok(SkipAxis::Both),
            other => Err(format!("expected on, off or both, got `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub datasets: Vec<DatasetId>,
    pub routings: Vec<RoutingKind>,
    pub depths: Vec<usize>,
    pub skips: SkipAxis,
    pub seeds: Vec<u64>,
    /// Training hyperparameters applied to every run (epochs, batch size, ...).
    pub template: Settings,
    pub train_limit: Option<usize>,
    pub test_limit: Option<usize>,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.datasets.is_empty() || self.routings.is_empty() || self.depths.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("every sweep axis needs at least one value".into()));
        }
        if let Some(d) = self.depths.iter().find(|d| !(MIN_DEPTH..=MAX_DEPTH).contains(*d)) {
            return Err(Error::Config(format!("sweep depth {d} outside [{MIN_DEPTH}, {MAX_DEPTH}]")));
        }
        Ok(())
    }

    /// Run configurations in execution order.
    pub fn configs(&self) -> Vec<ModelConfig> {
        let mut out = Vec::new();
        for &dataset in &self.datasets {
            for &routing in &self.routings {
                for &depth in &self.depths {
                    for skip in self.skips.values() {
                        for &seed in &self.seeds {
                            let mut cfg = ModelConfig::new(dataset, routing, depth, skip);
                            self.template.apply(&mut cfg);
                            cfg.seed = seed;
                            out.push(cfg);
                        }
                    }
                }
            }
        }
        out
    }
}

/// One line of `results.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub run_id: String,
    pub dataset: DatasetId,
    pub routing: RoutingKind,
    pub depth: usize,
    pub skip: bool,
    pub seed: u64,
    pub epoch: usize,
    pub train_loss: f64,
    pub test_acc: f64,
}

impl ResultRow {
    /// Rows for a record; a diverged run ends with a NaN row at the epoch
    /// where it stopped.
    pub fn from_record(record: &RunRecord) -> Vec<ResultRow> {
        let c = &record.config;
        let row = |epoch, train_loss, test_acc| ResultRow {
            run_id: record.run_id.clone(),
            dataset: c.dataset,
            routing: c.routing,
            depth: c.depth,
            skip: c.use_skip,
            seed: c.seed,
            epoch,
            train_loss,
            test_acc,
        };
        let mut rows: Vec<_> = record
            .epochs
            .iter()
            .map(|e| row(e.epoch, e.train_loss, e.test_accuracy))
            .collect();
        if record.status == RunStatus::Diverged {
            rows.push(row(record.epochs.len() + 1, f64::NAN, f64::NAN));
        }
        rows
    }
}

#[derive(Debug, Default)]
pub struct SweepOutcome {
    pub results: PathBuf,
    pub summary: PathBuf,
    pub completed: Vec<String>,
    pub diverged: Vec<String>,
    /// Runs skipped because `results.csv` already holds them.
    pub resumed: Vec<String>,
    /// Runs that failed with an error, which did not stop the sweep.
    pub failed: Vec<(String, Error)>,
}

fn csv_error(path: &Path, source: csv::Error) -> Error {
    Error::Csv {
        path: path.to_path_buf(),
        source,
    }
}

/// Reads `results.csv`; a missing file yields no rows.
pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.join(",") != RESULTS_HEADER {
        return Err(Error::Config(format!(
            "{}: expected header `{RESULTS_HEADER}`, found `{}`",
            path.display(),
            header.join(",")
        )));
    }
    reader
        .deserialize()
        .collect::<std::result::Result<Vec<ResultRow>, _>>()
        .map_err(|e| csv_error(path, e))
}

/// Appends all rows of one run in a single write.
fn append_rows(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    for row in rows {
        writer.serialize(row).map_err(|e| csv_error(path, e))?;
    }
    let mut bytes = if fresh { format!("{RESULTS_HEADER}\n").into_bytes() } else { Vec::new() };
    bytes.extend(writer.into_inner().map_err(|e| Error::Config(e.to_string()))?);
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    file.sync_all().map_err(|e| Error::io(path, e))
}

/// Final-epoch accuracy of every run (NaN for diverged runs).
fn final_accuracies(rows: &[ResultRow]) -> Vec<&ResultRow> {
    let mut last: BTreeMap<&str, &ResultRow> = BTreeMap::new();
    for row in rows {
        match last.get(row.run_id.as_str()) {
            Some(prev) if prev.epoch >= row.epoch => {}
            _ => {
                last.insert(&row.run_id, row);
            }
        }
    }
    last.into_values().collect()
}

/// Cell key: dataset, routing, skip, depth.
pub type CellKey = (DatasetId, RoutingKind, bool, usize);

/// Mean final accuracy per cell over seeds, ignoring diverged runs
/// (`None` when every run in the cell diverged).
pub fn summarize(rows: &[ResultRow]) -> BTreeMap<CellKey, Option<f64>> {
    let mut cells: BTreeMap<CellKey, Vec<f64>> = BTreeMap::new();
    for row in final_accuracies(rows) {
        cells
            .entry((row.dataset, row.routing, row.skip, row.depth))
            .or_default()
            .push(row.test_acc);
    }
    cells
        .into_iter()
        .map(|(k, accs)| {
            let ok: Vec<f64> = accs.into_iter().filter(|a| a.is_finite()).collect();
            let mean = (!ok.is_empty()).then(|| ok.iter().sum::<f64>() / ok.len() as f64);
            (k, mean)
        })
        .collect()
}

/// Writes the table-shaped summary: one row per (dataset, routing, skip),
/// one column per depth.
pub fn write_summary(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let cells = summarize(rows);
    let depths: BTreeSet<usize> = cells.keys().map(|k| k.3).collect();
    let mut table: BTreeMap<(DatasetId, RoutingKind, bool), HashMap<usize, Option<f64>>> = BTreeMap::new();
    for (&(d, r, s, depth), &acc) in &cells {
        table.entry((d, r, s)).or_default().insert(depth, acc);
    }
    let mut writer = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["dataset".to_string(), "routing".into(), "skip".into()];
    header.extend(depths.iter().map(|d| format!("d{d}")));
    writer.write_record(&header).map_err(|e| csv_error(path, e))?;
    for ((d, r, s), by_depth) in &table {
        let mut record = vec![d.to_string(), r.to_string(), s.to_string()];
        for depth in &depths {
            record.push(match by_depth.get(depth) {
                Some(Some(acc)) => acc.to_string(),
                Some(None) => "diverged".into(),
                None => String::new(),
            });
        }
        writer.write_record(&record).map_err(|e| csv_error(path, e))?;
    }
    let bytes = writer.into_inner().map_err(|e| Error::Config(e.to_string()))?;
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Runs a sweep against datasets under `data_dir`.
pub fn run_sweep(spec: &SweepSpec, data_dir: &Path, out_dir: &Path, opts: &TrainOptions) -> Result<SweepOutcome> {
    run_sweep_with(spec, out_dir, opts, None, |id| {
        let train_set = Dataset::load(data_dir, id, Split::Train)?;
        let test_set = Dataset::load(data_dir, id, Split::Test)?;
        Ok((train_set, test_set))
    })
}

/// Runs a sweep with a custom dataset loader and optional architecture
/// override. Runs already present in `results.csv` are skipped; a failing
/// run is reported in the outcome and the sweep continues.
pub fn run_sweep_with(
    spec: &SweepSpec,
    out_dir: &Path,
    opts: &TrainOptions,
    architecture: Option<&dyn Fn(DatasetId) -> Architecture>,
    mut load: impl FnMut(DatasetId) -> Result<(Dataset, Dataset)>,
) -> Result<SweepOutcome> {
    spec.validate()?;
    let runs_dir = out_dir.join("runs");
    std::fs::create_dir_all(&runs_dir).map_err(|e| Error::io(&runs_dir, e))?;
    let results = out_dir.join("results.csv");
    let summary = out_dir.join("summary.csv");
    let done: BTreeSet<String> = read_results(&results)?.into_iter().map(|r| r.run_id).collect();
    let mut outcome = SweepOutcome {
        results: results.clone(),
        summary: summary.clone(),
        ..SweepOutcome::default()
    };
    let mut cache: HashMap<DatasetId, std::result::Result<(Dataset, Dataset), String>> = HashMap::new();
    for mut cfg in spec.configs() {
        if let Some(arch) = architecture {
            cfg.architecture = arch(cfg.dataset);
        }
        let id = run_id(&cfg);
        if done.contains(&id) {
            outcome.resumed.push(id);
            continue;
        }
        let data = cache.entry(cfg.dataset).or_insert_with(|| {
            load(cfg.dataset)
                .map(|(tr, te)| {
                    (
                        spec.train_limit.map_or(tr.clone(), |n| tr.clone().truncate(n)),
                        spec.test_limit.map_or(te.clone(), |n| te.clone().truncate(n)),
                    )
                })
                .map_err(|e| e.to_string())
        });
        let (train_set, test_set) = match data {
            Ok(d) => d,
            Err(msg) => {
                outcome.failed.push((id, Error::Config(format!("dataset {}: {msg}", cfg.dataset))));
                continue;
            }
        };
        let result = train(&cfg, train_set, test_set, opts, |_| {});
        let record = match result {
            Ok(o) => o.record,
            Err(e) => {
                if opts.verbose {
                    eprintln!("{id}: failed: {e}");
                }
                outcome.failed.push((id, e));
                continue;
            }
        };
        let json = serde_json::to_vec_pretty(&record).map_err(|e| Error::Config(e.to_string()))?;
        let record_path = runs_dir.join(format!("{id}.json"));
        std::fs::write(&record_path, json).map_err(|e| Error::io(&record_path, e))?;
        append_rows(&results, &ResultRow::from_record(&record))?;
        match record.status {
            RunStatus::Completed => outcome.completed.push(id),
            RunStatus::Diverged => outcome.diverged.push(id),
        }
    }
    write_summary(&summary, &read_results(&results)?)?;
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(run: &str, depth: usize, skip: bool, seed: u64, epoch: usize, acc: f64) -> ResultRow {
        ResultRow {
            run_id: run.into(),
            dataset: DatasetId::Mnist,
            routing: RoutingKind::Rba,
            depth,
            skip,
            seed,
            epoch,
            train_loss: 0.1,
            test_acc: acc,
        }
    }

    #[test]
    fn product_count_matches_axes() {
        let spec = SweepSpec {
            datasets: vec![DatasetId::Mnist],
            routings: vec![RoutingKind::Rba],
            depths: (3..=8).collect(),
            skips: SkipAxis::Both,
            seeds: vec![0],
            template: Settings::default(),
            train_limit: None,
            test_limit: None,
        };
        assert_eq!(spec.configs().len(), 12);
        let mut bad = spec.clone();
        bad.depths = vec![2];
        assert!(bad.validate().is_err());
    }

    #[test]
    fn summary_uses_final_epoch_mean_and_marks_divergence() {
        let rows = vec![
            row("a", 3, false, 0, 1, 0.5),
            row("a", 3, false, 0, 2, 0.9),
            row("b", 3, false, 1, 1, 0.7),
            row("c", 4, true, 0, 1, f64::NAN),
        ];
        let s = summarize(&rows);
        assert_eq!(s[&(DatasetId::Mnist, RoutingKind::Rba, false, 3)], Some(0.8));
        assert_eq!(s[&(DatasetId::Mnist, RoutingKind::Rba, true, 4)], None);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("summary.csv");
        write_summary(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text,
            "dataset,routing,skip,d3,d4\nmnist,rba,false,0.8,\nmnist,rba,true,,diverged\n"
        );
    }

    #[test]
    fn results_round_trip_and_header_is_checked() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("results.csv");
        let rows = vec![row("a", 3, true, 0, 1, 0.25), row("a", 3, true, 0, 2, f64::NAN)];
        append_rows(&path, &rows[..1]).unwrap();
        append_rows(&path, &rows[1..]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(&format!("{RESULTS_HEADER}\n")));
        assert_eq!(text.lines().count(), 3);
        let back = read_results(&path).unwrap();
        assert_eq!(back[0], rows[0]);
        assert!(back[1].test_acc.is_nan());
        std::fs::write(&path, "a,b\n1,2\n").unwrap();
        assert!(read_results(&path).is_err());
    }
}
