//! Accuracy-versus-depth series for plotting, one CSV per dataset and
//! router with a `skip` and a `noskip` series.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::data::DatasetId;
use crate::error::{Error, Result};
use crate::routing::RoutingKind;

use super::sweep::{read_results, summarize};

#[derive(Debug, Clone, PartialEq)]
pub struct PlotSeries {
    pub dataset: DatasetId,
    pub routing: RoutingKind,
    pub file: PathBuf,
    /// `(series, depth, mean final test accuracy)`, NaN where every run diverged.
    pub points: Vec<(&'static str, usize, f64)>,
}

fn series_name(skip: bool) -> &'static str {
    if skip {
        "skip"
    } else {
        "noskip"
    }
}

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut writer = csv::Writer::from_path(path).map_err(csv_err)?;
    writer.write_record(header).map_err(csv_err)?;
    for row in rows {
        writer.write_record(&row).map_err(csv_err)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

/// Reads a sweep's `results.csv` and writes `{dataset}_{routing}.csv`
/// files plus an `index.csv` listing them into `out_dir`.
pub fn plotdata(results: &Path, out_dir: &Path) -> Result<Vec<PlotSeries>> {
    let rows = read_results(results)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut grouped: BTreeMap<(DatasetId, RoutingKind), Vec<(&'static str, usize, f64)>> = BTreeMap::new();
    for ((dataset, routing, skip, depth), acc) in summarize(&rows) {
        grouped
            .entry((dataset, routing))
            .or_default()
            .push((series_name(skip), depth, acc.unwrap_or(f64::NAN)));
    }
    let mut out = Vec::new();
    for ((dataset, routing), mut points) in grouped {
        // skip series first, each ordered by depth
        points.sort_by_key(|&(s, d, _)| (s != "skip", d));
        let file = out_dir.join(format!("{dataset}_{routing}.csv"));
        write_csv(
            &file,
            &["series", "depth", "test_acc"],
            points.iter().map(|(s, d, a)| vec![s.to_string(), d.to_string(), a.to_string()]),
        )?;
        out.push(PlotSeries {
            dataset,
            routing,
            file,
            points,
        });
    }
    write_csv(
        &out_dir.join("index.csv"),
        &["dataset", "routing", "file"],
        out.iter().map(|s| {
            let name = s.file.file_name().unwrap_or_default().to_string_lossy().into_owned();
            vec![s.dataset.to_string(), s.routing.to_string(), name]
        }),
    )?;
    Ok(out)
}
