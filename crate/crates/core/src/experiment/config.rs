//! Flat `key = value` run configuration. Keys mirror the CLI flag names;
//! values given on the command line override the file.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::DatasetId;
use crate::error::{Error, Result};
use crate::layers::ModelConfig;
use crate::routing::RoutingKind;

use super::sweep::{SkipAxis, SweepSpec};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings {
    pub dataset: Option<DatasetId>,
    pub routing: Option<RoutingKind>,
    pub depth: Option<usize>,
    pub skip: Option<bool>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub seed: Option<u64>,
    pub data_dir: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub learning_rate: Option<f64>,
    pub recon_weight: Option<f64>,
    /// Use only the first N training / test samples.
    pub train_limit: Option<usize>,
    pub test_limit: Option<usize>,
    // sweep axes
    pub datasets: Option<Vec<DatasetId>>,
    pub routings: Option<Vec<RoutingKind>>,
    pub depths: Option<Vec<usize>>,
    pub skips: Option<SkipAxis>,
    pub seeds: Option<Vec<u64>>,
}

fn value<T: FromStr>(key: &str, raw: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    raw.parse::<T>()
        .map_err(|e| Error::Config(format!("`{key}`: cannot parse `{raw}`: {e}")))
}

pub fn parse_bool(raw: &str) -> Result<bool> {
    match raw.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        other => Err(Error::Config(format!("expected a boolean, got `{other}`"))),
    }
}

/// Comma-separated list.
pub fn parse_list<T: FromStr>(key: &str, raw: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    let items = raw
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| value(key, s))
        .collect::<Result<Vec<T>>>()?;
    if items.is_empty() {
        return Err(Error::Config(format!("`{key}` must not be empty")));
    }
    Ok(items)
}

/// `a-b` (inclusive) or a comma-separated list of integers.
pub fn parse_range(key: &str, raw: &str) -> Result<Vec<usize>> {
    if let Some((lo, hi)) = raw.split_once('-') {
        let (lo, hi): (usize, usize) = (value(key, lo.trim())?, value(key, hi.trim())?);
        if lo > hi {
            return Err(Error::Config(format!("`{key}`: empty range {raw}")));
        }
        return Ok((lo..=hi).collect());
    }
    parse_list(key, raw)
}

impl Settings {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut s = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, raw) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            let (key, raw) = (key.trim().replace('_', "-"), raw.trim());
            s.set(&key, raw)
                .map_err(|e| Error::Config(format!("line {}: {}", n + 1, e.to_string().trim_start_matches("invalid configuration: "))))?;
        }
        Ok(s)
    }

    fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        match key {
            "dataset" => self.dataset = Some(value(key, raw)?),
            "routing" => self.routing = Some(value(key, raw)?),
            "depth" => self.depth = Some(value(key, raw)?),
            "skip" => self.skip = Some(parse_bool(raw)?),
            "epochs" => self.epochs = Some(value(key, raw)?),
            "batch-size" => self.batch_size = Some(value(key, raw)?),
            "seed" => self.seed = Some(value(key, raw)?),
            "data-dir" => self.data_dir = Some(PathBuf::from(raw)),
            "out" => self.out = Some(PathBuf::from(raw)),
            "lr" | "learning-rate" => self.learning_rate = Some(value(key, raw)?),
            "recon-weight" => self.recon_weight = Some(value(key, raw)?),
            "train-limit" => self.train_limit = Some(value(key, raw)?),
            "test-limit" => self.test_limit = Some(value(key, raw)?),
            "datasets" => self.datasets = Some(parse_list(key, raw)?),
            "routings" => self.routings = Some(parse_list(key, raw)?),
            "depths" => self.depths = Some(parse_range(key, raw)?),
            "skips" => self.skips = Some(value(key, raw)?),
            "seeds" => self.seeds = Some(parse_list(key, raw)?),
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Fields set in `overrides` replace those in `self`.
    pub fn merge(self, overrides: Settings) -> Settings {
        macro_rules! pick {
            ($($f:ident),*) => { Settings { $($f: overrides.$f.or(self.$f)),* } };
        }
        pick!(
            dataset, routing, depth, skip, epochs, batch_size, seed, data_dir, out, learning_rate, recon_weight,
            train_limit, test_limit, datasets, routings, depths, skips, seeds
        )
    }

    /// Single-run configuration; dataset, routing and depth are required.
    pub fn model_config(&self) -> Result<ModelConfig> {
        let missing = |k: &str| Error::Config(format!("missing required setting `{k}`"));
        let dataset = self.dataset.ok_or_else(|| missing("dataset"))?;
        let routing = self.routing.ok_or_else(|| missing("routing"))?;
        let depth = self.depth.ok_or_else(|| missing("depth"))?;
        let mut cfg = ModelConfig::new(dataset, routing, depth, self.skip.unwrap_or(false));
        self.apply(&mut cfg);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies the training hyperparameters present in `self`.
    pub fn apply(&self, cfg: &mut ModelConfig) {
        if let Some(e) = self.epochs {
            cfg.epochs = e;
        }
        if self.batch_size.is_some() {
            cfg.batch_size = self.batch_size;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(lr) = self.learning_rate {
            cfg.learning_rate = lr;
        }
        if let Some(w) = self.recon_weight {
            cfg.recon_weight = w;
        }
    }

    /// Sweep axes; single-valued settings act as one-element axes.
    pub fn sweep_spec(&self) -> Result<SweepSpec> {
        let missing = |k: &str| Error::Config(format!("sweep needs `{k}`"));
        let spec = SweepSpec {
            datasets: self
                .datasets
                .clone()
                .or(self.dataset.map(|d| vec![d]))
                .ok_or_else(|| missing("datasets"))?,
            routings: self
                .routings
                .clone()
                .or(self.routing.map(|r| vec![r]))
                .ok_or_else(|| missing("routings"))?,
            depths: self
                .depths
                .clone()
                .or(self.depth.map(|d| vec![d]))
                .ok_or_else(|| missing("depths"))?,
            skips: self.skips.or(self.skip.map(SkipAxis::from)).unwrap_or(SkipAxis::Both),
            seeds: self.seeds.clone().or(self.seed.map(|s| vec![s])).unwrap_or_else(|| vec![0]),
            template: Settings {
                epochs: self.epochs,
                batch_size: self.batch_size,
                learning_rate: self.learning_rate,
                recon_weight: self.recon_weight,
                ..Settings::default()
            },
            train_limit: self.train_limit,
            test_limit: self.test_limit,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_file_and_flags_override() {
        let file = Settings::parse(
            "# scaled run\ndataset = mnist\nrouting=rba\ndepth = 7\nskip = true\nepochs=5 # short\nbatch_size = 32\n",
        )
        .unwrap();
        assert_eq!(file.depth, Some(7));
        assert_eq!(file.batch_size, Some(32));
        let flags = Settings {
            depth: Some(3),
            skip: Some(false),
            ..Settings::default()
        };
        let cfg = file.merge(flags).model_config().unwrap();
        assert_eq!((cfg.depth, cfg.use_skip, cfg.epochs), (3, false, 5));
        assert_eq!(cfg.effective_batch_size(), 32);
    }

    #[test]
    fn bad_lines_name_the_line() {
        let err = Settings::parse("dataset = mnist\ndepth = deep\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        assert!(Settings::parse("colour = blue").is_err());
        assert!(Settings::parse("no equals sign").is_err());
    }

    #[test]
    fn ranges_and_lists() {
        assert_eq!(parse_range("depths", "3-6").unwrap(), vec![3, 4, 5, 6]);
        assert_eq!(parse_range("depths", "3,7").unwrap(), vec![3, 7]);
        assert!(parse_range("depths", "8-3").is_err());
        assert!(parse_list::<u64>("seeds", " , ").is_err());
    }

    #[test]
    fn depth_out_of_range_is_a_config_error() {
        let s = Settings::parse("dataset=mnist\nrouting=em\ndepth=2").unwrap();
        assert_eq!(s.model_config().unwrap_err().exit_code(), 2);
    }
}
