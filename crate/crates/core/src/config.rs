//! Flat `key=value` run configuration.

use std::path::PathBuf;

use crate::data::{parse_split, GenSpec};
use crate::error::{Error, Result};
use crate::eval::ExperimentConfig;
use crate::tgn::TgnConfig;
use crate::tgr::MixerConfig;

/// Everything a training run needs. Sources are layered by calling
/// [`RunConfig::set`] in precedence order: defaults, then file, then flags.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// Event CSV to load; a synthetic stream from `gen` when absent.
    pub data: Option<PathBuf>,
    /// Optional `node,x0,...` CSV for a loaded event file.
    pub node_features: Option<PathBuf>,
    pub gen: GenSpec,
    pub rewire: bool,
    pub mixer: MixerConfig,
    /// Width of the expander rows; must equal the memory width.
    pub expander_dim: usize,
    pub model: TgnConfig,
    pub experiment: ExperimentConfig,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: None,
            node_features: None,
            gen: GenSpec::default(),
            rewire: true,
            mixer: MixerConfig::default(),
            expander_dim: 100,
            model: TgnConfig::default(),
            experiment: ExperimentConfig::default(),
            seed: 0,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "on" | "true" | "1" | "yes" => Ok(true),
        "off" | "false" | "0" | "no" => Ok(false),
        other => Err(Error::Config(format!("bad value `{other}` for `{key}`"))),
    }
}

fn on_off(b: bool) -> String {
    if b { "on" } else { "off" }.to_string()
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim();
        let value = value.trim();
        match key {
            "data" => self.data = (!value.is_empty()).then(|| PathBuf::from(value)),
            "node_features" => self.node_features = (!value.is_empty()).then(|| PathBuf::from(value)),
            "gen" => self.gen.generator = value.parse()?,
            "seed" => self.seed = parse(key, value)?,
            "rewire" => self.rewire = parse_bool(key, value)?,
            "expander.layer" => self.mixer.layer = value.parse()?,
            "expander.scope" => self.mixer.scope = value.parse()?,
            "expander.heads" => self.mixer.heads = parse(key, value)?,
            "expander.assignment" => self.mixer.assignment = value.parse()?,
            "expander.dropout" => self.mixer.dropout = parse(key, value)?,
            "expander.regrow" => self.mixer.regrow = parse_bool(key, value)?,
            "expander.modulus" => {
                self.mixer.modulus = match value {
                    "auto" | "" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "expander_dim" => self.expander_dim = parse(key, value)?,
            "memory_dim" => self.model.memory_dim = parse(key, value)?,
            "embed_dim" => self.model.embed_dim = parse(key, value)?,
            "time_dim" => self.model.time_dim = parse(key, value)?,
            "num_neighbors" => self.model.num_neighbors = parse(key, value)?,
            "heads" => self.model.heads = parse(key, value)?,
            "aggregator" => self.model.aggregator = value.parse()?,
            "dropout" => self.model.dropout = parse(key, value)?,
            "psi_time" => self.model.psi_time = parse_bool(key, value)?,
            "lr" => self.model.lr = parse(key, value)?,
            "batch_size" => self.experiment.batch_size = parse(key, value)?,
            "epochs" => self.experiment.max_epochs = parse(key, value)?,
            "patience" => self.experiment.patience = parse(key, value)?,
            "eval_negatives" => self.experiment.eval_negatives = parse(key, value)?,
            "split" => self.experiment.split = parse_split(value)?,
            "tie_rule" => self.experiment.tie_rule = value.parse()?,
            _ => match key.strip_prefix("gen.") {
                Some(k) => self.gen.set(k, value)?,
                None => return Err(Error::Config(format!("unknown config key `{key}`"))),
            },
        }
        Ok(())
    }

    /// Applies `key=value` lines; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, found `{line}`", i + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    /// Checks cross-field constraints and copies the shared seed into the
    /// model, generator and driver settings.
    pub fn resolved(&self) -> Result<Self> {
        let mut c = self.clone();
        c.model.seed = c.seed;
        c.gen.seed = c.seed;
        c.experiment.seed = c.seed;
        c.gen.bipartite.split = c.experiment.split;
        c.model.validate()?;
        c.experiment.split.validate()?;
        if c.rewire && c.expander_dim != c.model.memory_dim {
            return Err(Error::Config(format!(
                "expander_dim {} must equal memory_dim {}",
                c.expander_dim, c.model.memory_dim
            )));
        }
        Ok(c)
    }

    /// The configuration as ordered `key=value` pairs.
    pub fn pairs(&self) -> Vec<(String, String)> {
        let m = &self.model;
        let x = &self.mixer;
        let e = &self.experiment;
        let mut out = vec![
            (
                "data".to_string(),
                self.data.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
            ),
            (
                "node_features".to_string(),
                self.node_features.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
            ),
            ("seed".into(), self.seed.to_string()),
            ("rewire".into(), on_off(self.rewire)),
            ("expander.layer".into(), x.layer.to_string()),
            ("expander.scope".into(), x.scope.to_string()),
            ("expander.heads".into(), x.heads.to_string()),
            ("expander.assignment".into(), x.assignment.to_string()),
            ("expander.dropout".into(), x.dropout.to_string()),
            ("expander.regrow".into(), on_off(x.regrow)),
            (
                "expander.modulus".into(),
                x.modulus.map_or("auto".to_string(), |n| n.to_string()),
            ),
            ("expander_dim".into(), self.expander_dim.to_string()),
            ("memory_dim".into(), m.memory_dim.to_string()),
            ("embed_dim".into(), m.embed_dim.to_string()),
            ("time_dim".into(), m.time_dim.to_string()),
            ("num_neighbors".into(), m.num_neighbors.to_string()),
            ("heads".into(), m.heads.to_string()),
            ("aggregator".into(), m.aggregator.to_string()),
            ("dropout".into(), m.dropout.to_string()),
            ("psi_time".into(), on_off(m.psi_time)),
            ("lr".into(), m.lr.to_string()),
            ("batch_size".into(), e.batch_size.to_string()),
            ("epochs".into(), e.max_epochs.to_string()),
            ("patience".into(), e.patience.to_string()),
            ("eval_negatives".into(), e.eval_negatives.to_string()),
            ("split".into(), format!("{},{},{}", e.split.train, e.split.val, e.split.test)),
            ("tie_rule".into(), e.tie_rule.to_string()),
        ];
        if self.data.is_none() {
            for line in self.gen.manifest().lines() {
                let (k, v) = line.split_once('=').expect("manifest lines are key=value");
                if k == "seed" || k == "split" {
                    continue;
                }
                let key = if k == "generator" { "gen".to_string() } else { format!("gen.{k}") };
                out.push((key, v.to_string()));
            }
        }
        out
    }

    /// Loads the configured event file, or generates the synthetic stream.
    pub fn load_stream(&self) -> Result<crate::ctdg::EventStream> {
        match &self.data {
            Some(path) => {
                let (stream, _) = crate::ctdg::read_csv_file(path)?;
                match &self.node_features {
                    Some(fp) => {
                        let x = crate::ctdg::read_node_features(fp, stream.num_nodes())?;
                        stream.with_node_features(x)
                    }
                    None => Ok(stream),
                }
            }
            None => self.gen.generate(),
        }
    }

    pub fn mixer_if_rewired(&self) -> Option<MixerConfig> {
        self.rewire.then(|| self.mixer.clone())
    }
}
