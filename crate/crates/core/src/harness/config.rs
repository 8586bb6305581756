//! Run configuration: flat key-value text with one section per subsystem,
//! every key also settable from the command line as `--section.key=value`.
//!
//! A run's resolved configuration serializes canonically, so re-running from
//! the persisted file reproduces the experiment byte for byte.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::ars::ScheduleSpec;
use crate::error::{Error, Result};
use crate::optimizer::OptSettings;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    SoftmaxLinear,
    Mlp,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Hidden width; used only by the MLP.
    pub hidden: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum DataConfig {
    Blobs {
        classes: usize,
        per_class: usize,
        features: usize,
        spread: f64,
        seed: u64,
    },
    Csv {
        path: PathBuf,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub enum TopologyConfig {
    Ring { agents: usize },
    Complete { agents: usize },
    File { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub data: DataConfig,
    pub topology: TopologyConfig,
    pub alpha: f64,
    pub opt: OptSettings,
    pub schedule: ScheduleSpec,
    pub epochs: usize,
    pub batch_size: usize,
    /// Consensus test accuracy cadence in epochs (0 = final epoch only).
    pub eval_every: usize,
    pub verbose_gossip: bool,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    /// Seed-level worker cap; 0 picks the available parallelism.
    pub parallel: usize,
}

impl RunConfig {
    /// The frozen desk-scale experiment: 16 agents on a ring, extreme label
    /// skew, MLP on synthetic blobs, exponential averaging-rate schedule
    /// saturating near epoch 85.
    pub fn desk_preset() -> RunConfig {
        RunConfig {
            model: ModelConfig {
                kind: ModelKind::Mlp,
                hidden: 64,
            },
            data: DataConfig::Blobs {
                classes: 10,
                per_class: 200,
                features: 32,
                spread: 1.75,
                seed: 2024,
            },
            topology: TopologyConfig::Ring { agents: 16 },
            alpha: 0.01,
            opt: OptSettings {
                base_lr: 0.1,
                momentum: 0.9,
                weight_decay: 1e-4,
                milestones: vec![50, 75],
                decay_factor: 0.1,
                decay_biases: true,
            },
            schedule: ScheduleSpec::Exponential {
                gamma0: 0.1,
                growth: 1.0275,
                period: 1,
            },
            epochs: 100,
            batch_size: 32,
            eval_every: 10,
            verbose_gossip: false,
            seeds: vec![1, 2, 3],
            out_dir: PathBuf::from("runs/desk"),
            parallel: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.model {
            ModelConfig {
                kind: ModelKind::Mlp,
                hidden,
            } if hidden == 0 => {
                return Err(Error::config("model: hidden must be >= 1 for mlp"));
            }
            _ => {}
        }
        match &self.data {
            DataConfig::Blobs {
                classes,
                per_class,
                features,
                spread,
                ..
            } => {
                if *classes < 2 || *per_class == 0 || *features == 0 {
                    return Err(Error::config("data: blobs need classes >= 2 and positive sizes"));
                }
                if !(*spread > 0.0) {
                    return Err(Error::config("data: spread must be positive"));
                }
            }
            DataConfig::Csv { path } => {
                if path.as_os_str().is_empty() {
                    return Err(Error::config("data: csv_path required for source = csv"));
                }
            }
        }
        match &self.topology {
            TopologyConfig::Ring { agents } | TopologyConfig::Complete { agents } => {
                if *agents == 0 {
                    return Err(Error::config("topology: agents must be >= 1"));
                }
            }
            TopologyConfig::File { path } => {
                if path.as_os_str().is_empty() {
                    return Err(Error::config("topology: file required for kind = file"));
                }
            }
        }
        if !(self.alpha > 0.0) {
            return Err(Error::config("partition: alpha must be positive"));
        }
        self.opt.validate().map_err(|e| Error::config(e.to_string()))?;
        self.schedule
            .validate()
            .map_err(|e| Error::config(e.to_string()))?;
        if self.epochs == 0 {
            return Err(Error::config("trainer: epochs must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("trainer: batch_size must be >= 1"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("run: seeds must be nonempty"));
        }
        if self.out_dir.as_os_str().is_empty() {
            return Err(Error::config("run: out_dir must be set"));
        }
        Ok(())
    }

    /// Parse from INI text plus `section.key=value` overrides (CLI wins).
    pub fn from_ini(text: &str, overrides: &[String]) -> Result<RunConfig> {
        let mut map = parse_ini(text)?;
        apply_overrides(&mut map, overrides)?;
        let config = build(&mut map)?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: impl AsRef<Path>, overrides: &[String]) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::from_ini(&text, overrides)
    }

    /// Canonical serialization; parsing it back yields an equal config.
    pub fn to_ini_string(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "[model]");
        match self.model.kind {
            ModelKind::SoftmaxLinear => {
                let _ = writeln!(s, "kind = softmax_linear");
            }
            ModelKind::Mlp => {
                let _ = writeln!(s, "kind = mlp");
                let _ = writeln!(s, "hidden = {}", self.model.hidden);
            }
        }

        let _ = writeln!(s, "\n[data]");
        match &self.data {
            DataConfig::Blobs {
                classes,
                per_class,
                features,
                spread,
                seed,
            } => {
                let _ = writeln!(s, "source = blobs");
                let _ = writeln!(s, "classes = {classes}");
                let _ = writeln!(s, "per_class = {per_class}");
                let _ = writeln!(s, "features = {features}");
                let _ = writeln!(s, "spread = {spread}");
                let _ = writeln!(s, "seed = {seed}");
            }
            DataConfig::Csv { path } => {
                let _ = writeln!(s, "source = csv");
                let _ = writeln!(s, "csv_path = {}", path.display());
            }
        }

        let _ = writeln!(s, "\n[topology]");
        match &self.topology {
            TopologyConfig::Ring { agents } => {
                let _ = writeln!(s, "kind = ring");
                let _ = writeln!(s, "agents = {agents}");
            }
            TopologyConfig::Complete { agents } => {
                let _ = writeln!(s, "kind = complete");
                let _ = writeln!(s, "agents = {agents}");
            }
            TopologyConfig::File { path } => {
                let _ = writeln!(s, "kind = file");
                let _ = writeln!(s, "file = {}", path.display());
            }
        }

        let _ = writeln!(s, "\n[partition]");
        let _ = writeln!(s, "alpha = {}", self.alpha);

        let _ = writeln!(s, "\n[optimizer]");
        let _ = writeln!(s, "lr = {}", self.opt.base_lr);
        let _ = writeln!(s, "momentum = {}", self.opt.momentum);
        let _ = writeln!(s, "weight_decay = {}", self.opt.weight_decay);
        let milestones: Vec<String> =
            self.opt.milestones.iter().map(|m| m.to_string()).collect();
        let _ = writeln!(s, "milestones = {}", milestones.join(","));
        let _ = writeln!(s, "decay_factor = {}", self.opt.decay_factor);
        let _ = writeln!(s, "decay_biases = {}", self.opt.decay_biases);

        let _ = writeln!(s, "\n[schedule]");
        match self.schedule {
            ScheduleSpec::Constant { gamma0 } => {
                let _ = writeln!(s, "kind = constant");
                let _ = writeln!(s, "gamma0 = {gamma0}");
            }
            ScheduleSpec::Exponential {
                gamma0,
                growth,
                period,
            } => {
                let _ = writeln!(s, "kind = exponential");
                let _ = writeln!(s, "gamma0 = {gamma0}");
                let _ = writeln!(s, "growth = {growth}");
                let _ = writeln!(s, "period = {period}");
            }
            ScheduleSpec::Step {
                gamma0,
                growth,
                period,
            } => {
                let _ = writeln!(s, "kind = step");
                let _ = writeln!(s, "gamma0 = {gamma0}");
                let _ = writeln!(s, "growth = {growth}");
                let _ = writeln!(s, "period = {period}");
            }
            ScheduleSpec::Cosine {
                gamma0,
                t_max,
                period,
            } => {
                let _ = writeln!(s, "kind = cosine");
                let _ = writeln!(s, "gamma0 = {gamma0}");
                let _ = writeln!(s, "t_max = {t_max}");
                let _ = writeln!(s, "period = {period}");
            }
        }

        let _ = writeln!(s, "\n[trainer]");
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "eval_every = {}", self.eval_every);
        let _ = writeln!(s, "verbose_gossip = {}", self.verbose_gossip);

        let _ = writeln!(s, "\n[run]");
        let seeds: Vec<String> = self.seeds.iter().map(|x| x.to_string()).collect();
        let _ = writeln!(s, "seeds = {}", seeds.join(","));
        let _ = writeln!(s, "out_dir = {}", self.out_dir.display());
        let _ = writeln!(s, "parallel = {}", self.parallel);
        s
    }
}

/// Parse INI-style text into a flat `section.key -> value` map. `#` and `;`
/// start comments; blank values are ignored; later duplicates win.
pub fn parse_ini(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    let mut section = String::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find(['#', ';']) {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = name.trim().to_string();
            if section.is_empty() {
                return Err(Error::config(format!("line {}: empty section name", lineno + 1)));
            }
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::config(format!("line {}: expected 'key = value'", lineno + 1))
        })?;
        let key = key.trim();
        if key.is_empty() {
            return Err(Error::config(format!("line {}: empty key", lineno + 1)));
        }
        if section.is_empty() {
            return Err(Error::config(format!(
                "line {}: key '{key}' appears before any [section]",
                lineno + 1
            )));
        }
        let value = value.trim();
        if !value.is_empty() || key == "milestones" {
            map.insert(format!("{section}.{key}"), value.to_string());
        }
    }
    Ok(map)
}

/// Apply `section.key=value` overrides (with or without a leading `--`).
pub fn apply_overrides(map: &mut BTreeMap<String, String>, overrides: &[String]) -> Result<()> {
    for item in overrides {
        let body = item.strip_prefix("--").unwrap_or(item);
        let (key, value) = body.split_once('=').ok_or_else(|| {
            Error::config(format!("override '{item}': expected section.key=value"))
        })?;
        let key = key.trim();
        if !key.contains('.') {
            return Err(Error::config(format!(
                "override '{item}': key must be section.key"
            )));
        }
        map.insert(key.to_string(), value.trim().to_string());
    }
    Ok(())
}

struct Fields<'a> {
    map: &'a mut BTreeMap<String, String>,
}

impl Fields<'_> {
    fn take(&mut self, key: &str) -> Option<String> {
        self.map.remove(key)
    }

    fn parse<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.take(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse::<T>()
                .map(Some)
                .map_err(|e| Error::config(format!("{key}: bad value '{raw}': {e}"))),
        }
    }

    fn parse_or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.parse(key)?.unwrap_or(default))
    }

    fn require<T: FromStr>(&mut self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.parse(key)?
            .ok_or_else(|| Error::config(format!("missing required key '{key}'")))
    }

    fn int_list(&mut self, key: &str) -> Result<Option<Vec<u64>>> {
        match self.take(key) {
            None => Ok(None),
            Some(raw) if raw.trim().is_empty() => Ok(Some(vec![])),
            Some(raw) => raw
                .split(',')
                .map(|t| {
                    t.trim()
                        .parse::<u64>()
                        .map_err(|e| Error::config(format!("{key}: bad entry '{t}': {e}")))
                })
                .collect::<Result<Vec<u64>>>()
                .map(Some),
        }
    }
}

fn build(map: &mut BTreeMap<String, String>) -> Result<RunConfig> {
    let mut f = Fields { map };

    // Every known key is consumed up front, applicable or not, so that e.g.
    // overriding a preset to a constant schedule does not strand the
    // preset's growth/period keys as "unknown".
    let model_kind = f.require::<String>("model.kind")?;
    let model_hidden = f.parse_or("model.hidden", 64)?;
    let model = match model_kind.as_str() {
        "softmax_linear" => ModelConfig {
            kind: ModelKind::SoftmaxLinear,
            hidden: 0,
        },
        "mlp" => ModelConfig {
            kind: ModelKind::Mlp,
            hidden: model_hidden,
        },
        other => {
            return Err(Error::config(format!(
                "model.kind: expected softmax_linear or mlp, got '{other}'"
            )))
        }
    };

    let data_source = f.parse_or("data.source", "blobs".to_string())?;
    let data_classes = f.parse_or("data.classes", 10)?;
    let data_per_class = f.parse_or("data.per_class", 200)?;
    let data_features = f.parse_or("data.features", 32)?;
    let data_spread = f.parse_or("data.spread", 1.75)?;
    let data_seed = f.parse_or("data.seed", 2024)?;
    let data_csv_path = f.take("data.csv_path");
    let data = match data_source.as_str() {
        "blobs" => DataConfig::Blobs {
            classes: data_classes,
            per_class: data_per_class,
            features: data_features,
            spread: data_spread,
            seed: data_seed,
        },
        "csv" => DataConfig::Csv {
            path: PathBuf::from(data_csv_path.ok_or_else(|| {
                Error::config("missing required key 'data.csv_path'")
            })?),
        },
        other => {
            return Err(Error::config(format!(
                "data.source: expected blobs or csv, got '{other}'"
            )))
        }
    };

    let topo_kind = f.parse_or("topology.kind", "ring".to_string())?;
    let topo_agents = f.parse::<usize>("topology.agents")?;
    let topo_file = f.take("topology.file");
    let require_agents = |agents: Option<usize>| {
        agents.ok_or_else(|| Error::config("missing required key 'topology.agents'"))
    };
    let topology = match topo_kind.as_str() {
        "ring" => TopologyConfig::Ring {
            agents: require_agents(topo_agents)?,
        },
        "complete" => TopologyConfig::Complete {
            agents: require_agents(topo_agents)?,
        },
        "file" => TopologyConfig::File {
            path: PathBuf::from(topo_file.ok_or_else(|| {
                Error::config("missing required key 'topology.file'")
            })?),
        },
        other => {
            return Err(Error::config(format!(
                "topology.kind: expected ring, complete, or file, got '{other}'"
            )))
        }
    };

    let alpha = f.parse_or("partition.alpha", 0.01)?;

    let opt = OptSettings {
        base_lr: f.parse_or("optimizer.lr", 0.1)?,
        momentum: f.parse_or("optimizer.momentum", 0.9)?,
        weight_decay: f.parse_or("optimizer.weight_decay", 1e-4)?,
        milestones: f
            .int_list("optimizer.milestones")?
            .unwrap_or_default()
            .into_iter()
            .map(|m| m as usize)
            .collect(),
        decay_factor: f.parse_or("optimizer.decay_factor", 0.1)?,
        decay_biases: f.parse_or("optimizer.decay_biases", true)?,
    };

    let epochs = f.parse_or("trainer.epochs", 100)?;
    let batch_size = f.parse_or("trainer.batch_size", 32)?;
    let eval_every = f.parse_or("trainer.eval_every", 10)?;
    let verbose_gossip = f.parse_or("trainer.verbose_gossip", false)?;

    let sched_kind = f.parse_or("schedule.kind", "constant".to_string())?;
    let sched_gamma0 = f.parse_or("schedule.gamma0", 1.0)?;
    let sched_growth = f.parse::<f64>("schedule.growth")?;
    let sched_period = f.parse::<usize>("schedule.period")?;
    let sched_t_max = f.parse::<usize>("schedule.t_max")?;
    let schedule = match sched_kind.as_str() {
        "constant" => ScheduleSpec::Constant {
            gamma0: sched_gamma0,
        },
        "exponential" => ScheduleSpec::Exponential {
            gamma0: sched_gamma0,
            growth: sched_growth.unwrap_or(1.01),
            period: sched_period.unwrap_or(1),
        },
        "step" => ScheduleSpec::Step {
            gamma0: sched_gamma0,
            growth: sched_growth.unwrap_or(1.09),
            period: sched_period.unwrap_or(10),
        },
        "cosine" => ScheduleSpec::Cosine {
            gamma0: sched_gamma0,
            t_max: sched_t_max.unwrap_or(epochs),
            period: sched_period.unwrap_or(1),
        },
        other => {
            return Err(Error::config(format!(
                "schedule.kind: expected constant, exponential, step, or cosine, got '{other}'"
            )))
        }
    };

    let seeds = f.int_list("run.seeds")?.unwrap_or_else(|| vec![1, 2, 3]);
    let out_dir = PathBuf::from(f.parse_or("run.out_dir", "runs/out".to_string())?);
    let parallel = f.parse_or("run.parallel", 0)?;

    if let Some(unknown) = f.map.keys().next() {
        return Err(Error::config(format!("unknown config key '{unknown}'")));
    }

    Ok(RunConfig {
        model,
        data,
        topology,
        alpha,
        opt,
        schedule,
        epochs,
        batch_size,
        eval_every,
        verbose_gossip,
        seeds,
        out_dir,
        parallel,
    })
}
