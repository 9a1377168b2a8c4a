//! Flat `section.key = value` run configuration.
//!
//! One assignment per line; `#` starts a comment; blank lines are ignored.
//! Unknown keys, repeated keys and unparsable values are errors that name
//! the line and key.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use upseg_core::data::{DatasetSpec, ShapeFamily};
use upseg_core::graph::{BackboneConfig, UpscaleStackConfig};
use upseg_core::loss::LossConfig;
use upseg_core::train::{OptimizerKind, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub key: Option<String>,
    pub msg: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(line) = self.line {
            write!(f, "line {line}: ")?;
        }
        if let Some(key) = &self.key {
            write!(f, "{key}: ")?;
        }
        f.write_str(&self.msg)
    }
}

impl std::error::Error for ConfigError {}

/// Where training/evaluation data comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic(DatasetSpec),
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub backbone: BackboneConfig,
    pub stack: UpscaleStackConfig,
    /// Seed for weight initialisation.
    pub model_seed: u64,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub data: DataSource,
    pub train_fraction: f64,
    pub report_path: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

const KEYS: &[&str] = &[
    "model.in_channels",
    "model.base_channels",
    "model.depth",
    "model.num_classes",
    "model.upscale_stages",
    "model.use_skips",
    "model.skip_exempt_stages",
    "model.stage_relu",
    "model.seed",
    "loss.kind",
    "loss.stage_weights",
    "optimizer.kind",
    "optimizer.lr",
    "optimizer.batch_size",
    "optimizer.max_epochs",
    "optimizer.seed",
    "optimizer.patience",
    "optimizer.min_delta",
    "data.path",
    "data.num_samples",
    "data.input_res",
    "data.gt_res",
    "data.shape_family",
    "data.noise_level",
    "data.max_shapes",
    "data.seed",
    "data.train_fraction",
    "eval.report_path",
    "eval.checkpoint",
];

struct Entry {
    line: usize,
    value: String,
}

struct Entries(BTreeMap<String, Entry>);

impl Entries {
    fn get<V: FromStr>(&self, key: &str) -> Result<Option<V>, ConfigError>
    where
        V::Err: fmt::Display,
    {
        let Some(e) = self.0.get(key) else {
            return Ok(None);
        };
        e.value.parse().map(Some).map_err(|err| ConfigError {
            line: Some(e.line),
            key: Some(key.into()),
            msg: format!("cannot parse {:?}: {err}", e.value),
        })
    }

    fn list<V: FromStr>(&self, key: &str) -> Result<Option<Vec<V>>, ConfigError>
    where
        V::Err: fmt::Display,
    {
        let Some(e) = self.0.get(key) else {
            return Ok(None);
        };
        e.value
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse().map_err(|err| ConfigError {
                    line: Some(e.line),
                    key: Some(key.into()),
                    msg: format!("cannot parse list item {s:?}: {err}"),
                })
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Some)
    }

    fn has(&self, key: &str) -> bool {
        self.0.contains_key(key)
    }

    fn line(&self, key: &str) -> Option<usize> {
        self.0.get(key).map(|e| e.line)
    }
}

fn parse_lines(text: &str) -> Result<Entries, ConfigError> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(ConfigError {
                line: Some(line),
                key: None,
                msg: format!("expected `section.key = value`, got {content:?}"),
            });
        };
        let key = key.trim();
        let value = value.trim();
        if !KEYS.contains(&key) {
            return Err(ConfigError {
                line: Some(line),
                key: Some(key.into()),
                msg: "unknown key".into(),
            });
        }
        if value.is_empty() {
            return Err(ConfigError {
                line: Some(line),
                key: Some(key.into()),
                msg: "missing value".into(),
            });
        }
        if let Some(prev) = map.insert(
            key.to_string(),
            Entry {
                line,
                value: value.to_string(),
            },
        ) {
            return Err(ConfigError {
                line: Some(line),
                key: Some(key.into()),
                msg: format!("already set on line {}", prev.line),
            });
        }
    }
    Ok(Entries(map))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let e = parse_lines(text)?;

        let mut backbone = BackboneConfig::default();
        if let Some(v) = e.get("model.in_channels")? {
            backbone.in_channels = v;
        }
        if let Some(v) = e.get("model.base_channels")? {
            backbone.base_channels = v;
        }
        if let Some(v) = e.get("model.depth")? {
            backbone.depth = v;
        }
        if let Some(v) = e.get("model.num_classes")? {
            backbone.num_classes = v;
        }
        let num_stages = e.get("model.upscale_stages")?.unwrap_or(0);
        let mut stack = UpscaleStackConfig::new(num_stages, backbone.num_classes);
        if let Some(v) = e.get("model.use_skips")? {
            stack.use_skips = v;
        }
        if let Some(v) = e.list::<usize>("model.skip_exempt_stages")? {
            stack.skip_exempt_stages = v.into_iter().collect::<BTreeSet<_>>();
        }
        if let Some(v) = e.get("model.stage_relu")? {
            stack.stage_relu = v;
        }

        let mut loss = LossConfig::uniform(num_stages);
        if let Some(kind) = e.get::<String>("loss.kind")? {
            if kind != "cross_entropy" {
                return Err(ConfigError {
                    line: e.line("loss.kind"),
                    key: Some("loss.kind".into()),
                    msg: format!("unsupported loss {kind:?}; only cross_entropy is available"),
                });
            }
        }
        if let Some(w) = e.list::<f64>("loss.stage_weights")? {
            loss.stage_weights = w;
        }
        if let Err(err) = loss.validate() {
            return Err(ConfigError {
                line: e.line("loss.stage_weights"),
                key: Some("loss.stage_weights".into()),
                msg: err.to_string(),
            });
        }
        if loss.num_stages() != num_stages {
            return Err(ConfigError {
                line: e.line("loss.stage_weights"),
                key: Some("loss.stage_weights".into()),
                msg: format!(
                    "{} weights given but model.upscale_stages = {num_stages} needs {}",
                    loss.stage_weights.len(),
                    num_stages + 1
                ),
            });
        }

        let mut train = TrainConfig::default();
        if let Some(v) = e.get::<String>("optimizer.kind")? {
            train.optimizer = v.parse::<OptimizerKind>().map_err(|err| ConfigError {
                line: e.line("optimizer.kind"),
                key: Some("optimizer.kind".into()),
                msg: err.to_string(),
            })?;
        }
        if let Some(v) = e.get("optimizer.lr")? {
            train.lr = v;
        }
        if let Some(v) = e.get("optimizer.batch_size")? {
            train.batch_size = v;
        }
        if let Some(v) = e.get("optimizer.max_epochs")? {
            train.max_epochs = v;
        }
        if let Some(v) = e.get("optimizer.seed")? {
            train.seed = v;
        }
        if let Some(v) = e.get("optimizer.patience")? {
            train.patience = v;
        }
        if let Some(v) = e.get("optimizer.min_delta")? {
            train.min_delta = v;
        }
        if let Err(err) = train.validate() {
            return Err(ConfigError {
                line: None,
                key: Some("optimizer".into()),
                msg: err.to_string(),
            });
        }
        let model_seed = e.get("model.seed")?.unwrap_or(train.seed);

        let synthetic_keys: Vec<&str> = KEYS
            .iter()
            .copied()
            .filter(|k| k.starts_with("data.") && *k != "data.path" && *k != "data.train_fraction")
            .filter(|k| e.has(k))
            .collect();
        let data = match e.get::<String>("data.path")? {
            Some(path) => {
                if let Some(k) = synthetic_keys.first() {
                    return Err(ConfigError {
                        line: e.line(k),
                        key: Some((*k).into()),
                        msg: "cannot be combined with data.path".into(),
                    });
                }
                DataSource::File(PathBuf::from(path))
            }
            None => {
                let mut spec = DatasetSpec {
                    num_classes: backbone.num_classes,
                    ..DatasetSpec::default()
                };
                if let Some(v) = e.get("data.num_samples")? {
                    spec.num_samples = v;
                }
                if let Some(v) = e.get("data.input_res")? {
                    spec.input_res = v;
                }
                if let Some(v) = e.get("data.gt_res")? {
                    spec.gt_res = v;
                }
                if let Some(v) = e.get::<String>("data.shape_family")? {
                    spec.shape_family = v.parse::<ShapeFamily>().map_err(|err| ConfigError {
                        line: e.line("data.shape_family"),
                        key: Some("data.shape_family".into()),
                        msg: err.to_string(),
                    })?;
                }
                if let Some(v) = e.get("data.noise_level")? {
                    spec.noise_level = v;
                }
                if let Some(v) = e.get("data.max_shapes")? {
                    spec.max_shapes = v;
                }
                if let Some(v) = e.get("data.seed")? {
                    spec.seed = v;
                }
                if let Err(err) = spec.validate() {
                    return Err(ConfigError {
                        line: None,
                        key: Some("data".into()),
                        msg: err.to_string(),
                    });
                }
                if num_stages > spec.num_stages() {
                    return Err(ConfigError {
                        line: e.line("model.upscale_stages"),
                        key: Some("model.upscale_stages".into()),
                        msg: format!(
                            "{num_stages} stages would predict above the {}×{} ground truth",
                            spec.gt_res, spec.gt_res
                        ),
                    });
                }
                DataSource::Synthetic(spec)
            }
        };
        let train_fraction = e.get("data.train_fraction")?.unwrap_or(2.0 / 3.0);
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(ConfigError {
                line: e.line("data.train_fraction"),
                key: Some("data.train_fraction".into()),
                msg: format!("must lie strictly between 0 and 1, got {train_fraction}"),
            });
        }

        Ok(RunConfig {
            backbone,
            stack,
            model_seed,
            loss,
            train,
            data,
            train_fraction,
            report_path: e.get::<String>("eval.report_path")?.map(PathBuf::from),
            checkpoint: e.get::<String>("eval.checkpoint")?.map(PathBuf::from),
        })
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|err| ConfigError {
            line: None,
            key: None,
            msg: format!("cannot read {}: {err}", path.display()),
        })?;
        Self::parse(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_gives_defaults() {
        let c = RunConfig::parse("").unwrap();
        assert_eq!(c.backbone, BackboneConfig::default());
        assert_eq!(c.stack.num_stages, 0);
        assert_eq!(c.loss.stage_weights, vec![1.0]);
        assert_eq!(c.train, TrainConfig::default());
        assert!(matches!(c.data, DataSource::Synthetic(_)));
    }

    #[test]
    fn values_and_comments() {
        let c = RunConfig::parse(
            "# tiny run\nmodel.base_channels = 8\nmodel.depth=2 # inline\n\nmodel.upscale_stages = 2\n\
             loss.stage_weights = 1, 0.5, 2\noptimizer.kind = sgd\ndata.input_res = 16\ndata.gt_res = 64\n",
        )
        .unwrap();
        assert_eq!(c.backbone.base_channels, 8);
        assert_eq!(c.backbone.depth, 2);
        assert_eq!(c.loss.stage_weights, vec![1.0, 0.5, 2.0]);
        assert_eq!(c.train.optimizer, OptimizerKind::Sgd);
    }

    #[test]
    fn diagnostics_name_line_and_key() {
        let err = RunConfig::parse("model.depth = 2\noptimizer.lr = fast\n").unwrap_err();
        assert_eq!(err.line, Some(2));
        assert_eq!(err.key.as_deref(), Some("optimizer.lr"));

        let err = RunConfig::parse("\n\nmodel.colour = red").unwrap_err();
        assert_eq!((err.line, err.msg.as_str()), (Some(3), "unknown key"));

        let err = RunConfig::parse("model.depth = 2\nmodel.depth = 3").unwrap_err();
        assert_eq!(err.line, Some(2));

        let err = RunConfig::parse("just words").unwrap_err();
        assert_eq!(err.line, Some(1));
    }

    #[test]
    fn weight_count_must_match_stages() {
        let err = RunConfig::parse("model.upscale_stages = 2\nloss.stage_weights = 1, 1").unwrap_err();
        assert_eq!(err.key.as_deref(), Some("loss.stage_weights"));
    }

    #[test]
    fn path_excludes_synthetic_keys() {
        let err = RunConfig::parse("data.path = x.utsr\ndata.seed = 3").unwrap_err();
        assert_eq!(err.line, Some(2));
        let c = RunConfig::parse("data.path = x.utsr\ndata.train_fraction = 0.5").unwrap();
        assert_eq!(c.data, DataSource::File("x.utsr".into()));
    }

    #[test]
    fn too_many_stages_for_ground_truth() {
        let err = RunConfig::parse("model.upscale_stages = 3\ndata.input_res = 16\ndata.gt_res = 64").unwrap_err();
        assert_eq!(err.key.as_deref(), Some("model.upscale_stages"));
    }
}
