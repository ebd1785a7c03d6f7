//! Plain-text `key = value` configuration for the CLI.
//!
//! One assignment per line, `#` starts a comment, blank lines are ignored.
//! Every key is optional and falls back to [`CliConfig::default`]. Unknown
//! keys, repeated keys and malformed values are reported with their line
//! number. Optional counts take the word `all` for "no limit"; lists are
//! comma separated.

use std::fmt;
use std::str::FromStr;

use ride::imaging::{DeadLeavesConfig, NeighborhoodSpec};
use ride::ride::{HeadSizes, McgsmTrainConfig, TrainSchedule};
use ride::sampling::InpaintConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config line {}: {}", self.line, self.message)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq)]
pub struct CliConfig {
    pub neighborhood_width: usize,
    pub rows_above: usize,

    pub components: usize,
    pub scales: usize,
    pub features: usize,
    /// Hidden units per spatial LSTM layer; empty trains an MCGSM only.
    pub hidden: Vec<usize>,
    pub extended: bool,
    /// Start the recurrent model from the trained MCGSM instead of a fresh
    /// random head.
    pub warm_start: bool,

    pub mcgsm_iterations: usize,
    pub mcgsm_train_pairs: Option<usize>,
    pub mcgsm_val_pairs: Option<usize>,
    pub mcgsm_val_interval: usize,
    pub mcgsm_patience: usize,

    pub batch_size: usize,
    pub momentum: f64,
    pub lr_start: f64,
    pub lr_end: f64,
    pub epochs: usize,
    pub patch_sizes: Vec<usize>,
    pub finetune_iters: usize,
    pub finetune_pairs: Option<usize>,
    pub early_stop_patience: usize,
    pub batches_per_epoch: Option<usize>,
    pub val_patch: usize,

    pub sweeps: usize,
    pub block_size: usize,
    pub block_overlap: usize,
    pub local_window: usize,
    pub init_candidates: usize,
    pub flip_between_sweeps: bool,

    /// Zero scales the 256×256 disk count to the image area.
    pub disk_count: usize,
    pub radius_min: f64,
    pub radius_max: f64,
    pub radius_exponent: f64,
    pub intensity_min: f64,
    pub intensity_max: f64,
    pub background: f64,
}

impl Default for CliConfig {
    fn default() -> Self {
        let schedule = TrainSchedule::default();
        let inpaint = InpaintConfig::default();
        let leaves = DeadLeavesConfig::default();
        CliConfig {
            neighborhood_width: 5,
            rows_above: 2,
            components: 32,
            scales: 1,
            features: 32,
            hidden: vec![32],
            extended: false,
            warm_start: false,
            mcgsm_iterations: 3000,
            mcgsm_train_pairs: Some(200_000),
            mcgsm_val_pairs: Some(50_000),
            mcgsm_val_interval: 25,
            mcgsm_patience: 4,
            batch_size: schedule.batch_size,
            momentum: schedule.momentum,
            lr_start: schedule.lr_start,
            lr_end: schedule.lr_end,
            epochs: schedule.epochs,
            patch_sizes: schedule.patch_sizes,
            finetune_iters: schedule.finetune_iters,
            finetune_pairs: schedule.finetune_pairs,
            early_stop_patience: schedule.early_stop_patience,
            batches_per_epoch: schedule.batches_per_epoch,
            val_patch: schedule.val_patch,
            sweeps: inpaint.sweeps,
            block_size: inpaint.block_size,
            block_overlap: inpaint.block_overlap,
            local_window: inpaint.local_window,
            init_candidates: inpaint.init_candidates,
            flip_between_sweeps: inpaint.flip_between_sweeps,
            disk_count: 0,
            radius_min: leaves.radius_min,
            radius_max: leaves.radius_max,
            radius_exponent: leaves.radius_exponent,
            intensity_min: leaves.intensity_range.0,
            intensity_max: leaves.intensity_range.1,
            background: leaves.background,
        }
    }
}

fn parse_scalar<T: FromStr>(value: &str) -> Result<T, String>
where
    T::Err: fmt::Display,
{
    value.parse::<T>().map_err(|e| format!("invalid value {value:?}: {e}"))
}

fn parse_f64(value: &str) -> Result<f64, String> {
    let v: f64 = parse_scalar(value)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("value {value:?} is not finite"))
    }
}

fn parse_bool(value: &str) -> Result<bool, String> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("expected true or false, found {value:?}")),
    }
}

fn parse_limit(value: &str) -> Result<Option<usize>, String> {
    if value == "all" {
        Ok(None)
    } else {
        parse_scalar(value).map(Some)
    }
}

fn parse_list(value: &str) -> Result<Vec<usize>, String> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse_scalar(v.trim())).collect()
}

fn show_limit(v: Option<usize>) -> String {
    v.map_or_else(|| "all".to_string(), |n| n.to_string())
}

fn show_list(v: &[usize]) -> String {
    v.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(",")
}

macro_rules! keys {
    ($( $key:ident : $parse:expr , $show:expr ; )*) => {
        /// Every recognized key, in the order [`CliConfig::render`] writes them.
        pub const KEYS: &[&str] = &[$(stringify!($key)),*];

        impl CliConfig {
            fn assign(&mut self, key: &str, value: &str) -> Result<(), String> {
                match key {
                    $(stringify!($key) => self.$key = ($parse)(value)?,)*
                    _ => return Err(format!("unknown key {key:?}")),
                }
                Ok(())
            }

            /// Writes every key with its current value; [`CliConfig::parse`]
            /// reads the output back to an equal config.
            pub fn render(&self) -> String {
                let mut out = String::new();
                $(
                    out.push_str(stringify!($key));
                    out.push_str(" = ");
                    out.push_str(&($show)(&self.$key));
                    out.push('\n');
                )*
                out
            }
        }
    };
}

keys! {
    neighborhood_width: parse_scalar, |v: &usize| v.to_string();
    rows_above: parse_scalar, |v: &usize| v.to_string();
    components: parse_scalar, |v: &usize| v.to_string();
    scales: parse_scalar, |v: &usize| v.to_string();
    features: parse_scalar, |v: &usize| v.to_string();
    hidden: parse_list, |v: &Vec<usize>| show_list(v);
    extended: parse_bool, |v: &bool| v.to_string();
    warm_start: parse_bool, |v: &bool| v.to_string();
    mcgsm_iterations: parse_scalar, |v: &usize| v.to_string();
    mcgsm_train_pairs: parse_limit, |v: &Option<usize>| show_limit(*v);
    mcgsm_val_pairs: parse_limit, |v: &Option<usize>| show_limit(*v);
    mcgsm_val_interval: parse_scalar, |v: &usize| v.to_string();
    mcgsm_patience: parse_scalar, |v: &usize| v.to_string();
    batch_size: parse_scalar, |v: &usize| v.to_string();
    momentum: parse_f64, |v: &f64| format!("{v:?}");
    lr_start: parse_f64, |v: &f64| format!("{v:?}");
    lr_end: parse_f64, |v: &f64| format!("{v:?}");
    epochs: parse_scalar, |v: &usize| v.to_string();
    patch_sizes: parse_list, |v: &Vec<usize>| show_list(v);
    finetune_iters: parse_scalar, |v: &usize| v.to_string();
    finetune_pairs: parse_limit, |v: &Option<usize>| show_limit(*v);
    early_stop_patience: parse_scalar, |v: &usize| v.to_string();
    batches_per_epoch: parse_limit, |v: &Option<usize>| show_limit(*v);
    val_patch: parse_scalar, |v: &usize| v.to_string();
    sweeps: parse_scalar, |v: &usize| v.to_string();
    block_size: parse_scalar, |v: &usize| v.to_string();
    block_overlap: parse_scalar, |v: &usize| v.to_string();
    local_window: parse_scalar, |v: &usize| v.to_string();
    init_candidates: parse_scalar, |v: &usize| v.to_string();
    flip_between_sweeps: parse_bool, |v: &bool| v.to_string();
    disk_count: parse_scalar, |v: &usize| v.to_string();
    radius_min: parse_f64, |v: &f64| format!("{v:?}");
    radius_max: parse_f64, |v: &f64| format!("{v:?}");
    radius_exponent: parse_f64, |v: &f64| format!("{v:?}");
    intensity_min: parse_f64, |v: &f64| format!("{v:?}");
    intensity_max: parse_f64, |v: &f64| format!("{v:?}");
    background: parse_f64, |v: &f64| format!("{v:?}");
}

impl CliConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = CliConfig::default();
        let mut seen: Vec<&str> = Vec::new();
        for (k, raw) in text.lines().enumerate() {
            let line = k + 1;
            let err = |message: String| ConfigError { line, message };
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, found {content:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            if seen.contains(&key) {
                return Err(err(format!("key {key:?} given twice")));
            }
            cfg.assign(key, value).map_err(err)?;
            seen.push(key);
        }
        Ok(cfg)
    }

    pub fn neighborhood(&self) -> ride::Result<NeighborhoodSpec> {
        NeighborhoodSpec::new(self.neighborhood_width, self.rows_above)
    }

    pub fn head_sizes(&self) -> HeadSizes {
        HeadSizes {
            components: self.components,
            scales: self.scales,
            features: self.features,
        }
    }

    pub fn mcgsm(&self) -> ride::Result<McgsmTrainConfig> {
        Ok(McgsmTrainConfig {
            neighborhood: self.neighborhood()?,
            components: self.components,
            scales: self.scales,
            features: self.features,
            max_iterations: self.mcgsm_iterations,
            train_pairs: self.mcgsm_train_pairs,
            val_pairs: self.mcgsm_val_pairs,
            val_interval: self.mcgsm_val_interval,
            patience: self.mcgsm_patience,
        })
    }

    pub fn schedule(&self) -> TrainSchedule {
        TrainSchedule {
            batch_size: self.batch_size,
            momentum: self.momentum,
            lr_start: self.lr_start,
            lr_end: self.lr_end,
            epochs: self.epochs,
            patch_sizes: self.patch_sizes.clone(),
            finetune_iters: self.finetune_iters,
            finetune_pairs: self.finetune_pairs,
            early_stop_patience: self.early_stop_patience,
            batches_per_epoch: self.batches_per_epoch,
            val_patch: self.val_patch,
        }
    }

    pub fn inpaint(&self) -> InpaintConfig {
        InpaintConfig {
            sweeps: self.sweeps,
            block_size: self.block_size,
            block_overlap: self.block_overlap,
            local_window: self.local_window,
            init_candidates: self.init_candidates,
            flip_between_sweeps: self.flip_between_sweeps,
        }
    }

    pub fn dead_leaves(&self, size: usize) -> DeadLeavesConfig {
        let base = DeadLeavesConfig::for_size(size);
        DeadLeavesConfig {
            disk_count: if self.disk_count == 0 { base.disk_count } else { self.disk_count },
            radius_min: self.radius_min,
            radius_max: self.radius_max,
            radius_exponent: self.radius_exponent,
            intensity_range: (self.intensity_min, self.intensity_max),
            background: self.background,
            ..base
        }
    }
}
