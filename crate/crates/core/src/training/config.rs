//! `key = value` run configuration with `[model]`, `[train]` and `[data]`
//! sections and `#` comments. `[model] preset` selects the base model and
//! the remaining model keys override it.

use std::path::PathBuf;
use std::str::FromStr;

use ini::Ini;

use super::data::SynthConfig;
use crate::error::{Error, Result};
use crate::model::{preset, ModelConfig};
use crate::spline::SplineSpec;

/// Optimization recipe.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainRecipe {
    pub batch_size: usize,
    pub lr_init: f64,
    pub lr_min: f64,
    pub epochs: usize,
    pub seed: u64,
    pub w_bce: f64,
    pub w_dice: f64,
    /// Worker threads assembling batches; 1 assembles them inline.
    pub loader_threads: usize,
}

impl Default for TrainRecipe {
    fn default() -> Self {
        TrainRecipe {
            batch_size: 8,
            lr_init: 1e-4,
            lr_min: 1e-5,
            epochs: 400,
            seed: 2981,
            w_bce: 1.0,
            w_dice: 1.0,
            loader_threads: 1,
        }
    }
}

impl TrainRecipe {
    /// Desk-scale recipe: 50 epochs and a larger initial learning rate.
    pub fn desk() -> Self {
        TrainRecipe {
            epochs: 50,
            lr_init: 1e-3,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 || self.loader_threads == 0 {
            return Err(Error::Config(
                "batch_size, epochs and threads must be at least 1".into(),
            ));
        }
        if !(self.lr_min >= 0.0 && self.lr_min <= self.lr_init && self.lr_init.is_finite()) {
            return Err(Error::Config(format!(
                "need 0 <= lr_min <= lr_init, got lr_min {} and lr_init {}",
                self.lr_min, self.lr_init
            )));
        }
        if !(self.w_bce >= 0.0 && self.w_dice >= 0.0) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        Ok(())
    }
}

/// Where samples come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synth,
    /// Directory with `images/` and `masks/` subdirectories.
    Folder(PathBuf),
}

impl FromStr for DataSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "synth" => Ok(DataSource::Synth),
            _ => match s.strip_prefix("folder:") {
                Some(p) if !p.is_empty() => Ok(DataSource::Folder(PathBuf::from(p))),
                _ => Err(Error::Config(format!(
                    "data source `{s}` is not `synth` or `folder:<path>`"
                ))),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub source: DataSource,
    /// Synthetic-data settings; resolution and channels are taken from the
    /// model.
    pub synth: SynthConfig,
    pub split_seed: u64,
    pub train_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: DataSource::Synth,
            synth: SynthConfig::default(),
            split_seed: 2981,
            train_fraction: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub preset: String,
    pub model: ModelConfig,
    pub train: TrainRecipe,
    pub data: DataConfig,
}

impl RunConfig {
    /// Preset model with the desk recipe for `_desk` presets and the full
    /// recipe otherwise.
    pub fn from_preset(name: &str) -> Result<Self> {
        let model = preset(name)?;
        let train = if name.ends_with("_desk") {
            TrainRecipe::desk()
        } else {
            TrainRecipe::default()
        };
        Ok(RunConfig {
            preset: name.to_string(),
            model,
            train,
            data: DataConfig::default(),
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let ini =
            Ini::load_from_str(&strip_comments(text)).map_err(|e| Error::Config(e.to_string()))?;
        for (section, _) in ini.iter() {
            match section {
                Some("model" | "train" | "data") => {}
                None if ini.general_section().is_empty() => {}
                None => return Err(Error::Config("keys must appear inside a section".into())),
                Some(other) => return Err(Error::Config(format!("unknown section [{other}]"))),
            }
        }
        let empty = ini::Properties::new();
        let model = ini.section(Some("model")).unwrap_or(&empty);
        let name = model.get("preset").unwrap_or("all_ukan_desk");
        let mut cfg = RunConfig::from_preset(name)?;
        for (k, v) in model.iter() {
            cfg.set_model(k, v)?;
        }
        for (k, v) in ini.section(Some("train")).unwrap_or(&empty).iter() {
            cfg.set_train(k, v)?;
        }
        for (k, v) in ini.section(Some("data")).unwrap_or(&empty).iter() {
            cfg.set_data(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if !(self.data.train_fraction > 0.0 && self.data.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train_fraction must lie in (0, 1), got {}",
                self.data.train_fraction
            )));
        }
        if self.data.synth.samples < 2 {
            return Err(Error::Config("need at least 2 samples to split".into()));
        }
        Ok(())
    }

    /// Text form that [`RunConfig::parse`] reads back to an equal config.
    pub fn render(&self) -> String {
        let (m, t, d) = (&self.model, &self.train, &self.data);
        let source = match &d.source {
            DataSource::Synth => "synth".to_string(),
            DataSource::Folder(p) => format!("folder:{}", p.display()),
        };
        let channels: Vec<String> = m.stage_channels.iter().map(usize::to_string).collect();
        format!(
            "[model]\npreset = {}\ninput_channels = {}\nnum_classes = {}\nstage_channels = {}\n\
             conv_kind = {}\nmlp_kind = {}\ngrad_free = {}\nchunk = {}\nuse_lambda = {}\n\
             tokenized_block_depth = {}\nresolution = {}x{}\ngrid_size = {}\nspline_order = {}\n\n\
             [train]\nbatch_size = {}\nlr_init = {}\nlr_min = {}\nepochs = {}\nseed = {}\n\
             w_bce = {}\nw_dice = {}\nthreads = {}\n\n\
             [data]\nsource = {}\nsamples = {}\nnoise_std = {}\njitter = {}\nsynth_seed = {}\n\
             split_seed = {}\ntrain_fraction = {}\n",
            self.preset,
            m.input_channels,
            m.num_classes,
            channels.join(", "),
            m.conv_kind.as_str(),
            m.mlp_kind.as_str(),
            m.grad_free,
            m.chunk,
            m.use_lambda,
            m.tokenized_block_depth,
            m.resolution.0,
            m.resolution.1,
            m.spline.grid_size,
            m.spline.order,
            t.batch_size,
            t.lr_init,
            t.lr_min,
            t.epochs,
            t.seed,
            t.w_bce,
            t.w_dice,
            t.loader_threads,
            source,
            d.synth.samples,
            d.synth.noise_std,
            d.synth.jitter,
            d.synth.seed,
            d.split_seed,
            d.train_fraction,
        )
    }

    /// Seeds initialization, shuffling, synthetic data and the split.
    pub fn set_seed(&mut self, seed: u64) {
        self.train.seed = seed;
        self.data.synth.seed = seed;
        self.data.split_seed = seed;
    }

    /// Synthetic-data settings bound to the model's input geometry.
    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            resolution: self.model.resolution,
            channels: self.model.input_channels,
            ..self.data.synth.clone()
        }
    }

    fn set_model(&mut self, key: &str, v: &str) -> Result<()> {
        let m = &mut self.model;
        match key {
            "preset" => {}
            "input_channels" => m.input_channels = parse(key, v)?,
            "num_classes" => m.num_classes = parse(key, v)?,
            "stage_channels" => {
                m.stage_channels = v
                    .split(',')
                    .map(|s| parse(key, s.trim()))
                    .collect::<Result<_>>()?
            }
            "conv_kind" => m.conv_kind = v.parse()?,
            "mlp_kind" => m.mlp_kind = v.parse()?,
            "grad_free" => m.grad_free = parse(key, v)?,
            "grad_mode" => m.grad_free = parse_grad_mode(v)?,
            "chunk" => m.chunk = parse(key, v)?,
            "use_lambda" => m.use_lambda = parse(key, v)?,
            "tokenized_block_depth" => m.tokenized_block_depth = parse(key, v)?,
            "resolution" => m.resolution = parse_resolution(v)?,
            "grid_size" => {
                m.spline =
                    SplineSpec::new(parse(key, v)?, m.spline.order, m.spline.lo, m.spline.hi)?
            }
            "spline_order" => {
                m.spline =
                    SplineSpec::new(m.spline.grid_size, parse(key, v)?, m.spline.lo, m.spline.hi)?
            }
            _ => return Err(unknown("model", key)),
        }
        Ok(())
    }

    fn set_train(&mut self, key: &str, v: &str) -> Result<()> {
        let t = &mut self.train;
        match key {
            "batch_size" => t.batch_size = parse(key, v)?,
            "lr_init" => t.lr_init = parse(key, v)?,
            "lr_min" => t.lr_min = parse(key, v)?,
            "epochs" => t.epochs = parse(key, v)?,
            "seed" => t.seed = parse(key, v)?,
            "w_bce" => t.w_bce = parse(key, v)?,
            "w_dice" => t.w_dice = parse(key, v)?,
            "threads" => t.loader_threads = parse(key, v)?,
            _ => return Err(unknown("train", key)),
        }
        Ok(())
    }

    fn set_data(&mut self, key: &str, v: &str) -> Result<()> {
        let d = &mut self.data;
        match key {
            "source" => d.source = v.parse()?,
            "samples" => d.synth.samples = parse(key, v)?,
            "noise_std" => d.synth.noise_std = parse(key, v)?,
            "jitter" => d.synth.jitter = parse(key, v)?,
            "synth_seed" => d.synth.seed = parse(key, v)?,
            "split_seed" => d.split_seed = parse(key, v)?,
            "train_fraction" => d.train_fraction = parse(key, v)?,
            _ => return Err(unknown("data", key)),
        }
        Ok(())
    }
}

/// Drops `#` comments, whole-line or after whitespace.
fn strip_comments(text: &str) -> String {
    text.lines()
        .map(|line| {
            let cut = line
                .char_indices()
                .find(|&(i, c)| c == '#' && (i == 0 || line[..i].ends_with(char::is_whitespace)))
                .map_or(line.len(), |(i, _)| i);
            line[..cut].trim_end()
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn unknown(section: &str, key: &str) -> Error {
    Error::Config(format!("unknown key `{key}` in [{section}]"))
}

fn parse<V: FromStr>(key: &str, v: &str) -> Result<V> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{v}` for `{key}`")))
}

pub fn parse_grad_mode(v: &str) -> Result<bool> {
    match v.trim() {
        "free" => Ok(true),
        "full" => Ok(false),
        other => Err(Error::Config(format!(
            "grad mode `{other}` is not `full` or `free`"
        ))),
    }
}

/// `N` or `HxW`.
pub fn parse_resolution(v: &str) -> Result<(usize, usize)> {
    let v = v.trim();
    match v.split_once('x') {
        Some((h, w)) => Ok((parse("resolution", h)?, parse("resolution", w)?)),
        None => {
            let n = parse("resolution", v)?;
            Ok((n, n))
        }
    }
}
