//! Train and eval pipelines writing their artifacts under one directory.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use allukan_core::model::Network;
use allukan_core::training::{
    checkpoint_load, checkpoint_save, evaluate, load_image_folder, synth_dataset, train,
    DataSource, Dataset, EpochMetrics, Evaluation, RunConfig, METRICS_HEADER,
};

use crate::CliError;

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.sakn";
pub const CONFIG_FILE: &str = "run.cfg";

/// Training and validation sets for a run.
pub fn load_data(cfg: &RunConfig) -> Result<(Dataset<f32>, Dataset<f32>), CliError> {
    let data = match &cfg.data.source {
        DataSource::Synth => synth_dataset(&cfg.synth_config())?,
        DataSource::Folder(root) => {
            let (h, w) = cfg.model.resolution;
            load_image_folder(
                &root.join("images"),
                &root.join("masks"),
                Some((h as u32, w as u32)),
                cfg.model.input_channels,
            )?
        }
    };
    Ok(data.split(cfg.data.split_seed, cfg.data.train_fraction)?)
}

pub fn create_dir(out: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))
}

pub fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub struct TrainOutcome {
    pub log: Vec<EpochMetrics>,
    pub checkpoint: PathBuf,
}

/// Trains, streaming `metrics.csv` epoch by epoch, then writes the
/// checkpoint and the resolved `run.cfg`.
pub fn run_train(
    cfg: &RunConfig,
    out: &Path,
    mut progress: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome, CliError> {
    create_dir(out)?;
    write_file(&out.join(CONFIG_FILE), &cfg.render())?;
    let (train_set, val_set) = load_data(cfg)?;
    let mut net = Network::<f32>::build(&cfg.model, cfg.train.seed)?;
    let metrics_path = out.join(METRICS_FILE);
    let file = File::create(&metrics_path).map_err(|e| CliError::io(&metrics_path, e))?;
    let mut csv = BufWriter::new(file);
    writeln!(csv, "{METRICS_HEADER}").map_err(|e| CliError::io(&metrics_path, e))?;
    let mut io_error = None;
    let log = train(&mut net, &train_set, &val_set, &cfg.train, |rows| {
        for r in rows {
            progress(r);
            if let Err(e) = writeln!(csv, "{}", r.csv_row()).and_then(|_| csv.flush()) {
                io_error.get_or_insert(e);
            }
        }
        Ok(())
    })?;
    if let Some(e) = io_error {
        return Err(CliError::io(&metrics_path, e));
    }
    let checkpoint = out.join(CHECKPOINT_FILE);
    checkpoint_save(&net, &checkpoint)?;
    Ok(TrainOutcome { log, checkpoint })
}

/// Validation loss and metrics of a saved checkpoint.
pub fn run_eval(cfg: &RunConfig, checkpoint: &Path) -> Result<Evaluation, CliError> {
    let (_, val_set) = load_data(cfg)?;
    let net = checkpoint_load::<f32>(&cfg.model, checkpoint)?;
    Ok(evaluate(&net, &val_set, &cfg.train)?)
}
