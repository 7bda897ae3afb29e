//! Chunk-size benchmark: transient basis memory, saved activations and step
//! time per chunk, with output equality across chunk sizes.

use std::time::Instant;

use allukan_core::layers::{Layer, SakanLayer, SplineOptions};
use allukan_core::model::{ModelConfig, Network};
use allukan_core::training::{synth_dataset, SynthConfig};
use allukan_core::{Graph, Result, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::report::{Check, VerificationReport};

pub const DEFAULT_CHUNKS: [usize; 4] = [8, 32, 64, 512];
pub const BENCH_HEADER: &str =
    "chunk,peak_transient_bytes,saved_bytes,mean_step_ms,max_output_diff";
/// Allowed relative step-time increase between consecutive chunk sizes.
pub const TIME_NOISE: f64 = 0.10;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub chunk: usize,
    pub peak_transient_bytes: usize,
    pub saved_bytes: usize,
    pub mean_step_ms: f64,
    pub max_output_diff: f64,
}

impl BenchRow {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:.3},{:e}",
            self.chunk,
            self.peak_transient_bytes,
            self.saved_bytes,
            self.mean_step_ms,
            self.max_output_diff
        )
    }
}

pub struct Bench {
    pub rows: Vec<BenchRow>,
    pub report: VerificationReport,
}

impl Bench {
    pub fn to_csv(&self) -> String {
        let mut s = format!("{BENCH_HEADER}\n");
        for r in &self.rows {
            s.push_str(&r.csv_row());
            s.push('\n');
        }
        s
    }
}

/// Peak transient basis bytes of one SaKAN layer's aggregated path.
pub fn layer_transient_bytes(
    batch: usize,
    n_in: usize,
    chunk: usize,
    grad_free: bool,
) -> Result<usize> {
    let opts = SplineOptions {
        grad_free,
        chunk,
        ..SplineOptions::default()
    };
    let layer = SakanLayer::<f32>::new(n_in, 4, &opts, &mut ChaCha8Rng::seed_from_u64(0));
    let g = Graph::new();
    layer.forward(g.constant(Tensor::zeros([batch, n_in])))?;
    Ok(g.peak_transient_bytes())
}

/// Runs `steps` forward/backward passes per chunk size on one synthetic
/// batch, starting every chunk size from the same weights.
pub fn bench_chunks(
    config: &ModelConfig,
    chunks: &[usize],
    steps: usize,
    batch: usize,
    seed: u64,
) -> Result<Bench> {
    let data = synth_dataset::<f32>(&SynthConfig {
        samples: batch,
        resolution: config.resolution,
        channels: config.input_channels,
        seed,
        ..SynthConfig::default()
    })?;
    let images = data.batch(&(0..batch).collect::<Vec<_>>())?.images;
    let mut net = Network::<f32>::build(config, seed)?;
    let mut rows = Vec::new();
    let mut reference: Option<Vec<f32>> = None;
    for &chunk in chunks {
        net.set_chunk(chunk)?;
        let (mut peak, mut saved, mut seconds) = (0, 0, 0.0);
        let mut diff = 0.0f64;
        for step in 0..steps.max(1) {
            let start = Instant::now();
            let g = Graph::new();
            let y = net.forward(g.constant(images.clone()))?;
            g.backward(y.mean_all())?;
            seconds += start.elapsed().as_secs_f64();
            peak = peak.max(g.peak_transient_bytes());
            saved = saved.max(g.saved_activation_bytes());
            if step == 0 {
                let out = y.value().data().to_vec();
                match &reference {
                    Some(r) => {
                        diff = r
                            .iter()
                            .zip(&out)
                            .map(|(a, b)| (a - b).abs() as f64)
                            .fold(0.0, f64::max);
                    }
                    None => reference = Some(out),
                }
            }
        }
        rows.push(BenchRow {
            chunk,
            peak_transient_bytes: peak,
            saved_bytes: saved,
            mean_step_ms: 1e3 * seconds / steps.max(1) as f64,
            max_output_diff: diff,
        });
    }

    let mut report = VerificationReport::default();
    let worst = rows.iter().map(|r| r.max_output_diff).fold(0.0, f64::max);
    report.push(Check::new(
        "outputs_equal_across_chunks",
        worst <= 1e-6,
        format!("{worst:e}"),
        "1e-6",
        "network outputs do not depend on the chunk size",
    ));
    let monotone = rows
        .windows(2)
        .all(|w| w[0].peak_transient_bytes <= w[1].peak_transient_bytes);
    report.push(Check::new(
        "transient_bytes_monotone",
        monotone,
        rows.iter()
            .map(|r| r.peak_transient_bytes.to_string())
            .collect::<Vec<_>>()
            .join(" "),
        "non-decreasing",
        "peak transient basis memory grows with the chunk size",
    ));
    let timely = rows
        .windows(2)
        .all(|w| w[1].mean_step_ms <= w[0].mean_step_ms * (1.0 + TIME_NOISE));
    report.push(Check::new(
        "step_time_non_increasing",
        timely,
        rows.iter()
            .map(|r| format!("{:.1}", r.mean_step_ms))
            .collect::<Vec<_>>()
            .join(" "),
        format!("non-increasing within {:.0}%", TIME_NOISE * 100.0),
        "step time falls or plateaus as the chunk size grows",
    ));
    if let (Some(first), Some(last)) = (chunks.first(), chunks.last()) {
        let (b, n_in) = (16, last.max(first).max(&1) * 2);
        let lo = layer_transient_bytes(b, n_in, *first, true)?;
        let hi = layer_transient_bytes(b, n_in, *last, true)?;
        let ratio = lo as f64 / hi as f64;
        let want = *first as f64 / *last as f64;
        report.push(Check::new(
            "layer_transient_ratio",
            (ratio - want).abs() < 1e-12,
            format!("{lo}/{hi} = {ratio:.6}"),
            format!("{want:.6}"),
            "a single aggregated layer's transient basis buffer is proportional to the chunk size",
        ));
    }
    Ok(Bench { rows, report })
}
