//! Metrics files and smoothed cross-seed learning curves.

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::trainer::EpisodeMetrics;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CurvePoint {
    pub episode: usize,
    pub mean: f64,
    /// Population standard deviation across seeds.
    pub std: f64,
}

/// One fortieth of the run, at least one episode.
pub fn default_window(episodes: usize) -> usize {
    (episodes / 40).max(1)
}

/// Trailing moving average; early points average what is available.
pub fn smooth(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut sum = 0.0;
    let mut out = Vec::with_capacity(values.len());
    for (i, v) in values.iter().enumerate() {
        sum += v;
        if i >= window {
            sum -= values[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}

/// Extrinsic returns of each run.
pub fn returns(runs: &[(u64, Vec<EpisodeMetrics>)]) -> Vec<Vec<f64>> {
    runs.iter()
        .map(|(_, m)| m.iter().map(|e| e.extrinsic_return).collect())
        .collect()
}

/// Smooths each stream, then takes the mean and spread across streams at
/// each episode. Streams must be non-empty and equally long.
pub fn mean_curve(streams: &[Vec<f64>], window: usize) -> Result<Vec<CurvePoint>> {
    let len = streams.first().map(Vec::len).unwrap_or(0);
    if len == 0 {
        return Err(Error::Format("no metric streams to aggregate".into()));
    }
    if let Some(bad) = streams.iter().find(|s| s.len() != len) {
        return Err(Error::dims("metric stream length", len, bad.len()));
    }
    let smoothed: Vec<Vec<f64>> = streams.iter().map(|s| smooth(s, window)).collect();
    let n = smoothed.len() as f64;
    Ok((0..len)
        .map(|i| {
            let mean = smoothed.iter().map(|s| s[i]).sum::<f64>() / n;
            let var = smoothed.iter().map(|s| (s[i] - mean).powi(2)).sum::<f64>() / n;
            CurvePoint {
                episode: i,
                mean,
                std: var.sqrt(),
            }
        })
        .collect())
}

pub fn write_metrics_csv(path: &Path, metrics: &[EpisodeMetrics]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for m in metrics {
        w.serialize(m)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_curve_csv(path: &Path, curve: &[CurvePoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for p in curve {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `metrics_seed<k>.csv` for every run and `curve_mean.csv` for the
/// smoothed aggregate.
pub fn emit_curves(dir: &Path, runs: &[(u64, Vec<EpisodeMetrics>)], window: usize) -> Result<Vec<CurvePoint>> {
    let curve = mean_curve(&returns(runs), window)?;
    std::fs::create_dir_all(dir)?;
    for (seed, metrics) in runs {
        write_metrics_csv(&dir.join(format!("metrics_seed{seed}.csv")), metrics)?;
    }
    write_curve_csv(&dir.join("curve_mean.csv"), &curve)?;
    Ok(curve)
}
