//! Benchmark and parameter-sweep harness over generated scenes.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::estimate::{run_pipeline, FeatureSource, Mode, StageTimings};
use crate::eval::{aggregate, score_scene, AggregateMetrics};
use crate::featnet::NetParams;
use crate::geom::LabeledScene;
use crate::scenegen::{generate_batch, GenConfig};

pub fn feature_source(mode: Mode, params: Option<&NetParams>) -> Result<FeatureSource<'_>> {
    Ok(match mode {
        Mode::Deep => FeatureSource::Deep(params.ok_or(Error::MissingModel)?),
        Mode::Beta => FeatureSource::Beta,
        Mode::Oracle => FeatureSource::Oracle,
    })
}

/// The `count` evaluation scenes of `cfg`.
pub fn test_scenes(cfg: &RunConfig, count: usize) -> Result<Vec<LabeledScene>> {
    generate_batch(&cfg.test_gen(), count)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRow {
    pub index: usize,
    pub scene_seed: u64,
    pub num_gt: usize,
    pub num_pred: usize,
    pub num_retained: usize,
    pub m_selected: usize,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingSummary {
    pub scenes: usize,
    pub wall_seconds: f64,
    /// Per-stage means over scenes.
    pub mean: StageTimings,
}

#[derive(Debug, Clone)]
pub struct BenchmarkReport {
    pub metrics: AggregateMetrics,
    pub rows: Vec<SceneRow>,
    pub timing: TimingSummary,
}

pub fn benchmark_on(cfg: &RunConfig, params: Option<&NetParams>, scenes: &[LabeledScene]) -> Result<BenchmarkReport> {
    cfg.validate()?;
    if scenes.is_empty() {
        return Err(Error::EmptyBenchmark);
    }
    let source = feature_source(cfg.mode, params)?;
    let pipeline = cfg.pipeline();
    let start = Instant::now();
    let outcomes: Vec<_> = scenes
        .par_iter()
        .enumerate()
        .map(|(i, scene)| {
            let res = run_pipeline(scene, source, &pipeline, cfg.scene_pipeline_seed(i as u64))?;
            let m = score_scene(&res.transforms, &scene.gt_transforms, &cfg.thresholds);
            let row = SceneRow {
                index: i,
                scene_seed: scene.meta.seed,
                num_gt: m.num_gt,
                num_pred: m.num_pred,
                num_retained: res.num_retained,
                m_selected: res.m_selected,
                recall: m.recall,
                precision: m.precision,
                f1: m.f1,
            };
            Ok((m, row, res.timings))
        })
        .collect::<Result<_>>()?;
    let wall_seconds = start.elapsed().as_secs_f64();
    let k = outcomes.len() as f64;
    let mut mean = StageTimings::default();
    for (_, _, t) in &outcomes {
        mean.spatial_ms += t.spatial_ms / k;
        mean.features_ms += t.features_ms / k;
        mean.similarity_ms += t.similarity_ms / k;
        mean.prune_ms += t.prune_ms / k;
        mean.cluster_ms += t.cluster_ms / k;
        mean.ransac_ms += t.ransac_ms / k;
        mean.total_ms += t.total_ms / k;
    }
    let (metrics, rows): (Vec<_>, Vec<_>) = outcomes.into_iter().map(|(m, r, _)| (m, r)).unzip();
    Ok(BenchmarkReport {
        metrics: aggregate(metrics)?,
        rows,
        timing: TimingSummary { scenes: scenes.len(), wall_seconds, mean },
    })
}

pub fn benchmark(cfg: &RunConfig, params: Option<&NetParams>) -> Result<BenchmarkReport> {
    if cfg.num_scenes == 0 {
        return Err(Error::EmptyBenchmark);
    }
    if cfg.mode == Mode::Deep && params.is_none() {
        return Err(Error::MissingModel);
    }
    let scenes = test_scenes(cfg, cfg.num_scenes)?;
    benchmark_on(cfg, params, &scenes)
}

#[derive(Debug, Serialize)]
struct MetricsFile<'a> {
    mr: f64,
    mp: f64,
    mf: f64,
    num_scenes: usize,
    config: &'a RunConfig,
    per_scene: &'a [crate::eval::SceneMetrics],
}

/// `metrics.json` (deterministic), `scenes.csv` and `timing.json` in `dir`.
pub fn write_benchmark_artifacts(report: &BenchmarkReport, cfg: &RunConfig, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let m = &report.metrics;
    let file = MetricsFile { mr: m.mr, mp: m.mp, mf: m.mf, num_scenes: m.num_scenes, config: cfg, per_scene: &m.per_scene };
    std::fs::write(dir.join("metrics.json"), serde_json::to_string_pretty(&file)? + "\n")?;
    let mut csv = std::io::BufWriter::new(std::fs::File::create(dir.join("scenes.csv"))?);
    writeln!(csv, "index,scene_seed,num_gt,num_pred,num_retained,m_selected,recall,precision,f1")?;
    for r in &report.rows {
        writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{}",
            r.index, r.scene_seed, r.num_gt, r.num_pred, r.num_retained, r.m_selected, r.recall, r.precision, r.f1
        )?;
    }
    csv.flush()?;
    std::fs::write(dir.join("timing.json"), serde_json::to_string_pretty(&report.timing)? + "\n")?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    TauS,
    TauN,
    RansacIterations,
}

impl std::str::FromStr for SweepParam {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tau_s" => Ok(Self::TauS),
            "tau_n" => Ok(Self::TauN),
            "ransac_iterations" => Ok(Self::RansacIterations),
            other => Err(Error::InvalidConfig(format!("unknown sweep parameter {other:?}"))),
        }
    }
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            Self::TauS => "tau_s",
            Self::TauN => "tau_n",
            Self::RansacIterations => "ransac_iterations",
        }
    }

    pub fn apply(self, cfg: &RunConfig, value: f64) -> Result<RunConfig> {
        let mut out = cfg.clone();
        let as_count = || {
            if value >= 1.0 && value.fract() == 0.0 {
                Ok(value as usize)
            } else {
                Err(Error::InvalidConfig(format!("{} needs a positive integer, got {value}", self.name())))
            }
        };
        match self {
            Self::TauS => out.consistency.tau_s = value,
            Self::TauN => out.prune.tau_n = as_count()?,
            Self::RansacIterations => out.ransac.iterations = as_count()?,
        }
        out.validate()?;
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub mr: f64,
    pub mp: f64,
    pub mf: f64,
}

/// One benchmark per value over the same scenes and model.
pub fn sweep(cfg: &RunConfig, params: Option<&NetParams>, param: SweepParam, values: &[f64]) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::InvalidConfig("sweep needs at least one value".into()));
    }
    let configs: Vec<RunConfig> = values.iter().map(|&v| param.apply(cfg, v)).collect::<Result<_>>()?;
    if cfg.num_scenes == 0 {
        return Err(Error::EmptyBenchmark);
    }
    let scenes = test_scenes(cfg, cfg.num_scenes)?;
    values
        .iter()
        .zip(&configs)
        .map(|(&value, c)| {
            let m = benchmark_on(c, params, &scenes)?.metrics;
            Ok(SweepRow { value, mr: m.mr, mp: m.mp, mf: m.mf })
        })
        .collect()
}

pub fn write_sweep_csv(rows: &[SweepRow], param: SweepParam, path: impl AsRef<Path>) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{},mr,mp,mf", param.name())?;
    for r in rows {
        writeln!(out, "{},{},{},{}", r.value, r.mr, r.mp, r.mf)?;
    }
    out.flush()?;
    Ok(())
}

/// Generator preset of the hard-outlier benchmark.
pub fn hard_outlier_gen(base: &GenConfig) -> GenConfig {
    GenConfig { hard_outlier_fraction: 0.5, ..base.clone() }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> RunConfig {
        RunConfig { mode: Mode::Beta, num_scenes: 3, ..RunConfig::default() }
    }

    #[test]
    fn empty_benchmark_is_an_error() {
        let cfg = RunConfig { num_scenes: 0, ..small() };
        assert!(matches!(benchmark(&cfg, None), Err(Error::EmptyBenchmark)));
    }

    #[test]
    fn deep_mode_needs_a_model() {
        let cfg = RunConfig { mode: Mode::Deep, ..small() };
        assert!(matches!(benchmark(&cfg, None), Err(Error::MissingModel)));
    }

    #[test]
    fn single_value_sweep_equals_benchmark() {
        let cfg = small();
        let rows = sweep(&cfg, None, SweepParam::TauN, &[10.0]).unwrap();
        let m = benchmark(&cfg, None).unwrap().metrics;
        assert_eq!(rows, vec![SweepRow { value: 10.0, mr: m.mr, mp: m.mp, mf: m.mf }]);
    }

    #[test]
    fn sweep_rejects_fractional_counts() {
        assert!(SweepParam::TauN.apply(&small(), 2.5).is_err());
        assert!(SweepParam::TauS.apply(&small(), 1.5).is_err());
        assert_eq!(SweepParam::RansacIterations.apply(&small(), 500.0).unwrap().ransac.iterations, 500);
    }

    #[test]
    fn artifacts_are_byte_identical_across_runs() {
        let cfg = small();
        let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
        for d in &dirs {
            write_benchmark_artifacts(&benchmark(&cfg, None).unwrap(), &cfg, d.path()).unwrap();
        }
        for f in ["metrics.json", "scenes.csv"] {
            assert_eq!(std::fs::read(dirs[0].path().join(f)).unwrap(), std::fs::read(dirs[1].path().join(f)).unwrap());
        }
    }
}
