use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use sfam_core::baselines::{decomposition_map, ram_map};
use sfam_core::localization::{evaluate_case, summarize, Case, EpisodeResult, Evaluation};
use sfam_core::sanity::{sanity_sweep_maps, SanityEpisode, StageResult};
use sfam_core::store::overlay::{blend, heatmap_image, load_rgb, save_png, strip};
use sfam_core::store::{read_features, read_manifest, write_tensor, EpisodeRecord, Tensor};
use sfam_core::{
    explain_pair, global_average_pool, normalize_map, prototype, upsample_bilinear, ActivationMap,
    FeatureMap, Metric,
};

use crate::{Method, RunConfig, UsageError};

/// What a command did. Failed episodes only appear here under `--keep-going`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Outcome {
    pub processed: usize,
    /// `(episode_id, message)` for every skipped episode, in manifest order.
    pub failures: Vec<(String, String)>,
}

#[derive(Clone, Debug)]
pub struct EvaluateOutcome {
    pub outcome: Outcome,
    pub evaluation: Evaluation,
}

#[derive(Clone, Debug)]
pub struct SanityOutcome {
    pub outcome: Outcome,
    /// Stage results averaged over episodes.
    pub stages: Vec<StageResult>,
}

struct Loaded {
    query: FeatureMap<f32>,
    supports: Vec<FeatureMap<f32>>,
}

fn load(rec: &EpisodeRecord) -> sfam_core::Result<Loaded> {
    let query = read_features(&rec.query_tensor_path)?;
    let supports = rec
        .support_tensor_paths
        .iter()
        .map(read_features)
        .collect::<sfam_core::Result<Vec<_>>>()?;
    Ok(Loaded { query, supports })
}

struct Explained {
    map: ActivationMap<f32>,
    metric: Metric,
    score: f32,
}

fn explain(cfg: &RunConfig, rec: &EpisodeRecord, data: &Loaded) -> sfam_core::Result<Explained> {
    let metric = cfg.resolve_metric(rec.metric);
    match cfg.method {
        Method::Sfam => {
            let e = explain_pair(&data.query, &data.supports, metric)?;
            Ok(Explained {
                map: e.query_map,
                metric,
                score: e.similarity,
            })
        }
        Method::Ram | Method::Decomposition => {
            let q = global_average_pool(&data.query)?;
            let pooled = data
                .supports
                .iter()
                .map(global_average_pool)
                .collect::<sfam_core::Result<Vec<_>>>()?;
            let proto = prototype(&pooled)?;
            let map = if cfg.method == Method::Ram {
                ram_map(&data.query)?
            } else {
                decomposition_map(&data.query, &proto)?
            };
            Ok(Explained {
                map,
                metric,
                score: metric.score(&q, &proto)?,
            })
        }
    }
}

/// The map at image resolution, scaled to `[0, 1]`.
fn image_map(
    rec: &EpisodeRecord,
    map: &ActivationMap<f32>,
) -> sfam_core::Result<ActivationMap<f32>> {
    let (w, h) = rec.image_size;
    Ok(normalize_map(&upsample_bilinear(
        map, h as usize, w as usize,
    )?))
}

fn episode_dir(cfg: &RunConfig, id: &str) -> Result<PathBuf> {
    let bad = id.is_empty() || id == "." || id == ".." || id.contains(['/', '\\']);
    if bad {
        bail!("episode id {id:?} cannot be used as a directory name");
    }
    Ok(cfg.output_dir.join(id))
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .context("starting worker pool")
}

fn records(cfg: &RunConfig) -> Result<Vec<EpisodeRecord>> {
    cfg.validate()?;
    read_manifest(&cfg.manifest).with_context(|| format!("reading {}", cfg.manifest.display()))
}

/// Run `work` over every record on `cfg.jobs` workers, keeping manifest order.
fn run_all<R: Send>(
    cfg: &RunConfig,
    recs: &[EpisodeRecord],
    work: impl Fn(&EpisodeRecord) -> Result<R> + Sync,
) -> Result<(Vec<(String, R)>, Outcome)> {
    let results: Vec<Result<R>> = pool(cfg.jobs)?.install(|| {
        recs.par_iter()
            .map(|rec| {
                log::info!("episode {}", rec.episode_id);
                work(rec)
            })
            .collect()
    });
    let mut done = Vec::with_capacity(recs.len());
    let mut outcome = Outcome::default();
    for (rec, res) in recs.iter().zip(results) {
        match res {
            Ok(r) => {
                outcome.processed += 1;
                done.push((rec.episode_id.clone(), r));
            }
            Err(e) if cfg.keep_going => {
                log::warn!("episode {} skipped: {e:#}", rec.episode_id);
                outcome
                    .failures
                    .push((rec.episode_id.clone(), format!("{e:#}")));
            }
            Err(e) => return Err(e.context(format!("episode {}", rec.episode_id))),
        }
    }
    Ok((done, outcome))
}

fn create_output_dir(cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(&cfg.output_dir)
        .with_context(|| format!("creating {}", cfg.output_dir.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

/// Write `map_raw.npy`, `map_norm.npy` and, when the episode has an image,
/// `overlay.png` under `<out>/<episode_id>/`; print one line per episode.
pub fn cmd_explain(cfg: &RunConfig, out: &mut dyn Write) -> Result<Outcome> {
    let recs = records(cfg)?;
    create_output_dir(cfg)?;
    let (lines, outcome) = run_all(cfg, &recs, |rec| {
        let dir = episode_dir(cfg, &rec.episode_id)?;
        let data = load(rec)?;
        let ex = explain(cfg, rec, &data)?;
        let norm = image_map(rec, &ex.map)?;
        write_tensor(dir.join("map_raw.npy"), &Tensor::Map(ex.map.clone()))?;
        write_tensor(dir.join("map_norm.npy"), &Tensor::Map(norm.clone()))?;
        if let Some(img) = &rec.query_image_path {
            sfam_core::store::render_overlay(img, &norm, dir.join("overlay.png"), cfg.alpha)?;
        }
        let (row, col) = ex.map.argmax();
        let label = match ex.metric {
            Metric::Euclidean => "distance",
            Metric::Cosine => "cosine",
        };
        Ok(format!(
            "{}\t{}\t{}\t{label}={:.6}\tpeak=({row},{col})",
            rec.episode_id, cfg.method, ex.metric, ex.score
        ))
    })?;
    for (_, line) in &lines {
        writeln!(out, "{line}")?;
    }
    Ok(outcome)
}

#[derive(Serialize)]
struct Summary<'a> {
    method: &'a str,
    metric: String,
    threshold: f64,
    box_mode: String,
    n: usize,
    failed: usize,
    mean_iou: f64,
    accuracy: f64,
}

fn metric_label(cfg: &RunConfig, recs: &[EpisodeRecord]) -> String {
    let mut metrics = recs.iter().map(|r| cfg.resolve_metric(r.metric));
    match metrics.next() {
        Some(first) if metrics.all(|m| m == first) => first.to_string(),
        Some(_) => "mixed".into(),
        None => cfg.resolve_metric(None).to_string(),
    }
}

/// Score every episode against its annotation. Writes `evaluation.csv` and
/// `summary.json` and prints a one-row table.
pub fn cmd_evaluate(cfg: &RunConfig, out: &mut dyn Write) -> Result<EvaluateOutcome> {
    let recs = records(cfg)?;
    if recs.is_empty() {
        bail!("no episodes in {}", cfg.manifest.display());
    }
    let missing: Vec<&str> = recs
        .iter()
        .filter(|r| r.truth_box.is_none())
        .map(|r| r.episode_id.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(UsageError(format!(
            "evaluate needs truth_box for every episode; missing: {}",
            missing.join(", ")
        ))
        .into());
    }
    create_output_dir(cfg)?;

    let (scored, outcome) = run_all(cfg, &recs, |rec| {
        let data = load(rec)?;
        let ex = explain(cfg, rec, &data)?;
        let case = Case {
            episode_id: rec.episode_id.clone(),
            map: image_map(rec, &ex.map)?,
            truth: rec.truth_box.expect("checked above"),
        };
        Ok(evaluate_case(&case, cfg.threshold, cfg.box_mode))
    })?;
    let per_episode: Vec<EpisodeResult> = scored.into_iter().map(|(_, r)| r).collect();
    let evaluation = summarize(per_episode).map_err(|_| anyhow!("every episode failed"))?;

    let csv_path = cfg.output_dir.join("evaluation.csv");
    let mut w = csv::Writer::from_path(&csv_path)
        .with_context(|| format!("writing {}", csv_path.display()))?;
    w.write_record(["episode_id", "iou", "hit"])?;
    for r in &evaluation.per_episode {
        w.write_record([
            r.episode_id.clone(),
            format!("{:.6}", r.iou),
            r.hit.to_string(),
        ])?;
    }
    w.flush()?;

    let metric = metric_label(cfg, &recs);
    write_json(
        &cfg.output_dir.join("summary.json"),
        &Summary {
            method: cfg.method.as_str(),
            metric: metric.clone(),
            threshold: cfg.threshold,
            box_mode: cfg.box_mode.to_string(),
            n: evaluation.per_episode.len(),
            failed: outcome.failures.len(),
            mean_iou: evaluation.mean_iou,
            accuracy: evaluation.accuracy,
        },
    )?;

    writeln!(
        out,
        "{:<14} {:<10} {:>8} {:>13} {:>9}",
        "method", "metric", "IoU (%)", "Accuracy (%)", "episodes"
    )?;
    writeln!(
        out,
        "{:<14} {:<10} {:>8.2} {:>13.2} {:>9}",
        cfg.method.as_str(),
        metric,
        evaluation.mean_iou * 100.0,
        evaluation.accuracy * 100.0,
        evaluation.per_episode.len()
    )?;
    Ok(EvaluateOutcome {
        outcome,
        evaluation,
    })
}

#[derive(Serialize)]
struct EpisodeStages {
    episode_id: String,
    stages: Vec<StageResult>,
}

#[derive(Serialize)]
struct SanityFile<'a> {
    seed: u64,
    fractions: &'a [f64],
    episodes: usize,
    stages: &'a [StageResult],
    per_episode: Vec<EpisodeStages>,
}

fn panel(rec: &EpisodeRecord, map: &ActivationMap<f32>, alpha: f64) -> Result<image::RgbImage> {
    let norm = image_map(rec, map)?;
    Ok(match &rec.query_image_path {
        Some(p) => blend(&load_rgb(p)?, &norm, alpha)?,
        None => heatmap_image(&norm),
    })
}

fn average_stages(per_episode: &[EpisodeStages], fractions: &[f64]) -> Vec<StageResult> {
    let n = per_episode.len().max(1) as f64;
    fractions
        .iter()
        .enumerate()
        .map(|(k, &fraction)| {
            let rank_correlation = per_episode
                .iter()
                .map(|e| e.stages[k].rank_correlation)
                .sum::<f64>()
                / n;
            let deltas: Vec<f64> = per_episode
                .iter()
                .filter_map(|e| e.stages[k].mean_iou_delta)
                .collect();
            let mean_iou_delta =
                (!deltas.is_empty()).then(|| deltas.iter().sum::<f64>() / deltas.len() as f64);
            StageResult {
                stage_label: sfam_core::sanity::stage_label(fraction),
                fraction,
                rank_correlation,
                mean_iou_delta,
            }
        })
        .collect()
}

/// Cascading randomization of the channel activations. Writes
/// `sanity_report.json` and one `sanity_strip.png` per episode.
pub fn cmd_sanity(
    cfg: &RunConfig,
    fractions: &[f64],
    out: &mut dyn Write,
) -> Result<SanityOutcome> {
    if cfg.method != Method::Sfam {
        return Err(UsageError(
            "sanity checks SFAM maps only; drop --method or pass --method sfam".into(),
        )
        .into());
    }
    let recs = records(cfg)?;
    create_output_dir(cfg)?;
    let (done, outcome) = run_all(cfg, &recs, |rec| {
        let dir = episode_dir(cfg, &rec.episode_id)?;
        let data = load(rec)?;
        let episode = SanityEpisode {
            query: data.query,
            supports: data.supports,
            metric: cfg.resolve_metric(rec.metric),
            truth: rec.truth_box.map(|b| (b, rec.image_size)),
        };
        let (report, maps) =
            sanity_sweep_maps(&episode, fractions, cfg.seed, cfg.threshold, cfg.box_mode)?;
        let panels = std::iter::once(&maps.original)
            .chain(&maps.stages)
            .map(|m| panel(rec, m, cfg.alpha))
            .collect::<Result<Vec<_>>>()?;
        save_png(dir.join("sanity_strip.png"), &strip(&panels))?;
        Ok(report.stages)
    })?;
    let per_episode: Vec<EpisodeStages> = done
        .into_iter()
        .map(|(episode_id, stages)| EpisodeStages { episode_id, stages })
        .collect();
    let stages = average_stages(&per_episode, fractions);
    write_json(
        &cfg.output_dir.join("sanity_report.json"),
        &SanityFile {
            seed: cfg.seed,
            fractions,
            episodes: per_episode.len(),
            stages: &stages,
            per_episode,
        },
    )?;

    writeln!(
        out,
        "{:<16} {:>10} {:>10}",
        "stage", "rank corr", "IoU delta"
    )?;
    for s in &stages {
        let delta = s
            .mean_iou_delta
            .map_or("n/a".to_string(), |d| format!("{d:+.4}"));
        writeln!(
            out,
            "{:<16} {:>10.4} {:>10}",
            s.stage_label, s.rank_correlation, delta
        )?;
    }
    Ok(SanityOutcome { outcome, stages })
}
