use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;
use serde_json::{json, Value};

use sonify_core::embedding::{dis_cos, euclidean};
use sonify_core::eval::{
    all_frame_audio_pairs, correlate, default_references, inconsistency_histogram, mos_aggregate,
    pair_stats, read_ratings, Component, GroupBy, Pair, PairKey, RaterMode, RatingRecord,
};
use sonify_core::metrics::{
    inconsistency, rank_candidates, DistanceKind, InconsistencyReport, SlerpParams,
};
use sonify_core::rating::{RatingConfig, RatingService};
use sonify_core::report::{validate, Report};
use sonify_core::retrieval::{
    sonorize_scheme2, ProcessAdapter, RetrievalError, Scheme2Options, Scheme2Ranking,
};
use sonify_core::store::{
    parent_frame_id, read_manifest, write_archive, write_manifest, AssetManifest, EmbeddingStore,
};
use sonify_core::synth::generate;
use sonify_core::{Embedding, Modality};

use crate::config::{load_adapters, RunConfig};
use crate::{CliError, Command, OutputArgs, StoreArgs};

const DEFAULT_K: usize = 10;
const DEFAULT_THETA: f64 = 0.5;
const DEFAULT_BINS: usize = 20;

fn invalid(e: impl std::fmt::Display) -> CliError {
    CliError::Validation(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn load_store(args: &StoreArgs) -> Result<EmbeddingStore, CliError> {
    EmbeddingStore::ingest(&args.manifest, &args.archive, !args.no_normalize).map_err(invalid)
}

fn load_ratings(path: &Path) -> Result<Vec<RatingRecord>, CliError> {
    let file = fs::File::open(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    read_ratings(file).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

/// Writes the report and prints the summary.
fn emit<T: Serialize>(
    output: &OutputArgs,
    kind: &str,
    data: &T,
    summary: &str,
) -> Result<(), CliError> {
    let text = Report::new(kind, data, !output.no_timestamp).to_json();
    match &output.out {
        Some(path) => {
            fs::write(path, &text).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
            println!("{summary}");
            println!("report written to {}", path.display());
        }
        None => {
            eprintln!("{summary}");
            std::io::stdout()
                .write_all(text.as_bytes())
                .map_err(runtime)?;
        }
    }
    Ok(())
}

fn frames<'s>(store: &'s EmbeddingStore, ids: &[String]) -> Result<Vec<&'s Embedding>, CliError> {
    if ids.is_empty() {
        let all = store.by_modality(Modality::Image);
        if all.is_empty() {
            return Err(invalid("store has no image embeddings"));
        }
        return Ok(all);
    }
    ids.iter()
        .map(|id| match store.get(id) {
            Some(e) if e.modality() == Modality::Image => Ok(e),
            Some(e) => Err(invalid(format!(
                "'{id}' is an {} asset, not a frame",
                e.modality()
            ))),
            None => Err(invalid(format!("unknown frame '{id}'"))),
        })
        .collect()
}

fn slerp_params(
    theta: Option<f64>,
    distance: Option<DistanceKind>,
    cfg: &RunConfig,
) -> Result<SlerpParams, CliError> {
    SlerpParams::new(
        theta.or(cfg.theta).unwrap_or(DEFAULT_THETA),
        distance.or(cfg.distance).unwrap_or_default(),
    )
    .map_err(invalid)
}

fn sibling_reports(
    store: &EmbeddingStore,
    frames: &[&Embedding],
) -> Result<Vec<InconsistencyReport>, CliError> {
    let mut reports = Vec::new();
    for f in frames {
        for (t, a) in store.sibling_pairs(f.id()) {
            reports.push(inconsistency(f, t, a).map_err(invalid)?);
        }
    }
    if reports.is_empty() {
        return Err(invalid(
            "no (frame, caption, audio) sibling triples in the store",
        ));
    }
    Ok(reports)
}

pub fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Ingest { store, output } => ingest(store, output),
        Command::Synth {
            manifest,
            archive,
            seed,
            dim,
            scenes,
            frames_per_scene,
            output,
        } => synth(
            manifest,
            archive,
            seed,
            dim,
            scenes,
            frames_per_scene,
            output,
        ),
        Command::Rank {
            store,
            frames,
            k,
            distance,
            output,
        } => rank(store, frames, k, distance, output),
        Command::Sonorize2 {
            manifest,
            frame,
            adapters,
            workdir,
            k,
            concurrency,
            archive,
            reference_frame,
            reference_audio,
            theta,
            distance,
            output,
        } => {
            let reference = archive.map(|a| {
                (
                    a,
                    reference_frame.expect("clap enforces --reference-frame"),
                    reference_audio.expect("clap enforces --reference-audio"),
                )
            });
            sonorize2(
                manifest,
                frame,
                adapters,
                workdir,
                k,
                concurrency,
                reference,
                theta,
                distance,
                output,
            )
        }
        Command::Inc {
            store,
            frames,
            output,
        } => inc(store, frames, output),
        Command::SlerpEval {
            store,
            theta,
            distance,
            output,
        } => slerp_eval(store, theta, distance, output),
        Command::Hist {
            store,
            bins,
            component,
            output,
        } => hist(store, bins, component, output),
        Command::Mos {
            ratings,
            manifest,
            output,
        } => mos(ratings, manifest, output),
        Command::Correlate {
            ratings,
            metrics,
            independent,
            output,
        } => correlate_cmd(ratings, metrics, independent, output),
        Command::Serve {
            manifest,
            ratings,
            journal,
            media_root,
            addr,
            config,
        } => serve(manifest, ratings, journal, media_root, addr, config),
    }
}

fn ingest(args: StoreArgs, output: OutputArgs) -> Result<(), CliError> {
    RunConfig::load(output.config.as_deref())?;
    let store = load_store(&args)?;
    let scenes: Vec<Value> = store
        .scenes()
        .map(|s| {
            let n = |m| store.by_scene(s, m).map(|v| v.len()).unwrap_or(0);
            json!({
                "scene": s,
                "image": n(Modality::Image),
                "text": n(Modality::Text),
                "audio": n(Modality::Audio),
            })
        })
        .collect();
    let counts = store.counts();
    let data = json!({
        "dim": store.dim(),
        "normalized": !args.no_normalize,
        "counts": counts,
        "scenes": scenes,
    });
    let summary = format!(
        "{} embeddings of dim {} ({} image, {} text, {} audio) in {} scenes",
        store.len(),
        store.dim(),
        counts.image,
        counts.text,
        counts.audio,
        scenes.len()
    );
    emit(&output, "ingest", &data, &summary)
}

fn synth(
    manifest_path: PathBuf,
    archive_path: PathBuf,
    seed: Option<u64>,
    dim: Option<usize>,
    scenes: Option<usize>,
    frames_per_scene: Option<usize>,
    output: OutputArgs,
) -> Result<(), CliError> {
    let cfg = RunConfig::load(output.config.as_deref())?;
    let mut space = cfg.synth.clone().unwrap_or_default();
    if let Some(s) = seed.or(cfg.seed) {
        space.seed = s;
    }
    if let Some(d) = dim {
        space.dim = d;
    }
    if let Some(n) = scenes {
        space.n_scenes = n;
    }
    if let Some(n) = frames_per_scene {
        space.frames_per_scene = n;
    }
    space.validate().map_err(invalid)?;
    let (manifest, store) = generate(&space).map_err(runtime)?;
    write_manifest(&manifest_path, &manifest).map_err(runtime)?;
    write_archive(&archive_path, &store.to_archive()).map_err(runtime)?;
    let counts = store.counts();
    let data = json!({"dim": store.dim(), "counts": counts, "config": space});
    let summary = format!(
        "wrote {} assets to {} and {}",
        manifest.len(),
        manifest_path.display(),
        archive_path.display()
    );
    emit(&output, "synth", &data, &summary)
}

fn rank(
    args: StoreArgs,
    frame_ids: Vec<String>,
    k: Option<usize>,
    distance: Option<DistanceKind>,
    output: OutputArgs,
) -> Result<(), CliError> {
    let cfg = RunConfig::load(output.config.as_deref())?;
    let k = k.or(cfg.k).unwrap_or(DEFAULT_K);
    if k == 0 {
        return Err(invalid("--k must be at least 1"));
    }
    let distance = distance.or(cfg.distance).unwrap_or_default();
    let store = load_store(&args)?;
    let frames = frames(&store, &frame_ids)?;
    let audios = store.by_modality(Modality::Audio);
    if audios.is_empty() {
        return Err(invalid("store has no audio embeddings"));
    }
    let metric = match distance {
        DistanceKind::Cosine => "dis_cos",
        DistanceKind::Euclidean => "euclidean",
    };
    let results = frames
        .iter()
        .map(|f| {
            rank_candidates(f.id(), metric, &audios, k, |a| {
                Ok(match distance {
                    DistanceKind::Cosine => dis_cos(f, a)?,
                    DistanceKind::Euclidean => euclidean(f, a)?,
                })
            })
            .map_err(invalid)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut summary = format!(
        "ranked {} audios for {} frames by {metric}, k = {k}",
        audios.len(),
        frames.len()
    );
    for r in results.iter().take(5) {
        let best = r.best().expect("rankings are never empty");
        summary.push_str(&format!(
            "\n  {} -> {} ({:.4})",
            r.query_id, best.candidate_id, best.score
        ));
    }
    if results.len() > 5 {
        summary.push_str(&format!("\n  ... {} more", results.len() - 5));
    }
    let data = json!({"metric": metric, "k": k, "results": results});
    emit(&output, "rank", &data, &summary)
}

#[allow(clippy::too_many_arguments)]
fn sonorize2(
    manifest_path: PathBuf,
    frame_id: String,
    adapters: PathBuf,
    workdir: PathBuf,
    k: Option<usize>,
    concurrency: usize,
    reference: Option<(PathBuf, String, String)>,
    theta: Option<f64>,
    distance: Option<DistanceKind>,
    output: OutputArgs,
) -> Result<(), CliError> {
    let cfg = RunConfig::load(output.config.as_deref())?;
    let manifest = read_manifest(&manifest_path).map_err(invalid)?;
    let frame = manifest
        .get(&frame_id)
        .filter(|r| r.modality == Modality::Image)
        .ok_or_else(|| {
            invalid(format!(
                "{}: no frame '{frame_id}'",
                manifest_path.display()
            ))
        })?
        .clone();
    let specs = load_adapters(&adapters)?;
    let adapter = |spec| ProcessAdapter::new(spec).map_err(invalid);
    let (captioner, generator, encoder) = (
        adapter(specs.captioner)?,
        adapter(specs.audio_generator)?,
        adapter(specs.encoder)?,
    );
    let mut options = Scheme2Options::new(workdir);
    options.k = k.or(cfg.k).unwrap_or(DEFAULT_K);
    options.concurrency = concurrency;
    if let Some((archive, rf, ra)) = reference {
        let store = load_store(&StoreArgs {
            manifest: manifest_path.clone(),
            archive,
            no_normalize: false,
        })?;
        let get = |id: &str, m: Modality| match store.get(id) {
            Some(e) if e.modality() == m => Ok(e.clone()),
            _ => Err(invalid(format!(
                "no {m} embedding '{id}' in the reference store"
            ))),
        };
        options.ranking = Scheme2Ranking::Slerp {
            reference_frame: get(&rf, Modality::Image)?,
            reference_audio: get(&ra, Modality::Audio)?,
            params: slerp_params(theta, distance, &cfg)?,
        };
    }
    let plan = sonorize_scheme2(&frame, &captioner, &generator, &encoder, &options).map_err(
        |e| match e {
            RetrievalError::InvalidAdapter(_) => invalid(e),
            RetrievalError::Metrics(_) => invalid(e),
            other => runtime(other),
        },
    )?;
    let summary = format!(
        "{}: {} candidates from {} captions, chose {}",
        plan.frame_id,
        plan.candidates.entries.len(),
        plan.lineage
            .iter()
            .map(|l| &l.caption_id)
            .collect::<std::collections::BTreeSet<_>>()
            .len(),
        plan.chosen_audio_id
    );
    emit(&output, "sonorize2", &plan, &summary)
}

fn inc(args: StoreArgs, frame_ids: Vec<String>, output: OutputArgs) -> Result<(), CliError> {
    RunConfig::load(output.config.as_deref())?;
    let store = load_store(&args)?;
    let frames = frames(&store, &frame_ids)?;
    let reports = sibling_reports(&store, &frames)?;
    let mean = reports.iter().map(|r| r.inc).sum::<f64>() / reports.len() as f64;
    let summary = format!(
        "{} triples over {} frames, mean inc {mean:.4}",
        reports.len(),
        frames.len()
    );
    emit(&output, "inc", &json!({"reports": reports}), &summary)
}

/// Reference pairs from the configured per-scene audio, or the store defaults.
fn references(store: &EmbeddingStore, cfg: &RunConfig) -> Result<Vec<Pair>, CliError> {
    if cfg.reference_audio.is_empty() {
        return Ok(default_references(store));
    }
    cfg.reference_audio
        .iter()
        .map(|(scene, audio)| {
            match store.get(audio) {
                Some(a)
                    if a.modality() == Modality::Audio && store.scene_of(audio) == Some(scene) => {}
                _ => {
                    return Err(invalid(format!(
                        "reference audio '{audio}' is not an audio of scene '{scene}'"
                    )))
                }
            }
            let own = parent_frame_id(audio).filter(|f| {
                store
                    .get(f)
                    .is_some_and(|e| e.modality() == Modality::Image)
            });
            let frame = match own {
                Some(f) => f.to_string(),
                None => store
                    .by_scene(scene, Modality::Image)
                    .map_err(invalid)?
                    .first()
                    .map(|f| f.id().to_string())
                    .ok_or_else(|| invalid(format!("scene '{scene}' has no frames")))?,
            };
            Ok((frame, audio.clone()))
        })
        .collect()
}

fn slerp_eval(
    args: StoreArgs,
    theta: Option<f64>,
    distance: Option<DistanceKind>,
    output: OutputArgs,
) -> Result<(), CliError> {
    let cfg = RunConfig::load(output.config.as_deref())?;
    let params = slerp_params(theta, distance, &cfg)?;
    let store = load_store(&args)?;
    let refs = references(&store, &cfg)?;
    if refs.is_empty() {
        return Err(invalid("no reference (frame, audio) pairs"));
    }
    let targets = all_frame_audio_pairs(&store);
    let cells = pair_stats(&store, &refs, &targets, &params).map_err(invalid)?;
    let mut summary = format!(
        "{} references x {} targets, theta {}, {} distance\n  audio      image      mean       std        n",
        refs.len(),
        targets.len(),
        params.theta(),
        params.distance
    );
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
    for c in &cells {
        summary.push_str(&format!(
            "\n  {:<10} {:<10} {:<10} {:<10} {}",
            format!("{:?}", c.audio_relation).to_lowercase(),
            format!("{:?}", c.image_relation).to_lowercase(),
            fmt(c.mean),
            fmt(c.std),
            c.n
        ));
    }
    let references: Vec<Value> = refs
        .iter()
        .map(|(f, a)| json!({"frame_id": f, "audio_id": a}))
        .collect();
    let data = json!({
        "theta": params.theta(),
        "distance": params.distance,
        "references": references,
        "cells": cells,
    });
    emit(&output, "slerp-eval", &data, &summary)
}

fn hist(
    args: StoreArgs,
    bins: Option<usize>,
    components: Vec<Component>,
    output: OutputArgs,
) -> Result<(), CliError> {
    let cfg = RunConfig::load(output.config.as_deref())?;
    let bins = bins.or(cfg.bins).unwrap_or(DEFAULT_BINS);
    let store = load_store(&args)?;
    let frames = frames(&store, &[])?;
    let reports = sibling_reports(&store, &frames)?;
    let components = if components.is_empty() {
        Component::ALL.to_vec()
    } else {
        components
    };
    let histograms = components
        .iter()
        .map(|&c| {
            let h = inconsistency_histogram(&reports, c, bins).map_err(invalid)?;
            Ok(json!({
                "component": c.as_str(),
                "bin_edges": h.bin_edges,
                "counts": h.counts,
                "total": h.total,
            }))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let summary = format!(
        "{} histograms of {} bins over {} triples",
        histograms.len(),
        bins,
        reports.len()
    );
    emit(
        &output,
        "hist",
        &json!({"histograms": histograms}),
        &summary,
    )
}

fn mos(ratings: PathBuf, manifest: Option<PathBuf>, output: OutputArgs) -> Result<(), CliError> {
    RunConfig::load(output.config.as_deref())?;
    let records = load_ratings(&ratings)?;
    let manifest: Option<AssetManifest> = manifest
        .map(|p| read_manifest(&p).map_err(invalid))
        .transpose()?;
    let (group_by, label) = match &manifest {
        Some(m) => (GroupBy::Scene(m), "scene"),
        None => (GroupBy::Pair, "pair"),
    };
    let groups = mos_aggregate(&records, group_by).map_err(invalid)?;
    let mut summary = format!(
        "{} ratings in {} groups by {label}",
        records.len(),
        groups.len()
    );
    for g in groups.iter().take(10) {
        summary.push_str(&format!(
            "\n  {:<24} mean {:.3} std {:.3} n {}",
            g.group, g.mean, g.std, g.n
        ));
    }
    emit(
        &output,
        "mos",
        &json!({"group_by": label, "groups": groups}),
        &summary,
    )
}

/// Metric values keyed by (frame, audio) plus the metric's name.
fn load_metrics(path: &Path) -> Result<(HashMap<PairKey, f64>, String), CliError> {
    let text = fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    let ctx = |m: String| invalid(format!("{}: {m}", path.display()));
    if path.extension().is_some_and(|e| e == "csv") {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let header = rdr.headers().map_err(|e| ctx(e.to_string()))?.clone();
        if header.len() != 3 || &header[0] != "frame_id" || &header[1] != "audio_id" {
            return Err(ctx(
                "line 1: expected header frame_id,audio_id,<metric>".into()
            ));
        }
        let mut values = HashMap::new();
        for row in rdr.records() {
            let row = row.map_err(|e| ctx(e.to_string()))?;
            let line = row.position().map(|p| p.line()).unwrap_or(0);
            let v: f64 = row[2]
                .trim()
                .parse()
                .map_err(|_| ctx(format!("line {line}: '{}' is not a number", &row[2])))?;
            values.insert((row[0].to_string(), row[1].to_string()), v);
        }
        return Ok((values, header[2].to_string()));
    }
    let report: Value = serde_json::from_str(&text).map_err(|e| ctx(e.to_string()))?;
    validate(&report).map_err(|e| ctx(e.to_string()))?;
    let data = &report["data"];
    let mut values = HashMap::new();
    let mut name = String::new();
    let mut add_ranked = |r: &Value, values: &mut HashMap<PairKey, f64>| {
        name = r["metric_name"].as_str().unwrap_or_default().to_string();
        let q = r["query_id"].as_str().unwrap_or_default();
        for e in r["entries"].as_array().into_iter().flatten() {
            let c = e["candidate_id"].as_str().unwrap_or_default();
            values.insert(
                (q.to_string(), c.to_string()),
                e["score"].as_f64().unwrap_or(f64::NAN),
            );
        }
    };
    match report["kind"].as_str() {
        Some("rank") => {
            for r in data["results"].as_array().into_iter().flatten() {
                add_ranked(r, &mut values);
            }
        }
        Some("sonorize2") => add_ranked(&data["candidates"], &mut values),
        Some("inc") => {
            name = "inc".into();
            for r in data["reports"].as_array().into_iter().flatten() {
                let key = (
                    r["frame_id"].as_str().unwrap_or_default().to_string(),
                    r["audio_id"].as_str().unwrap_or_default().to_string(),
                );
                values.insert(key, r["inc"].as_f64().unwrap_or(f64::NAN));
            }
        }
        Some(other) => {
            return Err(ctx(format!(
                "a '{other}' report carries no per-pair metric"
            )))
        }
        None => unreachable!("validated reports have a kind"),
    }
    Ok((values, name))
}

fn correlate_cmd(
    ratings: PathBuf,
    metrics: PathBuf,
    independent: bool,
    output: OutputArgs,
) -> Result<(), CliError> {
    RunConfig::load(output.config.as_deref())?;
    let records = load_ratings(&ratings)?;
    let (values, name) = load_metrics(&metrics)?;
    let mode = if independent {
        RaterMode::Independent
    } else {
        RaterMode::AveragePerPair
    };
    let report = correlate(&records, &values, &name, mode).map_err(invalid)?;
    let summary = format!(
        "pearson r = {:.4} between {} and MOS over {} points",
        report.r, report.metric_name, report.n
    );
    emit(&output, "correlate", &report, &summary)
}

fn serve(
    manifest: PathBuf,
    ratings: PathBuf,
    journal: Option<PathBuf>,
    media_root: Option<PathBuf>,
    addr: std::net::SocketAddr,
    config: Option<PathBuf>,
) -> Result<(), CliError> {
    let cfg = RunConfig::load(config.as_deref())?;
    let manifest = read_manifest(&manifest).map_err(invalid)?;
    let journal_path = journal.unwrap_or_else(|| ratings.with_extension("journal.jsonl"));
    let service = RatingService::open(
        manifest,
        RatingConfig {
            ratings_path: ratings,
            journal_path,
            reference_audio: cfg.reference_audio.into_iter().collect(),
            pair_sets: cfg.pair_sets,
        },
    )
    .map_err(invalid)?;
    let rt = tokio::runtime::Runtime::new().map_err(runtime)?;
    println!("rating service listening on http://{addr}");
    rt.block_on(sonify_service::serve(addr, Arc::new(service), media_root))
        .map_err(runtime)
}
