use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::time::Duration;

use anyhow::{bail, ensure, Context, Result};
use log::info;
use rayon::prelude::*;
use segquery_core::builder::write_jsonl;
use segquery_core::chunk::ClassPrediction;
use segquery_core::data::parse_rle;
use segquery_core::loss::LossFixture;
use segquery_core::stats::corpus_stats;
use segquery_core::{
    load_manifest, parse_query, parse_response, run_chunked, BinaryMask, BuilderConfig, ClassId,
    HttpEndpoint, InferConfig, LabelMap, Manifest, MergedPrediction, MetricAccumulator,
    ModelEndpoint, OracleEndpoint, Outcome, PredictionLine, RetryPolicy, SampleMode,
    TrainingSample,
};
use serde::{Deserialize, Serialize};

use crate::{BuildArgs, EvalArgs, Global, InferArgs, LossArgs, Metric, ParseArgs, StatsArgs};

const ENDPOINT_ENV: &str = "SEGQUERY_ENDPOINT";

fn manifest(path: &Path) -> Result<Manifest> {
    load_manifest(path).with_context(|| format!("loading manifest {}", path.display()))
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn input(path: Option<&Path>) -> Result<Box<dyn BufRead>> {
    Ok(match path {
        Some(p) => Box::new(BufReader::new(
            File::open(p).with_context(|| format!("opening {}", p.display()))?,
        )),
        None => Box::new(BufReader::new(io::stdin().lock())),
    })
}

/// Non-empty JSONL rows with 1-based line numbers in error messages.
fn read_jsonl<T: for<'de> Deserialize<'de>>(reader: impl BufRead, what: &str) -> Result<Vec<T>> {
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.with_context(|| format!("reading {what}"))?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(serde_json::from_str(&line).with_context(|| format!("{what} line {}", i + 1))?);
    }
    Ok(rows)
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

pub fn build_dataset(global: &Global, args: BuildArgs) -> Result<()> {
    let m = manifest(&args.manifest)?;
    let defaults = BuilderConfig::for_table_size(m.table.len(), global.seed);
    let cfg = BuilderConfig {
        min_sample: args.min_sample.unwrap_or(defaults.min_sample),
        max_sample: args.max_sample.unwrap_or(defaults.max_sample),
        augment_negatives: !args.no_augment,
        order_consistent: !args.no_order_consistent,
        template_id: args.template,
        mode: if args.single_target {
            SampleMode::SingleTarget
        } else {
            SampleMode::Complex
        },
        ..defaults
    };
    let samples = segquery_core::build_dataset(&m, &cfg, args.per_image)?;
    info!(
        "built {} samples from {} images",
        samples.len(),
        m.images.len()
    );
    write_jsonl(output(args.out.as_deref())?, &samples)?;
    Ok(())
}

fn endpoint(global: &Global, args: &InferArgs, m: &Manifest) -> Result<Box<dyn ModelEndpoint>> {
    if args.oracle_shuffle && !(args.oracle || args.oracle_drop.is_some()) {
        bail!("--oracle-shuffle requires --oracle or --oracle-drop");
    }
    if args.oracle || args.oracle_drop.is_some() {
        let mut oracle = OracleEndpoint::from_manifest(m)?;
        if let Some(p) = args.oracle_drop {
            ensure!(
                (0.0..=1.0).contains(&p),
                "--oracle-drop must be in [0, 1], got {p}"
            );
            oracle = oracle.with_drops(p, global.seed);
        }
        if args.oracle_shuffle {
            oracle = oracle.with_shuffle(global.seed);
        }
        return Ok(Box::new(oracle));
    }
    let url = match &args.endpoint {
        Some(u) => u.clone(),
        None => std::env::var(ENDPOINT_ENV).map_err(|_| {
            anyhow::anyhow!("no model source: pass --endpoint, --oracle or --oracle-drop, or set {ENDPOINT_ENV}")
        })?,
    };
    Ok(Box::new(HttpEndpoint::new(
        &url,
        Duration::from_secs(args.timeout),
    )?))
}

pub fn infer(global: &Global, args: InferArgs) -> Result<()> {
    let m = manifest(&args.manifest)?;
    let endpoint = endpoint(global, &args, &m)?;
    let cfg = InferConfig {
        spec: args.chunk,
        template_id: args.template,
        retry: RetryPolicy {
            max_retries: args.retries,
            ..RetryPolicy::default()
        },
        parallelism: global.jobs,
    };
    let ids = m.table.ids();
    let preds: Vec<MergedPrediction> = m
        .images
        .par_iter()
        .map(|rec| {
            run_chunked(&rec.image_id, &ids, &m.table, endpoint.as_ref(), &cfg)
                .with_context(|| format!("image {:?}", rec.image_id))
        })
        .collect::<Result<_>>()?;
    let mut out = output(args.out.as_deref())?;
    for p in &preds {
        out.write_all(p.canonical_jsonl().as_bytes())?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Deserialize)]
struct ParseInput {
    query: String,
    response: String,
}

pub fn parse(args: ParseArgs) -> Result<()> {
    let m = manifest(&args.manifest)?;
    let rows: Vec<ParseInput> = read_jsonl(input(args.input.as_deref())?, "input")?;
    let mut out = output(None)?;
    for (i, row) in rows.iter().enumerate() {
        let q = parse_query(&row.query)
            .with_context(|| format!("record {}: query matches no known template", i + 1))?;
        let report = parse_response(&row.response, &q.names, &m.table);
        serde_json::to_writer(&mut out, &report)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Rebuild one image's prediction from its JSONL lines, validating them
/// against the label map.
fn merged_from_lines(
    image_id: &str,
    lines: &[PredictionLine],
    gt: &LabelMap,
    m: &Manifest,
) -> Result<MergedPrediction> {
    let mut seen = HashSet::new();
    let mut classes = Vec::with_capacity(lines.len());
    for line in lines {
        let ctx = || format!("image {image_id:?} class {}", line.class_id);
        ensure!(
            m.table.contains(line.class_id),
            "{}: class not in the table",
            ctx()
        );
        ensure!(
            seen.insert(line.class_id),
            "{}: duplicate prediction",
            ctx()
        );
        let mask = match (line.outcome, &line.rle) {
            (Outcome::Seg, Some(rle)) => {
                let runs = parse_rle(rle).with_context(ctx)?;
                Some(BinaryMask::rle_decode(&runs, gt.width(), gt.height()).with_context(ctx)?)
            }
            (Outcome::Seg, None) => bail!("{}: seg outcome without a mask", ctx()),
            (_, Some(_)) => bail!("{}: mask given for a non-seg outcome", ctx()),
            (_, None) => None,
        };
        classes.push(ClassPrediction {
            class_id: line.class_id,
            outcome: line.outcome,
            mask,
            chunk: 0,
        });
    }
    Ok(MergedPrediction {
        image_id: image_id.to_string(),
        classes,
    })
}

#[derive(Serialize)]
struct EvalOutput {
    metric: &'static str,
    value: f64,
    per_class: BTreeMap<ClassId, f64>,
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let m = manifest(&args.manifest)?;
    let lines: Vec<PredictionLine> = read_jsonl(input(Some(&args.pred))?, "predictions")?;
    let mut by_image: BTreeMap<String, Vec<PredictionLine>> = BTreeMap::new();
    for line in lines {
        by_image
            .entry(line.image_id.clone())
            .or_default()
            .push(line);
    }
    let expected: BTreeSet<&str> = m.images.iter().map(|r| r.image_id.as_str()).collect();
    let got: BTreeSet<&str> = by_image.keys().map(String::as_str).collect();
    if expected != got {
        let missing: Vec<_> = expected.difference(&got).collect();
        let unknown: Vec<_> = got.difference(&expected).collect();
        bail!("prediction image ids do not match the manifest: missing {missing:?}, not in manifest {unknown:?}");
    }
    let eval_ids: Vec<ClassId> = match &args.classes {
        Some(ids) => {
            let ids: Vec<ClassId> = ids.iter().map(|&i| ClassId(i)).collect();
            let unknown: Vec<_> = ids.iter().filter(|c| !m.table.contains(**c)).collect();
            ensure!(
                unknown.is_empty(),
                "--classes names ids not in the table: {unknown:?}"
            );
            ids
        }
        None => m.table.ids(),
    };
    let per_image: Vec<MetricAccumulator> = m
        .images
        .par_iter()
        .map(|rec| {
            let gt = rec
                .load_labelmap()
                .with_context(|| format!("image {:?}", rec.image_id))?;
            let pred = merged_from_lines(&rec.image_id, &by_image[&rec.image_id], &gt, &m)?;
            let mut acc = MetricAccumulator::new();
            acc.accumulate_semantic(&pred, &gt, &eval_ids)?;
            if args.metric != Metric::Miou {
                let valid: Vec<bool> = gt.valid_pixels().collect();
                for &class in &eval_ids {
                    let empty = BinaryMask::empty(gt.width(), gt.height());
                    let mask = pred
                        .get(class)
                        .and_then(|c| c.mask.as_ref())
                        .unwrap_or(&empty);
                    acc.accumulate_referring_masked(mask, &gt.binarize(class), Some(&valid))?;
                }
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut acc = MetricAccumulator::new();
    for a in per_image {
        acc.merge(a);
    }
    let (metric, value) = match args.metric {
        Metric::Miou => ("miou", acc.finalize_miou(Some(&eval_ids))?),
        Metric::Ciou => ("ciou", acc.finalize_ciou()?),
        Metric::Giou => ("giou", acc.finalize_giou()?),
    };
    print_json(&EvalOutput {
        metric,
        value,
        per_class: acc.per_class_iou(),
    })
}

pub fn loss(args: LossArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.fixture)
        .with_context(|| format!("reading {}", args.fixture.display()))?;
    let fixture: LossFixture = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", args.fixture.display()))?;
    print_json(&fixture.evaluate()?)
}

pub fn stats(args: StatsArgs) -> Result<()> {
    let m = manifest(&args.manifest)?;
    let samples: Vec<TrainingSample> = read_jsonl(input(Some(&args.corpus))?, "corpus")?;
    print_json(&corpus_stats(&samples, &m.table))
}
