use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};

use merge_index::baseline::{rq_assign, vq_assign, Metric};
use merge_index::eval::{build_sample, evaluate, subsample, EvalOptions, MetricReport};
use merge_index::hierarchy::build_hierarchy;
use merge_index::indexer::match_batch;
use merge_index::io::{
    generate_stream, load_index, load_stream, read_container, read_truth, save_index, write_container, write_record,
    write_truth, CodebookBody, CodebookFile, SyntheticStreamSpec,
};
use merge_index::pipeline::{train_merge, train_rq, train_vq};
use merge_index::{IndexConfig, ItemRecord, Snapshot};

use crate::manifest::{digests, sidecar, RunManifest};
use crate::{Algo, AssignArgs, EvalArgs, GenArgs, MergeArgs, MetricArg, TrainArgs};

const ASSIGN_CHUNK: usize = 4096;

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

pub fn gen(a: &GenArgs) -> Result<()> {
    let spec = SyntheticStreamSpec {
        n_items: a.items,
        n_true_clusters: a.clusters as usize,
        dim: a.dim,
        tag_count: a.tags,
        concentration: a.concentration,
        zipf_exponent: a.zipf,
        drift_rate: a.drift,
        drift_period: a.drift_period,
        tag_coherence: a.tag_coherence,
        max_popularity: a.max_popularity,
        seed: a.seed,
    };
    let stream = generate_stream(&spec)?;
    let truth_path = a.truth.clone().unwrap_or_else(|| sidecar(&a.out, ".truth.csv"));
    let mut out = create(&a.out)?;
    let mut truth = create(&truth_path)?;
    for (r, c) in stream {
        write_record(&mut out, &r)?;
        write_truth(&mut truth, r.item_id, c)?;
    }
    out.flush()?;
    truth.flush()?;
    let mut m = RunManifest::new("gen");
    m.seed = Some(a.seed);
    m.outputs = digests(&[&a.out, &truth_path])?;
    m.summary = serde_json::to_value(&spec)?;
    m.write_for(&a.out)?;
    println!("wrote {} items over {} clusters to {}", a.items, a.clusters, a.out.display());
    Ok(())
}

/// Reads the stream, inferring the dimension from the first record when the
/// config leaves it unset.
fn read_stream(path: &Path, dim: Option<usize>) -> Result<Vec<ItemRecord>> {
    let records = load_stream(path, dim)
        .with_context(|| format!("opening {}", path.display()))?
        .collect::<merge_index::Result<Vec<_>>>()?;
    Ok(records)
}

fn metric_of(m: MetricArg) -> Metric {
    match m {
        MetricArg::Cosine => Metric::Cosine,
        MetricArg::Euclidean => Metric::Euclidean,
    }
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let records = read_stream(&a.stream, a.config.dim)?;
    let mut cfg = a.config.apply(IndexConfig::default());
    if a.config.dim.is_none() {
        if let Some(r) = records.first() {
            cfg.dim = r.embedding.len();
        }
    }
    cfg.validate()?;
    let index_path = a.index.clone().unwrap_or_else(|| sidecar(&a.out, ".index.csv"));
    let log_path = a.step_log.clone().unwrap_or_else(|| sidecar(&a.out, ".steps.jsonl"));
    let mut log = create(&log_path)?;
    let mut write_step = |report: &merge_index::StepReport| -> merge_index::Result<()> {
        let line = serde_json::to_string(report).map_err(|e| merge_index::Error::Format(e.to_string()))?;
        writeln!(log, "{line}")?;
        Ok(())
    };
    let items = records.into_iter().map(Ok);
    let (summary, active) = match a.algo {
        Algo::Merge => {
            let (ix, summary) = train_merge(items, &cfg, |out, _| write_step(&out.report))?;
            let (cfg, fine, index) = ix.into_parts();
            if let Err(f) = fine.audit(1e-9) {
                bail!("codebook audit failed at slot {}: {}", f.index, f.reason);
            }
            ensure!(index.is_consistent(), "assignment index is inconsistent");
            merge_index::io::save_codebook(&a.out, &fine, None, &cfg)?;
            save_index(&index_path, &index)?;
            (summary, fine.active_count())
        }
        Algo::Vq => {
            let (cb, index, summary) = train_vq(items, &cfg, a.codebook_size, metric_of(a.metric), write_step)?;
            let active = cb.len();
            write_container(
                &a.out,
                &CodebookFile {
                    config: cfg.clone(),
                    dim: cfg.dim,
                    body: CodebookBody::Quantizer { layers: vec![cb] },
                },
            )?;
            save_index(&index_path, &index)?;
            (summary, active)
        }
        Algo::Rq => {
            let (rq, codes, summary) =
                train_rq(items, &cfg, a.layers, a.codebook_size, metric_of(a.metric), write_step)?;
            let active = rq.layers[0].len();
            write_container(
                &a.out,
                &CodebookFile {
                    config: cfg.clone(),
                    dim: cfg.dim,
                    body: CodebookBody::Quantizer { layers: rq.layers },
                },
            )?;
            let mut w = create(&index_path)?;
            writeln!(w, "item_id,codes")?;
            for (id, c) in codes {
                writeln!(w, "{id},{}", join_codes(&c))?;
            }
            w.flush()?;
            (summary, active)
        }
    };
    log.flush()?;
    let mut m = RunManifest::new(match a.algo {
        Algo::Merge => "train merge",
        Algo::Vq => "train vq",
        Algo::Rq => "train rq",
    });
    m.config = Some(cfg);
    m.inputs = digests(&[&a.stream])?;
    m.outputs = digests(&[&a.out, &index_path, &log_path])?;
    m.step_log = Some(log_path);
    m.summary = serde_json::to_value(&summary)?;
    m.write_for(&a.out)?;
    println!(
        "active slots: {active} ({} items seen, {} indexed, {} dropped, {} steps)",
        summary.items_seen, summary.items_indexed, summary.items_dropped, summary.steps
    );
    Ok(())
}

fn join_codes(c: &[usize]) -> String {
    c.iter().map(usize::to_string).collect::<Vec<_>>().join(":")
}

pub fn merge(a: &MergeArgs) -> Result<()> {
    let file = read_container(&a.codebook).with_context(|| format!("reading {}", a.codebook.display()))?;
    let CodebookBody::Merge { fine, .. } = &file.body else {
        bail!("{} holds a VQ/RQ codebook; only dynamic codebooks can be merged", a.codebook.display());
    };
    let mut cfg = file.config.clone();
    if let Some(l) = a.config.lambda {
        cfg.lambda = l;
    }
    if let Some(r) = a.config.silhouette_threshold {
        cfg.silhouette_threshold = r;
    }
    cfg.validate()?;
    let coarse = build_hierarchy(fine, &cfg, a.target, a.max_rounds)?;
    let out = a.out.clone().unwrap_or_else(|| a.codebook.clone());
    let mut outputs: Vec<PathBuf> = vec![out.clone()];
    if let Some(idx) = &a.index {
        let mut index = load_index(idx)?;
        index.apply_hierarchy(&coarse);
        save_index(idx, &index)?;
        outputs.push(idx.clone());
    }
    let prototypes = coarse.len();
    write_container(
        &out,
        &CodebookFile {
            config: cfg.clone(),
            dim: file.dim,
            body: CodebookBody::Merge {
                fine: fine.clone(),
                coarse: Some(coarse),
            },
        },
    )?;
    let mut m = RunManifest::new("merge");
    m.config = Some(cfg);
    if out != a.codebook {
        m.inputs = digests(&[&a.codebook])?;
    }
    m.outputs = digests(&outputs.iter().map(PathBuf::as_path).collect::<Vec<_>>())?;
    m.summary = serde_json::json!({ "target": a.target, "max_rounds": a.max_rounds, "prototypes": prototypes });
    m.write_for(&out)?;
    println!("coarse prototypes: {prototypes}");
    Ok(())
}

pub fn assign(a: &AssignArgs) -> Result<()> {
    let file = read_container(&a.codebook).with_context(|| format!("reading {}", a.codebook.display()))?;
    let mut reader = load_stream(&a.input, Some(file.dim))?;
    let mut w = create(&a.out)?;
    let mut unassigned = 0usize;
    let mut total = 0usize;
    match &file.body {
        CodebookBody::Merge { fine, coarse } => {
            writeln!(w, "item_id,coarse,fine,score")?;
            loop {
                let chunk: Vec<ItemRecord> = reader.by_ref().take(ASSIGN_CHUNK).collect::<merge_index::Result<_>>()?;
                if chunk.is_empty() {
                    break;
                }
                let m = match_batch(&chunk, fine, &file.config);
                for (i, r) in chunk.iter().enumerate() {
                    total += 1;
                    let score = m.score[i];
                    match m.best[i].filter(|_| score >= file.config.tau) {
                        Some(k) => {
                            let c = coarse.as_ref().and_then(|c| c.parent_of(k));
                            let c = c.map_or_else(|| "-1".to_string(), |c| c.to_string());
                            writeln!(w, "{},{c},{k},{score}", r.item_id)?;
                        }
                        None => {
                            unassigned += 1;
                            writeln!(w, "{},-1,-1,{score}", r.item_id)?;
                        }
                    }
                }
            }
        }
        CodebookBody::Quantizer { layers } => {
            ensure!(layers.first().is_some_and(|l| !l.is_empty()), "quantizer has no codewords");
            writeln!(w, "item_id,codes,score")?;
            for r in reader {
                let r = r?;
                total += 1;
                let codes = rq_assign(&r.embedding, layers)?;
                let (_, score) = vq_assign(&r.embedding, &layers[0])?;
                writeln!(w, "{},{},{score}", r.item_id, join_codes(&codes))?;
            }
        }
    }
    w.flush()?;
    let mut m = RunManifest::new("assign");
    m.inputs = digests(&[&a.codebook, &a.input])?;
    m.outputs = digests(&[&a.out])?;
    m.summary = serde_json::json!({ "items": total, "unassigned": unassigned });
    m.write_for(&a.out)?;
    println!("assigned {} of {total} items", total - unassigned);
    Ok(())
}

struct Evaluated {
    report: MetricReport,
    unassigned: usize,
}

fn evaluate_one(
    codebook: &CodebookFile,
    index: Option<&Path>,
    records: &[ItemRecord],
    truth: &HashMap<u64, u32>,
    a: &EvalArgs,
) -> Result<Evaluated> {
    let (snapshot, codes): (Snapshot, Vec<Option<usize>>) = match (&codebook.body, index) {
        (body, Some(path)) => {
            let index = load_index(path)?;
            let snapshot = match body {
                CodebookBody::Merge { fine, .. } => fine.snapshot(),
                CodebookBody::Quantizer { layers } => layers[0].snapshot(),
            };
            (snapshot, records.iter().map(|r| index.get(r.item_id).map(|x| x.fine)).collect())
        }
        (CodebookBody::Merge { fine, .. }, None) => {
            let mut codes = Vec::with_capacity(records.len());
            for chunk in records.chunks(ASSIGN_CHUNK) {
                let m = match_batch(chunk, fine, &codebook.config);
                codes.extend((0..chunk.len()).map(|i| m.best[i].filter(|_| m.score[i] >= codebook.config.tau)));
            }
            (fine.snapshot(), codes)
        }
        (CodebookBody::Quantizer { layers }, None) => {
            let l = layers.first().context("quantizer has no layers")?;
            let codes = records
                .iter()
                .map(|r| vq_assign(&r.embedding, l).map(|(k, _)| Some(k)))
                .collect::<merge_index::Result<_>>()?;
            (l.snapshot(), codes)
        }
    };
    let unassigned = codes.iter().filter(|c| c.is_none()).count();
    let with_truth = records.iter().map(|r| (r, truth.get(&r.item_id).copied()));
    let mut it = codes.into_iter();
    let full = build_sample(with_truth, |_| it.next().flatten());
    let sample = subsample(&full, a.sample_size, a.seed);
    ensure!(!sample.is_empty(), "no evaluable items: nothing in the stream has a code");
    let opts = EvalOptions {
        stability: (a.trials > 0).then_some((a.epsilon, a.trials, a.seed)),
        ..Default::default()
    };
    let report = evaluate(&sample, &snapshot, &opts)?;
    let counted: u64 = report.i2c.histogram.counts.iter().sum();
    ensure!(
        counted as usize + report.i2c.stale == sample.len(),
        "histogram mass {counted} + stale {} != sample {}",
        report.i2c.stale,
        sample.len()
    );
    Ok(Evaluated { report, unassigned })
}

fn write_reports(dir: &Path, e: &Evaluated) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let r = &e.report;
    let mut files = vec![
        ("i2c.csv", r.i2c.histogram.to_csv()),
        ("sizes.csv", r.sizes_csv()),
        ("buckets.csv", r.bucket_curves_csv()),
        ("summary.txt", format!("{}unassigned items       {}\n", r.summary(), e.unassigned)),
        ("report.json", serde_json::to_string_pretty(r)? + "\n"),
    ];
    if let Some(h) = &r.c2c {
        files.insert(1, ("c2c.csv", h.to_csv()));
    }
    let mut written = Vec::new();
    for (name, text) in files {
        let p = dir.join(name);
        std::fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?;
        written.push(p);
    }
    Ok(written)
}

fn comparison(a: &MetricReport, b: &MetricReport) -> String {
    let rows: Vec<(&str, Option<f64>, Option<f64>)> = vec![
        ("i2c_mean", Some(a.i2c.histogram.mean), Some(b.i2c.histogram.mean)),
        ("i2c_median", Some(a.i2c.histogram.median), Some(b.i2c.histogram.median)),
        ("c2c_mean", a.c2c.as_ref().map(|h| h.mean), b.c2c.as_ref().map(|h| h.mean)),
        ("c2c_median", a.c2c.as_ref().map(|h| h.median), b.c2c.as_ref().map(|h| h.median)),
        ("active_codewords", Some(a.active_codewords as f64), Some(b.active_codewords as f64)),
        ("max_cluster_size", Some(a.uniformity.max_size as f64), Some(b.uniformity.max_size as f64)),
        ("max_median_ratio", a.uniformity.max_median_ratio, b.uniformity.max_median_ratio),
        ("gini", Some(a.uniformity.gini), Some(b.uniformity.gini)),
        (
            "lowest_bucket_clusters",
            a.uniformity.buckets.first().map(|x| x.clusters as f64),
            b.uniformity.buckets.first().map(|x| x.clusters as f64),
        ),
    ];
    let fmt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.6}"));
    let mut s = String::from("metric,primary,compare,delta\n");
    for (name, x, y) in rows {
        let d = x.zip(y).map(|(x, y)| x - y);
        s.push_str(&format!("{name},{},{},{}\n", fmt(x), fmt(y), fmt(d)));
    }
    s
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let primary = read_container(&a.codebook).with_context(|| format!("reading {}", a.codebook.display()))?;
    let second = a
        .compare
        .as_ref()
        .map(|p| read_container(p).with_context(|| format!("reading {}", p.display())))
        .transpose()?;
    if let Some(s) = &second {
        ensure!(
            s.dim == primary.dim,
            "codebooks have different dimensions ({} vs {})",
            primary.dim,
            s.dim
        );
    }
    let records = read_stream(&a.stream, Some(primary.dim))?;
    let truth: HashMap<u64, u32> = match &a.truth {
        Some(p) => read_truth(p)?.into_iter().collect(),
        None => HashMap::new(),
    };
    let mut inputs: Vec<&Path> = vec![&a.codebook, &a.stream];
    inputs.extend(a.index.as_deref());
    inputs.extend(a.truth.as_deref());
    let first = evaluate_one(&primary, a.index.as_deref(), &records, &truth, a)?;
    let mut outputs = write_reports(&a.out_dir, &first)?;
    if let Some(s) = &second {
        inputs.extend(a.compare.as_deref());
        inputs.extend(a.compare_index.as_deref());
        let other = evaluate_one(s, a.compare_index.as_deref(), &records, &truth, a)?;
        outputs.extend(write_reports(&a.out_dir.join("compare"), &other)?);
        let p = a.out_dir.join("comparison.csv");
        std::fs::write(&p, comparison(&first.report, &other.report))?;
        outputs.push(p);
    }
    let mut m = RunManifest::new("eval");
    m.seed = Some(a.seed);
    m.inputs = digests(&inputs)?;
    m.outputs = digests(&outputs.iter().map(PathBuf::as_path).collect::<Vec<_>>())?;
    m.summary = serde_json::json!({
        "sample_size": first.report.sample_size,
        "i2c_mean": first.report.i2c.histogram.mean,
        "c2c_mean": first.report.c2c.as_ref().map(|h| h.mean),
    });
    m.write_for(&a.out_dir.join("summary.txt"))?;
    print!("{}", first.report.summary());
    Ok(())
}
