use std::path::{Path, PathBuf};

use dejavu_core::audit::{find_neighbors, population_report, score_records, AuditConfig, BootstrapConfig};
use dejavu_core::metrics::rank_records;
use dejavu_core::{run_sample_audit, ObjectRule, PopulationReport};
use serde::Serialize;
use serde_json::json;

use crate::error::CliResult;
use crate::manifest::AuditManifest;
use crate::output::{write_csv, write_curve, write_json, write_jsonl, write_per_record};
use crate::{AuditArgs, Cli, SampleAuditArgs, SeedChoice};

/// Manifest settings with command-line overrides applied.
fn audit_config(manifest: &AuditManifest, args: &AuditArgs, seed: SeedChoice) -> AuditConfig {
    AuditConfig {
        k: args.k.unwrap_or(manifest.k),
        objects: match args.top_m.or(manifest.top_m) {
            Some(m) => ObjectRule::TopM { m },
            None => ObjectRule::Union,
        },
        public_set: manifest.public_set.clone(),
        bootstrap: BootstrapConfig {
            reps: args.bootstrap.unwrap_or(manifest.bootstrap.reps),
            fraction: args.frac.unwrap_or(manifest.bootstrap.fraction),
            seed: seed.value,
        },
    }
}

/// Provenance shared by every report: manifest metadata, seed and digests.
pub fn annotate_report(
    report: &mut PopulationReport,
    manifest: &AuditManifest,
    base: &Path,
    seed: SeedChoice,
) -> CliResult<()> {
    let md = &mut report.metadata;
    for (key, value) in &manifest.metadata {
        md.insert(key.clone(), value.clone());
    }
    md.insert("seed".into(), json!(seed.value));
    md.insert("seed_source".into(), json!(seed.source));
    md.insert("file_sha256".into(), json!(manifest.digests(base)?));
    md.insert("dejavu_version".into(), json!(env!("CARGO_PKG_VERSION")));
    Ok(())
}

#[derive(Serialize)]
struct TaggedNeighbors<'a> {
    model: &'static str,
    #[serde(flatten)]
    set: &'a dejavu_core::NeighborSet,
}

fn sibling(path: &Path, name: &str) -> PathBuf {
    path.parent().map_or_else(|| PathBuf::from(name), |dir| dir.join(name))
}

pub fn run(cli: &Cli, args: &AuditArgs) -> CliResult<()> {
    let (manifest, base) = AuditManifest::load(&args.dataset)?;
    let ds = manifest.load_dataset(&base)?;
    let seed = cli.seed_or(manifest.seed, "manifest");
    let cfg = audit_config(&manifest, args, seed);

    let neighbors = find_neighbors(&ds, cfg.k)?;
    let paired = score_records(&ds, &neighbors, cfg.objects)?;
    let mut report = population_report(&ds.split_name, &paired, &cfg)?;
    annotate_report(&mut report, &manifest, &base, seed)?;

    write_json(&args.out, &report)?;
    let per_record = args
        .per_record
        .clone()
        .unwrap_or_else(|| sibling(&args.out, "per_record.csv"));
    write_per_record(&per_record, &paired.rows())?;
    if let Some(path) = &args.neighbors {
        let tagged = neighbors
            .target
            .iter()
            .map(|set| TaggedNeighbors { model: "target", set })
            .chain(neighbors.reference.iter().map(|set| TaggedNeighbors {
                model: "reference",
                set,
            }));
        write_jsonl(path, tagged)?;
    }
    cli.say(report.summary_line());
    Ok(())
}

pub fn run_sample(cli: &Cli, args: &SampleAuditArgs) -> CliResult<()> {
    let (manifest, base) = AuditManifest::load(&args.dataset)?;
    let ds = manifest.load_dataset(&base)?;
    let k = args.k.unwrap_or(manifest.k);
    let top_m = args.top_m.or(manifest.top_m).unwrap_or(10);
    let out = run_sample_audit(&ds, k, top_m, args.sort, &args.grid)?;
    write_curve(&args.out, &out.curve)?;

    if let Some(path) = &args.order {
        let order = rank_records(&out.paired.target, args.sort);
        let rows = order.iter().enumerate().map(|(rank, &i)| {
            let (a, b) = (&out.paired.target[i], &out.paired.reference[i]);
            (
                rank + 1,
                a.record_id.as_str(),
                a.n_correct,
                a.min_dist,
                a.precision - b.precision,
                a.recall - b.recall,
            )
        });
        write_csv(
            path,
            &["rank", "id", "n_correct_A", "min_dist", "precision_gap", "recall_gap"],
            rows,
        )?;
    }
    write_json(
        &sibling(&args.out, "sample_audit.json"),
        &json!({
            "k": k,
            "top_m": top_m,
            "sort_key": args.sort,
            "l_grid": args.grid,
            "n_records": out.paired.len(),
            "n_excluded_empty_truth": out.n_excluded,
            "file_sha256": manifest.digests(&base)?,
            "dejavu_version": env!("CARGO_PKG_VERSION"),
        }),
    )?;
    for p in &out.curve.points {
        cli.say(format!(
            "L {:>6}  precision gap {:+.4}  recall gap {:+.4}  F gap {:+.4}",
            p.l, p.precision_gap, p.recall_gap, p.f_score_gap
        ));
    }
    Ok(())
}
