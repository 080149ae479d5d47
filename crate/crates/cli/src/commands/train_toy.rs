use std::fs;
use std::path::Path;

use dejavu_core::toy::{run_experiment, ExperimentConfig, ExperimentRun};

use crate::commands::audit::annotate_report;
use crate::error::{CliError, CliResult};
use crate::manifest::{AuditManifest, BootstrapSettings};
use crate::output::{write_csv, write_curve, write_json, write_per_record};
use crate::{Cli, SeedChoice, TrainToyArgs};

const SUMMARY_HEADER: [&str; 12] = [
    "label",
    "train_size",
    "mask_ratio",
    "logit_scale",
    "weight_decay",
    "epochs",
    "ppg",
    "prg",
    "aucg",
    "aucg_std",
    "final_target_loss",
    "validation_loss",
];

/// Writes the run's inputs as an audit directory and returns its manifest.
fn write_dataset(run: &ExperimentRun, cfg: &ExperimentConfig, dir: &Path) -> CliResult<AuditManifest> {
    let ds = &run.dataset;
    let manifest = AuditManifest {
        split: ds.split_name.clone(),
        text_target: "text_target.json".into(),
        text_reference: "text_reference.json".into(),
        public_target: "public_target.json".into(),
        public_reference: "public_reference.json".into(),
        split_annotations: "split_annotations.jsonl".into(),
        public_annotations: "public_annotations.jsonl".into(),
        k: cfg.audit.k,
        top_m: cfg.audit.objects.top_m(),
        bootstrap: BootstrapSettings {
            reps: cfg.audit.bootstrap.reps,
            fraction: cfg.audit.bootstrap.fraction,
        },
        seed: Some(cfg.audit.bootstrap.seed),
        public_set: cfg.audit.public_set.clone(),
        metadata: [("label".to_string(), serde_json::json!(run.label))].into(),
    };
    ds.text_target.save(dir.join(&manifest.text_target))?;
    ds.text_reference.save(dir.join(&manifest.text_reference))?;
    ds.public_target.save(dir.join(&manifest.public_target))?;
    ds.public_reference.save(dir.join(&manifest.public_reference))?;
    ds.ground_truth.save(dir.join(&manifest.split_annotations))?;
    ds.public_annotations.save(dir.join(&manifest.public_annotations))?;
    manifest.save(&dir.join("manifest.json"))?;
    Ok(manifest)
}

fn write_loss(run: &ExperimentRun, path: &Path) -> CliResult<()> {
    let (t, r) = (&run.target, &run.reference);
    let rows = (0..t.loss_trace.len()).map(|e| {
        (
            e + 1,
            t.loss_trace[e],
            t.param_norm_trace[e],
            r.loss_trace.get(e).copied(),
            r.param_norm_trace.get(e).copied(),
        )
    });
    write_csv(
        path,
        &[
            "epoch",
            "target_loss",
            "target_param_norm",
            "reference_loss",
            "reference_param_norm",
        ],
        rows,
    )
}

pub fn run(cli: &Cli, args: &TrainToyArgs) -> CliResult<()> {
    let text = fs::read_to_string(&args.config).map_err(|e| CliError::input(&args.config, e))?;
    let mut cfg: ExperimentConfig =
        serde_json::from_str(&text).map_err(|e| CliError::input(&args.config, format!("invalid config: {e}")))?;
    let seed = match cli.seed {
        Some(s) => {
            cfg.corpus.seed = s;
            cfg.split_seed = s;
            cfg.train.seed = s;
            cfg.audit.bootstrap.seed = s;
            SeedChoice {
                value: s,
                source: "flag",
            }
        }
        None => SeedChoice {
            value: cfg.train.seed,
            source: "config",
        },
    };

    let runs = run_experiment(&cfg)?;
    fs::create_dir_all(&args.out).map_err(|e| CliError::output(&args.out, e))?;
    write_json(&args.out.join("config.json"), &cfg)?;

    let mut summary = Vec::new();
    for run in &runs {
        let dir = args.out.join(&run.label);
        fs::create_dir_all(&dir).map_err(|e| CliError::output(&dir, e))?;
        let manifest = write_dataset(run, &cfg, &dir)?;

        let mut report = run.report.clone();
        annotate_report(
            &mut report,
            &manifest,
            &dir,
            SeedChoice {
                value: cfg.audit.bootstrap.seed,
                source: seed.source,
            },
        )?;
        report.metadata.insert(
            "train_config".into(),
            serde_json::to_value(&run.train_config).expect("config serializes"),
        );
        report
            .metadata
            .insert("train_size".into(), serde_json::json!(run.train_size));
        write_json(&dir.join("report.json"), &report)?;
        write_per_record(&dir.join("per_record.csv"), &run.paired.rows())?;
        write_loss(run, &dir.join("loss.csv"))?;
        if let Some(sample) = &run.sample {
            write_curve(&dir.join("curve.csv"), &sample.curve)?;
        }

        let tc = &run.train_config;
        summary.push((
            run.label.clone(),
            run.train_size,
            tc.mask_ratio,
            tc.logit_scale,
            tc.weight_decay,
            tc.epochs,
            report.ppg,
            report.prg,
            report.aucg,
            report.bootstrap.aucg.std,
            run.target.loss_trace.last().copied(),
            run.validation_loss,
        ));
        cli.say(format!("{:<12} {}", run.label, report.summary_line()));
    }
    write_csv(&args.out.join("summary.csv"), &SUMMARY_HEADER, summary)?;
    Ok(())
}
