use dejavu_core::embedding_store::{load_annotations, UNIT_NORM_TOL};
use dejavu_core::{EmbeddingMatrix, Error};
use serde::Serialize;

use crate::error::CliResult;
use crate::manifest::sha256_file;
use crate::output::write_json;
use crate::{Cli, IngestArgs};

#[derive(Debug, Serialize)]
struct IngestSummary {
    file: String,
    sha256: String,
    n: usize,
    d: usize,
    min_norm: f64,
    mean_norm: f64,
    max_norm: f64,
    zero_rows: usize,
    /// Rows whose norm is more than the unit tolerance away from 1.
    non_unit_rows: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    annotated: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    distinct_labels: Option<usize>,
}

pub fn run(cli: &Cli, args: &IngestArgs) -> CliResult<()> {
    let m = EmbeddingMatrix::load(&args.embeddings)?;
    let norms: Vec<f64> = m.rows().map(|(_, r)| dejavu_core::vector::norm_f64(r)).collect();
    let n = norms.len();
    let mut summary = IngestSummary {
        file: args.embeddings.display().to_string(),
        sha256: sha256_file(&args.embeddings)?,
        n,
        d: m.dim(),
        min_norm: norms.iter().copied().fold(f64::INFINITY, f64::min),
        mean_norm: norms.iter().sum::<f64>() / n.max(1) as f64,
        max_norm: norms.iter().copied().fold(0.0, f64::max),
        zero_rows: norms.iter().filter(|&&x| x == 0.0).count(),
        non_unit_rows: norms.iter().filter(|&&x| (x - 1.0).abs() > UNIT_NORM_TOL).count(),
        annotated: None,
        distinct_labels: None,
    };
    if n == 0 {
        summary.min_norm = 0.0;
    }

    if let Some(path) = &args.annotations {
        let table = load_annotations(path)?;
        let missing: Vec<String> = m.ids().iter().filter(|id| !table.contains(id)).cloned().collect();
        if !missing.is_empty() {
            return Err(Error::Alignment {
                msg: format!("ids without annotations in {}", path.display()),
                ids: missing,
            }
            .into());
        }
        let labels: std::collections::BTreeSet<&String> = table.iter().flat_map(|(_, s)| s.iter()).collect();
        summary.annotated = Some(table.len());
        summary.distinct_labels = Some(labels.len());
    }

    if args.check {
        // Audits normalize every row, which fails on zero rows.
        m.normalize()?;
    }
    if let Some(out) = &args.out {
        write_json(out, &summary)?;
    }
    cli.say(serde_json::to_string_pretty(&summary).expect("summary serializes"));
    Ok(())
}
