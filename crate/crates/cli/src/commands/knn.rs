use std::io::Write;

use dejavu_core::{batch_top_k, EmbeddingMatrix};

use crate::error::{CliError, CliResult};
use crate::output::write_jsonl;
use crate::{Cli, KnnArgs};

pub fn run(cli: &Cli, args: &KnnArgs) -> CliResult<()> {
    let queries = EmbeddingMatrix::load(&args.queries)?.normalize()?;
    let public = EmbeddingMatrix::load(&args.public)?.normalize()?;
    let sets = batch_top_k(&queries, &public, args.k)?;
    match &args.out {
        Some(path) => {
            write_jsonl(path, &sets)?;
            cli.say(format!(
                "{} neighbor sets (k = {}) written to {}",
                sets.len(),
                args.k,
                path.display()
            ));
        }
        None => {
            let mut out = std::io::stdout().lock();
            for s in &sets {
                serde_json::to_writer(&mut out, s).expect("neighbor set serializes");
                out.write_all(b"\n").map_err(|e| CliError::output("<stdout>", e))?;
            }
        }
    }
    Ok(())
}
