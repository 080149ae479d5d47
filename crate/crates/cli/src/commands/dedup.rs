use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use dejavu_core::dedup::{caption_dedup, semantic_dedup, split_disjoint, CorpusIndex};
use dejavu_core::{EmbeddingMatrix, Error};
use serde::Deserialize;
use serde_json::json;

use crate::error::{CliError, CliResult};
use crate::output::{write_bytes, write_json};
use crate::{Cli, DedupArgs};

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CaptionLine {
    id: String,
    caption: String,
}

fn read_captions(path: &Path) -> CliResult<CorpusIndex> {
    let file = File::open(path).map_err(|e| CliError::input(path, e))?;
    let (mut ids, mut captions) = (Vec::new(), Vec::new());
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::input(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: CaptionLine =
            serde_json::from_str(&line).map_err(|e| CliError::input(path, format!("line {}: {e}", i + 1)))?;
        ids.push(parsed.id);
        captions.push(parsed.caption);
    }
    Ok(CorpusIndex::new(ids, captions)?)
}

fn id_lines(ids: &[String]) -> Vec<u8> {
    ids.iter().flat_map(|id| format!("{id}\n").into_bytes()).collect()
}

pub fn run(cli: &Cli, args: &DedupArgs) -> CliResult<()> {
    if let Some(sizes) = args.split.as_ref().filter(|s| s.len() != 3) {
        return Err(CliError::Usage(format!(
            "--split takes three sizes (A,B,public), got {}",
            sizes.len()
        )));
    }
    let corpus = read_captions(&args.captions)?;
    let mut kept = caption_dedup(&corpus);
    let after_caption = kept.len();

    if let (Some(path), Some(threshold)) = (&args.embeddings, args.threshold) {
        let m = EmbeddingMatrix::load(path)?;
        let pos: HashMap<&str, usize> = m.ids().iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        let missing: Vec<String> = kept
            .iter()
            .filter(|id| !pos.contains_key(id.as_str()))
            .cloned()
            .collect();
        if !missing.is_empty() {
            return Err(Error::Alignment {
                msg: format!("captions without embeddings in {}", path.display()),
                ids: missing,
            }
            .into());
        }
        let rows: Vec<usize> = kept.iter().map(|id| pos[id.as_str()]).collect();
        kept = semantic_dedup(&m.select(&rows).normalize()?, threshold)?;
    }
    write_bytes(&args.out, &id_lines(&kept))?;
    cli.say(format!(
        "{} records, {} after caption dedup, {} kept",
        corpus.len(),
        after_caption,
        kept.len()
    ));

    if let (Some(sizes), Some(dir)) = (&args.split, &args.split_dir) {
        let seed = cli.seed_or(None, "");
        let s = split_disjoint(&kept, [sizes[0], sizes[1], sizes[2]], seed.value)?;
        write_bytes(&dir.join("a.txt"), &id_lines(&s.a))?;
        write_bytes(&dir.join("b.txt"), &id_lines(&s.b))?;
        write_bytes(&dir.join("public.txt"), &id_lines(&s.public))?;
        write_json(
            &dir.join("split.json"),
            &json!({
                "sizes": {"a": sizes[0], "b": sizes[1], "public": sizes[2]},
                "seed": seed.value,
                "seed_source": seed.source,
                "kept_ids": kept.len(),
            }),
        )?;
        cli.say(format!(
            "split {}/{}/{} written to {} (seed {})",
            sizes[0],
            sizes[1],
            sizes[2],
            dir.display(),
            seed.value
        ));
    }
    Ok(())
}
