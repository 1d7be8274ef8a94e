//! Writes a synthetic labeled/unlabeled split over the bundled lexicon.
//!
//! cargo run -p euphem-core --example synth_dataset -- <out_dir> [seed]

use std::path::PathBuf;

use euphem_core::corpus::{Lexicon, RawRecord};
use euphem_core::synthetic;
use euphem_core::util;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().ok_or("usage: synth_dataset <out_dir> [seed]")?);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0);
    let corpus = synthetic::full_scale(&Lexicon::bundled(), seed);
    let labeled_test: Vec<RawRecord> = corpus
        .test
        .iter()
        .zip(&corpus.test_labels)
        .map(|(r, &y)| RawRecord {
            label: Some(i64::from(y)),
            ..r.clone()
        })
        .collect();
    util::write_atomic(&out.join("train.jsonl"), &util::to_json_lines(&corpus.train)?)?;
    util::write_atomic(&out.join("test.jsonl"), &util::to_json_lines(&corpus.test)?)?;
    util::write_atomic(&out.join("test_labels.jsonl"), &util::to_json_lines(&labeled_test)?)?;
    println!("{} train / {} test records -> {}", corpus.train.len(), corpus.test.len(), out.display());
    Ok(())
}
