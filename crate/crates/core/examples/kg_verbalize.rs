//! Triples to sentences to masked pairs.
//!
//! cargo run --example kg_verbalize [TRIPLES.tsv] [TOP_N]

use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;

use carbonledger::kgverb::{
    build_corpus, mask_tokens, parse_triples, tokenize, Scope, TemplateTable,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let path = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/triples.tsv"));
    let top_n: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(2);

    let parsed = parse_triples(BufReader::new(File::open(&path)?), false)?;
    for e in &parsed.skipped {
        eprintln!("skipped: {e}");
    }
    let corpus = build_corpus(
        &parsed.triples,
        &TemplateTable::default(),
        top_n,
        Scope::PerSubject,
    );
    for (i, s) in corpus.iter().enumerate() {
        let pair = mask_tokens(&tokenize(s), 0.15, i as u64);
        println!("{s}");
        println!("  in:  {}", pair.input_text());
        println!("  out: {}", pair.target_text());
    }
    Ok(())
}
