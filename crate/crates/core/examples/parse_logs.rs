//! Mine event templates from an HDFS-style log.
//!
//! cargo run --example parse_logs [-- path/to/HDFS.log]

use std::path::PathBuf;

use seqguard::drain::{parse_file, DrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/hdfs_fixture.log"));
    let corpus = parse_file(&path, &DrainConfig::default())?;

    println!("{} lines parsed, {} rejected", corpus.rows.len(), corpus.rejects.len());
    println!("{:>4} {:>6}  template", "id", "lines");
    for t in corpus.tree.templates() {
        println!("{:>4} {:>6}  {}", t.event_id, t.match_count, t.text());
    }
    for r in &corpus.rejects {
        println!("rejected line {}: {}", r.line_number, r.line);
    }
    Ok(())
}
