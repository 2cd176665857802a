//! Synthetic HDFS-style corpora with known labels.
//!
//! Normal blocks follow the allocate / receive / respond / store lifecycle,
//! optionally followed by reads and deletion. Anomalous blocks are normal
//! blocks with one extra exception line at a random position, so a model
//! that notices that event separates the classes perfectly.

use std::collections::HashSet;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::session::round_half_up;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub sessions: usize,
    pub anomaly_rate: f64,
    pub seed: u64,
    /// Blocks whose lines are interleaved at any moment.
    pub interleave: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            sessions: 3000,
            anomaly_rate: 0.03,
            seed: 0,
            interleave: 8,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SynthCorpus {
    pub lines: Vec<String>,
    /// `(block id, is anomaly)` in order of first appearance.
    pub labels: Vec<(String, bool)>,
}

impl SynthCorpus {
    pub fn anomalous(&self) -> usize {
        self.labels.iter().filter(|l| l.1).count()
    }

    pub fn write(&self, log_path: &Path, label_path: &Path) -> io::Result<()> {
        let mut w = BufWriter::new(File::create(log_path)?);
        for line in &self.lines {
            writeln!(w, "{line}")?;
        }
        w.flush()?;
        let mut w = BufWriter::new(File::create(label_path)?);
        writeln!(w, "BlockId,Label")?;
        for (block, anomalous) in &self.labels {
            writeln!(w, "{block},{}", if *anomalous { "Anomaly" } else { "Normal" })?;
        }
        w.flush()
    }
}

fn ip(rng: &mut ChaCha8Rng) -> String {
    format!("10.{}.{}.{}", rng.random_range(250..252), rng.random_range(0..20), rng.random_range(2..255))
}

/// `(level, component, message)` for one block's lifecycle.
fn block_events(block: &str, anomalous: bool, rng: &mut ChaCha8Rng) -> Vec<(&'static str, &'static str, String)> {
    let size = rng.random_range(1_000_000..70_000_000u64);
    let replicas: Vec<String> = (0..3).map(|_| ip(rng)).collect();
    let job = rng.random_range(1..10_000u32);
    let mut events = vec![(
        "INFO",
        "dfs.FSNamesystem",
        format!(
            "BLOCK* NameSystem.allocateBlock: /user/root/rand/_temporary/_task_200811092030_{job:04}_m_{:06}_0/part-{:05}. {block}",
            job, job
        ),
    )];
    let mut receive = Vec::new();
    for r in &replicas {
        receive.push((
            "INFO",
            "dfs.DataNode$DataXceiver",
            format!("Receiving block {block} src: /{}:{} dest: /{r}:50010", ip(rng), rng.random_range(30000..60000)),
        ));
    }
    receive.shuffle(rng);
    events.extend(receive);
    let mut respond = Vec::new();
    for (k, r) in replicas.iter().enumerate() {
        respond.push((
            "INFO",
            "dfs.DataNode$PacketResponder",
            format!("PacketResponder {k} for block {block} terminating"),
        ));
        respond.push((
            "INFO",
            "dfs.DataNode$PacketResponder",
            format!("Received block {block} of size {size} from /{r}"),
        ));
    }
    respond.shuffle(rng);
    events.extend(respond);
    for r in &replicas {
        events.push((
            "INFO",
            "dfs.FSNamesystem",
            format!("BLOCK* NameSystem.addStoredBlock: blockMap updated: {r}:50010 is added to {block} size {size}"),
        ));
    }
    for _ in 0..rng.random_range(0..3) {
        let from = replicas.choose(rng).expect("three replicas");
        events.push((
            "INFO",
            "dfs.DataNode$DataXceiver",
            format!("{from}:50010 Served block {block} to /{}", ip(rng)),
        ));
    }
    if rng.random_bool(0.3) {
        let r = replicas.choose(rng).expect("three replicas");
        events.push((
            "INFO",
            "dfs.FSNamesystem",
            format!("BLOCK* NameSystem.delete: {block} is added to invalidSet of {r}:50010"),
        ));
        events.push((
            "INFO",
            "dfs.FSDataset",
            format!(
                "Deleting block {block} file /mnt/hadoop/dfs/data/current/subdir{}/{block}",
                rng.random_range(0..64)
            ),
        ));
    }
    if anomalous {
        let at = rng.random_range(1..=events.len());
        events.insert(
            at,
            (
                "WARN",
                "dfs.DataNode$DataXceiver",
                format!(
                    "writeBlock {block} received exception java.io.IOException: Connection reset by peer from /{}",
                    ip(rng)
                ),
            ),
        );
    }
    events
}

/// Builds a corpus with exactly `round_half_up(sessions * anomaly_rate)`
/// anomalous blocks.
pub fn generate(config: &SynthConfig) -> SynthCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n_anom = round_half_up(config.sessions as f64 * config.anomaly_rate).min(config.sessions);
    let mut flags: Vec<bool> = (0..config.sessions).map(|i| i < n_anom).collect();
    flags.shuffle(&mut rng);

    let mut seen = HashSet::new();
    let mut blocks = Vec::with_capacity(config.sessions);
    while blocks.len() < config.sessions {
        let id = format!("blk_{}", rng.random::<i64>());
        if seen.insert(id.clone()) {
            blocks.push(id);
        }
    }

    let mut corpus = SynthCorpus::default();
    let mut pending = blocks.iter().zip(&flags);
    let mut active: Vec<std::collections::VecDeque<(&str, &str, String)>> = Vec::new();
    let mut clock = 203_500u32;
    loop {
        while active.len() < config.interleave.max(1) {
            let Some((block, &anomalous)) = pending.next() else { break };
            corpus.labels.push((block.clone(), anomalous));
            active.push(block_events(block, anomalous, &mut rng).into());
        }
        if active.is_empty() {
            break;
        }
        let pick = rng.random_range(0..active.len());
        let (level, component, message) = active[pick].pop_front().expect("non-empty queue");
        if active[pick].is_empty() {
            active.swap_remove(pick);
        }
        clock += rng.random_range(0..2);
        let pid = rng.random_range(13..40_000);
        corpus
            .lines
            .push(format!("081109 {clock:06} {pid} {level} {component}: {message}"));
    }
    corpus
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drain::{split_header, HeaderPattern};
    use crate::session::extract_block_id;

    #[test]
    fn anomaly_count_is_exact() {
        let c = generate(&SynthConfig {
            sessions: 200,
            anomaly_rate: 0.03,
            ..SynthConfig::default()
        });
        assert_eq!(c.labels.len(), 200);
        assert_eq!(c.anomalous(), 6);
    }

    #[test]
    fn lines_carry_hdfs_headers_and_blocks() {
        let c = generate(&SynthConfig {
            sessions: 20,
            ..SynthConfig::default()
        });
        let pattern = HeaderPattern::hdfs();
        let blocks: HashSet<&str> = c.labels.iter().map(|l| l.0.as_str()).collect();
        for (i, line) in c.lines.iter().enumerate() {
            let raw = split_header(line, i + 1, &pattern).unwrap();
            let block = extract_block_id(&raw.content).unwrap();
            assert!(blocks.contains(block.as_str()));
        }
    }

    #[test]
    fn generation_is_seeded() {
        let cfg = SynthConfig {
            sessions: 30,
            ..SynthConfig::default()
        };
        assert_eq!(generate(&cfg), generate(&cfg));
        assert_ne!(generate(&cfg), generate(&SynthConfig { seed: 1, ..cfg.clone() }));
    }
}
