//! Replays recorded judge answers for the bundled fixture and compares them
//! with the ground truth. No request leaves the machine.

use std::path::PathBuf;

use seqguard::drain::{import_templates, parse_file, DrainConfig};
use seqguard::judge::{build_prompt, classify_remote, compare, template_table, HttpTransport, JudgeConfig, Predictions};
use seqguard::session::{build_sessions, read_label_table, windowize_all};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data");
    let parsed = parse_file(&data.join("hdfs_fixture.log"), &DrainConfig::default())?;
    let labels = read_label_table(&data.join("hdfs_fixture_labels.csv"))?;
    let windows = windowize_all(&build_sessions(&parsed.rows, &labels).sessions, 4, 4)?;
    let table = template_table(&import_templates(&data.join("hdfs_fixture_templates.csv"))?);

    let config = JudgeConfig {
        fixtures: Some(data.join("judge_fixtures")),
        ..JudgeConfig::default()
    };
    let prompts: Vec<(String, String)> = windows
        .iter()
        .map(|w| Ok((w.window_id.clone(), build_prompt(w, &table, &config.instruction)?)))
        .collect::<Result<_, seqguard::judge::JudgeError>>()?;
    println!("first prompt:\n{}\n", prompts[0].1);

    let transport = HttpTransport::new(&config)?;
    let run = classify_remote(&config, &prompts, &transport)?;
    for (v, w) in run.verdicts.iter().zip(&windows) {
        println!("{:<14} label {}  verdict {:?}", v.window_id, w.label, v.label);
    }
    let rows = compare(&[(config.model.as_str(), Predictions::Verdicts(&run.verdicts))], &windows)?;
    let m = &rows[0].metrics;
    println!("\n{}: precision {:.3} recall {:.3} f1 {:.3}", rows[0].model, m.precision, m.recall, m.f1);
    Ok(())
}
