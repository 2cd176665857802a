//! Threshold metrics, ROC curve and AUC from raw scores.

use seqguard::metrics::{roc_curve, ConfusionCounts, MetricsReport, DEFAULT_THRESHOLD};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scores = [0.97, 0.91, 0.62, 0.55, 0.48, 0.40, 0.33, 0.21, 0.12, 0.05];
    let labels = [1, 1, 0, 1, 0, 1, 0, 0, 0, 0];
    let report = MetricsReport::from_scores(&scores, &labels, DEFAULT_THRESHOLD)?;
    print!("{}", report.counts.grid());
    println!(
        "accuracy {:.3} precision {:.3} recall {:.3} f1 {:.3} auc {:.3}",
        report.accuracy,
        report.precision,
        report.recall,
        report.f1,
        report.auc.unwrap_or(f64::NAN)
    );
    println!("\n{:>6} {:>6} {:>9}", "fpr", "tpr", "threshold");
    for p in roc_curve(&scores, &labels)? {
        println!("{:>6.3} {:>6.3} {:>9.3}", p.fpr, p.tpr, p.threshold);
    }

    // metrics straight from counts, for results reported only as a table
    let counts = ConfusionCounts { tp: 6, fp: 0, tn: 291, fn_: 3 };
    let m = MetricsReport::from_counts(counts, None, DEFAULT_THRESHOLD);
    println!("\nfrom counts: precision {:.3} recall {:.3} f1 {:.3}", m.precision, m.recall, m.f1);
    Ok(())
}
