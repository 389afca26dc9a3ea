//! Confusion matrix, ROC points and the JSON report for a handful of scores.

use volt3d::metrics::{confusion, roc_auc, MetricsReport};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scores = [0.9, 0.8, 0.7, 0.5, 0.5, 0.4, 0.3, 0.1];
    let labels = [1, 1, 0, 1, 0, 0, 1, 0];
    println!("{:?}", confusion(&scores, &labels, 0.5)?);
    let (auc, points) = roc_auc(&scores, &labels)?;
    println!("auc {auc}");
    for (fpr, tpr) in points {
        println!("  fpr {fpr:.3}  tpr {tpr:.3}");
    }
    println!("{}", MetricsReport::compute(&scores, &labels, 0.5)?.to_json());
    println!("{}", MetricsReport::compute(&[0.2, 0.7], &[1, 1], 0.5)?.to_json());
    Ok(())
}
