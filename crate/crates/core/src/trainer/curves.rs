use std::fs;
use std::path::Path;

use super::{EpochRecord, TrainError};

pub const CURVES_HEADER: &str = "epoch,split,loss,accuracy";

/// One row of a curves CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub accuracy: f64,
}

/// `x` rounded to 6 significant digits, in its shortest decimal form.
pub fn format_sig6(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    let rounded: f64 = format!("{x:.5e}").parse().expect("valid float");
    rounded.to_string()
}

/// A `train` row per epoch, followed by a `val` row when validation ran.
pub fn curves_to_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from(CURVES_HEADER);
    out.push('\n');
    for r in history {
        out += &format!("{},train,{},{}\n", r.epoch, format_sig6(r.train_loss), format_sig6(r.train_accuracy));
        if let (Some(l), Some(a)) = (r.val_loss, r.val_accuracy) {
            out += &format!("{},val,{},{}\n", r.epoch, format_sig6(l), format_sig6(a));
        }
    }
    out
}

pub fn export_curves(history: &[EpochRecord], path: impl AsRef<Path>) -> Result<(), TrainError> {
    fs::write(path, curves_to_csv(history))?;
    Ok(())
}

pub fn parse_curves(text: &str) -> Result<Vec<CurveRow>, TrainError> {
    let mut lines = text.lines();
    if lines.next() != Some(CURVES_HEADER) {
        return Err(TrainError::InvalidConfig(format!("curves must start with '{CURVES_HEADER}'")));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let bad = || TrainError::InvalidConfig(format!("curves line {}: '{line}'", i + 2));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(bad());
            }
            Ok(CurveRow {
                epoch: f[0].parse().map_err(|_| bad())?,
                split: f[1].to_string(),
                loss: f[2].parse().map_err(|_| bad())?,
                accuracy: f[3].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(format_sig6(0.123456789), "0.123457");
        assert_eq!(format_sig6(1.0), "1");
        assert_eq!(format_sig6(123456789.0), "123457000");
        assert_eq!(format_sig6(1.234567e-9), "0.00000000123457");
    }

    #[test]
    fn round_trip() {
        let history = vec![
            EpochRecord {
                epoch: 0,
                train_loss: 0.7,
                train_accuracy: 0.5,
                val_loss: Some(0.69),
                val_accuracy: Some(0.25),
            },
            EpochRecord {
                epoch: 1,
                train_loss: 0.6,
                train_accuracy: 0.75,
                val_loss: None,
                val_accuracy: None,
            },
        ];
        let csv = curves_to_csv(&history);
        assert_eq!(csv, "epoch,split,loss,accuracy\n0,train,0.7,0.5\n0,val,0.69,0.25\n1,train,0.6,0.75\n");
        let rows = parse_curves(&csv).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[1].split, "val");
        assert!(parse_curves("a,b\n").is_err());
        assert!(parse_curves("epoch,split,loss,accuracy\n0,train,x,1\n").is_err());
    }
}
