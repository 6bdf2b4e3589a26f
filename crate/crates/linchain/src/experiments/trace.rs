//! CSV emission for training traces and comparison tables.
//!
//! Floats are rendered with Rust's shortest-round-trip formatting, so
//! every numeric field parses back to the exact written `f64` (including
//! `NaN`/`inf` from diverged runs). The wall-time column is excluded from
//! all determinism guarantees.

use std::fmt::Write as _;

use crate::training::{ComparisonReport, TrainRecord};

/// Fixed header: `epoch,step,train_loss,eval_loss,grad_norm_A,
/// grad_norm_B,grad_norm_W1..Wn,wall_time_s`.
pub fn trace_header(num_chain: usize) -> String {
    let mut h = String::from("epoch,step,train_loss,eval_loss,grad_norm_A,grad_norm_B");
    for i in 1..=num_chain {
        let _ = write!(h, ",grad_norm_W{i}");
    }
    h.push_str(",wall_time_s");
    h
}

pub fn trace_to_csv(records: &[TrainRecord], num_chain: usize) -> String {
    let mut out = trace_header(num_chain);
    out.push('\n');
    for r in records {
        let _ = write!(
            out,
            "{},{},{},{},{},{}",
            r.epoch,
            r.step,
            r.train_loss,
            r.eval_loss,
            r.grad_norms.get("A").copied().unwrap_or(f64::NAN),
            r.grad_norms.get("B").copied().unwrap_or(f64::NAN),
        );
        for i in 1..=num_chain {
            let _ = write!(
                out,
                ",{}",
                r.grad_norms.get(&format!("W{i}")).copied().unwrap_or(f64::NAN)
            );
        }
        let _ = writeln!(out, ",{}", r.wall_time_s);
    }
    out
}

/// One row per (method, seed). `epochs_to_threshold` is empty when the
/// threshold was never reached.
pub fn comparison_to_csv(report: &ComparisonReport) -> String {
    let mut out = String::from(
        "method,config_index,seed,final_eval_loss,auc,epochs_to_threshold,diverged,batch_order_hash\n",
    );
    for c in &report.cells {
        let epochs = c
            .epochs_to_threshold
            .map(|e| e.to_string())
            .unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{:016x}",
            c.method,
            c.config_index,
            c.seed,
            c.final_eval_loss,
            c.auc,
            epochs,
            c.diverged,
            c.batch_order_hash
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn record(epoch: usize) -> TrainRecord {
        let mut grad_norms = BTreeMap::new();
        grad_norms.insert("A".to_string(), 0.1 + epoch as f64);
        grad_norms.insert("B".to_string(), 0.2);
        grad_norms.insert("W1".to_string(), 1.0 / 3.0);
        TrainRecord {
            epoch,
            step: epoch * 4,
            train_loss: 1.0 / (epoch as f64 + 1.0),
            eval_loss: 2.0 / (epoch as f64 + 1.0),
            grad_norms,
            wall_time_s: 0.5,
        }
    }

    #[test]
    fn header_matches_contract() {
        assert_eq!(
            trace_header(2),
            "epoch,step,train_loss,eval_loss,grad_norm_A,grad_norm_B,grad_norm_W1,grad_norm_W2,wall_time_s"
        );
    }

    #[test]
    fn numeric_fields_round_trip_exactly() {
        let csv = trace_to_csv(&[record(1), record(2)], 1);
        let mut lines = csv.lines();
        let header = lines.next().unwrap();
        assert_eq!(header.split(',').count(), 8);
        for (line, epoch) in lines.zip([1usize, 2]) {
            let fields: Vec<&str> = line.split(',').collect();
            assert_eq!(fields.len(), 8);
            let train: f64 = fields[2].parse().unwrap();
            assert_eq!(train.to_bits(), (1.0 / (epoch as f64 + 1.0)).to_bits());
            let norm_w1: f64 = fields[6].parse().unwrap();
            assert_eq!(norm_w1.to_bits(), (1.0f64 / 3.0).to_bits());
        }
    }

    #[test]
    fn non_finite_losses_survive_the_round_trip() {
        let mut r = record(1);
        r.train_loss = f64::NAN;
        r.eval_loss = f64::INFINITY;
        let csv = trace_to_csv(&[r], 1);
        let line = csv.lines().nth(1).unwrap();
        let fields: Vec<&str> = line.split(',').collect();
        assert!(fields[2].parse::<f64>().unwrap().is_nan());
        assert!(fields[3].parse::<f64>().unwrap().is_infinite());
    }
}
