//! Comma-separated reports with a fixed header row.

use scale_core::probes::ProbeReport;
use scale_core::trainer::EpochLog;

use crate::pipeline::SweepRow;

fn to_string(rows: Vec<Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

pub const LOSS_LOG_HEADER: &str = "epoch,mcm,set,total,lr";

pub fn loss_log(log: &[EpochLog]) -> String {
    let mut rows = vec![LOSS_LOG_HEADER.split(',').map(String::from).collect()];
    rows.extend(log.iter().map(|e| {
        vec![
            e.epoch.to_string(),
            e.mcm.to_string(),
            e.set.to_string(),
            e.total.to_string(),
            e.lr.to_string(),
        ]
    }));
    to_string(rows)
}

pub const PROBE_HEADER: &str = "kind,feature,lr,weight_decay,batch_size,optimizer,train_accuracy,eval_accuracy,best";

/// One row per grid point; `best` marks the selected one.
pub fn probe_report(report: &ProbeReport) -> String {
    let mut rows = vec![PROBE_HEADER.split(',').map(String::from).collect()];
    for (i, r) in report.rows.iter().enumerate() {
        let grid = match r.point {
            Some(p) => [
                p.lr.to_string(),
                p.weight_decay.to_string(),
                p.batch_size.to_string(),
                p.optimizer.name().to_string(),
            ],
            None => Default::default(),
        };
        let mut row = vec![report.kind.to_string(), report.feature.to_string()];
        row.extend(grid);
        row.push(r.train_accuracy.to_string());
        row.push(r.eval_accuracy.to_string());
        row.push(if i == report.best { "best" } else { "" }.to_string());
        rows.push(row);
    }
    to_string(rows)
}

/// One row per setting combination: the swept values, the final training
/// loss and the eval accuracies of the k-NN and linear probes.
pub fn sweep_table(axes: &[&str], rows: &[SweepRow]) -> String {
    let mut header: Vec<String> = axes.iter().map(|a| a.to_string()).collect();
    header.extend(["final_total", "knn_eval_accuracy", "linear_eval_accuracy"].map(String::from));
    let mut out = vec![header];
    for r in rows {
        let mut row = r.values.clone();
        row.push(r.final_total.to_string());
        row.push(r.knn_accuracy.to_string());
        row.push(r.linear_accuracy.to_string());
        out.push(row);
    }
    to_string(out)
}
