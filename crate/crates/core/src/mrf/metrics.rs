use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamMetrics {
    pub mape_percent: f64,
    /// Signed, `(pred - true) / true`.
    pub mpe_percent: f64,
    pub rmse_ms: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    pub t1: ParamMetrics,
    pub t2: ParamMetrics,
}

fn param_metrics(pairs: impl Iterator<Item = (f64, f64)>, n: usize) -> Result<ParamMetrics> {
    let (mut ape, mut pe, mut se) = (0.0, 0.0, 0.0);
    for (i, (p, t)) in pairs.enumerate() {
        if t == 0.0 {
            return Err(Error::ZeroTarget(i));
        }
        let rel = (p - t) / t;
        ape += rel.abs();
        pe += rel;
        se += (p - t) * (p - t);
    }
    let n = n as f64;
    Ok(ParamMetrics {
        mape_percent: 100.0 * ape / n,
        mpe_percent: 100.0 * pe / n,
        rmse_ms: (se / n).sqrt(),
    })
}

/// MAPE, MPE and RMSE for T1 and T2 independently. Pairs are `(t1_ms, t2_ms)`.
pub fn evaluate(preds: &[(f64, f64)], targets: &[(f64, f64)]) -> Result<MetricsReport> {
    if preds.len() != targets.len() {
        return Err(Error::LengthMismatch {
            expected: targets.len(),
            actual: preds.len(),
        });
    }
    if preds.is_empty() {
        return Err(Error::Empty("prediction set"));
    }
    let n = preds.len();
    Ok(MetricsReport {
        n,
        t1: param_metrics(preds.iter().zip(targets).map(|(p, t)| (p.0, t.0)), n)?,
        t2: param_metrics(preds.iter().zip(targets).map(|(p, t)| (p.1, t.1)), n)?,
    })
}

impl MetricsReport {
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<10}|{:>10} |{:>10}", "", "T1", "T2");
        let _ = writeln!(
            s,
            "{:<10}|{:>10.2} |{:>10.2}",
            "MAPE (%)", self.t1.mape_percent, self.t2.mape_percent
        );
        let _ = writeln!(
            s,
            "{:<10}|{:>10.2} |{:>10.2}",
            "MPE (%)", self.t1.mpe_percent, self.t2.mpe_percent
        );
        let _ = writeln!(
            s,
            "{:<10}|{:>10.1} |{:>10.1}",
            "RMSE (ms)", self.t1.rmse_ms, self.t2.rmse_ms
        );
        s
    }
}

/// Side-by-side float vs quantized table with quantized/float MAPE ratios.
pub fn comparison_table(float: &MetricsReport, quantized: &MetricsReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<10}|{:>10} {:>10} |{:>10} {:>10}",
        "", "T1 float", "T1 quant", "T2 float", "T2 quant"
    );
    let row = |s: &mut String, name: &str, f: fn(&ParamMetrics) -> f64| {
        let _ = writeln!(
            s,
            "{:<10}|{:>10.2} {:>10.2} |{:>10.2} {:>10.2}",
            name,
            f(&float.t1),
            f(&quantized.t1),
            f(&float.t2),
            f(&quantized.t2)
        );
    };
    row(&mut s, "MAPE (%)", |m| m.mape_percent);
    row(&mut s, "MPE (%)", |m| m.mpe_percent);
    row(&mut s, "RMSE (ms)", |m| m.rmse_ms);
    let _ = writeln!(
        s,
        "MAPE ratio quant/float: T1 {:.3}, T2 {:.3}",
        quantized.t1.mape_percent / float.t1.mape_percent,
        quantized.t2.mape_percent / float.t2.mape_percent
    );
    s
}
