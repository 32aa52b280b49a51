//! CSV and text writers. Numbers use Rust's shortest round-trip formatting so
//! identical runs produce identical bytes.

use std::fs;
use std::path::Path;

use gr2_core::dynamics::Trajectory;
use gr2_core::learning::MetricRow;

use crate::error::{Gr2Error, Result};

pub const METRICS_HEADER: [&str; 9] = [
    "iteration",
    "step",
    "agent",
    "mean_action",
    "mean_reward",
    "loss_q",
    "loss_pi",
    "loss_rho",
    "loss_aux",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub(crate) fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let err = |source| Gr2Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(&r).map_err(err)?;
    }
    w.flush().map_err(|e| Gr2Error::io(path, e))
}

pub fn write_metrics(path: &Path, rows: &[MetricRow]) -> Result<()> {
    write_csv(
        path,
        &METRICS_HEADER,
        rows.iter().map(|r| {
            vec![
                r.iteration.to_string(),
                r.step.to_string(),
                r.agent.to_string(),
                r.mean_action.to_string(),
                r.mean_reward.to_string(),
                opt(r.loss_q),
                opt(r.loss_pi),
                opt(r.loss_rho),
                opt(r.loss_aux),
            ]
        }),
    )
}

/// Trajectory CSV `t,alpha,beta[,lyapunov]` at 17 significant digits, keeping
/// every `stride`-th point and the last one.
pub fn write_trajectory(path: &Path, traj: &Trajectory, stride: usize) -> Result<()> {
    let stride = stride.max(1);
    let n = traj.len();
    let f = |x: f64| format!("{x:.16e}");
    let header: &[&str] = if traj.lyapunov_values.is_some() {
        &["t", "alpha", "beta", "lyapunov"]
    } else {
        &["t", "alpha", "beta"]
    };
    let rows = (0..n).filter(|i| i % stride == 0 || i + 1 == n).map(|i| {
        let p = traj.points[i];
        let mut r = vec![f(traj.times[i]), f(p.alpha()), f(p.beta())];
        if let Some(l) = &traj.lyapunov_values {
            r.push(f(l[i]));
        }
        r
    });
    write_csv(path, header, rows)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Gr2Error::io(path, e))
}

pub fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Gr2Error::io(path, e))
}

/// Linear-interpolation quantile of unsorted data; NaN for empty input.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(quantile(&[1.0, 2.0, 3.0, 4.0, 5.0], 0.25), 2.0);
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn median_ignores_order() {
        let a = [5.0, -1.0, 3.5, 2.0, 9.0, 0.1];
        let mut b = a;
        b.reverse();
        assert_eq!(median(&a), median(&b));
        assert_eq!(quantile(&a, 0.75), quantile(&b, 0.75));
    }
}
