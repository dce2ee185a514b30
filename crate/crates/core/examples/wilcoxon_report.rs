//! Paired comparison of two methods' per-recording errors, and the
//! rate-error summary table built from them.

use chestsep::metrics::{self, Comparison, RateSample};

fn main() -> chestsep::Result<()> {
    let truth = [20.0, 22.5, 18.0, 30.1, 25.2, 19.4, 27.7, 33.0];
    let good = [20.4, 22.1, 18.2, 29.0, 25.9, 19.1, 27.5, 33.6];
    let poor = [23.0, 20.0, 14.5, 26.2, 25.0, 22.8, 31.0, 36.4];
    let err = |est: &[f64]| -> Vec<f64> { est.iter().zip(&truth).map(|(e, t)| (e - t).abs()).collect() };

    let sr = metrics::signed_rank(&err(&poor), &err(&good))?;
    println!(
        "W+ = {}, n = {}, one-sided p = {:.5} ({})",
        sr.w_plus,
        sr.n,
        sr.p_value,
        if sr.exact { "exact" } else { "normal approximation" }
    );

    let mut samples = Vec::new();
    for (name, est) in [("good", &good), ("poor", &poor)] {
        for (e, t) in est.iter().zip(&truth) {
            samples.push(RateSample {
                method: name.to_string(),
                estimate: *e,
                truth: *t,
            });
        }
    }
    let report = metrics::rate_error_report(&samples);
    for m in &report.rows {
        println!("{:<6} median {:.3}  IQR {:.3}", m.method, m.median, m.iqr);
    }
    for t in &report.tests {
        let p = match t.result {
            Comparison::PValue(p) => format!("{p:.5}"),
            Comparison::Insufficient(p) => format!("{p:.5} (insufficient n)"),
            Comparison::Degenerate => "degenerate".into(),
        };
        println!("{} < {}: p = {p}", t.better, t.worse);
    }
    Ok(())
}
