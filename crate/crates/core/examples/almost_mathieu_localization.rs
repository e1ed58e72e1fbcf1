//! Eigenvectors of the almost-Mathieu box at λ = 5: decay rates, the
//! localized fraction, and the window bound for the best-localized states.

use qplab::greens::{build_operator, Interval};
use qplab::localization::{eigensystem, most_localized, summarize, window_bound_check};
use qplab::{Frequency, Phase, TrigPotential};

fn main() -> qplab::Result<()> {
    let lambda = 5.0;
    let v = TrigPotential::cosine(lambda);
    let w = Frequency::golden();
    let theta = Phase::scalar(0.0);
    let iv = Interval::new(-300, 300);

    let pairs = eigensystem(iv, &w, &theta, &v);
    let summary = summarize(&pairs, lambda, 0.8 * (lambda / 2.0f64).ln(), 0.95)?;
    println!("{}", serde_json::to_string_pretty(&summary).unwrap());

    let op = build_operator(iv, &w, &theta, &v);
    for (i, profile) in most_localized(&pairs, 100, 0.95, 5) {
        let b = window_bound_check(&pairs[i], &op, profile.center, 100, 0.5)?;
        println!(
            "E = {:>8.4}  center {:>4}  rate {:.3}  window {}  verified {}",
            pairs[i].energy,
            profile.center,
            profile.rate,
            b.window,
            b.verified()
        );
    }
    Ok(())
}
