//! Box Green's functions by two routes, their decay, and a long interval
//! assembled from windows.

use qplab::greens::{decay_fit, green_cramer, green_solve, measured_window_rate, pave_direct, Interval, PaveOptions};
use qplab::{Frequency, Phase, TrigPotential};

fn main() -> qplab::Result<()> {
    let w = Frequency::golden();
    let v = TrigPotential::cosine(10.0);
    let theta = Phase::scalar(0.0);
    let e = 13.0;

    let iv = Interval::new(1, 120);
    let g = green_solve(iv, &w, &theta, e, &v)?;
    let c = green_cramer(iv, &w, &theta, e, &v, 1, 120)?;
    println!("G(1,120): solve {:.6}  cramer {:.6}", g.get(1, 120).log_mag(), c.log_mag());
    let fit = decay_fit(&g, 12)?;
    println!("decay rate {:.4} (r2 {:.4})", fit.rate, fit.r2);

    let big = Interval::new(1, 600);
    let rate = measured_window_rate(big, 50, &w, &theta, e, &v)?;
    let paved = pave_direct(big, 50, &w, &theta, e, &v, rate, &PaveOptions::default())?;
    println!("{}", serde_json::to_string_pretty(&paved.certificate).unwrap());
    Ok(())
}
