//! `L_n(E)` across the almost-Mathieu spectrum, compared with `log(λ/2)`.

use qplab::lyapunov::{lyapunov_n, write_csv, Sampler};
use qplab::{Frequency, TrigPotential};

fn main() -> qplab::Result<()> {
    let lambda = 5.0;
    let v = TrigPotential::cosine(lambda);
    let w = Frequency::golden();
    let sampler = Sampler::Grid { points: 200 };
    let rows: Vec<_> = (0..15)
        .map(|i| lyapunov_n(&w, -7.0 + i as f64, 1000, &v, &sampler))
        .collect();
    println!("log(lambda/2) = {:.4}", (lambda / 2.0f64).ln());
    write_csv(&rows, std::io::stdout())
}
