//! Deviation-set measure along a scale ladder, and the Fourier decay of
//! `θ ↦ n⁻¹ log‖M_n(θ)‖`.

use qplab::ldt::{fourier_decay_check, scaling_table_with, DeviationOptions};
use qplab::{Frequency, TrigPotential};

fn main() -> qplab::Result<()> {
    let w = Frequency::golden();
    let v = TrigPotential::cosine(5.0);
    // A small threshold scale keeps the deviation sets visible at desk scales.
    let opts = DeviationOptions {
        threshold_scale: 0.05,
        ..Default::default()
    };
    let table = scaling_table_with(&w, 0.0, &v, 0.3, &[8, 16, 32, 64, 128], 20_000, 1, &opts)?;
    table.write_csv(std::io::stdout())?;
    println!("monotone within 3 se: {}", table.is_monotone());

    let decay = fourier_decay_check(&w, 0.0, 200, &v, 256)?;
    println!("{}", serde_json::to_string_pretty(&decay).unwrap());
    Ok(())
}
