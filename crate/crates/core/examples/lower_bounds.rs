//! Strip gap and complexified growth for `v = cos`, the sublevel exponent,
//! and a multiscale ladder on the two-torus.

use qplab::lowerbound::{
    complexified_growth_check, dyadic_deltas, epsilon_gap, multiscale_recursion, sublevel_measure, GapGrid,
    RecursionOptions,
};
use qplab::{Frequency, TrigPotential};

fn main() -> qplab::Result<()> {
    let v = TrigPotential::cosine(1.0).with_strip_width(2.0);
    let gap = epsilon_gap(&v, 0.1, &[0.0], &GapGrid::default())?;
    let lambda = 101.0 / gap.epsilon;
    let growth = complexified_growth_check(lambda, &v, &Frequency::golden(), 0.0, gap.y0, gap.epsilon, 1000)?;
    println!("epsilon {:.4} at y0 = {:.4}; lambda {lambda:.2}", gap.epsilon, gap.y0);
    println!("min margin {:.4}, per-step {}", growth.min_margin, growth.per_step_ok);

    let fit = sublevel_measure(&TrigPotential::cosine(1.0), &[1.0, 0.0], &dyadic_deltas(-10, -4), 200_000, 3)?;
    for row in &fit.rows {
        println!("E1 = {}: c0 = {:?}", row.e1, row.c0);
    }

    let opts = RecursionOptions {
        enforce_gate: false,
        ..Default::default()
    };
    let ladder = multiscale_recursion(
        50.0,
        &TrigPotential::cosine_sum_2d(1.0),
        &Frequency::default_2d(),
        0.0,
        &[100, 200, 400],
        &opts,
    )?;
    for r in &ladder.rungs {
        println!("n = {:>4}  L = {:.4} ± {:.1e}  gate {}  drop margin {:?}", r.n, r.l, r.std_error, r.gate_ok, r.drop_margin);
    }
    println!("1/2 log lambda = {:.4}", ladder.half_log_lambda);
    Ok(())
}
