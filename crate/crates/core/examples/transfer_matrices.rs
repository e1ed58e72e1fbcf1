//! Long cocycle products without overflow, and the determinant identity
//! linking their entries to box determinants.

use qplab::transfer::{cocycle, cocycle_trace, verify_det_identity};
use qplab::{Frequency, Phase, TrigPotential};

fn main() {
    let w = Frequency::golden();
    let v = TrigPotential::cosine(5.0);
    let theta = Phase::scalar(0.2);

    for n in [10, 1_000, 100_000] {
        let m = cocycle(&w, &theta, 0.5, n, &v);
        println!("n = {n:>6}  log||M_n|| = {:>12.4}  per step = {:.5}", m.log_norm, m.exponent());
    }

    let trace = cocycle_trace(&w, &theta, 0.5, 8, &v);
    println!("first prefixes: {:?}", trace.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>());

    let residual = verify_det_identity(40, &w, &theta, 0.5, &v);
    println!("determinant identity residual at n = 40: {residual:.2e}");
}
