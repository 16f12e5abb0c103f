//! Finite-difference check of every model gradient on random instances.
//!
//! ```bash
//! cargo run --release -p ficg --example gradient_check -- 20
//! ```

use ficg::encoder::EncoderOptions;
use ficg::gradcheck::{check_gradients, random_instance, DEFAULT_STEP, DEFAULT_TOLERANCE};
use ficg::model::AblationMode;

fn main() {
    let n: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(20);
    let mut worst = 0.0f64;
    for seed in 0..n {
        let inst = random_instance(seed, 8, 3, 3, EncoderOptions::default());
        let r = check_gradients(&inst.sample(), &inst.params, AblationMode::Full, DEFAULT_STEP)
            .expect("instance is well-formed");
        println!(
            "seed {seed:>3}  J={}  params={:>5}  max rel err {:.3e}  ({} [{}]: analytic {:.6e}, numeric {:.6e})",
            inst.history.len(),
            r.n_checked,
            r.max_rel_error,
            r.worst_tensor,
            r.worst_index,
            r.worst_analytic,
            r.worst_numeric
        );
        worst = worst.max(r.max_rel_error);
    }
    let verdict = if worst < DEFAULT_TOLERANCE { "PASS" } else { "FAIL" };
    println!("worst {worst:.3e} (tolerance {DEFAULT_TOLERANCE:e}): {verdict}");
}
