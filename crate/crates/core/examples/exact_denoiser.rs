//! How well can any denoiser do? Samples every cell with the exact
//! posterior-mean noise predictor and reports the oracle accuracies DDIM
//! reaches with it, for a few noise schedules.
//!
//! ```text
//! cargo run --release -p cullab --example exact_denoiser [samples-per-cell]
//! ```

use cullab::diffusion::{ddim_ladder, ddim_step, initial_noise, ScheduleParams};
use cullab::world::{default_universe, Condition, LayoutParams};

fn main() -> cullab::Result<()> {
    let n: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(100);
    let u = default_universe(LayoutParams::default(), 0)?;
    for beta_end in [0.02, 0.035, 0.05] {
        let sched = ScheduleParams { beta_end, ..Default::default() }.build()?;
        let ladder = ddim_ladder(sched.timesteps(), 20)?;
        let (mut worst_concept, mut worst_context) = (1.0f64, 1.0f64);
        for c in 0..u.n_concepts() {
            for k in 0..u.n_contexts() {
                let cond = Condition::new(c, k);
                let (mut hc, mut hk) = (0, 0);
                for j in 0..n {
                    let mut z = initial_noise(2, j);
                    for p in ladder.windows(2) {
                        let eps = u.posterior_mean_noise(&cond, &z, sched.alpha_bar(p[0]))?;
                        z = ddim_step(&z, &eps, p[0], p[1], &sched)?;
                    }
                    let v = u.oracle_classify(&z);
                    hc += (v.concept == c) as usize;
                    hk += (v.context == k) as usize;
                }
                worst_concept = worst_concept.min(hc as f64 / n as f64);
                worst_context = worst_context.min(hk as f64 / n as f64);
            }
        }
        println!(
            "beta_end {beta_end}: alpha_bar_T {:.4}, worst cell concept accuracy {worst_concept:.3}, context accuracy {worst_context:.3}",
            sched.alpha_bar(sched.timesteps())
        );
    }
    Ok(())
}
