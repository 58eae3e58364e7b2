//! DP-AdamW, DP-Adam and DP-SGD on an ill-conditioned quadratic at a few
//! noise levels.
use dpalign::optim::{DpOptimizer, DpOptimizerConfig, GradInput, Variant};
use dpalign::params::{GradSet, ParamSet};
use dpalign::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn run(variant: Variant, sigma: f64, denom_epsilon: f64) -> dpalign::Result<f64> {
    let curv = [0.1, 1.0, 10.0];
    let config = DpOptimizerConfig {
        variant,
        learning_rate: if variant == Variant::DpSgd { 0.05 } else { 0.02 },
        clip_norm: 1.0,
        noise_multiplier: sigma,
        denom_epsilon,
        ..DpOptimizerConfig::default()
    };
    let mut p = ParamSet::new();
    p.insert("x", Tensor::vector(vec![1.0; 3])?)?;
    let mut opt = DpOptimizer::new(config, &p, ChaCha8Rng::seed_from_u64(0))?;
    for _ in 0..500 {
        let g: Vec<f64> = p.get("x").unwrap().data().iter().zip(curv).map(|(x, a)| a * x).collect();
        p = opt.step(&p, GradInput::Batch(&GradSet::from_tensors([("x", Tensor::vector(g)?)])))?.0;
    }
    Ok(p.get("x").unwrap().data().iter().zip(curv).map(|(x, a)| 0.5 * a * x * x).sum())
}

fn main() -> dpalign::Result<()> {
    println!("final loss after 500 steps (start 5.55)");
    // With the noise-corrected second moment the denominator can collapse to
    // the stability constant, so its size matters once sigma > 0.
    for denom in [1e-8, 1e-2] {
        println!("\ndenominator constant {denom:e}");
        println!("{:>6} {:>14} {:>14} {:>10}", "sigma", "DP-AdamW", "DP-Adam", "DP-SGD");
        for sigma in [0.0, 0.5, 1.0, 2.0] {
            println!(
                "{sigma:>6} {:>14.5} {:>14.5} {:>10.5}",
                run(Variant::DpAdamw, sigma, denom)?,
                run(Variant::DpAdam, sigma, denom)?,
                run(Variant::DpSgd, sigma, denom)?
            );
        }
    }
    Ok(())
}
