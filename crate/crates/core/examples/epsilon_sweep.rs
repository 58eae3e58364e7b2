//! Held-out reward of SFT->DPO across privacy budgets, followed by the
//! marginal-gain breakdown of the resulting curve.
use dpalign::analysis::{render_gain_table, marginal_gains, GainColumn};
use dpalign::config::RunConfig;
use dpalign::eval::sweep;
use dpalign::pipeline::PipelineKind;
use dpalign::privacy::Epsilon;
use std::path::Path;

fn main() -> dpalign::Result<()> {
    let config = RunConfig::desk(PipelineKind::DpoPipeline);
    let data = config.dataset(Path::new("."))?;
    let epsilons: Vec<Epsilon> = ["0", "1", "3", "10", "inf"].iter().map(|s| s.parse().unwrap()).collect();
    let curve = sweep(&config.pipeline_spec()?, &epsilons, &[0, 1, 2], &data, &config.eval)?;
    for p in &curve.points {
        println!("eps {:>4}  sigma {:>8.3}  reward {:.4} +- {:.4}", p.epsilon.label(), p.noise_multiplier, p.mean_reward, p.std_err);
    }
    let report = marginal_gains(&curve)?;
    println!();
    print!("{}", render_gain_table(&[GainColumn { label: "DP-AdamW", report: &report }], 0)?);
    Ok(())
}
