//! SFT followed by DPO on disjoint halves of the synthetic data, at epsilon 3.
use dpalign::config::RunConfig;
use dpalign::eval::evaluate_on_task;
use dpalign::pipeline::{run_pipeline, PipelineKind};
use dpalign::privacy::Epsilon;
use std::path::Path;

fn main() -> dpalign::Result<()> {
    let mut config = RunConfig::desk(PipelineKind::DpoPipeline);
    config.epsilon = Epsilon::new(3.0)?;
    let data = config.dataset(Path::new("."))?;
    let out = run_pipeline(&config.pipeline_spec()?, &data)?;

    for m in &out.report.phases {
        println!(
            "{:?}: {} examples, {} steps, sigma {:.3}, loss per epoch {:?}",
            m.loss_kind,
            m.examples,
            m.steps,
            m.noise_multiplier,
            m.epoch_mean_loss.iter().map(|l| format!("{l:.4}")).collect::<Vec<_>>()
        );
    }
    print!("{}", out.report.budget.to_text());
    for (name, policy) in [("initial", &out.initial_policy), ("after SFT", &out.sft_policy), ("after DPO", &out.policy)] {
        let e = evaluate_on_task(policy, &data, &config.eval)?;
        println!("{name:>10}: held-out reward {:.4} +- {:.4}", e.mean, e.std_err);
    }
    Ok(())
}
