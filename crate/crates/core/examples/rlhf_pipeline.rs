//! SFT, reward modelling and PPO on three disjoint partitions, non-private.
use dpalign::config::RunConfig;
use dpalign::data::generate_held_out_triples;
use dpalign::eval::{evaluate_on_task, pairwise_accuracy};
use dpalign::pipeline::{run_pipeline, PipelineKind};
use std::path::Path;

fn main() -> dpalign::Result<()> {
    let config = RunConfig::desk(PipelineKind::RlhfPipeline);
    let data = config.dataset(Path::new("."))?;
    let out = run_pipeline(&config.pipeline_spec()?, &data)?;

    println!("partition sizes {:?}", out.report.partition_sizes);
    for m in &out.report.phases {
        println!("{:?}: {} steps, clip rate per epoch {:?}", m.loss_kind, m.steps, m.epoch_clip_rate);
    }
    let rm = out.reward_model.as_ref().expect("RLHF trains a reward model");
    let held_out = generate_held_out_triples(data.metadata.as_ref().unwrap(), 2000, 1)?;
    println!("reward model pairwise accuracy on held-out prompts: {:.4}", pairwise_accuracy(rm, &held_out)?);
    for (name, policy) in [("after SFT", &out.sft_policy), ("after PPO", &out.policy)] {
        println!("{name:>10}: held-out reward {:.4}", evaluate_on_task(policy, &data, &config.eval)?.mean);
    }
    Ok(())
}
