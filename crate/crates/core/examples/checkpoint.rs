//! Saves a policy to a text checkpoint and loads it back.
use dpalign::models::{PolicyConfig, TinyPolicy};

fn main() -> dpalign::Result<()> {
    let policy = TinyPolicy::new(PolicyConfig::default(), 7)?;
    let ckpt = policy.to_checkpoint()?;
    let path = std::env::temp_dir().join("dpalign_example_policy.ckpt");
    ckpt.save(&path)?;
    let text = ckpt.to_text();
    println!("wrote {} ({} bytes, {} parameters)", path.display(), text.len(), policy.params().num_scalars());
    for line in text.lines().take(3) {
        println!("  {}", &line[..line.len().min(80)]);
    }
    let back = TinyPolicy::from_checkpoint(&dpalign::models::Checkpoint::load(&path)?)?;
    let x = [1, 2];
    println!("log p(y|x) before {:.12}  after {:.12}", policy.sequence_logprob(&x, &[3, 4])?, back.sequence_logprob(&x, &[3, 4])?);
    std::fs::remove_file(&path).ok();
    Ok(())
}
