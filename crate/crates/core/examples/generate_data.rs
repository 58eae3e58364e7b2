//! Generates a small synthetic preference dataset and shows a few triples.
use dpalign::data::{generate_synthetic_preferences, partition_disjoint, to_jsonl, GeneratorConfig};

fn main() -> dpalign::Result<()> {
    let data = generate_synthetic_preferences(&GeneratorConfig { n: 1000, ..Default::default() })?;
    let latent = data.latent_reward()?;
    println!("{} triples, vocab {}, {} held-out prompts", data.len(), data.vocab_size(), data.held_out_prompts()?.len());
    for t in data.triples.iter().take(5) {
        println!(
            "  x {:?}  chosen {:?} (r* {:.2})  rejected {:?} (r* {:.2})",
            t.prompt,
            t.chosen,
            latent.score(&t.prompt, &t.chosen),
            t.rejected,
            latent.score(&t.prompt, &t.rejected)
        );
    }
    let split = partition_disjoint(data.len(), &[0.4, 0.3, 0.3], 0)?;
    split.verify(data.len())?;
    println!("SFT / RM / PPO partition sizes {:?}", split.sizes());
    let text = to_jsonl(&data)?;
    println!("JSONL: {} lines, {} bytes", text.lines().count(), text.len());
    Ok(())
}
