//! Rebuilds the LLaMA-8B DPO marginal-gain table from the bundled results.
use dpalign::analysis::{marginal_gains, render_gain_table, GainColumn, ResultsTable};
use std::path::Path;

fn main() -> dpalign::Result<()> {
    let table = ResultsTable::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("data/table1.csv"))?;
    let optimizers = ["DP-ADAMW", "DP-SGD"];
    let reports = optimizers
        .iter()
        .map(|o| {
            let row = table.row("LLaMA-8B", o, "DPO").expect("row present in fixture");
            marginal_gains(&table.curve(row)?)
        })
        .collect::<dpalign::Result<Vec<_>>>()?;
    let columns: Vec<GainColumn> = optimizers.iter().zip(&reports).map(|(label, report)| GainColumn { label, report }).collect();
    print!("{}", render_gain_table(&columns, columns.len() - 1)?);
    Ok(())
}
