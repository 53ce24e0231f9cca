//! Tracks held-out similarity tier means epoch by epoch. After cross-scale
//! training the tiers sort as fine > middle > coarse > negative.

use dyml::experiment::{run_cells, Cell, ExperimentConfig};
use dyml::losses::LossKind;
use dyml::trainer::Method;

fn main() -> dyml::Result<()> {
    let cfg = ExperimentConfig::default();
    let (train, test) = cfg.dataset.load()?;
    let cells = [Cell { method: Method::multi(LossKind::CslCls), seed: 0 }];
    let result = run_cells(&cfg, &cells, &train, &test, 1, true)?.remove(0);
    println!("epoch  fine    middle  coarse  negative");
    for (epoch, t) in result.test_tiers.iter().enumerate() {
        println!("{epoch:>5}  {:.3}  {:.3}  {:.3}  {:.3}", t[0], t[1], t[2], t[3]);
    }
    Ok(())
}
