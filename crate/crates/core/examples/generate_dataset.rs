//! Generates the default synthetic benchmark, saves both splits and reads
//! them back.

use dyml::taxonomy::{generate_synthetic, Dataset, Split, SyntheticSpec};

fn main() -> dyml::Result<()> {
    let spec = SyntheticSpec::default();
    let (train, test) = generate_synthetic(&spec)?;
    let t = train.taxonomy();
    println!("classes per scale (fine first): {:?}", t.classes_per_scale());
    println!("train {} samples, test {} samples, d_in {}", train.len(), test.len(), train.d_in());

    let dir = std::env::temp_dir().join("dyml-example-data");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("train.dyml");
    train.save(&path)?;
    let back = Dataset::load(&path, Split::Train)?;
    println!("round trip of {} is lossless: {}", path.display(), back.samples() == train.samples());

    let s = &test.samples()[0];
    println!(
        "first test sample: label chain {:?}, global labels {:?}",
        s.label_chain,
        (0..t.num_scales()).map(|i| test.global_label(0, i)).collect::<Vec<_>>()
    );
    Ok(())
}
