//! Round-trips a dataset through CSV, then partitions it by label shards.

use std::collections::BTreeSet;

use fedlite::federation::{
    generate_synthetic, load_csv, partition, CsvSchema, PartitionMode, SyntheticSpec,
};

fn main() -> fedlite::Result<()> {
    let data = generate_synthetic(&SyntheticSpec {
        num_classes: 5,
        input_dim: 4,
        samples_per_class: 20,
        spread: 2.0,
        noise: 0.5,
        seed: 1,
    })?;
    let path = std::env::temp_dir().join("fedlite_blobs.csv");
    data.save_csv(&path)?;
    let loaded = load_csv(
        &path,
        &CsvSchema {
            label_column: Some("label".into()),
            num_classes: None,
        },
    )?;
    assert_eq!(loaded, data);
    println!(
        "{} rows, {} features, {} classes from {}",
        loaded.len(),
        loaded.input_dim,
        loaded.num_classes,
        path.display()
    );

    let fed = partition(
        &loaded,
        5,
        PartitionMode::LabelShard {
            shards_per_client: 2,
        },
        0,
    )?;
    for (c, p) in fed.clients.iter().zip(&fed.weights) {
        let labels: BTreeSet<usize> = c.samples.iter().map(|s| s.label).collect();
        println!(
            "client {}: {} samples, p = {p:.2}, labels {labels:?}",
            c.id,
            c.len()
        );
    }
    Ok(())
}
