//! Save a trained model, reload it and check the round trip.
//!
//! The container stores parameters as f32, so the reloaded model matches
//! `narrowed(model)` exactly rather than the in-memory f64 model.
//!
//! `cargo run --release --example model_persistence`

use bayeslayers::datasets::{gen_blobs, BlobsParams};
use bayeslayers::network::{load_model, narrowed, save_model, to_bytes, train_sgd, Architecture, TrainConfig};

fn main() -> bayeslayers::Result<()> {
    let data = gen_blobs(&BlobsParams { n_per_class: 80, ..Default::default() })?;
    let model = Architecture::MicroMlp.build(data.input_shape(), data.class_count, false, 3)?;
    let (model, _) = train_sgd(model, &data.id_train, &TrainConfig { epochs: 5, ..Default::default() })?;

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("model.blyr");
    save_model(&model, &path)?;
    let loaded = load_model(&path)?;
    let bytes = std::fs::read(&path)?;
    println!("{} bytes, {} layers, {} parameters", bytes.len(), loaded.layers().len(), loaded.parameter_count());
    println!("re-serialization identical: {}", to_bytes(&loaded)? == bytes);
    println!("equals narrowed in-memory model: {}", loaded == narrowed(&model)?);

    let x = &data.ood_test[0].input;
    let (a, b) = (model.forward(x)?.logits, loaded.forward(x)?.logits);
    let dev = a.data().iter().zip(b.data()).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
    println!("max logit deviation f64 vs stored model: {dev:.2e}");
    Ok(())
}
