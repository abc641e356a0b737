//! Train the micro-mlp on the Gaussian-blobs benchmark and print the loss curve.
//!
//! `cargo run --release --example train_blobs`

use bayeslayers::datasets::{gen_blobs, BlobsParams};
use bayeslayers::network::{train_sgd, Architecture, TrainConfig};
use bayeslayers::numerics::softmax;

fn main() -> bayeslayers::Result<()> {
    let data = gen_blobs(&BlobsParams::default())?;
    let model = Architecture::MicroMlp.build(data.input_shape(), data.class_count, data.has_boxes(), 0)?;
    println!("micro-mlp with {} parameters, {} training samples", model.parameter_count(), data.id_train.len());

    let cfg = TrainConfig { epochs: 20, ..Default::default() };
    let (model, log) = train_sgd(model, &data.id_train, &cfg)?;
    for e in log.iter().filter(|e| e.epoch % 4 == 0 || e.epoch + 1 == log.len()) {
        println!("epoch {:>3}  loss {:.6}  accuracy {:.4}", e.epoch, e.loss, e.accuracy);
    }

    let mut correct = 0;
    for s in &data.id_test {
        let probs = softmax(model.forward(&s.input)?.logits.data())?;
        let class = (0..probs.len()).max_by(|&a, &b| probs[a].total_cmp(&probs[b])).unwrap_or(0);
        correct += usize::from(class == s.label);
    }
    println!("held-out ID accuracy {:.4}", correct as f64 / data.id_test.len() as f64);
    Ok(())
}
