//! Read an IDX image/label pair and split it into ID and OOD by label.
//!
//! `cargo run --example idx_ingest -- images.idx labels.idx 0,1,2`
//!
//! Without arguments a small synthetic pair is written to a temp directory first.

use std::collections::BTreeSet;
use std::fs;
use std::path::PathBuf;

use bayeslayers::datasets::{load_idx, split_by_label, IdxArray, IdxData};

fn synthetic_pair(dir: &std::path::Path) -> std::io::Result<(PathBuf, PathBuf)> {
    let (n, side) = (40usize, 6usize);
    let labels: Vec<u8> = (0..n).map(|i| (i % 4) as u8).collect();
    let pixels: Vec<u8> =
        labels.iter().flat_map(|&l| (0..side * side).map(move |p| if p % 4 == l as usize { 255 } else { 0 })).collect();
    let images = dir.join("images.idx");
    let label_file = dir.join("labels.idx");
    fs::write(&images, IdxArray { dims: vec![n, side, side], data: IdxData::U8(pixels) }.to_bytes())?;
    fs::write(&label_file, IdxArray { dims: vec![n], data: IdxData::U8(labels) }.to_bytes())?;
    Ok((images, label_file))
}

fn main() -> bayeslayers::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let tmp = tempfile::tempdir()?;
    let (images, labels, id_labels) = match args.as_slice() {
        [i, l, ids] => (
            PathBuf::from(i),
            PathBuf::from(l),
            ids.split(',').map(|s| s.trim().parse().map_err(|e| bayeslayers::Error::Config(format!("label `{s}`: {e}")))).collect::<bayeslayers::Result<BTreeSet<usize>>>()?,
        ),
        _ => {
            let (i, l) = synthetic_pair(tmp.path())?;
            (i, l, BTreeSet::from([0, 1, 2]))
        }
    };

    let samples = load_idx(&images, &labels)?;
    println!("{} images of shape {:?}", samples.len(), samples[0].input.shape());
    let pairing = split_by_label(&samples, &id_labels)?;
    println!(
        "ID labels {:?}: {} train / {} test, OOD test {}",
        id_labels,
        pairing.id_train.len(),
        pairing.id_test.len(),
        pairing.ood_test.len()
    );
    let max = samples.iter().flat_map(|s| s.input.data()).fold(0.0f64, |a, &b| a.max(b));
    println!("pixels scaled to [0, {max}]");
    Ok(())
}
