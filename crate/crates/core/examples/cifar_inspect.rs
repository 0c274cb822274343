//! Summarize a CIFAR-10 binary directory: counts, labels and channel stats.
//! Falls back to a crafted in-memory record when no directory is given.
//!
//! cargo run --release --example cifar_inspect -- [dir]

use std::path::PathBuf;

use scoped_dnas::data::{channel_stats, load_cifar10_split, parse_cifar10, resolve_data_dir, to_cifar10_bytes, CifarSplit};

fn main() -> scoped_dnas::Result<()> {
    let dir = resolve_data_dir(std::env::args().nth(1).map(PathBuf::from).as_deref());
    let Some(dir) = dir else {
        let mut bytes = vec![3u8];
        bytes.extend((0..3072).map(|i| (i % 256) as u8));
        let batch = parse_cifar10(&bytes)?;
        println!("no data directory; crafted record label {} first pixels {:?}", batch.labels[0], &batch.image(0)[..4]);
        assert_eq!(to_cifar10_bytes(&batch)?, bytes);
        println!("round trip ok");
        return Ok(());
    };
    for split in [CifarSplit::Train, CifarSplit::Test] {
        let batch = load_cifar10_split(&dir, split)?;
        let mut hist = [0usize; 10];
        batch.labels.iter().for_each(|&l| hist[l] += 1);
        let (mean, std) = channel_stats(&batch);
        println!("{split:?}: {} images, labels {hist:?}", batch.len());
        println!("  mean {mean:.4?} std {std:.4?}");
    }
    Ok(())
}
