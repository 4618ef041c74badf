//! Render the blur-heavy synthetic benchmark and write it as PPM frames plus
//! JSONL annotations.
//!
//!     cargo run --example generate_benchmark -- [out_dir] [sequences] [seed]

use std::path::PathBuf;

use detnet::synthvid::{build_dataset, export_dataset, DatasetSpec};

fn main() -> detnet::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "target/benchmark".into()));
    let n: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(40);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(2024);

    let spec = DatasetSpec::blur_heavy(n, seed);
    let data = build_dataset(&spec)?;
    export_dataset(&data, &out)?;

    let boxes: usize = data.sequences.iter().map(|s| s.boxes.iter().map(Vec::len).sum::<usize>()).sum();
    println!("{} sequences, {boxes} boxes -> {}", data.len(), out.display());
    for (scenario, count) in spec.counts()? {
        println!("  {scenario:8} {count}");
    }
    Ok(())
}
