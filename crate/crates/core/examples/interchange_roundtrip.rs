//! Writes a bank and two records in the embedding interchange format, shows
//! the manifest, and reads everything back.
//!
//! ```text
//! cargo run --example interchange_roundtrip -- [out_dir]
//! ```

use std::path::PathBuf;

use runa::bank::{build_bank, load_bank, save_bank};
use runa::interchange::{blob_path, global_id, regional_id, EmbeddingTable, MAGIC};

fn main() -> runa::Result<()> {
    let dir = std::env::args_os()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("runa-interchange"));
    std::fs::create_dir_all(&dir).expect("create output dir");

    let bank = build_bank(&["car", "person"], "a photo of a {label}", |p| {
        Ok(vec![p.len() as f64, 1.0, 0.0, 2.0])
    })?;
    let bank_path = dir.join("bank.tsv");
    save_bank(&bank, &bank_path)?;

    let mut records = EmbeddingTable::new();
    records.insert(global_id("frame_0001#0"), vec![0.5, 0.5, 0.5, 0.5])?;
    records.insert(regional_id("frame_0001#0"), vec![1.0, 0.0, 0.0, 0.0])?;
    let records_path = dir.join("records.tsv");
    records.write(&records_path)?;

    println!("{}:", bank_path.display());
    print!("{}", std::fs::read_to_string(&bank_path).expect("read manifest"));
    let blob = std::fs::read(blob_path(&bank_path)).expect("read blob");
    println!(
        "{}: {} bytes, magic {:?}",
        blob_path(&bank_path).display(),
        blob.len(),
        String::from_utf8_lossy(&blob[..MAGIC.len()])
    );

    let back = load_bank(&bank_path)?;
    println!("labels {:?}, prompts {:?}, dim {}", back.labels(), back.prompts(), back.dim());
    let table = EmbeddingTable::read(&records_path)?;
    for (id, v) in table.iter() {
        println!("{id}: {v:?}");
    }
    Ok(())
}
