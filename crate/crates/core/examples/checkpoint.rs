//! Save parameters, reload them, and confirm the bytes match.
//!
//! cargo run --example checkpoint

use filt::numeric::{checkpoint, load_checkpoint, save_checkpoint, CheckpointMeta, ModelDims, ModelParams};

fn main() -> anyhow::Result<()> {
    let dims = ModelDims {
        num_entities: 50,
        num_relations: 6,
        num_concepts: 4,
        dim: 16,
        time_dim: 4,
    };
    let params = ModelParams::init(dims, 42)?;
    let dir = std::env::temp_dir().join("filt-checkpoint-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("model.ckpt");

    let meta = CheckpointMeta::new(dims, 42, serde_json::json!({"note": "example"}));
    save_checkpoint(&params, &meta, &path)?;
    let (loaded, meta2) = load_checkpoint(&path)?;
    println!(
        "{} tensors, {} parameters, seed {}",
        loaded.tensors().len(),
        loaded.num_parameters(),
        meta2.seed
    );
    let same = checkpoint::encode(&params) == checkpoint::encode(&loaded);
    println!("byte-identical after reload: {same}");
    println!("sidecar: {}", checkpoint::sidecar_path(&path).display());
    Ok(())
}
