//! Saves a network to the versioned weight format, reloads it, and shows the
//! trailing checksum catching corruption. Checkpoints carry optimizer
//! velocity and the iteration counter through the same file format.
//!
//! Run with: `cargo run --release -p dva --example weight_roundtrip`

use dva::network::{build, NetworkGrads, NetworkSpec};
use dva::weights::{load_checkpoint, load_weights, save_checkpoint, save_weights};

fn main() -> dva::Result<()> {
    let dir = tempfile::tempdir().expect("tempdir");
    let spec = NetworkSpec::tiny();
    let state = build(&spec, 9, None)?;

    // Bitwise round trip: saving the loaded copy reproduces the exact file.
    let first = dir.path().join("net.dvaw");
    save_weights(&state, &first)?;
    let loaded = load_weights(&spec, &first)?;
    let second = dir.path().join("net2.dvaw");
    save_weights(&loaded, &second)?;
    let a = std::fs::read(&first).expect("read first");
    let b = std::fs::read(&second).expect("read second");
    assert_eq!(a, b);
    println!("round trip: {} bytes, save(load(save(x))) is bitwise identical", a.len());

    // One flipped byte in the payload breaks the trailing checksum.
    let mut corrupt = a.clone();
    corrupt[a.len() / 2] ^= 0x01;
    let bad = dir.path().join("corrupt.dvaw");
    std::fs::write(&bad, &corrupt).expect("write corrupt");
    match load_weights(&spec, &bad) {
        Err(e) => println!("corruption detected: {e}"),
        Ok(_) => panic!("corrupted file loaded cleanly"),
    }

    // Checkpoints add velocity tensors and the completed-iteration count.
    let velocity = NetworkGrads::zeros_like(&state);
    let ckpt = dir.path().join("ckpt.dvaw");
    save_checkpoint(&state, &velocity, 123, &ckpt)?;
    let (_, _, iter) = load_checkpoint(&spec, &ckpt)?;
    println!("checkpoint restores the iteration counter: {iter}");
    Ok(())
}
