//! Weight and checkpoint files.
//!
//! One binary format serves plain weights, training checkpoints and
//! pretrained encoder imports. Layout, all little-endian:
//!
//! ```text
//! "DVAW"  magic
//! u32     format version (1)
//! u32     entry count
//! entries u16 name length, UTF-8 name, u8 rank, u32 dims[rank], f64 data[product]
//! u64     FNV-1a hash of every preceding byte
//! ```
//!
//! Entry names mirror the network structure: `encoder.conv3-1.weight`,
//! `decoder.conv4-3.deconv2.bias`, `classifier.conv5-3.weight`,
//! `fusion.weight`, `fusion.bias`. Checkpoints add `meta.iter` and one
//! `velocity.*` entry per parameter; loaders that only want weights skip
//! those. Anything else in the file is treated as evidence of a mismatched
//! network and rejected.
//!
//! Files are written to a temporary sibling and renamed into place, so a
//! crash mid-save never leaves a torn file under the real name.

use std::collections::BTreeMap;
use std::path::Path;

use crate::network::{NetworkGrads, NetworkSpec, NetworkState};
use crate::tensor::Shape4;
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"DVAW";
const VERSION: u32 = 1;

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

fn rank4(s: Shape4) -> Vec<u32> {
    vec![s.n as u32, s.c as u32, s.h as u32, s.w as u32]
}

/// Canonical parameter order; weight files, the optimizer and gradient
/// structures all agree on it.
fn collect_entries<'a>(state: &'a NetworkState) -> Vec<(String, Vec<u32>, &'a [f64])> {
    let mut out = Vec::new();
    let layout = state
        .spec
        .layout()
        .expect("state was built, so its spec is valid");
    for (i, p) in state.encoder.iter().enumerate() {
        let name = &layout.conv_names[i];
        out.push((
            format!("encoder.{name}.weight"),
            rank4(p.weights.shape()),
            p.weights.data(),
        ));
        out.push((format!("encoder.{name}.bias"), vec![p.bias.len() as u32], &p.bias[..]));
    }
    for (m, branch) in state.decoders.iter().enumerate() {
        let tap = &state.spec.taps[m];
        for (k, p) in branch.iter().enumerate() {
            out.push((
                format!("decoder.{tap}.deconv{}.weight", k + 1),
                rank4(p.weights.shape()),
                p.weights.data(),
            ));
            out.push((
                format!("decoder.{tap}.deconv{}.bias", k + 1),
                vec![p.bias.len() as u32],
                &p.bias[..],
            ));
        }
    }
    for (m, p) in state.classifiers.iter().enumerate() {
        let tap = &state.spec.taps[m];
        out.push((
            format!("classifier.{tap}.weight"),
            rank4(p.weights.shape()),
            p.weights.data(),
        ));
        out.push((format!("classifier.{tap}.bias"), vec![p.bias.len() as u32], &p.bias[..]));
    }
    let m = state.spec.branches();
    out.push(("fusion.weight".into(), vec![m as u32], &state.fusion_weights[..m]));
    out.push(("fusion.bias".into(), vec![1], &state.fusion_weights[m..]));
    out
}

/// Velocity entries in the same order, prefixed `velocity.`.
fn collect_velocity<'a>(
    state: &NetworkState,
    vel: &'a NetworkGrads,
) -> Vec<(String, Vec<u32>, &'a [f64])> {
    let mut out = Vec::new();
    let layout = state.spec.layout().expect("spec already validated");
    for (i, g) in vel.encoder.iter().enumerate() {
        let name = &layout.conv_names[i];
        out.push((
            format!("velocity.encoder.{name}.weight"),
            rank4(g.d_weights.shape()),
            g.d_weights.data(),
        ));
        out.push((
            format!("velocity.encoder.{name}.bias"),
            vec![g.d_bias.len() as u32],
            &g.d_bias[..],
        ));
    }
    for (m, branch) in vel.decoders.iter().enumerate() {
        let tap = &state.spec.taps[m];
        for (k, g) in branch.iter().enumerate() {
            out.push((
                format!("velocity.decoder.{tap}.deconv{}.weight", k + 1),
                rank4(g.d_weights.shape()),
                g.d_weights.data(),
            ));
            out.push((
                format!("velocity.decoder.{tap}.deconv{}.bias", k + 1),
                vec![g.d_bias.len() as u32],
                &g.d_bias[..],
            ));
        }
    }
    for (m, g) in vel.classifiers.iter().enumerate() {
        let tap = &state.spec.taps[m];
        out.push((
            format!("velocity.classifier.{tap}.weight"),
            rank4(g.d_weights.shape()),
            g.d_weights.data(),
        ));
        out.push((
            format!("velocity.classifier.{tap}.bias"),
            vec![g.d_bias.len() as u32],
            &g.d_bias[..],
        ));
    }
    let m = state.spec.branches();
    out.push(("velocity.fusion.weight".into(), vec![m as u32], &vel.fusion[..m]));
    out.push(("velocity.fusion.bias".into(), vec![1], &vel.fusion[m..]));
    out
}

fn encode(entries: &[(String, Vec<u32>, &[f64])]) -> Vec<u8> {
    let payload: usize = entries
        .iter()
        .map(|(n, d, v)| 2 + n.len() + 1 + 4 * d.len() + 8 * v.len())
        .sum();
    let mut buf = Vec::with_capacity(12 + payload + 8);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, dims, values) in entries {
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.push(dims.len() as u8);
        for d in dims {
            buf.extend_from_slice(&d.to_le_bytes());
        }
        for v in *values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let hash = fnv1a(&buf);
    buf.extend_from_slice(&hash.to_le_bytes());
    buf
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Saves the network parameters.
pub fn save_weights(state: &NetworkState, path: &Path) -> Result<()> {
    write_atomic(path, &encode(&collect_entries(state)))
}

/// Saves parameters plus optimizer velocity and the iteration counter, for
/// `--resume`.
pub fn save_checkpoint(
    state: &NetworkState,
    velocity: &NetworkGrads,
    iter: u64,
    path: &Path,
) -> Result<()> {
    let iter_val = [iter as f64];
    let mut entries = collect_entries(state);
    entries.push(("meta.iter".into(), vec![1], &iter_val[..]));
    let vel_entries = collect_velocity(state, velocity);
    entries.extend(vel_entries);
    write_atomic(path, &encode(&entries))
}

struct RawEntry {
    dims: Vec<u32>,
    values: Vec<f64>,
}

fn bad(path: &Path, msg: impl Into<String>) -> Error {
    Error::WeightFormat {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

fn decode(path: &Path, bytes: &[u8]) -> Result<BTreeMap<String, RawEntry>> {
    if bytes.len() < 20 {
        return Err(bad(path, format!("truncated: {} bytes", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(bad(path, "bad magic, not a weight file"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(bad(path, format!("unsupported format version {version}")));
    }
    let body = &bytes[..bytes.len() - 8];
    let stored = u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().unwrap());
    let computed = fnv1a(body);
    if stored != computed {
        return Err(bad(
            path,
            format!("checksum mismatch (stored {stored:016x}, computed {computed:016x})"),
        ));
    }
    let count = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let mut pos = 12;
    let mut take = |n: usize, what: &str| -> Result<&[u8]> {
        if pos + n > body.len() {
            return Err(bad(path, format!("truncated while reading {what}")));
        }
        let s = &body[pos..pos + n];
        pos += n;
        Ok(s)
    };
    let mut entries = BTreeMap::new();
    for i in 0..count {
        let name_len =
            u16::from_le_bytes(take(2, "entry name length")?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(take(name_len, "entry name")?)
            .map_err(|_| bad(path, format!("entry {i}: name is not UTF-8")))?
            .to_string();
        let rank = take(1, "entry rank")?[0] as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(u32::from_le_bytes(take(4, "entry dims")?.try_into().unwrap()));
        }
        let len: usize = dims.iter().map(|&d| d as usize).product();
        if rank == 0 || len == 0 {
            return Err(bad(path, format!("entry {name}: empty shape")));
        }
        let raw = take(len * 8, "entry values")?;
        let values: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if entries.insert(name.clone(), RawEntry { dims, values }).is_some() {
            return Err(bad(path, format!("duplicate entry {name}")));
        }
    }
    if pos != body.len() {
        return Err(bad(
            path,
            format!("{} trailing bytes after the last entry", body.len() - pos),
        ));
    }
    Ok(entries)
}

fn dims_string(dims: &[u32]) -> String {
    dims.iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join("x")
}

/// Pulls `name` out of `entries`, verifying its shape, and copies it into
/// `dest`.
fn fill_from(
    path: &Path,
    entries: &mut BTreeMap<String, RawEntry>,
    name: &str,
    dims: &[u32],
    dest: &mut [f64],
) -> Result<()> {
    let entry = entries.remove(name).ok_or_else(|| Error::WeightShape {
        path: path.to_path_buf(),
        layer: name.to_string(),
        expected: dims_string(dims),
        got: "missing".into(),
    })?;
    if entry.dims != dims {
        return Err(Error::WeightShape {
            path: path.to_path_buf(),
            layer: name.to_string(),
            expected: dims_string(dims),
            got: dims_string(&entry.dims),
        });
    }
    dest.copy_from_slice(&entry.values);
    Ok(())
}

/// Walks the parameters of `state` mutably in canonical order.
fn for_each_param_mut(
    state: &mut NetworkState,
    mut f: impl FnMut(String, Vec<u32>, &mut [f64]) -> Result<()>,
) -> Result<()> {
    let layout = state.spec.layout()?;
    let taps = state.spec.taps.clone();
    for (i, p) in state.encoder.iter_mut().enumerate() {
        let name = &layout.conv_names[i];
        f(
            format!("encoder.{name}.weight"),
            rank4(p.weights.shape()),
            p.weights.data_mut(),
        )?;
        let dims = vec![p.bias.len() as u32];
        f(format!("encoder.{name}.bias"), dims, &mut p.bias)?;
    }
    for (m, branch) in state.decoders.iter_mut().enumerate() {
        for (k, p) in branch.iter_mut().enumerate() {
            f(
                format!("decoder.{}.deconv{}.weight", taps[m], k + 1),
                rank4(p.weights.shape()),
                p.weights.data_mut(),
            )?;
            let dims = vec![p.bias.len() as u32];
            f(format!("decoder.{}.deconv{}.bias", taps[m], k + 1), dims, &mut p.bias)?;
        }
    }
    for (m, p) in state.classifiers.iter_mut().enumerate() {
        f(
            format!("classifier.{}.weight", taps[m]),
            rank4(p.weights.shape()),
            p.weights.data_mut(),
        )?;
        let dims = vec![p.bias.len() as u32];
        f(format!("classifier.{}.bias", taps[m]), dims, &mut p.bias)?;
    }
    let m = state.spec.branches();
    let (w, b) = state.fusion_weights.split_at_mut(m);
    f("fusion.weight".into(), vec![m as u32], w)?;
    f("fusion.bias".into(), vec![1], b)?;
    Ok(())
}

fn for_each_velocity_mut(
    spec: &NetworkSpec,
    vel: &mut NetworkGrads,
    mut f: impl FnMut(String, Vec<u32>, &mut [f64]) -> Result<()>,
) -> Result<()> {
    let layout = spec.layout()?;
    for (i, g) in vel.encoder.iter_mut().enumerate() {
        let name = &layout.conv_names[i];
        f(
            format!("velocity.encoder.{name}.weight"),
            rank4(g.d_weights.shape()),
            g.d_weights.data_mut(),
        )?;
        let dims = vec![g.d_bias.len() as u32];
        f(format!("velocity.encoder.{name}.bias"), dims, &mut g.d_bias)?;
    }
    for (m, branch) in vel.decoders.iter_mut().enumerate() {
        for (k, g) in branch.iter_mut().enumerate() {
            f(
                format!("velocity.decoder.{}.deconv{}.weight", spec.taps[m], k + 1),
                rank4(g.d_weights.shape()),
                g.d_weights.data_mut(),
            )?;
            let dims = vec![g.d_bias.len() as u32];
            f(
                format!("velocity.decoder.{}.deconv{}.bias", spec.taps[m], k + 1),
                dims,
                &mut g.d_bias,
            )?;
        }
    }
    for (m, g) in vel.classifiers.iter_mut().enumerate() {
        f(
            format!("velocity.classifier.{}.weight", spec.taps[m]),
            rank4(g.d_weights.shape()),
            g.d_weights.data_mut(),
        )?;
        let dims = vec![g.d_bias.len() as u32];
        f(format!("velocity.classifier.{}.bias", spec.taps[m]), dims, &mut g.d_bias)?;
    }
    let m = spec.branches();
    let (w, b) = vel.fusion.split_at_mut(m);
    f("velocity.fusion.weight".into(), vec![m as u32], w)?;
    f("velocity.fusion.bias".into(), vec![1], b)?;
    Ok(())
}

/// Loads a weight file for `spec`. Every parameter must be present with a
/// matching shape; `meta.*` and `velocity.*` entries are skipped; any other
/// surplus entry fails the load, since it means the file belongs to a
/// different architecture.
pub fn load_weights(spec: &NetworkSpec, path: &Path) -> Result<NetworkState> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut entries = decode(path, &bytes)?;
    let mut state = NetworkState::zeros(spec)?;
    for_each_param_mut(&mut state, |name, dims, dest| {
        fill_from(path, &mut entries, &name, &dims, dest)
    })?;
    if let Some(name) = entries
        .keys()
        .find(|n| !n.starts_with("meta.") && !n.starts_with("velocity."))
    {
        return Err(bad(
            path,
            format!("unexpected entry {name}; file was saved from a different network"),
        ));
    }
    Ok(state)
}

/// Loads a checkpoint: weights plus, when present, `meta.iter` and the
/// optimizer velocity. A plain weight file resumes from iteration 0 with
/// zero velocity.
pub fn load_checkpoint(spec: &NetworkSpec, path: &Path) -> Result<(NetworkState, NetworkGrads, u64)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut entries = decode(path, &bytes)?;
    let mut state = NetworkState::zeros(spec)?;
    for_each_param_mut(&mut state, |name, dims, dest| {
        fill_from(path, &mut entries, &name, &dims, dest)
    })?;
    let iter = match entries.remove("meta.iter") {
        Some(e) if e.values.len() == 1 && e.values[0] >= 0.0 => e.values[0] as u64,
        Some(_) => return Err(bad(path, "malformed meta.iter entry")),
        None => 0,
    };
    let mut velocity = NetworkGrads::zeros_like(&state);
    if entries.keys().any(|n| n.starts_with("velocity.")) {
        for_each_velocity_mut(spec, &mut velocity, |name, dims, dest| {
            fill_from(path, &mut entries, &name, &dims, dest)
        })?;
    }
    if let Some(name) = entries.keys().find(|n| !n.starts_with("meta.")) {
        return Err(bad(
            path,
            format!("unexpected entry {name}; file was saved from a different network"),
        ));
    }
    Ok((state, velocity, iter))
}

/// Replaces the encoder parameters of `state` with the `encoder.*` entries
/// of a weight file, shape-checked layer by layer. Used to start from a
/// pretrained backbone; all other entries in the file are ignored.
pub fn load_encoder_weights(state: &mut NetworkState, path: &Path) -> Result<()> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut entries = decode(path, &bytes)?;
    let layout = state.spec.layout()?;
    for (i, p) in state.encoder.iter_mut().enumerate() {
        let name = &layout.conv_names[i];
        fill_from(
            path,
            &mut entries,
            &format!("encoder.{name}.weight"),
            &rank4(p.weights.shape()),
            p.weights.data_mut(),
        )?;
        let dims = vec![p.bias.len() as u32];
        fill_from(path, &mut entries, &format!("encoder.{name}.bias"), &dims, &mut p.bias)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{build, FusionMode};

    fn tiny_state(seed: u64) -> NetworkState {
        build(&NetworkSpec::tiny(), seed, None).unwrap()
    }

    fn small_state(seed: u64) -> NetworkState {
        let mut spec = NetworkSpec::tiny();
        spec.encoder_blocks = vec![(1, 4), (1, 6)];
        spec.taps = vec!["conv2-1".into()];
        spec.decoder_channels = vec![vec![4]];
        spec.input_dims = (8, 8);
        build(&spec, seed, None).unwrap()
    }

    #[test]
    fn hash_matches_reference_values() {
        assert_eq!(fnv1a(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a(b"hello"), 0xa430d84680aabd0b);
        assert_eq!(fnv1a(b"DVAW"), 0x27651b7252fa7d97);
    }

    #[test]
    fn encoded_bytes_match_reference_layout() {
        // One rank-1 entry "fusion.bias" holding 0.5; layout worked out by
        // hand: 4 magic + 4 version + 4 count + 2 + 11 + 1 + 4 + 8 = 38
        // bytes before the hash.
        let value = [0.5];
        let entries = vec![("fusion.bias".to_string(), vec![1u32], &value[..])];
        let bytes = encode(&entries);
        assert_eq!(bytes.len(), 46);
        assert_eq!(&bytes[..4], b"DVAW");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        let hash = u64::from_le_bytes(bytes[38..].try_into().unwrap());
        assert_eq!(hash, 0x196fe37793c59c8a);
    }

    #[test]
    fn weights_round_trip_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.dvaw");
        let state = tiny_state(42);
        save_weights(&state, &path).unwrap();
        let loaded = load_weights(&NetworkSpec::tiny(), &path).unwrap();
        for (a, b) in state.encoder.iter().zip(&loaded.encoder) {
            assert_eq!(a.weights.data(), b.weights.data());
            assert_eq!(a.bias, b.bias);
        }
        for (da, db) in state.decoders.iter().zip(&loaded.decoders) {
            for (a, b) in da.iter().zip(db) {
                assert_eq!(a.weights.data(), b.weights.data());
            }
        }
        for (a, b) in state.classifiers.iter().zip(&loaded.classifiers) {
            assert_eq!(a.weights.data(), b.weights.data());
        }
        assert_eq!(state.fusion_weights, loaded.fusion_weights);
    }

    #[test]
    fn saving_twice_produces_identical_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.dvaw");
        let b = dir.path().join("b.dvaw");
        let state = small_state(3);
        save_weights(&state, &a).unwrap();
        save_weights(&state, &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn corruption_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.dvaw");
        save_weights(&small_state(1), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        std::fs::write(&path, &bytes).unwrap();
        let err = load_weights(&small_state(1).spec, &path).unwrap_err();
        assert!(err.to_string().contains("checksum"), "{err}");
    }

    #[test]
    fn truncation_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.dvaw");
        let state = small_state(1);
        save_weights(&state, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 25]).unwrap();
        assert!(load_weights(&state.spec, &path).is_err());
        std::fs::write(&path, &bytes[..10]).unwrap();
        assert!(load_weights(&state.spec, &path).is_err());
    }

    #[test]
    fn wrong_magic_and_version_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.dvaw");
        let state = small_state(1);
        save_weights(&state, &path).unwrap();
        let good = std::fs::read(&path).unwrap();

        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        std::fs::write(&path, &bad_magic).unwrap();
        let err = load_weights(&state.spec, &path).unwrap_err();
        assert!(err.to_string().contains("magic"), "{err}");

        let mut bad_version = good.clone();
        bad_version[4] = 9;
        // Keep the checksum honest so the version check is what fires.
        let body_len = bad_version.len() - 8;
        let h = fnv1a(&bad_version[..body_len]);
        bad_version[body_len..].copy_from_slice(&h.to_le_bytes());
        std::fs::write(&path, &bad_version).unwrap();
        let err = load_weights(&state.spec, &path).unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");
    }

    #[test]
    fn shape_mismatch_names_the_layer() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.dvaw");
        save_weights(&small_state(1), &path).unwrap();
        let mut other = NetworkSpec::tiny();
        other.encoder_blocks = vec![(1, 5), (1, 6)];
        other.taps = vec!["conv2-1".into()];
        other.decoder_channels = vec![vec![4]];
        other.input_dims = (8, 8);
        let err = load_weights(&other, &path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("conv1-1"), "{msg}");
    }

    #[test]
    fn foreign_entries_fail_but_meta_and_velocity_are_tolerated() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.dvaw");
        let state = small_state(7);
        let velocity = NetworkGrads::zeros_like(&state);
        save_checkpoint(&state, &velocity, 123, &path).unwrap();
        // A plain weight load skips meta./velocity. entries.
        let loaded = load_weights(&state.spec, &path).unwrap();
        assert_eq!(loaded.fusion_weights, state.fusion_weights);

        // A file with an extra parameter entry is from some other network.
        let extra = [1.0, 2.0];
        let mut entries = collect_entries(&state);
        entries.push(("mystery.layer".into(), vec![2], &extra[..]));
        let bytes = encode(&entries);
        std::fs::write(&path, &bytes).unwrap();
        let err = load_weights(&state.spec, &path).unwrap_err();
        assert!(err.to_string().contains("mystery.layer"), "{err}");
    }

    #[test]
    fn checkpoint_round_trips_velocity_and_iteration() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.dvaw");
        let state = small_state(5);
        let mut velocity = NetworkGrads::zeros_like(&state);
        velocity.encoder[0].d_weights.data_mut()[3] = -0.25;
        velocity.fusion[0] = 0.5;
        save_checkpoint(&state, &velocity, 4107, &path).unwrap();
        let (loaded, vel, iter) = load_checkpoint(&state.spec, &path).unwrap();
        assert_eq!(iter, 4107);
        assert_eq!(loaded.encoder[1].weights.data(), state.encoder[1].weights.data());
        assert_eq!(vel.encoder[0].d_weights.data()[3], -0.25);
        assert_eq!(vel.fusion[0], 0.5);
    }

    #[test]
    fn plain_weights_resume_from_iteration_zero() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.dvaw");
        let state = small_state(5);
        save_weights(&state, &path).unwrap();
        let (_, vel, iter) = load_checkpoint(&state.spec, &path).unwrap();
        assert_eq!(iter, 0);
        assert!(vel.encoder.iter().all(|g| g.d_weights.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn encoder_import_replaces_only_the_encoder() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("donor.dvaw");
        let donor = tiny_state(100);
        save_weights(&donor, &path).unwrap();
        let mut receiver = tiny_state(200);
        let classifier_before = receiver.classifiers[0].weights.data().to_vec();
        load_encoder_weights(&mut receiver, &path).unwrap();
        for (a, b) in receiver.encoder.iter().zip(&donor.encoder) {
            assert_eq!(a.weights.data(), b.weights.data());
            assert_eq!(a.bias, b.bias);
        }
        assert_eq!(receiver.classifiers[0].weights.data(), &classifier_before[..]);
        assert_ne!(
            receiver.classifiers[0].weights.data(),
            donor.classifiers[0].weights.data(),
            "classifier stays at its own seed's init"
        );
    }

    #[test]
    fn encoder_import_checks_shapes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("donor.dvaw");
        save_weights(&small_state(1), &path).unwrap();
        let mut receiver = tiny_state(2);
        let err = load_encoder_weights(&mut receiver, &path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("encoder.conv1-1.weight"), "{msg}");
    }

    #[test]
    fn build_with_pretrained_path_uses_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("donor.dvaw");
        let donor = tiny_state(100);
        save_weights(&donor, &path).unwrap();
        let built = build(&NetworkSpec::tiny(), 55, Some(&path)).unwrap();
        assert_eq!(built.encoder[12].weights.data(), donor.encoder[12].weights.data());
        assert_ne!(built.classifiers[0].weights.data(), donor.classifiers[0].weights.data());
    }

    #[test]
    fn fusion_mode_changes_do_not_invalidate_files() {
        // Same parameters, different fusion mode: still loadable, the mode
        // lives in the spec, not the file.
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.dvaw");
        let state = tiny_state(9);
        save_weights(&state, &path).unwrap();
        let mut spec = NetworkSpec::tiny();
        spec.fusion = FusionMode::Average;
        let loaded = load_weights(&spec, &path).unwrap();
        assert_eq!(loaded.fusion_weights, state.fusion_weights);
    }
}
