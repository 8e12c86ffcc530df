//! Dataset directory layout.
//!
//! ```text
//! <dir>/manifest.json   Manifest (pretty JSON, trailing newline)
//! <dir>/s.bin           f64 LE, N x d_s
//! <dir>/a.bin           f64 LE, N x d_a
//! <dir>/s_next.bin      f64 LE, N x d_s
//! <dir>/j_state.bin     f64 LE, N x d_s x d_s   (row-major per sample)
//! <dir>/j_action.bin    f64 LE, N x d_s x d_a   (row-major per sample)
//! ```
//!
//! Samples are stored episode-major then step-major; `N` is the sum of
//! `manifest.episode_lengths`. The step index of a sample is its position
//! within its episode.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use sha2::{Digest, Sha256};

use super::{Dataset, Manifest, Sample};
use crate::{Error, Result};

pub const DATASET_FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const FIELD_FILES: [&str; 5] = ["s.bin", "a.bin", "s_next.bin", "j_state.bin", "j_action.bin"];

fn push_f64s<'a>(buf: &mut Vec<u8>, values: impl IntoIterator<Item = &'a f64>) {
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

/// Byte contents of the five field files, in [`FIELD_FILES`] order.
fn field_bytes(d: &Dataset) -> [Vec<u8>; 5] {
    let mut out: [Vec<u8>; 5] = Default::default();
    for s in d.samples() {
        push_f64s(&mut out[0], &s.s);
        push_f64s(&mut out[1], &s.a);
        push_f64s(&mut out[2], &s.s_next);
        push_f64s(&mut out[3], s.j_state.iter());
        push_f64s(&mut out[4], s.j_action.iter());
    }
    out
}

fn hash_fields(fields: &[Vec<u8>; 5]) -> String {
    let mut h = Sha256::new();
    for (name, bytes) in FIELD_FILES.iter().zip(fields) {
        h.update(name.as_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(bytes);
    }
    hex::encode(h.finalize())
}

pub(crate) fn content_hash(d: &Dataset) -> String {
    hash_fields(&field_bytes(d))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes `d` into directory `dir` (created if needed). The manifest's
/// content hash is refreshed from the data being written.
pub fn save_dataset(d: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let fields = field_bytes(d);
    let mut manifest = d.manifest.clone();
    manifest.content_hash = hash_fields(&fields);
    let mut json = serde_json::to_vec_pretty(&manifest)?;
    json.push(b'\n');
    write(&dir.join(MANIFEST_FILE), &json)?;
    for (name, bytes) in FIELD_FILES.iter().zip(&fields) {
        write(&dir.join(name), bytes)?;
    }
    Ok(())
}

fn read_f64s(path: &Path, expected: usize) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let want = expected * 8;
    if bytes.len() < want || bytes.len() % 8 != 0 {
        return Err(Error::format(
            path,
            format!(
                "truncated file: {} bytes, expected {want} ({expected} values)",
                bytes.len()
            ),
        ));
    }
    if bytes.len() > want {
        return Err(Error::format(
            path,
            format!(
                "dimension mismatch: {} bytes, manifest dimensions imply {want}",
                bytes.len()
            ),
        ));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

fn check_manifest(m: &Manifest, path: &Path) -> Result<()> {
    if m.format_version != DATASET_FORMAT_VERSION {
        return Err(Error::format(
            path,
            format!(
                "format version mismatch: file has {}, reader supports {DATASET_FORMAT_VERSION}",
                m.format_version
            ),
        ));
    }
    let lists = [
        ("episode_lengths", m.episode_lengths.len()),
        ("episode_seeds", m.episode_seeds.len()),
        ("truncated", m.truncated.len()),
    ];
    for (name, len) in lists {
        if len != m.episodes {
            return Err(Error::format(
                path,
                format!(
                    "manifest declares {} episodes but `{name}` lists {len}",
                    m.episodes
                ),
            ));
        }
    }
    if let Some((k, len)) = m
        .episode_lengths
        .iter()
        .enumerate()
        .find(|(_, &l)| l > m.horizon)
    {
        return Err(Error::format(
            path,
            format!("episode {k} has {len} steps, above the horizon {}", m.horizon),
        ));
    }
    let env = crate::envs::make_env(&m.env, &m.params)?;
    if env.d_s != m.d_s || env.d_a != m.d_a {
        return Err(Error::format(
            path,
            format!(
                "dimension mismatch: manifest says d_s={}, d_a={} but `{}` has d_s={}, d_a={}",
                m.d_s, m.d_a, m.env, env.d_s, env.d_a
            ),
        ));
    }
    Ok(())
}

/// Reads a dataset directory written by [`save_dataset`], validating the
/// manifest against the stored data.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let mpath = dir.join(MANIFEST_FILE);
    let text = fs::read(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: Manifest = serde_json::from_slice(&text)
        .map_err(|e| Error::format(&mpath, format!("invalid manifest: {e}")))?;
    check_manifest(&manifest, &mpath)?;

    let (ds, da) = (manifest.d_s, manifest.d_a);
    let n: usize = manifest.episode_lengths.iter().sum();
    let widths = [ds, da, ds, ds * ds, ds * da];
    let mut fields = Vec::with_capacity(5);
    for (name, w) in FIELD_FILES.iter().zip(widths) {
        fields.push(read_f64s(&dir.join(name), n * w)?);
    }

    let mut episodes = Vec::with_capacity(manifest.episodes);
    let mut idx = 0;
    for &len in &manifest.episode_lengths {
        let mut ep = Vec::with_capacity(len);
        for t in 0..len {
            let row = |f: usize| &fields[f][idx * widths[f]..(idx + 1) * widths[f]];
            ep.push(Sample {
                t,
                s: row(0).to_vec(),
                a: row(1).to_vec(),
                s_next: row(2).to_vec(),
                j_state: Array2::from_shape_vec((ds, ds), row(3).to_vec()).expect("sized"),
                j_action: Array2::from_shape_vec((ds, da), row(4).to_vec()).expect("sized"),
            });
            idx += 1;
        }
        episodes.push(ep);
    }
    let d = Dataset { manifest, episodes };
    let actual = content_hash(&d);
    if actual != d.manifest.content_hash {
        return Err(Error::format(
            &mpath,
            format!(
                "content hash mismatch: manifest {}, data {actual}",
                d.manifest.content_hash
            ),
        ));
    }
    Ok(d)
}
