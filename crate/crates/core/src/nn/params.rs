//! Named parameter storage, gradients and the checkpoint format.
//!
//! A checkpoint is two files: `<stem>.bin` holds every parameter as
//! little-endian f32 in manifest order, `<stem>.manifest` is plain text:
//!
//! ```text
//! [meta]
//! d_e = 16
//! [params]
//! blocks.0.attn.q.w 0 16,16 trainable
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub trainable: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    pub meta: BTreeMap<String, String>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], value: Vec<f64>) -> ParamId {
        let name = name.into();
        assert_eq!(value.len(), shape.iter().product::<usize>(), "{name}");
        assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        self.params.push(Param {
            name,
            shape: shape.to_vec(),
            value,
            trainable: true,
        });
        ParamId(self.params.len() - 1)
    }

    /// Weights drawn from U(-1/√fan_in, 1/√fan_in).
    pub fn add_uniform(&mut self, name: impl Into<String>, shape: &[usize], fan_in: usize, rng: &mut Rng) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n = shape.iter().product();
        let value = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
        self.add(name, shape, value)
    }

    pub fn add_const(&mut self, name: impl Into<String>, shape: &[usize], v: f64) -> ParamId {
        self.add(name, shape, vec![v; shape.iter().product()])
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.params[id.0].value
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total scalar count.
    pub fn size(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn set_trainable(&mut self, trainable: bool) {
        for p in &mut self.params {
            p.trainable = trainable;
        }
    }

    pub fn set_param_trainable(&mut self, id: ParamId, trainable: bool) {
        self.params[id.0].trainable = trainable;
    }

    pub fn zero_grads(&self) -> Grads {
        Grads {
            g: self.params.iter().map(|p| vec![0.0; p.value.len()]).collect(),
        }
    }

    /// Rounds every value to f32 precision, the checkpoint's storage type.
    pub fn round_to_f32(&mut self) {
        for p in &mut self.params {
            for v in &mut p.value {
                *v = *v as f32 as f64;
            }
        }
    }
}

/// Gradients laid out like the owning [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub g: Vec<Vec<f64>>,
}

impl Grads {
    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.g[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.g[id.0]
    }

    pub fn add(&mut self, other: &Grads) {
        for (a, b) in self.g.iter_mut().zip(&other.g) {
            super::ops::add_assign(a, b);
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.g.iter_mut().flatten().for_each(|v| *v *= s);
    }

    pub fn norm(&self) -> f64 {
        self.g.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.g.iter().flatten().all(|&v| v == 0.0)
    }
}

fn with_ext(stem: &Path, ext: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(ext);
    PathBuf::from(s)
}

pub fn manifest_path(stem: &Path) -> PathBuf {
    with_ext(stem, ".manifest")
}

pub fn blob_path(stem: &Path) -> PathBuf {
    with_ext(stem, ".bin")
}

/// Writes `bytes` next to `path` then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = with_ext(path, ".tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn save_checkpoint(store: &ParamStore, stem: &Path) -> Result<()> {
    let mut blob = Vec::with_capacity(store.size() * 4);
    let mut manifest = String::from("[meta]\n");
    for (k, v) in &store.meta {
        if k.contains(['=', '\n']) || v.contains('\n') {
            return Err(Error::Checkpoint(format!("meta entry `{k}` cannot be stored")));
        }
        manifest.push_str(&format!("{k} = {v}\n"));
    }
    manifest.push_str("[params]\n");
    let mut offset = 0;
    for p in &store.params {
        if p.name.contains(char::is_whitespace) {
            return Err(Error::Checkpoint(format!("parameter name `{}` has whitespace", p.name)));
        }
        let shape: Vec<String> = p.shape.iter().map(ToString::to_string).collect();
        manifest.push_str(&format!(
            "{} {} {} {}\n",
            p.name,
            offset,
            shape.join(","),
            if p.trainable { "trainable" } else { "frozen" }
        ));
        for v in &p.value {
            blob.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        offset += p.value.len();
    }
    write_atomic(&blob_path(stem), &blob)?;
    write_atomic(&manifest_path(stem), manifest.as_bytes())
}

pub fn load_checkpoint(stem: &Path) -> Result<ParamStore> {
    let mpath = manifest_path(stem);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let bpath = blob_path(stem);
    let blob = fs::read(&bpath).map_err(|e| Error::io(&bpath, e))?;
    if blob.len() % 4 != 0 {
        return Err(Error::Checkpoint(format!("{} is not a whole number of f32 values", bpath.display())));
    }
    let floats: Vec<f64> = blob
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();

    let mut store = ParamStore::new();
    let mut section = "";
    let mut expected_offset = 0;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if line == "[meta]" || line == "[params]" {
            section = if line == "[meta]" { "meta" } else { "params" };
            continue;
        }
        let bad = |what: &str| Error::Checkpoint(format!("{} line {}: {what}", mpath.display(), i + 1));
        match section {
            "meta" => {
                let (k, v) = line.split_once('=').ok_or_else(|| bad("expected `key = value`"))?;
                store.meta.insert(k.trim().to_string(), v.trim().to_string());
            }
            "params" => {
                let fields: Vec<&str> = line.split_whitespace().collect();
                if fields.len() != 4 {
                    return Err(bad("expected `name offset shape trainable|frozen`"));
                }
                let offset: usize = fields[1].parse().map_err(|_| bad("bad offset"))?;
                let shape = fields[2]
                    .split(',')
                    .map(|s| s.parse::<usize>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| bad("bad shape"))?;
                let n: usize = shape.iter().product();
                if offset != expected_offset || offset + n > floats.len() {
                    return Err(bad("offset does not match blob"));
                }
                let id = store.add(fields[0], &shape, floats[offset..offset + n].to_vec());
                store.params[id.0].trainable = match fields[3] {
                    "trainable" => true,
                    "frozen" => false,
                    _ => return Err(bad("expected trainable or frozen")),
                };
                expected_offset += n;
            }
            _ => return Err(bad("content before first section")),
        }
    }
    if expected_offset != floats.len() {
        return Err(Error::Checkpoint(format!(
            "blob holds {} values, manifest describes {expected_offset}",
            floats.len()
        )));
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;

    fn sample_store() -> ParamStore {
        let mut rng = rng_from(3);
        let mut s = ParamStore::new();
        s.add_uniform("layer.w", &[3, 4], 3, &mut rng);
        let b = s.add_const("layer.b", &[4], 0.1);
        s.params_mut()[b.0].trainable = false;
        s.meta.insert("d_e".into(), "16".into());
        s
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("model");
        let mut s = sample_store();
        save_checkpoint(&s, &stem).unwrap();
        let loaded = load_checkpoint(&stem).unwrap();
        s.round_to_f32();
        assert_eq!(loaded, s);

        let stem2 = dir.path().join("again");
        save_checkpoint(&loaded, &stem2).unwrap();
        assert_eq!(fs::read(blob_path(&stem)).unwrap(), fs::read(blob_path(&stem2)).unwrap());
        assert_eq!(load_checkpoint(&stem2).unwrap(), loaded);
    }

    #[test]
    fn truncated_blob_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("model");
        save_checkpoint(&sample_store(), &stem).unwrap();
        let blob = fs::read(blob_path(&stem)).unwrap();
        fs::write(blob_path(&stem), &blob[..blob.len() - 4]).unwrap();
        assert!(matches!(load_checkpoint(&stem), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn uniform_init_respects_fan_in() {
        let s = sample_store();
        let bound = 1.0 / 3f64.sqrt();
        assert!(s.params()[0].value.iter().all(|v| v.abs() < bound));
        assert_eq!(s.size(), 16);
    }
}
