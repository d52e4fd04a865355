//! Model file format.
//!
//! Layout: magic bytes `MYNER`, format version (u16 LE), a length-prefixed
//! UTF-8 header carrying the canonical textual config and vocabularies, an
//! index of named parameter blobs (name, shape, dtype, offset, length),
//! the raw little-endian parameter data, and a trailing CRC-32 over every
//! preceding byte. Any corruption fails the checksum before anything is
//! interpreted.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    CharEncoderKind, FeatureTemplate, Gazetteer, HeadKind, NeuralTagger, SparseCrfModel,
    TaggerConfig, TrainableModel,
};
use crate::corpus::{Alphabets, Vocab};
use crate::tensor::Tensor;
use crate::{Error, Result};

const MAGIC: &[u8; 5] = b"MYNER";
const VERSION: u16 = 1;

/// On-disk float width for parameter blobs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FloatDtype {
    F64,
    F32,
}

/// Borrowed model for saving.
pub enum ModelRef<'a> {
    Neural(&'a NeuralTagger),
    Sparse(&'a SparseCrfModel),
}

/// Owned model produced by [`load_model`].
pub enum LoadedModel {
    Neural(NeuralTagger),
    Sparse(SparseCrfModel),
}

impl LoadedModel {
    pub fn predict(&self, tokens: &[String]) -> Vec<String> {
        match self {
            LoadedModel::Neural(m) => m.predict(tokens),
            LoadedModel::Sparse(m) => m.predict(tokens),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            LoadedModel::Neural(_) => "neural",
            LoadedModel::Sparse(_) => "sparse_crf",
        }
    }
}

fn push_items(out: &mut String, section: &str, items: impl IntoIterator<Item = impl AsRef<str>>) {
    out.push_str(&format!("[{section}]\n"));
    for item in items {
        out.push_str("- ");
        out.push_str(item.as_ref());
        out.push('\n');
    }
}

fn neural_header(m: &NeuralTagger) -> String {
    let mut h = String::new();
    h.push_str("kind = neural\n[config]\n");
    h.push_str(&format!("char_encoder = {}\n", m.cfg.char_encoder.as_str()));
    h.push_str(&format!("head = {}\n", m.cfg.head.as_str()));
    h.push_str(&format!("d_syl = {}\n", m.cfg.d_syl));
    h.push_str(&format!("d_char = {}\n", m.cfg.d_char));
    h.push_str(&format!("n_filters = {}\n", m.cfg.n_filters));
    h.push_str(&format!("window = {}\n", m.cfg.window));
    h.push_str(&format!("char_hidden = {}\n", m.cfg.char_hidden));
    h.push_str(&format!("hidden_total = {}\n", m.cfg.hidden_total));
    h.push_str(&format!("dropout = {}\n", m.cfg.dropout));
    h.push_str(&format!("char_dropout = {}\n", m.cfg.char_dropout));
    h.push_str(&format!("decode_mask = {}\n", m.cfg.decode_mask));
    push_items(&mut h, "labels", &m.alphabets.labels);
    push_items(&mut h, "syllable_vocab", m.alphabets.syllables.items());
    push_items(&mut h, "char_vocab", m.alphabets.chars.items());
    h
}

fn sparse_header(m: &SparseCrfModel) -> Result<String> {
    let mut h = String::new();
    h.push_str("kind = sparse_crf\n[config]\n");
    h.push_str(&format!("cutoff = {}\n", m.cutoff));
    h.push_str(&format!("decode_mask = {}\n", m.decode_mask));
    let offsets: Vec<String> = m.template.offsets.iter().map(|o| o.to_string()).collect();
    h.push_str(&format!("offsets = {}\n", offsets.join(",")));
    push_items(&mut h, "labels", &m.labels);
    push_items(&mut h, "features", m.feature_names());
    for gaz in &m.template.gazetteers {
        if gaz.name.contains([']', '\n']) {
            return Err(Error::ModelFile(format!(
                "gazetteer name {:?} cannot be serialized",
                gaz.name
            )));
        }
        push_items(&mut h, &format!("gazetteer {}", gaz.name), gaz.entries());
    }
    Ok(h)
}

/// Serialize a model. `dtype` selects the on-disk float width; `F32` halves
/// the file at the cost of float precision (predictions are unaffected away
/// from degenerate score ties).
pub fn save_model(model: ModelRef, mut writer: impl Write, dtype: FloatDtype) -> Result<()> {
    let (header, store) = match &model {
        ModelRef::Neural(m) => (neural_header(m), m.store()),
        ModelRef::Sparse(m) => (sparse_header(m)?, m.store()),
    };

    let mut index: Vec<u8> = Vec::new();
    let mut blobs: Vec<u8> = Vec::new();
    let entries: Vec<(&str, &Tensor)> = store.iter().collect();
    index.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, tensor) in entries {
        let offset = blobs.len() as u64;
        for &v in tensor.data() {
            match dtype {
                FloatDtype::F64 => blobs.extend_from_slice(&v.to_le_bytes()),
                FloatDtype::F32 => blobs.extend_from_slice(&(v as f32).to_le_bytes()),
            }
        }
        let byte_len = blobs.len() as u64 - offset;
        index.extend_from_slice(&(name.len() as u16).to_le_bytes());
        index.extend_from_slice(name.as_bytes());
        index.push(match dtype {
            FloatDtype::F64 => 0,
            FloatDtype::F32 => 1,
        });
        index.push(tensor.shape().len() as u8);
        for &d in tensor.shape() {
            index.extend_from_slice(&(d as u64).to_le_bytes());
        }
        index.extend_from_slice(&offset.to_le_bytes());
        index.extend_from_slice(&byte_len.to_le_bytes());
    }

    let mut out: Vec<u8> = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(&index);
    out.extend_from_slice(&blobs);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    writer.write_all(&out)?;
    Ok(())
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::ModelFile("truncated model file".to_string()));
        }
        let slice = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

struct Header {
    kind: String,
    config: HashMap<String, String>,
    sections: Vec<(String, Vec<String>)>,
}

impl Header {
    fn parse(text: &str) -> Result<Header> {
        let mut kind = String::new();
        let mut config = HashMap::new();
        let mut sections: Vec<(String, Vec<String>)> = Vec::new();
        let mut current: Option<usize> = None;
        for line in text.lines() {
            if let Some(rest) = line.strip_prefix("- ") {
                match current {
                    Some(i) => sections[i].1.push(rest.to_string()),
                    None => return Err(Error::ModelFile("item outside a section".to_string())),
                }
            } else if line.starts_with('[') && line.ends_with(']') {
                let name = &line[1..line.len() - 1];
                sections.push((name.to_string(), Vec::new()));
                current = Some(sections.len() - 1);
                if name == "config" {
                    current = None;
                }
            } else if let Some((key, value)) = line.split_once(" = ") {
                if key == "kind" {
                    kind = value.to_string();
                } else {
                    config.insert(key.to_string(), value.to_string());
                }
            } else if !line.is_empty() {
                return Err(Error::ModelFile(format!("unparseable header line {line:?}")));
            }
        }
        Ok(Header {
            kind,
            config,
            sections,
        })
    }

    fn get(&self, key: &str) -> Result<&str> {
        self.config
            .get(key)
            .map(|s| s.as_str())
            .ok_or_else(|| Error::ModelFile(format!("missing config key {key:?}")))
    }

    fn get_parsed<T: FromStr>(&self, key: &str) -> Result<T> {
        self.get(key)?
            .parse::<T>()
            .map_err(|_| Error::ModelFile(format!("invalid value for {key:?}")))
    }

    fn section(&self, name: &str) -> Result<&[String]> {
        self.sections
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, items)| items.as_slice())
            .ok_or_else(|| Error::ModelFile(format!("missing section [{name}]")))
    }
}

/// Deserialize a model saved by [`save_model`]. The CRC is verified over the
/// whole file before anything else is interpreted.
pub fn load_model(mut reader: impl Read) -> Result<LoadedModel> {
    let mut data = Vec::new();
    reader.read_to_end(&mut data)?;
    if data.len() < MAGIC.len() + 2 + 4 + 4 {
        return Err(Error::ModelFile("file too short".to_string()));
    }
    let (body, trailer) = data.split_at(data.len() - 4);
    let stored_crc = u32::from_le_bytes(trailer.try_into().unwrap());
    if crc32fast::hash(body) != stored_crc {
        return Err(Error::ModelFile("checksum mismatch".to_string()));
    }

    let mut cur = Cursor { data: body, pos: 0 };
    if cur.take(5)? != MAGIC {
        return Err(Error::ModelFile("bad magic bytes".to_string()));
    }
    let version = cur.u16()?;
    if version != VERSION {
        return Err(Error::ModelFile(format!(
            "unsupported format version {version}"
        )));
    }
    let header_len = cur.u32()? as usize;
    let header_bytes = cur.take(header_len)?;
    let header_text = std::str::from_utf8(header_bytes)
        .map_err(|_| Error::ModelFile("header is not UTF-8".to_string()))?;
    let header = Header::parse(header_text)?;

    let n_entries = cur.u32()? as usize;
    struct IndexEntry {
        name: String,
        dtype: u8,
        shape: Vec<usize>,
        offset: u64,
        byte_len: u64,
    }
    let mut entries = Vec::with_capacity(n_entries);
    for _ in 0..n_entries {
        let name_len = cur.u16()? as usize;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|_| Error::ModelFile("parameter name is not UTF-8".to_string()))?
            .to_string();
        let dtype = cur.take(1)?[0];
        if dtype > 1 {
            return Err(Error::ModelFile(format!("unknown dtype {dtype}")));
        }
        let rank = cur.take(1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u64()? as usize);
        }
        let offset = cur.u64()?;
        let byte_len = cur.u64()?;
        entries.push(IndexEntry {
            name,
            dtype,
            shape,
            offset,
            byte_len,
        });
    }
    let blob_start = cur.pos;
    let blobs = &body[blob_start..];

    let mut tensors: HashMap<String, Tensor> = HashMap::new();
    for entry in entries {
        let start = entry.offset as usize;
        let end = start + entry.byte_len as usize;
        if end > blobs.len() {
            return Err(Error::ModelFile("blob out of range".to_string()));
        }
        let raw = &blobs[start..end];
        let width = if entry.dtype == 0 { 8 } else { 4 };
        let n: usize = entry.shape.iter().product();
        if raw.len() != n * width {
            return Err(Error::ModelFile(format!(
                "blob for {:?} has {} bytes, expected {}",
                entry.name,
                raw.len(),
                n * width
            )));
        }
        let values: Vec<f64> = raw
            .chunks_exact(width)
            .map(|chunk| {
                if entry.dtype == 0 {
                    f64::from_le_bytes(chunk.try_into().unwrap())
                } else {
                    f32::from_le_bytes(chunk.try_into().unwrap()) as f64
                }
            })
            .collect();
        tensors.insert(entry.name, Tensor::from_vec(&entry.shape, values)?);
    }

    match header.kind.as_str() {
        "neural" => load_neural(&header, tensors),
        "sparse_crf" => load_sparse(&header, tensors),
        other => Err(Error::ModelFile(format!("unknown model kind {other:?}"))),
    }
}

fn install(model: &mut dyn TrainableModel, mut tensors: HashMap<String, Tensor>) -> Result<()> {
    let store = model.store_mut();
    for id in store.ids().collect::<Vec<_>>() {
        let name = store.name(id).to_string();
        let tensor = tensors
            .remove(&name)
            .ok_or_else(|| Error::ModelFile(format!("missing parameter {name:?}")))?;
        if tensor.shape() != store.value(id).shape() {
            return Err(Error::ModelFile(format!(
                "parameter {name:?} has shape {:?}, expected {:?}",
                tensor.shape(),
                store.value(id).shape()
            )));
        }
        *store.value_mut(id) = tensor;
    }
    if let Some(extra) = tensors.keys().next() {
        return Err(Error::ModelFile(format!("unexpected parameter {extra:?}")));
    }
    Ok(())
}

fn load_neural(header: &Header, tensors: HashMap<String, Tensor>) -> Result<LoadedModel> {
    let cfg = TaggerConfig {
        char_encoder: CharEncoderKind::from_str(header.get("char_encoder")?)?,
        head: HeadKind::from_str(header.get("head")?)?,
        d_syl: header.get_parsed("d_syl")?,
        d_char: header.get_parsed("d_char")?,
        n_filters: header.get_parsed("n_filters")?,
        window: header.get_parsed("window")?,
        char_hidden: header.get_parsed("char_hidden")?,
        hidden_total: header.get_parsed("hidden_total")?,
        dropout: header.get_parsed("dropout")?,
        char_dropout: header.get_parsed("char_dropout")?,
        decode_mask: header.get_parsed("decode_mask")?,
    };
    let alphabets = Alphabets {
        syllables: Vocab::from_items(header.section("syllable_vocab")?.to_vec())?,
        chars: Vocab::from_items(header.section("char_vocab")?.to_vec())?,
        labels: header.section("labels")?.to_vec(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut model = NeuralTagger::new(cfg, alphabets, &mut rng)?;
    install(&mut model, tensors)?;
    Ok(LoadedModel::Neural(model))
}

fn load_sparse(header: &Header, tensors: HashMap<String, Tensor>) -> Result<LoadedModel> {
    let offsets: Vec<i64> = header
        .get("offsets")?
        .split(',')
        .map(|s| {
            s.parse::<i64>()
                .map_err(|_| Error::ModelFile(format!("bad offset {s:?}")))
        })
        .collect::<Result<_>>()?;
    let mut gazetteers = Vec::new();
    for (name, items) in &header.sections {
        if let Some(gaz_name) = name.strip_prefix("gazetteer ") {
            gazetteers.push(Gazetteer::new(gaz_name, items.iter().cloned()));
        }
    }
    let template = FeatureTemplate {
        offsets,
        gazetteers,
    };
    let mut model = SparseCrfModel::from_parts(
        template,
        header.section("labels")?.to_vec(),
        header.section("features")?.to_vec(),
        header.get_parsed("cutoff")?,
        header.get_parsed("decode_mask")?,
    )?;
    install(&mut model, tensors)?;
    Ok(LoadedModel::Sparse(model))
}
