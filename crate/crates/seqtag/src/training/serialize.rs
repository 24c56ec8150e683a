//! Binary model files: magic "SEQTAG/1", then length-prefixed named
//! sections in a fixed order. All integers little-endian; floats are
//! 64-bit LE bit patterns, so round-trips are bit-exact.
//!
//! A file whose first 8 bytes are not the magic is a format error;
//! anything structurally wrong after the magic (premature end, unknown
//! or misordered section, trailing bytes) is a corruption error.

use std::collections::HashMap;
use std::path::Path;

use crate::corpus::{EntityType, LabelVocab};
use crate::crf::TransitionMatrix;
use crate::encoders::lstm::{BiLstmParams, LstmParams};
use crate::encoders::{AffineLayer, EmbeddingProvider, LinearHead, PosVocab};
use crate::error::{Error, Result};
use crate::numeric::Matrix;
use crate::training::{Architecture, ModelParams, Optimizer, TrainConfig};

const MAGIC: &[u8; 8] = b"SEQTAG/1";
const SECTIONS: [&str; 7] = [
    "config",
    "labels",
    "provider",
    "pos",
    "bilstm",
    "head",
    "transitions",
];

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn string(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }

    fn matrix(&mut self, m: &Matrix) {
        self.u64(m.rows() as u64);
        self.u64(m.cols() as u64);
        for &v in m.data() {
            self.f64(v);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Corrupt(format!(
                "unexpected end of model file at byte {}",
                self.buf.len()
            )));
        }
        let slice = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> Result<usize> {
        Ok(self.u64()? as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| Error::Corrupt("non-UTF-8 string in model file".into()))
    }

    fn matrix(&mut self) -> Result<Matrix> {
        let rows = self.usize()?;
        let cols = self.usize()?;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(self.f64()?);
        }
        Matrix::from_vec(rows, cols, data)
    }
}

fn arch_code(a: Architecture) -> u8 {
    match a {
        Architecture::Linear => 0,
        Architecture::Crf => 1,
        Architecture::BilstmCrf => 2,
    }
}

fn arch_from_code(c: u8) -> Result<Architecture> {
    match c {
        0 => Ok(Architecture::Linear),
        1 => Ok(Architecture::Crf),
        2 => Ok(Architecture::BilstmCrf),
        other => Err(Error::Corrupt(format!("unknown architecture code {other}"))),
    }
}

fn write_config(w: &mut Writer, c: &TrainConfig) {
    w.u8(arch_code(c.architecture));
    w.u64(c.epochs as u64);
    w.f64(c.learning_rate);
    w.f64(c.dropout);
    w.u64(c.batch_size as u64);
    w.u64(c.seed);
    w.u64(c.patience as u64);
    w.u8(u8::from(c.pos_features) | (u8::from(c.bio_mask) << 1));
    w.u64(c.hidden_dim as u64);
    w.u64(c.embed_dim as u64);
    w.u8(match c.optimizer {
        Optimizer::Sgd => 0,
        Optimizer::Adam => 1,
    });
    match c.clip_norm {
        Some(v) => {
            w.u8(1);
            w.f64(v);
        }
        None => {
            w.u8(0);
            w.f64(0.0);
        }
    }
}

fn read_config(r: &mut Reader) -> Result<TrainConfig> {
    let architecture = arch_from_code(r.u8()?)?;
    let epochs = r.usize()?;
    let learning_rate = r.f64()?;
    let dropout = r.f64()?;
    let batch_size = r.usize()?;
    let seed = r.u64()?;
    let patience = r.usize()?;
    let flags = r.u8()?;
    let hidden_dim = r.usize()?;
    let embed_dim = r.usize()?;
    let optimizer = match r.u8()? {
        0 => Optimizer::Sgd,
        1 => Optimizer::Adam,
        other => return Err(Error::Corrupt(format!("unknown optimizer code {other}"))),
    };
    let has_clip = r.u8()? == 1;
    let clip_value = r.f64()?;
    Ok(TrainConfig {
        architecture,
        epochs,
        learning_rate,
        dropout,
        batch_size,
        seed,
        patience,
        pos_features: flags & 1 != 0,
        bio_mask: flags & 2 != 0,
        hidden_dim,
        embed_dim,
        optimizer,
        clip_norm: has_clip.then_some(clip_value),
    })
}

fn write_provider(w: &mut Writer, p: &EmbeddingProvider) {
    match p {
        EmbeddingProvider::Trainable { tokens, table, .. } => {
            w.u8(0);
            w.u64(tokens.len() as u64);
            for t in tokens {
                w.string(t);
            }
            w.matrix(table);
        }
        EmbeddingProvider::Precomputed { dim, cache } => {
            w.u8(1);
            w.u64(*dim as u64);
            // Sorted so identical models serialize to identical bytes.
            let mut ids: Vec<&String> = cache.keys().collect();
            ids.sort();
            w.u64(ids.len() as u64);
            for id in ids {
                w.string(id);
                w.matrix(&cache[id]);
            }
        }
    }
}

fn read_provider(r: &mut Reader) -> Result<EmbeddingProvider> {
    match r.u8()? {
        0 => {
            let count = r.usize()?;
            let mut tokens = Vec::with_capacity(count);
            for _ in 0..count {
                tokens.push(r.string()?);
            }
            let table = r.matrix()?;
            if table.rows() != tokens.len() + 1 {
                return Err(Error::Corrupt(format!(
                    "embedding table has {} rows for {} tokens",
                    table.rows(),
                    tokens.len()
                )));
            }
            let index = tokens
                .iter()
                .enumerate()
                .map(|(i, t)| (t.clone(), i + 1))
                .collect();
            Ok(EmbeddingProvider::Trainable {
                tokens,
                index,
                table,
            })
        }
        1 => {
            let dim = r.usize()?;
            let count = r.usize()?;
            let mut cache = HashMap::with_capacity(count);
            for _ in 0..count {
                let id = r.string()?;
                cache.insert(id, r.matrix()?);
            }
            Ok(EmbeddingProvider::Precomputed { dim, cache })
        }
        other => Err(Error::Corrupt(format!("unknown provider mode {other}"))),
    }
}

fn write_section(out: &mut Vec<u8>, name: &str, payload: Vec<u8>) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&payload);
}

pub fn to_bytes(params: &ModelParams) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);

    let mut payloads: Vec<Vec<u8>> = Vec::with_capacity(SECTIONS.len());
    let section = |f: &dyn Fn(&mut Writer)| {
        let mut w = Writer { buf: Vec::new() };
        f(&mut w);
        w.buf
    };

    payloads.push(section(&|w| write_config(w, &params.config)));
    payloads.push(section(&|w| {
        w.u64(params.vocab.tags().len() as u64);
        for t in params.vocab.tags() {
            w.string(t);
        }
    }));
    payloads.push(section(&|w| write_provider(w, &params.provider)));
    payloads.push(section(&|w| match &params.pos_vocab {
        Some(v) => {
            w.u8(1);
            w.u64(v.len() as u64);
            for t in v.tags() {
                w.string(t);
            }
        }
        None => w.u8(0),
    }));
    payloads.push(section(&|w| match &params.bilstm {
        Some(b) => {
            w.u8(1);
            for dir in [&b.forward, &b.backward] {
                w.matrix(&dir.w_input);
                w.matrix(&dir.w_hidden);
                w.matrix(&dir.bias);
            }
        }
        None => w.u8(0),
    }));
    payloads.push(section(&|w| {
        w.u64(params.head.layers.len() as u64);
        for l in &params.head.layers {
            w.matrix(&l.w);
            w.matrix(&l.b);
        }
    }));
    payloads.push(section(&|w| match &params.transitions {
        Some(t) => {
            w.u8(1);
            w.matrix(t.matrix());
        }
        None => w.u8(0),
    }));

    for (name, payload) in SECTIONS.iter().zip(payloads) {
        write_section(&mut out, name, payload);
    }
    out
}

fn read_labels(r: &mut Reader) -> Result<LabelVocab> {
    let count = r.usize()?;
    let mut tags = Vec::with_capacity(count);
    for _ in 0..count {
        tags.push(r.string()?);
    }
    // Rebuild from the entity types implied by the B- tags, then verify
    // the stored list matches the canonical ordering exactly.
    let mut types: Vec<EntityType> = Vec::new();
    for tag in &tags {
        if let Some(rest) = tag.strip_prefix("B-") {
            types.push(rest.parse().map_err(|e| Error::Corrupt(format!("{e}")))?);
        }
    }
    let vocab = LabelVocab::new(&types);
    if vocab.tags() != tags.as_slice() {
        return Err(Error::Corrupt("label vocabulary is not in canonical order".into()));
    }
    Ok(vocab)
}

pub fn from_bytes(bytes: &[u8]) -> Result<ModelParams> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Format(
            "not a SEQTAG/1 model file (bad magic header)".into(),
        ));
    }
    let mut r = Reader {
        buf: bytes,
        pos: MAGIC.len(),
    };

    let mut sections: Vec<(String, &[u8])> = Vec::with_capacity(SECTIONS.len());
    while !r.done() {
        let name_len = r.u32()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::Corrupt("non-UTF-8 section name".into()))?;
        let payload_len = r.u64()? as usize;
        sections.push((name, r.take(payload_len)?));
    }
    if sections.len() != SECTIONS.len()
        || sections.iter().map(|(n, _)| n.as_str()).ne(SECTIONS)
    {
        return Err(Error::Corrupt(format!(
            "expected sections {:?}, found {:?}",
            SECTIONS,
            sections.iter().map(|(n, _)| n.as_str()).collect::<Vec<_>>()
        )));
    }

    let mut readers: Vec<Reader> = sections
        .iter()
        .map(|(_, payload)| Reader { buf: payload, pos: 0 })
        .collect();

    let config = read_config(&mut readers[0])?;
    let vocab = read_labels(&mut readers[1])?;
    let provider = read_provider(&mut readers[2])?;

    let pos_vocab = if readers[3].u8()? == 1 {
        let count = readers[3].usize()?;
        let mut tags = Vec::with_capacity(count);
        for _ in 0..count {
            tags.push(readers[3].string()?);
        }
        Some(PosVocab::from_tags(tags))
    } else {
        None
    };

    let bilstm = if readers[4].u8()? == 1 {
        let mut dirs = Vec::with_capacity(2);
        for _ in 0..2 {
            dirs.push(LstmParams {
                w_input: readers[4].matrix()?,
                w_hidden: readers[4].matrix()?,
                bias: readers[4].matrix()?,
            });
        }
        let backward = dirs.pop().unwrap();
        let forward = dirs.pop().unwrap();
        Some(BiLstmParams { forward, backward })
    } else {
        None
    };

    let layer_count = readers[5].usize()?;
    if !(1..=2).contains(&layer_count) {
        return Err(Error::Corrupt(format!("head has {layer_count} layers")));
    }
    let mut layers = Vec::with_capacity(layer_count);
    for _ in 0..layer_count {
        layers.push(AffineLayer {
            w: readers[5].matrix()?,
            b: readers[5].matrix()?,
        });
    }
    let head = LinearHead { layers };

    let transitions = if readers[6].u8()? == 1 {
        let mut t = TransitionMatrix::from_matrix(readers[6].matrix()?)?;
        if t.k() != vocab.num_labels() {
            return Err(Error::Corrupt(format!(
                "transition matrix covers {} labels but vocab has {}",
                t.k(),
                vocab.num_labels()
            )));
        }
        if config.bio_mask {
            t.apply_bio_mask(&vocab)?;
        }
        Some(t)
    } else {
        None
    };

    for (reader, name) in readers.iter().zip(SECTIONS) {
        if !reader.done() {
            return Err(Error::Corrupt(format!(
                "trailing bytes in section {name:?}"
            )));
        }
    }

    Ok(ModelParams {
        config,
        vocab,
        provider,
        pos_vocab,
        bilstm,
        head,
        transitions,
    })
}

pub fn save_model(params: &ModelParams, path: &Path) -> Result<()> {
    Ok(std::fs::write(path, to_bytes(params))?)
}

pub fn load_model(path: &Path) -> Result<ModelParams> {
    from_bytes(&std::fs::read(path)?)
}
