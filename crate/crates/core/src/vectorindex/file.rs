//! Binary index file.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "QLVX" | version u16 | metric u8 | backend u8 | dimension u32 | count u64
//! [approximate only] m u32 | ef_construction u32 | ef_search u32 | seed u64 | entry u32
//! count x { id_len u32 | id utf-8 | dimension x f32 }
//! [approximate only] count x { layers u32 | layers x { n u32 | n x u32 } }
//! ```

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use super::hnsw::{HnswGraph, HnswParams};
use super::{BackendKind, IndexError, IndexInfo, Metric, VectorIndex};

pub const MAGIC: &[u8; 4] = b"QLVX";
pub const FORMAT_VERSION: u16 = 1;
const NO_ENTRY: u32 = u32::MAX;

fn metric_code(m: Metric) -> u8 {
    match m {
        Metric::Cosine => 0,
        Metric::Euclidean => 1,
    }
}

pub fn write_index<W: Write>(index: &VectorIndex, w: &mut W) -> Result<(), IndexError> {
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&[metric_code(index.metric())])?;
    let graph = index.graph();
    w.write_all(&[u8::from(graph.is_some())])?;
    w.write_all(&(index.dimension() as u32).to_le_bytes())?;
    w.write_all(&(index.len() as u64).to_le_bytes())?;
    if let Some(g) = graph {
        w.write_all(&(g.params.m as u32).to_le_bytes())?;
        w.write_all(&(g.params.ef_construction as u32).to_le_bytes())?;
        w.write_all(&(g.params.ef_search as u32).to_le_bytes())?;
        w.write_all(&g.params.seed.to_le_bytes())?;
        w.write_all(&g.entry.unwrap_or(NO_ENTRY).to_le_bytes())?;
    }
    for (i, id) in index.ids().iter().enumerate() {
        w.write_all(&(id.len() as u32).to_le_bytes())?;
        w.write_all(id.as_bytes())?;
        for v in index.row(i) {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    if let Some(g) = graph {
        for layers in &g.links {
            w.write_all(&(layers.len() as u32).to_le_bytes())?;
            for list in layers {
                w.write_all(&(list.len() as u32).to_le_bytes())?;
                for n in list {
                    w.write_all(&n.to_le_bytes())?;
                }
            }
        }
    }
    Ok(())
}

pub fn save_index(index: &VectorIndex, path: &Path) -> Result<(), IndexError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_index(index, &mut w)?;
    w.flush()?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], IndexError> {
        let remaining = self.buf.len() - self.pos;
        if remaining < n {
            return Err(IndexError::Truncated {
                offset: self.pos,
                needed: n - remaining,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, IndexError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, IndexError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, IndexError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, IndexError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn corrupt(&self, at: usize, reason: impl Into<String>) -> IndexError {
        IndexError::Corrupt {
            offset: at,
            reason: reason.into(),
        }
    }
}

struct Header {
    version: u16,
    metric: Metric,
    approximate: bool,
    dimension: usize,
    count: usize,
    hnsw: Option<(HnswParams, Option<u32>)>,
}

fn read_header(c: &mut Cursor<'_>) -> Result<Header, IndexError> {
    if c.buf.len() < 4 {
        return Err(IndexError::Truncated {
            offset: 0,
            needed: 4 - c.buf.len(),
        });
    }
    if c.take(4)? != MAGIC {
        return Err(IndexError::BadMagic);
    }
    let version = c.u16()?;
    if version != FORMAT_VERSION {
        return Err(IndexError::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let at = c.pos;
    let metric = match c.u8()? {
        0 => Metric::Cosine,
        1 => Metric::Euclidean,
        other => return Err(c.corrupt(at, format!("unknown metric code {other}"))),
    };
    let at = c.pos;
    let approximate = match c.u8()? {
        0 => false,
        1 => true,
        other => return Err(c.corrupt(at, format!("unknown backend code {other}"))),
    };
    let dimension = c.u32()? as usize;
    let count = c.u64()? as usize;
    let hnsw = if approximate {
        let m = c.u32()? as usize;
        let ef_construction = c.u32()? as usize;
        let ef_search = c.u32()? as usize;
        let seed = c.u64()?;
        let at = c.pos;
        let entry = c.u32()?;
        let entry = if entry == NO_ENTRY {
            None
        } else if (entry as usize) < count {
            Some(entry)
        } else {
            return Err(c.corrupt(at, "entry point out of range"));
        };
        Some((
            HnswParams {
                m,
                ef_construction,
                ef_search,
                seed,
            },
            entry,
        ))
    } else {
        None
    };
    Ok(Header {
        version,
        metric,
        approximate,
        dimension,
        count,
        hnsw,
    })
}

fn header_info(h: &Header) -> IndexInfo {
    IndexInfo {
        version: h.version,
        dimension: h.dimension,
        metric: h.metric,
        backend: if h.approximate {
            BackendKind::Approximate
        } else {
            BackendKind::Exact
        },
        count: h.count,
        hnsw: h.hnsw.map(|(p, _)| p),
    }
}

/// Reads just the header.
pub fn read_info(bytes: &[u8]) -> Result<IndexInfo, IndexError> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    Ok(header_info(&read_header(&mut c)?))
}

pub fn read_index(bytes: &[u8]) -> Result<VectorIndex, IndexError> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    let h = read_header(&mut c)?;
    let mut ids = Vec::with_capacity(h.count.min(1 << 20));
    let mut data = Vec::with_capacity((h.count * h.dimension).min(1 << 24));
    for _ in 0..h.count {
        let len = c.u32()? as usize;
        let at = c.pos;
        let raw = c.take(len)?;
        let id = std::str::from_utf8(raw).map_err(|_| c.corrupt(at, "work id is not utf-8"))?;
        ids.push(id.to_string());
        let at = c.pos;
        let floats = c.take(h.dimension * 4)?;
        for chunk in floats.chunks_exact(4) {
            let v = f32::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(c.corrupt(at, "non-finite vector component"));
            }
            data.push(v);
        }
    }
    let graph = match h.hnsw {
        None => None,
        Some((params, entry)) => {
            let mut links = Vec::with_capacity(h.count);
            for _ in 0..h.count {
                let at = c.pos;
                let layers = c.u32()? as usize;
                if layers == 0 || layers > 64 {
                    return Err(c.corrupt(at, format!("implausible layer count {layers}")));
                }
                let mut node = Vec::with_capacity(layers);
                for _ in 0..layers {
                    let n = c.u32()? as usize;
                    let mut list = Vec::with_capacity(n.min(1024));
                    for _ in 0..n {
                        let at = c.pos;
                        let target = c.u32()?;
                        if target as usize >= h.count {
                            return Err(c.corrupt(at, "link target out of range"));
                        }
                        list.push(target);
                    }
                    node.push(list);
                }
                links.push(node);
            }
            Some(HnswGraph {
                params,
                entry,
                links,
            })
        }
    };
    if c.pos != bytes.len() {
        return Err(c.corrupt(c.pos, "trailing bytes after index data"));
    }
    Ok(VectorIndex::from_parts(h.dimension, h.metric, ids, data, graph))
}

pub fn load_index(path: &Path) -> Result<VectorIndex, IndexError> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    read_index(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vectorindex::{Backend, EmbeddingVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn items(n: usize, dim: usize, seed: u64) -> Vec<(String, EmbeddingVector)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let v = (0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
                (format!("id-{i}"), EmbeddingVector::new(v).unwrap())
            })
            .collect()
    }

    fn bytes_of(idx: &VectorIndex) -> Vec<u8> {
        let mut buf = Vec::new();
        write_index(idx, &mut buf).unwrap();
        buf
    }

    #[test]
    fn exact_round_trip_answers_identically() {
        let idx = VectorIndex::build(12, items(400, 12, 1), Metric::Cosine, Backend::Exact).unwrap();
        let loaded = read_index(&bytes_of(&idx)).unwrap();
        assert_eq!(loaded.info(), idx.info());
        for (_, q) in items(50, 12, 2) {
            assert_eq!(idx.query(&q, 10).unwrap(), loaded.query(&q, 10).unwrap());
        }
    }

    #[test]
    fn approximate_round_trip_answers_identically() {
        let idx = VectorIndex::build(12, items(400, 12, 3), Metric::Euclidean, Backend::approximate()).unwrap();
        let loaded = read_index(&bytes_of(&idx)).unwrap();
        assert_eq!(loaded.info(), idx.info());
        for (_, q) in items(50, 12, 4) {
            assert_eq!(idx.query(&q, 10).unwrap(), loaded.query(&q, 10).unwrap());
        }
    }

    #[test]
    fn empty_round_trip() {
        for backend in [Backend::Exact, Backend::approximate()] {
            let idx = VectorIndex::build(4, vec![], Metric::Cosine, backend).unwrap();
            let loaded = read_index(&bytes_of(&idx)).unwrap();
            assert_eq!(loaded.len(), 0);
        }
    }

    #[test]
    fn truncation_is_reported_with_offset() {
        let idx = VectorIndex::build(4, items(10, 4, 5), Metric::Cosine, Backend::approximate()).unwrap();
        let bytes = bytes_of(&idx);
        for cut in [2, 10, bytes.len() / 2, bytes.len() - 1] {
            match read_index(&bytes[..cut]) {
                Err(IndexError::Truncated { offset, .. }) => assert!(offset <= cut),
                other => panic!("cut {cut}: expected truncation, got {other:?}"),
            }
        }
    }

    #[test]
    fn bad_magic_and_version() {
        assert!(matches!(read_index(b"NOPE\x01\x00"), Err(IndexError::BadMagic)));
        let idx = VectorIndex::build(2, vec![], Metric::Cosine, Backend::Exact).unwrap();
        let mut bytes = bytes_of(&idx);
        bytes[4] = 9;
        assert!(matches!(read_index(&bytes), Err(IndexError::Version { found: 9, .. })));
    }

    #[test]
    fn info_reads_header_only() {
        let idx = VectorIndex::build(6, items(20, 6, 8), Metric::Euclidean, Backend::Exact).unwrap();
        let info = read_info(&bytes_of(&idx)).unwrap();
        assert_eq!(info.count, 20);
        assert_eq!(info.dimension, 6);
        assert_eq!(info.metric, Metric::Euclidean);
        assert_eq!(info.backend, BackendKind::Exact);
    }
}
