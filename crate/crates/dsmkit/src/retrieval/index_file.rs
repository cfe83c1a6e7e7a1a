//! Single-file index persistence.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic     8 bytes   "DSMRIDX1" (version byte folded into the magic)
//! dim       u32
//! backend   u32 length + UTF-8 bytes of the backend id
//! count     u32       number of chunks N
//! chunk * N:
//!   id          u32
//!   doc_id      u32 length + UTF-8 bytes
//!   span_start  u64   (char offset)
//!   span_end    u64
//!   text        u32 length + UTF-8 bytes
//! vector * N:
//!   dim f64 values, IEEE-754 bit patterns
//! ```
//!
//! The layout is fixed; a golden-file test pins the exact bytes.

use std::io::{Read, Write};

use super::{Chunk, EmbeddingVector, RetrievalError, RetrievalIndex};

const MAGIC: &[u8; 8] = b"DSMRIDX1";

pub fn save_index(index: &RetrievalIndex, out: &mut impl Write) -> Result<(), RetrievalError> {
    let io_err = |e: std::io::Error| RetrievalError::Io(e.to_string());
    out.write_all(MAGIC).map_err(io_err)?;
    out.write_all(&(index.dim as u32).to_le_bytes()).map_err(io_err)?;
    write_str(out, &index.backend_id)?;
    out.write_all(&(index.chunks.len() as u32).to_le_bytes()).map_err(io_err)?;
    for chunk in &index.chunks {
        out.write_all(&(chunk.id as u32).to_le_bytes()).map_err(io_err)?;
        write_str(out, &chunk.doc_id)?;
        out.write_all(&(chunk.span.0 as u64).to_le_bytes()).map_err(io_err)?;
        out.write_all(&(chunk.span.1 as u64).to_le_bytes()).map_err(io_err)?;
        write_str(out, &chunk.text)?;
    }
    for vector in &index.vectors {
        for v in &vector.values {
            out.write_all(&v.to_le_bytes()).map_err(io_err)?;
        }
    }
    Ok(())
}

pub fn load_index(input: &mut impl Read) -> Result<RetrievalIndex, RetrievalError> {
    let mut magic = [0u8; 8];
    read_exact(input, &mut magic)?;
    if &magic != MAGIC {
        return Err(RetrievalError::BadIndexFile(format!(
            "bad magic {:?}, expected {:?}",
            magic, MAGIC
        )));
    }
    let dim = read_u32(input)? as usize;
    let backend_id = read_str(input)?;
    let count = read_u32(input)? as usize;

    let mut chunks = Vec::with_capacity(count);
    for n in 0..count {
        let id = read_u32(input)? as usize;
        if id != n + 1 {
            return Err(RetrievalError::BadIndexFile(format!(
                "chunk ids must be dense 1..=N, found {id} at position {n}"
            )));
        }
        let doc_id = read_str(input)?;
        let span_start = read_u64(input)? as usize;
        let span_end = read_u64(input)? as usize;
        let text = read_str(input)?;
        if text.is_empty() {
            return Err(RetrievalError::BadIndexFile(format!("chunk {id} has empty text")));
        }
        chunks.push(Chunk { id, doc_id, text, span: (span_start, span_end) });
    }
    let mut vectors = Vec::with_capacity(count);
    for _ in 0..count {
        let mut values = Vec::with_capacity(dim);
        for _ in 0..dim {
            let mut buf = [0u8; 8];
            read_exact(input, &mut buf)?;
            let v = f64::from_le_bytes(buf);
            if !v.is_finite() {
                return Err(RetrievalError::BadIndexFile("non-finite vector entry".into()));
            }
            values.push(v);
        }
        vectors.push(EmbeddingVector { values });
    }
    // Trailing garbage means the file does not match the documented layout.
    let mut probe = [0u8; 1];
    match input.read(&mut probe) {
        Ok(0) => {}
        Ok(_) => {
            return Err(RetrievalError::BadIndexFile("trailing bytes after vectors".into()))
        }
        Err(e) => return Err(RetrievalError::Io(e.to_string())),
    }
    Ok(RetrievalIndex { chunks, vectors, backend_id, dim })
}

fn write_str(out: &mut impl Write, s: &str) -> Result<(), RetrievalError> {
    let io_err = |e: std::io::Error| RetrievalError::Io(e.to_string());
    out.write_all(&(s.len() as u32).to_le_bytes()).map_err(io_err)?;
    out.write_all(s.as_bytes()).map_err(io_err)
}

fn read_exact(input: &mut impl Read, buf: &mut [u8]) -> Result<(), RetrievalError> {
    input.read_exact(buf).map_err(|e| RetrievalError::BadIndexFile(format!("truncated: {e}")))
}

fn read_u32(input: &mut impl Read) -> Result<u32, RetrievalError> {
    let mut buf = [0u8; 4];
    read_exact(input, &mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(input: &mut impl Read) -> Result<u64, RetrievalError> {
    let mut buf = [0u8; 8];
    read_exact(input, &mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_str(input: &mut impl Read) -> Result<String, RetrievalError> {
    let len = read_u32(input)? as usize;
    if len > 64 * 1024 * 1024 {
        return Err(RetrievalError::BadIndexFile(format!("string length {len} implausible")));
    }
    let mut buf = vec![0u8; len];
    read_exact(input, &mut buf)?;
    String::from_utf8(buf)
        .map_err(|_| RetrievalError::BadIndexFile("string is not valid UTF-8".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::{build_index, chunk_corpus, top_k, ChunkParams, HashedBagEmbedder};
    use crate::retrieval::EmbeddingBackend;
    use proptest::prelude::*;

    #[test]
    fn roundtrip_preserves_index() {
        let docs = vec![
            ("a.txt".to_string(), "battery charges overnight at low tariff".to_string()),
            ("b.txt".to_string(), "dishwasher runs one contiguous block".to_string()),
        ];
        let chunks = chunk_corpus(&docs, ChunkParams { window_chars: 24, overlap_chars: 6 }).unwrap();
        let backend = HashedBagEmbedder { dim: 16 };
        let index = build_index(chunks, &backend).unwrap();
        let mut bytes = Vec::new();
        save_index(&index, &mut bytes).unwrap();
        let loaded = load_index(&mut bytes.as_slice()).unwrap();
        assert_eq!(index, loaded);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let err = load_index(&mut &b"NOTANIDX"[..]).unwrap_err();
        assert!(matches!(err, RetrievalError::BadIndexFile(_)));
        let docs = vec![("a".to_string(), "some text here".to_string())];
        let chunks = chunk_corpus(&docs, ChunkParams { window_chars: 32, overlap_chars: 0 }).unwrap();
        let index = build_index(chunks, &HashedBagEmbedder { dim: 4 }).unwrap();
        let mut bytes = Vec::new();
        save_index(&index, &mut bytes).unwrap();
        let err = load_index(&mut &bytes[..bytes.len() - 3]).unwrap_err();
        assert!(matches!(err, RetrievalError::BadIndexFile(_)));
    }

    #[test]
    fn golden_layout_is_stable() {
        // One chunk, dim 2, fixed vector: the exact bytes are pinned so the
        // on-disk format cannot drift silently.
        let index = RetrievalIndex {
            chunks: vec![Chunk {
                id: 1,
                doc_id: "d".into(),
                text: "ab".into(),
                span: (0, 2),
            }],
            vectors: vec![EmbeddingVector { values: vec![1.0, -2.0] }],
            backend_id: "x".into(),
            dim: 2,
        };
        let mut bytes = Vec::new();
        save_index(&index, &mut bytes).unwrap();
        let expected_hex = concat!(
            "44534d5249445831", // magic "DSMRIDX1"
            "02000000",         // dim = 2
            "01000000", "78",   // backend id "x"
            "01000000",         // one chunk
            "01000000",         // chunk id 1
            "01000000", "64",   // doc id "d"
            "0000000000000000", // span start 0
            "0200000000000000", // span end 2
            "02000000", "6162", // text "ab"
            "000000000000f03f", // 1.0 LE
            "00000000000000c0", // -2.0 LE
        );
        let got_hex: String = bytes.iter().map(|b| format!("{b:02x}")).collect();
        assert_eq!(got_hex, expected_hex);
    }

    proptest! {
        /// Persist + reload yields identical top-k output for any query.
        #[test]
        fn roundtrip_preserves_topk(
            texts in proptest::collection::vec("[a-z ]{1,40}", 1..8),
            query in "[a-z ]{1,20}",
        ) {
            let docs: Vec<(String, String)> = texts
                .into_iter()
                .enumerate()
                .map(|(i, t)| (format!("doc{i}"), t))
                .collect();
            let chunks = chunk_corpus(&docs, ChunkParams { window_chars: 16, overlap_chars: 4 });
            prop_assume!(chunks.is_ok());
            let backend = HashedBagEmbedder { dim: 8 };
            let index = build_index(chunks.unwrap(), &backend).unwrap();
            let mut bytes = Vec::new();
            save_index(&index, &mut bytes).unwrap();
            let loaded = load_index(&mut bytes.as_slice()).unwrap();
            let q = backend.embed(&query).unwrap();
            let a = top_k(&q, &index, 3).unwrap();
            let b = top_k(&q, &loaded, 3).unwrap();
            prop_assert_eq!(a.len(), b.len());
            for (x, y) in a.iter().zip(b.iter()) {
                prop_assert_eq!(x.0.id, y.0.id);
                prop_assert_eq!(x.1.to_bits(), y.1.to_bits());
            }
        }
    }
}
