//! Documents, corpora, and the byte-level vocabulary.
//!
//! Text corpora tokenize bytes as ids 0..=255, with SEP (256) appended to
//! each document at ingestion so a packed stream keeps its boundaries, and
//! EOS (257) free for generation tasks. Synthetic corpora define their own
//! vocabularies and carry no SEP.
//!
//! Corpus file layout, integers little-endian:
//!   magic "MASC" | u32 version | u64 doc count
//!   per doc: u64 token count | that many u16 token ids

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const SEP_TOKEN: u16 = 256;
pub const EOS_TOKEN: u16 = 257;
/// Byte vocabulary plus SEP and EOS.
pub const BYTE_VOCAB: usize = 258;

pub const CORPUS_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"MASC";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub tokens: Vec<u16>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Corpus {
    pub docs: Vec<Document>,
}

impl Corpus {
    /// Blank-line-separated text blocks become byte-tokenized documents,
    /// each closed by SEP. Blocks that are empty after trimming are dropped.
    pub fn from_text(text: &str) -> Corpus {
        let mut docs = Vec::new();
        for block in text.split("\n\n") {
            let block = block.trim_matches('\n');
            if block.trim().is_empty() {
                continue;
            }
            let mut tokens: Vec<u16> = block.bytes().map(u16::from).collect();
            tokens.push(SEP_TOKEN);
            docs.push(Document { tokens });
        }
        Corpus { docs }
    }

    pub fn total_tokens(&self) -> usize {
        self.docs.iter().map(|d| d.tokens.len()).sum()
    }
}

/// Byte tokens back to text; SEP/EOS and any other non-byte ids are skipped.
pub fn decode_bytes(tokens: &[u16]) -> String {
    let bytes: Vec<u8> = tokens.iter().filter(|&&t| t < 256).map(|&t| t as u8).collect();
    String::from_utf8_lossy(&bytes).into_owned()
}

pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&CORPUS_VERSION.to_le_bytes())?;
    w.write_all(&(corpus.docs.len() as u64).to_le_bytes())?;
    for doc in &corpus.docs {
        w.write_all(&(doc.tokens.len() as u64).to_le_bytes())?;
        for &t in &doc.tokens {
            w.write_all(&t.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::CorpusFormat("file too short for magic".to_string()))?;
    if &magic != MAGIC {
        return Err(Error::CorpusFormat(format!("bad magic {magic:?}")));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)
        .map_err(|_| Error::CorpusFormat("truncated version".to_string()))?;
    let version = u32::from_le_bytes(u32buf);
    if version != CORPUS_VERSION {
        return Err(Error::CorpusFormat(format!(
            "version {version}, this build reads {CORPUS_VERSION}"
        )));
    }
    let mut u64buf = [0u8; 8];
    r.read_exact(&mut u64buf)
        .map_err(|_| Error::CorpusFormat("truncated doc count".to_string()))?;
    let count = u64::from_le_bytes(u64buf) as usize;
    let mut docs = Vec::with_capacity(count.min(1 << 20));
    for i in 0..count {
        r.read_exact(&mut u64buf)
            .map_err(|_| Error::CorpusFormat(format!("truncated length of doc {i}")))?;
        let len = u64::from_le_bytes(u64buf) as usize;
        let mut tokens = Vec::with_capacity(len.min(1 << 24));
        let mut tbuf = [0u8; 2];
        for _ in 0..len {
            r.read_exact(&mut tbuf)
                .map_err(|_| Error::CorpusFormat(format!("truncated tokens in doc {i}")))?;
            tokens.push(u16::from_le_bytes(tbuf));
        }
        docs.push(Document { tokens });
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::CorpusFormat("trailing bytes after last document".to_string()));
    }
    Ok(Corpus { docs })
}

/// Concatenate all documents and cut the stream into consecutive `seq_len`
/// chunks. A final partial chunk is kept when it still admits a prediction
/// (length >= 2). Text corpora already carry a SEP at each document end, so
/// the stream keeps its boundaries.
pub fn pack_chunks(corpus: &Corpus, seq_len: usize) -> Result<Vec<Vec<u16>>> {
    if seq_len < 2 {
        return Err(Error::Config("seq_len must be at least 2".to_string()));
    }
    let mut stream: Vec<u16> = Vec::with_capacity(corpus.total_tokens());
    for doc in &corpus.docs {
        stream.extend_from_slice(&doc.tokens);
    }
    if stream.len() < 2 {
        return Err(Error::EmptyCorpus);
    }
    let mut chunks = Vec::new();
    let mut start = 0;
    while start < stream.len() {
        let end = (start + seq_len).min(stream.len());
        if end - start >= 2 {
            chunks.push(stream[start..end].to_vec());
        }
        start = end;
    }
    if chunks.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(chunks)
}
