//! `GCEB` embedding files.
//!
//! Layout, all little-endian:
//!
//! | bytes | field            |
//! |-------|------------------|
//! | 4     | magic `GCEB`     |
//! | 4     | u32 version = 1  |
//! | 8     | u64 count (rows) |
//! | 4     | u32 dim          |
//! | 4     | u32 views        |
//! | ...   | count × dim f32  |
//!
//! `count` is the number of stored rows; with `views > 1` consecutive groups
//! of `views` rows belong to the same record.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use crate::error::{GeoError, Result};
use crate::linalg::Matrix;

pub const EMBEDDING_MAGIC: [u8; 4] = *b"GCEB";
pub const EMBEDDING_VERSION: u32 = 1;
const HEADER_LEN: usize = 24;
const ALLOWED_DIMS: [usize; 2] = [512, 768];

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingFile {
    pub rows: Matrix,
    pub views: usize,
}

impl EmbeddingFile {
    pub fn new(rows: Matrix, views: usize) -> Result<Self> {
        let f = Self { rows, views };
        f.validate()?;
        Ok(f)
    }

    fn validate(&self) -> Result<()> {
        if !ALLOWED_DIMS.contains(&self.rows.cols()) {
            return Err(GeoError::Format(format!(
                "embedding dimension {} is not one of {ALLOWED_DIMS:?}",
                self.rows.cols()
            )));
        }
        if self.views == 0 || self.rows.rows() % self.views != 0 {
            return Err(GeoError::Format(format!(
                "{} rows cannot be grouped into records of {} views",
                self.rows.rows(),
                self.views
            )));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.rows.cols()
    }

    /// Number of records, i.e. rows divided by views.
    pub fn records(&self) -> usize {
        self.rows.rows() / self.views
    }
}

pub fn encode_embeddings(file: &EmbeddingFile) -> Result<Vec<u8>> {
    file.validate()?;
    let m = &file.rows;
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * m.as_slice().len());
    out.extend_from_slice(&EMBEDDING_MAGIC);
    out.extend_from_slice(&EMBEDDING_VERSION.to_le_bytes());
    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    out.extend_from_slice(&(file.views as u32).to_le_bytes());
    for &v in m.as_slice() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn write_embeddings(file: &EmbeddingFile, path: impl AsRef<Path>) -> Result<()> {
    super::write_atomic(path, &encode_embeddings(file)?)
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().expect("4-byte slice"))
}

pub fn decode_embeddings(mut reader: impl Read) -> Result<EmbeddingFile> {
    let mut header = [0u8; HEADER_LEN];
    reader
        .read_exact(&mut header)
        .map_err(|_| GeoError::Format("file shorter than the embedding header".into()))?;
    if header[..4] != EMBEDDING_MAGIC {
        return Err(GeoError::Format("bad magic, not an embedding file".into()));
    }
    let version = u32_at(&header, 4);
    if version != EMBEDDING_VERSION {
        return Err(GeoError::Format(format!("unsupported embedding file version {version}")));
    }
    let count = u64::from_le_bytes(header[8..16].try_into().expect("8-byte slice"));
    let dim = u32_at(&header, 16) as usize;
    let views = u32_at(&header, 20) as usize;
    if !ALLOWED_DIMS.contains(&dim) {
        return Err(GeoError::Format(format!("embedding dimension {dim} is not one of {ALLOWED_DIMS:?}")));
    }
    let count = usize::try_from(count).map_err(|_| GeoError::Format(format!("row count {count} too large")))?;
    let expected = count
        .checked_mul(dim * 4)
        .ok_or_else(|| GeoError::Format(format!("row count {count} too large")))?;

    let mut payload = Vec::new();
    reader.read_to_end(&mut payload)?;
    if payload.len() != expected {
        return Err(GeoError::Corruption(format!(
            "payload is {} bytes, header promises {expected}",
            payload.len()
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")) as f64)
        .collect();
    EmbeddingFile::new(Matrix::from_vec(count, dim, data)?, views)
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingFile> {
    let path = path.as_ref();
    decode_embeddings(BufReader::new(File::open(path).map_err(super::with_path(path))?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(rows: usize, dim: usize) -> Matrix {
        let data = (0..rows * dim).map(|i| (i as f64 * 0.37).sin()).collect();
        Matrix::from_vec(rows, dim, data).unwrap()
    }

    fn as_f32_exact(m: &Matrix) -> Matrix {
        let data = m.as_slice().iter().map(|&v| v as f32 as f64).collect();
        Matrix::from_vec(m.rows(), m.cols(), data).unwrap()
    }

    #[test]
    fn round_trip_is_exact_at_f32() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.gceb");
        let f = EmbeddingFile::new(as_f32_exact(&sample(3, 512)), 1).unwrap();
        write_embeddings(&f, &path).unwrap();
        assert_eq!(read_embeddings(&path).unwrap(), f);
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 24 + 3 * 512 * 4);
    }

    #[test]
    fn header_layout() {
        let f = EmbeddingFile::new(sample(4, 768), 2).unwrap();
        let bytes = encode_embeddings(&f).unwrap();
        assert_eq!(&bytes[..4], b"GCEB");
        assert_eq!(bytes[4..8], [1, 0, 0, 0]);
        assert_eq!(bytes[8..16], [4, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(bytes[16..20], 768u32.to_le_bytes());
        assert_eq!(bytes[20..24], [2, 0, 0, 0]);
        assert_eq!(bytes[24..28], (f.rows.get(0, 0) as f32).to_le_bytes());
        assert_eq!(f.records(), 2);
    }

    #[test]
    fn empty_file_is_valid() {
        let f = EmbeddingFile::new(Matrix::zeros(0, 512), 1).unwrap();
        let back = decode_embeddings(encode_embeddings(&f).unwrap().as_slice()).unwrap();
        assert_eq!(back.rows.rows(), 0);
        assert_eq!(back.dim(), 512);
    }

    #[test]
    fn short_payload_is_corruption() {
        let f = EmbeddingFile::new(sample(2, 512), 1).unwrap();
        let mut bytes = encode_embeddings(&f).unwrap();
        bytes.pop();
        assert_eq!(decode_embeddings(bytes.as_slice()).unwrap_err().kind(), "corruption");
        bytes.extend_from_slice(&[0, 0]);
        assert_eq!(decode_embeddings(bytes.as_slice()).unwrap_err().kind(), "corruption");
    }

    #[test]
    fn header_errors_are_format() {
        let f = EmbeddingFile::new(sample(1, 512), 1).unwrap();
        let good = encode_embeddings(&f).unwrap();

        let mut magic = good.clone();
        magic[0] = b'X';
        assert_eq!(decode_embeddings(magic.as_slice()).unwrap_err().kind(), "format");

        let mut version = good.clone();
        version[4] = 2;
        assert_eq!(decode_embeddings(version.as_slice()).unwrap_err().kind(), "format");

        let mut dim = good.clone();
        dim[16..20].copy_from_slice(&100u32.to_le_bytes());
        assert_eq!(decode_embeddings(dim.as_slice()).unwrap_err().kind(), "format");

        assert_eq!(decode_embeddings(&good[..10]).unwrap_err().kind(), "format");
        assert!(EmbeddingFile::new(sample(3, 512), 2).is_err());
        assert!(EmbeddingFile::new(sample(3, 64), 1).is_err());
    }
}
