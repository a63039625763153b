//! The DNB binary container and parallel chunked reads and writes.
//!
//! Layout, all integers little-endian:
//!
//! | offset | size      | field                          |
//! |--------|-----------|--------------------------------|
//! | 0      | 4         | magic `DNB1`                   |
//! | 4      | 1         | dtype code (1 = f32, 2 = f64)  |
//! | 5      | 1         | ndim                           |
//! | 6      | 8 · ndim  | extents as u64                 |
//! | 6+8·ndim | elem · Π extents | row-major payload       |
//!
//! With a row split every rank reads or writes only the byte range of its
//! own rows.

use std::fs::{File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use crate::array::{local_shape, DndArray};
use crate::distribution::{ChunkMap, Tile};
use crate::scalar::{DType, Scalar};
use crate::transport::Communicator;
use crate::{Error, Result};

pub const MAGIC: [u8; 4] = *b"DNB1";

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("bad magic: expected \"DNB1\", found {found:?}")]
    BadMagic { found: Vec<u8> },
    #[error("unknown dtype code {code}")]
    UnknownDtype { code: u8 },
    #[error("header truncated: need {expected} bytes, file has {actual}")]
    TruncatedHeader { expected: u64, actual: u64 },
    #[error("payload truncated: expected {expected} bytes, found {actual}")]
    Truncated { expected: u64, actual: u64 },
    #[error("trailing bytes after payload: expected {expected} bytes, found {actual}")]
    TrailingBytes { expected: u64, actual: u64 },
    #[error("file holds {file} data, {requested} was requested")]
    DtypeMismatch { file: DType, requested: DType },
    #[error("too many dimensions: {ndim}")]
    TooManyDims { ndim: usize },
    #[error("line {line}: expected {expected} fields, found {found}")]
    Ragged { line: u64, expected: usize, found: usize },
    #[error("line {line}, column {column}: cannot parse {value:?} as a number")]
    Parse { line: u64, column: usize, value: String },
    #[error("csv: {0}")]
    Csv(String),
    #[error("rank 0 failed to write the file header")]
    PeerFailed,
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> FormatError + '_ {
    move |source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Decoded DNB header.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DnbHeader {
    pub dtype: DType,
    pub extents: Vec<u64>,
}

impl DnbHeader {
    pub fn new(dtype: DType, extents: &[usize]) -> Self {
        Self {
            dtype,
            extents: extents.iter().map(|&e| e as u64).collect(),
        }
    }

    pub fn header_len(&self) -> u64 {
        6 + 8 * self.extents.len() as u64
    }

    pub fn payload_len(&self) -> u64 {
        self.dtype.size_bytes() as u64 * self.extents.iter().product::<u64>()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.extents.iter().map(|&e| e as usize).collect()
    }

    pub fn encode(&self) -> Result<Vec<u8>, FormatError> {
        let ndim = self.extents.len();
        if ndim > u8::MAX as usize {
            return Err(FormatError::TooManyDims { ndim });
        }
        let mut out = Vec::with_capacity(self.header_len() as usize);
        out.extend_from_slice(&MAGIC);
        out.push(dtype_code(self.dtype));
        out.push(ndim as u8);
        for e in &self.extents {
            out.extend_from_slice(&e.to_le_bytes());
        }
        Ok(out)
    }

    /// Reads and validates the header, and checks the file length against
    /// it.
    pub fn read(path: &Path) -> Result<Self, FormatError> {
        let mut f = File::open(path).map_err(io_err(path))?;
        let file_len = f.metadata().map_err(io_err(path))?.len();
        let mut fixed = [0u8; 6];
        if file_len < 6 {
            return Err(FormatError::TruncatedHeader {
                expected: 6,
                actual: file_len,
            });
        }
        f.read_exact(&mut fixed).map_err(io_err(path))?;
        if fixed[..4] != MAGIC {
            return Err(FormatError::BadMagic {
                found: fixed[..4].to_vec(),
            });
        }
        let dtype = match fixed[4] {
            1 => DType::F32,
            2 => DType::F64,
            code => return Err(FormatError::UnknownDtype { code }),
        };
        let ndim = fixed[5] as usize;
        let header_len = 6 + 8 * ndim as u64;
        if file_len < header_len {
            return Err(FormatError::TruncatedHeader {
                expected: header_len,
                actual: file_len,
            });
        }
        let mut raw = vec![0u8; 8 * ndim];
        f.read_exact(&mut raw).map_err(io_err(path))?;
        let extents = raw
            .chunks_exact(8)
            .map(|b| u64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        let header = Self { dtype, extents };
        let expected = header_len + header.payload_len();
        if file_len < expected {
            return Err(FormatError::Truncated {
                expected,
                actual: file_len,
            });
        }
        if file_len > expected {
            return Err(FormatError::TrailingBytes {
                expected,
                actual: file_len,
            });
        }
        Ok(header)
    }
}

fn dtype_code(d: DType) -> u8 {
    match d {
        DType::F32 => 1,
        DType::F64 => 2,
    }
}

fn encode_values<T: Scalar>(values: &[T]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * T::DTYPE.size_bytes());
    for &v in values {
        v.to_le_bytes_vec(&mut out);
    }
    out
}

fn decode_values<T: Scalar>(bytes: &[u8]) -> Vec<T> {
    bytes.chunks_exact(T::DTYPE.size_bytes()).map(T::from_le_slice).collect()
}

/// Writes a complete DNB file from one process.
pub fn write_dnb<T: Scalar>(path: &Path, tile: &Tile<T>) -> Result<(), FormatError> {
    let header = DnbHeader::new(T::DTYPE, tile.extents());
    let mut f = File::create(path).map_err(io_err(path))?;
    f.write_all(&header.encode()?).map_err(io_err(path))?;
    f.write_all(&encode_values(tile.data())).map_err(io_err(path))?;
    f.flush().map_err(io_err(path))
}

fn write_at(path: &Path, offset: u64, bytes: &[u8]) -> Result<(), FormatError> {
    let mut f = OpenOptions::new().write(true).open(path).map_err(io_err(path))?;
    f.seek(SeekFrom::Start(offset)).map_err(io_err(path))?;
    f.write_all(bytes).map_err(io_err(path))
}

fn read_at(path: &Path, offset: u64, len: usize) -> Result<Vec<u8>, FormatError> {
    let mut f = File::open(path).map_err(io_err(path))?;
    f.seek(SeekFrom::Start(offset)).map_err(io_err(path))?;
    let mut buf = vec![0u8; len];
    f.read_exact(&mut buf).map_err(io_err(path))?;
    Ok(buf)
}

/// Collective save. Rank 0 writes the header; with a row split every rank
/// then writes its own rows at their byte offset. Arrays split along another
/// axis are resplit to rows first.
pub fn save<T: Scalar>(a: &DndArray<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let a = match a.split() {
        None | Some(0) => a.clone(),
        Some(_) => a.resplit(Some(0))?,
    };
    let comm = a.comm();
    let header = DnbHeader::new(T::DTYPE, a.shape());

    let head_result = if comm.rank() == 0 {
        (|| -> Result<(), FormatError> {
            let mut f = File::create(path).map_err(io_err(path))?;
            f.write_all(&header.encode()?).map_err(io_err(path))?;
            if a.split().is_none() {
                f.write_all(&encode_values(a.local().data())).map_err(io_err(path))?;
            } else {
                f.set_len(header.header_len() + header.payload_len()).map_err(io_err(path))?;
            }
            Ok(())
        })()
    } else {
        Ok(())
    };
    if comm.allreduce_any(head_result.is_err())? {
        return Err(head_result.err().unwrap_or(FormatError::PeerFailed).into());
    }
    if a.split().is_none() {
        return Ok(());
    }

    let row_elems: u64 = a.shape()[1..].iter().map(|&e| e as u64).product();
    let offset = header.header_len() + a.local_offset() as u64 * row_elems * T::DTYPE.size_bytes() as u64;
    let body = if a.local().is_empty() {
        Ok(())
    } else {
        write_at(path, offset, &encode_values(a.local().data()))
    };
    // doubles as the completion barrier
    if comm.allreduce_any(body.is_err())? {
        return Err(body.err().unwrap_or(FormatError::PeerFailed).into());
    }
    Ok(())
}

/// Collective load. `split = Some(0)` reads only this rank's rows,
/// `None` reads everything on every rank, and any other axis loads by rows
/// and then resplits.
pub fn load<T: Scalar>(path: impl AsRef<Path>, split: Option<usize>, comm: &Communicator) -> Result<DndArray<T>> {
    let path = path.as_ref();
    let header = DnbHeader::read(path)?;
    if header.dtype != T::DTYPE {
        return Err(FormatError::DtypeMismatch {
            file: header.dtype,
            requested: T::DTYPE,
        }
        .into());
    }
    let shape = header.shape();
    match split {
        Some(s) if s >= shape.len() => Err(Error::InvalidAxis { axis: s, ndim: shape.len() }),
        None => {
            let bytes = read_at(path, header.header_len(), header.payload_len() as usize)?;
            DndArray::from_parts(shape.clone(), None, comm.clone(), Tile::new(shape, decode_values(&bytes))?)
        }
        Some(0) => {
            let range = ChunkMap::new(shape[0], comm.size()).range(comm.rank());
            let row_bytes = shape[1..].iter().product::<usize>() * T::DTYPE.size_bytes();
            let offset = header.header_len() + (range.start * row_bytes) as u64;
            let bytes = if range.is_empty() || row_bytes == 0 {
                Vec::new()
            } else {
                read_at(path, offset, range.len() * row_bytes)?
            };
            let lshape = local_shape(&shape, Some(0), comm.rank(), comm.size());
            DndArray::from_parts(shape, Some(0), comm.clone(), Tile::new(lshape, decode_values(&bytes))?)
        }
        Some(k) => load::<T>(path, Some(0), comm)?.resplit(Some(k)),
    }
}

/// Parses a rectangular numeric CSV into a 2-d tile.
pub fn parse_csv(src: impl AsRef<Path>, skip_header: bool) -> Result<Tile<f64>, FormatError> {
    let src = src.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(skip_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(src)
        .map_err(|e| FormatError::Csv(e.to_string()))?;
    let mut cols: Option<usize> = None;
    let mut rows = 0usize;
    let mut values = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| FormatError::Csv(e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        let expected = *cols.get_or_insert(record.len());
        if record.len() != expected {
            return Err(FormatError::Ragged {
                line,
                expected,
                found: record.len(),
            });
        }
        for (i, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| FormatError::Parse {
                line,
                column: i + 1,
                value: field.to_string(),
            })?;
            values.push(v);
        }
        rows += 1;
    }
    Tile::new(vec![rows, cols.unwrap_or(0)], values).map_err(|e| FormatError::Csv(e.to_string()))
}

/// Converts a CSV file into a 2-d DNB file of the given dtype.
pub fn csv_to_dnb(src: impl AsRef<Path>, dst: impl AsRef<Path>, dtype: DType, skip_header: bool) -> Result<DnbHeader, FormatError> {
    let tile = parse_csv(src, skip_header)?;
    let dst = dst.as_ref();
    match dtype {
        DType::F64 => write_dnb(dst, &tile)?,
        DType::F32 => {
            let ext = tile.extents().to_vec();
            let data = tile.into_data().into_iter().map(|v| v as f32).collect();
            write_dnb(dst, &Tile::new(ext, data).expect("same extents"))?
        }
    }
    DnbHeader::read(dst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::{run, LoopbackConfig};

    #[test]
    fn header_bytes() {
        let h = DnbHeader::new(DType::F64, &[2, 3]);
        let b = h.encode().unwrap();
        assert_eq!(&b[..6], b"DNB1\x02\x02");
        assert_eq!(&b[6..14], &2u64.to_le_bytes());
        assert_eq!(&b[14..22], &3u64.to_le_bytes());
        assert_eq!(h.header_len(), 22);
        assert_eq!(h.payload_len(), 48);
    }

    #[test]
    fn round_trip_solo() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.dnb");
        let c = Communicator::solo();
        let a = DndArray::<f64>::random_uniform(&[4, 3], Some(0), 5, &c).unwrap();
        save(&a, &path).unwrap();
        let b = load::<f64>(&path, Some(0), &c).unwrap();
        assert_eq!(a.local(), b.local());
        assert!(matches!(
            load::<f32>(&path, None, &c),
            Err(Error::Format(FormatError::DtypeMismatch { .. }))
        ));
    }

    #[test]
    fn arange_tiles_on_three_ranks() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.dnb");
        write_dnb(&path, &Tile::new(vec![5], vec![0.0, 1.0, 2.0, 3.0, 4.0]).unwrap()).unwrap();
        let tiles = run(LoopbackConfig::new(3), |c| load::<f64>(&path, Some(0), &c).unwrap().into_local().into_data());
        assert_eq!(tiles, vec![vec![0.0, 1.0], vec![2.0, 3.0], vec![4.0]]);
    }

    #[test]
    fn empty_array_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.dnb");
        let c = Communicator::solo();
        save(&DndArray::<f64>::zeros(&[0, 4], Some(0), &c).unwrap(), &path).unwrap();
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 6 + 16);
        assert_eq!(load::<f64>(&path, Some(0), &c).unwrap().shape(), &[0, 4]);
    }

    #[test]
    fn corrupt_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.dnb");
        let c = Communicator::solo();
        write_dnb(&path, &Tile::new(vec![2], vec![1.0f64, 2.0]).unwrap()).unwrap();
        let good = std::fs::read(&path).unwrap();

        let mut b = good.clone();
        b[0] = b'X';
        std::fs::write(&path, &b).unwrap();
        assert!(matches!(load::<f64>(&path, None, &c), Err(Error::Format(FormatError::BadMagic { .. }))));

        let mut b = good.clone();
        b[4] = 9;
        std::fs::write(&path, &b).unwrap();
        assert!(matches!(
            load::<f64>(&path, None, &c),
            Err(Error::Format(FormatError::UnknownDtype { code: 9 }))
        ));

        std::fs::write(&path, &good[..good.len() - 3]).unwrap();
        assert!(matches!(load::<f64>(&path, None, &c), Err(Error::Format(FormatError::Truncated { .. }))));

        std::fs::write(&path, &good[..4]).unwrap();
        assert!(matches!(
            load::<f64>(&path, None, &c),
            Err(Error::Format(FormatError::TruncatedHeader { .. }))
        ));
    }

    #[test]
    fn csv_cases() {
        let dir = tempfile::tempdir().unwrap();
        let src = dir.path().join("a.csv");
        let dst = dir.path().join("a.dnb");
        std::fs::write(&src, "1,2\n3,4").unwrap();
        let h = csv_to_dnb(&src, &dst, DType::F64, false).unwrap();
        assert_eq!(h.extents, vec![2, 2]);
        let t = load::<f64>(&dst, None, &Communicator::solo()).unwrap().into_local();
        assert_eq!(t.data(), &[1.0, 2.0, 3.0, 4.0]);

        std::fs::write(&src, "a,b\n1.5, 2\n").unwrap();
        assert_eq!(parse_csv(&src, true).unwrap().data(), &[1.5, 2.0]);

        std::fs::write(&src, "1,2\n3\n").unwrap();
        match parse_csv(&src, false) {
            Err(FormatError::Ragged { line: 2, expected: 2, found: 1 }) => {}
            other => panic!("{other:?}"),
        }
        std::fs::write(&src, "1,2\n3,x\n").unwrap();
        match parse_csv(&src, false) {
            Err(FormatError::Parse { line: 2, column: 2, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn f32_csv() {
        let dir = tempfile::tempdir().unwrap();
        let src = dir.path().join("a.csv");
        let dst = dir.path().join("a.dnb");
        std::fs::write(&src, "0.5\n1.25\n").unwrap();
        csv_to_dnb(&src, &dst, DType::F32, false).unwrap();
        assert_eq!(std::fs::metadata(&dst).unwrap().len(), 6 + 16 + 8);
        let t = load::<f32>(&dst, Some(0), &Communicator::solo()).unwrap();
        assert_eq!(t.local().data(), &[0.5f32, 1.25]);
    }
}
