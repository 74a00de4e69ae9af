//! `std::io` wrappers around the byte codecs in `duet_core::tensor`.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use duet_core::tensor::{
    check_magic, encode_tensor, parse_dims, parse_payload, TensorHeader, ARCHIVE_MAGIC,
    HEADER_LEN, TENSOR_MAGIC,
};
use duet_core::{Archive, FormatError, ReadOptions, Tensor};

/// Overrides the per-tensor element cap.
pub const MAX_ELEMENTS_ENV: &str = "DUET_MAX_ELEMENTS";

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Fills as much of `buf` as the source allows; returns the byte count.
fn read_up_to<R: Read + ?Sized>(src: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match src.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

/// Reads one `.duet` record. Header and dims are validated before any
/// payload buffer is allocated, and nothing past the record is consumed.
pub fn read_tensor<R: Read + ?Sized>(src: &mut R, opts: &ReadOptions) -> Result<Tensor, IoError> {
    let mut header = [0u8; HEADER_LEN];
    let got = read_up_to(src, &mut header)?;
    check_magic(&header[..got], TENSOR_MAGIC)?;
    if got < HEADER_LEN {
        return Err(FormatError::Truncated {
            needed: HEADER_LEN,
            available: got,
        }
        .into());
    }
    let header = TensorHeader::parse(&header)?;

    let mut dims = vec![0u8; 8 * header.ndim];
    let got = read_up_to(src, &mut dims)?;
    let (shape, count) = parse_dims(&dims[..got], header.ndim, opts)?;

    let len = count as u64 * header.dtype.size() as u64;
    let mut payload = Vec::new();
    src.take(len).read_to_end(&mut payload)?;
    let data = parse_payload(header.dtype, count, &payload, opts)?;
    Ok(Tensor::new(shape, data)?)
}

pub fn write_tensor<W: Write + ?Sized>(t: &Tensor, sink: &mut W) -> io::Result<usize> {
    let mut buf = Vec::new();
    let n = encode_tensor(t, &mut buf);
    sink.write_all(&buf)?;
    Ok(n)
}

pub fn read_archive<R: Read + ?Sized>(src: &mut R, opts: &ReadOptions) -> Result<Archive, IoError> {
    let mut bytes = Vec::new();
    src.read_to_end(&mut bytes)?;
    Ok(Archive::decode(&bytes, opts)?)
}

pub fn write_archive<W: Write + ?Sized>(archive: &Archive, sink: &mut W) -> io::Result<usize> {
    let bytes = archive.encode();
    sink.write_all(&bytes)?;
    Ok(bytes.len())
}

/// Contents of a file in either format.
#[derive(Debug, Clone, PartialEq)]
pub enum Loaded {
    Tensor(Tensor),
    Archive(Archive),
}

/// Opens `path` and decodes it as an archive or a single tensor, by magic.
pub fn read_file(path: &Path, opts: &ReadOptions) -> Result<Loaded, IoError> {
    let mut file = fs::File::open(path)?;
    let mut magic = [0u8; 4];
    let got = read_up_to(&mut file, &mut magic)?;
    let mut src = io::Cursor::new(&magic[..got]).chain(file);
    if got == 4 && magic == ARCHIVE_MAGIC {
        read_archive(&mut src, opts).map(Loaded::Archive)
    } else {
        let t = read_tensor(&mut src, opts)?;
        let mut rest = [0u8; 1];
        if read_up_to(&mut src, &mut rest)? != 0 {
            let extra = 1 + io::copy(&mut src, &mut io::sink())?;
            return Err(FormatError::TrailingBytes(extra as usize).into());
        }
        Ok(Loaded::Tensor(t))
    }
}

pub fn read_archive_file(path: &Path, opts: &ReadOptions) -> Result<Archive, IoError> {
    let bytes = fs::read(path)?;
    Ok(Archive::decode(&bytes, opts)?)
}

/// Writes via a temporary file in the target directory, then renames it
/// into place. On error the target is untouched.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

pub fn write_archive_file(path: &Path, archive: &Archive) -> io::Result<()> {
    write_atomic(path, &archive.encode())
}

pub fn write_tensor_file(path: &Path, t: &Tensor) -> io::Result<()> {
    let mut buf = Vec::new();
    encode_tensor(t, &mut buf);
    write_atomic(path, &buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> Tensor {
        Tensor::from_f64(vec![2, 3], vec![1.0, -2.0, 3.5, 0.0, 1e-300, 7.0]).unwrap()
    }

    #[test]
    fn stream_round_trip_stops_at_record_end() {
        let mut bytes = Vec::new();
        write_tensor(&sample(), &mut bytes).unwrap();
        bytes.extend_from_slice(b"tail");
        let mut src = io::Cursor::new(&bytes);
        let t = read_tensor(&mut src, &ReadOptions::default()).unwrap();
        assert_eq!(t, sample());
        assert_eq!(src.position() as usize, bytes.len() - 4);
    }

    #[test]
    fn stream_errors() {
        let opts = ReadOptions::default();
        let mut bytes = Vec::new();
        write_tensor(&sample(), &mut bytes).unwrap();

        let short = &bytes[..bytes.len() - 8];
        let err = read_tensor(&mut io::Cursor::new(short), &opts).unwrap_err();
        assert!(matches!(err, IoError::Format(FormatError::Truncated { .. })), "{err}");

        let mut foreign = bytes.clone();
        foreign[3] = b'X';
        let err = read_tensor(&mut io::Cursor::new(&foreign[..6]), &opts).unwrap_err();
        assert!(matches!(err, IoError::Format(FormatError::BadMagic { .. })), "{err}");

        let cap = ReadOptions {
            max_elements: 5,
            ..opts
        };
        let err = read_tensor(&mut io::Cursor::new(&bytes), &cap).unwrap_err();
        assert!(matches!(err, IoError::Format(FormatError::TooLarge { .. })), "{err}");
    }

    #[test]
    fn files_by_magic() {
        let dir = tempfile::tempdir().unwrap();
        let opts = ReadOptions::default();

        let tpath = dir.path().join("x.duet");
        write_tensor_file(&tpath, &sample()).unwrap();
        assert_eq!(read_file(&tpath, &opts).unwrap(), Loaded::Tensor(sample()));

        let mut a = Archive::new();
        a.insert("x", sample()).unwrap();
        let apath = dir.path().join("x.dueta");
        write_archive_file(&apath, &a).unwrap();
        assert_eq!(read_file(&apath, &opts).unwrap(), Loaded::Archive(a.clone()));
        assert_eq!(read_archive_file(&apath, &opts).unwrap(), a);

        let mut bytes = fs::read(&tpath).unwrap();
        bytes.push(0);
        fs::write(&tpath, &bytes).unwrap();
        assert!(matches!(
            read_file(&tpath, &opts),
            Err(IoError::Format(FormatError::TrailingBytes(1)))
        ));
    }

    fn any_tensor() -> impl Strategy<Value = Tensor> {
        prop::collection::vec(1usize..5, 0..4).prop_flat_map(|shape| {
            let n = shape.iter().product::<usize>();
            let s = shape.clone();
            prop_oneof![
                prop::collection::vec(-1e9f64..1e9, n)
                    .prop_map(move |v| Tensor::from_f64(shape.clone(), v).unwrap()),
                prop::collection::vec(any::<i64>(), n)
                    .prop_map(move |v| Tensor::from_i64(s.clone(), v).unwrap()),
            ]
        })
    }

    proptest! {
        #[test]
        fn consecutive_records_read_back(ts in prop::collection::vec(any_tensor(), 1..5)) {
            let mut bytes = Vec::new();
            for t in &ts {
                write_tensor(t, &mut bytes).unwrap();
            }
            let mut src = io::Cursor::new(&bytes);
            for t in &ts {
                prop_assert_eq!(&read_tensor(&mut src, &ReadOptions::default()).unwrap(), t);
            }
            prop_assert_eq!(src.position() as usize, bytes.len());
        }

        #[test]
        fn archives_read_back(ts in prop::collection::vec(any_tensor(), 0..5)) {
            let mut a = Archive::new();
            for (i, t) in ts.into_iter().enumerate() {
                a.insert(format!("t{i}"), t).unwrap();
            }
            let mut bytes = Vec::new();
            write_archive(&a, &mut bytes).unwrap();
            let back = read_archive(&mut io::Cursor::new(&bytes), &ReadOptions::default()).unwrap();
            prop_assert_eq!(back, a);
        }
    }
}
