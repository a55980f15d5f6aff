//! Binary tensor files.
//!
//! An MIT1 record is the magic `MIT1`, a little-endian `u32` rank, `rank`
//! little-endian `u32` dimensions and then the row-major `f32` payload.
//! Checkpoints are a sequence of records, each preceded by a `u16` byte length
//! and the UTF-8 name of the tensor. The sequence ends at end of file.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor, MAX_RANK};

pub const MAGIC: &[u8; 4] = b"MIT1";

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

pub(crate) fn read_i32<R: Read>(r: &mut R) -> Result<i32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(i32::from_le_bytes(buf))
}

pub fn write_tensor<W: Write, T: Scalar>(w: &mut W, tensor: &Tensor<T>) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(tensor.rank() as u32).to_le_bytes())?;
    for &d in tensor.shape() {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    let mut payload = Vec::with_capacity(tensor.len() * 4);
    for &v in tensor.data() {
        payload.extend_from_slice(&(v.to_f64() as f32).to_le_bytes());
    }
    w.write_all(&payload)?;
    Ok(())
}

pub fn read_tensor<R: Read>(r: &mut R) -> Result<Tensor<f32>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let rank = read_u32(r)? as usize;
    if rank > MAX_RANK {
        return Err(Error::Format(format!("rank {rank} exceeds {MAX_RANK}")));
    }
    let shape = (0..rank)
        .map(|_| read_u32(r).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let len: usize = shape.iter().product();
    let mut bytes = vec![0u8; len * 4];
    r.read_exact(&mut bytes)?;
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let tensor = Tensor::new(&shape, data).map_err(|e| Error::Format(e.to_string()))?;
    if !tensor.is_finite() {
        return Err(Error::Format("non-finite tensor payload".into()));
    }
    Ok(tensor)
}

pub fn save_tensor<T: Scalar>(path: &Path, tensor: &Tensor<T>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_tensor(&mut w, tensor)?;
    w.flush()?;
    Ok(())
}

pub fn load_tensor(path: &Path) -> Result<Tensor<f32>> {
    read_tensor(&mut BufReader::new(File::open(path)?))
}

pub fn write_named_tensors<W: Write, T: Scalar>(
    w: &mut W,
    tensors: &[(String, Tensor<T>)],
) -> Result<()> {
    for (name, tensor) in tensors {
        let bytes = name.as_bytes();
        let len = u16::try_from(bytes.len())
            .map_err(|_| Error::InvalidArgument(format!("tensor name too long: {name}")))?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(bytes)?;
        write_tensor(w, tensor)?;
    }
    Ok(())
}

pub fn read_named_tensors<R: Read>(r: &mut R) -> Result<Vec<(String, Tensor<f32>)>> {
    let mut out = Vec::new();
    loop {
        let mut len = [0u8; 2];
        match r.read_exact(&mut len) {
            Ok(()) => {}
            Err(e) if e.kind() == ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        }
        let mut name = vec![0u8; u16::from_le_bytes(len) as usize];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| Error::Format(e.to_string()))?;
        out.push((name, read_tensor(r)?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout_is_bit_exact() {
        let t = Tensor::new(&[2, 1], vec![1.0f32, -2.5]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        let mut expected = b"MIT1".to_vec();
        expected.extend_from_slice(&2u32.to_le_bytes());
        expected.extend_from_slice(&2u32.to_le_bytes());
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&1.0f32.to_le_bytes());
        expected.extend_from_slice(&(-2.5f32).to_le_bytes());
        assert_eq!(buf, expected);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(matches!(
            read_tensor(&mut &b"MIT2\0\0\0\0"[..]),
            Err(Error::Format(_))
        ));
        let t = Tensor::new(&[3], vec![1.0f32, 2.0, 3.0]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        buf.truncate(buf.len() - 1);
        assert!(read_tensor(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn named_sequence() {
        let tensors = vec![
            ("a".to_string(), Tensor::new(&[1], vec![1.0f32]).unwrap()),
            ("conv0.kernel".to_string(), Tensor::full(&[1, 1, 2, 3], 0.5f32)),
        ];
        let mut buf = Vec::new();
        write_named_tensors(&mut buf, &tensors).unwrap();
        assert_eq!(&buf[0..2], &1u16.to_le_bytes());
        assert_eq!(read_named_tensors(&mut buf.as_slice()).unwrap(), tensors);
    }

    proptest! {
        #[test]
        fn roundtrip(shape in prop::collection::vec(1usize..4, 0..=4), seed in any::<u32>()) {
            let t = Tensor::from_fn(&shape, |i| ((i as u32 ^ seed) % 1000) as f32 * 0.01 - 5.0);
            let mut buf = Vec::new();
            write_tensor(&mut buf, &t).unwrap();
            prop_assert_eq!(read_tensor(&mut buf.as_slice()).unwrap(), t);
        }
    }
}
