//! Binary model format.
//!
//! ```text
//! magic    4 bytes  "KGEM"
//! version  u16      1
//! kind     u8       0 = TransE, 1 = TransH
//! typed    u8       0 / 1
//! k        u32
//! |E|      u32
//! |R|      u32
//! entity vectors   |E|·k f64
//! relation vectors |R|·k f64
//! normals          |R|·k f64   (TransH only)
//! ```
//! All integers and floats little-endian, matrices row-major.

use std::io::{self, Read, Write};

use thiserror::Error;

use super::{EmbeddingModel, Matrix, ModelKind};

pub const MODEL_MAGIC: [u8; 4] = *b"KGEM";
pub const MODEL_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum ModelIoError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not a model file (bad magic {0:?})")]
    BadMagic([u8; 4]),
    #[error("unsupported model file version {0}")]
    UnsupportedVersion(u16),
    #[error("invalid header field {field} = {value}")]
    BadHeader { field: &'static str, value: u64 },
}

pub fn write_model<W: Write>(mut w: W, model: &EmbeddingModel) -> io::Result<()> {
    let dim = u32::try_from(model.dim).map_err(|_| io::ErrorKind::InvalidInput)?;
    let n_e = u32::try_from(model.num_entities()).map_err(|_| io::ErrorKind::InvalidInput)?;
    let n_r = u32::try_from(model.num_relations()).map_err(|_| io::ErrorKind::InvalidInput)?;
    w.write_all(&MODEL_MAGIC)?;
    w.write_all(&MODEL_VERSION.to_le_bytes())?;
    w.write_all(&[
        match model.kind {
            ModelKind::TransE => 0,
            ModelKind::TransH => 1,
        },
        u8::from(model.typed),
    ])?;
    for v in [dim, n_e, n_r] {
        w.write_all(&v.to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(8 * model.dim * (model.num_entities() + 2 * model.num_relations()));
    for m in [&model.entities, &model.relations]
        .into_iter()
        .chain(model.normals.as_ref())
    {
        for x in m.as_slice() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    w.flush()
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> io::Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

fn read_matrix<R: Read>(r: &mut R, rows: usize, cols: usize) -> io::Result<Matrix> {
    let mut bytes = vec![0u8; rows * cols * 8];
    r.read_exact(&mut bytes)?;
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok(Matrix::from_vec(rows, cols, data))
}

pub fn read_model<R: Read>(mut r: R) -> Result<EmbeddingModel, ModelIoError> {
    let magic = read_array::<4, _>(&mut r)?;
    if magic != MODEL_MAGIC {
        return Err(ModelIoError::BadMagic(magic));
    }
    let version = u16::from_le_bytes(read_array(&mut r)?);
    if version != MODEL_VERSION {
        return Err(ModelIoError::UnsupportedVersion(version));
    }
    let [kind, typed] = read_array::<2, _>(&mut r)?;
    let kind = match kind {
        0 => ModelKind::TransE,
        1 => ModelKind::TransH,
        v => {
            return Err(ModelIoError::BadHeader {
                field: "kind",
                value: v.into(),
            })
        }
    };
    if typed > 1 {
        return Err(ModelIoError::BadHeader {
            field: "typed",
            value: typed.into(),
        });
    }
    let dim = u32::from_le_bytes(read_array(&mut r)?) as usize;
    let n_e = u32::from_le_bytes(read_array(&mut r)?) as usize;
    let n_r = u32::from_le_bytes(read_array(&mut r)?) as usize;
    if dim == 0 {
        return Err(ModelIoError::BadHeader { field: "k", value: 0 });
    }
    let entities = read_matrix(&mut r, n_e, dim)?;
    let relations = read_matrix(&mut r, n_r, dim)?;
    let normals = match kind {
        ModelKind::TransH => Some(read_matrix(&mut r, n_r, dim)?),
        ModelKind::TransE => None,
    };
    Ok(EmbeddingModel {
        kind,
        typed: typed == 1,
        dim,
        entities,
        relations,
        normals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{parse_triples, DictionaryMode};
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn binary_round_trip(seed in any::<u64>(), dim in 1usize..12, transh in any::<bool>(), typed in any::<bool>()) {
            let (d, _) = parse_triples("a:P\tr\tx:G\nb:P\ts\tx:G\n", DictionaryMode::Build).unwrap();
            let kind = if transh { ModelKind::TransH } else { ModelKind::TransE };
            let m = EmbeddingModel::init(&d, kind, dim, typed, seed);
            let mut bytes = Vec::new();
            write_model(&mut bytes, &m).unwrap();
            prop_assert_eq!(bytes.len(), 20 + 8 * dim * (3 + 2 * if transh { 2 } else { 1 }));
            prop_assert_eq!(read_model(bytes.as_slice()).unwrap(), m);
        }
    }

    #[test]
    fn header_is_little_endian() {
        let (d, _) = parse_triples("a:P\tr\tx:G\n", DictionaryMode::Build).unwrap();
        let m = EmbeddingModel::init(&d, ModelKind::TransH, 3, true, 0);
        let mut bytes = Vec::new();
        write_model(&mut bytes, &m).unwrap();
        assert_eq!(&bytes[..4], b"KGEM");
        assert_eq!(&bytes[4..8], &[1, 0, 1, 1]);
        assert_eq!(&bytes[8..20], &[3, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0, 0]);
    }

    #[test]
    fn rejects_garbage() {
        assert!(matches!(read_model(&b"NOPE\x01\x00"[..]), Err(ModelIoError::BadMagic(_))));
        assert!(matches!(
            read_model(&b"KGEM\x02\x00\x00\x00"[..]),
            Err(ModelIoError::UnsupportedVersion(2))
        ));
        assert!(matches!(read_model(&b"KGEM\x01\x00\x00"[..]), Err(ModelIoError::Io(_))));
    }
}
