//! Flat little-endian container for fields and spectra.
//!
//! Layout: the 8-byte magic `SQGLAB01`, a `u64` header length, a JSON header,
//! then the `f64` payload in row-major order.

use std::io::{Read, Write};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spectral::{Field, Grid, MultiplierSpec, Parity, SpectralError, Spectrum};

pub const MAGIC: &[u8; 8] = b"SQGLAB01";

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic bytes")]
    Magic,
    #[error("header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("expected a {want} container, found {got}")]
    Kind { want: &'static str, got: String },
    #[error("payload length {got} does not match header shape {shape:?}")]
    Payload { got: usize, shape: (usize, usize) },
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub kind: String,
    pub resolution: usize,
    pub parity: [Parity; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub multiplier: Option<MultiplierSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time: Option<f64>,
    pub shape: (usize, usize),
}

fn write_raw(mut w: impl Write, header: &Header, data: &Array2<f64>) -> Result<(), ContainerError> {
    let json = serde_json::to_vec(header)?;
    w.write_all(MAGIC)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    let mut buf = Vec::with_capacity(data.len() * 8);
    for v in data.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Read one container; `Ok(None)` on a clean end of stream.
fn read_next(mut r: impl Read) -> Result<Option<(Header, Array2<f64>)>, ContainerError> {
    let mut magic = [0u8; 8];
    let mut got = 0;
    while got < 8 {
        match r.read(&mut magic[got..])? {
            0 if got == 0 => return Ok(None),
            0 => return Err(ContainerError::Magic),
            k => got += k,
        }
    }
    if &magic != MAGIC {
        return Err(ContainerError::Magic);
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let mut json = vec![0u8; u64::from_le_bytes(len) as usize];
    r.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json)?;
    let count = header.shape.0 * header.shape.1;
    let mut payload = Vec::with_capacity(count * 8);
    r.by_ref().take(count as u64 * 8).read_to_end(&mut payload)?;
    if payload.len() != count * 8 {
        return Err(ContainerError::Payload { got: payload.len(), shape: header.shape });
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let arr = Array2::from_shape_vec(header.shape, values).expect("length checked");
    Ok(Some((header, arr)))
}

fn read_raw(mut r: impl Read) -> Result<(Header, Array2<f64>), ContainerError> {
    let Some((header, arr)) = read_next(&mut r)? else {
        return Err(ContainerError::Magic);
    };
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        let count = header.shape.0 * header.shape.1;
        return Err(ContainerError::Payload { got: count * 8 + rest.len(), shape: header.shape });
    }
    Ok((header, arr))
}

fn expect_kind(h: &Header, want: &'static str) -> Result<(), ContainerError> {
    if h.kind != want {
        return Err(ContainerError::Kind { want, got: h.kind.clone() });
    }
    Ok(())
}

pub fn write_field(w: impl Write, field: &Field, time: Option<f64>) -> Result<(), ContainerError> {
    let header = Header {
        kind: "field".into(),
        resolution: field.grid().resolution(),
        parity: field.parity(),
        multiplier: None,
        time,
        shape: field.values().dim(),
    };
    write_raw(w, &header, field.values())
}

pub fn read_field(r: impl Read) -> Result<(Field, Header), ContainerError> {
    let (h, arr) = read_raw(r)?;
    expect_kind(&h, "field")?;
    let grid = Grid::new(h.resolution)?;
    Ok((Field::new(grid, h.parity, arr)?, h))
}

/// Write a spectrum, keeping only the band `max(m) <= keep` when given.
pub fn write_spectrum(
    w: impl Write,
    spec: &Spectrum,
    multiplier: Option<MultiplierSpec>,
    time: Option<f64>,
    keep: Option<usize>,
) -> Result<(), ContainerError> {
    let data = match keep {
        Some(k) => spec.truncated_coeffs(k),
        None => spec.coeffs().clone(),
    };
    let header = Header {
        kind: "spectrum".into(),
        resolution: spec.grid().resolution(),
        parity: spec.parity(),
        multiplier,
        time,
        shape: data.dim(),
    };
    write_raw(w, &header, &data)
}

pub fn read_spectrum(r: impl Read) -> Result<(Spectrum, Header), ContainerError> {
    let (h, arr) = read_raw(r)?;
    expect_kind(&h, "spectrum")?;
    let grid = Grid::new(h.resolution)?;
    Ok((Spectrum::from_truncated(grid, h.parity, &arr)?, h))
}

/// Streams the spectra of a file holding several containers back to back.
pub struct SpectrumReader<R> {
    inner: R,
}

impl<R: Read> SpectrumReader<R> {
    pub fn new(inner: R) -> Self {
        Self { inner }
    }
}

impl<R: Read> Iterator for SpectrumReader<R> {
    type Item = Result<(Spectrum, Header), ContainerError>;

    fn next(&mut self) -> Option<Self::Item> {
        let mut read = || -> Result<Option<(Spectrum, Header)>, ContainerError> {
            let Some((h, arr)) = read_next(&mut self.inner)? else { return Ok(None) };
            expect_kind(&h, "spectrum")?;
            let grid = Grid::new(h.resolution)?;
            Ok(Some((Spectrum::from_truncated(grid, h.parity, &arr)?, h)))
        };
        read().transpose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{SpectralOps, ODD_ODD};

    #[test]
    fn field_round_trip_is_bit_exact() {
        let g = Grid::new(32).unwrap();
        let f = Field::from_fn(g, ODD_ODD, |x, y| (3.0 * x).sin() * y * y);
        let mut buf = Vec::new();
        write_field(&mut buf, &f, Some(0.25)).unwrap();
        let (back, h) = read_field(buf.as_slice()).unwrap();
        assert_eq!(back, f);
        assert_eq!(h.time, Some(0.25));
        assert!(read_spectrum(buf.as_slice()).is_err());
    }

    #[test]
    fn truncated_spectrum_round_trip() {
        let g = Grid::new(64).unwrap();
        let ops = SpectralOps::new(g);
        let f = Field::from_fn(g, ODD_ODD, |x, y| (x * y * 7.0).sin());
        let s = crate::spectral::dealias(&ops.forward(&f).unwrap());
        let mut buf = Vec::new();
        write_spectrum(&mut buf, &s, Some(MultiplierSpec::sqg()), None, Some(g.dealias_cutoff())).unwrap();
        let (back, h) = read_spectrum(buf.as_slice()).unwrap();
        assert_eq!(back, s);
        assert_eq!(h.multiplier, Some(MultiplierSpec::sqg()));
    }

    #[test]
    fn corrupt_input_is_rejected() {
        assert!(matches!(read_field(&b"NOTMAGIC"[..]), Err(ContainerError::Magic)));
        let g = Grid::new(32).unwrap();
        let mut buf = Vec::new();
        write_field(&mut buf, &Field::zeros(g, ODD_ODD), None).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(matches!(read_field(buf.as_slice()), Err(ContainerError::Payload { .. })));
    }

    #[test]
    fn concatenated_spectra_stream() {
        let g = Grid::new(32).unwrap();
        let ops = SpectralOps::new(g);
        let mut buf = Vec::new();
        let mut want = Vec::new();
        for k in 1..4 {
            let f = Field::from_fn(g, ODD_ODD, |x, y| (k as f64 * x).sin() * y);
            let s = ops.forward(&f).unwrap();
            write_spectrum(&mut buf, &s, None, Some(k as f64), None).unwrap();
            want.push(s);
        }
        let got: Vec<_> = SpectrumReader::new(buf.as_slice()).map(|r| r.unwrap()).collect();
        assert_eq!(got.len(), 3);
        for (k, (s, h)) in got.iter().enumerate() {
            assert_eq!(s, &want[k]);
            assert_eq!(h.time, Some(k as f64 + 1.0));
        }
        assert!(read_spectrum(buf.as_slice()).is_err());
        buf.truncate(buf.len() - 1);
        assert!(SpectrumReader::new(buf.as_slice()).any(|r| r.is_err()));
    }
}
