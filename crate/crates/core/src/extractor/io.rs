//! On-disk bit formats.
//!
//! Native bit file: a 16-byte little-endian header followed by the packed
//! words, each written little-endian.
//!
//! | offset | size | field                                  |
//! |--------|------|----------------------------------------|
//! | 0      | 4    | magic `PDQB`                           |
//! | 4      | 1    | version (1)                            |
//! | 5      | 1    | kind: 0 raw, 1 extracted, 2 distilled  |
//! | 6      | 2    | distillation factor k (0 unless kind 2)|
//! | 8      | 8    | length in bits                         |
//!
//! Because words are LSB-first and stored little-endian, the payload is
//! byte-for-byte the `rawbytes` export: bit `i` is bit `i % 8` of byte
//! `i / 8`. The `ascii01` export writes one `'0'`/`'1'` character per bit.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use super::{BitStream, StreamKind};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"PDQB";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 16;

/// Export formats consumed by external test suites.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    /// One ASCII '0'/'1' per bit (NIST STS input).
    Ascii01,
    /// Packed bytes, LSB-first (Dieharder / TestU01 input).
    RawBytes,
}

impl FromStr for ExportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ascii01" => Ok(ExportFormat::Ascii01),
            "rawbytes" => Ok(ExportFormat::RawBytes),
            other => Err(Error::invalid(format!("unknown export format `{other}`"))),
        }
    }
}

fn encode_kind(kind: StreamKind) -> Result<(u8, u16)> {
    Ok(match kind {
        StreamKind::Raw => (0, 0),
        StreamKind::Extracted => (1, 0),
        StreamKind::Distilled(k) => (
            2,
            u16::try_from(k).map_err(|_| Error::invalid(format!("k = {k} does not fit the header")))?,
        ),
    })
}

fn decode_kind(tag: u8, k: u16) -> Result<StreamKind> {
    match (tag, k) {
        (0, 0) => Ok(StreamKind::Raw),
        (1, 0) => Ok(StreamKind::Extracted),
        (2, k) if k >= 1 => Ok(StreamKind::Distilled(k as u32)),
        _ => Err(Error::Format(format!("bad kind/k fields ({tag}, {k})"))),
    }
}

pub fn encode_header(s: &BitStream) -> Result<[u8; HEADER_LEN]> {
    let (tag, k) = encode_kind(s.kind())?;
    let mut h = [0u8; HEADER_LEN];
    h[..4].copy_from_slice(&MAGIC);
    h[4] = VERSION;
    h[5] = tag;
    h[6..8].copy_from_slice(&k.to_le_bytes());
    h[8..16].copy_from_slice(&(s.len() as u64).to_le_bytes());
    Ok(h)
}

fn write_payload<W: Write>(s: &BitStream, w: &mut W, n_bytes: usize) -> Result<()> {
    let mut remaining = n_bytes;
    for &word in s.words() {
        let bytes = word.to_le_bytes();
        let n = remaining.min(8);
        w.write_all(&bytes[..n])?;
        remaining -= n;
    }
    Ok(())
}

pub fn write_bitstream<W: Write>(s: &BitStream, mut w: W) -> Result<()> {
    w.write_all(&encode_header(s)?)?;
    write_payload(s, &mut w, s.words().len() * 8)?;
    w.flush()?;
    Ok(())
}

pub fn read_bitstream<R: Read>(mut r: R) -> Result<BitStream> {
    let mut h = [0u8; HEADER_LEN];
    r.read_exact(&mut h)
        .map_err(|e| Error::Format(format!("truncated header: {e}")))?;
    if h[..4] != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    if h[4] != VERSION {
        return Err(Error::Format(format!("unsupported version {}", h[4])));
    }
    let kind = decode_kind(h[5], u16::from_le_bytes([h[6], h[7]]))?;
    let len = u64::from_le_bytes(h[8..16].try_into().unwrap());
    let len = usize::try_from(len).map_err(|_| Error::Format("length overflows usize".into()))?;
    let n_words = len.div_ceil(64);
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != n_words * 8 {
        return Err(Error::Format(format!(
            "payload is {} bytes, header promises {} bits ({} bytes)",
            bytes.len(),
            len,
            n_words * 8
        )));
    }
    let words = bytes
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    BitStream::from_words(words, len, kind)
}

pub fn save(s: &BitStream, path: impl AsRef<Path>) -> Result<()> {
    write_bitstream(s, BufWriter::new(File::create(path)?))
}

pub fn load(path: impl AsRef<Path>) -> Result<BitStream> {
    read_bitstream(BufReader::new(File::open(path)?))
}

/// Packed bytes without header; the final byte is zero-padded.
pub fn write_rawbytes<W: Write>(s: &BitStream, mut w: W) -> Result<()> {
    write_payload(s, &mut w, s.len().div_ceil(8))?;
    w.flush()?;
    Ok(())
}

/// Reads packed bytes; `len_bits` defaults to `8 × bytes`.
pub fn read_rawbytes<R: Read>(mut r: R, len_bits: Option<usize>, kind: StreamKind) -> Result<BitStream> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let len = len_bits.unwrap_or(bytes.len() * 8);
    if len.div_ceil(8) != bytes.len() {
        return Err(Error::Format(format!("{} bytes cannot hold exactly {len} bits", bytes.len())));
    }
    let words = bytes
        .chunks(8)
        .map(|c| {
            let mut b = [0u8; 8];
            b[..c.len()].copy_from_slice(c);
            u64::from_le_bytes(b)
        })
        .collect();
    BitStream::from_words(words, len, kind)
}

pub fn write_ascii01<W: Write>(s: &BitStream, mut w: W) -> Result<()> {
    let mut buf = Vec::with_capacity(64 * 1024);
    for b in s.iter() {
        buf.push(if b { b'1' } else { b'0' });
        if buf.len() == buf.capacity() {
            w.write_all(&buf)?;
            buf.clear();
        }
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

/// Reads '0'/'1' characters, ignoring ASCII whitespace.
pub fn read_ascii01<R: Read>(mut r: R, kind: StreamKind) -> Result<BitStream> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut s = BitStream::with_capacity(kind, bytes.len());
    for (i, &c) in bytes.iter().enumerate() {
        match c {
            b'0' => s.push(false),
            b'1' => s.push(true),
            c if c.is_ascii_whitespace() => {}
            other => {
                return Err(Error::Format(format!("unexpected byte 0x{other:02x} at offset {i}")));
            }
        }
    }
    Ok(s)
}

pub fn export<W: Write>(s: &BitStream, format: ExportFormat, w: W) -> Result<()> {
    match format {
        ExportFormat::Ascii01 => write_ascii01(s, w),
        ExportFormat::RawBytes => write_rawbytes(s, w),
    }
}

pub fn export_to_path(s: &BitStream, format: ExportFormat, path: impl AsRef<Path>) -> Result<()> {
    export(s, format, BufWriter::new(File::create(path)?))
}

pub fn import<R: Read>(r: R, format: ExportFormat, len_bits: Option<usize>, kind: StreamKind) -> Result<BitStream> {
    match format {
        ExportFormat::Ascii01 => read_ascii01(r, kind),
        ExportFormat::RawBytes => read_rawbytes(r, len_bits, kind),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let s = BitStream::from_u8s(&[1, 0, 1], StreamKind::Distilled(3));
        let mut buf = Vec::new();
        write_bitstream(&s, &mut buf).unwrap();
        assert_eq!(buf.len(), HEADER_LEN + 8);
        assert_eq!(&buf[..4], b"PDQB");
        assert_eq!(buf[4], 1);
        assert_eq!(buf[5], 2);
        assert_eq!(u16::from_le_bytes([buf[6], buf[7]]), 3);
        assert_eq!(u64::from_le_bytes(buf[8..16].try_into().unwrap()), 3);
        assert_eq!(buf[16], 0b101);
        assert_eq!(read_bitstream(&buf[..]).unwrap(), s);
    }

    #[test]
    fn rawbytes_64_bits_is_8_bytes() {
        let bits: Vec<u8> = (0..64).map(|i| (i % 3 == 0) as u8).collect();
        let s = BitStream::from_u8s(&bits, StreamKind::Extracted);
        let mut buf = Vec::new();
        write_rawbytes(&s, &mut buf).unwrap();
        assert_eq!(buf.len(), 8);
        // bit 0 is the LSB of byte 0
        assert_eq!(buf[0], 0b0100_1001);
    }

    #[test]
    fn ascii01_small() {
        let s = BitStream::from_u8s(&[0, 1, 1], StreamKind::Raw);
        let mut buf = Vec::new();
        write_ascii01(&s, &mut buf).unwrap();
        assert_eq!(buf, b"011");
        assert_eq!(read_ascii01(&b"0 1\n1"[..], StreamKind::Raw).unwrap(), s);
        assert!(read_ascii01(&b"012"[..], StreamKind::Raw).is_err());
    }

    #[test]
    fn corrupted_files_rejected() {
        let s = BitStream::from_u8s(&[1; 70], StreamKind::Raw);
        let mut buf = Vec::new();
        write_bitstream(&s, &mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_bitstream(&bad[..]), Err(Error::Format(_))));
        let mut short = buf.clone();
        short.pop();
        assert!(read_bitstream(&short[..]).is_err());
        let mut padded = buf.clone();
        *padded.last_mut().unwrap() = 0xff;
        assert!(read_bitstream(&padded[..]).is_err());
        let mut kind = buf;
        kind[5] = 9;
        assert!(read_bitstream(&kind[..]).is_err());
    }
}
