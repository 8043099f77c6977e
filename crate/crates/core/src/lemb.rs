//! `LEMB` embedding files and raw point-set files.
//!
//! `LEMB` layout, little-endian throughout: magic `b"LEMB"`, `u32` version,
//! `u32` count, `u32` dim, `f64` curvature, then `count * dim` `f32` values
//! row-major. Plain feature matrices are stored with curvature `0`.
//!
//! Point-set files are a sequence of records, each a `u32` point count
//! followed by `count * 3` `f32` coordinates.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use crate::error::{contract, Error, Result};
use crate::losses::PointSet;
use crate::lorentz::{CurvatureSpace, LorentzPoint};

pub const MAGIC: [u8; 4] = *b"LEMB";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: u64 = 24;

#[derive(Clone, Debug, PartialEq)]
pub struct LembFile {
    pub curvature: f64,
    pub dim: usize,
    pub rows: Vec<Vec<f64>>,
}

impl LembFile {
    pub fn new(curvature: f64, dim: usize, rows: Vec<Vec<f64>>) -> Result<Self> {
        if let Some(i) = rows.iter().position(|r| r.len() != dim) {
            return Err(contract("LembFile", format!("row {i} has length != {dim}")));
        }
        Ok(Self { curvature, dim, rows })
    }

    pub fn from_points(points: &[LorentzPoint]) -> Result<Self> {
        let first = points
            .first()
            .ok_or_else(|| contract("LembFile", "no points to write"))?;
        crate::lorentz::check_all("LembFile", points)?;
        Self::new(
            first.curvature().c(),
            first.dim(),
            points.iter().map(|p| p.space().to_vec()).collect(),
        )
    }

    /// Interprets rows as hyperboloid points; `k_aperture` and `eps_clamp`
    /// take their defaults.
    pub fn to_points(&self) -> Result<Vec<LorentzPoint>> {
        if !(self.curvature > 0.0) {
            return Err(contract(
                "LembFile::to_points",
                format!("curvature {} does not describe a hyperboloid", self.curvature),
            ));
        }
        let space: Arc<CurvatureSpace> = CurvatureSpace::with_curvature(self.curvature)?.shared();
        self.rows
            .iter()
            .map(|r| LorentzPoint::new(r.clone(), space.clone()))
            .collect()
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(&MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&u32_len(self.rows.len())?.to_le_bytes())?;
        w.write_all(&u32_len(self.dim)?.to_le_bytes())?;
        w.write_all(&self.curvature.to_le_bytes())?;
        for r in &self.rows {
            for &v in r {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut off = 0u64;
        let magic: [u8; 4] = read_array(&mut r, &mut off)?;
        if magic != MAGIC {
            return Err(Error::Format {
                offset: 0,
                msg: format!("bad magic {magic:?}"),
            });
        }
        let version = u32::from_le_bytes(read_array(&mut r, &mut off)?);
        if version != VERSION {
            return Err(Error::Format {
                offset: 4,
                msg: format!("unsupported version {version}"),
            });
        }
        let count = u32::from_le_bytes(read_array(&mut r, &mut off)?) as usize;
        let dim = u32::from_le_bytes(read_array(&mut r, &mut off)?) as usize;
        let curvature = f64::from_le_bytes(read_array(&mut r, &mut off)?);
        if !curvature.is_finite() || curvature < 0.0 {
            return Err(Error::Format {
                offset: 16,
                msg: format!("invalid curvature {curvature}"),
            });
        }
        let mut rows = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let mut row = Vec::with_capacity(dim);
            for _ in 0..dim {
                row.push(f32::from_le_bytes(read_array(&mut r, &mut off)?) as f64);
            }
            rows.push(row);
        }
        let mut probe = [0u8; 1];
        if r.read(&mut probe)? != 0 {
            return Err(Error::Format {
                offset: off,
                msg: "trailing bytes after payload".into(),
            });
        }
        Ok(Self {
            curvature,
            dim,
            rows,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

fn u32_len(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| contract("lemb", format!("{n} does not fit in u32")))
}

fn read_array<const N: usize>(r: &mut impl Read, off: &mut u64) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    let mut got = 0;
    while got < N {
        match r.read(&mut buf[got..])? {
            0 => {
                return Err(Error::Format {
                    offset: *off,
                    msg: format!("truncated {N}-byte field ({got} bytes present)"),
                })
            }
            k => got += k,
        }
    }
    *off += N as u64;
    Ok(buf)
}

pub fn write_point_sets(sets: &[PointSet], mut w: impl Write) -> Result<()> {
    for s in sets {
        w.write_all(&u32_len(s.len())?.to_le_bytes())?;
        for p in &s.points {
            for &v in p {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_point_sets(mut r: impl Read) -> Result<Vec<PointSet>> {
    let mut off = 0u64;
    let mut out = Vec::new();
    loop {
        let mut first = [0u8; 1];
        if r.read(&mut first)? == 0 {
            return Ok(out);
        }
        off += 1;
        let rest: [u8; 3] = read_array(&mut r, &mut off)?;
        let count = u32::from_le_bytes([first[0], rest[0], rest[1], rest[2]]) as usize;
        let mut points = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let mut p = [0.0; 3];
            for v in &mut p {
                *v = f32::from_le_bytes(read_array(&mut r, &mut off)?) as f64;
            }
            points.push(p);
        }
        out.push(PointSet::new(points));
    }
}

pub fn write_point_sets_file(sets: &[PointSet], path: &Path) -> Result<()> {
    write_point_sets(sets, BufWriter::new(File::create(path)?))
}

pub fn read_point_sets_file(path: &Path) -> Result<Vec<PointSet>> {
    read_point_sets(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bytes(f: &LembFile) -> Vec<u8> {
        let mut v = Vec::new();
        f.write_to(&mut v).unwrap();
        v
    }

    #[test]
    fn round_trip() {
        let f = LembFile::new(0.5, 2, vec![vec![1.0, -2.5], vec![0.25, 3.0]]).unwrap();
        let b = bytes(&f);
        assert_eq!(b.len() as u64, HEADER_LEN + 16);
        assert_eq!(&b[..4], b"LEMB");
        assert_eq!(LembFile::read_from(&b[..]).unwrap(), f);
    }

    #[test]
    fn rejects_bad_header() {
        let f = LembFile::new(1.0, 1, vec![vec![1.0]]).unwrap();
        let mut b = bytes(&f);
        b[0] = b'X';
        assert!(matches!(LembFile::read_from(&b[..]), Err(Error::Format { offset: 0, .. })));
        let mut b = bytes(&f);
        b[4] = 2;
        assert!(matches!(LembFile::read_from(&b[..]), Err(Error::Format { offset: 4, .. })));
        let b = bytes(&f);
        assert!(matches!(
            LembFile::read_from(&b[..b.len() - 1]),
            Err(Error::Format { offset: 24, .. })
        ));
    }

    #[test]
    fn points_need_positive_curvature() {
        let f = LembFile::new(0.0, 1, vec![vec![1.0]]).unwrap();
        assert!(f.to_points().is_err());
        let g = LembFile::new(2.0, 1, vec![vec![1.0]]).unwrap();
        assert_eq!(g.to_points().unwrap()[0].curvature().c(), 2.0);
    }

    #[test]
    fn point_sets_round_trip() {
        let sets = vec![
            PointSet::new(vec![[1.0, 2.0, 3.0], [0.5, -0.5, 0.0]]),
            PointSet::new(vec![]),
            PointSet::new(vec![[4.0, 4.0, 4.0]]),
        ];
        let mut b = Vec::new();
        write_point_sets(&sets, &mut b).unwrap();
        assert_eq!(b.len(), 4 + 24 + 4 + 4 + 12);
        let back = read_point_sets(&b[..]).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back[0].points, sets[0].points);
        assert!(read_point_sets(&b[..b.len() - 2]).is_err());
    }
}
