//! `PHVOL` volume files: a short text header followed by raw little-endian
//! `f32` voxels.
//!
//! ```text
//! PHVOL 1
//! dims <C> <D> <H> <W>
//! dtype f32
//! spacing <sd> <sh> <sw>
//! end
//! ```

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &str = "PHVOL 1";

/// A multi-channel volume `[C, D, H, W]` with physical voxel spacing.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    pub dims: [usize; 4],
    pub spacing: [f64; 3],
    pub data: Vec<f32>,
}

impl Volume {
    pub fn new(dims: [usize; 4], spacing: [f64; 3], data: Vec<f32>) -> Result<Self> {
        if dims.contains(&0) || dims.iter().product::<usize>() != data.len() {
            return Err(Error::Format(format!("{} voxels for dims {dims:?}", data.len())));
        }
        if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Format(format!("spacing {spacing:?} must be positive")));
        }
        Ok(Self { dims, spacing, data })
    }

    pub fn spatial(&self) -> [usize; 3] {
        [self.dims[1], self.dims[2], self.dims[3]]
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let [c, d, h, wd] = self.dims;
        let [a, b, s] = self.spacing;
        write!(w, "{MAGIC}\ndims {c} {d} {h} {wd}\ndtype f32\nspacing {a} {b} {s}\nend\n")?;
        let mut bytes = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&bytes)?;
        Ok(())
    }

    pub fn read_from(r: impl Read) -> Result<Self> {
        let mut r = BufReader::new(r);
        let mut line = String::new();
        let mut next = |r: &mut BufReader<_>| -> Result<String> {
            line.clear();
            if r.read_line(&mut line)? == 0 {
                return Err(Error::Format("volume header truncated".into()));
            }
            Ok(line.trim_end().to_string())
        };
        if next(&mut r)? != MAGIC {
            return Err(Error::Format(format!("missing '{MAGIC}' header")));
        }
        let (mut dims, mut spacing, mut dtype) = (None, None, None);
        loop {
            let l = next(&mut r)?;
            let mut it = l.split_whitespace();
            match it.next() {
                Some("end") => break,
                Some("dims") => dims = Some(parse_n::<usize, 4>(it, "dims")?),
                Some("spacing") => spacing = Some(parse_n::<f64, 3>(it, "spacing")?),
                Some("dtype") => dtype = it.next().map(str::to_string),
                _ => return Err(Error::Format(format!("unexpected header line '{l}'"))),
            }
        }
        if dtype.as_deref() != Some("f32") {
            return Err(Error::Format(format!("unsupported dtype {dtype:?}")));
        }
        let dims = dims.ok_or_else(|| Error::Format("header lacks dims".into()))?;
        let spacing = spacing.ok_or_else(|| Error::Format("header lacks spacing".into()))?;
        let n: usize = dims.iter().product();
        let mut bytes = Vec::with_capacity(n * 4);
        r.read_to_end(&mut bytes)?;
        if bytes.len() != n * 4 {
            return Err(Error::Format(format!("expected {} data bytes, found {}", n * 4, bytes.len())));
        }
        let data = bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
        Self::new(dims, spacing, data)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_to(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(std::fs::File::open(path)?)
    }
}

fn parse_n<'a, V: std::str::FromStr, const N: usize>(
    mut it: impl Iterator<Item = &'a str>,
    what: &str,
) -> Result<[V; N]> {
    let mut out = Vec::with_capacity(N);
    for _ in 0..N {
        let tok = it.next().ok_or_else(|| Error::Format(format!("{what}: expected {N} values")))?;
        out.push(tok.parse().map_err(|_| Error::Format(format!("{what}: bad value '{tok}'")))?);
    }
    if it.next().is_some() {
        return Err(Error::Format(format!("{what}: expected {N} values")));
    }
    out.try_into().map_err(|_| Error::Format(what.to_string()))
}
