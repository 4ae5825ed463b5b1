//! Binary container for estimated filters and beamformer weights.
//!
//! Layout, all integers `u32` and all reals `f64`, little-endian:
//!
//! ```text
//! magic        b"DPMF"
//! version      1
//! flags        bit 0: filters, bit 1: weights, bit 2: geometry
//! M K_t K_f Δ_t N Ω sample_rate frame_len
//! [geometry]   speed_of_sound, reference_index, M × (x, y, z)
//! [filters]    Ω × G_t(ω), then N × G_f(n), each column-major,
//!              one complex value = (re, im)
//! [weights]    θ_s, then Ω × M complex values w(ω)
//! ```
//!
//! `K_t`, `K_f` and `Δ_t` are zero when no filters are stored. `G_t(ω)` has
//! `K_t·M` rows and `G_f(n)` has `(2K_f+1)·M` rows; both have `M` columns.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::CMatrix;
use crate::mclp::DualPathFilters;
use crate::room::ArrayGeometry;

pub const MAGIC: [u8; 4] = *b"DPMF";
pub const VERSION: u32 = 1;

const HAS_FILTERS: u32 = 1;
const HAS_WEIGHTS: u32 = 2;
const HAS_GEOMETRY: u32 = 4;

/// Beamformer weights with the look direction they were computed for.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredWeights {
    pub theta: f64,
    /// `w[ω]` has one entry per microphone.
    pub w: Vec<Vec<Complex64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub mics: usize,
    pub frames: usize,
    pub bins: usize,
    pub sample_rate: u32,
    pub frame_len: usize,
    pub geometry: Option<ArrayGeometry>,
    pub filters: Option<DualPathFilters>,
    pub weights: Option<StoredWeights>,
}

impl Container {
    /// Empty container for a tensor of the given shape.
    pub fn new(mics: usize, frames: usize, bins: usize, sample_rate: u32, frame_len: usize) -> Self {
        Self {
            mics,
            frames,
            bins,
            sample_rate,
            frame_len,
            geometry: None,
            filters: None,
            weights: None,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Container(msg));
        if let Some(g) = &self.geometry {
            if g.num_mics() != self.mics {
                return bad(format!("geometry has {} mics, header says {}", g.num_mics(), self.mics));
            }
        }
        if let Some(f) = &self.filters {
            if f.mics != self.mics || f.frames() != self.frames || f.bins() != self.bins {
                return bad("filter bank shape does not match the header".into());
            }
        }
        if let Some(w) = &self.weights {
            if w.w.len() != self.bins || w.w.iter().any(|v| v.len() != self.mics) {
                return bad("weights shape does not match the header".into());
            }
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        self.validate()?;
        let mut buf = Vec::new();
        buf.extend_from_slice(&MAGIC);
        let flags = self.filters.as_ref().map_or(0, |_| HAS_FILTERS)
            | self.weights.as_ref().map_or(0, |_| HAS_WEIGHTS)
            | self.geometry.as_ref().map_or(0, |_| HAS_GEOMETRY);
        let (k_t, k_f, delta_t) = self.filters.as_ref().map_or((0, 0, 0), |f| (f.k_t, f.k_f, f.delta_t));
        for v in [
            VERSION as usize,
            flags as usize,
            self.mics,
            k_t,
            k_f,
            delta_t,
            self.frames,
            self.bins,
            self.sample_rate as usize,
            self.frame_len,
        ] {
            put_u32(&mut buf, v)?;
        }
        if let Some(g) = &self.geometry {
            put_f64(&mut buf, g.speed_of_sound);
            put_u32(&mut buf, g.reference_index)?;
            for p in &g.mic_positions {
                p.iter().for_each(|&c| put_f64(&mut buf, c));
            }
        }
        if let Some(f) = &self.filters {
            for g in f.gt.iter().chain(&f.gf) {
                g.iter().for_each(|&c| put_complex(&mut buf, c));
            }
        }
        if let Some(w) = &self.weights {
            put_f64(&mut buf, w.theta);
            w.w.iter().flatten().for_each(|&c| put_complex(&mut buf, c));
        }
        out.write_all(&buf).map_err(|e| Error::Container(format!("write failed: {e}")))
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self> {
        let mut bytes = Vec::new();
        input
            .read_to_end(&mut bytes)
            .map_err(|e| Error::Container(format!("read failed: {e}")))?;
        let mut r = Cursor { bytes: &bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Container("bad magic; not a filter container".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Container(format!("unsupported version {version}")));
        }
        let flags = r.u32()?;
        let [mics, k_t, k_f, delta_t, frames, bins, sample_rate, frame_len] = [(); 8].map(|_| r.u32().map(|v| v as usize));
        let (mics, k_t, k_f, delta_t, frames, bins, frame_len) = (mics?, k_t?, k_f?, delta_t?, frames?, bins?, frame_len?);
        let mut c = Container::new(mics, frames, bins, sample_rate? as u32, frame_len);

        if flags & HAS_GEOMETRY != 0 {
            let speed = r.f64()?;
            let reference = r.u32()? as usize;
            let positions = (0..mics).map(|_| Ok([r.f64()?, r.f64()?, r.f64()?])).collect::<Result<Vec<_>>>()?;
            c.geometry = Some(ArrayGeometry::new(positions, reference, speed).map_err(|e| Error::Container(e.to_string()))?);
        }
        if flags & HAS_FILTERS != 0 {
            let mut f = DualPathFilters::zeros(mics, frames, bins, k_t, k_f, delta_t);
            for g in f.gt.iter_mut().chain(f.gf.iter_mut()) {
                read_matrix(&mut r, g)?;
            }
            c.filters = Some(f);
        }
        if flags & HAS_WEIGHTS != 0 {
            let theta = r.f64()?;
            let w = (0..bins)
                .map(|_| (0..mics).map(|_| r.complex()).collect::<Result<Vec<_>>>())
                .collect::<Result<Vec<_>>>()?;
            c.weights = Some(StoredWeights { theta, w });
        }
        if r.pos != bytes.len() {
            return Err(Error::Container(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        c.validate()?;
        Ok(c)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(file))
    }
}

fn put_u32(buf: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Container(format!("{v} does not fit in u32")))?;
    buf.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_complex(buf: &mut Vec<u8>, c: Complex64) {
    put_f64(buf, c.re);
    put_f64(buf, c.im);
}

fn read_matrix(r: &mut Cursor, g: &mut CMatrix) -> Result<()> {
    for v in g.iter_mut() {
        *v = r.complex()?;
    }
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Container(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn complex(&mut self) -> Result<Complex64> {
        Ok(Complex64::new(self.f64()?, self.f64()?))
    }
}
