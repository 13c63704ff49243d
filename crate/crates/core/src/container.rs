//! Binary containers for datasets (`FOGD`) and feature matrices (`FOGF`).
//!
//! All multi-byte integers and floats are little-endian. Missing values are
//! the canonical quiet NaN `0x7FC00000`.
//!
//! `FOGD` v1:
//! - magic `FOGD`, version u16, N u64, M u16, T u16
//! - M catalog entries, each u16 byte length + UTF-8 catalog line
//! - X: N·M·T f32 in `[n][m][t]` order
//! - Y: N·T f32
//! - N meta records of 60 bytes: station id (16 bytes, zero padded), lat f64,
//!   lon f64, launch i64 (Unix seconds), prior visibility 3×f32 at launch
//!   +0/−3/−6 h, fog-code mask u64
//!
//! `FOGF` v1:
//! - magic `FOGF`, version u16, rows u64, cols u16
//! - cols manifest names, each u16 byte length + UTF-8
//! - values: rows·cols f32 row-major, labels: rows u8, weights: rows f32
//! - rows provenance records of 26 bytes: station id (16 bytes), launch i64, lead u16

use std::io::{Read, Write};

use crate::catalog::{Channel, VariableCatalog};
use crate::dataset::{Dataset, SampleMeta, Station, STATION_ID_BYTES};
use crate::error::{Error, Result};
use crate::featurize::{FeatureMatrix, RowProvenance};
use crate::time::UtcTime;

pub const DATASET_MAGIC: &[u8; 4] = b"FOGD";
pub const FEATURES_MAGIC: &[u8; 4] = b"FOGF";
pub const DATASET_VERSION: u16 = 1;
pub const FEATURES_VERSION: u16 = 1;

struct Sink<W: Write> {
    inner: W,
    buf: Vec<u8>,
}

impl<W: Write> Sink<W> {
    fn new(inner: W) -> Self {
        Sink { inner, buf: Vec::with_capacity(1 << 16) }
    }

    fn bytes(&mut self, b: &[u8]) -> Result<()> {
        self.buf.extend_from_slice(b);
        if self.buf.len() >= 1 << 16 {
            self.inner.write_all(&self.buf)?;
            self.buf.clear();
        }
        Ok(())
    }

    fn u8(&mut self, v: u8) -> Result<()> {
        self.bytes(&[v])
    }
    fn u16(&mut self, v: u16) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    fn u64(&mut self, v: u64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    fn i64(&mut self, v: i64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    fn f32(&mut self, v: f32) -> Result<()> {
        let bits = if v.is_nan() { crate::dataset::MISSING_BITS } else { v.to_bits() };
        self.bytes(&bits.to_le_bytes())
    }
    fn f64(&mut self, v: f64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    fn str16(&mut self, s: &str) -> Result<()> {
        let len = u16::try_from(s.len()).map_err(|_| Error::Format(format!("string too long for container: {s:?}")))?;
        self.u16(len)?;
        self.bytes(s.as_bytes())
    }

    fn station_id(&mut self, id: &str) -> Result<()> {
        if id.len() > STATION_ID_BYTES {
            return Err(Error::Format(format!("station id {id:?} exceeds {STATION_ID_BYTES} bytes")));
        }
        let mut field = [0u8; STATION_ID_BYTES];
        field[..id.len()].copy_from_slice(id.as_bytes());
        self.bytes(&field)
    }

    fn finish(mut self) -> Result<()> {
        self.inner.write_all(&self.buf)?;
        self.inner.flush()?;
        Ok(())
    }
}

struct Source<R: Read> {
    inner: R,
}

impl<R: Read> Source<R> {
    fn exact<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.inner.read_exact(&mut b).map_err(truncated)?;
        Ok(b)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.exact::<1>()?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.exact()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.exact()?))
    }
    fn i64(&mut self) -> Result<i64> {
        Ok(i64::from_le_bytes(self.exact()?))
    }
    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.exact()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.exact()?))
    }

    fn f32_vec(&mut self, count: usize) -> Result<Vec<f32>> {
        let mut raw = vec![0u8; count.checked_mul(4).ok_or_else(|| Error::Format("size overflow".into()))?];
        self.inner.read_exact(&mut raw).map_err(truncated)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
    }

    fn str16(&mut self) -> Result<String> {
        let len = usize::from(self.u16()?);
        let mut raw = vec![0u8; len];
        self.inner.read_exact(&mut raw).map_err(truncated)?;
        String::from_utf8(raw).map_err(|_| Error::Format("invalid UTF-8 in string".into()))
    }

    fn station_id(&mut self) -> Result<String> {
        let raw = self.exact::<STATION_ID_BYTES>()?;
        let end = raw.iter().position(|&b| b == 0).unwrap_or(STATION_ID_BYTES);
        String::from_utf8(raw[..end].to_vec()).map_err(|_| Error::Format("invalid UTF-8 station id".into()))
    }

    fn expect_end(&mut self) -> Result<()> {
        let mut probe = [0u8; 1];
        match self.inner.read(&mut probe)? {
            0 => Ok(()),
            _ => Err(Error::Format("trailing bytes after container payload".into())),
        }
    }

    fn header(&mut self, magic: &[u8; 4], version: u16) -> Result<()> {
        let found = self.exact::<4>()?;
        if &found != magic {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&found),
                String::from_utf8_lossy(magic)
            )));
        }
        let v = self.u16()?;
        if v != version {
            return Err(Error::Version { found: v.to_string(), expected: version.to_string() });
        }
        Ok(())
    }
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Format("truncated container".into())
    } else {
        Error::Io(e)
    }
}

pub fn write_dataset<W: Write>(ds: &Dataset, sink: W) -> Result<()> {
    let mut s = Sink::new(sink);
    s.bytes(DATASET_MAGIC)?;
    s.u16(DATASET_VERSION)?;
    s.u64(ds.n_samples() as u64)?;
    s.u16(u16::try_from(ds.n_variables()).map_err(|_| Error::Format("too many variables".into()))?)?;
    s.u16(ds.lead_hours())?;
    for ch in ds.catalog().channels() {
        s.str16(&ch.to_string())?;
    }
    for &v in ds.x_values() {
        s.f32(v)?;
    }
    for &v in ds.y_values() {
        s.f32(v)?;
    }
    for m in ds.meta() {
        s.station_id(&m.station.id)?;
        s.f64(m.station.lat)?;
        s.f64(m.station.lon)?;
        s.i64(m.launch.seconds())?;
        for &p in &m.prior_visibility {
            s.f32(p)?;
        }
        s.u64(m.fog_code_mask)?;
    }
    s.finish()
}

pub fn read_dataset<R: Read>(source: R) -> Result<Dataset> {
    let mut r = Source { inner: source };
    r.header(DATASET_MAGIC, DATASET_VERSION)?;
    let n = usize::try_from(r.u64()?).map_err(|_| Error::Format("sample count overflow".into()))?;
    let m = usize::from(r.u16()?);
    let t = r.u16()?;
    let mut channels = Vec::with_capacity(m);
    for _ in 0..m {
        channels.push(Channel::parse(&r.str16()?)?);
    }
    let catalog = VariableCatalog::new(channels)?;
    let x = r.f32_vec(n * m * usize::from(t))?;
    let y = r.f32_vec(n * usize::from(t))?;
    let mut meta = Vec::with_capacity(n);
    for _ in 0..n {
        let id = r.station_id()?;
        let lat = r.f64()?;
        let lon = r.f64()?;
        let launch = UtcTime(r.i64()?);
        let prior_visibility = [r.f32()?, r.f32()?, r.f32()?];
        let fog_code_mask = r.u64()?;
        meta.push(SampleMeta { station: Station::new(id, lat, lon), launch, prior_visibility, fog_code_mask });
    }
    r.expect_end()?;
    Dataset::new(catalog, t, meta, x, y).map_err(|e| Error::Format(format!("invalid dataset payload: {e}")))
}

pub fn write_features<W: Write>(fm: &FeatureMatrix, sink: W) -> Result<()> {
    let mut s = Sink::new(sink);
    s.bytes(FEATURES_MAGIC)?;
    s.u16(FEATURES_VERSION)?;
    s.u64(fm.n_rows() as u64)?;
    s.u16(u16::try_from(fm.n_cols()).map_err(|_| Error::Format("too many columns".into()))?)?;
    for name in fm.manifest() {
        s.str16(name)?;
    }
    for &v in fm.values() {
        s.f32(v)?;
    }
    for &l in fm.labels() {
        s.u8(l)?;
    }
    for &w in fm.weights() {
        s.f32(w)?;
    }
    for p in fm.provenance() {
        s.station_id(&p.station_id)?;
        s.i64(p.launch.seconds())?;
        s.u16(p.lead)?;
    }
    s.finish()
}

pub fn read_features<R: Read>(source: R) -> Result<FeatureMatrix> {
    let mut r = Source { inner: source };
    r.header(FEATURES_MAGIC, FEATURES_VERSION)?;
    let rows = usize::try_from(r.u64()?).map_err(|_| Error::Format("row count overflow".into()))?;
    let cols = usize::from(r.u16()?);
    let mut manifest = Vec::with_capacity(cols);
    for _ in 0..cols {
        manifest.push(r.str16()?);
    }
    let values = r.f32_vec(rows * cols)?;
    let mut labels = Vec::with_capacity(rows);
    for _ in 0..rows {
        labels.push(r.u8()?);
    }
    let weights = r.f32_vec(rows)?;
    let mut provenance = Vec::with_capacity(rows);
    for _ in 0..rows {
        let station_id = r.station_id()?;
        let launch = UtcTime(r.i64()?);
        let lead = r.u16()?;
        provenance.push(RowProvenance { station_id, launch, lead });
    }
    r.expect_end()?;
    FeatureMatrix::new(manifest, values, labels, weights, provenance)
        .map_err(|e| Error::Format(format!("invalid feature payload: {e}")))
}
