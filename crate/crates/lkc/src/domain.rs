//! Sampled domains (square, cube, sphere lattice) and field bundles.
//!
//! A [`GridDomain`] describes where a field is sampled; a [`FieldBundle`]
//! holds `F` realizations of a real-valued field over that domain and owns
//! their on-disk serialization (see [`FieldBundle::save`]).

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainKind {
    #[serde(rename = "square")]
    Square2D,
    #[serde(rename = "cube")]
    Cube3D,
    #[serde(rename = "sphere")]
    SphereLatLon,
}

impl DomainKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            DomainKind::Square2D => "square",
            DomainKind::Cube3D => "cube",
            DomainKind::SphereLatLon => "sphere",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "square" => Ok(DomainKind::Square2D),
            "cube" => Ok(DomainKind::Cube3D),
            "sphere" => Ok(DomainKind::SphereLatLon),
            other => Err(Error::InvalidInput(format!("unknown domain kind '{other}'"))),
        }
    }
}

/// A sampled parameter space: unit square, unit cube, or the surface of the
/// unit sphere on a latitudinal-longitudinal lattice.
///
/// `grid_size` is the number of sample sites per direction. For the sphere it
/// is the number of longitude columns; latitude rows are `G/2` interior rows
/// plus the two poles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridDomain {
    pub kind: DomainKind,
    pub grid_size: usize,
}

impl GridDomain {
    pub fn new(kind: DomainKind, grid_size: usize) -> Result<Self> {
        if grid_size < 2 {
            return Err(Error::InvalidInput("grid_size must be >= 2".into()));
        }
        if kind == DomainKind::SphereLatLon && (grid_size < 4 || grid_size % 2 != 0) {
            return Err(Error::InvalidInput(
                "sphere grid_size must be even and >= 4".into(),
            ));
        }
        Ok(GridDomain { kind, grid_size })
    }

    pub fn square(g: usize) -> Result<Self> {
        Self::new(DomainKind::Square2D, g)
    }

    pub fn cube(g: usize) -> Result<Self> {
        Self::new(DomainKind::Cube3D, g)
    }

    pub fn sphere(g: usize) -> Result<Self> {
        Self::new(DomainKind::SphereLatLon, g)
    }

    /// Interior latitude rows on the sphere (`G/2`).
    pub fn lat_rows(&self) -> usize {
        debug_assert_eq!(self.kind, DomainKind::SphereLatLon);
        self.grid_size / 2
    }

    /// Total number of sample sites K.
    pub fn site_count(&self) -> usize {
        let g = self.grid_size;
        match self.kind {
            DomainKind::Square2D => g * g,
            DomainKind::Cube3D => g * g * g,
            DomainKind::SphereLatLon => self.lat_rows() * g + 2,
        }
    }

    /// Manifold dimension of the domain.
    pub fn manifold_dim(&self) -> usize {
        match self.kind {
            DomainKind::Square2D | DomainKind::SphereLatLon => 2,
            DomainKind::Cube3D => 3,
        }
    }

    pub fn ambient_dim(&self) -> usize {
        match self.kind {
            DomainKind::Square2D => 2,
            DomainKind::Cube3D | DomainKind::SphereLatLon => 3,
        }
    }

    /// Euler characteristic of the full domain.
    pub fn euler_characteristic(&self) -> i64 {
        match self.kind {
            DomainKind::Square2D | DomainKind::Cube3D => 1,
            DomainKind::SphereLatLon => 2,
        }
    }

    /// Ambient coordinates of site `k`. Square/cube sites sit at cell
    /// centers with spacing `1/G`; sphere sites sit on the unit sphere with
    /// poles last.
    pub fn site_position(&self, k: usize) -> [f64; 3] {
        let g = self.grid_size;
        let h = 1.0 / g as f64;
        match self.kind {
            DomainKind::Square2D => {
                let x = k % g;
                let y = k / g;
                [(x as f64 + 0.5) * h, (y as f64 + 0.5) * h, 0.0]
            }
            DomainKind::Cube3D => {
                let x = k % g;
                let y = (k / g) % g;
                let z = k / (g * g);
                [
                    (x as f64 + 0.5) * h,
                    (y as f64 + 0.5) * h,
                    (z as f64 + 0.5) * h,
                ]
            }
            DomainKind::SphereLatLon => {
                let rows = self.lat_rows();
                if k == rows * g {
                    return [0.0, 0.0, 1.0]; // north pole
                }
                if k == rows * g + 1 {
                    return [0.0, 0.0, -1.0]; // south pole
                }
                let r = k / g;
                let c = k % g;
                let theta = std::f64::consts::PI * (r as f64 + 1.0) / (rows as f64 + 1.0);
                let phi = 2.0 * std::f64::consts::PI * c as f64 / g as f64;
                [
                    theta.sin() * phi.cos(),
                    theta.sin() * phi.sin(),
                    theta.cos(),
                ]
            }
        }
    }
}

/// How normalization pools the mean and variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NormalizeMode {
    /// One mean and one standard deviation pooled over all fields and sites.
    #[default]
    Pooled,
    /// Separate mean/sd per field; diagnostic mode only.
    PerField,
}

/// `F` field realizations sampled on a [`GridDomain`], stored field-major
/// (`values[field * K + site]`). An optional site-inclusion mask marks
/// irregular domains; excluded sites never generate excursion cells.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldBundle {
    pub domain: GridDomain,
    pub field_count: usize,
    /// field-major, row-major within field (x fastest).
    pub values: Vec<f64>,
    /// `Some(mask)` where `mask[k] == true` means site `k` is part of the domain.
    pub mask: Option<Vec<bool>>,
    pub normalized: bool,
}

impl FieldBundle {
    pub fn new(
        domain: GridDomain,
        field_count: usize,
        values: Vec<f64>,
        mask: Option<Vec<bool>>,
    ) -> Result<Self> {
        let k = domain.site_count();
        if values.len() != field_count * k {
            return Err(Error::DimensionMismatch(format!(
                "expected {} values ({} fields x {} sites), got {}",
                field_count * k,
                field_count,
                k,
                values.len()
            )));
        }
        if let Some(m) = &mask {
            if m.len() != k {
                return Err(Error::DimensionMismatch(format!(
                    "mask length {} != site count {}",
                    m.len(),
                    k
                )));
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("field values must be finite".into()));
        }
        Ok(FieldBundle {
            domain,
            field_count,
            values,
            mask,
            normalized: false,
        })
    }

    pub fn site_count(&self) -> usize {
        self.domain.site_count()
    }

    pub fn field(&self, i: usize) -> &[f64] {
        let k = self.site_count();
        &self.values[i * k..(i + 1) * k]
    }

    pub fn site_included(&self, k: usize) -> bool {
        self.mask.as_ref().map_or(true, |m| m[k])
    }

    /// Iterator over values at unmasked sites, across all fields.
    pub fn active_values(&self) -> impl Iterator<Item = f64> + '_ {
        let k = self.site_count();
        self.values
            .iter()
            .enumerate()
            .filter(move |(idx, _)| self.site_included(idx % k))
            .map(|(_, &v)| v)
    }

    /// Range of values over unmasked sites.
    pub fn value_range(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for v in self.active_values() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }

    /// Shift and scale to pooled mean 0 / variance 1 (population variance
    /// over unmasked sites). The same two constants are applied to every
    /// value unless `PerField` is requested.
    pub fn normalize(&self, mode: NormalizeMode) -> Result<FieldBundle> {
        let mut out = self.clone();
        match mode {
            NormalizeMode::Pooled => {
                let (mean, var) = mean_var(self.active_values());
                if var <= 0.0 {
                    return Err(Error::DegenerateField);
                }
                let sd = var.sqrt();
                for v in &mut out.values {
                    *v = (*v - mean) / sd;
                }
            }
            NormalizeMode::PerField => {
                let k = self.site_count();
                for i in 0..self.field_count {
                    let (mean, var) = mean_var(
                        self.field(i)
                            .iter()
                            .enumerate()
                            .filter(|(s, _)| self.site_included(*s))
                            .map(|(_, &v)| v),
                    );
                    if var <= 0.0 {
                        return Err(Error::DegenerateField);
                    }
                    let sd = var.sqrt();
                    for v in &mut out.values[i * k..(i + 1) * k] {
                        *v = (*v - mean) / sd;
                    }
                }
            }
        }
        out.normalized = true;
        Ok(out)
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write(&mut w)
    }

    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        let header = Header {
            magic: "LKCB1".into(),
            kind: self.domain.kind.as_str().into(),
            g: self.domain.grid_size,
            f: self.field_count,
            mask: self.mask.is_some(),
        };
        serde_json::to_writer(&mut *w, &header)
            .map_err(|e| Error::InvalidInput(format!("header encode: {e}")))?;
        w.write_all(b"\n")?;
        if let Some(mask) = &self.mask {
            let k = self.site_count();
            let mut bytes = vec![0u8; k.div_ceil(8)];
            for (i, &inc) in mask.iter().enumerate() {
                if inc {
                    bytes[i / 8] |= 1 << (i % 8);
                }
            }
            w.write_all(&bytes)?;
        }
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<FieldBundle> {
        let f = std::fs::File::open(path)?;
        Self::read(&mut BufReader::new(f))
    }

    pub fn read<R: BufRead>(r: &mut R) -> Result<FieldBundle> {
        let mut line = String::new();
        let header_len = r.read_line(&mut line)? as u64;
        let header: Header = serde_json::from_str(line.trim_end()).map_err(|e| {
            Error::FormatError {
                offset: e.column() as u64,
                message: format!("bad header: {e}"),
            }
        })?;
        if header.magic != "LKCB1" {
            return Err(Error::FormatError {
                offset: 0,
                message: format!("bad magic '{}'", header.magic),
            });
        }
        let domain = GridDomain::new(DomainKind::parse(&header.kind)?, header.g)?;
        let k = domain.site_count();
        let mut offset = header_len;
        let mask = if header.mask {
            let mut bytes = vec![0u8; k.div_ceil(8)];
            r.read_exact(&mut bytes).map_err(|_| Error::FormatError {
                offset,
                message: "truncated mask bitmap".into(),
            })?;
            offset += bytes.len() as u64;
            Some((0..k).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect())
        } else {
            None
        };
        let mut values = vec![0.0f64; header.f * k];
        let mut buf = [0u8; 8];
        for v in values.iter_mut() {
            r.read_exact(&mut buf).map_err(|_| {
                Error::DimensionMismatch(format!(
                    "payload ended at byte {offset}; header promises {} doubles",
                    header.f * k
                ))
            })?;
            *v = f64::from_le_bytes(buf);
            offset += 8;
        }
        // Trailing bytes mean the header undersold the payload.
        let mut probe = [0u8; 1];
        if r.read(&mut probe)? != 0 {
            return Err(Error::DimensionMismatch(format!(
                "trailing bytes after {} doubles at byte {offset}",
                header.f * k
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::FormatError {
                offset,
                message: "non-finite value in payload".into(),
            });
        }
        FieldBundle::new(domain, header.f, values, mask)
    }

    /// CSV import, 2D square domains only. Expected header `x,y,t1,...,tF`
    /// and one row per site with 0-based integer coordinates.
    pub fn load_csv<P: AsRef<Path>>(path: P) -> Result<FieldBundle> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::FormatError {
                offset: 0,
                message: "empty csv".into(),
            })?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.len() < 3 || cols[0] != "x" || cols[1] != "y" {
            return Err(Error::FormatError {
                offset: 0,
                message: "csv header must be x,y,t1,...,tF".into(),
            });
        }
        let f = cols.len() - 2;
        let mut rows: Vec<(usize, usize, Vec<f64>)> = Vec::new();
        let mut g = 0usize;
        for (ln, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split(',').map(str::trim).collect();
            if parts.len() != f + 2 {
                return Err(Error::FormatError {
                    offset: ln as u64 + 2,
                    message: format!("expected {} columns, got {}", f + 2, parts.len()),
                });
            }
            let parse = |s: &str| -> Result<f64> {
                s.parse().map_err(|_| Error::FormatError {
                    offset: ln as u64 + 2,
                    message: format!("bad number '{s}'"),
                })
            };
            let x = parse(parts[0])? as usize;
            let y = parse(parts[1])? as usize;
            let vals: Vec<f64> = parts[2..]
                .iter()
                .map(|s| parse(s))
                .collect::<Result<_>>()?;
            g = g.max(x + 1).max(y + 1);
            rows.push((x, y, vals));
        }
        let domain = GridDomain::square(g)?;
        if rows.len() != g * g {
            return Err(Error::DimensionMismatch(format!(
                "csv has {} sites but inferred G={} needs {}",
                rows.len(),
                g,
                g * g
            )));
        }
        let mut values = vec![f64::NAN; f * g * g];
        for (x, y, vals) in rows {
            for (i, v) in vals.into_iter().enumerate() {
                values[i * g * g + y * g + x] = v;
            }
        }
        FieldBundle::new(domain, f, values, None)
    }
}

fn mean_var(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut n = 0usize;
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for v in values {
        n += 1;
        let d = v - mean;
        mean += d / n as f64;
        m2 += d * (v - mean);
    }
    (mean, if n > 0 { m2 / n as f64 } else { 0.0 })
}

#[derive(Serialize, Deserialize)]
struct Header {
    magic: String,
    kind: String,
    #[serde(rename = "G")]
    g: usize,
    #[serde(rename = "F")]
    f: usize,
    mask: bool,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn site_counts_and_constants() {
        let sq = GridDomain::square(10).unwrap();
        assert_eq!(sq.site_count(), 100);
        assert_eq!(sq.euler_characteristic(), 1);
        let cu = GridDomain::cube(10).unwrap();
        assert_eq!(cu.site_count(), 1000);
        assert_eq!(cu.manifold_dim(), 3);
        let sp = GridDomain::sphere(10).unwrap();
        assert_eq!(sp.site_count(), 5 * 10 + 2);
        assert_eq!(sp.euler_characteristic(), 2);
        assert_eq!(sp.manifold_dim(), 2);
    }

    #[test]
    fn sphere_positions_unit_radius() {
        let sp = GridDomain::sphere(8).unwrap();
        for k in 0..sp.site_count() {
            let p = sp.site_position(k);
            let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            assert!((r - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn normalize_constant_field_is_degenerate() {
        let d = GridDomain::square(4).unwrap();
        let b = FieldBundle::new(d, 2, vec![5.0; 32], None).unwrap();
        assert!(matches!(
            b.normalize(NormalizeMode::Pooled),
            Err(Error::DegenerateField)
        ));
    }

    #[test]
    fn normalize_two_point_values() {
        let d = GridDomain::square(2).unwrap();
        let b = FieldBundle::new(d, 2, vec![0.0, 2.0, 2.0, 0.0, 0.0, 2.0, 2.0, 0.0], None)
            .unwrap();
        let n = b.normalize(NormalizeMode::Pooled).unwrap();
        for (&v, &orig) in n.values.iter().zip(&b.values) {
            let expect = if orig == 0.0 { -1.0 } else { 1.0 };
            assert!((v - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn normalize_idempotent() {
        let d = GridDomain::square(3).unwrap();
        let vals: Vec<f64> = (0..18).map(|i| (i as f64 * 0.7).sin()).collect();
        let b = FieldBundle::new(d, 2, vals, None).unwrap();
        let n1 = b.normalize(NormalizeMode::Pooled).unwrap();
        let n2 = n1.normalize(NormalizeMode::Pooled).unwrap();
        for (a, b) in n1.values.iter().zip(&n2.values) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn roundtrip_binary() {
        let d = GridDomain::square(20).unwrap();
        let vals: Vec<f64> = (0..15 * 400).map(|i| (i as f64).cos()).collect();
        let b = FieldBundle::new(d, 15, vals, None).unwrap();
        let mut buf = Vec::new();
        b.write(&mut buf).unwrap();
        let b2 = FieldBundle::read(&mut std::io::Cursor::new(&buf)).unwrap();
        assert_eq!(b, b2);
        let mut buf2 = Vec::new();
        b2.write(&mut buf2).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn short_payload_is_dimension_mismatch() {
        let d = GridDomain::cube(10).unwrap();
        let vals = vec![0.5f64; 1000];
        let b = FieldBundle::new(d, 1, vals, None).unwrap();
        let mut buf = Vec::new();
        b.write(&mut buf).unwrap();
        buf.truncate(buf.len() - 8); // 999 doubles
        let err = FieldBundle::read(&mut std::io::Cursor::new(&buf)).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch(_)));
    }

    #[test]
    fn csv_matches_binary_path() {
        let d = GridDomain::square(3).unwrap();
        let vals: Vec<f64> = (0..2 * 9).map(|i| i as f64 * 0.25 - 1.0).collect();
        let b = FieldBundle::new(d, 2, vals, None).unwrap();
        let mut csv = String::from("x,y,t1,t2\n");
        for y in 0..3 {
            for x in 0..3 {
                let k = y * 3 + x;
                csv.push_str(&format!(
                    "{x},{y},{},{}\n",
                    b.values[k],
                    b.values[9 + k]
                ));
            }
        }
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.csv");
        std::fs::write(&p, csv).unwrap();
        let loaded = FieldBundle::load_csv(&p).unwrap();
        assert_eq!(loaded.values, b.values);
    }

    #[test]
    fn mask_roundtrip() {
        let d = GridDomain::square(5).unwrap();
        let mask: Vec<bool> = (0..25).map(|i| i % 3 != 0).collect();
        let vals: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let b = FieldBundle::new(d, 2, vals, Some(mask)).unwrap();
        let mut buf = Vec::new();
        b.write(&mut buf).unwrap();
        let b2 = FieldBundle::read(&mut std::io::Cursor::new(&buf)).unwrap();
        assert_eq!(b, b2);
    }
}
