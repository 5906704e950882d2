use std::io::{BufRead, Read, Write};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LidarPoint {
    /// Coordinates in the LiDAR frame.
    pub xyz: Vector3<f64>,
    pub ring: u16,
    /// Horizontal angle in radians, as reported by the sensor.
    pub azimuth: f64,
    /// Sensor-clock stamp of the ray.
    pub stamp: f64,
    /// Filled by planar extraction, zero otherwise.
    pub curvature: f64,
}

impl LidarPoint {
    pub fn new(xyz: Vector3<f64>, ring: u16, azimuth: f64, stamp: f64) -> Self {
        Self { xyz, ring, azimuth, stamp, curvature: 0.0 }
    }
}

/// Index of a point inside a scan: `(ring, position in ring)`.
pub type PointIndex = (usize, usize);

/// One LiDAR sweep with points grouped by ring and sorted by azimuth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LidarScan {
    pub rings: Vec<Vec<LidarPoint>>,
    pub sweep_start: f64,
    pub sweep_end: f64,
}

impl LidarScan {
    pub fn empty(n_rings: usize, sweep_start: f64, sweep_end: f64) -> Self {
        Self { rings: vec![Vec::new(); n_rings], sweep_start, sweep_end }
    }

    /// Groups points by ring and sorts each ring by azimuth (stable).
    pub fn from_points(points: Vec<LidarPoint>, n_rings: usize, sweep_start: f64, sweep_end: f64) -> Result<Self> {
        let mut scan = Self::empty(n_rings, sweep_start, sweep_end);
        for p in points {
            let r = p.ring as usize;
            if r >= n_rings {
                return Err(Error::Precondition(format!("ring {r} outside [0, {n_rings})")));
            }
            scan.rings[r].push(p);
        }
        for ring in &mut scan.rings {
            ring.sort_by(|a, b| a.azimuth.total_cmp(&b.azimuth));
        }
        Ok(scan)
    }

    pub fn len(&self) -> usize {
        self.rings.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, idx: PointIndex) -> &LidarPoint {
        &self.rings[idx.0][idx.1]
    }

    pub fn iter(&self) -> impl Iterator<Item = (PointIndex, &LidarPoint)> {
        self.rings.iter().enumerate().flat_map(|(r, ring)| ring.iter().enumerate().map(move |(i, p)| ((r, i), p)))
    }

    /// Points in ring-major order, as stored.
    pub fn points(&self) -> Vec<LidarPoint> {
        self.rings.iter().flatten().copied().collect()
    }

    /// Writes the fixture CSV: a bounds comment, a header and one line per
    /// point with shortest round-trip float formatting.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# sweep_start={},sweep_end={},rings={}", self.sweep_start, self.sweep_end, self.rings.len())?;
        writeln!(w, "ring,azimuth,x,y,z,stamp")?;
        for p in self.rings.iter().flatten() {
            writeln!(w, "{},{},{},{},{},{}", p.ring, p.azimuth, p.xyz.x, p.xyz.y, p.xyz.z, p.stamp)?;
        }
        Ok(())
    }

    /// Reads the CSV written by [`LidarScan::write_csv`]. Without a bounds
    /// comment the sweep spans the point stamps and 16 rings are assumed.
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut bounds: Option<(f64, f64, usize)> = None;
        let mut points = Vec::new();
        for (line_no, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            let parse_err = |msg: String| Error::Parse { line: line_no + 1, msg };
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let mut vals = [None, None, None];
                for kv in rest.trim().split(',') {
                    let (k, v) = kv.split_once('=').ok_or_else(|| parse_err(format!("bad bounds entry '{kv}'")))?;
                    let slot = match k.trim() {
                        "sweep_start" => 0,
                        "sweep_end" => 1,
                        "rings" => 2,
                        other => return Err(parse_err(format!("unknown key '{other}'"))),
                    };
                    vals[slot] = Some(v.trim().to_string());
                }
                let f = |s: &Option<String>| -> Result<f64> {
                    s.as_deref()
                        .ok_or_else(|| parse_err("incomplete bounds comment".into()))?
                        .parse()
                        .map_err(|e| parse_err(format!("{e}")))
                };
                let rings = vals[2].as_deref().unwrap_or("16").parse().map_err(|e| parse_err(format!("{e}")))?;
                bounds = Some((f(&vals[0])?, f(&vals[1])?, rings));
                continue;
            }
            if line.starts_with("ring") {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 6 {
                return Err(parse_err(format!("expected 6 columns, found {}", fields.len())));
            }
            let ring: u16 = fields[0].parse().map_err(|e| parse_err(format!("ring: {e}")))?;
            let mut v = [0.0; 5];
            for (k, f) in fields[1..].iter().enumerate() {
                v[k] = f.parse().map_err(|e| parse_err(format!("column {}: {e}", k + 2)))?;
            }
            points.push(LidarPoint::new(Vector3::new(v[1], v[2], v[3]), ring, v[0], v[4]));
        }
        let (start, end, n_rings) = match bounds {
            Some(b) => b,
            None => {
                let lo = points.iter().map(|p| p.stamp).fold(f64::INFINITY, f64::min);
                let hi = points.iter().map(|p| p.stamp).fold(f64::NEG_INFINITY, f64::max);
                (lo, hi, 16)
            }
        };
        Self::from_points(points, n_rings, start, end)
    }

    /// Little-endian binary fixture: magic, ring count, point count, sweep
    /// bounds, then `(u16 ring, f64 azimuth, x, y, z, stamp)` per point.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(BINARY_MAGIC)?;
        w.write_all(&(self.rings.len() as u32).to_le_bytes())?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        w.write_all(&self.sweep_start.to_le_bytes())?;
        w.write_all(&self.sweep_end.to_le_bytes())?;
        for p in self.rings.iter().flatten() {
            w.write_all(&p.ring.to_le_bytes())?;
            for v in [p.azimuth, p.xyz.x, p.xyz.y, p.xyz.z, p.stamp] {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != BINARY_MAGIC {
            return Err(Error::Parse { line: 0, msg: "not a scan fixture".into() });
        }
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        let mut b2 = [0u8; 2];
        r.read_exact(&mut b4)?;
        let n_rings = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b8)?;
        let count = u64::from_le_bytes(b8) as usize;
        let mut f64_at = |r: &mut R| -> Result<f64> {
            r.read_exact(&mut b8)?;
            Ok(f64::from_le_bytes(b8))
        };
        let start = f64_at(&mut r)?;
        let end = f64_at(&mut r)?;
        let mut points = Vec::with_capacity(count);
        for _ in 0..count {
            r.read_exact(&mut b2)?;
            let ring = u16::from_le_bytes(b2);
            let mut v = [0.0; 5];
            for slot in &mut v {
                *slot = f64_at(&mut r)?;
            }
            points.push(LidarPoint::new(Vector3::new(v[1], v[2], v[3]), ring, v[0], v[4]));
        }
        Self::from_points(points, n_rings, start, end)
    }
}

const BINARY_MAGIC: &[u8; 4] = b"LSC1";
