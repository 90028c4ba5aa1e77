//! Sparse multi-level voxel feature field.
//!
//! Each level is a lattice with spacing `voxel_size`; lattice vertex
//! `(i, j, k)` sits at `(i, j, k) * voxel_size` and may hold a `dim`-vector.
//! Evaluating a position interpolates trilinearly over the 8 surrounding
//! vertices of every level (absent vertices contribute zero) and sums the
//! levels.

use std::fs;
use std::path::Path;

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

pub type CellKey = [i32; 3];

pub const FIELD_MAGIC: [u8; 4] = *b"OVFD";
pub const FIELD_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Level {
    voxel_size: f64,
    slots: FxHashMap<CellKey, u32>,
    keys: Vec<CellKey>,
    values: Vec<f32>,
}

impl Level {
    fn new(voxel_size: f64) -> Self {
        Self {
            voxel_size,
            slots: FxHashMap::default(),
            keys: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn num_cells(&self) -> usize {
        self.keys.len()
    }

    pub fn slot(&self, key: &CellKey) -> Option<usize> {
        self.slots.get(key).map(|&s| s as usize)
    }

    pub fn key(&self, slot: usize) -> CellKey {
        self.keys[slot]
    }

    /// Cells in ascending key order.
    pub fn sorted_slots(&self) -> Vec<usize> {
        let mut s: Vec<usize> = (0..self.keys.len()).collect();
        s.sort_by_key(|&i| self.keys[i]);
        s
    }
}

/// Trilinear stencil: the 8 lattice vertices around `p` and their weights.
pub fn stencil(p: [f64; 3], voxel_size: f64) -> [(CellKey, f64); 8] {
    let mut base = [0i32; 3];
    let mut frac = [0.0f64; 3];
    for k in 0..3 {
        let g = p[k] / voxel_size;
        let b = g.floor();
        base[k] = b as i32;
        frac[k] = g - b;
    }
    let mut out = [([0i32; 3], 0.0f64); 8];
    for (c, slot) in out.iter_mut().enumerate() {
        let mut key = base;
        let mut w = 1.0;
        for k in 0..3 {
            if c >> k & 1 == 1 {
                key[k] += 1;
                w *= frac[k];
            } else {
                w *= 1.0 - frac[k];
            }
        }
        *slot = (key, w);
    }
    out
}

#[derive(Debug, Clone)]
pub struct DistilledField {
    dim: usize,
    levels: Vec<Level>,
    bounds: ([f64; 3], [f64; 3]),
}

impl DistilledField {
    /// Empty field. Voxel sizes must be positive and strictly decreasing.
    pub fn new(dim: usize, voxel_sizes: &[f64], bounds: ([f64; 3], [f64; 3])) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("field dimension must be >= 1".into()));
        }
        if voxel_sizes.is_empty() {
            return Err(Error::InvalidConfig(
                "field needs at least one level".into(),
            ));
        }
        if voxel_sizes.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidConfig(format!(
                "voxel sizes must be positive and finite: {voxel_sizes:?}"
            )));
        }
        if voxel_sizes.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidConfig(format!(
                "voxel sizes must strictly decrease (coarse to fine): {voxel_sizes:?}"
            )));
        }
        Ok(Self {
            dim,
            levels: voxel_sizes.iter().map(|&s| Level::new(s)).collect(),
            bounds,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn levels(&self) -> &[Level] {
        &self.levels
    }

    pub fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        self.bounds
    }

    pub fn voxel_sizes(&self) -> Vec<f64> {
        self.levels.iter().map(|l| l.voxel_size).collect()
    }

    pub fn num_cells(&self) -> usize {
        self.levels.iter().map(Level::num_cells).sum()
    }

    pub fn cell(&self, level: usize, key: CellKey) -> Option<&[f32]> {
        let l = &self.levels[level];
        l.slot(&key)
            .map(|s| &l.values[s * self.dim..(s + 1) * self.dim])
    }

    pub fn slot_values(&self, level: usize, slot: usize) -> &[f32] {
        &self.levels[level].values[slot * self.dim..(slot + 1) * self.dim]
    }

    pub fn slot_values_mut(&mut self, level: usize, slot: usize) -> &mut [f32] {
        let d = self.dim;
        &mut self.levels[level].values[slot * d..(slot + 1) * d]
    }

    /// Slot of `key`, creating the cell with `init` if absent. Returns
    /// `(slot, created)`.
    pub fn ensure_cell(
        &mut self,
        level: usize,
        key: CellKey,
        init: impl FnOnce(&mut [f32]),
    ) -> (usize, bool) {
        let dim = self.dim;
        let l = &mut self.levels[level];
        if let Some(s) = l.slot(&key) {
            return (s, false);
        }
        let s = l.keys.len();
        l.slots.insert(key, s as u32);
        l.keys.push(key);
        l.values.resize(l.values.len() + dim, 0.0);
        init(&mut l.values[s * dim..(s + 1) * dim]);
        (s, true)
    }

    pub fn set_cell(&mut self, level: usize, key: CellKey, values: &[f32]) -> Result<()> {
        if values.len() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                found: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("cell values must be finite".into()));
        }
        let (s, _) = self.ensure_cell(level, key, |_| {});
        self.slot_values_mut(level, s).copy_from_slice(values);
        Ok(())
    }

    /// Adds the field value at `p` into `out` (f64 accumulation).
    pub fn accumulate_at(&self, p: [f64; 3], out: &mut [f64]) {
        for level in &self.levels {
            for (key, w) in stencil(p, level.voxel_size) {
                if w == 0.0 {
                    continue;
                }
                if let Some(s) = level.slot(&key) {
                    let vals = &level.values[s * self.dim..(s + 1) * self.dim];
                    for (o, &v) in out.iter_mut().zip(vals) {
                        *o += w * v as f64;
                    }
                }
            }
        }
    }

    pub fn eval_point(&self, p: [f64; 3]) -> Vec<f32> {
        let mut acc = vec![0.0f64; self.dim];
        self.accumulate_at(p, &mut acc);
        acc.into_iter().map(|v| v as f32).collect()
    }

    pub fn eval(&self, positions: &[[f64; 3]]) -> FeatureMatrix {
        let mut data = Vec::with_capacity(positions.len() * self.dim);
        let mut acc = vec![0.0f64; self.dim];
        for &p in positions {
            acc.iter_mut().for_each(|a| *a = 0.0);
            self.accumulate_at(p, &mut acc);
            data.extend(acc.iter().map(|&v| v as f32));
        }
        FeatureMatrix::new(positions.len(), self.dim, data).expect("consistent shape")
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = FieldHeader {
            dim: self.dim,
            bounds: Bounds {
                min: self.bounds.0,
                max: self.bounds.1,
            },
            levels: self
                .levels
                .iter()
                .map(|l| LevelHeader {
                    voxel_size: l.voxel_size,
                    num_cells: l.num_cells(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(&FIELD_MAGIC);
        out.extend_from_slice(&FIELD_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (li, level) in self.levels.iter().enumerate() {
            let order = level.sorted_slots();
            for &s in &order {
                for c in level.keys[s] {
                    out.extend_from_slice(&c.to_le_bytes());
                }
            }
            for &s in &order {
                for v in self.slot_values(li, s) {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |d: String| Error::malformed("field file", d);
        if bytes.len() < 16 {
            return Err(bad("file shorter than the fixed header".into()));
        }
        if bytes[0..4] != FIELD_MAGIC {
            let mut found = [0u8; 4];
            found.copy_from_slice(&bytes[0..4]);
            return Err(bad(format!("bad magic {found:?}")));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != FIELD_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let hend = usize::try_from(hlen)
            .ok()
            .and_then(|h| h.checked_add(16))
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad("header length exceeds file".into()))?;
        let header: FieldHeader =
            serde_json::from_slice(&bytes[16..hend]).map_err(|e| bad(e.to_string()))?;
        let sizes: Vec<f64> = header.levels.iter().map(|l| l.voxel_size).collect();
        let mut field =
            DistilledField::new(header.dim, &sizes, (header.bounds.min, header.bounds.max))?;
        let mut pos = hend;
        for (li, lh) in header.levels.iter().enumerate() {
            let n = lh.num_cells;
            let need = n
                .checked_mul(12)
                .and_then(|k| n.checked_mul(4 * header.dim).and_then(|v| k.checked_add(v)))
                .ok_or_else(|| bad("cell count overflow".into()))?;
            if bytes.len() - pos < need {
                return Err(Error::TruncatedPayload {
                    expected: need as u64,
                    actual: (bytes.len() - pos) as u64,
                });
            }
            let keys: Vec<CellKey> = bytes[pos..pos + 12 * n]
                .chunks_exact(12)
                .map(|c| {
                    [
                        i32::from_le_bytes(c[0..4].try_into().unwrap()),
                        i32::from_le_bytes(c[4..8].try_into().unwrap()),
                        i32::from_le_bytes(c[8..12].try_into().unwrap()),
                    ]
                })
                .collect();
            pos += 12 * n;
            let vals: Vec<f32> = bytes[pos..pos + 4 * n * header.dim]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            pos += 4 * n * header.dim;
            for (i, key) in keys.into_iter().enumerate() {
                if field.cell(li, key).is_some() {
                    return Err(bad(format!("duplicate cell {key:?} in level {li}")));
                }
                field.set_cell(li, key, &vals[i * header.dim..(i + 1) * header.dim])?;
            }
        }
        if pos != bytes.len() {
            return Err(Error::TruncatedPayload {
                expected: pos as u64,
                actual: bytes.len() as u64,
            });
        }
        Ok(field)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Bit-level equality of structure and every stored value, independent of
/// insertion order.
impl PartialEq for DistilledField {
    fn eq(&self, other: &Self) -> bool {
        if self.dim != other.dim
            || self.bounds != other.bounds
            || self.levels.len() != other.levels.len()
        {
            return false;
        }
        self.levels.iter().enumerate().all(|(li, a)| {
            let b = &other.levels[li];
            a.voxel_size == b.voxel_size
                && a.num_cells() == b.num_cells()
                && a.keys.iter().enumerate().all(|(s, key)| match b.slot(key) {
                    Some(t) => self
                        .slot_values(li, s)
                        .iter()
                        .zip(other.slot_values(li, t))
                        .all(|(x, y)| x.to_bits() == y.to_bits()),
                    None => false,
                })
        })
    }
}

#[derive(Serialize, Deserialize)]
struct Bounds {
    min: [f64; 3],
    max: [f64; 3],
}

#[derive(Serialize, Deserialize)]
struct LevelHeader {
    voxel_size: f64,
    num_cells: usize,
}

#[derive(Serialize, Deserialize)]
struct FieldHeader {
    dim: usize,
    bounds: Bounds,
    levels: Vec<LevelHeader>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const B: ([f64; 3], [f64; 3]) = ([0.0; 3], [1.0; 3]);

    #[test]
    fn corner_query_returns_cell() {
        let mut f = DistilledField::new(2, &[0.5], B).unwrap();
        f.set_cell(0, [1, 2, 3], &[0.25, -1.0]).unwrap();
        assert_eq!(f.eval_point([0.5, 1.0, 1.5]), vec![0.25, -1.0]);
    }

    #[test]
    fn edge_midpoint_cancels() {
        let mut f = DistilledField::new(2, &[1.0], B).unwrap();
        f.set_cell(0, [0, 0, 0], &[1.0, 2.0]).unwrap();
        f.set_cell(0, [1, 0, 0], &[-1.0, -2.0]).unwrap();
        assert_eq!(f.eval_point([0.5, 0.0, 0.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn levels_add() {
        let mut f = DistilledField::new(1, &[1.0, 0.25], B).unwrap();
        f.set_cell(0, [1, 1, 1], &[2.0]).unwrap();
        f.set_cell(1, [4, 4, 4], &[0.5]).unwrap();
        assert_eq!(f.eval_point([1.0, 1.0, 1.0]), vec![2.5]);
    }

    #[test]
    fn level_sizes_must_decrease() {
        assert!(DistilledField::new(1, &[0.5, 0.5], B).is_err());
        assert!(DistilledField::new(1, &[0.1, 0.5], B).is_err());
        assert!(DistilledField::new(1, &[], B).is_err());
        assert!(DistilledField::new(1, &[-1.0], B).is_err());
    }

    #[test]
    fn stencil_weights_partition_unity() {
        let s = stencil([0.3, -1.7, 2.25], 0.4);
        let total: f64 = s.iter().map(|(_, w)| w).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(s.iter().all(|(_, w)| *w >= 0.0));
    }

    #[test]
    fn truncated_field_file_is_rejected() {
        let mut f = DistilledField::new(3, &[1.0], B).unwrap();
        f.set_cell(0, [0, 0, 0], &[1.0, 2.0, 3.0]).unwrap();
        let bytes = f.to_bytes();
        assert!(DistilledField::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(DistilledField::from_bytes(&bytes[..10]).is_err());
    }

    proptest! {
        #[test]
        fn serialization_round_trip(
            cells in prop::collection::vec(
                (0usize..2, prop::array::uniform3(-50i32..50), prop::array::uniform2(-10f32..10.0)),
                0..40,
            )
        ) {
            let mut f = DistilledField::new(2, &[0.5, 0.125], ([-1.0; 3], [2.0; 3])).unwrap();
            for (l, k, v) in cells {
                f.set_cell(l, k, &v).unwrap();
            }
            let bytes = f.to_bytes();
            let back = DistilledField::from_bytes(&bytes).unwrap();
            prop_assert_eq!(&back, &f);
            prop_assert_eq!(back.to_bytes(), bytes);
        }
    }
}
