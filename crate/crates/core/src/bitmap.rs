//! Decay bitmaps: the set of flipped cell indices from one measurement.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Result of one decay measurement: which cells of a region flipped, plus
/// the measurement metadata (temperature, decay time, seed).
///
/// Invariants: `flipped` is strictly increasing and every index is below
/// `region_size_bits`. Only charged-polarity cells can appear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayBitmap {
    pub region_size_bits: u64,
    pub temp_c: f64,
    pub decay_time_s: f64,
    pub measurement_seed: u64,
    flipped: Vec<u64>,
}

impl DecayBitmap {
    /// Build from a sorted, strictly-increasing index list.
    pub fn new(
        region_size_bits: u64,
        temp_c: f64,
        decay_time_s: f64,
        measurement_seed: u64,
        flipped: Vec<u64>,
    ) -> Result<Self> {
        let bm = DecayBitmap {
            region_size_bits,
            temp_c,
            decay_time_s,
            measurement_seed,
            flipped,
        };
        bm.check()?;
        Ok(bm)
    }

    fn check(&self) -> Result<()> {
        for w in self.flipped.windows(2) {
            if w[0] >= w[1] {
                return Err(Error::Argument(
                    "bitmap indices must be strictly increasing".into(),
                ));
            }
        }
        if let Some(&last) = self.flipped.last() {
            if last >= self.region_size_bits {
                return Err(Error::Argument(format!(
                    "bitmap index {last} out of region of {} bits",
                    self.region_size_bits
                )));
            }
        }
        Ok(())
    }

    pub fn flipped(&self) -> &[u64] {
        &self.flipped
    }

    /// Number of flipped cells.
    pub fn count(&self) -> u64 {
        self.flipped.len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.flipped.is_empty()
    }

    pub fn contains(&self, index: u64) -> bool {
        self.flipped.binary_search(&index).is_ok()
    }

    /// Sorted-merge walk producing (intersection, union) sizes.
    pub fn intersection_union(&self, other: &DecayBitmap) -> (u64, u64) {
        let (a, b) = (&self.flipped, &other.flipped);
        let (mut i, mut j) = (0usize, 0usize);
        let mut inter = 0u64;
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    inter += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        let union = a.len() as u64 + b.len() as u64 - inter;
        (inter, union)
    }

    /// Indices flipped in `self` but not in `other`.
    pub fn difference(&self, other: &DecayBitmap) -> Vec<u64> {
        self.flipped
            .iter()
            .copied()
            .filter(|idx| !other.contains(*idx))
            .collect()
    }

    pub fn is_subset_of(&self, other: &DecayBitmap) -> bool {
        let (inter, _) = self.intersection_union(other);
        inter == self.count()
    }

    /// Binary serialization: u64 count followed by the u64 indices, all
    /// little-endian.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&(self.flipped.len() as u64).to_le_bytes())?;
        for idx in &self.flipped {
            w.write_all(&idx.to_le_bytes())?;
        }
        Ok(())
    }

    /// Inverse of [`write_binary`]; metadata must be supplied by the caller
    /// (the binary format carries indices only).
    pub fn read_binary<R: Read>(
        mut r: R,
        region_size_bits: u64,
        temp_c: f64,
        decay_time_s: f64,
        measurement_seed: u64,
    ) -> Result<Self> {
        let mut buf = [0u8; 8];
        r.read_exact(&mut buf)?;
        let count = u64::from_le_bytes(buf) as usize;
        let mut flipped = Vec::with_capacity(count.min(1 << 24));
        for _ in 0..count {
            r.read_exact(&mut buf)?;
            flipped.push(u64::from_le_bytes(buf));
        }
        DecayBitmap::new(region_size_bits, temp_c, decay_time_s, measurement_seed, flipped)
    }

    /// CSV form: a single `index` column.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index\n");
        for idx in &self.flipped {
            out.push_str(&idx.to_string());
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bm(indices: &[u64]) -> DecayBitmap {
        DecayBitmap::new(1024, 30.0, 60.0, 1, indices.to_vec()).unwrap()
    }

    #[test]
    fn rejects_unsorted_or_out_of_range() {
        assert!(DecayBitmap::new(16, 30.0, 60.0, 1, vec![3, 3]).is_err());
        assert!(DecayBitmap::new(16, 30.0, 60.0, 1, vec![5, 2]).is_err());
        assert!(DecayBitmap::new(16, 30.0, 60.0, 1, vec![16]).is_err());
    }

    #[test]
    fn set_ops() {
        let a = bm(&[1, 2, 3]);
        let b = bm(&[2, 3, 4]);
        assert_eq!(a.intersection_union(&b), (2, 4));
        assert_eq!(a.difference(&b), vec![1]);
        assert!(bm(&[2, 3]).is_subset_of(&a));
        assert!(!a.is_subset_of(&b));
        assert!(a.contains(2));
        assert!(!a.contains(9));
    }

    #[test]
    fn binary_round_trip() {
        let a = bm(&[0, 7, 500, 1023]);
        let mut buf = Vec::new();
        a.write_binary(&mut buf).unwrap();
        assert_eq!(buf.len(), 8 + 4 * 8);
        let back = DecayBitmap::read_binary(&buf[..], 1024, 30.0, 60.0, 1).unwrap();
        assert_eq!(back, a);
    }
}
