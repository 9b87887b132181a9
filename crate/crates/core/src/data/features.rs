//! Region feature store and its binary file format.
//!
//! Layout (little-endian): magic `VDF1`, `u32 d_img`, `u32 image_count`,
//! then per image `u64 image_id`, `u16 K`, and `K * d_img` f32 values
//! row-major. Values are widened to f64 on load.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dialog::Dataset;
use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"VDF1";

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectFeatureSet {
    pub image_id: u64,
    pub d_img: usize,
    /// `K x d_img`, row-major.
    pub features: Vec<f64>,
}

impl ObjectFeatureSet {
    pub fn num_regions(&self) -> usize {
        self.features.len().checked_div(self.d_img).unwrap_or(0)
    }

    pub fn region(&self, k: usize) -> &[f64] {
        &self.features[k * self.d_img..(k + 1) * self.d_img]
    }
}

/// Allowed range for the number of regions per image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionBounds {
    pub min: usize,
    pub max: usize,
}

impl Default for RegionBounds {
    fn default() -> Self {
        RegionBounds { min: 1, max: 100 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStore {
    pub d_img: usize,
    sets: BTreeMap<u64, ObjectFeatureSet>,
}

impl FeatureStore {
    pub fn new(d_img: usize) -> Self {
        FeatureStore {
            d_img,
            sets: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, set: ObjectFeatureSet) -> Result<()> {
        if set.d_img != self.d_img || !set.features.len().is_multiple_of(self.d_img.max(1)) {
            return Err(Error::shape(format!(
                "image {} has width {}, store expects {}",
                set.image_id, set.d_img, self.d_img
            )));
        }
        if set.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::FeatureNonFinite(set.image_id));
        }
        self.sets.insert(set.image_id, set);
        Ok(())
    }

    pub fn get(&self, image_id: u64) -> Result<&ObjectFeatureSet> {
        self.sets.get(&image_id).ok_or(Error::FeatureMiss(image_id))
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ObjectFeatureSet> {
        self.sets.values()
    }

    /// Every image referenced by `dataset` must be present.
    pub fn check_pairing(&self, dataset: &Dataset) -> Result<()> {
        for d in &dataset.dialogs {
            self.get(d.image_id)?;
        }
        Ok(())
    }

    /// Writes the binary layout. Values are narrowed to f32.
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(FEATURE_MAGIC)?;
        w.write_all(&(self.d_img as u32).to_le_bytes())?;
        w.write_all(&(self.sets.len() as u32).to_le_bytes())?;
        for set in self.sets.values() {
            let k = u16::try_from(set.num_regions())
                .map_err(|_| Error::FeatureCount(set.image_id))?;
            w.write_all(&set.image_id.to_le_bytes())?;
            w.write_all(&k.to_le_bytes())?;
            for &v in &set.features {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(mut r: R, bounds: RegionBounds) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic)?;
        if &magic != FEATURE_MAGIC {
            return Err(Error::FeatureMagic);
        }
        let d_img = read_u32(&mut r)? as usize;
        let count = read_u32(&mut r)?;
        let mut store = FeatureStore::new(d_img);
        for _ in 0..count {
            let image_id = read_u64(&mut r)?;
            let k = read_u16(&mut r)? as usize;
            if k < bounds.min || k > bounds.max {
                return Err(Error::FeatureCount(image_id));
            }
            let mut raw = vec![0u8; k * d_img * 4];
            read_exact(&mut r, &mut raw)?;
            let features = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
                .collect();
            store.insert(ObjectFeatureSet {
                image_id,
                d_img,
                features,
            })?;
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write(std::io::BufWriter::new(std::fs::File::create(path)?))
    }
}

/// Loads a feature file, enforcing `bounds` on every image's region count.
pub fn load_features(path: &Path, bounds: RegionBounds) -> Result<FeatureStore> {
    FeatureStore::read(std::io::BufReader::new(std::fs::File::open(path)?), bounds)
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::FeatureTruncated,
        _ => Error::Io(e),
    })
}

fn read_u16<R: Read>(r: &mut R) -> Result<u16> {
    let mut b = [0u8; 2];
    read_exact(r, &mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn store_with(k: usize, d: usize) -> FeatureStore {
        let mut s = FeatureStore::new(d);
        s.insert(ObjectFeatureSet {
            image_id: 77,
            d_img: d,
            features: (0..k * d).map(|i| i as f64 * 0.5 - 3.0).collect(),
        })
        .unwrap();
        s
    }

    fn bytes(s: &FeatureStore) -> Vec<u8> {
        let mut buf = Vec::new();
        s.write(&mut buf).unwrap();
        buf
    }

    #[test]
    fn single_image_file() {
        let buf = bytes(&store_with(10, 4));
        assert_eq!(&buf[..4], b"VDF1");
        assert_eq!(buf.len(), 4 + 4 + 4 + 8 + 2 + 10 * 4 * 4);
        let s = FeatureStore::read(&buf[..], RegionBounds { min: 10, max: 100 }).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.get(77).unwrap().num_regions(), 10);
    }

    #[test]
    fn region_count_out_of_bounds() {
        let buf = bytes(&store_with(101, 2));
        let err = FeatureStore::read(&buf[..], RegionBounds { min: 10, max: 100 }).unwrap_err();
        assert_eq!(err.to_string(), "feature-count:77");
    }

    #[test]
    fn truncated_and_bad_magic() {
        let buf = bytes(&store_with(3, 2));
        for cut in [2, 10, 20, buf.len() - 1] {
            let err = FeatureStore::read(&buf[..cut], RegionBounds::default()).unwrap_err();
            assert!(matches!(err, Error::FeatureTruncated), "cut {cut}: {err}");
        }
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(FeatureStore::read(&bad[..], RegionBounds::default()), Err(Error::FeatureMagic)));
    }

    #[test]
    fn missing_image_is_reported() {
        let s = store_with(3, 2);
        assert_eq!(s.get(5).unwrap_err().to_string(), "feature-miss:5");
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_identical(
            images in prop::collection::vec((any::<u64>(), 1usize..6), 1..5),
            d in 1usize..5,
            seed in any::<u32>(),
        ) {
            let mut s = FeatureStore::new(d);
            for (n, (id, k)) in images.iter().enumerate() {
                let features = (0..k * d)
                    .map(|i| (((seed as usize + i * 31 + n) % 1000) as f32 / 7.0 - 50.0) as f64)
                    .collect();
                s.insert(ObjectFeatureSet { image_id: *id, d_img: d, features }).unwrap();
            }
            let back = FeatureStore::read(&bytes(&s)[..], RegionBounds { min: 1, max: 10 }).unwrap();
            prop_assert_eq!(back, s);
        }
    }
}
