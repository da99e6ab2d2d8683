//! Sample generation, augmentation, on-disk formats and batching.

mod dataset;
pub mod netpbm;
mod synth;

use rand::Rng;

use crate::loss::{BinaryMask, BoundaryWeightMap};
use crate::tensor::Tensor;

pub use dataset::{
    batch_iter, generate_dataset, sample_seed, Batch, BatchIter, Dataset, DatasetManifest, GenOptions, Split,
};
pub use netpbm::{load_image, load_mask, load_weight_map, save_image, save_mask, save_weight_map};
pub use synth::{gen_synthetic_portrait, MAX_FOREGROUND, MIN_FOREGROUND};

/// Range of the contrast and brightness factors drawn by [`augment`].
pub const PHOTOMETRIC_RANGE: (f64, f64) = (0.8, 1.2);

/// The augmentation applied to a base sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Provenance {
    pub flipped: bool,
    pub contrast: f64,
    pub brightness: f64,
}

impl Provenance {
    pub fn identity() -> Self {
        Provenance {
            flipped: false,
            contrast: 1.0,
            brightness: 1.0,
        }
    }
}

impl Default for Provenance {
    fn default() -> Self {
        Self::identity()
    }
}

#[derive(Debug, Clone)]
pub struct SampleRecord {
    pub id: String,
    /// `(1, 3, H, W)` in `[0, 1]`.
    pub image: Tensor<f64>,
    pub mask: BinaryMask,
    pub weights: BoundaryWeightMap,
    pub provenance: Provenance,
}

impl SampleRecord {
    pub fn height(&self) -> usize {
        self.mask.height()
    }

    pub fn width(&self) -> usize {
        self.mask.width()
    }
}

fn flip_image(image: &Tensor<f64>) -> Tensor<f64> {
    let [n, c, h, w] = image.shape();
    Tensor::from_fn([n, c, h, w], |[b, ch, y, x]| image.at(b, ch, y, w - 1 - x))
}

/// Applies a fixed augmentation to `record`.
///
/// The flip acts on image, mask and weights together; the photometric map
/// `v' = clamp(fc * (v - 0.5) + 0.5 + (fb - 1), 0, 1)` only touches the image.
pub fn apply_augmentation(record: &SampleRecord, p: Provenance) -> SampleRecord {
    let (image, mask, weights) = if p.flipped {
        (
            flip_image(&record.image),
            record.mask.flip_horizontal(),
            record.weights.flip_horizontal(),
        )
    } else {
        (record.image.clone(), record.mask.clone(), record.weights.clone())
    };
    let image = if p.contrast == 1.0 && p.brightness == 1.0 {
        image
    } else {
        image.map(|v| (p.contrast * (v - 0.5) + 0.5 + (p.brightness - 1.0)).clamp(0.0, 1.0))
    };
    SampleRecord {
        id: record.id.clone(),
        image,
        mask,
        weights,
        provenance: p,
    }
}

/// Draws a flip (p = 0.5) and contrast/brightness factors in `[0.8, 1.2]`, then applies them.
pub fn augment<R: Rng + ?Sized>(record: &SampleRecord, rng: &mut R) -> SampleRecord {
    let (lo, hi) = PHOTOMETRIC_RANGE;
    let p = Provenance {
        flipped: rng.random_bool(0.5),
        contrast: rng.random_range(lo..=hi),
        brightness: rng.random_range(lo..=hi),
    };
    apply_augmentation(record, p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::{boundary_weight_map, miou};
    use rand::SeedableRng;

    fn flip_only() -> Provenance {
        Provenance {
            flipped: true,
            ..Provenance::identity()
        }
    }

    #[test]
    fn double_flip_is_identity() {
        let r = gen_synthetic_portrait(3, 32).unwrap();
        let twice = apply_augmentation(&apply_augmentation(&r, flip_only()), flip_only());
        assert_eq!(twice.image.data(), r.image.data());
        assert_eq!(twice.mask, r.mask);
    }

    #[test]
    fn identity_factors_leave_pixels() {
        let r = gen_synthetic_portrait(4, 32).unwrap();
        let a = apply_augmentation(&r, Provenance::identity());
        assert_eq!(a.image.data(), r.image.data());
    }

    #[test]
    fn flip_commutes_with_weight_map() {
        let r = gen_synthetic_portrait(5, 32).unwrap();
        let a = apply_augmentation(&r, flip_only());
        assert_eq!(boundary_weight_map(&a.mask).weights(), a.weights.weights());
        assert_eq!(miou(&[a.mask.clone()], &[a.mask.clone()], 2).unwrap(), 100.0);
    }

    #[test]
    fn augment_records_factors() {
        let r = gen_synthetic_portrait(6, 32).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            let a = augment(&r, &mut rng);
            assert!((0.8..=1.2).contains(&a.provenance.contrast));
            assert!((0.8..=1.2).contains(&a.provenance.brightness));
            assert_eq!(a.mask, if a.provenance.flipped { r.mask.flip_horizontal() } else { r.mask.clone() });
            let again = apply_augmentation(&r, a.provenance);
            assert_eq!(again.image.data(), a.image.data());
        }
    }
}
