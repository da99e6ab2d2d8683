use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::loss::{boundary_weight_map_with, BinaryMask, BoundaryWeightMap, WeightMapMode};
use crate::tensor::Tensor;

use super::netpbm;
use super::{apply_augmentation, augment, gen_synthetic_portrait, Provenance, SampleRecord};

pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

/// The ids of one split, stored at `<root>/<split>/manifest.txt`.
///
/// Header lines look like `# seed=3`; everything else that is not blank is a sample id.
/// `seed` and `size` are absent for hand-assembled datasets.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub split: Split,
    pub ids: Vec<String>,
    pub seed: Option<u64>,
    pub size: Option<usize>,
}

impl DatasetManifest {
    pub fn split_dir(&self) -> PathBuf {
        self.root.join(self.split.as_str())
    }

    pub fn manifest_path(root: &Path, split: Split) -> PathBuf {
        root.join(split.as_str()).join(MANIFEST_FILE)
    }

    pub fn image_path(&self, id: &str) -> PathBuf {
        self.split_dir().join("img").join(format!("{id}.ppm"))
    }

    pub fn mask_path(&self, id: &str) -> PathBuf {
        self.split_dir().join("mask").join(format!("{id}.pgm"))
    }

    pub fn weight_path(&self, id: &str) -> PathBuf {
        self.split_dir().join("wmap").join(format!("{id}.wmap"))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        if let Some(seed) = self.seed {
            out.push_str(&format!("# seed={seed}\n"));
        }
        if let Some(size) = self.size {
            out.push_str(&format!("# size={size}\n"));
        }
        out.push_str(&format!("# split={}\n# resize=none\n", self.split));
        for id in &self.ids {
            out.push_str(id);
            out.push('\n');
        }
        out
    }

    pub fn save(&self) -> Result<()> {
        let path = Self::manifest_path(&self.root, self.split);
        std::fs::create_dir_all(self.split_dir()).map_err(|e| Error::io(self.split_dir(), e))?;
        std::fs::write(&path, self.to_text()).map_err(|e| Error::io(&path, e))
    }

    pub fn load(root: &Path, split: Split) -> Result<Self> {
        let path = Self::manifest_path(root, split);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Self::parse(&text, root, split, &path)
    }

    fn parse(text: &str, root: &Path, split: Split, path: &Path) -> Result<Self> {
        let mut m = DatasetManifest {
            root: root.to_path_buf(),
            split,
            ids: Vec::new(),
            seed: None,
            size: None,
        };
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let Some(header) = line.strip_prefix('#') else {
                m.ids.push(line.to_string());
                continue;
            };
            let Some((key, value)) = header.split_once('=') else {
                continue;
            };
            let (key, value) = (key.trim(), value.trim());
            let bad = |what: &str| Error::format(path, format!("bad {what} header `{value}`"));
            match key {
                "seed" => m.seed = Some(value.parse().map_err(|_| bad("seed"))?),
                "size" => m.size = Some(value.parse().map_err(|_| bad("size"))?),
                "split" if value != split.as_str() => {
                    return Err(Error::format(path, format!("manifest is for split `{value}`")));
                }
                "resize" if value != "none" => {
                    return Err(Error::Config(format!(
                        "resize policy `{value}` is reserved but not implemented"
                    )));
                }
                _ => {}
            }
        }
        Ok(m)
    }
}

/// Seed for sample `index` of `split`, derived from the dataset seed.
pub fn sample_seed(seed: u64, split: Split, index: usize) -> u64 {
    let lane = match split {
        Split::Train => 0x5452_4149_4e00_0000u64,
        Split::Test => 0x5445_5354_0000_0000u64,
    };
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ lane ^ index as u64
}

#[derive(Debug, Clone, Copy)]
pub struct GenOptions {
    pub seed: u64,
    pub size: usize,
    pub train: usize,
    pub test: usize,
}

impl Default for GenOptions {
    fn default() -> Self {
        GenOptions {
            seed: 0,
            size: 64,
            train: 200,
            test: 50,
        }
    }
}

/// Writes train and test splits under `root` and returns their manifests.
pub fn generate_dataset(root: &Path, opts: &GenOptions) -> Result<(DatasetManifest, DatasetManifest)> {
    let mut out = Vec::with_capacity(2);
    for (split, count) in [(Split::Train, opts.train), (Split::Test, opts.test)] {
        let manifest = DatasetManifest {
            root: root.to_path_buf(),
            split,
            ids: (0..count).map(|i| format!("{split}-{i:05}")).collect(),
            seed: Some(opts.seed),
            size: Some(opts.size),
        };
        for (i, id) in manifest.ids.iter().enumerate() {
            let rec = gen_synthetic_portrait(sample_seed(opts.seed, split, i), opts.size)?;
            netpbm::save_image(&manifest.image_path(id), &rec.image)?;
            netpbm::save_mask(&manifest.mask_path(id), &rec.mask)?;
            netpbm::save_weight_map(&manifest.weight_path(id), &rec.weights)?;
        }
        manifest.save()?;
        out.push(manifest);
    }
    let test = out.pop().unwrap();
    Ok((out.pop().unwrap(), test))
}

/// All samples of one split held in memory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub split: Split,
    pub samples: Vec<SampleRecord>,
}

impl Dataset {
    /// Loads every sample listed in `manifest`.
    ///
    /// Cached weight maps are used for the inverted mode when present; other
    /// modes, or a missing sidecar, recompute weights from the mask.
    pub fn load(manifest: &DatasetManifest, mode: WeightMapMode) -> Result<Self> {
        let missing: Vec<String> = manifest
            .ids
            .iter()
            .filter(|id| !manifest.image_path(id).is_file() || !manifest.mask_path(id).is_file())
            .cloned()
            .collect();
        if !missing.is_empty() {
            return Err(Error::MissingSamples(missing));
        }
        let mut samples = Vec::with_capacity(manifest.ids.len());
        for id in &manifest.ids {
            let image = netpbm::load_image(&manifest.image_path(id))?;
            let mask = netpbm::load_mask(&manifest.mask_path(id))?;
            if (image.height(), image.width()) != mask.dims() {
                return Err(Error::dim(
                    "height",
                    format!("sample {id}: image is {}x{}, mask is {:?}", image.height(), image.width(), mask.dims()),
                ));
            }
            if mask.height() % 8 != 0 || mask.width() % 8 != 0 {
                return Err(Error::dim("width", format!("sample {id}: sides must be multiples of 8")));
            }
            let wpath = manifest.weight_path(id);
            let weights = if mode == WeightMapMode::Inverted && wpath.is_file() {
                let w = netpbm::load_weight_map(&wpath)?;
                if (w.height(), w.width()) != mask.dims() {
                    return Err(Error::format(&wpath, "weight map size differs from mask"));
                }
                w
            } else {
                boundary_weight_map_with(&mask, mode)
            };
            samples.push(SampleRecord {
                id: id.clone(),
                image,
                mask,
                weights,
                provenance: Provenance::identity(),
            });
        }
        Ok(Dataset {
            split: manifest.split,
            samples,
        })
    }

    pub fn from_samples(split: Split, samples: Vec<SampleRecord>) -> Self {
        Dataset { split, samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Replaces every weight map with one computed in `mode`.
    pub fn recompute_weights(&mut self, mode: WeightMapMode) {
        for s in &mut self.samples {
            s.weights = boundary_weight_map_with(&s.mask, mode);
        }
    }
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub ids: Vec<String>,
    /// `(B, 3, H, W)`.
    pub images: Tensor<f64>,
    pub masks: Vec<BinaryMask>,
    pub weights: Vec<BoundaryWeightMap>,
    pub provenance: Vec<Provenance>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

pub struct BatchIter<'a> {
    dataset: &'a Dataset,
    order: Vec<usize>,
    pos: usize,
    batch_size: usize,
    rng: Option<ChaCha8Rng>,
}

/// Iterates over `dataset` in batches of `batch_size`; the last batch may be shorter.
///
/// With `shuffle_seed` the order is a seeded permutation, otherwise manifest order.
/// `train` enables on-the-fly augmentation, drawn from a stream tied to the same seed.
pub fn batch_iter(dataset: &Dataset, batch_size: usize, shuffle_seed: Option<u64>, train: bool) -> Result<BatchIter<'_>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    if let Some(seed) = shuffle_seed {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    let rng = train.then(|| ChaCha8Rng::seed_from_u64(shuffle_seed.unwrap_or(0) ^ 0xA076_1D64_78BD_642F));
    Ok(BatchIter {
        dataset,
        order,
        pos: 0,
        batch_size,
        rng,
    })
}

impl Iterator for BatchIter<'_> {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let picked = &self.order[self.pos..end];
        self.pos = end;
        let mut ids = Vec::with_capacity(picked.len());
        let mut images = Vec::with_capacity(picked.len());
        let mut masks = Vec::with_capacity(picked.len());
        let mut weights = Vec::with_capacity(picked.len());
        let mut provenance = Vec::with_capacity(picked.len());
        for &i in picked {
            let base = &self.dataset.samples[i];
            let rec = match self.rng.as_mut() {
                Some(rng) => augment(base, rng),
                None => apply_augmentation(base, Provenance::identity()),
            };
            ids.push(rec.id);
            images.push(rec.image);
            masks.push(rec.mask);
            weights.push(rec.weights);
            provenance.push(rec.provenance);
        }
        Some(Tensor::stack(&images).map(|images| Batch {
            ids,
            images,
            masks,
            weights,
            provenance,
        }))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = (self.order.len() - self.pos).div_ceil(self.batch_size);
        (n, Some(n))
    }
}
