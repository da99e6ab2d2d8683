use super::BinaryMask;

/// How the normalised boundary distance becomes a per-pixel weight `w = 1 + g`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum WeightMapMode {
    /// `g = 1 - d / d_max`: boundary pixels weigh 2, the farthest pixel weighs 1.
    #[default]
    Inverted,
    /// `g = d / d_max`: the distance itself, normalised to `[0, 1]`.
    Literal,
    /// `w ≡ 1`, i.e. plain cross-entropy.
    Uniform,
}

impl std::str::FromStr for WeightMapMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "inverted" => Ok(Self::Inverted),
            "literal" => Ok(Self::Literal),
            "uniform" => Ok(Self::Uniform),
            other => Err(format!(
                "unknown weight-map mode `{other}` (expected literal, inverted or uniform)"
            )),
        }
    }
}

impl std::fmt::Display for WeightMapMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Inverted => "inverted",
            Self::Literal => "literal",
            Self::Uniform => "uniform",
        })
    }
}

/// Per-pixel loss weights together with the distances they were derived from.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryWeightMap {
    height: usize,
    width: usize,
    /// Euclidean distance to the nearest boundary pixel (`inf` when the mask has no boundary).
    distance: Vec<f64>,
    /// Normalised boundary weight in `[0, 1]`.
    g: Vec<f64>,
    weights: Vec<f64>,
}

impl BoundaryWeightMap {
    /// Map with `w ≡ 1` and no distance information.
    pub fn uniform(height: usize, width: usize) -> Self {
        let n = height * width;
        BoundaryWeightMap {
            height,
            width,
            distance: vec![f64::INFINITY; n],
            g: vec![0.0; n],
            weights: vec![1.0; n],
        }
    }

    /// Rebuilds a map from cached weights; distances are not recoverable.
    pub fn from_weights(height: usize, width: usize, weights: Vec<f64>) -> Self {
        assert_eq!(weights.len(), height * width);
        BoundaryWeightMap {
            height,
            width,
            distance: vec![f64::NAN; weights.len()],
            g: weights.iter().map(|w| w - 1.0).collect(),
            weights,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn g(&self) -> &[f64] {
        &self.g
    }

    pub fn distances(&self) -> &[f64] {
        &self.distance
    }

    pub fn flip_horizontal(&self) -> Self {
        let flip = |v: &[f64]| -> Vec<f64> {
            v.chunks_exact(self.width)
                .flat_map(|row| row.iter().rev().copied())
                .collect()
        };
        BoundaryWeightMap {
            height: self.height,
            width: self.width,
            distance: flip(&self.distance),
            g: flip(&self.g),
            weights: flip(&self.weights),
        }
    }
}

fn boundary_flags(mask: &BinaryMask) -> Vec<bool> {
    let (h, w) = mask.dims();
    let mut flags = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            let v = mask.get(y, x);
            let differs = (y > 0 && mask.get(y - 1, x) != v)
                || (y + 1 < h && mask.get(y + 1, x) != v)
                || (x > 0 && mask.get(y, x - 1) != v)
                || (x + 1 < w && mask.get(y, x + 1) != v);
            flags[y * w + x] = differs;
        }
    }
    flags
}

/// Pixels whose 4-neighbourhood contains the opposite class, in row-major order.
///
/// Both sides of an edge are reported.
pub fn extract_boundary(mask: &BinaryMask) -> Vec<(usize, usize)> {
    let w = mask.width();
    boundary_flags(mask)
        .iter()
        .enumerate()
        .filter(|(_, &b)| b)
        .map(|(i, _)| (i / w, i % w))
        .collect()
}

/// Lower envelope of parabolas: `out[q] = min_p (q - p)² + f[p]` over finite `f[p]`.
fn squared_dt_1d(f: &[f64], out: &mut [f64], sites: &mut Vec<usize>, bounds: &mut Vec<f64>) {
    sites.clear();
    bounds.clear();
    for q in 0..f.len() {
        if !f[q].is_finite() {
            continue;
        }
        let fq = f[q] + (q * q) as f64;
        loop {
            let Some(&p) = sites.last() else {
                sites.push(q);
                bounds.push(f64::NEG_INFINITY);
                break;
            };
            let s = (fq - (f[p] + (p * p) as f64)) / (2 * (q - p)) as f64;
            if s <= *bounds.last().unwrap() {
                sites.pop();
                bounds.pop();
            } else {
                sites.push(q);
                bounds.push(s);
                break;
            }
        }
    }
    if sites.is_empty() {
        out.iter_mut().for_each(|v| *v = f64::INFINITY);
        return;
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while k + 1 < sites.len() && bounds[k + 1] < q as f64 {
            k += 1;
        }
        let p = sites[k];
        let d = q as f64 - p as f64;
        *o = d * d + f[p];
    }
}

/// Exact Euclidean distance from every pixel to the nearest boundary pixel,
/// via separable column/row lower-envelope passes. `inf` where no boundary exists.
pub fn distance_to_boundary(mask: &BinaryMask) -> Vec<f64> {
    let (h, w) = mask.dims();
    let flags = boundary_flags(mask);
    let mut sq: Vec<f64> = flags
        .iter()
        .map(|&b| if b { 0.0 } else { f64::INFINITY })
        .collect();
    let (mut sites, mut bounds) = (Vec::new(), Vec::new());

    let mut col = vec![0.0; h];
    let mut col_out = vec![0.0; h];
    for x in 0..w {
        for y in 0..h {
            col[y] = sq[y * w + x];
        }
        squared_dt_1d(&col, &mut col_out, &mut sites, &mut bounds);
        for y in 0..h {
            sq[y * w + x] = col_out[y];
        }
    }
    let mut row_out = vec![0.0; w];
    for y in 0..h {
        let row = &mut sq[y * w..(y + 1) * w];
        squared_dt_1d(row, &mut row_out, &mut sites, &mut bounds);
        row.copy_from_slice(&row_out);
    }
    sq.into_iter().map(f64::sqrt).collect()
}

/// Inverted-mode boundary weight map (boundary pixels weigh 2).
pub fn boundary_weight_map(mask: &BinaryMask) -> BoundaryWeightMap {
    boundary_weight_map_with(mask, WeightMapMode::Inverted)
}

pub fn boundary_weight_map_with(mask: &BinaryMask, mode: WeightMapMode) -> BoundaryWeightMap {
    let (h, w) = mask.dims();
    if mode == WeightMapMode::Uniform {
        return BoundaryWeightMap::uniform(h, w);
    }
    let distance = distance_to_boundary(mask);
    let d_max = distance.iter().copied().fold(0.0f64, f64::max);
    let g: Vec<f64> = if !d_max.is_finite() {
        // uniform mask: no boundary, no emphasis
        vec![0.0; distance.len()]
    } else if d_max == 0.0 {
        // every pixel sits on the boundary
        let v = if mode == WeightMapMode::Inverted { 1.0 } else { 0.0 };
        vec![v; distance.len()]
    } else {
        distance
            .iter()
            .map(|&d| match mode {
                WeightMapMode::Literal => d / d_max,
                _ => 1.0 - d / d_max,
            })
            .collect()
    };
    let weights = g.iter().map(|&g| 1.0 + g).collect();
    BoundaryWeightMap {
        height: h,
        width: w,
        distance,
        g,
        weights,
    }
}

/// Pixels within `radius` (Euclidean) of the mask boundary.
pub fn boundary_band(mask: &BinaryMask, radius: f64) -> BinaryMask {
    let (h, w) = mask.dims();
    let d = distance_to_boundary(mask);
    BinaryMask::from_fn(h, w, |y, x| d[y * w + x] <= radius)
}
