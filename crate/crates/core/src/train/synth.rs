//! Synthetic segmentation data: one soft-intensity ellipsoid per foreground
//! class on a noisy background.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::volume::Volume;
use crate::error::{Error, Result};
use crate::loss::LabelVolume;

const MAX_ATTEMPTS: usize = 64;

/// One image/label pair.
#[derive(Clone, Debug, PartialEq)]
pub struct Case {
    pub id: String,
    /// `[C, D, H, W]`
    pub image: Volume,
    /// `D * H * W` class ids.
    pub labels: Vec<u32>,
}

impl Case {
    pub fn spatial(&self) -> [usize; 3] {
        self.image.spatial()
    }

    pub fn label_volume(&self, num_classes: usize) -> Result<LabelVolume> {
        let [d, h, w] = self.spatial();
        LabelVolume::new([1, d, h, w], self.labels.clone(), num_classes)
    }
}

fn default_noise() -> f64 {
    0.1
}

fn default_spacing() -> [f64; 3] {
    [1.0; 3]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub cases: usize,
    pub dims: [usize; 3],
    pub num_classes: usize,
    pub in_channels: usize,
    #[serde(default = "default_noise")]
    pub noise: f64,
    #[serde(default = "default_spacing")]
    pub spacing: [f64; 3],
}

/// Deterministic dataset for `seed`. Each foreground class is re-placed
/// until it owns at least a few voxels not covered by earlier classes.
pub fn generate_synthetic(seed: u64, spec: &SynthSpec) -> Result<Vec<Case>> {
    if spec.num_classes < 2 || spec.in_channels == 0 || spec.dims.contains(&0) || !(spec.noise >= 0.0) {
        return Err(Error::invalid("synth", format!("unusable spec {spec:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, spec.noise).map_err(|e| Error::invalid("synth", e.to_string()))?;
    let [d, h, w] = spec.dims;
    let v = d * h * w;
    let k = spec.num_classes;
    (0..spec.cases)
        .map(|ci| {
            let mut labels = vec![0u32; v];
            let mut shade = vec![0.0f32; v];
            for c in 1..k as u32 {
                let level = 0.4 + 0.6 * (c as f64) / (k - 1) as f64;
                let min_voxels = (v / (16 * k)).max(1);
                for attempt in 0..MAX_ATTEMPTS {
                    let radius: [f64; 3] = std::array::from_fn(|a| {
                        let e = spec.dims[a] as f64;
                        (rng.random_range(0.15..0.35) * e).max(0.75)
                    });
                    let center: [f64; 3] = std::array::from_fn(|a| {
                        let e = spec.dims[a] as f64;
                        let lo = radius[a].min(e / 2.0);
                        rng.random_range(lo - 0.5..=e - lo - 0.5)
                    });
                    let mut owned = Vec::new();
                    for z in 0..d {
                        for y in 0..h {
                            for x in 0..w {
                                let p = [z as f64, y as f64, x as f64];
                                let r2: f64 = (0..3).map(|a| ((p[a] - center[a]) / radius[a]).powi(2)).sum();
                                let i = (z * h + y) * w + x;
                                if r2 <= 1.0 && labels[i] == 0 {
                                    owned.push((i, r2));
                                }
                            }
                        }
                    }
                    if owned.len() >= min_voxels || attempt + 1 == MAX_ATTEMPTS {
                        for (i, r2) in owned {
                            labels[i] = c;
                            shade[i] = (level * (1.0 - 0.3 * r2)) as f32;
                        }
                        break;
                    }
                }
            }
            let chans = spec.in_channels;
            let mut data = Vec::with_capacity(chans * v);
            for ch in 0..chans {
                let gain = 1.0 / (1.0 + ch as f32);
                data.extend(shade.iter().map(|&s| s * gain + noise.sample(&mut rng) as f32));
            }
            Ok(Case {
                id: format!("case_{ci:03}"),
                image: Volume::new([chans, d, h, w], spec.spacing, data)?,
                labels,
            })
        })
        .collect()
}

fn image_path(dir: &Path, id: &str) -> std::path::PathBuf {
    dir.join(format!("{id}_image.phvol"))
}

fn label_path(dir: &Path, id: &str) -> std::path::PathBuf {
    dir.join(format!("{id}_label.phvol"))
}

/// Writes `<id>_image.phvol` and `<id>_label.phvol` per case.
pub fn save_dataset(dir: &Path, cases: &[Case]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for c in cases {
        c.image.save(&image_path(dir, &c.id))?;
        let [d, h, w] = c.spatial();
        let lab = Volume::new([1, d, h, w], c.image.spacing, c.labels.iter().map(|&l| l as f32).collect())?;
        lab.save(&label_path(dir, &c.id))?;
    }
    Ok(())
}

/// Loads every `<id>_image.phvol` with its label file, sorted by id.
pub fn load_dataset(dir: &Path) -> Result<Vec<Case>> {
    let mut ids: Vec<String> = std::fs::read_dir(dir)
        .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().to_str().and_then(|n| n.strip_suffix("_image.phvol")).map(str::to_string))
        .collect();
    ids.sort();
    if ids.is_empty() {
        return Err(Error::Format(format!("no *_image.phvol files in {}", dir.display())));
    }
    ids.into_iter()
        .map(|id| {
            let image = Volume::load(&image_path(dir, &id))?;
            let lab = Volume::load(&label_path(dir, &id))?;
            if lab.dims != [1, image.dims[1], image.dims[2], image.dims[3]] {
                return Err(Error::Format(format!("{id}: label dims {:?} vs image {:?}", lab.dims, image.dims)));
            }
            let labels = lab
                .data
                .iter()
                .map(|&x| {
                    if x >= 0.0 && x.fract() == 0.0 && x < u32::MAX as f32 {
                        Ok(x as u32)
                    } else {
                        Err(Error::Format(format!("{id}: label value {x} is not a class id")))
                    }
                })
                .collect::<Result<_>>()?;
            Ok(Case { id, image, labels })
        })
        .collect()
}
