//! Seeded synthetic image classification data.
//!
//! Each class owns a fixed archetype: per channel, a sum of two plane waves
//! with random integer frequencies and phases. A sample is its class
//! archetype plus Gaussian pixel noise. On disk a dataset is a directory
//! holding `meta.json`, `images.bin` (`f32` LE, `[n, 3, R, R]`) and
//! `labels.bin` (`u32` LE).

use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, SplitMix64, Tensor};

pub const CHANNELS: usize = 3;
/// Standard deviation of the per-pixel noise.
pub const NOISE_STD: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub n: usize,
    pub k: usize,
    pub resolution: usize,
    pub channels: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    /// `[n, 3, R, R]`.
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
}

struct Wave {
    fy: f64,
    fx: f64,
    phase: f64,
    amp: f64,
}

fn archetype(r: usize, rng: &mut SplitMix64) -> Vec<f32> {
    let mut img = Vec::with_capacity(CHANNELS * r * r);
    for _ in 0..CHANNELS {
        let waves: Vec<Wave> = (0..2)
            .map(|_| Wave {
                fy: (1 + rng.below(4)) as f64,
                fx: (1 + rng.below(4)) as f64,
                phase: rng.uniform(0.0, TAU),
                amp: rng.uniform(0.5, 1.0),
            })
            .collect();
        for y in 0..r {
            for x in 0..r {
                let (u, v) = (y as f64 / r as f64, x as f64 / r as f64);
                let val: f64 = waves
                    .iter()
                    .map(|w| w.amp * (TAU * (w.fy * u + w.fx * v) + w.phase).sin())
                    .sum();
                img.push(val as f32);
            }
        }
    }
    img
}

/// `n` samples over `k` classes at side `r`, balanced to within one per
/// class and fully determined by `seed`.
pub fn generate(seed: u64, k: usize, n: usize, r: usize) -> Result<Dataset> {
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 classes, got {k}")));
    }
    if n < k {
        return Err(Error::Config(format!("{n} samples cannot cover {k} classes")));
    }
    if r == 0 {
        return Err(Error::Config("resolution must be positive".into()));
    }
    let mut arch_rng = SplitMix64::derive(seed, 0);
    let archetypes: Vec<Vec<f32>> = (0..k).map(|_| archetype(r, &mut arch_rng)).collect();
    let mut labels: Vec<usize> = (0..n).map(|i| i % k).collect();
    SplitMix64::derive(seed, 1).shuffle(&mut labels);
    let mut noise = SplitMix64::derive(seed, 2);
    let per = CHANNELS * r * r;
    let mut data = Vec::with_capacity(n * per);
    for &l in &labels {
        data.extend(archetypes[l].iter().map(|&a| a + (NOISE_STD * noise.normal()) as f32));
    }
    Ok(Dataset {
        meta: DatasetMeta {
            n,
            k,
            resolution: r,
            channels: CHANNELS,
            seed,
        },
        images: Tensor::new([n, CHANNELS, r, r], data)?,
        labels,
    })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.meta.k];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Images and labels at `indices`, cast to `T`.
    pub fn batch<T: Scalar>(&self, indices: &[usize]) -> (Tensor<T>, Vec<usize>) {
        let r = self.meta.resolution;
        let per = self.meta.channels * r * r;
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            data.extend(self.images.data()[i * per..(i + 1) * per].iter().map(|&v| T::from_f64(v as f64)));
        }
        let images = Tensor::new([indices.len(), self.meta.channels, r, r], data).expect("batch shape");
        (images, indices.iter().map(|&i| self.labels[i]).collect())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, bytes: Vec<u8>| {
            let p = dir.join(name);
            fs::write(&p, bytes).map_err(|e| Error::io(&p, e))
        };
        let meta = serde_json::to_string_pretty(&self.meta).expect("meta serialises") + "\n";
        write("meta.json", meta.into_bytes())?;
        write("images.bin", self.images.data().iter().flat_map(|v| v.to_le_bytes()).collect())?;
        write("labels.bin", self.labels.iter().flat_map(|&l| (l as u32).to_le_bytes()).collect())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| {
            let p = dir.join(name);
            fs::read(&p).map_err(|e| Error::io(&p, e))
        };
        let mpath = dir.join("meta.json");
        let meta: DatasetMeta = serde_json::from_slice(&read("meta.json")?).map_err(|e| Error::Parse {
            path: mpath.clone(),
            message: format!("line {} column {}: {e}", e.line(), e.column()),
        })?;
        let per = meta.channels * meta.resolution * meta.resolution;
        let bad = |what: &str, expected: usize, found: usize| Error::Parse {
            path: dir.join(what),
            message: format!("expected {expected} bytes, found {found}"),
        };
        let img = read("images.bin")?;
        if img.len() != meta.n * per * 4 {
            return Err(bad("images.bin", meta.n * per * 4, img.len()));
        }
        let lab = read("labels.bin")?;
        if lab.len() != meta.n * 4 {
            return Err(bad("labels.bin", meta.n * 4, lab.len()));
        }
        let labels: Vec<usize> = lab
            .chunks_exact(4)
            .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
            .collect();
        if let Some(l) = labels.iter().find(|&&l| l >= meta.k) {
            return Err(Error::Parse {
                path: dir.join("labels.bin"),
                message: format!("label {l} outside [0, {})", meta.k),
            });
        }
        let data = img
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        let images = Tensor::new([meta.n, meta.channels, meta.resolution, meta.resolution], data)?;
        Ok(Self { meta, images, labels })
    }
}
