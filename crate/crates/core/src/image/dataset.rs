use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;

use super::filter::decompose_label;
use super::io::load_image;
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::scalar::Scalar;
use crate::seed;
use crate::tensor::Tensor;

/// Ordered `(rainy, clean)` image pairs.
///
/// On disk: UTF-8, one `rainy_path<TAB>clean_path` entry per line, `#`
/// comments and blank lines ignored. Relative paths are resolved against the
/// manifest's directory.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<(PathBuf, PathBuf)>,
}

impl DatasetManifest {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let mut parts = line.split('\t');
            let (Some(rainy), Some(clean), None) = (parts.next(), parts.next(), parts.next())
            else {
                return Err(Error::Config(format!(
                    "manifest line {}: expected `rainy<TAB>clean`",
                    lineno + 1
                )));
            };
            let resolve = |p: &str| {
                let p = Path::new(p.trim());
                if p.is_absolute() {
                    p.to_path_buf()
                } else {
                    base.join(p)
                }
            };
            entries.push((resolve(rainy), resolve(clean)));
        }
        Ok(DatasetManifest { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::parse(&text, base)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# rainy\tclean\n");
        for (r, c) in &self.entries {
            let _ = writeln!(s, "{}\t{}", r.display(), c.display());
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_text().as_bytes())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Fails on the first referenced file that does not exist.
    pub fn check_files(&self) -> Result<()> {
        for (r, c) in &self.entries {
            for p in [r, c] {
                if !p.is_file() {
                    return Err(Error::io(
                        p,
                        std::io::Error::new(
                            std::io::ErrorKind::NotFound,
                            "listed in manifest but missing",
                        ),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Rainy input plus the clean target and its decomposed labels, all
/// `3 x H x W`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSample<T> {
    pub rainy: Tensor<T>,
    pub clean: Tensor<T>,
    pub structure: Tensor<T>,
    /// Signed: `clean - structure`.
    pub detail: Tensor<T>,
}

/// One loaded pair with its label decomposition computed on the full image.
#[derive(Clone, Debug)]
pub struct LoadedPair<T> {
    pub rainy_path: PathBuf,
    pub clean_path: PathBuf,
    pub sample: TrainingSample<T>,
}

/// Manifest images held in memory.
#[derive(Clone, Debug)]
pub struct Dataset<T> {
    pub pairs: Vec<LoadedPair<T>>,
}

fn crop<T: Scalar>(t: &Tensor<T>, y: usize, x: usize, size: usize) -> Tensor<T> {
    let (c, h, w) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    let mut data = Vec::with_capacity(c * size * size);
    for ch in 0..c {
        for row in y..y + size {
            let start = ch * h * w + row * w + x;
            data.extend_from_slice(&t.data()[start..start + size]);
        }
    }
    Tensor::new([c, size, size], data).expect("crop shape")
}

impl<T: Scalar> TrainingSample<T> {
    /// Builds a sample from a rainy/clean pair, decomposing the clean image.
    pub fn from_pair(rainy: Tensor<T>, clean: Tensor<T>) -> Result<Self> {
        if rainy.shape() != clean.shape() {
            return Err(Error::dim(
                "training_sample",
                format!("rainy {:?} vs clean {:?}", rainy.shape(), clean.shape()),
            ));
        }
        let (structure, detail) = decompose_label(&clean)?;
        Ok(TrainingSample {
            rainy,
            clean,
            structure,
            detail,
        })
    }

    pub fn crop(&self, y: usize, x: usize, size: usize) -> Self {
        TrainingSample {
            rainy: crop(&self.rainy, y, x, size),
            clean: crop(&self.clean, y, x, size),
            structure: crop(&self.structure, y, x, size),
            detail: crop(&self.detail, y, x, size),
        }
    }

    pub fn height(&self) -> usize {
        self.clean.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.clean.shape()[2]
    }
}

impl<T: Scalar> Dataset<T> {
    pub fn load(manifest: &DatasetManifest) -> Result<Self> {
        manifest.check_files()?;
        let pairs = manifest
            .entries
            .iter()
            .map(|(r, c)| {
                let rainy = load_image(r)?;
                let clean = load_image(c)?;
                let sample = TrainingSample::from_pair(rainy, clean).map_err(|e| Error::Image {
                    path: r.clone(),
                    message: e.to_string(),
                })?;
                Ok(LoadedPair {
                    rainy_path: r.clone(),
                    clean_path: c.clone(),
                    sample,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset { pairs })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// `count` random crops, each from a uniformly chosen pair, with identical
    /// coordinates across the rainy/clean/label maps.
    pub fn sample_patches<R: Rng>(
        &self,
        count: usize,
        patch_size: usize,
        rng: &mut R,
    ) -> Result<Vec<TrainingSample<T>>> {
        if self.pairs.is_empty() {
            return Err(Error::contract("sample_patches", "dataset has no entries"));
        }
        for p in &self.pairs {
            if patch_size > p.sample.height() || patch_size > p.sample.width() {
                return Err(Error::contract(
                    "sample_patches",
                    format!(
                        "patch {} larger than {}x{} image {}",
                        patch_size,
                        p.sample.height(),
                        p.sample.width(),
                        p.rainy_path.display()
                    ),
                ));
            }
        }
        Ok((0..count)
            .map(|_| {
                let pair = &self.pairs[rng.gen_range(0..self.pairs.len())].sample;
                let y = rng.gen_range(0..=pair.height() - patch_size);
                let x = rng.gen_range(0..=pair.width() - patch_size);
                pair.crop(y, x, patch_size)
            })
            .collect())
    }
}

/// Loads `manifest` and draws `count` patches with a seeded generator.
pub fn sample_patches<T: Scalar>(
    manifest: &DatasetManifest,
    count: usize,
    patch_size: usize,
    seed: u64,
) -> Result<Vec<TrainingSample<T>>> {
    let data = Dataset::load(manifest)?;
    data.sample_patches(count, patch_size, &mut seed::rng(seed, "patches", 0))
}

/// Samples stacked into `N x 3 x H x W` tensors.
#[derive(Clone, Debug)]
pub struct Batch<T> {
    pub rainy: Tensor<T>,
    pub clean: Tensor<T>,
    pub structure: Tensor<T>,
    pub detail: Tensor<T>,
}

impl<T: Scalar> Batch<T> {
    pub fn from_samples(samples: &[TrainingSample<T>]) -> Result<Self> {
        let pick = |f: fn(&TrainingSample<T>) -> &Tensor<T>| {
            Tensor::stack(&samples.iter().map(|s| f(s).clone()).collect::<Vec<_>>())
        };
        Ok(Batch {
            rainy: pick(|s| &s.rainy)?,
            clean: pick(|s| &s.clean)?,
            structure: pick(|s| &s.structure)?,
            detail: pick(|s| &s.detail)?,
        })
    }

    pub fn len(&self) -> usize {
        self.rainy.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::save_image;

    fn write_pair(dir: &Path, name: &str, h: usize, w: usize) -> (PathBuf, PathBuf) {
        let clean = Tensor::<f32>::from_fn([3, h, w], |i| ((i * 31) % 251) as f32 / 300.0);
        let rainy = clean.map(|v| (v + 0.1).min(1.0));
        let r = dir.join(format!("{name}_rainy.png"));
        let c = dir.join(format!("{name}_clean.png"));
        save_image(&rainy, &r).unwrap();
        save_image(&clean, &c).unwrap();
        (r, c)
    }

    #[test]
    fn manifest_parsing_skips_comments_and_resolves_relative_paths() {
        let m = DatasetManifest::parse(
            "# header\n\na.png\tb.png\n/abs/c.png\td.png\n",
            Path::new("/data"),
        )
        .unwrap();
        assert_eq!(
            m.entries,
            vec![
                (PathBuf::from("/data/a.png"), PathBuf::from("/data/b.png")),
                (PathBuf::from("/abs/c.png"), PathBuf::from("/data/d.png")),
            ]
        );
        assert!(DatasetManifest::parse("only-one-column\n", Path::new(".")).is_err());
    }

    #[test]
    fn manifest_text_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = DatasetManifest {
            entries: vec![(dir.path().join("r.png"), dir.path().join("c.png"))],
        };
        let p = dir.path().join("m.txt");
        m.save(&p).unwrap();
        assert_eq!(DatasetManifest::load(&p).unwrap(), m);
    }

    #[test]
    fn missing_files_are_named() {
        let m = DatasetManifest {
            entries: vec![(PathBuf::from("/nope/r.png"), PathBuf::from("/nope/c.png"))],
        };
        let err = Dataset::<f32>::load(&m).unwrap_err();
        assert!(err.to_string().contains("/nope/r.png"));
    }

    #[test]
    fn patches_are_deterministic_and_decomposed() {
        let dir = tempfile::tempdir().unwrap();
        let entries = vec![
            write_pair(dir.path(), "a", 24, 30),
            write_pair(dir.path(), "b", 20, 20),
        ];
        let m = DatasetManifest { entries };
        let a: Vec<TrainingSample<f32>> = sample_patches(&m, 6, 16, 5).unwrap();
        let b: Vec<TrainingSample<f32>> = sample_patches(&m, 6, 16, 5).unwrap();
        assert_eq!(a, b);
        for s in &a {
            assert_eq!(s.rainy.shape(), &[3, 16, 16]);
            let recon = s.structure.zip_map(&s.detail, |x, y| x + y).unwrap();
            assert!(recon.max_abs_diff(&s.clean) <= 1e-6);
        }
    }

    #[test]
    fn full_size_patch_is_the_whole_image() {
        let dir = tempfile::tempdir().unwrap();
        let m = DatasetManifest {
            entries: vec![write_pair(dir.path(), "a", 14, 14)],
        };
        let data = Dataset::<f32>::load(&m).unwrap();
        let p = data
            .sample_patches(1, 14, &mut seed::rng(1, "x", 0))
            .unwrap();
        assert_eq!(p[0], data.pairs[0].sample);
    }

    #[test]
    fn oversized_patch_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let m = DatasetManifest {
            entries: vec![write_pair(dir.path(), "small", 12, 12)],
        };
        let err = sample_patches::<f32>(&m, 1, 13, 0).unwrap_err();
        assert!(err.to_string().contains("small_rainy.png"), "{err}");
    }
}
