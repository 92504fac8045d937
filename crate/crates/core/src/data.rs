//! Datasets: seeded Gaussian blobs, MNIST-style IDX files and IID sharding.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{FedError, Result};
use crate::model::Sample;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synthetic,
    IdxFiles,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub name: String,
    pub sample_count: usize,
    pub input_dim: usize,
    pub class_count: usize,
    pub source: DataSource,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Gaussian blobs with identity covariance. Class means sit on scaled basis
/// vectors (pairwise distance exactly `separation`) when `dim >= classes`,
/// otherwise on a line `separation` apart. Samples are interleaved by class.
pub fn gen_synthetic(classes: usize, dim: usize, per_class: usize, separation: f64, seed: u64) -> Result<Dataset> {
    if dim < 1 {
        return Err(FedError::Config("synthetic dim must be at least 1".into()));
    }
    if classes < 2 {
        return Err(FedError::Config("synthetic data needs at least 2 classes".into()));
    }
    if per_class < 1 {
        return Err(FedError::Config("per_class must be at least 1".into()));
    }
    if !(separation.is_finite() && separation > 0.0) {
        return Err(FedError::Config(format!("separation must be positive, got {separation}")));
    }
    let means: Vec<Vec<f64>> = (0..classes)
        .map(|k| {
            let mut m = vec![0.0; dim];
            if dim >= classes {
                m[k] = separation / std::f64::consts::SQRT_2;
            } else {
                m[0] = k as f64 * separation;
            }
            m
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(classes * per_class);
    for _ in 0..per_class {
        for (label, mean) in means.iter().enumerate() {
            let features = mean
                .iter()
                .map(|mu| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    mu + z
                })
                .collect();
            samples.push(Sample { features, label });
        }
    }
    Ok(Dataset {
        meta: DatasetMeta {
            name: format!("blobs-{classes}x{dim}-sep{separation}"),
            sample_count: samples.len(),
            input_dim: dim,
            class_count: classes,
            source: DataSource::Synthetic,
        },
        samples,
    })
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut file = File::open(path).map_err(|e| FedError::io(path, e))?;
    let mut buf = Vec::new();
    let gz = path.extension().is_some_and(|e| e == "gz");
    let res = if gz {
        GzDecoder::new(file).read_to_end(&mut buf)
    } else {
        file.read_to_end(&mut buf)
    };
    res.map_err(|e| FedError::io(path, e))?;
    Ok(buf)
}

fn be_u32(buf: &[u8], offset: usize, path: &Path, what: &str) -> Result<u32> {
    buf.get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| FedError::Parse {
            path: path.to_path_buf(),
            offset: offset as u64,
            msg: format!("truncated header, expected {what}"),
        })
}

/// Reads the first `limit` image/label pairs of an IDX file pair. Files ending
/// in `.gz` are decompressed. Pixels are scaled to `[0, 1]`.
pub fn read_idx(images: &Path, labels: &Path, limit: usize) -> Result<Dataset> {
    if limit == 0 {
        return Err(FedError::Config("IDX limit 0 would produce an empty dataset".into()));
    }
    let img = read_all(images)?;
    let lab = read_all(labels)?;

    let parse_err = |path: &Path, offset: usize, msg: String| FedError::Parse {
        path: path.to_path_buf(),
        offset: offset as u64,
        msg,
    };

    let magic = be_u32(&img, 0, images, "magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(parse_err(images, 0, format!("bad magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}")));
    }
    let magic = be_u32(&lab, 0, labels, "magic")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(parse_err(labels, 0, format!("bad magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}")));
    }
    let n_img = be_u32(&img, 4, images, "item count")? as usize;
    let rows = be_u32(&img, 8, images, "row count")? as usize;
    let cols = be_u32(&img, 12, images, "column count")? as usize;
    let n_lab = be_u32(&lab, 4, labels, "item count")? as usize;
    if n_img != n_lab {
        return Err(parse_err(
            labels,
            4,
            format!("label count {n_lab} does not match image count {n_img}"),
        ));
    }
    let dim = rows * cols;
    if dim == 0 {
        return Err(parse_err(images, 8, "zero-sized images".into()));
    }
    let img_need = 16 + n_img * dim;
    if img.len() < img_need {
        return Err(parse_err(
            images,
            img.len(),
            format!("truncated payload: {n_img} images of {rows}x{cols} need {img_need} bytes"),
        ));
    }
    let lab_need = 8 + n_lab;
    if lab.len() < lab_need {
        return Err(parse_err(
            labels,
            lab.len(),
            format!("truncated payload: {n_lab} labels need {lab_need} bytes"),
        ));
    }

    let count = limit.min(n_img);
    let samples: Vec<Sample> = (0..count)
        .map(|i| {
            let px = &img[16 + i * dim..16 + (i + 1) * dim];
            Sample {
                features: px.iter().map(|&p| p as f64 / 255.0).collect(),
                label: lab[8 + i] as usize,
            }
        })
        .collect();
    let class_count = samples.iter().map(|s| s.label + 1).max().unwrap_or(0).max(2);
    Ok(Dataset {
        meta: DatasetMeta {
            name: images
                .file_name()
                .map_or_else(|| "idx".into(), |n| n.to_string_lossy().into_owned()),
            sample_count: count,
            input_dim: dim,
            class_count,
            source: DataSource::IdxFiles,
        },
        samples,
    })
}

/// Writes raw pixels and labels as an IDX pair (gzipped when the path ends
/// in `.gz`).
pub fn write_idx(
    images: &Path,
    labels: &Path,
    rows: usize,
    cols: usize,
    pixels: &[Vec<u8>],
    label_bytes: &[u8],
) -> Result<()> {
    if pixels.len() != label_bytes.len() || pixels.iter().any(|p| p.len() != rows * cols) {
        return Err(FedError::Contract("IDX pixel rows and labels disagree in shape".into()));
    }
    let mut img = Vec::with_capacity(16 + pixels.len() * rows * cols);
    for v in [IDX_IMAGES_MAGIC, pixels.len() as u32, rows as u32, cols as u32] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    pixels.iter().for_each(|p| img.extend_from_slice(p));
    let mut lab = Vec::with_capacity(8 + label_bytes.len());
    for v in [IDX_LABELS_MAGIC, label_bytes.len() as u32] {
        lab.extend_from_slice(&v.to_be_bytes());
    }
    lab.extend_from_slice(label_bytes);
    write_maybe_gz(images, &img)?;
    write_maybe_gz(labels, &lab)
}

fn write_maybe_gz(path: &Path, bytes: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| FedError::io(path, e))?;
    let res = if path.extension().is_some_and(|e| e == "gz") {
        let mut enc = GzEncoder::new(BufWriter::new(file), Compression::default());
        enc.write_all(bytes).and_then(|_| enc.finish()).map(|_| ())
    } else {
        let mut w = BufWriter::new(file);
        w.write_all(bytes).and_then(|_| w.flush())
    };
    res.map_err(|e| FedError::io(path, e))
}

/// Seeded shuffle followed by contiguous equal splits; the last shard takes
/// the remainder.
pub fn shard_iid(dataset: &Dataset, n: usize, seed: u64) -> Result<Vec<Vec<Sample>>> {
    if n < 1 {
        return Err(FedError::Config("shard count N must be at least 1".into()));
    }
    if n > dataset.len() {
        return Err(FedError::Config(format!(
            "cannot split {} samples across {n} clients",
            dataset.len()
        )));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let size = dataset.len() / n;
    Ok((0..n)
        .map(|i| {
            let end = if i + 1 == n { order.len() } else { (i + 1) * size };
            order[i * size..end].iter().map(|&k| dataset.samples[k].clone()).collect()
        })
        .collect())
}

/// SHA-256 over every shard's labels and feature bits, in order.
pub fn shard_fingerprint(shards: &[Vec<Sample>]) -> String {
    let mut h = Sha256::new();
    for (i, shard) in shards.iter().enumerate() {
        h.update((i as u64).to_le_bytes());
        h.update((shard.len() as u64).to_le_bytes());
        for s in shard {
            h.update((s.label as u64).to_le_bytes());
            for x in &s.features {
                h.update(x.to_bits().to_le_bytes());
            }
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    #[test]
    fn synthetic_shape_and_determinism() {
        let d = gen_synthetic(3, 4, 1, 5.0, 1).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.meta.class_count, 3);
        let labels: Vec<usize> = d.samples.iter().map(|s| s.label).collect();
        assert_eq!(labels, vec![0, 1, 2]);
        assert_eq!(d, gen_synthetic(3, 4, 1, 5.0, 1).unwrap());
        assert_ne!(d, gen_synthetic(3, 4, 1, 5.0, 2).unwrap());
    }

    #[test]
    fn synthetic_means_are_separated() {
        for (classes, dim) in [(2, 2), (3, 5), (4, 2)] {
            let sep = 6.0;
            let d = gen_synthetic(classes, dim, 4000, sep, 3).unwrap();
            let mut sums: BTreeMap<usize, (Vec<f64>, usize)> = BTreeMap::new();
            for s in &d.samples {
                let e = sums.entry(s.label).or_insert((vec![0.0; dim], 0));
                e.0.iter_mut().zip(&s.features).for_each(|(a, x)| *a += x);
                e.1 += 1;
            }
            let means: Vec<Vec<f64>> = sums.values().map(|(v, n)| v.iter().map(|x| x / *n as f64).collect()).collect();
            for a in 0..classes {
                for b in a + 1..classes {
                    let dist: f64 = means[a].iter().zip(&means[b]).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
                    assert!(dist > sep - 0.2, "classes {a},{b}: {dist}");
                }
            }
        }
    }

    #[test]
    fn synthetic_rejects_bad_config() {
        assert!(gen_synthetic(2, 0, 5, 1.0, 0).is_err());
        assert!(gen_synthetic(2, 2, 5, 0.0, 0).is_err());
        assert!(gen_synthetic(1, 2, 5, 1.0, 0).is_err());
    }

    #[test]
    fn idx_round_trip_and_gz() {
        let dir = tempfile::tempdir().unwrap();
        let pixels: Vec<Vec<u8>> = (0..5u8).map(|i| (0..6).map(|k| i * 40 + k).collect()).collect();
        let labels = [3u8, 0, 9, 1, 1];
        for ext in ["", ".gz"] {
            let ip = dir.path().join(format!("img{ext}"));
            let lp = dir.path().join(format!("lab{ext}"));
            write_idx(&ip, &lp, 2, 3, &pixels, &labels).unwrap();
            let d = read_idx(&ip, &lp, 100).unwrap();
            assert_eq!(d.len(), 5);
            assert_eq!(d.meta.input_dim, 6);
            assert_eq!(d.meta.class_count, 10);
            for (s, (p, &l)) in d.samples.iter().zip(pixels.iter().zip(&labels)) {
                assert_eq!(s.label, l as usize);
                let want: Vec<f64> = p.iter().map(|&v| v as f64 / 255.0).collect();
                assert_eq!(s.features, want);
            }
            assert_eq!(read_idx(&ip, &lp, 2).unwrap().len(), 2);
        }
    }

    #[test]
    fn idx_errors_name_offsets() {
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("img");
        let lp = dir.path().join("lab");
        write_idx(&ip, &lp, 2, 2, &[vec![1, 2, 3, 4]], &[1]).unwrap();

        assert!(matches!(read_idx(&ip, &lp, 0), Err(FedError::Config(_))));

        let mut bytes = std::fs::read(&ip).unwrap();
        bytes[3] = 0x99;
        let bad = dir.path().join("bad");
        std::fs::write(&bad, &bytes).unwrap();
        let err = read_idx(&bad, &lp, 1).unwrap_err();
        assert!(matches!(err, FedError::Parse { offset: 0, .. }), "{err}");

        let bytes = std::fs::read(&ip).unwrap();
        std::fs::write(&bad, &bytes[..18]).unwrap();
        let err = read_idx(&bad, &lp, 1).unwrap_err();
        assert!(matches!(err, FedError::Parse { offset: 18, .. }), "{err}");

        let two = dir.path().join("two");
        write_idx(&ip, &two, 2, 2, &[vec![0; 4], vec![0; 4]], &[0, 1]).unwrap();
        write_idx(&dir.path().join("x"), &lp, 2, 2, &[vec![0; 4]], &[0]).unwrap();
        let err = read_idx(&ip, &lp, 1).unwrap_err();
        assert!(matches!(err, FedError::Parse { offset: 4, .. }), "{err}");

        let missing = read_idx(&dir.path().join("nope"), &lp, 1).unwrap_err();
        assert!(missing.is_missing_file());
        assert!(missing.to_string().contains("nope"));
    }

    #[test]
    fn shard_counts() {
        let d = gen_synthetic(2, 2, 50, 1.0, 0).unwrap();
        let one = shard_iid(&d, 1, 0).unwrap();
        assert_eq!(one[0].len(), 100);
        let ten = shard_iid(&d, 10, 0).unwrap();
        assert!(ten.iter().all(|s| s.len() == 10));
        let three = shard_iid(&d, 3, 0).unwrap();
        assert_eq!(three.iter().map(Vec::len).collect::<Vec<_>>(), vec![33, 33, 34]);
        assert!(shard_iid(&d, 0, 0).is_err());
        assert!(shard_iid(&d, 101, 0).is_err());
    }

    #[test]
    fn fingerprint_tracks_content() {
        let d = gen_synthetic(2, 2, 20, 1.0, 0).unwrap();
        let a = shard_iid(&d, 4, 1).unwrap();
        assert_eq!(shard_fingerprint(&a), shard_fingerprint(&shard_iid(&d, 4, 1).unwrap()));
        assert_ne!(shard_fingerprint(&a), shard_fingerprint(&shard_iid(&d, 4, 2).unwrap()));
    }

    proptest! {
        #[test]
        fn shards_partition_exactly(total in 1usize..200, n in 1usize..20, seed in 0u64..1000) {
            prop_assume!(n <= total);
            // features encode the sample index so shards can be traced back
            let samples: Vec<Sample> = (0..total).map(|i| Sample { features: vec![i as f64], label: i % 2 }).collect();
            let d = Dataset {
                meta: DatasetMeta { name: "t".into(), sample_count: total, input_dim: 1, class_count: 2, source: DataSource::Synthetic },
                samples,
            };
            let shards = shard_iid(&d, n, seed).unwrap();
            prop_assert_eq!(shards.len(), n);
            let mut seen: Vec<usize> = shards.iter().flatten().map(|s| s.features[0] as usize).collect();
            seen.sort_unstable();
            prop_assert_eq!(seen, (0..total).collect::<Vec<_>>());
        }
    }
}
