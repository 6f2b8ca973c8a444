use std::fs;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::idx::{parse_idx, serialize_idx, IdxArray, IdxType};
use crate::alignment::Domain;
use crate::engine::Tensor;
use crate::error::{Error, Result};

pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";

/// Samples with contiguous labels `0..num_classes`.
#[derive(Clone, Debug)]
pub struct LabeledDataset {
    /// `[N, 1, 28, 28]` images or `[N, d]` vectors.
    pub samples: Tensor<f32>,
    pub labels: Vec<usize>,
    /// Original label for each contiguous index.
    pub classes: Vec<u32>,
    pub domain: Domain,
}

impl LabeledDataset {
    pub fn new(
        samples: Tensor<f32>,
        labels: Vec<usize>,
        classes: Vec<u32>,
        domain: Domain,
    ) -> Result<Self> {
        let n = samples.shape()[0];
        if labels.len() != n {
            return Err(Error::shape(
                "dataset",
                format!("{n} samples but {} labels", labels.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes.len()) {
            return Err(Error::Index(format!(
                "label {bad} outside 0..{}",
                classes.len()
            )));
        }
        Ok(Self {
            samples,
            labels,
            classes,
            domain,
        })
    }

    /// Builds a dataset from IDX images and labels, keeping original label
    /// values (the class map is `0..=max_label`).
    pub fn from_idx(images: &IdxArray, labels: &IdxArray, domain: Domain) -> Result<Self> {
        if labels.dims.len() != 1 || images.dims[0] != labels.dims[0] {
            return Err(Error::shape(
                "dataset",
                format!(
                    "images {:?} and labels {:?} disagree",
                    images.dims, labels.dims
                ),
            ));
        }
        let mut shape = images.dims.clone();
        if shape.len() == 3 {
            shape.insert(1, 1);
        }
        let samples = Tensor::new(shape, images.values.iter().map(|&v| v as f32).collect())?;
        let mut lab = Vec::with_capacity(labels.values.len());
        for &v in &labels.values {
            if v < 0.0 || v.fract() != 0.0 {
                return Err(Error::Index(format!(
                    "label {v} is not a non-negative integer"
                )));
            }
            lab.push(v as usize);
        }
        let max = lab.iter().copied().max().unwrap_or(0);
        Self::new(samples, lab, (0..=max as u32).collect(), domain)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// Per-sample shape without the batch axis.
    pub fn sample_shape(&self) -> &[usize] {
        &self.samples.shape()[1..]
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.num_classes()];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            samples: self.samples.gather_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes.clone(),
            domain: self.domain,
        }
    }
}

fn read(path: &Path) -> Result<IdxArray> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_idx(&bytes)
}

/// Loads `<root>/<name>/train-{images,labels}` as stored on disk.
pub fn load_idx_dataset(root: &Path, name: &str, domain: Domain) -> Result<LabeledDataset> {
    let dir = root.join(name);
    let images = read(&dir.join(TRAIN_IMAGES))?;
    let labels = read(&dir.join(TRAIN_LABELS))?;
    LabeledDataset::from_idx(&images, &labels, domain)
}

/// Writes `<dir>/train-{images,labels}`; labels are stored as original class
/// values, samples with the given element type.
pub fn write_idx_dataset(dir: &Path, ds: &LabeledDataset, dtype: IdxType) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let images = IdxArray::new(dtype, ds.samples.shape().to_vec(), ds.samples.to_f64_vec())?;
    let labels = IdxArray::new(
        IdxType::U8,
        vec![ds.len()],
        ds.labels.iter().map(|&l| ds.classes[l] as f64).collect(),
    )?;
    for (name, arr) in [(TRAIN_IMAGES, &images), (TRAIN_LABELS, &labels)] {
        let path = dir.join(name);
        fs::write(&path, serialize_idx(arr)?).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// Keeps `classes` (relabelled `0..K` in the given order) and draws at most
/// `n_max` samples without replacement. Per-class quotas are proportional to
/// availability with largest-remainder rounding, so class proportions hold to
/// within one sample. Surviving samples keep their original order.
pub fn select_classes(
    ds: &LabeledDataset,
    classes: &[u32],
    n_max: usize,
    seed: u64,
) -> Result<LabeledDataset> {
    if classes.is_empty() {
        return Err(Error::Config("class list is empty".into()));
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); classes.len()];
    for (i, &l) in ds.labels.iter().enumerate() {
        let orig = ds.classes[l];
        if let Some(k) = classes.iter().position(|&c| c == orig) {
            members[k].push(i);
        }
    }
    for (k, m) in members.iter().enumerate() {
        if m.is_empty() {
            return Err(Error::MissingClass(classes[k]));
        }
    }
    let total: usize = members.iter().map(Vec::len).sum();
    let quotas = if n_max >= total {
        members.iter().map(Vec::len).collect()
    } else {
        proportional_quotas(&members.iter().map(Vec::len).collect::<Vec<_>>(), n_max)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep: Vec<(usize, usize)> = Vec::with_capacity(n_max.min(total));
    for (k, (m, &q)) in members.iter().zip(&quotas).enumerate() {
        let picked = index::sample(&mut rng, m.len(), q);
        keep.extend(picked.iter().map(|j| (m[j], k)));
    }
    keep.sort_unstable();
    let idx: Vec<usize> = keep.iter().map(|&(i, _)| i).collect();
    LabeledDataset::new(
        ds.samples.gather_rows(&idx),
        keep.iter().map(|&(_, k)| k).collect(),
        classes.to_vec(),
        ds.domain,
    )
}

fn proportional_quotas(counts: &[usize], n: usize) -> Vec<usize> {
    let total: usize = counts.iter().sum();
    let mut quotas: Vec<usize> = counts.iter().map(|&c| c * n / total).collect();
    let mut rem: Vec<(usize, usize)> = counts
        .iter()
        .enumerate()
        .map(|(k, &c)| (c * n % total, k))
        .collect();
    rem.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let short = n - quotas.iter().sum::<usize>();
    for &(_, k) in rem.iter().take(short) {
        quotas[k] += 1;
    }
    quotas
}

/// Maps raw pixel values `[0, 255]` to `[-1, 1]`.
pub fn normalize_pixels(ds: &LabeledDataset) -> LabeledDataset {
    LabeledDataset {
        samples: ds.samples.map(|v| v / 127.5 - 1.0),
        ..ds.clone()
    }
}

/// Divides every value by the largest magnitude, returning the factor used.
pub fn scale_max_abs(ds: &LabeledDataset) -> (LabeledDataset, f32) {
    let m = ds.samples.data().iter().fold(0.0f32, |a, v| a.max(v.abs()));
    let s = if m > 0.0 { m } else { 1.0 };
    (
        LabeledDataset {
            samples: ds.samples.map(|v| v / s),
            ..ds.clone()
        },
        s,
    )
}

/// Appends zero features to `[N, d]` vectors so they have width `dim`.
pub fn pad_features(ds: &LabeledDataset, dim: usize) -> Result<LabeledDataset> {
    let shape = ds.samples.shape();
    if shape.len() != 2 || shape[1] > dim {
        return Err(Error::shape(
            "pad_features",
            format!("cannot pad {shape:?} to width {dim}"),
        ));
    }
    let d = shape[1];
    let mut data = Vec::with_capacity(shape[0] * dim);
    for row in ds.samples.data().chunks_exact(d) {
        data.extend_from_slice(row);
        data.extend(std::iter::repeat_n(0.0, dim - d));
    }
    Ok(LabeledDataset {
        samples: Tensor::new([shape[0], dim], data)?,
        ..ds.clone()
    })
}

/// Seeded shuffle and split; the second part holds `round(eval_fraction·N)`
/// samples (at least one of each part).
pub fn split_train_eval(
    ds: &LabeledDataset,
    eval_fraction: f64,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    let n = ds.len();
    if n < 2 {
        return Err(Error::BatchSize { needed: 2, got: n });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_eval = ((n as f64 * eval_fraction).round() as usize).clamp(1, n - 1);
    let (eval, train) = idx.split_at(n_eval);
    let mut train = train.to_vec();
    let mut eval = eval.to_vec();
    train.sort_unstable();
    eval.sort_unstable();
    Ok((ds.subset(&train), ds.subset(&eval)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(labels: &[usize], classes: usize) -> LabeledDataset {
        let n = labels.len();
        let samples = Tensor::new([n, 1], (0..n).map(|i| i as f32).collect()).unwrap();
        LabeledDataset::new(
            samples,
            labels.to_vec(),
            (0..classes as u32).collect(),
            Domain::Source,
        )
        .unwrap()
    }

    #[test]
    fn select_remaps_in_listed_order() {
        let ds = toy(&[4, 5, 3, 5, 4, 1], 6);
        let s = select_classes(&ds, &[5, 4], 100, 0).unwrap();
        assert_eq!(s.labels, vec![1, 0, 0, 1]);
        assert_eq!(s.classes, vec![5, 4]);
        assert_eq!(s.samples.data(), &[0.0, 1.0, 3.0, 4.0]);
    }

    #[test]
    fn missing_class_is_named() {
        let ds = toy(&[0, 1, 1], 3);
        let err = select_classes(&ds, &[0, 2], 10, 0).unwrap_err();
        assert!(matches!(err, Error::MissingClass(2)));
    }

    #[test]
    fn subsampling_is_seeded_and_balanced() {
        let labels: Vec<usize> = (0..1000).map(|i| i % 2).collect();
        let ds = toy(&labels, 2);
        let a = select_classes(&ds, &[0, 1], 301, 42).unwrap();
        let b = select_classes(&ds, &[0, 1], 301, 42).unwrap();
        let c = select_classes(&ds, &[0, 1], 301, 43).unwrap();
        assert_eq!(a.samples, b.samples);
        assert_ne!(a.samples, c.samples);
        assert_eq!(a.len(), 301);
        let counts = a.class_counts();
        assert!(counts[0].abs_diff(counts[1]) <= 1);
    }

    #[test]
    fn quotas_sum_to_target() {
        assert_eq!(proportional_quotas(&[5, 3, 2], 7), vec![4, 2, 1]);
        assert_eq!(proportional_quotas(&[1, 1, 1], 2).iter().sum::<usize>(), 2);
    }

    #[test]
    fn pixel_endpoints() {
        let samples = Tensor::new([3, 1], vec![0.0, 127.5, 255.0]).unwrap();
        let ds = LabeledDataset::new(samples, vec![0, 0, 0], vec![0], Domain::Target).unwrap();
        assert_eq!(normalize_pixels(&ds).samples.data(), &[-1.0, 0.0, 1.0]);
    }

    #[test]
    fn padding_and_scaling() {
        let samples = Tensor::new([2, 2], vec![1.0, -4.0, 2.0, 0.5]).unwrap();
        let ds = LabeledDataset::new(samples, vec![0, 1], vec![0, 1], Domain::Source).unwrap();
        let (s, f) = scale_max_abs(&ds);
        assert_eq!(f, 4.0);
        assert_eq!(s.samples.data(), &[0.25, -1.0, 0.5, 0.125]);
        let p = pad_features(&ds, 3).unwrap();
        assert_eq!(p.samples.data(), &[1.0, -4.0, 0.0, 2.0, 0.5, 0.0]);
        assert!(pad_features(&ds, 1).is_err());
    }

    #[test]
    fn split_is_disjoint_and_seeded() {
        let ds = toy(&vec![0; 100], 1);
        let (tr, ev) = split_train_eval(&ds, 0.15, 3).unwrap();
        assert_eq!((tr.len(), ev.len()), (85, 15));
        let mut all: Vec<f32> = tr
            .samples
            .data()
            .iter()
            .chain(ev.samples.data())
            .copied()
            .collect();
        all.sort_by(f32::total_cmp);
        assert_eq!(all, (0..100).map(|i| i as f32).collect::<Vec<_>>());
        let (tr2, _) = split_train_eval(&ds, 0.15, 3).unwrap();
        assert_eq!(tr.samples, tr2.samples);
    }
}
