//! Network inputs: 15-point velocity stencils for segmentation and mid-row
//! vorticity time series for classification, plus normalization and the
//! split protocols.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flowgrid::{csv_error, slice_plane, FlowGrid, LabelVolume};
use crate::numerics::vorticity_2d;

/// Width of a segmentation feature vector.
pub const SEG_WIDTH: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Segmentation,
    Classification,
}

/// Where a sample came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Origin {
    /// Grid point at a time level.
    Seg { t: usize, i: usize, j: usize, k: usize },
    /// Mid-row point `i` of z-slice `k`.
    Cls { i: usize, k: usize },
}

impl Origin {
    pub fn task(&self) -> Task {
        match self {
            Origin::Seg { .. } => Task::Segmentation,
            Origin::Cls { .. } => Task::Classification,
        }
    }

    /// z-slice index.
    pub fn slice(&self) -> usize {
        match *self {
            Origin::Seg { k, .. } | Origin::Cls { k, .. } => k,
        }
    }
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Origin::Seg { t, i, j, k } => write!(f, "{t}:{i}:{j}:{k}"),
            Origin::Cls { i, k } => write!(f, "{i}:{k}"),
        }
    }
}

impl std::str::FromStr for Origin {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts = s
            .split(':')
            .map(|p| p.trim().parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::Format(format!("bad origin {s:?}")))?;
        match parts[..] {
            [t, i, j, k] => Ok(Origin::Seg { t, i, j, k }),
            [i, k] => Ok(Origin::Cls { i, k }),
            _ => Err(Error::Format(format!("origin {s:?} must be t:i:j:k or i:k"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: usize,
    pub origin: Origin,
}

/// Per-feature affine normalization `(x - shift) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Normalization {
    /// Mean and standard deviation of each feature. Zero-variance features get scale 1.
    pub fn fit(samples: &[Sample]) -> Result<Self> {
        let width = samples
            .first()
            .map(|s| s.features.len())
            .ok_or_else(|| Error::Validation("cannot fit normalization on an empty set".into()))?;
        let n = samples.len() as f64;
        let mut shift = vec![0.0; width];
        for s in samples {
            for (m, x) in shift.iter_mut().zip(&s.features) {
                *m += x;
            }
        }
        shift.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; width];
        for s in samples {
            for ((v, x), m) in var.iter_mut().zip(&s.features).zip(&shift) {
                *v += (x - m) * (x - m);
            }
        }
        let scale = var
            .iter()
            .map(|v| {
                let sd = (v / n).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { shift, scale })
    }

    pub fn apply(&self, features: &[f64]) -> Vec<f64> {
        features
            .iter()
            .zip(self.shift.iter().zip(&self.scale))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }

    pub fn invert(&self, features: &[f64]) -> Vec<f64> {
        features
            .iter()
            .zip(self.shift.iter().zip(&self.scale))
            .map(|(x, (m, s))| x * s + m)
            .collect()
    }

    pub fn width(&self) -> usize {
        self.shift.len()
    }
}

/// A homogeneous collection of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    task: Task,
    width: usize,
    samples: Vec<Sample>,
    /// Normalization already applied to the features, if any.
    pub normalization: Option<Normalization>,
    /// Free-form split tag such as `train`, `test` or `group2/test`.
    pub tag: String,
    pub seed: Option<u64>,
}

impl SampleSet {
    pub fn new(task: Task, width: usize, samples: Vec<Sample>) -> Result<Self> {
        for (n, s) in samples.iter().enumerate() {
            if s.features.len() != width {
                return Err(Error::Validation(format!(
                    "sample {n} has {} features, expected {width}",
                    s.features.len()
                )));
            }
            if s.origin.task() != task {
                return Err(Error::Validation(format!("sample {n} origin does not match task {task:?}")));
            }
            if let Some(bad) = s.features.iter().position(|f| !f.is_finite()) {
                return Err(Error::Validation(format!("sample {n} feature {bad} is not finite")));
            }
        }
        Ok(Self {
            task,
            width,
            samples,
            normalization: None,
            tag: "all".into(),
            seed: None,
        })
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// Number of classes implied by the largest label.
    pub fn class_count(&self) -> usize {
        self.samples.iter().map(|s| s.label + 1).max().unwrap_or(0)
    }

    /// Row-major `len x width` feature matrix.
    pub fn feature_matrix(&self) -> Vec<f64> {
        self.samples.iter().flat_map(|s| s.features.iter().copied()).collect()
    }

    fn subset(&self, idx: impl IntoIterator<Item = usize>, tag: String) -> SampleSet {
        SampleSet {
            task: self.task,
            width: self.width,
            samples: idx.into_iter().map(|n| self.samples[n].clone()).collect(),
            normalization: self.normalization.clone(),
            tag,
            seed: self.seed,
        }
    }

    /// Distinct z-slices present, ascending.
    pub fn slices(&self) -> Vec<usize> {
        self.samples
            .iter()
            .map(|s| s.origin.slice())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Applies `norm` to every feature vector.
    pub fn normalized(&self, norm: &Normalization) -> Result<SampleSet> {
        if norm.width() != self.width {
            return Err(Error::Validation(format!(
                "normalization width {} does not match feature width {}",
                norm.width(),
                self.width
            )));
        }
        let mut out = self.clone();
        for s in &mut out.samples {
            s.features = norm.apply(&s.features);
        }
        out.normalization = Some(norm.clone());
        Ok(out)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        let mut header: Vec<String> = (0..self.width).map(|n| format!("f{n}")).collect();
        header.push("label".into());
        header.push("origin".into());
        w.write_record(&header).map_err(|e| csv_error(path, e))?;
        for s in &self.samples {
            let mut row: Vec<String> = s.features.iter().map(|f| f.to_string()).collect();
            row.push(s.label.to_string());
            row.push(s.origin.to_string());
            w.write_record(&row).map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    /// Reads a sample CSV; the task is inferred from the origin column.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<SampleSet> {
        let path = path.as_ref();
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
        let header = r.headers().map_err(|e| csv_error(path, e))?.clone();
        let cols = header.len();
        if cols < 3 || &header[cols - 2] != "label" || &header[cols - 1] != "origin" {
            return Err(Error::Format(format!("{}: header must end with label,origin", path.display())));
        }
        let width = cols - 2;
        for (n, h) in header.iter().take(width).enumerate() {
            if h != format!("f{n}") {
                return Err(Error::Format(format!("{}: column {n} should be f{n}, got {h}", path.display())));
            }
        }
        let mut samples = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| csv_error(path, e))?;
            let bad = || Error::Format(format!("{}: bad value in data row {}", path.display(), line + 1));
            let features = (0..width)
                .map(|c| rec[c].trim().parse::<f64>().map_err(|_| bad()))
                .collect::<Result<Vec<_>>>()?;
            let label = rec[width].trim().parse::<usize>().map_err(|_| bad())?;
            let origin: Origin = rec[width + 1].parse()?;
            samples.push(Sample { features, label, origin });
        }
        let task = samples.first().map_or(Task::Segmentation, |s| s.origin.task());
        SampleSet::new(task, width, samples)
    }
}

/// The 15 stencil values around an interior point, in the fixed order
/// `u(j-1), u, u(j+1), u(k-1), u(k+1), v(i-1), v, v(i+1), v(k-1), v(k+1),
/// w(i-1), w, w(i+1), w(j-1), w(j+1)`.
pub fn seg_features(grid: &FlowGrid, t: usize, i: usize, j: usize, k: usize) -> [f64; SEG_WIDTH] {
    let (u, v, w) = (grid.u_all(), grid.v_all(), grid.w_all());
    let at = |i, j, k| grid.offset(t, i, j, k);
    [
        u[at(i, j - 1, k)],
        u[at(i, j, k)],
        u[at(i, j + 1, k)],
        u[at(i, j, k - 1)],
        u[at(i, j, k + 1)],
        v[at(i - 1, j, k)],
        v[at(i, j, k)],
        v[at(i + 1, j, k)],
        v[at(i, j, k - 1)],
        v[at(i, j, k + 1)],
        w[at(i - 1, j, k)],
        w[at(i, j, k)],
        w[at(i + 1, j, k)],
        w[at(i, j - 1, k)],
        w[at(i, j + 1, k)],
    ]
}

/// One segmentation sample per interior point where `labels` is valid.
pub fn extract_seg(grid: &FlowGrid, t: usize, labels: &LabelVolume) -> Result<SampleSet> {
    let d = grid.dims();
    if labels.dims() != d {
        return Err(Error::Validation(format!(
            "label dims {:?} do not match grid dims {:?}",
            labels.dims(),
            d
        )));
    }
    if t >= grid.timesteps() {
        return Err(Error::Index(format!("time index {t} out of range 0..{}", grid.timesteps())));
    }
    let mut samples = Vec::new();
    for i in 0..d.ni {
        for j in 0..d.nj {
            for k in 0..d.nk {
                if !d.is_strict_interior(i, j, k) || !labels.is_valid(i, j, k) {
                    continue;
                }
                samples.push(Sample {
                    features: seg_features(grid, t, i, j, k).to_vec(),
                    label: labels.get(i, j, k) as usize,
                    origin: Origin::Seg { t, i, j, k },
                });
            }
        }
    }
    SampleSet::new(Task::Segmentation, SEG_WIDTH, samples)
}

/// Mid-row index for a `J`-point axis: the centre row, lower-middle when `J` is even.
pub fn mid_row(nj: usize) -> usize {
    (nj.saturating_sub(1)) / 2
}

/// Vorticity time series along the mid row of every z-slice of every grid.
///
/// Each entry of `family` pairs a grid with its class index. All grids must
/// share dimensions and time levels.
pub fn extract_cls(family: &[(FlowGrid, usize)]) -> Result<SampleSet> {
    let Some((first, _)) = family.first() else {
        return Err(Error::Validation("classification family is empty".into()));
    };
    let (dims, nt) = (first.dims(), first.timesteps());
    for (n, (g, _)) in family.iter().enumerate() {
        if g.dims() != dims || g.timesteps() != nt {
            return Err(Error::Validation(format!(
                "grid {n} has shape {:?} x {} time levels, expected {:?} x {nt}",
                g.dims(),
                g.timesteps(),
                dims
            )));
        }
    }
    if dims.ni < 3 || dims.nj < 3 {
        return Err(Error::Validation("classification needs at least 3 points along x and y".into()));
    }
    let j = mid_row(dims.nj);
    let mut samples = Vec::new();
    for (grid, class) in family {
        for k in 0..dims.nk {
            let slice = slice_plane(grid, k)?;
            for i in 1..dims.ni - 1 {
                let features = (0..nt)
                    .map(|t| vorticity_2d(&slice, t, i, j))
                    .collect::<Result<Vec<_>>>()?;
                samples.push(Sample {
                    features,
                    label: *class,
                    origin: Origin::Cls { i, k },
                });
            }
        }
    }
    SampleSet::new(Task::Classification, nt, samples)
}

/// Seeded random split; the first part holds `round(ratio * N)` samples.
pub fn split_random(set: &SampleSet, ratio: f64, seed: u64) -> Result<(SampleSet, SampleSet)> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::Validation(format!("split ratio {ratio} outside [0, 1]")));
    }
    let mut idx: Vec<usize> = (0..set.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (ratio * set.len() as f64).round() as usize;
    let mut train = set.subset(idx[..n_train].iter().copied(), "train".into());
    let mut test = set.subset(idx[n_train..].iter().copied(), "test".into());
    train.seed = Some(seed);
    test.seed = Some(seed);
    Ok((train, test))
}

/// Partitions slice ids into `groups` contiguous runs of near-equal size.
pub fn group_slices(slices: &[usize], groups: usize) -> Result<Vec<Vec<usize>>> {
    if groups == 0 || groups > slices.len() {
        return Err(Error::Validation(format!(
            "cannot form {groups} groups from {} slices",
            slices.len()
        )));
    }
    let (base, extra) = (slices.len() / groups, slices.len() % groups);
    let mut out = Vec::with_capacity(groups);
    let mut start = 0;
    for g in 0..groups {
        let len = base + usize::from(g < extra);
        out.push(slices[start..start + len].to_vec());
        start += len;
    }
    Ok(out)
}

/// One train/test pair of the grouped protocol.
#[derive(Debug, Clone)]
pub struct Fold {
    pub group: usize,
    pub train_slices: Vec<usize>,
    pub test_slices: Vec<usize>,
    pub train: SampleSet,
    pub test: SampleSet,
}

/// Grouped cross-validation: slices are split into `groups` contiguous groups
/// and within each group `round(ratio * n)` slices, picked by a seeded shuffle,
/// train while the rest test.
pub fn group_folds(set: &SampleSet, groups: usize, ratio: f64, seed: u64) -> Result<Vec<Fold>> {
    let slices = set.slices();
    let parts = group_slices(&slices, groups)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = Vec::with_capacity(groups);
    for (g, part) in parts.into_iter().enumerate() {
        let mut order = part.clone();
        order.shuffle(&mut rng);
        let n_train = ((ratio * part.len() as f64).round() as usize).clamp(1, part.len());
        let mut train_slices = order[..n_train].to_vec();
        let mut test_slices = order[n_train..].to_vec();
        train_slices.sort_unstable();
        test_slices.sort_unstable();
        let pick = |want: &[usize]| {
            set.samples
                .iter()
                .enumerate()
                .filter(|(_, s)| want.contains(&s.origin.slice()))
                .map(|(n, _)| n)
                .collect::<Vec<_>>()
        };
        let mut train = set.subset(pick(&train_slices), format!("group{g}/train"));
        let mut test = set.subset(pick(&test_slices), format!("group{g}/test"));
        train.seed = Some(seed);
        test.seed = Some(seed);
        folds.push(Fold {
            group: g,
            train_slices,
            test_slices,
            train,
            test,
        });
    }
    Ok(folds)
}

/// Fits a normalization on `train` and applies it to both sets.
pub fn normalize(train: &SampleSet, test: &SampleSet) -> Result<(SampleSet, SampleSet, Normalization)> {
    let norm = Normalization::fit(train.samples())?;
    Ok((train.normalized(&norm)?, test.normalized(&norm)?, norm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowgrid::Dims;

    fn ax(n: usize) -> Vec<f64> {
        (0..n).map(|i| i as f64).collect()
    }

    fn all_valid(d: Dims) -> LabelVolume {
        LabelVolume::new(d, vec![false; d.len()], vec![true; d.len()], "test").unwrap()
    }

    #[test]
    fn single_interior_point() {
        let g = FlowGrid::from_fn(ax(3), ax(3), ax(3), 1, 1.0, |_, x, y, z| [x, y, z]).unwrap();
        let s = extract_seg(&g, 0, &all_valid(g.dims())).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.samples()[0].origin, Origin::Seg { t: 0, i: 1, j: 1, k: 1 });
    }

    #[test]
    fn uniform_flow_features() {
        let g = FlowGrid::from_fn(ax(4), ax(4), ax(4), 1, 1.0, |_, _, _, _| [2.5, 0.0, 0.0]).unwrap();
        let s = extract_seg(&g, 0, &all_valid(g.dims())).unwrap();
        assert_eq!(s.len(), 8);
        for sample in s.samples() {
            assert_eq!(&sample.features[..5], &[2.5; 5]);
        }
    }

    #[test]
    fn feature_order_golden() {
        let g = FlowGrid::from_fn(ax(3), ax(3), ax(3), 1, 1.0, |_, x, y, z| {
            [100.0 * x + 10.0 * y + z, 0.0, 0.0]
        })
        .unwrap();
        let s = extract_seg(&g, 0, &all_valid(g.dims())).unwrap();
        assert_eq!(&s.samples()[0].features[..5], &[101.0, 111.0, 121.0, 110.0, 112.0]);

        // Distinct codes per component pin the remaining ten slots.
        let g = FlowGrid::from_fn(ax(3), ax(3), ax(3), 1, 1.0, |_, x, y, z| {
            let c = 100.0 * x + 10.0 * y + z;
            [c, 1000.0 + c, 2000.0 + c]
        })
        .unwrap();
        let set = extract_seg(&g, 0, &all_valid(g.dims())).unwrap();
        let f = &set.samples()[0].features;
        let expected = [
            101.0, 111.0, 121.0, 110.0, 112.0, 1011.0, 1111.0, 1211.0, 1110.0, 1112.0, 2011.0, 2111.0, 2211.0,
            2101.0, 2121.0,
        ];
        assert_eq!(f.as_slice(), &expected);
    }

    #[test]
    fn seg_respects_validity_and_dims() {
        let g = FlowGrid::from_fn(ax(4), ax(4), ax(3), 1, 1.0, |_, _, _, _| [0.0; 3]).unwrap();
        let d = g.dims();
        let mut valid = vec![true; d.len()];
        valid[d.index(1, 1, 1)] = false;
        let mut lab = vec![false; d.len()];
        lab[d.index(2, 2, 1)] = true;
        let labels = LabelVolume::new(d, lab, valid, "t").unwrap();
        let s = extract_seg(&g, 0, &labels).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.samples().iter().filter(|s| s.label == 1).count(), 1);
        let wrong = all_valid(Dims::new(3, 3, 3));
        assert!(matches!(extract_seg(&g, 0, &wrong), Err(Error::Validation(_))));
    }

    #[test]
    fn cls_counting() {
        let g = FlowGrid::from_fn(ax(10), ax(5), ax(4), 3, 1.0, |_, _, _, _| [0.0; 3]).unwrap();
        let s = extract_cls(&[(g, 0)]).unwrap();
        assert_eq!(s.len(), 32);
        assert_eq!(s.width(), 3);
        assert!(s.samples().iter().all(|s| s.features.iter().all(|&f| f == 0.0)));
    }

    #[test]
    fn cls_rejects_mixed_shapes() {
        let a = FlowGrid::from_fn(ax(4), ax(4), ax(2), 3, 1.0, |_, _, _, _| [0.0; 3]).unwrap();
        let b = FlowGrid::from_fn(ax(4), ax(4), ax(2), 4, 1.0, |_, _, _, _| [0.0; 3]).unwrap();
        assert!(matches!(extract_cls(&[(a, 0), (b, 1)]), Err(Error::Validation(_))));
    }

    #[test]
    fn mid_row_convention() {
        assert_eq!(mid_row(5), 2);
        assert_eq!(mid_row(4), 1);
        assert_eq!(mid_row(65), 32);
    }

    fn toy(n: usize, slices: usize) -> SampleSet {
        let samples = (0..n)
            .map(|m| Sample {
                features: vec![m as f64, 1.0],
                label: m % 2,
                origin: Origin::Cls { i: m, k: m % slices },
            })
            .collect();
        SampleSet::new(Task::Classification, 2, samples).unwrap()
    }

    #[test]
    fn random_split_sizes_and_determinism() {
        let set = toy(10, 1);
        let (tr, te) = split_random(&set, 0.8, 1).unwrap();
        assert_eq!((tr.len(), te.len()), (8, 2));
        let (tr2, _) = split_random(&set, 0.8, 1).unwrap();
        assert_eq!(tr, tr2);
    }

    #[test]
    fn different_seeds_permute_differently() {
        let set = toy(50, 1);
        let orders: Vec<Vec<usize>> = (0..5)
            .map(|seed| {
                split_random(&set, 1.0, seed)
                    .unwrap()
                    .0
                    .samples()
                    .iter()
                    .map(|s| s.features[0] as usize)
                    .collect()
            })
            .collect();
        for a in 0..5 {
            for b in a + 1..5 {
                assert_ne!(orders[a], orders[b]);
            }
        }
    }

    #[test]
    fn grouping() {
        let eighty: Vec<usize> = (0..80).collect();
        let g = group_slices(&eighty, 5).unwrap();
        assert_eq!(g.len(), 5);
        assert!(g.iter().all(|p| p.len() == 16));
        assert_eq!(g[1][0], 16);
        let ten: Vec<usize> = (0..10).collect();
        assert!(group_slices(&ten, 5).unwrap().iter().all(|p| p.len() == 2));
        assert!(group_slices(&ten[..3], 5).is_err());
    }

    #[test]
    fn folds_partition_each_group() {
        let set = toy(400, 40);
        let folds = group_folds(&set, 5, 0.8, 9).unwrap();
        assert_eq!(folds.len(), 5);
        for f in &folds {
            assert_eq!(f.train_slices.len(), 6);
            assert_eq!(f.test_slices.len(), 2);
            let all: BTreeSet<usize> = f.train_slices.iter().chain(&f.test_slices).copied().collect();
            assert_eq!(all, (8 * f.group..8 * f.group + 8).collect());
            assert!(f.test.samples().iter().all(|s| f.test_slices.contains(&s.origin.slice())));
            assert_eq!(f.train.len() + f.test.len(), 80);
        }
    }

    #[test]
    fn normalization_round_trip() {
        let samples: Vec<Sample> = (0..20)
            .map(|m| Sample {
                features: vec![m as f64 * 0.37 - 2.0, 5.0, (m * m) as f64],
                label: 0,
                origin: Origin::Cls { i: m, k: 0 },
            })
            .collect();
        let set = SampleSet::new(Task::Classification, 3, samples).unwrap();
        let (tr, te) = split_random(&set, 0.8, 4).unwrap();
        let (ntr, nte, rec) = normalize(&tr, &te).unwrap();
        // constant feature is only shifted
        assert_eq!(rec.scale[1], 1.0);
        assert!(ntr.samples().iter().all(|s| s.features[1] == 0.0));
        assert_eq!(tr.normalized(&rec).unwrap(), ntr);
        for (a, b) in nte.samples().iter().zip(te.samples()) {
            let back = rec.invert(&a.features);
            for (x, y) in back.iter().zip(&b.features) {
                assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0));
            }
        }
        let mean: f64 = ntr.samples().iter().map(|s| s.features[0]).sum::<f64>() / ntr.len() as f64;
        assert!(mean.abs() < 1e-12);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        let g = FlowGrid::from_fn(ax(4), ax(3), ax(3), 1, 1.0, |_, x, y, z| [x * 0.1, y / 3.0, z + 1e-9]).unwrap();
        let set = extract_seg(&g, 0, &all_valid(g.dims())).unwrap();
        set.write_csv(&p).unwrap();
        let header = std::fs::read_to_string(&p).unwrap().lines().next().unwrap().to_string();
        assert_eq!(header.split(',').count(), 17);
        assert!(header.ends_with("f14,label,origin"));
        let back = SampleSet::read_csv(&p).unwrap();
        assert_eq!(back.samples(), set.samples());
    }
}
