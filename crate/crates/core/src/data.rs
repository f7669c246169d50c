//! Seeded toy datasets.

use std::f64::consts::PI;
use std::str::FromStr;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::MixtureSpec;
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetName {
    Gaussian,
    GmmRing,
    TwoMoons,
    Checkerboard,
    Spiral,
}

impl DatasetName {
    pub const ALL: [DatasetName; 5] = [
        DatasetName::Gaussian,
        DatasetName::GmmRing,
        DatasetName::TwoMoons,
        DatasetName::Checkerboard,
        DatasetName::Spiral,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DatasetName::Gaussian => "gaussian",
            DatasetName::GmmRing => "gmm_ring",
            DatasetName::TwoMoons => "two_moons",
            DatasetName::Checkerboard => "checkerboard",
            DatasetName::Spiral => "spiral",
        }
    }
}

impl FromStr for DatasetName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DatasetName::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| {
                Error::arg(format!(
                    "unknown dataset `{s}` (expected one of gaussian, gmm_ring, two_moons, checkerboard, spiral)"
                ))
            })
    }
}

/// Generator parameters. Unset fields take per-dataset defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetParams {
    /// Dimension (gaussian only; the others are 2-D).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    /// Component standard deviation (gaussian, gmm_ring).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
    /// Number of ring components.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    /// Ring radius.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    /// Additive noise (two_moons, spiral).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<f64>,
}

impl DatasetParams {
    pub fn gmm_ring(k: usize, radius: f64, scale: f64) -> Self {
        DatasetParams {
            k: Some(k),
            radius: Some(radius),
            scale: Some(scale),
            ..Default::default()
        }
    }

    pub fn gaussian(dim: usize, scale: f64) -> Self {
        DatasetParams {
            dim: Some(dim),
            scale: Some(scale),
            ..Default::default()
        }
    }

    fn scale(&self) -> f64 {
        self.scale.unwrap_or(1.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// `(count, dim)`; row `i` is example id `i`.
    pub points: Array2<f64>,
    pub name: String,
    pub seed: u64,
}

impl Dataset {
    pub fn from_points(points: Array2<f64>, name: impl Into<String>, seed: u64) -> Result<Self> {
        if points.nrows() == 0 || points.ncols() == 0 {
            return Err(Error::arg("dataset must be non-empty"));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("dataset contains non-finite values"));
        }
        Ok(Dataset {
            points,
            name: name.into(),
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn row(&self, id: usize) -> &[f64] {
        let d = self.dim();
        &self.points.as_slice().expect("standard layout")[id * d..(id + 1) * d]
    }

    /// Center every coordinate and divide by one pooled standard deviation.
    ///
    /// A single scale keeps isotropic mixtures isotropic, so the analytic
    /// oracles still apply after transforming them with the same map.
    pub fn standardized(&self) -> (Dataset, Standardization) {
        let mean = self.points.mean_axis(Axis(0)).expect("non-empty");
        let centered = &self.points - &mean;
        let var = centered.iter().map(|v| v * v).sum::<f64>() / centered.len() as f64;
        let scale = var.sqrt().max(f64::MIN_POSITIVE);
        let st = Standardization {
            mean: mean.to_vec(),
            scale,
        };
        let ds = Dataset {
            points: centered / scale,
            name: self.name.clone(),
            seed: self.seed,
        };
        (ds, st)
    }

    /// Write the points in the samples CSV format (`dim0,...`).
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> std::io::Result<()> {
        write_samples_csv(&self.points, out)
    }
}

/// Per-coordinate shift and one global scale: `y = (x - mean) / scale`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub scale: f64,
}

impl Standardization {
    /// Map another dataset (e.g. the held-out split) into the same coordinates.
    pub fn apply(&self, ds: &Dataset) -> Result<Dataset> {
        if ds.dim() != self.mean.len() {
            return Err(Error::arg("standardization and dataset dimensions differ"));
        }
        let mean = Array1::from(self.mean.clone());
        Dataset::from_points((&ds.points - &mean) / self.scale, ds.name.clone(), ds.seed)
    }

    /// Map standardized points back to data coordinates.
    pub fn invert(&self, points: &Array2<f64>) -> Array2<f64> {
        points * self.scale + &Array1::from(self.mean.clone())
    }

    pub fn apply_mixture(&self, mix: &MixtureSpec) -> MixtureSpec {
        MixtureSpec {
            weights: mix.weights.clone(),
            means: mix
                .means
                .iter()
                .map(|m| {
                    m.iter()
                        .zip(&self.mean)
                        .map(|(v, c)| (v - c) / self.scale)
                        .collect()
                })
                .collect(),
            scales: mix.scales.iter().map(|s| s / self.scale).collect(),
        }
    }
}

/// The analytic mixture a dataset is drawn from, when one exists.
pub fn analytic_mixture(name: DatasetName, params: &DatasetParams) -> Result<MixtureSpec> {
    match name {
        DatasetName::Gaussian => {
            let dim = params.dim.unwrap_or(1);
            MixtureSpec::new(vec![1.0], vec![vec![0.0; dim]], vec![params.scale()])
        }
        DatasetName::GmmRing => {
            let (k, radius) = ring_shape(params)?;
            let means = (0..k)
                .map(|i| {
                    let angle = 2.0 * PI * i as f64 / k as f64;
                    vec![radius * angle.cos(), radius * angle.sin()]
                })
                .collect();
            MixtureSpec::new(vec![1.0 / k as f64; k], means, vec![params.scale(); k])
        }
        other => Err(Error::Unsupported(format!(
            "dataset `{}` has no analytic score",
            other.as_str()
        ))),
    }
}

fn ring_shape(params: &DatasetParams) -> Result<(usize, f64)> {
    let k = params.k.unwrap_or(8);
    let radius = params.radius.unwrap_or(4.0);
    if k < 1 {
        return Err(Error::arg("gmm_ring needs k >= 1"));
    }
    Ok((k, radius))
}

/// Generate `count` points. Deterministic in `(name, count, params, seed)`.
pub fn make_dataset(
    name: DatasetName,
    count: usize,
    params: &DatasetParams,
    seed: u64,
) -> Result<Dataset> {
    if count < 1 {
        return Err(Error::arg("count must be at least 1"));
    }
    if params.scale.is_some_and(|s| !(s > 0.0)) {
        return Err(Error::arg("scale must be positive"));
    }
    let mut r = rng::stream(seed, 0);
    let points = match name {
        DatasetName::Gaussian => {
            let dim = params.dim.unwrap_or(1);
            if dim < 1 {
                return Err(Error::arg("gaussian needs dim >= 1"));
            }
            let s = params.scale();
            Array2::from_shape_fn((count, dim), |_| s * normal(&mut r))
        }
        DatasetName::GmmRing => {
            let mix = analytic_mixture(name, params)?;
            mix.sample(count, &mut r)
        }
        DatasetName::TwoMoons => {
            let noise = params.noise.unwrap_or(0.1);
            let mut pts = Array2::zeros((count, 2));
            for mut row in pts.rows_mut() {
                let angle = PI * r.random::<f64>();
                let (x, y) = if r.random::<bool>() {
                    (angle.cos(), angle.sin())
                } else {
                    (1.0 - angle.cos(), 0.5 - angle.sin())
                };
                row[0] = x + noise * normal(&mut r);
                row[1] = y + noise * normal(&mut r);
            }
            pts
        }
        DatasetName::Checkerboard => {
            let mut pts = Array2::zeros((count, 2));
            for mut row in pts.rows_mut() {
                // Four columns of unit cells in [-2, 2]²; alternate rows shifted.
                let x = 4.0 * r.random::<f64>() - 2.0;
                let y = r.random::<f64>() - 2.0 + 2.0 * f64::from(r.random_range(0..2u8));
                row[0] = x;
                row[1] = y + (x.floor().rem_euclid(2.0));
            }
            pts
        }
        DatasetName::Spiral => {
            let noise = params.noise.unwrap_or(0.1);
            let mut pts = Array2::zeros((count, 2));
            for mut row in pts.rows_mut() {
                let u: f64 = r.random();
                let angle = 3.0 * PI * u.sqrt();
                let rad = angle / PI;
                row[0] = rad * angle.cos() + noise * normal(&mut r);
                row[1] = rad * angle.sin() + noise * normal(&mut r);
            }
            pts
        }
    };
    Dataset::from_points(points, name.as_str(), seed)
}

/// Split off a held-out fraction. Train ids are re-densified (`0..n_train`);
/// both splits keep the original relative order.
pub fn holdout_split(ds: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::arg(format!(
            "holdout fraction must be in (0, 1), got {fraction}"
        )));
    }
    let n = ds.len();
    if n < 2 {
        return Err(Error::arg("need at least two points to split"));
    }
    let n_test = ((n as f64 * fraction).round() as usize).clamp(1, n - 1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, 5));
    let mut test_idx = idx[..n_test].to_vec();
    let mut train_idx = idx[n_test..].to_vec();
    test_idx.sort_unstable();
    train_idx.sort_unstable();
    let take = |ids: &[usize]| {
        let pts = ds.points.select(Axis(0), ids);
        Dataset {
            points: pts,
            name: ds.name.clone(),
            seed: ds.seed,
        }
    };
    Ok((take(&train_idx), take(&test_idx)))
}

fn normal<R: Rng + ?Sized>(r: &mut R) -> f64 {
    StandardNormal.sample(r)
}

/// Samples CSV: header `dim0,...,dim{d-1}`, one row per point.
pub fn write_samples_csv<W: std::io::Write>(points: &Array2<f64>, mut out: W) -> std::io::Result<()> {
    let header: Vec<String> = (0..points.ncols()).map(|j| format!("dim{j}")).collect();
    writeln!(out, "{}", header.join(","))?;
    for row in points.rows() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        writeln!(out, "{}", cells.join(","))?;
    }
    Ok(())
}

/// Column means, used by a few tests and reports.
pub fn column_means(points: &Array2<f64>) -> Array1<f64> {
    points.mean_axis(Axis(0)).expect("non-empty")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_std() {
        let ds = make_dataset(DatasetName::Gaussian, 100_000, &DatasetParams::gaussian(1, 1.0), 3)
            .unwrap();
        let m = column_means(&ds.points)[0];
        let var = ds.points.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (ds.len() - 1) as f64;
        assert!((0.99..=1.01).contains(&var.sqrt()));
    }

    #[test]
    fn generators_are_deterministic() {
        for name in DatasetName::ALL {
            let a = make_dataset(name, 500, &DatasetParams::default(), 7).unwrap();
            let b = make_dataset(name, 500, &DatasetParams::default(), 7).unwrap();
            assert_eq!(a, b, "{}", name.as_str());
            assert!(a.points.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn ring_component_means() {
        let params = DatasetParams::gmm_ring(8, 4.0, 0.3);
        let ds = make_dataset(DatasetName::GmmRing, 80_000, &params, 1).unwrap();
        let mix = analytic_mixture(DatasetName::GmmRing, &params).unwrap();
        // Assign each point to its nearest mean; components are 3 apart vs s = 0.3.
        let mut sums = vec![[0.0f64; 2]; 8];
        let mut counts = vec![0usize; 8];
        for row in ds.points.rows() {
            let k = (0..8)
                .min_by(|&a, &b| {
                    let da = (row[0] - mix.means[a][0]).hypot(row[1] - mix.means[a][1]);
                    let db = (row[0] - mix.means[b][0]).hypot(row[1] - mix.means[b][1]);
                    da.total_cmp(&db)
                })
                .unwrap();
            sums[k][0] += row[0];
            sums[k][1] += row[1];
            counts[k] += 1;
        }
        for k in 0..8 {
            let m = [sums[k][0] / counts[k] as f64, sums[k][1] / counts[k] as f64];
            assert!((m[0] - mix.means[k][0]).hypot(m[1] - mix.means[k][1]) < 0.05);
        }
    }

    #[test]
    fn unknown_name_rejected() {
        assert!(matches!("moons".parse::<DatasetName>(), Err(Error::Argument(_))));
        assert_eq!("gmm_ring".parse::<DatasetName>().unwrap(), DatasetName::GmmRing);
    }

    #[test]
    fn split_sizes_and_union() {
        let ds = make_dataset(DatasetName::Gaussian, 100, &DatasetParams::default(), 2).unwrap();
        let (train, test) = holdout_split(&ds, 0.5, 9).unwrap();
        assert_eq!((train.len(), test.len()), (50, 50));
        let mut all: Vec<f64> = train.points.iter().chain(test.points.iter()).copied().collect();
        let mut orig: Vec<f64> = ds.points.iter().copied().collect();
        all.sort_by(f64::total_cmp);
        orig.sort_by(f64::total_cmp);
        assert_eq!(all, orig);
        let (train2, test2) = holdout_split(&ds, 0.5, 9).unwrap();
        assert_eq!((train, test), (train2, test2));
    }

    #[test]
    fn split_fraction_checked() {
        let ds = make_dataset(DatasetName::Gaussian, 10, &DatasetParams::default(), 2).unwrap();
        assert!(holdout_split(&ds, 0.0, 1).is_err());
        assert!(holdout_split(&ds, 1.0, 1).is_err());
    }

    #[test]
    fn standardization_maps_mixture() {
        let params = DatasetParams::gmm_ring(8, 4.0, 0.3);
        let ds = make_dataset(DatasetName::GmmRing, 1000, &params, 1).unwrap();
        let (std_ds, st) = ds.standardized();
        let var = std_ds.points.iter().map(|v| v * v).sum::<f64>() / std_ds.points.len() as f64;
        assert!((var - 1.0).abs() < 1e-12);
        let mix = st.apply_mixture(&analytic_mixture(DatasetName::GmmRing, &params).unwrap());
        assert!((mix.scales[0] - 0.3 / st.scale).abs() < 1e-15);
    }

    #[test]
    fn standardization_apply_and_invert() {
        let ds = make_dataset(DatasetName::GmmRing, 500, &DatasetParams::default(), 3).unwrap();
        let (std_ds, st) = ds.standardized();
        let again = st.apply(&ds).unwrap();
        assert_eq!(again.points, std_ds.points);
        let back = st.invert(&std_ds.points);
        for (a, b) in back.iter().zip(ds.points.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        let other = make_dataset(DatasetName::Gaussian, 10, &DatasetParams::gaussian(3, 1.0), 3).unwrap();
        assert!(st.apply(&other).is_err());
    }
}
