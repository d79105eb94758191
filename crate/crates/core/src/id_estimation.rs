//! Intrinsic-dimension estimators.
//!
//! Two estimators are provided:
//!
//! - [`ph_dim_birdal`]: the growth rate of the total MST length `E(S_n)` over
//!   random subsets. For `n` uniform samples of a `d`-dimensional set,
//!   `E(S_n) ~ n^((d-1)/d)`, so the log-log slope `s` gives `d = 1 / (1 - s)`.
//! - [`twonn`]: the ratio of second to first nearest-neighbour distances,
//!   which is Pareto distributed with shape `d` for locally uniform data.
//!
//! Both share the least-squares slope kernel [`ls_slope`].

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{pairwise_distances, sample_indices, squared_distance, PointCloud};
use crate::tda::mst_subset;

/// Strictly increasing subset sizes `n_1 < ... < n_m`, with `m >= 2` and `n_1 >= 2`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsetSchedule {
    sizes: Vec<usize>,
}

impl SubsetSchedule {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::invalid(format!("a subset schedule needs at least two sizes, got {sizes:?}")));
        }
        if sizes[0] < 2 {
            return Err(Error::invalid("subset sizes must be at least 2"));
        }
        if sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid(format!("subset sizes must be strictly increasing, got {sizes:?}")));
        }
        Ok(Self { sizes })
    }

    /// `m` sizes `ceil(k * n / m)` for `k = 1..=m`, clamped to at least 2 and
    /// deduplicated. Fails when fewer than two distinct sizes survive.
    pub fn fractions_of(n: usize, m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::invalid("schedule length must be positive"));
        }
        let mut sizes: Vec<usize> = (1..=m).map(|k| (k * n).div_ceil(m).max(2).min(n)).collect();
        sizes.dedup();
        Self::new(sizes)
    }

    /// The four training sizes `{ceil(n/4), ceil(n/2), ceil(3n/4), n}`.
    pub fn training_default(n: usize) -> Result<Self> {
        Self::fractions_of(n, 4)
    }

    /// Eight sizes evenly spaced from `ceil(n/8)` to `n`.
    pub fn estimation_default(n: usize) -> Result<Self> {
        let lo = n.div_ceil(8).max(2);
        if n <= lo {
            return Err(Error::invalid(format!("cloud of {n} points is too small for a PH-dimension schedule")));
        }
        let mut sizes: Vec<usize> =
            (0..8).map(|k| lo + ((n - lo) as f64 * k as f64 / 7.0).round() as usize).collect();
        sizes.dedup();
        Self::new(sizes)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn len(&self) -> usize {
        self.sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }

    pub fn largest(&self) -> usize {
        *self.sizes.last().expect("schedule is non-empty")
    }

    /// `log n_i` for every size.
    pub fn log_sizes(&self) -> Vec<f64> {
        self.sizes.iter().map(|&s| (s as f64).ln()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdMethod {
    PhBirdal,
    Twonn,
}

impl fmt::Display for IdMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IdMethod::PhBirdal => "birdal",
            IdMethod::Twonn => "twonn",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdEstimate {
    pub slope: f64,
    /// `+inf` when the PH slope reaches 1 (see `saturated`).
    pub dimension: f64,
    pub method: IdMethod,
    /// Set when the slope was `>= 1` and the dimension is reported as `+inf`.
    pub saturated: bool,
}

/// Coefficients `w` with `ls_slope(xs, ys) = sum_i w_i * ys_i`.
///
/// `w_i = (m x_i - sum x) / (m sum x^2 - (sum x)^2)`.
pub fn ls_weights(xs: &[f64]) -> Result<Vec<f64>> {
    let m = xs.len() as f64;
    if xs.len() < 2 {
        return Err(Error::invalid("least-squares slope needs at least two points"));
    }
    let sx: f64 = xs.iter().sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let denom = m * sxx - sx * sx;
    let spread = xs.iter().fold(0.0f64, |acc, x| acc.max((x - sx / m).abs()));
    if spread == 0.0 || denom <= 0.0 {
        return Err(Error::degenerate("least-squares slope: abscissae have zero variance"));
    }
    Ok(xs.iter().map(|x| (m * x - sx) / denom).collect())
}

/// Least-squares slope `(m Σxy − Σx Σy) / (m Σx² − (Σx)²)`.
pub fn ls_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::invalid(format!("slope inputs differ in length: {} vs {}", xs.len(), ys.len())));
    }
    if xs.len() < 2 {
        return Err(Error::invalid("least-squares slope needs at least two points"));
    }
    let m = xs.len() as f64;
    let sx: f64 = xs.iter().sum();
    let sy: f64 = ys.iter().sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let denom = m * sxx - sx * sx;
    if xs.iter().all(|&x| x == xs[0]) || denom <= 0.0 {
        return Err(Error::degenerate("least-squares slope: abscissae have zero variance"));
    }
    Ok((m * sxy - sx * sy) / denom)
}

/// PH-dimension estimate from the growth of `E(S_n)`.
///
/// For each size in `schedule`, `reps` subsets are drawn and `log E` is
/// averaged; the slope `s` of mean `log E` against `log n` is converted to a
/// dimension `1 / (1 - s)`.
pub fn ph_dim_birdal<R: Rng + ?Sized>(
    cloud: &PointCloud,
    schedule: &SubsetSchedule,
    reps: usize,
    rng: &mut R,
) -> Result<IdEstimate> {
    if reps == 0 {
        return Err(Error::invalid("ph_dim_birdal needs at least one repetition"));
    }
    if cloud.len() < schedule.largest() {
        return Err(Error::invalid(format!(
            "cloud has {} points but the schedule needs {}",
            cloud.len(),
            schedule.largest()
        )));
    }
    let dm = pairwise_distances(cloud);
    let mut mean_log_e = Vec::with_capacity(schedule.len());
    for &size in schedule.sizes() {
        let mut acc = 0.0;
        for _ in 0..reps {
            let subset = sample_indices(cloud.len(), size, rng)?;
            let e = mst_subset(&dm, &subset).total_length;
            if e <= 0.0 {
                return Err(Error::degenerate(format!("E(S_n) = 0 for a subset of size {size}: points coincide")));
            }
            acc += e.ln();
        }
        mean_log_e.push(acc / reps as f64);
    }
    let slope = ls_slope(&schedule.log_sizes(), &mean_log_e)?;
    let (dimension, saturated) = if slope >= 1.0 { (f64::INFINITY, true) } else { ((1.0 / (1.0 - slope)).max(0.0), false) };
    Ok(IdEstimate { slope, dimension, method: IdMethod::PhBirdal, saturated })
}

/// TwoNN estimate.
///
/// Exact duplicate points are removed first. With `mu_i = r2(i) / r1(i)`, the
/// largest `truncation` fraction of `mu` is treated as right-censored at the
/// largest kept value, giving the maximum-likelihood estimate
/// `N_kept / (Σ_kept log mu_i + N_dropped · log mu_cut)`. With `truncation = 0`
/// this is the plain `N / Σ log mu_i`.
pub fn twonn(cloud: &PointCloud, truncation: f64) -> Result<IdEstimate> {
    if !(0.0..1.0).contains(&truncation) {
        return Err(Error::invalid(format!("truncation must lie in [0, 1), got {truncation}")));
    }
    let points = dedup_rows(cloud);
    let n = points.len();
    if n < 3 {
        return Err(Error::invalid(format!("TwoNN needs at least 3 distinct points, got {n}")));
    }

    let mut mu = Vec::with_capacity(n);
    for i in 0..n {
        let (mut r1, mut r2) = (f64::INFINITY, f64::INFINITY);
        for j in 0..n {
            if i == j {
                continue;
            }
            let s = squared_distance(points[i], points[j]);
            if s < r1 {
                r2 = r1;
                r1 = s;
            } else if s < r2 {
                r2 = s;
            }
        }
        if r1 == 0.0 {
            return Err(Error::degenerate("TwoNN: zero nearest-neighbour distance"));
        }
        mu.push((r2 / r1).sqrt());
    }
    mu.sort_by(f64::total_cmp);
    let kept = ((n as f64) * (1.0 - truncation)).floor().max(1.0) as usize;
    let dropped = n - kept;
    let mut log_sum: f64 = mu[..kept].iter().map(|m| m.ln()).sum();
    if dropped > 0 {
        log_sum += dropped as f64 * mu[kept - 1].ln();
    }
    if log_sum <= 0.0 {
        return Err(Error::degenerate("TwoNN: all neighbour ratios equal 1"));
    }
    let dimension = kept as f64 / log_sum;
    Ok(IdEstimate { slope: dimension, dimension, method: IdMethod::Twonn, saturated: false })
}

fn dedup_rows(cloud: &PointCloud) -> Vec<&[f64]> {
    let d = cloud.dim();
    let mut rows: Vec<&[f64]> = cloud.as_slice().chunks(d).collect();
    rows.sort_by(|a, b| {
        a.iter().zip(b.iter()).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
    });
    rows.dedup();
    rows
}
