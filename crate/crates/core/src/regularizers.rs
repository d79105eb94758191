//! Persistent-homology regularizers on a feature batch `Z` paired with targets `Y`.
//!
//! - [`loss_ld_prime`]: the least-squares slope of `log E(Z_{n_i})` against
//!   `log n_i`, which lowers the PH dimension of the features.
//! - [`loss_ld`]: `|slope|` of `e_i = log E(Z_{n_i}) / log E(Y_{n_i})`
//!   against `log n_i`, which pulls the feature dimension towards the target's.
//! - [`loss_lt`]: squared mismatch between feature and target distances on
//!   the MST edges of both spaces, divided by the batch size.
//!
//! Gradients hold the MST edge sets fixed. The selection is piecewise
//! constant, so away from ties the returned gradient is exact.

use std::cell::OnceCell;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{pairwise_distances, sample_indices, DistanceMatrix, PointCloud};
use crate::id_estimation::{ls_slope, ls_weights, SubsetSchedule};
use crate::tda::{mst, mst_subset, MstResult};

/// Smallest admissible `|log E(Y_n)|` in the `L_d` ratio.
pub const LOG_TARGET_GUARD: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct RegularizerOutput {
    pub value: f64,
    /// `∂value/∂Z`, shaped like the feature batch.
    pub grad_z: Array2<f64>,
}

impl RegularizerOutput {
    pub fn zeros(n: usize, d: usize) -> Self {
        Self { value: 0.0, grad_z: Array2::zeros((n, d)) }
    }

    fn add_scaled(&mut self, other: &RegularizerOutput, weight: f64) {
        self.value += weight * other.value;
        self.grad_z.scaled_add(weight, &other.grad_z);
    }
}

/// Which dimension term enters [`combined_loss`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DimensionLoss {
    Ld,
    LdPrime,
}

/// Features and targets of one batch plus the subsets used by the dimension
/// losses. Subset `k` has `schedule.sizes()[k]` indices and selects the same
/// rows from `z` and `y`.
#[derive(Debug, Clone)]
pub struct BatchPair {
    z: PointCloud,
    y: PointCloud,
    schedule: Option<SubsetSchedule>,
    subsets: Vec<Vec<usize>>,
}

impl BatchPair {
    /// Pairs `z` with `y` and draws one subset per schedule size. A subset as
    /// large as the batch is the batch itself, in order.
    pub fn new<R: Rng + ?Sized>(z: PointCloud, y: PointCloud, schedule: SubsetSchedule, rng: &mut R) -> Result<Self> {
        check_pairing(&z, &y)?;
        let n = z.len();
        if schedule.largest() > n {
            return Err(Error::invalid(format!("schedule size {} exceeds batch of {n}", schedule.largest())));
        }
        let subsets = schedule
            .sizes()
            .iter()
            .map(|&size| if size == n { Ok((0..n).collect()) } else { sample_indices(n, size, rng) })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { z, y, schedule: Some(schedule), subsets })
    }

    /// Uses caller-supplied subsets.
    pub fn with_subsets(z: PointCloud, y: PointCloud, schedule: SubsetSchedule, subsets: Vec<Vec<usize>>) -> Result<Self> {
        check_pairing(&z, &y)?;
        if subsets.len() != schedule.len() {
            return Err(Error::invalid(format!("{} subsets for a schedule of {} sizes", subsets.len(), schedule.len())));
        }
        let n = z.len();
        for (subset, &size) in subsets.iter().zip(schedule.sizes()) {
            if subset.len() != size {
                return Err(Error::invalid(format!("subset has {} indices, schedule says {size}", subset.len())));
            }
            let mut seen = vec![false; n];
            for &i in subset {
                if i >= n || std::mem::replace(&mut seen[i], true) {
                    return Err(Error::invalid(format!("subset index {i} out of range or repeated")));
                }
            }
        }
        Ok(Self { z, y, schedule: Some(schedule), subsets })
    }

    /// A batch without a subset schedule; only [`loss_lt`] can use it.
    pub fn topology_only(z: PointCloud, y: PointCloud) -> Result<Self> {
        check_pairing(&z, &y)?;
        Ok(Self { z, y, schedule: None, subsets: Vec::new() })
    }

    pub fn z(&self) -> &PointCloud {
        &self.z
    }

    pub fn y(&self) -> &PointCloud {
        &self.y
    }

    pub fn schedule(&self) -> Option<&SubsetSchedule> {
        self.schedule.as_ref()
    }

    pub fn subsets(&self) -> &[Vec<usize>] {
        &self.subsets
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Same batch with replaced features (subsets kept).
    pub fn with_features(&self, z: PointCloud) -> Result<Self> {
        if z.len() != self.z.len() {
            return Err(Error::invalid("replacement features change the batch size"));
        }
        Ok(Self { z, ..self.clone() })
    }
}

fn check_pairing(z: &PointCloud, y: &PointCloud) -> Result<()> {
    if z.len() != y.len() {
        return Err(Error::invalid(format!("{} features paired with {} targets", z.len(), y.len())));
    }
    Ok(())
}

/// Distance matrices and full-batch trees shared by the losses of one call.
struct Workspace<'a> {
    batch: &'a BatchPair,
    dz: DistanceMatrix,
    dy: DistanceMatrix,
    full_z: OnceCell<MstResult>,
    full_y: OnceCell<MstResult>,
}

impl<'a> Workspace<'a> {
    fn new(batch: &'a BatchPair) -> Self {
        Self {
            batch,
            dz: pairwise_distances(&batch.z),
            dy: pairwise_distances(&batch.y),
            full_z: OnceCell::new(),
            full_y: OnceCell::new(),
        }
    }

    fn full_z(&self) -> &MstResult {
        self.full_z.get_or_init(|| mst(&self.dz))
    }

    fn full_y(&self) -> &MstResult {
        self.full_y.get_or_init(|| mst(&self.dy))
    }

    fn is_whole_batch(&self, subset: &[usize]) -> bool {
        subset.len() == self.batch.len() && subset.iter().enumerate().all(|(k, &i)| k == i)
    }

    fn tree_z(&self, subset: &[usize]) -> MstResult {
        if self.is_whole_batch(subset) { self.full_z().clone() } else { mst_subset(&self.dz, subset) }
    }

    fn total_y(&self, subset: &[usize]) -> f64 {
        if self.is_whole_batch(subset) { self.full_y().total_length } else { mst_subset(&self.dy, subset).total_length }
    }

    fn dimension(&self, variant: DimensionLoss) -> Result<RegularizerOutput> {
        let batch = self.batch;
        let schedule = batch
            .schedule
            .as_ref()
            .ok_or_else(|| Error::invalid("dimension loss needs a subset schedule with at least two sizes"))?;
        let log_n = schedule.log_sizes();
        let weights = ls_weights(&log_n)?;

        let mut trees = Vec::with_capacity(schedule.len());
        let mut ratios = Vec::with_capacity(schedule.len());
        let mut log_targets = Vec::with_capacity(schedule.len());
        for subset in &batch.subsets {
            let tree = self.tree_z(subset);
            if tree.total_length <= 0.0 {
                return Err(Error::degenerate(format!(
                    "E(Z_n) = 0 for the subset of size {}: feature points coincide",
                    subset.len()
                )));
            }
            let log_ez = tree.total_length.ln();
            let log_ey = match variant {
                DimensionLoss::LdPrime => 1.0,
                DimensionLoss::Ld => {
                    let ey = self.total_y(subset);
                    let log_ey = ey.ln();
                    if !(log_ey.abs() >= LOG_TARGET_GUARD) {
                        return Err(Error::DegenerateTarget { size: subset.len(), log_e: log_ey });
                    }
                    log_ey
                }
            };
            ratios.push(log_ez / log_ey);
            log_targets.push(log_ey);
            trees.push(tree);
        }

        let slope = ls_slope(&log_n, &ratios)?;
        let (value, outer) = match variant {
            DimensionLoss::LdPrime => (slope, 1.0),
            // Subgradient 0 at the kink.
            DimensionLoss::Ld => (slope.abs(), if slope > 0.0 { 1.0 } else if slope < 0.0 { -1.0 } else { 0.0 }),
        };

        let mut grad = Array2::zeros((batch.len(), batch.z.dim()));
        if outer != 0.0 {
            for ((tree, w), log_ey) in trees.iter().zip(&weights).zip(&log_targets) {
                // d value / d E(Z_n) for this subset.
                let coef = outer * w / (tree.total_length * log_ey);
                for edge in &tree.edges {
                    accumulate_edge(&mut grad, &batch.z, edge.i, edge.j, edge.length, coef);
                }
            }
        }
        Ok(RegularizerOutput { value, grad_z: grad })
    }

    fn topology(&self) -> RegularizerOutput {
        let batch = self.batch;
        let scale = 1.0 / batch.len() as f64;
        let mut value = 0.0;
        let mut grad = Array2::zeros((batch.len(), batch.z.dim()));
        for tree in [self.full_z(), self.full_y()] {
            for edge in &tree.edges {
                let dz = self.dz.get(edge.i, edge.j);
                let diff = dz - self.dy.get(edge.i, edge.j);
                value += diff * diff;
                accumulate_edge(&mut grad, &batch.z, edge.i, edge.j, dz, 2.0 * scale * diff);
            }
        }
        RegularizerOutput { value: scale * value, grad_z: grad }
    }
}

/// Adds `coef * ∂‖z_i − z_j‖/∂Z` to `grad`. Zero-length edges contribute nothing.
fn accumulate_edge(grad: &mut Array2<f64>, z: &PointCloud, i: usize, j: usize, length: f64, coef: f64) {
    if length <= 0.0 || coef == 0.0 {
        return;
    }
    let scale = coef / length;
    let (zi, zj) = (z.row(i), z.row(j));
    for k in 0..z.dim() {
        let g = scale * (zi[k] - zj[k]);
        grad[[i, k]] += g;
        grad[[j, k]] -= g;
    }
}

/// Slope of `log E(Z_{n_i})` against `log n_i`.
pub fn loss_ld_prime(batch: &BatchPair) -> Result<RegularizerOutput> {
    Workspace::new(batch).dimension(DimensionLoss::LdPrime)
}

/// `|slope|` of `log E(Z_{n_i}) / log E(Y_{n_i})` against `log n_i`.
pub fn loss_ld(batch: &BatchPair) -> Result<RegularizerOutput> {
    Workspace::new(batch).dimension(DimensionLoss::Ld)
}

/// `(‖A^Z[π^Z] − A^Y[π^Z]‖² + ‖A^Z[π^Y] − A^Y[π^Y]‖²) / n` on the whole
/// batch of `n` points, where `π` are the MST edge sets and `A` the distance
/// matrices.
pub fn loss_lt(batch: &BatchPair) -> Result<RegularizerOutput> {
    if batch.len() < 2 {
        return Err(Error::invalid("topology loss needs at least two points"));
    }
    Ok(Workspace::new(batch).topology())
}

/// `λ_t · L_t + λ_d · L_{d}` (or `L'_d`). Terms with a zero weight are not evaluated.
pub fn combined_loss(batch: &BatchPair, lambda_d: f64, lambda_t: f64, variant: DimensionLoss) -> Result<RegularizerOutput> {
    if !(lambda_d >= 0.0 && lambda_t >= 0.0) {
        return Err(Error::invalid(format!("weights must be non-negative, got λ_d={lambda_d}, λ_t={lambda_t}")));
    }
    let mut out = RegularizerOutput::zeros(batch.len(), batch.z.dim());
    if lambda_d == 0.0 && lambda_t == 0.0 {
        return Ok(out);
    }
    let ws = Workspace::new(batch);
    if lambda_t > 0.0 {
        if batch.len() < 2 {
            return Err(Error::invalid("topology loss needs at least two points"));
        }
        out.add_scaled(&ws.topology(), lambda_t);
    }
    if lambda_d > 0.0 {
        out.add_scaled(&ws.dimension(variant)?, lambda_d);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn random_cloud(n: usize, d: usize, seed: u64) -> PointCloud {
        let mut rng = seeded(seed);
        PointCloud::from_flat(n, d, (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn schedule(sizes: &[usize]) -> SubsetSchedule {
        SubsetSchedule::new(sizes.to_vec()).unwrap()
    }

    /// Prim's algorithm on explicit coordinates, independent of `tda`.
    fn prim_edges(points: &PointCloud) -> Vec<(usize, usize)> {
        let n = points.len();
        let dist = |a: usize, b: usize| {
            points.row(a).iter().zip(points.row(b).iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
        };
        let mut in_tree = vec![false; n];
        let mut best = vec![(f64::INFINITY, 0usize); n];
        in_tree[0] = true;
        for v in 1..n {
            best[v] = (dist(0, v), 0);
        }
        let mut edges = Vec::new();
        for _ in 1..n {
            let v = (0..n).filter(|&v| !in_tree[v]).min_by(|&a, &b| best[a].0.total_cmp(&best[b].0)).unwrap();
            in_tree[v] = true;
            edges.push((best[v].1, v));
            for u in 0..n {
                if !in_tree[u] && dist(v, u) < best[u].0 {
                    best[u] = (dist(v, u), v);
                }
            }
        }
        edges
    }

    fn rotate_3d(cloud: &PointCloud, angle: f64) -> PointCloud {
        let (s, c) = angle.sin_cos();
        let rows: Vec<[f64; 3]> = (0..cloud.len())
            .map(|i| {
                let r = cloud.row(i);
                [c * r[0] - s * r[1], s * r[0] + c * r[1], r[2]]
            })
            .collect();
        PointCloud::from_rows(&rows).unwrap()
    }

    #[test]
    fn all_losses_vanish_when_features_equal_targets() {
        let y = random_cloud(30, 3, 1);
        let batch = BatchPair::new(y.clone(), y.clone(), schedule(&[8, 15, 22, 30]), &mut seeded(2)).unwrap();
        let ld = loss_ld(&batch).unwrap();
        assert!(ld.value.abs() <= 1e-12);
        assert!(ld.grad_z.iter().all(|g| g.is_finite()));
        let lt = loss_lt(&batch).unwrap();
        assert!(lt.value.abs() <= 1e-12);
        assert!(lt.grad_z.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn topology_loss_ignores_rotation() {
        let y = random_cloud(25, 3, 3);
        let z = rotate_3d(&y, 0.7);
        let lt = loss_lt(&BatchPair::topology_only(z, y).unwrap()).unwrap();
        assert!(lt.value <= 1e-9, "{}", lt.value);
    }

    #[test]
    fn topology_loss_matches_independent_recomputation() {
        let z = random_cloud(10, 2, 4);
        let y = random_cloud(10, 3, 5);
        let dist = |c: &PointCloud, a: usize, b: usize| {
            c.row(a).iter().zip(c.row(b).iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
        };
        let mut expected = 0.0;
        for tree in [prim_edges(&z), prim_edges(&y)] {
            for (a, b) in tree {
                expected += (dist(&z, a, b) - dist(&y, a, b)).powi(2);
            }
        }
        expected /= 10.0;
        let got = loss_lt(&BatchPair::topology_only(z, y).unwrap()).unwrap().value;
        assert!((got - expected).abs() <= 1e-10 * expected.max(1.0), "{got} vs {expected}");
    }

    #[test]
    fn ld_prime_with_two_sizes_is_a_two_point_slope() {
        let z = random_cloud(20, 3, 6);
        let subsets = vec![vec![0, 3, 5, 7, 9, 11, 13, 17], (0..20).collect()];
        let batch = BatchPair::with_subsets(z.clone(), z.clone(), schedule(&[8, 20]), subsets.clone()).unwrap();
        let e_small = mst_subset(&pairwise_distances(&z), &subsets[0]).total_length;
        let e_full = mst(&pairwise_distances(&z)).total_length;
        let expected = (e_full.ln() - e_small.ln()) / (20f64.ln() - 8f64.ln());
        assert!((loss_ld_prime(&batch).unwrap().value - expected).abs() < 1e-12);
    }

    #[test]
    fn ld_prime_on_uniform_square_is_near_one_half() {
        let z = random_cloud(1000, 2, 7);
        let sched = SubsetSchedule::fractions_of(1000, 8).unwrap();
        let batch = BatchPair::new(z.clone(), z, sched, &mut seeded(8)).unwrap();
        let slope = loss_ld_prime(&batch).unwrap().value;
        assert!((slope - 0.5).abs() < 0.1, "slope {slope}");
    }

    #[test]
    fn ld_is_positive_for_scaled_features() {
        let y = random_cloud(50, 3, 9);
        let z = y.scaled(3.0).unwrap();
        let batch = BatchPair::new(z, y, schedule(&[12, 25, 38, 50]), &mut seeded(10)).unwrap();
        assert!(loss_ld(&batch).unwrap().value > 1e-6);
    }

    #[test]
    fn combined_loss_is_the_weighted_sum() {
        let z = random_cloud(40, 4, 11);
        let y = random_cloud(40, 3, 12);
        let batch = BatchPair::new(z, y, SubsetSchedule::training_default(40).unwrap(), &mut seeded(0)).unwrap();

        let zero = combined_loss(&batch, 0.0, 0.0, DimensionLoss::Ld).unwrap();
        assert_eq!(zero.value, 0.0);
        assert!(zero.grad_z.iter().all(|&g| g == 0.0));

        let lt = loss_lt(&batch).unwrap();
        let only_t = combined_loss(&batch, 0.0, 100.0, DimensionLoss::Ld).unwrap();
        assert_eq!(only_t.value, 100.0 * lt.value);
        assert_eq!(only_t.grad_z, &lt.grad_z * 100.0);

        let ld = loss_ld(&batch).unwrap();
        let both = combined_loss(&batch, 10.0, 100.0, DimensionLoss::Ld).unwrap();
        assert!((both.value - (10.0 * ld.value + 100.0 * lt.value)).abs() <= 1e-10);
        let expected_grad = &ld.grad_z * 10.0 + &lt.grad_z * 100.0;
        assert!(both.grad_z.iter().zip(expected_grad.iter()).all(|(a, b)| (a - b).abs() <= 1e-10));

        let prime = combined_loss(&batch, 1.0, 0.0, DimensionLoss::LdPrime).unwrap();
        assert_eq!(prime.value, loss_ld_prime(&batch).unwrap().value);

        assert!(combined_loss(&batch, -1.0, 0.0, DimensionLoss::Ld).is_err());
    }

    #[test]
    fn unit_target_tree_is_rejected() {
        let y = PointCloud::from_rows(&[[0.0, 0.0, 0.0], [0.5, 0.0, 0.0], [1.0, 0.0, 0.0]]).unwrap();
        let z = random_cloud(3, 2, 13);
        let batch = BatchPair::with_subsets(z, y, schedule(&[2, 3]), vec![vec![0, 1], vec![0, 1, 2]]).unwrap();
        match loss_ld(&batch) {
            Err(Error::DegenerateTarget { size, .. }) => assert_eq!(size, 3),
            other => panic!("expected a degenerate target, got {other:?}"),
        }
        assert!(loss_ld_prime(&batch).is_ok());
    }

    #[test]
    fn coincident_features_are_rejected() {
        let z = PointCloud::from_flat(6, 2, vec![1.0; 12]).unwrap();
        let y = random_cloud(6, 3, 14);
        let batch = BatchPair::new(z, y, schedule(&[3, 6]), &mut seeded(0)).unwrap();
        assert!(matches!(loss_ld_prime(&batch), Err(Error::Degenerate(_))));
        assert!(matches!(loss_ld(&batch), Err(Error::Degenerate(_))));
        // Zero-length edges contribute no gradient.
        let lt = loss_lt(&batch).unwrap();
        assert!(lt.grad_z.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn points_outside_every_subset_get_no_gradient() {
        let z = random_cloud(12, 3, 15);
        let y = random_cloud(12, 3, 16);
        let subsets = vec![vec![1, 4, 6], vec![1, 2, 4, 6, 9]];
        let batch = BatchPair::with_subsets(z, y, schedule(&[3, 5]), subsets).unwrap();
        for out in [loss_ld(&batch).unwrap(), loss_ld_prime(&batch).unwrap()] {
            for i in [0, 3, 5, 7, 8, 10, 11] {
                assert!(out.grad_z.row(i).iter().all(|&g| g == 0.0));
            }
        }
    }

    #[test]
    fn losses_are_permutation_invariant() {
        let n = 15;
        let z = random_cloud(n, 4, 17);
        let y = random_cloud(n, 3, 18);
        let subsets = vec![vec![0, 2, 4, 6, 8], vec![1, 3, 5, 7, 9, 11, 13, 14, 0, 2], (0..n).collect::<Vec<_>>()];
        let sched = schedule(&[5, 10, 15]);
        let batch = BatchPair::with_subsets(z.clone(), y.clone(), sched.clone(), subsets.clone()).unwrap();

        let perm: Vec<usize> = (0..n).map(|i| (i * 7 + 3) % n).collect();
        let mut inverse = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new;
        }
        let moved: Vec<Vec<usize>> = subsets.iter().map(|s| s.iter().map(|&i| inverse[i]).collect()).collect();
        let permuted = BatchPair::with_subsets(z.select(&perm), y.select(&perm), sched, moved).unwrap();

        for (a, b) in [
            (loss_ld(&batch).unwrap(), loss_ld(&permuted).unwrap()),
            (loss_ld_prime(&batch).unwrap(), loss_ld_prime(&permuted).unwrap()),
            (loss_lt(&batch).unwrap(), loss_lt(&permuted).unwrap()),
        ] {
            assert!((a.value - b.value).abs() <= 1e-12 * a.value.abs().max(1.0));
            for (new, &old) in perm.iter().enumerate() {
                for k in 0..z.dim() {
                    assert!((a.grad_z[[old, k]] - b.grad_z[[new, k]]).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn batch_validation() {
        let z = random_cloud(6, 2, 19);
        let y = random_cloud(5, 3, 20);
        assert!(BatchPair::topology_only(z.clone(), y).is_err());
        let y = random_cloud(6, 3, 20);
        assert!(BatchPair::new(z.clone(), y.clone(), schedule(&[3, 7]), &mut seeded(0)).is_err());
        assert!(BatchPair::with_subsets(z.clone(), y.clone(), schedule(&[2, 3]), vec![vec![0, 0], vec![1, 2, 3]]).is_err());
        assert!(BatchPair::with_subsets(z.clone(), y.clone(), schedule(&[2, 3]), vec![vec![0, 6], vec![1, 2, 3]]).is_err());
        assert!(BatchPair::with_subsets(z.clone(), y.clone(), schedule(&[2, 3]), vec![vec![0, 1]]).is_err());
        let topo = BatchPair::topology_only(z.clone(), y).unwrap();
        assert!(loss_ld(&topo).is_err());
        let single = PointCloud::from_rows(&[[0.0, 0.0]]).unwrap();
        assert!(loss_lt(&BatchPair::topology_only(single.clone(), single).unwrap()).is_err());
    }

    #[test]
    fn batch_subsets_cover_the_whole_batch_in_order() {
        let z = random_cloud(20, 2, 21);
        let batch = BatchPair::new(z.clone(), z, schedule(&[5, 10, 20]), &mut seeded(22)).unwrap();
        assert_eq!(batch.subsets()[2], (0..20).collect::<Vec<_>>());
        assert_eq!(batch.subsets()[0].len(), 5);
    }
}
