//! Shared oracles for the integration and acceptance tests.
#![allow(dead_code)]

use ndarray::{Array1, Array2};
use phreg::geometry::{pairwise_distances, PointCloud};
use phreg::id_estimation::SubsetSchedule;
use phreg::nn::{mse_loss, FeatureTap, Mlp};
use phreg::regularizers::{combined_loss, loss_ld, loss_ld_prime, loss_lt, BatchPair, DimensionLoss, RegularizerOutput};
use phreg::rng::seeded;
use rand::Rng;

pub const FD_STEP: f64 = 1e-5;
pub const GAP: f64 = 1e-4;

pub fn random_cloud<R: Rng>(rng: &mut R, n: usize, d: usize, scale: f64) -> PointCloud {
    let values = (0..n * d).map(|_| rng.gen_range(-scale..scale)).collect();
    PointCloud::from_flat(n, d, values).unwrap()
}

/// Smallest distance and smallest gap between distinct pairwise distances.
pub fn distance_separation(cloud: &PointCloud) -> f64 {
    let dm = pairwise_distances(cloud);
    let n = cloud.len();
    let mut ds: Vec<f64> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).map(|(i, j)| dm.get(i, j)).collect();
    ds.sort_by(f64::total_cmp);
    let min_gap = ds.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    min_gap.min(ds[0])
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 { 0.0 } else { norm(&diff) / scale }
}

/// Central differences of `f` with respect to every coordinate of `z`.
pub fn fd_gradient(z: &PointCloud, f: impl Fn(&PointCloud) -> f64) -> Array2<f64> {
    let base = z.view().to_owned();
    let mut grad = Array2::zeros(base.dim());
    for ((i, k), g) in grad.indexed_iter_mut() {
        let mut plus = base.clone();
        plus[[i, k]] += FD_STEP;
        let mut minus = base.clone();
        minus[[i, k]] -= FD_STEP;
        let fp = f(&PointCloud::new(plus).unwrap());
        let fm = f(&PointCloud::new(minus).unwrap());
        *g = (fp - fm) / (2.0 * FD_STEP);
    }
    grad
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradCase {
    LdPrime,
    Ld,
    Lt,
}

fn evaluate(case: GradCase, batch: &BatchPair) -> phreg::Result<RegularizerOutput> {
    match case {
        GradCase::LdPrime => loss_ld_prime(batch),
        GradCase::Ld => loss_ld(batch),
        GradCase::Lt => loss_lt(batch),
    }
}

/// Relative errors of the analytic feature gradient on `count` random
/// tie-free configurations.
pub fn feature_gradient_errors(case: GradCase, count: usize, seed: u64) -> Vec<f64> {
    let mut rng = seeded(seed);
    let mut errors = Vec::with_capacity(count);
    while errors.len() < count {
        let n = rng.gen_range(8..=14);
        let d = rng.gen_range(2..=5);
        let z = random_cloud(&mut rng, n, d, 1.0);
        let y = random_cloud(&mut rng, n, 3, 2.0);
        if distance_separation(&z) < GAP || distance_separation(&y) < GAP {
            continue;
        }
        let batch = match case {
            GradCase::Lt => BatchPair::topology_only(z.clone(), y).unwrap(),
            _ => {
                let sizes = vec![n / 2, (3 * n) / 4, n];
                BatchPair::new(z.clone(), y, SubsetSchedule::new(sizes).unwrap(), &mut rng).unwrap()
            }
        };
        let Ok(out) = evaluate(case, &batch) else { continue };
        if case == GradCase::Ld && out.value < 1e-3 {
            continue;
        }
        let fd = fd_gradient(&z, |zz| evaluate(case, &batch.with_features(zz.clone()).unwrap()).unwrap().value);
        errors.push(relative_error(out.grad_z.as_slice().unwrap(), fd.as_slice().unwrap()));
    }
    errors
}

fn params_mut(model: &mut Mlp) -> Vec<&mut f64> {
    model.w1.iter_mut().chain(model.b1.iter_mut()).chain(model.w2.iter_mut()).chain(model.b2.iter_mut()).collect()
}

fn flatten(w1: &Array2<f64>, b1: &Array1<f64>, w2: &Array2<f64>, b2: &Array1<f64>) -> Vec<f64> {
    w1.iter().chain(b1).chain(w2).chain(b2).copied().collect()
}

/// `MSE + λ L_t` of a small network, with the topology term on the hidden layer.
pub fn network_objective(model: &Mlp, x: &Array2<f64>, y: &PointCloud, lambda: f64, tap: FeatureTap) -> f64 {
    let trace = model.forward(x.view(), tap).unwrap();
    let (mse, _) = mse_loss(trace.yhat.view(), y.view()).unwrap();
    let z = PointCloud::new(trace.features().clone()).unwrap();
    let batch = BatchPair::topology_only(z, y.clone()).unwrap();
    mse + combined_loss(&batch, 0.0, lambda, DimensionLoss::Ld).unwrap().value
}

/// Relative errors of end-to-end parameter gradients of `MSE + λ L_t` for a
/// 5-3-2 network with features taken at `tap`, on `count` random
/// configurations with a stable ReLU pattern and tie-free features.
pub fn network_gradient_errors(count: usize, lambda: f64, tap: FeatureTap, seed: u64) -> Vec<f64> {
    let mut rng = seeded(seed);
    let mut errors = Vec::with_capacity(count);
    while errors.len() < count {
        let n = 8;
        let model = Mlp::init(5, 3, 2, &mut rng).unwrap();
        let x = random_cloud(&mut rng, n, 5, 1.0).into_array();
        let y = random_cloud(&mut rng, n, 2, 1.0);
        let trace = model.forward(x.view(), tap).unwrap();
        if trace.pre.iter().any(|p| p.abs() < 1e-3) {
            continue;
        }
        let z = PointCloud::new(trace.features().clone()).unwrap();
        if distance_separation(&z) < GAP || distance_separation(&y) < GAP {
            continue;
        }

        let (_, grad_yhat) = mse_loss(trace.yhat.view(), y.view()).unwrap();
        let batch = BatchPair::topology_only(z, y.clone()).unwrap();
        let reg = combined_loss(&batch, 0.0, lambda, DimensionLoss::Ld).unwrap();
        let g = model.backward(x.view(), &trace, grad_yhat.view(), Some(reg.grad_z.view())).unwrap();
        let analytic = flatten(&g.w1, &g.b1, &g.w2, &g.b2);

        let count_params = model.parameter_count();
        let mut fd = Vec::with_capacity(count_params);
        for p in 0..count_params {
            let mut plus = model.clone();
            *params_mut(&mut plus)[p] += FD_STEP;
            let mut minus = model.clone();
            *params_mut(&mut minus)[p] -= FD_STEP;
            fd.push(
                (network_objective(&plus, &x, &y, lambda, tap) - network_objective(&minus, &x, &y, lambda, tap)) / (2.0 * FD_STEP),
            );
        }
        errors.push(relative_error(&analytic, &fd));
    }
    errors
}

pub fn euclidean(cloud: &PointCloud, a: usize, b: usize) -> f64 {
    cloud.row(a).iter().zip(cloud.row(b).iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Minimum spanning-tree weight by enumerating every labelled tree through
/// its Prüfer sequence (`n^(n-2)` trees).
pub fn exhaustive_mst_weight(cloud: &PointCloud) -> f64 {
    let n = cloud.len();
    match n {
        0 | 1 => return 0.0,
        2 => return euclidean(cloud, 0, 1),
        _ => {}
    }
    let mut seq = vec![0usize; n - 2];
    let mut best = f64::INFINITY;
    loop {
        let mut degree = vec![1usize; n];
        for &s in &seq {
            degree[s] += 1;
        }
        let mut weight = 0.0;
        for &s in &seq {
            let leaf = (0..n).find(|&v| degree[v] == 1).unwrap();
            weight += euclidean(cloud, leaf, s);
            degree[leaf] -= 1;
            degree[s] -= 1;
        }
        let rest: Vec<usize> = (0..n).filter(|&v| degree[v] == 1).collect();
        weight += euclidean(cloud, rest[0], rest[1]);
        best = best.min(weight);

        // Next sequence in base n.
        let mut k = 0;
        loop {
            if k == seq.len() {
                return best;
            }
            seq[k] += 1;
            if seq[k] < n {
                break;
            }
            seq[k] = 0;
            k += 1;
        }
    }
}

/// Edge lengths of a minimum spanning tree by Prim's algorithm, sorted.
pub fn prim_edge_lengths(cloud: &PointCloud) -> Vec<f64> {
    let n = cloud.len();
    let mut in_tree = vec![false; n];
    let mut best = vec![f64::INFINITY; n];
    let mut lengths = Vec::with_capacity(n.saturating_sub(1));
    if n == 0 {
        return lengths;
    }
    in_tree[0] = true;
    for v in 1..n {
        best[v] = euclidean(cloud, 0, v);
    }
    for _ in 1..n {
        let v = (0..n).filter(|&v| !in_tree[v]).min_by(|&a, &b| best[a].total_cmp(&best[b])).unwrap();
        in_tree[v] = true;
        lengths.push(best[v]);
        for u in 0..n {
            if !in_tree[u] {
                best[u] = best[u].min(euclidean(cloud, v, u));
            }
        }
    }
    lengths.sort_by(f64::total_cmp);
    lengths
}

/// Points uniform in the unit `d`-cube.
pub fn uniform_cube<R: Rng>(rng: &mut R, n: usize, d: usize) -> PointCloud {
    PointCloud::from_flat(n, d, (0..n * d).map(|_| rng.gen::<f64>()).collect()).unwrap()
}

/// Rotation of the first two coordinates by `angle`, plus a translation.
pub fn rigid_motion(cloud: &PointCloud, angle: f64, shift: f64) -> PointCloud {
    let (s, c) = angle.sin_cos();
    let mut data = cloud.view().to_owned();
    for mut row in data.rows_mut() {
        let (a, b) = (row[0], row[1]);
        row[0] = c * a - s * b + shift;
        row[1] = s * a + c * b - shift;
    }
    PointCloud::new(data).unwrap()
}
