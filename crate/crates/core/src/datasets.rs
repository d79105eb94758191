//! Synthetic coordinate-prediction datasets.
//!
//! Targets `y ∈ R³` are sampled from a shape, then each is encoded as a
//! 100-dimensional input: four signal features
//!
//! ```text
//! f1 =  y1 + y2 + y3
//! f2 =  y1 + y2 - y3
//! f3 =  y1 - y2 + y3
//! f4 = -y1 + y2 + y3
//! ```
//!
//! followed by 96 noise features, each `f_k(y_j)` for a random encoder `k`
//! and a random other sample `j != i`.

use std::f64::consts::PI;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{sample_indices, PointCloud};

pub const INPUT_DIM: usize = 100;
pub const SIGNAL_DIMS: usize = 4;
pub const NOISE_DIMS: usize = INPUT_DIM - SIGNAL_DIMS;

pub const SWISS_ROLL_T: (f64, f64) = (1.5 * PI, 4.5 * PI);
pub const SWISS_ROLL_HEIGHT: f64 = 21.0;
/// Uniform scale applied to the roll so its radius spans `[1, 3]`, the same
/// extent as the torus.
pub const SWISS_ROLL_SCALE: f64 = 1.0 / (1.5 * PI);
pub const TORUS_MAJOR: f64 = 2.0;
pub const TORUS_MINOR: f64 = 1.0;
pub const CIRCLE_RADIUS: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    SwissRoll,
    Torus,
    Circle,
    Mammoth,
}

impl Shape {
    pub const ALL: [Shape; 4] = [Shape::SwissRoll, Shape::Torus, Shape::Circle, Shape::Mammoth];

    pub fn name(self) -> &'static str {
        match self {
            Shape::SwissRoll => "swiss_roll",
            Shape::Torus => "torus",
            Shape::Circle => "circle",
            Shape::Mammoth => "mammoth",
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Shape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "swiss_roll" | "swissroll" => Ok(Shape::SwissRoll),
            "torus" => Ok(Shape::Torus),
            "circle" => Ok(Shape::Circle),
            "mammoth" => Ok(Shape::Mammoth),
            other => Err(Error::invalid(format!("unknown shape {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub shape: Shape,
    pub total: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mammoth_path: Option<PathBuf>,
}

impl SyntheticSpec {
    /// 3000 points split 100 / 100 / 2800.
    pub fn standard(shape: Shape, seed: u64) -> Self {
        Self { shape, total: 3000, train: 100, val: 100, test: 2800, seed, mammoth_path: None }
    }

    pub fn validate(&self) -> Result<()> {
        if self.train + self.val + self.test != self.total {
            return Err(Error::invalid(format!(
                "splits {}+{}+{} do not sum to {}",
                self.train, self.val, self.test, self.total
            )));
        }
        if self.train < 2 || self.val < 1 || self.test < 1 {
            return Err(Error::invalid("need at least 2 training, 1 validation and 1 test point"));
        }
        if self.shape == Shape::Mammoth && self.mammoth_path.is_none() {
            return Err(Error::invalid("the mammoth shape needs a point-cloud file"));
        }
        Ok(())
    }
}

/// `spec.total` target points on the named shape, embedded in R³.
///
/// Swiss roll and torus are sampled uniformly with respect to surface area
/// (rejection on the area element); the circle uniformly in angle with
/// `y3 = 0`; the mammoth by seeded uniform choice of rows from the file.
pub fn sample_shape<R: Rng + ?Sized>(spec: &SyntheticSpec, rng: &mut R) -> Result<PointCloud> {
    spec.validate()?;
    let n = spec.total;
    let mut rows: Vec<[f64; 3]> = Vec::with_capacity(n);
    match spec.shape {
        Shape::SwissRoll => {
            let (t0, t1) = SWISS_ROLL_T;
            while rows.len() < n {
                let t = rng.gen_range(t0..t1);
                let height = rng.gen_range(0.0..SWISS_ROLL_HEIGHT);
                // Area element ∝ sqrt(1 + t²).
                let accept = rng.gen::<f64>() * (1.0 + t1 * t1).sqrt() <= (1.0 + t * t).sqrt();
                if accept {
                    let c = SWISS_ROLL_SCALE;
                    rows.push([c * t * t.cos(), c * height, c * t * t.sin()]);
                }
            }
        }
        Shape::Torus => {
            while rows.len() < n {
                let u = rng.gen_range(0.0..2.0 * PI);
                let v = rng.gen_range(0.0..2.0 * PI);
                // Area element ∝ R + r cos v.
                let accept = rng.gen::<f64>() * (TORUS_MAJOR + TORUS_MINOR) <= TORUS_MAJOR + TORUS_MINOR * v.cos();
                if accept {
                    let ring = TORUS_MAJOR + TORUS_MINOR * v.cos();
                    rows.push([ring * u.cos(), ring * u.sin(), TORUS_MINOR * v.sin()]);
                }
            }
        }
        Shape::Circle => {
            for _ in 0..n {
                let a = rng.gen_range(0.0..2.0 * PI);
                rows.push([CIRCLE_RADIUS * a.cos(), CIRCLE_RADIUS * a.sin(), 0.0]);
            }
        }
        Shape::Mammoth => {
            let path = spec.mammoth_path.as_ref().expect("validated");
            let source = PointCloud::read_csv_path(path)
                .map_err(|e| Error::Ingest { path: path.clone(), reason: e.to_string() })?;
            if source.dim() != 3 {
                return Err(Error::Ingest { path: path.clone(), reason: format!("expected 3 columns, found {}", source.dim()) });
            }
            if source.len() < n {
                return Err(Error::Ingest {
                    path: path.clone(),
                    reason: format!("{} points available, {n} required", source.len()),
                });
            }
            let idx = sample_indices(source.len(), n, rng)?;
            return Ok(source.select(&idx));
        }
    }
    PointCloud::from_rows(&rows)
}

/// `[f1(y), f2(y), f3(y), f4(y)]`.
pub fn signal_features(y: [f64; 3]) -> [f64; 4] {
    let [a, b, c] = y;
    [a + b + c, a + b - c, a - b + c, -a + b + c]
}

/// Recovers `y` from its four signal features.
pub fn decode_signal(f: [f64; 4]) -> [f64; 3] {
    [(f[0] - f[3]) / 2.0, (f[0] - f[2]) / 2.0, (f[0] - f[1]) / 2.0]
}

/// Which encoder and which other sample produced one noise feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseSource {
    /// Encoder index `k` in `0..4` (i.e. `f_{k+1}`).
    pub encoder: u8,
    /// Row of the sample the encoder was applied to.
    pub source: u32,
}

#[derive(Debug, Clone)]
pub struct EncodedDataset {
    /// `n × 100` inputs.
    pub x: Array2<f64>,
    /// `n × 3` targets.
    pub y: PointCloud,
    /// Row-major `n × 96` record of the noise features.
    pub noise_assignment: Vec<NoiseSource>,
}

impl EncodedDataset {
    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    pub fn noise_source(&self, row: usize, noise_dim: usize) -> NoiseSource {
        self.noise_assignment[row * NOISE_DIMS + noise_dim]
    }

    /// SHA-256 over the noise assignment, as lowercase hex.
    pub fn noise_digest(&self) -> String {
        let mut hasher = Sha256::new();
        for s in &self.noise_assignment {
            hasher.update([s.encoder]);
            hasher.update(s.source.to_le_bytes());
        }
        hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Rows `indices` of inputs and targets.
    pub fn subset(&self, indices: &[usize]) -> (Array2<f64>, PointCloud) {
        (self.x.select(ndarray::Axis(0), indices), self.y.select(indices))
    }
}

/// Encodes every target row into the 100-dimensional signal+noise input.
pub fn encode<R: Rng + ?Sized>(targets: &PointCloud, rng: &mut R) -> Result<EncodedDataset> {
    if targets.dim() != 3 {
        return Err(Error::invalid(format!("targets must be 3-dimensional, got {}", targets.dim())));
    }
    let n = targets.len();
    if n < 2 {
        return Err(Error::invalid("encoding needs at least two samples to draw noise from"));
    }
    let target_row = |i: usize| {
        let r = targets.row(i);
        [r[0], r[1], r[2]]
    };
    let mut x = Array2::zeros((n, INPUT_DIM));
    let mut noise_assignment = Vec::with_capacity(n * NOISE_DIMS);
    for i in 0..n {
        let signal = signal_features(target_row(i));
        for (k, v) in signal.iter().enumerate() {
            x[[i, k]] = *v;
        }
        for dim in 0..NOISE_DIMS {
            let encoder = rng.gen_range(0..4u8);
            // Uniform over the n - 1 other rows.
            let mut source = rng.gen_range(0..n - 1);
            if source >= i {
                source += 1;
            }
            x[[i, SIGNAL_DIMS + dim]] = signal_features(target_row(source))[encoder as usize];
            noise_assignment.push(NoiseSource { encoder, source: source as u32 });
        }
    }
    Ok(EncodedDataset { x, y: targets.clone(), noise_assignment })
}

/// Disjoint train / validation / test index lists.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded shuffle of `0..n`, cut into the sizes of `spec`.
pub fn split<R: Rng + ?Sized>(n: usize, spec: &SyntheticSpec, rng: &mut R) -> Result<Split> {
    spec.validate()?;
    if n != spec.total {
        return Err(Error::invalid(format!("dataset has {n} rows but the spec expects {}", spec.total)));
    }
    let order = sample_indices(n, n, rng)?;
    let (train, rest) = order.split_at(spec.train);
    let (val, test) = rest.split_at(spec.val);
    Ok(Split { train: train.to_vec(), val: val.to_vec(), test: test.to_vec() })
}

/// A generated dataset with its split.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub spec: SyntheticSpec,
    pub data: EncodedDataset,
    pub split: Split,
}

/// Samples, encodes and splits, each step on its own stream of `spec.seed`.
pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticData> {
    use crate::rng::{stream, Stream};
    let targets = sample_shape(spec, &mut stream(spec.seed, Stream::Shape))?;
    let data = encode(&targets, &mut stream(spec.seed, Stream::Encode))?;
    let split = split(data.len(), spec, &mut stream(spec.seed, Stream::Split))?;
    Ok(SyntheticData { spec: spec.clone(), data, split })
}
