//! Point clouds and pairwise Euclidean distances.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use crate::error::{Error, Result};

/// `n` points in `d`-dimensional Euclidean space, stored row-major.
///
/// Construction rejects empty clouds and non-finite coordinates, so every
/// `PointCloud` in circulation is valid.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    data: Array2<f64>,
}

impl PointCloud {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        let (n, d) = data.dim();
        if n == 0 || d == 0 {
            return Err(Error::invalid(format!("point cloud must be non-empty, got {n}x{d}")));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite coordinate at row {}, column {}",
                pos / d,
                pos % d
            )));
        }
        // Normalise to standard layout so `as_slice` always works.
        let data = if data.is_standard_layout() { data } else { data.as_standard_layout().into_owned() };
        Ok(Self { data })
    }

    pub fn from_flat(n: usize, d: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * d {
            return Err(Error::invalid(format!(
                "expected {} values for a {n}x{d} cloud, got {}",
                n * d,
                values.len()
            )));
        }
        let data = Array2::from_shape_vec((n, d), values).map_err(|e| Error::invalid(e.to_string()))?;
        Self::new(data)
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let d = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut values = Vec::with_capacity(rows.len() * d);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != d {
                return Err(Error::invalid(format!("row {i} has {} fields, expected {d}", row.len())));
            }
            values.extend_from_slice(row);
        }
        Self::from_flat(rows.len(), d, values)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    #[inline]
    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.data.row(i)
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.data.as_slice().expect("standard layout")
    }

    pub fn into_array(self) -> Array2<f64> {
        self.data
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud { data: self.data.select(Axis(0), indices) }
    }

    /// The cloud with every coordinate multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<PointCloud> {
        PointCloud::new(&self.data * factor)
    }

    /// Reads the point-cloud CSV format: one point per row, comma-separated
    /// decimals, lines starting with `#` ignored.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (line, record) in rdr.records().enumerate() {
            let record = record?;
            let row = record
                .iter()
                .map(|field| {
                    field
                        .parse::<f64>()
                        .map_err(|_| Error::invalid(format!("record {}: cannot parse {field:?} as a number", line + 1)))
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        Self::from_rows(&rows)
    }

    pub fn read_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path.as_ref())?;
        Self::read_csv(std::io::BufReader::new(file))
    }

    pub fn write_csv<W: Write>(&self, mut writer: W) -> Result<()> {
        for row in self.data.rows() {
            let line = row.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(",");
            writeln!(writer, "{line}")?;
        }
        Ok(())
    }

    pub fn write_csv_path(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path.as_ref())?;
        let mut w = std::io::BufWriter::new(file);
        self.write_csv(&mut w)?;
        w.flush()?;
        Ok(())
    }
}

/// Dense symmetric matrix of pairwise Euclidean distances.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    values: Vec<f64>,
}

impl DistanceMatrix {
    #[inline]
    pub fn len(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    /// Row-major `n*n` backing storage.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Builds a matrix from explicit row-major values, checking symmetry,
    /// a zero diagonal and non-negativity.
    pub fn from_values(n: usize, values: Vec<f64>) -> Result<Self> {
        if n == 0 || values.len() != n * n {
            return Err(Error::invalid(format!("distance matrix needs {}x{} values", n, n)));
        }
        for i in 0..n {
            if values[i * n + i] != 0.0 {
                return Err(Error::invalid(format!("non-zero diagonal at {i}")));
            }
            for j in (i + 1)..n {
                let (a, b) = (values[i * n + j], values[j * n + i]);
                if !(a.is_finite() && a >= 0.0) || a != b {
                    return Err(Error::invalid(format!("entry ({i},{j}) is negative, non-finite or asymmetric")));
                }
            }
        }
        Ok(Self { n, values })
    }
}

/// Full Euclidean distance matrix of `cloud`.
pub fn pairwise_distances(cloud: &PointCloud) -> DistanceMatrix {
    let n = cloud.len();
    let d = cloud.dim();
    let data = cloud.as_slice();
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        let a = &data[i * d..(i + 1) * d];
        for j in (i + 1)..n {
            let b = &data[j * d..(j + 1) * d];
            let dist = squared_distance(a, b).sqrt();
            values[i * n + j] = dist;
            values[j * n + i] = dist;
        }
    }
    DistanceMatrix { n, values }
}

#[inline]
pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `size` distinct indices drawn uniformly from `0..n`.
pub fn sample_indices<R: Rng + ?Sized>(n: usize, size: usize, rng: &mut R) -> Result<Vec<usize>> {
    if size == 0 || size > n {
        return Err(Error::invalid(format!("cannot draw {size} of {n} points without replacement")));
    }
    Ok(rand::seq::index::sample(rng, n, size).into_vec())
}

/// Uniform subsample without replacement. The returned index list lets a
/// paired cloud be subsampled identically.
pub fn subsample<R: Rng + ?Sized>(cloud: &PointCloud, size: usize, rng: &mut R) -> Result<(PointCloud, Vec<usize>)> {
    let indices = sample_indices(cloud.len(), size, rng)?;
    Ok((cloud.select(&indices), indices))
}
