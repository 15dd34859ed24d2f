//! Data ingestion and synthesis: IDX image/label files, CSV tables, and
//! seeded synthetic classification/regression generators.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{BigEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::error::{Error, Result};
use crate::losses::Targets;
use crate::scalar::Scalar;

const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
const IDX_LABEL_MAGIC: u32 = 0x0000_0801;

/// An immutable training/evaluation set: row-per-sample inputs plus targets.
#[derive(Debug, Clone)]
pub struct Dataset<F: Scalar> {
    inputs: Array2<F>,
    targets: Targets<F>,
    /// (rows, cols) for image data; preserved so IDX round-trips exactly.
    image_shape: Option<(usize, usize)>,
    num_classes: Option<usize>,
}

impl<F: Scalar> Dataset<F> {
    pub fn new(inputs: Array2<F>, targets: Targets<F>, num_classes: Option<usize>) -> Result<Self> {
        if inputs.nrows() == 0 {
            return Err(Error::argument("dataset must contain at least one sample"));
        }
        if targets.len() != inputs.nrows() {
            return Err(Error::consistency(format!(
                "target count {} does not match sample count {}",
                targets.len(),
                inputs.nrows()
            )));
        }
        if inputs.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("dataset inputs must be finite"));
        }
        if let (Targets::Classes(classes), Some(k)) = (&targets, num_classes) {
            if let Some(&bad) = classes.iter().find(|&&c| c >= k) {
                return Err(Error::argument(format!("class label {bad} out of range [0, {k})")));
            }
        }
        Ok(Dataset { inputs, targets, image_shape: None, num_classes })
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn inputs(&self) -> &Array2<F> {
        &self.inputs
    }

    pub fn targets(&self) -> &Targets<F> {
        &self.targets
    }

    pub fn num_classes(&self) -> Option<usize> {
        self.num_classes
    }

    pub fn image_shape(&self) -> Option<(usize, usize)> {
        self.image_shape
    }

    /// Width the network output must have for this dataset's targets.
    pub fn target_width(&self) -> usize {
        match &self.targets {
            Targets::Classes(_) => self.num_classes.unwrap_or(0),
            Targets::Signs(_) => 1,
            Targets::Vectors(v) => v.ncols(),
        }
    }

    /// Gather input rows and targets for the given sample indices.
    pub fn select(&self, indices: &[usize]) -> (Array2<F>, Targets<F>) {
        let mut inputs = Array2::zeros((indices.len(), self.dim()));
        for (j, &i) in indices.iter().enumerate() {
            inputs.row_mut(j).assign(&self.inputs.row(i));
        }
        (inputs, self.targets.select(indices))
    }

    /// Keep only the first `n` samples.
    pub fn truncate(&self, n: usize) -> Result<Dataset<F>> {
        if n == 0 || n > self.len() {
            return Err(Error::argument(format!("cannot truncate {} samples to {n}", self.len())));
        }
        let indices: Vec<usize> = (0..n).collect();
        let (inputs, targets) = self.select(&indices);
        let mut ds = Dataset::new(inputs, targets, self.num_classes)?;
        ds.image_shape = self.image_shape;
        Ok(ds)
    }

    /// Draw `b` distinct indices uniformly without replacement.
    pub fn uniform_batch(&self, b: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
        uniform_batch(self.len(), b, rng)
    }
}

/// `b` distinct indices drawn uniformly without replacement from `0..n`
/// (partial Fisher-Yates; `b = n` yields a full permutation).
pub fn uniform_batch(n: usize, b: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
    if b == 0 {
        return Err(Error::argument("batch size must be at least 1"));
    }
    if b > n {
        return Err(Error::argument(format!("batch size {b} exceeds population {n}")));
    }
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..b {
        let j = i + rng.gen_range(0..n - i);
        pool.swap(i, j);
    }
    pool.truncate(b);
    Ok(pool)
}

fn read_u32(reader: &mut impl Read, what: &str) -> Result<u32> {
    reader
        .read_u32::<BigEndian>()
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("truncated {what}: {e}"))))
}

/// Loads an IDX image file plus its label file into a dataset with pixels
/// scaled by 1/255 into `[0, 1]`.
pub fn load_idx<F: Scalar>(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset<F>> {
    let mut images = BufReader::new(File::open(images_path.as_ref())?);
    let magic = read_u32(&mut images, "image header")?;
    if magic != IDX_IMAGE_MAGIC {
        return Err(Error::format(format!(
            "image file magic {magic:#010x}, expected {IDX_IMAGE_MAGIC:#010x}"
        )));
    }
    let count = read_u32(&mut images, "image header")? as usize;
    let rows = read_u32(&mut images, "image header")? as usize;
    let cols = read_u32(&mut images, "image header")? as usize;
    let pixels_per_image = rows * cols;
    let mut raw = vec![0u8; count * pixels_per_image];
    images
        .read_exact(&mut raw)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("truncated image payload: {e}"))))?;

    let mut labels = BufReader::new(File::open(labels_path.as_ref())?);
    let magic = read_u32(&mut labels, "label header")?;
    if magic != IDX_LABEL_MAGIC {
        return Err(Error::format(format!(
            "label file magic {magic:#010x}, expected {IDX_LABEL_MAGIC:#010x}"
        )));
    }
    let label_count = read_u32(&mut labels, "label header")? as usize;
    if label_count != count {
        return Err(Error::consistency(format!(
            "image count {count} does not match label count {label_count}"
        )));
    }
    let mut label_bytes = vec![0u8; label_count];
    labels
        .read_exact(&mut label_bytes)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("truncated label payload: {e}"))))?;

    let scale = F::from_f64_lossy(1.0 / 255.0);
    let inputs = Array2::from_shape_fn((count, pixels_per_image), |(i, j)| {
        F::from_f64_lossy(raw[i * pixels_per_image + j] as f64) * scale
    });
    let classes: Vec<usize> = label_bytes.iter().map(|&b| b as usize).collect();
    let num_classes = classes.iter().max().map(|&m| m + 1);
    let mut ds = Dataset::new(inputs, Targets::Classes(classes), num_classes)?;
    ds.image_shape = Some((rows, cols));
    Ok(ds)
}

/// Writes a dataset loaded from IDX back out; inverse of [`load_idx`] for
/// conforming files (byte-exact round trip).
pub fn write_idx<F: Scalar>(
    dataset: &Dataset<F>,
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<()> {
    let (rows, cols) = dataset
        .image_shape
        .ok_or_else(|| Error::argument("dataset carries no image shape; not IDX-backed"))?;
    let classes = match dataset.targets() {
        Targets::Classes(c) => c,
        _ => return Err(Error::argument("IDX labels require class targets")),
    };
    if rows * cols != dataset.dim() {
        return Err(Error::consistency("image shape does not match input width"));
    }

    let mut images = BufWriter::new(File::create(images_path.as_ref())?);
    images.write_u32::<BigEndian>(IDX_IMAGE_MAGIC)?;
    images.write_u32::<BigEndian>(dataset.len() as u32)?;
    images.write_u32::<BigEndian>(rows as u32)?;
    images.write_u32::<BigEndian>(cols as u32)?;
    for v in dataset.inputs().iter() {
        let byte = (v.as_f64() * 255.0).round();
        if !(0.0..=255.0).contains(&byte) {
            return Err(Error::domain("pixel outside [0, 1]"));
        }
        images.write_all(&[byte as u8])?;
    }
    images.flush()?;

    let mut labels = BufWriter::new(File::create(labels_path.as_ref())?);
    labels.write_u32::<BigEndian>(IDX_LABEL_MAGIC)?;
    labels.write_u32::<BigEndian>(classes.len() as u32)?;
    for &c in classes {
        if c > u8::MAX as usize {
            return Err(Error::domain("label does not fit in a byte"));
        }
        labels.write_all(&[c as u8])?;
    }
    labels.flush()?;
    Ok(())
}

/// How to interpret a CSV file's trailing target columns.
#[derive(Debug, Clone)]
pub struct CsvOptions {
    /// Number of trailing columns holding targets.
    pub target_columns: usize,
    /// Interpret the (single) target column as class indices.
    pub targets_are_classes: bool,
    /// Standardize each feature column to zero mean, unit variance.
    pub standardize: bool,
}

/// Loads a CSV with a header row and numeric cells; the final
/// `target_columns` columns become the targets.
pub fn load_csv<F: Scalar>(path: impl AsRef<Path>, options: &CsvOptions) -> Result<Dataset<F>> {
    if options.targets_are_classes && options.target_columns != 1 {
        return Err(Error::argument("class targets use exactly one column"));
    }
    if options.target_columns == 0 {
        return Err(Error::argument("at least one target column required"));
    }
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path.as_ref())?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::format(format!("csv parse: {e}")))?;
        let row: Vec<f64> = record
            .iter()
            .map(|cell| {
                cell.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::format(format!("non-numeric cell `{cell}`")))
            })
            .collect::<Result<_>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::format("csv has no data rows"));
    }
    let width = rows[0].len();
    if rows.iter().any(|r| r.len() != width) {
        return Err(Error::format("csv rows have inconsistent widths"));
    }
    if width <= options.target_columns {
        return Err(Error::argument("csv has no feature columns left after targets"));
    }
    let features = width - options.target_columns;
    let n = rows.len();

    let mut inputs = Array2::zeros((n, features));
    for (i, row) in rows.iter().enumerate() {
        for j in 0..features {
            inputs[[i, j]] = F::from_f64_lossy(row[j]);
        }
    }
    if options.standardize {
        for j in 0..features {
            let mut col = inputs.column_mut(j);
            let n_f = F::from_f64_lossy(n as f64);
            let mean = col.iter().copied().sum::<F>() / n_f;
            let var = col.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / n_f;
            let std = var.sqrt();
            if std > F::zero() {
                col.mapv_inplace(|v| (v - mean) / std);
            } else {
                col.mapv_inplace(|v| v - mean);
            }
        }
    }

    let targets = if options.targets_are_classes {
        let mut classes = Vec::with_capacity(n);
        for row in &rows {
            let raw = row[features];
            if raw < 0.0 || raw.fract() != 0.0 {
                return Err(Error::format(format!("class cell `{raw}` is not a non-negative integer")));
            }
            classes.push(raw as usize);
        }
        Targets::Classes(classes)
    } else {
        let mut t = Array2::zeros((n, options.target_columns));
        for (i, row) in rows.iter().enumerate() {
            for j in 0..options.target_columns {
                t[[i, j]] = F::from_f64_lossy(row[features + j]);
            }
        }
        Targets::Vectors(t)
    };
    let num_classes = match &targets {
        Targets::Classes(c) => c.iter().max().map(|&m| m + 1),
        _ => None,
    };
    Dataset::new(inputs, targets, num_classes)
}

/// Standard normal via Box-Muller, deterministic given the rng stream.
fn standard_normal(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Gaussian blob classification data: `k` classes, `per_class` points each,
/// isotropic noise of the given spread around per-class means.
pub fn synth_blobs<F: Scalar>(k: usize, per_class: usize, d: usize, spread: f64, seed: u64) -> Result<Dataset<F>> {
    if k == 0 || per_class == 0 || d == 0 {
        return Err(Error::argument("blob sizes must be positive"));
    }
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let means: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..d).map(|_| rng.gen::<f64>() * 6.0 - 3.0).collect())
        .collect();
    let n = k * per_class;
    let mut inputs = Array2::zeros((n, d));
    let mut classes = Vec::with_capacity(n);
    for c in 0..k {
        for p in 0..per_class {
            let i = c * per_class + p;
            for j in 0..d {
                inputs[[i, j]] = F::from_f64_lossy(means[c][j] + spread * standard_normal(&mut rng));
            }
            classes.push(c);
        }
    }
    Dataset::new(inputs, Targets::Classes(classes), Some(k))
}

/// Synthetic least-squares regression problem with its analytic optimum.
#[derive(Debug, Clone)]
pub struct LinregSynthesis<F: Scalar> {
    pub dataset: Dataset<F>,
    /// Least-squares optimum over the affine model, laid out as
    /// `[w_0, ..., w_{d-1}, bias]` (matches `Network::flatten_params` for a
    /// one-layer network with a single output).
    pub theta_star: Vec<F>,
    /// The generating coefficients in the same layout.
    pub generating_theta: Vec<F>,
}

/// Generates `y = x . w + b + noise * eps` with uniform features and returns
/// the dataset together with the exact least-squares solution of the
/// generated sample (normal equations on the bias-augmented design).
pub fn synth_linreg<F: Scalar>(n: usize, d: usize, noise: f64, seed: u64) -> Result<LinregSynthesis<F>> {
    if n == 0 || d == 0 {
        return Err(Error::argument("linreg sizes must be positive"));
    }
    if n < d + 1 {
        return Err(Error::argument("need at least d + 1 samples for a unique optimum"));
    }
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let weights: Vec<f64> = (0..d).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
    let bias: f64 = rng.gen::<f64>() - 0.5;

    let mut x = vec![vec![0.0f64; d]; n];
    let mut y = vec![0.0f64; n];
    for i in 0..n {
        let mut dot = bias;
        for j in 0..d {
            let v = rng.gen::<f64>() * 2.0 - 1.0;
            x[i][j] = v;
            dot += weights[j] * v;
        }
        y[i] = dot + noise * standard_normal(&mut rng);
    }

    // normal equations on the augmented design [X | 1]
    let m = d + 1;
    let mut ata = vec![vec![0.0f64; m]; m];
    let mut aty = vec![0.0f64; m];
    for i in 0..n {
        let mut row = x[i].clone();
        row.push(1.0);
        for r in 0..m {
            aty[r] += row[r] * y[i];
            for c in 0..m {
                ata[r][c] += row[r] * row[c];
            }
        }
    }
    let theta = solve_linear_system(&mut ata, &mut aty)?;

    let inputs = Array2::from_shape_fn((n, d), |(i, j)| F::from_f64_lossy(x[i][j]));
    let targets = Array2::from_shape_fn((n, 1), |(i, _)| F::from_f64_lossy(y[i]));
    let dataset = Dataset::new(inputs, Targets::Vectors(targets), None)?;

    let mut generating: Vec<F> = weights.iter().map(|&w| F::from_f64_lossy(w)).collect();
    generating.push(F::from_f64_lossy(bias));
    Ok(LinregSynthesis {
        dataset,
        theta_star: theta.into_iter().map(F::from_f64_lossy).collect(),
        generating_theta: generating,
    })
}

/// Gaussian elimination with partial pivoting; consumes its inputs.
fn solve_linear_system(a: &mut [Vec<f64>], b: &mut [f64]) -> Result<Vec<f64>> {
    let m = b.len();
    for col in 0..m {
        let pivot = (col..m)
            .max_by(|&r1, &r2| a[r1][col].abs().partial_cmp(&a[r2][col].abs()).expect("finite"))
            .expect("non-empty");
        if a[pivot][col].abs() < 1e-12 {
            return Err(Error::domain("singular normal-equation system"));
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..m {
            let factor = a[row][col] / a[col][col];
            for c in col..m {
                a[row][c] -= factor * a[col][c];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0f64; m];
    for row in (0..m).rev() {
        let mut acc = b[row];
        for c in row + 1..m {
            acc -= a[row][c] * x[c];
        }
        x[row] = acc / a[row][row];
    }
    Ok(x)
}
