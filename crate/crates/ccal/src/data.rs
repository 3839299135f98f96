//! Paired two-view datasets: synthetic generation with known ground truth,
//! a little-endian binary file format, a convenience CSV importer, and
//! deterministic splitting and subsampling.
//!
//! # Binary format (`CCAPAIRS`)
//!
//! ```text
//! offset  size  field
//! 0       8     magic "CCAPAIRS"
//! 8       4     u32 version (= 1)
//! 12      4     u32 d_x
//! 16      4     u32 d_y
//! 20      8     u64 m
//! 28      1     u8 has_labels (0 or 1)
//! 29      ...   m records: d_x f64, d_y f64, then u32 label if has_labels
//! ```
//!
//! Everything is little-endian. Round trips are byte-exact.

use crate::cca::compute_t;
use crate::error::{Error, Result};
use crate::mat::{eig_sym, Mat};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::fmt;
use std::path::Path;

const MAGIC: &[u8; 8] = b"CCAPAIRS";
const FORMAT_VERSION: u32 = 1;

/// Aligned sample matrices: row `i` of `x` and of `y` describe the same
/// entity in two modalities.
#[derive(Debug, Clone)]
pub struct PairedDataset {
    pub x: Mat,
    pub y: Mat,
    pub labels: Option<Vec<u32>>,
    /// Where the data came from (generator spec or file path). Not part of
    /// the serialized format and ignored by equality.
    pub provenance: String,
}

impl PartialEq for PairedDataset {
    fn eq(&self, other: &Self) -> bool {
        self.x == other.x && self.y == other.y && self.labels == other.labels
    }
}

impl PairedDataset {
    pub fn new(x: Mat, y: Mat, labels: Option<Vec<u32>>, provenance: String) -> Result<Self> {
        if x.rows() != y.rows() {
            return Err(Error::contract(format!(
                "paired views must have equal row counts, got {} and {}",
                x.rows(),
                y.rows()
            )));
        }
        if let Some(l) = &labels {
            if l.len() != x.rows() {
                return Err(Error::contract(format!(
                    "labels length {} does not match {} rows",
                    l.len(),
                    x.rows()
                )));
            }
        }
        Ok(PairedDataset {
            x,
            y,
            labels,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        false // a dataset always has at least one row
    }

    pub fn dim_x(&self) -> usize {
        self.x.cols()
    }

    pub fn dim_y(&self) -> usize {
        self.y.cols()
    }

    /// Gather the given rows (in order) into a new dataset.
    pub fn gather(&self, indices: &[usize]) -> PairedDataset {
        PairedDataset {
            x: self.x.gather_rows(indices),
            y: self.y.gather_rows(indices),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
            provenance: self.provenance.clone(),
        }
    }
}

/// How the shared latent variable is mixed into each view.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mixing {
    /// Views are linear images of the latent; population canonical
    /// correlations have a closed form.
    Linear,
    /// Elementwise tanh after the linear map; nonlinear towers are required
    /// to undo it.
    Tanh,
}

impl fmt::Display for Mixing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mixing::Linear => write!(f, "linear"),
            Mixing::Tanh => write!(f, "tanh"),
        }
    }
}

impl std::str::FromStr for Mixing {
    type Err = Error;
    fn from_str(s: &str) -> Result<Mixing> {
        match s {
            "linear" => Ok(Mixing::Linear),
            "tanh" => Ok(Mixing::Tanh),
            other => Err(Error::contract(format!(
                "unknown mixing '{other}' (expected 'linear' or 'tanh')"
            ))),
        }
    }
}

/// Synthetic paired-data generator specification.
///
/// Samples are drawn as `z ~ N(0, I_q)`, then
/// `x = mix(P diag(scales) z) + noise_x * eps_x` and analogously for `y`,
/// with seeded mixing matrices `P`, `Q` (orthonormal columns) and seeded
/// Gaussian noise.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub latent_dim: usize,
    pub d_x: usize,
    pub d_y: usize,
    pub m: usize,
    pub mixing: Mixing,
    pub noise_x: f64,
    pub noise_y: f64,
    pub seed: u64,
    /// Optional per-latent-component signal scales (length `latent_dim`,
    /// all positive). `None` means all ones; unequal scales give unequal
    /// population correlations.
    pub latent_scales: Option<Vec<f64>>,
}

impl SynthSpec {
    fn validate(&self) -> Result<()> {
        if self.latent_dim < 1 || self.latent_dim > self.d_x.min(self.d_y) {
            return Err(Error::contract(format!(
                "latent_dim must be in [1, min(d_x, d_y)] = [1, {}], got {}",
                self.d_x.min(self.d_y),
                self.latent_dim
            )));
        }
        if self.m < 1 {
            return Err(Error::contract("m must be >= 1"));
        }
        for (name, v) in [("noise_x", self.noise_x), ("noise_y", self.noise_y)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::contract(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        if let Some(s) = &self.latent_scales {
            if s.len() != self.latent_dim {
                return Err(Error::contract(format!(
                    "latent_scales length {} does not match latent_dim {}",
                    s.len(),
                    self.latent_dim
                )));
            }
            if s.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return Err(Error::contract("latent_scales must be positive and finite"));
            }
        }
        Ok(())
    }

    fn scales(&self) -> Vec<f64> {
        self.latent_scales
            .clone()
            .unwrap_or_else(|| vec![1.0; self.latent_dim])
    }
}

/// A generated dataset plus, for linear mixing, the population canonical
/// correlations implied by the exact covariance blocks.
#[derive(Debug, Clone)]
pub struct Generated {
    pub dataset: PairedDataset,
    pub population_corr: Option<Vec<f64>>,
}

/// Draw a paired dataset from a [`SynthSpec`]. Bitwise deterministic in the
/// seed.
pub fn generate(spec: &SynthSpec) -> Result<Generated> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let p = random_orthonormal_columns(&mut rng, spec.d_x, spec.latent_dim);
    let q = random_orthonormal_columns(&mut rng, spec.d_y, spec.latent_dim);
    let scales = spec.scales();

    let mut x = Mat::zeros(spec.m, spec.d_x);
    let mut y = Mat::zeros(spec.m, spec.d_y);
    let mut z = vec![0.0; spec.latent_dim];
    for s in 0..spec.m {
        for (zi, sc) in z.iter_mut().zip(&scales) {
            let g: f64 = rng.sample(StandardNormal);
            *zi = g * sc;
        }
        fill_view(&mut rng, x.row_mut(s), &p, &z, spec.mixing, spec.noise_x);
        fill_view(&mut rng, y.row_mut(s), &q, &z, spec.mixing, spec.noise_y);
    }

    let population_corr = match spec.mixing {
        Mixing::Linear => Some(population_correlations(spec, &p, &q)?),
        Mixing::Tanh => None,
    };
    let dataset = PairedDataset::new(
        x,
        y,
        None,
        format!(
            "synth(q={},dx={},dy={},m={},mixing={},noise=({},{}),seed={})",
            spec.latent_dim,
            spec.d_x,
            spec.d_y,
            spec.m,
            spec.mixing,
            spec.noise_x,
            spec.noise_y,
            spec.seed
        ),
    )?;
    Ok(Generated {
        dataset,
        population_corr,
    })
}

fn fill_view(
    rng: &mut ChaCha8Rng,
    row: &mut [f64],
    basis: &Mat,
    z: &[f64],
    mixing: Mixing,
    noise: f64,
) {
    for (i, out) in row.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (j, zj) in z.iter().enumerate() {
            acc += basis.get(i, j) * zj;
        }
        if mixing == Mixing::Tanh {
            acc = acc.tanh();
        }
        let eps: f64 = rng.sample(StandardNormal);
        *out = acc + noise * eps;
    }
}

/// Random matrix with orthonormal columns via modified Gram-Schmidt on
/// Gaussian draws; redraws a column in the (measure-zero) dependent case.
fn random_orthonormal_columns(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
    let mut basis = Mat::zeros(rows, cols);
    let mut col = vec![0.0; rows];
    for j in 0..cols {
        loop {
            for v in col.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            for prev in 0..j {
                let mut proj = 0.0;
                for i in 0..rows {
                    proj += col[i] * basis.get(i, prev);
                }
                for (i, v) in col.iter_mut().enumerate() {
                    *v -= proj * basis.get(i, prev);
                }
            }
            let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1e-8 {
                for (i, v) in col.iter().enumerate() {
                    basis.set(i, j, v / norm);
                }
                break;
            }
        }
    }
    basis
}

/// Canonical correlations implied by the exact covariance blocks of a linear
/// generator, computed with the same whitened-cross-covariance solve used on
/// sample estimates. Falls back to the per-component closed form when a
/// noiseless view makes the covariance block singular.
fn population_correlations(spec: &SynthSpec, p: &Mat, q: &Mat) -> Result<Vec<f64>> {
    let scales = spec.scales();
    let k = spec.d_x.min(spec.d_y);
    let var: Vec<f64> = scales.iter().map(|c| c * c).collect();

    let block = |basis: &Mat, d: usize, noise: f64| {
        let mut s = Mat::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                let mut acc = 0.0;
                for (t, v) in var.iter().enumerate() {
                    acc += basis.get(i, t) * v * basis.get(j, t);
                }
                s.set(i, j, acc);
            }
        }
        s.add_scaled_identity(noise * noise);
        s
    };
    let sxx = block(p, spec.d_x, spec.noise_x);
    let syy = block(q, spec.d_y, spec.noise_y);
    let mut sxy = Mat::zeros(spec.d_x, spec.d_y);
    for i in 0..spec.d_x {
        for j in 0..spec.d_y {
            let mut acc = 0.0;
            for (t, v) in var.iter().enumerate() {
                acc += p.get(i, t) * v * q.get(j, t);
            }
            sxy.set(i, j, acc);
        }
    }

    match compute_t(&sxx, &syy, &sxy) {
        Ok(t) => {
            let eig = eig_sym(&t.nt_mul(&t))?;
            Ok(eig.values[..k]
                .iter()
                .map(|e| e.max(0.0).sqrt().min(1.0))
                .collect())
        }
        Err(Error::NotPositiveDefinite { .. }) => {
            let mut corr: Vec<f64> = var
                .iter()
                .map(|c2| c2 / ((c2 + spec.noise_x.powi(2)) * (c2 + spec.noise_y.powi(2))).sqrt())
                .collect();
            corr.sort_by(|a, b| b.partial_cmp(a).expect("finite"));
            corr.resize(k, 0.0);
            Ok(corr)
        }
        Err(e) => Err(e),
    }
}

// ---------------------------------------------------------------------------
// Binary format
// ---------------------------------------------------------------------------

/// Serialize to the `CCAPAIRS` byte layout.
pub fn to_bytes(ds: &PairedDataset) -> Vec<u8> {
    let (m, dx, dy) = (ds.len(), ds.dim_x(), ds.dim_y());
    let has_labels = ds.labels.is_some();
    let record = (dx + dy) * 8 + if has_labels { 4 } else { 0 };
    let mut out = Vec::with_capacity(29 + m * record);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(dx as u32).to_le_bytes());
    out.extend_from_slice(&(dy as u32).to_le_bytes());
    out.extend_from_slice(&(m as u64).to_le_bytes());
    out.push(u8::from(has_labels));
    for i in 0..m {
        for v in ds.x.row(i) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in ds.y.row(i) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        if let Some(l) = &ds.labels {
            out.extend_from_slice(&l[i].to_le_bytes());
        }
    }
    out
}

/// Parse the `CCAPAIRS` byte layout. Rejects bad magic, unknown versions,
/// truncation, trailing bytes, and non-finite samples, each with the
/// offending byte offset.
pub fn from_bytes(bytes: &[u8]) -> Result<PairedDataset> {
    let mut c = crate::bytesfmt::Cursor::new(bytes);
    let magic = c.take(8, "magic")?;
    if magic != MAGIC {
        return Err(Error::format(0, "bad magic, expected 'CCAPAIRS'"));
    }
    let version = c.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::format(
            8,
            format!("unsupported version {version}, expected {FORMAT_VERSION}"),
        ));
    }
    let dx = c.u32("d_x")? as usize;
    let dy = c.u32("d_y")? as usize;
    let m64 = c.u64("m")?;
    let has_labels = match c.u8("has_labels")? {
        0 => false,
        1 => true,
        other => {
            return Err(Error::format(
                28,
                format!("has_labels must be 0 or 1, got {other}"),
            ))
        }
    };
    if dx == 0 || dy == 0 {
        return Err(Error::format(12, "dimensions must be >= 1"));
    }
    if m64 == 0 {
        return Err(Error::format(20, "sample count must be >= 1"));
    }
    // Validate the claimed size against the actual payload before touching
    // any allocation.
    let record = (dx as u128 + dy as u128) * 8 + if has_labels { 4 } else { 0 };
    let expected = 29u128 + m64 as u128 * record;
    if expected != bytes.len() as u128 {
        return Err(Error::format(
            c.pos(),
            format!(
                "payload length mismatch: header implies {expected} bytes, file has {}",
                bytes.len()
            ),
        ));
    }
    let m = m64 as usize;

    let mut xd = Vec::with_capacity(m * dx);
    let mut yd = Vec::with_capacity(m * dy);
    let mut labels = if has_labels {
        Some(Vec::with_capacity(m))
    } else {
        None
    };
    for _ in 0..m {
        for _ in 0..dx {
            xd.push(c.f64_finite("x sample")?);
        }
        for _ in 0..dy {
            yd.push(c.f64_finite("y sample")?);
        }
        if let Some(l) = labels.as_mut() {
            l.push(c.u32("label")?);
        }
    }
    c.finish("sample records")?;
    PairedDataset::new(
        Mat::from_raw(m, dx, xd),
        Mat::from_raw(m, dy, yd),
        labels,
        "bytes".to_string(),
    )
}

/// Write a dataset to disk in the `CCAPAIRS` format.
pub fn save(ds: &PairedDataset, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(ds))?;
    Ok(())
}

/// Load a `CCAPAIRS` file.
pub fn load(path: &Path) -> Result<PairedDataset> {
    let bytes = std::fs::read(path)?;
    let mut ds = from_bytes(&bytes)?;
    ds.provenance = format!("file:{}", path.display());
    Ok(ds)
}

// ---------------------------------------------------------------------------
// CSV import
// ---------------------------------------------------------------------------

/// Import a convenience CSV with header `x0,..,x{d_x-1},y0,..,y{d_y-1}[,label]`.
pub fn from_csv_bytes(bytes: &[u8]) -> Result<PairedDataset> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| Error::format(e.valid_up_to(), "file is not valid UTF-8"))?;
    let mut offset = 0usize;
    let mut lines = Vec::new(); // (byte offset, line)
    for line in text.split('\n') {
        let trimmed = line.strip_suffix('\r').unwrap_or(line);
        lines.push((offset, trimmed));
        offset += line.len() + 1;
    }
    while matches!(lines.last(), Some((_, l)) if l.is_empty()) {
        lines.pop();
    }
    if lines.is_empty() {
        return Err(Error::format(0, "empty file"));
    }

    let (hdr_off, header) = lines[0];
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let dx = cols.iter().take_while(|c| c.starts_with('x')).count();
    let has_label = cols.last() == Some(&"label");
    let dy = cols.len() - dx - usize::from(has_label);
    if dx == 0 || dy == 0 {
        return Err(Error::format(hdr_off, "header must list x-columns then y-columns"));
    }
    for (i, c) in cols.iter().enumerate() {
        let expected = if i < dx {
            format!("x{i}")
        } else if i < dx + dy {
            format!("y{}", i - dx)
        } else {
            "label".to_string()
        };
        if *c != expected {
            return Err(Error::format(
                hdr_off,
                format!("header column {i} is '{c}', expected '{expected}'"),
            ));
        }
    }

    let m = lines.len() - 1;
    if m == 0 {
        return Err(Error::format(offset, "no data rows"));
    }
    let mut xd = Vec::with_capacity(m * dx);
    let mut yd = Vec::with_capacity(m * dy);
    let mut labels = if has_label { Some(Vec::with_capacity(m)) } else { None };
    for (line_off, line) in &lines[1..] {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != cols.len() {
            return Err(Error::format(
                *line_off,
                format!("expected {} fields, got {}", cols.len(), fields.len()),
            ));
        }
        for (i, f) in fields.iter().enumerate() {
            if i < dx + dy {
                let v: f64 = f
                    .parse()
                    .map_err(|_| Error::format(*line_off, format!("bad number '{f}'")))?;
                if !v.is_finite() {
                    return Err(Error::format(*line_off, format!("non-finite value '{f}'")));
                }
                if i < dx {
                    xd.push(v);
                } else {
                    yd.push(v);
                }
            } else {
                let l: u32 = f
                    .parse()
                    .map_err(|_| Error::format(*line_off, format!("bad label '{f}'")))?;
                labels.as_mut().unwrap().push(l);
            }
        }
    }
    PairedDataset::new(
        Mat::from_raw(m, dx, xd),
        Mat::from_raw(m, dy, yd),
        labels,
        "csv".to_string(),
    )
}

/// Load a CSV file via [`from_csv_bytes`].
pub fn import_csv(path: &Path) -> Result<PairedDataset> {
    let bytes = std::fs::read(path)?;
    let mut ds = from_csv_bytes(&bytes)?;
    ds.provenance = format!("csv:{}", path.display());
    Ok(ds)
}

// ---------------------------------------------------------------------------
// Splitting
// ---------------------------------------------------------------------------

fn shuffled_indices(n: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    idx
}

/// Split into train/val/test by a seeded permutation followed by contiguous
/// slicing. Pairing is preserved; the parts are disjoint and exhaustive.
pub fn split(
    ds: &PairedDataset,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(PairedDataset, PairedDataset, PairedDataset)> {
    let (f1, f2, f3) = fractions;
    if !(f1 > 0.0 && f2 > 0.0 && f3 > 0.0) {
        return Err(Error::contract("split fractions must all be positive"));
    }
    if (f1 + f2 + f3 - 1.0).abs() > 1e-9 {
        return Err(Error::contract(format!(
            "split fractions must sum to 1, got {}",
            f1 + f2 + f3
        )));
    }
    let m = ds.len();
    let n1 = (f1 * m as f64).round() as usize;
    let n2 = (f2 * m as f64).round() as usize;
    if n1 == 0 || n2 == 0 || n1 + n2 >= m {
        return Err(Error::contract(format!(
            "split produces an empty part (sizes {n1}/{n2}/{})",
            m.saturating_sub(n1 + n2)
        )));
    }
    let idx = shuffled_indices(m, seed);
    Ok((
        ds.gather(&idx[..n1]),
        ds.gather(&idx[n1..n1 + n2]),
        ds.gather(&idx[n1 + n2..]),
    ))
}

/// Two-way split (e.g. train/validation): seeded permutation, then the
/// first `round(first_fraction * m)` rows against the rest.
pub fn split_two(
    ds: &PairedDataset,
    first_fraction: f64,
    seed: u64,
) -> Result<(PairedDataset, PairedDataset)> {
    if !(first_fraction > 0.0 && first_fraction < 1.0) {
        return Err(Error::contract(format!(
            "split fraction must be in (0, 1), got {first_fraction}"
        )));
    }
    let m = ds.len();
    let n1 = (first_fraction * m as f64).round() as usize;
    if n1 == 0 || n1 >= m {
        return Err(Error::contract(format!(
            "split produces an empty part (sizes {n1}/{})",
            m - n1.min(m)
        )));
    }
    let idx = shuffled_indices(m, seed);
    Ok((ds.gather(&idx[..n1]), ds.gather(&idx[n1..])))
}

/// Seeded subsample without replacement of `round(fraction * m)` rows.
pub fn subsample(ds: &PairedDataset, fraction: f64, seed: u64) -> Result<PairedDataset> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::contract(format!(
            "subsample fraction must be in (0, 1], got {fraction}"
        )));
    }
    let n = (fraction * ds.len() as f64).round() as usize;
    if n == 0 {
        return Err(Error::contract("subsample would be empty"));
    }
    let idx = shuffled_indices(ds.len(), seed);
    Ok(ds.gather(&idx[..n]))
}
