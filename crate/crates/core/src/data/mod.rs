//! Datasets: Gaussian random field regression, two margin-separated
//! clusters, binary MNIST subsets, and CSV persistence.

pub mod idx;

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::kernel::KernelSpec;
use crate::numerics;
use crate::rng::{SeedStream, GAUSSIAN_ALGORITHM};
use crate::Real;

/// Half-width of the gap kept free between the two clusters.
pub const CLUSTER_MARGIN: f64 = 0.4;
pub const CLUSTER_CENTRE: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    Grf {
        n: usize,
        sigma_x: f64,
        sigma_y: f64,
        lengthscale: f64,
    },
    TwoClusters {
        n: usize,
        sigma_x: f64,
    },
    MnistBinary {
        images: PathBuf,
        labels: PathBuf,
        class_a: u8,
        class_b: u8,
        n: usize,
    },
    Csv {
        path: PathBuf,
    },
}

/// Everything needed to regenerate a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub source: Source,
    pub seed: u64,
    pub gaussian: &'static str,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledData<T: Real> {
    pub x: DMatrix<T>,
    pub y: DVector<T>,
    pub meta: Provenance,
}

impl<T: Real> LabeledData<T> {
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    /// Regenerates the data from `meta`.
    pub fn replay(&self) -> Result<Self> {
        let seed = self.meta.seed;
        match &self.meta.source {
            &Source::Grf {
                n,
                sigma_x,
                sigma_y,
                lengthscale,
            } => gen_grf(
                n,
                sigma_x,
                sigma_y,
                &KernelSpec::squared_exponential(T::lit(lengthscale))?,
                seed,
            ),
            &Source::TwoClusters { n, sigma_x } => gen_two_clusters(n, sigma_x, seed),
            Source::MnistBinary {
                images,
                labels,
                class_a,
                class_b,
                n,
            } => binary_subset(&load_mnist_idx(images, labels)?, *class_a, *class_b, *n, seed),
            Source::Csv { path } => read_labeled_csv(path),
        }
    }
}

fn provenance(source: Source, seed: u64) -> Provenance {
    Provenance {
        source,
        seed,
        gaussian: GAUSSIAN_ALGORITHM,
    }
}

/// `X ~ N(0, σ_x²I₂)` and `y = chol(K + σ_y²I)·z`, `z ~ N(0, I)`, so that
/// `y ~ N(0, K + σ_y²I)`.
pub fn gen_grf<T: Real>(
    n: usize,
    sigma_x: f64,
    sigma_y: f64,
    spec: &KernelSpec<T>,
    seed: u64,
) -> Result<LabeledData<T>> {
    if n == 0 {
        return Err(invalid("n must be at least 1"));
    }
    if !(sigma_x > 0.0) || !(sigma_y >= 0.0) || !sigma_x.is_finite() || !sigma_y.is_finite() {
        return Err(invalid("sigma_x must be positive and sigma_y non-negative"));
    }
    let mut rng = SeedStream::new(seed);
    let x = gaussian_rows(n, 2, sigma_x, &mut rng);
    let k = spec.gram(&x, &x)?;
    let l = numerics::chol_lower(&k, T::lit(sigma_y * sigma_y))?;
    let z = DVector::from_fn(n, |_, _| T::lit(rng.normal()));
    Ok(LabeledData {
        x,
        y: l * z,
        meta: provenance(
            Source::Grf {
                n,
                sigma_x,
                sigma_y,
                lengthscale: spec.lengthscale.as_f64(),
            },
            seed,
        ),
    })
}

fn gaussian_rows<T: Real>(n: usize, d: usize, scale: f64, rng: &mut SeedStream) -> DMatrix<T> {
    let mut x = DMatrix::zeros(n, d);
    for i in 0..n {
        for j in 0..d {
            x[(i, j)] = T::lit(scale * rng.normal());
        }
    }
    x
}

/// Pushes the first coordinate out of the margin on the side of `label`.
pub fn clip_margin(first: f64, label: f64) -> f64 {
    if label < 0.0 {
        first.min(-CLUSTER_MARGIN)
    } else {
        first.max(CLUSTER_MARGIN)
    }
}

/// `n/2` points around `(−2, 0)` labelled −1, then `n/2` around `(2, 0)`
/// labelled +1, each with its first coordinate clipped out of `(−0.4, 0.4)`.
pub fn gen_two_clusters<T: Real>(n: usize, sigma_x: f64, seed: u64) -> Result<LabeledData<T>> {
    if n == 0 || !n.is_multiple_of(2) {
        return Err(invalid(format!("two clusters need a positive even n, got {n}")));
    }
    if !(sigma_x > 0.0) || !sigma_x.is_finite() {
        return Err(invalid("sigma_x must be positive"));
    }
    let mut rng = SeedStream::new(seed);
    let mut x = DMatrix::zeros(n, 2);
    let mut y = DVector::zeros(n);
    for i in 0..n {
        let label = if i < n / 2 { -1.0 } else { 1.0 };
        let a = label * CLUSTER_CENTRE + sigma_x * rng.normal();
        let b = sigma_x * rng.normal();
        x[(i, 0)] = T::lit(clip_margin(a, label));
        x[(i, 1)] = T::lit(b);
        y[i] = T::lit(label);
    }
    Ok(LabeledData {
        x,
        y,
        meta: provenance(Source::TwoClusters { n, sigma_x }, seed),
    })
}

/// Raw IDX images and labels.
#[derive(Debug, Clone)]
pub struct Mnist {
    pub images: idx::IdxImages,
    pub labels: Vec<u8>,
    pub images_path: PathBuf,
    pub labels_path: PathBuf,
}

impl Mnist {
    /// Image `i` flattened and scaled to `[0, 1]`.
    pub fn pixels<T: Real>(&self, i: usize) -> impl Iterator<Item = T> + '_ {
        self.images.image(i).iter().map(|&b| T::lit(b as f64 / 255.0))
    }
}

pub fn load_mnist_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Mnist> {
    let images = idx::read_images(&images_path)?;
    let labels = idx::read_labels(&labels_path)?;
    if images.count != labels.len() {
        return Err(Error::CountMismatch {
            images: images.count,
            labels: labels.len(),
        });
    }
    Ok(Mnist {
        images,
        labels,
        images_path: images_path.as_ref().to_path_buf(),
        labels_path: labels_path.as_ref().to_path_buf(),
    })
}

/// `n/2` images of each class drawn without replacement; `class_a` rows come
/// first with label −1, then `class_b` rows with label +1.
pub fn binary_subset<T: Real>(mnist: &Mnist, class_a: u8, class_b: u8, n: usize, seed: u64) -> Result<LabeledData<T>> {
    if n == 0 || !n.is_multiple_of(2) {
        return Err(invalid(format!("binary subset needs a positive even n, got {n}")));
    }
    if class_a == class_b {
        return Err(invalid("the two classes must differ"));
    }
    let half = n / 2;
    let mut rng = SeedStream::new(seed);
    let d = mnist.images.image_len();
    let mut x = DMatrix::zeros(n, d);
    let mut y = DVector::zeros(n);
    for (block, (class, label)) in [(class_a, -1.0), (class_b, 1.0)].into_iter().enumerate() {
        let members: Vec<usize> = (0..mnist.labels.len()).filter(|&i| mnist.labels[i] == class).collect();
        if members.len() < half {
            return Err(Error::InsufficientExamples {
                class,
                needed: half,
                available: members.len(),
            });
        }
        for (k, pick) in rng
            .sample_without_replacement(members.len(), half)
            .into_iter()
            .enumerate()
        {
            let row = block * half + k;
            for (j, v) in mnist.pixels::<T>(members[pick]).enumerate() {
                x[(row, j)] = v;
            }
            y[row] = T::lit(label);
        }
    }
    Ok(LabeledData {
        x,
        y,
        meta: provenance(
            Source::MnistBinary {
                images: mnist.images_path.clone(),
                labels: mnist.labels_path.clone(),
                class_a,
                class_b,
                n,
            },
            seed,
        ),
    })
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes rows `x0, …, x{d-1}, y` (plus any extra named columns) with a header.
pub fn write_labeled_csv_to<T: Real, W: Write>(
    writer: W,
    x: &DMatrix<T>,
    y: &DVector<T>,
    extra: &[(&str, &DVector<T>)],
) -> Result<()> {
    let n = x.nrows();
    for (name, col) in std::iter::once(&("y", y)).chain(extra.iter()) {
        if col.len() != n {
            return Err(Error::DimensionMismatch {
                context: if *name == "y" { "csv labels" } else { "csv extra column" },
                expected: n,
                found: col.len(),
            });
        }
    }
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = (0..x.ncols()).map(|j| format!("x{j}")).collect();
    header.push("y".into());
    header.extend(extra.iter().map(|(name, _)| name.to_string()));
    w.write_record(&header)?;
    for i in 0..n {
        let mut rec: Vec<String> = x.row(i).iter().map(|v| format_float(v.as_f64())).collect();
        rec.push(format_float(y[i].as_f64()));
        rec.extend(extra.iter().map(|(_, c)| format_float(c[i].as_f64())));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_labeled_csv<T: Real>(
    path: impl AsRef<Path>,
    x: &DMatrix<T>,
    y: &DVector<T>,
    extra: &[(&str, &DVector<T>)],
) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_labeled_csv_to(std::io::BufWriter::new(file), x, y, extra)
}

/// Feature matrix, label column and any extra named columns.
pub type CsvColumns<T> = (DMatrix<T>, DVector<T>, Vec<(String, DVector<T>)>);

/// Reads a table written by [`write_labeled_csv`]: columns `x*` are points,
/// `y` the labels; any other columns are returned by name.
pub fn read_labeled_csv_from<T: Real, R: Read>(reader: R) -> Result<CsvColumns<T>> {
    let mut r = csv::Reader::from_reader(reader);
    let header = r.headers()?.clone();
    let y_col = header
        .iter()
        .position(|h| h == "y")
        .ok_or_else(|| Error::Csv("missing y column".into()))?;
    let x_cols: Vec<usize> = (0..header.len())
        .filter(|&j| header[j].starts_with('x') && header[j][1..].parse::<usize>().is_ok())
        .collect();
    if x_cols.is_empty() {
        return Err(Error::Csv("no point columns".into()));
    }
    let extra_cols: Vec<usize> = (0..header.len())
        .filter(|&j| j != y_col && !x_cols.contains(&j))
        .collect();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let vals = rec
            .iter()
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Csv(format!("row {}: cannot parse {s:?}", line + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::Csv(format!("row {}: non-finite value", line + 1)));
        }
        rows.push(vals);
    }
    if rows.is_empty() {
        return Err(Error::Csv("no data rows".into()));
    }
    let n = rows.len();
    let x = DMatrix::from_fn(n, x_cols.len(), |i, j| T::lit(rows[i][x_cols[j]]));
    let y = DVector::from_fn(n, |i, _| T::lit(rows[i][y_col]));
    let extra = extra_cols
        .iter()
        .map(|&j| (header[j].to_string(), DVector::from_fn(n, |i, _| T::lit(rows[i][j]))))
        .collect();
    Ok((x, y, extra))
}

pub fn read_labeled_csv<T: Real>(path: impl AsRef<Path>) -> Result<LabeledData<T>> {
    let file = std::fs::File::open(&path)?;
    let (x, y, _) = read_labeled_csv_from(std::io::BufReader::new(file))?;
    Ok(LabeledData {
        x,
        y,
        meta: provenance(
            Source::Csv {
                path: path.as_ref().to_path_buf(),
            },
            0,
        ),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn se(l: f64) -> KernelSpec<f64> {
        KernelSpec::squared_exponential(l).unwrap()
    }

    #[test]
    fn grf_is_seeded() {
        let a: LabeledData<f64> = gen_grf(30, 1.0, 0.01, &se(1.5), 4).unwrap();
        let b = gen_grf(30, 1.0, 0.01, &se(1.5), 4).unwrap();
        let c = gen_grf(30, 1.0, 0.01, &se(1.5), 5).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.x, c.x);
        assert_eq!(a.replay().unwrap(), a);
        assert_eq!(a.dim(), 2);
    }

    #[test]
    fn grf_single_point_variance() {
        let sigma_y = 0.01;
        let draws: Vec<f64> = (0..10_000)
            .map(|s| gen_grf::<f64>(1, 1.0, sigma_y, &se(1.5), s).unwrap().y[0])
            .collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let var = draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (draws.len() - 1) as f64;
        let target = 1.0 + sigma_y * sigma_y;
        assert!((var - target).abs() < 0.05 * target, "{var}");
    }

    #[test]
    fn grf_covariance_converges() {
        // fixed X: replay the first draws of a seed, then redraw z many times
        let spec = se(1.5);
        let base: LabeledData<f64> = gen_grf(5, 1.0, 0.01, &spec, 1).unwrap();
        let mut k = spec.gram(&base.x, &base.x).unwrap();
        for i in 0..5 {
            k[(i, i)] += 1e-4;
        }
        let l = numerics::chol_lower(&k, 0.0).unwrap();
        let mut rng = SeedStream::new(99);
        let mut cov = DMatrix::<f64>::zeros(5, 5);
        let draws = 10_000;
        for _ in 0..draws {
            let z = DVector::from_fn(5, |_, _| rng.normal());
            let y = &l * z;
            cov += &y * y.transpose();
        }
        cov /= draws as f64;
        assert!((&cov - &k).norm() < 0.05 * k.norm());
    }

    #[test]
    fn grf_marginal_std() {
        let mut rng = SeedStream::new(3);
        let x: DMatrix<f64> = gaussian_rows(100_000, 2, 2.5, &mut rng);
        for c in x.column_iter() {
            let std = (c.norm_squared() / c.len() as f64 - c.mean().powi(2)).sqrt();
            assert!((std - 2.5).abs() < 0.03 * 2.5);
        }
    }

    #[test]
    fn clusters_respect_margin() {
        let d: LabeledData<f64> = gen_two_clusters(400, 1.5, 2).unwrap();
        assert_eq!(d.y.sum(), 0.0);
        for i in 0..400 {
            if d.y[i] < 0.0 {
                assert!(d.x[(i, 0)] <= -0.4);
            } else {
                assert!(d.x[(i, 0)] >= 0.4);
            }
        }
        assert_eq!(clip_margin(0.3, -1.0), -0.4);
        assert!(gen_two_clusters::<f64>(5, 1.0, 0).is_err());
        assert_eq!(d.replay().unwrap(), d);
    }

    proptest! {
        #[test]
        fn clipping_is_idempotent(v in -10.0f64..10.0, neg in any::<bool>()) {
            let label = if neg { -1.0 } else { 1.0 };
            let once = clip_margin(v, label);
            prop_assert_eq!(clip_margin(once, label), once);
            if label * v >= CLUSTER_MARGIN {
                prop_assert_eq!(once, v);
            }
        }
    }

    fn toy_mnist(dir: &Path) -> Mnist {
        let images = idx::IdxImages {
            count: 6,
            rows: 1,
            cols: 3,
            pixels: vec![0, 1, 255, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17],
        };
        let ip = dir.join("img");
        let lp = dir.join("lab");
        idx::write_images(&ip, &images).unwrap();
        idx::write_labels(&lp, &[0, 1, 0, 1, 7, 0]).unwrap();
        load_mnist_idx(&ip, &lp).unwrap()
    }

    #[test]
    fn binary_subset_balanced_and_seeded() {
        let dir = tempfile::tempdir().unwrap();
        let m = toy_mnist(dir.path());
        assert_eq!(m.pixels::<f64>(0).nth(2), Some(1.0));
        let d: LabeledData<f64> = binary_subset(&m, 0, 1, 4, 3).unwrap();
        assert_eq!(d.y.iter().filter(|&&v| v == -1.0).count(), 2);
        assert_eq!(d.y.iter().filter(|&&v| v == 1.0).count(), 2);
        assert_ne!(d.x.row(0), d.x.row(1));
        assert_eq!(d.replay().unwrap(), d);
        assert!(matches!(
            binary_subset::<f64>(&m, 0, 1, 6, 3),
            Err(Error::InsufficientExamples {
                class: 0,
                needed: 3,
                available: 3
            }) | Err(Error::InsufficientExamples { class: 1, .. })
        ));
        idx::write_labels(dir.path().join("short"), &[0, 1]).unwrap();
        assert!(matches!(
            load_mnist_idx(dir.path().join("img"), dir.path().join("short")),
            Err(Error::CountMismatch { images: 6, labels: 2 })
        ));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let x = DMatrix::from_row_slice(2, 2, &[0.1, -1.0 / 3.0, 1e-300, 12345.678901234567]);
        let y = DVector::from_vec(vec![std::f64::consts::PI, -0.0]);
        let a = DVector::from_vec(vec![1.0, 2.0]);
        let mut buf = Vec::new();
        write_labeled_csv_to(&mut buf, &x, &y, &[("alpha", &a)]).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x0,x1,y,alpha\n"));
        let (x2, y2, extra) = read_labeled_csv_from::<f64, _>(buf.as_slice()).unwrap();
        assert_eq!(x2, x);
        assert_eq!(y2, y);
        assert_eq!(extra[0].0, "alpha");
        assert_relative_eq!(extra[0].1[1], 2.0);
        assert!(read_labeled_csv_from::<f64, _>("x0,y\n1,abc\n".as_bytes()).is_err());
        assert!(matches!(
            read_labeled_csv_from::<f64, _>("x0\n1\n".as_bytes()),
            Err(Error::Csv(_))
        ));
    }
}
