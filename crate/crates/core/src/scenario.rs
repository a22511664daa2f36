//! Synthetic domain-shift datasets and their CSV form.
//!
//! CSV layout: header `domain,label,f0,f1,...`, one row per sample, `domain`
//! is `source` or `target`. Target rows may carry label `-1` (unlabeled).

use std::fs::File;
use std::io::Write;
use std::path::Path;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng;

pub const BLOB_RADIUS: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub num_classes: usize,
    pub input_dim: usize,
    pub shift_kind: String,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub source_x: Matrix,
    pub source_y: Vec<usize>,
    pub target_x: Matrix,
    /// Held-out target labels, `None` for unlabeled rows. Evaluation only.
    pub target_y: Vec<Option<usize>>,
    pub meta: DatasetMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlobSpec {
    pub seed: u64,
    pub num_classes: usize,
    pub per_class: usize,
    pub input_dim: usize,
    pub rotation: f64,
    pub translation: Vec<f64>,
    pub noise_sigma: f64,
}

impl Default for BlobSpec {
    /// Two classes, 200 points per class per domain, rotated by pi/4 and
    /// shifted by (1, 1).
    fn default() -> Self {
        Self {
            seed: 0,
            num_classes: 2,
            per_class: 200,
            input_dim: 2,
            rotation: std::f64::consts::FRAC_PI_4,
            translation: vec![1.0, 1.0],
            noise_sigma: 1.0,
        }
    }
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        if self.source_x.rows() != self.source_y.len() || self.target_x.rows() != self.target_y.len() {
            return Err(Error::InvalidDataset("feature and label counts differ".into()));
        }
        if self.source_x.is_empty() || self.target_x.is_empty() {
            return Err(Error::InvalidDataset("both domains need at least one row".into()));
        }
        if self.source_x.cols() != self.target_x.cols() {
            return Err(Error::DimensionMismatch { left: self.source_x.cols(), right: self.target_x.cols() });
        }
        let k = self.meta.num_classes;
        for &y in self.source_y.iter().chain(self.target_y.iter().flatten()) {
            if y >= k {
                return Err(Error::LabelOutOfRange { label: y, num_classes: k });
            }
        }
        Ok(())
    }

    /// Labeled target rows and their labels.
    pub fn labeled_target(&self) -> (Matrix, Vec<usize>) {
        let (idx, labels): (Vec<usize>, Vec<usize>) =
            self.target_y.iter().enumerate().filter_map(|(i, y)| y.map(|y| (i, y))).unzip();
        (self.target_x.select_rows(&idx), labels)
    }

    /// Writes the CSV form. Floats use the shortest representation that
    /// parses back to the same value.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_csv_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_csv_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        let header: Vec<String> =
            ["domain".to_string(), "label".to_string()].into_iter().chain((0..self.source_x.cols()).map(|i| format!("f{i}"))).collect();
        writeln!(w, "{}", header.join(","))?;
        let mut row = |domain: &str, label: String, x: &[f64]| {
            let mut line = format!("{domain},{label}");
            for v in x {
                line.push(',');
                line.push_str(&v.to_string());
            }
            writeln!(w, "{line}")
        };
        for (x, y) in self.source_x.iter_rows().zip(&self.source_y) {
            row("source", y.to_string(), x)?;
        }
        for (x, y) in self.target_x.iter_rows().zip(&self.target_y) {
            row("target", y.map_or("-1".to_string(), |y| y.to_string()), x)?;
        }
        Ok(())
    }
}

fn rotate_translate(x: &mut [f64], rotation: f64, translation: &[f64]) {
    if x.len() >= 2 {
        let (s, c) = rotation.sin_cos();
        let (a, b) = (x[0], x[1]);
        x[0] = c * a - s * b;
        x[1] = s * a + c * b;
    }
    x.iter_mut().zip(translation).for_each(|(v, t)| *v += t);
}

/// Gaussian class blobs on a circle of radius 3 (source), and an
/// independently drawn copy rotated about the origin then translated
/// (target). Labels are shared. Rows are grouped by class.
pub fn make_blobs(spec: &BlobSpec) -> Result<Dataset> {
    let BlobSpec { seed, num_classes, per_class, input_dim, rotation, translation, noise_sigma } = spec;
    if *num_classes < 1 || *per_class < 10 || *input_dim < 2 {
        return Err(Error::InvalidDataset(format!(
            "need num_classes >= 1, per_class >= 10, input_dim >= 2; got {num_classes}, {per_class}, {input_dim}"
        )));
    }
    if !(*noise_sigma > 0.0 && noise_sigma.is_finite()) {
        return Err(Error::InvalidDataset(format!("noise_sigma must be positive, got {noise_sigma}")));
    }
    if translation.len() > *input_dim || !rotation.is_finite() || translation.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidDataset("translation longer than input_dim or non-finite shift".into()));
    }
    let noise = Normal::new(0.0, *noise_sigma).expect("sigma checked");
    let centers: Vec<Vec<f64>> = (0..*num_classes)
        .map(|k| {
            let phi = 2.0 * std::f64::consts::PI * k as f64 / *num_classes as f64;
            let mut c = vec![0.0; *input_dim];
            c[0] = BLOB_RADIUS * phi.cos();
            c[1] = BLOB_RADIUS * phi.sin();
            c
        })
        .collect();

    let draw = |stream: &str| -> (Vec<f64>, Vec<usize>) {
        let mut rng = rng::stream(*seed, stream);
        let mut data = Vec::with_capacity(num_classes * per_class * input_dim);
        let mut labels = Vec::with_capacity(num_classes * per_class);
        for (k, c) in centers.iter().enumerate() {
            for _ in 0..*per_class {
                data.extend(c.iter().map(|m| m + noise.sample(&mut rng)));
                labels.push(k);
            }
        }
        (data, labels)
    };

    let (sx, sy) = draw("data/source");
    let (mut tx, ty) = draw("data/target");
    tx.chunks_mut(*input_dim).for_each(|x| rotate_translate(x, *rotation, translation));
    let n = num_classes * per_class;
    let shift_kind = if *rotation == 0.0 && translation.iter().all(|&t| t == 0.0) { "none" } else { "rotate-translate" };
    Ok(Dataset {
        source_x: Matrix::new(n, *input_dim, sx)?,
        source_y: sy,
        target_x: Matrix::new(n, *input_dim, tx)?,
        target_y: ty.into_iter().map(Some).collect(),
        meta: DatasetMeta {
            num_classes: *num_classes,
            input_dim: *input_dim,
            shift_kind: shift_kind.into(),
            seed: Some(*seed),
        },
    })
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, path)
}

/// Parses the CSV form; `origin` is only used in error messages.
pub fn read_csv<R: std::io::Read>(reader: R, origin: &Path) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(reader);
    let mut records = rdr.records();
    let err = |line: usize, msg: String| Error::parse(origin, line, msg);

    let header = match records.next() {
        None => return Err(err(1, "empty file, expected header `domain,label,f0,...`".into())),
        Some(r) => r.map_err(|e| err(1, e.to_string()))?,
    };
    let cols: Vec<&str> = header.iter().map(str::trim).collect();
    let features_ok = cols.len() > 2 && cols[2..].iter().enumerate().all(|(i, c)| *c == format!("f{i}"));
    if cols.first() != Some(&"domain") || cols.get(1) != Some(&"label") || !features_ok {
        return Err(err(1, "missing or malformed header, expected `domain,label,f0,f1,...`".into()));
    }
    let dim = cols.len() - 2;

    let (mut sx, mut sy, mut tx, mut ty) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (i, rec) in records.enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| err(line, e.to_string()))?;
        if rec.len() != dim + 2 {
            return Err(err(line, format!("expected {} fields, found {}", dim + 2, rec.len())));
        }
        let label: i64 = rec[1].trim().parse().map_err(|_| err(line, format!("invalid label `{}`", &rec[1])))?;
        let mut x = Vec::with_capacity(dim);
        for field in rec.iter().skip(2) {
            let v: f64 = field.trim().parse().map_err(|_| err(line, format!("invalid number `{field}`")))?;
            if !v.is_finite() {
                return Err(err(line, format!("non-finite feature `{field}`")));
            }
            x.push(v);
        }
        match rec[0].trim() {
            "source" => {
                if label < 0 {
                    return Err(err(line, "source rows need a non-negative label".into()));
                }
                sy.push(label as usize);
                sx.extend(x);
            }
            "target" => {
                if label < -1 {
                    return Err(err(line, format!("invalid target label {label}")));
                }
                ty.push((label >= 0).then_some(label as usize));
                tx.extend(x);
            }
            other => return Err(err(line, format!("unknown domain `{other}`"))),
        }
    }
    let num_classes = sy.iter().chain(ty.iter().flatten()).max().map_or(0, |m| m + 1);
    let ds = Dataset {
        source_x: Matrix::new(sy.len(), dim, sx)?,
        source_y: sy,
        target_x: Matrix::new(ty.len(), dim, tx)?,
        target_y: ty,
        meta: DatasetMeta { num_classes, input_dim: dim, shift_kind: "csv".into(), seed: None },
    };
    ds.validate()?;
    Ok(ds)
}
