use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use super::ProblemError;

/// Dense samples stored row-major, one label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<f64>,
    n: usize,
    d: usize,
}

impl Dataset {
    pub fn new(features: Vec<f64>, labels: Vec<f64>, d: usize) -> Result<Self, ProblemError> {
        if d == 0 {
            return Err(ProblemError::Invalid("feature dimension must be positive".into()));
        }
        if features.len() != labels.len() * d {
            return Err(ProblemError::Dimension {
                expected: labels.len() * d,
                got: features.len(),
            });
        }
        if features.iter().chain(&labels).any(|v| !v.is_finite()) {
            return Err(ProblemError::Invalid("non-finite entry in dataset".into()));
        }
        let n = labels.len();
        Ok(Self { features, labels, n, d })
    }

    pub fn from_rows(rows: &[Vec<f64>], labels: Vec<f64>) -> Result<Self, ProblemError> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(ProblemError::Invalid("ragged rows".into()));
        }
        Self::new(rows.concat(), labels, d)
    }

    /// A dataset with no samples, for regularizer-only objectives.
    pub fn empty(d: usize) -> Self {
        Self { features: Vec::new(), labels: Vec::new(), n: 0, d }
    }

    /// Reads a headerless dense CSV whose last column is the label.
    pub fn from_csv(path: &Path) -> Result<Self, ProblemError> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_path(path)?;
        let mut features = Vec::new();
        let mut labels = Vec::new();
        let mut width = None;
        for (line, record) in reader.records().enumerate() {
            let record = record?;
            if record.len() < 2 {
                return Err(ProblemError::Invalid(format!("row {line}: need features and a label")));
            }
            if *width.get_or_insert(record.len()) != record.len() {
                return Err(ProblemError::Invalid(format!("row {line}: inconsistent column count")));
            }
            for (col, field) in record.iter().enumerate() {
                let v: f64 = field
                    .parse()
                    .map_err(|_| ProblemError::Invalid(format!("row {line} col {col}: `{field}` is not a number")))?;
                if col + 1 == record.len() {
                    labels.push(v);
                } else {
                    features.push(v);
                }
            }
        }
        let d = width.ok_or_else(|| ProblemError::Invalid("empty csv".into()))? - 1;
        Self::new(features, labels, d)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.d..(i + 1) * self.d]
    }

    pub fn label(&self, i: usize) -> f64 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    /// Labels as signs: {0, 1} is mapped to {-1, +1}; anything else outside {-1, +1} is rejected.
    pub fn with_sign_labels(mut self) -> Result<Self, ProblemError> {
        if self.labels.iter().all(|&b| b == 0.0 || b == 1.0) && self.labels.contains(&0.0) {
            for b in &mut self.labels {
                *b = 2.0 * *b - 1.0;
            }
        }
        if let Some(bad) = self.labels.iter().find(|&&b| b != 1.0 && b != -1.0) {
            return Err(ProblemError::Labels(format!("label {bad} is not in {{-1, +1}}")));
        }
        Ok(self)
    }

    /// Appends a constant 1 to every row.
    pub fn with_bias_column(&self) -> Self {
        let d = self.d + 1;
        let mut features = Vec::with_capacity(self.n * d);
        for i in 0..self.n {
            features.extend_from_slice(self.row(i));
            features.push(1.0);
        }
        Self { features, labels: self.labels.clone(), n: self.n, d }
    }

    pub fn replace_labels(&self, labels: Vec<f64>) -> Result<Self, ProblemError> {
        Self::new(self.features.clone(), labels, self.d)
    }

    pub fn max_row_norm(&self) -> f64 {
        (0..self.n).map(|i| norm(self.row(i))).fold(0.0, f64::max)
    }

    pub fn mean_row_norm_sq(&self) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        self.features.iter().map(|v| v * v).sum::<f64>() / self.n as f64
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelModel {
    /// `b = <a, w> + noise * e`
    Linear,
    /// `b = |<a, w>| + noise * e`
    Magnitude,
    /// `b = sign(<a, w> + noise * e)`
    Sign,
    /// `b = 0`; only the features are random.
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    #[default]
    Gaussian,
    /// Student-t with 2 degrees of freedom.
    HeavyTailed,
}

/// Gaussian features with a planted signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n: usize,
    pub d: usize,
    pub labels: LabelModel,
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub noise_kind: NoiseKind,
    /// Scale every row to unit Euclidean norm.
    #[serde(default)]
    pub unit_rows: bool,
    #[serde(default)]
    pub seed: u64,
}

impl SyntheticSpec {
    /// Returns the dataset and the planted signal.
    pub fn generate(&self) -> Result<(Dataset, Vec<f64>), ProblemError> {
        if self.d == 0 {
            return Err(ProblemError::Invalid("synthetic data needs d >= 1".into()));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(ProblemError::Invalid("noise level must be non-negative".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let signal: Vec<f64> = (0..self.d).map(|_| rng.sample(StandardNormal)).collect();
        let student = StudentT::new(2.0).expect("valid degrees of freedom");
        let mut features = Vec::with_capacity(self.n * self.d);
        let mut labels = Vec::with_capacity(self.n);
        for _ in 0..self.n {
            let mut row: Vec<f64> = (0..self.d).map(|_| rng.sample(StandardNormal)).collect();
            if self.unit_rows {
                let s = norm(&row);
                row.iter_mut().for_each(|v| *v /= s);
            }
            let clean: f64 = row.iter().zip(&signal).map(|(a, w)| a * w).sum();
            let e: f64 = match self.noise_kind {
                NoiseKind::Gaussian => rng.sample(StandardNormal),
                NoiseKind::HeavyTailed => student.sample(&mut rng),
            };
            let noisy = clean + self.noise * e;
            labels.push(match self.labels {
                LabelModel::Linear => noisy,
                LabelModel::Magnitude => clean.abs() + self.noise * e,
                LabelModel::Sign => {
                    if noisy >= 0.0 {
                        1.0
                    } else {
                        -1.0
                    }
                }
                LabelModel::Zero => 0.0,
            });
            features.extend(row);
        }
        Ok((Dataset::new(features, labels, self.d)?, signal))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn csv_ingestion_and_label_mapping() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, "1.0, 2.0, 0\n3.5,-1,1\n0,0,1").unwrap();
        let data = Dataset::from_csv(file.path()).unwrap();
        assert_eq!((data.n(), data.d()), (3, 2));
        assert_eq!(data.row(1), &[3.5, -1.0]);
        let signed = data.with_sign_labels().unwrap();
        assert_eq!(signed.labels(), &[-1.0, 1.0, 1.0]);
    }

    #[test]
    fn csv_rejects_garbage() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, "1.0,x,0").unwrap();
        assert!(Dataset::from_csv(file.path()).is_err());
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, "1.0,2,0\n1,1").unwrap();
        assert!(Dataset::from_csv(file.path()).is_err());
    }

    #[test]
    fn bad_labels() {
        let data = Dataset::from_rows(&[vec![1.0], vec![2.0]], vec![1.0, 2.0]).unwrap();
        assert!(matches!(data.with_sign_labels(), Err(ProblemError::Labels(_))));
    }

    #[test]
    fn synthetic_is_deterministic() {
        let spec = SyntheticSpec {
            n: 7,
            d: 3,
            labels: LabelModel::Sign,
            noise: 0.1,
            noise_kind: NoiseKind::Gaussian,
            unit_rows: true,
            seed: 11,
        };
        let (a, w) = spec.generate().unwrap();
        let (b, v) = spec.generate().unwrap();
        assert_eq!(a, b);
        assert_eq!(w, v);
        assert!((a.max_row_norm() - 1.0).abs() < 1e-12);
        assert!(a.labels().iter().all(|&l| l == 1.0 || l == -1.0));
    }

    #[test]
    fn bias_column() {
        let data = Dataset::from_rows(&[vec![1.0, 2.0]], vec![1.0]).unwrap();
        assert_eq!(data.with_bias_column().row(0), &[1.0, 2.0, 1.0]);
    }
}
