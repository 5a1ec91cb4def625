//! Multi-domain datasets: synthetic generation with controllable covariate
//! and target shift, CSV ingestion, and the per-domain mini-batch sampler.

use crate::augment::AugmentedBatch;
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// A labeled or unlabeled sample collection tagged with a domain identifier.
///
/// Target-domain labels, when known from generation, are sealed in a
/// separate oracle field: [`DomainDataset::labels`] never exposes them. Only
/// the explicitly named [`DomainDataset::oracle_labels`] accessor does, and
/// it exists for the fully supervised baseline, the lambda estimate, and
/// evaluation.
#[derive(Debug, Clone)]
pub struct DomainDataset {
    domain_id: String,
    features: Tensor,
    labels: Option<Vec<usize>>,
    oracle_labels: Option<Vec<usize>>,
    num_classes: usize,
    split: Split,
}

impl DomainDataset {
    pub fn labeled(
        domain_id: impl Into<String>,
        features: Tensor,
        labels: Vec<usize>,
        num_classes: usize,
        split: Split,
    ) -> Result<Self> {
        let ds = DomainDataset {
            domain_id: domain_id.into(),
            features,
            labels: Some(labels),
            oracle_labels: None,
            num_classes,
            split,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn unlabeled(
        domain_id: impl Into<String>,
        features: Tensor,
        num_classes: usize,
        split: Split,
    ) -> Result<Self> {
        let ds = DomainDataset {
            domain_id: domain_id.into(),
            features,
            labels: None,
            oracle_labels: None,
            num_classes,
            split,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Unlabeled dataset whose ground truth is retained for oracle use only.
    pub fn unlabeled_with_oracle(
        domain_id: impl Into<String>,
        features: Tensor,
        oracle_labels: Vec<usize>,
        num_classes: usize,
        split: Split,
    ) -> Result<Self> {
        let ds = DomainDataset {
            domain_id: domain_id.into(),
            features,
            labels: None,
            oracle_labels: Some(oracle_labels),
            num_classes,
            split,
        };
        ds.validate()?;
        Ok(ds)
    }

    fn validate(&self) -> Result<()> {
        if self.features.rank() != 2 {
            return Err(Error::ShapeMismatch {
                op: "dataset",
                details: format!("features must be rank-2, got {:?}", self.features.shape()),
            });
        }
        if !self.features.all_finite() {
            return Err(Error::NonFinite(format!("features of domain {}", self.domain_id)));
        }
        for labels in [&self.labels, &self.oracle_labels].into_iter().flatten() {
            if labels.len() != self.features.rows() {
                return Err(Error::ShapeMismatch {
                    op: "dataset",
                    details: format!(
                        "{} labels for {} rows in domain {}",
                        labels.len(),
                        self.features.rows(),
                        self.domain_id
                    ),
                });
            }
            if let Some(&bad) = labels.iter().find(|&&l| l >= self.num_classes) {
                return Err(Error::LabelOutOfRange { label: bad, classes: self.num_classes });
            }
        }
        Ok(())
    }

    pub fn domain_id(&self) -> &str {
        &self.domain_id
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    /// Ground-truth labels of a generated target domain. Oracle use only.
    pub fn oracle_labels(&self) -> Option<&[usize]> {
        self.oracle_labels.as_deref()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn n(&self) -> usize {
        self.features.rows()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Re-expose oracle labels as ordinary labels (fully supervised
    /// baseline). Errors when no oracle labels exist.
    pub fn promote_oracle_labels(&self) -> Result<DomainDataset> {
        let labels = self
            .oracle_labels
            .clone()
            .ok_or_else(|| Error::InvalidArgument(format!(
                "domain {} has no oracle labels to promote",
                self.domain_id
            )))?;
        DomainDataset::labeled(
            self.domain_id.clone(),
            self.features.clone(),
            labels,
            self.num_classes,
            self.split,
        )
    }
}

// ---------------------------------------------------------------------------
// Synthetic generation
// ---------------------------------------------------------------------------

/// Per-domain shift knobs: a rotation of the class means about the origin
/// (covariate shift), a label prior (target shift), and an optional full
/// covariance replacing the isotropic default.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainShift {
    pub angle_deg: f64,
    pub prior: Vec<f64>,
    /// Row-major D x D covariance; isotropic `noise_sigma^2 I` when absent.
    pub covariance: Option<Vec<f64>>,
}

impl DomainShift {
    pub fn new(angle_deg: f64, prior: Vec<f64>) -> Self {
        DomainShift { angle_deg, prior, covariance: None }
    }
}

/// Blueprint for a family of related Gaussian-mixture classification
/// domains: class means evenly spaced on a circle of `radius`, rotated
/// per domain, with per-domain label priors.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftSpec {
    pub classes: usize,
    pub dim: usize,
    pub radius: f64,
    pub noise_sigma: f64,
    pub sources: Vec<DomainShift>,
    pub target: DomainShift,
    pub samples_per_domain: usize,
    /// Held-out fraction generated separately for each domain's test split.
    pub test_fraction: f64,
}

fn uniform_prior(classes: usize) -> Vec<f64> {
    vec![1.0 / classes as f64; classes]
}

impl ShiftSpec {
    pub fn num_sources(&self) -> usize {
        self.sources.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.sources.is_empty() {
            return Err(Error::InvalidArgument("need at least one source domain".into()));
        }
        if self.classes < 2 {
            return Err(Error::InvalidArgument("need at least two classes".into()));
        }
        if self.dim < 2 {
            return Err(Error::InvalidArgument("need dim >= 2".into()));
        }
        if self.noise_sigma <= 0.0 || self.noise_sigma.is_nan() {
            return Err(Error::InvalidArgument("noise_sigma must be positive".into()));
        }
        if self.samples_per_domain == 0 {
            return Err(Error::InvalidArgument("samples_per_domain must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::InvalidArgument("test_fraction must be in [0,1)".into()));
        }
        for shift in self.sources.iter().chain([&self.target]) {
            if shift.prior.len() != self.classes {
                return Err(Error::InvalidArgument(format!(
                    "prior length {} != classes {}",
                    shift.prior.len(),
                    self.classes
                )));
            }
            if shift.prior.iter().any(|&p| p < 0.0) {
                return Err(Error::InvalidArgument("negative prior component".into()));
            }
            let sum: f64 = shift.prior.iter().sum();
            if (sum - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidArgument(format!(
                    "label prior sums to {sum}, must be 1 within 1e-12"
                )));
            }
            if let Some(cov) = &shift.covariance {
                if cov.len() != self.dim * self.dim {
                    return Err(Error::InvalidArgument(format!(
                        "covariance has {} entries for dim {}",
                        cov.len(),
                        self.dim
                    )));
                }
                cholesky(cov, self.dim)?;
            }
        }
        Ok(())
    }

    /// All domains identical: no covariate shift, no target shift.
    pub fn zero_shift(num_sources: usize, samples_per_domain: usize) -> Self {
        let classes = 3;
        ShiftSpec {
            classes,
            dim: 2,
            radius: 2.0,
            noise_sigma: 0.5,
            sources: (0..num_sources)
                .map(|_| DomainShift::new(0.0, uniform_prior(classes)))
                .collect(),
            target: DomainShift::new(0.0, uniform_prior(classes)),
            samples_per_domain,
            test_fraction: 0.25,
        }
    }

    /// Default covariate-shifted task: three sources at staggered rotations,
    /// target rotated past the span; label priors all uniform.
    pub fn covariate_default(samples_per_domain: usize) -> Self {
        let classes = 3;
        ShiftSpec {
            classes,
            dim: 2,
            radius: 2.0,
            noise_sigma: 0.5,
            sources: vec![
                DomainShift::new(0.0, uniform_prior(classes)),
                DomainShift::new(15.0, uniform_prior(classes)),
                DomainShift::new(30.0, uniform_prior(classes)),
            ],
            target: DomainShift::new(60.0, uniform_prior(classes)),
            samples_per_domain,
            test_fraction: 0.25,
        }
    }

    /// Label-shifted task: same geometry as the covariate default plus a
    /// skewed target label prior.
    pub fn label_shift_default(samples_per_domain: usize) -> Self {
        let mut spec = Self::covariate_default(samples_per_domain);
        spec.target.prior = vec![0.6, 0.25, 0.15];
        spec
    }

    /// Mixture-collapse task: source 0 is distributed exactly like the
    /// target while the remaining sources sit far away.
    pub fn collapse_task(samples_per_domain: usize) -> Self {
        let classes = 3;
        ShiftSpec {
            classes,
            dim: 2,
            radius: 2.0,
            noise_sigma: 0.5,
            sources: vec![
                DomainShift::new(0.0, uniform_prior(classes)),
                DomainShift::new(60.0, uniform_prior(classes)),
                DomainShift::new(-60.0, uniform_prior(classes)),
            ],
            target: DomainShift::new(0.0, uniform_prior(classes)),
            samples_per_domain,
            test_fraction: 0.25,
        }
    }
}

/// Lower-triangular Cholesky factor; errors when the matrix is not
/// positive-definite.
fn cholesky(cov: &[f64], dim: usize) -> Result<Vec<f64>> {
    let mut l = vec![0.0; dim * dim];
    for i in 0..dim {
        for j in 0..=i {
            let mut s = cov[i * dim + j];
            for k in 0..j {
                s -= l[i * dim + k] * l[j * dim + k];
            }
            if i == j {
                if s <= 0.0 {
                    return Err(Error::InvalidArgument(
                        "covariance is not positive-definite".into(),
                    ));
                }
                l[i * dim + i] = s.sqrt();
            } else {
                l[i * dim + j] = s / l[j * dim + j];
            }
        }
    }
    Ok(l)
}

/// Class mean layout: evenly spaced on a circle in the first two feature
/// dimensions, rotated by the domain angle.
pub fn class_mean(spec: &ShiftSpec, angle_deg: f64, class: usize) -> Vec<f64> {
    let base = 2.0 * std::f64::consts::PI * class as f64 / spec.classes as f64
        + std::f64::consts::FRAC_PI_2;
    let theta = base + angle_deg.to_radians();
    let mut mean = vec![0.0; spec.dim];
    mean[0] = spec.radius * theta.cos();
    mean[1] = spec.radius * theta.sin();
    mean
}

/// The generated family: labeled source train/test splits plus an
/// unlabeled target with sealed oracle labels.
#[derive(Debug, Clone)]
pub struct GeneratedDomains {
    pub sources: Vec<DomainDataset>,
    pub source_tests: Vec<DomainDataset>,
    pub target_train: DomainDataset,
    pub target_test: DomainDataset,
}

/// Generate all domains. A pure function of `(spec, seed)`: repeated calls
/// are bitwise identical.
pub fn generate_domains(spec: &ShiftSpec, seed: u64) -> Result<GeneratedDomains> {
    spec.validate()?;
    let n_test = ((spec.samples_per_domain as f64) * spec.test_fraction).ceil() as usize;

    let mut sources = Vec::new();
    let mut source_tests = Vec::new();
    for (j, shift) in spec.sources.iter().enumerate() {
        let (feat, labels) =
            sample_domain(spec, shift, spec.samples_per_domain, rng::sub_seed(seed, j as u64, 0))?;
        sources.push(DomainDataset::labeled(
            format!("source_{j}"),
            feat,
            labels,
            spec.classes,
            Split::Train,
        )?);
        let (feat_t, labels_t) =
            sample_domain(spec, shift, n_test, rng::sub_seed(seed, j as u64, 1))?;
        source_tests.push(DomainDataset::labeled(
            format!("source_{j}"),
            feat_t,
            labels_t,
            spec.classes,
            Split::Test,
        )?);
    }

    let m = spec.sources.len() as u64;
    let (tf, tl) =
        sample_domain(spec, &spec.target, spec.samples_per_domain, rng::sub_seed(seed, m, 0))?;
    let target_train =
        DomainDataset::unlabeled_with_oracle("target", tf, tl, spec.classes, Split::Train)?;
    let (tf_t, tl_t) = sample_domain(spec, &spec.target, n_test, rng::sub_seed(seed, m, 1))?;
    let target_test =
        DomainDataset::unlabeled_with_oracle("target", tf_t, tl_t, spec.classes, Split::Test)?;

    Ok(GeneratedDomains { sources, source_tests, target_train, target_test })
}

fn sample_domain(
    spec: &ShiftSpec,
    shift: &DomainShift,
    n: usize,
    seed: u64,
) -> Result<(Tensor, Vec<usize>)> {
    use rand_chacha::rand_core::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let chol = shift.covariance.as_ref().map(|c| cholesky(c, spec.dim)).transpose()?;
    let means: Vec<Vec<f64>> =
        (0..spec.classes).map(|c| class_mean(spec, shift.angle_deg, c)).collect();

    let mut features = Vec::with_capacity(n * spec.dim);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut label = spec.classes - 1;
        for (c, p) in shift.prior.iter().enumerate() {
            acc += p;
            if u < acc {
                label = c;
                break;
            }
        }
        labels.push(label);
        let z: Vec<f64> = (0..spec.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        match &chol {
            None => {
                for d in 0..spec.dim {
                    features.push(means[label][d] + spec.noise_sigma * z[d]);
                }
            }
            Some(l) => {
                for d in 0..spec.dim {
                    let mut v = means[label][d];
                    for (k, zk) in z.iter().enumerate().take(d + 1) {
                        v += l[d * spec.dim + k] * zk;
                    }
                    features.push(v);
                }
            }
        }
    }
    Ok((Tensor::matrix(n, spec.dim, features)?, labels))
}

// ---------------------------------------------------------------------------
// CSV ingestion
// ---------------------------------------------------------------------------
//
// Contract: UTF-8 with a header row; feature columns named f0..f{D-1};
// optional trailing integer column "label"; optional column "domain".

struct CsvLayout {
    feature_cols: Vec<usize>,
    label_col: Option<usize>,
    domain_col: Option<usize>,
}

fn csv_layout(headers: &csv::StringRecord, has_labels: bool) -> Result<CsvLayout> {
    let mut feature_cols = Vec::new();
    let mut label_col = None;
    let mut domain_col = None;
    for (idx, name) in headers.iter().enumerate() {
        let name = name.trim();
        if name == "label" {
            label_col = Some(idx);
        } else if name == "domain" {
            domain_col = Some(idx);
        } else if let Some(rest) = name.strip_prefix('f') {
            if rest.parse::<usize>().is_ok() {
                feature_cols.push(idx);
            } else {
                return Err(Error::Csv { row: 0, msg: format!("unrecognized column {name}") });
            }
        } else {
            return Err(Error::Csv { row: 0, msg: format!("unrecognized column {name}") });
        }
    }
    if feature_cols.is_empty() {
        return Err(Error::Csv { row: 0, msg: "no feature columns f0..fD-1".into() });
    }
    if has_labels && label_col.is_none() {
        return Err(Error::Csv { row: 0, msg: "label column required but absent".into() });
    }
    Ok(CsvLayout { feature_cols, label_col, domain_col })
}

struct CsvRows {
    dim: usize,
    rows: Vec<(String, Vec<f64>, Option<usize>)>,
}

fn read_csv_rows(path: &Path, has_labels: bool) -> Result<CsvRows> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)
        .map_err(|e| Error::Csv { row: 0, msg: e.to_string() })?;
    let headers = reader.headers().map_err(|e| Error::Csv { row: 0, msg: e.to_string() })?.clone();
    let layout = csv_layout(&headers, has_labels)?;

    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row_no = i + 1;
        let record = record.map_err(|e| Error::Csv { row: row_no, msg: e.to_string() })?;
        let mut feats = Vec::with_capacity(layout.feature_cols.len());
        for &c in &layout.feature_cols {
            let raw = record.get(c).ok_or(Error::Csv { row: row_no, msg: "short row".into() })?;
            let v: f64 = raw.trim().parse().map_err(|_| Error::Csv {
                row: row_no,
                msg: format!("non-numeric field {raw:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Csv { row: row_no, msg: format!("non-finite field {raw}") });
            }
            feats.push(v);
        }
        let label = match (has_labels, layout.label_col) {
            (true, Some(c)) => {
                let raw =
                    record.get(c).ok_or(Error::Csv { row: row_no, msg: "short row".into() })?;
                let l: i64 = raw.trim().parse().map_err(|_| Error::Csv {
                    row: row_no,
                    msg: format!("non-integer label {raw:?}"),
                })?;
                if l < 0 {
                    return Err(Error::Csv { row: row_no, msg: format!("negative label {l}") });
                }
                Some(l as usize)
            }
            _ => None,
        };
        let domain = layout
            .domain_col
            .and_then(|c| record.get(c))
            .map(str::trim)
            .unwrap_or("default")
            .to_string();
        rows.push((domain, feats, label));
    }
    if rows.is_empty() {
        return Err(Error::Csv { row: 0, msg: "empty file".into() });
    }
    Ok(CsvRows { dim: layout.feature_cols.len(), rows })
}

fn dataset_from_rows(
    domain_id: String,
    dim: usize,
    rows: Vec<(Vec<f64>, Option<usize>)>,
    has_labels: bool,
    split: Split,
) -> Result<DomainDataset> {
    let n = rows.len();
    let mut feats = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for (f, l) in rows {
        feats.extend(f);
        if let Some(l) = l {
            labels.push(l);
        }
    }
    let features = Tensor::matrix(n, dim, feats)?;
    if has_labels {
        let classes = labels.iter().copied().max().unwrap_or(0) + 1;
        DomainDataset::labeled(domain_id, features, labels, classes, split)
    } else {
        // class count unknown from an unlabeled file; callers set context
        DomainDataset::unlabeled(domain_id, features, usize::MAX, split)
    }
}

/// Load a single-domain CSV file. Files holding several domains are
/// rejected; use [`load_csv_domains`] for those.
pub fn load_csv(path: impl AsRef<Path>, has_labels: bool) -> Result<DomainDataset> {
    let parsed = read_csv_rows(path.as_ref(), has_labels)?;
    let first_domain = parsed.rows[0].0.clone();
    if parsed.rows.iter().any(|(d, _, _)| *d != first_domain) {
        return Err(Error::Csv {
            row: 0,
            msg: "file contains multiple domains; use load_csv_domains".into(),
        });
    }
    let rows = parsed.rows.into_iter().map(|(_, f, l)| (f, l)).collect();
    dataset_from_rows(first_domain, parsed.dim, rows, has_labels, Split::Train)
}

/// Load a multi-domain CSV file, splitting on the `domain` column. Domains
/// are returned in order of first appearance.
pub fn load_csv_domains(path: impl AsRef<Path>, has_labels: bool) -> Result<Vec<DomainDataset>> {
    let parsed = read_csv_rows(path.as_ref(), has_labels)?;
    let mut order: Vec<String> = Vec::new();
    for (d, _, _) in &parsed.rows {
        if !order.contains(d) {
            order.push(d.clone());
        }
    }
    order
        .into_iter()
        .map(|domain| {
            let rows = parsed
                .rows
                .iter()
                .filter(|(d, _, _)| *d == domain)
                .map(|(_, f, l)| (f.clone(), *l))
                .collect();
            dataset_from_rows(domain, parsed.dim, rows, has_labels, Split::Train)
        })
        .collect()
}

/// Write a dataset following the CSV contract. Labels are written only when
/// `include_labels` is set and the dataset (or its oracle) has them.
pub fn write_csv(
    ds: &DomainDataset,
    path: impl AsRef<Path>,
    include_labels: bool,
    include_domain: bool,
) -> Result<()> {
    let mut writer =
        csv::Writer::from_path(path.as_ref()).map_err(|e| Error::Csv { row: 0, msg: e.to_string() })?;
    let labels = if include_labels {
        ds.labels().or_else(|| ds.oracle_labels())
    } else {
        None
    };
    let mut header: Vec<String> = (0..ds.dim()).map(|d| format!("f{d}")).collect();
    if labels.is_some() {
        header.push("label".into());
    }
    if include_domain {
        header.push("domain".into());
    }
    writer.write_record(&header).map_err(|e| Error::Csv { row: 0, msg: e.to_string() })?;
    for i in 0..ds.n() {
        let mut record: Vec<String> = ds.features().row(i).iter().map(|v| format!("{v}")).collect();
        if let Some(l) = labels {
            record.push(format!("{}", l[i]));
        }
        if include_domain {
            record.push(ds.domain_id().to_string());
        }
        writer.write_record(&record).map_err(|e| Error::Csv { row: i + 1, msg: e.to_string() })?;
    }
    writer.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Mini-batch sampling
// ---------------------------------------------------------------------------

/// Per-iteration mini-batches: one labeled batch per source plus one
/// unlabeled target batch, all of exactly `m` rows.
#[derive(Debug, Clone)]
pub struct BatchBundle {
    pub source_features: Vec<Tensor>,
    pub source_labels: Vec<Vec<usize>>,
    pub source_indices: Vec<Vec<usize>>,
    pub target_features: Tensor,
    pub target_indices: Vec<usize>,
    /// Augmented target batch, filled by the trainer before each step.
    pub augmented: Option<AugmentedBatch>,
    pub m: usize,
}

impl BatchBundle {
    pub fn num_sources(&self) -> usize {
        self.source_features.len()
    }
}

fn epoch_batch(n: usize, m: usize, seed: u64, domain_tag: u64, iteration: u64) -> Vec<usize> {
    let batches_per_epoch = (n / m) as u64;
    let epoch = iteration / batches_per_epoch;
    let slot = (iteration % batches_per_epoch) as usize;
    let mut perm: Vec<usize> = (0..n).collect();
    let mut r = rng::stream_rng(seed, domain_tag, epoch);
    perm.shuffle(&mut r);
    perm[slot * m..(slot + 1) * m].to_vec()
}

/// Sample one bundle of mini-batches. Sampling is uniform without
/// replacement within an epoch (each domain reshuffles once its own epoch
/// rolls over) and is a pure function of `(seed, iteration)`.
pub fn sample_batches(
    sources: &[DomainDataset],
    target: &DomainDataset,
    m: usize,
    seed: u64,
    iteration: u64,
) -> Result<BatchBundle> {
    if m == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    for ds in sources.iter().chain([target]) {
        if ds.n() < m {
            return Err(Error::InvalidArgument(format!(
                "batch size {} exceeds {} rows of domain {}",
                m,
                ds.n(),
                ds.domain_id()
            )));
        }
    }
    for (j, ds) in sources.iter().enumerate() {
        if ds.labels().is_none() {
            return Err(Error::InvalidArgument(format!("source {j} has no labels")));
        }
    }

    let mut source_features = Vec::with_capacity(sources.len());
    let mut source_labels = Vec::with_capacity(sources.len());
    let mut source_indices = Vec::with_capacity(sources.len());
    for (j, ds) in sources.iter().enumerate() {
        let idx = epoch_batch(ds.n(), m, seed, j as u64, iteration);
        source_features.push(ds.features().gather_rows(&idx)?);
        let labels = ds.labels().unwrap();
        source_labels.push(idx.iter().map(|&i| labels[i]).collect());
        source_indices.push(idx);
    }
    let t_idx = epoch_batch(target.n(), m, seed, sources.len() as u64, iteration);
    let target_features = target.features().gather_rows(&t_idx)?;

    Ok(BatchBundle {
        source_features,
        source_labels,
        source_indices,
        target_features,
        target_indices: t_idx,
        augmented: None,
        m,
    })
}
