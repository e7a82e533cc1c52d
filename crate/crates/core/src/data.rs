//! Samples, datasets, splitting, normalization and target encoding.
//!
//! Dataset files are CSV with the header `person_id,trial_id,f1,...,fP`,
//! one sample per row.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Floor applied to per-feature standard deviations.
pub const STD_FLOOR: f64 = 1e-8;

/// Default feature count of the hand-geometry setup.
pub const DEFAULT_DIMS: usize = 9;

/// One measured realization of one person.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector<T> {
    pub person_id: usize,
    pub trial_id: usize,
    pub features: Vec<T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitTag {
    Full,
    Train,
    Test,
}

/// Validated collection of samples covering persons `0..people_count`.
///
/// Samples are kept sorted by `(person_id, trial_id)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset<T> {
    people_count: usize,
    dims: usize,
    samples: Vec<FeatureVector<T>>,
    split: SplitTag,
}

impl<T: Real> LabeledDataset<T> {
    /// Checks every dataset invariant; `people_count` is one past the
    /// largest person id and every id below it must be present.
    pub fn new(mut samples: Vec<FeatureVector<T>>, split: SplitTag) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::InvalidData("no samples".into()))?;
        let dims = first.features.len();
        if dims == 0 {
            return Err(Error::InvalidData("samples have no features".into()));
        }
        let mut seen = HashSet::with_capacity(samples.len());
        let mut people = 0;
        for s in &samples {
            if s.features.len() != dims {
                return Err(Error::Dimension {
                    expected: dims,
                    got: s.features.len(),
                });
            }
            if s.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("features"));
            }
            if !seen.insert((s.person_id, s.trial_id)) {
                return Err(Error::InvalidData(format!(
                    "duplicate sample for person {} trial {}",
                    s.person_id, s.trial_id
                )));
            }
            people = people.max(s.person_id + 1);
        }
        let present: HashSet<usize> = samples.iter().map(|s| s.person_id).collect();
        if let Some(missing) = (0..people).find(|p| !present.contains(p)) {
            return Err(Error::InvalidData(format!(
                "person {missing} has no samples (ids must cover 0..{people})"
            )));
        }
        samples.sort_by_key(|s| (s.person_id, s.trial_id));
        Ok(Self {
            people_count: people,
            dims,
            samples,
            split,
        })
    }

    pub fn people_count(&self) -> usize {
        self.people_count
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn split(&self) -> SplitTag {
        self.split
    }

    pub fn samples(&self) -> &[FeatureVector<T>] {
        &self.samples
    }

    /// Samples grouped per person, each group ordered by trial id.
    pub fn by_person(&self) -> Vec<Vec<&FeatureVector<T>>> {
        let mut groups = vec![Vec::new(); self.people_count];
        for s in &self.samples {
            groups[s.person_id].push(s);
        }
        groups
    }

    /// Number of trials per person if it is the same for everyone.
    pub fn uniform_trials(&self) -> Option<usize> {
        let groups = self.by_person();
        let k = groups.first()?.len();
        groups.iter().all(|g| g.len() == k).then_some(k)
    }

    /// Restates the person count, for splits where an upper person id might
    /// be absent from a subset.
    fn with_people(mut self, people: usize) -> Self {
        self.people_count = people;
        self
    }
}

pub fn load_dataset<T: Real>(
    path: impl AsRef<Path>,
    expected_dims: Option<usize>,
) -> Result<LabeledDataset<T>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(file, path, expected_dims)
}

pub fn read_dataset<T: Real, R: Read>(
    reader: R,
    source: &Path,
    expected_dims: Option<usize>,
) -> Result<LabeledDataset<T>> {
    let parse_err = |line: u64, message: String| Error::Parse {
        path: source.to_path_buf(),
        line,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.is_empty() {
        return Err(Error::InvalidData("no samples".into()));
    }
    if header.len() < 3 || &header[0] != "person_id" || &header[1] != "trial_id" {
        return Err(parse_err(
            1,
            "header must be person_id,trial_id,f1,...,fP".into(),
        ));
    }
    let dims = header.len() - 2;
    for (i, name) in header.iter().skip(2).enumerate() {
        if name != format!("f{}", i + 1) {
            return Err(parse_err(
                1,
                format!("expected column f{}, found {name:?}", i + 1),
            ));
        }
    }
    if let Some(p) = expected_dims {
        if p != dims {
            return Err(parse_err(
                1,
                format!("expected {p} feature columns, header has {dims}"),
            ));
        }
    }

    let mut samples = Vec::new();
    let mut seen = HashSet::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != dims + 2 {
            return Err(parse_err(
                line,
                format!("expected {} fields, found {}", dims + 2, rec.len()),
            ));
        }
        let person_id: usize = rec[0]
            .parse()
            .map_err(|_| parse_err(line, format!("invalid person_id {:?}", &rec[0])))?;
        let trial_id: usize = rec[1]
            .parse()
            .map_err(|_| parse_err(line, format!("invalid trial_id {:?}", &rec[1])))?;
        let features = rec
            .iter()
            .skip(2)
            .enumerate()
            .map(|(i, field)| match field.parse::<T>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(parse_err(
                    line,
                    format!("feature f{} is not a finite number: {field:?}", i + 1),
                )),
            })
            .collect::<Result<Vec<T>>>()?;
        if !seen.insert((person_id, trial_id)) {
            return Err(parse_err(
                line,
                format!("duplicate sample for person {person_id} trial {trial_id}"),
            ));
        }
        samples.push(FeatureVector {
            person_id,
            trial_id,
            features,
        });
    }
    LabeledDataset::new(samples, SplitTag::Full)
}

pub fn save_dataset<T: Real>(ds: &LabeledDataset<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_dataset(ds, std::io::BufWriter::new(file))
}

pub fn write_dataset<T: Real, W: Write>(ds: &LabeledDataset<T>, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["person_id".to_string(), "trial_id".to_string()];
    header.extend((1..=ds.dims()).map(|i| format!("f{i}")));
    wtr.write_record(&header)?;
    for s in ds.samples() {
        let mut row = vec![s.person_id.to_string(), s.trial_id.to_string()];
        row.extend(s.features.iter().map(|v| v.to_string()));
        wtr.write_record(&row)?;
    }
    wtr.flush().map_err(|e| Error::io("<dataset writer>", e))?;
    Ok(())
}

/// Deterministic split: per person the `train_per_person` lowest trial ids
/// train, the remainder tests.
pub fn split_train_test<T: Real>(
    ds: &LabeledDataset<T>,
    train_per_person: usize,
) -> Result<(LabeledDataset<T>, LabeledDataset<T>)> {
    if train_per_person == 0 {
        return Err(Error::InvalidArgument(
            "train_per_person must be at least 1".into(),
        ));
    }
    let groups = ds.by_person();
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut without_test = Vec::new();
    for (person, group) in groups.iter().enumerate() {
        if group.len() < train_per_person {
            return Err(Error::InvalidData(format!(
                "person {person} has {} samples, fewer than the {train_per_person} required for training",
                group.len()
            )));
        }
        if group.len() == train_per_person {
            without_test.push(person);
        }
        for (i, s) in group.iter().enumerate() {
            if i < train_per_person {
                train.push((*s).clone());
            } else {
                test.push((*s).clone());
            }
        }
    }
    if test.is_empty() {
        return Err(Error::InvalidData("empty test split".into()));
    }
    if let Some(p) = without_test.first() {
        return Err(Error::InvalidData(format!(
            "person {p} has no samples left for the test split"
        )));
    }
    let n = ds.people_count();
    Ok((
        LabeledDataset::new(train, SplitTag::Train)?.with_people(n),
        LabeledDataset::new(test, SplitTag::Test)?.with_people(n),
    ))
}

/// Per-feature z-score map fitted on training data.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalizer<T> {
    mean: Vec<T>,
    std: Vec<T>,
}

impl<T: Real> Normalizer<T> {
    /// Population (divide-by-n) mean and standard deviation per feature.
    /// Constant columns get the [`STD_FLOOR`] and a warning.
    pub fn fit(train: &LabeledDataset<T>) -> Self {
        let n = T::from_usize_lossy(train.len());
        let dims = train.dims();
        let mut mean = vec![T::zero(); dims];
        for s in train.samples() {
            for (m, &v) in mean.iter_mut().zip(&s.features) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![T::zero(); dims];
        for s in train.samples() {
            for ((acc, &v), &m) in var.iter_mut().zip(&s.features).zip(&mean) {
                *acc += (v - m) * (v - m);
            }
        }
        let floor = T::lit(STD_FLOOR);
        let std = var
            .into_iter()
            .enumerate()
            .map(|(i, v)| {
                let sd = (v / n).sqrt();
                if sd < floor {
                    log::warn!(
                        "feature f{} is (nearly) constant; clamping stddev to {STD_FLOOR}",
                        i + 1
                    );
                    floor
                } else {
                    sd
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn from_parts(mean: Vec<T>, std: Vec<T>) -> Result<Self> {
        if mean.len() != std.len() {
            return Err(Error::Dimension {
                expected: mean.len(),
                got: std.len(),
            });
        }
        if std.iter().any(|s| !(*s > T::zero()) || !s.is_finite())
            || mean.iter().any(|m| !m.is_finite())
        {
            return Err(Error::InvalidArgument(
                "normalizer needs finite means and positive stddevs".into(),
            ));
        }
        Ok(Self { mean, std })
    }

    /// Identity map of the given width.
    pub fn identity(dims: usize) -> Self {
        Self {
            mean: vec![T::zero(); dims],
            std: vec![T::one(); dims],
        }
    }

    pub fn dims(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[T] {
        &self.mean
    }

    pub fn std(&self) -> &[T] {
        &self.std
    }

    pub fn transform(&self, features: &[T]) -> Result<Vec<T>> {
        if features.len() != self.dims() {
            return Err(Error::Dimension {
                expected: self.dims(),
                got: features.len(),
            });
        }
        Ok(features
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(&v, (&m, &s))| (v - m) / s)
            .collect())
    }

    pub fn inverse_transform(&self, features: &[T]) -> Result<Vec<T>> {
        if features.len() != self.dims() {
            return Err(Error::Dimension {
                expected: self.dims(),
                got: features.len(),
            });
        }
        Ok(features
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(&v, (&m, &s))| v * s + m)
            .collect())
    }

    pub fn apply(&self, v: &FeatureVector<T>) -> Result<FeatureVector<T>> {
        Ok(FeatureVector {
            person_id: v.person_id,
            trial_id: v.trial_id,
            features: self.transform(&v.features)?,
        })
    }

    pub fn apply_dataset(&self, ds: &LabeledDataset<T>) -> Result<LabeledDataset<T>> {
        let samples = ds
            .samples()
            .iter()
            .map(|s| self.apply(s))
            .collect::<Result<Vec<_>>>()?;
        Ok(LabeledDataset::new(samples, ds.split())?.with_people(ds.people_count()))
    }
}

/// ±1 target vector: +1 at the owner's output, −1 everywhere else.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetEncoding<T> {
    targets: Vec<T>,
}

impl<T: Real> TargetEncoding<T> {
    pub fn as_slice(&self) -> &[T] {
        &self.targets
    }

    pub fn into_vec(self) -> Vec<T> {
        self.targets
    }

    /// Index of the +1 entry.
    pub fn owner(&self) -> usize {
        argmax(&self.targets).expect("target encoding is never empty")
    }
}

pub fn encode_target<T: Real>(person_id: usize, n_people: usize) -> Result<TargetEncoding<T>> {
    if person_id >= n_people {
        return Err(Error::InvalidArgument(format!(
            "person id {person_id} out of range for {n_people} people"
        )));
    }
    let mut targets = vec![-T::one(); n_people];
    targets[person_id] = T::one();
    Ok(TargetEncoding { targets })
}

/// First index of the largest element.
pub fn argmax<T: Real>(v: &[T]) -> Option<usize> {
    let mut best: Option<(usize, T)> = None;
    for (i, &x) in v.iter().enumerate() {
        match best {
            Some((_, b)) if x <= b => {}
            _ => best = Some((i, x)),
        }
    }
    best.map(|(i, _)| i)
}

/// Parameters of the isotropic Gaussian-mixture generator.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub people: usize,
    pub trials: usize,
    pub dims: usize,
    pub seed: u64,
    /// Standard deviation of the class means; samples scatter around their
    /// class mean with unit standard deviation.
    pub spread: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            people: 22,
            trials: 10,
            dims: DEFAULT_DIMS,
            seed: 0,
            spread: 1.0,
        }
    }
}

/// Draws one mean per person from `N(0, spread²·I)` and every trial from
/// `N(mean, I)`. Pure function of the spec.
pub fn generate_synthetic<T: Real>(spec: &SyntheticSpec) -> Result<LabeledDataset<T>> {
    if spec.people < 2 || spec.trials < 2 || spec.dims < 1 {
        return Err(Error::InvalidArgument(format!(
            "synthetic data needs people >= 2, trials >= 2, dims >= 1 (got {}, {}, {})",
            spec.people, spec.trials, spec.dims
        )));
    }
    if !(spec.spread > 0.0) || !spec.spread.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "spread must be positive and finite, got {}",
            spec.spread
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut samples = Vec::with_capacity(spec.people * spec.trials);
    for person_id in 0..spec.people {
        let mean: Vec<f64> = (0..spec.dims)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                spec.spread * z
            })
            .collect();
        for trial_id in 0..spec.trials {
            let features = mean
                .iter()
                .map(|&m| {
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    T::lit(m + noise)
                })
                .collect();
            samples.push(FeatureVector {
                person_id,
                trial_id,
                features,
            });
        }
    }
    LabeledDataset::new(samples, SplitTag::Full)
}
