//! Identification and verification scoring.
//!
//! A scorer (single network or committee) fills an `N × N × K` similarity
//! tensor: `s[i][j][k]` is output `j` for trial `k` of person `i`. The
//! diagonal `i == j` holds genuine scores, everything else impostor scores.
//! Higher means more similar throughout; a claim is accepted when its score
//! is `>=` the threshold.

use std::io::Write;

use statrs::distribution::{ContinuousCDF, Normal};

use crate::committee::Committee;
use crate::data::{LabeledDataset, Normalizer};
use crate::error::{Error, Result};
use crate::mlp::MlpModel;
use crate::scalar::Real;

/// Anything that maps a normalized feature vector to one score per person.
pub trait Scorer<T: Real> {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn score(&self, x: &[T]) -> Result<Vec<T>>;
}

impl<T: Real> Scorer<T> for MlpModel<T> {
    fn input_dim(&self) -> usize {
        self.topology().input_dim
    }

    fn output_dim(&self) -> usize {
        self.topology().output_dim
    }

    fn score(&self, x: &[T]) -> Result<Vec<T>> {
        self.forward(x)
    }
}

impl<T: Real> Scorer<T> for Committee<T> {
    fn input_dim(&self) -> usize {
        self.topology().input_dim
    }

    fn output_dim(&self) -> usize {
        self.topology().output_dim
    }

    fn score(&self, x: &[T]) -> Result<Vec<T>> {
        self.combine(x)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityTensor<T> {
    n_people: usize,
    n_trials: usize,
    scores: Vec<T>,
}

impl<T: Real> SimilarityTensor<T> {
    /// `scores` is laid out with `k` fastest, then `j`, then `i`.
    pub fn new(n_people: usize, n_trials: usize, scores: Vec<T>) -> Result<Self> {
        if n_people == 0 || n_trials == 0 {
            return Err(Error::InvalidArgument(
                "tensor dimensions must be >= 1".into(),
            ));
        }
        if scores.len() != n_people * n_people * n_trials {
            return Err(Error::Dimension {
                expected: n_people * n_people * n_trials,
                got: scores.len(),
            });
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("similarity scores"));
        }
        Ok(Self {
            n_people,
            n_trials,
            scores,
        })
    }

    pub fn from_fn(
        n_people: usize,
        n_trials: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Result<Self> {
        let mut scores = Vec::with_capacity(n_people * n_people * n_trials);
        for i in 0..n_people {
            for j in 0..n_people {
                for k in 0..n_trials {
                    scores.push(f(i, j, k));
                }
            }
        }
        Self::new(n_people, n_trials, scores)
    }

    pub fn n_people(&self) -> usize {
        self.n_people
    }

    pub fn n_trials(&self) -> usize {
        self.n_trials
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> T {
        self.scores[(i * self.n_people + j) * self.n_trials + k]
    }

    /// Applies `f` to every score.
    pub fn map(&self, f: impl Fn(T) -> T) -> Result<Self> {
        Self::new(
            self.n_people,
            self.n_trials,
            self.scores.iter().map(|&s| f(s)).collect(),
        )
    }
}

/// Scores every test trial; `test` holds raw features and is mapped through
/// `normalizer` first.
pub fn build_tensor<T: Real, S: Scorer<T> + ?Sized>(
    scorer: &S,
    test: &LabeledDataset<T>,
    normalizer: &Normalizer<T>,
) -> Result<SimilarityTensor<T>> {
    let n = test.people_count();
    if scorer.output_dim() != n {
        return Err(Error::Dimension {
            expected: n,
            got: scorer.output_dim(),
        });
    }
    let k = test.uniform_trials().ok_or_else(|| {
        Error::InvalidData("test split has a different number of trials per person".into())
    })?;
    let mut scores = vec![T::zero(); n * n * k];
    for (i, group) in test.by_person().iter().enumerate() {
        for (kk, sample) in group.iter().enumerate() {
            let out = scorer.score(&normalizer.transform(&sample.features)?)?;
            for (j, &o) in out.iter().enumerate() {
                scores[(i * n + j) * k + kk] = o;
            }
        }
    }
    SimilarityTensor::new(n, k, scores)
}

/// Fraction of `(i, k)` where the genuine score strictly beats every other
/// output. Ties count as errors.
pub fn identification_rate<T: Real>(t: &SimilarityTensor<T>) -> T {
    let (n, k) = (t.n_people, t.n_trials);
    let mut success = 0usize;
    for i in 0..n {
        for kk in 0..k {
            let own = t.get(i, i, kk);
            if (0..n).filter(|&j| j != i).all(|j| own > t.get(i, j, kk)) {
                success += 1;
            }
        }
    }
    T::from_usize_lossy(success) / T::from_usize_lossy(n * k)
}

/// Genuine (diagonal) and impostor (off-diagonal) scores, ordered by
/// `i`, then `j`, then `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreSplit<T> {
    pub intra: Vec<T>,
    pub inter: Vec<T>,
}

pub fn split_scores<T: Real>(t: &SimilarityTensor<T>) -> Result<ScoreSplit<T>> {
    let (n, k) = (t.n_people, t.n_trials);
    if n < 2 {
        return Err(Error::InvalidData("verification undefined for N=1".into()));
    }
    let mut intra = Vec::with_capacity(n * k);
    let mut inter = Vec::with_capacity(n * (n - 1) * k);
    for i in 0..n {
        for j in 0..n {
            let dst = if i == j { &mut intra } else { &mut inter };
            dst.extend((0..k).map(|kk| t.get(i, j, kk)));
        }
    }
    Ok(ScoreSplit { intra, inter })
}

impl<T: Real> ScoreSplit<T> {
    fn check(&self) -> Result<()> {
        if self.intra.is_empty() || self.inter.is_empty() {
            return Err(Error::InvalidData(
                "score split needs genuine and impostor scores".into(),
            ));
        }
        Ok(())
    }
}

/// Both score lists sorted ascending, for repeated threshold queries.
struct SortedSplit<T> {
    intra: Vec<T>,
    inter: Vec<T>,
}

impl<T: Real> SortedSplit<T> {
    fn new(split: &ScoreSplit<T>) -> Result<Self> {
        split.check()?;
        let sort = |v: &[T]| {
            let mut v = v.to_vec();
            v.sort_by(|a, b| a.partial_cmp(b).expect("scores are finite"));
            v
        };
        Ok(Self {
            intra: sort(&split.intra),
            inter: sort(&split.inter),
        })
    }

    fn rates(&self, threshold: T) -> (T, T) {
        let below = |v: &[T]| v.partition_point(|&s| s < threshold);
        let fa = self.inter.len() - below(&self.inter);
        let miss = below(&self.intra);
        (
            T::from_usize_lossy(fa) / T::from_usize_lossy(self.inter.len()),
            T::from_usize_lossy(miss) / T::from_usize_lossy(self.intra.len()),
        )
    }

    /// `-∞`, every distinct observed score ascending, `+∞`.
    fn candidates(&self) -> Vec<T> {
        let mut all: Vec<T> = self.intra.iter().chain(&self.inter).copied().collect();
        all.sort_by(|a, b| a.partial_cmp(b).expect("scores are finite"));
        all.dedup();
        let mut out = Vec::with_capacity(all.len() + 2);
        out.push(T::neg_infinity());
        out.extend(all);
        out.push(T::infinity());
        out
    }
}

/// `(P_fa, P_miss)` at `threshold`: impostors with score `>=` threshold are
/// false alarms, genuine scores below it are misses.
pub fn far_frr_at<T: Real>(split: &ScoreSplit<T>, threshold: T) -> Result<(T, T)> {
    split.check()?;
    let count = |v: &[T], f: &dyn Fn(T) -> bool| v.iter().filter(|&&s| f(s)).count();
    let fa = count(&split.inter, &|s| s >= threshold);
    let miss = count(&split.intra, &|s| s < threshold);
    Ok((
        T::from_usize_lossy(fa) / T::from_usize_lossy(split.inter.len()),
        T::from_usize_lossy(miss) / T::from_usize_lossy(split.intra.len()),
    ))
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetPoint<T> {
    pub threshold: T,
    pub p_fa: T,
    pub p_miss: T,
    pub probit_fa: f64,
    pub probit_miss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetCurve<T> {
    pub points: Vec<DetPoint<T>>,
}

/// Inverse standard-normal CDF of `p` clamped to `[1/(2n), 1 − 1/(2n)]`.
pub fn probit(p: f64, n: usize) -> f64 {
    let lo = 1.0 / (2.0 * n as f64);
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    normal.inverse_cdf(p.clamp(lo, 1.0 - lo))
}

/// Operating points at every distinct score plus the `±∞` sentinels, in
/// increasing threshold order.
pub fn det_curve<T: Real>(split: &ScoreSplit<T>) -> Result<DetCurve<T>> {
    let sorted = SortedSplit::new(split)?;
    let (n_inter, n_intra) = (sorted.inter.len(), sorted.intra.len());
    let points = sorted
        .candidates()
        .into_iter()
        .map(|threshold| {
            let (p_fa, p_miss) = sorted.rates(threshold);
            DetPoint {
                threshold,
                p_fa,
                p_miss,
                probit_fa: probit(p_fa.as_f64(), n_inter),
                probit_miss: probit(p_miss.as_f64(), n_intra),
            }
        })
        .collect();
    Ok(DetCurve { points })
}

impl<T: Real> DetCurve<T> {
    /// `threshold,p_fa,p_miss,probit_fa,probit_miss`
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["threshold", "p_fa", "p_miss", "probit_fa", "probit_miss"])?;
        for p in &self.points {
            wtr.write_record([
                p.threshold.to_string(),
                p.p_fa.to_string(),
                p.p_miss.to_string(),
                p.probit_fa.to_string(),
                p.probit_miss.to_string(),
            ])?;
        }
        wtr.flush().map_err(|e| Error::io("<det writer>", e))?;
        Ok(())
    }

    /// Polyline of `(probit P_fa, probit P_miss)` on a square plot spanning
    /// ±4 normal deviates, with gridlines at 0.1%, 1%, 10% and 50%.
    pub fn write_svg<W: Write>(&self, mut writer: W) -> Result<()> {
        const SIZE: f64 = 400.0;
        const RANGE: f64 = 4.0;
        let map = |v: f64| (v.clamp(-RANGE, RANGE) + RANGE) / (2.0 * RANGE) * SIZE;
        let mut out = String::new();
        out.push_str(&format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SIZE}\" height=\"{SIZE}\" viewBox=\"0 0 {SIZE} {SIZE}\">\n"
        ));
        out.push_str(&format!(
            "<rect width=\"{SIZE}\" height=\"{SIZE}\" fill=\"white\" stroke=\"black\"/>\n"
        ));
        let normal = Normal::new(0.0, 1.0).expect("standard normal");
        for p in [0.001, 0.01, 0.1, 0.5] {
            let g = map(normal.inverse_cdf(p));
            out.push_str(&format!(
                "<line x1=\"{g:.2}\" y1=\"0\" x2=\"{g:.2}\" y2=\"{SIZE}\" stroke=\"#ccc\"/>\n\
                 <line x1=\"0\" y1=\"{y:.2}\" x2=\"{SIZE}\" y2=\"{y:.2}\" stroke=\"#ccc\"/>\n",
                y = SIZE - g
            ));
        }
        let pts: Vec<String> = self
            .points
            .iter()
            .map(|p| format!("{:.2},{:.2}", map(p.probit_fa), SIZE - map(p.probit_miss)))
            .collect();
        out.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"blue\" points=\"{}\"/>\n</svg>\n",
            pts.join(" ")
        ));
        writer
            .write_all(out.as_bytes())
            .map_err(|e| Error::io("<svg writer>", e))
    }
}

/// Costs and target prior of the detection cost function.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DcfParams<T> {
    pub c_miss: T,
    pub c_fa: T,
    pub p_true: T,
}

impl<T: Real> Default for DcfParams<T> {
    /// Unit costs, equal priors.
    fn default() -> Self {
        Self {
            c_miss: T::one(),
            c_fa: T::one(),
            p_true: T::lit(0.5),
        }
    }
}

impl<T: Real> DcfParams<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.c_miss > T::zero() && self.c_fa > T::zero()) {
            return Err(Error::InvalidArgument("DCF costs must be positive".into()));
        }
        if !(self.p_true > T::zero() && self.p_true < T::one()) {
            return Err(Error::InvalidArgument("p_true must lie in (0, 1)".into()));
        }
        Ok(())
    }

    /// `C_miss·P_miss·P_true + C_fa·P_fa·(1 − P_true)`
    pub fn cost(&self, p_fa: T, p_miss: T) -> T {
        self.c_miss * p_miss * self.p_true + self.c_fa * p_fa * (T::one() - self.p_true)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DcfResult<T> {
    pub min_dcf: T,
    pub threshold: T,
    pub params: DcfParams<T>,
}

/// Exact minimum of the DCF: the cost is piecewise constant between observed
/// scores, so evaluating at each distinct score and the sentinels suffices.
/// Ties keep the lowest threshold.
pub fn min_dcf<T: Real>(split: &ScoreSplit<T>, params: DcfParams<T>) -> Result<DcfResult<T>> {
    params.validate()?;
    let sorted = SortedSplit::new(split)?;
    let mut best = DcfResult {
        min_dcf: T::infinity(),
        threshold: T::neg_infinity(),
        params,
    };
    for threshold in sorted.candidates() {
        let (p_fa, p_miss) = sorted.rates(threshold);
        let c = params.cost(p_fa, p_miss);
        if c < best.min_dcf {
            best.min_dcf = c;
            best.threshold = threshold;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn oracle(n: usize, k: usize) -> SimilarityTensor<f64> {
        SimilarityTensor::from_fn(n, k, |i, j, _| if i == j { 1.0 } else { -1.0 }).unwrap()
    }

    #[test]
    fn oracle_and_constant_rates() {
        assert_eq!(identification_rate(&oracle(4, 3)), 1.0);
        let flat = SimilarityTensor::from_fn(4, 3, |_, _, _| 0.0).unwrap();
        assert_eq!(identification_rate(&flat), 0.0);
    }

    #[test]
    fn split_cardinalities_and_n1() {
        let s = split_scores(&oracle(22, 5)).unwrap();
        assert_eq!((s.intra.len(), s.inter.len()), (110, 2310));
        assert!(s.intra.iter().all(|&v| v == 1.0));
        assert!(s.inter.iter().all(|&v| v == -1.0));
        let err = split_scores(&oracle(1, 5)).unwrap_err();
        assert!(err.to_string().contains("N=1"));
    }

    #[test]
    fn far_frr_extremes() {
        let s = split_scores(&oracle(3, 2)).unwrap();
        assert_eq!(far_frr_at(&s, -10.0).unwrap(), (1.0, 0.0));
        assert_eq!(far_frr_at(&s, 10.0).unwrap(), (0.0, 1.0));
        assert_eq!(far_frr_at(&s, 0.0).unwrap(), (0.0, 0.0));
        let empty = ScoreSplit::<f64> {
            intra: vec![],
            inter: vec![1.0],
        };
        assert!(far_frr_at(&empty, 0.0).is_err());
        assert!(det_curve(&empty).is_err());
        assert!(min_dcf(&empty, DcfParams::default()).is_err());
    }

    #[test]
    fn det_curve_construction() {
        let s = ScoreSplit {
            intra: vec![0.9, 0.5, 0.9],
            inter: vec![0.1, 0.5, -0.3, 0.2],
        };
        let det = det_curve(&s).unwrap();
        // distinct scores: -0.3, 0.1, 0.2, 0.5, 0.9
        assert_eq!(det.points.len(), 5 + 2);
        assert_eq!((det.points[0].p_fa, det.points[0].p_miss), (1.0, 0.0));
        let last = det.points.last().unwrap();
        assert_eq!((last.p_fa, last.p_miss), (0.0, 1.0));
        let at_half = &det.points[4];
        assert_eq!(at_half.threshold, 0.5);
        assert_eq!((at_half.p_fa, at_half.p_miss), (0.25, 0.0));

        let oracle_det = det_curve(&split_scores(&oracle(3, 2)).unwrap()).unwrap();
        assert!(oracle_det
            .points
            .iter()
            .any(|p| p.p_fa == 0.0 && p.p_miss == 0.0));
    }

    #[test]
    fn probit_clamps() {
        assert!(probit(0.0, 10).is_finite());
        assert!(probit(1.0, 10).is_finite());
        assert!((probit(0.5, 10)).abs() < 1e-12);
        assert!((probit(0.0, 10) + probit(1.0, 10)).abs() < 1e-9);
    }

    #[test]
    fn dcf_parameters_are_validated() {
        let s = split_scores(&oracle(3, 2)).unwrap();
        let mut p = DcfParams::<f64>::default();
        assert_eq!(min_dcf(&s, p).unwrap().min_dcf, 0.0);
        p.p_true = 1.0;
        assert!(min_dcf(&s, p).is_err());
        p.p_true = 0.5;
        p.c_fa = 0.0;
        assert!(min_dcf(&s, p).is_err());
    }

    #[test]
    fn dcf_tie_keeps_lowest_threshold() {
        // every threshold costs 0.5: accept-all and reject-all tie
        let s = ScoreSplit {
            intra: vec![0.0],
            inter: vec![0.0],
        };
        let r = min_dcf(&s, DcfParams::default()).unwrap();
        assert_eq!(r.min_dcf, 0.5);
        assert_eq!(r.threshold, f64::NEG_INFINITY);
    }
}
