//! Fidelity, dependence, downstream and fairness metrics, and paired tests.

mod logistic;
mod stats;

pub use logistic::{loss_and_gradient, train_logistic, Design, LinearClassifier, LogisticParams};
pub use stats::{auc, equalized_odds, wilcoxon_one_sided, Direction, PairedComparison, EXACT_MAX_N};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{CIConstraint, Dataset, RoleAssignment, Schema};
use crate::dp::RngStream;
use crate::error::{Error, Result};
use crate::marginals::{normalize, two_way_counts, ProbTable};
use crate::model::TreeModel;
use crate::structure::{all_pairs, EdgeScores, Tree};

/// Joint domains above this many cells are refused by [`cmi`].
pub const CMI_MAX_CELLS: u128 = 10_000_000;
/// Full-joint KL is reported only up to this many cells.
pub const JOINT_KL_MAX_CELLS: u128 = 1_000_000;
/// Laplace pseudo-count used by the fidelity KL.
pub const KL_PSEUDO_COUNT: f64 = 1.0;

fn same_shape(p: &ProbTable, q: &ProbTable) -> Result<()> {
    if p.shape != q.shape || p.cells.len() != q.cells.len() {
        return Err(Error::argument(format!(
            "table shapes differ: {:?} vs {:?}",
            p.shape, q.shape
        )));
    }
    Ok(())
}

/// `Σ p ln(p/q)` in nats. Infinite when `q` misses mass that `p` has.
pub fn kl_divergence(p: &ProbTable, q: &ProbTable) -> Result<f64> {
    same_shape(p, q)?;
    Ok(p.cells
        .iter()
        .zip(&q.cells)
        .filter(|(&a, _)| a > 0.0)
        .map(|(&a, &b)| a * (a / b).ln())
        .sum::<f64>()
        .max(0.0))
}

/// `½ Σ |p − q|`.
pub fn tv_distance(p: &ProbTable, q: &ProbTable) -> Result<f64> {
    same_shape(p, q)?;
    Ok(0.5 * p.cells.iter().zip(&q.cells).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// Adds `alpha` to every count and normalizes.
pub fn laplace_smooth(counts: &[f64], alpha: f64) -> ProbTable {
    let total: f64 = counts.iter().sum::<f64>() + alpha * counts.len() as f64;
    ProbTable::from_vec(counts.iter().map(|c| (c + alpha) / total).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairFidelity {
    pub i: usize,
    pub j: usize,
    pub kl: f64,
    pub tv: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fidelity {
    pub kl_pairwise: f64,
    pub tv_pairwise: f64,
    pub kl_joint: Option<f64>,
    pub pairs: Vec<PairFidelity>,
}

fn check_same_schema(a: &Schema, b: &Schema) -> Result<()> {
    if a != b {
        return Err(Error::argument("real and synthetic data have different schemas"));
    }
    Ok(())
}

/// Mean smoothed KL and mean TV over all two-way marginals, real against synthetic.
pub fn pairwise_fidelity(real: &Dataset, synth: &Dataset) -> Result<Fidelity> {
    check_same_schema(real.schema(), synth.schema())?;
    let mut pairs = Vec::new();
    for (i, j) in all_pairs(real.d()) {
        let (r, s) = (two_way_counts(real, i, j)?, two_way_counts(synth, i, j)?);
        let kl = kl_divergence(
            &laplace_smooth(&r.cells, KL_PSEUDO_COUNT),
            &laplace_smooth(&s.cells, KL_PSEUDO_COUNT),
        )?;
        let tv = tv_distance(&normalize(&r), &normalize(&s))?;
        pairs.push(PairFidelity { i, j, kl, tv });
    }
    let m = pairs.len() as f64;
    let kl_joint = if real.schema().joint_size(&(0..real.d()).collect::<Vec<_>>()) <= JOINT_KL_MAX_CELLS {
        let all: Vec<usize> = (0..real.d()).collect();
        Some(kl_divergence(
            &laplace_smooth(&joint_counts(real, &all), KL_PSEUDO_COUNT),
            &laplace_smooth(&joint_counts(synth, &all), KL_PSEUDO_COUNT),
        )?)
    } else {
        None
    };
    Ok(Fidelity {
        kl_pairwise: pairs.iter().map(|p| p.kl).sum::<f64>() / m,
        tv_pairwise: pairs.iter().map(|p| p.tv).sum::<f64>() / m,
        kl_joint,
        pairs,
    })
}

/// Dense counts over `attrs`, row-major. The caller bounds the size.
fn joint_counts(d: &Dataset, attrs: &[usize]) -> Vec<f64> {
    let sizes: Vec<usize> = attrs.iter().map(|&a| d.schema().domain_size(a)).collect();
    let mut cells = vec![0.0; sizes.iter().product()];
    for r in 0..d.n() {
        let idx = attrs
            .iter()
            .zip(&sizes)
            .fold(0usize, |acc, (&a, &k)| acc * k + d.column(a)[r] as usize);
        cells[idx] += 1.0;
    }
    cells
}

/// A distribution whose marginals over attribute subsets can be tabulated.
pub trait JointSource {
    fn schema(&self) -> &Schema;

    /// Probabilities over `attrs`, row-major. May be all zero for an empty source.
    fn marginal(&self, attrs: &[usize]) -> Result<Vec<f64>>;
}

impl JointSource for Dataset {
    fn schema(&self) -> &Schema {
        Dataset::schema(self)
    }

    fn marginal(&self, attrs: &[usize]) -> Result<Vec<f64>> {
        let counts = joint_counts(self, attrs);
        let n = self.n().max(1) as f64;
        Ok(counts.into_iter().map(|c| c / n).collect())
    }
}

impl JointSource for TreeModel {
    fn schema(&self) -> &Schema {
        &self.schema
    }

    fn marginal(&self, attrs: &[usize]) -> Result<Vec<f64>> {
        let sizes: Vec<usize> = attrs.iter().map(|&a| self.schema.domain_size(a)).collect();
        let cells: usize = sizes.iter().product();
        let mut evidence = vec![None; self.d()];
        Ok((0..cells)
            .map(|mut idx| {
                for (&a, &k) in attrs.iter().zip(&sizes).rev() {
                    evidence[a] = Some((idx % k) as u32);
                    idx /= k;
                }
                self.evidence_prob(&evidence)
            })
            .collect())
    }
}

/// Plug-in `I(X; Y | Z)` in nats; `Z = ∅` gives mutual information.
pub fn cmi(src: &impl JointSource, x: &[usize], y: &[usize], z: &[usize]) -> Result<f64> {
    let schema = src.schema();
    let all: Vec<usize> = x.iter().chain(y).chain(z).copied().collect();
    for &a in &all {
        schema.check_index(a)?;
    }
    let mut sorted = all.clone();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != all.len() {
        return Err(Error::argument("X, Y and Z must be disjoint"));
    }
    if x.is_empty() || y.is_empty() {
        return Err(Error::argument("X and Y must be nonempty"));
    }
    let cells = schema.joint_size(&all);
    if cells > CMI_MAX_CELLS {
        return Err(Error::TooLarge {
            cells,
            limit: CMI_MAX_CELLS,
        });
    }
    let size = |s: &[usize]| s.iter().map(|&a| schema.domain_size(a)).product::<usize>();
    let (kx, ky, kz) = (size(x), size(y), size(z));
    let p = src.marginal(&all)?;
    let mut pz = vec![0.0; kz];
    let mut pxz = vec![0.0; kx * kz];
    let mut pyz = vec![0.0; ky * kz];
    for xi in 0..kx {
        for yi in 0..ky {
            for zi in 0..kz {
                let v = p[(xi * ky + yi) * kz + zi];
                pz[zi] += v;
                pxz[xi * kz + zi] += v;
                pyz[yi * kz + zi] += v;
            }
        }
    }
    let mut total = 0.0;
    for xi in 0..kx {
        for yi in 0..ky {
            for zi in 0..kz {
                let v = p[(xi * ky + yi) * kz + zi];
                if v > 0.0 && pz[zi] > 0.0 {
                    total += v * (v * pz[zi] / (pxz[xi * kz + zi] * pyz[yi * kz + zi])).ln();
                }
            }
        }
    }
    Ok(total)
}

/// [`cmi`] over the sets of a constraint.
pub fn constraint_cmi(src: &impl JointSource, ci: &CIConstraint) -> Result<f64> {
    let v = |s: &std::collections::BTreeSet<usize>| s.iter().copied().collect::<Vec<_>>();
    cmi(src, &v(&ci.x), &v(&ci.y), &v(&ci.z))
}

/// Sum of `scores` over the edges of `tree`.
pub fn sum_q(tree: &Tree, scores: &EdgeScores) -> Result<f64> {
    if tree.d() != scores.d() {
        return Err(Error::argument(format!(
            "tree over {} attributes, scores over {}",
            tree.d(),
            scores.d()
        )));
    }
    tree.edges().iter().map(|&e| scores.try_get(e)).sum()
}

/// Which attributes a downstream classifier predicts, uses and is audited on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DownstreamTask {
    pub outcome: usize,
    pub features: Vec<usize>,
    /// Attributes whose joint value defines the fairness groups.
    pub groups: Vec<usize>,
}

impl DownstreamTask {
    /// Predict the first outcome attribute from all others; groups are the sensitive attributes.
    pub fn from_roles(schema: &Schema, roles: &RoleAssignment) -> Result<Self> {
        let outcome = *roles
            .o
            .iter()
            .next()
            .ok_or_else(|| Error::config("no outcome attribute for the downstream task"))?;
        if schema.domain_size(outcome) != 2 {
            return Err(Error::config(format!(
                "downstream outcome {:?} must be binary, has {} values",
                schema.name(outcome),
                schema.domain_size(outcome)
            )));
        }
        Ok(DownstreamTask {
            outcome,
            features: (0..schema.d()).filter(|&a| a != outcome).collect(),
            groups: roles.s.iter().copied().collect(),
        })
    }
}

/// Joint group code of each row over `attrs`.
pub fn group_codes(d: &Dataset, attrs: &[usize]) -> Vec<u32> {
    (0..d.n())
        .map(|r| {
            attrs.iter().fold(0u32, |acc, &a| {
                acc * d.schema().domain_size(a) as u32 + d.column(a)[r]
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldScore {
    pub auc: f64,
    pub eo: f64,
}

/// Scores a classifier on real held-out rows.
pub fn score_on_real(model: &LinearClassifier, test: &Dataset, groups: &[usize]) -> Result<FoldScore> {
    let p = model.predict_proba(test)?;
    let y = model.labels(test)?;
    let pred: Vec<bool> = p.iter().map(|&v| v >= 0.5).collect();
    Ok(FoldScore {
        auc: auc(&p, &y)?,
        eo: equalized_odds(&pred, &y, &group_codes(test, groups))?,
    })
}

/// Random partition of `0..n` into `k` folds of near-equal size, each sorted.
pub fn kfold_indices(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 || k > n {
        return Err(Error::argument(format!("cannot split {n} rows into {k} folds")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut RngStream::new(seed, "folds"));
    let mut folds = vec![Vec::new(); k];
    for (pos, r) in idx.into_iter().enumerate() {
        folds[pos % k].push(r);
    }
    folds.iter_mut().for_each(|f| f.sort_unstable());
    Ok(folds)
}

/// Rows not in `fold`.
pub fn complement(n: usize, fold: &[usize]) -> Vec<usize> {
    let mut keep = vec![true; n];
    fold.iter().for_each(|&r| keep[r] = false);
    (0..n).filter(|&r| keep[r]).collect()
}

/// All metrics of one synthetic dataset against real data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Count-space edge score total of the supplied tree on the real data.
    pub sum_q: Option<f64>,
    /// Probability-space edge score total of the supplied tree on the real data.
    pub sum_q_prob: Option<f64>,
    pub kl_pairwise: f64,
    pub tv_pairwise: f64,
    pub kl_joint: Option<f64>,
    /// `I(X; Y | Z)` of the synthetic data.
    pub cmi: f64,
    /// `I(X; Y | Z)` of the real data, for reference.
    pub cmi_real: f64,
    pub auc: f64,
    pub eo: f64,
    pub auc_folds: Vec<f64>,
    pub eo_folds: Vec<f64>,
    pub pairs: Vec<PairFidelity>,
}

/// Train-synthetic/test-real evaluation: one classifier is fit on `synth`
/// and scored on each of `folds` real folds.
pub fn evaluate(
    real: &Dataset,
    synth: &Dataset,
    ci: &CIConstraint,
    task: &DownstreamTask,
    tree: Option<&Tree>,
    folds: usize,
    seed: u64,
) -> Result<MetricsReport> {
    check_same_schema(real.schema(), synth.schema())?;
    let fid = pairwise_fidelity(real, synth)?;
    let (sum_q_count, sum_q_prob) = match tree {
        Some(t) => (
            Some(sum_q(t, &crate::structure::exact_count_scores(real)?)?),
            Some(sum_q(t, &crate::structure::probability_scores(real)?)?),
        ),
        None => (None, None),
    };
    let model = train_logistic(synth, task.outcome, &task.features, LogisticParams::default())?;
    let mut auc_folds = Vec::with_capacity(folds);
    let mut eo_folds = Vec::with_capacity(folds);
    for fold in kfold_indices(real.n(), folds, seed)? {
        let s = score_on_real(&model, &real.select_rows(&fold), &task.groups)?;
        auc_folds.push(s.auc);
        eo_folds.push(s.eo);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(MetricsReport {
        sum_q: sum_q_count,
        sum_q_prob,
        kl_pairwise: fid.kl_pairwise,
        tv_pairwise: fid.tv_pairwise,
        kl_joint: fid.kl_joint,
        cmi: constraint_cmi(synth, ci)?,
        cmi_real: constraint_cmi(real, ci)?,
        auc: mean(&auc_folds),
        eo: mean(&eo_folds),
        auc_folds,
        eo_folds,
        pairs: fid.pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pt(v: &[f64]) -> ProbTable {
        ProbTable::from_vec(v.to_vec())
    }

    fn ds(sizes: &[usize], rows: &[Vec<u32>]) -> Dataset {
        Dataset::from_rows(Schema::from_sizes(sizes).unwrap(), rows).unwrap()
    }

    #[test]
    fn kl_and_tv_examples() {
        let (p, q) = (pt(&[0.5, 0.5]), pt(&[0.25, 0.75]));
        let expected = 0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln();
        assert!((kl_divergence(&p, &q).unwrap() - expected).abs() < 1e-15);
        assert!((expected - 0.1438).abs() < 1e-4);
        assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
        assert_eq!(tv_distance(&p, &q).unwrap(), 0.25);
        assert_eq!(tv_distance(&pt(&[1.0, 0.0]), &pt(&[0.0, 1.0])).unwrap(), 1.0);
        assert!(kl_divergence(&p, &pt(&[1.0])).is_err());
    }

    #[test]
    fn fidelity_of_a_copy_is_zero() {
        let rows: Vec<Vec<u32>> = (0..300u32).map(|r| vec![r % 2, r % 3, (r / 5) % 2]).collect();
        let d = ds(&[2, 3, 2], &rows);
        let f = pairwise_fidelity(&d, &d).unwrap();
        assert_eq!((f.kl_pairwise, f.tv_pairwise, f.kl_joint), (0.0, 0.0, Some(0.0)));
        assert_eq!(f.pairs.len(), 3);
    }

    #[test]
    fn fidelity_single_pair_reduces_to_table_metrics() {
        let a = ds(&[2, 2], &[vec![0, 0], vec![1, 1], vec![0, 1]]);
        let b = ds(&[2, 2], &[vec![0, 0], vec![0, 0]]);
        let f = pairwise_fidelity(&a, &b).unwrap();
        let (ra, rb) = (two_way_counts(&a, 0, 1).unwrap(), two_way_counts(&b, 0, 1).unwrap());
        assert_eq!(f.tv_pairwise, tv_distance(&normalize(&ra), &normalize(&rb)).unwrap());
        assert_eq!(
            f.kl_pairwise,
            kl_divergence(&laplace_smooth(&ra.cells, 1.0), &laplace_smooth(&rb.cells, 1.0)).unwrap()
        );
        assert!(pairwise_fidelity(&a, &ds(&[2, 3], &[])).is_err());
    }

    #[test]
    fn mi_of_perfect_copy_is_ln2() {
        let d = ds(&[2, 2], &[vec![0, 0], vec![1, 1], vec![0, 0], vec![1, 1]]);
        assert!((cmi(&d, &[0], &[1], &[]).unwrap() - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn cmi_of_factorized_model_is_zero() {
        let model = TreeModel {
            schema: Schema::from_sizes(&[2, 3, 2]).unwrap(),
            tree: Tree::new(3, [(0, 1), (1, 2)]).unwrap(),
            root: 0,
            parent: vec![None, Some(0), Some(1)],
            order: vec![0, 1, 2],
            root_marginal: vec![0.4, 0.6],
            conditionals: vec![
                None,
                Some(vec![vec![0.2, 0.5, 0.3], vec![0.6, 0.1, 0.3]]),
                Some(vec![vec![0.9, 0.1], vec![0.3, 0.7], vec![0.5, 0.5]]),
            ],
            fits: vec![],
        };
        assert!(cmi(&model, &[0], &[2], &[1]).unwrap().abs() < 1e-10);
        assert!(cmi(&model, &[0], &[2], &[]).unwrap() > 1e-3);
        let total: f64 = model.marginal(&[0, 1, 2]).unwrap().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cmi_refusals() {
        let d = ds(&[2, 2, 2], &[vec![0, 0, 0]]);
        assert!(cmi(&d, &[0], &[0], &[]).is_err());
        assert!(cmi(&d, &[], &[1], &[]).is_err());
        let big = Dataset::empty(Schema::from_sizes(&[5000, 5000, 5]).unwrap());
        assert!(matches!(cmi(&big, &[0], &[1], &[2]), Err(Error::TooLarge { .. })));
        let empty = Dataset::empty(Schema::from_sizes(&[2, 2]).unwrap());
        assert_eq!(cmi(&empty, &[0], &[1], &[]).unwrap(), 0.0);
    }

    #[test]
    fn sum_q_examples() {
        let scores = EdgeScores::new(3, vec![5.0, 4.0, 1.0], 2.0).unwrap();
        assert_eq!(sum_q(&Tree::new(3, [(0, 1), (1, 2)]).unwrap(), &scores).unwrap(), 6.0);
        assert_eq!(sum_q(&Tree::new(3, []).unwrap(), &scores).unwrap(), 0.0);
        assert!(sum_q(&Tree::new(2, [(0, 1)]).unwrap(), &scores).is_err());
    }

    #[test]
    fn folds_partition_rows() {
        let folds = kfold_indices(23, 5, 1).unwrap();
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        assert_eq!(all, (0..23).collect::<Vec<_>>());
        assert!(folds.iter().all(|f| f.len() == 4 || f.len() == 5));
        assert_eq!(folds, kfold_indices(23, 5, 1).unwrap());
        assert_eq!(complement(5, &[1, 3]), vec![0, 2, 4]);
        assert!(kfold_indices(3, 5, 0).is_err());
    }

    #[test]
    fn evaluate_on_a_copy() {
        let rows: Vec<Vec<u32>> = (0..400u32)
            .map(|r| {
                let s = r % 2;
                let a = (r / 2) % 3;
                vec![s, ((a == 0) as u32 + s * ((r / 7) % 2)).min(1), a]
            })
            .collect();
        let d = ds(&[2, 2, 3], &rows);
        let roles = RoleAssignment::new(&[0], &[1], &[2], &[]);
        let task = DownstreamTask::from_roles(d.schema(), &roles).unwrap();
        let ci = roles.default_constraint();
        let tree = Tree::new(3, [(0, 2), (1, 2)]).unwrap();
        let r = evaluate(&d, &d, &ci, &task, Some(&tree), 5, 3).unwrap();
        assert_eq!(r.auc_folds.len(), 5);
        assert_eq!((r.kl_pairwise, r.tv_pairwise), (0.0, 0.0));
        assert_eq!(r.cmi, r.cmi_real);
        assert!(r.sum_q.unwrap() > 0.0);
        assert!((0.0..=1.0).contains(&r.auc) && (0.0..=1.0).contains(&r.eo));
    }

    fn table_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (1usize..8).prop_flat_map(|k| {
            (proptest::collection::vec(0.0f64..10.0, k), proptest::collection::vec(0.0f64..10.0, k))
        })
    }

    fn small_dataset() -> impl Strategy<Value = Dataset> {
        proptest::collection::vec(
            (0u32..2, 0u32..3, 0u32..2).prop_map(|(a, b, c)| vec![a, b, c]),
            0..40,
        )
        .prop_map(|rows| ds(&[2, 3, 2], &rows))
    }

    proptest! {
        #[test]
        fn kl_and_tv_bounds((a, b) in table_pair()) {
            let (p, q) = (laplace_smooth(&a, 1.0), laplace_smooth(&b, 1.0));
            prop_assert!(kl_divergence(&p, &q).unwrap() >= 0.0);
            let tv = tv_distance(&p, &q).unwrap();
            prop_assert!((0.0..=1.0).contains(&tv));
        }

        #[test]
        fn cmi_is_nonnegative(d in small_dataset()) {
            prop_assert!(cmi(&d, &[0], &[2], &[1]).unwrap() >= -1e-12);
            prop_assert!(cmi(&d, &[0, 1], &[2], &[]).unwrap() >= -1e-12);
        }
    }
}
