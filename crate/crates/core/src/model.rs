//! Private measurement of marginals and their reconciliation into a
//! tree-structured distribution.
//!
//! Reconciliation works entirely on the noisy measurements:
//!
//! 1. every one-way table is clipped at zero, floored at [`FLOOR`] and
//!    normalized; these are the canonical node marginals;
//! 2. every edge table is clipped, floored and normalized, then bent to the
//!    canonical marginals of its endpoints with iterative proportional
//!    fitting;
//! 3. the tree is rooted at attribute 0 and each fitted edge table becomes
//!    the conditional `P(child | parent)`.

use std::collections::VecDeque;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Schema};
use crate::dp::{gaussian_mechanism, PrivacyBudget, RngStream};
use crate::error::{Error, Result};
use crate::marginals::{one_way_counts, two_way_counts, CountTable};
use crate::structure::Tree;

/// Added to every clipped cell before normalizing.
pub const FLOOR: f64 = 1e-8;
/// IPF stops once every row and column sum is this close to its target.
pub const IPF_TOLERANCE: f64 = 1e-10;
pub const IPF_MAX_SWEEPS: usize = 500;

/// Noisy one-way tables for every attribute and noisy two-way tables for
/// every tree edge. Cells may be negative.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoisyMeasurements {
    pub schema: Schema,
    pub tree: Tree,
    pub one_way: Vec<CountTable>,
    pub two_way: Vec<CountTable>,
    pub sigma_one_way: f64,
    pub sigma_two_way: f64,
}

/// Releases all one-way marginals as one Gaussian vector query.
pub fn measure_one_way(d: &Dataset, sigma: f64, rng: &mut RngStream) -> Result<Vec<CountTable>> {
    let exact = (0..d.d()).map(|i| one_way_counts(d, i)).collect::<Result<Vec<_>>>()?;
    noise_group(exact, sigma, rng)
}

/// Releases the two-way marginals of every tree edge as one Gaussian vector query.
pub fn measure_two_way(d: &Dataset, tree: &Tree, sigma: f64, rng: &mut RngStream) -> Result<Vec<CountTable>> {
    let exact = tree
        .edges()
        .iter()
        .map(|&(i, j)| two_way_counts(d, i, j))
        .collect::<Result<Vec<_>>>()?;
    noise_group(exact, sigma, rng)
}

fn noise_group(tables: Vec<CountTable>, sigma: f64, rng: &mut RngStream) -> Result<Vec<CountTable>> {
    let flat: Vec<f64> = tables.iter().flat_map(|t| t.cells.iter().copied()).collect();
    let noisy = gaussian_mechanism(&flat, sigma, rng)?;
    let mut offset = 0;
    Ok(tables
        .into_iter()
        .map(|mut t| {
            let len = t.cells.len();
            t.cells.copy_from_slice(&noisy[offset..offset + len]);
            offset += len;
            t
        })
        .collect())
}

/// Both measurement stages at the scales of `plan`, drawing from
/// `rng.child("one-way")` and `rng.child("two-way")`.
pub fn measure(d: &Dataset, tree: &Tree, plan: &PrivacyBudget, rng: &RngStream) -> Result<NoisyMeasurements> {
    if tree.d() != d.d() || !tree.is_spanning() {
        return Err(Error::Structure("measurement needs a spanning tree over the schema".into()));
    }
    let one_way = measure_one_way(d, plan.sigma_one_way, &mut rng.child("one-way"))?;
    let two_way = measure_two_way(d, tree, plan.sigma_two_way, &mut rng.child("two-way"))?;
    Ok(NoisyMeasurements {
        schema: d.schema().clone(),
        tree: tree.clone(),
        one_way,
        two_way,
        sigma_one_way: plan.sigma_one_way,
        sigma_two_way: plan.sigma_two_way,
    })
}

/// Clip at zero, add [`FLOOR`], normalize.
pub fn floor_normalize(cells: &[f64]) -> Vec<f64> {
    let floored: Vec<f64> = cells.iter().map(|c| c.max(0.0) + FLOOR).collect();
    let total: f64 = floored.iter().sum();
    floored.into_iter().map(|c| c / total).collect()
}

/// An edge table after iterative proportional fitting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IpfFit {
    pub rows: usize,
    pub cols: usize,
    pub cells: Vec<f64>,
    pub sweeps: usize,
    /// Newton steps taken after the sweep budget ran out.
    pub newton_steps: usize,
    pub residual: f64,
}

/// Newton steps allowed once [`IPF_MAX_SWEEPS`] sweeps have not converged.
pub const NEWTON_MAX_STEPS: usize = 200;

/// Alternately rescales rows and columns of a strictly positive table until
/// its margins match `row_target` and `col_target`.
///
/// Tables with near-zero cells in the wrong places converge very slowly, so
/// after [`IPF_MAX_SWEEPS`] sweeps the remaining scaling is solved by Newton's
/// method on the log row and column factors. Both reach the same fitted table.
pub fn ipf(table: &[f64], row_target: &[f64], col_target: &[f64]) -> Result<IpfFit> {
    let (rows, cols) = (row_target.len(), col_target.len());
    if table.len() != rows * cols {
        return Err(Error::argument(format!(
            "table of {} cells cannot have {rows}x{cols} margins",
            table.len()
        )));
    }
    let mut cells = table.to_vec();
    let mut residual = f64::INFINITY;
    for sweep in 1..=IPF_MAX_SWEEPS {
        for u in 0..rows {
            let row = &mut cells[u * cols..(u + 1) * cols];
            let s: f64 = row.iter().sum();
            let f = row_target[u] / s;
            row.iter_mut().for_each(|c| *c *= f);
        }
        for v in 0..cols {
            let s: f64 = (0..rows).map(|u| cells[u * cols + v]).sum();
            let f = col_target[v] / s;
            (0..rows).for_each(|u| cells[u * cols + v] *= f);
        }
        debug_assert!(cells.iter().all(|&c| c > 0.0 && c.is_finite()));
        residual = margin_residual(&cells, row_target, col_target);
        if residual < IPF_TOLERANCE {
            return Ok(IpfFit {
                rows,
                cols,
                cells,
                sweeps: sweep,
                newton_steps: 0,
                residual,
            });
        }
    }
    log::debug!("IPF residual {residual:e} after {IPF_MAX_SWEEPS} sweeps; switching to Newton");
    newton_scaling(&cells, row_target, col_target)
}

/// Minimizes `Σ T·e^(a_u + b_v) − Σ r_u a_u − Σ c_v b_v` with `b_last = 0`.
/// The minimizer scales `T` to margins `(r, c)`.
fn newton_scaling(table: &[f64], r: &[f64], c: &[f64]) -> Result<IpfFit> {
    use nalgebra::{DMatrix, DVector};
    let (rows, cols) = (r.len(), c.len());
    let dim = rows + cols - 1;
    let mut x = DVector::<f64>::zeros(dim);
    let scaled = |x: &DVector<f64>| -> Vec<f64> {
        (0..rows * cols)
            .map(|k| {
                let (u, v) = (k / cols, k % cols);
                let b = if v + 1 < cols { x[rows + v] } else { 0.0 };
                table[k] * (x[u] + b).exp()
            })
            .collect()
    };
    let objective = |m: &[f64], x: &DVector<f64>| {
        m.iter().sum::<f64>() - (0..rows).map(|u| r[u] * x[u]).sum::<f64>()
            - (0..cols - 1).map(|v| c[v] * x[rows + v]).sum::<f64>()
    };
    let mut m = scaled(&x);
    let mut residual = margin_residual(&m, r, c);
    for step in 1..=NEWTON_MAX_STEPS {
        let row_sum: Vec<f64> = (0..rows).map(|u| m[u * cols..(u + 1) * cols].iter().sum()).collect();
        let col_sum: Vec<f64> = (0..cols).map(|v| m.iter().skip(v).step_by(cols).sum()).collect();
        let mut grad = DVector::<f64>::zeros(dim);
        let mut hess = DMatrix::<f64>::zeros(dim, dim);
        for u in 0..rows {
            grad[u] = row_sum[u] - r[u];
            hess[(u, u)] = row_sum[u];
        }
        for v in 0..cols - 1 {
            grad[rows + v] = col_sum[v] - c[v];
            hess[(rows + v, rows + v)] = col_sum[v];
            for u in 0..rows {
                hess[(u, rows + v)] = m[u * cols + v];
                hess[(rows + v, u)] = m[u * cols + v];
            }
        }
        let chol = hess.cholesky().ok_or(Error::Reconstruction {
            sweeps: IPF_MAX_SWEEPS,
            residual,
        })?;
        let dir = -chol.solve(&grad);
        let slope = grad.dot(&dir);
        let f0 = objective(&m, &x);
        let mut t = 1.0;
        loop {
            let cand = &x + t * &dir;
            let mc = scaled(&cand);
            // Near the optimum the decrease drowns in rounding; take the full step.
            if objective(&mc, &cand) <= f0 + 1e-4 * t * slope || slope.abs() < 1e-14 || t < 1e-10 {
                x = cand;
                m = mc;
                break;
            }
            t *= 0.5;
        }
        residual = margin_residual(&m, r, c);
        if residual < IPF_TOLERANCE {
            return Ok(IpfFit {
                rows,
                cols,
                cells: m,
                sweeps: IPF_MAX_SWEEPS,
                newton_steps: step,
                residual,
            });
        }
    }
    Err(Error::Reconstruction {
        sweeps: IPF_MAX_SWEEPS,
        residual,
    })
}

/// Largest absolute deviation of a table's row or column sums from targets.
pub fn margin_residual(cells: &[f64], row_target: &[f64], col_target: &[f64]) -> f64 {
    let cols = col_target.len();
    let row_err = row_target
        .iter()
        .enumerate()
        .map(|(u, t)| (cells[u * cols..(u + 1) * cols].iter().sum::<f64>() - t).abs());
    let col_err = col_target.iter().enumerate().map(|(v, t)| {
        (cells.iter().skip(v).step_by(cols).sum::<f64>() - t).abs()
    });
    row_err.chain(col_err).fold(0.0, f64::max)
}

/// IPF outcome for one tree edge.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeFit {
    pub edge: (usize, usize),
    pub sweeps: usize,
    pub newton_steps: usize,
    pub residual: f64,
}

/// Rooted tree factorization `P(x) = P(x_root) · Π P(x_c | x_parent(c))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeModel {
    pub schema: Schema,
    pub tree: Tree,
    pub root: usize,
    /// Parent of each attribute; `None` for the root.
    pub parent: Vec<Option<usize>>,
    /// Attributes in breadth-first order from the root.
    pub order: Vec<usize>,
    pub root_marginal: Vec<f64>,
    /// `conditionals[c][p][v] = P(x_c = v | x_parent = p)`; `None` for the root.
    pub conditionals: Vec<Option<Vec<Vec<f64>>>>,
    pub fits: Vec<EdgeFit>,
}

/// Fits a [`TreeModel`] to noisy measurements without touching raw data.
pub fn reconcile(m: &NoisyMeasurements) -> Result<TreeModel> {
    let d = m.schema.d();
    if m.one_way.len() != d || m.two_way.len() != m.tree.edges().len() || m.tree.d() != d {
        return Err(Error::argument("measurements do not match the schema and tree"));
    }
    let canonical: Vec<Vec<f64>> = m.one_way.iter().map(|t| floor_normalize(&t.cells)).collect();

    let mut fitted = Vec::with_capacity(m.two_way.len());
    let mut fits = Vec::with_capacity(m.two_way.len());
    for (&(i, j), table) in m.tree.edges().iter().zip(&m.two_way) {
        if table.attrs != [i, j] {
            return Err(Error::argument(format!(
                "two-way table for edge ({i}, {j}) is over {:?}",
                table.attrs
            )));
        }
        let fit = ipf(&floor_normalize(&table.cells), &canonical[i], &canonical[j])?;
        fits.push(EdgeFit {
            edge: (i, j),
            sweeps: fit.sweeps,
            newton_steps: fit.newton_steps,
            residual: fit.residual,
        });
        fitted.push(fit);
    }

    let root = 0;
    let adj = m.tree.neighbors();
    let mut parent = vec![None; d];
    let mut order = Vec::with_capacity(d);
    let mut seen = vec![false; d];
    let mut queue = VecDeque::from([root]);
    seen[root] = true;
    while let Some(v) = queue.pop_front() {
        order.push(v);
        let mut next = adj[v].clone();
        next.sort_unstable();
        for w in next {
            if !seen[w] {
                seen[w] = true;
                parent[w] = Some(v);
                queue.push_back(w);
            }
        }
    }
    if order.len() != d {
        return Err(Error::Structure("tree does not span the schema".into()));
    }

    let mut conditionals = vec![None; d];
    for (&(i, j), fit) in m.tree.edges().iter().zip(&fitted) {
        let (p, c) = if parent[j] == Some(i) { (i, j) } else { (j, i) };
        let (kp, kc) = (m.schema.domain_size(p), m.schema.domain_size(c));
        let at = |pv: usize, cv: usize| {
            if p == i {
                fit.cells[pv * fit.cols + cv]
            } else {
                fit.cells[cv * fit.cols + pv]
            }
        };
        let table: Vec<Vec<f64>> = (0..kp)
            .map(|pv| {
                let row: Vec<f64> = (0..kc).map(|cv| at(pv, cv)).collect();
                let s: f64 = row.iter().sum();
                row.into_iter().map(|x| x / s).collect()
            })
            .collect();
        conditionals[c] = Some(table);
    }

    let model = TreeModel {
        schema: m.schema.clone(),
        tree: m.tree.clone(),
        root,
        parent,
        order,
        root_marginal: canonical[root].clone(),
        conditionals,
        fits,
    };
    debug_assert!(model.is_normalized(1e-10));
    Ok(model)
}

impl TreeModel {
    pub fn d(&self) -> usize {
        self.schema.d()
    }

    fn conditional(&self, c: usize) -> &[Vec<f64>] {
        self.conditionals[c].as_deref().expect("non-root node has a conditional")
    }

    /// All tables nonnegative and summing to one within `tol`.
    pub fn is_normalized(&self, tol: f64) -> bool {
        let ok = |dist: &[f64]| {
            dist.iter().all(|&p| p >= 0.0) && (dist.iter().sum::<f64>() - 1.0).abs() <= tol
        };
        ok(&self.root_marginal)
            && self.conditionals.iter().flatten().all(|t| t.iter().all(|row| ok(row)))
    }

    /// Probability of one full record.
    pub fn joint_prob(&self, record: &[u32]) -> Result<f64> {
        if record.len() != self.d() {
            return Err(Error::argument(format!(
                "record has {} codes, model has {} attributes",
                record.len(),
                self.d()
            )));
        }
        for (i, &c) in record.iter().enumerate() {
            if c as usize >= self.schema.domain_size(i) {
                return Err(Error::Domain {
                    attribute: self.schema.name(i).to_string(),
                    value: c.to_string(),
                });
            }
        }
        let mut p = self.root_marginal[record[self.root] as usize];
        for &c in &self.order[1..] {
            let par = self.parent[c].expect("non-root");
            p *= self.conditional(c)[record[par] as usize][record[c] as usize];
        }
        Ok(p)
    }

    /// Probability that every attribute with `Some(code)` in `evidence`
    /// takes that code; other attributes are summed out.
    pub fn evidence_prob(&self, evidence: &[Option<u32>]) -> f64 {
        let d = self.d();
        let mut children = vec![Vec::new(); d];
        for &c in &self.order[1..] {
            children[self.parent[c].expect("non-root")].push(c);
        }
        // below[v][x] = P(evidence in subtree(v) below v | x_v = x), excluding v's own evidence.
        let mut below: Vec<Vec<f64>> = vec![Vec::new(); d];
        let allowed = |v: usize, x: usize| evidence[v].is_none_or(|e| e as usize == x);
        for &v in self.order.iter().rev() {
            let k = self.schema.domain_size(v);
            below[v] = (0..k)
                .map(|x| {
                    children[v]
                        .iter()
                        .map(|&c| {
                            let cond = &self.conditional(c)[x];
                            (0..cond.len())
                                .filter(|&y| allowed(c, y))
                                .map(|y| cond[y] * below[c][y])
                                .sum::<f64>()
                        })
                        .product()
                })
                .collect();
        }
        (0..self.root_marginal.len())
            .filter(|&x| allowed(self.root, x))
            .map(|x| self.root_marginal[x] * below[self.root][x])
            .sum()
    }

    /// Ancestral sampling of `n` records.
    pub fn sample(&self, n: usize, rng: &mut RngStream) -> Dataset {
        let d = self.d();
        let cumulative = |dist: &[f64]| -> Vec<f64> {
            dist.iter()
                .scan(0.0, |acc, &p| {
                    *acc += p;
                    Some(*acc)
                })
                .collect()
        };
        let root_cdf = cumulative(&self.root_marginal);
        let cond_cdf: Vec<Option<Vec<Vec<f64>>>> = self
            .conditionals
            .iter()
            .map(|t| t.as_ref().map(|rows| rows.iter().map(|r| cumulative(r)).collect()))
            .collect();
        let draw = |cdf: &[f64], rng: &mut RngStream| -> u32 {
            let u: f64 = rng.random::<f64>() * cdf[cdf.len() - 1];
            cdf.partition_point(|&c| c <= u).min(cdf.len() - 1) as u32
        };
        let mut columns = vec![Vec::with_capacity(n); d];
        let mut record = vec![0u32; d];
        for _ in 0..n {
            record[self.root] = draw(&root_cdf, rng);
            for &c in &self.order[1..] {
                let par = self.parent[c].expect("non-root");
                let rows = cond_cdf[c].as_ref().expect("non-root");
                record[c] = draw(&rows[record[par] as usize], rng);
            }
            for (col, &x) in columns.iter_mut().zip(&record) {
                col.push(x);
            }
        }
        Dataset::new(self.schema.clone(), columns).expect("sampled codes lie in their domains")
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: TreeModel = serde_json::from_str(text)?;
        model.check()?;
        Ok(model)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        TreeModel::from_json(&text)
    }

    /// Structural consistency of a deserialized model.
    fn check(&self) -> Result<()> {
        let d = self.d();
        let bad = |m: &str| Err(Error::Structure(format!("invalid model: {m}")));
        if self.tree.d() != d || !self.tree.is_spanning() {
            return bad("tree does not span the schema");
        }
        if self.parent.len() != d || self.conditionals.len() != d || self.order.len() != d {
            return bad("per-attribute arrays have the wrong length");
        }
        if self.root_marginal.len() != self.schema.domain_size(self.root) {
            return bad("root marginal has the wrong size");
        }
        for &c in &self.order[1..] {
            let Some(p) = self.parent[c] else {
                return bad("non-root attribute without parent");
            };
            if !self.tree.contains(p, c) {
                return bad("parent link is not a tree edge");
            }
            let Some(t) = &self.conditionals[c] else {
                return bad("missing conditional");
            };
            if t.len() != self.schema.domain_size(p)
                || t.iter().any(|r| r.len() != self.schema.domain_size(c))
            {
                return bad("conditional has the wrong shape");
            }
        }
        if !self.is_normalized(1e-8) {
            return bad("tables are not normalized");
        }
        Ok(())
    }
}

/// Probability of `record` under `m`.
pub fn model_joint_prob(m: &TreeModel, record: &[u32]) -> Result<f64> {
    m.joint_prob(record)
}

/// Draws `n` synthetic records from `m`.
pub fn sample(m: &TreeModel, n: usize, rng: &mut RngStream) -> Dataset {
    m.sample(n, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn chain_model() -> TreeModel {
        // s(0) – a(1) – o(2), all binary, rooted at s.
        let schema = Schema::from_sizes(&[2, 2, 2]).unwrap();
        TreeModel {
            schema,
            tree: Tree::new(3, [(0, 1), (1, 2)]).unwrap(),
            root: 0,
            parent: vec![None, Some(0), Some(1)],
            order: vec![0, 1, 2],
            root_marginal: vec![0.3, 0.7],
            conditionals: vec![
                None,
                Some(vec![vec![0.9, 0.1], vec![0.2, 0.8]]),
                Some(vec![vec![0.6, 0.4], vec![0.25, 0.75]]),
            ],
            fits: Vec::new(),
        }
    }

    fn records(sizes: &[usize]) -> Vec<Vec<u32>> {
        let mut out = vec![Vec::new()];
        for &k in sizes {
            out = out
                .into_iter()
                .flat_map(|r| {
                    (0..k as u32).map(move |x| {
                        let mut r = r.clone();
                        r.push(x);
                        r
                    })
                })
                .collect();
        }
        out
    }

    #[test]
    fn chain_probability_by_hand() {
        let m = chain_model();
        // P(s=1) P(a=0|s=1) P(o=1|a=0) = 0.7 · 0.2 · 0.4
        assert_relative_eq!(m.joint_prob(&[1, 0, 1]).unwrap(), 0.7 * 0.2 * 0.4, max_relative = 1e-15);
        let total: f64 = records(&[2, 2, 2]).iter().map(|r| m.joint_prob(r).unwrap()).sum();
        assert_relative_eq!(total, 1.0, max_relative = 1e-12);
        assert!(m.joint_prob(&[2, 0, 0]).is_err());
        assert!(m.joint_prob(&[0, 0]).is_err());
    }

    #[test]
    fn evidence_matches_enumeration() {
        let m = chain_model();
        let all = records(&[2, 2, 2]);
        for ev in [[Some(1), None, Some(0)], [None, None, None], [None, Some(1), None]] {
            let brute: f64 = all
                .iter()
                .filter(|r| ev.iter().zip(r.iter()).all(|(e, &x)| e.is_none_or(|e| e == x)))
                .map(|r| m.joint_prob(r).unwrap())
                .sum();
            assert_relative_eq!(m.evidence_prob(&ev), brute, max_relative = 1e-12);
        }
    }

    #[test]
    fn independent_uniform_pair() {
        let ones = CountTable::new(vec![0], vec![2], vec![5.0, 5.0]).unwrap();
        let twos = CountTable::new(vec![0, 1], vec![2, 2], vec![2.5; 4]).unwrap();
        let m = reconcile(&NoisyMeasurements {
            schema: Schema::from_sizes(&[2, 2]).unwrap(),
            tree: Tree::new(2, [(0, 1)]).unwrap(),
            one_way: vec![ones.clone(), CountTable { attrs: vec![1], ..ones }],
            two_way: vec![twos],
            sigma_one_way: 1.0,
            sigma_two_way: 1.0,
        })
        .unwrap();
        for r in records(&[2, 2]) {
            assert_relative_eq!(m.joint_prob(&r).unwrap(), 0.25, max_relative = 1e-12);
        }
    }

    fn exact_measurements(ds: &Dataset, tree: &Tree) -> NoisyMeasurements {
        NoisyMeasurements {
            schema: ds.schema().clone(),
            tree: tree.clone(),
            one_way: (0..ds.d()).map(|i| one_way_counts(ds, i).unwrap()).collect(),
            two_way: tree.edges().iter().map(|&(i, j)| two_way_counts(ds, i, j).unwrap()).collect(),
            sigma_one_way: 0.0,
            sigma_two_way: 0.0,
        }
    }

    fn toy_dataset() -> Dataset {
        let rows: Vec<Vec<u32>> = (0..200u32)
            .map(|r| vec![r % 2, (r / 2) % 3, ((r % 2) + (r / 7) % 2) % 2])
            .collect();
        Dataset::from_rows(Schema::from_sizes(&[2, 3, 2]).unwrap(), &rows).unwrap()
    }

    #[test]
    fn noiseless_inputs_converge_in_one_sweep() {
        let ds = toy_dataset();
        let tree = Tree::new(3, [(0, 1), (0, 2)]).unwrap();
        let m = reconcile(&exact_measurements(&ds, &tree)).unwrap();
        assert!(m.fits.iter().all(|f| f.sweeps == 1 && f.residual < IPF_TOLERANCE));
        // Conditionals equal the empirical ones up to the floor.
        let c = two_way_counts(&ds, 0, 2).unwrap();
        let cond = m.conditionals[2].as_ref().unwrap();
        for p in 0..2 {
            let row = c.cells[p * 2] + c.cells[p * 2 + 1];
            for v in 0..2 {
                assert!((cond[p][v] - c.get2(p, v) / row).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn negative_noisy_cell_is_floored() {
        let ds = toy_dataset();
        let tree = Tree::new(3, [(0, 1), (1, 2)]).unwrap();
        let mut meas = exact_measurements(&ds, &tree);
        meas.two_way[0].cells[0] = -0.1;
        meas.one_way[2].cells[1] = -40.0;
        let m = reconcile(&meas).unwrap();
        assert!(m.is_normalized(1e-10));
        assert!(m.conditionals.iter().flatten().flatten().flatten().all(|&p| p > 0.0));
        assert!(m.root_marginal.iter().all(|&p| p > 0.0));
    }

    #[test]
    fn fitted_margins_hit_canonical_targets() {
        let ds = toy_dataset();
        let tree = Tree::new(3, [(0, 2), (1, 2)]).unwrap();
        let mut meas = exact_measurements(&ds, &tree);
        meas.two_way[1].cells.iter_mut().enumerate().for_each(|(k, c)| *c += (k as f64 * 3.7) % 5.0 - 2.0);
        for (&(i, j), t) in tree.edges().iter().zip(&meas.two_way) {
            let (r, c) = (floor_normalize(&meas.one_way[i].cells), floor_normalize(&meas.one_way[j].cells));
            let fit = ipf(&floor_normalize(&t.cells), &r, &c).unwrap();
            assert!(margin_residual(&fit.cells, &r, &c) < 1e-10);
        }
        // The model's implied edge marginals reproduce the fitted tables.
        let m = reconcile(&meas).unwrap();
        let fit = ipf(
            &floor_normalize(&meas.two_way[1].cells),
            &floor_normalize(&meas.one_way[1].cells),
            &floor_normalize(&meas.one_way[2].cells),
        )
        .unwrap();
        for u in 0..3u32 {
            for v in 0..2u32 {
                let implied = m.evidence_prob(&[None, Some(u), Some(v)]);
                assert!((implied - fit.cells[u as usize * 2 + v as usize]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn slow_ipf_falls_back_to_newton() {
        // Uniform targets force the floored cell (1, 0) up to a quarter of the mass.
        let t = floor_normalize(&[15.0, 8.0, -1.0, 3.0]);
        let (r, c) = (floor_normalize(&[-8.0, -5.0]), floor_normalize(&[-1.0, -4.0]));
        let fit = ipf(&t, &r, &c).unwrap();
        assert!(fit.newton_steps > 0);
        assert_eq!(fit.sweeps, IPF_MAX_SWEEPS);
        assert!(margin_residual(&fit.cells, &r, &c) < IPF_TOLERANCE);
        assert!(fit.cells.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn newton_reaches_the_ipf_fixed_point() {
        let t = floor_normalize(&[3.0, 1.0, 2.0, 5.0, 1.0, 4.0]);
        let (r, c) = ([0.3, 0.7], [0.2, 0.5, 0.3]);
        let a = ipf(&t, &r, &c).unwrap();
        let b = newton_scaling(&t, &r, &c).unwrap();
        assert_eq!(a.newton_steps, 0);
        for (x, y) in a.cells.iter().zip(&b.cells) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn ipf_rejects_bad_shapes() {
        assert!(ipf(&[0.5, 0.5], &[0.5, 0.5], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn measurement_noise_and_determinism() {
        let ds = toy_dataset();
        let tree = Tree::new(3, [(0, 1), (1, 2)]).unwrap();
        let plan = PrivacyBudget::plan(1.0, 1e-9, 3).unwrap();
        let a = measure(&ds, &tree, &plan, &RngStream::new(5, "m")).unwrap();
        let b = measure(&ds, &tree, &plan, &RngStream::new(5, "m")).unwrap();
        assert_eq!(a, b);
        let exact = one_way_counts(&ds, 0).unwrap();
        let tiny = measure_one_way(&ds, 1e-300, &mut RngStream::new(5, "m")).unwrap();
        assert_eq!(tiny[0], exact);
        let bad_tree = Tree::new(3, [(0, 1)]).unwrap();
        assert!(measure(&ds, &bad_tree, &plan, &RngStream::new(5, "m")).is_err());
    }

    #[test]
    fn one_way_noise_scale_matches_plan() {
        // Per-cell std of the one-way group is √d·σ_G; check on a 2-cell table.
        let schema = Schema::from_sizes(&[2, 2, 2, 2]).unwrap();
        let ds = Dataset::from_rows(schema, &[vec![0, 0, 0, 0]]).unwrap();
        let plan = PrivacyBudget::from_rho(1.5, 1e-9, 4).unwrap();
        let reps = 10_000;
        let mut sq = 0.0;
        for r in 0..reps {
            let t = measure_one_way(&ds, plan.sigma_one_way, &mut RngStream::new(r, "var")).unwrap();
            sq += (t[0].cells[1]).powi(2);
        }
        let sd = (sq / reps as f64).sqrt();
        let expected = 2f64.sqrt() * plan.sigma_g_base * 2f64.sqrt();
        assert!((sd - expected).abs() / expected < 0.05, "sd {sd} vs {expected}");
    }

    #[test]
    fn sampling_basics() {
        let m = chain_model();
        assert_eq!(m.sample(0, &mut RngStream::new(0, "s")).n(), 0);
        let a = m.sample(50, &mut RngStream::new(1, "s"));
        let b = m.sample(50, &mut RngStream::new(1, "s"));
        assert_eq!(a, b);
    }

    #[test]
    fn json_round_trip() {
        let m = chain_model();
        assert_eq!(TreeModel::from_json(&m.to_json().unwrap()).unwrap(), m);
        let mut broken = m.clone();
        broken.root_marginal = vec![0.5, 0.6];
        assert!(TreeModel::from_json(&broken.to_json().unwrap()).is_err());
    }
}
