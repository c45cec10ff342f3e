use std::io::Write;

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{CIConstraint, Dataset};
use crate::dp::RngStream;
use crate::error::{Error, Result};
use crate::eval::{
    complement, constraint_cmi, kfold_indices, pairwise_fidelity, score_on_real, sum_q, train_logistic,
    wilcoxon_one_sided, Direction, DownstreamTask, LogisticParams, PairedComparison,
};
use crate::pipeline::{synthesize, Method, SynthesisRequest};
use crate::structure::{exact_count_scores, probability_scores};

/// The experiment grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub epsilons: Vec<f64>,
    pub folds: usize,
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
    pub delta: f64,
    /// Seed of the fold split.
    pub fold_seed: u64,
    /// Synthetic rows per cell; `None` matches the training split.
    pub rows: Option<usize>,
    /// The pair `(a, b)` compared with `d_i = m(a) − m(b)`.
    pub compare: (Method, Method),
}

impl Grid {
    pub fn validate(&self) -> Result<()> {
        if self.epsilons.is_empty() || self.epsilons.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
            return Err(Error::argument("epsilon values must be positive"));
        }
        if self.folds < 2 {
            return Err(Error::argument("at least 2 folds are needed"));
        }
        if self.seeds.is_empty() || self.methods.is_empty() {
            return Err(Error::argument("the grid needs at least one seed and one method"));
        }
        let (a, b) = self.compare;
        if !self.methods.contains(&a) || !self.methods.contains(&b) {
            return Err(Error::argument(format!("compared methods {a} and {b} must both be run")));
        }
        Ok(())
    }
}

/// Metric names, in output order, with the direction that favours the first compared method.
pub const METRICS: [(&str, Direction); 7] = [
    ("sum_q", Direction::Greater),
    ("sum_q_prob", Direction::Greater),
    ("kl_pairwise", Direction::Less),
    ("tv_pairwise", Direction::Less),
    ("cmi", Direction::Less),
    ("auc", Direction::Greater),
    ("eo", Direction::Less),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub sum_q: f64,
    pub sum_q_prob: f64,
    pub kl_pairwise: f64,
    pub tv_pairwise: f64,
    pub cmi: f64,
    pub auc: f64,
    pub eo: f64,
}

impl CellMetrics {
    pub fn get(&self, metric: &str) -> f64 {
        match metric {
            "sum_q" => self.sum_q,
            "sum_q_prob" => self.sum_q_prob,
            "kl_pairwise" => self.kl_pairwise,
            "tv_pairwise" => self.tv_pairwise,
            "cmi" => self.cmi,
            "auc" => self.auc,
            "eo" => self.eo,
            _ => panic!("unknown metric {metric}"),
        }
    }
}

/// One (ε, fold, seed, method) run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub epsilon: f64,
    pub fold: usize,
    pub seed: u64,
    pub method: Method,
    /// Seed handed to the synthesizer; shared by all methods of a unit.
    pub run_seed: u64,
    pub result: std::result::Result<CellMetrics, String>,
}

/// One line of the comparison table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    /// `None` pools all ε values.
    pub epsilon: Option<f64>,
    pub metric: String,
    pub test: Option<PairedComparison>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub grid: Grid,
    pub cells: Vec<Cell>,
    pub comparison: Vec<ComparisonRow>,
}

impl BenchmarkReport {
    pub fn failures(&self) -> usize {
        self.cells.iter().filter(|c| c.result.is_err()).count()
    }
}

fn run_seed(seed: u64, epsilon: f64, fold: usize) -> u64 {
    RngStream::new(seed, format!("cell/{epsilon}/{fold}")).next_u64()
}

fn run_cell(
    train: &Dataset,
    test: &Dataset,
    ci: &CIConstraint,
    task: &DownstreamTask,
    grid: &Grid,
    (epsilon, method): (f64, Method),
    run_seed: u64,
) -> Result<CellMetrics> {
    let out = synthesize(&SynthesisRequest {
        dataset: train.clone(),
        constraint: Some(ci.clone()),
        method,
        epsilon,
        delta: grid.delta,
        n_out: grid.rows.unwrap_or(train.n()),
        seed: run_seed,
    })?;
    let fid = pairwise_fidelity(train, &out.synthetic)?;
    let clf = train_logistic(&out.synthetic, task.outcome, &task.features, LogisticParams::default())?;
    let score = score_on_real(&clf, test, &task.groups)?;
    Ok(CellMetrics {
        sum_q: sum_q(&out.tree, &exact_count_scores(train)?)?,
        sum_q_prob: sum_q(&out.tree, &probability_scores(train)?)?,
        kl_pairwise: fid.kl_pairwise,
        tv_pairwise: fid.tv_pairwise,
        cmi: constraint_cmi(&out.synthetic, ci)?,
        auc: score.auc,
        eo: score.eo,
    })
}

/// Runs every cell of `grid` on a worker pool of `workers` threads and
/// assembles the paired comparison. Output order does not depend on scheduling.
pub fn run_benchmark(
    real: &Dataset,
    ci: &CIConstraint,
    task: &DownstreamTask,
    grid: &Grid,
    workers: usize,
) -> Result<BenchmarkReport> {
    grid.validate()?;
    let folds = kfold_indices(real.n(), grid.folds, grid.fold_seed)?;
    let splits: Vec<(Dataset, Dataset)> = folds
        .iter()
        .map(|f| (real.select_rows(&complement(real.n(), f)), real.select_rows(f)))
        .collect();
    let mut jobs = Vec::new();
    for &epsilon in &grid.epsilons {
        for fold in 0..grid.folds {
            for &seed in &grid.seeds {
                for &method in &grid.methods {
                    jobs.push((epsilon, fold, seed, method));
                }
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::argument(format!("cannot start worker pool: {e}")))?;
    let cells: Vec<Cell> = pool.install(|| {
        jobs.par_iter()
            .map(|&(epsilon, fold, seed, method)| {
                let rs = run_seed(seed, epsilon, fold);
                let (train, test) = &splits[fold];
                let result = run_cell(train, test, ci, task, grid, (epsilon, method), rs)
                    .map_err(|e| e.to_string());
                if let Err(e) = &result {
                    log::error!("cell eps={epsilon} fold={fold} seed={seed} method={method}: {e}");
                }
                Cell {
                    epsilon,
                    fold,
                    seed,
                    method,
                    run_seed: rs,
                    result,
                }
            })
            .collect()
    });
    let comparison = compare(&cells, grid)?;
    Ok(BenchmarkReport {
        grid: grid.clone(),
        cells,
        comparison,
    })
}

/// Paired differences per ε stratum and pooled. A unit is (ε, fold, seed);
/// units where either method failed are left out.
fn compare(cells: &[Cell], grid: &Grid) -> Result<Vec<ComparisonRow>> {
    let (a, b) = grid.compare;
    let lookup = |eps: f64, fold: usize, seed: u64, m: Method| {
        cells
            .iter()
            .find(|c| c.epsilon == eps && c.fold == fold && c.seed == seed && c.method == m)
            .and_then(|c| c.result.as_ref().ok())
    };
    let strata: Vec<Option<f64>> = grid.epsilons.iter().map(|&e| Some(e)).chain([None]).collect();
    let mut rows = Vec::new();
    for stratum in strata {
        for (metric, direction) in METRICS {
            let mut diffs = Vec::new();
            for &eps in grid.epsilons.iter().filter(|&&e| stratum.is_none_or(|s| s == e)) {
                for fold in 0..grid.folds {
                    for &seed in &grid.seeds {
                        if let (Some(ma), Some(mb)) = (lookup(eps, fold, seed, a), lookup(eps, fold, seed, b)) {
                            diffs.push(ma.get(metric) - mb.get(metric));
                        }
                    }
                }
            }
            let test = if diffs.is_empty() {
                None
            } else {
                Some(wilcoxon_one_sided(&diffs, direction)?)
            };
            rows.push(ComparisonRow {
                epsilon: stratum,
                metric: metric.to_string(),
                test,
            });
        }
    }
    Ok(rows)
}

/// Significance threshold of the comparison table.
pub const SIGNIFICANCE: f64 = 0.05;

pub fn write_cells_csv(cells: &[Cell], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["epsilon", "fold", "seed", "method", "run_seed", "status"];
    header.extend(METRICS.iter().map(|(m, _)| *m));
    header.push("error");
    out.write_record(&header)?;
    for c in cells {
        let mut rec = vec![
            c.epsilon.to_string(),
            c.fold.to_string(),
            c.seed.to_string(),
            c.method.to_string(),
            c.run_seed.to_string(),
        ];
        match &c.result {
            Ok(m) => {
                rec.push("ok".into());
                rec.extend(METRICS.iter().map(|(name, _)| m.get(name).to_string()));
                rec.push(String::new());
            }
            Err(e) => {
                rec.push("error".into());
                rec.extend(METRICS.iter().map(|_| String::new()));
                rec.push(e.clone());
            }
        }
        out.write_record(&rec)?;
    }
    out.flush().map_err(|e| Error::io("cells.csv", e))?;
    Ok(())
}

pub fn write_comparison_csv(rows: &[ComparisonRow], compare: (Method, Method), w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "epsilon", "metric", "method_a", "method_b", "direction", "n", "delta", "p_value", "significant",
    ])?;
    for r in rows {
        let eps = r.epsilon.map_or_else(|| "all".to_string(), |e| e.to_string());
        let (dir, n, delta, p, sig) = match &r.test {
            Some(t) => (
                format!("{:?}", t.direction).to_lowercase(),
                t.n.to_string(),
                t.delta.to_string(),
                t.p_value.to_string(),
                t.significant(SIGNIFICANCE).to_string(),
            ),
            None => Default::default(),
        };
        out.write_record([
            eps,
            r.metric.clone(),
            compare.0.to_string(),
            compare.1.to_string(),
            dir,
            n,
            delta,
            p,
            sig,
        ])?;
    }
    out.flush().map_err(|e| Error::io("comparison.csv", e))?;
    Ok(())
}
