//! End-to-end synthesis: budget plan, one-way measurement, private tree
//! selection, two-way measurement, reconciliation and sampling.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{CIConstraint, Dataset};
use crate::dp::{PrivacyBudget, RngStream};
use crate::error::{Error, Result};
use crate::model::{measure_one_way, measure_two_way, reconcile, EdgeFit, NoisyMeasurements, TreeModel};
use crate::structure::{
    quality_scores, select_tree_mst, select_tree_prefair, select_tree_privci, separates, Edge, Selection,
    TraceStep, Tree,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Mst,
    #[serde(rename = "privci")]
    PrivCI,
    #[serde(rename = "prefair")]
    PreFair,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Mst, Method::PrivCI, Method::PreFair];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Mst => "mst",
            Method::PrivCI => "privci",
            Method::PreFair => "prefair",
        }
    }

    /// Whether the method enforces the constraint structurally.
    pub fn constrained(self) -> bool {
        self != Method::Mst
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::argument(format!("unknown method {s:?}; expected mst, privci or prefair")))
    }
}

#[derive(Clone, Debug)]
pub struct SynthesisRequest {
    pub dataset: Dataset,
    /// Required by `privci` and `prefair`; recorded but unused by `mst`.
    pub constraint: Option<CIConstraint>,
    pub method: Method,
    pub epsilon: f64,
    pub delta: f64,
    pub n_out: usize,
    pub seed: u64,
}

/// Everything needed to audit and replay a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub version: String,
    pub method: Method,
    pub seed: u64,
    pub n_in: usize,
    pub n_out: usize,
    pub budget: PrivacyBudget,
    /// zCDP spent by one-way measurement, selection and two-way measurement.
    pub stage_costs: [f64; 3],
    pub rho_spent: f64,
    pub constraint: Option<CIConstraint>,
    /// Whether `Z` separates `X` from `Y` in the selected tree.
    pub separated: Option<bool>,
    pub tree: Vec<Edge>,
    pub trace: Vec<TraceStep>,
    pub ipf: Vec<EdgeFit>,
}

impl Provenance {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Clone, Debug)]
pub struct Synthesis {
    pub synthetic: Dataset,
    pub tree: Tree,
    pub model: TreeModel,
    pub provenance: Provenance,
}

fn check_request(req: &SynthesisRequest) -> Result<()> {
    if !(req.epsilon.is_finite() && req.epsilon > 0.0) {
        return Err(Error::argument(format!("epsilon must be positive, got {}", req.epsilon)));
    }
    if !(req.delta > 0.0 && req.delta < 1.0) {
        return Err(Error::argument(format!("delta must lie in (0, 1), got {}", req.delta)));
    }
    let d = req.dataset.d();
    match (&req.constraint, req.method.constrained()) {
        (Some(ci), _) => ci.validate(d),
        (None, true) => Err(Error::config(format!(
            "method {} needs a constraint with a nonempty conditioning set",
            req.method
        ))),
        (None, false) => Ok(()),
    }
}

/// Runs the full pipeline. The raw data is read only by the two measurement
/// stages and the edge scoring fed to the exponential mechanism.
pub fn synthesize(req: &SynthesisRequest) -> Result<Synthesis> {
    check_request(req)?;
    let data = &req.dataset;
    let plan = PrivacyBudget::plan(req.epsilon, req.delta, data.d())?;
    let rng = RngStream::new(req.seed, "synthesize");

    let one_way = measure_one_way(data, plan.sigma_one_way, &mut rng.child("one-way"))?;
    let scores = quality_scores(data, &one_way)?;
    let select_rng = rng.child("select");
    let selection: Selection = match (req.method, &req.constraint) {
        (Method::Mst, _) => select_tree_mst(&scores, plan.eps_prime, &select_rng)?,
        (Method::PrivCI, Some(ci)) => select_tree_privci(&scores, ci, plan.eps_prime, &select_rng)?,
        (Method::PreFair, Some(ci)) => select_tree_prefair(&scores, ci, plan.eps_prime, &select_rng)?,
        (_, None) => unreachable!("checked above"),
    };
    let tree = selection.tree;
    let separated = req.constraint.as_ref().map(|ci| separates(&tree, ci));
    if req.method.constrained() && separated != Some(true) {
        return Err(Error::Structure(format!(
            "{} selected a tree that does not separate X from Y",
            req.method
        )));
    }

    let two_way = measure_two_way(data, &tree, plan.sigma_two_way, &mut rng.child("two-way"))?;
    let measurements = NoisyMeasurements {
        schema: data.schema().clone(),
        tree: tree.clone(),
        one_way,
        two_way,
        sigma_one_way: plan.sigma_one_way,
        sigma_two_way: plan.sigma_two_way,
    };
    let model = reconcile(&measurements)?;
    let synthetic = model.sample(req.n_out, &mut rng.child("sample"));

    let stage_costs = plan.stage_costs();
    let provenance = Provenance {
        version: env!("CARGO_PKG_VERSION").to_string(),
        method: req.method,
        seed: req.seed,
        n_in: data.n(),
        n_out: req.n_out,
        rho_spent: stage_costs.iter().sum(),
        stage_costs,
        budget: plan,
        constraint: req.constraint.clone(),
        separated,
        tree: tree.edges().to_vec(),
        trace: selection.trace,
        ipf: model.fits.clone(),
    };
    Ok(Synthesis {
        synthetic,
        tree,
        model,
        provenance,
    })
}
