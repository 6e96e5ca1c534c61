//! MAC cost tables, the prediction-preserving efficiency oracle and the
//! accuracy-versus-cost frontier.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::Model;
use crate::options::Permutation;
use crate::oracle::{select, Rule, SweepResult};
use crate::tensor::Real;

/// Analytic per-sample MACs of each permutation at one input extent.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CostTable {
    pub extent: (usize, usize),
    pub macs: Vec<u64>,
}

pub fn cost_table<T: Real>(model: &Model<T>, perms: &[Permutation], extent: (usize, usize)) -> Result<CostTable> {
    let macs = perms.iter().map(|p| model.macs(p, extent.0, extent.1)).collect::<Result<_>>()?;
    Ok(CostTable { extent, macs })
}

/// What the efficiency oracle must agree with.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Reference {
    /// A fixed permutation, which must be part of the sweep.
    Fixed(Permutation),
    /// The per-sample best-case oracle.
    BestCase,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EfficiencyResult {
    pub accuracy: f64,
    pub avg_macs: f64,
    pub reference_accuracy: f64,
    pub reference_macs: f64,
    /// Chosen permutation per sample.
    pub choices: Vec<usize>,
}

/// Per sample, the cheapest permutation whose prediction equals the
/// reference's (ties to the lowest index).
pub fn efficiency_oracle(sr: &SweepResult, costs: &[u64], reference: Reference) -> Result<EfficiencyResult> {
    if costs.len() != sr.m() {
        return Err(Error::Contract(format!("{} costs for {} permutations", costs.len(), sr.m())));
    }
    let ref_choice: Vec<usize> = match reference {
        Reference::Fixed(p) => {
            let m = sr.index_of(&p).ok_or_else(|| Error::Contract("reference permutation is not part of the sweep".into()))?;
            vec![m; sr.n()]
        }
        Reference::BestCase => select(sr, Rule::Best),
    };
    let n = sr.n() as f64;
    let mut choices = Vec::with_capacity(sr.n());
    let (mut acc, mut ref_acc, mut macs, mut ref_macs) = (0usize, 0usize, 0u128, 0u128);
    for (i, &r) in ref_choice.iter().enumerate() {
        let target = sr.prediction(i, r);
        let pick = (0..sr.m())
            .filter(|&m| sr.prediction(i, m) == target)
            .min_by_key(|&m| (costs[m], m))
            .expect("the reference itself qualifies");
        choices.push(pick);
        acc += sr.correct(i, pick) as usize;
        ref_acc += sr.correct(i, r) as usize;
        macs += costs[pick] as u128;
        ref_macs += costs[r] as u128;
    }
    Ok(EfficiencyResult {
        accuracy: acc as f64 / n,
        avg_macs: macs as f64 / n,
        reference_accuracy: ref_acc as f64 / n,
        reference_macs: ref_macs as f64 / n,
        choices,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PointKind {
    Static,
    BestCase,
    Efficient,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FrontierPoint {
    pub label: String,
    pub kind: PointKind,
    pub perm_index: Option<usize>,
    pub accuracy: f64,
    pub avg_gmacs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Frontier {
    pub points: Vec<FrontierPoint>,
}

fn gmacs(m: f64) -> f64 {
    m / 1e9
}

/// Static points for every permutation, the best-case point, and efficient
/// variants of the best case and of each fixed reference.
pub fn frontier(sr: &SweepResult, costs: &[u64], base: &Permutation, references: &[Permutation]) -> Result<Frontier> {
    if costs.len() != sr.m() {
        return Err(Error::Contract(format!("{} costs for {} permutations", costs.len(), sr.m())));
    }
    let mut points: Vec<FrontierPoint> = (0..sr.m())
        .map(|m| FrontierPoint {
            label: sr.perms[m].label(base),
            kind: PointKind::Static,
            perm_index: Some(m),
            accuracy: sr.static_accuracy(m),
            avg_gmacs: gmacs(costs[m] as f64),
        })
        .collect();
    let best = efficiency_oracle(sr, costs, Reference::BestCase)?;
    points.push(FrontierPoint {
        label: "best-case".into(),
        kind: PointKind::BestCase,
        perm_index: None,
        accuracy: best.reference_accuracy,
        avg_gmacs: gmacs(best.reference_macs),
    });
    points.push(FrontierPoint {
        label: "efficient best-case".into(),
        kind: PointKind::Efficient,
        perm_index: None,
        accuracy: best.accuracy,
        avg_gmacs: gmacs(best.avg_macs),
    });
    for r in references {
        let e = efficiency_oracle(sr, costs, Reference::Fixed(*r))?;
        points.push(FrontierPoint {
            label: format!("efficient {}", r.label(base)),
            kind: PointKind::Efficient,
            perm_index: sr.index_of(r),
            accuracy: e.accuracy,
            avg_gmacs: gmacs(e.avg_macs),
        });
    }
    Ok(Frontier { points })
}

impl Frontier {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let e = |e: csv::Error| Error::Format(format!("csv: {e}"));
        w.write_record(["label", "permutation-index", "accuracy", "avg-GMACs"]).map_err(e)?;
        for p in &self.points {
            let idx = p.perm_index.map(|i| i.to_string()).unwrap_or_default();
            w.write_record([p.label.clone(), idx, p.accuracy.to_string(), p.avg_gmacs.to_string()]).map_err(e)?;
        }
        String::from_utf8(w.into_inner().map_err(|x| Error::Format(x.to_string()))?).map_err(|x| Error::Format(x.to_string()))
    }

    /// The annotated (non-static) points.
    pub fn highlights(&self) -> Vec<&FrontierPoint> {
        self.points.iter().filter(|p| p.kind != PointKind::Static).collect()
    }
}
