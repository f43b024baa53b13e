use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use serde::Serialize;
use std::fmt;

/// Which objective a [`LossBreakdown`] was built from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// `L − w·(D_ch + D_sp)`
    Combined,
    /// `Σ_b L_b − w·(D_ch + D_sp)`
    Ensemble,
    /// `λ·L_local + (1−λ)·L_global − w·(D_b + (D_sp + D_ch))`
    DualBranch,
}

/// The scalar parts of one loss evaluation.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub kind: LossKind,
    /// The full classification term (sum over branches, or the λ-mix).
    pub classification: f64,
    /// Its inputs: one loss per branch, or `[local, global]`.
    pub class_parts: Vec<f64>,
    pub lambda: Option<f64>,
    pub weight: f64,
    pub d_sp: Option<f64>,
    pub d_ch: Option<f64>,
    pub d_branch: Option<f64>,
    pub total: f64,
}

impl LossBreakdown {
    /// Rebuilds `total` from the stored parts with the same arithmetic as the graph.
    pub fn recompose(&self) -> f64 {
        let cls = match self.kind {
            LossKind::Combined => self.class_parts[0],
            LossKind::Ensemble => self.class_parts.iter().copied().reduce(|a, b| a + b).unwrap_or(0.0),
            LossKind::DualBranch => {
                let l = self.lambda.unwrap_or(0.0);
                l * self.class_parts[0] + (1.0 - l) * self.class_parts[1]
            }
        };
        let div = match self.kind {
            LossKind::DualBranch => fold(&[self.d_branch, fold(&[self.d_sp, self.d_ch])]),
            _ => fold(&[self.d_ch, self.d_sp]),
        };
        match div {
            Some(d) => cls - d * self.weight,
            None => cls,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite()
            && self.class_parts.iter().all(|v| v.is_finite())
            && [self.d_sp, self.d_ch, self.d_branch].iter().flatten().all(|v| v.is_finite())
    }
}

impl fmt::Display for LossBreakdown {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "total={} classification={} parts={:?}", self.total, self.classification, self.class_parts)?;
        for (name, v) in [("d_sp", self.d_sp), ("d_ch", self.d_ch), ("d_branch", self.d_branch)] {
            if let Some(v) = v {
                write!(f, " {name}={v}")?;
            }
        }
        Ok(())
    }
}

fn fold(terms: &[Option<f64>]) -> Option<f64> {
    terms.iter().flatten().copied().reduce(|a, b| a + b)
}

fn fold_vars(g: &mut Graph, terms: &[Option<Var>]) -> Result<Option<Var>> {
    let mut acc: Option<Var> = None;
    for &t in terms.iter().flatten() {
        acc = Some(match acc {
            Some(a) => g.add(a, t)?,
            None => t,
        });
    }
    Ok(acc)
}

fn check_weight(weight: f64) -> Result<()> {
    if weight >= 0.0 && weight.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid("loss", format!("diversity weight must be non-negative, got {weight}")))
    }
}

fn item(g: &Graph, v: Option<Var>) -> Option<f64> {
    v.map(|v| g.value(v).item())
}

fn subtract_diversity(g: &mut Graph, cls: Var, div: Option<Var>, weight: f64) -> Result<Var> {
    match div {
        Some(d) => {
            let scaled = g.scale(d, weight)?;
            g.sub(cls, scaled)
        }
        None => Ok(cls),
    }
}

/// `classification − weight·(d_ch + d_sp)`; absent diversities are left out.
pub fn combined_loss(
    g: &mut Graph,
    classification: Var,
    d_ch: Option<Var>,
    d_sp: Option<Var>,
    weight: f64,
) -> Result<(Var, LossBreakdown)> {
    check_weight(weight)?;
    let div = fold_vars(g, &[d_ch, d_sp])?;
    let total = subtract_diversity(g, classification, div, weight)?;
    let cls = g.value(classification).item();
    Ok((
        total,
        LossBreakdown {
            kind: LossKind::Combined,
            classification: cls,
            class_parts: vec![cls],
            lambda: None,
            weight,
            d_sp: item(g, d_sp),
            d_ch: item(g, d_ch),
            d_branch: None,
            total: g.value(total).item(),
        },
    ))
}

/// Sum of the per-branch losses minus `weight·(d_ch + d_sp)`.
pub fn esr_loss(
    g: &mut Graph,
    branch_losses: &[Var],
    d_ch: Option<Var>,
    d_sp: Option<Var>,
    weight: f64,
) -> Result<(Var, LossBreakdown)> {
    check_weight(weight)?;
    let parts: Vec<Option<Var>> = branch_losses.iter().copied().map(Some).collect();
    let cls = fold_vars(g, &parts)?.ok_or_else(|| Error::invalid("esr_loss", "no branch losses"))?;
    let div = fold_vars(g, &[d_ch, d_sp])?;
    let total = subtract_diversity(g, cls, div, weight)?;
    Ok((
        total,
        LossBreakdown {
            kind: LossKind::Ensemble,
            classification: g.value(cls).item(),
            class_parts: branch_losses.iter().map(|&v| g.value(v).item()).collect(),
            lambda: None,
            weight,
            d_sp: item(g, d_sp),
            d_ch: item(g, d_ch),
            d_branch: None,
            total: g.value(total).item(),
        },
    ))
}

/// `λ·l_local + (1−λ)·l_global − weight·(d_b + (d_sp + d_ch))`.
#[allow(clippy::too_many_arguments)]
pub fn manet_loss(
    g: &mut Graph,
    l_local: Var,
    l_global: Var,
    d_b: Option<Var>,
    d_sp: Option<Var>,
    d_ch: Option<Var>,
    lambda: f64,
    weight: f64,
) -> Result<(Var, LossBreakdown)> {
    check_weight(weight)?;
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid("manet_loss", format!("lambda {lambda} outside [0, 1]")));
    }
    let a = g.scale(l_local, lambda)?;
    let b = g.scale(l_global, 1.0 - lambda)?;
    let cls = g.add(a, b)?;
    let patch = fold_vars(g, &[d_sp, d_ch])?;
    let div = fold_vars(g, &[d_b, patch])?;
    let total = subtract_diversity(g, cls, div, weight)?;
    Ok((
        total,
        LossBreakdown {
            kind: LossKind::DualBranch,
            classification: g.value(cls).item(),
            class_parts: vec![g.value(l_local).item(), g.value(l_global).item()],
            lambda: Some(lambda),
            weight,
            d_sp: item(g, d_sp),
            d_ch: item(g, d_ch),
            d_branch: item(g, d_b),
            total: g.value(total).item(),
        },
    ))
}
