//! Integral equality constraints `h_m[E] = ∫ φ_m(E(t), t) dt = C_m`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ControlField, TimeGrid};
use crate::numkit::trapezoid_product;

/// Floor on `|C_m|` when reporting relative drift.
pub const RELATIVE_FLOOR: f64 = 1e-30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ConstraintKind {
    /// `h[E] = ∫ η(t) E(t) dt`.
    AffineKernel { kernel: Vec<f64> },
    /// `h[E] = ∫ E(t)² dt`.
    Fluence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub label: String,
    pub kind: ConstraintKind,
    pub target: f64,
}

impl Constraint {
    pub fn affine(label: impl Into<String>, kernel: Vec<f64>, target: f64) -> Self {
        Self {
            label: label.into(),
            kind: ConstraintKind::AffineKernel { kernel },
            target,
        }
    }

    pub fn fluence(target: f64) -> Self {
        Self {
            label: "fluence".into(),
            kind: ConstraintKind::Fluence,
            target,
        }
    }

    /// `∫ E dt = 0`.
    pub fn zero_area(grid: &TimeGrid) -> Self {
        Self::affine("zero_area", vec![1.0; grid.n_points()], 0.0)
    }

    pub fn is_affine(&self) -> bool {
        matches!(self.kind, ConstraintKind::AffineKernel { .. })
    }

    fn check(&self, field: &ControlField) -> Result<()> {
        if let ConstraintKind::AffineKernel { kernel } = &self.kind {
            field
                .grid()
                .ensure_len(kernel.len(), &format!("kernel of '{}'", self.label))?;
        }
        Ok(())
    }
}

/// Evaluates `h[E]` with the trapezoid rule.
pub fn evaluate(c: &Constraint, field: &ControlField) -> Result<f64> {
    c.check(field)?;
    let e = field.samples();
    Ok(match &c.kind {
        ConstraintKind::AffineKernel { kernel } => trapezoid_product(kernel, e, field.grid().dt()),
        ConstraintKind::Fluence => trapezoid_product(e, e, field.grid().dt()),
    })
}

/// Functional derivative `δh/δE(t_k)`.
pub fn gradient(c: &Constraint, field: &ControlField) -> Result<Vec<f64>> {
    c.check(field)?;
    Ok(match &c.kind {
        ConstraintKind::AffineKernel { kernel } => kernel.clone(),
        ConstraintKind::Fluence => field.samples().iter().map(|e| 2.0 * e).collect(),
    })
}

/// Ordered constraints with unique labels.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Constraint>", into = "Vec<Constraint>")]
pub struct ConstraintSet {
    items: Vec<Constraint>,
}

impl TryFrom<Vec<Constraint>> for ConstraintSet {
    type Error = Error;

    fn try_from(items: Vec<Constraint>) -> Result<Self> {
        Self::new(items)
    }
}

impl From<ConstraintSet> for Vec<Constraint> {
    fn from(set: ConstraintSet) -> Self {
        set.items
    }
}

impl ConstraintSet {
    pub fn new(items: Vec<Constraint>) -> Result<Self> {
        for (i, c) in items.iter().enumerate() {
            if items[..i].iter().any(|o| o.label == c.label) {
                return Err(Error::InvalidParameter(format!(
                    "duplicate constraint label '{}'",
                    c.label
                )));
            }
        }
        Ok(Self { items })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Constraint> {
        self.items.iter()
    }

    pub fn get(&self, m: usize) -> Option<&Constraint> {
        self.items.get(m)
    }

    pub fn labels(&self) -> Vec<&str> {
        self.items.iter().map(|c| c.label.as_str()).collect()
    }

    pub fn evaluate_all(&self, field: &ControlField) -> Result<Vec<f64>> {
        self.items.iter().map(|c| evaluate(c, field)).collect()
    }

    pub fn gradients(&self, field: &ControlField) -> Result<Vec<Vec<f64>>> {
        self.items.iter().map(|c| gradient(c, field)).collect()
    }

    /// Whether every `|h_m − C_m| ≤ tol·max(|C_m|, 1)`.
    pub fn contains(&self, field: &ControlField, tol: f64) -> Result<bool> {
        Ok(violation(self, field)?
            .iter()
            .zip(&self.items)
            .all(|(d, c)| d.abs() <= tol * c.target.abs().max(1.0)))
    }
}

/// Signed drift `h_m[E] − C_m` for every constraint.
pub fn violation(set: &ConstraintSet, field: &ControlField) -> Result<Vec<f64>> {
    set.iter()
        .map(|c| evaluate(c, field).map(|h| h - c.target))
        .collect()
}

/// Drift divided by `max(|C_m|, 1e-30)`.
pub fn relative_violation(set: &ConstraintSet, field: &ControlField) -> Result<Vec<f64>> {
    Ok(violation(set, field)?
        .into_iter()
        .zip(set.iter())
        .map(|(d, c)| d / c.target.abs().max(RELATIVE_FLOOR))
        .collect())
}
