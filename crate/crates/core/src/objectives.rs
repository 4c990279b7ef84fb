//! Adversarial, identity and cycle losses and their weighted totals.
//!
//! Every loss is defined once as a graph builder (`*_graph`); the value
//! functions evaluate the same builders on constant inputs.

use ndarray::{ArrayView, Dimension};
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Scalar, Var};
use crate::error::{ensure_valid, CaganError, Result};
use crate::networks::DiscriminatorField;

/// Weights of the identity and cycle terms in the generator objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub gamma_i: f64,
    pub gamma_c: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            gamma_i: 0.1,
            gamma_c: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("gamma_i", self.gamma_i), ("gamma_c", self.gamma_c)] {
            ensure_valid!(v.is_finite() && v >= 0.0, "{name} must be finite and non-negative, got {v}");
        }
        Ok(())
    }
}

/// Every loss term of one training step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    /// `-mean log D(x_i, y_i)`.
    pub d_real: f64,
    /// `-mean log(1 - D(generated, y_j))`.
    pub d_fake: f64,
    /// `-mean log(1 - D(x_i, y_j))`.
    pub d_mismatch: f64,
    /// `-mean log D(generated, y_j)`, the generator's adversarial term.
    pub g_adv: f64,
    pub l_id: f64,
    pub l_cyc: f64,
    pub g_total: f64,
    pub d_total: f64,
}

/// Loss terms before weighting.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossComponents {
    pub d_real: f64,
    pub d_fake: f64,
    pub d_mismatch: f64,
    pub g_adv: f64,
    pub l_id: f64,
    pub l_cyc: f64,
}

/// The discriminator objective and its three terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiscriminatorLoss<T> {
    pub total: T,
    pub real: T,
    pub fake: T,
    pub mismatch: T,
}

/// Graph handles of the discriminator objective.
#[derive(Clone, Copy, Debug)]
pub struct DiscriminatorLossVars {
    pub total: Var,
    pub real: Var,
    pub fake: Var,
    pub mismatch: Var,
}

/// Records `-[mean log real + mean log(1 - fake) + mean log(1 - mismatch)]`.
pub fn adversarial_loss_d_graph<T: Scalar>(g: &mut Graph<T>, real: Var, fake: Var, mismatch: Var) -> DiscriminatorLossVars {
    let real_term = g.neg_mean_log(real);
    let fake_term = g.neg_mean_log1m(fake);
    let mismatch_term = g.neg_mean_log1m(mismatch);
    let total = g.linear_combination(&[(real_term, T::one()), (fake_term, T::one()), (mismatch_term, T::one())]);
    DiscriminatorLossVars {
        total,
        real: real_term,
        fake: fake_term,
        mismatch: mismatch_term,
    }
}

/// Records the non-saturating generator term `-mean log fake`.
pub fn adversarial_loss_g_graph<T: Scalar>(g: &mut Graph<T>, fake: Var) -> Var {
    g.neg_mean_log(fake)
}

/// Records `mean |alpha|`.
pub fn identity_loss_graph<T: Scalar>(g: &mut Graph<T>, alpha: Var) -> Var {
    g.mean_abs(alpha)
}

/// Records `mean |x - x_double_swapped|`.
pub fn cycle_loss_graph<T: Scalar>(g: &mut Graph<T>, x: Var, x_double_swapped: Var) -> Var {
    g.mean_abs_diff(x, x_double_swapped)
}

/// Records `g_adv + gamma_i * l_id + gamma_c * l_cyc`.
pub fn generator_total_graph<T: Scalar>(g: &mut Graph<T>, g_adv: Var, l_id: Var, l_cyc: Var, weights: &LossWeights) -> Var {
    g.linear_combination(&[
        (g_adv, T::one()),
        (l_id, T::from_f64_lossy(weights.gamma_i)),
        (l_cyc, T::from_f64_lossy(weights.gamma_c)),
    ])
}

fn field_var<T: Scalar>(g: &mut Graph<T>, field: &DiscriminatorField<T>) -> Var {
    g.constant(field.scores().clone().into_dyn())
}

/// Discriminator objective over three score fields of one shape.
pub fn adversarial_loss_d<T: Scalar>(
    real: &DiscriminatorField<T>,
    fake: &DiscriminatorField<T>,
    mismatch: &DiscriminatorField<T>,
) -> Result<DiscriminatorLoss<T>> {
    ensure_valid!(
        real.shape() == fake.shape() && real.shape() == mismatch.shape(),
        "discriminator fields differ in shape: {:?}, {:?}, {:?}",
        real.shape(),
        fake.shape(),
        mismatch.shape()
    );
    let mut g = Graph::new();
    let (r, f, m) = (field_var(&mut g, real), field_var(&mut g, fake), field_var(&mut g, mismatch));
    let vars = adversarial_loss_d_graph(&mut g, r, f, m);
    Ok(DiscriminatorLoss {
        total: g.scalar(vars.total),
        real: g.scalar(vars.real),
        fake: g.scalar(vars.fake),
        mismatch: g.scalar(vars.mismatch),
    })
}

/// Non-saturating generator adversarial loss.
pub fn adversarial_loss_g<T: Scalar>(fake: &DiscriminatorField<T>) -> T {
    let mut g = Graph::new();
    let f = field_var(&mut g, fake);
    let loss = adversarial_loss_g_graph(&mut g, f);
    g.scalar(loss)
}

/// Mean absolute alpha over pixels and batch.
pub fn identity_loss<T: Scalar, D: Dimension>(alpha: ArrayView<T, D>) -> T {
    let mut g = Graph::new();
    let a = g.constant(alpha.to_owned().into_dyn());
    let loss = identity_loss_graph(&mut g, a);
    g.scalar(loss)
}

/// Mean absolute difference between an image batch and its double swap.
pub fn cycle_loss<T: Scalar, D: Dimension>(x: ArrayView<T, D>, x_double_swapped: ArrayView<T, D>) -> Result<T> {
    ensure_valid!(
        x.shape() == x_double_swapped.shape(),
        "cycle loss shape mismatch: {:?} vs {:?}",
        x.shape(),
        x_double_swapped.shape()
    );
    let mut g = Graph::new();
    let a = g.constant(x.to_owned().into_dyn());
    let b = g.constant(x_double_swapped.to_owned().into_dyn());
    let loss = cycle_loss_graph(&mut g, a, b);
    Ok(g.scalar(loss))
}

/// Combines the loss terms of `step` into a report, rejecting any
/// non-finite term by name.
pub fn total_losses(components: &LossComponents, weights: &LossWeights, step: u64) -> Result<LossReport> {
    weights.validate()?;
    let c = components;
    let report = LossReport {
        d_real: c.d_real,
        d_fake: c.d_fake,
        d_mismatch: c.d_mismatch,
        g_adv: c.g_adv,
        l_id: c.l_id,
        l_cyc: c.l_cyc,
        g_total: c.g_adv + weights.gamma_i * c.l_id + weights.gamma_c * c.l_cyc,
        d_total: c.d_real + c.d_fake + c.d_mismatch,
    };
    for (term, value) in report.terms() {
        if !value.is_finite() {
            return Err(CaganError::NonFinite {
                term: term.to_string(),
                step,
            });
        }
    }
    Ok(report)
}

impl LossReport {
    /// Named terms in a fixed order.
    pub fn terms(&self) -> [(&'static str, f64); 8] {
        [
            ("d_real", self.d_real),
            ("d_fake", self.d_fake),
            ("d_mismatch", self.d_mismatch),
            ("g_adv", self.g_adv),
            ("l_id", self.l_id),
            ("l_cyc", self.l_cyc),
            ("g_total", self.g_total),
            ("d_total", self.d_total),
        ]
    }
}
