//! Training objectives built on the autodiff graph.
//!
//! Every loss here is arranged for minimization: the negated ELBO, plus
//! `γ` times the mean latent consistency loss over augmented latents.

use rand::Rng;

use super::{Likelihood, VaeModel};
use crate::autodiff::{Gradients, Graph, NodeId, Tensor};
use crate::error::{LsboError, Result};
use crate::rng::standard_normals;

/// Components of one objective evaluation (all batch means).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossParts {
    pub total: f64,
    /// `recon + β·kl`
    pub elbo: f64,
    pub recon: f64,
    pub kl: f64,
    /// Mean LCL over the augmented latents, when the term is active.
    pub lcl_mean: Option<f64>,
}

/// Closed-form `KL(N(μ, diag σ²) ‖ N(0, I))`.
pub fn kl_diag_gaussian(mu: &[f64], sigma: &[f64]) -> f64 {
    0.5 * mu
        .iter()
        .zip(sigma)
        .map(|(m, s)| m * m + s * s - 2.0 * s.ln() - 1.0)
        .sum::<f64>()
}

/// Reusable graph for the (LCA-)VAE objective of one model architecture.
///
/// Inputs: `x` (batch×D), `eps` (batch×d) and, when the LCL term is built,
/// `zhat` (N*×d).
pub struct ObjectiveGraph {
    graph: Graph,
    loss: NodeId,
    elbo: NodeId,
    recon: NodeId,
    kl: NodeId,
    lcl: Option<NodeId>,
}

impl ObjectiveGraph {
    pub fn new(model: &VaeModel, beta: f64, gamma: f64, with_lcl: bool) -> Self {
        let d = model.latent_dim();
        let mut g = Graph::new();
        let x = g.input("x");
        let eps = g.input("eps");

        let enc = model.encoder().build(&mut g, x);
        let mu = g.slice(enc, 0, d);
        let logvar = g.slice(enc, d, 2 * d);
        let half = g.scale(logvar, 0.5);
        let sigma = g.exp(half);
        let noise = g.mul(sigma, eps);
        let z = g.add(mu, noise);
        let logits = model.decoder().build(&mut g, z);

        let per_pixel = match model.arch().likelihood {
            Likelihood::Bernoulli => {
                // softplus(l) − x·l is the cross-entropy of sigmoid(l) against x
                let sp = g.softplus(logits);
                let xl = g.mul(x, logits);
                g.sub(sp, xl)
            }
            Likelihood::Gaussian => {
                let mean = g.sigmoid(logits);
                let diff = g.sub(mean, x);
                let sq = g.square(diff);
                g.scale(sq, 0.5)
            }
        };
        let recon_rows = g.sum_rows(per_pixel);
        let recon = g.mean(recon_rows);

        let mu_sq = g.square(mu);
        let var = g.exp(logvar);
        let a = g.add(mu_sq, var);
        let b = g.sub(a, logvar);
        let kl_rows = g.sum_rows(b);
        let kl_mean = g.mean(kl_rows);
        let kl_half = g.scale(kl_mean, 0.5);
        let offset = g.constant(Tensor::scalar(-0.5 * d as f64));
        let kl = g.add(kl_half, offset);

        let weighted_kl = g.scale(kl, beta);
        let elbo = g.add(recon, weighted_kl);

        let (loss, lcl) = if with_lcl {
            let zhat = g.input("zhat");
            let dec = model.decoder().build(&mut g, zhat);
            let xt = g.sigmoid(dec);
            let enc2 = model.encoder().build(&mut g, xt);
            let mu2 = g.slice(enc2, 0, d);
            let diff = g.sub(zhat, mu2);
            let sq = g.square(diff);
            let rows = g.sum_rows(sq);
            let lcl = g.mean(rows);
            let weighted = g.scale(lcl, gamma);
            (g.add(elbo, weighted), Some(lcl))
        } else {
            (elbo, None)
        };

        ObjectiveGraph {
            graph: g,
            loss,
            elbo,
            recon,
            kl,
            lcl,
        }
    }

    pub fn has_lcl(&self) -> bool {
        self.lcl.is_some()
    }

    pub fn evaluate(
        &mut self,
        model: &VaeModel,
        x: &Tensor,
        eps: &Tensor,
        zhat: Option<&Tensor>,
    ) -> Result<LossParts> {
        if x.rows() == 0 {
            return Err(LsboError::invalid("batch must be nonempty"));
        }
        let mut inputs = vec![("x", x), ("eps", eps)];
        match (self.lcl.is_some(), zhat) {
            (true, Some(z)) => inputs.push(("zhat", z)),
            (true, None) => return Err(LsboError::MissingInput("zhat".into())),
            _ => {}
        }
        self.graph.forward(model.params(), &inputs)?;
        let get = |n: NodeId| self.graph.value(n).expect("evaluated").data()[0];
        let parts = LossParts {
            total: get(self.loss),
            elbo: get(self.elbo),
            recon: get(self.recon),
            kl: get(self.kl),
            lcl_mean: self.lcl.map(get),
        };
        if !parts.total.is_finite() {
            return Err(LsboError::NonFinite {
                op: "objective".into(),
            });
        }
        Ok(parts)
    }

    /// Gradients of the total loss from the most recent `evaluate`.
    pub fn gradients(&self, model: &VaeModel) -> Result<Gradients> {
        self.graph.backward(self.loss, model.params())
    }
}

/// Negated ELBO averaged over `batch` with one reparameterized sample per row.
pub fn elbo_loss<R: Rng + ?Sized>(
    model: &VaeModel,
    batch: &Tensor,
    beta: f64,
    rng: &mut R,
) -> Result<LossParts> {
    let eps = Tensor::matrix(
        batch.rows(),
        model.latent_dim(),
        standard_normals(rng, batch.rows() * model.latent_dim()),
    );
    ObjectiveGraph::new(model, beta, 0.0, false).evaluate(model, batch, &eps, None)
}

/// ELBO loss plus `γ` times the mean LCL of `zhat`. With `γ = 0` or no
/// augmented latents this is exactly [`elbo_loss`].
pub fn lca_objective<R: Rng + ?Sized>(
    model: &VaeModel,
    batch: &Tensor,
    zhat: &Tensor,
    beta: f64,
    gamma: f64,
    rng: &mut R,
) -> Result<LossParts> {
    if zhat.rows() > 0 && zhat.cols() != model.latent_dim() {
        return Err(LsboError::Shape {
            op: "lca_objective",
            detail: format!("ẑ has {} columns, latent dim is {}", zhat.cols(), model.latent_dim()),
        });
    }
    let eps = Tensor::matrix(
        batch.rows(),
        model.latent_dim(),
        standard_normals(rng, batch.rows() * model.latent_dim()),
    );
    let active = gamma > 0.0 && zhat.rows() > 0;
    ObjectiveGraph::new(model, beta, gamma, active).evaluate(
        model,
        batch,
        &eps,
        active.then_some(zhat),
    )
}
