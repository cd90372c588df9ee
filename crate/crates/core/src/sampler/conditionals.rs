//! Closed-form pieces of the sampler's conditionals and acceptance ratios.

use statrs::distribution::{DiscreteCDF, Poisson};

use crate::error::{Error, Result};

/// Prior probability that document `d` uses a concept already used by
/// `m_minus_d` of the other documents: `m / D`.
pub fn ibp_shared_prior_prob(m_minus_d: u32, num_docs: usize) -> Result<f64> {
    if m_minus_d == 0 {
        return Err(Error::InvalidArgument(
            "concept is not shared by any other document; use a birth/death move".into(),
        ));
    }
    if m_minus_d as usize >= num_docs {
        return Err(Error::InvalidArgument(format!(
            "m = {m_minus_d} other documents out of D = {num_docs}"
        )));
    }
    Ok(m_minus_d as f64 / num_docs as f64)
}

fn poisson(mean: f64) -> Poisson {
    Poisson::new(mean).expect("Poisson mean must be positive")
}

/// Probability of proposing a birth when the document has `unique`
/// concepts of its own: `P(Poisson(α_ω/D) > unique)`, and 1 when `unique = 0`.
pub fn eta_birth_prob(unique: usize, alpha_omega: f64, num_docs: usize) -> f64 {
    if unique == 0 {
        return 1.0;
    }
    poisson(alpha_omega / num_docs as f64).sf(unique as u64)
}

/// `P(Poisson(mean) ≤ j)`, i.e. `1 − η(j)` for `j ≥ 1`.
fn death_choice_mass(j: usize, mean: f64) -> f64 {
    if j == 0 {
        return 0.0;
    }
    poisson(mean).cdf(j as u64)
}

/// Log MH ratio of the prior and proposal parts of a birth that takes the
/// document from `unique` to `unique + 1` own concepts:
///
/// `log[ μ (1 − η(J+1)) / ((J+1) η(J)) ]`, `μ = α_ω / D`.
///
/// The new concept's word set and prevalence are drawn from their priors, so
/// those densities cancel. Likelihood ratios are added by the caller.
pub fn birth_log_acceptance(unique: usize, alpha_omega: f64, num_docs: usize) -> f64 {
    let mean = alpha_omega / num_docs as f64;
    let j = unique as f64;
    mean.ln() + death_choice_mass(unique + 1, mean).ln() - (j + 1.0).ln()
        - eta_birth_prob(unique, alpha_omega, num_docs).ln()
}

/// Log MH ratio of the prior and proposal parts of a death that takes the
/// document from `unique ≥ 1` to `unique − 1` own concepts; the inverse of
/// [`birth_log_acceptance`] at `unique − 1`.
pub fn death_log_acceptance(unique: usize, alpha_omega: f64, num_docs: usize) -> f64 {
    assert!(unique >= 1, "death needs at least one unique concept");
    -birth_log_acceptance(unique - 1, alpha_omega, num_docs)
}

/// Collapsed prior probability that word `i` is switched on in this
/// document's copy of concept `j`: `(m_ji^(−d) + λ_i) / m_j`, where `m_j`
/// counts this document.
pub fn f_prior_prob(m_ji_minus_d: u32, m_j: u32, lambda: f64) -> Result<f64> {
    if m_j == 0 || m_ji_minus_d > m_j - 1 {
        return Err(Error::InvalidArgument(format!(
            "need m_j ≥ 1 and m_ji^(-d) ≤ m_j − 1, got m_ji^(-d) = {m_ji_minus_d}, m_j = {m_j}"
        )));
    }
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::InvalidArgument(format!("lambda {lambda} outside (0, 1)")));
    }
    Ok((m_ji_minus_d as f64 + lambda) / m_j as f64)
}
