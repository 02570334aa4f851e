use super::params::VariationalParams;
use crate::error::{Error, Result};

/// `KL(q || p)` between two diagonal Gaussians of equal dimension.
pub fn kl_diag_gaussian(q: &VariationalParams, p: &VariationalParams) -> Result<f64> {
    check_len(q, p)?;
    Ok(kl_terms(q.means(), q.stds(), p.means(), p.stds()))
}

fn check_len(q: &VariationalParams, p: &VariationalParams) -> Result<()> {
    if q.len() != p.len() {
        return Err(Error::Shape(format!(
            "KL between distributions of dimension {} and {}",
            q.len(),
            p.len()
        )));
    }
    Ok(())
}

pub(crate) fn kl_terms(q_mu: &[f64], q_sd: &[f64], p_mu: &[f64], p_sd: &[f64]) -> f64 {
    q_mu.iter()
        .zip(q_sd)
        .zip(p_mu.iter().zip(p_sd))
        .map(|((&qm, &qs), (&pm, &ps))| {
            let d = qm - pm;
            (ps / qs).ln() + (qs * qs + d * d) / (2.0 * ps * ps) - 0.5
        })
        .sum()
}

/// KL value plus its gradient with respect to `q`'s means and stds.
pub(crate) fn kl_with_grad(q: &VariationalParams, p: &VariationalParams) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    check_len(q, p)?;
    let kl = kl_terms(q.means(), q.stds(), p.means(), p.stds());
    let (mut g_mu, mut g_sd) = (Vec::with_capacity(q.len()), Vec::with_capacity(q.len()));
    for ((&qm, &qs), (&pm, &ps)) in q.means().iter().zip(q.stds()).zip(p.means().iter().zip(p.stds())) {
        let inv_p2 = 1.0 / (ps * ps);
        g_mu.push((qm - pm) * inv_p2);
        g_sd.push(qs * inv_p2 - 1.0 / qs);
    }
    Ok((kl, g_mu, g_sd))
}
