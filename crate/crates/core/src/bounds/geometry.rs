//! Vector form of the small-ε capacity: `C_E = Θ(Φᵀs_ε)`.

use super::{constants, BoundsError, StateTerms};
use crate::fsmc::ChannelModel;
use crate::spatial::NetworkParams;
use std::f64::consts::PI;

#[derive(Debug, Clone, PartialEq)]
pub struct GeometricView {
    /// `ε s_k^{2/α}/(ν − πs_k^{2/α})`
    pub s_eps: Vec<f64>,
    pub phi: Vec<f64>,
    /// `Φᵀs_ε`
    pub inner: f64,
    /// `s_ε / uᵀs_ε`: the probability vector pointing along `s_ε`.
    pub phi_star: Vec<f64>,
    /// `s_εᵀs_ε / uᵀs_ε`
    pub optimal_inner: f64,
    /// Angle between `Φ` and `s_ε`.
    pub theta: f64,
    pub cos_theta: f64,
    pub norm_phi: f64,
    pub norm_s_eps: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn geometric_view(
    epsilon: f64,
    params: &NetworkParams,
    model: &ChannelModel,
) -> Result<GeometricView, BoundsError> {
    let consts = constants(params, model);
    let mut s_eps = Vec::with_capacity(model.num_states());
    for k in 0..model.num_states() {
        let t = StateTerms::new(k, params, model, &consts);
        t.check_geometry(consts.nu)?;
        s_eps.push(epsilon * t.s2a / (consts.nu - PI * t.s2a));
    }
    let phi = model.invariant().to_vec();
    let inner = dot(&phi, &s_eps);
    let total: f64 = s_eps.iter().sum();
    let phi_star: Vec<f64> = s_eps.iter().map(|x| x / total).collect();
    let norm_phi = dot(&phi, &phi).sqrt();
    let norm_s_eps = dot(&s_eps, &s_eps).sqrt();
    let cos_theta = (inner / (norm_phi * norm_s_eps)).clamp(-1.0, 1.0);
    Ok(GeometricView {
        optimal_inner: dot(&s_eps, &s_eps) / total,
        s_eps,
        phi,
        inner,
        phi_star,
        theta: cos_theta.acos(),
        cos_theta,
        norm_phi,
        norm_s_eps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::etc_bounds;

    fn short_link(phi: [f64; 2]) -> (NetworkParams, ChannelModel) {
        (
            NetworkParams::new(0.01, 5.0, 3.0, 2.0, 1.0, 0.1, 1.0).unwrap(),
            ChannelModel::from_invariant(vec![0.5, 2.0], phi.to_vec()).unwrap(),
        )
    }

    #[test]
    fn inner_product_identity() {
        for phi2 in [0.1, 0.5, 0.9] {
            let (p, m) = short_link([1.0 - phi2, phi2]);
            let g = geometric_view(0.1, &p, &m).unwrap();
            assert!((g.inner - g.norm_phi * g.norm_s_eps * g.theta.cos()).abs() < 1e-10);
            assert!((g.phi_star.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
    }

    fn cos(phi: &[f64], v: &[f64]) -> f64 {
        dot(phi, v) / (dot(phi, phi).sqrt() * dot(v, v).sqrt())
    }

    // ν depends on Φ, so s_ε is held at the reference Φ when Φ is varied

    #[test]
    fn optimal_vector_substitution() {
        let (p, m) = short_link([0.5, 0.5]);
        let g = geometric_view(0.1, &p, &m).unwrap();
        assert!((dot(&g.phi_star, &g.s_eps) - g.optimal_inner).abs() < 1e-15);
        assert!((cos(&g.phi_star, &g.s_eps) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn s_eps_above_diagonal() {
        let (p, m) = short_link([0.5, 0.5]);
        let g = geometric_view(0.1, &p, &m).unwrap();
        assert!(g.s_eps[1] > g.s_eps[0]);
    }

    #[test]
    fn phi_star_has_the_largest_cosine() {
        let (p, m) = short_link([0.5, 0.5]);
        let g = geometric_view(0.1, &p, &m).unwrap();
        let c_star = cos(&g.phi_star, &g.s_eps);
        for i in 0..=100 {
            let phi2 = i as f64 / 100.0;
            assert!(cos(&[1.0 - phi2, phi2], &g.s_eps) <= c_star + 1e-12);
        }
    }

    #[test]
    fn etc_upper_bound_is_scaled_inner_product() {
        for eps in [0.01, 0.1, 0.3] {
            let (p, m) = short_link([0.3, 0.7]);
            let g = geometric_view(eps, &p, &m).unwrap();
            let up = etc_bounds(eps, &p, &m).unwrap().lambda_upper.unwrap();
            assert!((up - (-(1.0 - eps).ln()) / eps * g.inner).abs() < 1e-10 * up.max(1.0));
        }
    }
}
