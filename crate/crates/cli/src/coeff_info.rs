//! Printable certificate summary of a coefficient descriptor.

use std::fmt::Write;

use sdeconv_core::coeffs::{default_neighborhood_grid, estimate_c_beta_kappa};

use crate::descriptor::Descriptor;

pub fn coeff_info(descriptor: &Descriptor) -> anyhow::Result<String> {
    let (spec, cert) = descriptor.build_with_certificate()?;
    let estimate = estimate_c_beta_kappa(&spec.singular_set, spec.kappa, &default_neighborhood_grid())?;
    let mut s = String::new();
    writeln!(s, "name: {}", spec.name)?;
    writeln!(s, "beta: {}", spec.beta)?;
    writeln!(s, "kappa: {}", spec.kappa)?;
    writeln!(s, "sup_norm: {}", spec.sup_norm)?;
    writeln!(s, "holder_seminorm: {}", spec.holder_seminorm)?;
    writeln!(s, "holder_norm: {}", spec.holder_norm())?;
    writeln!(s, "range: [{}, {}]", spec.range.0, spec.range.1)?;
    writeln!(s, "singular_set: {}", spec.singular_set.summary())?;
    writeln!(s, "c_beta_kappa_bound: {}", spec.c_beta_kappa_bound)?;
    writeln!(s, "c_beta_kappa_estimate: {estimate}")?;
    match spec.l1_norm {
        Some(l1) => writeln!(s, "l1_norm: {l1}")?,
        None => writeln!(s, "l1_norm: not integrable")?,
    }
    match cert {
        Some(c) => {
            writeln!(s, "sigma_lower: {}", c.sigma_lower)?;
            writeln!(s, "sigma_upper: {}", c.sigma_upper)?;
            writeln!(s, "k_sigma: {}", c.k_sigma())?;
            match &c.f_sigma {
                Some(w) => writeln!(s, "monotone_witness: {} (sup {})", w.label, w.sup_norm)?,
                None => writeln!(s, "monotone_witness: none")?,
            }
        }
        None => writeln!(s, "elliptic: no")?,
    }
    Ok(s)
}
