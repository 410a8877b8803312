//! Subspace certificates: mode classification, rate and coupling
//! conditions, tightest constants, dwell/leave bounds and decay constants.
//!
//! Rates are expressed as `b = λ_max(P̃Ã₁₁ + Ã₁₁ᵀP̃, 2P̃)`, the weighted log
//! seminorm. The stable condition with constant `η_S` is `b ≤ −η_S`, the
//! unstable one with `η_U` is `b ≤ η_U`.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Mode, ModeId, ModelError, SampleSet, SwitchedSystem};
use crate::numerics::{gen_sym_eig_max, psd_check, sym_eig, Matrix, NumericsError};
use crate::subspaces::{
    argmax, log_seminorm, projector, reduce, reduced_lyapunov, Projector, Subspace, SubspaceError,
    WeightedSeminorm,
};

/// Samples on which the full-space form of each rate condition is re-evaluated.
pub const FULL_SPACE_SAMPLES: usize = 10;

#[derive(Debug, Error)]
pub enum CertError {
    #[error("empty sample set")]
    EmptySamples,
    #[error("weights live on different subspaces (‖Π_from − Π_to‖_F = {0:.3e})")]
    KernelMismatch(f64),
    #[error("η must be positive, got {0}")]
    NonPositiveEta(f64),
    #[error("certificate '{subspace}' lacks constant {name}")]
    MissingConstant { subspace: String, name: &'static str },
    #[error("mode {0} carries no tag in any certificate")]
    UntaggedMode(ModeId),
    #[error("no weight for mode {0}")]
    MissingWeight(ModeId),
    #[error("dwell bounds violated: governing {term} term is {value:.6} (must be negative)")]
    BoundsViolated { term: &'static str, value: f64 },
    #[error("scalar weights infeasible: {0}")]
    ScalarInfeasible(String),
    #[error(transparent)]
    Subspace(#[from] SubspaceError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Tag {
    S,
    U,
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Tag::S => "S",
            Tag::U => "U",
        })
    }
}

#[derive(Debug, Clone)]
pub struct Classification {
    pub tag: Tag,
    pub sup_rate: f64,
    pub worst_index: usize,
}

fn relative_slack(bound: f64, tol: f64) -> f64 {
    tol * bound.abs().max(1.0)
}

/// Log seminorm of `A_q(x)` at every sample, in sample order.
pub fn mode_rates(mode: &Mode, w: &WeightedSeminorm, samples: &SampleSet) -> Result<Vec<f64>, CertError> {
    if samples.is_empty() {
        return Err(CertError::EmptySamples);
    }
    samples
        .points
        .par_iter()
        .map(|x| Ok(log_seminorm(w, &mode.eval_jacobian(x)?)?))
        .collect()
}

/// Tag S iff the sampled sup of the log seminorm is negative.
pub fn classify_mode(mode: &Mode, w: &WeightedSeminorm, samples: &SampleSet) -> Result<Classification, CertError> {
    let rates = mode_rates(mode, w, samples)?;
    let (worst_index, sup_rate) = argmax(&rates);
    Ok(Classification {
        tag: if sup_rate < 0.0 { Tag::S } else { Tag::U },
        sup_rate,
        worst_index,
    })
}

/// Sampled sup of the rate; `−value` is the best η_S when negative,
/// `+value` the best η_U otherwise.
pub fn tightest_eta(mode: &Mode, w: &WeightedSeminorm, samples: &SampleSet) -> Result<f64, CertError> {
    Ok(classify_mode(mode, w, samples)?.sup_rate)
}

/// Full-space rate condition `PAΠ + ΠAᵀP ⪯ ∓2ηP`.
pub fn full_rate_condition(p: &Matrix, pi: &Matrix, a: &Matrix, eta: f64, stable: bool, tol: f64) -> Result<bool, CertError> {
    let pap = &(p * a) * pi;
    let lhs = &pap + &pap.transpose();
    let bound = p.scale(if stable { -2.0 * eta } else { 2.0 * eta });
    Ok(psd_check(&(&bound - &lhs).symmetrize(), tol)?)
}

/// Reduced rate condition `P̃Ã₁₁ + Ã₁₁ᵀP̃ ⪯ ∓2ηP̃`.
pub fn reduced_rate_condition(w: &WeightedSeminorm, a: &Matrix, eta: f64, stable: bool, tol: f64) -> Result<bool, CertError> {
    let lhs = reduced_lyapunov(w, a);
    let bound = w.reduced.scale(if stable { -2.0 * eta } else { 2.0 * eta });
    Ok(psd_check(&(&bound - &lhs).symmetrize(), tol)?)
}

#[derive(Debug, Clone, Serialize)]
pub struct RateVerdict {
    pub pass: bool,
    pub stable: bool,
    pub eta: f64,
    /// Sampled sup of the rate.
    pub value: f64,
    /// `−η` (stable) or `+η` (unstable).
    pub bound: f64,
    /// `bound − value`; nonnegative when the condition holds.
    pub margin: f64,
    pub tolerance: f64,
    pub worst_sample: Vec<f64>,
    pub full_space_checked: usize,
    pub full_space_disagreements: usize,
}

pub fn check_rate(
    mode: &Mode,
    w: &WeightedSeminorm,
    pi: &Projector,
    eta: f64,
    stable: bool,
    samples: &SampleSet,
    tol: f64,
) -> Result<RateVerdict, CertError> {
    if !(eta > 0.0) {
        return Err(CertError::NonPositiveEta(eta));
    }
    let rates = mode_rates(mode, w, samples)?;
    let (worst, value) = argmax(&rates);
    let bound = if stable { -eta } else { eta };

    let mut rng = ChaCha8Rng::seed_from_u64(samples.scheme.seed ^ 0x5eed);
    let k = FULL_SPACE_SAMPLES.min(samples.len());
    let mut picks = sample_indices(&mut rng, samples.len(), k).into_vec();
    picks.sort_unstable();
    let mut disagreements = 0;
    for i in picks {
        let a = mode.eval_jacobian(&samples.points[i])?;
        let full = full_rate_condition(&w.weight, &pi.matrix, &a, eta, stable, tol)?;
        let reduced = reduced_rate_condition(w, &a, eta, stable, tol)?;
        if full != reduced {
            disagreements += 1;
        }
    }
    Ok(RateVerdict {
        pass: value <= bound + relative_slack(bound, tol) && disagreements == 0,
        stable,
        eta,
        value,
        bound,
        margin: bound - value,
        tolerance: tol,
        worst_sample: samples.points[worst].clone(),
        full_space_checked: k,
        full_space_disagreements: disagreements,
    })
}

fn same_subspace(from: &WeightedSeminorm, to: &WeightedSeminorm) -> Result<(), CertError> {
    let a = projector(&from.subspace).matrix;
    let b = projector(&to.subspace).matrix;
    let diff = (&a - &b).frobenius_norm();
    if diff > 1e-9 {
        return Err(CertError::KernelMismatch(diff));
    }
    Ok(())
}

/// Smallest β with `P̃_to ⪯ β P̃_from`.
///
/// Both blocks are taken in the basis of `from` so that sign or rotation
/// differences between the stored bases cannot leak in.
pub fn tightest_beta(from: &WeightedSeminorm, to: &WeightedSeminorm) -> Result<f64, CertError> {
    same_subspace(from, to)?;
    let to_in_from = from.subspace.basis.congruence(&to.weight).symmetrize();
    Ok(gen_sym_eig_max(&to_in_from, &from.reduced)?)
}

#[derive(Debug, Clone, Serialize)]
pub struct CouplingVerdict {
    pub pass: bool,
    pub beta: f64,
    pub tightest: f64,
    pub margin: f64,
    pub tolerance: f64,
}

pub fn check_switch_coupling(
    from: &WeightedSeminorm,
    to: &WeightedSeminorm,
    beta: f64,
    tol: f64,
) -> Result<CouplingVerdict, CertError> {
    same_subspace(from, to)?;
    let to_in_from = from.subspace.basis.congruence(&to.weight).symmetrize();
    let gap = &from.reduced.scale(beta) - &to_in_from;
    let tightest = gen_sym_eig_max(&to_in_from, &from.reduced)?;
    Ok(CouplingVerdict {
        pass: psd_check(&gap.symmetrize(), tol)?,
        beta,
        tightest,
        margin: beta - tightest,
        tolerance: tol,
    })
}

/// `(λ_min(P̃), λ_max(P̃))`, the tightest `m̲Π ⪯ P ⪯ m̄Π`.
pub fn tightest_m_bounds(w: &WeightedSeminorm) -> Result<(f64, f64), CertError> {
    let e = sym_eig(&w.reduced)?;
    Ok((e.min(), e.max()))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    pub beta_s: Option<f64>,
    pub beta_u: Option<f64>,
    pub eta_s: Option<f64>,
    pub eta_u: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SubspaceCertificate {
    pub name: String,
    pub subspace: Subspace,
    pub weights: BTreeMap<ModeId, WeightedSeminorm>,
    pub tags: BTreeMap<ModeId, Tag>,
    pub constants: Constants,
    pub m_lower: f64,
    pub m_upper: f64,
}

impl SubspaceCertificate {
    pub fn modes_with(&self, tag: Tag) -> Vec<ModeId> {
        self.tags.iter().filter(|(_, t)| **t == tag).map(|(q, _)| *q).collect()
    }

    fn require(&self, value: Option<f64>, name: &'static str) -> Result<f64, CertError> {
        value.ok_or(CertError::MissingConstant {
            subspace: self.name.clone(),
            name,
        })
    }

    pub fn beta_s(&self) -> Result<f64, CertError> {
        self.require(self.constants.beta_s, "beta_S")
    }
    pub fn beta_u(&self) -> Result<f64, CertError> {
        self.require(self.constants.beta_u, "beta_U")
    }
    pub fn eta_s(&self) -> Result<f64, CertError> {
        self.require(self.constants.eta_s, "eta_S")
    }
    pub fn eta_u(&self) -> Result<f64, CertError> {
        self.require(self.constants.eta_u, "eta_U")
    }

    pub fn weight(&self, q: ModeId) -> Result<&WeightedSeminorm, CertError> {
        self.weights.get(&q).ok_or(CertError::MissingWeight(q))
    }
}

/// Tightest constants of a set of weights, before any margin.
#[derive(Debug, Clone)]
pub struct Extraction {
    pub classifications: BTreeMap<ModeId, Classification>,
    pub beta_s: Option<f64>,
    pub beta_u: Option<f64>,
    /// Best η_S: `−max_{q∈S} sup rate`.
    pub eta_s: Option<f64>,
    /// Best η_U: `max_{q∈U} sup rate`.
    pub eta_u: Option<f64>,
    pub m_lower: f64,
    pub m_upper: f64,
}

fn fold_max(acc: Option<f64>, v: f64) -> Option<f64> {
    Some(acc.map_or(v, |a| a.max(v)))
}

pub fn extract(
    sys: &SwitchedSystem,
    weights: &BTreeMap<ModeId, WeightedSeminorm>,
    samples: &SampleSet,
) -> Result<Extraction, CertError> {
    let mut classifications = BTreeMap::new();
    for mode in &sys.modes {
        let w = weights.get(&mode.id).ok_or(CertError::MissingWeight(mode.id))?;
        classifications.insert(mode.id, classify_mode(mode, w, samples)?);
    }
    let (mut beta_s, mut beta_u, mut eta_s, mut eta_u) = (None, None, None, None);
    for (q, c) in &classifications {
        match c.tag {
            Tag::S => eta_s = fold_max(eta_s, c.sup_rate),
            Tag::U => eta_u = fold_max(eta_u, c.sup_rate),
        }
        for r in classifications.keys().filter(|r| *r != q) {
            let b = tightest_beta(&weights[q], &weights[r])?;
            match c.tag {
                Tag::S => beta_s = fold_max(beta_s, b),
                Tag::U => beta_u = fold_max(beta_u, b),
            }
        }
    }
    let mut m_lower = f64::INFINITY;
    let mut m_upper = f64::NEG_INFINITY;
    for w in weights.values() {
        let (lo, hi) = tightest_m_bounds(w)?;
        m_lower = m_lower.min(lo);
        m_upper = m_upper.max(hi);
    }
    Ok(Extraction {
        classifications,
        beta_s,
        beta_u,
        eta_s: eta_s.map(|v| -v),
        eta_u,
        m_lower,
        m_upper,
    })
}

impl Extraction {
    /// Constants inflated conservatively by `margin`: β and η_U grow by
    /// `(1+margin)`, η_S shrinks by `(1−margin)`.
    pub fn with_margin(&self, margin: f64) -> Constants {
        Constants {
            beta_s: self.beta_s.map(|b| b * (1.0 + margin)),
            beta_u: self.beta_u.map(|b| b * (1.0 + margin)),
            eta_s: self.eta_s.map(|e| e * (1.0 - margin)),
            eta_u: self.eta_u.map(|e| e * (1.0 + margin)),
        }
    }
}

/// Every condition of a certificate on the given samples.
#[derive(Debug, Clone)]
pub struct CertificateChecks {
    pub coupling: Vec<(ModeId, ModeId, CouplingVerdict)>,
    pub rates: Vec<(ModeId, RateVerdict)>,
    pub constants_valid: bool,
}

impl CertificateChecks {
    pub fn all_pass(&self) -> bool {
        self.constants_valid && self.coupling.iter().all(|c| c.2.pass) && self.rates.iter().all(|r| r.1.pass)
    }
}

pub fn verify_certificate(
    sys: &SwitchedSystem,
    cert: &SubspaceCertificate,
    samples: &SampleSet,
    tol: f64,
) -> Result<CertificateChecks, CertError> {
    let pi = projector(&cert.subspace);
    let mut coupling = Vec::new();
    let mut rates = Vec::new();
    let mut constants_valid = cert.m_lower > 0.0 && cert.m_lower <= cert.m_upper;
    for (q, tag) in &cert.tags {
        let mode = sys.mode(*q).ok_or(CertError::MissingWeight(*q))?;
        let (beta, eta, stable) = match tag {
            Tag::S => (cert.beta_s()?, cert.eta_s()?, true),
            Tag::U => (cert.beta_u()?, cert.eta_u()?, false),
        };
        constants_valid &= match tag {
            Tag::S => beta >= 1.0,
            Tag::U => beta > 0.0 && beta < 1.0,
        } && eta > 0.0;
        for r in cert.tags.keys().filter(|r| *r != q) {
            coupling.push((*q, *r, check_switch_coupling(cert.weight(*q)?, cert.weight(*r)?, beta, tol)?));
        }
        rates.push((*q, check_rate(mode, cert.weight(*q)?, &pi, eta, stable, samples, tol)?));
    }
    Ok(CertificateChecks {
        coupling,
        rates,
        constants_valid,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeBounds {
    /// MDADT lower bound τ̲ (S-tagged somewhere).
    pub lower: Option<f64>,
    /// MDALT upper bound τ̄ (U-tagged somewhere).
    pub upper: Option<f64>,
}

impl ModeBounds {
    /// Per-activation admissibility of a length.
    pub fn admits(&self, len: f64, inclusive: bool) -> (bool, bool) {
        let lo = self.lower.map_or(true, |t| if inclusive { len >= t } else { len > t });
        let hi = self.upper.map_or(true, |t| if inclusive { len <= t } else { len < t });
        (lo, hi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DwellBounds {
    pub per_mode: BTreeMap<ModeId, ModeBounds>,
    /// Closed inequalities (`≥`, `≤`) are safe when the constants carry a
    /// positive margin; otherwise the bounds are open (`>`, `<`).
    pub inclusive: bool,
    pub provenance: String,
}

impl DwellBounds {
    pub fn get(&self, q: ModeId) -> Option<&ModeBounds> {
        self.per_mode.get(&q)
    }
}

fn positive_eta(eta: f64) -> Result<f64, CertError> {
    if eta > 0.0 {
        Ok(eta)
    } else {
        Err(CertError::NonPositiveEta(eta))
    }
}

/// `τ̲ = ln β_S / (2η_S)` for S modes, `τ̄ = −ln β_U / (2η_U)` for U modes.
pub fn dwell_bounds_subspace(cert: &SubspaceCertificate, inclusive: bool) -> Result<DwellBounds, CertError> {
    dwell_bounds_family(std::slice::from_ref(cert), inclusive).map(|mut b| {
        b.provenance = format!("subspace {}", cert.name);
        b
    })
}

/// Per-tag aggregation over a family: for each mode, the lower bound uses
/// the subspaces where it is S, the upper bound those where it is U.
pub fn dwell_bounds_family(certs: &[SubspaceCertificate], inclusive: bool) -> Result<DwellBounds, CertError> {
    let mut modes: Vec<ModeId> = certs.iter().flat_map(|c| c.tags.keys().copied()).collect();
    modes.sort_unstable();
    modes.dedup();
    let mut per_mode = BTreeMap::new();
    for q in modes {
        let mut s_beta = f64::NEG_INFINITY;
        let mut s_eta = f64::INFINITY;
        let mut u_beta = f64::NEG_INFINITY;
        let mut u_eta = f64::INFINITY;
        let (mut has_s, mut has_u) = (false, false);
        for c in certs {
            match c.tags.get(&q) {
                Some(Tag::S) => {
                    has_s = true;
                    s_beta = s_beta.max(c.beta_s()?.ln());
                    s_eta = s_eta.min(positive_eta(c.eta_s()?)?);
                }
                Some(Tag::U) => {
                    has_u = true;
                    u_beta = u_beta.max(c.beta_u()?.ln());
                    u_eta = u_eta.min(positive_eta(c.eta_u()?)?);
                }
                None => {}
            }
        }
        if !has_s && !has_u {
            return Err(CertError::UntaggedMode(q));
        }
        per_mode.insert(
            q,
            ModeBounds {
                lower: has_s.then(|| s_beta / (2.0 * s_eta)),
                upper: has_u.then(|| -u_beta / (2.0 * u_eta)),
            },
        );
    }
    Ok(DwellBounds {
        per_mode,
        inclusive,
        provenance: if certs.len() == 1 {
            format!("subspace {}", certs[0].name)
        } else {
            "family, example-consistent interpretation (per-tag aggregation)".into()
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayConstants {
    /// Exponential rate of the weighted quadratic `V`.
    pub lambda: f64,
    pub c: f64,
    /// Norm prefactor `√(c·m̄/m̲)`.
    pub k: f64,
    /// Rate of the seminorm itself, `λ/2`.
    pub norm_rate: f64,
}

/// Signal parameters entering the decay constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SignalParams {
    pub tau_lower: f64,
    pub tau_upper: f64,
    pub n_lower: f64,
    pub n_upper: f64,
}

// `ln β / τ`, taken as 0 when `β = 1` whatever the dwell.
fn ratio(log_beta: f64, tau: f64) -> f64 {
    if log_beta == 0.0 {
        0.0
    } else {
        log_beta / tau
    }
}

pub fn decay_constants(cert: &SubspaceCertificate, p: SignalParams) -> Result<DecayConstants, CertError> {
    let n_s = cert.modes_with(Tag::S).len() as f64;
    let n_u = cert.modes_with(Tag::U).len() as f64;
    let mut lambda = f64::INFINITY;
    let mut log_c = 0.0;
    if n_s > 0.0 {
        let (b, e) = (cert.beta_s()?.ln(), positive_eta(cert.eta_s()?)?);
        let term = -2.0 * e + ratio(b, p.tau_lower);
        if !(term < 0.0) {
            return Err(CertError::BoundsViolated { term: "stable", value: term });
        }
        lambda = lambda.min(term.abs());
        log_c += n_s * p.n_lower * b;
    }
    if n_u > 0.0 {
        let (b, e) = (cert.beta_u()?.ln(), positive_eta(cert.eta_u()?)?);
        let term = 2.0 * e + ratio(b, p.tau_upper);
        if !(term < 0.0) {
            return Err(CertError::BoundsViolated { term: "unstable", value: term });
        }
        lambda = lambda.min(term.abs());
        log_c += n_u * p.n_upper * b;
    }
    let c = log_c.exp();
    let k = (c * cert.m_upper / cert.m_lower).sqrt();
    Ok(DecayConstants {
        lambda,
        c,
        k,
        norm_rate: lambda / 2.0,
    })
}

#[derive(Debug, Clone)]
pub struct ScalarSearch {
    pub certificate: SubspaceCertificate,
    /// `p_q` with `P_q = p_q Π`; the anchor S mode has weight 1.
    pub scalars: BTreeMap<ModeId, f64>,
    pub extraction: Extraction,
    pub beta_u_target: f64,
}

/// Searches `P_q = p_q Π` over positive scalars.
///
/// Every switch `q → r` demands `ln p_r − ln p_q ≤ ln β_{tag(q)}`. With
/// `ln β_U` fixed by `beta_u_target`, the smallest feasible `ln β_S` is the
/// one that removes every negative cycle; potentials then come from
/// Bellman–Ford shortest paths.
pub fn search_scalar_weights(
    sys: &SwitchedSystem,
    s: &Subspace,
    samples: &SampleSet,
    beta_u_target: f64,
    margin: f64,
) -> Result<ScalarSearch, CertError> {
    if !(beta_u_target > 0.0 && beta_u_target < 1.0) {
        return Err(CertError::ScalarInfeasible(format!(
            "target beta_U = {beta_u_target} is outside (0, 1)"
        )));
    }
    let unit = reduce(&projector(s).matrix, s)?;
    let mut tags = BTreeMap::new();
    for mode in &sys.modes {
        tags.insert(mode.id, classify_mode(mode, &unit, samples)?.tag);
    }
    let stable: Vec<ModeId> = tags.iter().filter(|(_, t)| **t == Tag::S).map(|(q, _)| *q).collect();
    let unstable = tags.len() - stable.len();
    let Some(&anchor) = stable.first() else {
        return Err(CertError::ScalarInfeasible("no S-mode on this subspace".into()));
    };
    if unstable >= 2 {
        return Err(CertError::ScalarInfeasible(format!(
            "{unstable} U-modes: a cycle through them needs a weight product below 1"
        )));
    }
    let u = beta_u_target.ln();
    // a cycle visiting the U-mode and any S-mode has weight s + u
    let s_log = if unstable == 1 { -u } else { 0.0 };

    let ids: Vec<ModeId> = tags.keys().copied().collect();
    let mut dist: BTreeMap<ModeId, f64> = ids.iter().map(|q| (*q, 0.0)).collect();
    for _ in 0..ids.len() {
        let mut changed = false;
        for q in &ids {
            let w = if tags[q] == Tag::S { s_log } else { u };
            for r in ids.iter().filter(|r| *r != q) {
                let cand = dist[q] + w;
                if cand < dist[r] - 1e-15 {
                    dist.insert(*r, cand);
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let shift = dist[&anchor];
    let scalars: BTreeMap<ModeId, f64> = dist.iter().map(|(q, d)| (*q, (d - shift).exp())).collect();
    let mut weights = BTreeMap::new();
    for (q, p) in &scalars {
        weights.insert(*q, reduce(&projector(s).matrix.scale(*p), s)?);
    }
    let extraction = extract(sys, &weights, samples)?;
    let certificate = SubspaceCertificate {
        name: "scalar-search".into(),
        subspace: s.clone(),
        tags: extraction.classifications.iter().map(|(q, c)| (*q, c.tag)).collect(),
        constants: extraction.with_margin(margin),
        m_lower: extraction.m_lower,
        m_upper: extraction.m_upper,
        weights,
    };
    Ok(ScalarSearch {
        certificate,
        scalars,
        extraction,
        beta_u_target,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundled;
    use crate::model::{sample_domain, Domain};
    use crate::subspaces::orthonormalize;
    use approx::assert_abs_diff_eq;

    const W1: f64 = 0.7081;
    const W2: f64 = 1.1389;

    fn span(v: &[f64]) -> Subspace {
        orthonormalize(&[v.to_vec()]).unwrap()
    }

    fn rank_one(s: &Subspace, c: f64) -> WeightedSeminorm {
        reduce(&projector(s).matrix.scale(2.0 * c), s).unwrap()
    }

    fn two_mode_certs() -> (SwitchedSystem, SampleSet, Vec<SubspaceCertificate>) {
        let sys = bundled::two_mode_system();
        let samples = sample_domain(&sys, 21, 0, 0).unwrap();
        let mut certs = Vec::new();
        for (name, dir, w) in [("a", [1.0, 1.0], [W1, W2]), ("d", [1.0, -1.0], [W2, W1])] {
            let s = span(&dir);
            let weights: BTreeMap<_, _> = [(1, rank_one(&s, w[0])), (2, rank_one(&s, w[1]))].into();
            let ex = extract(&sys, &weights, &samples).unwrap();
            let mut constants = ex.with_margin(0.0);
            constants.eta_s = Some(1.5);
            constants.eta_u = Some(0.6);
            certs.push(SubspaceCertificate {
                name: name.into(),
                subspace: s,
                tags: ex.classifications.iter().map(|(q, c)| (*q, c.tag)).collect(),
                weights,
                constants,
                m_lower: ex.m_lower,
                m_upper: ex.m_upper,
            });
        }
        (sys, samples, certs)
    }

    #[test]
    fn classification_examples() {
        let sys = bundled::two_mode_system();
        let samples = sample_domain(&sys, 21, 0, 0).unwrap();
        let a = span(&[1.0, 1.0]);
        let d = span(&[1.0, -1.0]);
        let m1 = &sys.modes[0];
        let c = classify_mode(m1, &rank_one(&a, W1), &samples).unwrap();
        assert_eq!(c.tag, Tag::S);
        assert!(c.sup_rate <= -1.98 && c.sup_rate > -2.0);
        let c = classify_mode(m1, &rank_one(&d, W2), &samples).unwrap();
        assert_eq!(c.tag, Tag::U);
        assert!(c.sup_rate <= 0.57 && c.sup_rate > 0.5);

        let neg = Mode::parse(1, &["-x1", "-x2"], 2).unwrap();
        let c = classify_mode(&neg, &rank_one(&d, 3.0), &samples).unwrap();
        assert_eq!(c.tag, Tag::S);
        assert_abs_diff_eq!(c.sup_rate, -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(tightest_eta(&neg, &rank_one(&a, 0.2), &samples).unwrap(), -1.0, epsilon = 1e-12);
    }

    #[test]
    fn rate_examples() {
        let sys = bundled::two_mode_system();
        let samples = sample_domain(&sys, 21, 0, 0).unwrap();
        let a = span(&[1.0, 1.0]);
        let d = span(&[1.0, -1.0]);
        let m1 = &sys.modes[0];
        let wa = rank_one(&a, W1);
        let v = check_rate(m1, &wa, &projector(&a), 1.5, true, &samples, 1e-9).unwrap();
        assert!(v.pass);
        assert_eq!(v.full_space_checked, FULL_SPACE_SAMPLES);
        assert_eq!(v.full_space_disagreements, 0);
        assert!(check_rate(m1, &wa, &projector(&a), 1.98, true, &samples, 1e-9).unwrap().pass);
        assert!(!check_rate(m1, &wa, &projector(&a), 2.0, true, &samples, 1e-9).unwrap().pass);
        let wd = rank_one(&d, W2);
        assert!(check_rate(m1, &wd, &projector(&d), 0.6, false, &samples, 1e-9).unwrap().pass);
        assert!(!check_rate(m1, &wd, &projector(&d), 0.5, false, &samples, 1e-9).unwrap().pass);

        let neg = Mode::parse(1, &["-x1", "-x2"], 2).unwrap();
        assert!(check_rate(&neg, &wa, &projector(&a), 0.5, true, &samples, 1e-9).unwrap().pass);
        assert!(matches!(
            check_rate(&neg, &wa, &projector(&a), 0.0, true, &samples, 1e-9),
            Err(CertError::NonPositiveEta(_))
        ));
    }

    #[test]
    fn coupling_examples() {
        let a = span(&[1.0, 1.0]);
        let (p1, p2) = (rank_one(&a, W1), rank_one(&a, W2));
        let v = check_switch_coupling(&p1, &p2, 1.6084, 1e-9).unwrap();
        assert!(v.pass);
        assert!(v.margin.abs() < 1e-4);
        // the printed 0.6217 is rounded below the exact ratio 0.621740
        let v = check_switch_coupling(&p2, &p1, 0.6217, 1e-9).unwrap();
        assert!(!v.pass);
        assert_abs_diff_eq!(v.margin, 0.6217 - W1 / W2, epsilon = 1e-12);
        assert!(check_switch_coupling(&p2, &p1, 0.62175, 1e-9).unwrap().pass);
        assert!(check_switch_coupling(&p1, &p1, 1.0, 1e-9).unwrap().pass);
        assert!(!check_switch_coupling(&p1, &p2, 1.5, 1e-9).unwrap().pass);
        assert_abs_diff_eq!(tightest_beta(&p1, &p2).unwrap(), 1.6084, epsilon = 1e-4);
        assert_abs_diff_eq!(tightest_beta(&p2, &p1).unwrap(), 0.6217, epsilon = 1e-4);
        assert_abs_diff_eq!(tightest_beta(&p1, &p1).unwrap(), 1.0, epsilon = 1e-14);

        let d = span(&[1.0, -1.0]);
        assert!(matches!(tightest_beta(&p1, &rank_one(&d, 1.0)), Err(CertError::KernelMismatch(_))));
        // a flipped basis sign describes the same subspace
        let flipped = span(&[-1.0, -1.0]);
        assert_abs_diff_eq!(tightest_beta(&p1, &rank_one(&flipped, W2)).unwrap(), W2 / W1, epsilon = 1e-12);
    }

    #[test]
    fn m_bound_examples() {
        let a = span(&[1.0, 1.0]);
        let (lo, hi) = tightest_m_bounds(&rank_one(&a, W1)).unwrap();
        assert_abs_diff_eq!(lo, 1.4162, epsilon = 1e-12);
        assert_abs_diff_eq!(hi, 1.4162, epsilon = 1e-12);
        let (lo, hi) = tightest_m_bounds(&reduce(&projector(&a).matrix, &a).unwrap()).unwrap();
        assert_abs_diff_eq!(lo, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(hi, 1.0, epsilon = 1e-12);
        let full = orthonormalize(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let (lo, hi) = tightest_m_bounds(&reduce(&Matrix::diag(&[1.0, 4.0]), &full).unwrap()).unwrap();
        assert_abs_diff_eq!(lo, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(hi, 4.0, epsilon = 1e-12);
    }

    #[test]
    fn dwell_bound_examples() {
        let (sys, samples, certs) = two_mode_certs();
        for c in &certs {
            assert!(verify_certificate(&sys, c, &samples, 1e-9).unwrap().all_pass());
            let b = dwell_bounds_subspace(c, false).unwrap();
            for q in [1, 2] {
                let mb = b.get(q).unwrap();
                assert_eq!(mb.lower.is_some(), c.tags[&q] == Tag::S);
                assert_eq!(mb.upper.is_some(), c.tags[&q] == Tag::U);
            }
        }
        let fam = dwell_bounds_family(&certs, false).unwrap();
        for q in [1, 2] {
            assert_abs_diff_eq!(fam.get(q).unwrap().lower.unwrap(), 0.1584, epsilon = 1e-4);
            assert_abs_diff_eq!(fam.get(q).unwrap().upper.unwrap(), 0.3960, epsilon = 1e-4);
        }
        let single = dwell_bounds_family(&certs[..1], false).unwrap();
        assert_eq!(single, dwell_bounds_subspace(&certs[0], false).unwrap());
        let doubled = dwell_bounds_family(&[certs[0].clone(), certs[0].clone()], false).unwrap();
        assert_eq!(doubled.per_mode, single.per_mode);

        let mut trivial = certs[0].clone();
        trivial.tags = [(1, Tag::S)].into();
        trivial.constants.beta_s = Some(std::f64::consts::E.powi(2));
        trivial.constants.eta_s = Some(1.0);
        assert_abs_diff_eq!(dwell_bounds_subspace(&trivial, false).unwrap().get(1).unwrap().lower.unwrap(), 1.0, epsilon = 1e-15);
        trivial.constants.eta_s = Some(0.0);
        assert!(matches!(dwell_bounds_subspace(&trivial, false), Err(CertError::NonPositiveEta(_))));
    }

    #[test]
    fn decay_examples() {
        let (_, _, certs) = two_mode_certs();
        let mut c = certs[0].clone();
        c.constants.beta_s = Some(1.6084);
        c.constants.beta_u = Some(0.6217);
        let p = SignalParams {
            tau_lower: 0.35,
            tau_upper: 0.35,
            n_lower: 1.0,
            n_upper: 1.0,
        };
        let d = decay_constants(&c, p).unwrap();
        let u_term = (1.2 + 0.6217f64.ln() / 0.35).abs();
        assert_abs_diff_eq!(d.lambda, u_term, epsilon = 1e-12);
        assert_abs_diff_eq!(d.lambda, 0.158, epsilon = 1e-3);
        assert_abs_diff_eq!(d.norm_rate, 0.079, epsilon = 1e-3);
        assert_abs_diff_eq!(d.c, 1.6084 * 0.6217, epsilon = 1e-12);
        assert!(d.k >= 1.0);

        let mut single = c.clone();
        single.tags = [(1, Tag::S)].into();
        single.constants.beta_s = Some(1.0);
        single.constants.eta_s = Some(1.0);
        single.m_upper = single.m_lower;
        let d = decay_constants(&single, SignalParams { tau_lower: f64::INFINITY, ..p }).unwrap();
        assert_abs_diff_eq!(d.lambda, 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d.k, 1.0, epsilon = 1e-15);

        let bad = SignalParams { tau_upper: 0.5, ..p };
        assert!(matches!(decay_constants(&c, bad), Err(CertError::BoundsViolated { term: "unstable", .. })));
    }

    #[test]
    fn decay_constants_vanish_at_the_bounds() {
        let (_, _, certs) = two_mode_certs();
        let c = &certs[0];
        let tl = c.beta_s().unwrap().ln() / (2.0 * c.eta_s().unwrap());
        let tu = -c.beta_u().unwrap().ln() / (2.0 * c.eta_u().unwrap());
        let mut prev_s = f64::INFINITY;
        let mut prev_u = f64::INFINITY;
        for eps in [1e-2, 1e-4] {
            let only_s = SignalParams {
                tau_lower: tl + eps,
                tau_upper: 0.2,
                n_lower: 1.0,
                n_upper: 0.0,
            };
            let ls = decay_constants(c, only_s).unwrap().lambda;
            let only_u = SignalParams {
                tau_lower: 5.0,
                tau_upper: tu - eps,
                ..only_s
            };
            let lu = decay_constants(c, only_u).unwrap().lambda;
            assert!(ls < prev_s && lu < prev_u);
            assert!(ls <= 2.0 * c.eta_s().unwrap() * eps / tl + 1e-12);
            assert!(lu <= 2.0 * c.eta_u().unwrap() * eps / (tu - eps) + 1e-12);
            prev_s = ls;
            prev_u = lu;
        }
    }

    #[test]
    fn scale_invariance() {
        let (sys, samples, certs) = two_mode_certs();
        let base = dwell_bounds_family(&certs, false).unwrap();
        for k in [0.1, 10.0] {
            let scaled: Vec<SubspaceCertificate> = certs
                .iter()
                .map(|c| {
                    let weights: BTreeMap<_, _> = c
                        .weights
                        .iter()
                        .map(|(q, w)| (*q, reduce(&w.weight.scale(k), &c.subspace).unwrap()))
                        .collect();
                    let ex = extract(&sys, &weights, &samples).unwrap();
                    let orig = extract(&sys, &c.weights, &samples).unwrap();
                    assert!((ex.beta_s.unwrap() - orig.beta_s.unwrap()).abs() < 1e-12);
                    assert!((ex.beta_u.unwrap() - orig.beta_u.unwrap()).abs() < 1e-12);
                    assert!((ex.eta_s.unwrap() - orig.eta_s.unwrap()).abs() < 1e-12);
                    assert!((ex.eta_u.unwrap() - orig.eta_u.unwrap()).abs() < 1e-12);
                    SubspaceCertificate {
                        weights,
                        constants: Constants {
                            beta_s: ex.beta_s,
                            beta_u: ex.beta_u,
                            ..c.constants
                        },
                        ..c.clone()
                    }
                })
                .collect();
            let b = dwell_bounds_family(&scaled, false).unwrap();
            for q in [1, 2] {
                let (x, y) = (b.get(q).unwrap(), base.get(q).unwrap());
                assert!((x.lower.unwrap() - y.lower.unwrap()).abs() < 1e-12);
                assert!((x.upper.unwrap() - y.upper.unwrap()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn more_samples_never_lower_the_sup() {
        let sys = bundled::two_mode_system();
        let a = span(&[1.0, -1.0]);
        let w = rank_one(&a, 1.0);
        let small = sample_domain(&sys, 5, 0, 3).unwrap();
        let mut big = small.clone();
        big.points.extend(sample_domain(&sys, 0, 400, 3).unwrap().points);
        for m in &sys.modes {
            assert!(tightest_eta(m, &w, &big).unwrap() >= tightest_eta(m, &w, &small).unwrap());
        }
    }

    #[test]
    fn scalar_search_examples() {
        let sys = bundled::two_mode_system();
        let samples = sample_domain(&sys, 21, 0, 0).unwrap();
        let a = span(&[1.0, 1.0]);
        let r = search_scalar_weights(&sys, &a, &samples, 0.6217, 1e-6).unwrap();
        assert_abs_diff_eq!(r.scalars[&1], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r.scalars[&2], W2 / W1, epsilon = 1e-3);
        assert_abs_diff_eq!(r.extraction.beta_s.unwrap(), 1.6084, epsilon = 1e-3);
        assert_abs_diff_eq!(r.extraction.beta_u.unwrap(), 0.6217, epsilon = 1e-9);
        assert!(verify_certificate(&sys, &r.certificate, &samples, 1e-9).unwrap().all_pass());

        let d = span(&[1.0, -1.0]);
        let r = search_scalar_weights(&sys, &d, &samples, 0.6217, 1e-6).unwrap();
        assert_eq!(r.certificate.tags[&2], Tag::S);
        assert_abs_diff_eq!(r.scalars[&1], W2 / W1, epsilon = 1e-3);

        let one = SwitchedSystem::new(
            1,
            vec![Mode::parse(1, &["-x1"], 1).unwrap()],
            Domain::new(vec![(-1.0, 1.0)]),
        )
        .unwrap();
        let line = span(&[1.0]);
        let s1 = sample_domain(&one, 5, 0, 0).unwrap();
        let r = search_scalar_weights(&one, &line, &s1, 0.5, 0.0).unwrap();
        assert_eq!(r.scalars[&1], 1.0);
        assert!(r.extraction.beta_s.is_none());

        let two_u = SwitchedSystem::new(
            1,
            vec![Mode::parse(1, &["x1"], 1).unwrap(), Mode::parse(2, &["2*x1"], 1).unwrap()],
            Domain::new(vec![(-1.0, 1.0)]),
        )
        .unwrap();
        assert!(matches!(
            search_scalar_weights(&two_u, &line, &s1, 0.5, 0.0),
            Err(CertError::ScalarInfeasible(_))
        ));
    }
}
