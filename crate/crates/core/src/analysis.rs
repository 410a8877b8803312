//! End-to-end certificate analysis producing a self-contained JSON report.
//!
//! invariance of each `V⊥` → classification → coupling and rate conditions
//! → constants → per-subspace and family bounds → decay constants.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::certificates::{
    decay_constants, dwell_bounds_family, dwell_bounds_subspace, extract, search_scalar_weights,
    verify_certificate, CertError, Constants, DecayConstants, DwellBounds, Extraction, ModeBounds,
    SignalParams, SubspaceCertificate, Tag,
};
use crate::config::{content_hash, CertificateConfig, ConfigError, SystemConfig};
use crate::model::{sample_domain, ModeId, ModelError, SampleScheme, SampleSet, SwitchedSystem};
use crate::numerics::{Matrix, DEFAULT_PSD_TOL};
use crate::subspaces::{
    check_invariance, check_separating, orthonormalize, projector, reduce, InvariantPart, Projector,
    SubspaceError,
};

pub const SCHEMA_VERSION: &str = "semicontract.report/1";
pub const DEFAULT_MARGIN: f64 = 1e-6;
/// Jump factor aimed for on switches out of U-modes when searching scalar
/// weights without a configured `beta_U`.
pub const DEFAULT_BETA_U_TARGET: f64 = 0.5;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("subspace '{name}': {source}")]
    Subspace { name: String, source: SubspaceError },
    #[error("certificate '{name}': {source}")]
    Certificate { name: String, source: CertError },
    #[error("subspace '{0}' has no certificate weights; give P matrices or use --search-weights")]
    MissingWeights(String),
    #[error("configuration defines no subspaces")]
    NoSubspaces,
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl AnalysisError {
    /// Errors caused by the input document rather than by the analysis.
    pub fn is_config_error(&self) -> bool {
        !matches!(self, AnalysisError::Certificate { source: CertError::Numerics(_), .. })
    }
}

/// One pass/fail check with the numbers behind it.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Verdict {
    pub check: String,
    pub pass: bool,
    pub value: f64,
    pub bound: f64,
    /// Signed distance to failure; negative when the check fails.
    pub margin: f64,
    pub tolerance: f64,
    pub evidence: String,
}

impl Verdict {
    /// `value ≤ bound` (with `tolerance` slack).
    pub fn at_most(check: impl Into<String>, value: f64, bound: f64, tolerance: f64, evidence: impl Into<String>) -> Self {
        Self {
            check: check.into(),
            pass: value <= bound + tolerance,
            value,
            bound,
            margin: bound - value,
            tolerance,
            evidence: evidence.into(),
        }
    }

    /// `value ≥ bound` (with `tolerance` slack).
    pub fn at_least(check: impl Into<String>, value: f64, bound: f64, tolerance: f64, evidence: impl Into<String>) -> Self {
        Self {
            check: check.into(),
            pass: value >= bound - tolerance,
            value,
            bound,
            margin: value - bound,
            tolerance,
            evidence: evidence.into(),
        }
    }

    /// `|value − target| ≤ tolerance`.
    pub fn near(check: impl Into<String>, value: f64, target: f64, tolerance: f64, evidence: impl Into<String>) -> Self {
        let dev = (value - target).abs();
        Self {
            check: check.into(),
            pass: dev <= tolerance,
            value,
            bound: target,
            margin: tolerance - dev,
            tolerance,
            evidence: evidence.into(),
        }
    }

    pub fn with_pass(mut self, pass: bool) -> Self {
        self.pass = self.pass && pass;
        self
    }
}

#[derive(Debug, Clone)]
pub struct AnalysisOptions {
    pub grid: Option<usize>,
    pub random_samples: Option<usize>,
    pub seed: u64,
    pub tol: f64,
    /// Multiplicative safety margin on extracted constants; 0 means strict.
    pub margin: f64,
    pub search_weights: bool,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            grid: None,
            random_samples: None,
            seed: 0,
            tol: DEFAULT_PSD_TOL,
            margin: DEFAULT_MARGIN,
            search_weights: false,
        }
    }
}

impl AnalysisOptions {
    pub fn scheme(&self, n: usize) -> SampleScheme {
        let mut s = SampleScheme::default_for(n, self.seed);
        if let Some(g) = self.grid {
            s.grid_per_axis = g;
        }
        if let Some(r) = self.random_samples {
            s.random_count = r;
        }
        s
    }

    pub fn inclusive(&self) -> bool {
        self.margin > 0.0
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub config_sha256: String,
    pub seed: u64,
    pub tolerance: f64,
    pub margin: f64,
    pub strict: bool,
    pub search_weights: bool,
    pub sample_scheme: SampleScheme,
    pub sample_points: usize,
    pub evidence: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ModeClassReport {
    pub mode: ModeId,
    pub tag: Tag,
    pub sup_rate: f64,
    pub worst_sample: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConstantEntry {
    pub value: f64,
    pub source: String,
    /// Raw tightest value on the samples, before any margin.
    pub tightest: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundEntry {
    pub mode: ModeId,
    pub tau_lower: Option<f64>,
    pub tau_upper: Option<f64>,
    pub relation: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct WeightEntry {
    pub mode: ModeId,
    pub reduced: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scalar: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SubspaceSection {
    pub name: String,
    pub dimension: usize,
    pub basis: Vec<Vec<f64>>,
    pub projector: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub printed_projector_matches: Option<bool>,
    pub invariance: Vec<Verdict>,
    pub classification: Vec<ModeClassReport>,
    pub weights: Vec<WeightEntry>,
    pub constants: BTreeMap<String, ConstantEntry>,
    pub m_lower: f64,
    pub m_upper: f64,
    pub conditions: Vec<Verdict>,
    pub dwell_bounds: Vec<BoundEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decay: Option<DecayEntry>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DecayEntry {
    pub params: SignalParams,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub constants: Option<DecayConstants>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FamilySection {
    pub separating: Verdict,
    pub interpretation: String,
    pub inclusive: bool,
    pub bounds: Vec<BoundEntry>,
    /// `min_i λ_i / 2` over subspaces with decay constants.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub norm_rate: Option<f64>,
}

/// Summary of one simulated experiment, attached by `simulate`/`reproduce`.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentSummary {
    pub name: String,
    pub signal: String,
    pub events: usize,
    pub switches: usize,
    pub step: f64,
    pub initial_distance: f64,
    pub terminal_distance: f64,
    pub relative_terminal_distance: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit: Option<crate::sim::RateFit>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub certified_norm_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diverged_at: Option<f64>,
    pub verdicts: Vec<Verdict>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalysisReport {
    pub schema_version: String,
    pub tool: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
    pub provenance: Provenance,
    pub subspaces: Vec<SubspaceSection>,
    pub family: FamilySection,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub simulation: Vec<ExperimentSummary>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub checks: Vec<Verdict>,
    pub flags: Vec<String>,
    pub pass: bool,
}

impl AnalysisReport {
    pub fn verdicts(&self) -> impl Iterator<Item = &Verdict> {
        self.subspaces
            .iter()
            .flat_map(|s| s.invariance.iter().chain(&s.conditions))
            .chain(std::iter::once(&self.family.separating))
            .chain(self.simulation.iter().flat_map(|e| e.verdicts.iter()))
            .chain(&self.checks)
    }

    pub fn failures(&self) -> Vec<&Verdict> {
        self.verdicts().filter(|v| !v.pass).collect()
    }

    pub fn refresh_pass(&mut self) {
        self.pass = self.verdicts().all(|v| v.pass) && self.subspaces.iter().all(|s| s.decay.as_ref().map_or(true, |d| d.error.is_none()));
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Everything downstream commands need besides the report.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub report: AnalysisReport,
    pub system: SwitchedSystem,
    pub samples: SampleSet,
    pub certificates: Vec<SubspaceCertificate>,
    pub bounds: DwellBounds,
    pub projectors: Vec<(String, Projector)>,
}

fn bound_entries(b: &DwellBounds) -> Vec<BoundEntry> {
    let (ge, le) = if b.inclusive { ("≥", "≤") } else { (">", "<") };
    b.per_mode
        .iter()
        .map(|(q, mb)| {
            let mut parts = Vec::new();
            if let Some(t) = mb.lower {
                parts.push(format!("τ̲_{q} {ge} {t:.6}"));
            }
            if let Some(t) = mb.upper {
                parts.push(format!("τ̄_{q} {le} {t:.6}"));
            }
            BoundEntry {
                mode: *q,
                tau_lower: mb.lower,
                tau_upper: mb.upper,
                relation: parts.join(", "),
            }
        })
        .collect()
}

/// Representative dwell inside a mode's admissible window.
pub fn reference_dwell(b: &ModeBounds) -> f64 {
    match (b.lower, b.upper) {
        (Some(lo), Some(hi)) if lo < hi => 0.5 * (lo + hi),
        (Some(lo), Some(_)) => lo,
        (Some(lo), None) => 2.0 * lo.max(1e-3),
        (None, Some(hi)) => 0.5 * hi,
        (None, None) => 1.0,
    }
}

/// Decay-constant inputs for a certificate: the shortest S-dwell and the
/// longest U-dwell among `dwell(q)`, with `N̲ = 1`, `N̄ = 0`.
pub fn signal_params(cert: &SubspaceCertificate, dwell: impl Fn(ModeId) -> Option<(f64, f64)>) -> SignalParams {
    let mut tau_lower = f64::INFINITY;
    let mut tau_upper: f64 = 0.0;
    for (q, tag) in &cert.tags {
        if let Some((lo, hi)) = dwell(*q) {
            match tag {
                Tag::S => tau_lower = tau_lower.min(lo),
                Tag::U => tau_upper = tau_upper.max(hi),
            }
        }
    }
    SignalParams {
        tau_lower,
        tau_upper,
        n_lower: 1.0,
        n_upper: 0.0,
    }
}

fn constants_entries(given: &CertificateConfig, ex: &Extraction, constants: &Constants, margin: f64, searched: bool) -> BTreeMap<String, ConstantEntry> {
    let mut out = BTreeMap::new();
    let rows = [
        ("beta_S", given.beta_s, ex.beta_s, constants.beta_s),
        ("beta_U", given.beta_u, ex.beta_u, constants.beta_u),
        ("eta_S", given.eta_s, ex.eta_s, constants.eta_s),
        ("eta_U", given.eta_u, ex.eta_u, constants.eta_u),
    ];
    for (name, cfg, tight, used) in rows {
        let Some(value) = used else { continue };
        let source = if searched && name == "beta_U" {
            format!("scalar-weight search target, margin {margin:e}")
        } else if searched && name == "beta_S" {
            format!("scalar-weight search, margin {margin:e}")
        } else if cfg.is_some() {
            "config".to_string()
        } else {
            format!("tightest on samples, margin {margin:e}")
        };
        out.insert(name.to_string(), ConstantEntry { value, source, tightest: tight });
    }
    out
}

pub fn analyze(cfg: &SystemConfig, raw: &[u8], opts: &AnalysisOptions) -> Result<Analysis, AnalysisError> {
    let sys = cfg.system()?;
    if cfg.subspaces.is_empty() {
        return Err(AnalysisError::NoSubspaces);
    }
    let scheme = opts.scheme(sys.n);
    let samples = sample_domain(&sys, scheme.grid_per_axis, scheme.random_count, scheme.seed)?;
    let evidence = samples.scheme.describe();
    let mut flags = Vec::new();
    let mut sections = Vec::new();
    let mut certs = Vec::new();
    let mut projectors = Vec::new();

    for sc in &cfg.subspaces {
        let sub_err = |source| AnalysisError::Subspace {
            name: sc.name.clone(),
            source,
        };
        let cert_err = |source| AnalysisError::Certificate {
            name: sc.name.clone(),
            source,
        };
        let subspace = orthonormalize(&sc.span).map_err(sub_err)?;
        let pi = projector(&subspace);
        let printed_projector_matches = match &sc.printed_projector {
            Some(rows) => {
                let printed = Matrix::try_from_rows(rows).map_err(|e| sub_err(e.into()))?;
                let diff = if printed.rows() == sys.n && printed.cols() == sys.n {
                    (&printed - &pi.matrix).frobenius_norm()
                } else {
                    f64::INFINITY
                };
                let ok = diff <= 1e-6;
                if !ok {
                    flags.push(format!(
                        "subspace {}: printed projector differs from the span-derived one (‖Δ‖_F = {diff:.4}); the span-derived projector is used",
                        sc.name
                    ));
                }
                Some(ok)
            }
            None => None,
        };

        let mut invariance = Vec::new();
        for mode in &sys.modes {
            let c = check_invariance(mode, &subspace, &samples, InvariantPart::Complement, opts.tol).map_err(sub_err)?;
            invariance.push(Verdict::at_most(
                format!("{}: complement invariant under mode {}", sc.name, mode.id),
                c.worst_residual,
                0.0,
                c.tol,
                evidence.clone(),
            ));
        }

        let cert_cfg = cfg.certificates.iter().find(|c| c.subspace == sc.name).cloned().unwrap_or(CertificateConfig {
            subspace: sc.name.clone(),
            weights: None,
            beta_s: None,
            beta_u: None,
            eta_s: None,
            eta_u: None,
        });
        let given_weights = cert_cfg.weight_matrices()?;
        let (weights, ex, scalars, searched) = match (&given_weights, opts.search_weights) {
            (Some(ws), false) => {
                let mut weights = BTreeMap::new();
                for (q, p) in ws {
                    weights.insert(*q, reduce(p, &subspace).map_err(|e| cert_err(e.into()))?);
                }
                let ex = extract(&sys, &weights, &samples).map_err(cert_err)?;
                (weights, ex, None, false)
            }
            (_, true) => {
                let target = cert_cfg.beta_u.unwrap_or(DEFAULT_BETA_U_TARGET);
                let r = search_scalar_weights(&sys, &subspace, &samples, target, opts.margin).map_err(cert_err)?;
                (r.certificate.weights, r.extraction, Some(r.scalars), true)
            }
            (None, false) => return Err(AnalysisError::MissingWeights(sc.name.clone())),
        };

        let tightened = ex.with_margin(opts.margin);
        let mut constants = Constants {
            beta_s: if searched { tightened.beta_s } else { cert_cfg.beta_s.or(tightened.beta_s) },
            beta_u: if searched { tightened.beta_u } else { cert_cfg.beta_u.or(tightened.beta_u) },
            eta_s: cert_cfg.eta_s.or(tightened.eta_s),
            eta_u: cert_cfg.eta_u.or(tightened.eta_u),
        };
        let tags: BTreeMap<ModeId, Tag> = ex.classifications.iter().map(|(q, c)| (*q, c.tag)).collect();
        if !tags.values().any(|t| *t == Tag::S) {
            constants.beta_s = None;
            constants.eta_s = None;
        }
        if !tags.values().any(|t| *t == Tag::U) {
            constants.beta_u = None;
            constants.eta_u = None;
        }
        let cert = SubspaceCertificate {
            name: sc.name.clone(),
            subspace: subspace.clone(),
            weights,
            tags,
            constants,
            m_lower: ex.m_lower,
            m_upper: ex.m_upper,
        };

        let checks = verify_certificate(&sys, &cert, &samples, opts.tol).map_err(cert_err)?;
        let mut conditions = Vec::new();
        for (q, r, v) in &checks.coupling {
            let mut verdict = Verdict::at_most(
                format!("{}: switch {q}→{r}, P̃_{r} ⪯ β P̃_{q}", sc.name),
                v.tightest,
                v.beta,
                v.tolerance * v.beta.abs().max(1.0),
                "exact (matrix inequality)",
            );
            verdict.pass = v.pass;
            conditions.push(verdict);
        }
        for (q, v) in &checks.rates {
            let kind = if v.stable { "stable" } else { "unstable" };
            let mut verdict = Verdict::at_most(
                format!("{}: {kind} rate of mode {q} (full-space agreement {}/{})", sc.name, v.full_space_checked - v.full_space_disagreements, v.full_space_checked),
                v.value,
                v.bound,
                v.tolerance * v.bound.abs().max(1.0),
                evidence.clone(),
            );
            verdict.pass = v.pass;
            conditions.push(verdict);
        }
        let mut range = Verdict::at_least(format!("{}: constants in range", sc.name), f64::from(u8::from(checks.constants_valid)), 1.0, 0.0, "exact");
        range.margin = 0.0;
        conditions.push(range);

        let sub_bounds = dwell_bounds_subspace(&cert, opts.inclusive()).map_err(cert_err)?;
        sections.push(SubspaceSection {
            name: sc.name.clone(),
            dimension: subspace.dim(),
            basis: subspace.basis.transpose().to_rows(),
            projector: pi.matrix.to_rows(),
            printed_projector_matches,
            invariance,
            classification: ex
                .classifications
                .iter()
                .map(|(q, c)| ModeClassReport {
                    mode: *q,
                    tag: c.tag,
                    sup_rate: c.sup_rate,
                    worst_sample: samples.points[c.worst_index].clone(),
                })
                .collect(),
            weights: cert
                .weights
                .iter()
                .map(|(q, w)| WeightEntry {
                    mode: *q,
                    reduced: w.reduced.to_rows(),
                    scalar: scalars.as_ref().map(|s| s[q]),
                })
                .collect(),
            constants: constants_entries(&cert_cfg, &ex, &cert.constants, opts.margin, searched),
            m_lower: cert.m_lower,
            m_upper: cert.m_upper,
            conditions,
            dwell_bounds: bound_entries(&sub_bounds),
            decay: None,
        });
        projectors.push((sc.name.clone(), pi));
        certs.push(cert);
    }

    let sep = check_separating(&projectors.iter().map(|p| p.1.clone()).collect::<Vec<_>>()).map_err(|e| AnalysisError::Subspace {
        name: "family".into(),
        source: e,
    })?;
    let separating = Verdict::at_least("family: separating (λ_min Σ ΠᵢᵀΠᵢ)", sep.min_eigenvalue, 1e-10, 0.0, "exact").with_pass(sep.separating);
    if !sep.separating {
        flags.push("family: not separating; the seminorms do not jointly bound the norm".into());
    }

    let bounds = dwell_bounds_family(&certs, opts.inclusive()).map_err(|e| AnalysisError::Certificate {
        name: "family".into(),
        source: e,
    })?;
    let mut norm_rate: Option<f64> = None;
    for (section, cert) in sections.iter_mut().zip(&certs) {
        let params = signal_params(cert, |q| {
            bounds.get(q).map(|b| {
                let r = reference_dwell(b);
                (r, r)
            })
        });
        let entry = match decay_constants(cert, params) {
            Ok(d) => {
                norm_rate = Some(norm_rate.map_or(d.norm_rate, |r| r.min(d.norm_rate)));
                DecayEntry {
                    params,
                    constants: Some(d),
                    error: None,
                }
            }
            Err(e) => DecayEntry {
                params,
                constants: None,
                error: Some(e.to_string()),
            },
        };
        section.decay = Some(entry);
    }
    if bounds.per_mode.values().any(|b| matches!((b.lower, b.upper), (Some(lo), Some(hi)) if lo >= hi)) {
        flags.push("family: some mode has τ̲ ≥ τ̄; no signal satisfies both bounds".into());
    }

    let mut report = AnalysisReport {
        schema_version: SCHEMA_VERSION.into(),
        tool: format!("semicontract {}", env!("CARGO_PKG_VERSION")),
        timestamp: None,
        provenance: Provenance {
            config_sha256: content_hash(raw),
            seed: opts.seed,
            tolerance: opts.tol,
            margin: opts.margin,
            strict: opts.margin == 0.0,
            search_weights: opts.search_weights,
            sample_scheme: samples.scheme.clone(),
            sample_points: samples.len(),
            evidence,
        },
        subspaces: sections,
        family: FamilySection {
            separating,
            interpretation: if certs.len() > 1 {
                "example-consistent interpretation: each bound of a mode is aggregated over the subspaces where the mode carries that tag (max ln β over min η); a mode that is S on one subspace and U on another carries both bounds".into()
            } else {
                "single subspace: bounds are those of its certificate".into()
            },
            inclusive: bounds.inclusive,
            bounds: bound_entries(&bounds),
            norm_rate,
        },
        simulation: Vec::new(),
        checks: Vec::new(),
        flags,
        pass: false,
    };
    report.refresh_pass();
    Ok(Analysis {
        report,
        system: sys,
        samples,
        certificates: certs,
        bounds,
        projectors,
    })
}
