//! Switched-system model: mode vector fields, symbolic Jacobians, and the
//! bounded domain on which the certificate conditions are sampled.

pub mod expr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use expr::{parse_expr, EvalError, Expr, Func, ParseError};

use crate::numerics::Matrix;

pub type ModeId = usize;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("mode {mode}, component {component}: {source}")]
    Parse {
        mode: ModeId,
        component: usize,
        #[source]
        source: ParseError,
    },
    #[error("mode {mode} has {got} field components, expected {expected}")]
    FieldLength {
        mode: ModeId,
        got: usize,
        expected: usize,
    },
    #[error("mode ids must be 1..M without gaps, got {0:?}")]
    ModeIds(Vec<ModeId>),
    #[error("domain must have {expected} nonempty intervals: {msg}")]
    Domain { expected: usize, msg: String },
    #[error("mode {mode}: {source}")]
    Eval {
        mode: ModeId,
        #[source]
        source: EvalError,
    },
    #[error("state has length {got}, expected {expected}")]
    StateLength { got: usize, expected: usize },
    #[error("empty sampling request (grid_per_axis < 2 and random_count = 0)")]
    EmptySampleRequest,
}

/// One mode of the switched system with its symbolic Jacobian.
#[derive(Debug, Clone)]
pub struct Mode {
    pub id: ModeId,
    pub field: Vec<Expr>,
    /// `jacobian[i][j] = ∂field[i]/∂x_j`
    pub jacobian: Vec<Vec<Expr>>,
}

impl Mode {
    pub fn new(id: ModeId, field: Vec<Expr>) -> Self {
        let n = field.len();
        let jacobian = field
            .iter()
            .map(|fi| (0..n).map(|j| fi.differentiate(j)).collect())
            .collect();
        Self { id, field, jacobian }
    }

    pub fn parse(id: ModeId, components: &[impl AsRef<str>], n: usize) -> Result<Self, ModelError> {
        if components.len() != n {
            return Err(ModelError::FieldLength {
                mode: id,
                got: components.len(),
                expected: n,
            });
        }
        let field = components
            .iter()
            .enumerate()
            .map(|(i, text)| {
                parse_expr(text.as_ref(), n).map_err(|source| ModelError::Parse {
                    mode: id,
                    component: i + 1,
                    source,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::new(id, field))
    }

    pub fn dim(&self) -> usize {
        self.field.len()
    }

    pub fn eval_field(&self, x: &[f64]) -> Result<Vec<f64>, ModelError> {
        self.check_len(x)?;
        self.field
            .iter()
            .map(|e| e.eval(x).map_err(|source| ModelError::Eval { mode: self.id, source }))
            .collect()
    }

    pub fn eval_jacobian(&self, x: &[f64]) -> Result<Matrix, ModelError> {
        self.check_len(x)?;
        let n = self.dim();
        let mut data = Vec::with_capacity(n * n);
        for row in &self.jacobian {
            for e in row {
                data.push(e.eval(x).map_err(|source| ModelError::Eval { mode: self.id, source })?);
            }
        }
        Ok(Matrix::new(n, n, data).expect("finite entries checked by eval"))
    }

    fn check_len(&self, x: &[f64]) -> Result<(), ModelError> {
        if x.len() != self.dim() {
            return Err(ModelError::StateLength {
                got: x.len(),
                expected: self.dim(),
            });
        }
        Ok(())
    }
}

/// Axis-aligned box `D`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub bounds: Vec<(f64, f64)>,
}

impl Domain {
    pub fn new(bounds: Vec<(f64, f64)>) -> Self {
        Self { bounds }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.bounds.len()
            && x.iter().zip(&self.bounds).all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }
}

#[derive(Debug, Clone)]
pub struct SwitchedSystem {
    pub n: usize,
    pub modes: Vec<Mode>,
    pub domain: Domain,
}

impl SwitchedSystem {
    pub fn new(n: usize, modes: Vec<Mode>, domain: Domain) -> Result<Self, ModelError> {
        let ids: Vec<ModeId> = modes.iter().map(|m| m.id).collect();
        if ids.is_empty() || ids.iter().enumerate().any(|(i, id)| *id != i + 1) {
            return Err(ModelError::ModeIds(ids));
        }
        for m in &modes {
            if m.dim() != n {
                return Err(ModelError::FieldLength {
                    mode: m.id,
                    got: m.dim(),
                    expected: n,
                });
            }
        }
        if domain.bounds.len() != n {
            return Err(ModelError::Domain {
                expected: n,
                msg: format!("got {} intervals", domain.bounds.len()),
            });
        }
        if let Some((lo, hi)) = domain
            .bounds
            .iter()
            .find(|(lo, hi)| !(lo.is_finite() && hi.is_finite() && lo <= hi))
        {
            return Err(ModelError::Domain {
                expected: n,
                msg: format!("invalid interval [{lo}, {hi}]"),
            });
        }
        Ok(Self { n, modes, domain })
    }

    pub fn mode(&self, id: ModeId) -> Option<&Mode> {
        id.checked_sub(1).and_then(|i| self.modes.get(i))
    }

    pub fn mode_ids(&self) -> Vec<ModeId> {
        self.modes.iter().map(|m| m.id).collect()
    }
}

/// How a [`SampleSet`] was produced; carried into every sampled verdict.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleScheme {
    pub grid_per_axis: usize,
    pub random_count: usize,
    pub seed: u64,
}

impl SampleScheme {
    /// 21 points per axis for `n ≤ 3`, otherwise 1000 seeded random points.
    pub fn default_for(n: usize, seed: u64) -> Self {
        if n <= 3 {
            Self {
                grid_per_axis: 21,
                random_count: 0,
                seed,
            }
        } else {
            Self {
                grid_per_axis: 0,
                random_count: 1000,
                seed,
            }
        }
    }

    pub fn describe(&self) -> String {
        if self.random_count == 0 {
            format!("sampled evidence: grid {} per axis", self.grid_per_axis)
        } else {
            format!(
                "sampled evidence: grid {} per axis + {} random points (seed {})",
                self.grid_per_axis, self.random_count, self.seed
            )
        }
    }
}

#[derive(Debug, Clone)]
pub struct SampleSet {
    pub points: Vec<Vec<f64>>,
    pub scheme: SampleScheme,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Uniform grid plus seeded uniform random points inside the domain.
pub fn sample_domain(
    sys: &SwitchedSystem,
    grid_per_axis: usize,
    random_count: usize,
    seed: u64,
) -> Result<SampleSet, ModelError> {
    sample_box(&sys.domain, grid_per_axis, random_count, seed)
}

pub fn sample_box(
    domain: &Domain,
    grid_per_axis: usize,
    random_count: usize,
    seed: u64,
) -> Result<SampleSet, ModelError> {
    if grid_per_axis < 2 && random_count == 0 {
        return Err(ModelError::EmptySampleRequest);
    }
    let n = domain.bounds.len();
    let mut points = Vec::new();
    if grid_per_axis >= 2 {
        let axes: Vec<Vec<f64>> = domain
            .bounds
            .iter()
            .map(|(lo, hi)| {
                (0..grid_per_axis)
                    .map(|k| {
                        if k == grid_per_axis - 1 {
                            *hi
                        } else {
                            lo + (hi - lo) * k as f64 / (grid_per_axis - 1) as f64
                        }
                    })
                    .collect()
            })
            .collect();
        let total = grid_per_axis.pow(n as u32);
        for flat in 0..total {
            let mut rem = flat;
            let mut p = vec![0.0; n];
            for (d, axis) in axes.iter().enumerate().rev() {
                p[d] = axis[rem % grid_per_axis];
                rem /= grid_per_axis;
            }
            points.push(p);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..random_count {
        points.push(
            domain
                .bounds
                .iter()
                .map(|(lo, hi)| if lo == hi { *lo } else { rng.gen_range(*lo..=*hi) })
                .collect(),
        );
    }
    Ok(SampleSet {
        points,
        scheme: SampleScheme {
            grid_per_axis: if grid_per_axis >= 2 { grid_per_axis } else { 0 },
            random_count,
            seed,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundled;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};

    #[test]
    fn mode_one_field_at_origin() {
        let sys = bundled::two_mode_system();
        let f = sys.mode(1).unwrap().eval_field(&[0.0, 0.0]).unwrap();
        let s2 = 2f64.sqrt();
        // B·[1, 1]ᵀ with the printed B
        assert_abs_diff_eq!(f[0], -0.9 / s2, epsilon = 1e-9);
        assert_abs_diff_eq!(f[1], 0.5 / s2, epsilon = 1e-9);
    }

    #[test]
    fn jacobians_at_origin_are_linear_parts() {
        let sys = bundled::two_mode_system();
        let j1 = sys.mode(1).unwrap().eval_jacobian(&[0.0, 0.0]).unwrap();
        let j2 = sys.mode(2).unwrap().eval_jacobian(&[0.0, 0.0]).unwrap();
        let e1 = Matrix::from_rows(&[[-0.75, -1.25], [-1.25, -0.75]]);
        let e2 = Matrix::from_rows(&[[-0.75, 1.25], [1.25, -0.75]]);
        assert!((&j1 - &e1).max_abs() < 1e-15);
        assert!((&j2 - &e2).max_abs() < 1e-15);
    }

    #[test]
    fn linear_mode_jacobian_is_constant() {
        let m = Mode::parse(1, &["-x1 + 2*x2", "3*x1"], 2).unwrap();
        let a = m.eval_jacobian(&[0.0, 0.0]).unwrap();
        let b = m.eval_jacobian(&[4.0, -7.0]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, Matrix::from_rows(&[[-1.0, 2.0], [3.0, 0.0]]));
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let sys = bundled::two_mode_system();
        let extra = Mode::parse(1, &["tanh(x1*x2) - x1^3/(2 + x2^2)", "exp(0.1*x1) * sin(x2)"], 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = 1e-5;
        for mode in sys.modes.iter().chain(std::iter::once(&extra)) {
            for _ in 0..100 {
                let x: Vec<f64> = sys.domain.bounds.iter().map(|(lo, hi)| rng.gen_range(*lo..*hi)).collect();
                let jac = mode.eval_jacobian(&x).unwrap();
                for j in 0..2 {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[j] += h;
                    xm[j] -= h;
                    let fp = mode.eval_field(&xp).unwrap();
                    let fm = mode.eval_field(&xm).unwrap();
                    for i in 0..2 {
                        let fd = (fp[i] - fm[i]) / (2.0 * h);
                        let sym = jac.get(i, j);
                        assert!((fd - sym).abs() <= 1e-6 * sym.abs().max(1.0), "mode {} ({i},{j}): {fd} vs {sym}", mode.id);
                    }
                }
            }
        }
    }

    #[test]
    fn system_validation() {
        let m = Mode::parse(2, &["x1"], 1).unwrap();
        assert!(matches!(
            SwitchedSystem::new(1, vec![m], Domain::new(vec![(0.0, 1.0)])),
            Err(ModelError::ModeIds(_))
        ));
        let m = Mode::parse(1, &["x1"], 1).unwrap();
        assert!(SwitchedSystem::new(1, vec![m.clone()], Domain::new(vec![(1.0, 0.0)])).is_err());
        assert!(SwitchedSystem::new(1, vec![m], Domain::new(vec![(0.0, 1.0)])).is_ok());
        assert!(matches!(
            Mode::parse(1, &["x1", "x2"], 1),
            Err(ModelError::FieldLength { .. })
        ));
    }

    #[test]
    fn grid_sampling() {
        let d = Domain::new(vec![(-1.0, 1.0), (-1.0, 1.0)]);
        let s = sample_box(&d, 3, 0, 0).unwrap();
        assert_eq!(s.len(), 9);
        assert!(s.points.contains(&vec![0.0, 0.0]));
        for c in [[-1.0, -1.0], [-1.0, 1.0], [1.0, -1.0], [1.0, 1.0]] {
            assert!(s.points.contains(&c.to_vec()));
        }
        let corners = sample_box(&d, 2, 0, 0).unwrap();
        assert_eq!(corners.len(), 4);
        assert!(corners.points.iter().all(|p| p.iter().all(|v| v.abs() == 1.0)));
    }

    #[test]
    fn random_sampling_is_reproducible_and_inside() {
        let d = Domain::new(vec![(-5.0, 5.0), (0.0, 2.0), (1.0, 1.5)]);
        let a = sample_box(&d, 0, 200, 42).unwrap();
        let b = sample_box(&d, 0, 200, 42).unwrap();
        let c = sample_box(&d, 0, 200, 43).unwrap();
        assert_eq!(a.points, b.points);
        assert_ne!(a.points, c.points);
        assert!(a.points.iter().all(|p| d.contains(p)));
        assert!(matches!(sample_box(&d, 1, 0, 0), Err(ModelError::EmptySampleRequest)));
    }
}
