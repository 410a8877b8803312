//! Subspaces, orthogonal projectors, and the seminorms they induce.
//!
//! A [`Subspace`] stores an orthonormal basis `V` together with an
//! orthonormal basis `U` of its complement, so `T = [V | U]` is orthogonal.
//! Weighted seminorms `‖P^{1/2}·‖₂` with `ker P = V⊥` are represented by their
//! reduced block `P̃ = VᵀPV`, and every logarithmic seminorm is evaluated on
//! the reduced pencil `(P̃Ã₁₁ + Ã₁₁ᵀP̃, 2P̃)` with `Ã₁₁ = VᵀAV`.

use rayon::prelude::*;
use thiserror::Error;

use crate::model::{Mode, ModelError, SampleSet};
use crate::numerics::{self, dot, gen_sym_eig_max, norm2, sym_eig, Matrix, NumericsError};

const DROP_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum SubspaceError {
    #[error("all spanning vectors are numerically zero")]
    Degenerate,
    #[error("vector length {got} does not match ambient dimension {expected}")]
    Dimension { got: usize, expected: usize },
    #[error("weight does not annihilate the complement: ‖Π⊥P‖_F = {residual:.3e} (limit {limit:.3e})")]
    KernelMismatch { residual: f64, limit: f64 },
    #[error("reduced weight block is not positive definite (λ_min = {min_eig:.3e})")]
    SingularReducedBlock { min_eig: f64 },
    #[error("weighted quadratic form is negative ({value:.3e})")]
    NegativeForm { value: f64 },
    #[error("empty projector list")]
    EmptyFamily,
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone)]
pub struct Subspace {
    pub n: usize,
    /// `n x h`, orthonormal columns.
    pub basis: Matrix,
    /// `n x (n-h)`, orthonormal columns spanning `V⊥`.
    pub complement: Matrix,
}

impl Subspace {
    pub fn dim(&self) -> usize {
        self.basis.cols()
    }

    /// `T = [V | U]`.
    pub fn transform(&self) -> Matrix {
        self.basis.hcat(&self.complement)
    }
}

// Two-pass modified Gram–Schmidt of `v` against `accepted`; returns the residual.
fn orthogonalize(v: &[f64], accepted: &[Vec<f64>]) -> Vec<f64> {
    let mut r = v.to_vec();
    for _ in 0..2 {
        for q in accepted {
            let c = dot(&r, q);
            for (ri, qi) in r.iter_mut().zip(q) {
                *ri -= c * qi;
            }
        }
    }
    r
}

/// Orthonormal basis of `span(vectors)` plus a deterministic complement basis.
pub fn orthonormalize(vectors: &[Vec<f64>]) -> Result<Subspace, SubspaceError> {
    let n = vectors.first().map(Vec::len).ok_or(SubspaceError::EmptyFamily)?;
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for v in vectors {
        if v.len() != n {
            return Err(SubspaceError::Dimension {
                got: v.len(),
                expected: n,
            });
        }
        let r = orthogonalize(v, &basis);
        let nr = norm2(&r);
        if nr < DROP_TOL * norm2(v).max(1.0) {
            continue;
        }
        basis.push(r.iter().map(|x| x / nr).collect());
        if basis.len() == n {
            break;
        }
    }
    if basis.is_empty() {
        return Err(SubspaceError::Degenerate);
    }

    // complete with canonical vectors in index order
    let mut all = basis.clone();
    let mut complement = Vec::new();
    for i in 0..n {
        if all.len() == n {
            break;
        }
        let mut e = vec![0.0; n];
        e[i] = 1.0;
        let r = orthogonalize(&e, &all);
        let nr = norm2(&r);
        if nr > 1e-8 {
            let u: Vec<f64> = r.iter().map(|x| x / nr).collect();
            all.push(u.clone());
            complement.push(u);
        }
    }
    Ok(Subspace {
        n,
        basis: Matrix::from_columns(n, &basis),
        complement: Matrix::from_columns(n, &complement),
    })
}

#[derive(Debug, Clone)]
pub struct Projector {
    pub matrix: Matrix,
    pub subspace: Subspace,
}

impl Projector {
    /// `Π⊥ = I − Π`.
    pub fn complement_matrix(&self) -> Matrix {
        &Matrix::identity(self.matrix.rows()) - &self.matrix
    }
}

/// `Π = VVᵀ`.
pub fn projector(s: &Subspace) -> Projector {
    Projector {
        matrix: &s.basis * &s.basis.transpose(),
        subspace: s.clone(),
    }
}

/// Weighted seminorm `v ↦ √(vᵀPv)` with `ker P = V⊥`.
#[derive(Debug, Clone)]
pub struct WeightedSeminorm {
    pub weight: Matrix,
    pub subspace: Subspace,
    /// `P̃ = VᵀPV`, symmetric positive definite.
    pub reduced: Matrix,
}

/// Validates the kernel condition and extracts `P̃`.
pub fn reduce(p: &Matrix, s: &Subspace) -> Result<WeightedSeminorm, SubspaceError> {
    if p.rows() != s.n || p.cols() != s.n {
        return Err(SubspaceError::Dimension {
            got: p.rows(),
            expected: s.n,
        });
    }
    let p = p.symmetrize();
    let pi_perp = &s.complement * &s.complement.transpose();
    let residual = (&pi_perp * &p).frobenius_norm();
    let limit = 1e-8 * p.frobenius_norm();
    if residual > limit {
        return Err(SubspaceError::KernelMismatch { residual, limit });
    }
    let reduced = s.basis.congruence(&p).symmetrize();
    let min_eig = sym_eig(&reduced)?.min();
    if min_eig <= 1e-12 * reduced.frobenius_norm() {
        return Err(SubspaceError::SingularReducedBlock { min_eig });
    }
    Ok(WeightedSeminorm {
        weight: p,
        subspace: s.clone(),
        reduced,
    })
}

/// The weight `P = V P̃ Vᵀ` recovered from a reduced block.
pub fn lift(reduced: &Matrix, s: &Subspace) -> Matrix {
    (&(&s.basis * reduced) * &s.basis.transpose()).symmetrize()
}

/// `‖Πv‖₂`.
pub fn seminorm_eval(pi: &Projector, v: &[f64]) -> f64 {
    norm2(&pi.matrix.mat_vec(v))
}

/// `√(vᵀPv)`.
pub fn weighted_seminorm_eval(w: &WeightedSeminorm, v: &[f64]) -> Result<f64, SubspaceError> {
    let q = dot(v, &w.weight.mat_vec(v));
    let scale = w.weight.frobenius_norm() * dot(v, v);
    if q < -1e-12 * scale.max(1.0) {
        return Err(SubspaceError::NegativeForm { value: q });
    }
    Ok(q.max(0.0).sqrt())
}

/// `Ã₁₁ = VᵀAV`.
pub fn reduced_block(a: &Matrix, s: &Subspace) -> Matrix {
    s.basis.congruence(a)
}

/// Left-hand side `P̃Ã₁₁ + Ã₁₁ᵀP̃` of every reduced rate condition.
pub fn reduced_lyapunov(w: &WeightedSeminorm, a: &Matrix) -> Matrix {
    let a11 = reduced_block(a, &w.subspace);
    let pa = &w.reduced * &a11;
    (&pa + &pa.transpose()).symmetrize()
}

/// Weighted logarithmic seminorm: the smallest `b` with
/// `P̃Ã₁₁ + Ã₁₁ᵀP̃ ⪯ 2bP̃`.
pub fn log_seminorm(w: &WeightedSeminorm, a: &Matrix) -> Result<f64, SubspaceError> {
    let s = reduced_lyapunov(w, a);
    Ok(gen_sym_eig_max(&s, &w.reduced.scale(2.0))?)
}

/// Which subspace must be mapped into itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InvariantPart {
    /// `A V ⊆ V`: `‖Π⊥ A Π‖_F`.
    Subspace,
    /// `A V⊥ ⊆ V⊥`: `‖Π A Π⊥‖_F`.
    Complement,
}

#[derive(Debug, Clone)]
pub struct InvarianceCheck {
    pub holds: bool,
    /// Max over samples of `‖off-block‖_F / max(1, ‖A(x)‖_F)`.
    pub worst_residual: f64,
    pub worst_index: usize,
    pub tol: f64,
}

pub fn invariance_residual(a: &Matrix, pi: &Projector, part: InvariantPart) -> f64 {
    let perp = pi.complement_matrix();
    let off = match part {
        InvariantPart::Subspace => &(&perp * a) * &pi.matrix,
        InvariantPart::Complement => &(&pi.matrix * a) * &perp,
    };
    off.frobenius_norm() / a.frobenius_norm().max(1.0)
}

pub fn check_invariance(
    mode: &Mode,
    s: &Subspace,
    samples: &SampleSet,
    part: InvariantPart,
    tol: f64,
) -> Result<InvarianceCheck, SubspaceError> {
    let pi = projector(s);
    let residuals = samples
        .points
        .par_iter()
        .map(|x| Ok(invariance_residual(&mode.eval_jacobian(x)?, &pi, part)))
        .collect::<Result<Vec<f64>, SubspaceError>>()?;
    let (worst_index, worst_residual) = argmax(&residuals);
    Ok(InvarianceCheck {
        holds: worst_residual <= tol,
        worst_residual,
        worst_index,
        tol,
    })
}

/// First index of the maximum; `(0, -inf)` for empty input.
pub(crate) fn argmax(values: &[f64]) -> (usize, f64) {
    values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
}

#[derive(Debug, Clone)]
pub struct SeparationCheck {
    pub separating: bool,
    /// `λ_min(Σ ΠᵢᵀΠᵢ)`.
    pub min_eigenvalue: f64,
}

/// Kernels intersect only at the origin iff `Σ ΠᵢᵀΠᵢ` is nonsingular.
pub fn check_separating(projectors: &[Projector]) -> Result<SeparationCheck, SubspaceError> {
    let first = projectors.first().ok_or(SubspaceError::EmptyFamily)?;
    let n = first.matrix.rows();
    let mut acc = Matrix::zeros(n, n);
    for p in projectors {
        if p.matrix.rows() != n {
            return Err(SubspaceError::Dimension {
                got: p.matrix.rows(),
                expected: n,
            });
        }
        acc = &acc + &(&p.matrix.transpose() * &p.matrix);
    }
    let min_eigenvalue = numerics::sym_eig(&acc.symmetrize())?.min();
    Ok(SeparationCheck {
        separating: min_eigenvalue > 1e-10,
        min_eigenvalue,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundled;
    use crate::model::{sample_domain, Mode};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn span(v: &[&[f64]]) -> Subspace {
        orthonormalize(&v.iter().map(|x| x.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn linear_part_mode1() -> Matrix {
        Matrix::from_rows(&[[-0.75, -1.25], [-1.25, -0.75]])
    }

    #[test]
    fn single_vector_normalisation() {
        let s = span(&[&[1.0, 1.0]]);
        let r = 1.0 / 2f64.sqrt();
        assert_abs_diff_eq!(s.basis.get(0, 0).abs(), r, epsilon = 1e-15);
        assert_abs_diff_eq!(s.basis.get(1, 0).abs(), r, epsilon = 1e-15);
        let u = s.complement.column(0);
        assert_abs_diff_eq!(u[0].abs(), r, epsilon = 1e-15);
        assert_abs_diff_eq!(u[0], -u[1], epsilon = 1e-15);
    }

    #[test]
    fn rank_deficiency_drops_vectors() {
        assert_eq!(span(&[&[1.0, 0.0], &[1.0, 1e-15]]).dim(), 1);
        let s = span(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]]);
        assert_eq!(s.dim(), 2);
        let u = s.complement.column(0);
        assert_abs_diff_eq!(u[2].abs(), 1.0, epsilon = 1e-15);
        assert!(matches!(orthonormalize(&[vec![0.0, 0.0]]), Err(SubspaceError::Degenerate)));
    }

    #[test]
    fn projector_examples() {
        let p = projector(&span(&[&[1.0, 1.0]]));
        assert!((&p.matrix - &Matrix::from_rows(&[[0.5, 0.5], [0.5, 0.5]])).max_abs() < 1e-15);
        let p = projector(&span(&[&[1.0, -1.0]]));
        assert!((&p.matrix - &Matrix::from_rows(&[[0.5, -0.5], [-0.5, 0.5]])).max_abs() < 1e-15);
        let p = projector(&span(&[&[1.0, 0.0, 0.0], &[1.0, 1.0, 0.0], &[0.0, 2.0, 3.0]]));
        assert!((&p.matrix - &Matrix::identity(3)).max_abs() < 1e-14);
        assert_eq!(p.subspace.complement.cols(), 0);
    }

    #[test]
    fn reduce_examples() {
        let a = span(&[&[1.0, 1.0]]);
        let w = reduce(&Matrix::from_rows(&[[1.0, 1.0], [1.0, 1.0]]).scale(0.7081), &a).unwrap();
        assert_abs_diff_eq!(w.reduced.get(0, 0), 1.4162, epsilon = 1e-12);
        let d = span(&[&[1.0, -1.0]]);
        let w = reduce(&Matrix::from_rows(&[[1.0, -1.0], [-1.0, 1.0]]).scale(1.1389), &d).unwrap();
        assert_abs_diff_eq!(w.reduced.get(0, 0), 2.2778, epsilon = 1e-12);

        let s = span(&[&[1.0, 2.0, 0.0], &[0.0, 1.0, 1.0]]);
        let w = reduce(&projector(&s).matrix, &s).unwrap();
        assert!((&w.reduced - &Matrix::identity(2)).max_abs() < 1e-12);
    }

    #[test]
    fn reduce_rejects_wrong_kernel() {
        let a = span(&[&[1.0, 1.0]]);
        let wrong = Matrix::from_rows(&[[1.0, -1.0], [-1.0, 1.0]]);
        assert!(matches!(reduce(&wrong, &a), Err(SubspaceError::KernelMismatch { .. })));
        let b = span(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]]);
        let singular = Matrix::diag(&[1.0, 0.0, 0.0]);
        assert!(matches!(reduce(&singular, &b), Err(SubspaceError::SingularReducedBlock { .. })));
    }

    #[test]
    fn seminorm_examples() {
        let p = projector(&span(&[&[1.0, 1.0]]));
        assert_abs_diff_eq!(seminorm_eval(&p, &[1.0, -1.0]), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(seminorm_eval(&p, &[1.0, 1.0]), 2f64.sqrt(), epsilon = 1e-15);
        let full = projector(&span(&[&[1.0, 0.0], &[0.0, 1.0]]));
        assert_abs_diff_eq!(seminorm_eval(&full, &[3.0, 4.0]), 5.0, epsilon = 1e-15);
    }

    #[test]
    fn weighted_seminorm_examples() {
        let s = span(&[&[1.0, 1.0]]);
        let unit = reduce(&projector(&s).matrix, &s).unwrap();
        let p = projector(&s);
        for v in [[0.3, -2.0], [1.0, 1.0]] {
            assert_abs_diff_eq!(weighted_seminorm_eval(&unit, &v).unwrap(), seminorm_eval(&p, &v), epsilon = 1e-12);
        }
        let w = reduce(&Matrix::from_rows(&[[1.0, 1.0], [1.0, 1.0]]).scale(0.7081), &s).unwrap();
        assert_abs_diff_eq!(weighted_seminorm_eval(&w, &[1.0, 1.0]).unwrap(), 2.8324f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(weighted_seminorm_eval(&w, &[2.0, -2.0]).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn log_seminorm_examples() {
        let a = linear_part_mode1();
        let s = span(&[&[1.0, 1.0]]);
        let w = reduce(&Matrix::from_rows(&[[1.0, 1.0], [1.0, 1.0]]).scale(0.7081), &s).unwrap();
        assert_abs_diff_eq!(log_seminorm(&w, &a).unwrap(), -2.0, epsilon = 1e-12);
        let d = span(&[&[1.0, -1.0]]);
        let w = reduce(&projector(&d).matrix, &d).unwrap();
        assert_abs_diff_eq!(log_seminorm(&w, &a).unwrap(), 0.5, epsilon = 1e-12);
        let t = span(&[&[1.0, 2.0, 3.0], &[0.0, 1.0, -1.0]]);
        let w = reduce(&projector(&t).matrix.scale(3.0), &t).unwrap();
        assert_abs_diff_eq!(log_seminorm(&w, &Matrix::identity(3).scale(-1.0)).unwrap(), -1.0, epsilon = 1e-12);
    }

    #[test]
    fn invariance_examples() {
        let sys = bundled::two_mode_system();
        let samples = sample_domain(&sys, 11, 50, 1).unwrap();
        let a = span(&[&[1.0, 1.0]]);
        for mode in &sys.modes {
            let c = check_invariance(mode, &a, &samples, InvariantPart::Complement, 1e-9).unwrap();
            assert!(c.holds);
            assert!(c.worst_residual <= 1e-12);
        }

        let shear = Mode::parse(1, &["x2", "0"], 2).unwrap();
        let e1 = span(&[&[1.0, 0.0]]);
        let c = check_invariance(&shear, &e1, &samples, InvariantPart::Complement, 1e-9).unwrap();
        assert!(!c.holds);
        assert_abs_diff_eq!(c.worst_residual, 1.0, epsilon = 1e-15);
        // V = span(e1) itself is invariant under the shear
        assert!(check_invariance(&shear, &e1, &samples, InvariantPart::Subspace, 1e-9).unwrap().holds);

        let diag = Mode::parse(1, &["-2*x1", "x2^3"], 2).unwrap();
        for s in [&e1, &span(&[&[0.0, 1.0]])] {
            for part in [InvariantPart::Subspace, InvariantPart::Complement] {
                assert!(check_invariance(&diag, s, &samples, part, 1e-12).unwrap().holds);
            }
        }
    }

    #[test]
    fn separating_examples() {
        let a = projector(&span(&[&[1.0, 1.0]]));
        let d = projector(&span(&[&[1.0, -1.0]]));
        assert!(check_separating(&[a.clone(), d]).unwrap().separating);
        assert!(!check_separating(&[a]).unwrap().separating);
        let full = projector(&span(&[&[1.0, 0.0], &[0.0, 1.0]]));
        assert!(check_separating(&[full]).unwrap().separating);
        assert!(matches!(check_separating(&[]), Err(SubspaceError::EmptyFamily)));
    }

    fn random_subspace(rng: &mut ChaCha8Rng, n: usize, h: usize) -> Subspace {
        let vs: Vec<Vec<f64>> = (0..h).map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        orthonormalize(&vs).unwrap()
    }

    #[test]
    fn random_projector_algebra() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..300 {
            let n = rng.gen_range(1..=7);
            let h = rng.gen_range(1..=n);
            let s = random_subspace(&mut rng, n, h);
            let p = projector(&s);
            let pi = &p.matrix;
            assert!((&(pi * pi) - pi).frobenius_norm() <= 1e-10);
            assert!((&pi.transpose() - pi).frobenius_norm() <= 1e-12);
            assert!((&(pi + &p.complement_matrix()) - &Matrix::identity(n)).frobenius_norm() <= 1e-12);
            let t = s.transform();
            assert!((&(&t.transpose() * &t) - &Matrix::identity(n)).frobenius_norm() <= 1e-10);
            let mut block = vec![0.0; n];
            block[..s.dim()].iter_mut().for_each(|v| *v = 1.0);
            assert!((&t.congruence(pi) - &Matrix::diag(&block)).frobenius_norm() <= 1e-10);
            let eig = sym_eig(pi).unwrap().eigenvalues;
            let ones = eig.iter().filter(|l| (*l - 1.0).abs() < 1e-8).count();
            assert_eq!(ones, s.dim());
        }
    }

    #[test]
    fn log_seminorm_unit_weight_is_l2_measure() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let n = rng.gen_range(1..=6);
            let h = rng.gen_range(1..=n);
            let s = random_subspace(&mut rng, n, h);
            let a = Matrix::new(n, n, (0..n * n).map(|_| rng.gen_range(-3.0..3.0)).collect()).unwrap();
            let w = reduce(&projector(&s).matrix, &s).unwrap();
            let a11 = reduced_block(&a, &s);
            let expected = sym_eig(&(&a11 + &a11.transpose()).scale(0.5)).unwrap().max();
            assert!((log_seminorm(&w, &a).unwrap() - expected).abs() <= 1e-8);
            for c in [0.1, 10.0] {
                let scaled = reduce(&w.weight.scale(c), &s).unwrap();
                let base = log_seminorm(&w, &a).unwrap();
                assert!((log_seminorm(&scaled, &a).unwrap() - base).abs() <= 1e-8 * base.abs().max(1.0));
            }
        }
    }

    proptest! {
        #[test]
        fn seminorm_axioms(
            dir in proptest::collection::vec(-1.0f64..1.0, 3),
            v in proptest::collection::vec(-10.0f64..10.0, 3),
            w in proptest::collection::vec(-10.0f64..10.0, 3),
            alpha in -5.0f64..5.0,
        ) {
            prop_assume!(norm2(&dir) > 1e-3);
            let p = projector(&orthonormalize(&[dir]).unwrap());
            let sum: Vec<f64> = v.iter().zip(&w).map(|(a, b)| a + b).collect();
            prop_assert!(seminorm_eval(&p, &sum) <= seminorm_eval(&p, &v) + seminorm_eval(&p, &w) + 1e-12);
            let scaled: Vec<f64> = v.iter().map(|x| alpha * x).collect();
            prop_assert!((seminorm_eval(&p, &scaled) - alpha.abs() * seminorm_eval(&p, &v)).abs() <= 1e-12 * (1.0 + seminorm_eval(&p, &scaled)));
        }
    }
}
