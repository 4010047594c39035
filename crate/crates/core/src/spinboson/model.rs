use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::quad::Adaptive;

/// Off-diagonal entries above this are treated as positive.
pub const STOQUASTIC_TOL: f64 = 1e-12;
const SYMMETRY_TOL: f64 = 1e-12;
const DIAGONAL_TOL: f64 = 1e-10;

/// Finite spin system with matrices given row by row.
///
/// `basis`, when present, lists the orthonormal vectors `φ_k` as rows. When
/// absent the standard basis is used if `B` is diagonal and the eigenbasis of
/// `B` (ascending eigenvalues) otherwise. Eigenvector signs are then chosen
/// greedily so that each new vector couples non-positively to earlier ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpinSystem {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub basis: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub omega: f64,
    pub nu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BosonField {
    #[serde(rename = "mode", default)]
    pub modes: Vec<Mode>,
    pub n_max: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GSBModel {
    pub spin: SpinSystem,
    pub field: BosonField,
}

/// Jump generator and potentials of the spin process.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub q: DMatrix<f64>,
    pub v: Vec<f64>,
    pub w: Vec<f64>,
}

impl Generator {
    pub fn dim(&self) -> usize {
        self.v.len()
    }

    /// Total jump rate `-Q_ii` out of state `i`.
    pub fn rate(&self, i: usize) -> f64 {
        -self.q[(i, i)]
    }
}

fn to_matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(Error::invalid(format!("{what} must be a non-empty square matrix")));
    }
    if rows.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::invalid(format!("{what} has non-finite entries")));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn from_matrix(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |s, x| s.max(x.abs()))
}

fn check_symmetric(m: &DMatrix<f64>, what: &str) -> Result<()> {
    let tol = SYMMETRY_TOL * max_abs(m).max(1.0);
    for i in 0..m.nrows() {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > tol {
                return Err(Error::invalid(format!("{what} is not symmetric at ({i}, {j})")));
            }
        }
    }
    Ok(())
}

fn is_diagonal(m: &DMatrix<f64>) -> bool {
    let tol = DIAGONAL_TOL * max_abs(m).max(1.0);
    (0..m.nrows()).all(|i| (0..m.ncols()).all(|j| i == j || m[(i, j)].abs() <= tol))
}

/// True iff every off-diagonal entry of `A` in `basis` (columns) is at most
/// [`STOQUASTIC_TOL`].
pub fn check_stoquastic(a: &DMatrix<f64>, basis: &DMatrix<f64>) -> bool {
    let m = basis.transpose() * a * basis;
    (0..m.nrows()).all(|i| (0..m.ncols()).all(|j| i == j || m[(i, j)] <= STOQUASTIC_TOL))
}

/// Kronecker product, used for building many-site spin matrices.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

pub fn sigma_x() -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])
}

pub fn sigma_z() -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0])
}

impl SpinSystem {
    pub fn new(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<Self> {
        let s = SpinSystem { a: from_matrix(a), b: from_matrix(b), basis: None };
        s.validate()?;
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        self.a.len()
    }

    pub fn a_matrix(&self) -> Result<DMatrix<f64>> {
        to_matrix(&self.a, "A")
    }

    pub fn b_matrix(&self) -> Result<DMatrix<f64>> {
        to_matrix(&self.b, "B")
    }

    /// Basis vectors as matrix columns.
    pub fn basis_matrix(&self) -> Result<DMatrix<f64>> {
        let d = self.dim();
        if let Some(rows) = &self.basis {
            let m = to_matrix(rows, "basis")?;
            if m.nrows() != d {
                return Err(Error::invalid("basis dimension differs from A"));
            }
            return Ok(m.transpose());
        }
        let b = self.b_matrix()?;
        if is_diagonal(&b) {
            return Ok(DMatrix::identity(d, d));
        }
        let eig = SymmetricEigen::new(b);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
        let mut u = DMatrix::from_fn(d, d, |i, k| eig.eigenvectors[(i, order[k])]);
        let a = self.a_matrix()?;
        for k in 1..d {
            let ak = &a * u.column(k);
            let coupling: f64 = (0..k).map(|j| u.column(j).dot(&ak)).sum();
            if coupling > 0.0 {
                u.column_mut(k).neg_mut();
            }
        }
        Ok(u)
    }

    /// `(A', B')`: both matrices expressed in the working basis.
    pub fn in_basis(&self) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let u = self.basis_matrix()?;
        let a = u.transpose() * self.a_matrix()? * &u;
        let b = u.transpose() * self.b_matrix()? * &u;
        Ok((a, b))
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d < 2 {
            return Err(Error::invalid("spin dimension must be at least 2"));
        }
        let a = self.a_matrix()?;
        let b = self.b_matrix()?;
        if b.nrows() != d {
            return Err(Error::invalid("A and B differ in dimension"));
        }
        check_symmetric(&a, "A")?;
        check_symmetric(&b, "B")?;
        let u = self.basis_matrix()?;
        let gram = u.transpose() * &u;
        if (gram - DMatrix::<f64>::identity(d, d)).amax() > 1e-10 {
            return Err(Error::invalid("basis is not orthonormal"));
        }
        if !check_stoquastic(&a, &u) {
            return Err(Error::invalid("A is not stoquastic in the basis"));
        }
        let bb = u.transpose() * b * &u;
        if !is_diagonal(&bb) {
            return Err(Error::invalid("basis does not diagonalize B"));
        }
        Ok(())
    }
}

impl BosonField {
    pub fn validate(&self) -> Result<()> {
        if self.n_max < 1 {
            return Err(Error::invalid("n_max must be at least 1"));
        }
        for m in &self.modes {
            if !(m.omega > 0.0 && m.omega.is_finite()) {
                return Err(Error::invalid(format!("mode frequency {} must be positive", m.omega)));
            }
            if !m.nu.is_finite() {
                return Err(Error::invalid("mode coupling must be finite"));
            }
        }
        Ok(())
    }

    /// `g(t) = Σ ν_k² e^{-ω_k |t|}`.
    pub fn g(&self, t: f64) -> f64 {
        self.modes.iter().map(|m| m.nu * m.nu * (-m.omega * t.abs()).exp()).sum()
    }
}

impl GSBModel {
    pub fn new(spin: SpinSystem, field: BosonField) -> Result<Self> {
        let m = GSBModel { spin, field };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        self.spin.validate()?;
        self.field.validate()
    }

    pub fn dim(&self) -> usize {
        self.spin.dim()
    }

    pub fn g(&self, t: f64) -> f64 {
        self.field.g(t)
    }

    /// Standard spin-boson model: `A = -σ_x`, `B = α σ_z`, one mode.
    pub fn ssb(alpha: f64, omega: f64, nu: f64, n_max: usize) -> Result<Self> {
        let spin = SpinSystem::new(&(-sigma_x()), &(sigma_z() * alpha))?;
        GSBModel::new(spin, BosonField { modes: vec![Mode { omega, nu }], n_max })
    }

    /// Three-level stoquastic system coupled to two modes.
    pub fn three_level(n_max: usize) -> Result<Self> {
        let a = DMatrix::from_row_slice(3, 3, &[0.0, -1.0, -0.5, -1.0, 0.0, -1.0, -0.5, -1.0, 0.0]);
        let b = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![0.8, 0.0, -0.8]));
        let spin = SpinSystem::new(&a, &b)?;
        let modes = vec![Mode { omega: 1.0, nu: 0.2 }, Mode { omega: 2.0, nu: 0.3 }];
        GSBModel::new(spin, BosonField { modes, n_max })
    }

    /// True for a two-level model with `A'` proportional to `-σ_x` and `w`
    /// antisymmetric, where the path functionals take the parity form.
    pub fn is_ssb(&self) -> bool {
        let Ok((a, b)) = self.spin.in_basis() else { return false };
        if a.nrows() != 2 {
            return false;
        }
        let scale = max_abs(&a).max(max_abs(&b)).max(1.0);
        let tol = 1e-12 * scale;
        (a[(0, 0)] - a[(1, 1)]).abs() <= tol && a[(0, 1)] < 0.0 && (b[(0, 0)] + b[(1, 1)]).abs() <= tol
    }

    /// Shifts every frequency by `epsilon`, i.e. `H + εN`.
    pub fn regularized(&self, epsilon: f64) -> Result<Self> {
        if !(epsilon >= 0.0) {
            return Err(Error::invalid("regularization must be non-negative"));
        }
        let mut m = self.clone();
        for mode in &mut m.field.modes {
            mode.omega += epsilon;
        }
        Ok(m)
    }

    /// Same model with a different occupation cutoff.
    pub fn with_n_max(&self, n_max: usize) -> Self {
        let mut m = self.clone();
        m.field.n_max = n_max;
        m
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let m: GSBModel = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

/// `(Q, v, w)` in the working basis: `v(i) = -Σ_j A'_ij`, `w(i) = -B'_ii`,
/// `Q_ij = -A'_ij` off the diagonal and rows summing to zero.
pub fn build_generator(model: &GSBModel) -> Result<Generator> {
    let (a, b) = model.spin.in_basis()?;
    let d = a.nrows();
    let v = (0..d).map(|i| -(0..d).map(|j| a[(i, j)]).sum::<f64>()).collect();
    let w = (0..d).map(|i| -b[(i, i)]).collect();
    let mut q = DMatrix::zeros(d, d);
    for i in 0..d {
        let mut out = 0.0;
        for j in 0..d {
            if i != j {
                q[(i, j)] = (-a[(i, j)]).max(0.0);
                out += q[(i, j)];
            }
        }
        q[(i, i)] = -out;
    }
    Ok(Generator { q, v, w })
}

/// `e^{-ε|t|} g(t)`, the kernel of the regularized model.
pub fn g_regularized(model: &GSBModel, t: f64, epsilon: f64) -> f64 {
    (-epsilon * t.abs()).exp() * model.g(t)
}

/// `∫₀^∞ s^{2a-1} g(s) ds = Γ(2a) Σ ν_k² ω_k^{-2a}`.
pub fn infrared_integral(model: &GSBModel, a: f64) -> Result<f64> {
    if !(a > 0.0) {
        return Err(Error::invalid("infrared exponent must be positive"));
    }
    let s: f64 = model.field.modes.iter().map(|m| m.nu * m.nu * m.omega.powf(-2.0 * a)).sum();
    Ok(gamma(2.0 * a) * s)
}

/// Quadrature route for [`infrared_integral`], after substituting
/// `s = u^{1/(2a)}`, which turns the integrand into `g(u^{1/(2a)}) / (2a)`.
pub fn infrared_integral_quadrature(model: &GSBModel, a: f64) -> Result<f64> {
    if !(a > 0.0) {
        return Err(Error::invalid("infrared exponent must be positive"));
    }
    let w_min = model.field.modes.iter().map(|m| m.omega).fold(f64::INFINITY, f64::min);
    if !w_min.is_finite() {
        return Ok(0.0);
    }
    let p = 1.0 / (2.0 * a);
    let f = |u: f64| model.g(u.powf(p)) * p;
    let u_max = (740.0 / w_min).powf(2.0 * a);
    let h0 = (1.0 / w_min).powf(2.0 * a) * 1e-3;
    Ok(Adaptive::default().with_rel(1e-13).integrate_graded(&f, 0.0, u_max, &[0.0], h0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stoquastic_examples() {
        let id = DMatrix::identity(2, 2);
        assert!(check_stoquastic(&(-sigma_x()), &id));
        assert!(!check_stoquastic(&sigma_x(), &id));
        let sy_sy = DMatrix::from_row_slice(
            4,
            4,
            &[0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0],
        );
        let heis = -(kron(&sigma_x(), &sigma_x()) + sy_sy + kron(&sigma_z(), &sigma_z()));
        assert!(check_stoquastic(&heis, &DMatrix::identity(4, 4)));
    }

    #[test]
    fn ssb_generator() {
        let m = GSBModel::ssb(0.7, 1.0, 0.2, 4).unwrap();
        let g = build_generator(&m).unwrap();
        assert_eq!(g.q, DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0]));
        assert_eq!(g.v, vec![1.0, 1.0]);
        assert_eq!(g.w, vec![-0.7, 0.7]);
        assert!(m.is_ssb());
    }

    #[test]
    fn generator_rows_sum_to_zero() {
        let m = GSBModel::three_level(2).unwrap();
        let g = build_generator(&m).unwrap();
        for i in 0..3 {
            assert_eq!(g.q.row(i).sum(), 0.0);
            for j in 0..3 {
                if i != j {
                    assert!(g.q[(i, j)] >= 0.0);
                }
            }
        }
        assert_eq!(g.q, g.q.transpose());
        assert!(!m.is_ssb());
    }

    #[test]
    fn diagonal_a_never_jumps() {
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![0.3, -0.2]));
        let spin = SpinSystem::new(&a, &sigma_z()).unwrap();
        let m = GSBModel::new(spin, BosonField { modes: vec![], n_max: 1 }).unwrap();
        let g = build_generator(&m).unwrap();
        assert_eq!(g.q, DMatrix::zeros(2, 2));
        assert_eq!(g.v, vec![-0.3, 0.2]);
    }

    #[test]
    fn non_diagonal_b_uses_its_eigenbasis() {
        // B = σ_x, A = -σ_z - σ_x: in the σ_x eigenbasis A' has off-diagonal -1
        let a = -(sigma_z() + sigma_x());
        let spin = SpinSystem::new(&a, &sigma_x()).unwrap();
        let (ap, bp) = spin.in_basis().unwrap();
        assert!((bp[(0, 0)] + 1.0).abs() < 1e-12 && (bp[(1, 1)] - 1.0).abs() < 1e-12);
        assert!((ap[(0, 1)] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_models() {
        assert!(SpinSystem::new(&sigma_x(), &sigma_z()).is_err());
        let bad = BosonField { modes: vec![Mode { omega: 0.0, nu: 1.0 }], n_max: 3 };
        assert!(bad.validate().is_err());
        assert!(GSBModel::ssb(1.0, 1.0, 0.2, 0).is_err());
    }

    #[test]
    fn g_and_regularization() {
        let m = GSBModel::three_level(2).unwrap();
        assert!((m.g(0.0) - (0.04 + 0.09)).abs() < 1e-15);
        assert!(m.g(1.0) < m.g(0.5));
        let r = m.regularized(0.3).unwrap();
        for t in [0.0, 0.4, 2.0] {
            assert!((r.g(t) - g_regularized(&m, t, 0.3)).abs() < 1e-15);
        }
        assert_eq!(m.regularized(0.0).unwrap(), m);
    }

    #[test]
    fn infrared_integral_examples() {
        let one = GSBModel::ssb(1.0, 1.0, 1.0, 2).unwrap();
        assert!((infrared_integral(&one, 1.0).unwrap() - 1.0).abs() < 1e-14);
        let m = GSBModel::three_level(2).unwrap();
        let half = infrared_integral(&m, 0.5).unwrap();
        assert!((half - (0.04 / 1.0 + 0.09 / 2.0)).abs() < 1e-14);
        for a in [0.5, 0.75, 1.0] {
            let c = infrared_integral(&m, a).unwrap();
            let q = infrared_integral_quadrature(&m, a).unwrap();
            assert!((c - q).abs() <= 1e-8 * c, "a={a}: {c} vs {q}");
        }
    }

    #[test]
    fn toml_round_trip() {
        let m = GSBModel::three_level(5).unwrap();
        let s = m.to_toml_string().unwrap();
        assert_eq!(GSBModel::from_toml_str(&s).unwrap(), m);
        let text = "[spin]\na = [[0.0, -1.0], [-1.0, 0.0]]\nb = [[0.5, 0.0], [0.0, -0.5]]\n\n[field]\nn_max = 6\n\n[[field.mode]]\nomega = 1.0\nnu = 0.2\n";
        let p = GSBModel::from_toml_str(text).unwrap();
        assert_eq!(p, GSBModel::ssb(0.5, 1.0, 0.2, 6).unwrap());
    }
}
