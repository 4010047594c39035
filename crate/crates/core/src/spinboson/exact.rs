use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::model::GSBModel;
use crate::error::{Error, Result};
use crate::measure::{Atom, ProbabilityMeasure};

/// Default bound on the truncated Hilbert-space dimension.
pub const DEFAULT_CAP: usize = 20_000;
/// Eigenvalues within this relative distance of the minimum form the ground space.
pub const GROUND_RTOL: f64 = 1e-10;
/// Required stability of `E` and `ρ` when `n_max` grows by two.
pub const TRUNCATION_ATOL: f64 = 1e-8;

/// Truncated `H`, the diagonal of `N` and the reference vector
/// `ψ = d^{-1/2} Σ φ_k ⊗ Ω`.
///
/// Index layout is spin-major: `s · M + Σ_k n_k (n_max + 1)^k` with `M` the
/// Fock dimension.
#[derive(Debug, Clone)]
pub struct TruncatedSystem {
    pub h: DMatrix<f64>,
    pub number: DVector<f64>,
    pub psi: DVector<f64>,
    pub spin_dim: usize,
    pub fock_dim: usize,
}

impl TruncatedSystem {
    pub fn dim(&self) -> usize {
        self.psi.len()
    }

    pub fn number_operator(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.number)
    }

    /// Spin state of basis index `idx`.
    pub fn spin_of(&self, idx: usize) -> usize {
        idx / self.fock_dim
    }
}

/// Annihilation operator of one mode truncated at `n_max`.
pub fn annihilation(n_max: usize) -> DMatrix<f64> {
    let n = n_max + 1;
    DMatrix::from_fn(n, n, |i, j| if j == i + 1 { (j as f64).sqrt() } else { 0.0 })
}

pub fn assemble_truncated(model: &GSBModel, cap: usize) -> Result<TruncatedSystem> {
    model.validate()?;
    let (a, b) = model.spin.in_basis()?;
    let d = a.nrows();
    let levels = model.field.n_max + 1;
    let k = model.field.modes.len();
    let fock = (0..k).try_fold(1usize, |acc, _| acc.checked_mul(levels));
    let total = fock.and_then(|f| f.checked_mul(d));
    let (fock, total) = match (fock, total) {
        (Some(f), Some(t)) if t <= cap => (f, t),
        _ => return Err(Error::invalid(format!("truncated dimension {d} x {levels}^{k} exceeds the cap {cap}"))),
    };
    let occ = |f: usize, mode: usize| (f / levels.pow(mode as u32)) % levels;
    let mut h = DMatrix::zeros(total, total);
    let mut number = DVector::zeros(total);
    for f in 0..fock {
        let n_tot: usize = (0..k).map(|m| occ(f, m)).sum();
        let e_field: f64 = (0..k).map(|m| model.field.modes[m].omega * occ(f, m) as f64).sum();
        for s in 0..d {
            let i = s * fock + f;
            number[i] = n_tot as f64;
            h[(i, i)] += e_field;
            for s2 in 0..d {
                h[(i, s2 * fock + f)] += a[(s, s2)];
            }
        }
        for (m, mode) in model.field.modes.iter().enumerate() {
            let n = occ(f, m);
            if n + 1 >= levels {
                continue;
            }
            let f_up = f + levels.pow(m as u32);
            let amp = mode.nu * ((n + 1) as f64).sqrt();
            for s in 0..d {
                for s2 in 0..d {
                    let c = b[(s, s2)] * amp;
                    if c != 0.0 {
                        h[(s * fock + f_up, s2 * fock + f)] += c;
                        h[(s2 * fock + f, s * fock + f_up)] += c;
                    }
                }
            }
        }
    }
    let mut psi = DVector::zeros(total);
    for s in 0..d {
        psi[s * fock] = 1.0 / (d as f64).sqrt();
    }
    Ok(TruncatedSystem { h, number, psi, spin_dim: d, fock_dim: fock })
}

/// `∫₀^T e^{-s a - (T-s) b} ds` for `a, b ≥ 0`, stable for `a ≈ b`.
pub fn mixed_exp_integral(t: f64, a: f64, b: f64) -> f64 {
    let lo = a.min(b);
    (-t * lo).exp() * t * phi0(t * (a - b).abs())
}

/// `∫₀¹ e^{-xu} du`.
pub fn phi0(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - 0.5 * x
    } else {
        -(-x).exp_m1() / x
    }
}

/// Eigendecomposition of a truncated model with eigenvalues shifted so the
/// smallest is zero.
#[derive(Debug, Clone)]
pub struct Eigensystem {
    pub e0: f64,
    pub gaps: DVector<f64>,
    pub vectors: DMatrix<f64>,
    /// `Vᵀψ`.
    pub c: DVector<f64>,
    pub system: TruncatedSystem,
    pub w: Vec<f64>,
    modes: Vec<(f64, f64)>,
}

impl Eigensystem {
    pub fn new(model: &GSBModel, cap: usize) -> Result<Self> {
        let system = assemble_truncated(model, cap)?;
        let eig = SymmetricEigen::new(system.h.clone());
        let n = system.dim();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
        let e0 = eig.eigenvalues[order[0]];
        let gaps = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i] - e0));
        let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
        let c = vectors.transpose() * &system.psi;
        let (_, b) = model.spin.in_basis()?;
        let w = (0..b.nrows()).map(|i| -b[(i, i)]).collect();
        let modes = model.field.modes.iter().map(|m| (m.omega, m.nu)).collect();
        Ok(Eigensystem { e0, gaps, vectors, c, system, w, modes })
    }

    pub fn dim(&self) -> usize {
        self.gaps.len()
    }

    /// Number of eigenvalues in the ground cluster.
    pub fn degeneracy(&self) -> usize {
        let tol = GROUND_RTOL * self.e0.abs().max(1.0);
        self.gaps.iter().take_while(|&&g| g <= tol).count()
    }

    pub fn rho(&self) -> f64 {
        (0..self.degeneracy()).map(|j| self.c[j] * self.c[j]).sum()
    }

    /// `⟨φ, Nφ⟩` for `φ` the normalized ground-space projection of `ψ`.
    pub fn phi_number(&self) -> f64 {
        let g = self.degeneracy();
        let rho = self.rho();
        if rho <= 0.0 {
            return f64::NAN;
        }
        let mut phi = DVector::zeros(self.dim());
        for j in 0..g {
            phi.axpy(self.c[j], &self.vectors.column(j), 1.0);
        }
        phi.iter().zip(self.system.number.iter()).map(|(p, n)| p * p * n).sum::<f64>() / rho
    }

    /// `log Z_T = log ⟨ψ, e^{-TH} ψ⟩`.
    pub fn log_z(&self, t: f64) -> f64 {
        let s: f64 = self.c.iter().zip(self.gaps.iter()).map(|(c, g)| c * c * (-t * g).exp()).sum();
        s.ln() - t * self.e0
    }

    fn shifted_z(&self, t: f64) -> f64 {
        self.c.iter().zip(self.gaps.iter()).map(|(c, g)| c * c * (-t * g).exp()).sum()
    }

    /// Spin multiplication operator `w ⊗ 1` in the eigenbasis.
    fn w_eigen(&self) -> DMatrix<f64> {
        let f = self.system.fock_dim;
        let diag = DVector::from_fn(self.dim(), |i, _| self.w[i / f]);
        let wv = DMatrix::from_diagonal(&diag) * &self.vectors;
        self.vectors.transpose() * wv
    }

    fn decay(&self, t: f64, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(x.len(), |j, _| x[j] * (-t * self.gaps[j]).exp())
    }

    /// Exact path-measure correlations `E_T[w(X_s) w(X_t)]` on `grid × grid`,
    /// row-major.
    pub fn correlations(&self, t_end: f64, grid: &[f64]) -> Vec<f64> {
        let m = self.w_eigen();
        let z = self.shifted_z(t_end);
        let g = grid.len();
        let mut out = vec![0.0; g * g];
        for (i, &s) in grid.iter().enumerate() {
            let left = &m * self.decay(s, &self.c);
            for (j, &t) in grid.iter().enumerate().skip(i) {
                let right = &m * self.decay(t_end - t, &self.c);
                let mid: f64 = (0..self.dim()).map(|l| left[l] * (-(t - s) * self.gaps[l]).exp() * right[l]).sum();
                out[i * g + j] = mid / z;
                out[j * g + i] = mid / z;
            }
        }
        out
    }

    /// `(1/T) ∫₀^T ⟨e^{-sH}ψ, N e^{-(T-s)H}ψ⟩ ds / Z_T`, the exact value of
    /// the upper-bound path functional without the `log d` term.
    pub fn upper_functional(&self, t: f64) -> f64 {
        let n = self.dim();
        let nv = DMatrix::from_diagonal(&self.system.number) * &self.vectors;
        let ne = self.vectors.transpose() * nv;
        let mut acc = 0.0;
        for a in 0..n {
            for b in 0..n {
                let x = self.c[a] * ne[(a, b)] * self.c[b];
                if x != 0.0 {
                    acc += x * mixed_exp_integral(t, self.gaps[a], self.gaps[b]);
                }
            }
        }
        acc / (t * self.shifted_z(t))
    }

    /// Start-state law `p_i = P_T(X_0 = i)` and `A_ik = E_T[1{X_0=i} c_k]`
    /// with `c_k = ∫₀^T e^{-ω_k u} w(X_u) du`.
    pub fn lower_bound_terms(&self, t: f64) -> (Vec<f64>, Vec<Vec<f64>>) {
        let d = self.system.spin_dim;
        let f = self.system.fock_dim;
        let n = self.dim();
        let m = self.w_eigen();
        let z = self.shifted_z(t);
        let mut p = vec![0.0; d];
        let mut amat = vec![vec![0.0; self.modes.len()]; d];
        for i in 0..d {
            // Vᵀ P_i ψ: only the vacuum row of spin i contributes
            let pi_psi: DVector<f64> = self.vectors.row(i * f).transpose() * self.system.psi[i * f];
            p[i] = (0..n).map(|j| pi_psi[j] * (-t * self.gaps[j]).exp() * self.c[j]).sum::<f64>() / z;
            for (k, &(omega, _)) in self.modes.iter().enumerate() {
                let mut acc = 0.0;
                for j in 0..n {
                    if pi_psi[j] == 0.0 {
                        continue;
                    }
                    for l in 0..n {
                        let x = pi_psi[j] * m[(j, l)] * self.c[l];
                        if x != 0.0 {
                            acc += x * mixed_exp_integral(t, omega + self.gaps[j], self.gaps[l]);
                        }
                    }
                }
                amat[i][k] = acc / z;
            }
        }
        (p, amat)
    }

    /// `∬ g(u+v) E_{T,T}[w(X_u) w(Y_v) | X_0 = Y_0] du dv` for two
    /// independent copies.
    pub fn lower_functional(&self, t: f64) -> f64 {
        let (p, a) = self.lower_bound_terms(t);
        lower_from_terms(&self.modes, &p, &a, &p, &a)
    }

    /// Spectral measure of `H` with respect to `ψ`, with the ground cluster
    /// and any other numerically coincident eigenvalues merged.
    pub fn spectral_measure(&self) -> Result<ProbabilityMeasure> {
        let tol = GROUND_RTOL * self.e0.abs().max(1.0);
        let mut atoms: Vec<Atom> = Vec::new();
        for j in 0..self.dim() {
            let mass = self.c[j] * self.c[j];
            let x = self.e0 + self.gaps[j];
            match atoms.last_mut() {
                Some(a) if self.gaps[j] - (a.location - self.e0) <= tol => a.mass += mass,
                _ => atoms.push(Atom { location: x, mass }),
            }
        }
        atoms.retain(|a| a.mass > 1e-300);
        let total: f64 = atoms.iter().map(|a| a.mass).sum();
        for a in &mut atoms {
            a.mass /= total;
        }
        let m = ProbabilityMeasure::new(atoms, vec![])?;
        Ok(m)
    }
}

/// `Σ_k ν_k² Σ_i A_ik A'_ik / Σ_i p_i p'_i`.
pub(crate) fn lower_from_terms(modes: &[(f64, f64)], p: &[f64], a: &[Vec<f64>], p2: &[f64], a2: &[Vec<f64>]) -> f64 {
    let norm: f64 = p.iter().zip(p2).map(|(x, y)| x * y).sum();
    let mut acc = 0.0;
    for (k, &(_, nu)) in modes.iter().enumerate() {
        let s: f64 = a.iter().zip(a2).map(|(x, y)| x[k] * y[k]).sum();
        acc += nu * nu * s;
    }
    acc / norm
}

/// Ground-state data of a truncated model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactGround {
    pub n_max: usize,
    pub dim: usize,
    pub energy: f64,
    pub rho: f64,
    pub log_inv_rho: f64,
    pub phi_number: f64,
    pub degeneracy: usize,
    pub spectrum_head: Vec<f64>,
    /// Changes of `E` and `ρ` under `n_max → n_max + 2`.
    pub delta_energy: f64,
    pub delta_rho: f64,
    pub converged: bool,
}

fn ground_data(es: &Eigensystem, n_max: usize) -> ExactGround {
    let rho = es.rho();
    ExactGround {
        n_max,
        dim: es.dim(),
        energy: es.e0,
        rho,
        log_inv_rho: -rho.ln(),
        phi_number: es.phi_number(),
        degeneracy: es.degeneracy(),
        spectrum_head: es.gaps.iter().take(8).map(|g| g + es.e0).collect(),
        delta_energy: f64::NAN,
        delta_rho: f64::NAN,
        converged: false,
    }
}

/// Ground-state data with the truncation check; the result is returned even
/// when the check fails, with `converged = false`.
pub fn exact_ground_report(model: &GSBModel, cap: usize, atol: f64) -> Result<ExactGround> {
    let es = Eigensystem::new(model, cap)?;
    let mut g = ground_data(&es, model.field.n_max);
    let finer = Eigensystem::new(&model.with_n_max(model.field.n_max + 2), cap)?;
    g.delta_energy = (finer.e0 - es.e0).abs();
    g.delta_rho = (finer.rho() - es.rho()).abs();
    g.converged = g.delta_energy <= atol && g.delta_rho <= atol;
    Ok(g)
}

/// Ground-state data, failing with a gate error if the truncation is not
/// converged.
pub fn exact_ground(model: &GSBModel, cap: usize) -> Result<ExactGround> {
    let g = exact_ground_report(model, cap, TRUNCATION_ATOL)?;
    if !g.converged {
        return Err(Error::gate(format!(
            "truncation at n_max = {} not converged: dE = {:e}, drho = {:e}",
            g.n_max, g.delta_energy, g.delta_rho
        )));
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spinboson::model::{build_generator, sigma_x, sigma_z, BosonField, Mode, SpinSystem};

    fn decoupled() -> GSBModel {
        GSBModel::ssb(0.8, 1.0, 0.0, 4).unwrap()
    }

    #[test]
    fn commutator_holds_below_the_top_level() {
        let a = annihilation(5);
        let c = &a * a.transpose() - a.transpose() * &a;
        for i in 0..6 {
            let want = if i == 5 { -5.0 } else { 1.0 };
            assert!((c[(i, i)] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn assembled_matrix_is_symmetric_with_unit_psi() {
        let s = assemble_truncated(&GSBModel::three_level(3).unwrap(), DEFAULT_CAP).unwrap();
        assert_eq!(s.dim(), 3 * 16);
        assert!((&s.h - s.h.transpose()).amax() == 0.0);
        assert!((s.psi.norm() - 1.0).abs() < 1e-15);
        assert!(assemble_truncated(&GSBModel::three_level(200).unwrap(), DEFAULT_CAP).is_err());
    }

    #[test]
    fn decoupled_ssb() {
        let g = exact_ground(&decoupled(), DEFAULT_CAP).unwrap();
        assert!((g.energy + 1.0).abs() < 1e-12);
        assert!((g.rho - 1.0).abs() < 1e-12);
        assert!(g.phi_number.abs() < 1e-12);
    }

    #[test]
    fn massive_fixtures_have_positive_overlap() {
        for m in [
            GSBModel::ssb(0.5, 1.0, 0.2, 12).unwrap(),
            GSBModel::ssb(1.0, 1.0, 0.2, 12).unwrap(),
            GSBModel::three_level(8).unwrap(),
        ] {
            let g = exact_ground(&m, DEFAULT_CAP).unwrap();
            assert!(g.rho > 0.5 && g.rho < 1.0, "{g:?}");
            assert!(g.phi_number > 0.0);
            assert!(g.log_inv_rho <= (m.dim() as f64).ln() + g.phi_number);
        }
    }

    #[test]
    fn coarse_truncation_fails_the_gate() {
        let m = GSBModel::ssb(3.0, 0.5, 1.0, 2).unwrap();
        assert!(exact_ground(&m, DEFAULT_CAP).unwrap_err().is_gate());
    }

    #[test]
    fn log_z_matches_diagonal_closed_form() {
        // no jumps: Z_T = (1/d) Σ_i exp(w_i² ν² ∫∫_{s<t} e^{-ω(t-s)} + T v_i)
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 0.4]));
        let spin = SpinSystem::new(&a, &(sigma_z() * 0.5)).unwrap();
        let m = GSBModel::new(spin, BosonField { modes: vec![Mode { omega: 1.5, nu: 0.3 }], n_max: 20 }).unwrap();
        let gen = build_generator(&m).unwrap();
        let es = Eigensystem::new(&m, DEFAULT_CAP).unwrap();
        for t in [0.5f64, 2.0, 6.0] {
            let om = 1.5f64;
            let dbl = t / om - (1.0 - (-om * t).exp()) / (om * om);
            let z: f64 = (0..2).map(|i| (0.09 * gen.w[i] * gen.w[i] * dbl + t * gen.v[i]).exp()).sum::<f64>() / 2.0;
            assert!((es.log_z(t) - z.ln()).abs() < 1e-10, "t={t}");
        }
    }

    #[test]
    fn free_chain_correlations() {
        let m = GSBModel::ssb(1.0, 1.0, 0.0, 2).unwrap();
        let es = Eigensystem::new(&m, DEFAULT_CAP).unwrap();
        let grid = [0.0, 0.3, 1.0, 2.5];
        let c = es.correlations(3.0, &grid);
        for (i, s) in grid.iter().enumerate() {
            for (j, t) in grid.iter().enumerate() {
                assert!((c[i * 4 + j] - (-2.0 * (t - s).abs()).exp()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn upper_functional_matches_correlation_quadrature() {
        // (1/2T) ∬ |t-s| g(t-s) W(s,t) on a fine grid
        let m = GSBModel::ssb(1.0, 1.0, 0.2, 10).unwrap();
        let es = Eigensystem::new(&m, DEFAULT_CAP).unwrap();
        let t_end = 3.0;
        let n = 301;
        let grid: Vec<f64> = (0..n).map(|i| t_end * i as f64 / (n - 1) as f64).collect();
        let c = es.correlations(t_end, &grid);
        let h = grid[1];
        let wt = |i: usize| if i == 0 || i == n - 1 { 0.5 * h } else { h };
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                let r = (grid[i] - grid[j]).abs();
                acc += wt(i) * wt(j) * r * m.g(r) * c[i * n + j];
            }
        }
        let quad = acc / (2.0 * t_end);
        let exact = es.upper_functional(t_end);
        assert!((quad - exact).abs() < 1e-4 * exact, "{quad} vs {exact}");
    }

    #[test]
    fn lower_functional_is_below_log_inv_rho() {
        for m in [GSBModel::ssb(1.0, 1.0, 0.2, 12).unwrap(), GSBModel::three_level(8).unwrap()] {
            let es = Eigensystem::new(&m, DEFAULT_CAP).unwrap();
            let target = -es.rho().ln();
            let (p, _) = es.lower_bound_terms(4.0);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for t in [2.0, 4.0, 8.0, 16.0] {
                let l = es.lower_functional(t);
                assert!(l > 0.0 && l <= target, "T={t}: {l} vs {target}");
            }
        }
    }

    #[test]
    fn spectral_measure_carries_rho() {
        let m = GSBModel::three_level(6).unwrap();
        let es = Eigensystem::new(&m, DEFAULT_CAP).unwrap();
        let mu = es.spectral_measure().unwrap();
        assert!((mu.atoms[0].mass - es.rho()).abs() < 1e-12);
        assert!((mu.atoms[0].location - es.e0).abs() < 1e-12);
    }

    #[test]
    fn regularization_shifts_energy_continuously() {
        let m = GSBModel::ssb(1.0, 0.3, 0.3, 14).unwrap();
        let e = exact_ground_report(&m, DEFAULT_CAP, 1e-6).unwrap();
        let mut last = f64::INFINITY;
        for eps in [0.4, 0.2, 0.1, 0.05] {
            let r = exact_ground_report(&m.regularized(eps).unwrap(), DEFAULT_CAP, 1e-6).unwrap();
            assert!(r.energy >= e.energy - 1e-12);
            let gap = r.energy - e.energy;
            assert!(gap <= last);
            last = gap;
        }
        assert!(last < 0.05);
    }

    #[test]
    fn sigma_x_two_site_is_not_a_valid_model() {
        assert!(SpinSystem::new(&sigma_x(), &sigma_z()).is_err());
    }
}
