//! Guccione passive law, volumetric penalty and orthotropic active stress.

use nalgebra::{Matrix3, SMatrix, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Robin support of the epicardium: normal/tangential stiffness (Pa/m) and
/// viscosity (Pa·s/m).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RobinParams {
    pub k_normal: f64,
    pub k_tangential: f64,
    pub c_normal: f64,
    pub c_tangential: f64,
}

impl Default for RobinParams {
    fn default() -> Self {
        Self {
            k_normal: 2e5,
            k_tangential: 2e4,
            c_normal: 2e4,
            c_tangential: 2e3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaterialParams {
    /// Guccione stiffness (Pa).
    pub a: f64,
    /// Bulk modulus (Pa).
    pub kappa: f64,
    pub b_ff: f64,
    pub b_ss: f64,
    pub b_nn: f64,
    pub b_fs: f64,
    pub b_fn: f64,
    pub b_sn: f64,
    /// Density (kg/m³).
    pub rho: f64,
    /// Active-tension proportions along (f0, s0, n0).
    pub n_f: f64,
    pub n_s: f64,
    pub n_n: f64,
    pub robin: RobinParams,
}

impl Default for MaterialParams {
    fn default() -> Self {
        Self {
            a: 0.88e3,
            kappa: 50e3,
            b_ff: 8.0,
            b_ss: 6.0,
            b_nn: 3.0,
            b_fs: 12.0,
            b_fn: 3.0,
            b_sn: 3.0,
            rho: 1e3,
            n_f: 0.7,
            n_s: 0.0,
            n_n: 0.3,
            robin: RobinParams::default(),
        }
    }
}

impl MaterialParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0) || !(self.kappa > 0.0) {
            return Err(Error::InvalidParameter("stiffness a and bulk modulus must be positive".into()));
        }
        let b = [self.b_ff, self.b_ss, self.b_nn, self.b_fs, self.b_fn, self.b_sn];
        if b.iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::InvalidParameter("Guccione exponents must be nonnegative".into()));
        }
        if [self.n_f, self.n_s, self.n_n].iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::InvalidParameter("active proportions must be nonnegative".into()));
        }
        if !(self.rho >= 0.0) {
            return Err(Error::InvalidParameter("density must be nonnegative".into()));
        }
        let r = &self.robin;
        if [r.k_normal, r.k_tangential, r.c_normal, r.c_tangential].iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::InvalidParameter("Robin coefficients must be nonnegative".into()));
        }
        Ok(())
    }

    fn b_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.b_ff, self.b_fs, self.b_fn, self.b_fs, self.b_ss, self.b_sn, self.b_fn, self.b_sn, self.b_nn,
        )
    }

    pub fn proportions(&self) -> [f64; 3] {
        [self.n_f, self.n_s, self.n_n]
    }
}

fn check_j(f: &Matrix3<f64>) -> Result<(f64, Matrix3<f64>)> {
    let j = f.determinant();
    if !(j > 0.0) {
        return Err(Error::InvertedElement {
            element: usize::MAX,
            qp: usize::MAX,
            det: j,
        });
    }
    let finv = f.try_inverse().ok_or(Error::InvertedElement {
        element: usize::MAX,
        qp: usize::MAX,
        det: j,
    })?;
    Ok((j, finv))
}

/// Green–Lagrange strain in the fiber frame R = [f0 s0 n0].
fn strain_bar(f: &Matrix3<f64>, r: &Matrix3<f64>) -> Matrix3<f64> {
    let e = (f.transpose() * f - Matrix3::identity()) * 0.5;
    r.transpose() * e * r
}

/// Strain energy density W(F) (J/m³).
pub fn strain_energy(f: &Matrix3<f64>, r: &Matrix3<f64>, m: &MaterialParams) -> Result<f64> {
    let (j, _) = check_j(f)?;
    let eb = strain_bar(f, r);
    let q = m.b_matrix().component_mul(&eb).component_mul(&eb).sum();
    Ok(0.5 * m.kappa * (j - 1.0) * j.ln() + 0.5 * m.a * (q.exp() - 1.0))
}

/// Passive first Piola–Kirchhoff stress ∂W/∂F (Pa).
pub fn passive_piola(f: &Matrix3<f64>, r: &Matrix3<f64>, m: &MaterialParams) -> Result<Matrix3<f64>> {
    let (j, finv) = check_j(f)?;
    let eb = strain_bar(f, r);
    let be = m.b_matrix().component_mul(&eb);
    let q = be.component_mul(&eb).sum();
    let s = r * (be * (m.a * q.exp())) * r.transpose();
    let g = 0.5 * m.kappa * (j * j.ln() + j - 1.0);
    Ok(f * s + finv.transpose() * g)
}

/// Active first Piola–Kirchhoff stress T_a Σ n_k (F k0 ⊗ k0)/√I4k (Pa).
pub fn active_piola(f: &Matrix3<f64>, r: &Matrix3<f64>, ta: f64, n: [f64; 3]) -> Matrix3<f64> {
    let mut p = Matrix3::zeros();
    if ta == 0.0 {
        return p;
    }
    for k in 0..3 {
        if n[k] == 0.0 {
            continue;
        }
        let k0: Vector3<f64> = r.column(k).into();
        let fk = f * k0;
        p += fk * k0.transpose() * (ta * n[k] / fk.norm());
    }
    p
}

/// Total stress and its derivative dP/dF as a 9×9 matrix acting on
/// row-major vectorized tensors: dP[3i+J][3k+L] = ∂P_iJ/∂F_kL.
pub fn stress_and_tangent(
    f: &Matrix3<f64>,
    r: &Matrix3<f64>,
    ta: f64,
    m: &MaterialParams,
) -> Result<(Matrix3<f64>, SMatrix<f64, 9, 9>)> {
    let (j, finv) = check_j(f)?;
    let finv_t = finv.transpose();
    let bm = m.b_matrix();
    let eb = strain_bar(f, r);
    let be = bm.component_mul(&eb);
    let eq = m.a * be.component_mul(&eb).sum().exp();
    if !eq.is_finite() {
        return Err(Error::InvalidParameter("Guccione exponent overflow".into()));
    }
    let sbar = be * eq;
    let s = r * sbar * r.transpose();
    let g = 0.5 * m.kappa * (j * j.ln() + j - 1.0);
    let gp = 0.5 * m.kappa * (j.ln() + 2.0);
    let n = m.proportions();
    let mut p = f * s + finv_t * g;
    p += active_piola(f, r, ta, n);

    let active: Vec<(f64, Vector3<f64>, Vector3<f64>, f64)> = (0..3)
        .filter(|&k| ta != 0.0 && n[k] != 0.0)
        .map(|k| {
            let k0: Vector3<f64> = r.column(k).into();
            let fk = f * k0;
            let len = fk.norm();
            (ta * n[k], k0, fk, len)
        })
        .collect();

    let mut c = SMatrix::<f64, 9, 9>::zeros();
    for kk in 0..3 {
        for ll in 0..3 {
            let mut df = Matrix3::zeros();
            df[(kk, ll)] = 1.0;
            let de = (df.transpose() * f + f.transpose() * df) * 0.5;
            let deb = r.transpose() * de * r;
            let dq = 2.0 * be.component_mul(&deb).sum();
            let dsbar = sbar * dq + bm.component_mul(&deb) * eq;
            let ds = r * dsbar * r.transpose();
            let dj = j * finv[(ll, kk)];
            let dfinv_t = -finv_t * df.transpose() * finv_t;
            let mut dp = df * s + f * ds + finv_t * (gp * dj) + dfinv_t * g;
            for (t, k0, fk, len) in &active {
                let dfk = df * k0;
                dp += (dfk * k0.transpose()) * (t / len) - (fk * k0.transpose()) * (t * fk.dot(&dfk) / len.powi(3));
            }
            for i in 0..3 {
                for jj in 0..3 {
                    c[(3 * i + jj, 3 * kk + ll)] = dp[(i, jj)];
                }
            }
        }
    }
    Ok((p, c))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_is_stress_free() {
        let m = MaterialParams::default();
        let p = passive_piola(&Matrix3::identity(), &Matrix3::identity(), &m).unwrap();
        assert!(p.norm() < 1e-12);
    }

    #[test]
    fn active_examples() {
        let r = Matrix3::identity();
        assert_eq!(active_piola(&Matrix3::identity(), &r, 0.0, [0.7, 0.0, 0.3]), Matrix3::zeros());
        let p = active_piola(&Matrix3::identity(), &r, 5.0, [1.0, 0.0, 0.0]);
        assert!((p - Vector3::x() * Vector3::x().transpose() * 5.0).norm() < 1e-15);
        let p = active_piola(&Matrix3::identity(), &r, 1.0, [0.7, 0.0, 0.3]);
        let expect = Matrix3::from_diagonal(&Vector3::new(0.7, 0.0, 0.3));
        assert!((p - expect).norm() < 1e-15);
    }

    #[test]
    fn inverted_state_rejected() {
        let f = Matrix3::from_diagonal(&Vector3::new(-1.0, 1.0, 1.0));
        assert!(passive_piola(&f, &Matrix3::identity(), &MaterialParams::default()).is_err());
    }

    fn random_state(rng: &mut rand_chacha::ChaCha8Rng) -> (Matrix3<f64>, Matrix3<f64>) {
        use rand::Rng;
        let f = Matrix3::from_fn(|i, j| if i == j { 1.0 } else { 0.0 } + rng.random_range(-0.15..0.15));
        let r = nalgebra::Rotation3::from_scaled_axis(Vector3::from_fn(|_, _| rng.random_range(-3.0..3.0)));
        (f, *r.matrix())
    }

    #[test]
    fn piola_and_tangent_match_finite_differences() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let m = MaterialParams::default();
        for _ in 0..20 {
            let (f, r) = random_state(&mut rng);
            let p = passive_piola(&f, &r, &m).unwrap();
            let (pt, c) = stress_and_tangent(&f, &r, 3e4, &m).unwrap();
            let h = 1e-6;
            for k in 0..3 {
                for l in 0..3 {
                    let mut fp = f;
                    let mut fm = f;
                    fp[(k, l)] += h;
                    fm[(k, l)] -= h;
                    let dw = (strain_energy(&fp, &r, &m).unwrap() - strain_energy(&fm, &r, &m).unwrap()) / (2.0 * h);
                    assert!((dw - p[(k, l)]).abs() <= 1e-5 * p.norm());
                    let pp = passive_piola(&fp, &r, &m).unwrap() + active_piola(&fp, &r, 3e4, m.proportions());
                    let pm = passive_piola(&fm, &r, &m).unwrap() + active_piola(&fm, &r, 3e4, m.proportions());
                    let dp = (pp - pm) / (2.0 * h);
                    for i in 0..3 {
                        for j in 0..3 {
                            assert!((dp[(i, j)] - c[(3 * i + j, 3 * k + l)]).abs() <= 1e-5 * c.norm());
                        }
                    }
                }
            }
            assert!((pt - p - active_piola(&f, &r, 3e4, m.proportions())).norm() < 1e-9 * pt.norm());
        }
    }

    #[test]
    fn energy_is_frame_indifferent() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        let m = MaterialParams::default();
        for _ in 0..20 {
            let (f, r) = random_state(&mut rng);
            let (_, q) = random_state(&mut rng);
            let w = strain_energy(&f, &r, &m).unwrap();
            let wq = strain_energy(&(q * f), &r, &m).unwrap();
            assert!((w - wq).abs() < 1e-12 * w.abs().max(1.0));
        }
        assert_eq!(strain_energy(&Matrix3::identity(), &Matrix3::identity(), &m).unwrap(), 0.0);
    }
}
