//! Third-order Birch-Murnaghan equation of state, fitted by Levenberg-Marquardt.

use nalgebra::{DMatrix, DVector, Matrix4, Vector4};

use super::NumericsError;
use crate::structlab::StructureModel;
use crate::units::RY_PER_A3_TO_GPA;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EosFit {
    /// Ry
    pub e0: f64,
    /// Å^3
    pub v0: f64,
    /// Ry/Å^3
    pub b0: f64,
    pub b0_prime: f64,
    /// Euclidean norm of the energy residuals (Ry).
    pub residual_norm: f64,
}

impl EosFit {
    pub fn b0_gpa(&self) -> f64 {
        self.b0 * RY_PER_A3_TO_GPA
    }

    pub fn energy(&self, v: f64) -> f64 {
        bm3_energy(self.e0, self.v0, self.b0, self.b0_prime, v)
    }
}

/// E(V) = E0 + 9 V0 B0 / 16 * { u^3 B0' + u^2 (6 - 4x) },  x = (V0/V)^(2/3),  u = x - 1.
pub fn bm3_energy(e0: f64, v0: f64, b0: f64, bp: f64, v: f64) -> f64 {
    let x = (v0 / v).powf(2.0 / 3.0);
    let u = x - 1.0;
    e0 + 9.0 * v0 * b0 / 16.0 * (u * u * u * bp + u * u * (6.0 - 4.0 * x))
}

/// Partial derivatives with respect to (E0, V0, B0, B0').
fn bm3_gradient(v0: f64, b0: f64, bp: f64, v: f64) -> [f64; 4] {
    let x = (v0 / v).powf(2.0 / 3.0);
    let u = x - 1.0;
    let g = u * u * u * bp + u * u * (6.0 - 4.0 * x);
    let dg_dx = 3.0 * u * u * bp + 2.0 * u * (6.0 - 4.0 * x) - 4.0 * u * u;
    [
        1.0,
        9.0 * b0 / 16.0 * (g + 2.0 * x / 3.0 * dg_dx),
        9.0 * v0 / 16.0 * g,
        9.0 * v0 * b0 / 16.0 * u * u * u,
    ]
}

/// Least-squares parabola in centred, scaled volume t = (V - m) / w.
/// Returns (vertex V, vertex E, d2E/dV2, residual norm).
fn quadratic(volumes: &[f64], energies: &[f64]) -> Option<(f64, f64, f64, f64)> {
    let n = volumes.len();
    let m = volumes.iter().sum::<f64>() / n as f64;
    let w = volumes.iter().fold(0.0f64, |a, v| a.max((v - m).abs()));
    let t: Vec<f64> = volumes.iter().map(|v| (v - m) / w).collect();
    let a = DMatrix::from_fn(n, 3, |i, j| t[i].powi(j as i32));
    let b = DVector::from_column_slice(energies);
    let d = a.clone().svd(true, true).solve(&b, 1e-14).ok()?;
    let residual = (&a * &d - &b).norm();
    let (d0, d1, d2) = (d[0], d[1], d[2]);
    let tv = -d1 / (2.0 * d2);
    Some((m + w * tv, d0 - d1 * d1 / (4.0 * d2), 2.0 * d2 / (w * w), residual))
}

const MAX_ITER: usize = 500;
const GRAD_TOL: f64 = 1e-10;

/// Fit BM3 to (V, E) samples. Energies are shifted by their mean internally.
pub fn fit_eos(volumes: &[f64], energies: &[f64]) -> Result<EosFit, NumericsError> {
    if volumes.len() != energies.len() {
        return Err(NumericsError::InvalidInput(format!(
            "{} volumes but {} energies",
            volumes.len(),
            energies.len()
        )));
    }
    if volumes.len() < 5 {
        return Err(NumericsError::InvalidInput("need at least 5 points".into()));
    }
    if volumes.iter().chain(energies).any(|v| !v.is_finite()) || volumes.iter().any(|&v| v <= 0.0) {
        return Err(NumericsError::InvalidInput("volumes must be positive and all values finite".into()));
    }
    let mut pts: Vec<(f64, f64)> = volumes.iter().copied().zip(energies.iter().copied()).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    if pts.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(NumericsError::InvalidInput("duplicate volume".into()));
    }
    let imin = (0..pts.len()).min_by(|&a, &b| pts[a].1.total_cmp(&pts[b].1)).unwrap();
    if imin == 0 || imin == pts.len() - 1 {
        return Err(NumericsError::NoInteriorMinimum);
    }
    let (vs, es): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    let shift = es.iter().sum::<f64>() / es.len() as f64;
    let es: Vec<f64> = es.iter().map(|e| e - shift).collect();
    let (vmin, vmax) = (vs[0], vs[vs.len() - 1]);

    let (v0, e_v0, curvature, quad_res) =
        quadratic(&vs, &es).ok_or_else(|| NumericsError::FitDiverged("singular quadratic fit".into()))?;
    if !(curvature > 0.0) {
        return Err(NumericsError::NoInteriorMinimum);
    }
    let mut p = Vector4::new(e_v0, v0, curvature * v0, 4.0);
    // Exactly quadratic data: the vertex is the minimum and no BM3 refinement applies.
    let spread = es.iter().fold(0.0f64, |a, e| a.max(e.abs()));
    if quad_res <= 1e-12 * spread && (vmin..=vmax).contains(&v0) {
        return Ok(EosFit {
            e0: e_v0 + shift,
            v0,
            b0: curvature * v0,
            b0_prime: 4.0,
            residual_norm: quad_res,
        });
    }
    if !(vmin..=vmax).contains(&v0) {
        p[1] = vs[imin];
        p[0] = es[imin];
    }

    let residuals = |p: &Vector4<f64>| -> DVector<f64> {
        DVector::from_iterator(vs.len(), vs.iter().zip(&es).map(|(&v, &e)| bm3_energy(p[0], p[1], p[2], p[3], v) - e))
    };
    let jacobian = |p: &Vector4<f64>| -> DMatrix<f64> {
        let mut j = DMatrix::zeros(vs.len(), 4);
        for (i, &v) in vs.iter().enumerate() {
            let g = bm3_gradient(p[1], p[2], p[3], v);
            for k in 0..4 {
                j[(i, k)] = g[k];
            }
        }
        j
    };
    let valid = |p: &Vector4<f64>| p.iter().all(|x| x.is_finite()) && p[1] > 0.0 && p[2] > 0.0;

    let mut r = residuals(&p);
    let mut cost = r.norm_squared();
    let mut lambda = 1e-3;
    let mut converged = false;
    for _ in 0..MAX_ITER {
        let j = jacobian(&p);
        let jtj: Matrix4<f64> = (j.transpose() * &j).fixed_view::<4, 4>(0, 0).into_owned();
        let g: Vector4<f64> = (j.transpose() * &r).fixed_view::<4, 1>(0, 0).into_owned();
        let scale = j.norm() * r.norm().max(1e-300);
        if g.amax() <= GRAD_TOL * scale.max(f64::MIN_POSITIVE) || cost == 0.0 {
            converged = true;
            break;
        }
        let mut improved = false;
        for _ in 0..60 {
            let mut a = jtj;
            for k in 0..4 {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-300);
            }
            let Some(step) = a.lu().solve(&(-g)) else {
                lambda *= 10.0;
                continue;
            };
            let trial = p + step;
            if valid(&trial) {
                let rt = residuals(&trial);
                let ct = rt.norm_squared();
                if ct < cost {
                    let rel = step.component_div(&p.map(|x| x.abs().max(1e-300))).amax();
                    p = trial;
                    r = rt;
                    cost = ct;
                    lambda = (lambda / 10.0).max(1e-15);
                    improved = true;
                    if rel < 1e-15 {
                        converged = true;
                    }
                    break;
                }
            }
            lambda *= 10.0;
        }
        if !improved {
            // no downhill step at any damping: at the numerical minimum
            converged = true;
            break;
        }
        if converged {
            break;
        }
    }
    if !converged || !valid(&p) {
        return Err(NumericsError::FitDiverged(format!("no convergence after {MAX_ITER} iterations")));
    }
    if !(vmin..=vmax).contains(&p[1]) {
        return Err(NumericsError::FitDiverged(format!(
            "V0 = {} outside sampled range [{vmin}, {vmax}]",
            p[1]
        )));
    }
    Ok(EosFit {
        e0: p[0] + shift,
        v0: p[1],
        b0: p[2],
        b0_prime: p[3],
        residual_norm: cost.sqrt(),
    })
}

/// Equilibrium lattice constant from the fitted volume and a cubic reference cell.
pub fn lattice_from_fit(fit: &EosFit, reference: &StructureModel) -> Result<f64, NumericsError> {
    let c = &reference.cell;
    let a = c[0][0];
    let cubic = a > 0.0
        && c[1][1] == a
        && c[2][2] == a
        && (0..3).all(|i| (0..3).all(|j| i == j || c[i][j] == 0.0));
    if !cubic {
        return Err(NumericsError::NonCubicReference);
    }
    Ok(fit.v0.cbrt() * (a / reference.volume().cbrt()))
}

/// Bulk modulus in GPa.
pub fn bulk_modulus(fit: &EosFit) -> f64 {
    fit.b0_gpa()
}

/// Linear scale factors 1 + i*step for i = -3..=3.
pub fn eos_scale_factors(step: f64) -> [f64; 7] {
    let mut out = [0.0; 7];
    for (k, o) in out.iter_mut().enumerate() {
        *o = 1.0 + (k as f64 - 3.0) * step;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structlab::{build_bulk, scale};

    fn bm_data(e0: f64, v0: f64, b0: f64, bp: f64, span: f64) -> (Vec<f64>, Vec<f64>) {
        let vs: Vec<f64> = (0..7).map(|i| v0 * (1.0 + span * (i as f64 - 3.0) / 3.0)).collect();
        let es = vs.iter().map(|&v| bm3_energy(e0, v0, b0, bp, v)).collect();
        (vs, es)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (v0, b0, bp, v) = (20.0, 0.5, 4.3, 21.7);
        let g = bm3_gradient(v0, b0, bp, v);
        let p = [0.0, v0, b0, bp];
        for k in 0..4 {
            let h = 1e-6 * p[k].abs().max(1.0);
            let mut hi = p;
            let mut lo = p;
            hi[k] += h;
            lo[k] -= h;
            let fd = (bm3_energy(hi[0], hi[1], hi[2], hi[3], v) - bm3_energy(lo[0], lo[1], lo[2], lo[3], v)) / (2.0 * h);
            assert!((fd - g[k]).abs() <= 1e-6 * fd.abs().max(1.0), "param {k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn minimum_of_model_sits_at_v0() {
        let e = |v| bm3_energy(-3.0, 20.0, 0.5, 4.0, v);
        assert!(e(20.0) < e(19.9) && e(20.0) < e(20.1));
        assert_eq!(e(20.0), -3.0);
    }

    #[test]
    fn recovers_exact_bm_data() {
        let (vs, es) = bm_data(0.0, 20.0, 0.5, 4.0, 0.075);
        let f = fit_eos(&vs, &es).unwrap();
        assert!((f.v0 / 20.0 - 1.0).abs() < 1e-6);
        assert!((f.b0 / 0.5 - 1.0).abs() < 1e-3);
        let (vs, es) = bm_data(-15.3, 41.1, 0.006, 3.4, 0.075);
        let f = fit_eos(&vs, &es).unwrap();
        assert!((f.v0 / 41.1 - 1.0).abs() < 1e-6);
        assert!((f.b0 / 0.006 - 1.0).abs() < 1e-3);
        assert!((f.e0 + 15.3).abs() < 1e-9);
    }

    #[test]
    fn parabola_vertex() {
        let vs: Vec<f64> = (0..7).map(|i| 17.0 + i as f64).collect();
        let es: Vec<f64> = vs.iter().map(|v| (v - 20.0) * (v - 20.0)).collect();
        let f = fit_eos(&vs, &es).unwrap();
        assert!((f.v0 - 20.0).abs() < 1e-6, "{}", f.v0);
    }

    #[test]
    fn errors() {
        let vs = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert!(matches!(fit_eos(&vs, &[5.0, 4.0, 3.0, 2.0, 1.0]), Err(NumericsError::NoInteriorMinimum)));
        assert!(matches!(fit_eos(&vs[..4], &[1.0, 0.0, 1.0, 2.0]), Err(NumericsError::InvalidInput(_))));
        assert!(fit_eos(&vs, &[1.0, 0.0, f64::NAN, 2.0, 3.0]).is_err());
    }

    #[test]
    fn lattice_and_modulus() {
        let li = build_bulk("Li", "bcc", 3.451, None, None).unwrap();
        let mut f = EosFit { e0: 0.0, v0: li.volume(), b0: 0.0, b0_prime: 4.0, residual_norm: 0.0 };
        assert!((lattice_from_fit(&f, &li).unwrap() - 3.451).abs() < 1e-12);
        f.v0 = 41.099 * 1.025f64.powi(3);
        assert!((lattice_from_fit(&f, &li).unwrap() - 41.099f64.cbrt() * 1.025).abs() < 1e-12);
        assert_eq!(bulk_modulus(&f), 0.0);
        f.b0 = 1.0 / crate::units::RY_TO_EV;
        assert!((bulk_modulus(&f) - 160.2176634).abs() < 1e-9);
        let mg = build_bulk("Mg", "hcp", 3.2, None, Some(5.2)).unwrap();
        assert!(matches!(lattice_from_fit(&f, &mg), Err(NumericsError::NonCubicReference)));
    }

    #[test]
    fn scaled_volumes_scale_lattice() {
        let (vs, es) = bm_data(0.0, 40.0, 0.05, 4.5, 0.075);
        let li = build_bulk("Li", "bcc", 40f64.cbrt(), None, None).unwrap();
        let a1 = lattice_from_fit(&fit_eos(&vs, &es).unwrap(), &li).unwrap();
        let s = 1.1f64;
        let vs2: Vec<f64> = vs.iter().map(|v| v * s.powi(3)).collect();
        let li2 = scale(&li, s).unwrap();
        let a2 = lattice_from_fit(&fit_eos(&vs2, &es).unwrap(), &li2).unwrap();
        assert!((a2 / a1 - s).abs() < 1e-6);
    }

    #[test]
    fn scale_factors() {
        let f = eos_scale_factors(0.025);
        assert_eq!(f[3], 1.0);
        assert!((f[0] - 0.925).abs() < 1e-15 && (f[6] - 1.075).abs() < 1e-15);
    }
}
