use serde::{Deserialize, Serialize};

use super::mesh::Mesh;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Material {
    /// Young's modulus in Pa.
    pub youngs: f64,
    pub poisson: f64,
    /// Density in kg/m^3.
    pub density: f64,
}

impl Default for Material {
    fn default() -> Self {
        Material { youngs: 6e5, poisson: 0.45, density: 100.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Lame {
    pub mu: f64,
    pub lambda: f64,
}

impl Material {
    pub fn validate(&self) -> Result<()> {
        if !(self.youngs > 0.0 && (0.0..0.5).contains(&self.poisson) && self.density > 0.0) {
            return Err(Error::Config(format!(
                "material needs E > 0, 0 <= nu < 0.5, rho > 0; got {:?}",
                (self.youngs, self.poisson, self.density)
            )));
        }
        Ok(())
    }

    /// Plane-strain Lame parameters.
    pub fn lame(&self) -> Lame {
        let (e, nu) = (self.youngs, self.poisson);
        Lame { mu: e / (2.0 * (1.0 + nu)), lambda: e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu)) }
    }
}

/// Column-major `(F11, F21, F12, F22)`.
pub(crate) type Vec4 = [f64; 4];
pub(crate) type Mat4 = [[f64; 4]; 4];
/// Element dofs `(x0, y0, x1, y1, x2, y2)`.
pub(crate) type Vec6 = [f64; 6];
pub(crate) type Mat6 = [[f64; 6]; 6];
type Mat2 = [[f64; 2]; 2];

fn rotation_part(f: &Vec4) -> (f64, [f64; 2]) {
    let t = [f[0] + f[3], f[1] - f[2]];
    let s = t[0].hypot(t[1]);
    (s, t)
}

/// Co-rotated energy density `mu |F - R|^2 + lambda/2 (tr(R^T F) - 2)^2`.
pub(crate) fn psi(f: &Vec4, l: &Lame) -> f64 {
    let (s, _) = rotation_part(f);
    let fro: f64 = f.iter().map(|v| v * v).sum();
    l.mu * (fro - 2.0 * s + 2.0) + 0.5 * l.lambda * (s - 2.0).powi(2)
}

/// First Piola-Kirchhoff stress `2 mu (F - R) + lambda (s - 2) R`.
pub(crate) fn pk1(f: &Vec4, l: &Lame) -> Vec4 {
    let (s, t) = rotation_part(f);
    let r = [t[0] / s, t[1] / s, -t[1] / s, t[0] / s];
    let mut p = [0.0; 4];
    for i in 0..4 {
        p[i] = 2.0 * l.mu * (f[i] - r[i]) + l.lambda * (s - 2.0) * r[i];
    }
    p
}

/// `d^2 psi / dF^2`; with `project` the indefinite rotational term is clamped so the result is PSD.
pub(crate) fn psi_hessian(f: &Vec4, l: &Lame, project: bool) -> Mat4 {
    let (s, t) = rotation_part(f);
    let r = [t[0] / s, t[1] / s, -t[1] / s, t[0] / s];
    // K^T t_perp / |t| with t_perp = (-t1, t0): direction (-t1, t0, -t0, -t1) / s
    let w = [-t[1] / s, t[0] / s, -t[0] / s, -t[1] / s];
    let mut c = l.lambda * (s - 2.0) - 2.0 * l.mu;
    if project {
        c = c.max(-l.mu * s);
    }
    let mut h = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            h[i][j] = l.lambda * r[i] * r[j] + c / s * w[i] * w[j];
        }
        h[i][i] += 2.0 * l.mu;
    }
    h
}

/// `d vec(F) / d x_e` for `F = Ds G`.
pub(crate) fn b_matrix(g: &Mat2) -> [[f64; 6]; 4] {
    let mut b = [[0.0; 6]; 4];
    for a in 0..2 {
        for col in 0..2 {
            let row = a + 2 * col;
            for c in 0..2 {
                b[row][2 * (c + 1) + a] = g[c][col];
                b[row][a] -= g[c][col];
            }
        }
    }
    b
}

fn matvec4x6(b: &[[f64; 6]; 4], x: &Vec6) -> Vec4 {
    let mut out = [0.0; 4];
    for i in 0..4 {
        out[i] = (0..6).map(|j| b[i][j] * x[j]).sum();
    }
    out
}

fn mat_t_vec(b: &[[f64; 6]; 4], v: &Vec4) -> Vec6 {
    let mut out = [0.0; 6];
    for j in 0..6 {
        out[j] = (0..4).map(|i| b[i][j] * v[i]).sum();
    }
    out
}

/// Actuated inverse rest shape: rest x-extent scaled by `1 + strain`.
pub(crate) fn actuated_g(dm_inv: &Mat2, strain: f64) -> Mat2 {
    let k = 1.0 / (1.0 + strain);
    [[dm_inv[0][0] * k, dm_inv[0][1]], [dm_inv[1][0] * k, dm_inv[1][1]]]
}

fn actuated_dg(dm_inv: &Mat2, strain: f64) -> Mat2 {
    let k = -1.0 / (1.0 + strain).powi(2);
    [[dm_inv[0][0] * k, 0.0], [dm_inv[1][0] * k, 0.0]]
}

pub(crate) struct ElementEval {
    pub energy: f64,
    pub grad: Vec6,
    pub hess: Option<Mat6>,
}

pub(crate) fn element_dofs(q: &[[f64; 2]], t: &[usize; 3]) -> Vec6 {
    [q[t[0]][0], q[t[0]][1], q[t[1]][0], q[t[1]][1], q[t[2]][0], q[t[2]][1]]
}

/// Energy, gradient and optionally Hessian of one element.
pub(crate) fn eval_element(
    mesh: &Mesh,
    e: usize,
    x: &Vec6,
    strain: f64,
    lame: &Lame,
    hessian: Option<bool>,
) -> Result<ElementEval> {
    let g = actuated_g(&mesh.dm_inv(e), strain);
    let b = b_matrix(&g);
    let f = matvec4x6(&b, x);
    let det = f[0] * f[3] - f[2] * f[1];
    if !(det > 0.0) {
        return Err(Error::ElementInverted { element: e, det });
    }
    let area = mesh.rest_areas()[e];
    let p = pk1(&f, lame);
    let mut grad = mat_t_vec(&b, &p);
    grad.iter_mut().for_each(|v| *v *= area);
    let hess = hessian.map(|project| {
        let hp = psi_hessian(&f, lame, project);
        let mut hb = [[0.0; 6]; 4];
        for i in 0..4 {
            for j in 0..6 {
                hb[i][j] = (0..4).map(|k| hp[i][k] * b[k][j]).sum();
            }
        }
        let mut h = [[0.0; 6]; 6];
        for i in 0..6 {
            for j in 0..6 {
                h[i][j] = area * (0..4).map(|k| b[k][i] * hb[k][j]).sum::<f64>();
            }
        }
        h
    });
    Ok(ElementEval { energy: area * psi(&f, lame), grad, hess })
}

/// `d (dW_e/dx) / d strain` for one element.
pub(crate) fn element_mixed(mesh: &Mesh, e: usize, x: &Vec6, strain: f64, lame: &Lame) -> Vec6 {
    let dm = mesh.dm_inv(e);
    let b = b_matrix(&actuated_g(&dm, strain));
    let db = b_matrix(&actuated_dg(&dm, strain));
    let f = matvec4x6(&b, x);
    let df = matvec4x6(&db, x);
    let p = pk1(&f, lame);
    let hp = psi_hessian(&f, lame, false);
    let mut dp = [0.0; 4];
    for i in 0..4 {
        dp[i] = (0..4).map(|k| hp[i][k] * df[k]).sum();
    }
    let t1 = mat_t_vec(&db, &p);
    let t2 = mat_t_vec(&b, &dp);
    let area = mesh.rest_areas()[e];
    let mut out = [0.0; 6];
    for i in 0..6 {
        out[i] = area * (t1[i] + t2[i]);
    }
    out
}

fn check_act(mesh: &Mesh, act: &[f64]) -> Result<()> {
    if act.len() != mesh.n_elements() {
        return Err(Error::Shape(format!("{} actuation values for {} elements", act.len(), mesh.n_elements())));
    }
    if let Some(e) = act.iter().position(|h| !(h.abs() < 1.0)) {
        return Err(Error::InvalidArgument(format!("actuation strain {} of element {e} is not in (-1, 1)", act[e])));
    }
    Ok(())
}

/// Total stored elastic energy.
pub fn elastic_energy(q: &[[f64; 2]], mesh: &Mesh, material: &Material, act: &[f64]) -> Result<f64> {
    check_act(mesh, act)?;
    let lame = material.lame();
    let mut total = 0.0;
    for (e, t) in mesh.triangles().iter().enumerate() {
        total += eval_element(mesh, e, &element_dofs(q, t), act[e], &lame, None)?.energy;
    }
    Ok(total)
}

/// Internal nodal forces `-dW/dq`.
///
/// `act` holds one signed rest-length strain per element (zero for passive elements).
pub fn elastic_force(q: &[[f64; 2]], mesh: &Mesh, material: &Material, act: &[f64]) -> Result<Vec<[f64; 2]>> {
    if q.len() != mesh.n_nodes() {
        return Err(Error::Shape(format!("{} positions for {} nodes", q.len(), mesh.n_nodes())));
    }
    check_act(mesh, act)?;
    let lame = material.lame();
    let mut f = vec![[0.0; 2]; mesh.n_nodes()];
    for (e, t) in mesh.triangles().iter().enumerate() {
        let ev = eval_element(mesh, e, &element_dofs(q, t), act[e], &lame, None)?;
        for (n, &i) in t.iter().enumerate() {
            f[i][0] -= ev.grad[2 * n];
            f[i][1] -= ev.grad[2 * n + 1];
        }
    }
    Ok(f)
}
