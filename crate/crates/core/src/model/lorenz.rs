//! Two-scale Lorenz 96 (truth) and its polynomial-ansatz reduction (forecast).
//!
//! Indexing is 0-based. Slow indices wrap modulo `d_x`. Slow variable `j`
//! owns fast variables `jL .. (j+1)L - 1`; fast variable `l` belongs to slow
//! variable `floor(l / L)`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::DriftField;
use crate::error::{check_len, NhfError, Result};

/// How fast-variable neighbours wrap around.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FastRing {
    /// One ring of length `d_x L`.
    #[default]
    Global,
    /// Separate rings of length `L` inside each slow variable's block.
    PerBlock,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoScaleLorenzParams {
    /// Forcing.
    pub f: f64,
    /// Time-scale ratio.
    pub c: f64,
    /// Coupling strength.
    pub h: f64,
    /// Fast amplitude.
    pub b: f64,
    pub d_x: usize,
    /// Fast variables per slow variable.
    pub l: usize,
}

impl TwoScaleLorenzParams {
    pub fn validate(&self) -> Result<()> {
        if self.d_x < 4 {
            return Err(NhfError::invalid("two-scale Lorenz 96 needs d_x >= 4"));
        }
        if self.l < 1 {
            return Err(NhfError::invalid("two-scale Lorenz 96 needs L >= 1"));
        }
        if self.c == 0.0 || self.b == 0.0 {
            return Err(NhfError::invalid("C and B must be non-zero"));
        }
        Ok(())
    }
}

/// Drift of the two-scale model with a global fast ring.
pub fn lorenz96_two_scale_drift(x: &[f64], z: &[f64], params: &TwoScaleLorenzParams) -> Result<(Vec<f64>, Vec<f64>)> {
    params.validate()?;
    check_len("slow state", params.d_x, x.len())?;
    check_len("fast state", params.d_x * params.l, z.len())?;
    let mut dx = vec![0.0; x.len()];
    let mut dz = vec![0.0; z.len()];
    two_scale_into(
        x,
        z,
        params.f,
        params.c,
        params.h,
        params.b,
        params.l,
        FastRing::Global,
        &mut dx,
        &mut dz,
    );
    Ok((dx, dz))
}

#[allow(clippy::too_many_arguments)]
fn two_scale_into(
    x: &[f64],
    z: &[f64],
    f: f64,
    c: f64,
    coupling: f64,
    b: f64,
    l: usize,
    ring: FastRing,
    dx: &mut [f64],
    dz: &mut [f64],
) {
    let d = x.len();
    let nz = z.len();
    let hcb = coupling * c / b;
    for j in 0..d {
        let xm2 = x[(j + d - 2) % d];
        let xm1 = x[(j + d - 1) % d];
        let xp1 = x[(j + 1) % d];
        let block: f64 = z[j * l..(j + 1) * l].iter().sum();
        dx[j] = -xm1 * (xm2 - xp1) - x[j] + f - hcb * block;
    }
    let cb = c * b;
    let cfb = c * f / b;
    for idx in 0..nz {
        let (zp1, zp2, zm1) = match ring {
            FastRing::Global => (z[(idx + 1) % nz], z[(idx + 2) % nz], z[(idx + nz - 1) % nz]),
            FastRing::PerBlock => {
                let base = (idx / l) * l;
                let r = idx - base;
                (z[base + (r + 1) % l], z[base + (r + 2) % l], z[base + (r + l - 1) % l])
            }
        };
        dz[idx] = -cb * zp1 * (zp2 - zm1) - c * z[idx] + cfb + hcb * x[idx / l];
    }
}

/// Two-scale model as a drift over the stacked state `[x; z]` with
/// parameters `theta = [F, C, H, B]`.
#[derive(Debug, Clone)]
pub struct TwoScaleLorenz {
    pub d_x: usize,
    pub l: usize,
    pub ring: FastRing,
}

impl TwoScaleLorenz {
    pub fn new(d_x: usize, l: usize, ring: FastRing) -> Result<Self> {
        TwoScaleLorenzParams {
            f: 0.0,
            c: 1.0,
            h: 0.0,
            b: 1.0,
            d_x,
            l,
        }
        .validate()?;
        Ok(Self { d_x, l, ring })
    }

    pub fn theta(params: &TwoScaleLorenzParams) -> [f64; 4] {
        [params.f, params.c, params.h, params.b]
    }
}

impl DriftField for TwoScaleLorenz {
    fn dim(&self) -> usize {
        self.d_x * (1 + self.l)
    }

    fn param_dim(&self) -> usize {
        4
    }

    fn eval(&self, state: &[f64], theta: &[f64], out: &mut [f64]) {
        let (x, z) = state.split_at(self.d_x);
        let (dx, dz) = out.split_at_mut(self.d_x);
        two_scale_into(x, z, theta[0], theta[1], theta[2], theta[3], self.l, self.ring, dx, dz);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnsatzParams {
    pub f: f64,
    pub a1: f64,
    pub a2: f64,
}

impl AnsatzParams {
    pub fn as_theta(&self) -> [f64; 3] {
        [self.f, self.a1, self.a2]
    }
}

/// `out_j = -x_{j-1}(x_{j-2} - x_{j+1}) - x_j + F - (a1 x_j^2 + a2 x_j)`.
pub fn ansatz_drift(x: &[f64], params: &AnsatzParams) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    ansatz_into(x, params.f, params.a1, params.a2, &mut out);
    out
}

#[inline]
fn ansatz_into(x: &[f64], f: f64, a1: f64, a2: f64, out: &mut [f64]) {
    let d = x.len();
    let term = |j: usize, xm2: f64, xm1: f64, xp1: f64| {
        let xj = x[j];
        -xm1 * (xm2 - xp1) - xj + f - (a1 * xj * xj + a2 * xj)
    };
    // wrap-around edges, then a branch-free interior
    out[0] = term(0, x[d - 2], x[d - 1], x[1]);
    out[1] = term(1, x[d - 1], x[0], x[2]);
    out[d - 1] = term(d - 1, x[d - 3], x[d - 2], x[0]);
    for j in 2..d - 1 {
        out[j] = term(j, x[j - 2], x[j - 1], x[j + 1]);
    }
}

/// Forecast model: slow variables only, with the fast coupling replaced by a
/// quadratic ansatz. Parameters `theta = [F, a1, a2]`.
#[derive(Debug, Clone)]
pub struct AnsatzLorenz {
    d_x: usize,
}

impl AnsatzLorenz {
    pub fn new(d_x: usize) -> Result<Self> {
        if d_x < 4 {
            return Err(NhfError::invalid("Lorenz 96 ansatz model needs d_x >= 4"));
        }
        Ok(Self { d_x })
    }
}

impl DriftField for AnsatzLorenz {
    fn dim(&self) -> usize {
        self.d_x
    }

    fn param_dim(&self) -> usize {
        3
    }

    fn eval(&self, x: &[f64], theta: &[f64], out: &mut [f64]) {
        ansatz_into(x, theta[0], theta[1], theta[2], out);
    }

    /// Cyclic four-point stencil: row `j` of the Jacobian has entries at
    /// columns `j-2, j-1, j, j+1`.
    fn jacobian_mul(&self, x: &[f64], theta: &[f64], v: &DMatrix<f64>, out: &mut DMatrix<f64>) {
        let d = self.d_x;
        let (a1, a2) = (theta[1], theta[2]);
        // coefficients for columns j-2, j-1, j, j+1
        let mut cm2 = vec![0.0; d];
        let mut cm1 = vec![0.0; d];
        let mut c0 = vec![0.0; d];
        let mut cp1 = vec![0.0; d];
        for j in 0..d {
            let xm2 = x[(j + d - 2) % d];
            let xm1 = x[(j + d - 1) % d];
            let xp1 = x[(j + 1) % d];
            cm2[j] = -xm1;
            cm1[j] = xp1 - xm2;
            c0[j] = -1.0 - 2.0 * a1 * x[j] - a2;
            cp1[j] = xm1;
        }
        let cols = v.ncols();
        let vs = v.as_slice();
        let os = out.as_mut_slice();
        for c in 0..cols {
            let col = &vs[c * d..(c + 1) * d];
            let o = &mut os[c * d..(c + 1) * d];
            o[0] = cm2[0] * col[d - 2] + cm1[0] * col[d - 1] + c0[0] * col[0] + cp1[0] * col[1];
            o[1] = cm2[1] * col[d - 1] + cm1[1] * col[0] + c0[1] * col[1] + cp1[1] * col[2];
            o[d - 1] = cm2[d - 1] * col[d - 3] + cm1[d - 1] * col[d - 2] + c0[d - 1] * col[d - 1] + cp1[d - 1] * col[0];
            for j in 2..d - 1 {
                o[j] = cm2[j] * col[j - 2] + cm1[j] * col[j - 1] + c0[j] * col[j] + cp1[j] * col[j + 1];
            }
        }
    }
}
