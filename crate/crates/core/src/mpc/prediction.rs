//! Discrete augmented CAV model and its condensed horizon operators.
//!
//! State `x = [p1, v1, e11, e12]`, output `y = [v1, e11, e12]`, measured
//! disturbance `w = [vN, v2]`.

use nalgebra::{DMatrix, DVector};

use super::MpcError;

pub const NX: usize = 4;
pub const NY: usize = 3;
pub const NW: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct SystemMatrices {
    pub a: DMatrix<f64>,
    pub bu: DMatrix<f64>,
    pub bw: DMatrix<f64>,
    pub c: DMatrix<f64>,
}

/// Zero-order-hold double integrator augmented with the two gap states.
pub fn build_system_matrices(tau: f64) -> SystemMatrices {
    let h = 0.5 * tau * tau;
    #[rustfmt::skip]
    let a = DMatrix::from_row_slice(NX, NX, &[
        1.0, tau, 0.0, 0.0,
        0.0, 1.0, 0.0, 0.0,
        0.0, tau, 1.0, 0.0,
        0.0, tau, 0.0, 1.0,
    ]);
    let bu = DMatrix::from_column_slice(NX, 1, &[h, tau, h, h]);
    #[rustfmt::skip]
    let bw = DMatrix::from_row_slice(NX, NW, &[
        0.0, 0.0,
        0.0, 0.0,
        -tau, 0.0,
        0.0, -tau,
    ]);
    #[rustfmt::skip]
    let c = DMatrix::from_row_slice(NY, NX, &[
        0.0, 1.0, 0.0, 0.0,
        0.0, 0.0, 1.0, 0.0,
        0.0, 0.0, 0.0, 1.0,
    ]);
    SystemMatrices { a, bu, bw, c }
}

/// Stacked predictions over `t_p` steps:
/// `X = A_t x + Bu_t U + Bd_t W` and `Y = C_t x + Du_t U + Dd_t W`.
/// Inputs after the control horizon are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMatrices {
    pub t_p: usize,
    pub t_c: usize,
    pub a_t: DMatrix<f64>,
    pub bu_t: DMatrix<f64>,
    pub bd_t: DMatrix<f64>,
    pub c_t: DMatrix<f64>,
    pub du_t: DMatrix<f64>,
    pub dd_t: DMatrix<f64>,
}

pub fn build_prediction(
    sys: &SystemMatrices,
    t_p: usize,
    t_c: usize,
) -> Result<PredictionMatrices, MpcError> {
    if t_p == 0 || t_c == 0 {
        return Err(MpcError::InvalidParam {
            field: "T_p/T_c",
            reason: "horizons must be at least one step".into(),
        });
    }
    if t_c > t_p {
        return Err(MpcError::InvalidParam {
            field: "T_c",
            reason: format!("control horizon {t_c} exceeds prediction horizon {t_p}"),
        });
    }
    let mut powers = Vec::with_capacity(t_p + 1);
    powers.push(DMatrix::<f64>::identity(NX, NX));
    for n in 1..=t_p {
        let next = &sys.a * &powers[n - 1];
        powers.push(next);
    }
    let a_bu: Vec<DMatrix<f64>> = powers.iter().map(|p| p * &sys.bu).collect();
    let a_bw: Vec<DMatrix<f64>> = powers.iter().map(|p| p * &sys.bw).collect();

    let mut a_t = DMatrix::zeros(NX * t_p, NX);
    let mut bu_t = DMatrix::zeros(NX * t_p, t_c);
    let mut bd_t = DMatrix::zeros(NX * t_p, NW * t_p);
    for n in 1..=t_p {
        let r = NX * (n - 1);
        a_t.view_mut((r, 0), (NX, NX)).copy_from(&powers[n]);
        for m in 0..n.min(t_c) {
            bu_t.view_mut((r, m), (NX, 1)).copy_from(&a_bu[n - 1 - m]);
        }
        for j in 0..n {
            bd_t.view_mut((r, NW * j), (NX, NW)).copy_from(&a_bw[n - 1 - j]);
        }
    }

    let c_bar = block_diag(&sys.c, t_p);
    Ok(PredictionMatrices {
        t_p,
        t_c,
        c_t: &c_bar * &a_t,
        du_t: &c_bar * &bu_t,
        dd_t: &c_bar * &bd_t,
        a_t,
        bu_t,
        bd_t,
    })
}

/// `count` copies of `block` on the diagonal.
pub fn block_diag(block: &DMatrix<f64>, count: usize) -> DMatrix<f64> {
    let (r, c) = block.shape();
    let mut out = DMatrix::zeros(r * count, c * count);
    for k in 0..count {
        out.view_mut((r * k, c * k), (r, c)).copy_from(block);
    }
    out
}

/// Disturbance held constant across the horizon.
pub fn stack_disturbance(w: &DVector<f64>, t_p: usize) -> DVector<f64> {
    DVector::from_iterator(NW * t_p, (0..t_p).flat_map(|_| w.iter().copied()))
}

impl PredictionMatrices {
    pub fn predict_states(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        w_stack: &DVector<f64>,
    ) -> DVector<f64> {
        &self.a_t * x + &self.bu_t * u + &self.bd_t * w_stack
    }

    pub fn predict_outputs(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        w_stack: &DVector<f64>,
    ) -> DVector<f64> {
        &self.c_t * x + &self.du_t * u + &self.dd_t * w_stack
    }
}
