use rand::Rng;

use crate::error::Result;
use crate::numerics::{init::xavier_init_with, Graph, ParamId, ParamStore, Tensor, Var};

/// Weights of a single GRU cell.
///
/// Gate convention:
///
/// ```text
/// z  = σ(W_z x + U_z s + b_z)
/// r  = σ(W_r x + U_r s + b_r)
/// ĥ  = tanh(W_h x + U_h (r ⊙ s) + b_h)
/// s' = (1 − z) ⊙ s + z ⊙ ĥ
/// ```
#[derive(Clone, Debug)]
pub struct GruParams {
    pub w_z: ParamId,
    pub u_z: ParamId,
    pub b_z: ParamId,
    pub w_r: ParamId,
    pub u_r: ParamId,
    pub b_r: ParamId,
    pub w_h: ParamId,
    pub u_h: ParamId,
    pub b_h: ParamId,
    pub input_size: usize,
    pub hidden_size: usize,
}

impl GruParams {
    pub fn register<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        input_size: usize,
        hidden_size: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let w = |name: &str, store: &mut ParamStore, rng: &mut R| {
            store.add(
                format!("{prefix}.{name}"),
                xavier_init_with(&[hidden_size, input_size], rng),
                true,
            )
        };
        let w_z = w("w_z", store, rng)?;
        let w_r = w("w_r", store, rng)?;
        let w_h = w("w_h", store, rng)?;
        let u = |name: &str, store: &mut ParamStore, rng: &mut R| {
            store.add(
                format!("{prefix}.{name}"),
                xavier_init_with(&[hidden_size, hidden_size], rng),
                true,
            )
        };
        let u_z = u("u_z", store, rng)?;
        let u_r = u("u_r", store, rng)?;
        let u_h = u("u_h", store, rng)?;
        let mut b = |name: &str| store.add(format!("{prefix}.{name}"), Tensor::zeros(&[hidden_size]), false);
        Ok(GruParams {
            w_z,
            u_z,
            b_z: b("b_z")?,
            w_r,
            u_r,
            b_r: b("b_r")?,
            w_h,
            u_h,
            b_h: b("b_h")?,
            input_size,
            hidden_size,
        })
    }

    fn gate(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        (w, u, b): (ParamId, ParamId, ParamId),
        x: Var,
        s: Var,
    ) -> Result<Var> {
        let (w, u, b) = (g.param(store, w), g.param(store, u), g.param(store, b));
        let wx = g.matvec(w, x)?;
        let us = g.matvec(u, s)?;
        let sum = g.add(wx, us)?;
        g.add(sum, b)
    }

    /// One recurrence step: returns the new hidden state.
    pub fn step(&self, g: &mut Graph, store: &ParamStore, x: Var, s_prev: Var) -> Result<Var> {
        let z_pre = self.gate(g, store, (self.w_z, self.u_z, self.b_z), x, s_prev)?;
        let z = g.sigmoid(z_pre);
        let r_pre = self.gate(g, store, (self.w_r, self.u_r, self.b_r), x, s_prev)?;
        let r = g.sigmoid(r_pre);
        let rs = g.mul(r, s_prev)?;
        let h_pre = self.gate(g, store, (self.w_h, self.u_h, self.b_h), x, rs)?;
        let h = g.tanh(h_pre);
        let keep = g.affine(z, -1.0, 1.0);
        let kept = g.mul(keep, s_prev)?;
        let fresh = g.mul(z, h)?;
        g.add(kept, fresh)
    }
}

/// Value-level GRU step on plain tensors.
pub fn gru_cell(x: &Tensor, s_prev: &Tensor, params: &GruParams, store: &ParamStore) -> Result<Tensor> {
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let sv = g.constant(s_prev.clone());
    let out = params.step(&mut g, store, xv, sv)?;
    Ok(g.value(out).clone())
}
