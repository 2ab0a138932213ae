//! Bridge families: maps from a slot's parameter vector to a function on `R^m`.
//!
//! Parameters are packed row-major in the order the family lists its blocks:
//!
//! | kind      | blocks                              | count              |
//! |-----------|-------------------------------------|--------------------|
//! | `Affine1` | `A (m×m)`, `b (m)`                  | `m² + m`           |
//! | `Affine2` | `A (m×m)`, `B (m×m)`, `c (m)`       | `2m² + m`          |
//! | `Mlp1h`   | `W1 (h×m)`, `b1 (h)`, `W2 (m×h)`, `b2 (m)` | `2hm + h + m` |
//!
//! Every family may carry `pad` trailing parameters that evaluation ignores.

use serde::{Deserialize, Serialize};

use crate::error::ShapeError;
use crate::scalar::{dot, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FamilyKind {
    /// `u ↦ A·u + b`
    Affine1,
    /// `(u, v) ↦ A·u + B·v + c`
    Affine2,
    /// `u ↦ W2·tanh(W1·u + b1) + b2`
    Mlp1h,
}

impl FamilyKind {
    pub fn arity(self) -> usize {
        match self {
            FamilyKind::Affine1 | FamilyKind::Mlp1h => 1,
            FamilyKind::Affine2 => 2,
        }
    }
}

/// A parameterized family `b_i` for one slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BridgeFamily {
    pub kind: FamilyKind,
    pub m: usize,
    /// Hidden width; only meaningful for [`FamilyKind::Mlp1h`].
    pub hidden: usize,
    pub pad: usize,
}

impl BridgeFamily {
    pub fn affine1(m: usize) -> Self {
        Self {
            kind: FamilyKind::Affine1,
            m,
            hidden: 0,
            pad: 0,
        }
    }

    pub fn affine2(m: usize) -> Self {
        Self {
            kind: FamilyKind::Affine2,
            m,
            hidden: 0,
            pad: 0,
        }
    }

    pub fn mlp1h(m: usize, hidden: usize) -> Self {
        Self {
            kind: FamilyKind::Mlp1h,
            m,
            hidden,
            pad: 0,
        }
    }

    pub fn with_pad(mut self, pad: usize) -> Self {
        self.pad = pad;
        self
    }

    pub fn arity(&self) -> usize {
        self.kind.arity()
    }

    /// Number of parameters that evaluation actually reads.
    pub fn active_count(&self) -> usize {
        let (m, h) = (self.m, self.hidden);
        match self.kind {
            FamilyKind::Affine1 => m * m + m,
            FamilyKind::Affine2 => 2 * m * m + m,
            FamilyKind::Mlp1h => h * m + h + m * h + m,
        }
    }

    /// Parameter-vector length `n_i`, including padding.
    pub fn param_count(&self) -> usize {
        self.active_count() + self.pad
    }

    fn check_shapes<S: Scalar>(&self, params: &[S], args: &[&[S]]) -> Result<(), ShapeError> {
        ShapeError::check("bridge parameters", self.param_count(), params.len())?;
        ShapeError::check("bridge argument count", self.arity(), args.len())?;
        for arg in args {
            ShapeError::check("bridge argument", self.m, arg.len())?;
        }
        Ok(())
    }
}

/// Free-function form of [`BridgeFamily::param_count`].
pub fn param_count(family: &BridgeFamily) -> usize {
    family.param_count()
}

fn mat_vec<S: Scalar>(mat: &[S], rows: usize, cols: usize, v: &[S], out: &mut [S]) {
    for (r, o) in out.iter_mut().enumerate().take(rows) {
        *o = *o + dot(&mat[r * cols..(r + 1) * cols], v);
    }
}

/// `out += matᵀ · v` for a row-major `rows × cols` matrix.
fn mat_t_vec<S: Scalar>(mat: &[S], rows: usize, cols: usize, v: &[S], out: &mut [S]) {
    for (r, &vr) in v.iter().enumerate().take(rows) {
        for (c, o) in out.iter_mut().enumerate().take(cols) {
            *o = *o + mat[r * cols + c] * vr;
        }
    }
}

/// `grad += v ⊗ u` for a row-major outer-product block.
fn outer_acc<S: Scalar>(v: &[S], u: &[S], grad: &mut [S]) {
    let cols = u.len();
    for (r, &vr) in v.iter().enumerate() {
        for (c, &uc) in u.iter().enumerate() {
            grad[r * cols + c] = grad[r * cols + c] + vr * uc;
        }
    }
}

fn add_into<S: Scalar>(acc: &mut [S], v: &[S]) {
    for (a, &x) in acc.iter_mut().zip(v) {
        *a = *a + x;
    }
}

/// Evaluate `b(params)` at `args`.
pub fn eval_bridge<S: Scalar>(
    family: &BridgeFamily,
    params: &[S],
    args: &[&[S]],
) -> Result<Vec<S>, ShapeError> {
    family.check_shapes(params, args)?;
    Ok(eval_unchecked(family, params, args))
}

pub(crate) fn eval_unchecked<S: Scalar>(
    family: &BridgeFamily,
    params: &[S],
    args: &[&[S]],
) -> Vec<S> {
    let m = family.m;
    let mm = m * m;
    match family.kind {
        FamilyKind::Affine1 => {
            let mut out = params[mm..mm + m].to_vec();
            mat_vec(&params[..mm], m, m, args[0], &mut out);
            out
        }
        FamilyKind::Affine2 => {
            let mut out = params[2 * mm..2 * mm + m].to_vec();
            mat_vec(&params[..mm], m, m, args[0], &mut out);
            mat_vec(&params[mm..2 * mm], m, m, args[1], &mut out);
            out
        }
        FamilyKind::Mlp1h => {
            let hidden = mlp_hidden(family, params, args[0]);
            let l = MlpLayout::new(family);
            let mut out = params[l.b2..l.b2 + m].to_vec();
            mat_vec(&params[l.w2..l.b2], m, family.hidden, &hidden, &mut out);
            out
        }
    }
}

struct MlpLayout {
    b1: usize,
    w2: usize,
    b2: usize,
}

impl MlpLayout {
    fn new(family: &BridgeFamily) -> Self {
        let hm = family.hidden * family.m;
        Self {
            b1: hm,
            w2: hm + family.hidden,
            b2: 2 * hm + family.hidden,
        }
    }
}

fn mlp_hidden<S: Scalar>(family: &BridgeFamily, params: &[S], u: &[S]) -> Vec<S> {
    let l = MlpLayout::new(family);
    let mut z = params[l.b1..l.w2].to_vec();
    mat_vec(&params[..l.b1], family.hidden, family.m, u, &mut z);
    z.into_iter().map(S::tanh).collect()
}

/// Vector-Jacobian products of `cotangent · b(params)(args)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BridgeGrad<S> {
    pub params: Vec<S>,
    pub args: Vec<Vec<S>>,
}

pub fn grad_bridge<S: Scalar>(
    family: &BridgeFamily,
    params: &[S],
    args: &[&[S]],
    cotangent: &[S],
) -> Result<BridgeGrad<S>, ShapeError> {
    family.check_shapes(params, args)?;
    ShapeError::check("cotangent", family.m, cotangent.len())?;
    let mut grad_params = vec![S::zero(); params.len()];
    let grad_args = grad_accumulate(family, params, args, cotangent, &mut grad_params);
    Ok(BridgeGrad {
        params: grad_params,
        args: grad_args,
    })
}

/// Adds the parameter VJP into `grad_params` and returns the argument VJPs.
/// Shapes are assumed checked.
pub(crate) fn grad_accumulate<S: Scalar>(
    family: &BridgeFamily,
    params: &[S],
    args: &[&[S]],
    cot: &[S],
    grad_params: &mut [S],
) -> Vec<Vec<S>> {
    let m = family.m;
    let mm = m * m;
    match family.kind {
        FamilyKind::Affine1 => {
            outer_acc(cot, args[0], &mut grad_params[..mm]);
            add_into(&mut grad_params[mm..mm + m], cot);
            let mut du = vec![S::zero(); m];
            mat_t_vec(&params[..mm], m, m, cot, &mut du);
            vec![du]
        }
        FamilyKind::Affine2 => {
            outer_acc(cot, args[0], &mut grad_params[..mm]);
            outer_acc(cot, args[1], &mut grad_params[mm..2 * mm]);
            add_into(&mut grad_params[2 * mm..2 * mm + m], cot);
            let mut du = vec![S::zero(); m];
            let mut dv = vec![S::zero(); m];
            mat_t_vec(&params[..mm], m, m, cot, &mut du);
            mat_t_vec(&params[mm..2 * mm], m, m, cot, &mut dv);
            vec![du, dv]
        }
        FamilyKind::Mlp1h => {
            let h = family.hidden;
            let l = MlpLayout::new(family);
            let hidden = mlp_hidden(family, params, args[0]);
            outer_acc(cot, &hidden, &mut grad_params[l.w2..l.b2]);
            add_into(&mut grad_params[l.b2..l.b2 + m], cot);
            let mut dz = vec![S::zero(); h];
            mat_t_vec(&params[l.w2..l.b2], m, h, cot, &mut dz);
            for (g, &a) in dz.iter_mut().zip(&hidden) {
                *g = *g * (S::one() - a * a);
            }
            outer_acc(&dz, args[0], &mut grad_params[..l.b1]);
            add_into(&mut grad_params[l.b1..l.w2], &dz);
            let mut du = vec![S::zero(); m];
            mat_t_vec(&params[..l.b1], h, m, &dz, &mut du);
            vec![du]
        }
    }
}

/// Reorders the hidden units of an `Mlp1h` parameter vector: new unit `j` is
/// old unit `perm[j]`. Padding is copied unchanged.
pub fn permute_hidden<S: Scalar>(
    family: &BridgeFamily,
    params: &[S],
    perm: &[usize],
) -> Result<Vec<S>, ShapeError> {
    ShapeError::check("bridge parameters", family.param_count(), params.len())?;
    ShapeError::check("hidden permutation", family.hidden, perm.len())?;
    let mut seen = vec![false; perm.len()];
    for &p in perm {
        if p >= perm.len() || std::mem::replace(&mut seen[p], true) {
            return Err(ShapeError::new("hidden permutation entry", perm.len(), p));
        }
    }
    let (m, h) = (family.m, family.hidden);
    let l = MlpLayout::new(family);
    let mut out = params.to_vec();
    for (j, &src) in perm.iter().enumerate() {
        out[j * m..(j + 1) * m].copy_from_slice(&params[src * m..(src + 1) * m]);
        out[l.b1 + j] = params[l.b1 + src];
        for i in 0..m {
            out[l.w2 + i * h + j] = params[l.w2 + i * h + src];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn affine1(a: [[f64; 2]; 2], b: [f64; 2]) -> Vec<f64> {
        vec![a[0][0], a[0][1], a[1][0], a[1][1], b[0], b[1]]
    }

    #[test]
    fn param_counts() {
        assert_eq!(BridgeFamily::affine1(2).param_count(), 6);
        assert_eq!(BridgeFamily::affine2(3).param_count(), 21);
        assert_eq!(BridgeFamily::mlp1h(2, 3).param_count(), 17);
        assert_eq!(param_count(&BridgeFamily::affine1(2).with_pad(2)), 8);
    }

    #[test]
    fn affine1_swap_matrix() {
        let f = BridgeFamily::affine1(2);
        let p = affine1([[0.0, 1.0], [1.0, 0.0]], [0.0, 0.0]);
        assert_eq!(eval_bridge(&f, &p, &[&[1.0, 2.0]]).unwrap(), vec![2.0, 1.0]);
    }

    #[test]
    fn affine1_identity() {
        let f = BridgeFamily::affine1(2);
        let p = affine1([[1.0, 0.0], [0.0, 1.0]], [0.0, 0.0]);
        assert_eq!(
            eval_bridge(&f, &p, &[&[3.0, -7.0]]).unwrap(),
            vec![3.0, -7.0]
        );
    }

    #[test]
    fn affine2_sum_of_identities() {
        let f = BridgeFamily::affine2(2);
        let p = vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0];
        let out = eval_bridge(&f, &p, &[&[1.0, 0.0], &[0.0, 1.0]]).unwrap();
        assert_eq!(out, vec![1.0, 1.0]);
    }

    #[test]
    fn shape_errors_name_expected_and_actual() {
        let f = BridgeFamily::affine1(2);
        let err = eval_bridge(&f, &[0.0; 5], &[&[1.0, 2.0]]).unwrap_err();
        assert_eq!((err.expected, err.actual), (6, 5));
        let err = eval_bridge(&f, &[0.0; 6], &[&[1.0, 2.0], &[1.0, 2.0]]).unwrap_err();
        assert_eq!((err.expected, err.actual), (1, 2));
        let err = eval_bridge(&f, &[0.0; 6], &[&[1.0]]).unwrap_err();
        assert_eq!((err.expected, err.actual), (2, 1));
        let err = grad_bridge(&f, &[0.0; 6], &[&[1.0, 2.0]], &[1.0]).unwrap_err();
        assert_eq!(err.what, "cotangent");
    }

    #[test]
    fn zero_cotangent_gives_zero_gradients() {
        let f = BridgeFamily::affine1(2);
        let p = affine1([[0.3, -0.2], [0.7, 0.1]], [0.5, -0.4]);
        let g = grad_bridge(&f, &p, &[&[1.0, 2.0]], &[0.0, 0.0]).unwrap();
        assert!(g.params.iter().chain(&g.args[0]).all(|&x| x == 0.0));
    }

    #[test]
    fn identity_jacobian_passes_cotangent_through() {
        let f = BridgeFamily::affine1(2);
        let p = affine1([[1.0, 0.0], [0.0, 1.0]], [0.2, 0.3]);
        let g = grad_bridge(&f, &p, &[&[4.0, -1.0]], &[0.6, -1.5]).unwrap();
        assert_eq!(g.args[0], vec![0.6, -1.5]);
    }

    #[test]
    fn pad_gradient_is_exactly_zero() {
        for f in [
            BridgeFamily::affine1(2).with_pad(3),
            BridgeFamily::affine2(2).with_pad(1),
            BridgeFamily::mlp1h(2, 3).with_pad(2),
        ] {
            let p: Vec<f64> = (0..f.param_count())
                .map(|k| (k as f64 * 0.37).sin())
                .collect();
            let args: Vec<Vec<f64>> = (0..f.arity()).map(|a| vec![0.4 + a as f64, -0.9]).collect();
            let arg_refs: Vec<&[f64]> = args.iter().map(Vec::as_slice).collect();
            let g = grad_bridge(&f, &p, &arg_refs, &[1.3, -0.2]).unwrap();
            assert!(g.params[f.active_count()..].iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn f32_matches_f64() {
        let f = BridgeFamily::mlp1h(2, 4);
        let p64: Vec<f64> = (0..f.param_count())
            .map(|k| (k as f64 * 0.61).cos() * 0.5)
            .collect();
        let p32: Vec<f32> = p64.iter().map(|&x| x as f32).collect();
        let y64 = eval_bridge(&f, &p64, &[&[0.3, -0.8]]).unwrap();
        let y32 = eval_bridge(&f, &p32, &[&[0.3f32, -0.8]]).unwrap();
        for (a, b) in y64.iter().zip(&y32) {
            assert!((a - *b as f64).abs() < 1e-6);
        }
    }

    #[test]
    fn permutation_rejects_non_permutations() {
        let f = BridgeFamily::mlp1h(2, 3);
        let p = vec![0.0; f.param_count()];
        assert!(permute_hidden(&f, &p, &[0, 0, 1]).is_err());
        assert!(permute_hidden(&f, &p, &[0, 1]).is_err());
        assert!(permute_hidden(&f, &p, &[0, 1, 3]).is_err());
    }
}
