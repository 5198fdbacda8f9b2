// SPDX-License-Identifier: Apache-2.0

//! Reverse-mode differentiation over dense row-major `f64` matrices.
//!
//! A [`Tape`] records each operation as it is evaluated; [`Tape::backward`]
//! walks it in reverse and accumulates gradients for every parameter of the
//! borrowed [`ParamStore`] that the forward pass touched.

use std::collections::HashMap;

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Probability clamp for the cross-entropy.
pub const PROB_CLAMP: f64 = 1e-7;
const LN_EPS: f64 = 1e-5;
const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_C: f64 = 0.044_715;

pub type ParamId = usize;

/// Named parameter matrices in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Array2<f64>>,
    index: HashMap<String, ParamId>,
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore { names: Vec::new(), values: Vec::new(), index: HashMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array2<f64>) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        let id = self.values.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        id
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn value(&self, id: ParamId) -> &Array2<f64> {
        &self.values[id]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.values[id]
    }

    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.id(name).map(|i| &self.values[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<f64>)> {
        self.names.iter().map(String::as_str).zip(self.values.iter())
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Parameter group: the name up to its first `.`.
    pub fn group_of(name: &str) -> &str {
        name.split('.').next().unwrap_or(name)
    }

    pub fn groups(&self) -> Vec<String> {
        let mut g: Vec<String> = Vec::new();
        for n in &self.names {
            let grp = Self::group_of(n);
            if !g.iter().any(|x| x == grp) {
                g.push(grp.to_string());
            }
        }
        g
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.iter().all(|x| x.is_finite()))
    }
}

/// Per-parameter gradients aligned with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub values: Vec<Array2<f64>>,
}

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Gradients { values: store.values.iter().map(|v| Array2::zeros(v.raw_dim())).collect() }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }

    pub fn scale(&mut self, k: f64) {
        for a in &mut self.values {
            a.mapv_inplace(|x| x * k);
        }
    }

    pub fn max_abs(&self, id: ParamId) -> f64 {
        self.values[id].iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Param(ParamId),
    Const,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Gelu(Var),
    Transpose(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    MaskedSoftmax(Var),
    LayerNorm(Var),
    MaskedMeanRows(Var, Vec<bool>),
    BceLogit(Var, f64),
}

struct Node {
    value: Option<Array2<f64>>,
    op: Op,
    aux: Option<Array2<f64>>,
}

pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_K * (x + GELU_C * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_K * (x + GELU_C * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_K * (1.0 + 3.0 * GELU_C * x * x)
}

/// `-(y ln p + (1 - y) ln(1 - p))` with `p = sigmoid(z)` clamped to
/// `[PROB_CLAMP, 1 - PROB_CLAMP]`, evaluated in log space.
pub fn bce_from_logit(z: f64, y: f64) -> f64 {
    let p = sigmoid(z);
    if !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p) {
        let pc = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        return -(y * pc.ln() + (1.0 - y) * (1.0 - pc).ln());
    }
    y * softplus(-z) + (1.0 - y) * softplus(z)
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Tape { params, nodes: Vec::new(), param_vars: vec![None; params.len()] }
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.push_aux(value, op, None)
    }

    fn push_aux(&mut self, value: Array2<f64>, op: Op, aux: Option<Array2<f64>>) -> Var {
        self.nodes.push(Node { value: Some(value), op, aux });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> ArrayView2<'_, f64> {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(x), _) => x.view(),
            (None, Op::Param(id)) => self.params.value(*id).view(),
            _ => unreachable!("only parameter nodes borrow their value"),
        }
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[[0, 0]]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id] {
            return v;
        }
        self.nodes.push(Node { value: None, op: Op::Param(id), aux: None });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id] = Some(v);
        v
    }

    pub fn param_named(&mut self, name: &str) -> Var {
        let id = self.params.id(name).unwrap_or_else(|| panic!("unknown parameter {name}"));
        self.param(id)
    }

    pub fn has_param(&self, name: &str) -> bool {
        self.params.id(name).is_some()
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Const)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        if ac != br {
            return Err(Error::Shape(format!("matmul {ar}x{ac} by {br}x{bc}")));
        }
        let v = self.value(a).dot(&self.value(b));
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!("{what}: {:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    fn row_compatible(&self, a: Var, row: Var, what: &str) -> Result<()> {
        let (_, ac) = self.shape(a);
        if self.shape(row) != (1, ac) {
            return Err(Error::Shape(format!("{what}: row {:?} for {ac} columns", self.shape(row))));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let v = &self.value(a) + &self.value(b);
        Ok(self.push(v, Op::Add(a, b)))
    }

    /// Adds a `1 x c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.row_compatible(a, row, "add_row")?;
        let v = &self.value(a) + &self.value(row);
        Ok(self.push(v, Op::AddRow(a, row)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let v = &self.value(a) * &self.value(b);
        Ok(self.push(v, Op::Mul(a, b)))
    }

    /// Multiplies every row of `a` elementwise by a `1 x c` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.row_compatible(a, row, "mul_row")?;
        let v = &self.value(a) * &self.value(row);
        Ok(self.push(v, Op::MulRow(a, row)))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a).mapv(|x| x * k);
        self.push(v, Op::Scale(a, k))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(gelu);
        self.push(v, Op::Gelu(a))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).t().to_owned();
        self.push(v, Op::Transpose(a))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|p| self.value(*p)).collect();
        let v = concatenate(Axis(0), &views).map_err(|e| Error::Shape(format!("concat_rows: {e}")))?;
        Ok(self.push(v, Op::ConcatRows(parts.to_vec())))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|p| self.value(*p)).collect();
        let v = concatenate(Axis(1), &views).map_err(|e| Error::Shape(format!("concat_cols: {e}")))?;
        Ok(self.push(v, Op::ConcatCols(parts.to_vec())))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Result<Var> {
        let (_, c) = self.shape(a);
        if start + width > c {
            return Err(Error::Shape(format!("slice_cols {start}+{width} of {c}")));
        }
        let v = self.value(a).slice(s![.., start..start + width]).to_owned();
        Ok(self.push(v, Op::SliceCols(a, start)))
    }

    pub fn gather_rows(&mut self, table: Var, rows: &[usize]) -> Result<Var> {
        let (r, c) = self.shape(table);
        if let Some(bad) = rows.iter().find(|i| **i >= r) {
            return Err(Error::Shape(format!("row {bad} out of {r}")));
        }
        let src = self.value(table);
        let mut v = Array2::zeros((rows.len(), c));
        for (k, i) in rows.iter().enumerate() {
            v.row_mut(k).assign(&src.row(*i));
        }
        Ok(self.push(v, Op::GatherRows(table, rows.to_vec())))
    }

    /// Row-wise softmax over the columns where `key_mask` is true; masked
    /// columns get exactly zero weight.
    pub fn masked_softmax(&mut self, a: Var, key_mask: &[bool]) -> Result<Var> {
        let x = self.value(a);
        if key_mask.len() != x.ncols() {
            return Err(Error::Shape(format!("mask of {} for {} columns", key_mask.len(), x.ncols())));
        }
        if !key_mask.iter().any(|m| *m) {
            return Err(Error::AllMasked);
        }
        let mut v = Array2::zeros(x.raw_dim());
        for (r, mut out) in x.rows().into_iter().zip(v.rows_mut()) {
            let max = r.iter().zip(key_mask).filter(|(_, m)| **m).fold(f64::NEG_INFINITY, |m, (x, _)| m.max(*x));
            let mut sum = 0.0;
            for (j, (xv, m)) in r.iter().zip(key_mask).enumerate() {
                if *m {
                    let e = (xv - max).exp();
                    out[j] = e;
                    sum += e;
                }
            }
            out.mapv_inplace(|e| e / sum);
        }
        Ok(self.push(v, Op::MaskedSoftmax(a)))
    }

    /// Per-row standardization (no affine part).
    pub fn layer_norm(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let c = x.ncols() as f64;
        let mut v = Array2::zeros(x.raw_dim());
        let mut inv = Array2::zeros((x.nrows(), 1));
        for (i, (r, mut out)) in x.rows().into_iter().zip(v.rows_mut()).enumerate() {
            let mean = r.sum() / c;
            let var = r.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / c;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv[[i, 0]] = is;
            out.assign(&r.mapv(|y| (y - mean) * is));
        }
        self.push_aux(v, Op::LayerNorm(a), Some(inv))
    }

    /// Mean of the rows where `mask` is true, as a `1 x c` row.
    pub fn masked_mean_rows(&mut self, a: Var, mask: &[bool]) -> Result<Var> {
        let x = self.value(a);
        if mask.len() != x.nrows() {
            return Err(Error::Shape(format!("mask of {} for {} rows", mask.len(), x.nrows())));
        }
        let k = mask.iter().filter(|m| **m).count();
        if k == 0 {
            return Err(Error::AllMasked);
        }
        let mut v = Array2::zeros((1, x.ncols()));
        for (r, m) in x.rows().into_iter().zip(mask) {
            if *m {
                v.row_mut(0).scaled_add(1.0, &r);
            }
        }
        v.mapv_inplace(|y| y / k as f64);
        Ok(self.push(v, Op::MaskedMeanRows(a, mask.to_vec())))
    }

    /// Binary cross-entropy of a `1 x 1` logit against `target`.
    pub fn bce_logit(&mut self, z: Var, target: f64) -> Result<Var> {
        if self.shape(z) != (1, 1) {
            return Err(Error::Shape(format!("bce_logit on {:?}", self.shape(z))));
        }
        let v = bce_from_logit(self.scalar(z), target);
        Ok(self.push(Array2::from_elem((1, 1), v), Op::BceLogit(z, target)))
    }

    pub fn backward(&self, loss: Var) -> Gradients {
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Array2::ones(self.value(loss).raw_dim()));
        let mut out = Gradients::zeros_like(self.params);

        fn acc(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
            match &mut grads[v.0] {
                Some(x) => *x += &g,
                slot @ None => *slot = Some(g),
            }
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Param(id) => out.values[*id] += &g,
                Op::Const => {}
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::AddRow(a, r) => {
                    let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads, *a, g);
                    acc(&mut grads, *r, gr);
                }
                Op::Mul(a, b) => {
                    let ga = &g * &self.value(*b);
                    let gb = &g * &self.value(*a);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::MulRow(a, r) => {
                    let ga = &g * &self.value(*r);
                    let gr = (&g * &self.value(*a)).sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *r, gr);
                }
                Op::Scale(a, k) => acc(&mut grads, *a, g.mapv(|x| x * k)),
                Op::Tanh(a) => {
                    let y = node.value.as_ref().unwrap();
                    let ga = &g * &y.mapv(|t| 1.0 - t * t);
                    acc(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let y = node.value.as_ref().unwrap();
                    let ga = &g * &y.mapv(|s| s * (1.0 - s));
                    acc(&mut grads, *a, ga);
                }
                Op::Gelu(a) => {
                    let ga = &g * &self.value(*a).mapv(gelu_grad);
                    acc(&mut grads, *a, ga);
                }
                Op::Transpose(a) => acc(&mut grads, *a, g.t().to_owned()),
                Op::ConcatRows(parts) => {
                    let mut r0 = 0;
                    for p in parts {
                        let (r, _) = self.shape(*p);
                        acc(&mut grads, *p, g.slice(s![r0..r0 + r, ..]).to_owned());
                        r0 += r;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut c0 = 0;
                    for p in parts {
                        let (_, c) = self.shape(*p);
                        acc(&mut grads, *p, g.slice(s![.., c0..c0 + c]).to_owned());
                        c0 += c;
                    }
                }
                Op::SliceCols(a, start) => {
                    let mut ga = Array2::zeros(self.value(*a).raw_dim());
                    let w = g.ncols();
                    ga.slice_mut(s![.., *start..*start + w]).assign(&g);
                    acc(&mut grads, *a, ga);
                }
                Op::GatherRows(t, rows) => {
                    let mut gt = Array2::zeros(self.value(*t).raw_dim());
                    for (k, r) in rows.iter().enumerate() {
                        let mut dst = gt.row_mut(*r);
                        dst += &g.row(k);
                    }
                    acc(&mut grads, *t, gt);
                }
                Op::MaskedSoftmax(a) => {
                    let p = node.value.as_ref().unwrap();
                    let mut ga = Array2::zeros(p.raw_dim());
                    for ((pr, gr), mut out) in p.rows().into_iter().zip(g.rows()).zip(ga.rows_mut()) {
                        let dot = pr.dot(&gr);
                        for j in 0..pr.len() {
                            out[j] = pr[j] * (gr[j] - dot);
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::LayerNorm(a) => {
                    let xhat = node.value.as_ref().unwrap();
                    let inv = node.aux.as_ref().unwrap();
                    let c = xhat.ncols() as f64;
                    let mut ga = Array2::zeros(xhat.raw_dim());
                    for (k, ((xr, gr), mut out)) in xhat.rows().into_iter().zip(g.rows()).zip(ga.rows_mut()).enumerate()
                    {
                        let sg = gr.sum();
                        let sgx = gr.dot(&xr);
                        let is = inv[[k, 0]];
                        for j in 0..xr.len() {
                            out[j] = is / c * (c * gr[j] - sg - xr[j] * sgx);
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::MaskedMeanRows(a, mask) => {
                    let k = mask.iter().filter(|m| **m).count() as f64;
                    let (r, c) = self.shape(*a);
                    let mut ga = Array2::zeros((r, c));
                    for (i, m) in mask.iter().enumerate() {
                        if *m {
                            ga.row_mut(i).assign(&g.row(0).mapv(|x| x / k));
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::BceLogit(z, y) => {
                    let p = sigmoid(self.scalar(*z));
                    let d = if (PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p) { p - y } else { 0.0 };
                    acc(&mut grads, *z, g.mapv(|x| x * d));
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |_| rng.gen_range(-1.0..1.0))
    }

    /// Checks every parameter entry against a central difference of `f`.
    fn check(store: &ParamStore, f: impl Fn(&mut Tape) -> Var) {
        let tape_grads = {
            let mut t = Tape::new(store);
            let l = f(&mut t);
            t.backward(l)
        };
        let h = 1e-6;
        for id in 0..store.len() {
            for k in 0..store.value(id).len() {
                let mut plus = store.clone();
                let mut minus = store.clone();
                plus.value_mut(id).as_slice_mut().unwrap()[k] += h;
                minus.value_mut(id).as_slice_mut().unwrap()[k] -= h;
                let lp = {
                    let mut t = Tape::new(&plus);
                    let l = f(&mut t);
                    t.scalar(l)
                };
                let lm = {
                    let mut t = Tape::new(&minus);
                    let l = f(&mut t);
                    t.scalar(l)
                };
                let num = (lp - lm) / (2.0 * h);
                let ana = tape_grads.values[id].as_slice().unwrap()[k];
                assert!(
                    (num - ana).abs() <= 1e-6 * (1.0 + num.abs()),
                    "{} [{k}]: numeric {num} analytic {ana}",
                    store.name(id)
                );
            }
        }
    }

    fn sum_all(t: &mut Tape, v: Var) -> Var {
        let (r, c) = t.shape(v);
        let ones_l = t.constant(Array2::ones((1, r)));
        let ones_r = t.constant(Array2::ones((c, 1)));
        let a = t.matmul(ones_l, v).unwrap();
        t.matmul(a, ones_r).unwrap()
    }

    #[test]
    fn elementwise_and_matmul_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        store.insert("a", rand_mat(&mut rng, 3, 4));
        store.insert("b", rand_mat(&mut rng, 4, 2));
        store.insert("row", rand_mat(&mut rng, 1, 2));
        store.insert("w", rand_mat(&mut rng, 3, 2));
        check(&store, |t| {
            let a = t.param_named("a");
            let b = t.param_named("b");
            let row = t.param_named("row");
            let w = t.param_named("w");
            let ab = t.matmul(a, b).unwrap();
            let x = t.add_row(ab, row).unwrap();
            let x = t.tanh(x);
            let y = t.mul_row(x, row).unwrap();
            let y = t.gelu(y);
            let z = t.mul(y, w).unwrap();
            let z = t.sigmoid(z);
            let z = t.scale(z, 1.7);
            let zt = t.transpose(z);
            let z2 = t.matmul(zt, w).unwrap();
            let s = t.add(z2, z2).unwrap();
            sum_all(t, s)
        });
    }

    #[test]
    fn structural_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        store.insert("x", rand_mat(&mut rng, 4, 5));
        store.insert("y", rand_mat(&mut rng, 2, 5));
        store.insert("tab", rand_mat(&mut rng, 3, 3));
        store.insert("u", rand_mat(&mut rng, 6, 1));
        let mask = [true, false, true, true, false, true];
        check(&store, |t| {
            let x = t.param_named("x");
            let y = t.param_named("y");
            let tab = t.param_named("tab");
            let u = t.param_named("u");
            let xy = t.concat_rows(&[x, y]).unwrap();
            let g = t.gather_rows(tab, &[2, 0, 2, 1, 1, 0]).unwrap();
            let both = t.concat_cols(&[xy, g]).unwrap();
            let sl = t.slice_cols(both, 2, 5).unwrap();
            let ln = t.layer_norm(sl);
            let sq = t.transpose(ln);
            let att = t.matmul(ln, sq).unwrap();
            let p = t.masked_softmax(att, &mask).unwrap();
            let pm = t.masked_mean_rows(p, &mask).unwrap();
            let logit = t.matmul(pm, u).unwrap();
            t.bce_logit(logit, 1.0).unwrap()
        });
    }

    #[test]
    fn softmax_masked_columns_are_zero() {
        let store = ParamStore::new();
        let mut t = Tape::new(&store);
        let a = t.constant(array![[1.0, 50.0, 2.0]]);
        let p = t.masked_softmax(a, &[true, false, true]).unwrap();
        let v = t.value(p);
        assert_eq!(v[[0, 1]], 0.0);
        assert!((v.sum() - 1.0).abs() < 1e-15);
        assert!(matches!(t.masked_softmax(a, &[false; 3]), Err(Error::AllMasked)));
    }

    #[test]
    fn bce_matches_direct_formula_and_clamps() {
        for z in [-3.0f64, -0.2, 0.0, 0.7, 4.0] {
            let p: f64 = 1.0 / (1.0 + (-z).exp());
            for y in [0.0, 1.0] {
                let direct = -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
                assert!((bce_from_logit(z, y) - direct).abs() < 1e-12);
            }
        }
        let max = -(PROB_CLAMP.ln());
        assert!((bce_from_logit(-100.0, 1.0) - max).abs() < 1e-9);
        assert!(bce_from_logit(0.0, 1.0) - std::f64::consts::LN_2 < 1e-15);
    }

    #[test]
    fn shape_errors() {
        let store = ParamStore::new();
        let mut t = Tape::new(&store);
        let a = t.constant(Array2::zeros((2, 3)));
        let b = t.constant(Array2::zeros((2, 3)));
        assert!(t.matmul(a, b).is_err());
        let r = t.constant(Array2::zeros((1, 2)));
        assert!(t.add_row(a, r).is_err());
    }
}
