//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every operation of one forward pass. Sequences are
//! laid out as `frames x features` matrices; vectors are `1 x n` rows.
//! Parameters are borrowed from a [`ParamStore`] and never copied onto the
//! tape.

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};

use super::params::{Grads, ParamId, ParamStore};
use crate::error::{Error, Result};

pub type Mat = Array2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    MulConst(Var, Mat),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Rows(Var, Vec<usize>),
    ColRange(Var, usize, usize),
    Im2Col {
        x: Var,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    MeanRows(Var),
    Flatten(Var),
}

struct Node {
    op: Op,
    value: Option<Mat>,
    tag: u16,
}

pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    tags: Vec<String>,
    current_tag: u16,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            tags: vec![String::from("input")],
            current_tag: 0,
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    /// Labels subsequently recorded nodes, for error reporting.
    pub fn set_tag(&mut self, tag: &str) {
        self.current_tag = match self.tags.iter().position(|t| t == tag) {
            Some(i) => i as u16,
            None => {
                self.tags.push(tag.to_string());
                (self.tags.len() - 1) as u16
            }
        };
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Option<Mat>) -> Var {
        self.nodes.push(Node {
            op,
            value,
            tag: self.current_tag,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        let node = &self.nodes[v.0];
        match (&node.op, &node.value) {
            (Op::Param(id), _) => self.params.get(*id),
            (_, Some(m)) => m,
            _ => unreachable!("non-parameter node without a value"),
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    pub fn input(&mut self, m: Mat) -> Var {
        self.push(Op::Leaf, Some(m))
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.push(Op::Param(id), None)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(Op::MatMul(a, b), Some(v))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(Op::Add(a, b), Some(v))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(Op::Sub(a, b), Some(v))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(Op::Mul(a, b), Some(v))
    }

    /// Adds a `1 x c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let v = self.value(a) + self.value(row);
        self.push(Op::AddRow(a, row), Some(v))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(sigmoid);
        self.push(Op::Sigmoid(a), Some(v))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        self.push(Op::Tanh(a), Some(v))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(0.0));
        self.push(Op::Relu(a), Some(v))
    }

    /// Element-wise product with a constant (e.g. a dropout mask).
    pub fn mul_const(&mut self, a: Var, c: Mat) -> Var {
        let v = self.value(a) * &c;
        self.push(Op::MulConst(a, c), Some(v))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        if parts.len() == 1 {
            return parts[0];
        }
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = concatenate(Axis(1), &views).expect("concat_cols: row counts differ");
        self.push(Op::ConcatCols(parts.to_vec()), Some(v))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        if parts.len() == 1 {
            return parts[0];
        }
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = concatenate(Axis(0), &views).expect("concat_rows: column counts differ");
        self.push(Op::ConcatRows(parts.to_vec()), Some(v))
    }

    /// Gathers rows (with repetition allowed).
    pub fn rows(&mut self, a: Var, idx: Vec<usize>) -> Var {
        let src = self.value(a);
        let v = src.select(Axis(0), &idx);
        self.push(Op::Rows(a, idx), Some(v))
    }

    /// Contiguous column slice `[start, end)`.
    pub fn col_range(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice(s![.., start..end]).to_owned();
        self.push(Op::ColRange(a, start, end), Some(v))
    }

    /// Gathers arbitrary columns as a constant-free linear map.
    pub fn cols(&mut self, a: Var, idx: &[usize]) -> Var {
        // contiguous runs become slices, others a concatenation of slices
        let mut pieces = Vec::new();
        let mut i = 0;
        while i < idx.len() {
            let start = idx[i];
            let mut end = start + 1;
            while i + 1 < idx.len() && idx[i + 1] == end {
                end += 1;
                i += 1;
            }
            pieces.push(self.col_range(a, start, end));
            i += 1;
        }
        self.concat_cols(&pieces)
    }

    /// Patch extraction for 1-D convolution. Output row `o` holds input rows
    /// `o*stride - pad .. o*stride - pad + kernel` laid out side by side,
    /// with zeros outside the input.
    pub fn im2col(&mut self, x: Var, kernel: usize, stride: usize, pad: usize, out_len: usize) -> Var {
        let src = self.value(x);
        let (tin, cin) = src.dim();
        let mut v = Mat::zeros((out_len, kernel * cin));
        for o in 0..out_len {
            for k in 0..kernel {
                let t = (o * stride + k) as isize - pad as isize;
                if t >= 0 && (t as usize) < tin {
                    v.slice_mut(s![o, k * cin..(k + 1) * cin]).assign(&src.row(t as usize));
                }
            }
        }
        self.push(Op::Im2Col { x, kernel, stride, pad }, Some(v))
    }

    /// Mean over rows, giving a `1 x c` row.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let v = self
            .value(a)
            .mean_axis(Axis(0))
            .expect("mean of empty matrix")
            .insert_axis(Axis(0));
        self.push(Op::MeanRows(a), Some(v))
    }

    /// Row-major flattening into a `1 x (r*c)` row.
    pub fn flatten(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let n = m.len();
        let v = Mat::from_shape_vec((1, n), m.iter().copied().collect()).expect("flatten");
        self.push(Op::Flatten(a), Some(v))
    }

    /// Fails with the tag of the first node holding a non-finite value.
    pub fn check_finite(&self) -> Result<()> {
        for node in &self.nodes {
            if let Some(v) = &node.value {
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Numerical(format!(
                        "non-finite activation in layer `{}`",
                        self.tags[node.tag as usize]
                    )));
                }
            }
        }
        Ok(())
    }

    /// Back-propagates `seed` (the gradient of the objective with respect
    /// to `out`) and returns parameter gradients.
    pub fn backward(&self, out: Var, seed: Mat) -> Grads {
        let mut grads = Grads::zeros_like(self.params);
        self.backward_into(out, seed, &mut grads);
        grads
    }

    pub fn backward_into(&self, out: Var, seed: Mat, param_grads: &mut Grads) {
        assert_eq!(seed.dim(), self.shape(out), "seed shape must match output");
        let mut g: Vec<Option<Mat>> = Vec::with_capacity(out.0 + 1);
        g.resize_with(out.0 + 1, || None);
        g[out.0] = Some(seed);

        for i in (0..=out.0).rev() {
            let Some(grad) = g[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Leaf => {}
                Op::Param(id) => param_grads.accumulate(*id, &grad),
                Op::MatMul(a, b) => {
                    let ga = grad.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&grad);
                    acc(&mut g, *a, ga);
                    acc(&mut g, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut g, *b, grad.clone());
                    acc(&mut g, *a, grad);
                }
                Op::Sub(a, b) => {
                    acc(&mut g, *b, -&grad);
                    acc(&mut g, *a, grad);
                }
                Op::Mul(a, b) => {
                    let ga = &grad * self.value(*b);
                    let gb = &grad * self.value(*a);
                    acc(&mut g, *a, ga);
                    acc(&mut g, *b, gb);
                }
                Op::AddRow(a, row) => {
                    let gr = grad.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut g, *row, gr);
                    acc(&mut g, *a, grad);
                }
                Op::Sigmoid(a) => {
                    let y = self.nodes[i].value.as_ref().unwrap();
                    let mut ga = grad;
                    ga.zip_mut_with(y, |d, &y| *d *= y * (1.0 - y));
                    acc(&mut g, *a, ga);
                }
                Op::Tanh(a) => {
                    let y = self.nodes[i].value.as_ref().unwrap();
                    let mut ga = grad;
                    ga.zip_mut_with(y, |d, &y| *d *= 1.0 - y * y);
                    acc(&mut g, *a, ga);
                }
                Op::Relu(a) => {
                    let x = self.value(*a);
                    let mut ga = grad;
                    ga.zip_mut_with(x, |d, &x| {
                        if x <= 0.0 {
                            *d = 0.0
                        }
                    });
                    acc(&mut g, *a, ga);
                }
                Op::MulConst(a, c) => acc(&mut g, *a, grad * c),
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let w = self.shape(p).1;
                        acc(&mut g, p, grad.slice(s![.., start..start + w]).to_owned());
                        start += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let h = self.shape(p).0;
                        acc(&mut g, p, grad.slice(s![start..start + h, ..]).to_owned());
                        start += h;
                    }
                }
                Op::Rows(a, idx) => {
                    let mut ga = Mat::zeros(self.shape(*a));
                    for (r, &src) in idx.iter().enumerate() {
                        let mut row = ga.row_mut(src);
                        row += &grad.row(r);
                    }
                    acc(&mut g, *a, ga);
                }
                Op::ColRange(a, start, end) => {
                    let mut ga = Mat::zeros(self.shape(*a));
                    ga.slice_mut(s![.., *start..*end]).assign(&grad);
                    acc(&mut g, *a, ga);
                }
                Op::Im2Col { x, kernel, stride, pad } => {
                    let (tin, cin) = self.shape(*x);
                    let mut gx = Mat::zeros((tin, cin));
                    for o in 0..grad.nrows() {
                        for k in 0..*kernel {
                            let t = (o * stride + k) as isize - *pad as isize;
                            if t >= 0 && (t as usize) < tin {
                                let mut row = gx.row_mut(t as usize);
                                row += &grad.slice(s![o, k * cin..(k + 1) * cin]);
                            }
                        }
                    }
                    acc(&mut g, *x, gx);
                }
                Op::MeanRows(a) => {
                    let (r, c) = self.shape(*a);
                    let scale = 1.0 / r as f64;
                    let ga = Mat::from_shape_fn((r, c), |(_, j)| grad[[0, j]] * scale);
                    acc(&mut g, *a, ga);
                }
                Op::Flatten(a) => {
                    let shape = self.shape(*a);
                    let ga = grad.into_shape_with_order(shape).expect("flatten grad");
                    acc(&mut g, *a, ga);
                }
            }
        }
    }
}

fn acc(g: &mut [Option<Mat>], v: Var, delta: Mat) {
    match &mut g[v.0] {
        Some(existing) => *existing += &delta,
        slot @ None => *slot = Some(delta),
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    // finite differences on the input of a matrix-valued expression,
    // contracted with a fixed weight matrix
    fn check_input_grad(x0: Mat, f: impl Fn(&mut Tape, Var) -> Var) {
        let mut store = ParamStore::default();
        let pid = store.add("x", x0.clone());
        let mut tape = Tape::new(&store);
        let xp = tape.param(pid);
        let y = f(&mut tape, xp);
        let w = Mat::from_shape_fn(tape.shape(y), |(i, j)| 0.3 + 0.1 * i as f64 - 0.2 * j as f64);
        let analytic = tape.backward(y, w.clone()).get(pid).clone();

        let empty = ParamStore::default();
        let eps = 1e-6;
        for ((r, c), &a) in analytic.indexed_iter() {
            let eval = |delta: f64| {
                let mut xm = x0.clone();
                xm[[r, c]] += delta;
                let mut t = Tape::new(&empty);
                let xv = t.input(xm);
                let yv = f(&mut t, xv);
                (t.value(yv) * &w).sum()
            };
            let numeric = (eval(eps) - eval(-eps)) / (2.0 * eps);
            assert!(
                (numeric - a).abs() < 1e-6 * (1.0 + numeric.abs()),
                "({r},{c}): numeric {numeric} analytic {a}"
            );
        }
    }

    #[test]
    fn elementwise_ops() {
        let x = array![[0.3, -1.2, 0.7], [2.0, 0.1, -0.4]];
        check_input_grad(x.clone(), |t, x| t.sigmoid(x));
        check_input_grad(x.clone(), |t, x| t.tanh(x));
        check_input_grad(x.clone(), |t, x| t.relu(x));
        check_input_grad(x.clone(), |t, x| t.mul(x, x));
        check_input_grad(x.clone(), |t, x| {
            let y = t.tanh(x);
            t.sub(x, y)
        });
    }

    #[test]
    fn structural_ops() {
        let x = Mat::from_shape_fn((6, 4), |(i, j)| ((i * 4 + j) as f64 * 0.37).sin());
        check_input_grad(x.clone(), |t, x| t.rows(x, vec![0, 2, 2, 5]));
        check_input_grad(x.clone(), |t, x| t.cols(x, &[3, 0, 1]));
        check_input_grad(x.clone(), |t, x| t.mean_rows(x));
        check_input_grad(x.clone(), |t, x| t.flatten(x));
        check_input_grad(x.clone(), |t, x| {
            let a = t.col_range(x, 0, 2);
            let b = t.tanh(x);
            let c = t.concat_cols(&[a, b]);
            t.concat_rows(&[c, c])
        });
        check_input_grad(x.clone(), |t, x| t.im2col(x, 3, 2, 1, 3));
        check_input_grad(x.clone(), |t, x| t.im2col(x, 5, 1, 2, 6));
    }

    #[test]
    fn matmul_and_bias() {
        let x = Mat::from_shape_fn((3, 4), |(i, j)| (i as f64 - j as f64) * 0.21);
        check_input_grad(x.clone(), |t, x| {
            let w = t.input(Mat::from_shape_fn((4, 2), |(i, j)| 0.1 * (i + 2 * j) as f64 - 0.3));
            let b = t.input(array![[0.5, -0.25]]);
            let y = t.matmul(x, w);
            t.add_row(y, b)
        });
        check_input_grad(array![[0.2, -0.1, 0.4]], |t, b| {
            let x = t.input(Mat::from_elem((3, 3), 0.7));
            let y = t.tanh(x);
            t.add_row(y, b)
        });
    }

    #[test]
    fn im2col_layout() {
        let store = ParamStore::default();
        let mut t = Tape::new(&store);
        let x = t.input(array![[1.0, 10.0], [2.0, 20.0], [3.0, 30.0], [4.0, 40.0]]);
        let p = t.im2col(x, 3, 2, 1, 2);
        assert_eq!(
            t.value(p),
            &array![[0.0, 0.0, 1.0, 10.0, 2.0, 20.0], [2.0, 20.0, 3.0, 30.0, 4.0, 40.0]]
        );
    }

    #[test]
    fn non_finite_values_report_tag() {
        let store = ParamStore::default();
        let mut t = Tape::new(&store);
        t.set_tag("lstm_2");
        let x = t.input(array![[f64::NAN]]);
        let _ = t.tanh(x);
        let err = t.check_finite().unwrap_err().to_string();
        assert!(err.contains("lstm_2"), "{err}");
    }

    #[test]
    fn sigmoid_is_stable_for_large_inputs() {
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
    }
}
