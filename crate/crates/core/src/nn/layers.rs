use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::{ParamId, ParamStore};
use super::{Mat, Tape, Var};

/// Glorot/Xavier uniform initialisation.
pub fn glorot(rng: &mut ChaCha8Rng, rows: usize, cols: usize, fan_in: usize, fan_out: usize) -> Mat {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Mat::from_shape_simple_fn((rows, cols), || rng.gen_range(-limit..limit))
}

/// Fully connected layer `x W + b`.
#[derive(Debug, Clone)]
pub struct Dense {
    w: ParamId,
    b: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Dense {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, inputs: usize, outputs: usize) -> Self {
        let w = store.add(format!("{name}.w"), glorot(rng, inputs, outputs, inputs, outputs));
        let b = store.add(format!("{name}.b"), Mat::zeros((1, outputs)));
        Dense { w, b, inputs, outputs }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let w = tape.param(self.w);
        let b = tape.param(self.b);
        let y = tape.matmul(x, w);
        tape.add_row(y, b)
    }
}

/// 1-D convolution over the frame axis with "same" zero padding: the output
/// has `ceil(frames / stride)` rows.
#[derive(Debug, Clone)]
pub struct Conv1d {
    w: ParamId,
    b: ParamId,
    pub kernel: usize,
    pub stride: usize,
    pub inputs: usize,
    pub outputs: usize,
}

impl Conv1d {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        inputs: usize,
        outputs: usize,
        kernel: usize,
        stride: usize,
    ) -> Self {
        let w = store.add(
            format!("{name}.w"),
            glorot(rng, kernel * inputs, outputs, kernel * inputs, kernel * outputs),
        );
        let b = store.add(format!("{name}.b"), Mat::zeros((1, outputs)));
        Conv1d {
            w,
            b,
            kernel,
            stride,
            inputs,
            outputs,
        }
    }

    pub fn output_len(&self, frames: usize) -> usize {
        frames.div_ceil(self.stride)
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let tin = tape.shape(x).0;
        let out_len = self.output_len(tin);
        let total_pad = ((out_len - 1) * self.stride + self.kernel).saturating_sub(tin);
        let patches = tape.im2col(x, self.kernel, self.stride, total_pad / 2, out_len);
        let w = tape.param(self.w);
        let b = tape.param(self.b);
        let y = tape.matmul(patches, w);
        tape.add_row(y, b)
    }
}

/// Long short-term memory layer, gate order input, forget, cell, output.
#[derive(Debug, Clone)]
pub struct Lstm {
    w: ParamId,
    u: ParamId,
    b: ParamId,
    pub inputs: usize,
    pub hidden: usize,
}

impl Lstm {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, inputs: usize, hidden: usize) -> Self {
        let w = store.add(format!("{name}.w"), glorot(rng, inputs, 4 * hidden, inputs, 4 * hidden));
        let u = store.add(format!("{name}.u"), glorot(rng, hidden, 4 * hidden, hidden, 4 * hidden));
        let mut bias = Mat::zeros((1, 4 * hidden));
        bias.slice_mut(ndarray::s![.., hidden..2 * hidden]).fill(1.0);
        let b = store.add(format!("{name}.b"), bias);
        Lstm {
            w,
            u,
            b,
            inputs,
            hidden,
        }
    }

    /// Runs over all frames of `x` (`frames x inputs`) from a zero state and
    /// returns the hidden-state sequence (`frames x hidden`) and the final
    /// hidden state (`1 x hidden`).
    pub fn forward(&self, tape: &mut Tape, x: Var) -> (Var, Var) {
        let frames = tape.shape(x).0;
        let h = self.hidden;
        let w = tape.param(self.w);
        let u = tape.param(self.u);
        let b = tape.param(self.b);
        let xw = tape.matmul(x, w);
        let xw = tape.add_row(xw, b);
        let mut outputs = Vec::with_capacity(frames);
        let mut state: Option<(Var, Var)> = None;
        for t in 0..frames {
            let mut z = tape.rows(xw, vec![t]);
            if let Some((hp, _)) = state {
                let hu = tape.matmul(hp, u);
                z = tape.add(z, hu);
            }
            let zi = tape.col_range(z, 0, h);
            let zf = tape.col_range(z, h, 2 * h);
            let zg = tape.col_range(z, 2 * h, 3 * h);
            let zo = tape.col_range(z, 3 * h, 4 * h);
            let i = tape.sigmoid(zi);
            let g = tape.tanh(zg);
            let o = tape.sigmoid(zo);
            let ig = tape.mul(i, g);
            let c = match state {
                Some((_, cp)) => {
                    let f = tape.sigmoid(zf);
                    let fc = tape.mul(f, cp);
                    tape.add(fc, ig)
                }
                None => ig,
            };
            let tc = tape.tanh(c);
            let hn = tape.mul(o, tc);
            outputs.push(hn);
            state = Some((hn, c));
        }
        let last = *outputs.last().expect("LSTM over an empty sequence");
        (tape.concat_rows(&outputs), last)
    }
}

/// Inverted dropout. With `rng == None` (evaluation) this is the identity.
pub fn dropout(tape: &mut Tape, x: Var, rate: f64, rng: Option<&mut ChaCha8Rng>) -> Var {
    match rng {
        Some(rng) if rate > 0.0 => {
            let keep = 1.0 - rate;
            let mask =
                Mat::from_shape_simple_fn(tape.shape(x), || if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 });
            tape.mul_const(x, mask)
        }
        _ => x,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn conv_output_lengths() {
        let mut store = ParamStore::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for (tin, stride, expect) in [(240, 8, 30), (120, 4, 30), (60, 2, 30), (30, 1, 30), (17, 2, 9)] {
            let conv = Conv1d::new(&mut store, &mut rng, "c", 3, 2, 5, stride);
            let mut tape = Tape::new(&store);
            let x = tape.input(Mat::ones((tin, 3)));
            let y = conv.forward(&mut tape, x);
            assert_eq!(tape.shape(y), (expect, 2));
        }
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut store = ParamStore::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let conv = Conv1d::new(&mut store, &mut rng, "c", 2, 3, 3, 1);
        let x = Mat::from_shape_fn((5, 2), |(t, c)| (t * 2 + c) as f64 * 0.1 - 0.3);
        let mut tape = Tape::new(&store);
        let xv = tape.input(x.clone());
        let y = conv.forward(&mut tape, xv);
        let w = store.get(ParamId(0));
        for t in 0..5 {
            for o in 0..3 {
                let mut s = 0.0;
                for k in 0..3 {
                    let src = t as isize + k as isize - 1;
                    if (0..5).contains(&src) {
                        for c in 0..2 {
                            s += x[[src as usize, c]] * w[[k * 2 + c, o]];
                        }
                    }
                }
                assert!((tape.value(y)[[t, o]] - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn lstm_single_step_closed_form() {
        let mut store = ParamStore::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let lstm = Lstm::new(&mut store, &mut rng, "l", 1, 1);
        let x = 0.5;
        let w = store.get(ParamId(0)).clone();
        let b = store.get(ParamId(2)).clone();
        let z: Vec<f64> = (0..4).map(|k| x * w[[0, k]] + b[[0, k]]).collect();
        let s = super::super::sigmoid;
        let c = s(z[0]) * z[2].tanh();
        let h = s(z[3]) * c.tanh();
        let mut tape = Tape::new(&store);
        let xv = tape.input(Mat::from_elem((1, 1), x));
        let (_, last) = lstm.forward(&mut tape, xv);
        assert!((tape.value(last)[[0, 0]] - h).abs() < 1e-14);
    }

    #[test]
    fn dropout_eval_is_identity_and_train_keeps_expectation() {
        let store = ParamStore::default();
        let mut tape = Tape::new(&store);
        let x = tape.input(Mat::ones((200, 50)));
        assert_eq!(dropout(&mut tape, x, 0.25, None), x);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let y = dropout(&mut tape, x, 0.25, Some(&mut rng));
        let mean = tape.value(y).mean().unwrap();
        assert!((mean - 1.0).abs() < 0.05, "{mean}");
    }
}
