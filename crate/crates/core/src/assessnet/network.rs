use rand_chacha::ChaCha8Rng;

use super::{BaselineKind, ModelConfig};
use crate::dataset::BodyPart;
use crate::nn::{dropout, Conv1d, Dense, Lstm, ParamStore, Tape, Var};

/// Dropout randomness for one forward pass; `None` in evaluation mode.
pub(crate) type Noise<'a> = Option<&'a mut ChaCha8Rng>;

/// Parallel convolution branches whose ReLU outputs are concatenated.
#[derive(Debug, Clone)]
struct BranchLayer {
    branches: Vec<Conv1d>,
}

impl BranchLayer {
    fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        inputs: usize,
        kernels: &[usize],
        channels: usize,
        stride: usize,
    ) -> Self {
        let branches = kernels
            .iter()
            .map(|&k| Conv1d::new(store, rng, &format!("{name}.k{k}"), inputs, channels, k, stride))
            .collect();
        BranchLayer { branches }
    }

    fn outputs(&self) -> usize {
        self.branches.iter().map(|b| b.outputs).sum()
    }

    fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let outs: Vec<Var> = self
            .branches
            .iter()
            .map(|b| {
                let y = b.forward(tape, x);
                tape.relu(y)
            })
            .collect();
        if outs.len() == 1 {
            outs[0]
        } else {
            tape.concat_cols(&outs)
        }
    }
}

/// Two branch layers, each followed by dropout. The stride applies in the
/// first layer.
#[derive(Debug, Clone)]
pub(crate) struct ConvBlock {
    name: String,
    layers: [BranchLayer; 2],
    dropout: f64,
}

impl ConvBlock {
    fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        cfg: &ModelConfig,
        name: &str,
        inputs: usize,
        channels: usize,
        stride: usize,
    ) -> Self {
        let (kernels, width) = if cfg.use_branches {
            (cfg.branch_kernels.clone(), channels)
        } else {
            let mid = cfg.branch_kernels[cfg.branch_kernels.len() / 2];
            (vec![mid], channels * cfg.branch_kernels.len())
        };
        let first = BranchLayer::new(store, rng, &format!("{name}.l0"), inputs, &kernels, width, stride);
        let second = BranchLayer::new(store, rng, &format!("{name}.l1"), first.outputs(), &kernels, width, 1);
        ConvBlock {
            name: name.to_string(),
            layers: [first, second],
            dropout: cfg.dropout,
        }
    }

    fn outputs(&self) -> usize {
        self.layers[1].outputs()
    }

    fn forward(&self, tape: &mut Tape, x: Var, noise: &mut Noise) -> Var {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            tape.set_tag(&format!("{}.l{i}", self.name));
            h = layer.forward(tape, h);
            h = dropout(tape, h, self.dropout, noise.as_deref_mut());
        }
        h
    }
}

/// Temporal pyramid over a subset of input columns: each scale decimates
/// the frames by its factor and runs a block whose stride brings every
/// scale to `frames / max_factor` rows; scale outputs are concatenated.
#[derive(Debug, Clone)]
struct Pyramid {
    columns: Vec<usize>,
    factors: Vec<usize>,
    blocks: Vec<ConvBlock>,
}

impl Pyramid {
    fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, cfg: &ModelConfig, name: &str, columns: Vec<usize>) -> Self {
        let factors = cfg.active_factors();
        let top = cfg.max_factor();
        let blocks = factors
            .iter()
            .map(|&f| {
                ConvBlock::new(
                    store,
                    rng,
                    cfg,
                    &format!("{name}.s{f}"),
                    columns.len(),
                    cfg.part_channels,
                    top / f,
                )
            })
            .collect();
        Pyramid {
            columns,
            factors,
            blocks,
        }
    }

    fn outputs(&self) -> usize {
        self.blocks.iter().map(ConvBlock::outputs).sum()
    }

    fn forward(&self, tape: &mut Tape, x: Var, noise: &mut Noise) -> Var {
        let frames = tape.shape(x).0;
        let xp = if self.columns.len() == tape.shape(x).1 && self.columns.iter().enumerate().all(|(i, &c)| i == c) {
            x
        } else {
            tape.cols(x, &self.columns)
        };
        let outs: Vec<Var> = self
            .factors
            .iter()
            .zip(&self.blocks)
            .map(|(&f, block)| {
                let xs = if f == 1 {
                    xp
                } else {
                    tape.rows(xp, (0..frames).step_by(f).collect())
                };
                block.forward(tape, xs, noise)
            })
            .collect();
        if outs.len() == 1 {
            outs[0]
        } else {
            tape.concat_cols(&outs)
        }
    }
}

#[derive(Debug, Clone)]
enum Head {
    Recurrent { layers: Vec<Lstm>, out: Dense },
    Pooled { fc: Dense, out: Dense },
}

impl Head {
    fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Head::Recurrent { layers, out } => {
                let mut seq = x;
                let mut last = x;
                for (i, l) in layers.iter().enumerate() {
                    tape.set_tag(&format!("lstm{i}"));
                    let (s, h) = l.forward(tape, seq);
                    seq = s;
                    last = h;
                }
                tape.set_tag("output");
                out.forward(tape, last)
            }
            Head::Pooled { fc, out } => {
                tape.set_tag("pool");
                let pooled = tape.mean_rows(x);
                let h = fc.forward(tape, pooled);
                let h = tape.relu(h);
                tape.set_tag("output");
                out.forward(tape, h)
            }
        }
    }
}

/// Body-part pyramids merged hierarchically (arms, legs, then trunk)
/// followed by the recurrent or pooled head.
#[derive(Debug, Clone)]
pub(crate) struct SpatioTemporal {
    /// Left arm, right arm, left leg, right leg, trunk; a single
    /// whole-body pyramid without the hierarchy.
    parts: Vec<Pyramid>,
    /// Upper body, lower body, whole body; only whole body without the
    /// hierarchy.
    merges: Vec<ConvBlock>,
    head: Head,
}

impl SpatioTemporal {
    pub(crate) fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> Self {
        let (parts, merges) = if cfg.use_hierarchy {
            let parts: Vec<Pyramid> = BodyPart::ALL
                .iter()
                .map(|&p| Pyramid::new(store, rng, cfg, p.key(), cfg.body_parts.group(p).to_vec()))
                .collect();
            let upper = ConvBlock::new(
                store,
                rng,
                cfg,
                "upper_body",
                parts[0].outputs() + parts[1].outputs(),
                cfg.merge_channels,
                1,
            );
            let lower = ConvBlock::new(
                store,
                rng,
                cfg,
                "lower_body",
                parts[2].outputs() + parts[3].outputs(),
                cfg.merge_channels,
                1,
            );
            let whole_in = upper.outputs() + lower.outputs() + parts[4].outputs();
            let whole = ConvBlock::new(store, rng, cfg, "whole_body", whole_in, cfg.merge_channels, 1);
            (parts, vec![upper, lower, whole])
        } else {
            let all = Pyramid::new(store, rng, cfg, "body", (0..cfg.input_dim).collect());
            let whole = ConvBlock::new(store, rng, cfg, "whole_body", all.outputs(), cfg.merge_channels, 1);
            (vec![all], vec![whole])
        };
        let features = merges.last().expect("at least one merge block").outputs();
        let head = if cfg.use_recurrent {
            let mut width = features;
            let layers = cfg
                .recurrent_units
                .iter()
                .enumerate()
                .map(|(i, &u)| {
                    let l = Lstm::new(store, rng, &format!("lstm{i}"), width, u);
                    width = u;
                    l
                })
                .collect();
            Head::Recurrent {
                layers,
                out: Dense::new(store, rng, "output", width, 1),
            }
        } else {
            let fc = Dense::new(store, rng, "pool_fc", features, cfg.pooled_units);
            let out = Dense::new(store, rng, "output", cfg.pooled_units, 1);
            Head::Pooled { fc, out }
        };
        SpatioTemporal { parts, merges, head }
    }

    pub(crate) fn forward(&self, tape: &mut Tape, x: Var, noise: &mut Noise) -> Var {
        let feats: Vec<Var> = self.parts.iter().map(|p| p.forward(tape, x, noise)).collect();
        let merged = if self.merges.len() == 3 {
            let arms = tape.concat_cols(&feats[0..2]);
            let upper = self.merges[0].forward(tape, arms, noise);
            let legs = tape.concat_cols(&feats[2..4]);
            let lower = self.merges[1].forward(tape, legs, noise);
            let body = tape.concat_cols(&[upper, lower, feats[4]]);
            self.merges[2].forward(tape, body, noise)
        } else {
            self.merges[0].forward(tape, feats[0], noise)
        };
        self.head.forward(tape, merged)
    }
}

/// Plain comparison networks.
#[derive(Debug, Clone)]
pub(crate) enum Baseline {
    /// Three convolutions, two fully connected layers, linear output.
    Cnn {
        convs: Vec<Conv1d>,
        fcs: Vec<Dense>,
        out: Dense,
    },
    /// LSTM, frame-wise fully connected layer, LSTM, linear output.
    Lstm {
        first: Lstm,
        fc: Dense,
        second: Lstm,
        out: Dense,
    },
}

pub const CNN_CHANNELS: [usize; 3] = [60, 30, 10];
pub const CNN_KERNEL: usize = 5;
pub const CNN_HIDDEN: [usize; 2] = [200, 100];
pub const LSTM_UNITS: (usize, usize, usize) = (20, 30, 10);

impl Baseline {
    pub(crate) fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        kind: BaselineKind,
        input_dim: usize,
        frames: usize,
    ) -> Self {
        match kind {
            BaselineKind::DeepCnn => {
                let mut width = input_dim;
                let convs = CNN_CHANNELS
                    .iter()
                    .enumerate()
                    .map(|(i, &c)| {
                        let l = Conv1d::new(store, rng, &format!("conv{i}"), width, c, CNN_KERNEL, 1);
                        width = c;
                        l
                    })
                    .collect();
                let mut width = frames * width;
                let fcs = CNN_HIDDEN
                    .iter()
                    .enumerate()
                    .map(|(i, &u)| {
                        let l = Dense::new(store, rng, &format!("fc{i}"), width, u);
                        width = u;
                        l
                    })
                    .collect();
                let out = Dense::new(store, rng, "output", width, 1);
                Baseline::Cnn { convs, fcs, out }
            }
            BaselineKind::DeepLstm => {
                let (a, b, c) = LSTM_UNITS;
                let first = Lstm::new(store, rng, "lstm0", input_dim, a);
                let fc = Dense::new(store, rng, "fc", a, b);
                let second = Lstm::new(store, rng, "lstm1", b, c);
                let out = Dense::new(store, rng, "output", c, 1);
                Baseline::Lstm { first, fc, second, out }
            }
        }
    }

    pub(crate) fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Baseline::Cnn { convs, fcs, out } => {
                let mut h = x;
                for (i, c) in convs.iter().enumerate() {
                    tape.set_tag(&format!("conv{i}"));
                    h = c.forward(tape, h);
                    h = tape.relu(h);
                }
                let mut h = tape.flatten(h);
                for (i, d) in fcs.iter().enumerate() {
                    tape.set_tag(&format!("fc{i}"));
                    h = d.forward(tape, h);
                    h = tape.relu(h);
                }
                tape.set_tag("output");
                out.forward(tape, h)
            }
            Baseline::Lstm { first, fc, second, out } => {
                tape.set_tag("lstm0");
                let (seq, _) = first.forward(tape, x);
                tape.set_tag("fc");
                let h = fc.forward(tape, seq);
                let h = tape.relu(h);
                tape.set_tag("lstm1");
                let (_, last) = second.forward(tape, h);
                tape.set_tag("output");
                out.forward(tape, last)
            }
        }
    }
}
