//! Central finite-difference checks for every differentiable operation, from
//! single tape primitives up to the full training objective.

use mlgib::autodiff::{finite_difference_check, relative_error, GradCheck, Tape, Tensor};
use mlgib::graph::{sample_block, sample_blocks};
use mlgib::matrix::Matrix;
use mlgib::model::{
    aggregate, aib_loss, candidate_edges, hib_loss, message_params, path_probabilities, pseudo_label,
    sample_messages, AibMode, MessageBatch, MlpVars, Mode, PriorVars, PseudoActivation, VAR_FLOOR,
};
use mlgib::rng;
use mlgib::train::{Model, TrainConfig};
use mlgib::Graph;
use rand::Rng as _;

pub const STEP: f64 = 1e-5;
pub const PRIMITIVE_TOL: f64 = 1e-4;
pub const END_TO_END_TOL: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct GradResult {
    pub name: String,
    pub points: usize,
    pub max_rel_error: f64,
    /// Analytic and numeric derivative at the worst coordinate.
    pub worst: (f64, f64),
}

fn worst_pair(res: &GradCheck) -> (f64, f64) {
    res.analytic
        .iter()
        .zip(&res.numeric)
        .map(|(&a, &b)| (a, b))
        .max_by(|x, y| relative_error(x.0, x.1).total_cmp(&relative_error(y.0, y.1)))
        .unwrap_or((0.0, 0.0))
}

/// Shape and sampling range of one differentiable input.
#[derive(Debug, Clone, Copy)]
pub struct Input {
    pub rows: usize,
    pub cols: usize,
    pub lo: f64,
    pub hi: f64,
    /// Keeps samples at least this far from zero (ReLU kink).
    pub margin: f64,
}

pub const fn input(rows: usize, cols: usize) -> Input {
    Input {
        rows,
        cols,
        lo: -2.0,
        hi: 2.0,
        margin: 0.0,
    }
}

pub const fn positive(rows: usize, cols: usize) -> Input {
    Input {
        rows,
        cols,
        lo: 0.5,
        hi: 2.0,
        margin: 0.0,
    }
}

fn draw(inp: &Input, r: &mut rng::Rng) -> Vec<f64> {
    (0..inp.rows * inp.cols)
        .map(|_| loop {
            let x = r.random_range(inp.lo..inp.hi);
            if x.abs() >= inp.margin {
                break x;
            }
        })
        .collect()
}

/// Checks `build` at `points` random points. Non-scalar outputs are
/// contracted with a fixed random weight tensor.
pub fn check_op<F>(name: &str, inputs: &[Input], points: usize, seed: u64, build: F) -> GradResult
where
    F: Fn(&mut Tape, &[Tensor]) -> Tensor,
{
    let mut r = rng::rng(seed);
    let mut worst = 0.0f64;
    let mut worst_at = (0.0, 0.0);
    for _ in 0..points {
        let point: Vec<f64> = inputs.iter().flat_map(|i| draw(i, &mut r)).collect();
        let weight_seed: u64 = r.random();
        let eval = |x: &[f64]| {
            let mut tape = Tape::new();
            let mut leaves = Vec::with_capacity(inputs.len());
            let mut at = 0;
            for i in inputs {
                let len = i.rows * i.cols;
                leaves.push(tape.from_vec(i.rows, i.cols, x[at..at + len].to_vec(), true));
                at += len;
            }
            let out = build(&mut tape, &leaves);
            let loss = contract(&mut tape, out, weight_seed);
            tape.backward(loss).expect("scalar loss");
            let grad = leaves
                .iter()
                .flat_map(|&t| tape.grad(t).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; t.len()]))
                .collect();
            (tape.scalar(loss), grad)
        };
        let res = finite_difference_check(eval, &point, STEP);
        if res.max_rel_error > worst {
            worst = res.max_rel_error;
            worst_at = worst_pair(&res);
        }
    }
    GradResult {
        name: name.into(),
        points,
        max_rel_error: worst,
        worst: worst_at,
    }
}

fn contract(tape: &mut Tape, out: Tensor, seed: u64) -> Tensor {
    if out.len() == 1 {
        return out;
    }
    let mut r = rng::rng(seed);
    let w: Vec<f64> = (0..out.len()).map(|_| r.random_range(-1.0..1.0)).collect();
    let w = tape.from_vec(out.rows(), out.cols(), w, false);
    let p = tape.mul(out, w);
    tape.sum(p)
}

/// Every tape primitive, each at `points` random points (all dims ≤ 8).
pub fn primitive_checks(points: usize, seed: u64) -> Vec<GradResult> {
    let s = |i: u64| rng::derive(seed, &[i]);
    let relu_in = Input {
        margin: 0.05,
        ..input(3, 4)
    };
    vec![
        check_op("matmul", &[input(3, 4), input(4, 2)], points, s(0), |t, x| t.matmul(x[0], x[1])),
        check_op("add", &[input(3, 4), input(3, 4)], points, s(1), |t, x| t.add(x[0], x[1])),
        check_op("sub", &[input(3, 4), input(3, 4)], points, s(2), |t, x| t.sub(x[0], x[1])),
        check_op("mul", &[input(3, 4), input(3, 4)], points, s(3), |t, x| t.mul(x[0], x[1])),
        check_op("add_row", &[input(3, 4), input(1, 4)], points, s(4), |t, x| t.add_row(x[0], x[1])),
        check_op("concat_cols", &[input(3, 2), input(3, 3)], points, s(5), |t, x| {
            t.concat_cols(x[0], x[1])
        }),
        check_op("row_dot", &[input(3, 4), input(3, 4)], points, s(6), |t, x| t.row_dot(x[0], x[1])),
        check_op("scale", &[input(3, 4)], points, s(7), |t, x| t.scale(x[0], -1.7)),
        check_op("neg", &[input(3, 4)], points, s(8), |t, x| t.neg(x[0])),
        check_op("add_scalar", &[input(3, 4)], points, s(9), |t, x| t.add_scalar(x[0], 0.3)),
        check_op("sigmoid", &[input(3, 4)], points, s(10), |t, x| t.sigmoid(x[0])),
        check_op("exp", &[input(3, 4)], points, s(11), |t, x| t.exp(x[0])),
        check_op("log", &[positive(3, 4)], points, s(12), |t, x| t.log(x[0])),
        check_op("relu", &[relu_in], points, s(13), |t, x| t.relu(x[0])),
        check_op("softplus", &[input(3, 4)], points, s(14), |t, x| t.softplus(x[0])),
        check_op("sqrt", &[positive(3, 4)], points, s(15), |t, x| t.sqrt(x[0])),
        check_op("gather_rows", &[input(4, 3)], points, s(16), |t, x| t.gather_rows(x[0], &[2, 0, 2, 3, 1])),
        check_op("segment_sum", &[input(5, 3)], points, s(17), |t, x| {
            t.segment_sum(x[0], &[0, 1, 0, 2, 1], 3)
        }),
        check_op("segment_softmax", &[input(6, 1)], points, s(18), |t, x| {
            t.segment_softmax(x[0], &[0, 0, 1, 1, 1, 2], 3)
        }),
        check_op("sum", &[input(3, 4)], points, s(19), |t, x| t.sum(x[0])),
        check_op("sum_cols", &[input(3, 4)], points, s(20), |t, x| t.sum_cols(x[0])),
        check_op("logsumexp_rows", &[input(3, 4)], points, s(21), |t, x| t.logsumexp_rows(x[0])),
        check_op("log_softmax_rows", &[input(3, 4)], points, s(22), |t, x| t.log_softmax_rows(x[0])),
        check_op("softmax_rows", &[input(3, 4)], points, s(23), |t, x| t.softmax_rows(x[0])),
        check_op("broadcast_rows", &[input(1, 4)], points, s(24), |t, x| t.broadcast_rows(x[0], 3)),
        check_op(
            "gaussian_log_density",
            &[input(3, 4), input(3, 4), positive(3, 4)],
            points,
            s(25),
            |t, x| t.gaussian_log_density(x[0], x[1], x[2]),
        ),
        check_op(
            "mixture_log_density",
            &[input(3, 4), input(1, 3), input(3, 4), positive(3, 4)],
            points,
            s(26),
            |t, x| t.mixture_log_density(x[0], x[1], x[2], x[3]),
        ),
        check_op("bce_with_logits", &[input(3, 4)], points, s(27), |t, x| {
            t.bce_with_logits(x[0], &[1., 0., 0., 1., 1., 1., 0., 0., 0., 1., 0., 1.])
        }),
    ]
}

/// MLP weights at initialization scale, so softmax outputs stay unsaturated.
fn mlp_inputs(input_dim: usize, hidden: usize, out: usize) -> [Input; 4] {
    let unit = |rows, cols| Input {
        lo: -1.0,
        hi: 1.0,
        ..input(rows, cols)
    };
    [
        unit(input_dim, hidden),
        unit(1, hidden),
        unit(hidden, out),
        unit(1, out),
    ]
}

fn mlp(x: &[Tensor]) -> MlpVars {
    MlpVars {
        w1: x[0],
        b1: x[1],
        w2: x[2],
        b2: x[3],
    }
}

/// Small fixed graph with degrees 1..=3 and one isolated node.
pub fn toy_graph() -> Graph {
    let edges = [(0, 1), (0, 2), (1, 2), (2, 3), (3, 4)];
    let mut r = rng::rng(99);
    let feats: Vec<f64> = (0..6 * 3).map(|_| r.random_range(-1.0..1.0)).collect();
    let labels = vec![
        1, 0, 1, //
        0, 1, 0, //
        1, 1, 0, //
        0, 0, 1, //
        1, 0, 0, //
        0, 1, 1,
    ];
    Graph::from_edges(&edges, Matrix::from_vec(6, 3, feats), labels, 3).unwrap()
}

/// Gradients of each layer component with respect to its own inputs.
pub fn component_checks(points: usize, seed: u64) -> Vec<GradResult> {
    let s = |i: u64| rng::derive(seed, &[100 + i]);
    let graph = toy_graph();
    let all: Vec<usize> = (0..graph.num_nodes()).collect();
    let block = sample_block(&graph, &all, 8, 0).unwrap();
    let edges = candidate_edges(&block);
    let nb = block.nodes().len();
    let mut out = Vec::new();

    let mut inputs = vec![input(nb, 3)];
    inputs.extend(mlp_inputs(3, 4, 3));
    inputs.push(input(3, 2));
    for act in [PseudoActivation::None, PseudoActivation::Sigmoid, PseudoActivation::Softmax] {
        out.push(check_op(&format!("pseudo_label/{act:?}"), &inputs, points, s(0), |t, x| {
            pseudo_label(t, x[0], x[5], &mlp(&x[1..5]), act).unwrap()
        }));
    }

    for mode in [AibMode::Verbatim, AibMode::Kl] {
        let e = edges.clone();
        out.push(check_op(&format!("aib_loss/{mode:?}"), &[input(nb, 2)], points, s(1), move |t, x| {
            let p = path_probabilities(t, x[0], &e);
            aib_loss(t, &p, &e, mode)
        }));
    }
    let e = edges.clone();
    out.push(check_op("path_probabilities", &[input(nb, 2)], points, s(2), move |t, x| {
        path_probabilities(t, x[0], &e).probs
    }));

    let (tgt, src): (Vec<usize>, Vec<usize>) = edges.target.iter().zip(&edges.candidate).map(|(&a, &b)| (a, b)).unzip();
    let mut inputs = vec![input(nb, 3)];
    inputs.extend(mlp_inputs(6, 4, 2));
    inputs.extend(mlp_inputs(6, 4, 2));
    {
        let (tgt, src) = (tgt.clone(), src.clone());
        out.push(check_op("message_params/mu", &inputs, points, s(3), move |t, x| {
            message_params(t, x[0], tgt.clone(), src.clone(), &mlp(&x[1..5]), &mlp(&x[5..9])).mu
        }));
    }
    {
        let (tgt, src) = (tgt.clone(), src.clone());
        out.push(check_op("message_params/var", &inputs, points, s(4), move |t, x| {
            message_params(t, x[0], tgt.clone(), src.clone(), &mlp(&x[1..5]), &mlp(&x[5..9])).var
        }));
    }

    // Pathwise derivative of a quadratic in the sampled message.
    out.push(check_op("sample_messages", &[input(5, 3), input(5, 3)], points, s(5), |t, x| {
        let var = t.softplus(x[1]);
        let var = t.add_scalar(var, VAR_FLOOR);
        let mut batch = batch_of(x[0], var);
        sample_messages(t, &mut batch, Some(17));
        let z = batch.z.unwrap();
        t.mul(z, z)
    }));

    // HIB with respect to message means, pre-variances and every prior tensor.
    out.push(check_op(
        "hib_loss",
        &[input(5, 3), input(5, 3), input(1, 2), input(2, 3), input(2, 3)],
        points,
        s(6),
        |t, x| {
            let var = t.softplus(x[1]);
            let var = t.add_scalar(var, VAR_FLOOR);
            let mut batch = batch_of(x[0], var);
            sample_messages(t, &mut batch, Some(5));
            let prior = PriorVars {
                logits: x[2],
                means: x[3],
                pre_var: x[4],
            };
            hib_loss(t, &batch, &prior)
        },
    ));

    out.push(check_op("aggregate", &[input(5, 3), input(3, 2)], points, s(7), |t, x| {
        let mut batch = batch_of(x[0], x[0]);
        batch.target = vec![0, 2, 0, 1, 2];
        batch.z = Some(x[0]);
        aggregate(t, &batch, x[1], 3)
    }));
    out
}

fn batch_of(mu: Tensor, var: Tensor) -> MessageBatch {
    MessageBatch {
        target: (0..mu.rows()).collect(),
        source: (0..mu.rows()).collect(),
        mu,
        var,
        z: None,
        eps: None,
    }
}

/// Configurations of the end-to-end composites.
pub fn composite_configs() -> Vec<(String, TrainConfig)> {
    let base = TrainConfig {
        hidden: 4,
        message_dim: 3,
        prior_components: 2,
        fanout: 8,
        ..TrainConfig::default()
    };
    vec![
        (
            "two-layer/verbatim/softmax".into(),
            TrainConfig {
                beta: 0.1,
                seed: 1,
                ..base.clone()
            },
        ),
        (
            "one-layer/kl/sigmoid".into(),
            TrainConfig {
                layers: 1,
                beta: 0.5,
                aib_mode: AibMode::Kl,
                pseudo_label_activation: PseudoActivation::Sigmoid,
                seed: 2,
                ..base.clone()
            },
        ),
        (
            "two-layer/budget-1/finetuned-labels/per-layer-priors".into(),
            TrainConfig {
                beta: 0.05,
                path_budget: Some(1),
                pseudo_label_activation: PseudoActivation::None,
                finetune_labels: true,
                shared_prior: false,
                seed: 3,
                ..base
            },
        ),
    ]
}

/// `BCE + β Σ (AIB + HIB)` of a train-mode forward pass on the 6-node graph,
/// differentiated with respect to every parameter tensor.
pub fn end_to_end_check(name: &str, config: &TrainConfig) -> GradResult {
    let (_, res) = end_to_end_gradients(config);
    GradResult {
        name: name.into(),
        points: 1,
        max_rel_error: res.max_rel_error,
        worst: worst_pair(&res),
    }
}

/// Per-coordinate parameter names and the raw comparison behind
/// [`end_to_end_check`].
pub fn end_to_end_gradients(config: &TrainConfig) -> (Vec<String>, GradCheck) {
    let graph = toy_graph();
    let mut r = rng::rng(rng::derive(config.seed, &[7]));
    let dict = Matrix::from_vec(3, 2, (0..6).map(|_| r.random_range(-1.0..1.0)).collect());
    let template = Model::new(config.clone(), graph.num_features(), dict).unwrap();
    let targets: Vec<usize> = (0..graph.num_nodes()).collect();
    let blocks = sample_blocks(&graph, &targets, config.fanout, config.layers, 11).unwrap();
    let y: Vec<f64> = targets
        .iter()
        .flat_map(|&v| graph.labels_of(v).iter().map(|&b| f64::from(b)))
        .collect();
    // Jitter every parameter so zero-initialized biases do not put ReLU
    // inputs exactly on the kink.
    let point: Vec<f64> = template
        .named_params()
        .iter()
        .flat_map(|(_, m)| m.data.clone())
        .map(|x| x + r.random_range(-0.5..0.5))
        .collect();

    let eval = |x: &[f64]| {
        let mut model = template.clone();
        let mut at = 0;
        for (_, m) in model.named_params_mut() {
            let len = m.data.len();
            m.data.copy_from_slice(&x[at..at + len]);
            at += len;
        }
        let mut tape = Tape::new();
        let f = model.forward(&mut tape, &graph, &blocks, Mode::Train, 5, true, true).unwrap();
        let mut loss = tape.bce_with_logits(f.logits, &y);
        let terms: Vec<Tensor> = f.aib.iter().chain(&f.hib).copied().collect();
        for t in terms {
            let scaled = tape.scale(t, config.beta);
            loss = tape.add(loss, scaled);
        }
        tape.backward(loss).unwrap();
        let grad = f
            .params
            .iter()
            .flat_map(|&t| tape.grad(t).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; t.len()]))
            .collect();
        (tape.scalar(loss), grad)
    };
    let names = template
        .named_params()
        .iter()
        .flat_map(|(n, m)| (0..m.data.len()).map(move |i| format!("{n}[{i}]")))
        .collect();
    (names, finite_difference_check(eval, &point, STEP))
}

pub fn end_to_end_checks() -> Vec<GradResult> {
    composite_configs()
        .iter()
        .map(|(name, cfg)| end_to_end_check(name, cfg))
        .collect()
}
