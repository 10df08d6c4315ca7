//! Model construction, the training loop and evaluation.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use neurode::models::{Cnf, DEFunc, EnergyField, NeuralODE};
use neurode::nn::{checkpoint, FourierBasis, Layer, ParamCursor};
use neurode::odeint::{dump, DepthSpan, VectorField};
use neurode::sensitivity::{Gradients, IntegralLoss, Kinetic, TerminalLoss};
use neurode::{Tape, Tensor, Var};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, IntegralSpec, Task, Variant};
use crate::data::{self, Dataset, Targets};
use crate::HarnessError;

// independent random streams derived from the config seed
const INIT_STREAM: u64 = 1;
const BATCH_STREAM: u64 = 2;
const TRAIN_NOISE_STREAM: u64 = 3;
const EVAL_NOISE_STREAM: u64 = 4;

/// Points per trajectory dump, and the most test inputs dumped.
const DUMP_POINTS: usize = 50;
const DUMP_ROWS: usize = 128;
/// Depths at which the kinetic energy of the field is sampled.
const KINETIC_POINTS: usize = 21;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn split_seed(seed: u64, split: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(split)
}

pub fn train_set(cfg: &ExperimentConfig) -> Dataset {
    data::generate(cfg.task, cfg.data.n_train(), split_seed(cfg.seed, 1), &cfg.data)
}

pub fn test_set(cfg: &ExperimentConfig) -> Dataset {
    data::generate(cfg.task, cfg.data.n_test(), split_seed(cfg.seed, 2), &cfg.data)
}

pub enum Flow {
    Ode(NeuralODE),
    Density(Cnf),
}

pub struct Model {
    pub flow: Flow,
    /// Readout `Linear(state → 2)` for classification.
    pub head: Option<Layer>,
}

impl Model {
    pub fn ode(&self) -> &NeuralODE {
        match &self.flow {
            Flow::Ode(m) => m,
            Flow::Density(c) => &c.ode,
        }
    }

    pub fn ode_mut(&mut self) -> &mut NeuralODE {
        match &mut self.flow {
            Flow::Ode(m) => m,
            Flow::Density(c) => &mut c.ode,
        }
    }

    pub fn num_parameters(&self) -> usize {
        self.ode().num_parameters() + self.head.as_ref().map_or(0, Layer::param_count)
    }

    pub fn records(&self) -> Vec<checkpoint::ParamRecord> {
        let mut recs = self.ode().defunc.records("field.");
        if let Some(h) = &self.head {
            recs.extend(checkpoint::records(h, "head."));
        }
        recs
    }

    /// Loads every parameter or none.
    pub fn load_records(&mut self, recs: &[checkpoint::ParamRecord]) -> Result<(), HarnessError> {
        let ckpt = |e: neurode::Error| HarnessError::Checkpoint(e.to_string());
        let mut defunc = self.ode().defunc.clone();
        defunc.load_records("field.", recs).map_err(ckpt)?;
        let mut head = self.head.clone();
        if let Some(h) = &mut head {
            checkpoint::load_into(h, "head.", recs).map_err(ckpt)?;
        }
        let expected = defunc.param_count() + head.as_ref().map_or(0, Layer::param_count);
        let known = recs
            .iter()
            .filter(|r| r.name.starts_with("field.") || (head.is_some() && r.name.starts_with("head.")))
            .map(|r| r.values.len())
            .sum::<usize>();
        if known != expected || known != recs.iter().map(|r| r.values.len()).sum::<usize>() {
            return Err(HarnessError::Checkpoint(
                "checkpoint holds parameters this model does not have".into(),
            ));
        }
        self.ode_mut().defunc = defunc;
        self.head = head;
        Ok(())
    }
}

/// Tanh network `input → widths… → output`, optionally fed the depth.
fn dense(input: usize, output: usize, widths: &[usize], depth_cat: bool, rng: &mut ChaCha8Rng) -> Layer {
    let mut layers = Vec::new();
    let mut prev = input;
    if depth_cat {
        layers.push(Layer::DepthCat);
        prev += 1;
    }
    for &w in widths {
        layers.push(Layer::linear(prev, w, rng));
        layers.push(Layer::Tanh);
        prev = w;
    }
    layers.push(Layer::linear(prev, output, rng));
    Layer::Sequential(layers)
}

fn galerkin(input: usize, output: usize, widths: &[usize], basis: &FourierBasis, rng: &mut ChaCha8Rng) -> Layer {
    let mut layers = Vec::new();
    let mut prev = input;
    for &w in widths {
        layers.push(Layer::gal_linear(prev, w, basis.clone(), rng));
        layers.push(Layer::Tanh);
        prev = w;
    }
    layers.push(Layer::gal_linear(prev, output, basis.clone(), rng));
    Layer::Sequential(layers)
}

/// Freshly initialized model for `cfg`.
pub fn build_model(cfg: &ExperimentConfig) -> Result<Model, HarnessError> {
    let m = &cfg.model;
    let mut rng = stream(cfg.seed, INIT_STREAM);
    let dim = cfg.state_dim();
    let top = dim / m.order;
    let [s0, s1] = m.span;
    let basis = FourierBasis::new(m.basis_terms, s0, s1);
    let net = |out: usize, rng: &mut ChaCha8Rng| match m.variant {
        Variant::Galerkin => galerkin(dim, out, &m.widths, &basis, rng),
        _ => dense(dim, out, &m.widths, m.depth_cat, rng),
    };
    let mut defunc = match m.variant {
        Variant::Vanilla | Variant::Galerkin => DEFunc::new(net(top, &mut rng)),
        Variant::Hamiltonian => DEFunc::energy(EnergyField::hamiltonian(net(1, &mut rng))),
        Variant::Stable => DEFunc::energy(EnergyField::stable(net(1, &mut rng))),
    }
    .with_order(m.order)
    .with_augment_dims(m.augment_dims);
    if cfg.task == Task::DensityGaussians {
        defunc = defunc.with_divergence(m.divergence);
    }
    let integral = match cfg.integral_loss {
        IntegralSpec::None => None,
        IntegralSpec::Kinetic { lambda } => Some(IntegralLoss::new(Kinetic).weight(lambda)),
    };
    let ode = NeuralODE::new(defunc)
        .with_span(DepthSpan::new(s0, s1)?)
        .with_solver(cfg.solver.clone())
        .with_sensitivity(cfg.sensitivity)
        .with_integral(integral);
    let head = cfg.task.is_classification().then(|| Layer::linear(dim, 2, &mut rng));
    let flow = if cfg.task == Task::DensityGaussians {
        Flow::Density(Cnf::new(ode)?)
    } else {
        Flow::Ode(ode)
    };
    Ok(Model { flow, head })
}

/// Two-class cross entropy through a linear readout whose parameters are the
/// auxiliary parameters of the loss.
struct HeadCrossEntropy<'a> {
    head: &'a Layer,
    /// `+1` for label 0, `−1` for label 1.
    signs: Tensor,
}

impl TerminalLoss for HeadCrossEntropy<'_> {
    fn aux_params(&self) -> Option<Tensor> {
        Some(self.head.flatten_params())
    }

    fn eval<'t>(&self, z1: Var<'t>, aux: Option<Var<'t>>) -> neurode::Result<Var<'t>> {
        let tape = z1.tape();
        let aux = aux.unwrap_or_else(|| tape.constant(self.head.flatten_params()));
        let logits = self.head.forward(&mut ParamCursor::new(aux), 0.0, z1)?;
        let margin = logits.narrow_cols(1, 1)?.sub(logits.narrow_cols(0, 1)?)?;
        let margin = margin.reshape(vec![self.signs.numel()])?;
        // −log softmax of the true class
        margin.mul(tape.constant(self.signs.clone()))?.softplus().mean()
    }
}

impl<'a> HeadCrossEntropy<'a> {
    fn new(head: &'a Layer, labels: &[usize]) -> Self {
        let signs = labels.iter().map(|&y| if y == 0 { 1.0 } else { -1.0 }).collect();
        Self {
            head,
            signs: Tensor::vector(signs),
        }
    }
}

/// Squared error of the first state column against `q(T)`.
struct PositionMse(Tensor);

impl TerminalLoss for PositionMse {
    fn eval<'t>(&self, z1: Var<'t>, _: Option<Var<'t>>) -> neurode::Result<Var<'t>> {
        let q = z1.narrow_cols(0, 1)?.reshape(vec![self.0.numel()])?;
        q.sub(z1.tape().constant(self.0.clone()))?.square().mean()
    }
}

fn batch_gradients(model: &Model, batch: &Dataset, noise_rng: &mut ChaCha8Rng) -> neurode::Result<Gradients> {
    match (&model.flow, &batch.targets) {
        (Flow::Density(cnf), _) => cnf.nll_gradients(&batch.inputs, noise_rng),
        (Flow::Ode(ode), Targets::Labels(labels)) => {
            let head = model.head.as_ref().expect("classification models carry a head");
            ode.gradients(&batch.inputs, Some(&HeadCrossEntropy::new(head, labels)), None)
        }
        (Flow::Ode(ode), Targets::Values(y)) => {
            ode.gradients(&batch.inputs, Some(&PositionMse(Tensor::vector(y.clone()))), None)
        }
        (Flow::Ode(_), Targets::None) => Err(neurode::Error::InvalidArgument(
            "supervised model given an unlabelled batch".into(),
        )),
    }
}

/// Gradient descent with heavy-ball momentum: `v ← μv + g`, `p ← p − ηv`.
struct Sgd {
    lr: f64,
    momentum: f64,
    velocity: Vec<Option<Tensor>>,
}

impl Sgd {
    fn new(lr: f64, momentum: f64, slots: usize) -> Self {
        Self {
            lr,
            momentum,
            velocity: vec![None; slots],
        }
    }

    fn step(&mut self, slot: usize, p: &Tensor, g: &Tensor) -> neurode::Result<Tensor> {
        let v = match &self.velocity[slot] {
            Some(v) => v.lincomb(&[(self.momentum - 1.0, v), (1.0, g)])?,
            None => g.clone(),
        };
        let next = p.lincomb(&[(-self.lr, &v)])?;
        self.velocity[slot] = Some(v);
        Ok(next)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    NumericalFailure,
}

/// Held-out metrics. Exactly one of `accuracy`, `nll`, `mse` is set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinalMetrics {
    pub accuracy: Option<f64>,
    pub nll: Option<f64>,
    pub mse: Option<f64>,
    /// Training objective on the test set, regularizer excluded.
    pub test_loss: f64,
    /// Mean `‖f(s, z(s))‖²` over test trajectories.
    pub kinetic_energy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub status: Status,
    pub task: Task,
    pub steps_completed: usize,
    /// Minibatch objective at each iterate, `steps + 1` entries on success.
    pub losses: Vec<f64>,
    /// Cumulative field evaluations, one entry per loss.
    pub nfe_forward: Vec<usize>,
    pub nfe_backward: Vec<usize>,
    pub metrics: Option<FinalMetrics>,
    pub num_parameters: usize,
    pub wall_time_s: f64,
    pub model: serde_json::Value,
    pub config: ExperimentConfig,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Where `metrics.json`, `checkpoint.json` and `trajectory.jsonl` go.
    pub out_dir: Option<PathBuf>,
    pub dump_trajectory: bool,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), HarnessError> {
    let text = serde_json::to_string_pretty(value).map_err(neurode::Error::from)?;
    fs::write(path, text).map_err(io_err(path))
}

fn save_checkpoint(dir: &Path, recs: &[checkpoint::ParamRecord]) -> Result<(), HarnessError> {
    let path = dir.join("checkpoint.json");
    let text = checkpoint::to_json(recs)?;
    fs::write(&path, text).map_err(io_err(&path))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Test-set metrics. Parameters are not touched.
pub fn evaluate_model(model: &Model, cfg: &ExperimentConfig, test: &Dataset) -> neurode::Result<FinalMetrics> {
    let ode = model.ode();
    let x = &test.inputs;
    let mut m = FinalMetrics {
        accuracy: None,
        nll: None,
        mse: None,
        test_loss: f64::NAN,
        kinetic_energy: kinetic_energy(ode, x)?,
    };
    match (&model.flow, &test.targets) {
        (Flow::Density(cnf), _) => {
            let lp = cnf.log_prob(x, &mut stream(cfg.seed, EVAL_NOISE_STREAM))?;
            let nll = -mean(lp.data());
            m.nll = Some(nll);
            m.test_loss = nll;
        }
        (Flow::Ode(ode), Targets::Labels(labels)) => {
            let head = model.head.as_ref().expect("classification models carry a head");
            let logits = head.eval(0.0, &ode.forward(x)?)?;
            let mut correct = 0;
            let mut ce = 0.0;
            for (row, &y) in logits.data().chunks(2).zip(labels) {
                let margin = row[1 - y] - row[y];
                ce += softplus(margin);
                correct += usize::from(margin < 0.0);
            }
            m.accuracy = Some(correct as f64 / labels.len() as f64);
            m.test_loss = ce / labels.len() as f64;
        }
        (Flow::Ode(ode), Targets::Values(y)) => {
            let z = ode.forward(x)?;
            let se: Vec<f64> = z.data().chunks(z.shape()[1]).zip(y).map(|(r, y)| (r[0] - y).powi(2)).collect();
            m.mse = Some(mean(&se));
            m.test_loss = mean(&se);
        }
        (Flow::Ode(_), Targets::None) => {
            return Err(neurode::Error::InvalidArgument("supervised model given unlabelled data".into()))
        }
    }
    Ok(m)
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn kinetic_energy(ode: &NeuralODE, x: &Tensor) -> neurode::Result<f64> {
    let depths = DepthSpan::linspace(ode.span.s0, ode.span.s1, KINETIC_POINTS)?.depths();
    let traj = ode.trajectory(x, &depths)?;
    let theta = ode.defunc.params();
    let mut acc = Vec::with_capacity(traj.len());
    for (i, &s) in traj.depths.iter().enumerate() {
        let tape = Tape::new();
        let f = ode.defunc.dynamics(tape.constant(theta.clone()), s, tape.constant(traj.at(i)?))?;
        acc.push(f.square().sum_axis(1)?.mean()?.item());
    }
    Ok(mean(&acc))
}

fn dump_trajectory(model: &Model, test: &Dataset, dir: &Path) -> Result<(), HarnessError> {
    let ode = model.ode();
    let rows: Vec<usize> = (0..test.len().min(DUMP_ROWS)).collect();
    let x = test.inputs.select_rows(&rows)?;
    let depths = DepthSpan::linspace(ode.span.s0, ode.span.s1, DUMP_POINTS)?.depths();
    let traj = ode.trajectory(&x, &depths)?;
    let path = dir.join("trajectory.jsonl");
    let file = File::create(&path).map_err(io_err(&path))?;
    dump::write_jsonl(&traj, BufWriter::new(file))?;
    Ok(())
}

fn finite(g: &Gradients) -> bool {
    g.loss.is_finite() && g.theta.is_finite() && g.aux.as_ref().is_none_or(Tensor::is_finite)
}

/// Runs the configured optimization and writes its outputs.
///
/// A non-finite loss or a solver failure stops training; the parameters of
/// the last iterate with a finite loss are checkpointed and the report is
/// written with status `numerical_failure` before the error is returned.
pub fn train(cfg: &ExperimentConfig, opts: &TrainOptions) -> Result<MetricsReport, HarnessError> {
    cfg.validate()?;
    let start = Instant::now();
    if let Some(dir) = &opts.out_dir {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let train = train_set(cfg);
    let test = test_set(cfg);
    let mut model = build_model(cfg)?;
    let opt = &cfg.optimizer;
    let mut sgd = Sgd::new(opt.learning_rate, opt.momentum, 2);
    let mut batch_rng = stream(cfg.seed, BATCH_STREAM);
    let mut noise_rng = stream(cfg.seed, TRAIN_NOISE_STREAM);
    let full: Vec<usize> = (0..train.len()).collect();

    let mut losses = Vec::with_capacity(opt.steps + 1);
    let (mut nfe_fwd, mut nfe_bwd) = (Vec::with_capacity(opt.steps + 1), Vec::with_capacity(opt.steps + 1));
    let (mut fwd, mut bwd) = (0, 0);
    let mut last_good = model.records();
    let mut failure = None;

    for step in 0..=opt.steps {
        let batch = if opt.batch_size >= train.len() {
            train.subset(&full)
        } else {
            train.subset(&index::sample(&mut batch_rng, train.len(), opt.batch_size).into_vec())
        };
        let g = match batch_gradients(&model, &batch, &mut noise_rng) {
            Ok(g) if finite(&g) => g,
            Ok(g) => {
                failure = Some((step, format!("non-finite loss {}", g.loss)));
                break;
            }
            Err(e) if e.is_numerical() => {
                failure = Some((step, e.to_string()));
                break;
            }
            Err(e) => return Err(e.into()),
        };
        fwd += g.forward_stats.nfe;
        bwd += g.backward_stats.nfe;
        losses.push(g.loss);
        nfe_fwd.push(fwd);
        nfe_bwd.push(bwd);
        last_good = model.records();
        if step == opt.steps {
            break;
        }

        let theta = sgd.step(0, &model.ode().defunc.params(), &g.theta)?;
        model.ode_mut().defunc.set_params(&theta)?;
        if let (Some(head), Some(ga)) = (&mut model.head, &g.aux) {
            let p = sgd.step(1, &head.flatten_params(), ga)?;
            head.unflatten_params(&p)?;
        }
    }

    let metrics = match failure {
        None => match evaluate_model(&model, cfg, &test) {
            Ok(m) => Some(m),
            Err(e) if e.is_numerical() => {
                failure = Some((opt.steps, format!("evaluation: {e}")));
                None
            }
            Err(e) => return Err(e.into()),
        },
        Some(_) => None,
    };

    let report = MetricsReport {
        status: if failure.is_some() { Status::NumericalFailure } else { Status::Ok },
        task: cfg.task,
        steps_completed: losses.len().saturating_sub(1),
        losses,
        nfe_forward: nfe_fwd,
        nfe_backward: nfe_bwd,
        metrics,
        num_parameters: model.num_parameters(),
        wall_time_s: start.elapsed().as_secs_f64(),
        model: model.ode().summary_json(),
        config: cfg.clone(),
        error: failure.as_ref().map(|(_, r)| r.clone()),
    };

    if let Some(dir) = &opts.out_dir {
        save_checkpoint(dir, &last_good)?;
        write_json(&dir.join("metrics.json"), &report)?;
        if opts.dump_trajectory && failure.is_none() {
            dump_trajectory(&model, &test, dir)?;
        }
    }
    match failure {
        Some((step, reason)) => Err(HarnessError::Numerical { step, reason }),
        None => Ok(report),
    }
}

/// Test-set metrics for the parameters in `checkpoint`.
pub fn evaluate(checkpoint_path: &Path, cfg: &ExperimentConfig) -> Result<MetricsReport, HarnessError> {
    cfg.validate()?;
    let start = Instant::now();
    let text = fs::read_to_string(checkpoint_path).map_err(io_err(checkpoint_path))?;
    let recs = checkpoint::from_json(&text).map_err(|e| HarnessError::Checkpoint(e.to_string()))?;
    let mut model = build_model(cfg)?;
    model.load_records(&recs)?;
    let metrics = evaluate_model(&model, cfg, &test_set(cfg))?;
    Ok(MetricsReport {
        status: Status::Ok,
        task: cfg.task,
        steps_completed: 0,
        losses: Vec::new(),
        nfe_forward: Vec::new(),
        nfe_backward: Vec::new(),
        metrics: Some(metrics),
        num_parameters: model.num_parameters(),
        wall_time_s: start.elapsed().as_secs_f64(),
        model: model.ode().summary_json(),
        config: cfg.clone(),
        error: None,
    })
}
