//! Model families and their quadratic losses.
//!
//! Three homogeneous families share one gradient contract: a scalar
//! two-factor product a*b, a matrix two-factor product U*V, and a deep
//! linear chain W_L * ... * W_1. Every optimizer step works from a single
//! product-space gradient G and the chain-rule layer gradients it induces,
//! so all families funnel through the same layer-stack machinery here.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};

/// Scalar two-factor model: product p = a*b.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScalarState {
    pub a: f64,
    pub b: f64,
}

impl ScalarState {
    pub fn new(a: f64, b: f64) -> Self {
        ScalarState { a, b }
    }

    pub fn product(&self) -> f64 {
        self.a * self.b
    }
}

/// Matrix two-factor model: W = U * V with U (d_out x r), V (r x d_in).
#[derive(Clone, Debug, PartialEq)]
pub struct TwoFactorState {
    u: Matrix,
    v: Matrix,
}

impl TwoFactorState {
    pub fn new(u: Matrix, v: Matrix) -> Result<Self> {
        if u.cols() != v.rows() {
            return Err(Error::Shape {
                context: "TwoFactorState::new",
                detail: format!(
                    "inner ranks disagree: U is {}x{}, V is {}x{}",
                    u.rows(),
                    u.cols(),
                    v.rows(),
                    v.cols()
                ),
            });
        }
        Ok(TwoFactorState { u, v })
    }

    pub fn u(&self) -> &Matrix {
        &self.u
    }

    pub fn v(&self) -> &Matrix {
        &self.v
    }

    pub fn rank(&self) -> usize {
        self.u.cols()
    }

    pub fn product(&self) -> Matrix {
        self.u
            .matmul(&self.v)
            .expect("shapes checked at construction")
    }

    /// Factor gradients induced by a product-space gradient G:
    /// (grad_U, grad_V) = (G Vᵀ, Uᵀ G).
    pub fn factor_grads(&self, g: &Matrix) -> Result<(Matrix, Matrix)> {
        let expect = (self.u.rows(), self.v.cols());
        if g.shape() != expect {
            return Err(Error::Shape {
                context: "TwoFactorState::factor_grads",
                detail: format!(
                    "G is {}x{}, product is {}x{}",
                    g.rows(),
                    g.cols(),
                    expect.0,
                    expect.1
                ),
            });
        }
        let gu = g.matmul(&self.v.transpose())?;
        let gv = self.u.transpose().matmul(g)?;
        Ok((gu, gv))
    }
}

/// Deep linear chain: layers W_1..W_L (L >= 2), W_j of shape d_j x d_{j-1},
/// with end-to-end product F = W_L * ... * W_1.
#[derive(Clone, Debug, PartialEq)]
pub struct DeepLinearState {
    layers: Vec<Matrix>,
}

impl DeepLinearState {
    pub fn new(layers: Vec<Matrix>) -> Result<Self> {
        if layers.len() < 2 {
            return Err(Error::Shape {
                context: "DeepLinearState::new",
                detail: format!("need at least 2 layers, got {}", layers.len()),
            });
        }
        for j in 0..layers.len() - 1 {
            if layers[j + 1].cols() != layers[j].rows() {
                return Err(Error::Shape {
                    context: "DeepLinearState::new",
                    detail: format!(
                        "layer {} output dim {} does not feed layer {} input dim {}",
                        j + 1,
                        layers[j].rows(),
                        j + 2,
                        layers[j + 1].cols()
                    ),
                });
            }
        }
        Ok(DeepLinearState { layers })
    }

    pub fn layers(&self) -> &[Matrix] {
        &self.layers
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn product(&self) -> Matrix {
        fold_product(&self.layers)
    }

    /// Chain-rule layer gradients H_j = A_jᵀ G B_jᵀ with
    /// A_j = W_L...W_{j+1}, B_j = W_{j-1}...W_1 (empty products are
    /// identities). All H_j come from the one G passed in — the shared-G
    /// contract the per-step identities rely on.
    pub fn layer_grads(&self, g: &Matrix) -> Result<Vec<Matrix>> {
        stack_layer_grads(&self.layers, g)
    }
}

fn fold_product(layers: &[Matrix]) -> Matrix {
    let mut p = layers[0].clone();
    for w in &layers[1..] {
        p = w.matmul(&p).expect("shapes checked at construction");
    }
    p
}

/// Layer gradients over a raw chain-ordered stack. Shared by all families.
pub(crate) fn stack_layer_grads(layers: &[Matrix], g: &Matrix) -> Result<Vec<Matrix>> {
    let l = layers.len();
    let (d_out, d_in) = (layers[l - 1].rows(), layers[0].cols());
    if g.shape() != (d_out, d_in) {
        return Err(Error::Shape {
            context: "layer_grads",
            detail: format!(
                "G is {}x{}, end-to-end product is {d_out}x{d_in}",
                g.rows(),
                g.cols()
            ),
        });
    }
    // Prefix products B_j = W_{j-1}...W_1 (None = identity).
    let mut prefixes: Vec<Option<Matrix>> = Vec::with_capacity(l);
    prefixes.push(None);
    for j in 1..l {
        let next = match &prefixes[j - 1] {
            None => layers[j - 1].clone(),
            Some(b) => layers[j - 1].matmul(b)?,
        };
        prefixes.push(Some(next));
    }
    // Suffix products A_j = W_L...W_{j+1} (None = identity).
    let mut suffixes: Vec<Option<Matrix>> = vec![None; l];
    for j in (0..l - 1).rev() {
        suffixes[j] = Some(match &suffixes[j + 1] {
            None => layers[j + 1].clone(),
            Some(a) => a.matmul(&layers[j + 1])?,
        });
    }
    let mut grads = Vec::with_capacity(l);
    for j in 0..l {
        let mut h = match &suffixes[j] {
            None => g.clone(),
            Some(a) => a.transpose().matmul(g)?,
        };
        if let Some(b) = &prefixes[j] {
            h = h.matmul(&b.transpose())?;
        }
        grads.push(h);
    }
    Ok(grads)
}

/// Any of the three model families, as one value for the optimizer and
/// harness layers.
#[derive(Clone, Debug, PartialEq)]
pub enum ModelState {
    Scalar(ScalarState),
    TwoFactor(TwoFactorState),
    Deep(DeepLinearState),
}

impl ModelState {
    /// End-to-end product; the scalar family yields a 1x1 matrix.
    pub fn product_matrix(&self) -> Matrix {
        match self {
            ModelState::Scalar(s) => Matrix::scalar(s.product()),
            ModelState::TwoFactor(s) => s.product(),
            ModelState::Deep(s) => s.product(),
        }
    }

    /// Sum of squared Frobenius norms over all factors.
    pub fn sq_norm(&self) -> f64 {
        match self {
            ModelState::Scalar(s) => s.a * s.a + s.b * s.b,
            ModelState::TwoFactor(s) => {
                let (u, v) = (s.u().frobenius_norm(), s.v().frobenius_norm());
                u * u + v * v
            }
            ModelState::Deep(s) => s
                .layers()
                .iter()
                .map(|w| {
                    let n = w.frobenius_norm();
                    n * n
                })
                .sum(),
        }
    }

    pub fn norm_total(&self) -> f64 {
        self.sq_norm().sqrt()
    }

    pub fn all_finite(&self) -> bool {
        match self {
            ModelState::Scalar(s) => s.a.is_finite() && s.b.is_finite(),
            ModelState::TwoFactor(s) => s.u().all_finite() && s.v().all_finite(),
            ModelState::Deep(s) => s.layers().iter().all(Matrix::all_finite),
        }
    }

    pub fn shape(&self) -> ModelShape {
        match self {
            ModelState::Scalar(_) => ModelShape::Scalar,
            ModelState::TwoFactor(s) => ModelShape::TwoFactor {
                d_out: s.u().rows(),
                r: s.rank(),
                d_in: s.v().cols(),
            },
            ModelState::Deep(s) => {
                let mut dims = vec![s.layers()[0].cols()];
                dims.extend(s.layers().iter().map(Matrix::rows));
                ModelShape::Deep { dims }
            }
        }
    }

    /// Factors in chain order W_1..W_L. The scalar family maps to the 1x1
    /// chain [b], [a] (b is applied first: p = a*b), and the two-factor
    /// family to [V, U].
    pub(crate) fn stack(&self) -> Vec<Matrix> {
        match self {
            ModelState::Scalar(s) => vec![Matrix::scalar(s.b), Matrix::scalar(s.a)],
            ModelState::TwoFactor(s) => vec![s.v().clone(), s.u().clone()],
            ModelState::Deep(s) => s.layers().to_vec(),
        }
    }

    /// Rebuild a state of the same family from an updated chain stack.
    pub(crate) fn with_stack(&self, mut stack: Vec<Matrix>) -> ModelState {
        match self {
            ModelState::Scalar(_) => ModelState::Scalar(ScalarState {
                a: stack[1].get(0, 0),
                b: stack[0].get(0, 0),
            }),
            ModelState::TwoFactor(_) => {
                let u = stack.pop().expect("two-factor stack has two entries");
                let v = stack.pop().expect("two-factor stack has two entries");
                ModelState::TwoFactor(TwoFactorState { u, v })
            }
            ModelState::Deep(_) => ModelState::Deep(DeepLinearState { layers: stack }),
        }
    }

    /// Chain-rule layer gradients in stack order, from one shared G.
    pub(crate) fn stack_grads(&self, g: &Matrix) -> Result<Vec<Matrix>> {
        let stack = self.stack();
        stack_layer_grads(&stack, g)
    }
}

/// How minibatches are drawn from a task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// Every step sees all n samples.
    FullBatch,
    /// Deterministic wrap-around walk through the samples in declared order.
    Cyclic,
    /// Independent uniform draws (with replacement) from a seeded stream.
    SeededUniform { seed: u64 },
}

/// A batch selection: everything, or explicit sample indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Batch {
    Full,
    Indices(Vec<usize>),
}

#[derive(Clone, Debug)]
enum TaskData {
    /// Scalar targets y_i with implicit input x = 1: residual is p - y_i.
    ScalarTargets(Vec<f64>),
    /// Column-sample pairs: X is d_in x n, Y is d_out x n.
    Dense { x: Matrix, y: Matrix },
}

/// Quadratic regression task: loss is the batch mean of squared residual
/// norms, so the gradient scale is independent of batch size and all
/// batch-size effects come from sampling noise alone.
#[derive(Clone, Debug)]
pub struct QuadraticTask {
    data: TaskData,
    batch_size: usize,
    sampling: Sampling,
    cursor: usize,
    rng: Option<Rng>,
}

impl QuadraticTask {
    /// Scalar-target task (implicit x = 1). For the toy landscape these are
    /// streams like {0, 1, 2}.
    pub fn scalar(targets: Vec<f64>, batch_size: usize, sampling: Sampling) -> Result<Self> {
        if targets.is_empty() {
            return Err(Error::InsufficientData {
                detail: "task needs at least one target".to_string(),
            });
        }
        Self::build(TaskData::ScalarTargets(targets), batch_size, sampling)
    }

    /// Full-batch scalar task.
    pub fn scalar_full(targets: Vec<f64>) -> Result<Self> {
        let n = targets.len();
        Self::scalar(targets, n, Sampling::FullBatch)
    }

    /// Dense task over column samples.
    pub fn dense(x: Matrix, y: Matrix, batch_size: usize, sampling: Sampling) -> Result<Self> {
        if x.cols() != y.cols() {
            return Err(Error::Shape {
                context: "QuadraticTask::dense",
                detail: format!("X has {} samples but Y has {}", x.cols(), y.cols()),
            });
        }
        Self::build(TaskData::Dense { x, y }, batch_size, sampling)
    }

    /// Full-batch dense task.
    pub fn dense_full(x: Matrix, y: Matrix) -> Result<Self> {
        let n = x.cols();
        Self::dense(x, y, n, Sampling::FullBatch)
    }

    fn build(data: TaskData, batch_size: usize, sampling: Sampling) -> Result<Self> {
        let n = match &data {
            TaskData::ScalarTargets(t) => t.len(),
            TaskData::Dense { x, .. } => x.cols(),
        };
        if batch_size == 0 || batch_size > n {
            return Err(Error::InvalidParameter {
                name: "batch_size",
                detail: format!("must satisfy 1 <= b <= {n}, got {batch_size}"),
            });
        }
        let rng = match &sampling {
            Sampling::SeededUniform { seed } => Some(Rng::new(*seed)),
            _ => None,
        };
        Ok(QuadraticTask {
            data,
            batch_size,
            sampling,
            cursor: 0,
            rng,
        })
    }

    pub fn n(&self) -> usize {
        match &self.data {
            TaskData::ScalarTargets(t) => t.len(),
            TaskData::Dense { x, .. } => x.cols(),
        }
    }

    pub fn batch_size(&self) -> usize {
        match self.sampling {
            Sampling::FullBatch => self.n(),
            _ => self.batch_size,
        }
    }

    pub fn sampling(&self) -> &Sampling {
        &self.sampling
    }

    /// Draw the next batch. Cyclic sampling advances a wrap-around cursor;
    /// seeded-uniform sampling consumes the task-owned stream. Restart with
    /// [`QuadraticTask::reset`].
    pub fn next_batch(&mut self) -> Batch {
        match self.sampling {
            Sampling::FullBatch => Batch::Full,
            Sampling::Cyclic => {
                let n = self.n();
                let idx: Vec<usize> = (0..self.batch_size)
                    .map(|i| (self.cursor + i) % n)
                    .collect();
                self.cursor = (self.cursor + self.batch_size) % n;
                Batch::Indices(idx)
            }
            Sampling::SeededUniform { .. } => {
                let n = self.n();
                let rng = self.rng.as_mut().expect("seeded sampler owns an rng");
                Batch::Indices((0..self.batch_size).map(|_| rng.index(n)).collect())
            }
        }
    }

    /// Rewind the sampler to its initial state (cursor and stream).
    pub fn reset(&mut self) {
        self.cursor = 0;
        if let Sampling::SeededUniform { seed } = self.sampling {
            self.rng = Some(Rng::new(seed));
        }
    }

    /// Check that a model's product shape can consume this task.
    pub fn check_model(&self, state: &ModelState) -> Result<()> {
        let p = state.product_matrix();
        match &self.data {
            TaskData::ScalarTargets(_) => {
                if p.shape() != (1, 1) {
                    return Err(Error::Shape {
                        context: "QuadraticTask::check_model",
                        detail: format!(
                            "scalar-target task needs a 1x1 product, model gives {}x{}",
                            p.rows(),
                            p.cols()
                        ),
                    });
                }
            }
            TaskData::Dense { x, y } => {
                if p.cols() != x.rows() || p.rows() != y.rows() {
                    return Err(Error::Shape {
                        context: "QuadraticTask::check_model",
                        detail: format!(
                            "model product is {}x{}, task wants {}x{}",
                            p.rows(),
                            p.cols(),
                            y.rows(),
                            x.rows()
                        ),
                    });
                }
            }
        }
        Ok(())
    }

    fn resolve_indices(&self, batch: &Batch) -> Result<Vec<usize>> {
        let n = self.n();
        match batch {
            Batch::Full => Ok((0..n).collect()),
            Batch::Indices(idx) => {
                if idx.is_empty() {
                    return Err(Error::EmptyBatch);
                }
                for &i in idx {
                    if i >= n {
                        return Err(Error::BatchIndex { index: i, n });
                    }
                }
                Ok(idx.clone())
            }
        }
    }
}

/// Batch loss and the gradient of that loss with respect to the end-to-end
/// product. Loss is the mean over batch samples of the squared residual
/// norm; G = (2/|B|) (P X_B - Y_B) X_Bᵀ, and in the scalar family
/// g = (2/|B|) Σ (p - y_i), so the full-batch single-target case reduces to
/// g = 2(p - y).
pub fn loss_and_product_grad(
    state: &ModelState,
    task: &QuadraticTask,
    batch: &Batch,
) -> Result<(f64, Matrix)> {
    task.check_model(state)?;
    let idx = task.resolve_indices(batch)?;
    let b = idx.len() as f64;
    match &task.data {
        TaskData::ScalarTargets(targets) => {
            let p = state.product_matrix().get(0, 0);
            let mut loss = 0.0;
            let mut grad = 0.0;
            for &i in &idx {
                let r = p - targets[i];
                loss += r * r;
                grad += r;
            }
            Ok((loss / b, Matrix::scalar(2.0 * grad / b)))
        }
        TaskData::Dense { x, y } => {
            let xb = x.select_columns(&idx)?;
            let yb = y.select_columns(&idx)?;
            let p = state.product_matrix();
            let resid = p.matmul(&xb)?.sub(&yb);
            let fro = resid.frobenius_norm();
            let loss = fro * fro / b;
            let g = resid.matmul(&xb.transpose())?.scale(2.0 / b);
            Ok((loss, g))
        }
    }
}

/// Initialization scheme.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// Entries ~ Normal(0, sigma_w^2 / fan_in), fan_in = input dim of the
    /// layer; sigma_w = 1 is the baseline scale.
    FanInNormal,
    /// Literal entries, in declaration order (a, b / U then V / W_1..W_L),
    /// row-major within each factor. sigma_w does not rescale these.
    Explicit { values: Vec<f64> },
}

/// Seeded initialization recipe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitSpec {
    pub sigma_w: f64,
    pub seed: u64,
    pub scheme: InitScheme,
}

impl InitSpec {
    pub fn fan_in(sigma_w: f64, seed: u64) -> Self {
        InitSpec {
            sigma_w,
            seed,
            scheme: InitScheme::FanInNormal,
        }
    }

    pub fn explicit(values: Vec<f64>) -> Self {
        InitSpec {
            sigma_w: 1.0,
            seed: 0,
            scheme: InitScheme::Explicit { values },
        }
    }
}

/// Family plus dimensions, enough to build a state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelShape {
    Scalar,
    TwoFactor {
        d_out: usize,
        r: usize,
        d_in: usize,
    },
    /// dims = [d_0, d_1, ..., d_L]; layer W_j is d_j x d_{j-1}.
    Deep {
        dims: Vec<usize>,
    },
}

impl ModelShape {
    /// Factor shapes in declaration order.
    fn factor_shapes(&self) -> Result<Vec<(usize, usize)>> {
        match self {
            ModelShape::Scalar => Ok(vec![(1, 1), (1, 1)]),
            ModelShape::TwoFactor { d_out, r, d_in } => {
                if *d_out == 0 || *r == 0 || *d_in == 0 {
                    return Err(Error::Shape {
                        context: "ModelShape",
                        detail: format!("two-factor dims must be positive: {d_out}x{r}x{d_in}"),
                    });
                }
                Ok(vec![(*d_out, *r), (*r, *d_in)])
            }
            ModelShape::Deep { dims } => {
                if dims.len() < 3 {
                    return Err(Error::Shape {
                        context: "ModelShape",
                        detail: format!(
                            "deep chain needs at least 2 layers (3 dims), got {:?}",
                            dims
                        ),
                    });
                }
                if dims.contains(&0) {
                    return Err(Error::Shape {
                        context: "ModelShape",
                        detail: format!("deep dims must be positive: {dims:?}"),
                    });
                }
                Ok((0..dims.len() - 1)
                    .map(|j| (dims[j + 1], dims[j]))
                    .collect())
            }
        }
    }
}

/// Build a model state from an init spec. Deterministic in (seed, sigma_w,
/// shape): factors are filled in declaration order, row-major, from a single
/// seeded stream.
pub fn init_state(spec: &InitSpec, shape: &ModelShape) -> Result<ModelState> {
    if !spec.sigma_w.is_finite() || spec.sigma_w <= 0.0 {
        return Err(Error::InvalidParameter {
            name: "sigma_w",
            detail: format!("must be a positive finite real, got {}", spec.sigma_w),
        });
    }
    let shapes = shape.factor_shapes()?;
    let factors: Vec<Matrix> = match &spec.scheme {
        InitScheme::FanInNormal => {
            let mut rng = Rng::new(spec.seed);
            shapes
                .iter()
                .map(|&(rows, cols)| {
                    let scale = spec.sigma_w / (cols as f64).sqrt();
                    Matrix::from_fn(rows, cols, |_, _| rng.gaussian() * scale)
                })
                .collect()
        }
        InitScheme::Explicit { values } => {
            let total: usize = shapes.iter().map(|&(r, c)| r * c).sum();
            if values.len() != total {
                return Err(Error::InvalidParameter {
                    name: "values",
                    detail: format!(
                        "explicit init needs {total} entries for this shape, got {}",
                        values.len()
                    ),
                });
            }
            let mut it = values.iter().copied();
            shapes
                .iter()
                .map(|&(rows, cols)| {
                    Matrix::from_fn(rows, cols, |_, _| it.next().expect("length checked"))
                })
                .collect()
        }
    };
    assemble(shape, factors)
}

fn assemble(shape: &ModelShape, mut factors: Vec<Matrix>) -> Result<ModelState> {
    match shape {
        ModelShape::Scalar => Ok(ModelState::Scalar(ScalarState {
            a: factors[0].get(0, 0),
            b: factors[1].get(0, 0),
        })),
        ModelShape::TwoFactor { .. } => {
            let v = factors.pop().expect("two factors");
            let u = factors.pop().expect("two factors");
            Ok(ModelState::TwoFactor(TwoFactorState::new(u, v)?))
        }
        ModelShape::Deep { .. } => Ok(ModelState::Deep(DeepLinearState::new(factors)?)),
    }
}
