//! Projected gradient descent over `St(s_1, N) x ... x St(s_n, N)` and the
//! head parameters.
//!
//! Each outer iteration takes one step of size `alpha` for every hidden
//! feature block (followed by projection onto its Stiefel manifold) and for
//! the LSSVM head. `alpha` is chosen by backtracking from `alpha0`, halving
//! until the projected trial point satisfies the Armijo condition
//!
//! ```text
//! J(trial) <= J(current) - c * ( sum_j <G_j, H_j - H_j(alpha)> + alpha |g_head|^2 )
//! ```
//!
//! The bracket is non-negative for any projected step and equals
//! `alpha |g|^2` when no projection happens, so accepted steps never
//! increase the objective. MLP head parameters are excluded from the line
//! search and take one Adam step per outer iteration.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::mlp::{Mlp, DEFAULT_HIDDEN};
use crate::model::{eval_objective, eval_with_gradients, HeadGradient, ObjectiveBreakdown};
use crate::stiefel::{project_stiefel, random_stiefel, tangent_project};
use crate::{
    DrkmError, DrkmState, Gradients, Head, HeadKind, HeadLssvm, HeadMlp, Level, LevelConfig, Problem,
    Real, Result, Targets,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSearchConfig<T> {
    pub alpha0: T,
    pub shrink: T,
    pub c: T,
    pub max_halvings: usize,
}

impl<T: Real> Default for LineSearchConfig<T> {
    fn default() -> Self {
        LineSearchConfig {
            alpha0: T::one(),
            shrink: T::lit(0.5),
            c: T::lit(1e-4),
            max_halvings: 30,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
}

impl<T: Real> Default for AdamConfig<T> {
    fn default() -> Self {
        AdamConfig {
            lr: T::lit(1e-3),
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// Standard-normal initialization (projected), trained end to end.
    Random,
    /// Levels trained on the unsupervised terms only, then frozen while the
    /// head is fitted.
    Dkpca,
    /// Unsupervised pretraining followed by training on the full objective.
    DkpcaFinetune,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig<T> {
    pub max_iter: usize,
    pub lambda: T,
    /// Head regularization constant.
    pub eta: T,
    pub init: InitScheme,
    pub seed: u64,
    pub line_search: LineSearchConfig<T>,
    pub grad_tol: T,
    pub adam: AdamConfig<T>,
    pub mlp_hidden: usize,
    /// Iteration budget of the unsupervised pretraining phase.
    pub pretrain_max_iter: usize,
    pub feasibility_tol: T,
}

impl<T: Real> Default for TrainConfig<T> {
    fn default() -> Self {
        TrainConfig {
            max_iter: 100,
            lambda: T::lit(0.5),
            eta: T::one(),
            init: InitScheme::Random,
            seed: 0,
            line_search: LineSearchConfig::default(),
            grad_tol: T::lit(1e-6),
            adam: AdamConfig::default(),
            mlp_hidden: DEFAULT_HIDDEN,
            pretrain_max_iter: 500,
            feasibility_tol: T::feasibility_tol(),
        }
    }
}

impl<T: Real> TrainConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let ls = &self.line_search;
        let checks = [
            (self.lambda > T::zero(), "head.lambda must be positive"),
            (self.eta > T::zero(), "head.eta must be positive"),
            (ls.alpha0 > T::zero(), "train.line_search.alpha0 must be positive"),
            (ls.shrink > T::zero() && ls.shrink < T::one(), "train.line_search.shrink must be in (0, 1)"),
            (ls.c > T::zero() && ls.c < T::one(), "train.line_search.c must be in (0, 1)"),
            (self.grad_tol >= T::zero(), "train.grad_tol must be non-negative"),
            (self.adam.lr > T::zero(), "train.adam.lr must be positive"),
            (self.adam.beta1 >= T::zero() && self.adam.beta1 < T::one(), "train.adam.beta1 must be in [0, 1)"),
            (self.adam.beta2 >= T::zero() && self.adam.beta2 < T::one(), "train.adam.beta2 must be in [0, 1)"),
            (self.adam.eps > T::zero(), "train.adam.eps must be positive"),
            (self.mlp_hidden > 0, "train.mlp_hidden must be positive"),
            (self.feasibility_tol > T::zero(), "train.feasibility_tol must be positive"),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(DrkmError::Config(msg.into()));
            }
        }
        Ok(())
    }
}

/// Which terms are optimized and which blocks move.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Unsupervised terms only; hidden features move, the head does not.
    Unsupervised,
    /// Full objective; every block moves.
    Full,
    /// Full objective with hidden features frozen.
    HeadOnly,
}

impl Phase {
    fn moves_hidden(self) -> bool {
        !matches!(self, Phase::HeadOnly)
    }

    fn moves_head(self) -> bool {
        !matches!(self, Phase::Unsupervised)
    }

    pub fn value<T: Real>(self, obj: &ObjectiveBreakdown<T>) -> T {
        match self {
            Phase::Unsupervised => obj.unsupervised(),
            _ => obj.total,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxIter,
    GradTol,
    /// No step size passed the sufficient-decrease test.
    Stall,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainTrace<T> {
    pub phase: Phase,
    /// Objective before the first iteration and after each one.
    pub objective: Vec<T>,
    /// Objective right after the line-search move, before any Adam step.
    pub objective_after_pgd: Vec<T>,
    /// Accepted step size (zero when the line search was skipped).
    pub step: Vec<T>,
    /// `max_j ||H_j^T H_j - I||_F` after each iteration.
    pub feasibility: Vec<T>,
    /// Norm of the Riemannian gradient of the moving blocks, before the step.
    pub grad_norm: Vec<T>,
    pub stop: StopReason,
    pub rank_deficient_projections: usize,
    /// Unsupervised pretraining run, for the dkpca schemes.
    pub pretrain: Option<Box<TrainTrace<T>>>,
}

impl<T: Real> TrainTrace<T> {
    fn new(phase: Phase) -> Self {
        TrainTrace {
            phase,
            objective: Vec::new(),
            objective_after_pgd: Vec::new(),
            step: Vec::new(),
            feasibility: Vec::new(),
            grad_norm: Vec::new(),
            stop: StopReason::MaxIter,
            rank_deficient_projections: 0,
            pretrain: None,
        }
    }

    pub fn iterations(&self) -> usize {
        self.step.len()
    }

    pub fn final_objective(&self) -> T {
        *self.objective.last().expect("trace has an initial objective")
    }

    /// True when no line-search move ever increased the objective.
    pub fn pgd_monotone(&self) -> bool {
        self.objective_after_pgd
            .iter()
            .zip(&self.objective)
            .all(|(after, before)| after <= before)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Serialize + DeserializeOwned")]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub t: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            t: 0,
        }
    }
}

/// One bias-corrected Adam step.
pub fn adam_update<T: Real>(
    theta: &[T],
    grad: &[T],
    state: &AdamState<T>,
    cfg: &AdamConfig<T>,
) -> Result<(Vec<T>, AdamState<T>)> {
    if theta.len() != grad.len() || theta.len() != state.m.len() || theta.len() != state.v.len() {
        return Err(DrkmError::DimensionMismatch {
            expected: theta.len(),
            got: grad.len(),
            context: "Adam parameter/gradient/moment lengths",
        });
    }
    let t = state.t + 1;
    let one = T::one();
    let bc1 = one - cfg.beta1.powi(t.min(i32::MAX as u64) as i32);
    let bc2 = one - cfg.beta2.powi(t.min(i32::MAX as u64) as i32);
    let mut m = Vec::with_capacity(theta.len());
    let mut v = Vec::with_capacity(theta.len());
    let mut out = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        let g = grad[i];
        let mi = cfg.beta1 * state.m[i] + (one - cfg.beta1) * g;
        let vi = cfg.beta2 * state.v[i] + (one - cfg.beta2) * g * g;
        let m_hat = mi / bc1;
        let v_hat = vi / bc2;
        out.push(theta[i] - cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps));
        m.push(mi);
        v.push(vi);
    }
    Ok((out, AdamState { m, v, t }))
}

/// Generic backtracking loop. `trial(alpha)` returns the candidate, its
/// objective and the decrease measure the Armijo test compares against;
/// `None` means the candidate could not be evaluated and is rejected.
pub(crate) fn armijo_backtrack<T: Real, C>(
    current: T,
    cfg: &LineSearchConfig<T>,
    mut trial: impl FnMut(T) -> Result<Option<(C, T, T)>>,
) -> Result<Option<(T, C, T)>> {
    let mut alpha = cfg.alpha0;
    for _ in 0..=cfg.max_halvings {
        if let Some((cand, value, decrease)) = trial(alpha)? {
            if value <= current - cfg.c * decrease {
                return Ok(Some((alpha, cand, value)));
            }
        }
        alpha *= cfg.shrink;
    }
    Ok(None)
}

#[derive(Debug, Clone)]
pub enum LineSearchOutcome<T: Real> {
    /// Gradient norm below tolerance: nothing moved, step zero.
    Stationary,
    Accepted {
        alpha: T,
        state: DrkmState<T>,
        objective: ObjectiveBreakdown<T>,
        rank_deficient: usize,
    },
    Stall,
}

fn head_grad_norm_sq<T: Real>(g: &HeadGradient<T>) -> T {
    match g {
        HeadGradient::Lssvm { w, b } => w.norm_squared() + *b * *b,
        HeadGradient::Mlp(m) => m.norm_squared(),
    }
}

/// Norm of the direction the line search acts on: tangent-projected
/// gradients of the hidden blocks plus the LSSVM head gradient.
pub fn stationarity_norm<T: Real>(state: &DrkmState<T>, grads: &Gradients<T>, phase: Phase) -> T {
    let mut acc = T::zero();
    if phase.moves_hidden() {
        for (level, g) in state.levels.iter().zip(&grads.h) {
            acc += tangent_project(&level.h, g).norm_squared();
        }
    }
    if phase.moves_head() {
        if let (Head::Lssvm(_), g) = (&state.head, &grads.head) {
            acc += head_grad_norm_sq(g);
        }
    }
    acc.sqrt()
}

/// Shared-step backtracking on the projected trial point.
pub fn backtracking_search<T: Real>(
    state: &DrkmState<T>,
    grads: &Gradients<T>,
    problem: &Problem<T>,
    phase: Phase,
    current: T,
    config: &TrainConfig<T>,
) -> Result<LineSearchOutcome<T>> {
    if stationarity_norm(state, grads, phase) < config.grad_tol {
        return Ok(LineSearchOutcome::Stationary);
    }
    let move_head = phase.moves_head() && matches!(state.head, Head::Lssvm(_));
    let head_sq = if move_head { head_grad_norm_sq(&grads.head) } else { T::zero() };

    let result = armijo_backtrack(current, &config.line_search, |alpha| {
        let mut trial = state.clone();
        let mut decrease = T::zero();
        let mut deficient = 0;
        if phase.moves_hidden() {
            for (level, g) in trial.levels.iter_mut().zip(&grads.h) {
                let stepped = &*level.h - g * alpha;
                let proj = project_stiefel(&stepped)?;
                if proj.rank_deficient {
                    deficient += 1;
                }
                decrease += g.dot(&(&*level.h - &*proj.point));
                level.h = proj.point;
            }
        }
        if move_head {
            if let (Head::Lssvm(head), HeadGradient::Lssvm { w, b }) = (&mut trial.head, &grads.head) {
                head.w -= w * alpha;
                head.b -= *b * alpha;
            }
            decrease += alpha * head_sq;
        }
        match eval_objective(&trial, problem) {
            Ok(obj) => {
                let value = phase.value(&obj);
                Ok(Some(((trial, obj, deficient), value, decrease)))
            }
            Err(DrkmError::Numerical { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    })?;
    Ok(match result {
        Some((alpha, (state, objective, rank_deficient), _)) => LineSearchOutcome::Accepted {
            alpha,
            state,
            objective,
            rank_deficient,
        },
        None => LineSearchOutcome::Stall,
    })
}

/// SplitMix64 step, used to derive independent seeds from one config seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(stream.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Random starting point: projected standard-normal hidden features,
/// `0.01 * N(0, 1)` LSSVM weights with zero bias, or an `N(0, 1/fan_in)` MLP.
pub fn initial_state<T: Real>(
    n: usize,
    levels: &[LevelConfig<T>],
    head_kind: HeadKind,
    classes: usize,
    config: &TrainConfig<T>,
) -> Result<DrkmState<T>> {
    if levels.is_empty() {
        return Err(DrkmError::Config("a DRKM needs at least one level".into()));
    }
    let mut out = Vec::with_capacity(levels.len());
    for (j, cfg) in levels.iter().enumerate() {
        if cfg.components == 0 || cfg.components > n {
            return Err(DrkmError::Config(format!(
                "levels[{j}].s = {} must be in 1..={n}",
                cfg.components
            )));
        }
        let h = random_stiefel(n, cfg.components, derive_seed(config.seed, j as u64))?;
        out.push(Level { config: cfg.clone(), h });
    }
    let s_last = levels.last().expect("non-empty").components;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 1 << 32));
    let head = match head_kind {
        HeadKind::Lssvm => Head::Lssvm(HeadLssvm {
            w: DVector::from_iterator(
                s_last,
                (0..s_last).map(|_| T::lit(0.01 * rng.sample::<f64, _>(StandardNormal))),
            ),
            b: T::zero(),
            lambda: config.lambda,
            eta: config.eta,
        }),
        HeadKind::Mlp => Head::Mlp(HeadMlp {
            mlp: Mlp::random(s_last, config.mlp_hidden, classes, &mut rng),
            lambda: config.lambda,
            eta: config.eta,
        }),
    };
    let state = DrkmState { levels: out, head };
    state.validate(n)?;
    Ok(state)
}

/// Runs one optimization phase from `state` for at most `max_iter` outer
/// iterations.
pub fn run_phase<T: Real>(
    mut state: DrkmState<T>,
    problem: &Problem<T>,
    phase: Phase,
    max_iter: usize,
    config: &TrainConfig<T>,
) -> Result<(DrkmState<T>, TrainTrace<T>)> {
    let mut trace = TrainTrace::new(phase);
    let mut adam = match &state.head {
        Head::Mlp(h) => Some(AdamState::new(h.mlp.num_params())),
        Head::Lssvm(_) => None,
    };
    let train_theta = phase.moves_head() && adam.is_some();

    let (mut obj, mut grads) = eval_with_gradients(&state, problem, phase.moves_head())?;
    trace.objective.push(phase.value(&obj));
    // A phase with nothing to line-search (MLP head, frozen features) only
    // takes Adam steps.
    let line_search = phase.moves_hidden() || matches!(state.head, Head::Lssvm(_));

    for _ in 0..max_iter {
        let current = phase.value(&obj);
        let pgd_norm = stationarity_norm(&state, &grads, phase);
        let theta_norm = if train_theta {
            head_grad_norm_sq(&grads.head).sqrt()
        } else {
            T::zero()
        };
        trace.grad_norm.push((pgd_norm * pgd_norm + theta_norm * theta_norm).sqrt());

        let mut alpha = T::zero();
        let mut pgd_stationary = !line_search;
        if line_search {
            match backtracking_search(&state, &grads, problem, phase, current, config)? {
                LineSearchOutcome::Stationary => pgd_stationary = true,
                LineSearchOutcome::Stall => {
                    trace.grad_norm.pop();
                    trace.stop = StopReason::Stall;
                    return Ok((state, trace));
                }
                LineSearchOutcome::Accepted {
                    alpha: a,
                    state: next,
                    objective,
                    rank_deficient,
                } => {
                    alpha = a;
                    state = next;
                    obj = objective;
                    trace.rank_deficient_projections += rank_deficient;
                }
            }
        }
        if pgd_stationary && (!train_theta || theta_norm < config.grad_tol) {
            trace.grad_norm.pop();
            trace.stop = StopReason::GradTol;
            return Ok((state, trace));
        }
        trace.objective_after_pgd.push(phase.value(&obj));
        trace.step.push(alpha);

        if train_theta {
            if let (Head::Mlp(head), HeadGradient::Mlp(g), Some(st)) = (&mut state.head, &grads.head, adam.as_mut()) {
                let (theta, next) = adam_update(&head.mlp.to_flat(), &g.to_flat(), st, &config.adam)?;
                head.mlp.set_flat(&theta)?;
                *st = next;
            }
        }

        let residual = state.feasibility_residual();
        if !(residual <= config.feasibility_tol) {
            return Err(DrkmError::numerical(
                "stiefel feasibility",
                format!("residual {residual:e} exceeds {:e} after projection", config.feasibility_tol),
            ));
        }
        trace.feasibility.push(residual);

        let (o, g) = eval_with_gradients(&state, problem, phase.moves_head())?;
        obj = o;
        grads = g;
        trace.objective.push(phase.value(&obj));
    }
    trace.stop = StopReason::MaxIter;
    Ok((state, trace))
}

fn classes_of<T: Real>(targets: &Targets<T>) -> usize {
    match targets {
        Targets::Binary(_) => 2,
        Targets::Classes { classes, .. } => *classes,
    }
}

/// Full training run: initialization according to `config.init`, then
/// `max_iter` iterations on the objective (full, or head-only after
/// unsupervised pretraining without fine-tuning).
pub fn pgd_train<T: Real>(
    problem: &Problem<T>,
    levels: &[LevelConfig<T>],
    head_kind: HeadKind,
    config: &TrainConfig<T>,
) -> Result<(DrkmState<T>, TrainTrace<T>)> {
    config.validate()?;
    match (head_kind, problem.targets()) {
        (HeadKind::Lssvm, Targets::Binary(_)) | (HeadKind::Mlp, Targets::Classes { .. }) => {}
        (HeadKind::Lssvm, _) => {
            return Err(DrkmError::InvalidInput("LSSVM head needs +1/-1 targets".into()))
        }
        (HeadKind::Mlp, _) => {
            return Err(DrkmError::InvalidInput("MLP head needs class-index targets".into()))
        }
    }
    let state = initial_state(problem.n(), levels, head_kind, classes_of(problem.targets()), config)?;
    match config.init {
        InitScheme::Random => run_phase(state, problem, Phase::Full, config.max_iter, config),
        InitScheme::Dkpca | InitScheme::DkpcaFinetune => {
            let (state, pre) = run_phase(state, problem, Phase::Unsupervised, config.pretrain_max_iter, config)?;
            let phase = if config.init == InitScheme::Dkpca {
                Phase::HeadOnly
            } else {
                Phase::Full
            };
            let (state, mut trace) = run_phase(state, problem, phase, config.max_iter, config)?;
            trace.pretrain = Some(Box::new(pre));
            Ok((state, trace))
        }
    }
}
