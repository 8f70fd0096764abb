//! Descent loops: the fixed-metric standard algorithm and the variable-metric
//! algorithm that shrinks the kernel smoothing parameter whenever the
//! sufficient-decrease test fails.

use alloc::vec::Vec;

use crate::error::Error;
use crate::fem::{ProblemData, ProblemSpec, TransmissionSolver};
use crate::field::{ScalarFieldP1, VectorFieldP1};
use crate::gradients::{gradient_field, rkhs_gradient_field, GradientMethod};
use crate::kernels::RadialKernel;
use crate::mesh::{self, generate_mesh, QualityFloors, ShapeSpec, TriMesh};
use crate::tensors::{assemble_tensors, ShapeTensors};

/// Wall-clock source injected by the driver; the core has no clock of its
/// own.
pub trait Clock {
    fn seconds(&self) -> f64;
}

/// Clock that always reads zero.
pub struct NullClock;

impl Clock for NullClock {
    fn seconds(&self) -> f64 {
        0.0
    }
}

/// Full configuration of an optimisation run.
#[derive(Clone, Debug)]
pub struct OptConfig {
    pub method: GradientMethod,
    /// Initial smoothing parameter of the variable-metric run.
    pub sigma0: f64,
    /// Sufficient-decrease fraction gamma.
    pub gamma: f64,
    /// Sigma reduction factor in (0,1).
    pub q: f64,
    pub max_iter: usize,
    /// Initial trial step; rescaled per iteration by the gradient sup-norm.
    pub t0: f64,
    pub max_halvings: u32,
    pub sigma_min: f64,
    pub problem: ProblemSpec,
    pub initial_shape: ShapeSpec,
    pub grid_res: usize,
    pub n_interface: usize,
    pub quality: QualityFloors,
}

impl OptConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if !(self.q > 0.0 && self.q < 1.0) {
            return Err(Error::Config(alloc::format!(
                "q must be in (0,1), got {}",
                self.q
            )));
        }
        if !(self.gamma > 0.0) {
            return Err(Error::Config(alloc::format!(
                "gamma must be positive, got {}",
                self.gamma
            )));
        }
        if !(self.sigma0 >= self.sigma_min && self.sigma_min > 0.0) {
            return Err(Error::Config(alloc::format!(
                "need sigma0 >= sigma_min > 0, got sigma0 = {}, sigma_min = {}",
                self.sigma0,
                self.sigma_min
            )));
        }
        self.initial_shape.validate()?;
        self.problem.target.validate()?;
        Ok(())
    }
}

/// What happened in one loop iteration.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepEvent {
    Initial,
    Accepted,
    SufficientDecreaseFailed,
    LineSearchFailed,
}

#[derive(Clone, Copy, Debug)]
pub struct IterationRecord {
    pub iteration: usize,
    pub cost: f64,
    /// Accepted step length; zero for rejected or initial rows.
    pub step: f64,
    /// Smoothing parameter in force while the gradient was computed; zero
    /// for non-RKHS metrics.
    pub sigma: f64,
    /// Sup norm of the gradient field.
    pub grad_norm: f64,
    pub accepted: bool,
    /// Whether the negative gradient was a descent direction for the volume
    /// expression (`dJ_vol(-g) < 0`). Guaranteed for the H1 and Euclidean
    /// metrics; for RKHS metrics the boundary projection can break it, so it
    /// is measured and reported.
    pub descent: bool,
    /// Seconds since the start of the run, as read from the injected clock.
    pub wall_time: f64,
    pub event: StepEvent,
}

/// Why the loop stopped.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    MaxIterReached,
    InsufficientDecrease,
    LineSearchFailed,
    SigmaFloor,
}

/// Per-iteration records plus the final iterate.
pub struct OptHistory {
    pub records: Vec<IterationRecord>,
    pub termination: Termination,
    pub accepted_steps: usize,
    pub final_mesh: TriMesh,
    pub final_cost: f64,
    pub final_sigma: f64,
}

impl OptHistory {
    /// True when the run ended without a single accepted step.
    pub fn stopped_at_start(&self) -> bool {
        self.accepted_steps == 0
    }
}

/// Callback fired after every recorded iteration with the current mesh.
pub trait OptObserver {
    fn on_record(&mut self, _record: &IterationRecord, _mesh: &TriMesh) {}
}

pub struct NoopObserver;

impl OptObserver for NoopObserver {}

/// Mutually consistent snapshot of the optimisation state; rebuilt after
/// every accepted step.
pub struct OptState {
    pub mesh: TriMesh,
    pub data: ProblemData,
    pub u_h: ScalarFieldP1,
    pub p_h: ScalarFieldP1,
    pub tensors: ShapeTensors,
    pub cost: f64,
    pub iteration: usize,
    pub sigma: f64,
}

impl OptState {
    /// Solves the full pipeline (target, state, adjoint, tensors) on `mesh`.
    pub fn build(spec: &ProblemSpec, mesh: TriMesh, iteration: usize, sigma: f64) -> Result<Self, Error> {
        let data = spec.data_on(&mesh)?;
        let solver = TransmissionSolver::new(&mesh, &data, spec.cg_tol)?;
        let u_h = solver.solve_state(&mesh, &data)?;
        let p_h = solver.solve_adjoint(&mesh, &data, &u_h)?;
        let tensors = assemble_tensors(&mesh, &u_h, &p_h, &data)?;
        let cost = crate::fem::cost(&mesh, &u_h, &data.u_d);
        Ok(OptState {
            mesh,
            data,
            u_h,
            p_h,
            tensors,
            cost,
            iteration,
            sigma,
        })
    }
}

/// Successful line-search outcome.
pub struct LineSearchHit {
    pub t: f64,
    pub mesh: TriMesh,
    pub cost: f64,
}

/// Backtracking over t0, t0/2, ... (at most `max_halvings + 1` trials, after
/// rescaling t0 by the gradient sup-norm). A trial is admissible when the
/// deformed mesh passes validation and the re-solved state gives a cost
/// strictly below `reference_cost`. The deformation applied is
/// `id - t * gradient`.
///
/// Trial costs hold the iterate's target field fixed in space (see
/// [`ProblemSpec::trial_cost`]); this keeps the trial landscape consistent
/// with the volume expression that produced the descent direction.
pub fn line_search(
    spec: &ProblemSpec,
    mesh: &TriMesh,
    u_d: &crate::field::ScalarFieldP1,
    reference_cost: f64,
    gradient: &VectorFieldP1,
    t0: f64,
    max_halvings: u32,
    floors: &QualityFloors,
) -> Result<Option<LineSearchHit>, Error> {
    let mut t = t0 / gradient.max_abs().max(1e-12);
    for _ in 0..=max_halvings {
        let moved = mesh::deform(mesh, gradient, -t)?;
        if mesh::validate(&moved, floors).valid {
            let cost = spec.trial_cost(mesh, u_d, &moved)?;
            if cost < reference_cost {
                return Ok(Some(LineSearchHit {
                    t,
                    mesh: moved,
                    cost,
                }));
            }
        }
        t *= 0.5;
    }
    Ok(None)
}

fn initial_record(cost: f64, sigma: f64) -> IterationRecord {
    IterationRecord {
        iteration: 0,
        cost,
        step: 0.0,
        sigma,
        grad_norm: 0.0,
        accepted: true,
        descent: true,
        wall_time: 0.0,
        event: StepEvent::Initial,
    }
}

/// Standard fixed-metric descent. The reference decrease is fixed by the
/// first accepted step; any later step that fails the sufficient-decrease
/// test `J(n) - J(n+1) >= gamma (J(0) - J(1))` ends the run.
pub fn run_standard(
    config: &OptConfig,
    clock: &dyn Clock,
    observer: &mut dyn OptObserver,
) -> Result<OptHistory, Error> {
    config.validate()?;
    let t_start = clock.seconds();
    let sigma_label = config.method.sigma().unwrap_or(0.0);
    let mesh = generate_mesh(&config.initial_shape, config.n_interface, config.grid_res)?;
    let mut state = OptState::build(&config.problem, mesh, 0, sigma_label)?;

    let mut records = Vec::new();
    let rec0 = initial_record(state.cost, sigma_label);
    observer.on_record(&rec0, &state.mesh);
    records.push(rec0);

    let mut delta0: Option<f64> = None;
    let mut accepted_steps = 0usize;
    let mut termination = Termination::MaxIterReached;
    // Recorded cost chain: strictly decreasing over accepted steps. The
    // target refresh after each accepted step may move the re-measured cost
    // slightly; acceptance is judged against the stricter of the two.
    let mut recorded_cost = state.cost;

    for n in 0..config.max_iter {
        let gradient = gradient_field(&config.method, &state.mesh, &state.tensors, config.problem.cg_tol)?;
        let grad_norm = gradient.max_abs();
        let descent = crate::tensors::dj_vol(&state.tensors, &state.mesh, &gradient) > 0.0;
        let hit = line_search(
            &config.problem,
            &state.mesh,
            &state.data.u_d,
            recorded_cost.min(state.cost),
            &gradient,
            config.t0,
            config.max_halvings,
            &config.quality,
        )?;
        let mut record = IterationRecord {
            iteration: n + 1,
            cost: recorded_cost,
            step: 0.0,
            sigma: sigma_label,
            grad_norm,
            accepted: false,
            descent,
            wall_time: clock.seconds() - t_start,
            event: StepEvent::LineSearchFailed,
        };
        match hit {
            Some(hit) => {
                let decrease = recorded_cost - hit.cost;
                let sufficient = match delta0 {
                    None => true,
                    Some(d0) => decrease >= config.gamma * d0,
                };
                if sufficient {
                    if delta0.is_none() {
                        delta0 = Some(decrease);
                    }
                    recorded_cost = hit.cost;
                    state = OptState::build(&config.problem, hit.mesh, n + 1, sigma_label)?;
                    accepted_steps += 1;
                    record.cost = hit.cost;
                    record.step = hit.t;
                    record.accepted = true;
                    record.event = StepEvent::Accepted;
                    record.wall_time = clock.seconds() - t_start;
                    observer.on_record(&record, &state.mesh);
                    records.push(record);
                } else {
                    record.event = StepEvent::SufficientDecreaseFailed;
                    observer.on_record(&record, &state.mesh);
                    records.push(record);
                    termination = Termination::InsufficientDecrease;
                    break;
                }
            }
            None => {
                observer.on_record(&record, &state.mesh);
                records.push(record);
                termination = Termination::LineSearchFailed;
                break;
            }
        }
    }

    Ok(OptHistory {
        records,
        termination,
        accepted_steps,
        final_cost: recorded_cost,
        final_sigma: sigma_label,
        final_mesh: state.mesh,
    })
}

/// Variable-metric descent: the gradient is computed in the RKHS of the
/// configured radial kernel at the current sigma; a failed sufficient-
/// decrease test (or a failed line search) rejects the step and multiplies
/// sigma by q, and the run continues until the iteration budget or the
/// sigma floor is exhausted.
pub fn run_variable_metric(
    config: &OptConfig,
    clock: &dyn Clock,
    observer: &mut dyn OptObserver,
) -> Result<OptHistory, Error> {
    config.validate()?;
    let profile = config.method.kernel_profile().ok_or_else(|| {
        Error::Config(alloc::string::String::from(
            "variable-metric run requires an RKHS gradient method",
        ))
    })?;
    let t_start = clock.seconds();
    let mesh = generate_mesh(&config.initial_shape, config.n_interface, config.grid_res)?;
    let mut sigma = config.sigma0;
    let mut state = OptState::build(&config.problem, mesh, 0, sigma)?;

    let mut records = Vec::new();
    let rec0 = initial_record(state.cost, sigma);
    observer.on_record(&rec0, &state.mesh);
    records.push(rec0);

    let mut delta0: Option<f64> = None;
    let mut accepted_steps = 0usize;
    let mut termination = Termination::MaxIterReached;
    let mut recorded_cost = state.cost;

    for n in 0..config.max_iter {
        let kernel = RadialKernel::new(profile, sigma)?;
        let gradient = rkhs_gradient_field(&state.mesh, &state.tensors, &kernel);
        let grad_norm = gradient.max_abs();
        let descent = crate::tensors::dj_vol(&state.tensors, &state.mesh, &gradient) > 0.0;
        let hit = line_search(
            &config.problem,
            &state.mesh,
            &state.data.u_d,
            recorded_cost.min(state.cost),
            &gradient,
            config.t0,
            config.max_halvings,
            &config.quality,
        )?;
        let mut record = IterationRecord {
            iteration: n + 1,
            cost: recorded_cost,
            step: 0.0,
            sigma,
            grad_norm,
            accepted: false,
            descent,
            wall_time: clock.seconds() - t_start,
            event: StepEvent::LineSearchFailed,
        };
        let mut failed = true;
        if let Some(hit) = hit {
            let decrease = recorded_cost - hit.cost;
            let sufficient = match delta0 {
                None => true,
                Some(d0) => decrease >= config.gamma * d0,
            };
            if sufficient {
                if delta0.is_none() {
                    delta0 = Some(decrease);
                }
                recorded_cost = hit.cost;
                state = OptState::build(&config.problem, hit.mesh, n + 1, sigma)?;
                accepted_steps += 1;
                record.cost = hit.cost;
                record.step = hit.t;
                record.accepted = true;
                record.event = StepEvent::Accepted;
                record.wall_time = clock.seconds() - t_start;
                failed = false;
            } else {
                record.event = StepEvent::SufficientDecreaseFailed;
            }
        }
        observer.on_record(&record, &state.mesh);
        records.push(record);
        if failed {
            // Rejected step: shrink the metric and move on; stop once the
            // floor is reached.
            sigma *= config.q;
            if sigma < config.sigma_min {
                termination = Termination::SigmaFloor;
                break;
            }
            state.sigma = sigma;
        }
    }

    Ok(OptHistory {
        records,
        termination,
        accepted_steps,
        final_cost: recorded_cost,
        final_sigma: sigma,
        final_mesh: state.mesh,
    })
}

/// Runs the algorithm matching the configured metric: variable metric for
/// RKHS methods, the standard loop otherwise.
pub fn run(
    config: &OptConfig,
    clock: &dyn Clock,
    observer: &mut dyn OptObserver,
) -> Result<OptHistory, Error> {
    if config.method.is_rkhs() {
        run_variable_metric(config, clock, observer)
    } else {
        run_standard(config, clock, observer)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Vec2;
    use crate::mesh::Disc;
    use alloc::vec;

    fn disc(x: f64, y: f64, r: f64) -> Disc {
        Disc {
            center: Vec2::new(x, y),
            radius: r,
        }
    }

    fn small_config(method: GradientMethod) -> OptConfig {
        OptConfig {
            method,
            sigma0: 10.0,
            gamma: 1e-2,
            q: 0.5,
            max_iter: 10,
            t0: 1.0,
            max_halvings: 30,
            sigma_min: 1e-4,
            problem: ProblemSpec {
                beta_plus: 1.0,
                beta_minus: 0.5,
                source: 1.0,
                target: ShapeSpec::new(vec![disc(0.6, 0.6, 0.2)]),
                cg_tol: 1e-10,
            },
            initial_shape: ShapeSpec::new(vec![disc(0.35, 0.35, 0.15)]),
            grid_res: 9,
            n_interface: 24,
            quality: QualityFloors::default(),
        }
    }

    #[test]
    fn zero_direction_line_search_fails() {
        let config = small_config(GradientMethod::Euclidean);
        let mesh = generate_mesh(&config.initial_shape, config.n_interface, config.grid_res)
            .unwrap();
        let cost = config.problem.cost_on(&mesh).unwrap();
        let zero = VectorFieldP1::zeros(&mesh);
        let hit = line_search(
            &config.problem,
            &mesh,
            cost,
            &zero,
            1.0,
            8,
            &config.quality,
        )
        .unwrap();
        assert!(hit.is_none());
    }

    #[test]
    fn tiny_step_on_descent_direction_is_accepted_immediately() {
        let config = small_config(GradientMethod::RkhsGauss { sigma: 10.0 });
        let mesh = generate_mesh(&config.initial_shape, config.n_interface, config.grid_res)
            .unwrap();
        let state = OptState::build(&config.problem, mesh, 0, 10.0).unwrap();
        let kernel = RadialKernel::gauss(10.0).unwrap();
        let gradient = rkhs_gradient_field(&state.mesh, &state.tensors, &kernel);
        let hit = line_search(
            &config.problem,
            &state.mesh,
            state.cost,
            &gradient,
            1e-6,
            0,
            &config.quality,
        )
        .unwrap()
        .expect("tiny descent step rejected");
        assert!(hit.cost < state.cost);
        // First trial: no halvings were needed.
        assert!((hit.t - 1e-6 / gradient.max_abs()).abs() < 1e-18);
    }

    #[test]
    fn inverting_direction_gets_halved_until_valid() {
        let config = small_config(GradientMethod::RkhsGauss { sigma: 10.0 });
        let mesh = generate_mesh(&config.initial_shape, config.n_interface, config.grid_res)
            .unwrap();
        let state = OptState::build(&config.problem, mesh, 0, 10.0).unwrap();
        let kernel = RadialKernel::gauss(10.0).unwrap();
        let gradient = rkhs_gradient_field(&state.mesh, &state.tensors, &kernel);
        // Huge t0: the first trials invert elements and must be halved away.
        let hit = line_search(
            &config.problem,
            &state.mesh,
            state.cost,
            &gradient,
            1e3,
            40,
            &config.quality,
        )
        .unwrap()
        .expect("backtracking never found a valid decreasing step");
        let moved = mesh::deform(&state.mesh, &gradient, -hit.t).unwrap();
        assert!(mesh::validate(&moved, &config.quality).valid);
        assert!(hit.t < 1e3 / gradient.max_abs());
    }

    #[test]
    fn max_iter_zero_yields_only_initial_row() {
        let mut config = small_config(GradientMethod::Euclidean);
        config.max_iter = 0;
        let h = run_standard(&config, &NullClock, &mut NoopObserver).unwrap();
        assert_eq!(h.records.len(), 1);
        assert_eq!(h.records[0].event, StepEvent::Initial);
        assert_eq!(h.accepted_steps, 0);
        assert_eq!(h.termination, Termination::MaxIterReached);
    }

    #[test]
    fn already_optimal_run_stops_immediately() {
        let mut config = small_config(GradientMethod::H1 { seminorm: false });
        config.initial_shape = config.problem.target.clone();
        let h = run_standard(&config, &NullClock, &mut NoopObserver).unwrap();
        assert!(h.stopped_at_start(), "accepted {} steps", h.accepted_steps);
        assert_eq!(h.termination, Termination::LineSearchFailed);
        // J(Omega_0) is solver noise when the shapes coincide.
        assert!(h.records[0].cost < 1e-10);
    }

    #[test]
    fn accepted_costs_decrease_monotonically() {
        let config = small_config(GradientMethod::RkhsGauss { sigma: 10.0 });
        let h = run_variable_metric(&config, &NullClock, &mut NoopObserver).unwrap();
        assert!(h.accepted_steps > 0);
        let mut last = f64::INFINITY;
        for r in h.records.iter().filter(|r| r.accepted) {
            assert!(r.cost < last);
            last = r.cost;
        }
        assert!(mesh::validate(&h.final_mesh, &config.quality).valid);
    }

    #[test]
    fn sigma_is_non_increasing_and_reduced_by_q() {
        let mut config = small_config(GradientMethod::RkhsGauss { sigma: 10.0 });
        config.max_iter = 40;
        let h = run_variable_metric(&config, &NullClock, &mut NoopObserver).unwrap();
        let sigmas: Vec<f64> = h.records.iter().skip(1).map(|r| r.sigma).collect();
        for w in sigmas.windows(2) {
            assert!(w[1] <= w[0] + 1e-15);
            if w[1] < w[0] {
                assert!((w[1] - config.q * w[0]).abs() <= 1e-12 * w[0]);
            }
        }
    }

    #[test]
    fn sigma_floor_terminates_run() {
        let mut config = small_config(GradientMethod::RkhsGauss { sigma: 10.0 });
        // Floor equal to sigma0: the first failure must end the run.
        config.sigma_min = config.sigma0;
        config.initial_shape = config.problem.target.clone(); // no decrease possible
        let h = run_variable_metric(&config, &NullClock, &mut NoopObserver).unwrap();
        assert_eq!(h.termination, Termination::SigmaFloor);
        assert_eq!(h.accepted_steps, 0);
        assert_eq!(h.records.len(), 2);
    }

    #[test]
    fn standard_run_requires_rkhs_for_variable_metric() {
        let config = small_config(GradientMethod::Euclidean);
        assert!(matches!(
            run_variable_metric(&config, &NullClock, &mut NoopObserver),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn determinism_identical_histories() {
        let config = small_config(GradientMethod::RkhsGauss { sigma: 10.0 });
        let h1 = run_variable_metric(&config, &NullClock, &mut NoopObserver).unwrap();
        let h2 = run_variable_metric(&config, &NullClock, &mut NoopObserver).unwrap();
        assert_eq!(h1.records.len(), h2.records.len());
        for (a, b) in h1.records.iter().zip(&h2.records) {
            assert_eq!(a.cost.to_bits(), b.cost.to_bits());
            assert_eq!(a.step.to_bits(), b.step.to_bits());
            assert_eq!(a.sigma.to_bits(), b.sigma.to_bits());
            assert_eq!(a.grad_norm.to_bits(), b.grad_norm.to_bits());
            assert_eq!(a.accepted, b.accepted);
        }
    }

    #[test]
    fn config_validation_rejects_bad_parameters() {
        let mut config = small_config(GradientMethod::Euclidean);
        config.q = 1.5;
        assert!(config.validate().is_err());
        let mut config = small_config(GradientMethod::Euclidean);
        config.sigma_min = 20.0;
        assert!(config.validate().is_err());
    }
}
