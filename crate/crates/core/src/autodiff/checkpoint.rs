//! Unrolling a step function with segment-level gradient checkpointing.
//!
//! The forward pass runs every step on throwaway constant tapes and keeps only the
//! state at segment boundaries. The backward pass replays one segment at a
//! time from its checkpoint on a fresh tape, so at most one segment of graph is
//! alive at once.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StepCtx {
    pub step: usize,
    /// True when the step is being recomputed during a backward pass.
    pub replay: bool,
}

/// One step of a differentiable recurrence `state' = f(params, state)`.
pub trait StepFn {
    fn step(&mut self, tape: &mut Tape, ctx: StepCtx, params: &[Var], state: &[Var]) -> Result<Vec<Var>>;
}

impl<F> StepFn for F
where
    F: FnMut(&mut Tape, StepCtx, &[Var], &[Var]) -> Result<Vec<Var>>,
{
    fn step(&mut self, tape: &mut Tape, ctx: StepCtx, params: &[Var], state: &[Var]) -> Result<Vec<Var>> {
        self(tape, ctx, params, state)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Checkpointing {
    /// Keep the whole graph alive for the backward pass.
    Off,
    /// Store the state every `n` steps and recompute segments on the way back.
    Every(usize),
}

enum Graph {
    Full { tape: Tape, params: Vec<Var>, initial: Vec<Var>, last: Vec<Var> },
    Segments { segment: usize, checkpoints: Vec<(usize, Vec<Tensor>)> },
}

/// Result of a forward unroll, ready for a backward pass.
pub struct Unrolled {
    pub final_state: Vec<Tensor>,
    params: Vec<Tensor>,
    initial: Vec<Tensor>,
    n_steps: usize,
    graph: Graph,
}

#[derive(Clone, Debug)]
pub struct UnrollGradients {
    pub params: Vec<Tensor>,
    pub initial_state: Vec<Tensor>,
}

fn run_step<S: StepFn>(
    step_fn: &mut S,
    tape: &mut Tape,
    ctx: StepCtx,
    params: &[Var],
    state: &[Var],
) -> Result<Vec<Var>> {
    let next = step_fn.step(tape, ctx, params, state).map_err(|e| e.at_step(ctx.step))?;
    tape.check().map_err(|e| e.at_step(ctx.step))?;
    if next.len() != state.len() {
        return Err(Error::Shape(format!("step returned {} state entries, expected {}", next.len(), state.len())));
    }
    Ok(next)
}

/// Runs `n_steps` of `step_fn` with checkpoints every `segment_len` steps.
pub fn checkpointed_unroll<S: StepFn>(
    step_fn: &mut S,
    params: &[Tensor],
    initial: &[Tensor],
    n_steps: usize,
    segment_len: usize,
) -> Result<Unrolled> {
    unroll(step_fn, params, initial, n_steps, Checkpointing::Every(segment_len))
}

pub fn unroll<S: StepFn>(
    step_fn: &mut S,
    params: &[Tensor],
    initial: &[Tensor],
    n_steps: usize,
    mode: Checkpointing,
) -> Result<Unrolled> {
    match mode {
        Checkpointing::Off => {
            let mut tape = Tape::new();
            let pv: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
            let iv: Vec<Var> = initial.iter().map(|s| tape.leaf(s.clone())).collect();
            let mut state = iv.clone();
            for t in 0..n_steps {
                state = run_step(step_fn, &mut tape, StepCtx { step: t, replay: false }, &pv, &state)?;
            }
            let final_state = state.iter().map(|&v| tape.value(v).clone()).collect();
            Ok(Unrolled {
                final_state,
                params: params.to_vec(),
                initial: initial.to_vec(),
                n_steps,
                graph: Graph::Full { tape, params: pv, initial: iv, last: state },
            })
        }
        Checkpointing::Every(segment) => {
            if segment == 0 {
                return Err(Error::InvalidArgument("segment length must be at least 1".into()));
            }
            let mut checkpoints = Vec::new();
            let mut current: Vec<Tensor> = initial.to_vec();
            for start in (0..n_steps).step_by(segment) {
                checkpoints.push((start, current.clone()));
                for t in start..(start + segment).min(n_steps) {
                    let mut tape = Tape::new();
                    let pv: Vec<Var> = params.iter().map(|p| tape.constant(p.clone())).collect();
                    let sv: Vec<Var> = current.iter().map(|s| tape.constant(s.clone())).collect();
                    let next = run_step(step_fn, &mut tape, StepCtx { step: t, replay: false }, &pv, &sv)?;
                    current = next.iter().map(|&v| tape.value(v).clone()).collect();
                }
            }
            Ok(Unrolled {
                final_state: current,
                params: params.to_vec(),
                initial: initial.to_vec(),
                n_steps,
                graph: Graph::Segments { segment, checkpoints },
            })
        }
    }
}

impl Unrolled {
    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    /// Number of stored segment checkpoints (zero for a full-graph unroll).
    pub fn checkpoints(&self) -> usize {
        match &self.graph {
            Graph::Full { .. } => 0,
            Graph::Segments { checkpoints, .. } => checkpoints.len(),
        }
    }

    /// Nodes held by the retained graph; zero when checkpointed.
    pub fn retained_nodes(&self) -> usize {
        match &self.graph {
            Graph::Full { tape, .. } => tape.len(),
            Graph::Segments { .. } => 0,
        }
    }

    /// Gradient of the scalar final-state entry `index` wrt params and initial state.
    pub fn backward_scalar<S: StepFn>(self, step_fn: &mut S, index: usize) -> Result<UnrollGradients> {
        let shape = self.final_state[index].shape().to_vec();
        if !self.final_state[index].is_scalar() {
            return Err(Error::SeedNotScalar(shape));
        }
        let mut seeds: Vec<Option<Tensor>> = vec![None; self.final_state.len()];
        seeds[index] = Some(Tensor::full(&shape, 1.0));
        self.backward(step_fn, &seeds)
    }

    /// Pulls cotangents of the final state back to params and initial state.
    pub fn backward<S: StepFn>(self, step_fn: &mut S, seeds: &[Option<Tensor>]) -> Result<UnrollGradients> {
        assert_eq!(seeds.len(), self.final_state.len(), "one seed slot per state entry");
        match self.graph {
            Graph::Full { mut tape, params, initial, last } => {
                let pairs = last.iter().zip(seeds).filter_map(|(&v, s)| s.as_ref().map(|s| (v, s.clone()))).collect();
                let grads = tape.backward_from(pairs)?;
                Ok(UnrollGradients {
                    params: params.iter().map(|&v| grads.wrt(v)).collect(),
                    initial_state: initial.iter().map(|&v| grads.wrt(v)).collect(),
                })
            }
            Graph::Segments { segment, checkpoints } => {
                let mut param_grads: Vec<Tensor> = self.params.iter().map(|p| Tensor::zeros(p.shape())).collect();
                let mut state_grads: Vec<Option<Tensor>> = seeds.to_vec();
                for (start, saved) in checkpoints.into_iter().rev() {
                    let mut tape = Tape::new();
                    let pv: Vec<Var> = self.params.iter().map(|p| tape.leaf(p.clone())).collect();
                    let sv: Vec<Var> = saved.iter().map(|s| tape.leaf(s.clone())).collect();
                    let mut state = sv.clone();
                    for t in start..(start + segment).min(self.n_steps) {
                        state = run_step(step_fn, &mut tape, StepCtx { step: t, replay: true }, &pv, &state)?;
                    }
                    let pairs = state
                        .iter()
                        .zip(&state_grads)
                        .filter_map(|(&v, s)| s.as_ref().map(|s| (v, s.clone())))
                        .collect();
                    let grads = tape.backward_from(pairs)?;
                    for (acc, &v) in param_grads.iter_mut().zip(&pv) {
                        acc.add_assign(&grads.wrt(v));
                    }
                    state_grads = sv.iter().map(|&v| Some(grads.wrt(v))).collect();
                }
                let initial_state = state_grads
                    .into_iter()
                    .zip(&self.initial)
                    .map(|(g, s)| g.unwrap_or_else(|| Tensor::zeros(s.shape())))
                    .collect();
                Ok(UnrollGradients { params: param_grads, initial_state })
            }
        }
    }
}
