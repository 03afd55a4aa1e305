"""Output-level calibration of quantization parameters.

The objective combines the tempered KL divergence between full-precision and
quantized output distributions with a quadratic penalty on parameter drift
from the min-max snapshot:

    total = kl_out + lambda_p * (||scale - scale0||^2 + ||zp - zp0||^2)

Minimization is a greedy cyclic coordinate search: per tensor, multiplicative
scale steps (1 +/- s) over a decreasing step schedule and unit zero-point
steps, accepting only strict improvements. The accepted-move trace is
therefore non-increasing, and the whole search is deterministic for a given
configuration.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .net import TinyNet, forward_fp, forward_lq
from .numerics import log_softmax_t, softmax_t
from .quantizer import QuantParams
from .rng import SplitMix64
from .validation import as_matrix

DEFAULT_TEMPERATURE = 0.4
DEFAULT_LAMBDA_P = 0.01
DEFAULT_STEP_SCHEDULE = (0.2, 0.1, 0.05, 0.02)

ParamMap = dict[str, QuantParams | None]


@dataclass(frozen=True)
class CalibConfig:
    temperature: float = DEFAULT_TEMPERATURE
    lambda_p: float = DEFAULT_LAMBDA_P
    rounds: int = 2  # full coordinate cycles per step size
    step_schedule: tuple[float, ...] = DEFAULT_STEP_SCHEDULE
    seed: int = 0
    sample_count: int | None = None  # rows of the calibration batch to use

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        if self.lambda_p < 0:
            raise ValueError(f"lambda_p must be nonnegative, got {self.lambda_p}")
        if self.rounds < 1:
            raise ValueError(f"rounds must be >= 1, got {self.rounds}")
        schedule = tuple(float(s) for s in self.step_schedule)
        if not schedule:
            raise ValueError("step_schedule must not be empty")
        if any(not 0 < s < 1 for s in schedule):
            raise ValueError("step sizes must lie in (0, 1)")
        if any(b >= a for a, b in zip(schedule, schedule[1:])):
            raise ValueError("step sizes must be strictly decreasing")
        object.__setattr__(self, "step_schedule", schedule)
        if self.sample_count is not None and self.sample_count < 1:
            raise ValueError(f"sample_count must be >= 1, got {self.sample_count}")


@dataclass
class CalibState:
    """Snapshot + current quantization parameters and the objective trace.

    ``objective_trace`` rows are (round, kl_out, reg, total); accepted-move
    greediness makes the total column non-increasing.
    """

    initial_params: ParamMap
    current_params: ParamMap
    objective_trace: list[tuple[int, float, float, float]] = field(default_factory=list)

    @classmethod
    def from_params(cls, params: ParamMap) -> "CalibState":
        return cls(initial_params=dict(params), current_params=dict(params))


def eval_kl_out(fp_logits, lq_logits, temperature: float) -> float:
    """Mean tempered KL(fp || lq) over aligned logit rows."""
    fp = as_matrix(fp_logits, "fp_logits")
    lq = as_matrix(lq_logits, "lq_logits")
    if fp.shape != lq.shape:
        raise ValueError(f"logit shapes differ: {fp.shape} vs {lq.shape}")
    if fp.shape[0] == 0:
        raise ValueError("need at least one sample")
    p_fp = softmax_t(fp, temperature)
    log_p_fp = log_softmax_t(fp, temperature)
    log_p_lq = log_softmax_t(lq, temperature)
    return float(np.mean(np.sum(p_fp * (log_p_fp - log_p_lq), axis=1)))


def param_deviation(current: ParamMap, initial: ParamMap) -> float:
    """Sum of squared scale and zero-point deviations from the snapshot."""
    if current.keys() != initial.keys():
        raise ValueError("current and initial parameter sets cover different tensors")
    total = 0.0
    for key in current:
        cur, ini = current[key], initial[key]
        if cur is None or ini is None:
            if cur is not ini:
                raise ValueError(f"tensor {key!r} toggled its quantized state")
            continue
        total += float(np.sum((cur.scale - ini.scale) ** 2))
        total += float(np.sum((cur.zero_point - ini.zero_point) ** 2))
    return total


def eval_reg(state: CalibState) -> float:
    return param_deviation(state.current_params, state.initial_params)


def _candidate_params(params: QuantParams, kind: str, direction: float):
    if kind == "scale":
        return params.with_scale(params.scale * (1.0 + direction))
    moved = np.clip(
        params.zero_point + int(direction), params.q_min, params.q_max
    ).astype(np.int64)
    if np.array_equal(moved, params.zero_point):
        return None
    return params.with_zero_point(moved)


def refine(
    net: TinyNet, calib_batch, config: CalibConfig, state: CalibState
) -> CalibState:
    """Greedy coordinate search over all quantization parameters.

    Returns a new state whose final combined objective is <= the initial
    one; the input state is not modified.
    """
    batch = as_matrix(calib_batch, "calib_batch")
    if batch.shape[0] == 0:
        raise ValueError("calibration batch is empty")
    if config.sample_count is not None and config.sample_count < batch.shape[0]:
        rng = SplitMix64(config.seed)
        batch = batch[rng.subsample(batch.shape[0], config.sample_count)]

    fp = forward_fp(net, batch)
    p_fp = softmax_t(fp, config.temperature)
    fp_entropy_term = np.sum(p_fp * log_softmax_t(fp, config.temperature), axis=1)

    def kl_term(params: ParamMap) -> float:
        log_p_lq = log_softmax_t(forward_lq(net, batch, params), config.temperature)
        return float(np.mean(fp_entropy_term - np.sum(p_fp * log_p_lq, axis=1)))

    initial = dict(state.initial_params)
    current = dict(state.current_params)
    keys = [k for k in sorted(current) if current[k] is not None]

    kl = kl_term(current)
    reg = param_deviation(current, initial)
    total = kl + config.lambda_p * reg
    trace = list(state.objective_trace)
    round_index = trace[-1][0] if trace else 0
    if not trace:
        trace.append((0, kl, reg, total))

    for step in config.step_schedule:
        for _ in range(config.rounds):
            improved = False
            for key in keys:
                for kind, directions in (("scale", (step, -step)), ("zp", (1, -1))):
                    best = None
                    for direction in directions:
                        candidate = _candidate_params(current[key], kind, direction)
                        if candidate is None:
                            continue
                        trial = dict(current)
                        trial[key] = candidate
                        trial_kl = kl_term(trial)
                        trial_reg = param_deviation(trial, initial)
                        trial_total = trial_kl + config.lambda_p * trial_reg
                        if trial_total < total and (
                            best is None or trial_total < best[0]
                        ):
                            best = (trial_total, trial_kl, trial_reg, candidate)
                    if best is not None:
                        total, kl, reg, current[key] = best
                        improved = True
            round_index += 1
            trace.append((round_index, kl, reg, total))
            if not improved:
                break

    return CalibState(
        initial_params=initial, current_params=current, objective_trace=trace
    )
