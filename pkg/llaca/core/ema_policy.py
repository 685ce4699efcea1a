"""
ema_policy.py

Dynamic EMA weight and the EMA parameter lifecycle:

  1. initialize theta* from the model parameters          (init_ema)
  2. store parameters and gradients of the last iteration  (step)
  3. compute the per-layer EMA weight beta_t              (compute_beta_layer)
  4. update theta* = beta * theta* + (1 - beta) * theta   (step)
  5. drop the snapshots of iteration t-1                  (step)
  6. save theta* and hand it to the next dataset          (finish_dataset)

The exact scalar weight (grad + 1) / ((theta - theta*) * hess) and the Lagrangian
helpers are kept for oracle checks on analytic losses; training uses the
layer-wise L1 approximation.
"""
import logging
import math
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from llaca.core.params import LayerView, ParamVector, blend_layers, l1_norm
from llaca.exceptions import DegenerateInputError, IncompatibleLayoutError
from llaca.models import BetaRecord

# Absolute threshold on denominators (L1 norms and parameter differences)
EPSILON = 1e-12
DEFAULT_CLAMP = 0.99

BETA_MODES = ("exact_scalar", "practical_layerwise", "fixed")
BETA_REDUCTIONS = ("ratio_of_norms", "elementwise_mean")


class EmaState:
    """
    Mutable, single-owner state of the EMA policy.

    Attributes:
        ema_params: theta*
        prev_params: theta_{t-1} snapshot or None
        prev_grads: gradient snapshot of iteration t-1 or None
        iteration: t within the current dataset
        clamp_value: substitute weight for out-of-range betas
        beta_mode: "exact_scalar", "practical_layerwise" or "fixed"
        fixed_beta: constant weight for the "fixed" mode
        beta_reduction: "ratio_of_norms" or "elementwise_mean"
    """

    def __init__(self, ema_params: ParamVector, clamp_value: float = DEFAULT_CLAMP,
                 beta_mode: str = "practical_layerwise", fixed_beta: Optional[float] = None,
                 beta_reduction: str = "ratio_of_norms"):
        if not (0.0 < clamp_value < 1.0):
            raise ValueError(f"clamp_value must lie in (0, 1), got {clamp_value}")
        if beta_mode not in BETA_MODES:
            raise ValueError(f"Unknown beta_mode '{beta_mode}'")
        if beta_mode == "fixed" and (fixed_beta is None or not math.isfinite(fixed_beta)):
            raise ValueError("fixed beta_mode needs a finite fixed_beta")
        if beta_reduction not in BETA_REDUCTIONS:
            raise ValueError(f"Unknown beta_reduction '{beta_reduction}'")
        self.ema_params = ema_params
        self.prev_params: Optional[ParamVector] = None
        self.prev_grads: Optional[ParamVector] = None
        self.iteration = 0
        self.clamp_value = clamp_value
        self.beta_mode = beta_mode
        self.fixed_beta = fixed_beta
        self.beta_reduction = beta_reduction

    @property
    def has_snapshots(self) -> bool:
        return self.prev_params is not None and self.prev_grads is not None

    def __repr__(self) -> str:
        return (f"EmaState(mode={self.beta_mode}, t={self.iteration}, "
                f"snapshots={self.has_snapshots}, layers={self.ema_params.layer_names})")


def init_ema(initial_params: ParamVector, clamp_value: float = DEFAULT_CLAMP,
             beta_mode: str = "practical_layerwise", fixed_beta: Optional[float] = None,
             beta_reduction: str = "ratio_of_norms") -> EmaState:
    """
    Step 1: create theta* as a copy of the initial parameters.

    Args:
        initial_params: Parameters of the model before training
        clamp_value: Weight used whenever beta leaves (0, 1)
        beta_mode: How beta is obtained in ``step``
        fixed_beta: Constant weight for ``beta_mode="fixed"``
        beta_reduction: Layer reduction used by the practical weight

    Returns:
        Fresh EmaState with iteration 0 and no snapshots
    """
    return EmaState(initial_params.copy(), clamp_value=clamp_value, beta_mode=beta_mode,
                    fixed_beta=fixed_beta, beta_reduction=beta_reduction)


def compute_beta_exact(grad: float, hess: float, theta: float, ema_prev: float) -> float:
    """
    Exact stationary weight of the Lagrangian for one scalar parameter.

    beta = (grad + 1) / ((theta - ema_prev) * hess), without clamping.

    Raises:
        DegenerateInputError: if the denominator is zero
    """
    denom = (theta - ema_prev) * hess
    if denom == 0.0 or not math.isfinite(denom):
        raise DegenerateInputError(
            f"Degenerate denominator (theta - ema_prev) * hess = {denom}"
        )
    return (grad + 1.0) / denom


def relaxation_delta(theta: float, ema_prev: float, beta: float) -> float:
    """Relaxation factor delta = (ema_prev - theta) * (beta - 1) implied by an EMA step."""
    return (ema_prev - theta) * (beta - 1.0)


def lagrange_multiplier(beta: float, grad: float, hess: float, theta: float, ema_prev: float) -> float:
    """Multiplier that zeroes dF/d(delta) at the given beta."""
    delta = relaxation_delta(theta, ema_prev, beta)
    ratio = beta / (beta - 1.0)
    return -(ratio * grad + ratio * ratio * hess * delta + 1.0)


def lagrangian(beta: float, grad: float, hess: float, theta: float, ema_prev: float,
               delta: float, lam: float) -> float:
    """
    Second-order Lagrangian of the ideal-state objective as a function of beta.

    F = grad * r * delta + hess / 2 * (r * delta)^2 + delta
        + lam * (delta + (1 - beta) * (ema_prev - theta)),   r = beta / (beta - 1)
    """
    r = beta / (beta - 1.0)
    return (grad * r * delta + 0.5 * hess * (r * delta) ** 2 + delta
            + lam * (delta + (1.0 - beta) * (ema_prev - theta)))


def degenerate_mask(theta_t: ParamVector, theta_prev: ParamVector) -> np.ndarray:
    """Boolean mask of entries whose parameter change is below EPSILON."""
    if not theta_t.is_compatible(theta_prev):
        raise IncompatibleLayoutError("theta_t and theta_prev layouts differ")
    return np.abs(theta_t.values - theta_prev.values) < EPSILON


def approx_hessian_fd(grad_t: ParamVector, grad_prev: ParamVector,
                      theta_t: ParamVector, theta_prev: ParamVector) -> ParamVector:
    """
    Diagonal second derivative from the gradient difference quotient
    (grad_t - grad_prev) / (theta_t - theta_prev).

    Entries whose parameter change is below EPSILON are NaN.

    Raises:
        IncompatibleLayoutError: if any layout differs
        DegenerateInputError: if every entry is degenerate
    """
    for other in (grad_prev, theta_t, theta_prev):
        if not grad_t.is_compatible(other):
            raise IncompatibleLayoutError("approx_hessian_fd needs four layout-compatible vectors")
    mask = degenerate_mask(theta_t, theta_prev)
    if mask.size and mask.all():
        raise DegenerateInputError("theta_t equals theta_prev everywhere")
    dtheta = theta_t.values - theta_prev.values
    safe = np.where(mask, 1.0, dtheta)
    hess = (grad_t.values - grad_prev.values) / safe
    if mask.any():
        logging.debug("[ema_policy] %d degenerate hessian entries flagged", int(mask.sum()))
        hess = np.where(mask, np.nan, hess)
    return grad_t.with_values(hess)


def _resolve(beta_raw: float, clamp_value: float) -> Tuple[float, bool]:
    # NaN and +/-inf fail the comparison and fall through to the clamp
    if 0.0 < beta_raw < 1.0:
        return beta_raw, False
    return clamp_value, True


def compute_beta_layer(theta_t: LayerView, theta_prev: LayerView, ema_prev: LayerView,
                       grad_t: LayerView, grad_prev: LayerView, clamp_value: float = DEFAULT_CLAMP,
                       reduction: str = "ratio_of_norms", iteration: int = 0) -> BetaRecord:
    """
    Practical layer-wise EMA weight.

    beta_raw = | 1 - ||(theta_prev - ema_prev) * (grad_t + 1)||_1
                     / ||(theta_t - ema_prev) * (grad_t - grad_prev)||_1 |

    The "elementwise_mean" reduction replaces the norm ratio by the mean of the
    per-entry ratios |num_i / den_i| over entries with |den_i| >= EPSILON.

    A beta_raw outside (0, 1) is replaced by ``clamp_value``. A denominator below
    EPSILON gives beta_raw = inf and the clamp.

    Args:
        theta_t, theta_prev, ema_prev, grad_t, grad_prev: Views of the same layer
        clamp_value: Substitute weight, in (0, 1)
        reduction: "ratio_of_norms" (default) or "elementwise_mean"
        iteration: Iteration stamped on the record

    Returns:
        BetaRecord for the layer
    """
    if not (0.0 < clamp_value < 1.0):
        raise ValueError(f"clamp_value must lie in (0, 1), got {clamp_value}")
    n = len(theta_t)
    if any(len(v) != n for v in (theta_prev, ema_prev, grad_t, grad_prev)):
        raise IncompatibleLayoutError(f"Layer views of '{theta_t.layer_name}' differ in length")

    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        num_vec = (theta_prev.values - ema_prev.values) * (grad_t.values + 1.0)
        den_vec = (theta_t.values - ema_prev.values) * (grad_t.values - grad_prev.values)
        prev_plus_one = l1_norm(grad_prev.values + 1.0)
        grad_delta = l1_norm(grad_t.values - grad_prev.values)

        if reduction == "ratio_of_norms":
            den = l1_norm(den_vec)
            if not den >= EPSILON:
                beta_raw = math.inf
            else:
                beta_raw = abs(1.0 - l1_norm(num_vec) / den)
        elif reduction == "elementwise_mean":
            valid = np.abs(den_vec) >= EPSILON
            if not valid.any():
                beta_raw = math.inf
            else:
                beta_raw = abs(1.0 - float(np.mean(np.abs(num_vec[valid] / den_vec[valid]))))
        else:
            raise ValueError(f"Unknown reduction '{reduction}'")

    beta_applied, clamped = _resolve(float(beta_raw), clamp_value)
    return BetaRecord(
        iteration=iteration,
        layer_name=theta_t.layer_name,
        beta_raw=float(beta_raw),
        beta_applied=beta_applied,
        clamped=clamped,
        prev_grad_plus_one_l1=prev_plus_one,
        grad_delta_l1=grad_delta,
    )


def _exact_layer_betas(state: EmaState, params: ParamVector, grads: ParamVector,
                       hessian: Optional[ParamVector]) -> List[BetaRecord]:
    if hessian is None or not hessian.is_compatible(params):
        raise IncompatibleLayoutError("exact_scalar mode needs a layout-compatible hessian")
    records = []
    for seg in params.layout:
        if seg.length != 1:
            raise ValueError(f"exact_scalar mode needs one-element layers, '{seg.name}' has {seg.length}")
        g = float(grads.layer(seg.name).values[0])
        h = float(hessian.layer(seg.name).values[0])
        th = float(params.layer(seg.name).values[0])
        ema = float(state.ema_params.layer(seg.name).values[0])
        try:
            beta_raw = compute_beta_exact(g, h, th, ema)
        except DegenerateInputError:
            beta_raw = math.inf
        beta_applied, clamped = _resolve(beta_raw, state.clamp_value)
        records.append(BetaRecord(iteration=state.iteration, layer_name=seg.name,
                                  beta_raw=beta_raw, beta_applied=beta_applied, clamped=clamped))
    return records


def step(state: EmaState, current_params: ParamVector, current_grads: ParamVector,
         hessian: Optional[ParamVector] = None) -> Tuple[EmaState, List[BetaRecord]]:
    """
    Steps 2-5 for one training iteration.

    Computes one beta per layer, updates theta*, replaces the snapshots with
    (current_params, current_grads) and advances the iteration counter. Without
    snapshots (first iteration of a dataset) every layer uses ``clamp_value``,
    except in "fixed" mode which always uses ``fixed_beta``.

    Args:
        state: Policy state, updated in place
        current_params: theta_t
        current_grads: gradient recorded with theta_t
        hessian: True second derivatives, only for "exact_scalar" mode

    Returns:
        (state, list of BetaRecord, one per layer)
    """
    for other in (current_params, current_grads):
        if not state.ema_params.is_compatible(other):
            raise IncompatibleLayoutError(
                f"EMA layout {state.ema_params.layer_names} does not match {other.layer_names}"
            )

    state.iteration += 1
    t = state.iteration

    if state.beta_mode == "fixed":
        beta = float(state.fixed_beta)
        records = [BetaRecord(iteration=t, layer_name=name, beta_raw=beta, beta_applied=beta, clamped=False)
                   for name in current_params.layer_names]
    elif state.beta_mode == "exact_scalar":
        records = _exact_layer_betas(state, current_params, current_grads, hessian)
    elif not state.has_snapshots:
        records = [BetaRecord(iteration=t, layer_name=name, beta_raw=math.nan,
                              beta_applied=state.clamp_value, clamped=True)
                   for name in current_params.layer_names]
    else:
        records = []
        for name in current_params.layer_names:
            records.append(compute_beta_layer(
                current_params.layer(name),
                state.prev_params.layer(name),
                state.ema_params.layer(name),
                current_grads.layer(name),
                state.prev_grads.layer(name),
                clamp_value=state.clamp_value,
                reduction=state.beta_reduction,
                iteration=t,
            ))

    betas: Dict[str, float] = {rec.layer_name: rec.beta_applied for rec in records}
    clamped = sum(rec.clamped for rec in records)
    if clamped:
        logging.debug("[ema_policy] t=%d: %d/%d layers clamped to %.4f", t, clamped, len(records), state.clamp_value)

    state.ema_params = blend_layers(state.ema_params, current_params, betas)
    # Snapshots of t-1 are dropped here
    state.prev_params = current_params
    state.prev_grads = current_grads
    return state, records


def unroll_ema(theta0: ParamVector, thetas: Sequence[ParamVector], betas: Sequence[float]) -> ParamVector:
    """
    Closed form of t EMA steps:

        theta*_t = prod(beta_1..t) * theta0
                   + sum_i (1 - beta_i) * prod(beta_{i+1..t}) * theta_i

    Raises:
        ValueError: if ``thetas`` and ``betas`` differ in length
    """
    if len(thetas) != len(betas):
        raise ValueError(f"{len(thetas)} parameter vectors but {len(betas)} weights")
    for theta in thetas:
        if not theta0.is_compatible(theta):
            raise IncompatibleLayoutError("unroll_ema needs layout-compatible vectors")
    betas = np.asarray(betas, dtype=np.float64)
    # suffix[i] = prod(betas[i:])
    suffix = np.ones(len(betas) + 1)
    for i in range(len(betas) - 1, -1, -1):
        suffix[i] = suffix[i + 1] * betas[i]
    total = suffix[0] * theta0.values
    for i, theta in enumerate(thetas):
        total = total + (1.0 - betas[i]) * suffix[i + 1] * theta.values
    return theta0.with_values(total)


def finish_dataset(state: EmaState) -> Tuple[ParamVector, ParamVector]:
    """
    Step 6: save theta* at the end of a dataset.

    Clears the snapshots and resets the iteration counter; theta* itself carries
    over to the next dataset.

    Returns:
        (checkpoint, next_init), both copies of theta*
    """
    checkpoint = state.ema_params.copy()
    next_init = state.ema_params.copy()
    state.prev_params = None
    state.prev_grads = None
    state.iteration = 0
    return checkpoint, next_init
