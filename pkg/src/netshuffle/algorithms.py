"""Epoch-stepping state machines for the seven methods.

Every method advances one epoch (m inner steps) at a time over a simulated
synchronous network: communication is a dense multiply by the mixing matrix,
with no message loss.  Random-reshuffling methods draw per-agent permutations
from a counter-keyed stream; their unshuffled twins draw i.i.d. indices from
the same stream in 'iid' mode.

Exact-diffusion boundary semantics: the primal-dual recursion with a
persistent dual variable is the reference.  The x-only form therefore carries
its correction across epochs (the plain-gradient branch fires only at the
very first step); `strict_alg2=True` instead resets the correction at every
epoch start for comparison.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import metrics as _metrics
from .objective import FiniteSumObjective
from .shuffling import PURPOSE_INIT, PermutationStream, keyed_rng
from .topology import MixingMatrix, psd_sqrt

DIVERGENCE_NORM = 1e12


@dataclass(frozen=True)
class ProbeInfo:
    """Snapshot of one inner step, for identity checks and inner metrics."""

    epoch: int
    ell: int
    alpha: float
    X_before: np.ndarray
    X_after: np.ndarray
    grads: np.ndarray
    Y_before: np.ndarray | None = None


class _Method:
    """Common scaffolding; subclasses implement `epoch`."""

    name = "abstract"
    uses_rr = True  # False => requires iid sampling

    def __init__(self, objective: FiniteSumObjective, mix: MixingMatrix,
                 stream: PermutationStream):
        if objective.n != mix.n:
            raise ValueError("objective and mixing matrix disagree on n")
        if self.uses_rr and stream.mode == "iid":
            raise ValueError(f"{self.name} requires rr or once sampling")
        if not self.uses_rr and stream.mode != "iid":
            raise ValueError(f"{self.name} requires iid sampling")
        self.obj = objective
        self.W = mix.w
        self.mix = mix
        self.stream = stream
        self.n, self.m, self.p = objective.n, objective.m, objective.p
        self.X: np.ndarray | None = None

    def reset(self, X0: np.ndarray):
        X0 = np.array(X0, dtype=float)
        if X0.shape != (self.n, self.p):
            raise ValueError(f"X0 must be ({self.n},{self.p})")
        self.X = X0

    def epoch(self, t: int, alpha: float, probe=None):
        raise NotImplementedError

    def abc_state(self, alpha: float):
        """(X, S) of the unified transformed recursion at an epoch start,
        or None for methods outside the A/B/C family."""
        return None


class CentralizedRR(_Method):
    """All agents share one iterate and one permutation per epoch."""

    name = "crr"

    def reset(self, X0):
        super().reset(X0)
        if np.max(np.abs(X0 - X0[0])) > 0:
            raise ValueError("centralized RR needs a common initial point")
        self.x = self.X[0].copy()

    def epoch(self, t, alpha, probe=None):
        perm = self.stream.permutation(0, t, self.m)
        for ell in range(self.m):
            Xb = np.broadcast_to(self.x, (self.n, self.p)).copy()
            idx = np.full(self.n, perm[ell])
            G = self.obj.perm_grads(Xb, idx)
            self.x = self.x - alpha * G.mean(axis=0)
            if probe is not None:
                Xa = np.broadcast_to(self.x, (self.n, self.p)).copy()
                probe(ProbeInfo(t, ell, alpha, Xb, Xa, G))
        self.X = np.broadcast_to(self.x, (self.n, self.p)).copy()


class DRR(_Method):
    """Decentralized gradient descent with per-agent reshuffling."""

    name = "drr"

    def epoch(self, t, alpha, probe=None):
        orders = self.stream.epoch_orders(self.n, t, self.m)
        for ell in range(self.m):
            G = self.obj.perm_grads(self.X, orders[:, ell])
            Xb = self.X
            self.X = self.W @ (self.X - alpha * G)
            if probe is not None:
                probe(ProbeInfo(t, ell, alpha, Xb, self.X, G))


class DSGD(DRR):
    """D-RR's unshuffled twin: same update, i.i.d. index draws."""

    name = "dsgd"
    uses_rr = False


class GTRR(_Method):
    """Gradient tracking with random reshuffling.

    The tracker is re-initialized to the first shuffled gradient at every
    epoch start; inside the epoch x descends along the tracker then mixes,
    and the tracker mixes then corrects with consecutive shuffled gradients.
    """

    name = "gtrr"

    def reset(self, X0):
        super().reset(X0)
        self.Y = None

    def epoch(self, t, alpha, probe=None):
        orders = self.stream.epoch_orders(self.n, t, self.m)
        g = self.obj.perm_grads(self.X, orders[:, 0])
        self.Y = g.copy()
        for ell in range(self.m):
            Xb, Yb, g_ell = self.X, self.Y, g
            self.X = self.W @ (self.X - alpha * self.Y)
            if ell < self.m - 1:
                g = self.obj.perm_grads(self.X, orders[:, ell + 1])
                self.Y = self.W @ self.Y + g - g_ell
            if probe is not None:
                probe(ProbeInfo(t, ell, alpha, Xb, self.X, g_ell, Y_before=Yb))

    def abc_state(self, alpha):
        xbar = self.X.mean(axis=0)
        Gc = self.obj.grads_at_consensus(xbar)
        S = self.W @ self.X - self.X + alpha * (self.W @ Gc)
        return self.X, S


class DSGT(_Method):
    """Gradient tracking with i.i.d. sampling; the tracker persists across
    epochs (no reset), matching the standard method."""

    name = "dsgt"
    uses_rr = False

    def reset(self, X0):
        super().reset(X0)
        self.Y = None
        self._g = None
        self._orders = {}
        self._t_next = 0

    def _order(self, t):
        if t not in self._orders:
            self._orders = {k: v for k, v in self._orders.items() if k >= t - 1}
            self._orders[t] = self.stream.epoch_orders(self.n, t, self.m)
        return self._orders[t]

    def epoch(self, t, alpha, probe=None):
        if t != self._t_next:
            raise ValueError("dsgt epochs must be advanced consecutively from 0")
        self._t_next += 1
        orders = self._order(t)
        if self.Y is None:
            self._g = self.obj.perm_grads(self.X, orders[:, 0])
            self.Y = self._g.copy()
        for ell in range(self.m):
            Xb, Yb, gb = self.X, self.Y, self._g
            self.X = self.W @ (self.X - alpha * self.Y)
            k_next = t * self.m + ell + 1
            nxt = self._order(k_next // self.m)[:, k_next % self.m]
            g_new = self.obj.perm_grads(self.X, nxt)
            self.Y = self.W @ self.Y + g_new - self._g
            self._g = g_new
            if probe is not None:
                probe(ProbeInfo(t, ell, alpha, Xb, self.X, gb, Y_before=Yb))


class ED(_Method):
    """Exact diffusion with i.i.d. sampling: local step plus correction with
    the stored previous stochastic gradient, then mix."""

    name = "ed"
    uses_rr = False

    def reset(self, X0):
        super().reset(X0)
        self._prev_x = None
        self._prev_ag = None  # previous alpha * gradient

    def _half_step(self, alpha, g, fresh):
        if fresh or self._prev_x is None:
            return self.X - alpha * g
        return 2.0 * self.X - self._prev_x - (alpha * g - self._prev_ag)

    def epoch(self, t, alpha, probe=None):
        orders = self.stream.epoch_orders(self.n, t, self.m)
        for ell in range(self.m):
            g = self.obj.perm_grads(self.X, orders[:, ell])
            half = self._half_step(alpha, g, fresh=False)
            Xb = self.X
            self._prev_x, self._prev_ag = self.X, alpha * g
            self.X = self.W @ half
            if probe is not None:
                probe(ProbeInfo(t, ell, alpha, Xb, self.X, g))


class EDRR(ED):
    """Exact diffusion with random reshuffling, x-only form.

    Carries a shadow dual variable so the transformed-state hooks match the
    primal-dual reference exactly.  With `strict_alg2` the correction (and
    the shadow dual) reset at every epoch start instead of persisting.
    """

    name = "edrr"
    uses_rr = True

    def __init__(self, objective, mix, stream, strict_alg2: bool = False):
        super().__init__(objective, mix, stream)
        if mix.spectral.lambda_min < -1e-12:
            raise ValueError(
                "exact diffusion needs a positive semidefinite W; apply lazify first"
            )
        self.strict_alg2 = strict_alg2
        self._b_half = psd_sqrt(np.eye(self.n) - self.W)

    def reset(self, X0):
        super().reset(X0)
        self.D = np.zeros_like(self.X)

    def epoch(self, t, alpha, probe=None):
        orders = self.stream.epoch_orders(self.n, t, self.m)
        for ell in range(self.m):
            fresh = self.strict_alg2 and ell == 0
            if fresh:
                self._prev_x = None
                self.D = np.zeros_like(self.X)
            g = self.obj.perm_grads(self.X, orders[:, ell])
            half = self._half_step(alpha, g, fresh=fresh)
            Xb = self.X
            self._prev_x, self._prev_ag = self.X, alpha * g
            self.X = self.W @ half
            self.D = self.D + self._b_half @ self.X
            if probe is not None:
                probe(ProbeInfo(t, ell, alpha, Xb, self.X, g))

    def abc_state(self, alpha):
        xbar = self.X.mean(axis=0)
        Gc = self.obj.grads_at_consensus(xbar)
        S = self._b_half @ self.D - (self.X - self.W @ self.X) \
            + alpha * (self.W @ Gc)
        return self.X, S


class EDRRPrimalDual(_Method):
    """Exact diffusion with reshuffling in its two-line primal-dual form;
    the dual starts at zero and persists across epochs."""

    name = "edrr-pd"

    def __init__(self, objective, mix, stream):
        super().__init__(objective, mix, stream)
        if mix.spectral.lambda_min < -1e-12:
            raise ValueError(
                "exact diffusion needs a positive semidefinite W; apply lazify first"
            )
        self._b_half = psd_sqrt(np.eye(self.n) - self.W)

    def reset(self, X0):
        super().reset(X0)
        self.D = np.zeros_like(self.X)

    def epoch(self, t, alpha, probe=None):
        orders = self.stream.epoch_orders(self.n, t, self.m)
        for ell in range(self.m):
            g = self.obj.perm_grads(self.X, orders[:, ell])
            Xb = self.X
            self.X = self.W @ (self.X - alpha * g) - self._b_half @ self.D
            self.D = self.D + self._b_half @ self.X
            if probe is not None:
                probe(ProbeInfo(t, ell, alpha, Xb, self.X, g))

    def abc_state(self, alpha):
        xbar = self.X.mean(axis=0)
        Gc = self.obj.grads_at_consensus(xbar)
        S = self._b_half @ self.D - (self.X - self.W @ self.X) \
            + alpha * (self.W @ Gc)
        return self.X, S


METHODS = {
    cls.name: cls
    for cls in (CentralizedRR, DSGD, DRR, DSGT, GTRR, ED, EDRR, EDRRPrimalDual)
}
RR_METHODS = tuple(name for name, cls in METHODS.items() if cls.uses_rr)


def make_method(name: str, objective, mix, seed: int, sampling: str = "rr",
                strict_alg2: bool = False) -> _Method:
    if name not in METHODS:
        raise ValueError(f"unknown method {name!r}; choose from {sorted(METHODS)}")
    cls = METHODS[name]
    mode = sampling if cls.uses_rr else "iid"
    if cls.uses_rr and sampling == "iid":
        raise ValueError(f"{name} requires rr or once sampling, not iid")
    stream = PermutationStream(seed, mode)
    if name == "edrr":
        return cls(objective, mix, stream, strict_alg2=strict_alg2)
    return cls(objective, mix, stream)


def initial_iterates(objective, init: str = "same", init_scale: float = 1.0,
                     init_seed: int = 0, run_seed: int = 0) -> np.ndarray:
    """Common-point init (default, keyed off init_seed so all replicate runs
    share it) or per-agent Gaussian init keyed off the run seed."""
    n, p = objective.n, objective.p
    if init == "same":
        rng = keyed_rng(init_seed, PURPOSE_INIT, agent=0, epoch=0)
        x = init_scale * rng.normal(size=p)
        return np.tile(x, (n, 1))
    if init == "random":
        rng = keyed_rng(run_seed, PURPOSE_INIT, agent=1, epoch=0)
        return init_scale * rng.normal(size=(n, p))
    raise ValueError("init must be 'same' or 'random'")


def run(method_name: str, objective, mix: MixingMatrix, schedule, T: int,
        seed: int, sampling: str = "rr", x0: np.ndarray | None = None,
        init: str = "same", init_scale: float = 1.0, init_seed: int = 0,
        transform=None, strict_alg2: bool = False, inner_metrics: bool = False,
        timings: bool = False, probe=None) -> list:
    """Advance T epochs and record metrics at every epoch boundary.

    Returns T+1 trajectory records (fewer if the run is truncated by
    divergence, in which case the last record carries the flag).  Fully
    deterministic for fixed seeds unless `timings` is set.
    """
    method = make_method(method_name, objective, mix, seed, sampling, strict_alg2)
    if x0 is None:
        x0 = initial_iterates(objective, init, init_scale, init_seed, seed)
    method.reset(x0)
    start = time.perf_counter_ns()
    records: list[_metrics.TrajectoryRecord] = []
    history: list[float] = []
    min_prev = np.inf

    def snapshot(t_mark, alpha):
        nonlocal min_prev
        e_norm_sq = None
        state = method.abc_state(alpha) if transform is not None else None
        if state is not None:
            e = transform.e_vector(state[0], state[1])
            e_norm_sq = float(np.sum(e * e))
        wall = time.perf_counter_ns() - start if timings else None
        rec = _metrics.record(method.X, t_mark, alpha, objective,
                              min_prev=min_prev, transform=transform,
                              e_norm_sq=e_norm_sq, wall_ns=wall)
        min_prev = rec.min_grad_norm_sq
        records.append(rec)
        return rec

    for t in range(T + 1):
        alpha = float(schedule.alpha(t, history))
        if not (np.all(np.isfinite(method.X))
                and np.linalg.norm(method.X) <= DIVERGENCE_NORM):
            rec = snapshot(t, alpha)
            records[-1] = rec.flag_diverged()
            break
        rec = snapshot(t, alpha)
        history.append(rec.fgap_bar if rec.fgap_bar is not None else rec.grad_norm_sq)
        if t == T:
            break
        inner = None
        if inner_metrics or probe is not None:
            def inner(info, _t=t, _alpha=alpha):
                if probe is not None:
                    probe(info)
                if inner_metrics and info.ell < method.m - 1:
                    frac = _t + (info.ell + 1) / method.m
                    wall = time.perf_counter_ns() - start if timings else None
                    records.append(_metrics.record(
                        info.X_after, frac, _alpha, objective, min_prev=min_prev,
                        transform=None, e_norm_sq=None, wall_ns=wall))
        method.epoch(t, alpha, probe=inner)
    return records
