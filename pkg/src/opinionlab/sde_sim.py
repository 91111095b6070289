"""Explicit Euler integration of the N-agent bounded-confidence SDE.

    x_i <- x_i - dt/N sum_j phi(|x_i - x_j|)(x_i - x_j) + sigma sqrt(dt) z_i

Gaussian draws are keyed by (seed, step, agent) through :mod:`opinionlab.rng`,
so a trajectory does not depend on snapshot stride or on how the run is
chunked.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Iterator, Optional, Union

import numpy as np
from numba import njit

from .influence import InfluenceShape, ScaledInfluence, get_shape
from .rng import PURPOSE_INIT, PURPOSE_NOISE, fill_normals, fill_uniforms

__all__ = [
    "BOUNDARIES",
    "SimConfig",
    "AgentState",
    "Trajectory",
    "init_uniform",
    "drift",
    "euler_step",
    "apply_boundary",
    "run",
]

BOUNDARIES = ("free", "reflecting", "periodic")
_BOUNDARY_CODE = {"free": 0, "reflecting": 1, "periodic": 2}


@dataclass(frozen=True)
class SimConfig:
    n_agents: int = 500
    length: float = 10.0
    radius: float = 1.0
    influence: Union[str, InfluenceShape] = "phi2"
    sigma: float = 0.0
    dt: float = 0.1
    t_end: float = 150.0
    boundary: str = "free"
    seed: int = 0
    sample_every: int = 10

    def __post_init__(self):
        if self.n_agents < 2:
            raise ValueError("n_agents must be at least 2")
        if not self.length > 0 or not self.radius > 0:
            raise ValueError("length and radius must be positive")
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.t_end < self.dt:
            raise ValueError("t_end must be at least dt")
        if self.boundary not in BOUNDARIES:
            raise ValueError(f"boundary must be one of {BOUNDARIES}")
        if self.sample_every < 1:
            raise ValueError("sample_every must be positive")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in 64 unsigned bits")

    @property
    def shape(self) -> InfluenceShape:
        if isinstance(self.influence, InfluenceShape):
            return self.influence
        return get_shape(self.influence)

    @property
    def scaled_influence(self) -> ScaledInfluence:
        return ScaledInfluence(self.shape, self.radius)

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))

    def with_(self, **changes) -> "SimConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        d = asdict(self)
        if isinstance(self.influence, InfluenceShape):
            d["influence"] = self.influence.name
        return d


@dataclass
class AgentState:
    time: float
    positions: np.ndarray
    step: int = 0


@dataclass
class Trajectory:
    """Snapshots of all agents; ``positions[s]`` is the state at ``times[s]``."""

    config: SimConfig
    times: np.ndarray
    positions: np.ndarray

    def __len__(self):
        return len(self.times)

    @property
    def snapshots(self) -> Iterator[AgentState]:
        for s, t in enumerate(self.times):
            yield AgentState(float(t), self.positions[s], step=int(round(t / self.config.dt)))

    def at(self, t: float) -> np.ndarray:
        """Positions at the snapshot nearest to ``t``."""
        return self.positions[int(np.argmin(np.abs(self.times - t)))]

    @property
    def final(self) -> AgentState:
        return AgentState(float(self.times[-1]), self.positions[-1], self.config.n_steps)


def kernel_shape(shape: InfluenceShape):
    """Shape as nested tuples so the drift kernel unrolls over pieces."""
    deg = max(len(co) for _, _, co in shape.pieces)
    lows = tuple(float(p[0]) for p in shape.pieces)
    highs = [float(p[1]) for p in shape.pieces]
    highs[-1] = float(np.nextafter(1.0, 2.0))  # last piece is closed at s = 1
    coefs = tuple(tuple(float(c) for c in co) + (0.0,) * (deg - len(co)) for _, _, co in shape.pieces)
    return lows, tuple(highs), coefs


@njit(inline="always")
def _phi(s, lows, highs, coefs):
    v = 0.0
    for p in range(len(lows)):
        c = coefs[p]
        h = c[len(c) - 1]
        for m in range(len(c) - 2, -1, -1):
            h = h * s + c[m]
        v += h if (s >= lows[p]) & (s < highs[p]) else 0.0
    return v


# The pair terms are written to a scratch row by a branch-free loop that
# LLVM vectorizes as is, then summed in four interleaved partial sums
# combined in a fixed order.  No fast-math flags are used, so the result is
# bit-identical on any CPU, whatever its vector width.
@njit(cache=True)
def _drift_kernel(x, lows, highs, coefs, radius, length, periodic, out):
    n = x.shape[0]
    inv_r = 1.0 / radius
    half = 0.5 * length
    buf = np.empty(n)
    nb = n - n % 4
    for i in range(n):
        xi = x[i]
        if periodic:
            # minimal image; positions are in [0, L) so |d| < L
            for j in range(n):
                d = xi - x[j]
                d = d - length if d > half else d
                d = d + length if d < -half else d
                buf[j] = _phi(abs(d) * inv_r, lows, highs, coefs) * d
        else:
            for j in range(n):
                d = xi - x[j]
                buf[j] = _phi(abs(d) * inv_r, lows, highs, coefs) * d
        a0 = 0.0
        a1 = 0.0
        a2 = 0.0
        a3 = 0.0
        for j in range(0, nb, 4):
            a0 += buf[j]
            a1 += buf[j + 1]
            a2 += buf[j + 2]
            a3 += buf[j + 3]
        for j in range(nb, n):
            a0 += buf[j]
        out[i] = -((a0 + a1) + (a2 + a3)) / n


@njit(cache=True)
def _boundary_inplace(x, code, length):
    if code == 1:
        for i in range(x.shape[0]):
            v = x[i]
            while v < 0.0 or v > length:
                if v < 0.0:
                    v = -v
                else:
                    v = 2.0 * length - v
            x[i] = v
    elif code == 2:
        for i in range(x.shape[0]):
            v = x[i] - length * math.floor(x[i] / length)
            if v >= length:
                v = 0.0
            x[i] = v


@njit(cache=True)
def _step_inplace(x, step, lows, highs, coefs, radius, length, code, sigma, dt, seed, d, z):
    _drift_kernel(x, lows, highs, coefs, radius, length, code == 2, d)
    if sigma > 0.0:
        fill_normals(z, seed, step, 0)
        amp = sigma * math.sqrt(dt)
        for i in range(x.shape[0]):
            x[i] = x[i] + d[i] * dt + amp * z[i]
    else:
        for i in range(x.shape[0]):
            x[i] = x[i] + d[i] * dt
    _boundary_inplace(x, code, length)


@njit(cache=True)
def _run_kernel(x, start_step, n_steps, lows, highs, coefs, radius, length, code, sigma, dt, seed, stride, snaps):
    n = x.shape[0]
    d = np.empty(n)
    z = np.empty(n)
    k = 0
    for step in range(start_step, start_step + n_steps):
        _step_inplace(x, step, lows, highs, coefs, radius, length, code, sigma, dt, seed, d, z)
        if (step + 1) % stride == 0:
            k += 1
            snaps[k, :] = x
    return k


def init_uniform(config: SimConfig) -> AgentState:
    """N independent uniform positions on [0, L] from the config seed."""
    u = np.empty(config.n_agents)
    fill_uniforms(u, np.uint64(config.seed), np.uint64(0), np.uint64(PURPOSE_INIT))
    return AgentState(0.0, u * config.length, 0)


def drift(positions, influence: ScaledInfluence, boundary: str = "free", length: float = 0.0) -> np.ndarray:
    """d_i = -(1/N) sum_j phi(|x_i - x_j|)(x_i - x_j); minimal image if periodic."""
    x = np.ascontiguousarray(positions, dtype=float)
    if boundary == "periodic" and not length > 0:
        raise ValueError("periodic drift needs the domain length")
    if boundary == "periodic":
        x = np.mod(x, length)
    out = np.empty_like(x)
    lows, highs, coefs = kernel_shape(influence.shape)
    _drift_kernel(x, lows, highs, coefs, float(influence.radius), float(length or 1.0), boundary == "periodic", out)
    return out


def apply_boundary(positions, boundary: str, length: float) -> np.ndarray:
    x = np.array(positions, dtype=float, copy=True, ndmin=1)
    _boundary_inplace(x, _BOUNDARY_CODE[boundary], float(length))
    return x


def _kernel_args(config: SimConfig):
    lows, highs, coefs = kernel_shape(config.shape)
    return (
        lows, highs, coefs, float(config.radius), float(config.length),
        _BOUNDARY_CODE[config.boundary], float(config.sigma), float(config.dt), np.uint64(config.seed),
    )


def euler_step(state: AgentState, config: SimConfig) -> AgentState:
    """One Euler-Maruyama step; noise keyed by (config.seed, state.step, agent)."""
    x = np.array(state.positions, dtype=float, copy=True)
    d = np.empty_like(x)
    z = np.empty_like(x)
    _step_inplace(x, np.int64(state.step), *_kernel_args(config), d, z)
    return AgentState(state.time + config.dt, x, state.step + 1)


def run(config: SimConfig, initial: Optional[np.ndarray] = None) -> Trajectory:
    """Integrate from uniform initial data (or ``initial``) to ``t_end``.

    Snapshots are taken every ``sample_every`` steps starting at t = 0; the
    final state is appended when ``n_steps`` is not a multiple of the stride.
    """
    x = init_uniform(config).positions if initial is None else np.array(initial, dtype=float, copy=True)
    if x.shape != (config.n_agents,):
        raise ValueError(f"initial positions must have shape ({config.n_agents},)")
    n_steps = config.n_steps
    stride = config.sample_every
    n_snaps = n_steps // stride + 1
    snaps = np.empty((n_snaps, config.n_agents))
    snaps[0] = x
    _run_kernel(x, 0, n_steps, *_kernel_args(config), stride, snaps)
    times = np.round(np.arange(n_snaps) * stride * config.dt, 12)
    if n_steps % stride:
        snaps = np.vstack([snaps, x[None, :]])
        times = np.append(times, round(n_steps * config.dt, 12))
    return Trajectory(config, times, snaps)
