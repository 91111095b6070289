"""Linear stability of the uniform opinion density.

Growth rates of Fourier modes, the selected wavenumber, critical noise,
onset time, predicted cluster geometry and the Gaussian fluctuation
statistics of the linearized dynamics.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np
from scipy import integrate, optimize

from .influence import InfluenceShape, eval_shape, second_moment, shape_integral

__all__ = [
    "AllModesStable",
    "NotUnstable",
    "DomainParams",
    "FrequencyGrid",
    "StabilityReport",
    "QmaxResult",
    "CovarianceValue",
    "psi",
    "psi_sigma",
    "growth_rate",
    "find_qmax",
    "critical_sigma",
    "cluster_onset_time",
    "gamma_curvature",
    "mode_rate_imag",
    "predict_clusters",
    "predicted_mode_variance",
    "predicted_density_covariance",
]


class AllModesStable(Exception):
    """No grid frequency has a positive growth rate (sigma >= sigma_c)."""

    def __init__(self, q_best, value_best):
        super().__init__(f"all modes stable: max psi_sigma = {value_best:.3e} at q = {q_best:.4f}")
        self.q_best = q_best
        self.value_best = value_best


class NotUnstable(Exception):
    """An operation that needs a positive maximal growth rate got none."""


@dataclass(frozen=True)
class DomainParams:
    length: float = 10.0
    radius: float = 1.0
    n_agents: int = 500

    def __post_init__(self):
        if not self.length > 0 or not self.radius > 0:
            raise ValueError("length and radius must be positive")
        if self.n_agents < 1:
            raise ValueError("n_agents must be positive")

    @property
    def density(self) -> float:
        return 1.0 / self.length


@dataclass(frozen=True)
class FrequencyGrid:
    """q_n = 2 pi n R0 / L for n = 1 .. n_max with q_n <= q_cap."""

    entries: np.ndarray
    q_cap: float
    spacing: float

    @classmethod
    def for_domain(cls, dom: DomainParams, q_cap: float = 100.0) -> "FrequencyGrid":
        spacing = 2.0 * math.pi * dom.radius / dom.length
        n_max = int(math.floor(q_cap / spacing + 1e-12))
        if n_max < 1:
            raise ValueError(f"q_cap={q_cap} below the first grid frequency {spacing:.4f}")
        entries = spacing * np.arange(1, n_max + 1)
        return cls(entries=entries, q_cap=float(q_cap), spacing=spacing)

    def __len__(self):
        return len(self.entries)


class QmaxResult(NamedTuple):
    q_max: float
    psi_value: float
    local_maxima: list  # [(q, psi_sigma(q)), ...] by descending value
    q_continuous: Optional[float] = None


class CovarianceValue(NamedTuple):
    value: float
    regime: str  # "continuum" (L^2 > 4|g''|t) or "discrete"


@dataclass
class StabilityReport:
    shape: str
    sigma: float
    length: float
    radius: float
    n_agents: int
    regime: str
    q_max: Optional[float]
    psi_at_max: Optional[float]
    gamma_max: Optional[float]
    local_maxima: list = field(default_factory=list)
    sigma_c: float = 0.0
    t_clu: Optional[float] = None
    k_max: Optional[float] = None
    cluster_spacing: Optional[float] = None
    cluster_count: Optional[float] = None
    cluster_count_int: Optional[int] = None
    m_c: Optional[float] = None
    cluster_width: Optional[float] = None
    consensus_possible: Optional[bool] = None
    gamma_curvature: Optional[float] = None
    phi0_at_zero: float = 1.0
    alpha_imag: Optional[float] = None

    @property
    def unstable(self) -> bool:
        return self.regime == "unstable"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["local_maxima"] = [[float(q), float(v)] for q, v in self.local_maxima]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "StabilityReport":
        d = dict(d)
        d["local_maxima"] = [tuple(x) for x in d.get("local_maxima", [])]
        return cls(**d)


def psi(shape: InfluenceShape, q: float) -> float:
    """psi(q) = 2 q I(q); even in q."""
    return 2.0 * q * shape_integral(shape, q)


def psi_sigma(shape: InfluenceShape, q: float, sigma: float, dom: DomainParams) -> float:
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    return psi(shape, q) - sigma**2 * q**2 / (2.0 * dom.density * dom.radius**3)


def growth_rate(shape: InfluenceShape, k: float, sigma: float, dom: DomainParams) -> float:
    """gamma_k = rho0 R0 psi_sigma(k R0)."""
    return dom.density * dom.radius * psi_sigma(shape, k * dom.radius, sigma, dom)


def _psi_sigma_grid(shape, sigma, dom, qs):
    return np.array([psi_sigma(shape, float(q), sigma, dom) for q in qs])


def find_qmax(
    shape: InfluenceShape,
    sigma: float,
    dom: DomainParams,
    grid: Optional[FrequencyGrid] = None,
    refine: bool = False,
) -> QmaxResult:
    """Grid frequency maximizing psi_sigma; ties go to the smallest q.

    Local maxima are grid points strictly above both neighbours (the left
    neighbour of the first point is q = 0 where psi_sigma vanishes).  With
    ``refine`` a bounded scalar search around the best grid point fills
    ``q_continuous``; reported maximizers always stay on the grid.
    """
    grid = grid or FrequencyGrid.for_domain(dom)
    qs = grid.entries
    if len(qs) == 0:
        raise ValueError("empty frequency grid")
    vals = _psi_sigma_grid(shape, sigma, dom, qs)
    best = int(np.argmax(vals))  # first occurrence = smallest q
    if vals[best] <= 0.0:
        raise AllModesStable(float(qs[best]), float(vals[best]))

    padded = np.concatenate(([0.0], vals))
    maxima = []
    for i in range(len(vals) - 1):
        if vals[i] > padded[i] and vals[i] > vals[i + 1]:
            maxima.append((float(qs[i]), float(vals[i])))
    maxima.sort(key=lambda p: (-p[1], p[0]))

    q_cont = None
    if refine:
        lo = max(qs[best] - grid.spacing, 1e-9)
        hi = qs[best] + grid.spacing
        res = optimize.minimize_scalar(
            lambda q: -psi_sigma(shape, q, sigma, dom), bounds=(lo, hi), method="bounded",
            options={"xatol": 1e-10},
        )
        q_cont = float(res.x)
    return QmaxResult(float(qs[best]), float(vals[best]), maxima, q_cont)


def critical_sigma(shape: InfluenceShape, dom: DomainParams) -> float:
    """sigma_c = sqrt(4 rho0 R0^3 int s^2 phi_0)."""
    return math.sqrt(4.0 * dom.density * dom.radius**3 * second_moment(shape))


def cluster_onset_time(n_agents: int, gamma_max: float) -> float:
    """t_clu = ln N / (2 gamma_max)."""
    if gamma_max <= 0:
        raise NotUnstable(f"gamma_max = {gamma_max} is not positive")
    if n_agents < 2:
        raise ValueError("need at least two agents")
    return math.log(n_agents) / (2.0 * gamma_max)


def gamma_curvature(
    shape: InfluenceShape,
    sigma: float,
    dom: DomainParams,
    k_max: float,
    h: Optional[float] = None,
    psi_fn: Optional[Callable[[float], float]] = None,
) -> float:
    """Central second difference of gamma_k at k_max, step 1e-3 / R0.

    ``psi_fn`` replaces psi_sigma(q), which lets tests feed a synthetic profile.
    """
    h = 1e-3 / dom.radius if h is None else h
    if psi_fn is None:
        def gamma(k):
            return growth_rate(shape, k, sigma, dom)
    else:
        def gamma(k):
            return dom.density * dom.radius * psi_fn(k * dom.radius)
    return (gamma(k_max + h) - 2.0 * gamma(k_max) + gamma(k_max - h)) / h**2


def mode_rate_imag(shape: InfluenceShape, k: float, dom: DomainParams) -> float:
    """Im alpha_k = rho0 k int cos(k y) y phi(|y|) dy over [-R0, R0].

    Zero for any even kernel; evaluated by quadrature so that a table shape
    or a future asymmetric kernel shows up here.
    """
    R = dom.radius

    def f(y):
        return math.cos(k * y) * y * eval_shape(shape, abs(y) / R)

    total = 0.0
    for lo, hi, _ in shape.pieces:
        total += integrate.quad(f, lo * R, hi * R, epsabs=1e-14, limit=200)[0]
        total += integrate.quad(f, -hi * R, -lo * R, epsabs=1e-14, limit=200)[0]
    return dom.density * k * total


def predict_clusters(
    shape: InfluenceShape,
    sigma: float,
    dom: DomainParams,
    grid: Optional[FrequencyGrid] = None,
) -> StabilityReport:
    """Full linear-stability report for one shape, noise level and domain."""
    grid = grid or FrequencyGrid.for_domain(dom)
    sigma_c = critical_sigma(shape, dom)
    phi0 = shape.value_at_zero
    common = dict(
        shape=shape.name, sigma=float(sigma), length=dom.length, radius=dom.radius,
        n_agents=dom.n_agents, sigma_c=sigma_c, phi0_at_zero=phi0,
    )
    try:
        res = find_qmax(shape, sigma, dom, grid)
    except AllModesStable as exc:
        return StabilityReport(
            regime="stable", q_max=exc.q_best, psi_at_max=exc.value_best,
            gamma_max=dom.density * dom.radius * exc.value_best, **common,
        )

    q_max = res.q_max
    k_max = q_max / dom.radius
    gamma_max = dom.density * dom.radius * res.psi_value
    spacing = 2.0 * math.pi * dom.radius / q_max
    count = dom.length / spacing
    m_c = dom.density * spacing
    width = sigma / math.sqrt(m_c * phi0) if phi0 > 0 else math.inf
    return StabilityReport(
        regime="unstable",
        q_max=q_max,
        psi_at_max=res.psi_value,
        gamma_max=gamma_max,
        local_maxima=res.local_maxima,
        t_clu=cluster_onset_time(dom.n_agents, gamma_max) if dom.n_agents >= 2 else None,
        k_max=k_max,
        cluster_spacing=spacing,
        cluster_count=count,
        cluster_count_int=int(round(count)),
        m_c=m_c,
        cluster_width=width,
        consensus_possible=bool(q_max > 2.0 * math.pi),
        gamma_curvature=gamma_curvature(shape, sigma, dom, k_max),
        alpha_imag=mode_rate_imag(shape, k_max, dom),
        **common,
    )


def predicted_mode_variance(k: float, t: float, sigma: float, gamma_k: float, printed: bool = False) -> float:
    """E|rho1_hat(t, k)|^2 for the complex OU mode started with unit variance.

    The exact integral is ``e^{2 g t} + s^2 k^2 (e^{2 g t} - 1) / (2 g)``.
    ``printed=True`` returns ``e^{2 g t} (1 + s^2 k^2 / (2 g))`` instead, the
    large-time form that drops the constant ``-s^2 k^2 / (2 g)``.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    growth = math.exp(2.0 * gamma_k * t)
    noise = (sigma * k) ** 2
    if printed:
        return growth * (1.0 + noise / (2.0 * gamma_k))
    if abs(gamma_k * t) < 1e-8:
        # (e^{2gt} - 1) / (2g) -> t (1 + g t)
        return growth + noise * t * (1.0 + gamma_k * t)
    return growth + noise * math.expm1(2.0 * gamma_k * t) / (2.0 * gamma_k)


def predicted_density_covariance(t: float, dx: float, dom: DomainParams, report: StabilityReport) -> CovarianceValue:
    """Large-time covariance E[rho1(t, x) rho1(t, x + dx)] around k_max."""
    if t <= 0:
        raise ValueError("t must be positive")
    if not report.unstable:
        raise NotUnstable("covariance envelope needs an unstable report")
    L = dom.length
    curv = abs(report.gamma_curvature)
    carrier = math.exp(2.0 * report.gamma_max * t) * math.cos(report.k_max * dx)
    if L**2 > 4.0 * curv * t:
        envelope = math.exp(-(dx**2) / (4.0 * curv * t)) / math.sqrt(math.pi * curv * t)
        return CovarianceValue(carrier * envelope / L, "continuum")
    return CovarianceValue(2.0 * carrier / L**2, "discrete")
