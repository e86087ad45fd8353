"""Scale/speed machinery and invariant analysis of a one-dimensional diffusion.

A diffusion on the real line is specified by its generator coefficients:
``a(x) > 0`` (diffusion coefficient) and ``b(x)`` (drift).  With
``B(x) = int_0^x b/a dt`` anchored at the reference point, the two integrand
building blocks are

* the scale density ``s(x) = exp(-2 B(x))`` and
* the speed density ``m(x) = exp(2 B(x)) / a(x)``.

The process is positive recurrent iff the speed density is integrable; the
invariant probability density is then ``mu = c0 * m``.  Whether the process
can come in from +/-infinity in finite time (an *entrance* boundary) is again
the convergence question of an explicit improper integral, evaluated here
with the three-state verdict machinery of :mod:`kemeny1d.quad`.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import _backend
from .exprlang import (
    Bin,
    Call,
    Expr,
    Num,
    breakpoints as expr_breakpoints,
    compile_program,
    differentiate,
    is_constant,
    parse,
)
from .quad import (
    NEG_INF,
    IntegralOutcome,
    PanelChain,
    QuadConfig,
    TailCache,
    Verdict,
    adaptive_linear,
    combine_outcomes,
    integrate_improper,
    _GK_NODES,
    _GK_WEIGHTS,
    _G7_WEIGHTS,
)

__all__ = [
    "CoefficientDomainError",
    "NotPositiveRecurrentError",
    "DiffusionSpec",
    "ScaleSpeed",
    "InvariantDensity",
    "BoundaryClassification",
    "check_positive_recurrence",
    "invariant_density",
    "classify_boundary",
    "classify",
    "drift_from_density",
    "tail_condition_constant_a",
]


class CoefficientDomainError(ValueError):
    """The diffusion coefficient failed positivity at an evaluated abscissa."""

    def __init__(self, x: float, value: float):
        super().__init__(f"a({x!r}) = {value!r} is not positive")
        self.x = x


class NotPositiveRecurrentError(RuntimeError):
    """An operation requiring positive recurrence was applied without it."""

    def __init__(self, outcome: IntegralOutcome):
        super().__init__(
            f"speed density integral is {outcome.status.value}; "
            "the diffusion has no invariant probability density"
        )
        self.outcome = outcome


@dataclass(frozen=True)
class DiffusionSpec:
    """Coefficient pair (a, b); all integral anchors sit at the reference point."""

    a: Expr
    b: Expr
    reference_point: float = 0.0

    @staticmethod
    def from_strings(a: str, b: str) -> "DiffusionSpec":
        return DiffusionSpec(parse(a), parse(b))

    @property
    def breakpoints(self) -> tuple:
        return tuple(sorted(set(expr_breakpoints(self.a)) | set(expr_breakpoints(self.b))))


# ---------------------------------------------------------------------------
# Antiderivative cache for B(x) = int_ref^x b/a


class _DriftIntegral:
    """Signed cumulative integral of b/a on a refinable knot grid.

    Queries are one cached prefix value plus a single fresh Gauss-Kronrod
    panel from the nearest knot; panels failing their embedded error check
    trigger local knot refinement.  State swaps are atomic under a lock.
    """

    def __init__(self, spec: DiffusionSpec, cfg: QuadConfig):
        self.cfg = cfg
        self._a_prog = compile_program(spec.a)
        self._b_prog = compile_program(spec.b)
        self.anchor = float(spec.reference_point)
        knots = sorted({self.anchor, *cfg.breakpoints})
        values = [None] * len(knots)
        i0 = knots.index(self.anchor)
        values[i0] = 0.0
        for i in range(i0 + 1, len(knots)):
            gap, _ = self._gap(knots[i - 1], knots[i])
            values[i] = values[i - 1] + gap
        for i in range(i0 - 1, -1, -1):
            gap, _ = self._gap(knots[i], knots[i + 1])
            values[i] = values[i + 1] - gap
        self._lock = threading.Lock()
        self._state = (np.asarray(knots, float), np.asarray(values, float))

    def a_vec(self, xs: np.ndarray) -> np.ndarray:
        xs = np.asarray(xs, dtype=np.float64)
        a = _backend.eval_program(self._a_prog.code, self._a_prog.consts, xs)
        bad = ~(a > 0)
        if bad.any():
            j = int(np.flatnonzero(bad.ravel())[0])
            raise CoefficientDomainError(float(xs.ravel()[j]), float(a.ravel()[j]))
        return a

    def ratio_vec(self, xs: np.ndarray) -> np.ndarray:
        a = self.a_vec(xs)
        b = _backend.eval_program(self._b_prog.code, self._b_prog.consts, np.asarray(xs, dtype=np.float64))
        return b / a

    def _gap(self, lo: float, hi: float):
        return adaptive_linear(
            self.ratio_vec, lo, hi, 1e-14, 1e-14, 2000, self.cfg.breakpoints
        )

    def _spacing(self, x: float) -> float:
        return max(0.5, abs(x) / 32.0)

    def _ensure(self, lo: float, hi: float):
        with self._lock:
            knots, values = self._state
            new_right, new_left = [], []
            x = float(knots[-1])
            while x < hi:
                x = x + self._spacing(x)
                new_right.append(x)
            x = float(knots[0])
            while x > lo:
                x = x - self._spacing(x)
                new_left.append(x)
            if not new_right and not new_left:
                return
            knots_l = list(knots)
            values_l = list(values)
            for nxt in new_right:
                gap, _ = self._gap(knots_l[-1], nxt)
                knots_l.append(nxt)
                values_l.append(values_l[-1] + gap)
            for nxt in new_left:
                gap, _ = self._gap(nxt, knots_l[0])
                v = values_l[0] - gap
                knots_l.insert(0, nxt)
                values_l.insert(0, v)
            self._state = (np.asarray(knots_l), np.asarray(values_l))

    def _insert(self, points):
        with self._lock:
            knots, values = self._state
            knots_l = list(knots)
            values_l = list(values)
            for p in sorted(set(points)):
                i = int(np.searchsorted(knots_l, p))
                if i > 0 and knots_l[i - 1] == p:
                    continue
                if i == 0 or i == len(knots_l):
                    continue  # outside coverage; _ensure handles that
                gap, _ = self._gap(knots_l[i - 1], p)
                knots_l.insert(i, p)
                values_l.insert(i, values_l[i - 1] + gap)
            self._state = (np.asarray(knots_l), np.asarray(values_l))

    def value_vec(self, xs) -> np.ndarray:
        xs = np.ascontiguousarray(xs, dtype=np.float64).ravel()
        if xs.size == 0:
            return xs.copy()
        self._ensure(float(xs.min()), float(xs.max()))
        for _ in range(24):
            knots, values = self._state
            pos = np.searchsorted(knots, xs)
            left = np.clip(pos - 1, 0, len(knots) - 1)
            right = np.clip(pos, 0, len(knots) - 1)
            use_left = np.abs(xs - knots[left]) <= np.abs(knots[right] - xs)
            j = np.where(use_left, left, right)
            base_x = knots[j]
            base_v = values[j]
            half = 0.5 * (xs - base_x)
            mid = 0.5 * (xs + base_x)
            nodes = mid[:, None] + half[:, None] * _GK_NODES[None, :]
            fv = self.ratio_vec(nodes.ravel()).reshape(len(xs), 15)
            kv = (fv @ _GK_WEIGHTS) * half
            gv = (fv[:, 1::2] @ _G7_WEIGHTS) * half
            err = np.abs(kv - gv)
            out = base_v + kv
            bad = err > np.maximum(1e-13, 1e-14 * np.abs(out))
            if not bad.any():
                return out
            self._insert(0.5 * (base_x[bad] + xs[bad]))
        # stubborn panels: finish them one by one with the adaptive integrator
        out = np.empty_like(xs)
        knots, values = self._state
        for i, x in enumerate(xs):
            pos = int(np.searchsorted(knots, x))
            left = min(max(pos - 1, 0), len(knots) - 1)
            right = min(pos, len(knots) - 1)
            jj = left if abs(x - knots[left]) <= abs(knots[right] - x) else right
            lo, hi = sorted((float(knots[jj]), float(x)))
            if lo == hi:
                out[i] = values[jj]
                continue
            gap, _ = self._gap(lo, hi)
            out[i] = values[jj] + (gap if x >= knots[jj] else -gap)
        return out

    def value(self, x: float) -> float:
        return float(self.value_vec(np.asarray([x]))[0])


class ScaleSpeed:
    """Cached drift antiderivative with the log scale / log speed evaluators."""

    def __init__(self, spec: DiffusionSpec, cfg: QuadConfig):
        self.spec = spec
        self.cfg = cfg.with_breakpoints(spec.breakpoints)
        self._B = _DriftIntegral(spec, self.cfg)

    def drift_integral_vec(self, xs) -> np.ndarray:
        return self._B.value_vec(xs)

    def drift_integral(self, x: float) -> float:
        return self._B.value(float(x))

    def log_scale_vec(self, xs) -> np.ndarray:
        return -2.0 * self._B.value_vec(xs)

    def log_speed_vec(self, xs) -> np.ndarray:
        xs = np.ascontiguousarray(xs, dtype=np.float64).ravel()
        a = self._B.a_vec(xs)
        return 2.0 * self._B.value_vec(xs) - np.log(a)

    def log_scale(self, x: float) -> float:
        return float(self.log_scale_vec(np.asarray([x]))[0])

    def log_speed(self, x: float) -> float:
        return float(self.log_speed_vec(np.asarray([x]))[0])

    def a_vec(self, xs) -> np.ndarray:
        return self._B.a_vec(np.ascontiguousarray(xs, dtype=np.float64).ravel())


# ---------------------------------------------------------------------------
# Analysis context (lazy caches shared by all operations on one spec/config)


class DiffusionAnalysis:
    def __init__(self, spec: DiffusionSpec, cfg: QuadConfig):
        self.spec = spec
        self.cfg = cfg.with_breakpoints(spec.breakpoints)
        self.scale_speed = ScaleSpeed(spec, cfg)
        self._lock = threading.Lock()
        self._cache: dict = {}

    def _get(self, key, builder):
        # built outside the lock: builders may recurse into other cached
        # properties; a rare duplicate build is deterministic and harmless
        if key in self._cache:
            return self._cache[key]
        value = builder()
        with self._lock:
            return self._cache.setdefault(key, value)

    # -- speed measure -------------------------------------------------------

    def _log_m(self, xs):
        return self.scale_speed.log_speed_vec(xs)

    def _log_m_signed(self, xs):
        la = self._log_m(xs)
        return la, np.ones_like(la)

    @property
    def recurrence_right(self) -> IntegralOutcome:
        return self._get(
            "rec_right",
            lambda: integrate_improper(
                self._log_m_signed, self.spec.reference_point, math.inf, self.cfg
            ),
        )

    @property
    def recurrence_left(self) -> IntegralOutcome:
        return self._get(
            "rec_left",
            lambda: integrate_improper(
                self._log_m_signed, -math.inf, self.spec.reference_point, self.cfg
            ),
        )

    @property
    def positive_recurrence(self) -> IntegralOutcome:
        return self._get(
            "rec",
            lambda: combine_outcomes(self.recurrence_left, self.recurrence_right),
        )

    @property
    def speed_chain(self) -> PanelChain:
        return self._get(
            "speed_chain",
            lambda: PanelChain(self._log_m, self.cfg, anchor=self.spec.reference_point),
        )

    @property
    def mass_above(self) -> TailCache:
        return self._get(
            "mass_above", lambda: TailCache(self.speed_chain, self.recurrence_right, +1)
        )

    @property
    def mass_below(self) -> TailCache:
        return self._get(
            "mass_below", lambda: TailCache(self.speed_chain, self.recurrence_left, -1)
        )

    @property
    def scale_chain(self) -> PanelChain:
        return self._get(
            "scale_chain",
            lambda: PanelChain(
                self.scale_speed.log_scale_vec, self.cfg, anchor=self.spec.reference_point
            ),
        )

    @property
    def density(self) -> "InvariantDensity":
        return self._get("density", lambda: InvariantDensity(self))


@lru_cache(maxsize=32)
def analysis(spec: DiffusionSpec, cfg: QuadConfig) -> DiffusionAnalysis:
    return DiffusionAnalysis(spec, cfg)


# ---------------------------------------------------------------------------
# Invariant density


class InvariantDensity:
    """Normalized invariant probability density mu = c0 * speed density."""

    def __init__(self, ana: DiffusionAnalysis):
        rec = ana.positive_recurrence
        if rec.status is not Verdict.CONVERGED:
            raise NotPositiveRecurrentError(rec)
        self._ana = ana
        self.spec = ana.spec
        self.outcome = rec
        self.log_c0 = -rec.log_abs

    # log-space evaluators ----------------------------------------------------

    def log_mu_vec(self, xs) -> np.ndarray:
        return self.log_c0 + self._ana.scale_speed.log_speed_vec(xs)

    def log_mu(self, x: float) -> float:
        return float(self.log_mu_vec(np.asarray([x]))[0])

    def mu(self, x: float) -> float:
        return math.exp(self.log_mu(x))

    def log_tail_above(self, z: float) -> float:
        return self.log_c0 + self._ana.mass_above.log_from(z)

    def log_tail_below(self, z: float) -> float:
        return self.log_c0 + self._ana.mass_below.log_from(z)

    def tail_mass_above(self, z: float) -> float:
        return min(1.0, math.exp(self.log_tail_above(z)))

    def tail_mass_below(self, z: float) -> float:
        return min(1.0, math.exp(self.log_tail_below(z)))

    def cdf(self, x: float) -> float:
        return self.tail_mass_below(x)

    def cdf_vec(self, xs) -> np.ndarray:
        out = self.log_c0 + self._ana.mass_below.log_from_vec(xs)
        return np.minimum(1.0, np.exp(out))


# ---------------------------------------------------------------------------
# Operations


def check_positive_recurrence(spec: DiffusionSpec, cfg: QuadConfig) -> IntegralOutcome:
    """Verdict of the speed-density integral over the whole line.

    Converged means the diffusion is positive recurrent (an invariant
    probability density exists); Divergent means it is not; Inconclusive means
    the truncation schedule could not decide.
    """
    return analysis(spec, cfg).positive_recurrence


def invariant_density(spec: DiffusionSpec, cfg: QuadConfig) -> InvariantDensity:
    """Build the normalized invariant density; requires positive recurrence."""
    return analysis(spec, cfg).density


def classify_boundary(spec: DiffusionSpec, side: str, cfg: QuadConfig) -> IntegralOutcome:
    """Entrance-boundary criterion at +inf (side='plus') or -inf (side='minus').

    Converged = entrance boundary (the diffusion comes in from infinity in
    finite time), Divergent = not an entrance boundary.  Requires positive
    recurrence.
    """
    ana = analysis(spec, cfg)
    rec = ana.positive_recurrence
    if rec.status is not Verdict.CONVERGED:
        raise NotPositiveRecurrentError(rec)
    ref = spec.reference_point
    scale_chain = ana.scale_chain
    if side == "plus":

        def integrand(xs):
            la = ana.scale_speed.log_speed_vec(xs)
            inner = np.array([scale_chain.log_between(ref, float(x)) for x in np.ravel(xs)])
            la = la + inner
            return la, np.ones_like(la)

        return integrate_improper(integrand, ref, math.inf, ana.cfg)
    if side == "minus":

        def integrand(xs):
            la = ana.scale_speed.log_speed_vec(xs)
            inner = np.array([scale_chain.log_between(float(x), ref) for x in np.ravel(xs)])
            la = la + inner
            return la, np.ones_like(la)

        return integrate_improper(integrand, -math.inf, ref, ana.cfg)
    raise ValueError("side must be 'plus' or 'minus'")


@dataclass(frozen=True)
class BoundaryClassification:
    """Bundle of the three boundary verdicts (entrance sides are None when
    positive recurrence fails, since the criteria presuppose it)."""

    positive_recurrent: IntegralOutcome
    entrance_plus: IntegralOutcome | None
    entrance_minus: IntegralOutcome | None


def classify(spec: DiffusionSpec, cfg: QuadConfig) -> BoundaryClassification:
    rec = check_positive_recurrence(spec, cfg)
    if rec.status is not Verdict.CONVERGED:
        return BoundaryClassification(rec, None, None)
    return BoundaryClassification(
        rec,
        classify_boundary(spec, "plus", cfg),
        classify_boundary(spec, "minus", cfg),
    )


def _log_derivative(mu: Expr) -> Expr:
    """mu'/mu, simplified to g' when mu has the form exp(g) (or c*exp(g)) so
    that tail evaluations do not hit 0/0 underflow."""
    if isinstance(mu, Call) and mu.name == "exp":
        return differentiate(mu.args[0])
    if isinstance(mu, Bin) and mu.op == "*":
        left, right = mu.left, mu.right
        if isinstance(left, Num) and isinstance(right, Call) and right.name == "exp":
            return differentiate(right.args[0])
        if isinstance(right, Num) and isinstance(left, Call) and left.name == "exp":
            return differentiate(left.args[0])
    return Bin("/", differentiate(mu), mu)


def drift_from_density(mu: Expr, a: Expr) -> Expr:
    """Drift making mu (up to normalization) the invariant density for a.

    b = (a * mu'/mu + a') / 2.  mu must be strictly positive; for densities
    containing abs/sign the result is valid piecewise away from the listed
    breakpoints.
    """
    ratio = _log_derivative(mu)
    da = differentiate(a)
    inner = Bin("*", a, ratio)
    if not (isinstance(da, Num) and da.value == 0.0):
        inner = Bin("+", inner, da)
    return Bin("*", Num(0.5), inner)


def tail_condition_constant_a(
    density: InvariantDensity, cfg: QuadConfig
) -> IntegralOutcome:
    """Verdict of the constant-coefficient tail criterion
    int mu([y, inf)) / mu(y) dy over the whole line.

    Only valid when the diffusion coefficient is constant; raises ValueError
    otherwise.
    """
    spec = density.spec
    if not is_constant(spec.a):
        raise ValueError("tail condition requires a constant diffusion coefficient")
    ana = density._ana

    def integrand(ys):
        ys = np.ravel(ys)
        la = ana.mass_above.log_from_vec(ys) - ana.scale_speed.log_speed_vec(ys)
        return la, np.ones_like(la)

    return integrate_improper(integrand, -math.inf, math.inf, ana.cfg)
