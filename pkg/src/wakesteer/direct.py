"""DIRECT (DIviding RECTangles) global optimisation on the unit hypercube.

Canonical Jones-style variant: rectangles are trisected along their longest
sides, and each iteration divides every *potentially optimal* rectangle,
i.e. those that minimise ``f(c) - K * d`` for some rate constant ``K > 0``
and improve on ``f_min - eps * |f_min|`` by doing so.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np


class NonFiniteObjectiveError(FloatingPointError):
    def __init__(self, x, value):
        self.x = np.array(x)
        self.value = value
        super().__init__(f"objective returned {value!r} at x={self.x.tolist()}")


@dataclass(frozen=True)
class DirectConfig:
    max_evaluations: int = 150
    epsilon: float = 1e-4
    min_side: float = 3.0**-12
    max_iterations: int | None = None

    def __post_init__(self):
        if self.max_evaluations < 1:
            raise ValueError("max_evaluations must be >= 1")
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")


@dataclass
class Rectangle:
    center: np.ndarray
    levels: np.ndarray  # side along dim d is 3**-levels[d]
    f_value: float
    order: int
    measure: float = field(init=False)
    key: tuple = field(init=False, repr=False)

    def __post_init__(self):
        self.refresh()

    def refresh(self) -> None:
        """Recompute cached size data after ``levels`` changed."""
        self.key = tuple(sorted(self.levels.tolist()))
        self.measure = 0.5 * math.sqrt(sum(9.0 ** -lv for lv in self.key))

    @property
    def side_lengths(self) -> np.ndarray:
        return 3.0 ** -self.levels.astype(float)

    @property
    def volume(self) -> float:
        return float(np.prod(self.side_lengths))


@dataclass
class DirectResult:
    x: np.ndarray
    fun: float
    nfev: int
    nit: int
    status: str
    history: list[tuple[np.ndarray, float]] = field(repr=False, default_factory=list)


def _potentially_optimal(rects: list[Rectangle], f_min: float, eps: float,
                         min_side: float) -> list[Rectangle]:
    # one representative per measure class: lowest f, then earliest insertion
    classes: dict[tuple, Rectangle] = {}
    min_level = -math.log(min_side, 3) - 1e-9  # largest side <= min_side at this level
    for r in rects:
        if r.key[0] >= min_level:
            continue
        best = classes.get(r.key)
        if best is None or r.f_value < best.f_value:
            classes[r.key] = r
    cands = sorted(classes.values(), key=lambda r: r.measure)
    if not cands:
        return []
    d = np.array([r.measure for r in cands])
    f = np.array([r.f_value for r in cands])
    anchor = f_min - eps * abs(f_min)
    scale = max(1.0, abs(f_min))
    chosen = []
    for j in range(len(cands)):
        lo = (f[j] - anchor) / d[j]
        if j:
            lo = max(lo, float(np.max((f[j] - f[:j]) / (d[j] - d[:j]))))
        hi = float(np.min((f[j + 1:] - f[j]) / (d[j + 1:] - d[j]))) if j + 1 < len(cands) else math.inf
        if hi > 0 and lo <= hi + 1e-12 * scale:
            chosen.append(cands[j])
    # larger rectangles first, ties by insertion order
    chosen.sort(key=lambda r: (-r.measure, r.order))
    return chosen


def minimize(objective: Callable[[np.ndarray], float], n: int,
             cfg: DirectConfig = DirectConfig(),
             callback: Callable[[list[Rectangle], DirectResult], None] | None = None
             ) -> DirectResult:
    """Minimise ``objective`` over ``[0, 1]**n``.

    Terminates when the evaluation budget cannot cover the next division,
    when no rectangle larger than ``min_side`` remains selectable, or after
    ``max_iterations``. ``callback(rectangles, partial_result)`` runs after
    every iteration.
    """
    if n < 1:
        raise ValueError("dimension must be >= 1")
    history: list[tuple[np.ndarray, float]] = []

    def evaluate(x):
        val = float(objective(x.copy()))
        if not math.isfinite(val):
            raise NonFiniteObjectiveError(x, val)
        history.append((x.copy(), val))
        return val

    counter = 0
    c0 = np.full(n, 0.5)
    rects = [Rectangle(c0, np.zeros(n, dtype=int), evaluate(c0), counter)]
    best = rects[0]
    nit = 0
    status = "budget"

    def result():
        return DirectResult(x=best.center.copy(), fun=best.f_value, nfev=len(history),
                            nit=nit, status=status, history=history)

    while True:
        if cfg.max_iterations is not None and nit >= cfg.max_iterations:
            status = "max_iterations"
            break
        selected = _potentially_optimal(rects, best.f_value, cfg.epsilon, cfg.min_side)
        if not selected:
            status = "min_side"
            break
        exhausted = False
        for rect in selected:
            long_dims = np.flatnonzero(rect.levels == rect.levels.min())
            if len(history) + 2 * len(long_dims) > cfg.max_evaluations:
                exhausted = True
                break
            delta = 3.0 ** -(rect.levels.min() + 1.0)
            samples = []
            for dim in long_dims:
                e = np.zeros(n)
                e[dim] = delta
                cp, cm = rect.center + e, rect.center - e
                fp, fm = evaluate(cp), evaluate(cm)
                samples.append((min(fp, fm), int(dim), cp, fp, cm, fm))
            samples.sort(key=lambda s: (s[0], s[1]))
            levels = rect.levels.copy()
            for _, dim, cp, fp, cm, fm in samples:
                levels[dim] += 1
                for c, fv in ((cp, fp), (cm, fm)):
                    counter += 1
                    child = Rectangle(c, levels.copy(), fv, counter)
                    rects.append(child)
                    if fv < best.f_value:
                        best = child
            rect.levels = levels
            rect.refresh()
        nit += 1
        if callback is not None:
            callback(rects, result())
        if exhausted:
            status = "budget"
            break
    return result()


def maximize(objective: Callable[[np.ndarray], float], n: int,
             cfg: DirectConfig = DirectConfig(), callback=None) -> DirectResult:
    res = minimize(lambda x: -objective(x), n, cfg, callback)
    res.fun = -res.fun
    res.history = [(x, -v) for x, v in res.history]
    return res


def _scaled(f, lo, hi):
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    return lambda x: f(lo + np.asarray(x, float) * (hi - lo))


def _branin(z):
    x, y = z
    return ((y - 5.1 / (4 * math.pi**2) * x * x + 5 / math.pi * x - 6) ** 2
            + 10 * (1 - 1 / (8 * math.pi)) * math.cos(x) + 10)


def _camel(z):
    x, y = z
    return (4 - 2.1 * x * x + x**4 / 3) * x * x + x * y + (-4 + 4 * y * y) * y * y


def _rosenbrock(z):
    x, y = z
    return 100 * (y - x * x) ** 2 + (1 - x) ** 2


@dataclass(frozen=True)
class OptimizationProblem:
    name: str
    f: Callable[[np.ndarray], float]
    n: int
    f_star: float


# Standard global-optimisation problems rescaled to the unit box.
TEST_FUNCTIONS = (
    OptimizationProblem("sphere", lambda x: float(np.sum((np.asarray(x) - 0.5) ** 2)), 2, 0.0),
    OptimizationProblem("branin", _scaled(_branin, [-5, 0], [10, 15]), 2, 0.39788735772973816),
    OptimizationProblem("six_hump_camel", _scaled(_camel, [-3, -2], [3, 2]), 2, -1.0316284534898774),
    OptimizationProblem("rosenbrock", _scaled(_rosenbrock, [-2, -2], [2, 2]), 2, 0.0),
)


def run_corpus(max_evaluations: int = 500) -> list[tuple[str, float, int, float]]:
    """(name, best value, evaluations, known optimum) for each test function."""
    cfg = DirectConfig(max_evaluations=max_evaluations)
    rows = []
    for t in TEST_FUNCTIONS:
        res = minimize(t.f, t.n, cfg)
        rows.append((t.name, res.fun, res.nfev, t.f_star))
    return rows
