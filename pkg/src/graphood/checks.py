"""Randomized self-checks run by ``graphood selfcheck`` and the test-suite.

Each suite returns a :class:`CheckReport`; ``ok`` is False as soon as one
instance misses its tolerance, and ``worst`` holds the largest observed error.
"""

from __future__ import annotations

import dataclasses
import math
import time

import numpy as np

from . import tensor as T
from .energy import negative_energy, propagate, ScoreVector
from .losses import bound_loss, bound_loss_grad, uniform_loss, uniform_loss_grad
from .metrics import (
    aupr,
    aupr_bruteforce,
    auroc,
    auroc_bruteforce,
    fpr_at_tpr,
    fpr_at_tpr_bruteforce,
)


@dataclasses.dataclass
class CheckReport:
    name: str
    ok: bool
    instances: int
    worst: float
    seconds: float
    detail: str = ""

    def line(self) -> str:
        flag = "ok" if self.ok else "FAILED"
        return f"{self.name:<28s} {flag:<6s} n={self.instances:<6d} worst={self.worst:.3g} ({self.seconds:.2f}s) {self.detail}"


def _rel(a: np.ndarray, b: np.ndarray) -> float:
    """Relative error of ``a`` against ``b``, floored so exact zeros compare cleanly."""
    num = np.linalg.norm(a - b)
    den = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(num / den)


def _tape_grad(fn, z: np.ndarray) -> np.ndarray:
    tape = T.Tape()
    leaf = tape.leaf(z)
    tape.backward(fn(leaf))
    return leaf.grad


def _frozen_bound(idx: np.ndarray, z0: np.ndarray):
    """Plain-numpy bound loss with its denominator fixed at ``z0``."""
    m0 = np.linalg.norm(z0[idx], axis=1).mean()

    def f(z):
        N = np.linalg.norm(z[idx], axis=1)
        return np.mean((N - N.mean()) ** 2) / m0

    return f


def _frozen_uniform(groups, z0: np.ndarray):
    scales = [abs(z0[g].sum(axis=1).mean()) for g in groups]

    def f(z):
        total = 0.0
        for g, m0 in zip(groups, scales):
            S = z[g].sum(axis=1)
            total += np.mean((S - S.mean()) ** 2) / m0
        return total

    return f


def _central_diff(f, z: np.ndarray, h: float = 1e-6) -> np.ndarray:
    g = np.zeros_like(z)
    for i in np.ndindex(z.shape):
        zp, zm = z.copy(), z.copy()
        zp[i] += h
        zm[i] -= h
        g[i] = (f(zp) - f(zm)) / (2 * h)
    return g


def random_loss_instance(rng: np.random.Generator):
    """Logits with row norms and sums well away from zero, plus ID/OOD groups."""
    n = int(rng.integers(5, 51))
    C = int(rng.integers(2, 11))
    z = rng.normal(1.0, 1.0, size=(n, C))
    perm = rng.permutation(n)
    cut = int(rng.integers(2, n - 1))
    return z, np.sort(perm[:cut]), np.sort(perm[cut:])


def gradient_check(instances: int = 100, seed: int = 0, tol: float = 1e-5) -> CheckReport:
    """Closed-form, tape and finite-difference gradients of both variance losses.

    The detached denominators are held at their value at the base point, which
    is what the tape and the closed form differentiate.
    """
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(instances):
        z, id_idx, ood_idx = random_loss_instance(rng)
        cases = [
            (
                lambda t: bound_loss(t, id_idx),
                bound_loss_grad(z, id_idx),
                _frozen_bound(id_idx, z),
            ),
            (
                lambda t: uniform_loss(t, id_idx, ood_idx),
                uniform_loss_grad(z, id_idx, ood_idx),
                _frozen_uniform([id_idx, ood_idx], z),
            ),
        ]
        for fn, closed, frozen in cases:
            tape = _tape_grad(fn, z)
            fd = _central_diff(frozen, z)
            worst = max(worst, _rel(closed, tape), _rel(closed, fd), _rel(tape, fd))
    return CheckReport("gradients", worst < tol, instances, worst, time.perf_counter() - t0)


def shift_invariance_check(instances: int = 1000, seed: int = 1) -> CheckReport:
    """Softmax ignores a constant row shift; the energy score moves by exactly that shift."""
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    worst_p, worst_e = 0.0, 0.0
    for _ in range(instances):
        C = int(rng.integers(2, 11))
        z = rng.normal(0.0, 3.0, size=(1, C))
        for s in (-100.0, -1.0, 0.0, 1.0, 100.0):
            worst_p = max(worst_p, float(np.abs(T.softmax(z + s) - T.softmax(z)).max()))
            d = negative_energy(z + s).values[0] - negative_energy(z).values[0]
            worst_e = max(worst_e, abs(d - s))
    worst = max(worst_p, worst_e)
    detail = f"softmax {worst_p:.2g} energy {worst_e:.2g}"
    return CheckReport("shift invariance", worst < 1e-12, instances, worst, time.perf_counter() - t0, detail)


def norm_bound_check(rows: int = 100_000, seed: int = 2) -> CheckReport:
    """Scores of rows rescaled to 2-norm M against ``log C +- M / sqrt(C)``.

    The lower end is a true bound (Jensen plus Cauchy-Schwarz). The upper end
    is only a stationary value on the sphere: a one-hot row scores about M,
    above ``log C + M / sqrt(C)``. Violations are counted and reported; the
    sound ceiling ``log C + M`` is checked as well. The constant rows
    ``+-(M / sqrt(C)) 1`` must hit the two stated values.
    """
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    below = above = over_ceiling = 0
    worst_attain = 0.0
    done = 0
    for C in range(2, 12):
        k = rows // 10
        M = rng.uniform(0.1, 20.0, size=k)
        z = rng.standard_normal((k, C))
        z *= (M / np.linalg.norm(z, axis=1))[:, None]
        s = negative_energy(z).values
        root = math.sqrt(C)
        below += int(np.sum(s < math.log(C) - M / root - 1e-12))
        above += int(np.sum(s > math.log(C) + M / root + 1e-12))
        over_ceiling += int(np.sum(s > math.log(C) + M + 1e-12))
        for m in (0.5, 3.0, 17.0):
            top = negative_energy(np.full((1, C), m / root)).values[0]
            bot = negative_energy(np.full((1, C), -m / root)).values[0]
            worst_attain = max(
                worst_attain,
                abs(top - (math.log(C) + m / root)),
                abs(bot - (math.log(C) - m / root)),
            )
        done += k
    ok = below == 0 and above == 0 and over_ceiling == 0 and worst_attain < 1e-10
    detail = f"below-lower {below} above-upper {above}/{done} above-logC+M {over_ceiling}"
    return CheckReport("norm bounds", ok, done, worst_attain, time.perf_counter() - t0, detail)


def random_graph(rng: np.random.Generator, n: int, p: float) -> T.SparseMatrix:
    iu, ju = np.triu_indices(n, k=1)
    keep = rng.random(iu.size) < p
    r, c = iu[keep], ju[keep]
    return T.SparseMatrix.from_coo(n, np.r_[r, c], np.r_[c, r])


def propagation_check(instances: int = 1000, seed: int = 3) -> CheckReport:
    """Range bounds, neighbour-mean monotonicity, eta=1 identity and hop composition."""
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    failures = []
    worst = 0.0
    for i in range(instances):
        n = int(rng.integers(2, 40))
        A = random_graph(rng, n, float(rng.uniform(0.0, 0.5)))
        s = ScoreVector(rng.normal(0.0, 5.0, size=n))
        eta = float(rng.uniform(0.0, 0.999))
        K = int(rng.integers(1, 5))

        out = propagate(s, A, eta, K).values
        if out.min() < s.values.min() - 1e-12 or out.max() > s.values.max() + 1e-12:
            failures.append(f"range#{i}")

        one = propagate(s, A, eta, 1).values
        deg = A.row_sums()
        has = deg > 0
        m = np.zeros(n)
        m[has] = A.dot(s.values[:, None])[has, 0] / deg[has]
        up = has & (m > s.values)
        down = has & (m < s.values)
        if np.any(one[up] <= s.values[up]) or np.any(one[down] >= s.values[down]):
            failures.append(f"monotone#{i}")

        worst = max(worst, float(np.abs(propagate(s, A, 1.0, K).values - s.values).max()))
        cur = s
        for _ in range(K):
            cur = propagate(cur, A, eta, 1)
        worst = max(worst, float(np.abs(cur.values - out).max()))
    ok = not failures and worst < 1e-12
    return CheckReport("propagation", ok, instances, worst, time.perf_counter() - t0, " ".join(failures[:5]))


def random_score_pair(rng: np.random.Generator):
    """ID and OOD scores drawn from a small integer grid so ties are common."""
    a = rng.integers(0, 8, size=int(rng.integers(1, 30))).astype(np.float64)
    b = rng.integers(0, 8, size=int(rng.integers(1, 30))).astype(np.float64)
    if rng.random() < 0.5:
        a += rng.normal(0.0, 1e-3, size=a.size)
    return a, b


def metric_oracle_check(instances: int = 100, seed: int = 4) -> CheckReport:
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(instances):
        a, b = random_score_pair(rng)
        worst = max(
            worst,
            abs(auroc(a, b) - auroc_bruteforce(a, b)),
            abs(aupr(a, b) - aupr_bruteforce(a, b)),
            abs(fpr_at_tpr(a, b) - fpr_at_tpr_bruteforce(a, b)),
        )
    return CheckReport("metric oracles", worst < 1e-12, instances, worst, time.perf_counter() - t0)


SUITES = {
    "gradients": gradient_check,
    "shift": shift_invariance_check,
    "norm-bounds": norm_bound_check,
    "propagation": propagation_check,
    "metrics": metric_oracle_check,
}


def run_all() -> list:
    return [fn() for fn in SUITES.values()]
