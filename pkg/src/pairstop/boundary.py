"""Free boundary location via the endpoint derivative F_N(b) = v_N'(b).

The optimal closing level is the root of b -> F_N(b).  Each evaluation
re-meshes [a, b] with n uniform elements and solves the boundary value
problem, so the function is continuous in b but expensive; the root is
bracketed by geometric expansion and then resolved by pure bisection, which
needs nothing beyond continuity.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .fem import BvpSolution, assemble, constants, solve
from .model import ModelParams


class BracketingError(RuntimeError):
    """No sign change of F_N found within the expansion budget.

    Carries every sampled (b, F_N(b)) pair in ``samples`` for diagnosis.
    """

    def __init__(self, message: str, samples):
        table = "; ".join(f"F({b:.6g})={f:.6g}" for b, f in samples)
        super().__init__(f"{message} [sampled: {table}]")
        self.samples = list(samples)


@dataclass(frozen=True)
class FreeBoundaryResult:
    """Root estimate of F_N with the bracket and solution that produced it."""

    b_n: float
    bracket: Tuple[float, float]
    n: int
    iterations: int
    f_at_root: float
    solution: BvpSolution


@dataclass(frozen=True)
class ConvergenceRow:
    n: int
    b_n: float
    delta: Optional[float]


@dataclass(frozen=True)
class ConvergenceReport:
    """Boundary estimates over a ladder of mesh resolutions."""

    params: ModelParams
    tol_b: float
    rows: Tuple[ConvergenceRow, ...]

    @property
    def monotone_decreasing(self) -> bool:
        bs = [r.b_n for r in self.rows]
        return all(y < x for x, y in zip(bs, bs[1:]))


@dataclass(frozen=True)
class CertificateReport:
    """Root-existence certificate from two signed evaluations plus the
    uniform derivative-convergence bound.

    The certificate holds when F_n(b_lo) <= -f_threshold, F_n(b_hi) >=
    f_threshold, n >= n_min, and the uniform bound c12_hat / sqrt(n) stays
    below gap_threshold; the true F then has the same signs at b_lo, b_hi
    and a root in between.  The thresholds are configurable because their
    workable size moves with the parameters.
    """

    b_lo: float
    b_hi: float
    n: int
    f_lo: float
    f_hi: float
    c12_hat: float
    n_min: float
    uniform_gap: float
    f_threshold: float
    gap_threshold: float
    signs_sufficient: bool
    gap_sufficient: bool
    n_sufficient: bool

    @property
    def satisfied(self) -> bool:
        return self.signs_sufficient and self.gap_sufficient and self.n_sufficient


def f_n(params: ModelParams, b: float, n: int) -> float:
    """One-sided derivative of v_N at b for the problem meshed on [a, b]."""
    return solve(assemble(params, b, n)).derivative_at_b()


def bracket_root(params: ModelParams, n: int, b_init: float,
                 growth: float = 1.5, max_expansions: int = 60):
    """Geometric search for (b_lo, b_hi) with F_N(b_lo) < 0 <= F_N(b_hi).

    Expands upward from b_init while F_N stays negative; if F_N(b_init) is
    already nonnegative the search contracts toward 0 instead, where the
    sign is guaranteed negative.  Raises BracketingError with every sample
    when the budget runs out.
    """
    if not b_init > max(0.0, params.a):
        raise ValueError(
            f"b_init must exceed max(0, a) = {max(0.0, params.a)}, got {b_init}")
    if not growth > 1.0:
        raise ValueError(f"growth must exceed 1, got {growth}")

    samples = []
    b = float(b_init)
    f = f_n(params, b, n)
    samples.append((b, f))

    if f < 0.0:
        lo = b
        for _ in range(max_expansions):
            hi = lo * growth
            f = f_n(params, hi, n)
            samples.append((hi, f))
            if f >= 0.0:
                return lo, hi
            lo = hi
        raise BracketingError(
            f"no sign change above b_init={b_init} after {max_expansions} "
            "expansions", samples)

    hi = b
    for _ in range(max_expansions):
        lo = hi / growth
        f = f_n(params, lo, n)
        samples.append((lo, f))
        if f < 0.0:
            return lo, hi
        hi = lo
    raise BracketingError(
        f"no sign change below b_init={b_init} after {max_expansions} "
        "contractions", samples)


def find_boundary(params: ModelParams, n: int, tol_b: float = 1e-6,
                  b_init: Optional[float] = None,
                  growth: float = 1.5) -> FreeBoundaryResult:
    """Bracket and bisect the root of F_N to within tol_b.

    Bisection runs until the bracket is no wider than 2 * tol_b and the
    midpoint is returned, so b_n sits within tol_b of the discrete root.
    Every trial b re-meshes [a, b] with n elements.
    """
    if not tol_b > 0.0:
        raise ValueError(f"tol_b must be positive, got {tol_b}")
    if b_init is None:
        b_init = 0.1 * abs(params.a)
    lo, hi = bracket_root(params, n, b_init, growth)
    iterations = 0
    exact = None
    while hi - lo > 2.0 * tol_b:
        mid = 0.5 * (lo + hi)
        f_mid = f_n(params, mid, n)
        iterations += 1
        if f_mid == 0.0:
            exact = mid  # exact hit: stop immediately, keep enclosing bracket
            break
        if f_mid < 0.0:
            lo = mid
        else:
            hi = mid
    b_n = exact if exact is not None else 0.5 * (lo + hi)
    sol = solve(assemble(params, b_n, n))
    return FreeBoundaryResult(
        b_n=float(b_n), bracket=(lo, hi), n=n, iterations=iterations,
        f_at_root=sol.derivative_at_b(), solution=sol,
    )


def convergence_study(params: ModelParams, ns: Sequence[int],
                      tol_b: float = 1e-6) -> ConvergenceReport:
    """Boundary estimates b_n for each mesh count in ns, with increments."""
    ns = list(ns)
    if not ns:
        raise ValueError("ns must be nonempty")
    if any(b <= a for a, b in zip(ns, ns[1:])):
        raise ValueError(f"ns must be strictly increasing, got {ns}")
    rows = []
    prev = None
    for n in ns:
        res = find_boundary(params, n, tol_b)
        delta = None if prev is None else res.b_n - prev
        rows.append(ConvergenceRow(n=n, b_n=res.b_n, delta=delta))
        prev = res.b_n
    return ConvergenceReport(params=params, tol_b=tol_b, rows=tuple(rows))


def existence_certificate(params: ModelParams, b_lo: float, b_hi: float,
                          n: int, f_threshold: float = 0.5,
                          gap_threshold: float = 0.25) -> CertificateReport:
    """Check the computable sufficient conditions for a root of the exact F.

    Uses parameter-uniform bounds over [b_lo, b_hi]: c12_hat is the largest
    c11 on the interval times sqrt(b_hi - a), and n_min = (b_hi - a) divided
    by the smallest mesh threshold h0.  With the stated inequalities the
    uniform bound ||F - F_n|| <= c12_hat / sqrt(n) transfers the computed
    signs to F itself.  The constants are conservative: for stiff parameter
    sets n_min can be astronomically large, and the report then simply says
    the certificate is out of reach at this n.
    """
    if not b_hi > b_lo:
        raise ValueError(f"need b_hi > b_lo, got {b_lo}, {b_hi}")
    if not b_lo > params.a:
        raise ValueError(f"b_lo must exceed a={params.a}, got {b_lo}")
    if not 0.0 < gap_threshold < f_threshold:
        # sign transfer needs the uniform error strictly below the margin
        raise ValueError(
            f"need 0 < gap_threshold < f_threshold, got {gap_threshold}, "
            f"{f_threshold}")
    grid = np.linspace(b_lo, b_hi, 33)
    cs = [constants(params, float(b)) for b in grid]
    c11_hat = max(c.c11 for c in cs)
    h0_hat = min(c.h0 for c in cs)
    c12_hat = c11_hat * np.sqrt(b_hi - params.a)
    n_min = (b_hi - params.a) / h0_hat
    gap = c12_hat / np.sqrt(n)

    f_lo = f_n(params, b_lo, n)
    f_hi = f_n(params, b_hi, n)
    return CertificateReport(
        b_lo=b_lo, b_hi=b_hi, n=n, f_lo=f_lo, f_hi=f_hi,
        c12_hat=float(c12_hat), n_min=float(n_min), uniform_gap=float(gap),
        f_threshold=f_threshold, gap_threshold=gap_threshold,
        signs_sufficient=bool(f_lo <= -f_threshold and f_hi >= f_threshold),
        gap_sufficient=bool(gap < gap_threshold),
        n_sufficient=bool(n >= n_min),
    )
