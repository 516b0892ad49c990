"""Smallness arithmetic and the second-kind boundary solve.

The Neumann problem (Laplace inside, prescribed outward normal derivative g
on the boundary graph) is solved through the single layer ansatz
u = E * (delta_Gamma x g*), whose interior normal-derivative trace equals
(1/2) g* - S g*.  Matching the data gives the second-kind equation
(I - 2S) g* = 2g, inverted by the geometric series sum_i (2S)^i (2g).

Convergence is gated at runtime by the empirical operator norm of 2S on
the discretized lattice (power iteration in the combined sup / pullback
Hdot^{-1/2} metric); the closed-form smallness constants are reported as
advisory output since their dimensional prefactor is not pinned down by
theory.  C_{*,2} uses the support-radius exponent 1/(2n).
"""

from dataclasses import dataclass, asdict, field

import numpy as np

from .errors import MaxIterations, NotContractive
from .layers import apply_S, grad_single_layer
from .sobolev import hs_norm_fourier, th_pull


@dataclass
class SmallnessReport:
    """Closed-form boundary constants plus the measured contraction factor."""

    n: int
    R_h: float
    C_s: float
    C_1: float
    C_star_1: float
    C_star_2: float
    C_star_3: float
    C_star: float
    first_condition: bool
    empirical_2S_norm: float = float("nan")

    def second_condition_at(self, cstar_n):
        if cstar_n <= 0:
            raise ValueError("cstar_n must be positive")
        return bool(self.C_star < 1.0 / (2.0 * cstar_n))

    def to_dict(self):
        d = asdict(self)
        d["first_condition"] = bool(d["first_condition"])
        return d


@dataclass
class SmallnessVerdict:
    """Gate outcome: symbolic inequality plus the empirical contraction."""

    first: bool
    second: bool
    empirical: bool

    @property
    def ok(self):
        return self.first and self.second and self.empirical

    def __bool__(self):
        return self.ok


def smallness_constants(boundary):
    """Evaluate the support/curvature constants of the boundary bump.

    For the identically-zero bump the effective support radius is 0, making
    every constant (and thus the combined product) vanish.
    """
    n = boundary.n
    hinf, hgrad, hhess = boundary.sup_norms()
    flat = hinf == 0.0 and hgrad == 0.0
    Rh = 0.0 if flat else boundary.support_radius
    c1norm = hinf + hgrad
    Cs = 1.0 + c1norm
    C1 = 1.0 + Rh * hhess
    Cs1 = C1**3 * (1.0 + Rh**0.25) * (np.sqrt(Rh) * hhess + Rh**2.5 * hhess**3)
    Cs2 = (Rh + Rh ** (1.0 / (2.0 * n))) * hhess + (Rh ** (n - 1) + 1.0) * c1norm
    Cs3 = Rh ** (n - 1) * (Cs1 + Cs2) + Rh**n * hhess
    Cstar = Cs ** (1.5 * n + 8.0) * C1 * (Cs1 + Cs2 + Rh ** (n / 2.0))
    first = Rh ** ((2.0 * n - 1.0) / (2.0 * n)) < 0.5
    return SmallnessReport(n=n, R_h=Rh, C_s=Cs, C_1=C1, C_star_1=Cs1,
                           C_star_2=Cs2, C_star_3=Cs3, C_star=Cstar,
                           first_condition=bool(first))


def _combined_norm(q, values):
    dens = q.density(values, on_graph=True)
    linf = float(np.abs(values).max())
    hm = hs_norm_fourier(th_pull(dens), -0.5, check_decay=False, origin_rings=4)
    return max(linf, hm)


def estimate_contraction(q, hs, steps=30, seed=0):
    """Empirical norm of 2S by power iteration in the combined metric.

    Returns the largest growth ratio over the second half of the iteration;
    identically zero operators report 0.
    """
    rng = np.random.default_rng(seed)
    g = rng.standard_normal(q.res * q.res)
    nrm = _combined_norm(q, g)
    g /= nrm
    ratios = []
    for _ in range(steps):
        g = 2.0 * apply_S(q, hs, g)
        nrm = _combined_norm(q, g)
        if nrm < 1e-250:
            return 0.0
        ratios.append(nrm)
        g /= nrm
    tail = ratios[len(ratios) // 2:]
    return float(max(tail))


def check_smallness(report, cstar_n):
    """Smallness gate: closed-form inequalities at the supplied C*(n), plus
    the empirical contraction verdict when it has been measured."""
    emp = report.empirical_2S_norm
    empirical = bool(np.isnan(emp) or emp < 1.0)
    return SmallnessVerdict(first=report.first_condition,
                            second=report.second_condition_at(cstar_n),
                            empirical=empirical)


@dataclass
class NeumannSolution:
    """Boundary density g* = 2 (I - 2S)^{-1} g with series diagnostics."""

    density: object
    series_terms_used: int
    residual: float
    increments: list = field(default_factory=list)


def solve_density(q, hs, g, tol=1e-8, kmax=64, contraction=None, seed=0):
    """Sum the geometric series for (I - 2S)^{-1}(2g) on the lattice.

    Stops when the sup norm of the increment falls below tol * sup|g|;
    raises NotContractive when the measured norm of 2S is >= 1 and
    MaxIterations (carrying the partial solution) when kmax is hit.
    """
    if contraction is None:
        contraction = estimate_contraction(q, hs, seed=seed)
    if not contraction < 1.0:
        raise NotContractive(f"empirical |2S| = {contraction:.3f} >= 1")
    gvec = q.match(g)
    gmax = float(np.abs(gvec).max())
    term = 2.0 * gvec
    acc = term.copy()
    increments = [float(np.abs(term).max())]
    terms = 1
    converged = gmax == 0.0
    while not converged and terms < kmax:
        term = 2.0 * apply_S(q, hs, term)
        acc += term
        inc = float(np.abs(term).max())
        if inc > 0.0:
            increments.append(inc)
            terms += 1
        if inc < tol * gmax:
            converged = True
    residual = float(np.abs(acc - 2.0 * gvec - 2.0 * apply_S(q, hs, acc)).max())
    sol = NeumannSolution(density=q.density(acc, on_graph=True),
                          series_terms_used=terms, residual=residual,
                          increments=increments)
    if not converged:
        raise MaxIterations(f"series hit kmax={kmax}, residual={residual:.3e}", solution=sol)
    return sol


def neumann_grad(q, hs, sol, x):
    """grad u of the Neumann solution at an interior point (d > delta_min)."""
    return grad_single_layer(q, sol.density, x)
