"""Degree-2 observables and the exact action of the evolution generators.

An observable is ``u(z) = z^T K z + b.z + c`` over the flattened coordinate
vector ``z = (pos ‖ vel)``.  The full generator is ``L = A + B G + gamma S``
where A (+ the field term B G) is a linear drift and S is the sum over bonds
and components of velocity swaps.  Both map degree-2 observables to degree-2
observables exactly, which makes this module the brute-force oracle for every
resolvent identity: no discretization, no sampling.

Dense kernels only; intended for desk-scale certification work.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lattice import LatticeSpec, PhaseState, SpecError, neighbor_tables

DENSE_CAP = 4096  # max dstar * N^d


def _check_cap(spec: LatticeSpec):
    if spec.dstar * spec.nsites > DENSE_CAP:
        raise SpecError(
            f"dense observables capped at dstar*N^d <= {DENSE_CAP}")


@dataclass
class QuadraticObservable:
    """u(z) = z^T kernel z + linear.z + constant."""

    spec: LatticeSpec
    kernel: np.ndarray
    linear: np.ndarray
    constant: float = 0.0

    @classmethod
    def zeros(cls, spec: LatticeSpec) -> "QuadraticObservable":
        _check_cap(spec)
        m = spec.flat_size
        return cls(spec, np.zeros((m, m)), np.zeros(m), 0.0)

    def __post_init__(self):
        m = self.spec.flat_size
        if self.kernel.shape != (m, m) or self.linear.shape != (m,):
            raise SpecError("observable dimensions do not match spec")
        if not np.allclose(self.kernel, self.kernel.T, atol=1e-12):
            raise SpecError("kernel must be symmetric")

    def __add__(self, other: "QuadraticObservable") -> "QuadraticObservable":
        if other.spec != self.spec:
            raise SpecError("spec mismatch")
        return QuadraticObservable(self.spec, self.kernel + other.kernel,
                                   self.linear + other.linear,
                                   self.constant + other.constant)

    def __mul__(self, a: float) -> "QuadraticObservable":
        return QuadraticObservable(self.spec, a * self.kernel,
                                   a * self.linear, a * self.constant)

    __rmul__ = __mul__

    def __sub__(self, other):
        return self + (-1.0) * other


def eval_observable(u: QuadraticObservable, s: PhaseState) -> float:
    if s.spec != u.spec:
        raise SpecError("spec mismatch")
    z = s.flatten()
    return float(z @ u.kernel @ z + u.linear @ z + u.constant)


@dataclass(frozen=True)
class GeneratorSpec:
    variant: str  # micro | canonical-0 | canonical-i | canonical-ii
    b: float
    gamma: float

    @classmethod
    def for_spec(cls, spec: LatticeSpec) -> "GeneratorSpec":
        if spec.coords == "position":
            variant = "micro"
        else:
            variant = {"zero": "canonical-0", "uniform": "canonical-i",
                       "alternate": "canonical-ii"}[spec.charge]
        return cls(variant, spec.b, spec.gamma)

    def check(self, spec: LatticeSpec):
        if self != GeneratorSpec.for_spec(spec) or self.gamma != spec.gamma:
            raise SpecError("generator variant inconsistent with spec")


def harmonic_drift_matrix(spec: LatticeSpec) -> np.ndarray:
    """Field-free drift A as a matrix over flattened coordinates."""
    _check_cap(spec)
    ns, ds = spec.nsites, spec.dstar
    m = spec.flat_size
    A = np.zeros((m, m))
    P = lambda j, i: j * ns + i
    V = lambda j, i: ds * ns + j * ns + i
    plus, minus = neighbor_tables(spec)
    if spec.coords == "position":
        for j in range(ds):
            for i in range(ns):
                A[P(j, i), V(j, i)] = 1.0
                A[V(j, i), P(j, i)] -= 2.0 * spec.d
                for a in range(spec.d):
                    A[V(j, i), P(j, plus[a][i])] += 1.0
                    A[V(j, i), P(j, minus[a][i])] += 1.0
    else:
        for j in range(ds):
            for i in range(ns):
                A[P(j, i), V(j, (i + 1) % ns)] += 1.0
                A[P(j, i), V(j, i)] -= 1.0
                A[V(j, i), P(j, i)] += 1.0
                A[V(j, i), P(j, (i - 1) % ns)] -= 1.0
    return A


def field_generator_matrix(spec: LatticeSpec) -> np.ndarray:
    """G: the charge-weighted velocity rotation in the (1,2) plane.

    The field contributes B*G to the drift; G is independent of B itself.
    """
    _check_cap(spec)
    ns, ds = spec.nsites, spec.dstar
    m = spec.flat_size
    G = np.zeros((m, m))
    if ds < 2:
        return G
    c = spec.site_charges()
    V = lambda j, i: ds * ns + j * ns + i
    for i in range(ns):
        G[V(0, i), V(1, i)] = c[i]
        G[V(1, i), V(0, i)] = -c[i]
    return G


def drift_matrix(spec: LatticeSpec) -> np.ndarray:
    """Full deterministic drift M with dz/dt = M z."""
    return harmonic_drift_matrix(spec) + spec.b * field_generator_matrix(spec)


def apply_drift(u: QuadraticObservable, M: np.ndarray) -> QuadraticObservable:
    """Lie action of the linear flow z' = Mz on the observable."""
    return QuadraticObservable(u.spec, u.kernel @ M + M.T @ u.kernel,
                               M.T @ u.linear, 0.0)


def swap_pairs(spec: LatticeSpec):
    """All (i1, i2) flattened-index pairs the exchange noise can swap."""
    ns, ds = spec.nsites, spec.dstar
    plus, _ = neighbor_tables(spec)
    pairs = []
    for a in range(spec.d):
        for j in range(ds):
            base = ds * ns + j * ns
            for i in range(ns):
                pairs.append((base + i, base + plus[a][i]))
    return pairs


def apply_swap_sum(u: QuadraticObservable) -> QuadraticObservable:
    """S u = sum over bonds and components of (u after swap) - u."""
    K = u.kernel
    n = K.shape[0]
    Kout = np.zeros_like(K)
    bout = np.zeros_like(u.linear)
    for i1, i2 in swap_pairs(u.spec):
        r1 = K[i1].copy()
        r2 = K[i2].copy()
        n1 = r2.copy()
        n1[i1], n1[i2] = r2[i2], r2[i1]
        n2 = r1.copy()
        n2[i1], n2[i2] = r1[i2], r1[i1]
        d1 = n1 - r1
        d2 = n2 - r2
        Kout[i1] += d1
        Kout[i2] += d2
        # column updates for the untouched rows (K is symmetric)
        Kout[:, i1] += d1
        Kout[:, i2] += d2
        Kout[i1, i1] -= d1[i1]
        Kout[i1, i2] -= d2[i1]
        Kout[i2, i1] -= d1[i2]
        Kout[i2, i2] -= d2[i2]
        bout[i1] += u.linear[i2] - u.linear[i1]
        bout[i2] += u.linear[i1] - u.linear[i2]
    return QuadraticObservable(u.spec, Kout, bout, 0.0)


def apply_generator(u: QuadraticObservable,
                    g: GeneratorSpec) -> QuadraticObservable:
    """L u = (A + B G) u + gamma S u, exactly."""
    g.check(u.spec)
    M = drift_matrix(u.spec)
    return apply_drift(u, M) + g.gamma * apply_swap_sum(u)


def residual_norm(lam: float, u: QuadraticObservable,
                  rhs: QuadraticObservable, g: GeneratorSpec) -> float:
    """Size of (lam - L)u - rhs: kernel Frobenius + linear + constant parts."""
    if lam <= 0:
        raise SpecError("lam must be > 0")
    res = lam * u - apply_generator(u, g) - rhs
    return (float(np.linalg.norm(res.kernel))
            + float(np.linalg.norm(res.linear)) + abs(res.constant))


def total_energy_observable(spec: LatticeSpec) -> QuadraticObservable:
    u = QuadraticObservable.zeros(spec)
    ns, ds = spec.nsites, spec.dstar
    half = ds * ns
    for k in range(half):
        u.kernel[half + k, half + k] = 0.5
    if spec.coords == "position":
        plus, _ = neighbor_tables(spec)
        for a in range(spec.d):
            for j in range(ds):
                for i in range(ns):
                    p, q = j * ns + i, j * ns + plus[a][i]
                    u.kernel[p, p] += 0.5
                    u.kernel[q, q] += 0.5
                    u.kernel[p, q] -= 0.5
                    u.kernel[q, p] -= 0.5
    else:
        for k in range(half):
            u.kernel[k, k] = 0.5
    return u


def total_current_observable(spec: LatticeSpec, a: int = 0) -> QuadraticObservable:
    """Sum over bonds of the deterministic energy current in direction a."""
    u = QuadraticObservable.zeros(spec)
    ns, ds = spec.nsites, spec.dstar
    plus, _ = neighbor_tables(spec)

    def add_qv(p, v, coef):
        u.kernel[p, v] += 0.5 * coef
        u.kernel[v, p] += 0.5 * coef

    for j in range(ds):
        for i in range(ns):
            if spec.coords == "position":
                p0, p1 = j * ns + i, j * ns + plus[a][i]
                v0, v1 = ds * ns + p0, ds * ns + p1
                for p, sp in ((p1, 1.0), (p0, -1.0)):
                    for v in (v0, v1):
                        add_qv(p, v, -0.5 * sp)
            else:
                p0 = j * ns + i
                v0 = ds * ns + j * ns + i
                v1 = ds * ns + j * ns + (i + 1) % ns
                add_qv(p0, v0, -0.5)
                add_qv(p0, v1, -0.5)
    return u


def linear_observable(spec: LatticeSpec, vec: np.ndarray) -> QuadraticObservable:
    u = QuadraticObservable.zeros(spec)
    u.linear[:] = vec
    return u


def bond_current_observable(spec: LatticeSpec, x: int = 0,
                            a: int = 0) -> QuadraticObservable:
    """Deterministic current across the single bond (x, x+e_a)."""
    u = QuadraticObservable.zeros(spec)
    ns, ds = spec.nsites, spec.dstar
    plus, _ = neighbor_tables(spec)

    def add_qv(p, v, coef):
        u.kernel[p, v] += 0.5 * coef
        u.kernel[v, p] += 0.5 * coef

    for j in range(ds):
        if spec.coords == "position":
            p0, p1 = j * ns + x, j * ns + plus[a][x]
            for p, sp in ((p1, 1.0), (p0, -1.0)):
                for v in (ds * ns + p0, ds * ns + p1):
                    add_qv(p, v, -0.5 * sp)
        else:
            p0 = j * ns + x
            add_qv(p0, ds * ns + p0, -0.5)
            add_qv(p0, ds * ns + j * ns + (x + 1) % ns, -0.5)
    return u


def gaussian_pair_expectation(u: QuadraticObservable, w: QuadraticObservable,
                              var: float) -> float:
    """E[u(z) w(z)] for z with i.i.d. centered Gaussian entries of variance var.

    Exact via Wick's theorem: cross terms of odd degree vanish, so
    E[uw] = (var*tr Ku + cu)(var*tr Kw + cw) + 2 var^2 tr(Ku Kw)
            + var * bu.bw.
    """
    if u.spec != w.spec:
        raise SpecError("spec mismatch")
    mu = var * np.trace(u.kernel) + u.constant
    mw = var * np.trace(w.kernel) + w.constant
    return float(mu * mw + 2.0 * var * var * np.sum(u.kernel * w.kernel.T)
                 + var * (u.linear @ w.linear))
