"""Cartesian quadratic-form model of the AC power-flow constraints.

With ``v = [v_r; v_i]`` (length ``2 N_b``) every bus injection, squared
voltage magnitude and squared branch current is a quadratic form
``v^T M v`` with a symmetric real ``M``. The OPF constraints become

    v^T L_l v = a_l^T G + b_l^T D                  (equalities, l = 1..2N_b+1)
    v^T M_m v + h_m^T G <= d_m^T D + f_m           (inequalities, m = 1..M)

Generator limits are written directly on ``G`` (``M_m = 0``, ``h_m = ±e_g``)
so that buses with several generators keep per-generator rows.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .case import NetworkCase

_CHUNK = 512


@dataclass(frozen=True)
class AdmittanceModel:
    G: np.ndarray
    B: np.ndarray
    y_series: np.ndarray  # complex, one per branch

    @property
    def Y(self) -> np.ndarray:
        return self.G + 1j * self.B


def build_admittance(case: NetworkCase) -> AdmittanceModel:
    """Bus admittance matrix with line charging and bus shunts."""
    n = case.n_bus
    Y = np.zeros((n, n), dtype=complex)
    ys = np.empty(case.n_branch, dtype=complex)
    for k, br in enumerate(case.branches):
        z = complex(br.r, br.x)
        if z == 0:
            raise ValueError(f"branch {br.from_bus}-{br.to_bus} has zero impedance")
        y = 1.0 / z
        ys[k] = y
        f, t = case.bus_index(br.from_bus), case.bus_index(br.to_bus)
        half = 0.5j * br.b_charging
        Y[f, f] += y + half
        Y[t, t] += y + half
        Y[f, t] -= y
        Y[t, f] -= y
    for k, bus in enumerate(case.buses):
        Y[k, k] += complex(bus.shunt_g, bus.shunt_b)
    return AdmittanceModel(G=Y.real.copy(), B=Y.imag.copy(), y_series=ys)


class QuadStack:
    """A stack of symmetric quadratic forms ``q_l(v) = v^T M_l v``.

    Forms are stored as COO triplets so batched evaluation and gradients
    cost ``O(batch * nnz)``.
    """

    def __init__(self, mats, dim: int):
        self.dim = dim
        self.n_forms = len(mats)
        mats = [sp.csr_array(m, shape=(dim, dim)) for m in mats]
        for m in mats:
            m.sum_duplicates()
        self._mats = mats
        form, ii, jj, val = [], [], [], []
        for l, m in enumerate(mats):
            c = m.tocoo()
            keep = c.data != 0
            form.append(np.full(keep.sum(), l))
            ii.append(c.row[keep])
            jj.append(c.col[keep])
            val.append(c.data[keep])
        cat = (lambda xs, dt: np.concatenate(xs).astype(dt) if xs
               else np.zeros(0, dt))
        self.form = cat(form, np.int64)
        self.i = cat(ii, np.int64)
        self.j = cat(jj, np.int64)
        self.val = cat(val, float)
        nnz = len(self.val)
        ones = np.ones(nnz)
        self._sum = sp.csr_array((ones, (np.arange(nnz), self.form)),
                                 shape=(nnz, self.n_forms))
        self._scatter = sp.csr_array((ones, (np.arange(nnz), self.i)),
                                     shape=(nnz, dim))
        self._stack = (sp.vstack(mats).tocsr() if mats
                       else sp.csr_array((0, dim)))

    def __len__(self):
        return self.n_forms

    def matrix(self, l: int) -> sp.csr_array:
        return self._mats[l]

    def dense(self, l: int) -> np.ndarray:
        return self._mats[l].toarray()

    def values(self, V: np.ndarray) -> np.ndarray:
        """``q_l(v)`` for one vector (shape ``(L,)``) or a batch ``(N, L)``."""
        V = np.asarray(V, dtype=float)
        single = V.ndim == 1
        V = np.atleast_2d(V)
        out = np.empty((V.shape[0], self.n_forms))
        for s in range(0, V.shape[0], _CHUNK):
            blk = V[s:s + _CHUNK]
            prod = blk[:, self.i] * blk[:, self.j] * self.val
            out[s:s + _CHUNK] = (self._sum.T @ prod.T).T
        return out[0] if single else out

    def jacobian(self, v: np.ndarray) -> np.ndarray:
        """Rows ``2 M_l v`` for a single vector, shape ``(L, dim)``."""
        return 2.0 * (self._stack @ np.asarray(v, dtype=float)).reshape(
            self.n_forms, self.dim)

    def value_and_gradient(self, v: np.ndarray, w: np.ndarray):
        """``q(v)`` and the gradient of ``w^T q(v)`` for a single vector."""
        Mv = (self._stack @ v).reshape(self.n_forms, self.dim)
        return Mv @ v, 2.0 * (w @ Mv)

    def weighted_gradient(self, V: np.ndarray, W: np.ndarray) -> np.ndarray:
        """Per-sample gradient of ``sum_l W[s, l] q_l(v_s)`` w.r.t. ``v_s``."""
        V = np.atleast_2d(np.asarray(V, dtype=float))
        W = np.atleast_2d(np.asarray(W, dtype=float))
        out = np.empty_like(V)
        for s in range(0, V.shape[0], _CHUNK):
            blk = V[s:s + _CHUNK]
            contrib = W[s:s + _CHUNK][:, self.form] * self.val * blk[:, self.j]
            out[s:s + _CHUNK] = (self._scatter.T @ contrib.T).T
        return 2.0 * out


@dataclass(frozen=True)
class QuadraticFormModel:
    """Compact OPF constraint data for one case (all per-unit)."""

    n_bus: int
    n_gen: int
    n_load: int
    slack: int
    base_mva: float
    eq: QuadStack
    eq_gen: np.ndarray      # a_l rows, (L, 2 N_g)
    eq_demand: np.ndarray   # b_l rows, (L, 2 N_d)
    ineq: QuadStack
    ineq_gen: np.ndarray    # h_m rows, (M, 2 N_g)
    ineq_demand: np.ndarray  # d_m rows, (M, 2 N_d)
    ineq_const: np.ndarray  # f_m, +inf for unlimited branches
    gen_lower: np.ndarray
    gen_upper: np.ndarray
    cost: np.ndarray

    @property
    def n_eq(self) -> int:
        return len(self.eq)

    @property
    def n_ineq(self) -> int:
        return len(self.ineq)

    @property
    def n_branch(self) -> int:
        return self.n_ineq - 4 * self.n_gen - 2 * self.n_bus

    # named views onto the stacked forms
    def injection_p(self, n: int) -> sp.csr_array:
        return self.eq.matrix(n)

    def injection_q(self, n: int) -> sp.csr_array:
        return self.eq.matrix(self.n_bus + n)

    def slack_matrix(self) -> sp.csr_array:
        return self.eq.matrix(2 * self.n_bus)

    def voltage_matrix(self, n: int) -> sp.csr_array:
        return self.ineq.matrix(4 * self.n_gen + n)

    def current_matrix(self, k: int) -> sp.csr_array:
        return self.ineq.matrix(4 * self.n_gen + 2 * self.n_bus + k)


def _unit(n, k):
    e = np.zeros(n)
    e[k] = 1.0
    return e


def build_quadratic_forms(case: NetworkCase,
                          adm: AdmittanceModel | None = None) -> QuadraticFormModel:
    if adm is None:
        adm = build_admittance(case)
    nb, ng = case.n_bus, case.n_gen
    loads = case.load_buses
    nd = len(loads)
    dim = 2 * nb
    G, B = adm.G, adm.B
    GB = sp.csr_array(np.block([[G, -B], [B, G]]))
    BG = sp.csr_array(np.block([[-B, -G], [G, -B]]))

    eq_mats, ineq_mats = [], []
    for form in (GB, BG):
        for n in range(nb):
            sel = sp.csr_array((np.ones(2), ([n, nb + n], [n, nb + n])),
                               shape=(dim, dim))
            A = sel @ form
            eq_mats.append(((A + A.T) * 0.5).tocsr())
    s = nb + case.slack_index
    eq_mats.append(sp.csr_array(([1.0], ([s], [s])), shape=(dim, dim)))

    L = 2 * nb + 1
    a = np.zeros((L, 2 * ng))
    b = np.zeros((L, 2 * nd))
    for g, gen in enumerate(case.generators):
        n = case.bus_index(gen.bus_id)
        a[n, g] = 1.0
        a[nb + n, ng + g] = 1.0
    for j, n in enumerate(loads):
        b[n, j] = -1.0
        b[nb + n, nd + j] = -1.0

    lo, hi = case.generation_bounds()
    zero = sp.csr_array((dim, dim))
    M = 4 * ng + 2 * nb + case.n_branch
    h = np.zeros((M, 2 * ng))
    d = np.zeros((M, 2 * nd))
    f = np.zeros(M)
    row = 0
    for part in (0, 1):  # active, reactive
        for sign in (1.0, -1.0):
            for g in range(ng):
                k = part * ng + g
                ineq_mats.append(zero)
                h[row, k] = sign
                f[row] = hi[k] if sign > 0 else -lo[k]
                row += 1
    for sign in (1.0, -1.0):
        for n, bus in enumerate(case.buses):
            Mv = sp.csr_array((np.ones(2), ([n, nb + n], [n, nb + n])),
                              shape=(dim, dim))
            ineq_mats.append(sign * Mv)
            f[row] = bus.v_max ** 2 if sign > 0 else -bus.v_min ** 2
            row += 1
    for k, br in enumerate(case.branches):
        m, n = case.bus_index(br.from_bus), case.bus_index(br.to_bus)
        y2 = abs(adm.y_series[k]) ** 2
        er = _unit(dim, m) - _unit(dim, n)
        ei = _unit(dim, nb + m) - _unit(dim, nb + n)
        ineq_mats.append(sp.csr_array(y2 * (np.outer(er, er) + np.outer(ei, ei))))
        f[row] = br.rating ** 2 if br.rating > 0 else np.inf
        row += 1

    return QuadraticFormModel(
        n_bus=nb, n_gen=ng, n_load=nd, slack=case.slack_index,
        base_mva=case.base_mva,
        eq=QuadStack(eq_mats, dim), eq_gen=a, eq_demand=b,
        ineq=QuadStack(ineq_mats, dim), ineq_gen=h, ineq_demand=d,
        ineq_const=f, gen_lower=lo, gen_upper=hi, cost=case.cost_vector())


def _check_dims(qf, v, G, D):
    if v.shape[-1] != 2 * qf.n_bus:
        raise ValueError(f"voltage vector needs {2 * qf.n_bus} entries, got {v.shape[-1]}")
    if G.shape[-1] != 2 * qf.n_gen:
        raise ValueError(f"generation vector needs {2 * qf.n_gen} entries, got {G.shape[-1]}")
    if D.shape[-1] != 2 * qf.n_load:
        raise ValueError(f"demand vector needs {2 * qf.n_load} entries, got {D.shape[-1]}")


def evaluate_residuals(qf: QuadraticFormModel, v, G, D):
    """Equality residuals and inequality slacks (positive = violated).

    Accepts single vectors or row-stacked batches.
    """
    v, G, D = (np.asarray(x, dtype=float) for x in (v, G, D))
    _check_dims(qf, v, G, D)
    eq = qf.eq.values(v) - G @ qf.eq_gen.T - D @ qf.eq_demand.T
    with np.errstate(invalid="ignore"):
        ineq = (qf.ineq.values(v) + G @ qf.ineq_gen.T
                - D @ qf.ineq_demand.T - qf.ineq_const)
    return eq, ineq
