"""Verification suites for the estimator identities and the cache gradients.

Each suite returns rows (one per checked case) with a pass flag. A run
passes iff no row fails; the CLI maps that onto exit codes.
"""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .. import estimators as est
from .. import tabular as tb
from ..cache.autodiff import Tape
from ..cache.network import (CacheParams, EncodingConfig, cache_backward, cache_evaluate,
                             cache_forward, parameter_count)
from ..errors import ValidationError
from ..rng import Purpose, stream
from ..transport.sampling import UNIFORM, sample_direction, sample_surface

SUITES = ("appendix-a", "appendix-b", "appendix-c", "appendix-d", "gradcheck")
TOL_EXACT = 1e-12
TOL_BOUND = 1e-9
TOL_GRADCHECK = 1e-4
N_CONVERGENCE = 100
N_BIAS = 50
MIN_NONZERO_BIAS = 45
N_GRADCHECK = 20

COLUMNS = ("suite", "case", "seed", "estimator", "n", "M", "lam", "bias_norm", "variance",
           "error", "tolerance", "passed", "note")


@dataclass
class Row:
    suite: str
    case: str
    seed: int
    estimator: str = ""
    n: int | None = None
    M: int | None = None
    lam: float | None = None
    bias_norm: float | None = None
    variance: float | None = None
    error: float = 0.0
    tolerance: float = 0.0
    passed: bool = True
    note: str = ""


@dataclass
class VerifyReport:
    seed: int
    rows: list[Row] = field(default_factory=list)

    @property
    def failures(self) -> list[Row]:
        return [r for r in self.rows if not r.passed]

    @property
    def ok(self) -> bool:
        return not self.failures

    def first_failure(self) -> str | None:
        if self.ok:
            return None
        r = self.failures[0]
        what = r.note or f"error {r.error:.3e} exceeds {r.tolerance:.1e}"
        return f"{r.suite}/{r.case}: {what}"

    def write_csv(self, path):
        with open(path, "w", newline="") as f:
            wr = csv.writer(f)
            wr.writerow(COLUMNS)
            for r in self.rows:
                wr.writerow(["" if v is None else (repr(v) if isinstance(v, float) else v)
                             for v in dataclasses.astuple(r)])


def _system_rng(seed, suite_key, i):
    return stream(seed, Purpose.VERIFY, suite_key, i)


# -- appendix A: geometric convergence of the semi-gradient iteration -------------------------

def suite_appendix_a(seed: int, count: int = N_CONVERGENCE, steps: int = 60) -> list[Row]:
    rows = []
    for i in range(count):
        rng = _system_rng(seed, 0, i)
        n = int(rng.integers(2, 17))
        lam = float(rng.uniform(0.3, 0.95))
        sys_seed = int(rng.integers(2**31))
        sys = tb.random_system(n, lam, sys_seed)
        L_star = tb.solve_exact(sys)
        L0 = L_star + rng.uniform(-10.0, 10.0, n)
        traj = tb.sg_trajectory(sys, L0, steps)
        err = np.abs(traj - L_star).max(axis=1)
        bound = sys.lam ** np.arange(steps + 1) * err[0] + TOL_BOUND
        margin = float((err - bound).max())
        rows.append(Row("appendix-a", f"system-{i}", sys_seed, "sg", n, None, sys.lam,
                        error=max(margin, 0.0), tolerance=0.0, passed=margin <= 0.0,
                        note="" if margin <= 0.0 else f"bound violated by {margin:.3e}"))
    # the guard: a non-contraction must be rejected by validation
    T = np.array([[0.6, 0.6], [0.1, 0.2]])
    try:
        tb.TabularSystem(T, np.ones(2))
        rows.append(Row("appendix-a", "reject-lambda-1.2", seed, lam=1.2, passed=False,
                        note="lambda = 1.2 was accepted"))
    except ValidationError as exc:
        rows.append(Row("appendix-a", "reject-lambda-1.2", seed, lam=1.2, note=f"rejected: {exc}"))
    return rows


# -- appendices B and C: enumerated bias of NR, unbiasedness of DB ---------------------------

def bias_systems(seed: int, count: int = N_BIAS):
    """Random systems with n in 2..4, M in 1..2 and a random evaluation point."""
    out = []
    for i in range(count):
        rng = _system_rng(seed, 1, i)
        n = int(rng.integers(2, 5))
        M = int(rng.integers(1, 3))
        lam = float(rng.uniform(0.3, 0.95))
        sys_seed = int(rng.integers(2**31))
        sys = tb.random_system(n, lam, sys_seed)
        L = rng.uniform(0.2, 2.0, n)
        out.append((i, sys, M, L))
    return out


def suite_appendix_b(seed: int, count: int = N_BIAS) -> list[Row]:
    rows, nonzero = [], 0
    for i, sys, M, L in bias_systems(seed, count):
        p = tb.uniform_pmf(sys.n)
        mean, var = tb.gradient_moments(sys, L, p, M, "nr")
        bias = mean - tb.true_gradient(sys, L)
        cov = tb.nr_covariance_term(sys, L, p, M)
        err = float(np.abs(bias - cov).max())
        bnorm = float(np.abs(bias).max())
        nonzero += bnorm > TOL_EXACT
        rows.append(Row("appendix-b", f"system-{i}", sys.seed, "nr", sys.n, M, sys.lam, bnorm, var,
                        err, TOL_EXACT, err < TOL_EXACT))
    rows.append(Row("appendix-b", "nonzero-bias-count", seed, "nr", error=float(nonzero),
                    tolerance=float(MIN_NONZERO_BIAS), passed=nonzero >= min(MIN_NONZERO_BIAS, count),
                    note=f"{nonzero}/{count} systems with non-zero bias"))
    return rows


def suite_appendix_c(seed: int, count: int = N_BIAS) -> list[Row]:
    rows = []
    for i, sys, M, L in bias_systems(seed, count):
        p = tb.uniform_pmf(sys.n)
        mean, var = tb.gradient_moments(sys, L, p, M, "db")
        err = float(np.abs(mean - tb.true_gradient(sys, L)).max())
        rows.append(Row("appendix-c", f"system-{i}", sys.seed, "db", sys.n, M, sys.lam, err, var,
                        err, TOL_EXACT, err < TOL_EXACT))
    return rows


# -- appendix D: weighted dual buffer ---------------------------------------------------------

def _bit_equal(*pairs) -> bool:
    return all(np.array_equal(a, b) for a, b in pairs)


def wdb_endpoint_rows(seed: int, cases: int = 20) -> list[Row]:
    """Per-sample endpoint identities of the closed-form terms, bit-exact."""
    rows = []
    for c in range(cases):
        rng = _system_rng(seed, 3, c)
        shape = (int(rng.integers(1, 64)), 3)
        L, X, Y = (rng.normal(size=shape) * rng.uniform(0.01, 10.0) for _ in range(3))
        _, gL1, gX1, gY1 = est.wdb_terms(L, X, Y, 1.0)
        _, gLd, gXd, gYd = est.db_terms(L, X, Y)
        _, gL0, gX0, gY0 = est.wdb_terms(L, X, Y, 0.0)
        _, gLs = est.sg_terms(L, (X + Y) / 2.0)
        ok1 = _bit_equal((gL1, gLd), (gX1, gXd), (gY1, gYd))
        ok0 = _bit_equal((gL0, gLs)) and not np.any(gX0) and not np.any(gY0)
        rows.append(Row("appendix-d", f"terms-w1-{c}", seed, "wdb", passed=ok1,
                        note="" if ok1 else "wdb(w=1) terms differ from db"))
        rows.append(Row("appendix-d", f"terms-w0-{c}", seed, "wdb", passed=ok0,
                        note="" if ok0 else "wdb(w=0) terms differ from sg with averaged target"))
    return rows


def wdb_network_rows(seed: int, scene=None, B: int = 32, M: int = 4) -> list[Row]:
    """Endpoint identities through a real cache and two independent RHS buffers."""
    from .scenes import cornell_box

    scene = scene or cornell_box(8)
    enc = EncodingConfig(2)
    params = _random_params((enc.size, 16, 16, 3), enc, _system_rng(seed, 4, 0))
    x = sample_surface(scene, _system_rng(seed, 4, 1), B)
    w = sample_direction(x.normal, UNIFORM, _system_rng(seed, 4, 2)).direction
    lhs = est.evaluate_lhs(params, scene, x, w)
    X = est.estimate_rhs(scene, params, x, w, M, UNIFORM, _system_rng(seed, 4, 3), True, 0)
    Y = est.estimate_rhs(scene, params, x, w, M, UNIFORM, _system_rng(seed, 4, 4), True, 1)
    g1 = est.loss_grad_wdb(lhs, X, Y, 1.0)
    gd = est.loss_grad_db(lhs, X, Y)
    g0 = est.loss_grad_wdb(lhs, X, Y, 0.0)
    avg = dataclasses.replace(X, value=(X.value + Y.value) / 2.0)
    gs = est.loss_grad_sg(lhs, avg)
    ok1 = np.array_equal(g1.grad, gd.grad)
    ok0 = np.array_equal(g0.grad, gs.grad)
    return [Row("appendix-d", "cache-w1", seed, "wdb", passed=ok1,
                note="" if ok1 else "wdb(w=1) cache gradient differs from db"),
            Row("appendix-d", "cache-w0", seed, "wdb", passed=ok0,
                note="" if ok0 else "wdb(w=0) cache gradient differs from sg with averaged target")]


def wdb_affine_rows(seed: int, count: int = 20, weights=(0.0, 0.1, 0.25, 0.5, 0.75, 1.0)) -> list[Row]:
    rows = []
    for i, sys, M, L in bias_systems(seed, count):
        p = tb.uniform_pmf(sys.n)
        e = {w: tb.expected_gradient(sys, L, p, M, "wdb", w=w) for w in weights}
        e0, e1 = e[0.0], e[1.0]
        affine = max(float(np.abs(e[w] - ((1.0 - w) * e0 + w * e1)).max()) for w in weights)
        to_db = float(np.abs(e1 - tb.expected_gradient(sys, L, p, M, "db")).max())
        to_sg = float(np.abs(e0 - tb.expected_gradient(sys, L, p, M, "sg")).max())
        err = max(affine, to_db, to_sg)
        rows.append(Row("appendix-d", f"affine-{i}", sys.seed, "wdb", sys.n, M, sys.lam,
                        error=err, tolerance=TOL_EXACT, passed=err < TOL_EXACT))
    return rows


def suite_appendix_d(seed: int) -> list[Row]:
    return wdb_endpoint_rows(seed) + wdb_network_rows(seed) + wdb_affine_rows(seed)


# -- gradcheck ---------------------------------------------------------------------------------

def _random_params(topology, enc, rng) -> CacheParams:
    theta = rng.normal(size=parameter_count(topology)) * 0.5
    return CacheParams(theta, topology, enc)


def random_small_network(rng):
    """At most two hidden layers (three linear layers) of 3 to 8 units."""
    enc = EncodingConfig(int(rng.integers(0, 3)))
    hidden = [int(rng.integers(3, 9)) for _ in range(int(rng.integers(1, 3)))]
    topology = (enc.size, *hidden, 3)
    return _random_params(topology, enc, rng)


def finite_difference(params: CacheParams, features, upstream, h=1e-6) -> np.ndarray:
    """Central differences of ``sum(upstream * net(features))`` for every parameter."""
    out = np.empty(params.theta.size)
    base = params.copy()
    for k in range(params.theta.size):
        t0 = base.theta[k]
        base.theta[k] = t0 + h
        fp = float((upstream * cache_evaluate(base, features)).sum())
        base.theta[k] = t0 - h
        fm = float((upstream * cache_evaluate(base, features)).sum())
        base.theta[k] = t0
        out[k] = (fp - fm) / (2.0 * h)
    return out


def gradcheck_error(params: CacheParams, features, upstream, engine="fused") -> float:
    _, trace = cache_forward(params, features, engine=engine)
    g = cache_backward(trace, upstream)
    fd = finite_difference(params, features, upstream)
    return float(np.abs(g - fd).max() / max(np.abs(fd).max(), 1e-8))


def suite_gradcheck(seed: int, count: int = N_GRADCHECK) -> list[Row]:
    rows = []
    for i in range(count):
        rng = _system_rng(seed, 5, i)
        params = random_small_network(rng)
        feats = rng.normal(size=(int(rng.integers(4, 17)), params.topology[0]))
        up = rng.normal(size=(len(feats), 3))
        for engine in ("fused", "tape"):
            err = gradcheck_error(params, feats, up, engine)
            rows.append(Row("gradcheck", f"network-{i}-{engine}", seed, n=params.theta.size,
                            error=err, tolerance=TOL_GRADCHECK, passed=err < TOL_GRADCHECK,
                            note=f"topology {params.topology}"))
    rows.extend(stop_gradient_rows(seed))
    return rows


def stop_gradient_rows(seed: int) -> list[Row]:
    rng = _system_rng(seed, 6, 0)
    tape = Tape()
    a = tape.leaf(rng.normal(size=(5, 3)))
    b = tape.leaf(rng.normal(size=(5, 3)))
    out = tape.sum(tape.mul(a, tape.stop_gradient(b)))
    grads = tape.backward(out)
    gb = grads[b.index]
    ok_tape = gb is None or not np.any(gb)
    ok_a = np.array_equal(grads[a.index], b.value)
    # the semi-gradient estimator must not touch the RHS tape at all
    from .scenes import cornell_box

    scene = cornell_box(8)
    enc = EncodingConfig(1)
    params = _random_params((enc.size, 8, 3), enc, rng)
    x = sample_surface(scene, _system_rng(seed, 6, 1), 16)
    w = sample_direction(x.normal, UNIFORM, _system_rng(seed, 6, 2)).direction
    lhs = est.evaluate_lhs(params, scene, x, w)
    R = est.estimate_rhs(scene, params, x, w, 4, UNIFORM, _system_rng(seed, 6, 3), True)
    sg = est.loss_grad_sg(lhs, R)
    nr = est.loss_grad_nr(lhs, R)
    ok_sg = sg.grad_rhs is None and np.array_equal(sg.grad_lhs, nr.grad_lhs)
    return [Row("gradcheck", "stop-gradient-tape", seed, passed=ok_tape and ok_a,
                note="" if ok_tape and ok_a else "stop_gradient leaked gradient"),
            Row("gradcheck", "stop-gradient-sg", seed, "sg", passed=ok_sg,
                note="" if ok_sg else "sg gradient has an RHS contribution")]


RUNNERS = {
    "appendix-a": suite_appendix_a,
    "appendix-b": suite_appendix_b,
    "appendix-c": suite_appendix_c,
    "appendix-d": suite_appendix_d,
    "gradcheck": suite_gradcheck,
}


def verify(suite: str, seed: int = 0) -> VerifyReport:
    if suite != "all" and suite not in RUNNERS:
        raise ValueError(f"unknown suite {suite!r}; expected one of {SUITES + ('all',)}")
    report = VerifyReport(seed)
    for name in (SUITES if suite == "all" else (suite,)):
        report.rows.extend(RUNNERS[name](seed))
    return report
