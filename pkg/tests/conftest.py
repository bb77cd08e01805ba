"""Shared fixtures and random-model helpers."""
import numpy as np
import pytest

from lpvsid.core import DataSet, LpvSsModel, SchedulingBasis, is_stable
from lpvsid.simulation import make_benchmark, simulate


def random_model(rng, n_x=2, n_u=2, n_y=2, n_psi=1, a_scale=0.3, k_scale=0.2, c_scale=1.0,
                 basis=None):
    """Random affine model; small ``A``/``K`` keep open and closed loop contractive."""
    basis = basis or (SchedulingBasis.affine(n_psi) if n_psi else SchedulingBasis.constant(1))
    q = basis.size
    return LpvSsModel(
        A=a_scale * rng.standard_normal((q, n_x, n_x)) / np.sqrt(q * n_x),
        B=rng.standard_normal((q, n_x, n_u)),
        C=c_scale * rng.standard_normal((q, n_y, n_x)) / np.sqrt(q),
        D=rng.standard_normal((q, n_y, n_u)),
        K=k_scale * rng.standard_normal((q, n_x, n_y)) / np.sqrt(q * n_y),
        Xi2=np.eye(n_y), basis=basis)


def random_stable_model(rng, mode="closed", **kw):
    for _ in range(50):
        m = random_model(rng, **kw)
        if is_stable(m, "open", n_traj=10, length=300) and \
                (mode == "open" or is_stable(m, "closed", n_traj=10, length=300)):
            return m
    raise RuntimeError("no stable draw")


def random_dataset(rng, model, N, noise=1.0, x0=None):
    n_p = model.basis.n_p
    p = rng.uniform(-1, 1, (N, n_p))
    u = rng.standard_normal((N, model.n_u))
    xi = noise * rng.standard_normal((N, model.n_y))
    sim = simulate(model, u, p, xi, x0=x0)
    return DataSet(u=u, p=p, y=sim.y, xi=xi), sim


@pytest.fixture(scope="session")
def bench():
    return make_benchmark(0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance-criterion outcomes, printed once at the end of the session
ACCEPTANCE: dict = {}


def record_criterion(k: int, ok: bool, detail: str):
    ACCEPTANCE[k] = (bool(ok), detail)
    print(f"criterion {k}: {'PASS' if ok else 'FAIL'} - {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'} - {detail}")
