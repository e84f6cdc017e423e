import numpy as np
import pytest

from shortcut_mcmc.net import DenoiserNet, NetConfig
from shortcut_mcmc.schedule import ScheduleConfig, build_schedule


class OracleDenoiser:
    """Returns the exact noise that maps the known clean batch ``x0`` to ``x_t``."""

    def __init__(self, x0, sch):
        self.x0 = np.asarray(x0, dtype=np.float64)
        self.sch = sch
        self.calls = 0

    def forward(self, x_t, t):
        self.calls += 1
        t = np.asarray(t)
        a = self.sch.alpha[t]
        s = self.sch.sigma[t]
        if t.ndim:
            a, s = a[:, None], s[:, None]
        return (x_t - a * self.x0) / s, None


class CountingNet:
    def __init__(self, net):
        self.net = net
        self.calls = 0

    def forward(self, x, t):
        self.calls += 1
        return self.net.forward(x, t)

    def backward(self, tape, g):
        return self.net.backward(tape, g)


@pytest.fixture(scope="session")
def sch():
    return build_schedule(ScheduleConfig())


def random_net(hidden=8, seed=0, scale=0.5, **kw):
    cfg = NetConfig(hidden_dim=hidden, **kw)
    rng = np.random.default_rng(seed)
    params = {k: scale * rng.standard_normal(s) for k, s in DenoiserNet.param_shapes(cfg).items()}
    return DenoiserNet(cfg, params)


@pytest.fixture
def tiny_net():
    return random_net()


def central_diff(f, arr, h=1e-5):
    """Central finite-difference gradient of scalar f() w.r.t. every entry of ``arr`` (mutated in place)."""
    grad = np.zeros_like(arr)
    flat, gflat = arr.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return grad


def richardson_diff(f, arr, h=2e-5):
    """Fourth-order estimate from two central differences at h and h/2."""
    return (4 * central_diff(f, arr, h / 2) - central_diff(f, arr, h)) / 3


def max_rel_err(analytic, numeric, floor=1e-8):
    """Largest |a - n| / max(|a|, |n|), ignoring entries where both are below ``floor``."""
    a, n = np.ravel(analytic), np.ravel(numeric)
    denom = np.maximum(np.abs(a), np.abs(n))
    mask = denom > floor
    abs_ok = np.all(np.abs(a - n)[~mask] <= floor)
    if not abs_ok:
        return np.inf
    return float(np.max(np.abs(a - n)[mask] / denom[mask])) if mask.any() else 0.0


# -- acceptance summary ---------------------------------------------------------------

ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(number: int, name: str, passed: bool, detail: str) -> str:
    line = f"criterion {number} [{'PASS' if passed else 'FAIL'}] {name}: {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
