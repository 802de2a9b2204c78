import numpy as np
import pytest


def central_diff(f, arrays, h=1e-5):
    """Central finite differences of scalar ``f()`` w.r.t. each array, in place."""
    out = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = a[i]
            a[i] = old + h
            up = f()
            a[i] = old - h
            down = f()
            a[i] = old
            g[i] = (up - down) / (2 * h)
        out.append(g)
    return out


def assert_grads_close(analytic, numeric, rtol, atol=1e-8):
    for k, (a, n) in enumerate(zip(analytic, numeric)):
        np.testing.assert_allclose(a, n, rtol=rtol, atol=atol, err_msg=f"parameter {k}")


@pytest.fixture(scope="session")
def mnist_dir(tmp_path_factory):
    pytest.importorskip("mlxtend")
    from mlxtend.data import mnist_data

    from outskirt.data_io import write_idx

    d = tmp_path_factory.mktemp("mnist5k")
    X, y = mnist_data()
    write_idx(d / "train-images-idx3-ubyte", d / "train-labels-idx1-ubyte",
              np.asarray(X, dtype=np.uint8).reshape(-1, 28, 28), y)
    return d


_CRITERIA = {}


@pytest.fixture
def criterion():
    """Record one acceptance line; the terminal summary prints them in order."""

    def record(number, passed, detail):
        _CRITERIA[number] = (passed, detail)
        print(f"criterion {number}: {'PASS' if passed else 'FAIL'} - {detail}")
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(_CRITERIA):
        passed, detail = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'} - {detail}")
