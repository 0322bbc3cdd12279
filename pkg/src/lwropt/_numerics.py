"""Small vectorized root finders and quadrature rules shared by the solvers."""
import numpy as np

_GL_CACHE = {}


def bisect_increasing(fn, target, lo, hi, iters=100, xtol=0.0):
    """Vectorized bisection for ``fn(x) = target`` with ``fn`` nondecreasing.

    ``lo`` and ``hi`` must bracket the root elementwise (``fn(lo) <= target <=
    fn(hi)``); the returned point is the left end of the final bracket, i.e.
    the infimum of ``{x : fn(x) >= target}`` up to rounding.
    """
    target = np.asarray(target, dtype=float)
    lo = np.broadcast_to(np.asarray(lo, dtype=float), target.shape).copy()
    hi = np.broadcast_to(np.asarray(hi, dtype=float), target.shape).copy()
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        up = fn(mid) >= target
        hi = np.where(up, mid, hi)
        lo = np.where(up, lo, mid)
        if xtol and np.all(hi - lo <= xtol):
            break
    return hi


def expand_bracket(fn, target, x0, step, increasing=True, max_doublings=80):
    """Walk from ``x0`` in the direction that reaches ``target``.

    Returns an array ``x`` with ``fn(x) >= target`` (``increasing``) or
    ``fn(x) <= target`` otherwise. Raises ``RuntimeError`` when doubling fails.
    """
    target = np.asarray(target, dtype=float)
    x = np.broadcast_to(np.asarray(x0, dtype=float), target.shape).copy()
    s = float(step)
    for _ in range(max_doublings):
        vals = fn(x)
        done = vals >= target if increasing else vals <= target
        if np.all(done):
            return x
        x = np.where(done, x, x + s)
        s *= 2.0
    raise RuntimeError("could not bracket root")


def gauss_legendre(n):
    """Nodes and weights on [0, 1]."""
    if n not in _GL_CACHE:
        x, w = np.polynomial.legendre.leggauss(n)
        _GL_CACHE[n] = (0.5 * (x + 1.0), 0.5 * w)
    return _GL_CACHE[n]


def composite_gauss(fn, a, b, pieces=1, order=8):
    """Integrate a vectorized ``fn`` over [a, b] with ``pieces`` equal panels."""
    if b <= a:
        return 0.0
    x, w = gauss_legendre(order)
    edges = np.linspace(a, b, pieces + 1)
    h = np.diff(edges)
    nodes = edges[:-1, None] + h[:, None] * x[None, :]
    vals = fn(nodes.ravel()).reshape(nodes.shape)
    return float(np.sum(vals * w[None, :] * h[:, None]))
