"""Feature-space counting, symbolic expansion, NTK spectra and feature dumps."""
from __future__ import annotations

import itertools
import math
from collections import Counter
from dataclasses import dataclass, field, replace

import numpy as np

from .core_math import BigCount, binomial, symmetric_eigenvalues
from .network import NetworkParams, NetworkSpec, backward, branch_width, forward, init_network
from .tasks import make_coordinate_grid
from .training import TrainConfig, mse_loss, train

MAX_EXPANSION_TERMS = 10 ** 6


def feature_space_dim(c: int, n: int) -> BigCount:
    if c < 1 or n < 1:
        raise ValueError("width and split count must be >= 1")
    if n == 1:
        return BigCount(c, math.log10(c))
    w = branch_width(c, n)
    return binomial(w + n - 1, n)


def enumerate_monomials(w: int, n: int) -> set[tuple[int, ...]]:
    """Degree-``n`` monomials over ``w`` variables as sorted tuples of 0-based indices."""
    if w < 1 or n < 1:
        raise ValueError("w and n must be >= 1")
    return set(itertools.combinations_with_replacement(range(w), n))


def monomial_str(mono: tuple[int, ...]) -> str:
    parts = []
    for var, power in sorted(Counter(mono).items()):
        parts.append(f"z{var + 1}" + (f"^{power}" if power > 1 else ""))
    return "*".join(parts)


@dataclass
class PolynomialMap:
    terms: dict = field(default_factory=dict)  # sorted index tuple -> coefficient

    def evaluate(self, z) -> np.ndarray:
        """Evaluate at one point ``(w,)`` or a batch ``(m, w)``."""
        z = np.asarray(z, dtype=np.float64)
        single = z.ndim == 1
        zb = z[None, :] if single else z
        out = np.zeros(len(zb))
        for mono, coef in self.terms.items():
            out += coef * np.prod(zb[:, list(mono)], axis=1)
        return out[0] if single else out

    def to_dict(self) -> dict:
        return {monomial_str(k): v for k, v in sorted(self.terms.items())}


def expand_split_layer(rows) -> PolynomialMap:
    """Expand ``prod_n (sum_j w[n][j] z_j)`` into canonical monomials.

    ``rows`` holds one weight row per branch, all of the same length ``w``.
    """
    rows = [np.asarray(r, dtype=np.float64).ravel() for r in rows]
    n = len(rows)
    if n < 1:
        raise ValueError("need at least one branch")
    w = rows[0].size
    if any(r.size != w for r in rows):
        raise ValueError("branch rows differ in length")
    if w ** n > MAX_EXPANSION_TERMS:
        raise ValueError(f"expansion has {w}^{n} terms, above the {MAX_EXPANSION_TERMS} limit")
    acc: dict = {}
    for js in itertools.product(range(w), repeat=n):
        coef = 1.0
        for r, j in zip(rows, js):
            coef *= r[j]
        key = tuple(sorted(js))
        acc[key] = acc.get(key, 0.0) + coef
    return PolynomialMap({k: v for k, v in acc.items() if v != 0.0})


def optimal_split(c: int) -> tuple[float, int]:
    """Empirical best split count ``(0.17 c)^(2/3)`` and its admissible integer."""
    if c < 1:
        raise ValueError("width must be >= 1")
    n_star = (0.17 * c) ** (2.0 / 3.0)
    rec = int(math.floor(n_star + 0.5))
    # the lower bound wins for c = 1, where [2, c^2] is empty
    return n_star, max(2, min(rec, c * c))


NTK_DECADES = tuple(range(-6, 3))  # buckets [1e-6, 1e-5) ... [1e2, 1e3)


@dataclass
class NtkReport:
    coords: np.ndarray
    kernel: np.ndarray
    eigenvalues: np.ndarray

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.kernel))

    def summary(self) -> dict:
        ev = self.eigenvalues
        pos = ev[ev > 0]
        buckets = {}
        for d in NTK_DECADES:
            lo, hi = 10.0 ** d, 10.0 ** (d + 1)
            buckets[f"1e{d}"] = int(np.sum((ev >= lo) & (ev < hi)))
        buckets["below"] = int(np.sum(ev < 10.0 ** NTK_DECADES[0]))
        buckets["above"] = int(np.sum(ev >= 10.0 ** (NTK_DECADES[-1] + 1)))
        return {
            "count": int(ev.size),
            "max": float(ev[0]),
            "min_positive": float(pos.min()) if pos.size else 0.0,
            "log10_spread": float(math.log10(ev[0] / pos.min())) if pos.size else 0.0,
            "trace": float(np.trace(self.kernel)),
            "decades": buckets,
        }


def jacobian(spec: NetworkSpec, params: NetworkParams, coords) -> np.ndarray:
    """``(M, P)`` derivatives of the scalar output at each sample w.r.t. every parameter."""
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim == 1:
        coords = coords[:, None]
    rows = []
    for x in coords:
        out, cache = forward(spec, params, x[None, :])
        grads, _ = backward(spec, params, cache, np.ones_like(out))
        rows.append(grads.flatten())
    return np.stack(rows)


def empirical_ntk(spec: NetworkSpec, params: NetworkParams, coords) -> NtkReport:
    if spec.d_out != 1:
        raise ValueError("empirical NTK is implemented for scalar outputs only")
    coords = np.asarray(coords, dtype=np.float64)
    if len(coords) > 512:
        raise ValueError("at most 512 sample points")
    j = jacobian(spec, params, coords)
    m = len(j)
    k = np.empty((m, m))
    for a in range(m):
        for b in range(a, m):
            k[a, b] = k[b, a] = float(j[a] @ j[b])
    return NtkReport(coords, k, symmetric_eigenvalues(k))


def first_layer_features(spec: NetworkSpec, params: NetworkParams, h: int, w: int) -> np.ndarray:
    """Post-activation outputs of the first layer on an ``h x w`` grid, shape ``(units, h, w)``."""
    if spec.d_in != 2:
        raise ValueError("feature dumps need 2-D coordinates")
    if len(spec.layers()) < 2:
        raise ValueError("network has no hidden block")
    coords = make_coordinate_grid(h, w)
    _, cache = forward(spec, params, coords)
    feats = cache.layers[0].post
    return feats.T.reshape(-1, h, w)


def _normalize(tile: np.ndarray) -> np.ndarray:
    lo, hi = tile.min(), tile.max()
    if hi - lo <= 0:
        return np.zeros_like(tile)
    return (tile - lo) / (hi - lo)


def tile_mosaic(tiles: np.ndarray, pad: int = 1) -> np.ndarray:
    """Arrange ``(k, h, w)`` tiles, each normalized to [0, 1], on a near-square grid."""
    k, h, w = tiles.shape
    cols = int(math.ceil(math.sqrt(k)))
    rows = int(math.ceil(k / cols))
    out = np.zeros((rows * (h + pad) + pad, cols * (w + pad) + pad))
    for i in range(k):
        r, c = divmod(i, cols)
        y, x = pad + r * (h + pad), pad + c * (w + pad)
        out[y:y + h, x:x + w] = _normalize(tiles[i])
    return out


def dump_first_layer_features(spec: NetworkSpec, params: NetworkParams, h: int, w: int):
    """Returns ``(mosaic, tiles)``; write the mosaic with :func:`split_inr.io.write_pgm`."""
    tiles = first_layer_features(spec, params, h, w)
    return tile_mosaic(tiles), np.stack([_normalize(t) for t in tiles])


def spectral_peak_count(tile: np.ndarray, rel: float = 0.1) -> int:
    """Local maxima of the Hann-windowed 2-D amplitude spectrum above ``rel`` of its max."""
    t = np.asarray(tile, dtype=np.float64)
    t = t - t.mean()
    win = np.outer(np.hanning(t.shape[0]), np.hanning(t.shape[1]))
    mag = np.abs(np.fft.fft2(t * win))
    top = mag.max()
    if top <= 0:
        return 0
    is_peak = mag > rel * top
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dy or dx:
                is_peak &= mag >= np.roll(np.roll(mag, dy, axis=0), dx, axis=1)
    return int(is_peak.sum())


def finite_difference_gradients(spec: NetworkSpec, params: NetworkParams, coords, loss_fn,
                                h: float = 1e-5, dtype=np.float64) -> NetworkParams:
    """Central differences of ``loss_fn(outputs)[0]`` for every parameter.

    With ``dtype=np.longdouble`` the perturbed forward passes run in extended
    precision, which pushes the rounding floor of the quotient (about
    ``eps * loss / h``) far below small gradient entries. ``loss_fn`` must then
    keep the precision of the outputs it receives.
    """
    total = params.size()
    if total > 10 ** 4:
        raise ValueError(f"{total} parameters is too many for finite differences")
    work = NetworkParams([[(w.astype(dtype), None if b is None else b.astype(dtype)) for w, b in layer]
                          for layer in params.layers])
    grads = params.zeros_like()
    for p, g in zip(work.arrays(), grads.arrays()):
        flat_p = p.reshape(-1)
        flat_g = g.reshape(-1)
        for i in range(flat_p.size):
            orig = flat_p[i]
            flat_p[i] = orig + h
            up = loss_fn(forward(spec, work, coords)[0])[0]
            flat_p[i] = orig - h
            down = loss_fn(forward(spec, work, coords)[0])[0]
            flat_p[i] = orig
            flat_g[i] = (up - down) / (2.0 * h)
    return grads


def max_relative_error(analytic: NetworkParams, numeric: NetworkParams, floor: float = 1e-8) -> float:
    a = analytic.flatten()
    n = numeric.flatten()
    return float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)))


def split_sweep(c_values, n_values, run) -> dict:
    """Score every admissible ``(c, n)`` with ``run(c, n) -> metric`` (higher is better).

    ``n = 1`` stands for the unsplit baseline. The report lists each row and,
    per width, the best split next to the ``(0.17 c)^(2/3)`` prediction.
    """
    rows = []
    best = {}
    for c in c_values:
        n_star, rec = optimal_split(c)
        for n in n_values:
            if n != 1 and not 2 <= n <= c * c:
                raise ValueError(f"split {n} is not admissible for width {c}")
            score = float(run(c, n))
            rows.append({"width": c, "splits": n, "metric": score})
            if c not in best or score > best[c]["metric"]:
                best[c] = {"width": c, "best_splits": n, "metric": score, "n_star": n_star,
                           "recommended": rec, "distance_to_n_star": abs(n - n_star)}
    return {"rows": rows, "best": [best[c] for c in c_values]}


def matched_pair(spec: NetworkSpec, n: int = 2) -> tuple[NetworkSpec, NetworkSpec]:
    """Baseline and split variants sharing everything but the split count."""
    return replace(spec, num_splits=0, split_input=False), replace(spec, num_splits=n)


def ntk_signal(x) -> np.ndarray:
    """1-D regression target: two sinusoids plus a square wave."""
    x = np.asarray(x, dtype=np.float64)
    return np.sin(2 * np.pi * x) + 0.5 * np.sin(10 * np.pi * x) + 0.25 * np.sign(np.sin(6 * np.pi * x))


class _Signal1D:
    def __init__(self, x, y):
        self.x = np.asarray(x, dtype=np.float64).reshape(-1, 1)
        self.y = np.asarray(y, dtype=np.float64).reshape(-1, 1)

    def batch(self, it, prng):
        return self.x, self.y

    def loss(self, pred, target):
        return mse_loss(pred, target)

    def metric(self, spec, params):
        return mse_loss(forward(spec, params, self.x)[0], self.y)[0]


def ntk_on_signal(spec: NetworkSpec, seed: int, points: int = 64, iterations: int = 0,
                  learning_rate: float = 1e-3) -> NtkReport:
    """Empirical NTK on ``points`` samples of [-1, 1].

    With the default ``iterations = 0`` this is the kernel at initialization. A positive
    count first fits the 1-D test signal for that many Adam steps.
    """
    if spec.d_in != 1 or spec.d_out != 1:
        raise ValueError("the 1-D protocol needs a scalar-in, scalar-out network")
    x = np.linspace(-1.0, 1.0, points)
    if iterations > 0:
        params, _ = train(_Signal1D(x, ntk_signal(x)), spec,
                          TrainConfig(iterations=iterations, learning_rate=learning_rate, seed=seed, log_every=0))
    else:
        params = init_network(spec, seed)
    return empirical_ntk(spec, params, x)
