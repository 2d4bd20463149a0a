"""Small dense numerical kernels shared by the estimators and the simulator.

The random streams use the Philox4x64 counter-based generator: stream
``(seed, index)`` is keyed by ``seed << 64 | index`` and starts at counter 0,
so every draw is a pure function of ``(seed, index, counter)``.
"""

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from numpy.polynomial.legendre import leggauss
from scipy import linalg, special

RNG_ALGORITHM = "philox4x64-10"

_MASK64 = (1 << 64) - 1


def solve_spd(A, b):
    """Solve ``A x = b`` for symmetric positive definite ``A`` by Cholesky.

    Raises
    ------
    numpy.linalg.LinAlgError
        If ``A`` is not positive definite. Callers decide how to regularize.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    c, lower = linalg.cho_factor(A, lower=True, check_finite=True)
    return linalg.cho_solve((c, lower), b)


def gauss_legendre_nodes(n, a=-1.0, b=1.0):
    """Gauss-Legendre nodes and weights mapped to ``[a, b]``."""
    if n < 2:
        raise ValueError("need at least 2 nodes")
    x, w = leggauss(n)
    half = 0.5 * (b - a)
    return half * x + 0.5 * (a + b), half * w


def gauss_hermite_nodes(n):
    """Nodes and weights for expectations under the standard normal.

    ``sum(w * f(x))`` approximates ``E[f(Z)]`` for ``Z ~ N(0, 1)``; the
    weights sum to one.
    """
    if n < 2:
        raise ValueError("need at least 2 nodes")
    x, w = hermegauss(n)
    return x, w / np.sqrt(2.0 * np.pi)


def chi_square_upper_tail(x, df):
    """Upper-tail probability ``P(chi2_df > x)``, i.e. ``Q(df/2, x/2)``."""
    if x < 0:
        raise ValueError("x must be nonnegative")
    if df <= 0:
        raise ValueError("df must be positive")
    if x == 0:
        return 1.0
    return float(special.gammaincc(0.5 * df, 0.5 * x))


def normal_quantile(p):
    """Standard normal quantile via the inverse error function."""
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie in (0, 1)")
    return float(np.sqrt(2.0) * special.erfinv(2.0 * p - 1.0))


@dataclass
class RngStream:
    """Independent random substream identified by ``(seed, index)``.

    Single-owner: do not share an instance across workers. Two instances
    built from the same ``(seed, index)`` produce identical draws.
    """

    seed: int
    index: int = 0
    generator: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        if not (0 <= self.seed <= _MASK64 and 0 <= self.index <= _MASK64):
            raise ValueError("seed and index must be unsigned 64-bit integers")
        key = (self.seed << 64) | self.index
        self.generator = np.random.Generator(np.random.Philox(key=key))

    @property
    def counter(self):
        return self.generator.bit_generator.state["state"]["counter"].copy()

    def spawn(self, index):
        """Another stream under the same seed."""
        return RngStream(self.seed, index)
