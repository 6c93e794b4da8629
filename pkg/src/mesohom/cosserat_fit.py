"""Four-parameter plane-strain Cosserat tensor, its least-squares fit, and the
tip-loaded cantilever statics used as a reference.

Voigt order throughout: ``sigma11, sigma22, sigma21, sigma12, mu1, mu2``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ContractError, ParameterError


@dataclass(frozen=True)
class CosseratParams:
    lam: float
    mu: float
    mu_c: float
    ell: float

    def __post_init__(self):
        if not self.mu > 0.0:
            raise ParameterError(f"shear modulus must be positive, got {self.mu}")
        if self.ell < 0.0:
            raise ParameterError("characteristic length must be non-negative")

    @property
    def E(self) -> float:
        return self.mu * (3.0 * self.lam + 2.0 * self.mu) / (self.lam + self.mu)

    @property
    def nu(self) -> float:
        return self.lam / (2.0 * (self.lam + self.mu))


def build_cosserat_tensor(p: CosseratParams) -> np.ndarray:
    D = np.zeros((6, 6))
    D[0, 0] = D[1, 1] = p.lam + 2.0 * p.mu
    D[0, 1] = D[1, 0] = p.lam
    D[2, 2] = D[3, 3] = p.mu + p.mu_c
    D[2, 3] = D[3, 2] = p.mu - p.mu_c
    D[4, 4] = D[5, 5] = 4.0 * p.mu * p.ell**2
    return D


def fit_cosserat(D) -> CosseratParams:
    """Frobenius least-squares fit of :func:`build_cosserat_tensor` to ``D``.

    The template is linear in ``(lam, mu, mu_c, c = 4 mu ell^2)``. With
    ``a, b, s, d, c`` the means of the diagonal normal, off-diagonal normal,
    diagonal shear, off-diagonal shear and couple entries, the normal
    equations give::

        mu_c = (s - d)/2,  mu = ((s + d)/2 + (a - b)/2)/2,  lam = (a + b)/2 - mu
    """
    D = np.asarray(D, dtype=float)
    if D.shape != (6, 6):
        raise ContractError(f"expected a 6x6 tensor, got {D.shape}")
    a = 0.5 * (D[0, 0] + D[1, 1])
    b = 0.5 * (D[0, 1] + D[1, 0])
    s = 0.5 * (D[2, 2] + D[3, 3])
    d = 0.5 * (D[2, 3] + D[3, 2])
    c = 0.5 * (D[4, 4] + D[5, 5])
    mu_c = 0.5 * (s - d)
    mu = 0.5 * (0.5 * (s + d) + 0.5 * (a - b))
    lam = 0.5 * (a + b) - mu
    if not mu > 0.0:
        raise ParameterError(f"fitted shear modulus is not positive ({mu})")
    if c < 0.0:
        warnings.warn("fitted couple modulus is negative; setting ell = 0", RuntimeWarning, stacklevel=2)
        ell = 0.0
    else:
        ell = math.sqrt(c / (4.0 * mu))
    return CosseratParams(lam=lam, mu=mu, mu_c=mu_c, ell=ell)


def fit_residual(D) -> float:
    D = np.asarray(D, dtype=float)
    return float(np.linalg.norm(D - build_cosserat_tensor(fit_cosserat(D))))


def beam_oracle(P: float, S: float, D: float, x):
    """Section forces ``(N, V, M)`` of a cantilever clamped at ``x = 0`` with a
    downward tip load ``P`` at ``x = S``. ``D`` (depth) does not enter."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0.0) or np.any(x > S):
        raise ParameterError(f"x must lie in [0, {S}]")
    if not D > 0.0:
        raise ParameterError("depth must be positive")
    N = np.zeros_like(x)
    V = np.full_like(x, -P)
    M = -P * (S - x)
    if x.ndim == 0:
        return float(N), float(V), float(M)
    return N, V, M


# ---------------------------------------------------------------------------
# Fixtures
# ---------------------------------------------------------------------------


def _data_path(name: str) -> Path:
    return Path(str(resources.files("mesohom") / "data" / name))


def load_tensor(path) -> np.ndarray:
    """Read a 6x6 fixture. The header's ``units: 1e9 ...`` line sets the scale."""
    path = Path(path)
    scale = 1.0
    rows = []
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            if "units:" in line:
                tok = line.split("units:")[1].split()[0]
                scale = float(tok)
            continue
        rows.append([float(v) for v in line.split()])
    M = np.array(rows)
    if M.shape != (6, 6):
        raise ContractError(f"{path}: expected 6x6 matrix, got {M.shape}")
    return M * scale


def rve_tensor(beta: str = "0") -> np.ndarray:
    names = {"0": "rve_beta0.txt", "1e5": "rve_beta1e5.txt"}
    if beta not in names:
        raise ParameterError(f"no RVE fixture for beta={beta}; available: {sorted(names)}")
    return load_tensor(_data_path(names[beta]))


def reference_parameters() -> dict[float, CosseratParams]:
    """Published parameter table keyed by beta, in SI units."""
    out = {}
    for line in _data_path("cosserat_params.txt").read_text().splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        b, lam, mu, mu_c, ell = (float(v) for v in line.split()[:5])
        out[b] = CosseratParams(lam * 1e9, mu * 1e9, mu_c * 1e9, ell * 1e-2)
    return out
