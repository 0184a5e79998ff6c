"""Primitives for the rotation group SO(n) and its Lie algebra so(n).

Conventions used throughout the package:

* The ambient inner product is the half-Frobenius pairing
  ``<A, B> = tr(A^T B) / 2``, so a planar generator ``J = [[0,-1],[1,0]]``
  has unit norm and every rotation satisfies ``||R|| = sqrt(n/2)``.
* Every rotation factors as ``R = P^T L P`` with ``P`` real orthogonal and
  ``L`` block diagonal: 2x2 planar blocks ``R(theta_j)`` with angles in
  ``(0, pi]``, followed by an identity block.  Every skew matrix factors the
  same way with blocks ``lambda_j * J``, ``lambda_j > 0``, followed by zeros.
* Canonical factors are computed from a real Schur decomposition, which
  delivers the orthogonal basis ``P`` directly in real arithmetic.  A complex
  eigendecomposition is deliberately *not* used here; the test-suite keeps one
  as an independent oracle.
* Geodesic distance is ``d(A, B) = sqrt(sum_j theta_j^2)`` over the principal
  angles of ``A^T B``; it is right-invariant and equals the half-Frobenius
  norm of the principal logarithm.

All functions take and return plain ``numpy`` arrays of dtype float64.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import schur

ORTH_TOL = 1e-10    # admitted ||R^T R - I|| for rotation inputs
SKEW_TOL = 1e-12    # admitted ||X + X^T|| for skew inputs
RECON_TOL = 1e-9    # canonical factorization must rebuild its input this well
ANGLE_TOL = 1e-9    # angles at or below this are merged into the fixed subspace


class BranchAmbiguityError(ValueError):
    """Principal logarithm is undefined: some rotation angle sits at pi."""


class ReconstructionError(RuntimeError):
    """A canonical factorization failed to rebuild its input to tolerance."""


def half_frobenius(a: np.ndarray, b: np.ndarray) -> float:
    """Inner product ``tr(a^T b) / 2``.

    Works on stacks as well: for inputs of shape (..., n, n) the contraction
    runs over the trailing two axes.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return np.einsum("...ij,...ij->...", a, b) / 2.0


def norm(a: np.ndarray) -> float:
    """Half-Frobenius norm ``sqrt(<a, a>)``."""
    a = np.asarray(a, dtype=float)
    return np.sqrt(np.einsum("...ij,...ij->...", a, a) / 2.0)


def project_skew(x: np.ndarray) -> np.ndarray:
    """Orthogonal projection of an ambient matrix onto so(n): ``(x - x^T)/2``."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != x.shape[-2]:
        raise ValueError(f"square matrix required, got shape {x.shape}")
    return (x - np.swapaxes(x, -1, -2)) / 2.0


def project_tangent(x: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Orthogonal projection of ``x`` onto the tangent space of SO(n) at ``r``.

    The tangent space at ``r`` is ``so(n) r``; the projection is
    ``((x r^T - r x^T) / 2) r``.
    """
    x = np.asarray(x, dtype=float)
    check_rotation(r)
    rt = np.swapaxes(r, -1, -2)
    xt = np.swapaxes(x, -1, -2)
    return ((x @ rt - r @ xt) / 2.0) @ r


def check_rotation(r: np.ndarray, tol: float = ORTH_TOL) -> np.ndarray:
    """Validate that ``r`` lies in SO(n) up to ``tol``; return it as float64.

    Raises ValueError on shape problems, orthogonality drift beyond ``tol``
    (measured in the half-Frobenius norm of ``r^T r - I``), or negative
    determinant.
    """
    r = np.asarray(r, dtype=float)
    if r.ndim < 2 or r.shape[-1] != r.shape[-2]:
        raise ValueError(f"square matrix required, got shape {r.shape}")
    if not np.all(np.isfinite(r)):
        raise ValueError("non-finite entries in rotation input")
    n = r.shape[-1]
    gram_err = norm(np.swapaxes(r, -1, -2) @ r - np.eye(n))
    if np.any(gram_err > tol):
        raise ValueError(f"not orthogonal within {tol}: ||R^T R - I|| = {np.max(gram_err)}")
    if np.any(np.linalg.det(r) < 0.0):
        raise ValueError("determinant is negative: matrix lies outside SO(n)")
    return r


def check_skew(x: np.ndarray, tol: float = SKEW_TOL) -> np.ndarray:
    """Validate that ``x`` is skew-symmetric up to ``tol``; return it as float64."""
    x = np.asarray(x, dtype=float)
    if x.ndim < 2 or x.shape[-1] != x.shape[-2]:
        raise ValueError(f"square matrix required, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite entries in skew input")
    sym_err = norm(x + np.swapaxes(x, -1, -2))
    if np.any(sym_err > tol):
        raise ValueError(f"not skew within {tol}: ||X + X^T|| = {np.max(sym_err)}")
    return x


@dataclass(frozen=True)
class PrincipalAngles:
    """Rotation angles of the planar blocks, sorted descending in (tol, pi].

    ``fixed_dim`` is the dimension of the subspace held fixed (eigenvalue-1
    directions plus any block whose angle fell below the extraction tolerance).
    """

    angles: np.ndarray
    fixed_dim: int


@dataclass(frozen=True)
class CanonicalRotation:
    """Factorization ``R = P^T L P`` of a rotation.

    ``basis`` is the (possibly improper) orthogonal matrix ``P`` and
    ``angles`` holds the planar block angles, descending.  ``L`` is
    ``block_diag(R(angles[0]), ..., I)`` and can be rebuilt with
    :meth:`block_matrix`.
    """

    basis: np.ndarray
    angles: np.ndarray

    @property
    def dim(self) -> int:
        return self.basis.shape[0]

    def block_matrix(self) -> np.ndarray:
        return _planar_blocks(self.dim, self.angles)

    def matrix(self) -> np.ndarray:
        return self.basis.T @ self.block_matrix() @ self.basis


@dataclass(frozen=True)
class CanonicalSkew:
    """Factorization ``X = P^T D P`` of a skew matrix.

    ``rates`` holds the positive block rates, descending;
    ``D = block_diag(rates[0]*J, ..., 0)``.
    """

    basis: np.ndarray
    rates: np.ndarray

    @property
    def dim(self) -> int:
        return self.basis.shape[0]

    def block_matrix(self) -> np.ndarray:
        d = np.zeros((self.dim, self.dim))
        for j, lam in enumerate(self.rates):
            k = 2 * j
            d[k, k + 1] = -lam
            d[k + 1, k] = lam
        return d

    def matrix(self) -> np.ndarray:
        return self.basis.T @ self.block_matrix() @ self.basis


def _planar_blocks(n: int, angles: np.ndarray) -> np.ndarray:
    out = np.eye(n)
    for j, th in enumerate(angles):
        k = 2 * j
        c, s = np.cos(th), np.sin(th)
        out[k, k] = c
        out[k, k + 1] = -s
        out[k + 1, k] = s
        out[k + 1, k + 1] = c
    return out


def _schur_blocks(t: np.ndarray, pair_tol: float):
    """Split a block-diagonal quasi-triangular Schur factor into index groups.

    Returns (pairs, singles) where each pair is (i, i+1) spanning a 2x2 block
    and singles are 1x1 positions.  ``pair_tol`` decides whether a subdiagonal
    entry opens a 2x2 block.
    """
    n = t.shape[0]
    pairs, singles = [], []
    i = 0
    while i < n:
        if i + 1 < n and abs(t[i + 1, i]) > pair_tol:
            pairs.append((i, i + 1))
            i += 2
        else:
            singles.append(i)
            i += 1
    return pairs, singles


def canonical_rotation_form(r: np.ndarray) -> CanonicalRotation:
    """Canonical planar-block factorization ``R = P^T L P`` via real Schur.

    Angles are normalized into (0, pi]; paired eigenvalue -1 directions become
    explicit angle-pi blocks.  Raises ReconstructionError if the factors do
    not rebuild ``r`` within RECON_TOL.
    """
    r = check_rotation(r)
    if r.ndim != 2:
        raise ValueError("one matrix at a time")
    n = r.shape[0]
    try:
        t, z = schur(r, output="real")
    except Exception as exc:  # pragma: no cover - scipy failure is exotic here
        raise ReconstructionError(f"Schur decomposition failed: {exc}") from exc

    # T = Z^T R Z is orthogonal and quasi-triangular, hence block diagonal.
    pairs, singles = _schur_blocks(t, pair_tol=1e-13)
    cols_blocks: list[tuple[float, list[int]]] = []
    cols_fixed: list[int] = []
    cols_minus: list[int] = []
    for i, j in pairs:
        c = (t[i, i] + t[j, j]) / 2.0
        s = (t[j, i] - t[i, j]) / 2.0
        if s < 0.0:
            i, j = j, i          # swapping the basis pair flips the sign of sin
            s = -s
        cols_blocks.append((float(np.arctan2(s, c)), [i, j]))
    for i in singles:
        (cols_minus if t[i, i] < 0.0 else cols_fixed).append(i)
    if len(cols_minus) % 2 != 0:
        raise ReconstructionError("odd count of -1 eigenvalues: input is not a rotation")
    for a, b in zip(cols_minus[0::2], cols_minus[1::2]):
        cols_blocks.append((np.pi, [a, b]))

    cols_blocks.sort(key=lambda item: -item[0])
    order = [c for _, cols in cols_blocks for c in cols] + cols_fixed
    basis = z[:, order].T
    angles = np.array([th for th, _ in cols_blocks], dtype=float)
    form = CanonicalRotation(basis=basis, angles=angles)
    err = norm(form.matrix() - r)
    if err > RECON_TOL:
        raise ReconstructionError(f"canonical rotation factors rebuild to {err}")
    return form


def canonical_skew_form(x: np.ndarray, rate_tol: float = 1e-12) -> CanonicalSkew:
    """Canonical block factorization ``X = P^T D P`` of a skew matrix.

    Block rates below ``rate_tol`` are absorbed into the kernel.  Raises
    ReconstructionError if the factors do not rebuild ``x`` within RECON_TOL.
    """
    x = check_skew(x)
    if x.ndim != 2:
        raise ValueError("one matrix at a time")
    t, z = schur(x, output="real")
    pairs, singles = _schur_blocks(t, pair_tol=rate_tol)
    blocks: list[tuple[float, list[int]]] = []
    kernel: list[int] = list(singles)
    for i, j in pairs:
        lam = (t[j, i] - t[i, j]) / 2.0
        if lam < 0.0:
            i, j = j, i
            lam = -lam
        if lam <= rate_tol:
            kernel.extend([i, j])
        else:
            blocks.append((float(lam), [i, j]))
    blocks.sort(key=lambda item: -item[0])
    order = [c for _, cols in blocks for c in cols] + sorted(kernel)
    basis = z[:, order].T
    rates = np.array([lam for lam, _ in blocks], dtype=float)
    form = CanonicalSkew(basis=basis, rates=rates)
    err = norm(form.matrix() - x)
    if err > RECON_TOL:
        raise ReconstructionError(f"canonical skew factors rebuild to {err}")
    return form


def principal_angles(r: np.ndarray, tol: float = ANGLE_TOL) -> PrincipalAngles:
    """Principal rotation angles of ``r``, descending, with angles <= tol
    merged into the fixed subspace."""
    form = canonical_rotation_form(r)
    kept = form.angles[form.angles > tol]
    return PrincipalAngles(angles=kept, fixed_dim=r.shape[-1] - 2 * len(kept))


def geodesic_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Bi-invariant geodesic distance ``sqrt(sum_j theta_j(a^T b)^2)``."""
    a = check_rotation(a)
    b = check_rotation(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    form = canonical_rotation_form(a.T @ b)
    return float(np.sqrt(np.sum(form.angles**2)))


def trace_gap(r: np.ndarray) -> float:
    """Trace defect ``n - tr(r)`` of a rotation.

    Equals ``sum_j 4 sin^2(theta_j / 2)`` over the principal angles, so it is
    squeezed between ``4 sin^2(d/2)`` and ``d^2`` whenever ``d <= pi``.
    """
    r = check_rotation(r)
    return float(r.shape[-1] - np.trace(r))


def exp_so(x: np.ndarray) -> np.ndarray:
    """Exponential of a skew matrix, evaluated blockwise.

    The canonical factorization reduces the exponential to exact cos/sin on
    each planar block, so the result is orthogonal to machine precision for
    any input norm.
    """
    form = canonical_skew_form(check_skew(x))
    lam = _planar_blocks(form.dim, form.rates)
    return form.basis.T @ lam @ form.basis


def log_so(r: np.ndarray, tol: float = ANGLE_TOL) -> np.ndarray:
    """Principal logarithm of a rotation.

    Raises BranchAmbiguityError when any principal angle lies within ``tol``
    of pi, where the principal branch is not defined.
    """
    form = canonical_rotation_form(r)
    if form.angles.size and form.angles[0] >= np.pi - tol:
        raise BranchAmbiguityError(
            f"angle {form.angles[0]} within {tol} of pi: principal log undefined"
        )
    n = form.dim
    d = np.zeros((n, n))
    for j, th in enumerate(form.angles):
        k = 2 * j
        d[k, k + 1] = -th
        d[k + 1, k] = th
    return form.basis.T @ d @ form.basis


def as_generator(seed) -> np.random.Generator:
    """Coerce a 64-bit seed, SeedSequence, or Generator into a Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def sample_haar(n: int, seed) -> np.ndarray:
    """Haar-distributed rotation in SO(n).

    QR of a Gaussian matrix with the R-diagonal sign correction gives Haar
    measure on O(n); a negative determinant is repaired by swapping one column
    pair, which maps the improper coset onto SO(n) measure-preservingly.
    """
    if n < 2:
        raise ValueError("n >= 2 required")
    rng = as_generator(seed)
    g = rng.normal(size=(n, n))
    q, r = np.linalg.qr(g)
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0.0:
        q[:, [0, 1]] = q[:, [1, 0]]
    return q


def sample_ball(n: int, radius: float, seed) -> np.ndarray:
    """Rotation sampled inside the open geodesic ball of ``radius`` about I.

    Draws a uniform unit-norm skew direction and a uniform radial coordinate
    in [0, radius), then exponentiates.  Requires 0 < radius <= pi so the
    radial coordinate equals the geodesic distance of the sample.
    """
    if n < 2:
        raise ValueError("n >= 2 required")
    if not (0.0 < radius <= np.pi):
        raise ValueError(f"radius must lie in (0, pi], got {radius}")
    rng = as_generator(seed)
    while True:
        u = project_skew(rng.normal(size=(n, n)))
        u_norm = norm(u)
        if u_norm > 1e-12:      # zero draw has probability zero
            break
    rho = rng.uniform(0.0, radius)
    return exp_so((rho / u_norm) * u)
