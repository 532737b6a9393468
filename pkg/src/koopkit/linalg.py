"""Dense numeric kernel for small matrices.

Every routine is a pure function of its inputs. Matrices are plain
:class:`numpy.ndarray` objects; real inputs stay real unless the result is
inherently complex (eigen-decompositions, Lyapunov solutions for complex
transitions).
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .exceptions import InstabilityError, NumericFailureError, ShapeError

_EPS = np.finfo(float).eps

__all__ = [
    "EigenDecomposition",
    "as_matrix",
    "svd",
    "pinv",
    "lstsq",
    "eig",
    "eig_order",
    "normalize_vectors",
    "jordan_decomposition",
    "real_block_form",
    "expm",
    "solve_discrete_lyapunov",
    "spectral_radius",
]


def as_matrix(M, name="M", square=False, allow_complex=True):
    """Return ``M`` as a finite 2-D array, raising on bad input."""
    arr = np.asarray(M)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    if np.iscomplexobj(arr):
        if not allow_complex:
            raise ShapeError(f"{name} must be real")
        arr = arr.astype(complex)
    else:
        arr = arr.astype(float)
    if arr.size and not np.all(np.isfinite(arr)):
        raise ShapeError(f"{name} contains NaN or Inf")
    if square and arr.shape[0] != arr.shape[1]:
        raise ShapeError(f"{name} must be square, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class EigenDecomposition:
    """Eigenvalues with right and left eigenvectors.

    Columns of ``right_vectors`` are unit-norm with their first nonzero entry
    real and positive. Columns of ``left_vectors`` are scaled so that
    ``left_vectors.conj().T @ right_vectors`` is the identity whenever the
    eigenvalues are distinct. ``residual_bound`` bounds both the right and
    left residuals relative to ``norm(A)``.
    """

    eigenvalues: np.ndarray
    right_vectors: np.ndarray
    left_vectors: np.ndarray
    residual_bound: float

    @property
    def condition(self):
        """2-norm condition number of the right eigenvector matrix."""
        if self.right_vectors.size == 0:
            return 1.0
        s = np.linalg.svd(self.right_vectors, compute_uv=False)
        return np.inf if s[-1] == 0 else float(s[0] / s[-1])


def svd(M):
    """Thin singular value decomposition ``M = U @ diag(s) @ Vt``.

    Singular values are non-negative and non-increasing.
    """
    M = as_matrix(M)
    if M.size == 0:
        raise ShapeError("svd of an empty matrix")
    try:
        U, s, Vt = np.linalg.svd(M, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericFailureError(f"SVD did not converge: {exc}") from exc
    return U, s, Vt


def pinv(M, tol=None):
    """Moore-Penrose pseudo-inverse by SVD.

    Singular values at or below ``tol * s_max`` are treated as zero. The
    default relative cutoff is ``max(M.shape) * eps``.
    """
    M = as_matrix(M)
    if M.size == 0:
        return np.zeros(M.shape[::-1], dtype=M.dtype)
    if tol is None:
        tol = max(M.shape) * _EPS
    if tol < 0:
        raise ValueError("tol must be non-negative")
    U, s, Vt = svd(M)
    if s[0] == 0:
        return np.zeros(M.shape[::-1], dtype=M.dtype)
    keep = s > tol * s[0]
    s_inv = np.zeros_like(s)
    s_inv[keep] = 1.0 / s[keep]
    return (Vt.conj().T * s_inv) @ U.conj().T


def lstsq(A, B, tol=None):
    """Minimum-norm minimizer of ``||A @ X - B||_F`` via :func:`pinv`."""
    A = as_matrix(A, "A")
    B = np.asarray(B)
    vector = B.ndim == 1
    B = B.reshape(-1, 1) if vector else as_matrix(B, "B")
    if A.shape[0] != B.shape[0]:
        raise ShapeError(f"row counts differ: A {A.shape}, B {B.shape}")
    X = pinv(A, tol) @ B
    return X.ravel() if vector else X


def eig_order(eigenvalues, decimals=12):
    """Permutation sorting eigenvalues by modulus desc, real desc, imag asc.

    Keys are rounded so that conjugate pairs and exact ties compare equal.
    """
    lam = np.asarray(eigenvalues, dtype=complex)
    mod = np.round(np.abs(lam), decimals)
    re = np.round(lam.real, decimals)
    im = np.round(lam.imag, decimals)
    # lexsort uses the last key as primary
    return np.lexsort((im, -re, -mod))


def normalize_vectors(V):
    """Scale columns to unit norm with first nonzero entry real positive."""
    V = np.array(V, dtype=complex)
    for j in range(V.shape[1]):
        col = V[:, j]
        nrm = np.linalg.norm(col)
        if nrm == 0:
            continue
        col = col / nrm
        big = np.flatnonzero(np.abs(col) > 1e-10)
        if big.size:
            lead = col[big[0]]
            col = col * (abs(lead) / lead)
        V[:, j] = col
    return V


def eig(M):
    """Eigen-decomposition of a square matrix with left and right vectors.

    Defective matrices still return (nearly parallel) vectors; the
    :attr:`EigenDecomposition.condition` property exposes this and
    ``residual_bound`` documents the achieved accuracy.
    """
    M = as_matrix(M, square=True)
    n = M.shape[0]
    if n == 0:
        empty = np.zeros((0, 0), dtype=complex)
        return EigenDecomposition(np.zeros(0, dtype=complex), empty, empty, 0.0)
    try:
        lam, W, V = scipy.linalg.eig(M, left=True, right=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericFailureError(f"eigenvalue iteration failed: {exc}") from exc
    lam = lam.astype(complex)
    order = eig_order(lam)
    lam, V, W = lam[order], V[:, order], W[:, order]
    V = normalize_vectors(V)
    W = normalize_vectors(W)
    for j in range(n):
        overlap = np.vdot(W[:, j], V[:, j])
        # near-zero overlap means a defective eigenvalue; leave unit-scaled
        if abs(overlap) > 1e3 * _EPS:
            W[:, j] = W[:, j] / np.conj(overlap)
    scale = max(np.linalg.norm(M, 2), np.finfo(float).tiny)
    right_res = np.linalg.norm(M @ V - V * lam, axis=0)
    left_res = np.linalg.norm(W.conj().T @ M - lam[:, None] * W.conj().T, axis=1)
    bound = float(max(right_res.max(), left_res.max()) / scale)
    return EigenDecomposition(lam, V, W, bound)


def _null_space(M, tol):
    U, s, Vt = np.linalg.svd(M)
    rank = int(np.sum(s > tol))
    return Vt[rank:].conj().T


def _cluster(lam, tol):
    groups = []
    for j, value in enumerate(lam):
        for g in groups:
            if abs(lam[g[0]] - value) <= tol:
                g.append(j)
                break
        else:
            groups.append([j])
    return groups


def jordan_decomposition(M, cluster_tol=1e-5, rank_tol=1e-7):
    """Numerical Jordan form ``M = T @ J @ inv(T)``.

    Eigenvalues closer than ``cluster_tol * max(1, ||M||)`` are merged and
    replaced by their mean. Jordan chains are built from the nested kernels
    of powers of ``M - lambda I``. Returns ``(J, T, block_sizes, values)``
    with blocks ordered by the eigenvalue convention of :func:`eig` and ones
    on the superdiagonal inside each block.
    """
    M = as_matrix(M, square=True).astype(complex)
    n = M.shape[0]
    norm = max(1.0, np.linalg.norm(M, 2))
    lam = scipy.linalg.eigvals(M)
    lam = lam[eig_order(lam)]
    groups = _cluster(lam, cluster_tol * norm)
    chains = []  # (value, [columns])
    for g in groups:
        value = np.mean(lam[g])
        mult = len(g)
        N = M - value * np.eye(n)
        kernels = [np.zeros((n, 0), dtype=complex)]
        Nk = np.eye(n, dtype=complex)
        for k in range(1, mult + 1):
            Nk = Nk @ N
            K = _null_space(Nk, rank_tol * norm**k)
            kernels.append(K)
            if K.shape[1] >= mult:
                break
        depth = len(kernels) - 1
        dims = [K.shape[1] for K in kernels]
        group_chains = []
        for k in range(depth, 0, -1):
            # vectors already accounted for at level k
            taken = [kernels[k - 1]]
            for top, length in group_chains:
                taken.append(np.linalg.matrix_power(N, length - k) @ top[:, None])
            S = np.hstack(taken) if taken else np.zeros((n, 0))
            n_new = (dims[k] - dims[k - 1]) - len(group_chains)
            if n_new <= 0:
                continue
            K = kernels[k]
            if S.shape[1]:
                Qs, _ = np.linalg.qr(S)
                Qs = Qs[:, : np.linalg.matrix_rank(S, tol=rank_tol)]
                R = K - Qs @ (Qs.conj().T @ K)
            else:
                R = K
            U, _, _ = np.linalg.svd(R, full_matrices=False)
            for i in range(n_new):
                group_chains.append((U[:, i], k))
        for top, length in group_chains:
            cols = [np.linalg.matrix_power(N, length - 1 - i) @ top for i in range(length)]
            chains.append((value, cols))
    values = np.array([c[0] for c in chains], dtype=complex)
    order = eig_order(values) if len(chains) else []
    blocks, cols, vals = [], [], []
    for idx in order:
        value, chain = chains[idx]
        lead = np.linalg.norm(chain[0])
        chain = [c / lead for c in chain]
        # first nonzero entry of the eigenvector real positive
        head = chain[0]
        big = np.flatnonzero(np.abs(head) > 1e-10)
        if big.size:
            phase = abs(head[big[0]]) / head[big[0]]
            chain = [c * phase for c in chain]
        blocks.append(len(chain))
        cols.extend(chain)
        vals.append(value)
    if sum(blocks) != n:
        raise NumericFailureError(
            f"Jordan chain construction found {sum(blocks)} of {n} vectors; "
            "adjust cluster_tol/rank_tol"
        )
    T = np.column_stack(cols)
    J = np.zeros((n, n), dtype=complex)
    pos = 0
    for value, size in zip(vals, blocks):
        J[pos:pos + size, pos:pos + size] = value * np.eye(size) + np.eye(size, k=1)
        pos += size
    return J, T, blocks, np.array(vals, dtype=complex)


def real_block_form(eigenvalues, right_vectors):
    """Real block-diagonal form of a diagonalization with conjugate pairs.

    Each conjugate pair ``a +- ib`` becomes the 2x2 block
    ``[[a, b], [-b, a]]`` and its vectors ``(Re v, Im v)``, so that
    ``M @ T = T @ L`` with real ``T`` and ``L``.
    """
    lam = np.asarray(eigenvalues, dtype=complex)
    V = np.asarray(right_vectors, dtype=complex)
    n = lam.size
    L = np.zeros((n, n))
    T = np.zeros((V.shape[0], n))
    j = 0
    while j < n:
        if abs(lam[j].imag) > 1e-12 and j + 1 < n and np.isclose(lam[j + 1], np.conj(lam[j])):
            # use the member with positive imaginary part
            k = j if lam[j].imag > 0 else j + 1
            a, b = lam[k].real, lam[k].imag
            L[j:j + 2, j:j + 2] = [[a, b], [-b, a]]
            T[:, j] = V[:, k].real
            T[:, j + 1] = V[:, k].imag
            j += 2
        else:
            L[j, j] = lam[j].real
            T[:, j] = V[:, j].real
            j += 1
    return L, T


def expm(M):
    """Matrix exponential (scaling and squaring with Pade approximation)."""
    M = as_matrix(M, square=True)
    with np.errstate(over="raise", invalid="raise"):
        try:
            E = scipy.linalg.expm(M)
        except FloatingPointError as exc:
            raise NumericFailureError(f"matrix exponential overflowed: {exc}") from exc
    if not np.all(np.isfinite(E)):
        raise NumericFailureError("matrix exponential overflowed")
    return E


def spectral_radius(M):
    M = as_matrix(M, square=True)
    if M.size == 0:
        return 0.0
    return float(np.max(np.abs(scipy.linalg.eigvals(M))))


def solve_discrete_lyapunov(L, Q):
    """Solve ``L^H P L - P + Q = 0`` for Hermitian ``P``.

    Uses the Kronecker-vectorized linear system; ``n**2`` unknowns, so
    intended for small ``n``.

    Raises
    ------
    InstabilityError
        If the spectral radius of ``L`` is not below one.
    """
    L = as_matrix(L, "L", square=True)
    Q = as_matrix(Q, "Q", square=True)
    n = L.shape[0]
    if Q.shape != L.shape:
        raise ShapeError(f"Q shape {Q.shape} does not match L shape {L.shape}")
    lam = scipy.linalg.eigvals(L)
    worst = lam[np.argmax(np.abs(lam))] if n else 0.0
    if n and abs(worst) >= 1.0:
        raise InstabilityError(
            f"spectral radius {abs(worst):.6g} >= 1 (eigenvalue {worst:.6g}); "
            "no discrete Lyapunov certificate exists",
            eigenvalue=complex(worst),
        )
    # vec(L^H P L) = (L^T kron L^H) vec(P) with column-major vec
    K = np.kron(L.T, L.conj().T) - np.eye(n * n)
    rhs = -Q.reshape(-1, order="F")
    vecP = np.linalg.solve(K, rhs)
    P = vecP.reshape(n, n, order="F")
    P = 0.5 * (P + P.conj().T)
    if not (np.iscomplexobj(L) or np.iscomplexobj(Q)):
        P = P.real
    return P
