"""Matrix exponential by scaling and squaring with diagonal Pade approximants.

Follows Higham (2005): choose the lowest Pade degree m in {3, 5, 7, 9, 13}
whose backward-error bound theta_m covers ||A||_1, otherwise scale A by
2^-s so that ||A / 2^s||_1 <= theta_13, evaluate r_13 and square s times.
"""

import numpy as np
from scipy.linalg import lu_factor, lu_solve

_THETA = {
    3: 1.495585217958292e-2,
    5: 2.539398330063230e-1,
    7: 9.504178996162932e-1,
    9: 2.097847961257068e0,
    13: 5.371920351148152e0,
}

_PADE = {
    3: (120.0, 60.0, 12.0, 1.0),
    5: (30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0),
    7: (17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0),
    9: (17643225600.0, 8821612800.0, 2075673600.0, 302702400.0, 30270240.0,
        2162160.0, 110880.0, 3960.0, 90.0, 1.0),
    13: (64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
         1187353796428800.0, 129060195264000.0, 10559470521600.0,
         670442572800.0, 33522128640.0, 1323241920.0, 40840800.0, 960960.0,
         16380.0, 182.0, 1.0),
}


def _pade_low(A, m, ident):
    b = _PADE[m]
    A2 = A @ A
    powers = [ident, A2]
    for _ in range(2, m // 2 + 1):
        powers.append(powers[-1] @ A2)
    U = A @ sum(b[2 * j + 1] * powers[j] for j in range(m // 2 + 1))
    V = sum(b[2 * j] * powers[j] for j in range(m // 2 + 1))
    return U, V


def _pade13(A, ident):
    b = _PADE[13]
    A2 = A @ A
    A4 = A2 @ A2
    A6 = A4 @ A2
    U = A @ (A6 @ (b[13] * A6 + b[11] * A4 + b[9] * A2)
             + b[7] * A6 + b[5] * A4 + b[3] * A2 + b[1] * ident)
    V = (A6 @ (b[12] * A6 + b[10] * A4 + b[8] * A2)
         + b[6] * A6 + b[4] * A4 + b[2] * A2 + b[0] * ident)
    return U, V


def matrix_exponential(m) -> np.ndarray:
    """Return ``exp(m)`` for a square real or complex matrix."""
    A = np.asarray(m)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"matrix_exponential needs a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix_exponential: non-finite entries")
    if not np.iscomplexobj(A):
        A = A.astype(float)
    n = A.shape[0]
    ident = np.eye(n, dtype=A.dtype)
    if n == 0:
        return ident
    norm = np.linalg.norm(A, 1)
    if norm == 0.0:
        return ident

    s = 0
    for m_ in (3, 5, 7, 9):
        if norm <= _THETA[m_]:
            U, V = _pade_low(A, m_, ident)
            break
    else:
        s = max(0, int(np.ceil(np.log2(norm / _THETA[13]))))
        U, V = _pade13(A / 2.0**s, ident)

    R = lu_solve(lu_factor(V - U), V + U)
    for _ in range(s):
        R = R @ R
    return R
