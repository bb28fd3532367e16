"""NumPy reference kernels for the corotational grid elements.

These are the hot loops of the simulator: per-cell force, tangent-stiffness
blocks, and the per-cell force/parameter dot products used by the adjoint.
A compiled twin (``_speedups``) implements the 2D entry points with identical
signatures; :mod:`aquadesign.kernels` picks the backend at import time.

Deformation gradients are evaluated at the tensor-product Gauss points of
each square/cubic cell.  The passive material is corotational linear
elasticity (polar rotation per quadrature point); muscles contribute the
anisotropic energy ``act/2 * |F f|^2`` per unit volume, whose stress is
``act * F (f f^T)``.
"""

import numpy as np

BACKEND_NAME = "python"


def _polar2(F):
    """Closed-form 2x2 polar rotation, batched."""
    x = F[..., 0, 0] + F[..., 1, 1]
    y = F[..., 0, 1] - F[..., 1, 0]
    r = np.sqrt(x * x + y * y)
    R = np.empty_like(F)
    R[..., 0, 0] = x / r
    R[..., 0, 1] = y / r
    R[..., 1, 0] = -y / r
    R[..., 1, 1] = x / r
    return R


def _check_dets(det):
    if det.min() <= 0.0:
        cell = int(np.argwhere(det <= 0.0)[0][0])
        raise ValueError(f"inverted element in cell {cell}")


def _deformation2(q, cells, grads):
    X = q[cells]                                # (nc, 4, 2)
    F = np.einsum("cad,qae->cqde", X, grads)    # (nc, nq, 2, 2)
    det = F[..., 0, 0] * F[..., 1, 1] - F[..., 0, 1] * F[..., 1, 0]
    _check_dets(det)
    R = _polar2(F)
    trS = np.einsum("cqde,cqde->cq", R, F)
    return F, R, trS


def elastic2d_force(q, cells, grads, wq, mu, lam, act, fibers):
    F, R, trS = _deformation2(q, cells, grads)
    P = (2.0 * mu[:, None, None, None] * (F - R)
         + lam[:, None, None, None] * (trS - 2.0)[..., None, None] * R)
    if act is not None and np.any(act != 0.0):
        Ff = np.einsum("cqde,ce->cqd", F, fibers)
        P = P + act[:, None, None, None] * np.einsum("cqd,ce->cqde", Ff, fibers)
    fe = -wq * np.einsum("cqde,qae->cqad", P, grads).sum(axis=1)  # (nc, 4, 2)
    f = np.zeros_like(q)
    np.add.at(f, cells.ravel(), fe.reshape(-1, 2))
    return f


def elastic2d_energy(q, cells, grads, wq, mu, lam, act, fibers):
    F, R, trS = _deformation2(q, cells, grads)
    dev = ((F - R) ** 2).sum(axis=(-1, -2))
    e = wq * (mu[:, None] * dev + 0.5 * lam[:, None] * (trS - 2.0) ** 2)
    if act is not None and np.any(act != 0.0):
        Ff = np.einsum("cqde,ce->cqd", F, fibers)
        e = e + wq * 0.5 * act[:, None] * (Ff ** 2).sum(axis=-1)
    return float(e.sum())


def elastic2d_hessian_blocks(q, cells, grads, wq, mu, lam, act, fibers, bmats):
    """Per-cell 8x8 energy Hessian blocks.

    ``bmats`` maps nodal displacements to vec(dF) per Gauss point, shape
    ``(nq, 4, 8)``; it only depends on the cell geometry and is precomputed.
    """
    F, R, trS = _deformation2(q, cells, grads)
    nc, nq = F.shape[:2]
    vecR = R.reshape(nc, nq, 4)
    RJ = np.stack([R[..., 0, 1], -R[..., 0, 0], R[..., 1, 1], -R[..., 1, 0]], axis=-1)
    beta = lam[:, None] * (trS - 2.0) - 2.0 * mu[:, None]
    D = np.zeros((nc, nq, 4, 4))
    idx = np.arange(4)
    D[..., idx, idx] = 2.0 * mu[:, None, None]
    D += lam[:, None, None, None] * np.einsum("cqr,cqs->cqrs", vecR, vecR)
    D += (beta / trS)[..., None, None] * np.einsum("cqr,cqs->cqrs", RJ, RJ)
    if act is not None and np.any(act != 0.0):
        ff = np.einsum("cd,ce->cde", fibers, fibers)
        D[..., 0:2, 0:2] += act[:, None, None, None] * ff[:, None]
        D[..., 2:4, 2:4] += act[:, None, None, None] * ff[:, None]
    return wq * np.einsum("qra,cqrs,qsb->cab", bmats, D, bmats)


def elastic2d_dots(q, y, cells, grads, wq, mu_unit, lam_unit, fibers):
    """Adjoint contractions: per-cell ``y . d(force)/d(modulus)`` and
    ``y . d(force)/d(activation)``.

    ``mu_unit``/``lam_unit`` are the Lame factors of a unit Young's modulus;
    the passive force is linear in the modulus, so the modulus sensitivity is
    the unit-modulus force dotted with the adjoint field.
    """
    F, R, trS = _deformation2(q, cells, grads)
    Punit = 2.0 * mu_unit * (F - R) + lam_unit * (trS - 2.0)[..., None, None] * R
    fe = -wq * np.einsum("cqde,qae->cad", Punit, grads)
    yc = y[cells]                               # (nc, 4, 2)
    dots_e = np.einsum("cad,cad->c", fe, yc)
    Ff = np.einsum("cqde,ce->cqd", F, fibers)
    Pact = np.einsum("cqd,ce->cqde", Ff, fibers)
    fa = -wq * np.einsum("cqde,qae->cad", Pact, grads)
    dots_act = np.einsum("cad,cad->c", fa, yc)
    return dots_e, dots_act


# ---------------------------------------------------------------------------
# 3D variants (NumPy only; the compiled backend covers the 2D hot path).

_W_BASIS = np.array([
    [[0, 0, 0], [0, 0, -1], [0, 1, 0]],
    [[0, 0, 1], [0, 0, 0], [-1, 0, 0]],
    [[0, -1, 0], [1, 0, 0], [0, 0, 0]],
], dtype=float)


def _polar3(F):
    U, s, Vt = np.linalg.svd(F)
    R = U @ Vt
    S = np.einsum("...ki,...k,...kj->...ij", Vt, s, Vt)
    return R, S, s.sum(axis=-1)


def _deformation3(q, cells, grads):
    X = q[cells]
    F = np.einsum("cad,qae->cqde", X, grads)
    det = np.linalg.det(F)
    _check_dets(det)
    R, S, trS = _polar3(F)
    return F, R, S, trS


def elastic3d_force(q, cells, grads, wq, mu, lam, act, fibers):
    F, R, S, trS = _deformation3(q, cells, grads)
    P = (2.0 * mu[:, None, None, None] * (F - R)
         + lam[:, None, None, None] * (trS - 3.0)[..., None, None] * R)
    if act is not None and np.any(act != 0.0):
        Ff = np.einsum("cqde,ce->cqd", F, fibers)
        P = P + act[:, None, None, None] * np.einsum("cqd,ce->cqde", Ff, fibers)
    fe = -wq * np.einsum("cqde,qae->cqad", P, grads).sum(axis=1)
    f = np.zeros_like(q)
    np.add.at(f, cells.ravel(), fe.reshape(-1, 3))
    return f


def elastic3d_energy(q, cells, grads, wq, mu, lam, act, fibers):
    F, R, S, trS = _deformation3(q, cells, grads)
    dev = ((F - R) ** 2).sum(axis=(-1, -2))
    e = wq * (mu[:, None] * dev + 0.5 * lam[:, None] * (trS - 3.0) ** 2)
    if act is not None and np.any(act != 0.0):
        Ff = np.einsum("cqde,ce->cqd", F, fibers)
        e = e + wq * 0.5 * act[:, None] * (Ff ** 2).sum(axis=-1)
    return float(e.sum())


def elastic3d_hessian_blocks(q, cells, grads, wq, mu, lam, act, fibers, bmats):
    F, R, S, trS = _deformation3(q, cells, grads)
    nc, nq = F.shape[:2]
    vecR = R.reshape(nc, nq, 9)
    T = np.stack([(R @ _W_BASIS[j]).reshape(nc, nq, 9) for j in range(3)], axis=-1)
    eye = np.eye(3)
    L = trS[..., None, None] * eye - S
    X = np.linalg.solve(L, np.swapaxes(T, -1, -2))      # (nc, nq, 3, 9)
    beta = lam[:, None] * (trS - 3.0) - 2.0 * mu[:, None]
    D = np.zeros((nc, nq, 9, 9))
    idx = np.arange(9)
    D[..., idx, idx] = 2.0 * mu[:, None, None]
    D += lam[:, None, None, None] * np.einsum("cqr,cqs->cqrs", vecR, vecR)
    D += beta[..., None, None] * np.einsum("cqrk,cqks->cqrs", T, X)
    if act is not None and np.any(act != 0.0):
        ff = np.einsum("cd,ce->cde", fibers, fibers)
        for i in range(3):
            D[..., 3 * i:3 * i + 3, 3 * i:3 * i + 3] += \
                act[:, None, None, None] * ff[:, None]
    return wq * np.einsum("qra,cqrs,qsb->cab", bmats, D, bmats)


def elastic3d_dots(q, y, cells, grads, wq, mu_unit, lam_unit, fibers):
    F, R, S, trS = _deformation3(q, cells, grads)
    Punit = 2.0 * mu_unit * (F - R) + lam_unit * (trS - 3.0)[..., None, None] * R
    fe = -wq * np.einsum("cqde,qae->cad", Punit, grads)
    yc = y[cells]
    dots_e = np.einsum("cad,cad->c", fe, yc)
    Ff = np.einsum("cqde,ce->cqd", F, fibers)
    Pact = np.einsum("cqd,ce->cqde", Ff, fibers)
    fa = -wq * np.einsum("cqde,qae->cad", Pact, grads)
    dots_act = np.einsum("cad,cad->c", fa, yc)
    return dots_e, dots_act
