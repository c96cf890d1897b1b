"""Pure-numpy reference implementation of the hot per-element kernels.

Both backends share the same contracts:

* local GLL flat index q = (i*p + j)*p + k with i along xi (x), j along eta,
  k along zeta
* ``idx`` gathers element-local values from the global DOF arrays; results
  are accumulated back with a deterministic (fixed element order) scatter
* acoustic ``geom``: per GLL point the symmetric matrix
  w*detJ/rho * Jinv @ Jinv.T packed as [gxx, gxy, gxz, gyy, gyz, gzz]
* elastic ``jinv``: per GLL point Jinv[d, e] = d xi_d / d x_e, plus
  ``wdet`` = w*detJ and per-element Lame constants
"""

import numpy as np

name = "python"


def set_num_threads(n):
    """No-op: the reference kernels are single-threaded."""


def get_num_threads():
    return 1


def _grad_ref(f, D):
    # f: (nE, p, p, p) -> three reference-direction derivatives
    d0 = np.einsum("im,emjk->eijk", D, f, optimize=True)
    d1 = np.einsum("jm,eimk->eijk", D, f, optimize=True)
    d2 = np.einsum("km,eijm->eijk", D, f, optimize=True)
    return d0, d1, d2


def _div_ref(q0, q1, q2, D):
    # transpose contractions: out[i,j,k] = sum_m D[m,i] q0[m,j,k] + ...
    o = np.einsum("mi,emjk->eijk", D, q0, optimize=True)
    o += np.einsum("mj,eimk->eijk", D, q1, optimize=True)
    o += np.einsum("mk,eijm->eijk", D, q2, optimize=True)
    return o


def acoustic_stiffness_apply(phi, idx, geom, D, out):
    """Accumulate K_a @ phi into ``out`` (matrix-free Galerkin action)."""
    n_e = idx.shape[0]
    if n_e == 0:
        return
    p = D.shape[0]
    f = phi[idx].reshape(n_e, p, p, p)
    d0, d1, d2 = _grad_ref(f, D)
    g = geom.reshape(n_e, p, p, p, 6)
    q0 = g[..., 0] * d0 + g[..., 1] * d1 + g[..., 2] * d2
    q1 = g[..., 1] * d0 + g[..., 3] * d1 + g[..., 4] * d2
    q2 = g[..., 2] * d0 + g[..., 4] * d1 + g[..., 5] * d2
    res = _div_ref(q0, q1, q2, D)
    np.add.at(out, idx.reshape(-1), res.reshape(-1))


def elastic_stiffness_apply(u, idx, jinv, wdet, lam, mu, D, out):
    """Accumulate K_e @ u into ``out`` for isotropic linear elasticity."""
    n_e = idx.shape[0]
    if n_e == 0:
        return
    p = D.shape[0]
    ul = u[idx]  # (nE, p3, 3)
    grad = np.empty((n_e, p, p, p, 3, 3))
    for c in range(3):
        fc = ul[..., c].reshape(n_e, p, p, p)
        grad[..., c, 0], grad[..., c, 1], grad[..., c, 2] = _grad_ref(fc, D)
    ji = jinv.reshape(n_e, p, p, p, 3, 3)
    # physical gradient H[c,e] = sum_d grad[c,d] * Jinv[d,e]
    h = np.einsum("...cd,...de->...ce", grad, ji, optimize=True)
    eps = 0.5 * (h + np.swapaxes(h, -1, -2))
    tr = eps[..., 0, 0] + eps[..., 1, 1] + eps[..., 2, 2]
    sig = (2.0 * mu)[:, None, None, None, None, None] * eps
    lam_tr = lam[:, None, None, None] * tr
    for c in range(3):
        sig[..., c, c] += lam_tr
    w = wdet.reshape(n_e, p, p, p)
    # T[c,d] = w*detJ * sum_e sigma[c,e] Jinv[d,e]
    t = np.einsum("...ce,...de,...->...cd", sig, ji, w, optimize=True)
    res = np.empty((n_e, p, p, p, 3))
    for c in range(3):
        res[..., c] = _div_ref(t[..., c, 0], t[..., c, 1], t[..., c, 2], D)
    flat_idx = idx.reshape(-1)
    for c in range(3):
        np.add.at(out[:, c], flat_idx, res[..., c].reshape(-1))
