"""Complex dense matrix routines.

Two layers live here:

* plain-numpy decompositions (SVD, Hermitian eigendecomposition, small
  inverse/determinant) with a deterministic phase convention, used by CSI
  preprocessing and the classical baselines;
* differentiable complex kernels built from paired real tensors, used
  inside the trainable sum-rate objective.

The phase convention makes extracted singular/eigen-vectors reproducible:
the first significantly nonzero component of each vector is rotated to be
real and positive.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

__all__ = [
    "NumericalError",
    "SingularMatrixError",
    "svd",
    "hermitian_eig",
    "hermitian_eig_stack",
    "inv_small",
    "det_small",
    "CTensor",
    "cmatmul",
    "cherm",
    "cadd",
    "csub",
    "cmul_elem",
    "cdiv_elem",
    "cscale",
    "cabs2",
    "cinv_small_diff",
    "clog_abs_det",
]

HERMITIAN_RTOL = 1e-10
COND_LIMIT = 1e12


class NumericalError(RuntimeError):
    """A numerical routine failed to produce a trustworthy result."""


class SingularMatrixError(NumericalError):
    """Matrix is singular (or numerically indistinguishable from singular)."""


def _as_cmatrix(a, op: str) -> np.ndarray:
    arr = np.asarray(a, dtype=np.complex128)
    if arr.ndim != 2 or arr.size == 0:
        raise ValueError(f"{op}: expected a nonempty 2-D matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{op}: matrix entries must be finite")
    return arr


def _phase_fix_columns(vecs: np.ndarray) -> np.ndarray:
    """Rotate each column so its first significant entry is real-positive.

    Works on stacks (..., dim, n_vecs); vectorized over leading axes.
    """
    mags = np.abs(vecs)
    thresh = 1e-12 * np.maximum(mags.max(axis=-2, keepdims=True), 1e-300)
    # index of first entry above threshold, per column
    significant = mags > thresh
    first = np.argmax(significant, axis=-2)
    lead = np.take_along_axis(vecs, first[..., None, :], axis=-2)
    phase = lead / np.maximum(np.abs(lead), 1e-300)
    return vecs * np.conj(phase)


def svd(a):
    """Singular value decomposition A = U diag(s) V^H.

    Returns (U, s, V) with `s` nonnegative and descending and the columns
    of V phase-normalized (first significant component real-positive; U
    carries the matching phases so the reconstruction identity holds).
    """
    arr = _as_cmatrix(a, "svd")
    try:
        u, s, vh = np.linalg.svd(arr, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(
            f"svd did not converge for shape {arr.shape}, ||A||_F={np.linalg.norm(arr):.3e}"
        ) from exc
    v = vh.conj().T
    mags = np.abs(v)
    thresh = 1e-12 * np.maximum(mags.max(axis=0, keepdims=True), 1e-300)
    first = np.argmax(mags > thresh, axis=0)
    lead = v[first, np.arange(v.shape[1])]
    phase = lead / np.maximum(np.abs(lead), 1e-300)
    v = v * np.conj(phase)
    u = u * np.conj(phase)
    return u, s, v


def hermitian_eig(a):
    """Eigendecomposition of a Hermitian matrix, eigenvalues descending.

    Rejects inputs that are not Hermitian within ``1e-10 * ||A||_F``.
    Eigenvectors follow the column phase convention.
    """
    arr = _as_cmatrix(a, "hermitian_eig")
    norm = np.linalg.norm(arr)
    if np.linalg.norm(arr - arr.conj().T) > HERMITIAN_RTOL * max(norm, 1e-300):
        raise ValueError("hermitian_eig: input is not Hermitian within tolerance")
    try:
        w, v = np.linalg.eigh(arr)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigendecomposition failed, ||A||_F={norm:.3e}") from exc
    w = w[::-1]
    v = v[:, ::-1]
    return w, _phase_fix_columns(v)


def hermitian_eig_stack(a: np.ndarray):
    """Batched `hermitian_eig` over a (..., n, n) stack, same conventions."""
    arr = np.asarray(a, dtype=np.complex128)
    w, v = np.linalg.eigh(arr)
    w = w[..., ::-1]
    v = v[..., ::-1]
    return w, _phase_fix_columns(v)


def inv_small(a) -> np.ndarray:
    """Inverse of a small (dim <= 4) complex matrix.

    Raises SingularMatrixError when the matrix is singular within working
    precision or the condition estimate ||A||_F * ||A^-1||_F exceeds 1e12.
    """
    arr = _as_cmatrix(a, "inv_small")
    n = arr.shape[0]
    if arr.shape[0] != arr.shape[1] or n > 4:
        raise ValueError(f"inv_small: need square matrix of dim <= 4, got {arr.shape}")
    try:
        inv = np.linalg.inv(arr)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError(f"inv_small: singular {n}x{n} matrix") from exc
    cond = np.linalg.norm(arr) * np.linalg.norm(inv)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise SingularMatrixError(f"inv_small: matrix singular within tolerance (cond~{cond:.3e})")
    return inv


def det_small(a) -> complex:
    """Determinant of a small (dim <= 4) complex matrix."""
    arr = _as_cmatrix(a, "det_small")
    if arr.shape[0] != arr.shape[1] or arr.shape[0] > 4:
        raise ValueError(f"det_small: need square matrix of dim <= 4, got {arr.shape}")
    return complex(np.linalg.det(arr))


# -- differentiable complex kernels ----------------------------------------------
#
# A complex tensor is a (real, imag) pair of equally-shaped real tensors.
# These kernels mirror the plain-numpy routines above closely enough that
# forward values agree to ~1e-12; they exist so backward() can traverse
# the sum-rate objective.


@dataclass
class CTensor:
    """Complex tensor as paired real tensors of identical shape."""

    re: Tensor
    im: Tensor

    @property
    def shape(self):
        return self.re.shape

    @classmethod
    def from_numpy(cls, arr: np.ndarray) -> "CTensor":
        arr = np.asarray(arr, dtype=np.complex128)
        return cls(Tensor(arr.real.copy()), Tensor(arr.imag.copy()))

    def numpy(self) -> np.ndarray:
        return self.re.data + 1j * self.im.data

    def reshape(self, shape) -> "CTensor":
        return CTensor(ad.reshape(self.re, shape), ad.reshape(self.im, shape))

    def transpose(self, axes) -> "CTensor":
        return CTensor(ad.transpose(self.re, axes), ad.transpose(self.im, axes))

    def __getitem__(self, key) -> "CTensor":
        return CTensor(self.re[key], self.im[key])

    def conj(self) -> "CTensor":
        return CTensor(self.re, -self.im)


def cmatmul(a: CTensor, b: CTensor) -> CTensor:
    re = ad.sub(ad.matmul(a.re, b.re), ad.matmul(a.im, b.im))
    im = ad.add(ad.matmul(a.re, b.im), ad.matmul(a.im, b.re))
    return CTensor(re, im)


def cherm(a: CTensor) -> CTensor:
    """Conjugate transpose of the trailing two axes."""
    axes = tuple(range(a.re.ndim - 2)) + (a.re.ndim - 1, a.re.ndim - 2)
    return CTensor(ad.transpose(a.re, axes), -ad.transpose(a.im, axes))


def cadd(a: CTensor, b: CTensor) -> CTensor:
    return CTensor(ad.add(a.re, b.re), ad.add(a.im, b.im))


def csub(a: CTensor, b: CTensor) -> CTensor:
    return CTensor(ad.sub(a.re, b.re), ad.sub(a.im, b.im))


def cmul_elem(a: CTensor, b: CTensor) -> CTensor:
    re = ad.sub(ad.mul(a.re, b.re), ad.mul(a.im, b.im))
    im = ad.add(ad.mul(a.re, b.im), ad.mul(a.im, b.re))
    return CTensor(re, im)


def cdiv_elem(a: CTensor, b: CTensor) -> CTensor:
    denom = ad.add(ad.square(b.re), ad.square(b.im))
    re = ad.div(ad.add(ad.mul(a.re, b.re), ad.mul(a.im, b.im)), denom)
    im = ad.div(ad.sub(ad.mul(a.im, b.re), ad.mul(a.re, b.im)), denom)
    return CTensor(re, im)


def cscale(a: CTensor, s) -> CTensor:
    """Multiply by a real tensor/scalar (broadcasting)."""
    return CTensor(ad.mul(a.re, s), ad.mul(a.im, s))


def cabs2(a: CTensor) -> Tensor:
    """Elementwise squared magnitude |a|^2 (a real tensor)."""
    return ad.add(ad.square(a.re), ad.square(a.im))


def _celem(a: CTensor, i: int, j: int) -> CTensor:
    return CTensor(a.re[..., i, j], a.im[..., i, j])


def cinv_small_diff(a: CTensor) -> CTensor:
    """Differentiable inverse for stacks of 1x1 or 2x2 complex matrices."""
    n = a.shape[-1]
    if a.shape[-2] != n or n not in (1, 2):
        raise ValueError(f"cinv_small_diff: need trailing 1x1 or 2x2, got {a.shape}")
    if n == 1:
        one = CTensor(Tensor(np.ones(())), Tensor(np.zeros(())))
        inv = cdiv_elem(one, _celem(a, 0, 0))
        shape = a.shape[:-2] + (1, 1)
        return inv.reshape(shape)
    a00, a01 = _celem(a, 0, 0), _celem(a, 0, 1)
    a10, a11 = _celem(a, 1, 0), _celem(a, 1, 1)
    det = csub(cmul_elem(a00, a11), cmul_elem(a01, a10))
    neg = lambda z: CTensor(-z.re, -z.im)
    entries = [cdiv_elem(z, det) for z in (a11, neg(a01), neg(a10), a00)]
    flat_shape = a.shape[:-2] + (1,)
    re = ad.concat([e.re.reshape(flat_shape) for e in entries], axis=-1)
    im = ad.concat([e.im.reshape(flat_shape) for e in entries], axis=-1)
    shape = a.shape[:-2] + (2, 2)
    return CTensor(re.reshape(shape), im.reshape(shape))


def clog_abs_det(a: CTensor) -> Tensor:
    """Differentiable log|det A| for stacks of 1x1 or 2x2 complex matrices."""
    n = a.shape[-1]
    if a.shape[-2] != n or n not in (1, 2):
        raise ValueError(f"clog_abs_det: need trailing 1x1 or 2x2, got {a.shape}")
    if n == 1:
        det = _celem(a, 0, 0)
    else:
        det = csub(
            cmul_elem(_celem(a, 0, 0), _celem(a, 1, 1)),
            cmul_elem(_celem(a, 0, 1), _celem(a, 1, 0)),
        )
    return ad.mul(ad.log(cabs2(det)), 0.5)
