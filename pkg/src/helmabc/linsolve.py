"""Sparse direct solves for complex FEM systems.

Uses MKL PARDISO through ctypes when ``libmkl_rt`` can be loaded (complex
symmetric mtype 6 or complex unsymmetric mtype 13), otherwise SuperLU from
scipy.  Set ``HELMABC_SOLVER=superlu`` to force the fallback.
"""

from __future__ import annotations

import ctypes
import ctypes.util
import glob
import os
import shutil
import sys
import tempfile

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from helmabc.exceptions import SolverError

__all__ = ["solve_sparse", "backend_name", "relative_residual"]

_MKL = None
_MKL_TRIED = False


def _load_mkl():
    global _MKL, _MKL_TRIED
    if _MKL_TRIED:
        return _MKL
    _MKL_TRIED = True
    candidates = []
    for prefix in {sys.prefix, sys.base_prefix, "/usr/local", "/usr"}:
        candidates += sorted(glob.glob(os.path.join(prefix, "lib", "libmkl_rt.so*")))
    found = ctypes.util.find_library("mkl_rt")
    if found:
        candidates.append(found)
    for path in candidates:
        try:
            lib = ctypes.CDLL(path)
            lib.pardiso  # noqa: B018 - attribute lookup checks the symbol
        except (OSError, AttributeError):
            continue
        _MKL = lib
        break
    return _MKL


def backend_name() -> str:
    if os.environ.get("HELMABC_SOLVER", "").lower() == "superlu" or _load_mkl() is None:
        return "superlu"
    return "pardiso"


def relative_residual(A, x, b) -> float:
    nb = np.linalg.norm(b)
    return float(np.linalg.norm(A @ x - b) / (nb if nb > 0 else 1.0))


_PARDISO_ERRORS = {
    -1: "input inconsistent",
    -2: "not enough memory",
    -3: "reordering problem",
    -4: "zero pivot, numerical factorization or iterative refinement problem",
    -7: "diagonal matrix is singular",
    -8: "32-bit integer overflow problem",
}


def _core_budget_mb() -> int:
    """In-core limit for PARDISO: HELMABC_PARDISO_CORE_MB, else 70% of available memory."""
    env = os.environ.get("HELMABC_PARDISO_CORE_MB")
    if env:
        return int(env)
    try:
        avail = os.sysconf("SC_AVPHYS_PAGES") * os.sysconf("SC_PAGE_SIZE")
    except (ValueError, OSError):
        return 2000
    return max(256, int(0.7 * avail / 2**20))


def _pardiso(A: sp.csr_matrix, b: np.ndarray, symmetric: bool) -> np.ndarray:
    lib = _load_mkl()
    # factors larger than the budget go out of core (files in a temporary directory)
    os.environ["MKL_PARDISO_OOC_MAX_CORE_SIZE"] = str(_core_budget_mb())
    ooc_dir = tempfile.mkdtemp(prefix="helmabc_ooc_")
    os.environ["MKL_PARDISO_OOC_PATH"] = ooc_dir + os.sep
    os.environ.setdefault("MKL_PARDISO_OOC_KEEP_FILE", "0")
    mtype = 6 if symmetric else 13
    if symmetric:
        A = sp.triu(A, format="csr")
    A.sort_indices()
    n = A.shape[0]
    if A.nnz >= 2**31:
        raise SolverError("matrix too large for 32-bit PARDISO indexing")
    data = np.ascontiguousarray(A.data, dtype=np.complex128)
    ia = np.ascontiguousarray(A.indptr + 1, dtype=np.int32)
    ja = np.ascontiguousarray(A.indices + 1, dtype=np.int32)
    pt = np.zeros(64, dtype=np.int64)
    iparm = np.zeros(64, dtype=np.int32)
    iparm[0] = 1  # user-supplied parameters
    iparm[1] = 2  # nested dissection ordering
    iparm[9] = 13 if not symmetric else 8  # pivot perturbation 1e-iparm[9]
    iparm[10] = 0 if symmetric else 1  # scaling
    iparm[12] = 0 if symmetric else 1  # weighted matching
    iparm[59] = 1  # in-core unless the factor exceeds MKL_PARDISO_OOC_MAX_CORE_SIZE
    nrhs = 1 if b.ndim == 1 else b.shape[1]
    rhs = np.asfortranarray(b, dtype=np.complex128)
    x = np.zeros_like(rhs)

    def ptr(arr):
        return arr.ctypes.data_as(ctypes.c_void_p)

    def call(phase):
        err = ctypes.c_int32(0)
        one = ctypes.c_int32(1)
        lib.pardiso(
            ptr(pt), ctypes.byref(one), ctypes.byref(one), ctypes.byref(ctypes.c_int32(mtype)),
            ctypes.byref(ctypes.c_int32(phase)), ctypes.byref(ctypes.c_int32(n)),
            ptr(data), ptr(ia), ptr(ja), ctypes.c_void_p(), ctypes.byref(ctypes.c_int32(nrhs)),
            ptr(iparm), ctypes.byref(ctypes.c_int32(0)), ptr(rhs), ptr(x), ctypes.byref(err),
        )
        return err.value

    try:
        code = call(13)
        if code != 0:
            raise SolverError(f"PARDISO failed ({code}: {_PARDISO_ERRORS.get(code, 'unknown')})")
    finally:
        call(-1)
        shutil.rmtree(ooc_dir, ignore_errors=True)
    return x


def solve_sparse(A, b, symmetric: bool = False, check_residual: float | None = 1e-10, refine: int = 2):
    """Solve ``A x = b`` by sparse LU/LDLᵀ with optional residual check.

    Parameters
    ----------
    A : sparse matrix (complex)
    b : array
    symmetric : bool
        Whether ``A`` is complex symmetric (``A.T == A``); enables LDLᵀ.
    check_residual : float or None
        Raise :class:`SolverError` if ``‖Ax − b‖/‖b‖`` exceeds this after
        iterative refinement.
    refine : int
        Maximum extra refinement steps with the same factorization.

    Returns
    -------
    x : ndarray
    info : dict
        ``backend`` and final ``residual``.
    """
    A = sp.csr_matrix(A, dtype=np.complex128)
    b = np.asarray(b, dtype=np.complex128)
    backend = backend_name()
    if backend == "pardiso":
        def apply(rhs):
            return _pardiso(A, rhs, symmetric)
        x = apply(b)
    else:
        try:
            lu = spla.splu(A.tocsc(), permc_spec="MMD_AT_PLUS_A" if symmetric else "COLAMD")
        except RuntimeError as exc:
            raise SolverError(f"sparse factorization failed: {exc}") from exc
        apply = lu.solve
        x = apply(b)
    if not np.all(np.isfinite(x)):
        raise SolverError("factorization produced non-finite values (singular system or near-resonance)")
    res = relative_residual(A, x, b)
    if backend == "superlu":
        # one factorization, cheap refinement
        for _ in range(refine):
            if check_residual is None or res < 0.01 * check_residual:
                break
            x = x + apply(b - A @ x)
            res = relative_residual(A, x, b)
    if check_residual is not None and res >= check_residual:
        raise SolverError(f"relative residual {res:.3e} exceeds {check_residual:.1e} (singular system or bad mesh)")
    return x, {"backend": backend, "residual": res}
