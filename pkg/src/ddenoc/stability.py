"""Characteristic roots of a delay system at a steady state.

Two routes: the exact transcendental characteristic function
``det(lam I - A0 - sum_i B_i exp(-tau_i lam))`` scanned over a complex
window and refined by Newton, and the delay-linearized variant where
``exp(-tau lam)`` is replaced by ``1 - tau lam``, which collapses to the
matrix pencil ``lam (I + sum tau_i B_i) = (A0 + sum B_i)`` and is solved
as an ordinary dense eigenproblem.

Determinants are tracked as ``(phase, log|det|)`` so that 10x10 systems
with entries spanning ten orders of magnitude never overflow the scan.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import DdeModel, eval_memory_state, HistoryFunction

logger = logging.getLogger(__name__)

__all__ = [
    "SteadyLinearization",
    "RootSet",
    "linearize_at_steady_state",
    "char_fn_dde",
    "char_fn_approx",
    "find_roots_dde",
    "find_roots_approx",
    "DEFAULT_WINDOW",
    "DEFAULT_GRID",
]

# Scan window (re_min, re_max, im_min, im_max) in 1/s, sized to cover the
# innermost reported real roots of the reactor with headroom.
DEFAULT_WINDOW = (-30.0, 5.0, 0.0, 15.0)
DEFAULT_GRID = (600, 600)


@dataclass
class SteadyLinearization:
    """Jacobians of the dynamics at a steady point, split per delay channel.

    ``A0 = df/dx`` and ``B[i] = df/dz|_{block i} @ dh_i/dx`` are both
    (n_x, n_x); ``taus[i]`` is the delay at the steady input.
    """

    A0: np.ndarray
    B: list
    taus: np.ndarray
    x_s: np.ndarray
    u_s: np.ndarray
    d_s: np.ndarray

    @property
    def n_x(self) -> int:
        return self.A0.shape[0]


@dataclass
class RootSet:
    """Complex roots with per-root residuals and provenance."""

    roots: np.ndarray  # complex
    residuals: np.ndarray  # |char fn| relative to local determinant scale
    method: str  # "transcendental" or "generalized-eigen"
    window: tuple | None = None
    dropped: int = 0  # refinement candidates that failed to converge

    def __post_init__(self):
        self.roots = np.atleast_1d(np.asarray(self.roots, dtype=complex))
        self.residuals = np.atleast_1d(np.asarray(self.residuals, dtype=float))
        order = np.lexsort((self.roots.imag, self.roots.real))
        self.roots = self.roots[order]
        self.residuals = self.residuals[order]

    def real_roots(self, tol: float = 1e-9) -> np.ndarray:
        return np.sort(self.roots[np.abs(self.roots.imag) <= tol].real)

    def max_real_part(self) -> float:
        return float(np.max(self.roots.real)) if self.roots.size else -np.inf

    def to_csv(self, path) -> None:
        with open(path, "w", newline="\n") as fh:
            fh.write("re,im,residual,method\n")
            for lam, res in zip(self.roots, self.residuals):
                fh.write(f"{lam.real:.17g},{lam.imag:.17g},{res:.17g},{self.method}\n")


def linearize_at_steady_state(
    model: DdeModel, x_s, u_s, d_s=None, residual_tol: float = 1e-8
) -> SteadyLinearization:
    """Evaluate A0 and the per-delay matrices B_i at a steady point.

    Refuses points whose steady-state residual exceeds ``residual_tol``
    relative to the largest rhs term scale.
    """
    x_s = np.atleast_1d(np.asarray(x_s, dtype=float))
    u_s = np.atleast_1d(np.asarray(u_s, dtype=float))
    d_s = np.zeros(model.n_d) if d_s is None else np.atleast_1d(np.asarray(d_s, dtype=float))
    p = model.params
    history = HistoryFunction.constant(x_s)
    z_s = eval_memory_state(model, history, 0.0, u_s)
    f_s = np.asarray(model.rhs(x_s, z_s, u_s, d_s, p), dtype=float)
    scale = max(1.0, float(np.max(np.abs(x_s))))
    resid = float(np.max(np.abs(f_s)))
    if resid > residual_tol * scale:
        raise ValueError(
            f"point is not a steady state: max |f| = {resid:.3e} "
            f"exceeds {residual_tol:g} * {scale:g}"
        )
    A0 = np.asarray(model.dfdx(x_s, z_s, u_s, d_s, p), dtype=float)
    dF_dz = np.asarray(model.dfdz(x_s, z_s, u_s, d_s, p), dtype=float)
    B = []
    for i, sl in enumerate(model.z_slices()):
        Hi = np.asarray(model.dhdx[i](x_s, p), dtype=float)
        B.append(dF_dz[:, sl] @ Hi)
    taus = np.array([float(ch.tau(u_s)) for ch in model.delays])
    return SteadyLinearization(A0=A0, B=B, taus=taus, x_s=x_s, u_s=u_s, d_s=d_s)


def _char_matrix(lin: SteadyLinearization, lam: complex) -> np.ndarray:
    M = lam * np.eye(lin.n_x, dtype=complex) - lin.A0
    for tau_i, B_i in zip(lin.taus, lin.B):
        M = M - B_i * np.exp(-tau_i * lam)
    return M


def _logdet(matrices: np.ndarray) -> tuple:
    """Batched (phase, log|det|) via LU; phase is a unit complex number."""
    sign, logabs = np.linalg.slogdet(matrices)
    return sign, logabs


def char_fn_dde(lin: SteadyLinearization, lam: complex) -> complex:
    """Transcendental characteristic function det(lam I - A0 - sum B_i e^{-tau_i lam})."""
    sign, logabs = _logdet(_char_matrix(lin, complex(lam)))
    return complex(sign * np.exp(logabs))


def char_fn_approx(lin: SteadyLinearization, lam: complex) -> complex:
    """Characteristic function of the delay-linearized system (e^{-x} -> 1 - x)."""
    lam = complex(lam)
    M = lam * np.eye(lin.n_x, dtype=complex) - lin.A0
    for tau_i, B_i in zip(lin.taus, lin.B):
        M = M - B_i * (1.0 - tau_i * lam)
    sign, logabs = _logdet(M)
    return complex(sign * np.exp(logabs))


def _scan_chunk(lin: SteadyLinearization, lams: np.ndarray) -> tuple:
    n = lin.n_x
    M = lams[:, None, None] * np.eye(n, dtype=complex) - lin.A0
    for tau_i, B_i in zip(lin.taus, lin.B):
        M -= B_i[None, :, :] * np.exp(-tau_i * lams)[:, None, None]
    return _logdet(M)


def _grid_scan(lin, lams_flat, threads: int, chunk: int = 8192) -> tuple:
    """Phase and log-magnitude of the determinant over a flattened grid.

    Chunked and optionally threaded; assembly order is fixed by chunk index,
    so the result is independent of execution order.
    """
    chunks = [lams_flat[i:i + chunk] for i in range(0, len(lams_flat), chunk)]
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda c: _scan_chunk(lin, c), chunks))
    else:
        results = [_scan_chunk(lin, c) for c in chunks]
    sign = np.concatenate([r[0] for r in results])
    logabs = np.concatenate([r[1] for r in results])
    return sign, logabs


def _newton_refine(lin, lam0: complex, ref_log: float, tol: float, max_iter: int = 50):
    """Damped Newton on the determinant normalized by exp(ref_log).

    Returns (root, relative residual) or None when the iteration fails.
    The derivative uses central differences; the determinant is analytic in
    lam so this is accurate at the 1e-8 residual target.
    """

    def fval(lam):
        sign, logabs = _logdet(_char_matrix(lin, lam))
        return sign * np.exp(np.clip(logabs - ref_log, -745.0, 700.0))

    def newton_step(lam, f):
        h = 1e-7 * (1.0 + abs(lam))
        df = (fval(lam + h) - fval(lam - h)) / (2.0 * h)
        if df == 0 or not np.isfinite(abs(df)):
            return None
        return -f / df

    lam = complex(lam0)
    f = fval(lam)
    converged = abs(f) <= tol
    for _ in range(max_iter):
        if converged:
            break
        step = newton_step(lam, f)
        if step is None:
            return None
        # Backtrack until |f| decreases; give up after heavy damping.
        alpha = 1.0
        for _ in range(30):
            trial = lam + alpha * step
            f_trial = fval(trial)
            if abs(f_trial) < abs(f):
                lam, f = trial, f_trial
                break
            alpha *= 0.5
        else:
            return None
        converged = abs(f) <= tol
    if not converged:
        return None
    # Polish with full steps so coincident candidates collapse to the same
    # point well inside the deduplication radius.
    for _ in range(10):
        step = newton_step(lam, f)
        if step is None or abs(step) <= 1e-13 * (1.0 + abs(lam)):
            break
        trial = lam + step
        f_trial = fval(trial)
        if abs(f_trial) >= abs(f) and abs(step) > 1e-10 * (1.0 + abs(lam)):
            break
        lam, f = trial, f_trial
    return lam, abs(f)


def find_roots_dde(
    lin: SteadyLinearization,
    window: tuple = DEFAULT_WINDOW,
    grid: tuple = DEFAULT_GRID,
    residual_tol: float = 1e-8,
    dedup_tol: float = 1e-6,
    threads: int = 1,
    keep_grid: bool = False,
) -> RootSet:
    """Scan a complex window for transcendental characteristic roots.

    Grid cells where both the real and the imaginary part of the
    determinant change sign are refined by damped Newton from the cell
    center.  Only the closed upper half-plane is reported; complex roots
    come with implied conjugates.  Non-converged candidates are dropped
    and counted, not fatal.
    """
    re_min, re_max, im_min, im_max = window
    n_re, n_im = grid
    if n_re < 16 or n_im < 16:
        raise ValueError("root scan needs at least 16 grid points per axis")
    re = np.linspace(re_min, re_max, n_re)
    im = np.linspace(max(im_min, 0.0), im_max, n_im)
    Lam = re[None, :] + 1j * im[:, None]  # (n_im, n_re)
    sign, logabs = _grid_scan(lin, Lam.ravel(), threads=threads)
    sign = sign.reshape(Lam.shape)
    logabs = logabs.reshape(Lam.shape)

    re_sign = np.sign(sign.real)
    im_sign = np.sign(sign.imag)

    def _cell_changes(s):
        c = np.ones(np.array(s.shape) - 1, dtype=bool)
        c &= ~((s[:-1, :-1] == s[:-1, 1:]) & (s[:-1, :-1] == s[1:, :-1])
               & (s[:-1, :-1] == s[1:, 1:]) & (s[:-1, :-1] != 0))
        return c

    candidates = _cell_changes(re_sign) & _cell_changes(im_sign)
    ci, cj = np.nonzero(candidates)
    ref_log = float(np.max(logabs[np.isfinite(logabs)])) if logabs.size else 0.0

    roots, residuals, dropped = [], [], 0
    for i, j in zip(ci, cj):
        lam0 = 0.5 * (Lam[i, j] + Lam[i + 1, j + 1])
        corner_logs = logabs[i:i + 2, j:j + 2]
        finite = corner_logs[np.isfinite(corner_logs)]
        cell_ref = float(np.max(finite)) if finite.size else ref_log
        result = _newton_refine(lin, lam0, cell_ref, residual_tol)
        if result is None:
            dropped += 1
            continue
        lam, res = result
        if lam.imag < -dedup_tol:
            lam = np.conj(lam)  # fold wanderers back into the scanned half-plane
        if abs(lam.imag) <= dedup_tol:
            lam = complex(lam.real, 0.0)
        if not (re_min - 0.5 <= lam.real <= re_max + 0.5 and lam.imag <= im_max + 0.5):
            dropped += 1
            continue
        if any(abs(lam - r) <= dedup_tol for r in roots):
            continue
        roots.append(lam)
        residuals.append(res)
    if dropped:
        logger.info("root scan dropped %d non-converged candidates", dropped)
    rs = RootSet(
        roots=np.array(roots, dtype=complex),
        residuals=np.array(residuals, dtype=float),
        method="transcendental",
        window=window,
        dropped=dropped,
    )
    if keep_grid:
        rs.grid_re = re
        rs.grid_im = im
        rs.grid_phase = sign
        rs.grid_logabs = logabs
    return rs


def find_roots_approx(lin: SteadyLinearization, cond_limit: float = 1e12) -> RootSet:
    """All roots of the delay-linearized characteristic equation.

    The equation rearranges to the pencil ``lam M = K`` with
    ``K = A0 + sum B_i`` and ``M = I + sum tau_i B_i``.  For a
    well-conditioned M this is the ordinary spectrum of ``M^{-1} K``;
    otherwise the pencil is degenerate (roots at infinity) and we refuse.
    """
    K = lin.A0.copy()
    M = np.eye(lin.n_x)
    for tau_i, B_i in zip(lin.taus, lin.B):
        K = K + B_i
        M = M + tau_i * B_i
    cond = np.linalg.cond(M)
    if not np.isfinite(cond) or cond > cond_limit:
        raise np.linalg.LinAlgError(
            f"delay-linearized pencil is near-singular (cond(M) = {cond:.3e}); "
            "some characteristic roots lie at infinity"
        )
    lam = np.linalg.eigvals(np.linalg.solve(M, K))
    # Residuals relative to the local determinant scale, same convention as
    # the transcendental scan.
    residuals = []
    for l in lam:
        sign, logabs = _logdet(l * M.astype(complex) - K)
        near = 1.0 + abs(l)
        sign_ref, logabs_ref = _logdet((l + near) * M.astype(complex) - K)
        residuals.append(float(np.exp(np.clip(logabs - logabs_ref, -745.0, 700.0))))
    return RootSet(
        roots=lam.astype(complex),
        residuals=np.array(residuals),
        method="generalized-eigen",
    )
