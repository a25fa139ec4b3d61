"""Array kernels for the hot paths: frame snapping, debounce scans and
confusion counting.

Every kernel exists twice: a numba ``@njit`` loop and a vectorised numpy
version. The public names dispatch to numba unless ``SEMOBS_DISABLE_NUMBA``
is set (see :mod:`semobs._accel`). Both variants are importable as
``NUMBA_KERNELS`` / ``NUMPY_KERNELS`` so tests and the benchmark can compare
them directly.

Decision codes used by :func:`confusion_counts`::

    gt:  0 Normal, 1 Anomaly
    dec: 0 Normal, 1 Anomaly, 2 Unknown, 3 Unparseable, 4 TimedOut
"""

from __future__ import annotations

import numpy as np

from semobs._accel import HAVE_NUMBA, USE_NUMBA, njit

N_DECISION_CODES = 5


# --------------------------------------------------------------------------
# numpy implementations
# --------------------------------------------------------------------------


def _np_nearest_indices(times: np.ndarray, targets: np.ndarray) -> np.ndarray:
    times = np.asarray(times, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    n = times.shape[0]
    if n == 0:
        return np.full(targets.shape[0], -1, dtype=np.int64)
    right = np.searchsorted(times, targets, side="left")
    left = right - 1
    right_c = np.clip(right, 0, n - 1)
    left_c = np.clip(left, 0, n - 1)
    d_left = np.where(left >= 0, targets - times[left_c], np.inf)
    d_right = np.where(right < n, times[right_c] - targets, np.inf)
    pick = np.where(d_left <= d_right, left_c, right_c)
    # equal timestamps: earliest frame of the group
    return np.searchsorted(times, times[pick], side="left").astype(np.int64)


def _np_run_lengths(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z)
    n = z.shape[-1]
    idx = np.arange(n, dtype=np.int64)
    last_zero = np.where(z == 0, idx, -1)
    last_zero = np.maximum.accumulate(last_zero, axis=-1)
    return idx - last_zero


def _np_first_triggers(zs: np.ndarray, n_min: int) -> np.ndarray:
    zs = np.atleast_2d(np.asarray(zs))
    if zs.shape[1] == 0:
        return np.full(zs.shape[0], -1, dtype=np.int64)
    hit = _np_run_lengths(zs) >= n_min
    first = np.argmax(hit, axis=1).astype(np.int64)
    first[~hit.any(axis=1)] = -1
    return first


def _np_confusion_counts(gt: np.ndarray, dec: np.ndarray) -> np.ndarray:
    gt = np.asarray(gt, dtype=np.int64)
    dec = np.asarray(dec, dtype=np.int64)
    table = np.bincount(gt * N_DECISION_CODES + dec, minlength=2 * N_DECISION_CODES)
    normal, anomaly = table[:N_DECISION_CODES], table[N_DECISION_CODES:]
    out = np.empty(7, dtype=np.int64)
    out[0] = anomaly[1]
    out[1] = normal[0] + normal[2] + normal[3] + normal[4]
    out[2] = normal[1]
    out[3] = anomaly[0] + anomaly[2] + anomaly[3] + anomaly[4]
    out[4] = normal[2] + anomaly[2]
    out[5] = normal[3] + anomaly[3]
    out[6] = normal[4] + anomaly[4]
    return out


# --------------------------------------------------------------------------
# numba implementations
# --------------------------------------------------------------------------


@njit(cache=True)
def _nb_nearest_indices(times, targets):
    n = times.shape[0]
    m = targets.shape[0]
    out = np.empty(m, dtype=np.int64)
    for i in range(m):
        t = targets[i]
        if n == 0:
            out[i] = -1
            continue
        # binary search for the first time >= t
        lo = 0
        hi = n
        while lo < hi:
            mid = (lo + hi) // 2
            if times[mid] < t:
                lo = mid + 1
            else:
                hi = mid
        best = lo
        if lo == n:
            best = n - 1
        elif lo > 0 and t - times[lo - 1] <= times[lo] - t:
            best = lo - 1
        while best > 0 and times[best - 1] == times[best]:
            best -= 1
        out[i] = best
    return out


@njit(cache=True)
def _nb_run_lengths(z):
    n = z.shape[0]
    out = np.empty(n, dtype=np.int64)
    run = 0
    for i in range(n):
        if z[i] != 0:
            run += 1
        else:
            run = 0
        out[i] = run
    return out


@njit(cache=True)
def _nb_first_triggers(zs, n_min):
    s, n = zs.shape
    out = np.full(s, -1, dtype=np.int64)
    for r in range(s):
        run = 0
        for i in range(n):
            if zs[r, i] != 0:
                run += 1
                if run >= n_min:
                    out[r] = i
                    break
            else:
                run = 0
    return out


@njit(cache=True)
def _nb_confusion_counts(gt, dec):
    # branch-free tally; random labels defeat the branch predictor otherwise
    table = np.zeros(2 * 5, dtype=np.int64)
    for i in range(gt.shape[0]):
        table[gt[i] * 5 + dec[i]] += 1
    out = np.empty(7, dtype=np.int64)
    out[0] = table[6]
    out[1] = table[0] + table[2] + table[3] + table[4]
    out[2] = table[1]
    out[3] = table[5] + table[7] + table[8] + table[9]
    out[4] = table[2] + table[7]
    out[5] = table[3] + table[8]
    out[6] = table[4] + table[9]
    return out


def _nb_first_triggers_wrapped(zs, n_min):
    zs = np.ascontiguousarray(np.atleast_2d(np.asarray(zs)), dtype=np.int8)
    return _nb_first_triggers(zs, np.int64(n_min))


def _nb_run_lengths_wrapped(z):
    z = np.asarray(z, dtype=np.int8)
    if z.ndim == 1:
        return _nb_run_lengths(z)
    return np.stack([_nb_run_lengths(row) for row in z])


NUMPY_KERNELS = {
    "nearest_indices": _np_nearest_indices,
    "run_lengths": _np_run_lengths,
    "first_triggers": _np_first_triggers,
    "confusion_counts": _np_confusion_counts,
}

NUMBA_KERNELS = {
    "nearest_indices": lambda times, targets: _nb_nearest_indices(
        np.ascontiguousarray(times, dtype=np.float64),
        np.ascontiguousarray(targets, dtype=np.float64),
    ),
    "run_lengths": _nb_run_lengths_wrapped,
    "first_triggers": _nb_first_triggers_wrapped,
    "confusion_counts": lambda gt, dec: _nb_confusion_counts(
        np.ascontiguousarray(gt, dtype=np.int8),
        np.ascontiguousarray(dec, dtype=np.int8),
    ),
}

ACTIVE = "numba" if USE_NUMBA else "numpy"
_K = NUMBA_KERNELS if USE_NUMBA else NUMPY_KERNELS


def nearest_indices(times, targets) -> np.ndarray:
    """Index of the frame nearest each target time; ties go to the earlier frame.

    ``times`` must be sorted nondecreasing. Returns ``-1`` everywhere when
    ``times`` is empty.
    """
    return _K["nearest_indices"](times, targets)


def run_lengths(z) -> np.ndarray:
    """Length of the current run of nonzero entries at each position."""
    return _K["run_lengths"](z)


def first_triggers(zs, n_min: int) -> np.ndarray:
    """Per row, index of the first position closing a run of ``n_min`` positives.

    ``-1`` for rows that never reach ``n_min``.
    """
    return _K["first_triggers"](zs, n_min)


def confusion_counts(gt, dec) -> np.ndarray:
    """``[tp, tn, fp, fn, unknowns, unparseables, timeouts]`` from coded arrays."""
    return _K["confusion_counts"](gt, dec)


def warmup() -> None:
    """Trigger JIT compilation so later timings exclude it."""
    if not HAVE_NUMBA:
        return
    k = NUMBA_KERNELS
    k["nearest_indices"](np.array([0.0, 1.0]), np.array([0.5]))
    k["run_lengths"](np.array([1, 0, 1], dtype=np.int8))
    k["first_triggers"](np.array([[1, 1, 0]], dtype=np.int8), 2)
    k["confusion_counts"](np.array([1, 0], dtype=np.int8), np.array([1, 4], dtype=np.int8))
