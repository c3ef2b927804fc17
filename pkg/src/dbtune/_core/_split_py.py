"""Numpy implementation of the regression-tree split scan (fallback backend)."""

import numpy as np


def best_split(xs, ys, min_leaf):
    """Best variance-reduction split over pre-sorted feature rows.

    ``xs`` and ``ys`` are ``(k, n)`` arrays: row ``j`` holds candidate feature
    ``j``'s node values in ascending order and the targets permuted the same
    way.  Returns ``(row, position, gain)`` where the split puts sorted items
    ``0..position`` on the left; ``row == -1`` when no admissible split exists.
    Ties resolve to the lowest row, then the lowest position.
    """
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    k, n = xs.shape
    if n < 2 * min_leaf or n < 2:
        return -1, -1, 0.0
    csum = np.cumsum(ys, axis=1)
    total = csum[:, -1:]
    n_left = np.arange(1, n, dtype=np.float64)
    n_right = n - n_left
    s_left = csum[:, :-1]
    s_right = total - s_left
    gain = s_left * s_left / n_left + s_right * s_right / n_right - total * total / n
    ok = xs[:, 1:] > xs[:, :-1]
    ok &= (n_left >= min_leaf) & (n_right >= min_leaf)
    gain = np.where(ok, gain, -np.inf)
    flat = int(np.argmax(gain))
    row, pos = divmod(flat, n - 1)
    best = gain[row, pos]
    if not np.isfinite(best):
        return -1, -1, 0.0
    return row, pos, float(best)
