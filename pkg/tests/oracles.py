"""Independent brute-force reference implementations (explicit Python loops)."""

import math


def _d2(p, q):
    return sum((a - b) ** 2 for a, b in zip(p, q))


def chamfer_bf(X, Xp):
    total = 0.0
    for y in Xp:
        total += min(_d2(x, y) for x in X)
    return total / len(Xp)


def hausdorff_bf(X, Xp):
    return max(min(_d2(x, y) for x in X) for y in Xp)


def _nearest(p, cloud):
    best, best_j = None, -1
    for j, q in enumerate(cloud):
        d = _d2(p, q)
        if best is None or d < best:
            best, best_j = d, j
    return best_j


def dcd_bf(X, Xp, alpha):
    def side(A, B):
        picks = [_nearest(a, B) for a in A]
        counts = {}
        for j in picks:
            counts[j] = counts.get(j, 0) + 1
        s = 0.0
        for a, j in zip(A, picks):
            s += 1.0 - math.exp(-alpha * math.sqrt(_d2(a, B[j]))) / max(counts[j], 1)
        return s / len(A)

    return 0.5 * (side(X, Xp) + side(Xp, X))


def mse_bf(X, Xp):
    return sum(_d2(a, b) for a, b in zip(X, Xp)) / len(X)


def central_difference(f, x, idx, h=1e-4):
    """d f / d x[idx] by central differences; ``x`` is a numpy array copied per probe."""
    xp = x.copy()
    xm = x.copy()
    xp[idx] += h
    xm[idx] -= h
    return (f(xp) - f(xm)) / (2 * h)


def rel_err(a, b, floor=1e-6):
    return abs(a - b) / max(abs(a), abs(b), floor)
