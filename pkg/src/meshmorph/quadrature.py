"""Quadrature on simplices.

Rules are returned in barycentric form with weights summing to one, so that
``integral over K of f == measure(K) * sum(w * f(lam @ vertices))``.
"""
from functools import lru_cache
from math import factorial

import numpy as np


@lru_cache(maxsize=None)
def simplex_rule(m, degree):
    """Collapsed Gauss-Legendre rule on the reference ``m``-simplex.

    Exact for polynomials of total degree ``degree``.
    """
    if m == 0:
        return np.ones((1, 1)), np.ones(1)
    n = (degree + m + 1) // 2 + 1
    t, w = np.polynomial.legendre.leggauss(n)
    t = 0.5 * (t + 1.0)
    w = 0.5 * w
    if m == 1:
        lam = np.column_stack([1.0 - t, t])
        return lam, w / w.sum()
    if m == 2:
        u, v = np.meshgrid(t, t, indexing="ij")
        wu, wv = np.meshgrid(w, w, indexing="ij")
        x = u
        y = v * (1.0 - u)
        ww = wu * wv * (1.0 - u)
        lam = np.column_stack([(1.0 - x - y).ravel(), x.ravel(), y.ravel()])
        ww = ww.ravel()
        return lam, ww / ww.sum()
    if m == 3:
        u, v, s = np.meshgrid(t, t, t, indexing="ij")
        wu, wv, ws = np.meshgrid(w, w, w, indexing="ij")
        x = u
        y = v * (1.0 - u)
        z = s * (1.0 - u) * (1.0 - v)
        ww = (wu * wv * ws * (1.0 - u) ** 2 * (1.0 - v)).ravel()
        lam = np.column_stack(
            [(1.0 - x - y - z).ravel(), x.ravel(), y.ravel(), z.ravel()]
        )
        return lam, ww / ww.sum()
    raise ValueError(f"unsupported simplex dimension {m}")


def barycentric_moment(m, alpha):
    """Mean of prod(lam_k ** alpha_k) over an ``m``-simplex."""
    alpha = tuple(int(a) for a in alpha)
    num = factorial(m)
    for a in alpha:
        num *= factorial(a)
    return num / factorial(m + sum(alpha))


@lru_cache(maxsize=None)
def second_moment_tensor(m):
    """E[lam_i lam_j] on an m-simplex, shape (m+1, m+1)."""
    k = m + 1
    out = np.empty((k, k))
    for i in range(k):
        for j in range(k):
            a = [0] * k
            a[i] += 1
            a[j] += 1
            out[i, j] = barycentric_moment(m, a)
    return out


@lru_cache(maxsize=None)
def third_moment_tensor(m):
    """E[lam_i lam_j lam_l] on an m-simplex, shape (m+1,)*3."""
    k = m + 1
    out = np.empty((k, k, k))
    for i in range(k):
        for j in range(k):
            for l in range(k):
                a = [0] * k
                a[i] += 1
                a[j] += 1
                a[l] += 1
                out[i, j, l] = barycentric_moment(m, a)
    return out
