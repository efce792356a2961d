"""Independent reference values for tests/oracles.rs.

Laminates use the exact transfer-matrix dispersion relation
D(lam) = tr T(lam) / 2 = cos(2 pi eta) for -(a u')' = lam u on [0, 2 pi).
Smooth scalar fields use a dense numpy planewave solve at a large cutoff.
"""
import numpy as np
from scipy.optimize import brentq

TAU = 2 * np.pi


def transfer(lam, values, fractions):
    m = np.eye(2)
    for a, f in zip(values, fractions):
        L = TAU * f
        k = np.sqrt(lam / a)
        c, s = np.cos(k * L), np.sin(k * L)
        m = np.array([[c, s / (a * k)], [-a * k * s, c]]) @ m
    return m


def D(lam, values, fractions):
    return 0.5 * np.trace(transfer(lam, values, fractions))


def roots(g, lo, hi, n=20000):
    xs = np.linspace(lo, hi, n)
    ys = [g(x) for x in xs]
    out = []
    for i in range(n - 1):
        if ys[i] == 0 or ys[i] * ys[i + 1] < 0:
            out.append(brentq(g, xs[i], xs[i + 1], xtol=1e-15, rtol=1e-15))
    return out


def band_edges(values, fractions, top):
    plus = roots(lambda l: D(l, values, fractions) + 1, 1e-9, top)
    minus = roots(lambda l: D(l, values, fractions) - 1, 1e-9, top)
    return [0.0] + minus, plus


def edge_curvature(lam0, values, fractions, h=1e-7):
    # D(lam(eta)) = cos(2 pi eta): near eta = 1/2, lam - lam0 = 2 pi^2 d^2 / D'(lam0)
    dprime = (D(lam0 + h, values, fractions) - D(lam0 - h, values, fractions)) / (2 * h)
    return 2 * np.pi ** 2 / abs(dprime)


def bands_at(lam_eta, values, fractions, top):
    target = np.cos(TAU * lam_eta)
    return roots(lambda l: D(l, values, fractions) - target, 1e-9, top)


def planewave_scalar(coeffs, eta, K):
    """coeffs: dict m -> complex Fourier coefficient of a(y)."""
    ks = np.arange(-K, K + 1)
    H = np.zeros((len(ks), len(ks)), dtype=complex)
    for i, k in enumerate(ks):
        for j, kp in enumerate(ks):
            H[i, j] = (k + eta) * coeffs.get(k - kp, 0.0) * (kp + eta)
    return np.linalg.eigvalsh(H)


if __name__ == "__main__":
    np.set_printoptions(precision=17)
    lam = ([1.0, 4.0], [0.5, 0.5])
    at0, athalf = band_edges(*lam, 12.0)
    print("laminate(1,4) eta=0 eigenvalues", [repr(x) for x in at0[:5]])
    print("laminate(1,4) eta=1/2 eigenvalues", [repr(x) for x in athalf[:5]])
    print("laminate(1,4) band-2 min curvature at 1/2", repr(edge_curvature(athalf[1], *lam)))
    print("laminate(1,4) eta=0.3", [repr(x) for x in bands_at(0.3, *lam, 12.0)[:4]])
    lam9 = ([1.0, 9.0], [0.25, 0.75])
    a0, ah = band_edges(*lam9, 12.0)
    print("laminate(1,9) eta=0", [repr(x) for x in a0[:4]])
    print("laminate(1,9) eta=1/2", [repr(x) for x in ah[:4]])
    # narrow gap of a = 1 + 0.1 cos y at eta = 1/2
    c = {0: 1.0, 1: 0.05, -1: 0.05}
    v = planewave_scalar(c, -0.5, 64)
    print("a=1+0.1cos y eta=1/2", [repr(x) for x in v[:4]])
    v0 = planewave_scalar(c, 0.0, 64)
    print("a=1+0.1cos y eta=0", [repr(x) for x in v0[:4]])
    # wide-gap profile 1 + 1.1 cos y + 0.6 cos 2y
    w = {0: 1.0, 1: 0.55, -1: 0.55, 2: 0.3, -2: 0.3}
    for eta in (0.0, -0.5, 0.25):
        print("wide-gap eta", eta, [repr(x) for x in planewave_scalar(w, eta, 64)[:4]])
