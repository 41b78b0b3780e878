"""Arbitrary-precision evaluation of the error-bound constants.

Prints Rust source for the frozen regression table used by
`crates/core/tests/constants_regression.rs`. Run with `python3 scripts/regress_constants.py`.
"""
from mpmath import mp, mpf, sqrt, exp, e, pi

mp.dps = 50

# (name, lambda, E, M, M(V), lip, T, dt, mu0, nu0, |p| moment, d, m_prime, hbar)
SETS = [
    ("free", 1, 0, 1, 0, 0, 1, mpf("0.1"), 1, 0, 0, 1, 0, mpf("0.01")),
    ("pendulum_default", 1, 0, 1, 2, 1, 1, mpf("0.2"), mpf("1.125"),
     mpf("0.0625") + 3 * mpf("0.0625") ** 2, mpf("0.25") * sqrt(2 / pi), 1, mpf("3.5"), mpf("0.01")),
    ("harmonic", 1, 0, None, None, 1, 1, mpf("0.2"), mpf("1.125"), mpf("0.07421875"), None, 1, None, mpf("0.1")),
    ("pendulum_short", 2, 0, 4, 4, 2, mpf("0.1"), mpf("0.05"), 0, 0, 3, 1, 40, mpf("0.001")),
    ("tilted_2d", mpf("1.5"), mpf("0.7"), 3, mpf("2.5"), mpf("1.5"), 2, mpf("0.5"), mpf("0.3"),
     mpf("0.4"), mpf("0.5"), 2, 10, mpf("0.5")),
]


def c_t(lam, E, T, dt, mu0):
    g = exp(2 * T * (1 + lam**2 * (1 + dt) ** 2))
    bracket = 1 + g * mu0 + 2 * (1 + dt) * E * (g - 1) / (1 + (1 + dt) * (1 + 2 * lam**2 * (1 + dt) ** 2))
    sq = mpf(9) / 4 * lam**2 * (mpf(1) / 2 + lam) ** 2 * (exp((2 + lam) * T) - 1) / (2 + lam) * bracket
    return sqrt(sq)


def d_t(lam, M, T, nu0):
    return sqrt((exp((2 + lam) * T) - 1) / (2 + lam) * M**3 * (1 + exp(3 * T) * (nu0 + M**2)))


def sqrt_term(hbar, lip, T, d):
    return 2 * sqrt(d * hbar) * (1 + exp(mpf(1) / 2 * T * (1 + max(1, lip**2))))


def fmt(x):
    return "None" if x is None else f"Some({mp.nstr(x, 25, min_fixed=-100, max_fixed=100)})"


print("// name, c_T, d_T, c_uniform, d_uniform, simple envelope, strang envelope")
for (name, lam, E, M, MV, lip, T, dt, mu0, nu0, absp, d, mprime, hbar) in SETS:
    lam, E, T, dt, mu0, nu0, lip, hbar = map(mpf, (lam, E, T, dt, mu0, nu0, lip, hbar))
    ct = c_t(lam, E, T, dt, mu0)
    dt_c = None if M is None else d_t(lam, mpf(M), T, nu0)
    s0 = sqrt_term(mpf(1), lip, T, d)  # 2√d(1+exp(...))
    cu = None
    if MV is not None and absp is not None:
        MV = mpf(MV)
        cu = max(4 * sqrt(2) * MV, ct, 4 * MV * (MV * T**2 + d + absp), s0)
    du = None if (dt_c is None or mprime is None) else max(dt_c, mpf(mprime), s0)
    env_s = ct * dt + sqrt_term(hbar, lip, T, d)
    env_d = None if dt_c is None else dt_c * dt**2 + sqrt_term(hbar, lip, T, d)
    print(f'("{name}", {fmt(ct)[5:-1]}, {fmt(dt_c)}, {fmt(cu)}, {fmt(du)}, {fmt(env_s)[5:-1]}, {fmt(env_d)}),')
