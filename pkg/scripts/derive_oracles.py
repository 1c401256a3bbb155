"""Exact reference values for the unit tests, computed with sympy.

Nothing here imports the package; the printed numbers are frozen into
tests/oracle_values.py.
"""

import sympy as sp


def proj_len2(cols, b):
    A = sp.Matrix.hstack(*cols)
    P = A * (A.H * A).inv() * A.H
    pb = P * b
    return sp.simplify((pb.H * pb)[0] / (b.H * b)[0])


def main():
    e1, e2, e3 = (sp.Matrix([1 if i == j else 0 for i in range(3)]) for j in range(3))
    out = {}

    out["phi_e1_diag"] = proj_len2([e1[:2, :]], (e1[:2, :] + e2[:2, :]) / sp.sqrt(2))

    A = [e1, e2]
    B = [e3, (e1 + e3) / sp.sqrt(2)]
    side_a = max(proj_len2(A, b) for b in B)
    side_b = max(proj_len2(B, a) for a in A)
    out["theta_example_a_side"] = side_a
    out["theta_example"] = max(side_a, side_b)

    x = sp.Integer(4)
    t = sp.symbols("t", positive=True)
    pdf = t * sp.exp(-t / 2) / (2 ** 2 * sp.factorial(1))
    out["chi2_cdf_N2_x4"] = sp.integrate(pdf, (t, 0, x))

    # two-user group on a shared direction, common beam e1
    P, d1, d2 = 10, sp.Rational(1, 5), sp.Rational(4, 5)
    a = [4, 1]
    out["hand_R1"] = sp.log(1 + d1 * P * a[0], 2)
    s = [d2 * P * aj / (d1 * P * aj + 1) for aj in a]
    out["hand_R2"] = sp.log(1 + sp.Min(*s), 2)

    # duplicated-direction instance: h1 = 2 e1, h2 = e1, h3 = e2, P_t = 30
    q = 2 ** sp.Rational(3, 2) + 2
    dd1, dd2 = 1 / q, (q - 1) / q
    Pg = sp.Integer(2) * 30 / 3
    g = [4, 1]
    out["dup_R1"] = sp.log(1 + dd1 * Pg * g[0], 2)
    out["dup_R2"] = sp.log(1 + sp.Min(*[dd2 * Pg * gj / (dd1 * Pg * gj + 1) for gj in g]), 2)
    out["dup_R3"] = sp.log(1 + sp.Integer(30) / 3, 2)

    R = 1
    out["mrt_cf_N1"] = sp.Rational((2 ** R - 1) ** 1, 2 * 1 * 100)
    out["mrt_cf_N2"] = sp.Rational((2 ** R - 1) ** 2, 4 * 2 * 100 ** 2)
    out["mrt_exact_N1_snr100"] = 1 - sp.exp(-sp.Rational(1, 200))

    for L in (2, 3, 4):
        ds = [1 / q ** (L - 1)] + [(q - 1) / q ** (L - i + 1) for i in range(2, L + 1)]
        out[f"delta_L{L}"] = tuple(ds)

    for k, v in out.items():
        if isinstance(v, tuple):
            print(f"{k} = ({', '.join(repr(float(sp.N(x, 30))) for x in v)})")
        else:
            print(f"{k} = {float(sp.N(v, 30))!r}")


if __name__ == "__main__":
    main()
