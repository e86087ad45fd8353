"""Generate the embedded Gauss(7)/Kronrod(15) quadrature constants used in quad.py.

The 8 added Kronrod abscissae are the roots of the monic degree-8 polynomial
orthogonal to all lower degrees against the signed weight P7(x) on [-1, 1]
(the Stieltjes polynomial).  Everything is derived in exact rational /
high-precision arithmetic and printed as float64 literals, so the runtime
package carries no sympy/mpmath dependency.

Run:  python3 tools/gen_gauss_kronrod.py
"""

import sympy as sp
from mpmath import mp

mp.dps = 60

x = sp.symbols("x")
P7 = sp.legendre_poly(7, x)

# Stieltjes polynomial E8: monic, deg 8, int_{-1}^{1} P7*E8*x^k dx = 0 for k<8.
cs = sp.symbols("c0:8")
E8 = x**8 + sum(cs[k] * x**k for k in range(8))
eqs = [sp.integrate(sp.expand(P7 * E8) * x**k, (x, -1, 1)) for k in range(8)]
sol = sp.solve(eqs, list(cs), rational=True)
E8 = sp.expand(E8.subs(sol))

gauss_roots = sp.Poly(P7, x).real_roots()
kron_roots = sp.Poly(E8, x).real_roots()

def to_mp(r):
    return mp.mpf(sp.N(r, 55).__str__())

nodes_g = sorted(to_mp(r) for r in gauss_roots)
nodes_k = sorted(to_mp(r) for r in kron_roots)
assert len(nodes_g) == 7 and len(nodes_k) == 8

nodes15 = sorted(nodes_g + nodes_k)
# Gauss nodes must interlace: positions 1,3,...,13 of the sorted 15.
for i, n in enumerate(nodes15):
    in_gauss = any(abs(n - g) < mp.mpf("1e-40") for g in nodes_g)
    assert in_gauss == (i % 2 == 1), f"interlacing broken at {i}"

def interpolatory_weights(nodes):
    """Solve V^T w = moments of dx on [-1,1] in 60-digit arithmetic."""
    n = len(nodes)
    V = mp.matrix(n, n)
    m = mp.matrix(n, 1)
    for i in range(n):
        m[i] = mp.mpf(2) / (i + 1) if i % 2 == 0 else mp.mpf(0)
        for j in range(n):
            V[i, j] = nodes[j] ** i
    return mp.lu_solve(V, m)

w15 = interpolatory_weights(nodes15)
w7 = interpolatory_weights(nodes_g)

# Verification: degree exactness on monomials.
def check(nodes, w, deg):
    for k in range(deg + 1):
        exact = mp.mpf(2) / (k + 1) if k % 2 == 0 else mp.mpf(0)
        got = mp.fsum(w[j] * nodes[j] ** k for j in range(len(nodes)))
        assert abs(got - exact) < mp.mpf("1e-45"), (k, got, exact)

check(nodes15, w15, 22)   # Kronrod 15 from Gauss 7: exact through degree 22
check(nodes_g, w7, 13)    # Gauss 7: exact through degree 13
assert all(w > 0 for w in w15) and all(w > 0 for w in w7)

def fmt(v):
    return repr(float(v))

print("# 15 Kronrod nodes (ascending); Gauss-7 subset at odd indices")
print("_GK_NODES = (")
for n in nodes15:
    print(f"    {fmt(n)},")
print(")")
print("_GK_WEIGHTS = (")
for w in w15:
    print(f"    {fmt(w)},")
print(")")
print("# weights of the embedded 7-point Gauss rule, aligned with odd node indices")
print("_G7_WEIGHTS = (")
for w in w7:
    print(f"    {fmt(w)},")
print(")")
