import numpy as np
from scipy import stats
rng = np.random.default_rng(20240601)
def tab(sizes, shifts, sd, n_xy, rho):
    groups = [np.round(rng.normal(s, sd, n), 3) for n, s in zip(sizes, shifts)]
    x = np.round(rng.normal(0, 1, n_xy), 3)
    y = np.round(rho * x + np.sqrt(1 - rho**2) * rng.normal(0, 1, n_xy), 3)
    return groups, x, y
tables = [
    tab([6, 7, 5, 8], [0.30, 0.34, 0.29, 0.41], 0.05, 12, 0.55),
    tab([9, 9, 9], [1.0, 2.2, 1.4], 0.6, 20, -0.8),
    tab([5, 5, 5, 5, 5], [10, 10.5, 9.8, 10.2, 11], 1.0, 8, 0.1),
]
def lit(a): return "&[" + ", ".join(repr(float(v)) for v in a) + "]"
for k, (g, x, y) in enumerate(tables):
    F, p = stats.f_oneway(*g)
    t = stats.tukey_hsd(*g)
    r, pr = stats.pearsonr(x, y)
    print(f"// table {k+1}")
    print("RefTable {")
    print("    groups: &[" + ", ".join(lit(a) for a in g) + "],")
    print(f"    f: {float(F)!r}, f_p: {float(p)!r},")
    pairs = []
    for i in range(len(g)):
        for j in range(i+1, len(g)):
            pairs.append(f"({i}, {j}, {float(t.statistic[i,j])!r}, {float(t.pvalue[i,j])!r})")
    print("    tukey: &[" + ", ".join(pairs) + "],")
    print(f"    x: {lit(x)},")
    print(f"    y: {lit(y)},")
    print(f"    r: {float(r)!r}, r_p: {float(pr)!r},")
    print("},")
