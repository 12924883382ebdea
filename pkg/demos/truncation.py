"""Truncated solutions converge as the truncation level grows.

The terminal value is replaced by q_n(xi) and the generator by f_n. The E^p
distance between consecutive levels shrinks quickly once n exceeds the
typical size of N_T.
"""
from lpbsde.estimates_lab import truncation_study

st = truncation_study("counterexample", levels=(1, 2, 4, 8, 16), p=1.5, n_paths=10_000,
                      seed=4, intensity=3.0)
for (a, b), d in zip(zip(st.levels, st.levels[1:]), st.differences):
    print(f"levels {a:2d} -> {b:2d}: E^p difference {d:.4g}")
print("decreasing:", st.decreasing)
