"""Split a jump integrand into its L^q and L^2 parts.

The sum norm is a norm, so rescaling phi leaves the optimal split unchanged.
Rescaling the measure does not: the L^q part grows like mass^{1/q} and the
L^2 part like mass^{1/2}. Heavy atoms push phi into L^2 and light atoms
push it into L^q, with a genuine mixed split in between.
"""
import numpy as np

from lpbsde.levy_measure import Atomic, AtomValues
from lpbsde.sum_norms import sum_norm, sum_norm_bruteforce, threshold_bound

q = 1.3
vals = np.array([[1.0], [-2.0], [4.0]])
phi = AtomValues(vals)
for mass in (0.01, 0.1, 1.0, 10.0, 100.0):
    m = Atomic([[1.0], [2.0], [3.0]], mass * np.array([2.0, 0.5, 0.1]))
    res = sum_norm(phi, m, q)
    share = np.ravel(res.decomposition[1].values) / np.ravel(vals)
    print(f"mass x{mass:<6g} norm {res.value:9.4f}  dual bound {res.lower_bound:9.4f}  "
          f"threshold bound {threshold_bound(phi, m, q)[0]:9.4f}  L^q share {np.round(share, 3)}")

m = Atomic([[1.0], [2.0], [3.0]], [2.0, 0.5, 0.1])
phi = AtomValues([[0.7], [-1.2], [3.0]])
print(f"\nsolver {sum_norm(phi, m, q).value:.10f}  brute force {sum_norm_bruteforce(phi, m, q):.10f}")
