"""Why L^p data alone do not give the naive a priori estimate.

With mu = delta_1, xi = N_T and f = -2 psi(1), the solution is
Y_t = N_t - (T - t), psi = 1, Z = 0. Write
I1 = E int_0^T max(|Y_s|, |Y_s + 1|)^{p-2} ds and I2 = E int_0^T |Y_s|^{p-2} ds.
The naive estimate needs I2 to be controlled by I1, yet the simulated gap
I2 - I1 stays strictly positive for every p in (1, 2) and blows up as p -> 1.
"""
import sys

from lpbsde.bsde_engine import make_problem, max_node_error, solve_backward
from lpbsde.estimates_lab import counterexample_gap
from lpbsde.jump_paths import sample_poisson_measure, simulate_paths, to_arrays, uniform_grid

n_paths = int(sys.argv[1]) if len(sys.argv) > 1 else 20_000

prob = make_problem("counterexample")
sc = to_arrays(simulate_paths(prob.measure, uniform_grid(1.0, 64), 200, seed=1), prob.measure)
sol = solve_backward(prob.generator, prob.terminal, sc, prob.measure)
print(f"lattice solve vs closed form: max node error {max_node_error(sol, prob, sc):.1e}")

# one set of jump times shared by every exponent, so the rows are comparable
jumps = [sample_poisson_measure(prob.measure, 1.0, 2, i).times for i in range(n_paths)]
print(f"\n{'p':>5} {'I1':>9} {'I2':>9} {'gap':>9} {'gap/se':>8}")
for p in (1.1, 1.3, 1.5, 1.7, 1.9):
    r = counterexample_gap(p, 1.0, jumps=jumps)
    print(f"{p:5.1f} {r.I1:9.4f} {r.I2:9.4f} {r.gap:9.4f} {r.significance:8.0f}")
