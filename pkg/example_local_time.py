import logging

import numpy as np

from fbmlab.fbm import TimeGrid, sample_fbm
from fbmlab.holder import estimate_holder_time, lower_bound_check
from fbmlab.local_time import epsilon_convergence_study, local_time_field
from fbmlab.sde import Scheme, check_ellipticity, solve_sde
from fbmlab.vector_fields import two_plus_sin

logging.basicConfig(level=logging.INFO)

h = 0.3
vf = two_plus_sin()
print(check_ellipticity(vf, np.linspace(-10.0, 10.0, 2001)))

driver = sample_fbm(h, TimeGrid(0.0, 1.0, 2**14), seed=42)
solution = solve_sde(vf, 0.0, driver, Scheme.WONG_ZAKAI)
solution.to_csv("solution.csv")

# eps ladder at one time: the approximations settle until eps reaches the path's per-step movement
table = epsilon_convergence_study(solution, 0.1, 1.0, [0.2, 0.1, 0.05, 0.025, 0.0125])
for row in table.rows():
    print(row["epsilon"], row["sup_difference"], row["below_noise_floor"])

field = local_time_field(solution)  # a = 0.1, eps = 0.5 * step ** h
print(f"occupation identity error: {np.max(field.identity_errors()):.2e}")
field.to_binary("local_time.bin")

estimate = estimate_holder_time(field, h=h)
print(f"time exponent {estimate.exponent:.3f} (expected {1 - h}), r^2 {estimate.r_squared:.3f}")
print(lower_bound_check(solution, field, float(field.t_grid[0])).passed)
