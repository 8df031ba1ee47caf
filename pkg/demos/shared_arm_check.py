"""Size and power of the shared-arm check, and the price of using phi.

Here every external outcome is shifted by the same constant, as if the
external trial measured response on a different baseline. Conditional means
are then no longer transportable, but conditional differences are: psi picks
up the shift while phi does not. The shared arm sees the same shift, so the
check rejects more often as it grows. With no shift, phi pays for its
robustness with a larger variance.

Run:  python3 demos/shared_arm_check.py [datasets per shift, default 200]
"""

import sys

import numpy as np

from extcomp import (CompositeDataset, DgpParams, SimulationScenario, efficiency_gap,
                     estimate_all, fit_nuisances, generate_dataset, required_cells,
                     shared_arm_test)
from extcomp.simulation import calibrate_alpha0, scenario_specs

reps = int(sys.argv[1]) if len(sys.argv) > 1 else 200
params = DgpParams()
alpha0 = calibrate_alpha0(params, 0.5)
sc = SimulationScenario(1000, 1000, iterations=reps, base_seed=5150)
specs = scenario_specs(sc)

print(f"{reps} datasets of about 2,000 rows per shift\n")
print("shift  reject@0.05   mean psi   mean phi   var ratio phi/psi")
for shift in (0.0, 0.1, 0.2, 0.3, 0.5, 1.0):
    rejected, psi, phi, ratio = 0, [], [], []
    for it in range(reps):
        ds = generate_dataset(sc, params, it, alpha0)
        moved = ds.y + shift * (ds.s == 0)
        ds = CompositeDataset(ds.x, ds.s, ds.a, moved, ds.coding, ds.covariate_names)
        ns = fit_nuisances(ds, *specs, required_cells(ds.coding, ["phi"]))
        rejected += shared_arm_test(ds, ns).p_value < 0.05
        out = estimate_all(ds, ns, ["AW1"], ["psi", "phi"])
        psi.append(out[("psi", "AW1")].value)
        phi.append(out[("phi", "AW1")].value)
        gap = efficiency_gap(ds, ns)
        ratio.append(gap.var_phi / gap.var_psi)
    print(f"{shift:5.1f}  {rejected / reps:11.3f}  {np.mean(psi):+9.4f}  {np.mean(phi):+9.4f}  "
          f"{np.mean(ratio):18.2f}")

# psi moves by -shift while phi stays near 0. A small shift can cost psi more
# bias than phi costs in variance before the check has the power to notice.
