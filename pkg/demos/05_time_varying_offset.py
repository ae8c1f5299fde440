"""
Tracking a changing temporal offset
===================================

With a random-walk model on ``t_d`` the filter follows a step of the clock
offset from 25 ms to 10 ms at t = 60 s.
"""

import numpy as np

from uwbcal import sim

scn = sim.preset("TD-VAR")
r = sim.run_scenario(scn).result
err = r.t_d - scn.td(r.t)
s3 = 3 * r.sigma[:, 18]
for t_show in (50, 59, 61, 65, 70, 80, 90, 119):
    k = np.searchsorted(r.t, t_show)
    flag = "inside" if abs(err[k]) <= s3[k] else "outside"
    print(f"t = {t_show:3d} s  true {1000 * scn.td(r.t[k]):5.1f} ms  estimate {1000 * r.t_d[k]:6.2f} ms"
          f"  3 sigma {1000 * s3[k]:5.2f} ms  ({flag})")
