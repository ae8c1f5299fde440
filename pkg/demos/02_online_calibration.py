"""
Online lever-arm and temporal-offset calibration
================================================

The error-state filter fuses 100 Hz IMU data with 20 Hz ranges to six anchors
and estimates the IMU-to-radio lever arm ``p_iu`` and the clock offset
``t_d`` along with the pose. Both start at zero.
"""

import numpy as np

from uwbcal import sim

scn = sim.preset("TR-N")  # 120 s, |p_iu| = 0.2 m, t_d = 25 ms
print("true lever arm   ", scn.p_iu, "m")
print("true offset      ", 1000 * scn.td.td0, "ms")

out = sim.run_scenario(scn)
res = out.result

# The calibration trace holds the estimates and their 3-sigma envelopes.
trace = res.calib_trace()
for t_show in (1.0, 10.0, 30.0, 60.0, 119.0):
    k = np.searchsorted(trace[:, 0], t_show)
    pu, td, s3 = trace[k, 1:4], trace[k, 4], trace[k, 5:9]
    print(f"t = {t_show:5.1f} s   p_iu = {np.round(100 * pu, 2)} cm (+- {np.round(100 * s3[:3], 2)})"
          f"   t_d = {1000 * td:6.2f} ms (+- {1000 * s3[3]:.2f})")

print(f"position RMSE {out.pos_rmse:.3f} m, rotation RMSE {out.rot_rmse:.4f} rad")
print(f"lever-arm error {100 * out.p_iu_err:.2f} cm, offset error {1000 * out.td_err:.2f} ms")
print(f"{res.n_updates} range updates accepted, {res.n_rejected} gated, runtime {out.runtime:.1f} s")
