"""
Cost of a wrong fixed calibration
=================================

With online calibration disabled the filter uses whatever offsets it is
given. Errors in the lever arm mostly hurt position; errors in the temporal
offset mostly hurt attitude.
"""

from uwbcal import sim

rows = sim.sensitivity_sweep(sim.preset("SENS"), baselines=(0.2,), p_iu_errors=(0.0, 0.01, 0.02),
                             td_errors=(0.0, 0.01, 0.03))
ref = rows[0]
print("baseline  lever err  offset err   pos RMSE   rot RMSE")
for r in rows:
    print(f"{r['baseline']:8.2f}  {100 * r['p_iu_error']:6.0f} cm  {1000 * r['td_error']:7.0f} ms"
          f"  {r['pos_rmse']:7.4f} m ({r['pos_rmse'] / ref['pos_rmse']:.2f}x)"
          f"  {r['rot_rmse']:.4f} rad ({r['rot_rmse'] / ref['rot_rmse']:.2f}x)")
