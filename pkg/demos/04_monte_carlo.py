"""
Monte Carlo over random offsets
===============================

Lever arms are drawn per axis from [-0.5, 0.5] m and offsets from
[-25, 25] ms; every run has its own noise seed. Five runs keep this demo
short; the acceptance test uses twenty.
"""

from uwbcal import sim

mc = sim.monte_carlo(sim.preset("MC"), n_runs=5)
for r in mc.runs:
    print(f"run {r['run']}: p_iu {[round(x, 2) for x in r['p_iu_true']]} m, t_d {r['td_true_ms']:6.2f} ms"
          f" -> pos {r['pos_rmse_m']:.3f} m, p_iu err {r['p_iu_err_cm']:.2f} cm, t_d err {r['td_err_ms']:.2f} ms")
print("average:", {k: round(v, 4) for k, v in mc.table().items()})
print("failed runs:", mc.n_failed)
