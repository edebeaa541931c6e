"""Using sigma: outlier removal and calibration against a uniform sigma.

Part one builds an estimate whose sigma ranks its errors well and shows
the error metrics dropping as the most uncertain pixels are discarded.

Part two is a stage-2 run: the means carry random error whose size
grows from left to right, only the log-std rasters are trained, and the
negative log-likelihood of the ground truth is compared with the best
single sigma for the same mean.  Moving the learned sigma onto a second
error draw shows how much of it is tied to the particular draw.

Run:  python3 demos/04_removal_and_calibration.py   (about a minute)
"""

from vardepth import checks
from vardepth.experiment import load_experiment, optimizer_config

# %% outlier removal with a well-ranked sigma
r = checks.removal_trend()
print(f"Spearman(sigma, |error|) = {r.spearman:.3f}")
print("removed %   abs_rel   sq_rel    rmse   rmse_log")
for i, p in enumerate((0, 5, 10, 15, 20, 30)):
    print(f"  {p:5d}   " + "  ".join(f"{r.columns[m][i]:.4f}" for m in ("abs_rel", "sq_rel", "rmse", "rmse_log")))

# %% a stage-2 calibration run (sigma still decides little after a few hundred steps)
exp = load_experiment()
c = checks.calibration(exp, seeds=(11,))
print(f"\nstage 2, {optimizer_config(exp).stage2_steps} steps in {c.seconds:.0f} s")
print(f"  NLL of ground truth, learned sigma: {c.nll[0]:.4f}")
print(f"  best uniform sigma, same mean:      {c.uniform_nll[0]:.4f}")
print(f"  learned sigma on a second draw:     {c.transfer_nll[0]:.4f}")
print(f"  best uniform sigma, second draw:    {c.transfer_uniform_nll[0]:.4f}")
