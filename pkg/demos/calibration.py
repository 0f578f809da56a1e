"""Fitting the vehicle model from a drive log.

A synthetic log is generated from known efficiency coefficients and a
known fuel curve.  The regressions should recover them: exactly without
noise, and approximately when the ratios are noisy.

    python3 demos/calibration.py
"""

import numpy as np

from phevplan import FuelCurve
from phevplan.calibrate import FEATURE_NAMES, fit_efficiency, fit_fuel_from_trace, synthetic_trace

# coefficients over (v^2, v, a+^2, a+, a-^2, a-, 1)
LAM_D = np.array([1e-5, 2e-4, 3e-3, 1e-2, 1e-3, 5e-3, 1.05])
LAM_R = np.array([-1e-5, 1e-4, 0.0, 0.0, -2e-3, -1e-2, 0.7])
MU_E = np.array([-2e-5, 1e-3, 2e-3, -5e-3, 1e-3, -2e-3, 0.8])

# gentle cruising mixed with hard accelerations and braking
rng = np.random.default_rng(1)
steps = np.where(rng.random(2000) < 0.5, rng.uniform(-0.25, 0.35, 2000), rng.uniform(-3, 2, 2000))
speed = np.clip(25 + np.cumsum(steps), 5, 40)
curve = FuelCurve(0.01, 0.1, 0.05)
truths = {"discharge": LAM_D, "regen": LAM_R, "engine_charge": MU_E}

for noise in (0.0, 1e-3):
    trace = synthetic_trace(speed, LAM_D, LAM_R, MU_E, curve, charge_power=2000.0,
                            noise=noise, rng=np.random.default_rng(2))
    print(f"noise {noise:g}")
    for target, truth in truths.items():
        reg = fit_efficiency(trace, target)
        err = np.abs(reg.coeffs - truth)
        worst = FEATURE_NAMES[int(np.argmax(err))]
        print(f"  {target:14} rows {reg.rows_used:5}  max |error| {err.max():.2e} ({worst})")
    fit = fit_fuel_from_trace(trace)
    print(f"  fuel curve     gamma = ({fit.gamma2:.6f}, {fit.gamma1:.6f}, {fit.gamma0:.6f})")
