"""Scanner calibration walkthrough.

The dual-axis scanner is linear over its working range: angles are an affine
map of the drive voltages. We synthesize feedback samples from a "true"
device, fit the model back with the two-stage procedure (matrix first, then
offsets as the mean residual), and check how noise in the angle feedback
propagates into the recovered coefficients.
"""

import numpy as np

import nlostk as nk
from nlostk import galvo

rng = np.random.default_rng(0)

# A plausible device: ~7 deg/V per axis, slight cross-coupling, small offsets.
true_model = nk.GalvoModel(eps=np.deg2rad([0.2, -0.1]),
                           beta=np.deg2rad([[7.2, 0.6], [-0.5, 7.0]]))

# Feedback samples on a symmetric voltage grid. A zero-mean design matters
# for the two-stage fit: the matrix stage has no intercept, so a one-sided
# grid would let the offsets leak into the matrix.
v = np.linspace(-4.5, 4.5, 10)
V = np.column_stack([g.ravel() for g in np.meshgrid(v, v)])
angles_clean = galvo.voltages_to_angles(true_model, V)

print("== noiseless fit ==")
model, report = galvo.fit_galvo(V, angles_clean)
print("beta error (rad/V):", np.abs(model.beta - true_model.beta).max())
print("eps error (rad):   ", np.abs(model.eps - true_model.eps).max())

print("\n== fit with 0.01 deg angle noise ==")
noisy = angles_clean + np.deg2rad(0.01) * rng.standard_normal(V.shape)
model_n, report_n = galvo.fit_galvo(V, noisy)
print("beta relative error:", (np.abs(model_n.beta - true_model.beta)
                               / np.abs(true_model.beta)).max())
print("residual RMS (deg): ", np.rad2deg(report_n.rms_final))

print("\n== commanding arbitrary angles ==")
target = np.deg2rad([12.0, -7.5])
volts = galvo.angles_to_voltages(model_n, target)
achieved = galvo.voltages_to_angles(true_model, volts)
print("requested (deg):", np.rad2deg(target))
print("achieved  (deg):", np.round(np.rad2deg(achieved), 4))
print("pointing error (deg):", np.rad2deg(np.abs(achieved - target)).max())
