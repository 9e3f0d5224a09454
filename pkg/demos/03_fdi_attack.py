"""Stealthy false data injection.

The attacker adds a = H c to each measurement, with H the measurement
Jacobian at the operator's forecast. To first order the bad-data residual
does not change, so a residual test cannot see the attack. The robust
filter still limits the damage, because the injected offsets show up as
large standardised innovations.
"""
# %%
import numpy as np

from cyberdse import harness as hn
from cyberdse.attacks import build_fdi, jacobian_h, residual_norm
from cyberdse.dynamics import GeneratorParams

p = GeneratorParams()
x_hat = np.array([0.6, 1.0, 1.05, 0.2])
J = jacobian_h(x_hat, (1.02, 0.05), p)
print("H =\n", np.round(J.H, 4))

rng = np.random.default_rng(0)
z = J.h0 + rng.normal(0, 0.01, 3)
c = rng.normal(0, 0.05, 4)
print("residual before", residual_norm(z, x_hat, J), "after", residual_norm(z + build_fdi(c, J), x_hat + c, J))

# %% attacks of growing strength on the nine-bus-like scenario
for sigma in (1e-4, 1e-3, 1e-2):
    art = hn.run_pipeline(hn.preset("ninebus", "fdi", sigma, seed=0))
    c, r = art.report("ckf"), art.report("rckf")
    rejected = art.metrics()[art.config.name]["attack_log"]["stealth_rejected"]
    print(f"sigma_c {sigma:g}: tau3(delta) CKF {c['delta']['tau3']:.2e} RCKF {r['delta']['tau3']:.2e}, "
          f"tau3(omega) CKF {c['omega']['tau3']:.2e} RCKF {r['omega']['tau3']:.2e}, "
          f"stealth rejections {rejected}")
