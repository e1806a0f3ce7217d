# %% [markdown]
# # Filling a gap with a shared latent force
#
# We simulate two years of three noisy sensors driven by one forcing, delete
# the first 120 days of sensor 0 and fit the LFM.  The other two sensors
# still see the forcing, so the model can reconstruct sensor 0 inside the
# gap.  A single-output GP on sensor 0 alone has nothing to go on there.

# %%
import numpy as np

from gplfm.data import Channel, TimeSeriesSet
from gplfm.gp import ConditionedGP, LatentForce
from gplfm.lfm import LfmParams
from gplfm.metrics import mse_nmse, pearson_r
from gplfm.optimize import LfmFamily, OptimizerConfig, RbfFamily, fit_restarts
from gplfm.oracle import SimScenario, simulate

D = np.array([1 / 10, 1 / 12, 1 / 16])
truth = LfmParams(
    decay=D, offset=np.array([0.25, 0.2, 0.3]) * D, noise_std=[0.025, 0.035, 0.012],
    sensitivity=[[0.010, 0.012, 0.009]], force_lengthscale=[5.0],
)
sim = simulate(SimScenario(truth, 730.0, force_seed=3, missing={0: 0.1, 1: 0.2, 2: 0.25}))
print(sim.data)

# %%
gap = 120.0
c = sim.data[0]
keep = c.times >= gap
data = sim.data.replace_channel(Channel(c.id, c.times[keep], c.values[keep]))
held_t, held_y = c.times[~keep], c.values[~keep]

# %% [markdown]
# Fit both models.  The iteration budget is kept small so the demo runs in
# about a minute; the fit is not fully converged.

# %%
cfg = OptimizerConfig(max_iters=60, restarts=2)
lfm_rep = fit_restarts(data, LfmFamily(3, 1), cfg)
print("fitted decay times:", np.round(lfm_rep.derived["tau"], 1))
kernel, noise, mean = LfmFamily(3, 1).build(lfm_rep.constrained)
lfm = ConditionedGP(data, kernel, noise, mean)

one = TimeSeriesSet((data[0],))
rbf_rep = fit_restarts(one, RbfFamily(1), cfg)
kernel, noise, mean = RbfFamily(1).build(rbf_rep.constrained)
rbf = ConditionedGP(one, kernel, noise, mean)

# %%
print("NMSE%% in the gap: LFM %.2f, single-output GP %.2f" % (
    mse_nmse(held_y, lfm.predict(0, held_t).mean)[1], mse_nmse(held_y, rbf.predict(0, held_t).mean)[1]))

# %% [markdown]
# The force posterior tracks the force that generated the data.

# %%
days = np.arange(0.0, 731.0)
step = int(round(1.0 / sim.grid[1]))
f_hat = lfm.predict(LatentForce(0), days).mean
print("force R:", round(pearson_r(f_hat, sim.forces[0, ::step]), 3))
