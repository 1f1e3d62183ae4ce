# coding: utf-8

# # Perturbing gradients
#
# Two per-entry mechanisms: Laplace noise and Duchi's two-point release.
# Both are unbiased for inputs clipped to [-C, C].

# In[1]:

import numpy as np

from fedxgb import ldp

rng = np.random.default_rng(4)
v = np.full(100_000, 0.3)


# In[2]:

for eps in (1.0, 3.0):
    b = ldp.PrivacyBudget(eps, clip=1.0)
    lap = ldp.laplace_perturb(v, b, rng)
    du = ldp.duchi_perturb(v, b, rng)
    print(f"eps={eps}: laplace mean {lap.mean():.3f} var {lap.var():.2f} "
          f"(expected {ldp.laplace_variance(b):.2f}); duchi mean {du.mean():.3f}, "
          f"outputs {np.unique(du).round(3)}")


# Variance of the noisy first-order score -X_L X_R / lambda.

# In[3]:

ldp.first_order_score_variance(3.0, -2.0, var_left=0.5, var_right=0.25, lam=1.0)
