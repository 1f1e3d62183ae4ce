# coding: utf-8

# # Vertical federation end to end
#
# One active party holds the labels and two passive parties hold the
# features. The secure modes give the same trees as the single-site
# learner; the perturbed mode trades accuracy for privacy.

# In[1]:

import numpy as np

from fedxgb.boosting import Hyperparams
from fedxgb.data import even_spec, generate_synthetic, partition
from fedxgb.federation import (ProtocolParams, federated_predict, federation_from_slices,
                               train_ensemble)

ds = generate_synthetic(300, 4, seed=5)
spec = even_spec(ds, 2)
slices = partition(ds, spec)
params = Hyperparams(n_candidates=4, min_bucket=8, min_instances=20)


# In[2]:

runs = {}
for mode in ("centralized", "smm1", "smm2"):
    fed = federation_from_slices(slices, spec, params, ProtocolParams(), seed=0)
    runs[mode] = train_ensemble(fed, mode, 5)
    print(mode, np.round(runs[mode].losses, 5))


# Perturbed gradients need a larger lambda to keep trees stable.

# In[3]:

ldp_params = Hyperparams(lam=300 / 16, n_candidates=4, min_bucket=8, min_instances=20)
for eps in (1.0, 3.0):
    fed = federation_from_slices(slices, spec, ldp_params, ProtocolParams(epsilon=eps), 0)
    print("ldp eps", eps, np.round(train_ensemble(fed, "ldp", 5).losses, 4))


# Inference walks each tree, asking the owner of every split for the direction.

# In[4]:

fed = federation_from_slices(slices, spec, params, ProtocolParams(), seed=0)
res = train_ensemble(fed, "smm2", 5)
[round(federated_predict(res.ensemble, res.lookup, fed.parties, u), 4) for u in range(5)]
