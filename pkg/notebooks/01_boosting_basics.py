# coding: utf-8

# # Gradient boosting on one site
#
# The plain learner everything else is compared with. We grow a few trees on
# synthetic binary data and watch the training loss.

# In[1]:

import numpy as np

from fedxgb.boosting import Hyperparams, split_score_second_order, train_centralized
from fedxgb.data import generate_synthetic


# Split gain for a toy node: left sums (6, 4), right sums (4, 6).

# In[2]:

split_score_second_order(6, 4, 4, 6, 10, 10, lam=1.0, gamma=0.0)


# In[3]:

ds = generate_synthetic(300, 4, seed=0)
params = Hyperparams(max_depth=3, learning_rate=0.3)
ens, records, losses = train_centralized(ds.columns, [(0, ds.feature_names)], ds.labels,
                                         params, rounds=10)
print(np.round(losses, 4))


# Every split is kept as (party, record) -> (feature, threshold).

# In[4]:

for ref, rec in sorted(records.items())[:5]:
    print(ref, rec.feature_id, round(rec.threshold, 3))
