# coding: utf-8

# # When a kernel basis gives rows away
#
# A splitting matrix with all-zero and all-one rows has very sparse kernel
# vectors in the canonical basis. Masking with them can leave rows of the
# gradient vector unchanged. Gaussian fake columns fix that.

# In[1]:

import numpy as np

from fedxgb.secure_linalg import (detect_sparsity_leak, leak_fixture, masking_projector,
                                  secure_kernel, select_mask)

rng = np.random.default_rng(3)
M = leak_fixture(40, 8, n_zero=2, n_one=2, rng=rng)
M[:5]


# In[2]:

for l2 in (0, 2):
    hits = 0
    for seed in range(50):
        r = np.random.default_rng([seed, 7])
        Mi = leak_fixture(40, 8, 2, 2, r)
        _, basis = secure_kernel(Mi, 0, l2, r=10, rng=r, mix=False)
        Z = select_mask(basis, 5, r)
        hits += bool(detect_sparsity_leak(basis, masking_projector(Z)))
    print(f"l2={l2}: {hits}/50 seeds expose a row")
