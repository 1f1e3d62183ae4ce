# coding: utf-8

# # Masked matrix products
#
# Party A holds D_A, party B holds D_B. A publishes an orthonormal basis of
# the kernel of D_A^T; B returns (I - ZZ^T) D_B for a random subset Z of it.
# A recovers D_A^T D_B without seeing D_B.

# In[1]:

import numpy as np

from fedxgb.secure_linalg import (kernel_basis, masking_projector, secure_response,
                                  select_mask, smm_protocol)

rng = np.random.default_rng(1)
A = rng.standard_normal((30, 2))
B = rng.standard_normal((30, 5))


# In[2]:

basis = kernel_basis(A, r=10, rng=rng)
W = secure_response(B, basis, r_prime=5, rng=rng)
print("max |A^T W - A^T B| =", np.abs(A.T @ W - A.T @ B).max())
print("max |W - B|         =", np.abs(W - B).max())


# The projector is singular: exactly r' singular values vanish, so B cannot
# be solved for from W.

# In[3]:

P = masking_projector(select_mask(basis, 5, rng))
s = np.linalg.svd(P, compute_uv=False)
print((s < 1e-9).sum(), "zero singular values")


# In[4]:

np.abs(smm_protocol(A, B, 10, 5, rng) - A.T @ B).max()
