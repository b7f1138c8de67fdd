# %% [markdown]
# # Checking the tape against finite differences
# Every primitive and the composed network are compared with central
# differences in float64.

# %%
import numpy as np

from slotnet.diffnet import tensor as T
from slotnet.diffnet.gradcheck import check

rng = np.random.default_rng(0)

# %%
x = rng.normal(size=(2, 8, 8, 3))
w = rng.normal(size=(3, 3, 3, 4))
b = rng.normal(size=4)
err = check(lambda x, w, b: T.tsum(T.square(T.conv2d(x, w, b, stride=1, pad=1))), [x, w, b])
print(f"conv2d worst relative error: {err:.2e}")

# %%
a = rng.normal(size=(5, 3))
err = check(lambda a: T.tsum(T.log(T.softmax(a, axis=-1), 1e-12)), [a])
print(f"log-softmax worst relative error: {err:.2e}")

# %% [markdown]
# Pooling ties are broken towards the first maximum, so inputs with repeated
# values still get a well defined gradient. Finite differences are only
# meaningful away from ties, hence the random input here.

# %%
p = rng.normal(size=(1, 6, 6, 2))
print(f"maxpool2 worst relative error: {check(lambda p: T.tsum(T.square(T.maxpool2(p))), [p]):.2e}")
