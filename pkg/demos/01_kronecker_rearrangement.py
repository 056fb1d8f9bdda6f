"""Kronecker products as rank-1 matrices.

A walk through the identities that everything else builds on: row-major
vec, the Kronecker product, the Van Loan rearrangement, and why the best
Kronecker approximation of a single gradient's outer product comes straight
from that gradient's leading singular pair.
"""
import numpy as np

from dykaf import linalg as la
from dykaf.kron_approx import init_from_gradient, nkp_best

np.set_printoptions(precision=3, suppress=True)
rng = np.random.default_rng(0)

# %% vec stacks rows, and kron matches it
X = np.arange(6.0).reshape(2, 3)
print("X =\n", X)
print("vec(X) =", la.vec(X))

B = rng.standard_normal((2, 2))
C = rng.standard_normal((3, 3))
lhs = la.vec(B @ X @ C.T)
rhs = la.kron(B, C) @ la.vec(X)
print("max |vec(B X C^T) - (B kron C) vec(X)| =", np.max(np.abs(lhs - rhs)))

# %% the rearrangement turns B kron C into an outer product
K = la.kron(B, C)
R = la.rearrange(K, 2, 2, 3, 3)
print("rank of rearranged B kron C:", np.linalg.matrix_rank(R))
print("equals vec(B) vec(C)^T:", np.array_equal(R, np.outer(la.vec(B), la.vec(C))))

# %% a gradient's outer product rearranges to G kron G
G = rng.standard_normal((2, 3))
F = np.outer(la.vec(G), la.vec(G))
print("rearrange(vec G vec G^T) == G kron G:", np.array_equal(la.rearrange(F, 2, 2, 3, 3), la.kron(G, G)))

# %% so the best Kronecker fit of F is the top singular pair of G kron G
pair = init_from_gradient(G)
t = la.dominant_singular_triplet(G)
print("sigma_1(G) =", round(t.sigma, 4))
print("L = sigma u u^T =\n", pair.L)
print("R = sigma v v^T =\n", pair.R)

brute, residual = nkp_best(F, 2, 3)
print("residual of closed form:", la.frobenius_norm(F - pair.dense()))
print("residual of brute force:", residual)
# the leftover energy is everything beyond the first singular value of G
s = np.linalg.svd(G, compute_uv=False)
print("sqrt(sum_{i,j} s_i^2 s_j^2 - s_1^4) =", np.sqrt(np.sum(np.outer(s**2, s**2)) - s[0] ** 4))
