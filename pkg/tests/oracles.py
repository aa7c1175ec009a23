"""Reference computations written without the package's tape or tensors.

Everything here is plain Python loops or plain numpy so that a bug in the
library cannot also hide in the oracle.
"""
import math

import numpy as np

# Seed-42 2-4-3 net (tanh hidden, identity output), input [0.5, -0.5].
# Output computed once by the loop matmul below and frozen.
SEED42_OUTPUT = [0.28197499703118584, 1.3692658413465848, 1.210489717163278]

# logsumexp([2, 0]) evaluated with mpmath at 30 digits
LSE_2_0 = 2.12692801104297249644
# 1 / (1 + e^-1)
SIGMOID_1 = 0.731058578630004879


def seed42_params():
    rng = np.random.default_rng(42)
    W1 = rng.normal(size=(2, 4))
    b1 = rng.normal(size=4)
    W2 = rng.normal(size=(4, 3))
    b2 = rng.normal(size=3)
    return [W1, b1, W2, b2]


def loop_affine(x, W, b):
    out = []
    for j in range(len(b)):
        s = b[j]
        for i in range(len(x)):
            s += x[i] * W[i][j]
        out.append(s)
    return out


def loop_mlp(params, acts, x):
    h = list(x)
    for k, act in enumerate(acts):
        h = loop_affine(h, params[2 * k], params[2 * k + 1])
        if act == "tanh":
            h = [math.tanh(v) for v in h]
        elif act == "relu":
            h = [max(v, 0.0) for v in h]
    return h


def loop_softmax(z):
    m = max(z)
    e = [math.exp(v - m) for v in z]
    s = sum(e)
    return [v / s for v in e]


def compose_head(victim_params, victim_acts, head_params, head_act, x):
    """Victim logits plus head(victim logits), by loops."""
    z = loop_mlp(victim_params, victim_acts, x)
    f = loop_mlp(head_params, [head_act, "identity"], z)
    return [a + b for a, b in zip(z, f)]


def norm_rel_error(a, b, floor=1e-12):
    a = np.concatenate([np.ravel(t) for t in a]) if isinstance(a, (list, tuple)) else np.ravel(a)
    b = np.concatenate([np.ravel(t) for t in b]) if isinstance(b, (list, tuple)) else np.ravel(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), floor))


def fd_params(fn, params, h=1e-5):
    """Central differences of scalar fn(list-of-arrays) in every entry."""
    out = []
    for k, p in enumerate(params):
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            plus = [q.copy() for q in params]
            minus = [q.copy() for q in params]
            plus[k][idx] += h
            minus[k][idx] -= h
            g[idx] = (fn(plus) - fn(minus)) / (2 * h)
        out.append(g)
    return out


# -- distances ---------------------------------------------------------------

def euclid_loop(x, y):
    return sum((a - b) ** 2 for a, b in zip(np.ravel(x), np.ravel(y)))


def motion_loop(x, y, J, M, bones, orders=(0, 1, 2)):
    """Bone-length term over M*B plus per-order dynamics over M*J, by loops."""
    X = np.asarray(x, dtype=float).reshape(M, J, 3).tolist()
    Y = np.asarray(y, dtype=float).reshape(M, J, 3).tolist()

    def length(f, p, c):
        return math.sqrt(sum((f[p][a] - f[c][a]) ** 2 for a in range(3)))

    bone = 0.0
    for m in range(M):
        for p, c in bones:
            bone += (length(X[m], p, c) - length(Y[m], p, c)) ** 2
    bone = bone / (M * len(bones)) if bones else 0.0

    def diff(seq):
        if M == 1:
            return [[[0.0] * 3 for _ in range(J)]]
        d = [[[seq[m + 1][j][a] - seq[m][j][a] for a in range(3)] for j in range(J)] for m in range(M - 1)]
        return d + [d[-1]]

    total = {"bone": bone}
    qx, qy = X, Y
    for k in range(3):
        if k:
            qx, qy = diff(qx), diff(qy)
        if k in orders:
            s = 0.0
            for m in range(M):
                for j in range(J):
                    for a in range(3):
                        s += (qx[m][j][a] - qy[m][j][a]) ** 2
            total[f"order{k}"] = s / (M * J)
    return total


# -- samplers ----------------------------------------------------------------

def ar1_stationary_var(eps, target_var=1.0):
    """Stationary variance of x' = x - (eps^2 / 2) x / s2 + eps * xi."""
    a = 1.0 - eps ** 2 / (2 * target_var)
    return eps ** 2 / (1.0 - a ** 2)


def gaussian_tv(samples, var, bins=60, lim=5.0):
    """Total variation between a histogram and N(0, var) on the same bins."""
    from scipy.stats import norm
    sd = math.sqrt(var)
    edges = np.linspace(-lim * sd, lim * sd, bins + 1)
    counts, _ = np.histogram(samples, bins=edges)
    emp = counts / len(samples)
    ref = np.diff(norm.cdf(edges, scale=sd))
    outside = 1.0 - emp.sum()
    return 0.5 * (np.abs(emp - ref).sum() + abs(outside - (1.0 - ref.sum())))


# -- toy grid EBM ----------------------------------------------------------------

def grid_ebm_exact_gradient(grid, feats_fn, theta, x_pos):
    """d/dtheta [U(x+) - log sum_grid exp U(x)] with U linear in theta: U = feats(x) . theta."""
    F = np.array([feats_fn(x) for x in grid])
    u = F @ theta
    w = np.exp(u - u.max())
    w /= w.sum()
    return np.mean([feats_fn(x) for x in x_pos], axis=0) - w @ F
