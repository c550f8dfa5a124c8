"""Pure numpy versions of the tree kernels, used when the extension is absent."""

import numpy as np

NAME = "python"


def histogram(codes, rows, grad, hess, n_bins):
    n_feat = codes.shape[0]
    # one bincount over feature-offset codes; each bin still sums its rows in order
    flat = (codes[:, rows].astype(np.intp) + (np.arange(n_feat, dtype=np.intp) * n_bins)[:, None]).ravel()
    size = n_feat * n_bins
    G = np.bincount(flat, weights=np.tile(grad[rows], n_feat), minlength=size)
    H = np.bincount(flat, weights=np.tile(hess[rows], n_feat), minlength=size)
    return G.reshape(n_feat, n_bins), H.reshape(n_feat, n_bins)


def predict_tree(X, feature, threshold, left, right, value):
    node = np.zeros(X.shape[0], dtype=np.intp)
    active = np.flatnonzero(feature[node] >= 0)
    while active.size:
        nd = node[active]
        go_left = X[active, feature[nd]] <= threshold[nd]
        node[active] = np.where(go_left, left[nd], right[nd])
        active = active[feature[node[active]] >= 0]
    return value[node].astype(np.float64)
