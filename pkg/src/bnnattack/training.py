"""Minimal straight-through BNN trainer for desk-scale test models.

Latent real weights are binarized by sign in the forward pass and receive
the gradient of their binarized copy wherever ``|w| <= 1``; hidden units use
batch normalization followed by sign, differentiated through ``clip(., -1, 1)``.
At export the population statistics are folded into per-neuron thresholds.
"""

from __future__ import annotations

import numpy as np

from .modelio import Dataset
from .network import BnnModel, forward, sign

BN_EPS = 1e-5


class TrainingDivergedError(RuntimeError):
    pass


class _Adam:
    def __init__(self, params, lr, b1=0.9, b2=0.999, eps=1e-8):
        self.params, self.lr, self.b1, self.b2, self.eps = params, lr, b1, b2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            mhat = m / (1 - self.b1 ** self.t)
            vhat = v / (1 - self.b2 ** self.t)
            p -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def _softmax_xent(scores, labels):
    shifted = scores - scores.max(axis=1, keepdims=True)
    expd = np.exp(shifted)
    probs = expd / expd.sum(axis=1, keepdims=True)
    loss = -np.log(probs[np.arange(len(labels)), labels] + 1e-12).mean()
    grad = probs
    grad[np.arange(len(labels)), labels] -= 1.0
    return loss, grad / len(labels)


def train_tiny_bnn(dataset: Dataset, widths, epochs: int = 30, seed: int = 0,
                   batch_size: int = 64, lr: float = 0.01) -> BnnModel:
    if not np.all(np.isfinite(dataset.images)):
        raise ValueError("training images contain non-finite values")
    rng = np.random.default_rng(seed)
    sizes = [dataset.n, *widths, dataset.n_classes]
    latent = [rng.uniform(-1.0, 1.0, size=(a, b)) for a, b in zip(sizes, sizes[1:])]
    gammas = [np.ones(r) for r in widths]
    betas = [np.zeros(r) for r in widths]
    log_scale = np.full(dataset.n_classes, -0.5 * np.log(widths[-1]))
    bias = np.zeros(dataset.n_classes)
    params = latent + gammas + betas + [log_scale, bias]
    opt = _Adam(params, lr)
    depth = len(widths)
    X, y = dataset.images, dataset.labels

    for _ in range(epochs):
        order = rng.permutation(len(X))
        for start in range(0, len(X), batch_size):
            idx = order[start:start + batch_size]
            if idx.size < 2:
                continue
            h = X[idx]
            cache = []
            for l in range(depth):
                wb = sign(latent[l]).astype(np.float64)
                a = h @ wb
                mu, var = a.mean(axis=0), a.var(axis=0)
                ahat = (a - mu) / np.sqrt(var + BN_EPS)
                z = gammas[l] * ahat + betas[l]
                cache.append((h, wb, ahat, var, z))
                h = np.where(z >= 0, 1.0, -1.0)
            wb_out = sign(latent[-1]).astype(np.float64)
            out = h @ wb_out
            scale = np.exp(log_scale)
            loss, dscores = _softmax_xent(out * scale + bias, y[idx])
            if not np.isfinite(loss):
                raise TrainingDivergedError("non-finite training loss")

            g_bias = dscores.sum(axis=0)
            g_log_scale = (dscores * out).sum(axis=0) * scale
            dout = dscores * scale
            g_latent = [None] * (depth + 1)
            g_latent[-1] = (h.T @ dout) * (np.abs(latent[-1]) <= 1.0)
            dh = dout @ wb_out.T
            g_gamma, g_beta = [None] * depth, [None] * depth
            for l in reversed(range(depth)):
                h_in, wb, ahat, var, z = cache[l]
                dz = dh * (np.abs(z) <= 1.0)
                g_gamma[l] = (dz * ahat).sum(axis=0)
                g_beta[l] = dz.sum(axis=0)
                dahat = dz * gammas[l]
                m = len(idx)
                da = (m * dahat - dahat.sum(axis=0) - ahat * (dahat * ahat).sum(axis=0)) / (
                    m * np.sqrt(var + BN_EPS))
                g_latent[l] = (h_in.T @ da) * (np.abs(latent[l]) <= 1.0)
                dh = da @ wb.T
            opt.step(g_latent + g_gamma + g_beta + [g_log_scale, g_bias])
            if not all(np.all(np.isfinite(q)) for q in params):
                raise TrainingDivergedError("non-finite parameters after an update")
            for w in latent:
                np.clip(w, -1.0, 1.0, out=w)

    return _export(X, latent, gammas, betas, np.exp(log_scale), bias)


def fold_batch_norm(mean, var, gamma, beta, fan_in):
    """Thresholds and polarities equivalent to ``sign(gamma * (a - mean) / sd + beta)``."""
    sd = np.sqrt(var + BN_EPS)
    polarity = np.where(gamma >= 0, 1, -1).astype(np.int8)
    with np.errstate(divide="ignore", invalid="ignore"):
        tau = mean - beta * sd / gamma
    dead = np.abs(gamma) < 1e-12
    # constant neuron: pick a threshold outside the reachable range
    tau = np.where(dead, np.where(beta >= 0, -(fan_in + 1.0), fan_in + 1.0), tau)
    polarity = np.where(dead, 1, polarity).astype(np.int8)
    return tau, polarity


def _export(X, latent, gammas, betas, scale, bias) -> BnnModel:
    weights = [sign(w) for w in latent]
    taus, pols = [], []
    h = X
    for l in range(len(gammas)):
        a = h @ weights[l].astype(np.float64)
        if l:
            a = np.round(a)
        tau, pol = fold_batch_norm(a.mean(axis=0), a.var(axis=0), gammas[l], betas[l], weights[l].shape[0])
        taus.append(tau)
        pols.append(pol)
        h = np.where(pol * (a - tau) >= 0, 1.0, -1.0)
    return BnnModel(tuple(weights), tuple(taus), tuple(pols), scale.copy(), bias.copy())


def accuracy(model: BnnModel, dataset: Dataset) -> float:
    if len(dataset) == 0:
        return 0.0
    hits = sum(int(np.argmax(forward(model, x).scores) == label)
               for x, label in zip(dataset.images, dataset.labels))
    return hits / len(dataset)
