"""Pure-numpy prototype head kernel (fallback backend).

Operates on already-projected vectors::

    rs (S, D) support, rq (Q, D) query, rl (N, D) label
    ys (S, N), yq (Q, N) binary label matrices, lin (A, D) attention map

and returns forward quantities plus, when ``want_grad``, gradients of the
mean-over-queries BCE loss w.r.t. ``rs, rq, rl, lin``.
"""
from __future__ import annotations

import numpy as np


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def head_kernel(rs, rq, rl, ys, yq, lin, eta, cosine, scale, attention, want_grad=True):
    n_query, n_way = yq.shape
    counts = ys.sum(axis=0)
    if np.any(counts == 0):
        raise ValueError("every class needs at least one support vector")

    mean = (ys.T @ rs) / counts[:, None]
    protos = eta * rl + (1.0 - eta) * mean
    pn = np.linalg.norm(protos, axis=1)
    ln = np.linalg.norm(rl, axis=1)
    if np.any(pn == 0) or np.any(ln == 0):
        raise ValueError("cosine similarity undefined for a zero vector")
    alpha = np.sum(protos * rl, axis=1) / (pn * ln)
    scaled = alpha[:, None] * protos

    if attention:
        p = scaled @ lin.T
        z = rq @ lin.T
        score = z @ p.T
        score = score - score.max(axis=1, keepdims=True)
        e = np.exp(score)
        beta = e / e.sum(axis=1, keepdims=True)
        final = beta[:, :, None] * scaled[None, :, :]
    else:
        beta = np.full((n_query, n_way), 1.0 / n_way)
        final = np.broadcast_to(scaled, (n_query,) + scaled.shape).copy()

    if cosine:
        fn = np.linalg.norm(final, axis=2)
        qn = np.linalg.norm(rq, axis=1)
        if np.any(fn == 0) or np.any(qn == 0):
            raise ValueError("cosine distance undefined for a zero vector")
        cos = np.einsum("qnd,qd->qn", final, rq) / (fn * qn[:, None])
        dist = 1.0 - cos
    else:
        diff = final - rq[:, None, :]
        dist = np.sum(diff * diff, axis=2)

    logits = -scale * dist
    loss = float(np.sum(np.logaddexp(0.0, logits) - yq * logits) / n_query)

    out = {
        "protos": protos, "alpha": alpha, "scaled": scaled, "beta": beta,
        "final": final, "dist": dist, "logits": logits, "loss": loss,
    }
    if not want_grad:
        return out

    g_dist = -scale * (_sigmoid(logits) - yq) / n_query
    if cosine:
        g_cos = -g_dist
        inv = 1.0 / (fn * qn[:, None])
        g_final = g_cos[:, :, None] * (
            rq[:, None, :] * inv[:, :, None] - cos[:, :, None] * final / (fn**2)[:, :, None]
        )
        g_rq = np.einsum("qn,qnd->qd", g_cos * inv, final) - (
            np.sum(g_cos * cos, axis=1) / qn**2
        )[:, None] * rq
    else:
        g_final = 2.0 * g_dist[:, :, None] * diff
        g_rq = -g_final.sum(axis=1)

    if attention:
        g_beta = np.einsum("qnd,nd->qn", g_final, scaled)
        g_scaled = np.einsum("qn,qnd->nd", beta, g_final)
        g_score = beta * (g_beta - np.sum(beta * g_beta, axis=1, keepdims=True))
        g_p = g_score.T @ z
        g_z = g_score @ p
        g_scaled += g_p @ lin
        g_lin = g_p.T @ scaled + g_z.T @ rq
        g_rq += g_z @ lin
    else:
        g_scaled = g_final.sum(axis=0)
        g_lin = np.zeros_like(lin)

    g_alpha = np.sum(g_scaled * protos, axis=1)
    inv_pl = 1.0 / (pn * ln)
    g_protos = alpha[:, None] * g_scaled + g_alpha[:, None] * (
        rl * inv_pl[:, None] - (alpha / pn**2)[:, None] * protos
    )
    g_rl = g_alpha[:, None] * (
        protos * inv_pl[:, None] - (alpha / ln**2)[:, None] * rl
    ) + eta * g_protos
    g_rs = ys @ ((1.0 - eta) * g_protos / counts[:, None])

    out.update(g_rs=g_rs, g_rq=g_rq, g_rl=g_rl, g_lin=g_lin)
    return out
