# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled prototype head kernel.

Same contract as ``keaf._head_py.head_kernel``; loops replace the many small
numpy temporaries that dominate per-episode cost at desk-scale dimensions.
"""
import numpy as np

from libc.math cimport exp, log1p, sqrt, tanh


cdef inline double _softplus(double x) nogil:
    if x > 0:
        return x + log1p(exp(-x))
    return log1p(exp(x))


cdef inline double _sigmoid(double x) nogil:
    return 0.5 * (1.0 + tanh(0.5 * x))


def head_kernel(rs_in, rq_in, rl_in, ys_in, yq_in, lin_in, double eta, bint cosine,
                double scale, bint attention, bint want_grad=True):
    rq_a = np.ascontiguousarray(rq_in, dtype=np.float64)
    lin_a = np.ascontiguousarray(lin_in, dtype=np.float64)
    cdef double[:, ::1] rs = np.ascontiguousarray(rs_in, dtype=np.float64)
    cdef double[:, ::1] rq = rq_a
    cdef double[:, ::1] rl = np.ascontiguousarray(rl_in, dtype=np.float64)
    cdef double[:, ::1] ys = np.ascontiguousarray(ys_in, dtype=np.float64)
    cdef double[:, ::1] yq = np.ascontiguousarray(yq_in, dtype=np.float64)
    cdef double[:, ::1] lin = lin_a

    cdef Py_ssize_t S = rs.shape[0], Q = rq.shape[0], N = rl.shape[0]
    cdef Py_ssize_t D = rs.shape[1], A = lin.shape[0]
    cdef Py_ssize_t s, q, n, d, a

    if rq.shape[1] != D or rl.shape[1] != D or lin.shape[1] != D:
        raise ValueError("dimension mismatch")
    if ys.shape[0] != S or ys.shape[1] != N or yq.shape[0] != Q or yq.shape[1] != N:
        raise ValueError("label matrix shape mismatch")

    counts_a = np.zeros(N)
    protos_a = np.zeros((N, D))
    alpha_a = np.zeros(N)
    scaled_a = np.zeros((N, D))
    beta_a = np.zeros((Q, N))
    final_a = np.zeros((Q, N, D))
    dist_a = np.zeros((Q, N))
    logits_a = np.zeros((Q, N))
    pn_a = np.zeros(N)
    ln_a = np.zeros(N)
    fn_a = np.zeros((Q, N))
    qn_a = np.zeros(Q)
    cos_a = np.zeros((Q, N))

    cdef double[::1] counts = counts_a, alpha = alpha_a, pn = pn_a, ln = ln_a, qn = qn_a
    cdef double[:, ::1] protos = protos_a, scaled = scaled_a, beta = beta_a
    cdef double[:, ::1] dist = dist_a, logits = logits_a, fn = fn_a, cosv = cos_a
    cdef double[:, ::1] p, z
    cdef double[:, :, ::1] final = final_a
    cdef double acc, acc2, mx, w, v, loss = 0.0

    # label-enhanced prototypes
    for s in range(S):
        for n in range(N):
            w = ys[s, n]
            if w != 0.0:
                counts[n] += w
                for d in range(D):
                    protos[n, d] += w * rs[s, d]
    for n in range(N):
        if counts[n] == 0.0:
            raise ValueError("every class needs at least one support vector")
        for d in range(D):
            protos[n, d] = eta * rl[n, d] + (1.0 - eta) * protos[n, d] / counts[n]

    # cosine label scaling
    for n in range(N):
        acc = 0.0
        acc2 = 0.0
        w = 0.0
        for d in range(D):
            acc += protos[n, d] * protos[n, d]
            acc2 += rl[n, d] * rl[n, d]
            w += protos[n, d] * rl[n, d]
        pn[n] = sqrt(acc)
        ln[n] = sqrt(acc2)
        if pn[n] == 0.0 or ln[n] == 0.0:
            raise ValueError("cosine similarity undefined for a zero vector")
        alpha[n] = w / (pn[n] * ln[n])
        for d in range(D):
            scaled[n, d] = alpha[n] * protos[n, d]

    # query attention
    # dense products go through BLAS; they dominate at large dims
    if attention:
        p_a = scaled_a @ lin_a.T
        z_a = rq_a @ lin_a.T
        p = p_a
        z = z_a
        for q in range(Q):
            mx = -1e308
            for n in range(N):
                acc = 0.0
                for a in range(A):
                    acc += p[n, a] * z[q, a]
                beta[q, n] = acc
                if acc > mx:
                    mx = acc
            acc = 0.0
            for n in range(N):
                beta[q, n] = exp(beta[q, n] - mx)
                acc += beta[q, n]
            for n in range(N):
                beta[q, n] /= acc
    else:
        for q in range(Q):
            for n in range(N):
                beta[q, n] = 1.0 / N

    for q in range(Q):
        for n in range(N):
            w = beta[q, n] if attention else 1.0
            for d in range(D):
                final[q, n, d] = w * scaled[n, d]

    # distances, logits, loss
    for q in range(Q):
        acc = 0.0
        for d in range(D):
            acc += rq[q, d] * rq[q, d]
        qn[q] = sqrt(acc)
    for q in range(Q):
        for n in range(N):
            if cosine:
                acc = 0.0
                acc2 = 0.0
                for d in range(D):
                    acc += final[q, n, d] * final[q, n, d]
                    acc2 += final[q, n, d] * rq[q, d]
                fn[q, n] = sqrt(acc)
                if fn[q, n] == 0.0 or qn[q] == 0.0:
                    raise ValueError("cosine distance undefined for a zero vector")
                cosv[q, n] = acc2 / (fn[q, n] * qn[q])
                dist[q, n] = 1.0 - cosv[q, n]
            else:
                acc = 0.0
                for d in range(D):
                    v = final[q, n, d] - rq[q, d]
                    acc += v * v
                dist[q, n] = acc
            logits[q, n] = -scale * dist[q, n]
            loss += _softplus(logits[q, n]) - yq[q, n] * logits[q, n]
    loss /= Q

    out = {
        "protos": protos_a, "alpha": alpha_a, "scaled": scaled_a, "beta": beta_a,
        "final": final_a, "dist": dist_a, "logits": logits_a, "loss": loss,
    }
    if not want_grad:
        return out

    g_rs_a = np.zeros((S, D))
    g_rq_a = np.zeros((Q, D))
    g_rl_a = np.zeros((N, D))
    g_final_a = np.zeros((Q, N, D))
    g_scaled_a = np.zeros((N, D))
    g_dist_a = np.zeros((Q, N))
    g_score_a = np.zeros((Q, N))
    g_protos_a = np.zeros((N, D))

    cdef double[:, ::1] g_rs = g_rs_a, g_rq = g_rq_a, g_rl = g_rl_a
    cdef double[:, :, ::1] g_final = g_final_a
    cdef double[:, ::1] g_scaled = g_scaled_a, g_dist = g_dist_a, g_score = g_score_a
    cdef double[:, ::1] g_protos = g_protos_a
    cdef double gc, inv, dot, g_alpha

    for q in range(Q):
        for n in range(N):
            g_dist[q, n] = -scale * (_sigmoid(logits[q, n]) - yq[q, n]) / Q

    # distance backward
    for q in range(Q):
        for n in range(N):
            if cosine:
                gc = -g_dist[q, n]
                inv = 1.0 / (fn[q, n] * qn[q])
                for d in range(D):
                    g_final[q, n, d] = gc * (
                        rq[q, d] * inv - cosv[q, n] * final[q, n, d] / (fn[q, n] * fn[q, n]))
                    g_rq[q, d] += gc * (
                        final[q, n, d] * inv - cosv[q, n] * rq[q, d] / (qn[q] * qn[q]))
            else:
                for d in range(D):
                    v = 2.0 * g_dist[q, n] * (final[q, n, d] - rq[q, d])
                    g_final[q, n, d] = v
                    g_rq[q, d] -= v

    # attention backward
    if attention:
        for q in range(Q):
            acc = 0.0
            for n in range(N):
                dot = 0.0
                for d in range(D):
                    dot += g_final[q, n, d] * scaled[n, d]
                    g_scaled[n, d] += beta[q, n] * g_final[q, n, d]
                g_score[q, n] = dot
                acc += beta[q, n] * dot
            for n in range(N):
                g_score[q, n] = beta[q, n] * (g_score[q, n] - acc)
        g_p_a = g_score_a.T @ z_a
        g_z_a = g_score_a @ p_a
        g_lin_a = g_p_a.T @ scaled_a
        g_lin_a += g_z_a.T @ rq_a
        g_scaled_a += g_p_a @ lin_a
        g_rq_a += g_z_a @ lin_a
    else:
        g_lin_a = np.zeros((A, D))
        for q in range(Q):
            for n in range(N):
                for d in range(D):
                    g_scaled[n, d] += g_final[q, n, d]

    # cosine scaling and prototype backward
    for n in range(N):
        g_alpha = 0.0
        for d in range(D):
            g_alpha += g_scaled[n, d] * protos[n, d]
        inv = 1.0 / (pn[n] * ln[n])
        for d in range(D):
            g_protos[n, d] = alpha[n] * g_scaled[n, d] + g_alpha * (
                rl[n, d] * inv - alpha[n] * protos[n, d] / (pn[n] * pn[n]))
            g_rl[n, d] = g_alpha * (
                protos[n, d] * inv - alpha[n] * rl[n, d] / (ln[n] * ln[n])) + eta * g_protos[n, d]
    for s in range(S):
        for n in range(N):
            w = ys[s, n]
            if w != 0.0:
                w = w * (1.0 - eta) / counts[n]
                for d in range(D):
                    g_rs[s, d] += w * g_protos[n, d]

    out.update(g_rs=g_rs_a, g_rq=g_rq_a, g_rl=g_rl_a, g_lin=g_lin_a)
    return out
