"""numpy implementations of the sampling kernels.

Used when the compiled extension is unavailable or ``CORA_PURE_PYTHON`` is set.
Both backends consume the same pre-drawn uniforms and apply the same
inverse-CDF rule, so they agree draw for draw.
"""
import numpy as np

_CHUNK_ENTRIES = 1 << 23


def _draw(weights: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Row-wise inverse-CDF draw: first index whose cumulative weight exceeds u * total."""
    cum = np.cumsum(weights, axis=1)
    target = u * cum[:, -1]
    k = (cum <= target[:, None]).sum(axis=1)
    last = weights.shape[1] - 1 - np.argmax(weights[:, ::-1] > 0, axis=1)
    return np.minimum(k, last)


def sample_layer(tri, box, coarse, u_tri, u_box):
    n = tri.shape[2]
    S, M = coarse.shape
    size = 2 * M
    fine = np.empty((S, size), dtype=np.int64)
    wires = np.empty((S, size), dtype=np.int64)
    for s in range(M):
        t = tri[s if tri.shape[0] > 1 else 0]
        y = _draw(t[:, coarse[:, s]].T, u_tri[:, s])
        wires[:, 2 * s], wires[:, 2 * s + 1] = np.divmod(y, n)
    for b in range(M):
        a, c = (2 * b + 1) % size, (2 * b + 2) % size
        t = box[b if box.shape[0] > 1 else 0]
        y = _draw(t[:, wires[:, a] * n + wires[:, c]].T, u_box[:, b])
        fine[:, a], fine[:, c] = np.divmod(y, n)
    return fine


def _transfer(phi, box, pair, x, n, s, M):
    """Batched transfer matrices ``B_s[i, v, v']`` over block states ``v = (z, wa)``.

    The right wire ``wb`` of block ``s`` only meets the next block through box
    ``s``, so it is summed here and never enters the chain state.
    """
    size = 2 * M
    bt = box[s if box.shape[0] > 1 else 0]
    xo = x[:, (2 * s + 1) % size] * n + x[:, (2 * s + 2) % size]
    bx = bt[xo].reshape(-1, n, n)  # (S, wb, wa of the next block)
    B = np.einsum("zab,ibc,zy->izayc", phi[s].reshape(n, n, n), bx, pair[s])
    return B.reshape(x.shape[0], n * n, n * n)


def ring_ffbs(phi, box, pair, x, unif):
    S = x.shape[0]
    M, U = phi.shape
    n = round(U ** (1 / 3))
    V = n * n
    z = np.empty((S, M), dtype=np.int64)
    logev = np.empty(S)
    step = max(1, _CHUNK_ENTRIES // (M * V * V))
    for lo in range(0, S, step):
        hi = min(S, lo + step)
        z[lo:hi], logev[lo:hi] = _ring_chunk(phi, box, pair, x[lo:hi], unif[lo:hi], n, M, V)
    return z, logev


def _ring_chunk(phi, box, pair, x, unif, n, M, V):
    S = x.shape[0]
    rows = np.arange(S)
    B = [_transfer(phi, box, pair, x, n, s, M) for s in range(M)]

    # ring marginal of the first block: diagonal of the scaled product
    P = B[0].copy()
    logscale = np.zeros(S)
    for s in range(1, M + 1):
        m = P.max(axis=(1, 2))
        m[m == 0] = 1.0
        P /= m[:, None, None]
        logscale += np.log(m)
        if s < M:
            P = P @ B[s]
    d = np.diagonal(P, axis1=1, axis2=2)
    trace = d.sum(axis=1)
    with np.errstate(divide="ignore"):
        logev = np.log(trace) + logscale
    good = trace > 0
    d = np.where(good[:, None], d, 1.0)

    v = np.zeros((S, M), dtype=np.int64)
    v[:, 0] = a = _draw(d, unif[:, 0])
    if M > 1:
        F = np.empty((M, S, V))
        f = B[0][rows, a, :]
        for s in range(1, M):
            tot = f.sum(axis=1)
            tot[tot == 0] = 1.0
            f = f / tot[:, None]
            F[s] = f
            if s < M - 1:
                f = np.einsum("iu,iuv->iv", f, B[s])
        w = F[M - 1] * B[M - 1][rows, :, a]
        v[:, M - 1] = _draw(np.where(good[:, None], w, 1.0), unif[:, M - 1])
        for s in range(M - 2, 0, -1):
            w = F[s] * B[s][rows, :, v[:, s + 1]]
            v[:, s] = _draw(np.where(good[:, None], w, 1.0), unif[:, s])
    z = v // n
    z[~good] = -1
    return z, logev
