"""Pure numpy implementations of the hot kernels.

Used when the compiled ``_kernels`` extension is unavailable or when
``GDREC_PURE_PYTHON=1`` is set. Results agree with the extension to
floating-point round-off; tie-breaking is identical.
"""
import numpy as np

# residue codes: A C G T N -
N_CODES = 6
TIE_RTOL = 1e-12


def pair_counts_all(codes, weights):
    """Sufficient statistics for every sequence pair.

    Parameters
    ----------
    codes : (n, s) int8 array of residue codes
    weights : (s,) int64 array of column multiplicities

    Returns
    -------
    (n, n, 8) int64 array with fields
    compared, A<->G, C<->T, transversions, nA, nC, nG, nT.
    """
    codes = np.asarray(codes, dtype=np.int8)
    w = np.asarray(weights, dtype=np.float64)
    n = codes.shape[0]
    onehot = np.zeros((n, 4, codes.shape[1]))
    for base in range(4):
        onehot[:, base, :] = codes == base
    flat = onehot.reshape(n * 4, -1)
    # joint[i, a, j, b] = sum_s w_s [x_is == a][x_js == b]
    joint = ((flat * w) @ flat.T).reshape(n, 4, n, 4)
    joint = np.rint(joint).astype(np.int64).transpose(0, 2, 1, 3)
    out = np.zeros((n, n, 8), dtype=np.int64)
    out[..., 0] = joint.sum(axis=(2, 3))
    out[..., 1] = joint[..., 0, 2] + joint[..., 2, 0]
    out[..., 2] = joint[..., 1, 3] + joint[..., 3, 1]
    diff = out[..., 0] - np.trace(joint, axis1=2, axis2=3)
    out[..., 3] = diff - out[..., 1] - out[..., 2]
    out[..., 4:8] = joint.sum(axis=3) + joint.sum(axis=2)
    return out


def nj_joins(dist):
    """Run the neighbor-joining agglomeration on a square matrix.

    Returns ``(joins, final, warnings)`` where each join is
    ``(node_a, node_b, new_node, len_a, len_b)``, ``final`` is
    ``(node_a, node_b, length)`` and warnings are
    ``(node, sibling, raw_length)`` tuples for clamped branches.
    Leaves are nodes ``0..n-1``; internal nodes are numbered from ``n``
    in creation order.
    """
    d = np.array(dist, dtype=np.float64, copy=True)
    n = d.shape[0]
    slots = list(range(n))
    node_of = list(range(n))
    next_id = n
    joins = []
    warnings = []
    while len(slots) > 2:
        m = len(slots)
        sub = d[np.ix_(slots, slots)]
        r = sub.sum(axis=1)
        q = (m - 2) * sub - r[:, None] - r[None, :]
        iu, ju = np.triu_indices(m, 1)
        qv = q[iu, ju]
        qmin = qv.min()
        if not np.isfinite(qmin):
            raise FloatingPointError("non-finite Q value")
        k = int(np.flatnonzero(qv <= qmin + TIE_RTOL * max(1.0, abs(qmin)))[0])
        i, j = int(iu[k]), int(ju[k])
        si, sj = slots[i], slots[j]
        dij = d[si, sj]
        li = 0.5 * dij + (r[i] - r[j]) / (2.0 * (m - 2))
        lj = dij - li
        a, b = node_of[si], node_of[sj]
        if li < 0.0:
            warnings.append((a, b, li))
            li, lj = 0.0, dij
        elif lj < 0.0:
            warnings.append((b, a, lj))
            li, lj = dij, 0.0
        new = 0.5 * (d[si, :] + d[sj, :] - dij)
        d[si, :] = new
        d[:, si] = new
        d[si, si] = 0.0
        joins.append((a, b, next_id, li, lj))
        node_of[si] = next_id
        next_id += 1
        del slots[j]
    a, b = node_of[slots[0]], node_of[slots[1]]
    length = d[slots[0], slots[1]]
    if length < 0.0:
        warnings.append((a, b, length))
        length = 0.0
    return joins, (a, b, length), warnings
