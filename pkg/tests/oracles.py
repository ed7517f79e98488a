"""Slow, independent reference implementations the tests compare against.

Everything here favours obviousness over speed: explicit loops, BFS from
scratch at every threshold, O(n^2) pair counting.  None of it shares code
with the package.
"""

from __future__ import annotations

import math

import numpy as np


def naive_conv2d(x, w, b, padding):
    """Six nested loops; zero padding; stride 1."""
    n, cin, h, wd = x.shape
    cout, cin2, k, k2 = w.shape
    assert cin == cin2 and k == k2
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    out = np.zeros((n, cout, h, wd))
    for ni in range(n):
        for co in range(cout):
            for i in range(h):
                for j in range(wd):
                    acc = 0.0
                    for ci in range(cin):
                        for u in range(k):
                            for v in range(k):
                                acc += w[co, ci, u, v] * xp[ni, ci, i + u, j + v]
                    out[ni, co, i, j] = acc + b[co]
    return out


def _neighbours(p, h, w, connectivity):
    y, x = divmod(p, w)
    if connectivity == 4:
        offs = ((-1, 0), (1, 0), (0, -1), (0, 1))
    else:
        offs = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))
    for dy, dx in offs:
        ny, nx = y + dy, x + dx
        if 0 <= ny < h and 0 <= nx < w:
            yield ny * w + nx


def flood_fill_label(mask, connectivity=4):
    """BFS component labeling; returns (labels [H,W] with 0 background, count)."""
    m = np.asarray(mask)
    h, w = m.shape
    flat = m.ravel()
    labels = np.zeros(h * w, dtype=int)
    count = 0
    for start in range(h * w):
        if flat[start] and labels[start] == 0:
            count += 1
            queue = [start]
            labels[start] = count
            while queue:
                p = queue.pop()
                for q in _neighbours(p, h, w, connectivity):
                    if flat[q] and labels[q] == 0:
                        labels[q] = count
                        queue.append(q)
    return labels.reshape(h, w), count


def betti_oracle(mask):
    m = np.asarray(mask).astype(int)
    _, b0 = flood_fill_label(m, 4)
    bg_labels, bg_count = flood_fill_label(1 - m, 8)
    border_labels = set()
    h, w = m.shape
    for i in range(h):
        for j in range(w):
            if i in (0, h - 1) or j in (0, w - 1):
                if bg_labels[i, j] > 0:
                    border_labels.add(bg_labels[i, j])
    return b0, bg_count - len(border_labels)


def euler_oracle(mask):
    m = np.asarray(mask).astype(int)
    h, w = m.shape
    v = e = f = 0
    for i in range(h):
        for j in range(w):
            if m[i, j]:
                v += 1
                if j + 1 < w and m[i, j + 1]:
                    e += 1
                if i + 1 < h and m[i + 1, j]:
                    e += 1
                if (
                    i + 1 < h and j + 1 < w
                    and m[i, j + 1] and m[i + 1, j] and m[i + 1, j + 1]
                ):
                    f += 1
    return v - e + f


def ph0_oracle(values, connectivity=4):
    """Threshold-sweep 0-dim persistence via from-scratch BFS at every level.

    Returns the sorted multiset of (birth, death, essential) value triples.
    Birth pixels are found by a purely local rule: a pixel births a
    component iff no neighbour precedes it in (value desc, raster asc)
    order.  On a merge the elder (higher birth, then earlier raster index)
    survives.
    """
    v = np.asarray(values, dtype=np.float64)
    h, w = v.shape
    flat = v.ravel()
    order = sorted(range(flat.size), key=lambda i: (-flat[i], i))
    rank = {p: r for r, p in enumerate(order)}
    births = {
        p
        for p in range(flat.size)
        if all(rank[q] > rank[p] for q in _neighbours(p, h, w, connectivity))
    }

    pairs = []
    prev_comp = {}
    comp_birth = {}
    next_id = 0
    for t in sorted(set(flat.tolist()), reverse=True):
        active = flat >= t
        labels = {}
        regions = []
        for start in range(flat.size):
            if active[start] and start not in labels:
                members = [start]
                labels[start] = len(regions)
                queue = [start]
                while queue:
                    p = queue.pop()
                    for q in _neighbours(p, h, w, connectivity):
                        if active[q] and q not in labels:
                            labels[q] = len(regions)
                            queue.append(q)
                            members.append(q)
                regions.append(members)
        new_prev = {}
        new_birth = {}
        for members in regions:
            entering = []
            seen = set()
            for p in members:
                cid = prev_comp.get(p)
                if cid is not None:
                    if cid not in seen:
                        seen.add(cid)
                        entering.append(comp_birth[cid])
                elif p in births and flat[p] == t:
                    entering.append((flat[p], p))
            elder = max(entering, key=lambda bv: (bv[0], -bv[1]))
            for bv in entering:
                if bv is not elder:
                    pairs.append((bv[0], t, False))
            cid = next_id
            next_id += 1
            new_birth[cid] = elder
            for p in members:
                new_prev[p] = cid
        prev_comp = new_prev
        comp_birth = new_birth
    assert len(comp_birth) == 1, "superlevel sweep must end with one component"
    (bval, _bidx), = comp_birth.values()
    pairs.append((bval, float(flat.min()), True))
    return sorted(pairs)


def pair_count_ari(labels_a, labels_b):
    """ARI from exhaustive pair agreement counts (O(n^2))."""
    a = np.asarray(labels_a).ravel()
    b = np.asarray(labels_b).ravel()
    n11 = n00 = n10 = n01 = 0
    n = a.size
    for i in range(n):
        for j in range(i + 1, n):
            sa = a[i] == a[j]
            sb = b[i] == b[j]
            if sa and sb:
                n11 += 1
            elif sa and not sb:
                n10 += 1
            elif sb:
                n01 += 1
            else:
                n00 += 1
    denom = (n11 + n10) * (n10 + n00) + (n11 + n01) * (n01 + n00)
    if denom == 0:
        return 1.0
    return 2.0 * (n11 * n00 - n10 * n01) / denom


def entropy_vi(labels_a, labels_b):
    """VI = 2 H(A,B) - H(A) - H(B) from dictionary joint counts, natural log."""
    a = np.asarray(labels_a).ravel()
    b = np.asarray(labels_b).ravel()
    n = a.size
    joint = {}
    ca = {}
    cb = {}
    for x, y in zip(a.tolist(), b.tolist()):
        joint[(x, y)] = joint.get((x, y), 0) + 1
        ca[x] = ca.get(x, 0) + 1
        cb[y] = cb.get(y, 0) + 1

    def entropy(counts):
        total = 0.0
        for c in counts.values():
            p = c / n
            total -= p * math.log(p)
        return total

    return max(0.0, 2.0 * entropy(joint) - entropy(ca) - entropy(cb))


def pairwise_auc(prob, gt):
    """Exhaustive positive-vs-negative comparisons, ties scored 0.5."""
    p = np.asarray(prob, dtype=float).ravel()
    g = np.asarray(gt).ravel()
    pos = p[g == 1]
    neg = p[g == 0]
    total = 0.0
    for x in pos:
        for y in neg:
            if x > y:
                total += 1.0
            elif x == y:
                total += 0.5
    return total / (len(pos) * len(neg))


def dilate3_oracle(prior, kernel):
    """Direct 3x3 correlation with zero padding, clamped to [0, 1]."""
    p = np.asarray(prior, dtype=float)
    h, w = p.shape
    out = np.zeros_like(p)
    for i in range(h):
        for j in range(w):
            acc = 0.0
            for di in (-1, 0, 1):
                for dj in (-1, 0, 1):
                    ii, jj = i + di, j + dj
                    if 0 <= ii < h and 0 <= jj < w:
                        acc += kernel[di + 1, dj + 1] * p[ii, jj]
            out[i, j] = min(1.0, max(0.0, acc))
    return out


def bilinear_oracle(img, y, x):
    """Four-corner interpolation with zero outside bounds, one channel."""
    h, w = img.shape
    y0, x0 = math.floor(y), math.floor(x)
    acc = 0.0
    for dy in (0, 1):
        for dx in (0, 1):
            yy, xx = y0 + dy, x0 + dx
            wy = 1.0 - abs(y - yy)
            wx = 1.0 - abs(x - xx)
            if 0 <= yy < h and 0 <= xx < w and wy > 0 and wx > 0:
                acc += wy * wx * img[yy, xx]
    return acc
