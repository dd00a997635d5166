"""Conservative finite-difference stencils for divergence-form operators.

The tensor is sampled at cell centres (the flux points).  On every cell each
corner node defines a one-sided gradient built from the two cell edges meeting
at that corner; the discrete energy averages ``(xi + grad p)^T a (xi + grad p)``
over the corners.  In 1D this is the usual three-point flux stencil, and in
any dimension the operator is symmetric and, for a positive definite tensor,
positive definite modulo the constants (periodic) or outright (Dirichlet).
"""
from __future__ import annotations

import itertools

import numpy as np
import scipy.sparse as sp

__all__ = ["corner_gradients", "divergence_operator", "divergence_rhs", "corner_fluxes"]


def _node_index(idx, nodes_per_axis, d):
    out = np.zeros_like(idx[0])
    for k in range(d):
        out = out * nodes_per_axis + idx[k]
    return out


def corner_gradients(n: int, d: int, periodic: bool):
    """Per-corner edge-difference matrices (cells x nodes).

    ``n`` is the number of cells per axis.  Periodic grids have ``n`` nodes
    per axis (wrapping); Dirichlet grids have ``n + 1`` nodes including the
    boundary.  Returns ``[(G_1, ..., G_d) for each of the 2^d corners]``.
    """
    nodes = n if periodic else n + 1
    cells = np.indices((n,) * d).reshape(d, -1)
    ncell = cells.shape[1]
    rows = np.arange(ncell)
    cache = {}

    def diff(k, offsets):
        # difference along axis k on the edge whose other coordinates are shifted by offsets
        key = (k, offsets)
        if key not in cache:
            lo = [cells[a] + (offsets[a] if a != k else 0) for a in range(d)]
            hi = [cells[a] + (offsets[a] if a != k else 1) for a in range(d)]
            if periodic:
                lo = [c % nodes for c in lo]
                hi = [c % nodes for c in hi]
            cols = np.concatenate([_node_index(hi, nodes, d), _node_index(lo, nodes, d)])
            vals = np.concatenate([np.ones(ncell), -np.ones(ncell)])
            cache[key] = sp.csr_matrix((vals, (np.concatenate([rows, rows]), cols)), shape=(ncell, nodes**d))
        return cache[key]

    corners = []
    for corner in itertools.product((0, 1), repeat=d):
        corners.append(tuple(diff(k, corner) for k in range(d)))
    return corners


def divergence_operator(a_cells: np.ndarray, n: int, d: int, periodic: bool, h: float | None = None):
    """Sparse matrix of ``-div(a grad .)`` on nodes (all nodes, boundary included).

    ``a_cells`` has shape ``(n,)*d + (d, d)`` (or ``(n**d, d, d)``).
    """
    h = 1.0 / n if h is None else h
    a = np.asarray(a_cells, dtype=float).reshape(-1, d, d)
    corners = corner_gradients(n, d, periodic)
    weight = 1.0 / (len(corners) * h * h)
    total = None
    for grads in corners:
        for k in range(d):
            for l in range(d):
                if not np.any(a[:, k, l]):
                    continue
                term = grads[k].T @ sp.diags(a[:, k, l]) @ grads[l]
                total = term if total is None else total + term
    if total is None:
        nodes = (n if periodic else n + 1) ** d
        total = sp.csr_matrix((nodes, nodes))
    return (weight * total).tocsr()


def divergence_rhs(a_cells: np.ndarray, xi, n: int, d: int, periodic: bool = True, h: float | None = None):
    """Nodal vector of ``div(a xi)`` in the same discretisation."""
    h = 1.0 / n if h is None else h
    a = np.asarray(a_cells, dtype=float).reshape(-1, d, d)
    flux = a @ np.asarray(xi, dtype=float)
    corners = corner_gradients(n, d, periodic)
    out = 0.0
    for grads in corners:
        for k in range(d):
            out = out + grads[k].T @ flux[:, k]
    return -out / (len(corners) * h)


def corner_fluxes(a_cells: np.ndarray, xi, p: np.ndarray, n: int, d: int, periodic: bool = True, h: float | None = None):
    """Fluxes ``a (xi + grad p)`` per corner; shape ``(2^d, ncells, d)``."""
    h = 1.0 / n if h is None else h
    a = np.asarray(a_cells, dtype=float).reshape(-1, d, d)
    corners = corner_gradients(n, d, periodic)
    out = []
    for grads in corners:
        grad = np.stack([np.asarray(xi, dtype=float)[k] + grads[k] @ p / h for k in range(d)], axis=-1)
        out.append(np.einsum("ckl,cl->ck", a, grad))
    return np.stack(out)
