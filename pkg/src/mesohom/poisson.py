"""Steady Poisson transport on a conduit network.

Each conduit ``d`` runs from node P to node Q with unit vector ``e`` and
length ``h``; its gradient is ``g = (p_Q - p_P)/h`` and its flux
``j = -lambda g`` (positive along ``e``). With the outflow of P through d
equal to ``S j``, control-volume balance reads ``K p = V q`` where K is the
weighted graph Laplacian. Source ``Q`` is positive when it flows in.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import ContractError, ParameterError, RankDeficiencyError
from .linsys import ConstraintSet, TripletMatrix, eliminate_constraints, finalize, solve
from .mesh import TransportNetwork


@dataclass(frozen=True)
class MaterialFlow:
    lam: float = 1.0
    capacity: float = 0.0

    def __post_init__(self):
        if not self.lam > 0.0:
            raise ParameterError(f"conductivity must be positive, got {self.lam}")
        if self.capacity < 0.0:
            raise ParameterError("capacity must be non-negative")


@dataclass
class ConduitStates:
    g: np.ndarray
    j: np.ndarray


@dataclass
class NodalSources:
    x: np.ndarray
    Q: np.ndarray


@dataclass
class PoissonSolution:
    p: np.ndarray
    states: ConduitStates
    sources: NodalSources
    K: sp.csr_matrix
    f: np.ndarray
    dirichlet: np.ndarray  # node ids with prescribed pressure


def conduit_gradient(p_P, p_Q, h):
    h = np.asarray(h, dtype=float)
    if np.any(h <= 0.0):
        raise ContractError("conduit length must be positive")
    g = (np.asarray(p_Q, dtype=float) - np.asarray(p_P, dtype=float)) / h
    return float(g) if np.ndim(g) == 0 else g


def conduit_states(net: TransportNetwork, material: MaterialFlow, p: np.ndarray) -> ConduitStates:
    g = conduit_gradient(p[net.cp], p[net.cq], net.h)
    g = np.atleast_1d(g)
    return ConduitStates(g=g, j=-material.lam * g)


def assemble_conductance(net: TransportNetwork, material: MaterialFlow) -> sp.csr_matrix:
    c = material.lam * net.S / net.h
    tm = TripletMatrix(net.n_nodes)
    dofs = np.column_stack([net.cp, net.cq])
    blocks = np.empty((net.n_conduits, 2, 2))
    blocks[:, 0, 0] = blocks[:, 1, 1] = c
    blocks[:, 0, 1] = blocks[:, 1, 0] = -c
    if net.n_conduits:
        tm.add_blocks(dofs, blocks)
    return finalize(tm)


def lumped_sources(net: TransportNetwork, source) -> np.ndarray:
    """``V_P q(x_P)``: one-point rule at the node for each control volume."""
    if source is None:
        return np.zeros(net.n_nodes)
    if callable(source):
        q = np.asarray(source(net.nodes[:, 0], net.nodes[:, 1]), dtype=float)
        q = np.broadcast_to(q, (net.n_nodes,))
    else:
        q = np.broadcast_to(np.asarray(source, dtype=float), (net.n_nodes,))
    return net.volumes * q


def _dirichlet_arrays(net: TransportNetwork, dirichlet):
    if dirichlet is None:
        raise ContractError("at least one Dirichlet node is required")
    if callable(dirichlet):
        nodes = np.asarray(net.boundary_nodes, dtype=int)
        vals = np.asarray(dirichlet(net.nodes[nodes, 0], net.nodes[nodes, 1]), dtype=float)
        vals = np.broadcast_to(vals, nodes.shape)
    elif isinstance(dirichlet, dict):
        nodes = np.fromiter(dirichlet.keys(), dtype=int)
        vals = np.fromiter(dirichlet.values(), dtype=float)
    else:
        nodes, vals = dirichlet
        nodes = np.asarray(nodes, dtype=int)
        vals = np.broadcast_to(np.asarray(vals, dtype=float), nodes.shape)
    if nodes.size == 0:
        raise ContractError("at least one Dirichlet node is required")
    return nodes, np.array(vals, dtype=float)


def check_anchored(net: TransportNetwork, dirichlet_nodes: np.ndarray) -> None:
    """Every connected component must reach a Dirichlet node."""
    n = net.n_nodes
    adj = sp.coo_matrix((np.ones(net.n_conduits), (net.cp, net.cq)), shape=(n, n))
    ncomp, labels = connected_components(adj, directed=False)
    anchored = np.zeros(ncomp, dtype=bool)
    anchored[labels[dirichlet_nodes]] = True
    if not anchored.all():
        bad = int(np.flatnonzero(~anchored)[0])
        v = (labels == bad).astype(float)
        raise RankDeficiencyError(
            f"{int(np.sum(~anchored))} network component(s) have no Dirichlet node",
            (v / np.linalg.norm(v))[:, None],
        )


def assemble_flow(net: TransportNetwork, material: MaterialFlow, source, dirichlet):
    """Conductance matrix, lumped source vector and the Dirichlet constraint set."""
    nodes, vals = _dirichlet_arrays(net, dirichlet)
    check_anchored(net, nodes)
    K = assemble_conductance(net, material)
    f = lumped_sources(net, source)
    cons = ConstraintSet(net.n_nodes)
    cons.add_dirichlet_many(nodes, vals)
    return K, f, cons


def solve_steady(net: TransportNetwork, material: MaterialFlow, source=None, dirichlet=None) -> PoissonSolution:
    K, f, cons = assemble_flow(net, material, source, dirichlet)
    red = eliminate_constraints(K, f, cons)
    ph = solve(red.K, red.f, symmetric=True)
    p = red.recover(ph)
    Q = K @ p  # f at free nodes plus boundary reactions at Dirichlet nodes
    return PoissonSolution(
        p=p,
        states=conduit_states(net, material, p),
        sources=NodalSources(x=net.nodes.copy(), Q=Q),
        K=K,
        f=f,
        dirichlet=np.array(sorted(cons.dirichlet), dtype=int),
    )
