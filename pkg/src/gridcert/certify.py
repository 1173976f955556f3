"""Distributed stability conditions and compositional verdicts.

Each agent contributes one row of a test matrix built from its local
Lyapunov certificate and the norms of the couplings entering its
dynamics.  If every row is strictly diagonally dominant with nonpositive
off-diagonal entries the test matrix is an M-matrix and the interconnected
system is asymptotically stable; the check is sufficient only, so the
negative verdict is "inconclusive", never "unstable".

Two variants exist: the original-coordinates matrix (diagonal
``lambda_min(Q_i)``, off-diagonal ``-2 lambda_max(P_i) ||A_ij||``) and the
relaxed transformed variant in modal coordinates (diagonal ``sigma_M_i``,
off-diagonal ``-||At_ij||``).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import control, gridmodel
from .errors import CertificateInvalid, InvalidInput
from .linalg import (
    ModalTransform,
    _as_matrix,
    eigenvalues,
    is_hurwitz,
    solve_lyapunov,
    spectral_norm,
)

STABLE = "stable"
INCONCLUSIVE = "inconclusive"

VARIANT_ORIGINAL = "original"
VARIANT_TRANSFORMED = "transformed"


@dataclass
class LyapunovCertificate:
    """SPD pair (P, Q) with ``A^T P + P A = -Q`` for a decoupled subsystem."""

    P: np.ndarray
    Q: np.ndarray
    lambda_min_Q: float
    lambda_max_P: float


@dataclass
class TransformedCertificate:
    """The ratio-maximizing certificate in modal coordinates.

    With ``P = theta*I`` the Lyapunov equation forces
    ``Q = -theta*(Lam + Lam^T)``, which is diagonal and SPD for Hurwitz
    ``Lam``; the certified decay ratio ``lambda_min(Q)/lambda_max(P)``
    equals ``2*sigma_M`` and no other SPD pair does better.
    """

    theta: float
    P: np.ndarray
    Q: np.ndarray
    ratio: float

    @classmethod
    def from_modal(cls, mt: ModalTransform, theta=1.0):
        if theta <= 0:
            raise InvalidInput("theta must be positive")
        if mt.sigma_M <= 0:
            raise CertificateInvalid(
                "modal form is not Hurwitz", offending_eigenvalue=-mt.sigma_M)
        n = mt.Lam.shape[0]
        Q = -theta * (mt.Lam + mt.Lam.T)
        return cls(theta=theta, P=theta * np.eye(n), Q=Q,
                   ratio=2.0 * mt.sigma_M)


@dataclass
class ConditionReport:
    """One agent's row of the test matrix with its verdict."""

    agent: int
    diagonal: float
    offdiag: dict[int, float] = field(default_factory=dict)
    variant: str = VARIANT_TRANSFORMED

    @property
    def margin(self):
        return self.diagonal - sum(self.offdiag.values())

    @property
    def met(self):
        return self.margin > 0.0

    def to_dict(self):
        return {
            "agent": self.agent,
            "variant": self.variant,
            "diagonal": self.diagonal,
            "offdiag": {str(j): v for j, v in sorted(self.offdiag.items())},
            "margin": self.margin,
            "met": self.met,
        }


def certify_decoupled(A, Q):
    """Lyapunov certificate for one decoupled subsystem.

    Raises :class:`CertificateInvalid` (carrying the offending eigenvalue)
    when ``A`` is not Hurwitz.
    """
    A = _as_matrix(A, "A")
    lam = eigenvalues(A)
    worst = lam[np.argmax(lam.real)]
    if worst.real >= 0.0:
        raise CertificateInvalid(
            f"subsystem matrix has eigenvalue {worst:.6g} with nonnegative real part",
            offending_eigenvalue=complex(worst),
        )
    P = solve_lyapunov(A, Q)
    Q = np.asarray(Q, dtype=float)
    return LyapunovCertificate(
        P=P, Q=Q,
        lambda_min_Q=float(np.linalg.eigvalsh(Q).min()),
        lambda_max_P=float(np.linalg.eigvalsh(P).max()),
    )


def _row_reports(agents, diag, offdiag_norms, variant):
    S = np.zeros((len(agents), len(agents)))
    index = {a: k for k, a in enumerate(agents)}
    reports = []
    for a in agents:
        k = index[a]
        S[k, k] = diag[a]
        row = {}
        for j, nrm in offdiag_norms.get(a, {}).items():
            if j not in index:
                raise InvalidInput(f"coupling references unknown agent {j}")
            S[k, index[j]] = -nrm
            row[j] = nrm
        reports.append(ConditionReport(agent=a, diagonal=diag[a],
                                       offdiag=row, variant=variant))
    return S, reports


def build_S(certificates, couplings):
    """Original-coordinates test matrix and per-agent reports.

    ``certificates`` maps agent id to :class:`LyapunovCertificate`;
    ``couplings`` maps ordered pairs ``(i, j)`` to the closed-loop block
    ``A_ij`` through which neighbor j drives agent i.
    """
    agents = sorted(certificates)
    offnorms = {}
    for (i, j), block in couplings.items():
        if i not in certificates:
            raise InvalidInput(f"missing certificate for agent {i}")
        if j not in certificates:
            raise InvalidInput(f"coupling ({i}, {j}) references unknown agent {j}")
        cert = certificates[i]
        offnorms.setdefault(i, {})[j] = 2.0 * cert.lambda_max_P * spectral_norm(block)
    diag = {a: certificates[a].lambda_min_Q for a in agents}
    return _row_reports(agents, diag, offnorms, VARIANT_ORIGINAL)


def build_S_tilde(transforms, couplings_t):
    """Transformed-coordinates test matrix and per-agent reports.

    ``transforms`` maps agent id to :class:`ModalTransform` (all must be
    Hurwitz); ``couplings_t`` maps ordered pairs ``(i, j)`` to the
    closed-loop transformed block ``At_ij``.
    """
    agents = sorted(transforms)
    for a in agents:
        if transforms[a].sigma_M <= 0:
            raise CertificateInvalid(
                f"agent {a}: modal form is not Hurwitz",
                offending_eigenvalue=-transforms[a].sigma_M,
            )
    offnorms = {}
    for (i, j), block in couplings_t.items():
        if i not in transforms or j not in transforms:
            raise InvalidInput(f"coupling ({i}, {j}) references unknown agent")
        offnorms.setdefault(i, {})[j] = spectral_norm(block)
    diag = {a: transforms[a].sigma_M for a in agents}
    return _row_reports(agents, diag, offnorms, VARIANT_TRANSFORMED)


def compositional_verdict(reports):
    """``stable`` iff every agent met its row condition, else ``inconclusive``."""
    return STABLE if all(r.met for r in reports) else INCONCLUSIVE


def worst_case_coupling_bound(X_ij, M_i, omega_b, T_norms):
    """Upper bound on the transformed coupling norm from line data alone.

    ``T_norms`` is the pair ``(||inv(T_i)||, ||T_j||)``; submultiplicativity
    on the rank-one grid coupling gives
    ``||inv(T_i)|| * (omega_b / (M_i X_ij)) * ||T_j||``, which is tight for
    identity transforms.
    """
    if X_ij <= 0 or M_i <= 0 or omega_b <= 0:
        raise InvalidInput("X_ij, M_i and omega_b must be positive")
    n_inv, n_t = T_norms
    if n_inv < 0 or n_t < 0:
        raise InvalidInput("transform norms must be nonnegative")
    return float(n_inv) * (omega_b / (M_i * X_ij)) * float(n_t)


@dataclass
class AssessmentResult:
    """Outcome of a centralized design-and-certify pass over a grid."""

    variant: str
    use_global: bool
    reports: list[ConditionReport]
    verdict: str
    gains: dict[int, control.GainSet]
    transforms: dict[int, ModalTransform]
    subsystems: list[gridmodel.SubsystemModel]
    A_full: np.ndarray
    S: np.ndarray

    @property
    def hurwitz(self):
        return is_hurwitz(self.A_full)


def resolve_pole_specs(grid, overrides=None, scale=1.0):
    """Desired poles per bus: overrides first, then the grid 'control' entries."""
    specs = {}
    for bus in grid.bus_ids:
        poles = None if overrides is None else overrides.get(bus)
        if poles is None:
            poles = grid.generator(bus).poles
        if poles is None:
            raise InvalidInput(
                f"bus {bus} has no desired poles (grid 'control' entry or override)")
        specs[bus] = [scale * complex(p) for p in poles]
    return specs


def assess_grid(grid, pole_overrides=None, use_global=False,
                variant=VARIANT_TRANSFORMED, poles_scale=1.0, Q=None):
    """Design feedback for every bus and evaluate the chosen condition.

    This is the centralized (no message passing) counterpart of the
    distributed protocol: local pole placement per bus, optional
    coupling-minimizing global gains when ``use_global``, then the
    per-agent row conditions in the requested ``variant``.
    """
    if variant not in (VARIANT_ORIGINAL, VARIANT_TRANSFORMED):
        raise InvalidInput(f"unknown variant {variant!r}")
    subsystems = gridmodel.build_subsystems(grid)
    specs = resolve_pole_specs(grid, pole_overrides, poles_scale)

    gains, transforms = {}, {}
    for sub in subsystems:
        K, mt = control.design_local(sub.A_hat, sub.B, specs[sub.bus])
        transforms[sub.bus] = mt
        gains[sub.bus] = control.GainSet(local=K, t_local=mt.T.T @ K)

    for sub in subsystems:
        mt = transforms[sub.bus]
        T_nbrs = {j: transforms[j].T for j in sub.neighbors}
        _, Bt, coup_t = control.transform_subsystem(
            sub.A_hat, sub.B, sub.couplings, mt.T, T_nbrs)
        gs = gains[sub.bus]
        if use_global:
            for j in sub.neighbors:
                kt = control.optimal_global_gain(Bt, coup_t[j])
                gs.t_global[j] = kt
                gs.global_[j] = control.convert_global_gain(kt, transforms[j].T)

    couplings_closed = {}
    couplings_closed_t = {}
    for sub in subsystems:
        gs = gains[sub.bus]
        _, closed = control.close_loop(sub.A_hat, sub.B, gs.local,
                                       sub.couplings, gs.global_)
        mt = transforms[sub.bus]
        for j, block in closed.items():
            couplings_closed[(sub.bus, j)] = block
            couplings_closed_t[(sub.bus, j)] = np.linalg.solve(
                mt.T, block @ transforms[j].T)

    if variant == VARIANT_TRANSFORMED:
        S, reports = build_S_tilde(transforms, couplings_closed_t)
    else:
        certs = {}
        for sub in subsystems:
            A_cl = sub.A_hat - np.outer(sub.B, gains[sub.bus].local)
            Qi = np.eye(A_cl.shape[0]) if Q is None else Q
            certs[sub.bus] = certify_decoupled(A_cl, Qi)
        S, reports = build_S(certs, couplings_closed)

    return AssessmentResult(
        variant=variant,
        use_global=use_global,
        reports=reports,
        verdict=compositional_verdict(reports),
        gains=gains,
        transforms=transforms,
        subsystems=subsystems,
        A_full=gridmodel.assemble_full(subsystems, gains),
        S=S,
    )
