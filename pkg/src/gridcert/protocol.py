"""Deterministic multi-agent simulation of the distributed assessment.

Agents run in synchronous rounds under a single-threaded scheduler: each
round every agent (ascending id) consumes the messages addressed to it in
the previous round and emits new ones; the operator then consumes this
round's condition statuses.  Messages produced within a round are ordered
by (from, to, kind), so two runs with identical inputs yield identical
traces.

An agent's lifecycle: design local gains and share its modal transform
and outgoing coupling blocks with its neighbors; once all neighbor shares
have arrived, evaluate its row condition and report the outcome to the
operator.  On failure it either retries the local design (pole-scaling
policy) or, when retries are exhausted, escalates to global gains and
re-evaluates.  The operator broadcasts a single stable verdict when every
agent has reported "met"; if the system goes quiescent without unanimity
the verdict is inconclusive.

Privacy: the only matrix-bearing messages are the modal transform and the
coupling block an agent contributes to its neighbor's dynamics.  Local
system matrices, gains and Lyapunov certificates never leave an agent.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import certify, control, gridmodel
from .errors import InvalidInput, ProtocolViolation, Uncontrollable
from .linalg import ModalTransform, spectral_norm

OPERATOR = "operator"
BROADCAST = "*"

SHARE_TRANSFORM = "ShareTransform"
SHARE_COUPLING = "ShareCoupling"
CONDITION_STATUS = "ConditionStatus"
OPERATOR_VERDICT = "OperatorVerdict"
STATE_SAMPLE = "StateSample"

DESIGNING = "designing"
AWAITING = "awaiting_neighbors"
EVALUATING = "evaluating"
ESCALATED = "escalated"
DONE = "done"


@dataclass
class Message:
    kind: str
    sender: int | str
    to: int | str
    round: int
    payload: dict

    def payload_jsonable(self):
        out = {}
        for k, v in self.payload.items():
            out[k] = v.tolist() if isinstance(v, np.ndarray) else v
        return out

    def digest(self):
        blob = json.dumps(self.payload_jsonable(), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()

    def to_json_line(self, full=False):
        doc = {"round": self.round, "from": self.sender, "to": self.to,
               "kind": self.kind}
        if full:
            doc["payload"] = self.payload_jsonable()
        else:
            doc["digest"] = self.digest()
        return json.dumps(doc, sort_keys=True)


def _addr_key(addr):
    return (0, addr, "") if isinstance(addr, int) else (1, 0, str(addr))


def _msg_key(m):
    return (_addr_key(m.sender), _addr_key(m.to), m.kind)


def scale_poles_policy(factor=1.15):
    """Default retry policy: every desired pole scaled by ``factor`` per retry."""
    def policy(poles, retry_index):
        return [factor * complex(p) for p in poles]
    return policy


@dataclass
class ProtocolConfig:
    max_retries: int = 0
    retry_policy: object = None
    allow_global: bool = True
    variant: str = certify.VARIANT_TRANSFORMED
    selective_escalation: bool = False
    max_rounds: int = 64

    def __post_init__(self):
        if self.retry_policy is None:
            self.retry_policy = scale_poles_policy()
        if self.variant not in (certify.VARIANT_ORIGINAL, certify.VARIANT_TRANSFORMED):
            raise InvalidInput(f"unknown variant {self.variant!r}")


@dataclass(frozen=True)
class AgentKnowledge:
    """What an agent knows a priori: its own model and its influence terms."""

    bus: int
    A_hat: np.ndarray
    B: np.ndarray
    neighbors: tuple[int, ...]
    outgoing: dict[int, np.ndarray]    # j -> block through which this bus drives j
    base_poles: tuple[complex, ...]


@dataclass
class AgentState:
    id: int
    knowledge: AgentKnowledge
    phase: str = DESIGNING
    retry_count: int = 0
    poles: tuple[complex, ...] = ()
    escalated: bool = False
    gains: control.GainSet | None = None
    transform: ModalTransform | None = None
    received_transforms: dict[int, np.ndarray] = field(default_factory=dict)
    received_couplings: dict[int, np.ndarray] = field(default_factory=dict)
    report: certify.ConditionReport | None = None
    needs_evaluation: bool = False
    verdict: bool | None = None

    def has_work(self):
        return self.phase == DESIGNING or self.needs_evaluation

    def shares_complete(self):
        nbrs = set(self.knowledge.neighbors)
        return (nbrs <= set(self.received_transforms)
                and nbrs <= set(self.received_couplings))


@dataclass
class OperatorState:
    expected: tuple[int, ...]
    statuses: dict[int, bool] = field(default_factory=dict)
    verdict: bool | None = None
    verdict_round: int | None = None


def _ingest(st, inbox):
    for msg in inbox:
        if msg.kind == SHARE_TRANSFORM:
            if msg.sender not in st.knowledge.neighbors:
                raise ProtocolViolation(
                    f"agent {st.id} got transform from non-neighbor {msg.sender}",
                    offending=msg)
            st.received_transforms[msg.sender] = np.asarray(msg.payload["T"], dtype=float)
            st.needs_evaluation = True
        elif msg.kind == SHARE_COUPLING:
            if msg.sender not in st.knowledge.neighbors:
                raise ProtocolViolation(
                    f"agent {st.id} got coupling from non-neighbor {msg.sender}",
                    offending=msg)
            st.received_couplings[msg.sender] = np.asarray(msg.payload["block"], dtype=float)
            st.needs_evaluation = True
        elif msg.kind == OPERATOR_VERDICT:
            st.verdict = bool(msg.payload["stable"])
            st.phase = DONE
            st.needs_evaluation = False
        else:
            raise ProtocolViolation(
                f"agent {st.id} cannot handle {msg.kind}", offending=msg)


def _design(st, out, rnd):
    know = st.knowledge
    try:
        K, mt = control.design_local(know.A_hat, know.B, list(st.poles))
    except Uncontrollable as exc:
        raise Uncontrollable(f"agent {st.id}: {exc}") from exc
    st.gains = control.GainSet(local=K, t_local=mt.T.T @ K)
    st.transform = mt
    st.escalated = False
    for j in know.neighbors:
        out.append(Message(SHARE_TRANSFORM, st.id, j, rnd, {"T": mt.T}))
        out.append(Message(SHARE_COUPLING, st.id, j, rnd, {"block": know.outgoing[j]}))
    st.phase = AWAITING
    st.needs_evaluation = True


def _transformed_couplings(st):
    know = st.knowledge
    _, Bt, coup_t = control.transform_subsystem(
        know.A_hat, know.B, st.received_couplings,
        st.transform.T, st.received_transforms)
    return Bt, coup_t


def _evaluate(st, config):
    know = st.knowledge
    Bt, coup_t = _transformed_couplings(st)
    if st.escalated:
        order = sorted(coup_t, key=lambda j: (-spectral_norm(coup_t[j]), j))
        st.gains.t_global.clear()
        st.gains.global_.clear()
        residual = dict(coup_t)
        for j in order:
            kt = control.optimal_global_gain(Bt, coup_t[j])
            st.gains.t_global[j] = kt
            st.gains.global_[j] = control.convert_global_gain(
                kt, st.received_transforms[j])
            residual[j] = coup_t[j] - np.outer(Bt, kt)
            if config.selective_escalation:
                sigma = st.transform.sigma_M
                if sigma - sum(spectral_norm(b) for b in residual.values()) > 0.0:
                    break
        coup_t = residual

    if config.variant == certify.VARIANT_TRANSFORMED:
        row = {j: spectral_norm(b) for j, b in coup_t.items()}
        st.report = certify.ConditionReport(
            agent=st.id, diagonal=st.transform.sigma_M, offdiag=row,
            variant=certify.VARIANT_TRANSFORMED)
    else:
        A_cl = know.A_hat - np.outer(know.B, st.gains.local)
        cert = certify.certify_decoupled(A_cl, np.eye(A_cl.shape[0]))
        row = {}
        for j, C in st.received_couplings.items():
            kj = st.gains.global_.get(j)
            block = C if kj is None else C - np.outer(know.B, kj)
            row[j] = 2.0 * cert.lambda_max_P * spectral_norm(block)
        st.report = certify.ConditionReport(
            agent=st.id, diagonal=cert.lambda_min_Q, offdiag=row,
            variant=certify.VARIANT_ORIGINAL)
    return st.report


def agent_step(state, inbox, config, rnd):
    """Pure transition for one agent; returns ``(new_state, outbox)``."""
    st = replace(
        state,
        received_transforms=dict(state.received_transforms),
        received_couplings=dict(state.received_couplings),
        poles=tuple(state.poles),
        gains=None if state.gains is None else state.gains.copy(),
    )
    out = []
    _ingest(st, inbox)
    if st.phase == DONE and not st.needs_evaluation:
        return st, out
    if st.phase == DESIGNING:
        _design(st, out, rnd)
        return st, out
    if st.needs_evaluation and st.shares_complete():
        if st.phase == AWAITING:
            st.phase = EVALUATING
        report = _evaluate(st, config)
        st.needs_evaluation = False
        out.append(Message(CONDITION_STATUS, st.id, OPERATOR, rnd,
                           {"met": report.met}))
        if report.met:
            st.phase = ESCALATED if st.escalated else DONE
        elif st.retry_count < config.max_retries:
            st.retry_count += 1
            st.poles = tuple(config.retry_policy(list(st.poles), st.retry_count))
            st.phase = DESIGNING
        elif config.allow_global and not st.escalated:
            st.escalated = True
            st.phase = ESCALATED
            st.needs_evaluation = True
        else:
            st.phase = DONE
    return st, out


def operator_step(state, inbox, rnd):
    """Consume condition statuses; broadcast the verdict once unanimous."""
    st = replace(state, statuses=dict(state.statuses))
    seen = {}
    for msg in inbox:
        if msg.kind != CONDITION_STATUS:
            raise ProtocolViolation(
                f"operator cannot handle {msg.kind}", offending=msg)
        if msg.sender not in st.expected:
            raise ProtocolViolation(
                f"status from unknown agent {msg.sender}", offending=msg)
        met = bool(msg.payload["met"])
        if msg.sender in seen and seen[msg.sender] != met:
            raise ProtocolViolation(
                f"conflicting statuses from agent {msg.sender} in round {rnd}",
                offending=msg)
        seen[msg.sender] = met
        st.statuses[msg.sender] = met
    out = []
    if (st.verdict is None and len(st.statuses) == len(st.expected)
            and all(st.statuses.values())):
        st.verdict = True
        st.verdict_round = rnd
        out.append(Message(OPERATOR_VERDICT, OPERATOR, BROADCAST, rnd,
                           {"stable": True}))
    return st, out


def _finalize_operator(state, rnd):
    st = replace(state, statuses=dict(state.statuses))
    st.verdict = False
    st.verdict_round = rnd
    return st, [Message(OPERATOR_VERDICT, OPERATOR, BROADCAST, rnd,
                        {"stable": False})]


@dataclass
class DsaResult:
    verdict: str
    trace: list[Message]
    agents: dict[int, AgentState]
    operator: OperatorState
    rounds: int
    subsystems: list[gridmodel.SubsystemModel]

    @property
    def gains(self):
        return {a: st.gains for a, st in self.agents.items()}

    @property
    def reports(self):
        return [self.agents[a].report for a in sorted(self.agents)]

    def trace_lines(self, full=False):
        return [m.to_json_line(full=full) for m in self.trace]


def run_dsa(grid, pole_specs=None, max_retries=0, retry_policy=None,
            allow_global=True, variant=certify.VARIANT_TRANSFORMED,
            selective_escalation=False, max_rounds=64):
    """Run the distributed assessment on a grid and return its trace.

    ``pole_specs`` optionally overrides the per-bus desired poles from the
    grid document.  The run is deterministic: agents act in ascending bus
    order, messages are canonically ordered within each round.
    """
    config = ProtocolConfig(
        max_retries=max_retries, retry_policy=retry_policy,
        allow_global=allow_global, variant=variant,
        selective_escalation=selective_escalation, max_rounds=max_rounds)
    subsystems = gridmodel.build_subsystems(grid)
    by_bus = {s.bus: s for s in subsystems}
    specs = certify.resolve_pole_specs(grid, pole_specs)

    states = {}
    for sub in subsystems:
        outgoing = {j: by_bus[j].couplings[sub.bus] for j in sub.neighbors}
        know = AgentKnowledge(
            bus=sub.bus, A_hat=sub.A_hat, B=sub.B,
            neighbors=tuple(sub.neighbors), outgoing=outgoing,
            base_poles=tuple(specs[sub.bus]))
        states[sub.bus] = AgentState(id=sub.bus, knowledge=know,
                                     poles=tuple(specs[sub.bus]))
    operator = OperatorState(expected=tuple(sorted(states)))

    trace = []
    pending = []
    rounds_used = 0
    for rnd in range(config.max_rounds):
        rounds_used = rnd
        inboxes = {}
        for m in pending:
            if m.to == BROADCAST:
                for a in states:
                    inboxes.setdefault(a, []).append(m)
            else:
                inboxes.setdefault(m.to, []).append(m)
        pending = []

        produced = []
        for a in sorted(states):
            states[a], out = agent_step(states[a], inboxes.get(a, []), config, rnd)
            produced.extend(out)
        produced.sort(key=_msg_key)
        operator, op_out = operator_step(
            operator, [m for m in produced if m.to == OPERATOR], rnd)
        produced.extend(op_out)

        trace.extend(produced)
        pending = [m for m in produced if m.to != OPERATOR]
        if not pending:
            idle = not any(st.has_work() for st in states.values())
            if operator.verdict is not None:
                break
            if idle and not produced:
                operator, op_out = _finalize_operator(operator, rnd)
                trace.extend(op_out)
                pending = op_out
    else:
        raise ProtocolViolation(f"no termination within {config.max_rounds} rounds")

    verdict = certify.STABLE if operator.verdict else certify.INCONCLUSIVE
    return DsaResult(verdict=verdict, trace=trace, agents=states,
                     operator=operator, rounds=rounds_used + 1,
                     subsystems=subsystems)


def state_exchange_pairs(agents):
    """Directed (from, to) pairs for real-time state exchange.

    Every escalated agent needs its neighbors' states, so each neighbor j
    of an escalated agent i sends samples j -> i.
    """
    pairs = []
    for a in sorted(agents):
        st = agents[a]
        if st.escalated and st.gains is not None and st.gains.t_global:
            for j in sorted(st.gains.t_global):
                pairs.append((j, a))
    return pairs
