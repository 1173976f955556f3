"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -s`` to see every line.  All
tolerances are fixed here; nothing is deferred to later calibration.
"""

import json

import numpy as np
import pytest

from gridcert import certify, cli, control, gridmodel, linalg, protocol, sim
from gridcert.data import three_bus_path
from sampling import (
    assemble_blocks,
    sample_met_original,
    sample_met_transformed,
    random_hurwitz,
    random_spd,
)

REFERENCE_GAINS = {
    1: np.array([350.51, 76.77, 114.18]),
    2: np.array([782.42, 107.31, 102.92]),
    3: np.array([612.47, 83.13, 94.54]),
}
PRE_ROWS = {1: (22.0, {2: 296.58, 3: 249.13}),
            2: (24.0, {1: 236.70, 3: 135.88}),
            3: (25.0, {1: 325.07, 2: 222.14})}
POST_OFFDIAG = {1: {2: 11.15, 3: 9.37},
                2: {1: 13.00, 3: 7.46},
                3: {1: 12.23, 2: 8.36}}


def emit(criterion, ok, detail=""):
    status = "PASS" if ok else "FAIL"
    suffix = f" ({detail})" if detail else ""
    print(f"{criterion}: {status}{suffix}")


@pytest.fixture(scope="module")
def grid():
    return gridmodel.load_grid(three_bus_path())


@pytest.fixture(scope="module")
def local_assessment(grid):
    return certify.assess_grid(grid, use_global=False)


@pytest.fixture(scope="module")
def global_assessment(grid):
    return certify.assess_grid(grid, use_global=True)


def test_a1_pole_placement_reproduction(grid):
    """A1: gains for the published pole sets match the reference vectors
    within 0.5% per entry."""
    subs = {s.bus: s for s in gridmodel.build_subsystems(grid)}
    computed, failures = {}, []
    for bus, sub in subs.items():
        K = control.pole_place(sub.A_hat, sub.B, grid.generator(bus).poles)
        computed[bus] = K
        rel = np.abs(K - REFERENCE_GAINS[bus]) / np.abs(REFERENCE_GAINS[bus])
        if rel.max() > 0.005:
            failures.append(f"bus {bus}: computed {np.round(K, 2).tolist()} vs "
                            f"reference {REFERENCE_GAINS[bus].tolist()} "
                            f"(max rel {rel.max():.3f})")
    ok = not failures
    emit("A1 pole-placement reproduction", ok, "; ".join(failures))
    if failures:
        # Diagnosis: dividing each computed gain by T_T^2 reproduces the
        # reference to ~6e-5, so the reference set was generated with the
        # input column scaled by T_T^2 (which leaves the closed loop, and
        # hence every downstream quantity, unchanged).  Under the modeled
        # input column (third entry 1/T_T) and exact pole placement those
        # reference values are unattainable; see
        # test_a1_gain_convention_diagnosis.
        scaled_rel = max(
            (np.abs(computed[b] / grid.generator(b).T_T ** 2 - REFERENCE_GAINS[b])
             / REFERENCE_GAINS[b]).max() for b in subs)
        pytest.fail(
            "; ".join(failures)
            + f"; computed/T_T^2 matches reference within {scaled_rel:.1e}, "
              "so the reference gains correspond to an input column scaled "
              "by T_T^2 and cannot be reproduced under the modeled B")


def test_a1_gain_convention_diagnosis(grid):
    """Documents the A1 discrepancy: the reference gain vectors are exactly
    the gains for an input column scaled by T_T^2 (same closed loop)."""
    subs = {s.bus: s for s in gridmodel.build_subsystems(grid)}
    for bus, sub in subs.items():
        K = control.pole_place(sub.A_hat, sub.B, grid.generator(bus).poles)
        tt2 = grid.generator(bus).T_T ** 2
        # the rescaled pair (B*tt2, K/tt2) leaves A - B K^T unchanged
        assert np.allclose(sub.A_hat - np.outer(sub.B, K),
                           sub.A_hat - np.outer(sub.B * tt2, K / tt2))
        rel = np.abs(K / tt2 - REFERENCE_GAINS[bus]) / REFERENCE_GAINS[bus]
        assert rel.max() < 1e-4
    emit("A1 diagnosis (reference = gains for B scaled by T_T^2)", True)


def test_a2_pre_escalation_rows(grid, local_assessment, rng):
    """A2: local-only transformed rows match the reference within 2% per
    entry under unit-norm eigenvector columns; all verdicts not-met."""
    reports = {r.agent: r for r in local_assessment.reports}
    verdicts_ok = all(not reports[a].met for a in (1, 2, 3))

    deviations = []
    for a, (diag, offs) in PRE_ROWS.items():
        rep = reports[a]
        if abs(rep.diagonal - diag) / diag > 0.02:
            deviations.append(f"agent {a} diagonal {rep.diagonal:.2f} vs {diag}")
        for j, want in offs.items():
            if abs(rep.offdiag[j] - want) / want > 0.02:
                deviations.append(f"s~_{a}{j} {rep.offdiag[j]:.2f} vs {want}")
    direct_ok = not deviations

    fallback_ok = False
    if not direct_ok:
        # fallback oracle: entries stable under eigenvector permutation and
        # sign changes, verdicts still all not-met
        subs = {s.bus: s for s in gridmodel.build_subsystems(grid)}
        drift = 0.0
        for _ in range(5):
            twisted = {}
            for b, mt in local_assessment.transforms.items():
                P = np.eye(3)[:, rng.permutation(3)] * rng.choice([-1.0, 1.0], size=3)
                twisted[b] = linalg.ModalTransform(
                    T=mt.T @ P, Lam=P.T @ mt.Lam @ P, sigma_M=mt.sigma_M)
            coup = {(b, j): np.linalg.solve(twisted[b].T, s.couplings[j] @ twisted[j].T)
                    for b, s in subs.items() for j in s.neighbors}
            _, reps = certify.build_S_tilde(twisted, coup)
            for rep in reps:
                for j, v in rep.offdiag.items():
                    drift = max(drift, abs(v - reports[rep.agent].offdiag[j]))
        fallback_ok = drift <= 1e-9

    ok = verdicts_ok and (direct_ok or fallback_ok)
    emit("A2 pre-escalation rows", ok,
         "direct match" if direct_ok else f"fallback, deviations: {deviations}")
    assert verdicts_ok, "expected all agents not met before escalation"
    assert direct_ok or fallback_ok, deviations


def test_a3_post_escalation_rows(grid, global_assessment):
    """A3: post-escalation off-diagonals within 2%, all rows met, operator
    verdict stable."""
    reports = {r.agent: r for r in global_assessment.reports}
    problems = []
    for a, offs in POST_OFFDIAG.items():
        if not reports[a].met:
            problems.append(f"agent {a} not met")
        for j, want in offs.items():
            if abs(reports[a].offdiag[j] - want) / want > 0.02:
                problems.append(f"s~_{a}{j} {reports[a].offdiag[j]:.2f} vs {want}")
    dsa = protocol.run_dsa(grid)
    if dsa.verdict != certify.STABLE:
        problems.append(f"operator verdict {dsa.verdict}")
    emit("A3 post-escalation rows", not problems, "; ".join(problems))
    assert not problems, problems


def test_a4_full_system_oracle(global_assessment):
    """A4: the assembled 9x9 closed loop with final gains is Hurwitz."""
    A = global_assessment.A_full
    assert A.shape == (9, 9)
    worst = float(np.linalg.eigvals(A).real.max())
    ok = worst < 0.0
    emit("A4 full-system oracle", ok, f"max Re = {worst:.3f} 1/s")
    assert ok


def test_a5_simulation_equilibrium(grid, global_assessment):
    """A5: 0.1 pu step at bus 1: |d_omega(10s)| < 1e-6 rad/s per bus and
    |sum dPm(10s) - 0.1| < 1e-6 pu."""
    config = sim.SimConfig(t_end=10.0, dt=1e-3, disturbances=grid.disturbances)
    F = gridmodel.disturbance_matrix(global_assessment.subsystems)
    out = sim.simulate(global_assessment.A_full, F, config, grid.bus_ids,
                       gains=global_assessment.gains)
    omega_worst = max(abs(out.omega(b)[-1]) for b in grid.bus_ids)
    balance = abs(float(out.states[-1, 2::3].sum()) - 0.1)
    ok = omega_worst < 1e-6 and balance < 1e-6
    emit("A5 simulation equilibrium", ok,
         f"max |d_omega| = {omega_worst:.2e} rad/s, balance residual = {balance:.2e} pu")
    assert ok


def test_a6_original_condition_soundness(rng):
    """A6: 100 random systems with all original-coordinates rows met are
    all Hurwitz when assembled."""
    hits = 0
    for _ in range(100):
        orders, A_blocks, couplings, certs = sample_met_original(rng)
        _, reports = certify.build_S(certs, couplings)
        assert all(r.met for r in reports), "sampler must satisfy the row test"
        full = assemble_blocks(orders, A_blocks, couplings)
        hits += bool(linalg.is_hurwitz(full))
    ok = hits == 100
    emit("A6 row-condition soundness (original)", ok, f"{hits}/100 Hurwitz")
    assert ok


def test_a7_transformed_condition_soundness(rng):
    """A7: same as A6 for the transformed rows."""
    hits = 0
    for _ in range(100):
        orders, transforms, couplings = sample_met_transformed(rng)
        _, reports = certify.build_S_tilde(transforms, couplings)
        assert all(r.met for r in reports), "sampler must satisfy the row test"
        full = assemble_blocks(orders,
                               [transforms[i].Lam for i in sorted(transforms)],
                               couplings)
        hits += bool(linalg.is_hurwitz(full))
    ok = hits == 100
    emit("A7 row-condition soundness (transformed)", ok, f"{hits}/100 Hurwitz")
    assert ok


def test_a8_lyapunov_solver(rng):
    """A8: 200 random Hurwitz instances: residual <= 1e-9 ||Q||_F, P SPD."""
    worst = 0.0
    for _ in range(200):
        n = int(rng.integers(2, 7))
        A = random_hurwitz(rng, n)
        Q = random_spd(rng, n)
        P = linalg.solve_lyapunov(A, Q)
        assert np.linalg.eigvalsh(P).min() > 0.0
        rel = np.linalg.norm(A.T @ P + P @ A + Q) / np.linalg.norm(Q)
        worst = max(worst, rel)
    ok = worst <= 1e-9
    emit("A8 Lyapunov solver residuals", ok, f"worst relative residual {worst:.2e}")
    assert ok


def test_a9_projection_optimality(rng):
    """A9: on 100 random pairs the residual is orthogonal to the input
    column (<= 1e-10) and no perturbed gain has smaller Frobenius
    residual."""
    worst_orth = 0.0
    for _ in range(100):
        n = int(rng.integers(2, 6))
        Bt = rng.standard_normal(n)
        At = rng.standard_normal((n, n))
        K = control.optimal_global_gain(Bt, At)
        resid = At - np.outer(Bt, K)
        worst_orth = max(worst_orth, float(np.abs(Bt @ resid).max()))
        base = np.linalg.norm(resid)
        for _ in range(10):
            dK = rng.standard_normal(n)
            dK *= 1e-3 / np.linalg.norm(dK)
            assert np.linalg.norm(At - np.outer(Bt, K + dK)) >= base
    ok = worst_orth <= 1e-10
    emit("A9 projection optimality", ok, f"worst orthogonality defect {worst_orth:.2e}")
    assert ok


def test_a10_protocol_determinism_and_shape(tmp_path, capsys):
    """A10: identical traces across runs; one round of three false statuses,
    then three true statuses and a single stable verdict; no private
    payloads."""
    outs = []
    for d in ("r1", "r2"):
        code = cli.main(["protocol", three_bus_path(), "--out", str(tmp_path / d)])
        assert code == 0
        outs.append((tmp_path / d / "trace.jsonl").read_bytes())
    capsys.readouterr()
    identical = outs[0] == outs[1]

    cli.main(["protocol", three_bus_path(), "--trace-full",
              "--out", str(tmp_path / "full")])
    capsys.readouterr()
    msgs = [json.loads(ln) for ln in
            (tmp_path / "full" / "trace.jsonl").read_text().splitlines()]

    status_rounds = {}
    for m in msgs:
        if m["kind"] == "ConditionStatus":
            status_rounds.setdefault(m["round"], []).append(m["payload"]["met"])
    false_rounds = [r for r, v in status_rounds.items() if v == [False] * 3]
    true_rounds = [r for r, v in status_rounds.items() if v == [True] * 3]
    verdicts = [m for m in msgs if m["kind"] == "OperatorVerdict"]
    shape_ok = (len(status_rounds) == 2 and len(false_rounds) == 1
                and len(true_rounds) == 1 and false_rounds[0] < true_rounds[0]
                and len(verdicts) == 1 and verdicts[0]["payload"]["stable"] is True)

    allowed = {"ShareTransform": {"T"}, "ShareCoupling": {"block"},
               "ConditionStatus": {"met"}, "OperatorVerdict": {"stable"}}
    privacy_ok = all(set(m["payload"]) == allowed[m["kind"]] for m in msgs)

    ok = identical and shape_ok and privacy_ok
    emit("A10 protocol determinism and trace shape", ok,
         f"identical={identical}, shape={shape_ok}, privacy={privacy_ok}")
    assert ok
