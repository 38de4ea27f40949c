"""Quick built-in oracle and property checks, runnable without a test runner."""
from __future__ import annotations

import math
import time

import numpy as np

from . import accumulate as A
from . import diagnostics as D
from . import intra as I
from . import linalg
from . import policy as P
from .task import RewardedGroup, TaskInstance


def _projection_vs_lstsq():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(50):
        d = int(rng.integers(1, 65))
        k = int(rng.integers(1, min(d, 8) + 1))
        vecs = rng.standard_normal((d, k))
        v = rng.standard_normal(d)
        coef = np.linalg.lstsq(vecs, v, rcond=None)[0]
        ref = v - vecs @ coef
        out = linalg.project_to_complement(v, vecs)
        worst = max(worst, np.linalg.norm(out - ref) / max(np.linalg.norm(v), 1e-300))
    return worst <= 1e-8, f"max relative error {worst:.2e}"


def _iterative_single_column():
    rng = np.random.default_rng(1)
    vecs, v = rng.standard_normal((20, 1)), rng.standard_normal(20)
    err = np.abs(linalg.project_to_complement_iterative(v, vecs)
                 - linalg.project_to_complement(v, vecs)).max()
    return err <= 1e-12, f"max deviation {err:.2e}"


def _randomized_basis_energy():
    rng = np.random.default_rng(2)
    u, _ = np.linalg.qr(rng.standard_normal((40, 20)))
    w, _ = np.linalg.qr(rng.standard_normal((30, 20)))
    s = np.concatenate([np.full(4, 10.0), np.full(16, 0.5)])
    x = (u * s) @ w.T
    q = linalg.approx_rank_r_basis(x, 4, rng=3)
    captured = np.linalg.norm(x @ q) ** 2 / np.sum(np.linalg.svd(x, compute_uv=False)[:4] ** 2)
    return captured >= 0.99, f"captured energy {captured:.5f}"


def _params(seed):
    rng = np.random.default_rng(seed)
    return P.PolicyParams.from_layers(
        {n: 0.7 * rng.standard_normal(a.shape) for n, a in P.zero_params(8, 4, 6).layers().items()})


def _gradient_fd():
    p = _params(3)
    prompt, response = [1, 4, 2], [3, 0, 5]
    grads, _ = P.backward_sequence(p, P.forward_logprobs(p, prompt, response))
    worst = 0.0
    for name, arr in p.layers().items():
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + 1e-5
            fp = P.forward_logprobs(p, prompt, response).logprob_sum
            arr[idx] = old - 1e-5
            fm = P.forward_logprobs(p, prompt, response).logprob_sum
            arr[idx] = old
            num, ana = (fp - fm) / 2e-5, grads[name][idx]
            worst = max(worst, abs(num - ana) / max(abs(num) + abs(ana), 1e-7))
    return worst <= 1e-4, f"max relative error {worst:.2e}"


def _groups(p, seed):
    rng = np.random.default_rng(seed)
    groups = []
    for _ in range(2):
        prompt = rng.integers(0, 7, 2).tolist()
        samples = [P.sample_response(p, prompt, 2, rng=rng) for _ in range(3)]
        groups.append(RewardedGroup(TaskInstance(tuple(prompt), 0), samples, [0.0] * 3,
                                    rng.standard_normal(3).tolist()))
    return groups


def _baseline_equivalences():
    p = _params(4)
    groups = _groups(p, 5)
    mcb = A.compute_microbatch_gradients(p, groups)
    ppo, _ = A.ppo_clip_gradient(p, p, groups)
    gap = max(np.abs(ppo[n] - mcb.policy_grad[n]).max() for n in ppo)
    state = A.AccumulatorState.for_params(p, strategy="proma_exact")
    A.accumulate_proma(state, mcb)
    first = all(np.array_equal(state.grads[n], mcb.policy_grad[n]) for n in ppo)
    return gap <= 1e-12 and first, f"ppo/plain gap {gap:.1e}, first-microbatch identity {first}"


def _proma_orthogonality():
    p = _params(6)
    m1 = A.compute_microbatch_gradients(p, _groups(p, 7))
    m2 = A.compute_microbatch_gradients(p, _groups(p, 8))
    state = A.AccumulatorState.for_params(p, strategy="proma_exact", clamp_fraction=math.inf,
                                          projection_group_size=0)
    A.accumulate_proma(state, m1)
    before = {n: g.copy() for n, g in state.grads.items()}
    A.accumulate_proma(state, m2)
    worst = 0.0
    for n in state.grads:
        kept = state.grads[n] - m2.policy_grad[n]
        g = m2.seq_grads[n].grads
        scale = max(np.linalg.norm(before[n]) * np.linalg.norm(g, axis=0).max(), 1e-300)
        worst = max(worst, np.abs(g.T @ kept).max() / scale)
    return worst <= 1e-8, f"max normalized overlap {worst:.2e}"


def _intra_full_rank():
    rng = np.random.default_rng(9)
    tape = P.LayerTape("w", rng.standard_normal((4, 9)), rng.standard_normal((4, 7)))
    adv = rng.standard_normal(4)
    grad = I.layer_policy_grad(adv, tape)
    q_a = np.linalg.svd(tape.act_in, full_matrices=False)[2].T
    q_g = np.linalg.svd(tape.grad_out, full_matrices=False)[2].T
    out = I.project_with_bases(grad, q_a, q_g, I.IntraConfig(r=4))
    ratio = np.linalg.norm(out) / np.linalg.norm(grad)
    return ratio <= 1e-8, f"residual ratio {ratio:.1e}"


def _kl_closed_form():
    kl = float(D.categorical_kl([0.5, 0.5], [0.25, 0.75]))
    ref = 0.5 * math.log(2) + 0.5 * math.log(2 / 3)
    return abs(kl - ref) <= 1e-14, f"KL {kl:.6f}"


CHECKS = {
    "projection matches least squares": _projection_vs_lstsq,
    "iterative projection, single column": _iterative_single_column,
    "randomized basis energy": _randomized_basis_energy,
    "policy gradient vs finite differences": _gradient_fd,
    "baseline equivalences": _baseline_equivalences,
    "projected accumulation orthogonality": _proma_orthogonality,
    "intra projection at full rank": _intra_full_rank,
    "categorical KL closed form": _kl_closed_form,
}


def run_selftest(out=print) -> int:
    """Run every check, report one line each; return 0 if all pass."""
    failed = 0
    for name, check in CHECKS.items():
        t0 = time.perf_counter()
        try:
            ok, detail = check()
        except Exception as exc:        # a crashing check is a failing check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        failed += not ok
        out(f"{'PASS' if ok else 'FAIL'}  {name}: {detail} ({time.perf_counter() - t0:.2f}s)")
    out(f"{len(CHECKS) - failed}/{len(CHECKS)} checks passed")
    return 0 if failed == 0 else 1
