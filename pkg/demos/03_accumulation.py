"""
Plain versus projected gradient accumulation
============================================

One training step is split into microbatches. Plain accumulation sums their
policy gradients. Projected accumulation first removes, from the running sum,
the part lying in the span of the current microbatch's sequence gradients
(with the removed norm clamped to half the microbatch gradient norm), then
adds the microbatch gradient.
"""
import numpy as np

from proma import accumulate as A
from proma import policy as P
from proma import task as T

params = P.init_params(16, 8, 16, rng=1, out_scale=0.5)
instances = T.make_instances(8, n_digits=1, rng_seed=3)


def groups_for(batch, seed):
    rng = np.random.default_rng(seed)
    out = []
    for inst in batch:
        samples = [P.sample_response(params, inst.prompt_tokens, 1, rng=rng) for _ in range(8)]
        rewards = [T.reward(s, inst) for s in samples]
        out.append(T.RewardedGroup(inst, samples, rewards, T.group_advantages(rewards)))
    return out


microbatches = [A.compute_microbatch_gradients(params, groups_for(instances[i:i + 2], i))
                for i in range(0, 8, 2)]

for strategy in ("plain", "proma_exact", "proma_approx"):
    state = A.AccumulatorState.for_params(params, strategy=strategy)
    for mcb in microbatches:
        if strategy == "plain":
            A.accumulate_plain(state, mcb)
        else:
            A.accumulate_proma(state, mcb)
    tele = state.telemetry
    print(f"{strategy:13s} |acc| = {np.linalg.norm(state.flat()):.4f}  "
          f"removed = {tele.subtracted_norm:.4f}  clamp hits = {tele.clamp_hits}")

# %% The first microbatch of a round is always added unchanged
state = A.AccumulatorState.for_params(params, strategy="proma_exact")
A.accumulate_proma(state, microbatches[0])
print("first microbatch identical to plain:",
      all(np.array_equal(state.grads[n], microbatches[0].policy_grad[n]) for n in state.grads))

# %% Projection makes the result depend on microbatch order
def run(order):
    s = A.AccumulatorState.for_params(params, strategy="proma_exact")
    for i in order:
        A.accumulate_proma(s, microbatches[i])
    return s.flat()

print("order changes the sum by", np.linalg.norm(run([0, 1, 2, 3]) - run([3, 2, 1, 0])))

# %% The update step is gradient ascent on expected reward
state = A.AccumulatorState.for_params(params)
for mcb in microbatches:
    A.accumulate_plain(state, mcb)
new = A.apply_update(params, state, lr=0.05)
print("parameter change norm:", np.linalg.norm(new.flat() - params.flat()))
