"""
A tiny autoregressive policy and its gradients
==============================================

The policy pools the prompt embedding, concatenates the previous-token
embedding, and maps the result through one tanh layer to next-token logits.
Everything is written in numpy, including the backward pass.
"""
import numpy as np

from proma import policy as P

params = P.init_params(vocab=16, d_emb=8, d_hid=16, rng=0, embed_scale=1.0, out_scale=0.5)
print("parameters:", params.num_params, {n: a.shape for n, a in params.layers().items()})

# %% Sampling is seeded; temperature 0 is greedy decoding
s = P.sample_response(params, [3, 1, 4], max_len=4, rng=7)
print("sampled", s.response_tokens, "log-prob", round(s.logprob_sum, 4))
print("greedy ", P.sample_response(params, [3, 1, 4], 4, temperature=0.0).response_tokens)

# %% Backward pass and a finite-difference spot check
grads, tapes = P.backward_sequence(params, s)
h = 1e-5
params.out_b[2] += h
up = P.forward_logprobs(params, s.prompt_tokens, s.response_tokens).logprob_sum
params.out_b[2] -= 2 * h
down = P.forward_logprobs(params, s.prompt_tokens, s.response_tokens).logprob_sum
params.out_b[2] += h
print("d logp / d out_b[2]: analytic", grads["out_b"][2], "numeric", (up - down) / (2 * h))

# %% Linear layers keep a tape of inputs and output-gradients; their
# weight gradient is the outer-product sum of the two
t = tapes["out_w"]
print("tape identity error:", np.abs(grads["out_w"].T - t.grad_out.T @ t.act_in).max())

# %% Entropy of the next-token distribution, in nats
print("entropy at the first position:", P.entropy(params, [([3, 1, 4], [])]))
