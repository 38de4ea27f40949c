"""Training loop, run artifacts, and multi-strategy comparison."""
from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import accumulate as A
from . import diagnostics as D
from . import intra as I
from . import plotting
from . import policy as P
from . import task as T
from .config import MODEL_KEYS, TASK_KEYS, RunConfig, dumps_config
from .errors import ConfigError, NumericalAbort

log = logging.getLogger(__name__)

OUT_DIR_ENV = "PROMA_OUT_DIR"
METRICS_FILE = "metrics.csv"
CONFIG_FILE = "config.toml"
SUMMARY_FILE = "summary.csv"
SUMMARY_METRICS = ("val_reward", "kl_initial", "entropy", "kl_lagged")

# SeedSequence stream tags: one independent stream per purpose
_INIT, _ROLLOUT, _KL, _INTRA = 9, 2, 3, 4


def default_out_dir() -> Path:
    return Path(os.environ.get(OUT_DIR_ENV, "runs"))


@dataclass
class RunArtifacts:
    out_dir: Path
    metrics_csv: Path
    config_echo: Path
    checkpoints: list[Path] = field(default_factory=list)
    plots: list[Path] = field(default_factory=list)
    records: list[D.MetricsRecord] = field(default_factory=list)
    final_params: P.PolicyParams | None = None


def _rollout(params, cfg: RunConfig, step: int):
    n_prompts = cfg.prompts_per_microbatch * cfg.microbatches_per_step
    instances = T.make_instances(n_prompts, cfg.n_digits, (cfg.seed, step))
    prompts = np.repeat(np.array([i.prompt_tokens for i in instances]), cfg.group_size, axis=0)
    rng = np.random.SeedSequence([cfg.seed, _ROLLOUT, step])
    responses, logps = P.sample_batch(params, prompts, cfg.response_len, cfg.temperature, rng)
    groups = []
    g = cfg.group_size
    for i, inst in enumerate(instances):
        samples = [P.SequenceSample(list(inst.prompt_tokens), responses[j].tolist(),
                                    float(logps[j].sum()), logps[j].tolist())
                   for j in range(i * g, (i + 1) * g)]
        rewards = [T.reward(s, inst) for s in samples]
        adv = T.group_advantages(rewards, cfg.advantage_eps, cfg.advantage_norm)
        groups.append(T.RewardedGroup(inst, samples, rewards, adv))
    entropy = P.position_entropy(params, prompts, responses)
    return groups, entropy


def _accumulate_step(params, groups, cfg: RunConfig, step: int, intra_cfg):
    """Run the configured strategy over the step's microbatches in order."""
    strategy = "plain" if cfg.strategy in ("proma_intra",) else cfg.strategy
    state = A.AccumulatorState.for_params(
        params, strategy=strategy, clamp_fraction=cfg.clamp_fraction,
        projection_group_size=cfg.projection_group_size, passes=cfg.passes,
        clamp_scope=cfg.clamp_scope)
    seq_grads = []
    ppm = cfg.prompts_per_microbatch
    for m in range(cfg.microbatches_per_step):
        chunk = groups[m * ppm:(m + 1) * ppm]
        mcb = A.compute_microbatch_gradients(params, chunk)
        seq_grads.append(mcb.seq_grads)
        if cfg.strategy == "plain":
            A.accumulate_plain(state, mcb)
        elif cfg.strategy == "ppo_clip":
            # rollout params are the current params: a single on-policy update
            A.accumulate_ppo_clip(state, params, params, chunk, cfg.clip_eps)
        elif cfg.strategy in ("proma_exact", "proma_approx"):
            A.accumulate_proma(state, mcb)
        else:
            seed = np.random.SeedSequence([cfg.seed, _INTRA, step, m])
            A.add_gradients(state, I.intra_proma_step(params, mcb, intra_cfg, seed))
    stacked = {n: np.concatenate([s[n].grads for s in seq_grads], axis=1) for n in P.LAYER_NAMES}
    return state, stacked


def _write_abort_dump(out_dir: Path, exc: NumericalAbort) -> None:
    flat = {}
    for group, layers in (exc.dump or {}).items():
        for name, arr in layers.items():
            flat[f"{group}.{name}"] = np.asarray(arr)
    np.savez(out_dir / "abort_dump.npz", **flat)


def train(cfg: RunConfig, out_dir=None) -> RunArtifacts:
    """Train one policy under ``cfg``, writing metrics, checkpoints and the
    resolved config to ``out_dir``. Deterministic given the config."""
    out_dir = Path(out_dir) if out_dir is not None else default_out_dir()
    ckpt_dir = out_dir / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    echo = out_dir / CONFIG_FILE
    echo.write_text(dumps_config(cfg), encoding="utf-8")

    params = P.init_params(cfg.vocab, cfg.d_emb, cfg.d_hid,
                           np.random.SeedSequence([cfg.seed, _INIT]),
                           embed_scale=cfg.init_embed_scale)
    initial = params.copy()
    val = T.make_instances(cfg.n_val, cfg.n_digits, cfg.seed, domain=T.VAL_DOMAIN)
    eval_prompts = np.array([v.prompt_tokens for v in val[:cfg.n_eval_prompts]])
    ring = D.SnapshotRing(cfg.lag_window)
    ring.push(0, params)
    intra_cfg = I.IntraConfig(cfg.intra_r, cfg.intra_shrinkage, cfg.intra_power_iters,
                              cfg.intra_variant)
    optimizer = A.Adam() if cfg.optimizer == "adam" else None

    arts = RunArtifacts(out_dir, out_dir / METRICS_FILE, echo)

    def checkpoint(step):
        path = ckpt_dir / f"step_{step:06d}.ckpt"
        P.save_checkpoint(params, path)
        arts.checkpoints.append(path)

    checkpoint(0)
    with open(arts.metrics_csv, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(D.MetricsRecord.columns())
        for step in range(1, cfg.total_steps + 1):
            rollout_sum = params.checksum()
            groups, ent = _rollout(params, cfg, step)
            state, seq_grads = _accumulate_step(params, groups, cfg, step, intra_cfg)
            assert params.checksum() == rollout_sum, "rollout params changed before update"
            tele = state.telemetry
            n = max(state.microbatches_seen, 1)
            direction = {k: g / n for k, g in state.grads.items()}
            grad_norm = float(np.sqrt(sum(g @ g for g in direction.values())))
            subtracted, clamp_hits = tele.subtracted_norm, tele.clamp_hits
            try:
                new_params = A.apply_update(params, state, cfg.lr, optimizer)
            except NumericalAbort as exc:
                _write_abort_dump(out_dir, exc)
                raise
            update = {k: (getattr(new_params, k) - getattr(params, k)).ravel()
                      for k in P.LAYER_NAMES}
            params = new_params

            if cfg.lagged_mode == "param_mean":
                lagged = ring.mean()
            else:
                lagged = ring.lagged(cfg.lag_window - 1)
            ring.push(step, params)
            kl_rng = np.random.SeedSequence([cfg.seed, _KL, step])
            rec = D.MetricsRecord(
                step=step,
                train_reward=float(np.mean([r for g in groups for r in g.rewards])),
                val_reward=(D.validation_reward(params, val, length=cfg.response_len)
                            if step % cfg.eval_every == 0 or step == cfg.total_steps
                            else float("nan")),
                entropy=ent,
                kl_initial=D.kl_divergence(params, initial, eval_prompts, rng_seed=kl_rng,
                                           length=cfg.response_len),
                kl_lagged=D.kl_divergence(params, lagged, eval_prompts, rng_seed=kl_rng,
                                          length=cfg.response_len),
                local_kl_surrogate=D.local_kl_surrogate(update, seq_grads),
                grad_norm=grad_norm,
                subtracted_norm=subtracted,
                clamp_hits=clamp_hits,
            )
            writer.writerow(rec.row())
            fh.flush()
            arts.records.append(rec)
            if step % cfg.eval_every == 0 or step == cfg.total_steps:
                checkpoint(step)
    arts.final_params = params
    return arts


@dataclass
class ComparisonReport:
    runs: dict[str, RunArtifacts]
    summary: dict[str, dict[str, float]]     # run label -> metric -> final-20% median
    deltas: dict[str, dict[str, float]]      # relative to the first run
    plots: list[Path]
    summary_csv: Path


def check_comparable(cfgs: list[RunConfig]) -> None:
    if len(cfgs) < 2:
        raise ConfigError("compare needs at least two runs")
    ref = cfgs[0]
    for c in cfgs[1:]:
        bad = [k for k in TASK_KEYS + MODEL_KEYS + ("seed",) if getattr(c, k) != getattr(ref, k)]
        if bad:
            raise ConfigError(f"runs differ in task/model/seed settings: {', '.join(bad)}")


def final_fraction_median(values, fraction: float = 0.2) -> float:
    """Median over the last ``fraction`` of entries, ignoring NaN."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        return float("nan")
    start = int(np.floor((1.0 - fraction) * v.size))
    tail = v[min(start, v.size - 1):]
    tail = tail[np.isfinite(tail)]
    return float(np.median(tail)) if tail.size else float("nan")


def _labels(cfgs):
    labels, seen = [], {}
    for c in cfgs:
        seen[c.strategy] = seen.get(c.strategy, 0) + 1
        labels.append(c.strategy if seen[c.strategy] == 1 else f"{c.strategy}_{seen[c.strategy]}")
    return labels


def compare(cfgs: list[RunConfig], out_dir=None) -> ComparisonReport:
    """Train every config into its own subdirectory and overlay the curves."""
    check_comparable(cfgs)
    out_dir = Path(out_dir) if out_dir is not None else default_out_dir()
    runs = {label: train(c, out_dir / label) for label, c in zip(_labels(cfgs), cfgs)}
    columns = {label: plotting.read_metrics_csv(a.metrics_csv) for label, a in runs.items()}
    summary = {label: {m: final_fraction_median(cols[m]) for m in SUMMARY_METRICS}
               for label, cols in columns.items()}
    first = next(iter(summary.values()))
    deltas = {label: {m: s[m] - first[m] for m in SUMMARY_METRICS} for label, s in summary.items()}
    plots = plotting.plot_runs(columns, out_dir)
    summary_csv = out_dir / SUMMARY_FILE
    with open(summary_csv, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run"] + [f"{m}_median" for m in SUMMARY_METRICS]
                   + [f"{m}_delta" for m in SUMMARY_METRICS])
        for label in summary:
            w.writerow([label] + [repr(summary[label][m]) for m in SUMMARY_METRICS]
                       + [repr(deltas[label][m]) for m in SUMMARY_METRICS])
    return ComparisonReport(runs, summary, deltas, plots, summary_csv)
