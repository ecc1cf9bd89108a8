"""Group-relative policy optimization with the segmented entropy reward.

One iteration: snapshot the current policy, sample a group of responses
per problem, score them (accuracy plus the entropy term on correct
answers), normalize rewards within each group, and take a clipped
surrogate ascent step with a per-token KL penalty against the frozen
initial policy.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import policy as pol
from . import tasks
from .entropy import EntropySeries, LogitTrace, TecaCurve, entropy_series, teca
from .errors import InvalidInputError, UpdateRejectedError
from .rewards import RewardBundle, score_response
from .tasks import Problem, ParsedAnswer, parse_answer, verify

__all__ = [
    "TrainConfig", "Response", "RolloutGroup", "TrainResult",
    "group_advantages", "kl_penalty", "rollout_group", "objective",
    "surrogate_value", "train", "seed_streams", "build_problems",
]

TELEMETRY_FIELDS = ("iteration", "mean_reward", "accuracy", "mean_length",
                    "min_length", "clip_ratio", "mean_teca_last", "objective", "kl_mean")


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for a full training run."""

    seed: int = 0
    epochs: int = 5
    train_set_size: int = 2000
    batch_problems: int = 32
    max_iterations: int | None = None
    # task
    k_max: int = 4
    # policy
    d_model: int = 32
    n_blocks: int = 2
    context_window: int = 96
    ffn_mult: int = 4
    # rollout
    group_size: int = 8
    temperature: float = 1.5
    entropy_temperature: float | None = None
    max_response_length: int = 64
    # surrogate
    clip_eps: float = 0.2
    kl_beta: float = 0.001
    aggregation: str = "token_mean"
    degeneracy_policy: str = "zero"
    # optimizer
    learning_rate: float = 3e-4
    ppo_epochs: int = 1
    minibatch_groups: int | None = None
    # reward
    reward_mode: str = "segmented"
    # evaluation
    eval_set_size: int = 6000
    # io
    checkpoint_interval: int = 100

    def __post_init__(self):
        if not (0.0 < self.clip_eps < 1.0):
            raise InvalidInputError("clip_eps must lie strictly inside (0, 1)")
        if self.kl_beta < 0:
            raise InvalidInputError("kl_beta must be nonnegative")
        if self.group_size < 2:
            raise InvalidInputError("group_size must be at least 2")
        if not (math.isfinite(self.temperature) and self.temperature > 0):
            raise InvalidInputError("temperature must be a finite positive real")
        if self.reward_mode not in ("segmented", "accuracy_only"):
            raise InvalidInputError("reward_mode must be 'segmented' or 'accuracy_only'")
        if self.degeneracy_policy not in ("zero", "eps_floor"):
            raise InvalidInputError("degeneracy_policy must be 'zero' or 'eps_floor'")
        if self.aggregation not in ("token_mean", "token_sum"):
            raise InvalidInputError("aggregation must be 'token_mean' or 'token_sum'")
        for name in ("epochs", "train_set_size", "batch_problems", "max_response_length",
                     "k_max", "eval_set_size", "ppo_epochs", "checkpoint_interval"):
            if getattr(self, name) < 1:
                raise InvalidInputError(f"{name} must be positive")
        if tasks.prompt_length(self.k_max) + self.max_response_length > self.context_window:
            raise InvalidInputError("hardest prompt plus max_response_length exceeds the context window")

    @property
    def entropy_temp(self) -> float:
        """Temperature for entropy traces; defaults to the rollout temperature."""
        return self.temperature if self.entropy_temperature is None else self.entropy_temperature

    def policy_config(self) -> pol.PolicyConfig:
        return pol.PolicyConfig(vocab_size=tasks.VOCAB_SIZE, d_model=self.d_model,
                                n_blocks=self.n_blocks, context_window=self.context_window,
                                ffn_mult=self.ffn_mult)

    def hyper(self) -> pol.GrpoHyper:
        return pol.GrpoHyper(clip_eps=self.clip_eps, kl_beta=self.kl_beta,
                             temperature=self.temperature, aggregation=self.aggregation)


@dataclass
class Response:
    """One sampled response with everything needed to score and update."""

    tokens: tuple[int, ...]
    trace: LogitTrace
    truncated: bool
    entropies: EntropySeries
    teca_curve: TecaCurve
    parsed: ParsedAnswer
    bundle: RewardBundle
    reward: float
    old_logprobs: np.ndarray
    ref_logprobs: np.ndarray | None = None

    @property
    def length(self) -> int:
        return len(self.tokens)


@dataclass
class RolloutGroup:
    """All responses sampled for one problem under one policy snapshot."""

    problem: Problem
    responses: list[Response]
    rewards: np.ndarray
    advantages: np.ndarray
    reward_mean: float
    reward_std: float


@dataclass
class TrainResult:
    params: pol.PolicyParams
    telemetry: list[dict]
    problems: list[Problem]
    config: TrainConfig


def seed_streams(seed: int) -> dict[str, np.random.Generator]:
    """Named deterministic RNG streams derived from one master seed."""
    children = np.random.SeedSequence(seed).spawn(5)
    names = ("init", "problems", "eval_problems", "shuffle", "rollout")
    return {name: np.random.default_rng(child) for name, child in zip(names, children)}


def build_problems(rng: np.random.Generator, n: int, k_max: int) -> list[Problem]:
    """A problem set with difficulties drawn uniformly from [1, k_max]."""
    return [tasks.generate_problem(rng, int(rng.integers(1, k_max + 1))) for _ in range(n)]


def group_advantages(rewards, degeneracy_policy: str = "zero") -> np.ndarray:
    """Within-group normalized advantages (population standard deviation).

    A degenerate group (zero reward spread) yields all-zero advantages by
    default; the ``eps_floor`` policy divides by max(std, 1e-8) instead.
    """
    r = np.asarray(rewards, dtype=np.float64)
    if r.ndim != 1 or r.size < 2:
        raise InvalidInputError("a group needs at least 2 rewards")
    mean = r.mean()
    std = r.std()
    if std == 0.0:
        if degeneracy_policy == "eps_floor":
            return (r - mean) / 1e-8
        return np.zeros_like(r)
    return (r - mean) / std


def kl_penalty(logprob_theta, logprob_ref):
    """Nonnegative KL estimator rho - ln(rho) - 1 with rho = exp(ref - theta).

    Evaluated as expm1(d) - d over the log-space difference d, which is
    both accurate near zero and free of spurious overflow.
    """
    d = np.asarray(logprob_ref, dtype=np.float64) - np.asarray(logprob_theta, dtype=np.float64)
    return np.expm1(d) - d


def _logprobs_from_trace(trace_logits: np.ndarray, tokens: tuple[int, ...],
                         temperature: float) -> np.ndarray:
    """Sampling-distribution logprobs of the emitted tokens, from the raw trace."""
    z = trace_logits / temperature
    z = z - z.max(axis=1, keepdims=True)
    logz = np.log(np.exp(z).sum(axis=1))
    return z[np.arange(len(tokens)), np.asarray(tokens, dtype=np.int64)] - logz


def _score_sampled(problem: Problem, tokens: tuple[int, ...], trace_arr: np.ndarray,
                   truncated: bool, config: TrainConfig) -> Response:
    trace = LogitTrace(trace_arr, temperature=config.entropy_temp)
    series = entropy_series(trace)
    curve = teca(series)
    parsed = parse_answer(tokens)
    # a truncated response never scores, which keeps run-on generation penalized
    correct = 0 if truncated else verify(parsed, problem)
    bundle = score_response(correct, curve.last)
    reward = bundle.combined if config.reward_mode == "segmented" else float(bundle.accuracy)
    old_lp = _logprobs_from_trace(trace_arr, tokens, config.temperature)
    return Response(tokens=tokens, trace=trace, truncated=truncated, entropies=series,
                    teca_curve=curve, parsed=parsed, bundle=bundle, reward=reward,
                    old_logprobs=old_lp)


def _group_from_scored(problem: Problem, scored: list[Response], config: TrainConfig) -> RolloutGroup:
    rewards = np.array([r.reward for r in scored])
    return RolloutGroup(problem=problem, responses=scored, rewards=rewards,
                        advantages=group_advantages(rewards, config.degeneracy_policy),
                        reward_mean=float(rewards.mean()), reward_std=float(rewards.std()))


def rollout_group(snap: pol.PolicySnapshot, problem: Problem, config: TrainConfig,
                  rng: np.random.Generator) -> RolloutGroup:
    """Sample, score, and normalize one group of responses for one problem."""
    sampled = pol.sample_batch(snap.params, [problem.prompt_tokens] * config.group_size,
                               config.temperature, config.max_response_length, rng, tasks.END)
    scored = [_score_sampled(problem, t, tr, tc, config) for t, tr, tc in sampled]
    return _group_from_scored(problem, scored, config)


def _rollout_batch(snap: pol.PolicySnapshot, problems: list[Problem], config: TrainConfig,
                   rng: np.random.Generator) -> list[RolloutGroup]:
    """Rollouts for a whole problem batch, bucketed by prompt length.

    Equal-length prompts sample together in one batched pass; bucket order
    is sorted by prompt length so the RNG stream is consumed
    deterministically.
    """
    buckets: dict[int, list[int]] = {}
    for idx, prob in enumerate(problems):
        buckets.setdefault(len(prob.prompt_tokens), []).append(idx)
    groups: list[RolloutGroup | None] = [None] * len(problems)
    for plen in sorted(buckets):
        idxs = buckets[plen]
        prompts = []
        for i in idxs:
            prompts.extend([problems[i].prompt_tokens] * config.group_size)
        sampled = pol.sample_batch(snap.params, prompts, config.temperature,
                                   config.max_response_length, rng, tasks.END)
        for slot, i in enumerate(idxs):
            chunk = sampled[slot * config.group_size:(slot + 1) * config.group_size]
            scored = [_score_sampled(problems[i], t, tr, tc, config) for t, tr, tc in chunk]
            groups[i] = _group_from_scored(problems[i], scored, config)
    return groups  # type: ignore[return-value]


def _attach_ref_logprobs(ref: pol.PolicySnapshot, groups: list[RolloutGroup],
                         config: TrainConfig) -> None:
    pairs = [(g.problem.prompt_tokens, r.tokens) for g in groups for r in g.responses]
    lps = pol.response_logprobs_batch(ref.params, pairs, config.temperature)
    i = 0
    for g in groups:
        for r in g.responses:
            r.ref_logprobs = lps[i]
            i += 1


def _grad_items(groups: list[RolloutGroup]) -> list[list[pol.GradItem]]:
    out = []
    for g in groups:
        items = []
        for r, adv in zip(g.responses, g.advantages):
            if r.ref_logprobs is None:
                raise InvalidInputError("reference logprobs not attached")
            items.append(pol.GradItem(prompt=g.problem.prompt_tokens, response=r.tokens,
                                      advantage=float(adv), old_logprobs=r.old_logprobs,
                                      ref_logprobs=r.ref_logprobs))
        out.append(items)
    return out


def surrogate_value(groups: list[list[pol.GradItem]], params: pol.PolicyParams,
                    hyper: pol.GrpoHyper) -> float:
    """Value of the clipped surrogate minus the KL penalty (no gradients).

    Independent of the gradient path: recomputes current log-probabilities
    and applies the per-token formula directly.
    """
    if not groups or any(not g for g in groups):
        raise InvalidInputError("batch must contain at least one nonempty group")
    pairs = [(it.prompt, it.response) for g in groups for it in g]
    lps = pol.response_logprobs_batch(params, pairs, hyper.temperature)
    value = 0.0
    i = 0
    for group in groups:
        for item in group:
            lp = lps[i]
            i += 1
            t_len = len(item.response)
            if t_len == 0:
                continue
            ratio = np.exp(lp - item.old_logprobs)
            unclipped = ratio * item.advantage
            clipped = np.clip(ratio, 1.0 - hyper.clip_eps, 1.0 + hyper.clip_eps) * item.advantage
            term = np.minimum(unclipped, clipped)
            kl = kl_penalty(lp, item.ref_logprobs)
            denom = len(groups) * len(group) * (t_len if hyper.aggregation == "token_mean" else 1)
            value += float((term - hyper.kl_beta * kl).sum()) / denom
    return value


def objective(groups: list[RolloutGroup], params: pol.PolicyParams,
              snap_old: pol.PolicySnapshot, snap_ref: pol.PolicySnapshot,
              config: TrainConfig) -> float:
    """Batch surrogate value with old/ref log-probabilities recomputed from snapshots."""
    pairs = [(g.problem.prompt_tokens, r.tokens) for g in groups for r in g.responses]
    old_lps = pol.response_logprobs_batch(snap_old.params, pairs, config.temperature)
    ref_lps = pol.response_logprobs_batch(snap_ref.params, pairs, config.temperature)
    items: list[list[pol.GradItem]] = []
    i = 0
    for g in groups:
        row = []
        for r, adv in zip(g.responses, g.advantages):
            row.append(pol.GradItem(prompt=g.problem.prompt_tokens, response=r.tokens,
                                    advantage=float(adv), old_logprobs=old_lps[i],
                                    ref_logprobs=ref_lps[i]))
            i += 1
        items.append(row)
    return surrogate_value(items, params, config.hyper())


def _telemetry_record(iteration: int, epoch: int, groups: list[RolloutGroup],
                      obj_value: float, kl_mean: float) -> dict:
    responses = [r for g in groups for r in g.responses]
    lengths = [r.length for r in responses]
    return {
        "iteration": iteration,
        "epoch": epoch,
        "mean_reward": float(np.mean([r.reward for r in responses])),
        "accuracy": float(np.mean([r.bundle.accuracy for r in responses])),
        "mean_length": float(np.mean(lengths)),
        "min_length": int(min(lengths)),
        "clip_ratio": float(np.mean([r.truncated for r in responses])),
        "mean_teca_last": float(np.mean([r.teca_curve.last for r in responses])),
        "objective": float(obj_value),
        "kl_mean": float(kl_mean),
    }


def train(config: TrainConfig, initial_params: pol.PolicyParams | None = None,
          on_record=None, checkpoint_dir: str | None = None,
          problems: list[Problem] | None = None) -> TrainResult:
    """Run the full training loop and return final parameters plus telemetry.

    The reference policy for the KL penalty is the initial policy for the
    whole run; the old policy refreshes every batch.  A rejected update
    aborts the run after writing the last good parameters to
    ``checkpoint_dir``.
    """
    streams = seed_streams(config.seed)
    if problems is None:
        problems = build_problems(streams["problems"], config.train_set_size, config.k_max)
    params = initial_params if initial_params is not None else pol.init_params(
        config.policy_config(), streams["init"])
    ref = pol.snapshot(params, "ref")
    adam = pol.Adam(learning_rate=config.learning_rate)
    hyper = config.hyper()
    telemetry: list[dict] = []
    iteration = 0

    if checkpoint_dir:
        os.makedirs(checkpoint_dir, exist_ok=True)

    def _checkpoint(name: str):
        if checkpoint_dir:
            pol.save_checkpoint(params, os.path.join(checkpoint_dir, name))

    try:
        done = False
        for epoch in range(config.epochs):
            order = streams["shuffle"].permutation(len(problems))
            for start in range(0, len(order), config.batch_problems):
                batch = [problems[int(i)] for i in order[start:start + config.batch_problems]]
                old = pol.snapshot(params, f"iter{iteration}")
                groups = _rollout_batch(old, batch, config, streams["rollout"])
                _attach_ref_logprobs(ref, groups, config)
                items = _grad_items(groups)

                obj_acc = 0.0
                kl_acc = 0.0
                n_chunks = 0
                for _ in range(config.ppo_epochs):
                    if config.minibatch_groups:
                        chunks = [items[i:i + config.minibatch_groups]
                                  for i in range(0, len(items), config.minibatch_groups)]
                    else:
                        chunks = [items]
                    for chunk in chunks:
                        grads, stats = pol.grad_objective(params, chunk, hyper)
                        params = adam.update(params, grads)
                        obj_acc += stats.value
                        kl_acc += stats.kl_mean
                        n_chunks += 1

                record = _telemetry_record(iteration, epoch, groups,
                                           obj_acc / n_chunks, kl_acc / n_chunks)
                telemetry.append(record)
                if on_record is not None:
                    on_record(record)
                iteration += 1
                if iteration % config.checkpoint_interval == 0:
                    _checkpoint(f"ckpt_{iteration:05d}.npz")
                if config.max_iterations is not None and iteration >= config.max_iterations:
                    done = True
                    break
            if done:
                break
    except UpdateRejectedError:
        _checkpoint("last_good.npz")
        raise
    _checkpoint("final.npz")
    return TrainResult(params=params, telemetry=telemetry, problems=problems, config=config)
