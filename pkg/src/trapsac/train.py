"""Training, evaluation, demonstration collection and rollout runners."""

from dataclasses import dataclass
import json
import logging
import os

import numpy as np

from .approx import load_checkpoint, save_checkpoint
from .config import ConfigError, ExperimentConfig
from .demos import DemoDataset, MixedReplayBuffer, anneal_beta, collect_demos
from .env import TrapEnv
from .heuristic import RuleController, StochasticRulePolicy, rule_distribution
from .metrics import EpisodeRecord, MetricsWriter, Summary, summarize
from .sac import DiscreteSac
from .seeding import episode_seed, stream

log = logging.getLogger(__name__)

TRAIN_CSV = "train.csv"
EVAL_CSV = "eval.csv"
EVAL_SUMMARY_CSV = "eval_summary.csv"
CHECKPOINT = "checkpoint.npz"


@dataclass
class TrainResult:
    out_dir: str
    records: list
    evals: list  # (training episode, Summary)
    agent: DiscreteSac

    @property
    def final_eval(self) -> Summary | None:
        return self.evals[-1][1] if self.evals else None


# -- policies for evaluation -----------------------------------------------------

class GreedyAgentPolicy:
    def __init__(self, agent: DiscreteSac):
        self.agent = agent

    def __call__(self, env: TrapEnv, obs):
        return self.agent.act(obs, greedy=True)


class RulePolicy:
    def __init__(self, params=None):
        self.controller = RuleController(params) if params else RuleController()

    def __call__(self, env: TrapEnv, obs):
        a = self.controller(env.world)
        return a, rule_distribution(a, 1.0)


def run_episode(env: TrapEnv, policy, seed: int, episode: int = 0) -> EpisodeRecord:
    obs = env.reset(seed)
    total = 0.0
    dists = []
    while not env.done:
        a, probs = policy(env, obs)
        out = env.step(a)
        total += out.reward
        dists.append(probs)
        obs = out.obs
    return EpisodeRecord.from_distributions(episode, env.success(), env.collided, total,
                                            env.avg_speed, env.distance, dists)


def evaluate(policy, config: ExperimentConfig, episodes: int | None = None,
             stream_name: str = "eval") -> list:
    """Greedy rollouts on the fixed evaluation seeds of ``config.seed``."""
    episodes = config.eval_episodes if episodes is None else episodes
    env = TrapEnv(config.scenario)
    return [run_episode(env, policy, episode_seed(config.seed, stream_name, k), k)
            for k in range(episodes)]


# -- demonstrations --------------------------------------------------------------

def load_or_collect_demos(config: ExperimentConfig) -> DemoDataset:
    if config.demo_path:
        if not os.path.exists(config.demo_path):
            raise ConfigError(f"demo dataset not found: {config.demo_path}")
        data = DemoDataset.load(config.demo_path)
    else:
        data = collect_demos(config.scenario, StochasticRulePolicy(RuleController(config.heuristic),
                                                                   config.sac.p_rule),
                             config.demo_episodes, config.seed)
    if config.demo_mode == "reward-aug" and not data.augmented:
        data = data.with_reward_bonus(config.reward_bonus)
    elif config.demo_mode == "margin" and data.augmented:
        raise ConfigError("margin mode expects demonstrations without the reward bonus")
    return data


def run_demo_collect(config: ExperimentConfig, out_path, deterministic: bool = False,
                     csv_path=None) -> DemoDataset:
    policy = StochasticRulePolicy(RuleController(config.heuristic), config.sac.p_rule)
    data = collect_demos(config.scenario, policy, config.demo_episodes, config.seed,
                         deterministic=deterministic)
    try:
        data.save(out_path)
    except OSError as exc:
        raise ConfigError(f"cannot write {out_path}: {exc}") from None
    if csv_path:
        data.to_csv(csv_path)
    return data


# -- training --------------------------------------------------------------------

def _checkpoint_meta(config: ExperimentConfig, agent: DiscreteSac, episodes: int) -> dict:
    return {"config": json.loads(json.dumps(config.as_dict(), default=str)),
            "log_alpha": agent.log_alpha, "updates": agent.updates, "episodes": episodes}


def run_train(config: ExperimentConfig, out_dir, progress: bool = False) -> TrainResult:
    """Episode loop: act, store, update, anneal beta, evaluate periodically."""
    if config.rule_only:
        raise ConfigError("the rule preset has nothing to train; use eval")
    os.makedirs(out_dir, exist_ok=True)
    cfg = config.sac
    demos = load_or_collect_demos(config) if config.demo_buffer else None
    demo_margin = config.demo_mode == "margin"

    agent = DiscreteSac(cfg, stream(config.seed, "init"), soft_constraint=config.soft_constraint)
    act_rng = stream(config.seed, "policy")
    batch_rng = stream(config.seed, "buffer")
    buffer = MixedReplayBuffer(cfg.buffer_cap, demos)
    rule = RuleController(config.heuristic) if config.soft_constraint else None
    env = TrapEnv(config.scenario)

    records, evals = [], []
    train_csv = MetricsWriter(os.path.join(out_dir, TRAIN_CSV))
    eval_csv = MetricsWriter(os.path.join(out_dir, EVAL_CSV))
    summary_fh = open(os.path.join(out_dir, EVAL_SUMMARY_CSV), "w", newline="", encoding="utf-8")
    summary_fh.write("train_episode,success_rate,collision_rate,reward_mean,speed_mean,"
                     "distance_mean,effective_actions\n")
    eval_counter = 0

    def do_eval(ep):
        nonlocal eval_counter
        recs = evaluate(GreedyAgentPolicy(agent), config)
        for r in recs:
            eval_csv.write(EpisodeRecord(eval_counter, r.success, r.collision,
                                         r.accumulated_reward, r.avg_speed, r.travel_distance,
                                         r.avg_entropy, r.effective_actions))
            eval_counter += 1
        s = summarize(recs)
        evals.append((ep, s))
        summary_fh.write(",".join([str(ep)] + [repr(float(v)) for v in (
            s.success_rate, s.collision_rate, s.reward_mean, s.speed_mean, s.distance_mean,
            s.effective_actions_mean)]) + "\n")
        summary_fh.flush()
        if progress:
            log.info("episode %d eval: %s", ep, s.table_row("greedy"))

    try:
        for ep in range(config.episodes):
            if demos is not None:
                buffer.beta = anneal_beta(ep, config.beta_init, config.beta_horizon)
            obs = env.reset(episode_seed(config.seed, "train", ep))
            total = 0.0
            dists = []
            while not env.done:
                a, probs = agent.act(obs, act_rng)
                rule_a = rule(env.world) if rule is not None else -1
                out = env.step(a)
                buffer.add(obs, a, out.reward, out.obs, out.terminated, rule_a)
                total += out.reward
                dists.append(probs)
                obs = out.obs
                if len(buffer) >= cfg.warmup:
                    agent.update(buffer.sample(cfg.batch, batch_rng, agent.actor.dtype),
                                 demo_margin)
            rec = EpisodeRecord.from_distributions(ep, env.success(), env.collided, total,
                                                   env.avg_speed, env.distance, dists)
            records.append(rec)
            train_csv.write(rec)
            if progress and (ep + 1) % 10 == 0:
                recent = records[-10:]
                log.info("episode %d success %.1f reward %.1f alpha %.2e",
                         ep + 1, 100 * np.mean([r.success for r in recent]),
                         np.mean([r.accumulated_reward for r in recent]), agent.alpha)
            if config.eval_every and (ep + 1) % config.eval_every == 0:
                do_eval(ep + 1)
        if config.eval_episodes and (not evals or evals[-1][0] != config.episodes):
            do_eval(config.episodes)
    finally:
        train_csv.close()
        eval_csv.close()
        summary_fh.close()

    save_checkpoint(os.path.join(out_dir, CHECKPOINT), agent.networks(),
                    _checkpoint_meta(config, agent, config.episodes))
    return TrainResult(str(out_dir), records, evals, agent)


def load_agent(path, config: ExperimentConfig) -> DiscreteSac:
    nets, meta = load_checkpoint(path)
    agent = DiscreteSac(config.sac, stream(config.seed, "init"),
                        soft_constraint=config.soft_constraint)
    for name, net in agent.networks().items():
        if name not in nets or nets[name].sizes != net.sizes:
            raise ConfigError(f"checkpoint network {name!r} does not match the configured "
                              f"architecture {net.sizes}")
        net.buffer[...] = nets[name].buffer
    agent.log_alpha = float(meta.get("log_alpha", agent.log_alpha))
    return agent


def run_eval(config: ExperimentConfig, checkpoint=None, episodes: int | None = None,
             csv_path=None) -> tuple[list, Summary]:
    """Greedy (or rule) rollouts over seeded episodes; returns records and summary."""
    if config.rule_only:
        policy = RulePolicy(config.heuristic)
    else:
        if checkpoint is None:
            raise ConfigError("eval needs a checkpoint unless the rule preset is used")
        policy = GreedyAgentPolicy(load_agent(checkpoint, config))
    records = evaluate(policy, config, episodes)
    if csv_path:
        with MetricsWriter(csv_path) as w:
            for r in records:
                w.write(r)
    return records, summarize(records)


def rollout(config: ExperimentConfig, out_csv, policy_name: str = "rule", checkpoint=None,
            episode: int = 0, greedy: bool = True) -> EpisodeRecord:
    """One recorded episode exported as a trajectory CSV."""
    env = TrapEnv(config.scenario, record=True)
    if policy_name == "rule":
        policy = RulePolicy(config.heuristic)
    elif policy_name == "stochastic-rule":
        stoch = StochasticRulePolicy(RuleController(config.heuristic), config.sac.p_rule)
        rng = stream(config.seed, "rollout")

        def policy(env, obs):
            a, rule_a = stoch.sample(env.world, rng)
            return a, rule_distribution(rule_a, stoch.p_rule)
    elif policy_name == "agent":
        if checkpoint is None:
            raise ConfigError("agent rollouts need a checkpoint")
        agent = load_agent(checkpoint, config)
        rng = stream(config.seed, "rollout")

        def policy(env, obs):
            return agent.act(obs, None if greedy else rng, greedy=greedy)
    else:
        raise ConfigError(f"unknown rollout policy {policy_name!r}")
    rec = run_episode(env, policy, episode_seed(config.seed, "rollout", episode), episode)
    env.export_trajectory(out_csv)
    return rec
