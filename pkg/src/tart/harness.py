"""Training loop, rollout collection, evaluation and checkpoints.

One update = collect a rollout -> cut resource-event segments -> representation
update -> clipped policy update -> (periodic) greedy evaluation. Every random
stream derives from the run seed, so with ``workers=1`` a (config, seed) pair
fixes ``metrics.jsonl`` byte for byte. Wall-clock times go to ``timing.jsonl``
to keep the metrics log reproducible.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import multiprocessing as mp
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from tart.agents import DTYPE, Carry, HyarLiteAgent, TacticAgent
from tart.config import RunConfig, default_out_root
from tart.envs import make_env
from tart.pamdp import Transition, extract_segments, segment_arrays
from tart.policy import NonFiniteLoss, RolloutBatch, gae_advantages, ppo_update

log = logging.getLogger(__name__)

CKPT_FORMAT = "tart-checkpoint"
CKPT_VERSION = 1

METRIC_FIELDS = (
    "update", "step", "eval_return_mean", "eval_return_std", "train_return_mean", "episodes",
    "policy_loss", "value_loss", "entropy", "clip_fraction", "kl",
    "nce_loss", "mi_estimate", "vq_codebook_loss", "vq_commit_loss", "perplexity", "dead_codes",
    "hyar_recon", "repr_samples",
)


class TrainingAbort(RuntimeError):
    """Training stopped early; partial artifacts are left in the run directory."""


class CheckpointMismatch(ValueError):
    pass


def derive_seed(*parts) -> int:
    keyed = [p if isinstance(p, int) else int.from_bytes(str(p).encode()[:8].ljust(8, b"\0"), "little")
             for p in parts]
    return int(np.random.SeedSequence(keyed).generate_state(1)[0])


def build_agent(cfg: RunConfig, env=None):
    env = env or make_env(cfg.env, 0, cfg.maze, cfg.combat)
    gen = torch.Generator().manual_seed(derive_seed(cfg.seed, "init"))
    torch.manual_seed(derive_seed(cfg.seed, "torch"))
    cls = HyarLiteAgent if cfg.variant == "hyar_lite" else TacticAgent
    return cls(env.obs_dim, env.action_spec, env.resource_ids, cfg.agent_config(), generator=gen)


# ------------------------------------------------------------ collection ---

@dataclass
class EpisodeStats:
    ret: float = 0.0
    length: int = 0
    resources: int = 0
    wasted: int = 0


class Collector:
    """Owns a slice of environment instances and steps them in lockstep."""

    def __init__(self, cfg: RunConfig, env_ids: list[int], worker: int = 0):
        self.cfg = cfg
        self.env_ids = list(env_ids)
        self.envs = [make_env(cfg.env, derive_seed(cfg.seed, "env", i), cfg.maze, cfg.combat) for i in env_ids]
        self.ep_rngs = [np.random.default_rng(derive_seed(cfg.seed, "episodes", i)) for i in env_ids]
        self.obs = np.stack([env.reset(seed=int(r.integers(2**31 - 1))) for env, r in zip(self.envs, self.ep_rngs)])
        self.gen = torch.Generator().manual_seed(derive_seed(cfg.seed, "act", worker))
        self.carry = Carry.fresh(len(self.envs))
        self.running = [EpisodeStats() for _ in self.envs]

    def collect(self, agent, T: int) -> dict:
        n = len(self.envs)
        spec = self.envs[0].action_spec
        obs_buf = np.zeros((T, n, self.obs.shape[1]))
        rew = np.zeros((T, n))
        done = np.zeros((T, n))
        logp = np.zeros((T, n))
        val = np.zeros((T, n))
        stored: dict[str, list] = {}
        trajs: list[list[Transition]] = [[] for _ in range(n)]
        finished: list[EpisodeStats] = []
        codes_used: list[int] = []
        for t in range(T):
            res = agent.act(self.obs, "sample", self.gen, self.carry)
            for k, v in res.stored.items():
                stored.setdefault(k, []).append(v)
            obs_buf[t] = self.obs
            logp[t] = res.log_prob.numpy()
            val[t] = res.value.numpy()
            codes_used.extend(int(c) for c in res.codes if c >= 0)
            next_obs = np.empty_like(self.obs)
            for i, (env, a) in enumerate(zip(self.envs, res.actions)):
                o2, r, d, info = env.step(a)
                rew[t, i] = r
                done[t, i] = float(d)
                trajs[i].append(Transition(self.obs[i], a, r, o2, d, {}))
                st = self.running[i]
                st.ret += r
                st.length += 1
                st.resources += int(bool(info.get("resource_used")))
                st.wasted += int(bool(info.get("wasted_resource")))
                if d:
                    finished.append(st)
                    self.running[i] = EpisodeStats()
                    self.carry.episode_end(i)
                    o2 = env.reset(seed=int(self.ep_rngs[i].integers(2**31 - 1)))
                next_obs[i] = o2
            self.obs = next_obs
        with torch.no_grad():
            last_value = agent.act(self.obs, "greedy").value.numpy()
        anchors, windows = [], []
        H = self.cfg.window
        for traj in trajs:
            for seg in extract_segments(traj, H, spec_resource_ids(self.envs[0])):
                a, w = segment_arrays(spec, seg)
                anchors.append(a)
                windows.append(w)
        return {
            "obs": obs_buf, "rewards": rew, "dones": done, "log_probs": logp, "values": val,
            "last_value": last_value,
            "stored": {k: torch.stack(v).numpy() for k, v in stored.items()},
            "anchors": np.stack(anchors) if anchors else None,
            "windows": np.stack(windows) if windows else None,
            "episodes": [(e.ret, e.length, e.resources, e.wasted) for e in finished],
            "codes": codes_used,
        }


def spec_resource_ids(env) -> frozenset:
    return env.resource_ids


def _worker_main(conn, cfg_dict: dict, env_ids: list[int], worker: int) -> None:
    torch.set_num_threads(1)
    cfg = RunConfig(**{**cfg_dict, "seeds": tuple(cfg_dict["seeds"])})
    agent = build_agent(cfg)
    col = Collector(cfg, env_ids, worker)
    while True:
        msg = conn.recv()
        if msg[0] == "stop":
            break
        _, state, T = msg
        agent.load_state_dict(state)
        conn.send(col.collect(agent, T))
    conn.close()


class RolloutPool:
    """In-process collector for one worker, otherwise one spawned process per worker.

    Workers hold parameter snapshots that are refreshed only between updates.
    """

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        w = max(1, min(cfg.workers, cfg.n_envs))
        splits = [list(a) for a in np.array_split(np.arange(cfg.n_envs), w)]
        self.local = None
        self.procs = []
        if w == 1:
            self.local = Collector(cfg, splits[0], 0)
            return
        ctx = mp.get_context("spawn")
        for k, ids in enumerate(splits):
            parent, child = ctx.Pipe()
            p = ctx.Process(target=_worker_main, args=(child, cfg.to_dict(), [int(i) for i in ids], k), daemon=True)
            p.start()
            self.procs.append((p, parent))

    def collect(self, agent, T: int) -> dict:
        if self.local is not None:
            return self.local.collect(agent, T)
        state = {k: v.detach().clone() for k, v in agent.state_dict().items()}
        for _, conn in self.procs:
            conn.send(("collect", state, T))
        parts = [conn.recv() for _, conn in self.procs]
        return _merge(parts)

    def close(self) -> None:
        for p, conn in self.procs:
            try:
                conn.send(("stop",))
            except (BrokenPipeError, OSError):
                pass
            p.join(timeout=10)
        self.procs = []


def _merge(parts: list[dict]) -> dict:
    cat1 = lambda key: np.concatenate([p[key] for p in parts], axis=1)  # noqa: E731
    anchors = [p["anchors"] for p in parts if p["anchors"] is not None]
    windows = [p["windows"] for p in parts if p["windows"] is not None]
    return {
        "obs": cat1("obs"), "rewards": cat1("rewards"), "dones": cat1("dones"),
        "log_probs": cat1("log_probs"), "values": cat1("values"),
        "last_value": np.concatenate([p["last_value"] for p in parts]),
        "stored": {k: np.concatenate([p["stored"][k] for p in parts], axis=1) for k in parts[0]["stored"]},
        "anchors": np.concatenate(anchors) if anchors else None,
        "windows": np.concatenate(windows) if windows else None,
        "episodes": [e for p in parts for e in p["episodes"]],
        "codes": [c for p in parts for c in p["codes"]],
    }


def to_batch(data: dict, cfg: RunConfig) -> RolloutBatch:
    adv, targets = gae_advantages(data["rewards"], data["values"], data["dones"], cfg.gamma, cfg.lam,
                                  data["last_value"])
    flat = lambda x: torch.as_tensor(x.reshape(-1, *x.shape[2:]))  # noqa: E731
    actions = {}
    for k, v in data["stored"].items():
        t = flat(v)
        actions[k] = t if k in ("discrete", "code") else t.to(DTYPE)
    return RolloutBatch(flat(data["obs"]).to(DTYPE), actions, flat(data["log_probs"]).to(DTYPE),
                        flat(data["rewards"]).to(DTYPE), flat(targets).to(DTYPE),
                        flat(adv).to(DTYPE), flat(data["dones"]).to(DTYPE))


# ------------------------------------------------------------ evaluation ---

@dataclass
class EvalSummary:
    mean_return: float
    std_return: float
    returns: list[float]
    resources_per_episode: list[int]
    wasted_resources: int
    code_histogram: dict[int, int]
    episode_logs: list[list[dict]] = field(default_factory=list)

    def to_dict(self, with_logs: bool = False) -> dict:
        d = {
            "mean_return": self.mean_return, "std_return": self.std_return, "returns": self.returns,
            "resources_per_episode": self.resources_per_episode,
            "wasted_resources": self.wasted_resources,
            "code_histogram": {str(k): v for k, v in sorted(self.code_histogram.items())},
        }
        if with_logs:
            d["episode_logs"] = self.episode_logs
        return d


def run_episodes(agent, cfg: RunConfig, episodes: int, seed: int, keep_logs: bool = False) -> EvalSummary:
    """Greedy-mode episodes on a fresh environment instance."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    env = make_env(cfg.env, derive_seed(seed, "eval-env"), cfg.maze, cfg.combat)
    returns, resources, logs = [], [], []
    wasted = 0
    hist: dict[int, int] = {}
    for ep in range(episodes):
        obs = env.reset(seed=derive_seed(seed, "eval", ep))
        carry = Carry.fresh(1)
        ret, used, done = 0.0, 0, False
        ep_log = []
        while not done:
            res = agent.act(obs[None], "greedy", None, carry)
            a = res.actions[0]
            obs, r, done, info = env.step(a)
            ret += r
            used += int(bool(info.get("resource_used")))
            wasted += int(bool(info.get("wasted_resource")))
            code = int(res.codes[0])
            if code >= 0:
                hist[code] = hist.get(code, 0) + 1
            if keep_logs:
                ep_log.append({**env.log_record(), "action": a.to_dict(), "reward": r, "code": code,
                               "events": {k: v for k, v in info.items() if isinstance(v, bool) and v}})
        returns.append(ret)
        resources.append(used)
        if keep_logs:
            logs.append(ep_log)
    arr = np.asarray(returns)
    return EvalSummary(float(arr.mean()), float(arr.std()), returns, resources, wasted, hist, logs)


# ----------------------------------------------------------- checkpoints ---

def save_checkpoint(path: Path, agent, cfg: RunConfig, opt_policy, opt_aux, extra: dict | None = None) -> Path:
    payload = {
        "format": CKPT_FORMAT, "version": CKPT_VERSION,
        "config": cfg.to_dict(), "config_hash": cfg.config_hash(), "env_hash": cfg.env_hash(),
        "agent": agent.state_dict(),
        "optim_policy": opt_policy.state_dict() if opt_policy is not None else None,
        "optim_aux": opt_aux.state_dict() if opt_aux is not None else None,
        **(extra or {}),
    }
    tmp = Path(str(path) + ".tmp")
    torch.save(payload, tmp)
    tmp.replace(path)
    return path


def load_checkpoint(path: str | Path):
    """Return (agent, config, payload) from a checkpoint archive."""
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("format") != CKPT_FORMAT:
        raise CheckpointMismatch(f"{path} is not a {CKPT_FORMAT} archive")
    if payload.get("version") != CKPT_VERSION:
        raise CheckpointMismatch(f"unsupported checkpoint version {payload.get('version')}")
    d = payload["config"]
    cfg = RunConfig(**{**d, "seeds": tuple(d["seeds"])})
    agent = build_agent(cfg)
    agent.load_state_dict(payload["agent"])
    return agent, cfg, payload


def evaluate(checkpoint: str | Path, env: str | None = None, episodes: int = 20, seed: int = 0,
             maze: str | None = None, combat: dict | None = None, keep_logs: bool = True) -> EvalSummary:
    """Greedy evaluation of a checkpoint; rejects environments it was not trained on."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    agent, cfg, payload = load_checkpoint(checkpoint)
    target = cfg.replace(env=env or cfg.env, maze=maze or cfg.maze,
                         combat=combat if combat is not None else cfg.combat)
    if target.env_hash() != payload["env_hash"]:
        raise CheckpointMismatch(
            f"checkpoint was trained on env hash {payload['env_hash']}, got {target.env_hash()} "
            f"({target.env}/{target.maze if target.env == 'maze' else 'combat'})")
    return run_episodes(agent, target, episodes, seed, keep_logs)


# -------------------------------------------------------------- training ---

@dataclass
class TrainResult:
    out_dir: Path
    final_checkpoint: Path
    metrics_path: Path
    records: list[dict]
    final_eval: EvalSummary | None
    agent: object = None


def _clean(v):
    if v is None:
        return None
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else None
    if isinstance(v, (np.integer,)):
        return int(v)
    return v


def run_dir(cfg: RunConfig) -> Path:
    if cfg.out_dir:
        return Path(cfg.out_dir)
    return Path(default_out_root()) / f"{cfg.env}-{cfg.variant}-seed{cfg.seed}"


def train(cfg: RunConfig, out_dir: str | Path | None = None, progress: bool = False) -> TrainResult:
    """Train one (config, seed) run and write its artifacts to ``out_dir``.

    Artifacts: ``config.txt``, ``metrics.jsonl`` (+ ``metrics.csv``),
    ``timing.jsonl``, ``init.pt``, ``final.pt`` and, on abort,
    ``abort.json``.
    """
    torch.set_num_threads(1)
    out = Path(out_dir) if out_dir is not None else run_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.to_text())
    agent = build_agent(cfg)
    opt_policy = torch.optim.Adam(agent.policy_parameters(), lr=cfg.lr, eps=1e-5)
    aux = agent.aux_parameters()
    opt_aux = torch.optim.Adam(aux, lr=cfg.repr_lr) if aux else None
    gen = torch.Generator().manual_seed(derive_seed(cfg.seed, "update"))
    aux_rng = np.random.default_rng(derive_seed(cfg.seed, "reinit"))

    metrics_path = out / "metrics.jsonl"
    timing_path = out / "timing.jsonl"
    metrics_path.write_text("")
    timing_path.write_text("")
    save_checkpoint(out / "init.pt", agent, cfg, opt_policy, opt_aux, {"update": 0, "step": 0})

    records: list[dict] = []
    pool = RolloutPool(cfg) if cfg.num_updates > 0 else None
    T = cfg.steps_per_env
    step = 0
    last_eval = None
    t0 = time.perf_counter()
    try:
        for update in range(1, cfg.num_updates + 1):
            data = pool.collect(agent, T)
            step += T * cfg.n_envs
            batch = to_batch(data, cfg)
            rollout = {"obs": batch.obs, "actions": batch.actions}
            rstats = agent.aux_update(data["anchors"], data["windows"], rollout, opt_aux, gen, aux_rng)
            if cfg.schedule == "pretrain" and update <= cfg.pretrain_updates:
                pstats = {}
            else:
                pstats = ppo_update(agent, batch, opt_policy, cfg.ppo_config(), gen)
            rec = {k: None for k in METRIC_FIELDS}
            rec.update({k: _clean(v) for k, v in rstats.items() if k in METRIC_FIELDS})
            rec.update({k: _clean(v) for k, v in pstats.items()})
            eps = data["episodes"]
            rec.update(update=update, step=step, episodes=len(eps),
                       train_return_mean=_clean(np.mean([e[0] for e in eps])) if eps else None)
            if update % cfg.eval_every == 0 or update == cfg.num_updates:
                last_eval = run_episodes(agent, cfg, cfg.eval_episodes, derive_seed(cfg.seed, "eval-seed"))
                rec["eval_return_mean"] = last_eval.mean_return
                rec["eval_return_std"] = last_eval.std_return
            records.append(rec)
            with open(metrics_path, "a") as fh:
                fh.write(json.dumps(rec) + "\n")
            with open(timing_path, "a") as fh:
                fh.write(json.dumps({"update": update, "wall_clock": time.perf_counter() - t0}) + "\n")
            if progress:
                log.info("update %d/%d step %d eval %s train %s", update, cfg.num_updates, step,
                         rec["eval_return_mean"], rec["train_return_mean"])
    except NonFiniteLoss as exc:
        save_checkpoint(out / "abort.pt", agent, cfg, opt_policy, opt_aux, {"step": step})
        (out / "abort.json").write_text(json.dumps({"reason": str(exc), "step": step,
                                                    "diagnostics": exc.diagnostics}, indent=2))
        raise TrainingAbort(f"non-finite loss at step {step}: {exc.diagnostics}") from exc
    except OSError as exc:
        raise TrainingAbort(f"I/O failure at step {step}: {exc}") from exc
    finally:
        if pool is not None:
            pool.close()
    final = save_checkpoint(out / "final.pt", agent, cfg, opt_policy, opt_aux,
                            {"step": step, "update": len(records),
                             "rng": {"update": gen.get_state(), "reinit": aux_rng.bit_generator.state}})
    write_metrics_csv(records, out / "metrics.csv")
    return TrainResult(out, final, metrics_path, records, last_eval, agent)


def read_metrics(path: str | Path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_metrics_csv(records: list[dict], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(METRIC_FIELDS))
        w.writeheader()
        for r in records:
            w.writerow({k: ("" if r.get(k) is None else r.get(k)) for k in METRIC_FIELDS})
