"""Cross-learning training loop, checkpointing, and pool construction.

One model trains on batches drawn by the stratified sampler across all series'
training regions; the loss is computed on denormalized forecasts against raw
targets. A pool is a set of members that differ only in their derived seeds
(initialization + batch order), trained independently so they can run in
parallel and be rebuilt reproducibly from the master seed.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .data import DatasetError, SplitSpec, StratifiedSampler, make_windows, split
from .loss import combined_loss_graph
from .model import ModelConfig, config_hash, forward_graph, init_params
from .nn import AdamState, GradientTape, adam_step, backward

CHECKPOINT_FORMAT = "loadcast-checkpoint"
MANIFEST_FORMAT = "loadcast-pool"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class TrainSchedule:
    """Optimization budget and pool sizing; the seed drives every member."""

    epochs: int = 20
    batches_per_epoch: int = 100
    batch_size: int = 256
    lr: float = 0.001
    pool_size: int = 16
    seed: int = 0

    def __post_init__(self):
        for name in ("epochs", "batches_per_epoch", "batch_size", "pool_size"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.lr <= 0.0:
            raise ValueError("lr must be positive")


@dataclass
class TrainedMember:
    """One trained model: seed, loss history, and a checkpoint (file or in-memory)."""

    seed: int
    config_hash: str
    final_loss: float
    first_batch_loss: float
    loss_trace: list
    checkpoint_path: str | None = None
    params: dict | None = None

    def load_params(self) -> dict:
        if self.params is not None:
            return self.params
        if self.checkpoint_path is None:
            raise ValueError("member has neither in-memory parameters nor a checkpoint path")
        params, _ = load_checkpoint(self.checkpoint_path)
        return params


def save_checkpoint(path, params: dict, config: ModelConfig, seed: int) -> None:
    """Write parameters plus JSON metadata (config, hash, seed) into one .npz."""
    meta = {
        "format": CHECKPOINT_FORMAT,
        "version": FORMAT_VERSION,
        "config": config.to_dict(),
        "config_hash": config_hash(config),
        "seed": int(seed),
    }
    arrays = {f"param::{name}": arr for name, arr in params.items()}
    arrays["meta"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path):
    """Read a checkpoint; returns (params dict, metadata dict)."""
    with np.load(path) as npz:
        if "meta" not in npz.files:
            raise ValueError(f"{path}: not a checkpoint (missing metadata)")
        meta = json.loads(bytes(npz["meta"]).decode())
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"{path}: unexpected checkpoint format {meta.get('format')!r}")
        params = {
            name[len("param::") :]: np.array(npz[name])
            for name in npz.files
            if name.startswith("param::")
        }
    return params, meta


def _loss_uses_row_variance(config: ModelConfig) -> bool:
    lc = config.loss_config()
    return not lc.no_l2 and lc.nmse_weight > 0.0 and not lc.no_var


def _guard_target_variance(window_groups, config: ModelConfig) -> None:
    # Constant targets break the variance normalization; surface them here,
    # at window-construction time, instead of mid-training.
    if not _loss_uses_row_variance(config):
        return
    for group in window_groups:
        for window in group:
            if np.ptp(window.y) == 0.0:
                raise DatasetError(
                    f"series '{window.series_id}': training window at anchor {window.anchor} "
                    "has a constant target; variance-normalized loss is undefined"
                )


def train_one(
    series_list,
    config: ModelConfig,
    schedule: TrainSchedule,
    member_seed: int,
    *,
    split_spec: SplitSpec | None = None,
    checkpoint_path=None,
) -> TrainedMember:
    """Train a single model; fully reproducible from (config, schedule, member_seed)."""
    split_spec = split_spec or SplitSpec()
    groups = [
        make_windows(s, split(s, split_spec).train, config.lookback, config.horizon)
        for s in series_list
    ]
    if not any(groups):
        raise DatasetError("datasets yield no training windows")
    _guard_target_variance(groups, config)

    init_ss, sampler_ss = np.random.SeedSequence(member_seed).spawn(2)
    params = init_params(config, np.random.default_rng(init_ss))
    sampler = StratifiedSampler(groups, sampler_ss)
    state = AdamState(lr=schedule.lr)
    loss_config = config.loss_config()

    # One gather per batch instead of restacking window objects; the sampler's
    # group order (empties dropped) dictates the layout.
    nonempty = [g for g in groups if g]
    group_ids = [g[0].series_id for g in nonempty]
    all_x = np.concatenate([np.stack([w.x for w in g]) for g in nonempty])
    all_y = np.concatenate([np.stack([w.y for w in g]) for g in nonempty])
    offsets = np.concatenate([[0], np.cumsum([len(g) for g in nonempty])[:-1]])

    trace = []
    first_batch_loss = None
    for epoch in range(schedule.epochs):
        sums = {"loss": 0.0, "pmape": 0.0, "nmse_term": 0.0}
        for step in range(schedule.batches_per_epoch):
            sidx, widx = sampler.draw_batch_indices(schedule.batch_size)
            rows = offsets[sidx] + widx
            x = all_x[rows]
            y = all_y[rows]
            tape = GradientTape()
            y_hat, _ = forward_graph(tape, params, x, config)
            loss_node, components = combined_loss_graph(y, y_hat, loss_config)
            loss_value = float(loss_node.data)
            if not np.isfinite(loss_value):
                bad_rows = ~np.all(np.isfinite(y_hat.data), axis=1)
                bad = sorted({group_ids[s] for s in sidx[bad_rows]})
                raise FloatingPointError(
                    f"non-finite loss at epoch {epoch + 1}, batch {step + 1}"
                    + (f"; offending series: {', '.join(bad)}" if bad else "")
                )
            grads = backward(tape, loss_node)
            adam_step(params, grads, state)
            if first_batch_loss is None:
                first_batch_loss = loss_value
            sums["loss"] += loss_value
            sums["pmape"] += components["pmape"]
            sums["nmse_term"] += components["nmse_term"]
        k = schedule.batches_per_epoch
        trace.append({"epoch": epoch + 1, **{key: val / k for key, val in sums.items()}})

    member = TrainedMember(
        seed=int(member_seed),
        config_hash=config_hash(config),
        final_loss=trace[-1]["loss"],
        first_batch_loss=float(first_batch_loss),
        loss_trace=trace,
        params=params,
    )
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, params, config, member_seed)
        member.checkpoint_path = str(checkpoint_path)
        member.params = None
    return member


# ---------------------------------------------------------------------------
# Pools
# ---------------------------------------------------------------------------

@dataclass
class Pool:
    """A set of independently trained members sharing one config and schedule."""

    config: ModelConfig
    schedule: TrainSchedule
    split: SplitSpec
    members: list[TrainedMember]

    @property
    def config_hash(self) -> str:
        return config_hash(self.config)


def member_seeds(master_seed: int, pool_size: int) -> list[int]:
    """Derive well-mixed, reproducible per-member seeds from the master seed."""
    state = np.random.SeedSequence(master_seed).generate_state(pool_size, dtype=np.uint64)
    return [int(s) for s in state]


def _member_filename(index: int) -> str:
    return f"member_{index:04d}.npz"


def _train_pool_member(args):
    series_list, config, schedule, split_spec, seed, path = args
    return train_one(
        series_list, config, schedule, seed, split_spec=split_spec, checkpoint_path=path
    )


def pool_manifest(pool: Pool, extra: dict | None = None) -> dict:
    """Deterministic manifest document (no timestamps)."""
    doc = {
        "format": MANIFEST_FORMAT,
        "version": FORMAT_VERSION,
        "config_hash": pool.config_hash,
        "master_seed": pool.schedule.seed,
        "config": pool.config.to_dict(),
        "schedule": asdict(pool.schedule),
        "split": asdict(pool.split),
        "members": [
            {
                "index": i,
                "seed": m.seed,
                "checkpoint": Path(m.checkpoint_path).name if m.checkpoint_path else None,
                "final_loss": m.final_loss,
            }
            for i, m in enumerate(pool.members)
            if m is not None
        ],
    }
    if extra:
        doc["run"] = extra
    return doc


def write_manifest(pool: Pool, path, extra: dict | None = None) -> dict:
    doc = pool_manifest(pool, extra)
    doc["created_at"] = datetime.now(timezone.utc).isoformat()
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return doc


def load_pool(manifest_path) -> Pool:
    """Reconstruct a pool from its manifest; member parameters load lazily."""
    manifest_path = Path(manifest_path)
    with open(manifest_path) as fh:
        doc = json.load(fh)
    if doc.get("format") != MANIFEST_FORMAT:
        raise ValueError(f"{manifest_path}: not a pool manifest")
    config = ModelConfig.from_dict(doc["config"])
    if config_hash(config) != doc["config_hash"]:
        raise ValueError(f"{manifest_path}: config hash mismatch; manifest is corrupt")
    schedule = TrainSchedule(**doc["schedule"])
    split_spec = SplitSpec(**doc["split"])
    members = []
    for entry in doc["members"]:
        checkpoint = entry.get("checkpoint")
        members.append(
            TrainedMember(
                seed=entry["seed"],
                config_hash=doc["config_hash"],
                final_loss=entry.get("final_loss", float("nan")),
                first_batch_loss=float("nan"),
                loss_trace=[],
                checkpoint_path=str(manifest_path.parent / checkpoint) if checkpoint else None,
            )
        )
    return Pool(config=config, schedule=schedule, split=split_spec, members=members)


def build_pool(
    series_list,
    config: ModelConfig,
    schedule: TrainSchedule,
    *,
    split_spec: SplitSpec | None = None,
    out_dir=None,
    workers: int = 1,
    resume: bool = True,
    extra_manifest: dict | None = None,
) -> Pool:
    """Train ``schedule.pool_size`` members; resumes from existing checkpoints.

    With ``out_dir`` set, each member is persisted as ``member_NNNN.npz`` and a
    manifest is (re)written as members complete, so an interrupted build can be
    resumed. ``workers > 1`` trains members in separate processes; results are
    identical to a sequential build because each member is seed-deterministic.
    """
    split_spec = split_spec or SplitSpec()
    seeds = member_seeds(schedule.seed, schedule.pool_size)
    expected_hash = config_hash(config)
    out_path = None
    if out_dir is not None:
        out_path = Path(out_dir)
        out_path.mkdir(parents=True, exist_ok=True)

    members: list[TrainedMember | None] = [None] * schedule.pool_size
    if out_path is not None and resume:
        prior_losses = {}
        manifest_file = out_path / "manifest.json"
        if manifest_file.exists():
            try:
                prior = json.loads(manifest_file.read_text())
                if prior.get("config_hash") == expected_hash:
                    prior_losses = {e["index"]: e.get("final_loss") for e in prior.get("members", [])}
            except (json.JSONDecodeError, KeyError, TypeError):
                prior_losses = {}
        for i, seed in enumerate(seeds):
            ckpt = out_path / _member_filename(i)
            if not ckpt.exists():
                continue
            try:
                _, meta = load_checkpoint(ckpt)
            except (ValueError, OSError, json.JSONDecodeError):
                continue
            if meta.get("config_hash") == expected_hash and meta.get("seed") == seed:
                members[i] = TrainedMember(
                    seed=seed,
                    config_hash=expected_hash,
                    final_loss=prior_losses.get(i, float("nan")),
                    first_batch_loss=float("nan"),
                    loss_trace=[],
                    checkpoint_path=str(ckpt),
                )

    pending = [i for i in range(schedule.pool_size) if members[i] is None]
    jobs = [
        (
            series_list,
            config,
            schedule,
            split_spec,
            seeds[i],
            str(out_path / _member_filename(i)) if out_path else None,
        )
        for i in pending
    ]

    def _flush():
        if out_path is not None:
            partial = Pool(config, schedule, split_spec, list(members))
            write_manifest(partial, out_path / "manifest.json", extra=extra_manifest)

    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool_exec:
            for i, member in zip(pending, pool_exec.map(_train_pool_member, jobs)):
                members[i] = member
                _flush()
    else:
        for i, job in zip(pending, jobs):
            members[i] = _train_pool_member(job)
            _flush()

    pool = Pool(config=config, schedule=schedule, split=split_spec, members=list(members))
    if out_path is not None:
        write_manifest(pool, out_path / "manifest.json", extra=extra_manifest)
    return pool
