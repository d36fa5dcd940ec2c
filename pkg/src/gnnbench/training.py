"""The epoch loop: minibatching, plateau scheduling, checkpoints, and
per-seed aggregation.

One ``fit`` call trains every seed in a run (optionally in parallel
threads), writes JSON-lines epoch logs plus a summary when given an output
directory, and reports divergence as a result rather than an exception.
All stochastic choices inside a seed's run (init, shuffling, positional
sign flips) derive from that seed, so (config, seed) pins every logged
number.
"""

from __future__ import annotations

import json
import pickle
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .errors import ConfigError, Diverged, ValidationError
from .graphs import batch_graphs
from .heads import TaskSpec
from .losses import cross_entropy, l1_loss, weighted_cross_entropy
from .metrics import accuracy, balanced_accuracy, f1_positive, mae, predict_classes
from .models import DENSE_KINDS, FeatureInfo, ModelSpec, build_model, count_params
from .optim import Adam, PlateauSchedule
from .spectral import PESpec, index_pe, laplacian_pe

# per-seed rng streams, all keyed off SeedSequence([seed, stream])
_INIT_STREAM = 0
_SHUFFLE_STREAM = 1
_SIGN_STREAM = 2

LOSSES = ("auto", "ce", "weighted_ce", "l1")


@dataclass(frozen=True)
class RunConfig:
    """Everything one training run needs besides the dataset itself."""

    model: ModelSpec
    seeds: tuple = (0, 1, 2, 3)
    lr: float = 1e-3
    lr_factor: float = 0.5
    patience: int = 10
    min_lr: float = 1e-5
    max_epochs: int = 500
    batch_size: int = 128
    virtual_batch: int = 4
    loss: str = "auto"
    pe: PESpec | None = None
    max_wallclock: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if len(self.seeds) < 1:
            raise ConfigError("need at least one seed")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("duplicate seeds")
        if self.lr <= 0 or self.min_lr <= 0:
            raise ConfigError("learning rates must be positive")
        if self.max_epochs < 0:
            raise ConfigError("max_epochs must be >= 0")
        if self.batch_size < 1 or self.virtual_batch < 1:
            raise ConfigError("batch sizes must be >= 1")
        if self.loss not in LOSSES:
            raise ConfigError(f"unknown loss {self.loss!r}, expected one of {LOSSES}")
        if (self.pe is None) != (self.model.pe_dim == 0):
            raise ConfigError("pe spec and model pe_dim must be given together")
        if self.pe is not None and self.pe.k != self.model.pe_dim:
            raise ConfigError("pe spec k must equal the model's pe_dim")
        if self.max_wallclock is not None and self.max_wallclock <= 0:
            raise ConfigError("max_wallclock must be positive")


@dataclass
class SeedResult:
    seed: int
    status: str  # "ok" or "diverged"
    n_params: int
    history: list = field(default_factory=list)
    test_metrics: dict = field(default_factory=dict)
    best_val_loss: float | None = None

    @property
    def epochs(self):
        return len(self.history)


@dataclass
class RunResult:
    seed_results: list
    summary: dict


def task_for(bundle, readout="mean"):
    """TaskSpec matching a dataset bundle."""
    if bundle.task == "graph_reg":
        return TaskSpec("graph_reg", readout=readout)
    if bundle.n_classes is None:
        raise ValidationError("classification bundle is missing n_classes")
    return TaskSpec(bundle.task, bundle.n_classes, readout)


def feature_info(bundle):
    """Infer the raw input description from the stored graphs."""
    if not bundle.graphs:
        raise ValidationError("empty bundle")
    g0 = bundle.graphs[0]
    if g0.node_feat is None:
        raise ValidationError("graphs have no node features")
    if g0.node_feat.dtype.kind in "iu":
        vocab = max(int(g.node_feat.max(initial=0)) for g in bundle.graphs) + 1
        node = {"node_vocab": vocab}
    else:
        node = {"node_dim": 1 if g0.node_feat.ndim == 1 else g0.node_feat.shape[1]}
    edge = {}
    if g0.edge_feat is not None:
        if g0.edge_feat.dtype.kind in "iu":
            edge = {"edge_vocab": max(int(g.edge_feat.max(initial=0)) for g in bundle.graphs) + 1}
        else:
            edge = {"edge_dim": 1 if g0.edge_feat.ndim == 1 else g0.edge_feat.shape[1]}
    return FeatureInfo(**node, **edge)


def _stream(seed, tag):
    return np.random.default_rng(np.random.SeedSequence([int(seed), tag]))


def _pick_loss(run, task):
    name = run.loss
    if name == "auto":
        name = {"graph_class": "ce", "graph_reg": "l1",
                "node_class": "weighted_ce", "edge_class": "weighted_ce"}[task]
    return {"ce": cross_entropy, "weighted_ce": weighted_cross_entropy, "l1": l1_loss}[name]


def _labels_for(graphs, idx, task):
    gs = [graphs[i] for i in idx]
    if task in ("graph_class", "graph_reg"):
        vals = [g.graph_label for g in gs]
        if any(v is None for v in vals):
            raise ValidationError("graph labels missing")
        return np.asarray(vals, dtype=np.float64 if task == "graph_reg" else np.int64)
    attr = "node_labels" if task == "node_class" else "edge_labels"
    parts = [getattr(g, attr) for g in gs]
    if any(p is None for p in parts):
        raise ValidationError(f"{attr} missing")
    return np.concatenate(parts)


def _graph_pe(g, spec, rng):
    if spec.kind == "laplacian":
        return laplacian_pe(g, spec, rng)
    return index_pe(g, spec, rng)


def _batch_inputs(graphs, idx, pe_spec, rng):
    gs = [graphs[i] for i in idx]
    g = gs[0] if len(gs) == 1 else batch_graphs(gs)
    pe = None
    if pe_spec is not None:
        pe = np.vstack([_graph_pe(gr, pe_spec, rng) for gr in gs])
    return g, pe


def _metrics_for(task, scores, labels):
    if task == "graph_reg":
        return {"mae": mae(scores.ravel(), labels)}
    pred = predict_classes(scores)
    out = {"accuracy": accuracy(pred, labels)}
    if task == "node_class":
        out["balanced_accuracy"] = balanced_accuracy(pred, labels)
    if task == "edge_class":
        out["f1_positive"] = f1_positive(pred, labels)
    return out


def _check_finite(value, what):
    if not np.isfinite(value):
        raise Diverged(f"non-finite {what}")
    return float(value)


def _evaluate(model, graphs, idx, run, task, loss_fn):
    """Loss and metrics over a split, eval mode, canonical signs."""
    is_dense = run.model.kind in DENSE_KINDS
    chunk = 1 if is_dense else run.batch_size
    pieces = []
    with T.no_grad():
        for lo in range(0, len(idx), chunk):
            part = idx[lo : lo + chunk]
            g, pe = _batch_inputs(graphs, part, run.pe, None)
            pieces.append(model(g, pe).data)
    scores = np.vstack(pieces)
    labels = _labels_for(graphs, idx, task)
    loss = loss_fn(T.as_tensor(scores), labels).item()
    return _check_finite(loss, "validation loss"), _metrics_for(task, scores, labels)


def _train_epoch(model, adam, graphs, order, run, task, loss_fn, sign_rng):
    """One pass over the shuffled training indices; returns (loss, metrics)
    computed from the training-mode forward passes themselves."""
    is_dense = run.model.kind in DENSE_KINDS
    collected, labels_seen = [], []
    total_loss, total_units = 0.0, 0

    if is_dense:
        # dense models cannot block-diagonal batch; accumulate gradients over
        # a virtual batch of single-graph passes (mean of per-graph losses)
        for lo in range(0, len(order), run.virtual_batch):
            part = order[lo : lo + run.virtual_batch]
            adam.zero_grad()
            for i in part:
                g, pe = _batch_inputs(graphs, [i], run.pe, sign_rng)
                labels = _labels_for(graphs, [i], task)
                with T.Tape() as tape:
                    scores = model(g, pe)
                    loss = T.scalar_mul(loss_fn(scores, labels), 1.0 / len(part))
                    tape.backward(loss)
                total_loss += _check_finite(loss.item(), "training loss") * len(part)
                total_units += 1
                collected.append(scores.data)
                labels_seen.append(labels)
            adam.step()
    else:
        for lo in range(0, len(order), run.batch_size):
            part = order[lo : lo + run.batch_size]
            g, pe = _batch_inputs(graphs, part, run.pe, sign_rng)
            labels = _labels_for(graphs, part, task)
            adam.zero_grad()
            with T.Tape() as tape:
                scores = model(g, pe)
                loss = loss_fn(scores, labels)
                tape.backward(loss)
            adam.step()
            total_loss += _check_finite(loss.item(), "training loss") * labels.shape[0]
            total_units += labels.shape[0]
            collected.append(scores.data)
            labels_seen.append(labels)

    scores = np.vstack(collected)
    labels = np.concatenate(labels_seen)
    return total_loss / max(total_units, 1), _metrics_for(task, scores, labels)


def _rng_state(rng):
    return rng.bit_generator.state


def _set_rng_state(rng, state):
    rng.bit_generator.state = state


def _run_seed(bundle, run, seed, split, seed_dir=None, resume=False):
    task = run.model.task.task
    loss_fn = _pick_loss(run, task)
    model = build_model(run.model, feature_info(bundle), _stream(seed, _INIT_STREAM))
    adam = Adam(model.parameters(), lr=run.lr)
    sched = PlateauSchedule(run.lr, factor=run.lr_factor,
                            patience=run.patience, min_lr=run.min_lr)
    shuffle_rng = _stream(seed, _SHUFFLE_STREAM)
    sign_rng = _stream(seed, _SIGN_STREAM) if run.pe is not None else None

    history = []
    start_epoch = 0
    stopped = False
    wall_used = 0.0

    ckpt_path = seed_dir / "checkpoint.pkl" if seed_dir else None
    if resume and ckpt_path is not None and ckpt_path.exists():
        with open(ckpt_path, "rb") as fh:
            ckpt = pickle.load(fh)
        model.load_state_dict(ckpt["model"])
        adam.load_state_dict(ckpt["adam"])
        sched.load_state_dict(ckpt["sched"])
        _set_rng_state(shuffle_rng, ckpt["shuffle_rng"])
        if sign_rng is not None and ckpt.get("sign_rng") is not None:
            _set_rng_state(sign_rng, ckpt["sign_rng"])
        history = ckpt["history"]
        start_epoch = ckpt["epoch"]
        stopped = ckpt["stopped"]
        wall_used = ckpt["wall_used"]

    result = SeedResult(seed=int(seed), status="ok", n_params=count_params(model),
                        history=history)
    if seed_dir is not None:
        seed_dir.mkdir(parents=True, exist_ok=True)
        _rewrite_log(seed_dir / "epochs.jsonl", history)

    graphs = bundle.graphs
    epoch = start_epoch
    try:
        while epoch < run.max_epochs and not stopped:
            if run.max_wallclock is not None and wall_used >= run.max_wallclock:
                break  # enforced between epochs, never mid-epoch
            tic = time.monotonic()
            order = shuffle_rng.permutation(split.train)
            train_loss, train_metrics = _train_epoch(
                model, adam, graphs, order, run, task, loss_fn, sign_rng)
            val_loss, val_metrics = _evaluate(model, graphs, split.val, run, task, loss_fn)
            lr_now = sched.lr
            new_lr, stopped = sched.step(val_loss)
            seconds = time.monotonic() - tic
            wall_used += seconds
            record = {
                "epoch": epoch,
                "lr": lr_now,
                "train_loss": train_loss,
                "val_loss": val_loss,
                "metrics": {"train": train_metrics, "val": val_metrics},
                "epoch_seconds": seconds,
            }
            history.append(record)
            epoch += 1
            if seed_dir is not None:
                _append_log(seed_dir / "epochs.jsonl", record)
                _write_checkpoint(ckpt_path, model, adam, sched, shuffle_rng,
                                  sign_rng, history, epoch, stopped, wall_used)
    except Diverged:
        result.status = "diverged"

    if result.status == "ok":
        try:
            _, result.test_metrics = _evaluate(model, graphs, split.test, run, task, loss_fn)
        except Diverged:
            result.status = "diverged"
    if history:
        vals = [r["val_loss"] for r in history]
        result.best_val_loss = float(min(vals))
    if seed_dir is not None:
        with open(seed_dir / "result.json", "w") as fh:
            json.dump({"seed": result.seed, "status": result.status,
                       "n_params": result.n_params, "epochs": result.epochs,
                       "best_val_loss": result.best_val_loss,
                       "test_metrics": result.test_metrics}, fh, sort_keys=True, indent=2)
            fh.write("\n")
    return result


def _rewrite_log(path, history):
    with open(path, "w") as fh:
        for record in history:
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def _append_log(path, record):
    with open(path, "a") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")


def _write_checkpoint(path, model, adam, sched, shuffle_rng, sign_rng,
                      history, epoch, stopped, wall_used):
    state = {
        "model": model.state_dict(),
        "adam": adam.state_dict(),
        "sched": sched.state_dict(),
        "shuffle_rng": _rng_state(shuffle_rng),
        "sign_rng": _rng_state(sign_rng) if sign_rng is not None else None,
        "history": history,
        "epoch": epoch,
        "stopped": stopped,
        "wall_used": wall_used,
    }
    tmp = path.with_suffix(".tmp")
    with open(tmp, "wb") as fh:
        pickle.dump(state, fh)
    tmp.replace(path)


def _mean_std(values):
    arr = np.asarray(values, dtype=np.float64)
    return {"mean": float(arr.mean()), "std": float(arr.std())}


def summarize(seed_results):
    """Mean plus/minus population std over the seeds that finished."""
    ok = [r for r in seed_results if r.status == "ok"]
    summary = {
        "status": "ok" if ok else "diverged",
        "n_seeds": len(seed_results),
        "n_diverged": len(seed_results) - len(ok),
        "seeds": [r.seed for r in seed_results],
        "n_params": seed_results[0].n_params,
    }
    if not ok:
        return summary
    summary["epochs"] = _mean_std([r.epochs for r in ok])
    if any(r.history for r in ok):
        with_history = [r for r in ok if r.history]
        summary["epoch_seconds"] = _mean_std(
            [float(np.mean([rec["epoch_seconds"] for rec in r.history])) for r in with_history])
        summary["best_val_loss"] = _mean_std([r.best_val_loss for r in with_history])
        train_names = sorted(with_history[0].history[-1]["metrics"]["train"])
        summary["train"] = {
            name: _mean_std([r.history[-1]["metrics"]["train"][name] for r in with_history])
            for name in train_names
        }
    test_names = sorted(ok[0].test_metrics)
    summary["test"] = {
        name: _mean_std([r.test_metrics[name] for r in ok]) for name in test_names
    }
    return summary


def fit(bundle, run, fold=0, out_dir=None, jobs=1, resume=False):
    """Train every seed of a run on one fold; returns per-seed results plus
    the aggregate summary (written to ``out_dir/summary.json`` when given)."""
    if not bundle.splits:
        raise ValidationError("bundle has no splits")
    if not 0 <= fold < len(bundle.splits):
        raise ValidationError(f"fold {fold} out of range (have {len(bundle.splits)})")
    if run.model.task.task != bundle.task:
        raise ConfigError(f"model task {run.model.task.task!r} does not match "
                          f"dataset task {bundle.task!r}")
    if bundle.task != "graph_reg" and run.model.task.n_classes != bundle.n_classes:
        raise ConfigError("model n_classes does not match the dataset")
    if jobs < 1:
        raise ConfigError("jobs must be >= 1")
    split = bundle.splits[fold]
    base = Path(out_dir) if out_dir is not None else None

    def one(seed):
        seed_dir = base / f"seed_{seed}" if base is not None else None
        return _run_seed(bundle, run, seed, split, seed_dir, resume)

    if jobs == 1 or len(run.seeds) == 1:
        results = [one(s) for s in run.seeds]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(one, run.seeds))

    summary = summarize(results)
    if base is not None:
        base.mkdir(parents=True, exist_ok=True)
        with open(base / "summary.json", "w") as fh:
            json.dump(summary, fh, sort_keys=True, indent=2)
            fh.write("\n")
    return RunResult(seed_results=results, summary=summary)
