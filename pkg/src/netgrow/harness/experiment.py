"""The growth experiment driver and its CSV log."""

from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import astuple, dataclass, fields, replace
from pathlib import Path

import numpy as np

from .. import growth as gr
from ..net_core import Network, forward, macs_count, mlp, param_count, per_sample_loss, sgd_step
from .checkpoint import save_checkpoint
from .config import ExperimentConfig
from .data import Dataset, make_dataset

EVAL_SAMPLES = 512
LINE_SEARCH_SAMPLES = 1000


@dataclass
class RunLogRecord:
    run_id: str
    wall_step: int
    epoch: int
    event: str
    layer: int
    neurons_added: int
    gamma: float
    params: int
    macs: int
    train_loss: float
    train_acc: float
    test_loss: float
    test_acc: float
    psi_per_growable: str
    lambda_sum_sq: float


COLUMNS = [f.name for f in fields(RunLogRecord)]


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def records_to_csv(records: list[RunLogRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for rec in records:
        w.writerow([_fmt(v) for v in astuple(rec)])
    return buf.getvalue()


def read_log(path) -> list[RunLogRecord]:
    """Parse a CSV log back into records."""
    types = {f.name: f.type for f in fields(RunLogRecord)}
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != COLUMNS:
            raise ValueError(f"unexpected header {reader.fieldnames}")
        for row in reader:
            kw = {}
            for name, raw in row.items():
                t = types[name]
                kw[name] = int(raw) if t == "int" else float(raw) if t == "float" else raw
            out.append(RunLogRecord(**kw))
    return out


@dataclass
class RunResult:
    run_id: str
    records: list[RunLogRecord]
    network: Network
    csv_path: Path | None
    checkpoint_path: Path | None


def _metrics(net: Network, X, Y, loss: str, task: str) -> tuple[float, float]:
    out = forward(net, X)
    value = float(np.mean(per_sample_loss(out, Y, loss)))
    if task != "classification":
        return value, math.nan
    acc = float(np.mean(np.argmax(out, axis=0) == np.argmax(Y, axis=0)))
    return value, acc


class _Run:
    def __init__(self, cfg: ExperimentConfig, seed: int, data: Dataset):
        self.cfg = cfg
        self.seed = seed
        self.data = data
        self.rng = np.random.default_rng(seed)
        self.run_id = f"{cfg.name}-s{seed}"
        widths = [data.X_train.shape[0], *cfg.hidden, data.Y_train.shape[0]]
        output = "softmax" if data.loss == "cross_entropy" else "identity"
        self.net = mlp(widths, cfg.activation, output, self.rng, cfg.init_scale)
        self.positions = list(cfg.positions) if cfg.positions is not None else self.net.growable_positions
        self.records: list[RunLogRecord] = []
        self.step = 0
        self.epoch = 0
        self.batch = min(cfg.batch_size, data.n_train)
        self.additions = 0

    # ---------------------------------------------------------------- logging
    def _psi(self) -> str:
        n = min(EVAL_SAMPLES, self.data.n_train)
        X, Y = self.data.X_train[:, :n], self.data.Y_train[:, :n]
        vals = [gr.psi_at(self.net, X, Y, p, self.data.loss) for p in self.net.growable_positions]
        return ";".join(repr(float(v)) for v in vals)

    def log(self, event: str, layer: int = -1, added: int = 0, gamma: float = 0.0, lam: float = 0.0):
        d = self.data
        tr = _metrics(self.net, d.X_train, d.Y_train, d.loss, d.task)
        te = _metrics(self.net, d.X_test, d.Y_test, d.loss, d.task)
        self.records.append(RunLogRecord(
            self.run_id, self.step, self.epoch, event, layer, added, float(gamma),
            param_count(self.net), macs_count(self.net), tr[0], tr[1], te[0], te[1],
            self._psi(), float(lam)))
        self.step += 1
        return tr[0]

    # --------------------------------------------------------------- training
    def train(self, epochs: int) -> None:
        d = self.data
        for _ in range(epochs):
            perm = self.rng.permutation(d.n_train)
            for start in range(0, d.n_train, self.batch):
                idx = perm[start:start + self.batch]
                self.net, _ = sgd_step(self.net, d.X_train[:, idx], d.Y_train[:, idx], self.cfg.lr, d.loss)
            self.epoch += 1

    # ----------------------------------------------------------------- growth
    def _batches(self, position: int):
        d = self.data
        producer = self.net.weighted(position + 1)
        n_est = gr.estimation_batch_size(1, producer.in_features + 1, 1, self.cfg.estimation_coeff,
                                         dataset_size=d.n_train)
        perm = self.rng.permutation(d.n_train)
        est = perm[:n_est]
        rest = perm[n_est:n_est + LINE_SEARCH_SAMPLES]
        # tiny datasets cannot spare a disjoint line-search batch
        ls = rest if rest.size >= 8 else perm[:LINE_SEARCH_SAMPLES]
        return (d.X_train[:, est], d.Y_train[:, est]), (d.X_train[:, ls], d.Y_train[:, ls])

    def _room(self, position: int) -> int:
        if self.cfg.target_widths is None:
            return self.cfg.neurons_per_addition
        return max(0, self.cfg.target_widths[position] - self.net.width(position))

    def _propose(self, position: int, est, K: int):
        cfg, loss = self.cfg, self.data.loss
        if cfg.grower in ("tiny", "completed_tiny"):
            p = gr.propose_tiny(self.net, *est, position, loss)
            k = min(gr.select_neurons(p.lambdas), K)
            if k > 0:
                return p.truncated(k)
            if cfg.grower == "tiny":
                # no neuron left to add, the best update alone may still help
                return p.truncated(0) if p.gains[1] > 0 else None
        elif cfg.grower == "gradmax":
            p = gr.propose_gradmax(self.net, *est, position, loss, K)
            return p if not p.empty else None
        return gr.random_for_position(self.net, position, K, cfg.random_distribution, self.rng)

    def grow_once(self, position: int) -> bool:
        K = min(self._room(position), self.cfg.neurons_per_addition)
        if K <= 0:
            return False
        est, ls = self._batches(position)
        p = self._propose(position, est, K)
        if p is None:
            return False
        p = gr.normalize_proposal(p, self.cfg.normalization)
        if p.kind == "gradmax" or not self.cfg.line_search:
            gamma = 1.0
        else:
            gamma = gr.amplitude_factor(self.net, p, *ls, self.data.loss, self.cfg.bound,
                                        self.cfg.interval, self.cfg.amplitude)
            if gamma == 0.0:
                return False
        macs_before = macs_count(self.net)
        self.net = gr.apply_proposal(self.net, p, gamma, self.cfg.amplitude)
        self.batch = min(self.data.n_train,
                         gr.learning_batch_size(self.batch, macs_before, macs_count(self.net)))
        lam = float(np.sum(p.lambdas ** 2))
        self.log("grow", position, p.count, gamma, lam)
        self.additions += 1
        return True

    def done(self) -> bool:
        cfg = self.cfg
        if self.additions >= cfg.max_additions:
            return True
        if self.records and self.records[-1].train_loss < cfg.target_train_loss:
            return True
        return all(self._room(p) == 0 for p in self.positions)

    def run(self) -> None:
        self.log("train")
        if self.cfg.initial_epochs:
            self.train(self.cfg.initial_epochs)
            self.log("train")
        while not self.done():
            grew = False
            for p in self.positions:
                if self.done():
                    break
                if self.grow_once(p):
                    grew = True
                    self.train(self.cfg.delta_t)
                    self.log("train")
            if not grew:
                break


def run_growth_experiment(cfg: ExperimentConfig, seed: int | None = None, out: str | Path | None = None,
                          write: bool = True) -> RunResult:
    """Run one seeded growth experiment; writes ``<run_id>.csv`` and ``<run_id>.ckpt``."""
    seed = cfg.seed if seed is None else seed
    data = make_dataset(cfg.data_kind, dict(cfg.data_params))
    run = _Run(cfg, seed, data)
    csv_path = ckpt_path = None
    out_dir = Path(out if out is not None else cfg.out)
    try:
        run.run()
    finally:
        if write:
            out_dir.mkdir(parents=True, exist_ok=True)
            csv_path = out_dir / f"{run.run_id}.csv"
            csv_path.write_text(records_to_csv(run.records))
    if write:
        ckpt_path = out_dir / f"{run.run_id}.ckpt"
        save_checkpoint(run.net, ckpt_path)
    return RunResult(run.run_id, run.records, run.net, csv_path, ckpt_path)


def _run_job(args) -> tuple[str, str | None]:
    cfg, seed, out = args
    res = run_growth_experiment(cfg, seed, out)
    return res.run_id, str(res.csv_path) if res.csv_path else None


def max_workers() -> int:
    try:
        return max(1, int(os.environ.get("GROW_WORKERS", "1")))
    except ValueError:
        return 1


def run_many(cfg: ExperimentConfig, seeds: list[int], out: str | Path | None = None) -> list[tuple[str, str | None]]:
    """Independent runs for several seeds, at most ``GROW_WORKERS`` at a time."""
    jobs = [(replace(cfg), s, out) for s in seeds]
    workers = min(max_workers(), len(jobs))
    if workers <= 1:
        return [_run_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_job, jobs))
