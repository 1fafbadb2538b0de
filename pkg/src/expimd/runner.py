"""Run orchestration: phases, segment writing, checkpoints, restart.

Segment files are flushed when the in-memory buffer reaches the configured
size, when a checkpoint is written and at phase boundaries. Checkpoints land
on chunk boundaries, and the chunk partitioning is a pure function of the
global step index; a restarted run therefore consumes the random stream
exactly as the uninterrupted run would and produces byte-identical segments.
"""

from __future__ import annotations

import dataclasses
import pathlib

import numpy as np

from . import __version__
from .analysis import analyze_run
from .config import RunConfig
from .errors import ConfigError
from .model import BeadConfiguration
from .sampler import SampleBatch, Trajectory
from .storage import (SampleColumns, load_checkpoint, save_checkpoint,
                      write_segment)

__all__ = ["execute_run", "RunWriter"]


class RunWriter:
    """Buffers sample batches and writes numbered segment files."""

    def __init__(self, out_dir, cfg: RunConfig, seed, start_index=0,
                 samples_written=None):
        self.out_dir = pathlib.Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.cfg = cfg
        self.seed = seed
        est = cfg.values["estimators"]
        self.segment_samples = est["segment_samples"]
        self.snapshot_every = max(est["snapshot_every"], 1)
        self.index = start_index
        # per-phase emitted-sample counters (drive snapshot thinning)
        self.samples_written = dict(samples_written or {})
        self._reset("sample")

    def _reset(self, phase):
        self.phase = phase
        self._cols = []
        self._snaps = []
        self._snap_steps = []
        self._mom = []
        self._buffered = 0

    def add(self, batch: SampleBatch):
        if batch.phase != self.phase:
            self.flush()
            self._reset(batch.phase)
        n = len(batch)
        if n == 0:
            return
        base = self.samples_written.get(batch.phase, 0)
        keep = (base + np.arange(n)) % self.snapshot_every == 0
        self.samples_written[batch.phase] = base + n
        self._cols.append(batch.columns)
        if np.any(keep):
            self._snaps.append(batch.snapshots[keep])
            self._snap_steps.append(batch.columns.step[keep])
            if batch.momenta is not None:
                self._mom.append(batch.momenta[keep])
        self._buffered += n
        if self._buffered >= self.segment_samples:
            self.flush()

    def flush(self):
        if self._buffered == 0:
            return
        cols = SampleColumns.concatenate(self._cols)
        snaps = np.concatenate(self._snaps) if self._snaps else None
        snap_steps = np.concatenate(self._snap_steps) if self._snaps else None
        mom = np.concatenate(self._mom) if self._mom else None
        header = {
            "config": self.cfg.canonical_text,
            "config_hash": self.cfg.hash,
            "version": __version__,
            "seed": self.seed,
            "phase": self.phase,
            "segment_index": self.index,
        }
        path = self.out_dir / f"samples_{self.index:05d}.npz"
        write_segment(path, cols, header=header, snapshots=snaps,
                      snapshot_steps=snap_steps, momenta=mom)
        if self.cfg.values["output"]["text_samples"]:
            self._write_text(path.with_suffix(".txt"), cols, header)
        self.index += 1
        phase = self.phase
        self._reset(phase)

    def _write_text(self, path, cols, header):
        with open(path, "w") as fh:
            fh.write(f"# expimd samples config_hash={header['config_hash']} "
                     f"seed={header['seed']} phase={header['phase']}\n")
            fh.write("# step s pot spring_oo vir_oo vir_o bias\n")
            for i in range(len(cols)):
                fh.write(f"{cols.step[i]} {cols.s[i]!r} {cols.pot[i]!r} "
                         f"{cols.spring_oo[i]!r} {cols.vir_oo[i]!r} "
                         f"{cols.vir_o[i]!r} {cols.bias[i]!r}\n")


def _phase_of(step, build_steps):
    return "build" if step < build_steps else "sample"


def execute_run(cfg: RunConfig, out_dir, restart_from=None, seed=None):
    """Run the configured trajectory to completion; returns the summary.

    restart_from is a checkpoint path; the run continues to the configured
    total number of steps, appending new segments after the existing ones.
    """
    out_dir = pathlib.Path(out_dir)
    system = cfg.system_spec()
    integ = cfg.integrator_spec()
    if seed is not None:
        integ = dataclasses.replace(integ, seed=seed)
    meta_cfg = cfg.values["metadynamics"]
    build_steps = meta_cfg["build_steps"] if meta_cfg["enabled"] else 0
    total_steps = build_steps + integ.n_steps
    checkpoint_every = cfg.values["sampler"]["checkpoint_every"]
    ckpt_path = out_dir / "checkpoint.npz"

    if restart_from is not None:
        state = load_checkpoint(restart_from)
        if state["meta"].get("config_hash") != cfg.hash:
            raise ConfigError("checkpoint was written by a different config")
        rng = np.random.default_rng()
        rng.bit_generator.state = state["rng_state"]
        bias = state["bias"]
        traj = Trajectory(system, integ,
                          init=BeadConfiguration(state["positions"],
                                                 state["momenta"]),
                          bias=bias, rng=rng)
        traj.step = state["step"]
        writer = RunWriter(out_dir, cfg, integ.seed,
                           start_index=state["meta"]["segment_index"],
                           samples_written=state["meta"]["samples_written"])
    else:
        bias = cfg.bias_state()
        traj = Trajectory(system, integ, bias=bias)
        writer = RunWriter(out_dir, cfg, integ.seed)

    def checkpoint():
        writer.flush()
        save_checkpoint(
            ckpt_path,
            positions=traj.positions, momenta=traj.momenta, step=traj.step,
            rng_state=traj.rng.bit_generator.state,
            meta={
                "config_hash": cfg.hash,
                "version": __version__,
                "seed": integ.seed,
                "segment_index": writer.index,
                "samples_written": writer.samples_written,
            },
            bias=traj.bias,
        )

    next_checkpoint = None
    if checkpoint_every:
        k = traj.step // checkpoint_every + 1
        next_checkpoint = k * checkpoint_every

    while traj.step < total_steps:
        phase = _phase_of(traj.step, build_steps)
        phase_end = build_steps if phase == "build" else total_steps
        target = phase_end
        if next_checkpoint is not None:
            target = min(target, next_checkpoint)
        for batch in traj.run(target - traj.step, phase=phase):
            writer.add(batch)
        if phase == "build" and traj.step >= build_steps and traj.bias is not None:
            traj.bias.freeze()
        if next_checkpoint is not None and traj.step >= next_checkpoint:
            checkpoint()
            next_checkpoint += checkpoint_every

    writer.flush()
    checkpoint()
    if traj.bias is not None:
        traj.bias.save_hills(out_dir / "hills.txt")
    return analyze_run([out_dir], out_dir=out_dir)
