"""Weighted statistical estimators over distinguishable-ensemble samples.

Boson/fermion expectation values are ratios <O W>_oo / <W>_oo with
W(s) = 1 +- e^{-beta s}, optionally multiplied by the static metadynamics
reweighting factor e^{+beta V(s)}. Both factors can reach e^{hundreds}, so
every sum is carried as sign * exp(log - K) with a per-accumulator offset K
("scaled domain"); offsets cancel in all reported ratios.

Error bars come from block jackknife with automatic block-length growth:
block sums are repeatedly pair-merged (doubling the block length) until the
jackknife estimate stops growing, which is the usual plateau construction
for autocorrelated streams.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import NoOverlapError, SignCollapseError
from .model import SymmetryChannel, symmetry_weight_signed

__all__ = [
    "WeightedAccumulator",
    "Histogram1D",
    "Histogram2D",
    "EstimateResult",
    "weighted_average",
    "virial_energy",
    "virial_terms_signed",
    "bennett_ratio",
    "BennettResult",
    "fermion_energy_via_free_energy",
    "channel_log_weights",
    "signed_logsumexp",
]

_BLOCK_CAP = 2048  # completed blocks kept before pair-merging
_MIN_BLOCKS = 16   # stop coarsening below this many blocks


def signed_logsumexp(signs, logs, axis=None):
    """(sign, log|sum|) of sum_i sign_i * exp(log_i), overflow-safe."""
    signs = np.asarray(signs, dtype=np.float64)
    logs = np.asarray(logs, dtype=np.float64)
    m = np.max(logs, axis=axis, keepdims=True) if logs.size else np.float64(-np.inf)
    m = np.where(np.isfinite(m), m, 0.0)
    t = np.sum(signs * np.exp(logs - m), axis=axis)
    m = np.squeeze(m, axis=axis) if axis is not None else m.reshape(())
    with np.errstate(divide="ignore"):
        out_log = m + np.log(np.abs(t))
    return np.sign(t), out_log


def channel_log_weights(s, beta, channel, log_reweight=None):
    """(sign, log) of the full per-sample weight W_channel(s) * e^{beta V}."""
    sign, logw = symmetry_weight_signed(s, beta, channel)
    if log_reweight is not None:
        logw = logw + np.asarray(log_reweight, dtype=np.float64)
    return sign, logw


@dataclass
class EstimateResult:
    """A scalar estimate with its blocked standard error."""

    value: float
    stderr: float
    n_samples: int
    weight_mean: float = math.nan
    weight_stderr: float = math.nan

    def __iter__(self):  # allows `value, err = result`
        return iter((self.value, self.stderr))


class _BlockStore:
    """Per-channel scaled block sums sharing one sample clock and offset."""

    def __init__(self, names, block_length):
        if block_length < 1:
            raise ValueError("block_length must be >= 1")
        self.names = list(names)
        self.block_length = int(block_length)
        self.offset = -np.inf
        self.count = 0
        self.partial_count = 0
        self.blocks = {name: [] for name in self.names}
        self.partial = {name: 0.0 for name in self.names}

    def _rescale(self, new_offset):
        factor = math.exp(self.offset - new_offset) if np.isfinite(self.offset) else 0.0
        for name in self.names:
            self.partial[name] *= factor
            if self.blocks[name]:
                self.blocks[name] = [b * factor for b in self.blocks[name]]
        self.offset = new_offset

    def add(self, signed_logs):
        """signed_logs: dict name -> (sign array, log array), equal lengths."""
        n = None
        batch_max = -np.inf
        for name in self.names:
            sign, logs = signed_logs[name]
            if n is None:
                n = len(logs)
            elif len(logs) != n:
                raise ValueError("channel batches must share one sample clock")
            finite = logs[np.isfinite(logs)]
            if finite.size:
                batch_max = max(batch_max, float(np.max(finite)))
        if n == 0:
            return
        if batch_max > self.offset:
            self._rescale(batch_max)
        off = self.offset if np.isfinite(self.offset) else 0.0
        scaled = {}
        with np.errstate(under="ignore"):
            for name in self.names:
                sign, logs = signed_logs[name]
                scaled[name] = np.where(np.isfinite(logs), sign * np.exp(logs - off), 0.0)
        start = 0
        while start < n:
            take = min(self.block_length - self.partial_count, n - start)
            for name in self.names:
                self.partial[name] += float(np.sum(scaled[name][start:start + take]))
            self.partial_count += take
            start += take
            if self.partial_count == self.block_length:
                for name in self.names:
                    self.blocks[name].append(self.partial[name])
                    self.partial[name] = 0.0
                self.partial_count = 0
        self.count += n
        if len(self.blocks[self.names[0]]) >= _BLOCK_CAP:
            self._coarsen()

    def _coarsen(self):
        for name in self.names:
            b = self.blocks[name]
            if len(b) % 2:
                # odd trailing block waits in the partial slot
                self.partial[name] += b[-1]
                b = b[:-1]
            self.blocks[name] = [b[i] + b[i + 1] for i in range(0, len(b), 2)]
        self.block_length *= 2
        self.partial_count = self.count - len(self.blocks[self.names[0]]) * self.block_length

    def total(self, name):
        """(sign, log) of the channel total."""
        tot = float(np.sum(self.blocks[name])) + self.partial[name]
        if tot == 0.0:
            return 0.0, -np.inf
        off = self.offset if np.isfinite(self.offset) else 0.0
        return math.copysign(1.0, tot), off + math.log(abs(tot))

    def block_matrix(self, name):
        """Completed blocks with the partial folded into the last one."""
        b = np.asarray(self.blocks[name], dtype=np.float64)
        if self.partial_count and len(b):
            b = b.copy()
            b[-1] += self.partial[name]
        elif self.partial_count:
            b = np.asarray([self.partial[name]])
        return b

    def merge(self, other):
        if self.names != other.names:
            raise ValueError("cannot merge accumulators with different channels")
        # close partial blocks on both sides, then concatenate
        new_offset = max(self.offset, other.offset)
        if np.isfinite(new_offset):
            self._rescale(new_offset)
        other_factor = (
            math.exp(other.offset - new_offset) if np.isfinite(other.offset) else 0.0
        )
        for name in self.names:
            mine = list(self.blocks[name])
            if self.partial_count:
                mine.append(self.partial[name])
                self.partial[name] = 0.0
            theirs = [b * other_factor for b in other.blocks[name]]
            if other.partial_count:
                theirs.append(other.partial[name] * other_factor)
            self.blocks[name] = mine + theirs
        self.partial_count = 0
        self.count += other.count
        self.block_length = max(self.block_length, other.block_length)
        while len(self.blocks[self.names[0]]) >= _BLOCK_CAP:
            self._coarsen()


def _jackknife_ratio_se(num, den):
    """Jackknife standard error of sum(num)/sum(den) over matched blocks."""
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    nb = len(num)
    if nb < 2:
        return math.inf
    tot_n, tot_d = num.sum(), den.sum()
    d_j = tot_d - den
    if np.any(d_j == 0.0):
        return math.inf
    r_j = (tot_n - num) / d_j
    r_bar = r_j.mean()
    return math.sqrt((nb - 1) / nb * float(np.sum((r_j - r_bar) ** 2)))


def _pair_merge(arr):
    n = len(arr) - len(arr) % 2
    return arr[:n:2] + arr[1:n:2]


def blocked_ratio_stderr(num, den):
    """Jackknife se with block doubling until the estimate plateaus.

    Doubling stops when the error grows by less than 5% or fewer than
    _MIN_BLOCKS blocks remain; the value at the stopping level is returned.
    """
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    se = _jackknife_ratio_se(num, den)
    while len(num) // 2 >= _MIN_BLOCKS:
        num, den = _pair_merge(num), _pair_merge(den)
        se_next = _jackknife_ratio_se(num, den)
        if not math.isfinite(se_next):
            return se_next
        if se_next <= se * 1.05:
            return max(se, se_next)
        se = se_next
    return se


class WeightedAccumulator:
    """Streaming weighted sums for ratio estimators with block errors.

    One denominator channel 'W' (the symmetry weight times any reweighting
    factor) plus one numerator channel per observable. Accumulators for the
    same channels merge associatively; merging equals accumulation of the
    concatenated stream up to round-off.
    """

    def __init__(self, observables, block_length=256):
        self.observable_names = list(observables)
        names = ["W"] + [f"O:{n}" for n in self.observable_names]
        self._store = _BlockStore(names, block_length)
        # Kish effective-size tracking for the absolute weights
        self._abs_offset = -np.inf
        self._sum_abs = 0.0
        self._sum_sq = 0.0

    @property
    def count(self):
        return self._store.count

    def add_batch(self, weight_sign, weight_log, observables):
        """Add samples; observables maps name -> plain per-sample values."""
        weight_sign = np.asarray(weight_sign, dtype=np.float64)
        weight_log = np.asarray(weight_log, dtype=np.float64)
        batch = {"W": (weight_sign, weight_log)}
        with np.errstate(divide="ignore", invalid="ignore"):
            for name in self.observable_names:
                obs = np.asarray(observables[name], dtype=np.float64)
                sign = np.sign(obs) * weight_sign
                logs = np.where(obs != 0.0, np.log(np.abs(obs)), -np.inf) + weight_log
                batch[f"O:{name}"] = (sign, logs)
        self._store.add(batch)
        self._track_weight_size(weight_log)

    def add_signed_batch(self, weight_sign, weight_log, signed_observables):
        """Like add_batch but observables arrive as (sign, log) pairs
        already including the per-sample weight."""
        batch = {"W": (np.asarray(weight_sign, float), np.asarray(weight_log, float))}
        for name in self.observable_names:
            batch[f"O:{name}"] = signed_observables[name]
        self._store.add(batch)
        self._track_weight_size(np.asarray(weight_log, float))

    def _track_weight_size(self, weight_log):
        finite = weight_log[np.isfinite(weight_log)]
        m = float(np.max(finite)) if finite.size else -np.inf
        if m > self._abs_offset:
            f = math.exp(self._abs_offset - m) if np.isfinite(self._abs_offset) else 0.0
            self._sum_abs *= f
            self._sum_sq *= f * f
            self._abs_offset = m
        off = self._abs_offset if np.isfinite(self._abs_offset) else 0.0
        with np.errstate(under="ignore"):
            w = np.exp(weight_log[np.isfinite(weight_log)] - off)
        self._sum_abs += float(np.sum(w))
        self._sum_sq += float(np.sum(w * w))

    @property
    def effective_samples(self):
        if self._sum_sq == 0.0:
            return 0.0
        return self._sum_abs**2 / self._sum_sq

    def _weight_mean_scaled(self):
        """(scaled mean of W, scaled blocked stderr); offsets cancel in the
        collapse criterion, keeping it meaningful at any weight magnitude."""
        if not self.count:
            return math.nan, math.nan
        den = self._store.block_matrix("W")
        counts = np.full(len(den), float(self._store.block_length))
        if len(den):
            counts[-1] = self.count - self._store.block_length * (len(den) - 1)
        mean_scaled = float(den.sum()) / self.count
        return mean_scaled, blocked_ratio_stderr(den, counts)

    def weight_mean(self):
        """(mean of W, blocked stderr); the sign-problem health indicator.

        May overflow to inf when reweighting factors are astronomically
        large; the collapse test itself runs in the scaled domain.
        """
        mean_s, se_s = self._weight_mean_scaled()
        off = self._store.offset if np.isfinite(self._store.offset) else 0.0
        with np.errstate(over="ignore"):
            scale = float(np.exp(off))
        return mean_s * scale, se_s * scale

    def ratio(self, name, check_collapse=True):
        """<O W>/<W> with blocked jackknife error, as an EstimateResult."""
        mean_s, se_s = self._weight_mean_scaled()
        if check_collapse and abs(mean_s) < 2.0 * se_s:
            w_mean, w_se = self.weight_mean()
            raise SignCollapseError(w_mean, w_se)
        num = self._store.block_matrix(f"O:{name}")
        den = self._store.block_matrix("W")
        value = float(num.sum() / den.sum())
        se = blocked_ratio_stderr(num, den)
        w_mean, w_se = self.weight_mean()
        return EstimateResult(value, se, self.count, w_mean, w_se)

    def merge(self, other):
        if self.observable_names != other.observable_names:
            raise ValueError("observable sets differ")
        self._store.merge(other._store)
        m = max(self._abs_offset, other._abs_offset)
        f_self = math.exp(self._abs_offset - m) if np.isfinite(self._abs_offset) else 0.0
        f_other = math.exp(other._abs_offset - m) if np.isfinite(other._abs_offset) else 0.0
        self._sum_abs = self._sum_abs * f_self + other._sum_abs * f_other
        self._sum_sq = self._sum_sq * f_self**2 + other._sum_sq * f_other**2
        self._abs_offset = m
        return self


def weighted_average(observable, s, beta, channel, log_reweight=None,
                     block_length=256, check_collapse=True):
    """<O>_channel = <O W>_oo / <W>_oo over column arrays.

    Raises SignCollapseError when <W> is statistically consistent with zero.
    """
    acc = WeightedAccumulator(["obs"], block_length=block_length)
    sign, logw = channel_log_weights(s, beta, channel, log_reweight)
    acc.add_batch(sign, logw, {"obs": observable})
    return acc.ratio("obs", check_collapse=check_collapse)


# --- virial energy ----------------------------------------------------------


def virial_terms_signed(pot, s, vir_oo, vir_o, beta, n_dim, channel):
    """Per-sample (sign, log) of the virial-estimator numerator.

    The numerator attaches each topology's contribution to its Boltzmann
    factor expressed in the oo ensemble:

        A = U (1 + sg e^{-beta s}) + (n_d / 2 beta)(2 + sg e^{-beta s})
          + vir_oo + sg e^{-beta s} vir_O

    with sg = +1 (bosons) / -1 (fermions), U the bead-averaged potential and
    vir_* the position-gradient sums taken about the per-particle centroids
    (oo) or the common center of mass (O). The distinguishable channel keeps
    only U + n_d/beta + vir_oo.
    """
    pot = np.asarray(pot, dtype=np.float64)
    vir_oo = np.asarray(vir_oo, dtype=np.float64)
    sg = channel.sign
    with np.errstate(divide="ignore"):
        log_pot = np.where(pot != 0.0, np.log(np.abs(pot)), -np.inf)
        log_voo = np.where(vir_oo != 0.0, np.log(np.abs(vir_oo)), -np.inf)
    if sg == 0:
        signs = np.stack([np.sign(pot), np.ones_like(pot), np.sign(vir_oo)])
        logs = np.stack([
            log_pot,
            np.full_like(pot, math.log(n_dim / beta)),
            log_voo,
        ])
        return signed_logsumexp(signs, logs, axis=0)
    s = np.asarray(s, dtype=np.float64)
    vir_o = np.asarray(vir_o, dtype=np.float64)
    with np.errstate(divide="ignore"):
        log_vo = np.where(vir_o != 0.0, np.log(np.abs(vir_o)), -np.inf)
    ex = -beta * s  # log of the exchange factor e^{-beta s}
    signs = np.stack([
        np.sign(pot),
        sg * np.sign(pot),
        np.ones_like(pot),
        np.full_like(pot, float(sg)),
        np.sign(vir_oo),
        sg * np.sign(vir_o),
    ])
    logs = np.stack([
        log_pot,
        log_pot + ex,
        np.full_like(pot, math.log(n_dim / beta)),
        math.log(n_dim / (2.0 * beta)) + ex,
        log_voo,
        log_vo + ex,
    ])
    return signed_logsumexp(signs, logs, axis=0)


def virial_energy(columns, beta, n_dim, channel, log_reweight=None,
                  block_length=256, check_collapse=True):
    """Total energy from the centroid-virial estimator.

    columns must provide .s, .pot, .vir_oo and .vir_o arrays (a SampleColumns
    or any duck-typed object).
    """
    num_sign, num_log = virial_terms_signed(
        columns.pot, columns.s, columns.vir_oo, columns.vir_o, beta, n_dim, channel
    )
    w_sign, w_log = channel_log_weights(columns.s, beta, channel, log_reweight)
    if log_reweight is not None:
        num_log = num_log + np.asarray(log_reweight, dtype=np.float64)
    acc = WeightedAccumulator(["E"], block_length=block_length)
    acc.add_signed_batch(w_sign, w_log, {"E": (num_sign, num_log)})
    return acc.ratio("E", check_collapse=check_collapse)


# --- histograms -------------------------------------------------------------


@dataclass
class HistogramReadout:
    """Normalized histogram values with per-bin jackknife errors."""

    centers: np.ndarray
    values: np.ndarray
    stderr: np.ndarray
    effective_counts: np.ndarray
    underflow: float
    overflow: float
    widths: np.ndarray = None


class Histogram1D:
    """Weighted 1D histogram in the scaled signed domain with block errors.

    Each *sample* carries one weight and may contribute several entries (all
    bead-pair distances of a snapshot, for instance); block boundaries are
    drawn on the sample clock so whole samples stay inside one block.
    """

    def __init__(self, nbins, lo, hi, block_length=64):
        if hi <= lo or nbins < 1:
            raise ValueError("bad histogram range")
        self.edges = np.linspace(lo, hi, nbins + 1)
        self.nbins = nbins
        self.block_length = int(block_length)
        self.offset = -np.inf
        self.blocks = []          # list of (nbins,) scaled arrays
        self.partial = np.zeros(nbins)
        self.partial_count = 0
        self.count = 0
        self.under = 0.0
        self.over = 0.0
        self.sum_abs = np.zeros(nbins)
        self.sum_sq = np.zeros(nbins)

    @property
    def centers(self):
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    @property
    def widths(self):
        return np.diff(self.edges)

    def _rescale(self, new_offset):
        f = math.exp(self.offset - new_offset) if np.isfinite(self.offset) else 0.0
        self.partial *= f
        self.under *= f
        self.over *= f
        self.sum_abs *= f
        self.sum_sq *= f * f
        self.blocks = [b * f for b in self.blocks]
        self.offset = new_offset

    def add_batch(self, entries, weight_sign, weight_log):
        """entries: (n_samples, k) or list of 1D arrays; one weight/sample."""
        weight_sign = np.asarray(weight_sign, dtype=np.float64)
        weight_log = np.asarray(weight_log, dtype=np.float64)
        n = len(weight_log)
        if n == 0:
            return
        finite = weight_log[np.isfinite(weight_log)]
        if finite.size and float(np.max(finite)) > self.offset:
            self._rescale(float(np.max(finite)))
        off = self.offset if np.isfinite(self.offset) else 0.0
        with np.errstate(under="ignore"):
            w = np.where(np.isfinite(weight_log),
                         weight_sign * np.exp(weight_log - off), 0.0)
        entries = [np.asarray(e, dtype=np.float64).ravel() for e in entries]
        if len(entries) != n:
            raise ValueError("one entry array per sample required")
        start = 0
        while start < n:
            take = min(self.block_length - self.partial_count, n - start)
            for i in range(start, start + take):
                self._add_one(entries[i], w[i])
            self.partial_count += take
            start += take
            if self.partial_count == self.block_length:
                self.blocks.append(self.partial)
                self.partial = np.zeros(self.nbins)
                self.partial_count = 0
        self.count += n
        if len(self.blocks) >= _BLOCK_CAP:
            merged = [self.blocks[i] + self.blocks[i + 1]
                      for i in range(0, len(self.blocks) - len(self.blocks) % 2, 2)]
            if len(self.blocks) % 2:
                self.partial += self.blocks[-1]
            self.blocks = merged
            self.block_length *= 2
            self.partial_count = self.count - len(self.blocks) * self.block_length

    def _add_one(self, vals, w):
        lo, hi = self.edges[0], self.edges[-1]
        below = np.count_nonzero(vals < lo)
        above = np.count_nonzero(vals >= hi)
        self.under += w * below
        self.over += w * above
        hist, _ = np.histogram(vals, bins=self.edges)
        contrib = w * hist
        self.partial += contrib
        self.sum_abs += np.abs(contrib)
        self.sum_sq += contrib * contrib

    def _block_matrix(self):
        rows = list(self.blocks)
        if self.partial_count:
            rows.append(self.partial.copy())
        if not rows:
            return np.zeros((0, self.nbins))
        return np.asarray(rows)

    def readout(self, norm="unit_integral"):
        """Normalized values with per-bin jackknife errors.

        norm='unit_integral' scales so sum(values * width) = 1;
        norm='count2' scales the integral to 2 (two particles);
        norm='raw' reports scaled sums divided by the sample count.
        """
        m = self._block_matrix()
        tot = m.sum(axis=0)
        widths = self.widths
        if norm == "unit_integral":
            target = 1.0
        elif norm == "count2":
            target = 2.0
        else:
            scale = 1.0 / max(self.count, 1)
            vals = tot * scale
            return HistogramReadout(self.centers, vals, np.zeros_like(vals),
                                    self._neff(), self.under, self.over, widths)
        integral = float(np.sum(tot * widths))
        if integral == 0.0:
            raise ZeroDivisionError("empty histogram cannot be normalized")
        vals = tot * (target / integral)
        nb = m.shape[0]
        if nb < 2:
            err = np.full(self.nbins, np.inf)
        else:
            tot_int = np.sum(m * widths)
            reps = np.empty((nb, self.nbins))
            for j in range(nb):
                t = tot - m[j]
                denom = tot_int - float(np.sum(m[j] * widths))
                reps[j] = t * (target / denom) if denom != 0.0 else np.inf
            rbar = reps.mean(axis=0)
            err = np.sqrt((nb - 1) / nb * np.sum((reps - rbar) ** 2, axis=0))
        return HistogramReadout(self.centers, vals, err, self._neff(),
                                self.under, self.over, widths)

    def _neff(self):
        with np.errstate(divide="ignore", invalid="ignore"):
            ne = np.where(self.sum_sq > 0.0, self.sum_abs**2 / self.sum_sq, 0.0)
        return ne

    def merge(self, other):
        if not np.array_equal(self.edges, other.edges):
            raise ValueError("histogram ranges differ")
        new_off = max(self.offset, other.offset)
        if np.isfinite(new_off):
            self._rescale(new_off)
        f = math.exp(other.offset - new_off) if np.isfinite(other.offset) else 0.0
        mine = list(self.blocks)
        if self.partial_count:
            mine.append(self.partial)
        theirs = [b * f for b in other.blocks]
        if other.partial_count:
            theirs.append(other.partial * f)
        self.blocks = mine + theirs
        self.partial = np.zeros(self.nbins)
        self.partial_count = 0
        self.count += other.count
        self.under += other.under * f
        self.over += other.over * f
        self.sum_abs += other.sum_abs * f
        self.sum_sq += other.sum_sq * f * f
        self.block_length = max(self.block_length, other.block_length)
        return self


class Histogram2D(Histogram1D):
    """Weighted 2D histogram stored on a flattened grid.

    entries per sample: (k, 2) position arrays. Readout reshapes back to
    (nx, ny).
    """

    def __init__(self, nx, ny, xlo, xhi, ylo, yhi, block_length=64):
        super().__init__(nx * ny, 0.0, float(nx * ny), block_length=block_length)
        self.nx, self.ny = nx, ny
        self.xedges = np.linspace(xlo, xhi, nx + 1)
        self.yedges = np.linspace(ylo, yhi, ny + 1)
        self.cell_area = (self.xedges[1] - self.xedges[0]) * (self.yedges[1] - self.yedges[0])

    @property
    def widths(self):
        return np.full(self.nbins, self.cell_area)

    def _add_one(self, vals, w):
        vals = vals.reshape(-1, 2)
        hist, _, _ = np.histogram2d(vals[:, 0], vals[:, 1],
                                    bins=[self.xedges, self.yedges])
        inside = int(hist.sum())
        self.over += w * (vals.shape[0] - inside)
        contrib = w * hist.ravel()
        self.partial += contrib
        self.sum_abs += np.abs(contrib)
        self.sum_sq += contrib * contrib

    def add_batch(self, entries, weight_sign, weight_log):
        entries = [np.asarray(e, dtype=np.float64).reshape(-1, 2) for e in entries]
        weight_sign = np.asarray(weight_sign, dtype=np.float64)
        weight_log = np.asarray(weight_log, dtype=np.float64)
        n = len(weight_log)
        if n == 0:
            return
        finite = weight_log[np.isfinite(weight_log)]
        if finite.size and float(np.max(finite)) > self.offset:
            self._rescale(float(np.max(finite)))
        off = self.offset if np.isfinite(self.offset) else 0.0
        with np.errstate(under="ignore"):
            w = np.where(np.isfinite(weight_log),
                         weight_sign * np.exp(weight_log - off), 0.0)
        start = 0
        while start < n:
            take = min(self.block_length - self.partial_count, n - start)
            for i in range(start, start + take):
                self._add_one(entries[i], w[i])
            self.partial_count += take
            start += take
            if self.partial_count == self.block_length:
                self.blocks.append(self.partial)
                self.partial = np.zeros(self.nbins)
                self.partial_count = 0
        self.count += n
        if len(self.blocks) >= _BLOCK_CAP:
            merged = [self.blocks[i] + self.blocks[i + 1]
                      for i in range(0, len(self.blocks) - len(self.blocks) % 2, 2)]
            if len(self.blocks) % 2:
                self.partial += self.blocks[-1]
            self.blocks = merged
            self.block_length *= 2
            self.partial_count = self.count - len(self.blocks) * self.block_length

    def readout2d(self, norm="count2"):
        flat = self.readout(norm=norm)
        return HistogramReadout(
            centers=(0.5 * (self.xedges[:-1] + self.xedges[1:]),
                     0.5 * (self.yedges[:-1] + self.yedges[1:])),
            values=flat.values.reshape(self.nx, self.ny),
            stderr=flat.stderr.reshape(self.nx, self.ny),
            effective_counts=flat.effective_counts.reshape(self.nx, self.ny),
            underflow=flat.underflow,
            overflow=flat.overflow,
            widths=flat.widths.reshape(self.nx, self.ny),
        )


def density_difference(triplet: HistogramReadout, singlet: HistogramReadout,
                       coefficient=0.5):
    """rho_T - coefficient * rho_S with errors combined in quadrature."""
    values = triplet.values - coefficient * singlet.values
    stderr = np.sqrt(triplet.stderr**2 + (coefficient * singlet.stderr) ** 2)
    return HistogramReadout(triplet.centers, values, stderr,
                            np.minimum(triplet.effective_counts,
                                       singlet.effective_counts),
                            0.0, 0.0, triplet.widths)


# --- Bennett acceptance ratio ----------------------------------------------


@dataclass
class BennettResult:
    ratio: float
    stderr: float
    c_star: float
    plateau: list
    plateau_ok: bool
    fermi_mean_oo: float
    fermi_mean_o: float


def _normalized_weights(log_reweight, n):
    if log_reweight is None:
        return np.ones(n)
    lr = np.asarray(log_reweight, dtype=np.float64)
    m = float(np.max(lr))
    w = np.exp(lr - m)
    return w / w.mean()


def bennett_ratio(s_oo, s_o, beta, log_reweight_oo=None, log_reweight_o=None,
                  c_range=(-200.0, 200.0), tol=1e-10, block_length=256):
    """Partition-function ratio Z_O/Z_oo from two sampled ensembles.

    Uses the acceptance-ratio estimator
        ratio = <f(beta s + C)>_oo / <f(-beta s - C)>_O * e^C,
    f(x) = 1/(1 + e^x), with the shift C fixed by the self-consistent
    count-balance condition (weighted sums of f equal on both legs), solved
    by bisection. The estimate is C-independent near C*; the returned plateau
    scan documents that.
    """
    x_oo = beta * np.asarray(s_oo, dtype=np.float64)
    x_o = beta * np.asarray(s_o, dtype=np.float64)
    if len(x_oo) == 0 or len(x_o) == 0:
        raise ValueError("both ensembles need samples")
    w_oo = _normalized_weights(log_reweight_oo, len(x_oo))
    w_o = _normalized_weights(log_reweight_o, len(x_o))

    def sums(c):
        a = float(np.sum(w_oo * expit(-(x_oo + c))))
        b = float(np.sum(w_o * expit(x_o + c)))
        return a, b

    def balance(c):
        a, b = sums(c)
        if a == 0.0 and b == 0.0:
            return 0.0
        if a == 0.0:
            return -np.inf
        if b == 0.0:
            return np.inf
        return math.log(a) - math.log(b)

    lo, hi = c_range
    f_lo, f_hi = balance(lo), balance(hi)
    if not (f_lo >= 0.0 >= f_hi):
        raise NoOverlapError(
            "count-balance condition has no root in the shift range; "
            "the s distributions of the two topologies do not overlap"
        )
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if balance(mid) >= 0.0:
            lo = mid
        else:
            hi = mid
    c_star = 0.5 * (lo + hi)

    a, b = sums(c_star)
    favg_oo = a / np.sum(w_oo)
    favg_o = b / np.sum(w_o)
    if favg_oo < 1e-12 and favg_o < 1e-12:
        raise NoOverlapError(
            f"no overlap at C*={c_star:.3f}: Fermi averages "
            f"{favg_oo:.3e} (oo) and {favg_o:.3e} (O); "
            "consider biasing the exchange variable on one or both legs"
        )

    def ratio_at(c):
        aa, bb = sums(c)
        return float((aa / np.sum(w_oo)) / (bb / np.sum(w_o)) * math.exp(c))

    ratio = ratio_at(c_star)

    # independent-leg jackknife at fixed C*
    def leg_blocks(w, f):
        prod = w * f
        nb = max(len(prod) // block_length, 1)
        usable = nb * block_length
        num = prod[:usable].reshape(nb, -1).sum(axis=1)
        den = w[:usable].reshape(nb, -1).sum(axis=1)
        if usable < len(prod):
            num[-1] += prod[usable:].sum()
            den[-1] += w[usable:].sum()
        return num, den

    num_oo, den_oo = leg_blocks(w_oo, expit(-(x_oo + c_star)))
    num_o, den_o = leg_blocks(w_o, expit(x_o + c_star))
    se_oo = blocked_ratio_stderr(num_oo, den_oo)
    se_o = blocked_ratio_stderr(num_o, den_o)
    rel = math.sqrt((se_oo / favg_oo) ** 2 + (se_o / favg_o) ** 2)
    stderr = abs(ratio) * rel

    plateau = [(float(c_star + dc), ratio_at(c_star + dc))
               for dc in (-1.0, -0.5, 0.0, 0.5, 1.0)]
    spread = max(abs(r - ratio) for _, r in plateau)
    return BennettResult(float(ratio), float(stderr), float(c_star), plateau,
                         bool(spread < max(stderr, 1e-300)),
                         float(favg_oo), float(favg_o))


def fermion_energy_via_free_energy(e_boson, ratio, beta,
                                   e_boson_err=0.0, ratio_err=0.0):
    """Low-temperature fermion energy from the boson energy and Z_O/Z_oo.

    E_F = E_B - (1/beta) ln((1 - ratio)/(1 + ratio)); valid when free
    energies approximate energies (beta * gap >> 1). ratio >= 1 means a
    non-positive fermionic partition function and is rejected.
    """
    if ratio >= 1.0:
        raise ValueError(
            f"Z_O/Z_oo = {ratio} >= 1: fermionic partition function is not positive"
        )
    if ratio < 0.0:
        raise ValueError(f"Z_O/Z_oo = {ratio} must be non-negative")
    e_f = e_boson - math.log((1.0 - ratio) / (1.0 + ratio)) / beta
    slope = 2.0 / (beta * (1.0 - ratio**2))  # d e_f / d ratio
    err = math.sqrt(e_boson_err**2 + (slope * ratio_err) ** 2)
    return e_f, err
