"""Well-tempered metadynamics bias on the exchange collective variable.

The bias is a sum of Gaussians of fixed width sigma_G deposited every tau_G
steps at the instantaneous value of the collective variable, with heights
damped by the well-tempered rule

    w = w0 * exp(-beta * V(s_depot) / (gamma - 1)),

so that the long-run sampled distribution approaches p(s)^{1/gamma}.

Two evaluation paths exist: the exact Gaussian sum (reference, used for
deposits and available everywhere) and a uniform grid accumulated at deposit
time and read with a cubic (Catmull-Rom) interpolant, which is what the MD
kernel uses. Outside the grid the bias continues as a constant with zero
derivative. After the build phase the bias is frozen and equilibrium
averages are recovered by weighting each sample with exp(+beta V(s)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

__all__ = ["BiasState", "bias_value", "bias_derivative", "deposit", "reweight_factor"]

HILLS_FORMAT_VERSION = 1


@dataclass
class BiasState:
    """Deposited Gaussians plus well-tempered parameters and the force grid.

    gamma > 1 is the bias factor, w0 the initial height, sigma the common
    Gaussian width and tau_g the deposition stride in MD steps. grid_min /
    grid_max / grid_spacing define the uniform accumulation grid (all in the
    energy units of s).
    """

    gamma: float
    w0: float
    sigma: float
    tau_g: int
    grid_min: float
    grid_max: float
    grid_spacing: float | None = None
    frozen: bool = False
    centers: list = field(default_factory=list)
    heights: list = field(default_factory=list)

    def __post_init__(self):
        if self.gamma <= 1.0:
            raise ConfigError(f"well-tempered gamma must exceed 1, got {self.gamma}")
        if self.w0 <= 0 or self.sigma <= 0:
            raise ConfigError("w0 and sigma must be positive")
        if self.tau_g < 1:
            raise ConfigError("tau_g must be >= 1 step")
        if self.grid_spacing is None:
            self.grid_spacing = self.sigma / 10.0
        if self.grid_max <= self.grid_min:
            raise ConfigError("grid_max must exceed grid_min")
        n = int(round((self.grid_max - self.grid_min) / self.grid_spacing)) + 1
        self.grid_s = self.grid_min + self.grid_spacing * np.arange(n)
        self.grid_v = np.zeros(n)
        for c, h in zip(self.centers, self.heights):
            self._paint(c, h)

    @property
    def deposited_count(self) -> int:
        return len(self.centers)

    def _paint(self, center, height):
        d = self.grid_s - center
        self.grid_v += height * np.exp(-0.5 * (d / self.sigma) ** 2)

    def bias_value(self, s, method: str = "exact"):
        """Bias potential at s. method='exact' sums all Gaussians,
        method='grid' reads the cubic interpolant the MD kernel uses."""
        s = np.asarray(s, dtype=np.float64)
        if method == "grid":
            return _interp_value(self.grid_v, self.grid_min, self.grid_spacing, s)
        if method != "exact":
            raise ValueError(f"unknown method {method!r}")
        if not self.centers:
            return np.zeros_like(s) if s.ndim else 0.0
        c = np.asarray(self.centers)
        h = np.asarray(self.heights)
        d = (s[..., None] - c) / self.sigma
        out = np.sum(h * np.exp(-0.5 * d * d), axis=-1)
        return out if s.ndim else float(out)

    def bias_derivative(self, s, method: str = "exact"):
        """dV/ds, analytic for the exact sum, spline derivative on the grid."""
        s = np.asarray(s, dtype=np.float64)
        if method == "grid":
            return _interp_deriv(self.grid_v, self.grid_min, self.grid_spacing, s)
        if method != "exact":
            raise ValueError(f"unknown method {method!r}")
        if not self.centers:
            return np.zeros_like(s) if s.ndim else 0.0
        c = np.asarray(self.centers)
        h = np.asarray(self.heights)
        d = (s[..., None] - c) / self.sigma
        out = np.sum(-h * d * np.exp(-0.5 * d * d), axis=-1) / self.sigma
        return out if s.ndim else float(out)

    def deposit(self, s_now: float, beta: float) -> float:
        """Add a Gaussian at s_now with the well-tempered height; returns it.

        The height uses the exact bias value before this deposition.
        """
        if self.frozen:
            raise ConfigError("cannot deposit into a frozen bias")
        v = float(self.bias_value(float(s_now), method="exact"))
        height = self.w0 * math.exp(-beta * v / (self.gamma - 1.0))
        self.centers.append(float(s_now))
        self.heights.append(height)
        self._paint(float(s_now), height)
        return height

    def freeze(self) -> "BiasState":
        self.frozen = True
        return self

    def reweight_log(self, s, beta: float):
        """log of the static reweighting factor exp(+beta V(s)) per sample."""
        return beta * np.asarray(self.bias_value(s, method="grid"))

    # --- hills file -------------------------------------------------------

    def save_hills(self, path):
        """One line per Gaussian: index, center, height, width."""
        with open(path, "w") as fh:
            fh.write(f"# expimd hills v{HILLS_FORMAT_VERSION}\n")
            fh.write(
                f"# gamma={self.gamma!r} w0={self.w0!r} sigma={self.sigma!r} "
                f"tau_g={self.tau_g} grid_min={self.grid_min!r} "
                f"grid_max={self.grid_max!r} grid_spacing={self.grid_spacing!r}\n"
            )
            fh.write("# index center height width\n")
            for i, (c, h) in enumerate(zip(self.centers, self.heights)):
                fh.write(f"{i:d} {c!r} {h!r} {self.sigma!r}\n")

    @classmethod
    def load_hills(cls, path, frozen: bool = True) -> "BiasState":
        meta = {}
        centers, heights = [], []
        with open(path) as fh:
            first = fh.readline()
            if not first.startswith("# expimd hills"):
                raise ConfigError(f"{path}: not a hills file")
            for line in fh:
                line = line.strip()
                if line.startswith("#"):
                    for tok in line[1:].split():
                        if "=" in tok:
                            key, val = tok.split("=", 1)
                            meta[key] = float(val)
                    continue
                if not line:
                    continue
                _, c, h, _ = line.split()
                centers.append(float(c))
                heights.append(float(h))
        try:
            state = cls(
                gamma=meta["gamma"],
                w0=meta["w0"],
                sigma=meta["sigma"],
                tau_g=int(meta["tau_g"]),
                grid_min=meta["grid_min"],
                grid_max=meta["grid_max"],
                grid_spacing=meta["grid_spacing"],
                centers=centers,
                heights=heights,
            )
        except KeyError as exc:
            raise ConfigError(f"{path}: missing hills metadata {exc}") from exc
        state.frozen = frozen
        return state


# --- module-level wrappers matching the operation names --------------------


def bias_value(bias: BiasState, s):
    return bias.bias_value(s)


def bias_derivative(bias: BiasState, s):
    return bias.bias_derivative(s)


def deposit(bias: BiasState, s_now: float, beta: float) -> BiasState:
    bias.deposit(s_now, beta)
    return bias


def reweight_factor(bias: BiasState, s, beta: float):
    """(sign, log_weight) of the frozen-bias reweighting factor e^{beta V(s)}."""
    logw = np.asarray(beta * bias.bias_value(s, method="exact"))
    return np.ones_like(logw), logw


# --- uniform-grid Catmull-Rom interpolation --------------------------------
#
# Kept in numpy here for analysis; the MD kernel carries an identical
# implementation (tested against this one).


def _cr_weights(x):
    x2 = x * x
    x3 = x2 * x
    w0 = -0.5 * x3 + x2 - 0.5 * x
    w1 = 1.5 * x3 - 2.5 * x2 + 1.0
    w2 = -1.5 * x3 + 2.0 * x2 + 0.5 * x
    w3 = 0.5 * x3 - 0.5 * x2
    return w0, w1, w2, w3


def _cr_dweights(x):
    x2 = x * x
    w0 = -1.5 * x2 + 2.0 * x - 0.5
    w1 = 4.5 * x2 - 5.0 * x
    w2 = -4.5 * x2 + 4.0 * x + 0.5
    w3 = 1.5 * x2 - x
    return w0, w1, w2, w3


def _neighbourhood(v, s0, ds, s):
    n = v.shape[0]
    t = (np.asarray(s, dtype=np.float64) - s0) / ds
    i = np.floor(t).astype(np.int64)
    x = t - i
    below = i < 0
    above = i > n - 2
    i = np.clip(i, 0, n - 2)
    idx = np.stack([np.clip(i + k, 0, n - 1) for k in (-1, 0, 1, 2)])
    return v[idx], x, below, above


def _interp_value(v, s0, ds, s):
    nodes, x, below, above = _neighbourhood(v, s0, ds, s)
    w = _cr_weights(x)
    out = sum(wk * nk for wk, nk in zip(w, nodes))
    out = np.where(below, v[0], out)
    out = np.where(above, v[-1], out)
    return out if out.ndim else float(out)


def _interp_deriv(v, s0, ds, s):
    nodes, x, below, above = _neighbourhood(v, s0, ds, s)
    w = _cr_dweights(x)
    out = sum(wk * nk for wk, nk in zip(w, nodes)) / ds
    out = np.where(below | above, 0.0, out)
    return out if out.ndim else float(out)
