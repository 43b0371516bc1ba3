"""Network scenarios: deterministic AP grids, random user drops, Rician
effective channel gains, and serializable datasets.

Gains are drawn per AP-user pair from a Rician distribution whose mean is
gain_scale/distance and whose variance is the constant rician_variance.  When
the requested mean/variance pair is below the Rayleigh limit (no Rician
parameters exist), a moment-matched Gaussian clamped at zero is used instead
and every clamp event is counted on the dataset.
"""

from __future__ import annotations

import dataclasses

import numpy as np
from scipy.special import i0e, i1e

from .errors import SchemaError

# smallest achievable mean^2/variance ratio of a Rice distribution (Rayleigh)
RAYLEIGH_RATIO = np.pi / (4.0 - np.pi)

DATASET_MAGIC = "cfassign-dataset v1"


@dataclasses.dataclass(frozen=True)
class Scenario:
    """Static network description; one instance is shared by a whole dataset."""

    n_aps: int
    n_users: int
    area: tuple  # (width, height) in meters
    ap_positions: tuple  # n_aps entries of (x, y)
    min_serving_aps: int
    max_served_users: int
    noise_power: float = 1.0
    gain_scale: float = 25.0
    rician_variance: float = 0.01

    def __post_init__(self):
        if self.n_aps < 1 or self.n_users < 1:
            raise ValueError("need at least one AP and one user")
        if not (1 <= self.max_served_users <= self.n_users):
            raise ValueError("max_served_users must be in [1, n_users]")
        if not (0 <= self.min_serving_aps <= self.n_aps):
            raise ValueError("min_serving_aps must be in [0, n_aps]")
        if self.n_users * self.min_serving_aps > self.n_aps * self.max_served_users:
            raise ValueError("infeasible scenario: K*L > N*U leaves some user unserved")
        if len(self.ap_positions) != self.n_aps:
            raise ValueError("ap_positions must have exactly n_aps entries")
        w, h = self.area
        for x, y in self.ap_positions:
            if not (0.0 <= x <= w and 0.0 <= y <= h):
                raise ValueError(f"AP position ({x}, {y}) outside area {self.area}")
        if self.noise_power <= 0 or self.gain_scale <= 0 or self.rician_variance < 0:
            raise ValueError("noise_power and gain_scale must be positive, "
                             "rician_variance nonnegative")

    def ap_array(self):
        return np.asarray(self.ap_positions, dtype=np.float64)


@dataclasses.dataclass
class ChannelRealization:
    """One problem instance: a K x N gain matrix and the user drop behind it."""

    gains: np.ndarray
    user_positions: np.ndarray


@dataclasses.dataclass
class Dataset:
    scenario: Scenario
    samples: list
    seed: int
    split_tag: str
    clamp_count: int = 0

    def gains_array(self):
        """All gain matrices stacked as (size, K, N)."""
        return np.stack([s.gains for s in self.samples], axis=0)

    def __len__(self):
        return len(self.samples)


def place_aps(grid, n_aps, area, margin=None):
    """Deterministic grid placement; row-major from the bottom-left corner.

    grid is (cols, rows); the first n_aps grid points are used, so only the
    last row may be partially filled.  Default margin is 5% of each side.
    """
    cols, rows = grid
    if cols < 1 or rows < 1 or cols * rows < n_aps:
        raise ValueError(f"grid {grid} cannot hold {n_aps} APs")
    if cols * rows - n_aps >= cols:
        raise ValueError(f"grid {grid} leaves more than one row empty for {n_aps} APs")
    w, h = area
    mx = 0.05 * w if margin is None else margin
    my = 0.05 * h if margin is None else margin
    xs = np.linspace(mx, w - mx, cols) if cols > 1 else np.array([mx])
    ys = np.linspace(my, h - my, rows) if rows > 1 else np.array([my])
    points = [(float(x), float(y)) for y in ys for x in xs]
    return tuple(points[:n_aps])


def sample_users(rng, n_users, area):
    """K i.i.d. uniform points over the area; (K, 2) array."""
    if n_users < 1:
        raise ValueError("need at least one user")
    w, h = area
    pts = rng.uniform(0.0, 1.0, size=(n_users, 2))
    pts[:, 0] *= w
    pts[:, 1] *= h
    return pts


def _rice_mean_unit(b):
    """Mean of Rice(nu=b, tau=1); stable for large b via scaled Bessels."""
    b = np.asarray(b, dtype=np.float64)
    x = b * b / 4.0
    return np.sqrt(np.pi / 2.0) * ((1.0 + 2.0 * x) * i0e(x) + 2.0 * x * i1e(x))


def _rice_shape_from_ratio(ratio):
    """Invert mean^2/variance ratio to the Rice shape b = nu/tau by bisection.

    ratio must be >= RAYLEIGH_RATIO elementwise.
    """
    ratio = np.asarray(ratio, dtype=np.float64)
    lo = np.zeros_like(ratio)
    hi = np.maximum(4.0, 2.0 * np.sqrt(ratio) + 1.0)

    def f(b):
        m = _rice_mean_unit(b)
        return m * m - ratio * (2.0 + b * b - m * m)

    # f(0) <= 0 (equality at the Rayleigh limit) and f(hi) > 0
    for _ in range(90):
        mid = 0.5 * (lo + hi)
        mask = f(mid) > 0.0
        hi = np.where(mask, mid, hi)
        lo = np.where(mask, lo, mid)
    return 0.5 * (lo + hi)


def rician_gains(means, variance, rng):
    """Draw one gain per entry of means with the given constant variance.

    Returns (gains, clamp_count).  Entries whose mean^2/variance ratio admits
    no Rice distribution fall back to a moment-matched Gaussian clamped at 0.
    """
    means = np.asarray(means, dtype=np.float64)
    if np.any(means <= 0.0):
        raise ValueError("gain means must be positive")
    z = rng.standard_normal(size=(2,) + means.shape)
    if variance == 0.0:
        return means.copy(), 0
    ratio = means * means / variance
    rice_ok = ratio >= RAYLEIGH_RATIO
    out = np.empty_like(means)
    clamps = 0
    if np.any(rice_ok):
        r = ratio[rice_ok]
        b = _rice_shape_from_ratio(r)
        tau = means[rice_ok] / _rice_mean_unit(b)
        out[rice_ok] = tau * np.hypot(b + z[0][rice_ok], z[1][rice_ok])
    if not np.all(rice_ok):
        gauss = ~rice_ok
        draw = means[gauss] + np.sqrt(variance) * z[0][gauss]
        clamps = int(np.sum(draw < 0.0))
        out[gauss] = np.maximum(draw, 0.0)
    return out, clamps


def channel_gain(ap_pos, user_pos, scenario, rng):
    """Single-pair gain draw; mean gain_scale/distance, variance rician_variance."""
    d = float(np.hypot(ap_pos[0] - user_pos[0], ap_pos[1] - user_pos[1]))
    if d <= 0.0:
        raise ValueError("zero AP-user distance: degenerate geometry")
    g, _ = rician_gains(np.array([[scenario.gain_scale / d]]),
                        scenario.rician_variance, rng)
    return float(g[0, 0])


def realize_channel(scenario, rng):
    """One ChannelRealization: drop users, then draw the full gain matrix."""
    users = sample_users(rng, scenario.n_users, scenario.area)
    aps = scenario.ap_array()
    d = np.linalg.norm(users[:, None, :] - aps[None, :, :], axis=2)
    if np.any(d <= 0.0):
        raise ValueError("zero AP-user distance: degenerate geometry")
    gains, clamps = rician_gains(scenario.gain_scale / d, scenario.rician_variance, rng)
    return ChannelRealization(gains=gains, user_positions=users), clamps


def generate_dataset(scenario, size, seed, split_tag):
    """size independent realizations; per-sample child seeds keep any one
    sample reproducible regardless of generation order."""
    if size < 1:
        raise ValueError("dataset size must be >= 1")
    children = np.random.SeedSequence(seed).spawn(size)
    samples = []
    clamp_count = 0
    for child in children:
        rng = np.random.default_rng(child)
        sample, clamps = realize_channel(scenario, rng)
        samples.append(sample)
        clamp_count += clamps
    return Dataset(scenario=scenario, samples=samples, seed=int(seed),
                   split_tag=str(split_tag), clamp_count=clamp_count)


def _fmt(values):
    return " ".join(repr(float(v)) for v in np.asarray(values).reshape(-1))


def save_dataset(dataset, path):
    sc = dataset.scenario
    lines = [
        DATASET_MAGIC,
        f"n_aps={sc.n_aps}",
        f"n_users={sc.n_users}",
        f"area={_fmt(sc.area)}",
        f"ap_positions={_fmt(sc.ap_positions)}",
        f"min_serving_aps={sc.min_serving_aps}",
        f"max_served_users={sc.max_served_users}",
        f"noise_power={repr(float(sc.noise_power))}",
        f"gain_scale={repr(float(sc.gain_scale))}",
        f"rician_variance={repr(float(sc.rician_variance))}",
        f"seed={dataset.seed}",
        f"split={dataset.split_tag}",
        f"clamp_count={dataset.clamp_count}",
        f"size={len(dataset.samples)}",
    ]
    for i, s in enumerate(dataset.samples):
        lines.append(f"sample {i} u {_fmt(s.user_positions)} g {_fmt(s.gains)}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_dataset(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise SchemaError(f"{path}: empty file")
    if lines[0] != DATASET_MAGIC:
        if lines[0].startswith("cfassign-dataset"):
            raise SchemaError(f"{path}: unsupported schema version {lines[0]!r}")
        raise SchemaError(f"{path}: not a dataset file")
    header = {}
    body_start = None
    for i, line in enumerate(lines[1:], start=1):
        if line.startswith("sample "):
            body_start = i
            break
        if "=" not in line:
            raise SchemaError(f"{path}: malformed header line {line!r}")
        key, value = line.split("=", 1)
        header[key] = value
    required = ["n_aps", "n_users", "area", "ap_positions", "min_serving_aps",
                "max_served_users", "noise_power", "gain_scale",
                "rician_variance", "seed", "split", "clamp_count", "size"]
    for key in required:
        if key not in header:
            raise SchemaError(f"{path}: missing header key {key!r}")
    n_aps = int(header["n_aps"])
    n_users = int(header["n_users"])
    area = tuple(float(v) for v in header["area"].split())
    ap_flat = [float(v) for v in header["ap_positions"].split()]
    if len(ap_flat) != 2 * n_aps:
        raise SchemaError(f"{path}: ap_positions length mismatch")
    scenario = Scenario(
        n_aps=n_aps, n_users=n_users, area=area,
        ap_positions=tuple((ap_flat[2 * i], ap_flat[2 * i + 1]) for i in range(n_aps)),
        min_serving_aps=int(header["min_serving_aps"]),
        max_served_users=int(header["max_served_users"]),
        noise_power=float(header["noise_power"]),
        gain_scale=float(header["gain_scale"]),
        rician_variance=float(header["rician_variance"]))
    size = int(header["size"])
    samples = []
    if body_start is None:
        body_start = len(lines)
    for i, line in enumerate(lines[body_start:]):
        parts = line.split()
        if len(parts) < 4 or parts[0] != "sample" or int(parts[1]) != i:
            raise SchemaError(f"{path}: bad sample record at index {i}")
        if parts[2] != "u" or "g" not in parts:
            raise SchemaError(f"{path}: bad sample record structure at index {i}")
        gpos = parts.index("g")
        u = np.array([float(v) for v in parts[3:gpos]]).reshape(n_users, 2)
        g = np.array([float(v) for v in parts[gpos + 1:]])
        if g.size != n_users * n_aps:
            raise SchemaError(f"{path}: gain count mismatch at sample {i}")
        if np.any(g < 0):
            raise SchemaError(f"{path}: negative gain at sample {i}")
        samples.append(ChannelRealization(gains=g.reshape(n_users, n_aps),
                                          user_positions=u))
    if len(samples) != size:
        raise SchemaError(f"{path}: expected {size} samples, found {len(samples)}")
    return Dataset(scenario=scenario, samples=samples, seed=int(header["seed"]),
                   split_tag=header["split"], clamp_count=int(header["clamp_count"]))
