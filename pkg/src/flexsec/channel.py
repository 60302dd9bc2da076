"""Random FlexD network realizations: placement, pairing, fading, path loss.

Users ``2n`` and ``2n + 1`` (0-based) form pair ``n``. ``H[n, m]`` is the
channel from user ``m`` to user ``n`` and ``G[m, k]`` the channel from user
``m`` to eavesdropper ``k``.
"""
from __future__ import annotations

import csv
import io
import math
import struct
from dataclasses import dataclass, field

import numpy as np

SPEED_OF_LIGHT = 2.99792458e8


class PlacementError(RuntimeError):
    """No placement with the requested minimum separation could be found."""


class FormatError(ValueError):
    """A realization record is truncated, corrupt or of an unknown version."""


def dbm_to_watt(dbm):
    return 10.0 ** ((dbm - 30.0) / 10.0)


@dataclass
class SimConfig:
    n_pairs: int = 2
    n_eves: int = 2
    area_side_m: float = 1000.0
    carrier_hz: float = 1e9
    shadowing_db: float = 8.0
    pmax_dbm: float = 30.0
    noise_dbm: float = -100.0
    min_separation_m: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if self.area_side_m <= 0:
            raise ValueError("area_side_m must be positive")
        if self.n_pairs < 1 or self.n_eves < 1:
            raise ValueError("need at least one user pair and one eavesdropper")
        if self.min_separation_m < 0:
            raise ValueError("min_separation_m must be non-negative")
        if self.carrier_hz <= 0 or self.shadowing_db < 0:
            raise ValueError("carrier_hz must be positive and shadowing_db non-negative")
        if not (self.pmax_w > 0 and self.noise_w > 0):
            raise ValueError("power levels must convert to positive watts")

    @property
    def pmax_w(self):
        return dbm_to_watt(self.pmax_dbm)

    @property
    def noise_w(self):
        return dbm_to_watt(self.noise_dbm)


@dataclass
class NetworkRealization:
    user_xy: np.ndarray
    eve_xy: np.ndarray
    H: np.ndarray
    G: np.ndarray
    D: np.ndarray
    noise_w: float
    pmax_w: float
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def n_pairs(self):
        return self.H.shape[0] // 2

    @property
    def n_eves(self):
        return self.G.shape[1]

    def __eq__(self, other):
        if not isinstance(other, NetworkRealization):
            return NotImplemented
        return (self.noise_w == other.noise_w and self.pmax_w == other.pmax_w
                and all(np.array_equal(getattr(self, k), getattr(other, k))
                        for k in ("user_xy", "eve_xy", "H", "G", "D")))


def max_packable(side, sep):
    """Upper bound on the number of points in a ``side`` square at separation ``sep``.

    Disks of radius ``sep/2`` around the points fit in the square grown by
    ``sep``; hexagonal packing density bounds their number.
    """
    if sep <= 0:
        return math.inf
    return 2.0 * (side + sep) ** 2 / (math.sqrt(3.0) * sep ** 2)


def poisson_disk(n_points, side, sep, rng, max_attempts=None):
    """Dart throwing on an acceleration grid with a bounded number of darts."""
    if n_points > max_packable(side, sep):
        raise PlacementError(
            f"{n_points} points cannot be packed at {sep} m separation in a {side} m square")
    if sep <= 0:
        return rng.uniform(0.0, side, size=(n_points, 2))
    if max_attempts is None:
        max_attempts = 1000 + 200 * n_points
    cell = sep / math.sqrt(2.0)
    ncell = int(math.ceil(side / cell))
    grid = -np.ones((ncell, ncell), dtype=np.int64)
    pts = np.empty((n_points, 2))
    count = 0
    sep2 = sep * sep
    for _ in range(max_attempts):
        if count == n_points:
            break
        p = rng.uniform(0.0, side, size=2)
        ci = min(int(p[0] / cell), ncell - 1)
        cj = min(int(p[1] / cell), ncell - 1)
        block = grid[max(ci - 2, 0):ci + 3, max(cj - 2, 0):cj + 3]
        near = block[block >= 0]
        if near.size and np.min(np.sum((pts[near] - p) ** 2, axis=1)) < sep2:
            continue
        grid[ci, cj] = count
        pts[count] = p
        count += 1
    if count < n_points:
        raise PlacementError(
            f"placed only {count} of {n_points} points after {max_attempts} attempts")
    return pts


def sample_positions(cfg: SimConfig, rng):
    n_users = 2 * cfg.n_pairs
    pts = poisson_disk(n_users + cfg.n_eves, cfg.area_side_m, cfg.min_separation_m, rng)
    return pts[:n_users], pts[n_users:]


def pair_users(user_xy, rng):
    """Random perfect matching as a permutation; pair n = (perm[2n], perm[2n+1])."""
    n = len(user_xy)
    if n % 2:
        raise ValueError("an even number of users is required")
    return rng.permutation(n)


def path_loss_linear(d_m, carrier_hz):
    """Free-space power gain (lambda / (4 pi d))**2."""
    d = np.asarray(d_m, dtype=float)
    if np.any(d <= 0):
        raise ValueError("distance must be positive")
    lam = SPEED_OF_LIGHT / carrier_hz
    out = (lam / (4.0 * math.pi * d)) ** 2
    return float(out) if out.ndim == 0 else out


def channel_coefficient(pl, shadow_db, z):
    return np.sqrt(pl * 10.0 ** (shadow_db / 10.0)) * z


def draw_shadowing_db(shape, cfg: SimConfig, rng):
    return rng.normal(0.0, cfg.shadowing_db, size=shape)


def draw_fading(shape, rng):
    """Circularly-symmetric unit-power complex Gaussian samples."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)


def draw_channels(d_m, cfg: SimConfig, rng):
    """Rayleigh fading over free-space path loss and log-normal shadowing."""
    d = np.asarray(d_m, dtype=float)
    pl = path_loss_linear(d, cfg.carrier_hz)
    shadow = draw_shadowing_db(d.shape, cfg, rng)
    return channel_coefficient(pl, shadow, draw_fading(d.shape, rng))


def draw_channel(d_m, cfg: SimConfig, rng):
    return complex(draw_channels(np.asarray(float(d_m)), cfg, rng))


def _distances(a, b):
    return np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(-1))


def generate(cfg: SimConfig, seed=None) -> NetworkRealization:
    seed = cfg.seed if seed is None else seed
    pos_rng, pair_rng, ch_rng = (np.random.default_rng(s)
                                 for s in np.random.SeedSequence(seed).spawn(3))
    user_xy, eve_xy = sample_positions(cfg, pos_rng)
    user_xy = user_xy[pair_users(user_xy, pair_rng)]

    n_users = len(user_xy)
    duu = _distances(user_xy, user_xy)
    np.fill_diagonal(duu, 1.0)
    H = draw_channels(duu, cfg, ch_rng)
    np.fill_diagonal(H, 0.0)
    D = _distances(user_xy, eve_xy)
    G = draw_channels(D, cfg, ch_rng)
    assert H.shape == (n_users, n_users)
    return NetworkRealization(user_xy, eve_xy, H, G, D, cfg.noise_w, cfg.pmax_w,
                              meta={"seed": int(seed)})


def generate_many(cfg: SimConfig, count, seed=None):
    """``count`` realizations seeded ``seed, seed+1, ...`` (default ``cfg.seed``)."""
    base = cfg.seed if seed is None else seed
    return [generate(cfg, base + i) for i in range(count)]


# -- serialization -----------------------------------------------------------

RECORD_MAGIC = b"FXNR"
DATASET_MAGIC = b"FXDS"
FORMAT_VERSION = 1
_HEAD = struct.Struct("<4sIII")  # magic, version, n_users, n_eves


def _pack_floats(a):
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


def realization_to_bytes(real: NetworkRealization) -> bytes:
    n_users, k = real.G.shape
    parts = [_HEAD.pack(RECORD_MAGIC, FORMAT_VERSION, n_users, k),
             _pack_floats([real.noise_w, real.pmax_w]),
             _pack_floats(real.user_xy), _pack_floats(real.eve_xy),
             _pack_floats(real.H.real), _pack_floats(real.H.imag),
             _pack_floats(real.G.real), _pack_floats(real.G.imag),
             _pack_floats(real.D)]
    return b"".join(parts)


def _record_size(n_users, k):
    floats = 2 + 2 * n_users + 2 * k + 2 * n_users * n_users + 3 * n_users * k
    return _HEAD.size + 8 * floats


def realization_from_bytes(buf, offset=0):
    """Parse one record; returns ``(realization, next_offset)``."""
    if len(buf) - offset < _HEAD.size:
        raise FormatError("truncated record header")
    magic, version, n_users, k = _HEAD.unpack_from(buf, offset)
    if magic != RECORD_MAGIC:
        raise FormatError(f"bad record magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported record version {version}")
    end = offset + _record_size(n_users, k)
    if len(buf) < end:
        raise FormatError("truncated record body")
    vals = np.frombuffer(buf, dtype="<f8", count=(end - offset - _HEAD.size) // 8,
                         offset=offset + _HEAD.size).astype(float)
    pos = 2

    def take(shape):
        nonlocal pos
        size = int(np.prod(shape))
        out = vals[pos:pos + size].reshape(shape)
        pos += size
        return out

    user_xy = take((n_users, 2))
    eve_xy = take((k, 2))
    H = take((n_users, n_users)) + 1j * take((n_users, n_users))
    G = take((n_users, k)) + 1j * take((n_users, k))
    D = take((n_users, k))
    real = NetworkRealization(user_xy, eve_xy, H, G, D, float(vals[0]), float(vals[1]))
    return real, end


def save_dataset(path, reals):
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sII", DATASET_MAGIC, FORMAT_VERSION, len(reals)))
        for r in reals:
            fh.write(realization_to_bytes(r))


def load_dataset(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < 12:
        raise FormatError("truncated dataset header")
    magic, version, count = struct.unpack_from("<4sII", buf, 0)
    if magic != DATASET_MAGIC:
        raise FormatError(f"bad dataset magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported dataset version {version}")
    out, off = [], 12
    for _ in range(count):
        r, off = realization_from_bytes(buf, off)
        out.append(r)
    if off != len(buf):
        raise FormatError("trailing bytes after last record")
    return out


def realization_to_csv(real: NetworkRealization) -> str:
    """Long-format CSV: one row per matrix entry, for eyeballing a realization."""
    sio = io.StringIO()
    w = csv.writer(sio)
    w.writerow(["matrix", "row", "col", "re", "im"])
    w.writerow(["noise_w", 0, 0, repr(real.noise_w), 0.0])
    w.writerow(["pmax_w", 0, 0, repr(real.pmax_w), 0.0])
    for name in ("user_xy", "eve_xy", "H", "G", "D"):
        a = getattr(real, name)
        for (i, j), v in np.ndenumerate(a):
            w.writerow([name, i, j, repr(float(np.real(v))), repr(float(np.imag(v)))])
    return sio.getvalue()
