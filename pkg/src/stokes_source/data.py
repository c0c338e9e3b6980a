"""Ground-truth sources, noisy synthetic observations, and their on-disk form.

Observation noise is multiplicative and pointwise: every velocity dof at
every time node is scaled by (1 + delta * r) with r drawn i.i.d. uniformly
from [-1, 1).  The draws come from a small, explicitly specified generator
(a splitmix64-expanded seed feeding an xorshift64* stream) so realizations
are reproducible bit-exactly on any platform.
"""

import json
import struct
from dataclasses import dataclass

import numpy as np

from .fem import TimeSeries, forward_solve

_MASK64 = (1 << 64) - 1
_OBS_MAGIC = b"UOBSSNP1"


@dataclass(frozen=True)
class SourceSpec:
    """Separated source sigma(t) f(x): known time profile, nodal space factor."""

    sigma: object  # callable t -> value, vectorized over arrays
    f: np.ndarray  # (2 n_vertices,) nodal values, zero outside the support


@dataclass(frozen=True)
class NoiseModel:
    delta: float = 0.0
    seed: int = 42

    def __post_init__(self):
        if self.delta < 0:
            raise ValueError("delta must be nonnegative")


class PortableUniform:
    """Deterministic uniform stream on [-1, 1).

    The 64-bit seed is expanded through one splitmix64 step into the state of
    an xorshift64* generator; doubles take the top 53 bits of each output
    word.  Chosen over library generators so that recorded noise realizations
    stay stable across library versions.
    """

    def __init__(self, seed):
        z = (int(seed) + 0x9E3779B97F4A7C15) & _MASK64
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        z ^= z >> 31
        self._state = z if z != 0 else 0x9E3779B97F4A7C15

    def _next_word(self):
        x = self._state
        x ^= x >> 12
        x = (x ^ (x << 25)) & _MASK64
        x ^= x >> 27
        self._state = x
        return (x * 0x2545F4914F6CDD1D) & _MASK64

    def uniform_pm1(self, n):
        out = np.empty(n)
        for i in range(n):
            out[i] = (self._next_word() >> 11) * 2.0**-53 * 2.0 - 1.0
        return out


def interpolate_on_support(mesh, scalar_fn):
    """Nodal vector field with both components equal to scalar_fn(x).

    Values are set on vertices of tagged triangles and are identically zero
    everywhere else.
    """
    mask = mesh.omega_vertex_mask()
    vals = np.zeros(mesh.n_vertices)
    vals[mask] = scalar_fn(mesh.vertices[mask])
    return np.concatenate([vals, vals])


# Benchmark catalog: spatial factor formula and the flat initial guess used
# with it.
_EXAMPLES = {
    1: (lambda x: 0.1 + x[:, 0] / 6.0 + x[:, 1] / 6.0, 0.8),
    2: (lambda x: np.exp(-((x[:, 0] - 1.5) ** 2 + (x[:, 1] - 1.5) ** 2)), 2.0),
    3: (lambda x: np.cos(np.pi * x[:, 0] / 3.0) * np.cos(np.pi * x[:, 1] / 3.0), 0.5),
}


def true_source(example_id, mesh):
    """Ground-truth source of one of the three benchmark cases.

    Returns a SourceSpec with sigma(t) = exp(t) and the formula interpolated
    on the tagged support vertices.
    """
    if example_id not in _EXAMPLES:
        raise ValueError(f"unknown example_id {example_id!r}; expected 1, 2 or 3")
    formula, _ = _EXAMPLES[example_id]
    return SourceSpec(sigma=np.exp, f=interpolate_on_support(mesh, formula))


def initial_guess(example_id, mesh):
    """Flat initial iterate paired with each benchmark case."""
    if example_id not in _EXAMPLES:
        raise ValueError(f"unknown example_id {example_id!r}; expected 1, 2 or 3")
    _, level = _EXAMPLES[example_id]
    return interpolate_on_support(mesh, lambda x: np.full(len(x), level))


def make_observations(source, noise, config, mesh, ops=None):
    """Forward-solve from rest and contaminate the velocity snapshots.

    With delta = 0 the clean solve is returned unchanged (bit-exact).  Noise
    draws are consumed snapshot-major, dof-minor, one per velocity dof per
    time node, so a fixed seed pins the whole realization.
    """
    if ops is None:
        from .fem import assemble

        ops = assemble(mesh, config)
    clean = forward_solve(ops, source, u0=None, config=config)
    if noise.delta == 0.0:
        return TimeSeries(
            snapshots=clean.snapshots,
            t=clean.t,
            pressures=None,
            penalty_residual_max=clean.penalty_residual_max,
        )
    gen = PortableUniform(noise.seed)
    r = gen.uniform_pm1(clean.snapshots.size).reshape(clean.snapshots.shape)
    noisy = clean.snapshots * (1.0 + noise.delta * r)
    return TimeSeries(
        snapshots=noisy,
        t=clean.t,
        pressures=None,
        penalty_residual_max=clean.penalty_residual_max,
    )


def save_observations(path, series, h, meta=None):
    """Write velocity snapshots to a flat binary container plus JSON sidecar.

    Layout: 8-byte magic, little-endian u32 snapshot count, u32 dof count,
    f64 effective dt, f64 horizon T, f64 mesh size h, then the snapshot rows
    as raw float64.  The sidecar (same path + '.json') records provenance.
    """
    snaps = np.ascontiguousarray(series.snapshots, dtype="<f8")
    n_snap, n_dofs = snaps.shape
    header = _OBS_MAGIC + struct.pack(
        "<IIddd", n_snap, n_dofs, float(series.dt), float(series.t[-1]), float(h)
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(snaps.tobytes())
    sidecar = dict(meta or {})
    sidecar.setdefault("n_snapshots", n_snap)
    sidecar.setdefault("n_dofs", n_dofs)
    with open(str(path) + ".json", "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_observations(path):
    """Read a container written by `save_observations`.

    Returns (TimeSeries, meta_dict); time nodes are rebuilt with the same
    linspace call the solvers use, so reloaded data reproduce reconstructions
    bit-exactly.
    """
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != _OBS_MAGIC:
            raise ValueError(f"{path}: not an observation container (bad magic)")
        n_snap, n_dofs, dt, horizon, h = struct.unpack("<IIddd", fh.read(32))
        body = fh.read(n_snap * n_dofs * 8)
    if len(body) != n_snap * n_dofs * 8:
        raise ValueError(f"{path}: truncated body")
    snaps = np.frombuffer(body, dtype="<f8").reshape(n_snap, n_dofs).copy()
    t = np.linspace(0.0, horizon, n_snap)
    if n_snap > 1 and abs(t[1] - t[0] - dt) > 1e-12 * max(dt, 1.0):
        raise ValueError(f"{path}: header dt inconsistent with horizon")
    try:
        with open(str(path) + ".json") as fh:
            meta = json.load(fh)
    except FileNotFoundError:
        meta = {}
    meta["h"] = h
    return TimeSeries(snapshots=snaps, t=t, pressures=None), meta
