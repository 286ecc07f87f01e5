"""Synthetic DIC datasets extracted from FEM oracle solutions.

Surface displacement samples plus the global force series.  Edge nodes
can be removed to mimic the correlation loss real DIC suffers near
specimen edges, and random dropout emulates patchy speckle coverage.
Points live wherever the data mesh puts them; nothing is ever
interpolated onto the computational grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidArgumentError, MeshParseError
from .mesh import FACE_TABLE

__all__ = ["DicDataset", "extract", "dropout", "add_noise",
           "save_dataset", "load_dataset", "surface_quads", "edge_nodes"]


@dataclass(frozen=True)
class DicDataset:
    """Point displacement samples and the global force series."""

    points: np.ndarray  # (Nu, 3) measurement coordinates, mm
    times: np.ndarray  # (Nu,) normalized measurement times
    disps: np.ndarray  # (Nu, 3) measured displacements, mm
    force_times: np.ndarray  # (Nt,)
    forces: np.ndarray  # (Nt,) net force, N
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("points", "times", "disps", "force_times", "forces"):
            arr = np.ascontiguousarray(np.asarray(getattr(self, name), dtype=np.float64))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.points.shape != self.disps.shape or self.points.ndim != 2:
            raise InvalidArgumentError("points and disps must both be (Nu, 3)")
        if self.times.shape != (self.points.shape[0],):
            raise InvalidArgumentError("times must be (Nu,)")
        if self.force_times.shape != self.forces.shape:
            raise InvalidArgumentError("force series shapes disagree")

    @property
    def n_samples(self):
        return self.points.shape[0]


def surface_quads(mesh, surface):
    """Element faces whose four nodes all lie in the surface node set."""
    ids = mesh.node_set(surface)
    member = np.zeros(mesh.n_nodes, dtype=bool)
    member[ids] = True
    quads = []
    for conn in mesh.elements:
        for face in FACE_TABLE:
            quad = conn[face]
            if member[quad].all():
                quads.append(quad)
    return np.asarray(quads, dtype=np.int64)


def edge_nodes(quads):
    """Nodes on the exterior edges of a quad patch (edges used once)."""
    counts = {}
    for quad in quads:
        for k in range(4):
            a, b = int(quad[k]), int(quad[(k + 1) % 4])
            key = (a, b) if a < b else (b, a)
            counts[key] = counts.get(key, 0) + 1
    out = set()
    for (a, b), c in counts.items():
        if c == 1:
            out.add(a)
            out.add(b)
    return out


def extract(solution, data_mesh, surface="zmax", remove_edges=True):
    """Sample one FEM solution on a surface: one sample per surviving
    node per time step, plus the solution's force series."""
    ids = data_mesh.node_set(surface)
    surviving = list(ids)
    if remove_edges:
        quads = surface_quads(data_mesh, surface)
        if quads.size == 0:
            raise InvalidArgumentError(
                f"surface {surface!r} has no element faces for edge detection"
            )
        dropped = edge_nodes(quads)
        surviving = [i for i in surviving if int(i) not in dropped]
    if not surviving:
        raise InvalidArgumentError("no surface samples survive edge removal")
    surviving = np.asarray(surviving, dtype=np.int64)

    n_t = solution.times.shape[0]
    points = np.tile(data_mesh.node_coords[surviving], (n_t, 1))
    times = np.repeat(solution.times, surviving.size)
    disps = solution.displacements[:, surviving, :].reshape(-1, 3)
    return DicDataset(
        points=points,
        times=times,
        disps=disps,
        force_times=solution.times,
        forces=solution.f_net,
        provenance={
            "surface": surface,
            "remove_edges": bool(remove_edges),
            "points_per_step": int(surviving.size),
        },
    )


def dropout(dataset, fraction, seed):
    """Keep a uniformly random subset of round(fraction * Nu) samples.

    Deterministic per seed; the force series is untouched.
    """
    if not 0.0 < fraction <= 1.0:
        raise InvalidArgumentError(f"fraction must be in (0, 1], got {fraction}")
    if fraction == 1.0:
        return replace(
            dataset,
            provenance={**dataset.provenance, "fraction": 1.0, "seed": seed},
        )
    n_keep = int(round(fraction * dataset.n_samples))
    if n_keep == 0:
        raise InvalidArgumentError(
            f"fraction {fraction} of {dataset.n_samples} samples keeps none"
        )
    rng = np.random.default_rng(seed)
    keep = np.sort(rng.choice(dataset.n_samples, size=n_keep, replace=False))
    return DicDataset(
        points=dataset.points[keep],
        times=dataset.times[keep],
        disps=dataset.disps[keep],
        force_times=dataset.force_times,
        forces=dataset.forces,
        provenance={**dataset.provenance, "fraction": float(fraction), "seed": seed},
    )


def add_noise(dataset, sigma, seed):
    """Perturb displacements with i.i.d. zero-mean Gaussian noise."""
    if sigma < 0.0:
        raise InvalidArgumentError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0.0:
        return replace(
            dataset, provenance={**dataset.provenance, "noise_sigma": 0.0}
        )
    rng = np.random.default_rng(seed)
    disps = dataset.disps + rng.normal(0.0, sigma, size=dataset.disps.shape)
    return DicDataset(
        points=dataset.points,
        times=dataset.times,
        disps=disps,
        force_times=dataset.force_times,
        forces=dataset.forces,
        provenance={**dataset.provenance, "noise_sigma": float(sigma),
                    "noise_seed": seed},
    )


def save_dataset(dataset, path):
    """Versioned whitespace-delimited text; floats round-trip exactly."""
    lines = ["caliper-dic v1", f"forces {dataset.forces.shape[0]}"]
    for t, f in zip(dataset.force_times, dataset.forces):
        lines.append(f"{float(t)!r} {float(f)!r}")
    lines.append(f"samples {dataset.n_samples}")
    for p, t, u in zip(dataset.points, dataset.times, dataset.disps):
        lines.append(
            f"{float(p[0])!r} {float(p[1])!r} {float(p[2])!r} {float(t)!r} "
            f"{float(u[0])!r} {float(u[1])!r} {float(u[2])!r}"
        )
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_dataset(path):
    with open(path) as fh:
        tokens = fh.read().split()
    pos = 0

    def take(field):
        nonlocal pos
        if pos >= len(tokens):
            raise MeshParseError("unexpected end of file", field=field)
        tok = tokens[pos]
        pos += 1
        return tok

    def take_float(field):
        tok = take(field)
        try:
            return float(tok)
        except ValueError:
            raise MeshParseError(f"expected number, got {tok!r}", field=field) from None

    if take("header") != "caliper-dic" or take("version") != "v1":
        raise MeshParseError("not a caliper-dic v1 file", field="header")
    if take("forces") != "forces":
        raise MeshParseError("expected 'forces' block", field="forces")
    n_t = int(take("force count"))
    ft = np.empty(n_t)
    fv = np.empty(n_t)
    for i in range(n_t):
        ft[i] = take_float("force time")
        fv[i] = take_float("force value")
    if take("samples") != "samples":
        raise MeshParseError("expected 'samples' block", field="samples")
    n_u = int(take("sample count"))
    pts = np.empty((n_u, 3))
    tt = np.empty(n_u)
    uu = np.empty((n_u, 3))
    for i in range(n_u):
        pts[i] = [take_float("x"), take_float("y"), take_float("z")]
        tt[i] = take_float("t")
        uu[i] = [take_float("ux"), take_float("uy"), take_float("uz")]
    return DicDataset(points=pts, times=tt, disps=uu, force_times=ft, forces=fv)
