"""Hyperelastic strain-energy densities and their analytic stresses.

Three models: a volumetric/isochoric split Neo-Hookean for general
rubbery behavior, Gent for chain lock-up, and the one-parameter
Blatz-Ko specialization (fixed Poisson response of 1/4) for compressible
foams.  The analytic first Piola-Kirchhoff stress and tangent feed the
FEM oracle; the training path differentiates the recorded energy
instead, and the two routes are cross-checked in the tests.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import GentLockupError, InvalidArgumentError

__all__ = [
    "Model",
    "MaterialSpec",
    "MODEL_PARAMS",
    "DEFAULT_BOUNDS",
    "energy_density",
    "pk1_stress",
    "pk1_batch",
    "pk1_tangent_batch",
    "bulk_from_poisson",
    "taped_energy_from_f",
]


class Model(enum.Enum):
    NEO_HOOKEAN = "neo_hookean"
    GENT = "gent"
    BLATZ_KO = "blatz_ko"


MODEL_PARAMS = {
    Model.NEO_HOOKEAN: ("K", "mu"),
    Model.GENT: ("K", "mu", "Jm"),
    Model.BLATZ_KO: ("mu",),
}

DEFAULT_BOUNDS = {"K": (0.0, 100.0), "mu": (0.0, 100.0), "Jm": (1.0, 10.0)}


@dataclass(frozen=True)
class MaterialSpec:
    """Model tag, parameter values, and inverse-mode trainability flags.

    Parameter values of trainable entries double as the ground truth in
    synthetic studies; the trainer re-initializes them at random inside
    `bounds` before optimizing.
    """

    model: Model
    params: dict
    trainable: tuple = ()
    bounds: dict = field(default_factory=dict)

    def __post_init__(self):
        model = Model(self.model)
        object.__setattr__(self, "model", model)
        expected = MODEL_PARAMS[model]
        got = tuple(sorted(self.params))
        if got != tuple(sorted(expected)):
            raise InvalidArgumentError(
                f"{model.value} expects parameters {expected}, got {got}"
            )
        params = {k: float(v) for k, v in self.params.items()}
        for k, v in params.items():
            if v <= 0.0:
                raise InvalidArgumentError(f"parameter {k} must be positive, got {v}")
        object.__setattr__(self, "params", params)
        trainable = tuple(self.trainable)
        for k in trainable:
            if k not in params:
                raise InvalidArgumentError(f"trainable parameter {k!r} unknown")
        object.__setattr__(self, "trainable", trainable)
        bounds = dict(self.bounds)
        for k in params:
            lo, hi = bounds.get(k, DEFAULT_BOUNDS[k])
            if not (0.0 <= lo < hi):
                raise InvalidArgumentError(f"bad bounds for {k}: ({lo}, {hi})")
            bounds[k] = (float(lo), float(hi))
        object.__setattr__(self, "bounds", bounds)

    @property
    def n_params(self):
        return len(self.params)

    def replace_params(self, **updates):
        new = dict(self.params)
        new.update(updates)
        return MaterialSpec(self.model, new, self.trainable, self.bounds)


def neo_hookean(K, mu, trainable=(), bounds=None):
    return MaterialSpec(Model.NEO_HOOKEAN, {"K": K, "mu": mu}, trainable, bounds or {})


def gent(K, mu, Jm, trainable=(), bounds=None):
    return MaterialSpec(Model.GENT, {"K": K, "mu": mu, "Jm": Jm}, trainable, bounds or {})


def blatz_ko(mu, trainable=(), bounds=None):
    return MaterialSpec(Model.BLATZ_KO, {"mu": mu}, trainable, bounds or {})


def bulk_from_poisson(mu, nu):
    """Bulk modulus matching (mu, nu) in the linear theory."""
    if not -1.0 < nu < 0.5:
        raise InvalidArgumentError(f"Poisson ratio must be in (-1, 0.5), got {nu}")
    if mu <= 0.0:
        raise InvalidArgumentError(f"shear modulus must be positive, got {mu}")
    return 2.0 * mu * (1.0 + nu) / (3.0 * (1.0 - 2.0 * nu))


def _volumetric(K, J):
    return 0.5 * K * (0.5 * (J * J - 1.0) - np.log(J))


def energy_density(spec, state):
    """Strain energy in MPa (mJ/mm^3); zero at the identity."""
    p = spec.params
    if spec.model is Model.NEO_HOOKEAN:
        return _volumetric(p["K"], state.J) + 0.5 * p["mu"] * (state.Ibar1 - 3.0)
    if spec.model is Model.GENT:
        stretch = state.Ibar1 - 3.0
        if stretch >= p["Jm"]:
            raise GentLockupError(stretch, p["Jm"])
        return _volumetric(p["K"], state.J) - 0.5 * p["mu"] * p["Jm"] * np.log(
            1.0 - stretch / p["Jm"]
        )
    if spec.model is Model.BLATZ_KO:
        return 0.5 * p["mu"] * (
            state.I2 / state.I3 + 2.0 * np.sqrt(state.I3) - 5.0
        )
    raise InvalidArgumentError(f"unknown model {spec.model}")


# ---------------------------------------------------------------------
# analytic first Piola-Kirchhoff stress and tangent (oracle path)


def pk1_batch(spec, f, params=None):
    """P = d(psi)/dF for an array of deformation gradients (..., 3, 3)."""
    p = params or spec.params
    f = np.asarray(f, dtype=np.float64)
    g = np.swapaxes(np.linalg.inv(f), -1, -2)  # F^{-T}
    j = np.linalg.det(f)[..., None, None]
    c = np.swapaxes(f, -1, -2) @ f
    i1 = np.trace(c, axis1=-2, axis2=-1)[..., None, None]

    if spec.model in (Model.NEO_HOOKEAN, Model.GENT):
        vol = 0.5 * p["K"] * (j * j - 1.0) * g
        dev = j ** (-2.0 / 3.0) * (f - (i1 / 3.0) * g)
        if spec.model is Model.NEO_HOOKEAN:
            return vol + p["mu"] * dev
        ibar1 = (j ** (-2.0 / 3.0) * i1)[..., 0, 0]
        s = (ibar1 - 3.0) / p["Jm"]
        if np.any(s >= 1.0):
            raise GentLockupError(float(np.max(ibar1 - 3.0)), p["Jm"])
        return vol + (p["mu"] / (1.0 - s))[..., None, None] * dev
    if spec.model is Model.BLATZ_KO:
        i3 = (j * j)
        i2 = 0.5 * (
            i1[..., 0, 0] ** 2 - np.trace(c @ c, axis1=-2, axis2=-1)
        )[..., None, None]
        w = i1 * f - f @ c
        return (p["mu"] / i3) * w + p["mu"] * (j - i2 / i3) * g
    raise InvalidArgumentError(f"unknown model {spec.model}")


def pk1_stress(spec, state):
    """Analytic P at a single state; closed form per model."""
    if spec.model is Model.GENT:
        stretch = state.Ibar1 - 3.0
        if stretch >= spec.params["Jm"]:
            raise GentLockupError(stretch, spec.params["Jm"])
    return pk1_batch(spec, state.F[None])[0]


def pk1_tangent_batch(spec, f, params=None):
    """A = dP/dF, shape (..., 3, 3, 3, 3) with A[..., i, j, k, l] = dP_ij/dF_kl."""
    p = params or spec.params
    f = np.asarray(f, dtype=np.float64)
    eye = np.eye(3)
    g = np.swapaxes(np.linalg.inv(f), -1, -2)
    j = np.linalg.det(f)
    c = np.swapaxes(f, -1, -2) @ f
    i1 = np.trace(c, axis1=-2, axis2=-1)

    def op(a, b, sub="...ij,...kl->...ijkl"):
        return np.einsum(sub, a, b)

    gg = op(g, g)
    g_il_kj = np.einsum("...il,...kj->...ijkl", g, g)
    dd = np.einsum("ik,jl->ijkl", eye, eye)

    if spec.model in (Model.NEO_HOOKEAN, Model.GENT):
        jm23 = (j ** (-2.0 / 3.0))[..., None, None]
        h = jm23 * (f - (i1[..., None, None] / 3.0) * g)
        c1 = 0.5 * p["K"] * (j * j - 1.0)
        dh = jm23[..., None, None] * (
            -(2.0 / 3.0) * np.einsum("...ij,...kl->...ijkl", f, g)
            + dd
            - (2.0 / 3.0) * np.einsum("...kl,...ij->...ijkl", f, g)
            + (2.0 * i1[..., None, None, None, None] / 9.0) * gg
            + (i1[..., None, None, None, None] / 3.0) * g_il_kj
        )
        a = (
            (p["K"] * j * j)[..., None, None, None, None] * gg
            - c1[..., None, None, None, None] * g_il_kj
        )
        if spec.model is Model.NEO_HOOKEAN:
            return a + p["mu"] * dh
        ibar1 = jm23[..., 0, 0] * i1
        s = (ibar1 - 3.0) / p["Jm"]
        if np.any(s >= 1.0):
            raise GentLockupError(float(np.max(ibar1 - 3.0)), p["Jm"])
        m = p["mu"] / (1.0 - s)
        hh = np.einsum("...kl,...ij->...ijkl", h, h)
        return (
            a
            + (2.0 * m * m / (p["mu"] * p["Jm"]))[..., None, None, None, None] * hh
            + m[..., None, None, None, None] * dh
        )
    if spec.model is Model.BLATZ_KO:
        i3 = j * j
        i2 = 0.5 * (i1 * i1 - np.trace(c @ c, axis1=-2, axis2=-1))
        b = f @ np.swapaxes(f, -1, -2)
        w = i1[..., None, None] * f - f @ c
        d1 = p["mu"] / i3
        d2 = p["mu"] * (j - i2 / i3)
        dw = (
            2.0 * np.einsum("...kl,...ij->...ijkl", f, f)
            + i1[..., None, None, None, None] * dd
            - np.einsum("ik,...lj->...ijkl", eye, c)
            - np.einsum("...il,...kj->...ijkl", f, f)
            - np.einsum("...ik,jl->...ijkl", b, eye)
        )
        return (
            -2.0 * d1[..., None, None, None, None]
            * np.einsum("...kl,...ij->...ijkl", g, w)
            + d1[..., None, None, None, None] * dw
            + np.einsum(
                "...kl,...ij->...ijkl",
                (p["mu"] * (j + 2.0 * i2 / i3))[..., None, None] * g
                - (2.0 * p["mu"] / i3)[..., None, None] * w,
                g,
            )
            - d2[..., None, None, None, None] * g_il_kj
        )
    raise InvalidArgumentError(f"unknown model {spec.model}")


# ---------------------------------------------------------------------
# recorded energy (training path)


def taped_energy_from_f(tape, spec, params, f_var, guard=None):
    """Record the strain energy of a batch of deformation gradients.

    `params` maps parameter names to Vars or floats.  With `guard` set
    (a dict with j_floor, gent_margin, penalty), non-physical samples
    are clamped and penalized quadratically instead of raising, so a
    replayed tape stays finite while early networks wander.  Returns
    (psi Var, diagnostics dict with the raw J Var).
    """
    pvals = {}
    for name in MODEL_PARAMS[spec.model]:
        v = params[name]
        pvals[name] = v if isinstance(v, ad.Var) else tape.const(float(v))

    j_raw = ad.det3(f_var)
    diag = {"J": j_raw}
    penalty = None
    if guard is not None:
        floor = guard.get("j_floor", 0.05)
        scale = guard.get("penalty", 1.0e6)
        under = ad.vrelu(floor - j_raw)
        j = j_raw + under
        penalty = scale * (under * under)
    else:
        j = j_raw

    c = ad.sym_tt(f_var)
    i1 = ad.trace3(c)

    if spec.model in (Model.NEO_HOOKEAN, Model.GENT):
        k, mu = pvals["K"], pvals["mu"]
        vol = 0.5 * k * ((j * j - 1.0) * 0.5 - ad.vlog(j))
        ibar1 = j ** (-2.0 / 3.0) * i1
        if spec.model is Model.NEO_HOOKEAN:
            psi = vol + 0.5 * mu * (ibar1 - 3.0)
        else:
            jm = pvals["Jm"]
            s = (ibar1 - 3.0) / jm
            if guard is not None:
                margin = guard.get("gent_margin", 0.95)
                over = ad.vrelu(s - margin)
                s = s - over
                penalty = penalty + guard.get("penalty", 1.0e6) * (over * over)
                diag["gent_overshoot"] = over
            psi = vol - 0.5 * mu * jm * ad.vlog(1.0 - s)
    elif spec.model is Model.BLATZ_KO:
        mu = pvals["mu"]
        i3 = j * j
        i2 = (i1 * i1 - ad.tt_square_trace(c)) * 0.5
        psi = 0.5 * mu * (i2 / i3 + 2.0 * j - 5.0)
    else:
        raise InvalidArgumentError(f"unknown model {spec.model}")

    if penalty is not None:
        psi = psi + penalty
    return psi, diag
