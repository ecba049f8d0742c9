"""JSON problem definitions.

A config is either a builtin reference::

    {"builtin": "double-well", "params": {"lam": 0.5, "epsilon": 1.0}}

or a full problem::

    {
      "domain": {"lo": [-2.5], "hi": [0.5]},
      "drift": {"potential": [[1, 0, -2, 0, 1]]},      # or {"polynomial": [[...]]}
      "diffusion": [[1.414]],
      "basis": [{"family": "gaussian_bump", "direction": [1], "center": [-1], "width": 0.5},
                {"family": "constant", "direction": [1]},
                {"family": "polynomial", "direction": [1], "coord": 0, "power": 1}],
      "lambda": 1.0, "initial_state": [-1.0], "dt": 0.01, "t_max": 50,
      "running_cost": {"const": 1.0}, "terminal_cost": {"coef": [[0, 1]]},
      "alpha": 1.414, "bridge": false, "fixed_horizon": false
    }

Polynomial coefficient rows are in ascending powers, one row per
coordinate.  ``alpha`` defaults to the smallest kept singular value of the
diffusion matrix.
"""
import json

from .errors import InvalidInputError
from .model import (
    BasisFunction,
    Box,
    ConstantDiffusion,
    Cost,
    PolynomialDrift,
    ProblemSpec,
    builtin,
)

_TOP_KEYS = {
    "name", "dimension", "domain", "drift", "diffusion", "basis", "lambda", "initial_state",
    "dt", "t_max", "running_cost", "terminal_cost", "alpha", "bridge", "fixed_horizon",
}


def _cost(d):
    if d is None:
        return Cost()
    unknown = set(d) - {"const", "coef", "lo_weight", "hi_weight"}
    if unknown:
        raise InvalidInputError(f"unknown cost fields {sorted(unknown)}")
    return Cost(float(d.get("const", 0.0)), d.get("coef"), d.get("lo_weight"), d.get("hi_weight"))


def _basis(entry, domain):
    family = entry.get("family")
    direction = entry.get("direction")
    if direction is None:
        raise InvalidInputError("basis entry needs a direction")
    if family == "constant":
        b = BasisFunction.constant(direction)
    elif family == "gaussian_bump":
        b = BasisFunction.gaussian_bump(direction, entry["center"], entry.get("width", 1.0))
    elif family == "polynomial":
        b = BasisFunction.polynomial(direction, entry.get("coord", 0), entry["power"], domain)
    else:
        raise InvalidInputError(f"unknown basis family {family!r}")
    if "sup_bound" in entry:
        b = BasisFunction(b.kind, b.direction, float(entry["sup_bound"]), b.center, b.width,
                          b.coord, b.power)
    return b


def problem_from_dict(cfg):
    """Build a :class:`ProblemSpec` from a parsed JSON object."""
    if not isinstance(cfg, dict):
        raise InvalidInputError("problem config must be a JSON object")
    if "builtin" in cfg:
        return builtin(cfg["builtin"], **cfg.get("params", {}))
    unknown = set(cfg) - _TOP_KEYS
    if unknown:
        raise InvalidInputError(f"unknown problem fields {sorted(unknown)}")
    try:
        domain = Box(cfg["domain"]["lo"], cfg["domain"]["hi"])
        drift_cfg = cfg["drift"]
        if "potential" in drift_cfg:
            drift = PolynomialDrift.from_potential(drift_cfg["potential"])
        else:
            drift = PolynomialDrift(drift_cfg["polynomial"])
        spec = ProblemSpec(
            domain=domain,
            drift=drift,
            diffusion=ConstantDiffusion(cfg["diffusion"]),
            basis=tuple(_basis(e, domain) for e in cfg["basis"]),
            lam=float(cfg["lambda"]),
            initial_state=cfg["initial_state"],
            dt=float(cfg["dt"]),
            t_max=float(cfg["t_max"]),
            running_cost=_cost(cfg.get("running_cost")),
            terminal_cost=_cost(cfg.get("terminal_cost")),
            alpha=cfg.get("alpha"),
            bridge=bool(cfg.get("bridge", False)),
            fixed_horizon=bool(cfg.get("fixed_horizon", False)),
            name=str(cfg.get("name", "custom")),
        )
    except KeyError as exc:
        raise InvalidInputError(f"problem config is missing {exc}") from None
    except (TypeError, ValueError) as exc:
        raise InvalidInputError(f"bad problem config: {exc}") from None
    if "dimension" in cfg and int(cfg["dimension"]) != spec.dimension:
        raise InvalidInputError("declared dimension does not match the domain")
    return spec


def load_problem(path):
    with open(path) as fh:
        try:
            cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InvalidInputError(f"{path}: {exc}") from None
    return problem_from_dict(cfg)
