"""Coefficient files: the hand-off between fitting and training."""
from __future__ import annotations

from importlib import resources

from .. import _jsonio
from .functions import ActivationKind, CombinationParams, ObjectiveMode, constraint_residual

FIELDS = ("activation", "k", "mode", "a", "c", "objective_value", "constraint_residual",
          "interval", "epsilon_tail", "seed")


class CoefficientFileError(ValueError):
    pass


def to_dict(params: CombinationParams) -> dict:
    if params.activation is None:
        raise CoefficientFileError("coefficient file needs the activation the parameters were fitted to")
    return {
        "activation": params.activation.value,
        "k": params.k,
        "mode": params.objective_mode.value,
        "a": list(params.a),
        "c": list(params.c),
        "objective_value": params.objective_value,
        "constraint_residual": constraint_residual(params),
        "interval": list(params.interval),
        "epsilon_tail": params.epsilon_tail,
        "seed": params.seed,
    }


def from_dict(data: dict) -> CombinationParams:
    missing = [f for f in FIELDS if f not in data]
    if missing:
        raise CoefficientFileError(f"coefficient file is missing fields: {', '.join(missing)}")
    try:
        return CombinationParams(
            a=data["a"], c=data["c"], k=int(data["k"]),
            objective_mode=ObjectiveMode.parse(data["mode"]),
            objective_value=float(data["objective_value"]),
            interval=tuple(float(v) for v in data["interval"]),
            epsilon_tail=float(data["epsilon_tail"]),
            activation=ActivationKind.parse(data["activation"]),
            seed=data["seed"],
        )
    except (TypeError, ValueError) as exc:
        raise CoefficientFileError(str(exc)) from exc


def save(params: CombinationParams, path) -> None:
    _jsonio.dump(to_dict(params), path)


def load(path) -> CombinationParams:
    try:
        data = _jsonio.load(path)
    except ValueError as exc:
        raise CoefficientFileError(f"{path}: not valid JSON ({exc})") from exc
    return from_dict(data)


def shipped(activation="gelu", mode="primitive") -> CombinationParams:
    """Reference coefficients bundled with the package."""
    name = f"{ActivationKind.parse(activation).value}_{ObjectiveMode.parse(mode).value}.json"
    ref = resources.files("approxbp.data").joinpath(name)
    if not ref.is_file():
        raise FileNotFoundError(f"no shipped coefficient file {name}")
    with resources.as_file(ref) as p:
        return load(p)


def shipped_path(activation="gelu", mode="primitive"):
    name = f"{ActivationKind.parse(activation).value}_{ObjectiveMode.parse(mode).value}.json"
    return resources.files("approxbp.data").joinpath(name)
