"""Experiment configuration: JSON schema, validation, and construction of
noise models, systems, and references from a config document."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Optional

import jsonschema
import numpy as np

from .lti import LtiSystem, dc_gain, make_diffusion_system
from .uncertainty import GAUSSIAN, NoiseModel, student_t

KNOWN_METHODS = (
    "nonlinear",
    "sqp",
    "one_iteration",
    "predictor16",
    "deepc17",
    "deepc-unreg",
)

_PIECEWISE = {
    "type": "array",
    "minItems": 1,
    "items": {
        "type": "array",
        "prefixItems": [{"type": "number"}, {"type": "integer", "minimum": 1}],
        "minItems": 2,
        "maxItems": 2,
    },
}

_NOISE_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["family", "sigma_w2", "sigma_v2"],
    "properties": {
        "family": {"enum": ["gaussian", "student_t"]},
        "xi": {"type": "number", "exclusiveMinimum": 2},
        "sigma_w2": {"type": "number", "minimum": 0},
        "sigma_v2": {"type": "number", "minimum": 0},
        "rho": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "decay_horizon": {"type": "integer", "minimum": 0},
    },
}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["task", "system", "horizon", "data", "offline_noise",
                 "online_noise", "methods"],
    "properties": {
        "task": {"enum": ["t1", "t2", "t3"]},
        "system": {
            "type": "object",
            "additionalProperties": False,
            "required": ["type"],
            "properties": {
                "type": {"enum": ["random", "diffusion", "file"]},
                "n_x": {"type": "integer", "minimum": 1},
                "n_u": {"type": "integer", "minimum": 1},
                "n_y": {"type": "integer", "minimum": 1},
                "alpha": {"type": "number"},
                "beta": {"type": "number"},
                "path": {"type": "string"},
            },
        },
        "horizon": {
            "type": "object",
            "additionalProperties": False,
            "required": ["L", "L0"],
            "properties": {
                "L": {"type": "integer", "minimum": 1},
                "L0": {"type": "integer", "minimum": 0},
            },
        },
        "data": {
            "type": "object",
            "additionalProperties": False,
            "required": ["N", "construction"],
            "properties": {
                "N": {"type": "integer", "minimum": 1},
                "construction": {"enum": ["hankel", "page"]},
            },
        },
        "offline_noise": _NOISE_SCHEMA,
        "online_noise": _NOISE_SCHEMA,
        "control": {
            "type": "object",
            "additionalProperties": False,
            "required": ["q", "r", "y_ref", "u_ref"],
            "properties": {
                "q": {"type": "number", "exclusiveMinimum": 0},
                "r": {"type": "number", "exclusiveMinimum": 0},
                "y_ref": _PIECEWISE,
                "u_ref": {"anyOf": [{"const": "dc_gain"}, _PIECEWISE]},
            },
        },
        "methods": {
            "type": "array",
            "minItems": 1,
            "items": {"enum": list(KNOWN_METHODS)},
        },
        "predictor_lambda": {"type": ["number", "null"], "minimum": 0},
        "deepc_soft_yp": {"type": "boolean"},
        "trials": {"type": "integer", "minimum": 1},
        "base_seed": {"type": "integer", "minimum": 0},
    },
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment description, kept alongside its raw document."""

    raw: dict

    def __post_init__(self):
        jsonschema.validate(self.raw, CONFIG_SCHEMA)
        if self.task != "t1" and self.past_length < 1:
            raise ValueError("prediction and control need L0 >= 1")
        if self.past_length > self.horizon:
            raise ValueError("L0 must not exceed L")
        if self.data_length < self.horizon:
            raise ValueError("data length N must be at least the window L")
        if self.task == "t3":
            if "control" not in self.raw:
                raise ValueError("control tasks require a control block")
            steps = sum(s for _, s in self.raw["control"]["y_ref"])
            if steps != self.horizon - self.past_length:
                raise ValueError(
                    f"y_ref covers {steps} steps, expected {self.horizon - self.past_length}"
                )
        for key in ("offline_noise", "online_noise"):
            block = self.raw[key]
            if block["family"] == "student_t":
                if "xi" not in block:
                    raise ValueError(f"{key}: student_t requires xi")
                if block.get("rho", 0.0) > 0:
                    raise ValueError(f"{key}: correlated student_t is not supported")
            if block.get("rho", 0.0) > 0 and block.get("decay_horizon", 0) < 1:
                raise ValueError(f"{key}: correlated noise needs a decay horizon")

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls(raw=json.loads(text))

    @property
    def task(self) -> str:
        return self.raw["task"]

    @property
    def horizon(self) -> int:
        return int(self.raw["horizon"]["L"])

    @property
    def past_length(self) -> int:
        return int(self.raw["horizon"]["L0"])

    @property
    def data_length(self) -> int:
        return int(self.raw["data"]["N"])

    @property
    def construction(self) -> str:
        return self.raw["data"]["construction"]

    @property
    def methods(self) -> list[str]:
        return list(self.raw["methods"])

    @property
    def trials(self) -> int:
        return int(self.raw.get("trials", 100))

    @property
    def base_seed(self) -> int:
        return int(self.raw.get("base_seed", 0))

    @property
    def predictor_lambda(self) -> Optional[float]:
        val = self.raw.get("predictor_lambda")
        return None if val is None else float(val)

    @property
    def deepc_soft_yp(self) -> bool:
        return bool(self.raw.get("deepc_soft_yp", True))

    @property
    def dims(self) -> tuple[int, int]:
        sys_block = self.raw["system"]
        if sys_block["type"] == "diffusion":
            return 1, 1
        if sys_block["type"] == "file":
            sysm = self.load_file_system()
            return sysm.n_u, sysm.n_y
        return int(sys_block.get("n_u", 1)), int(sys_block.get("n_y", 1))

    def load_file_system(self) -> LtiSystem:
        with open(self.raw["system"]["path"], encoding="utf-8") as fh:
            return LtiSystem.from_json_dict(json.load(fh))

    def make_system(self, rng: np.random.Generator) -> LtiSystem:
        block = self.raw["system"]
        if block["type"] == "diffusion":
            return make_diffusion_system(
                float(block.get("alpha", 0.4)), float(block.get("beta", 0.3))
            )
        if block["type"] == "file":
            return self.load_file_system()
        from .lti import random_system

        return random_system(
            int(block.get("n_x", 10)), int(block.get("n_u", 1)),
            int(block.get("n_y", 1)), rng,
        )

    def _noise_model(self, key: str) -> NoiseModel:
        block = self.raw[key]
        n_u, n_y = self.dims
        family = GAUSSIAN if block["family"] == "gaussian" else student_t(block["xi"])
        w0 = float(block["sigma_w2"]) * np.eye(n_u)
        v0 = float(block["sigma_v2"]) * np.eye(n_y)
        rho = float(block.get("rho", 0.0))
        if rho == 0.0:
            return NoiseModel.iid(family, w0, v0)
        return NoiseModel.exp_decay(
            family, w0, v0, rho, int(block["decay_horizon"]),
            max_window=self.horizon,
        )

    def offline_noise_model(self) -> NoiseModel:
        return self._noise_model("offline_noise")

    def online_noise_model(self) -> NoiseModel:
        return self._noise_model("online_noise")

    def expand_piecewise(self, spec: list, channels: int) -> np.ndarray:
        rows = []
        for value, steps in spec:
            rows.extend([[float(value)] * channels] * int(steps))
        return np.asarray(rows)

    def references(self, system: LtiSystem) -> tuple[np.ndarray, np.ndarray, float, float]:
        """Expanded (u_ref, y_ref, q, r) for the control task."""
        block = self.raw["control"]
        n_u, n_y = self.dims
        y_ref = self.expand_piecewise(block["y_ref"], n_y)
        if block["u_ref"] == "dc_gain":
            gain = dc_gain(system)
            if n_u != 1 or n_y != 1:
                raise ValueError("dc_gain references are defined for scalar systems")
            u_ref = y_ref / float(gain[0, 0])
        else:
            u_ref = self.expand_piecewise(block["u_ref"], n_u)
        return u_ref, y_ref, float(block["q"]), float(block["r"])

    def canonical_json(self) -> str:
        return json.dumps(self.raw, sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()
