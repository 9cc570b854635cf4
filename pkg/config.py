#!/usr/bin/env python3
"""
Configuration management for the multifractal BRW toolkit
Layered defaults + YAML/JSON file + environment cap overrides
"""
import copy
import hashlib
import json
import os
from typing import Any, Dict, List, Optional

import yaml

from errors import ConfigError

SCHEMA_VERSION = "mfbrw/1"
ARTIFACT_VERSION = "1.0.0"

# environment variables that override the resource caps
CAP_ENV = {
    "sphere": "MFBRW_MAX_SPHERE",
    "ball": "MFBRW_MAX_BALL",
    "nodes": "MFBRW_MAX_NODES",
    "count_total": "MFBRW_MAX_COUNT_TOTAL",
}

OFFSPRING_KINDS = ("deterministic", "geometric", "binomial", "custom")

RUNTIME_ONLY_KEYS = (("simulation", "threads"), ("output", "directory"))


class BrwConfig:
    """Run configuration: walk, offspring law, grids, tolerances, caps"""

    def __init__(self, config_path: Optional[str] = "config.yaml", overrides: Optional[Dict[str, Any]] = None):
        self.config_path = config_path
        self.config = self._load_default_config()
        self._load_config_file()
        if overrides:
            self._deep_merge(self.config, overrides)
        self._apply_env_caps()
        self.validate()

    def _load_default_config(self) -> Dict[str, Any]:
        """Load default configuration"""
        return {
            "walk": {
                "rank": 2,
                "mu_e": 0.0,
                "mu": [],  # generator weights mirrored to inverses; empty = isotropic
            },
            "offspring": {
                "kind": "deterministic",  # deterministic | geometric | binomial | custom
                "k": 2,          # deterministic offspring count
                "mean": 1.8,     # target mean for geometric
                "k_max": 12,     # truncation for geometric / trials for binomial
                "p": 0.5,        # binomial success probability
                "weights": [],   # custom p_1..p_K
            },
            "spectrum": {
                "r": None,        # None = R (critical)
                "q_points": 201,
                "s_points": 201,
                "s_span": 20.0,
                "alpha_points": 21,
            },
            "tolerances": {
                "eps_fp": 1e-14,
                "fp_max_iter": 1_000_000,
                "newton_max_iter": 500,
                "eps_R": 1e-10,
                "divergence_margin": 1e-6,
                "eps_edge": 1e-6,
                "h_psi": 1e-6,
                "eps_varrho": 1e-12,
                "eps_power": 1e-12,
                "power_max_iter": 200_000,
                "eps_bal": 1e-10,
                "eps_bracket": 1e-9,
                "rho_star_gtol": 1e-9,
                "rho_star_max_iter": 10_000,
                "s_max": 40.0,
                "eps_route": 1e-5,
                "simplex_max_iter": 1000,
                "eps_dim": 1e-6,
                "golden_xatol": 1e-10,
                "hypothesis_tol": 1e-6,
            },
            "simulation": {
                "n": 20,
                "replicates": 200,
                "seed": 20240607,
                "threads": 1,
                "ray_count": 1000,
            },
            "acceptance": {
                # literal sizes are n = 20 with 10^4 replicates
                "many_to_one_n": 10,
                "many_to_one_replicates": 2000,
                "lln_depths": [15, 25],
                "lln_replicates": 50,
            },
            "oracle": {
                "kind": "length",  # length | ball | conditional | partition | counts | level
                "n": 2,
                "L": 2,
                "m": 0,
                "l": None,
                "delta": 0.2,
                "lam": [],
                "beta": 1.0,
                "counts": [],
                "r": None,
            },
            "caps": {
                "sphere": 5_000_000,
                "ball": 25_000_000,
                "nodes": 50_000_000,
                "count_total": 24,
            },
            "output": {
                "directory": "runs",
            },
        }

    def _load_config_file(self):
        """Load configuration from file if it exists"""
        if not self.config_path:
            return
        if not os.path.exists(self.config_path):
            return
        try:
            with open(self.config_path, "r") as f:
                if self.config_path.endswith(".yaml") or self.config_path.endswith(".yml"):
                    file_config = yaml.safe_load(f) or {}
                else:
                    file_config = json.load(f)
        except (OSError, yaml.YAMLError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read {self.config_path}: {e}")
        if not isinstance(file_config, dict):
            raise ConfigError(f"{self.config_path} must hold a mapping at top level")
        self._deep_merge(self.config, file_config)

    def _deep_merge(self, base_dict: Dict, update_dict: Dict, prefix: str = ""):
        """Deep merge two dictionaries, rejecting keys the defaults do not know"""
        for key, value in update_dict.items():
            dotted = f"{prefix}{key}"
            if key not in base_dict:
                raise ConfigError("unknown key", dotted)
            if isinstance(base_dict[key], dict):
                if not isinstance(value, dict):
                    raise ConfigError("expected a mapping", dotted)
                self._deep_merge(base_dict[key], value, dotted + ".")
            else:
                base_dict[key] = value

    def _apply_env_caps(self):
        for name, env in CAP_ENV.items():
            raw = os.environ.get(env)
            if raw:
                try:
                    self.config["caps"][name] = int(raw)
                except ValueError:
                    raise ConfigError(f"environment variable {env}={raw!r} is not an integer", f"caps.{name}")

    def validate(self):
        """Check every section against its invariants"""
        from free_group import StepDistribution
        StepDistribution.from_mapping(self.config["walk"])
        self.get_offspring_weights()
        for key, value in self.config["tolerances"].items():
            if not isinstance(value, (int, float)) or value <= 0:
                raise ConfigError(f"must be a positive number, got {value!r}", f"tolerances.{key}")
        for key, value in self.config["caps"].items():
            if not isinstance(value, int) or value <= 0:
                raise ConfigError(f"must be a positive integer, got {value!r}", f"caps.{key}")
        sim = self.config["simulation"]
        for key in ("n", "replicates", "threads", "ray_count"):
            if not isinstance(sim[key], int) or sim[key] < 1:
                raise ConfigError(f"must be a positive integer, got {sim[key]!r}", f"simulation.{key}")
        if not isinstance(sim["seed"], int) or not 0 <= sim["seed"] < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer", "simulation.seed")
        acc = self.config["acceptance"]
        for key in ("many_to_one_n", "many_to_one_replicates", "lln_replicates"):
            if not isinstance(acc[key], int) or acc[key] < 1:
                raise ConfigError(f"must be a positive integer, got {acc[key]!r}", f"acceptance.{key}")
        depths = acc["lln_depths"]
        if (not isinstance(depths, list) or len(depths) < 2
                or not all(isinstance(n, int) and n >= 1 for n in depths) or depths != sorted(set(depths))):
            raise ConfigError(f"must be at least two increasing positive depths, got {depths!r}",
                              "acceptance.lln_depths")
        r = self.config["spectrum"]["r"]
        if r is not None and (not isinstance(r, (int, float)) or r <= 0):
            raise ConfigError(f"must be a positive number or null, got {r!r}", "spectrum.r")

    def save_config(self, path: Optional[str] = None):
        """Save current configuration to file"""
        path = path or self.config_path
        with open(path, "w") as f:
            if path.endswith(".yaml") or path.endswith(".yml"):
                yaml.safe_dump(self.config, f, default_flow_style=False, indent=2)
            else:
                json.dump(self.config, f, indent=2)

    def as_dict(self) -> Dict[str, Any]:
        return copy.deepcopy(self.config)

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON dump of the merged configuration

        Thread count and output directory do not change results and are left out.
        """
        hashed = copy.deepcopy(self.config)
        for section, key in RUNTIME_ONLY_KEYS:
            hashed[section].pop(key, None)
        canonical = json.dumps(hashed, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def get_step_distribution(self):
        from free_group import StepDistribution
        return StepDistribution.from_mapping(self.config["walk"])

    def get_offspring_config(self) -> Dict[str, Any]:
        return self.config["offspring"]

    def get_offspring_weights(self) -> List[float]:
        """p_1..p_K for the configured offspring law"""
        from simulator import OffspringDistribution
        off = self.config["offspring"]
        kind = off["kind"]
        if kind not in OFFSPRING_KINDS:
            raise ConfigError(f"unknown offspring kind {kind!r}", "offspring.kind")
        try:
            if kind == "deterministic":
                law = OffspringDistribution.deterministic(int(off["k"]))
            elif kind == "geometric":
                law = OffspringDistribution.truncated_geometric(float(off["mean"]), int(off["k_max"]))
            elif kind == "binomial":
                law = OffspringDistribution.binomial(int(off["k_max"]), float(off["p"]))
            else:
                law = OffspringDistribution(off["weights"])
        except ValueError as e:
            raise ConfigError(str(e), "offspring")
        return list(law.weights)

    def get_offspring_distribution(self):
        from simulator import OffspringDistribution
        return OffspringDistribution(self.get_offspring_weights())

    def get_spectrum_config(self) -> Dict[str, Any]:
        return self.config["spectrum"]

    def get_tolerances(self) -> Dict[str, Any]:
        return self.config["tolerances"]

    def get_simulation_config(self) -> Dict[str, Any]:
        return self.config["simulation"]

    def get_acceptance_config(self) -> Dict[str, Any]:
        return self.config["acceptance"]

    def get_oracle_config(self) -> Dict[str, Any]:
        return self.config["oracle"]

    def get_caps(self) -> Dict[str, int]:
        return self.config["caps"]

    def get_output_dir(self) -> str:
        return self.config["output"]["directory"]

    def set_output_dir(self, directory: str):
        self.config["output"]["directory"] = directory


_config: Optional[BrwConfig] = None


def get_config() -> BrwConfig:
    """Get global configuration instance"""
    global _config
    if _config is None:
        _config = BrwConfig()
    return _config


def reset_config(config_path: Optional[str] = "config.yaml", overrides: Optional[Dict[str, Any]] = None) -> BrwConfig:
    """Replace the global configuration instance"""
    global _config
    _config = BrwConfig(config_path, overrides)
    return _config
