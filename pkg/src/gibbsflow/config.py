"""JSON configuration: environments, reward schemes, experiments, manifests.

Every randomly generated ingredient (factor tables, subset energies, random
sequences) is materialized into the echoed config together with its seed, so
a run can be reproduced bit-identically from its manifest alone.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .envs import (
    EnergyModel,
    FactorGraphSpec,
    PhyloSpec,
    build_factor_graph_env,
    build_phylo_env,
    build_subset_env,
    build_toy_dag,
)
from .graph import SoftMdpGraph
from .rewards import (
    BackwardPolicy,
    RewardKind,
    RewardScheme,
    counting_backward_policy,
    uniform_backward_policy,
)
from .training import MetricsRow, TrainConfig

__all__ = [
    "ConfigError",
    "build_env_from_config",
    "make_backward",
    "make_scheme",
    "RunManifest",
    "metrics_to_csv",
    "load_json",
]


class ConfigError(ValueError):
    """Malformed or inconsistent configuration."""


def load_json(path: str | Path) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"no such file: {p}")
    try:
        with open(p) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {p}: {exc}") from exc


def build_env_from_config(cfg: dict, base_dir: Path | None = None):
    """Build (graph, energy, resolved_config) from an environment config.

    Kinds: ``toy``, ``factor_graph``, ``subset``, ``phylo``, ``graph``.
    """
    if not isinstance(cfg, dict) or "kind" not in cfg:
        raise ConfigError("environment config must be an object with a 'kind'")
    kind = cfg["kind"]
    base_dir = Path(base_dir) if base_dir is not None else Path.cwd()

    if kind == "toy":
        energies = cfg.get("energies", [0.0, 0.0, 0.0])
        if len(energies) != 3:
            raise ConfigError("toy env needs exactly 3 terminal energies")
        graph, energy = build_toy_dag(energies)
        return graph, energy, {"kind": "toy", "energies": [float(e) for e in energies]}

    if kind == "factor_graph":
        try:
            d, K = int(cfg["d"]), int(cfg["K"])
        except KeyError as exc:
            raise ConfigError(f"factor_graph env needs {exc}") from None
        if "factors" in cfg:
            factors = tuple(
                (tuple(f["scope"]), np.asarray(f["table"], dtype=float))
                for f in cfg["factors"]
            )
            spec = FactorGraphSpec(d=d, K=K, factors=factors)
            echo_factors = cfg["factors"]
            seed = cfg.get("seed")
        else:
            random = cfg.get("random_factors", {})
            seed = int(random.get("seed", 0))
            spec = FactorGraphSpec.random_chain(d, K, seed)
            echo_factors = [
                {"scope": list(scope), "table": table.tolist()}
                for scope, table in spec.factors
            ]
        graph, energy = build_factor_graph_env(spec)
        echo = {"kind": "factor_graph", "d": d, "K": K, "factors": echo_factors}
        if seed is not None:
            echo["seed"] = seed
        return graph, energy, echo

    if kind == "subset":
        n = int(cfg.get("n", 0))
        if n < 0:
            raise ConfigError("subset env needs n >= 0")
        if "energies" in cfg:
            energies = np.asarray(cfg["energies"], dtype=float)
            seed = cfg.get("seed")
        else:
            random = cfg.get("random_energies", {})
            seed = int(random.get("seed", 0))
            sigma = float(random.get("sigma", 1.0))
            rng = np.random.default_rng(seed)
            energies = rng.normal(0.0, sigma, size=1 << n)
        graph, energy = build_subset_env(n, energies)
        echo = {"kind": "subset", "n": n, "energies": energy.state.tolist()}
        if seed is not None:
            echo["seed"] = seed
        return graph, energy, echo

    if kind == "phylo":
        scale = float(cfg.get("scale", 4.0))
        if "sequences" in cfg:
            sequences = tuple(cfg["sequences"])
            seed = cfg.get("seed")
        elif "sequences_file" in cfg:
            path = base_dir / cfg["sequences_file"]
            if not path.exists():
                raise ConfigError(f"no such sequences file: {path}")
            sequences = tuple(
                line.strip() for line in path.read_text().splitlines() if line.strip()
            )
            seed = None
        elif "random_sequences" in cfg:
            random = cfg["random_sequences"]
            seed = int(random.get("seed", 0))
            spec = PhyloSpec.random(
                d=int(random["d"]), length=int(random["length"]), seed=seed, scale=scale
            )
            sequences = spec.sequences
        else:
            raise ConfigError(
                "phylo env needs 'sequences', 'sequences_file' or 'random_sequences'"
            )
        spec = PhyloSpec(sequences=sequences, scale=scale)
        graph, energy = build_phylo_env(spec)
        echo = {"kind": "phylo", "sequences": list(sequences), "scale": scale}
        if seed is not None:
            echo["seed"] = seed
        return graph, energy, echo

    if kind == "graph":
        try:
            graph = SoftMdpGraph.from_json_dict(cfg["graph"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad graph object: {exc}") from exc
        energy = _energy_from_config(graph, cfg)
        return graph, energy, cfg

    raise ConfigError(f"unknown environment kind {kind!r}")


def _energy_from_config(graph: SoftMdpGraph, cfg: dict) -> EnergyModel:
    terminal_cfg = cfg.get("terminal_energy")
    state_cfg = cfg.get("state_energy")
    if terminal_cfg is None and state_cfg is None:
        raise ConfigError("graph env needs 'terminal_energy' or 'state_energy'")

    state = None
    if state_cfg is not None:
        state = np.asarray(state_cfg, dtype=float)
        if state.shape != (graph.num_states,):
            raise ConfigError("state_energy must list one value per state")
        state = state - state[graph.initial_state]

    terminal = np.full(graph.num_states, np.nan)
    if terminal_cfg is not None:
        if isinstance(terminal_cfg, dict):
            for key, value in terminal_cfg.items():
                terminal[int(key)] = float(value)
        else:
            for s, value in enumerate(terminal_cfg):
                if value is not None:
                    terminal[s] = float(value)
    elif state is not None:
        terminal = state.copy()
    for x in graph.terminating_states():
        if np.isnan(terminal[x]):
            raise ConfigError(f"missing terminal energy for terminating state {x}")

    edge = None
    if "edge_energy" in cfg:
        rows = [np.asarray(r, dtype=float) for r in cfg["edge_energy"]]
        if len(rows) != graph.num_states or any(
            r.shape != (len(graph.children[s]),) for s, r in enumerate(rows)
        ):
            raise ConfigError("edge_energy rows must align with children lists")
        edge = tuple(rows)

    return EnergyModel(
        terminal=terminal,
        terminal_states=graph.terminating_states(),
        edge=edge,
        state=state,
    )


def make_backward(graph: SoftMdpGraph, name: str) -> BackwardPolicy:
    if name == "uniform":
        return uniform_backward_policy(graph)
    if name == "counting":
        return counting_backward_policy(graph)
    raise ConfigError(f"unknown backward policy {name!r}; expected uniform|counting")


def make_scheme(
    graph: SoftMdpGraph,
    energy: EnergyModel,
    reward: str = "terminal",
    backward: str = "uniform",
    alpha: float = 1.0,
) -> RewardScheme:
    try:
        kind = RewardKind(reward)
    except ValueError:
        raise ConfigError(
            f"unknown reward {reward!r}; expected uncorrected|terminal|dense|fl"
        ) from None
    try:
        return RewardScheme(
            kind=kind,
            graph=graph,
            energy=energy,
            alpha=float(alpha),
            backward=make_backward(graph, backward),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


@dataclass
class RunManifest:
    """Everything needed to reproduce a run plus what it produced."""

    command: str
    config: dict
    outputs: list[str] = field(default_factory=list)
    tool_version: str = __version__
    wall_clock_seconds: float = 0.0
    started_at: str = ""

    @classmethod
    def start(cls, command: str, config: dict) -> "RunManifest":
        m = cls(command=command, config=config)
        m._t0 = time.monotonic()
        m.started_at = time.strftime("%Y-%m-%dT%H:%M:%S%z")
        return m

    def finish(self, outputs: list[str]) -> "RunManifest":
        self.outputs = list(outputs)
        self.wall_clock_seconds = time.monotonic() - self._t0
        return self

    def to_json_dict(self) -> dict:
        return {
            "command": self.command,
            "tool_version": self.tool_version,
            "started_at": self.started_at,
            "wall_clock_seconds": self.wall_clock_seconds,
            "config": self.config,
            "outputs": self.outputs,
        }

    def write(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=2) + "\n")


def metrics_to_csv(rows: list[MetricsRow]) -> str:
    """RFC-style CSV with a single header row; floats use shortest
    round-trip formatting so identical runs yield identical bytes."""
    lines = ["iteration,loss,jsd,pearson,epsilon"]
    for r in rows:
        lines.append(f"{r.iteration},{r.loss!r},{r.jsd!r},{r.pearson!r},{r.epsilon!r}")
    return "\n".join(lines) + "\n"


def train_config_from_dict(d: dict, **overrides) -> TrainConfig:
    merged = dict(d)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return TrainConfig.from_json_dict(merged)
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"bad train config: {exc}") from exc
