"""Flat ``section.key = value`` run configuration with a strict schema.

Every key has a default except ``output.dir``, which falls back to the
``--out`` flag and then to the ``DATA_AGENT_OUT`` environment variable.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

from .loop import STRATEGIES, AgentConfig, LoopConfig, ModelConfig, RewardConfig
from .ppo import PpoConfig

OUT_ENV = "DATA_AGENT_OUT"


class ConfigError(ValueError):
    pass


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.replace(" ", "").split(",") if t)


def _strs(text: str) -> tuple[str, ...]:
    return tuple(t.strip() for t in text.split(",") if t.strip())


def _opt_int(text: str) -> int | None:
    return int(text) if text.strip() else None


def _opt_str(text: str) -> str | None:
    return text.strip() or None


# key -> (parser, default); ``None`` default on output.dir means "resolve later"
SCHEMA: dict[str, tuple[Callable[[str], Any], Any]] = {
    "dataset.path": (_opt_str, None),
    "dataset.generator": (str.strip, "mixture"),
    "dataset.seed": (int, 0),
    "dataset.noise_rate": (float, 0.0),
    "model.hidden_dims": (_ints, (64, 64)),
    "model.lr": (float, 0.05),
    "model.batch": (int, 64),
    "model.momentum": (float, 0.0),
    "loop.ratio": (float, 0.5),
    "loop.epochs": (int, 30),
    "loop.warmup_epochs": (int, 1),
    "loop.score_period": (int, 1),
    "loop.horizon_w": (int, 4),
    "loop.agent_update_period": (_opt_int, None),
    "agent.gamma": (float, 0.99),
    "agent.lambda": (float, 0.95),
    "agent.clip_eps": (float, 0.2),
    "agent.update_epochs": (int, 4),
    "agent.minibatch": (int, 256),
    "agent.lr": (float, 3e-4),
    "agent.hidden": (int, 64),
    "agent.logstd_init": (float, -1.0),
    "agent.value_coeff": (float, 0.5),
    "reward.epsilon": (float, 1e-8),
    "reward.use_consistency": (_bool, False),
    "bench.strategies": (_strs, ("full", "random_epoch", "static_loss", "agent")),
    "bench.seeds": (_ints, (0,)),
    "output.dir": (_opt_str, None),
}
GENERATORS = ("mixture", "rings")


@dataclass
class RunConfig:
    values: dict[str, Any] = field(default_factory=dict)

    def __getitem__(self, key: str):
        return self.values[key]

    @property
    def loop(self) -> LoopConfig:
        return self.loop_for_seed(self["bench.seeds"][0])

    def loop_for_seed(self, seed: int) -> LoopConfig:
        v = self.values
        return LoopConfig(
            ratio=v["loop.ratio"], epochs=v["loop.epochs"], warmup_epochs=v["loop.warmup_epochs"],
            score_period=v["loop.score_period"], horizon_w=v["loop.horizon_w"],
            agent_update_period=v["loop.agent_update_period"], seed=seed,
        )

    @property
    def model(self) -> ModelConfig:
        v = self.values
        return ModelConfig(tuple(v["model.hidden_dims"]), v["model.lr"], v["model.batch"], v["model.momentum"])

    @property
    def agent(self) -> AgentConfig:
        v = self.values
        ppo = PpoConfig(v["agent.gamma"], v["agent.lambda"], v["agent.clip_eps"], v["agent.update_epochs"],
                        v["agent.minibatch"], v["agent.lr"], v["agent.value_coeff"])
        return AgentConfig(v["agent.hidden"], v["agent.logstd_init"], ppo)

    @property
    def reward(self) -> RewardConfig:
        return RewardConfig(self.values["reward.epsilon"], self.values["reward.use_consistency"])

    @property
    def out_dir(self) -> Path:
        return Path(self.values["output.dir"])


def parse_config_text(text: str, source: str = "<config>") -> dict[str, Any]:
    found: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'section.key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in found:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        parser = SCHEMA[key][0]
        try:
            found[key] = parser(value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc}") from None
    return found


def build_config(overrides: dict[str, Any], out_dir: str | None = None) -> RunConfig:
    values = {key: default for key, (_, default) in SCHEMA.items()}
    values.update(overrides)
    if out_dir is not None:
        values["output.dir"] = out_dir
    if values["output.dir"] is None:
        values["output.dir"] = os.environ.get(OUT_ENV) or None
    if values["output.dir"] is None:
        raise ConfigError(f"missing key 'output.dir' (set it, pass --out, or export {OUT_ENV})")
    _validate(values)
    return RunConfig(values)


def load_config(path, out_dir: str | None = None) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc})") from None
    return build_config(parse_config_text(text, str(path)), out_dir)


def _validate(values: dict[str, Any]) -> None:
    if values["dataset.generator"] not in GENERATORS:
        raise ConfigError(f"dataset.generator must be one of {GENERATORS}")
    unknown = [s for s in values["bench.strategies"] if s not in STRATEGIES]
    if unknown or not values["bench.strategies"]:
        raise ConfigError(f"bench.strategies must be a non-empty subset of {STRATEGIES}, got {unknown}")
    if not values["bench.seeds"]:
        raise ConfigError("bench.seeds must list at least one seed")
    if not 0.0 <= values["dataset.noise_rate"] < 1.0:
        raise ConfigError("dataset.noise_rate must lie in [0, 1)")
    try:
        RunConfig(values).loop_for_seed(0)
        RunConfig(values).agent
        if values["model.lr"] <= 0 or values["model.batch"] < 1 or not 0 <= values["model.momentum"] < 1:
            raise ValueError("model.lr > 0, model.batch >= 1 and model.momentum in [0, 1) required")
        if not values["model.hidden_dims"]:
            raise ValueError("model.hidden_dims needs at least one layer")
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def render_config(cfg: RunConfig, include_output: bool = True) -> str:
    """Canonical text form; parses back to the same values.

    With ``include_output=False`` the ``output.dir`` line is left out, so
    copies saved inside result directories do not depend on where they live.
    """
    lines = []
    for key in SCHEMA:
        if key == "output.dir" and not include_output:
            continue
        value = cfg.values[key]
        if value is None:
            text = ""
        elif isinstance(value, bool):
            text = "true" if value else "false"
        elif isinstance(value, (tuple, list)):
            text = ",".join(str(v) for v in value)
        else:
            text = str(value)
        lines.append(f"{key} = {text}")
    return "\n".join(lines) + "\n"
