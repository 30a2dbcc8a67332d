import copy
import hashlib
import json
import tomllib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

from src.perturb_explore.agents import AgentConfig, agent_id, make_agent_config
from src.perturb_explore.constants import DeskScale
from src.perturb_explore.environments import validate_env_id
from src.perturb_explore.errors import ConfigurationError
from src.perturb_explore.exploration import ExplorationConfig

SECTIONS = ("env", "agent", "explore", "run")


@dataclass
class RunConfig:
    total_steps: int = DeskScale.TOTAL_STEPS
    seeds: tuple[int, ...] = DeskScale.SEEDS
    eval_interval: int = 0
    out: str = "runs"
    name: str = ""
    workers: int = 1

    def __post_init__(self):
        self.seeds = tuple(int(s) for s in self.seeds)
        if self.total_steps <= 0:
            raise ConfigurationError("run.total_steps must be positive")
        if not self.seeds:
            raise ConfigurationError("run.seeds must not be empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigurationError(
                f"run.seeds must be distinct, got {list(self.seeds)}"
            )
        if any(not 0 <= s < 2**64 for s in self.seeds):
            raise ConfigurationError("run.seeds must be unsigned 64-bit integers")
        if self.eval_interval < 0:
            raise ConfigurationError("run.eval_interval must be >= 0")
        if self.workers <= 0:
            raise ConfigurationError("run.workers must be positive")


@dataclass
class ExperimentConfig:
    env_id: str
    agent: AgentConfig
    explore: ExplorationConfig = field(default_factory=ExplorationConfig)
    run: RunConfig = field(default_factory=RunConfig)

    @property
    def variant(self) -> str:
        """Run name, defaulting to ``<agent>-<explore kind>``."""
        return self.run.name or f"{agent_id(self.agent)}-{self.explore.kind.value}"

    @property
    def out_dir(self) -> Path:
        return Path(self.run.out)

    def to_raw(self) -> dict[str, dict[str, Any]]:
        """Nested mapping that `validate_config` turns back into this config."""
        agent = asdict(self.agent)
        agent["hidden"] = list(agent["hidden"])
        explore = asdict(self.explore)
        explore["kind"] = self.explore.kind.value
        run = asdict(self.run)
        run["seeds"] = list(run["seeds"])
        return {
            "env": {"id": self.env_id},
            "agent": {"id": agent_id(self.agent), **agent},
            "explore": explore,
            "run": run,
        }


def _section(raw: dict, name: str) -> dict[str, Any]:
    section = raw.get(name, {})
    if not isinstance(section, dict):
        raise ConfigurationError(f"[{name}] must be a table")
    return dict(section)


def _build(config_class: type, section: str, values: dict[str, Any]):
    known = {f.name for f in fields(config_class)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigurationError(
            f"Unknown keys in [{section}]: {[f'{section}.{k}' for k in unknown]}"
        )
    try:
        return config_class(**values)
    except TypeError as e:
        raise ConfigurationError(f"Invalid [{section}] table: {e}")


def validate_config(raw: dict[str, Any]) -> ExperimentConfig:
    """
    Validate a raw experiment mapping.

    Parameters
    ----------
    raw : dict
        Tables ``env``, ``agent``, ``explore`` and ``run`` as read from the
        config file, after command-line overrides.

    Returns
    -------
    ExperimentConfig
        The validated, fully-defaulted configuration.

    Raises
    ------
    ConfigurationError
        Naming the first offending key.
    """
    unknown = sorted(set(raw) - set(SECTIONS))
    if unknown:
        raise ConfigurationError(f"Unknown config tables: {unknown}")

    env = _section(raw, "env")
    if "id" not in env:
        raise ConfigurationError("env.id is required")
    if set(env) != {"id"}:
        raise ConfigurationError(f"Unknown keys in [env]: {sorted(set(env) - {'id'})}")
    env_id = validate_env_id(env["id"])

    agent = _section(raw, "agent")
    if "id" not in agent:
        raise ConfigurationError("agent.id is required")
    agent_cfg = make_agent_config(agent.pop("id"), agent)

    explore = _build(ExplorationConfig, "explore", _section(raw, "explore"))
    run = _build(RunConfig, "run", _section(raw, "run"))

    if run.total_steps < agent_cfg.horizon:
        raise ConfigurationError(
            f"run.total_steps ({run.total_steps}) is below agent.horizon "
            f"({agent_cfg.horizon})"
        )
    return ExperimentConfig(env_id=env_id, agent=agent_cfg, explore=explore, run=run)


def parse_value(text: str) -> Any:
    """TOML value syntax (``1e-3``, ``true``, ``[1, 2]``); bare words stay strings."""
    try:
        return tomllib.loads(f"value = {text}")["value"]
    except tomllib.TOMLDecodeError:
        return text


def set_key(raw: dict[str, Any], dotted_key: str, value: Any) -> dict[str, Any]:
    """Return a copy of ``raw`` with ``section.key`` set to ``value``."""
    parts = dotted_key.split(".")
    if len(parts) != 2 or parts[0] not in SECTIONS:
        raise ConfigurationError(
            f"Config keys look like <table>.<key> with table in {SECTIONS}, "
            f"got {dotted_key!r}"
        )
    updated = copy.deepcopy(raw)
    updated.setdefault(parts[0], {})[parts[1]] = value
    return updated


def apply_overrides(raw: dict[str, Any], overrides: list[str]) -> dict[str, Any]:
    for override in overrides:
        key, sep, text = override.partition("=")
        if not sep:
            raise ConfigurationError(f"Overrides look like key=value, got {override!r}")
        raw = set_key(raw, key.strip(), parse_value(text.strip()))
    return raw


def read_toml(path: Path) -> dict[str, Any]:
    try:
        with Path(path).open("rb") as f:
            return tomllib.load(f)
    except FileNotFoundError:
        raise ConfigurationError(f"Config file {path} does not exist")
    except tomllib.TOMLDecodeError as e:
        raise ConfigurationError(f"{path} is not valid TOML: {e}")


def load_config(
    path: Path,
    seed: int | None = None,
    steps: int | None = None,
    out: Path | None = None,
    overrides: list[str] | None = None,
) -> ExperimentConfig:
    """Read a TOML experiment file and apply command-line overrides on top."""
    raw = apply_overrides(read_toml(path), overrides or [])
    if seed is not None:
        raw = set_key(raw, "run.seeds", [seed])
    if steps is not None:
        raw = set_key(raw, "run.total_steps", steps)
    if out is not None:
        raw = set_key(raw, "run.out", str(out))
    return validate_config(raw)


def canonical_json(cfg: ExperimentConfig) -> str:
    return json.dumps(cfg.to_raw(), sort_keys=True, separators=(",", ":"))


def config_hash(cfg: ExperimentConfig) -> str:
    """Git blob hash of the canonical JSON echo of ``cfg``."""
    payload = canonical_json(cfg).encode()
    return hashlib.sha1(b"blob %d\0" % len(payload) + payload).hexdigest()
