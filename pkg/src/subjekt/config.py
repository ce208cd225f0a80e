"""Server configuration: TOML file plus environment overrides."""
from __future__ import annotations

import os

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib
from dataclasses import dataclass, field
from typing import Mapping, Optional


@dataclass
class ApiConfig:
    bind: str = "127.0.0.1:8000"
    store_path: str = "subjekt.db"
    static_path: Optional[str] = None
    webhooks: dict[str, str] = field(default_factory=dict)
    auth_mode: str = "header"

    @property
    def host(self) -> str:
        return self.bind.rsplit(":", 1)[0]

    @property
    def port(self) -> int:
        host_port = self.bind.rsplit(":", 1)
        if len(host_port) != 2 or not host_port[1].isdigit():
            raise ValueError(f"bind address {self.bind!r} must be host:port")
        return int(host_port[1])


def load_config(path: Optional[str] = None,
                env: Optional[Mapping[str, str]] = None) -> ApiConfig:
    """Build config from an optional TOML file, then apply SUBJEKT_* overrides."""
    env = os.environ if env is None else env
    config = ApiConfig()
    if path:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
        config.bind = data.get("bind", config.bind)
        config.store_path = data.get("store", config.store_path)
        config.static_path = data.get("static", config.static_path)
        config.auth_mode = data.get("auth", config.auth_mode)
        config.webhooks = dict(data.get("webhooks", {}))
    if "SUBJEKT_BIND" in env:
        config.bind = env["SUBJEKT_BIND"]
    if "SUBJEKT_STORE" in env:
        config.store_path = env["SUBJEKT_STORE"]
    if "SUBJEKT_AUTH" in env:
        config.auth_mode = env["SUBJEKT_AUTH"]
    config.port  # validate bind shape early
    return config
