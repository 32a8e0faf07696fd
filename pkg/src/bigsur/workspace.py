"""One site's installation: store, modules, feature gates and data directory.

Data directory layout::

    config             feature switches and site token, ``key=value`` lines
    store.journal      one canonical line per stored revision
    scheduler.json     queue state (jobs, controls)
    events.log         scheduler event log
    publications.json  publication records
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Callable

from .catalog import Catalog
from .errors import AlreadyInitialized, FeatureDisabled, InvalidConfig, NotInitialized
from .federation import Federation, http_transport
from .lineage import Lineage
from .model import is_token, utcnow
from .query import QueryEngine
from .scheduler import Scheduler
from .store import Store

FEATURES = ("catalog", "query", "lineage", "scheduler", "federation")
HOME_ENV = "BIGSUR_HOME"


@dataclass(frozen=True)
class FeatureConfig:
    catalog: bool = True
    query: bool = True
    lineage: bool = True
    scheduler: bool = True
    federation: bool = True
    listen_address: str | None = None

    def __post_init__(self):
        if not any(getattr(self, f) for f in FEATURES):
            raise InvalidConfig("at least one feature must be enabled")
        for dependent in ("query", "lineage", "federation"):
            if getattr(self, dependent) and not self.catalog:
                raise InvalidConfig(f"{dependent} requires catalog")

    @classmethod
    def notebook(cls, **overrides) -> FeatureConfig:
        """Catalog, query and lineage only: no processing, no publishing."""
        return cls(**{"scheduler": False, "federation": False, **overrides})

    def enabled(self, feature: str) -> bool:
        return bool(getattr(self, feature))

    def to_pairs(self) -> dict[str, str]:
        out = {f: "true" if getattr(self, f) else "false" for f in FEATURES}
        out["listen_address"] = self.listen_address or ""
        return out

    @classmethod
    def from_pairs(cls, pairs: dict[str, str]) -> FeatureConfig:
        kwargs = {}
        for f in fields(cls):
            if f.name not in pairs:
                continue
            raw = pairs[f.name].strip()
            if f.name == "listen_address":
                kwargs[f.name] = raw or None
            elif raw.lower() in ("true", "false"):
                kwargs[f.name] = raw.lower() == "true"
            else:
                raise InvalidConfig(f"{f.name} must be true or false, not {raw!r}")
        return cls(**kwargs)


def read_config(path: Path) -> dict[str, str]:
    pairs = {}
    for number, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise InvalidConfig(f"config line {number}: expected key=value")
        pairs[key.strip()] = value.strip()
    return pairs


def write_config(path: Path, pairs: dict[str, str]) -> None:
    path.write_text("".join(f"{k}={pairs[k]}\n" for k in sorted(pairs)), encoding="utf-8")


class Workspace:
    def __init__(self, site: str, home: str | Path | None = None,
                 features: FeatureConfig | None = None,
                 clock: Callable[[], str] = utcnow,
                 transport: Callable[[str, bytes], None] = http_transport):
        if not is_token(site):
            raise InvalidConfig(f"site token {site!r} must be non-empty without '/' or spaces")
        self.site = site
        self.home = Path(home) if home else None
        self.features = features or FeatureConfig()
        self.clock = clock
        path = (lambda name: self.home / name) if self.home else (lambda name: None)
        self.store = Store(site, path("store.journal"), clock=clock)
        self._catalog = Catalog(self.store, clock=clock)
        self._query = QueryEngine(self._catalog)
        self._scheduler = Scheduler(self._catalog, path("scheduler.json"), clock=clock)
        self._lineage = Lineage(self._catalog, lambda: self.scheduler)
        self._federation = Federation(self._catalog, path("publications.json"), transport)

    # -- data directory ---------------------------------------------------

    @classmethod
    def init(cls, home: str | Path, site: str, features: FeatureConfig | None = None,
             name: str | None = None, systems: tuple[str, ...] = (),
             endpoint: str | None = None, **kwargs) -> Workspace:
        home = Path(home)
        config = home / "config"
        if config.exists():
            raise AlreadyInitialized(f"{home} already holds a site")
        home.mkdir(parents=True, exist_ok=True)
        features = features or FeatureConfig()
        write_config(config, {"site": site, **features.to_pairs()})
        ws = cls(site, home, features, **kwargs)
        ws._catalog.register_descriptor(
            "site", {"name": name or site, "systems": tuple(systems), "endpoint": endpoint})
        return ws

    @classmethod
    def open(cls, home: str | Path | None = None, **kwargs) -> Workspace:
        home = Path(home or os.environ.get(HOME_ENV) or ".bigsur")
        config = home / "config"
        if not config.exists():
            raise NotInitialized(f"{home} is not initialized; run init first")
        pairs = read_config(config)
        site = pairs.pop("site", "")
        return cls(site, home, FeatureConfig.from_pairs(pairs), **kwargs)

    @property
    def home_site(self):
        sites = [s for s in self.store.records("site") if s.id.site == self.site]
        return sites[0] if sites else None

    # -- gated modules ----------------------------------------------------

    def require(self, feature: str) -> None:
        if not self.features.enabled(feature):
            raise FeatureDisabled(f"the {feature} feature is disabled at site {self.site}")

    @property
    def catalog(self) -> Catalog:
        self.require("catalog")
        return self._catalog

    @property
    def query(self) -> QueryEngine:
        self.require("query")
        return self._query

    @property
    def lineage(self) -> Lineage:
        self.require("lineage")
        return self._lineage

    @property
    def scheduler(self) -> Scheduler:
        self.require("scheduler")
        return self._scheduler

    @property
    def federation(self) -> Federation:
        self.require("federation")
        return self._federation

