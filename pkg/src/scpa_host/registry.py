"""Unit registry: drop-folder discovery, lifecycle state machine, version
resolution, and immutable epoch snapshots supporting hot-swap and rollback.

Drop-folder layout: ``<drop>/<name>/<version>/manifest.scpa`` plus payload
files.  A ``pin`` file in the unit directory pins the active version; an
empty ``disabled`` marker switches the unit off without deleting it.
"""

from __future__ import annotations

import os
import threading
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from types import MappingProxyType
from typing import Callable, Iterable, Mapping, Protocol

from .contract import (
    HOST_VERSION,
    MANIFEST_FILENAME,
    HostContext,
    LoadReport,
    Manifest,
    ManifestError,
    ChecksumMismatch,
    PipelineUnit,
    parse_manifest,
    parse_version,
    verify_payload,
)

PIN_FILENAME = "pin"
DISABLED_FILENAME = "disabled"


class RegistryError(Exception):
    pass


class DropDirUnreadable(RegistryError):
    def __init__(self, path: Path):
        super().__init__(f"drop directory unreadable: {path}")
        self.path = path


class LoadFailed(RegistryError):
    def __init__(self, unit: str, reason: str):
        super().__init__(f"load failed for {unit}: {reason}")
        self.unit = unit
        self.reason = reason


class NotActive(RegistryError):
    def __init__(self, name: str):
        super().__init__(f"unit not active: {name}")
        self.name = name


class PinMissing(RegistryError):
    def __init__(self, name: str, version: str):
        super().__init__(f"pinned version {version} of {name} is not on disk")
        self.name = name
        self.version = version


class NoPriorVersion(RegistryError):
    def __init__(self, name: str):
        super().__init__(f"no prior version of {name} to roll back to")
        self.name = name


class IllegalTransition(RegistryError):
    def __init__(self, name: str, version: str, old: "UnitState", new: "UnitState"):
        super().__init__(f"{name}@{version}: illegal transition {old.name} -> {new.name}")
        self.old = old
        self.new = new


class UnitState(Enum):
    DISCOVERED = "discovered"
    VALIDATED = "validated"
    ACTIVE = "active"
    DRAINING = "draining"
    RETIRED = "retired"
    FAILED = "failed"


_FORWARD_TRANSITIONS = {
    (UnitState.DISCOVERED, UnitState.VALIDATED),
    (UnitState.VALIDATED, UnitState.ACTIVE),
    (UnitState.ACTIVE, UnitState.DRAINING),
    (UnitState.DRAINING, UnitState.RETIRED),
}

LEGAL_TRANSITIONS = _FORWARD_TRANSITIONS | {
    (state, UnitState.FAILED) for state in UnitState if state is not UnitState.FAILED
}


@dataclass(frozen=True)
class HandlerRef:
    """One handler's position in a route: enough to order, call, and trace it."""

    unit: str
    version: str
    handler: str
    priority: int
    reentrant: bool


@dataclass(frozen=True)
class RegistrySnapshot:
    """Immutable per-epoch view: extension point -> ordered active handlers."""

    epoch: int
    routes: Mapping[str, tuple[HandlerRef, ...]]

    def handlers_for(self, extension_point: str) -> tuple[HandlerRef, ...]:
        return self.routes.get(extension_point, ())

    def units(self) -> set[tuple[str, str]]:
        return {(h.unit, h.version) for refs in self.routes.values() for h in refs}


def _build_snapshot(epoch: int, manifests: Iterable[Manifest]) -> RegistrySnapshot:
    routes: dict[str, list[HandlerRef]] = {}
    names: set[str] = set()
    for manifest in manifests:
        if manifest.name in names:
            raise RegistryError(f"two versions of {manifest.name} in one snapshot")
        names.add(manifest.name)
        for binding in manifest.bindings:
            routes.setdefault(binding.extension_point, []).append(
                HandlerRef(
                    unit=manifest.name,
                    version=manifest.version,
                    handler=binding.handler,
                    priority=manifest.priority,
                    reentrant=manifest.reentrant,
                )
            )
    frozen = {
        ep: tuple(sorted(refs, key=lambda h: (h.priority, h.unit, h.handler)))
        for ep, refs in routes.items()
    }
    return RegistrySnapshot(epoch=epoch, routes=MappingProxyType(frozen))


EMPTY_SNAPSHOT = _build_snapshot(0, ())


@dataclass(frozen=True)
class VersionPin:
    unit: str
    version: str | None = None


@dataclass(frozen=True)
class Discovery:
    """A valid bundle found on disk (or constructed in memory for tests)."""

    name: str
    version: str
    manifest: Manifest
    path: Path | None = None


@dataclass(frozen=True)
class Reject:
    path: str
    code: str
    detail: str


@dataclass
class ScanResult:
    discoveries: list[Discovery] = field(default_factory=list)
    rejects: list[Reject] = field(default_factory=list)
    disabled: set[str] = field(default_factory=set)
    pins: dict[str, str] = field(default_factory=dict)


def read_pin(unit_dir: Path) -> str | None:
    """Read the one-line ``pin: <version>`` file; None when absent or malformed."""
    pin_path = unit_dir / PIN_FILENAME
    try:
        text = pin_path.read_text(encoding="utf-8")
    except OSError:
        return None
    line = text.strip()
    if not line.startswith("pin:"):
        return None
    version = line[len("pin:"):].strip()
    try:
        parse_version(version)
    except ValueError:
        return None
    return version


def write_pin(unit_dir: Path, version: str) -> None:
    parse_version(version)
    unit_dir.mkdir(parents=True, exist_ok=True)
    tmp = unit_dir / f".{PIN_FILENAME}.tmp"
    tmp.write_text(f"pin: {version}\n", encoding="utf-8")
    os.replace(tmp, unit_dir / PIN_FILENAME)


def scan(drop_dir: Path, diag: Callable[[str], None] | None = None) -> ScanResult:
    """Discover valid bundles under the drop folder.

    Never raises on a malformed bundle: every invalid one lands in rejects
    with a reason code.  Only an unreadable drop dir is an error.
    """
    drop_dir = Path(drop_dir)
    try:
        unit_dirs = sorted(p for p in drop_dir.iterdir())
    except OSError:
        raise DropDirUnreadable(drop_dir) from None

    result = ScanResult()

    def reject(path: Path, code: str, detail: str) -> None:
        result.rejects.append(Reject(path=str(path), code=code, detail=detail))
        if diag is not None:
            diag(f"REJECT {path} {code} {detail}")

    for unit_dir in unit_dirs:
        if not unit_dir.is_dir() or unit_dir.name.startswith("."):
            continue
        if (unit_dir / DISABLED_FILENAME).exists():
            result.disabled.add(unit_dir.name)
        pin = read_pin(unit_dir)
        if pin is not None:
            result.pins[unit_dir.name] = pin
        for version_dir in sorted(p for p in unit_dir.iterdir()):
            if not version_dir.is_dir() or version_dir.name.startswith("."):
                continue
            manifest_path = version_dir / MANIFEST_FILENAME
            if not manifest_path.is_file():
                reject(version_dir, "missing-manifest", f"no {MANIFEST_FILENAME}")
                continue
            try:
                manifest = parse_manifest(manifest_path.read_text(encoding="utf-8"))
            except ManifestError as exc:
                reject(version_dir, "bad-manifest", str(exc))
                continue
            if manifest.name != unit_dir.name or manifest.version != version_dir.name:
                reject(
                    version_dir,
                    "name-version-mismatch",
                    f"directory says {unit_dir.name}/{version_dir.name}, "
                    f"manifest says {manifest.name}/{manifest.version}",
                )
                continue
            payload_path = version_dir / manifest.payload_ref
            try:
                payload = payload_path.read_bytes()
            except OSError:
                reject(version_dir, "missing-payload", f"cannot read {manifest.payload_ref}")
                continue
            try:
                verify_payload(manifest, payload)
            except ChecksumMismatch as exc:
                reject(version_dir, "checksum-mismatch", str(exc))
                continue
            result.discoveries.append(
                Discovery(
                    name=manifest.name,
                    version=manifest.version,
                    manifest=manifest,
                    path=version_dir,
                )
            )
    return result


def resolve_active(
    name: str, versions: Iterable[str], pin: VersionPin | None = None
) -> str:
    """Pick the version to activate: the pin when set, else the highest."""
    available = list(versions)
    if not available:
        raise RegistryError(f"no versions available for {name}")
    if pin is not None and pin.version is not None:
        if pin.version not in available:
            raise PinMissing(name, pin.version)
        return pin.version
    return max(available, key=parse_version)


class PinStore(Protocol):
    def get(self, name: str) -> str | None: ...

    def set(self, name: str, version: str) -> None: ...


class MemoryPinStore:
    def __init__(self):
        self._pins: dict[str, str] = {}

    def get(self, name: str) -> str | None:
        return self._pins.get(name)

    def set(self, name: str, version: str) -> None:
        self._pins[name] = version


class FilePinStore:
    """Pins persisted as ``<drop>/<name>/pin`` files."""

    def __init__(self, drop_dir: Path):
        self._drop_dir = Path(drop_dir)

    def get(self, name: str) -> str | None:
        return read_pin(self._drop_dir / name)

    def set(self, name: str, version: str) -> None:
        write_pin(self._drop_dir / name, version)


@dataclass
class _VersionRecord:
    manifest: Manifest
    state: UnitState
    reason: str = ""


@dataclass
class _ActiveEntry:
    version: str
    manifest: Manifest
    unit: PipelineUnit
    gate: threading.Lock | None


UnitFactory = Callable[[Discovery, HostContext], PipelineUnit]
ContextFactory = Callable[[str], HostContext]
TransitionListener = Callable[[str, str, UnitState | None, UnitState], None]


def _default_context_factory(name: str) -> HostContext:
    return HostContext(host_version=HOST_VERSION, unit_name=name)


class Registry:
    """Single-writer unit registry producing immutable epoch snapshots.

    All mutations must come from one coordinator sequence; readers may grab
    ``snapshot`` at any time without blocking the writer.
    """

    def __init__(
        self,
        unit_factory: UnitFactory,
        *,
        context_factory: ContextFactory | None = None,
        pin_store: PinStore | None = None,
        diag: Callable[[str], None] | None = None,
        transition_listener: TransitionListener | None = None,
    ):
        self._unit_factory = unit_factory
        self._context_factory = context_factory or _default_context_factory
        self._pin_store: PinStore = pin_store if pin_store is not None else MemoryPinStore()
        self._diag = diag
        self._listener = transition_listener
        self._records: dict[tuple[str, str], _VersionRecord] = {}
        self._active: dict[str, _ActiveEntry] = {}
        self._draining: dict[tuple[str, str], PipelineUnit] = {}
        self._snapshot = EMPTY_SNAPSHOT

    @property
    def snapshot(self) -> RegistrySnapshot:
        return self._snapshot

    @property
    def pin_store(self) -> PinStore:
        return self._pin_store

    def active_version(self, name: str) -> str | None:
        entry = self._active.get(name)
        return entry.version if entry else None

    def active_entries(self) -> dict[str, _ActiveEntry]:
        return dict(self._active)

    def record_state(self, name: str, version: str) -> UnitState | None:
        record = self._records.get((name, version))
        return record.state if record else None

    def records(self) -> dict[tuple[str, str], tuple[UnitState, str]]:
        return {key: (rec.state, rec.reason) for key, rec in self._records.items()}

    def draining_versions(self) -> set[tuple[str, str]]:
        return set(self._draining)

    # -- state machine -------------------------------------------------

    def _transition(self, name: str, version: str, new: UnitState, reason: str = "") -> None:
        record = self._records[(name, version)]
        if (record.state, new) not in LEGAL_TRANSITIONS:
            raise IllegalTransition(name, version, record.state, new)
        old = record.state
        record.state = new
        record.reason = reason
        if self._listener is not None:
            self._listener(name, version, old, new)

    def _new_record(self, discovery: Discovery) -> None:
        key = (discovery.name, discovery.version)
        self._records[key] = _VersionRecord(
            manifest=discovery.manifest, state=UnitState.DISCOVERED
        )
        if self._listener is not None:
            self._listener(discovery.name, discovery.version, None, UnitState.DISCOVERED)
        self._transition(discovery.name, discovery.version, UnitState.VALIDATED)

    def note_discovery(self, discovery: Discovery) -> None:
        """Record a scanned bundle.

        A Retired version rediscovered on disk starts a fresh lifecycle (the
        rollback path re-activates it).  A Failed record is replaced only
        when the payload changed; otherwise it never auto-retries.
        """
        key = (discovery.name, discovery.version)
        record = self._records.get(key)
        if record is None or record.state is UnitState.RETIRED:
            self._new_record(discovery)
            return
        if (
            record.state is UnitState.FAILED
            and record.manifest.checksum != discovery.manifest.checksum
        ):
            self._new_record(discovery)

    def _commit(self, reason: str) -> RegistrySnapshot:
        manifests = [entry.manifest for entry in self._active.values()]
        snapshot = _build_snapshot(self._snapshot.epoch + 1, manifests)
        self._snapshot = snapshot
        if self._diag is not None:
            self._diag(f"EPOCH {snapshot.epoch} {reason}")
        return snapshot

    # -- operations ------------------------------------------------------

    def activate(self, discovery: Discovery, *, reason: str | None = None) -> RegistrySnapshot:
        """Load and activate a validated version; one new epoch.

        If another version of the unit is active it transitions to Draining
        and is absent from the new snapshot.  A load failure marks the
        version Failed and leaves the snapshot unchanged.
        """
        key = (discovery.name, discovery.version)
        self.note_discovery(discovery)
        record = self._records[key]
        if record.state is UnitState.FAILED:
            raise LoadFailed(discovery.name, f"version {discovery.version} previously failed")
        if record.state is not UnitState.VALIDATED:
            raise LoadFailed(
                discovery.name,
                f"version {discovery.version} is {record.state.value}, expected validated",
            )

        context = self._context_factory(discovery.name)
        try:
            unit = self._unit_factory(discovery, context)
            report = unit.load(context)
        except Exception as exc:
            self._transition(discovery.name, discovery.version, UnitState.FAILED, str(exc))
            raise LoadFailed(discovery.name, str(exc)) from exc
        if isinstance(report, LoadReport) and not report.ok:
            self._transition(discovery.name, discovery.version, UnitState.FAILED, report.message)
            raise LoadFailed(discovery.name, report.message or "load reported failure")

        previous = self._active.get(discovery.name)
        if previous is not None:
            self._transition(discovery.name, previous.version, UnitState.DRAINING, "replaced")
            self._draining[(discovery.name, previous.version)] = previous.unit
        self._transition(discovery.name, discovery.version, UnitState.ACTIVE)
        self._active[discovery.name] = _ActiveEntry(
            version=discovery.version,
            manifest=discovery.manifest,
            unit=unit,
            gate=None if discovery.manifest.reentrant else threading.Lock(),
        )
        return self._commit(reason or f"activate {discovery.name}@{discovery.version}")

    def deactivate(self, name: str, *, reason: str | None = None) -> RegistrySnapshot:
        """Remove the unit from the routes; its version drains until retired."""
        entry = self._active.pop(name, None)
        if entry is None:
            raise NotActive(name)
        self._transition(name, entry.version, UnitState.DRAINING, "deactivated")
        self._draining[(name, entry.version)] = entry.unit
        return self._commit(reason or f"deactivate {name}@{entry.version}")

    def rollback(self, name: str, candidates: Iterable[Discovery]) -> RegistrySnapshot:
        """Pin and activate the next-highest version below the active one.

        The swap is a single new epoch: the current version drains, the
        pinned one takes its place, and the pin persists for future scans.
        """
        entry = self._active.get(name)
        if entry is None:
            raise NotActive(name)
        current = parse_version(entry.version)
        older = [
            d for d in candidates
            if d.name == name and parse_version(d.version) < current
        ]
        if not older:
            raise NoPriorVersion(name)
        target = max(older, key=lambda d: parse_version(d.version))
        self._pin_store.set(name, target.version)
        return self.activate(
            target, reason=f"rollback {name} {entry.version}->{target.version}"
        )

    def retire_if_drained(self, name: str, version: str) -> bool:
        """Finish draining: transition to Retired and call unload() once."""
        unit = self._draining.pop((name, version), None)
        if unit is None:
            return False
        self._transition(name, version, UnitState.RETIRED, "drained")
        unload = getattr(unit, "unload", None)
        if callable(unload):
            try:
                unload()
            except Exception:
                pass
        return True
