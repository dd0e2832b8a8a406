"""Scenario files: the single JSON input that fixes a whole run.

Everything a run needs is in here: world geometry, operator cells with
their mitigation knobs, devices with their traffic and movement, the
optional rogue cell, paging directives, and the master seed. Two runs
of the same scenario are byte-identical, so scenarios double as
regression fixtures.

Validation is strict and failure names the offending field by path
(`cells[1].tac`), because a silently-defaulted typo in an experiment
config costs an afternoon.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Any, Optional

from . import attacker
from .codec import EmmCause
from .identity import (
    IMSI_LEN,
    CellIdentity,
    Imsi,
    Plmn,
    parse_imsi,
    validate_imei,
    validate_msisdn,
)
from .radio import DEFAULT_RX_FLOOR_DBM, PathLossModel, Rat, RadioCell

MAX_CELL_ID = (1 << 28) - 1


class ScenarioInvalid(ValueError):
    """Scenario rejected; message carries the field path."""


def _fail(path: str, why: str) -> None:
    raise ScenarioInvalid(f"{path}: {why}")


def _require(obj: dict, path: str, key: str) -> Any:
    if key not in obj:
        _fail(f"{path}.{key}", "missing")
    return obj[key]


def _as_int(value: Any, path: str, lo: int, hi: int) -> int:
    if not isinstance(value, int) or isinstance(value, bool):
        _fail(path, f"expected integer, got {value!r}")
    if not lo <= value <= hi:
        _fail(path, f"{value} outside [{lo}, {hi}]")
    return value


def _as_number(value: Any, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        _fail(path, f"expected number, got {value!r}")
    return float(value)


def _as_bool(value: Any, path: str) -> bool:
    if not isinstance(value, bool):
        _fail(path, f"expected boolean, got {value!r}")
    return value


def _as_position(value: Any, path: str) -> tuple[float, float]:
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        _fail(path, f"expected [x, y], got {value!r}")
    return (_as_number(value[0], f"{path}[0]"), _as_number(value[1], f"{path}[1]"))


def _as_plmn(value: Any, path: str) -> Plmn:
    # Digit strings, not ints: "01" and "1" are different mnc values.
    if not isinstance(value, dict):
        _fail(path, f"expected {{mcc, mnc}}, got {value!r}")
    mcc = _require(value, path, "mcc")
    mnc = _require(value, path, "mnc")
    if not isinstance(mcc, str) or not isinstance(mnc, str):
        _fail(path, f"mcc/mnc must be digit strings, got {mcc!r}/{mnc!r}")
    try:
        return Plmn(mcc, mnc)
    except ValueError as exc:
        _fail(path, str(exc))


def _as_priority_pairs(value: Any, path: str) -> tuple[tuple[int, int], ...]:
    if not isinstance(value, list):
        _fail(path, f"expected list of [earfcn, priority], got {value!r}")
    pairs = []
    for i, item in enumerate(value):
        if not isinstance(item, (list, tuple)) or len(item) != 2:
            _fail(f"{path}[{i}]", f"expected [earfcn, priority], got {item!r}")
        pairs.append(
            (
                _as_int(item[0], f"{path}[{i}][0]", 0, 0xFFFF),
                _as_int(item[1], f"{path}[{i}][1]", 0, 7),
            )
        )
    return tuple(pairs)


@dataclass(frozen=True)
class CellSpec:
    cell_id: int
    tac: int
    plmn: Plmn
    earfcn: int
    position: tuple[float, float]
    tx_power_dbm: float
    rat: Rat = Rat.LTE
    broadcast_period_ms: int = 40
    min_rx_level_dbm: int = -110
    priority_earfcns: tuple[tuple[int, int], ...] = ()
    encrypt_handover_trigger: bool = False
    rnti_refresh_on_idle: bool = False
    handover_hysteresis_db: float = 3.0
    rnti_preset: tuple[int, ...] = ()

    def radio(self) -> RadioCell:
        return RadioCell(
            identity=CellIdentity(self.cell_id, self.tac, self.plmn, self.earfcn),
            position=self.position,
            tx_power_dbm=self.tx_power_dbm,
            rat=self.rat,
        )


@dataclass(frozen=True)
class AppTrafficSpec:
    t_ms: int
    byte_count: int


@dataclass(frozen=True)
class WaypointSpec:
    t_ms: int
    position: tuple[float, float]


@dataclass(frozen=True)
class UeSpec:
    name: str
    imsi: Imsi
    key: bytes
    msisdn: str
    imei: str
    position: tuple[float, float]
    initial_tmsi: Optional[int] = None
    hardened: bool = False
    power_on_ms: int = 0
    app_traffic: tuple[AppTrafficSpec, ...] = ()
    moves: tuple[WaypointSpec, ...] = ()

    def position_at(self, t_ms: int) -> tuple[float, float]:
        """Piecewise-linear walk through the declared waypoints."""
        pos = self.position
        prev_t = 0
        for wp in self.moves:
            if t_ms >= wp.t_ms:
                pos = wp.position
                prev_t = wp.t_ms
                continue
            span = wp.t_ms - prev_t
            if span <= 0:
                return wp.position
            f = (t_ms - prev_t) / span
            return (
                pos[0] + (wp.position[0] - pos[0]) * f,
                pos[1] + (wp.position[1] - pos[1]) * f,
            )
        return pos


@dataclass(frozen=True)
class RogueSpec:
    cell_id: int
    tac: int
    plmn: Plmn
    earfcn: int
    position: tuple[float, float]
    tx_power_dbm: float
    mode: str
    reject_cause: EmmCause = EmmCause.PLMN_NOT_ALLOWED
    broadcast_period_ms: int = 40
    min_rx_level_dbm: int = -110
    priority_earfcns: tuple[tuple[int, int], ...] = ()
    active_ms: Optional[tuple[int, int]] = None

    def radio(self) -> RadioCell:
        return RadioCell(
            identity=CellIdentity(self.cell_id, self.tac, self.plmn, self.earfcn),
            position=self.position,
            tx_power_dbm=self.tx_power_dbm,
            rat=Rat.LTE,
            is_rogue=True,
        )


@dataclass(frozen=True)
class PageCallSpec:
    t_ms: int
    msisdn: str


@dataclass(frozen=True)
class ToggleSpec:
    t_ms: int
    ue: str


@dataclass(frozen=True)
class ErasureSpec:
    """Wipe a device's stored temporary identity at a set time."""

    t_ms: int
    ue: str


@dataclass(frozen=True)
class Scenario:
    name: str
    seed: int
    duration_ms: int
    cells: tuple[CellSpec, ...]
    ues: tuple[UeSpec, ...]
    rogue: Optional[RogueSpec] = None
    page_calls: tuple[PageCallSpec, ...] = ()
    toggles: tuple[ToggleSpec, ...] = ()
    erasures: tuple[ErasureSpec, ...] = ()
    path_loss: PathLossModel = field(default_factory=PathLossModel)
    rx_floor_dbm: float = DEFAULT_RX_FLOOR_DBM
    sniffer_enabled: bool = True
    sniffer_position: tuple[float, float] = (0.0, 0.0)


def default_ue_key(imsi: Imsi) -> bytes:
    """Subscriber key when the scenario does not pin one. A function of
    the permanent identity only, so captures replay across seeds."""
    return hashlib.sha256(b"sim-subscriber-key:" + str(imsi).encode()).digest()[:16]


def default_imei(imsi: Imsi) -> str:
    return ("99" + str(imsi))[:15]


def _parse_cell(obj: Any, path: str) -> CellSpec:
    if not isinstance(obj, dict):
        _fail(path, "expected object")
    rat_text = obj.get("rat", "lte")
    if rat_text not in ("lte", "gsm"):
        _fail(f"{path}.rat", f"expected 'lte' or 'gsm', got {rat_text!r}")
    preset = obj.get("rnti_preset", [])
    if not isinstance(preset, list):
        _fail(f"{path}.rnti_preset", "expected list")
    return CellSpec(
        cell_id=_as_int(_require(obj, path, "cell_id"), f"{path}.cell_id", 0, MAX_CELL_ID),
        tac=_as_int(_require(obj, path, "tac"), f"{path}.tac", 0, 0xFFFF),
        plmn=_as_plmn(_require(obj, path, "plmn"), f"{path}.plmn"),
        earfcn=_as_int(_require(obj, path, "earfcn"), f"{path}.earfcn", 0, 0xFFFF),
        position=_as_position(_require(obj, path, "position"), f"{path}.position"),
        tx_power_dbm=_as_number(_require(obj, path, "tx_power_dbm"), f"{path}.tx_power_dbm"),
        rat=Rat.LTE if rat_text == "lte" else Rat.GSM,
        broadcast_period_ms=_as_int(obj.get("broadcast_period_ms", 40), f"{path}.broadcast_period_ms", 1, 10_000),
        min_rx_level_dbm=_as_int(obj.get("min_rx_level_dbm", -110), f"{path}.min_rx_level_dbm", -128, 127),
        priority_earfcns=_as_priority_pairs(obj.get("priority_earfcns", []), f"{path}.priority_earfcns"),
        encrypt_handover_trigger=_as_bool(obj.get("encrypt_handover_trigger", False), f"{path}.encrypt_handover_trigger"),
        rnti_refresh_on_idle=_as_bool(obj.get("rnti_refresh_on_idle", False), f"{path}.rnti_refresh_on_idle"),
        handover_hysteresis_db=_as_number(obj.get("handover_hysteresis_db", 3.0), f"{path}.handover_hysteresis_db"),
        rnti_preset=tuple(
            _as_int(v, f"{path}.rnti_preset[{i}]", 1, 0xFFF3) for i, v in enumerate(preset)
        ),
    )


def _parse_tmsi(value: Any, path: str) -> Optional[int]:
    if value is None:
        return None
    if isinstance(value, str):
        try:
            value = int(value, 16)
        except ValueError:
            _fail(path, f"expected hex string or integer, got {value!r}")
    return _as_int(value, path, 0, 0xFFFFFFFF)


def _parse_ue(obj: Any, path: str, index: int) -> UeSpec:
    if not isinstance(obj, dict):
        _fail(path, "expected object")
    name = obj.get("name", f"ue{index}")
    if not isinstance(name, str) or not name:
        _fail(f"{path}.name", "expected non-empty string")
    imsi_text = _require(obj, path, "imsi")
    if not isinstance(imsi_text, str) or len(imsi_text) != IMSI_LEN:
        _fail(f"{path}.imsi", f"expected {IMSI_LEN}-digit string")
    mnc_len = _as_int(obj.get("mnc_len", 3), f"{path}.mnc_len", 2, 3)
    try:
        imsi = parse_imsi(imsi_text, mnc_len)
    except ValueError as exc:
        _fail(f"{path}.imsi", str(exc))
    msisdn = _require(obj, path, "msisdn")
    if not isinstance(msisdn, str):
        _fail(f"{path}.msisdn", f"expected string, got {msisdn!r}")
    try:
        validate_msisdn(msisdn)
    except ValueError as exc:
        _fail(f"{path}.msisdn", str(exc))
    imei = obj.get("imei", default_imei(imsi))
    if not isinstance(imei, str):
        _fail(f"{path}.imei", f"expected string, got {imei!r}")
    try:
        validate_imei(imei)
    except ValueError as exc:
        _fail(f"{path}.imei", str(exc))
    key_hex = obj.get("key")
    if key_hex is None:
        key = default_ue_key(imsi)
    else:
        try:
            key = bytes.fromhex(key_hex)
        except (TypeError, ValueError):
            _fail(f"{path}.key", f"expected hex string, got {key_hex!r}")
        if not key:
            _fail(f"{path}.key", "empty")

    traffic = []
    for i, item in enumerate(obj.get("app_traffic", [])):
        tpath = f"{path}.app_traffic[{i}]"
        if not isinstance(item, dict):
            _fail(tpath, "expected object")
        traffic.append(
            AppTrafficSpec(
                _as_int(_require(item, tpath, "t_ms"), f"{tpath}.t_ms", 0, 2**48),
                _as_int(_require(item, tpath, "bytes"), f"{tpath}.bytes", 0, 0xFFFF),
            )
        )
    if traffic != sorted(traffic, key=lambda a: a.t_ms):
        _fail(f"{path}.app_traffic", "times must be non-decreasing")

    moves = []
    for i, item in enumerate(obj.get("moves", [])):
        mpath = f"{path}.moves[{i}]"
        if not isinstance(item, dict):
            _fail(mpath, "expected object")
        moves.append(
            WaypointSpec(
                _as_int(_require(item, mpath, "t_ms"), f"{mpath}.t_ms", 0, 2**48),
                _as_position(_require(item, mpath, "position"), f"{mpath}.position"),
            )
        )
    if [m.t_ms for m in moves] != sorted(m.t_ms for m in moves):
        _fail(f"{path}.moves", "times must be non-decreasing")

    return UeSpec(
        name=name,
        imsi=imsi,
        key=key,
        msisdn=msisdn,
        imei=imei,
        position=_as_position(_require(obj, path, "position"), f"{path}.position"),
        initial_tmsi=_parse_tmsi(obj.get("initial_tmsi"), f"{path}.initial_tmsi"),
        hardened=_as_bool(obj.get("hardened", False), f"{path}.hardened"),
        power_on_ms=_as_int(obj.get("power_on_ms", 0), f"{path}.power_on_ms", 0, 2**48),
        app_traffic=tuple(traffic),
        moves=tuple(moves),
    )


def _parse_rogue(obj: Any, path: str) -> RogueSpec:
    if not isinstance(obj, dict):
        _fail(path, "expected object")
    mode = _require(obj, path, "mode")
    if mode not in attacker.MODES:
        _fail(f"{path}.mode", f"expected one of {attacker.MODES}, got {mode!r}")
    cause_name = obj.get("reject_cause", "plmn_not_allowed")
    try:
        cause = EmmCause[cause_name.upper()]
    except (KeyError, AttributeError):
        _fail(f"{path}.reject_cause", f"unknown cause {cause_name!r}")
    window = obj.get("active_ms")
    active: Optional[tuple[int, int]] = None
    if window is not None:
        if not isinstance(window, (list, tuple)) or len(window) != 2:
            _fail(f"{path}.active_ms", f"expected [start, end], got {window!r}")
        start = _as_int(window[0], f"{path}.active_ms[0]", 0, 2**48)
        end = _as_int(window[1], f"{path}.active_ms[1]", 0, 2**48)
        if end <= start:
            _fail(f"{path}.active_ms", "end must exceed start")
        active = (start, end)
    return RogueSpec(
        cell_id=_as_int(_require(obj, path, "cell_id"), f"{path}.cell_id", 0, MAX_CELL_ID),
        tac=_as_int(_require(obj, path, "tac"), f"{path}.tac", 0, 0xFFFF),
        plmn=_as_plmn(_require(obj, path, "plmn"), f"{path}.plmn"),
        earfcn=_as_int(_require(obj, path, "earfcn"), f"{path}.earfcn", 0, 0xFFFF),
        position=_as_position(_require(obj, path, "position"), f"{path}.position"),
        tx_power_dbm=_as_number(_require(obj, path, "tx_power_dbm"), f"{path}.tx_power_dbm"),
        mode=mode,
        reject_cause=cause,
        broadcast_period_ms=_as_int(obj.get("broadcast_period_ms", 40), f"{path}.broadcast_period_ms", 1, 10_000),
        min_rx_level_dbm=_as_int(obj.get("min_rx_level_dbm", -110), f"{path}.min_rx_level_dbm", -128, 127),
        priority_earfcns=_as_priority_pairs(obj.get("priority_earfcns", []), f"{path}.priority_earfcns"),
        active_ms=active,
    )


def parse_scenario(obj: Any) -> Scenario:
    if not isinstance(obj, dict):
        _fail("scenario", "expected a JSON object")
    name = obj.get("name", "scenario")
    if not isinstance(name, str):
        _fail("name", f"expected string, got {name!r}")
    seed = _as_int(obj.get("seed", 0), "seed", 0, 2**63 - 1)
    duration = _as_int(_require(obj, "scenario", "duration_ms"), "duration_ms", 1, 2**48)

    raw_cells = obj.get("cells", [])
    if not isinstance(raw_cells, list):
        _fail("cells", "expected list")
    cells = tuple(_parse_cell(c, f"cells[{i}]") for i, c in enumerate(raw_cells))

    raw_ues = obj.get("ues", [])
    if not isinstance(raw_ues, list):
        _fail("ues", "expected list")
    ues = tuple(_parse_ue(u, f"ues[{i}]", i) for i, u in enumerate(raw_ues))

    rogue = _parse_rogue(obj["rogue"], "rogue") if obj.get("rogue") is not None else None
    if not cells and rogue is None:
        _fail("cells", "scenario has nothing on the air")

    seen_ids: set[int] = set()
    for i, cell in enumerate(cells):
        if cell.cell_id in seen_ids:
            _fail(f"cells[{i}].cell_id", f"duplicate cell id {cell.cell_id}")
        seen_ids.add(cell.cell_id)
    if rogue is not None and rogue.cell_id in seen_ids:
        _fail("rogue.cell_id", f"duplicate cell id {rogue.cell_id}")

    seen_names: set[str] = set()
    seen_imsis: set[str] = set()
    for i, ue in enumerate(ues):
        if ue.name in seen_names:
            _fail(f"ues[{i}].name", f"duplicate name {ue.name!r}")
        seen_names.add(ue.name)
        if str(ue.imsi) in seen_imsis:
            _fail(f"ues[{i}].imsi", "duplicate imsi")
        seen_imsis.add(str(ue.imsi))

    msisdns = {ue.msisdn for ue in ues}
    pages = []
    for i, item in enumerate(obj.get("page_calls", [])):
        ppath = f"page_calls[{i}]"
        if not isinstance(item, dict):
            _fail(ppath, "expected object")
        msisdn = _require(item, ppath, "msisdn")
        if msisdn not in msisdns:
            _fail(f"{ppath}.msisdn", f"{msisdn!r} does not match any device")
        pages.append(
            PageCallSpec(_as_int(_require(item, ppath, "t_ms"), f"{ppath}.t_ms", 0, duration), msisdn)
        )

    toggles = []
    for i, item in enumerate(obj.get("airplane_toggles", [])):
        tpath = f"airplane_toggles[{i}]"
        if not isinstance(item, dict):
            _fail(tpath, "expected object")
        who = _require(item, tpath, "ue")
        if who not in seen_names:
            _fail(f"{tpath}.ue", f"{who!r} does not match any device")
        toggles.append(
            ToggleSpec(_as_int(_require(item, tpath, "t_ms"), f"{tpath}.t_ms", 0, duration), who)
        )

    erasures = []
    for i, item in enumerate(obj.get("tmsi_erasures", [])):
        epath = f"tmsi_erasures[{i}]"
        if not isinstance(item, dict):
            _fail(epath, "expected object")
        who = _require(item, epath, "ue")
        if who not in seen_names:
            _fail(f"{epath}.ue", f"{who!r} does not match any device")
        erasures.append(
            ErasureSpec(_as_int(_require(item, epath, "t_ms"), f"{epath}.t_ms", 0, duration), who)
        )

    raw_pl = obj.get("path_loss", {})
    if not isinstance(raw_pl, dict):
        _fail("path_loss", "expected object")
    path_loss = PathLossModel(
        exponent=_as_number(raw_pl.get("exponent", 3.5), "path_loss.exponent"),
        offset_db=_as_number(raw_pl.get("offset_db", 20.0), "path_loss.offset_db"),
        min_distance_m=_as_number(raw_pl.get("min_distance_m", 1.0), "path_loss.min_distance_m"),
    )

    return Scenario(
        name=name,
        seed=seed,
        duration_ms=duration,
        cells=cells,
        ues=ues,
        rogue=rogue,
        page_calls=tuple(pages),
        toggles=tuple(toggles),
        erasures=tuple(erasures),
        path_loss=path_loss,
        rx_floor_dbm=_as_number(obj.get("rx_floor_dbm", DEFAULT_RX_FLOOR_DBM), "rx_floor_dbm"),
        sniffer_enabled=_as_bool(obj.get("sniffer", True), "sniffer"),
        sniffer_position=_as_position(obj.get("sniffer_position", [0.0, 0.0]), "sniffer_position"),
    )


def load_scenario(path: str) -> Scenario:
    try:
        with open(path) as fh:
            obj = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ScenarioInvalid(f"not valid JSON: {exc}") from exc
    return parse_scenario(obj)
