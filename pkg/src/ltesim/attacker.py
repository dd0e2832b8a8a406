"""Rogue base station and its reconnaissance helper.

The rogue answers the same random-access and connection steps a real
cell does, but it holds no subscriber keys, so nothing it sends is ever
integrity protected. Everything it achieves, it achieves with cleartext
frames that devices accept before authentication:

    imsi_catcher       harvest permanent identities, then wave the
                       device away with a cause it will retry after
    attach_reject_dos  answer every registration with a chosen cause
    tau_reject_dos     answer area updates with a chosen cause and
                       bounce plain attaches benignly
    downgrade          push devices off LTE with
                       eps_services_not_allowed

`scan_broadcast` does the attacker's homework: given a capture, rank
the overheard cells by signal strength and draft a spoof configuration
that copies the strongest operator's identity, advertises a
neighboring tracking area, and promotes its own channel so victims
reselect onto it.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Optional

from .codec import (
    AttachReject,
    AttachRequest,
    EmmCause,
    FrameHeader,
    IdentityKind,
    IdentityRequest,
    IdentityResponse,
    MacRar,
    Message,
    Mib,
    RachPreamble,
    RrcConnectionRequest,
    RrcConnectionSetup,
    Sib1,
    TauReject,
    TauRequest,
)
from .core import Downlink
from .identity import CellFull, Imsi, Plmn, RntiAllocator
from .radio import RadioCell

CATCHER_MODE = "imsi_catcher"
ATTACH_DOS_MODE = "attach_reject_dos"
TAU_DOS_MODE = "tau_reject_dos"
DOWNGRADE_MODE = "downgrade"
MODES = (CATCHER_MODE, ATTACH_DOS_MODE, TAU_DOS_MODE, DOWNGRADE_MODE)


class NoBroadcastFound(ValueError):
    """The capture held nothing worth impersonating."""


@dataclass
class RogueCellConfig:
    radio: RadioCell
    mode: str
    broadcast_period_ms: int = 40
    mib_bandwidth_rb: int = 50
    min_rx_level_dbm: int = -110
    priority_earfcns: tuple[tuple[int, int], ...] = ()
    reject_cause: EmmCause = EmmCause.PLMN_NOT_ALLOWED
    active_ms: Optional[tuple[int, int]] = None

    @property
    def cell_id(self) -> int:
        return self.radio.cell_id


@dataclass(frozen=True)
class CatchEntry:
    t_ms: int
    imsi: str
    tmsi: Optional[int]


@dataclass
class _RogueSession:
    tmsi: Optional[int] = None


class RogueCell:
    """One hostile cell. Same surface as an operator cell, no keys."""

    def __init__(self, config: RogueCellConfig, rng: random.Random):
        if config.mode not in MODES:
            raise ValueError(f"unknown rogue mode: {config.mode!r}")
        self.config = config
        self.allocator = RntiAllocator(rng)
        self.sessions: dict[int, _RogueSession] = {}
        self.catcher_log: list[CatchEntry] = []
        self._caught: set[str] = set()
        self.rejects_sent: dict[str, int] = {}

    @property
    def cell_id(self) -> int:
        return self.config.cell_id

    def active(self, now_ms: int) -> bool:
        window = self.config.active_ms
        if window is None:
            return True
        return window[0] <= now_ms < window[1]

    def broadcast_tick(self, now_ms: int) -> list[Downlink]:
        cfg = self.config
        if not self.active(now_ms) or now_ms == 0 or now_ms % cfg.broadcast_period_ms != 0:
            return []
        ident = cfg.radio.identity
        return [
            Downlink(cfg.cell_id, 0, Mib(cfg.mib_bandwidth_rb, (now_ms // 10) % 1024)),
            Downlink(
                cfg.cell_id,
                0,
                Sib1(
                    plmn=ident.plmn,
                    tac=ident.tac,
                    cell_id=cfg.cell_id,
                    min_rx_level_dbm=cfg.min_rx_level_dbm,
                    priority_earfcns=cfg.priority_earfcns,
                ),
            ),
        ]

    def next_broadcast_ms(self, now_ms: int) -> Optional[int]:
        period = self.config.broadcast_period_ms
        due = ((now_ms // period) + 1) * period
        window = self.config.active_ms
        if window is None:
            return due
        if due >= window[1]:
            return None
        return max(due, ((window[0] + period - 1) // period) * period)

    def handle_uplink(self, header: FrameHeader, msg: Message, now_ms: int) -> list[Downlink]:
        if not self.active(now_ms):
            return []
        if isinstance(msg, RachPreamble):
            try:
                temp = self.allocator.allocate()
            except CellFull:
                return []
            self.sessions[temp] = _RogueSession()
            return [Downlink(self.cell_id, temp, MacRar(temp_rnti=temp))]
        session = self.sessions.get(header.rnti)
        if session is None:
            return []
        if isinstance(msg, RrcConnectionRequest):
            session.tmsi = msg.tmsi
            return [Downlink(self.cell_id, header.rnti, RrcConnectionSetup())]
        mode = self.config.mode
        if mode == CATCHER_MODE:
            return self._catcher(header.rnti, session, msg, now_ms)
        if mode == ATTACH_DOS_MODE:
            if isinstance(msg, AttachRequest):
                return self._finish(header.rnti, AttachReject(self.config.reject_cause))
            if isinstance(msg, TauRequest):
                return self._finish(header.rnti, TauReject(self.config.reject_cause))
        elif mode == TAU_DOS_MODE:
            if isinstance(msg, TauRequest):
                return self._finish(header.rnti, TauReject(self.config.reject_cause))
            if isinstance(msg, AttachRequest):
                return self._finish(header.rnti, AttachReject(EmmCause.CONGESTION_BENIGN))
        elif mode == DOWNGRADE_MODE:
            if isinstance(msg, AttachRequest):
                return self._finish(header.rnti, AttachReject(EmmCause.EPS_SERVICES_NOT_ALLOWED))
            if isinstance(msg, TauRequest):
                return self._finish(header.rnti, TauReject(EmmCause.EPS_SERVICES_NOT_ALLOWED))
        return []

    def _catcher(self, rnti: int, session: _RogueSession, msg: Message, now_ms: int) -> list[Downlink]:
        if isinstance(msg, AttachRequest):
            if msg.imsi is not None:
                self._log(now_ms, msg.imsi, session.tmsi)
                return self._finish(rnti, AttachReject(EmmCause.CONGESTION_BENIGN))
            session.tmsi = msg.tmsi
            return [Downlink(self.cell_id, rnti, IdentityRequest(IdentityKind.IMSI))]
        if isinstance(msg, TauRequest):
            session.tmsi = msg.tmsi
            return [Downlink(self.cell_id, rnti, IdentityRequest(IdentityKind.IMSI))]
        if isinstance(msg, IdentityResponse) and msg.imsi is not None:
            self._log(now_ms, msg.imsi, session.tmsi)
            return self._finish(rnti, AttachReject(EmmCause.CONGESTION_BENIGN))
        return []

    def _log(self, now_ms: int, imsi: Imsi, tmsi: Optional[int]) -> None:
        text = str(imsi)
        if text in self._caught:
            return
        self._caught.add(text)
        self.catcher_log.append(CatchEntry(now_ms, text, tmsi))

    def _finish(self, rnti: int, reject: Message) -> list[Downlink]:
        cause = reject.emm_cause.name.lower()
        self.rejects_sent[cause] = self.rejects_sent.get(cause, 0) + 1
        self.sessions.pop(rnti, None)
        self.allocator.release(rnti)
        return [Downlink(self.cell_id, rnti, reject)]


# -- reconnaissance ---------------------------------------------------------


@dataclass
class OverheardCell:
    cell_id: int
    plmn: Plmn
    tac: int
    earfcn: Optional[int]
    best_rx_dbm: float
    sightings: int = 1


@dataclass
class SpoofDraft:
    """Suggested rogue configuration derived from a capture."""

    plmn: Plmn
    tac: int
    cell_id: int
    earfcn: int
    priority_earfcns: tuple[tuple[int, int], ...]
    mimics: int

    def as_json(self) -> dict:
        return {
            "plmn": {"mcc": self.plmn.mcc, "mnc": self.plmn.mnc},
            "tac": self.tac,
            "cell_id": self.cell_id,
            "earfcn": self.earfcn,
            "priority_earfcns": [list(pair) for pair in self.priority_earfcns],
            "mimics_cell": self.mimics,
        }


SPOOF_PRIORITY = 7


def scan_broadcast(records: list[dict]) -> tuple[list[OverheardCell], SpoofDraft]:
    """Rank overheard system information by signal strength and draft a
    spoof of the strongest cell.

    `records` are decoded capture lines; only downlink `sib1` entries
    carrying an rx measurement count. The draft copies the victim's
    operator identity, claims the next tracking area over (forcing an
    area update out of anyone who camps), takes an unused cell id, and
    advertises its own channel at top reselection priority.
    """
    heard: dict[int, OverheardCell] = {}
    for rec in records:
        if rec.get("type") != "sib1" or rec.get("rx") is None:
            continue
        body = rec.get("body", {})
        plmn = Plmn(body["plmn"]["mcc"], body["plmn"]["mnc"])
        cell_id = body["cell_id"]
        rx = float(rec["rx"])
        seen = heard.get(cell_id)
        if seen is None:
            # Squat the channel the operator itself steers devices to.
            pairs = body.get("priority_earfcns", [])
            earfcn = max(pairs, key=lambda p: p[1])[0] if pairs else None
            heard[cell_id] = OverheardCell(cell_id, plmn, body["tac"], earfcn, rx)
        else:
            seen.best_rx_dbm = max(seen.best_rx_dbm, rx)
            seen.sightings += 1
    if not heard:
        raise NoBroadcastFound("no system information with signal measurements in capture")
    ranked = sorted(heard.values(), key=lambda c: (-c.best_rx_dbm, c.cell_id))
    victim = ranked[0]
    spoof_earfcn = victim.earfcn if victim.earfcn is not None else 0
    draft = SpoofDraft(
        plmn=victim.plmn,
        tac=victim.tac + 1,
        cell_id=max(heard) + 1,
        earfcn=spoof_earfcn,
        priority_earfcns=((spoof_earfcn, SPOOF_PRIORITY),),
        mimics=victim.cell_id,
    )
    return ranked, draft
