"""Operator-side control plane: cells, MME behavior, HSS, paging.

One NetworkCore owns a set of cells and the subscriber state behind
them. It answers random access, runs the attach and tracking-area
ladders, triggers handovers off measurement reports, idles quiet
sessions, and pages by temporary identity whenever one exists.

Reject behavior for malformed or out-of-order traffic: anything that
does not fit the expected step of a session's ladder is dropped and
counted (`drops`), with two spoken exceptions: an attach naming an
unknown subscriber is answered with AttachReject{plmn_not_allowed}, and
a failed authentication response tears the session down with the same
cause. All other causes in this model come from attackers, not from
this core.

Radio-id lifecycle: the MAC RAR assigns a temporary id which is simply
promoted to the connected id. A handover pre-allocates the final id at
the target when the trigger is sent, so the arriving device briefly
holds a RAR temp id and is then re-keyed to the prepared value by the
target's reconfiguration. An idle session parks its id (still reserved,
never reissued to others); on wake the network either re-keys the new
connection back to the parked value (default) or, with
`rnti_refresh_on_idle`, retires it so the device returns under a fresh
one. The parked value is excluded from draws by staying reserved, so a
refreshed id never equals the prior one.
"""

from __future__ import annotations

import enum
import random
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional

from .codec import (
    AttachAccept,
    AttachReject,
    AttachRequest,
    AuthenticationRequest,
    AuthenticationResponse,
    EmmCause,
    IdentityKind,
    IdentityRequest,
    IdentityResponse,
    MacRar,
    MeasurementReport,
    Message,
    Mib,
    MobilityControlInfo,
    Paging,
    RachPreamble,
    RrcConnectionReconfiguration,
    RrcConnectionReconfigurationComplete,
    RrcConnectionRequest,
    RrcConnectionSetup,
    SecurityModeCommand,
    SecurityModeComplete,
    Sib1,
    TauRequest,
    UserData,
    FrameHeader,
)
from .crypto_stub import derive_autn, derive_keystream_seed, stub_mac
from .identity import CellFull, Imsi, RntiAllocator, TmsiAllocator
from .radio import RadioCell
from .ue import IDLE_AFTER_MS

HO_PENDING_MS = 1_000
DEFAULT_BROADCAST_PERIOD_MS = 40
DEFAULT_MIB_BANDWIDTH_RB = 50


class UnknownSubscriber(KeyError):
    """Paging or lookup for someone the HSS never heard of."""


class InvariantViolation(RuntimeError):
    """Core state broke one of its own rules."""


@dataclass
class CellConfig:
    """One operator cell: its radio face plus scheduling and mitigation
    knobs. `rnti_preset` pins upcoming radio-id draws for replaying
    known captures."""

    radio: RadioCell
    broadcast_period_ms: int = DEFAULT_BROADCAST_PERIOD_MS
    mib_bandwidth_rb: int = DEFAULT_MIB_BANDWIDTH_RB
    min_rx_level_dbm: int = -110
    priority_earfcns: tuple[tuple[int, int], ...] = ()
    encrypt_handover_trigger: bool = False
    rnti_refresh_on_idle: bool = False
    handover_hysteresis_db: float = 3.0
    rnti_preset: tuple[int, ...] = ()

    @property
    def cell_id(self) -> int:
        return self.radio.cell_id


@dataclass
class HssRecord:
    imsi: Imsi
    key: bytes
    msisdn: str


class SessionState(enum.Enum):
    RACH_DONE = "rach_done"
    ATTACHING = "attaching"
    AUTHENTICATED = "authenticated"
    SECURED = "secured"
    REGISTERED = "registered"
    IDLE = "idle"


@dataclass
class SessionRecord:
    cell_id: int
    rnti: int
    state: SessionState
    created_ms: int
    imsi: Optional[Imsi] = None
    tmsi: Optional[int] = None
    key_id: Optional[int] = None
    security_active: bool = False
    expected_res: Optional[bytes] = None
    awaiting_identity: bool = False
    last_activity_ms: Optional[int] = None
    prior_rnti: Optional[int] = None
    handover_final_rnti: Optional[int] = None
    handover_pending: bool = False


@dataclass
class Downlink:
    """One frame the core wants on the air. Addressed frames answer the
    uplink that caused them; rnti 0 marks broadcast."""

    cell_id: int
    rnti: int
    message: Message
    key_id: Optional[int] = None


@dataclass
class _PendingHandover:
    record: SessionRecord
    final_rnti: int
    issued_ms: int


class NetworkCore:
    """MME, HSS, and every cell of one operator network."""

    def __init__(
        self,
        cells: list[CellConfig],
        subscribers: list[HssRecord],
        rng_for: Callable[[str], random.Random],
    ):
        self.cells: dict[int, CellConfig] = {}
        for cfg in cells:
            if cfg.cell_id in self.cells:
                raise InvariantViolation(f"duplicate cell id {cfg.cell_id}")
            self.cells[cfg.cell_id] = cfg
        self.allocators: dict[int, RntiAllocator] = {
            cid: RntiAllocator(rng_for(f"cell/{cid}/rnti"), cfg.rnti_preset)
            for cid, cfg in self.cells.items()
        }
        self.hss: dict[str, HssRecord] = {str(rec.imsi): rec for rec in subscribers}
        self._msisdn_index = {rec.msisdn: str(rec.imsi) for rec in subscribers}
        self.tmsi_allocator = TmsiAllocator(rng_for("core/tmsi"))
        self._auth_rng = rng_for("core/auth")
        self.keys: dict[int, bytes] = {}
        self._next_key_id = 1

        self.tmsi_of_imsi: dict[str, int] = {}
        self.imsi_of_tmsi: dict[int, str] = {}
        self.last_tac: dict[str, int] = {}

        self.active: dict[tuple[int, int], SessionRecord] = {}
        self.idle_by_tmsi: dict[int, SessionRecord] = {}
        self.idle_by_imsi: dict[str, SessionRecord] = {}
        self._ho_pending: dict[int, deque[_PendingHandover]] = {}

        self.drops: dict[str, int] = {}
        self.handovers_completed = 0
        self.idle_transitions = 0

    # -- provisioning -------------------------------------------------------

    def bind_tmsi(self, imsi: Imsi, tmsi: int) -> None:
        """Pre-register a temporary identity, as if assigned in an
        earlier session."""
        self.tmsi_of_imsi[str(imsi)] = tmsi
        self.imsi_of_tmsi[tmsi] = str(imsi)

    # -- broadcast ------------------------------------------------------------

    def broadcast_tick(self, now_ms: int) -> list[Downlink]:
        """Mib then Sib1 for every cell whose period divides now."""
        out: list[Downlink] = []
        for cid, cfg in self.cells.items():
            if now_ms == 0 or now_ms % cfg.broadcast_period_ms != 0:
                continue
            ident = cfg.radio.identity
            out.append(Downlink(cid, 0, Mib(cfg.mib_bandwidth_rb, (now_ms // 10) % 1024)))
            out.append(
                Downlink(
                    cid,
                    0,
                    Sib1(
                        plmn=ident.plmn,
                        tac=ident.tac,
                        cell_id=cid,
                        min_rx_level_dbm=cfg.min_rx_level_dbm,
                        priority_earfcns=cfg.priority_earfcns,
                    ),
                )
            )
        return out

    def next_broadcast_ms(self, now_ms: int) -> Optional[int]:
        times = [
            ((now_ms // cfg.broadcast_period_ms) + 1) * cfg.broadcast_period_ms
            for cfg in self.cells.values()
        ]
        return min(times) if times else None

    # -- uplink dispatch --------------------------------------------------------

    def handle_uplink(self, header: FrameHeader, msg: Message, now_ms: int) -> list[Downlink]:
        cfg = self.cells.get(header.cell_id)
        if cfg is None:
            self._drop("foreign_cell")
            return []
        if isinstance(msg, RachPreamble):
            return self._on_rach(cfg, now_ms)
        rec = self.active.get((header.cell_id, header.rnti))
        if rec is None:
            self._drop("no_session")
            return []
        if isinstance(msg, RrcConnectionRequest):
            return self._on_connection_request(cfg, rec, msg, now_ms)
        if isinstance(msg, AttachRequest):
            return self._on_attach_request(cfg, rec, msg, now_ms)
        if isinstance(msg, TauRequest):
            return self._on_tau_request(cfg, rec, msg, now_ms)
        if isinstance(msg, IdentityResponse):
            return self._on_identity_response(cfg, rec, msg, now_ms)
        if isinstance(msg, AuthenticationResponse):
            return self._on_auth_response(cfg, rec, msg, now_ms)
        if isinstance(msg, SecurityModeComplete):
            return self._on_security_complete(cfg, rec, now_ms)
        if isinstance(msg, MeasurementReport):
            return self.maybe_trigger_handover(cfg, rec, msg, now_ms)
        if isinstance(msg, RrcConnectionReconfigurationComplete):
            return self._on_reconfiguration_complete(cfg, rec, now_ms)
        if isinstance(msg, UserData):
            if rec.state is SessionState.REGISTERED:
                rec.last_activity_ms = now_ms
            return []
        self._drop("unexpected_" + type(msg).__name__)
        return []

    # -- ladder steps ----------------------------------------------------------

    def _on_rach(self, cfg: CellConfig, now_ms: int) -> list[Downlink]:
        pending = self._ho_pending.get(cfg.cell_id)
        try:
            temp = self.allocators[cfg.cell_id].allocate()
        except CellFull:
            self._drop("cell_full")
            return []
        if pending:
            entry = pending.popleft()
            rec = entry.record
            # The travelling session arrives: re-home it under the RAR id.
            self.active.pop((rec.cell_id, rec.rnti), None)
            self.allocators[rec.cell_id].release(rec.rnti)
            rec.cell_id = cfg.cell_id
            rec.rnti = temp
            rec.handover_final_rnti = entry.final_rnti
            self.active[(cfg.cell_id, temp)] = rec
        else:
            rec = SessionRecord(cfg.cell_id, temp, SessionState.RACH_DONE, now_ms)
            self.active[(cfg.cell_id, temp)] = rec
        return [Downlink(cfg.cell_id, temp, MacRar(temp_rnti=temp))]

    def _on_connection_request(
        self, cfg: CellConfig, rec: SessionRecord, msg: RrcConnectionRequest, now_ms: int
    ) -> list[Downlink]:
        if rec.state is not SessionState.RACH_DONE:
            self._drop("connection_request_out_of_order")
            return []
        out: list[Downlink] = []
        if msg.tmsi is not None and msg.tmsi in self.idle_by_tmsi:
            idle = self.idle_by_tmsi.pop(msg.tmsi)
            self.idle_by_imsi.pop(str(idle.imsi), None)
            rec.imsi, rec.tmsi = idle.imsi, idle.tmsi
            prior = idle.prior_rnti
            if prior is not None:
                if idle.cell_id == cfg.cell_id and not cfg.rnti_refresh_on_idle:
                    # Reissue the parked id: re-key before the ladder continues.
                    out.append(
                        Downlink(
                            cfg.cell_id,
                            rec.rnti,
                            RrcConnectionReconfiguration(MobilityControlInfo(cfg.cell_id, prior)),
                        )
                    )
                    self.active.pop((rec.cell_id, rec.rnti), None)
                    self.allocators[cfg.cell_id].release(rec.rnti)
                    rec.rnti = prior
                    self.active[(cfg.cell_id, prior)] = rec
                else:
                    self.allocators[idle.cell_id].release(prior)
        out.append(Downlink(cfg.cell_id, rec.rnti, RrcConnectionSetup()))
        return out

    def _on_attach_request(
        self, cfg: CellConfig, rec: SessionRecord, msg: AttachRequest, now_ms: int
    ) -> list[Downlink]:
        if rec.state is not SessionState.RACH_DONE:
            self._drop("attach_out_of_order")
            return []
        rec.state = SessionState.ATTACHING
        if msg.imsi is not None:
            if str(msg.imsi) not in self.hss:
                return self._reject(cfg, rec, EmmCause.PLMN_NOT_ALLOWED)
            rec.imsi = msg.imsi
            stale = self.idle_by_imsi.pop(str(msg.imsi), None)
            if stale is not None:
                self.idle_by_tmsi.pop(stale.tmsi, None)
                if stale.prior_rnti is not None:
                    self.allocators[stale.cell_id].release(stale.prior_rnti)
            return self._start_auth(cfg, rec)
        if rec.imsi is not None and rec.tmsi == msg.tmsi:
            return self._start_auth(cfg, rec)
        known = self.imsi_of_tmsi.get(msg.tmsi)
        if known is not None:
            rec.imsi = self.hss[known].imsi
            rec.tmsi = msg.tmsi
            return self._start_auth(cfg, rec)
        rec.awaiting_identity = True
        return [Downlink(cfg.cell_id, rec.rnti, IdentityRequest(IdentityKind.IMSI))]

    def _on_tau_request(
        self, cfg: CellConfig, rec: SessionRecord, msg: TauRequest, now_ms: int
    ) -> list[Downlink]:
        if rec.state is not SessionState.RACH_DONE:
            self._drop("tau_out_of_order")
            return []
        rec.state = SessionState.ATTACHING
        if rec.imsi is not None and rec.tmsi == msg.tmsi:
            return self._start_auth(cfg, rec)
        known = self.imsi_of_tmsi.get(msg.tmsi)
        if known is not None:
            rec.imsi = self.hss[known].imsi
            rec.tmsi = msg.tmsi
            return self._start_auth(cfg, rec)
        rec.awaiting_identity = True
        return [Downlink(cfg.cell_id, rec.rnti, IdentityRequest(IdentityKind.IMSI))]

    def _on_identity_response(
        self, cfg: CellConfig, rec: SessionRecord, msg: IdentityResponse, now_ms: int
    ) -> list[Downlink]:
        if not rec.awaiting_identity or msg.imsi is None:
            self._drop("identity_out_of_order")
            return []
        rec.awaiting_identity = False
        if str(msg.imsi) not in self.hss:
            return self._reject(cfg, rec, EmmCause.PLMN_NOT_ALLOWED)
        rec.imsi = msg.imsi
        return self._start_auth(cfg, rec)

    def _start_auth(self, cfg: CellConfig, rec: SessionRecord) -> list[Downlink]:
        key = self.hss[str(rec.imsi)].key
        rand = self._auth_rng.randbytes(16)
        rec.expected_res = stub_mac(key, rand)
        return [Downlink(cfg.cell_id, rec.rnti, AuthenticationRequest(rand, derive_autn(key, rand)))]

    def _on_auth_response(
        self, cfg: CellConfig, rec: SessionRecord, msg: AuthenticationResponse, now_ms: int
    ) -> list[Downlink]:
        if rec.state is not SessionState.ATTACHING or rec.expected_res is None:
            self._drop("auth_out_of_order")
            return []
        if msg.res != rec.expected_res:
            return self._reject(cfg, rec, EmmCause.PLMN_NOT_ALLOWED)
        rec.expected_res = None
        rec.state = SessionState.AUTHENTICATED
        key_id = self._next_key_id
        self._next_key_id += 1
        rec.key_id = key_id
        self.keys[key_id] = derive_keystream_seed(self.hss[str(rec.imsi)].key, key_id)
        return [Downlink(cfg.cell_id, rec.rnti, SecurityModeCommand(key_id))]

    def _on_security_complete(self, cfg: CellConfig, rec: SessionRecord, now_ms: int) -> list[Downlink]:
        if rec.state is not SessionState.AUTHENTICATED:
            self._drop("smc_out_of_order")
            return []
        rec.security_active = True
        rec.state = SessionState.SECURED
        imsi_str = str(rec.imsi)
        tmsi = self.tmsi_of_imsi.get(imsi_str)
        if tmsi is None:
            tmsi = self.tmsi_allocator.allocate()
            self.bind_tmsi(rec.imsi, tmsi)
        rec.tmsi = tmsi
        rec.state = SessionState.REGISTERED
        rec.last_activity_ms = now_ms
        self.last_tac[imsi_str] = cfg.radio.identity.tac
        return [Downlink(cfg.cell_id, rec.rnti, AttachAccept(tmsi, cfg.radio.identity.tac), key_id=rec.key_id)]

    # -- mobility ---------------------------------------------------------------

    def maybe_trigger_handover(
        self, cfg: CellConfig, rec: SessionRecord, report: MeasurementReport, now_ms: int
    ) -> list[Downlink]:
        """Order a handover when a neighbor we own beats the serving cell
        by the hysteresis margin."""
        if rec.state is not SessionState.REGISTERED or rec.handover_pending:
            return []
        serving_rsrp = -128
        best: Optional[tuple[int, int]] = None
        for cell_id, rsrp in report.neighbors:
            if cell_id == rec.cell_id:
                serving_rsrp = rsrp
            elif cell_id in self.cells:
                if best is None or rsrp > best[1] or (rsrp == best[1] and cell_id < best[0]):
                    best = (cell_id, rsrp)
        if best is None or best[1] < serving_rsrp + cfg.handover_hysteresis_db:
            return []
        target_id = best[0]
        try:
            final = self.allocators[target_id].allocate()
        except CellFull:
            self._drop("handover_target_full")
            return []
        self._ho_pending.setdefault(target_id, deque()).append(_PendingHandover(rec, final, now_ms))
        rec.handover_pending = True
        trigger = RrcConnectionReconfiguration(MobilityControlInfo(target_id, final))
        key_id = rec.key_id if cfg.encrypt_handover_trigger else None
        return [Downlink(cfg.cell_id, rec.rnti, trigger, key_id=key_id)]

    def _on_reconfiguration_complete(self, cfg: CellConfig, rec: SessionRecord, now_ms: int) -> list[Downlink]:
        if rec.handover_final_rnti is None:
            return []
        final = rec.handover_final_rnti
        rec.handover_final_rnti = None
        rec.handover_pending = False
        temp = rec.rnti
        out = [
            Downlink(
                cfg.cell_id,
                temp,
                RrcConnectionReconfiguration(MobilityControlInfo(cfg.cell_id, final)),
                key_id=rec.key_id if cfg.encrypt_handover_trigger else None,
            )
        ]
        self.active.pop((cfg.cell_id, temp), None)
        self.allocators[cfg.cell_id].release(temp)
        rec.rnti = final
        self.active[(cfg.cell_id, final)] = rec
        self.handovers_completed += 1
        return out

    # -- time -------------------------------------------------------------------

    def tick(self, now_ms: int) -> None:
        """Idle out quiet sessions and expire stale handover preparations.

        The idle comparison is strict: downlink delivery lags emission by
        one tick, so the device's activity clock runs one tick behind
        ours after an accept. Strict-greater lands both sides in idle on
        the same tick.
        """
        for key in [
            k
            for k, rec in self.active.items()
            if rec.state is SessionState.REGISTERED
            and rec.last_activity_ms is not None
            and now_ms - rec.last_activity_ms > IDLE_AFTER_MS
            and not rec.handover_pending
        ]:
            rec = self.active.pop(key)
            rec.state = SessionState.IDLE
            rec.prior_rnti = rec.rnti
            rec.security_active = False
            rec.key_id = None
            self.idle_transitions += 1
            if rec.tmsi is not None:
                self.idle_by_tmsi[rec.tmsi] = rec
            if rec.imsi is not None:
                self.idle_by_imsi[str(rec.imsi)] = rec
        for target_id, pending in self._ho_pending.items():
            while pending and now_ms - pending[0].issued_ms > HO_PENDING_MS:
                entry = pending.popleft()
                self.allocators[target_id].release(entry.final_rnti)
                entry.record.handover_pending = False

    def next_deadline_ms(self) -> Optional[int]:
        candidates = []
        for rec in self.active.values():
            if rec.state is SessionState.REGISTERED and rec.last_activity_ms is not None:
                candidates.append(rec.last_activity_ms + IDLE_AFTER_MS + 1)
        for pending in self._ho_pending.values():
            for entry in pending:
                candidates.append(entry.issued_ms + HO_PENDING_MS + 1)
        return min(candidates) if candidates else None

    # -- paging -------------------------------------------------------------------

    def page(self, msisdn: str, now_ms: int) -> list[Downlink]:
        """Page a subscriber across their last known tracking area, by
        temporary identity whenever one exists."""
        imsi_str = self._msisdn_index.get(msisdn)
        if imsi_str is None:
            raise UnknownSubscriber(msisdn)
        tmsi = self.tmsi_of_imsi.get(imsi_str)
        if tmsi is not None:
            identity = Paging(tmsi=tmsi)
        else:
            identity = Paging(imsi=self.hss[imsi_str].imsi)
        tac = self.last_tac.get(imsi_str)
        cells = [cfg for cfg in self.cells.values() if tac is None or cfg.radio.identity.tac == tac]
        return [Downlink(cfg.cell_id, 0, identity) for cfg in cells or self.cells.values()]

    # -- bookkeeping ----------------------------------------------------------------

    def _reject(self, cfg: CellConfig, rec: SessionRecord, cause: EmmCause) -> list[Downlink]:
        self._teardown(rec)
        return [Downlink(cfg.cell_id, rec.rnti, AttachReject(cause))]

    def _teardown(self, rec: SessionRecord) -> None:
        self.active.pop((rec.cell_id, rec.rnti), None)
        self.allocators[rec.cell_id].release(rec.rnti)

    def _drop(self, reason: str) -> None:
        self.drops[reason] = self.drops.get(reason, 0) + 1

    def check_invariants(self) -> None:
        """Radio-id uniqueness per cell over non-idle sessions, and
        allocator consistency."""
        for (cell_id, rnti), rec in self.active.items():
            if rec.cell_id != cell_id or rec.rnti != rnti:
                raise InvariantViolation(f"session index mismatch at {(cell_id, rnti)}")
            if rnti not in self.allocators[cell_id].in_use:
                raise InvariantViolation(f"active rnti {rnti} not reserved at cell {cell_id}")
        seen: set[tuple[int, int]] = set()
        for key in self.active:
            if key in seen:
                raise InvariantViolation(f"duplicate active session key {key}")
            seen.add(key)
