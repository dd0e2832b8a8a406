"""Device-side control-plane state machine.

One class drives a phone's whole life: scan, camp, random-access,
connect, authenticate, register, report measurements, follow handover
orders, fall idle, wake on paging. The transition table below is the
contract; everything in it is deterministic given the event stream and
the device's seeded RNG.

Phase transitions:

    PoweredOff   --PowerOn-->                    Searching
    Searching    --eligible cell selected-->     RachInProgress (preamble sent)
    RachInProgress --MacRar-->                   Connecting (adopt temp rnti,
                                                 send RrcConnectionRequest);
                                                 for a handover arrival instead:
                                                 Registered (send reconfiguration
                                                 complete)
    Connecting   --RrcConnectionSetup-->         Connecting (send AttachRequest,
                                                 or TauRequest when registered
                                                 area differs)
    Connecting   --AuthenticationRequest-->      Authenticating (verify autn,
                                                 send response)
    Authenticating --SecurityModeCommand-->      Secured (send complete clear,
                                                 then activate protection)
    Secured      --AttachAccept-->               Registered (store tmsi, tac)
    any pre-accept --AttachReject/TauReject-->   by cause:
        congestion_benign: bar the cell, back off 1000 ms, Searching
        plmn_not_allowed: forbid the plmn for a T3245 draw of 24..48 h,
                          Blocked if every visible cell is now forbidden
                          else Searching
        eps_services_not_allowed: GsmOnly (LTE abandoned until toggle)
    Registered   --reconfiguration w/ mobility-->RachInProgress at target
    Registered   --reconfiguration to self-->    Registered (adopt new rnti)
    Registered   --5000 ms without user data-->  CampedIdle (drop rnti and
                                                 security context, keep tmsi)
    CampedIdle   --paging/app traffic-->         RachInProgress (wake)
    any armed    --AirplaneToggle-->             Searching (forbidden cleared,
                                                 LTE re-allowed, session dropped)

A hardened device (`reject_requires_integrity`) refuses to act on the
cause byte of any reject that arrives without integrity protection: the
connection still drops, but it bars the cell, backs off, and retries
instead of blocking itself or downgrading. In this model every reject is
unprotected, which is precisely the weakness the toggle addresses.

The RNTI appears in every frame header this device sends or is addressed
by; phases RachInProgress..Registered are the span where one may be
held. A security context exists only in Secured/Registered, or in
transit during a handover RACH.
"""

from __future__ import annotations

import enum
import random
from dataclasses import dataclass, field
from typing import Callable, Optional

from . import codec
from .codec import (
    AttachAccept,
    AttachReject,
    AttachRequest,
    AuthenticationRequest,
    AuthenticationResponse,
    EmmCause,
    FrameHeader,
    IdentityKind,
    IdentityRequest,
    IdentityResponse,
    MacRar,
    MeasurementReport,
    Message,
    Mib,
    Paging,
    RachPreamble,
    RrcConnectionReconfiguration,
    RrcConnectionReconfigurationComplete,
    RrcConnectionRequest,
    RrcConnectionSetup,
    SecurityModeCommand,
    Sib1,
    TauReject,
    TauRequest,
    UserData,
)
from .crypto_stub import derive_autn, derive_keystream_seed, stub_mac
from .identity import Imsi, Plmn
from .radio import RadioCell, Rat

T3245_MIN_MS = 86_400_000
T3245_MAX_MS = 172_800_000
MEAS_PERIOD_MS = 200
ATTACH_BACKOFF_MS = 1_000
IDLE_AFTER_MS = 5_000
CAMPED_RECHECK_MS = 200
PROC_GUARD_MS = 1_000
CELL_BAR_MS = 300_000


class IllegalTransition(RuntimeError):
    """Raised when the state machine is driven somewhere it cannot go."""


class UePhase(enum.Enum):
    POWERED_OFF = "powered_off"
    SEARCHING = "searching"
    CAMPED_IDLE = "camped_idle"
    RACH_IN_PROGRESS = "rach_in_progress"
    CONNECTING = "connecting"
    AUTHENTICATING = "authenticating"
    SECURED = "secured"
    REGISTERED = "registered"
    BLOCKED = "blocked"
    GSM_ONLY = "gsm_only"


class RatAllowed(enum.Enum):
    LTE_AND_GSM = "lte_and_gsm"
    GSM_ONLY = "gsm_only"


# Radio-id-holding span; see module docstring.
RNTI_PHASES = {
    UePhase.RACH_IN_PROGRESS,
    UePhase.CONNECTING,
    UePhase.AUTHENTICATING,
    UePhase.SECURED,
    UePhase.REGISTERED,
}


@dataclass(frozen=True)
class PowerOn:
    pass


@dataclass(frozen=True)
class AirplaneToggle:
    pass


@dataclass(frozen=True)
class EraseTmsi:
    pass


@dataclass(frozen=True)
class Tick:
    now_ms: int


@dataclass(frozen=True)
class Rx:
    header: FrameHeader
    message: Message


@dataclass(frozen=True)
class AppTraffic:
    byte_count: int


UeEvent = object


@dataclass(frozen=True)
class UeProfile:
    """SIM and hardware identity of one device."""

    imsi: Imsi
    key: bytes
    msisdn: str
    imei: str
    initial_tmsi: Optional[int] = None
    hardened: bool = False


@dataclass
class Emission:
    """One uplink the device wants on the air, with the addressing it
    chose at the moment of creation."""

    cell_id: int
    rnti: int
    message: Message
    key_id: Optional[int] = None


@dataclass
class UeStats:
    """Ground-truth counters the harness reads off the device."""

    attach_attempts: list[tuple[int, str, str]] = field(default_factory=list)
    imsi_cleartext_uplinks: int = 0
    handovers_completed: int = 0
    idle_transitions: int = 0
    rejects_ignored: int = 0
    rnti_history: list[tuple[int, int, int]] = field(default_factory=list)


def priority_of(earfcn: int, earfcn_priority: dict[int, int]) -> int:
    """Reselection priority for a channel; unadvertised channels rank 0."""
    return earfcn_priority.get(earfcn, 0)


def select_cell(
    visible: list[tuple[RadioCell, float]],
    sib1s: dict[int, Sib1],
    earfcn_priority: dict[int, int],
    forbidden_plmns: list[tuple[Plmn, int]],
    barred_cells: dict[int, int],
    rat_allowed: RatAllowed,
    now_ms: int,
) -> Optional[int]:
    """Pick the cell a device would camp on, or None.

    Eligibility: LTE cell with a received Sib1, rx above the cell's own
    advertised minimum, operator not under a live forbidden entry, cell
    not temporarily barred. Among eligible cells the advertised channel
    priority wins first, then rx power, then the lower cell id.
    """
    if rat_allowed is RatAllowed.GSM_ONLY:
        return None
    live_forbidden = {str(p) for p, deadline in forbidden_plmns if deadline > now_ms}
    best: Optional[tuple[int, float, int]] = None
    for cell, rx in visible:
        if cell.rat is not Rat.LTE:
            continue
        sib = sib1s.get(cell.cell_id)
        if sib is None:
            continue
        if rx < sib.min_rx_level_dbm:
            continue
        if str(sib.plmn) in live_forbidden:
            continue
        if barred_cells.get(cell.cell_id, 0) > now_ms:
            continue
        key = (-priority_of(cell.identity.earfcn, earfcn_priority), -rx, cell.cell_id)
        if best is None or key < best:
            best = key
    if best is None:
        return None
    return best[2]


class Ue:
    """One device. Feed it events via step(); collect its uplinks."""

    def __init__(
        self,
        profile: UeProfile,
        rng: random.Random,
        visibility: Callable[[], list[tuple[RadioCell, float]]],
    ):
        self.profile = profile
        self.rng = rng
        self._visible = visibility

        self.phase = UePhase.POWERED_OFF
        self.rat_allowed = RatAllowed.LTE_AND_GSM
        self.tmsi: Optional[int] = profile.initial_tmsi
        self.registered_tac: Optional[int] = None
        self.serving_cell: Optional[int] = None
        self.rnti: Optional[int] = None
        self.key_id: Optional[int] = None
        self.security_active = False
        self.keys: dict[int, bytes] = {}
        self.forbidden_plmns: list[tuple[Plmn, int]] = []
        self.barred_cells: dict[int, int] = {}
        self.gsm_attached = False
        self.position: tuple[float, float] = (0.0, 0.0)

        self.sib1s: dict[int, Sib1] = {}
        self.earfcn_priority: dict[int, int] = {}
        self.stats = UeStats()

        self._purpose: Optional[str] = None
        self._pending_app: list[int] = []
        self._paged = False
        self._next_meas_ms: Optional[int] = None
        self._camped_recheck_ms: Optional[int] = None
        self._proc_deadline_ms: Optional[int] = None
        self._backoff_until_ms: Optional[int] = None
        self._last_activity_ms: Optional[int] = None
        self._expected_rand: Optional[bytes] = None

    # -- event entry point ------------------------------------------------

    def step(self, event: UeEvent, now_ms: int) -> list[Emission]:
        out: list[Emission] = []
        if isinstance(event, PowerOn):
            self._power_on(now_ms)
        elif isinstance(event, AirplaneToggle):
            if self.phase is not UePhase.POWERED_OFF:
                self._airplane_toggle(now_ms)
        elif isinstance(event, Tick):
            self._tick(now_ms, out)
        elif isinstance(event, Rx):
            self._rx(event.header, event.message, now_ms, out)
        elif isinstance(event, AppTraffic):
            self._app_traffic(event.byte_count, now_ms, out)
        elif isinstance(event, EraseTmsi):
            self.erase_tmsi()
        else:
            raise IllegalTransition(f"unknown event: {event!r}")
        self._check_local_invariants()
        return out

    def erase_tmsi(self) -> None:
        """Directive: lose the temporary identity, as after SIM state loss."""
        self.tmsi = None
        self.registered_tac = None

    def next_wake_ms(self) -> Optional[int]:
        """Earliest future instant this device wants a Tick."""
        candidates = []
        if self._next_meas_ms is not None and self.phase is UePhase.REGISTERED:
            candidates.append(self._next_meas_ms)
        if self._camped_recheck_ms is not None and self.phase in (
            UePhase.CAMPED_IDLE,
            UePhase.SEARCHING,
        ):
            candidates.append(self._camped_recheck_ms)
        if self._proc_deadline_ms is not None:
            candidates.append(self._proc_deadline_ms)
        if self._backoff_until_ms is not None:
            candidates.append(self._backoff_until_ms)
        if self.phase is UePhase.REGISTERED and self._last_activity_ms is not None:
            candidates.append(self._last_activity_ms + IDLE_AFTER_MS)
        for _, deadline in self.forbidden_plmns:
            candidates.append(deadline)
        return min(candidates) if candidates else None

    # -- events ------------------------------------------------------------

    def _power_on(self, now_ms: int) -> None:
        if self.phase is not UePhase.POWERED_OFF:
            return
        self.phase = UePhase.SEARCHING
        self.forbidden_plmns.clear()
        self.barred_cells.clear()
        self.rat_allowed = RatAllowed.LTE_AND_GSM
        self.sib1s.clear()
        self.earfcn_priority.clear()

    def _airplane_toggle(self, now_ms: int) -> None:
        self.forbidden_plmns.clear()
        self.rat_allowed = RatAllowed.LTE_AND_GSM
        self._drop_session()
        self.gsm_attached = False
        self.sib1s.clear()
        self.earfcn_priority.clear()
        self.phase = UePhase.SEARCHING

    def _tick(self, now_ms: int, out: list[Emission]) -> None:
        self._expire_forbidden(now_ms)
        if self.phase in (UePhase.SEARCHING, UePhase.BLOCKED):
            if self._backoff_until_ms is None or now_ms >= self._backoff_until_ms:
                self._backoff_until_ms = None
                self._attempt_selection(now_ms, out)
                if self.rat_allowed is RatAllowed.GSM_ONLY and not self.gsm_attached:
                    # 2G cells do not broadcast here; keep polling.
                    self._camped_recheck_ms = now_ms + CAMPED_RECHECK_MS
        elif self.phase is UePhase.CAMPED_IDLE:
            if self._paged or self._pending_app:
                self._start_wake(now_ms, out)
            elif self._camped_recheck_ms is not None and now_ms >= self._camped_recheck_ms:
                self._camped_recheck_ms = now_ms + CAMPED_RECHECK_MS
                self._camped_reselect(now_ms, out)
        elif self.phase is UePhase.REGISTERED:
            if self._last_activity_ms is not None and now_ms - self._last_activity_ms >= IDLE_AFTER_MS:
                self._go_idle(now_ms)
            elif self._next_meas_ms is not None and now_ms >= self._next_meas_ms:
                self._next_meas_ms = now_ms + MEAS_PERIOD_MS
                self._emit_measurement_report(out)
        elif self.phase in (UePhase.RACH_IN_PROGRESS, UePhase.CONNECTING, UePhase.AUTHENTICATING, UePhase.SECURED):
            if self._proc_deadline_ms is not None and now_ms >= self._proc_deadline_ms:
                # Procedure stalled; drop it and look again.
                self._drop_session()
                self.phase = UePhase.SEARCHING
                self._attempt_selection(now_ms, out)

    def _rx(self, header: FrameHeader, msg: Message, now_ms: int, out: list[Emission]) -> None:
        if isinstance(msg, Mib):
            return
        if isinstance(msg, Sib1):
            self.sib1s[msg.cell_id] = msg
            for earfcn, priority in msg.priority_earfcns:
                self.earfcn_priority[earfcn] = priority
            if self.phase in (UePhase.SEARCHING, UePhase.BLOCKED):
                if self._backoff_until_ms is None or now_ms >= self._backoff_until_ms:
                    self._attempt_selection(now_ms, out)
            return
        if isinstance(msg, Paging):
            self._on_paging(msg, now_ms, out)
            return
        if header.cell_id != self.serving_cell:
            return
        if isinstance(msg, MacRar):
            self._on_mac_rar(msg, now_ms, out)
        elif isinstance(msg, RrcConnectionSetup):
            self._on_setup(now_ms, out)
        elif isinstance(msg, IdentityRequest):
            self._on_identity_request(msg, out)
        elif isinstance(msg, AuthenticationRequest):
            self._on_auth_request(msg, now_ms, out)
        elif isinstance(msg, SecurityModeCommand):
            self._on_security_mode_command(msg, now_ms, out)
        elif isinstance(msg, AttachAccept):
            self._on_attach_accept(msg, now_ms, out)
        elif isinstance(msg, (AttachReject, TauReject)):
            self._on_reject(header, msg.emm_cause, now_ms, out)
        elif isinstance(msg, RrcConnectionReconfiguration):
            self._on_reconfiguration(msg, now_ms, out)
        elif isinstance(msg, UserData):
            self._touch_activity(now_ms)

    def _app_traffic(self, byte_count: int, now_ms: int, out: list[Emission]) -> None:
        if self.phase is UePhase.REGISTERED:
            self._touch_activity(now_ms)
            out.append(self._emission(UserData(byte_count)))
        elif self.phase is UePhase.CAMPED_IDLE:
            self._pending_app.append(byte_count)
            self._start_wake(now_ms, out)
        elif self.phase is UePhase.POWERED_OFF:
            pass
        else:
            self._pending_app.append(byte_count)

    # -- selection and camping ----------------------------------------------

    def _attempt_selection(self, now_ms: int, out: list[Emission]) -> None:
        if self.rat_allowed is RatAllowed.GSM_ONLY:
            # Still hunting for a 2G cell; camped only once one is found.
            self._try_gsm_attach()
            return
        visible = self._visible()
        choice = select_cell(
            visible,
            self.sib1s,
            self.earfcn_priority,
            self.forbidden_plmns,
            self.barred_cells,
            self.rat_allowed,
            now_ms,
        )
        if choice is not None:
            self.serving_cell = choice
            self._start_rach(choice, "attach", now_ms, out)
            return
        self.phase = UePhase.BLOCKED if self._all_visible_forbidden(visible, now_ms) else UePhase.SEARCHING

    def _all_visible_forbidden(self, visible: list[tuple[RadioCell, float]], now_ms: int) -> bool:
        live = {str(p) for p, deadline in self.forbidden_plmns if deadline > now_ms}
        known = [c for c, _ in visible if c.rat is Rat.LTE and c.cell_id in self.sib1s]
        if not known:
            return False
        return all(str(self.sib1s[c.cell_id].plmn) in live for c in known)

    def _camped_reselect(self, now_ms: int, out: list[Emission]) -> None:
        choice = select_cell(
            self._visible(),
            self.sib1s,
            self.earfcn_priority,
            self.forbidden_plmns,
            self.barred_cells,
            self.rat_allowed,
            now_ms,
        )
        if choice is None or choice == self.serving_cell:
            return
        self.serving_cell = choice
        sib = self.sib1s.get(choice)
        if sib is None:
            return
        if self.tmsi is None or self.registered_tac is None:
            # No registration context to carry over: start from scratch.
            self._start_rach(choice, "attach", now_ms, out)
        elif sib.tac != self.registered_tac:
            # New tracking area: the network must be told where we are.
            self._start_rach(choice, "tau", now_ms, out)

    def _try_gsm_attach(self) -> None:
        for cell, _rx in self._visible():
            if cell.rat is Rat.GSM:
                self.serving_cell = cell.cell_id
                self.gsm_attached = True
                self.phase = UePhase.GSM_ONLY
                return

    def _start_rach(self, cell_id: int, purpose: str, now_ms: int, out: list[Emission]) -> None:
        self.phase = UePhase.RACH_IN_PROGRESS
        self._purpose = purpose
        self.rnti = None
        self._proc_deadline_ms = now_ms + PROC_GUARD_MS
        out.append(self._emission(RachPreamble(self.rng.randrange(64)), force_clear=True))

    def _start_wake(self, now_ms: int, out: list[Emission]) -> None:
        if self.serving_cell is None or self.serving_cell not in self.sib1s:
            self.phase = UePhase.SEARCHING
            self._attempt_selection(now_ms, out)
            return
        sib = self.sib1s[self.serving_cell]
        purpose = "attach"
        if self.tmsi is not None and self.registered_tac is not None and sib.tac != self.registered_tac:
            purpose = "tau"
        self._start_rach(self.serving_cell, purpose, now_ms, out)

    # -- connection ladder ---------------------------------------------------

    def _on_mac_rar(self, msg: MacRar, now_ms: int, out: list[Emission]) -> None:
        if self.phase is not UePhase.RACH_IN_PROGRESS:
            return
        self.rnti = msg.temp_rnti
        self.stats.rnti_history.append((now_ms, self.serving_cell, msg.temp_rnti))
        self._proc_deadline_ms = now_ms + PROC_GUARD_MS
        if self._purpose == "handover":
            self.phase = UePhase.REGISTERED
            self._proc_deadline_ms = None
            self._next_meas_ms = now_ms + MEAS_PERIOD_MS
            out.append(self._emission(RrcConnectionReconfigurationComplete()))
            return
        self.phase = UePhase.CONNECTING
        if self.tmsi is not None:
            ident = RrcConnectionRequest(tmsi=self.tmsi)
        else:
            ident = RrcConnectionRequest(random_id=self.rng.getrandbits(40))
        out.append(self._emission(ident))

    def _on_setup(self, now_ms: int, out: list[Emission]) -> None:
        if self.phase is not UePhase.CONNECTING:
            return
        self._proc_deadline_ms = now_ms + PROC_GUARD_MS
        plmn = self._serving_plmn()
        if self._purpose == "tau" and self.tmsi is not None:
            sib = self.sib1s[self.serving_cell]
            self.stats.attach_attempts.append((now_ms, plmn, "tau"))
            out.append(self._emission(TauRequest(self.tmsi, sib.tac)))
            return
        self.stats.attach_attempts.append((now_ms, plmn, "attach"))
        if self.tmsi is not None:
            out.append(self._emission(AttachRequest(tmsi=self.tmsi)))
        else:
            self.stats.imsi_cleartext_uplinks += 1
            out.append(self._emission(AttachRequest(imsi=self.profile.imsi)))

    def _on_identity_request(self, msg: IdentityRequest, out: list[Emission]) -> None:
        if self.phase not in (UePhase.CONNECTING, UePhase.AUTHENTICATING) or self.security_active:
            return
        if msg.requested is IdentityKind.IMSI:
            self.stats.imsi_cleartext_uplinks += 1
            out.append(self._emission(IdentityResponse(imsi=self.profile.imsi)))
        else:
            out.append(self._emission(IdentityResponse(imei=self.profile.imei)))

    def _on_auth_request(self, msg: AuthenticationRequest, now_ms: int, out: list[Emission]) -> None:
        if self.phase is not UePhase.CONNECTING:
            return
        if derive_autn(self.profile.key, msg.rand) != msg.autn:
            # Challenger does not hold our key; a real network always does.
            return
        self.phase = UePhase.AUTHENTICATING
        self._proc_deadline_ms = now_ms + PROC_GUARD_MS
        out.append(self._emission(AuthenticationResponse(stub_mac(self.profile.key, msg.rand))))

    def _on_security_mode_command(self, msg: SecurityModeCommand, now_ms: int, out: list[Emission]) -> None:
        if self.phase is not UePhase.AUTHENTICATING:
            return
        self.key_id = msg.key_id
        self.keys[msg.key_id] = derive_keystream_seed(self.profile.key, msg.key_id)
        # The completion itself crosses before protection switches on.
        out.append(self._emission(codec.SecurityModeComplete(), force_clear=True))
        self.security_active = True
        self.phase = UePhase.SECURED
        self._proc_deadline_ms = now_ms + PROC_GUARD_MS

    def _on_attach_accept(self, msg: AttachAccept, now_ms: int, out: list[Emission]) -> None:
        if self.phase is not UePhase.SECURED:
            return
        self.tmsi = msg.tmsi
        self.registered_tac = msg.tac
        self.phase = UePhase.REGISTERED
        self._purpose = None
        self._paged = False
        self._proc_deadline_ms = None
        self._next_meas_ms = now_ms + MEAS_PERIOD_MS
        self._camped_recheck_ms = None
        self._touch_activity(now_ms)
        for byte_count in self._pending_app:
            out.append(self._emission(UserData(byte_count)))
        self._pending_app.clear()

    def _on_reject(self, header: FrameHeader, cause: EmmCause, now_ms: int, out: list[Emission]) -> None:
        if self.phase not in (
            UePhase.RACH_IN_PROGRESS,
            UePhase.CONNECTING,
            UePhase.AUTHENTICATING,
            UePhase.SECURED,
        ):
            return
        rejecting_cell = header.cell_id
        plmn = self._serving_plmn_obj()
        self._drop_session()
        if self.profile.hardened and not header.protected:
            # Unauthenticated cause byte: refuse to honor it.
            self.stats.rejects_ignored += 1
            self.barred_cells[rejecting_cell] = now_ms + CELL_BAR_MS
            self._backoff_until_ms = now_ms + ATTACH_BACKOFF_MS
            self.phase = UePhase.SEARCHING
            return
        if cause is EmmCause.CONGESTION_BENIGN:
            self.barred_cells[rejecting_cell] = now_ms + CELL_BAR_MS
            self._backoff_until_ms = now_ms + ATTACH_BACKOFF_MS
            self.phase = UePhase.SEARCHING
        elif cause is EmmCause.PLMN_NOT_ALLOWED:
            if plmn is not None:
                deadline = now_ms + self.rng.randint(T3245_MIN_MS, T3245_MAX_MS)
                self.forbidden_plmns.append((plmn, deadline))
            self.phase = UePhase.SEARCHING
            self._attempt_selection(now_ms, out)
        elif cause is EmmCause.EPS_SERVICES_NOT_ALLOWED:
            self.rat_allowed = RatAllowed.GSM_ONLY
            self.serving_cell = None
            self._camped_recheck_ms = now_ms + CAMPED_RECHECK_MS
            self._try_gsm_attach()
            if not self.gsm_attached:
                self.phase = UePhase.SEARCHING

    def _on_reconfiguration(self, msg: RrcConnectionReconfiguration, now_ms: int, out: list[Emission]) -> None:
        if msg.mobility is None:
            return
        mob = msg.mobility
        if mob.target_cell_id == self.serving_cell:
            # In-place radio id change; also reached mid-ladder when the
            # network re-issues a parked radio id on wake from idle.
            if self.phase not in (UePhase.CONNECTING, UePhase.AUTHENTICATING, UePhase.SECURED, UePhase.REGISTERED):
                return
            self.rnti = mob.new_rnti
            self.stats.rnti_history.append((now_ms, self.serving_cell, mob.new_rnti))
            if self._purpose == "handover":
                self.stats.handovers_completed += 1
                self._purpose = None
            out.append(self._emission(RrcConnectionReconfigurationComplete()))
            return
        if self.phase is not UePhase.REGISTERED:
            return
        # Handover order: leave now, arrive via RACH.
        self.serving_cell = mob.target_cell_id
        self._purpose = "handover"
        self.rnti = None
        self.phase = UePhase.RACH_IN_PROGRESS
        self._proc_deadline_ms = now_ms + PROC_GUARD_MS
        out.append(self._emission(RachPreamble(self.rng.randrange(64)), force_clear=True))

    def _on_paging(self, msg: Paging, now_ms: int, out: list[Emission]) -> None:
        mine = (msg.tmsi is not None and msg.tmsi == self.tmsi) or (
            msg.imsi is not None and msg.imsi == self.profile.imsi
        )
        if not mine:
            return
        if self.phase is UePhase.CAMPED_IDLE:
            self._paged = True
            self._start_wake(now_ms, out)

    # -- periodic work -------------------------------------------------------

    def _emit_measurement_report(self, out: list[Emission]) -> None:
        entries = []
        for cell, rx in self._visible():
            if cell.rat is not Rat.LTE:
                continue
            rsrp = max(-128, min(127, round(rx)))
            entries.append((cell.cell_id, rsrp))
        out.append(self._emission(MeasurementReport(tuple(entries))))

    def _go_idle(self, now_ms: int) -> None:
        self.stats.idle_transitions += 1
        self.rnti = None
        self.key_id = None
        self.security_active = False
        self._purpose = None
        self._next_meas_ms = None
        self._last_activity_ms = None
        self._camped_recheck_ms = now_ms + CAMPED_RECHECK_MS
        self.phase = UePhase.CAMPED_IDLE

    # -- helpers ---------------------------------------------------------------

    def _emission(self, msg: Message, force_clear: bool = False) -> Emission:
        protected = self.security_active and not force_clear and not isinstance(msg, RachPreamble)
        return Emission(
            cell_id=self.serving_cell,
            rnti=self.rnti or 0,
            message=msg,
            key_id=self.key_id if protected else None,
        )

    def _touch_activity(self, now_ms: int) -> None:
        if self.phase is UePhase.REGISTERED:
            self._last_activity_ms = now_ms

    def _drop_session(self) -> None:
        self.rnti = None
        self.key_id = None
        self.security_active = False
        self._purpose = None
        self._next_meas_ms = None
        self._proc_deadline_ms = None
        self._last_activity_ms = None
        self.serving_cell = None

    def _expire_forbidden(self, now_ms: int) -> None:
        before = len(self.forbidden_plmns)
        self.forbidden_plmns = [(p, d) for p, d in self.forbidden_plmns if d > now_ms]
        if len(self.forbidden_plmns) < before and self.phase is UePhase.BLOCKED:
            self.phase = UePhase.SEARCHING

    def _serving_plmn(self) -> str:
        sib = self.sib1s.get(self.serving_cell)
        return str(sib.plmn) if sib else "?"

    def _serving_plmn_obj(self) -> Optional[Plmn]:
        sib = self.sib1s.get(self.serving_cell)
        return sib.plmn if sib else None

    def _check_local_invariants(self) -> None:
        if self.rnti is not None and self.phase not in RNTI_PHASES:
            raise IllegalTransition(f"rnti held in phase {self.phase}")
        if self.phase in RNTI_PHASES - {UePhase.RACH_IN_PROGRESS} and self.rnti is None:
            raise IllegalTransition(f"no rnti in phase {self.phase}")
        if self.security_active and self.phase not in (
            UePhase.SECURED,
            UePhase.REGISTERED,
            UePhase.RACH_IN_PROGRESS,
        ):
            raise IllegalTransition(f"security context live in phase {self.phase}")
        if self.security_active and self.phase is UePhase.RACH_IN_PROGRESS and self._purpose != "handover":
            raise IllegalTransition("security context live in a non-handover RACH")
