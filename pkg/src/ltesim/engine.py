"""Run loop: devices, network, rogue, and observer over simulated time.

Time is integer milliseconds. The loop is event-driven: a heap of
instants that something cares about (broadcast schedules, queued
deliveries, device timers, network deadlines, scenario directives), so
quiet stretches cost nothing.

Within one tick the stages are fixed, and that order is part of the
determinism contract:

    1. broadcasts born this tick (operator cells, then rogue)
    2. downlinks queued by the previous tick reach their devices
    3. scheduled device events (power, traffic, toggles), then due timers
    4. paging directives enter the network
    5. this tick's uplinks reach the cells; responses queue for t+1
    6. network timers (idle transitions, stale handover preparations)
    7. invariant checks

Uplinks arrive the tick they are sent; every downlink answer lands one
tick later and is stamped with its delivery time. An addressed downlink
goes to the device whose uplink caused it; broadcasts go to every
powered device in range. Each frame is encoded exactly once, and the
same bytes feed the sniffer, the capture log, and (decoded) the
receiving party.

The capture is JSON lines. Frame lines carry the header fields, a
decoded body for cleartext frames or `"type": "opaque"` plus key_id for
protected ones, the body length, and the receive level at the sniffer's
position (rounded to 0.1 dB). Paging directives leave a
`{"meta": "page_trigger"}` line so a replay knows what the attacker
knew. `replay_capture` reconstructs the frame stream from such a file
and must land on the identical tracking report.
"""

from __future__ import annotations

import heapq
import json
import struct
from dataclasses import dataclass
from typing import Iterable, Optional

from . import codec
from .attacker import RogueCell, RogueCellConfig
from .codec import Direction, FrameHeader
from .core import CellConfig, Downlink, HssRecord, NetworkCore
from .identity import format_tmsi
from .prng import child_rng
from .radio import Rat, rx_power, visible_cells
from .scenario import Scenario, UeSpec
from .sniffer import Sniffer, TrackingReport
from .ue import (
    AirplaneToggle,
    AppTraffic,
    Emission,
    EraseTmsi,
    PowerOn,
    Rx,
    Tick,
    Ue,
    UePhase,
    UeProfile,
)

UE_TX_POWER_DBM = 23.0


@dataclass
class RunResult:
    scenario: Scenario
    seed: int
    duration_ms: int
    capture_lines: list[str]
    report: Optional[TrackingReport]
    ground_truth: dict
    ues: dict[str, Ue]
    core: NetworkCore
    rogue: Optional[RogueCell]

    def capture_text(self) -> str:
        return "".join(line + "\n" for line in self.capture_lines)


def _dump(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


class Engine:
    def __init__(self, scenario: Scenario, seed: Optional[int] = None):
        self.sc = scenario
        self.seed = scenario.seed if seed is None else seed
        rng_for = lambda path: child_rng(self.seed, path)

        cell_cfgs = [
            CellConfig(
                radio=spec.radio(),
                broadcast_period_ms=spec.broadcast_period_ms,
                min_rx_level_dbm=spec.min_rx_level_dbm,
                priority_earfcns=spec.priority_earfcns,
                encrypt_handover_trigger=spec.encrypt_handover_trigger,
                rnti_refresh_on_idle=spec.rnti_refresh_on_idle,
                handover_hysteresis_db=spec.handover_hysteresis_db,
                rnti_preset=spec.rnti_preset,
            )
            for spec in scenario.cells
            if spec.rat is Rat.LTE
        ]
        self._gsm_radios = [spec.radio() for spec in scenario.cells if spec.rat is Rat.GSM]
        subscribers = [HssRecord(u.imsi, u.key, u.msisdn) for u in scenario.ues]
        self.core = NetworkCore(cell_cfgs, subscribers, rng_for)

        self.rogue: Optional[RogueCell] = None
        if scenario.rogue is not None:
            r = scenario.rogue
            self.rogue = RogueCell(
                RogueCellConfig(
                    radio=r.radio(),
                    mode=r.mode,
                    broadcast_period_ms=r.broadcast_period_ms,
                    min_rx_level_dbm=r.min_rx_level_dbm,
                    priority_earfcns=r.priority_earfcns,
                    reject_cause=r.reject_cause,
                    active_ms=r.active_ms,
                ),
                rng_for("rogue"),
            )

        self.ues: dict[str, Ue] = {}
        self._specs: dict[str, UeSpec] = {}
        self._name_of: dict[int, str] = {}
        for spec in scenario.ues:
            profile = UeProfile(
                imsi=spec.imsi,
                key=spec.key,
                msisdn=spec.msisdn,
                imei=spec.imei,
                initial_tmsi=spec.initial_tmsi,
                hardened=spec.hardened,
            )
            ue = Ue(profile, rng_for(f"ue/{spec.name}"), self._visibility_for(spec))
            self.ues[spec.name] = ue
            self._specs[spec.name] = spec
            self._name_of[id(ue)] = spec.name
            if spec.initial_tmsi is not None:
                self.core.bind_tmsi(spec.imsi, spec.initial_tmsi)

        self.sniffer = Sniffer() if scenario.sniffer_enabled else None
        self.capture: list[str] = []
        self.now = 0

        self._heap: list[int] = []
        self._pending_times: set[int] = set()
        self._dl_queue: dict[int, list[tuple[Downlink, Optional[Ue]]]] = {}
        self._ue_events: dict[str, dict[int, list]] = {name: {} for name in self.ues}
        for spec in scenario.ues:
            self._add_ue_event(spec.name, spec.power_on_ms, PowerOn())
            for item in spec.app_traffic:
                self._add_ue_event(spec.name, item.t_ms, AppTraffic(item.byte_count))
        for toggle in scenario.toggles:
            self._add_ue_event(toggle.ue, toggle.t_ms, AirplaneToggle())
        for erasure in scenario.erasures:
            self._add_ue_event(erasure.ue, erasure.t_ms, EraseTmsi())
        self._page_calls: dict[int, list[str]] = {}
        for call in scenario.page_calls:
            self._page_calls.setdefault(call.t_ms, []).append(call.msisdn)
            self._schedule(call.t_ms)

    # -- wiring -----------------------------------------------------------------

    def _visibility_for(self, spec: UeSpec):
        def visible():
            return visible_cells(
                self._radios_on_air(self.now),
                spec.position_at(self.now),
                self.sc.rx_floor_dbm,
                self.sc.path_loss,
            )

        return visible

    def _radios_on_air(self, now_ms: int) -> list:
        radios = [cfg.radio for cfg in self.core.cells.values()]
        radios.extend(self._gsm_radios)
        if self.rogue is not None and self.rogue.active(now_ms):
            radios.append(self.rogue.config.radio)
        return radios

    def _cell_position(self, cell_id: int) -> tuple[float, float]:
        cfg = self.core.cells.get(cell_id)
        if cfg is not None:
            return cfg.radio.position
        if self.rogue is not None and cell_id == self.rogue.cell_id:
            return self.rogue.config.radio.position
        for radio in self._gsm_radios:
            if radio.cell_id == cell_id:
                return radio.position
        raise KeyError(f"no transmitter at cell {cell_id}")

    def _add_ue_event(self, name: str, t_ms: int, event) -> None:
        self._ue_events[name].setdefault(t_ms, []).append(event)
        self._schedule(t_ms)

    def _schedule(self, t_ms: int) -> None:
        if t_ms < 0 or t_ms > self.sc.duration_ms or t_ms in self._pending_times:
            return
        self._pending_times.add(t_ms)
        heapq.heappush(self._heap, t_ms)

    def _queue_dl(self, t_ms: int, dl: Downlink, causal: Optional[Ue]) -> None:
        self._dl_queue.setdefault(t_ms, []).append((dl, causal))
        self._schedule(t_ms)

    # -- main loop ---------------------------------------------------------------

    def run(self) -> RunResult:
        self._schedule(0)
        self._schedule_broadcasts(0)
        while self._heap:
            t = heapq.heappop(self._heap)
            self._pending_times.discard(t)
            self.now = t
            self._process(t)
            self._schedule_broadcasts(t)
        return self._result()

    def _process(self, t: int) -> None:
        ul_batch: list[tuple[Ue, Emission]] = []

        for dl in self.core.broadcast_tick(t):
            self._air_downlink(dl, t, None, ul_batch)
        if self.rogue is not None:
            for dl in self.rogue.broadcast_tick(t):
                self._air_downlink(dl, t, None, ul_batch)

        for dl, causal in self._dl_queue.pop(t, ()):
            self._air_downlink(dl, t, causal, ul_batch)

        for name, ue in self.ues.items():
            for event in self._ue_events[name].pop(t, ()):
                self._collect(ue, ue.step(event, t), ul_batch)
        for ue in self.ues.values():
            wake = ue.next_wake_ms()
            if wake is not None and wake <= t:
                self._collect(ue, ue.step(Tick(t), t), ul_batch)

        for msisdn in self._page_calls.pop(t, ()):
            if self.sniffer is not None:
                self.sniffer.note_triggered_page(t, msisdn)
            self.capture.append(_dump({"meta": "page_trigger", "t": t, "msisdn": msisdn}))
            for dl in self.core.page(msisdn, t):
                self._queue_dl(t + 1, dl, None)

        for ue, emission in ul_batch:
            self._air_uplink(ue, emission, t)

        self.core.tick(t)
        self.core.check_invariants()

        for ue in self.ues.values():
            wake = ue.next_wake_ms()
            if wake is not None and wake > t:
                self._schedule(wake)
        deadline = self.core.next_deadline_ms()
        if deadline is not None and deadline > t:
            self._schedule(deadline)

    def _schedule_broadcasts(self, t: int) -> None:
        nxt = self.core.next_broadcast_ms(t)
        if nxt is not None:
            self._schedule(nxt)
        if self.rogue is not None:
            nxt = self.rogue.next_broadcast_ms(t)
            if nxt is not None:
                self._schedule(nxt)

    def _collect(self, ue: Ue, emissions: list[Emission], ul_batch: list) -> None:
        for emission in emissions:
            ul_batch.append((ue, emission))

    # -- the air -----------------------------------------------------------------

    def _air_downlink(self, dl: Downlink, t: int, causal: Optional[Ue], ul_batch: list) -> None:
        header = FrameHeader(t, dl.cell_id, dl.rnti, Direction.DOWNLINK, key_id=dl.key_id)
        data = codec.encode(header, dl.message, self.core.keys)
        self._tap(data, header, dl.message, self._cell_position(dl.cell_id))
        if dl.rnti == 0:
            radio = next(r for r in self._radios_on_air(t) if r.cell_id == dl.cell_id)
            for name, ue in self.ues.items():
                if ue.phase is UePhase.POWERED_OFF:
                    continue
                at = self._specs[name].position_at(t)
                if rx_power(radio, at, self.sc.path_loss) >= self.sc.rx_floor_dbm:
                    self._collect(ue, ue.step(Rx(header, dl.message), t), ul_batch)
        elif causal is not None:
            self._collect(causal, causal.step(Rx(header, dl.message), t), ul_batch)

    def _air_uplink(self, ue: Ue, emission: Emission, t: int) -> None:
        header = FrameHeader(t, emission.cell_id, emission.rnti, Direction.UPLINK, key_id=emission.key_id)
        data = codec.encode(header, emission.message, self.core.keys)
        spec = self._specs[self._name_of[id(ue)]]
        self._tap(data, header, emission.message, spec.position_at(t))
        if emission.cell_id in self.core.cells:
            for dl in self.core.handle_uplink(header, emission.message, t):
                self._queue_dl(t + 1, dl, ue)
        elif self.rogue is not None and emission.cell_id == self.rogue.cell_id:
            for dl in self.rogue.handle_uplink(header, emission.message, t):
                self._queue_dl(t + 1, dl, ue)

    def _tap(self, data: bytes, header: FrameHeader, msg, tx_pos: tuple[float, float]) -> None:
        if self.sniffer is not None:
            self.sniffer.observe(data)
        tx_power = UE_TX_POWER_DBM if header.direction == Direction.UPLINK else None
        if tx_power is None:
            cfg = self.core.cells.get(header.cell_id)
            if cfg is not None:
                tx_power = cfg.radio.tx_power_dbm
            elif self.rogue is not None and header.cell_id == self.rogue.cell_id:
                tx_power = self.rogue.config.radio.tx_power_dbm
            else:
                tx_power = 0.0
        dx = tx_pos[0] - self.sc.sniffer_position[0]
        dy = tx_pos[1] - self.sc.sniffer_position[1]
        rx = tx_power - self.sc.path_loss.loss_db((dx * dx + dy * dy) ** 0.5)
        line = {
            "t": header.timestamp_ms,
            "cell": header.cell_id,
            "rnti": header.rnti,
            "dir": "ul" if header.direction == Direction.UPLINK else "dl",
            "prot": "protected" if header.protected else "clear",
            "len": codec.body_len(data),
            "rx": round(rx, 1),
        }
        if header.protected:
            line["type"] = "opaque"
            line["key_id"] = header.key_id
        else:
            line["type"] = msg.NAME
            line["body"] = codec.message_to_json(msg)
        self.capture.append(_dump(line))

    # -- results ------------------------------------------------------------------

    def _result(self) -> RunResult:
        return RunResult(
            scenario=self.sc,
            seed=self.seed,
            duration_ms=self.sc.duration_ms,
            capture_lines=self.capture,
            report=self.sniffer.report() if self.sniffer is not None else None,
            ground_truth=self._ground_truth(),
            ues=self.ues,
            core=self.core,
            rogue=self.rogue,
        )

    def _ground_truth(self) -> dict:
        trajectories = {}
        for name, ue in self.ues.items():
            traj: list[list[int]] = []
            for _, cell, rnti in ue.stats.rnti_history:
                if traj and traj[-1][0] == cell:
                    traj[-1] = [cell, rnti]
                else:
                    traj.append([cell, rnti])
            trajectories[name] = traj
        gt = {
            "seed": self.seed,
            "duration_ms": self.sc.duration_ms,
            "trajectories": trajectories,
            "final_phase": {n: u.phase.value for n, u in self.ues.items()},
            "tmsi": {
                n: (format_tmsi(u.tmsi) if u.tmsi is not None else None) for n, u in self.ues.items()
            },
            "imsi_cleartext_uplinks": {n: u.stats.imsi_cleartext_uplinks for n, u in self.ues.items()},
            "attach_attempts": {
                n: [[t, plmn, kind] for t, plmn, kind in u.stats.attach_attempts]
                for n, u in self.ues.items()
            },
            "handovers_completed": {n: u.stats.handovers_completed for n, u in self.ues.items()},
            "idle_transitions": {n: u.stats.idle_transitions for n, u in self.ues.items()},
            "rejects_ignored": {n: u.stats.rejects_ignored for n, u in self.ues.items()},
            "gsm_attached": {n: u.gsm_attached for n, u in self.ues.items()},
        }
        if self.rogue is not None:
            gt["catcher_log"] = [
                [e.t_ms, e.imsi, format_tmsi(e.tmsi) if e.tmsi is not None else None]
                for e in self.rogue.catcher_log
            ]
            gt["rogue_rejects"] = dict(sorted(self.rogue.rejects_sent.items()))
        return gt


def run(scenario: Scenario, seed: Optional[int] = None) -> RunResult:
    return Engine(scenario, seed).run()


# -- capture replay --------------------------------------------------------------


def reconstruct_frame(obj: dict) -> bytes:
    """Rebuild the on-air bytes a capture line describes. Cleartext
    bodies re-encode exactly; protected bodies get zero filler of the
    right length, which is indistinguishable to a keyless observer."""
    direction = Direction.UPLINK if obj["dir"] == "ul" else Direction.DOWNLINK
    if obj["prot"] == "protected":
        header = FrameHeader(obj["t"], obj["cell"], obj["rnti"], direction, key_id=obj["key_id"])
        return codec.pack_header(header) + struct.pack(">I", obj["key_id"]) + bytes(obj["len"] - 4)
    header = FrameHeader(obj["t"], obj["cell"], obj["rnti"], direction)
    return codec.encode(header, codec.message_from_json(obj["type"], obj["body"]))


def replay_capture(lines: Iterable[str]) -> TrackingReport:
    """Feed a capture file back through a fresh observer."""
    sniffer = Sniffer()
    for line in lines:
        line = line.strip()
        if not line:
            continue
        obj = json.loads(line)
        if obj.get("meta") == "page_trigger":
            sniffer.note_triggered_page(obj["t"], obj["msisdn"])
            continue
        sniffer.observe(reconstruct_frame(obj))
    return sniffer.report()


# -- report vs truth --------------------------------------------------------------


def _is_contiguous_sublist(needle: list, haystack: list) -> bool:
    n = len(needle)
    if n == 0 or n > len(haystack):
        return False
    return any(haystack[i : i + n] == needle for i in range(len(haystack) - n + 1))


def diff_tracking(ground_truth: dict, report: dict) -> dict:
    """Score each device's true walk against the observer's sessions.

    A session counts toward a device only if its trajectory appears as a
    contiguous run inside the true one; continuity is the best such
    coverage fraction. 1.0 means one session followed the device through
    every cell it visited."""
    sessions = report.get("sessions", [])
    per_ue = {}
    scores = []
    for name in sorted(ground_truth["trajectories"]):
        gt_traj = [tuple(hop) for hop in ground_truth["trajectories"][name]]
        best = 0.0
        best_id = None
        for s in sessions:
            st = [tuple(hop) for hop in s["trajectory"]]
            if gt_traj and _is_contiguous_sublist(st, gt_traj):
                frac = len(st) / len(gt_traj)
                if frac > best:
                    best, best_id = frac, s["session_id"]
        per_ue[name] = {
            "continuity": best,
            "session_id": best_id,
            "ground_truth_hops": len(gt_traj),
        }
        scores.append(best)
    return {
        "per_ue": per_ue,
        "mean_continuity": sum(scores) / len(scores) if scores else 0.0,
    }
