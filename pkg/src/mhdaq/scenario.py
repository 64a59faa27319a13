"""Scenario configuration and the discrete-event run driver.

Topology: shared front-ends receive every section's trigger port, each
user section may also own a front-end, and every section's port is bound
to that section's event builder.  Simulated time advances on a heap of
sync pulses, trigger arrivals and sample-block completions.
"""
from __future__ import annotations

import configparser
import heapq
import io
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigInvalid, DataOverwritten
from .event_builder import BuilderConfig, EventBuilder
from .frontend import FrontEnd, RingBuffer, TriggerPort, legacy_scan, live_fraction, route
from .signal_model import AdcSpec, pedestal_block
from .storage import RunWriter
from .timestamp_sync import ClockModel, SyncState, apply_sync_pulse, ps_to_ticks
from .transport import Link, SendQueue, SyncMarker

PS_PER_S = 10 ** 12

_SYNC, _BLOCK, _TRIGGER = 0, 1, 2


@dataclass
class FrontendDef:
    name: str
    frontend_id: int
    adc: AdcSpec
    ring_capacity: int = 8192
    clock: ClockModel = field(default_factory=ClockModel)
    shared: bool = False
    pedestal_spread: int = 4


@dataclass
class SectionDef:
    name: str
    port_id: int
    rate_hz: float
    destination_id: int
    frontend: str | None = None


@dataclass
class ScenarioConfig:
    frontends: list
    sections: list
    duration_s: float = 10.0
    seed: int = 0
    pre_trigger_ns: float = 200.0
    post_trigger_ns: float = 800.0
    sync_interval_s: float = 1.0
    legacy: bool = True
    legacy_dead_time_us: float = 200.0
    block_samples: int = 1024
    queue_bound: int = 64
    consumer_batch: int = 0  # fragments per link per step; 0 drains
    lazy_sampling: bool = True
    timeout_ticks: int = 10_000_000
    run_id: int = 1
    epoch_ns: int = 0

    # -- validation ----------------------------------------------------------

    def validate(self) -> "ScenarioConfig":
        def bad(where, msg):
            raise ConfigInvalid(f"{where}: {msg}")

        if not self.duration_s >= 0:
            bad("[run] duration_s", "must be >= 0")
        if self.seed < 0:
            bad("[run] seed", "must be >= 0")
        if self.pre_trigger_ns < 0:
            bad("[run] pre_trigger_ns", "must be >= 0")
        if self.post_trigger_ns <= 0:
            bad("[run] post_trigger_ns", "must be > 0")
        if self.sync_interval_s <= 0:
            bad("[run] sync_interval_s", "must be > 0")
        if self.block_samples < 1:
            bad("[run] block_samples", "must be >= 1")
        if self.queue_bound < 1:
            bad("[run] queue_bound", "must be >= 1")
        if self.consumer_batch < 0:
            bad("[run] consumer_batch", "must be >= 0")
        if self.timeout_ticks < 1:
            bad("[run] timeout_ticks", "must be >= 1")
        if not self.frontends:
            bad("[frontend]", "at least one front-end is required")
        names, ids = set(), set()
        window_ps = round((self.pre_trigger_ns + self.post_trigger_ns) * 1000)
        for fe in self.frontends:
            where = f"[frontend {fe.name}]"
            if fe.name in names:
                bad(where, "duplicate front-end name")
            if fe.frontend_id in ids:
                bad(f"{where} id", f"duplicate front-end id {fe.frontend_id}")
            if not 0 <= fe.frontend_id <= 0xFFFF:
                bad(f"{where} id", "must fit in u16")
            if fe.adc.bits > 16:
                bad(f"{where} bits", "wire format carries at most 16-bit codes")
            if fe.ring_capacity * fe.adc.sample_period_ps < 4 * window_ps:
                bad(f"{where} ring_capacity",
                    f"retention {fe.ring_capacity * fe.adc.sample_period_ps} ps is below "
                    f"4 x window ({window_ps} ps)")
            names.add(fe.name)
            ids.add(fe.frontend_id)
        by_name = {fe.name: fe for fe in self.frontends}
        ports, snames = set(), set()
        for s in self.sections:
            where = f"[section {s.name}]"
            if s.name in snames:
                bad(where, "duplicate section name")
            if s.port_id in ports:
                bad(f"{where} port", f"port {s.port_id} already used")
            if not 0 <= s.port_id <= 0xFF:
                bad(f"{where} port", "must fit in u8")
            if not 0 <= s.destination_id <= 0xFFFF:
                bad(f"{where} destination", "must fit in u16")
            if not s.rate_hz >= 0:
                bad(f"{where} rate_hz", "must be >= 0")
            if s.frontend is not None:
                fe = by_name.get(s.frontend)
                if fe is None:
                    bad(f"{where} frontend", f"unknown front-end {s.frontend!r}")
                if fe.shared:
                    bad(f"{where} frontend", f"{s.frontend!r} is shared; name a user front-end")
            elif not any(fe.shared for fe in self.frontends):
                bad(where, "section has neither its own nor a shared front-end")
            ports.add(s.port_id)
            snames.add(s.name)
        return self

    # -- topology --------------------------------------------------------------

    def frontends_for(self, section: SectionDef) -> list:
        return [fe for fe in self.frontends if fe.shared or fe.name == section.frontend]

    def expected_frontends(self) -> dict:
        return {s.port_id: frozenset(fe.frontend_id for fe in self.frontends_for(s))
                for s in self.sections}

    # -- text format -------------------------------------------------------------

    @classmethod
    def from_text(cls, text: str) -> "ScenarioConfig":
        cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigInvalid(f"parse error: {exc}") from exc
        return _from_parser(cp)

    @classmethod
    def from_file(cls, path) -> "ScenarioConfig":
        with open(path, encoding="utf-8") as f:
            return cls.from_text(f.read())

    def to_text(self) -> str:
        out = io.StringIO()
        out.write("[run]\n")
        for key, _ in _RUN_KEYS.items():
            out.write(f"{key} = {_fmt(getattr(self, key))}\n")
        for fe in self.frontends:
            out.write(f"\n[frontend {fe.name}]\n")
            out.write(f"id = {fe.frontend_id}\nbits = {fe.adc.bits}\n"
                      f"sampling_rate_hz = {_fmt(fe.adc.sampling_rate_hz)}\n"
                      f"full_scale_v = {_fmt(fe.adc.full_scale_v)}\n"
                      f"noise_rms_v = {_fmt(fe.adc.noise_rms_v)}\n"
                      f"n_channels = {fe.adc.n_channels}\n"
                      f"ring_capacity = {fe.ring_capacity}\n"
                      f"offset_ps = {fe.clock.offset_ps}\n"
                      f"drift_ppm = {_fmt(fe.clock.drift_ppm)}\n"
                      f"shared = {_fmt(fe.shared)}\n"
                      f"pedestal_spread = {fe.pedestal_spread}\n")
        for s in self.sections:
            out.write(f"\n[section {s.name}]\n")
            out.write(f"port = {s.port_id}\nrate_hz = {_fmt(s.rate_hz)}\n"
                      f"destination = {s.destination_id}\n")
            if s.frontend is not None:
                out.write(f"frontend = {s.frontend}\n")
        return out.getvalue()


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


_RUN_KEYS = {
    "duration_s": float, "seed": int, "pre_trigger_ns": float, "post_trigger_ns": float,
    "sync_interval_s": float, "legacy": _bool, "legacy_dead_time_us": float,
    "block_samples": int, "queue_bound": int, "consumer_batch": int,
    "lazy_sampling": _bool, "timeout_ticks": int, "run_id": int, "epoch_ns": int,
}
_FE_KEYS = {
    "id": int, "bits": int, "sampling_rate_hz": float, "full_scale_v": float,
    "noise_rms_v": float, "n_channels": int, "ring_capacity": int, "offset_ps": int,
    "drift_ppm": float, "shared": _bool, "pedestal_spread": int,
}
_SECTION_KEYS = {"port": int, "rate_hz": float, "destination": int, "frontend": str}


def _typed(where, items, schema, required):
    values = {}
    for key, raw in items:
        if key not in schema:
            raise ConfigInvalid(f"{where} {key}: unknown key")
        try:
            values[key] = schema[key](raw)
        except ValueError as exc:
            raise ConfigInvalid(f"{where} {key}: {exc}") from None
    for key in required:
        if key not in values:
            raise ConfigInvalid(f"{where} {key}: required")
    return values


def _from_parser(cp) -> ScenarioConfig:
    run = {}
    frontends, sections = [], []
    for name in cp.sections():
        kind, _, label = name.partition(" ")
        label = label.strip()
        where = f"[{name}]"
        items = cp.items(name, raw=True)
        if kind == "run" and not label:
            run = _typed(where, items, _RUN_KEYS, ())
        elif kind == "frontend" and label:
            v = _typed(where, items, _FE_KEYS, ("id", "bits", "sampling_rate_hz"))
            try:
                adc = AdcSpec(v["bits"], v["sampling_rate_hz"], v.get("full_scale_v", 1.0),
                              v.get("noise_rms_v", 0.0), v.get("n_channels", 1))
            except ValueError as exc:
                raise ConfigInvalid(f"{where}: {exc}") from None
            try:
                clock = ClockModel(v.get("offset_ps", 0), v.get("drift_ppm", 0.0))
            except ValueError as exc:
                raise ConfigInvalid(f"{where} drift_ppm: {exc}") from None
            frontends.append(FrontendDef(label, v["id"], adc, v.get("ring_capacity", 8192),
                                         clock, v.get("shared", False),
                                         v.get("pedestal_spread", 4)))
        elif kind == "section" and label:
            v = _typed(where, items, _SECTION_KEYS, ("port", "rate_hz", "destination"))
            sections.append(SectionDef(label, v["port"], v["rate_hz"], v["destination"],
                                       v.get("frontend")))
        else:
            raise ConfigInvalid(f"{where}: unknown block (expected [run], "
                                f"[frontend NAME] or [section NAME])")
    return ScenarioConfig(frontends, sections, **run).validate()


def two_section_config(duration_s: float = 10.0, seed: int = 1, rates=(1000.0, 2000.0),
                       drifts_ppm=(0.0, 0.0, 0.0), offsets_ps=(0, 0, 0), **run) -> ScenarioConfig:
    """Shared (BigRIPS-style) front-end plus one front-end per user section.

    The 1 kHz / 2 kHz rates are illustrative, chosen below the few-kHz
    ceiling of the legacy system.
    """
    adc = AdcSpec(12, 125e6, 1.0, 0.0, 1)
    fes = [FrontendDef("shared", 0, adc, 8192, ClockModel(offsets_ps[0], drifts_ppm[0]), True),
           FrontendDef("user_a", 1, adc, 8192, ClockModel(offsets_ps[1], drifts_ppm[1])),
           FrontendDef("user_b", 2, adc, 8192, ClockModel(offsets_ps[2], drifts_ppm[2]))]
    sections = [SectionDef("A", 1, rates[0], 1, "user_a"),
                SectionDef("B", 2, rates[1], 2, "user_b")]
    return ScenarioConfig(fes, sections, duration_s=duration_s, seed=seed, **run).validate()


# -- trigger generation ---------------------------------------------------------------

def poisson_times_ps(rate_hz: float, duration_s: float, seed: int) -> np.ndarray:
    """Sorted arrival times (integer ps) of a Poisson process on [0, duration)."""
    if rate_hz <= 0 or duration_s <= 0:
        return np.zeros(0, dtype=np.int64)
    rng = np.random.default_rng(seed)
    mean = rate_hz * duration_s
    chunks, t = [], 0.0
    while t < duration_s:
        gaps = rng.exponential(1.0 / rate_hz, int(mean + 6 * math.sqrt(mean) + 16))
        times = t + np.cumsum(gaps)
        chunks.append(times)
        t = times[-1]
    times = np.concatenate(chunks)
    times = times[times < duration_s]
    return np.round(times * PS_PER_S).astype(np.int64)


# -- report ------------------------------------------------------------------------------

@dataclass
class SectionReport:
    name: str
    port_id: int
    destination_id: int
    rate_hz: float
    triggers: int = 0
    fragments: dict = field(default_factory=dict)  # front-end name -> count
    complete_events: int = 0
    incomplete_events: int = 0
    fragments_per_complete: set = field(default_factory=set)
    cross_delivered: int = 0
    losses: int = 0


@dataclass
class RunReport:
    sections: list
    simulated_s: float
    wall_s: float = 0.0
    triggers_total: int = 0
    multihost_losses: int = 0
    legacy_triggers: int = 0
    legacy_accepted: int = 0
    legacy_fraction: float = math.nan
    legacy_predicted: float = math.nan
    max_ts_spread_ticks: int = 0
    ts_within_1tick: int = 0
    ts_compared: int = 0
    spilled: int = 0
    files: dict = field(default_factory=dict)

    def fields(self) -> list[tuple[str, object]]:
        """Flat (key, value) list; excludes wall time so files are reproducible."""
        rows = [("simulated_s", self.simulated_s), ("triggers_total", self.triggers_total),
                ("multihost_losses", self.multihost_losses),
                ("legacy_triggers", self.legacy_triggers),
                ("legacy_accepted", self.legacy_accepted),
                ("legacy_fraction", self.legacy_fraction),
                ("legacy_predicted", self.legacy_predicted),
                ("max_ts_spread_ticks", self.max_ts_spread_ticks),
                ("ts_within_1tick", self.ts_within_1tick),
                ("ts_compared", self.ts_compared), ("spilled", self.spilled)]
        for s in self.sections:
            p = f"section.{s.name}."
            rows += [(p + "port", s.port_id), (p + "destination", s.destination_id),
                     (p + "rate_hz", s.rate_hz), (p + "triggers", s.triggers)]
            rows += [(p + f"fragments.{fe}", n) for fe, n in sorted(s.fragments.items())]
            rows += [(p + "complete_events", s.complete_events),
                     (p + "incomplete_events", s.incomplete_events),
                     (p + "cross_delivered", s.cross_delivered), (p + "losses", s.losses)]
        return rows

    def to_kv(self) -> str:
        return "".join(f"{k} = {_num(v)}\n" for k, v in self.fields())

    def to_csv(self) -> str:
        return "key,value\n" + "".join(f"{k},{_num(v)}\n" for k, v in self.fields())

    def to_text(self) -> str:
        out = io.StringIO()
        out.write(f"simulated time      : {self.simulated_s:g} s\n")
        for s in self.sections:
            out.write(f"section {s.name} (port {s.port_id} -> builder {s.destination_id}, "
                      f"{s.rate_hz:g} Hz)\n")
            out.write(f"  triggers issued   : {s.triggers}\n")
            for fe, n in sorted(s.fragments.items()):
                out.write(f"  fragments {fe:<8}: {n}\n")
            out.write(f"  events complete   : {s.complete_events}\n")
            out.write(f"  events incomplete : {s.incomplete_events}\n")
            out.write(f"  cross-delivered   : {s.cross_delivered}\n")
            out.write(f"  losses            : {s.losses}\n")
        out.write(f"multi-host losses   : {self.multihost_losses} of "
                  f"{self.triggers_total} triggers\n")
        if self.legacy_triggers:
            out.write(f"legacy accepted     : {self.legacy_accepted} of {self.legacy_triggers} "
                      f"= {self.legacy_fraction:.4f} (analytic 1/(1+r*tau) = "
                      f"{self.legacy_predicted:.4f}), lost {1 - self.legacy_fraction:.4f}\n")
        out.write(f"timestamp spread    : max {self.max_ts_spread_ticks} tick(s); "
                  f"{self.ts_within_1tick}/{self.ts_compared} triggers within 1 tick\n")
        out.write(f"spilled fragments   : {self.spilled}\n")
        return out.getvalue()


def _num(v):
    return f"{v:.6f}" if isinstance(v, float) else str(v)


# -- driver --------------------------------------------------------------------------------

class _Node:
    """One simulated front-end with its clock, sample source and outputs."""

    def __init__(self, fdef: FrontendDef, cfg: ScenarioConfig, ports, writer, queues):
        self.fdef = fdef
        adc = fdef.adc
        self.period = adc.sample_period_ps
        self.block = cfg.block_samples
        self.lazy = cfg.lazy_sampling
        self.pre_ps = round(cfg.pre_trigger_ns * 1000)
        ring = RingBuffer(adc.n_channels, fdef.ring_capacity, self.period)
        self.fe = FrontEnd(fdef.frontend_id, ring, ports, SyncState(fdef.frontend_id))
        self.key = (cfg.seed * 1_000_003 + fdef.frontend_id * 7919) & 0xFFFFFFFFFFFFFFFF
        self.writer = writer
        self.queues = queues  # destination -> SendQueue
        self.scheduled_blocks = set()

    def available(self, global_ps: int) -> int:
        """Samples fully digitized by ``global_ps``, rounded down to whole blocks."""
        local = self.fdef.clock.local_ps(global_ps)
        if local < 0:
            return 0
        return ((local // self.period + 1) // self.block) * self.block

    def block_done_global_ps(self, end_index: int) -> int:
        """Global time at which the block holding sample ``end_index - 1`` is complete."""
        need = -(-end_index // self.block) * self.block
        local = (need - 1) * self.period
        g = max(0, math.ceil(self.fdef.clock.global_ps(local)))
        while self.fdef.clock.local_ps(g) < local:
            g += 1
        return g

    def catch_up(self, global_ps: int) -> list:
        fe = self.fe
        target = self.available(global_ps)
        done = []
        if self.lazy:
            local = self.fdef.clock.local_ps(global_ps)
            keep = (local - self.pre_ps) // self.period
            first_pending = fe.earliest_pending_first()
            if first_pending is not None:
                keep = min(keep, first_pending)
            keep = min(target, (keep // self.block) * self.block)
            if keep > fe.ring.cursor:
                done += fe.skip_to(keep)
        while fe.ring.cursor < target:
            n = min(target - fe.ring.cursor, max(self.block, 1 << 16))
            done += fe.ingest(pedestal_block(self.fdef.adc, self.key, fe.ring.cursor, n,
                                             self.fdef.pedestal_spread))
        return done


def run_scenario(config: ScenarioConfig, out_dir=None) -> RunReport:
    """Simulate ``config``; writes run/event files and reports into ``out_dir`` if given."""
    wall0 = time.perf_counter()
    cfg = config.validate()
    duration_ps = round(cfg.duration_s * PS_PER_S)
    sync_ps = round(cfg.sync_interval_s * PS_PER_S)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)

    port_dest = {s.port_id: s.destination_id for s in cfg.sections}
    section_of_port = {s.port_id: i for i, s in enumerate(cfg.sections)}
    report = RunReport([SectionReport(s.name, s.port_id, s.destination_id, s.rate_hz)
                        for s in cfg.sections], cfg.duration_s)

    # builders, one per destination
    expected = cfg.expected_frontends()
    builders, builder_writers = {}, {}
    for dest in sorted(set(port_dest.values())):
        srcs = {p: expected[p] for p, d in port_dest.items() if d == dest}
        builders[dest] = EventBuilder(BuilderConfig(srcs, cfg.timeout_ticks), dest)
        if out_dir is not None:
            path = os.path.join(out_dir, f"builder_{dest}.mhdq")
            builder_writers[dest] = RunWriter(path, cfg.run_id, dest, cfg.epoch_ns)
            report.files[f"builder_{dest}"] = path

    # front-ends and their links
    nodes = []
    links = []
    for fdef in cfg.frontends:
        ports = [TriggerPort(s.port_id, s.destination_id, cfg.pre_trigger_ns,
                             cfg.post_trigger_ns)
                 for s in cfg.sections if fdef.shared or s.frontend == fdef.name]
        writer = None
        if out_dir is not None:
            path = os.path.join(out_dir, f"fe_{fdef.name}.mhdq")
            writer = RunWriter(path, cfg.run_id, fdef.frontend_id, cfg.epoch_ns)
            report.files[f"fe_{fdef.name}"] = path
        queues = {}
        for dest in sorted({p.destination_id for p in ports}):
            spill = None
            if out_dir is not None:
                spill = os.path.join(out_dir, "spill", f"fe{fdef.frontend_id}_to{dest}.spill")
            queues[dest] = SendQueue(dest, cfg.queue_bound, spill)
            bindings = [(p.port_id, p.destination_id) for p in ports]
            links.append((dest, Link(fdef.frontend_id, bindings, queues[dest])))
        node = _Node(fdef, cfg, ports, writer, queues)
        nodes.append(node)
        for s in cfg.sections:
            if fdef.shared or s.frontend == fdef.name:
                report.sections[section_of_port[s.port_id]].fragments[fdef.name] = 0

    # triggers: one Poisson stream per section from seed + index
    streams = [poisson_times_ps(s.rate_hz, cfg.duration_s, cfg.seed + i)
               for i, s in enumerate(cfg.sections)]
    for i, st in enumerate(streams):
        report.sections[i].triggers = len(st)
    all_t = np.concatenate(streams) if streams else np.zeros(0, np.int64)
    all_s = np.concatenate([np.full(len(st), i) for i, st in enumerate(streams)]) \
        if streams else np.zeros(0, np.int64)
    order = np.lexsort((all_s, all_t))
    all_t, all_s = all_t[order], all_s[order]
    report.triggers_total = len(all_t)
    members = [[n for n in nodes if n.fdef.shared or n.fdef.name == s.frontend]
               for s in cfg.sections]

    heap = []
    counter = 0

    def push(t, kind, payload):
        nonlocal counter
        heapq.heappush(heap, (t, kind, counter, payload))
        counter += 1

    # two pre-run pulses so rate correction is in place at run start
    push(-sync_ps, _SYNC, None)
    push(0, _SYNC, None)

    def emit(node, frags):
        for f in frags:
            if node.writer is not None:
                node.writer.write(f)
            report.sections[section_of_port[f.port_id]].fragments[node.fdef.name] += 1
            node.queues[route(f, node.fe.ports)].submit(f)

    def deliver(now_tick, drain):
        for dest, link in links:
            if not len(link.queue):
                continue
            builder = builders[dest]
            for frag in link.pump(None if drain or cfg.consumer_batch == 0
                                  else cfg.consumer_batch):
                record_events(dest, builder.submit_fragment(frag))
        for dest, builder in builders.items():
            record_events(dest, builder.advance_time(max(now_tick, builder.now)))

    def record_events(dest, events):
        for ev in events:
            sec = report.sections[section_of_port[ev.key.port_id]]
            if sec.destination_id != dest:
                sec.cross_delivered += 1
            if ev.complete:
                sec.complete_events += 1
                sec.fragments_per_complete.add(len(ev.fragments))
            else:
                sec.incomplete_events += 1
            if dest in builder_writers:
                builder_writers[dest].write(ev)

    spread_max = 0
    within = 0
    ti = 0
    n_trig = len(all_t)
    while heap or ti < n_trig:
        if ti < n_trig and (not heap or (int(all_t[ti]), _TRIGGER) < heap[0][:2]):
            now = int(all_t[ti])
            sidx = int(all_s[ti])
            ti += 1
            sec = cfg.sections[sidx]
            stamps = []
            for node in members[sidx]:
                emit(node, node.catch_up(now))
                local = node.fdef.clock.local_ps(now)
                try:
                    ts, frag = node.fe.trigger_local(sec.port_id, local)
                except DataOverwritten:
                    report.sections[sidx].losses += 1
                    continue
                stamps.append(ts)
                if frag is not None:
                    emit(node, [frag])
                else:
                    end = node.fe.next_pending_end()
                    blk = -(-end // node.block)
                    if blk not in node.scheduled_blocks:
                        node.scheduled_blocks.add(blk)
                        push(node.block_done_global_ps(end), _BLOCK, node)
            if len(stamps) > 1:
                spread = max(stamps) - min(stamps)
                spread_max = max(spread_max, spread)
                within += spread <= 1
                report.ts_compared += 1
        else:
            now, kind, _, payload = heapq.heappop(heap)
            if kind == _SYNC:
                for node in nodes:
                    local = node.fdef.clock.local_ps(now)
                    node.fe.sync = apply_sync_pulse(node.fe.sync, local, now)
                    if node.writer is not None:
                        node.writer.write(SyncMarker(local, now))
                if now >= 0 and now + sync_ps <= duration_ps:
                    push(now + sync_ps, _SYNC, None)
            else:
                node = payload
                before = node.fe.losses
                emit(node, node.catch_up(now))
                node.scheduled_blocks = {b for b in node.scheduled_blocks
                                         if b * node.block > node.fe.ring.cursor}
                if node.fe.losses != before:
                    report.multihost_losses += node.fe.losses - before
        deliver(ps_to_ticks(max(now, 0)), drain=False)

    deliver(ps_to_ticks(duration_ps), drain=True)
    for dest, builder in builders.items():
        record_events(dest, builder.flush())

    for node in nodes:
        report.spilled += sum(q.spilled for q in node.queues.values())
        for q in node.queues.values():
            q.close()
        if node.writer is not None:
            node.writer.close()
    for w in builder_writers.values():
        w.close()
    if out_dir is not None:
        spill_dir = os.path.join(out_dir, "spill")
        if os.path.isdir(spill_dir) and not os.listdir(spill_dir):
            os.rmdir(spill_dir)

    report.multihost_losses += sum(s.losses for s in report.sections)
    report.max_ts_spread_ticks = spread_max
    report.ts_within_1tick = within

    if cfg.legacy and n_trig:
        dead_us = cfg.legacy_dead_time_us
        ticks = np.array([ps_to_ticks(int(t)) for t in all_t], dtype=np.int64)
        mask = legacy_scan(ticks, dead_us)
        report.legacy_triggers = n_trig
        report.legacy_accepted = int(mask.sum())
        report.legacy_fraction = report.legacy_accepted / n_trig
        report.legacy_predicted = live_fraction(sum(s.rate_hz for s in cfg.sections),
                                                dead_us * 1e-6)

    report.wall_s = time.perf_counter() - wall0
    if out_dir is not None:
        for name, text in (("report.txt", report.to_text()), ("report.kv", report.to_kv()),
                           ("report.csv", report.to_csv())):
            path = os.path.join(out_dir, name)
            with open(path, "w", encoding="utf-8") as f:
                f.write(text)
            report.files[name] = path
    return report
