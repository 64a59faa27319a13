import dataclasses
import os

import pytest

from mhdaq.errors import ConfigInvalid
from mhdaq.scenario import ScenarioConfig, poisson_times_ps, run_scenario, two_section_config
from mhdaq.storage import read_run, replay_merge


def files_bytes(d):
    return {n: open(os.path.join(d, n), "rb").read() for n in sorted(os.listdir(d))
            if os.path.isfile(os.path.join(d, n))}


def test_zero_rate(tmp_path):
    cfg = two_section_config(duration_s=0.01, rates=(0.0, 0.0))
    rep = run_scenario(cfg, tmp_path)
    assert rep.triggers_total == 0
    assert all(s.complete_events == s.incomplete_events == 0 for s in rep.sections)
    for name in ("fe_shared", "fe_user_a", "fe_user_b", "builder_1", "builder_2"):
        run = read_run(rep.files[name])
        assert run.fragments() == [] and run.end is not None
    assert not os.path.exists(tmp_path / "spill")


def test_small_two_section_run(tmp_path):
    rep = run_scenario(two_section_config(duration_s=0.2, seed=3), tmp_path)
    assert rep.multihost_losses == 0 and rep.spilled == 0
    for s in rep.sections:
        assert s.incomplete_events == 0 and s.cross_delivered == 0
        assert s.complete_events == s.triggers
        assert s.fragments_per_complete <= {2}
        assert set(s.fragments.values()) == {s.triggers}
    assert rep.max_ts_spread_ticks <= 1
    built = read_run(rep.files["builder_1"]).records
    assert len(built) == rep.sections[0].complete_events


def test_seed_determinism(tmp_path):
    cfg = two_section_config(duration_s=0.1, seed=5)
    run_scenario(cfg, tmp_path / "a")
    run_scenario(cfg, tmp_path / "b")
    a, b = files_bytes(tmp_path / "a"), files_bytes(tmp_path / "b")
    assert a == b and "report.kv" in a
    run_scenario(two_section_config(duration_s=0.1, seed=6), tmp_path / "c")
    assert files_bytes(tmp_path / "c")["fe_shared.mhdq"] != a["fe_shared.mhdq"]


def test_lazy_sampling_is_transparent(tmp_path):
    base = two_section_config(duration_s=0.004, seed=2, rates=(3000.0, 5000.0))
    lazy = run_scenario(base, tmp_path / "lazy")
    full = run_scenario(dataclasses.replace(base, lazy_sampling=False), tmp_path / "full")
    assert lazy.triggers_total > 0
    assert files_bytes(tmp_path / "lazy") == files_bytes(tmp_path / "full")
    assert full.multihost_losses == 0


def test_slow_consumer_spills_without_loss(tmp_path):
    cfg = two_section_config(duration_s=0.05, seed=4, rates=(20_000.0, 30_000.0),
                             queue_bound=2, consumer_batch=1)
    rep = run_scenario(cfg, tmp_path)
    assert rep.spilled > 0 and rep.multihost_losses == 0
    for s in rep.sections:
        assert s.incomplete_events == 0 and s.complete_events == s.triggers
    assert not os.path.exists(tmp_path / "spill")


def test_drifting_clocks_stay_within_one_tick(tmp_path):
    cfg = two_section_config(duration_s=1.0, seed=9, drifts_ppm=(100.0, -100.0, 37.0),
                             offsets_ps=(5_000_000, -3_000_000, 12_345))
    rep = run_scenario(cfg, tmp_path)
    assert rep.max_ts_spread_ticks <= 1 and rep.ts_within_1tick == rep.ts_compared
    runs = [read_run(rep.files[k]) for k in ("fe_shared", "fe_user_a", "fe_user_b")]
    res = replay_merge(runs, 100, {1, 2})
    online = [e for k in ("builder_1", "builder_2") for e in read_run(rep.files[k]).records]
    canon = lambda fr: tuple(sorted((f.frontend_id, f.port_id, f.seq_no) for f in fr))
    assert sorted(canon(e.fragments) for e in res.events) == \
        sorted(canon(e.fragments) for e in online)
    assert res.unmatched == []


def test_config_text_round_trip():
    cfg = two_section_config(duration_s=2.5, seed=11, drifts_ppm=(1.5, -2.0, 0.0))
    again = ScenarioConfig.from_text(cfg.to_text())
    assert again == cfg


def test_shipped_configs_parse():
    root = os.path.join(os.path.dirname(__file__), "..", "configs")
    for name in os.listdir(root):
        ScenarioConfig.from_file(os.path.join(root, name))


@pytest.mark.parametrize("edit, field", [
    (lambda t: t.replace("bits = 12", "bits = 18", 1), "bits"),
    (lambda t: t.replace("ring_capacity = 8192", "ring_capacity = 10", 1), "ring_capacity"),
    (lambda t: t.replace("port = 2", "port = 1"), "port"),
    (lambda t: t.replace("rate_hz = 1000.0", "rate_hz = -1"), "rate_hz"),
    (lambda t: t.replace("seed = 1", "seed = x"), "seed"),
    (lambda t: t.replace("frontend = user_a", "frontend = nobody"), "frontend"),
])
def test_config_errors_name_the_field(edit, field):
    text = edit(two_section_config().to_text())
    with pytest.raises(ConfigInvalid, match=field):
        ScenarioConfig.from_text(text)


def test_poisson_stream_properties():
    t = poisson_times_ps(1000.0, 10.0, seed=1)
    assert (t[1:] >= t[:-1]).all() and t[0] >= 0 and t[-1] < 10 * 10 ** 12
    assert abs(len(t) - 10_000) < 5 * 100
    assert (poisson_times_ps(1000.0, 10.0, seed=1) == t).all()
    assert len(poisson_times_ps(0.0, 10.0, seed=1)) == 0
