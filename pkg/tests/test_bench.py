import json
import math

import pytest
from hypothesis import given, strategies as st

from conftest import two_link_config
from dtqncc.bench import config as config_mod
from dtqncc.bench.config import ConfigError, from_dict
from dtqncc.bench.experiments import (SWEEP_HEADER, apply_axis, fct_experiment, fairness, point_seed, sweep,
                                      sweep_csv)
from dtqncc.bench.metrics import fct_stats, integrated_capacity_bits, jfi, rtt_stats
from dtqncc.bench.scenario import (TIMESERIES_HEADER, read_csv, run_scenario, summary_dict,
                                   write_outputs)

# -- metrics ------------------------------------------------------------------


def test_jfi_examples():
    assert jfi([3, 1]) == pytest.approx(0.8)
    assert jfi([5, 5, 5]) == 1.0
    assert jfi([7, 0, 0, 0]) == pytest.approx(0.25)
    with pytest.raises(ValueError, match="zero"):
        jfi([0, 0])
    with pytest.raises(ValueError):
        jfi([])


@given(st.lists(st.floats(0, 1e9), min_size=1, max_size=10).filter(lambda x: sum(x) > 1e-3))
def test_jfi_bounds(x):
    v = jfi(x)
    assert 1 / len(x) - 1e-12 <= v <= 1 + 1e-12


def test_rtt_and_fct_stats():
    s = rtt_stats([10, 20, 30])
    assert s["mean_us"] == 20 and s["std_us"] == pytest.approx(math.sqrt(200 / 3))
    assert math.isnan(rtt_stats([])["cv"])
    f = fct_stats([1, 2, 3, 4])
    assert f["count"] == 4 and f["median_us"] == 2.5 and f["max_us"] == 4
    assert fct_stats([])["count"] == 0


def test_integrated_capacity_follows_trace():
    cfg = from_dict({"links": [{"rate_bps": 10_000_000, "prop_delay_us": 1000,
                                "square_wave": {"period_us": 1_000_000, "rates_bps": [5_000_000, 10_000_000]}}]})
    spec = cfg.links[0].to_spec(4_000_000)
    bits = integrated_capacity_bits(spec, 4_000_000)
    assert 7.5e6 * 4 * 0.95 <= bits <= 7.5e6 * 4 * 1.05


# -- config -------------------------------------------------------------------

def test_unknown_key_reports_path():
    with pytest.raises(ConfigError) as exc:
        from_dict({"links": [{"rate_bps": 1e7, "prop_delay_us": 1000, "bufer_bdp": 1}]})
    assert exc.value.path == "links[0].bufer_bdp"


def test_invalid_value_reports_path():
    with pytest.raises(ConfigError, match="links\\[1\\]"):
        from_dict({"links": [{"rate_bps": 1e7, "prop_delay_us": 1000}, {"rate_bps": -5, "prop_delay_us": 1000}]})


def test_config_yaml_round_trip(tmp_path):
    cfg = two_link_config(cc="dtqn")
    p = tmp_path / "c.yaml"
    p.write_text(config_mod.dump(cfg))
    back = config_mod.load(p)
    assert back == cfg and back.content_hash() == cfg.content_hash()
    assert cfg.replace(seed=2).content_hash() != cfg.content_hash()


# -- scenarios ----------------------------------------------------------------

@pytest.mark.slow
def test_reno_fills_two_links():
    res = run_scenario(two_link_config(duration_s=30))
    assert 17e6 <= res.metrics.goodput_bps <= 20e6
    assert res.metrics.capacity_bps == pytest.approx(20e6)


def test_zero_duration_is_empty():
    res = run_scenario(two_link_config(duration_s=0))
    assert res.metrics.goodput_bps == 0 and res.metrics.timeseries == [] and res.metrics.events == 0


def test_outputs_are_byte_deterministic(tmp_path):
    cfg = two_link_config(duration_s=2)
    a = write_outputs(run_scenario(cfg), tmp_path / "a")
    b = write_outputs(run_scenario(cfg), tmp_path / "b")
    for key in a:
        assert a[key].read_bytes() == b[key].read_bytes()
    c = write_outputs(run_scenario(cfg.replace(seed=9, links=[
        type(l)(**{**vars(l), "loss_prob": 0.01}) for l in cfg.links])), tmp_path / "c")
    assert a["timeseries"].read_bytes() != c["timeseries"].read_bytes()


def test_csv_round_trip(tmp_path):
    res = run_scenario(two_link_config(duration_s=1))
    paths = write_outputs(res, tmp_path)
    header, rows = read_csv(paths["timeseries"])
    assert tuple(header) == TIMESERIES_HEADER
    assert len(rows) == len(res.metrics.timeseries)
    for got, want in zip(rows, res.metrics.timeseries):
        assert [float(g) for g in got] == pytest.approx([float(w) for w in want], nan_ok=True)
    summary = json.loads(paths["summary"].read_text())
    assert summary["config_sha1"] == res.config.content_hash()
    assert summary == json.loads(json.dumps(summary_dict(res)))


def test_single_packet_fct():
    cfg = from_dict({"links": [{"rate_bps": 100_000_000, "prop_delay_us": 1000}], "duration_s": 1,
                     "workload": {"kind": "flows", "flow_sizes": [1000], "repetitions": 1}})
    stats = fct_experiment(cfg, [1000])
    # one serialisation + propagation out, ACK propagation back
    assert stats[1000]["fcts_us"] == [pytest.approx(2080, abs=100)]


def test_fct_scales_with_size():
    cfg = from_dict({"links": [{"rate_bps": 10_000_000, "prop_delay_us": 2000, "buffer_bdp": 4}],
                     "duration_s": 60, "workload": {"kind": "flows", "flow_sizes": [1], "repetitions": 1}})
    stats = fct_experiment(cfg, [2_000_000, 4_000_000], repetitions=2)
    small, large = stats[2_000_000]["mean_us"], stats[4_000_000]["mean_us"]
    assert large / small == pytest.approx(2.0, rel=0.2)
    assert stats[2_000_000]["count"] == 2


def test_fct_zero_repetitions_is_empty():
    cfg = two_link_config(duration_s=1)
    stats = fct_experiment(cfg, [10_000], repetitions=0)
    assert stats[10_000]["count"] == 0 and stats[10_000]["fcts_us"] == []


# -- sweeps and fairness --------------------------------------------------------

def test_point_seeds_are_distinct_and_stable():
    seeds = {point_seed(1, i, j) for i in range(10) for j in range(5)}
    assert len(seeds) == 50
    assert point_seed(1, 3, 2) == point_seed(1, 3, 2) != point_seed(2, 3, 2)


def test_apply_axis():
    cfg = two_link_config()
    assert [l.loss_prob for l in apply_axis(cfg, "loss", 0.01).links] == [0.01, 0.01]
    assert [l.buffer_bdp for l in apply_axis(cfg, "buffer", 0.3).links] == [0.3, 0.3]
    assert apply_axis(cfg, "edge_latency", 250).engine.edge_latency_us == 250
    with pytest.raises(ValueError):
        apply_axis(cfg, "jitter", 1)


def test_sweep_single_value_gives_one_row():
    rows = sweep(two_link_config(duration_s=1), "loss", [0.005])
    assert len(rows) == 1 and rows[0][:4] == ("loss", 0.005, 0, 0)
    assert rows[0][4] == point_seed(1, 0, 0)
    text = sweep_csv(rows)
    assert text.splitlines()[0] == ",".join(SWEEP_HEADER) and len(text.splitlines()) == 2
    with pytest.raises(ValueError):
        sweep(two_link_config(), "loss", [])


def test_loss_sweep_lowers_reno_goodput():
    rows = sweep(two_link_config(duration_s=5), "loss", [0.0, 0.01])
    assert rows[1][6] < rows[0][6]
    assert rows[1][12] > 0 and rows[0][12] == 0


def test_fairness_reports_jfi():
    res = fairness(two_link_config(duration_s=5), competing_cc="reno", link=0)
    m = res.metrics
    assert m.competing_goodput_bps > 0 and 0.5 <= m.jfi <= 1.0
