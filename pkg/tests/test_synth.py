import filecmp
from collections import Counter, defaultdict

import numpy as np
import pytest

from forumleak import ConfigError
from forumleak.delay import compute_delays
from forumleak.model import HOUR, load_dataset, record_multiset
from forumleak.synth import (
    GroundTruth, SynthConfig, generate, mean_trigger_probability, mixture_pdf, null_config, planted_density,
    sample_mixture_delays, write_synthetic,
)

SMALL = SynthConfig(n_users=300, span_weeks=8, seed=1)


def test_same_seed_same_files(tmp_path):
    write_synthetic(SMALL, tmp_path / "a")
    write_synthetic(SMALL, tmp_path / "b")
    cmp = filecmp.dircmp(tmp_path / "a", tmp_path / "b")
    assert not cmp.diff_files and not cmp.left_only and not cmp.right_only
    assert sorted(cmp.same_files) == sorted(
        ["users.jsonl", "threads.jsonl", "posts.jsonl", "pms.jsonl", "groundtruth.jsonl", "synth_config.json"])


def test_files_load_strictly(tmp_path):
    ds, truth = write_synthetic(SMALL, tmp_path)
    loaded, report = load_dataset(tmp_path, strict=True)
    assert record_multiset(loaded) == record_multiset(ds)
    assert not report.repaired
    assert GroundTruth.read(tmp_path / "groundtruth.jsonl").triggers == truth.triggers


def test_zero_trigger_probability():
    cfg = SynthConfig(n_users=200, span_weeks=6, trigger_base=0, trigger_boost=0, tag_boost=0)
    _, truth = generate(cfg)
    assert not truth.triggered_posts
    assert all(v is None for v in truth.triggers.values())


def test_certain_trigger_without_background_recovers_planted_delays():
    cfg = SynthConfig(n_users=400, span_weeks=4, trigger_base=1, pm_background_rate=0, seed=3)
    ds, truth = generate(cfg)
    starts = ds.thread_starts()
    assert {p.post_id for p in starts} == set(truth.triggered_posts)
    per_user = Counter(p.author_id for p in starts)
    planted = defaultdict(list)
    for pid, tau in truth.planted_delays:
        planted[pid].append(tau)
    observed = defaultdict(list)
    for d in compute_delays(ds):
        observed[d.post_id].append(d.tau)
    single = [p for p in starts if per_user[p.author_id] == 1]
    assert len(single) > 50
    for p in single:
        assert sorted(observed[p.post_id]) == sorted(planted[p.post_id])


def test_ground_truth_is_consistent():
    ds, truth = generate(SMALL)
    creator = {p.post_id: p.author_id for p in ds.thread_starts()}
    post_ts = {p.post_id: p.ts for p in ds.thread_starts()}
    for m in ds.messages:
        pid = truth.triggers[m.msg_id]
        if pid is not None:
            assert m.recipient_id == creator[pid]
            assert m.ts - post_ts[pid] > 0
            assert m.sender_id != m.recipient_id


def test_triggered_delays_follow_planted_mixture():
    cfg = SynthConfig(n_users=5000, trigger_base=1, triggered_pms_mean=3, seed=5)
    _, truth = generate(cfg)
    taus = np.array([t for _, t in truth.planted_delays]) / HOUR
    assert len(taus) >= 50_000
    edges = np.linspace(0, 20, 41)
    counts, _ = np.histogram(taus, bins=edges)
    w = cfg.fast_weight

    def cdf(x):
        return 1 - w * np.exp(-cfg.fast_rate * x) - (1 - w) * np.exp(-cfg.slow_rate * x)

    # delays are rounded up to whole seconds
    expected = len(taus) * np.diff(cdf(edges - 1 / HOUR).clip(0))
    assert np.all(np.abs(counts - expected) <= 3 * np.sqrt(expected))


def test_planted_density_closed_forms():
    cfg = SynthConfig()
    n_posts = cfg.n_users * cfg.post_rate * cfg.span_weeks * 7
    p, m = mean_trigger_probability(cfg), cfg.triggered_pms_mean
    bg = n_posts * (cfg.pm_background_rate + cfg.post_rate * p * m) / 24
    assert planted_density(cfg, 0.0) == pytest.approx(n_posts * p * m * mixture_pdf(cfg, 0.0) + bg)
    flat = SynthConfig(trigger_base=0, trigger_boost=0, tag_boost=0)
    vals = planted_density(flat, np.array([0.0, 1.0, 50.0]))
    assert np.all(vals == vals[0])
    fast_only = SynthConfig(fast_weight=1.0)
    d = planted_density(fast_only, np.array([0.0, 1.0])) - planted_density(fast_only, 1e6)
    assert d[1] / d[0] == pytest.approx(np.exp(-fast_only.fast_rate))
    with pytest.raises(ValueError):
        planted_density(cfg, -1.0)


def test_null_config_keeps_trigger_rate():
    cfg = SynthConfig()
    null = null_config(cfg)
    assert mean_trigger_probability(null) == pytest.approx(mean_trigger_probability(cfg))
    assert null.trigger_boost == 0 and null.tag_boost == 0


@pytest.mark.parametrize("bad", [dict(n_users=0), dict(post_rate=-1), dict(fast_weight=1.5), dict(tag_prob=-0.1)])
def test_invalid_configs(bad):
    with pytest.raises(ConfigError):
        generate(SynthConfig(**bad))


def test_unknown_setting_rejected():
    with pytest.raises(ConfigError):
        SynthConfig.from_dict({"n_user": 5})


def test_sample_mixture_delays_in_range():
    taus = sample_mixture_delays(10_000, 40, 2, 4, 0.05, 0.5, 10, seed=0)
    assert taus.min() >= 1 and taus.max() <= 10 * HOUR
    assert np.array_equal(taus, sample_mixture_delays(10_000, 40, 2, 4, 0.05, 0.5, 10, seed=0))
