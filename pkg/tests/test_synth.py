import numpy as np
import pytest

from behaviorimg.features import OfficeHours, extract_matrix
from behaviorimg.ingest import load_corpus, load_ground_truth
from behaviorimg.synth import ScenarioConfig, generate


@pytest.fixture(scope="module")
def medium(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth_medium")
    result = generate(ScenarioConfig(users=50, days=60, seed=11, malicious_fraction=0.02), out)
    return result, load_corpus(out)


def test_small_contract(tmp_path):
    result = generate(ScenarioConfig(users=10, days=5, malicious_fraction=0.02, seed=7), tmp_path)
    assert len(result.malicious) >= 1
    corpus = load_corpus(tmp_path, strict=False)
    assert corpus.errors == []
    truth = load_ground_truth(result.ground_truth)
    assert truth.pairs == set(result.malicious)
    assert all(key in corpus.groups for key in truth.pairs)


def test_same_config_byte_identical(tmp_path):
    cfg = ScenarioConfig(users=12, days=7, seed=3)
    a = generate(cfg, tmp_path / "a")
    generate(cfg, tmp_path / "b")
    for name in [*a.files, "ground_truth.csv"]:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_different_seed_differs(tmp_path):
    generate(ScenarioConfig(users=12, days=7, seed=3), tmp_path / "a")
    generate(ScenarioConfig(users=12, days=7, seed=4), tmp_path / "b")
    assert (tmp_path / "a" / "logon.csv").read_bytes() != (tmp_path / "b" / "logon.csv").read_bytes()


def test_config_validation():
    with pytest.raises(ValueError):
        ScenarioConfig(malicious_fraction=0.5)
    with pytest.raises(ValueError):
        ScenarioConfig(users=0)


def test_parse_generate_closure(medium):
    result, corpus = medium
    assert len(corpus.groups) == result.active_user_days
    assert corpus.file_counts == result.event_counts


def test_malicious_days_have_after_hours_activity(medium):
    result, corpus = medium
    hours = OfficeHours()
    for key in result.malicious:
        assert sum(hours.outside(e.when) for e in corpus.groups[key]) >= 3


def test_injection_soundness(medium):
    result, corpus = medium
    m = extract_matrix(corpus.groups)
    bad = set(result.malicious)
    users = {u for u, _ in m.keys}
    failures = []
    for key in result.malicious:
        normal = np.array([m.values[i] for i, k in enumerate(m.keys) if k[0] == key[0] and k not in bad])
        mean, std = normal.mean(axis=0), normal.std(axis=0)
        row = m.values[m.keys.index(key)]
        far = np.abs(row - mean) >= 2 * std
        far &= np.abs(row - mean) > 0
        if far.sum() < 2:
            failures.append(key)
    assert len(users) == 50
    assert failures == []


def test_volume_bounds_full_scenario(tmp_path):
    result = generate(ScenarioConfig(users=200, days=120, seed=42), tmp_path)
    assert 200 * 120 * 5 <= result.total_events <= 200 * 120 * 60
