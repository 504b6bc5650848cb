import numpy as np
import pytest

from appl.episodes import (BenchmarkSpec, DomainSpec, derive_seed, make_benchmark, make_domain,
                           read_episodes, sample_episode, write_episodes)
from appl.exceptions import ConfigError, FormatError


def _spec(**kw):
    base = dict(name="d", input_dim=3, class_ids=[10, 11, 12, 13],
                class_means=np.arange(12.0).reshape(4, 3), class_scales=np.ones(4),
                transform=np.eye(3), offset=np.zeros(3), seed=7)
    base.update(kw)
    return DomainSpec(**base)


def test_tiny_scale_returns_class_mean():
    dom = make_domain(_spec(class_scales=np.full(4, 1e-300)))
    x = dom.sample(2, 5, np.random.default_rng(0))
    np.testing.assert_array_equal(x, np.tile([6.0, 7.0, 8.0], (5, 1)))


def test_different_transforms_give_different_samples():
    a = make_domain(_spec())
    b = make_domain(_spec(transform=2 * np.eye(3)))
    ea, eb = sample_episode(a, 2, 1, 1, 3), sample_episode(b, 2, 1, 1, 3)
    assert ea.class_map == eb.class_map
    assert not np.array_equal(ea.support_x, eb.support_x)


def test_monte_carlo_mean():
    rot = np.linalg.qr(np.random.default_rng(1).standard_normal((3, 3)))[0]
    dom = make_domain(_spec(transform=rot, offset=np.array([1.0, -1.0, 0.5])))
    x = dom.sample(1, 10_000, np.random.default_rng(2))
    expected = dom.apply_transform(np.array([3.0, 4.0, 5.0]))
    # per coordinate sigma is 1 (rotation keeps unit noise), so 3 sigma / 100
    assert np.abs(x.mean(axis=0) - expected).max() < 3 * 1.0 / 100


def test_domain_validation():
    with pytest.raises(ConfigError):
        make_domain(_spec(class_scales=np.array([1.0, 0.0, 1.0, 1.0])))
    with pytest.raises(ConfigError):
        make_domain(_spec(class_ids=[1, 1, 2, 3]))
    with pytest.raises(ConfigError):
        make_domain(_spec(nonlinearity="sigmoid"))


def test_episode_shapes_five_way_five_shot():
    src, _ = make_benchmark(0)
    ep = sample_episode(src, 5, 5, 15, 123)
    assert ep.support_x.shape == (25, 16) and ep.query_x.shape == (75, 16)
    assert np.bincount(ep.support_y).tolist() == [5] * 5
    assert np.bincount(ep.query_y).tolist() == [15] * 5


def test_episode_determinism():
    src, _ = make_benchmark(0)
    a, b = sample_episode(src, 5, 5, 15, 9), sample_episode(src, 5, 5, 15, 9)
    for f in ("support_x", "support_y", "query_x", "query_y"):
        assert getattr(a, f).tobytes() == getattr(b, f).tobytes()
    assert a.class_map == b.class_map


def test_full_way_is_a_permutation():
    dom = make_domain(_spec())
    ep = sample_episode(dom, 4, 1, 1, 5)
    assert sorted(ep.class_map) == [10, 11, 12, 13]


def test_too_many_ways():
    with pytest.raises(ConfigError):
        sample_episode(make_domain(_spec()), 5, 1, 1, 0)


def test_adapter_view_has_no_query_labels():
    src, _ = make_benchmark(0)
    task = sample_episode(src, 3, 2, 4, 1).task()
    assert not hasattr(task, "query_y")


def test_benchmark_disjoint_classes_and_determinism():
    src, tgt = make_benchmark(5)
    assert not set(src.class_ids) & set(tgt.class_ids)
    assert src.input_dim == tgt.input_dim
    src2, tgt2 = make_benchmark(5)
    eps = [sample_episode(tgt, 5, 5, 15, derive_seed(5, "eval", i)) for i in range(3)]
    eps2 = [sample_episode(tgt2, 5, 5, 15, derive_seed(5, "eval", i)) for i in range(3)]
    assert all(a.query_x.tobytes() == b.query_x.tobytes() for a, b in zip(eps, eps2))


def test_target_is_shifted():
    src, tgt = make_benchmark(0, BenchmarkSpec(shift_tanh=True))
    assert tgt.spec.nonlinearity == "tanh"
    assert not np.allclose(tgt.spec.transform, np.eye(src.input_dim))


def test_derive_seed_streams_are_distinct():
    seeds = {derive_seed(0, p, i) for p in ("eval", "meta") for i in range(100)}
    assert len(seeds) == 200
    assert derive_seed(0, "eval", 3) == derive_seed(0, "eval", 3)


# --- files ------------------------------------------------------------------

def test_round_trip_ten_episodes(tmp_path):
    src, _ = make_benchmark(1)
    eps = [sample_episode(src, 3, 2, 4, i) for i in range(10)]
    back = read_episodes(write_episodes(tmp_path / "e.jsonl", eps))
    assert len(back) == 10
    for a, b in zip(eps, back):
        for f in ("support_x", "support_y", "query_x", "query_y"):
            assert np.array_equal(getattr(a, f), getattr(b, f))
            assert getattr(a, f).tobytes() == getattr(b, f).astype(getattr(a, f).dtype).tobytes()
        assert a.class_map == b.class_map and a.seed == b.seed


def test_empty_file(tmp_path):
    (tmp_path / "e.jsonl").write_text("")
    with pytest.raises(FormatError, match="no episodes"):
        read_episodes(tmp_path / "e.jsonl")


def test_k_mismatch_with_header(tmp_path):
    src, _ = make_benchmark(1)
    path = write_episodes(tmp_path / "e.jsonl", [sample_episode(src, 3, 2, 4, 0)])
    lines = path.read_text().splitlines()
    lines[0] = lines[0].replace('"k_shot":2', '"k_shot":3')
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(FormatError, match="line 2"):
        read_episodes(path)


def test_malformed_line_reports_line_number(tmp_path):
    src, _ = make_benchmark(1)
    path = write_episodes(tmp_path / "e.jsonl", [sample_episode(src, 3, 2, 4, i) for i in range(2)])
    path.write_text(path.read_text() + "{not json\n")
    with pytest.raises(FormatError, match="line 4"):
        read_episodes(path)
