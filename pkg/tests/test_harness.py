import csv
import json
import time
from dataclasses import replace

import numpy as np
import pytest

from d2dmab import seeding
from d2dmab.cli import main
from d2dmab.harness import (
    ConfigError,
    ExperimentConfig,
    PhyParams,
    aggregate,
    experiment_seeds,
    load_config,
    logged_subframes,
    run_batch,
    run_experiment,
    run_simulation,
    run_subframe,
    save_config,
)
from d2dmab.metrics import regret_def2
from d2dmab.outputs import build_manifest, emit_outputs
from d2dmab.phy import PhyConfig, allocate_power, cu_sinr, d2d_throughput, reward
from d2dmab.policies import PolicyConfig, make_policy
from d2dmab.topology import ChannelDraw, draw_channel, draw_large_scale, generate_topology

PHY = PhyConfig.from_units()
SMALL = ExperimentConfig(n_cu=6, n_d2d=3, horizon=400, mc_runs_per_topology=2,
                         mc_topologies=2, oracle_samples=2_000, log_every=1)
FOUR = [PolicyConfig(kind=k) for k in ("mp_ucb1", "dlf", "kth_ucb1", "exp3")]


# ----------------------------------------------------------- run_subframe

def fixed_channel():
    return ChannelDraw(
        g_cB=np.array([2e-12, 5e-13, 1e-11]),
        g_dB=np.array([1e-12, 4e-11]),
        g_d=np.array([3e-9, 1e-10]),
        g_cd=np.array([[1e-13, 2e-12], [5e-14, 1e-13], [3e-12, 7e-14]]),
        n=1,
    )


def test_run_subframe_hand_trace():
    ch = fixed_channel()
    policy = make_policy(PolicyConfig(kind="mp_ucb1"), 3, [0, 1])
    out = run_subframe(policy, ch, PHY, 1)
    # initialization: player 0 takes CU (1+0+1) % 3 = 2, player 1 takes CU 0
    assert out.selections.tolist() == [2, 0]
    assert out.collided.tolist() == [False, False]
    for d, c in enumerate([2, 0]):
        raw = PHY.p_c * ch.g_cB[c] / (PHY.gamma_tgt * ch.g_dB[d]) - PHY.noise_bs / ch.g_dB[d]
        assert out.p_d[d] == pytest.approx(min(max(raw, 0.0), PHY.p_max), rel=1e-12)
        sinr = PHY.p_c * ch.g_cB[c] / (PHY.noise_bs + out.p_d[d] * ch.g_dB[d])
        assert out.cu_sinr[d] == pytest.approx(sinr, rel=1e-12)
        assert out.cu_sinr[d] >= PHY.gamma_tgt
        rate = PHY.bandwidth * np.log2(
            1 + out.p_d[d] * ch.g_d[d] / (PHY.noise_d2d + PHY.p_c * ch.g_cd[c, d]))
        assert out.r_d[d] == pytest.approx(rate, rel=1e-12)
        assert out.reward[d] == pytest.approx(min(rate / PHY.r_norm, 1.0), rel=1e-12)
    assert out.p_d[0] == PHY.p_max          # strong CU 2, weak D2D->BS gain: capped
    assert 0 < out.p_d[1] < PHY.p_max       # interior solution on CU 0
    assert policy.y.tolist() == [[0, 0, 1], [1, 0, 0]]


class Stubborn:
    """Every player always asks for CU 1."""

    reward_model = "normalized"

    def __init__(self, players):
        self.player_ids = np.arange(players)
        self.seen = None

    def select(self, n):
        return np.ones(len(self.player_ids), dtype=int)

    def update(self, arms, rewards):
        self.seen = (arms, rewards)


def test_run_subframe_total_collision():
    policy = Stubborn(2)
    out = run_subframe(policy, fixed_channel(), PHY, 5)
    assert out.collided.all()
    assert np.all(out.p_d == 0) and np.all(out.r_d == 0) and np.all(out.reward == 0)
    np.testing.assert_allclose(out.cu_sinr, PHY.p_c * 5e-13 / PHY.noise_bs)
    assert policy.seen[1].tolist() == [0.0, 0.0]


# ----------------------------------------------------- engine equivalences

def sequential(config, topology_seed, run_seed, cfg):
    """The literal loop: draw_channel + run_subframe, one subframe at a time."""
    topo = generate_topology(config.n_cu, config.n_d2d, config.cell_radius,
                             config.d2d_range, topology_seed)
    large = draw_large_scale(topo, config.shadowing_std_db, config.min_distance)
    phy = config.phy.build()
    seeds = [seeding.derive_seed(run_seed, seeding.POLICY, cfg.seed, d)
             for d in range(config.n_d2d)]
    policy = make_policy(cfg, config.n_cu, np.arange(config.n_d2d), seeds=seeds)
    outs = []
    for n in range(1, config.horizon + 1):
        ch = draw_channel(topo, large, n, run_seed, config.fading)
        outs.append(run_subframe(policy, ch, phy, n))
    return outs


@pytest.mark.parametrize("cfg", FOUR, ids=lambda c: c.kind)
def test_batch_engine_equals_literal_loop(cfg):
    config = replace(SMALL, horizon=1100)
    rec = run_simulation(config, 77, 1234, cfg)
    outs = sequential(config, 77, 1234, cfg)
    for name in ("selections", "collided", "p_d", "r_d", "reward", "cu_sinr"):
        want = np.array([getattr(o, name) for o in outs])
        assert np.array_equal(rec.outcomes[name], want), name


def test_batch_of_runs_equals_single_runs():
    seeds = [5, 6, 7]
    batch = run_batch(SMALL, 99, seeds, FOUR)
    for p, cfg in enumerate(FOUR):
        for i, s in enumerate(seeds):
            alone = run_simulation(SMALL, 99, s, cfg)
            got = batch[p][i]
            for name in ("regret_def2", "sum_tput_d2d", "sum_tput_cu", "collision_pct",
                         "fairness_pct"):
                assert np.array_equal(getattr(got.metrics, name), getattr(alone.metrics, name))
            assert got.gain_checksum == alone.gain_checksum


def test_regret_series_matches_outcome_log():
    rec = run_simulation(SMALL, 3, 4, PolicyConfig(kind="dlf"))
    from d2dmab.metrics import estimate_arm_means

    topo = generate_topology(SMALL.n_cu, SMALL.n_d2d, seed=3)
    oracle = estimate_arm_means(topo, draw_large_scale(topo), PHY, SMALL.oracle_samples, 3)
    np.testing.assert_allclose(rec.metrics.regret_def2,
                               regret_def2(rec.outcomes["reward"], oracle.mu_star), rtol=1e-12)


def test_counterfactual_equals_realized_reward():
    """For a sole selector, the reward of its CU from the per-link tables is what it got."""
    config = replace(SMALL, horizon=60)
    rec = run_simulation(config, 8, 9, PolicyConfig(kind="mp_ucb1"))
    topo = generate_topology(config.n_cu, config.n_d2d, seed=8)
    large = draw_large_scale(topo)
    for n in range(1, 61):
        ch = draw_channel(topo, large, n, 9)
        sel = rec.outcomes["selections"][n - 1]
        ok = ~rec.outcomes["collided"][n - 1]
        for d in np.flatnonzero(ok):
            c = sel[d]
            p = allocate_power(ch.g_cB[c], ch.g_dB[d], PHY)
            x = reward(d2d_throughput(ch.g_d[d], ch.g_cd[c, d], p, PHY), PHY, "normalized")
            assert x == rec.outcomes["reward"][n - 1, d]


def test_run_is_deterministic():
    a = run_simulation(SMALL, 11, 12, PolicyConfig(kind="kth_ucb1"))
    b = run_simulation(SMALL, 11, 12, PolicyConfig(kind="kth_ucb1"))
    for name in a.outcomes:
        assert np.array_equal(a.outcomes[name], b.outcomes[name])
    assert np.array_equal(a.metrics.regret_def3, b.metrics.regret_def3)


def test_policy_choice_does_not_touch_channel():
    recs = run_batch(SMALL, 21, [1, 2], FOUR)
    sums = {tuple(r.gain_checksum for r in per) for per in recs}
    assert len(sums) == 1
    alone = run_simulation(SMALL, 21, 1, PolicyConfig(kind="exp3"))
    assert alone.gain_checksum == recs[0][0].gain_checksum
    assert recs[0][0].gain_checksum != recs[0][1].gain_checksum


def test_invariants_hold_over_runs():
    for per in run_batch(replace(SMALL, horizon=3000), 5, [1, 2, 3], FOUR):
        for r in per:
            assert r.metrics.cu_protection_violations == 0
            assert r.metrics.init_collisions == 0
            assert r.metrics.rank_violations == 0
            assert r.metrics.cu_reuses > 0
            reused = (r.outcomes["p_d"] > 0).sum(axis=1)
            assert np.all(r.metrics.sum_tput_cu >= reused * PHY.r_tgt - 1e-6)
            collided = r.outcomes["collided"]
            assert np.all(r.outcomes["p_d"][collided] == 0)
            assert np.all(r.outcomes["reward"][collided] == 0)


def test_horizon_equal_to_n_cu_is_only_initialization():
    config = replace(SMALL, horizon=SMALL.n_cu)
    rec = run_simulation(config, 1, 2, PolicyConfig(kind="dlf"))
    sel = rec.outcomes["selections"]
    assert sel.shape == (SMALL.n_cu, SMALL.n_d2d)
    assert not rec.outcomes["collided"].any()
    for d in range(SMALL.n_d2d):
        assert sorted(sel[:, d].tolist()) == list(range(SMALL.n_cu))


def test_paper_default_single_run_is_fast():
    config = ExperimentConfig()
    start = time.perf_counter()
    rec = run_simulation(config, 1, 1, PolicyConfig(kind="mp_ucb1"))
    assert time.perf_counter() - start < 60
    assert rec.metrics.subframes[-1] == 100_000


# ------------------------------------------------------------------- config

def test_config_validation_names_the_field():
    for change, field in ((dict(n_cu=2), "n_cu"), (dict(horizon=3), "horizon"),
                          (dict(cell_radius=0.0), "cell_radius"),
                          (dict(oracle_samples=1), "oracle_samples"),
                          (dict(phy=PhyParams(p_c_mw=-1.0)), "phy")):
        with pytest.raises(ConfigError, match=field):
            replace(SMALL, **change).validate()


def test_config_round_trip_and_unknown_keys(tmp_path):
    path = tmp_path / "c.json"
    save_config(SMALL, path)
    assert load_config(path) == SMALL
    data = json.loads(path.read_text())
    data["horizn"] = 5
    path.write_text(json.dumps(data))
    with pytest.raises(ConfigError, match="horizn"):
        load_config(path)


def test_single_player_policy_needs_one_player():
    with pytest.raises(ConfigError):
        run_simulation(SMALL, 1, 1, PolicyConfig(kind="ucb1"))
    rec = run_simulation(replace(SMALL, n_d2d=1), 1, 1, PolicyConfig(kind="ucb1"))
    assert rec.metrics.collision_pct.tolist() == [0.0]


def test_paper_defaults_give_500_distinct_seeds():
    tseeds, rseeds = experiment_seeds(ExperimentConfig())
    flat = [s for per in rseeds for s in per]
    assert len(tseeds) == 10 and len(set(tseeds)) == 10
    assert len(flat) == 500 and len(set(flat)) == 500


def test_logged_subframes():
    assert len(logged_subframes(100_000, 20, 100, log_init_phase=False)) == 1000
    kept = logged_subframes(1000, 20, 100)
    assert len(kept) == 30 and kept[0] == 1 and kept[-1] == 1000
    assert logged_subframes(250, 5, 100, False).tolist() == [100, 200, 250]


# ------------------------------------------------------------------ outputs

def read_csv(path):
    with open(path, newline="") as f:
        return list(csv.reader(f))


def test_experiment_aggregates_and_tables(tmp_path):
    config = replace(SMALL, log_every=50, mc_topologies=1, mc_runs_per_topology=1)
    result = run_experiment(config, [PolicyConfig(kind="dlf")])
    rec = result.all_records()[0]
    emit_outputs(result.all_records(), tmp_path)
    rows = read_csv(tmp_path / "regret_dlf.csv")
    assert rows[0] == ["subframe", "mean_regret_def2", "stderr_regret_def2",
                       "mean_regret_def3", "stderr_regret_def3"]
    assert len(rows) - 1 == len(rec.metrics.subframes)
    assert float(rows[-1][1]) == rec.metrics.regret_def2[-1]
    assert read_csv(tmp_path / "throughput_dlf.csv")[0] == [
        "subframe", "sum_tput_d2d_mean", "sum_tput_cu_mean", "r_tgt"]
    bars = read_csv(tmp_path / "bars.csv")
    assert bars[0] == ["policy", "player", "collision_pct", "fairness_pct"]
    assert len(bars) == 1 + SMALL.n_d2d


def test_aggregate_is_flat_mean():
    values = np.array([[1.0, 2.0], [3.0, 6.0], [5.0, 7.0]])
    mean, se = aggregate(values)
    assert mean.tolist() == [3.0, 5.0]
    np.testing.assert_allclose(se, values.std(axis=0, ddof=1) / np.sqrt(3))
    assert aggregate(values[:1])[1].tolist() == [0.0, 0.0]


def test_emit_outputs_rejects_empty(tmp_path):
    with pytest.raises(ValueError):
        emit_outputs([], tmp_path)


def test_outputs_are_byte_identical(tmp_path):
    files = {}
    for name in ("a", "b"):
        result = run_experiment(SMALL, FOUR)
        emit_outputs(result.all_records(), tmp_path / name, manifest=build_manifest(result))
        files[name] = json.loads((tmp_path / name / "manifest.json").read_text())["csv_sha256"]
    assert files["a"] == files["b"] and len(files["a"]) > 10


def test_topology_failure_names_seeds(monkeypatch):
    import d2dmab.harness as harness

    def boom(*args, **kwargs):
        raise FloatingPointError("bad draw")

    monkeypatch.setattr(harness, "draw_large_scale", boom)
    with pytest.raises(RuntimeError, match="topology seed"):
        run_experiment(SMALL, FOUR[:1])


# ---------------------------------------------------------------------- CLI

def test_cli_simulate_oracle_replay(tmp_path, capsys):
    cfg_path = tmp_path / "c.json"
    save_config(replace(SMALL, horizon=200, log_every=20), cfg_path)
    out = tmp_path / "out"
    assert main(["simulate", "--config", str(cfg_path), "--policy", "dlf,exp3",
                 "--out", str(out), "--plots"]) == 0
    for name in ("regret_dlf.csv", "regret_exp3.csv", "bars.csv", "runs.csv",
                 "manifest.json", "plots/regret_dlf.svg", "plots/collisions.svg"):
        assert (out / name).exists(), name
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["horizon"] == 200
    assert len(manifest["run_seeds"]) == 2
    assert "code_version" in manifest
    capsys.readouterr()

    assert main(["oracle", "--config", str(cfg_path), "--topology-seed", "4"]) == 0
    table = capsys.readouterr().out.splitlines()
    assert table[1] == "player,cu,mean,stderr,best"
    assert len(table) == 2 + SMALL.n_cu * SMALL.n_d2d
    assert sum(line.endswith("*") for line in table) == SMALL.n_d2d

    assert main(["replay", "--manifest", str(out / "manifest.json"),
                 "--out", str(tmp_path / "again")]) == 0
    assert "byte for byte" in capsys.readouterr().out


def test_cli_config_errors_exit_2(tmp_path, capsys):
    cfg_path = tmp_path / "c.json"
    save_config(SMALL, cfg_path)
    assert main(["simulate", "--config", str(cfg_path), "--policy", "greedy"]) == 2
    data = SMALL.to_dict()
    data["n_cu"] = 1
    cfg_path.write_text(json.dumps(data))
    assert main(["simulate", "--config", str(cfg_path)]) == 2
    assert "n_cu" in capsys.readouterr().err
