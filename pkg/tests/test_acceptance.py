"""Acceptance suite: one test per criterion, each printing a pass/fail line
(also echoed in the terminal summary). Training-based criteria share two
session-scoped cohorts (UAR runs and checkerboard runs) on the default
synthetic world.
"""

import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_RESULTS
from geoproxy import autodiff as ad
from geoproxy import times
from geoproxy.config import ExperimentConfig
from geoproxy.data import fit_normalization
from geoproxy.encoders import FrozenEmbeddingTable, LocationTimeEncoder, table_from_encoder
from geoproxy.metrics import compute_metrics, export_embedding_grid
from geoproxy.model import FusionModel, LossConfig
from geoproxy.nn import Mlp
from geoproxy.optim import AdamW
from geoproxy.splits import (
    TEST,
    TRAIN,
    CheckerboardConfig,
    checkerboard_split,
    enumerate_checkerboard_partitions,
    make_seed_streams,
    uar_site_split,
)
from geoproxy.synth import WorldConfig, generate_world
from geoproxy.training import run_experiment

SEEDS = (0, 1, 2)

# training configuration used by the heavy criteria: pared-down encoder and
# heads sized for the desk-scale world (the criteria pin lambda, rho, delta,
# protocols, and seeds; architecture and schedule are configuration)
ACC = dict(
    obs_embed_dim=24, obs_widths=(48, 48), loc_embed_dim=16, rff_per_level=8,
    rff_sigmas=(0.5, 1.0, 2.0, 4.0), trunk_widths=(32,), head_widths=(16,),
    batch_size=128, proxy_weight=0.2, rho=16.0,
    epochs=100, pretrain_epochs=30,
    plateau_patience=5, stop_patience=15, val_share=0.1,
)


def record(num, name, ok, detail=""):
    ACCEPTANCE_RESULTS.append((num, name, bool(ok), detail))
    print(f"criterion {num} [{'PASS' if ok else 'FAIL'}] {name} {detail}")
    assert ok, f"criterion {num} ({name}) failed: {detail}"


def acc_config(regime, seed=0, **kw):
    merged = dict(ACC)
    merged.update(kw)
    return ExperimentConfig(regime=regime, seed=seed, **merged)


@pytest.fixture(scope="session")
def world():
    return generate_world(WorldConfig())


@pytest.fixture(scope="session")
def uar_cohort(world):
    """Full runs on the UAR 50/50 split: regime -> seed -> RunResult."""
    out = {}
    for regime in ("obs-only", "trained-le", "trained-le-pcl", "proxy-pretrain"):
        out[regime] = {}
        for seed in SEEDS:
            cfg = acc_config(regime, seed=seed, split_protocol="uar", split_fraction=0.5)
            out[regime][seed] = run_experiment(cfg, world.table, world.sites, world.field)
    return out


@pytest.fixture(scope="session")
def cb_cohort(world):
    """Checkerboard runs (delta = quarter box, all 8 partitions): name -> R2 array."""
    table = world.table
    delta = (world.config.lon_max - world.config.lon_min) / 4.0
    partitions = enumerate_checkerboard_partitions(
        delta, (world.config.lon_min, world.config.lat_min))
    jobs = {
        "obs-only": ("obs-only", {}),
        "proxy-stacked": ("proxy-stacked", {}),
        "trained-le-pcl": ("trained-le-pcl", {}),
        "proxy-pretrain": ("proxy-pretrain", {}),
        "pcl-sites-only": ("trained-le-pcl", dict(sampler_mode="sites-only", rho=0.0)),
        "pcl-random-8": ("trained-le-pcl", dict(rho=8.0)),
        "pcl-sites+random-8": ("trained-le-pcl", dict(sampler_mode="sites+random", rho=8.0)),
    }
    out = {}
    for name, (regime, kw) in jobs.items():
        vals = []
        for part in partitions:
            split = checkerboard_split(table, part)
            cfg = acc_config(regime, seed=0, split_protocol="checkerboard",
                             split_delta=delta, split_offset=part.offset,
                             split_swap=part.swap, **kw)
            res = run_experiment(cfg, table, world.sites, world.field, split=split)
            vals.append(res.reports["test"].r2)
        out[name] = np.array(vals)
    return out


def paired_stats(a, b):
    d = np.asarray(a) - np.asarray(b)
    return float(d.mean()), float(d.std(ddof=1) / np.sqrt(len(d)))


# --- criterion 1: gradient routing ---------------------------------------------


def build_small_pcl_model(seed=0, lam=0.2):
    rng = np.random.default_rng(seed)
    enc = LocationTimeEncoder(rng, out_dim=6, sigmas=(1.0, 4.0), per_level=4,
                              trunk_widths=(8,), temporal="day-of-year",
                              time_per_level=2, domain_bounds=(-105.0, -85.0, 30.0, 50.0))
    obs = Mlp(4, [8], 6, rng, name="obs")
    head_f = Mlp(12, [8], 1, rng, name="f")
    head_g = Mlp(6, [8], 1, rng, name="g")
    return FusionModel("trained-le-pcl", obs, head_f, loc_encoder=enc, head_g=head_g,
                       loss_cfg=LossConfig(proxy_weight=lam))


def random_batches(rng, n=8, m=6, k=4):
    labeled = (rng.normal(size=(n, k)), rng.normal(size=n),
               rng.uniform(-104, -86, size=n), rng.uniform(31, 49, size=n),
               np.full(n, 17200.0))
    proxy = (rng.uniform(-104, -86, size=m), rng.uniform(31, 49, size=m),
             np.full(m, 17200.0), rng.normal(size=(m, 1)))
    return labeled, proxy


def test_criterion_1_gradient_routing():
    t0 = time.time()
    rng = np.random.default_rng(0)
    model = build_small_pcl_model()
    opt = AdamW(model.parameter_groups(), lr=1e-3)
    labeled, proxy = random_batches(rng)

    obs0 = [t.data.copy() for t in model.groups["obs_encoder"].tensors]
    f0 = [t.data.copy() for t in model.groups["fusion_head_f"].tensors]
    model.train_step(labeled, proxy, opt, include_pred=False)
    pred_masked_ok = all(
        np.array_equal(t.data, s)
        for group, snap in (("obs_encoder", obs0), ("fusion_head_f", f0))
        for t, s in zip(model.groups[group].tensors, snap)
    )

    model = build_small_pcl_model()
    opt = AdamW(model.parameter_groups(), lr=1e-3)
    g0 = [t.data.copy() for t in model.groups["proxy_head_g"].tensors]
    model.train_step(labeled, proxy, opt, include_pc=False)
    pc_masked_ok = all(
        np.array_equal(t.data, s)
        for t, s in zip(model.groups["proxy_head_g"].tensors, g0)
    )
    elapsed = time.time() - t0
    record(1, "gradient routing", pred_masked_ok and pc_masked_ok,
           f"(pred-masked obs/f bit-equal: {pred_masked_ok}, "
           f"pc-masked g bit-equal: {pc_masked_ok}, {elapsed:.2f}s)")


# --- criterion 2: loss decomposition ---------------------------------------------


def test_criterion_2_loss_decomposition():
    rng = np.random.default_rng(1)
    lam = 0.37
    model = build_small_pcl_model(lam=lam)
    worst = 0.0
    for _ in range(1000):
        labeled, proxy = random_batches(rng, n=int(rng.integers(2, 10)),
                                        m=int(rng.integers(1, 8)))
        total, l_pred, l_pc = model.loss_total(labeled, proxy)
        lhs = float(total.data)
        rhs = float(l_pred.data) + lam * float(l_pc.data)
        worst = max(worst, abs(lhs - rhs) / max(1.0, abs(lhs)))
    # scalar-vs-vector equality: m=1, unit weight, identical data
    plon, plat, pt, z = random_batches(rng)[1]
    l_vec = model.proxy_consistency_loss(plon, plat, pt, z)
    resid = model.proxy_predict(plon, plat, pt) - z
    scalar = (resid * resid).sum() * (1.0 / len(plon))
    exact = float(l_vec.data) == scalar
    record(2, "loss decomposition", worst <= 1e-12 and exact,
           f"(worst rel err {worst:.2e}, scalar==vector: {exact})")


# --- criterion 3: autodiff vs finite differences ----------------------------------


def test_criterion_3_autodiff_finite_differences():
    t0 = time.time()
    rng = np.random.default_rng(2)
    worst = 0.0
    for trial in range(20):
        model = build_small_pcl_model(seed=trial, lam=float(rng.uniform(0.05, 0.5)))
        labeled, proxy = random_batches(rng, n=4, m=3)

        def loss_value():
            t, _, _ = model.loss_total(labeled, proxy)
            return float(t.data)

        model.zero_grad()
        total, _, _ = model.loss_total(labeled, proxy)
        ad.backward(total)
        h = 1e-6
        for group in model.parameter_groups():
            for p in group.tensors:
                if p.grad is None:
                    continue
                flat_idx = [tuple(i) for i in np.ndindex(*p.data.shape)]
                picks = flat_idx if len(flat_idx) <= 4 else [
                    flat_idx[j] for j in rng.choice(len(flat_idx), size=4, replace=False)
                ]
                for i in picks:
                    old = p.data[i]
                    p.data[i] = old + h
                    up = loss_value()
                    p.data[i] = old - h
                    down = loss_value()
                    p.data[i] = old
                    fd = (up - down) / (2 * h)
                    rel = abs(p.grad[i] - fd) / max(1e-8, abs(p.grad[i]) + abs(fd))
                    worst = max(worst, rel)
    elapsed = time.time() - t0
    record(3, "autodiff matches finite differences", worst < 1e-4,
           f"(worst rel {worst:.2e} over 20 models, {elapsed:.1f}s)")


# --- criterion 4: split properties -------------------------------------------------


def test_criterion_4_split_properties(world):
    table = world.table
    origin = (world.config.lon_min, world.config.lat_min)
    ok = True
    notes = []
    for delta in (1.0, 2.0, 4.0, 8.0):
        partitions = enumerate_checkerboard_partitions(delta, origin)
        if len(partitions) != 8:
            ok = False
        for cfg in partitions:
            split = checkerboard_split(table, cfg)
            labels = set(split.assignment.values())
            complete = len(split.assignment) == len(table)
            disjoint = labels <= {TRAIN, TEST}
            twin = checkerboard_split(table, CheckerboardConfig(
                delta=delta, origin=origin, offset=cfg.offset, swap=not cfg.swap))
            complementary = (set(twin.ids(TEST).tolist()) == set(split.ids(TRAIN).tolist())
                             and set(twin.ids(TRAIN).tolist()) == set(split.ids(TEST).tolist()))
            if not (complete and disjoint and complementary):
                ok = False
                notes.append(f"delta={delta} offset={cfg.offset} swap={cfg.swap}")
    split = uar_site_split(world.sites, table, 0.5, seed=0, val_share=0.1)
    sides = {}
    for i, sid in enumerate(table.ids.tolist()):
        sides.setdefault(int(table.site_ids[i]), set()).add(split.assignment[sid])
    site_coherent = all(len(v) == 1 for v in sides.values())
    record(4, "split properties", ok and site_coherent,
           f"(8 partitions x deltas 1/2/4/8 exact; uar site-coherent: {site_coherent})")


# --- criterion 5: metric oracle ----------------------------------------------------


def test_criterion_5_metric_oracle():
    from test_metrics import brute_force_metrics

    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(2, 50))
        y = rng.normal(scale=rng.uniform(0.1, 5.0), size=n)
        p = y + rng.normal(scale=rng.uniform(0.0, 3.0), size=n)
        rep = compute_metrics(p, y)
        r2, rmse, mae, mbe = brute_force_metrics(p, y)
        for got, want in ((rep.rmse, rmse), (rep.mae, mae), (rep.mbe, mbe),
                          (rep.r2, r2) if r2 is not None else (0.0, 0.0)):
            worst = max(worst, abs(got - want) / max(1.0, abs(want)))
    hand = compute_metrics(np.array([1.0, 1.0, 1.0, 1.0]), np.array([0.0, 0.0, 2.0, 2.0]))
    hand_ok = (hand.r2 == 0.0 and hand.rmse == 1.0 and hand.mae == 1.0 and hand.mbe == 0.0)
    record(5, "metric oracle", worst <= 1e-12 and hand_ok,
           f"(worst rel {worst:.2e}; hand case exact: {hand_ok})")


# --- criteria 6-10: directional reproduction ---------------------------------------


def mean_r2(cohort, regime):
    return float(np.mean([cohort[regime][s].reports["test"].r2 for s in SEEDS]))


def test_criterion_6_uar_ordering(uar_cohort):
    m_pcl = mean_r2(uar_cohort, "trained-le-pcl")
    m_le = mean_r2(uar_cohort, "trained-le")
    m_obs = mean_r2(uar_cohort, "obs-only")
    d_mean, d_se = paired_stats(
        [uar_cohort["trained-le-pcl"][s].reports["test"].r2 for s in SEEDS],
        [uar_cohort["obs-only"][s].reports["test"].r2 for s in SEEDS],
    )
    chain = m_pcl > m_le > m_obs
    margin = d_mean > 2 * d_se
    record(6, "uar ordering", chain and margin,
           f"(pcl {m_pcl:.3f} > trained-le {m_le:.3f} > obs {m_obs:.3f}; "
           f"pcl-obs {d_mean:.3f} vs 2se {2 * d_se:.3f})")


def test_criterion_7_checkerboard_ordering(cb_cohort):
    m_pcl = float(cb_cohort["trained-le-pcl"].mean())
    m_stacked = float(cb_cohort["proxy-stacked"].mean())
    m_obs = float(cb_cohort["obs-only"].mean())
    d_mean, d_se = paired_stats(cb_cohort["trained-le-pcl"], cb_cohort["obs-only"])
    chain = m_pcl > m_stacked > m_obs
    margin = d_mean > d_se
    record(7, "checkerboard ordering", chain and margin,
           f"(pcl {m_pcl:.3f} > stacked {m_stacked:.3f} > obs {m_obs:.3f}; "
           f"pcl-obs {d_mean:.3f} vs se {d_se:.3f})")


def test_criterion_8_rho_scaling(cb_cohort):
    m8 = float(cb_cohort["pcl-random-8"].mean())
    m0 = float(cb_cohort["pcl-sites-only"].mean())
    d_mean, d_se = paired_stats(cb_cohort["pcl-random-8"], cb_cohort["pcl-sites+random-8"])
    both_se = float(cb_cohort["pcl-sites+random-8"].std(ddof=1)
                    / np.sqrt(len(cb_cohort["pcl-sites+random-8"])))
    scaling = m8 > m0
    parity = abs(d_mean) <= max(both_se, d_se)
    record(8, "rho scaling", scaling and parity,
           f"(rho8 {m8:.3f} > sites-only {m0:.3f}; random-vs-sites+random "
           f"{d_mean:+.3f} within se {max(both_se, d_se):.3f})")


def test_criterion_9_two_stage(uar_cohort, cb_cohort):
    d_uar, se_uar = paired_stats(
        [uar_cohort["proxy-pretrain"][s].reports["test"].r2 for s in SEEDS],
        [uar_cohort["obs-only"][s].reports["test"].r2 for s in SEEDS],
    )
    uar_ok = d_uar > se_uar
    d_cb, se_cb = paired_stats(cb_cohort["trained-le-pcl"], cb_cohort["proxy-pretrain"])
    cb_ok = d_cb >= -se_cb
    record(9, "two-stage comparisons", uar_ok and cb_ok,
           f"(two-stage - obs uar {d_uar:.3f} vs se {se_uar:.3f}; "
           f"joint - two-stage cb {d_cb:+.3f} vs -se {-se_cb:.3f})")


def test_criterion_10_embedding_smoothness(world, uar_cohort):
    bounds = world.config.bounds()
    t0 = world.field.t0
    probe_times = [t0 + off for off in (30.0, 210.0, 390.0, 570.0)]
    rough = {}
    for regime in ("trained-le-pcl", "trained-le"):
        vals = []
        for seed in SEEDS:
            enc = uar_cohort[regime][seed].model.loc_encoder
            export = export_embedding_grid(enc, bounds, 1.0, probe_times, n_components=1)
            vals.append(export.roughness)
        rough[regime] = float(np.mean(vals))
    ok = rough["trained-le-pcl"] < rough["trained-le"]
    record(10, "embedding smoothness", ok,
           f"(pcl roughness {rough['trained-le-pcl']:.4f} < "
           f"no-pcl {rough['trained-le']:.4f})")


# --- criterion 11: frozen encoder contract ------------------------------------------


def test_criterion_11_frozen_table_contract(world, tmp_path_factory):
    tmp = tmp_path_factory.mktemp("frozen")
    rng = np.random.default_rng(0)
    enc = LocationTimeEncoder(rng, out_dim=8, sigmas=(1.0, 4.0), per_level=4,
                              trunk_widths=(16,), temporal="none",
                              domain_bounds=world.field.extent())
    path = tmp / "frozen_table.txt"
    table_from_encoder(enc, world.sites.lons, world.sites.lats, world.field.t0).save(path)
    on_disk = FrozenEmbeddingTable.load(path)

    cfg = acc_config("frozen-le", seed=0, frozen_table=str(path), epochs=3,
                     split_protocol="uar", split_fraction=0.5)
    res = run_experiment(cfg, world.table, world.sites, world.field)
    live = res.model.loc_encoder
    identical = (np.array_equal(live.matrix, on_disk.matrix)
                 and np.array_equal(live.lons, on_disk.lons)
                 and np.array_equal(live.lats, on_disk.lats))
    reread = FrozenEmbeddingTable.load(path)
    disk_stable = np.array_equal(reread.matrix, on_disk.matrix)
    record(11, "frozen encoder contract", identical and disk_stable,
           f"(table bit-identical to on-disk source: {identical})")
