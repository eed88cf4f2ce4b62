import numpy as np
import pytest

from geoproxy.data import LabeledTable, SiteTable, build_site_table
from geoproxy.splits import (
    TEST,
    TRAIN,
    VAL,
    CheckerboardConfig,
    ProxyBatchSampler,
    SamplerConfig,
    SplitAssignment,
    carve_validation,
    checkerboard_split,
    enumerate_checkerboard_partitions,
    make_seed_streams,
    named_stream,
    uar_site_split,
)


def table_at(lons, lats):
    lons = np.asarray(lons, dtype=np.float64)
    lats = np.asarray(lats, dtype=np.float64)
    sites, site_ids = build_site_table(lons, lats)
    n = len(lons)
    return LabeledTable(
        ids=np.arange(n, dtype=np.int64),
        site_ids=site_ids,
        lons=lons,
        lats=lats,
        t_days=np.zeros(n),
        features=np.zeros((n, 1)),
        y=np.zeros(n),
    ), sites


def grid_table(n_sites=10, samples_per_site=3, seed=0):
    rng = np.random.default_rng(seed)
    site_lons = rng.uniform(0, 10, size=n_sites)
    site_lats = rng.uniform(0, 10, size=n_sites)
    lons = np.repeat(site_lons, samples_per_site)
    lats = np.repeat(site_lats, samples_per_site)
    return table_at(lons, lats)


# --- UAR site split ------------------------------------------------------------


def test_uar_half_split_counts():
    table, sites = grid_table(n_sites=10)
    split = uar_site_split(sites, table, 0.5, seed=3)
    train_sites = {int(table.site_ids[i]) for i, sid in enumerate(table.ids)
                   if split.assignment[int(sid)] == TRAIN}
    test_sites = {int(table.site_ids[i]) for i, sid in enumerate(table.ids)
                  if split.assignment[int(sid)] == TEST}
    assert len(train_sites) == 5 and len(test_sites) == 5
    assert not train_sites & test_sites


def test_uar_deterministic_given_seed():
    table, sites = grid_table()
    a = uar_site_split(sites, table, 0.5, seed=9)
    b = uar_site_split(sites, table, 0.5, seed=9)
    assert a.assignment == b.assignment
    c = uar_site_split(sites, table, 0.5, seed=10)
    assert a.assignment != c.assignment


def test_uar_site_coherent():
    table, sites = grid_table(n_sites=12, samples_per_site=5, seed=4)
    split = uar_site_split(sites, table, 0.5, seed=1, val_share=0.2)
    by_site = {}
    for i, sid in enumerate(table.ids):
        by_site.setdefault(int(table.site_ids[i]), set()).add(split.assignment[int(sid)])
    assert all(len(labels) == 1 for labels in by_site.values())


def test_uar_validation_share_carves_sites():
    table, sites = grid_table(n_sites=20)
    split = uar_site_split(sites, table, 0.5, seed=2, val_share=0.1)
    counts = split.counts()
    assert counts[VAL] == 3  # 10 train sites -> 1 val site x 3 samples
    assert counts[TRAIN] + counts[VAL] + counts[TEST] == len(table)


def test_uar_rejects_degenerate_inputs():
    table, sites = grid_table(n_sites=1)
    with pytest.raises(ValueError):
        uar_site_split(sites, table, 0.5, seed=0)
    table, sites = grid_table(n_sites=4)
    with pytest.raises(ValueError):
        uar_site_split(sites, table, 1.5, seed=0)


# --- checkerboard --------------------------------------------------------------


def cell_center_table(delta=2.0, n=6):
    lons, lats = np.meshgrid(
        (np.arange(n) + 0.5) * delta, (np.arange(n) + 0.5) * delta
    )
    return table_at(lons.ravel(), lats.ravel())


def test_parity_and_swap():
    table, _ = cell_center_table(delta=2.0)
    cfg = CheckerboardConfig(delta=2.0, origin=(0.0, 0.0))
    split = checkerboard_split(table, cfg)
    # point in cell (0,0): even parity -> train
    first = int(table.ids[np.argmin(table.lons + table.lats)])
    assert split.assignment[first] == TRAIN
    swapped = checkerboard_split(table, CheckerboardConfig(delta=2.0, origin=(0.0, 0.0), swap=True))
    assert swapped.assignment[first] == TEST


def test_points_delta_apart_get_opposite_sides():
    table, _ = table_at([0.5, 2.5], [0.5, 0.5])
    split = checkerboard_split(table, CheckerboardConfig(delta=2.0, origin=(0.0, 0.0)))
    assert split.assignment[0] != split.assignment[1]


def test_swap_complementarity_exact():
    table, _ = cell_center_table()
    base = CheckerboardConfig(delta=2.0, origin=(0.0, 0.0))
    plain = checkerboard_split(table, base)
    swapped = checkerboard_split(table, CheckerboardConfig(delta=2.0, origin=(0.0, 0.0), swap=True))
    assert set(swapped.ids(TEST).tolist()) == set(plain.ids(TRAIN).tolist())
    assert set(swapped.ids(TRAIN).tolist()) == set(plain.ids(TEST).tolist())


def test_eight_partitions_cover_each_sample_four_times():
    table, _ = cell_center_table(delta=2.0, n=8)
    partitions = enumerate_checkerboard_partitions(2.0, (0.0, 0.0))
    assert len(partitions) == 8
    test_hits = {int(sid): 0 for sid in table.ids}
    for cfg in partitions:
        split = checkerboard_split(table, cfg)
        counts = split.counts()
        assert counts[TRAIN] + counts[TEST] == len(table)  # complete, disjoint
        for sid in split.ids(TEST):
            test_hits[int(sid)] += 1
    assert all(v == 4 for v in test_hits.values())


def test_origin_shift_by_two_delta_is_identity():
    table, _ = grid_table(n_sites=30, samples_per_site=1, seed=8)
    a = checkerboard_split(table, CheckerboardConfig(delta=1.5, origin=(0.0, 0.0)))
    b = checkerboard_split(table, CheckerboardConfig(delta=1.5, origin=(3.0, -3.0)))
    assert a.assignment == b.assignment


def test_half_open_boundary_points_assigned_once():
    table, _ = table_at([2.0], [0.5])  # exactly on a cell edge for delta=2
    split = checkerboard_split(table, CheckerboardConfig(delta=2.0, origin=(0.0, 0.0)))
    assert split.assignment[0] in (TRAIN, TEST)
    # the edge point belongs to the right-hand cell (half-open intervals)
    inner = table_at([2.1], [0.5])[0]
    inner_split = checkerboard_split(inner, CheckerboardConfig(delta=2.0, origin=(0.0, 0.0)))
    assert split.assignment[0] == inner_split.assignment[0]


def test_checkerboard_rejects_nonpositive_delta():
    table, _ = grid_table()
    with pytest.raises(ValueError):
        checkerboard_split(table, CheckerboardConfig(delta=0.0, origin=(0.0, 0.0)))


def test_carve_validation_moves_train_samples():
    table, _ = grid_table(n_sites=20, samples_per_site=2)
    split = checkerboard_split(table, CheckerboardConfig(delta=2.0, origin=(0.0, 0.0)))
    carved = carve_validation(split, 0.25, np.random.default_rng(0))
    n_train = len(split.ids(TRAIN))
    assert len(carved.ids(VAL)) == round(0.25 * n_train)
    assert len(carved.ids(TRAIN)) + len(carved.ids(VAL)) == n_train
    assert set(carved.ids(TEST).tolist()) == set(split.ids(TEST).tolist())


def test_split_file_round_trip(tmp_path):
    table, sites = grid_table()
    split = uar_site_split(sites, table, 0.5, seed=5, val_share=0.1)
    path = tmp_path / "split.csv"
    split.save(path)
    loaded = SplitAssignment.load(path)
    assert loaded.assignment == split.assignment
    assert loaded.header["protocol"] == "uar"
    assert loaded.header["seed"] == "5"


# --- proxy batch sampler -------------------------------------------------------

BOUNDS = (0.0, 10.0, 0.0, 10.0)
SPAN = (17167.0, 17227.0)


def test_rho_zero_random_only_gives_empty_batch():
    cfg = SamplerConfig(batch_size=32, rho=0.0, mode="random-only")
    sampler = ProxyBatchSampler(BOUNDS, SPAN, cfg, np.random.default_rng(0))
    lons, lats, days = sampler.sample(None)
    assert len(lons) == len(lats) == len(days) == 0


def test_rho_sixteen_at_b256_gives_4096_points():
    cfg = SamplerConfig(batch_size=256, rho=16.0, mode="random-only")
    sampler = ProxyBatchSampler(BOUNDS, SPAN, cfg, np.random.default_rng(0))
    lons, lats, days = sampler.sample(None)
    assert len(lons) == 4096
    assert lons.min() >= BOUNDS[0] and lons.max() <= BOUNDS[1]
    assert lats.min() >= BOUNDS[2] and lats.max() <= BOUNDS[3]
    assert days.min() >= SPAN[0] and days.max() <= SPAN[1]


def test_sites_only_returns_exactly_batch_coordinates():
    table, _ = grid_table(n_sites=6, samples_per_site=1)
    cfg = SamplerConfig(batch_size=6, rho=4.0, mode="sites-only")
    sampler = ProxyBatchSampler(BOUNDS, SPAN, cfg, np.random.default_rng(0))
    lons, lats, days = sampler.sample(table)
    assert np.array_equal(lons, table.lons)
    assert np.array_equal(lats, table.lats)
    assert np.array_equal(days, table.t_days)


def test_sites_plus_random_appends():
    table, _ = grid_table(n_sites=5, samples_per_site=1)
    cfg = SamplerConfig(batch_size=5, rho=2.0, mode="sites+random")
    sampler = ProxyBatchSampler(BOUNDS, SPAN, cfg, np.random.default_rng(0))
    lons, lats, days = sampler.sample(table)
    assert len(lons) == 5 + 10
    assert np.array_equal(lons[:5], table.lons)


def test_negative_rho_rejected():
    with pytest.raises(ValueError):
        SamplerConfig(batch_size=8, rho=-1.0)


def test_missing_cells_are_redrawn(tiny_world):
    field = tiny_world.field
    values = field.values.copy()
    values[:, :, : field.nx // 2, :] = field.missing_value  # left half missing
    import dataclasses

    holed = dataclasses.replace(field, values=values)
    cfg = SamplerConfig(batch_size=64, rho=2.0, mode="random-only")
    sampler = ProxyBatchSampler(holed.extent(), holed.time_span(), cfg,
                                np.random.default_rng(0), field=holed)
    sampler.start_epoch()
    lons, lats, days = sampler.sample(None)
    z = holed.sample(lons, lats, days)
    assert not np.any(np.isnan(z))
    assert len(lons) == 128  # redraw restored the batch size


# --- seed streams ---------------------------------------------------------------


def test_streams_reproducible_and_named():
    a = make_seed_streams(7)
    b = make_seed_streams(7)
    assert np.array_equal(a.split.normal(size=5), b.split.normal(size=5))
    assert np.array_equal(a.init.normal(size=5), b.init.normal(size=5))


def test_stream_draw_counts_do_not_interfere():
    a = make_seed_streams(7)
    b = make_seed_streams(7)
    a.init.normal(size=100)  # extra draws on one consumer
    assert np.array_equal(a.sampler.normal(size=5), b.sampler.normal(size=5))


def test_different_masters_differ():
    a = named_stream(1, "split").normal(size=6)
    b = named_stream(2, "split").normal(size=6)
    assert not np.array_equal(a, b)


def test_same_master_different_names_differ():
    a = named_stream(3, "init").normal(size=6)
    b = named_stream(3, "sampler").normal(size=6)
    assert not np.array_equal(a, b)
