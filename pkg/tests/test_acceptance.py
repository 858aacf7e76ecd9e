"""End-to-end acceptance suite.

One test per shipped guarantee; pytest -v gives a pass/fail line for each.
The numbered order tracks the project checklist: exact conservation, the
hand-traced table example, the word-length sweep, linearity improvement,
the efficiency survey, addressing coverage, quantization-noise identities,
the gray-code layer and bundle determinism.
"""
import math
import time
import warnings
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from gcotdc import cli
from gcotdc.channel import ChannelConfig, gray_encode, gray_decode, GRAY_CYCLE
from gcotdc.channel import decode_sample_matrix, encode_sample_matrix, synthesize_bin_profile
from gcotdc.density import (
    DensityDataset,
    VirtualBinGrid,
    accumulate_raw_histogram,
    build_virtual_grid,
    cumulative_timestamps,
)
from gcotdc.errors import CoverageWarning
from gcotdc.experiments import (
    ExperimentConfig,
    load_config,
    read_efficiency_table,
    run_interval_tests,
    run_mbar_sweep,
    run_resolution_sweep,
)
from gcotdc.metrics import efficiency_series, linearity_from_histogram
from gcotdc.vbcm import (
    accumulate_compensated,
    apply_measurement_exact,
    compute_compensation,
    compute_width_calibration,
)

REPO_ROOT = Path(__file__).resolve().parents[1]


def dataset_from_counts(counts):
    counts = np.asarray(counts, dtype=np.int64)
    codes = np.repeat(np.arange(1, counts.size + 1, dtype=np.uint16), counts)
    return DensityDataset(fine_codes=codes, n=counts.size)


def bounded_span_counts(rng, n, n_vir, n_hits):
    """Counts whose raw bins each cover at most four virtual bins."""
    while True:
        counts = rng.multinomial(n_hits, rng.dirichlet(np.full(n, 1.5)))
        if counts.max() * n_vir <= 3 * n_hits:
            return counts.astype(np.int64)


def calibrate_counts(counts, n_vir, mbar=6):
    ds = dataset_from_counts(counts)
    grid = build_virtual_grid(int(np.sum(counts)), len(counts), n_vir, 1000.0)
    comp = compute_compensation(cumulative_timestamps(accumulate_raw_histogram(ds)), grid)
    cal = compute_width_calibration(accumulate_compensated(ds, comp), comp, grid, mbar)
    return ds, grid, comp, cal


def test_criterion_1_exact_replay_conserves_every_virtual_bin():
    start = time.perf_counter()
    rng = np.random.default_rng(20260814)
    for _ in range(100):
        n = int(rng.integers(2, 33))
        n_vir = int(rng.integers(1, n + 1))
        n_hits = int(rng.integers(n_vir * 10, 10_001))
        counts = bounded_span_counts(rng, n, n_vir, n_hits)
        ds, grid, comp, cal = calibrate_counts(counts, n_vir)
        assert apply_measurement_exact(ds, comp, cal) == (grid.hit_vir,) * n_vir
    # the two hand-traced tables conserve as well
    ds, grid, comp, cal = calibrate_counts([30, 10, 40, 40], 4)
    assert apply_measurement_exact(ds, comp, cal) == (Fraction(30),) * 4
    grid = VirtualBinGrid(n_hits=120, n=3, n_vir=4, clock_period_ps=1000.0)
    ds = dataset_from_counts([100, 10, 10])
    with pytest.warns(CoverageWarning):
        comp = compute_compensation(cumulative_timestamps(accumulate_raw_histogram(ds)), grid)
    cal = compute_width_calibration(accumulate_compensated(ds, comp), comp, grid, 6)
    assert apply_measurement_exact(ds, comp, cal) == (Fraction(30),) * 4
    assert time.perf_counter() - start < 1.0


def test_criterion_2_worked_example_tables_match_exactly():
    ds, grid, comp, _ = calibrate_counts([30, 10, 40, 40], 4)
    triples = list(zip(comp.addr_l.tolist(), comp.addr_m.tolist(), comp.addr_r.tolist()))
    assert triples == [(1, 1, 1), (1, 2, 2), (2, 3, 3), (3, 4, 4)]
    hit_com = accumulate_compensated(ds, comp)
    assert hit_com.occurrences.tolist() == [100, 60, 120, 80]
    cal = compute_width_calibration(hit_com, comp, grid, fraction_bits=5)
    assert cal.coe_l == (Fraction(3, 10), Fraction(3, 10), Fraction(1, 2), Fraction(1, 4))
    assert cal.coe_m == (Fraction(3, 10), Fraction(1, 2), Fraction(1, 4), Fraction(3, 8))
    assert cal.coe_r == cal.coe_m
    assert cal.coe_l_fx.tolist() == [9, 9, 16, 8]
    assert cal.coe_m_fx.tolist() == [9, 16, 8, 12]
    assert cal.coe_r_fx.tolist() == [9, 16, 8, 12]


def test_criterion_3_word_length_sweep_is_monotone_and_reaches_015():
    start = time.perf_counter()
    cfg = load_config(REPO_ROOT / "configs" / "mbar_sweep.json")
    assert cfg.fine_bin_count == 200
    bundle = run_mbar_sweep(cfg)
    rows = [r for r in bundle.summary["rows"] if r["mbar"] is not None]
    assert [r["mbar"] for r in rows] == [1, 2, 3, 4, 5, 6]
    dnl = [r["dnl_pk_pk"] for r in rows]
    assert all(a >= b for a, b in zip(dnl, dnl[1:]))
    assert dnl[4] <= 0.15  # five fraction bits
    assert bundle.summary["raw"]["dnl_pk_pk"] > dnl[4]
    exact_rows = [r for r in bundle.summary["rows"] if r["mbar"] is None]
    assert exact_rows and exact_rows[0]["dnl_pk_pk"] <= dnl[5]
    assert time.perf_counter() - start < 120.0


def test_criterion_4_calibration_improves_a_badly_skewed_channel():
    cfg = ExperimentConfig(
        clock_period_ps=4424.78,
        plain_bin_count=25,
        matrix_order=8,
        width_dispersion=0.3,
        wide_bin_fraction=0.08,
        wide_bin_scale=6.0,
        n_vir_values=(130,),
        mbar=5,
        hits_pass1=10_000_000,
        hits_pass2=10_000_000,
        hits_eval=10_000_000,
        master_seed=101,
    )
    with warnings.catch_warnings():
        # a 6x-stretched bin can span more than four virtual bins; that is
        # the stress this test wants, so silence the advisory
        warnings.simplefilter("ignore", CoverageWarning)
        bundle = run_resolution_sweep(cfg)
    rows = bundle.summary["rows"]
    raw = next(r for r in rows if r["kind"] == "raw")
    cal = next(r for r in rows if r["kind"] == "calibrated")
    assert cal["error"] is None
    assert cal["missing_bin_free"] is False  # the stretch really overflowed a window
    assert raw["dnl_pk_pk"] >= 3.0
    assert raw["dnl_pk_pk"] / cal["dnl_pk_pk"] >= 20.0
    assert cal["omega_eq_ps"] == pytest.approx(cal["lsb_ps"], rel=0.005)
    assert cal["sigma_eq_lsb"] == pytest.approx(0.289, abs=0.01)


def test_criterion_5_efficiency_survey_reproduces_published_columns():
    table = REPO_ROOT / "src" / "gcotdc" / "data" / "sampling_factor_survey.csv"
    blocks = dict(read_efficiency_table(table))
    expected = {
        "UltraScale 20nm": (6.50, 1.76, 0.44, 0.15),
        "Virtex-7 28nm": (5.73, 11.69, 0.43, 0.11),
    }
    for device, values in expected.items():
        recs = efficiency_series(blocks[device])
        for rec, want in zip(recs[1:], values):
            assert rec.e_m == pytest.approx(want, abs=0.02)
    # the 16nm block's published M=2 score is not reproducible from its own
    # survey row; assert the value the numbers actually give
    recs = efficiency_series(blocks["UltraScale+ 16nm"])
    assert recs[1].e_m == pytest.approx(2.6593, abs=0.001)
    assert abs(recs[1].e_m - 2.56) > 0.05


def test_criterion_6_bounded_spans_cover_every_virtual_bin():
    rng = np.random.default_rng(60)
    for _ in range(700):
        n = int(rng.integers(2, 33))
        n_vir = int(rng.integers(1, n + 1))
        n_hits = int(rng.integers(n_vir * 10, 6000))
        counts = bounded_span_counts(rng, n, n_vir, n_hits)
        grid = build_virtual_grid(n_hits, n, n_vir, 1000.0)
        with warnings.catch_warnings():
            warnings.simplefilter("error", CoverageWarning)
            comp = compute_compensation(np.cumsum(counts), grid)
        assert comp.missing_bin_free
        covered = set(comp.addr_l.tolist()) | set(comp.addr_m.tolist()) | set(comp.addr_r.tolist())
        assert covered == set(range(1, n_vir + 1))
    for _ in range(300):
        n = int(rng.integers(5, 33))
        n_vir = int(rng.integers(5, n + 1))
        counts = rng.multinomial(int(rng.integers(n_vir * 10, 6000)), np.full(n, 1.0 / n))
        rest = int(counts.sum() - counts[0])
        # push bin 1 beyond four virtual bins: c * n_vir > 4 * (c + rest)
        counts[0] = (4 * rest) // (n_vir - 4) + 1
        grid = build_virtual_grid(int(counts.sum()), n, n_vir, 1000.0)
        with pytest.warns(CoverageWarning):
            comp = compute_compensation(np.cumsum(counts), grid)
        assert not comp.missing_bin_free


def test_criterion_7_quantization_noise_identities_hold():
    rep = linearity_from_histogram(np.full(200, 50_000), period_ps=4424.78)
    assert np.all(rep.dnl == 0.0) and np.all(rep.inl == 0.0)
    assert rep.omega_eq_ps == rep.lsb_ps
    assert rep.sigma_eq_lsb == 1.0 / math.sqrt(12.0)
    cfg = ExperimentConfig(
        clock_period_ps=4424.78,
        plain_bin_count=25,
        matrix_order=8,
        width_dispersion=0.0,
        hits_pass1=2_000_000,
        hits_pass2=2_000_000,
        hits_eval=2_000_000,
        interval_count=20,
        shots_per_interval=10_000,
        jitter_ps=0.0,
        master_seed=4242,
    )
    bundle = run_interval_tests(cfg)
    row = bundle.summary["rows"][0]
    assert row["error"] is None
    assert row["sigma_valid_lsb"] * math.sqrt(12.0) == pytest.approx(1.0, rel=0.03)


def test_criterion_8_gray_layer_decodes_an_exhaustive_grid():
    words = [gray_encode(i) for i in range(GRAY_CYCLE)]
    assert sorted(words) == list(range(GRAY_CYCLE))
    assert all(gray_decode(w) == i for i, w in enumerate(words))
    assert all(
        bin(gray_encode(i) ^ gray_encode((i + 1) % GRAY_CYCLE)).count("1") == 1
        for i in range(GRAY_CYCLE)
    )
    cfg = ChannelConfig(
        clock_period_ps=4424.78, plain_bin_count=25, matrix_order=8, seed=88, width_dispersion=0.25
    )
    profile = synthesize_bin_profile(cfg)
    points = 10 * profile.n
    for tau in np.arange(1, points + 1) * (cfg.clock_period_ps / points):
        sample = encode_sample_matrix(profile, cfg, float(tau))
        k = decode_sample_matrix(sample, cfg)
        assert k == int(np.searchsorted(profile.edges_ps, tau, side="left")) + 1


def test_criterion_9_shipped_config_runs_are_byte_identical(tmp_path):
    def tree(root):
        return {
            p.relative_to(root).as_posix(): p.read_bytes()
            for p in sorted(root.rglob("*"))
            if p.is_file()
        }

    quick = str(REPO_ROOT / "configs" / "quick.json")
    commands = [
        ["sweep-mbar", "--config", quick],
        ["interval-test", "--config", quick],
        ["multichannel", "--config", quick],
        ["efficiency"],
    ]
    for i, command in enumerate(commands):
        a = tmp_path / f"a{i}"
        b = tmp_path / f"b{i}"
        assert cli.main([*command, "--out", str(a)]) == 0
        assert cli.main([*command, "--out", str(b)]) == 0
        ta, tb = tree(a), tree(b)
        assert sorted(ta) == sorted(tb)
        assert ta == tb
