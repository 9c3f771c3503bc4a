from dataclasses import replace

import pytest
from hypothesis import given, strategies as st

from exosort.costmodel import (
    Geometry, PricingConfig, access_cost, cost_from_counts, ebs_hourly_cost, hourly_compute_cost,
    lower_bound_jct, paper_cost_report, request_totals, requests_per_task, storage_cost,
    storage_hourly_cost, total_cost,
)

FREE = PricingConfig(0, 0, 0, 0, 0, 730, 0, 0, 0)


def test_hourly_compute():
    assert hourly_compute_cost(FREE) == 0
    assert ebs_hourly_cost(PricingConfig()) == pytest.approx(0.0044)
    # 0.504 + 1.373 * 40 + 0.0044 * 41
    assert hourly_compute_cost(PricingConfig()) == pytest.approx(55.6044, abs=1e-9)
    one = replace(FREE, master_hourly=0.5, worker_hourly=1.25, worker_count=1)
    assert hourly_compute_cost(one) == pytest.approx(1.75)


def test_storage():
    cfg = PricingConfig()
    assert storage_hourly_cost(100, cfg) == pytest.approx(3.0822)
    s_in, s_out = storage_cost(100, 0, 0, cfg)
    assert s_in == s_out == 0
    s_in, s_out = storage_cost(100, 1.4939, 0.5194, cfg)
    assert s_in == pytest.approx(3.0822 * 1.4939, abs=1e-4)
    assert s_out == pytest.approx(3.0822 * 0.5194, abs=1e-4)
    assert round(s_in, 2) == 4.60 and round(s_out, 2) == 1.60
    with pytest.raises(ValueError):
        storage_cost(100, -1, 0, cfg)


def test_request_formulas():
    assert requests_per_task(2 * 10**9, 16 * 2**20, "paper") == 120
    assert requests_per_task(4 * 10**9, 10**8, "paper") == 41
    assert requests_per_task(4 * 10**9, 10**8, "exact") == 40
    assert request_totals(Geometry(), "paper") == (6_000_000, 1_025_000)
    with pytest.raises(ValueError):
        requests_per_task(1, 0)


def test_access_cost():
    get, put = access_cost(50000, 2 * 10**9, 16 * 2**20, 25000, 4 * 10**9, 10**8, PricingConfig())
    assert get == pytest.approx(2.40, abs=1e-3)
    assert put == pytest.approx(5.125, abs=1e-3)


def test_paper_report():
    rep = paper_cost_report()
    assert rep.hourly_compute == pytest.approx(55.6044, abs=1e-4)
    assert rep.compute == pytest.approx(83.07, abs=0.01)
    assert rep.storage == pytest.approx(6.21, abs=0.01)
    assert rep.access == pytest.approx(7.53, abs=0.01)
    assert 96.5 <= rep.total <= 97.5 and round(rep.total) == 97
    assert rep.total == sum(li.total for li in rep.line_items())


def test_zero_durations_leave_only_access():
    rep = total_cost(PricingConfig(), 0, 0)
    assert rep.compute == rep.storage_input == rep.storage_output == 0
    assert rep.total == pytest.approx(rep.access)


def test_worker_price_moves_only_compute():
    a = total_cost(PricingConfig(), 1.4939, 0.5194)
    b = total_cost(replace(PricingConfig(), worker_hourly=2 * 1.373), 1.4939, 0.5194)
    assert b.compute > a.compute
    assert (b.storage_input, b.storage_output, b.access_get, b.access_put) == \
        (a.storage_input, a.storage_output, a.access_get, a.access_put)


@given(st.floats(0, 10), st.floats(0, 10), st.floats(0, 10), st.integers(0, 10**7), st.integers(0, 10**7))
def test_total_is_sum_and_monotone(jct, extra, reduce, gets, puts):
    cfg = PricingConfig()
    a = cost_from_counts(cfg, jct, reduce, 1.0, gets, puts)
    b = cost_from_counts(cfg, jct + extra, reduce, 1.0, gets + 1, puts)
    assert a.total == a.compute + a.storage_input + a.storage_output + a.access_get + a.access_put
    assert all(x >= 0 for x in (a.compute, a.storage_input, a.storage_output, a.access_get, a.access_put))
    assert b.compute >= a.compute and b.storage_input >= a.storage_input and b.access_get >= a.access_get


def test_table_render():
    text = paper_cost_report().format_table()
    assert "55.6044" in text and "6,000,000" in text and "1,025,000" in text
    tsv = paper_cost_report().to_tsv().splitlines()
    assert tsv[0] == "service\tunit_price\tamount\ttotal" and tsv[-1].endswith("96.7978")


def test_lower_bound():
    # 2500 * (1/2.9 + 1/2.2 + 2/3)
    assert lower_bound_jct(100_000, 40, 2.9, 2.2, 3.0) == pytest.approx(3665.099, abs=1e-3)
    assert lower_bound_jct(100_000, 80, 2.9, 2.2, 3.0) == pytest.approx(3665.099 / 2, abs=1e-3)
    assert lower_bound_jct(1, 1, 1e12, 1e12, 1e12) < 1e-9
    with pytest.raises(ValueError):
        lower_bound_jct(1, 1, 0, 1, 1)


def test_negative_price_rejected():
    with pytest.raises(ValueError):
        PricingConfig(master_hourly=-1)
