import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import ndimage

from lfmicroscan.errors import DomainError
from lfmicroscan.metrics import (
    ContrastCurve,
    CutoffWarning,
    ResolutionReport,
    contrast_profile,
    frequency_cutoff,
    psnr,
    ssim,
)
from lfmicroscan.sensorsim import make_test_chart

PIX = 0.5


@pytest.fixture(scope="module")
def chart():
    return make_test_chart(150.0, (300.0, 800.0), pixel_um=PIX, n_bands=24)


def blurred(chart, sigma_um):
    return ndimage.gaussian_filter(chart.image, sigma_um / PIX, mode="reflect")


def gaussian_mtf(f_cyc_per_mm, sigma_um):
    s = sigma_um / 1000.0
    return np.exp(-2 * np.pi**2 * s**2 * f_cyc_per_mm**2)


def test_psnr_closed_forms(rng):
    a = rng.random((16, 16))
    assert psnr(a, a) == float("inf")
    b = a + 0.1  # MSE 0.01
    assert psnr(a, b) == pytest.approx(20.0, abs=1e-9)
    with pytest.raises(DomainError):
        psnr(a, a[:-1])


def test_ssim_bounds(rng):
    a = rng.random((32, 32))
    assert ssim(a, a) == pytest.approx(1.0)
    assert 0.0 <= ssim(a, rng.random((32, 32))) <= 1.0
    assert ssim(a, 1 - a) == 0.0


def test_unblurred_chart_full_contrast(chart):
    c = contrast_profile(chart.image, chart.chart, PIX, chart.origin_um)
    low = c.frequencies < 60
    assert low.any() and np.all(c.contrast[low] >= 0.95)
    assert np.all((c.contrast >= 0) & (c.contrast <= 1))


def test_contrast_errors(chart):
    with pytest.raises(DomainError):
        contrast_profile(np.full_like(chart.image, 0.4), chart.chart, PIX, chart.origin_um)
    with pytest.raises(DomainError):
        contrast_profile(chart.image, chart.chart, PIX, (1e5, 1e5))


@pytest.mark.parametrize("sigma_um", [1.0, 1.5, 2.0])
def test_gaussian_mtf(chart, sigma_um):
    c = contrast_profile(blurred(chart, sigma_um), chart.chart, PIX, chart.origin_um)
    expect = gaussian_mtf(c.frequencies, sigma_um)
    mid = (expect > 0.2) & (expect < 0.9)
    assert mid.sum() >= 3
    assert np.all(np.abs(c.contrast[mid] - expect[mid]) <= 0.1 * expect[mid])


def test_ideal_chart_cutoff_is_top_band(chart):
    c = contrast_profile(chart.image, chart.chart, PIX, chart.origin_um)
    assert frequency_cutoff(c) == pytest.approx(chart.chart.band_freqs[-1])


@pytest.mark.parametrize("sigma_um", [2.5, 3.0, 4.0])  # crossings inside the chart range
def test_blurred_cutoff_matches_analytic(chart, sigma_um):
    c = contrast_profile(blurred(chart, sigma_um), chart.chart, PIX, chart.origin_um)
    s = sigma_um / 1000.0
    analytic = np.sqrt(-np.log(0.1) / (2 * np.pi**2 * s**2))
    assert frequency_cutoff(c, 0.1) == pytest.approx(analytic, abs=chart.chart.band_width_cycles_per_mm)


@given(st.floats(1.0, 3.0), st.floats(0.05, 1.0))
def test_cutoff_monotone_in_blur(sigma, extra):
    ch = make_test_chart(150.0, (300.0, 800.0), pixel_um=PIX, n_bands=24)
    a = frequency_cutoff(contrast_profile(blurred(ch, sigma), ch.chart, PIX, ch.origin_um))
    b = frequency_cutoff(contrast_profile(blurred(ch, sigma + extra), ch.chart, PIX, ch.origin_um))
    assert b <= a


@pytest.mark.parametrize("factor", [2.0, 0.5])
def test_cutoff_scale_equivariance(factor):
    base = make_test_chart(150.0, (300.0, 800.0), pixel_um=PIX, n_bands=24)
    scaled = make_test_chart(150.0 / factor, (300.0 * factor, 800.0 * factor), pixel_um=PIX * factor, n_bands=24)
    cut_a = frequency_cutoff(contrast_profile(blurred(base, 2.0), base.chart, PIX, base.origin_um))
    img_b = ndimage.gaussian_filter(scaled.image, 2.0 / PIX, mode="reflect")  # same blur in pixels
    cut_b = frequency_cutoff(contrast_profile(img_b, scaled.chart, PIX * factor, scaled.origin_um))
    assert cut_b == pytest.approx(cut_a / factor, abs=scaled.chart.band_width_cycles_per_mm)


def test_chart_meta_scaled_annotation():
    base = make_test_chart(150.0, (300.0, 800.0), pixel_um=PIX, n_bands=24)
    s = base.chart.scaled(2.0)
    assert s.max_freq_cycles_per_mm == 75.0
    assert s.length_um == 2 * base.chart.length_um
    y = base.chart.y_start_um + 0.3 * base.chart.length_um
    assert s.local_frequency(2 * y) == pytest.approx(base.chart.local_frequency(y) / 2)


def test_cutoff_interpolation_and_errors():
    curve = ContrastCurve(np.array([10.0, 20.0, 30.0]), np.array([0.5, 0.3, 0.05]))
    # crossing of 0.1 between 20 (0.3) and 30 (0.05): 20 + 10 * 0.2 / 0.25
    assert frequency_cutoff(curve, 0.1) == pytest.approx(28.0)
    with pytest.warns(CutoffWarning):
        assert frequency_cutoff(ContrastCurve(np.array([1.0, 2.0]), np.array([0.01, 0.02]))) == 0.0
    with pytest.raises(DomainError):
        frequency_cutoff(ContrastCurve(np.array([2.0, 1.0]), np.array([0.5, 0.5])))
    with pytest.raises(DomainError):
        frequency_cutoff(ContrastCurve(np.array([]), np.array([])))


def test_report_round_trip():
    rep = ResolutionReport("n16-fused", 31.5, 0.93, 120.0, [(10.0, 0.9), (20.0, 0.5)], {"count": 16})
    again = ResolutionReport.from_dict(json.loads(json.dumps(rep.to_dict())))
    assert again == rep
