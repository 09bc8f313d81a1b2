import numpy as np
import pytest

from ctfkit.ctf_model import DefocusParams
from ctfkit.spectral import classic_estimate, plan_blocks
from ctfkit.synth import SynthSpec, expected_spectrum, synth_micrograph, synth_movie


def test_deterministic_and_seeded(mic):
    spec = SynthSpec(mic, DefocusParams(15000, 14000, 0.2), size=128, seed=3)
    a = synth_micrograph(spec)
    assert np.array_equal(a, synth_micrograph(spec))
    other = synth_micrograph(SynthSpec(mic, spec.defocus, size=128, seed=4))
    assert not np.array_equal(a, other)
    assert a.shape == (128, 128) and a.dtype == np.float64


def test_movie_shares_specimen(mic):
    spec = SynthSpec(mic, DefocusParams(15000, 15000), size=64, snr=4.0, seed=1)
    frames = synth_movie(spec, 3)
    assert len(frames) == 3
    # differences between frames are pure noise, so they carry no CTF signal
    assert np.corrcoef(frames[0].ravel(), frames[1].ravel())[0, 1] > 0.3
    with pytest.raises(ValueError):
        synth_movie(spec, 0)


def test_expected_spectrum_matches_average(mic):
    spec = SynthSpec(mic, DefocusParams(12000, 11000, 0.4), size=64, snr=2.0)
    plan = plan_blocks((64, 64), 64)
    est = np.mean([classic_estimate(synth_micrograph(SynthSpec(mic, spec.defocus, size=64, snr=2.0, seed=s)),
                                    plan, demean=False) for s in range(300)], axis=0)
    truth = expected_spectrum(spec)
    ratio = est / truth
    ratio[32, 32] = 1.0
    assert np.median(np.abs(ratio - 1)) < 0.1
    assert est.mean() == pytest.approx(truth.mean(), rel=0.05)
