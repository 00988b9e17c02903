import numpy as np
import pytest

from mtbca.data import build_cache, scan_dataset, split, write_manifest
from mtbca.dsp import DSPConfig
from mtbca.synth import write_tone_dataset


@pytest.fixture(scope="session")
def tone_root(tmp_path_factory):
    """Three classes x four 1.5 s pulsed-tone clips on disk."""
    root = tmp_path_factory.mktemp("tones")
    write_tone_dataset(str(root), n_classes=3, clips_per_class=4, seed=3)
    return root


@pytest.fixture(scope="session")
def tone_manifest(tone_root):
    return split(scan_dataset(str(tone_root)), 0.8, seed=1)


@pytest.fixture(scope="session")
def tone_files(tone_manifest, tmp_path_factory):
    """Manifest and cache files shared by the CLI tests."""
    d = tmp_path_factory.mktemp("tone_run")
    manifest_path = d / "manifest.tsv"
    write_manifest(tone_manifest, str(manifest_path))
    cache = build_cache(tone_manifest, DSPConfig())
    cache_path = d / "features.cache"
    cache.save(str(cache_path))
    return {"manifest": manifest_path, "cache": cache_path, "cache_obj": cache}


@pytest.fixture
def rng():
    return np.random.default_rng(0)
