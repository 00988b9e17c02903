"""Dataset discovery, stratified clip-level splitting and the feature cache.

Manifest (tab-separated text)::

    # mtbca-manifest seed=<int> ratio=<float> root=<abs root>
    path	label	class_index	split	duration_s
    <path relative to root>	<species>	<int>	train|test|	<float>

Feature cache (single file)::

    line 1   "MTBCA-CACHE 1\\n"
    line 2   one-line JSON header + "\\n": fingerprint, dsp_config, t, f, count,
             class_names, failures, records=[{entry, segment, class_index, split}]
    payload  count * 2 * t * f little-endian float32, records in header order
"""

import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .dsp import DSPConfig, clip_features, mel_filterbank
from .errors import CacheError, DataError, MTBCAError
from .wav import read_wav

log = logging.getLogger(__name__)

SPLITS = ("train", "test")
MANIFEST_COLUMNS = ("path", "label", "class_index", "split", "duration_s")
CACHE_MAGIC = b"MTBCA-CACHE 1\n"


@dataclass
class ManifestEntry:
    path: str  # relative to the manifest root
    label: str
    class_index: int
    duration_s: float
    split: str = ""


@dataclass
class DatasetManifest:
    root: str
    entries: list
    class_names: list
    seed: int = None
    ratio: float = None
    skipped: list = field(default_factory=list)  # (path, reason)

    def abspath(self, entry):
        return os.path.join(self.root, entry.path)

    def split_counts(self):
        out = {}
        for e in self.entries:
            out.setdefault(e.label, {"train": 0, "test": 0})
            if e.split:
                out[e.label][e.split] += 1
        return out


def scan_dataset(root):
    """One entry per readable WAV under ``root/<species>/``; bad files go to ``skipped``."""
    if not os.path.isdir(root):
        raise DataError(f"dataset root not found: {root}")
    root = os.path.abspath(root)
    found, skipped = [], []
    for species in sorted(d for d in os.listdir(root) if os.path.isdir(os.path.join(root, d))):
        for name in sorted(os.listdir(os.path.join(root, species))):
            if not name.lower().endswith(".wav"):
                continue
            rel = os.path.join(species, name)
            try:
                clip = read_wav(os.path.join(root, rel))
            except (MTBCAError, OSError, ValueError) as exc:
                skipped.append((rel, str(exc)))
                continue
            found.append((species, rel, clip.duration))
    if not found:
        raise DataError(f"no readable WAV files under {root} (expected one subdirectory per species)")
    class_names = sorted({s for s, _, _ in found})
    index = {name: i for i, name in enumerate(class_names)}
    entries = [ManifestEntry(rel, s, index[s], float(dur)) for s, rel, dur in found]
    for rel, why in skipped:
        log.warning("skipped %s: %s", rel, why)
    return DatasetManifest(root, entries, class_names, skipped=skipped)


def train_count(n, ratio):
    """Round-half-up of ``ratio * n``, clamped so both sides keep a clip."""
    return min(max(int(math.floor(ratio * n + 0.5)), 1), n - 1)


def split(manifest, ratio=0.8, seed=0):
    """Stratified per-class split at clip level; returns a new manifest."""
    if not 0.0 < ratio < 1.0:
        raise DataError(f"split ratio must lie in (0, 1), got {ratio}")
    rng = np.random.default_rng(seed)
    by_class = {}
    for i, e in enumerate(manifest.entries):
        by_class.setdefault(e.class_index, []).append(i)
    assigned = {}
    for c in sorted(by_class):
        idx = by_class[c]
        if len(idx) < 2:
            raise DataError(f"class '{manifest.class_names[c]}' has {len(idx)} clip; need at least 2 to split")
        order = rng.permutation(len(idx))
        k = train_count(len(idx), ratio)
        for rank, j in enumerate(order):
            assigned[idx[j]] = "train" if rank < k else "test"
    entries = [
        ManifestEntry(e.path, e.label, e.class_index, e.duration_s, assigned[i]) for i, e in enumerate(manifest.entries)
    ]
    return DatasetManifest(manifest.root, entries, list(manifest.class_names), seed, ratio, list(manifest.skipped))


def write_manifest(manifest, path):
    with open(path, "w", newline="\n") as fh:
        fh.write(f"# mtbca-manifest seed={manifest.seed} ratio={manifest.ratio} root={manifest.root}\n")
        fh.write("\t".join(MANIFEST_COLUMNS) + "\n")
        for e in manifest.entries:
            fh.write(f"{e.path}\t{e.label}\t{e.class_index}\t{e.split}\t{e.duration_s!r}\n")


def read_manifest(path):
    try:
        with open(path) as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from None
    if len(lines) < 2 or not lines[0].startswith("# mtbca-manifest "):
        raise DataError(f"{path} is not a manifest file")
    # root goes last so it may contain spaces
    meta = dict(kv.split("=", 1) for kv in lines[0][len("# mtbca-manifest ") :].split(" ", 2))
    if tuple(lines[1].split("\t")) != MANIFEST_COLUMNS:
        raise DataError(f"{path}: unexpected column header {lines[1]!r}")
    entries = []
    for n, line in enumerate(lines[2:], start=3):
        parts = line.split("\t")
        if len(parts) != len(MANIFEST_COLUMNS):
            raise DataError(f"{path}:{n}: expected {len(MANIFEST_COLUMNS)} fields, got {len(parts)}")
        p, label, ci, sp, dur = parts
        if sp not in SPLITS + ("",):
            raise DataError(f"{path}:{n}: unknown split {sp!r}")
        entries.append(ManifestEntry(p, label, int(ci), float(dur), sp))
    names = {}
    for e in entries:
        names.setdefault(e.class_index, e.label)
    class_names = [names[i] for i in range(len(names))] if sorted(names) == list(range(len(names))) else None
    if class_names is None:
        raise DataError(f"{path}: class indices are not contiguous from 0")
    seed = None if meta.get("seed") in (None, "None") else int(meta["seed"])
    ratio = None if meta.get("ratio") in (None, "None") else float(meta["ratio"])
    return DatasetManifest(meta.get("root", os.path.dirname(os.path.abspath(path))), entries, class_names, seed, ratio)


# feature cache


@dataclass
class FeatureCache:
    fingerprint: str
    dsp_config: dict
    shape: tuple  # (t, f)
    class_names: list
    features: np.ndarray  # [N, 2, t, f] float32
    class_index: np.ndarray
    entry: np.ndarray
    segment: np.ndarray
    split: list
    failures: list = field(default_factory=list)

    def __len__(self):
        return len(self.split)

    def subset(self, which):
        """``(features, labels)`` of one split, in record order."""
        mask = np.array([s == which for s in self.split], dtype=bool)
        return self.features[mask], self.class_index[mask]

    def header(self):
        return {
            "fingerprint": self.fingerprint,
            "dsp_config": self.dsp_config,
            "t": int(self.shape[0]),
            "f": int(self.shape[1]),
            "count": len(self),
            "class_names": list(self.class_names),
            "failures": [list(f) for f in self.failures],
            "records": [
                {"entry": int(e), "segment": int(s), "class_index": int(c), "split": sp}
                for e, s, c, sp in zip(self.entry, self.segment, self.class_index, self.split)
            ],
        }

    def to_bytes(self):
        head = json.dumps(self.header(), sort_keys=True, separators=(",", ":")).encode()
        payload = np.ascontiguousarray(self.features, dtype="<f4").tobytes()
        return CACHE_MAGIC + head + b"\n" + payload

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())


def _clip_job(args):
    path, config = args
    try:
        clip = read_wav(path)
        fb = mel_filterbank(config.n_mels, config.n_fft, config.sample_rate, config.fmin, config.fmax, config.c1, config.c2)
        return clip_features(clip, config, fb), None
    except (MTBCAError, OSError, ValueError) as exc:
        return None, str(exc)


def build_cache(manifest, config=DSPConfig(), workers=1):
    """Featurise every manifest entry; records are ordered by entry, then segment."""
    jobs = [(manifest.abspath(e), config) for e in manifest.entries]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_clip_job, jobs))
    else:
        results = [_clip_job(j) for j in jobs]
    t, f = config.feature_shape()
    feats, ci, ent, seg, sp, failures = [], [], [], [], [], []
    for i, (e, (segments, err)) in enumerate(zip(manifest.entries, results)):
        if err is not None:
            failures.append((e.path, err))
            log.warning("preprocess failed for %s: %s", e.path, err)
            continue
        for k, x in enumerate(segments):
            feats.append(x)
            ci.append(e.class_index)
            ent.append(i)
            seg.append(k)
            sp.append(e.split)
    if not feats:
        raise DataError("feature cache is empty: no clip produced a segment")
    return FeatureCache(
        fingerprint=config.fingerprint(),
        dsp_config=asdict(config),
        shape=(t, f),
        class_names=list(manifest.class_names),
        features=np.stack(feats).astype(np.float32),
        class_index=np.array(ci, dtype=np.int64),
        entry=np.array(ent, dtype=np.int64),
        segment=np.array(seg, dtype=np.int64),
        split=sp,
        failures=failures,
    )


def decode_cache(blob):
    if not blob.startswith(CACHE_MAGIC):
        raise CacheError("not a feature cache (bad magic line)")
    end = blob.find(b"\n", len(CACHE_MAGIC))
    if end < 0:
        raise CacheError("cache header is not terminated")
    try:
        h = json.loads(blob[len(CACHE_MAGIC) : end].decode())
        t, f, n = int(h["t"]), int(h["f"]), int(h["count"])
        records = h["records"]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise CacheError(f"unreadable cache header ({exc})") from None
    payload = blob[end + 1 :]
    want = n * 2 * t * f * 4
    if len(payload) != want or len(records) != n:
        raise CacheError(f"cache payload is {len(payload)} bytes for {len(records)} records; expected {want} for {n}")
    feats = np.frombuffer(payload, dtype="<f4").reshape(n, 2, t, f).astype(np.float32)
    return FeatureCache(
        fingerprint=h["fingerprint"],
        dsp_config=h["dsp_config"],
        shape=(t, f),
        class_names=h["class_names"],
        features=feats,
        class_index=np.array([r["class_index"] for r in records], dtype=np.int64),
        entry=np.array([r["entry"] for r in records], dtype=np.int64),
        segment=np.array([r["segment"] for r in records], dtype=np.int64),
        split=[r["split"] for r in records],
        failures=[tuple(x) for x in h.get("failures", [])],
    )


def load_cache(path, config=None):
    """Read a cache; with ``config``, a fingerprint mismatch raises CacheError (stale)."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise CacheError(f"cannot read cache {path}: {exc}") from None
    cache = decode_cache(blob)
    if config is not None and cache.fingerprint != config.fingerprint():
        raise CacheError(f"stale cache: fingerprint {cache.fingerprint} != current {config.fingerprint()}")
    return cache


def ensure_cache(manifest, config, path, workers=1):
    """Reuse ``path`` when its fingerprint matches, otherwise rebuild. Returns ``(cache, reason)``.

    ``reason`` is None when the cache was reused.
    """
    reason = None
    if os.path.exists(path):
        try:
            return load_cache(path, config), None
        except CacheError as exc:
            reason = str(exc)
    else:
        reason = "no cache on disk"
    cache = build_cache(manifest, config, workers)
    cache.save(path)
    return cache, reason


def leakage(cache):
    """Entry ids that appear in more than one split (should be empty)."""
    seen = {}
    for e, s in zip(cache.entry, cache.split):
        seen.setdefault(int(e), set()).add(s)
    return sorted(e for e, s in seen.items() if len(s) > 1)
