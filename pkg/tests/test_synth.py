import hashlib
import json

import numpy as np
import pytest

import oracles
from fcac.dsp import read_wav
from fcac.embeddings import load_text
from fcac.errors import ConfigError
from fcac.harness.manifest import load_manifest
from fcac.harness.synth import SynthSpec, gen_synthetic, tone_clips


def tree_digest(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def test_audio_dataset_layout(tmp_path):
    spec = SynthSpec(kind="audio_tones", num_base_classes=10, num_sessions=0, base_train_per_class=10,
                     eval_per_class=10)
    m = load_manifest(gen_synthetic(spec, tmp_path, seed=0))
    wavs = sorted((tmp_path / "audio").glob("*.wav"))
    assert len(wavs) == 200
    assert m.kind == "audio" and len(m.sessions) == 1 and m.base.labels == set(range(10))
    clip = read_wav(wavs[0])
    assert clip.sample_rate == 16000 and clip.samples.shape == (16000,)
    assert np.max(np.abs(clip.samples)) <= 1.0


def test_fixed_seed_gives_identical_bytes(tmp_path):
    spec = SynthSpec(kind="audio_tones", num_base_classes=2, num_sessions=1, n_way=2, k_shot=1, k_query=1,
                     base_train_per_class=2, eval_per_class=1, duration_s=0.2)
    gen_synthetic(spec, tmp_path / "a", seed=5)
    gen_synthetic(spec, tmp_path / "b", seed=5)
    gen_synthetic(spec, tmp_path / "c", seed=6)
    assert tree_digest(tmp_path / "a") == tree_digest(tmp_path / "b")
    assert tree_digest(tmp_path / "a") != tree_digest(tmp_path / "c")


def test_gaussian_manifest_structure(tmp_path):
    spec = SynthSpec(num_base_classes=6, num_sessions=2, n_way=3, k_shot=2, k_query=4, pseudo_novel_classes=2)
    m = load_manifest(gen_synthetic(spec, tmp_path, seed=1))
    assert [sorted(s.labels) for s in m.sessions] == [list(range(6)), [6, 7, 8], [9, 10, 11]]
    for s in m.incremental:
        assert len(s.support()) == 6 and len(s.queries()) == 12
        assert all(r.label is None for r in s.queries())
    assert len(m.pinned_split.pseudo_novel) == 2
    assert len(load_text(tmp_path / "embeddings.tsv")) == 6 * (40 + 20) + 6 * (2 + 4 + 20)
    echo = json.loads((tmp_path / "manifest.json").read_text())["synth"]
    assert echo["seed"] == 1 and echo["dim"] == 16


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_well_separated_gaussians_are_nearest_mean_separable(tmp_path, seed):
    spec = SynthSpec(num_base_classes=15, num_sessions=0, base_train_per_class=40, eval_per_class=40,
                     separation=10.0)
    m = load_manifest(gen_synthetic(spec, tmp_path, seed=seed))
    emb = load_text(tmp_path / "embeddings.tsv")
    train = emb.matrix([r.id for r in m.base.train])
    y_train = np.array([r.label for r in m.base.train])
    means = [train[y_train == c].mean(axis=0).tolist() for c in range(15)]
    held = emb.matrix([r.id for r in m.base.eval]).tolist()
    assert oracles.nearest_mean_accuracy(means, held, [r.label for r in m.base.eval]) >= 0.99


def test_class_means_respect_minimum_distance(tmp_path):
    spec = SynthSpec(num_base_classes=8, num_sessions=0, base_train_per_class=200, eval_per_class=1)
    m = load_manifest(gen_synthetic(spec, tmp_path, seed=0))
    emb = load_text(tmp_path / "embeddings.tsv")
    x = emb.matrix([r.id for r in m.base.train])
    y = np.array([r.label for r in m.base.train])
    means = np.stack([x[y == c].mean(axis=0) for c in range(8)])
    np.testing.assert_allclose(np.linalg.norm(means, axis=1), 1.0, atol=0.05)
    gaps = [np.linalg.norm(means[i] - means[j]) for i in range(8) for j in range(i)]
    assert min(gaps) > 0.7


@pytest.mark.parametrize("change", [dict(kind="noise"), dict(num_base_classes=0), dict(k_query=-1),
                                    dict(pseudo_novel_classes=10), dict(separation=0.0), dict(duration_s=0.0,
                                                                                            kind="audio_tones")])
def test_invalid_specs(tmp_path, change):
    with pytest.raises(ConfigError):
        gen_synthetic(SynthSpec(**change), tmp_path, seed=0)


def test_unplaceable_means_raise(tmp_path):
    with pytest.raises(ConfigError, match="far apart"):
        gen_synthetic(SynthSpec(dim=2, num_base_classes=30, min_mean_distance=9.0), tmp_path, seed=0)


def test_tone_clips_are_grouped_and_seeded():
    spec = SynthSpec(kind="audio_tones", num_base_classes=3, num_sessions=0, duration_s=0.1)
    a, b = tone_clips(spec, 2, seed=4), tone_clips(spec, 2, seed=4)
    assert [c.class_id for c in a] == [0, 0, 1, 1, 2, 2]
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.samples, y.samples)
