"""Deterministic synthetic corpora for desk-scale verification.

Two sample families make the model's qualitative properties checkable:

* text-determined: one key token in the sentence fixes the answer outright
  (``key3`` always pairs with ``verb3``); the paired features are pure noise.
  A sentence-only model can solve this family completely.

* visual-determined: the sentence only narrows the answer to a group of
  ``ambiguity`` candidates (token ``group1`` allows verbs 4..7, say). The
  deciding evidence sits in the video: one uniformly chosen region carries a
  class-specific signature added to the noise, and only the feature files can
  disambiguate. Sentences inside a block are byte-identical across all
  ``ambiguity`` answers, so any token-based predictor tops out at exactly
  1/ambiguity on this family.

Signatures are mutually orthogonal unit codes, one per answer class, scaled
so their per-channel amplitude is ``signal_ratio`` times the noise sigma.
Everything derives from the seed; the same config writes byte-identical
trees. The manifest records (sample id, family, signature region, class) for
tests; region is -1 for text-determined samples.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .data import save_dataset, save_embeddings, save_features
from .errors import ConfigError
from .text import BLANK_MARKER

_SUBJECTS = ("man", "woman", "boy", "girl", "dog", "cat")
_OBJECTS = ("ball", "door", "box", "cup")
_ADVERBS = ("slowly", "quickly", "quietly", "suddenly")

# Key placement varies across templates so both fragments matter.
_TEMPLATES = (
    "the {key} {subj} " + BLANK_MARKER + " {adv}",
    "{subj} with the {key} {obj} " + BLANK_MARKER + " today",
    "the {subj} " + BLANK_MARKER + " the {key} {obj}",
    "a {subj} " + BLANK_MARKER + " {adv} near the {key}",
)


@dataclass
class SynthConfig:
    seed: int = 0
    train_n: int = 2000
    val_n: int = 500
    test_n: int = 500
    regions: int = 16
    channels: int = 32
    n_answers: int = 8
    ambiguity: int = 4
    visual_fraction: float = 0.5
    emb_dim: int = 16
    noise_sigma: float = 0.1
    signal_ratio: float = 3.0
    frames: int = 1

    def validate(self):
        if self.ambiguity < 1 or self.ambiguity > self.n_answers:
            raise ConfigError("ambiguity must be in [1, n_answers]")
        if self.n_answers % self.ambiguity != 0:
            raise ConfigError("n_answers must be a multiple of ambiguity")
        if self.regions < 2 or self.channels < 2:
            raise ConfigError("need at least 2 regions and 2 channels")
        if self.channels < self.n_answers:
            raise ConfigError("orthogonal class codes need channels >= n_answers")
        if not 0.0 <= self.visual_fraction <= 1.0:
            raise ConfigError("visual_fraction must be in [0, 1]")
        if min(self.train_n, self.val_n, self.test_n) < 1:
            raise ConfigError("every split needs at least one sample")
        if self.noise_sigma <= 0 or self.signal_ratio <= 0 or self.frames < 1:
            raise ConfigError("noise_sigma, signal_ratio, frames must be positive")


def answer_words(cfg: SynthConfig):
    return [f"verb{i}" for i in range(cfg.n_answers)]


def class_codes(cfg: SynthConfig) -> np.ndarray:
    """Orthonormal signature codes, one row per answer class.

    Drawn from a stream keyed only by (seed, channels, n_answers) so tests
    can recompute them without replaying generation.
    """
    rng = np.random.default_rng([cfg.seed, 0xC0DE5, cfg.channels, cfg.n_answers])
    basis, _ = np.linalg.qr(rng.standard_normal((cfg.channels, cfg.n_answers)))
    return basis.T.copy()


def signature(cfg: SynthConfig, cls: int) -> np.ndarray:
    """The additive feature pattern for one class: per-channel amplitude is
    signal_ratio * noise_sigma, i.e. the unit code scaled by sqrt(channels)."""
    return class_codes(cfg)[cls] * (cfg.signal_ratio * cfg.noise_sigma * np.sqrt(cfg.channels))


def _vocabulary(cfg: SynthConfig):
    words = set(_SUBJECTS) | set(_OBJECTS) | set(_ADVERBS) | {"the", "a", "with", "today", "near"}
    words |= {f"key{i}" for i in range(cfg.n_answers)}
    words |= {f"group{g}" for g in range(cfg.n_answers // cfg.ambiguity)}
    words |= set(answer_words(cfg))
    return sorted(words)


def _fill(template: str, key: str, rng) -> str:
    return template.format(
        key=key,
        subj=rng.choice(_SUBJECTS),
        obj=rng.choice(_OBJECTS),
        adv=rng.choice(_ADVERBS),
    )


def _visual_count(n: int, cfg: SynthConfig) -> int:
    want = int(round(n * cfg.visual_fraction))
    return min(n, want - want % cfg.ambiguity) if want else 0


def gen_corpus(cfg: SynthConfig, out_dir) -> dict:
    """Write train/val/test TSVs, feature files, embeddings, and a manifest.

    Returns the paths of everything written. Same config and seed give a
    byte-identical tree.
    """
    cfg.validate()
    os.makedirs(out_dir, exist_ok=True)
    features_dir = os.path.join(out_dir, "features")
    os.makedirs(features_dir, exist_ok=True)

    vocab = _vocabulary(cfg)
    emb_rng = np.random.default_rng([cfg.seed, 0xE4B])
    emb = emb_rng.standard_normal((len(vocab), cfg.emb_dim))
    emb /= np.linalg.norm(emb, axis=1, keepdims=True)
    embeddings_path = os.path.join(out_dir, "embeddings.txt")
    save_embeddings(embeddings_path, vocab, emb)

    answers = answer_words(cfg)
    codes_scaled = np.stack([signature(cfg, c) for c in range(cfg.n_answers)])
    rng = np.random.default_rng([cfg.seed, 0x5A9])
    counter = 0
    manifest_rows = []
    paths = {"embeddings": embeddings_path, "features_dir": features_dir}

    for split, n in (("train", cfg.train_n), ("val", cfg.val_n), ("test", cfg.test_n)):
        records = []
        n_visual = _visual_count(n, cfg)
        n_text = n - n_visual

        for _ in range(n_text):
            cls = int(rng.integers(cfg.n_answers))
            sentence = _fill(str(rng.choice(_TEMPLATES)), f"key{cls}", rng)
            video_id = f"synth{counter:06d}"
            counter += 1
            frames = rng.normal(0.0, cfg.noise_sigma, size=(cfg.frames, cfg.regions, cfg.channels))
            save_features(os.path.join(features_dir, f"{video_id}.vfb"), frames)
            records.append((video_id, sentence, answers[cls]))
            manifest_rows.append((video_id, "text", -1, cls))

        for _ in range(n_visual // cfg.ambiguity):
            group = int(rng.integers(cfg.n_answers // cfg.ambiguity))
            sentence = _fill(str(rng.choice(_TEMPLATES)), f"group{group}", rng)
            # One block: the same sentence once per class in the group, so
            # tokens alone can never separate the group's answers.
            classes = group * cfg.ambiguity + rng.permutation(cfg.ambiguity)
            for cls in classes:
                cls = int(cls)
                video_id = f"synth{counter:06d}"
                counter += 1
                region = int(rng.integers(cfg.regions))
                frames = rng.normal(
                    0.0, cfg.noise_sigma, size=(cfg.frames, cfg.regions, cfg.channels)
                )
                frames[:, region, :] += codes_scaled[cls]
                save_features(os.path.join(features_dir, f"{video_id}.vfb"), frames)
                records.append((video_id, sentence, answers[cls]))
                manifest_rows.append((video_id, "visual", region, cls))

        order = rng.permutation(len(records))
        split_path = os.path.join(out_dir, f"{split}.tsv")
        save_dataset(split_path, [records[i] for i in order])
        paths[split] = split_path

    manifest_path = os.path.join(out_dir, "manifest.tsv")
    with open(manifest_path, "w", encoding="utf-8") as fh:
        for video_id, family, region, cls in manifest_rows:
            fh.write(f"{video_id}\t{family}\t{region}\t{cls}\n")
    paths["manifest"] = manifest_path
    return paths


def load_manifest(path) -> dict:
    """video_id -> (family, signature region, class index)."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            video_id, family, region, cls = line.rstrip("\n").split("\t")
            out[video_id] = (family, int(region), int(cls))
    return out
